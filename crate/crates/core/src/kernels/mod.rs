//! Hot kernels in two backends.
//!
//! [`Backend::Scalar`] is the reference: one element per step, written the
//! way the unoptimized prediction path computes it. [`Backend::Vectorized`]
//! runs the masked chunk-of-`W` schedules: samples are processed `W` at a
//! time with a comparison mask driving a masked OR (leaf indexes) or a
//! masked add (binarization), and squared distances accumulate into `W`
//! partial sums. Chunks are plain fixed-size arrays so the compiler maps
//! them onto whatever SIMD unit the target has. The `n mod W` tail always
//! goes through the scalar path.
//!
//! The integer kernels are bit-exact across backends. [`l2_sqr`] is only
//! equal up to float reassociation.
//!
//! Leaf-value accumulation is indirect-addressed and stays scalar; it lives
//! in [`crate::predict`].

mod lanes;
mod scalar;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Lane group width of the vectorized schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Lanes {
    W4,
    W8,
    W16,
    W32,
}

impl Lanes {
    pub const ALL: [Lanes; 4] = [Lanes::W4, Lanes::W8, Lanes::W16, Lanes::W32];

    pub fn count(self) -> usize {
        match self {
            Lanes::W4 => 4,
            Lanes::W8 => 8,
            Lanes::W16 => 16,
            Lanes::W32 => 32,
        }
    }

    pub fn from_count(count: usize) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.count() == count)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Backend {
    #[default]
    Scalar,
    Vectorized(Lanes),
}

impl Backend {
    /// `0` selects the scalar backend, otherwise one of 4, 8, 16, 32 lanes.
    pub fn from_lane_count(count: usize) -> Result<Self> {
        if count == 0 {
            return Ok(Backend::Scalar);
        }
        Lanes::from_count(count)
            .map(Backend::Vectorized)
            .ok_or_else(|| {
                Error::InvalidParameter(format!("lane count {count} not in {{4, 8, 16, 32}}"))
            })
    }

    pub fn lane_count(self) -> usize {
        match self {
            Backend::Scalar => 1,
            Backend::Vectorized(l) => l.count(),
        }
    }

    /// Scalar followed by every vectorized width.
    pub fn all() -> impl Iterator<Item = Backend> {
        std::iter::once(Backend::Scalar).chain(Lanes::ALL.into_iter().map(Backend::Vectorized))
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Backend::Scalar => f.write_str("scalar"),
            Backend::Vectorized(l) => write!(f, "vec:{}", l.count()),
        }
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("unknown backend '{s}', expected scalar or vec:{{4,8,16,32}}"));
        if s == "scalar" {
            return Ok(Backend::Scalar);
        }
        let width = s.strip_prefix("vec:").ok_or_else(bad)?;
        let count: usize = width.parse().map_err(|_| bad())?;
        Lanes::from_count(count).map(Backend::Vectorized).ok_or_else(bad)
    }
}

/// Sets bit `level` of `acc[s]` for every sample whose bin is `>= threshold`.
///
/// Only ORs bits in, so levels may be applied in any order.
///
/// # Panics
///
/// If `bins` and `acc` differ in length or `level >= 32`.
pub fn calc_indexes(backend: Backend, bins: &[u8], threshold: u8, level: u32, acc: &mut [u32]) {
    assert_eq!(bins.len(), acc.len(), "bins/accumulator length mismatch");
    assert!(level < 32, "level {level} does not fit a 32-bit index");
    match backend {
        Backend::Scalar => scalar::calc_indexes(bins, threshold, level, acc),
        Backend::Vectorized(Lanes::W4) => lanes::calc_indexes::<4>(bins, threshold, level, acc),
        Backend::Vectorized(Lanes::W8) => lanes::calc_indexes::<8>(bins, threshold, level, acc),
        Backend::Vectorized(Lanes::W16) => lanes::calc_indexes::<16>(bins, threshold, level, acc),
        Backend::Vectorized(Lanes::W32) => lanes::calc_indexes::<32>(bins, threshold, level, acc),
    }
}

/// Writes the bin of each value (number of borders it strictly exceeds).
///
/// `borders` must be ascending with at most 255 entries.
///
/// # Panics
///
/// If `values` and `out_bins` differ in length.
pub fn binarize(backend: Backend, values: &[f32], borders: &[f32], out_bins: &mut [u8]) {
    assert_eq!(values.len(), out_bins.len(), "values/bins length mismatch");
    debug_assert!(borders.len() <= crate::model::MAX_BORDERS);
    match backend {
        Backend::Scalar => scalar::binarize(values, borders, out_bins),
        Backend::Vectorized(Lanes::W4) => lanes::binarize::<4>(values, borders, out_bins),
        Backend::Vectorized(Lanes::W8) => lanes::binarize::<8>(values, borders, out_bins),
        Backend::Vectorized(Lanes::W16) => lanes::binarize::<16>(values, borders, out_bins),
        Backend::Vectorized(Lanes::W32) => lanes::binarize::<32>(values, borders, out_bins),
    }
}

/// Squared Euclidean distance accumulated in `f32`.
pub fn l2_sqr(backend: Backend, a: &[f32], b: &[f32]) -> Result<f32> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "l2 operands have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(l2_sqr_unchecked(backend, a, b))
}

#[inline]
pub(crate) fn l2_sqr_unchecked(backend: Backend, a: &[f32], b: &[f32]) -> f32 {
    match backend {
        Backend::Scalar => scalar::l2_sqr(a, b),
        Backend::Vectorized(Lanes::W4) => lanes::l2_sqr::<4>(a, b),
        Backend::Vectorized(Lanes::W8) => lanes::l2_sqr::<8>(a, b),
        Backend::Vectorized(Lanes::W16) => lanes::l2_sqr::<16>(a, b),
        Backend::Vectorized(Lanes::W32) => lanes::l2_sqr::<32>(a, b),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tail_lengths(w: usize) -> Vec<usize> {
        let mut n: Vec<usize> = (0..=2 * w + 1).collect();
        n.extend([127, 128, 129, 1000]);
        n
    }

    #[test]
    fn backend_parsing() {
        assert_eq!("scalar".parse::<Backend>().unwrap(), Backend::Scalar);
        assert_eq!(
            "vec:16".parse::<Backend>().unwrap(),
            Backend::Vectorized(Lanes::W16)
        );
        for bad in ["vec:3", "vec:", "simd", "vec:64"] {
            assert!(bad.parse::<Backend>().is_err(), "{bad}");
        }
        for b in Backend::all() {
            assert_eq!(b.to_string().parse::<Backend>().unwrap(), b);
        }
        assert!(Backend::from_lane_count(6).is_err());
        assert_eq!(Backend::from_lane_count(0).unwrap(), Backend::Scalar);
    }

    #[test]
    fn calc_indexes_example() {
        for backend in Backend::all() {
            let mut acc = [0u32; 3];
            calc_indexes(backend, &[3, 1, 2], 2, 0, &mut acc);
            assert_eq!(acc, [1, 0, 1], "{backend}");
        }
    }

    #[test]
    fn zero_threshold_sets_every_bit() {
        for backend in Backend::all() {
            let bins: Vec<u8> = (0..=255).collect();
            let mut acc = vec![0u32; bins.len()];
            calc_indexes(backend, &bins, 0, 5, &mut acc);
            assert!(acc.iter().all(|&a| a == 1 << 5), "{backend}");
        }
    }

    #[test]
    fn calc_indexes_never_clears_bits() {
        for backend in Backend::all() {
            let bins = [0u8, 9, 4, 7, 1, 3, 8, 2, 6];
            let mut acc = vec![0b1010_0000u32; bins.len()];
            calc_indexes(backend, &bins, 5, 0, &mut acc);
            calc_indexes(backend, &bins, 2, 1, &mut acc);
            for (b, a) in bins.iter().zip(&acc) {
                let expected = 0b1010_0000 | u32::from(*b >= 5) | (u32::from(*b >= 2) << 1);
                assert_eq!(*a, expected);
            }
        }
    }

    #[test]
    fn binarize_example_and_empty_borders() {
        for backend in Backend::all() {
            let mut out = [9u8; 3];
            binarize(backend, &[0.1, 0.6, 2.0], &[0.5, 1.5], &mut out);
            assert_eq!(out, [0, 1, 2], "{backend}");
            binarize(backend, &[0.1, 0.6, 2.0], &[], &mut out);
            assert_eq!(out, [0, 0, 0], "{backend}");
        }
    }

    #[test]
    fn binarize_nan_goes_to_bin_zero() {
        for backend in Backend::all() {
            let values = vec![f32::NAN; 37];
            let mut out = vec![7u8; 37];
            binarize(backend, &values, &[-1.0, 0.0, 1.0], &mut out);
            assert!(out.iter().all(|&b| b == 0));
        }
    }

    #[test]
    fn l2_small_cases() {
        for backend in Backend::all() {
            assert_eq!(l2_sqr(backend, &[1.0, 2.0], &[0.0, 0.0]).unwrap(), 5.0);
            let a: Vec<f32> = (0..77).map(|i| i as f32 * 0.37 - 3.0).collect();
            assert_eq!(l2_sqr(backend, &a, &a).unwrap(), 0.0);
            assert_eq!(l2_sqr(backend, &[], &[]).unwrap(), 0.0);
            assert!(matches!(
                l2_sqr(backend, &[1.0], &[1.0, 2.0]),
                Err(Error::DimensionMismatch(_))
            ));
        }
    }

    #[test]
    fn integer_kernels_match_scalar_at_every_tail_length() {
        let mut state = 0x2545_f491_4f6c_dd1du64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        let borders: Vec<f32> = (0..40).map(|i| i as f32 * 0.25 - 5.0).collect();
        for lanes in Lanes::ALL {
            let vec = Backend::Vectorized(lanes);
            for n in tail_lengths(lanes.count()) {
                let bins: Vec<u8> = (0..n).map(|_| (next() % 41) as u8).collect();
                let seed: Vec<u32> = (0..n).map(|_| next() as u32 & 0x3).collect();
                let threshold = (next() % 42) as u8;
                let mut expect = seed.clone();
                let mut got = seed.clone();
                calc_indexes(Backend::Scalar, &bins, threshold, 7, &mut expect);
                calc_indexes(vec, &bins, threshold, 7, &mut got);
                assert_eq!(expect, got, "calc_indexes {vec} n={n}");

                let values: Vec<f32> = (0..n)
                    .map(|_| (next() % 10_000) as f32 / 800.0 - 6.5)
                    .collect();
                let mut expect = vec![0u8; n];
                let mut got = vec![0u8; n];
                binarize(Backend::Scalar, &values, &borders, &mut expect);
                binarize(vec, &values, &borders, &mut got);
                assert_eq!(expect, got, "binarize {vec} n={n}");
            }
        }
    }

    proptest! {
        #[test]
        fn l2_backends_agree_and_are_symmetric(
            pairs in prop::collection::vec((-100.0f32..100.0, -100.0f32..100.0), 0..300),
        ) {
            let (a, b): (Vec<f32>, Vec<f32>) = pairs.into_iter().unzip();
            let scalar = l2_sqr(Backend::Scalar, &a, &b).unwrap();
            prop_assert!(scalar >= 0.0);
            for backend in Backend::all() {
                let v = l2_sqr(backend, &a, &b).unwrap();
                prop_assert!(v >= 0.0);
                prop_assert_eq!(v, l2_sqr(backend, &b, &a).unwrap());
                prop_assert!((v - scalar).abs() <= 1e-5 * scalar.abs().max(1e-30));
            }
        }
    }
}
