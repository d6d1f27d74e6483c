// Chunk-of-W masked schedules. Each `[T; W]` chunk stands for one vector
// register group; the remainder falls back to the scalar kernels.

use super::scalar;

#[inline]
pub(super) fn calc_indexes<const W: usize>(bins: &[u8], threshold: u8, level: u32, acc: &mut [u32]) {
    // Shifted once, outside the loop.
    let bit = [1u32 << level; W];

    let mut bin_chunks = bins.chunks_exact(W);
    let mut acc_chunks = acc.chunks_exact_mut(W);
    for (b, a) in (&mut bin_chunks).zip(&mut acc_chunks) {
        let b: &[u8; W] = b.try_into().unwrap();
        let a: &mut [u32; W] = a.try_into().unwrap();
        let mask: [u32; W] = std::array::from_fn(|i| u32::from(b[i] >= threshold).wrapping_neg());
        for i in 0..W {
            a[i] |= bit[i] & mask[i];
        }
    }
    scalar::calc_indexes(
        bin_chunks.remainder(),
        threshold,
        level,
        acc_chunks.into_remainder(),
    );
}

#[inline]
pub(super) fn binarize<const W: usize>(values: &[f32], borders: &[f32], out_bins: &mut [u8]) {
    let ones = [1u8; W];

    let mut value_chunks = values.chunks_exact(W);
    let mut out_chunks = out_bins.chunks_exact_mut(W);
    for (v, out) in (&mut value_chunks).zip(&mut out_chunks) {
        let v: &[f32; W] = v.try_into().unwrap();
        let mut bins = [0u8; W];
        for &border in borders {
            let mask: [u8; W] = std::array::from_fn(|i| u8::from(v[i] > border).wrapping_neg());
            for i in 0..W {
                bins[i] += ones[i] & mask[i];
            }
        }
        out.copy_from_slice(&bins);
    }
    scalar::binarize(
        value_chunks.remainder(),
        borders,
        out_chunks.into_remainder(),
    );
}

#[inline]
pub(super) fn l2_sqr<const W: usize>(a: &[f32], b: &[f32]) -> f32 {
    let mut partial = [0.0f32; W];

    let mut a_chunks = a.chunks_exact(W);
    let mut b_chunks = b.chunks_exact(W);
    for (x, y) in (&mut a_chunks).zip(&mut b_chunks) {
        let x: &[f32; W] = x.try_into().unwrap();
        let y: &[f32; W] = y.try_into().unwrap();
        let diff: [f32; W] = std::array::from_fn(|i| x[i] - y[i]);
        for i in 0..W {
            partial[i] += diff[i] * diff[i];
        }
    }
    for (&x, &y) in a_chunks.remainder().iter().zip(b_chunks.remainder()) {
        let d = x - y;
        partial[0] += d * d;
    }

    let mut width = W;
    while width > 1 {
        width /= 2;
        for i in 0..width {
            partial[i] += partial[i + width];
        }
    }
    partial[0]
}
