// Reference kernels: one element per iteration, no reassociation.

#[inline]
pub(super) fn calc_indexes(bins: &[u8], threshold: u8, level: u32, acc: &mut [u32]) {
    for (&bin, index) in bins.iter().zip(acc.iter_mut()) {
        if bin >= threshold {
            *index |= 1 << level;
        }
    }
}

#[inline]
pub(super) fn binarize(values: &[f32], borders: &[f32], out_bins: &mut [u8]) {
    for (&value, bin) in values.iter().zip(out_bins.iter_mut()) {
        let mut count = 0u8;
        for &border in borders {
            count += u8::from(value > border);
        }
        *bin = count;
    }
}

#[inline]
pub(super) fn l2_sqr(a: &[f32], b: &[f32]) -> f32 {
    let mut sum = 0.0f32;
    for (&x, &y) in a.iter().zip(b) {
        let d = x - y;
        sum += d * d;
    }
    sum
}
