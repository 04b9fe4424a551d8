//! In-place iterative radix-2 FFT and real linear convolution.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

/// `exp(-2 pi i k / n)` for `k < n / 2`.
fn twiddles(n: usize) -> (Vec<f64>, Vec<f64>) {
    (0..n / 2)
        .map(|k| {
            let a = -2.0 * PI * k as f64 / n as f64;
            (libm::cos(a), libm::sin(a))
        })
        .unzip()
}

/// Iterative radix-2 FFT; `inverse` applies the conjugate transform and the
/// `1/n` scaling.
#[cfg(test)]
fn fft_in_place(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let tw = twiddles(re.len());
    fft_with(re, im, inverse, &tw);
}

fn fft_with(re: &mut [f64], im: &mut [f64], inverse: bool, tw: &(Vec<f64>, Vec<f64>)) {
    let n = re.len();
    debug_assert!(n.is_power_of_two() && tw.0.len() == n / 2);
    let mut j = 0;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let sign = if inverse { -1.0 } else { 1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let stride = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let (wr, wi) = (tw.0[k * stride], sign * tw.1[k * stride]);
                let (a, b) = (start + k, start + k + half);
                let (xr, xi) = (re[b] * wr - im[b] * wi, re[b] * wi + im[b] * wr);
                re[b] = re[a] - xr;
                im[b] = im[a] - xi;
                re[a] += xr;
                im[a] += xi;
            }
        }
        len <<= 1;
    }
    if inverse {
        let s = 1.0 / n as f64;
        re.iter_mut().for_each(|v| *v *= s);
        im.iter_mut().for_each(|v| *v *= s);
    }
}

/// Centered linear convolution: `out[i] = sum_j signal[j] * mask[i - j + half]`
/// for `i` in `0..signal.len()`, where `mask.len() == 2 * half + 1`.
///
/// Short masks are applied directly. Longer ones use overlap-add FFT
/// convolution: blocks of the signal are transformed two at a time (one in
/// the real part, one in the imaginary part, which the real mask keeps
/// apart), multiplied by the mask spectrum and added back at their offsets.
pub(crate) fn convolve_centered(signal: &[f64], mask: &[f64]) -> Vec<f64> {
    let half = mask.len() / 2;
    debug_assert_eq!(mask.len(), 2 * half + 1);
    if mask.len() <= super::DIRECT_CONV_TAPS {
        return convolve_direct(signal, mask);
    }
    let n = signal.len();
    let m = mask.len();
    let full = n + m - 1;
    let size = (4 * m).next_power_of_two().max(256).min(full.next_power_of_two());
    let block = size - (m - 1);
    let tw = twiddles(size);

    let mut hr = vec![0.0; size];
    let mut hi = vec![0.0; size];
    hr[..m].copy_from_slice(mask);
    fft_with(&mut hr, &mut hi, false, &tw);

    let mut acc = vec![0.0; full];
    let mut re = vec![0.0; size];
    let mut im = vec![0.0; size];
    let starts: Vec<usize> = (0..n).step_by(block).collect();
    for pair in starts.chunks(2) {
        re.iter_mut().for_each(|v| *v = 0.0);
        im.iter_mut().for_each(|v| *v = 0.0);
        let a = pair[0];
        let la = block.min(n - a);
        re[..la].copy_from_slice(&signal[a..a + la]);
        if let Some(&b) = pair.get(1) {
            let lb = block.min(n - b);
            im[..lb].copy_from_slice(&signal[b..b + lb]);
        }
        fft_with(&mut re, &mut im, false, &tw);
        for k in 0..size {
            let (zr, zi) = (re[k], im[k]);
            re[k] = zr * hr[k] - zi * hi[k];
            im[k] = zr * hi[k] + zi * hr[k];
        }
        fft_with(&mut re, &mut im, true, &tw);
        for (off, part) in pair.iter().zip([&re, &im]) {
            let len = (block.min(n - off) + m - 1).min(full - off);
            for (dst, v) in acc[*off..*off + len].iter_mut().zip(part.iter()) {
                *dst += v;
            }
        }
    }
    acc.drain(..half);
    acc.truncate(n);
    acc
}

pub(crate) fn convolve_direct(signal: &[f64], mask: &[f64]) -> Vec<f64> {
    let half = mask.len() / 2;
    let n = signal.len();
    let mut out = vec![0.0; n];
    for (j, s) in signal.iter().enumerate() {
        if *s == 0.0 {
            continue;
        }
        let lo = j.saturating_sub(half);
        let hi = (j + half + 1).min(n);
        for i in lo..hi {
            out[i] += s * mask[i + half - j];
        }
    }
    out
}
