//! Small signal-processing helpers over `f64` sample buffers.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

fn sinc_lowpass_tap(fc: f64, n: f64) -> f64 {
    if n == 0.0 {
        2.0 * fc
    } else {
        (2.0 * PI * fc * n).sin() / (PI * n)
    }
}

fn blackman(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let m = (n - 1) as f64;
    (0..n)
        .map(|i| {
            let x = 2.0 * PI * i as f64 / m;
            0.42 - 0.5 * x.cos() + 0.08 * (2.0 * x).cos()
        })
        .collect()
}

/// Blackman-windowed band-pass FIR, unit passband gain. Cutoffs in Hz.
pub fn bandpass_kernel(f_low: f64, f_high: f64, taps: usize, sample_rate: f64) -> Vec<f64> {
    let half = (taps / 2) as f64;
    let (lo, hi) = (f_low / sample_rate, f_high / sample_rate);
    blackman(taps)
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let n = i as f64 - half;
            w * (sinc_lowpass_tap(hi, n) - sinc_lowpass_tap(lo, n))
        })
        .collect()
}

/// Blackman-windowed low-pass FIR. Cutoff in Hz.
pub fn lowpass_kernel(cutoff: f64, taps: usize, sample_rate: f64) -> Vec<f64> {
    bandpass_kernel(0.0, cutoff, taps, sample_rate)
}

/// Centered ("same" length) FIR filtering with zero padding.
pub fn fir_same(x: &[f64], h: &[f64]) -> Vec<f64> {
    let half = h.len() / 2;
    let n = x.len();
    (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for (k, &hk) in h.iter().enumerate() {
                let j = i as isize + half as isize - k as isize;
                if j >= 0 && (j as usize) < n {
                    acc += hk * x[j as usize];
                }
            }
            acc
        })
        .collect()
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

pub fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// One-sided power spectrum `|X[k]|^2`, `k = 0..=n/2`.
pub fn power_spectrum(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf[..=n / 2].iter().map(|c| c.norm_sqr()).collect()
}

/// Spectral energy in `[f_low, f_high)` Hz.
pub fn band_energy(x: &[f64], sample_rate: f64, f_low: f64, f_high: f64) -> f64 {
    let n = x.len();
    let spec = power_spectrum(x);
    spec.iter()
        .enumerate()
        .filter(|(k, _)| {
            let f = *k as f64 * sample_rate / n as f64;
            f >= f_low && f < f_high
        })
        .map(|(_, p)| p)
        .sum()
}

/// Magnitude of the DTFT of `h` (centered at its middle tap) at `freq` Hz.
pub fn response_magnitude(h: &[f64], freq: f64, sample_rate: f64) -> f64 {
    let w = 2.0 * PI * freq / sample_rate;
    let (mut re, mut im) = (0.0, 0.0);
    for (n, &v) in h.iter().enumerate() {
        re += v * (w * n as f64).cos();
        im -= v * (w * n as f64).sin();
    }
    (re * re + im * im).sqrt()
}

/// Normalized autocorrelation of `x` at `lag` over the overlapping span.
pub fn normalized_autocorr(x: &[f64], lag: usize) -> f64 {
    if lag >= x.len() {
        return 0.0;
    }
    let (a, b) = (&x[..x.len() - lag], &x[lag..]);
    let num: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
    let den = (energy(a) * energy(b)).sqrt();
    if den <= 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Largest normalized autocorrelation over `lags`.
pub fn autocorr_peak(x: &[f64], lags: std::ops::RangeInclusive<usize>) -> f64 {
    lags.map(|l| normalized_autocorr(x, l)).fold(f64::NEG_INFINITY, f64::max)
}

pub fn db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}
