//! Brute-force oracles shared by the integration tests. Written from the
//! textbook definitions, independently of the library code paths.
#![allow(dead_code)]

use std::f64::consts::PI;

use stformer::tensor::RngStream;

pub struct MfccParams {
    pub sample_rate: f64,
    pub frame_len: usize,
    pub hop: usize,
    pub n_fft: usize,
    pub n_filters: usize,
    pub n_coeffs: usize,
    pub pre_emphasis: f64,
    pub low_hz: f64,
    pub high_hz: f64,
    pub floor: f64,
}

impl Default for MfccParams {
    fn default() -> Self {
        Self {
            sample_rate: 16000.0,
            frame_len: 400,
            hop: 160,
            n_fft: 512,
            n_filters: 26,
            n_coeffs: 13,
            pre_emphasis: 0.97,
            low_hz: 0.0,
            high_hz: 8000.0,
            floor: 1e-10,
        }
    }
}

/// `|X_k|^2 / N` by the O(N^2) definition, zero-padding `frame` to `n`.
pub fn naive_power_spectrum(frame: &[f64], n: usize) -> Vec<f64> {
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &x) in frame.iter().enumerate() {
                let ang = -2.0 * PI * (k * t % n) as f64 / n as f64;
                re += x * ang.cos();
                im += x * ang.sin();
            }
            (re * re + im * im) / n as f64
        })
        .collect()
}

fn mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn inv_mel(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filter `n` evaluated at frequency `f`.
pub fn triangle(p: &MfccParams, n: usize, f: f64) -> f64 {
    let step = (mel(p.high_hz) - mel(p.low_hz)) / (p.n_filters + 1) as f64;
    let edge = |i: usize| inv_mel(mel(p.low_hz) + step * i as f64);
    let (lo, mid, hi) = (edge(n), edge(n + 1), edge(n + 2));
    if f <= lo || f >= hi {
        0.0
    } else if f <= mid {
        (f - lo) / (mid - lo)
    } else {
        (hi - f) / (hi - mid)
    }
}

/// MFCC matrix (frames x coefficients) straight from the definitions.
pub fn naive_mfcc(x: &[f64], p: &MfccParams) -> Vec<Vec<f64>> {
    let mut y = x.to_vec();
    for t in (1..x.len()).rev() {
        y[t] = x[t] - p.pre_emphasis * x[t - 1];
    }
    let frames = (x.len() - p.frame_len) / p.hop + 1;
    let bins = p.n_fft / 2 + 1;
    let weights: Vec<Vec<f64>> = (0..p.n_filters)
        .map(|n| {
            (0..bins)
                .map(|k| triangle(p, n, k as f64 * p.sample_rate / p.n_fft as f64))
                .collect()
        })
        .collect();
    (0..frames)
        .map(|f| {
            let frame: Vec<f64> = (0..p.frame_len)
                .map(|i| {
                    let w = 0.54 - 0.46 * (2.0 * PI * i as f64 / (p.frame_len - 1) as f64).cos();
                    y[f * p.hop + i] * w
                })
                .collect();
            let power = naive_power_spectrum(&frame, p.n_fft);
            let sn: Vec<f64> = weights
                .iter()
                .map(|w| {
                    let e: f64 = w.iter().zip(&power).map(|(a, b)| a * b).sum();
                    e.max(p.floor).ln()
                })
                .collect();
            (0..p.n_coeffs)
                .map(|i| {
                    (1..=p.n_filters)
                        .map(|n| sn[n - 1] * (i as f64 * (n as f64 - 0.5) * PI / p.n_filters as f64).cos())
                        .sum()
                })
                .collect()
        })
        .collect()
}

pub fn random_signal(n: usize, rng: &mut RngStream) -> Vec<f64> {
    let amp = rng.uniform_range(0.05, 0.9);
    (0..n).map(|_| amp * rng.uniform_range(-1.0, 1.0)).collect()
}

/// Row-major `[r, k] x [k, c]`.
pub fn naive_matmul(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[i * c + j] = (0..k).map(|t| a[i * k + t] * b[t * c + j]).sum();
        }
    }
    out
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population standard deviation.
pub fn pop_std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}
