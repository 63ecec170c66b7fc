use std::f64::consts::PI;

use crate::error::{Error, Result};

/// In-place iterative radix-2 decimation-in-time FFT on split real/imag
/// buffers. Length must be a power of two.
pub fn fft_in_place(re: &mut [f64], im: &mut [f64]) -> Result<()> {
    let n = re.len();
    if im.len() != n {
        return Err(Error::dim("fft", &[n], &[im.len()]));
    }
    if !n.is_power_of_two() {
        return Err(Error::Config(format!("FFT length {n} is not a power of two")));
    }
    if n == 1 {
        return Ok(());
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        // twiddles evaluated directly rather than by recurrence, so error
        // does not grow with the stage length
        let tw: Vec<(f64, f64)> = (0..half)
            .map(|k| {
                let a = -2.0 * PI * k as f64 / len as f64;
                (a.cos(), a.sin())
            })
            .collect();
        for start in (0..n).step_by(len) {
            for (k, &(wr, wi)) in tw.iter().enumerate() {
                let i = start + k;
                let j = i + half;
                let tr = wr * re[j] - wi * im[j];
                let ti = wr * im[j] + wi * re[j];
                re[j] = re[i] - tr;
                im[j] = im[i] - ti;
                re[i] += tr;
                im[i] += ti;
            }
        }
        len <<= 1;
    }
    Ok(())
}

/// `|DFT|² / n_fft` for bins `0..=n_fft/2`, zero-padding the frame.
pub fn power_spectrum(frame: &[f64], n_fft: usize) -> Result<Vec<f64>> {
    if !n_fft.is_power_of_two() {
        return Err(Error::Config(format!("n_fft {n_fft} is not a power of two")));
    }
    if frame.len() > n_fft {
        return Err(Error::Config(format!(
            "frame length {} exceeds n_fft {n_fft}",
            frame.len()
        )));
    }
    let mut re = vec![0.0; n_fft];
    re[..frame.len()].copy_from_slice(frame);
    let mut im = vec![0.0; n_fft];
    fft_in_place(&mut re, &mut im)?;
    let scale = 1.0 / n_fft as f64;
    Ok((0..=n_fft / 2)
        .map(|k| (re[k] * re[k] + im[k] * im[k]) * scale)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::RngStream;

    fn naive_power(frame: &[f64], n: usize) -> Vec<f64> {
        (0..=n / 2)
            .map(|k| {
                let (mut r, mut i) = (0.0, 0.0);
                for (t, &x) in frame.iter().enumerate() {
                    let a = -2.0 * PI * (k * t % n) as f64 / n as f64;
                    r += x * a.cos();
                    i += x * a.sin();
                }
                (r * r + i * i) / n as f64
            })
            .collect()
    }

    #[test]
    fn zero_frame() {
        assert!(power_spectrum(&[0.0; 100], 128).unwrap().iter().all(|&p| p == 0.0));
    }

    #[test]
    fn cosine_at_bin_frequency() {
        let n = 64;
        let k0 = 5;
        let frame: Vec<f64> = (0..n).map(|t| (2.0 * PI * (k0 * t) as f64 / n as f64).cos()).collect();
        let p = power_spectrum(&frame, n).unwrap();
        let oracle = naive_power(&frame, n);
        for (k, (&a, &b)) in p.iter().zip(&oracle).enumerate() {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "bin {k}");
        }
        // (n/2)² / n = n/4 in the matching bin
        assert!((p[k0] - n as f64 / 4.0).abs() < 1e-9);
        let leak: f64 = p.iter().enumerate().filter(|&(k, _)| k != k0).map(|(_, v)| v).sum();
        assert!(leak < 1e-20);
    }

    #[test]
    fn constant_frame_only_dc() {
        let p = power_spectrum(&[0.5; 32], 32).unwrap();
        assert!((p[0] - 16.0 * 16.0 / 32.0).abs() < 1e-12);
        assert!(p[1..].iter().all(|&v| v < 1e-24));
    }

    #[test]
    fn matches_naive_dft_on_random_frames() {
        let mut rng = RngStream::new(17);
        for &n in &[1usize, 2, 8, 256, 512] {
            let len = (n * 3 / 4).max(1);
            let frame: Vec<f64> = (0..len).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
            let p = power_spectrum(&frame, n).unwrap();
            for (a, b) in p.iter().zip(naive_power(&frame, n)) {
                assert!((a - b).abs() <= 1e-9 * b.abs().max(1e-3));
            }
        }
    }

    #[test]
    fn non_power_of_two_is_config_error() {
        assert!(matches!(power_spectrum(&[0.0; 10], 400), Err(Error::Config(_))));
    }
}
