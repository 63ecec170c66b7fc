use crate::error::{Error, Result};

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters on the mel scale, evaluated at DFT bin centre
/// frequencies `k * sample_rate / n_fft`. Weights are unnormalised (peak 1).
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    n_filters: usize,
    n_bins: usize,
    low_hz: f64,
    high_hz: f64,
    breakpoints: Vec<f64>,
    weights: Vec<Vec<f64>>,
}

impl MelFilterbank {
    pub fn new(n_filters: usize, n_fft: usize, sample_rate: u32, low_hz: f64, high_hz: f64) -> Result<Self> {
        let nyquist = sample_rate as f64 / 2.0;
        if n_filters == 0 {
            return Err(Error::Config("filterbank needs at least one filter".into()));
        }
        if !(0.0 <= low_hz && low_hz < high_hz && high_hz <= nyquist) {
            return Err(Error::Config(format!(
                "filterbank band [{low_hz}, {high_hz}] Hz is invalid for Nyquist {nyquist}"
            )));
        }
        let (m_lo, m_hi) = (hz_to_mel(low_hz), hz_to_mel(high_hz));
        let breakpoints: Vec<f64> = (0..n_filters + 2)
            .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_filters + 1) as f64))
            .collect();
        let n_bins = n_fft / 2 + 1;
        let weights = (0..n_filters)
            .map(|n| {
                let (l, c, r) = (breakpoints[n], breakpoints[n + 1], breakpoints[n + 2]);
                (0..n_bins)
                    .map(|k| {
                        let f = k as f64 * sample_rate as f64 / n_fft as f64;
                        let up = (f - l) / (c - l);
                        let down = (r - f) / (r - c);
                        up.min(down).max(0.0)
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            n_filters,
            n_bins,
            low_hz,
            high_hz,
            breakpoints,
            weights,
        })
    }

    pub fn n_filters(&self) -> usize {
        self.n_filters
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn band(&self) -> (f64, f64) {
        (self.low_hz, self.high_hz)
    }

    /// `n_filters + 2` edge/centre frequencies in Hz.
    pub fn breakpoints_hz(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn filter(&self, n: usize) -> &[f64] {
        &self.weights[n]
    }
}

/// Log filter energies `ln(max(w_n · power, floor))`.
pub fn mel_filter_energies(power: &[f64], fb: &MelFilterbank, floor: f64) -> Result<Vec<f64>> {
    if power.len() != fb.n_bins {
        return Err(Error::dim("mel_filter_energies", &[power.len()], &[fb.n_bins]));
    }
    Ok(fb
        .weights
        .iter()
        .map(|w| {
            let e: f64 = w.iter().zip(power).map(|(a, b)| a * b).sum();
            e.max(floor).ln()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const FLOOR: f64 = 1e-10;

    fn default_fb() -> MelFilterbank {
        MelFilterbank::new(26, 512, 16000, 0.0, 8000.0).unwrap()
    }

    #[test]
    fn mel_round_trip() {
        for hz in [0.0, 100.0, 700.0, 4000.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn filters_are_nonnegative_unimodal_and_banded() {
        let fb = default_fb();
        let bp = fb.breakpoints_hz();
        for n in 0..fb.n_filters() {
            let w = fb.filter(n);
            assert!(w.iter().all(|&v| (0.0..=1.0).contains(&v)));
            let peak = (0..w.len()).fold(0, |b, k| if w[k] > w[b] { k } else { b });
            assert!(w[..=peak].windows(2).all(|p| p[0] <= p[1]));
            assert!(w[peak..].windows(2).all(|p| p[0] >= p[1]));
            for (k, &v) in w.iter().enumerate() {
                let f = k as f64 * 16000.0 / 512.0;
                if f <= bp[n] || f >= bp[n + 2] {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn zero_spectrum_hits_floor() {
        let fb = default_fb();
        let s = mel_filter_energies(&vec![0.0; 257], &fb, FLOOR).unwrap();
        assert!(s.iter().all(|&v| v == FLOOR.ln()));
    }

    #[test]
    fn single_filter_indicator() {
        let fb = default_fb();
        let k = (0..fb.n_bins())
            .find(|&k| (0..26).filter(|&n| fb.filter(n)[k] > 0.0).count() == 1)
            .expect("some bin lies in exactly one filter");
        let mut power = vec![0.0; 257];
        power[k] = 1.0;
        let s = mel_filter_energies(&power, &fb, FLOOR).unwrap();
        for n in 0..26 {
            let dot: f64 = (0..257).map(|j| fb.filter(n)[j] * power[j]).sum();
            if dot > 0.0 {
                assert_eq!(s[n], dot.ln());
            } else {
                assert_eq!(s[n], FLOOR.ln());
            }
        }
        assert_eq!(s.iter().filter(|&&v| v != FLOOR.ln()).count(), 1);
    }

    #[test]
    fn uniform_spectrum_sums_weights() {
        let fb = default_fb();
        let s = mel_filter_energies(&vec![1.0; 257], &fb, FLOOR).unwrap();
        for n in 0..26 {
            let total: f64 = fb.filter(n).iter().sum();
            assert!((s[n] - total.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn length_mismatch_is_dimension_error() {
        let fb = default_fb();
        assert!(matches!(
            mel_filter_energies(&[1.0; 10], &fb, FLOOR),
            Err(Error::Dimension { .. })
        ));
    }
}
