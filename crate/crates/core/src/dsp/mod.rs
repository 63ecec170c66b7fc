//! MFCC feature extraction.

mod fft;
mod mel;
mod mfcc;
mod signal;

pub use fft::{fft_in_place, power_spectrum};
pub use mel::{hz_to_mel, mel_filter_energies, mel_to_hz, MelFilterbank};
pub use mfcc::{dct_mfcc, extract_mfcc, extract_mfcc_with, frame_and_window, hamming, MfccMatrix};
pub use signal::{read_wav, write_wav, AudioSignal};

use crate::error::{Error, Result};

/// Feature-extraction settings. Defaults: 16 kHz, 25 ms frames, 10 ms hop,
/// pre-emphasis 0.97, 512-point FFT, 26 filters over 0..8000 Hz, 13 coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub pre_emphasis: f64,
    pub n_fft: usize,
    pub n_filters: usize,
    /// Coefficients kept per frame, `C_0` included.
    pub n_coeffs: usize,
    pub low_hz: f64,
    pub high_hz: f64,
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16000,
            frame_ms: 25.0,
            hop_ms: 10.0,
            pre_emphasis: 0.97,
            n_fft: 512,
            n_filters: 26,
            n_coeffs: 13,
            low_hz: 0.0,
            high_hz: 8000.0,
            log_floor: 1e-10,
        }
    }
}

impl FeatureConfig {
    pub fn frame_and_hop_samples(&self, sample_rate: u32) -> (usize, usize) {
        let sr = sample_rate as f64 / 1000.0;
        (
            (self.frame_ms * sr).round() as usize,
            (self.hop_ms * sr).round() as usize,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let (frame, hop) = self.frame_and_hop_samples(self.sample_rate);
        if !(self.hop_ms > 0.0 && self.frame_ms >= self.hop_ms) || hop == 0 {
            return Err(Error::Config(format!(
                "need frame_ms >= hop_ms > 0, got {} / {}",
                self.frame_ms, self.hop_ms
            )));
        }
        if !self.n_fft.is_power_of_two() || self.n_fft < frame {
            return Err(Error::Config(format!(
                "n_fft {} must be a power of two >= frame length {frame}",
                self.n_fft
            )));
        }
        if self.n_coeffs == 0 || self.n_filters == 0 {
            return Err(Error::Config("n_coeffs and n_filters must be positive".into()));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::Config("log_floor must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.pre_emphasis) {
            return Err(Error::Config("pre_emphasis must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn filterbank(&self) -> Result<MelFilterbank> {
        MelFilterbank::new(self.n_filters, self.n_fft, self.sample_rate, self.low_hz, self.high_hz)
    }
}
