use std::f64::consts::PI;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::dsp::{mel_filter_energies, power_spectrum, AudioSignal, FeatureConfig, MelFilterbank};
use crate::error::{Error, Result};

/// Frames × coefficients matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MfccMatrix {
    frames: usize,
    coeffs: usize,
    values: Vec<f64>,
    frame_ms: f64,
    hop_ms: f64,
}

impl MfccMatrix {
    pub fn new(frames: usize, coeffs: usize, values: Vec<f64>, frame_ms: f64, hop_ms: f64) -> Result<Self> {
        if values.len() != frames * coeffs {
            return Err(Error::dim("MfccMatrix::new", &[frames, coeffs], &[values.len()]));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "MFCC value at frame {}, coefficient {} is not finite",
                i / coeffs.max(1),
                i % coeffs.max(1)
            )));
        }
        Ok(Self {
            frames,
            coeffs,
            values,
            frame_ms,
            hop_ms,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn coeffs(&self) -> usize {
        self.coeffs
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, frame: usize) -> &[f64] {
        &self.values[frame * self.coeffs..(frame + 1) * self.coeffs]
    }

    pub fn at(&self, frame: usize, coeff: usize) -> f64 {
        self.values[frame * self.coeffs + coeff]
    }

    pub fn frame_ms(&self) -> f64 {
        self.frame_ms
    }

    pub fn hop_ms(&self) -> f64 {
        self.hop_ms
    }

    /// Text form: a `mfcc,v1,<frames>,<coeffs>,<frame_ms>,<hop_ms>` header and
    /// one comma-separated row per frame. Values carry 17 significant digits,
    /// which round-trips every f64 exactly.
    pub fn write_text<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(
            w,
            "mfcc,v1,{},{},{},{}",
            self.frames, self.coeffs, self.frame_ms, self.hop_ms
        )?;
        let mut line = String::new();
        for f in 0..self.frames {
            line.clear();
            for (i, v) in self.row(f).iter().enumerate() {
                if i > 0 {
                    line.push(',');
                }
                line.push_str(&format!("{v:.16e}"));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_text<R: Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty MFCC file".into()))??;
        let h: Vec<&str> = header.trim().split(',').collect();
        if h.len() != 6 || h[0] != "mfcc" || h[1] != "v1" {
            return Err(Error::Format(format!("bad MFCC header {header:?}")));
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::Format(format!("bad {what} {s:?} in MFCC header")))
        };
        let frames: usize = h[2]
            .parse()
            .map_err(|_| Error::Format(format!("bad frame count {:?}", h[2])))?;
        let coeffs: usize = h[3]
            .parse()
            .map_err(|_| Error::Format(format!("bad coefficient count {:?}", h[3])))?;
        let frame_ms = num(h[4], "frame_ms")?;
        let hop_ms = num(h[5], "hop_ms")?;
        let mut values = Vec::with_capacity(frames * coeffs);
        let mut rows = 0;
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let before = values.len();
            for cell in line.split(',') {
                values.push(
                    cell.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Format(format!("bad value {cell:?} on MFCC row {}", i + 1)))?,
                );
            }
            if values.len() - before != coeffs {
                return Err(Error::Format(format!(
                    "MFCC row {} has {} values, header says {coeffs}",
                    i + 1,
                    values.len() - before
                )));
            }
            rows += 1;
        }
        if rows != frames {
            return Err(Error::Format(format!(
                "MFCC file has {rows} rows, header says {frames}"
            )));
        }
        Self::new(frames, coeffs, values, frame_ms, hop_ms)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_text(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_text(std::fs::File::open(path)?)
    }
}

/// Pre-emphasised, Hamming-windowed frames using the default pre-emphasis.
pub fn frame_and_window(signal: &AudioSignal, frame_ms: f64, hop_ms: f64) -> Result<Vec<Vec<f64>>> {
    let cfg = FeatureConfig {
        sample_rate: signal.sample_rate(),
        frame_ms,
        hop_ms,
        ..FeatureConfig::default()
    };
    frames_for(signal, &cfg)
}

pub(crate) fn frames_for(signal: &AudioSignal, cfg: &FeatureConfig) -> Result<Vec<Vec<f64>>> {
    if !(cfg.hop_ms > 0.0 && cfg.frame_ms >= cfg.hop_ms) {
        return Err(Error::Config(format!(
            "need frame_ms >= hop_ms > 0, got {} / {}",
            cfg.frame_ms, cfg.hop_ms
        )));
    }
    let (frame_len, hop) = cfg.frame_and_hop_samples(signal.sample_rate());
    if frame_len == 0 || hop == 0 {
        return Err(Error::Config("frame or hop rounds to zero samples".into()));
    }
    let x = signal.samples();
    if x.len() < frame_len {
        return Err(Error::Input(format!(
            "signal has {} samples, shorter than one {frame_len}-sample frame",
            x.len()
        )));
    }
    let a = cfg.pre_emphasis;
    let emph: Vec<f64> = (0..x.len())
        .map(|t| if t == 0 { x[0] } else { x[t] - a * x[t - 1] })
        .collect();
    let window = hamming(frame_len);
    let n_frames = (x.len() - frame_len) / hop + 1;
    Ok((0..n_frames)
        .map(|f| {
            emph[f * hop..f * hop + frame_len]
                .iter()
                .zip(&window)
                .map(|(s, w)| s * w)
                .collect()
        })
        .collect())
}

/// Symmetric Hamming window `0.54 - 0.46 cos(2πn/(N-1))`.
pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// `C_i = Σ_{n=1..Nf} S_n cos(i (n - 0.5) π / Nf)` for `i = 0..=l`, by direct summation.
pub fn dct_mfcc(sn: &[f64], l: usize) -> Vec<f64> {
    let nf = sn.len() as f64;
    (0..=l)
        .map(|i| {
            sn.iter()
                .enumerate()
                .map(|(n, s)| s * (i as f64 * (n as f64 + 0.5) * PI / nf).cos())
                .sum()
        })
        .collect()
}

/// Full pipeline: frames, power spectra, log mel energies, DCT.
pub fn extract_mfcc(signal: &AudioSignal, cfg: &FeatureConfig) -> Result<MfccMatrix> {
    cfg.validate()?;
    if signal.sample_rate() != cfg.sample_rate {
        return Err(Error::Input(format!(
            "signal is {} Hz, feature config expects {} Hz",
            signal.sample_rate(),
            cfg.sample_rate
        )));
    }
    extract_mfcc_with(signal, cfg, &cfg.filterbank()?)
}

/// [`extract_mfcc`] with a prebuilt filterbank (no config validation).
pub fn extract_mfcc_with(signal: &AudioSignal, cfg: &FeatureConfig, fb: &MelFilterbank) -> Result<MfccMatrix> {
    let frames = frames_for(signal, cfg)?;
    let l = cfg.n_coeffs - 1;
    let mut values = Vec::with_capacity(frames.len() * cfg.n_coeffs);
    for frame in &frames {
        let p = power_spectrum(frame, cfg.n_fft)?;
        values.extend(dct_mfcc(&mel_filter_energies(&p, fb, cfg.log_floor)?, l));
    }
    MfccMatrix::new(frames.len(), cfg.n_coeffs, values, cfg.frame_ms, cfg.hop_ms)
}
