use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::{CorpusEntry, CorpusIndex, Example, Split, INDEX_FILE};
use crate::dsp::{write_wav, AudioSignal};
use crate::error::{Error, Result};
use crate::metrics::rmse;
use crate::tensor::RngStream;

/// Parameters of the synthetic corpus.
///
/// Each participant gets a score `s` uniform in `[score_lo, score_hi]`. With
/// `u = (s - lo) / (hi - lo)`, the audio is two sine tones at
/// `200 + 600u` Hz and `1000 + 2000u` Hz under an amplitude envelope at
/// `2 + 6u` Hz, plus Gaussian noise `noise_db` below the tone power.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n_participants: usize,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub score_lo: f64,
    pub score_hi: f64,
    pub noise_db: f64,
    /// Fractions for train and dev; test takes the rest.
    pub train_frac: f64,
    pub dev_frac: f64,
    pub seed: u64,
    /// First participant number; directories are `{id}_P/{id}_AUDIO.wav`.
    pub first_id: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_participants: 64,
            duration_s: 1.3,
            sample_rate: 16000,
            score_lo: 17.0,
            score_hi: 85.0,
            noise_db: -30.0,
            train_frac: 0.7,
            dev_frac: 0.15,
            seed: 42,
            first_id: 300,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.score_lo < self.score_hi) || !self.score_lo.is_finite() || !self.score_hi.is_finite() {
            return Err(Error::Config(format!(
                "score range [{}, {}] is empty",
                self.score_lo, self.score_hi
            )));
        }
        if !(self.duration_s > 0.0) || self.sample_rate == 0 {
            return Err(Error::Config("duration and sample rate must be positive".into()));
        }
        // the top tone must stay below Nyquist
        if 3000.0 >= self.sample_rate as f64 / 2.0 {
            return Err(Error::Config(format!("sample rate {} is too low", self.sample_rate)));
        }
        if !(self.train_frac >= 0.0 && self.dev_frac >= 0.0 && self.train_frac + self.dev_frac <= 1.0) {
            return Err(Error::Config(
                "split fractions must be non-negative and sum to at most 1".into(),
            ));
        }
        Ok(())
    }

    /// Position of `score` in the range, in [0, 1].
    pub fn unit(&self, score: f64) -> f64 {
        (score - self.score_lo) / (self.score_hi - self.score_lo)
    }
}

/// Audio for one score; deterministic in `(spec, score, rng)`.
pub fn synthesize(spec: &SyntheticSpec, score: f64, rng: &mut RngStream) -> Result<AudioSignal> {
    let u = spec.unit(score).clamp(0.0, 1.0);
    let (f1, f2, am) = (200.0 + 600.0 * u, 1000.0 + 2000.0 * u, 2.0 + 6.0 * u);
    let (p1, p2, pa) = (TAU * rng.uniform(), TAU * rng.uniform(), TAU * rng.uniform());
    let sr = spec.sample_rate as f64;
    let n = (spec.duration_s * sr).round() as usize;
    let mut x: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let env = 0.6 + 0.4 * (TAU * am * t + pa).sin();
            env * (0.5 * (TAU * f1 * t + p1).sin() + 0.3 * (TAU * f2 * t + p2).sin())
        })
        .collect();
    let power = x.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64;
    let sigma = (power * 10f64.powf(spec.noise_db / 10.0)).sqrt();
    for v in &mut x {
        *v = (*v + sigma * rng.normal()).clamp(-1.0, 1.0);
    }
    AudioSignal::new(x, spec.sample_rate)
}

/// Participant scores and splits, without touching disk.
pub fn synthetic_layout(spec: &SyntheticSpec) -> Result<Vec<(String, f64, Split)>> {
    spec.validate()?;
    let n = spec.n_participants;
    let mut rng = RngStream::new(spec.seed).derive(0x5c0e);
    let scores: Vec<f64> = (0..n)
        .map(|_| rng.uniform_range(spec.score_lo, spec.score_hi))
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    RngStream::new(spec.seed).derive(0x5b11).shuffle(&mut order);
    let n_train = (spec.train_frac * n as f64).round() as usize;
    let n_dev = ((spec.dev_frac * n as f64).round() as usize).min(n - n_train.min(n));
    let mut split = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        split[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_dev {
            Split::Dev
        } else {
            Split::Test
        };
    }
    Ok((0..n)
        .map(|i| (format!("{}", spec.first_id + i), scores[i], split[i]))
        .collect())
}

/// Write the corpus under `root` (one directory per participant plus
/// `index.csv`) and return its index. Same spec, same bytes.
pub fn generate_synthetic(spec: &SyntheticSpec, root: &Path) -> Result<CorpusIndex> {
    let layout = synthetic_layout(spec)?;
    fs::create_dir_all(root)?;
    let entries: Vec<CorpusEntry> = layout
        .par_iter()
        .enumerate()
        .map(|(i, (id, score, split))| {
            let mut rng = RngStream::new(spec.seed).derive(0xa0d1).derive(i as u64);
            let sig = synthesize(spec, *score, &mut rng)?;
            let dir = root.join(format!("{id}_P"));
            fs::create_dir_all(&dir)?;
            let path = dir.join(format!("{id}_AUDIO.wav"));
            write_wav(&path, &sig)?;
            Ok(CorpusEntry {
                id: id.clone(),
                path,
                pcl_c: *score,
                split: *split,
            })
        })
        .collect::<Result<_>>()?;
    let index = CorpusIndex {
        root: root.to_path_buf(),
        entries,
    };
    index.write_csv(&root.join(INDEX_FILE))?;
    Ok(index)
}

/// Outcome of the closed-form ridge check on mean-MFCC features.
#[derive(Clone, Debug, PartialEq)]
pub struct RidgeCheck {
    pub n_train: usize,
    pub n_test: usize,
    pub test_rmse: f64,
    /// Population standard deviation of the held-out scores.
    pub score_std: f64,
}

impl RidgeCheck {
    /// Held-out error at most half the score spread.
    pub fn learnable(&self) -> bool {
        self.test_rmse < 0.5 * self.score_std
    }
}

fn mean_features(e: &Example) -> Vec<f64> {
    let m = &e.features;
    let mut out = vec![0.0; m.coeffs()];
    for f in 0..m.frames() {
        for (o, v) in out.iter_mut().zip(m.row(f)) {
            *o += v;
        }
    }
    out.iter().map(|v| v / m.frames().max(1) as f64).collect()
}

/// Fit ridge regression from per-coefficient MFCC means to scores on the train
/// split and score it on everything else. Features are standardized with
/// train statistics; the intercept is not penalized.
pub fn ridge_check(examples: &[Example], lambda: f64) -> Result<RidgeCheck> {
    let (train, test): (Vec<&Example>, Vec<&Example>) = examples.iter().partition(|e| e.split == Split::Train);
    if train.len() < 2 || test.is_empty() {
        return Err(Error::Contract(
            "ridge check needs 2+ train and 1+ held-out examples".into(),
        ));
    }
    let xtr: Vec<Vec<f64>> = train.iter().map(|e| mean_features(e)).collect();
    let d = xtr[0].len();
    let mu: Vec<f64> = (0..d)
        .map(|j| xtr.iter().map(|r| r[j]).sum::<f64>() / xtr.len() as f64)
        .collect();
    let sd: Vec<f64> = (0..d)
        .map(|j| {
            let v = xtr.iter().map(|r| (r[j] - mu[j]).powi(2)).sum::<f64>() / xtr.len() as f64;
            if v > 0.0 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let design = |rows: &[Vec<f64>]| {
        DMatrix::from_fn(rows.len(), d + 1, |i, j| {
            if j == d {
                1.0
            } else {
                (rows[i][j] - mu[j]) / sd[j]
            }
        })
    };
    let x = design(&xtr);
    let y = DVector::from_iterator(train.len(), train.iter().map(|e| e.score));
    let mut a = x.transpose() * &x;
    for j in 0..d {
        a[(j, j)] += lambda;
    }
    let w = a
        .cholesky()
        .ok_or_else(|| Error::Numeric("ridge normal equations are not positive definite".into()))?
        .solve(&(x.transpose() * y));
    let xte = design(&test.iter().map(|e| mean_features(e)).collect::<Vec<_>>());
    let pred: Vec<f64> = (xte * w).iter().copied().collect();
    let truth: Vec<f64> = test.iter().map(|e| e.score).collect();
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let score_std = (truth.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / truth.len() as f64).sqrt();
    Ok(RidgeCheck {
        n_train: train.len(),
        n_test: test.len(),
        test_rmse: rmse(&pred, &truth)?,
        score_std,
    })
}
