//! Regression agreement measures: RMSE and the concordance correlation coefficient.

use std::fmt;

use crate::error::{Error, Result};

fn check_lengths(op: &str, pred: &[f64], target: &[f64], min: usize) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::Contract(format!(
            "{op}: {} predictions vs {} targets",
            pred.len(),
            target.len()
        )));
    }
    if pred.len() < min {
        return Err(Error::Contract(format!(
            "{op} needs at least {min} samples, got {}",
            pred.len()
        )));
    }
    Ok(())
}

/// `sqrt(mean((pred - target)²))`.
pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_lengths("rmse", pred, target, 1)?;
    let sse: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

/// Concordance correlation with population (1/K) moments:
/// `2 cov / ((μ_t - μ_p)² + σ_t² + σ_p²)`.
pub fn ccc(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_lengths("ccc", pred, target, 2)?;
    let k = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / k;
    let mt = target.iter().sum::<f64>() / k;
    let (mut vp, mut vt, mut cov) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(target) {
        let (dp, dt) = (p - mp, t - mt);
        vp += dp * dp;
        vt += dt * dt;
        cov += dp * dt;
    }
    let (vp, vt, cov) = (vp / k, vt / k, cov / k);
    let denom = (mt - mp) * (mt - mp) + (vt + vp);
    if vp == 0.0 && vt == 0.0 {
        return Err(Error::UndefinedMetric(
            "ccc is 0/0 when both vectors are constant".into(),
        ));
    }
    Ok((2.0 * cov / denom).clamp(-1.0, 1.0))
}

/// Metrics over one labelled split.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub split: String,
    pub n: usize,
    pub rmse: f64,
    pub ccc: f64,
}

impl EvalReport {
    pub fn compute(split: &str, pred: &[f64], target: &[f64]) -> Result<Self> {
        Ok(Self {
            split: split.to_string(),
            n: pred.len(),
            rmse: rmse(pred, target)?,
            ccc: ccc(pred, target)?,
        })
    }

    /// Machine-readable `key=value` lines.
    pub fn to_kv(&self) -> String {
        format!(
            "split={}\nn={}\nrmse={:.17e}\nccc={:.17e}\n",
            self.split, self.n, self.rmse, self.ccc
        )
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} (n={}): RMSE {:.6}  CCC {:.6}",
            self.split, self.n, self.rmse, self.ccc
        )
    }
}
