use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean training-mode MSE over the epoch's batches, in network units.
    pub train_loss: f64,
    /// Inference-mode RMSE on the training split, in score units.
    pub train_rmse: f64,
    pub val_rmse: f64,
    /// NaN when undefined (both vectors constant).
    pub val_ccc: f64,
}

/// Per-epoch history of a training run.
///
/// Wall-clock times are kept apart from the records so that two identical
/// runs serialize to identical text.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub seed: u64,
    pub config: Vec<(String, String)>,
    pub epochs: Vec<EpochRecord>,
    pub wall_ms: Vec<u128>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

const COLUMNS: [&str; 5] = ["epoch", "train_loss", "train_rmse", "val_rmse", "val_ccc"];

impl TrainReport {
    pub fn best(&self) -> Option<&EpochRecord> {
        let b = self.best_epoch?;
        self.epochs.iter().find(|r| r.epoch == b)
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// `#`-prefixed header (seed, best epoch, config snapshot, column names),
    /// then one tab-separated line per epoch. Reals use 17 significant digits.
    pub fn to_tsv(&self) -> String {
        self.render(false)
    }

    /// As [`to_tsv`](Self::to_tsv) with a trailing `wall_ms` column.
    pub fn to_tsv_with_timing(&self) -> String {
        self.render(true)
    }

    fn render(&self, timing: bool) -> String {
        let mut s = String::from("# train-report v1\n");
        let _ = writeln!(s, "# seed\t{}", self.seed);
        match self.best_epoch {
            Some(b) => {
                let _ = writeln!(s, "# best_epoch\t{b}");
            }
            None => s.push_str("# best_epoch\tnone\n"),
        }
        let _ = writeln!(s, "# stopped_early\t{}", self.stopped_early);
        let mut cfg = self.config.clone();
        cfg.sort();
        for (k, v) in &cfg {
            let _ = writeln!(s, "# config\t{k}\t{v}");
        }
        s.push_str(&COLUMNS.join("\t"));
        if timing {
            s.push_str("\twall_ms");
        }
        s.push('\n');
        for (i, r) in self.epochs.iter().enumerate() {
            let _ = write!(
                s,
                "{}\t{:.16e}\t{:.16e}\t{:.16e}\t{:.16e}",
                r.epoch, r.train_loss, r.train_rmse, r.val_rmse, r.val_ccc
            );
            if timing {
                let _ = write!(s, "\t{}", self.wall_ms.get(i).copied().unwrap_or(0));
            }
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv())?;
        Ok(())
    }

    /// Parse text produced by [`to_tsv`](Self::to_tsv) (a `wall_ms` column is accepted).
    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: usize, what: &str| Error::Format(format!("report line {line}: {what}"));
        let mut r = TrainReport::default();
        let mut saw_columns = false;
        let mut timing = false;
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            if let Some(rest) = line.strip_prefix("# ") {
                let f: Vec<&str> = rest.split('\t').collect();
                match f.as_slice() {
                    ["seed", v] => r.seed = v.parse().map_err(|_| bad(n, "seed"))?,
                    ["best_epoch", "none"] => r.best_epoch = None,
                    ["best_epoch", v] => r.best_epoch = Some(v.parse().map_err(|_| bad(n, "best_epoch"))?),
                    ["stopped_early", v] => r.stopped_early = v.parse().map_err(|_| bad(n, "stopped_early"))?,
                    ["config", k, v] => r.config.push((k.to_string(), v.to_string())),
                    _ => {}
                }
                continue;
            }
            if !saw_columns {
                let cols: Vec<&str> = line.split('\t').collect();
                if cols[..] != COLUMNS[..] && !(cols.len() == 6 && cols[..5] == COLUMNS[..] && cols[5] == "wall_ms") {
                    return Err(bad(n, "unexpected column header"));
                }
                timing = cols.len() == 6;
                saw_columns = true;
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != if timing { 6 } else { 5 } {
                return Err(bad(n, "wrong field count"));
            }
            let real = |j: usize| f[j].parse::<f64>().map_err(|_| bad(n, COLUMNS[j]));
            r.epochs.push(EpochRecord {
                epoch: f[0].parse().map_err(|_| bad(n, "epoch"))?,
                train_loss: real(1)?,
                train_rmse: real(2)?,
                val_rmse: real(3)?,
                val_ccc: real(4)?,
            });
            if timing {
                r.wall_ms.push(f[5].parse().map_err(|_| bad(n, "wall_ms"))?);
            }
        }
        if !saw_columns {
            return Err(Error::Format("report has no column header".into()));
        }
        Ok(r)
    }
}
