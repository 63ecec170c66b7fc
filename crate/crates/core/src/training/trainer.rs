use std::time::Instant;

use crate::data::{batch_iterator, Batch, Example};
use crate::error::{Error, Result};
use crate::layers::{apply_stat_updates, Ctx, Mode};
use crate::metrics::{ccc, rmse};
use crate::model::{StochasticTransformer, TargetScaling};
use crate::tensor::{Graph, RngStream, Tensor};
use crate::training::{mse_loss, Adam, EpochRecord, TargetMode, TrainConfig, TrainReport};

const STEP_STREAM: u64 = 0x57e9;

/// Handed to the per-epoch callback.
pub struct EpochEvent<'a> {
    pub record: &'a EpochRecord,
    pub model: &'a StochasticTransformer,
    pub is_best: bool,
}

pub struct TrainOutcome {
    pub report: TrainReport,
    /// Parameters from the epoch with the lowest validation RMSE (the
    /// initialization when no epoch ran).
    pub best: StochasticTransformer,
    /// Parameters after the last epoch.
    pub last: StochasticTransformer,
}

/// One optimizer step on a batch: training-mode forward with fresh
/// stochastic draws from `rng`, backward, running-statistic update, Adam.
/// Returns the batch loss in network units.
pub fn train_step(model: &mut StochasticTransformer, opt: &mut Adam, batch: &Batch, rng: RngStream) -> Result<f64> {
    let scaling = model.scaling();
    let input = model.input_tensor(&batch.feature_refs())?;
    let targets: Vec<f64> = batch.scores.iter().map(|&s| scaling.to_network(s)).collect();
    let mut g = Graph::new();
    let (loss, grads, stats) = {
        let mut cx = Ctx::new(&mut g, model.params(), Mode::Train, rng);
        let x = cx.graph.constant(input);
        let y = model.forward(&mut cx, x)?;
        let loss = mse_loss(cx.graph, y, &targets)?;
        let value = cx.graph.value(loss).item();
        if !value.is_finite() {
            return Ok(value);
        }
        cx.graph.backward(loss)?;
        (value, cx.param_grads(), cx.take_stat_updates())
    };
    apply_stat_updates(model.params_mut(), stats)?;
    opt.step(model.params_mut(), &grads)?;
    Ok(loss)
}

fn scores(examples: &[Example]) -> Vec<f64> {
    examples.iter().map(|e| e.score).collect()
}

fn predict_examples(model: &StochasticTransformer, examples: &[Example]) -> Result<Vec<f64>> {
    let mats: Vec<_> = examples.iter().map(|e| &e.features).collect();
    model.predict(&mats)
}

fn prepare(model: &mut StochasticTransformer, train_set: &[Example], tcfg: &TrainConfig) -> Result<()> {
    let y = scores(train_set);
    if tcfg.target_scaling == TargetMode::MinMax {
        let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scale = if hi > lo { hi - lo } else { 1.0 };
        model.set_scaling(TargetScaling { shift: lo, scale });
    }
    if tcfg.init_output_bias {
        let s = model.scaling();
        let mean = y.iter().map(|&v| s.to_network(v)).sum::<f64>() / y.len() as f64;
        if let Some(b) = model.output_layer().bias {
            model.params_mut().set(b, Tensor::from_vec(vec![mean]))?;
        }
    }
    Ok(())
}

/// Train `model` on `train_set`, selecting by validation RMSE on `val_set`.
///
/// Each epoch shuffles with a key derived from the seed and epoch index; each
/// step draws its stochastic masks from a stream derived from the seed and
/// global step index, so a run is fully determined by seed, data, and config.
pub fn train(
    mut model: StochasticTransformer,
    train_set: &[Example],
    val_set: &[Example],
    tcfg: &TrainConfig,
    mut on_epoch: impl FnMut(EpochEvent<'_>) -> Result<()>,
) -> Result<TrainOutcome> {
    tcfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Contract(format!(
            "training needs non-empty train and validation splits (got {} and {})",
            train_set.len(),
            val_set.len()
        )));
    }
    let mut config: Vec<(String, String)> = model
        .config()
        .entries()
        .into_iter()
        .map(|(k, v)| (format!("model.{k}"), v))
        .collect();
    config.extend(tcfg.entries().into_iter().map(|(k, v)| (format!("train.{k}"), v)));
    let mut report = TrainReport {
        seed: tcfg.seed,
        config,
        ..TrainReport::default()
    };
    if tcfg.epochs == 0 {
        return Ok(TrainOutcome {
            report,
            best: model.clone(),
            last: model,
        });
    }

    prepare(&mut model, train_set, tcfg)?;
    let mut opt = tcfg.optimizer();
    let step_root = RngStream::new(tcfg.seed).derive(STEP_STREAM);
    let max_frames = model.config().max_frames;
    let train_y = scores(train_set);
    let val_y = scores(val_set);
    let mut best: Option<(f64, StochasticTransformer)> = None;
    let mut since_best = 0;
    let mut step: u64 = 0;

    for epoch in 1..=tcfg.epochs {
        let start = Instant::now();
        let mut total = 0.0;
        let mut batches = 0usize;
        for batch in batch_iterator(train_set, tcfg.batch_size, max_frames, tcfg.seed, epoch)? {
            let loss = train_step(&mut model, &mut opt, &batch, step_root.derive(step))?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss became {loss} at epoch {epoch}, step {step} (batch {batches})"
                )));
            }
            total += loss;
            batches += 1;
            step += 1;
        }
        let train_pred = predict_examples(&model, train_set)?;
        let val_pred = predict_examples(&model, val_set)?;
        let record = EpochRecord {
            epoch,
            train_loss: total / batches as f64,
            train_rmse: rmse(&train_pred, &train_y)?,
            val_rmse: rmse(&val_pred, &val_y)?,
            val_ccc: match ccc(&val_pred, &val_y) {
                Ok(c) => c,
                Err(Error::UndefinedMetric(_)) => f64::NAN,
                Err(e) => return Err(e),
            },
        };
        let is_best = best.as_ref().is_none_or(|(b, _)| record.val_rmse < *b);
        if is_best {
            best = Some((record.val_rmse, model.clone()));
            report.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
        }
        report.wall_ms.push(start.elapsed().as_millis());
        on_epoch(EpochEvent {
            record: &record,
            model: &model,
            is_best,
        })?;
        report.epochs.push(record);
        if tcfg.patience > 0 && since_best >= tcfg.patience {
            report.stopped_early = epoch < tcfg.epochs;
            break;
        }
    }
    let best = best.map(|(_, m)| m).unwrap_or_else(|| model.clone());
    Ok(TrainOutcome {
        report,
        best,
        last: model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::dsp::MfccMatrix;
    use crate::model::ModelConfig;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_blocks: 1,
            ffn_hidden: vec![8],
            lc_filters: 4,
            regression_hidden: vec![4],
            max_frames: 16,
            seed: 3,
            ..ModelConfig::default()
        }
    }

    fn examples(n: usize, seed: u64) -> Vec<Example> {
        let mut rng = RngStream::new(seed);
        (0..n)
            .map(|i| {
                let s = rng.uniform();
                let v: Vec<f64> = (0..12 * 13)
                    .map(|j| s * ((j % 13) as f64 - 6.0) + 0.1 * rng.normal())
                    .collect();
                Example {
                    id: format!("s{i}"),
                    features: MfccMatrix::new(12, 13, v, 25.0, 10.0).unwrap(),
                    score: 10.0 + 20.0 * s,
                    split: Split::Train,
                }
            })
            .collect()
    }

    fn quiet(_: EpochEvent<'_>) -> Result<()> {
        Ok(())
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let model = StochasticTransformer::new(tiny_config()).unwrap();
        let ex = examples(4, 1);
        let tcfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let out = train(model.clone(), &ex, &ex, &tcfg, quiet).unwrap();
        assert!(out.report.epochs.is_empty());
        assert_eq!(out.best.params().to_bytes(), model.params().to_bytes());
    }

    #[test]
    fn empty_split_is_contract_error() {
        let model = StochasticTransformer::new(tiny_config()).unwrap();
        let ex = examples(4, 1);
        let r = train(model, &ex, &[], &TrainConfig::default(), quiet);
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let ex = examples(6, 2);
        let tcfg = TrainConfig {
            epochs: 3,
            batch_size: 3,
            seed: 11,
            ..TrainConfig::default()
        };
        let run = || {
            let m = StochasticTransformer::new(tiny_config()).unwrap();
            train(m, &ex, &ex[..3], &tcfg, quiet).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.report.to_tsv(), b.report.to_tsv());
        assert_eq!(a.best.params().to_bytes(), b.best.params().to_bytes());
        assert_eq!(a.report.epochs.len(), 3);
    }

    #[test]
    fn nan_loss_names_the_step() {
        let mut ex = examples(4, 5);
        ex[0].score = 1e308;
        ex[1].score = -1e308;
        let tcfg = TrainConfig {
            epochs: 1,
            batch_size: 4,
            init_output_bias: false,
            ..TrainConfig::default()
        };
        let m = StochasticTransformer::new(tiny_config()).unwrap();
        match train(m, &ex, &ex, &tcfg, quiet) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("step 0"), "{msg}"),
            other => panic!("expected numeric error, got {:?}", other.map(|o| o.report)),
        }
    }

    #[test]
    fn patience_stops_early_and_keeps_best() {
        let ex = examples(6, 4);
        let tcfg = TrainConfig {
            epochs: 50,
            batch_size: 3,
            patience: 1,
            lr: 1e-12,
            ..TrainConfig::default()
        };
        let m = StochasticTransformer::new(tiny_config()).unwrap();
        let out = train(m, &ex, &ex, &tcfg, quiet).unwrap();
        let best = out.report.best().unwrap();
        assert!(out.report.epochs.iter().all(|r| r.val_rmse >= best.val_rmse));
        let mats: Vec<_> = ex.iter().map(|e| &e.features).collect();
        let again = rmse(&out.best.predict(&mats).unwrap(), &scores(&ex)).unwrap();
        assert_eq!(again, best.val_rmse);
    }

    #[test]
    fn minmax_scaling_recorded_on_model() {
        let ex = examples(4, 6);
        let tcfg = TrainConfig {
            epochs: 1,
            batch_size: 2,
            target_scaling: TargetMode::MinMax,
            ..TrainConfig::default()
        };
        let m = StochasticTransformer::new(tiny_config()).unwrap();
        let out = train(m, &ex, &ex, &tcfg, quiet).unwrap();
        let y = scores(&ex);
        let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(out.best.scaling().shift, lo);
    }
}
