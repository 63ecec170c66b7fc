//! Finite-difference gradient checks for every layer type and the full model.
//!
//! Each trial builds a fresh layer with perturbed parameters, draws a random
//! input and a random linear read-out `sum(w * y)`, then compares taped
//! gradients against central differences with respect to the input and the
//! parameters. Stochastic layers replay the same draws on every evaluation:
//! LWTA winners through a [`MaskTape`], dropout and stochastic-depth draws
//! through a cloned RNG stream.

use std::fmt;
use std::time::{Duration, Instant};

use crate::error::Result;
use crate::layers::{
    BatchNorm, Ctx, Dropout, LayerNorm, Linear, LocallyConnected, LwtaLayer, MaskTape, Mode, SrAttention,
    StochasticDepth,
};
use crate::model::{ModelConfig, StochasticTransformer};
use crate::tensor::gradcheck::central_difference_error;
use crate::tensor::{Graph, ParamId, ParamStore, RngStream, Tensor, Var};

pub const LAYER_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;
pub const FD_STEP: f64 = 1e-6;

/// Worst relative error seen for one check across all trials.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub trials: usize,
    pub coords: usize,
    pub worst: f64,
    pub tolerance: f64,
    pub elapsed: Duration,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.worst < self.tolerance
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<24} trials={} coords={} worst={:.3e} tol={:.0e} {:.2}s",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.trials,
            self.coords,
            self.worst,
            self.tolerance,
            self.elapsed.as_secs_f64()
        )
    }
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub seed: u64,
    pub results: Vec<CheckResult>,
    pub elapsed: Duration,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(CheckResult::passed)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.results {
            writeln!(f, "{r}")?;
        }
        write!(
            f,
            "gradcheck seed={} {} in {:.1}s",
            self.seed,
            if self.passed() { "passed" } else { "FAILED" },
            self.elapsed.as_secs_f64()
        )
    }
}

type Forward<'f> = dyn Fn(&mut Ctx<'_>, Var) -> Result<Var> + 'f;

/// One layer instance under test.
struct Probe<'f> {
    params: ParamStore,
    input: Tensor,
    mode: Mode,
    forward: Box<Forward<'f>>,
}

fn random_tensor(shape: &[usize], scale: f64, rng: &mut RngStream) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| scale * rng.normal()).collect()).expect("shape matches length")
}

/// Move trainable parameters off their initial values (unit gains, zero
/// biases) and give buffers plausible running statistics.
fn jitter(params: &mut ParamStore, rng: &mut RngStream) {
    let ids: Vec<ParamId> = params.ids().collect();
    for id in ids {
        let name = params.name(id).to_string();
        let t = params.get_mut(id);
        for v in t.data_mut() {
            if name.ends_with("running_var") {
                *v = rng.uniform_range(0.5, 1.5);
            } else {
                *v += 0.3 * rng.normal();
            }
        }
    }
}

fn objective(g: &mut Graph, y: Var, w: &Tensor) -> Result<Var> {
    let wv = g.constant(w.clone());
    let p = g.mul(y, wv)?;
    Ok(g.sum(p))
}

/// Choose up to `max` distinct coordinates out of `n`.
fn sample_coords(n: usize, max: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut all: Vec<usize> = (0..n).collect();
    if n > max {
        rng.shuffle(&mut all);
        all.truncate(max);
    }
    all
}

/// Worst relative error over the input and every trainable parameter.
/// `max_coords` caps the coordinates probed per tensor.
fn check_probe(
    probe: &Probe<'_>,
    stream: &RngStream,
    max_coords: usize,
    coord_rng: &mut RngStream,
) -> Result<(f64, usize)> {
    let mut tape = MaskTape::new();
    // Read-out weights need the output shape; this first pass also records the masks.
    let out_shape = {
        let mut g = Graph::new();
        let mut cx = Ctx::new(&mut g, &probe.params, probe.mode, stream.clone()).with_masks(&mut tape);
        let x = cx.graph.constant(probe.input.clone());
        let y = (probe.forward)(&mut cx, x)?;
        cx.graph.shape(y).to_vec()
    };
    let w = random_tensor(&out_shape, 1.0, coord_rng);

    // One taped pass gives the analytic gradient for the input and every parameter.
    let analytic: Vec<(Option<ParamId>, Tensor, Tensor)> = {
        let mut g = Graph::new();
        let mut cx = Ctx::new(&mut g, &probe.params, probe.mode, stream.clone()).with_masks(&mut tape);
        let x = cx.graph.leaf(probe.input.clone(), true);
        let ids: Vec<ParamId> = probe.params.trainable_ids().collect();
        let vars: Vec<Var> = ids.iter().map(|&id| cx.param(id)).collect();
        let y = (probe.forward)(&mut cx, x)?;
        let loss = objective(cx.graph, y, &w)?;
        cx.graph.backward(loss)?;
        let grad = |g: &Graph, v: Var, like: &Tensor| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()));
        let mut out = vec![(None, probe.input.clone(), grad(cx.graph, x, &probe.input))];
        for (id, v) in ids.into_iter().zip(vars) {
            let value = probe.params.get(id).clone();
            let gr = grad(cx.graph, v, &value);
            out.push((Some(id), value, gr));
        }
        out
    };

    // Objective with `value` standing in for one target (the input when `None`).
    let mut eval = |target: Option<ParamId>, value: &Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let mut cx = Ctx::new(&mut g, &probe.params, probe.mode, stream.clone()).with_masks(&mut tape);
        let v = cx.graph.constant(value.clone());
        let x = match target {
            None => v,
            Some(id) => {
                cx.bind(id, v);
                cx.graph.constant(probe.input.clone())
            }
        };
        let y = (probe.forward)(&mut cx, x)?;
        let loss = objective(cx.graph, y, &w)?;
        Ok(cx.graph.value(loss).item())
    };

    let mut worst = 0.0f64;
    let mut probed = 0;
    for (target, value, grad) in analytic {
        let coords = sample_coords(value.numel(), max_coords, coord_rng);
        probed += coords.len();
        let err = central_difference_error(&value, &grad, FD_STEP, &coords, |p| eval(target, p))?;
        worst = worst.max(err);
    }
    Ok((worst, probed))
}

fn run_check<'f>(
    name: &'static str,
    trials: usize,
    seed: u64,
    tolerance: f64,
    max_coords: usize,
    build: impl Fn(&mut RngStream) -> Result<Probe<'f>>,
) -> Result<CheckResult> {
    let root = RngStream::new(seed).derive(name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x100_0000_01b3)
    }));
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut coords = 0;
    for t in 0..trials {
        let trial = root.derive(t as u64);
        let mut rng = trial.derive(0);
        let probe = build(&mut rng)?;
        let (w, n) = check_probe(&probe, &trial.derive(1), max_coords, &mut trial.derive(2))?;
        worst = worst.max(w);
        coords += n;
    }
    Ok(CheckResult {
        name,
        trials,
        coords,
        worst,
        tolerance,
        elapsed: start.elapsed(),
    })
}

fn pick<T: Copy>(options: &[T], rng: &mut RngStream) -> T {
    options[(rng.next_u64() % options.len() as u64) as usize]
}

fn finish<'f>(
    mut params: ParamStore,
    input: Tensor,
    mode: Mode,
    rng: &mut RngStream,
    forward: Box<Forward<'f>>,
) -> Probe<'f> {
    jitter(&mut params, rng);
    Probe {
        params,
        input,
        mode,
        forward,
    }
}

/// Run every check with `trials` seeded trials each.
pub fn run_gradcheck(trials: usize, seed: u64) -> Result<GradcheckReport> {
    let start = Instant::now();
    let all = usize::MAX;
    let mut results = Vec::new();

    results.push(run_check("linear", trials, seed, LAYER_TOLERANCE, all, |rng| {
        let mut p = ParamStore::new();
        let layer = Linear::new(&mut p, "lin", 5, 4, true, rng);
        let x = random_tensor(&[3, 5], 1.0, rng);
        Ok(finish(
            p,
            x,
            Mode::Train,
            rng,
            Box::new(move |cx, x| layer.forward(cx, x)),
        ))
    })?);

    results.push(run_check("lwta", trials, seed, LAYER_TOLERANCE, all, |rng| {
        let mut p = ParamStore::new();
        let block = pick(&[2, 3], rng);
        let layer = LwtaLayer::new(&mut p, "lwta", 5, 6, block, rng)?;
        let x = random_tensor(&[4, 5], 1.0, rng);
        Ok(finish(
            p,
            x,
            Mode::Train,
            rng,
            Box::new(move |cx, x| layer.forward(cx, x)),
        ))
    })?);

    results.push(run_check(
        "locally_connected",
        trials,
        seed,
        LAYER_TOLERANCE,
        all,
        |rng| {
            let mut p = ParamStore::new();
            let stride = pick(&[1, 2], rng);
            let layer = LocallyConnected::new(&mut p, "lc", 6, 3, 2, stride, 3, rng)?;
            let x = random_tensor(&[2, 6, 3], 1.0, rng);
            Ok(finish(
                p,
                x,
                Mode::Train,
                rng,
                Box::new(move |cx, x| layer.forward(cx, x)),
            ))
        },
    )?);

    results.push(run_check(
        "dropout_frozen",
        trials,
        seed,
        LAYER_TOLERANCE,
        all,
        |rng| {
            let layer = Dropout::new(0.2)?;
            let x = random_tensor(&[4, 5], 1.0, rng);
            Ok(finish(
                ParamStore::new(),
                x,
                Mode::Train,
                rng,
                Box::new(move |cx, x| layer.forward(cx, x)),
            ))
        },
    )?);

    results.push(run_check("gelu", trials, seed, LAYER_TOLERANCE, all, |rng| {
        let x = random_tensor(&[4, 5], 2.0, rng);
        Ok(finish(
            ParamStore::new(),
            x,
            Mode::Train,
            rng,
            Box::new(|cx, x| Ok(cx.graph.gelu(x))),
        ))
    })?);

    for (name, mode) in [
        ("stochastic_depth_train", Mode::Train),
        ("stochastic_depth_infer", Mode::Infer),
    ] {
        results.push(run_check(name, trials, seed, LAYER_TOLERANCE, all, |rng| {
            let mut p = ParamStore::new();
            let branch = Linear::new(&mut p, "branch", 4, 4, true, rng);
            let depth = StochasticDepth::new(pick(&[0.2, 0.5, 0.8], rng))?;
            let x = random_tensor(&[2, 3, 4], 1.0, rng);
            Ok(finish(
                p,
                x,
                mode,
                rng,
                Box::new(move |cx, x| {
                    depth.forward(cx, x, |cx, x| {
                        let h = branch.forward(cx, x)?;
                        Ok(cx.graph.gelu(h))
                    })
                }),
            ))
        })?);
    }

    results.push(run_check("sr_attention", trials, seed, LAYER_TOLERANCE, 48, |rng| {
        let mut p = ParamStore::new();
        let heads = pick(&[1, 2, 8], rng);
        let ratio = pick(&[1, 2], rng);
        let layer = SrAttention::new(&mut p, "attn", 8, heads, ratio, 1e-5, rng)?;
        let x = random_tensor(&[2, 4, 8], 1.0, rng);
        Ok(finish(
            p,
            x,
            Mode::Train,
            rng,
            Box::new(move |cx, x| layer.forward(cx, x)),
        ))
    })?);

    for (name, mode) in [("batch_norm_train", Mode::Train), ("batch_norm_infer", Mode::Infer)] {
        results.push(run_check(name, trials, seed, LAYER_TOLERANCE, all, |rng| {
            let mut p = ParamStore::new();
            let layer = BatchNorm::new(&mut p, "bn", 4, 0.1, 1e-5);
            let x = random_tensor(&[5, 4], 1.0, rng);
            Ok(finish(p, x, mode, rng, Box::new(move |cx, x| layer.forward(cx, x))))
        })?);
    }

    results.push(run_check("layer_norm", trials, seed, LAYER_TOLERANCE, all, |rng| {
        let mut p = ParamStore::new();
        let layer = LayerNorm::new(&mut p, "ln", 6, 1e-5);
        let x = random_tensor(&[3, 6], 1.0, rng);
        Ok(finish(
            p,
            x,
            Mode::Train,
            rng,
            Box::new(move |cx, x| layer.forward(cx, x)),
        ))
    })?);

    results.push(model_check(trials, seed)?);

    Ok(GradcheckReport {
        seed,
        results,
        elapsed: start.elapsed(),
    })
}

/// Narrower widths than the default model with every component kept, so 100
/// trials fit the time budget.
pub fn gradcheck_model_config() -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_heads: 4,
        n_blocks: 2,
        ffn_hidden: vec![32],
        lc_filters: 8,
        regression_hidden: vec![16, 8],
        max_frames: 32,
        ..ModelConfig::default()
    }
}

/// Full model in training mode on a 2-sample batch with frozen masks,
/// probing a sample of coordinates in the input and every parameter tensor.
fn model_check(trials: usize, seed: u64) -> Result<CheckResult> {
    run_check("full_model", trials, seed, MODEL_TOLERANCE, 4, |rng| {
        let cfg = ModelConfig {
            seed: rng.next_u64(),
            // survival 1 runs every encoder branch; 0.2 mixes skipped and kept ones
            survival_p: pick(&[0.2, 1.0], rng),
            ..gradcheck_model_config()
        };
        let model = StochasticTransformer::new(cfg.clone())?;
        let params = model.params().clone();
        let x = random_tensor(&[2, cfg.n_patches(), cfg.patch_dim()], 1.0, rng);
        Ok(finish(
            params,
            x,
            Mode::Train,
            rng,
            Box::new(move |cx, x| model.forward(cx, x)),
        ))
    })
}
