use std::fs;
use std::path::{Path, PathBuf};

use stformer::config::render_kv;
use stformer::data::{generate_synthetic, load_corpus, load_examples, load_features, Split, SyntheticSpec};
use stformer::dsp::{extract_mfcc, read_wav};
use stformer::training::train;
use stformer::verify::run_gradcheck;
use stformer::{Checkpoint, Error, EvalReport, RunConfig, StochasticTransformer};

use crate::{Cli, Command, Failure, Global};

type Outcome = std::result::Result<(), Failure>;

pub fn run(cli: Cli) -> Outcome {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let cfg = resolve(&cli.global)?;
    match cli.command {
        Command::Extract { input, output } => extract(&cfg, &input, &output),
        Command::Synth { n, out, duration } => synth(&cfg, n, &out, duration),
        Command::Train {
            corpus,
            index,
            out,
            report,
        } => train_cmd(&cfg, &corpus, &index, &out, report),
        Command::Eval {
            ckpt,
            corpus,
            index,
            split,
        } => eval(&cfg, &ckpt, &corpus, &index, &split),
        Command::Predict { ckpt, input } => predict(&cfg, &ckpt, &input),
        Command::Gradcheck { trials } => gradcheck(&cfg, trials),
    }
}

/// Defaults, then the config file, then `--set`, then `--seed`.
fn resolve(g: &Global) -> std::result::Result<RunConfig, Failure> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &g.config {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    for kv in &g.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = g.seed {
        cfg.set("seed", &s.to_string())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_config(text: &str) {
    for line in text.lines() {
        eprintln!("# {line}");
    }
}

fn print_run_config(cfg: &RunConfig) {
    eprintln!("# seed={}", cfg.train.seed);
    print_config(&cfg.to_kv());
}

fn extract(cfg: &RunConfig, input: &Path, output: &Path) -> Outcome {
    print_run_config(cfg);
    let sig = read_wav(input)?;
    let m = extract_mfcc(&sig, &cfg.feature)?;
    m.save(output)?;
    println!(
        "{} frames x {} coefficients -> {}",
        m.frames(),
        m.coeffs(),
        output.display()
    );
    Ok(())
}

fn synth(cfg: &RunConfig, n: usize, out: &Path, duration: f64) -> Outcome {
    let spec = SyntheticSpec {
        n_participants: n,
        duration_s: duration,
        sample_rate: cfg.feature.sample_rate,
        seed: cfg.train.seed,
        ..SyntheticSpec::default()
    };
    print_run_config(cfg);
    eprintln!(
        "# synth n={n} duration_s={duration} score_range=[{}, {}]",
        spec.score_lo, spec.score_hi
    );
    let index = generate_synthetic(&spec, out)?;
    let count = |s| index.split(s).count();
    println!(
        "wrote {} participants to {} (train {}, dev {}, test {})",
        index.len(),
        out.display(),
        count(Split::Train),
        count(Split::Dev),
        count(Split::Test)
    );
    Ok(())
}

fn train_cmd(cfg: &RunConfig, corpus: &Path, index: &Path, out: &Path, report: Option<PathBuf>) -> Outcome {
    print_run_config(cfg);
    let idx = load_corpus(corpus, index)?;
    let all = load_examples(&idx, None, &cfg.feature)?;
    let (train_set, rest): (Vec<_>, Vec<_>) = all.into_iter().partition(|e| e.split == Split::Train);
    let dev_set: Vec<_> = rest.into_iter().filter(|e| e.split == Split::Dev).collect();
    eprintln!("# train={} dev={}", train_set.len(), dev_set.len());

    let model = StochasticTransformer::new(cfg.model.clone())?;
    let every = cfg.train.checkpoint_every;
    let outcome = train(model, &train_set, &dev_set, &cfg.train, |ev| {
        let r = ev.record;
        eprintln!(
            "epoch {:>4}  loss {:.6}  train_rmse {:.6}  val_rmse {:.6}  val_ccc {:.6}{}",
            r.epoch,
            r.train_loss,
            r.train_rmse,
            r.val_rmse,
            r.val_ccc,
            if ev.is_best { "  *" } else { "" }
        );
        if every > 0 && r.epoch % every == 0 {
            let path = PathBuf::from(format!("{}.epoch{}", out.display(), r.epoch));
            Checkpoint {
                model: ev.model.clone(),
                feature: cfg.feature.clone(),
            }
            .save(&path)?;
        }
        Ok(())
    })?;

    let mut rep = outcome.report;
    rep.config = cfg.entries();
    let report_path = report.unwrap_or_else(|| PathBuf::from(format!("{}.report.tsv", out.display())));
    rep.save(&report_path)?;
    Checkpoint {
        model: outcome.best,
        feature: cfg.feature.clone(),
    }
    .save(out)?;
    let wall: u128 = rep.wall_ms.iter().sum();
    match rep.best() {
        Some(b) => println!(
            "best epoch {} of {}: val_rmse {:.6} val_ccc {:.6} ({:.1}s)",
            b.epoch,
            rep.epochs.len(),
            b.val_rmse,
            b.val_ccc,
            wall as f64 / 1000.0
        ),
        None => println!("no epochs run; checkpoint holds the initialization"),
    }
    println!("checkpoint {}  report {}", out.display(), report_path.display());
    Ok(())
}

fn load_checkpoint(path: &Path) -> std::result::Result<Checkpoint, Failure> {
    let ckpt = Checkpoint::load(path)?;
    print_config(&ckpt.header());
    Ok(ckpt)
}

fn eval(cfg: &RunConfig, ckpt: &Path, corpus: &Path, index: &Path, split: &str) -> Outcome {
    eprintln!("# seed={}", cfg.train.seed);
    let split: Split = split.parse()?;
    let ckpt = load_checkpoint(ckpt)?;
    let idx = load_corpus(corpus, index)?;
    let ex = load_examples(&idx, Some(split), &ckpt.feature)?;
    if ex.is_empty() {
        return Err(Failure::Data(format!("split {split} is empty")));
    }
    let mats: Vec<_> = ex.iter().map(|e| &e.features).collect();
    let pred = ckpt.model.predict(&mats)?;
    let truth: Vec<f64> = ex.iter().map(|e| e.score).collect();
    let report = EvalReport::compute(split.as_str(), &pred, &truth)?;
    println!("{report}");
    print!("{}", report.to_kv());
    Ok(())
}

fn predict(cfg: &RunConfig, ckpt: &Path, input: &Path) -> Outcome {
    eprintln!("# seed={}", cfg.train.seed);
    let ckpt = load_checkpoint(ckpt)?;
    let m = load_features(input, &ckpt.feature)?;
    let y = ckpt.model.predict(&[&m])?;
    println!("{}", y[0]);
    Ok(())
}

fn gradcheck(cfg: &RunConfig, trials: usize) -> Outcome {
    let seed = cfg.train.seed;
    eprintln!("# seed={seed}");
    print_config(&render_kv([("trials", trials.to_string())]));
    let report = run_gradcheck(trials, seed)?;
    println!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Numeric("gradient check failed".into()))
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::from(Error::Io(e))
    }
}
