use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use featcast::evaluation::{evaluate_pipeline, fit_readout, InferenceMode, Task};
use featcast::feature_space::{fit_pca, sample_tokens};
use featcast::inference::{forecast_next, rollout_with, sliding_window_forecast, Horizon, RolloutSchedule};
use featcast::io::{
    generate_synthetic_corpus, load_checkpoint, load_eval_items, load_features, load_heads,
    load_sequences, save_checkpoint, save_features, save_head, save_json, save_pca,
    train_from_config, write_corpus, Checkpoint, RunConfig, SceneSpec, Split,
};
use featcast::training::{gradient_check_random, loss_curve_csv};
use featcast::FeatureSequence;

#[derive(Parser)]
#[command(name = "featcast", version, about = "Forecast frozen vision features with a masked transformer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit PCA on sampled tokens of a feature corpus.
    PcaFit {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a forecaster from a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written by an earlier `train`.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many updates (the checkpoint can be resumed).
        #[arg(long)]
        max_steps: Option<usize>,
        /// Loss curve CSV; defaults to `<out>.loss.csv`.
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Roll a checkpoint forward from a context feature file.
    Forecast {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        context: PathBuf,
        #[arg(long)]
        steps: usize,
        /// crop_h,crop_w,stride_h,stride_w
        #[arg(long, value_parser = parse_list::<4>)]
        sliding: Option<[usize; 4]>,
        /// H,W: interpolate the position tables to this grid first.
        #[arg(long, value_parser = parse_list::<2>)]
        interp_pos: Option<[usize; 2]>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score oracle, copy-last and forecast with readout heads.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "short")]
        schedule: Horizon,
        #[arg(long)]
        heads: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// stride_h,stride_w for sliding-window inference on larger grids.
        #[arg(long, value_parser = parse_list::<2>)]
        sliding: Option<[usize; 2]>,
    },
    /// Finite-difference check of every parameter gradient.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate a synthetic moving-blob corpus.
    GenCorpus {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a ridge readout head on oracle features.
    HeadsFit {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        #[arg(long)]
        task: Task,
        #[arg(long, default_value_t = 1e-3)]
        l2: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_list<const N: usize>(s: &str) -> std::result::Result<[usize; N], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|_| format!("expected {N} comma-separated integers"))
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("FORESIGHT_THREADS") {
        let n: usize = v
            .parse()
            .with_context(|| format!("FORESIGHT_THREADS={v:?} is not a thread count"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn pca_fit(features: &Path, dim: usize, samples: usize, seed: u64, out: &Path) -> Result<()> {
    let seqs: Vec<_> = load_sequences(features, Split::Train)?.into_iter().map(|(_, s)| s).collect();
    if seqs.is_empty() {
        bail!("no feature files found in {}", features.display());
    }
    let (tokens, c) = sample_tokens(&seqs, samples, seed)?;
    let pca = fit_pca(&tokens, c, dim)?;
    save_pca(out, &pca)?;
    let kept: f64 = pca.explained_variance.iter().sum();
    eprintln!(
        "pca {} -> {} on {} tokens, {:.4} of variance kept",
        pca.c_in,
        pca.d_out,
        tokens.len() / c,
        kept / pca.total_variance.max(f64::MIN_POSITIVE)
    );
    Ok(())
}

fn train(config: &Path, out: &Path, resume: Option<&Path>, max_steps: Option<usize>, loss_csv: Option<&Path>) -> Result<()> {
    let cfg = RunConfig::load(config).with_context(|| format!("loading {}", config.display()))?;
    let (state, pca) = match resume {
        Some(p) => {
            let ckpt = load_checkpoint(p)?;
            (Some(ckpt.train_state()?), ckpt.pca)
        }
        None => (None, None),
    };
    let run = train_from_config(&cfg, state, max_steps, pca)?;
    let ckpt = Checkpoint::from_state(&run.state, Some(cfg.train.clone()), Some(run.pca));
    save_checkpoint(out, &ckpt)?;
    let csv = loss_csv.map_or_else(|| out.with_extension("loss.csv"), Path::to_path_buf);
    std::fs::write(&csv, loss_curve_csv(&run.curve)).with_context(|| format!("writing {}", csv.display()))?;
    if let Some(last) = run.curve.last() {
        eprintln!("step {} phase {} loss {:.6e}", last.step, last.phase, last.loss);
    }
    Ok(())
}

fn forecast(
    ckpt: &Path,
    context: &Path,
    steps: usize,
    sliding: Option<[usize; 4]>,
    interp_pos: Option<[usize; 2]>,
    out: &Path,
) -> Result<()> {
    let ckpt = load_checkpoint(ckpt)?;
    let mut weights = ckpt.weights.clone();
    if let Some([h, w]) = interp_pos {
        weights = weights.interpolate_positions(h, w)?;
    }
    let raw = load_features(context)?;
    let c = &weights.config;
    if raw.frames() < c.context_frames {
        bail!("context file has {} frames, model needs {}", raw.frames(), c.context_frames);
    }
    let tail: Vec<usize> = (raw.frames() - c.context_frames..raw.frames()).collect();
    let window = raw.select_frames(&tail)?;
    let encoded = match &ckpt.pca {
        Some(p) if window.channels() == p.c_in && p.c_in != c.d_in => Some(p),
        _ => None,
    };
    let input = match encoded {
        Some(p) => p.encode(&window)?,
        None => window,
    };
    let pred = match sliding {
        Some([ch, cw, sh, sw]) => rollout_with(&input, steps, |x| sliding_window_forecast(&weights, x, ch, cw, sh, sw))?,
        None => {
            if interp_pos.is_none() {
                ckpt.ensure_grid(input.height(), input.width())?;
            }
            rollout_with(&input, steps, |x| forecast_next(&weights, x))?
        }
    };
    let pred: FeatureSequence<f32> = match encoded {
        Some(p) => p.decode(&pred)?,
        None => pred,
    };
    save_features(out, &pred.with_meta(raw.meta().clone()))?;
    Ok(())
}

fn evaluate(
    ckpt: &Path,
    corpus: &Path,
    schedule: Horizon,
    heads: &Path,
    report: &Path,
    sliding: Option<[usize; 2]>,
) -> Result<()> {
    let ckpt = load_checkpoint(ckpt)?;
    let pca = ckpt
        .pca
        .as_ref()
        .context("checkpoint carries no PCA model; train it with `featcast train`")?;
    let heads = load_heads(heads)?;
    let items = load_eval_items(corpus, Split::Eval)?;
    let mode = match sliding {
        Some([stride_h, stride_w]) => InferenceMode::Sliding { stride_h, stride_w },
        None => {
            if let Some(item) = items.first() {
                ckpt.ensure_grid(item.features.height(), item.features.width())?;
            }
            InferenceMode::Direct
        }
    };
    let sched = RolloutSchedule::for_horizon(schedule);
    let result = evaluate_pipeline(&ckpt.weights, pca, &heads, &items, &sched, mode)?;
    save_json(report, &result)?;
    let csv = report.with_extension("csv");
    std::fs::write(&csv, result.to_csv()).with_context(|| format!("writing {}", csv.display()))?;
    print_json(&serde_json::to_value(&result)?)
}

fn gradcheck(config: &Path, eps: f64, tol: f64, seed: u64) -> Result<bool> {
    let cfg = RunConfig::load(config)?;
    let report = gradient_check_random(&cfg.model, &cfg.train.loss(), seed, eps)?;
    let pass = report.max_rel_error < tol;
    print_json(&serde_json::json!({
        "pass": pass,
        "tol": tol,
        "report": report,
    }))?;
    Ok(pass)
}

fn gen_corpus(spec: Option<&Path>, seed: u64, out: &Path) -> Result<()> {
    let spec: SceneSpec = match spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SceneSpec::default(),
    };
    let seqs = generate_synthetic_corpus(&spec, seed)?;
    let manifest = write_corpus(out, &seqs, Some(&spec), Some(seed))?;
    eprintln!("wrote {} sequences to {}", manifest.sequences.len(), out.display());
    Ok(())
}

fn heads_fit(features: &Path, targets: &Path, task: Task, l2: f64, out: &Path) -> Result<()> {
    let mut feats = Vec::new();
    let mut tgts = Vec::new();
    for (name, f) in load_sequences(features, Split::Train)? {
        let path = targets.join(format!("{name}.{}", featcast::io::FEATURE_EXT));
        let t = load_features(&path).with_context(|| format!("target for sequence {name}"))?;
        feats.push(f);
        tgts.push(t);
    }
    if feats.is_empty() {
        bail!("no feature files found in {}", features.display());
    }
    let head = fit_readout(&feats, &tgts, task, l2)?;
    save_head(out, &head)?;
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    init_threads()?;
    match cli.command {
        Command::PcaFit { features, dim, samples, seed, out } => pca_fit(&features, dim, samples, seed, &out)?,
        Command::Train { config, out, resume, max_steps, loss_csv } => {
            train(&config, &out, resume.as_deref(), max_steps, loss_csv.as_deref())?
        }
        Command::Forecast { ckpt, context, steps, sliding, interp_pos, out } => {
            forecast(&ckpt, &context, steps, sliding, interp_pos, &out)?
        }
        Command::Evaluate { ckpt, corpus, schedule, heads, report, sliding } => {
            evaluate(&ckpt, &corpus, schedule, &heads, &report, sliding)?
        }
        Command::Gradcheck { config, eps, tol, seed } => return gradcheck(&config, eps, tol, seed),
        Command::GenCorpus { spec, seed, out } => gen_corpus(spec.as_deref(), seed, &out)?,
        Command::HeadsFit { features, targets, task, l2, out } => heads_fit(&features, &targets, task, l2, &out)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
