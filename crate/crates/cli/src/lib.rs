//! Command-line driver for the distillation experiments.

pub mod compare;
pub mod manifest;

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use cwkd_core::gradcheck::{check_all_losses_n, check_network, default_shapes, GradCheckReport};
use cwkd_core::losses::{ChannelDistribution, LossKind, LossSpec, Target};
use cwkd_core::metrics::complexity;
use cwkd_core::models::{ToyNet, IN_CHANNELS};
use cwkd_core::trainer::{
    ablate, build_dataset, distill_cached, train_teacher, ExperimentConfig, RunOptions, TeacherCache, DEFAULT_ALPHA_GRID,
    DEFAULT_T_GRID,
};
use cwkd_core::{dump, Shape4, Tensor4};
use serde::Serialize;
use serde_json::json;

pub use compare::{compare, CompareRow, CompareTable};
pub use manifest::Manifest;

#[derive(Debug, Parser)]
#[command(name = "cwkd", version, about = "Channel-wise knowledge distillation on a synthetic segmentation task")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the train and validation splits.
    GenData(Common),
    /// Finite-difference check of every loss and the network backward pass.
    Gradcheck(GradcheckArgs),
    /// Train the teacher with cross-entropy.
    TrainTeacher(Common),
    /// Train one student under the config's (or `--losses`) loss terms.
    Distill(TeacherArgs),
    /// One student per distillation loss next to the cross-entropy baseline.
    Compare(TeacherArgs),
    /// Temperature × weight grid for a single distillation term.
    Ablate(AblateArgs),
    /// Analytic cost table and measured PA vs CW timings.
    Complexity(ComplexityArgs),
    /// Spatial distributions of every channel of a checkpoint's taps.
    DumpChannels(DumpArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Replace the config's seed list by this single seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TeacherArgs {
    #[command(flatten)]
    pub common: Common,
    /// Teacher checkpoint directory.
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    /// Comma list of `kind[@target][=alpha][/T]`, e.g. `cw_kl@feature=35/1`.
    #[arg(long)]
    pub losses: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: TeacherArgs,
    #[arg(long = "grid-T", value_delimiter = ',')]
    pub grid_t: Option<Vec<f64>>,
    #[arg(long = "grid-alpha", value_delimiter = ',')]
    pub grid_alpha: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

#[derive(Debug, Clone, Args)]
pub struct ComplexityArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub height: u64,
    #[arg(long, default_value_t = 64)]
    pub width: u64,
    #[arg(long, default_value_t = 32)]
    pub channels: u64,
    #[arg(long, default_value_t = 4)]
    pub classes: u64,
    #[arg(long, default_value_t = 2)]
    pub p: u32,
    /// Skip the wall-clock measurements.
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Debug, Clone, Args)]
pub struct DumpArgs {
    #[command(flatten)]
    pub common: Common,
    /// Network checkpoint directory.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "feature")]
    pub tap: Target,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    /// Number of validation scenes to dump.
    #[arg(long, default_value_t = 4)]
    pub count: usize,
    /// Feed a constant image of this value instead of validation scenes.
    #[arg(long)]
    pub constant: Option<f64>,
}

/// Worker count from `CWKD_THREADS`, default 1.
pub fn threads() -> usize {
    std::env::var("CWKD_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

/// Parse `kind[@target][=alpha][/T]`. Unspecified fields take the
/// [`LossSpec::new`] defaults.
pub fn parse_loss(text: &str) -> Result<LossSpec> {
    let text = text.trim();
    let (rest, temperature) = match text.split_once('/') {
        Some((a, t)) => (a, Some(t.parse::<f64>().with_context(|| format!("temperature in {text:?}"))?)),
        None => (text, None),
    };
    let (rest, alpha) = match rest.split_once('=') {
        Some((a, w)) => (a, Some(w.parse::<f64>().with_context(|| format!("weight in {text:?}"))?)),
        None => (rest, None),
    };
    let (kind, target) = match rest.split_once('@') {
        Some((k, t)) => (k, Some(t.parse::<Target>()?)),
        None => (rest, None),
    };
    let mut spec = LossSpec::new(kind.parse::<LossKind>()?);
    if let Some(t) = target {
        spec = spec.with_target(t);
    }
    if let Some(a) = alpha {
        spec = spec.with_alpha(a);
    }
    if let Some(t) = temperature {
        spec = spec.with_temperature(t);
    }
    spec.validate()?;
    Ok(spec)
}

pub fn parse_losses(list: &str) -> Result<Vec<LossSpec>> {
    let specs: Vec<LossSpec> = list.split(',').filter(|s| !s.trim().is_empty()).map(parse_loss).collect::<Result<_>>()?;
    if specs.iter().any(|s| s.kind == LossKind::Ce) {
        bail!("the cross-entropy term is always present; list distillation losses only");
    }
    Ok(specs)
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seeds = vec![s];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_teacher(path: Option<&Path>) -> Result<ToyNet> {
    let path = path.ok_or_else(|| anyhow!("--teacher <checkpoint dir> is required (see `cwkd train-teacher`)"))?;
    if !path.join("manifest.json").exists() {
        bail!("no teacher checkpoint at {}", path.display());
    }
    ToyNet::load(path).with_context(|| format!("loading teacher from {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(&a),
        Command::Gradcheck(a) => gradcheck(&a),
        Command::TrainTeacher(a) => teacher(&a),
        Command::Distill(a) => distill(&a),
        Command::Compare(a) => compare_cmd(&a),
        Command::Ablate(a) => ablate_cmd(&a),
        Command::Complexity(a) => complexity_cmd(&a),
        Command::DumpChannels(a) => dump_channels(&a),
    }
}

fn gen_data(a: &Common) -> Result<()> {
    let cfg = load_config(a)?;
    let d = &cfg.dataset;
    let seed = a.seed.unwrap_or(d.seed);
    let mut ds = cfg.dataset.clone();
    ds.seed = seed;
    let splits = build_dataset(&ds)?;
    splits.train.save(&a.out.join("train"), Some(seed))?;
    splits.val.save(&a.out.join("val"), Some(seed))?;
    Manifest::new("gen-data", json!({ "out": a.out }), Some(&cfg), vec![seed]).write(&a.out)?;
    println!(
        "wrote {} train / {} val scenes ({}x{}) to {}",
        splits.train.len(),
        splits.val.len(),
        d.height,
        d.width,
        a.out.display()
    );
    Ok(())
}

fn gradcheck(a: &GradcheckArgs) -> Result<()> {
    let losses = check_all_losses_n(a.seed, &default_shapes(), a.instances, a.tolerance)?;
    let mut entries = losses.entries;
    entries.push(check_network(a.seed, 4, 3, Shape4::new(2, IN_CHANNELS, 5, 6), a.instances, a.tolerance)?);
    let report = GradCheckReport::new(a.seed, a.tolerance, entries);
    std::fs::create_dir_all(&a.out)?;
    write_json(&a.out.join("gradcheck.json"), &report)?;
    Manifest::new("gradcheck", json!({ "instances": a.instances, "tolerance": a.tolerance }), None, vec![a.seed])
        .write(&a.out)?;
    for e in &report.entries {
        println!(
            "{:<8} {} max rel err {:.2e} at {:?} {:?}",
            e.name,
            if e.pass { "ok  " } else { "FAIL" },
            e.max_rel_error,
            e.worst_shape,
            e.worst_index
        );
    }
    if !report.passed {
        bail!("gradient check failed at tolerance {:e}", a.tolerance);
    }
    Ok(())
}

fn teacher(a: &Common) -> Result<()> {
    let cfg = load_config(a)?;
    let splits = build_dataset(&cfg.dataset)?;
    let seed = cfg.seeds[0];
    let opts = RunOptions {
        divergence_dir: Some(a.out.join("diverged")),
    };
    let t0 = Instant::now();
    let outcome = train_teacher(&cfg, &splits, seed, &opts)?;
    outcome.save(&a.out)?;
    Manifest::new("train-teacher", json!({ "out": a.out }), Some(&cfg), vec![seed]).write(&a.out)?;
    println!(
        "teacher: best val mIoU {:.4} at step {}, final {:.4} ({:.1?}); checkpoint {}",
        outcome.best_val_miou,
        outcome.best_step,
        outcome.final_val_miou,
        t0.elapsed(),
        a.out.join("best").display()
    );
    Ok(())
}

fn run_config(a: &TeacherArgs) -> Result<ExperimentConfig> {
    let cfg = load_config(&a.common)?;
    Ok(match &a.losses {
        Some(list) => cfg.with_terms(&parse_losses(list)?),
        None => cfg,
    })
}

fn distill(a: &TeacherArgs) -> Result<()> {
    let teacher = load_teacher(a.teacher.as_deref())?;
    let cfg = run_config(a)?;
    let splits = build_dataset(&cfg.dataset)?;
    let cache = TeacherCache::new(&teacher, &splits.train)?;
    let out = &a.common.out;
    let mut scores = Vec::new();
    for &seed in &cfg.seeds {
        let dir = out.join(format!("seed{seed}"));
        let opts = RunOptions {
            divergence_dir: Some(dir.join("diverged")),
        };
        let outcome = distill_cached(&cfg, &cache, &splits, seed, None, &opts)?;
        outcome.save(&dir)?;
        println!("seed {seed}: best val mIoU {:.4} at step {}", outcome.best_val_miou, outcome.best_step);
        scores.push(outcome.best_val_miou);
    }
    Manifest::new("distill", json!({ "teacher": a.teacher, "losses": a.losses }), Some(&cfg), cfg.seeds.clone())
        .write(out)?;
    let (mean, std) = cwkd_core::trainer::mean_std(&scores);
    println!("mean {mean:.4} ± {std:.4}");
    Ok(())
}

fn compare_cmd(a: &TeacherArgs) -> Result<()> {
    let teacher = load_teacher(a.teacher.as_deref())?;
    let cfg = load_config(&a.common)?;
    let specs = match &a.losses {
        Some(list) => parse_losses(list)?,
        None => LossKind::DISTILLATION.iter().map(|&k| LossSpec::new(k)).collect(),
    };
    let splits = build_dataset(&cfg.dataset)?;
    let cache = TeacherCache::new(&teacher, &splits.train)?;
    let out = &a.common.out;
    let table = compare(&cfg, &cache, &splits, &specs, threads(), Some(out))?;
    Manifest::new(
        "compare",
        json!({ "teacher": a.teacher, "losses": specs.iter().map(LossSpec::label).collect::<Vec<_>>() }),
        Some(&cfg),
        cfg.seeds.clone(),
    )
    .write(out)?;
    print_compare(&table);
    Ok(())
}

pub fn print_compare(table: &CompareTable) {
    println!("{:<8} {:<8} {:>6} {:>16} {:>8}  cost", "loss", "target", "alpha", "mIoU", "delta");
    for r in &table.rows {
        println!(
            "{:<8} {:<8} {:>6} {:>8.4} ± {:<6.4} {:>+8.4}  {}",
            r.loss, r.target, r.alpha, r.mean, r.std, r.delta, r.complexity_term
        );
    }
}

fn ablate_cmd(a: &AblateArgs) -> Result<()> {
    let teacher = load_teacher(a.run.teacher.as_deref())?;
    let mut cfg = run_config(&a.run)?;
    if cfg.distillation_terms().is_empty() {
        cfg = cfg.with_terms(&[LossSpec::new(LossKind::CwKl)]);
    }
    let grid_t = a.grid_t.clone().unwrap_or_else(|| DEFAULT_T_GRID.to_vec());
    let grid_alpha = a.grid_alpha.clone().unwrap_or_else(|| DEFAULT_ALPHA_GRID.to_vec());
    let splits = build_dataset(&cfg.dataset)?;
    let cache = TeacherCache::new(&teacher, &splits.train)?;
    let table = ablate(&cfg, &cache, &splits, &grid_t, &grid_alpha)?;
    let out = &a.run.common.out;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("ablation.csv"), table.to_csv())?;
    Manifest::new(
        "ablate",
        json!({ "teacher": a.run.teacher, "grid_T": grid_t, "grid_alpha": grid_alpha }),
        Some(&cfg),
        cfg.seeds.clone(),
    )
    .write(out)?;
    for r in &table.rows {
        println!("T={:<6} alpha={:<4} mIoU {:.4} ± {:.4}", r.temperature, r.alpha, r.mean, r.std);
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct TimingRow {
    pub loss: String,
    pub height: usize,
    pub width: usize,
    pub seconds: f64,
}

/// Median wall time of one forward + backward evaluation of `spec` on
/// `(1, c, s, s)` inputs for each side length `s`.
pub fn time_losses(specs: &[LossSpec], sides: &[usize], c: usize, repeats: usize) -> Result<Vec<TimingRow>> {
    let mut rows = Vec::new();
    for spec in specs {
        for &s in sides {
            let shape = Shape4::new(1, c, s, s);
            let (t, x, y) = cwkd_core::gradcheck::random_instance(s as u64, shape);
            let mut samples = Vec::with_capacity(repeats);
            for _ in 0..repeats {
                let t0 = Instant::now();
                std::hint::black_box(spec.evaluate(&t, &x, Some(&y))?);
                samples.push(t0.elapsed().as_secs_f64());
            }
            samples.sort_by(f64::total_cmp);
            rows.push(TimingRow {
                loss: spec.kind.name().to_string(),
                height: s,
                width: s,
                seconds: samples[samples.len() / 2],
            });
        }
    }
    Ok(rows)
}

fn complexity_cmd(a: &ComplexityArgs) -> Result<()> {
    std::fs::create_dir_all(&a.out)?;
    let mut w = csv::Writer::from_path(a.out.join("complexity.csv"))?;
    w.write_record(["loss", "term", "h", "w", "c", "n", "p", "value"])?;
    for kind in LossKind::DISTILLATION {
        let r = complexity(kind, a.height, a.width, a.channels, a.classes, a.p)?;
        w.write_record([
            r.loss.clone(),
            r.term.clone(),
            a.height.to_string(),
            a.width.to_string(),
            a.channels.to_string(),
            a.classes.to_string(),
            a.p.to_string(),
            r.value.to_string(),
        ])?;
        println!("{:<8} {:<12} {}", r.loss, r.term, r.value);
    }
    w.flush()?;
    if !a.no_timing {
        let specs = [LossSpec::new(LossKind::Pa), LossSpec::new(LossKind::CwKl)];
        let rows = time_losses(&specs, &[8, 16, 32], 8, 5)?;
        let mut w = csv::Writer::from_path(a.out.join("timing.csv"))?;
        for r in &rows {
            w.serialize(r)?;
            println!("{:<8} {:>2}x{:<2} {:.3e} s", r.loss, r.height, r.width, r.seconds);
        }
        w.flush()?;
    }
    Manifest::new(
        "complexity",
        json!({ "h": a.height, "w": a.width, "c": a.channels, "n": a.classes, "p": a.p, "timing": !a.no_timing }),
        None,
        Vec::new(),
    )
    .write(&a.out)?;
    Ok(())
}

/// Spatial softmax of every channel of `net`'s `tap` on `images`.
pub fn channel_distributions(net: &ToyNet, images: &Tensor4, tap: Target, temperature: f64) -> Result<Tensor4> {
    let taps = net.taps(images)?;
    let x = match tap {
        Target::Feature => taps.feature,
        Target::Score => taps.score,
    };
    Ok(ChannelDistribution::from_logits(&x, temperature)?.into_tensor())
}

fn dump_channels(a: &DumpArgs) -> Result<()> {
    let cfg = load_config(&a.common)?;
    let net = ToyNet::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let (h, w) = (cfg.dataset.height, cfg.dataset.width);
    let images = match a.constant {
        Some(v) => Tensor4::full(Shape4::new(1, IN_CHANNELS, h, w), v),
        None => {
            let mut ds = cfg.dataset.clone();
            ds.seed = a.common.seed.unwrap_or(ds.seed);
            let val = build_dataset(&ds)?.val;
            let idx: Vec<usize> = (0..a.count.min(val.len())).collect();
            val.batch(&idx)?.0
        }
    };
    let dist = channel_distributions(&net, &images, a.tap, a.temperature)?;
    std::fs::create_dir_all(&a.common.out)?;
    dump::write(&a.common.out.join("input.cwt"), &images)?;
    dump::write(&a.common.out.join("distributions.cwt"), &dist)?;
    Manifest::new(
        "dump-channels",
        json!({
            "checkpoint": a.checkpoint,
            "tap": a.tap,
            "temperature": a.temperature,
            "count": a.count,
            "constant": a.constant,
        }),
        Some(&cfg),
        vec![a.common.seed.unwrap_or(cfg.dataset.seed)],
    )
    .write(&a.common.out)?;
    println!("wrote {} distributions to {}", dist.shape(), a.common.out.display());
    Ok(())
}
