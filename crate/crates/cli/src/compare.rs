//! One distillation run per loss kind, side by side with the cross-entropy
//! baseline.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use cwkd_core::losses::{LossKind, LossSpec, Target};
use cwkd_core::metrics::complexity;
use cwkd_core::trainer::{distill_cached, mean_std, ExperimentConfig, RunOptions, RunOutcome, Splits, TeacherCache};
use rayon::prelude::*;
use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareRow {
    /// `CE` for the baseline, otherwise the loss kind name.
    pub loss: String,
    pub target: String,
    pub alpha: f64,
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub delta: f64,
    pub complexity_term: String,
    pub complexity_value: Option<u128>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<CompareRow>,
}

impl CompareTable {
    pub fn baseline(&self) -> &CompareRow {
        &self.rows[0]
    }

    pub fn row(&self, loss: &str, target: Target) -> Option<&CompareRow> {
        let target = target.to_string();
        self.rows.iter().find(|r| r.loss == loss && r.target == target)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["loss", "target", "alpha", "mean_mIoU", "std_mIoU", "delta_vs_baseline"];
        let seed_cols: Vec<String> = self.seeds.iter().map(|s| format!("mIoU_seed{s}")).collect();
        header.extend(seed_cols.iter().map(String::as_str));
        header.extend(["complexity_term", "complexity_value"]);
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.loss.clone(),
                r.target.clone(),
                r.alpha.to_string(),
                r.mean.to_string(),
                r.std.to_string(),
                r.delta.to_string(),
            ];
            rec.extend(r.per_seed.iter().map(f64::to_string));
            rec.push(r.complexity_term.clone());
            rec.push(r.complexity_value.map(|v| v.to_string()).unwrap_or_default());
            w.write_record(&rec)?;
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }
}

/// Leading-order cost of `spec` on the tap it distils.
pub fn spec_complexity(spec: &LossSpec, cfg: &ExperimentConfig) -> Result<(String, u128)> {
    let (h, w) = (cfg.dataset.height as u64, cfg.dataset.width as u64);
    let n = cfg.dataset.classes as u64;
    let c = match spec.target {
        Target::Feature => cfg.model.teacher_width as u64,
        Target::Score => n,
    };
    let r = complexity(spec.kind, h, w, c, n, spec.p.round() as u32)?;
    Ok((r.term, r.value))
}

/// Run the baseline plus one run per spec, every seed of `cfg`, on a pool of
/// `threads` workers. When `out` is given each run's checkpoints and metrics
/// go to `out/runs/<label>/seed<s>/`.
pub fn compare(
    cfg: &ExperimentConfig,
    cache: &TeacherCache,
    splits: &Splits,
    specs: &[LossSpec],
    threads: usize,
    out: Option<&Path>,
) -> Result<CompareTable> {
    let mut plans: Vec<(String, ExperimentConfig)> = vec![("ce".to_string(), cfg.with_terms(&[]))];
    for s in specs {
        plans.push((s.label().replace('@', "_"), cfg.with_terms(&[*s])));
    }
    let jobs: Vec<(usize, u64)> = (0..plans.len()).flat_map(|p| cfg.seeds.iter().map(move |&s| (p, s))).collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build()?;
    let results: Vec<Result<RunOutcome>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(p, seed)| {
                let (label, run_cfg) = &plans[p];
                let outcome = distill_cached(run_cfg, cache, splits, seed, None, &RunOptions::default())
                    .with_context(|| format!("{label}, seed {seed}"))?;
                if let Some(dir) = out {
                    let dir = dir.join("runs").join(label).join(format!("seed{seed}"));
                    outcome.save(&dir).with_context(|| format!("saving {}", dir.display()))?;
                }
                Ok(outcome)
            })
            .collect()
    });
    let mut scores = vec![Vec::with_capacity(cfg.seeds.len()); plans.len()];
    for (&(p, _), r) in jobs.iter().zip(results) {
        scores[p].push(r?.best_val_miou);
    }
    let (base_mean, base_std) = mean_std(&scores[0]);
    let mut rows = vec![CompareRow {
        loss: LossKind::Ce.name().to_string(),
        target: Target::Score.to_string(),
        alpha: cfg.ce_spec().alpha,
        per_seed: scores[0].clone(),
        mean: base_mean,
        std: base_std,
        delta: 0.0,
        complexity_term: "-".to_string(),
        complexity_value: None,
    }];
    for (spec, per_seed) in specs.iter().zip(scores.into_iter().skip(1)) {
        let (mean, std) = mean_std(&per_seed);
        let (term, value) = spec_complexity(spec, cfg)?;
        rows.push(CompareRow {
            loss: spec.kind.name().to_string(),
            target: spec.target.to_string(),
            alpha: spec.alpha,
            per_seed,
            mean,
            std,
            delta: mean - base_mean,
            complexity_term: term,
            complexity_value: Some(value),
        });
    }
    let table = CompareTable {
        seeds: cfg.seeds.clone(),
        rows,
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("compare.csv"), table.to_csv()?)?;
    }
    Ok(table)
}
