//! Acceptance suite. Prints one PASS/FAIL/WARN line per criterion and a
//! summary. Only the deterministic criteria decide the exit code; the
//! training experiments and wall-clock measurements are reported.
//!
//! `CWKD_ACCEPT_SKIP_EXPERIMENTS=1` skips the directional and ablation
//! experiments (they take tens of minutes on one core).

#[path = "../../core/tests/support/oracles.rs"]
mod oracles;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use cwkd_cli::{compare, time_losses};
use cwkd_core::gradcheck::{check_all_losses_n, check_network, default_shapes, random_instance};
use cwkd_core::losses::{
    channelwise_bhattacharyya, channelwise_kl, channelwise_l2, ifvd, local_similarity, pairwise_affinity,
    pixelwise_kl, ChannelDistribution, LossKind, LossSpec, Target,
};
use cwkd_core::metrics::complexity;
use cwkd_core::models::IN_CHANNELS;
use cwkd_core::trainer::{
    build_dataset, distill_cached, mean_std, train_teacher, ExperimentConfig, RunOptions, Splits, TeacherCache,
};
use cwkd_core::{Shape4, Tensor4};
use proptest::prelude::*;
use proptest::test_runner::{Config as PtConfig, TestRunner};

const GRAD_TOL: f64 = 1e-4;
const GRAD_INSTANCES: usize = 20;
const GRAD_BUDGET_S: f64 = 120.0;
const ORACLE_TOL: f64 = 1e-10;
const ROW_SUM_TOL: f64 = 1e-12;
const IDENTITY_TOL: f64 = 1e-12;
const T_GRID: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];
const CW_MARGIN: f64 = 0.01;
const BASELINE_SLACK: f64 = 0.005;
const DIRECTIONAL_BUDGET_S: f64 = 30.0 * 60.0;
const SMALL_T_DROP: f64 = 0.005;
const ALPHA_SPREAD: f64 = 0.02;
const ALPHA_GRID: [f64; 4] = [5.0, 15.0, 35.0, 50.0];
/// Log-log slope of time against h·w.
const SUPERLINEAR_SLOPE: f64 = 1.5;
const NEAR_LINEAR_SLOPE: f64 = 1.25;

#[derive(Clone, Copy, PartialEq)]
enum Verdict {
    Pass,
    Fail,
    Warn,
}

struct Report {
    hard_failures: Vec<String>,
    soft_failures: Vec<String>,
}

impl Report {
    fn line(&mut self, name: &str, verdict: Verdict, hard: bool, detail: &str) {
        let tag = match verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Warn => "WARN",
        };
        let kind = if hard { "" } else { " (reported)" };
        println!("{tag}  {name}{kind}: {detail}");
        if verdict == Verdict::Fail {
            if hard {
                self.hard_failures.push(name.to_string());
            } else {
                self.soft_failures.push(name.to_string());
            }
        }
    }

    fn check(&mut self, name: &str, pass: bool, hard: bool, detail: &str) {
        self.line(name, if pass { Verdict::Pass } else { Verdict::Fail }, hard, detail);
    }

    fn error(&mut self, name: &str, hard: bool, err: impl std::fmt::Display) {
        self.line(name, Verdict::Fail, hard, &format!("error: {err}"));
    }
}

fn gradient_suite(r: &mut Report) {
    let t0 = Instant::now();
    let result = (|| {
        let mut entries = check_all_losses_n(0, &default_shapes(), GRAD_INSTANCES, GRAD_TOL)?.entries;
        entries.push(check_network(0, 4, 3, Shape4::new(2, IN_CHANNELS, 5, 6), GRAD_INSTANCES, GRAD_TOL)?);
        cwkd_core::Result::Ok(entries)
    })();
    let secs = t0.elapsed().as_secs_f64();
    match result {
        Ok(entries) => {
            let worst = entries.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error)).unwrap();
            let failing: Vec<&str> = entries.iter().filter(|e| !e.pass).map(|e| e.name.as_str()).collect();
            let pass = failing.is_empty() && secs < GRAD_BUDGET_S;
            r.check(
                "gradient suite",
                pass,
                true,
                &format!(
                    "{} kernels + network, {GRAD_INSTANCES} instances each, worst {} at {:.2e} (< {GRAD_TOL:e}), \
                     failing {failing:?}, {secs:.1} s (< {GRAD_BUDGET_S} s)",
                    entries.len() - 1,
                    worst.name,
                    worst.max_rel_error
                ),
            );
        }
        Err(e) => r.error("gradient suite", true, e),
    }
}

fn oracle_instances() -> Vec<(Tensor4, Tensor4, cwkd_core::LabelMap)> {
    let shapes = [Shape4::new(1, 1, 2, 2), Shape4::new(1, 2, 3, 3), Shape4::new(1, 3, 4, 4), Shape4::new(1, 3, 4, 3)];
    (0..16).map(|i| random_instance(5_000 + i, shapes[i as usize % shapes.len()])).collect()
}

fn oracle_equivalence(r: &mut Report) {
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut note = |name, got: f64, want: f64| {
        let err = (got - want).abs() / want.abs().max(1.0);
        let e = worst.entry(name).or_insert(0.0);
        *e = e.max(err);
    };
    let outcome = (|| {
        for (t, s, l) in oracle_instances() {
            for temp in [0.5, 1.0, 4.0] {
                note("channelwise_kl", channelwise_kl(&t, &s, temp)?.value, oracles::channelwise_kl(&t, &s, temp));
                note("pixelwise_kl", pixelwise_kl(&t, &s, temp)?.value, oracles::pixelwise_kl(&t, &s, temp));
            }
            note("pairwise_affinity", pairwise_affinity(&t, &s)?.value, oracles::pairwise_affinity(&t, &s));
            note("local_similarity", local_similarity(&t, &s)?.value, oracles::local_similarity(&t, &s));
            note("ifvd", ifvd(&t, &s, &l)?.value, oracles::ifvd(&t, &s, &l));
        }
        cwkd_core::Result::Ok(())
    })();
    if let Err(e) = outcome {
        return r.error("oracle equivalence", true, e);
    }
    let max = worst.values().copied().fold(0.0, f64::max);
    let detail: Vec<String> = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect();
    r.check(
        "oracle equivalence",
        max <= ORACLE_TOL,
        true,
        &format!("max rel err {max:.1e} (<= {ORACLE_TOL:e}); {}", detail.join(", ")),
    );
}

fn tensor_strategy() -> impl Strategy<Value = Tensor4> {
    (1usize..3, 1usize..4, 1usize..5, 2usize..5).prop_flat_map(|(n, c, h, w)| {
        prop::collection::vec(-4.0f64..4.0, n * c * h * w)
            .prop_map(move |v| Tensor4::from_vec(Shape4::new(n, c, h, w), v).unwrap())
    })
}

fn distribution_invariants(r: &mut Report) {
    let mut runner = TestRunner::new(PtConfig {
        cases: 256,
        failure_persistence: None,
        ..PtConfig::default()
    });
    let mut failures = Vec::new();

    let normalization = runner.run(&(tensor_strategy(), prop::sample::select(T_GRID.to_vec())), |(x, t)| {
        let d = ChannelDistribution::from_logits(&x, t).unwrap();
        for row in d.rows() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= ROW_SUM_TOL);
        }
        Ok(())
    });
    if let Err(e) = normalization {
        failures.push(format!("normalization: {e}"));
    }

    let shift = runner.run(&(tensor_strategy(), -50.0f64..50.0, 0.1f64..10.0), |(x, shift, t)| {
        let moved = Tensor4::from_fn(x.shape(), |[n, c, y, xx]| x.get(n, c, y, xx) + shift * (1 + c) as f64);
        let a = ChannelDistribution::from_logits(&x, t).unwrap();
        let b = ChannelDistribution::from_logits(&moved, t).unwrap();
        for (p, q) in a.as_tensor().data().iter().zip(b.as_tensor().data()) {
            prop_assert!((p - q).abs() <= 1e-12);
        }
        Ok(())
    });
    if let Err(e) = shift {
        failures.push(format!("shift invariance: {e}"));
    }

    let entropy = runner.run(&tensor_strategy(), |x| {
        let ents: Vec<Vec<f64>> = T_GRID
            .iter()
            .map(|&t| ChannelDistribution::from_logits(&x, t).unwrap().entropies())
            .collect();
        for w in ents.windows(2) {
            for (lo, hi) in w[0].iter().zip(&w[1]) {
                prop_assert!(hi + 1e-12 >= *lo);
            }
        }
        Ok(())
    });
    if let Err(e) = entropy {
        failures.push(format!("entropy monotonicity: {e}"));
    }

    // Teacher peaked on position 0, student peaked on position 1, plus a flat
    // third position: KL(p‖q) and KL(q‖p) must differ.
    let asym = (|| {
        let t = Tensor4::from_vec(Shape4::new(1, 1, 1, 3), vec![3.0, 0.0, 0.0])?;
        let s = Tensor4::from_vec(Shape4::new(1, 1, 1, 3), vec![0.0, 1.0, 0.5])?;
        let forward = channelwise_kl(&t, &s, 1.0)?.value;
        let backward = channelwise_kl(&s, &t, 1.0)?.value;
        cwkd_core::Result::Ok((forward, backward))
    })();
    let asym_detail = match asym {
        Ok((f, b)) if (f - b).abs() > 1e-3 => format!("KL(t‖s) {f:.4} vs KL(s‖t) {b:.4}"),
        Ok((f, b)) => {
            failures.push(format!("asymmetry witness too small: {f} vs {b}"));
            String::new()
        }
        Err(e) => {
            failures.push(format!("asymmetry witness: {e}"));
            String::new()
        }
    };

    r.check(
        "distribution invariants",
        failures.is_empty(),
        true,
        &if failures.is_empty() {
            format!(
                "row sums within {ROW_SUM_TOL:e}, shift invariance, entropy monotone over T {T_GRID:?} \
                 (256 cases each); asymmetry {asym_detail}"
            )
        } else {
            failures.join("; ")
        },
    );
}

fn identity_fixed_point(r: &mut Report) {
    let mut worst = [0.0f64; 3];
    let outcome = (|| {
        for i in 0..20u64 {
            let shape = Shape4::new(1 + (i % 2) as usize, 1 + (i % 4) as usize, 2 + (i % 5) as usize, 3 + (i % 3) as usize);
            let (t, _, _) = random_instance(7_000 + i, shape);
            let x = t.scale(1.0 + (i % 7) as f64);
            for temp in T_GRID {
                for (slot, v) in [
                    channelwise_kl(&x, &x, temp)?.value,
                    channelwise_bhattacharyya(&x, &x, temp)?.value,
                    channelwise_l2(&x, &x, temp)?.value,
                ]
                .into_iter()
                .enumerate()
                {
                    worst[slot] = worst[slot].max(v.abs());
                }
            }
        }
        cwkd_core::Result::Ok(())
    })();
    if let Err(e) = outcome {
        return r.error("identity fixed point", true, e);
    }
    r.check(
        "identity fixed point",
        worst.iter().all(|&v| v <= IDENTITY_TOL),
        true,
        &format!(
            "max |loss| on student = teacher: KL {:.1e}, Bhattacharyya {:.1e}, L2 {:.1e} (<= {IDENTITY_TOL:e})",
            worst[0], worst[1], worst[2]
        ),
    );
}

fn complexity_table(r: &mut Report) {
    let (h, w, c, n, p) = (64u64, 64u64, 32u64, 4u64, 2u32);
    let hw = h * w;
    let expected: [(LossKind, u128); 9] = [
        (LossKind::Mimic, (hw * c) as u128),
        (LossKind::At, (hw * c * c) as u128),
        (LossKind::Pi, (hw * c) as u128),
        (LossKind::Local, (8 * hw * c) as u128),
        (LossKind::Pa, (hw as u128).pow(2) * c as u128),
        (LossKind::Ifvd, (hw * c * n) as u128),
        (LossKind::CwKl, (hw * c) as u128),
        (LossKind::CwBhattacharyya, (hw * c) as u128),
        (LossKind::CwL2, (hw * c) as u128),
    ];
    let mut mismatches = Vec::new();
    for (kind, want) in expected {
        match complexity(kind, h, w, c, n, p) {
            Ok(got) if got.value == want => {}
            Ok(got) => mismatches.push(format!("{kind}: {} != {want}", got.value)),
            Err(e) => mismatches.push(format!("{kind}: {e}")),
        }
    }
    r.check(
        "complexity formulas",
        mismatches.is_empty(),
        true,
        &if mismatches.is_empty() {
            format!("9 kinds exact at (h,w,c,n,p) = ({h},{w},{c},{n},{p}), PA = {}", (hw as u128).pow(2) * c as u128)
        } else {
            mismatches.join("; ")
        },
    );

    let sides = [8usize, 16, 32];
    let specs = [LossSpec::new(LossKind::Pa), LossSpec::new(LossKind::CwKl)];
    match time_losses(&specs, &sides, 32, 15) {
        Ok(rows) => {
            let slope = |loss: &str| {
                let pts: Vec<(f64, f64)> = rows
                    .iter()
                    .filter(|t| t.loss == loss)
                    .map(|t| (((t.height * t.width) as f64).ln(), t.seconds.ln()))
                    .collect();
                let (mx, my) = (
                    pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64,
                    pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64,
                );
                let num: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
                let den: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
                num / den
            };
            let (pa, cw) = (slope("PA"), slope("CW_KL"));
            let times: Vec<String> = rows.iter().map(|t| format!("{} {}² {:.2e}s", t.loss, t.height, t.seconds)).collect();
            r.check(
                "complexity timing",
                pa >= SUPERLINEAR_SLOPE && cw <= NEAR_LINEAR_SLOPE,
                false,
                &format!(
                    "log-log slope vs h·w: PA {pa:.2} (>= {SUPERLINEAR_SLOPE}), CW_KL {cw:.2} (<= {NEAR_LINEAR_SLOPE}); {}",
                    times.join(", ")
                ),
            );
        }
        Err(e) => r.error("complexity timing", false, e),
    }
}

/// Runs keyed by `(loss label, T, α, seed)` so the ablation can reuse the
/// directional experiment.
struct Lab {
    cfg: ExperimentConfig,
    splits: Splits,
    cache: TeacherCache,
    memo: HashMap<(String, u64, u64, u64), f64>,
}

impl Lab {
    fn score(&mut self, spec: LossSpec, seed: u64) -> cwkd_core::Result<f64> {
        let key = (spec.label(), spec.temperature.to_bits(), spec.alpha.to_bits(), seed);
        if let Some(&v) = self.memo.get(&key) {
            return Ok(v);
        }
        let run_cfg = self.cfg.with_terms(&[spec]);
        let v = distill_cached(&run_cfg, &self.cache, &self.splits, seed, None, &RunOptions::default())?.best_val_miou;
        self.memo.insert(key, v);
        Ok(v)
    }

    fn mean(&mut self, spec: LossSpec) -> cwkd_core::Result<(f64, Vec<f64>)> {
        let seeds = self.cfg.seeds.clone();
        let per_seed = seeds.iter().map(|&s| self.score(spec, s)).collect::<cwkd_core::Result<Vec<_>>>()?;
        Ok((mean_std(&per_seed).0, per_seed))
    }
}

const BASELINES: [LossKind; 6] =
    [LossKind::Mimic, LossKind::At, LossKind::Pi, LossKind::Local, LossKind::Pa, LossKind::Ifvd];

fn directional(r: &mut Report) -> Option<Lab> {
    let t0 = Instant::now();
    let cfg = ExperimentConfig::default();
    let setup = (|| {
        let splits = build_dataset(&cfg.dataset)?;
        let teacher = train_teacher(&cfg, &splits, cfg.seeds[0], &RunOptions::default())?;
        let cache = TeacherCache::new(&teacher.best, &splits.train)?;
        cwkd_core::Result::Ok((splits, cache, teacher.best_val_miou))
    })();
    let (splits, cache, teacher_miou) = match setup {
        Ok(v) => v,
        Err(e) => {
            r.error("directional reproduction", false, e);
            return None;
        }
    };
    println!("      teacher val mIoU {teacher_miou:.4} after {:.0} s", t0.elapsed().as_secs_f64());

    let cw = LossSpec::new(LossKind::CwKl).with_alpha(35.0).with_temperature(1.0);
    let mut specs = vec![cw];
    specs.extend(BASELINES.map(LossSpec::new));
    let table = match compare(&cfg, &cache, &splits, &specs, cwkd_cli::threads(), None) {
        Ok(t) => t,
        Err(e) => {
            r.error("directional reproduction", false, format!("{e:#}"));
            return None;
        }
    };
    let secs = t0.elapsed().as_secs_f64();
    for row in &table.rows {
        println!(
            "      {:<8} {:<7} alpha {:<5} mIoU {:.4} ± {:.4} ({:+.4}) seeds {:.4?}",
            row.loss, row.target, row.alpha, row.mean, row.std, row.delta, row.per_seed
        );
    }
    let base = table.baseline().mean;
    let cw_row = table.row(LossKind::CwKl.name(), Target::Feature).unwrap();
    let cw_ok = cw_row.mean >= base + CW_MARGIN;
    let weak: Vec<String> = table.rows[2..]
        .iter()
        .filter(|row| row.mean < base - BASELINE_SLACK)
        .map(|row| format!("{} {:.4}", row.loss, row.mean))
        .collect();
    let in_budget = secs < DIRECTIONAL_BUDGET_S;
    r.check(
        "directional reproduction",
        cw_ok && weak.is_empty() && in_budget,
        false,
        &format!(
            "CE {base:.4}; CW_KL(α=35,T=1) {:.4} needs >= {:.4} [{}]; baselines below {:.4}: {weak:?}; \
             {:.1} min incl. teacher (< {:.0} min)",
            cw_row.mean,
            base + CW_MARGIN,
            if cw_ok { "met" } else { "not met" },
            base - BASELINE_SLACK,
            secs / 60.0,
            DIRECTIONAL_BUDGET_S / 60.0
        ),
    );
    let beaten: Vec<&str> = table.rows[2..].iter().filter(|row| row.mean > cw_row.mean).map(|row| row.loss.as_str()).collect();
    println!("      CW_KL beaten by: {beaten:?}");

    let mut lab = Lab {
        cfg,
        splits,
        cache,
        memo: HashMap::new(),
    };
    for (i, &seed) in table.seeds.iter().enumerate() {
        lab.memo.insert((cw.label(), cw.temperature.to_bits(), cw.alpha.to_bits(), seed), cw_row.per_seed[i]);
    }
    Some(lab)
}

fn ablation(r: &mut Report, lab: &mut Lab) {
    let t0 = Instant::now();
    let cw = LossSpec::new(LossKind::CwKl);
    let t_rows: cwkd_core::Result<Vec<(f64, f64)>> =
        T_GRID.iter().map(|&t| Ok((t, lab.mean(cw.with_alpha(35.0).with_temperature(t))?.0))).collect();
    match t_rows {
        Ok(rows) => {
            let best = rows.iter().map(|r| r.1).fold(f64::MIN, f64::max);
            let small = rows[0].1;
            let ok = small <= best - SMALL_T_DROP;
            let cells: Vec<String> = rows.iter().map(|(t, m)| format!("T={t}: {m:.4}")).collect();
            r.line(
                "ablation temperature",
                if ok { Verdict::Pass } else { Verdict::Warn },
                false,
                &format!("mIoU(T=0.01) {small:.4} vs best {best:.4} - {SMALL_T_DROP}; {}", cells.join(", ")),
            );
        }
        Err(e) => r.error("ablation temperature", false, e),
    }
    let a_rows: cwkd_core::Result<Vec<(f64, f64)>> =
        ALPHA_GRID.iter().map(|&a| Ok((a, lab.mean(cw.with_alpha(a).with_temperature(1.0))?.0))).collect();
    match a_rows {
        Ok(rows) => {
            let hi = rows.iter().map(|r| r.1).fold(f64::MIN, f64::max);
            let lo = rows.iter().map(|r| r.1).fold(f64::MAX, f64::min);
            let cells: Vec<String> = rows.iter().map(|(a, m)| format!("α={a}: {m:.4}")).collect();
            r.line(
                "ablation weight",
                if hi - lo <= ALPHA_SPREAD { Verdict::Pass } else { Verdict::Warn },
                false,
                &format!("spread {:.4} (<= {ALPHA_SPREAD}); {}", hi - lo, cells.join(", ")),
            );
        }
        Err(e) => r.error("ablation weight", false, e),
    }
    println!("      ablation took {:.1} min", t0.elapsed().as_secs_f64() / 60.0);
}

fn cwkd(args: &[&str], threads: &str) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_cwkd"))
        .args(args)
        .env("CWKD_THREADS", threads)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("cwkd {args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    files
}

/// Two `compare` invocations through the binary on the full-size dataset,
/// every loss kind, seed 0, with 200 training steps for teacher and students.
fn determinism(r: &mut Report) {
    let t0 = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.seeds = vec![0];
    cfg.optimizer.steps = 200;
    cfg.eval_every = 50;
    let config = tmp.path().join("config.toml");
    std::fs::write(&config, cfg.to_toml()).unwrap();
    let config = config.to_str().unwrap();
    let teacher = tmp.path().join("teacher");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let best = teacher.join("best");
    let run = || -> Result<(), String> {
        cwkd(&["train-teacher", "--config", config, "--out", teacher.to_str().unwrap()], "1")?;
        for (dir, threads) in [(&a, "1"), (&b, "2")] {
            cwkd(
                &["compare", "--config", config, "--teacher", best.to_str().unwrap(), "--out", dir.to_str().unwrap()],
                threads,
            )?;
        }
        Ok(())
    };
    if let Err(e) = run() {
        return r.error("determinism", true, e);
    }
    let (ta, tb) = (tree(&a), tree(&b));
    let csv = ta.keys().filter(|p| p.extension().is_some_and(|e| e == "csv")).count();
    let cwt = ta.keys().filter(|p| p.extension().is_some_and(|e| e == "cwt")).count();
    let differing: Vec<String> = ta
        .keys()
        .chain(tb.keys())
        .filter(|k| ta.get(*k) != tb.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    r.check(
        "determinism",
        differing.is_empty() && csv > 0 && cwt > 0,
        true,
        &format!(
            "{} files ({csv} csv, {cwt} cwt) byte-identical across two compare runs (1 and 2 threads); \
             differing {differing:?}; {:.0} s",
            ta.len(),
            t0.elapsed().as_secs_f64()
        ),
    );
}

fn main() -> ExitCode {
    let t0 = Instant::now();
    let mut r = Report {
        hard_failures: Vec::new(),
        soft_failures: Vec::new(),
    };
    println!("acceptance suite");
    gradient_suite(&mut r);
    oracle_equivalence(&mut r);
    distribution_invariants(&mut r);
    identity_fixed_point(&mut r);
    complexity_table(&mut r);
    determinism(&mut r);
    if std::env::var("CWKD_ACCEPT_SKIP_EXPERIMENTS").is_ok_and(|v| v == "1") {
        println!("SKIP  directional reproduction, ablation: CWKD_ACCEPT_SKIP_EXPERIMENTS=1");
    } else if let Some(mut lab) = directional(&mut r) {
        ablation(&mut r, &mut lab);
    }
    println!(
        "summary: {} hard failures {:?}, {} reported failures {:?}, {:.1} min",
        r.hard_failures.len(),
        r.hard_failures,
        r.soft_failures.len(),
        r.soft_failures,
        t0.elapsed().as_secs_f64() / 60.0
    );
    if r.hard_failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
