//! Teacher pretraining, student distillation and hyper-parameter sweeps.
//!
//! The student objective is `α_ce·CE + Σ_k α_k·φ_k(teacher tap, student tap)`.
//! The teacher is frozen during distillation, so its taps on the training set
//! are computed once and sliced per batch.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::losses::{Aligner, LossKind, LossSpec, Target};
use crate::metrics::{miou, ConfusionMatrix};
use crate::models::{TapPair, ToyNet};
use crate::rng::{derive_seed, tag, Rng};
use crate::tensor::{LabelMap, Tensor4};

/// Images per forward pass when evaluating or caching taps.
const CHUNK: usize = 25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub seed: u64,
    pub train: usize,
    pub val: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train: 200,
            val: 50,
            height: 32,
            width: 32,
            classes: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub teacher_width: usize,
    pub student_width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            teacher_width: 32,
            student_width: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub momentum: f64,
    pub steps: usize,
    pub batch: usize,
    /// Rescale the joint gradient to at most this L2 norm; 0 disables.
    pub clip_norm: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            momentum: 0.9,
            steps: 2000,
            batch: 8,
            clip_norm: 1.0,
        }
    }
}

impl OptimizerConfig {
    fn validate(&self, what: &str) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("{what}: lr must be finite and nonnegative")));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("{what}: momentum must be in [0, 1)")));
        }
        if !(self.clip_norm >= 0.0) || !self.clip_norm.is_finite() {
            return Err(Error::Config(format!("{what}: clip_norm must be finite and nonnegative")));
        }
        if self.batch == 0 {
            return Err(Error::Config(format!("{what}: batch must be positive")));
        }
        Ok(())
    }
}

/// Everything needed to reproduce a run. Stored as TOML:
///
/// ```toml
/// seeds = [0, 1, 2]
/// eval_every = 100
///
/// [dataset]
/// seed = 0
/// train = 200
/// val = 50
///
/// [model]
/// teacher_width = 32
/// student_width = 8
///
/// [optimizer]
/// lr = 0.05
/// steps = 2000
///
/// [[loss]]
/// kind = "ce"
///
/// [[loss]]
/// kind = "cw_kl"
/// target = "feature"
/// alpha = 35.0
/// temperature = 1.0
/// ```
///
/// Omitted sections take the defaults shown. `teacher_optimizer` defaults to
/// `optimizer`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher_optimizer: Option<OptimizerConfig>,
    #[serde(rename = "loss", default = "default_losses")]
    pub losses: Vec<LossSpec>,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_eval_every() -> usize {
    100
}

fn default_losses() -> Vec<LossSpec> {
    vec![LossSpec::ce()]
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: default_seeds(),
            eval_every: default_eval_every(),
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            optimizer: OptimizerConfig::default(),
            teacher_optimizer: None,
            losses: default_losses(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let ce = self.losses.iter().filter(|l| l.kind == LossKind::Ce).count();
        if ce != 1 {
            return Err(Error::Config(format!("exactly one ce term required, found {ce}")));
        }
        for l in &self.losses {
            l.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        let d = &self.dataset;
        if d.train == 0 || d.val == 0 {
            return Err(Error::Config("dataset needs at least one train and one val scene".into()));
        }
        if d.height < 16 || d.width < 16 || !(2..=data::MAX_CLASSES).contains(&d.classes) {
            return Err(Error::Config(format!(
                "dataset {}x{} with {} classes is outside the generator's range",
                d.height, d.width, d.classes
            )));
        }
        if self.model.teacher_width == 0 || self.model.student_width == 0 {
            return Err(Error::Config("network widths must be positive".into()));
        }
        self.optimizer.validate("optimizer")?;
        if let Some(t) = &self.teacher_optimizer {
            t.validate("teacher_optimizer")?;
        }
        Ok(())
    }

    pub fn teacher_optimizer(&self) -> &OptimizerConfig {
        self.teacher_optimizer.as_ref().unwrap_or(&self.optimizer)
    }

    pub fn ce_spec(&self) -> &LossSpec {
        self.losses.iter().find(|l| l.kind == LossKind::Ce).expect("validated")
    }

    pub fn distillation_terms(&self) -> Vec<LossSpec> {
        self.losses.iter().copied().filter(|l| l.kind != LossKind::Ce).collect()
    }

    /// Same config with the distillation terms replaced.
    pub fn with_terms(&self, terms: &[LossSpec]) -> Self {
        let mut out = self.clone();
        out.losses = std::iter::once(*self.ce_spec()).chain(terms.iter().copied()).collect();
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
}

/// Generate `train + val` scenes from the dataset seed; the first `train`
/// scenes form the training split.
pub fn build_dataset(cfg: &DatasetConfig) -> Result<Splits> {
    let all = data::generate(cfg.seed, cfg.train + cfg.val, cfg.height, cfg.width, cfg.classes)?;
    Ok(Splits {
        train: all.slice(0, cfg.train)?,
        val: all.slice(cfg.train, cfg.train + cfg.val)?,
    })
}

/// `v ← μ·v + g; p ← p − lr·v`, slice by slice.
pub fn sgd_step(params: &mut [&mut [f64]], grads: &[&[f64]], velocity: &mut [Vec<f64>], lr: f64, momentum: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::shape(format!(
            "sgd: {} parameter, {} gradient and {} velocity buffers",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        if p.len() != g.len() || p.len() != v.len() {
            return Err(Error::shape("sgd: buffer length mismatch"));
        }
        for ((pi, gi), vi) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
            *vi = momentum * *vi + gi;
            *pi -= lr * *vi;
        }
    }
    Ok(())
}

/// Scale all buffers by a common factor so their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping. `max_norm = 0` leaves the
/// buffers untouched.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let k = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= k);
    }
    norm
}

/// Trainable parameters of one run plus their momentum buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub step: usize,
    pub net: ToyNet,
    /// One slot per distillation term; `Some` where the term trains an aligner.
    pub aligners: Vec<Option<Aligner>>,
    /// Mirrors `net.params()` followed by each aligner's weight and bias.
    pub velocity: Vec<Vec<f64>>,
    /// Weighted loss components of the last step, cross-entropy first.
    pub running: Vec<f64>,
}

impl TrainState {
    pub fn new(net: ToyNet, aligners: Vec<Option<Aligner>>) -> Self {
        let mut state = Self {
            step: 0,
            net,
            aligners,
            velocity: Vec::new(),
            running: Vec::new(),
        };
        state.velocity = state.params().iter().map(|p| vec![0.0; p.len()]).collect();
        state
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = self.net.params();
        for a in self.aligners.iter().flatten() {
            out.push(a.weight.data());
            out.push(&a.bias);
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.net.params_mut();
        for a in self.aligners.iter_mut().flatten() {
            out.push(a.weight.data_mut());
            out.push(&mut a.bias);
        }
        out
    }

    pub fn apply(&mut self, grads: &[&[f64]], lr: f64, momentum: f64) -> Result<()> {
        let mut velocity = std::mem::take(&mut self.velocity);
        let res = sgd_step(&mut self.params_mut(), grads, &mut velocity, lr, momentum);
        self.velocity = velocity;
        res?;
        self.step += 1;
        Ok(())
    }

    /// Write the network, aligners and step summary to `dir`.
    pub fn dump(&self, dir: &Path) -> Result<()> {
        self.net.save(dir)?;
        for (i, a) in self.aligners.iter().enumerate() {
            if let Some(a) = a {
                crate::dump::write(&dir.join(format!("aligner{i}.weight.cwt")), &a.weight)?;
            }
        }
        let summary = serde_json::json!({ "step": self.step, "running": self.running });
        let path = dir.join("state.json");
        fs::write(&path, serde_json::to_string_pretty(&summary)?).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    /// `α_ce · CE`
    pub ce: f64,
    /// `α_k · φ_k` per distillation term.
    pub terms: Vec<f64>,
    pub total: f64,
    pub val_miou: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsLog {
    pub term_labels: Vec<String>,
    pub records: Vec<StepRecord>,
}

impl MetricsLog {
    /// Columns `step, ce, <term labels…>, total, val_mIoU`; the last column
    /// is empty on steps without evaluation.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,ce");
        for l in &self.term_labels {
            out.push(',');
            out.push_str(l);
        }
        out.push_str(",total,val_mIoU\n");
        for r in &self.records {
            write!(out, "{},{}", r.step, r.ce).unwrap();
            for t in &r.terms {
                write!(out, ",{t}").unwrap();
            }
            write!(out, ",{},", r.total).unwrap();
            if let Some(m) = r.val_miou {
                write!(out, "{m}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub seed: u64,
    pub final_state: TrainState,
    /// Network at the best validation evaluation.
    pub best: ToyNet,
    pub best_step: usize,
    pub best_val_miou: f64,
    pub final_val_miou: f64,
    pub log: MetricsLog,
}

impl RunOutcome {
    pub fn net(&self) -> &ToyNet {
        &self.final_state.net
    }

    /// Save `best/`, `final/` and `metrics.csv` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.best.save(&dir.join("best"))?;
        self.final_state.dump(&dir.join("final"))?;
        self.log.write_csv(&dir.join("metrics.csv"))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Where to dump the training state if the loss stops being finite.
    pub divergence_dir: Option<PathBuf>,
}

/// Teacher taps on every training scene, indexed like the training split.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherCache {
    pub taps: TapPair,
}

impl TeacherCache {
    pub fn new(teacher: &ToyNet, train: &Dataset) -> Result<Self> {
        let mut feats = Vec::new();
        let mut scores = Vec::new();
        for start in (0..train.len()).step_by(CHUNK) {
            let idx: Vec<usize> = (start..(start + CHUNK).min(train.len())).collect();
            let taps = teacher.taps(&train.images.select(&idx)?)?;
            feats.push(taps.feature);
            scores.push(taps.score);
        }
        if feats.is_empty() {
            return Err(Error::param("teacher cache needs at least one training scene"));
        }
        Ok(Self {
            taps: TapPair {
                feature: Tensor4::concat(&feats)?,
                score: Tensor4::concat(&scores)?,
            },
        })
    }

    fn batch(&self, idx: &[usize]) -> Result<TapPair> {
        Ok(TapPair {
            feature: self.taps.feature.select(idx)?,
            score: self.taps.score.select(idx)?,
        })
    }
}

/// Mean IoU of `net` on `data`.
pub fn evaluate(net: &ToyNet, data: &Dataset) -> Result<f64> {
    Ok(miou(&confusion(net, data)?).mean)
}

pub fn confusion(net: &ToyNet, data: &Dataset) -> Result<ConfusionMatrix> {
    let mut conf = ConfusionMatrix::new(net.classes);
    for start in (0..data.len()).step_by(CHUNK) {
        let idx: Vec<usize> = (start..(start + CHUNK).min(data.len())).collect();
        let (x, y) = data.batch(&idx)?;
        conf.accumulate(&net.taps(&x)?.score, &y)?;
    }
    Ok(conf)
}

/// Epoch-wise shuffled mini-batches.
struct Sampler {
    rng: Rng,
    order: Vec<usize>,
    pos: usize,
}

impl Sampler {
    fn new(seed: u64, len: usize) -> Self {
        Self {
            rng: Rng::new(seed),
            order: (0..len).collect(),
            pos: len,
        }
    }

    fn next(&mut self, batch: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(batch);
        while out.len() < batch {
            if self.pos == self.order.len() {
                self.rng.shuffle(&mut self.order);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn tap(t: &TapPair, target: Target) -> &Tensor4 {
    match target {
        Target::Feature => &t.feature,
        Target::Score => &t.score,
    }
}

fn accumulate(slot: &mut Option<Tensor4>, g: Tensor4) -> Result<()> {
    match slot {
        Some(acc) => acc.add_scaled(1.0, &g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

struct Loop<'a> {
    ce: LossSpec,
    terms: Vec<LossSpec>,
    cache: Option<&'a TeacherCache>,
    opt: &'a OptimizerConfig,
    eval_every: usize,
    splits: &'a Splits,
    batch_seed: u64,
    options: &'a RunOptions,
}

impl Loop<'_> {
    fn run(&self, mut state: TrainState, seed: u64) -> Result<RunOutcome> {
        let mut sampler = Sampler::new(self.batch_seed, self.splits.train.len());
        let mut records = Vec::with_capacity(self.opt.steps);
        let mut best = (state.net.clone(), 0, f64::NEG_INFINITY);
        let mut last_val = None;
        if self.opt.steps == 0 {
            let m = evaluate(&state.net, &self.splits.val)?;
            best = (state.net.clone(), 0, m);
            last_val = Some(m);
        }
        for step in 1..=self.opt.steps {
            let idx = sampler.next(self.opt.batch);
            let (x, y) = self.splits.train.batch(&idx)?;
            let (mut record, grads) = self.step(&state, &x, &y, &idx, step)?;
            state.running = std::iter::once(record.ce).chain(record.terms.iter().copied()).collect();
            if !record.total.is_finite() {
                if let Some(dir) = &self.options.divergence_dir {
                    state.dump(dir)?;
                }
                return Err(Error::Diverged {
                    step,
                    detail: format!("loss components {:?}", state.running),
                });
            }
            let mut grads = grads;
            clip_global_norm(&mut grads, self.opt.clip_norm);
            let refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
            state.apply(&refs, self.opt.lr, self.opt.momentum)?;
            if step % self.eval_every == 0 || step == self.opt.steps {
                let m = evaluate(&state.net, &self.splits.val)?;
                record.val_miou = Some(m);
                last_val = Some(m);
                if m > best.2 {
                    best = (state.net.clone(), step, m);
                }
            }
            records.push(record);
        }
        Ok(RunOutcome {
            seed,
            best: best.0,
            best_step: best.1,
            best_val_miou: best.2,
            final_val_miou: last_val.expect("evaluated at the last step"),
            log: MetricsLog {
                term_labels: self.terms.iter().map(LossSpec::label).collect(),
                records,
            },
            final_state: state,
        })
    }

    fn step(&self, state: &TrainState, x: &Tensor4, y: &LabelMap, idx: &[usize], step: usize) -> Result<(StepRecord, Vec<Vec<f64>>)> {
        let pass = state.net.forward(x)?;
        let mut feature_grad: Option<Tensor4> = None;
        let ce = self.ce.evaluate(&pass.score, &pass.score, Some(y))?;
        let mut score_grad = Some(ce.grad_student.scale(self.ce.alpha));
        let ce_value = self.ce.alpha * ce.value;

        let teacher = match self.cache {
            Some(c) if !self.terms.is_empty() => Some(c.batch(idx)?),
            _ => None,
        };
        let mut terms = Vec::with_capacity(self.terms.len());
        let mut aligner_grads = Vec::new();
        for (spec, aligner) in self.terms.iter().zip(&state.aligners) {
            let teacher = teacher.as_ref().ok_or_else(|| Error::param("distillation term without a teacher"))?;
            let s_tap = match spec.target {
                Target::Feature => &pass.feature,
                Target::Score => &pass.score,
            };
            let res = match aligner {
                Some(a) => spec.evaluate(tap(teacher, spec.target), &a.forward(s_tap)?, Some(y))?,
                None => spec.evaluate(tap(teacher, spec.target), s_tap, Some(y))?,
            };
            terms.push(spec.alpha * res.value);
            let g = res.grad_student.scale(spec.alpha);
            let g = match aligner {
                Some(a) => {
                    let ag = a.backward(s_tap, &g)?;
                    aligner_grads.push(ag.grad_weight.into_data());
                    aligner_grads.push(ag.grad_bias);
                    ag.grad_input
                }
                None => g,
            };
            if spec.alpha != 0.0 {
                match spec.target {
                    Target::Feature => accumulate(&mut feature_grad, g)?,
                    Target::Score => accumulate(&mut score_grad, g)?,
                }
            }
        }
        let net_grads = state.net.backward(&pass, feature_grad.as_ref(), score_grad.as_ref())?;
        let mut grads: Vec<Vec<f64>> = net_grads.slices().into_iter().map(<[f64]>::to_vec).collect();
        grads.extend(aligner_grads);
        let total = ce_value + terms.iter().sum::<f64>();
        Ok((
            StepRecord {
                step,
                ce: ce_value,
                terms,
                total,
                val_miou: None,
            },
            grads,
        ))
    }
}

/// Cross-entropy training of a `teacher_width` network.
pub fn train_teacher(cfg: &ExperimentConfig, splits: &Splits, seed: u64, options: &RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    let net = ToyNet::from_seed(derive_seed(seed, tag("teacher")), cfg.model.teacher_width, cfg.dataset.classes);
    let lp = Loop {
        ce: *cfg.ce_spec(),
        terms: Vec::new(),
        cache: None,
        opt: cfg.teacher_optimizer(),
        eval_every: cfg.eval_every,
        splits,
        batch_seed: derive_seed(seed, tag("teacher-batches")),
        options,
    };
    lp.run(TrainState::new(net, Vec::new()), seed)
}

/// Aligners for the terms that compare channels one-to-one on taps of
/// different widths.
pub fn make_aligners(terms: &[LossSpec], student: &ToyNet, cache: &TeacherCache, seed: u64) -> Vec<Option<Aligner>> {
    terms
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let (cs, ct) = match spec.target {
                Target::Feature => (student.width, cache.taps.feature.shape().c),
                Target::Score => (student.classes, cache.taps.score.shape().c),
            };
            (spec.kind.needs_matched_channels() && cs != ct)
                .then(|| Aligner::init(&mut Rng::with_stream(derive_seed(seed, tag("aligner")), i as u64), cs, ct))
        })
        .collect()
}

/// Train a student under the config's loss terms against a frozen teacher.
pub fn distill(cfg: &ExperimentConfig, teacher: &ToyNet, splits: &Splits, seed: u64, options: &RunOptions) -> Result<RunOutcome> {
    let cache = TeacherCache::new(teacher, &splits.train)?;
    distill_cached(cfg, &cache, splits, seed, None, options)
}

/// As [`distill`] with precomputed teacher taps. `init` replaces the seeded
/// student initialisation.
pub fn distill_cached(
    cfg: &ExperimentConfig,
    cache: &TeacherCache,
    splits: &Splits,
    seed: u64,
    init: Option<ToyNet>,
    options: &RunOptions,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let t = cache.taps.score.shape();
    if (t.n, t.h, t.w) != (splits.train.len(), splits.train.height(), splits.train.width()) {
        return Err(Error::shape(format!(
            "teacher taps {t} do not cover the {}-scene training split",
            splits.train.len()
        )));
    }
    let student = init.unwrap_or_else(|| {
        ToyNet::from_seed(derive_seed(seed, tag("student")), cfg.model.student_width, cfg.dataset.classes)
    });
    if student.classes != t.c {
        return Err(Error::shape(format!("student has {} classes, teacher {}", student.classes, t.c)));
    }
    let terms = cfg.distillation_terms();
    let aligners = make_aligners(&terms, &student, cache, seed);
    let lp = Loop {
        ce: *cfg.ce_spec(),
        terms,
        cache: Some(cache),
        opt: &cfg.optimizer,
        eval_every: cfg.eval_every,
        splits,
        batch_seed: derive_seed(seed, tag("batches")),
        options,
    };
    lp.run(TrainState::new(student, aligners), seed)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub temperature: f64,
    pub alpha: f64,
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationTable {
    pub loss: String,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn get(&self, temperature: f64, alpha: f64) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.temperature == temperature && r.alpha == alpha)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("loss,temperature,alpha,mean_mIoU,std_mIoU,per_seed\n");
        for r in &self.rows {
            let seeds: Vec<String> = r.per_seed.iter().map(f64::to_string).collect();
            writeln!(out, "{},{},{},{},{},{}", self.loss, r.temperature, r.alpha, r.mean, r.std, seeds.join(";")).unwrap();
        }
        out
    }
}

pub const DEFAULT_T_GRID: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];
pub const DEFAULT_ALPHA_GRID: [f64; 5] = [0.0, 5.0, 15.0, 35.0, 50.0];

/// Population mean and standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Distill once per seed for every `(T, α)` in the product of the grids,
/// varying the config's single distillation term.
pub fn ablate(cfg: &ExperimentConfig, cache: &TeacherCache, splits: &Splits, grid_t: &[f64], grid_alpha: &[f64]) -> Result<AblationTable> {
    let terms = cfg.distillation_terms();
    let [base] = terms.as_slice() else {
        return Err(Error::Config(format!(
            "ablation needs exactly one distillation term, found {}",
            terms.len()
        )));
    };
    let mut rows = Vec::new();
    for &t in grid_t {
        for &a in grid_alpha {
            let run_cfg = cfg.with_terms(&[base.with_temperature(t).with_alpha(a)]);
            let per_seed = cfg
                .seeds
                .iter()
                .map(|&s| Ok(distill_cached(&run_cfg, cache, splits, s, None, &RunOptions::default())?.best_val_miou))
                .collect::<Result<Vec<_>>>()?;
            let (mean, std) = mean_std(&per_seed);
            rows.push(AblationRow {
                temperature: t,
                alpha: a,
                per_seed,
                mean,
                std,
            });
        }
    }
    Ok(AblationTable {
        loss: base.label(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_roundtrips_through_toml() {
        let cfg = ExperimentConfig::default().with_terms(&[LossSpec::new(LossKind::CwKl)]);
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn config_rejects_bad_input() {
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
        assert!(ExperimentConfig::from_toml("[[loss]]\nkind = \"cw_kl\"").is_err());
        assert!(ExperimentConfig::from_toml("[[loss]]\nkind = \"ce\"\n[[loss]]\nkind = \"ce\"").is_err());
        assert!(ExperimentConfig::from_toml("seeds = []").is_err());
        let cfg = ExperimentConfig::from_toml("[optimizer]\nsteps = 5").unwrap();
        assert_eq!(cfg.optimizer.steps, 5);
        assert_eq!(cfg.optimizer.lr, 0.05);
        assert_eq!(cfg.losses, vec![LossSpec::ce()]);
    }

    #[test]
    fn sgd_matches_recurrence() {
        let mut p = vec![1.0, -2.0];
        let mut v = vec![vec![0.0; 2]];
        let g = [0.5, 1.0];
        sgd_step(&mut [&mut p], &[&g], &mut v, 0.1, 0.9).unwrap();
        sgd_step(&mut [&mut p], &[&g], &mut v, 0.1, 0.9).unwrap();
        // v1 = g, v2 = 1.9 g, p = p0 − 0.1·2.9 g
        assert!((p[0] - (1.0 - 0.29 * 0.5)).abs() < 1e-15);
        assert!((p[1] - (-2.0 - 0.29)).abs() < 1e-15);
        assert!((v[0][1] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn sampler_covers_each_epoch() {
        let mut s = Sampler::new(3, 10);
        let mut seen: Vec<usize> = (0..5).flat_map(|_| s.next(2)).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn mean_std_basic() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
    }
}
