//! Distillation losses and segmentation cross-entropy.
//!
//! Every kernel returns a [`LossResult`]: the scalar value and its gradient
//! with respect to the *student* tensor. Teacher tensors and labels are
//! constants; no gradient is ever produced for them.

mod align;
mod ce;
mod channel;
mod pointwise;
mod structural;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{LabelMap, Tensor4};

pub use align::{align_channels, Aligner, AlignerGrads, AlignerShape};
pub use ce::cross_entropy;
pub use channel::{
    channelwise_bhattacharyya, channelwise_bhattacharyya_reduced, channelwise_kl, channelwise_kl_reduced,
    channelwise_l2, channelwise_l2_reduced, ChannelDistribution,
};
pub use pointwise::{attention_transfer, mimic_l2, pixelwise_kl};
pub use structural::{
    affinity_matrix, ifvd, local_similarity, local_similarity_map, pairwise_affinity, prototype_similarities,
};

#[derive(Clone, Debug, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub grad_student: Tensor4,
}

/// How the channel-wise losses fold their per-channel terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    /// Divide the sum over channels and positions by `n·c`.
    #[default]
    Mean,
    /// The raw sum.
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Feature,
    Score,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::Feature => "feature",
            Target::Score => "score",
        })
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "feature" | "featuremap" => Ok(Target::Feature),
            "score" | "scoremap" => Ok(Target::Score),
            _ => Err(Error::param(format!("unknown target {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LossKind {
    CwKl,
    CwBhattacharyya,
    CwL2,
    Mimic,
    At,
    Pi,
    Local,
    Pa,
    Ifvd,
    Ce,
}

impl LossKind {
    /// Distillation kinds in the order the comparison table lists them.
    pub const DISTILLATION: [LossKind; 9] = [
        LossKind::Mimic,
        LossKind::At,
        LossKind::Pi,
        LossKind::Local,
        LossKind::Pa,
        LossKind::Ifvd,
        LossKind::CwKl,
        LossKind::CwBhattacharyya,
        LossKind::CwL2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::CwKl => "CW_KL",
            LossKind::CwBhattacharyya => "CW_BHAT",
            LossKind::CwL2 => "CW_L2",
            LossKind::Mimic => "MIMIC",
            LossKind::At => "AT",
            LossKind::Pi => "PI",
            LossKind::Local => "LOCAL",
            LossKind::Pa => "PA",
            LossKind::Ifvd => "IFVD",
            LossKind::Ce => "CE",
        }
    }

    pub fn is_distillation(self) -> bool {
        self != LossKind::Ce
    }

    pub fn is_channelwise(self) -> bool {
        matches!(self, LossKind::CwKl | LossKind::CwBhattacharyya | LossKind::CwL2)
    }

    /// Kinds whose teacher and student tensors must have equal channel
    /// counts; the rest only compare channel-free structures.
    pub fn needs_matched_channels(self) -> bool {
        self.is_channelwise() || matches!(self, LossKind::Mimic | LossKind::Pi)
    }

    /// Weight used when none is given. MIMIC and LOCAL compare raw feature
    /// magnitudes summed over channels, so they start two to three orders of
    /// magnitude above the normalised losses.
    pub fn default_alpha(self) -> f64 {
        match self {
            LossKind::Ce => 1.0,
            LossKind::Mimic | LossKind::Local => 0.01,
            _ => 35.0,
        }
    }

    pub fn default_target(self) -> Target {
        match self {
            LossKind::Pi | LossKind::Ce => Target::Score,
            _ => Target::Feature,
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "cw_kl" | "cw" => LossKind::CwKl,
            "cw_bhat" | "cw_bhattacharyya" => LossKind::CwBhattacharyya,
            "cw_l2" => LossKind::CwL2,
            "mimic" => LossKind::Mimic,
            "at" => LossKind::At,
            "pi" | "pixelwise" => LossKind::Pi,
            "local" => LossKind::Local,
            "pa" | "pairwise" => LossKind::Pa,
            "ifvd" => LossKind::Ifvd,
            "ce" => LossKind::Ce,
            "ho" | "holistic" => {
                return Err(Error::Unsupported(
                    "the holistic adversarial loss needs a trained discriminator".into(),
                ))
            }
            _ => return Err(Error::param(format!("unknown loss kind {s:?}"))),
        })
    }
}

impl TryFrom<String> for LossKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LossKind> for String {
    fn from(k: LossKind) -> String {
        k.name().to_ascii_lowercase()
    }
}

/// One weighted loss term: kind, distillation tap, hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLossSpec")]
pub struct LossSpec {
    pub kind: LossKind,
    pub target: Target,
    /// Weight in the combined objective.
    pub alpha: f64,
    /// Softmax temperature for CW_* and PI.
    pub temperature: f64,
    /// Attention exponent for AT.
    pub p: f64,
    pub reduction: Reduction,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLossSpec {
    kind: LossKind,
    target: Option<Target>,
    alpha: Option<f64>,
    temperature: Option<f64>,
    p: Option<f64>,
    reduction: Option<Reduction>,
}

impl TryFrom<RawLossSpec> for LossSpec {
    type Error = Error;

    fn try_from(r: RawLossSpec) -> Result<Self> {
        let mut spec = LossSpec::new(r.kind);
        if let Some(t) = r.target {
            spec.target = t;
        }
        spec.alpha = r.alpha.unwrap_or(spec.alpha);
        spec.temperature = r.temperature.unwrap_or(spec.temperature);
        spec.p = r.p.unwrap_or(spec.p);
        spec.reduction = r.reduction.unwrap_or_default();
        spec.validate()?;
        Ok(spec)
    }
}

impl LossSpec {
    /// Defaults: [`LossKind::default_alpha`], `T = 1`, `p = 2`, mean
    /// reduction.
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            target: kind.default_target(),
            alpha: kind.default_alpha(),
            temperature: 1.0,
            p: 2.0,
            reduction: Reduction::Mean,
        }
    }

    pub fn ce() -> Self {
        Self::new(LossKind::Ce)
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn with_target(mut self, target: Target) -> Self {
        self.target = target;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::param(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::param(format!("alpha must be nonnegative, got {}", self.alpha)));
        }
        if !(self.p >= 1.0) || !self.p.is_finite() {
            return Err(Error::param(format!("attention exponent must be >= 1, got {}", self.p)));
        }
        if self.kind == LossKind::Ce && self.target != Target::Score {
            return Err(Error::param("cross-entropy applies to the score map only"));
        }
        Ok(())
    }

    /// Short column label, e.g. `cw_kl@feature`.
    pub fn label(&self) -> String {
        format!("{}@{}", self.kind.name().to_ascii_lowercase(), self.target)
    }

    /// Evaluate this term. `teacher` is ignored for cross-entropy; `labels`
    /// is required for cross-entropy and IFVD and is resized (nearest) to
    /// the student's spatial size when it differs.
    pub fn evaluate(&self, teacher: &Tensor4, student: &Tensor4, labels: Option<&LabelMap>) -> Result<LossResult> {
        self.validate()?;
        let labels_at = |x: &Tensor4| -> Result<LabelMap> {
            let l = labels.ok_or_else(|| Error::param(format!("{} needs labels", self.kind)))?;
            let s = x.shape();
            Ok(if (l.dims().1, l.dims().2) == (s.h, s.w) {
                l.clone()
            } else {
                l.resize_nearest(s.h, s.w)
            })
        };
        match self.kind {
            LossKind::CwKl => channelwise_kl_reduced(teacher, student, self.temperature, self.reduction),
            LossKind::CwBhattacharyya => {
                channelwise_bhattacharyya_reduced(teacher, student, self.temperature, self.reduction)
            }
            LossKind::CwL2 => channelwise_l2_reduced(teacher, student, self.temperature, self.reduction),
            LossKind::Mimic => mimic_l2(teacher, student),
            LossKind::At => attention_transfer(teacher, student, self.p),
            LossKind::Pi => pixelwise_kl(teacher, student, self.temperature),
            LossKind::Local => local_similarity(teacher, student),
            LossKind::Pa => pairwise_affinity(teacher, student),
            LossKind::Ifvd => ifvd(teacher, student, &labels_at(student)?),
            LossKind::Ce => cross_entropy(student, &labels_at(student)?),
        }
    }
}

/// Weighted sum of loss terms, with gradients accumulated per tap.
#[derive(Clone, Debug, PartialEq)]
pub struct CombinedLoss {
    pub value: f64,
    /// `α_k · value_k`, in input order.
    pub components: Vec<f64>,
    pub grads: Vec<(Target, Tensor4)>,
}

impl CombinedLoss {
    pub fn grad(&self, target: Target) -> Option<&Tensor4> {
        self.grads.iter().find(|(t, _)| *t == target).map(|(_, g)| g)
    }
}

/// `value = Σ α_k · value_k`; gradients on the same tap are summed with the
/// same weights. Terms on one tap must agree on the gradient shape.
pub fn combine(terms: &[(LossSpec, LossResult)]) -> Result<CombinedLoss> {
    let mut grads: Vec<(Target, Tensor4)> = Vec::new();
    let mut components = Vec::with_capacity(terms.len());
    for (spec, res) in terms {
        spec.validate()?;
        components.push(spec.alpha * res.value);
        match grads.iter_mut().find(|(t, _)| *t == spec.target) {
            Some((_, g)) => g.add_scaled(spec.alpha, &res.grad_student)?,
            None => grads.push((spec.target, res.grad_student.scale(spec.alpha))),
        }
    }
    Ok(CombinedLoss {
        value: components.iter().sum(),
        components,
        grads,
    })
}

pub(crate) fn check_spatial(teacher: &Tensor4, student: &Tensor4, what: &str) -> Result<()> {
    let (t, s) = (teacher.shape(), student.shape());
    if (t.n, t.h, t.w) != (s.n, s.h, s.w) {
        return Err(Error::shape(format!(
            "{what}: teacher {t} and student {s} differ in batch or spatial size"
        )));
    }
    Ok(())
}
