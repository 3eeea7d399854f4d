//! Segmentation metrics and analytic cost of the distillation losses.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::models::ToyNet;
use crate::tensor::{LabelMap, Tensor4};

/// `counts[pred][truth]` over evaluated (non-IGNORE) pixels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    /// Build from a row-major `[pred][truth]` table.
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Shape("confusion matrix must be square".into()));
        }
        Ok(Self {
            classes: k,
            counts: rows.concat(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, pred: usize, truth: usize) -> u64 {
        self.counts[pred * self.classes + truth]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn add(&mut self, pred: usize, truth: usize) {
        self.counts[pred * self.classes + truth] += 1;
    }

    /// Accumulate argmax predictions of `(n, K, h, w)` logits.
    pub fn accumulate(&mut self, logits: &Tensor4, labels: &LabelMap) -> Result<()> {
        let s = logits.shape();
        if s.c != self.classes || labels.dims() != (s.n, s.h, s.w) {
            return Err(Error::Shape(format!(
                "logits {s} / labels {:?} incompatible with {} classes",
                labels.dims(),
                self.classes
            )));
        }
        labels.validate(self.classes)?;
        let hw = s.hw();
        for n in 0..s.n {
            let block = logits.sample(n);
            for (i, &t) in labels.sample(n).iter().enumerate() {
                if t == LabelMap::IGNORE {
                    continue;
                }
                // First maximum wins on ties.
                let mut best = 0;
                for c in 1..s.c {
                    if block[c * hw + i] > block[best * hw + i] {
                        best = c;
                    }
                }
                self.add(best, t as usize);
            }
        }
        Ok(())
    }

    /// Apply a class relabelling `k → perm[k]` to both axes.
    pub fn relabel(&self, perm: &[usize]) -> Self {
        let mut out = Self::new(self.classes);
        for p in 0..self.classes {
            for t in 0..self.classes {
                out.counts[perm[p] * self.classes + perm[t]] = self.get(p, t);
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IouReport {
    /// `None` for classes with an empty union.
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

/// `IoU_k = TP / (TP + FP + FN)`; classes with zero union are excluded from
/// the mean. With no evaluable class the mean is 0.
pub fn miou(conf: &ConfusionMatrix) -> IouReport {
    let k = conf.classes();
    let per_class: Vec<Option<f64>> = (0..k)
        .map(|c| {
            let tp = conf.get(c, c);
            let fp: u64 = (0..k).filter(|&t| t != c).map(|t| conf.get(c, t)).sum();
            let fn_: u64 = (0..k).filter(|&p| p != c).map(|p| conf.get(p, c)).sum();
            let union = tp + fp + fn_;
            (union > 0).then(|| tp as f64 / union as f64)
        })
        .collect();
    IouReport {
        mean: mean_present(&per_class),
        per_class,
    }
}

/// Mean over classes of `TP / (TP + FN)`, classes without ground-truth
/// pixels excluded.
pub fn macc(conf: &ConfusionMatrix) -> f64 {
    let k = conf.classes();
    let acc: Vec<Option<f64>> = (0..k)
        .map(|c| {
            let truth: u64 = (0..k).map(|p| conf.get(p, c)).sum();
            (truth > 0).then(|| conf.get(c, c) as f64 / truth as f64)
        })
        .collect();
    mean_present(&acc)
}

fn mean_present(v: &[Option<f64>]) -> f64 {
    let present: Vec<f64> = v.iter().flatten().copied().collect();
    if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    }
}

/// Leading-order training cost of a distillation loss on an
/// `h × w × c` map with `n` classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ComplexityReport {
    pub loss: String,
    pub term: String,
    pub value: u128,
}

/// Symbolic cost per loss:
///
/// | loss            | term          |
/// |-----------------|---------------|
/// | MIMIC, PI, CW_* | `h·w·c`       |
/// | AT              | `h·w·c^p`     |
/// | LOCAL           | `8·h·w·c`     |
/// | PA              | `(h·w)^2·c`   |
/// | IFVD            | `h·w·c·n`     |
///
/// Cross-entropy is not a distillation term and the holistic adversarial
/// loss is not implemented; both are reported as unsupported.
pub fn complexity(kind: LossKind, h: u64, w: u64, c: u64, n: u64, p: u32) -> Result<ComplexityReport> {
    let (h, w, c, n) = (h as u128, w as u128, c as u128, n as u128);
    let (term, value) = match kind {
        LossKind::Mimic | LossKind::Pi | LossKind::CwKl | LossKind::CwBhattacharyya | LossKind::CwL2 => {
            ("h·w·c".to_string(), h * w * c)
        }
        LossKind::At => (format!("h·w·c^{p}"), h * w * c.pow(p)),
        LossKind::Local => ("8·h·w·c".to_string(), 8 * h * w * c),
        LossKind::Pa => ("(h·w)^2·c".to_string(), (h * w).pow(2) * c),
        LossKind::Ifvd => ("h·w·c·n".to_string(), h * w * c * n),
        LossKind::Ce => return Err(Error::Unsupported("cross-entropy has no distillation cost entry".into())),
    };
    Ok(ComplexityReport {
        loss: kind.name().to_string(),
        term,
        value,
    })
}

/// As [`complexity`], by name. `"HO"` is rejected: its cost depends on a
/// discriminator network.
pub fn complexity_by_name(name: &str, h: u64, w: u64, c: u64, n: u64, p: u32) -> Result<ComplexityReport> {
    complexity(name.parse()?, h, w, c, n, p)
}

pub fn count_params(net: &ToyNet) -> usize {
    ToyNet::param_count_formula(net.width, net.classes)
}
