//! Channel-wise distillation: every channel plane is turned into a
//! distribution over its `h·w` positions by a temperature softmax, and the
//! teacher and student distributions are compared channel by channel.
//!
//! Gradients are with respect to the student logits. For a per-row
//! objective `f(pˢ)` with `pˢ = softmax(z / T)` the chain rule gives
//! `∂f/∂z_j = pˢ_j (g_j − Σ_i g_i pˢ_i) / T` where `g = ∂f/∂pˢ`; each metric
//! below uses the simplified closed form.
//!
//! No `T²` factor is applied to either the value or the gradient.

use crate::error::Result;
use crate::losses::{LossResult, Reduction};
use crate::tensor::{check_temperature, softmax_over_axis, Shape4, SoftmaxAxis, Tensor4};

/// Per-`(sample, channel)` probability rows over spatial positions.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelDistribution {
    probs: Tensor4,
}

impl ChannelDistribution {
    pub fn from_logits(x: &Tensor4, temperature: f64) -> Result<Self> {
        Ok(Self {
            probs: softmax_over_axis(x, SoftmaxAxis::Spatial, temperature)?,
        })
    }

    /// `(n, c, h, w)` of the source map; each row has `h·w` entries.
    pub fn shape(&self) -> Shape4 {
        self.probs.shape()
    }

    pub fn row(&self, n: usize, c: usize) -> &[f64] {
        self.probs.plane(n, c)
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        let s = self.shape();
        (0..s.n).flat_map(move |n| (0..s.c).map(move |c| self.row(n, c)))
    }

    pub fn as_tensor(&self) -> &Tensor4 {
        &self.probs
    }

    pub fn into_tensor(self) -> Tensor4 {
        self.probs
    }

    /// Shannon entropy (nats) of every row, in `(n, c)` order.
    pub fn entropies(&self) -> Vec<f64> {
        self.rows()
            .map(|r| -r.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>())
            .collect()
    }
}

/// Log-probabilities and probabilities of `softmax(x / t)`, one `exp` per
/// entry.
fn softmax_pair(x: &[f64], t: f64, logp: &mut [f64], p: &mut [f64]) {
    let max = x.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut z = 0.0;
    for ((l, q), &v) in logp.iter_mut().zip(p.iter_mut()).zip(x) {
        *l = (v - max) / t;
        *q = l.exp();
        z += *q;
    }
    let lz = z.ln();
    for (l, q) in logp.iter_mut().zip(p.iter_mut()) {
        *l -= lz;
        *q /= z;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Metric {
    Kl,
    Bhattacharyya,
    L2,
}

pub fn channelwise_kl(teacher: &Tensor4, student: &Tensor4, temperature: f64) -> Result<LossResult> {
    channelwise_kl_reduced(teacher, student, temperature, Reduction::Mean)
}

/// `Σ pᵀ log(pᵀ / pˢ)` per channel. The teacher is always the first
/// argument; the divergence is weighted by teacher mass.
pub fn channelwise_kl_reduced(
    teacher: &Tensor4,
    student: &Tensor4,
    temperature: f64,
    reduction: Reduction,
) -> Result<LossResult> {
    channelwise(teacher, student, temperature, reduction, Metric::Kl)
}

pub fn channelwise_bhattacharyya(teacher: &Tensor4, student: &Tensor4, temperature: f64) -> Result<LossResult> {
    channelwise_bhattacharyya_reduced(teacher, student, temperature, Reduction::Mean)
}

/// `−ln Σ_i sqrt(pᵀ_i pˢ_i)` per channel; symmetric in its arguments.
pub fn channelwise_bhattacharyya_reduced(
    teacher: &Tensor4,
    student: &Tensor4,
    temperature: f64,
    reduction: Reduction,
) -> Result<LossResult> {
    channelwise(teacher, student, temperature, reduction, Metric::Bhattacharyya)
}

pub fn channelwise_l2(teacher: &Tensor4, student: &Tensor4, temperature: f64) -> Result<LossResult> {
    channelwise_l2_reduced(teacher, student, temperature, Reduction::Mean)
}

/// `Σ_i (pᵀ_i − pˢ_i)²` per channel.
pub fn channelwise_l2_reduced(
    teacher: &Tensor4,
    student: &Tensor4,
    temperature: f64,
    reduction: Reduction,
) -> Result<LossResult> {
    channelwise(teacher, student, temperature, reduction, Metric::L2)
}

fn channelwise(
    teacher: &Tensor4,
    student: &Tensor4,
    t: f64,
    reduction: Reduction,
    metric: Metric,
) -> Result<LossResult> {
    student.check_same(teacher, "channel-wise distillation")?;
    check_temperature(t)?;
    let s = student.shape();
    let rows = s.n * s.c;
    let scale = match reduction {
        Reduction::Mean if rows > 0 => 1.0 / rows as f64,
        _ => 1.0,
    };
    let hw = s.hw();
    let mut grad = Tensor4::zeros(s);
    let mut value = 0.0;
    let mut lt = vec![0.0; hw];
    let mut ls = vec![0.0; hw];
    let mut pt = vec![0.0; hw];
    let mut ps = vec![0.0; hw];
    for n in 0..s.n {
        for c in 0..s.c {
            softmax_pair(teacher.plane(n, c), t, &mut lt, &mut pt);
            softmax_pair(student.plane(n, c), t, &mut ls, &mut ps);
            let g = grad.plane_mut(n, c);
            match metric {
                Metric::Kl => {
                    let mut row = 0.0;
                    for i in 0..hw {
                        if pt[i] > 0.0 {
                            row += pt[i] * (lt[i] - ls[i]);
                        }
                        g[i] = scale * (ps[i] - pt[i]) / t;
                    }
                    value += row;
                }
                Metric::Bhattacharyya => {
                    let roots: Vec<f64> = (0..hw).map(|i| (0.5 * (lt[i] + ls[i])).exp()).collect();
                    // Σ sqrt(pᵀ pˢ) = 1 − ½ Σ (sqrt pᵀ − sqrt pˢ)², which keeps
                    // full relative precision near the fixed point.
                    let half_gap: f64 =
                        0.5 * (0..hw).map(|i| ((0.5 * lt[i]).exp() - (0.5 * ls[i]).exp()).powi(2)).sum::<f64>();
                    let bc = 1.0 - half_gap;
                    value += -(-half_gap).ln_1p();
                    for i in 0..hw {
                        g[i] = scale * 0.5 * (ps[i] - roots[i] / bc) / t;
                    }
                }
                Metric::L2 => {
                    let mut row = 0.0;
                    let mut mean_g = 0.0;
                    for i in 0..hw {
                        let d = ps[i] - pt[i];
                        row += d * d;
                        mean_g += 2.0 * d * ps[i];
                    }
                    value += row;
                    for i in 0..hw {
                        g[i] = scale * ps[i] * (2.0 * (ps[i] - pt[i]) - mean_g) / t;
                    }
                }
            }
        }
    }
    Ok(LossResult {
        value: value * scale,
        grad_student: grad,
    })
}
