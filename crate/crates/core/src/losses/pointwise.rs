//! Point-wise spatial distillation: each pixel's channel vector is the unit.

use crate::error::{Error, Result};
use crate::losses::LossResult;
use crate::tensor::{check_temperature, log_softmax_slice, Tensor4};

/// Mean over pixels of `‖yᵀ_i − yˢ_i‖²` (squared L2 over channels).
pub fn mimic_l2(teacher: &Tensor4, student: &Tensor4) -> Result<LossResult> {
    student.check_same(teacher, "mimic")?;
    let s = student.shape();
    let pixels = (s.n * s.hw()).max(1) as f64;
    let mut value = 0.0;
    let mut grad = Tensor4::zeros(s);
    for ((g, &a), &b) in grad.data_mut().iter_mut().zip(student.data()).zip(teacher.data()) {
        let d = a - b;
        value += d * d;
        *g = 2.0 * d / pixels;
    }
    Ok(LossResult {
        value: value / pixels,
        grad_student: grad,
    })
}

/// Per-sample attention maps `a_i = Σ_c |x_ic|^p`, L2-normalised.
fn attention_maps(x: &Tensor4, p: f64, who: &str) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let s = x.shape();
    let hw = s.hw();
    let mut maps = Vec::with_capacity(s.n);
    let mut norms = Vec::with_capacity(s.n);
    for n in 0..s.n {
        let mut a = vec![0.0; hw];
        for c in 0..s.c {
            for (ai, &v) in a.iter_mut().zip(x.plane(n, c)) {
                *ai += v.abs().powf(p);
            }
        }
        let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::Normalization(format!(
                "{who} attention map of sample {n} is all zero"
            )));
        }
        a.iter_mut().for_each(|v| *v /= norm);
        maps.push(a);
        norms.push(norm);
    }
    Ok((maps, norms))
}

/// Attention transfer. Spatial shapes must agree; channel counts may differ.
///
/// `value = mean_n ‖âᵀ − âˢ‖²` where `â` is the unit-norm attention map.
pub fn attention_transfer(teacher: &Tensor4, student: &Tensor4, p: f64) -> Result<LossResult> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::Parameter(format!("attention exponent must be >= 1, got {p}")));
    }
    super::check_spatial(teacher, student, "attention transfer")?;
    let s = student.shape();
    let hw = s.hw();
    let (ta, _) = attention_maps(teacher, p, "teacher")?;
    let (sa, norms) = attention_maps(student, p, "student")?;
    let batch = s.n.max(1) as f64;
    let mut value = 0.0;
    let mut grad = Tensor4::zeros(s);
    for n in 0..s.n {
        // dL/dâ
        let g: Vec<f64> = (0..hw).map(|i| 2.0 * (sa[n][i] - ta[n][i]) / batch).collect();
        value += (0..hw).map(|i| (sa[n][i] - ta[n][i]).powi(2)).sum::<f64>();
        // through â = a / ‖a‖
        let dot: f64 = (0..hw).map(|i| g[i] * sa[n][i]).sum();
        let da: Vec<f64> = (0..hw).map(|i| (g[i] - sa[n][i] * dot) / norms[n]).collect();
        for c in 0..s.c {
            let x = student.plane(n, c);
            let gx = grad.plane_mut(n, c);
            for i in 0..hw {
                let v = x[i];
                gx[i] = da[i] * p * v.abs().powf(p - 1.0) * v.signum() * (v != 0.0) as u8 as f64;
            }
        }
    }
    Ok(LossResult {
        value: value / batch,
        grad_student: grad,
    })
}

/// Mean over pixels of `KL(pᵀ_i ‖ pˢ_i)` with `p_i = softmax(x_i / τ)` taken
/// across channels.
pub fn pixelwise_kl(teacher: &Tensor4, student: &Tensor4, tau: f64) -> Result<LossResult> {
    student.check_same(teacher, "pixel-wise KL")?;
    check_temperature(tau)?;
    let s = student.shape();
    let hw = s.hw();
    let pixels = (s.n * hw).max(1) as f64;
    let mut grad = Tensor4::zeros(s);
    let mut value = 0.0;
    let mut lt = vec![0.0; s.c];
    let mut ls = vec![0.0; s.c];
    for n in 0..s.n {
        let tb = teacher.sample(n);
        let sb = student.sample(n);
        let gb = grad.sample_mut(n);
        for i in 0..hw {
            for c in 0..s.c {
                lt[c] = tb[c * hw + i];
                ls[c] = sb[c * hw + i];
            }
            log_softmax_slice(&mut lt, tau);
            log_softmax_slice(&mut ls, tau);
            for c in 0..s.c {
                let pt = lt[c].exp();
                if pt > 0.0 {
                    value += pt * (lt[c] - ls[c]);
                }
                gb[c * hw + i] = (ls[c].exp() - pt) / (tau * pixels);
            }
        }
    }
    Ok(LossResult {
        value: value / pixels,
        grad_student: grad,
    })
}
