use crate::error::{Error, Result};
use crate::losses::LossResult;
use crate::tensor::{log_softmax_slice, LabelMap, Tensor4};

/// Per-pixel softmax cross-entropy averaged over non-IGNORE pixels.
/// With every pixel ignored the value and gradient are zero.
pub fn cross_entropy(logits: &Tensor4, labels: &LabelMap) -> Result<LossResult> {
    let s = logits.shape();
    if labels.dims() != (s.n, s.h, s.w) {
        return Err(Error::shape(format!(
            "labels {:?} do not match logits {s}",
            labels.dims()
        )));
    }
    labels.validate(s.c)?;
    let hw = s.hw();
    let count = labels.data().iter().filter(|&&l| l != LabelMap::IGNORE).count();
    let mut grad = Tensor4::zeros(s);
    if count == 0 {
        return Ok(LossResult {
            value: 0.0,
            grad_student: grad,
        });
    }
    let inv = 1.0 / count as f64;
    let mut value = 0.0;
    let mut lp = vec![0.0; s.c];
    for n in 0..s.n {
        let block = logits.sample(n);
        let lab = labels.sample(n);
        let gb = grad.sample_mut(n);
        for i in 0..hw {
            let y = lab[i];
            if y == LabelMap::IGNORE {
                continue;
            }
            for c in 0..s.c {
                lp[c] = block[c * hw + i];
            }
            log_softmax_slice(&mut lp, 1.0);
            value -= lp[y as usize];
            for c in 0..s.c {
                let onehot = (c == y as usize) as u8 as f64;
                gb[c * hw + i] = (lp[c].exp() - onehot) * inv;
            }
        }
    }
    Ok(LossResult {
        value: value * inv,
        grad_student: grad,
    })
}
