//! Trainable 1×1 convolution that maps student channels to the teacher's
//! channel count before a channel-matched loss.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{conv2d, conv2d_backward, Shape4, Tensor4};

#[derive(Clone, Debug, PartialEq)]
pub struct Aligner {
    /// `(c_out, c_in, 1, 1)`
    pub weight: Tensor4,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignerGrads {
    pub grad_input: Tensor4,
    pub grad_weight: Tensor4,
    pub grad_bias: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignerShape {
    pub c_in: usize,
    pub c_out: usize,
}

impl Aligner {
    /// Uniform `±sqrt(1/c_in)` weights, zero bias.
    pub fn init(rng: &mut Rng, c_in: usize, c_out: usize) -> Self {
        let scale = (1.0 / c_in as f64).sqrt();
        Self {
            weight: Tensor4::uniform(Shape4::new(c_out, c_in, 1, 1), rng, -scale, scale),
            bias: vec![0.0; c_out],
        }
    }

    pub fn identity(c: usize) -> Self {
        Self {
            weight: Tensor4::from_fn(Shape4::new(c, c, 1, 1), |[o, i, _, _]| (o == i) as u8 as f64),
            bias: vec![0.0; c],
        }
    }

    pub fn shape(&self) -> AlignerShape {
        let s = self.weight.shape();
        AlignerShape { c_in: s.c, c_out: s.n }
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        conv2d(x, &self.weight, &self.bias, 1, 0)
    }

    pub fn backward(&self, x: &Tensor4, grad_out: &Tensor4) -> Result<AlignerGrads> {
        let g = conv2d_backward(x, &self.weight, grad_out, 1, 0)?;
        Ok(AlignerGrads {
            grad_input: g.grad_x,
            grad_weight: g.grad_w,
            grad_bias: g.grad_b,
        })
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Apply the aligner when present; without one the student map passes
/// through unchanged.
pub fn align_channels(student: &Tensor4, aligner: Option<&Aligner>) -> Result<Tensor4> {
    match aligner {
        Some(a) => a.forward(student),
        None => Ok(student.clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn passthrough_and_identity() {
        let mut rng = Rng::new(3);
        let x = Tensor4::normal(Shape4::new(2, 4, 3, 3), &mut rng, 1.0);
        assert_eq!(align_channels(&x, None).unwrap(), x);
        assert_eq!(align_channels(&x, Some(&Aligner::identity(4))).unwrap(), x);
    }

    #[test]
    fn maps_channel_count() {
        let mut rng = Rng::new(4);
        let a = Aligner::init(&mut rng, 3, 7);
        let x = Tensor4::normal(Shape4::new(1, 3, 2, 2), &mut rng, 1.0);
        assert_eq!(a.forward(&x).unwrap().shape(), Shape4::new(1, 7, 2, 2));
        assert_eq!(a.shape(), AlignerShape { c_in: 3, c_out: 7 });
        assert_eq!(a.param_count(), 28);
    }
}
