//! Central finite-difference oracle for the analytic gradients.
//!
//! The plain central difference uses `ε = 1e-5`: with `f64` the truncation
//! error (`O(ε²)`) and the round-off error (`O(u/ε)`) are then both around
//! `1e-10` relative to the function scale. The loss kernels are smooth, so
//! their checks use Richardson extrapolation of two central differences at
//! `h = 1e-3` and `h/2`, which is `O(h⁴)` accurate with round-off near
//! `1e-13`; that resolves gradient entries as small as `1e-8` on losses of
//! order one.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::losses::{LossKind, LossSpec};
use crate::models::ToyNet;
use crate::rng::{derive_seed, Rng};
use crate::tensor::{LabelMap, Shape4, Tensor4};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Coarse step of [`richardson_grad`] in the loss checks.
pub const RICHARDSON_STEP: f64 = 1e-3;

/// Denominator floor in [`rel_error`].
pub const REL_FLOOR: f64 = 1e-8;

/// `(f(x + εe_i) − f(x − εe_i)) / 2ε` for every coordinate `i`.
pub fn finite_diff_grad(mut f: impl FnMut(&Tensor4) -> Result<f64>, x: &Tensor4, eps: f64) -> Result<Tensor4> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Parameter(format!("finite-difference step {eps} outside [1e-7, 1e-3]")));
    }
    let mut probe = x.clone();
    let mut grad = Tensor4::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Oracle(format!(
                "non-finite evaluation at coordinate {:?}",
                x.shape().unravel(i)
            )));
        }
        grad.data_mut()[i] = (up - down) / (2.0 * eps);
    }
    Ok(grad)
}

/// `(4·D(h/2) − D(h)) / 3` where `D` is [`finite_diff_grad`].
pub fn richardson_grad(mut f: impl FnMut(&Tensor4) -> Result<f64>, x: &Tensor4, h: f64) -> Result<Tensor4> {
    let coarse = finite_diff_grad(&mut f, x, h)?;
    let fine = finite_diff_grad(&mut f, x, h / 2.0)?;
    Ok(Tensor4::from_fn(x.shape(), |[n, c, y, w]| {
        (4.0 * fine.get(n, c, y, w) - coarse.get(n, c, y, w)) / 3.0
    }))
}

/// `|a − n| / max(|a|, |n|, 1e-8)`
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Worst relative error between two gradients and where it occurs.
pub fn compare_grads(analytic: &Tensor4, numeric: &Tensor4) -> Result<(f64, [usize; 4])> {
    analytic.check_same(numeric, "gradient comparison")?;
    let mut worst = (0.0, [0; 4]);
    for (i, (&a, &n)) in analytic.data().iter().zip(numeric.data()).enumerate() {
        let e = rel_error(a, n);
        if e > worst.0 || e.is_nan() {
            worst = (e, analytic.shape().unravel(i));
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_error: f64,
    /// `(n, c, h, w)` of the worst coordinate.
    pub worst_index: [usize; 4],
    pub worst_shape: Option<Shape4>,
    pub instances: usize,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub tolerance: f64,
    pub entries: Vec<GradCheckEntry>,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn new(seed: u64, tolerance: f64, entries: Vec<GradCheckEntry>) -> Self {
        let passed = entries.iter().all(|e| e.pass);
        Self {
            seed,
            tolerance,
            entries,
            passed,
        }
    }
}

/// Accumulates the worst error over several instances of one check.
#[derive(Clone, Debug)]
pub struct WorstCase {
    name: String,
    err: f64,
    index: [usize; 4],
    shape: Option<Shape4>,
    instances: usize,
}

impl WorstCase {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            err: 0.0,
            index: [0; 4],
            shape: None,
            instances: 0,
        }
    }

    pub fn record(&mut self, shape: Shape4, err: f64, index: [usize; 4]) {
        self.instances += 1;
        if err > self.err || err.is_nan() || self.shape.is_none() {
            self.err = err;
            self.index = index;
            self.shape = Some(shape);
        }
    }

    pub fn finish(self, tolerance: f64) -> GradCheckEntry {
        GradCheckEntry {
            pass: self.err < tolerance,
            name: self.name,
            max_rel_error: self.err,
            worst_index: self.index,
            worst_shape: self.shape,
            instances: self.instances,
        }
    }
}

/// Kinds covered by [`check_all_losses`], cross-entropy included.
pub const CHECKED_KINDS: [LossKind; 10] = [
    LossKind::CwKl,
    LossKind::CwBhattacharyya,
    LossKind::CwL2,
    LossKind::Mimic,
    LossKind::At,
    LossKind::Pi,
    LossKind::Local,
    LossKind::Pa,
    LossKind::Ifvd,
    LossKind::Ce,
];

/// A random teacher/student/label triple for gradient checks. Labels take
/// values in `[0, min(c, 3))` with roughly one pixel in ten ignored.
pub fn random_instance(seed: u64, shape: Shape4) -> (Tensor4, Tensor4, LabelMap) {
    let mut rng = Rng::new(seed);
    let teacher = Tensor4::normal(shape, &mut rng, 1.0);
    let student = Tensor4::normal(shape, &mut rng, 1.0);
    let classes = shape.c.clamp(1, 3);
    let data = (0..shape.n * shape.hw())
        .map(|_| {
            if rng.uniform() < 0.1 {
                LabelMap::IGNORE
            } else {
                rng.below(classes) as u32
            }
        })
        .collect();
    let labels = LabelMap::new(shape.n, shape.h, shape.w, data).expect("sized above");
    (teacher, student, labels)
}

/// Gradient check of one loss term on one instance against
/// [`richardson_grad`] with coarse step `h`.
pub fn check_loss(spec: &LossSpec, teacher: &Tensor4, student: &Tensor4, labels: &LabelMap, h: f64) -> Result<(f64, [usize; 4])> {
    let analytic = spec.evaluate(teacher, student, Some(labels))?.grad_student;
    let numeric = richardson_grad(|s| Ok(spec.evaluate(teacher, s, Some(labels))?.value), student, h)?;
    compare_grads(&analytic, &numeric)
}

/// The spec used for each kind in the suite: `T = τ = 2` so the `1/T`
/// factors are exercised, `p = 2`.
pub fn check_spec(kind: LossKind) -> LossSpec {
    let mut s = LossSpec::new(kind).with_alpha(1.0);
    if kind != LossKind::Ce {
        s.temperature = 2.0;
    }
    s
}

pub fn check_all_losses(seed: u64, shapes: &[Shape4], tolerance: f64) -> Result<GradCheckReport> {
    check_all_losses_n(seed, shapes, 1, tolerance)
}

/// Runs every loss kind on `instances` random draws of every shape and
/// reports each kind's worst relative error.
pub fn check_all_losses_n(seed: u64, shapes: &[Shape4], instances: usize, tolerance: f64) -> Result<GradCheckReport> {
    if !(tolerance >= 0.0) {
        return Err(Error::Parameter(format!("tolerance must be nonnegative, got {tolerance}")));
    }
    if shapes.is_empty() {
        return Ok(GradCheckReport::new(seed, tolerance, Vec::new()));
    }
    let mut entries = Vec::new();
    for (k, kind) in CHECKED_KINDS.iter().enumerate() {
        let spec = check_spec(*kind);
        let mut worst = WorstCase::new(kind.name());
        for (si, &shape) in shapes.iter().enumerate() {
            for inst in 0..instances {
                let sub = derive_seed(seed, ((k * 1_000 + si) * 1_000 + inst) as u64);
                let (t, s, l) = random_instance(sub, shape);
                let (err, idx) = check_loss(&spec, &t, &s, &l, RICHARDSON_STEP)?;
                worst.record(shape, err, idx);
            }
        }
        entries.push(worst.finish(tolerance));
    }
    Ok(GradCheckReport::new(seed, tolerance, entries))
}

/// Gradient check of [`ToyNet::backward`] with respect to every parameter.
///
/// The checked scalar is `⟨g_f, feature⟩ + ⟨g_s, score⟩` for fixed random
/// `g_f`, `g_s`, so the feature-tap gradient and the score-tap gradient are
/// exercised together. `images` gives the batch and spatial size; its
/// channel count is ignored. The worst index is reported as
/// `(parameter buffer, element, 0, 0)` in [`ToyNet::params`] order.
pub fn check_network(seed: u64, width: usize, classes: usize, images: Shape4, instances: usize, tolerance: f64) -> Result<GradCheckEntry> {
    let mut worst = WorstCase::new(format!("toynet(width={width}, classes={classes})"));
    let shape = Shape4::new(images.n, crate::models::IN_CHANNELS, images.h, images.w);
    for inst in 0..instances {
        let mut rng = Rng::new(derive_seed(seed, inst as u64));
        let mut net = ToyNet::init(&mut rng, width, classes);
        // Nonzero biases move pre-activations off the ReLU kink at zero input.
        for p in net.params_mut().into_iter().skip(1).step_by(2) {
            p.iter_mut().for_each(|b| *b = 0.1 * rng.normal());
        }
        let x = Tensor4::uniform(shape, &mut rng, 0.0, 1.0);
        let pass = net.forward(&x)?;
        let g_f = Tensor4::normal(pass.feature.shape(), &mut rng, 1.0);
        let g_s = Tensor4::normal(pass.score.shape(), &mut rng, 1.0);
        let analytic = net.backward(&pass, Some(&g_f), Some(&g_s))?;
        let objective = |n: &ToyNet| -> Result<f64> {
            let t = n.taps(&x)?;
            let dot = |a: &Tensor4, b: &Tensor4| a.data().iter().zip(b.data()).map(|(u, v)| u * v).sum::<f64>();
            Ok(dot(&t.feature, &g_f) + dot(&t.score, &g_s))
        };
        let mut probe = net.clone();
        let mut inst_worst = (0.0, [0; 4]);
        for (b, grads) in analytic.slices().iter().enumerate() {
            for (i, &a) in grads.iter().enumerate() {
                let orig = probe.params()[b][i];
                probe.params_mut()[b][i] = orig + DEFAULT_EPS;
                let up = objective(&probe)?;
                probe.params_mut()[b][i] = orig - DEFAULT_EPS;
                let down = objective(&probe)?;
                probe.params_mut()[b][i] = orig;
                let e = rel_error(a, (up - down) / (2.0 * DEFAULT_EPS));
                if e > inst_worst.0 || e.is_nan() {
                    inst_worst = (e, [b, i, 0, 0]);
                }
            }
        }
        worst.record(shape, inst_worst.0, inst_worst.1);
    }
    Ok(worst.finish(tolerance))
}

pub fn default_shapes() -> Vec<Shape4> {
    vec![Shape4::new(1, 2, 3, 3), Shape4::new(2, 4, 5, 6)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Tensor4::from_vec(Shape4::new(1, 1, 1, 2), vec![1.0, 2.0]).unwrap();
        let g = finite_diff_grad(|t| Ok(t.data().iter().map(|v| v * v).sum()), &x, DEFAULT_EPS).unwrap();
        assert!((g.data()[0] - 2.0).abs() < 1e-8);
        assert!((g.data()[1] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn constant_function() {
        let x = Tensor4::ones(Shape4::new(1, 2, 2, 2));
        let g = finite_diff_grad(|_| Ok(3.0), &x, DEFAULT_EPS).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn polynomial_self_test() {
        // Cubic: central differences carry an ε² f'''/6 truncation term.
        let mut rng = Rng::new(1);
        let x = Tensor4::normal(Shape4::new(1, 2, 2, 2), &mut rng, 1.0);
        let f = |t: &Tensor4| Ok(t.data().iter().map(|v| v * v * v - 2.0 * v).sum::<f64>());
        let g = finite_diff_grad(f, &x, DEFAULT_EPS).unwrap();
        for (gi, xi) in g.data().iter().zip(x.data()) {
            assert!((gi - (3.0 * xi * xi - 2.0)).abs() < 1e-8);
        }
    }

    #[test]
    fn step_bounds_and_non_finite() {
        let x = Tensor4::ones(Shape4::new(1, 1, 1, 1));
        assert!(matches!(finite_diff_grad(|_| Ok(0.0), &x, 1e-2), Err(Error::Parameter(_))));
        assert!(matches!(finite_diff_grad(|_| Ok(0.0), &x, 1e-9), Err(Error::Parameter(_))));
        assert!(matches!(finite_diff_grad(|_| Ok(f64::NAN), &x, 1e-5), Err(Error::Oracle(_))));
    }

    #[test]
    fn rel_error_floor() {
        assert_eq!(rel_error(0.0, 0.0), 0.0);
        assert!((rel_error(1e-9, 0.0) - 0.1).abs() < 1e-15);
        assert!((rel_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cw_kl_small_instance() {
        let (t, s, l) = random_instance(5, Shape4::new(1, 2, 2, 2));
        let (err, _) = check_loss(&LossSpec::new(LossKind::CwKl), &t, &s, &l, RICHARDSON_STEP).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn network_small() {
        let e = check_network(2, 2, 3, Shape4::new(1, 3, 4, 4), 1, 1e-4).unwrap();
        assert!(e.pass, "{e:?}");
    }

    #[test]
    fn empty_and_strict() {
        let r = check_all_losses(0, &[], 1e-4).unwrap();
        assert!(r.passed && r.entries.is_empty());
        let r = check_all_losses(0, &[Shape4::new(1, 2, 3, 3)], 0.0).unwrap();
        assert!(r.entries.iter().all(|e| !e.pass));
        assert!(!r.passed);
    }
}
