#![allow(dead_code)]

pub mod oracles;

use cwkd_core::gradcheck::random_instance;
use cwkd_core::rng::Rng;
use cwkd_core::{LabelMap, Shape4, Tensor4};

/// Random teacher/student/labels with a few shapes up to `(2, 3, 4, 5)`.
pub fn instances(count: usize) -> Vec<(Tensor4, Tensor4, LabelMap)> {
    let shapes = [
        Shape4::new(1, 1, 2, 2),
        Shape4::new(1, 3, 4, 4),
        Shape4::new(2, 2, 3, 4),
        Shape4::new(2, 3, 4, 5),
    ];
    (0..count).map(|i| random_instance(1_000 + i as u64, shapes[i % shapes.len()])).collect()
}

pub fn normal(seed: u64, shape: Shape4, std: f64) -> Tensor4 {
    Tensor4::normal(shape, &mut Rng::new(seed), std)
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}
