//! Naive-loop reference implementations of the loss values. They index the
//! tensors one element at a time, never share code with the library kernels
//! and use compensated summation throughout.

#![allow(dead_code)]

use cwkd_core::{LabelMap, Tensor4};

/// Neumaier-compensated sum.
pub fn ksum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn positions(x: &Tensor4) -> Vec<(usize, usize)> {
    let s = x.shape();
    (0..s.h).flat_map(|y| (0..s.w).map(move |xx| (y, xx))).collect()
}

/// Spatial softmax of channel `c` of sample `n`, no max subtraction.
pub fn spatial_softmax(x: &Tensor4, n: usize, c: usize, t: f64) -> Vec<f64> {
    let e: Vec<f64> = positions(x).into_iter().map(|(y, xx)| (x.get(n, c, y, xx) / t).exp()).collect();
    let z = ksum(e.iter().copied());
    e.into_iter().map(|v| v / z).collect()
}

/// Channel softmax at pixel `(y, x)` of sample `n`.
pub fn channel_softmax(x: &Tensor4, n: usize, y: usize, xx: usize, t: f64) -> Vec<f64> {
    let e: Vec<f64> = (0..x.shape().c).map(|c| (x.get(n, c, y, xx) / t).exp()).collect();
    let z = ksum(e.iter().copied());
    e.into_iter().map(|v| v / z).collect()
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    ksum(p.iter().zip(q).filter(|(a, _)| **a > 0.0).map(|(a, b)| a * (a / b).ln()))
}

/// Channel-wise KL, summed over channels and positions, divided by `n·c`.
pub fn channelwise_kl(teacher: &Tensor4, student: &Tensor4, t: f64) -> f64 {
    let s = student.shape();
    let mut terms = Vec::new();
    for n in 0..s.n {
        for c in 0..s.c {
            terms.push(kl(&spatial_softmax(teacher, n, c, t), &spatial_softmax(student, n, c, t)));
        }
    }
    ksum(terms) / (s.n * s.c) as f64
}

pub fn channelwise_bhattacharyya(teacher: &Tensor4, student: &Tensor4, t: f64) -> f64 {
    let s = student.shape();
    let mut terms = Vec::new();
    for n in 0..s.n {
        for c in 0..s.c {
            let p = spatial_softmax(teacher, n, c, t);
            let q = spatial_softmax(student, n, c, t);
            terms.push(-ksum(p.iter().zip(&q).map(|(a, b)| (a * b).sqrt())).ln());
        }
    }
    ksum(terms) / (s.n * s.c) as f64
}

pub fn channelwise_l2(teacher: &Tensor4, student: &Tensor4, t: f64) -> f64 {
    let s = student.shape();
    let mut terms = Vec::new();
    for n in 0..s.n {
        for c in 0..s.c {
            let p = spatial_softmax(teacher, n, c, t);
            let q = spatial_softmax(student, n, c, t);
            terms.push(ksum(p.iter().zip(&q).map(|(a, b)| (a - b).powi(2))));
        }
    }
    ksum(terms) / (s.n * s.c) as f64
}

/// Mean over pixels of the channel-softmax KL.
pub fn pixelwise_kl(teacher: &Tensor4, student: &Tensor4, tau: f64) -> f64 {
    let s = student.shape();
    let mut terms = Vec::new();
    for n in 0..s.n {
        for (y, xx) in positions(student) {
            terms.push(kl(&channel_softmax(teacher, n, y, xx, tau), &channel_softmax(student, n, y, xx, tau)));
        }
    }
    ksum(terms) / (s.n * s.h * s.w) as f64
}

fn feature(x: &Tensor4, n: usize, y: usize, xx: usize) -> Vec<f64> {
    (0..x.shape().c).map(|c| x.get(n, c, y, xx)).collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = ksum(a.iter().map(|v| v * v)).sqrt();
    let nb = ksum(b.iter().map(|v| v * v)).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        ksum(a.iter().zip(b).map(|(p, q)| p * q)) / (na * nb)
    }
}

/// Mean over all ordered pixel pairs of the squared cosine-affinity gap.
pub fn pairwise_affinity(teacher: &Tensor4, student: &Tensor4) -> f64 {
    let s = student.shape();
    let pos = positions(student);
    let mut terms = Vec::new();
    for n in 0..s.n {
        for &(yi, xi) in &pos {
            for &(yj, xj) in &pos {
                let at = cosine(&feature(teacher, n, yi, xi), &feature(teacher, n, yj, xj));
                let as_ = cosine(&feature(student, n, yi, xi), &feature(student, n, yj, xj));
                terms.push((at - as_).powi(2));
            }
        }
    }
    ksum(terms) / (s.n * pos.len() * pos.len()) as f64
}

/// Sum of Euclidean distances to the in-image 8-neighbours of every pixel.
pub fn local_map(x: &Tensor4, n: usize) -> Vec<f64> {
    let s = x.shape();
    let mut out = Vec::new();
    for (y, xx) in positions(x) {
        let centre = feature(x, n, y, xx);
        let mut d = Vec::new();
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (ny, nx) = (y as i64 + dy, xx as i64 + dx);
                if (dy, dx) == (0, 0) || ny < 0 || nx < 0 || ny >= s.h as i64 || nx >= s.w as i64 {
                    continue;
                }
                let other = feature(x, n, ny as usize, nx as usize);
                d.push(ksum(centre.iter().zip(&other).map(|(a, b)| (a - b).powi(2))).sqrt());
            }
        }
        out.push(ksum(d));
    }
    out
}

pub fn local_similarity(teacher: &Tensor4, student: &Tensor4) -> f64 {
    let s = student.shape();
    let mut terms = Vec::new();
    for n in 0..s.n {
        let mt = local_map(teacher, n);
        let ms = local_map(student, n);
        terms.extend(mt.iter().zip(&ms).map(|(a, b)| (a - b).powi(2)));
    }
    ksum(terms) / (s.n * s.h * s.w) as f64
}

/// Cosine of every labelled pixel to the mean feature of its class within
/// the same sample.
pub fn prototype_cosines(x: &Tensor4, labels: &LabelMap) -> Vec<f64> {
    let s = x.shape();
    let mut out = Vec::new();
    for n in 0..s.n {
        for (y, xx) in positions(x) {
            let l = labels.get(n, y, xx);
            if l == LabelMap::IGNORE {
                continue;
            }
            let members: Vec<(usize, usize)> =
                positions(x).into_iter().filter(|&(py, px)| labels.get(n, py, px) == l).collect();
            let proto: Vec<f64> = (0..s.c)
                .map(|c| ksum(members.iter().map(|&(py, px)| x.get(n, c, py, px))) / members.len() as f64)
                .collect();
            out.push(cosine(&feature(x, n, y, xx), &proto));
        }
    }
    out
}

pub fn ifvd(teacher: &Tensor4, student: &Tensor4, labels: &LabelMap) -> f64 {
    let vt = prototype_cosines(teacher, labels);
    let vs = prototype_cosines(student, labels);
    if vs.is_empty() {
        return 0.0;
    }
    ksum(vt.iter().zip(&vs).map(|(a, b)| (a - b).powi(2))) / vs.len() as f64
}

/// `−Σ log softmax(x)[label]` over labelled pixels, divided by their count.
pub fn cross_entropy(logits: &Tensor4, labels: &LabelMap) -> f64 {
    let s = logits.shape();
    let mut terms = Vec::new();
    for n in 0..s.n {
        for (y, xx) in positions(logits) {
            let l = labels.get(n, y, xx);
            if l == LabelMap::IGNORE {
                continue;
            }
            terms.push(-channel_softmax(logits, n, y, xx, 1.0)[l as usize].ln());
        }
    }
    if terms.is_empty() {
        0.0
    } else {
        let m = terms.len() as f64;
        ksum(terms) / m
    }
}
