//! Pairwise and higher-order spatial distillation. Each of these reduces a
//! network's feature map to a channel-free structure (neighbour distances,
//! a cosine affinity matrix, prototype similarities), so teacher and student
//! only need matching batch and spatial sizes.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::losses::LossResult;
use crate::tensor::{gemm, LabelMap, Tensor4};

const NEIGHBOURS: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

fn in_bounds(y: usize, x: usize, dy: isize, dx: isize, h: usize, w: usize) -> Option<usize> {
    let ny = y as isize + dy;
    let nx = x as isize + dx;
    (ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w).then(|| ny as usize * w + nx as usize)
}

fn pixel_distance(block: &[f64], c: usize, hw: usize, i: usize, j: usize) -> f64 {
    (0..c)
        .map(|k| {
            let d = block[k * hw + i] - block[k * hw + j];
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// `s_i = Σ_{j ∈ N₈(i)} ‖x_j − x_i‖` for every pixel of every sample.
/// Neighbours outside the image contribute nothing.
pub fn local_similarity_map(x: &Tensor4) -> Vec<f64> {
    let s = x.shape();
    let hw = s.hw();
    let mut out = vec![0.0; s.n * hw];
    for n in 0..s.n {
        let block = x.sample(n);
        for y in 0..s.h {
            for xx in 0..s.w {
                let i = y * s.w + xx;
                out[n * hw + i] = NEIGHBOURS
                    .iter()
                    .filter_map(|&(dy, dx)| in_bounds(y, xx, dy, dx, s.h, s.w))
                    .map(|j| pixel_distance(block, s.c, hw, i, j))
                    .sum();
            }
        }
    }
    out
}

/// Mean squared difference between the two networks' 8-neighbourhood
/// distance maps.
pub fn local_similarity(teacher: &Tensor4, student: &Tensor4) -> Result<LossResult> {
    super::check_spatial(teacher, student, "local similarity")?;
    let s = student.shape();
    let hw = s.hw();
    let pixels = (s.n * hw).max(1) as f64;
    let st = local_similarity_map(teacher);
    let ss = local_similarity_map(student);
    let value = st.iter().zip(&ss).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / pixels;
    let g: Vec<f64> = st.iter().zip(&ss).map(|(t, s)| 2.0 * (s - t) / pixels).collect();
    let mut grad = Tensor4::zeros(s);
    for n in 0..s.n {
        let block = student.sample(n);
        let gb = grad.sample_mut(n);
        for y in 0..s.h {
            for xx in 0..s.w {
                let i = y * s.w + xx;
                for &(dy, dx) in &NEIGHBOURS {
                    let Some(j) = in_bounds(y, xx, dy, dx, s.h, s.w) else {
                        continue;
                    };
                    let d = pixel_distance(block, s.c, hw, i, j);
                    if d == 0.0 {
                        continue;
                    }
                    // d(i, j) appears in both s_i and s_j.
                    let k = (g[n * hw + i] + g[n * hw + j]) / d;
                    for c in 0..s.c {
                        gb[c * hw + i] += k * (block[c * hw + i] - block[c * hw + j]);
                    }
                }
            }
        }
    }
    Ok(LossResult {
        value,
        grad_student: grad,
    })
}

/// Column-normalised copy of a `(c, hw)` sample block plus the column norms.
/// Zero columns stay zero.
fn unit_columns(block: &[f64], c: usize, hw: usize) -> (Vec<f64>, Vec<f64>) {
    let mut norms = vec![0.0; hw];
    for k in 0..c {
        for (i, nm) in norms.iter_mut().enumerate() {
            *nm += block[k * hw + i].powi(2);
        }
    }
    norms.iter_mut().for_each(|v| *v = v.sqrt());
    let mut u = block.to_vec();
    for k in 0..c {
        for i in 0..hw {
            u[k * hw + i] = if norms[i] > 0.0 { u[k * hw + i] / norms[i] } else { 0.0 };
        }
    }
    (u, norms)
}

/// `(h·w) × (h·w)` cosine-similarity matrix of one sample, row-major.
/// Pixels with a zero feature vector have similarity 0 with everything.
pub fn affinity_matrix(x: &Tensor4, n: usize) -> Vec<f64> {
    let s = x.shape();
    let hw = s.hw();
    let (u, _) = unit_columns(x.sample(n), s.c, hw);
    let mut a = vec![0.0; hw * hw];
    gemm(hw, s.c, hw, &u, true, &u, false, 0.0, &mut a);
    a
}

/// Mean over pixel pairs of the squared difference between the teacher and
/// student cosine-affinity matrices.
pub fn pairwise_affinity(teacher: &Tensor4, student: &Tensor4) -> Result<LossResult> {
    super::check_spatial(teacher, student, "pairwise affinity")?;
    let s = student.shape();
    let hw = s.hw();
    let pairs = (s.n * hw * hw).max(1) as f64;
    let mut value = 0.0;
    let mut grad = Tensor4::zeros(s);
    let mut du = vec![0.0; s.c * hw];
    for n in 0..s.n {
        let at = affinity_matrix(teacher, n);
        let (u, norms) = unit_columns(student.sample(n), s.c, hw);
        let mut g = vec![0.0; hw * hw];
        gemm(hw, s.c, hw, &u, true, &u, false, 0.0, &mut g);
        for (gi, &ti) in g.iter_mut().zip(&at) {
            let d = *gi - ti;
            value += d * d;
            // ∂L/∂A, then doubled because A = UᵀU is symmetric in U.
            *gi = 4.0 * d / pairs;
        }
        // dU = U · G
        gemm(s.c, hw, hw, &u, false, &g, false, 0.0, &mut du);
        let gb = grad.sample_mut(n);
        for i in 0..hw {
            if norms[i] == 0.0 {
                continue;
            }
            let dot: f64 = (0..s.c).map(|k| u[k * hw + i] * du[k * hw + i]).sum();
            for k in 0..s.c {
                gb[k * hw + i] = (du[k * hw + i] - u[k * hw + i] * dot) / norms[i];
            }
        }
    }
    Ok(LossResult {
        value: value / pairs,
        grad_student: grad,
    })
}

struct Prototypes {
    /// class → (mean feature, pixel count)
    by_class: BTreeMap<u32, (Vec<f64>, usize)>,
}

fn prototypes(block: &[f64], c: usize, hw: usize, labels: &[u32]) -> Prototypes {
    let mut by_class: BTreeMap<u32, (Vec<f64>, usize)> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        if l == LabelMap::IGNORE {
            continue;
        }
        let entry = by_class.entry(l).or_insert_with(|| (vec![0.0; c], 0));
        for k in 0..c {
            entry.0[k] += block[k * hw + i];
        }
        entry.1 += 1;
    }
    for (sum, count) in by_class.values_mut() {
        sum.iter_mut().for_each(|v| *v /= *count as f64);
    }
    Prototypes { by_class }
}

fn pixel(block: &[f64], c: usize, hw: usize, i: usize) -> Vec<f64> {
    (0..c).map(|k| block[k * hw + i]).collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// Per-pixel cosine similarity to the pixel's class prototype, for every
/// labelled pixel in `(sample, position)` order. IGNORE pixels are skipped.
pub fn prototype_similarities(x: &Tensor4, labels: &LabelMap) -> Result<Vec<f64>> {
    check_labels(x, labels)?;
    let s = x.shape();
    let hw = s.hw();
    let mut out = Vec::new();
    for n in 0..s.n {
        let block = x.sample(n);
        let lab = labels.sample(n);
        let protos = prototypes(block, s.c, hw, lab);
        for (i, &l) in lab.iter().enumerate() {
            if l == LabelMap::IGNORE {
                continue;
            }
            out.push(cosine(&pixel(block, s.c, hw, i), &protos.by_class[&l].0));
        }
    }
    Ok(out)
}

fn check_labels(x: &Tensor4, labels: &LabelMap) -> Result<()> {
    let s = x.shape();
    if labels.dims() != (s.n, s.h, s.w) {
        return Err(Error::shape(format!(
            "labels {:?} do not match feature map {}",
            labels.dims(),
            s
        )));
    }
    Ok(())
}

/// Intra-class feature variation distillation: mean over labelled pixels of
/// `(vᵀ_i − vˢ_i)²` where `v_i` is the cosine between pixel `i` and the
/// mean feature of its class. Labels must already be at feature resolution.
pub fn ifvd(teacher: &Tensor4, student: &Tensor4, labels: &LabelMap) -> Result<LossResult> {
    super::check_spatial(teacher, student, "IFVD")?;
    let vt = prototype_similarities(teacher, labels)?;
    let vs = prototype_similarities(student, labels)?;
    let s = student.shape();
    let hw = s.hw();
    let mut grad = Tensor4::zeros(s);
    if vs.is_empty() {
        return Ok(LossResult {
            value: 0.0,
            grad_student: grad,
        });
    }
    let m = vs.len() as f64;
    let value = vt.iter().zip(&vs).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / m;
    let mut cursor = 0;
    for n in 0..s.n {
        let block = student.sample(n);
        let lab = labels.sample(n);
        let protos = prototypes(block, s.c, hw, lab);
        let mut d_proto: BTreeMap<u32, Vec<f64>> =
            protos.by_class.keys().map(|&k| (k, vec![0.0; s.c])).collect();
        let gb = grad.sample_mut(n);
        for (i, &l) in lab.iter().enumerate() {
            if l == LabelMap::IGNORE {
                continue;
            }
            let g = 2.0 * (vs[cursor] - vt[cursor]) / m;
            cursor += 1;
            let x = pixel(block, s.c, hw, i);
            let p = &protos.by_class[&l].0;
            let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let np = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nx == 0.0 || np == 0.0 {
                continue;
            }
            let cos = x.iter().zip(p).map(|(a, b)| a * b).sum::<f64>() / (nx * np);
            let dp = d_proto.get_mut(&l).unwrap();
            for k in 0..s.c {
                gb[k * hw + i] += g * (p[k] / (nx * np) - cos * x[k] / (nx * nx));
                dp[k] += g * (x[k] / (nx * np) - cos * p[k] / (np * np));
            }
        }
        // Each prototype is the mean of its class members.
        for (i, &l) in lab.iter().enumerate() {
            if l == LabelMap::IGNORE {
                continue;
            }
            let count = protos.by_class[&l].1 as f64;
            let dp = &d_proto[&l];
            for k in 0..s.c {
                gb[k * hw + i] += dp[k] / count;
            }
        }
    }
    Ok(LossResult {
        value,
        grad_student: grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::Shape4;

    #[test]
    fn local_map_constant_is_zero() {
        let x = Tensor4::full(Shape4::new(1, 3, 4, 4), 2.5);
        assert!(local_similarity_map(&x).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn local_map_hand_enumeration_2x2() {
        // Single channel [[0, 1], [3, 7]]: every pixel neighbours the other three.
        let x = Tensor4::from_vec(Shape4::new(1, 1, 2, 2), vec![0.0, 1.0, 3.0, 7.0]).unwrap();
        let m = local_similarity_map(&x);
        assert_eq!(m, vec![1.0 + 3.0 + 7.0, 1.0 + 2.0 + 6.0, 3.0 + 2.0 + 4.0, 7.0 + 6.0 + 4.0]);
        let t = Tensor4::zeros(x.shape());
        let r = local_similarity(&t, &x).unwrap();
        let expect = (11.0f64.powi(2) + 9.0f64.powi(2) + 9.0f64.powi(2) + 17.0f64.powi(2)) / 4.0;
        assert!((r.value - expect).abs() < 1e-12);
    }

    #[test]
    fn affinity_pixel_rescale_invariance() {
        let mut rng = Rng::new(6);
        let t = Tensor4::normal(Shape4::new(1, 3, 3, 3), &mut rng, 1.0);
        let mut s = t.clone();
        for c in 0..3 {
            s.plane_mut(0, c)[4] *= 7.0;
            s.plane_mut(0, c)[0] *= 0.2;
        }
        let r = pairwise_affinity(&t, &s).unwrap();
        assert!(r.value < 1e-28);
    }

    #[test]
    fn affinity_zero_pixel_convention() {
        let mut x = Tensor4::ones(Shape4::new(1, 2, 1, 2));
        x.plane_mut(0, 0)[1] = 0.0;
        x.plane_mut(0, 1)[1] = 0.0;
        let a = affinity_matrix(&x, 0);
        assert!((a[0] - 1.0).abs() < 1e-15);
        assert_eq!(&a[1..], &[0.0, 0.0, 0.0]);
        let t = Tensor4::ones(x.shape());
        let r = pairwise_affinity(&t, &x).unwrap();
        assert!(r.grad_student.all_finite());
        assert!((r.value - 3.0 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn ifvd_single_class_constant_features() {
        let x = Tensor4::full(Shape4::new(1, 3, 2, 2), 0.4);
        let labels = LabelMap::filled(1, 2, 2, 1);
        let v = prototype_similarities(&x, &labels).unwrap();
        assert!(v.iter().all(|&c| (c - 1.0).abs() < 1e-15));
        let mut rng = Rng::new(1);
        let t = Tensor4::normal(x.shape(), &mut rng, 1.0);
        // Teacher gets the same all-ones similarity only when it is constant.
        assert!(ifvd(&x, &x, &labels).unwrap().value == 0.0);
        assert!(ifvd(&t, &x, &labels).unwrap().value > 0.0);
    }

    #[test]
    fn ifvd_all_ignored_is_zero() {
        let mut rng = Rng::new(2);
        let t = Tensor4::normal(Shape4::new(1, 3, 2, 2), &mut rng, 1.0);
        let s = Tensor4::normal(Shape4::new(1, 3, 2, 2), &mut rng, 1.0);
        let labels = LabelMap::filled(1, 2, 2, LabelMap::IGNORE);
        let r = ifvd(&t, &s, &labels).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.grad_student.max_abs(), 0.0);
        let bad = LabelMap::filled(1, 3, 2, 0);
        assert!(matches!(ifvd(&t, &s, &bad), Err(Error::Shape(_))));
    }
}
