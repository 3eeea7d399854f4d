//! Synthetic segmentation scenes.
//!
//! Each scene is a background with 1–4 overlapping shapes painted on top.
//! Class 0 is background; classes 1, 2, 3 are disk, rectangle and triangle.
//! Colours come from a 27-entry palette (every channel at 0.15, 0.5 or
//! 0.85, jittered by ±0.04) in which entry `(r, g, b)` belongs to class
//! `(r + g + b) mod 4`, so a pixel's colour identifies its class while
//! neighbouring classes share most of their channel values. Shapes carry a
//! faint stripe or checker texture, the background a slow colour drift.
//! Shape edges are anti-aliased with 4×4 supersampling and every image
//! channel receives Gaussian noise (σ = 0.05) before clamping to `[0, 1]`.
//!
//! A pixel's label is the top-most shape containing the pixel centre, so
//! labels are the exact analytic masks and do not depend on the noise.
//! Every scene is drawn from its own seed, derived from the dataset seed and
//! the scene index.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dump;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};
use crate::tensor::{LabelMap, Shape4, Tensor4};

pub const MAX_CLASSES: usize = 4;
pub const BACKGROUND: u32 = 0;
pub const NOISE_STD: f64 = 0.05;
const SUPERSAMPLE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Disk,
    Rectangle,
    Triangle,
}

impl ShapeKind {
    const ALL: [ShapeKind; 3] = [ShapeKind::Disk, ShapeKind::Rectangle, ShapeKind::Triangle];

    pub fn class(self) -> u32 {
        match self {
            ShapeKind::Disk => 1,
            ShapeKind::Rectangle => 2,
            ShapeKind::Triangle => 3,
        }
    }
}

/// One painted shape, in pixel coordinates (pixel `(y, x)` covers
/// `[x, x+1) × [y, y+1)`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub cx: f64,
    pub cy: f64,
    /// Disk radius, rectangle half-extents, or triangle circumradius.
    pub size: [f64; 2],
    /// Triangle rotation in radians.
    pub angle: f64,
    pub color: [f64; 3],
    /// Texture contrast and phase.
    pub contrast: f64,
    pub phase: f64,
    pub period: f64,
}

impl ShapeSpec {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        match self.kind {
            ShapeKind::Disk => dx * dx + dy * dy <= self.size[0] * self.size[0],
            ShapeKind::Rectangle => dx.abs() <= self.size[0] && dy.abs() <= self.size[1],
            ShapeKind::Triangle => {
                let v = self.triangle_vertices();
                let edge = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0);
                let e = [edge(v[0], v[1]), edge(v[1], v[2]), edge(v[2], v[0])];
                e.iter().all(|&s| s >= 0.0) || e.iter().all(|&s| s <= 0.0)
            }
        }
    }

    fn triangle_vertices(&self) -> [(f64, f64); 3] {
        let r = self.size[0];
        let mut v = [(0.0, 0.0); 3];
        for (k, p) in v.iter_mut().enumerate() {
            let a = self.angle + k as f64 * std::f64::consts::TAU / 3.0;
            *p = (self.cx + r * a.cos(), self.cy + r * a.sin());
        }
        v
    }

    /// Class texture in `[-1, 1]` at a continuous position.
    fn texture(&self, x: f64, y: f64) -> f64 {
        let w = std::f64::consts::TAU / self.period;
        match self.kind {
            ShapeKind::Disk => (w * y + self.phase).sin(),
            ShapeKind::Rectangle => (w * x + self.phase).sin(),
            ShapeKind::Triangle => (w * x + self.phase).sin() * (w * y + self.phase).sin(),
        }
    }

    fn shade(&self, x: f64, y: f64) -> [f64; 3] {
        let t = self.contrast * self.texture(x, y);
        [self.color[0] + t, self.color[1] + t, self.color[2] + t]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub color: [f64; 3],
    /// Slow colour drift: amplitude, spatial frequency (radians/pixel),
    /// direction and phase.
    pub drift: f64,
    pub freq: f64,
    pub angle: f64,
    pub phase: f64,
}

impl Background {
    fn shade(&self, x: f64, y: f64) -> [f64; 3] {
        let u = x * self.angle.cos() + y * self.angle.sin();
        let d = self.drift * (self.freq * u + self.phase).sin();
        [self.color[0] + d, self.color[1] - d, self.color[2] + 0.5 * d]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub seed: u64,
    pub background: Background,
    /// In painting order; later shapes cover earlier ones.
    pub shapes: Vec<ShapeSpec>,
}

/// One rendered scene: `(3, h, w)` image in `[0, 1]` and its labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub image: Vec<f64>,
    pub labels: Vec<u32>,
    pub meta: SceneMeta,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor4,
    pub labels: LabelMap,
    pub meta: Vec<SceneMeta>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn height(&self) -> usize {
        self.images.shape().h
    }

    pub fn width(&self) -> usize {
        self.images.shape().w
    }

    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor4, LabelMap)> {
        Ok((self.images.select(indices)?, self.labels.select(indices)?))
    }

    /// Contiguous subset `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        let idx: Vec<usize> = (start..end).collect();
        let (images, labels) = self.batch(&idx)?;
        Ok(Self {
            images,
            labels,
            meta: self.meta[start..end].to_vec(),
            classes: self.classes,
        })
    }

    /// Pixel count per class, IGNORE excluded.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for &l in self.labels.data() {
            if l != LabelMap::IGNORE {
                h[l as usize] += 1;
            }
        }
        h
    }
}

fn check_params(h: usize, w: usize, classes: usize) -> Result<()> {
    if classes < 2 {
        return Err(Error::Parameter(format!("need at least 2 classes, got {classes}")));
    }
    if classes > MAX_CLASSES {
        return Err(Error::Parameter(format!(
            "only {MAX_CLASSES} semantic classes are defined, got {classes}"
        )));
    }
    if h < 16 || w < 16 {
        return Err(Error::Parameter(format!("scenes must be at least 16×16, got {h}×{w}")));
    }
    Ok(())
}

/// Intensity levels of the colour grid.
const LEVELS: [f64; 3] = [0.15, 0.5, 0.85];
const JITTER: f64 = 0.04;

/// Class owning grid colour `(r, g, b)` (level indices).
fn palette_class(r: usize, g: usize, b: usize) -> usize {
    (r + g + b) % 4
}

/// A jittered grid colour owned by `class`.
fn palette_color(rng: &mut Rng, class: usize) -> [f64; 3] {
    let owned: Vec<[usize; 3]> = (0..27)
        .map(|i| [i / 9, (i / 3) % 3, i % 3])
        .filter(|&[r, g, b]| palette_class(r, g, b) == class)
        .collect();
    let [r, g, b] = owned[rng.below(owned.len())];
    [
        LEVELS[r] + rng.uniform_range(-JITTER, JITTER),
        LEVELS[g] + rng.uniform_range(-JITTER, JITTER),
        LEVELS[b] + rng.uniform_range(-JITTER, JITTER),
    ]
}

fn sample_scene(seed: u64, h: usize, w: usize, classes: usize) -> SceneMeta {
    let mut rng = Rng::new(seed);
    let scale = h.min(w) as f64 / 32.0;
    let background = Background {
        color: palette_color(&mut rng, BACKGROUND as usize),
        drift: rng.uniform_range(0.02, 0.05),
        freq: rng.uniform_range(0.05, 0.2) / scale,
        angle: rng.uniform_range(0.0, std::f64::consts::TAU),
        phase: rng.uniform_range(0.0, std::f64::consts::TAU),
    };
    let kinds = &ShapeKind::ALL[..classes - 1];
    let count = 1 + rng.below(4);
    let shapes = (0..count)
        .map(|_| {
            let kind = kinds[rng.below(kinds.len())];
            let size = match kind {
                ShapeKind::Disk => {
                    let r = rng.uniform_range(4.0, 9.0) * scale;
                    [r, r]
                }
                ShapeKind::Rectangle => [rng.uniform_range(3.0, 8.0) * scale, rng.uniform_range(3.0, 8.0) * scale],
                ShapeKind::Triangle => {
                    let r = rng.uniform_range(5.0, 11.0) * scale;
                    [r, r]
                }
            };
            ShapeSpec {
                kind,
                cx: rng.uniform_range(0.15, 0.85) * w as f64,
                cy: rng.uniform_range(0.15, 0.85) * h as f64,
                size,
                angle: rng.uniform_range(0.0, std::f64::consts::TAU),
                color: palette_color(&mut rng, kind.class() as usize),
                contrast: rng.uniform_range(0.02, 0.05),
                phase: rng.uniform_range(0.0, std::f64::consts::TAU),
                period: rng.uniform_range(3.0, 5.0),
            }
        })
        .collect();
    SceneMeta {
        seed,
        background,
        shapes,
    }
}

/// Render a scene; `noise` toggles the per-pixel Gaussian noise.
pub fn render(meta: &SceneMeta, h: usize, w: usize, noise: bool) -> SyntheticScene {
    let hw = h * w;
    let mut image = vec![0.0; 3 * hw];
    let mut labels = vec![BACKGROUND; hw];
    let ss = SUPERSAMPLE as f64;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mut acc = [0.0; 3];
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let px = x as f64 + (sx as f64 + 0.5) / ss;
                    let py = y as f64 + (sy as f64 + 0.5) / ss;
                    let col = meta
                        .shapes
                        .iter()
                        .rev()
                        .find(|s| s.contains(px, py))
                        .map(|s| s.shade(px, py))
                        .unwrap_or_else(|| meta.background.shade(px, py));
                    for c in 0..3 {
                        acc[c] += col[c];
                    }
                }
            }
            for c in 0..3 {
                image[c * hw + i] = acc[c] / (ss * ss);
            }
            let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
            if let Some(s) = meta.shapes.iter().rev().find(|s| s.contains(cx, cy)) {
                labels[i] = s.kind.class();
            }
        }
    }
    let mut rng = Rng::with_stream(meta.seed, 2);
    for v in image.iter_mut() {
        if noise {
            *v += NOISE_STD * rng.normal();
        }
        *v = v.clamp(0.0, 1.0);
    }
    SyntheticScene {
        image,
        labels,
        meta: meta.clone(),
    }
}

pub fn generate(seed: u64, count: usize, h: usize, w: usize, classes: usize) -> Result<Dataset> {
    generate_with_noise(seed, count, h, w, classes, true)
}

/// As [`generate`], optionally without image noise. Labels are identical
/// either way.
pub fn generate_with_noise(seed: u64, count: usize, h: usize, w: usize, classes: usize, noise: bool) -> Result<Dataset> {
    check_params(h, w, classes)?;
    let mut images = Vec::with_capacity(count * 3 * h * w);
    let mut labels = Vec::with_capacity(count * h * w);
    let mut meta = Vec::with_capacity(count);
    for i in 0..count {
        let m = sample_scene(derive_seed(seed, i as u64), h, w, classes);
        let scene = render(&m, h, w, noise);
        images.extend_from_slice(&scene.image);
        labels.extend_from_slice(&scene.labels);
        meta.push(scene.meta);
    }
    Ok(Dataset {
        images: Tensor4::from_vec(Shape4::new(count, 3, h, w), images)?,
        labels: LabelMap::new(count, h, w, labels)?,
        meta,
        classes,
    })
}

/// Contiguous split: the first `round(f_train·N)` scenes train, the next
/// `round(f_val·N)` (capped by what is left) validate.
pub fn split(data: &Dataset, fractions: (f64, f64)) -> Result<(Dataset, Dataset)> {
    let (ft, fv) = fractions;
    if !(ft >= 0.0 && fv >= 0.0 && ft + fv <= 1.0 + 1e-12) {
        return Err(Error::Parameter(format!("bad split fractions {fractions:?}")));
    }
    let n = data.len();
    let n_train = ((ft * n as f64).round() as usize).min(n);
    let n_val = ((fv * n as f64).round() as usize).min(n - n_train);
    Ok((data.slice(0, n_train)?, data.slice(n_train, n_train + n_val)?))
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetIndex {
    format: String,
    seed: Option<u64>,
    count: usize,
    height: usize,
    width: usize,
    classes: usize,
    images: String,
    labels: String,
    scenes: Vec<SceneMeta>,
}

pub const INDEX_FORMAT: &str = "cwkd-dataset/1";

impl Dataset {
    /// `images.cwt` `(N, 3, h, w)`, `labels.cwt` `(N, 1, h, w)` with IGNORE
    /// written as -1, and `index.json`.
    pub fn save(&self, dir: &Path, seed: Option<u64>) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        dump::write(&dir.join("images.cwt"), &self.images)?;
        let (n, h, w) = self.labels.dims();
        let lab = Tensor4::from_vec(
            Shape4::new(n, 1, h, w),
            self.labels
                .data()
                .iter()
                .map(|&l| if l == LabelMap::IGNORE { -1.0 } else { l as f64 })
                .collect(),
        )?;
        dump::write(&dir.join("labels.cwt"), &lab)?;
        let index = DatasetIndex {
            format: INDEX_FORMAT.into(),
            seed,
            count: n,
            height: h,
            width: w,
            classes: self.classes,
            images: "images.cwt".into(),
            labels: "labels.cwt".into(),
            scenes: self.meta.clone(),
        };
        let path = dir.join("index.json");
        fs::write(&path, serde_json::to_string_pretty(&index)? + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("index.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let index: DatasetIndex = serde_json::from_str(&text)?;
        if index.format != INDEX_FORMAT {
            return Err(Error::Format {
                path,
                detail: format!("unknown format {:?}", index.format),
            });
        }
        let images = dump::read(&dir.join(&index.images))?;
        let lab = dump::read(&dir.join(&index.labels))?;
        let s = lab.shape();
        let labels = LabelMap::new(
            s.n,
            s.h,
            s.w,
            lab.data()
                .iter()
                .map(|&v| if v < 0.0 { LabelMap::IGNORE } else { v as u32 })
                .collect(),
        )?;
        labels.validate(index.classes)?;
        if images.shape() != Shape4::new(index.count, 3, index.height, index.width) || s.n != index.count {
            return Err(Error::Format {
                path,
                detail: "tensor shapes disagree with the index".into(),
            });
        }
        Ok(Self {
            images,
            labels,
            meta: index.scenes,
            classes: index.classes,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let a = generate(0, 5, 16, 16, 4).unwrap();
        let b = generate(0, 5, 16, 16, 4).unwrap();
        assert_eq!(a, b);
        let c = generate(1, 5, 16, 16, 4).unwrap();
        assert_ne!(a.images, c.images);
    }

    #[test]
    fn empty_and_bad_params() {
        assert!(generate(0, 0, 16, 16, 4).unwrap().is_empty());
        assert!(matches!(generate(0, 1, 16, 16, 5), Err(Error::Parameter(_))));
        assert!(matches!(generate(0, 1, 16, 16, 1), Err(Error::Parameter(_))));
        assert!(matches!(generate(0, 1, 15, 16, 4), Err(Error::Parameter(_))));
    }

    #[test]
    fn images_in_unit_range_and_labels_valid() {
        let d = generate(3, 20, 32, 32, 4).unwrap();
        assert!(d.images.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(d.labels.validate(4).is_ok());
        assert!(d.labels.data().iter().all(|&l| l != LabelMap::IGNORE));
        for m in &d.meta {
            assert!((1..=4).contains(&m.shapes.len()));
        }
    }

    #[test]
    fn fewer_classes_use_fewer_shapes() {
        let d = generate(3, 30, 16, 16, 2).unwrap();
        assert!(d.labels.data().iter().all(|&l| l < 2));
    }

    #[test]
    fn split_fractions() {
        let d = generate(0, 10, 16, 16, 4).unwrap();
        let (tr, va) = split(&d, (1.0, 0.0)).unwrap();
        assert_eq!((tr.len(), va.len()), (10, 0));
        let (tr, va) = split(&d, (0.5, 0.5)).unwrap();
        assert_eq!((tr.len(), va.len()), (5, 5));
        assert_eq!(tr.meta[4], d.meta[4]);
        assert_eq!(va.meta[0], d.meta[5]);
        assert!(tr.meta.iter().all(|m| !va.meta.contains(m)));
        assert!(split(&d, (0.8, 0.8)).is_err());
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let d = generate(2, 3, 16, 16, 4).unwrap();
        d.save(dir.path(), Some(2)).unwrap();
        assert_eq!(Dataset::load(dir.path()).unwrap(), d);
    }
}
