use cwkd_core::data::{generate, generate_with_noise, render, split, Dataset, BACKGROUND, NOISE_STD};
use cwkd_core::LabelMap;

#[test]
fn same_seed_same_scenes() {
    let a = generate(3, 6, 32, 32, 4).unwrap();
    let b = generate(3, 6, 32, 32, 4).unwrap();
    assert_eq!(a, b);
    let c = generate(4, 6, 32, 32, 4).unwrap();
    assert_ne!(a.images, c.images);
}

#[test]
fn prefix_is_stable() {
    // Scene i depends only on (seed, i).
    let long = generate(9, 10, 32, 32, 4).unwrap();
    let short = generate(9, 4, 32, 32, 4).unwrap();
    assert_eq!(long.slice(0, 4).unwrap(), short);
}

#[test]
fn labels_are_top_most_shape_at_pixel_centre() {
    let d = generate(11, 20, 32, 32, 4).unwrap();
    for (n, meta) in d.meta.iter().enumerate() {
        assert!((1..=4).contains(&meta.shapes.len()));
        for y in 0..32 {
            for x in 0..32 {
                let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
                let want = meta
                    .shapes
                    .iter()
                    .rev()
                    .find(|s| s.contains(cx, cy))
                    .map_or(BACKGROUND, |s| s.kind.class());
                assert_eq!(d.labels.get(n, y, x), want);
            }
        }
    }
}

#[test]
fn noise_changes_pixels_not_labels() {
    let noisy = generate_with_noise(5, 30, 32, 32, 4, true).unwrap();
    let clean = generate_with_noise(5, 30, 32, 32, 4, false).unwrap();
    assert_eq!(noisy.labels, clean.labels);
    assert_eq!(noisy.meta, clean.meta);
    let residuals: Vec<f64> = noisy
        .images
        .data()
        .iter()
        .zip(clean.images.data())
        .filter(|(a, b)| **a > 0.0 && **a < 1.0 && **b > 0.0 && **b < 1.0)
        .map(|(a, b)| a - b)
        .collect();
    let m = residuals.len() as f64;
    let mean = residuals.iter().sum::<f64>() / m;
    let std = (residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / m).sqrt();
    assert!(mean.abs() < 2e-3, "noise mean {mean}");
    assert!((std - NOISE_STD).abs() < 2e-3, "noise std {std}");
}

#[test]
fn render_is_pure() {
    let d = generate(2, 3, 32, 32, 4).unwrap();
    let again = render(&d.meta[1], 32, 32, true);
    assert_eq!(again.image, d.images.sample(1));
    assert_eq!(again.labels, d.labels.sample(1));
}

#[test]
fn clean_interior_colour_encodes_class() {
    // Snap every channel to the nearest palette level; the level indices
    // determine the class of any pixel well inside a single region.
    let d = generate_with_noise(21, 40, 32, 32, 4, false).unwrap();
    let level = |v: f64| {
        [0.15, 0.5, 0.85]
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - v).abs().total_cmp(&(b.1 - v).abs()))
            .unwrap()
            .0
    };
    let mut checked = 0;
    for (n, meta) in d.meta.iter().enumerate() {
        let owner = |y: usize, x: usize| {
            meta.shapes.iter().rposition(|s| s.contains(x as f64 + 0.5, y as f64 + 0.5))
        };
        for y in 2..30 {
            for x in 2..30 {
                let o = owner(y, x);
                if !(0..25).all(|k| owner(y + k / 5 - 2, x + k % 5 - 2) == o) {
                    continue;
                }
                let rgb: Vec<usize> = (0..3).map(|c| level(d.images.get(n, c, y, x))).collect();
                assert_eq!(((rgb[0] + rgb[1] + rgb[2]) % 4) as u32, d.labels.get(n, y, x), "scene {n} pixel ({y}, {x})");
                checked += 1;
            }
        }
    }
    assert!(checked > 10_000);
}

#[test]
fn class_balance_over_the_training_split() {
    let d = generate(0, 200, 32, 32, 4).unwrap();
    let hist = d.class_histogram();
    let total: usize = hist.iter().sum();
    assert_eq!(total, 200 * 32 * 32);
    assert!(hist[0] * 2 > total, "background should dominate: {hist:?}");
    for (k, &c) in hist.iter().enumerate().skip(1) {
        assert!(c * 25 > total, "class {k} too rare: {hist:?}");
    }
    assert!(d.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(d.labels.data().iter().all(|&l| l != LabelMap::IGNORE && l < 4));
}

#[test]
fn fewer_classes_use_fewer_shape_kinds() {
    let d = generate(1, 50, 16, 16, 2).unwrap();
    assert!(d.labels.data().iter().all(|&l| l < 2));
    assert!(d.class_histogram()[1] > 0);
}

#[test]
fn bad_parameters() {
    assert!(generate(0, 1, 32, 32, 1).is_err());
    assert!(generate(0, 1, 32, 32, 5).is_err());
    assert!(generate(0, 1, 8, 32, 4).is_err());
}

#[test]
fn split_and_roundtrip() {
    let d = generate(6, 10, 16, 16, 4).unwrap();
    let (train, val) = split(&d, (0.7, 0.3)).unwrap();
    assert_eq!((train.len(), val.len()), (7, 3));
    assert_eq!(val.meta[0], d.meta[7]);
    assert!(split(&d, (0.8, 0.3)).is_err());

    let dir = tempfile::tempdir().unwrap();
    d.save(dir.path(), Some(6)).unwrap();
    let back = Dataset::load(dir.path()).unwrap();
    assert_eq!(back, d);
}
