use std::collections::HashSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uvnet_core::postprocess::{
    connected_components, distance_transform, extract_detections, median_filter, otsu_bin,
    otsu_threshold, watershed_split, Connectivity,
};
use uvnet_core::{BinaryMask, Label};

/// Exhaustive sweep over every bin boundary, with class statistics computed
/// directly from the pixel list (bin-center levels).
fn otsu_sweep(values: &[f64], bins: usize) -> Option<usize> {
    let level = |v: f64| (otsu_bin(v, bins) as f64 + 0.5) / bins as f64;
    let levels: Vec<(usize, f64)> = values
        .iter()
        .map(|&v| (otsu_bin(v, bins), level(v)))
        .collect();
    let n = values.len() as f64;
    let mut scores = Vec::new();
    for t in 0..bins {
        let lo: Vec<f64> = levels.iter().filter(|p| p.0 <= t).map(|p| p.1).collect();
        let hi: Vec<f64> = levels.iter().filter(|p| p.0 > t).map(|p| p.1).collect();
        if lo.is_empty() || hi.is_empty() {
            continue;
        }
        let m0 = lo.iter().sum::<f64>() / lo.len() as f64;
        let m1 = hi.iter().sum::<f64>() / hi.len() as f64;
        let var = (lo.len() as f64 / n) * (hi.len() as f64 / n) * (m0 - m1).powi(2);
        scores.push((t, var));
    }
    let best = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    // first boundary attaining the maximum (up to summation-order rounding)
    scores
        .iter()
        .find(|s| s.1 >= best * (1.0 - 1e-12))
        .map(|s| s.0)
}

fn random_histogram_image(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rng.gen_range(64..1024);
    let modes = rng.gen_range(1..=3);
    let centers: Vec<f64> = (0..modes).map(|_| rng.gen_range(0.0..1.0)).collect();
    let spread = rng.gen_range(0.01..0.2);
    (0..n)
        .map(|_| {
            let c = centers[rng.gen_range(0..modes)];
            (c + rng.gen_range(-spread..spread)).clamp(0.0, 1.0)
        })
        .collect()
}

#[test]
fn otsu_matches_exhaustive_sweep_on_100_histograms() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut compared = 0;
    for case in 0..100 {
        let vals = random_histogram_image(&mut rng);
        let bins = [16, 64, 256][case % 3];
        let r = otsu_threshold(&vals, 1, vals.len(), bins).unwrap();
        match otsu_sweep(&vals, bins) {
            Some(t) => {
                assert!(!r.degenerate);
                assert_eq!(r.threshold, (t + 1) as f64 / bins as f64, "case {case}");
                for (i, &v) in vals.iter().enumerate() {
                    assert_eq!(r.mask.bits[i], otsu_bin(v, bins) > t);
                }
                compared += 1;
            }
            None => assert!(r.degenerate && r.mask.count() == 0),
        }
    }
    assert!(compared >= 95);
}

#[test]
fn otsu_bimodal_marks_the_bright_class() {
    let vals: Vec<f64> = (0..100).map(|i| if i < 90 { 0.1 } else { 0.9 }).collect();
    let r = otsu_threshold(&vals, 10, 10, 256).unwrap();
    assert!(r.threshold > 0.1 && r.threshold < 0.9);
    assert_eq!(r.mask.count(), 10);
    assert!((90..100).all(|i| r.mask.bits[i]));
}

#[test]
fn otsu_constant_image_is_degenerate() {
    let r = otsu_threshold(&[0.4f32; 36], 6, 6, 256).unwrap();
    assert!(r.degenerate);
    assert_eq!(r.mask.count(), 0);
}

fn disk_mask(h: usize, w: usize, disks: &[(f64, f64, f64)]) -> BinaryMask {
    BinaryMask::from_fn(h, w, |y, x| {
        disks
            .iter()
            .any(|&(cx, cy, r)| (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r)
    })
}

fn region_centroid(px: &[(usize, usize)]) -> (f64, f64) {
    let n = px.len() as f64;
    (
        px.iter().map(|p| p.1 as f64).sum::<f64>() / n,
        px.iter().map(|p| p.0 as f64).sum::<f64>() / n,
    )
}

#[test]
fn overlapping_disks_split_into_two() {
    let centers = [(20.0, 32.0), (44.0, 32.0)];
    let mask = disk_mask(64, 64, &[(20.0, 32.0, 14.0), (44.0, 32.0, 14.0)]);
    assert_eq!(connected_components(&mask, Connectivity::Four).count, 1);
    let labels = watershed_split(&mask, 8.0);
    assert_eq!(labels.count, 2);
    let mut got: Vec<(f64, f64)> = (1..=2)
        .map(|id| region_centroid(&labels.region_pixels(id)))
        .collect();
    got.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (g, c) in got.iter().zip(&centers) {
        let d = ((g.0 - c.0).powi(2) + (g.1 - c.1).powi(2)).sqrt();
        assert!(d <= 3.0, "centroid {g:?} vs {c:?}: {d:.2} px");
    }
}

#[test]
fn single_disk_is_one_region() {
    for r in [4.0, 9.0, 14.0, 20.0] {
        let mask = disk_mask(64, 64, &[(31.0, 33.0, r)]);
        assert_eq!(watershed_split(&mask, 8.0).count, 1, "radius {r}");
    }
}

#[test]
fn empty_mask_has_no_regions() {
    let labels = watershed_split(&BinaryMask::new(8, 8), 4.0);
    assert_eq!(labels.count, 0);
    assert!(labels.labels.iter().all(|&l| l == 0));
}

fn random_blobs(rng: &mut ChaCha8Rng) -> BinaryMask {
    let disks: Vec<(f64, f64, f64)> = (0..rng.gen_range(0..6))
        .map(|_| {
            (
                rng.gen_range(0.0..48.0),
                rng.gen_range(0.0..48.0),
                rng.gen_range(2.0..10.0),
            )
        })
        .collect();
    disk_mask(48, 48, &disks)
}

#[test]
fn watershed_is_a_partition_of_the_foreground() {
    for seed in 0..30 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask = random_blobs(&mut rng);
        let labels = watershed_split(&mask, rng.gen_range(2.0..10.0));
        for (i, &l) in labels.labels.iter().enumerate() {
            assert_eq!(l != 0, mask.bits[i], "seed {seed} pixel {i}");
            assert!(l <= labels.count);
        }
        let used: HashSet<u32> = labels.labels.iter().copied().filter(|&l| l != 0).collect();
        assert_eq!(used.len() as u32, labels.count);
        let cc = connected_components(&mask, Connectivity::Four).count;
        assert!(
            labels.count >= cc,
            "seed {seed}: {} regions < {cc} components",
            labels.count
        );
    }
}

#[test]
fn distance_transform_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mask = random_blobs(&mut rng);
    let (h, w) = (mask.height as isize, mask.width as isize);
    let dt = distance_transform(&mask);
    for y in 0..h {
        for x in 0..w {
            let mut best = f64::INFINITY;
            // the frame just outside the image counts as background
            for by in -1..=h {
                for bx in -1..=w {
                    let inside = by >= 0 && by < h && bx >= 0 && bx < w;
                    if inside && mask.get(by as usize, bx as usize) {
                        continue;
                    }
                    best = best.min((((y - by).pow(2) + (x - bx).pow(2)) as f64).sqrt());
                }
            }
            let want = if mask.get(y as usize, x as usize) {
                best
            } else {
                0.0
            };
            assert!((dt[(y * w + x) as usize] - want).abs() < 1e-9);
        }
    }
}

#[test]
fn median_removes_isolated_noise_without_adding_components() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mask = random_blobs(&mut rng);
        for _ in 0..25 {
            let (y, x) = (rng.gen_range(0..48), rng.gen_range(0..48));
            mask.set(y, x, true);
        }
        let before = connected_components(&mask, Connectivity::Eight).count;
        let after =
            connected_components(&median_filter(&mask, 3).unwrap(), Connectivity::Eight).count;
        assert!(after <= before, "seed {seed}: {before} -> {after}");
    }
}

#[test]
fn median_rejects_even_window() {
    assert!(median_filter(&BinaryMask::new(4, 4), 4).is_err());
}

#[test]
fn l_shape_detection_matches_pixel_mean() {
    let px: Vec<(usize, usize)> = (2..9)
        .map(|y| (y, 3))
        .chain((4..8).map(|x| (8, x)))
        .collect();
    let mask = BinaryMask::from_fn(12, 12, |y, x| px.contains(&(y, x)));
    let labels = connected_components(&mask, Connectivity::Four);
    let channel: Vec<f64> = (0..144).map(|i| i as f64 / 144.0).collect();
    let dets = extract_detections(&labels, &channel, Label::Mitosis, 1).unwrap();
    assert_eq!(dets.len(), 1);
    let (cx, cy) = region_centroid(&px);
    assert!((dets[0].x - cx).abs() < 1e-12 && (dets[0].y - cy).abs() < 1e-12);
    assert_eq!(dets[0].area, px.len());
    let peak = px
        .iter()
        .map(|&(y, x)| channel[y * 12 + x])
        .fold(0.0, f64::max);
    assert_eq!(dets[0].peak_value, peak);
}

proptest! {
    #[test]
    fn median_of_uniform_mask_is_identity(h in 1usize..12, w in 1usize..12, v: bool) {
        let mask = BinaryMask::from_fn(h, w, |_, _| v);
        prop_assert_eq!(median_filter(&mask, 3).unwrap(), mask);
    }

    #[test]
    fn otsu_mask_is_value_above_threshold(vals in prop::collection::vec(0.0f64..=1.0, 4..200)) {
        let r = otsu_threshold(&vals, 1, vals.len(), 256).unwrap();
        if !r.degenerate {
            for (i, &v) in vals.iter().enumerate() {
                prop_assert_eq!(r.mask.bits[i], otsu_bin(v, 256) > otsu_bin(r.threshold, 256));
            }
        }
    }
}
