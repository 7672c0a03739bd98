//! Independent reference computations shared by the integration tests.
//! None of these go through the library's own arithmetic paths.

#![allow(dead_code)]

use cnnrec::GrayImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_image(w: usize, h: usize, scale: f64, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let px = (0..w * h).map(|_| scale * rng.random::<f64>()).collect();
    GrayImage::new(w, h, px).unwrap()
}

pub fn map_image(img: &GrayImage, f: impl Fn(f64) -> f64) -> GrayImage {
    GrayImage::new(img.width(), img.height(), img.pixels().iter().map(|&p| f(p)).collect()).unwrap()
}

fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

/// Integral of the piecewise-constant image over a real rectangle, by
/// visiting every pixel.
fn direct_area(img: &GrayImage, x0: f64, y0: f64, x1: f64, y1: f64) -> f64 {
    let mut total = 0.0;
    for py in 0..img.height() {
        let wy = overlap(y0, y1, py as f64, py as f64 + 1.0);
        if wy == 0.0 {
            continue;
        }
        for px in 0..img.width() {
            let wx = overlap(x0, x1, px as f64, px as f64 + 1.0);
            if wx > 0.0 {
                total += wx * wy * img.get(px, py);
            }
        }
    }
    total
}

/// Whole-image descriptor computed without a summed-area table: centred
/// square of side min(w, h), 4×4 cells, 5×5 sample points per cell, Haar
/// wavelet of side `max(2, 2·round(cell/2))` kept inside the image.
pub fn direct_descriptor(img: &GrayImage) -> Vec<f64> {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let side = w.min(h);
    let cell = side / 4.0;
    let half = (2.0 * (cell / 2.0).round()).max(2.0) / 2.0;
    let (ox, oy) = ((w - side) / 2.0, (h - side) / 2.0);
    let mut raw = vec![0.0; 64];
    for cy in 0..4 {
        for cx in 0..4 {
            for ky in 0..5 {
                for kx in 0..5 {
                    let x = (ox + cell * (cx as f64 + (kx as f64 + 0.5) / 5.0)).clamp(half, w - half);
                    let y = (oy + cell * (cy as f64 + (ky as f64 + 0.5) / 5.0)).clamp(half, h - half);
                    let right = direct_area(img, x, y - half, x + half, y + half);
                    let left = direct_area(img, x - half, y - half, x, y + half);
                    let below = direct_area(img, x - half, y, x + half, y + half);
                    let above = direct_area(img, x - half, y - half, x + half, y);
                    let (dx, dy) = (right - left, below - above);
                    let b = (cy * 4 + cx) * 4;
                    raw[b] += dx;
                    raw[b + 1] += dy;
                    raw[b + 2] += dx.abs();
                    raw[b + 3] += dy.abs();
                }
            }
        }
    }
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm * norm < 1e-12 {
        return vec![0.0; 64];
    }
    raw.iter().map(|v| v / norm).collect()
}

/// Layer-by-layer MAC count of a generated network, written out from the
/// generation rules: 3×3 same convolutions, ceil-halving down-sampling,
/// GAP + FC head.
pub fn loop_macs(s: usize, q: &[usize], in_channels: usize, strided: bool, classes: usize, head: bool) -> u64 {
    let mut total: u64 = 0;
    let mut side: u64 = 52;
    let mut ch = in_channels as u64;
    for (i, &convs) in q.iter().enumerate() {
        let width = (s as u64) * 2u64.pow(i as u32);
        for _ in 0..convs {
            total += side * side * width * ch * 9;
            ch = width;
        }
        let down_side = (side + 1) / 2;
        if strided {
            total += down_side * down_side * (2 * ch) * ch * 9;
            ch *= 2;
        }
        side = down_side;
    }
    if head {
        total += ch * classes as u64;
    }
    total
}

/// Least squares for `y ≈ a0 + a1·x` by repeated grid refinement, without
/// normal equations.
pub fn grid_least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let sse = |a0: f64, a1: f64| -> f64 { xs.iter().zip(ys).map(|(x, y)| (a0 + a1 * x - y).powi(2)).sum() };
    let (mut c0, mut c1) = (0.0, 0.0);
    let (mut r0, mut r1) = (50.0, 10.0);
    while r0 > 1e-7 || r1 > 1e-7 {
        let mut best = (f64::INFINITY, c0, c1);
        for i in -100..=100 {
            for j in -100..=100 {
                let a0 = c0 + r0 * i as f64 / 100.0;
                let a1 = c1 + r1 * j as f64 / 100.0;
                let e = sse(a0, a1);
                if e < best.0 {
                    best = (e, a0, a1);
                }
            }
        }
        c0 = best.1;
        c1 = best.2;
        r0 /= 10.0;
        r1 /= 10.0;
    }
    (c0, c1)
}

/// Spearman rank correlation without tie handling (inputs are distinct).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        for (rank, i) in idx.into_iter().enumerate() {
            r[i] = rank as f64;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

/// Random feature-space task: `classes` Gaussian clusters in 64-d.
pub fn random_feature_task(classes: usize, samples: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spread = 0.2 + rng.random::<f64>();
    let means: Vec<Vec<f64>> = (0..classes).map(|_| (0..64).map(|_| rng.random::<f64>()).collect()).collect();
    let mut labels: Vec<usize> = (0..classes).collect();
    labels.extend((classes..samples).map(|_| rng.random_range(0..classes)));
    let vectors = labels
        .iter()
        .map(|&k| means[k].iter().map(|m| m + spread * (rng.random::<f64>() - 0.5)).collect())
        .collect();
    (vectors, labels)
}

/// Index of the nearest centroid by squared distance, lowest id on ties.
pub fn nearest_centroid(v: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, c) in centroids.iter().enumerate() {
        let d: f64 = v.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

/// Class means computed per class from scratch.
pub fn class_means(vectors: &[Vec<f64>], labels: &[usize], classes: usize) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|k| {
            let members: Vec<&Vec<f64>> = vectors.iter().zip(labels).filter(|(_, &l)| l == k).map(|(v, _)| v).collect();
            (0..vectors[0].len())
                .map(|d| members.iter().map(|v| v[d]).sum::<f64>() / members.len() as f64)
                .collect()
        })
        .collect()
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_cnnrec")
}
