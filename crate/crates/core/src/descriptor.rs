//! Whole-image SURF-style descriptor.
//!
//! One upright keypoint covers the centred square of side `min(width, height)`.
//! The square is split into a 4×4 grid of cells; each cell accumulates Haar
//! responses on a 5×5 lattice of sample points and contributes
//! `(Σdx, Σdy, Σ|dx|, Σ|dy|)`. Responses are unweighted (no Gaussian).
//!
//! Box sums are taken over real-valued rectangles. The integral of a
//! piecewise-constant image is bilinear inside every pixel, so reading the
//! summed-area table with bilinear interpolation gives exact area-weighted
//! sums and keeps the sampling geometry symmetric for any image size.

use std::io::Write;

use thiserror::Error;

use crate::ingest::GrayImage;

pub const GRID: usize = 4;
pub const LATTICE: usize = 5;
pub const DESCRIPTOR_LEN: usize = GRID * GRID * 4;
pub const MIN_DESCRIPTOR_SIDE: usize = 8;
/// Below this squared norm the descriptor is returned as all zeros.
pub const ZERO_ENERGY: f64 = 1e-12;
/// Name recorded in reports.
pub const DESCRIPTOR_VARIANT: &str = "surf64-global-upright-unweighted";

#[derive(Debug, Error, PartialEq)]
pub enum DescriptorError {
    #[error("image {width}x{height} is too small for the descriptor (need at least {min}x{min})")]
    ImageTooSmall {
        width: usize,
        height: usize,
        min: usize,
    },
}

/// Summed-area table with one extra leading row and column of zeros.
#[derive(Debug, Clone)]
pub struct IntegralImage {
    width: usize,
    height: usize,
    table: Vec<f64>,
}

impl IntegralImage {
    pub fn new(image: &GrayImage) -> Self {
        let (w, h) = (image.width(), image.height());
        let stride = w + 1;
        let mut table = vec![0.0; stride * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += image.get(x, y);
                table[(y + 1) * stride + x + 1] = table[y * stride + x + 1] + row;
            }
        }
        Self {
            width: w,
            height: h,
            table,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Sum of pixels with column < `x` and row < `y`.
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.table[y * (self.width + 1) + x]
    }

    /// Sum over pixel columns `x0..x1` and rows `y0..y1`.
    pub fn box_sum(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        self.at(x1, y1) - self.at(x0, y1) - self.at(x1, y0) + self.at(x0, y0)
    }

    /// Integral of the image over `[0, x) × [0, y)` for real coordinates,
    /// clamped to the image.
    fn cumulative(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, self.width as f64);
        let y = y.clamp(0.0, self.height as f64);
        let i = (x.floor() as usize).min(self.width - 1);
        let j = (y.floor() as usize).min(self.height - 1);
        let fx = x - i as f64;
        let fy = y - j as f64;
        let f00 = self.at(i, j);
        let f10 = self.at(i + 1, j);
        let f01 = self.at(i, j + 1);
        let f11 = self.at(i + 1, j + 1);
        f00 + fx * (f10 - f00) + fy * (f01 - f00) + fx * fy * (f11 - f10 - f01 + f00)
    }

    /// Area-weighted sum over the real rectangle `[x0, x1) × [y0, y1)`.
    pub fn area_sum(&self, x0: f64, y0: f64, x1: f64, y1: f64) -> f64 {
        self.cumulative(x1, y1) - self.cumulative(x0, y1) - self.cumulative(x1, y0)
            + self.cumulative(x0, y0)
    }
}

/// 64-component descriptor of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    values: [f64; DESCRIPTOR_LEN],
    source_id: usize,
}

impl FeatureVector {
    pub fn values(&self) -> &[f64; DESCRIPTOR_LEN] {
        &self.values
    }

    pub fn source_id(&self) -> usize {
        self.source_id
    }

    pub fn with_source_id(mut self, id: usize) -> Self {
        self.source_id = id;
        self
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// Sampling geometry shared by every cell of one image.
#[derive(Debug, Clone, Copy)]
struct Keypoint {
    origin_x: f64,
    origin_y: f64,
    cell: f64,
    half_wavelet: f64,
    width: f64,
    height: f64,
}

impl Keypoint {
    fn for_image(width: usize, height: usize) -> Self {
        let side = width.min(height) as f64;
        let cell = side / GRID as f64;
        let wavelet = (2.0 * (cell / 2.0).round()).max(2.0);
        Self {
            origin_x: (width as f64 - side) / 2.0,
            origin_y: (height as f64 - side) / 2.0,
            cell,
            half_wavelet: wavelet / 2.0,
            width: width as f64,
            height: height as f64,
        }
    }

    /// Centre of lattice point `k` (0..LATTICE) of cell `c` along one axis,
    /// pulled inward so the wavelet stays inside the image.
    fn sample(&self, origin: f64, extent: f64, c: usize, k: usize) -> f64 {
        let pos = origin + self.cell * (c as f64 + (k as f64 + 0.5) / LATTICE as f64);
        pos.clamp(self.half_wavelet, extent - self.half_wavelet)
    }
}

/// Haar responses at one point: `dx` = right half minus left half,
/// `dy` = lower half minus upper half (rows grow downwards).
fn haar(ii: &IntegralImage, x: f64, y: f64, half: f64) -> (f64, f64) {
    let dx = ii.area_sum(x, y - half, x + half, y + half) - ii.area_sum(x - half, y - half, x, y + half);
    let dy = ii.area_sum(x - half, y, x + half, y + half) - ii.area_sum(x - half, y - half, x + half, y);
    (dx, dy)
}

/// Raw (unnormalised) cell sums in row-major cell order.
fn raw_descriptor(ii: &IntegralImage) -> [f64; DESCRIPTOR_LEN] {
    let kp = Keypoint::for_image(ii.width(), ii.height());
    let mut out = [0.0; DESCRIPTOR_LEN];
    for cy in 0..GRID {
        for cx in 0..GRID {
            let base = (cy * GRID + cx) * 4;
            for ky in 0..LATTICE {
                let y = kp.sample(kp.origin_y, kp.height, cy, ky);
                for kx in 0..LATTICE {
                    let x = kp.sample(kp.origin_x, kp.width, cx, kx);
                    let (dx, dy) = haar(ii, x, y, kp.half_wavelet);
                    out[base] += dx;
                    out[base + 1] += dy;
                    out[base + 2] += dx.abs();
                    out[base + 3] += dy.abs();
                }
            }
        }
    }
    out
}

/// Extracts the whole-image descriptor. Constant (zero-energy) images give
/// the all-zero vector; everything else has unit L2 norm.
pub fn extract_global_descriptor(image: &GrayImage) -> Result<FeatureVector, DescriptorError> {
    let (width, height) = (image.width(), image.height());
    if width < MIN_DESCRIPTOR_SIDE || height < MIN_DESCRIPTOR_SIDE {
        return Err(DescriptorError::ImageTooSmall {
            width,
            height,
            min: MIN_DESCRIPTOR_SIDE,
        });
    }
    let mut values = raw_descriptor(&IntegralImage::new(image));
    let energy: f64 = values.iter().map(|v| v * v).sum();
    if energy < ZERO_ENERGY {
        values = [0.0; DESCRIPTOR_LEN];
    } else {
        let inv = 1.0 / energy.sqrt();
        values.iter_mut().for_each(|v| *v *= inv);
    }
    Ok(FeatureVector {
        values,
        source_id: 0,
    })
}

/// Writes `sample_id,class_id,d0..d63` rows with 9 significant digits.
pub fn write_descriptor_csv<W: Write>(
    out: W,
    features: &[FeatureVector],
    labels: &[usize],
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["sample_id".to_string(), "class_id".to_string()];
    header.extend((0..DESCRIPTOR_LEN).map(|i| format!("d{i}")));
    w.write_record(&header)?;
    for (f, label) in features.iter().zip(labels) {
        let mut row = vec![f.source_id().to_string(), label.to_string()];
        row.extend(f.values().iter().map(|v| format!("{v:.8e}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn image(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> GrayImage {
        let px = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        GrayImage::new(w, h, px).unwrap()
    }

    fn random_image(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let px = (0..w * h).map(|_| rng.random::<f64>()).collect();
        GrayImage::new(w, h, px).unwrap()
    }

    #[test]
    fn integral_of_zeros_and_ones() {
        let ii = IntegralImage::new(&image(4, 3, |_, _| 0.0));
        assert!(ii.table.iter().all(|&v| v == 0.0));
        let ii = IntegralImage::new(&image(3, 3, |_, _| 1.0));
        assert_eq!(ii.box_sum(0, 0, 2, 2), 4.0);
        assert_eq!(ii.at(3, 3), 9.0);
        for k in 0..=3 {
            assert_eq!(ii.at(k, 0), 0.0);
            assert_eq!(ii.at(0, k), 0.0);
        }
    }

    #[test]
    fn box_sums_match_brute_force() {
        let img = random_image(5, 5, 3);
        let ii = IntegralImage::new(&img);
        for x0 in 0..=5 {
            for x1 in x0..=5 {
                for y0 in 0..=5 {
                    for y1 in y0..=5 {
                        let mut direct = 0.0;
                        for y in y0..y1 {
                            for x in x0..x1 {
                                direct += img.get(x, y);
                            }
                        }
                        let got = ii.box_sum(x0, y0, x1, y1);
                        assert!((got - direct).abs() <= 1e-9 * direct.abs().max(1.0));
                    }
                }
            }
        }
    }

    #[test]
    fn fractional_area_sum_weights_partial_pixels() {
        let img = image(3, 3, |x, y| (x + 3 * y) as f64 / 8.0);
        let ii = IntegralImage::new(&img);
        // half of pixel (0,0), all of (1,0), a quarter column of (2,0)
        let expected = 0.5 * img.get(0, 0) + img.get(1, 0) + 0.25 * img.get(2, 0);
        assert!((ii.area_sum(0.5, 0.0, 2.25, 1.0) - expected).abs() < 1e-12);
    }

    #[test]
    fn constant_image_gives_zero_descriptor() {
        let d = extract_global_descriptor(&image(16, 12, |_, _| 0.37)).unwrap();
        assert!(d.is_zero());
    }

    #[test]
    fn too_small_is_rejected() {
        let err = extract_global_descriptor(&image(7, 20, |_, _| 0.0)).unwrap_err();
        assert_eq!(
            err,
            DescriptorError::ImageTooSmall {
                width: 7,
                height: 20,
                min: 8
            }
        );
        assert!(extract_global_descriptor(&image(8, 8, |x, _| x as f64 / 8.0)).is_ok());
    }

    #[test]
    fn vertical_stripes_have_no_vertical_response() {
        let img = image(20, 17, |x, _| if (x / 3) % 2 == 0 { 0.9 } else { 0.1 });
        let raw = raw_descriptor(&IntegralImage::new(&img));
        for cell in raw.chunks_exact(4) {
            assert!(cell[1].abs() < 1e-12, "Σdy = {}", cell[1]);
            assert!(cell[3].abs() < 1e-12, "Σ|dy| = {}", cell[3]);
        }
        assert!(raw.iter().any(|v| v.abs() > 1e-3));
    }

    #[test]
    fn non_degenerate_descriptor_has_unit_norm() {
        for (w, h, seed) in [(8, 8, 1), (16, 16, 2), (31, 20, 3), (64, 40, 4)] {
            let d = extract_global_descriptor(&random_image(w, h, seed)).unwrap();
            assert!((d.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic_bitwise() {
        let img = random_image(23, 29, 7);
        let a = extract_global_descriptor(&img).unwrap();
        let b = extract_global_descriptor(&img).unwrap();
        assert_eq!(a.values().map(f64::to_bits), b.values().map(f64::to_bits));
    }

    #[test]
    fn csv_dump_shape() {
        let d = extract_global_descriptor(&random_image(16, 16, 1)).unwrap().with_source_id(3);
        let mut buf = Vec::new();
        write_descriptor_csv(&mut buf, &[d], &[1]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].split(',').count(), 66);
        assert!(lines[1].starts_with("3,1,"));
    }

    proptest! {
        #[test]
        fn horizontal_mirror_negates_dx(w in 8usize..40, h in 8usize..40, seed in any::<u64>()) {
            let img = random_image(w, h, seed);
            let flipped = image(w, h, |x, y| img.get(w - 1 - x, y));
            let a = extract_global_descriptor(&img).unwrap();
            let b = extract_global_descriptor(&flipped).unwrap();
            for cy in 0..GRID {
                for cx in 0..GRID {
                    let i = (cy * GRID + cx) * 4;
                    let j = (cy * GRID + GRID - 1 - cx) * 4;
                    prop_assert!((a.values()[i] + b.values()[j]).abs() < 1e-9);
                    for k in 1..4 {
                        prop_assert!((a.values()[i + k] - b.values()[j + k]).abs() < 1e-9);
                    }
                }
            }
        }

        #[test]
        fn contrast_scaling_is_invisible(seed in any::<u64>(), alpha in 0.05f64..1.0) {
            let img = random_image(19, 26, seed);
            let scaled = image(19, 26, |x, y| img.get(x, y) * alpha);
            let a = extract_global_descriptor(&img).unwrap();
            let b = extract_global_descriptor(&scaled).unwrap();
            for (u, v) in a.values().iter().zip(b.values()) {
                prop_assert!((u - v).abs() < 1e-9);
            }
        }
    }
}
