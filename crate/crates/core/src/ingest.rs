//! Dataset ingestion: IDX (MNIST), CIFAR binary, class-per-directory image
//! trees, and a seeded synthetic blob generator.
//!
//! Every loader produces a [`LabeledDataset`] of grayscale images with
//! luminance in `[0, 1]` and dense 0-based class ids.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

/// Smallest accepted image side.
pub const MIN_IMAGE_SIDE: usize = 3;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const CIFAR_SIDE: usize = 32;
const CIFAR_PLANE: usize = CIFAR_SIDE * CIFAR_SIDE;
/// One label byte followed by the R, G and B planes.
pub const CIFAR_RECORD_LEN: usize = 1 + 3 * CIFAR_PLANE;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic number 0x{found:08x} at byte offset {offset} (expected 0x{expected:08x})")]
    BadMagic {
        path: PathBuf,
        offset: usize,
        found: u32,
        expected: u32,
    },
    #[error("{path}: truncated payload at byte offset {offset}: need {needed} bytes, file has {len}")]
    Truncated {
        path: PathBuf,
        offset: usize,
        needed: usize,
        len: usize,
    },
    #[error("count mismatch at byte offset {offset}: {images} images but {labels} labels")]
    CountMismatch {
        offset: usize,
        images: usize,
        labels: usize,
    },
    #[error("{path}: length {len} is not a multiple of the {record}-byte record size")]
    RecordSize {
        path: PathBuf,
        len: usize,
        record: usize,
    },
    #[error("{path}: label {label} in record {record} is not below class count {class_count}")]
    LabelOutOfRange {
        path: PathBuf,
        record: usize,
        label: usize,
        class_count: usize,
    },
    #[error("cannot decode image {path}: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("fewer than 2 classes ({found} found)")]
    TooFewClasses { found: usize },
    #[error("class {class} has no samples")]
    EmptyClass { class: usize },
    #[error("dataset has {samples} samples but {class_count} classes")]
    TooFewSamples { samples: usize, class_count: usize },
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, IngestError>;

/// Row-major grayscale image with luminance in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width < MIN_IMAGE_SIDE || height < MIN_IMAGE_SIDE {
            return Err(IngestError::InvalidImage(format!(
                "{width}x{height} is smaller than {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}"
            )));
        }
        if pixels.len() != width * height {
            return Err(IngestError::InvalidImage(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        if let Some(i) = pixels
            .iter()
            .position(|p| !p.is_finite() || *p < 0.0 || *p > 1.0)
        {
            return Err(IngestError::InvalidImage(format!(
                "pixel {i} = {} outside [0, 1]",
                pixels[i]
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Builds an image from 8-bit luminance, scaling by 1/255.
    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(width, height, bytes.iter().map(|&b| byte_to_unit(b)).collect())
    }

    /// Builds an image from interleaved 8-bit RGB.
    pub fn from_rgb_bytes(width: usize, height: usize, rgb: &[u8]) -> Result<Self> {
        if rgb.len() != 3 * width * height {
            return Err(IngestError::InvalidImage(format!(
                "{} RGB bytes for a {width}x{height} image",
                rgb.len()
            )));
        }
        let pixels = rgb
            .chunks_exact(3)
            .map(|px| luminance(px[0], px[1], px[2]))
            .collect();
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }
}

#[inline]
fn byte_to_unit(b: u8) -> f64 {
    f64::from(b) / 255.0
}

/// Luminance of an 8-bit RGB triple with weights 0.299/0.587/0.114, in `[0, 1]`.
pub fn luminance(r: u8, g: u8, b: u8) -> f64 {
    let y = (0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b)) / 255.0;
    y.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: GrayImage,
    pub class_id: usize,
}

/// Decoded images with dense integer class labels.
///
/// Construction only checks that every label is below `class_count`;
/// [`LabeledDataset::check_complete`] checks the stronger conditions the
/// complexity analysis needs (≥ 2 classes, no empty class).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    samples: Vec<Sample>,
    class_count: usize,
    name: String,
}

impl LabeledDataset {
    pub fn new(name: impl Into<String>, samples: Vec<Sample>, class_count: usize) -> Result<Self> {
        if let Some(s) = samples.iter().find(|s| s.class_id >= class_count) {
            return Err(IngestError::InvalidArgument(format!(
                "class id {} is not below class count {class_count}",
                s.class_id
            )));
        }
        Ok(Self {
            samples,
            class_count,
            name: name.into(),
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.class_count];
        for s in &self.samples {
            sizes[s.class_id] += 1;
        }
        sizes
    }

    /// Checks `class_count ≥ 2`, that every class has a sample and that
    /// there are at least as many samples as classes.
    pub fn check_complete(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(IngestError::TooFewClasses {
                found: self.class_count,
            });
        }
        if let Some(class) = self.class_sizes().iter().position(|&n| n == 0) {
            return Err(IngestError::EmptyClass { class });
        }
        if self.samples.len() < self.class_count {
            return Err(IngestError::TooFewSamples {
                samples: self.samples.len(),
                class_count: self.class_count,
            });
        }
        Ok(())
    }

    /// Keeps at most `cap` samples per class, chosen uniformly with `seed`.
    /// Kept samples stay in their original relative order.
    pub fn cap_per_class(self, cap: usize, seed: u64) -> Self {
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); self.class_count];
        for (i, s) in self.samples.iter().enumerate() {
            by_class[s.class_id].push(i);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut keep = vec![false; self.samples.len()];
        for members in &by_class {
            if members.len() <= cap {
                members.iter().for_each(|&i| keep[i] = true);
            } else {
                for j in index::sample(&mut rng, members.len(), cap) {
                    keep[members[j]] = true;
                }
            }
        }
        let samples = self
            .samples
            .into_iter()
            .zip(keep)
            .filter_map(|(s, k)| k.then_some(s))
            .collect();
        Self {
            samples,
            class_count: self.class_count,
            name: self.name,
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| IngestError::Truncated {
            path: path.to_path_buf(),
            offset,
            needed: offset + 4,
            len: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(IngestError::BadMagic {
            path: path.to_path_buf(),
            offset: 0,
            found,
            expected,
        });
    }
    Ok(())
}

/// Parses an IDX image/label file pair as published for MNIST.
pub fn parse_idx(
    images: &[u8],
    labels: &[u8],
    images_path: &Path,
    labels_path: &Path,
) -> Result<LabeledDataset> {
    check_magic(images, IDX_IMAGES_MAGIC, images_path)?;
    check_magic(labels, IDX_LABELS_MAGIC, labels_path)?;
    let n_images = be_u32(images, 4, images_path)? as usize;
    let rows = be_u32(images, 8, images_path)? as usize;
    let cols = be_u32(images, 12, images_path)? as usize;
    let n_labels = be_u32(labels, 4, labels_path)? as usize;
    if n_images != n_labels {
        return Err(IngestError::CountMismatch {
            offset: 4,
            images: n_images,
            labels: n_labels,
        });
    }

    let image_len = rows * cols;
    let needed = 16 + n_images * image_len;
    if images.len() < needed {
        return Err(IngestError::Truncated {
            path: images_path.to_path_buf(),
            offset: images.len(),
            needed,
            len: images.len(),
        });
    }
    let needed = 8 + n_labels;
    if labels.len() < needed {
        return Err(IngestError::Truncated {
            path: labels_path.to_path_buf(),
            offset: labels.len(),
            needed,
            len: labels.len(),
        });
    }

    let label_bytes = &labels[8..8 + n_labels];
    let class_count = label_bytes.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let samples = images[16..16 + n_images * image_len]
        .chunks_exact(image_len.max(1))
        .zip(label_bytes)
        .map(|(px, &label)| {
            Ok(Sample {
                image: GrayImage::from_bytes(cols, rows, px)?,
                class_id: label as usize,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let name = images_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    LabeledDataset::new(name, samples, class_count)
}

/// Loads an IDX image/label file pair (magic 0x803 / 0x801).
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let images = read_file(images_path)?;
    let labels = read_file(labels_path)?;
    parse_idx(&images, &labels, images_path, labels_path)
}

/// Writes a dataset of equally sized images as an IDX pair, quantising
/// luminance to bytes.
pub fn write_idx(dataset: &LabeledDataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let first = dataset
        .samples()
        .first()
        .ok_or_else(|| IngestError::InvalidArgument("cannot write an empty dataset".into()))?;
    let (w, h) = (first.image.width(), first.image.height());
    if dataset.class_count() > 256 {
        return Err(IngestError::InvalidArgument(
            "IDX labels hold at most 256 classes".into(),
        ));
    }
    let mut img_bytes = Vec::with_capacity(16 + dataset.len() * w * h);
    img_bytes.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    img_bytes.extend_from_slice(&(dataset.len() as u32).to_be_bytes());
    img_bytes.extend_from_slice(&(h as u32).to_be_bytes());
    img_bytes.extend_from_slice(&(w as u32).to_be_bytes());
    let mut lbl_bytes = Vec::with_capacity(8 + dataset.len());
    lbl_bytes.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lbl_bytes.extend_from_slice(&(dataset.len() as u32).to_be_bytes());
    for s in dataset.samples() {
        if s.image.width() != w || s.image.height() != h {
            return Err(IngestError::InvalidArgument(
                "IDX requires all images to share one size".into(),
            ));
        }
        img_bytes.extend(s.image.pixels().iter().map(|&p| (p * 255.0).round() as u8));
        lbl_bytes.push(s.class_id as u8);
    }
    for (path, bytes) in [(images_path, img_bytes), (labels_path, lbl_bytes)] {
        fs::write(path, bytes).map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    }
    Ok(())
}

fn parse_cifar_records(
    bytes: &[u8],
    path: &Path,
    class_count: usize,
    out: &mut Vec<Sample>,
) -> Result<()> {
    if bytes.len() % CIFAR_RECORD_LEN != 0 {
        return Err(IngestError::RecordSize {
            path: path.to_path_buf(),
            len: bytes.len(),
            record: CIFAR_RECORD_LEN,
        });
    }
    for (record, chunk) in bytes.chunks_exact(CIFAR_RECORD_LEN).enumerate() {
        let label = chunk[0] as usize;
        if label >= class_count {
            return Err(IngestError::LabelOutOfRange {
                path: path.to_path_buf(),
                record,
                label,
                class_count,
            });
        }
        let (r, rest) = chunk[1..].split_at(CIFAR_PLANE);
        let (g, b) = rest.split_at(CIFAR_PLANE);
        let pixels = (0..CIFAR_PLANE)
            .map(|i| luminance(r[i], g[i], b[i]))
            .collect();
        out.push(Sample {
            image: GrayImage::new(CIFAR_SIDE, CIFAR_SIDE, pixels)?,
            class_id: label,
        });
    }
    Ok(())
}

/// Loads CIFAR binary batches (1 label byte + 1024 R + 1024 G + 1024 B per
/// record). Files are decoded concurrently; samples keep file then record order.
pub fn load_cifar_binary(paths: &[PathBuf], class_count: usize) -> Result<LabeledDataset> {
    let per_file = paths
        .par_iter()
        .map(|path| {
            let bytes = read_file(path)?;
            let mut samples = Vec::with_capacity(bytes.len() / CIFAR_RECORD_LEN);
            parse_cifar_records(&bytes, path, class_count, &mut samples)?;
            Ok(samples)
        })
        .collect::<Result<Vec<_>>>()?;
    let name = paths
        .first()
        .and_then(|p| p.parent())
        .and_then(|p| p.file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "cifar".to_string());
    LabeledDataset::new(name, per_file.into_iter().flatten().collect(), class_count)
}

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "pgm", "ppm", "pnm"];

fn decode_image_file(path: &Path) -> Result<GrayImage> {
    let decoded = image::open(path).map_err(|e| IngestError::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let wrap = |e: IngestError| IngestError::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    if decoded.color().has_color() {
        GrayImage::from_rgb_bytes(w, h, decoded.to_rgb8().as_raw()).map_err(wrap)
    } else {
        GrayImage::from_bytes(w, h, decoded.to_luma8().as_raw()).map_err(wrap)
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let io = |source| IngestError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut entries = fs::read_dir(dir)
        .map_err(io)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(io)?;
    entries.retain(|p| {
        !p.file_name()
            .is_some_and(|n| n.to_string_lossy().starts_with('.'))
    });
    entries.sort();
    Ok(entries)
}

/// Loads a directory with one subdirectory per class. Class ids follow the
/// lexicographic order of subdirectory names; files with a PNG or PNM
/// extension are decoded, everything else is ignored.
pub fn load_image_dir(root: &Path) -> Result<LabeledDataset> {
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    if class_dirs.len() < 2 {
        return Err(IngestError::TooFewClasses {
            found: class_dirs.len(),
        });
    }
    let mut files = Vec::new();
    for (class_id, dir) in class_dirs.iter().enumerate() {
        for path in sorted_entries(dir)? {
            let is_image = path.is_file()
                && path
                    .extension()
                    .map(|e| e.to_string_lossy().to_ascii_lowercase())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str()));
            if is_image {
                files.push((path, class_id));
            }
        }
    }
    let samples = files
        .par_iter()
        .map(|(path, class_id)| {
            Ok(Sample {
                image: decode_image_file(path)?,
                class_id: *class_id,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<String> = class_dirs
        .iter()
        .map(|d| d.file_name().unwrap_or_default().to_string_lossy().into_owned())
        .collect();
    let root_name = root
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "images".to_string());
    LabeledDataset::new(
        format!("{root_name} [{}]", labels.join(",")),
        samples,
        class_dirs.len(),
    )
}

/// Parameters of the synthetic blob task.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BlobTask {
    pub class_count: usize,
    pub samples_per_class: usize,
    pub image_side: usize,
    pub separation: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl BlobTask {
    /// Template image of `class`: a Gaussian blob (σ = side/8) whose centre
    /// sits at angle 2πk/n on a circle of radius `separation·side/4` around
    /// the image centre.
    pub fn template(&self, class: usize) -> Vec<f64> {
        let side = self.image_side as f64;
        let angle = std::f64::consts::TAU * class as f64 / self.class_count as f64;
        let radius = self.separation * side / 4.0;
        let cx = side / 2.0 + radius * angle.cos();
        let cy = side / 2.0 + radius * angle.sin();
        let two_var = 2.0 * (side / 8.0).powi(2);
        let mut px = Vec::with_capacity(self.image_side * self.image_side);
        for y in 0..self.image_side {
            for x in 0..self.image_side {
                let dx = x as f64 + 0.5 - cx;
                let dy = y as f64 + 0.5 - cy;
                px.push((-(dx * dx + dy * dy) / two_var).exp());
            }
        }
        px
    }

    pub fn generate(&self) -> Result<LabeledDataset> {
        if self.class_count < 2 || self.samples_per_class < 1 || self.image_side < 8 {
            return Err(IngestError::InvalidArgument(format!(
                "synthetic task needs class_count ≥ 2, samples_per_class ≥ 1, image_side ≥ 8 (got {}, {}, {})",
                self.class_count, self.samples_per_class, self.image_side
            )));
        }
        if !(self.separation >= 0.0 && self.noise_sigma >= 0.0)
            || !self.separation.is_finite()
            || !self.noise_sigma.is_finite()
        {
            return Err(IngestError::InvalidArgument(
                "separation and noise_sigma must be finite and ≥ 0".into(),
            ));
        }
        let noise = Normal::new(0.0, self.noise_sigma)
            .map_err(|e| IngestError::InvalidArgument(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut samples = Vec::with_capacity(self.class_count * self.samples_per_class);
        for class_id in 0..self.class_count {
            let template = self.template(class_id);
            for _ in 0..self.samples_per_class {
                let pixels = if self.noise_sigma == 0.0 {
                    template.clone()
                } else {
                    template
                        .iter()
                        .map(|&t| (t + noise.sample(&mut rng)).clamp(0.0, 1.0))
                        .collect()
                };
                samples.push(Sample {
                    image: GrayImage::new(self.image_side, self.image_side, pixels)?,
                    class_id,
                });
            }
        }
        LabeledDataset::new(
            format!(
                "synth-blob(n={}, k={}, side={}, sep={}, noise={}, seed={})",
                self.class_count,
                self.samples_per_class,
                self.image_side,
                self.separation,
                self.noise_sigma,
                self.seed
            ),
            samples,
            self.class_count,
        )
    }
}

/// Seeded synthetic task: one Gaussian-blob template per class plus i.i.d.
/// pixel noise, clamped to `[0, 1]`.
pub fn synth_blob_task(
    class_count: usize,
    samples_per_class: usize,
    image_side: usize,
    separation: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    BlobTask {
        class_count,
        samples_per_class,
        image_side,
        separation,
        noise_sigma,
        seed,
    }
    .generate()
}
