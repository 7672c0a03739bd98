//! Rule-based CNN generator.
//!
//! Fixed parameters: 52×52 input, 3×3 convolutions (stride 1, pad 1), 3×3
//! stride-2 max pooling, ReLU. Free parameters: base width `S`, number of
//! down-sampling layers `M`, and `q`, the number of convolutions in each of
//! the `M` sections (`N = Σq`). Section `i` (1-based) has `S·2^(i−1)` maps
//! and each down-sampling layer halves the spatial side, rounding up.
//! A global-average-pool + fully-connected head closes the network.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const INPUT_SIDE: usize = 52;
pub const KERNEL: usize = 3;
pub const DEFAULT_INPUT_CHANNELS: usize = 3;
pub const DEFAULT_CLASS_COUNT: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum ArchError {
    #[error("q is empty")]
    EmptyQ,
    #[error("q has {found} entries but M = {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("q[{index}] = 0; every section needs at least one convolution")]
    NonPositiveQ { index: usize },
    #[error("{field} must be at least 1")]
    NonPositive { field: &'static str },
    #[error("M = {n_down} is too deep for a {input_side}px input: section {section} would start at {side}px, below the {KERNEL}px kernel")]
    TooDeep {
        n_down: usize,
        input_side: usize,
        section: usize,
        side: usize,
    },
    #[error("n_conv = {n_conv} but q sums to {sum}")]
    DepthMismatch { n_conv: usize, sum: usize },
    #[error("search space is empty")]
    EmptySearchSpace,
    #[error("invalid spec JSON at {path}: {message}")]
    Schema { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, ArchError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DownsampleKind {
    #[default]
    Pooling,
    StridedConv,
}

impl fmt::Display for DownsampleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DownsampleKind::Pooling => "pooling",
            DownsampleKind::StridedConv => "strided-conv",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Head {
    pub class_count: usize,
}

impl Default for Head {
    fn default() -> Self {
        Self {
            class_count: DEFAULT_CLASS_COUNT,
        }
    }
}

/// Options of [`make_spec`] beyond the free parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecOptions {
    pub input_channels: usize,
    pub downsample_kind: DownsampleKind,
    pub class_count: usize,
}

impl Default for SpecOptions {
    fn default() -> Self {
        Self {
            input_channels: DEFAULT_INPUT_CHANNELS,
            downsample_kind: DownsampleKind::Pooling,
            class_count: DEFAULT_CLASS_COUNT,
        }
    }
}

/// A generated architecture. Field order defines the lexicographic order
/// used for deterministic tie-breaking.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct CnnSpec {
    pub n_conv: usize,
    pub base_maps: usize,
    pub n_down: usize,
    pub q: Vec<usize>,
    pub input_side: usize,
    pub input_channels: usize,
    pub downsample_kind: DownsampleKind,
    pub head: Head,
}

/// Side entering each section, followed by the side after the last
/// down-sampling layer.
pub fn section_sides(input_side: usize, n_down: usize) -> Vec<usize> {
    let mut sides = Vec::with_capacity(n_down + 1);
    let mut side = input_side;
    sides.push(side);
    for _ in 0..n_down {
        side = side.div_ceil(2);
        sides.push(side);
    }
    sides
}

fn validate(
    base_maps: usize,
    q: &[usize],
    input_side: usize,
    input_channels: usize,
    class_count: usize,
) -> Result<()> {
    if q.is_empty() {
        return Err(ArchError::EmptyQ);
    }
    if let Some(index) = q.iter().position(|&x| x == 0) {
        return Err(ArchError::NonPositiveQ { index });
    }
    for (field, v) in [
        ("base_maps", base_maps),
        ("input_channels", input_channels),
        ("head.class_count", class_count),
    ] {
        if v == 0 {
            return Err(ArchError::NonPositive { field });
        }
    }
    let sides = section_sides(input_side, q.len());
    if let Some(section) = sides[..q.len()].iter().position(|&s| s < KERNEL) {
        return Err(ArchError::TooDeep {
            n_down: q.len(),
            input_side,
            section: section + 1,
            side: sides[section],
        });
    }
    Ok(())
}

impl CnnSpec {
    pub fn sections(&self) -> usize {
        self.q.len()
    }

    /// Feature maps of section `i` (0-based): `S·2^i`.
    pub fn section_width(&self, i: usize) -> usize {
        self.base_maps << i
    }

    /// Checks every structural invariant, including `n_conv = Σq`.
    pub fn validate(&self) -> Result<()> {
        if self.q.len() != self.n_down {
            return Err(ArchError::LengthMismatch {
                expected: self.n_down,
                found: self.q.len(),
            });
        }
        validate(
            self.base_maps,
            &self.q,
            self.input_side,
            self.input_channels,
            self.head.class_count,
        )?;
        let sum = self.q.iter().sum();
        if self.n_conv != sum {
            return Err(ArchError::DepthMismatch {
                n_conv: self.n_conv,
                sum,
            });
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        let q: Vec<String> = self.q.iter().map(|x| x.to_string()).collect();
        format!(
            "N={} S={} M={} q=({})",
            self.n_conv,
            self.base_maps,
            self.n_down,
            q.join(",")
        )
    }
}

/// Builds a spec from `S`, `M` and `q`; `N` is derived as `Σq`.
pub fn make_spec(base_maps: usize, n_down: usize, q: &[usize], options: SpecOptions) -> Result<CnnSpec> {
    if q.is_empty() {
        return Err(ArchError::EmptyQ);
    }
    if q.len() != n_down {
        return Err(ArchError::LengthMismatch {
            expected: n_down,
            found: q.len(),
        });
    }
    validate(
        base_maps,
        q,
        INPUT_SIDE,
        options.input_channels,
        options.class_count,
    )?;
    Ok(CnnSpec {
        base_maps,
        n_down,
        q: q.to_vec(),
        n_conv: q.iter().sum(),
        input_side: INPUT_SIDE,
        input_channels: options.input_channels,
        downsample_kind: options.downsample_kind,
        head: Head {
            class_count: options.class_count,
        },
    })
}

/// The six architectures of the reference table, as `(name, S, q)`.
pub const REFERENCE_MODELS: [(&str, usize, &[usize]); 6] = [
    ("Model-1", 16, &[1, 1, 1]),
    ("Model-2", 16, &[1, 1, 1, 1]),
    ("Model-3", 64, &[1, 1, 1, 1]),
    ("Model-4", 64, &[1, 1, 2, 2]),
    ("Model-5", 64, &[2, 2, 2, 2]),
    ("Model-6", 64, &[3, 3, 3, 4]),
];

/// Published ability scores of the six reference models, in table order.
pub const REFERENCE_CHI: [f64; 6] = [5.41, 5.44, 6.04, 6.12, 6.34, 6.53];

pub fn reference_specs(options: SpecOptions) -> Vec<(&'static str, CnnSpec)> {
    REFERENCE_MODELS
        .iter()
        .map(|&(name, s, q)| (name, make_spec(s, q.len(), q, options).expect("reference model is valid")))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Conv,
    Pool,
    GlobalPool,
    FullyConnected,
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LayerKind::Conv => "conv",
            LayerKind::Pool => "pool",
            LayerKind::GlobalPool => "global-pool",
            LayerKind::FullyConnected => "fully-connected",
        })
    }
}

/// One concrete layer with its cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDescriptor {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_side: usize,
    pub out_side: usize,
    pub kernel: Option<usize>,
    pub stride: usize,
    pub padding: usize,
    pub macs: u64,
    pub params: u64,
}

impl LayerDescriptor {
    pub fn is_head(&self) -> bool {
        matches!(self.kind, LayerKind::GlobalPool | LayerKind::FullyConnected)
    }

    fn conv(in_channels: usize, out_channels: usize, in_side: usize, stride: usize) -> Self {
        let out_side = if stride == 1 { in_side } else { in_side.div_ceil(stride) };
        let k2 = (KERNEL * KERNEL) as u64;
        Self {
            kind: LayerKind::Conv,
            in_channels,
            out_channels,
            in_side,
            out_side,
            kernel: Some(KERNEL),
            stride,
            padding: 1,
            macs: (out_side * out_side) as u64 * out_channels as u64 * in_channels as u64 * k2,
            params: out_channels as u64 * (in_channels as u64 * k2 + 1),
        }
    }

    fn pool(channels: usize, in_side: usize) -> Self {
        Self {
            kind: LayerKind::Pool,
            in_channels: channels,
            out_channels: channels,
            in_side,
            out_side: in_side.div_ceil(2),
            kernel: Some(KERNEL),
            stride: 2,
            padding: 1,
            macs: 0,
            params: 0,
        }
    }
}

/// Expands a spec into its layer list: per section `q_i` convolutions then
/// one down-sampling layer, followed by the head.
pub fn expand_layers(spec: &CnnSpec) -> Vec<LayerDescriptor> {
    let mut layers = Vec::with_capacity(spec.n_conv + spec.n_down + 2);
    let mut channels = spec.input_channels;
    let mut side = spec.input_side;
    for (i, &convs) in spec.q.iter().enumerate() {
        let width = spec.section_width(i);
        for _ in 0..convs {
            layers.push(LayerDescriptor::conv(channels, width, side, 1));
            channels = width;
        }
        let down = match spec.downsample_kind {
            DownsampleKind::Pooling => LayerDescriptor::pool(channels, side),
            DownsampleKind::StridedConv => LayerDescriptor::conv(channels, 2 * channels, side, 2),
        };
        channels = down.out_channels;
        side = down.out_side;
        layers.push(down);
    }
    layers.push(LayerDescriptor {
        kind: LayerKind::GlobalPool,
        in_channels: channels,
        out_channels: channels,
        in_side: side,
        out_side: 1,
        kernel: None,
        stride: 1,
        padding: 0,
        macs: 0,
        params: 0,
    });
    let classes = spec.head.class_count;
    layers.push(LayerDescriptor {
        kind: LayerKind::FullyConnected,
        in_channels: channels,
        out_channels: classes,
        in_side: 1,
        out_side: 1,
        kernel: None,
        stride: 1,
        padding: 0,
        macs: channels as u64 * classes as u64,
        params: classes as u64 * (channels as u64 + 1),
    });
    layers
}

pub fn count_macs(layers: &[LayerDescriptor], include_head: bool) -> u64 {
    layers
        .iter()
        .filter(|l| include_head || !l.is_head())
        .map(|l| l.macs)
        .sum()
}

pub fn count_params(layers: &[LayerDescriptor], include_head: bool) -> u64 {
    layers
        .iter()
        .filter(|l| include_head || !l.is_head())
        .map(|l| l.params)
        .sum()
}

/// Writes `kind,in_ch,out_ch,in_side,out_side,stride,macs,params` rows.
pub fn write_layers_csv<W: Write>(out: W, layers: &[LayerDescriptor]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["kind", "in_ch", "out_ch", "in_side", "out_side", "stride", "macs", "params"])?;
    for l in layers {
        w.write_record([
            l.kind.to_string(),
            l.in_channels.to_string(),
            l.out_channels.to_string(),
            l.in_side.to_string(),
            l.out_side.to_string(),
            l.stride.to_string(),
            l.macs.to_string(),
            l.params.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Family of `q` vectors to enumerate for a given `M`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "pattern")]
pub enum QPattern {
    /// Every section has `per_section` convolutions.
    Uniform { per_section: usize },
    /// Every non-decreasing vector with entries in `1..=max_per_section`.
    NonDecreasing { max_per_section: usize },
}

impl QPattern {
    fn vectors(&self, m: usize) -> Vec<Vec<usize>> {
        match *self {
            QPattern::Uniform { per_section } => vec![vec![per_section; m]],
            QPattern::NonDecreasing { max_per_section } => {
                let mut out = Vec::new();
                let mut current = Vec::with_capacity(m);
                non_decreasing(m, 1, max_per_section, &mut current, &mut out);
                out
            }
        }
    }
}

fn non_decreasing(m: usize, lo: usize, hi: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if current.len() == m {
        out.push(current.clone());
        return;
    }
    for v in lo..=hi {
        current.push(v);
        non_decreasing(m, v, hi, current, out);
        current.pop();
    }
}

/// Ranges of the free parameters for candidate enumeration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRanges {
    pub base_maps: Vec<usize>,
    pub n_down: Vec<usize>,
    pub q_patterns: Vec<QPattern>,
    #[serde(default = "default_input_channels")]
    pub input_channels: usize,
    #[serde(default)]
    pub downsample_kind: DownsampleKind,
    #[serde(default = "default_class_count")]
    pub class_count: usize,
}

fn default_input_channels() -> usize {
    DEFAULT_INPUT_CHANNELS
}

fn default_class_count() -> usize {
    DEFAULT_CLASS_COUNT
}

impl Default for CandidateRanges {
    fn default() -> Self {
        Self {
            base_maps: vec![16, 32, 64],
            n_down: vec![1, 2, 3, 4, 5],
            q_patterns: vec![QPattern::NonDecreasing { max_per_section: 4 }],
            input_channels: DEFAULT_INPUT_CHANNELS,
            downsample_kind: DownsampleKind::Pooling,
            class_count: DEFAULT_CLASS_COUNT,
        }
    }
}

/// Enumerates valid specs in lexicographic order, dropping duplicates and
/// combinations that fail validation (e.g. `M` too deep for the input).
pub fn enumerate_candidates(ranges: &CandidateRanges) -> Result<Vec<CnnSpec>> {
    let options = SpecOptions {
        input_channels: ranges.input_channels,
        downsample_kind: ranges.downsample_kind,
        class_count: ranges.class_count,
    };
    let mut specs = Vec::new();
    for &s in &ranges.base_maps {
        for &m in &ranges.n_down {
            for pattern in &ranges.q_patterns {
                for q in pattern.vectors(m) {
                    if let Ok(spec) = make_spec(s, m, &q, options) {
                        specs.push(spec);
                    }
                }
            }
        }
    }
    specs.sort();
    specs.dedup();
    if specs.is_empty() {
        return Err(ArchError::EmptySearchSpace);
    }
    Ok(specs)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecDocument {
    n_conv: usize,
    base_maps: usize,
    n_down: usize,
    q: Vec<usize>,
    #[serde(default = "input_side_default")]
    input_side: usize,
    #[serde(default = "default_input_channels")]
    input_channels: usize,
    #[serde(default)]
    downsample_kind: DownsampleKind,
    #[serde(default)]
    head: Head,
}

fn input_side_default() -> usize {
    INPUT_SIDE
}

pub fn export_spec(spec: &CnnSpec) -> String {
    serde_json::to_string_pretty(spec).expect("spec serialises")
}

fn schema_error(path: &str, e: impl fmt::Display) -> ArchError {
    ArchError::Schema {
        path: path.to_string(),
        message: e.to_string(),
    }
}

fn spec_from_document(doc: SpecDocument) -> Result<CnnSpec> {
    let spec = CnnSpec {
        base_maps: doc.base_maps,
        n_down: doc.n_down,
        q: doc.q,
        n_conv: doc.n_conv,
        input_side: doc.input_side,
        input_channels: doc.input_channels,
        downsample_kind: doc.downsample_kind,
        head: doc.head,
    };
    spec.validate().map_err(|e| {
        let path = match &e {
            ArchError::DepthMismatch { .. } => "n_conv",
            ArchError::LengthMismatch { .. } | ArchError::TooDeep { .. } => "n_down",
            ArchError::NonPositive { field } => field,
            _ => "q",
        };
        schema_error(path, e)
    })?;
    Ok(spec)
}

/// Parses and validates one spec document. Missing `input_side`,
/// `input_channels`, `downsample_kind` and `head` take their defaults.
pub fn import_spec(json: &str) -> Result<CnnSpec> {
    let de = &mut serde_json::Deserializer::from_str(json);
    let doc: SpecDocument =
        serde_path_to_error::deserialize(de).map_err(|e| schema_error(&e.path().to_string(), e.inner()))?;
    spec_from_document(doc)
}

/// Parses a JSON array of spec documents.
pub fn import_specs(json: &str) -> Result<Vec<CnnSpec>> {
    let de = &mut serde_json::Deserializer::from_str(json);
    let docs: Vec<SpecDocument> =
        serde_path_to_error::deserialize(de).map_err(|e| schema_error(&e.path().to_string(), e.inner()))?;
    docs.into_iter()
        .enumerate()
        .map(|(i, d)| {
            spec_from_document(d).map_err(|e| match e {
                ArchError::Schema { path, message } => ArchError::Schema {
                    path: format!("[{i}].{path}"),
                    message,
                },
                other => other,
            })
        })
        .collect()
}
