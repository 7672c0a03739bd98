//! `cnnrec` command-line front end.
//!
//! Exit status: 0 success, 1 computation failure, 2 input or usage error.
//! JSON reports embed the resolved configuration and tool version; output
//! files are written through a temporary file and renamed into place.

use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::ability::{
    ability_ceiling, ability_score, calibrate, AbilityError, AbilityParams, Assumptions, QShape, DEFAULT_GAMMA,
    DEFAULT_N0,
};
use crate::archgen::{
    count_macs, count_params, enumerate_candidates, expand_layers, export_spec, import_spec, import_specs, make_spec,
    write_layers_csv, ArchError, CandidateRanges, CnnSpec, DownsampleKind, QPattern, SpecOptions,
    DEFAULT_CLASS_COUNT, DEFAULT_INPUT_CHANNELS,
};
use crate::complexity::{
    complexity_from_features, extract_features, simulate_multiclass_error, ComplexityError, ComplexityReport,
};
use crate::descriptor::write_descriptor_csv;
use crate::ingest::{load_cifar_binary, load_idx, load_image_dir, write_idx, BlobTask, IngestError, LabeledDataset};
use crate::matcher::{
    fit_matching, fit_performance_curve, log_grid, predict_rate, read_calibration, recommend, write_curve_csv,
    CurveAnchor, MatchError, MatchKind, MatchingFunction, DEFAULT_MARGIN,
};

const REFERENCE_ANCHORS_JSON: &str = include_str!("../data/reference_anchors.json");

/// Failure classified by exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad or missing input (exit 2).
    Input(String),
    /// Computation failed on valid input (exit 1).
    Compute(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Compute(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Compute(m) => m,
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ArchError> for CliError {
    fn from(e: ArchError) -> Self {
        match e {
            ArchError::EmptySearchSpace => CliError::Compute(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<ComplexityError> for CliError {
    fn from(e: ComplexityError) -> Self {
        match e {
            ComplexityError::Ingest(e) => e.into(),
            ComplexityError::Descriptor(_)
            | ComplexityError::TooFewTrials(_)
            | ComplexityError::InvalidArgument(_)
            | ComplexityError::TooFewClasses(_) => CliError::Input(e.to_string()),
            _ => CliError::Compute(e.to_string()),
        }
    }
}

impl From<AbilityError> for CliError {
    fn from(e: AbilityError) -> Self {
        match e {
            AbilityError::Schema { .. } | AbilityError::InvalidParams(_) | AbilityError::Arch(_) => {
                CliError::Input(e.to_string())
            }
            _ => CliError::Compute(e.to_string()),
        }
    }
}

impl From<MatchError> for CliError {
    fn from(e: MatchError) -> Self {
        match e {
            MatchError::IncreasingFit { .. } | MatchError::TooFewPairs(_) | MatchError::NoCandidates => {
                CliError::Compute(e.to_string())
            }
            _ => CliError::Input(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "cnnrec", version, about = "Training-free dataset complexity, CNN ability and model recommendation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score a dataset's complexity (c_all).
    Complexity(ComplexityArgs),
    /// Generate a CNN spec (or enumerate a candidate set).
    GenModel(GenModelArgs),
    /// Score the ability of specs.
    Ability(AbilityArgs),
    /// Fit the ability coefficients to anchor models.
    Calibrate(CalibrateArgs),
    /// Fit the complexity → ability matching function.
    FitMatch(FitMatchArgs),
    /// Recommend an architecture for a dataset.
    Recommend(RecommendArgs),
    /// Fit the accuracy-vs-forward-time curve from two anchors.
    Curve(CurveArgs),
    /// Monte-Carlo check that the error rate grows with the class count.
    #[command(name = "validate-2class")]
    Validate2Class(ValidateArgs),
    /// Write a synthetic blob dataset as an IDX pair.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Idx,
    Cifar,
    Dir,
    Synth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DownsampleArg {
    Pooling,
    StridedConv,
}

impl From<DownsampleArg> for DownsampleKind {
    fn from(d: DownsampleArg) -> Self {
        match d {
            DownsampleArg::Pooling => DownsampleKind::Pooling,
            DownsampleArg::StridedConv => DownsampleKind::StridedConv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum KindArg {
    Linear,
    Isotonic,
}

impl From<KindArg> for MatchKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Linear => MatchKind::Linear,
            KindArg::Isotonic => MatchKind::IsotonicDecreasing,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthParams {
    /// Synthetic: number of classes.
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    /// Synthetic: samples per class.
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    /// Synthetic: image side in pixels.
    #[arg(long, default_value_t = 32)]
    pub side: usize,
    /// Synthetic: class template separation.
    #[arg(long, default_value_t = 1.0)]
    pub separation: f64,
    /// Synthetic: pixel noise standard deviation.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DatasetArgs {
    /// Dataset format (required unless a score is given another way).
    #[arg(long, value_enum)]
    pub format: Option<DatasetFormat>,
    /// IDX image file.
    #[arg(long, required_if_eq("format", "idx"))]
    pub images: Option<PathBuf>,
    /// IDX label file.
    #[arg(long, required_if_eq("format", "idx"))]
    pub labels: Option<PathBuf>,
    /// CIFAR batch files, or the root directory for --format dir.
    #[arg(long, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// CIFAR class count.
    #[arg(long, default_value_t = 10)]
    pub cifar_classes: usize,
    #[command(flatten)]
    pub synth: SynthParams,
    /// Keep at most this many samples per class (seeded uniform choice).
    #[arg(long)]
    pub max_per_class: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl DatasetArgs {
    fn load(&self) -> CliResult<LabeledDataset> {
        let format = self.format.ok_or_else(|| CliError::Input("--format is required".into()))?;
        let dataset = match format {
            DatasetFormat::Idx => {
                let images = self.images.as_deref().ok_or_else(|| CliError::Input("--images is required".into()))?;
                let labels = self.labels.as_deref().ok_or_else(|| CliError::Input("--labels is required".into()))?;
                load_idx(images, labels)?
            }
            DatasetFormat::Cifar => {
                if self.input.is_empty() {
                    return Err(CliError::Input("--input needs at least one CIFAR batch file".into()));
                }
                load_cifar_binary(&self.input, self.cifar_classes)?
            }
            DatasetFormat::Dir => match self.input.as_slice() {
                [root] => load_image_dir(root)?,
                _ => return Err(CliError::Input("--format dir takes exactly one --input directory".into())),
            },
            DatasetFormat::Synth => self.blob_task().generate()?,
        };
        Ok(match self.max_per_class {
            Some(cap) => dataset.cap_per_class(cap, self.seed),
            None => dataset,
        })
    }

    fn blob_task(&self) -> BlobTask {
        BlobTask {
            class_count: self.synth.classes,
            samples_per_class: self.synth.per_class,
            image_side: self.synth.side,
            separation: self.synth.separation,
            noise_sigma: self.synth.noise,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ComplexityArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,
    /// Report path (JSON); stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also dump descriptors as CSV.
    #[arg(long)]
    pub descriptors_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SpecShapeArgs {
    #[arg(long, value_enum, default_value_t = DownsampleArg::Pooling)]
    pub downsample: DownsampleArg,
    #[arg(long, default_value_t = DEFAULT_INPUT_CHANNELS)]
    pub input_channels: usize,
    /// Classes of the classifier head.
    #[arg(long = "head-classes", default_value_t = DEFAULT_CLASS_COUNT)]
    pub head_classes: usize,
}

impl SpecShapeArgs {
    fn options(&self) -> SpecOptions {
        SpecOptions {
            input_channels: self.input_channels,
            downsample_kind: self.downsample.into(),
            class_count: self.head_classes,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenModelArgs {
    /// Feature maps of the first convolution (S).
    #[arg(long = "s", required_unless_present = "enumerate")]
    pub base_maps: Option<usize>,
    /// Convolutions per section, e.g. 2,2,2,2.
    #[arg(long, value_delimiter = ',', required_unless_present = "enumerate")]
    pub q: Vec<usize>,
    /// Down-sampling layers (M); defaults to the length of q.
    #[arg(long = "m")]
    pub n_down: Option<usize>,
    #[command(flatten)]
    pub shape: SpecShapeArgs,
    /// Enumerate a candidate set instead of one spec.
    #[arg(long)]
    pub enumerate: bool,
    #[arg(long, value_delimiter = ',', default_values_t = [16, 32, 64])]
    pub s_range: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3, 4, 5])]
    pub m_range: Vec<usize>,
    /// Non-decreasing q vectors with entries up to this value.
    #[arg(long, default_value_t = 4)]
    pub q_max: usize,
    /// Uniform q vectors with this many convolutions per section instead.
    #[arg(long)]
    pub q_uniform: Option<usize>,
    /// Layer table (CSV).
    #[arg(long)]
    pub layers_csv: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AbilityArgs {
    /// Spec JSON files to score.
    #[arg(long)]
    pub spec: Vec<PathBuf>,
    /// JSON array of specs to score.
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    /// Score the six reference models.
    #[arg(long)]
    pub reference: bool,
    /// Ability params file; the bundled reference fit when omitted.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Report the ability ceiling for S,M (even q distribution).
    #[arg(long, value_delimiter = ',')]
    pub ceiling: Option<Vec<usize>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CalibrateArgs {
    /// Anchor file: JSON array of {"spec": {...}, "chi": x}; the six
    /// reference models when omitted.
    #[arg(long)]
    pub anchors: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_N0)]
    pub n0: f64,
    #[arg(long, default_value_t = DEFAULT_GAMMA)]
    pub gamma: f64,
    #[arg(long, default_value_t = DEFAULT_INPUT_CHANNELS)]
    pub input_channels: usize,
    #[arg(long, value_enum, default_value_t = DownsampleArg::Pooling)]
    pub downsample: DownsampleArg,
    /// Exclude the classifier head from the MAC count.
    #[arg(long)]
    pub no_head: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitMatchArgs {
    /// Calibration pairs (JSON lines of {task, c_all, chi_optimal}).
    #[arg(long)]
    pub calibration: PathBuf,
    #[arg(long, value_enum, default_value_t = KindArg::Linear)]
    pub kind: KindArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RecommendArgs {
    /// Complexity report produced by `complexity`.
    #[arg(long, conflicts_with_all = ["c_all", "format"])]
    pub complexity: Option<PathBuf>,
    /// Complexity score given directly.
    #[arg(long, conflicts_with = "format")]
    pub c_all: Option<f64>,
    /// Dataset to score (same flags as `complexity`).
    #[command(flatten)]
    pub dataset: DatasetArgs,
    /// Calibration pairs to fit the matching function from.
    #[arg(long, required_unless_present = "matching")]
    pub calibration: Option<PathBuf>,
    /// Previously fitted matching function (from `fit-match`).
    #[arg(long, conflicts_with = "calibration")]
    pub matching: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = KindArg::Linear)]
    pub kind: KindArg,
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// JSON array of candidate specs; the default enumeration when omitted.
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MARGIN)]
    pub margin: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CurveArgs {
    /// Anchor as TIME,RATE (seconds, rate in [0,1]); give exactly two.
    #[arg(long = "anchor", required = true, num_args = 1, value_parser = parse_anchor)]
    pub anchors: Vec<(f64, f64)>,
    #[arg(long, default_value_t = 50)]
    pub points: usize,
    /// Grid start; a tenth of the fastest anchor when omitted.
    #[arg(long)]
    pub t_min: Option<f64>,
    /// Grid end; ten times the slowest anchor when omitted.
    #[arg(long)]
    pub t_max: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_anchor(s: &str) -> Result<(f64, f64), String> {
    let (t, r) = s.split_once(',').ok_or_else(|| format!("expected TIME,RATE, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(t)?, parse(r)?))
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ValidateArgs {
    /// Simulate 2..=this many classes.
    #[arg(long, default_value_t = 3)]
    pub max_classes: usize,
    /// Distance between class centres.
    #[arg(long, default_value_t = 4.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Draws per class (at least 10000).
    #[arg(long, default_value_t = 100_000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[command(flatten)]
    pub synth: SynthParams,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory receiving images-idx3-ubyte and labels-idx1-ubyte.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Serialize)]
struct Envelope<'a, C: Serialize, R: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config: &'a C,
    #[serde(flatten)]
    report: R,
}

fn envelope<'a, C: Serialize, R: Serialize>(command: &'static str, config: &'a C, report: R) -> Envelope<'a, C, R> {
    Envelope {
        tool: "cnnrec",
        version: env!("CARGO_PKG_VERSION"),
        command,
        config,
        report,
    }
}

/// Writes `bytes` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let fail = |e: std::io::Error| CliError::Input(format!("cannot write {}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(bytes).map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serialises");
    s.push('\n');
    s
}

/// Writes the JSON to `out`, or prints it when no path is given. Returns
/// whether the summary should go to stdout.
fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> CliResult<bool> {
    let text = to_json(value);
    match out {
        Some(path) => {
            write_atomic(path, text.as_bytes())?;
            Ok(true)
        }
        None => {
            print!("{text}");
            Ok(false)
        }
    }
}

fn summary(to_stdout: bool, line: &str) {
    if to_stdout {
        println!("{line}");
    } else {
        eprintln!("{line}");
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
}

fn load_params(path: Option<&Path>) -> CliResult<AbilityParams> {
    match path {
        Some(p) => AbilityParams::from_json(&read_text(p)?)
            .map_err(|e| CliError::Input(format!("{}: {e}", p.display()))),
        None => Ok(AbilityParams::reference()),
    }
}

fn load_candidates(path: Option<&Path>) -> CliResult<Vec<CnnSpec>> {
    match path {
        Some(p) => {
            let specs = import_specs(&read_text(p)?).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
            if specs.is_empty() {
                return Err(CliError::Compute(format!("{}: candidate list is empty", p.display())));
            }
            Ok(specs)
        }
        None => Ok(enumerate_candidates(&CandidateRanges::default())?),
    }
}

#[derive(Debug, Deserialize)]
struct AnchorEntry {
    spec: serde_json::Value,
    chi: f64,
}

fn parse_anchor_file(text: &str, source: &str) -> CliResult<Vec<(CnnSpec, f64)>> {
    let entries: Vec<AnchorEntry> =
        serde_json::from_str(text).map_err(|e| CliError::Input(format!("{source}: {e}")))?;
    entries
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            let spec = import_spec(&e.spec.to_string()).map_err(|err| CliError::Input(format!("{source}[{i}]: {err}")))?;
            Ok((spec, e.chi))
        })
        .collect()
}

fn cmd_complexity(args: &ComplexityArgs) -> CliResult<()> {
    let dataset = args.dataset.load()?;
    let report = complexity_report(&dataset, args.descriptors_csv.as_deref())?;
    let stdout = emit_json(args.out.as_deref(), &envelope("complexity", args, &report))?;
    summary(
        stdout,
        &format!(
            "c_all = {:.6} (l = {}, classes = {}, centroid accuracy = {:.4})",
            report.c_all,
            report.l,
            report.class_count,
            report.accuracy()
        ),
    );
    Ok(())
}

fn complexity_report(dataset: &LabeledDataset, csv: Option<&Path>) -> CliResult<ComplexityReport> {
    dataset.check_complete()?;
    let features = extract_features(dataset)?;
    let labels: Vec<usize> = dataset.samples().iter().map(|s| s.class_id).collect();
    if let Some(path) = csv {
        let mut buf = Vec::new();
        write_descriptor_csv(&mut buf, &features, &labels).map_err(|e| CliError::Compute(e.to_string()))?;
        write_atomic(path, &buf)?;
    }
    Ok(complexity_from_features(dataset.name(), &features, &labels, dataset.class_count())?)
}

fn cmd_gen_model(args: &GenModelArgs) -> CliResult<()> {
    let options = args.shape.options();
    if args.enumerate {
        let pattern = match args.q_uniform {
            Some(per_section) => QPattern::Uniform { per_section },
            None => QPattern::NonDecreasing {
                max_per_section: args.q_max,
            },
        };
        let ranges = CandidateRanges {
            base_maps: args.s_range.clone(),
            n_down: args.m_range.clone(),
            q_patterns: vec![pattern],
            input_channels: options.input_channels,
            downsample_kind: options.downsample_kind,
            class_count: options.class_count,
        };
        let specs = enumerate_candidates(&ranges)?;
        let text = to_json(&specs);
        match &args.out {
            Some(p) => {
                write_atomic(p, text.as_bytes())?;
                println!("{} candidate specs written to {}", specs.len(), p.display());
            }
            None => print!("{text}"),
        }
        return Ok(());
    }

    let base_maps = args.base_maps.ok_or_else(|| CliError::Input("--s is required".into()))?;
    let spec = make_spec(base_maps, args.n_down.unwrap_or(args.q.len()), &args.q, options)?;
    let layers = expand_layers(&spec);
    if let Some(path) = &args.layers_csv {
        let mut buf = Vec::new();
        write_layers_csv(&mut buf, &layers).map_err(|e| CliError::Compute(e.to_string()))?;
        write_atomic(path, &buf)?;
    }
    let line = format!(
        "{}: {} MACs ({} in convolutions), {} parameters",
        spec.label(),
        count_macs(&layers, true),
        count_macs(&layers, false),
        count_params(&layers, true)
    );
    match &args.out {
        Some(p) => {
            let mut text = export_spec(&spec);
            text.push('\n');
            write_atomic(p, text.as_bytes())?;
            println!("{line}");
        }
        None => {
            println!("{}", export_spec(&spec));
            eprintln!("{line}");
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct AbilityRow {
    label: String,
    spec: CnnSpec,
    macs: u64,
    depth_correction: f64,
    chi: f64,
}

#[derive(Serialize)]
struct AbilityReport<'a> {
    params: &'a AbilityParams,
    rows: Vec<AbilityRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ceiling: Option<crate::ability::Ceiling>,
}

fn cmd_ability(args: &AbilityArgs) -> CliResult<()> {
    let params = load_params(args.params.as_deref())?;
    let mut specs: Vec<(String, CnnSpec)> = Vec::new();
    for path in &args.spec {
        let spec = import_spec(&read_text(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        specs.push((path.display().to_string(), spec));
    }
    if let Some(path) = &args.candidates {
        specs.extend(load_candidates(Some(path))?.into_iter().map(|s| (s.label(), s)));
    }
    if args.reference {
        specs.extend(
            crate::archgen::reference_specs(params.assumptions.spec_options())
                .into_iter()
                .map(|(name, s)| (name.to_string(), s)),
        );
    }
    let ceiling = match args.ceiling.as_deref() {
        Some(&[s, m]) => Some(ability_ceiling(&params, s, m, &QShape::Even)?),
        Some(_) => return Err(CliError::Input("--ceiling takes S,M".into())),
        None => None,
    };
    if specs.is_empty() && ceiling.is_none() {
        return Err(CliError::Input("nothing to score: give --spec, --candidates, --reference or --ceiling".into()));
    }
    let rows: Vec<AbilityRow> = specs
        .into_iter()
        .map(|(label, spec)| AbilityRow {
            label,
            macs: params.macs(&spec),
            depth_correction: params.depth_correction(spec.n_conv),
            chi: ability_score(&spec, &params),
            spec,
        })
        .collect();
    let report = AbilityReport {
        params: &params,
        rows,
        ceiling,
    };
    let stdout = emit_json(args.out.as_deref(), &envelope("ability", args, &report))?;
    for row in &report.rows {
        summary(stdout, &format!("{:<24} {:<28} chi = {:.4}", row.label, row.spec.label(), row.chi));
    }
    if let Some(c) = &report.ceiling {
        summary(stdout, &format!("ceiling: depth {} q={:?} chi = {:.4}", c.depth, c.q, c.chi));
    }
    Ok(())
}

fn cmd_calibrate(args: &CalibrateArgs) -> CliResult<()> {
    let assumptions = Assumptions {
        input_channels: args.input_channels,
        downsample_kind: args.downsample.into(),
        head: !args.no_head,
    };
    let anchors = match &args.anchors {
        Some(p) => parse_anchor_file(&read_text(p)?, &p.display().to_string())?,
        None => parse_anchor_file(REFERENCE_ANCHORS_JSON, "bundled reference anchors")?
            .into_iter()
            .map(|(s, chi)| {
                let spec = make_spec(s.base_maps, s.n_down, &s.q, assumptions.spec_options())?;
                Ok((spec, chi))
            })
            .collect::<CliResult<Vec<_>>>()?,
    };
    let params = calibrate(&anchors, args.n0, args.gamma, assumptions)?;
    let text = params.to_json() + "\n";
    match &args.out {
        Some(p) => write_atomic(p, text.as_bytes())?,
        None => print!("{text}"),
    }
    let line = format!("a0 = {:.6}, a1 = {:.6}, residuals = {:?}", params.a0, params.a1, params.residuals);
    summary(args.out.is_some(), &line);
    Ok(())
}

fn load_pairs(path: &Path) -> CliResult<Vec<crate::matcher::CalibrationPair>> {
    let file = fs::File::open(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    read_calibration(BufReader::new(file)).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn cmd_fit_match(args: &FitMatchArgs) -> CliResult<()> {
    let m = fit_matching(&load_pairs(&args.calibration)?, args.kind.into())?;
    let stdout = emit_json(args.out.as_deref(), &envelope("fit-match", args, &m))?;
    summary(
        stdout,
        &format!(
            "{:?} matching function over c_all ∈ [{:.6}, {:.6}] from {} pairs",
            m.kind(),
            m.domain.0,
            m.domain.1,
            m.calibration_pairs.len()
        ),
    );
    Ok(())
}

#[derive(Serialize)]
struct RecommendReport<'a> {
    c_all: f64,
    matching: &'a MatchingFunction,
    params: &'a AbilityParams,
    recommendation: &'a crate::matcher::Recommendation,
}

fn cmd_recommend(args: &RecommendArgs) -> CliResult<()> {
    let c_all = if let Some(path) = &args.complexity {
        let value: serde_json::Value =
            serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        value["c_all"]
            .as_f64()
            .ok_or_else(|| CliError::Input(format!("{}: no numeric c_all field", path.display())))?
    } else if let Some(c) = args.c_all {
        c
    } else if args.dataset.format.is_some() {
        complexity_report(&args.dataset.load()?, None)?.c_all
    } else {
        return Err(CliError::Input("give --complexity, --c-all or dataset flags".into()));
    };
    if !(c_all > 0.0 && c_all < 1.0) {
        return Err(CliError::Input(format!("c_all = {c_all} is outside (0, 1)")));
    }
    let matching = match (&args.matching, &args.calibration) {
        (Some(path), _) => {
            let value: serde_json::Value = serde_json::from_str(&read_text(path)?)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            // accept both a bare function and a fit-match report
            let mut fields = value;
            if let Some(obj) = fields.as_object_mut() {
                obj.remove("tool");
                obj.remove("version");
                obj.remove("command");
                obj.remove("config");
            }
            serde_json::from_value::<MatchingFunction>(fields)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        }
        (None, Some(path)) => fit_matching(&load_pairs(path)?, args.kind.into())?,
        (None, None) => return Err(CliError::Input("give --calibration or --matching".into())),
    };
    let params = load_params(args.params.as_deref())?;
    let candidates = load_candidates(args.candidates.as_deref())?;
    let rec = recommend(c_all, &candidates, &params, &matching, args.margin)?;
    let report = RecommendReport {
        c_all,
        matching: &matching,
        params: &params,
        recommendation: &rec,
    };
    let stdout = emit_json(args.out.as_deref(), &envelope("recommend", args, &report))?;
    summary(
        stdout,
        &format!(
            "recommended {} with chi = {:.4} (target {:.4}{})",
            rec.chosen.label(),
            rec.chosen_chi,
            rec.target_chi,
            if rec.undershoot { ", UNDERSHOOT: no candidate reaches the target" } else { "" }
        ),
    );
    Ok(())
}

fn cmd_curve(args: &CurveArgs) -> CliResult<()> {
    let [(t0, r0), (t1, r1)] = args.anchors.as_slice() else {
        return Err(CliError::Input(format!("exactly two --anchor values are needed, got {}", args.anchors.len())));
    };
    let curve = fit_performance_curve(CurveAnchor { t: *t0, rate: *r0 }, CurveAnchor { t: *t1, rate: *r1 })?;
    let t_min = args.t_min.unwrap_or(curve.anchors[0].t / 10.0);
    let t_max = args.t_max.unwrap_or(curve.anchors[1].t * 10.0);
    if !(t_min > 0.0 && t_max > t_min) {
        return Err(CliError::Input(format!("grid range [{t_min}, {t_max}] is invalid")));
    }
    let mut buf = Vec::new();
    write_curve_csv(&mut buf, &curve, &log_grid(t_min, t_max, args.points))?;
    let line = format!(
        "rate(t) = {:.6} + {:.6}·ln t; rate({t_min:.3e}) = {:.4}, rate({t_max:.3e}) = {:.4}",
        curve.a,
        curve.b,
        predict_rate(&curve, t_min)?,
        predict_rate(&curve, t_max)?
    );
    match &args.out {
        Some(p) => {
            write_atomic(p, &buf)?;
            println!("{line}");
        }
        None => {
            std::io::stdout().write_all(&buf).map_err(|e| CliError::Compute(e.to_string()))?;
            eprintln!("{line}");
        }
    }
    Ok(())
}

fn cmd_validate(args: &ValidateArgs) -> CliResult<()> {
    let report = simulate_multiclass_error(args.max_classes, args.separation, args.sigma, args.trials, args.seed)?;
    let stdout = emit_json(args.out.as_deref(), &envelope("validate-2class", args, &report))?;
    for row in &report.rows {
        let ratio = row.ratio_to_two.map_or("n/a".to_string(), |r| format!("{r:.4}"));
        summary(
            stdout,
            &format!("n = {}: error rate {:.6} ± {:.6}, e_n/e_2 = {ratio}", row.classes, row.error_rate, row.std_error),
        );
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> CliResult<()> {
    let task = BlobTask {
        class_count: args.synth.classes,
        samples_per_class: args.synth.per_class,
        image_side: args.synth.side,
        separation: args.synth.separation,
        noise_sigma: args.synth.noise,
        seed: args.seed,
    };
    let dataset = task.generate()?;
    fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", args.out_dir.display())))?;
    let images = args.out_dir.join("images-idx3-ubyte");
    let labels = args.out_dir.join("labels-idx1-ubyte");
    write_idx(&dataset, &images, &labels)?;
    write_atomic(&args.out_dir.join("synth.json"), to_json(&envelope("synth", args, &task)).as_bytes())?;
    println!("{} samples written to {} and {}", dataset.len(), images.display(), labels.display());
    Ok(())
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Complexity(a) => cmd_complexity(a),
        Command::GenModel(a) => cmd_gen_model(a),
        Command::Ability(a) => cmd_ability(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::FitMatch(a) => cmd_fit_match(a),
        Command::Recommend(a) => cmd_recommend(a),
        Command::Curve(a) => cmd_curve(a),
        Command::Validate2Class(a) => cmd_validate(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

/// Parses arguments, runs the command and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}
