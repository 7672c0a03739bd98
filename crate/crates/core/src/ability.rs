//! Ability score of a generated architecture.
//!
//! `χ = f · g(N)` where the structure term is affine in the decimal log of
//! total multiply-accumulates, `f = a0 + a1·log10(MACs)`, and the depth
//! correction is a saturating logistic penalty
//! `g(N) = min(1, 2 / (1 + exp(gamma·max(0, N − n0))))`.
//! `g` is exactly 1 up to `n0` layers and decays beyond it, which gives χ a
//! maximum over depth whenever `gamma > 0`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archgen::{
    count_macs, expand_layers, make_spec, ArchError, CnnSpec, DownsampleKind, SpecOptions, DEFAULT_CLASS_COUNT,
    DEFAULT_INPUT_CHANNELS, REFERENCE_CHI, REFERENCE_MODELS,
};

pub const DEFAULT_N0: f64 = 50.0;
pub const DEFAULT_GAMMA: f64 = 0.05;
/// Upper end of the depth scan in [`ability_ceiling`].
pub const CEILING_SCAN_MAX_DEPTH: usize = 512;

const DEFAULT_PARAMS_JSON: &str = include_str!("../data/default_params.json");

#[derive(Debug, Error)]
pub enum AbilityError {
    #[error("need at least 2 calibration anchors, got {0}")]
    TooFewAnchors(usize),
    #[error("degenerate calibration: all anchors have the same MAC count")]
    DegenerateDesign,
    #[error("calibration gave a1 = {0}, but ability must grow with structure size")]
    NonIncreasing(f64),
    #[error("gamma = 0 disables the depth correction, so χ has no maximum")]
    NoCeiling,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error("invalid params JSON at {path}: {message}")]
    Schema { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, AbilityError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Fitted,
    Default,
}

/// Architecture conventions the coefficients were fitted under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assumptions {
    pub input_channels: usize,
    pub downsample_kind: DownsampleKind,
    /// Whether the classifier head's MACs count towards the structure size.
    pub head: bool,
}

impl Default for Assumptions {
    fn default() -> Self {
        Self {
            input_channels: DEFAULT_INPUT_CHANNELS,
            downsample_kind: DownsampleKind::Pooling,
            head: true,
        }
    }
}

impl Assumptions {
    pub fn spec_options(&self) -> SpecOptions {
        SpecOptions {
            input_channels: self.input_channels,
            downsample_kind: self.downsample_kind,
            class_count: DEFAULT_CLASS_COUNT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbilityParams {
    pub a0: f64,
    pub a1: f64,
    pub n0: f64,
    pub gamma: f64,
    pub provenance: Provenance,
    pub assumptions: Assumptions,
    #[serde(default)]
    pub residuals: Vec<f64>,
}

impl AbilityParams {
    /// Hand-set coefficients (`provenance = default`).
    pub fn new(a0: f64, a1: f64, n0: f64, gamma: f64, assumptions: Assumptions) -> Result<Self> {
        let p = Self {
            a0,
            a1,
            n0,
            gamma,
            provenance: Provenance::Default,
            assumptions,
            residuals: Vec::new(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.a0, self.a1, self.n0, self.gamma].iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(AbilityError::InvalidParams("coefficients must be finite".into()));
        }
        if self.a1 <= 0.0 {
            return Err(AbilityError::InvalidParams(format!("a1 = {} must be > 0", self.a1)));
        }
        if self.n0 <= 0.0 {
            return Err(AbilityError::InvalidParams(format!("n0 = {} must be > 0", self.n0)));
        }
        if self.gamma < 0.0 {
            return Err(AbilityError::InvalidParams(format!("gamma = {} must be ≥ 0", self.gamma)));
        }
        if self.provenance == Provenance::Fitted && self.residuals.len() < 2 {
            return Err(AbilityError::InvalidParams(
                "fitted params must carry one residual per calibration anchor".into(),
            ));
        }
        Ok(())
    }

    /// Coefficients fitted to the six reference models, shipped with the crate.
    pub fn reference() -> Self {
        Self::from_json(DEFAULT_PARAMS_JSON).expect("bundled params are valid")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(json);
        let p: Self = serde_path_to_error::deserialize(de).map_err(|e| AbilityError::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("params serialise")
    }

    pub fn structure_term(&self, macs: u64) -> f64 {
        assert!(macs > 0, "a valid spec always has MACs");
        self.a0 + self.a1 * (macs as f64).log10()
    }

    pub fn depth_correction(&self, depth: usize) -> f64 {
        depth_correction(depth, self.n0, self.gamma)
    }

    /// MAC count under the fitted conventions (head included or not).
    pub fn macs(&self, spec: &CnnSpec) -> u64 {
        count_macs(&expand_layers(spec), self.assumptions.head)
    }
}

/// `min(1, 2 / (1 + exp(gamma·max(0, N − n0))))`.
pub fn depth_correction(depth: usize, n0: f64, gamma: f64) -> f64 {
    let excess = (depth as f64 - n0).max(0.0);
    (2.0 / (1.0 + (gamma * excess).exp())).min(1.0)
}

pub fn ability_score(spec: &CnnSpec, params: &AbilityParams) -> f64 {
    params.structure_term(params.macs(spec)) * params.depth_correction(spec.n_conv)
}

/// Least-squares fit of `(a0, a1)` with the depth correction held fixed.
///
/// The model `χ = g·a0 + g·log10(MACs)·a1` is linear in the coefficients, so
/// the 2×2 normal equations give the exact minimiser.
pub fn calibrate(
    anchors: &[(CnnSpec, f64)],
    n0: f64,
    gamma: f64,
    assumptions: Assumptions,
) -> Result<AbilityParams> {
    if anchors.len() < 2 {
        return Err(AbilityError::TooFewAnchors(anchors.len()));
    }
    let probe = AbilityParams {
        a0: 0.0,
        a1: 1.0,
        n0,
        gamma,
        provenance: Provenance::Default,
        assumptions,
        residuals: Vec::new(),
    };
    probe.validate()?;
    for (spec, _) in anchors {
        spec.validate()?;
    }

    let macs: Vec<u64> = anchors.iter().map(|(s, _)| probe.macs(s)).collect();
    if macs.iter().all(|&m| m == macs[0]) {
        return Err(AbilityError::DegenerateDesign);
    }
    // columns u = g, v = g·x
    let rows: Vec<(f64, f64, f64)> = anchors
        .iter()
        .zip(&macs)
        .map(|((spec, chi), &m)| {
            let g = probe.depth_correction(spec.n_conv);
            (g, g * (m as f64).log10(), *chi)
        })
        .collect();
    let (mut suu, mut suv, mut svv, mut suy, mut svy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(u, v, y) in &rows {
        suu += u * u;
        suv += u * v;
        svv += v * v;
        suy += u * y;
        svy += v * y;
    }
    let det = suu * svv - suv * suv;
    if det.abs() <= 1e-12 * suu * svv {
        return Err(AbilityError::DegenerateDesign);
    }
    let a0 = (svv * suy - suv * svy) / det;
    let a1 = (suu * svy - suv * suy) / det;
    if a1 <= 0.0 {
        return Err(AbilityError::NonIncreasing(a1));
    }
    let residuals = rows.iter().map(|&(u, v, y)| a0 * u + a1 * v - y).collect();
    let params = AbilityParams {
        a0,
        a1,
        n0,
        gamma,
        provenance: Provenance::Fitted,
        assumptions,
        residuals,
    };
    params.validate()?;
    Ok(params)
}

/// The six reference models paired with their published scores.
pub fn reference_anchors(assumptions: Assumptions) -> Vec<(CnnSpec, f64)> {
    REFERENCE_MODELS
        .iter()
        .zip(REFERENCE_CHI)
        .map(|(&(_, s, q), chi)| {
            let spec = make_spec(s, q.len(), q, assumptions.spec_options()).expect("reference model is valid");
            (spec, chi)
        })
        .collect()
}

/// How a depth `N` is spread over the `M` sections.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QShape {
    /// As even as possible; later sections take the remainder.
    Even,
    /// Proportional to integer weights (largest remainder, ties to later
    /// sections), at least one layer per section.
    Weighted(Vec<usize>),
}

impl QShape {
    /// Distributes `depth ≥ sections` layers; `None` if impossible.
    pub fn distribute(&self, depth: usize, sections: usize) -> Option<Vec<usize>> {
        if sections == 0 || depth < sections {
            return None;
        }
        let weights = match self {
            QShape::Even => vec![1; sections],
            QShape::Weighted(w) if w.len() == sections && w.iter().any(|&x| x > 0) => w.clone(),
            QShape::Weighted(_) => return None,
        };
        let total: usize = weights.iter().sum();
        let spare = depth - sections;
        let mut q: Vec<usize> = weights.iter().map(|w| 1 + spare * w / total).collect();
        let mut remainders: Vec<(usize, usize)> =
            weights.iter().enumerate().map(|(i, w)| ((spare * w) % total, i)).collect();
        // largest remainder first, later section first on ties
        remainders.sort_by(|a, b| b.cmp(a));
        let assigned: usize = q.iter().sum();
        for &(_, i) in remainders.iter().take(depth - assigned) {
            q[i] += 1;
        }
        Some(q)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ceiling {
    pub depth: usize,
    pub q: Vec<usize>,
    pub chi: f64,
}

/// Maximum of χ over depths `M..=512` for a fixed width family. The
/// smallest maximising depth wins ties.
pub fn ability_ceiling(params: &AbilityParams, base_maps: usize, n_down: usize, shape: &QShape) -> Result<Ceiling> {
    if params.gamma == 0.0 {
        return Err(AbilityError::NoCeiling);
    }
    let mut best: Option<Ceiling> = None;
    for depth in n_down..=CEILING_SCAN_MAX_DEPTH {
        let Some(q) = shape.distribute(depth, n_down) else {
            continue;
        };
        let spec = make_spec(base_maps, n_down, &q, params.assumptions.spec_options())?;
        let chi = ability_score(&spec, params);
        if best.as_ref().is_none_or(|b| chi > b.chi) {
            best = Some(Ceiling { depth, q, chi });
        }
    }
    best.ok_or_else(|| AbilityError::InvalidParams("q shape does not fit the section count".into()))
}
