//! Matching function from dataset complexity to required ability, the
//! recommendation policy, and the two-anchor performance curve.

use std::cmp::Ordering;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ability::{ability_score, AbilityParams};
use crate::archgen::{count_macs, expand_layers, CnnSpec};

pub const DEFAULT_MARGIN: f64 = 0.05;

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("need at least 2 calibration pairs with distinct c_all, got {0} distinct")]
    TooFewPairs(usize),
    #[error("linear fit has positive slope {slope}; required ability must not grow with c_all")]
    IncreasingFit { slope: f64 },
    #[error("calibration pair {index} is not finite")]
    NonFinitePair { index: usize },
    #[error("calibration line {line}: {message}")]
    CalibrationFile { line: usize, message: String },
    #[error("candidate list is empty")]
    NoCandidates,
    #[error("margin {0} must be finite and ≥ 0")]
    BadMargin(f64),
    #[error("anchor times must be distinct and positive (got {0} and {1})")]
    BadAnchorTimes(f64, f64),
    #[error("anchor rate {0} is outside [0, 1]")]
    BadRate(f64),
    #[error("time {0} must be positive")]
    NonPositiveTime(f64),
    #[error("throughput {0} must be positive")]
    NonPositiveThroughput(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MatchError>;

/// One calibration task: its complexity score and the ability of the model
/// that just reaches 100% training accuracy on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPair {
    pub task: String,
    pub c_all: f64,
    pub chi_optimal: f64,
}

/// Reads the JSON-lines calibration format, one `{task, c_all, chi_optimal}`
/// object per line. Blank lines are skipped.
pub fn read_calibration<R: BufRead>(reader: R) -> Result<Vec<CalibrationPair>> {
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: CalibrationPair = serde_json::from_str(&line).map_err(|e| MatchError::CalibrationFile {
            line: i + 1,
            message: e.to_string(),
        })?;
        pairs.push(pair);
    }
    Ok(pairs)
}

pub fn write_calibration<W: Write>(mut out: W, pairs: &[CalibrationPair]) -> Result<()> {
    for p in pairs {
        serde_json::to_writer(&mut out, p).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MatchKind {
    #[default]
    Linear,
    IsotonicDecreasing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum MatchModel {
    Linear { intercept: f64, slope: f64 },
    /// Fitted values at each distinct `c_all`, ascending; evaluated by
    /// linear interpolation between breakpoints.
    IsotonicDecreasing { breakpoints: Vec<(f64, f64)> },
}

/// Monotone non-increasing map from `c_all` to required χ. Inputs outside
/// the calibrated `c_all` range are clamped to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchingFunction {
    pub model: MatchModel,
    pub domain: (f64, f64),
    pub calibration_pairs: Vec<CalibrationPair>,
}

impl MatchingFunction {
    pub fn kind(&self) -> MatchKind {
        match self.model {
            MatchModel::Linear { .. } => MatchKind::Linear,
            MatchModel::IsotonicDecreasing { .. } => MatchKind::IsotonicDecreasing,
        }
    }

    pub fn evaluate(&self, c_all: f64) -> f64 {
        let c = c_all.clamp(self.domain.0, self.domain.1);
        match &self.model {
            MatchModel::Linear { intercept, slope } => intercept + slope * c,
            MatchModel::IsotonicDecreasing { breakpoints } => interpolate(breakpoints, c),
        }
    }
}

fn interpolate(points: &[(f64, f64)], x: f64) -> f64 {
    let j = points.partition_point(|p| p.0 < x);
    if j == 0 {
        return points[0].1;
    }
    if j == points.len() {
        return points[j - 1].1;
    }
    let (x0, y0) = points[j - 1];
    let (x1, y1) = points[j];
    if x == x1 {
        return y1;
    }
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Weighted pool-adjacent-violators for a non-increasing fit. Input must be
/// sorted by x; returns one fitted value per input point.
pub fn pav_decreasing(values: &[f64], weights: &[f64]) -> Vec<f64> {
    // blocks of (mean, weight, count)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 {
            let (m2, w2, n2) = blocks[blocks.len() - 1];
            let (m1, w1, n1) = blocks[blocks.len() - 2];
            if m1 >= m2 {
                break;
            }
            blocks.truncate(blocks.len() - 2);
            blocks.push(((m1 * w1 + m2 * w2) / (w1 + w2), w1 + w2, n1 + n2));
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, _, n)| std::iter::repeat_n(m, n))
        .collect()
}

/// Fits the matching function. Duplicate `c_all` values are pooled into
/// their mean χ for the isotonic fit; the linear fit uses every pair.
pub fn fit_matching(pairs: &[CalibrationPair], kind: MatchKind) -> Result<MatchingFunction> {
    if let Some(index) = pairs.iter().position(|p| !p.c_all.is_finite() || !p.chi_optimal.is_finite()) {
        return Err(MatchError::NonFinitePair { index });
    }
    let mut sorted: Vec<(f64, f64)> = pairs.iter().map(|p| (p.c_all, p.chi_optimal)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut grouped: Vec<(f64, f64, f64)> = Vec::new(); // (x, sum_y, count)
    for &(x, y) in &sorted {
        match grouped.last_mut() {
            Some(g) if g.0 == x => {
                g.1 += y;
                g.2 += 1.0;
            }
            _ => grouped.push((x, y, 1.0)),
        }
    }
    if grouped.len() < 2 {
        return Err(MatchError::TooFewPairs(grouped.len()));
    }
    let domain = (grouped[0].0, grouped[grouped.len() - 1].0);

    let model = match kind {
        MatchKind::Linear => {
            let n = sorted.len() as f64;
            let mx = sorted.iter().map(|p| p.0).sum::<f64>() / n;
            let my = sorted.iter().map(|p| p.1).sum::<f64>() / n;
            let sxy: f64 = sorted.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
            let sxx: f64 = sorted.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
            let slope = sxy / sxx;
            if slope > 0.0 {
                return Err(MatchError::IncreasingFit { slope });
            }
            MatchModel::Linear {
                intercept: my - slope * mx,
                slope,
            }
        }
        MatchKind::IsotonicDecreasing => {
            let means: Vec<f64> = grouped.iter().map(|g| g.1 / g.2).collect();
            let weights: Vec<f64> = grouped.iter().map(|g| g.2).collect();
            let fitted = pav_decreasing(&means, &weights);
            MatchModel::IsotonicDecreasing {
                breakpoints: grouped.iter().map(|g| g.0).zip(fitted).collect(),
            }
        }
    };
    Ok(MatchingFunction {
        model,
        domain,
        calibration_pairs: pairs.to_vec(),
    })
}

/// A candidate with its ability score and MAC count.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredCandidate {
    pub spec: CnnSpec,
    pub chi: f64,
    pub macs: u64,
}

pub fn score_candidates(candidates: &[CnnSpec], params: &AbilityParams) -> Vec<ScoredCandidate> {
    candidates
        .iter()
        .map(|spec| ScoredCandidate {
            spec: spec.clone(),
            chi: ability_score(spec, params),
            macs: params.macs(spec),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    pub index: usize,
    pub target_chi: f64,
    pub chosen_chi: f64,
    /// No candidate reached the target; the strongest one was returned.
    pub undershoot: bool,
}

/// Orders by χ, then fewer MACs, then spec order.
fn by_chi_then_cost(a: &ScoredCandidate, b: &ScoredCandidate) -> Ordering {
    a.chi
        .total_cmp(&b.chi)
        .then(a.macs.cmp(&b.macs))
        .then_with(|| a.spec.cmp(&b.spec))
}

/// Picks the candidate with the smallest χ ≥ `target`, or the largest χ
/// (flagged as undershoot) when none qualifies.
pub fn select_candidate(target: f64, scored: &[ScoredCandidate]) -> Result<Selection> {
    if scored.is_empty() {
        return Err(MatchError::NoCandidates);
    }
    let reaching = scored
        .iter()
        .enumerate()
        .filter(|(_, c)| c.chi >= target)
        .min_by(|a, b| by_chi_then_cost(a.1, b.1));
    let (index, undershoot) = match reaching {
        Some((i, _)) => (i, false),
        None => {
            // strongest χ; among equals, still prefer fewer MACs
            let (i, _) = scored
                .iter()
                .enumerate()
                .min_by(|a, b| {
                    b.1.chi
                        .total_cmp(&a.1.chi)
                        .then(a.1.macs.cmp(&b.1.macs))
                        .then_with(|| a.1.spec.cmp(&b.1.spec))
                })
                .expect("non-empty");
            (i, true)
        }
    };
    Ok(Selection {
        index,
        target_chi: target,
        chosen_chi: scored[index].chi,
        undershoot,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Recommendation {
    pub chosen: CnnSpec,
    pub target_chi: f64,
    pub chosen_chi: f64,
    pub undershoot: bool,
    pub required_chi: f64,
    pub margin: f64,
    pub candidates: Vec<ScoredCandidate>,
}

/// Target χ is `m(c_all)·(1 + margin)`.
pub fn recommend(
    c_all: f64,
    candidates: &[CnnSpec],
    params: &AbilityParams,
    m: &MatchingFunction,
    margin: f64,
) -> Result<Recommendation> {
    if !(margin >= 0.0 && margin.is_finite()) {
        return Err(MatchError::BadMargin(margin));
    }
    if candidates.is_empty() {
        return Err(MatchError::NoCandidates);
    }
    let required = m.evaluate(c_all);
    let target = required * (1.0 + margin);
    let scored = score_candidates(candidates, params);
    let sel = select_candidate(target, &scored)?;
    Ok(Recommendation {
        chosen: scored[sel.index].spec.clone(),
        target_chi: sel.target_chi,
        chosen_chi: sel.chosen_chi,
        undershoot: sel.undershoot,
        required_chi: required,
        margin,
        candidates: scored,
    })
}

/// `(forward time in seconds, validation rate)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveAnchor {
    pub t: f64,
    pub rate: f64,
}

/// `r(t) = clamp(a + b·ln t, 0, 1)` through two measured models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformanceCurve {
    pub a: f64,
    pub b: f64,
    /// Anchors sorted by time.
    pub anchors: [CurveAnchor; 2],
}

impl PerformanceCurve {
    /// Unclipped `a + b·ln t`.
    pub fn raw(&self, t: f64) -> f64 {
        self.a + self.b * t.ln()
    }
}

pub fn fit_performance_curve(first: CurveAnchor, second: CurveAnchor) -> Result<PerformanceCurve> {
    for r in [first.rate, second.rate] {
        if !(0.0..=1.0).contains(&r) {
            return Err(MatchError::BadRate(r));
        }
    }
    let valid_time = |t: f64| t > 0.0 && t.is_finite();
    if !valid_time(first.t) || !valid_time(second.t) || first.t == second.t {
        return Err(MatchError::BadAnchorTimes(first.t, second.t));
    }
    let (lo, hi) = if first.t < second.t { (first, second) } else { (second, first) };
    let (l0, l1) = (lo.t.ln(), hi.t.ln());
    let b = (hi.rate - lo.rate) / (l1 - l0);
    // interpolation form keeps both anchors exact to rounding
    let a = (lo.rate * l1 - hi.rate * l0) / (l1 - l0);
    Ok(PerformanceCurve {
        a,
        b,
        anchors: [lo, hi],
    })
}

pub fn predict_rate(curve: &PerformanceCurve, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(MatchError::NonPositiveTime(t));
    }
    Ok(curve.raw(t).clamp(0.0, 1.0))
}

/// `count_macs(spec) / throughput`, head included.
pub fn estimate_forward_time(spec: &CnnSpec, macs_per_second: f64) -> Result<f64> {
    if !(macs_per_second > 0.0) {
        return Err(MatchError::NonPositiveThroughput(macs_per_second));
    }
    Ok(count_macs(&expand_layers(spec), true) as f64 / macs_per_second)
}

/// `points` log-spaced times covering `[t_min, t_max]`.
pub fn log_grid(t_min: f64, t_max: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![(t_min * t_max).sqrt()],
        _ => {
            let (l0, l1) = (t_min.ln(), t_max.ln());
            (0..points)
                .map(|i| (l0 + (l1 - l0) * i as f64 / (points - 1) as f64).exp())
                .collect()
        }
    }
}

/// Writes `t,predicted_rate,anchor` rows: the grid plus both anchors, sorted
/// by time.
pub fn write_curve_csv<W: Write>(out: W, curve: &PerformanceCurve, grid: &[f64]) -> Result<()> {
    let mut rows: Vec<(f64, bool)> = grid.iter().map(|&t| (t, false)).collect();
    rows.extend(curve.anchors.iter().map(|a| (a.t, true)));
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "predicted_rate", "anchor"])
        .map_err(std::io::Error::from)?;
    for (t, anchor) in rows {
        let rate = predict_rate(curve, t)?;
        w.write_record([format!("{t:.9e}"), format!("{rate:.12}"), (anchor as u8).to_string()])
            .map_err(std::io::Error::from)?;
    }
    w.flush()?;
    Ok(())
}
