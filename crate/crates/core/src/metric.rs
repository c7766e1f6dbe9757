//! Distance geometry of the context space: normalized Euclidean distance,
//! origin-distance series, earthquake-profile detection and shape
//! classification.
//!
//! All distances are computed over per-property min-max-normalized
//! coordinates, so heterogeneous units compare and affine relabelings of a
//! domain cancel out.

use serde::{Deserialize, Serialize};

use crate::context::{ContextFlow, ContextInstance, ContextSchema};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OriginMode {
    LowerCorner,
    Midpoint,
    Explicit,
}

/// The reference point of the context space against which oscillation is
/// measured. The resolved origin lives in normalized space and may be
/// off-grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginSpec {
    pub mode: OriginMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
}

impl Default for OriginSpec {
    fn default() -> Self {
        OriginSpec {
            mode: OriginMode::LowerCorner,
            values: None,
        }
    }
}

impl OriginSpec {
    pub fn lower_corner() -> Self {
        Self::default()
    }

    pub fn midpoint() -> Self {
        OriginSpec {
            mode: OriginMode::Midpoint,
            values: None,
        }
    }

    pub fn explicit(values: Vec<f64>) -> Self {
        OriginSpec {
            mode: OriginMode::Explicit,
            values: Some(values),
        }
    }

    /// Validate against a schema; explicit origins must be valid instances.
    pub fn check(&self, schema: &ContextSchema) -> Result<()> {
        match self.mode {
            OriginMode::Explicit => {
                let values = self.values.as_ref().ok_or_else(|| {
                    Error::Config("explicit origin requires `values`".into())
                })?;
                let inst = ContextInstance::new(values.clone());
                let report = crate::context::validate_instance(schema, &inst)?;
                if !report.is_valid() {
                    return Err(Error::Config(format!(
                        "explicit origin is not a valid instance: {}",
                        report
                            .violations
                            .iter()
                            .map(|v| v.to_string())
                            .collect::<Vec<_>>()
                            .join("; ")
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// The origin as normalized coordinates.
    pub fn resolve(&self, schema: &ContextSchema) -> Vec<f64> {
        match self.mode {
            OriginMode::LowerCorner => vec![0.0; schema.arity()],
            OriginMode::Midpoint => vec![0.5; schema.arity()],
            OriginMode::Explicit => {
                let values = self.values.as_ref().expect("checked at construction");
                values
                    .iter()
                    .zip(schema.properties())
                    .map(|(&v, p)| normalize_value(v, p.lower(), p.upper()))
                    .collect()
            }
        }
    }
}

/// Thresholds quantifying "violent" variation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpConfig {
    /// Ratio between the last and first transition distance of a window.
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Absolute floor on the violent transition, in normalized distance.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Maximum window length, in transitions.
    #[serde(default = "default_window_max")]
    pub window_max: usize,
}

fn default_rho() -> f64 {
    4.0
}

fn default_epsilon() -> f64 {
    0.25
}

fn default_window_max() -> usize {
    8
}

impl Default for EpConfig {
    fn default() -> Self {
        EpConfig {
            rho: default_rho(),
            epsilon: default_epsilon(),
            window_max: default_window_max(),
        }
    }
}

impl EpConfig {
    pub fn check(&self) -> Result<()> {
        if self.rho.is_nan() || self.rho <= 1.0 {
            return Err(Error::Config(format!("ep.rho must exceed 1, got {}", self.rho)));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::Config(format!(
                "ep.epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.window_max < 2 {
            return Err(Error::Config("ep.window_max must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Escalating,
    Collapsing,
}

/// A violent-variation window: instance indices `start..=end`, using
/// transitions `start..end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpWindow {
    pub start: usize,
    pub end: usize,
    pub direction: Direction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeClass {
    Ramp,
    PlateauOscillation,
    CrescendoPeak,
    Unclassified,
}

impl ShapeClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            ShapeClass::Ramp => "ramp",
            ShapeClass::PlateauOscillation => "plateau_oscillation",
            ShapeClass::CrescendoPeak => "crescendo_peak",
            ShapeClass::Unclassified => "unclassified",
        }
    }
}

/// Full profile of a flow: detected windows, oscillation flag, the
/// origin-distance series and its shape class.
#[derive(Debug, Clone, Serialize)]
pub struct EarthquakeProfileReport {
    pub windows: Vec<EpWindow>,
    pub ep_count: usize,
    pub oscillation_satisfied: bool,
    pub origin_distance_series: Vec<f64>,
    pub shape: ShapeClass,
}

fn normalize_value(v: f64, lower: f64, upper: f64) -> f64 {
    let span = upper - lower;
    if span == 0.0 {
        0.0
    } else {
        (v - lower) / span
    }
}

/// Normalized coordinates of an instance.
pub fn normalized(schema: &ContextSchema, inst: &ContextInstance) -> Vec<f64> {
    inst.values()
        .iter()
        .zip(schema.properties())
        .map(|(&v, p)| normalize_value(v, p.lower(), p.upper()))
        .collect()
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Euclidean distance over normalized coordinates. Symmetric, zero iff equal.
pub fn distance(schema: &ContextSchema, a: &ContextInstance, b: &ContextInstance) -> Result<f64> {
    if a.len() != schema.arity() || b.len() != schema.arity() {
        return Err(Error::Precondition(format!(
            "distance: instances must have arity {}",
            schema.arity()
        )));
    }
    Ok(euclidean(&normalized(schema, a), &normalized(schema, b)))
}

/// Distance of every flow instance to the resolved origin.
pub fn origin_distance_series(schema: &ContextSchema, flow: &ContextFlow) -> Result<Vec<f64>> {
    let origin = schema.origin().resolve(schema);
    flow.instances
        .iter()
        .map(|inst| {
            if inst.len() != schema.arity() {
                return Err(Error::Precondition(format!(
                    "origin series: instance arity {} != {}",
                    inst.len(),
                    schema.arity()
                )));
            }
            Ok(euclidean(&normalized(schema, inst), &origin))
        })
        .collect()
}

/// Distances between consecutive flow instances (length = flow length - 1).
pub fn consecutive_distances(schema: &ContextSchema, flow: &ContextFlow) -> Result<Vec<f64>> {
    flow.instances
        .windows(2)
        .map(|w| distance(schema, &w[0], &w[1]))
        .collect()
}

fn window_direction(first: f64, last: f64, cfg: &EpConfig) -> Option<Direction> {
    if last >= cfg.rho * first && last >= cfg.epsilon {
        Some(Direction::Escalating)
    } else if first >= cfg.rho * last && first >= cfg.epsilon {
        Some(Direction::Collapsing)
    } else {
        None
    }
}

/// Greedy window scan over the transition-distance sequence.
///
/// A window of j transitions (2 <= j <= window_max) qualifies when its last
/// transition is at least rho times its first and clears the epsilon floor
/// (escalating), or the mirror condition holds (collapsing). Windows are
/// selected left to right by earliest qualifying end, taking the longest
/// window at that end; selected windows share no transition, so the count is
/// the maximum number of disjoint qualifying windows.
fn scan_windows(dists: &[f64], cfg: &EpConfig) -> Vec<EpWindow> {
    let n = dists.len();
    let mut windows = Vec::new();
    let mut cursor = 0; // first transition index still available
    let mut end_t = cursor + 1;
    while end_t < n {
        let mut found = None;
        let low = cursor.max((end_t + 1).saturating_sub(cfg.window_max));
        for start_t in low..end_t {
            if let Some(direction) = window_direction(dists[start_t], dists[end_t], cfg) {
                found = Some(EpWindow {
                    start: start_t,
                    end: end_t + 1,
                    direction,
                });
                break; // smallest start = longest window at this end
            }
        }
        if let Some(w) = found {
            windows.push(w);
            cursor = end_t + 1;
            end_t = cursor + 1;
        } else {
            end_t += 1;
        }
    }
    windows
}

/// Count-only variant of the window scan for hot paths.
pub(crate) fn scan_window_count(dists: &[f64], cfg: &EpConfig) -> usize {
    scan_windows(dists, cfg).len()
}

fn oscillation_holds(series: &[f64]) -> bool {
    series.windows(3).all(|w| {
        (w[0] >= w[1] && w[1] <= w[2]) || (w[0] <= w[1] && w[1] >= w[2])
    })
}

/// Detect the earthquake profile of a flow. Requires length >= 3.
pub fn detect_ep(
    schema: &ContextSchema,
    flow: &ContextFlow,
    cfg: &EpConfig,
) -> Result<EarthquakeProfileReport> {
    if flow.len() < 3 {
        return Err(Error::Precondition(format!(
            "earthquake profiling needs a flow of length >= 3, got {}",
            flow.len()
        )));
    }
    cfg.check()?;
    let dists = consecutive_distances(schema, flow)?;
    let windows = scan_windows(&dists, cfg);
    let series = origin_distance_series(schema, flow)?;
    let shape = classify_shape(&series)?;
    Ok(EarthquakeProfileReport {
        ep_count: windows.len(),
        windows,
        oscillation_satisfied: oscillation_holds(&series),
        origin_distance_series: series,
        shape,
    })
}

/// The EP objective term: number of violent-variation windows, as a real.
pub fn ep_score(schema: &ContextSchema, flow: &ContextFlow, cfg: &EpConfig) -> Result<f64> {
    Ok(detect_ep(schema, flow, cfg)?.ep_count as f64)
}

/// Shape-classification thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeConfig {
    /// Minimum |least-squares slope| (per step) for a ramp.
    pub slope_min: f64,
    /// Minimum (max - mean) / range for a crescendo peak.
    pub prominence_min: f64,
    /// Leftmost admissible peak position, as a fraction of the index range.
    pub peak_position_min: f64,
}

impl Default for ShapeConfig {
    fn default() -> Self {
        ShapeConfig {
            slope_min: 0.01,
            prominence_min: 0.5,
            peak_position_min: 0.25,
        }
    }
}

fn least_squares_slope(series: &[f64]) -> f64 {
    let n = series.len() as f64;
    let x_mean = (n - 1.0) / 2.0;
    let y_mean = series.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &y) in series.iter().enumerate() {
        let dx = i as f64 - x_mean;
        num += dx * (y - y_mean);
        den += dx * dx;
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Classify an origin-distance series, with the default thresholds.
pub fn classify_shape(series: &[f64]) -> Result<ShapeClass> {
    classify_shape_with(series, &ShapeConfig::default())
}

/// Classification: crescendo peak when the maximum is prominent, sits
/// strictly inside the admissible index range and the pre-peak deltas do not
/// shrink on average; otherwise ramp on a clear linear trend; otherwise
/// plateau/oscillation.
pub fn classify_shape_with(series: &[f64], cfg: &ShapeConfig) -> Result<ShapeClass> {
    let m = series.len();
    if m < 3 {
        return Err(Error::Precondition(format!(
            "shape classification needs a series of length >= 3, got {m}"
        )));
    }
    let max = series.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = series.iter().cloned().fold(f64::INFINITY, f64::min);
    let range = max - min;
    let mean = series.iter().sum::<f64>() / m as f64;
    let prominence = if range == 0.0 { 0.0 } else { (max - mean) / range };
    let peak_idx = series
        .iter()
        .position(|&v| v == max)
        .expect("non-empty series");

    let last = m - 1;
    let inside = (peak_idx as f64) > cfg.peak_position_min * last as f64 && peak_idx < last;
    if prominence >= cfg.prominence_min && inside && pre_peak_deltas_non_decreasing(series, peak_idx)
    {
        return Ok(ShapeClass::CrescendoPeak);
    }
    if least_squares_slope(series).abs() >= cfg.slope_min {
        return Ok(ShapeClass::Ramp);
    }
    Ok(ShapeClass::PlateauOscillation)
}

/// Whether the consecutive deltas before the peak trend non-negative
/// (least-squares slope of the delta sequence >= 0).
fn pre_peak_deltas_non_decreasing(series: &[f64], peak_idx: usize) -> bool {
    if peak_idx < 2 {
        return true;
    }
    let deltas: Vec<f64> = series[..=peak_idx].windows(2).map(|w| w[1] - w[0]).collect();
    least_squares_slope(&deltas) >= 0.0
}
