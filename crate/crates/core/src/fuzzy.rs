//! Mamdani congestion scoring from (density, speed) pairs: Gaussian input
//! memberships, min activation, clipped max aggregation and centroid
//! defuzzification over four triangular output levels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of labels per input variable.
pub const INPUT_LABELS: usize = 3;
/// Default defuzzification grid size. 3000 intervals put every output peak on a node.
pub const DEFAULT_RESOLUTION: usize = 3001;
/// Smallest accepted defuzzification grid.
pub const MIN_RESOLUTION: usize = 1001;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FuzzyError {
    #[error("variable '{name}' has a degenerate range [{min}, {max}]")]
    DegenerateRange { name: String, min: f64, max: f64 },
    #[error("variable '{0}' has no finite calibration values")]
    EmptyCalibration(String),
    #[error("non-finite input {0}")]
    NonFinite(f64),
    #[error("no rule is active, congestion state is undefined")]
    NoActivation,
    #[error("density and speed series differ in length: {density} vs {speed}")]
    LengthMismatch { density: usize, speed: usize },
    #[error("grid resolution must be at least {MIN_RESOLUTION}, got {0}")]
    Resolution(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputLabel {
    Low,
    Medium,
    High,
}

impl InputLabel {
    pub const ALL: [InputLabel; 3] = [InputLabel::Low, InputLabel::Medium, InputLabel::High];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Low,
    Medium,
    High,
    Full,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::Low, Level::Medium, Level::High, Level::Full];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Position of the triangle's peak on `[0, 1]`.
    pub fn peak(self) -> f64 {
        self.index() as f64 / 3.0
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Low => "low",
            Level::Medium => "medium",
            Level::High => "high",
            Level::Full => "full",
        }
    }
}

impl std::fmt::Display for Level {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Three equally spaced Gaussian sets spanning `[min, max]` with a shared width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzyVariable {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub centers: [f64; INPUT_LABELS],
    pub sigma: f64,
}

impl FuzzyVariable {
    pub fn from_range(name: &str, min: f64, max: f64) -> Result<Self, FuzzyError> {
        if !(min.is_finite() && max.is_finite() && max > min) {
            return Err(FuzzyError::DegenerateRange {
                name: name.to_string(),
                min,
                max,
            });
        }
        let span = max - min;
        let m = INPUT_LABELS as f64;
        let centers = std::array::from_fn(|i| min + i as f64 / (m - 1.0) * span);
        Ok(FuzzyVariable {
            name: name.to_string(),
            min,
            max,
            centers,
            sigma: span / (2.0 * m),
        })
    }

    /// Calibrates the universe on the finite entries of `values`.
    pub fn build(name: &str, values: &[f64]) -> Result<Self, FuzzyError> {
        let finite = values.iter().copied().filter(|v| v.is_finite());
        let (min, max) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
        if min > max {
            return Err(FuzzyError::EmptyCalibration(name.to_string()));
        }
        Self::from_range(name, min, max)
    }

    /// Gaussian memberships `(low, medium, high)`.
    pub fn fuzzify(&self, x: f64) -> [f64; INPUT_LABELS] {
        let two_var = 2.0 * self.sigma * self.sigma;
        self.centers.map(|c| (-(x - c) * (x - c) / two_var).exp())
    }

    pub fn center(&self, label: InputLabel) -> f64 {
        self.centers[label.index()]
    }
}

/// Output level for each (density label, speed label) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleBase {
    pub table: [[Level; INPUT_LABELS]; INPUT_LABELS],
}

impl Default for RuleBase {
    fn default() -> Self {
        use Level::*;
        RuleBase {
            table: [
                [Medium, Low, Low],
                [High, Medium, Low],
                [Full, High, Medium],
            ],
        }
    }
}

impl RuleBase {
    pub fn output(&self, density: InputLabel, speed: InputLabel) -> Level {
        self.table[density.index()][speed.index()]
    }

    /// Output level of rule `r`, numbered density-major from 0.
    pub fn rule_output(&self, r: usize) -> Level {
        self.table[r / INPUT_LABELS][r % INPUT_LABELS]
    }
}

/// `α_r = min(μ_density, μ_speed)` for the nine rules, density-major.
pub fn activate_rules(density: &[f64; INPUT_LABELS], speed: &[f64; INPUT_LABELS]) -> [f64; 9] {
    std::array::from_fn(|r| density[r / INPUT_LABELS].min(speed[r % INPUT_LABELS]))
}

/// Four triangles on `[0, 1]` peaking at 0, 1/3, 2/3 and 1, sampled on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputPartition {
    pub resolution: usize,
}

impl Default for OutputPartition {
    fn default() -> Self {
        OutputPartition {
            resolution: DEFAULT_RESOLUTION,
        }
    }
}

impl OutputPartition {
    pub fn new(resolution: usize) -> Result<Self, FuzzyError> {
        if resolution < MIN_RESOLUTION {
            return Err(FuzzyError::Resolution(resolution));
        }
        Ok(OutputPartition { resolution })
    }

    pub fn grid(&self) -> Vec<f64> {
        let n = self.resolution - 1;
        (0..=n).map(|i| i as f64 / n as f64).collect()
    }

    pub fn membership(level: Level, x: f64) -> f64 {
        if !(0.0..=1.0).contains(&x) {
            return 0.0;
        }
        (1.0 - 3.0 * (x - level.peak()).abs()).max(0.0)
    }
}

/// Pointwise max over rules of `min(μ_level(x), α_r)` on the partition grid.
pub fn aggregate(
    activations: &[f64; 9],
    rules: &RuleBase,
    partition: &OutputPartition,
) -> Vec<f64> {
    let clip = level_clips(activations, rules);
    partition
        .grid()
        .iter()
        .map(|&x| {
            Level::ALL
                .iter()
                .map(|&l| OutputPartition::membership(l, x).min(clip[l.index()]))
                .fold(0.0, f64::max)
        })
        .collect()
}

fn level_clips(activations: &[f64; 9], rules: &RuleBase) -> [f64; 4] {
    let mut clip = [0.0f64; 4];
    for (r, &a) in activations.iter().enumerate() {
        let l = rules.rule_output(r).index();
        clip[l] = clip[l].max(a);
    }
    clip
}

fn trapezoid(grid: &[f64], f: impl Fn(usize) -> f64) -> f64 {
    grid.windows(2)
        .enumerate()
        .map(|(i, w)| 0.5 * (w[1] - w[0]) * (f(i) + f(i + 1)))
        .sum()
}

/// `∫x·μ(x)dx / ∫μ(x)dx` by the trapezoidal rule on the partition grid.
pub fn defuzzify_centroid(
    aggregated: &[f64],
    partition: &OutputPartition,
) -> Result<f64, FuzzyError> {
    let grid = partition.grid();
    let mass = trapezoid(&grid, |i| aggregated[i]);
    if !(mass > 0.0) {
        return Err(FuzzyError::NoActivation);
    }
    let moment = trapezoid(&grid, |i| grid[i] * aggregated[i]);
    Ok((moment / mass).clamp(0.0, 1.0))
}

/// Level whose clipped triangle encloses the largest area.
pub fn dominant_level(
    activations: &[f64; 9],
    rules: &RuleBase,
    partition: &OutputPartition,
) -> Level {
    let clip = level_clips(activations, rules);
    let grid = partition.grid();
    let area = |l: Level| {
        trapezoid(&grid, |i| {
            OutputPartition::membership(l, grid[i]).min(clip[l.index()])
        })
    };
    Level::ALL
        .into_iter()
        .map(|l| (l, area(l)))
        .fold((Level::Low, f64::NEG_INFINITY), |best, cur| {
            if cur.1 > best.1 {
                cur
            } else {
                best
            }
        })
        .0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inference {
    pub probability: f64,
    pub level: Level,
    pub activations: [f64; 9],
}

/// Calibrated input variables together with the rules and output partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CongestionSystem {
    pub density: FuzzyVariable,
    pub speed: FuzzyVariable,
    pub rules: RuleBase,
    pub partition: OutputPartition,
}

impl CongestionSystem {
    pub fn new(density: FuzzyVariable, speed: FuzzyVariable) -> Self {
        CongestionSystem {
            density,
            speed,
            rules: RuleBase::default(),
            partition: OutputPartition::default(),
        }
    }

    /// Calibrates both universes on reference series. Speeds enter as magnitudes.
    pub fn calibrate(density: &[f64], speed: &[f64]) -> Result<Self, FuzzyError> {
        let magnitudes: Vec<f64> = speed.iter().map(|v| v.abs()).collect();
        Ok(Self::new(
            FuzzyVariable::build("density", density)?,
            FuzzyVariable::build("speed", &magnitudes)?,
        ))
    }

    pub fn infer(&self, density: f64, speed: f64) -> Result<Inference, FuzzyError> {
        for x in [density, speed] {
            if !x.is_finite() {
                return Err(FuzzyError::NonFinite(x));
            }
        }
        let activations = activate_rules(
            &self.density.fuzzify(density),
            &self.speed.fuzzify(speed.abs()),
        );
        let aggregated = aggregate(&activations, &self.rules, &self.partition);
        let probability = defuzzify_centroid(&aggregated, &self.partition)?;
        let level = dominant_level(&activations, &self.rules, &self.partition);
        Ok(Inference {
            probability,
            level,
            activations,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CongestionSeries {
    pub timestamps: Vec<f64>,
    pub probability: Vec<f64>,
    pub levels: Vec<Level>,
}

impl CongestionSeries {
    pub fn len(&self) -> usize {
        self.probability.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probability.is_empty()
    }
}

/// Per-step congestion probability and dominant level, timestamped by step index.
pub fn congestion_series(
    density: &[f64],
    speed: &[f64],
    system: &CongestionSystem,
) -> Result<CongestionSeries, FuzzyError> {
    if density.len() != speed.len() {
        return Err(FuzzyError::LengthMismatch {
            density: density.len(),
            speed: speed.len(),
        });
    }
    let mut out = CongestionSeries::default();
    for (t, (&k, &v)) in density.iter().zip(speed).enumerate() {
        let inf = system.infer(k, v)?;
        out.timestamps.push(t as f64);
        out.probability.push(inf.probability);
        out.levels.push(inf.level);
    }
    Ok(out)
}
