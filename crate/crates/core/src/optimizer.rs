//! Differential-evolution search over system configurations.
//!
//! The optimizer is generic over a real-vector objective. The configuration
//! layer maps a [`ConfigVector`] onto a base scenario, scores it with seeded
//! group runs plus a cost model for the sensor/processing/effector split, and
//! reports the best configuration found.

use crate::fusion::{run_group_scenario, CarrierSetup, FusionError, GridSpec, GroupScenario};
use crate::sensor::LayoutId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("population size must be at least 4, got {0}")]
    PopulationTooSmall(usize),
    #[error("differential weight must lie in (0, 2], got {0}")]
    InvalidWeight(f64),
    #[error("crossover rate must lie in [0, 1], got {0}")]
    InvalidCrossover(f64),
    #[error("bounds: {0}")]
    InvalidBounds(String),
    #[error("boundary placement needs 1 <= A <= B <= 11, got A={a}, B={b}")]
    InvalidBoundary { a: u8, b: u8 },
    #[error("cost model: {0}")]
    InvalidCostModel(String),
    #[error(transparent)]
    Fusion(#[from] FusionError),
}

/// Processing stages from raw pixels to executed counteraction commands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineStage {
    RawDataAcquisition = 1,
    ObjectDetection = 2,
    ObjectClassification = 3,
    InformationRefinement = 4,
    SituationModel = 5,
    IntentRecognition = 6,
    SituationPrediction = 7,
    CounteractionStrategy = 8,
    CounteractionProgram = 9,
    CommandGeneration = 10,
    CommandExecution = 11,
}

impl PipelineStage {
    pub const ALL: [PipelineStage; 11] = [
        PipelineStage::RawDataAcquisition,
        PipelineStage::ObjectDetection,
        PipelineStage::ObjectClassification,
        PipelineStage::InformationRefinement,
        PipelineStage::SituationModel,
        PipelineStage::IntentRecognition,
        PipelineStage::SituationPrediction,
        PipelineStage::CounteractionStrategy,
        PipelineStage::CounteractionProgram,
        PipelineStage::CommandGeneration,
        PipelineStage::CommandExecution,
    ];

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(i: u8) -> Option<Self> {
        Self::ALL.get((i as usize).checked_sub(1)?).copied()
    }
}

/// Per-stage output data rate and compute cost on each side of the split.
/// All tables are indexed by stage, stage 1 first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageCostModel {
    /// Output data rate of each stage per carrier, bit/s. Must not increase along the pipeline.
    pub output_rate_bps: Vec<f64>,
    pub sensor_compute: Vec<f64>,
    pub ims_compute: Vec<f64>,
    pub effector_compute: Vec<f64>,
}

impl Default for StageCostModel {
    fn default() -> Self {
        StageCostModel {
            output_rate_bps: vec![7.5e8, 1.0e6, 1.0e5, 1.0e4, 2.0e3, 1.0e3, 1.0e3, 5.0e2, 5.0e2, 2.0e2, 1.0e2],
            sensor_compute: vec![1.0, 2.0, 4.0, 4.0, 8.0, 8.0, 8.0, 8.0, 8.0, 8.0, 8.0],
            ims_compute: vec![4.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 2.0],
            effector_compute: vec![8.0, 8.0, 8.0, 8.0, 4.0, 4.0, 4.0, 2.0, 1.0, 1.0, 1.0],
        }
    }
}

impl StageCostModel {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        for (name, t) in [
            ("output_rate_bps", &self.output_rate_bps),
            ("sensor_compute", &self.sensor_compute),
            ("ims_compute", &self.ims_compute),
            ("effector_compute", &self.effector_compute),
        ] {
            if t.len() != 11 {
                return Err(OptimizerError::InvalidCostModel(format!("{name} needs 11 entries, got {}", t.len())));
            }
            if t.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(OptimizerError::InvalidCostModel(format!("{name} entries must be finite and non-negative")));
            }
        }
        if self.output_rate_bps.windows(2).any(|w| w[1] > w[0]) {
            return Err(OptimizerError::InvalidCostModel("output_rate_bps must not increase along the pipeline".into()));
        }
        Ok(())
    }
}

/// Stages `<= a` run on the sensor, stages `> b` on the effector, the rest on the IMS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryPlacement {
    pub boundary_a: u8,
    pub boundary_b: u8,
}

impl BoundaryPlacement {
    pub fn new(boundary_a: u8, boundary_b: u8) -> Result<Self, OptimizerError> {
        if !(1..=11).contains(&boundary_a) || !(1..=11).contains(&boundary_b) || boundary_a > boundary_b {
            return Err(OptimizerError::InvalidBoundary { a: boundary_a, b: boundary_b });
        }
        Ok(BoundaryPlacement { boundary_a, boundary_b })
    }

    /// Data crossing both boundaries per carrier, bit/s: the output of stage A,
    /// plus the output of stage B unless B is the last stage.
    pub fn bandwidth_bps(&self, m: &StageCostModel) -> f64 {
        let a = m.output_rate_bps[self.boundary_a as usize - 1];
        let b = if self.boundary_b < 11 { m.output_rate_bps[self.boundary_b as usize - 1] } else { 0.0 };
        a + b
    }

    pub fn compute_cost(&self, m: &StageCostModel) -> f64 {
        (1..=11u8)
            .map(|s| {
                let i = s as usize - 1;
                if s <= self.boundary_a {
                    m.sensor_compute[i]
                } else if s <= self.boundary_b {
                    m.ims_compute[i]
                } else {
                    m.effector_compute[i]
                }
            })
            .sum()
    }
}

pub const CONFIG_DIMENSIONS: usize = 7;
pub const CONFIG_NAMES: [&str; CONFIG_DIMENSIONS] =
    ["carrier_count", "layout", "bearing_std_rad", "frame_rate_hz", "boundary_a", "boundary_b", "loss_prob"];
/// Integer components, in [`CONFIG_NAMES`] order.
pub const CONFIG_INTEGER: [bool; CONFIG_DIMENSIONS] = [true, true, false, false, true, true, false];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigVector {
    pub carrier_count: u32,
    pub layout: LayoutId,
    pub bearing_std_rad: f64,
    pub frame_rate_hz: f64,
    pub boundary_a: u8,
    pub boundary_b: u8,
    pub loss_prob: f64,
}

fn layout_code(l: LayoutId) -> f64 {
    match l {
        LayoutId::Cube6 => 0.0,
        LayoutId::Cube24 => 1.0,
    }
}

/// Rounds half away from zero, the rule for every integer component.
pub fn round_integer(v: f64) -> f64 {
    v.round()
}

impl ConfigVector {
    pub fn to_vec(&self) -> [f64; CONFIG_DIMENSIONS] {
        [
            self.carrier_count as f64,
            layout_code(self.layout),
            self.bearing_std_rad,
            self.frame_rate_hz,
            self.boundary_a as f64,
            self.boundary_b as f64,
            self.loss_prob,
        ]
    }

    /// Decodes a (possibly unrounded) vector. When rounding leaves A above B,
    /// B is raised to A.
    pub fn from_slice(v: &[f64]) -> Self {
        let a = round_integer(v[4]).clamp(1.0, 11.0) as u8;
        let b = round_integer(v[5]).clamp(1.0, 11.0) as u8;
        ConfigVector {
            carrier_count: round_integer(v[0]).max(1.0) as u32,
            layout: if round_integer(v[1]) >= 1.0 { LayoutId::Cube24 } else { LayoutId::Cube6 },
            bearing_std_rad: v[2],
            frame_rate_hz: v[3],
            boundary_a: a,
            boundary_b: b.max(a),
            loss_prob: v[6],
        }
    }

    pub fn boundaries(&self) -> Result<BoundaryPlacement, OptimizerError> {
        BoundaryPlacement::new(self.boundary_a, self.boundary_b)
    }

    /// Reads the defaults of every component from a scenario.
    pub fn from_scenario(s: &GroupScenario, boundary_a: u8, boundary_b: u8) -> Self {
        ConfigVector {
            carrier_count: s.carrier_ids().len() as u32,
            layout: s.layout,
            bearing_std_rad: s.noise.bearing_std_rad,
            frame_rate_hz: s.frames.rate_hz,
            boundary_a,
            boundary_b,
            loss_prob: s.link.loss_prob,
        }
    }
}

/// Box bounds with an integer mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub integer: Vec<bool>,
}

impl Bounds {
    pub fn continuous(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        let integer = vec![false; lower.len()];
        Bounds { lower, upper, integer }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn validate(&self) -> Result<(), OptimizerError> {
        if self.lower.is_empty() {
            return Err(OptimizerError::InvalidBounds("no dimensions".into()));
        }
        if self.upper.len() != self.lower.len() || self.integer.len() != self.lower.len() {
            return Err(OptimizerError::InvalidBounds("lower, upper and integer lengths differ".into()));
        }
        for (i, (lo, hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(OptimizerError::InvalidBounds(format!("dimension {i}: [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// Mirrors an out-of-range coordinate back inside `[lo, hi]`.
    pub fn reflect(&self, i: usize, v: f64) -> f64 {
        let (lo, hi) = (self.lower[i], self.upper[i]);
        let width = hi - lo;
        if (lo..=hi).contains(&v) {
            return v;
        }
        if width == 0.0 || !v.is_finite() {
            return lo;
        }
        let mut x = v;
        // folding is periodic with period 2 * width
        let period = 2.0 * width;
        let mut off = (x - lo) % period;
        if off < 0.0 {
            off += period;
        }
        if off > width {
            off = period - off;
        }
        x = lo + off;
        x.clamp(lo, hi)
    }

    /// The vector an objective sees: integer dimensions rounded, then kept in bounds.
    pub fn evaluation_point(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .enumerate()
            .map(|(i, &x)| {
                if self.integer[i] {
                    round_integer(x).clamp(self.lower[i].ceil(), self.upper[i].floor().max(self.lower[i].ceil()))
                } else {
                    x
                }
            })
            .collect()
    }
}

fn default_generations() -> usize {
    100
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DEParams {
    pub population: usize,
    pub differential_weight: f64,
    pub crossover_rate: f64,
    #[serde(default = "default_generations")]
    pub max_generations: usize,
    /// Stops before a generation that would exceed this many objective calls.
    #[serde(default)]
    pub max_evaluations: Option<usize>,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub parallel: bool,
}

impl DEParams {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        if self.population < 4 {
            return Err(OptimizerError::PopulationTooSmall(self.population));
        }
        if !(self.differential_weight > 0.0 && self.differential_weight <= 2.0) {
            return Err(OptimizerError::InvalidWeight(self.differential_weight));
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) {
            return Err(OptimizerError::InvalidCrossover(self.crossover_rate));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationRecord {
    pub generation: usize,
    pub evaluations: usize,
    pub best_score: f64,
    pub mean_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DEResult {
    /// Best vector as evaluated (integer dimensions rounded).
    pub best: Vec<f64>,
    pub best_score: f64,
    pub history: Vec<GenerationRecord>,
    pub evaluations: usize,
}

fn evaluate_all<F>(objective: &F, bounds: &Bounds, points: &[Vec<f64>], parallel: bool) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let score = |p: &Vec<f64>| {
        let s = objective(&bounds.evaluation_point(p));
        if s.is_nan() {
            f64::INFINITY
        } else {
            s
        }
    };
    if parallel {
        points.par_iter().map(score).collect()
    } else {
        points.iter().map(score).collect()
    }
}

fn record(generation: usize, evaluations: usize, scores: &[f64]) -> GenerationRecord {
    let best = scores.iter().copied().fold(f64::INFINITY, f64::min);
    GenerationRecord {
        generation,
        evaluations,
        best_score: best,
        mean_score: scores.iter().sum::<f64>() / scores.len() as f64,
    }
}

fn best_index(scores: &[f64]) -> usize {
    scores.iter().enumerate().fold(0, |b, (i, s)| if *s < scores[b] { i } else { b })
}

/// DE/rand/1/bin minimization. Results depend only on the seed: trial
/// vectors are drawn sequentially and scored in population order.
pub fn differential_evolution<F>(objective: F, bounds: &Bounds, params: &DEParams) -> Result<DEResult, OptimizerError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    params.validate()?;
    bounds.validate()?;
    let np = params.population;
    let dim = bounds.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let mut pop: Vec<Vec<f64>> = (0..np)
        .map(|_| {
            (0..dim)
                .map(|i| {
                    let (lo, hi) = (bounds.lower[i], bounds.upper[i]);
                    if hi > lo {
                        rng.random_range(lo..=hi)
                    } else {
                        lo
                    }
                })
                .collect()
        })
        .collect();
    let mut scores = evaluate_all(&objective, bounds, &pop, params.parallel);
    let mut evaluations = np;
    let mut history = vec![record(0, evaluations, &scores)];

    for generation in 1..=params.max_generations {
        if params.max_evaluations.is_some_and(|cap| evaluations + np > cap) {
            break;
        }
        let trials: Vec<Vec<f64>> = (0..np)
            .map(|i| {
                let mut pick = |exclude: &[usize]| loop {
                    let k = rng.random_range(0..np);
                    if !exclude.contains(&k) {
                        break k;
                    }
                };
                let a = pick(&[i]);
                let b = pick(&[i, a]);
                let c = pick(&[i, a, b]);
                let forced = rng.random_range(0..dim);
                (0..dim)
                    .map(|j| {
                        let cross = rng.random::<f64>() < params.crossover_rate || j == forced;
                        if cross {
                            let v = pop[a][j] + params.differential_weight * (pop[b][j] - pop[c][j]);
                            bounds.reflect(j, v)
                        } else {
                            pop[i][j]
                        }
                    })
                    .collect()
            })
            .collect();
        let trial_scores = evaluate_all(&objective, bounds, &trials, params.parallel);
        evaluations += np;
        for (i, (t, s)) in trials.into_iter().zip(trial_scores).enumerate() {
            if s <= scores[i] {
                pop[i] = t;
                scores[i] = s;
            }
        }
        history.push(record(generation, evaluations, &scores));
    }

    let b = best_index(&scores);
    Ok(DEResult { best: bounds.evaluation_point(&pop[b]), best_score: scores[b], history, evaluations })
}

/// Per-component search ranges; omitted components stay at the base value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigBounds {
    pub carrier_count: Option<[f64; 2]>,
    pub layout: Option<[f64; 2]>,
    pub bearing_std_rad: Option<[f64; 2]>,
    pub frame_rate_hz: Option<[f64; 2]>,
    pub boundary_a: Option<[f64; 2]>,
    pub boundary_b: Option<[f64; 2]>,
    pub loss_prob: Option<[f64; 2]>,
}

impl ConfigBounds {
    pub fn to_bounds(&self, base: &ConfigVector) -> Bounds {
        let base = base.to_vec();
        let spec = [
            self.carrier_count,
            self.layout,
            self.bearing_std_rad,
            self.frame_rate_hz,
            self.boundary_a,
            self.boundary_b,
            self.loss_prob,
        ];
        let (lower, upper) = spec
            .iter()
            .zip(base)
            .map(|(r, b)| match r {
                Some([lo, hi]) => (*lo, *hi),
                None => (b, b),
            })
            .unzip();
        Bounds { lower, upper, integer: CONFIG_INTEGER.to_vec() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreWeights {
    pub range_rmse: f64,
    pub class_error: f64,
    pub cost: f64,
}

/// Linear cost of a configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    pub per_carrier: f64,
    pub per_frame_hz: f64,
    /// Per bit/s crossing the boundaries, summed over carriers.
    pub per_bps: f64,
    pub per_compute: f64,
    pub stages: StageCostModel,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel { per_carrier: 1.0, per_frame_hz: 0.01, per_bps: 1e-9, per_compute: 0.01, stages: StageCostModel::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostBreakdown {
    pub carriers: f64,
    pub frame_rate: f64,
    pub bandwidth: f64,
    pub compute: f64,
    pub total: f64,
}

impl CostModel {
    pub fn evaluate(&self, cfg: &ConfigVector) -> Result<CostBreakdown, OptimizerError> {
        let placement = cfg.boundaries()?;
        let n = cfg.carrier_count as f64;
        let carriers = self.per_carrier * n;
        let frame_rate = self.per_frame_hz * cfg.frame_rate_hz * n;
        let bandwidth = self.per_bps * placement.bandwidth_bps(&self.stages) * n;
        let compute = self.per_compute * placement.compute_cost(&self.stages) * n;
        Ok(CostBreakdown { carriers, frame_rate, bandwidth, compute, total: carriers + frame_rate + bandwidth + compute })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationContext {
    pub base: GroupScenario,
    pub seeds: Vec<u64>,
    pub weights: ScoreWeights,
    pub cost: CostModel,
    /// Score assigned when a scenario run fails.
    pub penalty: f64,
    /// Range used to normalize range RMSE, m.
    pub range_scale_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreBreakdown {
    pub normalized_range_rmse: Option<f64>,
    pub class_error: Option<f64>,
    pub cost: CostBreakdown,
    pub total: f64,
    pub failed: bool,
}

/// The base scenario with a configuration applied.
pub fn apply_config(base: &GroupScenario, cfg: &ConfigVector) -> Result<GroupScenario, OptimizerError> {
    let mut s = base.clone();
    match &mut s.carriers {
        CarrierSetup::Formation { count, .. } => *count = cfg.carrier_count,
        CarrierSetup::Explicit { carriers } => {
            if cfg.carrier_count as usize > carriers.len() {
                return Err(FusionError::InvalidScenario(format!(
                    "carrier_count {} exceeds the {} explicit carriers",
                    cfg.carrier_count,
                    carriers.len()
                ))
                .into());
            }
            carriers.truncate(cfg.carrier_count as usize);
        }
    }
    let ids = s.carrier_ids();
    if let Some(nodes) = &mut s.fusion_nodes {
        nodes.retain(|n| ids.contains(n));
        if nodes.is_empty() {
            nodes.push(ids[0]);
        }
    }
    s.clocks.retain(|c| ids.contains(&c.carrier_id));
    s.layout = cfg.layout;
    s.noise.bearing_std_rad = cfg.bearing_std_rad;
    for m in &mut s.carrier_modes.modes {
        m.bearing_std_rad = cfg.bearing_std_rad;
    }
    if cfg.frame_rate_hz != base.frames.rate_hz {
        // keep the observation duration
        let duration = (base.frames.count.max(1) - 1) as f64 / base.frames.rate_hz;
        s.frames.rate_hz = cfg.frame_rate_hz;
        s.frames.count = ((duration * cfg.frame_rate_hz).round() as usize + 1).max(3);
        for m in &mut s.carrier_modes.modes {
            m.frame_rate_hz = cfg.frame_rate_hz;
        }
        if !matches!(s.grid, GridSpec::Frames) && s.grid.build(&s.frames).is_err() {
            s.grid = GridSpec::Frames;
        }
    }
    s.link.loss_prob = cfg.loss_prob;
    s.validate()?;
    Ok(s)
}

/// Mean over seeds of the weighted score. A failing run scores `penalty`.
pub fn evaluate_config(cfg: &ConfigVector, ctx: &EvaluationContext) -> ScoreBreakdown {
    let cost = match ctx.cost.evaluate(cfg) {
        Ok(c) => c,
        Err(e) => {
            log::warn!("configuration rejected by the cost model: {e}");
            return failed(ctx.penalty);
        }
    };
    let w = ctx.weights;
    let needs_runs = w.range_rmse != 0.0 || w.class_error != 0.0;
    let (rmse, class_error) = if needs_runs {
        let scenario = match apply_config(&ctx.base, cfg) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("configuration not applicable: {e}");
                return failed(ctx.penalty);
            }
        };
        let mut rmse = Vec::with_capacity(ctx.seeds.len());
        let mut acc = Vec::with_capacity(ctx.seeds.len());
        for &seed in &ctx.seeds {
            match run_group_scenario(&scenario, seed) {
                Ok(o) => {
                    rmse.push(o.metrics.range_rmse_m.unwrap_or(ctx.range_scale_m) / ctx.range_scale_m);
                    acc.push(o.metrics.class_accuracy);
                }
                Err(e) => {
                    log::warn!("scenario run failed for seed {seed}: {e}");
                    return failed(ctx.penalty);
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        (Some(mean(&rmse)), Some(1.0 - mean(&acc)))
    } else {
        (None, None)
    };
    let mut total = 0.0;
    if w.range_rmse != 0.0 {
        total += w.range_rmse * rmse.unwrap_or(0.0);
    }
    if w.class_error != 0.0 {
        total += w.class_error * class_error.unwrap_or(0.0);
    }
    if w.cost != 0.0 {
        total += w.cost * cost.total;
    }
    ScoreBreakdown { normalized_range_rmse: rmse, class_error, cost, total, failed: false }
}

fn failed(penalty: f64) -> ScoreBreakdown {
    let zero = CostBreakdown { carriers: 0.0, frame_rate: 0.0, bandwidth: 0.0, compute: 0.0, total: 0.0 };
    ScoreBreakdown { normalized_range_rmse: None, class_error: None, cost: zero, total: penalty, failed: true }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizationReport {
    pub best: ConfigVector,
    pub best_score: f64,
    pub breakdown: ScoreBreakdown,
    pub bounds: Bounds,
    pub parameter_names: Vec<String>,
    pub history: Vec<GenerationRecord>,
    pub evaluations: usize,
}

/// Differential evolution of [`evaluate_config`] over `bounds` around `base_cfg`.
pub fn optimize_architecture(
    ctx: &EvaluationContext,
    base_cfg: &ConfigVector,
    bounds: &ConfigBounds,
    params: &DEParams,
) -> Result<OptimizationReport, OptimizerError> {
    ctx.cost.stages.validate()?;
    let b = bounds.to_bounds(base_cfg);
    let result = differential_evolution(|v| evaluate_config(&ConfigVector::from_slice(v), ctx).total, &b, params)?;
    let best = ConfigVector::from_slice(&result.best);
    Ok(OptimizationReport {
        best,
        best_score: result.best_score,
        breakdown: evaluate_config(&best, ctx),
        bounds: b,
        parameter_names: CONFIG_NAMES.iter().map(|s| s.to_string()).collect(),
        history: result.history,
        evaluations: result.evaluations,
    })
}
