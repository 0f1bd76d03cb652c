//! Scenario files, seeded runs and report writers behind the command line.
//!
//! One JSON scenario file drives every command. Optional `sweep` and
//! `optimize` blocks enable the corresponding commands. Every input is
//! checked before anything is written.

use crate::filter::{task_class_report, ReportContext, TaskClassOutput};
use crate::fusion::{
    degradation_sweep, run_group_scenario, simulate as simulate_group, write_event_log, write_metrics_csv,
    write_sweep_csv, CarrierSetup, FusionError, GroupOutcome, GroupScenario, LocalFrame, SweepAxis, SweepTable,
};
use crate::geodesy::{AtmosphereModel, TerrainMap};
use crate::optimizer::{
    optimize_architecture, BoundaryPlacement, ConfigBounds, ConfigVector, CostModel, DEParams, EvaluationContext,
    OptimizationReport, OptimizerError, ScoreWeights,
};
use crate::sensor::write_measurements_csv;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("unsupported scenario version {0}, expected {SCHEMA_VERSION}")]
    Version(u32),
    #[error("scenario has no `{0}` block")]
    MissingBlock(&'static str),
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Problems with the scenario file itself, as opposed to failures while running it.
    pub fn is_schema(&self) -> bool {
        matches!(
            self,
            HarnessError::Schema { .. } | HarnessError::Version(_) | HarnessError::MissingBlock(_) | HarnessError::Read { .. }
        )
    }

    fn schema(path: &str, e: impl std::fmt::Display) -> Self {
        HarnessError::Schema { path: path.to_string(), message: e.to_string() }
    }
}

fn default_runs_horizon() -> f64 {
    600.0
}

fn default_step() -> f64 {
    0.5
}

fn default_zero_speed() -> f64 {
    1.0
}

/// Endpoint search used by the task-class report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSettings {
    #[serde(default = "default_runs_horizon")]
    pub horizon_s: f64,
    #[serde(default = "default_step")]
    pub step_s: f64,
    #[serde(default = "default_zero_speed")]
    pub zero_speed_mps: f64,
}

impl Default for ReportSettings {
    fn default() -> Self {
        ReportSettings { horizon_s: default_runs_horizon(), step_s: default_step(), zero_speed_mps: default_zero_speed() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
}

fn default_penalty() -> f64 {
    1e6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeBlock {
    #[serde(default)]
    pub bounds: ConfigBounds,
    pub weights: ScoreWeights,
    #[serde(default)]
    pub cost: CostModel,
    pub de: DEParams,
    pub seeds: Vec<u64>,
    /// Base placement of the sensor/IMS and IMS/effector boundaries.
    pub boundary_a: u8,
    pub boundary_b: u8,
    #[serde(default = "default_penalty")]
    pub penalty: f64,
    /// Normalizes range RMSE; the initial carrier-to-target distance when absent.
    #[serde(default)]
    pub range_scale_m: Option<f64>,
}

/// Top level of a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub version: u32,
    pub seed: u64,
    /// JSON terrain grid, relative to the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terrain_file: Option<PathBuf>,
    /// JSON atmosphere grid, relative to the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atmosphere_file: Option<PathBuf>,
    pub scenario: GroupScenario,
    #[serde(default)]
    pub report: ReportSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimize: Option<OptimizeBlock>,
}

fn parse_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, HarnessError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        HarnessError::Schema { path, message: e.into_inner().to_string() }
    })
}

fn read(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(|source| HarnessError::Read { path: path.to_path_buf(), source })
}

impl ScenarioSpec {
    /// Parses and validates a scenario; file references resolve against `base_dir`.
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self, HarnessError> {
        let mut spec: ScenarioSpec = parse_json(text)?;
        if spec.version != SCHEMA_VERSION {
            return Err(HarnessError::Version(spec.version));
        }
        if let Some(f) = &spec.terrain_file {
            if spec.scenario.environment.terrain.is_some() {
                return Err(HarnessError::schema("terrain_file", "terrain is also given inline"));
            }
            let t: TerrainMap = parse_json(&read(&base_dir.join(f))?)?;
            spec.scenario.environment.terrain = Some(t);
        }
        if let Some(f) = &spec.atmosphere_file {
            if spec.scenario.environment.atmosphere.is_some() {
                return Err(HarnessError::schema("atmosphere_file", "atmosphere is also given inline"));
            }
            let a: AtmosphereModel = parse_json(&read(&base_dir.join(f))?)?;
            spec.scenario.environment.atmosphere = Some(a);
        }
        spec.terrain_file = None;
        spec.atmosphere_file = None;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let dir = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&read(path)?, dir)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.scenario.validate().map_err(|e| HarnessError::schema("scenario", e))?;
        let r = &self.report;
        if !(r.horizon_s >= 0.0) || !(r.step_s > 0.0) || !(r.zero_speed_mps >= 0.0) {
            return Err(HarnessError::schema("report", "horizon_s >= 0, step_s > 0 and zero_speed_mps >= 0 required"));
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(HarnessError::schema("sweep.values", "empty"));
            }
            if s.seeds.is_empty() {
                return Err(HarnessError::schema("sweep.seeds", "empty"));
            }
        }
        if let Some(o) = &self.optimize {
            o.de.validate().map_err(|e| HarnessError::schema("optimize.de", e))?;
            o.cost.stages.validate().map_err(|e| HarnessError::schema("optimize.cost.stages", e))?;
            BoundaryPlacement::new(o.boundary_a, o.boundary_b).map_err(|e| HarnessError::schema("optimize", e))?;
            let base = ConfigVector::from_scenario(&self.scenario, o.boundary_a, o.boundary_b);
            o.bounds.to_bounds(&base).validate().map_err(|e| HarnessError::schema("optimize.bounds", e))?;
            if o.seeds.is_empty() {
                return Err(HarnessError::schema("optimize.seeds", "empty"));
            }
            if o.range_scale_m.is_some_and(|r| !(r > 0.0)) {
                return Err(HarnessError::schema("optimize.range_scale_m", "must be positive"));
            }
        }
        Ok(())
    }

    /// Replaces the run seed and the optimizer seed.
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
        if let Some(o) = &mut self.optimize {
            o.de.seed = seed;
        }
    }
}

/// A metric value or an explicit marker that it does not apply to this run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricValue {
    Value(f64),
    NotApplicable(NotApplicable),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NotApplicable {
    NotApplicable,
}

impl From<Option<f64>> for MetricValue {
    fn from(v: Option<f64>) -> Self {
        match v {
            Some(x) if x.is_finite() => MetricValue::Value(x),
            _ => MetricValue::NotApplicable(NotApplicable::NotApplicable),
        }
    }
}

pub const METRIC_KEYS: [&str; 4] = ["range_rmse_m", "position_rmse_m", "class_accuracy", "time_to_converge_s"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeReport {
    pub node_id: u32,
    pub observations: usize,
    pub class_id: u32,
    pub class_posterior: Vec<(u32, f64)>,
    pub metrics: BTreeMap<String, MetricValue>,
    pub clamp_events: usize,
    pub task_classes: TaskClassOutput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub tool_version: String,
    pub schema_version: u32,
    pub seed: u64,
    pub metrics: BTreeMap<String, MetricValue>,
    pub nodes: Vec<NodeReport>,
    pub estimate_tables: Vec<String>,
    pub event_log: String,
    pub config: ScenarioSpec,
}

fn group_metrics(o: &GroupOutcome) -> BTreeMap<String, MetricValue> {
    let m = &o.metrics;
    let values = [m.range_rmse_m, m.position_rmse_m, Some(m.class_accuracy), m.time_to_converge_s];
    METRIC_KEYS.iter().zip(values).map(|(k, v)| (k.to_string(), v.into())).collect()
}

/// Builds the report of a finished group run.
pub fn run_report(spec: &ScenarioSpec, outcome: &GroupOutcome) -> RunReport {
    let nodes = outcome
        .nodes
        .iter()
        .map(|n| {
            let last_t = n.estimate.estimates.last().map_or(0.0, |e| e.time_s);
            let carrier = outcome.simulation.carriers.iter().find(|c| c.id == n.node_id).expect("node is a carrier");
            let ctx = ReportContext {
                reference_position_m: carrier.state_at(last_t).position_m,
                environment: &spec.scenario.environment,
                horizon_s: spec.report.horizon_s,
                step_s: spec.report.step_s,
                zero_speed_mps: spec.report.zero_speed_mps,
            };
            let m = &n.metrics;
            let values = [m.range_rmse_m, m.position_rmse_m, Some(if m.class_correct { 1.0 } else { 0.0 }), m.time_to_converge_s];
            NodeReport {
                node_id: n.node_id,
                observations: m.observations,
                class_id: n.estimate.class_id,
                class_posterior: n.estimate.class_posterior.clone(),
                metrics: METRIC_KEYS.iter().zip(values).map(|(k, v)| (k.to_string(), v.into())).collect(),
                clamp_events: n.estimate.clamp_events,
                task_classes: task_class_report(&n.estimate, &ctx),
            }
        })
        .collect();
    RunReport {
        tool_version: TOOL_VERSION.to_string(),
        schema_version: SCHEMA_VERSION,
        seed: outcome.seed,
        metrics: group_metrics(outcome),
        nodes,
        estimate_tables: vec![ESTIMATES_CSV.into(), TRACK_CSV.into(), METRICS_CSV.into()],
        event_log: EVENTS_JSONL.into(),
        config: spec.clone(),
    }
}

pub const MEASUREMENTS_CSV: &str = "measurements.csv";
pub const TRUTH_CSV: &str = "truth.csv";
pub const REPORT_JSON: &str = "report.json";
pub const ESTIMATES_CSV: &str = "estimates.csv";
pub const TRACK_CSV: &str = "track.csv";
pub const METRICS_CSV: &str = "metrics.csv";
pub const EVENTS_JSONL: &str = "events.jsonl";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_JSON: &str = "sweep.json";
pub const OPTIMIZATION_JSON: &str = "optimization.json";

#[derive(Serialize)]
struct TruthRow {
    t: f64,
    state_id: u32,
    x: f64,
    y: f64,
    z: f64,
    vx: f64,
    vy: f64,
    vz: f64,
    ax: f64,
    ay: f64,
    az: f64,
    east_m: f64,
    north_m: f64,
    up_m: f64,
}

#[derive(Serialize)]
struct EstimateRow {
    node_id: u32,
    t: f64,
    class_id: u32,
    state_id: u32,
    x: f64,
    y: f64,
    z: f64,
    vx: f64,
    vy: f64,
    vz: f64,
    ax: f64,
    ay: f64,
    az: f64,
    east_m: f64,
    north_m: f64,
    up_m: f64,
    position_std_m: f64,
}

#[derive(Serialize)]
struct TrackRow {
    node_id: u32,
    t: f64,
    x: f64,
    y: f64,
    z: f64,
    position_std_m: f64,
    map_class_probability: f64,
}

/// Files produced by a command, written in one pass after all computation.
#[derive(Debug, Default)]
pub struct Outputs {
    pub files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            let mut w = BufWriter::new(fs::File::create(&path)?);
            w.write_all(bytes)?;
            w.flush()?;
            written.push(path);
        }
        Ok(written)
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_slice())
    }
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>, HarnessError> {
    let mut b = serde_json::to_vec_pretty(v)?;
    b.push(b'\n');
    Ok(b)
}

fn frame(spec: &ScenarioSpec) -> Result<LocalFrame, HarnessError> {
    LocalFrame::new(&spec.scenario.origin, &spec.scenario.environment)
        .map_err(|e| HarnessError::Fusion(FusionError::from(e)))
}

/// Measurement and truth tables of one seeded simulation.
pub fn simulate(spec: &ScenarioSpec) -> Result<Outputs, HarnessError> {
    let sim = simulate_group(&spec.scenario, spec.seed)?;
    let frame = frame(spec)?;
    let mut out = Outputs::default();
    let mut buf = Vec::new();
    write_measurements_csv(&mut buf, &sim.measurements)?;
    out.add(MEASUREMENTS_CSV, buf);

    let mut w = csv::Writer::from_writer(Vec::new());
    for (s, state_id) in sim.truth.trajectory.samples.iter().zip(&sim.truth.states) {
        let enu = frame.to_local(&s.position_m);
        w.serialize(TruthRow {
            t: s.time_s,
            state_id: *state_id,
            x: s.position_m.x,
            y: s.position_m.y,
            z: s.position_m.z,
            vx: s.velocity_mps.x,
            vy: s.velocity_mps.y,
            vz: s.velocity_mps.z,
            ax: s.acceleration_mps2.x,
            ay: s.acceleration_mps2.y,
            az: s.acceleration_mps2.z,
            east_m: enu.x,
            north_m: enu.y,
            up_m: enu.z,
        })?;
    }
    out.add(TRUTH_CSV, w.into_inner().map_err(|e| e.into_error())?);
    Ok(out)
}

/// Group run, JSON report, estimate tables and the delivery log.
pub fn estimate(spec: &ScenarioSpec) -> Result<(RunReport, Outputs), HarnessError> {
    let outcome = run_group_scenario(&spec.scenario, spec.seed)?;
    let report = run_report(spec, &outcome);
    let frame = frame(spec)?;

    let mut out = Outputs::default();
    out.add(REPORT_JSON, json_bytes(&report)?);

    let mut w = csv::Writer::from_writer(Vec::new());
    for n in &outcome.nodes {
        for e in &n.estimate.estimates {
            let s = &e.state;
            let enu = frame.to_local(&s.position_m);
            let p = e.covariance.fixed_view::<3, 3>(0, 0);
            w.serialize(EstimateRow {
                node_id: n.node_id,
                t: e.time_s,
                class_id: n.estimate.class_id,
                state_id: e.state_id,
                x: s.position_m.x,
                y: s.position_m.y,
                z: s.position_m.z,
                vx: s.velocity_mps.x,
                vy: s.velocity_mps.y,
                vz: s.velocity_mps.z,
                ax: s.acceleration_mps2.x,
                ay: s.acceleration_mps2.y,
                az: s.acceleration_mps2.z,
                east_m: enu.x,
                north_m: enu.y,
                up_m: enu.z,
                position_std_m: p.trace().max(0.0).sqrt(),
            })?;
        }
    }
    out.add(ESTIMATES_CSV, w.into_inner().map_err(|e| e.into_error())?);

    let mut w = csv::Writer::from_writer(Vec::new());
    for n in &outcome.nodes {
        for p in &n.estimate.filter_track {
            let map = p.class_posterior.iter().find(|(c, _)| *c == n.estimate.class_id).map_or(0.0, |c| c.1);
            w.serialize(TrackRow {
                node_id: n.node_id,
                t: p.time_s,
                x: p.position_m.x,
                y: p.position_m.y,
                z: p.position_m.z,
                position_std_m: p.position_covariance.trace().max(0.0).sqrt(),
                map_class_probability: map,
            })?;
        }
    }
    out.add(TRACK_CSV, w.into_inner().map_err(|e| e.into_error())?);

    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, &outcome)?;
    out.add(METRICS_CSV, buf);

    let mut buf = Vec::new();
    write_event_log(&mut buf, &outcome.deliveries)?;
    out.add(EVENTS_JSONL, buf);
    Ok((report, out))
}

/// Degradation sweep over the `sweep` block.
pub fn sweep(spec: &ScenarioSpec) -> Result<(SweepTable, Outputs), HarnessError> {
    let block = spec.sweep.as_ref().ok_or(HarnessError::MissingBlock("sweep"))?;
    let table = degradation_sweep(&spec.scenario, block.axis, &block.values, &block.seeds)?;
    let mut out = Outputs::default();
    let mut buf = Vec::new();
    write_sweep_csv(&mut buf, &table)?;
    out.add(SWEEP_CSV, buf);
    out.add(SWEEP_JSON, json_bytes(&table)?);
    Ok((table, out))
}

fn initial_range(s: &GroupScenario) -> f64 {
    let target = s.target.position_enu_m;
    let p = match &s.carriers {
        CarrierSetup::Formation { center_enu_m, .. } => *center_enu_m,
        CarrierSetup::Explicit { carriers } => carriers[0].position_enu_m,
    };
    (target - p).norm()
}

/// Configuration search over the `optimize` block.
pub fn optimize(spec: &ScenarioSpec) -> Result<(OptimizationReport, Outputs), HarnessError> {
    let block = spec.optimize.as_ref().ok_or(HarnessError::MissingBlock("optimize"))?;
    let ctx = EvaluationContext {
        base: spec.scenario.clone(),
        seeds: block.seeds.clone(),
        weights: block.weights,
        cost: block.cost.clone(),
        penalty: block.penalty,
        range_scale_m: block.range_scale_m.unwrap_or_else(|| initial_range(&spec.scenario).max(1.0)),
    };
    let base = ConfigVector::from_scenario(&spec.scenario, block.boundary_a, block.boundary_b);
    let report = optimize_architecture(&ctx, &base, &block.bounds, &block.de)?;
    let mut out = Outputs::default();
    out.add(OPTIMIZATION_JSON, json_bytes(&report)?);
    Ok((report, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::tests::scenario;

    fn spec_json() -> String {
        let spec = ScenarioSpec {
            version: 1,
            seed: 3,
            terrain_file: None,
            atmosphere_file: None,
            scenario: scenario(2, 2000.0),
            report: ReportSettings::default(),
            sweep: None,
            optimize: None,
        };
        serde_json::to_string(&spec).unwrap()
    }

    #[test]
    fn round_trips_through_json() {
        let text = spec_json();
        let spec = ScenarioSpec::from_json(&text, Path::new(".")).unwrap();
        assert_eq!(serde_json::to_string(&spec).unwrap(), text);
    }

    #[test]
    fn unknown_field_reports_path() {
        let mut v: serde_json::Value = serde_json::from_str(&spec_json()).unwrap();
        v["scenario"]["noise"]["bogus"] = 1.into();
        let err = ScenarioSpec::from_json(&v.to_string(), Path::new(".")).unwrap_err();
        assert!(err.is_schema());
        let msg = err.to_string();
        assert!(msg.contains("scenario.noise"), "{msg}");
        assert!(msg.contains("bogus"), "{msg}");
    }

    #[test]
    fn wrong_type_reports_path() {
        let mut v: serde_json::Value = serde_json::from_str(&spec_json()).unwrap();
        v["scenario"]["frames"]["count"] = "thirty".into();
        let msg = ScenarioSpec::from_json(&v.to_string(), Path::new(".")).unwrap_err().to_string();
        assert!(msg.contains("scenario.frames.count"), "{msg}");
    }

    #[test]
    fn version_and_blocks_checked() {
        let mut v: serde_json::Value = serde_json::from_str(&spec_json()).unwrap();
        v["version"] = 2.into();
        assert!(matches!(ScenarioSpec::from_json(&v.to_string(), Path::new(".")), Err(HarnessError::Version(2))));
        let spec = ScenarioSpec::from_json(&spec_json(), Path::new(".")).unwrap();
        assert!(matches!(sweep(&spec), Err(HarnessError::MissingBlock("sweep"))));
        assert!(matches!(optimize(&spec), Err(HarnessError::MissingBlock("optimize"))));
    }

    #[test]
    fn unresolved_reference_is_a_schema_error() {
        let mut v: serde_json::Value = serde_json::from_str(&spec_json()).unwrap();
        v["scenario"]["target"]["class_id"] = 99.into();
        let err = ScenarioSpec::from_json(&v.to_string(), Path::new(".")).unwrap_err();
        assert!(err.is_schema(), "{err}");
    }

    #[test]
    fn simulate_writes_one_row_per_frame_and_carrier() {
        let mut spec = ScenarioSpec::from_json(&spec_json(), Path::new(".")).unwrap();
        spec.scenario = scenario(1, 0.0);
        let out = simulate(&spec).unwrap();
        let rows = String::from_utf8(out.get(MEASUREMENTS_CSV).unwrap().to_vec()).unwrap().lines().count() - 1;
        assert_eq!(rows, spec.scenario.frames.count);
        assert_eq!(simulate(&spec).unwrap().files, out.files);
    }

    #[test]
    fn report_has_every_metric_key() {
        let spec = ScenarioSpec::from_json(&spec_json(), Path::new(".")).unwrap();
        let (report, out) = estimate(&spec).unwrap();
        for k in METRIC_KEYS {
            assert!(report.metrics.contains_key(k));
            assert!(report.nodes.iter().all(|n| n.metrics.contains_key(k)));
        }
        match report.metrics["class_accuracy"] {
            MetricValue::Value(a) => assert!((0.0..=1.0).contains(&a)),
            _ => panic!("class accuracy always applies"),
        }
        for name in [REPORT_JSON, ESTIMATES_CSV, TRACK_CSV, METRICS_CSV, EVENTS_JSONL] {
            assert!(out.get(name).is_some(), "{name}");
        }
    }

    #[test]
    fn missing_metric_serializes_as_marker() {
        let v: MetricValue = None.into();
        assert_eq!(serde_json::to_string(&v).unwrap(), "\"not_applicable\"");
        assert_eq!(serde_json::to_string(&MetricValue::from(Some(2.5))).unwrap(), "2.5");
    }
}
