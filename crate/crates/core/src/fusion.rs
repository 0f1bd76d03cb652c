//! Network-centric fusion over simulated imperfect links.
//!
//! Every carrier publishes its measurements to every other carrier (full
//! mesh). A fusion node merges what it receives with its own local stream into
//! one time-ordered event field, corrects timestamps with known clock models
//! and runs the hypothesis filter on the result.

use crate::filter::{self, EstimateSet, EstimationGrid, FilterError, FilterSettings, SoftConstraint, SolveInputs};
use crate::geodesy::{geodetic_to_ecef, local_enu_frame, Environment, GeodesyError, GeodeticCoord};
use crate::scene::{
    simulate_trajectory, CarrierModeCatalog, CarrierTrack, KinematicState, ObjectClassCatalog, SceneError,
    ScheduledState, SimulatedTrajectory, TrajectoryRequest,
};
use crate::sensor::{
    assemble_observation_set, build_tiling, synthesize_measurement, LayoutId, Measurement, MeasurementNoise,
    MeasurementRequest, ObservationSet, SensorArray, SensorError,
};
use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("record from undeclared carrier {0}")]
    UndeclaredCarrier(u32),
    #[error("invalid link model: {0}")]
    InvalidLink(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("solve window [{start_s}, {end_s}] s at node {node}: {source}")]
    Solve {
        node: u32,
        start_s: f64,
        end_s: f64,
        #[source]
        source: FilterError,
    },
    #[error("sweep needs at least two values")]
    ShortSweep,
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error(transparent)]
    Geodesy(#[from] GeodesyError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Delivery characteristics of the link into one receiver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkModel {
    pub latency_mean_s: f64,
    pub jitter_std_s: f64,
    pub loss_prob: f64,
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel { latency_mean_s: 0.0, jitter_std_s: 0.0, loss_prob: 0.0 }
    }
}

impl LinkModel {
    pub fn validate(&self) -> Result<(), FusionError> {
        if !(self.loss_prob >= 0.0 && self.loss_prob < 1.0) {
            return Err(FusionError::InvalidLink(format!("loss probability {} outside [0, 1)", self.loss_prob)));
        }
        if !(self.latency_mean_s >= 0.0) || !self.latency_mean_s.is_finite() {
            return Err(FusionError::InvalidLink(format!("latency {} must be non-negative", self.latency_mean_s)));
        }
        if !(self.jitter_std_s >= 0.0) || !self.jitter_std_s.is_finite() {
            return Err(FusionError::InvalidLink(format!("jitter {} must be non-negative", self.jitter_std_s)));
        }
        Ok(())
    }
}

/// Local clock of a carrier: `local = true * (1 + drift) + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClockModel {
    pub carrier_id: u32,
    #[serde(default)]
    pub offset_s: f64,
    #[serde(default)]
    pub drift: f64,
}

impl ClockModel {
    pub fn ideal(carrier_id: u32) -> Self {
        ClockModel { carrier_id, offset_s: 0.0, drift: 0.0 }
    }

    pub fn to_local(&self, t: f64) -> f64 {
        t * (1.0 + self.drift) + self.offset_s
    }

    pub fn to_true(&self, local: f64) -> f64 {
        (local - self.offset_s) / (1.0 + self.drift)
    }
}

/// Known clock models of the group, used to correct timestamps.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClockTable {
    pub clocks: Vec<ClockModel>,
}

impl ClockTable {
    pub fn clock(&self, carrier_id: u32) -> ClockModel {
        self.clocks
            .iter()
            .find(|c| c.carrier_id == carrier_id)
            .copied()
            .unwrap_or_else(|| ClockModel::ideal(carrier_id))
    }
}

/// One published measurement. `measurement.time_s` and `emission_time_s` are
/// in the source's local clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRecord {
    pub sequence: u64,
    pub source_id: u32,
    /// Per-source counter; `(source_id, source_seq)` identifies the record.
    pub source_seq: u64,
    pub emission_time_s: f64,
    pub measurement: Measurement,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Delivery {
    Dropped,
    /// Arrival in the receiver's local clock.
    Arrived { arrival_time_s: f64 },
}

/// Sends one record over `link` into a receiver with clock `receiver`.
/// Draws exactly one uniform and one normal variate from `rng` regardless of outcome.
pub fn publish<R: RngCore>(record: &EventRecord, link: &LinkModel, receiver: &ClockModel, source: &ClockModel, rng: &mut R) -> Delivery {
    let u: f64 = rng.random();
    let jitter: f64 = rng.sample::<f64, _>(StandardNormal) * link.jitter_std_s;
    if u < link.loss_prob {
        return Delivery::Dropped;
    }
    let emitted = source.to_true(record.emission_time_s);
    let arrival_true = emitted + (link.latency_mean_s + jitter).max(0.0);
    Delivery::Arrived { arrival_time_s: receiver.to_local(arrival_true) }
}

/// A record as seen by one receiver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReceivedRecord {
    pub record: EventRecord,
    /// Receiver-local arrival time.
    pub arrival_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldEntry {
    pub record: EventRecord,
    pub event_time_s: f64,
    pub arrival_time_s: f64,
}

/// Time-ordered, deduplicated store of the records visible to one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventField {
    pub receiver_id: u32,
    pub entries: Vec<FieldEntry>,
}

impl EventField {
    /// Measurements with corrected timestamps, ordered by `(time, carrier)`.
    pub fn to_observation_set(&self) -> Result<ObservationSet, SensorError> {
        let ms = self
            .entries
            .iter()
            .map(|e| Measurement { time_s: e.event_time_s, ..e.record.measurement.clone() })
            .collect();
        assemble_observation_set(ms, None)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Corrects, sorts and deduplicates received records. The result depends only
/// on the multiset of inputs, not on their order.
pub fn merge_field(
    receiver_id: u32,
    records: &[ReceivedRecord],
    clocks: &ClockTable,
    declared: &[u32],
) -> Result<EventField, FusionError> {
    let receiver = clocks.clock(receiver_id);
    let mut entries = Vec::with_capacity(records.len());
    for r in records {
        if !declared.contains(&r.record.source_id) {
            return Err(FusionError::UndeclaredCarrier(r.record.source_id));
        }
        let source = clocks.clock(r.record.source_id);
        entries.push(FieldEntry {
            event_time_s: source.to_true(r.record.measurement.time_s),
            arrival_time_s: receiver.to_true(r.arrival_time_s),
            record: r.record.clone(),
        });
    }
    entries.sort_by(|a, b| {
        a.event_time_s
            .total_cmp(&b.event_time_s)
            .then(a.record.source_id.cmp(&b.record.source_id))
            .then(a.record.source_seq.cmp(&b.record.source_seq))
            .then(a.arrival_time_s.total_cmp(&b.arrival_time_s))
    });
    entries.dedup_by(|later, earlier| {
        later.record.source_id == earlier.record.source_id && later.record.source_seq == earlier.record.source_seq
    });
    Ok(EventField { receiver_id, entries })
}

/// Reference point of the local east-north-up coordinates used in scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Origin {
    pub latitude_deg: f64,
    pub longitude_deg: f64,
    #[serde(default)]
    pub altitude_m: f64,
}

impl Origin {
    pub fn geodetic(&self) -> Result<GeodeticCoord, GeodesyError> {
        GeodeticCoord::from_degrees(self.altitude_m, self.latitude_deg, self.longitude_deg)
    }
}

/// Local-to-ECEF mapping of a scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    pub origin_m: Vector3<f64>,
    pub rotation: Matrix3<f64>,
}

impl LocalFrame {
    pub fn new(origin: &Origin, env: &Environment) -> Result<Self, GeodesyError> {
        let g = origin.geodetic()?;
        let frame = local_enu_frame(&g, &env.ellipsoid);
        Ok(LocalFrame { origin_m: geodetic_to_ecef(&g, &env.ellipsoid), rotation: frame.to_ecef_matrix() })
    }

    pub fn point(&self, enu: &Vector3<f64>) -> Vector3<f64> {
        self.origin_m + self.rotation * enu
    }

    pub fn vector(&self, enu: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * enu
    }

    pub fn to_local(&self, ecef: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (ecef - self.origin_m)
    }
}

fn default_mode() -> u32 {
    1
}

fn east() -> Vector3<f64> {
    Vector3::x()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CarrierPlacement {
    pub id: u32,
    pub position_enu_m: Vector3<f64>,
    #[serde(default = "Vector3::zeros")]
    pub velocity_enu_mps: Vector3<f64>,
    #[serde(default = "default_mode")]
    pub mode: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CarrierSetup {
    /// `count` carriers spaced `baseline_m` apart along `axis_enu`, centred on `center_enu_m`, ids 1..=count.
    Formation {
        center_enu_m: Vector3<f64>,
        baseline_m: f64,
        #[serde(default = "east")]
        axis_enu: Vector3<f64>,
        count: u32,
        #[serde(default = "Vector3::zeros")]
        velocity_enu_mps: Vector3<f64>,
        #[serde(default = "default_mode")]
        mode: u32,
    },
    Explicit { carriers: Vec<CarrierPlacement> },
}

impl CarrierSetup {
    pub fn placements(&self) -> Vec<CarrierPlacement> {
        match self {
            CarrierSetup::Formation { center_enu_m, baseline_m, axis_enu, count, velocity_enu_mps, mode } => {
                let axis = axis_enu.normalize();
                let mid = (*count as f64 - 1.0) / 2.0;
                (0..*count)
                    .map(|i| CarrierPlacement {
                        id: i + 1,
                        position_enu_m: center_enu_m + axis * ((i as f64 - mid) * baseline_m),
                        velocity_enu_mps: *velocity_enu_mps,
                        mode: *mode,
                    })
                    .collect()
            }
            CarrierSetup::Explicit { carriers } => carriers.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub class_id: u32,
    pub schedule: Vec<ScheduledState>,
    pub position_enu_m: Vector3<f64>,
    #[serde(default = "Vector3::zeros")]
    pub velocity_enu_mps: Vector3<f64>,
    #[serde(default = "Vector3::zeros")]
    pub acceleration_enu_mps2: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameSpec {
    #[serde(default)]
    pub start_s: f64,
    pub count: usize,
    pub rate_hz: f64,
}

impl FrameSpec {
    pub fn period_s(&self) -> f64 {
        1.0 / self.rate_hz
    }

    pub fn time(&self, k: usize) -> f64 {
        self.start_s + k as f64 * self.period_s()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.count).map(|k| self.time(k)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridSpec {
    /// One grid time per frame.
    #[default]
    Frames,
    Times { times_s: Vec<f64> },
    Range { start_s: f64, end_s: f64, step_s: f64 },
}

impl GridSpec {
    pub fn build(&self, frames: &FrameSpec) -> Result<EstimationGrid, FilterError> {
        match self {
            GridSpec::Frames => EstimationGrid::new(frames.times()),
            GridSpec::Times { times_s } => EstimationGrid::new(times_s.clone()),
            GridSpec::Range { start_s, end_s, step_s } => {
                if !(*step_s > 0.0) || end_s < start_s {
                    return Err(FilterError::InvalidGrid("range needs step > 0 and end >= start".into()));
                }
                let n = ((end_s - start_s) / step_s + 1e-9).floor() as usize;
                EstimationGrid::new((0..=n).map(|k| start_s + k as f64 * step_s).collect())
            }
        }
    }
}

fn default_converge() -> f64 {
    0.05
}

/// Physical description of a group engagement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupScenario {
    pub origin: Origin,
    #[serde(default)]
    pub environment: Environment,
    pub catalog: ObjectClassCatalog,
    pub carrier_modes: CarrierModeCatalog,
    pub carriers: CarrierSetup,
    pub layout: LayoutId,
    pub noise: MeasurementNoise,
    #[serde(default)]
    pub link: LinkModel,
    #[serde(default)]
    pub clocks: Vec<ClockModel>,
    pub target: TargetSpec,
    pub frames: FrameSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub filter: FilterSettings,
    #[serde(default)]
    pub constraints: Vec<SoftConstraint>,
    /// Carriers that run a filter; all carriers when absent.
    #[serde(default)]
    pub fusion_nodes: Option<Vec<u32>>,
    /// Records arriving after this true time are ignored by every node.
    #[serde(default)]
    pub fusion_cutoff_s: Option<f64>,
    /// Relative slant-range error below which a node counts as converged.
    #[serde(default = "default_converge")]
    pub convergence_relative_error: f64,
}

impl GroupScenario {
    pub fn validate(&self) -> Result<(), FusionError> {
        self.environment.ellipsoid.validate()?;
        if let Some(t) = &self.environment.terrain {
            t.validate()?;
        }
        if let Some(a) = &self.environment.atmosphere {
            a.validate()?;
        }
        self.origin.geodetic()?;
        self.catalog.validate()?;
        self.carrier_modes.validate()?;
        self.link.validate()?;
        for c in &self.constraints {
            c.validate()?;
        }
        let class = self.catalog.class(self.target.class_id)?;
        for s in &self.target.schedule {
            if class.state(s.state_id).is_none() {
                return Err(SceneError::UnknownState { class_id: class.id, state_id: s.state_id }.into());
            }
        }
        if self.target.schedule.is_empty() {
            return Err(FusionError::InvalidScenario("target.schedule is empty".into()));
        }
        if !(self.frames.rate_hz > 0.0) || !self.frames.rate_hz.is_finite() {
            return Err(FusionError::InvalidScenario("frames.rate_hz must be positive".into()));
        }
        if self.frames.count == 0 {
            return Err(FusionError::InvalidScenario("frames.count must be positive".into()));
        }
        if let CarrierSetup::Formation { axis_enu, baseline_m, count, .. } = &self.carriers {
            if !(axis_enu.norm() > 0.0) {
                return Err(FusionError::InvalidScenario("carriers.axis_enu must be non-zero".into()));
            }
            if *count == 0 || !(*baseline_m >= 0.0) {
                return Err(FusionError::InvalidScenario("carriers need count >= 1 and baseline_m >= 0".into()));
            }
        }
        let placements = self.carriers.placements();
        if placements.is_empty() {
            return Err(FusionError::InvalidScenario("no carriers".into()));
        }
        let ids: BTreeSet<u32> = placements.iter().map(|p| p.id).collect();
        if ids.len() != placements.len() {
            return Err(FusionError::InvalidScenario("carrier ids must be unique".into()));
        }
        for p in &placements {
            self.carrier_modes.mode(p.mode)?;
        }
        for c in &self.clocks {
            if !ids.contains(&c.carrier_id) {
                return Err(FusionError::InvalidScenario(format!("clock for unknown carrier {}", c.carrier_id)));
            }
            if !(c.drift > -1.0) {
                return Err(FusionError::InvalidScenario("clock drift must exceed -1".into()));
            }
        }
        if let Some(nodes) = &self.fusion_nodes {
            if nodes.is_empty() {
                return Err(FusionError::InvalidScenario("fusion_nodes is empty".into()));
            }
            if let Some(n) = nodes.iter().find(|n| !ids.contains(n)) {
                return Err(FusionError::InvalidScenario(format!("fusion node {n} is not a carrier")));
            }
        }
        self.grid.build(&self.frames)?;
        Ok(())
    }

    pub fn carrier_ids(&self) -> Vec<u32> {
        self.carriers.placements().iter().map(|p| p.id).collect()
    }

    pub fn node_ids(&self) -> Vec<u32> {
        self.fusion_nodes.clone().unwrap_or_else(|| self.carrier_ids())
    }

    pub fn clock_table(&self) -> ClockTable {
        ClockTable { clocks: self.clocks.clone() }
    }
}

/// Truth and raw measurements of one seeded run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Simulation {
    pub truth: SimulatedTrajectory,
    pub carriers: Vec<CarrierTrack>,
    /// Every carrier's measurements, true time stamps, ordered by `(time, carrier)`.
    pub measurements: Vec<Measurement>,
}

const STREAM_TRUTH: u64 = 1;
const STREAM_MEASUREMENT: u64 = 2;
const STREAM_LINK: u64 = 16;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn build_carriers(s: &GroupScenario, frame: &LocalFrame) -> Vec<CarrierTrack> {
    s.carriers
        .placements()
        .iter()
        .map(|p| CarrierTrack {
            id: p.id,
            initial_position_m: frame.point(&p.position_enu_m),
            velocity_mps: frame.vector(&p.velocity_enu_mps),
            attitude: UnitQuaternion::identity(),
            mode: p.mode,
            start_time_s: s.frames.start_s,
        })
        .collect()
}

/// Simulates truth and synthesizes every carrier's measurements for one seed.
pub fn simulate(s: &GroupScenario, seed: u64) -> Result<Simulation, FusionError> {
    let array = build_tiling(s.layout);
    simulate_with(s, seed, &array, s.noise)
}

fn simulate_with(s: &GroupScenario, seed: u64, array: &SensorArray, noise: MeasurementNoise) -> Result<Simulation, FusionError> {
    let frame = LocalFrame::new(&s.origin, &s.environment)?;
    let initial = KinematicState::new(
        s.frames.start_s,
        frame.point(&s.target.position_enu_m),
        frame.vector(&s.target.velocity_enu_mps),
        frame.vector(&s.target.acceleration_enu_mps2),
    );
    let request = TrajectoryRequest {
        initial,
        class_id: s.target.class_id,
        schedule: s.target.schedule.clone(),
        step_s: s.frames.period_s(),
        end_time_s: s.frames.time(s.frames.count - 1),
        seed: stream_rng(seed, STREAM_TRUTH).next_u64(),
    };
    let truth = simulate_trajectory(&request, &s.catalog, &s.environment.ellipsoid)?;
    let carriers = build_carriers(s, &frame);

    let mut seeds = stream_rng(seed, STREAM_MEASUREMENT);
    let mut measurements = Vec::with_capacity(s.frames.count * carriers.len());
    for k in 0..s.frames.count {
        let t = s.frames.time(k);
        let target = truth.trajectory.state_at(t).expect("truth covers every frame");
        for c in &carriers {
            let m_seed = seeds.next_u64();
            let state = c.state_at(t);
            let mode = s.carrier_modes.mode(c.mode)?;
            let range = (target.position_m - state.position_m).norm();
            if range < mode.detection_range_min_m || range > mode.detection_range_max_m {
                continue;
            }
            let bearing_std_rad = if noise.bearing_std_rad > 0.0 { noise.bearing_std_rad } else { 0.0 };
            let req = MeasurementRequest {
                carrier_id: c.id,
                carrier: &state,
                target: &target,
                array,
                noise: MeasurementNoise { bearing_std_rad, ..noise },
                environment: Some(&s.environment),
                seed: m_seed,
            };
            measurements.push(synthesize_measurement(&req)?);
        }
    }
    Ok(Simulation { truth, carriers, measurements })
}

/// What one receiver got over the network, plus the delivery log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveryLogEntry {
    pub sequence: u64,
    pub source_id: u32,
    pub receiver_id: u32,
    pub emission_time_s: f64,
    #[serde(flatten)]
    pub delivery: Delivery,
}

/// Publishes every measurement to every receiver. Own measurements arrive
/// locally with zero delay.
pub fn distribute(
    s: &GroupScenario,
    sim: &Simulation,
    seed: u64,
) -> (Vec<EventRecord>, Vec<(u32, Vec<ReceivedRecord>)>, Vec<DeliveryLogEntry>) {
    let clocks = s.clock_table();
    let mut per_source: std::collections::BTreeMap<u32, u64> = Default::default();
    let records: Vec<EventRecord> = sim
        .measurements
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let seq = per_source.entry(m.carrier_id).or_insert(0);
            let clock = clocks.clock(m.carrier_id);
            let local = clock.to_local(m.time_s);
            let r = EventRecord {
                sequence: i as u64,
                source_id: m.carrier_id,
                source_seq: *seq,
                emission_time_s: local,
                measurement: Measurement { time_s: local, ..m.clone() },
            };
            *seq += 1;
            r
        })
        .collect();

    let mut received = Vec::new();
    let mut log = Vec::new();
    for node in s.node_ids() {
        let receiver = clocks.clock(node);
        let mut rng = stream_rng(seed, STREAM_LINK + node as u64);
        let mut got = Vec::with_capacity(records.len());
        for r in &records {
            let delivery = if r.source_id == node {
                let source = clocks.clock(r.source_id);
                Delivery::Arrived { arrival_time_s: receiver.to_local(source.to_true(r.emission_time_s)) }
            } else {
                publish(r, &s.link, &receiver, &clocks.clock(r.source_id), &mut rng)
            };
            if let Delivery::Arrived { arrival_time_s } = delivery {
                let within = s.fusion_cutoff_s.is_none_or(|cut| receiver.to_true(arrival_time_s) <= cut);
                if within {
                    got.push(ReceivedRecord { record: r.clone(), arrival_time_s });
                }
            }
            log.push(DeliveryLogEntry {
                sequence: r.sequence,
                source_id: r.source_id,
                receiver_id: node,
                emission_time_s: r.emission_time_s,
                delivery,
            });
        }
        received.push((node, got));
    }
    (records, received, log)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeMetrics {
    pub node_id: u32,
    pub observations: usize,
    pub range_rmse_m: Option<f64>,
    pub position_rmse_m: Option<f64>,
    pub class_correct: bool,
    /// Time from the first observation until the relative range error stays below threshold.
    pub time_to_converge_s: Option<f64>,
    pub final_relative_range_error: Option<f64>,
    pub clamp_events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeOutcome {
    pub node_id: u32,
    pub estimate: EstimateSet,
    pub metrics: NodeMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupMetrics {
    pub range_rmse_m: Option<f64>,
    pub position_rmse_m: Option<f64>,
    pub class_accuracy: f64,
    pub time_to_converge_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupOutcome {
    pub seed: u64,
    pub simulation: Simulation,
    pub deliveries: Vec<DeliveryLogEntry>,
    pub nodes: Vec<NodeOutcome>,
    pub metrics: GroupMetrics,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

fn rms(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some((values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt())
    }
}

/// Runs the filter on one observation set; the direct, network-free path.
pub fn solve_observations(s: &GroupScenario, obs: &ObservationSet) -> Result<EstimateSet, FilterError> {
    let grid = s.grid.build(&s.frames)?;
    filter::solve(&SolveInputs {
        observations: obs,
        grid: &grid,
        catalog: &s.catalog,
        carrier_modes: &s.carrier_modes,
        environment: &s.environment,
        constraints: &s.constraints,
        settings: &s.filter,
    })
}

pub fn node_metrics(
    node_id: u32,
    est: &EstimateSet,
    obs_count: usize,
    sim: &Simulation,
    threshold: f64,
) -> NodeMetrics {
    let carrier = sim.carriers.iter().find(|c| c.id == node_id).expect("node is a carrier");
    let truth = &sim.truth.trajectory;
    let (t0, t1) = (truth.start_time().unwrap_or(0.0), truth.end_time().unwrap_or(0.0));
    let mut range_err = Vec::new();
    let mut pos_err = Vec::new();
    for e in &est.estimates {
        if e.time_s < t0 || e.time_s > t1 {
            continue;
        }
        let Some(x) = truth.state_at(e.time_s) else { continue };
        let c = carrier.state_at(e.time_s).position_m;
        range_err.push((e.state.position_m - c).norm() - (x.position_m - c).norm());
        pos_err.push((e.state.position_m - x.position_m).norm());
    }
    let rel: Vec<(f64, f64)> = est
        .filter_track
        .iter()
        .filter_map(|p| {
            let x = truth.state_at(p.time_s)?;
            let c = carrier.state_at(p.time_s).position_m;
            let true_range = (x.position_m - c).norm();
            Some((p.time_s, ((p.position_m - c).norm() - true_range).abs() / true_range))
        })
        .collect();
    let final_rel = rel.last().map(|r| r.1);
    let time_to_converge_s = match rel.iter().rposition(|r| !(r.1 < threshold)) {
        None if !rel.is_empty() => Some(0.0),
        Some(i) if i + 1 < rel.len() => Some(rel[i + 1].0 - est.observation_span.0),
        _ => None,
    };
    NodeMetrics {
        node_id,
        observations: obs_count,
        range_rmse_m: rms(&range_err),
        position_rmse_m: rms(&pos_err),
        class_correct: est.class_id == sim.truth.class_id,
        time_to_converge_s,
        final_relative_range_error: final_rel,
        clamp_events: est.clamp_events,
    }
}

/// Truth simulation, measurement synthesis, network delivery, per-node solve and metrics.
pub fn run_group_scenario(s: &GroupScenario, seed: u64) -> Result<GroupOutcome, FusionError> {
    s.validate()?;
    let sim = simulate(s, seed)?;
    let (_, received, deliveries) = distribute(s, &sim, seed);
    let declared = s.carrier_ids();
    let clocks = s.clock_table();
    let nodes = received
        .par_iter()
        .map(|(node, got)| -> Result<NodeOutcome, FusionError> {
            let field = merge_field(*node, got, &clocks, &declared)?;
            let obs = field.to_observation_set()?;
            let span = if obs.is_empty() { (f64::NAN, f64::NAN) } else { obs.time_span() };
            let estimate = solve_observations(s, &obs).map_err(|source| FusionError::Solve {
                node: *node,
                start_s: span.0,
                end_s: span.1,
                source,
            })?;
            let metrics = node_metrics(*node, &estimate, obs.len(), &sim, s.convergence_relative_error);
            Ok(NodeOutcome { node_id: *node, estimate, metrics })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let metrics = GroupMetrics {
        range_rmse_m: mean_of(nodes.iter().map(|n| n.metrics.range_rmse_m)),
        position_rmse_m: mean_of(nodes.iter().map(|n| n.metrics.position_rmse_m)),
        class_accuracy: nodes.iter().filter(|n| n.metrics.class_correct).count() as f64 / nodes.len() as f64,
        time_to_converge_s: mean_of(nodes.iter().map(|n| n.metrics.time_to_converge_s)),
    };
    Ok(GroupOutcome { seed, simulation: sim, deliveries, nodes, metrics })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    BaselineM,
    CarrierCount,
    LossProb,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::BaselineM => "baseline_m",
            SweepAxis::CarrierCount => "carrier_count",
            SweepAxis::LossProb => "loss_prob",
        }
    }
}

/// Copy of `s` with the sweep axis set to `value`.
pub fn apply_axis(s: &GroupScenario, axis: SweepAxis, value: f64) -> Result<GroupScenario, FusionError> {
    let mut out = s.clone();
    match (axis, &mut out.carriers) {
        (SweepAxis::LossProb, _) => out.link.loss_prob = value,
        (SweepAxis::BaselineM, CarrierSetup::Formation { baseline_m, .. }) => *baseline_m = value,
        (SweepAxis::CarrierCount, CarrierSetup::Formation { count, .. }) => {
            if !(value >= 1.0) || value.fract() != 0.0 {
                return Err(FusionError::InvalidScenario(format!("carrier_count {value} must be a positive integer")));
            }
            *count = value as u32;
            if let Some(nodes) = &mut out.fusion_nodes {
                nodes.retain(|n| *n <= value as u32);
                if nodes.is_empty() {
                    nodes.push(1);
                }
            }
            out.clocks.retain(|c| c.carrier_id <= value as u32);
        }
        (axis, CarrierSetup::Explicit { .. }) => {
            return Err(FusionError::InvalidScenario(format!("sweeping {} needs a formation carrier setup", axis.name())));
        }
    }
    out.validate()?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub runs: usize,
    pub range_rmse_m: Option<f64>,
    pub position_rmse_m: Option<f64>,
    pub class_accuracy: f64,
    pub time_to_converge_s: Option<f64>,
    pub converged_fraction: f64,
    /// Two-carrier triangulation error against truth with random noise off and pixel quantization on.
    pub triangulation_rmse_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub seeds: Vec<u64>,
    pub rows: Vec<SweepRow>,
}

/// Position error of per-frame triangulation between the first two carriers,
/// with every random noise source disabled and pixel quantization enabled.
pub fn noiseless_triangulation_rmse(s: &GroupScenario, seed: u64) -> Result<Option<f64>, FusionError> {
    let ids = s.carrier_ids();
    if ids.len() < 2 {
        return Ok(None);
    }
    let noise = MeasurementNoise { position_std_m: 0.0, bearing_std_rad: 0.0, quantize: true };
    let array = build_tiling(s.layout);
    let sim = simulate_with(s, seed, &array, noise)?;
    let mut errs = Vec::new();
    for pair in sim.measurements.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.time_s != b.time_s || a.carrier_id != ids[0] || b.carrier_id != ids[1] {
            continue;
        }
        let Ok(tri) = filter::triangulate_baseline(a, b) else { continue };
        let x = sim.truth.trajectory.state_at(a.time_s).expect("truth covers frames");
        errs.push((tri.point_m - x.position_m).norm());
    }
    Ok(rms(&errs))
}

/// One batch of seeded group runs per axis value, same seeds for every value.
pub fn degradation_sweep(s: &GroupScenario, axis: SweepAxis, values: &[f64], seeds: &[u64]) -> Result<SweepTable, FusionError> {
    if values.len() < 2 {
        return Err(FusionError::ShortSweep);
    }
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let variant = apply_axis(s, axis, value)?;
        let outcomes = seeds
            .par_iter()
            .map(|&seed| run_group_scenario(&variant, seed).map(|o| o.metrics))
            .collect::<Result<Vec<_>, _>>()?;
        let converged = outcomes.iter().filter(|m| m.time_to_converge_s.is_some()).count();
        rows.push(SweepRow {
            axis,
            value,
            runs: outcomes.len(),
            range_rmse_m: mean_of(outcomes.iter().map(|m| m.range_rmse_m)),
            position_rmse_m: mean_of(outcomes.iter().map(|m| m.position_rmse_m)),
            class_accuracy: outcomes.iter().map(|m| m.class_accuracy).sum::<f64>() / outcomes.len().max(1) as f64,
            time_to_converge_s: mean_of(outcomes.iter().map(|m| m.time_to_converge_s)),
            converged_fraction: converged as f64 / outcomes.len().max(1) as f64,
            triangulation_rmse_m: noiseless_triangulation_rmse(&variant, seeds.first().copied().unwrap_or(0))?,
        });
    }
    Ok(SweepTable { axis, seeds: seeds.to_vec(), rows })
}

#[derive(Serialize)]
struct SweepCsvRow<'a> {
    axis: &'a str,
    value: f64,
    runs: usize,
    range_rmse_m: Option<f64>,
    position_rmse_m: Option<f64>,
    class_accuracy: f64,
    time_to_converge_s: Option<f64>,
    converged_fraction: f64,
    triangulation_rmse_m: Option<f64>,
}

pub fn write_sweep_csv<W: Write>(out: W, table: &SweepTable) -> Result<(), FusionError> {
    let mut w = csv::Writer::from_writer(out);
    for r in &table.rows {
        w.serialize(SweepCsvRow {
            axis: r.axis.name(),
            value: r.value,
            runs: r.runs,
            range_rmse_m: r.range_rmse_m,
            position_rmse_m: r.position_rmse_m,
            class_accuracy: r.class_accuracy,
            time_to_converge_s: r.time_to_converge_s,
            converged_fraction: r.converged_fraction,
            triangulation_rmse_m: r.triangulation_rmse_m,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct NodeCsvRow {
    seed: u64,
    node_id: u32,
    observations: usize,
    class_id: u32,
    class_correct: bool,
    range_rmse_m: Option<f64>,
    position_rmse_m: Option<f64>,
    time_to_converge_s: Option<f64>,
    final_relative_range_error: Option<f64>,
    clamp_events: usize,
}

/// Per-node metrics table.
pub fn write_metrics_csv<W: Write>(out: W, outcome: &GroupOutcome) -> Result<(), FusionError> {
    let mut w = csv::Writer::from_writer(out);
    for n in &outcome.nodes {
        let m = &n.metrics;
        w.serialize(NodeCsvRow {
            seed: outcome.seed,
            node_id: m.node_id,
            observations: m.observations,
            class_id: n.estimate.class_id,
            class_correct: m.class_correct,
            range_rmse_m: m.range_rmse_m,
            position_rmse_m: m.position_rmse_m,
            time_to_converge_s: m.time_to_converge_s,
            final_relative_range_error: m.final_relative_range_error,
            clamp_events: m.clamp_events,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// One JSON object per delivery attempt, in publication order.
pub fn write_event_log<W: Write>(mut out: W, log: &[DeliveryLogEntry]) -> Result<(), FusionError> {
    for e in log {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::scene::{CarrierMode, KinematicBounds, MotionModel, ObjectClass, ObjectState, TacticProfile};
    use crate::sensor::ObservationConditions;
    use approx::assert_abs_diff_eq;

    fn record(source: u32, seq: u64, t: f64) -> EventRecord {
        EventRecord {
            sequence: seq,
            source_id: source,
            source_seq: seq,
            emission_time_s: t,
            measurement: Measurement {
                time_s: t,
                carrier_id: source,
                carrier_position_m: Vector3::zeros(),
                los: Vector3::x(),
                carrier_mode: 1,
                conditions: ObservationConditions::default(),
                tactical_tags: vec![],
                tile_id: None,
                pixel: None,
            },
        }
    }

    #[test]
    fn deterministic_link_latency() {
        let link = LinkModel { latency_mean_s: 0.1, jitter_std_s: 0.0, loss_prob: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ideal = ClockModel::ideal(2);
        match publish(&record(1, 0, 3.0), &link, &ideal, &ClockModel::ideal(1), &mut rng) {
            Delivery::Arrived { arrival_time_s } => assert_abs_diff_eq!(arrival_time_s, 3.1, epsilon = 1e-12),
            Delivery::Dropped => panic!("lossless link dropped a record"),
        }
        let shifted = ClockModel { carrier_id: 2, offset_s: 2.0, drift: 0.0 };
        match publish(&record(1, 0, 3.0), &link, &shifted, &ClockModel::ideal(1), &mut rng) {
            Delivery::Arrived { arrival_time_s } => assert_abs_diff_eq!(arrival_time_s, 5.1, epsilon = 1e-12),
            Delivery::Dropped => panic!("lossless link dropped a record"),
        }
    }

    #[test]
    fn near_total_loss() {
        let eps = 1e-4;
        let link = LinkModel { latency_mean_s: 0.0, jitter_std_s: 0.01, loss_prob: 1.0 - eps };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let r = record(1, 0, 0.0);
        let n = 10_000;
        let delivered = (0..n)
            .filter(|_| matches!(publish(&r, &link, &ClockModel::ideal(2), &ClockModel::ideal(1), &mut rng), Delivery::Arrived { .. }))
            .count();
        // expected 1 delivery; P(X >= 8) for Binomial(1e4, 1e-4) is about 1e-5
        assert!(delivered < 8, "{delivered} records got through");
        assert!(LinkModel { loss_prob: 1.0, ..link }.validate().is_err());
    }

    #[test]
    fn jitter_never_makes_arrival_precede_emission() {
        let link = LinkModel { latency_mean_s: 0.01, jitter_std_s: 0.5, loss_prob: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for i in 0..1000 {
            let t = i as f64 * 0.1;
            if let Delivery::Arrived { arrival_time_s } = publish(&record(1, i, t), &link, &ClockModel::ideal(2), &ClockModel::ideal(1), &mut rng) {
                assert!(arrival_time_s >= t);
            }
        }
    }

    fn received(r: EventRecord, arrival: f64) -> ReceivedRecord {
        ReceivedRecord { record: r, arrival_time_s: arrival }
    }

    #[test]
    fn merge_orders_and_deduplicates() {
        let recs = vec![
            received(record(1, 0, 0.0), 0.0),
            received(record(2, 0, 0.05), 0.3),
            received(record(1, 1, 0.1), 0.1),
            received(record(2, 1, 0.15), 0.2),
            received(record(1, 1, 0.1), 0.4),
        ];
        let field = merge_field(1, &recs, &ClockTable::default(), &[1, 2]).unwrap();
        let times: Vec<f64> = field.entries.iter().map(|e| e.event_time_s).collect();
        assert_eq!(times, vec![0.0, 0.05, 0.1, 0.15]);
        // the late-arriving record sits before later events
        assert_eq!(field.entries[1].record.source_id, 2);
        assert_eq!(field.entries[2].arrival_time_s, 0.1);

        let mut reversed = recs.clone();
        reversed.reverse();
        assert_eq!(merge_field(1, &reversed, &ClockTable::default(), &[1, 2]).unwrap(), field);

        let err = merge_field(1, &recs, &ClockTable::default(), &[1]).unwrap_err();
        assert!(err.to_string().contains("undeclared carrier 2"));
    }

    #[test]
    fn clock_correction_restores_true_time() {
        let clocks = ClockTable { clocks: vec![ClockModel { carrier_id: 2, offset_s: 2.0, drift: 1e-3 }] };
        let c = clocks.clock(2);
        let local = c.to_local(10.0);
        let field = merge_field(1, &[received(record(2, 0, local), 12.0)], &clocks, &[1, 2]).unwrap();
        assert_abs_diff_eq!(field.entries[0].event_time_s, 10.0, epsilon = 1e-12);
    }

    pub(crate) fn two_class_catalog() -> ObjectClassCatalog {
        let state = |motion| ObjectState {
            id: 1,
            name: String::new(),
            motion,
            bounds: KinematicBounds::unbounded(),
            tactic: TacticProfile::default(),
        };
        ObjectClassCatalog::new(vec![
            ObjectClass { id: 1, name: "cruiser".into(), states: vec![state(MotionModel::constant_velocity(0.01))] },
            ObjectClass { id: 2, name: "accelerator".into(), states: vec![state(MotionModel::constant_acceleration(0.01))] },
        ])
        .unwrap()
    }

    pub(crate) fn scenario(count: u32, baseline_m: f64) -> GroupScenario {
        GroupScenario {
            origin: Origin { latitude_deg: 45.0, longitude_deg: 10.0, altitude_m: 0.0 },
            environment: Environment::default(),
            catalog: two_class_catalog(),
            carrier_modes: CarrierModeCatalog {
                modes: vec![CarrierMode {
                    id: 1,
                    bearing_std_rad: 5e-4,
                    frame_rate_hz: 10.0,
                    detection_range_min_m: 5e3,
                    detection_range_max_m: 20e3,
                }],
            },
            carriers: CarrierSetup::Formation {
                center_enu_m: Vector3::new(0.0, 0.0, 1000.0),
                baseline_m,
                axis_enu: Vector3::x(),
                count,
                velocity_enu_mps: Vector3::zeros(),
                mode: 1,
            },
            layout: LayoutId::Cube6,
            noise: MeasurementNoise { position_std_m: 0.0, bearing_std_rad: 5e-4, quantize: false },
            link: LinkModel::default(),
            clocks: vec![],
            target: TargetSpec {
                class_id: 1,
                schedule: vec![ScheduledState { state_id: 1, start_time_s: 0.0 }],
                position_enu_m: Vector3::new(0.0, 10_000.0, 3000.0),
                velocity_enu_mps: Vector3::new(150.0, -50.0, 0.0),
                acceleration_enu_mps2: Vector3::zeros(),
            },
            frames: FrameSpec { start_s: 0.0, count: 30, rate_hz: 10.0 },
            grid: GridSpec::Frames,
            filter: FilterSettings::default(),
            constraints: vec![],
            fusion_nodes: None,
            fusion_cutoff_s: None,
            convergence_relative_error: 0.05,
        }
    }

    #[test]
    fn formation_placement() {
        let p = scenario(3, 1000.0).carriers.placements();
        assert_eq!(p.iter().map(|c| c.id).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(p[0].position_enu_m, Vector3::new(-1000.0, 0.0, 1000.0));
        assert_eq!(p[2].position_enu_m, Vector3::new(1000.0, 0.0, 1000.0));
    }

    #[test]
    fn single_carrier_lossless_equals_direct_solve() {
        let s = scenario(1, 0.0);
        let outcome = run_group_scenario(&s, 11).unwrap();
        let sim = simulate(&s, 11).unwrap();
        let obs = assemble_observation_set(sim.measurements.clone(), None).unwrap();
        let direct = solve_observations(&s, &obs).unwrap();
        assert_eq!(
            serde_json::to_string(&outcome.nodes[0].estimate).unwrap(),
            serde_json::to_string(&direct).unwrap()
        );
    }

    #[test]
    fn two_carriers_converge_and_repeat() {
        let s = scenario(2, 2000.0);
        let a = run_group_scenario(&s, 5).unwrap();
        let b = run_group_scenario(&s, 5).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        for n in &a.nodes {
            let rel = n.metrics.final_relative_range_error.unwrap();
            assert!(rel < 0.05, "node {} relative error {rel}", n.node_id);
        }
    }

    #[test]
    fn sweep_rows_match_values() {
        let s = scenario(2, 1000.0);
        let table = degradation_sweep(&s, SweepAxis::LossProb, &[0.0, 0.5], &[1, 2]).unwrap();
        assert_eq!(table.rows.len(), 2);
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &table).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
        assert!(matches!(degradation_sweep(&s, SweepAxis::LossProb, &[0.0], &[1]), Err(FusionError::ShortSweep)));
    }

    #[test]
    fn baseline_improves_noiseless_triangulation() {
        let s = scenario(2, 100.0);
        let errs: Vec<f64> = [100.0, 1000.0, 10_000.0]
            .iter()
            .map(|b| noiseless_triangulation_rmse(&apply_axis(&s, SweepAxis::BaselineM, *b).unwrap(), 1).unwrap().unwrap())
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    }
}
