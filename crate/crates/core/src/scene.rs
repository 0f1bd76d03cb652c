//! Ground truth: carriers and observed objects as material points, the object
//! class/state catalog, motion models and trajectory simulation.

use crate::geodesy::{ecef_to_geodetic, geodetic_to_ecef, EllipsoidModel, GeodeticCoord};
use nalgebra::{DMatrix, Matrix3, SMatrix, SVector, UnitQuaternion, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type StateVector = SVector<f64, 9>;
pub type StateMatrix = SMatrix<f64, 9, 9>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("unknown object class {0}")]
    UnknownClass(u32),
    #[error("class {class_id} has no state {state_id}")]
    UnknownState { class_id: u32, state_id: u32 },
    #[error("unknown carrier mode {0}")]
    UnknownCarrierMode(u32),
    #[error("invalid catalog: {0}")]
    InvalidCatalog(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("trajectory times must be strictly increasing (sample {0})")]
    NonMonotoneTrajectory(usize),
}

/// Position, velocity and acceleration of an observed object at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KinematicState {
    pub time_s: f64,
    pub position_m: Vector3<f64>,
    pub velocity_mps: Vector3<f64>,
    pub acceleration_mps2: Vector3<f64>,
}

impl KinematicState {
    pub fn new(time_s: f64, position_m: Vector3<f64>, velocity_mps: Vector3<f64>, acceleration_mps2: Vector3<f64>) -> Self {
        KinematicState { time_s, position_m, velocity_mps, acceleration_mps2 }
    }

    /// Stacked `[r, v, a]`.
    pub fn to_vector(&self) -> StateVector {
        let mut x = StateVector::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&self.position_m);
        x.fixed_rows_mut::<3>(3).copy_from(&self.velocity_mps);
        x.fixed_rows_mut::<3>(6).copy_from(&self.acceleration_mps2);
        x
    }

    pub fn from_vector(time_s: f64, x: &StateVector) -> Self {
        KinematicState {
            time_s,
            position_m: x.fixed_rows::<3>(0).into_owned(),
            velocity_mps: x.fixed_rows::<3>(3).into_owned(),
            acceleration_mps2: x.fixed_rows::<3>(6).into_owned(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.time_s.is_finite() && self.to_vector().iter().all(|v| v.is_finite())
    }

    /// Second-order Taylor extrapolation using the state's own acceleration.
    pub fn extrapolate(&self, t: f64) -> KinematicState {
        let dt = t - self.time_s;
        KinematicState {
            time_s: t,
            position_m: self.position_m + self.velocity_mps * dt + self.acceleration_mps2 * (0.5 * dt * dt),
            velocity_mps: self.velocity_mps + self.acceleration_mps2 * dt,
            acceleration_mps2: self.acceleration_mps2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MotionKind {
    ConstantVelocity,
    ConstantAcceleration,
    /// Velocity rotates about `axis` at a fixed rate; the axis need not be normalized.
    CoordinatedTurn { turn_rate_rad_s: f64, axis: Vector3<f64> },
}

/// Discrete kinematic model shared by truth generation and the filter bank.
///
/// `noise_intensity` is the white acceleration spectral density (m^2/s^3) for
/// constant-velocity and coordinated-turn kinds, and the white jerk density
/// (m^2/s^5) for constant acceleration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionModel {
    #[serde(flatten)]
    pub kind: MotionKind,
    #[serde(default)]
    pub noise_intensity: f64,
}

fn skew(n: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -n.z, n.y, n.z, 0.0, -n.x, -n.y, n.x, 0.0)
}

impl MotionModel {
    pub fn constant_velocity(noise_intensity: f64) -> Self {
        MotionModel { kind: MotionKind::ConstantVelocity, noise_intensity }
    }

    pub fn constant_acceleration(noise_intensity: f64) -> Self {
        MotionModel { kind: MotionKind::ConstantAcceleration, noise_intensity }
    }

    pub fn coordinated_turn(turn_rate_rad_s: f64, axis: Vector3<f64>, noise_intensity: f64) -> Self {
        MotionModel {
            kind: MotionKind::CoordinatedTurn { turn_rate_rad_s, axis },
            noise_intensity,
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.noise_intensity.is_finite() && self.noise_intensity >= 0.0) {
            return Err(SceneError::InvalidCatalog(format!(
                "noise intensity must be finite and >= 0, got {}",
                self.noise_intensity
            )));
        }
        if let MotionKind::CoordinatedTurn { turn_rate_rad_s, axis } = self.kind {
            if !turn_rate_rad_s.is_finite() || !axis.iter().all(|c| c.is_finite()) || axis.norm() == 0.0 {
                return Err(SceneError::InvalidCatalog("coordinated turn needs finite rate and nonzero axis".into()));
            }
        }
        Ok(())
    }

    /// State transition over a signed interval `dt`. Negative `dt` runs the
    /// deterministic dynamics backwards.
    pub fn transition(&self, dt: f64) -> StateMatrix {
        let i3 = Matrix3::<f64>::identity();
        let mut f = StateMatrix::zeros();
        match self.kind {
            MotionKind::ConstantVelocity => {
                f.fixed_view_mut::<3, 3>(0, 0).copy_from(&i3);
                f.fixed_view_mut::<3, 3>(0, 3).copy_from(&(i3 * dt));
                f.fixed_view_mut::<3, 3>(3, 3).copy_from(&i3);
            }
            MotionKind::ConstantAcceleration => {
                f.fixed_view_mut::<3, 3>(0, 0).copy_from(&i3);
                f.fixed_view_mut::<3, 3>(0, 3).copy_from(&(i3 * dt));
                f.fixed_view_mut::<3, 3>(0, 6).copy_from(&(i3 * (0.5 * dt * dt)));
                f.fixed_view_mut::<3, 3>(3, 3).copy_from(&i3);
                f.fixed_view_mut::<3, 3>(3, 6).copy_from(&(i3 * dt));
                f.fixed_view_mut::<3, 3>(6, 6).copy_from(&i3);
            }
            MotionKind::CoordinatedTurn { turn_rate_rad_s: w, axis } => {
                let n = axis.normalize();
                let nn = n * n.transpose();
                let k = skew(&n);
                let (s, c) = (w * dt).sin_cos();
                let rot = nn + (i3 - nn) * c + k * s;
                let disp = if w.abs() < 1e-12 {
                    i3 * dt
                } else {
                    nn * dt + (i3 - nn) * (s / w) + k * ((1.0 - c) / w)
                };
                f.fixed_view_mut::<3, 3>(0, 0).copy_from(&i3);
                f.fixed_view_mut::<3, 3>(0, 3).copy_from(&disp);
                f.fixed_view_mut::<3, 3>(3, 3).copy_from(&rot);
                f.fixed_view_mut::<3, 3>(6, 3).copy_from(&(k * rot * w));
            }
        }
        f
    }

    /// Per-axis process-noise block for the interval `|dt|`, in the
    /// `(r, v)` or `(r, v, a)` coordinates of one Cartesian axis.
    fn axis_noise(&self, dt: f64) -> SMatrix<f64, 3, 3> {
        let q = self.noise_intensity;
        let t = dt.abs();
        let (t2, t3, t4, t5) = (t * t, t * t * t, t.powi(4), t.powi(5));
        match self.kind {
            MotionKind::ConstantAcceleration => SMatrix::<f64, 3, 3>::new(
                t5 / 20.0, t4 / 8.0, t3 / 6.0,
                t4 / 8.0, t3 / 3.0, t2 / 2.0,
                t3 / 6.0, t2 / 2.0, t,
            ) * q,
            _ => SMatrix::<f64, 3, 3>::new(
                t3 / 3.0, t2 / 2.0, 0.0,
                t2 / 2.0, t, 0.0,
                0.0, 0.0, 0.0,
            ) * q,
        }
    }

    /// Discrete process-noise covariance for the interval `|dt|`.
    pub fn process_noise(&self, dt: f64) -> StateMatrix {
        let block = self.axis_noise(dt);
        let mut q = StateMatrix::zeros();
        for axis in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    q[(3 * i + axis, 3 * j + axis)] = block[(i, j)];
                }
            }
        }
        if let MotionKind::CoordinatedTurn { turn_rate_rad_s: w, axis } = self.kind {
            // acceleration stays tied to velocity: a = w n x v
            let k = skew(&axis.normalize()) * w;
            let qvv = q.fixed_view::<3, 3>(3, 3).into_owned();
            let qrv = q.fixed_view::<3, 3>(0, 3).into_owned();
            q.fixed_view_mut::<3, 3>(6, 6).copy_from(&(k * qvv * k.transpose()));
            q.fixed_view_mut::<3, 3>(6, 3).copy_from(&(k * qvv));
            q.fixed_view_mut::<3, 3>(3, 6).copy_from(&(qvv * k.transpose()));
            q.fixed_view_mut::<3, 3>(6, 0).copy_from(&(k * qrv.transpose()));
            q.fixed_view_mut::<3, 3>(0, 6).copy_from(&(qrv * k.transpose()));
        }
        q
    }

    fn sample_noise(&self, dt: f64, rng: &mut ChaCha8Rng) -> StateVector {
        let mut w = StateVector::zeros();
        if self.noise_intensity == 0.0 {
            return w;
        }
        let block = self.axis_noise(dt);
        let dim = match self.kind {
            MotionKind::ConstantAcceleration => 3,
            _ => 2,
        };
        let sub = DMatrix::from_fn(dim, dim, |i, j| block[(i, j)]);
        let Some(chol) = sub.cholesky() else { return w };
        let l = chol.l();
        for axis in 0..3 {
            let z: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            for i in 0..dim {
                let v: f64 = (0..=i).map(|j| l[(i, j)] * z[j]).sum();
                w[3 * i + axis] = v;
            }
        }
        if let MotionKind::CoordinatedTurn { turn_rate_rad_s: rate, axis } = self.kind {
            let dv = w.fixed_rows::<3>(3).into_owned();
            let da = skew(&axis.normalize()) * dv * rate;
            w.fixed_rows_mut::<3>(6).copy_from(&da);
        }
        w
    }
}

/// Propagates one truth state by `dt` seconds, drawing process noise from `noise_seed`.
pub fn propagate(state: &KinematicState, model: &MotionModel, dt: f64, noise_seed: u64) -> Result<KinematicState, SceneError> {
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    propagate_with(state, model, dt, &mut rng)
}

fn propagate_with(
    state: &KinematicState,
    model: &MotionModel,
    dt: f64,
    rng: &mut ChaCha8Rng,
) -> Result<KinematicState, SceneError> {
    if !(dt > 0.0) {
        return Err(SceneError::NonPositiveStep(dt));
    }
    let x = model.transition(dt) * state.to_vector() + model.sample_noise(dt, rng);
    Ok(KinematicState::from_vector(state.time_s + dt, &x))
}

/// Kinematic envelope `b_T` of one object state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KinematicBounds {
    #[serde(default)]
    pub speed_min_mps: f64,
    #[serde(default = "pos_inf", with = "open_upper")]
    pub speed_max_mps: f64,
    #[serde(default)]
    pub accel_min_mps2: f64,
    #[serde(default = "pos_inf", with = "open_upper")]
    pub accel_max_mps2: f64,
    #[serde(default = "neg_inf", with = "open_lower")]
    pub altitude_min_m: f64,
    #[serde(default = "pos_inf", with = "open_upper")]
    pub altitude_max_m: f64,
}

fn pos_inf() -> f64 {
    f64::INFINITY
}

fn neg_inf() -> f64 {
    f64::NEG_INFINITY
}

// Open limits are written as `null` since JSON has no infinity.
macro_rules! open_limit {
    ($name:ident, $inf:expr) => {
        mod $name {
            use serde::{Deserialize, Deserializer, Serializer};

            pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
                if v.is_infinite() {
                    s.serialize_none()
                } else {
                    s.serialize_some(v)
                }
            }

            pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
                Ok(Option::<f64>::deserialize(d)?.unwrap_or($inf))
            }
        }
    };
}
open_limit!(open_upper, f64::INFINITY);
open_limit!(open_lower, f64::NEG_INFINITY);

impl KinematicBounds {
    pub fn unbounded() -> Self {
        KinematicBounds {
            speed_min_mps: 0.0,
            speed_max_mps: f64::INFINITY,
            accel_min_mps2: 0.0,
            accel_max_mps2: f64::INFINITY,
            altitude_min_m: f64::NEG_INFINITY,
            altitude_max_m: f64::INFINITY,
        }
    }

    fn validate(&self) -> Result<(), String> {
        let pairs = [
            ("speed", self.speed_min_mps, self.speed_max_mps),
            ("acceleration", self.accel_min_mps2, self.accel_max_mps2),
            ("altitude", self.altitude_min_m, self.altitude_max_m),
        ];
        for (name, lo, hi) in pairs {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(format!("{name} bounds out of order ({lo} > {hi})"));
            }
        }
        if self.speed_min_mps < 0.0 || self.accel_min_mps2 < 0.0 {
            return Err("magnitude bounds must be non-negative".into());
        }
        Ok(())
    }
}

/// Tactic profile `c_T`: how the object leaves a state and how it behaves on entry.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TacticProfile {
    /// Transition rates (1/s) to other states of the same class, keyed by state id.
    #[serde(default)]
    pub exit_rates: Vec<(u32, f64)>,
    /// Unit-free heading preference in the Earth-fixed frame, informational.
    #[serde(default)]
    pub preferred_heading: Option<Vector3<f64>>,
    /// Acceleration imposed when a schedule switches into this state.
    #[serde(default)]
    pub entry_acceleration_mps2: Option<Vector3<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectState {
    pub id: u32,
    #[serde(default)]
    pub name: String,
    pub motion: MotionModel,
    pub bounds: KinematicBounds,
    #[serde(default)]
    pub tactic: TacticProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectClass {
    pub id: u32,
    #[serde(default)]
    pub name: String,
    pub states: Vec<ObjectState>,
}

impl ObjectClass {
    pub fn state(&self, state_id: u32) -> Option<&ObjectState> {
        self.states.iter().find(|s| s.id == state_id)
    }

    pub fn state_index(&self, state_id: u32) -> Option<usize> {
        self.states.iter().position(|s| s.id == state_id)
    }

    /// Continuous-time generator over this class's states (rows sum to zero).
    pub fn rate_matrix(&self) -> DMatrix<f64> {
        let n = self.states.len();
        let mut q = DMatrix::zeros(n, n);
        for (i, s) in self.states.iter().enumerate() {
            for &(to, rate) in &s.tactic.exit_rates {
                if let Some(j) = self.state_index(to) {
                    if j != i {
                        q[(i, j)] += rate;
                        q[(i, i)] -= rate;
                    }
                }
            }
        }
        q
    }

    /// Row-stochastic state-transition matrix over `dt` seconds.
    pub fn transition_probabilities(&self, dt: f64) -> DMatrix<f64> {
        let q = self.rate_matrix();
        if q.iter().all(|v| *v == 0.0) {
            return DMatrix::identity(q.nrows(), q.ncols());
        }
        let mut p = (q * dt.abs()).exp();
        // rows are distributions; rounding in the exponential is folded back in
        for mut row in p.row_iter_mut() {
            row.iter_mut().for_each(|v| *v = v.max(0.0));
            let s: f64 = row.iter().sum();
            row /= s;
        }
        p
    }
}

/// Object classes `g_T` with their states `s_T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectClassCatalog {
    pub classes: Vec<ObjectClass>,
}

impl ObjectClassCatalog {
    pub fn new(classes: Vec<ObjectClass>) -> Result<Self, SceneError> {
        let c = ObjectClassCatalog { classes };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.classes.is_empty() {
            return Err(SceneError::InvalidCatalog("catalog needs at least one class".into()));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if self.classes[..i].iter().any(|o| o.id == c.id) {
                return Err(SceneError::InvalidCatalog(format!("duplicate class id {}", c.id)));
            }
            if c.states.is_empty() {
                return Err(SceneError::InvalidCatalog(format!("class {} has no states", c.id)));
            }
            for (k, s) in c.states.iter().enumerate() {
                if c.states[..k].iter().any(|o| o.id == s.id) {
                    return Err(SceneError::InvalidCatalog(format!("class {} duplicates state {}", c.id, s.id)));
                }
                s.motion.validate()?;
                s.bounds
                    .validate()
                    .map_err(|e| SceneError::InvalidCatalog(format!("class {} state {}: {e}", c.id, s.id)))?;
                for &(to, rate) in &s.tactic.exit_rates {
                    if c.state(to).is_none() {
                        return Err(SceneError::UnknownState { class_id: c.id, state_id: to });
                    }
                    if !(rate.is_finite() && rate >= 0.0) {
                        return Err(SceneError::InvalidCatalog(format!("negative or non-finite rate {rate}")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn class(&self, class_id: u32) -> Result<&ObjectClass, SceneError> {
        self.classes.iter().find(|c| c.id == class_id).ok_or(SceneError::UnknownClass(class_id))
    }

    pub fn state(&self, class_id: u32, state_id: u32) -> Result<&ObjectState, SceneError> {
        self.class(class_id)?
            .state(state_id)
            .ok_or(SceneError::UnknownState { class_id, state_id })
    }

    pub fn hypothesis_count(&self) -> usize {
        self.classes.iter().map(|c| c.states.len()).sum()
    }
}

/// Sensor-station parameters `b_V` for one operating mode `s_V`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CarrierMode {
    pub id: u32,
    pub bearing_std_rad: f64,
    pub frame_rate_hz: f64,
    pub detection_range_min_m: f64,
    pub detection_range_max_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CarrierModeCatalog {
    pub modes: Vec<CarrierMode>,
}

impl CarrierModeCatalog {
    pub fn mode(&self, id: u32) -> Result<&CarrierMode, SceneError> {
        self.modes.iter().find(|m| m.id == id).ok_or(SceneError::UnknownCarrierMode(id))
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.modes.is_empty() {
            return Err(SceneError::InvalidCatalog("no carrier modes".into()));
        }
        for m in &self.modes {
            let ok = m.bearing_std_rad.is_finite()
                && m.bearing_std_rad >= 0.0
                && m.frame_rate_hz > 0.0
                && m.detection_range_min_m > 0.0
                && m.detection_range_min_m <= m.detection_range_max_m;
            if !ok {
                return Err(SceneError::InvalidCatalog(format!("carrier mode {} has invalid parameters", m.id)));
            }
        }
        Ok(())
    }
}

/// Instantaneous carrier state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CarrierState {
    pub time_s: f64,
    pub position_m: Vector3<f64>,
    /// Body to Earth-fixed rotation.
    pub attitude: UnitQuaternion<f64>,
    pub mode: u32,
}

/// Straight-line carrier motion with fixed attitude and mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CarrierTrack {
    pub id: u32,
    pub initial_position_m: Vector3<f64>,
    #[serde(default = "Vector3::zeros")]
    pub velocity_mps: Vector3<f64>,
    #[serde(default = "UnitQuaternion::identity")]
    pub attitude: UnitQuaternion<f64>,
    #[serde(default = "default_mode")]
    pub mode: u32,
    #[serde(default)]
    pub start_time_s: f64,
}

fn default_mode() -> u32 {
    1
}

impl CarrierTrack {
    pub fn state_at(&self, t: f64) -> CarrierState {
        CarrierState {
            time_s: t,
            position_m: self.initial_position_m + self.velocity_mps * (t - self.start_time_s),
            attitude: self.attitude,
            mode: self.mode,
        }
    }
}

/// Time-ordered truth samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    pub samples: Vec<KinematicState>,
}

impl Trajectory {
    pub fn new(samples: Vec<KinematicState>) -> Result<Self, SceneError> {
        let t = Trajectory { samples };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        for (i, w) in self.samples.windows(2).enumerate() {
            if !(w[1].time_s > w[0].time_s) {
                return Err(SceneError::NonMonotoneTrajectory(i + 1));
            }
        }
        Ok(())
    }

    pub fn start_time(&self) -> Option<f64> {
        self.samples.first().map(|s| s.time_s)
    }

    pub fn end_time(&self) -> Option<f64> {
        self.samples.last().map(|s| s.time_s)
    }

    /// Truth at an arbitrary time: the nearest earlier sample (or the first one)
    /// extrapolated with its own kinematics.
    pub fn state_at(&self, t: f64) -> Option<KinematicState> {
        let first = self.samples.first()?;
        if t <= first.time_s {
            return Some(first.extrapolate(t));
        }
        let idx = self.samples.partition_point(|s| s.time_s <= t);
        let base = &self.samples[idx - 1];
        if base.time_s == t {
            return Some(*base);
        }
        Some(base.extrapolate(t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledState {
    pub state_id: u32,
    pub start_time_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ClipKind {
    SpeedHigh,
    SpeedLow,
    AccelerationHigh,
    AccelerationLow,
    AltitudeHigh,
    AltitudeLow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipEvent {
    pub time_s: f64,
    pub kind: ClipKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatedTrajectory {
    pub class_id: u32,
    pub trajectory: Trajectory,
    /// Active state id per sample.
    pub states: Vec<u32>,
    pub clip_events: Vec<ClipEvent>,
}

/// Everything [`simulate_trajectory`] needs besides the catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRequest {
    pub initial: KinematicState,
    pub class_id: u32,
    pub schedule: Vec<ScheduledState>,
    pub step_s: f64,
    pub end_time_s: f64,
    pub seed: u64,
}

fn clip_magnitude(v: &mut Vector3<f64>, lo: f64, hi: f64) -> Option<bool> {
    let n = v.norm();
    if n > hi {
        *v *= hi / n;
        Some(true)
    } else if n < lo && n > 0.0 {
        *v *= lo / n;
        Some(false)
    } else {
        None
    }
}

fn enforce_bounds(
    s: &mut KinematicState,
    b: &KinematicBounds,
    ellipsoid: &EllipsoidModel,
    events: &mut Vec<ClipEvent>,
) {
    let mut log_event = |kind: ClipKind| {
        log::debug!("clipped truth sample at t={} ({kind:?})", s.time_s);
        events.push(ClipEvent { time_s: s.time_s, kind });
    };
    match clip_magnitude(&mut s.velocity_mps, b.speed_min_mps, b.speed_max_mps) {
        Some(true) => log_event(ClipKind::SpeedHigh),
        Some(false) => log_event(ClipKind::SpeedLow),
        None => {}
    }
    match clip_magnitude(&mut s.acceleration_mps2, b.accel_min_mps2, b.accel_max_mps2) {
        Some(true) => log_event(ClipKind::AccelerationHigh),
        Some(false) => log_event(ClipKind::AccelerationLow),
        None => {}
    }
    if b.altitude_min_m.is_finite() || b.altitude_max_m.is_finite() {
        if let Ok(g) = ecef_to_geodetic(&s.position_m, ellipsoid) {
            let h = g.altitude_m.clamp(b.altitude_min_m, b.altitude_max_m);
            if h != g.altitude_m {
                log_event(if h > g.altitude_m { ClipKind::AltitudeLow } else { ClipKind::AltitudeHigh });
                let clipped = GeodeticCoord { altitude_m: h, ..g };
                s.position_m = geodetic_to_ecef(&clipped, ellipsoid);
            }
        }
    }
}

fn enter_state(s: &mut KinematicState, state: &ObjectState) {
    match state.motion.kind {
        MotionKind::ConstantVelocity => s.acceleration_mps2 = Vector3::zeros(),
        MotionKind::CoordinatedTurn { turn_rate_rad_s, axis } => {
            s.acceleration_mps2 = axis.normalize().cross(&s.velocity_mps) * turn_rate_rad_s;
        }
        MotionKind::ConstantAcceleration => {}
    }
    if let Some(a) = state.tactic.entry_acceleration_mps2 {
        s.acceleration_mps2 = a;
    }
}

/// Piecewise propagation of a truth trajectory through a schedule of object
/// states, sampled every `step_s` from the initial time through `end_time_s`.
pub fn simulate_trajectory(
    request: &TrajectoryRequest,
    catalog: &ObjectClassCatalog,
    ellipsoid: &EllipsoidModel,
) -> Result<SimulatedTrajectory, SceneError> {
    if !(request.step_s > 0.0) {
        return Err(SceneError::NonPositiveStep(request.step_s));
    }
    let class = catalog.class(request.class_id)?;
    let schedule = &request.schedule;
    if schedule.is_empty() {
        return Err(SceneError::InvalidSchedule("schedule is empty".into()));
    }
    if schedule.windows(2).any(|w| !(w[1].start_time_s > w[0].start_time_s)) {
        return Err(SceneError::InvalidSchedule("switch times must increase".into()));
    }
    let states: Vec<&ObjectState> = schedule
        .iter()
        .map(|e| {
            class.state(e.state_id).ok_or(SceneError::UnknownState {
                class_id: class.id,
                state_id: e.state_id,
            })
        })
        .collect::<Result<_, _>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(request.seed);
    let mut events = Vec::new();
    let mut active = 0usize;
    let mut current = request.initial;
    enter_state(&mut current, states[0]);
    enforce_bounds(&mut current, &states[0].bounds, ellipsoid, &mut events);

    let t0 = request.initial.time_s;
    let n_steps = ((request.end_time_s - t0) / request.step_s + 1e-9).floor().max(0.0) as usize;
    let mut samples = Vec::with_capacity(n_steps + 1);
    let mut active_ids = Vec::with_capacity(n_steps + 1);
    samples.push(current);
    active_ids.push(states[0].id);

    for k in 1..=n_steps {
        let target_time = t0 + k as f64 * request.step_s;
        // split the step at every switch falling inside it
        while active + 1 < schedule.len() && schedule[active + 1].start_time_s <= target_time {
            let switch_t = schedule[active + 1].start_time_s;
            if switch_t > current.time_s {
                current = propagate_with(&current, &states[active].motion, switch_t - current.time_s, &mut rng)?;
                current.time_s = switch_t;
            }
            active += 1;
            enter_state(&mut current, states[active]);
        }
        let dt = target_time - current.time_s;
        if dt > 0.0 {
            current = propagate_with(&current, &states[active].motion, dt, &mut rng)?;
        }
        current.time_s = target_time;
        enforce_bounds(&mut current, &states[active].bounds, ellipsoid, &mut events);
        samples.push(current);
        active_ids.push(states[active].id);
    }

    Ok(SimulatedTrajectory {
        class_id: class.id,
        trajectory: Trajectory::new(samples)?,
        states: active_ids,
        clip_events: events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn at_rest(p: Vector3<f64>, v: Vector3<f64>, a: Vector3<f64>) -> KinematicState {
        KinematicState::new(0.0, p, v, a)
    }

    #[test]
    fn cv_exact_step() {
        let s = at_rest(Vector3::zeros(), Vector3::new(100.0, 0.0, 0.0), Vector3::zeros());
        let out = propagate(&s, &MotionModel::constant_velocity(0.0), 1.0, 7).unwrap();
        assert_eq!(out.position_m, Vector3::new(100.0, 0.0, 0.0));
        assert_eq!(out.velocity_mps, Vector3::new(100.0, 0.0, 0.0));
        assert_eq!(out.time_s, 1.0);
    }

    #[test]
    fn ca_exact_fall() {
        let s = at_rest(Vector3::zeros(), Vector3::zeros(), Vector3::new(0.0, 0.0, -9.8));
        let out = propagate(&s, &MotionModel::constant_acceleration(0.0), 2.0, 7).unwrap();
        assert_abs_diff_eq!(out.position_m, Vector3::new(0.0, 0.0, -19.6), epsilon = 1e-12);
        assert_abs_diff_eq!(out.velocity_mps, Vector3::new(0.0, 0.0, -19.6), epsilon = 1e-12);
    }

    #[test]
    fn propagate_rejects_nonpositive_step() {
        let s = at_rest(Vector3::zeros(), Vector3::zeros(), Vector3::zeros());
        assert!(propagate(&s, &MotionModel::constant_velocity(0.0), 0.0, 1).is_err());
    }

    /// RK4 on r' = v, v' = w n x v at a step 100x finer than the one checked.
    fn rk4_turn(r: Vector3<f64>, v: Vector3<f64>, w: f64, n: Vector3<f64>, dt: f64, steps: usize) -> (Vector3<f64>, Vector3<f64>) {
        let h = dt / steps as f64;
        let f = |v: &Vector3<f64>| n.cross(v) * w;
        let (mut r, mut v) = (r, v);
        for _ in 0..steps {
            let k1v = f(&v);
            let k1r = v;
            let k2v = f(&(v + k1v * (h / 2.0)));
            let k2r = v + k1v * (h / 2.0);
            let k3v = f(&(v + k2v * (h / 2.0)));
            let k3r = v + k2v * (h / 2.0);
            let k4v = f(&(v + k3v * h));
            let k4r = v + k3v * h;
            r += (k1r + k2r * 2.0 + k3r * 2.0 + k4r) * (h / 6.0);
            v += (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (h / 6.0);
        }
        (r, v)
    }

    #[test]
    fn coordinated_turn_matches_fine_integration() {
        let n = Vector3::new(0.2, -0.3, 1.0).normalize();
        let w = 0.15;
        let v0 = Vector3::new(180.0, 40.0, 10.0);
        let r0 = Vector3::new(1000.0, -200.0, 50.0);
        let model = MotionModel::coordinated_turn(w, n, 0.0);
        let mut s = at_rest(r0, v0, Vector3::zeros());
        s.acceleration_mps2 = n.cross(&v0) * w;
        let dt = 3.0;
        let out = propagate(&s, &model, dt, 0).unwrap();
        let (r_ref, v_ref) = rk4_turn(r0, v0, w, n, dt, 100);
        assert!((out.position_m - r_ref).norm() < 1e-6);
        assert!((out.velocity_mps - v_ref).norm() < 1e-8);
        // heading rotated by w*dt about n
        let perp = |v: Vector3<f64>| v - n * n.dot(&v);
        let angle = perp(v0).angle(&perp(out.velocity_mps));
        assert_abs_diff_eq!(angle, w * dt, epsilon = 1e-12);
        assert_abs_diff_eq!(out.acceleration_mps2, n.cross(&out.velocity_mps) * w, epsilon = 1e-9);
    }

    #[test]
    fn backward_transition_inverts_forward() {
        for model in [
            MotionModel::constant_acceleration(0.0),
            MotionModel::coordinated_turn(0.1, Vector3::z(), 0.0),
        ] {
            let x = KinematicState::new(0.0, Vector3::new(1.0, 2.0, 3.0), Vector3::new(4.0, 5.0, 6.0), Vector3::zeros());
            let mut x = x.to_vector();
            if let MotionKind::CoordinatedTurn { turn_rate_rad_s, axis } = model.kind {
                let a = axis.cross(&Vector3::new(4.0, 5.0, 6.0)) * turn_rate_rad_s;
                x.fixed_rows_mut::<3>(6).copy_from(&a);
            }
            let back = model.transition(-2.5) * (model.transition(2.5) * x);
            assert!((back - x).norm() < 1e-9);
        }
    }

    #[test]
    fn process_noise_is_psd_and_grows() {
        for model in [
            MotionModel::constant_velocity(3.0),
            MotionModel::constant_acceleration(0.5),
            MotionModel::coordinated_turn(0.05, Vector3::z(), 2.0),
        ] {
            let q1 = model.process_noise(1.0);
            let q2 = model.process_noise(2.0);
            assert!((q1 - q1.transpose()).norm() < 1e-12);
            let eig = q1.symmetric_eigen();
            assert!(eig.eigenvalues.min() > -1e-9);
            assert!(q2.trace() > q1.trace());
        }
    }

    #[test]
    fn sampled_noise_matches_covariance() {
        let model = MotionModel::constant_velocity(4.0);
        let dt = 0.5;
        let q = model.process_noise(dt);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 40_000;
        let mut acc = StateMatrix::zeros();
        for _ in 0..n {
            let w = model.sample_noise(dt, &mut rng);
            acc += w * w.transpose();
        }
        acc /= n as f64;
        for (i, j) in [(0, 0), (3, 3), (0, 3), (1, 4)] {
            assert!((acc[(i, j)] - q[(i, j)]).abs() < 0.05 * q[(i, i)].max(q[(j, j)]), "({i},{j})");
        }
    }

    pub(crate) fn two_state_catalog() -> ObjectClassCatalog {
        let bounds = KinematicBounds::unbounded();
        ObjectClassCatalog::new(vec![ObjectClass {
            id: 1,
            name: "aircraft".into(),
            states: vec![
                ObjectState {
                    id: 1,
                    name: "cruise".into(),
                    motion: MotionModel::constant_velocity(0.0),
                    bounds,
                    tactic: TacticProfile::default(),
                },
                ObjectState {
                    id: 2,
                    name: "dive".into(),
                    motion: MotionModel::constant_acceleration(0.0),
                    bounds,
                    tactic: TacticProfile {
                        entry_acceleration_mps2: Some(Vector3::new(0.0, 0.0, -20.0)),
                        ..Default::default()
                    },
                },
            ],
        }])
        .unwrap()
    }

    fn request(schedule: Vec<ScheduledState>, seed: u64) -> TrajectoryRequest {
        TrajectoryRequest {
            initial: KinematicState::new(0.0, Vector3::new(7.0e6, 0.0, 0.0), Vector3::new(0.0, 200.0, 0.0), Vector3::zeros()),
            class_id: 1,
            schedule,
            step_s: 0.5,
            end_time_s: 10.0,
            seed,
        }
    }

    #[test]
    fn single_cv_state_is_a_straight_line() {
        let cat = two_state_catalog();
        let req = request(vec![ScheduledState { state_id: 1, start_time_s: 0.0 }], 3);
        let sim = simulate_trajectory(&req, &cat, &EllipsoidModel::WGS84).unwrap();
        assert_eq!(sim.trajectory.samples.len(), 21);
        for s in &sim.trajectory.samples {
            assert_abs_diff_eq!(s.velocity_mps.norm(), 200.0, epsilon = 1e-12);
            assert_abs_diff_eq!(s.position_m.y, 200.0 * s.time_s, epsilon = 1e-9);
        }
    }

    #[test]
    fn switch_keeps_velocity_continuous() {
        let cat = two_state_catalog();
        let sched = vec![
            ScheduledState { state_id: 1, start_time_s: 0.0 },
            ScheduledState { state_id: 2, start_time_s: 5.0 },
        ];
        let sim = simulate_trajectory(&request(sched, 3), &cat, &EllipsoidModel::WGS84).unwrap();
        let s = &sim.trajectory.samples;
        let at5 = s.iter().position(|x| x.time_s == 5.0).unwrap();
        assert_eq!(s[at5 - 1].acceleration_mps2, Vector3::zeros());
        assert_eq!(s[at5].acceleration_mps2, Vector3::new(0.0, 0.0, -20.0));
        assert_eq!(s[at5].velocity_mps, s[at5 - 1].velocity_mps);
        // after the switch the samples follow the free-fall oracle from t=5
        let oracle = s[at5].extrapolate(10.0);
        assert_abs_diff_eq!(s.last().unwrap().position_m, oracle.position_m, epsilon = 1e-6);
        assert_eq!(sim.states[at5 - 1], 1);
        assert_eq!(sim.states[at5], 2);
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let mut cat = two_state_catalog();
        cat.classes[0].states[0].motion.noise_intensity = 5.0;
        let req = request(vec![ScheduledState { state_id: 1, start_time_s: 0.0 }], 99);
        let a = simulate_trajectory(&req, &cat, &EllipsoidModel::WGS84).unwrap();
        let b = simulate_trajectory(&req, &cat, &EllipsoidModel::WGS84).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let other = simulate_trajectory(&TrajectoryRequest { seed: 100, ..req }, &cat, &EllipsoidModel::WGS84).unwrap();
        assert_ne!(a.trajectory, other.trajectory);
    }

    #[test]
    fn bounds_are_clipped_and_logged() {
        let mut cat = two_state_catalog();
        cat.classes[0].states[0].motion.noise_intensity = 400.0;
        cat.classes[0].states[0].bounds.speed_max_mps = 205.0;
        cat.classes[0].states[0].bounds.speed_min_mps = 195.0;
        let req = request(vec![ScheduledState { state_id: 1, start_time_s: 0.0 }], 5);
        let sim = simulate_trajectory(&req, &cat, &EllipsoidModel::WGS84).unwrap();
        assert!(!sim.clip_events.is_empty());
        for s in &sim.trajectory.samples {
            let v = s.velocity_mps.norm();
            assert!(v <= 205.0 + 1e-9 && v >= 195.0 - 1e-9);
        }
    }

    #[test]
    fn unknown_state_in_schedule() {
        let cat = two_state_catalog();
        let req = request(vec![ScheduledState { state_id: 9, start_time_s: 0.0 }], 1);
        let err = simulate_trajectory(&req, &cat, &EllipsoidModel::WGS84).unwrap_err();
        assert_eq!(err, SceneError::UnknownState { class_id: 1, state_id: 9 });
    }

    #[test]
    fn markov_rows_are_distributions() {
        let mut cat = two_state_catalog();
        cat.classes[0].states[0].tactic.exit_rates = vec![(2, 0.1)];
        cat.classes[0].states[1].tactic.exit_rates = vec![(1, 0.3)];
        let p = cat.classes[0].transition_probabilities(2.0);
        for row in p.row_iter() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
        }
        // two-state chain closed form: p12 = a/(a+b) (1 - exp(-(a+b) t))
        let exact = 0.1 / 0.4 * (1.0 - (-0.4f64 * 2.0).exp());
        assert_abs_diff_eq!(p[(0, 1)], exact, epsilon = 1e-12);
    }
}
