//! Logical-kinematic hypothesis filter.
//!
//! A bank holds one sigma-point filter per (class, state) pair of the object
//! catalog. Each filter is a small Gaussian sum over a ladder of initial
//! ranges ("lanes"), which keeps the bearings-only posterior honest while the
//! range is still unobservable. Hypothesis log-weights carry the
//! classification layer; within a class, states mix lane by lane through the
//! catalog's transition rates in the interacting-multiple-model fashion. A fixed-interval smoother over the
//! stored per-hypothesis states produces estimates inside the observation
//! span, and deterministic extrapolation covers grid times outside it.

use crate::geodesy::Environment;
use crate::scene::{
    CarrierModeCatalog, KinematicBounds, KinematicState, MotionModel, ObjectClassCatalog, SceneError, StateMatrix,
    StateVector,
};
use crate::sensor::{tangent_basis, Measurement, ObservationSet};
use nalgebra::{DMatrix, Matrix2, Matrix3, SMatrix, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Log-weights never drop further than this below the bank maximum.
const LOG_WEIGHT_FLOOR: f64 = -700.0;
const PSD_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("insufficient observations: need at least {needed}, got {got}")]
    InsufficientObservations { needed: usize, got: usize },
    #[error("out-of-order update: measurement at {measurement_s} s, bank at {bank_s} s")]
    OutOfOrderUpdate { measurement_s: f64, bank_s: f64 },
    #[error("prediction interval must be positive, got {0}")]
    NonPositiveInterval(f64),
    #[error("estimation grid: {0}")]
    InvalidGrid(String),
    #[error("soft constraint confidence must lie strictly inside (0, 1), got {0}")]
    RigidConstraint(f64),
    #[error("prior for class {0} must give every state the same, non-zero number of components")]
    InvalidPrior(u32),
    #[error("degenerate geometry")]
    DegenerateGeometry,
    #[error(transparent)]
    Scene(#[from] SceneError),
}

/// Tuning of the filter bank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(default)]
pub struct FilterSettings {
    /// Number of range lanes seeded along the first line of sight.
    pub range_ladder_points: usize,
    pub ut_alpha: f64,
    pub ut_beta: f64,
    pub ut_kappa: f64,
    /// Floor on the bearing noise used by the filter, rad.
    pub min_bearing_std_rad: f64,
    /// Carrier self-position error assumed by the filter, m.
    pub carrier_position_std_m: f64,
    /// Bearing-noise inflation per unit optical depth along the line of sight; 0 disables it.
    pub extinction_noise_gain: f64,
    /// Speed used for the velocity prior when the catalog leaves it unbounded, m/s.
    pub default_speed_bound_mps: f64,
    /// Acceleration used for the prior when the catalog leaves it unbounded, m/s^2.
    pub default_accel_bound_mps2: f64,
}

impl Default for FilterSettings {
    fn default() -> Self {
        FilterSettings {
            range_ladder_points: 12,
            ut_alpha: 1.0,
            ut_beta: 2.0,
            ut_kappa: 0.0,
            min_bearing_std_rad: 1e-6,
            carrier_position_std_m: 0.0,
            extinction_noise_gain: 0.0,
            default_speed_bound_mps: 500.0,
            default_accel_bound_mps2: 50.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintPredicate {
    /// Height above terrain (or the bare ellipsoid) must be at least `min_m`.
    MinHeightAboveTerrain { min_m: f64 },
    MaxHeightAboveTerrain { max_m: f64 },
    MaxSpeed { max_mps: f64 },
    MinSpeed { min_mps: f64 },
}

/// A probabilistic inequality: violating it costs `ln(1 - confidence)` of log-weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftConstraint {
    #[serde(flatten)]
    pub predicate: ConstraintPredicate,
    pub confidence: f64,
}

impl SoftConstraint {
    pub fn new(predicate: ConstraintPredicate, confidence: f64) -> Result<Self, FilterError> {
        let c = SoftConstraint { predicate, confidence };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(FilterError::RigidConstraint(self.confidence));
        }
        Ok(())
    }

    pub fn penalty(&self) -> f64 {
        (1.0 - self.confidence).ln()
    }

    pub fn is_violated(&self, state: &KinematicState, env: &Environment) -> bool {
        match self.predicate {
            ConstraintPredicate::MinHeightAboveTerrain { min_m } => env
                .height_above_terrain(&state.position_m, state.time_s)
                .is_some_and(|h| h < min_m),
            ConstraintPredicate::MaxHeightAboveTerrain { max_m } => env
                .height_above_terrain(&state.position_m, state.time_s)
                .is_some_and(|h| h > max_m),
            ConstraintPredicate::MaxSpeed { max_mps } => state.velocity_mps.norm() > max_mps,
            ConstraintPredicate::MinSpeed { min_mps } => state.velocity_mps.norm() < min_mps,
        }
    }
}

/// One Gaussian member of a hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub mean: StateVector,
    pub covariance: StateMatrix,
    /// Absolute log-weight; the hypothesis weight is the sum over its components.
    pub log_weight: f64,
}

impl Component {
    fn kinematic_mean(&self, time_s: f64) -> KinematicState {
        KinematicState::from_vector(time_s, &self.mean)
    }
}

/// One (class, state)-conditioned filter. `mean`, `covariance` and
/// `log_weight` summarize `components` and are refreshed after every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hypothesis {
    pub class_id: u32,
    pub state_id: u32,
    pub motion: MotionModel,
    pub bounds: KinematicBounds,
    pub components: Vec<Component>,
    pub mean: StateVector,
    pub covariance: StateMatrix,
    pub log_weight: f64,
}

impl Hypothesis {
    pub fn new(class_id: u32, state_id: u32, motion: MotionModel, bounds: KinematicBounds, components: Vec<Component>) -> Self {
        let mut h = Hypothesis {
            class_id,
            state_id,
            motion,
            bounds,
            components,
            mean: StateVector::zeros(),
            covariance: StateMatrix::zeros(),
            log_weight: 0.0,
        };
        h.refresh();
        h
    }

    pub fn kinematic_mean(&self, time_s: f64) -> KinematicState {
        KinematicState::from_vector(time_s, &self.mean)
    }

    /// Sets the hypothesis weight, keeping the relative component weights.
    pub fn set_log_weight(&mut self, log_weight: f64) {
        let shift = log_weight - self.log_weight;
        for c in &mut self.components {
            c.log_weight += shift;
        }
        self.refresh();
    }

    /// Recomputes the summary from the components.
    pub fn refresh(&mut self) {
        self.log_weight = log_sum_exp(self.components.iter().map(|c| c.log_weight));
        let w: Vec<f64> = self.components.iter().map(|c| (c.log_weight - self.log_weight).exp()).collect();
        let states: Vec<(StateVector, StateMatrix)> = self.components.iter().map(|c| (c.mean, c.covariance)).collect();
        let (mean, covariance) = mixture(&w, &states);
        self.mean = mean;
        self.covariance = covariance;
    }

    fn predict(&mut self, dt: f64) -> StateMatrix {
        let f = self.motion.transition(dt);
        let q = self.motion.process_noise(dt);
        for c in &mut self.components {
            c.mean = f * c.mean;
            c.covariance = f * c.covariance * f.transpose() + q;
            symmetrize(&mut c.covariance);
        }
        self.refresh();
        f
    }
}

fn symmetrize(p: &mut StateMatrix) {
    *p = (*p + p.transpose()) * 0.5;
}

/// Clamps negative eigenvalues to zero. Returns true when the most negative
/// eigenvalue exceeded the tolerance, which is counted as a clamp event.
fn clamp_psd(p: &mut StateMatrix) -> bool {
    symmetrize(p);
    let eig = p.symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min >= 0.0 {
        return false;
    }
    let scale = eig.eigenvalues.amax().max(1.0);
    let mut vals = eig.eigenvalues;
    vals.iter_mut().for_each(|v| *v = v.max(0.0));
    *p = eig.eigenvectors * StateMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    symmetrize(p);
    min < -PSD_TOLERANCE * scale
}

/// The states of one class, indices into the bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassGroup {
    pub class_id: u32,
    pub members: Vec<usize>,
    /// Continuous-time generator among `members` (rows sum to zero).
    pub rates: DMatrix<f64>,
}

impl ClassGroup {
    pub fn transition_probabilities(&self, dt: f64) -> DMatrix<f64> {
        let n = self.members.len();
        if self.rates.iter().all(|v| *v == 0.0) {
            return DMatrix::identity(n, n);
        }
        let mut p = (&self.rates * dt.abs()).exp();
        for mut row in p.row_iter_mut() {
            row.iter_mut().for_each(|v| *v = v.max(0.0));
            let s: f64 = row.iter().sum();
            row /= s;
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesisBank {
    pub time_s: f64,
    pub hypotheses: Vec<Hypothesis>,
    pub groups: Vec<ClassGroup>,
    /// Covariance eigenvalue clamps beyond tolerance since construction.
    pub clamp_events: usize,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl HypothesisBank {
    /// Builds a bank from explicit per-hypothesis priors, one per catalog
    /// (class, state) in catalog order, with uniform weights. Each prior is a
    /// list of equally weighted Gaussians; states of one class must use the
    /// same number of them.
    pub fn from_priors(
        catalog: &ObjectClassCatalog,
        time_s: f64,
        mut prior: impl FnMut(u32, u32, &MotionModel, &KinematicBounds) -> Vec<(StateVector, StateMatrix)>,
    ) -> Result<Self, FilterError> {
        catalog.validate()?;
        let total = catalog.hypothesis_count();
        let lw = -(total as f64).ln();
        let mut hypotheses = Vec::with_capacity(total);
        let mut groups = Vec::new();
        for class in &catalog.classes {
            let mut members = Vec::new();
            let mut lanes = None;
            for state in &class.states {
                let parts = prior(class.id, state.id, &state.motion, &state.bounds);
                if parts.is_empty() || lanes.is_some_and(|n| n != parts.len()) {
                    return Err(FilterError::InvalidPrior(class.id));
                }
                lanes = Some(parts.len());
                let clw = lw - (parts.len() as f64).ln();
                let components = parts
                    .into_iter()
                    .map(|(mean, covariance)| Component { mean, covariance, log_weight: clw })
                    .collect();
                members.push(hypotheses.len());
                hypotheses.push(Hypothesis::new(class.id, state.id, state.motion, state.bounds, components));
            }
            groups.push(ClassGroup { class_id: class.id, members, rates: class.rate_matrix() });
        }
        Ok(HypothesisBank { time_s, hypotheses, groups, clamp_events: 0 })
    }

    pub fn weights(&self) -> Vec<f64> {
        self.hypotheses.iter().map(|h| h.log_weight.exp()).collect()
    }

    /// Posterior probability per class id, catalog order.
    pub fn class_posterior(&self) -> Vec<(u32, f64)> {
        self.groups
            .iter()
            .map(|g| (g.class_id, g.members.iter().map(|&i| self.hypotheses[i].log_weight.exp()).sum()))
            .collect()
    }

    pub fn normalize(&mut self) {
        let all = || self.hypotheses.iter().flat_map(|h| h.components.iter().map(|c| c.log_weight));
        // shift by the maximum first so large log-weights keep their precision
        let max = all().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return;
        }
        let lse = all().map(|v| (v - max).exp()).sum::<f64>().ln();
        for h in &mut self.hypotheses {
            for c in &mut h.components {
                c.log_weight = ((c.log_weight - max) - lse).max(LOG_WEIGHT_FLOOR);
            }
            h.refresh();
        }
    }

    /// Interacting-multiple-model mixing within each class, lane by lane,
    /// using one row-stochastic matrix per group.
    pub fn mix_states(&mut self, transitions: &[DMatrix<f64>]) {
        for (group, pi) in self.groups.iter().zip(transitions) {
            let n = group.members.len();
            if n < 2 {
                continue;
            }
            let lanes = self.hypotheses[group.members[0]].components.len();
            for lane in 0..lanes {
                let max_lw = group
                    .members
                    .iter()
                    .map(|&i| self.hypotheses[i].components[lane].log_weight)
                    .fold(f64::NEG_INFINITY, f64::max);
                let old: Vec<Component> = group.members.iter().map(|&i| self.hypotheses[i].components[lane].clone()).collect();
                let w: Vec<f64> = old.iter().map(|c| (c.log_weight - max_lw).exp()).collect();
                for (to, &idx) in group.members.iter().enumerate() {
                    let c: f64 = (0..n).map(|from| pi[(from, to)] * w[from]).sum();
                    let comp = &mut self.hypotheses[idx].components[lane];
                    if !(c > 0.0) {
                        comp.log_weight = max_lw + LOG_WEIGHT_FLOOR;
                        continue;
                    }
                    let mu: Vec<f64> = (0..n).map(|from| pi[(from, to)] * w[from] / c).collect();
                    let mut mean = StateVector::zeros();
                    for from in 0..n {
                        mean += old[from].mean * mu[from];
                    }
                    let mut cov = StateMatrix::zeros();
                    for from in 0..n {
                        let d = old[from].mean - mean;
                        cov += (old[from].covariance + d * d.transpose()) * mu[from];
                    }
                    comp.mean = mean;
                    comp.covariance = cov;
                    comp.log_weight = max_lw + c.ln();
                }
            }
            for &i in &group.members {
                self.hypotheses[i].refresh();
            }
        }
    }

    /// Time update: state mixing from the catalog rates, then per-hypothesis prediction.
    pub fn predict(&mut self, dt: f64) -> Result<Vec<StateMatrix>, FilterError> {
        if !(dt > 0.0) {
            return Err(FilterError::NonPositiveInterval(dt));
        }
        let transitions: Vec<DMatrix<f64>> = self.groups.iter().map(|g| g.transition_probabilities(dt)).collect();
        self.mix_states(&transitions);
        let fs = self.hypotheses.iter_mut().map(|h| h.predict(dt)).collect();
        self.time_s += dt;
        Ok(fs)
    }

    /// Measurement update of every hypothesis, soft constraints, then renormalization.
    pub fn update(&mut self, m: &Measurement, ctx: &UpdateContext<'_>) -> Result<(), FilterError> {
        if m.time_s < self.time_s {
            return Err(FilterError::OutOfOrderUpdate { measurement_s: m.time_s, bank_s: self.time_s });
        }
        if m.time_s > self.time_s {
            self.predict(m.time_s - self.time_s)?;
        }
        let bearing_std = ctx.bearing_std(m)?;
        let ut = UnscentedWeights::new(3, ctx.settings);
        let mut clamps = 0;
        let time_s = self.time_s;
        for h in &mut self.hypotheses {
            for c in &mut h.components {
                c.log_weight += bearing_update(c, m, bearing_std, ctx.settings, &ut);
                if clamp_psd(&mut c.covariance) {
                    clamps += 1;
                }
                let state = c.kinematic_mean(time_s);
                c.log_weight = penalized(c.log_weight, &state, ctx.constraints, ctx.environment);
            }
            h.refresh();
        }
        self.clamp_events += clamps;
        self.normalize();
        Ok(())
    }
}

/// Everything a measurement update needs besides the bank.
#[derive(Debug, Clone, Copy)]
pub struct UpdateContext<'a> {
    pub carrier_modes: &'a CarrierModeCatalog,
    pub environment: &'a Environment,
    pub constraints: &'a [SoftConstraint],
    pub settings: &'a FilterSettings,
}

impl UpdateContext<'_> {
    fn bearing_std(&self, m: &Measurement) -> Result<f64, FilterError> {
        let mode = self.carrier_modes.mode(m.carrier_mode)?;
        let mut std = mode.bearing_std_rad.max(self.settings.min_bearing_std_rad);
        if self.settings.extinction_noise_gain > 0.0 {
            std *= 1.0 + self.settings.extinction_noise_gain * m.conditions.path_optical_depth;
        }
        Ok(std)
    }
}

struct UnscentedWeights {
    gamma: f64,
    mean: Vec<f64>,
    cov: Vec<f64>,
}

impl UnscentedWeights {
    fn new(n: usize, s: &FilterSettings) -> Self {
        let nf = n as f64;
        let lambda = s.ut_alpha * s.ut_alpha * (nf + s.ut_kappa) - nf;
        let mut mean = vec![1.0 / (2.0 * (nf + lambda)); 2 * n + 1];
        let mut cov = mean.clone();
        mean[0] = lambda / (nf + lambda);
        cov[0] = mean[0] + (1.0 - s.ut_alpha * s.ut_alpha + s.ut_beta);
        UnscentedWeights { gamma: (nf + lambda).sqrt(), mean, cov }
    }
}

fn cholesky3(p: &Matrix3<f64>) -> Matrix3<f64> {
    let mut jitter = 0.0;
    let scale = p.trace().abs().max(1e-12) / 3.0;
    for _ in 0..12 {
        if let Some(c) = (p + Matrix3::identity() * jitter).cholesky() {
            return c.l();
        }
        jitter = if jitter == 0.0 { scale * 1e-14 } else { jitter * 100.0 };
    }
    Matrix3::from_diagonal(&p.diagonal().map(|v| v.max(0.0).sqrt()))
}

/// Gnomonic coordinates of `dir` on the tangent plane of `centre`.
fn tangent_coords(dir: &Vector3<f64>, centre: &Vector3<f64>, e1: &Vector3<f64>, e2: &Vector3<f64>) -> Vector2<f64> {
    let c = centre.dot(dir).max(1e-6);
    Vector2::new(e1.dot(dir) / c, e2.dot(dir) / c)
}

/// Largest share of the remaining update applied in one tempered step is
/// chosen so the predicted bearing spread is at most this multiple of the
/// step's effective noise variance.
const TEMPER_SPREAD_RATIO: f64 = 1.0;
const MAX_TEMPER_STEPS: usize = 100;

struct SigmaPrediction {
    innovation: Vector2<f64>,
    /// Predicted measurement covariance without noise.
    p_zz: Matrix2<f64>,
    p_xz: SMatrix<f64, 9, 2>,
    range_m: f64,
}

fn sigma_predict(h: &Component, m: &Measurement, ut: &UnscentedWeights) -> SigmaPrediction {
    let r_mean: Vector3<f64> = h.mean.fixed_rows::<3>(0).into_owned();
    let p_rr: Matrix3<f64> = h.covariance.fixed_view::<3, 3>(0, 0).into_owned();
    let p_xr: SMatrix<f64, 9, 3> = h.covariance.fixed_view::<9, 3>(0, 0).into_owned();
    let l = cholesky3(&p_rr);
    let carrier = m.carrier_position_m;

    let mut sigma = Vec::with_capacity(7);
    sigma.push(r_mean);
    for i in 0..3 {
        sigma.push(r_mean + l.column(i) * ut.gamma);
    }
    for i in 0..3 {
        sigma.push(r_mean - l.column(i) * ut.gamma);
    }
    let dirs: Vec<Vector3<f64>> = sigma
        .iter()
        .map(|p| {
            let d = p - carrier;
            let n = d.norm();
            if n > 0.0 {
                d / n
            } else {
                m.los
            }
        })
        .collect();
    let mut centre = Vector3::zeros();
    for (d, w) in dirs.iter().zip(&ut.mean) {
        centre += d * *w;
    }
    let centre = if centre.norm() > 1e-12 { centre.normalize() } else { dirs[0] };
    let (e1, e2) = tangent_basis(&centre);
    let z: Vec<Vector2<f64>> = dirs.iter().map(|d| tangent_coords(d, &centre, &e1, &e2)).collect();
    let mut z_mean = Vector2::zeros();
    for (zi, w) in z.iter().zip(&ut.mean) {
        z_mean += zi * *w;
    }

    let mut p_zz = Matrix2::zeros();
    let mut p_rz = SMatrix::<f64, 3, 2>::zeros();
    for i in 0..sigma.len() {
        let dz = z[i] - z_mean;
        p_zz += dz * dz.transpose() * ut.cov[i];
        p_rz += (sigma[i] - r_mean) * dz.transpose() * ut.cov[i];
    }
    // full-state cross covariance through the linear regression of the state on position
    let gain_r = match p_rr.cholesky() {
        Some(c) => c.solve(&p_rz),
        None => p_rr.pseudo_inverse(1e-12).map(|pi| pi * p_rz).unwrap_or_else(|_| SMatrix::zeros()),
    };
    SigmaPrediction {
        innovation: tangent_coords(&m.los, &centre, &e1, &e2) - z_mean,
        p_zz,
        p_xz: p_xr * gain_r,
        range_m: (r_mean - carrier).norm().max(1.0),
    }
}

fn gaussian_log_likelihood(innovation: &Vector2<f64>, s: &Matrix2<f64>) -> Option<f64> {
    let s_inv = s.try_inverse()?;
    let maha = (innovation.transpose() * s_inv * innovation)[(0, 0)];
    Some(-0.5 * maha - 0.5 * ((2.0 * PI).powi(2) * s.determinant()).ln())
}

/// Unscented bearing update of one component. Returns the measurement
/// log-likelihood under the full-strength prediction. When the predicted
/// bearing spread dwarfs the noise, the state update is applied as a series
/// of tempered steps whose noise fractions sum to one.
fn bearing_update(h: &mut Component, m: &Measurement, bearing_std: f64, s: &FilterSettings, ut: &UnscentedWeights) -> f64 {
    let mut remaining = 1.0f64;
    let mut loglik = 0.0;
    for step in 0..MAX_TEMPER_STEPS {
        let pred = sigma_predict(h, m, ut);
        let var = bearing_std * bearing_std + (s.carrier_position_std_m / pred.range_m).powi(2);
        if step == 0 {
            match gaussian_log_likelihood(&pred.innovation, &(pred.p_zz + Matrix2::identity() * var)) {
                Some(l) => loglik = l,
                None => return 0.0,
            }
        }
        let spread = pred.p_zz.symmetric_eigen().eigenvalues.max().max(0.0);
        let fraction = if step + 1 == MAX_TEMPER_STEPS || spread * remaining <= TEMPER_SPREAD_RATIO * var {
            remaining
        } else {
            TEMPER_SPREAD_RATIO * var / spread
        };
        let s_zz = pred.p_zz + Matrix2::identity() * (var / fraction);
        let Some(s_inv) = s_zz.try_inverse() else { break };
        let k = pred.p_xz * s_inv;
        h.mean += k * pred.innovation;
        h.covariance -= k * s_zz * k.transpose();
        symmetrize(&mut h.covariance);
        remaining -= fraction;
        if remaining <= 1e-12 {
            break;
        }
    }
    loglik
}

fn penalized(log_weight: f64, state: &KinematicState, constraints: &[SoftConstraint], env: &Environment) -> f64 {
    constraints
        .iter()
        .filter(|c| c.is_violated(state, env))
        .fold(log_weight, |lw, c| lw + c.penalty())
}

/// Log-weight of `h` after charging every violated constraint, evaluated at
/// the hypothesis mean. Inside the bank the same rule runs per component.
pub fn apply_soft_constraints(h: &Hypothesis, time_s: f64, constraints: &[SoftConstraint], env: &Environment) -> f64 {
    penalized(h.log_weight, &h.kinematic_mean(time_s), constraints, env)
}

/// Range-parameterized initialization from the first measurements.
pub fn init_bank(
    catalog: &ObjectClassCatalog,
    obs: &ObservationSet,
    carrier_modes: &CarrierModeCatalog,
    settings: &FilterSettings,
) -> Result<HypothesisBank, FilterError> {
    let ms = obs.measurements();
    if ms.len() < 2 {
        return Err(FilterError::InsufficientObservations { needed: 2, got: ms.len() });
    }
    let first = &ms[0];
    let mode = carrier_modes.mode(first.carrier_mode)?;
    let ladder = range_ladder(mode.detection_range_min_m, mode.detection_range_max_m, settings.range_ladder_points);
    let bearing_std = mode.bearing_std_rad.max(settings.min_bearing_std_rad).max(1e-4);

    // line-of-sight rate from the next look by the same carrier
    let rate = ms.iter().skip(1).find(|m| m.carrier_id == first.carrier_id && m.time_s > first.time_s).map(|m| {
        let dt = m.time_s - first.time_s;
        ((m.carrier_position_m - first.carrier_position_m) / dt, (m.los - first.los) / dt)
    });

    HypothesisBank::from_priors(catalog, first.time_s, |_, _, motion, bounds| {
        let speed = if bounds.speed_max_mps.is_finite() { bounds.speed_max_mps } else { settings.default_speed_bound_mps };
        let accel = if bounds.accel_max_mps2.is_finite() { bounds.accel_max_mps2 } else { settings.default_accel_bound_mps2 };
        let accel_var = match motion.kind {
            crate::scene::MotionKind::ConstantAcceleration => (accel / 2.0).powi(2),
            _ => 0.0,
        };
        let components: Vec<(StateVector, StateMatrix)> = ladder
            .iter()
            .enumerate()
            .map(|(j, &range)| {
                let mut x = StateVector::zeros();
                let pos = first.carrier_position_m + first.los * range;
                x.fixed_rows_mut::<3>(0).copy_from(&pos);
                if let Some((carrier_vel, los_rate)) = rate {
                    let v = carrier_vel + los_rate * range;
                    let v = if v.norm() > speed { v * (speed / v.norm()) } else { v };
                    x.fixed_rows_mut::<3>(3).copy_from(&v);
                }
                let spacing = ladder_spacing(&ladder, j);
                let along = (spacing / 2.0).max(1.0);
                let cross = range * bearing_std * 3.0 + 1.0;
                let u = first.los;
                let p_pos = u * u.transpose() * (along * along - cross * cross) + Matrix3::identity() * (cross * cross);
                let mut p = StateMatrix::zeros();
                p.fixed_view_mut::<3, 3>(0, 0).copy_from(&p_pos);
                p.fixed_view_mut::<3, 3>(3, 3).copy_from(&(Matrix3::identity() * (speed / 2.0).powi(2)));
                p.fixed_view_mut::<3, 3>(6, 6).copy_from(&(Matrix3::identity() * accel_var));
                (x, p)
            })
            .collect();
        components
    })
}

/// Geometric ladder of `n` ranges spanning `[lo, hi]`.
pub fn range_ladder(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 || hi <= lo {
        return vec![(lo * hi).sqrt()];
    }
    let ratio = hi / lo;
    (0..n).map(|j| lo * ratio.powf(j as f64 / (n - 1) as f64)).collect()
}

fn ladder_spacing(ladder: &[f64], j: usize) -> f64 {
    if ladder.len() < 2 {
        return ladder[0];
    }
    let next = if j + 1 < ladder.len() { ladder[j + 1] - ladder[j] } else { ladder[j] - ladder[j - 1] };
    let prev = if j > 0 { ladder[j] - ladder[j - 1] } else { next };
    0.5 * (next + prev)
}

/// Equal-weight Gaussian mixture collapsed to its first two moments.
pub fn moment_match(components: &[(StateVector, StateMatrix)]) -> (StateVector, StateMatrix) {
    let w = 1.0 / components.len() as f64;
    let mut mean = StateVector::zeros();
    for (x, _) in components {
        mean += x * w;
    }
    let mut cov = StateMatrix::zeros();
    for (x, p) in components {
        let d = x - mean;
        cov += (p + d * d.transpose()) * w;
    }
    (mean, cov)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridRegime {
    Approximation,
    Extrapolation,
    Mixed,
}

/// Estimation times `t|N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationGrid {
    times: Vec<f64>,
}

impl EstimationGrid {
    pub fn new(times: Vec<f64>) -> Result<Self, FilterError> {
        if times.is_empty() {
            return Err(FilterError::InvalidGrid("grid is empty".into()));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(FilterError::InvalidGrid("non-finite grid time".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(FilterError::InvalidGrid("grid times must strictly increase".into()));
        }
        Ok(EstimationGrid { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn span(&self) -> (f64, f64) {
        (self.times[0], self.times[self.times.len() - 1])
    }

    /// Relation of the grid interval to the observation interval `span_k`.
    pub fn regime(&self, span_k: (f64, f64)) -> GridRegime {
        let (n0, n1) = self.span();
        let (k0, k1) = span_k;
        if n0 >= k0 && n1 <= k1 {
            GridRegime::Approximation
        } else if n1 < k0 || n0 > k1 {
            GridRegime::Extrapolation
        } else {
            GridRegime::Mixed
        }
    }
}

/// Per-hypothesis snapshot used to extrapolate outside the observation span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesisSnapshot {
    pub class_id: u32,
    pub state_id: u32,
    pub motion: MotionModel,
    pub time_s: f64,
    pub mean: StateVector,
    pub covariance: StateMatrix,
    pub log_weight: f64,
}

impl HypothesisSnapshot {
    /// Deterministic dynamics run to `t` (either direction), covariance grown by
    /// the model's process noise over `|t - time_s|`.
    pub fn extrapolate(&self, t: f64) -> (StateVector, StateMatrix) {
        let dt = t - self.time_s;
        if dt == 0.0 {
            return (self.mean, self.covariance);
        }
        let f = self.motion.transition(dt);
        let mut p = f * self.covariance * f.transpose() + self.motion.process_noise(dt);
        symmetrize(&mut p);
        (f * self.mean, p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridEstimate {
    pub time_s: f64,
    /// MAP state within the MAP class at this time.
    pub state_id: u32,
    pub state: KinematicState,
    pub covariance: StateMatrix,
    /// Weight of every hypothesis at this time, bank order.
    pub hypothesis_weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesisPosterior {
    pub class_id: u32,
    pub state_id: u32,
    pub probability: f64,
}

/// Filtered estimate of the MAP class after each processing node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackPoint {
    pub time_s: f64,
    pub position_m: Vector3<f64>,
    pub position_covariance: Matrix3<f64>,
    pub class_posterior: Vec<(u32, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateSet {
    pub class_id: u32,
    pub class_posterior: Vec<(u32, f64)>,
    pub regime: GridRegime,
    pub estimates: Vec<GridEstimate>,
    pub hypotheses: Vec<HypothesisPosterior>,
    /// Smoothed states at the start of the observation span.
    pub first_snapshot: Vec<HypothesisSnapshot>,
    /// Filtered states at the end of the observation span.
    pub last_snapshot: Vec<HypothesisSnapshot>,
    pub filter_track: Vec<TrackPoint>,
    pub clamp_events: usize,
    pub observation_span: (f64, f64),
}

/// Inputs of the joint classification and trajectory estimation problem.
#[derive(Debug, Clone, Copy)]
pub struct SolveInputs<'a> {
    pub observations: &'a ObservationSet,
    pub grid: &'a EstimationGrid,
    pub catalog: &'a ObjectClassCatalog,
    pub carrier_modes: &'a CarrierModeCatalog,
    pub environment: &'a Environment,
    pub constraints: &'a [SoftConstraint],
    pub settings: &'a FilterSettings,
}

type Moments = (StateVector, StateMatrix);

struct Node {
    time_s: f64,
    /// Per hypothesis, per component.
    filtered: Vec<Vec<Moments>>,
    /// Prediction into this node from the previous one, with each hypothesis' transition.
    predicted: Option<(Vec<Vec<Moments>>, Vec<StateMatrix>)>,
    /// Hypothesis log-weights after the node.
    log_weights: Vec<f64>,
}

fn mixture(weights: &[f64], states: &[(StateVector, StateMatrix)]) -> (StateVector, StateMatrix) {
    if states.len() == 1 {
        return states[0];
    }
    let total: f64 = weights.iter().sum();
    let mut mean = StateVector::zeros();
    for (w, (x, _)) in weights.iter().zip(states) {
        mean += x * (w / total);
    }
    let mut cov = StateMatrix::zeros();
    for (w, (x, p)) in weights.iter().zip(states) {
        let d = x - mean;
        cov += (p + d * d.transpose()) * (w / total);
    }
    (mean, cov)
}

fn argmax_class(posterior: &[(u32, f64)]) -> u32 {
    let mut best = posterior[0];
    for &p in &posterior[1..] {
        if p.1 > best.1 {
            best = p;
        }
    }
    best.0
}

fn normalized(log_weights: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(log_weights.iter().copied());
    log_weights.iter().map(|l| (l - lse).exp()).collect()
}

fn class_posterior_of(groups: &[ClassGroup], weights: &[f64]) -> Vec<(u32, f64)> {
    groups
        .iter()
        .map(|g| (g.class_id, g.members.iter().map(|&i| weights[i]).sum()))
        .collect()
}

fn smoother_gain(filtered: &StateMatrix, predicted: &StateMatrix, f: &StateMatrix) -> StateMatrix {
    let pf = filtered * f.transpose();
    match predicted.cholesky() {
        Some(c) => c.solve(&pf.transpose()).transpose(),
        None => predicted
            .pseudo_inverse(1e-12 * predicted.amax().max(1e-300))
            .map(|pi| pf * pi)
            .unwrap_or_else(|_| StateMatrix::zeros()),
    }
}

/// Joint MAP classification and trajectory reconstruction on the grid.
pub fn solve(inputs: &SolveInputs<'_>) -> Result<EstimateSet, FilterError> {
    let obs = inputs.observations;
    if obs.len() < 3 {
        return Err(FilterError::InsufficientObservations { needed: 3, got: obs.len() });
    }
    let ctx = UpdateContext {
        carrier_modes: inputs.carrier_modes,
        environment: inputs.environment,
        constraints: inputs.constraints,
        settings: inputs.settings,
    };
    let mut bank = init_bank(inputs.catalog, obs, inputs.carrier_modes, inputs.settings)?;
    let span = obs.time_span();

    // processing nodes: distinct measurement times plus grid times inside the span
    let mut node_times: Vec<f64> = obs.measurements().iter().map(|m| m.time_s).collect();
    node_times.extend(inputs.grid.times().iter().copied().filter(|t| *t >= span.0 && *t <= span.1));
    node_times.sort_by(f64::total_cmp);
    node_times.dedup();

    let components = |bank: &HypothesisBank| -> Vec<Vec<Moments>> {
        bank.hypotheses
            .iter()
            .map(|h| h.components.iter().map(|c| (c.mean, c.covariance)).collect())
            .collect()
    };
    let ms = obs.measurements();
    let mut next_m = 0;
    let mut nodes: Vec<Node> = Vec::with_capacity(node_times.len());
    let mut track = Vec::with_capacity(node_times.len());
    for &t in &node_times {
        let predicted = if t > bank.time_s {
            let fs = bank.predict(t - bank.time_s)?;
            Some((components(&bank), fs))
        } else {
            None
        };
        while next_m < ms.len() && ms[next_m].time_s == t {
            bank.update(&ms[next_m], &ctx)?;
            next_m += 1;
        }
        let lw: Vec<f64> = bank.hypotheses.iter().map(|h| h.log_weight).collect();
        let w = normalized(&lw);
        let post = class_posterior_of(&bank.groups, &w);
        let g = argmax_class(&post);
        let group = bank.groups.iter().find(|gr| gr.class_id == g).expect("class group");
        let states: Vec<Moments> =
            group.members.iter().map(|&i| (bank.hypotheses[i].mean, bank.hypotheses[i].covariance)).collect();
        let ws: Vec<f64> = group.members.iter().map(|&i| w[i]).collect();
        let (mx, mp) = mixture(&ws, &states);
        track.push(TrackPoint {
            time_s: t,
            position_m: mx.fixed_rows::<3>(0).into_owned(),
            position_covariance: mp.fixed_view::<3, 3>(0, 0).into_owned(),
            class_posterior: post,
        });
        nodes.push(Node { time_s: t, filtered: components(&bank), predicted, log_weights: lw });
    }

    // fixed-interval smoothing per component
    let mut smoothed: Vec<Vec<Vec<Moments>>> = nodes.iter().map(|n| n.filtered.clone()).collect();
    for k in (0..nodes.len().saturating_sub(1)).rev() {
        let Some((pred, fs)) = &nodes[k + 1].predicted else { continue };
        for (h, f) in fs.iter().enumerate() {
            for j in 0..pred[h].len() {
                let (xf, pf) = nodes[k].filtered[h][j];
                let (xp, pp) = pred[h][j];
                let c = smoother_gain(&pf, &pp, f);
                let (xs_next, ps_next) = smoothed[k + 1][h][j];
                let xs = xf + c * (xs_next - xp);
                let mut ps = pf + c * (ps_next - pp) * c.transpose();
                symmetrize(&mut ps);
                smoothed[k][h][j] = (xs, ps);
            }
        }
    }
    // lanes never switch, so the final component weights are also the smoothed ones
    let lane_weights: Vec<Vec<f64>> = bank
        .hypotheses
        .iter()
        .map(|h| h.components.iter().map(|c| (c.log_weight - h.log_weight).exp()).collect())
        .collect();
    let merged = |per_h: &[Vec<Moments>]| -> Vec<Moments> {
        per_h.iter().zip(&lane_weights).map(|(comps, w)| mixture(w, comps)).collect()
    };

    let final_w = normalized(&nodes.last().expect("at least one node").log_weights);
    let class_posterior = class_posterior_of(&bank.groups, &final_w);
    let class_id = argmax_class(&class_posterior);
    let group = bank.groups.iter().find(|g| g.class_id == class_id).expect("class group").clone();

    let make_snapshot = |states: &[Moments], time_s: f64| -> Vec<HypothesisSnapshot> {
        bank.hypotheses
            .iter()
            .zip(states)
            .zip(&final_w)
            .map(|((h, (x, p)), w)| HypothesisSnapshot {
                class_id: h.class_id,
                state_id: h.state_id,
                motion: h.motion,
                time_s,
                mean: *x,
                covariance: *p,
                log_weight: w.ln().max(LOG_WEIGHT_FLOOR),
            })
            .collect()
    };
    let first_snapshot = make_snapshot(&merged(&smoothed[0]), nodes[0].time_s);
    let final_states: Vec<Moments> = bank.hypotheses.iter().map(|h| (h.mean, h.covariance)).collect();
    let last_snapshot = make_snapshot(&final_states, nodes[nodes.len() - 1].time_s);

    let mut estimates = Vec::with_capacity(inputs.grid.times().len());
    for &t in inputs.grid.times() {
        let (states, weights): (Vec<Moments>, Vec<f64>) = if t < span.0 {
            (first_snapshot.iter().map(|s| s.extrapolate(t)).collect(), final_w.clone())
        } else if t > span.1 {
            let dt = t - span.1;
            let mut w = final_w.clone();
            for g in &bank.groups {
                if g.members.len() > 1 {
                    let pi = g.transition_probabilities(dt);
                    let old: Vec<f64> = g.members.iter().map(|&i| final_w[i]).collect();
                    for (to, &idx) in g.members.iter().enumerate() {
                        w[idx] = (0..old.len()).map(|from| pi[(from, to)] * old[from]).sum();
                    }
                }
            }
            (last_snapshot.iter().map(|s| s.extrapolate(t)).collect(), w)
        } else {
            let k = nodes.partition_point(|n| n.time_s < t);
            (merged(&smoothed[k]), normalized(&nodes[k].log_weights))
        };
        let member_states: Vec<Moments> = group.members.iter().map(|&i| states[i]).collect();
        let member_w: Vec<f64> = group.members.iter().map(|&i| weights[i]).collect();
        let best_member = member_w
            .iter()
            .enumerate()
            .fold(0, |best, (i, w)| if *w > member_w[best] { i } else { best });
        let (mean, cov) = mixture(&member_w, &member_states);
        estimates.push(GridEstimate {
            time_s: t,
            state_id: bank.hypotheses[group.members[best_member]].state_id,
            state: KinematicState::from_vector(t, &mean),
            covariance: cov,
            hypothesis_weights: weights,
        });
    }

    let hypotheses = bank
        .hypotheses
        .iter()
        .zip(&final_w)
        .map(|(h, p)| HypothesisPosterior { class_id: h.class_id, state_id: h.state_id, probability: *p })
        .collect();

    Ok(EstimateSet {
        class_id,
        class_posterior,
        regime: inputs.grid.regime(span),
        estimates,
        hypotheses,
        first_snapshot,
        last_snapshot,
        filter_track: track,
        clamp_events: bank.clamp_events,
        observation_span: span,
    })
}

/// Two-ray triangulation: midpoint of the common perpendicular.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Triangulation {
    pub point_m: Vector3<f64>,
    /// Length of the common perpendicular between the rays.
    pub residual_m: f64,
}

pub fn triangulate_baseline(m1: &Measurement, m2: &Measurement) -> Result<Triangulation, FilterError> {
    let (c1, c2) = (m1.carrier_position_m, m2.carrier_position_m);
    let (d1, d2) = (m1.los.normalize(), m2.los.normalize());
    if (c1 - c2).norm() == 0.0 {
        return Err(FilterError::DegenerateGeometry);
    }
    let b = d1.dot(&d2);
    let sin2 = 1.0 - b * b;
    if sin2.max(0.0).sqrt() < 1e-6 {
        return Err(FilterError::DegenerateGeometry);
    }
    let w0 = c1 - c2;
    let d = d1.dot(&w0);
    let e = d2.dot(&w0);
    let s = (b * e - d) / sin2;
    let t = (e - b * d) / sin2;
    let p1 = c1 + d1 * s;
    let p2 = c2 + d2 * t;
    Ok(Triangulation { point_m: (p1 + p2) * 0.5, residual_m: (p1 - p2).norm() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalPredicate {
    TerrainContact,
    ZeroSpeed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Endpoint {
    Reached {
        predicate: TerminalPredicate,
        time_s: f64,
        position_m: Vector3<f64>,
        position_covariance: Matrix3<f64>,
    },
    NotReached {
        horizon_s: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperativeReport {
    pub time_s: f64,
    pub slant_range_m: f64,
    pub velocity_mps: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TacticalReport {
    pub times_s: Vec<f64>,
    pub route_m: Vec<Vector3<f64>>,
    pub route_length_m: f64,
    pub predicted_velocity_mps: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategicReport {
    pub initial_point: Endpoint,
    pub final_point: Endpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskClassOutput {
    pub operative: OperativeReport,
    pub tactical: TacticalReport,
    pub strategic: StrategicReport,
}

#[derive(Debug, Clone, Copy)]
pub struct ReportContext<'a> {
    /// Observer used for the slant range.
    pub reference_position_m: Vector3<f64>,
    pub environment: &'a Environment,
    /// How far before the first and after the last estimate endpoints are sought, s.
    pub horizon_s: f64,
    /// Scan step of the endpoint search, s.
    pub step_s: f64,
    /// Speeds at or below this count as stopped, m/s.
    pub zero_speed_mps: f64,
}

fn class_members<'a>(est: &EstimateSet, snaps: &'a [HypothesisSnapshot]) -> Vec<&'a HypothesisSnapshot> {
    snaps.iter().filter(|s| s.class_id == est.class_id).collect()
}

fn mixture_at(snaps: &[&HypothesisSnapshot], t: f64) -> (StateVector, StateMatrix) {
    let states: Vec<(StateVector, StateMatrix)> = snaps.iter().map(|s| s.extrapolate(t)).collect();
    let ws: Vec<f64> = snaps.iter().map(|s| s.log_weight.exp()).collect();
    mixture(&ws, &states)
}

fn find_endpoint(snaps: &[&HypothesisSnapshot], start: f64, direction: f64, ctx: &ReportContext<'_>) -> Endpoint {
    let margin = |t: f64| -> (f64, f64) {
        let (x, _) = mixture_at(snaps, t);
        let r: Vector3<f64> = x.fixed_rows::<3>(0).into_owned();
        let v: Vector3<f64> = x.fixed_rows::<3>(3).into_owned();
        let h = ctx.environment.height_above_terrain(&r, t).unwrap_or(f64::INFINITY);
        (h, v.norm() - ctx.zero_speed_mps)
    };
    let steps = (ctx.horizon_s / ctx.step_s).ceil() as usize;
    let (mut prev_t, mut prev) = (start, margin(start));
    for i in 1..=steps {
        let t = start + direction * (i as f64 * ctx.step_s).min(ctx.horizon_s);
        let cur = margin(t);
        let hit = if prev.0 > 0.0 && cur.0 <= 0.0 {
            Some((TerminalPredicate::TerrainContact, 0usize))
        } else if prev.1 > 0.0 && cur.1 <= 0.0 {
            Some((TerminalPredicate::ZeroSpeed, 1usize))
        } else {
            None
        };
        if let Some((predicate, which)) = hit {
            let pick = |m: (f64, f64)| if which == 0 { m.0 } else { m.1 };
            let (mut a, mut b) = (prev_t, t);
            for _ in 0..80 {
                let mid = 0.5 * (a + b);
                if pick(margin(mid)) > 0.0 {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            let tc = 0.5 * (a + b);
            let (x, p) = mixture_at(snaps, tc);
            return Endpoint::Reached {
                predicate,
                time_s: tc,
                position_m: x.fixed_rows::<3>(0).into_owned(),
                position_covariance: p.fixed_view::<3, 3>(0, 0).into_owned(),
            };
        }
        prev_t = t;
        prev = cur;
    }
    Endpoint::NotReached { horizon_s: ctx.horizon_s }
}

/// Operative, tactical and strategic views of an estimate.
pub fn task_class_report(est: &EstimateSet, ctx: &ReportContext<'_>) -> TaskClassOutput {
    let last = est.estimates.last().expect("estimate set is never empty");
    let operative = OperativeReport {
        time_s: last.time_s,
        slant_range_m: (last.state.position_m - ctx.reference_position_m).norm(),
        velocity_mps: last.state.velocity_mps,
    };
    let route: Vec<Vector3<f64>> = est.estimates.iter().map(|e| e.state.position_m).collect();
    let route_length_m = route.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
    let tactical = TacticalReport {
        times_s: est.estimates.iter().map(|e| e.time_s).collect(),
        route_m: route,
        route_length_m,
        predicted_velocity_mps: last.state.velocity_mps,
    };
    let first_members = class_members(est, &est.first_snapshot);
    let last_members = class_members(est, &est.last_snapshot);
    let first_t = est.estimates[0].time_s.min(est.observation_span.0);
    let last_t = last.time_s.max(est.observation_span.1);
    let strategic = StrategicReport {
        initial_point: find_endpoint(&first_members, first_t, -1.0, ctx),
        final_point: find_endpoint(&last_members, last_t, 1.0, ctx),
    };
    TaskClassOutput { operative, tactical, strategic }
}
