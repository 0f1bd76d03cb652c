//! Spherical-coverage staring-sensor array: tiling, f-theta projection,
//! image-extent classes and synthesis of line-of-sight measurements.

use crate::geodesy::Environment;
use crate::scene::{CarrierState, KinematicState};
use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

const UNIT_TOLERANCE: f64 = 1e-9;
/// Slack on the active-area edges, in pixels.
const EDGE_SLACK_PX: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensorError {
    #[error("unknown layout id {0:?}")]
    UnknownLayout(String),
    #[error("direction is not a unit vector (norm {0})")]
    NonUnitDirection(f64),
    #[error("pixel ({0}, {1}) is outside the active area")]
    PixelOutsideActiveArea(f64, f64),
    #[error("undefined line of sight")]
    UndefinedLineOfSight,
    #[error("image extent must be at least 1 pixel")]
    ExtentTooSmall,
    #[error("duplicate timestamp {time_s} from carrier {carrier_id}")]
    DuplicateTimestamp { time_s: f64, carrier_id: u32 },
    #[error("observation set is empty")]
    EmptyObservationSet,
    #[error("observation set is not strictly ordered at index {0}")]
    Unordered(usize),
    #[error("invalid tile: {0}")]
    InvalidTile(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PixelCoord {
    /// Column coordinate, growing along the tile x axis.
    pub u: f64,
    /// Row coordinate, growing along the tile y axis.
    pub v: f64,
}

/// One staring sensor. The tile frame looks along +z; image columns follow +x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorTile {
    pub id: usize,
    /// Tile frame to carrier body frame.
    pub boresight: UnitQuaternion<f64>,
    /// Full angular extents (x, y) of the square field, degrees.
    pub fov_deg: (f64, f64),
    /// Active-area format (columns, rows).
    pub fpa_format: (u32, u32),
    /// Radial f-theta scale, pixels per radian.
    pub scale_px_per_rad: f64,
}

impl SensorTile {
    /// A tile whose f-theta scale maps the x half-field onto half the columns.
    pub fn new(id: usize, boresight: UnitQuaternion<f64>, fov_deg: (f64, f64), fpa_format: (u32, u32)) -> Result<Self, SensorError> {
        let scale = fpa_format.0 as f64 / 2.0 / (fov_deg.0.to_radians() / 2.0);
        let tile = SensorTile { id, boresight, fov_deg, fpa_format, scale_px_per_rad: scale };
        tile.validate()?;
        Ok(tile)
    }

    pub fn validate(&self) -> Result<(), SensorError> {
        let (fx, fy) = self.fov_deg;
        if !(fx > 0.0 && fx <= 180.0 && fy > 0.0 && fy <= 180.0) {
            return Err(SensorError::InvalidTile(format!("fov ({fx}, {fy}) outside (0, 180]")));
        }
        if self.fpa_format.0 < 16 || self.fpa_format.1 < 16 {
            return Err(SensorError::InvalidTile("format below 16x16".into()));
        }
        if !(self.scale_px_per_rad > 0.0 && self.scale_px_per_rad.is_finite()) {
            return Err(SensorError::InvalidTile("scale must be positive".into()));
        }
        Ok(())
    }

    /// Equidistant radial law: image radius in pixels at off-axis angle `theta`.
    pub fn radial_px(&self, theta: f64) -> f64 {
        self.scale_px_per_rad * theta
    }

    pub fn principal_point(&self) -> PixelCoord {
        PixelCoord { u: self.fpa_format.0 as f64 / 2.0, v: self.fpa_format.1 as f64 / 2.0 }
    }

    fn half_extent_px(&self) -> (f64, f64) {
        let k = self.scale_px_per_rad;
        let hx = (k * self.fov_deg.0.to_radians() / 2.0).min(self.fpa_format.0 as f64 / 2.0);
        let hy = (k * self.fov_deg.1.to_radians() / 2.0).min(self.fpa_format.1 as f64 / 2.0);
        (hx, hy)
    }

    fn in_active_area(&self, p: &PixelCoord) -> bool {
        let c = self.principal_point();
        let (hx, hy) = self.half_extent_px();
        (p.u - c.u).abs() <= hx + EDGE_SLACK_PX && (p.v - c.v).abs() <= hy + EDGE_SLACK_PX
    }

    /// Solid angle of one pixel at the given image point, steradians.
    pub fn pixel_solid_angle(&self, p: &PixelCoord) -> f64 {
        let c = self.principal_point();
        let r = (p.u - c.u).hypot(p.v - c.v);
        let theta = r / self.scale_px_per_rad;
        let jac = if theta < 1e-12 { 1.0 } else { theta.sin() / theta };
        jac / (self.scale_px_per_rad * self.scale_px_per_rad)
    }
}

/// Equidistant mapping of a body-frame unit direction onto the tile image.
/// `Ok(None)` means the direction falls outside the tile's field.
pub fn direction_to_pixel(tile: &SensorTile, dir_body: &Vector3<f64>) -> Result<Option<PixelCoord>, SensorError> {
    let n = dir_body.norm();
    if !((n - 1.0).abs() <= UNIT_TOLERANCE) {
        return Err(SensorError::NonUnitDirection(n));
    }
    let d = tile.boresight.inverse_transform_vector(dir_body);
    let rho = d.x.hypot(d.y);
    let theta = rho.atan2(d.z);
    let c = tile.principal_point();
    let p = if rho == 0.0 {
        c
    } else {
        let r = tile.radial_px(theta);
        PixelCoord { u: c.u + r * d.x / rho, v: c.v + r * d.y / rho }
    };
    Ok(tile.in_active_area(&p).then_some(p))
}

/// Inverse of [`direction_to_pixel`]; returns a body-frame unit vector.
pub fn pixel_to_direction(tile: &SensorTile, p: &PixelCoord) -> Result<Vector3<f64>, SensorError> {
    if !(p.u.is_finite() && p.v.is_finite()) || !tile.in_active_area(p) {
        return Err(SensorError::PixelOutsideActiveArea(p.u, p.v));
    }
    let c = tile.principal_point();
    let (du, dv) = (p.u - c.u, p.v - c.v);
    let r = du.hypot(dv);
    let theta = r / tile.scale_px_per_rad;
    let d = if r == 0.0 {
        Vector3::z()
    } else {
        let s = theta.sin();
        Vector3::new(s * du / r, s * dv / r, theta.cos())
    };
    Ok(tile.boresight.transform_vector(&d))
}

/// Maximum relative departure of a radial mapping `r(theta)` from the
/// best-fit equidistant line `k_fit * theta` on `[0, theta_max]`, normalized
/// by `k_fit * theta_max`. `k_fit` is the continuous least-squares slope.
pub fn ftheta_deviation(projection: impl Fn(f64) -> f64, theta_max: f64) -> f64 {
    if !(theta_max > 0.0) {
        return 0.0;
    }
    // composite 16-point Gauss-Legendre for the slope integrals
    const PANELS: usize = 64;
    let (nodes, weights) = gauss_legendre_16();
    let mut num = 0.0;
    let h = theta_max / PANELS as f64;
    for p in 0..PANELS {
        let a = p as f64 * h;
        for (x, w) in nodes.iter().zip(weights.iter()) {
            let t = a + 0.5 * h * (x + 1.0);
            num += 0.5 * h * w * projection(t) * t;
        }
    }
    let den = theta_max.powi(3) / 3.0;
    let k_fit = num / den;
    // residuals at rounding level are noise from the quadrature, not distortion
    let dev = |t: f64| {
        let r = projection(t);
        let d = (r - k_fit * t).abs();
        if d <= 16.0 * f64::EPSILON * r.abs().max(k_fit * t) {
            0.0
        } else {
            d
        }
    };

    const GRID: usize = 4096;
    let step = theta_max / GRID as f64;
    let mut best_i = 0;
    let mut best = dev(0.0);
    for i in 1..=GRID {
        let v = dev(i as f64 * step);
        if v > best {
            best = v;
            best_i = i;
        }
    }
    // golden-section refinement around the best grid node
    let lo = (best_i.saturating_sub(1)) as f64 * step;
    let hi = ((best_i + 1).min(GRID)) as f64 * step;
    let (mut a, mut b) = (lo, hi);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if dev(c) > dev(d) {
            b = d;
        } else {
            a = c;
        }
        if b - a < 1e-15 * theta_max {
            break;
        }
    }
    let refined = [best, dev(0.5 * (a + b)), dev(lo), dev(hi)].into_iter().fold(0.0, f64::max);
    refined / (k_fit * theta_max)
}

fn gauss_legendre_16() -> ([f64; 16], [f64; 16]) {
    const X: [f64; 8] = [
        0.095_012_509_837_637_44,
        0.281_603_550_779_258_9,
        0.458_016_777_657_227_4,
        0.617_876_244_402_643_8,
        0.755_404_408_355_003,
        0.865_631_202_387_831_8,
        0.944_575_023_073_232_6,
        0.989_400_934_991_649_9,
    ];
    const W: [f64; 8] = [
        0.189_450_610_455_068_5,
        0.182_603_415_044_923_6,
        0.169_156_519_395_002_5,
        0.149_595_988_816_576_7,
        0.124_628_971_255_533_9,
        0.095_158_511_682_492_78,
        0.062_253_523_938_647_89,
        0.027_152_459_411_754_1,
    ];
    let mut nodes = [0.0; 16];
    let mut weights = [0.0; 16];
    for i in 0..8 {
        nodes[2 * i] = -X[i];
        nodes[2 * i + 1] = X[i];
        weights[2 * i] = W[i];
        weights[2 * i + 1] = W[i];
    }
    (nodes, weights)
}

/// Largest accepted departure from the f-theta condition.
pub const FTHETA_DEVIATION_LIMIT: f64 = 0.05;

pub fn ftheta_within_limit(deviation: f64) -> bool {
    deviation <= FTHETA_DEVIATION_LIMIT
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ImageExtentClass {
    Multipoint,
    Pseudoimage,
    FullImage,
}

pub fn classify_image_extent(extent_px: u32) -> Result<ImageExtentClass, SensorError> {
    match extent_px {
        0 => Err(SensorError::ExtentTooSmall),
        1..=4 => Ok(ImageExtentClass::Multipoint),
        5..=11 => Ok(ImageExtentClass::Pseudoimage),
        _ => Ok(ImageExtentClass::FullImage),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutId {
    Cube6,
    Cube24,
}

impl std::str::FromStr for LayoutId {
    type Err = SensorError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cube6" => Ok(LayoutId::Cube6),
            "cube24" => Ok(LayoutId::Cube24),
            other => Err(SensorError::UnknownLayout(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorArray {
    pub layout_id: LayoutId,
    pub tiles: Vec<SensorTile>,
}

/// Orientation of the generating cube24 tile (x, y, z, w). Its orbit under the
/// 24 proper rotations of the cube covers the sphere with 45x45 fields.
const CUBE24_SEED_QUATERNION: [f64; 4] = [0.025_259_74, 0.268_324_31, 0.618_682_46, 0.737_967_5];

/// The 24 proper rotations of the cube as signed permutation matrices, in a
/// fixed enumeration order.
fn cube_rotation_group() -> Vec<Matrix3<f64>> {
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut out = Vec::with_capacity(24);
    for p in PERMS {
        for signs in 0..8u8 {
            let mut m = Matrix3::zeros();
            for (row, &col) in p.iter().enumerate() {
                m[(row, col)] = if signs & (1 << row) != 0 { -1.0 } else { 1.0 };
            }
            if m.determinant() > 0.0 {
                out.push(m);
            }
        }
    }
    out
}

pub fn build_tiling(layout_id: LayoutId) -> SensorArray {
    let tiles = match layout_id {
        LayoutId::Cube6 => {
            use std::f64::consts::FRAC_PI_2;
            let faces = [
                UnitQuaternion::from_axis_angle(&Vector3::y_axis(), FRAC_PI_2),
                UnitQuaternion::from_axis_angle(&Vector3::y_axis(), -FRAC_PI_2),
                UnitQuaternion::from_axis_angle(&Vector3::x_axis(), -FRAC_PI_2),
                UnitQuaternion::from_axis_angle(&Vector3::x_axis(), FRAC_PI_2),
                UnitQuaternion::identity(),
                UnitQuaternion::from_axis_angle(&Vector3::y_axis(), std::f64::consts::PI),
            ];
            faces
                .into_iter()
                .enumerate()
                .map(|(i, q)| SensorTile::new(i, q, (90.0, 90.0), (1024, 1024)).expect("static tile"))
                .collect()
        }
        LayoutId::Cube24 => {
            let [x, y, z, w] = CUBE24_SEED_QUATERNION;
            let seed = UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z));
            let seed_m = seed.to_rotation_matrix().into_inner();
            cube_rotation_group()
                .into_iter()
                .enumerate()
                .map(|(i, g)| {
                    let rot = Rotation3::from_matrix_unchecked(g * seed_m);
                    let q = UnitQuaternion::from_rotation_matrix(&rot);
                    SensorTile::new(i, q, (45.0, 45.0), (512, 512)).expect("static tile")
                })
                .collect()
        }
    };
    SensorArray { layout_id, tiles }
}

/// Owning tile and pixel of a body-frame direction; lowest tile index wins ties.
pub fn locate_direction(array: &SensorArray, dir_body: &Vector3<f64>) -> Result<Option<(usize, PixelCoord)>, SensorError> {
    for tile in &array.tiles {
        if let Some(p) = direction_to_pixel(tile, dir_body)? {
            return Ok(Some((tile.id, p)));
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageStats {
    pub samples: usize,
    pub misses: usize,
    pub multi_covered: usize,
}

impl CoverageStats {
    pub fn overlap_fraction(&self) -> f64 {
        self.multi_covered as f64 / self.samples as f64
    }
}

/// Monte Carlo coverage over uniformly random directions.
pub fn coverage(array: &SensorArray, samples: usize, seed: u64) -> CoverageStats {
    const CHUNK: usize = 1 << 14;
    let chunks = samples.div_ceil(CHUNK);
    let (misses, multi) = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (c as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let n = CHUNK.min(samples - c * CHUNK);
            let (mut miss, mut multi) = (0usize, 0usize);
            for _ in 0..n {
                let d = random_unit(&mut rng);
                let hits = array
                    .tiles
                    .iter()
                    .filter(|t| matches!(direction_to_pixel(t, &d), Ok(Some(_))))
                    .count();
                if hits == 0 {
                    miss += 1;
                } else if hits > 1 {
                    multi += 1;
                }
            }
            (miss, multi)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    CoverageStats { samples, misses, multi_covered: multi }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
        let n: f64 = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Any unit vector orthogonal to `d`, followed by the completing vector.
pub fn tangent_basis(d: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if d.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = d.cross(&helper).normalize();
    let e2 = d.cross(&e1);
    (e1, e2)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationConditions {
    /// Optical depth along the line of sight.
    pub path_optical_depth: f64,
    pub background_radiance: f64,
}

/// One line-of-sight measurement with its context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Measurement {
    pub time_s: f64,
    pub carrier_id: u32,
    pub carrier_position_m: Vector3<f64>,
    pub los: Vector3<f64>,
    pub carrier_mode: u32,
    #[serde(default)]
    pub conditions: ObservationConditions,
    /// Opaque tactical-situation tags carried through unchanged.
    #[serde(default)]
    pub tactical_tags: Vec<String>,
    pub tile_id: Option<usize>,
    pub pixel: Option<PixelCoord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementNoise {
    pub position_std_m: f64,
    pub bearing_std_rad: f64,
    /// Snap the noisy direction to the centre of its pixel.
    #[serde(default)]
    pub quantize: bool,
}

pub struct MeasurementRequest<'a> {
    pub carrier_id: u32,
    pub carrier: &'a CarrierState,
    pub target: &'a KinematicState,
    pub array: &'a SensorArray,
    pub noise: MeasurementNoise,
    pub environment: Option<&'a Environment>,
    pub seed: u64,
}

pub fn synthesize_measurement(req: &MeasurementRequest<'_>) -> Result<Measurement, SensorError> {
    let delta = req.target.position_m - req.carrier.position_m;
    let range = delta.norm();
    if !(range > 0.0) || !range.is_finite() {
        return Err(SensorError::UndefinedLineOfSight);
    }
    let truth_los = delta / range;
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);

    let noise = req.noise;
    let pos_noise = Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
    let carrier_meas = req.carrier.position_m + pos_noise * noise.position_std_m;

    let (e1, e2) = tangent_basis(&truth_los);
    let z1: f64 = rng.sample(StandardNormal);
    let z2: f64 = rng.sample(StandardNormal);
    let mut los = (truth_los + (e1 * z1 + e2 * z2) * noise.bearing_std_rad).normalize();

    let body = req.carrier.attitude.inverse_transform_vector(&los).normalize();
    let located = locate_direction(req.array, &body)?;
    let (tile_id, pixel) = match located {
        Some((id, px)) => {
            let px = if noise.quantize {
                let tile = &req.array.tiles[id];
                let (cols, rows) = (tile.fpa_format.0 as f64, tile.fpa_format.1 as f64);
                let centre = PixelCoord {
                    u: (px.u.floor() + 0.5).clamp(0.5, cols - 0.5),
                    v: (px.v.floor() + 0.5).clamp(0.5, rows - 0.5),
                };
                if let Ok(d) = pixel_to_direction(tile, &centre) {
                    los = req.carrier.attitude.transform_vector(&d).normalize();
                }
                centre
            } else {
                px
            };
            (Some(id), Some(px))
        }
        None => (None, None),
    };

    let conditions = match req.environment {
        Some(env) => match &env.atmosphere {
            Some(atm) => {
                let depth = atm.path_optical_depth(&req.carrier.position_m, &req.target.position_m, &env.ellipsoid, req.target.time_s);
                let radiance = crate::geodesy::ecef_to_geodetic(&req.target.position_m, &env.ellipsoid)
                    .map(|g| atm.sample(&g, req.target.time_s).background_radiance)
                    .unwrap_or(0.0);
                ObservationConditions { path_optical_depth: depth, background_radiance: radiance }
            }
            None => ObservationConditions::default(),
        },
        None => ObservationConditions::default(),
    };

    Ok(Measurement {
        time_s: req.carrier.time_s,
        carrier_id: req.carrier_id,
        carrier_position_m: carrier_meas,
        los,
        carrier_mode: req.carrier.mode,
        conditions,
        tactical_tags: Vec::new(),
        tile_id,
        pixel,
    })
}

/// `K` consecutive measurements ordered by `(time, carrier id)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationSet {
    measurements: Vec<Measurement>,
}

impl ObservationSet {
    pub fn new(measurements: Vec<Measurement>) -> Result<Self, SensorError> {
        if measurements.is_empty() {
            return Err(SensorError::EmptyObservationSet);
        }
        for (i, w) in measurements.windows(2).enumerate() {
            let ordered = w[0].time_s < w[1].time_s || (w[0].time_s == w[1].time_s && w[0].carrier_id < w[1].carrier_id);
            if !ordered {
                return Err(SensorError::Unordered(i + 1));
            }
        }
        Ok(ObservationSet { measurements })
    }

    pub fn measurements(&self) -> &[Measurement] {
        &self.measurements
    }

    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }

    /// `[min t, max t]` of the set.
    pub fn time_span(&self) -> (f64, f64) {
        (self.measurements[0].time_s, self.measurements[self.measurements.len() - 1].time_s)
    }

    pub fn carrier_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.measurements.iter().map(|m| m.carrier_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeWindow {
    pub start_s: f64,
    pub end_s: f64,
}

impl TimeWindow {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start_s && t <= self.end_s
    }
}

/// Sorts, windows and checks a measurement stream.
pub fn assemble_observation_set(mut measurements: Vec<Measurement>, window: Option<TimeWindow>) -> Result<ObservationSet, SensorError> {
    if let Some(w) = window {
        measurements.retain(|m| w.contains(m.time_s));
    }
    measurements.sort_by(|a, b| a.time_s.total_cmp(&b.time_s).then(a.carrier_id.cmp(&b.carrier_id)));
    for w in measurements.windows(2) {
        if w[0].time_s == w[1].time_s && w[0].carrier_id == w[1].carrier_id {
            return Err(SensorError::DuplicateTimestamp { time_s: w[0].time_s, carrier_id: w[0].carrier_id });
        }
    }
    ObservationSet::new(measurements)
}

#[derive(Debug, Serialize)]
struct MeasurementRow {
    t: f64,
    carrier_id: u32,
    rv_x: f64,
    rv_y: f64,
    rv_z: f64,
    d_x: f64,
    d_y: f64,
    d_z: f64,
    s_v: u32,
    tile: Option<usize>,
    pixel_u: Option<f64>,
    pixel_v: Option<f64>,
}

/// One row per measurement tuple.
pub fn write_measurements_csv<W: Write>(out: W, measurements: &[Measurement]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for m in measurements {
        w.serialize(MeasurementRow {
            t: m.time_s,
            carrier_id: m.carrier_id,
            rv_x: m.carrier_position_m.x,
            rv_y: m.carrier_position_m.y,
            rv_z: m.carrier_position_m.z,
            d_x: m.los.x,
            d_y: m.los.y,
            d_z: m.los.z,
            s_v: m.carrier_mode,
            tile: m.tile_id,
            pixel_u: m.pixel.map(|p| p.u),
            pixel_v: m.pixel.map(|p| p.v),
        })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tile_512() -> SensorTile {
        SensorTile::new(0, UnitQuaternion::identity(), (45.0, 45.0), (512, 512)).unwrap()
    }

    #[test]
    fn cube6_has_axis_boresights() {
        let a = build_tiling(LayoutId::Cube6);
        assert_eq!(a.tiles.len(), 6);
        let expected = [Vector3::x(), -Vector3::x(), Vector3::y(), -Vector3::y(), Vector3::z(), -Vector3::z()];
        for (t, e) in a.tiles.iter().zip(expected) {
            assert_abs_diff_eq!(t.boresight.transform_vector(&Vector3::z()), e, epsilon = 1e-15);
            assert_eq!(t.fov_deg, (90.0, 90.0));
        }
    }

    #[test]
    fn cube24_has_24_distinct_tiles() {
        let a = build_tiling(LayoutId::Cube24);
        assert_eq!(a.tiles.len(), 24);
        let b: Vec<_> = a.tiles.iter().map(|t| t.boresight.transform_vector(&Vector3::z())).collect();
        for i in 0..24 {
            for j in 0..i {
                assert!((b[i] - b[j]).norm() > 0.1);
            }
        }
        // four tiles per cube face
        for axis in 0..3 {
            for sign in [-1.0, 1.0] {
                let n = b.iter().filter(|v| v[axis] * sign > v.abs().max() - 1e-12).count();
                assert_eq!(n, 4);
            }
        }
    }

    #[test]
    fn unknown_layout_rejected() {
        assert!("cube12".parse::<LayoutId>().is_err());
        assert_eq!("cube24".parse::<LayoutId>().unwrap(), LayoutId::Cube24);
    }

    #[test]
    fn boresight_maps_to_principal_point() {
        let t = tile_512();
        let p = direction_to_pixel(&t, &Vector3::z()).unwrap().unwrap();
        assert_eq!(p, PixelCoord { u: 256.0, v: 256.0 });
        assert_abs_diff_eq!(pixel_to_direction(&t, &p).unwrap(), Vector3::z(), epsilon = 1e-15);
    }

    #[test]
    fn half_field_hits_edge_column() {
        let t = tile_512();
        let a = 22.5f64.to_radians();
        let p = direction_to_pixel(&t, &Vector3::new(a.sin(), 0.0, a.cos())).unwrap().unwrap();
        assert_abs_diff_eq!(p.u, 512.0, epsilon = 1e-9);
        assert_abs_diff_eq!(p.v, 256.0, epsilon = 1e-12);
        let beyond = 23.0f64.to_radians();
        assert_eq!(direction_to_pixel(&t, &Vector3::new(beyond.sin(), 0.0, beyond.cos())).unwrap(), None);
    }

    #[test]
    fn ten_degrees_off_axis_radius() {
        let t = tile_512();
        let a = 10f64.to_radians();
        let phi = 0.7f64;
        let d = Vector3::new(a.sin() * phi.cos(), a.sin() * phi.sin(), a.cos());
        let p = direction_to_pixel(&t, &d).unwrap().unwrap();
        let r = (p.u - 256.0).hypot(p.v - 256.0);
        assert_abs_diff_eq!(r, 256.0 / 22.5 * 10.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r, 113.78, epsilon = 5e-3);
    }

    #[test]
    fn non_unit_direction_rejected() {
        let t = tile_512();
        assert!(matches!(direction_to_pixel(&t, &Vector3::new(0.0, 0.0, 2.0)), Err(SensorError::NonUnitDirection(_))));
    }

    #[test]
    fn corner_pixel_inverse() {
        let t = tile_512();
        let corner = PixelCoord { u: 512.0, v: 512.0 };
        let d = pixel_to_direction(&t, &corner).unwrap();
        let r = (256.0f64 * 256.0 * 2.0).sqrt();
        assert_abs_diff_eq!(d.z.acos(), r / t.scale_px_per_rad, epsilon = 1e-12);
        assert!(pixel_to_direction(&t, &PixelCoord { u: 513.0, v: 0.0 }).is_err());
    }

    #[test]
    fn exact_ftheta_has_zero_deviation() {
        let k = 651.9;
        assert_eq!(ftheta_deviation(|t| k * t, 22.5f64.to_radians()), 0.0);
    }

    #[test]
    fn extent_classes() {
        assert_eq!(classify_image_extent(3).unwrap(), ImageExtentClass::Multipoint);
        assert_eq!(classify_image_extent(7).unwrap(), ImageExtentClass::Pseudoimage);
        assert_eq!(classify_image_extent(12).unwrap(), ImageExtentClass::FullImage);
        assert_eq!(classify_image_extent(0).unwrap_err(), SensorError::ExtentTooSmall);
    }

    fn carrier_at(p: Vector3<f64>) -> CarrierState {
        CarrierState { time_s: 1.0, position_m: p, attitude: UnitQuaternion::identity(), mode: 1 }
    }

    fn target_at(p: Vector3<f64>) -> KinematicState {
        KinematicState::new(1.0, p, Vector3::zeros(), Vector3::zeros())
    }

    #[test]
    fn noiseless_measurement_is_exact_los() {
        let array = build_tiling(LayoutId::Cube6);
        let c = carrier_at(Vector3::zeros());
        let t = target_at(Vector3::new(1000.0, 0.0, 0.0));
        let m = synthesize_measurement(&MeasurementRequest {
            carrier_id: 3,
            carrier: &c,
            target: &t,
            array: &array,
            noise: MeasurementNoise::default(),
            environment: None,
            seed: 1,
        })
        .unwrap();
        assert_eq!(m.los, Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(m.carrier_position_m, Vector3::zeros());
        assert_eq!(m.tile_id, Some(0));
        assert_eq!(m.carrier_id, 3);
    }

    #[test]
    fn coincident_points_have_no_los() {
        let array = build_tiling(LayoutId::Cube6);
        let c = carrier_at(Vector3::new(5.0, 5.0, 5.0));
        let t = target_at(Vector3::new(5.0, 5.0, 5.0));
        let err = synthesize_measurement(&MeasurementRequest {
            carrier_id: 1,
            carrier: &c,
            target: &t,
            array: &array,
            noise: MeasurementNoise::default(),
            environment: None,
            seed: 1,
        })
        .unwrap_err();
        assert_eq!(err.to_string(), "undefined line of sight");
    }

    fn bare(t: f64, carrier: u32) -> Measurement {
        Measurement {
            time_s: t,
            carrier_id: carrier,
            carrier_position_m: Vector3::zeros(),
            los: Vector3::x(),
            carrier_mode: 1,
            conditions: ObservationConditions::default(),
            tactical_tags: vec![],
            tile_id: None,
            pixel: None,
        }
    }

    #[test]
    fn assemble_sorts_and_rejects_duplicates() {
        let set = assemble_observation_set(vec![bare(2.0, 1), bare(0.0, 1), bare(1.0, 1)], None).unwrap();
        let times: Vec<f64> = set.measurements().iter().map(|m| m.time_s).collect();
        assert_eq!(times, vec![0.0, 1.0, 2.0]);
        assert_eq!(set.len(), 3);
        let err = assemble_observation_set(vec![bare(1.0, 1), bare(1.0, 1)], None).unwrap_err();
        assert!(matches!(err, SensorError::DuplicateTimestamp { .. }));
    }

    #[test]
    fn assemble_merges_two_carriers() {
        let a: Vec<_> = [0.0, 0.1, 0.2].iter().map(|&t| bare(t, 1)).collect();
        let b: Vec<_> = [0.05, 0.1, 0.3].iter().map(|&t| bare(t, 2)).collect();
        let mut all = b.clone();
        all.extend(a.clone());
        let set = assemble_observation_set(all, None).unwrap();
        // sort-merge oracle
        let mut oracle: Vec<(f64, u32)> = a.iter().chain(b.iter()).map(|m| (m.time_s, m.carrier_id)).collect();
        oracle.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        let got: Vec<(f64, u32)> = set.measurements().iter().map(|m| (m.time_s, m.carrier_id)).collect();
        assert_eq!(got, oracle);
        assert_eq!(set.carrier_ids(), vec![1, 2]);
    }

    #[test]
    fn window_trims_stream() {
        let ms: Vec<_> = (0..10).map(|i| bare(i as f64, 1)).collect();
        let set = assemble_observation_set(ms, Some(TimeWindow { start_s: 2.0, end_s: 4.0 })).unwrap();
        assert_eq!(set.len(), 3);
    }

    #[test]
    fn csv_has_one_row_per_measurement() {
        let mut buf = Vec::new();
        write_measurements_csv(&mut buf, &[bare(0.0, 1), bare(1.0, 2)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "t,carrier_id,rv_x,rv_y,rv_z,d_x,d_y,d_z,s_v,tile,pixel_u,pixel_v");
    }
}
