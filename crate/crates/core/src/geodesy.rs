//! Earth-fixed coordinate machinery.
//!
//! The rectangular frame used throughout the crate is Earth-centred, Earth-fixed
//! (ECEF). Geodetic coordinates are referred to a base ellipsoid of revolution,
//! WGS-84 by default. Terrain and atmosphere are gridded fields queried at points.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// A radius-vector in the Earth-fixed rectangular frame, meters.
pub type EcefVector = Vector3<f64>;

const MAX_GEODETIC_ITERATIONS: usize = 10;
const LATITUDE_TOLERANCE_RAD: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeodesyError {
    #[error("origin has no geodetic image")]
    OriginHasNoGeodeticImage,
    #[error("outside map coverage (lat {latitude_rad} rad, lon {longitude_rad} rad)")]
    OutsideMapCoverage { latitude_rad: f64, longitude_rad: f64 },
    #[error("invalid ellipsoid: {0}")]
    InvalidEllipsoid(String),
    #[error("invalid geodetic coordinate: {0}")]
    InvalidCoordinate(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidModel {
    pub semi_major_axis_m: f64,
    pub flattening: f64,
}

impl EllipsoidModel {
    pub const WGS84: EllipsoidModel = EllipsoidModel {
        semi_major_axis_m: 6_378_137.0,
        flattening: 1.0 / 298.257_223_563,
    };

    pub fn new(semi_major_axis_m: f64, flattening: f64) -> Result<Self, GeodesyError> {
        let e = EllipsoidModel { semi_major_axis_m, flattening };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<(), GeodesyError> {
        if !(self.semi_major_axis_m.is_finite() && self.semi_major_axis_m > 0.0) {
            return Err(GeodesyError::InvalidEllipsoid(format!(
                "semi-major axis must be positive, got {}",
                self.semi_major_axis_m
            )));
        }
        if !(self.flattening > 0.0 && self.flattening < 1.0) {
            return Err(GeodesyError::InvalidEllipsoid(format!(
                "flattening must lie in (0, 1), got {}",
                self.flattening
            )));
        }
        Ok(())
    }

    pub fn semi_minor_axis_m(&self) -> f64 {
        self.semi_major_axis_m * (1.0 - self.flattening)
    }

    /// First eccentricity squared.
    pub fn eccentricity_sq(&self) -> f64 {
        self.flattening * (2.0 - self.flattening)
    }

    /// Prime-vertical radius of curvature at the given geodetic latitude.
    pub fn prime_vertical_radius(&self, latitude_rad: f64) -> f64 {
        let s = latitude_rad.sin();
        self.semi_major_axis_m / (1.0 - self.eccentricity_sq() * s * s).sqrt()
    }
}

impl Default for EllipsoidModel {
    fn default() -> Self {
        Self::WGS84
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeodeticCoord {
    pub altitude_m: f64,
    pub latitude_rad: f64,
    pub longitude_rad: f64,
}

/// Maps any finite angle onto (-pi, pi].
pub fn normalize_longitude(lon: f64) -> f64 {
    let mut l = lon.rem_euclid(2.0 * PI);
    if l > PI {
        l -= 2.0 * PI;
    }
    l
}

impl GeodeticCoord {
    /// Builds a coordinate, normalizing longitude and rejecting latitudes outside
    /// the closed interval [-pi/2, pi/2].
    pub fn new(altitude_m: f64, latitude_rad: f64, longitude_rad: f64) -> Result<Self, GeodesyError> {
        if !(altitude_m.is_finite() && latitude_rad.is_finite() && longitude_rad.is_finite()) {
            return Err(GeodesyError::InvalidCoordinate("non-finite component".into()));
        }
        if latitude_rad.abs() > PI / 2.0 {
            return Err(GeodesyError::InvalidCoordinate(format!(
                "latitude {latitude_rad} rad outside [-pi/2, pi/2]"
            )));
        }
        Ok(GeodeticCoord {
            altitude_m,
            latitude_rad,
            longitude_rad: normalize_longitude(longitude_rad),
        })
    }

    pub fn from_degrees(altitude_m: f64, latitude_deg: f64, longitude_deg: f64) -> Result<Self, GeodesyError> {
        Self::new(altitude_m, latitude_deg.to_radians(), longitude_deg.to_radians())
    }
}

pub fn geodetic_to_ecef(g: &GeodeticCoord, e: &EllipsoidModel) -> EcefVector {
    let (sin_lat, cos_lat) = g.latitude_rad.sin_cos();
    let (sin_lon, cos_lon) = g.longitude_rad.sin_cos();
    let n = e.prime_vertical_radius(g.latitude_rad);
    let e2 = e.eccentricity_sq();
    Vector3::new(
        (n + g.altitude_m) * cos_lat * cos_lon,
        (n + g.altitude_m) * cos_lat * sin_lon,
        (n * (1.0 - e2) + g.altitude_m) * sin_lat,
    )
}

/// Bounded fixed-point inverse of [`geodetic_to_ecef`].
pub fn ecef_to_geodetic(r: &EcefVector, e: &EllipsoidModel) -> Result<GeodeticCoord, GeodesyError> {
    if r.norm() == 0.0 || !r.iter().all(|c| c.is_finite()) {
        return Err(GeodesyError::OriginHasNoGeodeticImage);
    }
    let e2 = e.eccentricity_sq();
    let a = e.semi_major_axis_m;
    let p = r.x.hypot(r.y);
    let longitude = if p == 0.0 { 0.0 } else { normalize_longitude(r.y.atan2(r.x)) };

    let mut lat = r.z.atan2(p * (1.0 - e2));
    for _ in 0..MAX_GEODETIC_ITERATIONS {
        let n = e.prime_vertical_radius(lat);
        let next = (r.z + e2 * n * lat.sin()).atan2(p);
        let delta = (next - lat).abs();
        lat = next;
        if delta < LATITUDE_TOLERANCE_RAD {
            break;
        }
    }
    // one refinement pass after the exit test keeps the residual far below the tolerance
    let n = e.prime_vertical_radius(lat);
    lat = (r.z + e2 * n * lat.sin()).atan2(p);

    let (sin_lat, cos_lat) = lat.sin_cos();
    let altitude = p * cos_lat + r.z * sin_lat - a * (1.0 - e2 * sin_lat * sin_lat).sqrt();
    Ok(GeodeticCoord {
        altitude_m: altitude,
        latitude_rad: lat,
        longitude_rad: longitude,
    })
}

/// East, north and up unit vectors expressed in the Earth-fixed frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnuFrame {
    pub east: Vector3<f64>,
    pub north: Vector3<f64>,
    pub up: Vector3<f64>,
}

impl EnuFrame {
    /// Columns are east, north, up: maps local ENU components to ECEF.
    pub fn to_ecef_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&[self.east, self.north, self.up])
    }
}

pub fn local_enu_frame(g: &GeodeticCoord, _e: &EllipsoidModel) -> EnuFrame {
    let (sin_lat, cos_lat) = g.latitude_rad.sin_cos();
    let (sin_lon, cos_lon) = g.longitude_rad.sin_cos();
    EnuFrame {
        east: Vector3::new(-sin_lon, cos_lon, 0.0),
        north: Vector3::new(-sin_lat * cos_lon, -sin_lat * sin_lon, cos_lat),
        up: Vector3::new(cos_lat * cos_lon, cos_lat * sin_lon, sin_lat),
    }
}

fn check_axis(name: &str, axis: &[f64]) -> Result<(), GeodesyError> {
    if axis.is_empty() {
        return Err(GeodesyError::InvalidGrid(format!("{name} axis is empty")));
    }
    if axis.iter().any(|v| !v.is_finite()) {
        return Err(GeodesyError::InvalidGrid(format!("{name} axis has non-finite node")));
    }
    if axis.windows(2).any(|w| w[1] <= w[0]) {
        return Err(GeodesyError::InvalidGrid(format!("{name} axis is not strictly increasing")));
    }
    Ok(())
}

/// Index of the cell containing `x` and the fractional position inside it.
/// Single-node axes are treated as constant.
fn locate(axis: &[f64], x: f64) -> Option<(usize, f64)> {
    if axis.len() == 1 {
        return Some((0, 0.0));
    }
    let (lo, hi) = (axis[0], axis[axis.len() - 1]);
    if !(x >= lo && x <= hi) {
        return None;
    }
    let i = match axis.partition_point(|v| *v <= x) {
        0 => 0,
        n if n >= axis.len() => axis.len() - 2,
        n => n - 1,
    };
    let frac = (x - axis[i]) / (axis[i + 1] - axis[i]);
    Some((i, frac))
}

fn locate_clamped(axis: &[f64], x: f64) -> (usize, f64) {
    let x = x.clamp(axis[0], axis[axis.len() - 1]);
    locate(axis, x).unwrap_or((0, 0.0))
}

/// Gridded terrain heights above the ellipsoid over (latitude, longitude),
/// interpolated bilinearly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerrainMap {
    pub latitudes_rad: Vec<f64>,
    pub longitudes_rad: Vec<f64>,
    /// Row-major: `heights_m[i][j]` is at `(latitudes_rad[i], longitudes_rad[j])`.
    pub heights_m: Vec<Vec<f64>>,
    #[serde(default)]
    pub epoch_s: f64,
}

impl TerrainMap {
    pub fn new(
        latitudes_rad: Vec<f64>,
        longitudes_rad: Vec<f64>,
        heights_m: Vec<Vec<f64>>,
        epoch_s: f64,
    ) -> Result<Self, GeodesyError> {
        let m = TerrainMap { latitudes_rad, longitudes_rad, heights_m, epoch_s };
        m.validate()?;
        Ok(m)
    }

    /// A constant-height map covering the whole globe.
    pub fn flat(height_m: f64) -> Self {
        TerrainMap {
            latitudes_rad: vec![-PI / 2.0, PI / 2.0],
            longitudes_rad: vec![-PI, PI],
            heights_m: vec![vec![height_m; 2]; 2],
            epoch_s: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), GeodesyError> {
        check_axis("latitude", &self.latitudes_rad)?;
        check_axis("longitude", &self.longitudes_rad)?;
        if self.latitudes_rad.len() < 2 || self.longitudes_rad.len() < 2 {
            return Err(GeodesyError::InvalidGrid("terrain needs at least 2 nodes per axis".into()));
        }
        if self.heights_m.len() != self.latitudes_rad.len()
            || self.heights_m.iter().any(|row| row.len() != self.longitudes_rad.len())
        {
            return Err(GeodesyError::InvalidGrid("height grid shape does not match axes".into()));
        }
        if self.heights_m.iter().flatten().any(|h| !h.is_finite()) {
            return Err(GeodesyError::InvalidGrid("non-finite terrain height".into()));
        }
        Ok(())
    }

    /// Bilinear terrain height. The map is static, so `_t` only documents the query time.
    pub fn height_at(&self, latitude_rad: f64, longitude_rad: f64, _t: f64) -> Result<f64, GeodesyError> {
        let outside = || GeodesyError::OutsideMapCoverage { latitude_rad, longitude_rad };
        let (i, u) = locate(&self.latitudes_rad, latitude_rad).ok_or_else(outside)?;
        let (j, v) = locate(&self.longitudes_rad, longitude_rad).ok_or_else(outside)?;
        let h = &self.heights_m;
        let h00 = h[i][j];
        let h01 = h[i][j + 1];
        let h10 = h[i + 1][j];
        let h11 = h[i + 1][j + 1];
        Ok(h00 * (1.0 - u) * (1.0 - v) + h01 * (1.0 - u) * v + h10 * u * (1.0 - v) + h11 * u * v)
    }
}

pub fn terrain_height_at(m: &TerrainMap, latitude_rad: f64, longitude_rad: f64, t: f64) -> Result<f64, GeodesyError> {
    m.height_at(latitude_rad, longitude_rad, t)
}

/// Point sample of the propagation medium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtmosphereSample {
    pub extinction_per_km: f64,
    pub background_radiance: f64,
}

/// Gridded extinction coefficient and background radiance over
/// (altitude, latitude, longitude). Queries outside the grid clamp to the hull.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtmosphereModel {
    pub altitudes_m: Vec<f64>,
    pub latitudes_rad: Vec<f64>,
    pub longitudes_rad: Vec<f64>,
    /// Indexed `[altitude][latitude][longitude]`, 1/km.
    pub extinction_per_km: Vec<Vec<Vec<f64>>>,
    /// Indexed `[altitude][latitude][longitude]`, normalized units.
    pub background_radiance: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    pub epoch_s: f64,
}

impl AtmosphereModel {
    pub fn uniform(extinction_per_km: f64, background_radiance: f64) -> Self {
        AtmosphereModel {
            altitudes_m: vec![0.0],
            latitudes_rad: vec![0.0],
            longitudes_rad: vec![0.0],
            extinction_per_km: vec![vec![vec![extinction_per_km]]],
            background_radiance: vec![vec![vec![background_radiance]]],
            epoch_s: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), GeodesyError> {
        check_axis("altitude", &self.altitudes_m)?;
        check_axis("latitude", &self.latitudes_rad)?;
        check_axis("longitude", &self.longitudes_rad)?;
        for (name, field) in [("extinction", &self.extinction_per_km), ("radiance", &self.background_radiance)] {
            let shape_ok = field.len() == self.altitudes_m.len()
                && field.iter().all(|plane| {
                    plane.len() == self.latitudes_rad.len()
                        && plane.iter().all(|row| row.len() == self.longitudes_rad.len())
                });
            if !shape_ok {
                return Err(GeodesyError::InvalidGrid(format!("{name} grid shape does not match axes")));
            }
            if field.iter().flatten().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(GeodesyError::InvalidGrid(format!("{name} values must be finite and >= 0")));
            }
        }
        Ok(())
    }

    fn trilinear(&self, field: &[Vec<Vec<f64>>], g: &GeodeticCoord) -> f64 {
        let (i, u) = locate_clamped(&self.altitudes_m, g.altitude_m);
        let (j, v) = locate_clamped(&self.latitudes_rad, g.latitude_rad);
        let (k, w) = locate_clamped(&self.longitudes_rad, g.longitude_rad);
        let at = |di: usize, dj: usize, dk: usize| {
            let ii = (i + di).min(self.altitudes_m.len() - 1);
            let jj = (j + dj).min(self.latitudes_rad.len() - 1);
            let kk = (k + dk).min(self.longitudes_rad.len() - 1);
            field[ii][jj][kk]
        };
        let mut acc = 0.0;
        for (di, fu) in [(0, 1.0 - u), (1, u)] {
            for (dj, fv) in [(0, 1.0 - v), (1, v)] {
                for (dk, fw) in [(0, 1.0 - w), (1, w)] {
                    let weight = fu * fv * fw;
                    if weight != 0.0 {
                        acc += weight * at(di, dj, dk);
                    }
                }
            }
        }
        acc
    }

    pub fn sample(&self, g: &GeodeticCoord, _t: f64) -> AtmosphereSample {
        AtmosphereSample {
            extinction_per_km: self.trilinear(&self.extinction_per_km, g),
            background_radiance: self.trilinear(&self.background_radiance, g),
        }
    }

    /// Optical depth (dimensionless) along the straight segment `from -> to`,
    /// by 16-point midpoint quadrature of the extinction field.
    pub fn path_optical_depth(&self, from: &EcefVector, to: &EcefVector, e: &EllipsoidModel, t: f64) -> f64 {
        const SAMPLES: usize = 16;
        let length_km = (to - from).norm() / 1000.0;
        let mut sum = 0.0;
        for s in 0..SAMPLES {
            let frac = (s as f64 + 0.5) / SAMPLES as f64;
            let p = from + (to - from) * frac;
            if let Ok(g) = ecef_to_geodetic(&p, e) {
                sum += self.sample(&g, t).extinction_per_km;
            }
        }
        sum / SAMPLES as f64 * length_km
    }
}

impl Default for AtmosphereModel {
    fn default() -> Self {
        Self::uniform(0.0, 0.0)
    }
}

/// Map and medium bundled for filter and measurement queries.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Environment {
    #[serde(default)]
    pub ellipsoid: EllipsoidModel,
    #[serde(default)]
    pub terrain: Option<TerrainMap>,
    #[serde(default)]
    pub atmosphere: Option<AtmosphereModel>,
}

impl Environment {
    /// Height of the point above local terrain; the bare ellipsoid stands in
    /// for terrain where no map is loaded or the map does not cover the point.
    pub fn height_above_terrain(&self, r: &EcefVector, t: f64) -> Option<f64> {
        let g = ecef_to_geodetic(r, &self.ellipsoid).ok()?;
        let ground = match &self.terrain {
            Some(m) => m.height_at(g.latitude_rad, g.longitude_rad, t).unwrap_or(0.0),
            None => 0.0,
        };
        Some(g.altitude_m - ground)
    }
}
