//! Track parametrization, detector geometry and hit-track distances.
//!
//! A track is a straight line through the origin described by two angles
//! `(theta, phi)` with direction vector
//! `(sin θ, cos θ sin φ, cos θ cos φ)`. The detector is a stack of annular
//! layers perpendicular to the beam (z) axis.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RetinaError};

/// Straight-line track through the origin, two-angle parametrization.
///
/// The trajectory is `x(t) = t sin θ`, `y(t) = t cos θ sin φ`,
/// `z(t) = t cos θ cos φ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackParams {
    /// Signed tilt of the x-direction component, in radians, in [-π/2, π/2].
    pub theta: f64,
    /// Orientation in the y-z mix, in radians, normalized to (-π, π].
    pub phi: f64,
}

impl TrackParams {
    pub fn new(theta: f64, phi: f64) -> Self {
        Self {
            theta,
            phi: normalize_angle(phi),
        }
    }

    /// Unit direction vector `(sin θ, cos θ sin φ, cos θ cos φ)`.
    pub fn direction(&self) -> [f64; 3] {
        params_to_direction(*self)
    }

    /// Angle in radians between the direction vectors of two tracks.
    ///
    /// Parametrization-independent metric used for matching and clustering.
    pub fn angular_distance(&self, other: &TrackParams) -> f64 {
        let a = self.direction();
        let b = other.direction();
        let dot = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).clamp(-1.0, 1.0);
        dot.acos()
    }
}

/// Normalize an angle to (-π, π].
pub fn normalize_angle(phi: f64) -> f64 {
    let mut a = phi.rem_euclid(2.0 * std::f64::consts::PI);
    if a > std::f64::consts::PI {
        a -= 2.0 * std::f64::consts::PI;
    }
    a
}

/// Stack of annular detector layers perpendicular to the z axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorGeometry {
    /// z-position of each layer in mm, strictly increasing, all positive.
    pub layer_z: Vec<f64>,
    /// Inner radius of the annular active area, mm.
    pub r_inner: f64,
    /// Outer radius of the annular active area, mm.
    pub r_outer: f64,
}

impl DetectorGeometry {
    /// Default model: 20 equally spaced layers from 35 mm to 700 mm,
    /// annulus radii 8 mm and 42 mm.
    pub fn svelo_default() -> Self {
        let n = 20;
        let spacing = 700.0 / n as f64;
        Self {
            layer_z: (1..=n).map(|k| k as f64 * spacing).collect(),
            r_inner: 8.0,
            r_outer: 42.0,
        }
    }

    pub fn n_layers(&self) -> usize {
        self.layer_z.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_z.is_empty() {
            return Err(RetinaError::Config("geometry has no layers".into()));
        }
        if !self.layer_z.windows(2).all(|w| w[0] < w[1]) || self.layer_z[0] <= 0.0 {
            return Err(RetinaError::Config(
                "layer z-positions must be strictly increasing and positive".into(),
            ));
        }
        if !(self.r_inner > 0.0 && self.r_inner < self.r_outer) {
            return Err(RetinaError::Config(
                "annulus radii must satisfy 0 < r_inner < r_outer".into(),
            ));
        }
        Ok(())
    }
}

/// Truth provenance of a hit. Never consulted by reconstruction code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HitTruth {
    Noise,
    Track(u32),
}

/// A spatial measurement on a detector layer.
///
/// `z` equals the layer's z-position exactly; measurement error applies
/// only to `x` and `y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub layer_index: usize,
    pub truth: HitTruth,
}

/// Reconstruction-facing view of a hit: position only, no truth label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HitPos {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl From<&Hit> for HitPos {
    fn from(h: &Hit) -> Self {
        HitPos {
            x: h.x,
            y: h.y,
            z: h.z,
        }
    }
}

/// Line in the 2D toy model: `x = offset + y · tan(angle)`, with hits
/// measured in x on horizontal detector planes at fixed y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line2D {
    /// Angle to the horizontal, radians, in (-π/2, π/2).
    pub angle: f64,
    /// x-intercept, model units.
    pub offset: f64,
}

/// Convert pseudo-rapidity to polar angle: `θ = 2·atan(exp(-η))`.
pub fn eta_to_polar(eta: f64) -> f64 {
    2.0 * (-eta).exp().atan()
}

/// Convert a forward unit direction to track parameters.
///
/// `θ = asin(d_x)`, `φ = atan2(d_y, d_z)`.
pub fn direction_to_params(d: [f64; 3]) -> Result<TrackParams> {
    let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(RetinaError::InvalidInput(format!(
            "direction is not unit-norm (|d| = {norm})"
        )));
    }
    if d[2] <= 0.0 {
        return Err(RetinaError::InvalidInput(
            "direction is not forward-going (d_z <= 0)".into(),
        ));
    }
    Ok(TrackParams {
        theta: d[0].clamp(-1.0, 1.0).asin(),
        phi: d[1].atan2(d[2]),
    })
}

/// Direction vector of a track: `(sin θ, cos θ sin φ, cos θ cos φ)`.
pub fn params_to_direction(p: TrackParams) -> [f64; 3] {
    let (st, ct) = p.theta.sin_cos();
    let (sp, cp) = p.phi.sin_cos();
    [st, ct * sp, ct * cp]
}

/// Intersection of a track with the plane `z = layer_z`.
///
/// Solves `t` from `z(t) = layer_z` and returns `(x(t), y(t))`.
pub fn intersect_layer(p: TrackParams, layer_z: f64) -> Result<(f64, f64)> {
    let dz = p.theta.cos() * p.phi.cos();
    if dz <= 0.0 {
        return Err(RetinaError::NoIntersection);
    }
    let t = layer_z / dz;
    Ok((t * p.theta.sin(), t * p.theta.cos() * p.phi.sin()))
}

/// Euclidean distance in the layer plane between a hit and the track's
/// intersection with that layer.
pub fn hit_track_distance(hit: &HitPos, p: TrackParams) -> Result<f64> {
    let (ix, iy) = intersect_layer(p, hit.z)?;
    Ok(((hit.x - ix).powi(2) + (hit.y - iy).powi(2)).sqrt())
}

/// Distance in x between a 2D hit and a toy-model line, measured within
/// the hit's detector plane.
pub fn line2d_distance(hit_x: f64, hit_y: f64, line: &Line2D) -> f64 {
    (hit_x - (line.offset + hit_y * line.angle.tan())).abs()
}
