//! Coordinates, kinematics, angles of departure, and UPA steering vectors.
//!
//! Everything downstream (channels, tracking, navigation, precoding) is built
//! on the primitives here:
//!
//! 1. [`Vec3`] / [`KinematicState`] describe positions and velocities in a
//!    local east-north-up frame, meters and seconds throughout.
//! 2. [`aod_angles`] maps a displacement to azimuth/elevation angles of
//!    departure; [`displacement_from_aod`] is its inverse on the half-space
//!    the simulator operates in.
//! 3. [`steering_vector`] evaluates the planar-array phase profile for a
//!    departure direction.
//! 4. [`kinematic_propagate`] advances a constant-acceleration point mass by
//!    whole slots.
//!
//! # Example
//!
//! ```
//! use isac_core::core_geometry::{aod_angles, steering_vector, UpaLayout, Vec3};
//!
//! let layout = UpaLayout::half_wavelength(4, 4, 0.1).unwrap();
//! let angles = aod_angles(&Vec3::new(0.0, 0.0, 75.0), &Vec3::new(30.0, 40.0, 50.0)).unwrap();
//! let a = steering_vector(&layout, &angles);
//! assert_eq!(a.len(), 16);
//! assert!((a[0].norm() - 1.0).abs() < 1e-12);
//! ```

use nalgebra::{DVector, SVector, Vector3};
use num_complex::Complex64;
use thiserror::Error;

/// Position, velocity, or acceleration in the local frame (m, m/s, m/s²).
pub type Vec3 = Vector3<f64>;

/// Stacked position/velocity vector in the order used by the tracker.
pub type StateVector = SVector<f64, 6>;

/// Errors from geometric constructions.
#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    /// Angles of departure are undefined between coincident points.
    #[error("angles of departure undefined for coincident points")]
    CoincidentPoints,
    /// A UPA layout violated its structural invariants.
    #[error("invalid UPA layout: {0}")]
    InvalidLayout(&'static str),
}

/// Position and velocity of a vehicle at one slot boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicState {
    /// Position in meters.
    pub position: Vec3,
    /// Velocity in meters per second.
    pub velocity: Vec3,
}

impl KinematicState {
    /// State with the given position and zero velocity.
    pub fn at_rest(position: Vec3) -> Self {
        Self { position, velocity: Vec3::zeros() }
    }

    /// Stacks the state as `[position; velocity]`.
    pub fn to_vector(&self) -> StateVector {
        StateVector::from_iterator(self.position.iter().chain(self.velocity.iter()).copied())
    }

    /// Rebuilds a state from the `[position; velocity]` stacking.
    pub fn from_vector(v: &StateVector) -> Self {
        Self {
            position: Vec3::new(v[0], v[1], v[2]),
            velocity: Vec3::new(v[3], v[4], v[5]),
        }
    }
}

/// Azimuth/elevation angle-of-departure pair, radians, each in [−π/2, π/2].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnglePair {
    /// Azimuth: arcsin of (east displacement / horizontal range).
    pub azimuth: f64,
    /// Elevation: arcsin of (up displacement / range).
    pub elevation: f64,
}

/// Geometry of a rectangular uniform planar array.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpaLayout {
    /// Element count along the row axis.
    pub rows: usize,
    /// Element count along the column axis.
    pub cols: usize,
    /// Inter-element spacing in meters.
    pub spacing: f64,
    /// Carrier wavelength in meters.
    pub wavelength: f64,
}

impl UpaLayout {
    /// Validates and builds an arbitrary layout.
    pub fn new(rows: usize, cols: usize, spacing: f64, wavelength: f64) -> Result<Self, GeometryError> {
        if rows < 1 || cols < 1 {
            return Err(GeometryError::InvalidLayout("element counts must be at least 1"));
        }
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(GeometryError::InvalidLayout("spacing must be positive and finite"));
        }
        if !(wavelength > 0.0) || !wavelength.is_finite() {
            return Err(GeometryError::InvalidLayout("wavelength must be positive and finite"));
        }
        Ok(Self { rows, cols, spacing, wavelength })
    }

    /// Standard half-wavelength-spaced layout (avoids grating lobes).
    pub fn half_wavelength(rows: usize, cols: usize, wavelength: f64) -> Result<Self, GeometryError> {
        Self::new(rows, cols, wavelength / 2.0, wavelength)
    }

    /// Total number of elements.
    pub fn elements(&self) -> usize {
        self.rows * self.cols
    }
}

/// Euclidean distance between two points, meters.
pub fn distance(a: &Vec3, b: &Vec3) -> f64 {
    (a - b).norm()
}

/// Angles of departure of the ray `from → to`.
///
/// Azimuth is measured against the horizontal range, elevation against the
/// full range; both arcsine arguments are clamped to [−1, 1] to absorb
/// floating-point drift. Zero horizontal separation has no defined azimuth
/// and maps to 0 by convention (it only ever multiplies a zero factor).
pub fn aod_angles(from: &Vec3, to: &Vec3) -> Result<AnglePair, GeometryError> {
    let delta = to - from;
    let range = delta.norm();
    if range == 0.0 {
        return Err(GeometryError::CoincidentPoints);
    }
    let horizontal = delta.x.hypot(delta.y);
    let azimuth = if horizontal == 0.0 {
        0.0
    } else {
        (delta.x / horizontal).clamp(-1.0, 1.0).asin()
    };
    let elevation = (delta.z / range).clamp(-1.0, 1.0).asin();
    Ok(AnglePair { azimuth, elevation })
}

/// Inverse of [`aod_angles`] on the north half-space (`Δy ≥ 0`).
///
/// Rebuilds the displacement from the sine components and the range; both
/// cosines are taken non-negative, matching the half-space the tracker and
/// the scenario generator operate in.
pub fn displacement_from_aod(sin_azimuth: f64, sin_elevation: f64, range: f64) -> Vec3 {
    let sin_az = sin_azimuth.clamp(-1.0, 1.0);
    let sin_el = sin_elevation.clamp(-1.0, 1.0);
    let cos_el = (1.0 - sin_el * sin_el).max(0.0).sqrt();
    let cos_az = (1.0 - sin_az * sin_az).max(0.0).sqrt();
    let horizontal = range * cos_el;
    Vec3::new(horizontal * sin_az, horizontal * cos_az, range * sin_el)
}

/// Steering vector of a rectangular UPA toward a departure direction.
///
/// Kronecker product of the row-axis factor (phase step proportional to
/// `cos φ · sin θ`) and the column-axis factor (step proportional to
/// `cos φ · cos θ`); every entry has unit modulus.
pub fn steering_vector(layout: &UpaLayout, angles: &AnglePair) -> DVector<Complex64> {
    let wave_number = 2.0 * std::f64::consts::PI * layout.spacing / layout.wavelength;
    let cos_el = angles.elevation.cos();
    let row_step = wave_number * cos_el * angles.azimuth.sin();
    let col_step = wave_number * cos_el * angles.azimuth.cos();
    let mut out = DVector::from_element(layout.elements(), Complex64::new(0.0, 0.0));
    let mut idx = 0;
    for l in 0..layout.rows {
        let row_phase = -row_step * l as f64;
        for m in 0..layout.cols {
            let phase = row_phase - col_step * m as f64;
            out[idx] = Complex64::from_polar(1.0, phase);
            idx += 1;
        }
    }
    out
}

/// Advances a constant-acceleration state by `l + 1` slots of length `delta`.
///
/// Velocity gains `accel · (l+1) · δ`; position gains the old velocity term
/// plus the quadratic acceleration term `½ · accel · ((l+1) · δ)²`.
pub fn kinematic_propagate(state: &KinematicState, accel: &Vec3, l: usize, delta: f64) -> KinematicState {
    let t = (l as f64 + 1.0) * delta;
    KinematicState {
        position: state.position + state.velocity * t + accel * (0.5 * t * t),
        velocity: state.velocity + accel * t,
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
