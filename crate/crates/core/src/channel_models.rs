//! Pure line-of-sight channel constructions.
//!
//! Three channel objects cover the whole system:
//!
//! 1. [`gu_channel`]: downlink vector to a ground user, amplitude `β₀/d`
//!    times the array steering vector toward the user.
//! 2. [`wiretap_channel`]: the effective channel toward the eavesdropping
//!    UAV after it applies maximum-ratio combining; same LoS structure, with
//!    the receive-array factor carried separately in the link metrics.
//! 3. [`roundtrip_gain`]: scalar echo amplitude of the radar path, combining
//!    the reflection coefficient of the target with two-way path loss.
//!
//! [`channel_correlation`] is the scheduler's alignment measure between a
//! user channel and the (estimated) wiretap channel.
//!
//! # Example
//!
//! ```
//! use isac_core::channel_models::{gu_channel, LinkBudget};
//! use isac_core::core_geometry::{UpaLayout, Vec3};
//!
//! let budget = LinkBudget::validated(10f64.powf(-2.5), 0.1, 1e4, 1e-12, 1e-12, 1e-12).unwrap();
//! let layout = UpaLayout::half_wavelength(4, 4, 0.1).unwrap();
//! let h = gu_channel(&budget, &layout, &Vec3::new(0.0, 0.0, 100.0), &Vec3::zeros()).unwrap();
//! let expected = budget.beta0 * (layout.elements() as f64).sqrt() / 100.0;
//! assert!((h.coefficients.norm() - expected).abs() < 1e-12 * expected);
//! ```

use nalgebra::DVector;
use num_complex::Complex64;
use thiserror::Error;

use crate::core_geometry::{aod_angles, steering_vector, AnglePair, GeometryError, UpaLayout, Vec3};

/// Errors from channel construction.
#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    /// Underlying geometry was degenerate (coincident endpoints).
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    /// A correlation was requested against a zero-norm vector.
    #[error("channel correlation undefined for zero-norm input")]
    ZeroNorm,
    /// A link-budget field violated positivity.
    #[error("invalid link budget: {0}")]
    InvalidBudget(&'static str),
}

/// A LoS channel vector together with the geometry that generated it.
#[derive(Debug, Clone)]
pub struct ChannelVec {
    /// Complex coefficients, length = transmit-array size.
    pub coefficients: DVector<Complex64>,
    /// Endpoint distance in meters.
    pub distance: f64,
    /// Departure angles used for the steering vector.
    pub angles: AnglePair,
}

/// Scalar gains and noise powers of the radio links.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    /// Linear channel amplitude at 1 m reference distance.
    pub beta0: f64,
    /// Radar cross-section of the tracked UAV, m².
    pub rcs: f64,
    /// Matched-filter processing gain.
    pub mf_gain: f64,
    /// Ground-user receiver noise power, W.
    pub noise_gu: f64,
    /// Eavesdropper (per-antenna) noise power, W.
    pub noise_eve: f64,
    /// Radar receiver noise power, W.
    pub noise_radar: f64,
}

impl LinkBudget {
    /// Builds a budget, rejecting non-positive entries.
    pub fn validated(
        beta0: f64,
        rcs: f64,
        mf_gain: f64,
        noise_gu: f64,
        noise_eve: f64,
        noise_radar: f64,
    ) -> Result<Self, ChannelError> {
        let budget = Self { beta0, rcs, mf_gain, noise_gu, noise_eve, noise_radar };
        budget.validate()?;
        Ok(budget)
    }

    /// Checks that every field is strictly positive and finite.
    pub fn validate(&self) -> Result<(), ChannelError> {
        let fields = [
            (self.beta0, "beta0"),
            (self.rcs, "rcs"),
            (self.mf_gain, "mf_gain"),
            (self.noise_gu, "noise_gu"),
            (self.noise_eve, "noise_eve"),
            (self.noise_radar, "noise_radar"),
        ];
        for (value, name) in fields {
            if !(value > 0.0) || !value.is_finite() {
                return Err(ChannelError::InvalidBudget(name));
            }
        }
        Ok(())
    }
}

/// LoS channel determined by distance and departure angles alone.
///
/// This is the shared constructor behind [`gu_channel`], [`wiretap_channel`],
/// and the tracker-side channel prediction: amplitude `β₀/d` on the steering
/// vector for the given direction.
pub fn los_channel(budget: &LinkBudget, layout: &UpaLayout, distance: f64, angles: &AnglePair) -> ChannelVec {
    let amplitude = Complex64::new(budget.beta0 / distance, 0.0);
    let coefficients = steering_vector(layout, angles) * amplitude;
    ChannelVec { coefficients, distance, angles: *angles }
}

/// Downlink channel from the transmitter at `q_b` to the ground user at `q_k`.
pub fn gu_channel(
    budget: &LinkBudget,
    layout: &UpaLayout,
    q_b: &Vec3,
    q_k: &Vec3,
) -> Result<ChannelVec, ChannelError> {
    let angles = aod_angles(q_b, q_k)?;
    Ok(los_channel(budget, layout, (q_b - q_k).norm(), &angles))
}

/// Effective wiretap channel toward the eavesdropping UAV at `q_e`.
///
/// Identical LoS structure to [`gu_channel`]; the eavesdropper's combining
/// gain enters through the link metrics, never as a materialized matrix.
pub fn wiretap_channel(
    budget: &LinkBudget,
    layout: &UpaLayout,
    q_b: &Vec3,
    q_e: &Vec3,
) -> Result<ChannelVec, ChannelError> {
    gu_channel(budget, layout, q_b, q_e)
}

/// Scalar amplitude of the radar echo path at range `d_e`.
///
/// Reflection coefficient `√(ϑ/(4π d²))` times the two-way spreading factor
/// `β₀/(2d)`; its square carries the `1/d⁴` law of the matched-filter SNR.
pub fn roundtrip_gain(budget: &LinkBudget, d_e: f64) -> f64 {
    let reflection = (budget.rcs / (4.0 * std::f64::consts::PI * d_e * d_e)).sqrt();
    reflection * budget.beta0 / (2.0 * d_e)
}

/// Normalized alignment `|a^H b| / (‖a‖‖b‖)` between two channels, in [0, 1].
pub fn channel_correlation(a: &ChannelVec, b: &ChannelVec) -> Result<f64, ChannelError> {
    let na = a.coefficients.norm();
    let nb = b.coefficients.norm();
    if na == 0.0 || nb == 0.0 {
        return Err(ChannelError::ZeroNorm);
    }
    let inner = a.coefficients.dotc(&b.coefficients).norm();
    Ok((inner / (na * nb)).min(1.0))
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
