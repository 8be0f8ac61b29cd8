//! Scalar link-performance formulas shared by the allocator, the tracker,
//! and the reporting layer.
//!
//! 1. [`downlink_rate`]: per-user spectral efficiency under multi-user
//!    interference and artificial noise.
//! 2. [`leakage_rate`]: what the eavesdropper can decode of one user's
//!    stream, with its combining gain and AN-only interference (worst case:
//!    inter-user interference at the eavesdropper is assumed cancelled).
//! 3. [`mf_snr`]: matched-filter output SNR of the radar echo.
//! 4. [`measurement_variances`]: the SNR-driven diagonal noise model of the
//!    (delay, Doppler, sin-azimuth, sin-elevation) measurement.
//!
//! # Example
//!
//! ```
//! use isac_core::link_metrics::{measurement_variances, NoiseVarModel};
//!
//! let model = NoiseVarModel { c_tau: 1e-6, c_nu: 50.0, c_theta: 0.1, c_phi: 0.1 };
//! let v = measurement_variances(&model, 2.0, 0.0, 0.0);
//! assert_eq!(v[0], 5e-7);
//! assert_eq!(v[1], 25.0);
//! ```

use nalgebra::{DVector, Vector4};
use num_complex::Complex64;
use thiserror::Error;

use crate::channel_models::{ChannelVec, LinkBudget};
use crate::core_geometry::{steering_vector, AnglePair, UpaLayout};

/// SNR below this floor is clamped before dividing noise constants, keeping
/// the tracker's update defined when the AN beam misses the target.
pub const SNR_FLOOR: f64 = 1e-9;

/// Errors from precoder-set construction.
#[derive(Debug, Error, PartialEq)]
pub enum PrecoderError {
    /// A scheduled user is missing its precoder, or an unscheduled one has it.
    #[error("schedule and precoder presence disagree at user {0}")]
    ScheduleMismatch(usize),
    /// Mismatched vector lengths.
    #[error("precoder length disagrees with the AN precoder at user {0}")]
    LengthMismatch(usize),
}

/// Scheduling flags, per-user precoders, and the artificial-noise precoder
/// for one slot.
#[derive(Debug, Clone)]
pub struct PrecoderSet {
    /// Scheduling flag per user.
    pub schedule: Vec<bool>,
    /// Information precoder per user; present exactly where scheduled.
    pub info: Vec<Option<DVector<Complex64>>>,
    /// Artificial-noise precoder.
    pub an: DVector<Complex64>,
}

impl PrecoderSet {
    /// All-off set: nobody scheduled, AN precoder zero.
    pub fn idle(num_users: usize, array_size: usize) -> Self {
        Self {
            schedule: vec![false; num_users],
            info: vec![None; num_users],
            an: DVector::from_element(array_size, Complex64::new(0.0, 0.0)),
        }
    }

    /// Checks schedule/precoder presence and length consistency.
    pub fn validate(&self) -> Result<(), PrecoderError> {
        for (k, (flag, w)) in self.schedule.iter().zip(&self.info).enumerate() {
            if *flag != w.is_some() {
                return Err(PrecoderError::ScheduleMismatch(k));
            }
            if let Some(w) = w {
                if w.len() != self.an.len() {
                    return Err(PrecoderError::LengthMismatch(k));
                }
            }
        }
        Ok(())
    }

    /// Total transmit power `Σ‖w_k‖² + ‖w_e‖²`, W.
    pub fn total_power(&self) -> f64 {
        let info: f64 = self.info.iter().flatten().map(|w| w.norm_squared()).sum();
        info + self.an.norm_squared()
    }

    /// Number of scheduled users.
    pub fn num_scheduled(&self) -> usize {
        self.schedule.iter().filter(|s| **s).count()
    }
}

/// Positive constants of the inverse-SNR measurement-noise model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseVarModel {
    /// Delay-variance constant, s²·SNR.
    pub c_tau: f64,
    /// Doppler-variance constant, Hz²·SNR.
    pub c_nu: f64,
    /// Azimuth-variance constant, rad²·SNR.
    pub c_theta: f64,
    /// Elevation-variance constant, rad²·SNR.
    pub c_phi: f64,
}

impl NoiseVarModel {
    /// Checks strict positivity of every constant.
    pub fn validate(&self) -> Result<(), &'static str> {
        for v in [self.c_tau, self.c_nu, self.c_theta, self.c_phi] {
            if !(v > 0.0) || !v.is_finite() {
                return Err("noise-variance constants must be positive and finite");
            }
        }
        Ok(())
    }
}

fn gain(h: &ChannelVec, w: &DVector<Complex64>) -> f64 {
    h.coefficients.dotc(w).norm_sqr()
}

/// Achievable downlink rate of user `k`, bit/s/Hz.
///
/// Unscheduled users get 0. Interference counts every other scheduled user's
/// beam plus the AN beam.
pub fn downlink_rate(k: usize, channels: &[ChannelVec], prec: &PrecoderSet, noise_gu: f64) -> f64 {
    if !prec.schedule[k] {
        return 0.0;
    }
    let h_k = &channels[k];
    let w_k = prec.info[k].as_ref().expect("scheduled user must carry a precoder");
    let signal = gain(h_k, w_k);
    let mut interference = 0.0;
    for (j, w) in prec.info.iter().enumerate() {
        if j == k {
            continue;
        }
        if let Some(w) = w {
            interference += gain(h_k, w);
        }
    }
    interference += gain(h_k, &prec.an);
    (1.0 + signal / (interference + noise_gu)).log2()
}

/// Leakage rate of user `k`'s stream at the eavesdropper, bit/s/Hz.
///
/// The eavesdropper's combining gain `M_e` multiplies both the intercepted
/// signal and the AN it receives; only AN and noise interfere.
pub fn leakage_rate(
    k: usize,
    h_be: &ChannelVec,
    prec: &PrecoderSet,
    noise_eve: f64,
    m_e: usize,
) -> f64 {
    if !prec.schedule[k] {
        return 0.0;
    }
    let w_k = prec.info[k].as_ref().expect("scheduled user must carry a precoder");
    let m_e = m_e as f64;
    let signal = m_e * gain(h_be, w_k);
    let denom = m_e * gain(h_be, &prec.an) + noise_eve;
    (1.0 + signal / denom).log2()
}

/// Matched-filter output SNR of the echo off the tracked UAV.
///
/// `ϑ β₀² G_MF M_b^r |a^H w_e|² / (16π σ_b² d⁴)` with `a` the transmit
/// steering vector toward the target.
pub fn mf_snr(
    budget: &LinkBudget,
    layout: &UpaLayout,
    angles: &AnglePair,
    d_e: f64,
    w_e: &DVector<Complex64>,
    m_b_r: usize,
) -> f64 {
    let a = steering_vector(layout, angles);
    let beam = a.dotc(w_e).norm_sqr();
    let numer = budget.rcs * budget.beta0 * budget.beta0 * budget.mf_gain * m_b_r as f64 * beam;
    let denom = 16.0 * std::f64::consts::PI * budget.noise_radar * d_e.powi(4);
    numer / denom
}

/// Diagonal covariance of the (τ, ν, sinθ, sinφ) measurement at the given
/// SNR, with the angle variances carrying their cos² projection factors.
///
/// SNR is clamped below at [`SNR_FLOOR`].
pub fn measurement_variances(model: &NoiseVarModel, snr: f64, theta: f64, phi: f64) -> Vector4<f64> {
    let s = snr.max(SNR_FLOOR);
    let ct = theta.cos();
    let cp = phi.cos();
    Vector4::new(
        model.c_tau / s,
        model.c_nu / s,
        ct * ct * model.c_theta / s,
        cp * cp * model.c_phi / s,
    )
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
