//! Extended Kalman filter over the tracked UAV's position/velocity state.
//!
//! The filter follows the textbook cycle, specialized to the monostatic
//! radar measurement (delay, Doppler, sin-azimuth, sin-elevation):
//!
//! 1. [`predict`]: constant-velocity transition, any number of whole slots.
//! 2. [`measurement_fn`] / [`jacobian`]: the nonlinear measurement map and
//!    its analytic 4×6 Jacobian (velocity columns are zero except for the
//!    Doppler row; the sin-azimuth row has no altitude dependence).
//! 3. [`measurement_cov_from_measurement`]: the measurement-noise covariance
//!    re-evaluated at the received measurement, which is all the receiver
//!    can know.
//! 4. [`update`]: Joseph-form update; the plain gain-form covariance and the
//!    innovation are exposed for diagnostics and cross-checks.
//! 5. [`inverse_posterior_cov`]: the information-form posterior consumed
//!    directly by the resource allocator's sensing constraints.
//!
//! # Example
//!
//! ```
//! use isac_core::core_geometry::{KinematicState, Vec3};
//! use isac_core::ekf_tracker::{measurement_fn, EvolutionModel};
//!
//! let radar = KinematicState::at_rest(Vec3::new(0.0, 0.0, 0.0));
//! let target = KinematicState::at_rest(Vec3::new(0.0, 0.0, 75.0));
//! let beta = measurement_fn(&target, &radar, 3e9, 3e8).unwrap();
//! assert_eq!(beta.tau, 2.0 * 75.0 / 3e8);
//! assert_eq!(beta.sin_phi, 1.0);
//! let model = EvolutionModel::new(1.0, 0.1, 0.01);
//! assert_eq!(model.transition[(0, 3)], 1.0);
//! ```

use nalgebra::{Matrix4, Matrix6, SMatrix, Vector4, Vector6};
use num_complex::Complex64;
use thiserror::Error;

use crate::channel_models::LinkBudget;
use crate::core_geometry::{displacement_from_aod, KinematicState, UpaLayout, Vec3};
use crate::link_metrics::{measurement_variances, mf_snr, NoiseVarModel};

/// Measurement Jacobian shape: four observables by six state entries.
pub type MeasJacobian = SMatrix<f64, 4, 6>;

/// Range floor (meters) used when inverting a non-physical delay.
pub const RANGE_FLOOR: f64 = 1.0;

/// Initial position variance per axis, m².
pub const INIT_POS_VAR: f64 = 100.0;
/// Initial velocity variance per axis, m²/s².
pub const INIT_VEL_VAR: f64 = 25.0;

/// Errors from filter operations.
#[derive(Debug, Error, PartialEq)]
pub enum EkfError {
    /// Measurement map undefined when radar and target coincide.
    #[error("measurement undefined for coincident radar and target")]
    CoincidentPositions,
    /// Innovation covariance was numerically singular.
    #[error("singular innovation covariance (condition number {cond:.3e})")]
    SingularInnovation {
        /// Ratio of extreme eigenvalues at failure.
        cond: f64,
    },
    /// Predicted covariance could not be inverted.
    #[error("singular predicted covariance")]
    SingularPredictedCov,
}

/// Gaussian belief over the tracked state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEstimate {
    /// Posterior mean, `[position; velocity]`.
    pub mean: Vector6<f64>,
    /// Posterior covariance, kept symmetric PSD.
    pub cov: Matrix6<f64>,
}

impl StateEstimate {
    /// Position part of the mean.
    pub fn position(&self) -> Vec3 {
        Vec3::new(self.mean[0], self.mean[1], self.mean[2])
    }

    /// Velocity part of the mean.
    pub fn velocity(&self) -> Vec3 {
        Vec3::new(self.mean[3], self.mean[4], self.mean[5])
    }

    /// Mean as a kinematic state.
    pub fn kinematics(&self) -> KinematicState {
        KinematicState { position: self.position(), velocity: self.velocity() }
    }
}

/// One radar measurement: delay, Doppler, and the two direction sines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementVec {
    /// Round-trip delay, s.
    pub tau: f64,
    /// Doppler shift, Hz.
    pub nu: f64,
    /// Sine of the azimuth angle of departure, in [−1, 1].
    pub sin_theta: f64,
    /// Sine of the elevation angle of departure, in [−1, 1].
    pub sin_phi: f64,
}

impl MeasurementVec {
    /// Builds a measurement, clamping the sine components into [−1, 1].
    pub fn new(tau: f64, nu: f64, sin_theta: f64, sin_phi: f64) -> Self {
        Self { tau, nu, sin_theta: sin_theta.clamp(-1.0, 1.0), sin_phi: sin_phi.clamp(-1.0, 1.0) }
    }

    /// Stacks the measurement as `(τ, ν, sinθ, sinφ)`.
    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.tau, self.nu, self.sin_theta, self.sin_phi)
    }
}

/// Constant-velocity evolution model with diagonal process noise.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionModel {
    /// Transition matrix `[[I, δI], [0, I]]`.
    pub transition: Matrix6<f64>,
    /// Process-noise covariance (diagonal).
    pub process_noise: Matrix6<f64>,
}

impl EvolutionModel {
    /// Builds the model for slot length `delta` with per-axis position and
    /// velocity noise variances.
    pub fn new(delta: f64, pos_var: f64, vel_var: f64) -> Self {
        let mut f = Matrix6::identity();
        for i in 0..3 {
            f[(i, i + 3)] = delta;
        }
        let mut q = Matrix6::zeros();
        for i in 0..3 {
            q[(i, i)] = pos_var;
            q[(i + 3, i + 3)] = vel_var;
        }
        Self { transition: f, process_noise: q }
    }

    /// Slot length δ encoded in the transition matrix.
    pub fn slot_length(&self) -> f64 {
        self.transition[(0, 3)]
    }
}

/// Result of one measurement update.
#[derive(Debug, Clone)]
pub struct UpdateOutcome {
    /// Posterior belief (Joseph-form covariance, symmetrized and floored).
    pub estimate: StateEstimate,
    /// Innovation `β̂ − g(α̂_pred)`.
    pub innovation: Vector4<f64>,
    /// Innovation covariance `G C G^T + Q̂`.
    pub innovation_cov: Matrix4<f64>,
    /// Plain gain-form covariance `(I − KG)·C`, before symmetrization;
    /// retained for the information-form identity check.
    pub cov_gain_form: Matrix6<f64>,
}

/// Symmetrizes and floors the eigenvalues of a covariance at zero.
pub fn sanitize_covariance(cov: &Matrix6<f64>) -> Matrix6<f64> {
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut rebuilt = Matrix6::zeros();
    for i in 0..6 {
        let lam = eig.eigenvalues[i].max(0.0);
        let v = eig.eigenvectors.column(i);
        rebuilt += lam * v * v.transpose();
    }
    (rebuilt + rebuilt.transpose()) * 0.5
}

/// Propagates a belief forward `steps ≥ 1` whole slots.
pub fn predict(est: &StateEstimate, model: &EvolutionModel, steps: usize) -> StateEstimate {
    assert!(steps >= 1, "prediction horizon must be at least one slot");
    let mut mean = est.mean;
    let mut cov = est.cov;
    for _ in 0..steps {
        mean = model.transition * mean;
        cov = model.transition * cov * model.transition.transpose() + model.process_noise;
    }
    StateEstimate { mean, cov: (cov + cov.transpose()) * 0.5 }
}

/// Noise-free measurement of the target state from the radar state.
pub fn measurement_fn(
    target: &KinematicState,
    radar: &KinematicState,
    f_c: f64,
    c: f64,
) -> Result<MeasurementVec, EkfError> {
    let delta = target.position - radar.position;
    let d = delta.norm();
    if d == 0.0 {
        return Err(EkfError::CoincidentPositions);
    }
    let dv = target.velocity - radar.velocity;
    let horizontal = delta.x.hypot(delta.y);
    let sin_theta = if horizontal == 0.0 { 0.0 } else { delta.x / horizontal };
    Ok(MeasurementVec::new(
        2.0 * d / c,
        2.0 * dv.dot(&delta) * f_c / (c * d),
        sin_theta,
        delta.z / d,
    ))
}

/// Analytic Jacobian of [`measurement_fn`] in the target state, evaluated at
/// the predicted target state.
pub fn jacobian(
    target: &KinematicState,
    radar: &KinematicState,
    f_c: f64,
    c: f64,
) -> Result<MeasJacobian, EkfError> {
    let delta = target.position - radar.position;
    let d = delta.norm();
    if d == 0.0 {
        return Err(EkfError::CoincidentPositions);
    }
    let dv = target.velocity - radar.velocity;
    let h2 = delta.x * delta.x + delta.y * delta.y;
    let h = h2.sqrt();
    let d3 = d * d * d;
    let mut g = MeasJacobian::zeros();

    // Delay row: radial direction, no velocity dependence.
    for i in 0..3 {
        g[(0, i)] = 2.0 * delta[i] / (c * d);
    }

    // Doppler row: the only row with velocity columns.
    let radial = dv.dot(&delta);
    let k = 2.0 * f_c / c;
    for i in 0..3 {
        g[(1, i)] = k * (dv[i] / d - radial * delta[i] / d3);
        g[(1, i + 3)] = k * delta[i] / d;
    }

    // Sin-azimuth row: horizontal-plane only, zero altitude column.
    if h > 0.0 {
        let h3 = h2 * h;
        g[(2, 0)] = delta.y * delta.y / h3;
        g[(2, 1)] = -delta.x * delta.y / h3;
    }

    // Sin-elevation row.
    g[(3, 0)] = -delta.z * delta.x / d3;
    g[(3, 1)] = -delta.z * delta.y / d3;
    g[(3, 2)] = h2 / d3;

    Ok(g)
}

/// Measurement-noise covariance evaluated at the received measurement.
///
/// The receiver inverts the delay into a range (floored at [`RANGE_FLOOR`]
/// if the delay is non-physical), recovers the angles from the sines, and
/// evaluates the matched-filter SNR with the deployed AN precoder.
pub fn measurement_cov_from_measurement(
    meas: &MeasurementVec,
    w_e: &nalgebra::DVector<Complex64>,
    budget: &LinkBudget,
    layout: &UpaLayout,
    m_b_r: usize,
    model: &NoiseVarModel,
    c: f64,
) -> Vector4<f64> {
    let d_hat = (c * meas.tau / 2.0).max(RANGE_FLOOR);
    let theta = meas.sin_theta.clamp(-1.0, 1.0).asin();
    let phi = meas.sin_phi.clamp(-1.0, 1.0).asin();
    let angles = crate::core_geometry::AnglePair { azimuth: theta, elevation: phi };
    let snr = mf_snr(budget, layout, &angles, d_hat, w_e, m_b_r);
    measurement_variances(model, snr, theta, phi)
}

/// One EKF measurement update.
///
/// Innovation uses the nonlinear measurement map; the covariance uses the
/// Joseph form and is symmetrized and eigenvalue-floored before returning.
pub fn update(
    pred: &StateEstimate,
    meas: &MeasurementVec,
    meas_var: &Vector4<f64>,
    radar: &KinematicState,
    f_c: f64,
    c: f64,
) -> Result<UpdateOutcome, EkfError> {
    let target = KinematicState::from_vector(&pred.mean);
    let g = jacobian(&target, radar, f_c, c)?;
    let predicted_meas = measurement_fn(&target, radar, f_c, c)?;
    let innovation = meas.to_vector() - predicted_meas.to_vector();

    let q = Matrix4::from_diagonal(meas_var);
    let s = g * pred.cov * g.transpose() + q;
    let s_sym = (s + s.transpose()) * 0.5;

    // The four components carry different units (s², Hz², dimensionless), so
    // singularity is judged and the inverse computed in correlation form.
    let mut d_inv = Vector4::zeros();
    for i in 0..4 {
        let di = s_sym[(i, i)];
        if !(di > 0.0) || !di.is_finite() {
            return Err(EkfError::SingularInnovation { cond: f64::INFINITY });
        }
        d_inv[i] = 1.0 / di.sqrt();
    }
    let scale = Matrix4::from_diagonal(&d_inv);
    let s_corr = scale * s_sym * scale;
    let eig = s_corr.symmetric_eigen();
    let max_e = eig.eigenvalues.max();
    let min_e = eig.eigenvalues.min();
    if !(min_e > 0.0) || max_e / min_e > 1e12 {
        return Err(EkfError::SingularInnovation { cond: max_e / min_e.max(f64::MIN_POSITIVE) });
    }
    let s_corr_inv = s_corr
        .try_inverse()
        .ok_or(EkfError::SingularInnovation { cond: max_e / min_e })?;
    let s_inv = scale * s_corr_inv * scale;

    let gain = pred.cov * g.transpose() * s_inv;
    let mean = pred.mean + gain * innovation;

    let i_kg = Matrix6::identity() - gain * g;
    let cov_gain_form = i_kg * pred.cov;
    let joseph = i_kg * pred.cov * i_kg.transpose() + gain * q * gain.transpose();

    Ok(UpdateOutcome {
        estimate: StateEstimate { mean, cov: sanitize_covariance(&joseph) },
        innovation,
        innovation_cov: s_sym,
        cov_gain_form,
    })
}

/// Information-form posterior `C_pred⁻¹ + G^T Q̂⁻¹ G`, the object the
/// allocator's sensing constraints are written in.
pub fn inverse_posterior_cov(
    pred_cov: &Matrix6<f64>,
    jac: &MeasJacobian,
    meas_var: &Vector4<f64>,
) -> Result<Matrix6<f64>, EkfError> {
    let chol = pred_cov
        .cholesky()
        .ok_or(EkfError::SingularPredictedCov)?;
    let prior_info = chol.inverse();
    let mut info = prior_info;
    for row in 0..4 {
        let inv_var = 1.0 / meas_var[row];
        if inv_var == 0.0 {
            continue;
        }
        let g_row = jac.row(row);
        info += g_row.transpose() * inv_var * g_row;
    }
    Ok((info + info.transpose()) * 0.5)
}

/// Builds the initial belief from a bootstrap measurement: range and angles
/// place the position, velocity starts at zero with a weak prior.
pub fn initialize_from_measurement(
    meas: &MeasurementVec,
    radar: &KinematicState,
    c: f64,
) -> StateEstimate {
    let d_hat = (c * meas.tau / 2.0).max(RANGE_FLOOR);
    let displacement = displacement_from_aod(meas.sin_theta, meas.sin_phi, d_hat);
    let position = radar.position + displacement;
    let mut mean = Vector6::zeros();
    for i in 0..3 {
        mean[i] = position[i];
    }
    let mut cov = Matrix6::zeros();
    for i in 0..3 {
        cov[(i, i)] = INIT_POS_VAR;
        cov[(i + 3, i + 3)] = INIT_VEL_VAR;
    }
    StateEstimate { mean, cov }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core_geometry::steering_vector;
    use nalgebra::SMatrix;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    const F_C: f64 = 3e9;
    const C: f64 = 3e8;

    fn state(px: f64, py: f64, pz: f64, vx: f64, vy: f64, vz: f64) -> KinematicState {
        KinematicState {
            position: Vec3::new(px, py, pz),
            velocity: Vec3::new(vx, vy, vz),
        }
    }

    fn random_geometry(rng: &mut ChaCha8Rng) -> (KinematicState, KinematicState) {
        let radar = state(
            rng.random_range(0.0..500.0),
            rng.random_range(0.0..500.0),
            rng.random_range(50.0..100.0),
            rng.random_range(-20.0..20.0),
            rng.random_range(-20.0..20.0),
            rng.random_range(-5.0..5.0),
        );
        // Keep the target well clear of the radar and off the vertical axis.
        let target = state(
            radar.position.x + rng.random_range(20.0..300.0),
            radar.position.y + rng.random_range(20.0..300.0),
            rng.random_range(50.0..100.0),
            rng.random_range(-20.0..20.0),
            rng.random_range(-20.0..20.0),
            rng.random_range(-5.0..5.0),
        );
        (target, radar)
    }

    fn random_psd_cov(rng: &mut ChaCha8Rng, scale: f64) -> Matrix6<f64> {
        let a = Matrix6::from_fn(|_, _| rng.random_range(-1.0..1.0) * scale);
        a * a.transpose() + Matrix6::identity() * 1e-3 * scale * scale
    }

    // 1. Prediction: stationary target stays put; constant velocity drifts
    //    linearly; covariance follows F·C·F^T by hand.
    #[test]
    fn predict_reference_cases() {
        let model = EvolutionModel::new(1.0, 0.0, 0.0);
        let still = StateEstimate {
            mean: Vector6::new(1.0, 2.0, 3.0, 0.0, 0.0, 0.0),
            cov: Matrix6::identity(),
        };
        let p = predict(&still, &model, 5);
        assert_eq!(p.mean.fixed_rows::<3>(0), still.mean.fixed_rows::<3>(0));

        let moving = StateEstimate {
            mean: Vector6::new(0.0, 0.0, 0.0, 1.0, 0.0, 0.0),
            cov: Matrix6::identity(),
        };
        let p3 = predict(&moving, &model, 3);
        assert_eq!(p3.mean[0], 3.0);

        let one = predict(&still, &model, 1);
        assert_eq!(one.cov[(0, 0)], 2.0);
        assert_eq!(one.cov[(0, 3)], 1.0);
        assert_eq!(one.cov[(3, 3)], 1.0);
        assert_eq!(one.cov[(0, 1)], 0.0);
    }

    // 2. Measurement map reference values.
    #[test]
    fn measurement_reference_values() {
        let radar = state(0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let target = state(90.0, 120.0, 0.0, 0.0, 0.0, 0.0);
        let m = measurement_fn(&target, &radar, F_C, C).unwrap();
        assert_eq!(m.tau, 2.0 * 150.0 / C);
        assert_eq!(m.nu, 0.0);

        let above = state(0.0, 0.0, 200.0, 3.0, -1.0, 0.5);
        let m2 = measurement_fn(&above, &radar, F_C, C).unwrap();
        assert_eq!(m2.sin_phi, 1.0);
        assert_eq!(m2.sin_theta, 0.0);

        assert_eq!(
            measurement_fn(&radar, &radar, F_C, C),
            Err(EkfError::CoincidentPositions)
        );
    }

    // 3. Doppler sign: closing velocity gives negative ν under this
    //    convention (radial rate is negative when approaching).
    #[test]
    fn doppler_sign_convention() {
        let radar = state(0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let approaching = state(100.0, 0.0, 0.0, -10.0, 0.0, 0.0);
        let m = measurement_fn(&approaching, &radar, F_C, C).unwrap();
        assert!((m.nu - 2.0 * (-10.0) * F_C / C / 1.0).abs() < 1e-9);
        assert!(m.nu < 0.0);
    }

    // 4. Analytic Jacobian matches central finite differences to 1e−5
    //    relative on 100 random geometries.
    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let (target, radar) = random_geometry(&mut rng);
            let g = jacobian(&target, &radar, F_C, C).unwrap();
            let x0 = target.to_vector();
            let eval = |x: &Vector6<f64>| {
                measurement_fn(&KinematicState::from_vector(x), &radar, F_C, C)
                    .unwrap()
                    .to_vector()
            };
            let mut fd = SMatrix::<f64, 4, 6>::zeros();
            for j in 0..6 {
                let scale = x0[j].abs().max(1.0);
                let h = 1e-4 * scale;
                // Fourth-order central stencil at step h: truncation drops
                // below the comparison tolerance at these curvatures.
                let mut x = [x0; 4];
                x[0][j] += 2.0 * h;
                x[1][j] += h;
                x[2][j] -= h;
                x[3][j] -= 2.0 * h;
                let col = (-eval(&x[0]) + 8.0 * eval(&x[1]) - 8.0 * eval(&x[2]) + eval(&x[3]))
                    / (12.0 * h);
                fd.set_column(j, &col);
            }
            for i in 0..4 {
                let row_scale = (0..6).map(|j| fd[(i, j)].abs()).fold(0.0f64, f64::max);
                for j in 0..6 {
                    let denom = fd[(i, j)].abs().max(g[(i, j)].abs()).max(1e-3 * row_scale);
                    assert!(
                        (g[(i, j)] - fd[(i, j)]).abs() <= 1e-5 * denom,
                        "entry ({i},{j}): analytic {} vs fd {}",
                        g[(i, j)],
                        fd[(i, j)]
                    );
                }
            }
        }
    }

    // 5. Jacobian zero pattern: delay/angle rows have no velocity columns,
    //    the sin-azimuth row has no altitude column.
    #[test]
    fn jacobian_zero_pattern() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let (target, radar) = random_geometry(&mut rng);
            let g = jacobian(&target, &radar, F_C, C).unwrap();
            for row in [0usize, 2, 3] {
                for col in 3..6 {
                    assert_eq!(g[(row, col)], 0.0);
                }
            }
            assert_eq!(g[(2, 2)], 0.0);
            let radial = 2.0 / C * (target.position - radar.position).normalize();
            for i in 0..3 {
                assert!((g[(0, i)] - radial[i]).abs() < 1e-15);
            }
        }
    }

    // 6. Huge measurement noise leaves the prior untouched.
    #[test]
    fn uninformative_measurement_keeps_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (target, radar) = random_geometry(&mut rng);
        let pred = StateEstimate {
            mean: target.to_vector(),
            cov: random_psd_cov(&mut rng, 3.0),
        };
        let truth = measurement_fn(&target, &radar, F_C, C).unwrap();
        let noisy = MeasurementVec::new(truth.tau * 1.1, truth.nu + 5.0, truth.sin_theta, truth.sin_phi);
        let var = Vector4::new(1e-12, 1.0, 1e-4, 1e-4) * 1e12;
        let out = update(&pred, &noisy, &var, &radar, F_C, C).unwrap();
        assert!((out.estimate.mean - pred.mean).norm() < 1e-6 * pred.mean.norm());
        assert!((out.estimate.cov - sanitize_covariance(&pred.cov)).norm() < 1e-6 * pred.cov.norm());
    }

    // 7. Update equals brute-force Gaussian conditioning (dense joint
    //    covariance, no Kalman algebra) when both use the same linearization.
    #[test]
    fn update_matches_dense_conditioning_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for _ in 0..50 {
            let (target, radar) = random_geometry(&mut rng);
            let pred = StateEstimate {
                mean: target.to_vector(),
                cov: random_psd_cov(&mut rng, 2.0),
            };
            let g = jacobian(&target, &radar, F_C, C).unwrap();
            let g0 = measurement_fn(&target, &radar, F_C, C).unwrap().to_vector();
            let var: Vector4<f64> = Vector4::new(1e-13, 25.0, 1e-3, 1e-3);

            let noise: Vector4<f64> = Vector4::from_fn(|i, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                var[i].sqrt() * z
            });
            let beta = MeasurementVec::new(
                g0[0] + noise[0],
                g0[1] + noise[1],
                g0[2] + noise[2],
                g0[3] + noise[3],
            );

            // Oracle: condition the joint Gaussian in unit-variance
            // measurement coordinates (each component divided by its σ), so
            // the noise covariance is exactly the identity and the dense
            // solve is well scaled.
            let d_inv = Matrix4::from_diagonal(&Vector4::from_fn(|i, _| 1.0 / var[i].sqrt()));
            let g_s = d_inv * g;
            let cross = pred.cov * g_s.transpose();
            let s = g_s * pred.cov * g_s.transpose() + Matrix4::identity();
            let s_inv = s.try_inverse().unwrap();
            let resid = d_inv * (beta.to_vector() - g0);
            let mean_oracle = pred.mean + cross * s_inv * resid;
            let cov_oracle = pred.cov - cross * s_inv * cross.transpose();

            let out = update(&pred, &beta, &var, &radar, F_C, C).unwrap();
            assert!((out.estimate.mean - mean_oracle).norm() <= 1e-8 * mean_oracle.norm().max(1.0));
            assert!((out.estimate.cov - cov_oracle).norm() <= 1e-8 * cov_oracle.norm());
        }
    }

    // 8. Near-perfect measurement pins the measured components: pushing the
    //    posterior through the measurement map reproduces β̂.
    #[test]
    fn near_perfect_measurement_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let (target, radar) = random_geometry(&mut rng);
        let mut pred_mean = target.to_vector();
        // Mis-predict by a few meters so the update has work to do.
        pred_mean[0] += 3.0;
        pred_mean[1] -= 2.0;
        pred_mean[2] += 1.0;
        let pred = StateEstimate { mean: pred_mean, cov: Matrix6::identity() * 50.0 };
        let truth = measurement_fn(&target, &radar, F_C, C).unwrap();
        let var = Vector4::new(1e-16, 1e-4, 1e-10, 1e-10) * 1e-6;
        let out = update(&pred, &truth, &var, &radar, F_C, C).unwrap();
        let reproduced =
            measurement_fn(&KinematicState::from_vector(&out.estimate.mean), &radar, F_C, C)
                .unwrap()
                .to_vector();
        let err = (reproduced - truth.to_vector()).norm() / truth.to_vector().norm();
        assert!(err < 1e-4, "relative reproduction error {err}");
    }

    // 9. Information-form identity: inverting the information matrix equals
    //    the gain-form posterior covariance.
    #[test]
    fn information_form_matches_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..50 {
            let (target, radar) = random_geometry(&mut rng);
            let pred = StateEstimate {
                mean: target.to_vector(),
                cov: random_psd_cov(&mut rng, 2.0),
            };
            let g = jacobian(&target, &radar, F_C, C).unwrap();
            let var = Vector4::new(1e-13, 25.0, 1e-3, 1e-3);
            let truth = measurement_fn(&target, &radar, F_C, C).unwrap();
            let out = update(&pred, &truth, &var, &radar, F_C, C).unwrap();
            let info = inverse_posterior_cov(&pred.cov, &g, &var).unwrap();
            let cov_from_info = info.try_inverse().unwrap();
            let err = (cov_from_info - out.cov_gain_form).norm() / cov_from_info.norm();
            assert!(err <= 1e-8, "identity error {err}");
        }
    }

    // 10. Information form degenerates correctly: infinite variances add
    //     nothing; scaling Q̂ by 4 scales the added term by ¼.
    #[test]
    fn information_form_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let (target, radar) = random_geometry(&mut rng);
        let cov = random_psd_cov(&mut rng, 1.5);
        let g = jacobian(&target, &radar, F_C, C).unwrap();

        let inf_var = Vector4::from_element(f64::INFINITY);
        let info = inverse_posterior_cov(&cov, &g, &inf_var).unwrap();
        let prior_info = cov.try_inverse().unwrap();
        assert!((info - (prior_info + prior_info.transpose()) * 0.5).norm() < 1e-12 * info.norm());

        let var = Vector4::new(1e-13, 25.0, 1e-3, 1e-3);
        let info1 = inverse_posterior_cov(&cov, &g, &var).unwrap();
        let info4 = inverse_posterior_cov(&cov, &g, &(var * 4.0)).unwrap();
        let added1 = info1 - info;
        let added4 = info4 - info;
        assert!((added4 * 4.0 - added1).norm() < 1e-9 * added1.norm());
    }

    // 11. Posterior trace never exceeds prior trace.
    #[test]
    fn posterior_trace_contracts() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        for _ in 0..50 {
            let (target, radar) = random_geometry(&mut rng);
            let pred = StateEstimate {
                mean: target.to_vector(),
                cov: random_psd_cov(&mut rng, 2.0),
            };
            let truth = measurement_fn(&target, &radar, F_C, C).unwrap();
            let var = Vector4::new(1e-13, 25.0, 1e-3, 1e-3);
            let out = update(&pred, &truth, &var, &radar, F_C, C).unwrap();
            assert!(out.estimate.cov.trace() <= pred.cov.trace() + 1e-9);
        }
    }

    // 12. Measurement-covariance inversion: delay scaling law and the
    //     noise-free round trip against synthesis-side variances.
    #[test]
    fn measurement_cov_roundtrip_and_scaling() {
        let budget =
            LinkBudget::validated(10f64.powf(-2.5), 0.1, 1e4, 7.943e-13, 7.943e-13, 7.943e-13)
                .unwrap();
        let layout = UpaLayout::half_wavelength(4, 4, 0.1).unwrap();
        let model = NoiseVarModel { c_tau: 1e-18, c_nu: 50.0, c_theta: 0.1, c_phi: 0.1 };
        let radar = state(250.0, 250.0, 75.0, 0.0, 0.0, 0.0);
        let target = state(350.0, 400.0, 55.0, -5.0, 3.0, 0.0);

        let angles = crate::core_geometry::aod_angles(&radar.position, &target.position).unwrap();
        let a = steering_vector(&layout, &angles);
        let w_e = &a * Complex64::new(0.2, 0.1);
        let d = (target.position - radar.position).norm();

        // Synthesis-side variances at the true geometry.
        let snr = mf_snr(&budget, &layout, &angles, d, &w_e, 16);
        let synth = measurement_variances(&model, snr, angles.azimuth, angles.elevation);

        // Receiver-side variances at the noise-free measurement.
        let truth = measurement_fn(&target, &radar, F_C, C).unwrap();
        let recovered =
            measurement_cov_from_measurement(&truth, &w_e, &budget, &layout, 16, &model, C);
        for i in 0..4 {
            assert!(
                (recovered[i] - synth[i]).abs() <= 1e-9 * synth[i],
                "component {i}: {} vs {}",
                recovered[i],
                synth[i]
            );
        }

        // Doubling the delay grows every variance 16-fold (d⁴ law).
        let double = MeasurementVec::new(2.0 * truth.tau, truth.nu, truth.sin_theta, truth.sin_phi);
        let far = measurement_cov_from_measurement(&double, &w_e, &budget, &layout, 16, &model, C);
        for i in 0..4 {
            assert!((far[i] / recovered[i] - 16.0).abs() < 1e-9);
        }

        // Non-physical delay is floored, not propagated.
        let bogus = MeasurementVec::new(-1.0, 0.0, 0.3, 0.2);
        let floored =
            measurement_cov_from_measurement(&bogus, &w_e, &budget, &layout, 16, &model, C);
        assert!(floored.iter().all(|v| v.is_finite()));
    }

    // 13. Bootstrap initialization puts the position at the measured range
    //     and angles with zero velocity.
    #[test]
    fn initialization_from_measurement() {
        let radar = state(250.0, 250.0, 75.0, 0.0, 0.0, 0.0);
        let target = state(331.0, 390.0, 52.0, 0.0, 0.0, 0.0);
        let truth = measurement_fn(&target, &radar, F_C, C).unwrap();
        let est = initialize_from_measurement(&truth, &radar, C);
        assert!((est.position() - target.position).norm() < 1e-6);
        assert_eq!(est.velocity(), Vec3::zeros());
        assert_eq!(est.cov[(0, 0)], INIT_POS_VAR);
        assert_eq!(est.cov[(5, 5)], INIT_VEL_VAR);
    }

    // 14. Fifty-step constant-velocity tracking stays bounded across 20
    //     seeds: final position error well inside the initial uncertainty.
    #[test]
    fn long_run_tracking_no_divergence() {
        let model = EvolutionModel::new(1.0, 0.1, 0.01);
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let radar = state(250.0, 250.0, 75.0, 0.0, 0.0, 0.0);
            let mut truth = state(
                rng.random_range(50.0..450.0),
                rng.random_range(300.0..450.0),
                rng.random_range(50.0..90.0),
                rng.random_range(-8.0..8.0),
                rng.random_range(-8.0..8.0),
                0.0,
            );
            let var: Vector4<f64> = Vector4::new(4e-16, 100.0, 1e-4, 1e-4);
            let draw = |rng: &mut ChaCha8Rng, m: &MeasurementVec| {
                let n: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
                MeasurementVec::new(
                    m.tau + var[0].sqrt() * n[0],
                    m.nu + var[1].sqrt() * n[1],
                    m.sin_theta + var[2].sqrt() * n[2],
                    m.sin_phi + var[3].sqrt() * n[3],
                )
            };
            let m0 = measurement_fn(&truth, &radar, F_C, C).unwrap();
            let mut est = initialize_from_measurement(&draw(&mut rng, &m0), &radar, C);
            let mut worst: f64 = 0.0;
            for _ in 0..50 {
                truth.position += truth.velocity * 1.0;
                let pred = predict(&est, &model, 1);
                let m = measurement_fn(&truth, &radar, F_C, C).unwrap();
                let out = update(&pred, &draw(&mut rng, &m), &var, &radar, F_C, C).unwrap();
                est = out.estimate;
                let err = (est.position() - truth.position).norm();
                worst = worst.max(err);
            }
            let final_err = (est.position() - truth.position).norm();
            assert!(final_err < 15.0, "seed {seed}: final error {final_err}");
            assert!(worst < 40.0, "seed {seed}: worst error {worst}");
        }
    }
}
