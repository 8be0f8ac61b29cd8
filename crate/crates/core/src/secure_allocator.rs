//! Per-slot transmit design for the dual-use downlink: which users to serve,
//! the beams that carry their streams, and the power left for the probing
//! waveform that illuminates the tracked target.
//!
//! The slot program is a semidefinite relaxation over beam Gram matrices.
//! Served users get an SINR floor, every served stream gets a worst-case
//! leakage ceiling that holds for any eavesdropper channel inside a known
//! error ball, and the probing beam buys tracking information whose error
//! trace is the minimization objective. The relaxation is posed on the
//! subspace spanned by the served user channels, the eavesdropper channel
//! and the probing steering vector: beams gain nothing from leaving that
//! span (any orthogonal component spends power without touching a single
//! constraint or the objective), so the reduction is exact and keeps cone
//! sizes independent of the array size.
//!
//! Solved Gram matrices are read back as rank-one beams; when the principal
//! eigenvalue does not dominate, a seeded Gaussian randomization pass
//! rebuilds the offending beam. Every returned design is audited against
//! the deployed-beam constraints, including a worst-case leakage rate
//! certified over the whole error ball, so downstream code never sees a
//! design that violates its own ceilings.

use std::thread;

use nalgebra::{DMatrix, DVector, Matrix4, Matrix6, Vector4};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::channel_models::{channel_correlation, ChannelVec, LinkBudget};
use crate::conic_opt::{
    dump_program, hermitian_to_real_psd, solve, svec_into, svec_len, Backend, Cone, ConicError,
    ConicProgram, ConstraintBlock, HermitianAffine, SolveStatus, SolverSettings, SparseMatrix,
};
use crate::core_geometry::{steering_vector, AnglePair, UpaLayout};
use crate::ekf_tracker::MeasJacobian;
use crate::link_metrics::{downlink_rate, mf_snr, NoiseVarModel, PrecoderSet};

/// Principal-eigenvalue share below which a Gram matrix is not accepted as
/// effectively rank-one and the randomization repair runs.
pub const RANK_ONE_MIN_RATIO: f64 = 0.999;

/// Candidate count of the Gaussian randomization repair.
pub const RANDOMIZATION_DRAWS: usize = 200;

/// Slack allowed on the worst-case leakage certificate, bit/s/Hz.
pub const LEAKAGE_CERT_TOL: f64 = 1e-6;

/// Slack allowed on per-user rate floors of extracted beams, bit/s/Hz.
pub const RATE_GATE_TOL: f64 = 1e-6;

/// Relative slack allowed on the power budget of extracted beams.
pub const POWER_REL_TOL: f64 = 1e-6;

/// Floor on the cosine factors of the angle-variance weights, so edge-on
/// geometries keep a finite sensing weight.
pub const COS_FLOOR: f64 = 1e-6;

/// Extra bits the built program demands beyond each configured rate floor
/// (and under each leakage ceiling). Interior-point dust and the rank-one
/// extraction shave up to ~1e-4 bit/s/Hz off a solution that sits exactly on
/// a floor; this margin keeps the deployed beams clear of the audit gates,
/// which check the configured values.
pub const FLOOR_MARGIN_BITS: f64 = 1e-3;

/// Residual share under which a span vector adds no new basis direction.
const BASIS_RANK_TOL: f64 = 1e-9;

/// Fixed stream for the randomization repair; a constant keeps rebuilt beams
/// identical across reruns.
const REPAIR_SEED: u64 = 0x5eed_bea3;

/// Tolerances for the single relaxed retry after a numerical failure. A
/// stalled solve often holds an iterate that already meets these; the audit
/// gates on the extracted beams remain the exact guard.
const RETRY_FEAS_TOL: f64 = 1e-6;
const RETRY_GAP_TOL: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum AllocError {
    #[error("invalid allocation config: {0}")]
    Config(&'static str),
    #[error("invalid allocation instance: {0}")]
    Instance(&'static str),
    #[error(transparent)]
    Solver(#[from] ConicError),
}

/// Solver settings for the slot programs. Leakage floors sit several orders
/// of magnitude below the beam powers even after rescaling, so these aim an
/// order tighter than the general-purpose defaults; loose gap targets also
/// leave relaxation solutions further from rank-one, which costs real rate
/// at extraction. Stalled solves get one relaxed retry instead.
pub fn default_solver_settings() -> SolverSettings {
    SolverSettings { feas_tol: 1e-8, gap_tol: 1e-8, max_iterations: 200, backend: Backend::Auto }
}

/// Static configuration of the per-slot allocation.
#[derive(Debug, Clone)]
pub struct AllocConfig {
    /// Total transmit power budget, W.
    pub p_max: f64,
    /// Rate floor for every served user, bit/s/Hz.
    pub r_min: f64,
    /// Worst-case leakage ceiling per served stream, bit/s/Hz.
    pub r_leakage: f64,
    /// Scheduling trade-off weight: zero ranks purely by served-user share,
    /// larger values demand tracking precision as well.
    pub omega: f64,
    /// Error-trace normalizer in the scheduling objective, m².
    pub mse_max: f64,
    /// Eavesdropper combining gain (receive element count).
    pub m_e: usize,
    /// Eavesdropper noise power, W.
    pub noise_eve: f64,
    /// Ground-user noise power, W.
    pub noise_gu: f64,
    /// Conic solver settings used for every slot program.
    pub solver: SolverSettings,
}

impl AllocConfig {
    pub fn validate(&self) -> Result<(), AllocError> {
        if !(self.p_max > 0.0) || !self.p_max.is_finite() {
            return Err(AllocError::Config("power budget must be positive and finite"));
        }
        if !(self.r_min >= 0.0) || !(2f64).powf(self.r_min).is_finite() {
            return Err(AllocError::Config("rate floor must be non-negative and representable"));
        }
        if !(self.r_leakage >= 0.0) {
            return Err(AllocError::Config("leakage ceiling must be non-negative"));
        }
        if !(self.omega >= 0.0) || !self.omega.is_finite() {
            return Err(AllocError::Config("trade-off weight must be non-negative and finite"));
        }
        if !(self.mse_max > 0.0) || !self.mse_max.is_finite() {
            return Err(AllocError::Config("trace normalizer must be positive and finite"));
        }
        if self.m_e == 0 {
            return Err(AllocError::Config("eavesdropper needs at least one element"));
        }
        if !(self.noise_eve > 0.0) || !self.noise_eve.is_finite() {
            return Err(AllocError::Config("eavesdropper noise must be positive and finite"));
        }
        if !(self.noise_gu > 0.0) || !self.noise_gu.is_finite() {
            return Err(AllocError::Config("user noise must be positive and finite"));
        }
        Ok(())
    }
}

/// Target-tracking side of one slot program.
#[derive(Debug, Clone)]
pub struct SensingData {
    /// Information carried into the slot: the inverse of the predicted
    /// state covariance. Must be symmetric positive definite.
    pub prior_info: Matrix6<f64>,
    /// Measurement Jacobian at the predicted target geometry.
    pub jacobian: MeasJacobian,
    /// Measurement variances at unit matched-filter SNR, cosine factors
    /// floored by [`COS_FLOOR`].
    pub unit_var: Vector4<f64>,
    /// Matched-filter SNR per unit probing gain toward the target.
    pub snr_coeff: f64,
    /// Transmit steering vector toward the predicted target.
    pub steering: DVector<Complex64>,
}

impl SensingData {
    /// Bundles the sensing side of a slot from the predicted geometry.
    #[allow(clippy::too_many_arguments)]
    pub fn from_prediction(
        budget: &LinkBudget,
        layout: &UpaLayout,
        model: &NoiseVarModel,
        prior_info: Matrix6<f64>,
        jacobian: MeasJacobian,
        angles: &AnglePair,
        distance: f64,
        m_b_r: usize,
    ) -> Self {
        let steering = steering_vector(layout, angles);
        // entry 0 of a steering vector is exactly one, so a canonical-basis
        // probe reads off the matched-filter SNR at unit gain
        let mut probe = DVector::<Complex64>::zeros(layout.elements());
        probe[0] = Complex64::new(1.0, 0.0);
        let snr_coeff = mf_snr(budget, layout, angles, distance, &probe, m_b_r);
        SensingData {
            prior_info,
            jacobian,
            unit_var: variance_weights(model, angles),
            snr_coeff,
            steering,
        }
    }

    pub fn validate(&self) -> Result<(), AllocError> {
        if self.steering.is_empty() || !(self.steering.norm() > 0.0) {
            return Err(AllocError::Instance("steering vector must be nonzero"));
        }
        if !self.steering.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(AllocError::Instance("steering vector must be finite"));
        }
        if !self.snr_coeff.is_finite() || !(self.snr_coeff >= 0.0) {
            return Err(AllocError::Instance("SNR coefficient must be finite and non-negative"));
        }
        if !self.unit_var.iter().all(|&v| v > 0.0 && v.is_finite()) {
            return Err(AllocError::Instance("unit variances must be positive and finite"));
        }
        if !self.jacobian.iter().all(|v| v.is_finite()) {
            return Err(AllocError::Instance("jacobian must be finite"));
        }
        if !self.prior_info.iter().all(|v| v.is_finite()) {
            return Err(AllocError::Instance("prior information must be finite"));
        }
        let asym = (self.prior_info - self.prior_info.transpose()).norm();
        if asym > 1e-9 * (1.0 + self.prior_info.norm()) {
            return Err(AllocError::Instance("prior information must be symmetric"));
        }
        if self.prior_info.cholesky().is_none() {
            return Err(AllocError::Instance("prior information must be positive definite"));
        }
        Ok(())
    }

    /// Information about the target state when the probing beam deposits
    /// `probe_gain` of coherent array gain on it.
    pub fn information_matrix(&self, probe_gain: f64) -> Matrix6<f64> {
        self.prior_info + self.info_increment() * (self.snr_coeff * probe_gain)
    }

    /// Tracking-error trace at the given probing gain, m².
    pub fn mse_trace(&self, probe_gain: f64) -> f64 {
        match self.information_matrix(probe_gain).cholesky() {
            Some(ch) => ch.inverse().trace(),
            None => f64::INFINITY,
        }
    }

    /// Information added per unit of `snr_coeff * probe_gain`.
    fn info_increment(&self) -> Matrix6<f64> {
        let d = Matrix4::from_diagonal(&Vector4::new(
            1.0 / self.unit_var[0],
            1.0 / self.unit_var[1],
            1.0 / self.unit_var[2],
            1.0 / self.unit_var[3],
        ));
        let m = self.jacobian.transpose() * d * self.jacobian;
        (m + m.transpose()) * 0.5
    }
}

/// Measurement variances at unit matched-filter SNR. The two angle slots
/// carry the squared cosines of the aim direction, floored by [`COS_FLOOR`]
/// so edge-on geometries keep a finite weight.
pub fn variance_weights(model: &NoiseVarModel, angles: &AnglePair) -> Vector4<f64> {
    let ct = angles.azimuth.cos().abs().max(COS_FLOOR);
    let cp = angles.elevation.cos().abs().max(COS_FLOOR);
    Vector4::new(model.c_tau, model.c_nu, ct * ct * model.c_theta, cp * cp * model.c_phi)
}

/// One slot program at a fixed schedule.
#[derive(Debug, Clone)]
pub struct SdpInstance {
    /// Users to serve, as indices into `channels`, in priority order.
    pub schedule: Vec<usize>,
    /// Predicted downlink channels for every user, scheduled or not.
    pub channels: Vec<ChannelVec>,
    /// Predicted eavesdropper channel.
    pub wiretap: ChannelVec,
    /// Radius-squared bound on the eavesdropper channel error ball.
    pub error_bound: f64,
    /// Target-tracking inputs.
    pub sensing: SensingData,
}

impl SdpInstance {
    pub fn validate(&self) -> Result<(), AllocError> {
        self.sensing.validate()?;
        let m = self.sensing.steering.len();
        if self.wiretap.coefficients.len() != m {
            return Err(AllocError::Instance("wiretap channel dimension mismatch"));
        }
        if !self.wiretap.coefficients.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(AllocError::Instance("wiretap channel must be finite"));
        }
        if !(self.error_bound >= 0.0) || !self.error_bound.is_finite() {
            return Err(AllocError::Instance("error bound must be non-negative and finite"));
        }
        let mut seen = vec![false; self.channels.len()];
        for &user in &self.schedule {
            if user >= self.channels.len() {
                return Err(AllocError::Instance("scheduled user out of range"));
            }
            if seen[user] {
                return Err(AllocError::Instance("user scheduled twice"));
            }
            seen[user] = true;
        }
        for ch in &self.channels {
            if ch.coefficients.len() != m {
                return Err(AllocError::Instance("user channel dimension mismatch"));
            }
            if !ch.coefficients.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
                return Err(AllocError::Instance("user channel must be finite"));
            }
        }
        Ok(())
    }
}

/// Deployable design for one slot.
#[derive(Debug, Clone)]
pub struct AllocResult {
    /// Rank-one beams ready to transmit.
    pub precoders: PrecoderSet,
    /// Error trace certified by the relaxation, m².
    pub xi: f64,
    /// Error trace of the deployed rank-one beams, m².
    pub deployed_xi: f64,
    /// Scheduling objective this design certifies.
    pub objective: f64,
    /// Deployed downlink rate per user, bit/s/Hz (zero when unscheduled).
    pub rates: Vec<f64>,
    /// Worst-case leakage certificate per user over the whole error ball,
    /// bit/s/Hz (zero when unscheduled).
    pub leakage_certs: Vec<f64>,
    /// Principal-eigenvalue share of each solved Gram matrix: served users
    /// in schedule order, then the probing beam.
    pub rank_one_ratios: Vec<f64>,
    /// Beams rebuilt by randomization instead of eigen extraction.
    pub repaired: usize,
}

/// Outcome of one slot program at a fixed schedule.
#[derive(Debug, Clone)]
pub enum SolveOutcome {
    Solved(Box<AllocResult>),
    Infeasible,
    NumericalFailure(String),
}

/// How a candidate prefix was settled during scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrefixStatus {
    Solved,
    Infeasible,
    NumericalFailure,
    /// Not solved; feasible because a larger prefix was.
    ImpliedFeasible,
    /// Not solved; infeasible because a smaller prefix was.
    ImpliedInfeasible,
}

/// Per-prefix scheduling diagnostics.
#[derive(Debug, Clone)]
pub struct PrefixReport {
    pub k_tilde: usize,
    pub objective: f64,
    pub xi: Option<f64>,
    pub status: PrefixStatus,
    pub diagnostics: String,
}

/// Chosen slot design plus the evidence behind the choice.
#[derive(Debug, Clone)]
pub struct ScheduleResult {
    pub chosen: AllocResult,
    /// Users ordered by ascending eavesdropper correlation; prefixes of this
    /// list are the candidate schedules.
    pub order: Vec<usize>,
    /// One report per prefix length, index = number of served users.
    pub reports: Vec<PrefixReport>,
}

/// Rank-one reading of a solved Gram matrix.
#[derive(Debug, Clone)]
pub struct RankOneExtraction {
    /// Beam scaled so its outer product carries the principal eigenvalue.
    pub vector: DVector<Complex64>,
    /// Principal-eigenvalue share of the trace, in (0, 1].
    pub ratio: f64,
    /// Relative Frobenius error of the rank-one reconstruction.
    pub recon_error: f64,
}

/// Scheduling objective: served-user share blended against the normalized
/// error trace. At `omega = 0` the trace drops out entirely, even when it
/// is infinite.
pub fn scheduling_objective(cfg: &AllocConfig, num_users: usize, num_served: usize, xi: f64) -> f64 {
    let comm = if num_users == 0 { 0.0 } else { num_served as f64 / num_users as f64 };
    if cfg.omega == 0.0 {
        return comm;
    }
    (comm - cfg.omega * xi / cfg.mse_max) / (1.0 + cfg.omega)
}

/// Users sorted by ascending channel correlation with the eavesdropper,
/// ties broken by index.
pub fn correlation_order(
    channels: &[ChannelVec],
    wiretap: &ChannelVec,
) -> Result<Vec<usize>, AllocError> {
    let mut corr = Vec::with_capacity(channels.len());
    for ch in channels {
        let c = channel_correlation(ch, wiretap)
            .map_err(|_| AllocError::Instance("zero channel norm in correlation ordering"))?;
        corr.push(c);
    }
    let mut order: Vec<usize> = (0..channels.len()).collect();
    order.sort_by(|&a, &b| corr[a].total_cmp(&corr[b]).then(a.cmp(&b)));
    Ok(order)
}

/// How the leakage ceiling enters the program.
#[derive(Debug, Clone, Copy, PartialEq)]
enum LeakageMode {
    /// Robust ceiling over a positive-radius error ball: one matrix
    /// inequality per served user, each with its own multiplier variable.
    Ball { gamma: f64 },
    /// Zero-radius ball: exact linear ceiling at the predicted channel.
    Point { gamma: f64 },
    /// Ceiling provably slack under the power budget; nothing is emitted.
    Unbindable,
}

/// Precomputed subspace geometry and rescaled data behind one slot program.
///
/// Channels are rescaled so mean per-element power is one, which drags the
/// tiny leakage floors into the solver's resolvable range; beam powers stay
/// in watts because the Gram variables are never rescaled.
#[derive(Debug, Clone)]
pub struct ProgramContext {
    basis: DMatrix<Complex64>,
    red_channels: Vec<DVector<Complex64>>,
    red_wiretap: DVector<Complex64>,
    red_steering: DVector<Complex64>,
    scale2: f64,
    gamma_rate: f64,
    leakage: LeakageMode,
    p_max: f64,
    noise_gu_sc: f64,
    noise_eve_sc: f64,
    error_bound_sc: f64,
    m_e: f64,
    prior_info: Matrix6<f64>,
    info_outer: Matrix6<f64>,
    snr_coeff: f64,
}

impl ProgramContext {
    pub fn num_scheduled(&self) -> usize {
        self.red_channels.len()
    }

    pub fn reduced_dim(&self) -> usize {
        self.basis.ncols()
    }

    fn gram_params(&self) -> usize {
        self.reduced_dim() * self.reduced_dim()
    }

    /// First variable of the given beam's Gram matrix; slot `num_scheduled()`
    /// is the probing beam.
    pub fn gram_base(&self, slot: usize) -> usize {
        slot * self.gram_params()
    }

    fn t_base(&self) -> usize {
        (self.num_scheduled() + 1) * self.gram_params()
    }

    /// Variable of the i-th diagonal bound on the error covariance.
    pub fn t_index(&self, axis: usize) -> usize {
        self.t_base() + axis
    }

    fn eps_count(&self) -> usize {
        if let LeakageMode::Ball { .. } = self.leakage {
            self.num_scheduled()
        } else {
            0
        }
    }

    fn eps_index(&self, pos: usize) -> usize {
        self.t_base() + 6 + pos
    }

    /// Variable of the error-trace objective.
    pub fn xi_index(&self) -> usize {
        self.t_base() + 6 + self.eps_count()
    }

    pub fn num_vars(&self) -> usize {
        self.xi_index() + 1
    }

    /// Whether the program carries leakage constraints at all.
    pub fn leakage_constrained(&self) -> bool {
        !matches!(self.leakage, LeakageMode::Unbindable)
    }

    /// Squared rescaling factor applied to channels inside the program.
    pub fn channel_scale(&self) -> f64 {
        self.scale2
    }

    /// Orthonormal basis of the beam subspace, one column per dimension.
    pub fn basis(&self) -> &DMatrix<Complex64> {
        &self.basis
    }
}

fn reduced_context(
    inst: &SdpInstance,
    cfg: &AllocConfig,
    pad: usize,
) -> Result<ProgramContext, AllocError> {
    let kt = inst.schedule.len();
    let m = inst.sensing.steering.len();
    let mut power_sum = inst.wiretap.coefficients.norm_squared();
    for &user in &inst.schedule {
        power_sum += inst.channels[user].coefficients.norm_squared();
    }
    let mut scale2 = power_sum / ((kt + 1) as f64 * m as f64);
    if !(scale2 > 0.0) || !scale2.is_finite() {
        scale2 = 1.0;
    }
    let scale = scale2.sqrt();
    let scaled: Vec<DVector<Complex64>> = inst
        .schedule
        .iter()
        .map(|&user| inst.channels[user].coefficients.unscale(scale))
        .collect();
    let scaled_wiretap = inst.wiretap.coefficients.unscale(scale);
    let mut span = scaled.clone();
    span.push(scaled_wiretap.clone());
    span.push(inst.sensing.steering.clone());
    let basis = orthonormal_span(&span, pad);
    let red_channels: Vec<DVector<Complex64>> = scaled.iter().map(|h| basis.adjoint() * h).collect();
    let red_wiretap = basis.adjoint() * &scaled_wiretap;
    let red_steering = basis.adjoint() * &inst.sensing.steering;
    let noise_gu_sc = cfg.noise_gu / scale2;
    let noise_eve_sc = cfg.noise_eve / scale2;
    let error_bound_sc = inst.error_bound / scale2;
    // the program enforces slightly tighter floors than the audit checks
    let r_min_inner = if cfg.r_min > 0.0 { cfg.r_min + FLOOR_MARGIN_BITS } else { cfg.r_min };
    let gamma_rate = (2f64).powf(r_min_inner) - 1.0;
    let gamma_leak = (2f64).powf((cfg.r_leakage - FLOOR_MARGIN_BITS).max(0.0)) - 1.0;
    let m_e = cfg.m_e as f64;
    // largest leakage numerator any in-budget beam can produce over the ball
    let reach = (scaled_wiretap.norm() + error_bound_sc.sqrt()).powi(2) * cfg.p_max;
    let leakage = if kt == 0 || !gamma_leak.is_finite() || gamma_leak * noise_eve_sc / m_e >= reach
    {
        LeakageMode::Unbindable
    } else if error_bound_sc > 0.0 {
        LeakageMode::Ball { gamma: gamma_leak }
    } else {
        LeakageMode::Point { gamma: gamma_leak }
    };
    Ok(ProgramContext {
        basis,
        red_channels,
        red_wiretap,
        red_steering,
        scale2,
        gamma_rate,
        leakage,
        p_max: cfg.p_max,
        noise_gu_sc,
        noise_eve_sc,
        error_bound_sc,
        m_e,
        prior_info: inst.sensing.prior_info,
        info_outer: inst.sensing.info_increment(),
        snr_coeff: inst.sensing.snr_coeff,
    })
}

/// Builds the slot program and the context needed to read its solution.
pub fn build_program(
    inst: &SdpInstance,
    cfg: &AllocConfig,
) -> Result<(ConicProgram, ProgramContext), AllocError> {
    cfg.validate()?;
    inst.validate()?;
    let ctx = reduced_context(inst, cfg, 0)?;
    let prog = assemble_program(&ctx)?;
    Ok((prog, ctx))
}

/// Text dump of the slot program in the conic debug format.
pub fn dump_slot_program(inst: &SdpInstance, cfg: &AllocConfig) -> Result<String, AllocError> {
    let (prog, _) = build_program(inst, cfg)?;
    Ok(dump_program(&prog))
}

fn assemble_program(ctx: &ProgramContext) -> Result<ConicProgram, AllocError> {
    let kt = ctx.num_scheduled();
    let mut prog = ConicProgram::new(ctx.num_vars());
    prog.objective[ctx.xi_index()] = 1.0;
    prog.blocks.push(power_budget_row(ctx));
    for pos in 0..kt {
        prog.blocks.push(build_rate_constraint(ctx, pos));
    }
    for slot in 0..=kt {
        prog.blocks.push(gram_psd_block(ctx, slot)?);
    }
    for pos in 0..kt {
        if let Some(block) = build_leakage_lmi(ctx, pos)? {
            prog.blocks.push(block);
        }
    }
    if ctx.eps_count() > 0 {
        prog.blocks.push(eps_nonneg_block(ctx));
    }
    prog.blocks.extend(build_sensing_lmi(ctx));
    prog.blocks = prog.blocks.into_iter().map(equilibrated).collect();
    prog.validate()?;
    Ok(prog)
}

/// Rescales a finished block so its largest coefficient is about one: rows
/// of a linear block scale independently, a cone block scales as a whole
/// (every cone here is invariant under positive scaling). Rate floors can
/// put three orders of magnitude on a row while leakage floors sit six
/// below the beam powers, and interior-point steps degrade fast on that
/// spread. Pure reformulation; the solution set is unchanged.
fn equilibrated(block: ConstraintBlock) -> ConstraintBlock {
    if let Cone::Nonneg(rows) = block.cone {
        let mut scale = vec![0.0f64; rows];
        for &(r, _, v) in block.matrix.entries() {
            scale[r] = scale[r].max(v.abs());
        }
        for (s, b) in scale.iter_mut().zip(&block.rhs) {
            *s = s.max(b.abs());
            if !(*s > 0.0) {
                *s = 1.0;
            }
        }
        let mut matrix = SparseMatrix::new(rows, block.matrix.ncols());
        for &(r, c, v) in block.matrix.entries() {
            matrix.push(r, c, v / scale[r]);
        }
        let rhs = block.rhs.iter().zip(&scale).map(|(b, s)| b / s).collect();
        ConstraintBlock { cone: block.cone, matrix, rhs }
    } else {
        let mut s = 0.0f64;
        for &(_, _, v) in block.matrix.entries() {
            s = s.max(v.abs());
        }
        for &b in &block.rhs {
            s = s.max(b.abs());
        }
        if !(s > 0.0) || (0.5..=2.0).contains(&s) {
            return block;
        }
        let mut matrix = SparseMatrix::new(block.matrix.nrows(), block.matrix.ncols());
        for &(r, c, v) in block.matrix.entries() {
            matrix.push(r, c, v / s);
        }
        let rhs = block.rhs.iter().map(|b| b / s).collect();
        ConstraintBlock { cone: block.cone, matrix, rhs }
    }
}

/// Total-power row: the Gram traces of every beam sum to at most the budget.
fn power_budget_row(ctx: &ProgramContext) -> ConstraintBlock {
    let mut matrix = SparseMatrix::new(1, ctx.num_vars());
    for slot in 0..=ctx.num_scheduled() {
        let base = ctx.gram_base(slot);
        for d in diag_param_indices(ctx.reduced_dim()) {
            matrix.push(0, base + d, 1.0);
        }
    }
    ConstraintBlock { cone: Cone::Nonneg(1), matrix, rhs: vec![ctx.p_max] }
}

/// SINR floor of one served user: own beam gain beats the floor multiple of
/// interference from every other beam plus noise.
pub fn build_rate_constraint(ctx: &ProgramContext, pos: usize) -> ConstraintBlock {
    let kt = ctx.num_scheduled();
    let coeffs = quad_form_coeffs(&ctx.red_channels[pos]);
    let mut matrix = SparseMatrix::new(1, ctx.num_vars());
    for (p, &c) in coeffs.iter().enumerate() {
        matrix.push(0, ctx.gram_base(pos) + p, -c);
        for slot in (0..=kt).filter(|&s| s != pos) {
            matrix.push(0, ctx.gram_base(slot) + p, ctx.gamma_rate * c);
        }
    }
    ConstraintBlock {
        cone: Cone::Nonneg(1),
        matrix,
        rhs: vec![-ctx.gamma_rate * ctx.noise_gu_sc],
    }
}

/// Worst-case leakage ceiling of one served user.
///
/// Over a positive-radius ball this is the standard lossless reformulation
/// of "quadratic non-positive on a ball" with one multiplier, bordered by
/// the predicted eavesdropper channel. A zero-radius ball degenerates to a
/// linear row, and a provably slack ceiling emits nothing.
pub fn build_leakage_lmi(
    ctx: &ProgramContext,
    pos: usize,
) -> Result<Option<ConstraintBlock>, AllocError> {
    let kt = ctx.num_scheduled();
    match ctx.leakage {
        LeakageMode::Unbindable => Ok(None),
        LeakageMode::Point { gamma } => {
            let coeffs = quad_form_coeffs(&ctx.red_wiretap);
            let mut matrix = SparseMatrix::new(1, ctx.num_vars());
            for (p, &c) in coeffs.iter().enumerate() {
                matrix.push(0, ctx.gram_base(pos) + p, c);
                matrix.push(0, ctx.gram_base(kt) + p, -gamma * c);
            }
            Ok(Some(ConstraintBlock {
                cone: Cone::Nonneg(1),
                matrix,
                rhs: vec![gamma * ctx.noise_eve_sc / ctx.m_e],
            }))
        }
        LeakageMode::Ball { gamma } => {
            let affine = leakage_affine(
                &ctx.red_wiretap,
                gamma,
                gamma * ctx.noise_eve_sc / ctx.m_e,
                ctx.error_bound_sc,
                ctx.gram_base(pos),
                ctx.gram_base(kt),
                ctx.eps_index(pos),
            );
            Ok(Some(hermitian_to_real_psd(&affine, ctx.num_vars())?))
        }
    }
}

/// Matrix-valued affine map of the robust leakage ceiling, order r + 1.
#[allow(clippy::too_many_arguments)]
fn leakage_affine(
    wiretap: &DVector<Complex64>,
    gamma: f64,
    floor: f64,
    ball: f64,
    user_base: usize,
    an_base: usize,
    eps_var: usize,
) -> HermitianAffine {
    let r = wiretap.len();
    let mut constant = DMatrix::<Complex64>::zeros(r + 1, r + 1);
    constant[(r, r)] = Complex64::new(floor, 0.0);
    let mut terms = Vec::with_capacity(2 * r * r + 1);
    for (p, e) in hermitian_basis(r).into_iter().enumerate() {
        let b = bordered(&e, wiretap);
        terms.push((an_base + p, b.map(|z| z * gamma)));
        terms.push((user_base + p, b.map(|z| -z)));
    }
    let mut eps_mat = DMatrix::<Complex64>::identity(r + 1, r + 1);
    eps_mat[(r, r)] = Complex64::new(-ball, 0.0);
    terms.push((eps_var, eps_mat));
    HermitianAffine { constant, terms }
}

/// `[[E, Eh], [(Eh)^H, h^H E h]]` for Hermitian `E`; the corner is forced
/// exactly real so the embedding's Hermiticity check never trips.
fn bordered(e: &DMatrix<Complex64>, h: &DVector<Complex64>) -> DMatrix<Complex64> {
    let r = e.nrows();
    let u = e * h;
    let corner = h.dotc(&u);
    let mut m = DMatrix::<Complex64>::zeros(r + 1, r + 1);
    m.view_mut((0, 0), (r, r)).copy_from(e);
    for i in 0..r {
        m[(i, r)] = u[i];
        m[(r, i)] = u[i].conj();
    }
    m[(r, r)] = Complex64::new(corner.re, 0.0);
    m
}

/// Gram positivity of one beam.
fn gram_psd_block(ctx: &ProgramContext, slot: usize) -> Result<ConstraintBlock, AllocError> {
    let r = ctx.reduced_dim();
    let base = ctx.gram_base(slot);
    let terms = hermitian_basis(r)
        .into_iter()
        .enumerate()
        .map(|(p, e)| (base + p, e))
        .collect();
    let affine = HermitianAffine { constant: DMatrix::zeros(r, r), terms };
    Ok(hermitian_to_real_psd(&affine, ctx.num_vars())?)
}

/// Multipliers of the robust leakage blocks stay non-negative.
fn eps_nonneg_block(ctx: &ProgramContext) -> ConstraintBlock {
    let count = ctx.eps_count();
    let mut matrix = SparseMatrix::new(count, ctx.num_vars());
    for pos in 0..count {
        matrix.push(pos, ctx.eps_index(pos), -1.0);
    }
    ConstraintBlock { cone: Cone::Nonneg(count), matrix, rhs: vec![0.0; count] }
}

/// Error-trace epigraph: six bordered blocks pin each diagonal of the
/// inverse information matrix under `t_i`, and one row sums them under the
/// objective variable. Probing gain enters the information matrix linearly
/// through the Gram of the probing beam evaluated at the steering vector.
pub fn build_sensing_lmi(ctx: &ProgramContext) -> Vec<ConstraintBlock> {
    let n = ctx.num_vars();
    let an_base = ctx.gram_base(ctx.num_scheduled());
    let coeffs = quad_form_coeffs(&ctx.red_steering);
    let dim = svec_len(7);
    let mut outer7 = DMatrix::<f64>::zeros(7, 7);
    for i in 0..6 {
        for j in 0..6 {
            outer7[(i, j)] = ctx.info_outer[(i, j)];
        }
    }
    let mut outer_svec = vec![0.0; dim];
    svec_into(&outer7, &mut outer_svec);
    let mut blocks = Vec::with_capacity(7);
    for axis in 0..6 {
        let mut rhs_mat = DMatrix::<f64>::zeros(7, 7);
        for i in 0..6 {
            for j in 0..6 {
                rhs_mat[(i, j)] = ctx.prior_info[(i, j)];
            }
        }
        rhs_mat[(axis, 6)] = 1.0;
        rhs_mat[(6, axis)] = 1.0;
        let mut rhs = vec![0.0; dim];
        svec_into(&rhs_mat, &mut rhs);
        let mut matrix = SparseMatrix::new(dim, n);
        for (p, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let w = ctx.snr_coeff * c;
            for (row, &v) in outer_svec.iter().enumerate() {
                matrix.push(row, an_base + p, -w * v);
            }
        }
        matrix.push(dim - 1, ctx.t_index(axis), -1.0);
        blocks.push(ConstraintBlock { cone: Cone::Psd(7), matrix, rhs });
    }
    let mut matrix = SparseMatrix::new(1, n);
    for axis in 0..6 {
        matrix.push(0, ctx.t_index(axis), 1.0);
    }
    matrix.push(0, ctx.xi_index(), -1.0);
    blocks.push(ConstraintBlock { cone: Cone::Nonneg(1), matrix, rhs: vec![0.0] });
    blocks
}

/// Solves the slot program at the given schedule and returns a deployable,
/// audited design.
pub fn solve_given_schedule(
    inst: &SdpInstance,
    cfg: &AllocConfig,
) -> Result<SolveOutcome, AllocError> {
    let (prog, ctx) = build_program(inst, cfg)?;
    let mut sol = solve(&prog, &cfg.solver)?;
    if matches!(sol.status, SolveStatus::NumericalFailure | SolveStatus::Unbounded) {
        // A stall near the boundary often leaves an iterate that already
        // meets looser tolerances; the audit gates below still check the
        // extracted beams exactly. Infeasible verdicts are certificates and
        // are never retried.
        let relaxed = SolverSettings {
            feas_tol: cfg.solver.feas_tol.max(RETRY_FEAS_TOL),
            gap_tol: cfg.solver.gap_tol.max(RETRY_GAP_TOL),
            ..cfg.solver
        };
        if relaxed.feas_tol > cfg.solver.feas_tol || relaxed.gap_tol > cfg.solver.gap_tol {
            let retry = solve(&prog, &relaxed)?;
            if !matches!(retry.status, SolveStatus::NumericalFailure | SolveStatus::Unbounded) {
                sol = retry;
            }
        }
    }
    Ok(match sol.status {
        SolveStatus::Optimal => {
            let r = ctx.reduced_dim();
            let grams: Vec<DMatrix<Complex64>> = (0..=ctx.num_scheduled())
                .map(|slot| {
                    let base = ctx.gram_base(slot);
                    hermitian_from_params(&sol.x[base..base + r * r], r)
                })
                .collect();
            finalize_grams(inst, cfg, &ctx, &grams, sol.x[ctx.xi_index()])
        }
        SolveStatus::Infeasible => SolveOutcome::Infeasible,
        SolveStatus::Unbounded => SolveOutcome::NumericalFailure(
            "solver reported unbounded for a program bounded below".into(),
        ),
        SolveStatus::NumericalFailure => SolveOutcome::NumericalFailure(if sol.diagnostics.is_empty() {
            "solver numerical failure".into()
        } else {
            sol.diagnostics
        }),
    })
}

/// Turns solved Gram matrices into audited rank-one beams.
fn finalize_grams(
    inst: &SdpInstance,
    cfg: &AllocConfig,
    ctx: &ProgramContext,
    grams: &[DMatrix<Complex64>],
    xi: f64,
) -> SolveOutcome {
    let kt = ctx.num_scheduled();
    let extractions: Vec<RankOneExtraction> = grams.iter().map(extract_rank_one).collect();
    let rank_one_ratios: Vec<f64> = extractions.iter().map(|e| e.ratio).collect();
    let mut vecs: Vec<DVector<Complex64>> = extractions.into_iter().map(|e| e.vector).collect();
    let mut repaired = 0usize;
    for slot in 0..=kt {
        if rank_one_ratios[slot] < RANK_ONE_MIN_RATIO
            && randomized_repair(inst, cfg, ctx, &grams[slot], slot, &mut vecs)
        {
            repaired += 1;
        }
    }
    let precoders = deploy(ctx, inst, &vecs);
    debug_assert!(precoders.validate().is_ok());
    let rates = rates_of(inst, cfg, &precoders);
    let leakage_certs = certs_of(inst, cfg, &precoders);
    if let Some(msg) =
        gate_violation(cfg, &precoders, &rates, &leakage_certs, ctx.leakage_constrained())
    {
        return SolveOutcome::NumericalFailure(msg);
    }
    let probe_gain = inst.sensing.steering.dotc(&precoders.an).norm_sqr();
    let deployed_xi = inst.sensing.mse_trace(probe_gain);
    let objective = scheduling_objective(cfg, inst.channels.len(), kt, xi);
    SolveOutcome::Solved(Box::new(AllocResult {
        precoders,
        xi,
        deployed_xi,
        objective,
        rates,
        leakage_certs,
        rank_one_ratios,
        repaired,
    }))
}

/// Lifts reduced beams back to the array and lays them out per user.
fn deploy(ctx: &ProgramContext, inst: &SdpInstance, vecs: &[DVector<Complex64>]) -> PrecoderSet {
    let k_total = inst.channels.len();
    let mut schedule = vec![false; k_total];
    let mut info: Vec<Option<DVector<Complex64>>> = vec![None; k_total];
    for (pos, &user) in inst.schedule.iter().enumerate() {
        schedule[user] = true;
        info[user] = Some(&ctx.basis * &vecs[pos]);
    }
    let an = &ctx.basis * &vecs[inst.schedule.len()];
    PrecoderSet { schedule, info, an }
}

fn rates_of(inst: &SdpInstance, cfg: &AllocConfig, prec: &PrecoderSet) -> Vec<f64> {
    (0..inst.channels.len())
        .map(|k| downlink_rate(k, &inst.channels, prec, cfg.noise_gu))
        .collect()
}

fn certs_of(inst: &SdpInstance, cfg: &AllocConfig, prec: &PrecoderSet) -> Vec<f64> {
    (0..inst.channels.len())
        .map(|k| match &prec.info[k] {
            Some(w) => worst_case_leakage_rate(
                w,
                &prec.an,
                &inst.wiretap,
                inst.error_bound,
                cfg.noise_eve,
                cfg.m_e,
            ),
            None => 0.0,
        })
        .collect()
}

/// First violated deployment gate, if any.
fn gate_violation(
    cfg: &AllocConfig,
    prec: &PrecoderSet,
    rates: &[f64],
    certs: &[f64],
    leak_gate: bool,
) -> Option<String> {
    let power = prec.total_power();
    if power > cfg.p_max * (1.0 + POWER_REL_TOL) {
        return Some(format!("deployed power {power:.6e} exceeds budget {:.6e}", cfg.p_max));
    }
    for (k, &on) in prec.schedule.iter().enumerate() {
        if !on {
            continue;
        }
        if rates[k] < cfg.r_min - RATE_GATE_TOL {
            return Some(format!("user {k} rate {:.6e} under floor {:.6e}", rates[k], cfg.r_min));
        }
        if leak_gate && certs[k] > cfg.r_leakage + LEAKAGE_CERT_TOL {
            return Some(format!(
                "user {k} worst-case leakage {:.6e} over ceiling {:.6e}",
                certs[k], cfg.r_leakage
            ));
        }
    }
    None
}

/// Gaussian randomization for one beam whose Gram was not rank-one: draws
/// candidates from the Gram as a covariance, rescales them to its trace and
/// keeps the best candidate that passes every deployment gate. Returns
/// whether the incumbent beam was replaced.
fn randomized_repair(
    inst: &SdpInstance,
    cfg: &AllocConfig,
    ctx: &ProgramContext,
    gram: &DMatrix<Complex64>,
    slot: usize,
    vecs: &mut [DVector<Complex64>],
) -> bool {
    let kt = ctx.num_scheduled();
    let r = ctx.reduced_dim();
    let trace: f64 = (0..r).map(|i| gram[(i, i)].re).sum();
    if !(trace > 0.0) {
        return false;
    }
    let se = gram.clone().symmetric_eigen();
    let sqrt_d = DVector::from_fn(r, |i, _| Complex64::new(se.eigenvalues[i].max(0.0).sqrt(), 0.0));
    let factor = &se.eigenvectors * DMatrix::from_diagonal(&sqrt_d);
    let mut rng = ChaCha8Rng::seed_from_u64(
        REPAIR_SEED ^ (slot as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
    );
    let leak_gate = ctx.leakage_constrained();
    let score_of = |prec: &PrecoderSet, rates: &[f64]| -> f64 {
        if slot < kt {
            rates[inst.schedule[slot]]
        } else {
            inst.sensing.steering.dotc(&prec.an).norm_sqr()
        }
    };
    let evaluate = |trial: &[DVector<Complex64>],
                    base_certs: Option<&[f64]>|
     -> Option<(f64, Vec<f64>, Vec<f64>)> {
        let prec = deploy(ctx, inst, trial);
        let rates = rates_of(inst, cfg, &prec);
        // cheap gates first; certificates only for beams that can move them
        for (k, &on) in prec.schedule.iter().enumerate() {
            if on && rates[k] < cfg.r_min - RATE_GATE_TOL {
                return None;
            }
        }
        let certs = match (base_certs, slot < kt) {
            (Some(base), true) => {
                let mut certs = base.to_vec();
                let user = inst.schedule[slot];
                certs[user] = worst_case_leakage_rate(
                    prec.info[user].as_ref().expect("scheduled user carries a beam"),
                    &prec.an,
                    &inst.wiretap,
                    inst.error_bound,
                    cfg.noise_eve,
                    cfg.m_e,
                );
                certs
            }
            _ => certs_of(inst, cfg, &prec),
        };
        if leak_gate {
            for (k, &on) in prec.schedule.iter().enumerate() {
                if on && certs[k] > cfg.r_leakage + LEAKAGE_CERT_TOL {
                    return None;
                }
            }
        }
        Some((score_of(&prec, &rates), rates, certs))
    };
    let incumbent_certs = certs_of(inst, cfg, &deploy(ctx, inst, vecs));
    let mut best_score = match evaluate(vecs, None) {
        Some((score, _, _)) => score,
        None => f64::NEG_INFINITY,
    };
    let mut best_vec: Option<DVector<Complex64>> = None;
    let mut trial = vecs.to_vec();
    for _ in 0..RANDOMIZATION_DRAWS {
        let g = DVector::from_fn(r, |_, _| {
            Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
        });
        let mut v = &factor * g;
        let n2 = v.norm_squared();
        if !(n2 > 0.0) {
            continue;
        }
        v *= Complex64::new((trace / n2).sqrt(), 0.0);
        trial[slot] = v.clone();
        if let Some((score, _, _)) = evaluate(&trial, Some(&incumbent_certs)) {
            if score > best_score {
                best_score = score;
                best_vec = Some(v);
            }
        }
    }
    match best_vec {
        Some(v) => {
            vecs[slot] = v;
            true
        }
        None => false,
    }
}

/// Principal rank-one component of a Hermitian PSD matrix, with the phase
/// canonicalized so reruns return bit-identical beams.
pub fn extract_rank_one(gram: &DMatrix<Complex64>) -> RankOneExtraction {
    let r = gram.nrows();
    let fro = gram.norm();
    if !(fro > 0.0) {
        return RankOneExtraction { vector: DVector::zeros(r), ratio: 1.0, recon_error: 0.0 };
    }
    let trace: f64 = (0..r).map(|i| gram[(i, i)].re).sum();
    let se = gram.clone().symmetric_eigen();
    let mut imax = 0;
    for i in 1..r {
        if se.eigenvalues[i] > se.eigenvalues[imax] {
            imax = i;
        }
    }
    let lam = se.eigenvalues[imax];
    if !(lam > 0.0) || !(trace > 0.0) {
        // no usable direction; the full mass is reconstruction error
        return RankOneExtraction { vector: DVector::zeros(r), ratio: 1.0, recon_error: 1.0 };
    }
    let mut v = se.eigenvectors.column(imax) * Complex64::new(lam.sqrt(), 0.0);
    let mut jbig = 0;
    for i in 1..r {
        if v[i].norm_sqr() > v[jbig].norm_sqr() {
            jbig = i;
        }
    }
    let mag = v[jbig].norm();
    if mag > 0.0 {
        let rot = (v[jbig] / mag).conj();
        v *= rot;
    }
    let ratio = (lam / trace).min(1.0);
    let recon_error = (gram - &v * v.adjoint()).norm() / fro;
    RankOneExtraction { vector: v, ratio, recon_error }
}

/// Maximum of `d^H A d + 2 Re(b^H d) + c0` over the ball `|d|^2 <= radius2`
/// for Hermitian `A`, solved through the eigendecomposition. The returned
/// value is the dual bound, so it never understates the true maximum; the
/// returned argument is a feasible point attaining it up to solver rounding.
struct BallMax {
    value: f64,
    arg: DVector<Complex64>,
}

fn ball_max_quadratic(
    a: &DMatrix<Complex64>,
    b: &DVector<Complex64>,
    c0: f64,
    radius2: f64,
) -> BallMax {
    let n = a.nrows();
    if !(radius2 > 0.0) {
        return BallMax { value: c0, arg: DVector::zeros(n) };
    }
    let se = a.clone().symmetric_eigen();
    let bt = se.eigenvectors.adjoint() * b;
    let lam = se.eigenvalues;
    let mut jtop = 0;
    for i in 1..n {
        if lam[i] > lam[jtop] {
            jtop = i;
        }
    }
    let lam_max = lam[jtop];
    let value_at = |u: &DVector<Complex64>| -> f64 {
        let mut s = c0;
        for i in 0..n {
            s += lam[i] * u[i].norm_sqr() + 2.0 * (bt[i].conj() * u[i]).re;
        }
        s
    };
    // strictly concave case: the unconstrained stationary point may sit
    // inside the ball, where the maximum is exact
    if lam_max < 0.0 {
        let u = DVector::from_fn(n, |i, _| bt[i].unscale(-lam[i]));
        if u.norm_squared() <= radius2 {
            let value = value_at(&u);
            return BallMax { value, arg: &se.eigenvectors * u };
        }
    }
    let mu_floor = lam_max.max(0.0);
    let lam_scale = lam.iter().fold(0.0f64, |m, &x| m.max(x.abs())).max(1.0);
    let edge = 1e-12 * lam_scale;
    let mut top_weight = 0.0;
    let mut tail_norm2 = 0.0;
    let mut pseudo = DVector::<Complex64>::zeros(n);
    for i in 0..n {
        if lam[i] >= mu_floor - edge {
            top_weight += bt[i].norm_sqr();
        } else {
            let ui = bt[i].unscale(mu_floor - lam[i]);
            tail_norm2 += ui.norm_sqr();
            pseudo[i] = ui;
        }
    }
    let bt_norm2 = bt.norm_squared();
    let radius = radius2.sqrt();
    // degenerate case: no linear weight on the top eigenspace and the
    // pseudo-solution fits, so the leftover norm rides a top eigendirection
    if top_weight <= 1e-24 * bt_norm2 && tail_norm2 <= radius2 {
        let fill = (radius2 - tail_norm2).sqrt();
        pseudo[jtop] += Complex64::new(fill, 0.0);
        let mut value = c0 + mu_floor * radius2;
        for i in 0..n {
            if lam[i] < mu_floor - edge {
                value += bt[i].norm_sqr() / (mu_floor - lam[i]);
            }
        }
        return BallMax { value, arg: &se.eigenvectors * pseudo };
    }
    // regular case: bisect the secular equation on the feasible side
    let phi = |mu: f64| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            let d = mu - lam[i];
            if d <= 0.0 {
                return f64::INFINITY;
            }
            s += bt[i].norm_sqr() / (d * d);
        }
        s
    };
    let mut lo = mu_floor;
    let mut hi = mu_floor + (bt_norm2.sqrt() / radius).max(edge);
    for _ in 0..120 {
        let mid = 0.5 * (lo + hi);
        if phi(mid) > radius2 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let u = DVector::from_fn(n, |i, _| bt[i].unscale(hi - lam[i]));
    let mut dual = c0 + hi * radius2;
    for i in 0..n {
        dual += bt[i].norm_sqr() / (hi - lam[i]);
    }
    BallMax { value: dual, arg: &se.eigenvectors * u }
}

/// Largest leakage rate any eavesdropper channel inside the error ball can
/// extract from beam `w` under the probing beam `an`.
///
/// The ratio is maximized by alternating between a fixed-ratio ball
/// maximization and a ratio update at its argument; the returned rate keeps
/// the final maximization slack as an additive margin, so it is always a
/// sound upper bound even when the alternation stops early.
pub fn worst_case_leakage_rate(
    w: &DVector<Complex64>,
    an: &DVector<Complex64>,
    wiretap: &ChannelVec,
    error_bound: f64,
    noise_eve: f64,
    m_e: usize,
) -> f64 {
    if !(w.norm_squared() > 0.0) {
        return 0.0;
    }
    let me = m_e as f64;
    let h0 = &wiretap.coefficients;
    let num = |h: &DVector<Complex64>| me * h.dotc(w).norm_sqr();
    let den = |h: &DVector<Complex64>| me * h.dotc(an).norm_sqr() + noise_eve;
    let ball = error_bound.max(0.0);
    let mut rho = num(h0) / den(h0);
    let reach = (h0.norm() + ball.sqrt()).powi(2);
    let tol = 1e-12 * (me * reach * w.norm_squared() + noise_eve);
    let mut gap = 0.0;
    for _ in 0..60 {
        let a = (w * w.adjoint() - (an * an.adjoint()).map(|z| z * rho)).map(|z| z * me);
        let b = &a * h0;
        let c0 = h0.dotc(&b).re - rho * noise_eve;
        let best = ball_max_quadratic(&a, &b, c0, ball);
        gap = best.value.max(0.0);
        if gap <= tol {
            break;
        }
        let h_star = h0 + &best.arg;
        let next = num(&h_star) / den(&h_star);
        if !(next > rho) {
            break;
        }
        rho = next;
    }
    (1.0 + rho + gap / noise_eve).log2()
}

/// Pure-probing design used when even the empty schedule fails numerically:
/// all power on the steering direction, which is the exact optimum of the
/// user-free slot program.
fn pure_sensing_fallback(num_users: usize, sensing: &SensingData, cfg: &AllocConfig) -> AllocResult {
    let a = &sensing.steering;
    let an = a * Complex64::new(cfg.p_max.sqrt() / a.norm(), 0.0);
    let probe_gain = cfg.p_max * a.norm_squared();
    let xi = sensing.mse_trace(probe_gain);
    AllocResult {
        precoders: PrecoderSet {
            schedule: vec![false; num_users],
            info: vec![None; num_users],
            an,
        },
        xi,
        deployed_xi: xi,
        objective: scheduling_objective(cfg, num_users, 0, xi),
        rates: vec![0.0; num_users],
        leakage_certs: vec![0.0; num_users],
        rank_one_ratios: vec![1.0],
        repaired: 0,
    }
}

fn prefix_report(k_tilde: usize, outcome: &SolveOutcome) -> PrefixReport {
    match outcome {
        SolveOutcome::Solved(res) => PrefixReport {
            k_tilde,
            objective: res.objective,
            xi: Some(res.xi),
            status: PrefixStatus::Solved,
            diagnostics: String::new(),
        },
        SolveOutcome::Infeasible => PrefixReport {
            k_tilde,
            objective: f64::NEG_INFINITY,
            xi: None,
            status: PrefixStatus::Infeasible,
            diagnostics: String::new(),
        },
        SolveOutcome::NumericalFailure(d) => PrefixReport {
            k_tilde,
            objective: f64::NEG_INFINITY,
            xi: None,
            status: PrefixStatus::NumericalFailure,
            diagnostics: d.clone(),
        },
    }
}

/// Picks the slot schedule: orders users by ascending eavesdropper
/// correlation, evaluates prefixes of that order and returns the argmax of
/// the scheduling objective.
///
/// Dropping the last user of a feasible prefix keeps it feasible (power and
/// interference only shrink; leakage and sensing rows do not change), so
/// feasibility is monotone in the prefix length. With `omega = 0` the
/// objective is the served share alone and the largest feasible prefix wins
/// outright, found here by binary search; with `omega > 0` every prefix is
/// solved, in parallel, and compared. Ties prefer serving more users.
pub fn schedule_users(
    channels: &[ChannelVec],
    wiretap: &ChannelVec,
    error_bound: f64,
    sensing: &SensingData,
    cfg: &AllocConfig,
) -> Result<ScheduleResult, AllocError> {
    cfg.validate()?;
    sensing.validate()?;
    let order = correlation_order(channels, wiretap)?;
    let k = channels.len();
    let make_inst = |kt: usize| SdpInstance {
        schedule: order[..kt].to_vec(),
        channels: channels.to_vec(),
        wiretap: wiretap.clone(),
        error_bound,
        sensing: sensing.clone(),
    };
    let mut reports: Vec<PrefixReport> = (0..=k)
        .map(|kt| PrefixReport {
            k_tilde: kt,
            objective: f64::NEG_INFINITY,
            xi: None,
            status: PrefixStatus::ImpliedInfeasible,
            diagnostics: String::new(),
        })
        .collect();
    let mut visited = vec![false; k + 1];
    let mut chosen: Option<Box<AllocResult>> = None;
    let mut chosen_kt = 0usize;
    if cfg.omega == 0.0 {
        let full = solve_given_schedule(&make_inst(k), cfg)?;
        reports[k] = prefix_report(k, &full);
        visited[k] = true;
        if let SolveOutcome::Solved(res) = full {
            chosen_kt = k;
            chosen = Some(res);
        } else if k > 0 {
            let (mut lo, mut hi) = (0usize, k - 1);
            while lo < hi {
                let mid = (lo + hi + 1) / 2;
                let out = solve_given_schedule(&make_inst(mid), cfg)?;
                reports[mid] = prefix_report(mid, &out);
                visited[mid] = true;
                if let SolveOutcome::Solved(res) = out {
                    chosen_kt = mid;
                    chosen = Some(res);
                    lo = mid;
                } else {
                    hi = mid - 1;
                }
            }
        }
        if chosen.is_none() {
            let out = solve_given_schedule(&make_inst(0), cfg)?;
            reports[0] = prefix_report(0, &out);
            visited[0] = true;
            if let SolveOutcome::Solved(res) = out {
                chosen_kt = 0;
                chosen = Some(res);
            }
        }
        if chosen.is_some() {
            for (kt, report) in reports.iter_mut().enumerate() {
                if !visited[kt] && kt < chosen_kt {
                    report.objective = scheduling_objective(cfg, k, kt, 0.0);
                    report.status = PrefixStatus::ImpliedFeasible;
                }
            }
        }
    } else {
        let outcomes: Vec<Result<SolveOutcome, AllocError>> = thread::scope(|s| {
            let handles: Vec<_> = (0..=k)
                .map(|kt| {
                    let inst = make_inst(kt);
                    s.spawn(move || solve_given_schedule(&inst, cfg))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("prefix solve thread panicked"))
                .collect()
        });
        for (kt, out) in outcomes.into_iter().enumerate() {
            let out = out?;
            reports[kt] = prefix_report(kt, &out);
            visited[kt] = true;
            if let SolveOutcome::Solved(res) = out {
                let better = chosen.as_ref().map_or(true, |c| res.objective >= c.objective);
                if better {
                    chosen_kt = kt;
                    chosen = Some(res);
                }
            }
        }
    }
    let _ = chosen_kt;
    let chosen = match chosen {
        Some(res) => *res,
        None => {
            // even the always-feasible empty schedule failed numerically;
            // deploy the closed-form pure-probing design instead
            let res = pure_sensing_fallback(k, sensing, cfg);
            let diagnostics =
                format!("deployed pure-probing fallback after: {}", reports[0].diagnostics);
            reports[0] = PrefixReport {
                k_tilde: 0,
                objective: res.objective,
                xi: Some(res.xi),
                status: PrefixStatus::NumericalFailure,
                diagnostics,
            };
            res
        }
    };
    let best = reports.iter().map(|r| r.objective).fold(f64::NEG_INFINITY, f64::max);
    assert!(
        chosen.objective + 1e-9 >= best,
        "chosen prefix must dominate every report ({} vs {best})",
        chosen.objective
    );
    Ok(ScheduleResult { chosen, order, reports })
}

/// Parameter offsets of the diagonal entries in the Hermitian layout.
fn diag_param_indices(r: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(r);
    let mut p = 0;
    for j in 0..r {
        out.push(p);
        p += 1 + 2 * (r - 1 - j);
    }
    out
}

/// Real basis of r x r Hermitian matrices matching the parameter layout:
/// per column j, the diagonal unit, then a symmetric and an antisymmetric
/// pair for each row below.
fn hermitian_basis(r: usize) -> Vec<DMatrix<Complex64>> {
    let mut out = Vec::with_capacity(r * r);
    for j in 0..r {
        let mut e = DMatrix::<Complex64>::zeros(r, r);
        e[(j, j)] = Complex64::new(1.0, 0.0);
        out.push(e);
        for i in j + 1..r {
            let mut s = DMatrix::<Complex64>::zeros(r, r);
            s[(i, j)] = Complex64::new(1.0, 0.0);
            s[(j, i)] = Complex64::new(1.0, 0.0);
            out.push(s);
            let mut t = DMatrix::<Complex64>::zeros(r, r);
            t[(i, j)] = Complex64::new(0.0, 1.0);
            t[(j, i)] = Complex64::new(0.0, -1.0);
            out.push(t);
        }
    }
    out
}

/// Hermitian matrix from its real parameter vector.
fn hermitian_from_params(x: &[f64], r: usize) -> DMatrix<Complex64> {
    debug_assert_eq!(x.len(), r * r);
    let mut w = DMatrix::<Complex64>::zeros(r, r);
    let mut p = 0;
    for j in 0..r {
        w[(j, j)] = Complex64::new(x[p], 0.0);
        p += 1;
        for i in j + 1..r {
            let z = Complex64::new(x[p], x[p + 1]);
            w[(i, j)] = z;
            w[(j, i)] = z.conj();
            p += 2;
        }
    }
    w
}

/// Coefficients c with `v^H W v = c . x` for any Hermitian `W` with
/// parameters `x` in the layout of [`hermitian_basis`].
fn quad_form_coeffs(v: &DVector<Complex64>) -> Vec<f64> {
    let r = v.len();
    let mut out = Vec::with_capacity(r * r);
    for j in 0..r {
        out.push(v[j].norm_sqr());
        for i in j + 1..r {
            let z = v[i].conj() * v[j];
            out.push(2.0 * z.re);
            out.push(-2.0 * z.im);
        }
    }
    out
}

/// Orthonormal basis of the span of `vectors` by modified Gram-Schmidt with
/// reorthogonalization; `pad` extra canonical directions are appended for
/// diagnostics, capped at the ambient dimension.
fn orthonormal_span(vectors: &[DVector<Complex64>], pad: usize) -> DMatrix<Complex64> {
    let m = vectors.first().map_or(0, |v| v.len());
    let mut cols: Vec<DVector<Complex64>> = Vec::new();
    for v in vectors {
        absorb(v, &mut cols);
    }
    let target = (cols.len() + pad).min(m);
    let mut axis = 0;
    while cols.len() < target && axis < m {
        let mut e = DVector::<Complex64>::zeros(m);
        e[axis] = Complex64::new(1.0, 0.0);
        absorb(&e, &mut cols);
        axis += 1;
    }
    assert!(!cols.is_empty(), "span must contain a nonzero direction");
    DMatrix::from_columns(&cols)
}

fn absorb(v: &DVector<Complex64>, cols: &mut Vec<DVector<Complex64>>) {
    let norm0 = v.norm();
    if !(norm0 > 0.0) {
        return;
    }
    let mut u = v.clone();
    // two projection passes keep the basis orthonormal to machine precision
    for _ in 0..2 {
        for q in cols.iter() {
            let c = q.dotc(&u);
            u -= q * c;
        }
    }
    let res = u.norm();
    if res > BASIS_RANK_TOL * norm0 {
        cols.push(u.unscale(res));
    }
}
