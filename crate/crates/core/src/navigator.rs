//! Per-slot flight planning for the jamming UAV.
//!
//! Each slot the vehicle picks one constant acceleration that steers it
//! towards a destination point blended between the user centroid and the
//! predicted opponent location. The pick minimizes the distance to that
//! point at the end of the slot subject to a speed cap, per-axis
//! acceleration caps, the arena box, and a minimum separation from the
//! opponent, with the box and separation enforced over an `L`-slot
//! lookahead so momentum cannot force a violation the solver never saw.
//!
//! [`plan_primary`] solves the hard-constrained program; when momentum has
//! already made it infeasible, [`plan_fallback`] trades violations against
//! penalty weights and always returns a plan. [`plan_slot`] chains the two.
//!
//! # Example
//!
//! ```
//! use isac_core::core_geometry::{KinematicState, Vec3};
//! use isac_core::ekf_tracker::{EvolutionModel, StateEstimate};
//! use isac_core::navigator::{destination_point, plan_slot, NavConfig};
//! use nalgebra::{Matrix6, Vector6};
//!
//! let cfg = NavConfig::new(0.5, 50.0);
//! let est_e = StateEstimate {
//!     mean: Vector6::new(400.0, 400.0, 60.0, 0.0, 0.0, 0.0),
//!     cov: Matrix6::identity(),
//! };
//! let gus = [Vec3::new(100.0, 100.0, 0.0), Vec3::new(300.0, 100.0, 0.0)];
//! let evolution = EvolutionModel::new(1.0, 0.1, 0.01);
//! let q_des = destination_point(&gus, cfg.z_min, cfg.lambda, &est_e.position());
//! let state_b = KinematicState::at_rest(Vec3::new(250.0, 250.0, 75.0));
//! let plan = plan_slot(&state_b, &est_e, &q_des, &cfg, &evolution).unwrap();
//! assert!(plan.feasible);
//! ```

use crate::conic_opt::{
    solve, Cone, ConicError, ConicProgram, ConstraintBlock, SolveStatus, SolverSettings,
    SparseMatrix,
};
use crate::core_geometry::{kinematic_propagate, KinematicState, Vec3};
use crate::ekf_tracker::{predict, EvolutionModel, StateEstimate};
use thiserror::Error;

/// Penalty weight that dominates the arena's few-hundred-meter distance
/// objective without drowning the solver's scaling.
pub const DEFAULT_PENALTY_WEIGHT: f64 = 10.0;

/// Slack below which a constraint counts as satisfied when flagging a plan
/// feasible (meters, meters per second).
pub const FEAS_TOL: f64 = 1e-5;

/// Errors from plan construction.
#[derive(Debug, Error)]
pub enum NavError {
    /// Configuration violated a structural invariant.
    #[error("invalid navigation config: {0}")]
    Config(&'static str),
    /// The cone program itself was rejected; indicates a builder bug.
    #[error(transparent)]
    Solver(#[from] ConicError),
}

/// How the minimum-separation requirement enters the program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CollisionMode {
    /// Keep the axis with the largest predicted separation under the
    /// zero-acceleration rollout at least `d_min` away, sign fixed by that
    /// rollout. A linear restriction of the exact keep-out region: any plan
    /// it admits really does keep the infinity-norm separation ≥ `d_min`.
    #[default]
    LargestAxisKeepOut,
    /// Bound all three axis separations by one auxiliary variable required
    /// to reach `d_min`. The bound can always be inflated, so this variant
    /// never restricts the trajectory; it is kept for comparison runs and
    /// honest reporting of what the weaker formulation permits.
    SharedUpperBound,
}

/// Which lookahead slots the speed cap is enforced at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpeedCapScope {
    /// Cap the speed at every slot of the lookahead, so a multi-slot plan
    /// never promises an un-flyable future speed.
    #[default]
    EveryHorizonSlot,
    /// Cap only the first slot. Kept for comparison runs.
    FirstSlotOnly,
}

/// Navigation parameters for one vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct NavConfig {
    /// Destination blend in (−1, 1): 0 targets the user centroid point,
    /// values near 1 chase the predicted opponent, negative values retreat
    /// past the centroid away from it.
    pub lambda: f64,
    /// Speed cap, m/s.
    pub v_max: f64,
    /// Per-axis acceleration caps, m/s².
    pub accel_cap: Vec3,
    /// Lower corner of the arena box.
    pub q_min: Vec3,
    /// Upper corner of the arena box.
    pub q_max: Vec3,
    /// Minimum allowed separation from the opponent, m.
    pub d_min: f64,
    /// Lookahead length in slots, ≥ 1.
    pub horizon: usize,
    /// Penalty weight on box violations in the fallback program.
    pub omega_box: f64,
    /// Penalty weight on separation violations in the fallback program.
    pub omega_collision: f64,
    /// Altitude of the user-centroid communication point, m.
    pub z_min: f64,
    /// Separation constraint formulation.
    pub collision_mode: CollisionMode,
    /// Speed-cap enforcement scope.
    pub speed_cap_scope: SpeedCapScope,
}

impl NavConfig {
    /// Table-default arena (500 m × 500 m, altitudes 50–100 m, 30 m/s cap,
    /// per-axis acceleration caps (4, 4, 2) m/s², 10 m separation) with the
    /// given destination blend and lookahead of `horizon` slots.
    pub fn new(lambda: f64, z_min: f64) -> Self {
        Self {
            lambda,
            v_max: 30.0,
            accel_cap: Vec3::new(4.0, 4.0, 2.0),
            q_min: Vec3::new(0.0, 0.0, 50.0),
            q_max: Vec3::new(500.0, 500.0, 100.0),
            d_min: 10.0,
            horizon: 5,
            omega_box: DEFAULT_PENALTY_WEIGHT,
            omega_collision: DEFAULT_PENALTY_WEIGHT,
            z_min,
            collision_mode: CollisionMode::default(),
            speed_cap_scope: SpeedCapScope::default(),
        }
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<(), NavError> {
        if !(self.lambda > -1.0 && self.lambda < 1.0) {
            return Err(NavError::Config("destination blend must lie in (-1, 1)"));
        }
        if !(self.v_max > 0.0) {
            return Err(NavError::Config("speed cap must be positive"));
        }
        if !self.accel_cap.iter().all(|&a| a > 0.0) {
            return Err(NavError::Config("acceleration caps must be positive"));
        }
        if !(0..3).all(|i| self.q_min[i] < self.q_max[i]) {
            return Err(NavError::Config("box corners must satisfy q_min < q_max"));
        }
        if !(self.d_min > 0.0) {
            return Err(NavError::Config("minimum separation must be positive"));
        }
        if self.horizon == 0 {
            return Err(NavError::Config("lookahead must cover at least one slot"));
        }
        if self.omega_box < 0.0 || self.omega_collision < 0.0 {
            return Err(NavError::Config("penalty weights must be non-negative"));
        }
        Ok(())
    }
}

/// Constraint-violation magnitudes of a planned trajectory, one entry per
/// lookahead slot, measured on the trajectory itself rather than on solver
/// slack variables so they stay honest under zero penalty weights.
#[derive(Debug, Clone, PartialEq)]
pub struct NavPenalties {
    /// Worst per-axis undershoot below the box floor corner, m.
    pub box_low: Vec<f64>,
    /// Worst per-axis overshoot above the box ceiling corner, m.
    pub box_high: Vec<f64>,
    /// Shortfall of the infinity-norm separation below `d_min`, m.
    pub collision: Vec<f64>,
}

impl NavPenalties {
    /// Largest violation across all slots and constraint families.
    pub fn max_violation(&self) -> f64 {
        self.box_low
            .iter()
            .chain(self.box_high.iter())
            .chain(self.collision.iter())
            .fold(0.0, |acc, &v| acc.max(v))
    }
}

/// One slot's navigation decision.
#[derive(Debug, Clone, PartialEq)]
pub struct NavPlan {
    /// Acceleration to apply this slot, m/s².
    pub acceleration: Vec3,
    /// Predicted own states at each lookahead slot under that acceleration.
    pub horizon: Vec<KinematicState>,
    /// True when the trajectory satisfies the speed cap, acceleration caps,
    /// box, and separation requirement within [`FEAS_TOL`].
    pub feasible: bool,
    /// Violation magnitudes of the returned trajectory.
    pub penalties: NavPenalties,
}

/// Destination point blended between the user-centroid communication point
/// (centroid raised to altitude `z_min`) and the predicted opponent
/// location: `(1 − λ)·q_com + λ·q_e`.
pub fn destination_point(
    gu_positions: &[Vec3],
    z_min: f64,
    lambda: f64,
    predicted_e: &Vec3,
) -> Vec3 {
    debug_assert!(!gu_positions.is_empty(), "destination needs at least one user");
    debug_assert!(lambda > -1.0 && lambda < 1.0, "blend outside (-1, 1)");
    let centroid = gu_positions.iter().sum::<Vec3>() / gu_positions.len() as f64;
    let q_com = centroid + Vec3::new(0.0, 0.0, z_min);
    q_com * (1.0 - lambda) + predicted_e * lambda
}

// Slot-indexed coefficients of the constant-acceleration rollout: position
// gains pos_coef(l)·a on top of the drift, velocity gains vel_coef(l)·a.
fn vel_coef(l: usize, delta: f64) -> f64 {
    (l as f64 + 1.0) * delta
}

fn pos_coef(l: usize, delta: f64) -> f64 {
    let t = vel_coef(l, delta);
    0.5 * t * t
}

/// Geometry shared by the primary and fallback programs: the drift rollout,
/// the opponent prediction, and the per-slot keep-out axis choice.
struct HorizonGeometry {
    delta: f64,
    p0: Vec3,
    v0: Vec3,
    /// Predicted opponent position at each lookahead slot.
    e_pos: Vec<Vec3>,
    /// Keep-out axis index and separation sign per slot, chosen at the
    /// zero-acceleration rollout so the choice is independent of the plan.
    keep_out: Vec<(usize, f64)>,
}

fn horizon_geometry(
    state_b: &KinematicState,
    est_e: &StateEstimate,
    cfg: &NavConfig,
    evolution: &EvolutionModel,
) -> Result<HorizonGeometry, NavError> {
    cfg.validate()?;
    let delta = evolution.slot_length();
    if !(delta > 0.0) {
        return Err(NavError::Config("evolution model must advance time"));
    }
    let mut e_pos = Vec::with_capacity(cfg.horizon);
    let mut keep_out = Vec::with_capacity(cfg.horizon);
    for l in 0..cfg.horizon {
        let e = predict(est_e, evolution, l + 1).position();
        let drift = kinematic_propagate(state_b, &Vec3::zeros(), l, delta).position;
        let sep = drift - e;
        let mut axis = 0;
        for j in 1..3 {
            if sep[j].abs() > sep[axis].abs() {
                axis = j;
            }
        }
        let sign = if sep[axis] >= 0.0 { 1.0 } else { -1.0 };
        e_pos.push(e);
        keep_out.push((axis, sign));
    }
    Ok(HorizonGeometry { delta, p0: state_b.position, v0: state_b.velocity, e_pos, keep_out })
}

impl HorizonGeometry {
    /// Drift position component `p0 + v0·(l+1)δ` on axis `j`.
    fn drift(&self, l: usize, j: usize) -> f64 {
        self.p0[j] + self.v0[j] * vel_coef(l, self.delta)
    }

    fn speed_cap_slots(&self, cfg: &NavConfig) -> usize {
        match cfg.speed_cap_scope {
            SpeedCapScope::EveryHorizonSlot => cfg.horizon,
            SpeedCapScope::FirstSlotOnly => 1,
        }
    }
}

// Acceleration variables occupy columns 0..3 and the distance epigraph
// column 3 in both programs; fallback slack columns start at 4.
const COL_ACCEL: usize = 0;
const COL_DIST: usize = 3;

/// Appends the distance-epigraph cone `‖q_des − q_b[n]‖ ≤ t` and the speed
/// cones, which are identical in the primary and fallback programs.
fn push_shared_cones(prog: &mut ConicProgram, geom: &HorizonGeometry, q_des: &Vec3, cfg: &NavConfig) {
    let n = prog.num_vars;
    let mut dist = SparseMatrix::new(4, n);
    let mut dist_rhs = vec![0.0; 4];
    dist.push(0, COL_DIST, -1.0);
    for j in 0..3 {
        dist.push(1 + j, COL_ACCEL + j, pos_coef(0, geom.delta));
        dist_rhs[1 + j] = q_des[j] - geom.drift(0, j);
    }
    prog.blocks.push(ConstraintBlock { cone: Cone::Soc(4), matrix: dist, rhs: dist_rhs });

    for l in 0..geom.speed_cap_slots(cfg) {
        let mut speed = SparseMatrix::new(4, n);
        let mut rhs = vec![cfg.v_max; 4];
        for j in 0..3 {
            speed.push(1 + j, COL_ACCEL + j, -vel_coef(l, geom.delta));
            rhs[1 + j] = geom.v0[j];
        }
        prog.blocks.push(ConstraintBlock { cone: Cone::Soc(4), matrix: speed, rhs });
    }
}

/// Row builder for one nonnegative-orthant block.
struct RowBlock {
    num_vars: usize,
    coeffs: Vec<(usize, usize, f64)>,
    rhs: Vec<f64>,
}

impl RowBlock {
    fn new(num_vars: usize) -> Self {
        Self { num_vars, coeffs: Vec::new(), rhs: Vec::new() }
    }

    /// Adds the row `rhs − Σ coeffs·x ≥ 0`.
    fn push(&mut self, rhs: f64, coeffs: &[(usize, f64)]) {
        let row = self.rhs.len();
        for &(col, val) in coeffs {
            self.coeffs.push((row, col, val));
        }
        self.rhs.push(rhs);
    }

    fn into_block(self) -> ConstraintBlock {
        let mut matrix = SparseMatrix::new(self.rhs.len(), self.num_vars);
        for (row, col, val) in self.coeffs {
            matrix.push(row, col, val);
        }
        ConstraintBlock { cone: Cone::Nonneg(self.rhs.len()), matrix, rhs: self.rhs }
    }
}

/// Adds the per-axis acceleration caps `|a_j| ≤ cap_j`.
fn push_accel_rows(rows: &mut RowBlock, cfg: &NavConfig) {
    for j in 0..3 {
        rows.push(cfg.accel_cap[j], &[(COL_ACCEL + j, 1.0)]);
        rows.push(cfg.accel_cap[j], &[(COL_ACCEL + j, -1.0)]);
    }
}

fn build_primary(geom: &HorizonGeometry, q_des: &Vec3, cfg: &NavConfig) -> ConicProgram {
    let num_vars = match cfg.collision_mode {
        CollisionMode::LargestAxisKeepOut => 4,
        CollisionMode::SharedUpperBound => 4 + cfg.horizon,
    };
    let mut prog = ConicProgram::new(num_vars);
    prog.objective[COL_DIST] = 1.0;
    push_shared_cones(&mut prog, geom, q_des, cfg);

    let mut rows = RowBlock::new(num_vars);
    push_accel_rows(&mut rows, cfg);
    for l in 0..cfg.horizon {
        let c = pos_coef(l, geom.delta);
        for j in 0..3 {
            rows.push(geom.drift(l, j) - cfg.q_min[j], &[(COL_ACCEL + j, -c)]);
            rows.push(cfg.q_max[j] - geom.drift(l, j), &[(COL_ACCEL + j, c)]);
        }
        match cfg.collision_mode {
            CollisionMode::LargestAxisKeepOut => {
                let (j, sign) = geom.keep_out[l];
                rows.push(
                    sign * (geom.drift(l, j) - geom.e_pos[l][j]) - cfg.d_min,
                    &[(COL_ACCEL + j, -sign * c)],
                );
            }
            CollisionMode::SharedUpperBound => {
                let bound = 4 + l;
                for j in 0..3 {
                    let gap = geom.e_pos[l][j] - geom.drift(l, j);
                    rows.push(-gap, &[(COL_ACCEL + j, -c), (bound, -1.0)]);
                    rows.push(gap, &[(COL_ACCEL + j, c), (bound, -1.0)]);
                }
                rows.push(-cfg.d_min, &[(bound, -1.0)]);
            }
        }
    }
    prog.blocks.push(rows.into_block());
    prog
}

fn build_fallback(geom: &HorizonGeometry, q_des: &Vec3, cfg: &NavConfig) -> ConicProgram {
    let slots = cfg.horizon;
    let per_slot = match cfg.collision_mode {
        CollisionMode::LargestAxisKeepOut => 3,
        CollisionMode::SharedUpperBound => 4,
    };
    let num_vars = 4 + per_slot * slots;
    let col_low = |l: usize| 4 + per_slot * l;
    let col_high = |l: usize| 4 + per_slot * l + 1;
    let col_coll = |l: usize| 4 + per_slot * l + 2;
    let col_bound = |l: usize| 4 + per_slot * l + 3;

    let mut prog = ConicProgram::new(num_vars);
    prog.objective[COL_DIST] = 1.0;
    for l in 0..slots {
        prog.objective[col_low(l)] = cfg.omega_box;
        prog.objective[col_high(l)] = cfg.omega_box;
        prog.objective[col_coll(l)] = cfg.omega_collision;
    }
    push_shared_cones(&mut prog, geom, q_des, cfg);

    let mut rows = RowBlock::new(num_vars);
    push_accel_rows(&mut rows, cfg);
    for l in 0..slots {
        let c = pos_coef(l, geom.delta);
        for j in 0..3 {
            // Box rows gain a shared per-slot slack on each side.
            rows.push(geom.drift(l, j) - cfg.q_min[j], &[(COL_ACCEL + j, -c), (col_low(l), -1.0)]);
            rows.push(cfg.q_max[j] - geom.drift(l, j), &[(COL_ACCEL + j, c), (col_high(l), -1.0)]);
        }
        rows.push(0.0, &[(col_low(l), -1.0)]);
        rows.push(0.0, &[(col_high(l), -1.0)]);
        rows.push(0.0, &[(col_coll(l), -1.0)]);
        match cfg.collision_mode {
            CollisionMode::LargestAxisKeepOut => {
                let (j, sign) = geom.keep_out[l];
                rows.push(
                    sign * (geom.drift(l, j) - geom.e_pos[l][j]) - cfg.d_min,
                    &[(COL_ACCEL + j, -sign * c), (col_coll(l), -1.0)],
                );
            }
            CollisionMode::SharedUpperBound => {
                for j in 0..3 {
                    let gap = geom.e_pos[l][j] - geom.drift(l, j);
                    rows.push(-gap, &[(COL_ACCEL + j, -c), (col_bound(l), -1.0)]);
                    rows.push(gap, &[(COL_ACCEL + j, c), (col_bound(l), -1.0)]);
                }
                rows.push(0.0, &[(col_bound(l), -1.0)]);
                rows.push(-cfg.d_min, &[(col_coll(l), -1.0), (col_bound(l), -1.0)]);
            }
        }
    }
    prog.blocks.push(rows.into_block());
    prog
}

/// Rolls the acceleration out over the lookahead and grades the result.
fn plan_from_acceleration(
    accel: Vec3,
    state_b: &KinematicState,
    geom: &HorizonGeometry,
    cfg: &NavConfig,
) -> NavPlan {
    let horizon: Vec<KinematicState> =
        (0..cfg.horizon).map(|l| kinematic_propagate(state_b, &accel, l, geom.delta)).collect();
    let mut penalties = NavPenalties {
        box_low: Vec::with_capacity(cfg.horizon),
        box_high: Vec::with_capacity(cfg.horizon),
        collision: Vec::with_capacity(cfg.horizon),
    };
    for (l, state) in horizon.iter().enumerate() {
        let p = state.position;
        let mut low: f64 = 0.0;
        let mut high: f64 = 0.0;
        let mut sep: f64 = 0.0;
        for j in 0..3 {
            low = low.max(cfg.q_min[j] - p[j]);
            high = high.max(p[j] - cfg.q_max[j]);
            sep = sep.max((p[j] - geom.e_pos[l][j]).abs());
        }
        penalties.box_low.push(low.max(0.0));
        penalties.box_high.push(high.max(0.0));
        penalties.collision.push((cfg.d_min - sep).max(0.0));
    }
    let speeds_ok = match cfg.speed_cap_scope {
        SpeedCapScope::EveryHorizonSlot => {
            horizon.iter().all(|s| s.velocity.norm() <= cfg.v_max + FEAS_TOL)
        }
        SpeedCapScope::FirstSlotOnly => horizon[0].velocity.norm() <= cfg.v_max + FEAS_TOL,
    };
    let accel_ok = (0..3).all(|j| accel[j].abs() <= cfg.accel_cap[j] + FEAS_TOL);
    let feasible = speeds_ok && accel_ok && penalties.max_violation() <= FEAS_TOL;
    NavPlan { acceleration: accel, horizon, feasible, penalties }
}

fn extract_accel(x: &[f64]) -> Vec3 {
    Vec3::new(x[COL_ACCEL], x[COL_ACCEL + 1], x[COL_ACCEL + 2])
}

/// Solves the hard-constrained program for one slot. Returns `Ok(None)`
/// when no acceleration satisfies every constraint over the lookahead, in
/// which case the caller should fall through to [`plan_fallback`].
pub fn plan_primary(
    state_b: &KinematicState,
    est_e: &StateEstimate,
    q_des: &Vec3,
    cfg: &NavConfig,
    evolution: &EvolutionModel,
) -> Result<Option<NavPlan>, NavError> {
    let geom = horizon_geometry(state_b, est_e, cfg, evolution)?;
    let prog = build_primary(&geom, q_des, cfg);
    let sol = solve(&prog, &SolverSettings::default())?;
    match sol.status {
        SolveStatus::Optimal => {
            Ok(Some(plan_from_acceleration(extract_accel(&sol.x), state_b, &geom, cfg)))
        }
        // Certified infeasibility and numerical collapse both mean no
        // trustworthy hard-constrained plan exists; let the caller fall
        // through to the penalty program.
        _ => Ok(None),
    }
}

/// Solves the penalty program, which keeps the speed and acceleration caps
/// hard and trades box or separation violations against their weights.
/// Always yields a plan: if the solver cannot, the zero-acceleration
/// emergency plan is returned with its violations reported.
pub fn plan_fallback(
    state_b: &KinematicState,
    est_e: &StateEstimate,
    q_des: &Vec3,
    cfg: &NavConfig,
    evolution: &EvolutionModel,
) -> Result<NavPlan, NavError> {
    let geom = horizon_geometry(state_b, est_e, cfg, evolution)?;
    let prog = build_fallback(&geom, q_des, cfg);
    let sol = solve(&prog, &SolverSettings::default())?;
    let accel = match sol.status {
        SolveStatus::Optimal => extract_accel(&sol.x),
        status => {
            eprintln!(
                "navigator: penalty program ended with {status:?} ({}); \
                 issuing zero-acceleration emergency plan",
                sol.diagnostics
            );
            Vec3::zeros()
        }
    };
    Ok(plan_from_acceleration(accel, state_b, &geom, cfg))
}

/// One-slot decision: the hard-constrained plan when it exists, otherwise
/// the penalty compromise.
pub fn plan_slot(
    state_b: &KinematicState,
    est_e: &StateEstimate,
    q_des: &Vec3,
    cfg: &NavConfig,
    evolution: &EvolutionModel,
) -> Result<NavPlan, NavError> {
    match plan_primary(state_b, est_e, q_des, cfg, evolution)? {
        Some(plan) => Ok(plan),
        None => plan_fallback(state_b, est_e, q_des, cfg, evolution),
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix6, Vector6};
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn estimate(pos: Vec3, vel: Vec3) -> StateEstimate {
        StateEstimate {
            mean: Vector6::new(pos.x, pos.y, pos.z, vel.x, vel.y, vel.z),
            cov: Matrix6::identity(),
        }
    }

    fn model() -> EvolutionModel {
        EvolutionModel::new(1.0, 0.1, 0.01)
    }

    // 1. Hand arithmetic: two users at (0,0,0) and (100,0,0), floor 50 m,
    //    blend 0.5 towards an opponent at (200,0,100) lands at (125,0,75).
    #[test]
    fn destination_matches_hand_values() {
        let gus = [Vec3::new(0.0, 0.0, 0.0), Vec3::new(100.0, 0.0, 0.0)];
        let e = Vec3::new(200.0, 0.0, 100.0);
        let q = destination_point(&gus, 50.0, 0.5, &e);
        assert!((q - Vec3::new(125.0, 0.0, 75.0)).norm() < 1e-12);

        // Blend 0 is the centroid point; blend 0.95 sits 95% of the way out.
        let q_com = destination_point(&gus, 50.0, 0.0, &e);
        assert!((q_com - Vec3::new(50.0, 0.0, 50.0)).norm() < 1e-12);
        let q95 = destination_point(&gus, 50.0, 0.95, &e);
        assert!((q95 - q_com - (e - q_com) * 0.95).norm() < 1e-12);
    }

    // 2. At rest exactly at the destination with everything slack the
    //    optimal move is not to move.
    #[test]
    fn rest_at_destination_stays_put() {
        let cfg = NavConfig::new(0.5, 50.0);
        let state = KinematicState::at_rest(Vec3::new(250.0, 250.0, 75.0));
        let est = estimate(Vec3::new(450.0, 450.0, 90.0), Vec3::zeros());
        let plan = plan_primary(&state, &est, &state.position, &cfg, &model())
            .unwrap()
            .expect("slack instance must be feasible");
        assert!(plan.acceleration.norm() < 1e-5, "accel {:?}", plan.acceleration);
        assert!(plan.feasible);
        assert_eq!(plan.penalties.max_violation(), 0.0);
        assert_eq!(plan.horizon.len(), cfg.horizon);
    }

    // 3. A target far along +x saturates the x acceleration cap and leaves
    //    the other axes untouched; horizon states follow the rollout. The
    //    cap-pinned axis is sharp; the transverse axes sit in a flat valley
    //    of the distance objective (curvature ~1/range), so their wiggle
    //    room at the solver's gap tolerance scales like sqrt(range·gap).
    #[test]
    fn far_target_saturates_axis_cap() {
        let mut cfg = NavConfig::new(0.5, 50.0);
        cfg.horizon = 1;
        cfg.q_max = Vec3::new(5000.0, 500.0, 100.0);
        let state = KinematicState::at_rest(Vec3::new(100.0, 250.0, 75.0));
        let q_des = Vec3::new(1100.0, 250.0, 75.0);
        let est = estimate(Vec3::new(100.0, 250.0, 75.0 + 200.0), Vec3::zeros());
        let plan = plan_primary(&state, &est, &q_des, &cfg, &model())
            .unwrap()
            .expect("feasible");
        assert!((plan.acceleration.x - cfg.accel_cap.x).abs() < 1e-4, "{:?}", plan.acceleration);
        assert!(plan.acceleration.y.abs() < 0.1, "{:?}", plan.acceleration);
        assert!(plan.acceleration.z.abs() < 0.1, "{:?}", plan.acceleration);
        let p = plan.horizon[0].position;
        assert!((p.x - (100.0 + 0.5 * cfg.accel_cap.x)).abs() < 1e-3);
    }

    // 4. Boundary overrun: at the ceiling with a climb rate no brake can
    //    cancel within the lookahead the hard program is infeasible and the
    //    fallback brakes as hard as the caps allow, reporting the overshoot.
    #[test]
    fn ceiling_overrun_falls_back_with_reported_slack() {
        let cfg = NavConfig::new(0.5, 50.0);
        let state = KinematicState {
            position: Vec3::new(250.0, 250.0, 100.0),
            velocity: Vec3::new(0.0, 0.0, 21.0),
        };
        let est = estimate(Vec3::new(50.0, 50.0, 60.0), Vec3::zeros());
        let q_des = Vec3::new(250.0, 250.0, 75.0);
        assert!(plan_primary(&state, &est, &q_des, &cfg, &model()).unwrap().is_none());

        let plan = plan_fallback(&state, &est, &q_des, &cfg, &model()).unwrap();
        assert!(!plan.feasible);
        assert!((plan.acceleration.z + cfg.accel_cap.z).abs() < 1e-4, "{:?}", plan.acceleration);
        assert!(plan.penalties.box_high[0] > 1.0);
        assert!(plan.penalties.max_violation() > 1.0);
    }

    // 5. Consistency oracle: wherever the hard program is feasible the
    //    penalty program must reproduce its decision (penalties all zero).
    #[test]
    fn fallback_agrees_with_primary_on_feasible_instances() {
        let cfg = NavConfig::new(0.5, 50.0);
        let evo = model();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut checked = 0;
        for _ in 0..100 {
            let state = KinematicState {
                position: Vec3::new(
                    rng.random_range(100.0..400.0),
                    rng.random_range(100.0..400.0),
                    rng.random_range(60.0..90.0),
                ),
                velocity: Vec3::new(
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-2.0..2.0),
                ),
            };
            let e_pos = Vec3::new(
                rng.random_range(0.0..500.0),
                rng.random_range(0.0..500.0),
                rng.random_range(55.0..100.0),
            );
            if (e_pos - state.position).norm() < 40.0 {
                continue;
            }
            let est = estimate(
                e_pos,
                Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), 0.0),
            );
            let q_des = Vec3::new(
                rng.random_range(0.0..500.0),
                rng.random_range(0.0..500.0),
                rng.random_range(50.0..100.0),
            );
            let Some(primary) = plan_primary(&state, &est, &q_des, &cfg, &evo).unwrap() else {
                continue;
            };
            let fallback = plan_fallback(&state, &est, &q_des, &cfg, &evo).unwrap();
            // Accelerations agree up to the objective's flat-valley width;
            // the achieved distance itself is pinned by the gap tolerance.
            let gap = (primary.acceleration - fallback.acceleration).amax();
            assert!(gap < 2e-2, "accel mismatch {gap:.2e} at {state:?}");
            let d_primary = (q_des - primary.horizon[0].position).norm();
            let d_fallback = (q_des - fallback.horizon[0].position).norm();
            assert!((d_primary - d_fallback).abs() < 1e-3, "{d_primary} vs {d_fallback}");
            assert!(fallback.penalties.max_violation() <= FEAS_TOL);
            checked += 1;
        }
        assert!(checked >= 60, "only {checked} feasible draws");
    }

    // 6. With zero penalty weights the fallback ignores box and separation
    //    entirely, matching a huge-box unconstrained-in-penalty solve.
    #[test]
    fn zero_weights_reduce_to_distance_minimization() {
        let mut cfg = NavConfig::new(0.5, 50.0);
        cfg.omega_box = 0.0;
        cfg.omega_collision = 0.0;
        let state = KinematicState {
            position: Vec3::new(250.0, 250.0, 100.0),
            velocity: Vec3::new(0.0, 0.0, 21.0),
        };
        let est = estimate(Vec3::new(50.0, 50.0, 60.0), Vec3::zeros());
        let q_des = Vec3::new(250.0, 250.0, 130.0);
        let plan = plan_fallback(&state, &est, &q_des, &cfg, &model()).unwrap();

        let mut free = cfg.clone();
        free.q_min = Vec3::new(-1e6, -1e6, -1e6);
        free.q_max = Vec3::new(1e6, 1e6, 1e6);
        free.d_min = 1e-9;
        let unconstrained = plan_primary(&state, &est, &q_des, &free, &model())
            .unwrap()
            .expect("huge box is feasible");
        let gap = (plan.acceleration - unconstrained.acceleration).amax();
        assert!(gap < 2e-2, "accel mismatch {gap:.2e}");
    }

    // 7. Separation formulations differ exactly as designed: flying towards
    //    the opponent, the keep-out restriction brakes to hold the 10 m
    //    floor while the shared-bound variant happily plans straight past it.
    #[test]
    fn collision_modes_differ_on_approach() {
        let mut cfg = NavConfig::new(0.5, 50.0);
        cfg.horizon = 3;
        let state = KinematicState {
            position: Vec3::new(200.0, 250.0, 75.0),
            velocity: Vec3::new(10.0, 0.0, 0.0),
        };
        let est = estimate(Vec3::new(235.0, 252.0, 75.0), Vec3::zeros());
        let q_des = Vec3::new(400.0, 250.0, 75.0);

        let keep_out = plan_primary(&state, &est, &q_des, &cfg, &model())
            .unwrap()
            .expect("braking keeps the floor reachable");
        assert!(keep_out.acceleration.x < 0.0, "{:?}", keep_out.acceleration);
        assert!(
            keep_out.penalties.collision.iter().all(|&v| v <= 1e-3),
            "{:?}",
            keep_out.penalties.collision
        );

        cfg.collision_mode = CollisionMode::SharedUpperBound;
        let pass_through = plan_primary(&state, &est, &q_des, &cfg, &model())
            .unwrap()
            .expect("shared bound never restricts");
        assert!((pass_through.acceleration.x - cfg.accel_cap.x).abs() < 1e-4);
        assert!(!pass_through.feasible);
        assert!(pass_through.penalties.collision.iter().any(|&v| v > 1.0));
    }

    // 8. Speed-cap scope: over a 5-slot lookahead the per-slot cap limits
    //    sustained acceleration to v_max/(Lδ), the first-slot variant to the
    //    axis cap.
    #[test]
    fn speed_cap_scope_changes_admissible_accel() {
        let mut cfg = NavConfig::new(0.5, 50.0);
        cfg.v_max = 10.0;
        cfg.q_max = Vec3::new(5000.0, 500.0, 100.0);
        let state = KinematicState::at_rest(Vec3::new(100.0, 250.0, 75.0));
        let est = estimate(Vec3::new(100.0, 250.0, 275.0), Vec3::zeros());
        let q_des = Vec3::new(2000.0, 250.0, 75.0);

        let capped = plan_primary(&state, &est, &q_des, &cfg, &model())
            .unwrap()
            .expect("feasible");
        assert!((capped.acceleration.x - 2.0).abs() < 1e-4, "{:?}", capped.acceleration);

        cfg.speed_cap_scope = SpeedCapScope::FirstSlotOnly;
        let greedy = plan_primary(&state, &est, &q_des, &cfg, &model())
            .unwrap()
            .expect("feasible");
        assert!((greedy.acceleration.x - cfg.accel_cap.x).abs() < 1e-4, "{:?}", greedy.acceleration);
    }

    // 9. A starting speed beyond what the caps can ever cancel makes even
    //    the penalty program infeasible; the emergency plan coasts and says
    //    so.
    #[test]
    fn emergency_plan_coasts_when_penalty_program_fails() {
        let cfg = NavConfig::new(0.5, 50.0);
        let state = KinematicState {
            position: Vec3::new(250.0, 250.0, 75.0),
            velocity: Vec3::new(80.0, 0.0, 0.0),
        };
        let est = estimate(Vec3::new(50.0, 450.0, 60.0), Vec3::zeros());
        let q_des = Vec3::new(250.0, 250.0, 75.0);
        let plan = plan_fallback(&state, &est, &q_des, &cfg, &model()).unwrap();
        assert_eq!(plan.acceleration, Vec3::zeros());
        assert!(!plan.feasible);
    }

    // 10. More lookahead only removes options: any state the 5-slot program
    //     accepts, the 1-slot program accepts too.
    #[test]
    fn longer_lookahead_is_more_cautious() {
        let mut long = NavConfig::new(0.5, 50.0);
        long.horizon = 5;
        let mut short = long.clone();
        short.horizon = 1;
        let evo = model();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut long_feasible = 0;
        let mut long_infeasible = 0;
        for _ in 0..200 {
            let state = KinematicState {
                position: Vec3::new(
                    rng.random_range(0.0..500.0),
                    rng.random_range(0.0..500.0),
                    rng.random_range(50.0..100.0),
                ),
                velocity: Vec3::new(
                    rng.random_range(-20.0..20.0),
                    rng.random_range(-20.0..20.0),
                    rng.random_range(-8.0..8.0),
                ),
            };
            let est = estimate(
                Vec3::new(
                    rng.random_range(0.0..500.0),
                    rng.random_range(0.0..500.0),
                    rng.random_range(50.0..100.0),
                ),
                Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), 0.0),
            );
            let q_des = Vec3::new(250.0, 250.0, 75.0);
            let with_long = plan_primary(&state, &est, &q_des, &long, &evo).unwrap();
            if with_long.is_some() {
                long_feasible += 1;
                assert!(
                    plan_primary(&state, &est, &q_des, &short, &evo).unwrap().is_some(),
                    "5-slot feasible but 1-slot infeasible at {state:?}"
                );
            } else {
                long_infeasible += 1;
            }
        }
        // The sample must actually exercise both outcomes.
        assert!(long_feasible > 20 && long_infeasible > 20, "{long_feasible}/{long_infeasible}");
    }

    // 11. Same inputs, same plan, bit for bit.
    #[test]
    fn planning_is_deterministic() {
        let cfg = NavConfig::new(0.5, 50.0);
        let state = KinematicState {
            position: Vec3::new(420.0, 250.0, 95.0),
            velocity: Vec3::new(12.0, -3.0, 2.0),
        };
        let est = estimate(Vec3::new(430.0, 260.0, 90.0), Vec3::new(1.0, 1.0, 0.0));
        let q_des = Vec3::new(100.0, 100.0, 60.0);
        let a = plan_slot(&state, &est, &q_des, &cfg, &model()).unwrap();
        let b = plan_slot(&state, &est, &q_des, &cfg, &model()).unwrap();
        assert_eq!(a.acceleration.x.to_bits(), b.acceleration.x.to_bits());
        assert_eq!(a.acceleration.y.to_bits(), b.acceleration.y.to_bits());
        assert_eq!(a.acceleration.z.to_bits(), b.acceleration.z.to_bits());
        assert_eq!(a.penalties, b.penalties);
    }

    // 12. Config invariants are enforced before any solve.
    #[test]
    fn config_validation_rejects_bad_fields() {
        let state = KinematicState::at_rest(Vec3::new(250.0, 250.0, 75.0));
        let est = estimate(Vec3::new(50.0, 50.0, 60.0), Vec3::zeros());
        let q_des = Vec3::new(250.0, 250.0, 75.0);
        for breaker in [
            |c: &mut NavConfig| c.lambda = 1.0,
            |c: &mut NavConfig| c.horizon = 0,
            |c: &mut NavConfig| c.d_min = 0.0,
            |c: &mut NavConfig| c.q_min.x = 600.0,
            |c: &mut NavConfig| c.omega_box = -1.0,
        ] {
            let mut cfg = NavConfig::new(0.5, 50.0);
            breaker(&mut cfg);
            let res = plan_primary(&state, &est, &q_des, &cfg, &model());
            assert!(matches!(res, Err(NavError::Config(_))));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        // 13. Any accepted plan respects the speed cap, the box, and the
        //     separation floor at every lookahead slot.
        #[test]
        fn feasible_plans_respect_all_constraints(
            px in 20.0..480.0, py in 20.0..480.0, pz in 55.0..95.0,
            vx in -10.0..10.0, vy in -10.0..10.0, vz in -4.0..4.0,
            ex in 0.0..500.0, ey in 0.0..500.0, ez in 50.0..100.0,
            dx in 0.0..500.0, dy in 0.0..500.0, dz in 50.0..100.0,
            horizon in 1usize..5,
        ) {
            let mut cfg = NavConfig::new(0.5, 50.0);
            cfg.horizon = horizon;
            let state = KinematicState {
                position: Vec3::new(px, py, pz),
                velocity: Vec3::new(vx, vy, vz),
            };
            let est = estimate(Vec3::new(ex, ey, ez), Vec3::zeros());
            let q_des = Vec3::new(dx, dy, dz);
            if let Some(plan) = plan_primary(&state, &est, &q_des, &cfg, &model()).unwrap() {
                prop_assert!(plan.feasible);
                for (l, s) in plan.horizon.iter().enumerate() {
                    prop_assert!(s.velocity.norm() <= cfg.v_max + FEAS_TOL);
                    for j in 0..3 {
                        prop_assert!(s.position[j] >= cfg.q_min[j] - FEAS_TOL);
                        prop_assert!(s.position[j] <= cfg.q_max[j] + FEAS_TOL);
                    }
                    let e = predict(&est, &model(), l + 1).position();
                    let sep = (s.position - e).amax();
                    prop_assert!(sep >= cfg.d_min - FEAS_TOL, "sep {sep} at slot {l}");
                }
            }
        }
    }
}
