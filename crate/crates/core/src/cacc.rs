//! Cooperative adaptive cruise control: gap and speed tracking against a
//! forecast preceding vehicle, with hard collision avoidance and a
//! no-braking terminal safe set.
//!
//! The finite-horizon problem is solved by dynamic programming on a
//! quantized (gap, speed) grid. Both grid axes are augmented with the exact
//! measured state so the first transition starts from the true state, and
//! every transition snaps to the grid with stage costs priced on the
//! snapped successor — the same discretization contract as the powertrain
//! solver, which keeps exhaustive enumeration bit-comparable.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{resistance_force, Environment, VehicleParams};

#[derive(Debug, Error)]
pub enum CaccError {
    #[error("no admissible input sequence")]
    Infeasible,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Gap to the predecessor and ego speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaccState {
    pub gap: f64,
    pub speed: f64,
}

/// Wheel force and brake force (both N, brake force non-negative).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaccInput {
    pub wheel_force: f64,
    pub brake_force: f64,
}

/// Shared forecast of the preceding vehicle: its current speed and an
/// acceleration sequence. Implied speeds are clamped at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadForecast {
    pub current_speed: f64,
    pub accels: Vec<f64>,
}

impl LeadForecast {
    pub fn horizon(&self) -> usize {
        self.accels.len()
    }

    /// Speeds implied by Euler integration of the accelerations, clamped at
    /// zero; length `horizon() + 1`.
    pub fn speeds(&self, t_s: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.accels.len() + 1);
        let mut v = self.current_speed.max(0.0);
        out.push(v);
        for a in &self.accels {
            v = (v + t_s * a).max(0.0);
            out.push(v);
        }
        out
    }

    pub fn validate(&self) -> Result<(), CaccError> {
        if self.current_speed < 0.0 || !self.current_speed.is_finite() {
            return Err(CaccError::InvalidInput("lead speed must be finite and >= 0".into()));
        }
        if self.accels.iter().any(|a| !a.is_finite()) {
            return Err(CaccError::InvalidInput("lead accelerations must be finite".into()));
        }
        Ok(())
    }
}

/// How much of the lead forecast the controller is allowed to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaccMode {
    /// Only the current lead speed is known: constant-speed hold.
    Acc,
    /// Current speed and acceleration: one accel step, then hold.
    Cacc,
    /// The full shared acceleration forecast.
    CaccForecast,
}

/// Desired-gap rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpacingPolicyKind {
    ConstantDistance,
    ConstantHeadway,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpacingPolicy {
    pub kind: SpacingPolicyKind,
    /// Constant desired distance, or the headway offset (m).
    pub desired_distance: f64,
    /// Time headway (s); used by the headway policy only.
    pub headway: f64,
    /// Hard minimum gap (m), enforced as a constraint.
    pub hard_min: f64,
}

impl SpacingPolicy {
    pub fn validate(&self) -> Result<(), CaccError> {
        if !(self.hard_min > 0.0) {
            return Err(CaccError::InvalidInput("hard_min must be positive".into()));
        }
        if matches!(self.kind, SpacingPolicyKind::ConstantHeadway) && !(self.headway > 0.0) {
            return Err(CaccError::InvalidInput("headway must be positive".into()));
        }
        Ok(())
    }
}

/// Desired gap for the current ego speed.
pub fn reference_gap(policy: &SpacingPolicy, v: f64) -> f64 {
    match policy.kind {
        SpacingPolicyKind::ConstantDistance => policy.desired_distance,
        SpacingPolicyKind::ConstantHeadway => policy.headway * v + policy.desired_distance,
    }
}

/// Actuator and speed limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaccLimits {
    pub wheel_force_min: f64,
    pub wheel_force_max: f64,
    pub brake_force_max: f64,
    pub speed_max: f64,
}

impl Default for CaccLimits {
    fn default() -> Self {
        // synthetic actuator set; the source formulation leaves it open
        Self {
            wheel_force_min: 0.0,
            wheel_force_max: 4_000.0,
            brake_force_max: 8_000.0,
            speed_max: 40.0,
        }
    }
}

/// Stage-cost weights: effort * (F_w^2 + F_b^2) + speed * (v* - v)^2
/// + gap * (d* - d)^2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaccWeights {
    pub effort: f64,
    pub speed: f64,
    pub gap: f64,
}

impl Default for CaccWeights {
    fn default() -> Self {
        Self {
            effort: 1e-4,
            speed: 1.0,
            gap: 0.5,
        }
    }
}

/// Grid and quantization resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaccGridConfig {
    pub gap_max: f64,
    pub gap_points: usize,
    pub speed_points: usize,
    pub wheel_levels: usize,
    pub brake_levels: usize,
}

impl Default for CaccGridConfig {
    fn default() -> Self {
        Self {
            gap_max: 120.0,
            gap_points: 61,
            speed_points: 41,
            wheel_levels: 9,
            brake_levels: 3,
        }
    }
}

/// Reference speed source for the tracking term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ReferenceSpeed {
    Constant(f64),
    /// Track the predicted lead speed.
    Lead,
}

/// Full problem description for one horizon.
#[derive(Debug, Clone)]
pub struct CaccProblem {
    pub vehicle: VehicleParams,
    pub env: Environment,
    /// Constant road grade over the horizon (rad).
    pub grade: f64,
    pub policy: SpacingPolicy,
    pub limits: CaccLimits,
    pub weights: CaccWeights,
    pub grid: CaccGridConfig,
    pub reference: ReferenceSpeed,
    pub mode: CaccMode,
    /// Planning horizon (steps); the lead forecast must be strictly longer.
    pub horizon: usize,
    pub t_s: f64,
}

#[derive(Debug, Clone)]
pub struct CaccSolution {
    pub inputs: Vec<CaccInput>,
    /// Snapped predicted trajectory, length horizon + 1 (exact root first).
    pub states: Vec<CaccState>,
    pub cost: f64,
    /// Lead speeds the controller assumed, length = forecast horizon + 1.
    pub lead_speeds: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct CaccStep {
    pub input: CaccInput,
    /// True when the horizon was infeasible and maximum braking was applied.
    pub fallback: bool,
}

/// True iff, starting from `x_n`, the ego can keep the gap at or above
/// `hard_min` over the remaining lead forecast without braking, with wheel
/// force restricted to `[wheel_force_min, F_f(v)]`. Implemented as a greedy
/// minimum-force rollout: the all-minimum-force sequence produces the
/// pointwise largest gap, so it is a complete witness, not a heuristic.
#[allow(clippy::too_many_arguments)]
pub fn terminal_safe_set(
    x_n: &CaccState,
    lead_speeds_after: &[f64],
    vehicle: &VehicleParams,
    env: &Environment,
    grade: f64,
    limits: &CaccLimits,
    hard_min: f64,
    t_s: f64,
) -> bool {
    let mut d = x_n.gap;
    let mut v = x_n.speed;
    if d < hard_min {
        return false;
    }
    for &v_p in lead_speeds_after {
        let f_f = resistance_force(v, grade, vehicle, env, vehicle.drag_base);
        if limits.wheel_force_min > f_f {
            // even minimum throttle accelerates (e.g. steep descent): no
            // brake-free witness exists
            return false;
        }
        let f_w = limits.wheel_force_min;
        d += t_s * (v_p - v);
        v = (v + t_s / vehicle.mass * (f_w - f_f)).max(0.0);
        if d < hard_min {
            return false;
        }
    }
    true
}

/// Grid axis: evenly spaced points plus the exact root value.
fn axis(lo: f64, hi: f64, n: usize, root: f64) -> Vec<f64> {
    let n = n.max(2);
    let mut g: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    if root >= lo && root <= hi {
        g.push(root);
    }
    g.sort_by(|a, b| a.partial_cmp(b).unwrap());
    g.dedup();
    g
}

/// Nearest index with ties to the lower point.
fn snap(grid: &[f64], x: f64) -> usize {
    let hi = grid.partition_point(|&g| g < x);
    if hi == 0 {
        return 0;
    }
    if hi == grid.len() {
        return grid.len() - 1;
    }
    if x - grid[hi - 1] <= grid[hi] - x {
        hi - 1
    } else {
        hi
    }
}

pub struct CaccOcp;

impl CaccOcp {
    /// Lead speeds the controller may assume under the configured mode,
    /// length `forecast.horizon() + 1`.
    pub fn predicted_lead_speeds(problem: &CaccProblem, lead: &LeadForecast, t_s: f64) -> Vec<f64> {
        match problem.mode {
            CaccMode::CaccForecast => lead.speeds(t_s),
            CaccMode::Acc => vec![lead.current_speed.max(0.0); lead.horizon() + 1],
            CaccMode::Cacc => {
                let mut out = Vec::with_capacity(lead.horizon() + 1);
                let mut v = lead.current_speed.max(0.0);
                out.push(v);
                if let Some(a0) = lead.accels.first() {
                    v = (v + t_s * a0).max(0.0);
                }
                for _ in 0..lead.horizon() {
                    out.push(v);
                }
                out
            }
        }
    }

    /// Candidate input set at ego speed `v`: quantized wheel-force levels
    /// plus the exact speed-hold force, crossed with quantized brake levels.
    pub fn input_candidates(problem: &CaccProblem, v: f64) -> Vec<CaccInput> {
        let lim = &problem.limits;
        let nw = problem.grid.wheel_levels.max(2);
        let mut wheel: Vec<f64> = (0..nw)
            .map(|i| {
                lim.wheel_force_min
                    + (lim.wheel_force_max - lim.wheel_force_min) * i as f64 / (nw - 1) as f64
            })
            .collect();
        let hold = resistance_force(v, problem.grade, &problem.vehicle, &problem.env, problem.vehicle.drag_base);
        if hold >= lim.wheel_force_min && hold <= lim.wheel_force_max {
            wheel.push(hold);
        }
        wheel.sort_by(|a, b| a.partial_cmp(b).unwrap());
        wheel.dedup();
        let nb = problem.grid.brake_levels.max(1);
        let mut brake = Vec::with_capacity(nb);
        if nb == 1 {
            brake.push(0.0);
        } else {
            for i in 0..nb {
                brake.push(lim.brake_force_max * i as f64 / (nb - 1) as f64);
            }
        }
        let mut out = Vec::with_capacity(wheel.len() * brake.len());
        for &f_b in &brake {
            for &f_w in &wheel {
                out.push(CaccInput {
                    wheel_force: f_w,
                    brake_force: f_b,
                });
            }
        }
        out
    }

    /// Ego transition of the discretized model: returns the continuous
    /// successor before snapping, or None when it violates the state set.
    pub fn transition(problem: &CaccProblem, d: f64, v: f64, v_p: f64, input: &CaccInput) -> Option<(f64, f64)> {
        let f_f = resistance_force(v, problem.grade, &problem.vehicle, &problem.env, problem.vehicle.drag_base);
        let v_next = v + problem.t_s / problem.vehicle.mass * (input.wheel_force - input.brake_force - f_f);
        let v_next = v_next.max(0.0);
        if v_next > problem.limits.speed_max {
            return None;
        }
        let d_next = d + problem.t_s * (v_p - v);
        if d_next < problem.policy.hard_min {
            return None;
        }
        Some((d_next, v_next))
    }

    /// Stage cost of applying `input`: effort on the input, tracking terms
    /// on the (snapped) successor state, so even the final input pays for
    /// the error it causes.
    pub fn stage_cost(problem: &CaccProblem, d_next: f64, v_next: f64, v_ref_next: f64, input: &CaccInput) -> f64 {
        let w = &problem.weights;
        let d_ref = reference_gap(&problem.policy, v_next);
        w.effort * (input.wheel_force * input.wheel_force + input.brake_force * input.brake_force)
            + w.speed * (v_ref_next - v_next) * (v_ref_next - v_next)
            + w.gap * (d_ref - d_next) * (d_ref - d_next)
    }

    /// Solve one horizon. The reported cost is the root Bellman value.
    pub fn solve(problem: &CaccProblem, x_t: &CaccState, lead: &LeadForecast) -> Result<CaccSolution, CaccError> {
        lead.validate()?;
        problem.policy.validate()?;
        if problem.horizon == 0 {
            return Err(CaccError::InvalidInput("horizon must be at least 1".into()));
        }
        if lead.horizon() <= problem.horizon {
            return Err(CaccError::InvalidInput(
                "lead forecast must be strictly longer than the horizon".into(),
            ));
        }
        if x_t.gap < problem.policy.hard_min || x_t.speed < 0.0 || x_t.speed > problem.limits.speed_max {
            return Err(CaccError::Infeasible);
        }
        let t_s = problem.t_s;
        let n = problem.horizon;
        let lead_speeds = Self::predicted_lead_speeds(problem, lead, t_s);
        let gap_axis = axis(problem.policy.hard_min, problem.grid.gap_max, problem.grid.gap_points, x_t.gap);
        let spd_axis = axis(0.0, problem.limits.speed_max, problem.grid.speed_points, x_t.speed);
        let nv = spd_axis.len();
        let nd = gap_axis.len();
        let idx = |di: usize, vi: usize| di * nv + vi;

        // terminal layer from the safe-set witness
        let mut layers: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
        let mut terminal = vec![f64::INFINITY; nd * nv];
        for (di, &d) in gap_axis.iter().enumerate() {
            for (vi, &v) in spd_axis.iter().enumerate() {
                let xn = CaccState { gap: d, speed: v };
                if terminal_safe_set(
                    &xn,
                    &lead_speeds[n + 1..],
                    &problem.vehicle,
                    &problem.env,
                    problem.grade,
                    &problem.limits,
                    problem.policy.hard_min,
                    t_s,
                ) {
                    terminal[idx(di, vi)] = 0.0;
                }
            }
        }
        layers[n] = terminal;

        for k in (1..n).rev() {
            let mut v_k = vec![f64::INFINITY; nd * nv];
            let v_next = &layers[k + 1];
            for (vi, &v) in spd_axis.iter().enumerate() {
                let cands = Self::input_candidates(problem, v);
                let v_ref = Self::v_ref(problem, &lead_speeds, k + 1);
                for (di, &d) in gap_axis.iter().enumerate() {
                    let mut best = f64::INFINITY;
                    for c in &cands {
                        if let Some((d2, v2)) = Self::transition(problem, d, v, lead_speeds[k], c) {
                            let (di2, vi2) = (snap(&gap_axis, d2), snap(&spd_axis, v2));
                            let q = Self::stage_cost(problem, gap_axis[di2], spd_axis[vi2], v_ref, c)
                                + v_next[idx(di2, vi2)];
                            if q < best {
                                best = q;
                            }
                        }
                    }
                    v_k[idx(di, vi)] = best;
                }
            }
            layers[k] = v_k;
        }

        // forward extraction from the exact root
        let mut states = vec![*x_t];
        let mut inputs = Vec::with_capacity(n);
        let mut cost = f64::INFINITY;
        let (mut d, mut v) = (x_t.gap, x_t.speed);
        for k in 0..n {
            let v_next = &layers[k + 1];
            let cands = Self::input_candidates(problem, v);
            let v_ref = Self::v_ref(problem, &lead_speeds, k + 1);
            let mut best: Option<(f64, CaccInput, usize, usize)> = None;
            for c in &cands {
                if let Some((d2, v2)) = Self::transition(problem, d, v, lead_speeds[k], c) {
                    let di2 = snap(&gap_axis, d2);
                    let vi2 = snap(&spd_axis, v2);
                    let q = Self::stage_cost(problem, gap_axis[di2], spd_axis[vi2], v_ref, c) + v_next[idx(di2, vi2)];
                    if q.is_finite() && best.as_ref().map_or(true, |b| q < b.0) {
                        best = Some((q, *c, di2, vi2));
                    }
                }
            }
            let Some((q, input, di2, vi2)) = best else {
                return Err(CaccError::Infeasible);
            };
            if k == 0 {
                cost = q;
            }
            inputs.push(input);
            d = gap_axis[di2];
            v = spd_axis[vi2];
            states.push(CaccState { gap: d, speed: v });
        }
        Ok(CaccSolution {
            inputs,
            states,
            cost,
            lead_speeds,
        })
    }

    fn v_ref(problem: &CaccProblem, lead_speeds: &[f64], k: usize) -> f64 {
        match problem.reference {
            ReferenceSpeed::Constant(v) => v,
            ReferenceSpeed::Lead => lead_speeds[k],
        }
    }

    /// Receding-horizon step: the first optimal input, or maximum braking
    /// when the horizon is infeasible.
    pub fn mpc_step(problem: &CaccProblem, x_t: &CaccState, lead: &LeadForecast) -> Result<CaccStep, CaccError> {
        match Self::solve(problem, x_t, lead) {
            Ok(sol) => Ok(CaccStep {
                input: sol.inputs[0],
                fallback: false,
            }),
            Err(CaccError::Infeasible) => Ok(CaccStep {
                input: CaccInput {
                    wheel_force: 0.0_f64.clamp(problem.limits.wheel_force_min, problem.limits.wheel_force_max),
                    brake_force: problem.limits.brake_force_max,
                },
                fallback: true,
            }),
            Err(e) => Err(e),
        }
    }
}
