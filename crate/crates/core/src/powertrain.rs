//! Receding-horizon powertrain control for a plug-in hybrid: joint gear
//! shifting, engine on/off and torque split, solved by dynamic programming.
//!
//! The solver works on a fully discretized model: battery energy lives on a
//! quantized grid (augmented with the exact initial energy so zero-power
//! sequences are fixed points), torque splits come from a finite level set,
//! and every transition snaps the battery state to the nearest grid point.
//! Stage costs are computed from the snapped successor, so dynamic
//! programming, exhaustive enumeration, and forward replay all price a
//! sequence identically.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{battery_step, BatteryParams, ModelError, PowertrainMaps};

#[derive(Debug, Error)]
pub enum PowertrainError {
    #[error("no admissible input sequence")]
    Infeasible,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Discrete-continuous powertrain state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowertrainState {
    /// Stored battery energy (J).
    pub battery_energy: f64,
    /// Engaged gear, 1-based.
    pub gear: u8,
    pub engine_on: bool,
}

/// One step of the control vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowertrainInput {
    pub motor_torque: f64,
    pub engine_torque: f64,
    /// Gear shift command, -1/0/+1.
    pub gear_cmd: i8,
    /// Engine on/off command, -1/0/+1.
    pub engine_cmd: i8,
}

impl PowertrainInput {
    pub fn coast() -> Self {
        Self {
            motor_torque: 0.0,
            engine_torque: 0.0,
            gear_cmd: 0,
            engine_cmd: 0,
        }
    }
}

/// Speed and auxiliary-power forecast over the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowertrainForecast {
    /// Step length (s).
    pub step: f64,
    pub speeds: Vec<f64>,
    pub aux_powers: Vec<f64>,
}

impl PowertrainForecast {
    pub fn constant(step: f64, speed: f64, aux: f64, horizon: usize) -> Self {
        Self {
            step,
            speeds: vec![speed; horizon],
            aux_powers: vec![aux; horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.speeds.len()
    }

    pub fn validate(&self) -> Result<(), PowertrainError> {
        if !(self.step > 0.0) {
            return Err(PowertrainError::InvalidInput("step must be positive".into()));
        }
        if self.speeds.is_empty() || self.speeds.len() != self.aux_powers.len() {
            return Err(PowertrainError::InvalidInput(
                "forecast needs equal-length, nonempty speed and aux series".into(),
            ));
        }
        if self.speeds.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(PowertrainError::InvalidInput("speeds must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Weights on fuel power and battery internal power in the stage cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyWeights {
    pub fuel: f64,
    pub battery: f64,
}

impl EnergyWeights {
    pub fn validate(&self) -> Result<(), PowertrainError> {
        if self.fuel < 0.0 || self.battery < 0.0 || (self.fuel == 0.0 && self.battery == 0.0) {
            return Err(PowertrainError::InvalidInput(
                "weights must be non-negative and not both zero".into(),
            ));
        }
        Ok(())
    }
}

impl Default for EnergyWeights {
    fn default() -> Self {
        Self {
            fuel: 1.0,
            battery: 1.0,
        }
    }
}

/// Terminal charge constraint plus the affine terminal cost
/// `l(E) = offset + (E - reference) * slope`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerminalCharge {
    /// Minimum admissible terminal energy, also the cost anchor (J).
    pub reference: f64,
    pub cost_offset: f64,
    pub cost_slope: f64,
}

impl TerminalCharge {
    /// Default terminal shaping: marginal battery value equal to the
    /// battery weight, which cancels the incentive to hoard charge above
    /// the reference.
    pub fn marginal(reference: f64, weights: &EnergyWeights) -> Self {
        Self {
            reference,
            cost_offset: 0.0,
            cost_slope: weights.battery,
        }
    }
}

/// Solver resolution and switching limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowertrainConfig {
    /// Battery grid points between the energy bounds.
    pub battery_grid_points: usize,
    /// Engine-torque quantization levels per admissible interval.
    pub torque_levels: usize,
    /// A gear shift or engine toggle locks further switching of the same
    /// kind for this many steps (1 disables the cap).
    pub min_steps_between_switches: usize,
}

impl Default for PowertrainConfig {
    fn default() -> Self {
        Self {
            battery_grid_points: 51,
            torque_levels: 21,
            min_steps_between_switches: 2,
        }
    }
}

/// Open-loop solution of one horizon.
#[derive(Debug, Clone)]
pub struct PowertrainSolution {
    pub inputs: Vec<PowertrainInput>,
    /// Snapped state trajectory, length horizon + 1.
    pub states: Vec<PowertrainState>,
    pub cost: f64,
    /// Total fuel energy over the horizon (J).
    pub fuel_energy: f64,
}

/// Result of one receding-horizon step.
#[derive(Debug, Clone, Copy)]
pub struct MpcStep {
    pub input: PowertrainInput,
    /// True when the horizon was infeasible and the charge-sustaining
    /// heuristic produced the input instead.
    pub fallback: bool,
}

/// One admissible torque split at a node: motor torque, engine torque, the
/// implied battery terminal power and the fuel power while it is applied.
#[derive(Debug, Clone, Copy)]
struct TorqueCandidate {
    t_m: f64,
    t_e: f64,
    p_b: f64,
    p_f: f64,
}

pub struct PowertrainOcp<'a> {
    maps: &'a PowertrainMaps,
    battery: &'a BatteryParams,
    pub config: PowertrainConfig,
}

impl<'a> PowertrainOcp<'a> {
    pub fn new(maps: &'a PowertrainMaps, battery: &'a BatteryParams, config: PowertrainConfig) -> Self {
        Self {
            maps,
            battery,
            config,
        }
    }

    /// Battery grid: evenly spaced points over the admissible band plus the
    /// exact root energy, sorted and deduplicated.
    pub fn battery_grid(&self, root_energy: f64) -> Vec<f64> {
        let lo = self.battery.energy_min;
        let hi = self.battery.energy_max;
        let n = self.config.battery_grid_points.max(2);
        let mut grid: Vec<f64> = (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect();
        grid.push(root_energy);
        grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
        grid.dedup();
        grid
    }

    /// Nearest grid index; on an exact midpoint tie the lower index wins.
    pub fn snap(grid: &[f64], e: f64) -> usize {
        let hi = grid.partition_point(|&g| g < e);
        if hi == 0 {
            return 0;
        }
        if hi == grid.len() {
            return grid.len() - 1;
        }
        let lo = hi - 1;
        if e - grid[lo] <= grid[hi] - e {
            lo
        } else {
            hi
        }
    }

    /// Admissible torque splits at speed `v` for a node with the given gear
    /// and engine state, ordered by the tie-break preference (smaller |T_e|
    /// first). Returns an empty list when the torque balance cannot be met.
    fn torque_candidates(&self, v: f64, gear: u8, engine_on: bool, p_a: f64) -> Vec<TorqueCandidate> {
        let t_t = self.maps.trans_torque(v, gear);
        let (tm_lo, tm_hi) = self.maps.motor_torque_bounds(v);
        let mut out = Vec::new();
        if !engine_on {
            // engine decoupled: the motor must carry the full demand
            if t_t >= tm_lo - 1e-9 && t_t <= tm_hi + 1e-9 {
                out.push(self.candidate(v, gear, false, t_t, 0.0, p_a));
            }
            return out;
        }
        let (te_lo, te_hi) = self.maps.engine_torque_bounds(v);
        let lo = te_lo.max(t_t - tm_hi);
        let hi = te_hi.min(t_t - tm_lo);
        if lo > hi + 1e-12 {
            return out;
        }
        let n = self.config.torque_levels.max(1);
        let mut levels = Vec::with_capacity(n);
        if n == 1 || hi - lo <= 0.0 {
            levels.push(0.5 * (lo + hi));
        } else {
            for i in 0..n {
                levels.push(lo + (hi - lo) * i as f64 / (n - 1) as f64);
            }
        }
        levels.sort_by(|a, b| {
            (a.abs(), *a)
                .partial_cmp(&(b.abs(), *b))
                .expect("torque levels are finite")
        });
        levels.dedup();
        for t_e in levels {
            out.push(self.candidate(v, gear, true, t_t - t_e, t_e, p_a));
        }
        out
    }

    fn candidate(&self, v: f64, gear: u8, engine_on: bool, t_m: f64, t_e: f64, p_a: f64) -> TorqueCandidate {
        TorqueCandidate {
            t_m,
            t_e,
            p_b: self.maps.motor_power(v, t_m) + p_a,
            p_f: self.maps.fuel_power(gear, engine_on, t_e, v),
        }
    }

    /// Valid switch commands from a state, in tie-break preference order
    /// (hold first).
    fn switch_options(current: u8, max: u8, cooldown: usize) -> Vec<i8> {
        let mut opts = vec![0];
        if cooldown == 0 {
            if current > 1 {
                opts.push(-1);
            }
            if current < max {
                opts.push(1);
            }
        }
        opts
    }

    fn engine_options(on: bool, cooldown: usize) -> Vec<i8> {
        let mut opts = vec![0];
        if cooldown == 0 {
            opts.push(if on { -1 } else { 1 });
        }
        opts
    }

    /// Minimize the horizon cost from `x0` under `forecast`. The returned
    /// trajectory lives on the solver's battery grid; replaying the inputs
    /// with [`simulate`](Self::simulate) reproduces `cost` bit for bit.
    pub fn solve(
        &self,
        x0: &PowertrainState,
        forecast: &PowertrainForecast,
        weights: &EnergyWeights,
        terminal: &TerminalCharge,
    ) -> Result<PowertrainSolution, PowertrainError> {
        forecast.validate()?;
        weights.validate()?;
        self.validate_state(x0)?;
        let n_steps = forecast.horizon();
        let grid = self.battery_grid(x0.battery_energy);
        let gears = self.maps.gear_count();
        let cool = self.config.min_steps_between_switches.max(1);
        let n_e = grid.len();
        let n_states = n_e * gears as usize * 2 * cool * cool;
        let t_s = forecast.step;

        let idx = |e: usize, g: u8, on: bool, cg: usize, ce: usize| -> usize {
            (((e * gears as usize + (g - 1) as usize) * 2 + on as usize) * cool + cg) * cool + ce
        };

        // terminal layer
        let mut terminal_layer = vec![f64::INFINITY; n_states];
        for (e, &energy) in grid.iter().enumerate() {
            if energy >= terminal.reference {
                let l = terminal.cost_offset + (energy - terminal.reference) * terminal.cost_slope;
                for g in 1..=gears {
                    for on in [false, true] {
                        for cg in 0..cool {
                            for ce in 0..cool {
                                terminal_layer[idx(e, g, on, cg, ce)] = l;
                            }
                        }
                    }
                }
            }
        }

        // backward induction over grid states for layers N-1 .. 1
        let mut layers: Vec<Vec<f64>> = vec![Vec::new(); n_steps + 1];
        layers[n_steps] = terminal_layer;
        for k in (1..n_steps).rev() {
            layers[k] = self.backward_layer(&grid, k, forecast, weights, &layers[k + 1], &idx, cool, gears, t_s);
        }

        // forward extraction, starting from the exact root state; the
        // reported cost is the root Bellman value so it is bit-identical to
        // a recursive suffix-sum enumeration of the same model
        let mut inputs = Vec::with_capacity(n_steps);
        let mut states = Vec::with_capacity(n_steps + 1);
        states.push(*x0);
        let mut fuel_energy = 0.0;
        let mut cost = f64::INFINITY;
        let mut cur_e = Self::snap(&grid, x0.battery_energy);
        debug_assert_eq!(grid[cur_e], x0.battery_energy, "root energy is a grid point");
        let mut cur_g = x0.gear;
        let mut cur_on = x0.engine_on;
        let (mut cg, mut ce) = (0usize, 0usize);

        for k in 0..n_steps {
            let v_next = &layers[k + 1];
            let mut best: Option<(f64, f64, PowertrainInput, usize, u8, bool, usize, usize)> = None;
            let cands = self.torque_candidates(forecast.speeds[k], cur_g, cur_on, forecast.aux_powers[k]);
            for u_g in Self::switch_options(cur_g, gears, cg) {
                for u_e in Self::engine_options(cur_on, ce) {
                    for c in &cands {
                        let Ok(e_next) = battery_step(grid[cur_e], c.p_b, self.battery, t_s) else {
                            continue;
                        };
                        if e_next < self.battery.energy_min - 1e-9 || e_next > self.battery.energy_max + 1e-9 {
                            continue;
                        }
                        let e_snap = Self::snap(&grid, e_next);
                        let stage = weights.fuel * c.p_f * t_s + weights.battery * (grid[cur_e] - grid[e_snap]);
                        let g2 = (cur_g as i16 + u_g as i16) as u8;
                        let on2 = match u_e {
                            0 => cur_on,
                            1 => true,
                            _ => false,
                        };
                        let cg2 = if u_g != 0 { cool - 1 } else { cg.saturating_sub(1) };
                        let ce2 = if u_e != 0 { cool - 1 } else { ce.saturating_sub(1) };
                        let q = stage + v_next[idx(e_snap, g2, on2, cg2, ce2)];
                        if q.is_finite() && best.as_ref().map_or(true, |b| q < b.0) {
                            best = Some((
                                q,
                                c.p_f,
                                PowertrainInput {
                                    motor_torque: c.t_m,
                                    engine_torque: c.t_e,
                                    gear_cmd: u_g,
                                    engine_cmd: u_e,
                                },
                                e_snap,
                                g2,
                                on2,
                                cg2,
                                ce2,
                            ));
                        }
                    }
                }
            }
            let Some((q, p_f, input, e2, g2, on2, cg2, ce2)) = best else {
                return Err(PowertrainError::Infeasible);
            };
            if k == 0 {
                cost = q;
            }
            fuel_energy += p_f * t_s;
            inputs.push(input);
            cur_e = e2;
            cur_g = g2;
            cur_on = on2;
            cg = cg2;
            ce = ce2;
            states.push(PowertrainState {
                battery_energy: grid[cur_e],
                gear: cur_g,
                engine_on: cur_on,
            });
        }
        debug_assert!(
            grid[cur_e] >= terminal.reference,
            "extracted path violates the terminal constraint"
        );
        Ok(PowertrainSolution {
            inputs,
            states,
            cost,
            fuel_energy,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_layer(
        &self,
        grid: &[f64],
        k: usize,
        forecast: &PowertrainForecast,
        weights: &EnergyWeights,
        v_next: &[f64],
        idx: &impl Fn(usize, u8, bool, usize, usize) -> usize,
        cool: usize,
        gears: u8,
        t_s: f64,
    ) -> Vec<f64> {
        let mut v_k = vec![f64::INFINITY; v_next.len()];
        let v = forecast.speeds[k];
        let p_a = forecast.aux_powers[k];
        for g in 1..=gears {
            for on in [false, true] {
                let cands = self.torque_candidates(v, g, on, p_a);
                if cands.is_empty() {
                    continue;
                }
                for (e, &energy) in grid.iter().enumerate() {
                    // battery transitions are switch-independent
                    let mut moves: Vec<(usize, f64)> = Vec::with_capacity(cands.len());
                    for c in &cands {
                        let Ok(e_next) = battery_step(energy, c.p_b, self.battery, t_s) else {
                            continue;
                        };
                        if e_next < self.battery.energy_min - 1e-9 || e_next > self.battery.energy_max + 1e-9 {
                            continue;
                        }
                        let e_snap = Self::snap(grid, e_next);
                        let stage = weights.fuel * c.p_f * t_s + weights.battery * (energy - grid[e_snap]);
                        moves.push((e_snap, stage));
                    }
                    if moves.is_empty() {
                        continue;
                    }
                    for cg in 0..cool {
                        for ce in 0..cool {
                            let mut best = f64::INFINITY;
                            for u_g in Self::switch_options(g, gears, cg) {
                                for u_e in Self::engine_options(on, ce) {
                                    let g2 = (g as i16 + u_g as i16) as u8;
                                    let on2 = match u_e {
                                        0 => on,
                                        1 => true,
                                        _ => false,
                                    };
                                    let cg2 = if u_g != 0 { cool - 1 } else { cg.saturating_sub(1) };
                                    let ce2 = if u_e != 0 { cool - 1 } else { ce.saturating_sub(1) };
                                    for &(e_snap, stage) in &moves {
                                        let q = stage + v_next[idx(e_snap, g2, on2, cg2, ce2)];
                                        if q < best {
                                            best = q;
                                        }
                                    }
                                }
                            }
                            v_k[idx(e, g, on, cg, ce)] = best;
                        }
                    }
                }
            }
        }
        v_k
    }

    /// Replay an input sequence through the discretized model. Torque and
    /// switching validity are enforced; returns the snapped trajectory, the
    /// accumulated cost including the terminal term, and the fuel energy.
    pub fn simulate(
        &self,
        x0: &PowertrainState,
        inputs: &[PowertrainInput],
        forecast: &PowertrainForecast,
        weights: &EnergyWeights,
        terminal: &TerminalCharge,
    ) -> Result<(Vec<PowertrainState>, f64, f64), PowertrainError> {
        forecast.validate()?;
        self.validate_state(x0)?;
        if inputs.len() != forecast.horizon() {
            return Err(PowertrainError::InvalidInput(
                "input sequence length must equal the forecast horizon".into(),
            ));
        }
        let grid = self.battery_grid(x0.battery_energy);
        let gears = self.maps.gear_count();
        let mut states = vec![*x0];
        let mut e = Self::snap(&grid, x0.battery_energy);
        let mut gear = x0.gear;
        let mut on = x0.engine_on;
        let mut cost = 0.0;
        let mut fuel = 0.0;
        let t_s = forecast.step;
        for (k, u) in inputs.iter().enumerate() {
            let v = forecast.speeds[k];
            let s_e = if on { 1.0 } else { 0.0 };
            let balance = self.maps.trans_torque(v, gear) - u.motor_torque - s_e * u.engine_torque;
            if balance.abs() > 1e-6 {
                return Err(PowertrainError::InvalidInput(format!(
                    "torque balance violated at step {k}: residual {balance}"
                )));
            }
            let p_b = self.maps.motor_power(v, u.motor_torque) + forecast.aux_powers[k];
            let e_next = battery_step(grid[e], p_b, self.battery, t_s)?;
            if e_next < self.battery.energy_min - 1e-9 || e_next > self.battery.energy_max + 1e-9 {
                return Err(PowertrainError::Infeasible);
            }
            let p_f = self.maps.fuel_power(gear, on, u.engine_torque, v);
            let e_snap = Self::snap(&grid, e_next);
            cost += weights.fuel * p_f * t_s + weights.battery * (grid[e] - grid[e_snap]);
            fuel += p_f * t_s;
            e = e_snap;
            let g2 = gear as i16 + u.gear_cmd as i16;
            if g2 < 1 || g2 > gears as i16 {
                return Err(PowertrainError::InvalidInput(format!("gear out of range at step {k}")));
            }
            gear = g2 as u8;
            on = match u.engine_cmd {
                0 => on,
                1 => true,
                -1 => false,
                _ => return Err(PowertrainError::InvalidInput("engine_cmd must be -1/0/+1".into())),
            };
            states.push(PowertrainState {
                battery_energy: grid[e],
                gear,
                engine_on: on,
            });
        }
        if grid[e] < terminal.reference {
            return Err(PowertrainError::Infeasible);
        }
        cost += terminal.cost_offset + (grid[e] - terminal.reference) * terminal.cost_slope;
        Ok((states, cost, fuel))
    }

    /// One receding-horizon step: the first input of the optimal sequence,
    /// or the charge-sustaining heuristic when the horizon is infeasible.
    pub fn mpc_step(
        &self,
        x_t: &PowertrainState,
        forecast: &PowertrainForecast,
        weights: &EnergyWeights,
        terminal: &TerminalCharge,
    ) -> Result<MpcStep, PowertrainError> {
        match self.solve(x_t, forecast, weights, terminal) {
            Ok(sol) => Ok(MpcStep {
                input: sol.inputs[0],
                fallback: false,
            }),
            Err(PowertrainError::Infeasible) => Ok(MpcStep {
                input: self.charge_sustaining_input(x_t, forecast)?,
                fallback: true,
            }),
            Err(e) => Err(e),
        }
    }

    /// Heuristic applied when no admissible horizon exists: hold gear, turn
    /// the engine on if it is off, and pick the admissible split with the
    /// smallest battery draw.
    fn charge_sustaining_input(
        &self,
        x_t: &PowertrainState,
        forecast: &PowertrainForecast,
    ) -> Result<PowertrainInput, PowertrainError> {
        forecast.validate()?;
        let v = forecast.speeds[0];
        let p_a = forecast.aux_powers[0];
        let cands = self.torque_candidates(v, x_t.gear, x_t.engine_on, p_a);
        let engine_cmd = if x_t.engine_on { 0 } else { 1 };
        let best = cands.iter().min_by(|a, b| {
            (a.p_b.abs(), a.t_e.abs())
                .partial_cmp(&(b.p_b.abs(), b.t_e.abs()))
                .expect("candidate powers are finite")
        });
        match best {
            Some(c) => Ok(PowertrainInput {
                motor_torque: c.t_m,
                engine_torque: c.t_e,
                gear_cmd: 0,
                engine_cmd,
            }),
            // torque balance unmeetable: command everything to zero and flag
            None => Ok(PowertrainInput {
                motor_torque: 0.0,
                engine_torque: 0.0,
                gear_cmd: 0,
                engine_cmd,
            }),
        }
    }

    fn validate_state(&self, x: &PowertrainState) -> Result<(), PowertrainError> {
        if x.battery_energy < self.battery.energy_min - 1e-9
            || x.battery_energy > self.battery.energy_max + 1e-9
        {
            return Err(PowertrainError::InvalidInput(format!(
                "battery energy {} outside [{}, {}]",
                x.battery_energy, self.battery.energy_min, self.battery.energy_max
            )));
        }
        if x.gear < 1 || x.gear > self.maps.gear_count() {
            return Err(PowertrainError::InvalidInput(format!("gear {} out of range", x.gear)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::PowertrainMaps;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (PowertrainMaps, BatteryParams) {
        (PowertrainMaps::synthetic_default(), BatteryParams::default_phev())
    }

    fn mid_energy(b: &BatteryParams) -> f64 {
        0.5 * (b.energy_min + b.energy_max)
    }

    #[test]
    fn zero_demand_costs_nothing_and_holds_state() {
        let (maps, battery) = setup();
        let ocp = PowertrainOcp::new(&maps, &battery, PowertrainConfig::default());
        let e0 = mid_energy(&battery);
        let x0 = PowertrainState {
            battery_energy: e0,
            gear: 1,
            engine_on: false,
        };
        let forecast = PowertrainForecast::constant(1.0, 0.0, 0.0, 6);
        let weights = EnergyWeights::default();
        let terminal = TerminalCharge::marginal(e0, &weights);
        let sol = ocp.solve(&x0, &forecast, &weights, &terminal).unwrap();
        assert_eq!(sol.cost, 0.0);
        assert_eq!(sol.fuel_energy, 0.0);
        for u in &sol.inputs {
            assert_eq!(u.motor_torque, 0.0);
            assert_eq!(u.engine_torque, 0.0);
        }
        for s in &sol.states {
            assert_eq!(s.battery_energy, e0);
            assert_eq!(s.gear, 1);
            assert!(!s.engine_on);
        }
    }

    #[test]
    fn unreachable_terminal_reference_is_infeasible() {
        let (maps, battery) = setup();
        let ocp = PowertrainOcp::new(&maps, &battery, PowertrainConfig::default());
        let e0 = mid_energy(&battery);
        let x0 = PowertrainState {
            battery_energy: e0,
            gear: 2,
            engine_on: false,
        };
        // positive demand, reference above the initial charge
        let forecast = PowertrainForecast::constant(1.0, 20.0, 500.0, 5);
        let weights = EnergyWeights::default();
        let terminal = TerminalCharge::marginal(battery.energy_max, &weights);
        assert!(matches!(
            ocp.solve(&x0, &forecast, &weights, &terminal),
            Err(PowertrainError::Infeasible)
        ));
    }

    #[test]
    fn replay_reproduces_reported_cost() {
        let (maps, battery) = setup();
        let ocp = PowertrainOcp::new(&maps, &battery, PowertrainConfig::default());
        let e0 = mid_energy(&battery);
        let x0 = PowertrainState {
            battery_energy: e0,
            gear: 2,
            engine_on: true,
        };
        let forecast = PowertrainForecast {
            step: 1.0,
            speeds: vec![8.0, 12.0, 16.0, 18.0, 15.0, 10.0],
            aux_powers: vec![300.0; 6],
        };
        let weights = EnergyWeights {
            fuel: 1.0,
            battery: 0.8,
        };
        let terminal = TerminalCharge::marginal(battery.energy_min, &weights);
        let sol = ocp.solve(&x0, &forecast, &weights, &terminal).unwrap();
        let (states, cost, fuel) = ocp
            .simulate(&x0, &sol.inputs, &forecast, &weights, &terminal)
            .unwrap();
        assert_relative_eq!(cost, sol.cost, max_relative = 1e-6);
        assert_eq!(fuel, sol.fuel_energy);
        assert_eq!(states.len(), sol.states.len());
        for (a, b) in states.iter().zip(&sol.states) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn mpc_step_is_deterministic_and_matches_solve() {
        let (maps, battery) = setup();
        let ocp = PowertrainOcp::new(&maps, &battery, PowertrainConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let weights = EnergyWeights::default();
        for _ in 0..50 {
            let e0 = rng.gen_range(battery.energy_min..battery.energy_max);
            let x0 = PowertrainState {
                battery_energy: e0,
                gear: rng.gen_range(1..=maps.gear_count()),
                engine_on: rng.gen_bool(0.5),
            };
            let n = rng.gen_range(2..6);
            let forecast = PowertrainForecast {
                step: 1.0,
                speeds: (0..n).map(|_| rng.gen_range(0.0..30.0)).collect(),
                aux_powers: (0..n).map(|_| rng.gen_range(0.0..1_000.0)).collect(),
            };
            let terminal = TerminalCharge::marginal(battery.energy_min, &weights);
            let a = ocp.mpc_step(&x0, &forecast, &weights, &terminal).unwrap();
            let b = ocp.mpc_step(&x0, &forecast, &weights, &terminal).unwrap();
            assert_eq!(a.input, b.input);
            assert_eq!(a.fallback, b.fallback);
            if !a.fallback {
                let sol = ocp.solve(&x0, &forecast, &weights, &terminal).unwrap();
                assert_eq!(a.input, sol.inputs[0]);
            }
        }
    }

    #[test]
    fn zero_demand_mpc_step_is_zero_torque() {
        let (maps, battery) = setup();
        let ocp = PowertrainOcp::new(&maps, &battery, PowertrainConfig::default());
        let x0 = PowertrainState {
            battery_energy: mid_energy(&battery),
            gear: 1,
            engine_on: false,
        };
        let weights = EnergyWeights::default();
        let forecast = PowertrainForecast::constant(1.0, 0.0, 0.0, 4);
        let terminal = TerminalCharge::marginal(battery.energy_min, &weights);
        let step = ocp.mpc_step(&x0, &forecast, &weights, &terminal).unwrap();
        assert!(!step.fallback);
        assert_eq!(step.input.motor_torque, 0.0);
        assert_eq!(step.input.engine_torque, 0.0);
    }

    #[test]
    fn infeasible_step_reports_fallback() {
        let (maps, battery) = setup();
        let ocp = PowertrainOcp::new(&maps, &battery, PowertrainConfig::default());
        let x0 = PowertrainState {
            battery_energy: mid_energy(&battery),
            gear: 1,
            engine_on: true,
        };
        let weights = EnergyWeights::default();
        let forecast = PowertrainForecast::constant(1.0, 15.0, 0.0, 3);
        let terminal = TerminalCharge::marginal(battery.energy_max, &weights);
        let step = ocp.mpc_step(&x0, &forecast, &weights, &terminal).unwrap();
        assert!(step.fallback);
        assert_eq!(step.input.gear_cmd, 0);
    }

    #[test]
    fn switch_trajectories_respect_magnitude_and_cooldown() {
        let (maps, battery) = setup();
        let config = PowertrainConfig {
            min_steps_between_switches: 2,
            ..PowertrainConfig::default()
        };
        let ocp = PowertrainOcp::new(&maps, &battery, config);
        let weights = EnergyWeights::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let x0 = PowertrainState {
                battery_energy: rng.gen_range(battery.energy_min..battery.energy_max),
                gear: rng.gen_range(1..=4),
                engine_on: rng.gen_bool(0.5),
            };
            let n = 6;
            let forecast = PowertrainForecast {
                step: 1.0,
                speeds: (0..n).map(|_| rng.gen_range(0.0..30.0)).collect(),
                aux_powers: vec![200.0; n],
            };
            let terminal = TerminalCharge::marginal(battery.energy_min, &weights);
            if let Ok(sol) = ocp.solve(&x0, &forecast, &weights, &terminal) {
                let mut last_shift: Option<usize> = None;
                let mut last_toggle: Option<usize> = None;
                for (k, u) in sol.inputs.iter().enumerate() {
                    assert!(u.gear_cmd.abs() <= 1 && u.engine_cmd.abs() <= 1);
                    if u.gear_cmd != 0 {
                        if let Some(prev) = last_shift {
                            assert!(k - prev >= 2, "gear shifts too close: {prev} and {k}");
                        }
                        last_shift = Some(k);
                    }
                    if u.engine_cmd != 0 {
                        if let Some(prev) = last_toggle {
                            assert!(k - prev >= 2, "engine toggles too close: {prev} and {k}");
                        }
                        last_toggle = Some(k);
                    }
                }
            }
        }
    }
}
