//! Long-horizon battery reference planning for a plug-in hybrid over a
//! forecast trip, plus the charge-depleting/charge-sustaining baseline it is
//! compared against.
//!
//! Gear shifting and engine on/off are not optimized here: each step uses
//! the highest gear whose torque balance is satisfiable, the engine is
//! always available, and zero engine torque burns no fuel. The solver is a
//! dynamic program over a quantized battery grid with the same snapped
//! discretization contract as the powertrain MPC; the CDCS baseline walks
//! the identical discretized model, so cost dominance holds exactly.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{battery_step, BatteryParams, PowertrainMaps};
use crate::powertrain::{EnergyWeights, PowertrainForecast};

#[derive(Debug, Error)]
pub enum ChargeError {
    #[error("terminal floor unreachable")]
    Infeasible,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Battery reference trajectory indexed by forecast step and trip position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargePlan {
    /// Cumulative position at each step boundary (m), length N + 1.
    pub positions: Vec<f64>,
    /// Reference energies E*_k (J), length N + 1.
    pub reference_energies: Vec<f64>,
    /// Terminal floor used by the plan (J).
    pub terminal_floor: f64,
}

impl ChargePlan {
    /// Linear interpolation of the reference over position, clamped at the
    /// trip ends. This is the rule downstream consumers use.
    pub fn reference_at(&self, s: f64) -> f64 {
        let p = &self.positions;
        let n = p.len();
        if s <= p[0] {
            return self.reference_energies[0];
        }
        if s >= p[n - 1] {
            return self.reference_energies[n - 1];
        }
        let hi = p.partition_point(|&b| b <= s);
        let (lo, hi) = (hi - 1, hi);
        let w = (s - p[lo]) / (p[hi] - p[lo]);
        self.reference_energies[lo] + w * (self.reference_energies[hi] - self.reference_energies[lo])
    }

    /// CSV export: `index,position,reference_energy`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), ChargeError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["index", "position", "reference_energy"])
            .map_err(|e| ChargeError::InvalidInput(e.to_string()))?;
        for (k, (s, e)) in self.positions.iter().zip(&self.reference_energies).enumerate() {
            out.write_record([k.to_string(), format!("{s:?}"), format!("{e:?}")])
                .map_err(|e| ChargeError::InvalidInput(e.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Motor/engine torque split for one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorqueSplit {
    pub motor: f64,
    pub engine: f64,
}

#[derive(Debug, Clone)]
pub struct ChargePlanResult {
    pub plan: ChargePlan,
    pub splits: Vec<TorqueSplit>,
    pub gears: Vec<u8>,
    pub cost: f64,
    pub fuel_energy: f64,
}

#[derive(Debug, Clone)]
pub struct CdcsResult {
    pub plan: ChargePlan,
    pub splits: Vec<TorqueSplit>,
    pub gears: Vec<u8>,
    pub cost: f64,
    pub fuel_energy: f64,
    /// First step of the charge-sustaining phase, if it was entered.
    pub phase_switch: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChargePlannerConfig {
    pub battery_grid_points: usize,
    pub torque_levels: usize,
    /// Width of the sustaining band above the floor (J).
    pub sustain_band: f64,
}

impl Default for ChargePlannerConfig {
    fn default() -> Self {
        Self {
            battery_grid_points: 201,
            torque_levels: 9,
            sustain_band: 5.0e5,
        }
    }
}

pub struct ChargePlanner<'a> {
    maps: &'a PowertrainMaps,
    battery: &'a BatteryParams,
    pub config: ChargePlannerConfig,
}

impl<'a> ChargePlanner<'a> {
    pub fn new(maps: &'a PowertrainMaps, battery: &'a BatteryParams, config: ChargePlannerConfig) -> Self {
        Self {
            maps,
            battery,
            config,
        }
    }

    pub fn battery_quantum(&self) -> f64 {
        (self.battery.energy_max - self.battery.energy_min) / (self.config.battery_grid_points.max(2) - 1) as f64
    }

    fn grid(&self, root: f64) -> Vec<f64> {
        let lo = self.battery.energy_min;
        let hi = self.battery.energy_max;
        let n = self.config.battery_grid_points.max(2);
        let mut g: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
        g.push(root);
        g.sort_by(|a, b| a.partial_cmp(b).unwrap());
        g.dedup();
        g
    }

    fn snap(grid: &[f64], e: f64) -> usize {
        let hi = grid.partition_point(|&g| g < e);
        if hi == 0 {
            return 0;
        }
        if hi == grid.len() {
            return grid.len() - 1;
        }
        if e - grid[hi - 1] <= grid[hi] - e {
            hi - 1
        } else {
            hi
        }
    }

    /// Highest gear whose torque balance is satisfiable at each step.
    pub fn gear_schedule(&self, forecast: &PowertrainForecast) -> Vec<u8> {
        forecast
            .speeds
            .iter()
            .map(|&v| {
                for g in (1..=self.maps.gear_count()).rev() {
                    if !self.splits(v, g).is_empty() {
                        return g;
                    }
                }
                1
            })
            .collect()
    }

    /// Admissible torque splits at speed `v` in `gear`: quantized engine
    /// levels over the admissible interval, with the exact all-electric
    /// split included whenever it is feasible. Engine torque of exactly
    /// zero burns no fuel (idle-off).
    fn splits(&self, v: f64, gear: u8) -> Vec<TorqueSplit> {
        let t_t = self.maps.trans_torque(v, gear);
        let (tm_lo, tm_hi) = self.maps.motor_torque_bounds(v);
        let (te_lo, te_hi) = self.maps.engine_torque_bounds(v);
        let lo = te_lo.max(t_t - tm_hi);
        let hi = te_hi.min(t_t - tm_lo);
        if lo > hi + 1e-12 {
            return Vec::new();
        }
        let n = self.config.torque_levels.max(1);
        let mut levels = Vec::with_capacity(n + 1);
        if n == 1 || hi - lo <= 0.0 {
            levels.push(0.5 * (lo + hi));
        } else {
            for i in 0..n {
                levels.push(lo + (hi - lo) * i as f64 / (n - 1) as f64);
            }
        }
        if lo <= 0.0 && 0.0 <= hi {
            levels.push(0.0);
        }
        levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
        levels.dedup();
        levels
            .into_iter()
            .map(|t_e| TorqueSplit {
                motor: t_t - t_e,
                engine: t_e,
            })
            .collect()
    }

    /// Fuel power for a split: zero engine torque means the engine is
    /// effectively off for this planning layer.
    pub fn split_fuel_power(&self, v: f64, gear: u8, split: &TorqueSplit) -> f64 {
        if split.engine == 0.0 {
            0.0
        } else {
            self.maps.fuel_power(gear, true, split.engine, v)
        }
    }

    /// Battery terminal power implied by a split.
    pub fn split_battery_power(&self, v: f64, p_a: f64, split: &TorqueSplit) -> f64 {
        self.maps.motor_power(v, split.motor) + p_a
    }

    fn validate(&self, e0: f64, forecast: &PowertrainForecast, floor: f64) -> Result<(), ChargeError> {
        forecast
            .validate()
            .map_err(|e| ChargeError::InvalidInput(e.to_string()))?;
        if e0 < self.battery.energy_min - 1e-9 || e0 > self.battery.energy_max + 1e-9 {
            return Err(ChargeError::InvalidInput("initial energy out of bounds".into()));
        }
        if floor < self.battery.energy_min || floor > self.battery.energy_max {
            return Err(ChargeError::InvalidInput("floor out of bounds".into()));
        }
        Ok(())
    }

    fn positions(forecast: &PowertrainForecast) -> Vec<f64> {
        let mut out = Vec::with_capacity(forecast.horizon() + 1);
        let mut s = 0.0;
        out.push(0.0);
        for &v in &forecast.speeds {
            s += v * forecast.step;
            out.push(s);
        }
        out
    }

    /// Optimal battery reference over the trip (minimum weighted fuel plus
    /// battery energy subject to the terminal floor).
    pub fn plan(
        &self,
        e0: f64,
        forecast: &PowertrainForecast,
        weights: &EnergyWeights,
        floor: f64,
    ) -> Result<ChargePlanResult, ChargeError> {
        self.validate(e0, forecast, floor)?;
        let n = forecast.horizon();
        let grid = self.grid(e0);
        let gears = self.gear_schedule(forecast);
        let t_s = forecast.step;

        // per-step candidate transitions (independent of battery state
        // except through the battery step itself)
        let step_splits: Vec<Vec<TorqueSplit>> = (0..n).map(|k| self.splits(forecast.speeds[k], gears[k])).collect();

        // backward DP over the grid
        let mut value = vec![f64::INFINITY; grid.len()];
        for (i, &e) in grid.iter().enumerate() {
            if e >= floor {
                value[i] = 0.0;
            }
        }
        let mut layers: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
        layers[n] = value;
        for k in (1..n).rev() {
            let mut v_k = vec![f64::INFINITY; grid.len()];
            let v_next = &layers[k + 1];
            for (i, &e) in grid.iter().enumerate() {
                let mut best = f64::INFINITY;
                for split in &step_splits[k] {
                    if let Some((j, stage)) = self.step_transition(&grid, e, k, split, forecast, &gears, weights, t_s)
                    {
                        let q = stage + v_next[j];
                        if q < best {
                            best = q;
                        }
                    }
                }
                v_k[i] = best;
            }
            layers[k] = v_k;
        }

        // forward extraction from the exact root
        let mut e_idx = Self::snap(&grid, e0);
        let mut refs = vec![grid[e_idx]];
        let mut splits = Vec::with_capacity(n);
        let mut cost = f64::INFINITY;
        let mut fuel_energy = 0.0;
        for k in 0..n {
            let v_next = &layers[k + 1];
            let mut best: Option<(f64, TorqueSplit, usize, f64)> = None;
            for split in &step_splits[k] {
                if let Some((j, stage)) = self.step_transition(&grid, grid[e_idx], k, split, forecast, &gears, weights, t_s) {
                    let tail = if k + 1 == n {
                        if grid[j] >= floor {
                            0.0
                        } else {
                            f64::INFINITY
                        }
                    } else {
                        v_next[j]
                    };
                    let q = stage + tail;
                    if q.is_finite() && best.as_ref().map_or(true, |b| q < b.0) {
                        let p_f = self.split_fuel_power(forecast.speeds[k], gears[k], split);
                        best = Some((q, *split, j, p_f));
                    }
                }
            }
            let Some((q, split, j, p_f)) = best else {
                return Err(ChargeError::Infeasible);
            };
            if k == 0 {
                cost = q;
            }
            splits.push(split);
            fuel_energy += p_f * t_s;
            e_idx = j;
            refs.push(grid[e_idx]);
        }
        Ok(ChargePlanResult {
            plan: ChargePlan {
                positions: Self::positions(forecast),
                reference_energies: refs,
                terminal_floor: floor,
            },
            splits,
            gears,
            cost,
            fuel_energy,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn step_transition(
        &self,
        grid: &[f64],
        e: f64,
        k: usize,
        split: &TorqueSplit,
        forecast: &PowertrainForecast,
        gears: &[u8],
        weights: &EnergyWeights,
        t_s: f64,
    ) -> Option<(usize, f64)> {
        let v = forecast.speeds[k];
        let p_b = self.split_battery_power(v, forecast.aux_powers[k], split);
        let Ok(e_next) = battery_step(e, p_b, self.battery, t_s) else {
            return None;
        };
        if e_next < self.battery.energy_min - 1e-9 || e_next > self.battery.energy_max + 1e-9 {
            return None;
        }
        let j = Self::snap(grid, e_next);
        let p_f = self.split_fuel_power(v, gears[k], split);
        let stage = weights.fuel * p_f * t_s + weights.battery * (e - grid[j]);
        Some((j, stage))
    }

    /// Charge-depleting/charge-sustaining baseline on the same discretized
    /// model: deplete at maximum electric capability until the floor plus
    /// the sustaining band, then hold charge.
    pub fn cdcs_baseline(
        &self,
        e0: f64,
        forecast: &PowertrainForecast,
        weights: &EnergyWeights,
        floor: f64,
    ) -> Result<CdcsResult, ChargeError> {
        self.validate(e0, forecast, floor)?;
        let n = forecast.horizon();
        let grid = self.grid(e0);
        let gears = self.gear_schedule(forecast);
        let t_s = forecast.step;
        let threshold = (floor + self.config.sustain_band).min(self.battery.energy_max);

        let mut e_idx = Self::snap(&grid, e0);
        let mut refs = vec![grid[e_idx]];
        let mut splits = Vec::with_capacity(n);
        let mut stages = Vec::with_capacity(n);
        let mut fuel_energy = 0.0;
        let mut phase_switch: Option<usize> = None;
        for k in 0..n {
            let depleting = grid[e_idx] > threshold && phase_switch.is_none();
            if !depleting && phase_switch.is_none() {
                phase_switch = Some(k);
            }
            let mut best: Option<(f64, usize, TorqueSplit, f64)> = None;
            for split in &self.splits(forecast.speeds[k], gears[k]) {
                let Some((j, stage)) = self.step_transition(&grid, grid[e_idx], k, split, forecast, &gears, weights, t_s)
                else {
                    continue;
                };
                if grid[j] < floor {
                    continue;
                }
                // depleting: minimize the successor energy; sustaining:
                // minimize the energy movement
                let key = if depleting {
                    grid[j]
                } else {
                    (grid[j] - grid[e_idx]).abs()
                };
                if best.as_ref().map_or(true, |b| key < b.0) {
                    best = Some((key, j, *split, stage));
                }
            }
            let Some((_, j, split, stage)) = best else {
                return Err(ChargeError::Infeasible);
            };
            fuel_energy += self.split_fuel_power(forecast.speeds[k], gears[k], &split) * t_s;
            splits.push(split);
            stages.push(stage);
            e_idx = j;
            refs.push(grid[e_idx]);
        }
        if grid[e_idx] < floor {
            return Err(ChargeError::Infeasible);
        }
        // fold the stage costs from the back so the total is arithmetically
        // comparable with the DP's Bellman value
        let cost = stages.iter().rev().fold(0.0, |acc, s| s + acc);
        Ok(CdcsResult {
            plan: ChargePlan {
                positions: Self::positions(forecast),
                reference_energies: refs,
                terminal_floor: floor,
            },
            splits,
            gears,
            cost,
            fuel_energy,
            phase_switch,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::PowertrainMaps;

    fn setup() -> (PowertrainMaps, BatteryParams) {
        (PowertrainMaps::synthetic_default(), BatteryParams::default_phev())
    }

    fn planner<'a>(maps: &'a PowertrainMaps, battery: &'a BatteryParams) -> ChargePlanner<'a> {
        ChargePlanner::new(maps, battery, ChargePlannerConfig::default())
    }

    #[test]
    fn zero_demand_plan_is_constant_and_free() {
        let (maps, battery) = setup();
        let p = planner(&maps, &battery);
        let e0 = 0.5 * (battery.energy_min + battery.energy_max);
        let forecast = PowertrainForecast::constant(10.0, 0.0, 0.0, 12);
        let res = p.plan(e0, &forecast, &EnergyWeights::default(), battery.energy_min).unwrap();
        assert_eq!(res.cost, 0.0);
        assert!(res.plan.reference_energies.iter().all(|&e| e == e0));
        assert_eq!(res.fuel_energy, 0.0);
    }

    #[test]
    fn fuel_dominated_weights_go_all_electric() {
        let (maps, battery) = setup();
        let p = planner(&maps, &battery);
        let e0 = battery.energy_max;
        let forecast = PowertrainForecast::constant(10.0, 15.0, 200.0, 20);
        let weights = EnergyWeights {
            fuel: 1_000.0,
            battery: 1e-6,
        };
        let res = p.plan(e0, &forecast, &weights, battery.energy_min).unwrap();
        assert!(res.splits.iter().all(|s| s.engine == 0.0), "engine must stay unused");
        assert_eq!(res.fuel_energy, 0.0);
        // depleting only (no regeneration on a cruise forecast)
        for w in res.plan.reference_energies.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }

    #[test]
    fn unreachable_floor_is_infeasible() {
        let (maps, battery) = setup();
        let p = planner(&maps, &battery);
        let forecast = PowertrainForecast::constant(10.0, 20.0, 500.0, 10);
        let res = p.plan(battery.energy_min, &forecast, &EnergyWeights::default(), battery.energy_max);
        assert!(matches!(res, Err(ChargeError::Infeasible)));
    }

    #[test]
    fn cdcs_short_trip_stays_electric() {
        let (maps, battery) = setup();
        let p = planner(&maps, &battery);
        let forecast = PowertrainForecast::constant(5.0, 12.0, 200.0, 6);
        let res = p
            .cdcs_baseline(battery.energy_max, &forecast, &EnergyWeights::default(), battery.energy_min)
            .unwrap();
        assert!(res.phase_switch.is_none(), "short trip never reaches the floor band");
        assert!(res.splits.iter().all(|s| s.engine == 0.0));
        assert_eq!(res.fuel_energy, 0.0);
    }

    #[test]
    fn cdcs_long_trip_has_two_phases() {
        let (maps, battery) = setup();
        let mut config = ChargePlannerConfig::default();
        config.sustain_band = 1.0e6;
        let p = ChargePlanner::new(&maps, &battery, config);
        // start just above the band so depletion hits it quickly
        let e0 = battery.energy_min + 4.0e6;
        let forecast = PowertrainForecast::constant(20.0, 18.0, 500.0, 40);
        let res = p
            .cdcs_baseline(e0, &forecast, &EnergyWeights::default(), battery.energy_min)
            .unwrap();
        let switch = res.phase_switch.expect("long trip must enter sustaining");
        assert!(switch > 0 && switch < 40);
        // sustaining phase holds energy within the band
        for &e in &res.plan.reference_energies[switch..] {
            assert!(e <= battery.energy_min + 2.0e6);
            assert!(e >= battery.energy_min);
        }
    }

    #[test]
    fn plan_cost_never_exceeds_cdcs() {
        let (maps, battery) = setup();
        let p = planner(&maps, &battery);
        let weights = EnergyWeights {
            fuel: 1.0,
            battery: 1.0,
        };
        for (steps, speed) in [(25, 14.0), (40, 18.0), (60, 22.0)] {
            let forecast = PowertrainForecast::constant(15.0, speed, 400.0, steps);
            let e0 = battery.energy_min + 0.6 * (battery.energy_max - battery.energy_min);
            let plan = p.plan(e0, &forecast, &weights, battery.energy_min).unwrap();
            let cdcs = p.cdcs_baseline(e0, &forecast, &weights, battery.energy_min).unwrap();
            assert!(
                plan.cost <= cdcs.cost,
                "dominance violated: plan {} vs cdcs {}",
                plan.cost,
                cdcs.cost
            );
        }
    }

    #[test]
    fn reference_interpolation_and_csv() {
        let plan = ChargePlan {
            positions: vec![0.0, 100.0, 300.0],
            reference_energies: vec![10.0e6, 9.0e6, 8.0e6],
            terminal_floor: 7.0e6,
        };
        assert_eq!(plan.reference_at(-5.0), 10.0e6);
        assert_eq!(plan.reference_at(50.0), 9.5e6);
        assert_eq!(plan.reference_at(200.0), 8.5e6);
        assert_eq!(plan.reference_at(900.0), 8.0e6);
        let mut buf = Vec::new();
        plan.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("index,position,reference_energy"));
        assert_eq!(text.lines().count(), 4);
    }
}
