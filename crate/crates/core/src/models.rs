//! Shared plant models: longitudinal resistance forces, battery dynamics,
//! tabulated powertrain maps, the kinematic bicycle, and position-indexed
//! route profiles.
//!
//! Everything here is a pure function over immutable parameter structs, so
//! any number of solver instances can evaluate the same models concurrently.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interp::{Table1D, Table2D, TableError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("battery step infeasible: demanded power {p_b} W exceeds capability at E_q = {e_q} J")]
    DiscriminantNegative { e_q: f64, p_b: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("table: {0}")]
    Table(#[from] TableError),
}

/// Physical constants of one vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    /// Mass (kg).
    pub mass: f64,
    /// Overall length (m).
    pub length: f64,
    /// Frontal area (m^2).
    pub frontal_area: f64,
    /// Standalone air drag coefficient.
    pub drag_base: f64,
    /// Rolling resistance coefficient.
    pub rolling: f64,
    /// Viscous friction coefficient (s/m).
    pub viscous: f64,
    /// Distance from center of mass to front axle (m).
    pub wheelbase_front: f64,
    /// Distance from center of mass to rear axle (m).
    pub wheelbase_rear: f64,
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fields = [
            ("mass", self.mass),
            ("length", self.length),
            ("frontal_area", self.frontal_area),
            ("drag_base", self.drag_base),
            ("rolling", self.rolling),
            ("viscous", self.viscous),
            ("wheelbase_front", self.wheelbase_front),
            ("wheelbase_rear", self.wheelbase_rear),
        ];
        for (name, v) in fields {
            if !(v > 0.0) || !v.is_finite() {
                return Err(ModelError::InvalidParameter(format!(
                    "{name} must be strictly positive, got {v}"
                )));
            }
        }
        if self.wheelbase_front + self.wheelbase_rear > self.length {
            return Err(ModelError::InvalidParameter(
                "wheelbase_front + wheelbase_rear exceeds vehicle length".into(),
            ));
        }
        Ok(())
    }

    /// Mid-size plug-in hybrid used by the bundled scenarios. All numbers
    /// are synthetic.
    pub fn default_phev() -> Self {
        Self {
            mass: 1600.0,
            length: 4.5,
            frontal_area: 2.3,
            drag_base: 0.29,
            rolling: 0.009,
            viscous: 4.0e-4,
            wheelbase_front: 1.3,
            wheelbase_rear: 1.4,
        }
    }
}

/// Ambient constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    /// Gravity (m/s^2).
    pub gravity: f64,
    /// Air density (kg/m^3).
    pub air_density: f64,
}

impl Default for Environment {
    fn default() -> Self {
        Self {
            gravity: 9.81,
            air_density: 1.225,
        }
    }
}

impl Environment {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.gravity > 0.0) || !(self.air_density > 0.0) {
            return Err(ModelError::InvalidParameter(
                "gravity and air_density must be strictly positive".into(),
            ));
        }
        Ok(())
    }
}

/// Battery parameters for the internal-energy dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryParams {
    /// Open-circuit-voltage fit coefficient (1/s equivalent).
    pub ocv_fit: f64,
    /// Internal resistance (ohm).
    pub internal_resistance: f64,
    /// Charge capacity (coulomb).
    pub capacity: f64,
    /// Lower bound on stored energy (J).
    pub energy_min: f64,
    /// Upper bound on stored energy (J).
    pub energy_max: f64,
}

impl BatteryParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.internal_resistance > 0.0) || !(self.capacity > 0.0) || !(self.ocv_fit > 0.0) {
            return Err(ModelError::InvalidParameter(
                "ocv_fit, internal_resistance, capacity must be strictly positive".into(),
            ));
        }
        if !(self.energy_min >= 0.0 && self.energy_min < self.energy_max) {
            return Err(ModelError::InvalidParameter(
                "energy bounds must satisfy 0 <= energy_min < energy_max".into(),
            ));
        }
        Ok(())
    }

    /// Terminal power above which the battery step has no real solution at
    /// stored energy `e_q`.
    pub fn max_discharge_power(&self, e_q: f64) -> f64 {
        self.ocv_fit * e_q / (2.0 * self.internal_resistance * self.capacity)
    }

    /// Synthetic 8.9 kWh plug-in hybrid pack.
    pub fn default_phev() -> Self {
        Self {
            ocv_fit: 60.0,
            internal_resistance: 0.1,
            capacity: 90_000.0,
            energy_min: 3.2e6,
            energy_max: 3.2e7,
        }
    }
}

/// Gap and speed of the ego vehicle relative to its predecessor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LongitudinalState {
    /// Distance to the preceding vehicle (m).
    pub gap: f64,
    /// Ego speed (m/s).
    pub speed: f64,
}

/// Planar kinematic bicycle state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BicycleState {
    pub x: f64,
    pub y: f64,
    /// Inertial heading (rad).
    pub heading: f64,
    /// Longitudinal speed (m/s), never negative.
    pub speed: f64,
}

/// Position-indexed route description: grade is piecewise linear between
/// breakpoints, speed limit and auxiliary power are piecewise constant from
/// each breakpoint to the next (the last value extends beyond the end).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteProfile {
    pub breakpoints: Vec<f64>,
    pub grade: Vec<f64>,
    pub speed_limit: Vec<f64>,
    pub aux_power: Vec<f64>,
}

impl RouteProfile {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.breakpoints.is_empty() {
            return Err(ModelError::InvalidParameter("route has no breakpoints".into()));
        }
        for i in 1..self.breakpoints.len() {
            if self.breakpoints[i] <= self.breakpoints[i - 1] {
                return Err(ModelError::InvalidParameter(
                    "route breakpoints must be strictly increasing".into(),
                ));
            }
        }
        let n = self.breakpoints.len();
        if self.grade.len() != n || self.speed_limit.len() != n || self.aux_power.len() != n {
            return Err(ModelError::InvalidParameter(
                "grade, speed_limit, aux_power must have one entry per breakpoint".into(),
            ));
        }
        if self.speed_limit.iter().any(|&v| !(v > 0.0)) {
            return Err(ModelError::InvalidParameter(
                "speed limits must be strictly positive".into(),
            ));
        }
        Ok(())
    }

    /// Flat route of the given length with a uniform speed limit.
    pub fn flat(length: f64, speed_limit: f64) -> Self {
        Self {
            breakpoints: vec![0.0, length],
            grade: vec![0.0, 0.0],
            speed_limit: vec![speed_limit, speed_limit],
            aux_power: vec![0.0, 0.0],
        }
    }

    pub fn start(&self) -> f64 {
        self.breakpoints[0]
    }

    pub fn end(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    /// Piecewise-linear grade, clamped outside the route.
    pub fn grade_at(&self, s: f64) -> f64 {
        let bp = &self.breakpoints;
        let n = bp.len();
        if n == 1 || s <= bp[0] {
            return self.grade[0];
        }
        if s >= bp[n - 1] {
            return self.grade[n - 1];
        }
        let hi = bp.partition_point(|&b| b <= s);
        let seg = hi - 1;
        let w = (s - bp[seg]) / (bp[seg + 1] - bp[seg]);
        self.grade[seg] + w * (self.grade[seg + 1] - self.grade[seg])
    }

    fn piecewise_constant(&self, values: &[f64], s: f64) -> f64 {
        let bp = &self.breakpoints;
        if s <= bp[0] {
            return values[0];
        }
        let hi = bp.partition_point(|&b| b <= s);
        values[hi - 1]
    }

    pub fn speed_limit_at(&self, s: f64) -> f64 {
        self.piecewise_constant(&self.speed_limit, s)
    }

    pub fn aux_power_at(&self, s: f64) -> f64 {
        self.piecewise_constant(&self.aux_power, s)
    }
}

/// Tabulated powertrain characteristics: demanded transmission torque,
/// motor electrical power, engine fuel power, and actuator torque bounds.
/// All tables are piecewise linear with clamped extrapolation.
#[derive(Debug, Clone, PartialEq)]
pub struct PowertrainMaps {
    gear_count: u8,
    /// Demanded transmission-input torque per gear, indexed by speed.
    trans_torque: Vec<Table1D>,
    /// Motor electrical power over (speed, motor torque).
    motor_power: Table2D,
    /// Fuel thermal power per gear over (speed, engine torque); applies when
    /// the engine is on, zero otherwise.
    fuel_power: Vec<Table2D>,
    motor_torque_min: Table1D,
    motor_torque_max: Table1D,
    engine_torque_min: Table1D,
    engine_torque_max: Table1D,
}

impl PowertrainMaps {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        trans_torque: Vec<Table1D>,
        motor_power: Table2D,
        fuel_power: Vec<Table2D>,
        motor_torque_min: Table1D,
        motor_torque_max: Table1D,
        engine_torque_min: Table1D,
        engine_torque_max: Table1D,
    ) -> Result<Self, ModelError> {
        if trans_torque.is_empty() || trans_torque.len() != fuel_power.len() {
            return Err(ModelError::InvalidParameter(
                "need one trans_torque and one fuel_power table per gear".into(),
            ));
        }
        if trans_torque.len() > u8::MAX as usize {
            return Err(ModelError::InvalidParameter("too many gears".into()));
        }
        let maps = Self {
            gear_count: trans_torque.len() as u8,
            trans_torque,
            motor_power,
            fuel_power,
            motor_torque_min,
            motor_torque_max,
            engine_torque_min,
            engine_torque_max,
        };
        for t in &maps.fuel_power {
            if t.min_value() < 0.0 {
                return Err(ModelError::InvalidParameter(
                    "fuel power must be non-negative everywhere".into(),
                ));
            }
        }
        // torque bounds must be ordered pointwise; check on the union of
        // both tables' breakpoints
        for (lo, hi, what) in [
            (&maps.motor_torque_min, &maps.motor_torque_max, "motor"),
            (&maps.engine_torque_min, &maps.engine_torque_max, "engine"),
        ] {
            let mut probes: Vec<f64> = lo.breakpoints().to_vec();
            probes.extend_from_slice(hi.breakpoints());
            for v in probes {
                if lo.eval(v) > hi.eval(v) + 1e-9 {
                    return Err(ModelError::InvalidParameter(format!(
                        "{what} torque bounds cross at v = {v}"
                    )));
                }
            }
        }
        Ok(maps)
    }

    pub fn gear_count(&self) -> u8 {
        self.gear_count
    }

    fn gear_index(&self, gear: u8) -> usize {
        debug_assert!(gear >= 1 && gear <= self.gear_count, "gear {gear} out of range");
        (gear.clamp(1, self.gear_count) - 1) as usize
    }

    /// Demanded transmission-input torque at speed `v` in `gear`.
    pub fn trans_torque(&self, v: f64, gear: u8) -> f64 {
        self.trans_torque[self.gear_index(gear)].eval(v)
    }

    /// Motor electrical power for motor torque `t_m` at speed `v`.
    pub fn motor_power(&self, v: f64, t_m: f64) -> f64 {
        self.motor_power.eval(v, t_m)
    }

    /// Fuel thermal power; identically zero while the engine is off.
    pub fn fuel_power(&self, gear: u8, engine_on: bool, t_e: f64, v: f64) -> f64 {
        if !engine_on {
            return 0.0;
        }
        self.fuel_power[self.gear_index(gear)].eval(v, t_e)
    }

    pub fn motor_torque_bounds(&self, v: f64) -> (f64, f64) {
        (self.motor_torque_min.eval(v), self.motor_torque_max.eval(v))
    }

    pub fn engine_torque_bounds(&self, v: f64) -> (f64, f64) {
        (self.engine_torque_min.eval(v), self.engine_torque_max.eval(v))
    }

    /// Synthetic four-gear plug-in hybrid maps matching
    /// [`VehicleParams::default_phev`]. `v_points`/`torque_points` set the
    /// table resolution.
    pub fn synthetic(v_points: usize, torque_points: usize) -> Self {
        let vehicle = VehicleParams::default_phev();
        let env = Environment::default();
        let wheel_radius = 0.3;
        let ratios = [10.5, 6.6, 4.2, 2.7]; // gearbox x final drive
        let motor_ratio = 7.0;
        let v_max = 60.0;

        // Steady-cruise demand reflected to the transmission input. Zero at
        // standstill so a stationary forecast demands no torque.
        let demand = |v: f64| {
            if v <= 0.0 {
                0.0
            } else {
                resistance_force(v, 0.0, &vehicle, &env, vehicle.drag_base) * wheel_radius
            }
        };
        let trans_torque: Vec<Table1D> = ratios
            .iter()
            .map(|&r| Table1D::sample(0.0, v_max, v_points, |v| demand(v) / r))
            .collect();

        // Motor electrical power: shaft power plus copper and iron losses.
        let motor_speed = |v: f64| v / wheel_radius * motor_ratio;
        let motor_power = Table2D::sample((0.0, v_max), (-260.0, 260.0), (v_points, torque_points), |v, t_m| {
            let w = motor_speed(v);
            w * t_m + 0.05 * t_m * t_m + 3.0 * w
        });

        // Willans-line fuel power per gear with idle burn and a mild
        // quadratic penalty at high load.
        let fuel_power: Vec<Table2D> = ratios
            .iter()
            .map(|&r| {
                Table2D::sample((0.0, v_max), (0.0, 170.0), (v_points, torque_points), |v, t_e| {
                    let w = (v / wheel_radius * r).clamp(80.0, 620.0);
                    let p_e = (w * t_e).max(0.0);
                    1500.0 + 4.0 * w + 2.78 * p_e + 6.0e-6 * p_e * p_e
                })
            })
            .collect();

        let motor_torque_max =
            Table1D::sample(0.0, v_max, v_points, |v| 250.0f64.min(70_000.0 / motor_speed(v).max(1.0)));
        let motor_torque_min =
            Table1D::sample(0.0, v_max, v_points, |v| -(250.0f64.min(70_000.0 / motor_speed(v).max(1.0))));
        let engine_torque_min = Table1D::constant(0.0);
        let engine_torque_max = Table1D::sample(0.0, v_max, v_points, |v| 160.0 - 0.4 * v);

        Self::new(
            trans_torque,
            motor_power,
            fuel_power,
            motor_torque_min,
            motor_torque_max,
            engine_torque_min,
            engine_torque_max,
        )
        .expect("synthetic maps are valid by construction")
    }

    pub fn synthetic_default() -> Self {
        Self::synthetic(31, 27)
    }

    /// Write all tables into `dir` (one CSV per table).
    pub fn save_dir(&self, dir: &Path) -> Result<(), ModelError> {
        std::fs::create_dir_all(dir).map_err(TableError::Io)?;
        let file = |name: &str| std::fs::File::create(dir.join(name)).map_err(TableError::Io);
        for (i, t) in self.trans_torque.iter().enumerate() {
            t.write_csv(file(&format!("trans_torque_gear{}.csv", i + 1))?, "v", "torque")?;
        }
        self.motor_power.write_csv(file("motor_power.csv")?, "v", "t_m")?;
        for (i, t) in self.fuel_power.iter().enumerate() {
            t.write_csv(file(&format!("fuel_power_gear{}.csv", i + 1))?, "v", "t_e")?;
        }
        self.motor_torque_min.write_csv(file("motor_torque_min.csv")?, "v", "torque")?;
        self.motor_torque_max.write_csv(file("motor_torque_max.csv")?, "v", "torque")?;
        self.engine_torque_min.write_csv(file("engine_torque_min.csv")?, "v", "torque")?;
        self.engine_torque_max.write_csv(file("engine_torque_max.csv")?, "v", "torque")?;
        Ok(())
    }

    /// Load tables previously written by [`save_dir`](Self::save_dir); the
    /// gear count is discovered from the `trans_torque_gear*.csv` files.
    pub fn load_dir(dir: &Path) -> Result<Self, ModelError> {
        let mut trans_torque = Vec::new();
        let mut fuel_power = Vec::new();
        for g in 1.. {
            let tt = dir.join(format!("trans_torque_gear{g}.csv"));
            if !tt.exists() {
                break;
            }
            trans_torque.push(Table1D::load(&tt)?);
            fuel_power.push(Table2D::load(&dir.join(format!("fuel_power_gear{g}.csv")))?);
        }
        Self::new(
            trans_torque,
            Table2D::load(&dir.join("motor_power.csv"))?,
            fuel_power,
            Table1D::load(&dir.join("motor_torque_min.csv"))?,
            Table1D::load(&dir.join("motor_torque_max.csv"))?,
            Table1D::load(&dir.join("engine_torque_min.csv"))?,
            Table1D::load(&dir.join("engine_torque_max.csv"))?,
        )
    }
}

/// Total resistance force opposing motion (N): grade, rolling, viscous and
/// aerodynamic terms. Grade is signed by `grade_rad`; the remaining terms
/// oppose forward motion for `v > 0`.
pub fn resistance_force(
    v: f64,
    grade_rad: f64,
    params: &VehicleParams,
    env: &Environment,
    drag_coeff: f64,
) -> f64 {
    let m_g = params.mass * env.gravity;
    m_g * grade_rad.sin()
        + m_g * (params.rolling + params.viscous * v)
        + 0.5 * env.air_density * params.frontal_area * drag_coeff * v * v
}

/// One Euler step of the battery internal-energy dynamics.
///
/// `p_b` is the terminal power drawn from the battery (positive discharges,
/// negative charges). Returns the next stored energy, or an error when the
/// demanded power exceeds what the battery can deliver at this energy level.
pub fn battery_step(e_q: f64, p_b: f64, params: &BatteryParams, t_s: f64) -> Result<f64, ModelError> {
    let a = params.ocv_fit;
    let rq = params.internal_resistance * params.capacity;
    let disc = e_q * e_q - (2.0 * rq / a) * p_b * e_q;
    if disc < 0.0 {
        return Err(ModelError::DiscriminantNegative { e_q, p_b });
    }
    Ok(e_q - (t_s * a / rq) * (e_q - disc.sqrt()))
}

/// Battery internal power (W) implied by one step: the stored-energy drop
/// divided by the step length. Positive while discharging.
pub fn battery_internal_power(e_q: f64, p_b: f64, params: &BatteryParams, t_s: f64) -> Result<f64, ModelError> {
    Ok((e_q - battery_step(e_q, p_b, params, t_s)?) / t_s)
}

/// Slip angle of the kinematic bicycle for steering angle `steer`.
pub fn bicycle_slip(steer: f64, params: &VehicleParams) -> f64 {
    let k = params.wheelbase_rear / (params.wheelbase_rear + params.wheelbase_front);
    (k * steer.tan()).atan()
}

/// Forward-Euler step of the kinematic bicycle. Speed is clamped at zero;
/// reverse motion is out of scope.
pub fn bicycle_step(
    state: &BicycleState,
    accel: f64,
    steer: f64,
    params: &VehicleParams,
    t_s: f64,
) -> BicycleState {
    let beta = bicycle_slip(steer, params);
    let course = state.heading + beta;
    BicycleState {
        x: state.x + t_s * state.speed * course.cos(),
        y: state.y + t_s * state.speed * course.sin(),
        heading: state.heading + t_s * state.speed / params.wheelbase_rear * beta.sin(),
        speed: (state.speed + t_s * accel).max(0.0),
    }
}

/// Analytic Jacobians of [`bicycle_step`] with respect to the state
/// `[x, y, heading, speed]` and the input `[accel, steer]`. The speed row is
/// zeroed when the step clamps speed at zero.
pub fn bicycle_jacobian(
    state: &BicycleState,
    accel: f64,
    steer: f64,
    params: &VehicleParams,
    t_s: f64,
) -> ([[f64; 4]; 4], [[f64; 2]; 4]) {
    let k = params.wheelbase_rear / (params.wheelbase_rear + params.wheelbase_front);
    let tan_d = steer.tan();
    let beta = (k * tan_d).atan();
    let course = state.heading + beta;
    let (sin_c, cos_c) = course.sin_cos();
    let v = state.speed;
    let lr = params.wheelbase_rear;
    // d beta / d steer
    let sec2 = 1.0 + tan_d * tan_d;
    let dbeta = k * sec2 / (1.0 + k * k * tan_d * tan_d);
    let clamped = v + t_s * accel <= 0.0;

    let mut jx = [[0.0; 4]; 4];
    jx[0] = [1.0, 0.0, -t_s * v * sin_c, t_s * cos_c];
    jx[1] = [0.0, 1.0, t_s * v * cos_c, t_s * sin_c];
    jx[2] = [0.0, 0.0, 1.0, t_s * beta.sin() / lr];
    jx[3] = [0.0, 0.0, 0.0, if clamped { 0.0 } else { 1.0 }];

    let mut ju = [[0.0; 2]; 4];
    ju[0] = [0.0, -t_s * v * sin_c * dbeta];
    ju[1] = [0.0, t_s * v * cos_c * dbeta];
    ju[2] = [0.0, t_s * v / lr * beta.cos() * dbeta];
    ju[3] = [if clamped { 0.0 } else { t_s }, 0.0];
    (jx, ju)
}

/// Residuals of the two powertrain balance equations: torque summation at
/// the transmission input shaft and power summation at the battery output.
/// Feasible operating points return `(0, 0)` up to solver tolerance.
#[allow(clippy::too_many_arguments)]
pub fn power_balance_residual(
    gear: u8,
    engine_on: bool,
    t_m: f64,
    t_e: f64,
    p_b: f64,
    v: f64,
    p_a: f64,
    maps: &PowertrainMaps,
) -> (f64, f64) {
    let s_e = if engine_on { 1.0 } else { 0.0 };
    (
        maps.trans_torque(v, gear) - t_m - s_e * t_e,
        p_b - maps.motor_power(v, t_m) - p_a,
    )
}
