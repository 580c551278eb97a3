//! Planning and control stack for connected automated vehicles.
//!
//! The crate is organized as a hierarchy of planners and controllers that
//! share one set of plant models ([`models`]):
//!
//! * remote / long-horizon layers: [`router`] (minimum-energy routing on a
//!   road graph), [`charge`] (battery reference trajectory for a plug-in
//!   hybrid), [`ecodrive`] (position-domain speed planning through
//!   signalized corridors), [`platoon`] (multi-vehicle coordination);
//! * on-board / receding-horizon layers: [`powertrain`] (gear, engine
//!   on/off and torque-split MPC), [`cacc`] (cooperative adaptive cruise
//!   control), [`planner`] (collision-avoidance trajectory planning);
//! * harness: [`scenario`] (file schema), [`sim`] (closed-loop episodes),
//!   [`emit`] (CSV / SVG output).
//!
//! All solvers are deterministic: fixed inputs produce bitwise identical
//! outputs regardless of thread count. Data-parallel loops (Monte Carlo
//! validation, batch suites) go through [`exec`], which uses rayon when the
//! `parallel` feature is enabled (default) and plain iterators otherwise.

pub mod cacc;
pub mod charge;
pub mod ecodrive;
pub mod emit;
pub mod exec;
pub mod interp;
pub mod models;
pub mod planner;
pub mod platoon;
pub mod powertrain;
pub mod router;
pub mod scenario;
pub mod sim;
