use cavstack::ecodrive::*;
use cavstack::models::*;

fn main() {
    let problem = EcoDriveProblem {
        route: RouteProfile::flat(800.0, 16.0),
        signals: Vec::new(),
        chance: None,
        vehicle: VehicleParams::default_phev(),
        env: Environment::default(),
        fuel_map: synthetic_fuel_map(),
        limits: EcoDriveLimits::default(),
        position_step: 10.0,
        time_budget: 160.0,
        start_speed: 8.0,
        config: EcoDriveConfig::default(),
    };
    let sol = EcoDriveSolver::solve(&problem).unwrap();
    println!("cost {:.1} final t {:.1}", sol.cost, sol.times.last().unwrap());
    for (i, s) in sol.speeds.iter().enumerate() {
        print!("{s:.2} ");
        if i % 10 == 9 { println!(); }
    }
    println!();
    println!("forces: {:?}", &sol.wheel_forces[..20.min(sol.wheel_forces.len())]);
}
