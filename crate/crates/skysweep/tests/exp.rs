//! Throwaway experiment: outcome census over acceptance-like scenarios.

use skysweep::city::{generate_city, CityParams};
use skysweep::convexify::violation_breakdown;
use skysweep::planner::{plan, PlanError, PlannerSettings, Variant};
use skysweep::scenario::{Scenario, ScenarioParams};
use skysweep::solver::SolverSettings;

fn acceptance_scenario(seed: u64) -> Scenario {
    let city = generate_city(&CityParams {
        seed,
        ..CityParams::default()
    })
    .unwrap();
    Scenario::new(city, ScenarioParams::default()).unwrap()
}

#[test]
#[ignore]
fn census() {
    let mut converged = 0;
    let mut maxed = 0;
    let mut aborted = 0;
    for seed in 1000..1020u64 {
        let scenario = acceptance_scenario(seed);
        let issues = skysweep::scenario::validate_scenario(&scenario);
        let t0 = std::time::Instant::now();
        match plan(
            &scenario,
            Variant::Enhanced,
            &PlannerSettings::default(),
            &SolverSettings::default(),
        ) {
            Ok(res) => {
                let b = violation_breakdown(&scenario, &res.trajectories).unwrap();
                let status = format!("{:?}", res.status);
                if format!("{:?}", res.status) == "Converged" {
                    converged += 1;
                } else {
                    maxed += 1;
                }
                println!(
                    "seed {seed}: {status} iters={} ell={:.3e} obstacle={:.3e} inter={:.3e} t={:.2}s issues={}",
                    res.trace.len(),
                    b.safety(),
                    b.obstacle,
                    b.interdrone,
                    t0.elapsed().as_secs_f64(),
                    issues.issues.len(),
                );
            }
            Err(PlanError::SubproblemFailed {
                iteration,
                residual_primal,
                trace,
                ..
            }) => {
                aborted += 1;
                let last_ell = trace.last().map(|r| r.ell).unwrap_or(f64::NAN);
                println!(
                    "seed {seed}: ABORT at iter {iteration} residual={residual_primal:.2e} last_ell={last_ell:.2} t={:.2}s issues={}",
                    t0.elapsed().as_secs_f64(),
                    issues.issues.len(),
                );
            }
            Err(e) => println!("seed {seed}: ERROR {e}"),
        }
    }
    println!("converged={converged} maxed={maxed} aborted={aborted}");
}

#[test]
#[ignore]
fn flatland() {
    let city = skysweep::city::CityModel::from_raw(25, vec![0.0; 25 * 25]);
    let scenario = Scenario::new(
        city,
        ScenarioParams {
            n_drones: 2,
            n_waypoints: 10,
            ..ScenarioParams::default()
        },
    )
    .unwrap();
    let res = plan(
        &scenario,
        Variant::Enhanced,
        &PlannerSettings::default(),
        &SolverSettings::default(),
    )
    .unwrap();
    println!("status={:?}", res.status);
    for r in &res.trace {
        println!(
            "it {:2} d={:5.2} ell={:9.4} full={:9.4} step={:8.4} obj={:10.4} rows={} admm={} status={:?} t={:.2}s",
            r.iteration,
            r.delta,
            r.ell,
            r.violation_full,
            r.step_inf,
            r.objective,
            r.retained_rows,
            r.solver_iterations,
            r.solver_status,
            r.subproblem_time_s,
        );
    }
}

#[test]
#[ignore]
fn boxes() {
    // For each acceptance seed: how many preset waypoints have NO spot inside
    // their deviation box where the surrogate envelope clears z_max?
    for seed in 1000..1020u64 {
        let scenario = acceptance_scenario(seed);
        let p = &scenario.params;
        let city = &scenario.city;
        let s_max = (city.grid_size() - 1) as f64;
        let mut fatal = 0;
        let mut worst: f64 = 0.0;
        for k in 0..p.n_drones {
            for t in 0..p.n_waypoints {
                let [px, py] = scenario.preset.at(k, t);
                let mut need = f64::INFINITY;
                let steps = 24usize;
                for i in 0..=steps {
                    for j in 0..=steps {
                        let cx = (px - p.d_dev + 2.0 * p.d_dev * i as f64 / steps as f64)
                            .clamp(0.0, s_max);
                        let cy = (py - p.d_dev + 2.0 * p.d_dev * j as f64 / steps as f64)
                            .clamp(0.0, s_max);
                        let smooth = city.smoothed_height(cx, cy).unwrap();
                        let h = smooth.max(city.raw_at_nearest(cx, cy));
                        need = need.min(h + p.d_safe);
                    }
                }
                if need > p.z_max {
                    fatal += 1;
                    worst = worst.max(need - p.z_max);
                }
            }
        }
        println!("seed {seed}: fatal_waypoints={fatal} worst_excess={worst:.2}");
    }
}

fn env_or<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key)
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(default)
}

#[test]
#[ignore]
fn autopsy() {
    let seed: u64 = env_or("SEED", 1000);
    let city = generate_city(&CityParams {
        seed,
        grid_size: env_or("CITY_S", 50),
        building_density: env_or("DENSITY", 0.25),
        ..CityParams::default()
    })
    .unwrap();
    let scenario = Scenario::new(
        city,
        ScenarioParams {
            n_drones: env_or("N", 5),
            n_waypoints: env_or("T", 20),
            ..ScenarioParams::default()
        },
    )
    .unwrap();
    let eps = env_or("EPS", 1e-6);
    let res = match plan(
        &scenario,
        Variant::Enhanced,
        &PlannerSettings::default(),
        &SolverSettings {
            eps_primal: eps,
            eps_dual: eps,
            ..SolverSettings::default()
        },
    ) {
        Ok(res) => res,
        Err(PlanError::SubproblemFailed {
            iteration, trace, ..
        }) => {
            println!("aborted at iteration {iteration}");
            for r in &trace {
                println!(
                    "it {:2} d={:5.2} ell={:8.3} full={:8.3} step={:7.3} obj={:9.3} rows={} admm={} t={:.2}s",
                    r.iteration,
                    r.delta,
                    r.ell,
                    r.violation_full,
                    r.step_inf,
                    r.objective,
                    r.retained_rows,
                    r.solver_iterations,
                    r.subproblem_time_s,
                );
            }
            return;
        }
        Err(e) => panic!("{e}"),
    };
    println!("status={:?}", res.status);
    for r in &res.trace {
        println!(
            "it {:2} d={:5.2} ell={:8.3} full={:8.3} step={:7.3} obj={:9.3} rows={} admm={} t={:.2}s",
            r.iteration,
            r.delta,
            r.ell,
            r.violation_full,
            r.step_inf,
            r.objective,
            r.retained_rows,
            r.solver_iterations,
            r.subproblem_time_s,
        );
    }
    // Where is the final violation concentrated?
    let p = &scenario.params;
    let city = &scenario.city;
    let s_max = (city.grid_size() - 1) as f64;
    for k in 0..p.n_drones {
        for t in 0..p.n_waypoints {
            let [x, y, z] = res.trajectories.at(k, t);
            let cx = x.clamp(0.0, s_max);
            let cy = y.clamp(0.0, s_max);
            let raw = city.raw_at_nearest(cx, cy);
            let smooth = city.smoothed_height(cx, cy).unwrap();
            let v = raw + p.d_safe - z;
            if v > 1e-3 {
                println!(
                    "  drone {k} wp {t:2}: pos=({x:6.2},{y:6.2},{z:6.2}) raw={raw:5.1} smooth={smooth:6.2} viol={v:6.2}"
                );
            }
        }
    }
}
