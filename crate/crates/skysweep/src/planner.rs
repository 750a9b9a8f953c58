//! Outer sequential-convexification loop: linearize around the reference,
//! optionally filter inactive rows, solve the convex subproblem, move the
//! reference unconditionally, and adapt the trust radius from the measured
//! nonlinear violation.

use crate::convexify::{
    box_constraints, filter_constraints, linearize_interdrone, linearize_obstacle,
    violation_breakdown, ActiveConstraintSet, ConvexifyError, LinearConstraint,
};
use crate::scenario::{init_reference, Scenario, ScenarioError, Trajectories};
use crate::solver::{
    assemble_subproblem, remap_warm_start, solve_conic_warm, SolveStatus, SolverError,
    SolverSettings, WarmStart,
};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;
use thiserror::Error;

/// A subproblem that ends without optimality and with a normalized primal
/// residual above this is reported as infeasible and aborts the run.
const ABORT_RESIDUAL: f64 = 1e-3;

/// Spacing of the clearance-repair grid search inside the deviation box.
const REPAIR_STEP: f64 = 0.25;

/// Fraction of the trust radius a single anchored row may demand as its
/// one-step correction. Small enough that one climb plus one lateral closing
/// maneuver fit together inside the trust ball (0.6² + 0.6² < 1), large
/// enough that a buried reference recovers in a handful of iterations.
const REACH_FRACTION: f64 = 0.6;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Convexify(#[from] ConvexifyError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("invalid planner settings: {0}")]
    BadSettings(String),
    #[error(
        "subproblem infeasible at outer iteration {iteration} \
         (solver {status:?}, primal residual {residual_primal:.3e})"
    )]
    SubproblemFailed {
        iteration: usize,
        status: SolveStatus,
        residual_primal: f64,
        /// Iterations completed before the failure, for diagnostics.
        trace: Vec<IterationRecord>,
    },
}

/// Which planner configuration to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Constraint filtering on, finite trust radius, quadratic radius penalty.
    Enhanced,
    /// No filtering, finite trust radius, no radius penalty.
    OriginalTrsco,
    /// No filtering, no trust region at all (full-step ablation).
    NoTrustRegion,
}

impl Variant {
    pub const ALL: [Variant; 3] = [
        Variant::Enhanced,
        Variant::OriginalTrsco,
        Variant::NoTrustRegion,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Enhanced => "enhanced",
            Variant::OriginalTrsco => "original_trsco",
            Variant::NoTrustRegion => "no_trust_region",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "enhanced" => Ok(Variant::Enhanced),
            "original_trsco" => Ok(Variant::OriginalTrsco),
            "no_trust_region" => Ok(Variant::NoTrustRegion),
            other => Err(format!(
                "unknown variant `{other}` (expected enhanced, original_trsco, or no_trust_region)"
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerSettings {
    /// Initial trust radius in meters.
    pub delta0: f64,
    /// Contraction factor applied when the violation exceeds `eps_rho`.
    pub c1: f64,
    /// Expansion factor applied otherwise.
    pub c2: f64,
    /// Violation threshold gating expansion and convergence, in meters.
    pub eps_rho: f64,
    pub delta_min: f64,
    pub delta_max: f64,
    /// Convergence threshold on the infinity-norm reference step, in meters.
    pub eps_x: f64,
    pub max_outer: usize,
    /// Weight of the radius penalty in the subproblem objective. Each
    /// iteration solves a proximal-style subproblem, so near a feasible
    /// optimum the step shrinks roughly by `w / (w + curvature)` per
    /// iteration; the corner-rounding curvature of these trajectories is
    /// weak, and a heavy weight (1.0) leaves steps decaying so slowly that
    /// `eps_x` is unreachable within `max_outer`. 0.1 keeps the soft radius
    /// penalty active without strangling the tail.
    pub w_delta: f64,
    /// Order of the radius penalty term (must be at least 2; only 2 is
    /// representable in the quadratic-objective conic form used here).
    pub delta_exponent: u32,
}

impl Default for PlannerSettings {
    fn default() -> Self {
        Self {
            delta0: 5.0,
            c1: 0.8,
            c2: 1.3,
            eps_rho: 1e-3,
            delta_min: 0.5,
            delta_max: 20.0,
            eps_x: 1e-2,
            max_outer: 50,
            w_delta: 0.1,
            delta_exponent: 2,
        }
    }
}

impl PlannerSettings {
    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |msg: String| Err(PlanError::BadSettings(msg));
        if !(self.c1 > 0.0 && self.c1 < 1.0) {
            return bad(format!("c1 must lie in (0, 1), got {}", self.c1));
        }
        if !(self.c2 > 1.0) {
            return bad(format!("c2 must exceed 1, got {}", self.c2));
        }
        if !(self.delta_min > 0.0 && self.delta_min <= self.delta_max) {
            return bad(format!(
                "need 0 < delta_min <= delta_max, got [{}, {}]",
                self.delta_min, self.delta_max
            ));
        }
        if !(self.delta0 >= self.delta_min && self.delta0 <= self.delta_max) {
            return bad(format!(
                "delta0 {} outside [{}, {}]",
                self.delta0, self.delta_min, self.delta_max
            ));
        }
        if !(self.eps_rho > 0.0) || !(self.eps_x > 0.0) {
            return bad("eps_rho and eps_x must be positive".into());
        }
        if self.max_outer == 0 {
            return bad("max_outer must be positive".into());
        }
        if !(self.w_delta >= 0.0) || !self.w_delta.is_finite() {
            return bad(format!(
                "w_delta must be finite and nonnegative, got {}",
                self.w_delta
            ));
        }
        if self.delta_exponent != 2 {
            return bad(format!(
                "delta_exponent must be 2 (the only supported penalty order), got {}",
                self.delta_exponent
            ));
        }
        Ok(())
    }
}

/// One outer iteration of the trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Trust radius used this iteration; 0.0 for the uncapped ablation.
    pub delta: f64,
    /// Maximum violation of the constraints the subproblem enforces, at the
    /// new reference (raw obstacle clearance, separation, altitude, bounds,
    /// per-axis deviation), in meters.
    pub ell: f64,
    /// As `ell` but also counting Euclidean waypoint deviation.
    pub violation_full: f64,
    /// Subproblem objective at the accepted solution.
    pub objective: f64,
    /// Infinity-norm movement of the reference.
    pub step_inf: f64,
    pub retained_rows: usize,
    pub dropped_obstacle: usize,
    pub dropped_interdrone: usize,
    /// Worst violation of any dropped row at the new reference; confirms the
    /// filter only discarded rows that could not bind.
    pub max_dropped_violation: f64,
    pub solver_status: SolveStatus,
    pub solver_iterations: usize,
    pub subproblem_time_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanStatus {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanResult {
    pub variant: Variant,
    pub status: PlanStatus,
    pub trajectories: Trajectories,
    pub trace: Vec<IterationRecord>,
    pub wall_time_s: f64,
}

/// Trust-radius update: expand by `c2` while the violation exceeds
/// `eps_rho`, contract by `c1` once it does not, clamped to
/// `[delta_min, delta_max]`.
///
/// Expansion-on-violation inverts classical trust-region practice on
/// purpose: an infeasible iterate means the linearized rows demand a
/// correction the current region cannot reach, so the region must grow
/// until the repair fits; once feasible, contraction polishes the step.
pub fn update_radius(delta: f64, ell: f64, settings: &PlannerSettings) -> f64 {
    let next = if ell > settings.eps_rho {
        settings.c2 * delta
    } else {
        settings.c1 * delta
    };
    next.clamp(settings.delta_min, settings.delta_max)
}

/// Converged when the reference moved at most `eps_x` in infinity norm AND
/// the measured violation is at most `eps_rho`.
pub fn check_convergence(
    reference: &Trajectories,
    candidate: &Trajectories,
    ell: f64,
    settings: &PlannerSettings,
) -> Result<bool, PlanError> {
    let step = reference
        .max_abs_diff(candidate)
        .ok_or(ScenarioError::DimensionMismatch {
            got: candidate.dims(),
            want: reference.dims(),
        })?;
    Ok(step <= settings.eps_x && ell <= settings.eps_rho)
}

/// Every linearized row of the full problem around `refs`: boxes, one
/// obstacle row per waypoint, one separation row per same-time drone pair.
///
/// With a finite trust radius the obstacle and separation rows are anchored
/// to the reference: the violation a row may demand to fix in one step is
/// capped at a fraction of `delta` (a single-waypoint climb, respectively a
/// two-drone closing maneuver), which keeps every subproblem feasible even
/// when the previous step landed a reference over a rooftop cliff or inside a
/// neighbor's bubble. The caps are inactive at references that already
/// satisfy the surrogate constraints, so fixed points bind the true rows.
fn full_constraint_set(
    scenario: &Scenario,
    refs: &Trajectories,
    delta: f64,
) -> Result<Vec<LinearConstraint>, ConvexifyError> {
    let p = &scenario.params;
    let (climb_reach, sep_reach) = if delta.is_finite() {
        (REACH_FRACTION * delta, 2.0 * REACH_FRACTION * delta)
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    let mut rows = box_constraints(scenario);
    for k in 0..p.n_drones {
        for t in 0..p.n_waypoints {
            rows.push(linearize_obstacle(
                &scenario.city,
                refs.at(k, t),
                k,
                t,
                p.d_safe,
                climb_reach,
                p.z_max,
            )?);
        }
    }
    for t in 0..p.n_waypoints {
        for k in 0..p.n_drones {
            for m in k + 1..p.n_drones {
                rows.push(linearize_interdrone(
                    refs.at(k, t),
                    refs.at(m, t),
                    p.d_drone,
                    (k, m, t),
                    sep_reach,
                )?);
            }
        }
    }
    Ok(rows)
}

/// Relocates initial waypoints that the altitude clamp left over unclearable
/// terrain (surrogate height + `d_safe` above the start altitude). Such a
/// start can never become safe by climbing, and on the flat top of a tall
/// surrogate plateau the linearized rows carry no lateral gradient, so the
/// loop cannot walk out on its own either. The waypoint is moved inside its
/// deviation box to the spot needing the least altitude, preferring spots
/// whose raw nearest-cell height is clearable, then small displacement, with
/// a deterministic coordinate tie-break.
pub(crate) fn repair_reference(scenario: &Scenario, refs: &mut Trajectories) {
    let p = &scenario.params;
    let city = &scenario.city;
    let s_max = (city.grid_size() - 1) as f64;
    let needed_at = |x: f64, y: f64| -> f64 {
        let smooth = city
            .smoothed_height(x, y)
            .expect("repair candidates stay inside the arena");
        smooth.max(city.raw_at_nearest(x, y)) + p.d_safe
    };
    for k in 0..p.n_drones {
        for t in 0..p.n_waypoints {
            let [x, y, z] = refs.at(k, t);
            if needed_at(x, y) <= z {
                continue;
            }
            let [px, py] = scenario.preset.at(k, t);
            let steps = (2.0 * p.d_dev / REPAIR_STEP).ceil().max(1.0) as usize;
            // Score: (ceiling-trapped?, demanded altitude, displacement).
            let score = |cx: f64, cy: f64| -> (bool, f64, f64) {
                (
                    city.raw_at_nearest(cx, cy) + p.d_safe > p.z_max,
                    needed_at(cx, cy),
                    (cx - px).abs() + (cy - py).abs(),
                )
            };
            let mut best = ((x, y), score(x, y));
            for i in 0..=steps {
                for j in 0..=steps {
                    let cx =
                        (px - p.d_dev + 2.0 * p.d_dev * i as f64 / steps as f64).clamp(0.0, s_max);
                    let cy =
                        (py - p.d_dev + 2.0 * p.d_dev * j as f64 / steps as f64).clamp(0.0, s_max);
                    let cand = score(cx, cy);
                    let cur = &best.1;
                    let better = if cand.0 != cur.0 {
                        !cand.0
                    } else if (cand.1 - cur.1).abs() > 1e-12 {
                        cand.1 < cur.1
                    } else if (cand.2 - cur.2).abs() > 1e-12 {
                        cand.2 < cur.2
                    } else {
                        (cx, cy) < best.0
                    };
                    if better {
                        best = ((cx, cy), cand);
                    }
                }
            }
            let (bx, by) = best.0;
            let bz = (best.1 .1 + 1.0).clamp(p.z_min, p.z_max);
            refs.set(k, t, [bx, by, bz]);
        }
    }
}

/// Runs the full outer loop for one variant and returns the final
/// trajectories with a per-iteration trace.
pub fn plan(
    scenario: &Scenario,
    variant: Variant,
    settings: &PlannerSettings,
    solver: &SolverSettings,
) -> Result<PlanResult, PlanError> {
    settings.validate()?;
    solver.validate()?;
    let t0 = Instant::now();

    let mut refs = init_reference(scenario);
    repair_reference(scenario, &mut refs);
    let mut delta = settings.delta0;
    let mut trace: Vec<IterationRecord> = Vec::new();
    let mut status = PlanStatus::MaxIterations;
    // Final solver iterates of the previous outer iteration, with the rows
    // they were produced for; consecutive subproblems differ only slightly,
    // so reseeding them cuts the solve time dramatically.
    let mut carry: Option<(Vec<LinearConstraint>, WarmStart)> = None;

    for iteration in 1..=settings.max_outer {
        let t_iter = Instant::now();
        let (cap, w_delta) = match variant {
            Variant::Enhanced => (delta, settings.w_delta),
            Variant::OriginalTrsco => (delta, 0.0),
            Variant::NoTrustRegion => (f64::INFINITY, 0.0),
        };
        let full = full_constraint_set(scenario, &refs, cap)?;
        let active = if variant == Variant::Enhanced {
            filter_constraints(full, &refs, delta, scenario)?
        } else {
            ActiveConstraintSet::retain_all(full)
        };
        let prog = assemble_subproblem(
            &active,
            &refs,
            cap,
            w_delta,
            settings.delta_exponent,
            scenario,
        )?;
        let warm = carry.as_ref().map(|(prev_rows, prev)| {
            remap_warm_start(prev_rows, prev, &active.retained, cap.is_finite())
        });
        let (sol, warm_out) = solve_conic_warm(&prog, solver, warm.as_ref())?;
        if sol.status != SolveStatus::Optimal && sol.residual_primal > ABORT_RESIDUAL {
            return Err(PlanError::SubproblemFailed {
                iteration,
                status: sol.status,
                residual_primal: sol.residual_primal,
                trace,
            });
        }
        let next = prog
            .layout
            .expect("assembled subproblems carry a layout")
            .extract_trajectories(&sol.x);

        let step_inf = refs
            .max_abs_diff(&next)
            .expect("subproblem preserves trajectory dimensions");
        let breakdown = violation_breakdown(scenario, &next)?;
        let ell = breakdown.safety();
        let max_dropped_violation = active
            .dropped
            .iter()
            .map(|row| row.violation_at(&next))
            .fold(0.0, f64::max);
        trace.push(IterationRecord {
            iteration,
            delta: if cap.is_finite() { delta } else { 0.0 },
            ell,
            violation_full: breakdown.full(),
            objective: sol.objective,
            step_inf,
            retained_rows: active.retained.len(),
            dropped_obstacle: active.dropped_obstacle,
            dropped_interdrone: active.dropped_interdrone,
            max_dropped_violation,
            solver_status: sol.status,
            solver_iterations: sol.iterations,
            subproblem_time_s: t_iter.elapsed().as_secs_f64(),
        });

        let converged = check_convergence(&refs, &next, ell, settings)?;
        refs = next;
        carry = Some((active.retained, warm_out));
        if converged {
            status = PlanStatus::Converged;
            break;
        }
        delta = update_radius(delta, ell, settings);
    }

    Ok(PlanResult {
        variant,
        status,
        trajectories: refs,
        trace,
        wall_time_s: t0.elapsed().as_secs_f64(),
    })
}
