//! Linearized constraint rows around a reference trajectory, the adaptive
//! trust-region constraint filter, and the true nonlinear violation measure.
//!
//! All rows are normalized to `sum(coef · position) <= rhs`, where positions
//! are addressed as (drone, waypoint, axis). Obstacle rows linearize the
//! smoothed height surrogate; the violation measure checks the raw grid,
//! which is the ground truth for safety.

use crate::city::{CityError, CityModel};
use crate::geom::dist3;
use crate::scenario::{Scenario, ScenarioError, Trajectories};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// References closer than this are treated as coincident and separated along
/// a deterministic axis instead of their own (undefined) direction.
const COINCIDENT_EPS: f64 = 1e-9;

/// Numerical slack on the filter's reachability bound, so a row exactly
/// tangent to the trust ball is retained rather than dropped.
const FILTER_SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ConvexifyError {
    #[error(transparent)]
    City(#[from] CityError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("inter-drone constraint needs two distinct drones, got {0}")]
    SameDrone(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintKind {
    Obstacle,
    Interdrone,
    AltitudeLo,
    AltitudeHi,
    Bound,
    Deviation,
}

/// One linear row `sum(coef · x[drone, waypoint, axis]) <= rhs`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub kind: ConstraintKind,
    /// Sparse coefficients: (drone, waypoint, axis 0..3, coefficient).
    pub terms: Vec<(usize, usize, usize, f64)>,
    pub rhs: f64,
    /// Provenance: owning drone, partner drone for inter-drone rows.
    pub drones: (usize, Option<usize>),
    pub waypoint: usize,
}

impl LinearConstraint {
    /// Signed violation at `trajs`: positive means the row is violated.
    pub fn violation_at(&self, trajs: &Trajectories) -> f64 {
        let lhs: f64 = self
            .terms
            .iter()
            .map(|&(k, t, axis, c)| c * trajs.at(k, t)[axis])
            .sum();
        lhs - self.rhs
    }
}

/// Result of the trust-region filter: rows that can bind inside the region,
/// plus the dropped rows kept for post-hoc soundness checks.
#[derive(Debug, Clone)]
pub struct ActiveConstraintSet {
    pub retained: Vec<LinearConstraint>,
    pub dropped: Vec<LinearConstraint>,
    pub dropped_obstacle: usize,
    pub dropped_interdrone: usize,
    pub total_before: usize,
}

impl ActiveConstraintSet {
    /// Degenerate filter: everything retained (the unfiltered ablation).
    pub fn retain_all(full: Vec<LinearConstraint>) -> Self {
        let total_before = full.len();
        Self {
            retained: full,
            dropped: Vec::new(),
            dropped_obstacle: 0,
            dropped_interdrone: 0,
            total_before,
        }
    }

    pub fn retained_of_kind(&self, kind: ConstraintKind) -> usize {
        self.retained.iter().filter(|c| c.kind == kind).count()
    }
}

/// Linearized obstacle clearance at reference (k, t):
/// `z >= h(xr, yr) + grad·(x - xr, y - yr) + d_safe`.
///
/// The constant term uses the larger of the smoothed surrogate and the raw
/// height at the reference's nearest cell; the smoothed field undershoots raw
/// rooftops near building edges, and a fixed point of the outer loop must
/// clear the raw field, not the surrogate. The gradient comes from the
/// smoothed field either way, so the row still pushes sideways near walls.
///
/// `climb_reach` anchors the row to the reference: the demanded height is
/// capped at `z_ref - d_safe + climb_reach`, so a reference that stepped
/// across a rooftop cliff the previous row could not see is asked to climb
/// out at a rate the trust region can deliver instead of rendering the
/// subproblem infeasible. The cap is inactive at any reference that already
/// clears the surrogate, so converged trajectories satisfy the true
/// constraint. Pass infinity for the pure linearization.
///
/// `z_ceiling` caps the demanded height at `z_ceiling - d_safe`: a building
/// taller than the altitude band allows can never be overflown, and an
/// uncapped row would contradict the ceiling row outright. The capped row
/// pins the flight level to the ceiling while its gradient keeps pushing
/// sideways, which is the only escape that exists.
pub fn linearize_obstacle(
    city: &CityModel,
    reference: [f64; 3],
    drone: usize,
    waypoint: usize,
    d_safe: f64,
    climb_reach: f64,
    z_ceiling: f64,
) -> Result<LinearConstraint, ConvexifyError> {
    // References can overshoot the arena by the solver tolerance; the row is
    // expanded around the nearest in-arena point, where the bound rows will
    // pull the solution anyway.
    let s_max = (city.grid_size() - 1) as f64;
    let xr = reference[0].clamp(0.0, s_max);
    let yr = reference[1].clamp(0.0, s_max);
    let smooth = city.smoothed_height(xr, yr)?;
    let (gx, gy) = city.height_gradient(xr, yr)?;
    let mut height = smooth.max(city.raw_at_nearest(xr, yr));
    if z_ceiling.is_finite() {
        height = height.min(z_ceiling - d_safe);
    }
    if climb_reach.is_finite() {
        height = height.min(reference[2] - d_safe + climb_reach);
    }
    // z >= height + gx (x − xr) + gy (y − yr) + d_safe, rewritten `<=`:
    Ok(LinearConstraint {
        kind: ConstraintKind::Obstacle,
        terms: vec![
            (drone, waypoint, 0, gx),
            (drone, waypoint, 1, gy),
            (drone, waypoint, 2, -1.0),
        ],
        rhs: gx * xr + gy * yr - height - d_safe,
        drones: (drone, None),
        waypoint,
    })
}

/// Supporting-hyperplane separation for one drone pair at one waypoint:
/// `n·(x_k - x_m) >= d_drone` with n the unit reference offset. Coincident
/// references separate along ±x by drone order so the row stays well defined.
///
/// `sep_reach` anchors the row: the demanded separation is capped at the
/// reference separation plus `sep_reach`, the closing distance the pair's two
/// trust regions can jointly deliver, so an overlapping pair is pushed apart
/// gradually instead of making the subproblem infeasible. Inactive whenever
/// the pair already satisfies `d_drone`; pass infinity for the pure row.
pub fn linearize_interdrone(
    ref_k: [f64; 3],
    ref_m: [f64; 3],
    d_drone: f64,
    pair: (usize, usize, usize),
    sep_reach: f64,
) -> Result<LinearConstraint, ConvexifyError> {
    let (k, m, t) = pair;
    if k == m {
        return Err(ConvexifyError::SameDrone(k));
    }
    let d = [
        ref_k[0] - ref_m[0],
        ref_k[1] - ref_m[1],
        ref_k[2] - ref_m[2],
    ];
    let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let n = if norm > COINCIDENT_EPS {
        [d[0] / norm, d[1] / norm, d[2] / norm]
    } else {
        [if k < m { 1.0 } else { -1.0 }, 0.0, 0.0]
    };
    let demanded = if sep_reach.is_finite() {
        d_drone.min(norm + sep_reach)
    } else {
        d_drone
    };
    let mut terms = Vec::with_capacity(6);
    for axis in 0..3 {
        if n[axis] != 0.0 {
            terms.push((k, t, axis, -n[axis]));
            terms.push((m, t, axis, n[axis]));
        }
    }
    Ok(LinearConstraint {
        kind: ConstraintKind::Interdrone,
        terms,
        rhs: -demanded,
        drones: (k, Some(m)),
        waypoint: t,
    })
}

/// Arena bounds, altitude band, and per-axis deviation boxes: ten one-sided
/// rows per waypoint.
pub fn box_constraints(scenario: &Scenario) -> Vec<LinearConstraint> {
    let p = &scenario.params;
    let s_max = (scenario.city.grid_size() - 1) as f64;
    let mut rows = Vec::with_capacity(10 * p.n_drones * p.n_waypoints);
    for k in 0..p.n_drones {
        for t in 0..p.n_waypoints {
            let [px, py] = scenario.preset.at(k, t);
            let one = |kind, axis: usize, coef: f64, rhs: f64| LinearConstraint {
                kind,
                terms: vec![(k, t, axis, coef)],
                rhs,
                drones: (k, None),
                waypoint: t,
            };
            rows.push(one(ConstraintKind::Bound, 0, -1.0, 0.0));
            rows.push(one(ConstraintKind::Bound, 0, 1.0, s_max));
            rows.push(one(ConstraintKind::Bound, 1, -1.0, 0.0));
            rows.push(one(ConstraintKind::Bound, 1, 1.0, s_max));
            rows.push(one(ConstraintKind::AltitudeLo, 2, -1.0, -p.z_min));
            rows.push(one(ConstraintKind::AltitudeHi, 2, 1.0, p.z_max));
            rows.push(one(ConstraintKind::Deviation, 0, 1.0, px + p.d_dev));
            rows.push(one(ConstraintKind::Deviation, 0, -1.0, -(px - p.d_dev)));
            rows.push(one(ConstraintKind::Deviation, 1, 1.0, py + p.d_dev));
            rows.push(one(ConstraintKind::Deviation, 1, -1.0, -(py - p.d_dev)));
        }
    }
    rows
}

/// Drops obstacle and inter-drone rows that cannot bind anywhere inside the
/// trust region of radius `delta` around the reference; box/altitude/
/// deviation rows are always retained.
///
/// Both droppable kinds use the same reachability bound: a linear row
/// `terms·X <= rhs` can bind only if its maximum over the per-waypoint trust
/// balls, `terms·ref + delta·Σ‖per-waypoint coefficients‖₂`, reaches the
/// rhs. For an inter-drone pair this reduces to the familiar
/// `‖ref_k − ref_m‖ <= d_drone + 2·delta`. Testing the row itself (rather
/// than, say, raw rooftops near the reference) is what makes dropping sound:
/// the surrogate envelope demands altitude over a collar of cells around
/// each building where the raw field is zero, so a raw-height test would
/// drop rows the envelope still binds, and the filtered solution would
/// drift from the unfiltered one.
pub fn filter_constraints(
    full: Vec<LinearConstraint>,
    refs: &Trajectories,
    delta: f64,
    scenario: &Scenario,
) -> Result<ActiveConstraintSet, ConvexifyError> {
    debug_assert!(delta >= 0.0);
    let total_before = full.len();
    let mut retained = Vec::with_capacity(total_before);
    let mut dropped = Vec::new();
    let (mut dropped_obstacle, mut dropped_interdrone) = (0usize, 0usize);

    for row in full {
        let keep = match row.kind {
            ConstraintKind::Obstacle => {
                // Single-waypoint row: the ball maximum is at_ref + δ·‖coef‖.
                let mut at_ref = 0.0;
                let mut norm_sq = 0.0;
                for &(k, t, axis, coef) in &row.terms {
                    at_ref += coef * refs.at(k, t)[axis];
                    norm_sq += coef * coef;
                }
                at_ref + delta * norm_sq.sqrt() >= row.rhs - FILTER_SLACK
            }
            ConstraintKind::Interdrone => {
                let m = row.drones.1.expect("inter-drone row has a partner");
                let a = refs.at(row.drones.0, row.waypoint);
                let b = refs.at(m, row.waypoint);
                dist3(a, b) <= scenario.params.d_drone + 2.0 * delta
            }
            _ => true,
        };
        if keep {
            retained.push(row);
        } else {
            match row.kind {
                ConstraintKind::Obstacle => dropped_obstacle += 1,
                ConstraintKind::Interdrone => dropped_interdrone += 1,
                _ => unreachable!("only obstacle/inter-drone rows are droppable"),
            }
            dropped.push(row);
        }
    }

    Ok(ActiveConstraintSet {
        retained,
        dropped,
        dropped_obstacle,
        dropped_interdrone,
        total_before,
    })
}

/// Per-class maximum positive violations of the original nonlinear
/// constraints, in meters.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct ViolationBreakdown {
    /// Raw nearest-cell height + d_safe clearance deficit.
    pub obstacle: f64,
    /// True Euclidean pair separation deficit.
    pub interdrone: f64,
    pub altitude: f64,
    pub bounds: f64,
    /// Per-axis deviation box overshoot (the subproblem's own relaxation).
    pub deviation_box: f64,
    /// Euclidean distance to the preset beyond d_dev.
    pub deviation_euclidean: f64,
}

impl ViolationBreakdown {
    /// Worst violation over every original constraint, Euclidean deviation
    /// included.
    pub fn full(&self) -> f64 {
        self.safety().max(self.deviation_euclidean)
    }

    /// Worst violation over the constraints the subproblem enforces exactly:
    /// obstacles vs raw heights, separation, altitude, bounds, deviation
    /// boxes. This is the measure the outer loop and the reports gate on.
    pub fn safety(&self) -> f64 {
        self.obstacle
            .max(self.interdrone)
            .max(self.altitude)
            .max(self.bounds)
            .max(self.deviation_box)
    }
}

pub fn violation_breakdown(
    scenario: &Scenario,
    trajs: &Trajectories,
) -> Result<ViolationBreakdown, ConvexifyError> {
    let p = &scenario.params;
    let want = (p.n_drones, p.n_waypoints);
    if trajs.dims() != want {
        return Err(ScenarioError::DimensionMismatch {
            got: trajs.dims(),
            want,
        }
        .into());
    }
    let s_max = (scenario.city.grid_size() - 1) as f64;
    let mut v = ViolationBreakdown::default();

    for k in 0..p.n_drones {
        for t in 0..p.n_waypoints {
            let [x, y, z] = trajs.at(k, t);
            let xc = x.clamp(0.0, s_max);
            let yc = y.clamp(0.0, s_max);
            let raw = scenario.city.raw_at_nearest(xc, yc);
            v.obstacle = v.obstacle.max(raw + p.d_safe - z);
            v.altitude = v.altitude.max(p.z_min - z).max(z - p.z_max);
            v.bounds = v.bounds.max(-x).max(x - s_max).max(-y).max(y - s_max);
            let [px, py] = scenario.preset.at(k, t);
            let (dx, dy) = ((x - px).abs(), (y - py).abs());
            v.deviation_box = v.deviation_box.max(dx - p.d_dev).max(dy - p.d_dev);
            v.deviation_euclidean = v
                .deviation_euclidean
                .max((dx * dx + dy * dy).sqrt() - p.d_dev);
            for m in k + 1..p.n_drones {
                let d = dist3(trajs.at(k, t), trajs.at(m, t));
                v.interdrone = v.interdrone.max(p.d_drone - d);
            }
        }
    }

    // Clamp each class at zero: the measure reports violations, not slack.
    v.obstacle = v.obstacle.max(0.0);
    v.interdrone = v.interdrone.max(0.0);
    v.altitude = v.altitude.max(0.0);
    v.bounds = v.bounds.max(0.0);
    v.deviation_box = v.deviation_box.max(0.0);
    v.deviation_euclidean = v.deviation_euclidean.max(0.0);
    Ok(v)
}

/// Maximum positive violation over all original nonlinear constraints, in
/// meters; 0 exactly when the trajectories are feasible.
pub fn violation(scenario: &Scenario, trajs: &Trajectories) -> Result<f64, ConvexifyError> {
    Ok(violation_breakdown(scenario, trajs)?.full())
}
