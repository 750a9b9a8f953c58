//! Evaluation of finished trajectories: path length, smoothness, ground
//! coverage, inter-drone separation, and per-variant comparison reports.

use crate::city::CityModel;
use crate::convexify::{violation_breakdown, ConvexifyError};
use crate::planner::{PlanResult, PlanStatus, Variant};
use crate::scenario::{Scenario, Trajectories};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{op} needs at least {needed} waypoints per drone, got {got}")]
    TooFewWaypoints {
        op: &'static str,
        needed: usize,
        got: usize,
    },
    #[error("invalid camera parameters: {0}")]
    BadFov(String),
    #[error("cannot build a report from zero planner results")]
    EmptyReport,
    #[error(transparent)]
    Convexify(#[from] ConvexifyError),
}

/// Downward-camera footprint model: a waypoint at altitude `z` observes a
/// ground disk of radius `z · tan(half_angle_deg)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FovParams {
    /// Camera half field-of-view, degrees.
    pub half_angle_deg: f64,
    /// Ground area represented by one grid cell, m².
    pub cell_area: f64,
}

impl Default for FovParams {
    fn default() -> Self {
        Self {
            half_angle_deg: 22.5,
            cell_area: 1.0,
        }
    }
}

impl FovParams {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if !(self.half_angle_deg > 0.0 && self.half_angle_deg < 90.0) {
            return Err(MetricsError::BadFov(format!(
                "half_angle_deg must lie in (0, 90), got {}",
                self.half_angle_deg
            )));
        }
        if !(self.cell_area > 0.0) || !self.cell_area.is_finite() {
            return Err(MetricsError::BadFov(format!(
                "cell_area must be positive and finite, got {}",
                self.cell_area
            )));
        }
        Ok(())
    }

    /// Footprint radius at altitude `z`, m.
    pub fn radius_at(&self, z: f64) -> f64 {
        z * self.half_angle_deg.to_radians().tan()
    }
}

/// Total flight distance: Σ_k Σ_t ‖x_k(t+1) − x_k(t)‖₂.
pub fn path_length(trajs: &Trajectories) -> Result<f64, MetricsError> {
    let (_, t_count) = trajs.dims();
    if t_count < 2 {
        return Err(MetricsError::TooFewWaypoints {
            op: "path_length",
            needed: 2,
            got: t_count,
        });
    }
    Ok(trajs
        .per_drone()
        .iter()
        .flat_map(|path| path.windows(2))
        .map(|w| crate::geom::dist3(w[0], w[1]))
        .sum())
}

/// Accumulated second-difference magnitude:
/// Σ_k Σ_t ‖x_k(t+1) − 2x_k(t) + x_k(t−1)‖₂.
pub fn smoothness(trajs: &Trajectories) -> Result<f64, MetricsError> {
    let (_, t_count) = trajs.dims();
    if t_count < 3 {
        return Err(MetricsError::TooFewWaypoints {
            op: "smoothness",
            needed: 3,
            got: t_count,
        });
    }
    Ok(trajs
        .per_drone()
        .iter()
        .flat_map(|path| path.windows(3))
        .map(|w| {
            let d = [
                w[2][0] - 2.0 * w[1][0] + w[0][0],
                w[2][1] - 2.0 * w[1][1] + w[0][1],
                w[2][2] - 2.0 * w[1][2] + w[0][2],
            ];
            crate::geom::norm3(d)
        })
        .sum())
}

/// Ground area observed at least once: the union over all waypoints of the
/// camera footprint disks, rasterized on the grid's cell centers and clipped
/// to the arena.
pub fn coverage_area(trajs: &Trajectories, city: &CityModel, fov: &FovParams) -> f64 {
    let s = city.grid_size();
    let mut seen = vec![false; s * s];
    let (n, t_count) = trajs.dims();
    for k in 0..n {
        for t in 0..t_count {
            let [x, y, z] = trajs.at(k, t);
            let r = fov.radius_at(z);
            if r < 0.0 {
                continue;
            }
            let lo = |c: f64| ((c - r).ceil().max(0.0)) as usize;
            let hi = |c: f64| ((c + r).floor().min((s - 1) as f64).max(0.0)) as usize;
            if x + r < 0.0 || y + r < 0.0 {
                continue;
            }
            for cx in lo(x)..=hi(x) {
                for cy in lo(y)..=hi(y) {
                    let (dx, dy) = (cx as f64 - x, cy as f64 - y);
                    if dx * dx + dy * dy <= r * r {
                        seen[cx * s + cy] = true;
                    }
                }
            }
        }
    }
    seen.iter().filter(|&&v| v).count() as f64 * fov.cell_area
}

/// Closest simultaneous approach of any drone pair; +∞ when there are no
/// pairs to compare.
pub fn min_interdrone_distance(trajs: &Trajectories) -> f64 {
    let (n, t_count) = trajs.dims();
    let mut best = f64::INFINITY;
    for t in 0..t_count {
        for k in 0..n {
            for m in k + 1..n {
                best = best.min(crate::geom::dist3(trajs.at(k, t), trajs.at(m, t)));
            }
        }
    }
    best
}

/// One comparison-table row: every evaluation quantity for one variant run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRow {
    pub variant: Variant,
    pub status: PlanStatus,
    pub total_path_length: f64,
    pub total_smoothness: f64,
    pub coverage_area: f64,
    /// +∞ (serialized as null) when the fleet has a single drone.
    pub min_interdrone_distance: f64,
    /// Worst remaining violation of the original constraints, m.
    pub max_violation: f64,
    /// Planner wall time, excluding city generation and metrics, s.
    pub calculation_time_s: f64,
    pub outer_iterations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

/// Evaluates every result against the shared scenario, one row per variant,
/// in the order the results are given.
pub fn report(
    results: &[PlanResult],
    scenario: &Scenario,
    fov: &FovParams,
) -> Result<MetricsReport, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyReport);
    }
    fov.validate()?;
    let mut rows = Vec::with_capacity(results.len());
    for r in results {
        rows.push(MetricsRow {
            variant: r.variant,
            status: r.status,
            total_path_length: path_length(&r.trajectories)?,
            total_smoothness: smoothness(&r.trajectories)?,
            coverage_area: coverage_area(&r.trajectories, &scenario.city, fov),
            min_interdrone_distance: min_interdrone_distance(&r.trajectories),
            max_violation: violation_breakdown(scenario, &r.trajectories)?.safety(),
            calculation_time_s: r.wall_time_s,
            outer_iterations: r.trace.len(),
        });
    }
    Ok(MetricsReport { rows })
}

impl MetricsReport {
    /// Aligned plain-text comparison table.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<16} {:>10} {:>12} {:>12} {:>14} {:>12} {:>12} {:>6} {:>9}\n",
            "variant",
            "status",
            "length_m",
            "smooth_m",
            "coverage_m2",
            "min_sep_m",
            "max_viol_m",
            "iters",
            "time_s"
        ));
        for r in &self.rows {
            let status = match r.status {
                PlanStatus::Converged => "converged",
                PlanStatus::MaxIterations => "max_iters",
            };
            let sep = if r.min_interdrone_distance.is_finite() {
                format!("{:.3}", r.min_interdrone_distance)
            } else {
                "n/a".to_string()
            };
            out.push_str(&format!(
                "{:<16} {:>10} {:>12.3} {:>12.3} {:>14.1} {:>12} {:>12.6} {:>6} {:>9.3}\n",
                r.variant.name(),
                status,
                r.total_path_length,
                r.total_smoothness,
                r.coverage_area,
                sep,
                r.max_violation,
                r.outer_iterations,
                r.calculation_time_s
            ));
        }
        out
    }
}
