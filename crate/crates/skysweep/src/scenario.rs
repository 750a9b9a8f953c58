//! Planning problem instances: fleet parameters, per-drone sweep presets,
//! and initial reference trajectories.
//!
//! The arena is split into N equal vertical strips along x; drone k sweeps
//! strip k with a boustrophedon pattern of north/south lanes, resampled by
//! arc length to exactly T waypoints. Strips are disjoint, which keeps
//! inter-drone constraints mostly inactive by construction.

use crate::city::CityModel;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lane separation inside a strip, meters. The camera swath at the altitude
/// floor (2 · 20 m · tan 22.5° ≈ 16.6 m) covers this with ~40% margin.
const LANE_PITCH: f64 = 10.0;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario parameters: {0}")]
    InvalidParams(String),
    #[error("{n_drones} strips of >= 2 cells do not fit a {grid_size}-cell grid")]
    StripInfeasible { n_drones: usize, grid_size: usize },
    #[error("trajectory dimensions {got:?} do not match scenario ({want:?})")]
    DimensionMismatch {
        got: (usize, usize),
        want: (usize, usize),
    },
}

/// Fleet size, horizon, and constraint distances.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioParams {
    pub n_drones: usize,
    pub n_waypoints: usize,
    /// Vertical clearance to keep above obstacles, m.
    pub d_safe: f64,
    /// Minimum pairwise drone separation, m.
    pub d_drone: f64,
    /// Maximum per-axis deviation from the preset sweep waypoint, m.
    pub d_dev: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub seed: u64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            n_drones: 5,
            n_waypoints: 20,
            d_safe: 5.0,
            d_drone: 5.0,
            d_dev: 3.0,
            z_min: 20.0,
            z_max: 50.0,
            seed: 0,
        }
    }
}

impl ScenarioParams {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.n_drones < 1 {
            return Err(ScenarioError::InvalidParams(
                "need at least one drone".into(),
            ));
        }
        if self.n_waypoints < 3 {
            return Err(ScenarioError::InvalidParams(format!(
                "need at least 3 waypoints for a second difference, got {}",
                self.n_waypoints
            )));
        }
        if self.d_safe < 0.0 || self.d_drone < 0.0 || self.d_dev < 0.0 {
            return Err(ScenarioError::InvalidParams(
                "distances d_safe, d_drone, d_dev must be nonnegative".into(),
            ));
        }
        if !(self.z_min <= self.z_max) {
            return Err(ScenarioError::InvalidParams(format!(
                "need z_min <= z_max, got [{}, {}]",
                self.z_min, self.z_max
            )));
        }
        Ok(())
    }
}

/// Horizontal sweep waypoints per drone, N × T.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PresetPath {
    paths: Vec<Vec<[f64; 2]>>,
}

impl PresetPath {
    pub fn n_drones(&self) -> usize {
        self.paths.len()
    }

    pub fn n_waypoints(&self) -> usize {
        self.paths.first().map_or(0, Vec::len)
    }

    pub fn at(&self, drone: usize, t: usize) -> [f64; 2] {
        self.paths[drone][t]
    }

    pub fn drone(&self, drone: usize) -> &[[f64; 2]] {
        &self.paths[drone]
    }

    /// Total polyline length over all drones, m.
    pub fn total_length(&self) -> f64 {
        self.paths
            .iter()
            .map(|p| {
                p.windows(2)
                    .map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt())
                    .sum::<f64>()
            })
            .sum()
    }

    /// CSV rows `drone,t,x_m,y_m`, sorted by (drone, t).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("drone,t,x_m,y_m\n");
        for (k, path) in self.paths.iter().enumerate() {
            for (t, p) in path.iter().enumerate() {
                out.push_str(&format!("{},{},{},{}\n", k, t, p[0], p[1]));
            }
        }
        out
    }
}

/// A complete problem instance. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub city: CityModel,
    pub params: ScenarioParams,
    pub preset: PresetPath,
}

impl Scenario {
    /// Generates the preset allocation for (city, params) and bundles the
    /// instance.
    pub fn new(city: CityModel, params: ScenarioParams) -> Result<Self, ScenarioError> {
        params.validate()?;
        let preset = allocate_waypoints(&city, &params)?;
        Ok(Self {
            city,
            params,
            preset,
        })
    }
}

/// Per-drone 3D waypoints, N × T.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectories {
    n_drones: usize,
    n_waypoints: usize,
    /// Flat storage, index `drone * T + t`.
    pos: Vec<[f64; 3]>,
}

impl Trajectories {
    pub fn zeros(n_drones: usize, n_waypoints: usize) -> Self {
        Self {
            n_drones,
            n_waypoints,
            pos: vec![[0.0; 3]; n_drones * n_waypoints],
        }
    }

    pub fn n_drones(&self) -> usize {
        self.n_drones
    }

    pub fn n_waypoints(&self) -> usize {
        self.n_waypoints
    }

    pub fn at(&self, drone: usize, t: usize) -> [f64; 3] {
        self.pos[drone * self.n_waypoints + t]
    }

    pub fn set(&mut self, drone: usize, t: usize, p: [f64; 3]) {
        self.pos[drone * self.n_waypoints + t] = p;
    }

    pub fn per_drone(&self) -> Vec<Vec<[f64; 3]>> {
        (0..self.n_drones)
            .map(|k| (0..self.n_waypoints).map(|t| self.at(k, t)).collect())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.pos.iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n_drones, self.n_waypoints)
    }

    /// Componentwise max absolute difference, the outer-loop step measure.
    pub fn max_abs_diff(&self, other: &Self) -> Option<f64> {
        if self.dims() != other.dims() {
            return None;
        }
        let mut worst = 0.0f64;
        for (a, b) in self.pos.iter().zip(&other.pos) {
            for axis in 0..3 {
                worst = worst.max((a[axis] - b[axis]).abs());
            }
        }
        Some(worst)
    }
}

/// Splits the arena into N equal-width vertical strips and lays a serpentine
/// sweep over each, resampled by arc length to exactly T waypoints.
///
/// Lane count per strip targets [`LANE_PITCH`], then is reduced until the
/// consecutive-waypoint spacing stays within `2(S-1)/T + strip width`.
pub fn allocate_waypoints(
    city: &CityModel,
    params: &ScenarioParams,
) -> Result<PresetPath, ScenarioError> {
    params.validate()?;
    let s = city.grid_size();
    let n = params.n_drones;
    let t = params.n_waypoints;
    if 2 * n > s {
        return Err(ScenarioError::StripInfeasible {
            n_drones: n,
            grid_size: s,
        });
    }

    let strip_cells = s as f64 / n as f64;
    let arena_len = (s - 1) as f64;
    let spacing_bound = 2.0 * arena_len / t as f64 + strip_cells;

    let mut paths = Vec::with_capacity(n);
    for k in 0..n {
        // Strip k covers x in [k·S/N, (k+1)·S/N − 1]; the −1 leaves a one-cell
        // gap between neighboring strips so preset paths never touch.
        let lo = k as f64 * strip_cells;
        let hi = (k + 1) as f64 * strip_cells - 1.0;
        let width = hi - lo;

        let mut lanes = ((width / LANE_PITCH).ceil() as usize).max(1);
        while lanes > 1
            && serpentine_length(arena_len, width, lanes) / (t - 1) as f64 > spacing_bound
        {
            lanes -= 1;
        }

        let polyline = serpentine(lo, width, arena_len, lanes);
        paths.push(resample(&polyline, t));
    }
    Ok(PresetPath { paths })
}

fn serpentine_length(arena_len: f64, width: f64, lanes: usize) -> f64 {
    let gap = if lanes > 1 {
        width / (lanes - 1) as f64
    } else {
        0.0
    };
    lanes as f64 * arena_len + (lanes - 1) as f64 * gap
}

/// Lanes run the full arena along y, alternating direction, spread evenly
/// across the strip (a single lane sits at the strip center).
fn serpentine(lo: f64, width: f64, arena_len: f64, lanes: usize) -> Vec<[f64; 2]> {
    let mut pts = Vec::with_capacity(2 * lanes);
    for i in 0..lanes {
        let x = if lanes == 1 {
            lo + width / 2.0
        } else {
            lo + i as f64 * width / (lanes - 1) as f64
        };
        let (y0, y1) = if i % 2 == 0 {
            (0.0, arena_len)
        } else {
            (arena_len, 0.0)
        };
        pts.push([x, y0]);
        pts.push([x, y1]);
    }
    pts
}

/// Arc-length resampling of a polyline to exactly `count` points.
fn resample(polyline: &[[f64; 2]], count: usize) -> Vec<[f64; 2]> {
    debug_assert!(polyline.len() >= 2 && count >= 2);
    let mut cumulative = vec![0.0f64];
    for w in polyline.windows(2) {
        let d = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
        cumulative.push(cumulative.last().unwrap() + d);
    }
    let total = *cumulative.last().unwrap();
    let mut out = Vec::with_capacity(count);
    let mut seg = 0usize;
    for j in 0..count {
        let target = total * j as f64 / (count - 1) as f64;
        while seg + 2 < cumulative.len() && cumulative[seg + 1] < target {
            seg += 1;
        }
        let seg_len = cumulative[seg + 1] - cumulative[seg];
        let frac = if seg_len > 0.0 {
            (target - cumulative[seg]) / seg_len
        } else {
            0.0
        };
        let (a, b) = (polyline[seg], polyline[seg + 1]);
        out.push([a[0] + frac * (b[0] - a[0]), a[1] + frac * (b[1] - a[1])]);
    }
    out
}

/// Initial reference: preset horizontal coordinates with altitude
/// `clamp(smoothed_height + d_safe + 1, z_min, z_max)`.
pub fn init_reference(scenario: &Scenario) -> Trajectories {
    let p = &scenario.params;
    let mut out = Trajectories::zeros(p.n_drones, p.n_waypoints);
    for k in 0..p.n_drones {
        for t in 0..p.n_waypoints {
            let [x, y] = scenario.preset.at(k, t);
            let ground = scenario
                .city
                .smoothed_height(x, y)
                .expect("preset waypoints lie inside the arena by construction");
            let z = (ground + p.d_safe + 1.0).clamp(p.z_min, p.z_max);
            out.set(k, t, [x, y, z]);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IssueKind {
    /// No altitude within [z_min, z_max] clears some reachable cell near a
    /// preset waypoint.
    UnreachableClearance,
    /// Required inter-drone distance exceeds the preset separation somewhere.
    InterDroneSpacing,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub kind: IssueKind,
    pub message: String,
}

/// Report-only consistency check; an empty issue list means no structural
/// infeasibility was detected.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }
}

pub fn validate_scenario(scenario: &Scenario) -> ValidationReport {
    let mut report = ValidationReport::default();
    let p = &scenario.params;
    let city = &scenario.city;
    let s = city.grid_size();

    // A waypoint can place its nearest cell anywhere within d_dev + 0.5 of
    // the preset per axis; the cheapest clearance over those cells must fit
    // under z_max.
    for k in 0..p.n_drones {
        for t in 0..p.n_waypoints {
            let [px, py] = scenario.preset.at(k, t);
            let reach = p.d_dev + 0.5;
            let (x0, x1) = cell_range(px, reach, s);
            let (y0, y1) = cell_range(py, reach, s);
            let mut cheapest = f64::INFINITY;
            for cx in x0..=x1 {
                for cy in y0..=y1 {
                    cheapest = cheapest.min(city.raw_at(cx, cy) + p.d_safe);
                }
            }
            if cheapest > p.z_max {
                report.issues.push(ValidationIssue {
                    kind: IssueKind::UnreachableClearance,
                    message: format!(
                        "drone {k} waypoint {t} needs z >= {cheapest:.1} > z_max {:.1}",
                        p.z_max
                    ),
                });
            }
        }
    }

    if p.n_drones > 1 {
        let mut min_gap = f64::INFINITY;
        for t in 0..p.n_waypoints {
            for k in 0..p.n_drones {
                for m in k + 1..p.n_drones {
                    let a = scenario.preset.at(k, t);
                    let b = scenario.preset.at(m, t);
                    let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
                    min_gap = min_gap.min(d);
                }
            }
        }
        if p.d_drone > min_gap {
            report.issues.push(ValidationIssue {
                kind: IssueKind::InterDroneSpacing,
                message: format!(
                    "required separation {:.1} m exceeds the minimum preset gap {min_gap:.1} m",
                    p.d_drone
                ),
            });
        }
    }

    report
}

fn cell_range(center: f64, reach: f64, s: usize) -> (usize, usize) {
    let lo = ((center - reach).ceil().max(0.0)) as usize;
    let hi = ((center + reach).floor().min((s - 1) as f64)) as usize;
    (lo.min(s - 1), hi)
}
