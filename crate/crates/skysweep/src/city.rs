//! Gridded urban obstacle field.
//!
//! The arena is an S×S grid with 1 m cell pitch; buildings are axis-aligned
//! rectangles of cells sharing one uniform height. Two height fields coexist:
//! the raw piecewise-constant field (ground truth for safety checks) and a
//! box-filtered field evaluated by bilinear interpolation (differentiable
//! surrogate for constraint linearization).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest/largest building footprint edge, in cells.
const BUILDING_EDGE_MIN: usize = 2;
const BUILDING_EDGE_MAX: usize = 6;

/// Placement attempts allowed per grid cell before generation gives up.
const ATTEMPTS_PER_CELL: usize = 10;

/// Occupancy tolerance around the requested density, as a fraction of cells.
const DENSITY_SLACK: f64 = 0.02;

#[derive(Debug, Error)]
pub enum CityError {
    #[error("invalid city parameters: {0}")]
    InvalidParams(String),
    #[error(
        "cannot reach density {target:.3} on a {grid_size}x{grid_size} grid \
         (placed {placed} of {needed} cells in {attempts} attempts)"
    )]
    DensityInfeasible {
        target: f64,
        grid_size: usize,
        placed: usize,
        needed: usize,
        attempts: usize,
    },
    #[error("query ({x:.3}, {y:.3}) outside the arena [0, {max:.3}]^2")]
    OutOfBounds { x: f64, y: f64, max: f64 },
    #[error("disk radius must be nonnegative, got {0}")]
    NegativeRadius(f64),
}

/// Parameters for procedural city generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CityParams {
    /// Grid side length S in cells; cell pitch is fixed at 1 m.
    pub grid_size: usize,
    /// Target fraction of cells covered by buildings, in [0, 1].
    pub building_density: f64,
    /// Uniform height range for buildings, meters.
    pub height_min: f64,
    pub height_max: f64,
    /// Box-filter radius for the smoothed field, cells.
    pub smoothing_radius: usize,
    pub seed: u64,
}

impl Default for CityParams {
    fn default() -> Self {
        Self {
            grid_size: 50,
            building_density: 0.25,
            height_min: 10.0,
            height_max: 50.0,
            smoothing_radius: 2,
            seed: 0,
        }
    }
}

impl CityParams {
    pub fn validate(&self) -> Result<(), CityError> {
        if self.grid_size < 4 {
            return Err(CityError::InvalidParams(format!(
                "grid_size must be >= 4, got {}",
                self.grid_size
            )));
        }
        if !(0.0..=1.0).contains(&self.building_density) {
            return Err(CityError::InvalidParams(format!(
                "building_density must be in [0, 1], got {}",
                self.building_density
            )));
        }
        if !(self.height_min >= 0.0 && self.height_min <= self.height_max) {
            return Err(CityError::InvalidParams(format!(
                "need 0 <= height_min <= height_max, got [{}, {}]",
                self.height_min, self.height_max
            )));
        }
        Ok(())
    }
}

/// Generated obstacle field. Immutable after construction.
#[derive(Debug, Clone)]
pub struct CityModel {
    grid_size: usize,
    /// Row-major S×S, index `x * S + y`; 0 on non-building cells.
    raw_heights: Vec<f64>,
    /// Differentiable clearance surrogate, same layout: full-height rooftop
    /// plateaus with linear ramp skirts (see `derive_smooth`).
    smooth_heights: Vec<f64>,
    /// Grid coordinates (x, y) of cells with raw height > 0. Sorted.
    obstacle_cells: Vec<(usize, usize)>,
    params: CityParams,
}

/// Serialized form: raw grid plus generation parameters. The smoothed field
/// is recomputed on load, which is bit-exact because the filter is
/// deterministic.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CityDoc {
    grid_size: usize,
    cell_pitch_m: f64,
    raw_heights: Vec<f64>,
    seed: u64,
    params: CityParams,
}

pub fn generate_city(params: &CityParams) -> Result<CityModel, CityError> {
    params.validate()?;
    let s = params.grid_size;
    let n_cells = s * s;
    let target = params.building_density * n_cells as f64;
    let slack = DENSITY_SLACK * n_cells as f64;
    let need_lo = (target - slack).ceil().max(0.0) as usize;
    let cap_hi = (target + slack).floor() as usize;

    let mut raw = vec![0.0f64; n_cells];
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut occupied = 0usize;
    let mut attempts = 0usize;
    let max_attempts = ATTEMPTS_PER_CELL * n_cells;

    while occupied < need_lo && attempts < max_attempts {
        attempts += 1;
        let w = rng.gen_range(BUILDING_EDGE_MIN..=BUILDING_EDGE_MAX.min(s));
        let l = rng.gen_range(BUILDING_EDGE_MIN..=BUILDING_EDGE_MAX.min(s));
        let x0 = rng.gen_range(0..=s - w);
        let y0 = rng.gen_range(0..=s - l);
        let h = rng.gen_range(params.height_min..=params.height_max);
        if occupied + w * l > cap_hi {
            continue;
        }
        let overlaps = (x0..x0 + w).any(|x| (y0..y0 + l).any(|y| raw[x * s + y] > 0.0));
        if overlaps {
            continue;
        }
        for x in x0..x0 + w {
            for y in y0..y0 + l {
                raw[x * s + y] = h;
            }
        }
        occupied += w * l;
    }

    if occupied < need_lo {
        return Err(CityError::DensityInfeasible {
            target: params.building_density,
            grid_size: s,
            placed: occupied,
            needed: need_lo,
            attempts,
        });
    }

    Ok(CityModel::from_raw_with_params(raw, params.clone()))
}

impl CityModel {
    /// Builds a model from an explicit raw height grid (row-major, `x*S + y`).
    /// The smoothed field and obstacle list are derived.
    pub fn from_raw(grid_size: usize, raw_heights: Vec<f64>) -> Self {
        let params = CityParams {
            grid_size,
            ..CityParams::default()
        };
        Self::from_raw_with_params(raw_heights, params)
    }

    fn from_raw_with_params(raw_heights: Vec<f64>, params: CityParams) -> Self {
        let s = params.grid_size;
        assert_eq!(raw_heights.len(), s * s, "raw grid must be S x S");
        let smooth_heights = derive_smooth(&raw_heights, s, params.smoothing_radius);
        let mut obstacle_cells = Vec::new();
        for x in 0..s {
            for y in 0..s {
                if raw_heights[x * s + y] > 0.0 {
                    obstacle_cells.push((x, y));
                }
            }
        }
        Self {
            grid_size: s,
            raw_heights,
            smooth_heights,
            obstacle_cells,
            params,
        }
    }

    /// Test seam: plant both fields directly (e.g. a synthetic ramp in the
    /// smoothed field with an empty raw field).
    #[cfg(test)]
    pub(crate) fn from_parts(grid_size: usize, raw: Vec<f64>, smooth: Vec<f64>) -> Self {
        assert_eq!(raw.len(), grid_size * grid_size);
        assert_eq!(smooth.len(), grid_size * grid_size);
        let mut m = Self::from_raw(grid_size, raw);
        m.smooth_heights = smooth;
        m
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn params(&self) -> &CityParams {
        &self.params
    }

    pub fn raw_heights(&self) -> &[f64] {
        &self.raw_heights
    }

    pub fn smooth_heights(&self) -> &[f64] {
        &self.smooth_heights
    }

    pub fn obstacle_cells(&self) -> &[(usize, usize)] {
        &self.obstacle_cells
    }

    pub fn raw_at(&self, x: usize, y: usize) -> f64 {
        self.raw_heights[x * self.grid_size + y]
    }

    /// Raw height at the cell whose center is nearest to the continuous
    /// point (x, y), clamped into the grid. This is the ground-truth field
    /// safety is measured against.
    pub fn raw_at_nearest(&self, x: f64, y: f64) -> f64 {
        let s = self.grid_size;
        let ix = (x.round().max(0.0) as usize).min(s - 1);
        let iy = (y.round().max(0.0) as usize).min(s - 1);
        self.raw_heights[ix * s + iy]
    }

    fn check_bounds(&self, x: f64, y: f64) -> Result<(), CityError> {
        let max = (self.grid_size - 1) as f64;
        if !(x.is_finite() && y.is_finite()) || x < 0.0 || y < 0.0 || x > max || y > max {
            return Err(CityError::OutOfBounds { x, y, max });
        }
        Ok(())
    }

    /// Bilinear interpolation of the smoothed field. Continuous on the arena.
    pub fn smoothed_height(&self, x: f64, y: f64) -> Result<f64, CityError> {
        self.check_bounds(x, y)?;
        let (ix, iy, u, v) = self.cell_of(x, y);
        let s = self.grid_size;
        let f = |a: usize, b: usize| self.smooth_heights[a * s + b];
        Ok(f(ix, iy) * (1.0 - u) * (1.0 - v)
            + f(ix + 1, iy) * u * (1.0 - v)
            + f(ix, iy + 1) * (1.0 - u) * v
            + f(ix + 1, iy + 1) * u * v)
    }

    /// Gradient (∂h/∂x, ∂h/∂y) of the interpolated smoothed field, evaluated
    /// analytically on the bilinear patch containing (x, y). On patch
    /// boundaries (integer coordinates) the one-sided derivative of the cell
    /// chosen by `cell_of` is returned.
    pub fn height_gradient(&self, x: f64, y: f64) -> Result<(f64, f64), CityError> {
        self.check_bounds(x, y)?;
        let (ix, iy, u, v) = self.cell_of(x, y);
        let s = self.grid_size;
        let f = |a: usize, b: usize| self.smooth_heights[a * s + b];
        let (f00, f10, f01, f11) = (f(ix, iy), f(ix + 1, iy), f(ix, iy + 1), f(ix + 1, iy + 1));
        let dx = (f10 - f00) * (1.0 - v) + (f11 - f01) * v;
        let dy = (f01 - f00) * (1.0 - u) + (f11 - f10) * u;
        Ok((dx, dy))
    }

    /// Maximum raw height over cells whose centers lie within Euclidean
    /// `radius` of (cx, cy); 0 when no building cell qualifies.
    pub fn max_height_in_disk(&self, cx: f64, cy: f64, radius: f64) -> Result<f64, CityError> {
        if !(radius >= 0.0) {
            return Err(CityError::NegativeRadius(radius));
        }
        let s = self.grid_size as i64;
        let lo = |c: f64| ((c - radius).ceil() as i64).max(0);
        let hi = |c: f64| ((c + radius).floor() as i64).min(s - 1);
        let r2 = radius * radius;
        let mut best = 0.0f64;
        for x in lo(cx)..=hi(cx) {
            for y in lo(cy)..=hi(cy) {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                if dx * dx + dy * dy <= r2 {
                    best = best.max(self.raw_heights[(x * s + y) as usize]);
                }
            }
        }
        Ok(best)
    }

    /// Cell index and fractional offsets for bilinear evaluation. The cell is
    /// `min(floor(·), S-2)` so the arena edge x = S−1 evaluates on the last
    /// patch with u = 1.
    fn cell_of(&self, x: f64, y: f64) -> (usize, usize, f64, f64) {
        let last = self.grid_size - 2;
        let ix = (x.floor() as usize).min(last);
        let iy = (y.floor() as usize).min(last);
        (ix, iy, x - ix as f64, y - iy as f64)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(CityDoc {
            grid_size: self.grid_size,
            cell_pitch_m: 1.0,
            raw_heights: self.raw_heights.clone(),
            seed: self.params.seed,
            params: self.params.clone(),
        })
        .expect("city document serialization cannot fail")
    }

    pub fn from_json(doc: &serde_json::Value) -> Result<Self, CityError> {
        let doc: CityDoc = serde_json::from_value(doc.clone())
            .map_err(|e| CityError::InvalidParams(format!("city document: {e}")))?;
        if doc.grid_size != doc.params.grid_size {
            return Err(CityError::InvalidParams(
                "grid_size disagrees with params.grid_size".into(),
            ));
        }
        if doc.raw_heights.len() != doc.grid_size * doc.grid_size {
            return Err(CityError::InvalidParams("raw grid is not S x S".into()));
        }
        Ok(Self::from_raw_with_params(doc.raw_heights, doc.params))
    }
}

/// Slope of the surrogate's ramp skirt, meters of height lost per cell of
/// Chebyshev distance from a rooftop.
///
/// Two forces pin the value. It must be steep enough that tall buildings
/// don't drown the arena in skirt (clearance-feasible ground reappears
/// `(h - clearable) / RAMP_DECAY` cells from the wall, e.g. 0.7 cells for a
/// 50 m rooftop under a 45 m clearable altitude). It must be shallow enough
/// that the skirt of a too-tall-to-overfly rooftop spans an entire waypoint
/// deviation box (diameter 6 m at the 3 m default): a linearized clearance
/// row evaluated anywhere on the skirt extrapolates to the full rooftop
/// demand at the wall, because the skirt is linear along the approach. That
/// reach is what lets a single per-waypoint row veto a jump onto a rooftop
/// the drone can never clear — on a flat-topped surrogate the row carries no
/// lateral term, the jump lands, and the iterate is stuck on the roof with a
/// zero-gradient row forever after. Reach for the shortest such rooftop
/// (≳45 m at default altitudes) is 1 + 45/7 ≈ 7.4 cells > 6.
const RAMP_DECAY: f64 = 7.0;

/// Derives the smoothed field: each rooftop keeps its full height over its
/// footprint plus a flat collar of `radius - 1` cells, then decays linearly
/// at `RAMP_DECAY` per cell of Chebyshev distance; the field is the pointwise
/// maximum over all rooftops (and zero ground). `radius = 0` is the identity.
///
/// A plain mean filter is useless as a linearization surrogate here: it
/// grinds a 2x2 49 m tower down to a ~10 m bump whose gradient vanishes two
/// cells out, so linearized clearance rows neither see nor repel the wall
/// and the planner walks straight into it. The full-height plateau keeps the
/// surrogate sound; the long linear skirt keeps the rows informative from
/// anywhere a trust-region step could jump from (see `RAMP_DECAY`).
///
/// For `radius >= 2` the bilinear interpolant of this field majorizes the
/// nearest-cell raw field everywhere: a query point's four interpolation
/// nodes sit within Chebyshev distance 1 of its nearest cell c, so the
/// radius-1 dilation inside the collar has already lifted all four to at
/// least raw[c], and their convex combination follows. So a trajectory that
/// clears the surrogate clears the true building beneath it — without this,
/// the interpolant dips below the rooftop just inside a footprint cell's
/// boundary and the optimizer parks in the dip, oscillating between
/// "feasible against the surrogate" and "violating against raw". The field
/// never exceeds the tallest building and is exact on flat ground.
fn derive_smooth(raw: &[f64], s: usize, radius: usize) -> Vec<f64> {
    if radius == 0 {
        return raw.to_vec();
    }
    ramp_down(&max_filter(raw, s, radius - 1), s, RAMP_DECAY)
}

/// Max over the clamped square window of the given radius.
fn max_filter(raw: &[f64], s: usize, radius: usize) -> Vec<f64> {
    if radius == 0 {
        return raw.to_vec();
    }
    let r = radius as i64;
    let si = s as i64;
    let mut out = vec![0.0f64; s * s];
    for x in 0..si {
        for y in 0..si {
            let (x0, x1) = ((x - r).max(0), (x + r).min(si - 1));
            let (y0, y1) = ((y - r).max(0), (y + r).min(si - 1));
            let mut top = f64::NEG_INFINITY;
            for a in x0..=x1 {
                for b in y0..=y1 {
                    top = top.max(raw[(a * si + b) as usize]);
                }
            }
            out[(x * si + y) as usize] = top;
        }
    }
    out
}

/// Cone propagation: out[n] = max over cells c of (field[c] − decay·d8(n, c))
/// where d8 is the Chebyshev (chessboard) grid distance, floored at the
/// local value so ground stays at zero. Computed exactly by the two-pass
/// 3×3 chamfer sweep: any d8 geodesic reorders into forward-raster moves
/// followed by backward-raster moves, so one sweep in each direction
/// propagates every source's cone to every cell.
fn ramp_down(field: &[f64], s: usize, decay: f64) -> Vec<f64> {
    let si = s as i64;
    let mut out = field.to_vec();
    let idx = |x: i64, y: i64| (x * si + y) as usize;
    for x in 0..si {
        for y in 0..si {
            let mut best = out[idx(x, y)];
            for (dx, dy) in [(-1, -1), (-1, 0), (-1, 1), (0, -1)] {
                let (a, b) = (x + dx, y + dy);
                if (0..si).contains(&a) && (0..si).contains(&b) {
                    best = best.max(out[idx(a, b)] - decay);
                }
            }
            out[idx(x, y)] = best;
        }
    }
    for x in (0..si).rev() {
        for y in (0..si).rev() {
            let mut best = out[idx(x, y)];
            for (dx, dy) in [(1, 1), (1, 0), (1, -1), (0, 1)] {
                let (a, b) = (x + dx, y + dy);
                if (0..si).contains(&a) && (0..si).contains(&b) {
                    best = best.max(out[idx(a, b)] - decay);
                }
            }
            out[idx(x, y)] = best;
        }
    }
    out
}
