//! Conic quadratic solver and trajectory-subproblem assembly.
//!
//! Programs are stated as `min ½xᵀPx + qᵀx  s.t.  Ax + s = b, s ∈ K`, where
//! `K` is a product of zero, nonnegative, and second-order cones. The solver
//! is an operator-splitting (ADMM) iteration with diagonal Ruiz
//! equilibration, a per-row penalty, over-relaxation, and an envelope
//! Cholesky factorization of the normal matrix:
//!
//! 1. `(P + σI + AᵀRA) x̃ = σx − q + Aᵀ(R(b − s) − y)`
//! 2. `x ← αx̃ + (1−α)x`, `v ← α(b − Ax̃) + (1−α)s`
//! 3. `s ← Π_K(v − R⁻¹y)`
//! 4. `y ← y + R(s − v)`
//!
//! Convergence is declared on unscaled residuals:
//! `‖Ax + s − b‖∞ ≤ ε_p(1 + scale_p)` and `‖Px + q + Aᵀy‖∞ ≤ ε_d(1 + scale_d)`.

mod linalg;

use crate::convexify::{ActiveConstraintSet, ConstraintKind, LinearConstraint};
use crate::scenario::{Scenario, Trajectories};
use linalg::{Csr, EnvelopeCholesky, SymRows};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Instant;
use thiserror::Error;

/// Proximal regularization on the x-step.
const SIGMA: f64 = 1e-6;
/// Initial per-row penalty.
const RHO0: f64 = 0.1;
/// Equality rows get a much stiffer penalty than inequality rows.
const RHO_ZERO_CONE_SCALE: f64 = 1e3;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
/// Residuals are only evaluated every this many iterations.
const CHECK_INTERVAL: usize = 25;
/// Rebalance the penalty when the primal/dual residual ratio leaves
/// [1/25, 25], and only when the resulting factor is at least 5, so
/// refactorizations stay rare.
const ADAPT_THRESHOLD: f64 = 25.0;
const ADAPT_MIN_FACTOR: f64 = 5.0;
const MAX_REFACTOR: usize = 20;
/// Iterates beyond this magnitude are treated as a divergence certificate.
const DIVERGENCE_LIMIT: f64 = 1e12;
const RUIZ_PASSES: usize = 10;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("program is inconsistent: {0}")]
    BadProgram(String),
    #[error("invalid solver settings: {0}")]
    BadSettings(String),
    #[error("normal-matrix factorization failed: {0}")]
    Factorization(String),
    #[error("program serialization failed: {0}")]
    Serde(#[from] serde_json::Error),
}

/// One cone block of the product cone `K`, in row order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "cone", content = "dim")]
pub enum ConeBlock {
    /// `s = 0` (equality rows).
    Zero(usize),
    /// `s >= 0` componentwise (inequality rows).
    NonNeg(usize),
    /// `‖s[1..]‖₂ <= s[0]`.
    Soc(usize),
}

impl ConeBlock {
    pub fn dim(&self) -> usize {
        match *self {
            ConeBlock::Zero(d) | ConeBlock::NonNeg(d) | ConeBlock::Soc(d) => d,
        }
    }
}

/// Index map for the stacked subproblem decision vector: positions in
/// time-major order, then smoothness epigraphs, then segment-length
/// epigraphs, then the shared trust radius as the final variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableLayout {
    pub n_drones: usize,
    pub n_waypoints: usize,
}

impl VariableLayout {
    pub fn n_positions(&self) -> usize {
        3 * self.n_drones * self.n_waypoints
    }

    pub fn position(&self, drone: usize, waypoint: usize, axis: usize) -> usize {
        debug_assert!(drone < self.n_drones && waypoint < self.n_waypoints && axis < 3);
        3 * (waypoint * self.n_drones + drone) + axis
    }

    /// Epigraph of the t-th curvature term of a drone (t in 0..T−2).
    pub fn smooth_slack(&self, drone: usize, term: usize) -> usize {
        debug_assert!(term < self.n_waypoints - 2);
        self.n_positions() + drone * (self.n_waypoints - 2) + term
    }

    /// Epigraph of the t-th segment length of a drone (t in 0..T−1).
    pub fn length_slack(&self, drone: usize, segment: usize) -> usize {
        debug_assert!(segment < self.n_waypoints - 1);
        self.n_positions()
            + self.n_drones * (self.n_waypoints - 2)
            + drone * (self.n_waypoints - 1)
            + segment
    }

    pub fn delta(&self) -> usize {
        self.n_vars() - 1
    }

    pub fn n_vars(&self) -> usize {
        self.n_positions()
            + self.n_drones * (self.n_waypoints - 2)
            + self.n_drones * (self.n_waypoints - 1)
            + 1
    }

    /// Reads the position block of a solution vector back into trajectories.
    pub fn extract_trajectories(&self, x: &[f64]) -> Trajectories {
        let mut out = Trajectories::zeros(self.n_drones, self.n_waypoints);
        for k in 0..self.n_drones {
            for t in 0..self.n_waypoints {
                out.set(
                    k,
                    t,
                    [
                        x[self.position(k, t, 0)],
                        x[self.position(k, t, 1)],
                        x[self.position(k, t, 2)],
                    ],
                );
            }
        }
        out
    }
}

/// A conic quadratic program in sparse triplet form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicProgram {
    pub n_vars: usize,
    /// Upper-triangle (row <= col) triplets of the quadratic cost.
    pub p_upper: Vec<(usize, usize, f64)>,
    pub q: Vec<f64>,
    pub a_triplets: Vec<(usize, usize, f64)>,
    pub b: Vec<f64>,
    pub cones: Vec<ConeBlock>,
    /// Present when the program is an assembled trajectory subproblem.
    pub layout: Option<VariableLayout>,
}

impl ConicProgram {
    pub fn n_rows(&self) -> usize {
        self.b.len()
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |msg: String| Err(SolverError::BadProgram(msg));
        if self.q.len() != self.n_vars {
            return bad(format!(
                "q has {} entries for {} vars",
                self.q.len(),
                self.n_vars
            ));
        }
        let cone_dim: usize = self.cones.iter().map(ConeBlock::dim).sum();
        if cone_dim != self.b.len() {
            return bad(format!(
                "cones cover {cone_dim} rows, b has {}",
                self.b.len()
            ));
        }
        if self.cones.iter().any(|c| c.dim() == 0) {
            return bad("zero-dimensional cone block".into());
        }
        for &(i, j, v) in &self.p_upper {
            if i > j || j >= self.n_vars || !v.is_finite() {
                return bad(format!("bad quadratic triplet ({i}, {j}, {v})"));
            }
        }
        for &(r, c, v) in &self.a_triplets {
            if r >= self.b.len() || c >= self.n_vars || !v.is_finite() {
                return bad(format!("bad constraint triplet ({r}, {c}, {v})"));
            }
        }
        if self.q.iter().chain(&self.b).any(|v| !v.is_finite()) {
            return bad("non-finite entry in q or b".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, SolverError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, SolverError> {
        let prog: Self = serde_json::from_str(text)?;
        prog.validate()?;
        Ok(prog)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub max_iterations: usize,
    pub eps_primal: f64,
    pub eps_dual: f64,
    pub over_relaxation: f64,
    pub scaling: bool,
}

impl Default for SolverSettings {
    /// Tolerances looser by two orders leave too much noise in the iterates
    /// for the outer loop's ~1e-3 feasibility target, while tighter ones sit
    /// below the residual floor that first-order splitting reaches on
    /// degenerate subproblems (many parallel rows active at once), where the
    /// residual plateaus around 3e-5 regardless of penalty or relaxation. The
    /// iteration cap bounds the cost of those plateau solves; their residual
    /// is far below the outer loop's abort threshold, so they are still
    /// usable steps.
    fn default() -> Self {
        Self {
            max_iterations: 12_500,
            eps_primal: 1e-5,
            eps_dual: 1e-5,
            over_relaxation: 1.5,
            scaling: true,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<(), SolverError> {
        if self.max_iterations == 0 {
            return Err(SolverError::BadSettings(
                "max_iterations must be positive".into(),
            ));
        }
        if !(self.eps_primal > 0.0) || !(self.eps_dual > 0.0) {
            return Err(SolverError::BadSettings(
                "tolerances must be positive".into(),
            ));
        }
        if !(self.over_relaxation > 0.0 && self.over_relaxation < 2.0) {
            return Err(SolverError::BadSettings(
                "over_relaxation must lie in (0, 2)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    MaxIterations,
    InfeasibleDetected,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Solution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    /// ‖Ax + s − b‖∞ / (1 + scale), unscaled quantities.
    pub residual_primal: f64,
    /// ‖Px + q + Aᵀy‖∞ / (1 + scale), unscaled quantities.
    pub residual_dual: f64,
    pub iterations: usize,
    pub wall_time_s: f64,
}

/// Unscaled primal/slack/dual iterates of a previous solve, used to seed the
/// next one. Consecutive subproblems in an outer sequential loop differ only
/// slightly, so reusing the final iterates (and the adapted penalty) cuts the
/// iteration count by an order of magnitude compared to a cold start.
#[derive(Debug, Clone)]
pub struct WarmStart {
    pub x: Vec<f64>,
    pub s: Vec<f64>,
    pub y: Vec<f64>,
    pub rho_base: f64,
}

/// Euclidean projection onto the second-order cone `‖v[1..]‖ <= v[0]`.
pub fn project_soc(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let t = v[0];
    let nu = v[1..].iter().map(|u| u * u).sum::<f64>().sqrt();
    if nu <= t {
        return;
    }
    if nu <= -t {
        v.fill(0.0);
        return;
    }
    let c = 0.5 * (t + nu);
    v[0] = c;
    let scale = c / nu;
    for u in &mut v[1..] {
        *u *= scale;
    }
}

fn project_onto_cones(cones: &[ConeBlock], v: &mut [f64]) {
    let mut off = 0;
    for cone in cones {
        let dim = cone.dim();
        match cone {
            ConeBlock::Zero(_) => v[off..off + dim].fill(0.0),
            ConeBlock::NonNeg(_) => {
                for e in &mut v[off..off + dim] {
                    *e = e.max(0.0);
                }
            }
            ConeBlock::Soc(_) => project_soc(&mut v[off..off + dim]),
        }
        off += dim;
    }
}

fn mirror_upper(upper: &[(usize, usize, f64)]) -> Vec<(usize, usize, f64)> {
    let mut t = Vec::with_capacity(2 * upper.len());
    for &(i, j, v) in upper {
        t.push((i, j, v));
        if i != j {
            t.push((j, i, v));
        }
    }
    t
}

fn rho_vector(cones: &[ConeBlock], base: f64, m: usize) -> Vec<f64> {
    let mut rho = vec![base; m];
    let mut off = 0;
    for cone in cones {
        let dim = cone.dim();
        if matches!(cone, ConeBlock::Zero(_)) {
            for r in &mut rho[off..off + dim] {
                *r = base * RHO_ZERO_CONE_SCALE;
            }
        }
        off += dim;
    }
    rho
}

/// Iterative diagonal equilibration of the stacked [P Aᵀ; A 0] operator.
/// Row scalings are uniform within each second-order cone block so scaled
/// cone membership is equivalent to the original one.
fn ruiz_equilibrate(p: &mut Csr, a: &mut Csr, cones: &[ConeBlock]) -> (Vec<f64>, Vec<f64>) {
    let n = a.n_cols;
    let m = a.n_rows;
    let mut d = vec![1.0; n];
    let mut e = vec![1.0; m];
    for _ in 0..RUIZ_PASSES {
        let pc = p.col_inf_norms();
        let ac = a.col_inf_norms();
        let mut dj = vec![1.0; n];
        for j in 0..n {
            let norm = pc[j].max(ac[j]);
            if norm > 1e-12 {
                dj[j] = 1.0 / norm.sqrt();
            }
        }
        p.scale_rows(&dj);
        p.scale_cols(&dj);
        a.scale_cols(&dj);
        for j in 0..n {
            d[j] *= dj[j];
        }

        let mut ei = vec![1.0; m];
        let mut off = 0;
        for cone in cones {
            let dim = cone.dim();
            match cone {
                ConeBlock::Soc(_) => {
                    let mut norm = 0.0f64;
                    for r in off..off + dim {
                        norm = norm.max(a.row_inf_norm(r));
                    }
                    if norm > 1e-12 {
                        let f = 1.0 / norm.sqrt();
                        for entry in &mut ei[off..off + dim] {
                            *entry = f;
                        }
                    }
                }
                _ => {
                    for (r, entry) in ei[off..off + dim].iter_mut().enumerate() {
                        let norm = a.row_inf_norm(off + r);
                        if norm > 1e-12 {
                            *entry = 1.0 / norm.sqrt();
                        }
                    }
                }
            }
            off += dim;
        }
        a.scale_rows(&ei);
        for i in 0..m {
            e[i] *= ei[i];
        }
    }
    (d, e)
}

/// M = P + σI + AᵀRA as symmetric rows, factored over the envelope.
fn factor_normal(p: &Csr, a: &Csr, rho: &[f64], n: usize) -> Result<EnvelopeCholesky, SolverError> {
    let mut rows: SymRows = vec![BTreeMap::new(); n];
    for (i, row) in rows.iter_mut().enumerate() {
        row.insert(i, SIGMA);
    }
    for i in 0..p.n_rows {
        for (j, v) in p.row(i) {
            *rows[i].entry(j).or_insert(0.0) += v;
        }
    }
    let mut row_buf: Vec<(usize, f64)> = Vec::new();
    for r in 0..a.n_rows {
        row_buf.clear();
        row_buf.extend(a.row(r));
        for &(i, vi) in &row_buf {
            for &(j, vj) in &row_buf {
                *rows[i].entry(j).or_insert(0.0) += rho[r] * vi * vj;
            }
        }
    }
    EnvelopeCholesky::new(&rows).map_err(SolverError::Factorization)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

struct Residuals {
    primal: f64,
    dual: f64,
    scale_primal: f64,
    scale_dual: f64,
}

impl Residuals {
    fn converged(&self, settings: &SolverSettings) -> bool {
        self.primal <= settings.eps_primal * (1.0 + self.scale_primal)
            && self.dual <= settings.eps_dual * (1.0 + self.scale_dual)
    }

    fn normalized(&self) -> (f64, f64) {
        (
            self.primal / (1.0 + self.scale_primal),
            self.dual / (1.0 + self.scale_dual),
        )
    }
}

#[allow(clippy::too_many_arguments)]
fn residuals(
    p: &Csr,
    a: &Csr,
    q: &[f64],
    b: &[f64],
    xu: &[f64],
    su: &[f64],
    yu: &[f64],
    axu: &mut [f64],
    pxu: &mut [f64],
    aty: &mut [f64],
) -> Residuals {
    a.matvec(xu, axu);
    p.matvec(xu, pxu);
    a.matvec_transpose(yu, aty);
    let mut primal = 0.0f64;
    for i in 0..b.len() {
        primal = primal.max((axu[i] + su[i] - b[i]).abs());
    }
    let mut dual = 0.0f64;
    for j in 0..q.len() {
        dual = dual.max((pxu[j] + q[j] + aty[j]).abs());
    }
    Residuals {
        primal,
        dual,
        scale_primal: inf_norm(axu).max(inf_norm(su)).max(inf_norm(b)),
        scale_dual: inf_norm(pxu).max(inf_norm(q)).max(inf_norm(aty)),
    }
}

/// Solves a conic quadratic program. Deterministic: identical inputs produce
/// bitwise-identical solutions.
pub fn solve_conic(
    prog: &ConicProgram,
    settings: &SolverSettings,
) -> Result<Solution, SolverError> {
    solve_conic_warm(prog, settings, None).map(|(sol, _)| sol)
}

/// [`solve_conic`] seeded with the iterates of a related previous solve; also
/// returns the final iterates for seeding the next one. A `None` seed is a
/// cold start.
pub fn solve_conic_warm(
    prog: &ConicProgram,
    settings: &SolverSettings,
    warm: Option<&WarmStart>,
) -> Result<(Solution, WarmStart), SolverError> {
    settings.validate()?;
    prog.validate()?;
    let t0 = Instant::now();
    let n = prog.n_vars;
    let m = prog.b.len();
    if let Some(w) = warm {
        if w.x.len() != n || w.s.len() != m || w.y.len() != m {
            return Err(SolverError::BadProgram(format!(
                "warm start dims ({}, {}, {}) do not match program ({n}, {m})",
                w.x.len(),
                w.s.len(),
                w.y.len()
            )));
        }
    }

    // Unscaled operators, kept for residual checks and the objective.
    let p0 = Csr::from_triplets(n, n, &mirror_upper(&prog.p_upper));
    let a0 = Csr::from_triplets(m, n, &prog.a_triplets);

    let mut ps = p0.clone();
    let mut as_ = a0.clone();
    let (d, e) = if settings.scaling {
        ruiz_equilibrate(&mut ps, &mut as_, &prog.cones)
    } else {
        (vec![1.0; n], vec![1.0; m])
    };
    let qs: Vec<f64> = prog.q.iter().zip(&d).map(|(q, dj)| q * dj).collect();
    let bs: Vec<f64> = prog.b.iter().zip(&e).map(|(b, ei)| b * ei).collect();

    let mut rho_base = warm
        .map(|w| w.rho_base.clamp(RHO_MIN, RHO_MAX))
        .unwrap_or(RHO0);
    let mut rho = rho_vector(&prog.cones, rho_base, m);
    let mut chol = factor_normal(&ps, &as_, &rho, n)?;
    let mut refactors = 0usize;

    let (mut x, mut s, mut y) = match warm {
        Some(w) => {
            let x = w.x.iter().zip(&d).map(|(v, dj)| v / dj).collect();
            let mut s: Vec<f64> = w.s.iter().zip(&e).map(|(v, ei)| v * ei).collect();
            // Iterates must stay cone-feasible in s; duals self-correct.
            project_onto_cones(&prog.cones, &mut s);
            let y = w.y.iter().zip(&e).map(|(v, ei)| v / ei).collect();
            (x, s, y)
        }
        None => {
            let mut s = bs.clone();
            project_onto_cones(&prog.cones, &mut s);
            (vec![0.0; n], s, vec![0.0; m])
        }
    };

    let mut tmp_m = vec![0.0; m];
    let mut rhs = vec![0.0; n];
    let mut ax = vec![0.0; m];
    let mut v = vec![0.0; m];
    let mut xu = vec![0.0; n];
    let mut su = vec![0.0; m];
    let mut yu = vec![0.0; m];
    let mut axu = vec![0.0; m];
    let mut pxu = vec![0.0; n];
    let mut aty = vec![0.0; n];

    let alpha = settings.over_relaxation;
    let mut status = SolveStatus::MaxIterations;
    let mut iterations = 0;

    for iter in 1..=settings.max_iterations {
        iterations = iter;

        for i in 0..m {
            tmp_m[i] = rho[i] * (bs[i] - s[i]) - y[i];
        }
        as_.matvec_transpose(&tmp_m, &mut rhs);
        for j in 0..n {
            rhs[j] += SIGMA * x[j] - qs[j];
        }
        let xt = chol.solve(&rhs);
        as_.matvec(&xt, &mut ax);
        for j in 0..n {
            x[j] = alpha * xt[j] + (1.0 - alpha) * x[j];
        }
        for i in 0..m {
            v[i] = alpha * (bs[i] - ax[i]) + (1.0 - alpha) * s[i];
            s[i] = v[i] - y[i] / rho[i];
        }
        project_onto_cones(&prog.cones, &mut s);
        for i in 0..m {
            y[i] += rho[i] * (s[i] - v[i]);
        }

        if iter % CHECK_INTERVAL != 0 && iter != settings.max_iterations {
            continue;
        }
        unscale(&x, &s, &y, &d, &e, &mut xu, &mut su, &mut yu);
        let res = residuals(
            &p0, &a0, &prog.q, &prog.b, &xu, &su, &yu, &mut axu, &mut pxu, &mut aty,
        );
        if inf_norm(&xu).max(inf_norm(&su)).max(inf_norm(&yu)) > DIVERGENCE_LIMIT {
            status = SolveStatus::InfeasibleDetected;
            break;
        }
        if res.converged(settings) {
            status = SolveStatus::Optimal;
            break;
        }
        let (rp, rd) = res.normalized();
        let ratio = rp / rd.max(1e-30);
        if (ratio > ADAPT_THRESHOLD || ratio < 1.0 / ADAPT_THRESHOLD) && refactors < MAX_REFACTOR {
            let proposed = (rho_base * ratio.sqrt()).clamp(RHO_MIN, RHO_MAX);
            let change = proposed / rho_base;
            if change >= ADAPT_MIN_FACTOR || change <= 1.0 / ADAPT_MIN_FACTOR {
                rho_base = proposed;
                rho = rho_vector(&prog.cones, rho_base, m);
                chol = factor_normal(&ps, &as_, &rho, n)?;
                refactors += 1;
            }
        }
    }

    unscale(&x, &s, &y, &d, &e, &mut xu, &mut su, &mut yu);
    let res = residuals(
        &p0, &a0, &prog.q, &prog.b, &xu, &su, &yu, &mut axu, &mut pxu, &mut aty,
    );
    let objective = 0.5 * xu.iter().zip(&pxu).map(|(a, b)| a * b).sum::<f64>()
        + prog.q.iter().zip(&xu).map(|(a, b)| a * b).sum::<f64>();
    let (residual_primal, residual_dual) = res.normalized();
    let final_warm = WarmStart {
        x: xu.clone(),
        s: su,
        y: yu,
        rho_base,
    };
    let solution = Solution {
        x: xu,
        objective,
        status,
        residual_primal,
        residual_dual,
        iterations,
        wall_time_s: t0.elapsed().as_secs_f64(),
    };
    Ok((solution, final_warm))
}

fn unscale(
    x: &[f64],
    s: &[f64],
    y: &[f64],
    d: &[f64],
    e: &[f64],
    xu: &mut [f64],
    su: &mut [f64],
    yu: &mut [f64],
) {
    for j in 0..x.len() {
        xu[j] = x[j] * d[j];
    }
    for i in 0..s.len() {
        su[i] = s[i] / e[i];
        yu[i] = y[i] * e[i];
    }
}

/// Builds the convex trajectory subproblem around a reference:
///
/// * objective: sum of curvature epigraphs + sum of segment-length epigraphs
///   + `w_delta · δ²` (`delta_exponent` must be 2; higher orders are not
///   representable as a quadratic objective block),
/// * nonnegative rows: every retained linearized constraint, `δ >= 0`, and
///   `δ <= delta_cap` when the cap is finite,
/// * second-order cones: curvature and segment-length epigraph definitions,
///   plus `‖x(k,t) − xʳ(k,t)‖ <= δ` per waypoint when the cap is finite.
///
/// An infinite `delta_cap` removes the trust cones and the cap row entirely
/// (the radius variable stays, pinned at zero by its nonnegativity row).
pub fn assemble_subproblem(
    active: &ActiveConstraintSet,
    refs: &Trajectories,
    delta_cap: f64,
    w_delta: f64,
    delta_exponent: u32,
    scenario: &Scenario,
) -> Result<ConicProgram, SolverError> {
    let layout = VariableLayout {
        n_drones: scenario.params.n_drones,
        n_waypoints: scenario.params.n_waypoints,
    };
    if refs.dims() != (layout.n_drones, layout.n_waypoints) {
        return Err(SolverError::BadProgram(format!(
            "reference dims {:?} do not match scenario ({}, {})",
            refs.dims(),
            layout.n_drones,
            layout.n_waypoints
        )));
    }
    if !(delta_cap > 0.0) {
        return Err(SolverError::BadProgram(format!(
            "trust radius cap must be positive, got {delta_cap}"
        )));
    }
    if !(w_delta >= 0.0) || !w_delta.is_finite() {
        return Err(SolverError::BadProgram(format!(
            "radius penalty weight must be finite and nonnegative, got {w_delta}"
        )));
    }
    if delta_exponent != 2 {
        return Err(SolverError::BadProgram(format!(
            "radius penalty exponent must be 2 (the only order representable \
             as a quadratic objective block), got {delta_exponent}"
        )));
    }
    let (nd, nt) = (layout.n_drones, layout.n_waypoints);
    let n = layout.n_vars();
    let with_trust = delta_cap.is_finite();

    let mut q = vec![0.0; n];
    for k in 0..nd {
        for i in 0..nt - 2 {
            q[layout.smooth_slack(k, i)] = 1.0;
        }
        for i in 0..nt - 1 {
            q[layout.length_slack(k, i)] = 1.0;
        }
    }
    let mut p_upper = Vec::new();
    if w_delta > 0.0 {
        p_upper.push((layout.delta(), layout.delta(), 2.0 * w_delta));
    }

    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut cones = Vec::new();
    let mut row = 0usize;

    for c in &active.retained {
        for &(k, t, axis, coef) in &c.terms {
            a.push((row, layout.position(k, t, axis), coef));
        }
        b.push(c.rhs);
        row += 1;
    }
    a.push((row, layout.delta(), -1.0));
    b.push(0.0);
    row += 1;
    if with_trust {
        a.push((row, layout.delta(), 1.0));
        b.push(delta_cap);
        row += 1;
    }
    cones.push(ConeBlock::NonNeg(row));

    for k in 0..nd {
        for i in 0..nt - 2 {
            a.push((row, layout.smooth_slack(k, i), -1.0));
            b.push(0.0);
            row += 1;
            for axis in 0..3 {
                a.push((row, layout.position(k, i, axis), -1.0));
                a.push((row, layout.position(k, i + 1, axis), 2.0));
                a.push((row, layout.position(k, i + 2, axis), -1.0));
                b.push(0.0);
                row += 1;
            }
            cones.push(ConeBlock::Soc(4));
        }
    }
    for k in 0..nd {
        for i in 0..nt - 1 {
            a.push((row, layout.length_slack(k, i), -1.0));
            b.push(0.0);
            row += 1;
            for axis in 0..3 {
                a.push((row, layout.position(k, i, axis), 1.0));
                a.push((row, layout.position(k, i + 1, axis), -1.0));
                b.push(0.0);
                row += 1;
            }
            cones.push(ConeBlock::Soc(4));
        }
    }
    if with_trust {
        for k in 0..nd {
            for t in 0..nt {
                a.push((row, layout.delta(), -1.0));
                b.push(0.0);
                row += 1;
                let r = refs.at(k, t);
                for axis in 0..3 {
                    a.push((row, layout.position(k, t, axis), 1.0));
                    b.push(r[axis]);
                    row += 1;
                }
                cones.push(ConeBlock::Soc(4));
            }
        }
    }

    Ok(ConicProgram {
        n_vars: n,
        p_upper,
        q,
        a_triplets: a,
        b,
        cones,
        layout: Some(layout),
    })
}

/// Carries final solver iterates from one trajectory subproblem to the next.
///
/// The primal vector maps one-to-one (the variable layout is fixed for a
/// scenario). Slack/dual entries of retained linear rows are matched by row
/// identity — kind, owning drones, waypoint, plus an occurrence index because
/// e.g. the four deviation rows of a waypoint share all other fields — and
/// rows new to this subproblem start from zero. The epigraph and trust-cone
/// tail is structurally identical between consecutive subproblems of one
/// variant and is copied wholesale. `with_trust` must describe both
/// subproblems (it is constant within a variant).
pub fn remap_warm_start(
    prev_rows: &[LinearConstraint],
    prev: &WarmStart,
    rows: &[LinearConstraint],
    with_trust: bool,
) -> WarmStart {
    type RowKey = (u8, usize, usize, usize, usize);
    fn key(row: &LinearConstraint, occurrence: usize) -> RowKey {
        let kind = match row.kind {
            ConstraintKind::Obstacle => 0u8,
            ConstraintKind::Interdrone => 1,
            ConstraintKind::AltitudeLo => 2,
            ConstraintKind::AltitudeHi => 3,
            ConstraintKind::Bound => 4,
            ConstraintKind::Deviation => 5,
        };
        let partner = row.drones.1.map_or(usize::MAX, |m| m);
        (kind, row.drones.0, partner, row.waypoint, occurrence)
    }
    fn keyed(rows: &[LinearConstraint]) -> impl Iterator<Item = (RowKey, usize)> + '_ {
        let mut occurrences: BTreeMap<RowKey, usize> = BTreeMap::new();
        rows.iter().enumerate().map(move |(i, row)| {
            let slot = occurrences.entry(key(row, 0)).or_insert(0);
            let k = key(row, *slot);
            *slot += 1;
            (k, i)
        })
    }

    let prev_by_key: BTreeMap<RowKey, usize> = keyed(prev_rows).collect();
    let delta_rows = 1 + usize::from(with_trust);
    let prev_nonneg = prev_rows.len() + delta_rows;
    let nonneg = rows.len() + delta_rows;
    let tail = prev.s.len() - prev_nonneg;
    let m = nonneg + tail;
    let mut s = vec![0.0; m];
    let mut y = vec![0.0; m];
    for (k, i) in keyed(rows) {
        if let Some(&j) = prev_by_key.get(&k) {
            s[i] = prev.s[j];
            y[i] = prev.y[j];
        }
    }
    for i in 0..delta_rows + tail {
        s[rows.len() + i] = prev.s[prev_rows.len() + i];
        y[rows.len() + i] = prev.y[prev_rows.len() + i];
    }
    WarmStart {
        x: prev.x.clone(),
        s,
        y,
        rho_base: prev.rho_base,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::city::CityModel;
    use crate::convexify::{box_constraints, linearize_obstacle};
    use crate::scenario::{init_reference, ScenarioParams};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn settings() -> SolverSettings {
        SolverSettings::default()
    }

    #[test]
    fn soc_projection_matches_hand_cases() {
        // Inside: unchanged.
        let mut v = [5.0, 3.0, 0.0];
        project_soc(&mut v);
        assert_eq!(v, [5.0, 3.0, 0.0]);
        // Polar: zero.
        let mut v = [-5.0, 3.0, 0.0];
        project_soc(&mut v);
        assert_eq!(v, [0.0, 0.0, 0.0]);
        // Between: (0, 3, 4) -> (2.5, 1.5, 2.0).
        let mut v = [0.0, 3.0, 4.0];
        project_soc(&mut v);
        assert_abs_diff_eq!(v[0], 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(v[1], 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(v[2], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn scalar_qp_with_bound_recovers_active_constraint() {
        // min x^2 s.t. x >= 3.
        let prog = ConicProgram {
            n_vars: 1,
            p_upper: vec![(0, 0, 2.0)],
            q: vec![0.0],
            a_triplets: vec![(0, 0, -1.0)],
            b: vec![-3.0],
            cones: vec![ConeBlock::NonNeg(1)],
            layout: None,
        };
        let sol = solve_conic(&prog, &settings()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(sol.x[0], 3.0, epsilon = 1e-4);
        assert_abs_diff_eq!(sol.objective, 9.0, epsilon = 1e-3);
    }

    #[test]
    fn norm_epigraph_program_reaches_the_apex() {
        // min s s.t. ‖(x − 1, y − 1)‖ <= s over vars (x, y, s).
        let prog = ConicProgram {
            n_vars: 3,
            p_upper: vec![],
            q: vec![0.0, 0.0, 1.0],
            a_triplets: vec![(0, 2, -1.0), (1, 0, -1.0), (2, 1, -1.0)],
            b: vec![0.0, -1.0, -1.0],
            cones: vec![ConeBlock::Soc(3)],
            layout: None,
        };
        let sol = solve_conic(&prog, &settings()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-4);
        assert_abs_diff_eq!(sol.x[1], 1.0, epsilon = 1e-4);
        assert_abs_diff_eq!(sol.x[2], 0.0, epsilon = 1e-4);
    }

    #[test]
    fn equality_constrained_projection_splits_evenly() {
        // min ½‖x‖² s.t. x1 + x2 = 1.
        let prog = ConicProgram {
            n_vars: 2,
            p_upper: vec![(0, 0, 1.0), (1, 1, 1.0)],
            q: vec![0.0, 0.0],
            a_triplets: vec![(0, 0, 1.0), (0, 1, 1.0)],
            b: vec![1.0],
            cones: vec![ConeBlock::Zero(1)],
            layout: None,
        };
        let sol = solve_conic(&prog, &settings()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(sol.x[0], 0.5, epsilon = 1e-5);
        assert_abs_diff_eq!(sol.x[1], 0.5, epsilon = 1e-5);
    }

    fn projected_gradient_box(p: &[Vec<f64>], q: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
        let n = q.len();
        let mut v = vec![1.0; n];
        let mut lam: f64 = 1.0;
        for _ in 0..300 {
            let mut w = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    w[i] += p[i][j] * v[j];
                }
            }
            lam = w.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            for i in 0..n {
                v[i] = w[i] / lam;
            }
        }
        let step = 1.0 / (1.1 * lam);
        let mut x: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
        for _ in 0..200_000 {
            let mut moved = 0.0f64;
            let mut g = q.to_vec();
            for i in 0..n {
                for j in 0..n {
                    g[i] += p[i][j] * x[j];
                }
            }
            for i in 0..n {
                let next = (x[i] - step * g[i]).clamp(lo[i], hi[i]);
                moved = moved.max((next - x[i]).abs());
                x[i] = next;
            }
            if moved < 1e-13 {
                break;
            }
        }
        x
    }

    #[test]
    fn random_box_qps_match_projected_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..5 {
            let n = rng.gen_range(2..8);
            let mut g = vec![vec![0.0; n]; n];
            for row in &mut g {
                for v in row.iter_mut() {
                    *v = rng.gen_range(-1.0..1.0);
                }
            }
            // P = GᵀG + I is strongly convex.
            let mut p = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in 0..n {
                    for (k, row) in g.iter().enumerate() {
                        p[i][j] += row[i] * g[k][j];
                    }
                }
                p[i][i] += 1.0;
            }
            let q: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let lo = vec![-1.0; n];
            let hi = vec![1.0; n];

            let mut p_upper = Vec::new();
            for i in 0..n {
                for j in i..n {
                    if p[i][j] != 0.0 {
                        p_upper.push((i, j, p[i][j]));
                    }
                }
            }
            let mut a = Vec::new();
            let mut b = Vec::new();
            for i in 0..n {
                a.push((i, i, 1.0));
                b.push(hi[i]);
                a.push((n + i, i, -1.0));
                b.push(-lo[i]);
            }
            let prog = ConicProgram {
                n_vars: n,
                p_upper,
                q: q.clone(),
                a_triplets: a,
                b,
                cones: vec![ConeBlock::NonNeg(2 * n)],
                layout: None,
            };
            let sol = solve_conic(&prog, &settings()).unwrap();
            assert_eq!(sol.status, SolveStatus::Optimal);
            let want = projected_gradient_box(&p, &q, &lo, &hi);
            for i in 0..n {
                assert_abs_diff_eq!(sol.x[i], want[i], epsilon = 2e-3);
            }
        }
    }

    #[test]
    fn solves_are_bitwise_deterministic() {
        let prog = ConicProgram {
            n_vars: 2,
            p_upper: vec![(0, 0, 2.0), (0, 1, 0.4), (1, 1, 2.0)],
            q: vec![-1.0, 0.7],
            a_triplets: vec![(0, 0, -1.0), (1, 1, -1.0)],
            b: vec![0.5, 0.5],
            cones: vec![ConeBlock::NonNeg(2)],
            layout: None,
        };
        let a = solve_conic(&prog, &settings()).unwrap();
        let b = solve_conic(&prog, &settings()).unwrap();
        assert_eq!(a.iterations, b.iterations);
        for (xa, xb) in a.x.iter().zip(&b.x) {
            assert_eq!(xa.to_bits(), xb.to_bits());
        }
    }

    #[test]
    fn warm_started_resolve_terminates_almost_immediately() {
        let params = ScenarioParams {
            n_drones: 2,
            n_waypoints: 6,
            ..ScenarioParams::default()
        };
        let scenario =
            crate::scenario::Scenario::new(CityModel::from_raw(10, vec![0.0; 100]), params)
                .unwrap();
        let refs = init_reference(&scenario);
        let active = ActiveConstraintSet::retain_all(box_constraints(&scenario));
        let prog = assemble_subproblem(&active, &refs, 5.0, 1.0, 2, &scenario).unwrap();
        let (cold, warm) = solve_conic_warm(&prog, &settings(), None).unwrap();
        assert_eq!(cold.status, SolveStatus::Optimal);
        let (hot, _) = solve_conic_warm(&prog, &settings(), Some(&warm)).unwrap();
        assert_eq!(hot.status, SolveStatus::Optimal);
        assert!(
            hot.iterations <= CHECK_INTERVAL,
            "re-solving from the final iterates took {} iterations",
            hot.iterations
        );
        assert_abs_diff_eq!(hot.objective, cold.objective, epsilon = 1e-4);
    }

    #[test]
    fn warm_start_with_wrong_dimensions_is_rejected() {
        let prog = ConicProgram {
            n_vars: 2,
            p_upper: vec![(0, 0, 2.0), (1, 1, 2.0)],
            q: vec![-1.0, 0.7],
            a_triplets: vec![(0, 0, -1.0), (1, 1, -1.0)],
            b: vec![0.5, 0.5],
            cones: vec![ConeBlock::NonNeg(2)],
            layout: None,
        };
        let bad = WarmStart {
            x: vec![0.0; 3],
            s: vec![0.0; 2],
            y: vec![0.0; 2],
            rho_base: RHO0,
        };
        assert!(matches!(
            solve_conic_warm(&prog, &settings(), Some(&bad)),
            Err(SolverError::BadProgram(_))
        ));
    }

    #[test]
    fn remapped_warm_start_follows_row_identity() {
        let obstacle = |t: usize| LinearConstraint {
            kind: ConstraintKind::Obstacle,
            terms: vec![(0, t, 2, -1.0)],
            rhs: -30.0,
            drones: (0, None),
            waypoint: t,
        };
        let pair = LinearConstraint {
            kind: ConstraintKind::Interdrone,
            terms: vec![(0, 2, 0, 1.0), (1, 2, 0, -1.0)],
            rhs: -5.0,
            drones: (0, Some(1)),
            waypoint: 2,
        };
        // Previous subproblem: two obstacle rows and a pair row, one delta
        // row (no trust cap), then a three-entry cone tail.
        let prev_rows = vec![obstacle(0), obstacle(1), pair.clone()];
        let prev = WarmStart {
            x: vec![7.0, 8.0],
            s: vec![1.0, 2.0, 3.0, 4.0, 51.0, 52.0, 53.0],
            y: vec![-1.0, -2.0, -3.0, -4.0, -51.0, -52.0, -53.0],
            rho_base: 0.25,
        };
        // The next one dropped obstacle 0 and gained obstacle 3.
        let rows = vec![obstacle(1), obstacle(3), pair];
        let out = remap_warm_start(&prev_rows, &prev, &rows, false);
        assert_eq!(out.x, prev.x);
        assert_eq!(out.rho_base, prev.rho_base);
        assert_eq!(out.s, vec![2.0, 0.0, 3.0, 4.0, 51.0, 52.0, 53.0]);
        assert_eq!(out.y, vec![-2.0, 0.0, -3.0, -4.0, -51.0, -52.0, -53.0]);
    }

    #[test]
    fn json_round_trip_preserves_the_program() {
        let params = ScenarioParams {
            n_drones: 1,
            n_waypoints: 3,
            ..ScenarioParams::default()
        };
        let scenario =
            crate::scenario::Scenario::new(CityModel::from_raw(10, vec![0.0; 100]), params)
                .unwrap();
        let refs = init_reference(&scenario);
        let active = ActiveConstraintSet::retain_all(box_constraints(&scenario));
        let prog = assemble_subproblem(&active, &refs, 5.0, 1.0, 2, &scenario).unwrap();
        let text = prog.to_json().unwrap();
        let back = ConicProgram::from_json(&text).unwrap();
        assert_eq!(prog, back);
        let sol_a = solve_conic(&prog, &settings()).unwrap();
        let sol_b = solve_conic(&back, &settings()).unwrap();
        for (xa, xb) in sol_a.x.iter().zip(&sol_b.x) {
            assert_eq!(xa.to_bits(), xb.to_bits());
        }
    }

    fn tiny_scenario() -> crate::scenario::Scenario {
        let params = ScenarioParams {
            n_drones: 1,
            n_waypoints: 3,
            ..ScenarioParams::default()
        };
        crate::scenario::Scenario::new(CityModel::from_raw(10, vec![0.0; 100]), params).unwrap()
    }

    #[test]
    fn subproblem_variable_count_matches_the_layout_formula() {
        let scenario = tiny_scenario();
        let layout = VariableLayout {
            n_drones: 1,
            n_waypoints: 3,
        };
        // 9 positions + 1 curvature + 2 lengths + radius.
        assert_eq!(layout.n_vars(), 13);
        let refs = init_reference(&scenario);
        let active = ActiveConstraintSet::retain_all(box_constraints(&scenario));
        let prog = assemble_subproblem(&active, &refs, 5.0, 1.0, 2, &scenario).unwrap();
        assert_eq!(prog.n_vars, 13);
        // 30 box rows + δ bounds, then 1 + 2 + 3 second-order blocks.
        assert_eq!(prog.cones[0], ConeBlock::NonNeg(32));
        assert_eq!(prog.cones.len(), 1 + 1 + 2 + 3);
        assert_eq!(prog.n_rows(), 32 + 6 * 4);
        prog.validate().unwrap();
    }

    #[test]
    fn infinite_cap_removes_trust_rows_but_keeps_the_variable() {
        let scenario = tiny_scenario();
        let refs = init_reference(&scenario);
        let active = ActiveConstraintSet::retain_all(box_constraints(&scenario));
        let prog = assemble_subproblem(&active, &refs, f64::INFINITY, 0.0, 2, &scenario).unwrap();
        assert_eq!(prog.n_vars, 13);
        assert_eq!(prog.cones[0], ConeBlock::NonNeg(31));
        assert_eq!(prog.cones.len(), 1 + 1 + 2);
        assert!(prog.p_upper.is_empty());
        let sol = solve_conic(&prog, &settings()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        // The radius variable is pinned at zero by its nonnegativity row.
        assert_abs_diff_eq!(sol.x[prog.layout.unwrap().delta()], 0.0, epsilon = 1e-6);
    }

    #[test]
    fn zero_radius_weight_leaves_the_quadratic_empty() {
        let scenario = tiny_scenario();
        let refs = init_reference(&scenario);
        let active = ActiveConstraintSet::retain_all(box_constraints(&scenario));
        let prog = assemble_subproblem(&active, &refs, 5.0, 0.0, 2, &scenario).unwrap();
        assert!(prog.p_upper.is_empty());
    }

    #[test]
    fn reference_point_is_subproblem_feasible() {
        // Plug the reference (with exact epigraph values and δ = 0) into
        // Ax + s = b and check s lands in the cone.
        let scenario = tiny_scenario();
        let refs = init_reference(&scenario);
        let p = &scenario.params;
        let mut active = ActiveConstraintSet::retain_all(box_constraints(&scenario));
        for t in 0..p.n_waypoints {
            active.retained.push(
                linearize_obstacle(
                    &scenario.city,
                    refs.at(0, t),
                    0,
                    t,
                    p.d_safe,
                    f64::INFINITY,
                    f64::INFINITY,
                )
                .unwrap(),
            );
        }
        let prog = assemble_subproblem(&active, &refs, 5.0, 1.0, 2, &scenario).unwrap();
        let layout = prog.layout.unwrap();
        let mut x0 = vec![0.0; prog.n_vars];
        for t in 0..p.n_waypoints {
            let r = refs.at(0, t);
            for axis in 0..3 {
                x0[layout.position(0, t, axis)] = r[axis];
            }
        }
        for i in 0..p.n_waypoints - 2 {
            let (a, b, c) = (refs.at(0, i), refs.at(0, i + 1), refs.at(0, i + 2));
            let second: f64 = (0..3)
                .map(|ax| (a[ax] - 2.0 * b[ax] + c[ax]).powi(2))
                .sum::<f64>()
                .sqrt();
            x0[layout.smooth_slack(0, i)] = second;
        }
        for i in 0..p.n_waypoints - 1 {
            x0[layout.length_slack(0, i)] = crate::geom::dist3(refs.at(0, i), refs.at(0, i + 1));
        }

        let a = Csr::from_triplets(prog.n_rows(), prog.n_vars, &prog.a_triplets);
        let mut s = vec![0.0; prog.n_rows()];
        a.matvec(&x0, &mut s);
        for (i, si) in s.iter_mut().enumerate() {
            *si = prog.b[i] - *si;
        }
        let mut off = 0;
        for cone in &prog.cones {
            let dim = cone.dim();
            match cone {
                ConeBlock::NonNeg(_) => {
                    for &si in &s[off..off + dim] {
                        assert!(si >= -1e-9, "nonnegative slack violated: {si}");
                    }
                }
                ConeBlock::Soc(_) => {
                    let head = s[off];
                    let tail: f64 = s[off + 1..off + dim]
                        .iter()
                        .map(|u| u * u)
                        .sum::<f64>()
                        .sqrt();
                    assert!(tail <= head + 1e-9, "cone violated: ‖{tail}‖ > {head}");
                }
                ConeBlock::Zero(_) => {
                    for &si in &s[off..off + dim] {
                        assert!(si.abs() <= 1e-9);
                    }
                }
            }
            off += dim;
        }
    }

    #[test]
    fn assembled_subproblem_solves_within_tolerance() {
        let scenario = tiny_scenario();
        let refs = init_reference(&scenario);
        let p = &scenario.params;
        let mut active = ActiveConstraintSet::retain_all(box_constraints(&scenario));
        for t in 0..p.n_waypoints {
            active.retained.push(
                linearize_obstacle(
                    &scenario.city,
                    refs.at(0, t),
                    0,
                    t,
                    p.d_safe,
                    f64::INFINITY,
                    f64::INFINITY,
                )
                .unwrap(),
            );
        }
        let prog = assemble_subproblem(&active, &refs, 5.0, 1.0, 2, &scenario).unwrap();
        let sol = solve_conic(&prog, &settings()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        let trajs = prog.layout.unwrap().extract_trajectories(&sol.x);
        for row in &active.retained {
            assert!(
                row.violation_at(&trajs) <= 1e-5,
                "retained row violated by {}",
                row.violation_at(&trajs)
            );
        }
        // The radius stays within its cap.
        assert!(sol.x[prog.layout.unwrap().delta()] <= 5.0 + 1e-6);
    }

    #[test]
    fn rejects_malformed_programs() {
        let mut prog = ConicProgram {
            n_vars: 1,
            p_upper: vec![],
            q: vec![0.0],
            a_triplets: vec![(0, 0, 1.0)],
            b: vec![1.0],
            cones: vec![ConeBlock::NonNeg(2)],
            layout: None,
        };
        assert!(matches!(
            solve_conic(&prog, &settings()),
            Err(SolverError::BadProgram(_))
        ));
        prog.cones = vec![ConeBlock::NonNeg(1)];
        prog.q = vec![f64::NAN];
        assert!(solve_conic(&prog, &settings()).is_err());
    }

    #[test]
    fn rejects_bad_settings() {
        let prog = ConicProgram {
            n_vars: 1,
            p_upper: vec![(0, 0, 2.0)],
            q: vec![0.0],
            a_triplets: vec![],
            b: vec![],
            cones: vec![],
            layout: None,
        };
        let mut s = settings();
        s.over_relaxation = 2.5;
        assert!(matches!(
            solve_conic(&prog, &s),
            Err(SolverError::BadSettings(_))
        ));
    }

    proptest! {
        // Projection is idempotent and lands inside the cone.
        #[test]
        fn soc_projection_is_idempotent(v in proptest::collection::vec(-10.0f64..10.0, 1..6)) {
            let mut once = v.clone();
            project_soc(&mut once);
            let head = once[0];
            let tail: f64 = once[1..].iter().map(|u| u * u).sum::<f64>().sqrt();
            prop_assert!(tail <= head + 1e-9);
            let mut twice = once.clone();
            project_soc(&mut twice);
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        // Projection is nonexpansive: ‖Πu − Πv‖ <= ‖u − v‖.
        #[test]
        fn soc_projection_is_nonexpansive(
            u in proptest::collection::vec(-10.0f64..10.0, 4),
            w in proptest::collection::vec(-10.0f64..10.0, 4),
        ) {
            let dist: f64 = u.iter().zip(&w).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let (mut pu, mut pw) = (u.clone(), w.clone());
            project_soc(&mut pu);
            project_soc(&mut pw);
            let pdist: f64 = pu.iter().zip(&pw).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            prop_assert!(pdist <= dist + 1e-9);
        }
    }
}
