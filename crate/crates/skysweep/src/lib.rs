//! Multi-drone coverage trajectory planning over procedurally generated
//! urban height fields.
//!
//! The pipeline: [`city`] generates a gridded obstacle field with a smoothed
//! differentiable surrogate; [`scenario`] carves the arena into per-drone
//! sweep strips and builds initial references; [`convexify`] linearizes the
//! nonconvex clearance and separation constraints around a reference and
//! filters rows that cannot bind inside the current trust region; [`solver`]
//! assembles and solves the resulting quadratic-objective conic subproblem
//! with an internal operator-splitting method; [`planner`] runs the outer
//! trust-region sequential-convexification loop and its ablation variants;
//! [`metrics`] evaluates the resulting trajectories.

pub mod city;
pub mod convexify;
pub mod metrics;
pub mod planner;
pub mod scenario;
pub mod solver;

pub(crate) mod geom {
    //! Small fixed-size vector helpers shared across modules.

    pub fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
        [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
    }

    pub fn norm3(v: [f64; 3]) -> f64 {
        (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
    }

    pub fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
        norm3(sub3(a, b))
    }
}
