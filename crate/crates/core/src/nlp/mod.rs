//! Equality-constrained nonlinear programming.
//!
//! Problems implement [`NlpProblem`]: minimize `f(x)` subject to `c(x) = 0`,
//! with a sparse constraint Jacobian and an optional sparse Hessian of the
//! Lagrangian `L = f + λᵀc`. [`solve`] runs a line-search SQP method with an
//! ℓ1 merit function.

mod bfgs;
mod sqp;
mod step;

use std::time::Duration;

use crate::error::{Error, Result};
use crate::linalg::KktBlock;

pub use sqp::solve;
pub use step::{solve_kkt_step, KktStep};

/// Which Lagrangian Hessian a problem is asked for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HessianKind {
    /// Positive-semidefinite objective curvature only.
    GaussNewton,
    /// Full second derivatives, including constraint curvature.
    Exact,
}

/// Hessian strategy used by the solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HessianMode {
    GaussNewton,
    Exact,
    DampedBfgs,
}

impl std::str::FromStr for HessianMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gauss-newton" => Ok(HessianMode::GaussNewton),
            "exact" => Ok(HessianMode::Exact),
            "damped-bfgs" => Ok(HessianMode::DampedBfgs),
            other => Err(Error::Config(format!("unknown hessian mode `{other}`"))),
        }
    }
}

/// An equality-constrained NLP. Structures are fixed for the lifetime of
/// the problem; Hessian structure entries are lower-triangle `(row >= col)`.
pub trait NlpProblem: Sync {
    fn num_variables(&self) -> usize;

    fn num_constraints(&self) -> usize;

    fn objective(&self, x: &[f64]) -> Result<f64>;

    fn gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<()>;

    fn constraints(&self, _x: &[f64], _c: &mut [f64]) -> Result<()> {
        Ok(())
    }

    /// `(constraint, variable)` pairs of the Jacobian pattern.
    fn jacobian_structure(&self) -> Vec<(usize, usize)> {
        Vec::new()
    }

    /// Values in the order of [`jacobian_structure`](Self::jacobian_structure).
    fn jacobian_values(&self, _x: &[f64], _values: &mut [f64]) -> Result<()> {
        Ok(())
    }

    fn supports_hessian(&self, _kind: HessianKind) -> bool {
        false
    }

    fn hessian_structure(&self) -> Vec<(usize, usize)> {
        Vec::new()
    }

    /// Hessian of `obj_factor·f + Σ λ_i c_i` (for [`HessianKind::Exact`]) or
    /// its positive-semidefinite objective part (for Gauss–Newton, where
    /// `lambda` is ignored).
    fn hessian_values(
        &self,
        _x: &[f64],
        _obj_factor: f64,
        _lambda: &[f64],
        _kind: HessianKind,
        _values: &mut [f64],
    ) -> Result<()> {
        Err(Error::Config("problem provides no Hessian".into()))
    }

    /// Optional pivot blocks for the KKT factorization.
    fn kkt_blocks(&self) -> Option<Vec<KktBlock>> {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Stationarity tolerance (on the internally scaled problem).
    pub kkt_tol: f64,
    /// Max-norm constraint violation tolerance.
    pub constraint_tol: f64,
    pub max_iter: usize,
    /// `None` picks Gauss–Newton when the problem supports it, else BFGS.
    pub hessian: Option<HessianMode>,
    /// Smallest primal regularization tried during inertia correction.
    pub regularization: f64,
    pub backtrack: f64,
    pub sufficient_decrease: f64,
    /// Objective gradients larger than this at the starting point are scaled down to it.
    pub max_gradient: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            kkt_tol: 1e-6,
            constraint_tol: 1e-8,
            max_iter: 200,
            hessian: None,
            regularization: 1e-8,
            backtrack: 0.5,
            sufficient_decrease: 1e-4,
            max_gradient: 100.0,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("kkt_tol", self.kkt_tol),
            ("constraint_tol", self.constraint_tol),
            ("regularization", self.regularization),
            ("sufficient_decrease", self.sufficient_decrease),
            ("max_gradient", self.max_gradient),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("solver option {name} must be positive, got {v}")));
            }
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::Config(format!("backtracking factor must lie in (0, 1), got {}", self.backtrack)));
        }
        if self.sufficient_decrease >= 0.5 {
            return Err(Error::Config("sufficient-decrease constant must be below 0.5".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    LineSearchFailure,
    EvaluationError,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIterations => "max-iter",
            SolveStatus::LineSearchFailure => "line-search-failure",
            SolveStatus::EvaluationError => "evaluation-error",
        })
    }
}

impl std::str::FromStr for SolveStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "converged" => Ok(SolveStatus::Converged),
            "max-iter" => Ok(SolveStatus::MaxIterations),
            "line-search-failure" => Ok(SolveStatus::LineSearchFailure),
            "evaluation-error" => Ok(SolveStatus::EvaluationError),
            other => Err(Error::Config(format!("unknown solve status `{other}`"))),
        }
    }
}

/// One line of the iteration log. `kkt` is the scaled stationarity measure
/// used for termination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub objective: f64,
    pub kkt: f64,
    pub violation: f64,
    pub step_norm: f64,
    pub alpha: f64,
    pub regularization: f64,
    pub penalty: f64,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub status: SolveStatus,
    pub objective: f64,
    /// Scaled stationarity at `x` (the termination measure).
    pub kkt: f64,
    pub violation: f64,
    pub iterations: Vec<IterationRecord>,
    pub wall_time: Duration,
    /// The failure behind [`SolveStatus::EvaluationError`].
    pub error: Option<Error>,
}

impl SolveResult {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

/// `(‖∇f + Jᵀλ‖∞, ‖c‖∞)` at `(x, λ)`.
pub fn kkt_residual(problem: &dyn NlpProblem, x: &[f64], lambda: &[f64]) -> Result<(f64, f64)> {
    let n = problem.num_variables();
    let m = problem.num_constraints();
    if x.len() != n || lambda.len() != m {
        return Err(Error::Dimension(format!(
            "expected {n} variables and {m} multipliers, got {} and {}",
            x.len(),
            lambda.len()
        )));
    }
    let mut g = vec![0.0; n];
    problem.gradient(x, &mut g)?;
    let mut c = vec![0.0; m];
    problem.constraints(x, &mut c)?;
    let pattern = problem.jacobian_structure();
    let mut jv = vec![0.0; pattern.len()];
    problem.jacobian_values(x, &mut jv)?;
    for (&(r, col), v) in pattern.iter().zip(&jv) {
        g[col] += v * lambda[r];
    }
    Ok((inf_norm(&g), inf_norm(&c)))
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[cfg(test)]
pub(crate) mod test_problems {
    use super::*;

    /// minimize (x − 1)²
    pub struct Quadratic1;

    impl NlpProblem for Quadratic1 {
        fn num_variables(&self) -> usize {
            1
        }
        fn num_constraints(&self) -> usize {
            0
        }
        fn objective(&self, x: &[f64]) -> Result<f64> {
            Ok((x[0] - 1.0).powi(2))
        }
        fn gradient(&self, x: &[f64], g: &mut [f64]) -> Result<()> {
            g[0] = 2.0 * (x[0] - 1.0);
            Ok(())
        }
        fn supports_hessian(&self, _: HessianKind) -> bool {
            true
        }
        fn hessian_structure(&self) -> Vec<(usize, usize)> {
            vec![(0, 0)]
        }
        fn hessian_values(&self, _: &[f64], s: f64, _: &[f64], _: HessianKind, v: &mut [f64]) -> Result<()> {
            v[0] = 2.0 * s;
            Ok(())
        }
    }

    /// minimize a·(x² + y²) s.t. x + y = 1
    pub struct EqualityQp {
        pub scale: f64,
    }

    impl NlpProblem for EqualityQp {
        fn num_variables(&self) -> usize {
            2
        }
        fn num_constraints(&self) -> usize {
            1
        }
        fn objective(&self, x: &[f64]) -> Result<f64> {
            Ok(self.scale * (x[0] * x[0] + x[1] * x[1]))
        }
        fn gradient(&self, x: &[f64], g: &mut [f64]) -> Result<()> {
            g[0] = 2.0 * self.scale * x[0];
            g[1] = 2.0 * self.scale * x[1];
            Ok(())
        }
        fn constraints(&self, x: &[f64], c: &mut [f64]) -> Result<()> {
            c[0] = x[0] + x[1] - 1.0;
            Ok(())
        }
        fn jacobian_structure(&self) -> Vec<(usize, usize)> {
            vec![(0, 0), (0, 1)]
        }
        fn jacobian_values(&self, _: &[f64], v: &mut [f64]) -> Result<()> {
            v[0] = 1.0;
            v[1] = 1.0;
            Ok(())
        }
        fn supports_hessian(&self, _: HessianKind) -> bool {
            true
        }
        fn hessian_structure(&self) -> Vec<(usize, usize)> {
            vec![(0, 0), (1, 1)]
        }
        fn hessian_values(&self, _: &[f64], s: f64, _: &[f64], _: HessianKind, v: &mut [f64]) -> Result<()> {
            v[0] = 2.0 * self.scale * s;
            v[1] = 2.0 * self.scale * s;
            Ok(())
        }
    }

    /// minimize (1 − x)² + 100(y − x²)² s.t. x² + y² = 1
    pub struct CircleRosenbrock;

    impl NlpProblem for CircleRosenbrock {
        fn num_variables(&self) -> usize {
            2
        }
        fn num_constraints(&self) -> usize {
            1
        }
        fn objective(&self, x: &[f64]) -> Result<f64> {
            Ok((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2))
        }
        fn gradient(&self, x: &[f64], g: &mut [f64]) -> Result<()> {
            let r = x[1] - x[0] * x[0];
            g[0] = -2.0 * (1.0 - x[0]) - 400.0 * x[0] * r;
            g[1] = 200.0 * r;
            Ok(())
        }
        fn constraints(&self, x: &[f64], c: &mut [f64]) -> Result<()> {
            c[0] = x[0] * x[0] + x[1] * x[1] - 1.0;
            Ok(())
        }
        fn jacobian_structure(&self) -> Vec<(usize, usize)> {
            vec![(0, 0), (0, 1)]
        }
        fn jacobian_values(&self, x: &[f64], v: &mut [f64]) -> Result<()> {
            v[0] = 2.0 * x[0];
            v[1] = 2.0 * x[1];
            Ok(())
        }
        fn supports_hessian(&self, kind: HessianKind) -> bool {
            kind == HessianKind::Exact
        }
        fn hessian_structure(&self) -> Vec<(usize, usize)> {
            vec![(0, 0), (1, 0), (1, 1)]
        }
        fn hessian_values(&self, x: &[f64], s: f64, l: &[f64], _: HessianKind, v: &mut [f64]) -> Result<()> {
            v[0] = s * (2.0 - 400.0 * (x[1] - x[0] * x[0]) + 800.0 * x[0] * x[0]) + 2.0 * l[0];
            v[1] = s * (-400.0 * x[0]);
            v[2] = s * 200.0 + 2.0 * l[0];
            Ok(())
        }
    }
}
