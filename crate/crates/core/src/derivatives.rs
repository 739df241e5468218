//! Finite-difference Jacobians and a checker that compares a problem's
//! analytic gradient and constraint Jacobian against central differences.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nlp::NlpProblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdScheme {
    Forward,
    Central,
}

impl FdScheme {
    pub fn default_step(self) -> f64 {
        match self {
            FdScheme::Forward => 1e-7,
            FdScheme::Central => 1e-6,
        }
    }
}

/// Jacobian of `f` at `x`, one column per coordinate, with step
/// `h_i = step_scale · max(1, |x_i|)`. Columns are evaluated in parallel.
pub fn fd_jacobian<F>(f: F, x: &[f64], scheme: FdScheme, step_scale: Option<f64>) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    let scale = step_scale.unwrap_or_else(|| scheme.default_step());
    if !(scale > 0.0) {
        return Err(Error::Domain(format!("finite-difference step scale must be positive, got {scale}")));
    }
    let finite = |v: Vec<f64>, column: usize| -> Result<Vec<f64>> {
        if v.iter().all(|e| e.is_finite()) {
            Ok(v)
        } else {
            Err(Error::FiniteDifference { column })
        }
    };
    let base = match scheme {
        FdScheme::Forward => Some(finite(f(x).map_err(|_| Error::FiniteDifference { column: 0 })?, 0)?),
        FdScheme::Central => None,
    };
    let columns: Vec<Vec<f64>> = (0..x.len())
        .into_par_iter()
        .map(|i| {
            let h = scale * x[i].abs().max(1.0);
            let eval = |delta: f64| -> Result<Vec<f64>> {
                let mut xp = x.to_vec();
                xp[i] += delta;
                let v = f(&xp).map_err(|_| Error::FiniteDifference { column: i })?;
                finite(v, i)
            };
            let plus = eval(h)?;
            match &base {
                Some(f0) => Ok(plus.iter().zip(f0).map(|(a, b)| (a - b) / h).collect()),
                None => {
                    let minus = eval(-h)?;
                    Ok(plus.iter().zip(&minus).map(|(a, b)| (a - b) / (2.0 * h)).collect())
                }
            }
        })
        .collect::<Result<_>>()?;
    let m = columns.first().map_or(0, Vec::len);
    if columns.iter().any(|c| c.len() != m) {
        return Err(Error::Dimension("function output length changed between evaluations".into()));
    }
    Ok(DMatrix::from_fn(m, x.len(), |r, c| columns[c][r]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeKind {
    Gradient,
    Jacobian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeEntry {
    pub kind: DerivativeKind,
    /// Constraint row; 0 for gradient entries.
    pub row: usize,
    pub col: usize,
    pub supplied: f64,
    pub finite_difference: f64,
    /// `|supplied − fd| / max(1, |fd|)`.
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeReport {
    pub entries: Vec<DerivativeEntry>,
    pub max_error: f64,
    /// Entries above the threshold, worst first.
    pub failures: Vec<DerivativeEntry>,
    pub threshold: f64,
    /// Largest finite-difference magnitude at a Jacobian position outside
    /// the declared sparsity pattern.
    pub off_pattern_max: f64,
}

impl DerivativeReport {
    pub fn passed(&self) -> bool {
        self.max_error <= self.threshold
    }

    /// Plain-text table of the worst `limit` entries.
    pub fn render(&self, limit: usize) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "checked {} entries, max relative error {:.3e} (threshold {:.1e}): {}",
            self.entries.len(),
            self.max_error,
            self.threshold,
            if self.passed() { "pass" } else { "FAIL" }
        );
        let _ = writeln!(out, "largest off-pattern magnitude {:.3e}", self.off_pattern_max);
        let mut worst: Vec<&DerivativeEntry> = self.entries.iter().collect();
        worst.sort_by(|a, b| b.error.total_cmp(&a.error));
        let _ = writeln!(
            out,
            "{:<9} {:>7} {:>7} {:>24} {:>24} {:>11}",
            "kind", "row", "col", "supplied", "finite-diff", "rel-error"
        );
        for e in worst.into_iter().take(limit) {
            let kind = match e.kind {
                DerivativeKind::Gradient => "gradient",
                DerivativeKind::Jacobian => "jacobian",
            };
            let _ = writeln!(
                out,
                "{:<9} {:>7} {:>7} {:>24.16e} {:>24.16e} {:>11.3e}",
                kind, e.row, e.col, e.supplied, e.finite_difference, e.error
            );
        }
        out
    }
}

fn relative_error(supplied: f64, fd: f64) -> f64 {
    (supplied - fd).abs() / fd.abs().max(1.0)
}

/// Compares the gradient and constraint Jacobian callbacks with central
/// differences at `x`. Jacobian positions outside the declared pattern count
/// as supplied zeros, so a pattern that misses a true nonzero fails too.
pub fn check_problem_derivatives(problem: &dyn NlpProblem, x: &[f64], threshold: f64) -> Result<DerivativeReport> {
    let n = problem.num_variables();
    let m = problem.num_constraints();
    if x.len() != n {
        return Err(Error::Dimension(format!("point has {} entries, problem has {n} variables", x.len())));
    }
    let mut entries = Vec::new();

    let mut grad = vec![0.0; n];
    problem.gradient(x, &mut grad)?;
    let fd_grad = fd_jacobian(|v| Ok(vec![problem.objective(v)?]), x, FdScheme::Central, None)?;
    for (col, &g) in grad.iter().enumerate() {
        let fd = fd_grad[(0, col)];
        entries.push(DerivativeEntry {
            kind: DerivativeKind::Gradient,
            row: 0,
            col,
            supplied: g,
            finite_difference: fd,
            error: relative_error(g, fd),
        });
    }

    let mut off_pattern_max: f64 = 0.0;
    if m > 0 {
        let pattern = problem.jacobian_structure();
        let mut values = vec![0.0; pattern.len()];
        problem.jacobian_values(x, &mut values)?;
        let mut supplied = DMatrix::zeros(m, n);
        let mut declared = DMatrix::from_element(m, n, false);
        for (&(r, c), &v) in pattern.iter().zip(&values) {
            supplied[(r, c)] += v;
            declared[(r, c)] = true;
        }
        let fd_jac = fd_jacobian(
            |v| {
                let mut c = vec![0.0; m];
                problem.constraints(v, &mut c)?;
                Ok(c)
            },
            x,
            FdScheme::Central,
            None,
        )?;
        for col in 0..n {
            for row in 0..m {
                let fd = fd_jac[(row, col)];
                if !declared[(row, col)] {
                    off_pattern_max = off_pattern_max.max(fd.abs());
                    if fd == 0.0 {
                        continue;
                    }
                }
                let s = supplied[(row, col)];
                entries.push(DerivativeEntry {
                    kind: DerivativeKind::Jacobian,
                    row,
                    col,
                    supplied: s,
                    finite_difference: fd,
                    error: relative_error(s, fd),
                });
            }
        }
    }

    let max_error = entries.iter().map(|e| e.error).fold(0.0, f64::max);
    let mut failures: Vec<DerivativeEntry> = entries.iter().filter(|e| e.error > threshold).cloned().collect();
    failures.sort_by(|a, b| b.error.total_cmp(&a.error));
    Ok(DerivativeReport { entries, max_error, failures, threshold, off_pattern_max })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nlp::test_problems::{CircleRosenbrock, EqualityQp};
    use approx::assert_abs_diff_eq;

    #[test]
    fn square_central() {
        let j = fd_jacobian(|x| Ok(vec![x[0] * x[0]]), &[3.0], FdScheme::Central, None).unwrap();
        assert_abs_diff_eq!(j[(0, 0)], 6.0, epsilon = 1e-8);
    }

    #[test]
    fn linear_map_recovered() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 3.0, 0.0, -4.0]);
        let f = |x: &[f64]| Ok((&a * nalgebra::DVector::from_column_slice(x)).as_slice().to_vec());
        let j = fd_jacobian(f, &[0.3, -1.2, 2.0], FdScheme::Central, None).unwrap();
        assert!((j - &a).amax() <= 1e-9);
    }

    #[test]
    fn exp_forward_within_taylor_bound() {
        let h: f64 = 1e-7;
        let j = fd_jacobian(|x| Ok(vec![x[0].exp()]), &[0.0], FdScheme::Forward, Some(h)).unwrap();
        // (e^h − 1)/h − 1 ≤ h/2·e^h, plus rounding of order ε/h
        let bound = h / 2.0 * h.exp() + 4.0 * f64::EPSILON / h;
        assert!((j[(0, 0)] - 1.0).abs() <= bound.max(1e-6));
    }

    #[test]
    fn non_finite_names_column() {
        let f = |x: &[f64]| Ok(vec![x[0], 1.0 / (x[1] - 1e-6)]);
        let r = fd_jacobian(f, &[1.0, 0.0], FdScheme::Central, None);
        assert!(matches!(r, Err(Error::FiniteDifference { column: 1 })));
    }

    #[test]
    fn quadratic_problem_is_exact() {
        let r = check_problem_derivatives(&EqualityQp { scale: 1.0 }, &[0.3, -0.8], 1e-5).unwrap();
        assert!(r.passed());
        assert!(r.max_error <= 1e-10, "{}", r.max_error);
        assert_eq!(r.off_pattern_max, 0.0);
    }

    #[test]
    fn nonlinear_problem_passes() {
        let r = check_problem_derivatives(&CircleRosenbrock, &[0.4, -0.7], 1e-5).unwrap();
        assert!(r.passed(), "{}", r.render(5));
    }

    struct Corrupted;

    impl NlpProblem for Corrupted {
        fn num_variables(&self) -> usize {
            2
        }
        fn num_constraints(&self) -> usize {
            2
        }
        fn objective(&self, x: &[f64]) -> Result<f64> {
            CircleRosenbrock.objective(x)
        }
        fn gradient(&self, x: &[f64], g: &mut [f64]) -> Result<()> {
            CircleRosenbrock.gradient(x, g)
        }
        fn constraints(&self, x: &[f64], c: &mut [f64]) -> Result<()> {
            c[0] = x[0] * x[1];
            c[1] = x[1].sin();
            Ok(())
        }
        fn jacobian_structure(&self) -> Vec<(usize, usize)> {
            vec![(0, 0), (0, 1), (1, 1)]
        }
        fn jacobian_values(&self, x: &[f64], v: &mut [f64]) -> Result<()> {
            v[0] = x[1];
            v[1] = x[0] + 1.0;
            v[2] = x[1].cos();
            Ok(())
        }
    }

    #[test]
    fn corrupted_entry_tops_failures() {
        let r = check_problem_derivatives(&Corrupted, &[0.2, 0.9], 1e-5).unwrap();
        assert!(!r.passed());
        let top = &r.failures[0];
        assert_eq!((top.kind, top.row, top.col), (DerivativeKind::Jacobian, 0, 1));
        assert!(r.failures.windows(2).all(|w| w[0].error >= w[1].error));
        assert!(r.entries.iter().all(|e| e.error <= r.max_error));
    }

    struct MissingPattern;

    impl NlpProblem for MissingPattern {
        fn num_variables(&self) -> usize {
            2
        }
        fn num_constraints(&self) -> usize {
            1
        }
        fn objective(&self, _: &[f64]) -> Result<f64> {
            Ok(0.0)
        }
        fn gradient(&self, _: &[f64], g: &mut [f64]) -> Result<()> {
            g.fill(0.0);
            Ok(())
        }
        fn constraints(&self, x: &[f64], c: &mut [f64]) -> Result<()> {
            c[0] = x[0] + 2.0 * x[1];
            Ok(())
        }
        fn jacobian_structure(&self) -> Vec<(usize, usize)> {
            vec![(0, 0)]
        }
        fn jacobian_values(&self, _: &[f64], v: &mut [f64]) -> Result<()> {
            v[0] = 1.0;
            Ok(())
        }
    }

    #[test]
    fn off_pattern_nonzero_detected() {
        let r = check_problem_derivatives(&MissingPattern, &[0.0, 0.0], 1e-5).unwrap();
        assert!((r.off_pattern_max - 2.0).abs() < 1e-8);
        assert!(!r.passed());
    }
}
