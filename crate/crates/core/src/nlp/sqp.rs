use std::time::Instant;

use super::bfgs::DampedBfgs;
use super::step::InertiaControl;
use super::{inf_norm, HessianKind, HessianMode, IterationRecord, NlpProblem, SolveResult, SolveStatus, SolverOptions};
use crate::error::{Error, Result};
use crate::linalg::KktSystem;

/// Scaled-stationarity reference for large multipliers.
const MULTIPLIER_SCALE: f64 = 100.0;
const MIN_ALPHA: f64 = 1e-14;

struct Point {
    x: Vec<f64>,
    f: f64,
    c: Vec<f64>,
}

struct Derivs {
    grad: Vec<f64>,
    jac: Vec<f64>,
}

fn eval_point(problem: &dyn NlpProblem, x: Vec<f64>, scale: f64) -> Result<Point> {
    let f = problem.objective(&x)? * scale;
    let mut c = vec![0.0; problem.num_constraints()];
    problem.constraints(&x, &mut c)?;
    if !f.is_finite() || c.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite objective or constraint".into()));
    }
    Ok(Point { x, f, c })
}

fn eval_derivs(problem: &dyn NlpProblem, x: &[f64], scale: f64, nnz_j: usize) -> Result<Derivs> {
    let mut grad = vec![0.0; x.len()];
    problem.gradient(x, &mut grad)?;
    grad.iter_mut().for_each(|g| *g *= scale);
    let mut jac = vec![0.0; nnz_j];
    problem.jacobian_values(x, &mut jac)?;
    if grad.iter().chain(&jac).any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite gradient or Jacobian".into()));
    }
    Ok(Derivs { grad, jac })
}

/// Lagrangian gradient `∇f + Jᵀλ`.
fn lagrangian_gradient(d: &Derivs, pattern: &[(usize, usize)], lambda: &[f64]) -> Vec<f64> {
    let mut g = d.grad.clone();
    for (&(r, c), v) in pattern.iter().zip(&d.jac) {
        g[c] += v * lambda[r];
    }
    g
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Line-search SQP for `min f(x) s.t. c(x) = 0`.
///
/// Each iteration solves the regularized KKT system for the step and the new
/// multipliers, then backtracks on the ℓ1 merit `f + ρ‖c‖₁`, trying one
/// second-order correction when the full step is rejected. Trial points whose
/// evaluation fails or is non-finite count as rejections. Large objective
/// gradients at the start are scaled down to `max_gradient`; the reported
/// objective and multipliers are in the original scaling.
///
/// A step that needs heavy backtracking raises a proximal term `μI` added to
/// the Hessian for the following iterations; full steps lower it again. This
/// keeps steps bounded along flat directions, such as a scale redundancy
/// between parameters, without moving the stationary points.
pub fn solve(problem: &dyn NlpProblem, x0: &[f64], options: &SolverOptions) -> SolveResult {
    let start = Instant::now();
    let n = problem.num_variables();
    let m = problem.num_constraints();
    let mut result = SolveResult {
        x: x0.to_vec(),
        lambda: vec![0.0; m],
        status: SolveStatus::EvaluationError,
        objective: f64::NAN,
        kkt: f64::INFINITY,
        violation: f64::INFINITY,
        iterations: Vec::new(),
        wall_time: Default::default(),
        error: None,
    };
    let fail = |mut result: SolveResult, e: Error| {
        result.status = SolveStatus::EvaluationError;
        result.error = Some(e);
        result.wall_time = start.elapsed();
        result
    };
    if let Err(e) = options.validate() {
        return fail(result, e);
    }
    if x0.len() != n {
        return fail(result, Error::Dimension(format!("starting point has {} entries, problem has {n}", x0.len())));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return fail(result, Error::Domain("starting point is not finite".into()));
    }
    let mode = match options.hessian {
        Some(HessianMode::GaussNewton) if !problem.supports_hessian(HessianKind::GaussNewton) => {
            return fail(result, Error::Config("problem has no Gauss-Newton Hessian".into()))
        }
        Some(HessianMode::Exact) if !problem.supports_hessian(HessianKind::Exact) => {
            return fail(result, Error::Config("problem has no exact Hessian".into()))
        }
        Some(mode) => mode,
        None if problem.supports_hessian(HessianKind::GaussNewton) => HessianMode::GaussNewton,
        None => HessianMode::DampedBfgs,
    };
    let j_pattern = problem.jacobian_structure();
    let h_pattern = match mode {
        HessianMode::DampedBfgs => DampedBfgs::structure(n),
        _ => problem.hessian_structure(),
    };
    let mut bfgs = (mode == HessianMode::DampedBfgs).then(|| DampedBfgs::new(n));
    let mut kkt = match KktSystem::new(n, m, &h_pattern, &j_pattern, problem.kkt_blocks()) {
        Ok(k) => k,
        Err(e) => return fail(result, e),
    };

    // objective scaling from the starting gradient
    let mut g0 = vec![0.0; n];
    if let Err(e) = problem.gradient(x0, &mut g0) {
        return fail(result, e);
    }
    let g0max = inf_norm(&g0);
    let scale = if g0max.is_finite() && g0max > options.max_gradient { options.max_gradient / g0max } else { 1.0 };

    let mut point = match eval_point(problem, x0.to_vec(), scale) {
        Ok(p) => p,
        Err(e) => return fail(result, e),
    };
    let mut derivs = match eval_derivs(problem, &point.x, scale, j_pattern.len()) {
        Ok(d) => d,
        Err(e) => return fail(result, e),
    };
    let mut lambda = vec![0.0; m];
    let mut rho = 0.0f64;
    let mut control = InertiaControl::new(options.regularization);
    let mut h_values = vec![0.0; h_pattern.len()];
    let mut last_alpha = 0.0;
    let mut last_step = 0.0;
    let mut last_delta = 0.0;
    // proximal term raised after short steps, relaxed after full ones
    let mut prox = 0.0f64;

    let finish = |mut result: SolveResult, status, point: &Point, lambda: &[f64], kkt_val: f64| {
        result.status = status;
        result.objective = point.f / scale;
        result.x = point.x.clone();
        result.lambda = lambda.iter().map(|l| l / scale).collect();
        result.kkt = kkt_val;
        result.violation = inf_norm(&point.c);
        result.wall_time = start.elapsed();
        result
    };

    for iter in 0..=options.max_iter {
        let grad_l = lagrangian_gradient(&derivs, &j_pattern, &lambda);
        let s_d = (l1(&lambda) / (m.max(1) as f64)).max(MULTIPLIER_SCALE) / MULTIPLIER_SCALE;
        let kkt_val = inf_norm(&grad_l) / s_d;
        let violation = inf_norm(&point.c);
        result.iterations.push(IterationRecord {
            iter,
            objective: point.f / scale,
            kkt: kkt_val,
            violation,
            step_norm: last_step,
            alpha: last_alpha,
            regularization: last_delta,
            penalty: rho / scale,
        });
        if kkt_val <= options.kkt_tol && violation <= options.constraint_tol {
            return finish(result, SolveStatus::Converged, &point, &lambda, kkt_val);
        }
        if iter == options.max_iter {
            return finish(result, SolveStatus::MaxIterations, &point, &lambda, kkt_val);
        }

        // Hessian
        let hess = match (&bfgs, mode) {
            (Some(b), _) => {
                b.values(&mut h_values);
                Ok(())
            }
            (None, HessianMode::Exact) => {
                problem.hessian_values(&point.x, scale, &lambda, HessianKind::Exact, &mut h_values)
            }
            (None, _) => problem.hessian_values(&point.x, scale, &lambda, HessianKind::GaussNewton, &mut h_values),
        };
        if let Err(e) = hess {
            return fail(finish(result, SolveStatus::EvaluationError, &point, &lambda, kkt_val), e);
        }
        if h_values.iter().any(|v| !v.is_finite()) {
            let e = Error::Domain("non-finite Hessian".into());
            return fail(finish(result, SolveStatus::EvaluationError, &point, &lambda, kkt_val), e);
        }
        let hmax = inf_norm(&h_values).max(1.0);
        let jmax = inf_norm(&derivs.jac).max(1.0);
        let Some((delta, _)) = control.factor(&mut kkt, &h_values, &derivs.jac, prox, options.regularization * jmax)
        else {
            return finish(result, SolveStatus::LineSearchFailure, &point, &lambda, kkt_val);
        };
        let rhs: Vec<f64> = derivs.grad.iter().chain(&point.c).map(|v| -v).collect();
        let sol = kkt.solve(&rhs);
        if sol.iter().any(|v| !v.is_finite()) {
            return finish(result, SolveStatus::LineSearchFailure, &point, &lambda, kkt_val);
        }
        let d = &sol[..n];
        let lambda_qp = &sol[n..];

        // penalty
        let c1 = l1(&point.c);
        rho = rho.max(2.0 * inf_norm(lambda_qp));
        let gd: f64 = derivs.grad.iter().zip(d).map(|(a, b)| a * b).sum();
        if c1 > 0.0 {
            let dhd = quad_form(&h_pattern, &h_values, d).max(0.0);
            let need = (gd + 0.5 * dhd) / (0.9 * c1);
            if need > rho {
                rho = need * 1.01;
            }
        }
        let merit0 = point.f + rho * c1;
        let dir = gd - rho * c1;
        // merit differences below this are rounding noise
        let noise = 10.0 * f64::EPSILON * merit0.abs();

        // line search
        let mut alpha = 1.0;
        let mut accepted: Option<Point> = None;
        let mut soc_tried = false;
        while alpha >= MIN_ALPHA {
            let trial_x: Vec<f64> = point.x.iter().zip(d).map(|(x, s)| x + alpha * s).collect();
            if let Ok(trial) = eval_point(problem, trial_x, scale) {
                let merit = trial.f + rho * l1(&trial.c);
                if merit <= merit0 + options.sufficient_decrease * alpha * dir + noise {
                    accepted = Some(trial);
                    break;
                }
                if alpha == 1.0 && !soc_tried && m > 0 {
                    soc_tried = true;
                    let mut rhs = vec![0.0; n + m];
                    for (r, v) in rhs[n..].iter_mut().zip(&trial.c) {
                        *r = -v;
                    }
                    let corr = kkt.solve(&rhs);
                    let soc_x: Vec<f64> = trial.x.iter().zip(&corr[..n]).map(|(x, p)| x + p).collect();
                    if let Ok(soc) = eval_point(problem, soc_x, scale) {
                        let merit = soc.f + rho * l1(&soc.c);
                        if merit <= merit0 + options.sufficient_decrease * dir + noise {
                            accepted = Some(soc);
                            break;
                        }
                    }
                }
            }
            alpha *= options.backtrack;
        }
        let Some(next) = accepted else {
            return finish(result, SolveStatus::LineSearchFailure, &point, &lambda, kkt_val);
        };
        let new_lambda: Vec<f64> = lambda.iter().zip(lambda_qp).map(|(l, q)| l + alpha * (q - l)).collect();
        let next_derivs = match eval_derivs(problem, &next.x, scale, j_pattern.len()) {
            Ok(dv) => dv,
            Err(e) => return fail(finish(result, SolveStatus::EvaluationError, &next, &new_lambda, kkt_val), e),
        };
        if let Some(b) = bfgs.as_mut() {
            let s: Vec<f64> = next.x.iter().zip(&point.x).map(|(a, b)| a - b).collect();
            let g_new = lagrangian_gradient(&next_derivs, &j_pattern, &new_lambda);
            let g_old = lagrangian_gradient(&derivs, &j_pattern, &new_lambda);
            let y: Vec<f64> = g_new.iter().zip(&g_old).map(|(a, b)| a - b).collect();
            b.update(&s, &y);
        }
        let prox_floor = options.regularization * hmax;
        if alpha < 0.1 {
            prox = (10.0 * prox).max(prox_floor);
        } else if alpha == 1.0 {
            prox = if prox > prox_floor { prox / 10.0 } else { 0.0 };
        }
        last_step = point.x.iter().zip(&next.x).fold(0.0, |acc, (a, b)| acc.max((a - b).abs()));
        last_alpha = alpha;
        last_delta = delta;
        point = next;
        derivs = next_derivs;
        lambda = new_lambda;
    }
    unreachable!("the loop returns on its last iteration")
}

/// `dᵀ H d` from one stored triangle.
fn quad_form(pattern: &[(usize, usize)], values: &[f64], d: &[f64]) -> f64 {
    pattern.iter().zip(values).map(|(&(r, c), v)| if r == c { v * d[r] * d[r] } else { 2.0 * v * d[r] * d[c] }).sum()
}

#[cfg(test)]
mod tests {
    use super::super::test_problems::*;
    use super::super::{kkt_residual, HessianMode, SolveStatus, SolverOptions};
    use super::*;

    #[test]
    fn unconstrained_quadratic() {
        let r = solve(&Quadratic1, &[0.0], &SolverOptions::default());
        assert_eq!(r.status, SolveStatus::Converged);
        assert!((r.x[0] - 1.0).abs() <= 1e-8);
    }

    #[test]
    fn equality_qp() {
        let r = solve(&EqualityQp { scale: 1.0 }, &[0.0, 0.0], &SolverOptions::default());
        assert_eq!(r.status, SolveStatus::Converged);
        assert!((r.x[0] - 0.5).abs() < 1e-10 && (r.x[1] - 0.5).abs() < 1e-10);
        assert!((r.lambda[0] + 1.0).abs() < 1e-10);
        let (s, v) = kkt_residual(&EqualityQp { scale: 1.0 }, &r.x, &r.lambda).unwrap();
        assert!(s < 1e-10 && v < 1e-10);
    }

    #[test]
    fn circle_rosenbrock() {
        let opts = SolverOptions { hessian: Some(HessianMode::Exact), ..Default::default() };
        let r = solve(&CircleRosenbrock, &[0.5, 0.5], &opts);
        assert_eq!(r.status, SolveStatus::Converged, "{:?}", r.iterations);
        // oracle: grid search on the unit circle, then golden-section polish
        let f = |t: f64| {
            let (x, y) = (t.cos(), t.sin());
            (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2)
        };
        let mut best = 0.0;
        for k in 0..100_000 {
            let t = k as f64 * std::f64::consts::TAU / 100_000.0;
            if f(t) < f(best) {
                best = t;
            }
        }
        let (mut a, mut b) = (best - 1e-4, best + 1e-4);
        let gr = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let c = b - gr * (b - a);
            let d = a + gr * (b - a);
            if f(c) < f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let t = 0.5 * (a + b);
        assert!((r.x[0] - t.cos()).abs() < 1e-6 && (r.x[1] - t.sin()).abs() < 1e-6);
        assert!((r.x[0] - 0.7864).abs() < 1e-4 && (r.x[1] - 0.6177).abs() < 1e-4);
    }

    #[test]
    fn bfgs_solves_rosenbrock_on_circle() {
        let opts = SolverOptions { hessian: Some(HessianMode::DampedBfgs), max_iter: 500, ..Default::default() };
        let r = solve(&CircleRosenbrock, &[0.5, 0.5], &opts);
        assert_eq!(r.status, SolveStatus::Converged);
        assert!((r.x[0] - 0.7864).abs() < 1e-4);
    }

    #[test]
    fn objective_scaling_leaves_argmin() {
        let a = solve(&EqualityQp { scale: 1.0 }, &[3.0, -1.0], &SolverOptions::default());
        let b = solve(&EqualityQp { scale: 1e6 }, &[3.0, -1.0], &SolverOptions::default());
        assert!(a.converged() && b.converged());
        for i in 0..2 {
            assert!((a.x[i] - b.x[i]).abs() < 1e-5);
        }
        assert!((b.lambda[0] + 1e6).abs() < 1e-3);
    }

    #[test]
    fn merit_decreases_on_accepted_steps() {
        let opts = SolverOptions { hessian: Some(HessianMode::Exact), ..Default::default() };
        let r = solve(&CircleRosenbrock, &[-0.3, 1.5], &opts);
        assert!(r.converged());
        assert!(r.iterations.len() > 2);
        // one constraint, so the max-norm violation is also the ℓ1 norm
        for w in r.iterations.windows(2) {
            let rho = w[1].penalty;
            assert!(w[1].objective + rho * w[1].violation < w[0].objective + rho * w[0].violation);
        }
    }

    #[test]
    fn bad_start_reports_error() {
        let r = solve(&Quadratic1, &[f64::NAN], &SolverOptions::default());
        assert_eq!(r.status, SolveStatus::EvaluationError);
        assert!(r.error.is_some());
    }
}
