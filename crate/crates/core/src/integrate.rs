//! Fixed-step explicit integrators with forward sensitivities.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{DynamicalModel, InputSignal};

/// States beyond this magnitude are treated as diverged.
const DIVERGENCE_LIMIT: f64 = 1e100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrator {
    Euler,
    Rk4,
}

impl std::str::FromStr for Integrator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Integrator::Euler),
            "rk4" => Ok(Integrator::Rk4),
            other => Err(Error::Config(format!("unknown integrator `{other}` (expected euler or rk4)"))),
        }
    }
}

impl std::fmt::Display for Integrator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Integrator::Euler => "euler",
            Integrator::Rk4 => "rk4",
        })
    }
}

fn diverged(x: &[f64]) -> bool {
    x.iter().any(|v| !(v.abs() < DIVERGENCE_LIMIT))
}

/// One step of length `h` from `(t, x)`. Returns `Error::Divergence` (with
/// segment 0) when the new state is not finite.
pub fn integrate_step(
    model: &dyn DynamicalModel,
    method: Integrator,
    input: &InputSignal,
    t: f64,
    h: f64,
    x: &[f64],
    p: &[f64],
) -> Result<Vec<f64>> {
    let nx = x.len();
    let mut u = vec![0.0; input.nu()];
    let mut k1 = vec![0.0; nx];
    input.interpolate_into(t, &mut u)?;
    model.dynamics(x, &u, p, &mut k1)?;
    let out: Vec<f64> = match method {
        Integrator::Euler => x.iter().zip(&k1).map(|(x, k)| x + h * k).collect(),
        Integrator::Rk4 => {
            let mut k2 = vec![0.0; nx];
            let mut k3 = vec![0.0; nx];
            let mut k4 = vec![0.0; nx];
            let mut xt = vec![0.0; nx];
            input.interpolate_into(t + 0.5 * h, &mut u)?;
            axpy(x, 0.5 * h, &k1, &mut xt);
            model.dynamics(&xt, &u, p, &mut k2)?;
            axpy(x, 0.5 * h, &k2, &mut xt);
            model.dynamics(&xt, &u, p, &mut k3)?;
            input.interpolate_into(t + h, &mut u)?;
            axpy(x, h, &k3, &mut xt);
            model.dynamics(&xt, &u, p, &mut k4)?;
            (0..nx).map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect()
        }
    };
    if diverged(&out) {
        return Err(Error::Divergence { time: t + h, segment: 0 });
    }
    Ok(out)
}

fn axpy(x: &[f64], a: f64, k: &[f64], out: &mut [f64]) {
    for i in 0..x.len() {
        out[i] = x[i] + a * k[i];
    }
}

/// Integrates from `x0` at `times[0]` and returns the state at every entry of
/// `times`, taking `substeps` equal steps per interval.
pub fn propagate(
    model: &dyn DynamicalModel,
    method: Integrator,
    input: &InputSignal,
    times: &[f64],
    substeps: usize,
    x0: &[f64],
    p: &[f64],
) -> Result<Vec<Vec<f64>>> {
    if substeps == 0 {
        return Err(Error::Domain("at least one integration substep is required".into()));
    }
    let mut states = Vec::with_capacity(times.len());
    let mut x = x0.to_vec();
    if diverged(&x) {
        return Err(Error::Divergence { time: times[0], segment: 0 });
    }
    states.push(x.clone());
    for w in times.windows(2) {
        let h = (w[1] - w[0]) / substeps as f64;
        for s in 0..substeps {
            x = integrate_step(model, method, input, w[0] + s as f64 * h, h, &x, p)?;
        }
        states.push(x.clone());
    }
    Ok(states)
}

/// State and its sensitivity `∂x/∂v`, `v = [θ, x_start]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityState {
    pub x: Vec<f64>,
    /// nx × (np + nx).
    pub s: DMatrix<f64>,
}

impl SensitivityState {
    /// Sensitivity seeded with the identity on the start-state columns.
    pub fn seed(x0: Vec<f64>, np: usize) -> Self {
        let nx = x0.len();
        let mut s = DMatrix::zeros(nx, np + nx);
        for i in 0..nx {
            s[(i, np + i)] = 1.0;
        }
        SensitivityState { x: x0, s }
    }
}

/// Scratch buffers for [`step_sensitivity`].
pub struct SensitivityWork {
    u: Vec<f64>,
    fx: DMatrix<f64>,
    fp: DMatrix<f64>,
    k: [Vec<f64>; 4],
    dk: [DMatrix<f64>; 4],
    xt: Vec<f64>,
    st: DMatrix<f64>,
}

impl SensitivityWork {
    pub fn new(nx: usize, np: usize, nu: usize) -> Self {
        let z = || DMatrix::zeros(nx, np + nx);
        SensitivityWork {
            u: vec![0.0; nu],
            fx: DMatrix::zeros(nx, nx),
            fp: DMatrix::zeros(nx, np),
            k: [vec![0.0; nx], vec![0.0; nx], vec![0.0; nx], vec![0.0; nx]],
            dk: [z(), z(), z(), z()],
            xt: vec![0.0; nx],
            st: z(),
        }
    }
}

/// `k = f(x)`, `dk = f_x S + [f_θ 0]`.
#[allow(clippy::too_many_arguments)]
fn stage(
    model: &dyn DynamicalModel,
    x: &[f64],
    s: &DMatrix<f64>,
    u: &[f64],
    p: &[f64],
    fx: &mut DMatrix<f64>,
    fp: &mut DMatrix<f64>,
    k: &mut [f64],
    dk: &mut DMatrix<f64>,
) -> Result<()> {
    let np = p.len();
    model.dynamics(x, u, p, k)?;
    model.dynamics_jacobian(x, u, p, fx, fp)?;
    dk.gemm(1.0, fx, s, 0.0);
    let mut cols = dk.columns_mut(0, np);
    cols += &*fp;
    Ok(())
}

/// Advances state and sensitivity by one step (the discrete sensitivity of
/// the integration rule itself, so gradients are exact for the discretized
/// problem).
pub fn step_sensitivity(
    model: &dyn DynamicalModel,
    method: Integrator,
    input: &InputSignal,
    t: f64,
    h: f64,
    p: &[f64],
    state: &mut SensitivityState,
    w: &mut SensitivityWork,
) -> Result<()> {
    let nx = state.x.len();
    input.interpolate_into(t, &mut w.u)?;
    let [k1, k2, k3, k4] = &mut w.k;
    let [d1, d2, d3, d4] = &mut w.dk;
    stage(model, &state.x, &state.s, &w.u, p, &mut w.fx, &mut w.fp, k1, d1)?;
    match method {
        Integrator::Euler => {
            for i in 0..nx {
                state.x[i] += h * k1[i];
            }
            state.s += &*d1 * h;
        }
        Integrator::Rk4 => {
            input.interpolate_into(t + 0.5 * h, &mut w.u)?;
            axpy(&state.x, 0.5 * h, k1, &mut w.xt);
            w.st.copy_from(&state.s);
            w.st += &*d1 * (0.5 * h);
            stage(model, &w.xt, &w.st, &w.u, p, &mut w.fx, &mut w.fp, k2, d2)?;
            axpy(&state.x, 0.5 * h, k2, &mut w.xt);
            w.st.copy_from(&state.s);
            w.st += &*d2 * (0.5 * h);
            stage(model, &w.xt, &w.st, &w.u, p, &mut w.fx, &mut w.fp, k3, d3)?;
            input.interpolate_into(t + h, &mut w.u)?;
            axpy(&state.x, h, k3, &mut w.xt);
            w.st.copy_from(&state.s);
            w.st += &*d3 * h;
            stage(model, &w.xt, &w.st, &w.u, p, &mut w.fx, &mut w.fp, k4, d4)?;
            for i in 0..nx {
                state.x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            state.s += (&*d1 + &*d2 * 2.0 + &*d3 * 2.0 + &*d4) * (h / 6.0);
        }
    }
    if diverged(&state.x) || state.s.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence { time: t + h, segment: 0 });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDims;

    /// ẋ = a·x + b·u
    pub struct Scalar;

    impl DynamicalModel for Scalar {
        fn dims(&self) -> ModelDims {
            ModelDims { nx: 1, ny: 1, nu: 1, np: 2 }
        }
        fn param_names(&self) -> Vec<String> {
            vec!["a".into(), "b".into()]
        }
        fn dynamics(&self, x: &[f64], u: &[f64], p: &[f64], out: &mut [f64]) -> Result<()> {
            out[0] = p[0] * x[0] + p[1] * u[0];
            Ok(())
        }
        fn output(&self, x: &[f64], _: &[f64], _: &[f64], out: &mut [f64]) -> Result<()> {
            out[0] = x[0];
            Ok(())
        }
    }

    fn zero_input() -> InputSignal {
        InputSignal::new(vec![0.0, 100.0], DMatrix::zeros(2, 1)).unwrap()
    }

    #[test]
    fn euler_and_rk4_steps() {
        let u = zero_input();
        let p = [-1.0, 0.0];
        let e = integrate_step(&Scalar, Integrator::Euler, &u, 0.0, 0.1, &[1.0], &p).unwrap();
        assert!((e[0] - 0.9).abs() < 1e-15);
        let r = integrate_step(&Scalar, Integrator::Rk4, &u, 0.0, 0.1, &[1.0], &p).unwrap();
        // 1 − h + h²/2 − h³/6 + h⁴/24
        let h: f64 = 0.1;
        let oracle = 1.0 - h + h * h / 2.0 - h.powi(3) / 6.0 + h.powi(4) / 24.0;
        assert!((r[0] - oracle).abs() < 1e-15);
        assert!((r[0] - 0.904_837_5).abs() < 1e-7);
    }

    #[test]
    fn divergence_reports_time() {
        let u = zero_input();
        let times: Vec<f64> = (0..=100).map(|k| k as f64).collect();
        match propagate(&Scalar, Integrator::Rk4, &u, &times, 1, &[1.0], &[300.0, 0.0]) {
            Err(Error::Divergence { time, .. }) => assert!(time > 0.0 && time < 100.0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn sensitivities_match_finite_differences() {
        let u = InputSignal::new(vec![0.0, 1.0, 2.0], DMatrix::from_column_slice(3, 1, &[0.0, 1.0, -1.0])).unwrap();
        for method in [Integrator::Euler, Integrator::Rk4] {
            let p = [-0.7, 2.0];
            let x0 = 0.3;
            let run = |p: &[f64], x0: f64| {
                let mut st = SensitivityState::seed(vec![x0], 2);
                let mut w = SensitivityWork::new(1, 2, 1);
                for k in 0..20 {
                    step_sensitivity(&Scalar, method, &u, k as f64 * 0.1, 0.1, p, &mut st, &mut w).unwrap();
                }
                st
            };
            let st = run(&p, x0);
            let h = 1e-6;
            let fd_a = (run(&[p[0] + h, p[1]], x0).x[0] - run(&[p[0] - h, p[1]], x0).x[0]) / (2.0 * h);
            let fd_b = (run(&[p[0], p[1] + h], x0).x[0] - run(&[p[0], p[1] - h], x0).x[0]) / (2.0 * h);
            let fd_x = (run(&p, x0 + h).x[0] - run(&p, x0 - h).x[0]) / (2.0 * h);
            assert!((st.s[(0, 0)] - fd_a).abs() < 1e-8);
            assert!((st.s[(0, 1)] - fd_b).abs() < 1e-8);
            assert!((st.s[(0, 2)] - fd_x).abs() < 1e-8);
            let plain = propagate(&Scalar, method, &u, &[0.0, 2.0], 20, &[x0], &p).unwrap();
            assert!((plain[1][0] - st.x[0]).abs() < 1e-14);
        }
    }

    #[test]
    fn parse_names() {
        assert_eq!("rk4".parse::<Integrator>().unwrap(), Integrator::Rk4);
        assert!("rk45".parse::<Integrator>().is_err());
    }
}
