use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DynamicalModel, ModelDims};

/// Physical constants of the longitudinal HFB-320 model (SI units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hfb320Constants {
    /// Air density, kg/m³.
    pub rho: f64,
    /// Wing area, m².
    pub wing_area: f64,
    pub mass: f64,
    /// Reference airspeed, m/s.
    pub v_ref: f64,
    /// Thrust incidence angle, rad.
    pub thrust_incidence: f64,
    /// Thrust moment arm, m.
    pub thrust_arm: f64,
    /// Pitch moment of inertia, kg·m².
    pub pitch_inertia: f64,
    /// Mean aerodynamic chord, m.
    pub chord: f64,
    pub gravity: f64,
}

impl Hfb320Constants {
    /// Non-authoritative placeholder values for synthetic studies. They are
    /// of the right order for a light business jet; they are not the values
    /// behind any published flight-test estimate.
    pub fn placeholder() -> Self {
        Hfb320Constants {
            rho: 0.7963,
            wing_area: 30.0,
            mass: 7472.0,
            v_ref: 104.67,
            thrust_incidence: 0.0524,
            thrust_arm: 0.05,
            pitch_inertia: 49889.0,
            chord: 2.45,
            gravity: 9.80665,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rho", self.rho),
            ("wing_area", self.wing_area),
            ("mass", self.mass),
            ("v_ref", self.v_ref),
            ("thrust_arm", self.thrust_arm),
            ("pitch_inertia", self.pitch_inertia),
            ("chord", self.chord),
            ("gravity", self.gravity),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("HFB-320 constant {name} must be positive, got {v}")));
            }
        }
        if !self.thrust_incidence.is_finite() {
            return Err(Error::Config("HFB-320 thrust incidence must be finite".into()));
        }
        Ok(())
    }
}

pub mod param {
    pub const CD0: usize = 0;
    pub const CDV: usize = 1;
    pub const CDA: usize = 2;
    pub const CL0: usize = 3;
    pub const CLV: usize = 4;
    pub const CLA: usize = 5;
    pub const CM0: usize = 6;
    pub const CMV: usize = 7;
    pub const CMA: usize = 8;
    pub const CMQ: usize = 9;
    pub const CMDE: usize = 10;
    pub const BQ: usize = 11;
    pub const BAQ: usize = 12;
    pub const BAX: usize = 13;
    pub const BAZ: usize = 14;
}

const PARAM_NAMES: [&str; 15] = [
    "CD0", "CDV", "CDalpha", "CL0", "CLV", "CLalpha", "Cm0", "CmV", "Cmalpha", "Cmq", "Cmde", "bq", "baq", "bax", "baz",
];

/// Nonlinear longitudinal model of the HFB-320 Hansa Jet.
///
/// States `[V, α, ϑ, q]`, inputs `[δe, T]`, outputs
/// `[V, α, ϑ, q, a_q, a_x, a_z]`. Parameters: eleven aerodynamic
/// coefficients followed by the biases `b_q, b_aq, b_ax, b_az`.
#[derive(Debug, Clone)]
pub struct Hfb320 {
    c: Hfb320Constants,
}

/// Aerodynamic build-up shared by `f`, `g` and their Jacobians.
struct Aero {
    v: f64,
    alpha: f64,
    dv: f64,
    cd: f64,
    cl: f64,
    cm: f64,
    /// ρS/2m
    k: f64,
    /// ρSc̄/2I_y
    km: f64,
}

impl Hfb320 {
    pub fn new(constants: Hfb320Constants) -> Result<Self> {
        constants.validate()?;
        Ok(Hfb320 { c: constants })
    }

    pub fn constants(&self) -> &Hfb320Constants {
        &self.c
    }

    fn aero(&self, x: &[f64], u: &[f64], p: &[f64]) -> Result<Aero> {
        let (v, alpha, q) = (x[0], x[1], x[3]);
        if !(v > 0.0) {
            return Err(Error::Domain(format!("airspeed must be positive, got {v}")));
        }
        let c = &self.c;
        let dv = v / c.v_ref - 1.0;
        use param::*;
        Ok(Aero {
            v,
            alpha,
            dv,
            cd: p[CD0] + p[CDV] * dv + p[CDA] * alpha,
            cl: p[CL0] + p[CLV] * dv + p[CLA] * alpha,
            cm: p[CM0] + p[CMV] * dv + p[CMA] * alpha + p[CMQ] * c.chord * q / (2.0 * v) + p[CMDE] * u[0],
            k: c.rho * c.wing_area / (2.0 * c.mass),
            km: c.rho * c.wing_area * c.chord / (2.0 * c.pitch_inertia),
        })
    }

    fn pitch_accel(&self, a: &Aero, thrust: f64) -> f64 {
        a.km * a.v * a.v * a.cm + self.c.thrust_arm / self.c.pitch_inertia * thrust
    }

    /// Row of `∂(pitch acceleration)/∂[x; θ]` written into `dx`/`dp` row `r`.
    fn pitch_accel_jacobian(
        &self,
        a: &Aero,
        x: &[f64],
        u: &[f64],
        p: &[f64],
        r: usize,
        dx: &mut DMatrix<f64>,
        dp: &mut DMatrix<f64>,
    ) {
        use param::*;
        let (v, q, cbar) = (a.v, x[3], self.c.chord);
        let v2 = v * v;
        let dcm_dv = p[CMV] / self.c.v_ref - p[CMQ] * cbar * q / (2.0 * v2);
        dx[(r, 0)] = a.km * (2.0 * v * a.cm + v2 * dcm_dv);
        dx[(r, 1)] = a.km * v2 * p[CMA];
        dx[(r, 3)] = a.km * v * p[CMQ] * cbar / 2.0;
        dp[(r, CM0)] = a.km * v2;
        dp[(r, CMV)] = a.km * v2 * a.dv;
        dp[(r, CMA)] = a.km * v2 * a.alpha;
        dp[(r, CMQ)] = a.km * v * cbar * q / 2.0;
        dp[(r, CMDE)] = a.km * v2 * u[0];
    }
}

impl DynamicalModel for Hfb320 {
    fn dims(&self) -> ModelDims {
        ModelDims { nx: 4, ny: 7, nu: 2, np: PARAM_NAMES.len() }
    }

    fn param_names(&self) -> Vec<String> {
        PARAM_NAMES.iter().map(|s| s.to_string()).collect()
    }

    fn state_names(&self) -> Vec<String> {
        ["V", "alpha", "theta", "q"].iter().map(|s| s.to_string()).collect()
    }

    fn output_names(&self) -> Vec<String> {
        ["V", "alpha", "theta", "q", "aq", "ax", "az"].iter().map(|s| s.to_string()).collect()
    }

    fn input_names(&self) -> Vec<String> {
        ["de", "T"].iter().map(|s| s.to_string()).collect()
    }

    fn dynamics(&self, x: &[f64], u: &[f64], p: &[f64], out: &mut [f64]) -> Result<()> {
        let a = self.aero(x, u, p)?;
        let c = &self.c;
        let (v, alpha, theta, q) = (x[0], x[1], x[2], x[3]);
        let thrust = u[1];
        let et = alpha + c.thrust_incidence;
        out[0] = -a.k * v * v * a.cd + thrust / c.mass * et.cos() - c.gravity * (theta - alpha).sin();
        out[1] = -a.k * v * a.cl - thrust / (c.mass * v) * et.sin() + c.gravity / v * (theta - alpha).cos() + q;
        out[2] = q;
        out[3] = self.pitch_accel(&a, thrust);
        Ok(())
    }

    fn output(&self, x: &[f64], u: &[f64], p: &[f64], out: &mut [f64]) -> Result<()> {
        use param::*;
        let a = self.aero(x, u, p)?;
        let c = &self.c;
        let (sa, ca) = a.alpha.sin_cos();
        let thrust = u[1];
        let qd = a.k * a.v * a.v;
        out[0] = x[0];
        out[1] = x[1];
        out[2] = x[2];
        out[3] = x[3] + p[BQ];
        out[4] = p[BAQ] + self.pitch_accel(&a, thrust);
        out[5] = p[BAX] + qd * (sa * a.cl - ca * a.cd) + thrust / c.mass * c.thrust_incidence.cos();
        out[6] = p[BAZ] + qd * (-ca * a.cl - sa * a.cd) - thrust / c.mass * c.thrust_incidence.sin();
        Ok(())
    }

    fn dynamics_jacobian(
        &self,
        x: &[f64],
        u: &[f64],
        p: &[f64],
        dx: &mut DMatrix<f64>,
        dp: &mut DMatrix<f64>,
    ) -> Result<()> {
        use param::*;
        let a = self.aero(x, u, p)?;
        let c = &self.c;
        let (v, alpha, theta) = (x[0], x[1], x[2]);
        let thrust = u[1];
        let et = alpha + c.thrust_incidence;
        let (st, ct) = et.sin_cos();
        let (sg, cg) = (theta - alpha).sin_cos();
        let v2 = v * v;
        dx.fill(0.0);
        dp.fill(0.0);

        dx[(0, 0)] = -a.k * (2.0 * v * a.cd + v2 * p[CDV] / c.v_ref);
        dx[(0, 1)] = -a.k * v2 * p[CDA] - thrust / c.mass * st + c.gravity * cg;
        dx[(0, 2)] = -c.gravity * cg;
        dp[(0, CD0)] = -a.k * v2;
        dp[(0, CDV)] = -a.k * v2 * a.dv;
        dp[(0, CDA)] = -a.k * v2 * alpha;

        dx[(1, 0)] = -a.k * (a.cl + v * p[CLV] / c.v_ref) + thrust / (c.mass * v2) * st - c.gravity / v2 * cg;
        dx[(1, 1)] = -a.k * v * p[CLA] - thrust / (c.mass * v) * ct + c.gravity / v * sg;
        dx[(1, 2)] = -c.gravity / v * sg;
        dx[(1, 3)] = 1.0;
        dp[(1, CL0)] = -a.k * v;
        dp[(1, CLV)] = -a.k * v * a.dv;
        dp[(1, CLA)] = -a.k * v * alpha;

        dx[(2, 3)] = 1.0;

        self.pitch_accel_jacobian(&a, x, u, p, 3, dx, dp);
        Ok(())
    }

    fn output_jacobian(
        &self,
        x: &[f64],
        u: &[f64],
        p: &[f64],
        dx: &mut DMatrix<f64>,
        dp: &mut DMatrix<f64>,
    ) -> Result<()> {
        use param::*;
        let a = self.aero(x, u, p)?;
        let c = &self.c;
        let (v, alpha) = (a.v, a.alpha);
        let (sa, ca) = alpha.sin_cos();
        let v2 = v * v;
        let qd = a.k * v2;
        dx.fill(0.0);
        dp.fill(0.0);
        for i in 0..4 {
            dx[(i, i)] = 1.0;
        }
        dp[(3, BQ)] = 1.0;

        self.pitch_accel_jacobian(&a, x, u, p, 4, dx, dp);
        dp[(4, BAQ)] = 1.0;

        let (dcl_dv, dcd_dv) = (p[CLV] / c.v_ref, p[CDV] / c.v_ref);
        let ax = sa * a.cl - ca * a.cd;
        dx[(5, 0)] = a.k * (2.0 * v * ax + v2 * (sa * dcl_dv - ca * dcd_dv));
        dx[(5, 1)] = qd * (ca * a.cl + sa * p[CLA] + sa * a.cd - ca * p[CDA]);
        dp[(5, CL0)] = qd * sa;
        dp[(5, CLV)] = qd * sa * a.dv;
        dp[(5, CLA)] = qd * sa * alpha;
        dp[(5, CD0)] = -qd * ca;
        dp[(5, CDV)] = -qd * ca * a.dv;
        dp[(5, CDA)] = -qd * ca * alpha;
        dp[(5, BAX)] = 1.0;

        let az = -ca * a.cl - sa * a.cd;
        dx[(6, 0)] = a.k * (2.0 * v * az + v2 * (-ca * dcl_dv - sa * dcd_dv));
        dx[(6, 1)] = qd * (sa * a.cl - ca * p[CLA] - ca * a.cd - sa * p[CDA]);
        dp[(6, CL0)] = -qd * ca;
        dp[(6, CLV)] = -qd * ca * a.dv;
        dp[(6, CLA)] = -qd * ca * alpha;
        dp[(6, CD0)] = -qd * sa;
        dp[(6, CDV)] = -qd * sa * a.dv;
        dp[(6, CDA)] = -qd * sa * alpha;
        dp[(6, BAZ)] = 1.0;
        Ok(())
    }

    fn dynamics_param_dependency(&self) -> Vec<bool> {
        (0..PARAM_NAMES.len()).map(|i| i <= param::CMDE).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::derivatives::{fd_jacobian, FdScheme};
    use approx::assert_abs_diff_eq;

    fn model() -> Hfb320 {
        Hfb320::new(Hfb320Constants::placeholder()).unwrap()
    }

    fn full_params() -> Vec<f64> {
        vec![0.058, -0.032, 0.245, 0.181, 0.201, 3.09, 0.118, 0.0137, -0.994, -28.65, -1.47, 0.001, -0.002, 0.03, -0.05]
    }

    #[test]
    fn gravity_only_case() {
        let m = model();
        let mut f = [0.0; 4];
        m.dynamics(&[100.0, 0.0, 0.0, 0.0], &[0.0, 0.0], &[0.0; 15], &mut f).unwrap();
        assert_eq!(f[0], 0.0);
        assert_abs_diff_eq!(f[1], 9.80665 / 100.0, epsilon = 1e-15);
        assert_eq!(f[2], 0.0);
        assert_eq!(f[3], 0.0);
        m.dynamics(&[100.0, 0.0, 0.0, 0.37], &[0.0, 0.0], &[0.0; 15], &mut f).unwrap();
        assert_eq!(f[2], 0.37);
    }

    /// Straight transcription of the printed model with every term spelled out.
    fn reference(c: &Hfb320Constants, x: [f64; 4], u: [f64; 2], p: &[f64]) -> ([f64; 4], [f64; 7]) {
        let [v, al, th, q] = x;
        let [de, t] = u;
        let qbar_m = c.rho * c.wing_area / (2.0 * c.mass);
        let r = v / c.v_ref - 1.0;
        let cd = p[0] + p[1] * r + p[2] * al;
        let cl = p[3] + p[4] * r + p[5] * al;
        let cm = p[6] + p[7] * r + p[8] * al + p[9] * c.chord * q / (2.0 * v) + p[10] * de;
        let qdot = c.rho * c.wing_area * c.chord / (2.0 * c.pitch_inertia) * v.powi(2) * cm
            + c.thrust_arm / c.pitch_inertia * t;
        let f = [
            -qbar_m * v.powi(2) * cd + t / c.mass * (al + c.thrust_incidence).cos() - c.gravity * (th - al).sin(),
            -qbar_m * v * cl - t / (c.mass * v) * (al + c.thrust_incidence).sin() + c.gravity / v * (th - al).cos() + q,
            q,
            qdot,
        ];
        let g = [
            v,
            al,
            th,
            q + p[11],
            p[12] + qdot,
            p[13] + qbar_m * v.powi(2) * (al.sin() * cl - al.cos() * cd) + t / c.mass * c.thrust_incidence.cos(),
            p[14] + qbar_m * v.powi(2) * (-al.cos() * cl - al.sin() * cd) - t / c.mass * c.thrust_incidence.sin(),
        ];
        (f, g)
    }

    #[test]
    fn matches_reference_transcription() {
        let m = model();
        let p = full_params();
        let x = [100.0, 0.05, 0.03, 0.01];
        let u = [-0.02, 20000.0];
        let (fr, gr) = reference(m.constants(), x, u, &p);
        let mut f = [0.0; 4];
        let mut g = [0.0; 7];
        m.dynamics(&x, &u, &p, &mut f).unwrap();
        m.output(&x, &u, &p, &mut g).unwrap();
        for (a, b) in f.iter().zip(&fr) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12 * b.abs().max(1.0));
        }
        for (a, b) in g.iter().zip(&gr) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12 * b.abs().max(1.0));
        }
        assert_abs_diff_eq!(g[4] - p[param::BAQ], f[3], epsilon = 1e-15);
    }

    #[test]
    fn zero_coefficient_outputs() {
        let m = model();
        let mut g = [0.0; 7];
        m.output(&[90.0, 0.1, 0.05, 0.02], &[0.01, 0.0], &[0.0; 15], &mut g).unwrap();
        assert_eq!((g[4], g[5], g[6]), (0.0, 0.0, 0.0));
    }

    #[test]
    fn az_at_zero_alpha() {
        let m = model();
        let c = *m.constants();
        let p = full_params();
        let (v, t) = (95.0, 15000.0);
        let mut g = [0.0; 7];
        m.output(&[v, 0.0, 0.0, 0.0], &[0.0, t], &p, &mut g).unwrap();
        let cl = p[3] + p[4] * (v / c.v_ref - 1.0);
        let expect =
            -(c.rho * c.wing_area / (2.0 * c.mass)) * v * v * cl - t / c.mass * c.thrust_incidence.sin() + p[14];
        assert_abs_diff_eq!(g[6], expect, epsilon = 1e-12);
    }

    #[test]
    fn nonpositive_airspeed_rejected() {
        let mut f = [0.0; 4];
        let r = model().dynamics(&[0.0, 0.0, 0.0, 0.0], &[0.0, 0.0], &[0.0; 15], &mut f);
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn jacobians_match_differences() {
        let m = model();
        let p = full_params();
        let x = [103.0, 0.07, 0.02, -0.03];
        let u = [-0.015, 18000.0];
        let mut stacked = x.to_vec();
        stacked.extend(&p);
        for (rows, output) in [(4, false), (7, true)] {
            let fd = fd_jacobian(
                |v| {
                    let mut out = vec![0.0; rows];
                    if output {
                        m.output(&v[..4], &u, &v[4..], &mut out)?;
                    } else {
                        m.dynamics(&v[..4], &u, &v[4..], &mut out)?;
                    }
                    Ok(out)
                },
                &stacked,
                FdScheme::Central,
                None,
            )
            .unwrap();
            let mut dx = DMatrix::zeros(rows, 4);
            let mut dp = DMatrix::zeros(rows, 15);
            if output {
                m.output_jacobian(&x, &u, &p, &mut dx, &mut dp).unwrap();
            } else {
                m.dynamics_jacobian(&x, &u, &p, &mut dx, &mut dp).unwrap();
            }
            for r in 0..rows {
                for cidx in 0..19 {
                    let a = if cidx < 4 { dx[(r, cidx)] } else { dp[(r, cidx - 4)] };
                    let b = fd[(r, cidx)];
                    assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "row {r} col {cidx}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn bias_parameters_do_not_enter_dynamics() {
        let dep = model().dynamics_param_dependency();
        assert_eq!(dep.iter().filter(|d| **d).count(), 11);
        assert!(!dep[param::BQ]);
    }
}
