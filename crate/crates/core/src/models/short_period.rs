use nalgebra::{DMatrix, Matrix2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{DynamicalModel, ModelDims};

pub mod param {
    pub const ZW: usize = 0;
    pub const ZQ: usize = 1;
    pub const ZDE: usize = 2;
    pub const MW: usize = 3;
    pub const MQ: usize = 4;
    pub const MDE: usize = 5;
}

const PARAM_NAMES: [&str; 6] = ["Zw", "Zq", "Zde", "Mw", "Mq", "Mde"];

/// Linear short-period model: states `[w, q]`, input `δe`, outputs
/// `[w, q, a_z]`, parameters `[Z_w, Z_q, Z_δe, M_w, M_q, M_δe]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShortPeriod {
    u0: f64,
}

impl ShortPeriod {
    /// `u0` is the trim airspeed in m/s.
    pub fn new(u0: f64) -> Result<Self> {
        if !(u0 > 0.0 && u0.is_finite()) {
            return Err(Error::Config(format!("trim airspeed must be positive, got {u0}")));
        }
        Ok(ShortPeriod { u0 })
    }

    pub fn trim_airspeed(&self) -> f64 {
        self.u0
    }

    pub fn system_matrix(&self, p: &[f64]) -> Matrix2<f64> {
        use param::*;
        Matrix2::new(p[ZW], self.u0 + p[ZQ], p[MW], p[MQ])
    }

    /// Eigenvalues of the system matrix from the characteristic polynomial.
    pub fn eigenvalues(&self, p: &[f64]) -> [Complex64; 2] {
        let a = self.system_matrix(p);
        let tr = a.trace();
        let det = a.determinant();
        let disc = Complex64::new(tr * tr / 4.0 - det, 0.0).sqrt();
        [tr / 2.0 + disc, tr / 2.0 - disc]
    }

    /// Routh–Hurwitz test for a 2×2 system: stable iff trace < 0 and det > 0.
    pub fn is_stable(&self, p: &[f64]) -> bool {
        let a = self.system_matrix(p);
        a.trace() < 0.0 && a.determinant() > 0.0
    }
}

impl DynamicalModel for ShortPeriod {
    fn dims(&self) -> ModelDims {
        ModelDims { nx: 2, ny: 3, nu: 1, np: 6 }
    }

    fn param_names(&self) -> Vec<String> {
        PARAM_NAMES.iter().map(|s| s.to_string()).collect()
    }

    fn state_names(&self) -> Vec<String> {
        vec!["w".into(), "q".into()]
    }

    fn output_names(&self) -> Vec<String> {
        vec!["w".into(), "q".into(), "az".into()]
    }

    fn input_names(&self) -> Vec<String> {
        vec!["de".into()]
    }

    fn dynamics(&self, x: &[f64], u: &[f64], p: &[f64], out: &mut [f64]) -> Result<()> {
        use param::*;
        out[0] = p[ZW] * x[0] + (self.u0 + p[ZQ]) * x[1] + p[ZDE] * u[0];
        out[1] = p[MW] * x[0] + p[MQ] * x[1] + p[MDE] * u[0];
        Ok(())
    }

    fn output(&self, x: &[f64], u: &[f64], p: &[f64], out: &mut [f64]) -> Result<()> {
        use param::*;
        out[0] = x[0];
        out[1] = x[1];
        out[2] = p[ZW] * x[0] + p[ZQ] * x[1] + p[ZDE] * u[0];
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
        dx.copy_from(&self.system_matrix(p));
        dp.fill(0.0);
        dp[(0, ZW)] = x[0];
        dp[(0, ZQ)] = x[1];
        dp[(0, ZDE)] = u[0];
        dp[(1, MW)] = x[0];
        dp[(1, MQ)] = x[1];
        dp[(1, MDE)] = u[0];
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
        dx.fill(0.0);
        dp.fill(0.0);
        dx[(0, 0)] = 1.0;
        dx[(1, 1)] = 1.0;
        dx[(2, 0)] = p[ZW];
        dx[(2, 1)] = p[ZQ];
        dp[(2, ZW)] = x[0];
        dp[(2, ZQ)] = x[1];
        dp[(2, ZDE)] = u[0];
        Ok(())
    }

    fn output_param_dependency(&self) -> Vec<bool> {
        vec![true, true, true, false, false, false]
    }

    fn dynamics_hessian(&self, _x: &[f64], _u: &[f64], _p: &[f64], w: &[f64], out: &mut DMatrix<f64>) -> Result<()> {
        use param::*;
        // Only the bilinear x·θ terms survive; layout is [w, q, θ].
        out.fill(0.0);
        let pairs = [(0, ZW, w[0]), (1, ZQ, w[0]), (0, MW, w[1]), (1, MQ, w[1])];
        for (xi, pi, wt) in pairs {
            out[(xi, 2 + pi)] += wt;
            out[(2 + pi, xi)] += wt;
        }
        Ok(())
    }

    fn output_hessian(&self, _x: &[f64], _u: &[f64], _p: &[f64], w: &[f64], out: &mut DMatrix<f64>) -> Result<()> {
        use param::*;
        out.fill(0.0);
        for (xi, pi) in [(0, ZW), (1, ZQ)] {
            out[(xi, 2 + pi)] = w[2];
            out[(2 + pi, xi)] = w[2];
        }
        Ok(())
    }
}
