use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{DynamicalModel, ModelDims};

/// Single-input single-output model in modal form. Each mode `i` owns the
/// states `(x_ia, x_ib)` and the 2×2 block `[[σ_i, ω_i], [−ω_i, σ_i]]`, so
/// its poles are `σ_i ± jω_i`.
///
/// Parameter layout for `n` modes: `σ_1..σ_n, ω_1..ω_n, b_1..b_n`, then
/// `c_1a, c_1b, …, c_na, c_nb`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Modal {
    modes: usize,
}

impl Modal {
    pub fn new(modes: usize) -> Result<Self> {
        if modes == 0 {
            return Err(Error::Config("modal model needs at least one mode".into()));
        }
        Ok(Modal { modes })
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn sigma_index(&self, i: usize) -> usize {
        i
    }

    pub fn omega_index(&self, i: usize) -> usize {
        self.modes + i
    }

    pub fn b_index(&self, i: usize) -> usize {
        2 * self.modes + i
    }

    /// Index of `c_ia`; `c_ib` follows it.
    pub fn c_index(&self, i: usize) -> usize {
        3 * self.modes + 2 * i
    }

    /// Parameter vector from per-mode values.
    pub fn pack(&self, sigma: &[f64], omega: &[f64], b: &[f64], c: &[(f64, f64)]) -> Result<Vec<f64>> {
        let n = self.modes;
        if sigma.len() != n || omega.len() != n || b.len() != n || c.len() != n {
            return Err(Error::Dimension(format!("modal model has {n} modes")));
        }
        let mut p = Vec::with_capacity(5 * n);
        p.extend(sigma);
        p.extend(omega);
        p.extend(b);
        for &(ca, cb) in c {
            p.push(ca);
            p.push(cb);
        }
        Ok(p)
    }

    pub fn state_matrix(&self, p: &[f64]) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(2 * self.modes, 2 * self.modes);
        for i in 0..self.modes {
            let (s, w) = (p[self.sigma_index(i)], p[self.omega_index(i)]);
            let k = 2 * i;
            a[(k, k)] = s;
            a[(k, k + 1)] = w;
            a[(k + 1, k)] = -w;
            a[(k + 1, k + 1)] = s;
        }
        a
    }

    pub fn input_vector(&self, p: &[f64]) -> DVector<f64> {
        DVector::from_fn(2 * self.modes, |r, _| if r % 2 == 0 { p[self.b_index(r / 2)] } else { 0.0 })
    }

    pub fn output_vector(&self, p: &[f64]) -> DVector<f64> {
        DVector::from_fn(2 * self.modes, |r, _| p[self.c_index(r / 2) + r % 2])
    }

    pub fn poles(&self, p: &[f64]) -> Vec<Complex64> {
        (0..self.modes)
            .flat_map(|i| {
                let (s, w) = (p[self.sigma_index(i)], p[self.omega_index(i)]);
                [Complex64::new(s, w), Complex64::new(s, -w)]
            })
            .collect()
    }

    /// `c·(jωI − A)⁻¹·b` at `freq_hz`, summed mode by mode in closed form.
    pub fn frequency_response(&self, p: &[f64], freq_hz: f64) -> Complex64 {
        let s = Complex64::new(0.0, 2.0 * std::f64::consts::PI * freq_hz);
        (0..self.modes)
            .map(|i| {
                let (sg, w, b) = (p[self.sigma_index(i)], p[self.omega_index(i)], p[self.b_index(i)]);
                let (ca, cb) = (p[self.c_index(i)], p[self.c_index(i) + 1]);
                let d = s - sg;
                b * (ca * d - cb * w) / (d * d + w * w)
            })
            .sum()
    }
}

impl DynamicalModel for Modal {
    fn dims(&self) -> ModelDims {
        ModelDims { nx: 2 * self.modes, ny: 1, nu: 1, np: 5 * self.modes }
    }

    fn param_names(&self) -> Vec<String> {
        let n = self.modes;
        let mut names: Vec<String> = (1..=n).map(|i| format!("sigma{i}")).collect();
        names.extend((1..=n).map(|i| format!("omega{i}")));
        names.extend((1..=n).map(|i| format!("b{i}")));
        for i in 1..=n {
            names.push(format!("c{i}a"));
            names.push(format!("c{i}b"));
        }
        names
    }

    fn state_names(&self) -> Vec<String> {
        (1..=self.modes).flat_map(|i| [format!("x{i}a"), format!("x{i}b")]).collect()
    }

    fn output_names(&self) -> Vec<String> {
        vec!["y".into()]
    }

    fn input_names(&self) -> Vec<String> {
        vec!["u".into()]
    }

    fn dynamics(&self, x: &[f64], u: &[f64], p: &[f64], out: &mut [f64]) -> Result<()> {
        for i in 0..self.modes {
            let (s, w, b) = (p[self.sigma_index(i)], p[self.omega_index(i)], p[self.b_index(i)]);
            let (xa, xb) = (x[2 * i], x[2 * i + 1]);
            out[2 * i] = s * xa + w * xb + b * u[0];
            out[2 * i + 1] = -w * xa + s * xb;
        }
        Ok(())
    }

    fn output(&self, x: &[f64], _u: &[f64], p: &[f64], out: &mut [f64]) -> Result<()> {
        out[0] = (0..self.modes).map(|i| p[self.c_index(i)] * x[2 * i] + p[self.c_index(i) + 1] * x[2 * i + 1]).sum();
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
        dx.copy_from(&self.state_matrix(p));
        dp.fill(0.0);
        for i in 0..self.modes {
            let (xa, xb) = (x[2 * i], x[2 * i + 1]);
            let (si, wi, bi) = (self.sigma_index(i), self.omega_index(i), self.b_index(i));
            dp[(2 * i, si)] = xa;
            dp[(2 * i, wi)] = xb;
            dp[(2 * i, bi)] = u[0];
            dp[(2 * i + 1, si)] = xb;
            dp[(2 * i + 1, wi)] = -xa;
        }
        Ok(())
    }

    fn output_jacobian(
        &self,
        x: &[f64],
        _u: &[f64],
        p: &[f64],
        dx: &mut DMatrix<f64>,
        dp: &mut DMatrix<f64>,
    ) -> Result<()> {
        dp.fill(0.0);
        for i in 0..self.modes {
            let c = self.c_index(i);
            dx[(0, 2 * i)] = p[c];
            dx[(0, 2 * i + 1)] = p[c + 1];
            dp[(0, c)] = x[2 * i];
            dp[(0, c + 1)] = x[2 * i + 1];
        }
        Ok(())
    }

    fn dynamics_param_dependency(&self) -> Vec<bool> {
        (0..5 * self.modes).map(|k| k < 3 * self.modes).collect()
    }

    fn output_param_dependency(&self) -> Vec<bool> {
        (0..5 * self.modes).map(|k| k >= 3 * self.modes).collect()
    }

    fn dynamics_hessian(&self, _x: &[f64], _u: &[f64], _p: &[f64], w: &[f64], out: &mut DMatrix<f64>) -> Result<()> {
        let nx = 2 * self.modes;
        out.fill(0.0);
        let mut add = |xi: usize, pi: usize, v: f64| {
            out[(xi, nx + pi)] += v;
            out[(nx + pi, xi)] += v;
        };
        for i in 0..self.modes {
            let (a, b) = (2 * i, 2 * i + 1);
            let (si, wi) = (self.sigma_index(i), self.omega_index(i));
            add(a, si, w[a]);
            add(b, wi, w[a]);
            add(b, si, w[b]);
            add(a, wi, -w[b]);
        }
        Ok(())
    }

    fn output_hessian(&self, _x: &[f64], _u: &[f64], _p: &[f64], w: &[f64], out: &mut DMatrix<f64>) -> Result<()> {
        let nx = 2 * self.modes;
        out.fill(0.0);
        for i in 0..self.modes {
            let c = self.c_index(i);
            for k in 0..2 {
                out[(2 * i + k, nx + c + k)] = w[0];
                out[(nx + c + k, 2 * i + k)] = w[0];
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::derivatives::{fd_jacobian, FdScheme};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn pure_rotation() {
        let m = Modal::new(1).unwrap();
        let p = m.pack(&[0.0], &[1.0], &[0.0], &[(1.0, 0.0)]).unwrap();
        let mut f = [0.0; 2];
        m.dynamics(&[1.0, 0.0], &[3.0], &p, &mut f).unwrap();
        assert_eq!(f, [0.0, -1.0]);
        // the flow of a skew-symmetric matrix preserves the norm
        let a = m.state_matrix(&p);
        assert_abs_diff_eq!((&a + a.transpose()).amax(), 0.0);
    }

    #[test]
    fn eigenvalues_are_the_poles() {
        let m = Modal::new(3).unwrap();
        let p = m.pack(&[-0.5, -1.2, 0.1], &[8.0 * 2.0 * PI, 40.0 * PI, 3.0], &[1.0; 3], &[(1.0, 1.0); 3]).unwrap();
        let eig = m.state_matrix(&p).complex_eigenvalues();
        let mut expected = m.poles(&p);
        for e in eig.iter() {
            let (k, d) = expected
                .iter()
                .enumerate()
                .map(|(k, q)| (k, (q - e).norm()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            assert!(d <= 1e-10 * e.norm().max(1.0), "{e} off by {d}");
            expected.swap_remove(k);
        }
    }

    #[test]
    fn matches_dense_matvec() {
        let m = Modal::new(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p: Vec<f64> = (0..10).map(|_| rng.random_range(-3.0..3.0)).collect();
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let u = [rng.random_range(-1.0..1.0)];
        let mut f = [0.0; 4];
        m.dynamics(&x, &u, &p, &mut f).unwrap();
        let oracle = m.state_matrix(&p) * DVector::from_column_slice(&x) + m.input_vector(&p) * u[0];
        for i in 0..4 {
            assert_abs_diff_eq!(f[i], oracle[i], epsilon = 1e-14);
        }
        let mut y = [0.0];
        m.output(&x, &u, &p, &mut y).unwrap();
        assert_abs_diff_eq!(y[0], m.output_vector(&p).dot(&DVector::from_column_slice(&x)), epsilon = 1e-14);
    }

    #[test]
    fn output_examples() {
        let m = Modal::new(1).unwrap();
        let mut y = [0.0];
        m.output(&[2.0, 5.0], &[0.0], &m.pack(&[0.0], &[1.0], &[1.0], &[(0.0, 0.0)]).unwrap(), &mut y).unwrap();
        assert_eq!(y[0], 0.0);
        m.output(&[2.0, 5.0], &[0.0], &m.pack(&[0.0], &[1.0], &[1.0], &[(1.0, 0.0)]).unwrap(), &mut y).unwrap();
        assert_eq!(y[0], 2.0);
    }

    #[test]
    fn response_peaks_at_resonance() {
        let m = Modal::new(1).unwrap();
        let p = m.pack(&[-1.0], &[2.0 * PI * 10.0], &[1.0], &[(1.0, 0.0)]).unwrap();
        let peak = (1..400)
            .map(|k| k as f64 * 0.05)
            .max_by(|a, b| m.frequency_response(&p, *a).norm().total_cmp(&m.frequency_response(&p, *b).norm()))
            .unwrap();
        assert!((peak - 10.0).abs() < 0.1, "{peak}");
        let zero = m.pack(&[-1.0], &[2.0 * PI * 10.0], &[1.0], &[(0.0, 0.0)]).unwrap();
        assert_eq!(m.frequency_response(&zero, 7.0).norm(), 0.0);
    }

    #[test]
    fn response_matches_resolvent() {
        let m = Modal::new(2).unwrap();
        let p = m.pack(&[-0.5, -1.2], &[50.0, 125.0], &[0.7, -1.1], &[(1.0, 0.3), (-0.4, 2.0)]).unwrap();
        let f = 12.5;
        let jw = Complex64::new(0.0, 2.0 * PI * f);
        let a = m.state_matrix(&p).map(|v| Complex64::new(v, 0.0));
        let lhs = DMatrix::<Complex64>::identity(4, 4) * jw - a;
        let b = m.input_vector(&p).map(|v| Complex64::new(v, 0.0));
        let sol = lhs.lu().solve(&b).unwrap();
        let oracle: Complex64 = m.output_vector(&p).iter().zip(sol.iter()).map(|(c, s)| s * *c).sum();
        assert!((m.frequency_response(&p, f) - oracle).norm() < 1e-12);
    }

    #[test]
    fn jacobians_and_hessians() {
        let m = Modal::new(2).unwrap();
        let p = m.pack(&[-0.5, -1.2], &[50.0, 125.0], &[0.7, -1.1], &[(1.0, 0.3), (-0.4, 2.0)]).unwrap();
        let x = [0.3, -0.2, 0.05, 0.8];
        let u = [0.4];
        let mut stacked = x.to_vec();
        stacked.extend(&p);
        let fd = fd_jacobian(
            |v| {
                let mut o = vec![0.0; 4];
                m.dynamics(&v[..4], &u, &v[4..], &mut o)?;
                Ok(o)
            },
            &stacked,
            FdScheme::Central,
            None,
        )
        .unwrap();
        let mut dx = DMatrix::zeros(4, 4);
        let mut dp = DMatrix::zeros(4, 10);
        m.dynamics_jacobian(&x, &u, &p, &mut dx, &mut dp).unwrap();
        for r in 0..4 {
            for c in 0..14 {
                let a = if c < 4 { dx[(r, c)] } else { dp[(r, c - 4)] };
                assert!((a - fd[(r, c)]).abs() < 1e-7 * a.abs().max(1.0));
            }
        }
        // Hessian of w·f by differencing the analytic Jacobian
        let w = [0.3, -0.7, 1.1, 0.2];
        let mut h = DMatrix::zeros(14, 14);
        m.dynamics_hessian(&x, &u, &p, &w, &mut h).unwrap();
        let grad = |v: &[f64]| -> crate::error::Result<Vec<f64>> {
            let mut dx = DMatrix::zeros(4, 4);
            let mut dp = DMatrix::zeros(4, 10);
            m.dynamics_jacobian(&v[..4], &u, &v[4..], &mut dx, &mut dp)?;
            let wv = DVector::from_column_slice(&w);
            let mut g = (dx.transpose() * &wv).as_slice().to_vec();
            g.extend((dp.transpose() * &wv).iter());
            Ok(g)
        };
        let hfd = fd_jacobian(grad, &stacked, FdScheme::Central, None).unwrap();
        assert!((h - hfd).amax() < 1e-6);
    }
}
