use nalgebra::{DMatrix, DVector};

/// Dense BFGS approximation of the Lagrangian Hessian with Powell damping,
/// so the matrix stays positive definite without a curvature condition.
#[derive(Debug, Clone)]
pub(crate) struct DampedBfgs {
    b: DMatrix<f64>,
    initialized: bool,
}

impl DampedBfgs {
    pub fn new(n: usize) -> Self {
        DampedBfgs { b: DMatrix::identity(n, n), initialized: false }
    }

    /// Lower-triangle pattern, row-major.
    pub fn structure(n: usize) -> Vec<(usize, usize)> {
        (0..n).flat_map(|r| (0..=r).map(move |c| (r, c))).collect()
    }

    pub fn values(&self, out: &mut [f64]) {
        let n = self.b.nrows();
        let mut k = 0;
        for r in 0..n {
            for c in 0..=r {
                out[k] = self.b[(r, c)];
                k += 1;
            }
        }
    }

    /// `s` is the step, `y` the change of the Lagrangian gradient.
    pub fn update(&mut self, s: &[f64], y: &[f64]) {
        let s = DVector::from_column_slice(s);
        let mut y = DVector::from_column_slice(y);
        let ss = s.dot(&s);
        if ss == 0.0 || !ss.is_finite() || !y.iter().all(|v| v.is_finite()) {
            return;
        }
        if !self.initialized {
            let sy = s.dot(&y);
            if sy > 0.0 {
                let scale = y.dot(&y) / sy;
                self.b = DMatrix::identity(s.len(), s.len()) * scale;
            }
            self.initialized = true;
        }
        let bs = &self.b * &s;
        let sbs = s.dot(&bs);
        if sbs <= 0.0 {
            return;
        }
        let sy = s.dot(&y);
        if sy < 0.2 * sbs {
            let theta = 0.8 * sbs / (sbs - sy);
            y = &y * theta + &bs * (1.0 - theta);
        }
        let sy = s.dot(&y);
        self.b += &y * y.transpose() / sy - &bs * bs.transpose() / sbs;
        let sym = (&self.b + self.b.transpose()) * 0.5;
        self.b = sym;
    }

    #[cfg(test)]
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.b
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stays_positive_definite_with_negative_curvature() {
        let mut b = DampedBfgs::new(2);
        b.update(&[1.0, 0.0], &[2.0, 0.0]);
        b.update(&[0.0, 1.0], &[0.0, -3.0]);
        b.update(&[1.0, 1.0], &[-1.0, 0.5]);
        let eig = b.matrix().clone().symmetric_eigenvalues();
        assert!(eig.iter().all(|l| *l > 0.0));
    }

    #[test]
    fn secant_condition_without_damping() {
        let mut b = DampedBfgs::new(2);
        b.update(&[1.0, 0.0], &[2.0, 0.5]);
        let s = [0.3, -1.0];
        let y = [0.5, -2.5];
        b.update(&s, &y);
        let bs = b.matrix() * DVector::from_column_slice(&s);
        assert!((bs[0] - y[0]).abs() < 1e-12 && (bs[1] - y[1]).abs() < 1e-12);
    }
}
