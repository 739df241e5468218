use crate::error::{Error, Result};
use crate::linalg::{Inertia, KktSystem, SymTriplets, Triplets};

/// Primal step, new multipliers, and the regularization that was needed.
#[derive(Debug, Clone, PartialEq)]
pub struct KktStep {
    pub dx: Vec<f64>,
    pub lambda: Vec<f64>,
    pub regularization: f64,
}

const MAX_REGULARIZATION: f64 = 1e20;

/// Inertia-correction loop state kept across SQP iterations. The first
/// regularization tried is `floor · max(1, max|h|)`.
#[derive(Debug, Clone)]
pub(crate) struct InertiaControl {
    floor: f64,
    last: f64,
}

impl InertiaControl {
    pub fn new(floor: f64) -> Self {
        InertiaControl { floor, last: 0.0 }
    }

    /// Factorizes with the smallest tried `δ ≥ min_delta` giving inertia
    /// `(n, m, 0)`. Zero eigenvalues that survive a positive `δ` point at
    /// dependent constraints, and `delta_c` is then added to the constraint
    /// block. Returns `(δ, δc)`, or `None` once `δ` exceeds its ceiling.
    pub fn factor(
        &mut self,
        kkt: &mut KktSystem,
        h: &[f64],
        j: &[f64],
        min_delta: f64,
        delta_c: f64,
    ) -> Option<(f64, f64)> {
        let n = kkt.num_variables();
        let m = kkt.num_constraints();
        let good = |i: Inertia| i.positive == n && i.negative == m && i.zero == 0;
        if good(kkt.factor(h, j, min_delta, 0.0)) {
            return Some((min_delta, 0.0));
        }
        let floor = self.floor * h.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let (mut delta, growth) = if self.last == 0.0 { (floor, 100.0) } else { ((self.last / 3.0).max(floor), 8.0) };
        delta = delta.max(100.0 * min_delta);
        let mut dc = 0.0;
        while delta <= MAX_REGULARIZATION {
            let inertia = kkt.factor(h, j, delta, dc);
            if good(inertia) {
                self.last = delta;
                return Some((delta, dc));
            }
            if inertia.zero > 0 && dc == 0.0 && m > 0 && delta_c > 0.0 {
                dc = delta_c;
                continue;
            }
            delta *= growth;
        }
        None
    }
}

/// Solves `[[H + δI, Jᵀ], [J, 0]] [Δx; λ] = [−∇f; −c]`, raising `δ` from 0
/// through `regularization`, `100·regularization`, … until the reduced
/// Hessian is positive definite. `h` holds one triangle of H.
pub fn solve_kkt_step(h: &SymTriplets, j: &Triplets, grad: &[f64], c: &[f64], regularization: f64) -> Result<KktStep> {
    let n = h.dim;
    let m = j.nrows;
    if j.ncols != n || grad.len() != n || c.len() != m {
        return Err(Error::Dimension(format!(
            "KKT step: H is {n}x{n}, J is {}x{}, gradient {}, constraints {}",
            j.nrows,
            j.ncols,
            grad.len(),
            c.len()
        )));
    }
    if !(regularization > 0.0) {
        return Err(Error::Domain(format!("regularization must be positive, got {regularization}")));
    }
    let dependent = dependent_rows(j);
    if !dependent.is_empty() {
        return Err(Error::RankDeficient { rows: dependent });
    }
    let h_pattern: Vec<(usize, usize)> = h.entries.iter().map(|e| (e.0, e.1)).collect();
    let h_values: Vec<f64> = h.entries.iter().map(|e| e.2).collect();
    let j_pattern: Vec<(usize, usize)> = j.entries.iter().map(|e| (e.0, e.1)).collect();
    let j_values: Vec<f64> = j.entries.iter().map(|e| e.2).collect();
    let mut kkt = KktSystem::new(n, m, &h_pattern, &j_pattern, None)?;
    let mut control = InertiaControl::new(regularization);
    let Some((delta, _)) = control.factor(&mut kkt, &h_values, &j_values, 0.0, 0.0) else {
        return Err(Error::RankDeficient { rows: kkt.singular_constraints() });
    };
    let rhs: Vec<f64> = grad.iter().chain(c).map(|v| -v).collect();
    let sol = kkt.solve(&rhs);
    Ok(KktStep { dx: sol[..n].to_vec(), lambda: sol[n..].to_vec(), regularization: delta })
}

/// Rows of J that are empty or linearly dependent on earlier rows
/// (modified Gram–Schmidt in row order).
fn dependent_rows(j: &Triplets) -> Vec<usize> {
    let dense = j.to_dense();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut out = Vec::new();
    for r in 0..j.nrows {
        let mut v: Vec<f64> = dense.row(r).iter().copied().collect();
        let norm0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(a, b)| a * b).sum();
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= d * bi;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm0 == 0.0 || norm <= 1e-10 * norm0 {
            out.push(r);
        } else {
            basis.push(v.iter().map(|x| x / norm).collect());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};

    fn sym(dim: usize, entries: Vec<(usize, usize, f64)>) -> SymTriplets {
        SymTriplets { dim, entries }
    }

    #[test]
    fn projects_onto_constraint() {
        let h = sym(2, vec![(0, 0, 1.0), (1, 1, 1.0)]);
        let j = Triplets { nrows: 1, ncols: 2, entries: vec![(0, 0, 1.0), (0, 1, 1.0)] };
        let step = solve_kkt_step(&h, &j, &[0.0, 0.0], &[-1.0], 1e-8).unwrap();
        assert!((step.dx[0] - 0.5).abs() < 1e-14 && (step.dx[1] - 0.5).abs() < 1e-14);
        assert_eq!(step.regularization, 0.0);
    }

    #[test]
    fn zero_hessian_gives_projected_steepest_descent() {
        let h = sym(2, vec![]);
        let j = Triplets { nrows: 1, ncols: 2, entries: vec![(0, 0, 1.0), (0, 1, 1.0)] };
        let g = [1.0, 0.0];
        let step = solve_kkt_step(&h, &j, &g, &[0.0], 1e-8).unwrap();
        assert_eq!(step.regularization, 1e-8);
        // −P∇f / δ with P the projector onto the null space of J
        let expect = [-0.5 / 1e-8, 0.5 / 1e-8];
        for i in 0..2 {
            assert!((step.dx[i] - expect[i]).abs() <= 1e-8 * expect[i].abs());
        }
    }

    #[test]
    fn random_spd_matches_dense_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let a = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let hm = &a * a.transpose() + DMatrix::identity(3, 3);
        let jm = DMatrix::from_fn(1, 3, |_, _| rng.random_range(-1.0..1.0));
        let g: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c = vec![rng.random_range(-1.0..1.0)];
        let mut h = sym(3, vec![]);
        for r in 0..3 {
            for col in 0..=r {
                h.entries.push((r, col, hm[(r, col)]));
            }
        }
        let j = Triplets { nrows: 1, ncols: 3, entries: (0..3).map(|col| (0, col, jm[(0, col)])).collect() };
        let step = solve_kkt_step(&h, &j, &g, &c, 1e-8).unwrap();
        let mut k = DMatrix::zeros(4, 4);
        k.view_mut((0, 0), (3, 3)).copy_from(&hm);
        k.view_mut((3, 0), (1, 3)).copy_from(&jm);
        k.view_mut((0, 3), (3, 1)).copy_from(&jm.transpose());
        let rhs = DVector::from_vec(vec![-g[0], -g[1], -g[2], -c[0]]);
        let oracle = k.lu().solve(&rhs).unwrap();
        for i in 0..3 {
            assert!((step.dx[i] - oracle[i]).abs() < 1e-10);
        }
        assert!((step.lambda[0] - oracle[3]).abs() < 1e-10);
    }

    #[test]
    fn dependent_rows_are_named() {
        let h = sym(3, vec![(0, 0, 1.0), (1, 1, 1.0), (2, 2, 1.0)]);
        let j = Triplets { nrows: 3, ncols: 3, entries: vec![(0, 0, 1.0), (0, 1, 1.0), (2, 0, 2.0), (2, 1, 2.0)] };
        match solve_kkt_step(&h, &j, &[0.0; 3], &[0.0; 3], 1e-8) {
            Err(Error::RankDeficient { rows }) => assert_eq!(rows, vec![1, 2]),
            other => panic!("unexpected {other:?}"),
        }
    }
}
