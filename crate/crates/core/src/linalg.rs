//! Sparse symmetric-indefinite factorization for the SQP saddle-point systems.
//!
//! The KKT matrix `[[H + δI, Jᵀ], [J, −δc I]]` is factorized as `L D Lᵀ` with
//! static block pivots: each diagonal block couples some variables with the
//! constraints that determine them (a collocation node with its defects, a
//! shooting segment start with its continuity rows), so `D` blocks are
//! nonsingular independently of `H`. Variables left unpaired go last, where
//! their pivot block is the reduced Hessian. Storage is a block envelope
//! (profile), so fill is confined to the band of each block row.
//!
//! Inertia is read from the eigenvalues of the diagonal blocks.

use std::collections::HashMap;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Number of positive, negative and zero eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Inertia {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

/// A symmetric matrix in coordinate form; only one triangle is stored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SymTriplets {
    pub dim: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

/// A general sparse matrix in coordinate form. Duplicates are summed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Triplets {
    pub nrows: usize,
    pub ncols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Triplets { nrows, ncols, entries: Vec::new() }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for &(r, c, v) in &self.entries {
            d[(r, c)] += v;
        }
        d
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        for &(r, c, v) in &self.entries {
            y[r] += v * x[c];
        }
        y
    }

    /// `y = Aᵀ x`.
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        for &(r, c, v) in &self.entries {
            y[c] += v * x[r];
        }
        y
    }
}

/// `L D Lᵀ` with dense diagonal blocks over a block envelope.
#[derive(Debug, Clone)]
pub struct BlockLdl {
    dim: usize,
    block_start: Vec<usize>,
    block_of: Vec<usize>,
    /// First scalar column of each block row's envelope.
    first: Vec<usize>,
    l: Vec<DMatrix<f64>>,
    g: Vec<DMatrix<f64>>,
    d: Vec<DMatrix<f64>>,
    dinv: Vec<DMatrix<f64>>,
    inertia: Inertia,
    singular_blocks: Vec<usize>,
}

impl BlockLdl {
    /// Symbolic setup from block sizes (in elimination order) and the lower
    /// triangle pattern `(row, col)`, `row >= col`, in the same order.
    pub fn new(block_sizes: &[usize], pattern: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut block_start = Vec::with_capacity(block_sizes.len() + 1);
        let mut block_of = Vec::new();
        let mut acc = 0;
        for (b, &s) in block_sizes.iter().enumerate() {
            block_start.push(acc);
            acc += s;
            block_of.extend(std::iter::repeat_n(b, s));
        }
        block_start.push(acc);
        let mut first: Vec<usize> = block_start[..block_sizes.len()].to_vec();
        for (r, c) in pattern {
            let (r, c) = if r >= c { (r, c) } else { (c, r) };
            let (br, bc) = (block_of[r], block_of[c]);
            if bc < br {
                first[br] = first[br].min(block_start[bc]);
            }
        }
        let l: Vec<DMatrix<f64>> =
            (0..block_sizes.len()).map(|b| DMatrix::zeros(block_sizes[b], block_start[b] - first[b])).collect();
        BlockLdl {
            dim: acc,
            g: l.clone(),
            l,
            d: block_sizes.iter().map(|&s| DMatrix::zeros(s, s)).collect(),
            dinv: block_sizes.iter().map(|&s| DMatrix::zeros(s, s)).collect(),
            block_start,
            block_of,
            first,
            inertia: Inertia::default(),
            singular_blocks: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_blocks(&self) -> usize {
        self.d.len()
    }

    /// Scalar index range of block `b`.
    pub fn block_range(&self, b: usize) -> std::ops::Range<usize> {
        self.block_start[b]..self.block_start[b + 1]
    }

    /// Envelope entries stored (off-diagonal part).
    pub fn envelope_size(&self) -> usize {
        self.l.iter().map(|m| m.len()).sum()
    }

    /// Numeric factorization of the lower-triangle entries (duplicates are
    /// summed). Each pivot block is equilibrated before its eigendecomposition;
    /// a scaled eigenvalue counts as zero below `pivot_tol` times the largest
    /// one. Rows below `ε · max|a_ij|` are treated as zero.
    pub fn factor(&mut self, entries: &[(usize, usize, f64)], pivot_tol: f64) -> Inertia {
        for m in self.g.iter_mut().chain(self.l.iter_mut()).chain(self.d.iter_mut()) {
            m.fill(0.0);
        }
        let mut scale: f64 = 0.0;
        for &(r, c, v) in entries {
            let (r, c) = if r >= c { (r, c) } else { (c, r) };
            scale = scale.max(v.abs());
            let (br, bc) = (self.block_of[r], self.block_of[c]);
            let sr = self.block_start[br];
            if br == bc {
                self.d[br][(r - sr, c - sr)] += v;
                if r != c {
                    self.d[br][(c - sr, r - sr)] += v;
                }
            } else {
                self.g[br][(r - sr, c - self.first[br])] += v;
            }
        }
        let tol = f64::EPSILON * scale.max(f64::MIN_POSITIVE);
        let mut inertia = Inertia::default();
        self.singular_blocks.clear();
        for bi in 0..self.d.len() {
            let fi = self.first[bi];
            let si = self.block_start[bi];
            if si > fi {
                let bj0 = self.block_of[fi];
                let (g_before, g_rest) = self.g.split_at_mut(bi);
                let g_i = &mut g_rest[0];
                let l_i = &mut self.l[bi];
                for bj in bj0..bi {
                    let sj = self.block_start[bj];
                    let nj = self.block_start[bj + 1] - sj;
                    let fj = self.first[bj];
                    let oj = sj - fi;
                    let c0 = fi.max(fj);
                    let width = sj - c0;
                    if width > 0 {
                        let upd = l_i.columns(c0 - fi, width) * g_before[bj].columns(c0 - fj, width).transpose();
                        let mut cols = g_i.columns_mut(oj, nj);
                        cols -= upd;
                    }
                    let lij = g_i.columns(oj, nj) * &self.dinv[bj];
                    l_i.columns_mut(oj, nj).copy_from(&lij);
                }
                let upd = &*l_i * g_i.transpose();
                self.d[bi] -= upd;
            }
            let d = &mut self.d[bi];
            let sym = (&*d + d.transpose()) * 0.5;
            d.copy_from(&sym);
            let sc = equilibrate(d, tol);
            let scaled = DMatrix::from_fn(d.nrows(), d.ncols(), |r, c| sc[r] * d[(r, c)] * sc[c]);
            let eig = SymmetricEigen::new(scaled);
            let mut inv_diag = eig.eigenvalues.clone();
            let block_tol = pivot_tol * inv_diag.amax();
            let mut singular = false;
            for lam in inv_diag.iter_mut() {
                if lam.abs() <= block_tol || !lam.is_finite() {
                    inertia.zero += 1;
                    singular = true;
                    *lam = 0.0;
                } else {
                    if *lam > 0.0 {
                        inertia.positive += 1;
                    } else {
                        inertia.negative += 1;
                    }
                    *lam = 1.0 / *lam;
                }
            }
            if singular {
                self.singular_blocks.push(bi);
            }
            let q = &eig.eigenvectors;
            let inner = q * DMatrix::from_diagonal(&inv_diag) * q.transpose();
            self.dinv[bi] = DMatrix::from_fn(inner.nrows(), inner.ncols(), |r, c| sc[r] * inner[(r, c)] * sc[c]);
        }
        self.inertia = inertia;
        inertia
    }

    pub fn inertia(&self) -> Inertia {
        self.inertia
    }

    /// Blocks whose pivot had a zero eigenvalue in the last factorization.
    pub fn singular_blocks(&self) -> &[usize] {
        &self.singular_blocks
    }

    /// Solves `L D Lᵀ x = b` in place (permuted order).
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let nb = self.d.len();
        // forward: y_I = b_I - L_I y[first..start]
        for bi in 0..nb {
            let (fi, si, ei) = (self.first[bi], self.block_start[bi], self.block_start[bi + 1]);
            if si > fi {
                let l = &self.l[bi];
                for r in 0..ei - si {
                    let mut acc = 0.0;
                    for (c, xv) in x[fi..si].iter().enumerate() {
                        acc += l[(r, c)] * xv;
                    }
                    x[si + r] -= acc;
                }
            }
        }
        for bi in 0..nb {
            let (si, ei) = (self.block_start[bi], self.block_start[bi + 1]);
            let y = nalgebra::DVector::from_column_slice(&x[si..ei]);
            let z = &self.dinv[bi] * y;
            x[si..ei].copy_from_slice(z.as_slice());
        }
        // backward: x[first..start] -= L_Kᵀ x_K, from the last block down
        for bi in (0..nb).rev() {
            let (fi, si, ei) = (self.first[bi], self.block_start[bi], self.block_start[bi + 1]);
            if si > fi {
                let l = &self.l[bi];
                for c in 0..si - fi {
                    let mut acc = 0.0;
                    for r in 0..ei - si {
                        acc += l[(r, c)] * x[si + r];
                    }
                    x[fi + c] -= acc;
                }
            }
        }
    }
}

/// A pivot block: variables paired with the constraints that pin them.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct KktBlock {
    pub vars: Vec<usize>,
    pub cons: Vec<usize>,
}

/// Unpaired variables beyond this count are not gathered into one dense tail.
const MAX_TAIL: usize = 256;
/// Below this size without a block hint the whole system is one dense block.
const DENSE_LIMIT: usize = 400;
const MAX_REFINE: usize = 5;

/// Symbolic and numeric state for repeated solves with a fixed KKT pattern.
#[derive(Debug, Clone)]
pub struct KktSystem {
    n: usize,
    m: usize,
    /// original index (vars then cons) -> permuted position
    pos: Vec<usize>,
    entries: Vec<(usize, usize)>,
    values: Vec<f64>,
    h_slot: Vec<usize>,
    j_slot: Vec<usize>,
    diag_slot: Vec<usize>,
    block_members: Vec<Vec<usize>>,
    ldl: BlockLdl,
    delta_c: f64,
    pub pivot_tol: f64,
}

impl KktSystem {
    /// `h_pattern` holds one triangle of H (either orientation), `j_pattern`
    /// the (constraint, variable) pattern of J.
    pub fn new(
        n: usize,
        m: usize,
        h_pattern: &[(usize, usize)],
        j_pattern: &[(usize, usize)],
        blocks: Option<Vec<KktBlock>>,
    ) -> Result<Self> {
        for &(r, c) in h_pattern {
            if r >= n || c >= n {
                return Err(Error::Dimension(format!("Hessian entry ({r}, {c}) outside {n} variables")));
            }
        }
        for &(r, c) in j_pattern {
            if r >= m || c >= n {
                return Err(Error::Dimension(format!("Jacobian entry ({r}, {c}) outside {m} x {n}")));
            }
        }
        let blocks = match blocks {
            Some(b) => {
                validate_blocks(&b, n, m)?;
                b
            }
            None if n + m <= DENSE_LIMIT => vec![KktBlock { vars: (0..n).collect(), cons: (0..m).collect() }],
            None => default_blocks(n, m, h_pattern, j_pattern),
        };
        let mut pos = vec![0; n + m];
        let mut sizes = Vec::with_capacity(blocks.len());
        let mut block_members = Vec::with_capacity(blocks.len());
        let mut p = 0;
        for b in &blocks {
            let mut members = Vec::new();
            for &v in &b.vars {
                pos[v] = p;
                p += 1;
                members.push(v);
            }
            for &c in &b.cons {
                pos[n + c] = p;
                p += 1;
                members.push(n + c);
            }
            sizes.push(b.vars.len() + b.cons.len());
            block_members.push(members);
        }
        let mut slot_of: HashMap<(usize, usize), usize> = HashMap::new();
        let mut entries = Vec::new();
        let mut slot = |a: usize, b: usize, entries: &mut Vec<(usize, usize)>| -> usize {
            let (pa, pb) = (pos[a], pos[b]);
            let key = if pa >= pb { (pa, pb) } else { (pb, pa) };
            *slot_of.entry(key).or_insert_with(|| {
                entries.push(key);
                entries.len() - 1
            })
        };
        let diag_slot: Vec<usize> = (0..n + m).map(|i| slot(i, i, &mut entries)).collect();
        let h_slot: Vec<usize> = h_pattern.iter().map(|&(r, c)| slot(r, c, &mut entries)).collect();
        let j_slot: Vec<usize> = j_pattern.iter().map(|&(r, c)| slot(n + r, c, &mut entries)).collect();
        let ldl = BlockLdl::new(&sizes, entries.iter().copied());
        Ok(KktSystem {
            n,
            m,
            pos,
            values: vec![0.0; entries.len()],
            entries,
            h_slot,
            j_slot,
            diag_slot,
            block_members,
            ldl,
            delta_c: 0.0,
            pivot_tol: 1e-13,
        })
    }

    pub fn num_variables(&self) -> usize {
        self.n
    }

    pub fn num_constraints(&self) -> usize {
        self.m
    }

    /// Assembles and factorizes `[[H + δI, Jᵀ], [J, −δc I]]`.
    pub fn factor(&mut self, h_values: &[f64], j_values: &[f64], delta: f64, delta_c: f64) -> Inertia {
        self.values.fill(0.0);
        for (s, v) in self.h_slot.iter().zip(h_values) {
            self.values[*s] += v;
        }
        for (s, v) in self.j_slot.iter().zip(j_values) {
            self.values[*s] += v;
        }
        for i in 0..self.n {
            self.values[self.diag_slot[i]] += delta;
        }
        for i in 0..self.m {
            self.values[self.diag_slot[self.n + i]] -= delta_c;
        }
        self.delta_c = delta_c;
        let triplets: Vec<(usize, usize, f64)> =
            self.entries.iter().zip(&self.values).map(|(&(r, c), &v)| (r, c, v)).collect();
        self.ldl.factor(&triplets, self.pivot_tol)
    }

    pub fn inertia(&self) -> Inertia {
        self.ldl.inertia()
    }

    /// Constraint indices belonging to blocks that were singular.
    pub fn singular_constraints(&self) -> Vec<usize> {
        let mut rows: Vec<usize> = self
            .ldl
            .singular_blocks()
            .iter()
            .flat_map(|&b| self.block_members[b].iter().copied())
            .filter(|&i| i >= self.n)
            .map(|i| i - self.n)
            .collect();
        rows.sort_unstable();
        rows
    }

    fn multiply_permuted(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        for (&(r, c), &v) in self.entries.iter().zip(&self.values) {
            y[r] += v * x[c];
            if r != c {
                y[c] += v * x[r];
            }
        }
        y
    }

    /// Solves the last factorized system; `rhs` is in original order
    /// (variables then constraints). Refines against the matrix without the
    /// constraint regularization while the residual keeps shrinking.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let dim = self.n + self.m;
        let mut b = vec![0.0; dim];
        for i in 0..dim {
            b[self.pos[i]] = rhs[i];
        }
        let mut x = b.clone();
        self.ldl.solve_in_place(&mut x);
        let residual = |x: &[f64]| -> Vec<f64> {
            let mut kx = self.multiply_permuted(x);
            for i in self.n..dim {
                kx[self.pos[i]] += self.delta_c * x[self.pos[i]];
            }
            b.iter().zip(&kx).map(|(a, b)| a - b).collect()
        };
        let mut r = residual(&x);
        let mut rnorm = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for _ in 0..MAX_REFINE {
            if rnorm == 0.0 {
                break;
            }
            self.ldl.solve_in_place(&mut r);
            let trial: Vec<f64> = x.iter().zip(&r).map(|(a, b)| a + b).collect();
            let r_new = residual(&trial);
            let n_new = r_new.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if !(n_new < rnorm) {
                break;
            }
            let done = n_new > 0.5 * rnorm;
            x = trial;
            r = r_new;
            rnorm = n_new;
            if done {
                break;
            }
        }
        (0..dim).map(|i| x[self.pos[i]]).collect()
    }
}

/// Symmetric Ruiz scaling `s` making the rows of `diag(s)·a·diag(s)` have
/// unit max-norm. Rows with max-norm at or below `floor` are zeroed and keep
/// unit scale.
fn equilibrate(a: &mut DMatrix<f64>, floor: f64) -> Vec<f64> {
    let n = a.nrows();
    for i in 0..n {
        if a.row(i).amax() <= floor {
            a.row_mut(i).fill(0.0);
            a.column_mut(i).fill(0.0);
        }
    }
    let mut s = vec![1.0; n];
    for _ in 0..20 {
        let mut done = true;
        for i in 0..n {
            let r = (0..n).fold(0.0f64, |m, j| m.max((s[i] * a[(i, j)] * s[j]).abs()));
            if r > 0.0 {
                if (r - 1.0).abs() > 1e-3 {
                    done = false;
                }
                s[i] /= r.sqrt();
            }
        }
        if done {
            break;
        }
    }
    s
}

fn validate_blocks(blocks: &[KktBlock], n: usize, m: usize) -> Result<()> {
    let mut seen_v = vec![false; n];
    let mut seen_c = vec![false; m];
    for b in blocks {
        for &v in &b.vars {
            if v >= n || std::mem::replace(&mut seen_v[v], true) {
                return Err(Error::Dimension(format!("pivot blocks list variable {v} twice or out of range")));
            }
        }
        for &c in &b.cons {
            if c >= m || std::mem::replace(&mut seen_c[c], true) {
                return Err(Error::Dimension(format!("pivot blocks list constraint {c} twice or out of range")));
            }
        }
    }
    if seen_v.iter().any(|s| !s) || seen_c.iter().any(|s| !s) {
        return Err(Error::Dimension("pivot blocks do not cover every variable and constraint".into()));
    }
    Ok(())
}

/// Greedy variable/constraint matching, reverse Cuthill–McKee over the
/// resulting block graph, unpaired variables last.
fn default_blocks(n: usize, m: usize, h_pattern: &[(usize, usize)], j_pattern: &[(usize, usize)]) -> Vec<KktBlock> {
    let mut row_cols: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut col_deg = vec![0usize; n];
    for &(r, c) in j_pattern {
        row_cols[r].push(c);
        col_deg[c] += 1;
    }
    let mut matched_var = vec![usize::MAX; n];
    let mut blocks: Vec<KktBlock> = Vec::new();
    let mut con_block = vec![usize::MAX; m];
    for (r, cols) in row_cols.iter().enumerate() {
        let best = cols.iter().copied().filter(|&c| matched_var[c] == usize::MAX).min_by_key(|&c| (col_deg[c], c));
        let mut b = KktBlock::default();
        b.cons.push(r);
        if let Some(c) = best {
            matched_var[c] = blocks.len();
            b.vars.push(c);
        }
        con_block[r] = blocks.len();
        blocks.push(b);
    }
    let unmatched: Vec<usize> = (0..n).filter(|&v| matched_var[v] == usize::MAX).collect();
    let gather_tail = unmatched.len() <= MAX_TAIL;
    let mut var_block = matched_var.clone();
    if !gather_tail {
        for &v in &unmatched {
            var_block[v] = blocks.len();
            blocks.push(KktBlock { vars: vec![v], cons: vec![] });
        }
    }
    let tail = if gather_tail && !unmatched.is_empty() {
        Some(KktBlock { vars: unmatched.clone(), cons: vec![] })
    } else {
        None
    };
    // block adjacency, excluding tail variables
    let nb = blocks.len();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nb];
    let mut link = |a: usize, b: usize| {
        if a != usize::MAX && b != usize::MAX && a != b {
            adj[a].push(b);
            adj[b].push(a);
        }
    };
    for &(r, c) in j_pattern {
        link(con_block[r], var_block[c]);
    }
    for &(r, c) in h_pattern {
        link(var_block[r], var_block[c]);
    }
    for a in adj.iter_mut() {
        a.sort_unstable();
        a.dedup();
    }
    let order = reverse_cuthill_mckee(&adj);
    let mut out: Vec<KktBlock> = order.into_iter().map(|b| std::mem::take(&mut blocks[b])).collect();
    out.extend(tail);
    out
}

fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&v| (adj[v].len(), v));
    for &start in &by_degree {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (adj[w].len(), w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn dense_lower(a: &DMatrix<f64>) -> Vec<(usize, usize, f64)> {
        let mut e = Vec::new();
        for r in 0..a.nrows() {
            for c in 0..=r {
                if a[(r, c)] != 0.0 {
                    e.push((r, c, a[(r, c)]));
                }
            }
        }
        e
    }

    #[test]
    fn block_ldl_matches_dense_solve() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        // banded indefinite matrix with a dense border
        let n = 40;
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(3)..=i {
                let v: f64 = rng.random_range(-1.0..1.0);
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
            a[(i, i)] += if i % 2 == 0 { 6.0 } else { -6.0 };
        }
        for i in 0..n {
            for j in n - 4..n {
                let v: f64 = rng.random_range(-1.0..1.0);
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        let sizes = vec![2; 18].into_iter().chain([4]).collect::<Vec<_>>();
        let entries = dense_lower(&a);
        let mut ldl = BlockLdl::new(&sizes, entries.iter().map(|e| (e.0, e.1)));
        let inertia = ldl.factor(&entries, 1e-14);
        let eig = a.clone().symmetric_eigenvalues();
        assert_eq!(inertia.positive, eig.iter().filter(|l| **l > 0.0).count());
        assert_eq!(inertia.negative, eig.iter().filter(|l| **l < 0.0).count());
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut x = b.clone();
        ldl.solve_in_place(&mut x);
        let oracle = a.lu().solve(&nalgebra::DVector::from_vec(b)).unwrap();
        for i in 0..n {
            assert!((x[i] - oracle[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn kkt_default_ordering_large() {
        // chain of constraints x_{k+1} - x_k = 1 with a diagonal Hessian
        let n = 600;
        let m = n - 1;
        let h: Vec<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
        let mut j = Vec::new();
        let mut jv = Vec::new();
        for k in 0..m {
            j.push((k, k));
            jv.push(-1.0);
            j.push((k, k + 1));
            jv.push(1.0);
        }
        let mut kkt = KktSystem::new(n, m, &h, &j, None).unwrap();
        let hv = vec![1.0; n];
        let inertia = kkt.factor(&hv, &jv, 0.0, 0.0);
        assert_eq!(inertia, Inertia { positive: n, negative: m, zero: 0 });
        let mut rhs = vec![0.0; n + m];
        for k in 0..m {
            rhs[n + k] = 1.0;
        }
        let sol = kkt.solve(&rhs);
        for k in 0..m {
            assert!((sol[k + 1] - sol[k] - 1.0).abs() < 1e-9);
        }
        // minimum norm: symmetric about zero
        assert!((sol[0] + sol[n - 1]).abs() < 1e-8);
    }

    #[test]
    fn rank_deficiency_shows_as_zero_inertia() {
        // two identical constraint rows
        let h = [(0, 0), (1, 1)];
        let j = [(0, 0), (0, 1), (1, 0), (1, 1)];
        let mut kkt = KktSystem::new(2, 2, &h, &j, None).unwrap();
        let inertia = kkt.factor(&[1.0, 1.0], &[1.0, 1.0, 1.0, 1.0], 0.0, 0.0);
        assert_eq!(inertia.zero, 1);
        let inertia = kkt.factor(&[1.0, 1.0], &[1.0, 1.0, 1.0, 1.0], 0.0, 1e-8);
        assert_eq!(inertia.zero, 0);
    }

    #[test]
    fn invalid_blocks_rejected() {
        let blocks = vec![KktBlock { vars: vec![0], cons: vec![] }];
        assert!(KktSystem::new(2, 0, &[(0, 0)], &[], Some(blocks)).is_err());
    }
}
