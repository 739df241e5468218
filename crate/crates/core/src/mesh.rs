//! Segment grids, Legendre–Gauss–Lobatto node meshes and the Lagrange-basis
//! integral coefficients used by the collocation defects.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::ExperimentData;

/// Relative tolerance for matching measurement times to mesh nodes.
pub const ALIGNMENT_TOLERANCE: f64 = 1e-9;

/// Evaluates the Legendre polynomial `P_n(x)` and `P_{n-1}(x)`.
fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p_prev, mut p) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let next = ((2.0 * kf - 1.0) * x * p - (kf - 1.0) * p_prev) / kf;
        p_prev = p;
        p = next;
    }
    (p, p_prev)
}

/// Legendre–Gauss–Lobatto nodes on `[-1, 1]`: the endpoints plus the roots of
/// `P'_{m-1}`, ascending.
pub fn lgl_nodes(m: usize) -> Result<Vec<f64>> {
    if m < 2 {
        return Err(Error::Domain(format!("LGL node count must be at least 2, got {m}")));
    }
    let n = m - 1;
    let nf = n as f64;
    // Newton on (1 - x²) P'_n(x) = n (P_{n-1} - x P_n), Chebyshev–Lobatto start
    let mut x: Vec<f64> = (0..m).map(|i| -(std::f64::consts::PI * i as f64 / nf).cos()).collect();
    for xi in x.iter_mut().take(n).skip(1) {
        for _ in 0..100 {
            let (p, p_prev) = legendre_pair(n, *xi);
            let dx = (*xi * p - p_prev) / ((nf + 1.0) * p);
            *xi -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
    }
    x[0] = -1.0;
    x[n] = 1.0;
    x.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // enforce exact antisymmetry
    for i in 0..m / 2 {
        let v = 0.5 * (x[m - 1 - i] - x[i]);
        x[i] = -v;
        x[m - 1 - i] = v;
    }
    if m % 2 == 1 {
        x[m / 2] = 0.0;
    }
    Ok(x)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, exact for degree `2q - 1`.
pub fn gauss_legendre(q: usize) -> (Vec<f64>, Vec<f64>) {
    let qf = q as f64;
    let mut nodes = vec![0.0; q];
    let mut weights = vec![0.0; q];
    for i in 0..q {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (qf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, p_prev) = legendre_pair(q, x);
            dp = qf * (x * p - p_prev) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (p, p_prev) = legendre_pair(q, x);
        dp = if p.is_finite() { qf * (x * p - p_prev) / (x * x - 1.0) } else { dp };
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    let mut idx: Vec<usize> = (0..q).collect();
    idx.sort_by(|a, b| nodes[*a].partial_cmp(&nodes[*b]).unwrap());
    (idx.iter().map(|&i| nodes[i]).collect(), idx.iter().map(|&i| weights[i]).collect())
}

/// `C[j][k] = ∫_{τ_k}^{τ_{k+1}} λ_j(τ) dτ`, an m × (m−1) matrix, where `λ_j`
/// is the Lagrange basis on `nodes`.
pub fn lagrange_integral_coeffs(nodes: &[f64]) -> Result<DMatrix<f64>> {
    let m = nodes.len();
    if m < 2 {
        return Err(Error::Domain("need at least two nodes".into()));
    }
    for w in nodes.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::Domain(format!("nodes not strictly increasing: {} then {}", w[0], w[1])));
        }
    }
    // Local coordinate keeps the products well scaled.
    let t0 = nodes[0];
    let span = nodes[m - 1] - t0;
    let s: Vec<f64> = nodes.iter().map(|t| (t - t0) / span).collect();
    let (gx, gw) = gauss_legendre(m.max(2));
    let mut c = DMatrix::zeros(m, m - 1);
    for k in 0..m - 1 {
        let (a, b) = (s[k], s[k + 1]);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (xq, wq) in gx.iter().zip(&gw) {
            let tau = mid + half * xq;
            for j in 0..m {
                let mut l = 1.0;
                for (i, si) in s.iter().enumerate() {
                    if i != j {
                        l *= (tau - si) / (s[j] - si);
                    }
                }
                c[(j, k)] += wq * half * l;
            }
        }
    }
    Ok(c * span)
}

/// Segment boundaries `t⁽¹⁾ < … < t⁽ⁿˢ⁺¹⁾`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentGrid {
    boundaries: Vec<f64>,
}

impl SegmentGrid {
    pub fn new(boundaries: Vec<f64>) -> Result<Self> {
        if boundaries.len() < 2 {
            return Err(Error::Domain("a grid needs at least one segment".into()));
        }
        for w in boundaries.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::Domain(format!("grid boundaries not strictly increasing: {} then {}", w[0], w[1])));
            }
        }
        Ok(SegmentGrid { boundaries })
    }

    /// One segment per sampling interval.
    pub fn from_times(times: &[f64]) -> Result<Self> {
        Self::new(times.to_vec())
    }

    /// Boundaries at every `stride`-th time, always ending at the last one.
    pub fn every(times: &[f64], stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Domain("stride must be at least 1".into()));
        }
        let mut b: Vec<f64> = times.iter().step_by(stride).copied().collect();
        if !(times.len() - 1).is_multiple_of(stride) {
            b.push(*times.last().unwrap());
        }
        Self::new(b)
    }

    /// `ns` segments whose boundaries are picked from `times` as evenly as
    /// possible (so that they stay aligned with measurements).
    pub fn split(times: &[f64], ns: usize) -> Result<Self> {
        let n = times.len();
        if ns == 0 || ns >= n {
            return Err(Error::Domain(format!("cannot split {n} samples into {ns} segments")));
        }
        let b = (0..=ns).map(|i| times[(i * (n - 1) + ns / 2) / ns]).collect();
        Self::new(b)
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn num_segments(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn duration(&self) -> f64 {
        self.boundaries[self.boundaries.len() - 1] - self.boundaries[0]
    }
}

/// One collocation segment: node times and its integral coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshSegment {
    pub nodes: Vec<f64>,
    /// m × (m−1).
    pub coeffs: DMatrix<f64>,
}

/// Where a measurement sits on the mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeshPoint {
    pub segment: usize,
    pub node: usize,
    /// Node index in the global numbering where shared boundaries appear once.
    pub global: usize,
}

/// Per-segment LGL meshes with precomputed coefficients and the map from
/// measurement index to mesh node.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationMesh {
    segments: Vec<MeshSegment>,
    offsets: Vec<usize>,
    node_times: Vec<f64>,
    measurements: Vec<MeshPoint>,
}

impl CollocationMesh {
    /// Builds the node layout for `grid` without any measurement map.
    pub fn from_grid(grid: &SegmentGrid, nodes_per_segment: &[usize]) -> Result<Self> {
        let ns = grid.num_segments();
        if nodes_per_segment.len() != ns {
            return Err(Error::Dimension(format!("{} node counts for {ns} segments", nodes_per_segment.len())));
        }
        let mut segments = Vec::with_capacity(ns);
        let mut offsets = Vec::with_capacity(ns);
        let mut node_times = vec![grid.boundaries[0]];
        for (i, &m) in nodes_per_segment.iter().enumerate() {
            let (a, b) = (grid.boundaries[i], grid.boundaries[i + 1]);
            let reference = lgl_nodes(m)?;
            let mut nodes: Vec<f64> = reference.iter().map(|x| a + 0.5 * (x + 1.0) * (b - a)).collect();
            nodes[0] = a;
            nodes[m - 1] = b;
            let coeffs = lagrange_integral_coeffs(&nodes)?;
            offsets.push(node_times.len() - 1);
            node_times.extend_from_slice(&nodes[1..]);
            segments.push(MeshSegment { nodes, coeffs });
        }
        Ok(CollocationMesh { segments, offsets, node_times, measurements: Vec::new() })
    }

    /// Maps every time in `times` onto a mesh node.
    pub fn align(mut self, times: &[f64]) -> Result<Self> {
        let t0 = self.node_times[0];
        let t1 = *self.node_times.last().unwrap();
        let tol = ALIGNMENT_TOLERANCE * (t1 - t0);
        let mut out = Vec::with_capacity(times.len());
        for &t in times {
            if t < t0 - tol || t > t1 + tol {
                return Err(Error::MeshAlignment { time: t });
            }
            let idx = self.node_times.partition_point(|&n| n < t - tol);
            if idx >= self.node_times.len() || (self.node_times[idx] - t).abs() > tol {
                return Err(Error::MeshAlignment { time: t });
            }
            if idx + 1 < self.node_times.len() && (self.node_times[idx + 1] - t).abs() <= tol {
                return Err(Error::MeshAlignment { time: t });
            }
            out.push(self.locate(idx));
        }
        self.measurements = out;
        Ok(self)
    }

    fn locate(&self, global: usize) -> MeshPoint {
        // first segment containing the node
        let seg = match self.offsets.binary_search(&global) {
            Ok(i) if i > 0 => i - 1,
            Ok(i) => i,
            Err(i) => i - 1,
        };
        MeshPoint { segment: seg, node: global - self.offsets[seg], global }
    }

    pub fn segments(&self) -> &[MeshSegment] {
        &self.segments
    }

    pub fn num_segments(&self) -> usize {
        self.segments.len()
    }

    /// Total distinct nodes.
    pub fn num_nodes(&self) -> usize {
        self.node_times.len()
    }

    pub fn node_times(&self) -> &[f64] {
        &self.node_times
    }

    /// Global index of node `node` of segment `segment`.
    pub fn global_index(&self, segment: usize, node: usize) -> usize {
        self.offsets[segment] + node
    }

    pub fn measurements(&self) -> &[MeshPoint] {
        &self.measurements
    }

    /// Number of sub-intervals (defect blocks) across all segments.
    pub fn num_intervals(&self) -> usize {
        self.segments.iter().map(|s| s.nodes.len() - 1).sum()
    }
}

/// Builds LGL meshes with `nodes_per_segment` nodes on every segment of
/// `grid` and maps the measurement times of `data` onto them.
pub fn build_mesh(grid: &SegmentGrid, nodes_per_segment: usize, data: &ExperimentData) -> Result<CollocationMesh> {
    let counts = vec![nodes_per_segment; grid.num_segments()];
    CollocationMesh::from_grid(grid, &counts)?.align(&data.times)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InputSignal;

    /// Bisection on a sign change, the independent root oracle.
    fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
        let mut fa = f(a);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            let fm = f(m);
            if fa * fm <= 0.0 {
                b = m;
            } else {
                a = m;
                fa = fm;
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn lgl_small_cases() {
        assert_eq!(lgl_nodes(2).unwrap(), vec![-1.0, 1.0]);
        let n3 = lgl_nodes(3).unwrap();
        let r = bisect(|x| 3.0 * x, -0.5, 0.7);
        assert!((n3[1] - r).abs() < 1e-12 && n3[0] == -1.0 && n3[2] == 1.0);
        let n4 = lgl_nodes(4).unwrap();
        let r = bisect(|x| 5.0 * x * x - 1.0, 0.0, 1.0);
        assert!((n4[2] - r).abs() < 1e-12);
        assert!((n4[1] + r).abs() < 1e-12);
        assert!((r - 0.447_213_595_5).abs() < 1e-10);
        assert!(matches!(lgl_nodes(1), Err(Error::Domain(_))));
    }

    #[test]
    fn lgl_roots_of_legendre_derivative() {
        for m in 3..=20 {
            let n = m - 1;
            let x = lgl_nodes(m).unwrap();
            for (i, xi) in x.iter().enumerate() {
                assert!((xi + x[m - 1 - i]).abs() <= 1e-12);
                if i > 0 && i < m - 1 {
                    let (p, pp) = legendre_pair(n, *xi);
                    // (1 - x²) P'_n = n (P_{n-1} - x P_n)
                    assert!((n as f64 * (pp - xi * p)).abs() < 1e-12, "m={m} i={i}");
                }
            }
            assert!(x.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn gauss_legendre_weights_sum() {
        for q in 1..12 {
            let (x, w) = gauss_legendre(q);
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
            // exact for x^(2q-2)
            let d = 2 * q - 2;
            let exact = if d % 2 == 0 { 2.0 / (d as f64 + 1.0) } else { 0.0 };
            let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(d as i32)).sum();
            assert!((s - exact).abs() < 1e-13);
        }
    }

    #[test]
    fn trapezoid_for_two_nodes() {
        let c = lagrange_integral_coeffs(&[0.0, 0.3]).unwrap();
        assert_eq!(c.shape(), (2, 1));
        assert!((c[(0, 0)] - 0.15).abs() < 1e-16 && (c[(1, 0)] - 0.15).abs() < 1e-16);
    }

    #[test]
    fn quadratic_basis_column() {
        let h = 0.7;
        let c = lagrange_integral_coeffs(&[0.0, h, 2.0 * h]).unwrap();
        // composite Simpson with 2000 panels on each basis polynomial
        let nodes = [0.0, h, 2.0 * h];
        let basis = |j: usize, t: f64| {
            (0..3).filter(|&i| i != j).map(|i| (t - nodes[i]) / (nodes[j] - nodes[i])).product::<f64>()
        };
        for j in 0..3 {
            let n = 2000;
            let dt = h / n as f64;
            let mut s = basis(j, 0.0) + basis(j, h);
            for k in 1..n {
                s += if k % 2 == 1 { 4.0 } else { 2.0 } * basis(j, k as f64 * dt);
            }
            let oracle = s * dt / 3.0;
            assert!((c[(j, 0)] - oracle).abs() < 1e-12);
        }
        assert!((c[(0, 0)] - 5.0 * h / 12.0).abs() < 1e-14);
        assert!((c[(1, 0)] - 2.0 * h / 3.0).abs() < 1e-14);
        assert!((c[(2, 0)] + h / 12.0).abs() < 1e-14);
    }

    #[test]
    fn repeated_nodes_rejected() {
        assert!(lagrange_integral_coeffs(&[0.0, 1.0, 1.0]).is_err());
        assert!(lagrange_integral_coeffs(&[0.0]).is_err());
    }

    fn data_on(times: Vec<f64>) -> ExperimentData {
        let n = times.len();
        ExperimentData::new(times.clone(), DMatrix::zeros(n, 1), InputSignal::empty(times).unwrap()).unwrap()
    }

    #[test]
    fn mesh_on_measurement_grid() {
        let times: Vec<f64> = (0..11).map(|k| 0.1 * k as f64).collect();
        let data = data_on(times.clone());
        let grid = SegmentGrid::from_times(&times).unwrap();
        let mesh = build_mesh(&grid, 2, &data).unwrap();
        assert_eq!(mesh.num_nodes(), 11);
        for (k, p) in mesh.measurements().iter().enumerate() {
            assert_eq!(p.global, k);
        }
        let mesh3 = build_mesh(&grid, 3, &data).unwrap();
        assert_eq!(mesh3.num_nodes(), 21);
        for (k, p) in mesh3.measurements().iter().enumerate() {
            assert_eq!(p.global, 2 * k);
            assert!(p.node == 0 || p.node == 2);
        }
        let s = &mesh3.segments()[4];
        assert!((s.nodes[1] - 0.45).abs() < 1e-12);
    }

    #[test]
    fn coarse_grid_misaligns() {
        let times: Vec<f64> = (0..11).map(|k| 0.1 * k as f64).collect();
        let data = data_on(times.clone());
        let grid = SegmentGrid::every(&times, 2).unwrap();
        match build_mesh(&grid, 2, &data) {
            Err(Error::MeshAlignment { time }) => assert!((time - 0.1).abs() < 1e-12),
            other => panic!("expected alignment error, got {other:?}"),
        }
        // three LGL nodes put the midpoint exactly on the odd samples
        assert!(build_mesh(&grid, 3, &data).is_ok());
    }

    #[test]
    fn alignment_tolerates_roundoff() {
        let times: Vec<f64> = (0..11).map(|k| 0.1 * k as f64).collect();
        let grid = SegmentGrid::new((0..11).map(|k| k as f64 / 10.0).collect()).unwrap();
        let mesh = CollocationMesh::from_grid(&grid, &[2; 10]).unwrap().align(&times).unwrap();
        assert_eq!(mesh.measurements().len(), 11);
    }

    #[test]
    fn split_grid_hits_samples() {
        let times: Vec<f64> = (0..500).map(|k| 0.02 * k as f64).collect();
        let g = SegmentGrid::split(&times, 4).unwrap();
        assert_eq!(g.num_segments(), 4);
        for b in g.boundaries() {
            assert!(times.iter().any(|t| t == b));
        }
        assert_eq!(g.boundaries()[0], 0.0);
        assert_eq!(*g.boundaries().last().unwrap(), times[499]);
    }
}
