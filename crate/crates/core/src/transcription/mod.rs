//! Transcriptions of the output-error problem into NLPs.
//!
//! All three share the parameter block at the front of the decision vector:
//! model parameters followed by the metric's own parameters (for example the
//! `ln σ` of each output channel). What follows depends on the method:
//!
//! | transcription     | state blocks                                   | constraints            |
//! |-------------------|------------------------------------------------|------------------------|
//! | collocation       | every mesh node (shared boundaries once)       | defects (+ x0 map)     |
//! | multiple shooting | start of segments 2…ns (+ segment 1 if free)   | continuity             |
//! | single shooting   | the initial state when the model has no x0 map | none                   |
//!
//! The objective is the negative log-likelihood `Σ_k L(z_k − ŷ_k, φ)`.

mod collocation;
mod shooting;

use std::ops::Range;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{DynamicalModel, ExperimentData, Metric, MetricHessian};
use crate::nlp::NlpProblem;

pub use collocation::{CollocationOptions, CollocationProblem};
pub use shooting::{ShootingOptions, ShootingProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TranscriptionKind {
    Collocation,
    MultipleShooting,
    SingleShooting,
}

impl std::str::FromStr for TranscriptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "collocation" => Ok(TranscriptionKind::Collocation),
            "multiple-shooting" => Ok(TranscriptionKind::MultipleShooting),
            "single-shooting" => Ok(TranscriptionKind::SingleShooting),
            other => Err(Error::Config(format!(
                "unknown transcription `{other}` (expected collocation, multiple-shooting or single-shooting)"
            ))),
        }
    }
}

impl std::fmt::Display for TranscriptionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TranscriptionKind::Collocation => "collocation",
            TranscriptionKind::MultipleShooting => "multiple-shooting",
            TranscriptionKind::SingleShooting => "single-shooting",
        })
    }
}

/// Index map of the decision vector ξ.
///
/// ξ = [θ_model, θ_metric, state block 0, state block 1, …]; every state
/// block has `nx` entries and an associated time. In collocation the blocks
/// are the global mesh nodes, so the last node of segment i and the first
/// node of segment i+1 resolve to the same block.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionLayout {
    kind: TranscriptionKind,
    model_params: usize,
    metric_params: usize,
    nx: usize,
    block_times: Vec<f64>,
    /// Collocation: first global node of each segment. Shooting: the state
    /// block holding each segment's start, if it is a decision variable.
    segment_index: Vec<Option<usize>>,
}

impl DecisionLayout {
    pub(crate) fn new(
        kind: TranscriptionKind,
        model_params: usize,
        metric_params: usize,
        nx: usize,
        block_times: Vec<f64>,
        segment_index: Vec<Option<usize>>,
    ) -> Self {
        DecisionLayout { kind, model_params, metric_params, nx, block_times, segment_index }
    }

    pub fn kind(&self) -> TranscriptionKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.num_theta() + self.nx * self.block_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    /// Model and metric parameters together.
    pub fn num_theta(&self) -> usize {
        self.model_params + self.metric_params
    }

    pub fn theta(&self) -> Range<usize> {
        0..self.num_theta()
    }

    pub fn model_params(&self) -> Range<usize> {
        0..self.model_params
    }

    pub fn metric_params(&self) -> Range<usize> {
        self.model_params..self.num_theta()
    }

    pub fn num_state_blocks(&self) -> usize {
        self.block_times.len()
    }

    pub fn state_block(&self, block: usize) -> Range<usize> {
        let s = self.num_theta() + block * self.nx;
        s..s + self.nx
    }

    pub fn block_times(&self) -> &[f64] {
        &self.block_times
    }

    pub fn num_segments(&self) -> usize {
        self.segment_index.len()
    }

    /// Collocation only: indices of node `node` of segment `segment`.
    pub fn node(&self, segment: usize, node: usize) -> Range<usize> {
        debug_assert_eq!(self.kind, TranscriptionKind::Collocation);
        self.state_block(self.segment_index[segment].expect("collocation segments always start on a node") + node)
    }

    /// Shooting only: indices of the start state of `segment`, when that
    /// state is a decision variable.
    pub fn segment_start(&self, segment: usize) -> Option<Range<usize>> {
        self.segment_index[segment].map(|b| self.state_block(b))
    }

    /// Lower-triangle Hessian pattern for objectives that couple θ with
    /// itself and each state block with itself and with θ: the θθ triangle
    /// first, then per block its xx triangle followed by its x×θ rectangle.
    pub(crate) fn hessian_structure(&self) -> Vec<(usize, usize)> {
        let nt = self.num_theta();
        let mut s = Vec::with_capacity(self.hessian_nnz());
        for r in 0..nt {
            for c in 0..=r {
                s.push((r, c));
            }
        }
        for b in 0..self.num_state_blocks() {
            let o = self.state_block(b).start;
            for a in 0..self.nx {
                for c in 0..=a {
                    s.push((o + a, o + c));
                }
            }
            for a in 0..self.nx {
                for t in 0..nt {
                    s.push((o + a, t));
                }
            }
        }
        s
    }

    pub(crate) fn hessian_nnz(&self) -> usize {
        let nt = self.num_theta();
        nt * (nt + 1) / 2 + self.num_state_blocks() * self.block_hessian_len()
    }

    fn block_hessian_len(&self) -> usize {
        self.nx * (self.nx + 1) / 2 + self.nx * self.num_theta()
    }

    /// Position in [`hessian_structure`](Self::hessian_structure) of the
    /// entry between local variables `i >= j`, where local indices number θ
    /// first and then the `nx` states of `block` (if any).
    pub(crate) fn hessian_slot(&self, block: Option<usize>, i: usize, j: usize) -> usize {
        let nt = self.num_theta();
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i < nt {
            return i * (i + 1) / 2 + j;
        }
        let b = block.expect("state entry without a state block");
        let base = nt * (nt + 1) / 2 + b * self.block_hessian_len();
        let a = i - nt;
        if j < nt {
            base + self.nx * (self.nx + 1) / 2 + a * nt + j
        } else {
            let c = j - nt;
            base + a * (a + 1) / 2 + c
        }
    }
}

/// Columns touched by the objective gradient and the constraint Jacobian pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityPattern {
    pub gradient: Vec<usize>,
    pub jacobian: Vec<(usize, usize)>,
}

impl SparsityPattern {
    /// Nonzeros of the Jacobian over its total size.
    pub fn jacobian_density(&self, rows: usize, cols: usize) -> f64 {
        if rows == 0 || cols == 0 {
            return 0.0;
        }
        let mut entries = self.jacobian.clone();
        entries.sort_unstable();
        entries.dedup();
        entries.len() as f64 / (rows * cols) as f64
    }
}

/// Behavior shared by all transcriptions.
pub trait EstimationProblem: NlpProblem {
    fn layout(&self) -> &DecisionLayout;

    fn model(&self) -> &dyn DynamicalModel;

    fn metric(&self) -> &Metric;

    fn data(&self) -> &ExperimentData;

    /// `ŷ` at every measurement time, N × ny.
    fn predicted_outputs(&self, xi: &[f64]) -> Result<DMatrix<f64>>;

    fn sparsity(&self) -> SparsityPattern;

    /// Parameter names in decision-vector order (model, then metric).
    fn theta_names(&self) -> Vec<String> {
        let mut names = self.model().param_names();
        names.extend(self.metric().param_names(&self.data().output_names));
        names
    }
}

/// Sparsity of the objective gradient and the constraint Jacobian.
pub fn jacobian_sparsity(problem: &dyn EstimationProblem) -> SparsityPattern {
    problem.sparsity()
}

/// Builds ξ0: θ0 in the parameter block (padded with zeros or truncated to
/// the layout; non-finite entries become zero), and each state block filled
/// from the measured channel mapped to that state, linearly interpolated in
/// time between the neighbouring samples. States without a channel are zero.
///
/// `state_channel_map[i] = Some(c)` means state `i` is measured by output
/// channel `c`.
pub fn initial_guess(
    layout: &DecisionLayout,
    data: &ExperimentData,
    theta0: &[f64],
    state_channel_map: &[Option<usize>],
) -> Vec<f64> {
    let mut xi = vec![0.0; layout.len()];
    for (dst, src) in xi[layout.theta()].iter_mut().zip(theta0) {
        *dst = if src.is_finite() { *src } else { 0.0 };
    }
    let times = &data.times;
    let n = times.len();
    for b in 0..layout.num_state_blocks() {
        let t = layout.block_times()[b];
        let hi = times.partition_point(|&s| s < t).clamp(1, n - 1);
        let lo = hi - 1;
        let w = ((t - times[lo]) / (times[hi] - times[lo])).clamp(0.0, 1.0);
        let range = layout.state_block(b);
        for (i, ch) in state_channel_map.iter().take(layout.nx()).enumerate() {
            if let Some(c) = *ch {
                if c < data.ny() {
                    let v = (1.0 - w) * data.outputs[(lo, c)] + w * data.outputs[(hi, c)];
                    xi[range.start + i] = if v.is_finite() { v } else { 0.0 };
                }
            }
        }
    }
    xi
}

/// Per-measurement evaluation of the cost and its derivatives.
pub(crate) struct MeasurementTerms<'a> {
    model: &'a dyn DynamicalModel,
    metric: &'a Metric,
    pub nx: usize,
    pub np: usize,
    pub nm: usize,
    pub ny: usize,
    y: Vec<f64>,
    eps: Vec<f64>,
    pub g_eps: Vec<f64>,
    pub g_phi: Vec<f64>,
    pub gx: DMatrix<f64>,
    pub gp: DMatrix<f64>,
    w: DMatrix<f64>,
    d: DMatrix<f64>,
    hg: DMatrix<f64>,
}

impl<'a> MeasurementTerms<'a> {
    pub fn new(model: &'a dyn DynamicalModel, metric: &'a Metric) -> Self {
        let dims = model.dims();
        let nm = metric.num_params();
        MeasurementTerms {
            model,
            metric,
            nx: dims.nx,
            np: dims.np,
            nm,
            ny: dims.ny,
            y: vec![0.0; dims.ny],
            eps: vec![0.0; dims.ny],
            g_eps: vec![0.0; dims.ny],
            g_phi: vec![0.0; nm],
            gx: DMatrix::zeros(dims.ny, dims.nx),
            gp: DMatrix::zeros(dims.ny, dims.np),
            w: DMatrix::zeros(dims.ny + nm, dims.ny + nm),
            d: DMatrix::zeros(dims.ny + nm, dims.nx + dims.np + nm),
            hg: DMatrix::zeros(dims.nx + dims.np, dims.nx + dims.np),
        }
    }

    /// `ŷ = g(x, u, θ)`; returns `None` when non-finite.
    pub fn output(&mut self, x: &[f64], u: &[f64], theta: &[f64]) -> Result<Option<&[f64]>> {
        self.model.output(x, u, &theta[..self.np], &mut self.y)?;
        Ok(self.y.iter().all(|v| v.is_finite()).then_some(&self.y[..]))
    }

    fn residual(&mut self, x: &[f64], u: &[f64], theta: &[f64], z: &[f64]) -> Result<bool> {
        self.model.output(x, u, &theta[..self.np], &mut self.y)?;
        for i in 0..self.ny {
            self.eps[i] = z[i] - self.y[i];
        }
        Ok(self.y.iter().all(|v| v.is_finite()))
    }

    /// Cost of one measurement; `None` when the model output is non-finite.
    pub fn cost(&mut self, x: &[f64], u: &[f64], theta: &[f64], z: &[f64]) -> Result<Option<f64>> {
        if !self.residual(x, u, theta, z)? {
            return Ok(None);
        }
        let c = self.metric.cost(&self.eps, &theta[self.np..])?;
        Ok(c.is_finite().then_some(c))
    }

    /// Cost plus `g_eps = ∂L/∂ε`, `g_phi = ∂L/∂φ`, `gx = ∂g/∂x`, `gp = ∂g/∂θ`.
    pub fn gradient(&mut self, x: &[f64], u: &[f64], theta: &[f64], z: &[f64]) -> Result<Option<f64>> {
        if !self.residual(x, u, theta, z)? {
            return Ok(None);
        }
        let c = self.metric.cost_gradient(&self.eps, &theta[self.np..], &mut self.g_eps, &mut self.g_phi)?;
        self.model.output_jacobian(x, u, &theta[..self.np], &mut self.gx, &mut self.gp)?;
        Ok(c.is_finite().then_some(c))
    }

    /// Hessian of the cost over local variables `[θ_model, φ, x]`, assuming
    /// `x` enters directly. With `exact`, the output curvature term is added.
    /// Requires a preceding [`gradient`](Self::gradient) call at the same point.
    pub fn hessian_direct(
        &mut self,
        x: &[f64],
        u: &[f64],
        theta: &[f64],
        exact: bool,
        out: &mut DMatrix<f64>,
    ) -> Result<()> {
        let (nx, np, nm, ny) = (self.nx, self.np, self.nm, self.ny);
        let kind = if exact { MetricHessian::Exact } else { MetricHessian::PositiveSemidefinite };
        self.metric.cost_hessian(&self.eps, &theta[np..], kind, &mut self.w)?;
        // D maps [θ_model, φ, x] to [ε, φ]
        self.d.fill(0.0);
        for r in 0..ny {
            for c in 0..np {
                self.d[(r, c)] = -self.gp[(r, c)];
            }
            for c in 0..nx {
                self.d[(r, np + nm + c)] = -self.gx[(r, c)];
            }
        }
        for i in 0..nm {
            self.d[(ny + i, np + i)] = 1.0;
        }
        let wd = &self.w * &self.d;
        out.gemm_tr(1.0, &self.d, &wd, 0.0);
        if exact {
            let weights: Vec<f64> = self.g_eps.iter().map(|g| -g).collect();
            self.model.output_hessian(x, u, &theta[..np], &weights, &mut self.hg)?;
            // hg is over [x, θ_model]
            for a in 0..nx + np {
                let la = if a < nx { np + nm + a } else { a - nx };
                for b in 0..nx + np {
                    let lb = if b < nx { np + nm + b } else { b - nx };
                    out[(la, lb)] += self.hg[(a, b)];
                }
            }
        }
        Ok(())
    }

    /// Gauss–Newton Hessian when `x = S_θ θ_model + S_s s`: local variables
    /// are `[θ_model, φ, s]` and `sens` is nx × (np + nx).
    pub fn hessian_chained(&mut self, theta: &[f64], sens: &DMatrix<f64>, out: &mut DMatrix<f64>) -> Result<()> {
        let (nx, np, nm, ny) = (self.nx, self.np, self.nm, self.ny);
        self.metric.cost_hessian(&self.eps, &theta[np..], MetricHessian::PositiveSemidefinite, &mut self.w)?;
        let gs = &self.gx * sens;
        self.d.fill(0.0);
        for r in 0..ny {
            for c in 0..np {
                self.d[(r, c)] = -gs[(r, c)] - self.gp[(r, c)];
            }
            for c in 0..nx {
                self.d[(r, np + nm + c)] = -gs[(r, np + c)];
            }
        }
        for i in 0..nm {
            self.d[(ny + i, np + i)] = 1.0;
        }
        let wd = &self.w * &self.d;
        out.gemm_tr(1.0, &self.d, &wd, 0.0);
        Ok(())
    }
}

/// Checks that model, data and metric agree on dimensions.
pub(crate) fn check_dimensions(model: &dyn DynamicalModel, data: &ExperimentData, metric: &Metric) -> Result<()> {
    let d = model.dims();
    if data.ny() != d.ny {
        return Err(Error::Dimension(format!("data has {} output channels, model has {}", data.ny(), d.ny)));
    }
    if data.input.nu() != d.nu {
        return Err(Error::Dimension(format!("data has {} input channels, model has {}", data.input.nu(), d.nu)));
    }
    let probe = vec![0.0; d.ny];
    let params = vec![0.0; metric.num_params()];
    metric.cost(&probe, &params).map(|_| ())
}

#[cfg(test)]
pub(crate) mod test_models {
    use super::*;
    use crate::model::ModelDims;

    /// ẋ = a·x + b·u, y = x; optional x0 = c.
    pub struct Linear1 {
        pub with_x0: bool,
    }

    impl DynamicalModel for Linear1 {
        fn dims(&self) -> ModelDims {
            ModelDims { nx: 1, ny: 1, nu: 1, np: if self.with_x0 { 3 } else { 2 } }
        }
        fn param_names(&self) -> Vec<String> {
            let mut v = vec!["a".to_string(), "b".to_string()];
            if self.with_x0 {
                v.push("c".into());
            }
            v
        }
        fn dynamics(&self, x: &[f64], u: &[f64], p: &[f64], out: &mut [f64]) -> Result<()> {
            out[0] = p[0] * x[0] + p[1] * u[0];
            Ok(())
        }
        fn output(&self, x: &[f64], _: &[f64], _: &[f64], out: &mut [f64]) -> Result<()> {
            out[0] = x[0];
            Ok(())
        }
        fn output_param_dependency(&self) -> Vec<bool> {
            vec![false; self.dims().np]
        }
        fn dynamics_param_dependency(&self) -> Vec<bool> {
            let mut v = vec![true, true];
            if self.with_x0 {
                v.push(false);
            }
            v
        }
        fn has_initial_state_map(&self) -> bool {
            self.with_x0
        }
        fn initial_state(&self, p: &[f64], out: &mut [f64]) -> Result<()> {
            out[0] = p[2];
            Ok(())
        }
    }

    /// ẋ = c (constant vector field of dimension nx), y = x.
    pub struct Constant {
        pub rate: f64,
    }

    impl DynamicalModel for Constant {
        fn dims(&self) -> ModelDims {
            ModelDims { nx: 1, ny: 1, nu: 0, np: 0 }
        }
        fn param_names(&self) -> Vec<String> {
            Vec::new()
        }
        fn dynamics(&self, _: &[f64], _: &[f64], _: &[f64], out: &mut [f64]) -> Result<()> {
            out[0] = self.rate;
            Ok(())
        }
        fn output(&self, x: &[f64], _: &[f64], _: &[f64], out: &mut [f64]) -> Result<()> {
            out[0] = x[0];
            Ok(())
        }
    }

    /// ẋ = 3t² realized with an extra clock state: x = [y, t].
    pub struct Cubic;

    impl DynamicalModel for Cubic {
        fn dims(&self) -> ModelDims {
            ModelDims { nx: 2, ny: 1, nu: 0, np: 0 }
        }
        fn param_names(&self) -> Vec<String> {
            Vec::new()
        }
        fn dynamics(&self, x: &[f64], _: &[f64], _: &[f64], out: &mut [f64]) -> Result<()> {
            out[0] = 3.0 * x[1] * x[1];
            out[1] = 1.0;
            Ok(())
        }
        fn output(&self, x: &[f64], _: &[f64], _: &[f64], out: &mut [f64]) -> Result<()> {
            out[0] = x[0];
            Ok(())
        }
    }

    /// `n` samples of x(t) = e^{−t} on [0, T] with a zero input.
    pub fn exp_data(n: usize, t_end: f64) -> ExperimentData {
        let times: Vec<f64> = (0..n).map(|k| t_end * k as f64 / (n - 1) as f64).collect();
        let z = DMatrix::from_iterator(n, 1, times.iter().map(|t| (-t).exp()));
        let input = crate::model::InputSignal::new(times.clone(), DMatrix::zeros(n, 1)).unwrap();
        ExperimentData::new(times, z, input).unwrap()
    }
}
