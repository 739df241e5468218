use std::sync::Arc;

use nalgebra::DMatrix;

use super::{
    check_dimensions, DecisionLayout, EstimationProblem, MeasurementTerms, SparsityPattern, TranscriptionKind,
};
use crate::error::{Error, Result};
use crate::linalg::KktBlock;
use crate::mesh::CollocationMesh;
use crate::model::{DynamicalModel, ExperimentData, Metric};
use crate::nlp::{HessianKind, NlpProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CollocationOptions {
    /// Whether to impose `x̂₁ = x0(θ)`. `None` turns it on exactly when the
    /// model has an initial-state map; otherwise the first node is free.
    pub initial_state_constraint: Option<bool>,
}

/// Collocation transcription: states at every mesh node are decision
/// variables, tied together by the defect equations
/// `x̂_{k+1} − x̂_k − Σ_j C_{jk} f(x̂_j, u(τ_j), θ) = 0`.
///
/// Constraint rows: the `nx` defect rows of every sub-interval in time
/// order, followed by the `nx` initial-state rows when active.
pub struct CollocationProblem {
    model: Arc<dyn DynamicalModel>,
    data: ExperimentData,
    mesh: CollocationMesh,
    metric: Metric,
    layout: DecisionLayout,
    init_constraint: bool,
    u_nodes: Vec<Vec<f64>>,
    /// (segment, local node) of each global node, first segment wins.
    node_owner: Vec<(usize, usize)>,
    /// First global interval index of each segment.
    interval_offset: Vec<usize>,
    dyn_params: Vec<usize>,
    jac_pattern: Vec<(usize, usize)>,
}

struct NodeEval {
    f: Vec<Vec<f64>>,
    fx: Vec<DMatrix<f64>>,
    fp: Vec<DMatrix<f64>>,
}

impl CollocationProblem {
    pub fn new(
        model: Arc<dyn DynamicalModel>,
        data: &ExperimentData,
        mesh: CollocationMesh,
        metric: Metric,
        options: CollocationOptions,
    ) -> Result<Self> {
        check_dimensions(model.as_ref(), data, &metric)?;
        let mesh = mesh.align(&data.times)?;
        let d = model.dims();
        let init_constraint = match options.initial_state_constraint {
            None => model.has_initial_state_map(),
            Some(true) if !model.has_initial_state_map() => {
                return Err(Error::Config(
                    "initial-state constraint requested but the model has no initial-state map".into(),
                ))
            }
            Some(flag) => flag,
        };
        let mut u_nodes = Vec::with_capacity(mesh.num_nodes());
        for &t in mesh.node_times() {
            u_nodes.push(data.input.interpolate(t)?);
        }
        let mut node_owner = vec![(0, 0); mesh.num_nodes()];
        let mut interval_offset = Vec::with_capacity(mesh.num_segments());
        let mut q = 0;
        for (i, seg) in mesh.segments().iter().enumerate().rev() {
            for k in 0..seg.nodes.len() {
                node_owner[mesh.global_index(i, k)] = (i, k);
            }
        }
        for seg in mesh.segments() {
            interval_offset.push(q);
            q += seg.nodes.len() - 1;
        }
        let segment_index = (0..mesh.num_segments()).map(|i| Some(mesh.global_index(i, 0))).collect();
        let layout = DecisionLayout::new(
            TranscriptionKind::Collocation,
            d.np,
            metric.num_params(),
            d.nx,
            mesh.node_times().to_vec(),
            segment_index,
        );
        let dyn_params: Vec<usize> =
            model.dynamics_param_dependency().iter().enumerate().filter_map(|(i, &dep)| dep.then_some(i)).collect();
        let mut problem = CollocationProblem {
            model,
            data: data.clone(),
            mesh,
            metric,
            layout,
            init_constraint,
            u_nodes,
            node_owner,
            interval_offset,
            dyn_params,
            jac_pattern: Vec::new(),
        };
        problem.jac_pattern = problem.build_jacobian_pattern();
        Ok(problem)
    }

    pub fn layout(&self) -> &DecisionLayout {
        &self.layout
    }

    pub fn mesh(&self) -> &CollocationMesh {
        &self.mesh
    }

    pub fn has_initial_state_constraint(&self) -> bool {
        self.init_constraint
    }

    fn num_defects(&self) -> usize {
        self.layout.nx() * self.mesh.num_intervals()
    }

    fn check_len(&self, xi: &[f64]) -> Result<()> {
        if xi.len() != self.layout.len() {
            return Err(Error::Dimension(format!(
                "decision vector has {} entries, layout expects {}",
                xi.len(),
                self.layout.len()
            )));
        }
        Ok(())
    }

    fn state<'a>(&self, xi: &'a [f64], global: usize) -> &'a [f64] {
        &xi[self.layout.state_block(global)]
    }

    fn evaluation_error(&self, global: usize) -> Error {
        let (segment, node) = self.node_owner[global];
        Error::Evaluation { segment, node }
    }

    fn eval_nodes(&self, xi: &[f64], with_jacobian: bool) -> Result<NodeEval> {
        let d = self.model.dims();
        let p = &xi[self.layout.model_params()];
        let n = self.mesh.num_nodes();
        let mut out = NodeEval { f: Vec::with_capacity(n), fx: Vec::new(), fp: Vec::new() };
        for g in 0..n {
            let x = self.state(xi, g);
            let mut f = vec![0.0; d.nx];
            self.model.dynamics(x, &self.u_nodes[g], p, &mut f)?;
            if f.iter().any(|v| !v.is_finite()) {
                return Err(self.evaluation_error(g));
            }
            out.f.push(f);
            if with_jacobian {
                let mut fx = DMatrix::zeros(d.nx, d.nx);
                let mut fp = DMatrix::zeros(d.nx, d.np);
                self.model.dynamics_jacobian(x, &self.u_nodes[g], p, &mut fx, &mut fp)?;
                if fx.iter().chain(fp.iter()).any(|v| !v.is_finite()) {
                    return Err(self.evaluation_error(g));
                }
                out.fx.push(fx);
                out.fp.push(fp);
            }
        }
        Ok(out)
    }

    /// Defect residuals of every sub-interval, in time order.
    pub fn eval_defects(&self, xi: &[f64]) -> Result<Vec<f64>> {
        self.check_len(xi)?;
        let nodes = self.eval_nodes(xi, false)?;
        let mut c = vec![0.0; self.num_defects()];
        self.fill_defects(xi, &nodes, &mut c);
        Ok(c)
    }

    fn fill_defects(&self, xi: &[f64], nodes: &NodeEval, c: &mut [f64]) {
        let nx = self.layout.nx();
        for (i, seg) in self.mesh.segments().iter().enumerate() {
            let m = seg.nodes.len();
            for k in 0..m - 1 {
                let q = self.interval_offset[i] + k;
                let g0 = self.mesh.global_index(i, k);
                let xa = self.state(xi, g0);
                let xb = self.state(xi, g0 + 1);
                for a in 0..nx {
                    let mut v = xb[a] - xa[a];
                    for j in 0..m {
                        v -= seg.coeffs[(j, k)] * nodes.f[self.mesh.global_index(i, j)][a];
                    }
                    c[q * nx + a] = v;
                }
            }
        }
    }

    fn build_jacobian_pattern(&self) -> Vec<(usize, usize)> {
        let nx = self.layout.nx();
        let mut pat = Vec::new();
        for (i, seg) in self.mesh.segments().iter().enumerate() {
            let m = seg.nodes.len();
            for k in 0..m - 1 {
                let q = self.interval_offset[i] + k;
                for a in 0..nx {
                    let row = q * nx + a;
                    for j in 0..m {
                        let cols = self.layout.node(i, j);
                        for col in cols {
                            pat.push((row, col));
                        }
                    }
                    for &p in &self.dyn_params {
                        pat.push((row, p));
                    }
                }
            }
        }
        if self.init_constraint {
            let base = self.num_defects();
            let x0 = self.layout.state_block(0);
            for a in 0..nx {
                pat.push((base + a, x0.start + a));
                for p in self.layout.model_params() {
                    pat.push((base + a, p));
                }
            }
        }
        pat
    }

    fn measured_state<'a>(&self, xi: &'a [f64], k: usize) -> (&'a [f64], usize) {
        let g = self.mesh.measurements()[k].global;
        (self.state(xi, g), g)
    }
}

impl NlpProblem for CollocationProblem {
    fn num_variables(&self) -> usize {
        self.layout.len()
    }

    fn num_constraints(&self) -> usize {
        self.num_defects() + if self.init_constraint { self.layout.nx() } else { 0 }
    }

    fn objective(&self, xi: &[f64]) -> Result<f64> {
        self.check_len(xi)?;
        let theta = &xi[self.layout.theta()];
        let mut terms = MeasurementTerms::new(self.model.as_ref(), &self.metric);
        let mut total = 0.0;
        for k in 0..self.data.len() {
            let (x, g) = self.measured_state(xi, k);
            let z = self.data.outputs.row(k).clone_owned();
            match terms.cost(x, &self.u_nodes[g], theta, z.as_slice())? {
                Some(c) => total += c,
                None => return Err(self.evaluation_error(g)),
            }
        }
        Ok(total)
    }

    fn gradient(&self, xi: &[f64], grad: &mut [f64]) -> Result<()> {
        self.check_len(xi)?;
        grad.fill(0.0);
        let theta = &xi[self.layout.theta()];
        let mut t = MeasurementTerms::new(self.model.as_ref(), &self.metric);
        let (np, nm) = (t.np, t.nm);
        for k in 0..self.data.len() {
            let (x, g) = self.measured_state(xi, k);
            let z = self.data.outputs.row(k).clone_owned();
            if t.gradient(x, &self.u_nodes[g], theta, z.as_slice())?.is_none() {
                return Err(self.evaluation_error(g));
            }
            let xs = self.layout.state_block(g).start;
            for b in 0..t.ny {
                let ge = t.g_eps[b];
                for a in 0..t.nx {
                    grad[xs + a] -= ge * t.gx[(b, a)];
                }
                for p in 0..np {
                    grad[p] -= ge * t.gp[(b, p)];
                }
            }
            for i in 0..nm {
                grad[np + i] += t.g_phi[i];
            }
        }
        Ok(())
    }

    fn constraints(&self, xi: &[f64], c: &mut [f64]) -> Result<()> {
        self.check_len(xi)?;
        let nodes = self.eval_nodes(xi, false)?;
        self.fill_defects(xi, &nodes, c);
        if self.init_constraint {
            let nx = self.layout.nx();
            let mut x0 = vec![0.0; nx];
            self.model.initial_state(&xi[self.layout.model_params()], &mut x0)?;
            let base = self.num_defects();
            let xs = self.state(xi, 0);
            for a in 0..nx {
                c[base + a] = xs[a] - x0[a];
            }
        }
        Ok(())
    }

    fn jacobian_structure(&self) -> Vec<(usize, usize)> {
        self.jac_pattern.clone()
    }

    fn jacobian_values(&self, xi: &[f64], values: &mut [f64]) -> Result<()> {
        self.check_len(xi)?;
        let nodes = self.eval_nodes(xi, true)?;
        let nx = self.layout.nx();
        let mut pos = 0;
        for (i, seg) in self.mesh.segments().iter().enumerate() {
            let m = seg.nodes.len();
            for k in 0..m - 1 {
                for a in 0..nx {
                    for j in 0..m {
                        let gj = self.mesh.global_index(i, j);
                        let cjk = seg.coeffs[(j, k)];
                        for b in 0..nx {
                            let mut v = -cjk * nodes.fx[gj][(a, b)];
                            if a == b {
                                if j == k + 1 {
                                    v += 1.0;
                                } else if j == k {
                                    v -= 1.0;
                                }
                            }
                            values[pos] = v;
                            pos += 1;
                        }
                    }
                    for &p in &self.dyn_params {
                        let mut v = 0.0;
                        for j in 0..m {
                            v -= seg.coeffs[(j, k)] * nodes.fp[self.mesh.global_index(i, j)][(a, p)];
                        }
                        values[pos] = v;
                        pos += 1;
                    }
                }
            }
        }
        if self.init_constraint {
            let d = self.model.dims();
            let mut dp = DMatrix::zeros(d.nx, d.np);
            self.model.initial_state_jacobian(&xi[self.layout.model_params()], &mut dp)?;
            for a in 0..nx {
                values[pos] = 1.0;
                pos += 1;
                for p in 0..d.np {
                    values[pos] = -dp[(a, p)];
                    pos += 1;
                }
            }
        }
        debug_assert_eq!(pos, values.len());
        Ok(())
    }

    fn supports_hessian(&self, kind: HessianKind) -> bool {
        match kind {
            HessianKind::GaussNewton => self.metric.is_gaussian(),
            HessianKind::Exact => true,
        }
    }

    fn hessian_structure(&self) -> Vec<(usize, usize)> {
        self.layout.hessian_structure()
    }

    fn hessian_values(
        &self,
        xi: &[f64],
        obj_factor: f64,
        lambda: &[f64],
        kind: HessianKind,
        values: &mut [f64],
    ) -> Result<()> {
        self.check_len(xi)?;
        values.fill(0.0);
        let exact = kind == HessianKind::Exact;
        let theta = &xi[self.layout.theta()];
        let nt = self.layout.num_theta();
        let nx = self.layout.nx();
        let np = self.model.dims().np;
        let mut t = MeasurementTerms::new(self.model.as_ref(), &self.metric);
        let mut local = DMatrix::zeros(nt + nx, nt + nx);
        for k in 0..self.data.len() {
            let (x, g) = self.measured_state(xi, k);
            let z = self.data.outputs.row(k).clone_owned();
            if t.gradient(x, &self.u_nodes[g], theta, z.as_slice())?.is_none() {
                return Err(self.evaluation_error(g));
            }
            t.hessian_direct(x, &self.u_nodes[g], theta, exact, &mut local)?;
            for r in 0..nt + nx {
                for c in 0..=r {
                    values[self.layout.hessian_slot(Some(g), r, c)] += obj_factor * local[(r, c)];
                }
            }
        }
        if !exact {
            return Ok(());
        }
        // constraint curvature: Σ_q λ_qᵀ c_q contributes −Σ_j C_jk λ_q · f(x_j)
        let mut mu = vec![vec![0.0; nx]; self.mesh.num_nodes()];
        for (i, seg) in self.mesh.segments().iter().enumerate() {
            let m = seg.nodes.len();
            for k in 0..m - 1 {
                let q = self.interval_offset[i] + k;
                for j in 0..m {
                    let gj = self.mesh.global_index(i, j);
                    let cjk = seg.coeffs[(j, k)];
                    for a in 0..nx {
                        mu[gj][a] -= cjk * lambda[q * nx + a];
                    }
                }
            }
        }
        let p = &xi[self.layout.model_params()];
        let mut hf = DMatrix::zeros(nx + np, nx + np);
        // model order [x, θ_model] → local order [θ, x]
        let to_local = |a: usize| if a < nx { nt + a } else { a - nx };
        for (g, w) in mu.iter().enumerate() {
            if w.iter().all(|v| *v == 0.0) {
                continue;
            }
            self.model.dynamics_hessian(self.state(xi, g), &self.u_nodes[g], p, w, &mut hf)?;
            for a in 0..nx + np {
                for b in 0..=a {
                    let (la, lb) = (to_local(a), to_local(b));
                    values[self.layout.hessian_slot(Some(g), la, lb)] += hf[(a, b)];
                }
            }
        }
        if self.init_constraint {
            let base = self.num_defects();
            let w: Vec<f64> = lambda[base..base + nx].iter().map(|l| -l).collect();
            let mut h0 = DMatrix::zeros(np, np);
            self.model.initial_state_hessian(p, &w, &mut h0)?;
            for a in 0..np {
                for b in 0..=a {
                    values[self.layout.hessian_slot(None, a, b)] += h0[(a, b)];
                }
            }
        }
        Ok(())
    }

    fn kkt_blocks(&self) -> Option<Vec<KktBlock>> {
        let nx = self.layout.nx();
        let mut blocks = Vec::with_capacity(self.mesh.num_intervals() + 2);
        let mut tail: Vec<usize> = self.layout.theta().collect();
        if self.init_constraint {
            let base = self.num_defects();
            blocks.push(KktBlock { vars: self.layout.state_block(0).collect(), cons: (base..base + nx).collect() });
        } else {
            tail.extend(self.layout.state_block(0));
        }
        for q in 0..self.mesh.num_intervals() {
            blocks.push(KktBlock {
                vars: self.layout.state_block(q + 1).collect(),
                cons: (q * nx..(q + 1) * nx).collect(),
            });
        }
        if !tail.is_empty() {
            blocks.push(KktBlock { vars: tail, cons: vec![] });
        }
        Some(blocks)
    }
}

impl EstimationProblem for CollocationProblem {
    fn layout(&self) -> &DecisionLayout {
        &self.layout
    }

    fn model(&self) -> &dyn DynamicalModel {
        self.model.as_ref()
    }

    fn metric(&self) -> &Metric {
        &self.metric
    }

    fn data(&self) -> &ExperimentData {
        &self.data
    }

    fn predicted_outputs(&self, xi: &[f64]) -> Result<DMatrix<f64>> {
        self.check_len(xi)?;
        let theta = &xi[self.layout.theta()];
        let ny = self.data.ny();
        let mut out = DMatrix::zeros(self.data.len(), ny);
        let mut t = MeasurementTerms::new(self.model.as_ref(), &self.metric);
        for k in 0..self.data.len() {
            let (x, g) = self.measured_state(xi, k);
            match t.output(x, &self.u_nodes[g], theta)? {
                Some(y) => {
                    for b in 0..ny {
                        out[(k, b)] = y[b];
                    }
                }
                None => return Err(self.evaluation_error(g)),
            }
        }
        Ok(out)
    }

    fn sparsity(&self) -> SparsityPattern {
        let mut gradient: Vec<usize> = self.layout.theta().collect();
        let mut nodes: Vec<usize> = self.mesh.measurements().iter().map(|m| m.global).collect();
        nodes.sort_unstable();
        nodes.dedup();
        for g in nodes {
            gradient.extend(self.layout.state_block(g));
        }
        SparsityPattern { gradient, jacobian: self.jac_pattern.clone() }
    }
}
