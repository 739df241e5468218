use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;

use super::{
    check_dimensions, DecisionLayout, EstimationProblem, MeasurementTerms, SparsityPattern, TranscriptionKind,
};
use crate::error::{Error, Result};
use crate::integrate::{step_sensitivity, Integrator, SensitivityState, SensitivityWork};
use crate::linalg::KktBlock;
use crate::mesh::{SegmentGrid, ALIGNMENT_TOLERANCE};
use crate::model::{DynamicalModel, ExperimentData, Metric};
use crate::nlp::{HessianKind, NlpProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShootingOptions {
    pub integrator: Integrator,
    /// Equal steps per measurement interval.
    pub substeps: usize,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        ShootingOptions { integrator: Integrator::Rk4, substeps: 1 }
    }
}

/// Single and multiple shooting. The integration mesh is the measurement
/// grid (optionally subdivided); segment boundaries must be measurement
/// times. A measurement on an interior boundary belongs to the segment that
/// starts there; the final measurement belongs to the last segment.
///
/// ξ = [θ, x̂⁽¹⁾₁ (only without an x0 map), x̂⁽²⁾₁, …, x̂⁽ⁿˢ⁾₁]. Constraint
/// block `i−1` (rows `(i−1)·nx..i·nx`) is the continuity residual
/// `x⁽ⁱ⁻¹⁾(t⁽ⁱ⁾) − x̂⁽ⁱ⁾₁` for `i = 2…ns`.
///
/// Only the Gauss–Newton Hessian is available.
pub struct ShootingProblem {
    model: Arc<dyn DynamicalModel>,
    data: ExperimentData,
    metric: Metric,
    layout: DecisionLayout,
    options: ShootingOptions,
    /// Measurement index at each segment boundary (ns + 1 entries).
    boundary_index: Vec<usize>,
    cache: Mutex<Option<Arc<Propagation>>>,
}

struct SegmentTrajectory {
    /// States at the segment's own measurements.
    states: Vec<Vec<f64>>,
    /// ∂x/∂[θ_model, x̂_start] at the same measurements.
    sens: Vec<DMatrix<f64>>,
    end: Vec<f64>,
    end_sens: Option<DMatrix<f64>>,
}

struct Propagation {
    xi: Vec<f64>,
    with_sens: bool,
    segments: Vec<SegmentTrajectory>,
}

impl ShootingProblem {
    pub fn new(
        model: Arc<dyn DynamicalModel>,
        data: &ExperimentData,
        grid: &SegmentGrid,
        metric: Metric,
        options: ShootingOptions,
    ) -> Result<Self> {
        check_dimensions(model.as_ref(), data, &metric)?;
        if options.substeps == 0 {
            return Err(Error::Config("shooting needs at least one substep".into()));
        }
        let tol = ALIGNMENT_TOLERANCE * data.duration();
        let mut boundary_index = Vec::with_capacity(grid.boundaries().len());
        for &b in grid.boundaries() {
            let k = data.times.partition_point(|&t| t < b - tol);
            if k >= data.len() || (data.times[k] - b).abs() > tol {
                return Err(Error::MeshAlignment { time: b });
            }
            boundary_index.push(k);
        }
        if boundary_index[0] != 0 || *boundary_index.last().unwrap() != data.len() - 1 {
            return Err(Error::Config("shooting segments must span the whole experiment".into()));
        }
        let d = model.dims();
        let ns = grid.num_segments();
        let x0_map = model.has_initial_state_map();
        let mut block_times = Vec::new();
        let mut segment_index = Vec::with_capacity(ns);
        for i in 0..ns {
            if i == 0 && x0_map {
                segment_index.push(None);
            } else {
                segment_index.push(Some(block_times.len()));
                block_times.push(data.times[boundary_index[i]]);
            }
        }
        let kind = if ns == 1 { TranscriptionKind::SingleShooting } else { TranscriptionKind::MultipleShooting };
        let layout = DecisionLayout::new(kind, d.np, metric.num_params(), d.nx, block_times, segment_index);
        Ok(ShootingProblem {
            model,
            data: data.clone(),
            metric,
            layout,
            options,
            boundary_index,
            cache: Mutex::new(None),
        })
    }

    pub fn layout(&self) -> &DecisionLayout {
        &self.layout
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

    fn num_segments(&self) -> usize {
        self.boundary_index.len() - 1
    }

    /// Measurement indices recorded by segment `i`.
    fn segment_measurements(&self, i: usize) -> std::ops::Range<usize> {
        let start = self.boundary_index[i];
        let end = self.boundary_index[i + 1];
        if i + 1 == self.num_segments() {
            start..end + 1
        } else {
            start..end
        }
    }

    fn propagation(&self, xi: &[f64], with_sens: bool) -> Result<Arc<Propagation>> {
        self.check_len(xi)?;
        {
            let cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
            if let Some(p) = cache.as_ref() {
                if p.xi == xi && (p.with_sens || !with_sens) {
                    return Ok(p.clone());
                }
            }
        }
        let mut segments = Vec::with_capacity(self.num_segments());
        for i in 0..self.num_segments() {
            segments.push(self.propagate_segment(xi, i, with_sens)?);
        }
        let p = Arc::new(Propagation { xi: xi.to_vec(), with_sens, segments });
        *self.cache.lock().unwrap_or_else(|e| e.into_inner()) = Some(p.clone());
        Ok(p)
    }

    fn propagate_segment(&self, xi: &[f64], i: usize, with_sens: bool) -> Result<SegmentTrajectory> {
        let d = self.model.dims();
        let p = &xi[self.layout.model_params()];
        let mut state = match self.layout.segment_start(i) {
            Some(r) => SensitivityState::seed(xi[r].to_vec(), d.np),
            None => {
                let mut x0 = vec![0.0; d.nx];
                self.model.initial_state(p, &mut x0)?;
                let mut dp = DMatrix::zeros(d.nx, d.np);
                self.model.initial_state_jacobian(p, &mut dp)?;
                let mut s = DMatrix::zeros(d.nx, d.np + d.nx);
                s.columns_mut(0, d.np).copy_from(&dp);
                SensitivityState { x: x0, s }
            }
        };
        if state.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { time: self.data.times[self.boundary_index[i]], segment: i });
        }
        let mut work = SensitivityWork::new(d.nx, d.np, d.nu);
        let recorded = self.segment_measurements(i);
        let mut states = Vec::with_capacity(recorded.len());
        let mut sens = Vec::new();
        let (k0, k1) = (self.boundary_index[i], self.boundary_index[i + 1]);
        let substeps = self.options.substeps;
        for k in k0..=k1 {
            if recorded.contains(&k) {
                states.push(state.x.clone());
                if with_sens {
                    sens.push(state.s.clone());
                }
            }
            if k == k1 {
                break;
            }
            let (ta, tb) = (self.data.times[k], self.data.times[k + 1]);
            let h = (tb - ta) / substeps as f64;
            for s in 0..substeps {
                let t = ta + s as f64 * h;
                let step = if with_sens {
                    step_sensitivity(
                        self.model.as_ref(),
                        self.options.integrator,
                        &self.data.input,
                        t,
                        h,
                        p,
                        &mut state,
                        &mut work,
                    )
                } else {
                    crate::integrate::integrate_step(
                        self.model.as_ref(),
                        self.options.integrator,
                        &self.data.input,
                        t,
                        h,
                        &state.x,
                        p,
                    )
                    .map(|x| state.x = x)
                };
                step.map_err(|e| match e {
                    Error::Divergence { time, .. } => Error::Divergence { time, segment: i },
                    other => other,
                })?;
            }
        }
        Ok(SegmentTrajectory { states, sens, end: state.x.clone(), end_sens: with_sens.then_some(state.s) })
    }

    fn continuity_pattern(&self) -> Vec<(usize, usize)> {
        let nx = self.layout.nx();
        let np = self.model.dims().np;
        let mut pat = Vec::new();
        for i in 1..self.num_segments() {
            for a in 0..nx {
                let row = (i - 1) * nx + a;
                for p in 0..np {
                    pat.push((row, p));
                }
                if let Some(prev) = self.layout.segment_start(i - 1) {
                    for c in prev {
                        pat.push((row, c));
                    }
                }
                let next = self.layout.segment_start(i).expect("later segments start on a variable");
                pat.push((row, next.start + a));
            }
        }
        pat
    }
}

impl NlpProblem for ShootingProblem {
    fn num_variables(&self) -> usize {
        self.layout.len()
    }

    fn num_constraints(&self) -> usize {
        (self.num_segments() - 1) * self.layout.nx()
    }

    fn objective(&self, xi: &[f64]) -> Result<f64> {
        let prop = self.propagation(xi, false)?;
        let theta = &xi[self.layout.theta()];
        let mut terms = MeasurementTerms::new(self.model.as_ref(), &self.metric);
        let mut u = vec![0.0; self.model.dims().nu];
        let mut total = 0.0;
        for (i, seg) in prop.segments.iter().enumerate() {
            for (x, k) in seg.states.iter().zip(self.segment_measurements(i)) {
                self.data.input.interpolate_into(self.data.times[k], &mut u)?;
                let z = self.data.outputs.row(k).clone_owned();
                match terms.cost(x, &u, theta, z.as_slice())? {
                    Some(c) => total += c,
                    None => return Err(Error::Divergence { time: self.data.times[k], segment: i }),
                }
            }
        }
        Ok(total)
    }

    fn gradient(&self, xi: &[f64], grad: &mut [f64]) -> Result<()> {
        let prop = self.propagation(xi, true)?;
        grad.fill(0.0);
        let theta = &xi[self.layout.theta()];
        let mut t = MeasurementTerms::new(self.model.as_ref(), &self.metric);
        let (np, nm, nx) = (t.np, t.nm, t.nx);
        let mut u = vec![0.0; self.model.dims().nu];
        for (i, seg) in prop.segments.iter().enumerate() {
            let start = self.layout.segment_start(i);
            for ((x, s), k) in seg.states.iter().zip(&seg.sens).zip(self.segment_measurements(i)) {
                self.data.input.interpolate_into(self.data.times[k], &mut u)?;
                let z = self.data.outputs.row(k).clone_owned();
                if t.gradient(x, &u, theta, z.as_slice())?.is_none() {
                    return Err(Error::Divergence { time: self.data.times[k], segment: i });
                }
                // ∂ε/∂v = −(g_x S + [g_θ 0])
                let gs = &t.gx * s;
                for b in 0..t.ny {
                    let ge = t.g_eps[b];
                    for p in 0..np {
                        grad[p] -= ge * (gs[(b, p)] + t.gp[(b, p)]);
                    }
                    if let Some(r) = &start {
                        for a in 0..nx {
                            grad[r.start + a] -= ge * gs[(b, np + a)];
                        }
                    }
                }
                for m in 0..nm {
                    grad[np + m] += t.g_phi[m];
                }
            }
        }
        Ok(())
    }

    fn constraints(&self, xi: &[f64], c: &mut [f64]) -> Result<()> {
        let prop = self.propagation(xi, false)?;
        let nx = self.layout.nx();
        for i in 1..self.num_segments() {
            let next = self.layout.segment_start(i).expect("later segments start on a variable");
            for a in 0..nx {
                c[(i - 1) * nx + a] = prop.segments[i - 1].end[a] - xi[next.start + a];
            }
        }
        Ok(())
    }

    fn jacobian_structure(&self) -> Vec<(usize, usize)> {
        self.continuity_pattern()
    }

    fn jacobian_values(&self, xi: &[f64], values: &mut [f64]) -> Result<()> {
        if self.num_segments() == 1 {
            return Ok(());
        }
        let prop = self.propagation(xi, true)?;
        let nx = self.layout.nx();
        let np = self.model.dims().np;
        let mut pos = 0;
        for i in 1..self.num_segments() {
            let s = prop.segments[i - 1].end_sens.as_ref().expect("sensitivities requested");
            let prev_var = self.layout.segment_start(i - 1).is_some();
            for a in 0..nx {
                for p in 0..np {
                    values[pos] = s[(a, p)];
                    pos += 1;
                }
                if prev_var {
                    for b in 0..nx {
                        values[pos] = s[(a, np + b)];
                        pos += 1;
                    }
                }
                values[pos] = -1.0;
                pos += 1;
            }
        }
        Ok(())
    }

    fn supports_hessian(&self, kind: HessianKind) -> bool {
        kind == HessianKind::GaussNewton && self.metric.is_gaussian()
    }

    fn hessian_structure(&self) -> Vec<(usize, usize)> {
        self.layout.hessian_structure()
    }

    fn hessian_values(
        &self,
        xi: &[f64],
        obj_factor: f64,
        _lambda: &[f64],
        kind: HessianKind,
        values: &mut [f64],
    ) -> Result<()> {
        if kind != HessianKind::GaussNewton {
            return Err(Error::Config("shooting transcriptions provide only the Gauss-Newton Hessian".into()));
        }
        let prop = self.propagation(xi, true)?;
        values.fill(0.0);
        let theta = &xi[self.layout.theta()];
        let nt = self.layout.num_theta();
        let nx = self.layout.nx();
        let mut t = MeasurementTerms::new(self.model.as_ref(), &self.metric);
        let mut u = vec![0.0; self.model.dims().nu];
        let mut local = DMatrix::zeros(nt + nx, nt + nx);
        for (i, seg) in prop.segments.iter().enumerate() {
            let block = self.layout.segment_index[i];
            let width = if block.is_some() { nt + nx } else { nt };
            for ((x, s), k) in seg.states.iter().zip(&seg.sens).zip(self.segment_measurements(i)) {
                self.data.input.interpolate_into(self.data.times[k], &mut u)?;
                let z = self.data.outputs.row(k).clone_owned();
                if t.gradient(x, &u, theta, z.as_slice())?.is_none() {
                    return Err(Error::Divergence { time: self.data.times[k], segment: i });
                }
                t.hessian_chained(theta, s, &mut local)?;
                for r in 0..width {
                    for c in 0..=r {
                        values[self.layout.hessian_slot(block, r, c)] += obj_factor * local[(r, c)];
                    }
                }
            }
        }
        Ok(())
    }

    fn kkt_blocks(&self) -> Option<Vec<KktBlock>> {
        let nx = self.layout.nx();
        let mut blocks = Vec::with_capacity(self.num_segments());
        for i in 1..self.num_segments() {
            blocks.push(KktBlock {
                vars: self.layout.segment_start(i).expect("later segments start on a variable").collect(),
                cons: ((i - 1) * nx..i * nx).collect(),
            });
        }
        let mut tail: Vec<usize> = self.layout.theta().collect();
        if let Some(r) = self.layout.segment_start(0) {
            tail.extend(r);
        }
        if !tail.is_empty() {
            blocks.push(KktBlock { vars: tail, cons: vec![] });
        }
        Some(blocks)
    }
}

impl EstimationProblem for ShootingProblem {
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
        let prop = self.propagation(xi, false)?;
        let theta = &xi[self.layout.theta()];
        let ny = self.data.ny();
        let mut out = DMatrix::zeros(self.data.len(), ny);
        let mut terms = MeasurementTerms::new(self.model.as_ref(), &self.metric);
        let mut u = vec![0.0; self.model.dims().nu];
        for (i, seg) in prop.segments.iter().enumerate() {
            for (x, k) in seg.states.iter().zip(self.segment_measurements(i)) {
                self.data.input.interpolate_into(self.data.times[k], &mut u)?;
                match terms.output(x, &u, theta)? {
                    Some(y) => {
                        for b in 0..ny {
                            out[(k, b)] = y[b];
                        }
                    }
                    None => return Err(Error::Divergence { time: self.data.times[k], segment: i }),
                }
            }
        }
        Ok(out)
    }

    fn sparsity(&self) -> SparsityPattern {
        SparsityPattern { gradient: (0..self.layout.len()).collect(), jacobian: self.continuity_pattern() }
    }
}

#[cfg(test)]
mod tests {
    use super::super::test_models::*;
    use super::*;

    fn multi(data: &ExperimentData, ns: usize, with_x0: bool) -> ShootingProblem {
        let grid = SegmentGrid::split(&data.times, ns).unwrap();
        ShootingProblem::new(
            Arc::new(Linear1 { with_x0 }),
            data,
            &grid,
            Metric::gaussian_diag_fixed(vec![1.0]).unwrap(),
            ShootingOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn one_segment_is_single_shooting() {
        let data = exp_data(21, 2.0);
        let p = multi(&data, 1, true);
        assert_eq!(p.layout().kind(), TranscriptionKind::SingleShooting);
        assert_eq!(p.num_constraints(), 0);
        assert_eq!(p.num_variables(), 3);
        let free = multi(&data, 1, false);
        assert_eq!(free.num_variables(), 3);
    }

    #[test]
    fn exact_trajectory_is_continuous() {
        let data = exp_data(201, 2.0);
        let p = multi(&data, 4, false);
        let l = p.layout();
        let mut xi = vec![0.0; l.len()];
        xi[0] = -1.0;
        for b in 0..l.num_state_blocks() {
            let t = l.block_times()[b];
            xi[l.state_block(b).start] = (-t).exp();
        }
        let mut c = vec![0.0; p.num_constraints()];
        p.constraints(&xi, &mut c).unwrap();
        assert_eq!(c.len(), 3);
        assert!(c.iter().all(|v| v.abs() <= 1e-9), "{c:?}");
    }

    #[test]
    fn jump_shows_in_residual() {
        let data = exp_data(201, 2.0);
        let p = multi(&data, 4, false);
        let l = p.layout();
        let mut xi = vec![0.0; l.len()];
        xi[0] = -1.0;
        for b in 0..l.num_state_blocks() {
            xi[l.state_block(b).start] = (-l.block_times()[b]).exp();
        }
        xi[l.state_block(2).start] += 0.25;
        let mut c = vec![0.0; 3];
        p.constraints(&xi, &mut c).unwrap();
        assert!((c[1] + 0.25).abs() < 1e-9);
    }

    #[test]
    fn segment_zero_uses_initial_state_map() {
        let data = exp_data(11, 1.0);
        let p = multi(&data, 1, true);
        let y = p.predicted_outputs(&[-1.0, 0.0, 1.0]).unwrap();
        assert!((y[(10, 0)] - (-1.0f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn divergence_carries_segment() {
        let data = exp_data(101, 10.0);
        let p = multi(&data, 2, false);
        let mut xi = vec![0.0; p.num_variables()];
        xi[0] = 400.0;
        xi[2] = 1.0;
        xi[3] = 1.0;
        match p.objective(&xi) {
            Err(Error::Divergence { segment, .. }) => assert_eq!(segment, 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn misaligned_boundary_rejected() {
        let data = exp_data(11, 1.0);
        let grid = SegmentGrid::new(vec![0.0, 0.55, 1.0]).unwrap();
        let r = ShootingProblem::new(
            Arc::new(Linear1 { with_x0: false }),
            &data,
            &grid,
            Metric::gaussian_diag_fixed(vec![1.0]).unwrap(),
            ShootingOptions::default(),
        );
        assert!(matches!(r, Err(Error::MeshAlignment { .. })));
    }
}
