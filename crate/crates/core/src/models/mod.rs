//! Built-in models, the synthetic-data simulator and test-input generators.

mod hfb320;
mod modal;
mod short_period;

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::{num_complex::Complex64, FftPlanner};

pub use hfb320::{param as hfb320_param, Hfb320, Hfb320Constants};
pub use modal::Modal;
pub use short_period::{param as short_period_param, ShortPeriod};

use crate::error::{Error, Result};
use crate::integrate::{propagate, Integrator};
use crate::model::{DynamicalModel, ExperimentData, InputSignal, ModelDims};

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOptions {
    /// RK4 steps per sampling interval.
    pub substeps: usize,
    /// Noise standard deviation per output channel; empty means noiseless.
    pub noise_sigma: Vec<f64>,
    pub seed: u64,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        SimulationOptions { substeps: 10, noise_sigma: Vec::new(), seed: 0 }
    }
}

/// Integrates the model with fixed-step RK4, samples the outputs at `times`
/// and adds i.i.d. Gaussian noise.
pub fn simulate(
    model: &dyn DynamicalModel,
    p: &[f64],
    x0: &[f64],
    input: &InputSignal,
    times: &[f64],
    options: &SimulationOptions,
) -> Result<ExperimentData> {
    check_call(model.dims(), p, x0, input)?;
    let states = propagate(model, Integrator::Rk4, input, times, options.substeps, x0, p)?;
    let d = model.dims();
    let mut y = DMatrix::zeros(times.len(), d.ny);
    let mut u = vec![0.0; d.nu];
    let mut out = vec![0.0; d.ny];
    for (k, x) in states.iter().enumerate() {
        input.interpolate_into(times[k], &mut u)?;
        model.output(x, &u, p, &mut out)?;
        for (b, v) in out.iter().enumerate() {
            y[(k, b)] = *v;
        }
    }
    finish(model, times, y, input.clone(), options)
}

fn check_call(d: ModelDims, p: &[f64], x0: &[f64], input: &InputSignal) -> Result<()> {
    if p.len() != d.np || x0.len() != d.nx || input.nu() != d.nu {
        return Err(Error::Dimension(format!(
            "model expects {} parameters, {} states, {} inputs; got {}, {}, {}",
            d.np,
            d.nx,
            d.nu,
            p.len(),
            x0.len(),
            input.nu()
        )));
    }
    Ok(())
}

fn finish(
    model: &dyn DynamicalModel,
    times: &[f64],
    mut y: DMatrix<f64>,
    input: InputSignal,
    options: &SimulationOptions,
) -> Result<ExperimentData> {
    if let Some((k, _)) = y.row_iter().enumerate().find(|(_, r)| r.iter().any(|v| !v.is_finite())) {
        return Err(Error::Divergence { time: times[k], segment: 0 });
    }
    if !options.noise_sigma.is_empty() {
        add_noise(&mut y, &options.noise_sigma, options.seed)?;
    }
    ExperimentData::with_names(times.to_vec(), y, input, model.output_names(), model.input_names())
}

/// Adds `N(0, σ_b²)` noise to column `b`, drawn column by column from a
/// ChaCha8 stream seeded with `seed`.
pub fn add_noise(y: &mut DMatrix<f64>, sigma: &[f64], seed: u64) -> Result<()> {
    if sigma.len() != y.ncols() {
        return Err(Error::Dimension(format!("{} noise levels for {} channels", sigma.len(), y.ncols())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (b, &s) in sigma.iter().enumerate() {
        if s < 0.0 || !s.is_finite() {
            return Err(Error::Domain(format!("noise standard deviation must be non-negative, got {s}")));
        }
        if s == 0.0 {
            continue;
        }
        let dist = Normal::new(0.0, s).map_err(|e| Error::Domain(e.to_string()))?;
        for k in 0..y.nrows() {
            y[(k, b)] += dist.sample(&mut rng);
        }
    }
    Ok(())
}

/// Wraps a model in the state feedback `u = u_cmd − K·x`, so the wrapper's
/// input is the pilot command and the wrapped model sees the applied input.
pub struct StateFeedback {
    model: Arc<dyn DynamicalModel>,
    /// nu × nx.
    gain: DMatrix<f64>,
}

impl StateFeedback {
    pub fn new(model: Arc<dyn DynamicalModel>, gain: DMatrix<f64>) -> Result<Self> {
        let d = model.dims();
        if gain.shape() != (d.nu, d.nx) {
            return Err(Error::Dimension(format!("feedback gain must be {}×{}", d.nu, d.nx)));
        }
        Ok(StateFeedback { model, gain })
    }

    pub fn applied_input(&self, x: &[f64], command: &[f64]) -> Vec<f64> {
        (0..command.len()).map(|i| command[i] - (0..x.len()).map(|j| self.gain[(i, j)] * x[j]).sum::<f64>()).collect()
    }
}

impl DynamicalModel for StateFeedback {
    fn dims(&self) -> ModelDims {
        self.model.dims()
    }

    fn param_names(&self) -> Vec<String> {
        self.model.param_names()
    }

    fn output_names(&self) -> Vec<String> {
        self.model.output_names()
    }

    fn input_names(&self) -> Vec<String> {
        self.model.input_names()
    }

    fn dynamics(&self, x: &[f64], u: &[f64], p: &[f64], out: &mut [f64]) -> Result<()> {
        self.model.dynamics(x, &self.applied_input(x, u), p, out)
    }

    fn output(&self, x: &[f64], u: &[f64], p: &[f64], out: &mut [f64]) -> Result<()> {
        self.model.output(x, &self.applied_input(x, u), p, out)
    }
}

/// Closed-loop simulation. The model is flown with `u = command − K·x`; the
/// returned data records the applied input on the command's time grid, which
/// must contain every measurement time. This is how data of an open-loop
/// unstable plant is obtained.
pub fn simulate_closed_loop(
    model: Arc<dyn DynamicalModel>,
    gain: DMatrix<f64>,
    p: &[f64],
    x0: &[f64],
    command: &InputSignal,
    times: &[f64],
    options: &SimulationOptions,
) -> Result<ExperimentData> {
    check_call(model.dims(), p, x0, command)?;
    let loop_model = StateFeedback::new(model.clone(), gain)?;
    let grid = command.times();
    let states = propagate(&loop_model, Integrator::Rk4, command, grid, options.substeps, x0, p)?;
    let d = model.dims();
    let mut applied = DMatrix::zeros(grid.len(), d.nu);
    for (k, x) in states.iter().enumerate() {
        for (i, v) in
            loop_model.applied_input(x, command.values().row(k).clone_owned().as_slice()).into_iter().enumerate()
        {
            applied[(k, i)] = v;
        }
    }
    let applied = InputSignal::new(grid.to_vec(), applied)?;
    let tol = 1e-9 * (grid[grid.len() - 1] - grid[0]);
    let mut y = DMatrix::zeros(times.len(), d.ny);
    let mut out = vec![0.0; d.ny];
    for (k, &t) in times.iter().enumerate() {
        let j = grid.partition_point(|&g| g < t - tol);
        if j >= grid.len() || (grid[j] - t).abs() > tol {
            return Err(Error::MeshAlignment { time: t });
        }
        model.output(&states[j], applied.values().row(j).clone_owned().as_slice(), p, &mut out)?;
        for (b, v) in out.iter().enumerate() {
            y[(k, b)] = *v;
        }
    }
    finish(model.as_ref(), times, y, applied, options)
}

/// Uniform grid `t0, t0 + dt, …` with `n` samples.
pub fn uniform_times(t0: f64, dt: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| t0 + k as f64 * dt).collect()
}

/// 3-2-1-1 multistep: `+a` for three units, `−a` for two, `+a` for one,
/// `−a` for one, zero elsewhere.
pub fn doublet_3211(times: &[f64], start: f64, unit: f64, amplitude: f64) -> Vec<f64> {
    let edges = [0.0, 3.0, 5.0, 6.0, 7.0];
    let signs = [1.0, -1.0, 1.0, -1.0];
    times
        .iter()
        .map(|&t| {
            let s = (t - start) / unit;
            (0..4).find(|&i| s >= edges[i] && s < edges[i + 1]).map_or(0.0, |i| signs[i] * amplitude)
        })
        .collect()
}

/// Rectangular pulse of the given width.
pub fn pulse(times: &[f64], start: f64, width: f64, amplitude: f64) -> Vec<f64> {
    times.iter().map(|&t| if t >= start && t < start + width { amplitude } else { 0.0 }).collect()
}

/// Gaussian noise with every spectral component outside `[f_lo, f_hi]` Hz
/// removed, scaled to the requested RMS. `times` must be uniform.
pub fn band_limited_noise(times: &[f64], f_lo: f64, f_hi: f64, rms: f64, seed: u64) -> Result<Vec<f64>> {
    let n = times.len();
    if n < 2 {
        return Err(Error::Domain("need at least two samples".into()));
    }
    let fs = (n - 1) as f64 / (times[n - 1] - times[0]);
    if !(0.0 <= f_lo && f_lo < f_hi && f_hi <= fs / 2.0) {
        return Err(Error::Config(format!("band [{f_lo}, {f_hi}] Hz invalid at sampling rate {fs} Hz")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut buf: Vec<Complex64> = (0..n).map(|_| Complex64::new(normal.sample(&mut rng), 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * fs / n as f64;
        if f < f_lo || f > f_hi {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let mut out: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let current = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if current == 0.0 {
        return Err(Error::Domain("band contains no frequency bins".into()));
    }
    out.iter_mut().for_each(|v| *v *= rms / current);
    Ok(out)
}

/// Single-channel input signal from samples.
pub fn input_from_samples(times: &[f64], samples: &[f64]) -> Result<InputSignal> {
    InputSignal::new(times.to_vec(), DMatrix::from_column_slice(samples.len(), 1, samples))
}
