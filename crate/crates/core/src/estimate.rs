//! The estimation pipeline: preprocess, transcribe, solve, report.
//!
//! The result file written by [`write_report`] is TOML:
//!
//! ```toml
//! format = 1
//! model = "short-period"
//! transcription = "collocation"
//! status = "converged"            # converged | max-iter | line-search-failure | evaluation-error
//! objective = -1.2345678901234567e3
//! kkt = ...
//! violation = ...
//! iterations = 14                 # rows of iterations.csv
//! outputs = ["w", "q", "az"]
//! error = "..."                   # only when the solve failed
//!
//! [parameters]                    # estimates, model then metric
//! Zw = -6.9999999999999996e-1
//!
//! [initial]                       # starting values
//! [std_error]                     # Cramér–Rao bounds, when the information matrix is regular
//! [residual_std]                  # per output channel
//! [frequency]                     # modal runs with a [frequency] band
//! median_relative_deviation = ...
//! dropped = [...]
//! ```
//!
//! All numbers carry 17 significant digits. `trajectory.csv` holds `time`
//! and, per output, the measurement and the prediction (`<name>_hat`);
//! `iterations.csv` holds the solver log; `frequency.csv` the ETFE table.

use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{InputComponent, RunConfig};
use crate::csvio::{read_table, write_table};
use crate::error::{Error, Result, StageExt};
use crate::mesh::{build_mesh, SegmentGrid};
use crate::model::{DynamicalModel, ExperimentData, InputSignal};
use crate::models::{
    add_noise, band_limited_noise, doublet_3211, pulse, simulate, simulate_closed_loop, uniform_times, Modal,
    SimulationOptions,
};
use crate::nlp::{self, HessianKind, IterationRecord, NlpProblem, SolveStatus};
use crate::signal::{freq_response_compare, preprocess, FreqComparison, FreqRow};
use crate::transcription::{
    initial_guess, CollocationOptions, CollocationProblem, EstimationProblem, ShootingOptions, ShootingProblem,
    TranscriptionKind,
};

pub const REPORT_FORMAT: i64 = 1;
pub const RESULT_FILE: &str = "result.txt";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const ITERATIONS_FILE: &str = "iterations.csv";
pub const FREQUENCY_FILE: &str = "frequency.csv";

/// Relative objective tolerance for grouping restart results.
pub const CLUSTER_TOLERANCE: f64 = 1e-4;

const DEFAULT_SHOOTING_SEGMENTS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub model: String,
    pub transcription: TranscriptionKind,
    pub names: Vec<String>,
    pub initial: Vec<f64>,
    pub theta: Vec<f64>,
    pub std_error: Option<Vec<f64>>,
    pub objective: f64,
    pub status: SolveStatus,
    pub kkt: f64,
    pub violation: f64,
    pub iterations: Vec<IterationRecord>,
    pub error: Option<String>,
    pub times: Vec<f64>,
    pub output_names: Vec<String>,
    pub measured: DMatrix<f64>,
    /// `None` when the outputs could not be evaluated at the final point.
    pub predicted: Option<DMatrix<f64>>,
    pub residual_std: Vec<f64>,
    pub frequency: Option<FreqComparison>,
}

impl EstimateReport {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.theta[i])
    }
}

/// Runs the pipeline with the model named in the configuration.
pub fn run_estimate(config: &RunConfig, data: &ExperimentData) -> Result<EstimateReport> {
    let model = config.build_model().stage("model")?;
    run_estimate_with(config, model, data)
}

/// Runs the pipeline with a caller-supplied model.
pub fn run_estimate_with(
    config: &RunConfig,
    model: Arc<dyn DynamicalModel>,
    data: &ExperimentData,
) -> Result<EstimateReport> {
    let theta0 = config.initial_model_params(model.as_ref()).stage("parameters")?;
    estimate_from(config, model, data, &theta0)
}

/// The transcription selected by the configuration, over `data` as given.
pub fn build_problem(
    config: &RunConfig,
    model: Arc<dyn DynamicalModel>,
    data: &ExperimentData,
) -> Result<Box<dyn EstimationProblem>> {
    let metric = config.metric(data.ny()).stage("metric")?;
    let times = &data.times;
    let kind = config.transcription_kind()?;
    let segments = config.transcription.segments;
    Ok(match kind {
        TranscriptionKind::Collocation => {
            let grid = match segments {
                None => SegmentGrid::from_times(times),
                Some(ns) => SegmentGrid::split(times, ns),
            }
            .stage("mesh")?;
            let mesh = build_mesh(&grid, config.transcription.nodes, data).stage("mesh")?;
            Box::new(
                CollocationProblem::new(model, data, mesh, metric, CollocationOptions::default())
                    .stage("transcription")?,
            )
        }
        TranscriptionKind::MultipleShooting | TranscriptionKind::SingleShooting => {
            let ns = match kind {
                TranscriptionKind::SingleShooting => 1,
                _ => segments.unwrap_or(DEFAULT_SHOOTING_SEGMENTS),
            };
            let grid = SegmentGrid::split(times, ns).stage("mesh")?;
            let options = ShootingOptions { integrator: config.integrator()?, substeps: config.transcription.substeps };
            Box::new(ShootingProblem::new(model, data, &grid, metric, options).stage("transcription")?)
        }
    })
}

/// One estimation from the given model-parameter start.
pub fn estimate_from(
    config: &RunConfig,
    model: Arc<dyn DynamicalModel>,
    data: &ExperimentData,
    theta0: &[f64],
) -> Result<EstimateReport> {
    let data = match config.preprocessing() {
        Some(p) => preprocess(data, &p).stage("preprocess")?,
        None => data.clone(),
    };
    let outputs = data.output_names.clone();
    let problem = build_problem(config, model.clone(), &data)?;
    let layout = problem.layout().clone();
    let xi0 = starting_point(config, problem.as_ref(), theta0).stage("initial-guess")?;
    let start = xi0[layout.theta()].to_vec();
    let options = config.solver_options()?;

    let result = nlp::solve(problem.as_ref(), &xi0, &options);
    let theta = result.x[layout.theta()].to_vec();
    let predicted = problem.predicted_outputs(&result.x).ok();
    let residual_std = match &predicted {
        Some(y) => (0..data.ny()).map(|c| column_std(&(data.outputs.column(c) - y.column(c)))).collect(),
        None => vec![f64::NAN; data.ny()],
    };
    let std_error = if result.converged() {
        parameter_covariance(problem.as_ref(), &result.x, layout.theta())
            .ok()
            .map(|cov| cov.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect())
    } else {
        None
    };
    let frequency = match (&config.frequency, config.model.name.as_str()) {
        (Some(f), "modal") => {
            let modal = Modal::new(config.model.modes.unwrap_or(2))?;
            let np = model.dims().np;
            Some(freq_response_compare(&data, &modal, &theta[..np], (f.band[0], f.band[1])).stage("frequency")?)
        }
        _ => None,
    };
    Ok(EstimateReport {
        model: config.model.name.clone(),
        transcription: layout.kind(),
        names: problem.theta_names(),
        initial: start,
        theta,
        std_error,
        objective: result.objective,
        status: result.status,
        kkt: result.kkt,
        violation: result.violation,
        iterations: result.iterations,
        error: result.error.map(|e| e.to_string()),
        times: data.times.clone(),
        output_names: outputs,
        measured: data.outputs.clone(),
        predicted,
        residual_std,
        frequency,
    })
}

/// ξ0 from model parameters `theta0`, the configured metric start and the
/// measured states.
pub fn starting_point(config: &RunConfig, problem: &dyn EstimationProblem, theta0: &[f64]) -> Result<Vec<f64>> {
    let data = problem.data();
    let map = config.state_channel_map(problem.model(), &data.output_names)?;
    let mut start = theta0.to_vec();
    start.extend(config.initial_metric_params(problem.metric(), data));
    Ok(initial_guess(problem.layout(), data, &start, &map))
}

fn column_std<'a>(v: impl IntoIterator<Item = &'a f64> + Clone) -> f64 {
    let (n, sum) = v.clone().into_iter().fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    let mean = sum / n as f64;
    (v.into_iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt()
}

/// Covariance of `rows` from the inverse Gauss–Newton information matrix,
/// restricted to the constraint manifold: the `rows` block of the inverse
/// KKT matrix `[[H, Jᵀ], [J, 0]]`.
pub fn parameter_covariance(problem: &dyn NlpProblem, x: &[f64], rows: Range<usize>) -> Result<DMatrix<f64>> {
    if !problem.supports_hessian(HessianKind::GaussNewton) {
        return Err(Error::Config("problem has no Gauss–Newton Hessian".into()));
    }
    let n = problem.num_variables();
    let m = problem.num_constraints();
    let h_pattern = problem.hessian_structure();
    let j_pattern = problem.jacobian_structure();
    let mut h = vec![0.0; h_pattern.len()];
    let mut j = vec![0.0; j_pattern.len()];
    problem.hessian_values(x, 1.0, &vec![0.0; m], HessianKind::GaussNewton, &mut h)?;
    problem.jacobian_values(x, &mut j)?;
    let mut kkt = crate::linalg::KktSystem::new(n, m, &h_pattern, &j_pattern, problem.kkt_blocks())?;
    let inertia = kkt.factor(&h, &j, 0.0, 0.0);
    if inertia.positive != n || inertia.negative != m || inertia.zero != 0 {
        return Err(Error::RankDeficient { rows: kkt.singular_constraints() });
    }
    let k = rows.len();
    let mut cov = DMatrix::zeros(k, k);
    for (c, var) in rows.clone().enumerate() {
        let mut rhs = vec![0.0; n + m];
        rhs[var] = 1.0;
        let sol = kkt.solve(&rhs);
        for (r, v) in rows.clone().enumerate() {
            cov[(r, c)] = sol[v];
        }
    }
    Ok((&cov + cov.transpose()) * 0.5)
}

/// One restart of a study.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyRun {
    pub index: usize,
    pub theta0: Vec<f64>,
    pub theta: Vec<f64>,
    pub objective: f64,
    /// `None` when the run failed before the solver started.
    pub status: Option<SolveStatus>,
    pub iterations: usize,
    pub error: Option<String>,
}

impl StudyRun {
    pub fn converged(&self) -> bool {
        self.status == Some(SolveStatus::Converged)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub objective: f64,
    /// Run indices, ascending.
    pub members: Vec<usize>,
    /// Members over all runs.
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub names: Vec<String>,
    pub runs: Vec<StudyRun>,
    /// Converged runs grouped by objective, best first.
    pub clusters: Vec<Cluster>,
}

impl StudyReport {
    pub fn best_fraction(&self) -> f64 {
        self.clusters.first().map_or(0.0, |c| c.fraction)
    }
}

/// Starting values for restart `index`: the configured values with every
/// parameter that has a draw range replaced by a uniform draw.
pub fn draw_start(config: &RunConfig, model: &dyn DynamicalModel, seed: u64, index: usize) -> Result<Vec<f64>> {
    let mut theta = config.initial_model_params(model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(index as u64));
    for (i, name) in model.param_names().iter().enumerate() {
        if let Some([lo, hi]) = config.draws.get(name) {
            theta[i] = if lo < hi { rng.random_range(*lo..*hi) } else { *lo };
        }
    }
    Ok(theta)
}

/// Runs `runs` estimations from random starts in parallel and clusters the
/// converged objectives.
pub fn restart_study(config: &RunConfig, data: &ExperimentData, runs: usize, seed: u64) -> Result<StudyReport> {
    if runs == 0 {
        return Err(Error::Config("a study needs at least one run".into()));
    }
    let model = config.build_model().stage("model")?;
    let np = model.dims().np;
    let names = model.param_names();
    let mut results: Vec<StudyRun> = (0..runs)
        .into_par_iter()
        .map(|index| {
            let theta0 = match draw_start(config, model.as_ref(), seed, index) {
                Ok(t) => t,
                Err(e) => return failed_run(index, vec![f64::NAN; np], e),
            };
            match estimate_from(config, model.clone(), data, &theta0) {
                Ok(r) => StudyRun {
                    index,
                    theta0,
                    theta: r.theta[..np].to_vec(),
                    objective: r.objective,
                    status: Some(r.status),
                    iterations: r.iterations.len(),
                    error: r.error,
                },
                Err(e) => failed_run(index, theta0, e),
            }
        })
        .collect();
    results.sort_by_key(|r| r.index);
    let clusters = cluster_objectives(&results, runs);
    Ok(StudyReport { names, runs: results, clusters })
}

fn failed_run(index: usize, theta0: Vec<f64>, e: Error) -> StudyRun {
    StudyRun {
        index,
        theta: vec![f64::NAN; theta0.len()],
        theta0,
        objective: f64::NAN,
        status: None,
        iterations: 0,
        error: Some(e.to_string()),
    }
}

/// Groups converged runs: sorted by objective, a run joins the current
/// cluster when within [`CLUSTER_TOLERANCE`]·max(|f_best|, 1) of its best
/// member.
pub fn cluster_objectives(runs: &[StudyRun], total: usize) -> Vec<Cluster> {
    let mut ok: Vec<&StudyRun> = runs.iter().filter(|r| r.converged() && r.objective.is_finite()).collect();
    ok.sort_by(|a, b| a.objective.total_cmp(&b.objective).then(a.index.cmp(&b.index)));
    let mut clusters: Vec<Cluster> = Vec::new();
    for r in ok {
        match clusters.last_mut() {
            Some(c) if (r.objective - c.objective).abs() <= CLUSTER_TOLERANCE * c.objective.abs().max(1.0) => {
                c.members.push(r.index)
            }
            _ => clusters.push(Cluster { objective: r.objective, members: vec![r.index], fraction: 0.0 }),
        }
    }
    for c in &mut clusters {
        c.members.sort_unstable();
        c.fraction = c.members.len() as f64 / total as f64;
    }
    clusters
}

/// Synthetic experiment from the `[simulate]` section; `seed` drives the
/// measurement noise.
pub fn simulate_from_config(config: &RunConfig, seed: u64) -> Result<ExperimentData> {
    let sim = config.simulate.as_ref().ok_or_else(|| Error::Config("config has no [simulate] section".into()))?;
    if sim.samples < 2 || !(sim.dt > 0.0) || sim.input_oversample == 0 || sim.substeps == 0 {
        return Err(Error::Config("simulate needs dt > 0, samples >= 2, oversample and substeps >= 1".into()));
    }
    let model = config.build_model()?;
    let d = model.dims();
    let truth = RunConfig::named_values(model.as_ref(), &sim.truth)?;
    let times = uniform_times(0.0, sim.dt, sim.samples);
    let os = sim.input_oversample;
    let fine = uniform_times(0.0, sim.dt / os as f64, (sim.samples - 1) * os + 1);
    let input_names = model.input_names();
    if let Some(k) = sim.input.keys().find(|k| !input_names.contains(k)) {
        return Err(Error::Config(format!("unknown input channel '{k}'")));
    }
    let mut u = DMatrix::zeros(fine.len(), d.nu);
    for (c, name) in input_names.iter().enumerate() {
        for comp in sim.input.get(name).map(Vec::as_slice).unwrap_or_default() {
            let v = match comp {
                InputComponent::Multistep3211 { start, unit, amplitude } => {
                    doublet_3211(&fine, *start, *unit, *amplitude)
                }
                InputComponent::Pulse { start, width, amplitude } => pulse(&fine, *start, *width, *amplitude),
                InputComponent::Constant { value } => vec![*value; fine.len()],
                InputComponent::Noise { band, rms, seed } => band_limited_noise(&fine, band[0], band[1], *rms, *seed)?,
            };
            for (k, x) in v.into_iter().enumerate() {
                u[(k, c)] += x;
            }
        }
    }
    let input = InputSignal::new(fine, u)?;
    let options = SimulationOptions { substeps: sim.substeps, noise_sigma: Vec::new(), seed };
    let mut data = match &sim.feedback {
        Some(rows) => {
            if rows.len() != d.nu || rows.iter().any(|r| r.len() != d.nx) {
                return Err(Error::Config(format!("feedback gain must be {}×{}", d.nu, d.nx)));
            }
            let gain = DMatrix::from_fn(d.nu, d.nx, |r, c| rows[r][c]);
            simulate_closed_loop(model.clone(), gain, &truth, &sim.initial_state, &input, &times, &options)?
        }
        None => simulate(model.as_ref(), &truth, &sim.initial_state, &input, &times, &options)?,
    };
    let sigma = match (&sim.noise, sim.noise_fraction) {
        (Some(_), Some(_)) => return Err(Error::Config("give either noise or noise_fraction".into())),
        (Some(s), None) => s.clone(),
        (None, Some(f)) => (0..d.ny).map(|c| f * column_std(data.outputs.column(c).iter())).collect(),
        (None, None) => Vec::new(),
    };
    if !sigma.is_empty() {
        add_noise(&mut data.outputs, &sigma, seed)?;
    }
    Ok(data)
}

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.16e}")
    }
}

fn toml_key(k: &str) -> String {
    if !k.is_empty() && k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        k.to_string()
    } else {
        toml::Value::from(k).to_string()
    }
}

fn toml_str(s: &str) -> String {
    toml::Value::from(s).to_string()
}

fn section(out: &mut String, title: &str, names: &[String], values: &[f64]) {
    out.push_str(&format!("\n[{title}]\n"));
    for (n, v) in names.iter().zip(values) {
        out.push_str(&format!("{} = {}\n", toml_key(n), fmt_f64(*v)));
    }
}

/// Text of the result file.
pub fn render_result(report: &EstimateReport) -> String {
    let mut s = String::new();
    s.push_str(&format!("format = {REPORT_FORMAT}\n"));
    s.push_str(&format!("model = {}\n", toml_str(&report.model)));
    s.push_str(&format!("transcription = {}\n", toml_str(&report.transcription.to_string())));
    s.push_str(&format!("status = {}\n", toml_str(&report.status.to_string())));
    s.push_str(&format!("objective = {}\n", fmt_f64(report.objective)));
    s.push_str(&format!("kkt = {}\n", fmt_f64(report.kkt)));
    s.push_str(&format!("violation = {}\n", fmt_f64(report.violation)));
    s.push_str(&format!("iterations = {}\n", report.iterations.len()));
    let outs: Vec<String> = report.output_names.iter().map(|n| toml_str(n)).collect();
    s.push_str(&format!("outputs = [{}]\n", outs.join(", ")));
    if let Some(e) = &report.error {
        s.push_str(&format!("error = {}\n", toml_str(e)));
    }
    section(&mut s, "parameters", &report.names, &report.theta);
    section(&mut s, "initial", &report.names, &report.initial);
    if let Some(se) = &report.std_error {
        section(&mut s, "std_error", &report.names, se);
    }
    section(&mut s, "residual_std", &report.output_names, &report.residual_std);
    if let Some(f) = &report.frequency {
        s.push_str("\n[frequency]\n");
        if let Some(m) = f.median_relative_deviation() {
            s.push_str(&format!("median_relative_deviation = {}\n", fmt_f64(m)));
        }
        let d: Vec<String> = f.dropped.iter().map(|v| fmt_f64(*v)).collect();
        s.push_str(&format!("dropped = [{}]\n", d.join(", ")));
    }
    s
}

const ITERATION_HEADER: [&str; 8] =
    ["iter", "objective", "kkt", "violation", "step_norm", "alpha", "regularization", "penalty"];

/// Writes the result file, trajectory, iteration log and, when present,
/// the frequency table into `dir`, creating it if needed.
pub fn write_report(report: &EstimateReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let io = |p: &Path, e: std::io::Error| Error::Io(format!("{}: {e}", p.display()));
    let p = dir.join(RESULT_FILE);
    std::fs::write(&p, render_result(report)).map_err(|e| io(&p, e))?;

    let mut header = vec!["time".to_string()];
    for n in &report.output_names {
        header.push(n.clone());
        if report.predicted.is_some() {
            header.push(format!("{n}_hat"));
        }
    }
    let rows = report.times.iter().enumerate().map(|(k, &t)| {
        let mut r = vec![t];
        for c in 0..report.output_names.len() {
            r.push(report.measured[(k, c)]);
            if let Some(y) = &report.predicted {
                r.push(y[(k, c)]);
            }
        }
        r
    });
    write_table(&dir.join(TRAJECTORY_FILE), &header, rows)?;

    let header: Vec<String> = ITERATION_HEADER.iter().map(|s| s.to_string()).collect();
    let rows = report.iterations.iter().map(|it| {
        vec![it.iter as f64, it.objective, it.kkt, it.violation, it.step_norm, it.alpha, it.regularization, it.penalty]
    });
    write_table(&dir.join(ITERATIONS_FILE), &header, rows)?;

    let fp = dir.join(FREQUENCY_FILE);
    match &report.frequency {
        Some(f) => std::fs::write(&fp, f.to_csv()).map_err(|e| io(&fp, e))?,
        None if fp.exists() => std::fs::remove_file(&fp).map_err(|e| io(&fp, e))?,
        None => {}
    }
    Ok(())
}

fn get<'a>(t: &'a toml::Table, key: &str) -> Result<&'a toml::Value> {
    t.get(key).ok_or_else(|| Error::Config(format!("result file lacks '{key}'")))
}

fn as_f64(v: &toml::Value) -> Result<f64> {
    match v {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        other => Err(Error::Config(format!("expected a number, found {other}"))),
    }
}

fn as_str<'a>(t: &'a toml::Table, key: &str) -> Result<&'a str> {
    get(t, key)?.as_str().ok_or_else(|| Error::Config(format!("'{key}' must be a string")))
}

fn named_section(t: &toml::Table, key: &str) -> Result<Option<(Vec<String>, Vec<f64>)>> {
    let Some(v) = t.get(key) else { return Ok(None) };
    let tab = v.as_table().ok_or_else(|| Error::Config(format!("'{key}' must be a table")))?;
    let mut names = Vec::new();
    let mut values = Vec::new();
    for (k, v) in tab {
        names.push(k.clone());
        values.push(as_f64(v)?);
    }
    Ok(Some((names, values)))
}

/// Reads a report written by [`write_report`].
pub fn read_report(dir: &Path) -> Result<EstimateReport> {
    let p = dir.join(RESULT_FILE);
    let text = std::fs::read_to_string(&p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
    let t: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    if get(&t, "format")?.as_integer() != Some(REPORT_FORMAT) {
        return Err(Error::Config(format!("unsupported result format in {}", p.display())));
    }
    let (names, theta) = named_section(&t, "parameters")?.unwrap_or_default();
    let initial = named_section(&t, "initial")?.map(|s| s.1).unwrap_or_default();
    let std_error = named_section(&t, "std_error")?.map(|s| s.1);
    let residual_std = named_section(&t, "residual_std")?.map(|s| s.1).unwrap_or_default();
    let output_names: Vec<String> = get(&t, "outputs")?
        .as_array()
        .ok_or_else(|| Error::Config("'outputs' must be an array".into()))?
        .iter()
        .map(|v| v.as_str().map(str::to_string).ok_or_else(|| Error::Config("bad output name".into())))
        .collect::<Result<_>>()?;

    let (header, rows) = read_table(&dir.join(TRAJECTORY_FILE))?;
    let ny = output_names.len();
    let with_pred = header.len() == 1 + 2 * ny;
    let stride = if with_pred { 2 } else { 1 };
    let n = rows.len();
    let times = rows.iter().map(|r| r[0]).collect();
    let measured = DMatrix::from_fn(n, ny, |k, c| rows[k][1 + stride * c]);
    let predicted = with_pred.then(|| DMatrix::from_fn(n, ny, |k, c| rows[k][2 + stride * c]));

    let (_, rows) = read_table(&dir.join(ITERATIONS_FILE))?;
    let iterations = rows
        .iter()
        .map(|r| IterationRecord {
            iter: r[0] as usize,
            objective: r[1],
            kkt: r[2],
            violation: r[3],
            step_norm: r[4],
            alpha: r[5],
            regularization: r[6],
            penalty: r[7],
        })
        .collect();

    let frequency = match t.get("frequency").and_then(|v| v.as_table()) {
        Some(f) => {
            let (_, rows) = read_table(&dir.join(FREQUENCY_FILE))?;
            let dropped = match f.get("dropped").and_then(|v| v.as_array()) {
                Some(a) => a.iter().map(as_f64).collect::<Result<_>>()?,
                None => Vec::new(),
            };
            Some(FreqComparison {
                rows: rows.iter().map(|r| FreqRow { freq: r[0], etfe: r[1], model: r[2] }).collect(),
                dropped,
            })
        }
        None => None,
    };

    Ok(EstimateReport {
        model: as_str(&t, "model")?.to_string(),
        transcription: as_str(&t, "transcription")?.parse()?,
        names,
        initial,
        theta,
        std_error,
        objective: as_f64(get(&t, "objective")?)?,
        status: as_str(&t, "status")?.parse()?,
        kkt: as_f64(get(&t, "kkt")?)?,
        violation: as_f64(get(&t, "violation")?)?,
        iterations,
        error: t.get("error").and_then(|v| v.as_str()).map(str::to_string),
        times,
        output_names,
        measured,
        predicted,
        residual_std,
        frequency,
    })
}

/// Text of a study summary.
pub fn render_study(study: &StudyReport) -> String {
    let mut s = String::new();
    s.push_str(&format!("format = {REPORT_FORMAT}\n"));
    s.push_str(&format!("runs = {}\n", study.runs.len()));
    s.push_str(&format!("converged = {}\n", study.runs.iter().filter(|r| r.converged()).count()));
    s.push_str(&format!("best_fraction = {}\n", fmt_f64(study.best_fraction())));
    if let Some(best) = study.clusters.first() {
        s.push_str(&format!("best_objective = {}\n", fmt_f64(best.objective)));
    }
    for c in &study.clusters {
        s.push_str("\n[[cluster]]\n");
        s.push_str(&format!("objective = {}\n", fmt_f64(c.objective)));
        s.push_str(&format!("fraction = {}\n", fmt_f64(c.fraction)));
        let m: Vec<String> = c.members.iter().map(|i| i.to_string()).collect();
        s.push_str(&format!("members = [{}]\n", m.join(", ")));
    }
    s
}

/// Writes `study.txt` and `runs.csv` (index, status code, objective,
/// iterations, then each start and final parameter).
pub fn write_study(study: &StudyReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let p = dir.join("study.txt");
    std::fs::write(&p, render_study(study)).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
    let mut header: Vec<String> = ["run", "converged", "objective", "iterations"].map(String::from).to_vec();
    header.extend(study.names.iter().map(|n| format!("{n}_0")));
    header.extend(study.names.iter().cloned());
    let rows = study.runs.iter().map(|r| {
        let mut row = vec![r.index as f64, if r.converged() { 1.0 } else { 0.0 }, r.objective, r.iterations as f64];
        row.extend(&r.theta0);
        row.extend(&r.theta);
        row
    });
    write_table(&dir.join("runs.csv"), &header, rows)
}
