//! Run configuration, read from TOML.
//!
//! ```toml
//! version = 1                      # required, must be 1
//! seed = 7
//!
//! [model]
//! name = "short-period"            # hfb320 | short-period | modal
//! trim_airspeed = 44.57            # short-period only
//! # modes = 2                      # modal only
//! # [model.constants]              # hfb320 only, every field required
//!
//! [data]                           # CSV channel names, default: model names
//! outputs = ["w", "q", "az"]
//! inputs = ["de"]
//!
//! [transcription]
//! kind = "collocation"             # collocation | multiple-shooting | single-shooting
//! nodes = 3                        # LGL nodes per collocation segment
//! # segments = 4                   # default: one per sample (collocation), 4 (multiple shooting)
//! integrator = "rk4"               # shooting only: rk4 | euler
//! substeps = 1
//! # state_channels = { w = "w" }   # default: states measured by a same-named output
//!
//! [metric]
//! kind = "gaussian-diag"           # gaussian-diag | gaussian-diag-fixed | gaussian-full
//! # initial_sigma = 1.0            # start value of the estimated σ, default: each channel's std
//! # sigma = [0.1, 0.1, 0.1]        # gaussian-diag-fixed
//! # covariance = [[...], ...]      # gaussian-full
//!
//! [parameters]                     # starting values, missing names start at 0
//! Zw = 0.0
//!
//! [draws]                          # uniform start ranges for `study`
//! Zw = [-2.0, 0.0]
//!
//! [solver]
//! kkt_tol = 1e-6
//! constraint_tol = 1e-8
//! max_iter = 200
//! hessian = "gauss-newton"         # gauss-newton | exact | damped-bfgs
//!
//! [preprocess]                     # optional band-pass and decimation
//! band = [6.0, 32.0]
//! order = 5
//! cascades = 2
//! decimation = 20
//!
//! [frequency]                      # optional ETFE comparison band, modal only
//! band = [3.0, 30.0]
//!
//! [simulate]                       # `simulate` verb
//! dt = 0.02
//! samples = 500
//! substeps = 10
//! initial_state = [0.0, 0.0]
//! noise = [0.01, 0.01, 0.1]        # or noise_fraction = 0.05 (of each channel's std)
//! # feedback = [[-0.05, -0.5]]     # u = command − K·x
//! # input_oversample = 10
//! [simulate.truth]
//! Zw = -1.2
//! [[simulate.input.de]]
//! kind = "3211"                    # 3211 | pulse | constant | noise
//! start = 1.0
//! unit = 0.5
//! amplitude = 0.02
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::Integrator;
use crate::model::{DynamicalModel, ExperimentData, Metric};
use crate::models::{Hfb320, Hfb320Constants, Modal, ShortPeriod};
use crate::nlp::{HessianMode, SolverOptions};
use crate::signal::Preprocessing;
use crate::transcription::TranscriptionKind;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    pub model: ModelConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub transcription: TranscriptionConfig,
    #[serde(default)]
    pub metric: MetricConfig,
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
    #[serde(default)]
    pub draws: BTreeMap<String, [f64; 2]>,
    #[serde(default)]
    pub solver: SolverConfig,
    pub preprocess: Option<PreprocessConfig>,
    pub frequency: Option<FrequencyConfig>,
    pub simulate: Option<SimulateConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    pub trim_airspeed: Option<f64>,
    pub modes: Option<usize>,
    pub constants: Option<Hfb320Constants>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub outputs: Option<Vec<String>>,
    pub inputs: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TranscriptionConfig {
    pub kind: String,
    pub nodes: usize,
    pub segments: Option<usize>,
    pub integrator: String,
    pub substeps: usize,
    pub state_channels: Option<BTreeMap<String, String>>,
}

impl Default for TranscriptionConfig {
    fn default() -> Self {
        TranscriptionConfig {
            kind: "collocation".into(),
            nodes: 3,
            segments: None,
            integrator: "rk4".into(),
            substeps: 1,
            state_channels: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricConfig {
    pub kind: String,
    pub initial_sigma: Option<f64>,
    pub sigma: Option<Vec<f64>>,
    pub covariance: Option<Vec<Vec<f64>>>,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig { kind: "gaussian-diag".into(), initial_sigma: None, sigma: None, covariance: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub kkt_tol: f64,
    pub constraint_tol: f64,
    pub max_iter: usize,
    pub hessian: Option<String>,
    pub regularization: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = SolverOptions::default();
        SolverConfig {
            kkt_tol: d.kkt_tol,
            constraint_tol: d.constraint_tol,
            max_iter: d.max_iter,
            hessian: None,
            regularization: d.regularization,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    pub band: [f64; 2],
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default = "default_cascades")]
    pub cascades: usize,
    #[serde(default = "default_one")]
    pub decimation: usize,
}

fn default_order() -> usize {
    5
}

fn default_cascades() -> usize {
    2
}

fn default_one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencyConfig {
    pub band: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub dt: f64,
    pub samples: usize,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    pub initial_state: Vec<f64>,
    #[serde(default)]
    pub truth: BTreeMap<String, f64>,
    pub noise: Option<Vec<f64>>,
    pub noise_fraction: Option<f64>,
    pub feedback: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_one")]
    pub input_oversample: usize,
    #[serde(default)]
    pub input: BTreeMap<String, Vec<InputComponent>>,
}

fn default_substeps() -> usize {
    10
}

/// One additive component of a simulated input channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum InputComponent {
    #[serde(rename = "3211")]
    Multistep3211 { start: f64, unit: f64, amplitude: f64 },
    #[serde(rename = "pulse")]
    Pulse { start: f64, width: f64, amplitude: f64 },
    #[serde(rename = "constant")]
    Constant { value: f64 },
    #[serde(rename = "noise")]
    Noise {
        band: [f64; 2],
        rms: f64,
        #[serde(default)]
        seed: u64,
    },
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.transcription_kind()?;
        self.integrator()?;
        if self.transcription.nodes < 2 {
            return Err(Error::Config("collocation needs at least 2 nodes per segment".into()));
        }
        if self.transcription.substeps == 0 {
            return Err(Error::Config("substeps must be at least 1".into()));
        }
        self.solver_options()?.validate()?;
        if self.frequency.is_some() && self.model.name != "modal" {
            return Err(Error::Config("[frequency] needs the modal model".into()));
        }
        if let Some(p) = &self.preprocess {
            if p.decimation == 0 {
                return Err(Error::Config("decimation factor must be at least 1".into()));
            }
        }
        for (name, [lo, hi]) in &self.draws {
            if !(lo <= hi) {
                return Err(Error::Config(format!("draw range for {name} is empty")));
            }
        }
        if self.metric.initial_sigma.is_some_and(|s| !(s > 0.0)) {
            return Err(Error::Config("initial_sigma must be positive".into()));
        }
        let model = self.build_model()?;
        let names = model.param_names();
        for key in self.parameters.keys().chain(self.draws.keys()) {
            if !names.contains(key) {
                return Err(Error::Config(format!("unknown parameter '{key}' for model {}", self.model.name)));
            }
        }
        Ok(())
    }

    pub fn transcription_kind(&self) -> Result<TranscriptionKind> {
        TranscriptionKind::from_str(&self.transcription.kind)
    }

    pub fn integrator(&self) -> Result<Integrator> {
        Integrator::from_str(&self.transcription.integrator)
    }

    pub fn build_model(&self) -> Result<Arc<dyn DynamicalModel>> {
        let m = &self.model;
        match m.name.as_str() {
            "hfb320" => {
                let c = m.constants.ok_or_else(|| Error::Config("hfb320 requires [model.constants]".into()))?;
                Ok(Arc::new(Hfb320::new(c)?))
            }
            "short-period" => {
                let u0 =
                    m.trim_airspeed.ok_or_else(|| Error::Config("short-period requires model.trim_airspeed".into()))?;
                Ok(Arc::new(ShortPeriod::new(u0)?))
            }
            "modal" => Ok(Arc::new(Modal::new(m.modes.unwrap_or(2))?)),
            "user-plugin" => Err(Error::Config(
                "user-plugin models are supplied through the library API, not the config file".into(),
            )),
            other => Err(Error::Config(format!("unknown model '{other}'"))),
        }
    }

    pub fn output_channels(&self, model: &dyn DynamicalModel) -> Vec<String> {
        self.data.outputs.clone().unwrap_or_else(|| model.output_names())
    }

    pub fn input_channels(&self, model: &dyn DynamicalModel) -> Vec<String> {
        self.data.inputs.clone().unwrap_or_else(|| model.input_names())
    }

    /// Model parameters by name; missing names are zero.
    pub fn named_values(model: &dyn DynamicalModel, values: &BTreeMap<String, f64>) -> Result<Vec<f64>> {
        let names = model.param_names();
        if let Some(k) = values.keys().find(|k| !names.contains(k)) {
            return Err(Error::Config(format!("unknown parameter '{k}'")));
        }
        Ok(names.iter().map(|n| values.get(n).copied().unwrap_or(0.0)).collect())
    }

    pub fn initial_model_params(&self, model: &dyn DynamicalModel) -> Result<Vec<f64>> {
        Self::named_values(model, &self.parameters)
    }

    pub fn metric(&self, ny: usize) -> Result<Metric> {
        let mc = &self.metric;
        match mc.kind.as_str() {
            "gaussian-diag" => Ok(Metric::gaussian_diag_estimated(ny)),
            "gaussian-diag-fixed" => {
                let s = mc
                    .sigma
                    .clone()
                    .ok_or_else(|| Error::Config("gaussian-diag-fixed requires metric.sigma".into()))?;
                if s.len() != ny {
                    return Err(Error::Config(format!("metric.sigma has {} entries for {ny} outputs", s.len())));
                }
                Metric::gaussian_diag_fixed(s)
            }
            "gaussian-full" => {
                let rows = mc
                    .covariance
                    .as_ref()
                    .ok_or_else(|| Error::Config("gaussian-full requires metric.covariance".into()))?;
                if rows.len() != ny || rows.iter().any(|r| r.len() != ny) {
                    return Err(Error::Config(format!("metric.covariance must be {ny}×{ny}")));
                }
                Metric::gaussian_full(DMatrix::from_fn(ny, ny, |r, c| rows[r][c]))
            }
            other => Err(Error::Config(format!("unknown metric '{other}'"))),
        }
    }

    /// Starting values of the metric parameters (`ln σ` when estimated).
    pub fn initial_metric_params(&self, metric: &Metric, data: &ExperimentData) -> Vec<f64> {
        (0..metric.num_params())
            .map(|c| {
                let s = match self.metric.initial_sigma {
                    Some(s) => s,
                    None if c < data.ny() => channel_std(data, c),
                    None => 1.0,
                };
                s.ln()
            })
            .collect()
    }

    pub fn solver_options(&self) -> Result<SolverOptions> {
        let s = &self.solver;
        Ok(SolverOptions {
            kkt_tol: s.kkt_tol,
            constraint_tol: s.constraint_tol,
            max_iter: s.max_iter,
            hessian: s.hessian.as_deref().map(HessianMode::from_str).transpose()?,
            regularization: s.regularization,
            ..SolverOptions::default()
        })
    }

    pub fn preprocessing(&self) -> Option<Preprocessing> {
        self.preprocess.as_ref().map(|p| Preprocessing {
            band: (p.band[0], p.band[1]),
            order: p.order,
            cascades: p.cascades,
            decimation: p.decimation,
        })
    }

    /// For each model state, the output channel measuring it.
    pub fn state_channel_map(&self, model: &dyn DynamicalModel, outputs: &[String]) -> Result<Vec<Option<usize>>> {
        let states = model.state_names();
        match &self.transcription.state_channels {
            Some(map) => {
                if let Some(k) = map.keys().find(|k| !states.contains(k)) {
                    return Err(Error::Config(format!("unknown state '{k}' in state_channels")));
                }
                states
                    .iter()
                    .map(|s| match map.get(s) {
                        None => Ok(None),
                        Some(ch) => outputs
                            .iter()
                            .position(|o| o == ch)
                            .map(Some)
                            .ok_or_else(|| Error::Config(format!("state_channels: no output '{ch}'"))),
                    })
                    .collect()
            }
            None => Ok(states.iter().map(|s| outputs.iter().position(|o| o == s)).collect()),
        }
    }
}

fn channel_std(data: &ExperimentData, c: usize) -> f64 {
    let col = data.outputs.column(c);
    let n = col.len() as f64;
    let mean = col.sum() / n;
    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var.sqrt() > 0.0 {
        var.sqrt()
    } else {
        1.0
    }
}
