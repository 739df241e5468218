use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use oemcoll::config::RunConfig;
use oemcoll::csvio::{load_csv, write_experiment};
use oemcoll::derivatives::check_problem_derivatives;
use oemcoll::estimate::{
    build_problem, read_report, restart_study, run_estimate, simulate_from_config, starting_point, write_report,
    write_study, FREQUENCY_FILE,
};
use oemcoll::model::ExperimentData;
use oemcoll::models::Modal;
use oemcoll::signal::{freq_response_compare, preprocess};
use oemcoll::{Error, Result};

#[derive(Parser)]
#[command(name = "oemcoll", version, about = "Output-error parameter estimation by collocation and shooting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured transcription.
    #[arg(long)]
    transcription: Option<String>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate parameters from a CSV experiment.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic experiment from the [simulate] section.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Output directory; the data goes to data.csv inside it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Restart study with random starting values.
    Study {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        runs: usize,
    },
    /// Compare supplied derivatives against finite differences.
    CheckDerivatives {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Random points in addition to the starting point.
        #[arg(long, default_value_t = 0)]
        runs: usize,
        #[arg(long, default_value_t = 1e-5)]
        threshold: f64,
    },
    /// ETFE against the modal model response.
    FreqCompare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Directory holding an earlier `estimate` result; the configured
        /// parameters are used otherwise.
        #[arg(long)]
        result: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::from_path(&common.config)?;
    if let Some(t) = &common.transcription {
        cfg.transcription.kind = t.clone();
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_data(cfg: &RunConfig, path: &Path) -> Result<ExperimentData> {
    let model = cfg.build_model()?;
    load_csv(path, &cfg.output_channels(model.as_ref()), &cfg.input_channels(model.as_ref()))
}

fn estimate(common: &Common, data: &Path, out: &Path) -> Result<bool> {
    let cfg = load_config(common)?;
    let report = run_estimate(&cfg, &load_data(&cfg, data)?)?;
    write_report(&report, out)?;
    println!(
        "status: {}  objective: {:.10e}  iterations: {}",
        report.status,
        report.objective,
        report.iterations.len()
    );
    for (n, v) in report.names.iter().zip(&report.theta) {
        println!("  {n:>12} = {v:.10e}");
    }
    if let Some(e) = &report.error {
        eprintln!("solver: {e}");
    }
    Ok(report.converged())
}

fn simulate_cmd(common: &Common, out: &Path) -> Result<bool> {
    let cfg = load_config(common)?;
    let data = simulate_from_config(&cfg, cfg.seed)?;
    std::fs::create_dir_all(out)?;
    let path = out.join("data.csv");
    write_experiment(&path, &data)?;
    println!("wrote {} samples to {}", data.len(), path.display());
    Ok(true)
}

fn study(common: &Common, data: &Path, out: &Path, runs: usize) -> Result<bool> {
    let cfg = load_config(common)?;
    let report = restart_study(&cfg, &load_data(&cfg, data)?, runs, cfg.seed)?;
    write_study(&report, out)?;
    let converged = report.runs.iter().filter(|r| r.converged()).count();
    println!("runs: {runs}  converged: {converged}  best cluster: {:.1} %", 100.0 * report.best_fraction());
    Ok(true)
}

fn check_derivatives(common: &Common, data: &Path, runs: usize, threshold: f64) -> Result<bool> {
    let cfg = load_config(common)?;
    let model = cfg.build_model()?;
    let mut data = load_data(&cfg, data)?;
    if let Some(p) = cfg.preprocessing() {
        data = preprocess(&data, &p)?;
    }
    let problem = build_problem(&cfg, model.clone(), &data)?;
    let xi0 = starting_point(&cfg, problem.as_ref(), &cfg.initial_model_params(model.as_ref())?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut all_passed = true;
    for k in 0..=runs {
        let x: Vec<f64> = if k == 0 {
            xi0.clone()
        } else {
            xi0.iter().map(|v| v + 0.1 * v.abs().max(1e-2) * rng.random_range(-1.0..1.0)).collect()
        };
        let report = check_problem_derivatives(problem.as_ref(), &x, threshold)?;
        println!("point {k}:");
        print!("{}", report.render(10));
        all_passed &= report.passed();
    }
    Ok(all_passed)
}

fn freq_compare(common: &Common, data: &Path, result: Option<&Path>, out: &Path) -> Result<bool> {
    let cfg = load_config(common)?;
    let band =
        cfg.frequency.as_ref().ok_or_else(|| Error::Config("freq-compare needs a [frequency] section".into()))?.band;
    let model = Modal::new(cfg.model.modes.unwrap_or(2))?;
    let mut data = load_data(&cfg, data)?;
    if let Some(p) = cfg.preprocessing() {
        data = preprocess(&data, &p)?;
    }
    let np = oemcoll::model::DynamicalModel::dims(&model).np;
    let theta = match result {
        Some(dir) => read_report(dir)?.theta[..np].to_vec(),
        None => cfg.initial_model_params(&model)?,
    };
    let cmp = freq_response_compare(&data, &model, &theta, (band[0], band[1]))?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(FREQUENCY_FILE), cmp.to_csv())?;
    match cmp.median_relative_deviation() {
        Some(m) => println!("{} bins, median relative deviation {m:.4}", cmp.rows.len()),
        None => println!("no usable bins"),
    }
    if !cmp.dropped.is_empty() {
        println!("{} bins dropped (zero input spectrum)", cmp.dropped.len());
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Estimate { common, data, out } => estimate(common, data, out),
        Command::Simulate { common, out } => simulate_cmd(common, out),
        Command::Study { common, data, out, runs } => study(common, data, out, *runs),
        Command::CheckDerivatives { common, data, runs, threshold } => {
            check_derivatives(common, data, *runs, *threshold)
        }
        Command::FreqCompare { common, data, result, out } => freq_compare(common, data, result.as_deref(), out),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
