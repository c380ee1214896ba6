//! `ghmnl` command-line tool.
//!
//! Exit status: 0 on success, 1 on input or runtime errors (nothing is
//! written), 2 when a fit stops without converging (outputs are written).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ghmnl::data_io::{
    curves_to_csv, curves_to_json, dataset_to_csv, probabilities_to_csv, read_dataset, read_dataset_for_prediction,
    read_profile, read_report, read_scenario, scenario_to_toml, write_atomic, FitReport, ModelConfig, ReportMetadata,
    SimulationMetadata,
};
use ghmnl::likelihood::predict;
use ghmnl::simulation::{probability_curves, profile_block, simulate_dataset, ScenarioSpec, SweepTarget};
use ghmnl::{build_design, fit, Error, ParameterVector};
use log::{info, warn};

#[derive(Parser)]
#[command(name = "ghmnl", version, about = "Heterogeneous multinomial logit models: fit, predict, simulate, curves")]
struct Cli {
    /// Seed for every random draw; recorded in output metadata.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for likelihood evaluation and simulation.
    #[arg(long, global = true, env = "GHMNL_THREADS")]
    threads: Option<usize>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to long-format data.
    Fit(FitArgs),
    /// Choice probabilities for new data from a fit report.
    Predict(PredictArgs),
    /// Simulate a dataset from a scenario.
    Simulate(SimulateArgs),
    /// Probability curves along a heterogeneity coefficient or covariate.
    Curves(CurvesArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Long-format CSV.
    #[arg(long)]
    data: PathBuf,
    /// Model configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for report.json, report.txt and fitted_probabilities.csv.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the configured iteration limit.
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Overrides the configured ridge penalty.
    #[arg(long)]
    penalty: Option<f64>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: PathBuf,
    /// report.json of an earlier fit.
    #[arg(long)]
    params: PathBuf,
    /// Probability CSV to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario TOML file, or a built-in name: figure1, recovery.
    #[arg(long)]
    scenario: String,
    /// Overrides the scenario's number of choosers.
    #[arg(long)]
    n_choosers: Option<usize>,
    /// Output directory for data.csv, config.toml, scenario.toml and metadata.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Sweep {
    Coefficient,
    Covariate,
}

#[derive(Args)]
struct CurvesArgs {
    /// Scenario file or built-in name; its profile and true parameters are used.
    #[arg(long, conflicts_with_all = ["config", "params", "profile"])]
    scenario: Option<String>,
    /// Model configuration, used with --params and --profile.
    #[arg(long, requires_all = ["params", "profile"])]
    config: Option<PathBuf>,
    /// report.json of an earlier fit.
    #[arg(long)]
    params: Option<PathBuf>,
    /// TOML table of covariate values for the chooser.
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Comma-separated grid values.
    #[arg(long, default_value = "-3,-1,0,1,3", allow_hyphen_values = true)]
    grid: String,
    /// Heterogeneity covariate to sweep; defaults to the first.
    #[arg(long)]
    w_name: Option<String>,
    #[arg(long, value_enum, default_value = "coefficient")]
    sweep: Sweep,
    /// Curve CSV to write.
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON copy of the curves.
    #[arg(long)]
    json: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();

    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: cannot configure {threads} threads: {e}");
            return ExitCode::from(1);
        }
    }
    let outcome = match &cli.command {
        Command::Fit(args) => cmd_fit(args, cli.seed),
        Command::Predict(args) => cmd_predict(args).map(|()| true),
        Command::Simulate(args) => cmd_simulate(args, cli.seed).map(|()| true),
        Command::Curves(args) => cmd_curves(args).map(|()| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

/// Refuses output paths that coincide with an input.
fn ensure_distinct(outputs: &[&Path], inputs: &[&Path]) -> ghmnl::Result<()> {
    let canonical = |p: &Path| fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    for out in outputs {
        let out_c = canonical(out);
        if inputs.iter().any(|i| canonical(i) == out_c) {
            return Err(Error::Config(format!("output {} would overwrite an input", out.display())));
        }
    }
    Ok(())
}

fn load_config(path: &Path) -> ghmnl::Result<ModelConfig> {
    ModelConfig::load(path)
}

/// Returns whether the fit converged.
fn cmd_fit(args: &FitArgs, seed: Option<u64>) -> ghmnl::Result<bool> {
    let report_json = args.out.join("report.json");
    let report_txt = args.out.join("report.txt");
    let probabilities_csv = args.out.join("fitted_probabilities.csv");
    ensure_distinct(
        &[&report_json, &report_txt, &probabilities_csv],
        &[&args.data, &args.config],
    )?;
    let config = load_config(&args.config)?;
    let spec = config.model_spec();
    let mut options = config.fit_options();
    if let Some(n) = args.max_iterations {
        options.max_iterations = n;
    }
    if let Some(p) = args.penalty {
        options.penalty = p;
    }
    let loaded = read_dataset(&args.data, &config)?;
    for w in &loaded.warnings {
        warn!("{w}");
    }
    let design = build_design(&loaded.dataset, &spec)?;
    info!("fitting {} parameters on {} choosers", spec.n_free(), design.n_choosers());
    let result = fit(&design, &spec, &options)?;
    let probabilities = probabilities_to_csv(&predict(&design, &result.theta)?)?;

    let mut echoed = config.clone();
    echoed.fit.max_iterations = options.max_iterations;
    echoed.penalty = options.penalty;
    let metadata = ReportMetadata::new(seed, Some(args.data.display().to_string()), Some(echoed));
    let mut report = FitReport::new(&result, &spec, options.penalty, design.n_choosers(), metadata);
    report.document.warnings.splice(0..0, loaded.warnings.iter().cloned());

    report.write(&args.out)?;
    write_atomic(&probabilities_csv, probabilities.as_bytes())?;
    if result.converged {
        info!("converged after {} iterations", result.iterations);
    } else {
        warn!("fit did not converge; report written to {}", args.out.display());
    }
    Ok(result.converged)
}

fn cmd_predict(args: &PredictArgs) -> ghmnl::Result<()> {
    ensure_distinct(&[&args.out], &[&args.data, &args.config, &args.params])?;
    let config = load_config(&args.config)?;
    let spec = config.model_spec();
    let report = read_report(&args.params)?;
    let params = fitted_params(&report, &spec)?;
    let loaded = read_dataset_for_prediction(&args.data, &config)?;
    for w in &loaded.warnings {
        warn!("{w}");
    }
    let design = build_design(&loaded.dataset, &spec)?;
    let table = predict(&design, &params.pack(&spec)?)?;
    write_atomic(&args.out, probabilities_to_csv(&table)?.as_bytes())
}

/// Parameters from a report, checked against the configured model.
fn fitted_params(report: &ghmnl::data_io::FitReportDocument, spec: &ghmnl::ModelSpec) -> ghmnl::Result<ParameterVector> {
    let expected: Vec<String> = spec.parameter_labels().iter().map(ToString::to_string).collect();
    let found: Vec<String> = report.parameters.iter().map(|e| e.name.clone()).collect();
    if expected.len() != found.len() {
        return Err(Error::dimension("fitted parameters", expected.len(), found.len()));
    }
    if let Some((e, f)) = expected.iter().zip(&found).find(|(e, f)| e != f) {
        return Err(Error::Config(format!(
            "fitted parameters do not match the configuration: expected {e}, found {f}"
        )));
    }
    ParameterVector::unpack(&report.theta, spec)
}

fn load_scenario(name: &str) -> ghmnl::Result<(ScenarioSpec, String)> {
    match name {
        "figure1" => Ok((ScenarioSpec::figure1(), "figure1".into())),
        "recovery" => Ok((ScenarioSpec::recovery(5000, 20240601), "recovery".into())),
        path => Ok((read_scenario(Path::new(path))?, path.into())),
    }
}

fn cmd_simulate(args: &SimulateArgs, seed: Option<u64>) -> ghmnl::Result<()> {
    let (mut scenario, name) = load_scenario(&args.scenario)?;
    let files = ["data.csv", "config.toml", "scenario.toml", "metadata.json"].map(|f| args.out.join(f));
    ensure_distinct(&files.iter().map(PathBuf::as_path).collect::<Vec<_>>(), &[Path::new(&args.scenario)])?;
    if let Some(n) = args.n_choosers {
        scenario.n_choosers = n;
    }
    let seed = seed.or(scenario.seed).unwrap_or_else(|| {
        let drawn = rand::random();
        info!("no seed given; drew {drawn}");
        drawn
    });
    scenario.seed = Some(seed);
    scenario.validate()?;
    let data = simulate_dataset(&scenario)?;
    let config = ModelConfig::for_scenario(&scenario);
    let contents = [
        dataset_to_csv(&data, &config)?,
        config.to_toml_string()?,
        scenario_to_toml(&scenario)?,
        SimulationMetadata::new(seed, name, scenario.n_choosers).to_json()?,
    ];
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    for (path, text) in files.iter().zip(&contents) {
        write_atomic(path, text.as_bytes())?;
    }
    Ok(())
}

fn parse_grid(text: &str) -> ghmnl::Result<Vec<f64>> {
    let grid = text
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("grid value '{}' is not a number", v.trim())))
        })
        .collect::<ghmnl::Result<Vec<_>>>()?;
    if grid.is_empty() {
        return Err(Error::Config("empty grid".into()));
    }
    Ok(grid)
}

fn cmd_curves(args: &CurvesArgs) -> ghmnl::Result<()> {
    let mut inputs: Vec<&Path> = [&args.config, &args.params, &args.profile]
        .into_iter()
        .flatten()
        .map(PathBuf::as_path)
        .collect();
    if let Some(s) = &args.scenario {
        inputs.push(Path::new(s));
    }
    let mut outputs = vec![args.out.as_path()];
    outputs.extend(args.json.as_deref());
    ensure_distinct(&outputs, &inputs)?;

    let (spec, block, theta) = match (&args.scenario, &args.config, &args.params, &args.profile) {
        (Some(name), ..) => {
            let (scenario, _) = load_scenario(name)?;
            let block = scenario.profile_block()?;
            let theta = scenario.true_params.pack(&scenario.spec)?;
            (scenario.spec, block, theta)
        }
        (None, Some(config), Some(params), Some(profile)) => {
            let spec = load_config(config)?.model_spec();
            let params = fitted_params(&read_report(params)?, &spec)?;
            let block = profile_block(&spec, &read_profile(profile)?)?;
            let theta = params.pack(&spec)?;
            (spec, block, theta)
        }
        _ => {
            return Err(Error::Config(
                "curves needs --scenario, or --config with --params and --profile".into(),
            ))
        }
    };
    let w_index = match &args.w_name {
        Some(name) => spec
            .w_names
            .iter()
            .position(|w| w == name)
            .ok_or_else(|| Error::Config(format!("'{name}' is not a heterogeneity covariate")))?,
        None if spec.w_names.is_empty() => return Err(Error::Config("model has no heterogeneity covariates".into())),
        None => 0,
    };
    let target = match args.sweep {
        Sweep::Coefficient => SweepTarget::Coefficient,
        Sweep::Covariate => SweepTarget::Covariate,
    };
    let curves = probability_curves(&block, &theta, w_index, &parse_grid(&args.grid)?, target)?;
    let csv = curves_to_csv(&curves)?;
    let json = args.json.as_ref().map(|_| curves_to_json(&curves)).transpose()?;
    write_atomic(&args.out, csv.as_bytes())?;
    if let (Some(path), Some(text)) = (&args.json, json) {
        write_atomic(path, text.as_bytes())?;
    }
    Ok(())
}
