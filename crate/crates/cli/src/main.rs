//! Batch front door: wires the pipeline stages into reproducible runs.
//!
//! One JSON config governs every subcommand; flags override single keys.
//! Exit codes: 0 ok, 2 input error, 3 numerical error, 4 non-convergence.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ricover_core::assess::assess_fit;
use ricover_core::cohort::build_cells;
use ricover_core::config::RunConfig;
use ricover_core::design::direct_estimates;
use ricover_core::error::{Error, Result};
use ricover_core::graph::AdjacencyGraph;
use ricover_core::inference::{
    explore_hyper, fixed_effects, ri_coverage, sample_posterior, FitWorkspace,
};
use ricover_core::io::{self, FitFile, IdIndex};
use ricover_core::manifest::RunManifest;
use ricover_core::model::{ModelStructures, Variant};
use ricover_core::sim::{simulate_survey, simulate_truth};

#[derive(Parser)]
#[command(name = "ricover", version, about = "Sub-national routine-immunization coverage estimation")]
struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the worker-thread count (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build eligible analysis cells from a survey roster and SIA calendar.
    Process(ProcessArgs),
    /// Design-based direct estimates per eligible cell.
    Direct(DirectArgs),
    /// Fit the space-time smoothing model to direct estimates.
    Fit(FitArgs),
    /// Posterior routine-coverage estimates from a fitted model.
    Predict(PredictArgs),
    /// Assessment metrics for one or more fitted models.
    Assess(AssessArgs),
    /// Generate synthetic survey data with known truth.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct ProcessArgs {
    #[arg(long)]
    children: PathBuf,
    #[arg(long)]
    sia: PathBuf,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct DirectArgs {
    #[arg(long)]
    cells: PathBuf,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    direct: PathBuf,
    #[arg(long)]
    adjacency: PathBuf,
    /// Interaction variant override (e.g. ICAR-AR1).
    #[arg(long)]
    variant: Option<String>,
    /// Hyperparameter grid points per dimension override.
    #[arg(long)]
    grid_points: Option<usize>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Fit file name inside out-dir.
    #[arg(long, default_value = "fit.json")]
    out: String,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    fit: PathBuf,
    #[arg(long)]
    direct: PathBuf,
    #[arg(long)]
    adjacency: PathBuf,
    /// Posterior sample count override.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct AssessArgs {
    /// Fitted models to score (repeatable).
    #[arg(long = "fit", required = true)]
    fits: Vec<PathBuf>,
    #[arg(long)]
    direct: PathBuf,
    #[arg(long)]
    adjacency: PathBuf,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::from_json(&std::fs::read_to_string(path)?)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(threads) = cli.threads {
        config.threads = threads;
    }
    Ok(config)
}

fn init_threads(config: &RunConfig) {
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build_global();
}

fn manifest_for(config: &RunConfig, inputs: &[(&str, &Path)]) -> Result<(RunManifest, String)> {
    let manifest = RunManifest::new(&config.to_json(), inputs, config.seed)?;
    let hash = manifest.hash();
    Ok((manifest, hash))
}

fn run_process(config: &RunConfig, args: &ProcessArgs) -> Result<()> {
    let (manifest, hash) = manifest_for(
        config,
        &[("children.csv", &args.children), ("sia_calendar.csv", &args.sia)],
    )?;
    let (children, mut rejections) = io::read_children(&args.children)?;
    let calendar = io::read_sia_calendar(&args.sia)?;
    let grid = config.cohort.grid()?;
    let (cells, cell_rejections) = build_cells(&children, &calendar, &grid, config.ri_age_months)?;
    rejections.extend(cell_rejections);

    std::fs::create_dir_all(&args.out_dir)?;
    io::write_cells(&args.out_dir.join("cells.csv"), &hash, &cells)?;
    io::write_rejections(&args.out_dir.join("rejections.csv"), &hash, &rejections)?;
    manifest.write_json(&args.out_dir.join("manifest.json"))?;
    let kept: usize = cells.iter().map(|c| c.children.len()).sum();
    log::info!(
        "process: {} children kept in {} cells, {} rejected",
        kept,
        cells.len(),
        rejections.len()
    );
    println!("cells: {}, children kept: {kept}, rejected: {}", cells.len(), rejections.len());
    Ok(())
}

fn run_direct(config: &RunConfig, args: &DirectArgs) -> Result<()> {
    let (manifest, hash) = manifest_for(config, &[("cells.csv", &args.cells)])?;
    let cells = io::read_cells(&args.cells)?;
    let (estimates, excluded) = direct_estimates(
        &cells,
        config.estimation.lone_psu,
        config.estimation.degenerate_cells,
    )?;
    std::fs::create_dir_all(&args.out_dir)?;
    io::write_direct_estimates(&args.out_dir.join("direct_estimates.csv"), &hash, &estimates)?;
    io::write_excluded_cells(&args.out_dir.join("excluded_cells.csv"), &hash, &excluded)?;
    manifest.write_json(&args.out_dir.join("manifest.json"))?;
    println!("direct estimates: {}, excluded cells: {}", estimates.len(), excluded.len());
    Ok(())
}

struct LoadedModel {
    graph: AdjacencyGraph,
    areas: IdIndex,
    surveys: IdIndex,
    estimates: Vec<ricover_core::design::CellEstimate>,
}

fn load_model_inputs(direct: &Path, adjacency: &Path) -> Result<LoadedModel> {
    let (graph, areas) = io::read_adjacency(adjacency)?;
    let estimates = io::read_direct_estimates(direct)?;
    let surveys = IdIndex::from_iter(estimates.iter().map(|e| e.survey_id.clone()));
    Ok(LoadedModel { graph, areas, surveys, estimates })
}

fn run_fit(config: &RunConfig, args: &FitArgs) -> Result<()> {
    let (manifest, hash) = manifest_for(
        config,
        &[("direct_estimates.csv", &args.direct), ("adjacency.csv", &args.adjacency)],
    )?;
    let loaded = load_model_inputs(&args.direct, &args.adjacency)?;
    let mut spec = config.model_spec(loaded.areas.len(), loaded.surveys.len())?;
    if let Some(v) = &args.variant {
        spec.variant = Variant::parse(v)?;
    }
    let mut inf_cfg = config.inference.clone();
    if let Some(g) = args.grid_points {
        inf_cfg.grid_points_per_dim = g;
    }
    let obs = io::resolve_cells(&loaded.estimates, &loaded.areas, &loaded.surveys, spec.num_cohorts)?;
    let structures = ModelStructures::new(&spec, &loaded.graph)?;
    let ws = FitWorkspace::new(&structures, obs)?;
    let explore = explore_hyper(&ws, &inf_cfg)?;

    let fit = FitFile {
        manifest_hash: hash.clone(),
        variant: spec.variant,
        num_areas: spec.num_areas,
        num_cohorts: spec.num_cohorts,
        num_surveys: spec.num_surveys,
        area_ids: loaded.areas.clone(),
        survey_ids: loaded.surveys.clone(),
        grid: explore.grid.clone(),
        mode: explore.mode,
        mode_log_posterior: explore.mode_log_posterior,
        mode_grad_norm: explore.mode_grad_norm,
        evaluations: explore.evaluations,
        envelope_size: ws.envelope_size(),
        ordering: "cohort-major interaction slices, RCM areas, trailing global blocks".into(),
    };
    std::fs::create_dir_all(&args.out_dir)?;
    io::write_fit(&args.out_dir.join(&args.out), &fit)?;
    io::write_hyper_posterior(
        &args.out_dir.join("hyper_posterior.csv"),
        &hash,
        spec.variant,
        &explore.grid,
    )?;
    manifest.write_json(&args.out_dir.join("manifest.json"))?;
    println!(
        "fit {}: {} grid points, mode log-posterior {:.4}, |grad| {:.2e}",
        spec.variant.as_str(),
        explore.grid.len(),
        explore.mode_log_posterior,
        explore.mode_grad_norm
    );
    Ok(())
}

fn rebuild_workspace<'a>(
    fit: &FitFile,
    config: &RunConfig,
    loaded: &LoadedModel,
    structures_slot: &'a mut Option<ModelStructures>,
) -> Result<FitWorkspace<'a>> {
    if loaded.areas != fit.area_ids || loaded.surveys != fit.survey_ids {
        return Err(Error::InvalidInput(
            "area or survey ids do not match the fitted model".into(),
        ));
    }
    let mut spec = config.model_spec(fit.num_areas, fit.num_surveys)?;
    spec.variant = fit.variant;
    spec.num_cohorts = fit.num_cohorts;
    let obs = io::resolve_cells(&loaded.estimates, &loaded.areas, &loaded.surveys, fit.num_cohorts)?;
    *structures_slot = Some(ModelStructures::new(&spec, &loaded.graph)?);
    FitWorkspace::new(structures_slot.as_ref().expect("just set"), obs)
}

fn run_predict(config: &RunConfig, args: &PredictArgs) -> Result<()> {
    let (manifest, hash) = manifest_for(
        config,
        &[
            ("fit.json", &args.fit),
            ("direct_estimates.csv", &args.direct),
            ("adjacency.csv", &args.adjacency),
        ],
    )?;
    let fit = io::read_fit(&args.fit)?;
    let loaded = load_model_inputs(&args.direct, &args.adjacency)?;
    let mut slot = None;
    let ws = rebuild_workspace(&fit, config, &loaded, &mut slot)?;
    let samples = args.samples.unwrap_or(config.inference.samples);
    let draws = sample_posterior(&ws, &fit.grid, samples, config.seed)?;
    let layout = ws.structures.layout;
    let coverage = ri_coverage(&draws, &layout);
    let effects = fixed_effects(&draws, &layout);
    std::fs::create_dir_all(&args.out_dir)?;
    io::write_ri_coverage(&args.out_dir.join("ri_coverage.csv"), &hash, &coverage, &loaded.areas)?;
    io::write_fixed_effects(&args.out_dir.join("fixed_effects.csv"), &hash, &effects)?;
    manifest.write_json(&args.out_dir.join("manifest.json"))?;
    println!("predicted {} area-cohort cells from {} samples", coverage.len(), samples);
    Ok(())
}

fn run_assess(config: &RunConfig, args: &AssessArgs) -> Result<()> {
    let mut inputs: Vec<(&str, &Path)> = vec![
        ("direct_estimates.csv", args.direct.as_path()),
        ("adjacency.csv", args.adjacency.as_path()),
    ];
    for fit in &args.fits {
        inputs.push(("fit.json", fit.as_path()));
    }
    let (manifest, hash) = manifest_for(config, &inputs)?;
    let loaded = load_model_inputs(&args.direct, &args.adjacency)?;
    let mut rows = Vec::new();
    for fit_path in &args.fits {
        let fit = io::read_fit(fit_path)?;
        let mut slot = None;
        let ws = rebuild_workspace(&fit, config, &loaded, &mut slot)?;
        let report = assess_fit(&ws, &fit.grid)?;
        println!(
            "{}: dic {:.2}, waic {:.2}, lcpo {:.4}",
            fit.variant.as_str(),
            report.dic,
            report.waic,
            report.lcpo
        );
        rows.push((fit.variant, report));
    }
    std::fs::create_dir_all(&args.out_dir)?;
    io::write_assessment(&args.out_dir.join("assessment.csv"), &hash, &rows)?;
    manifest.write_json(&args.out_dir.join("manifest.json"))?;
    Ok(())
}

fn run_simulate(config: &RunConfig, args: &SimulateArgs) -> Result<()> {
    let sim = config
        .simulate
        .clone()
        .ok_or_else(|| Error::Config("simulate requires a \"simulate\" config section".into()))?;
    let (manifest, hash) = manifest_for(config, &[])?;
    let truth = simulate_truth(&sim)?;
    let children = simulate_survey(&truth, &sim)?;
    let records: Vec<_> = children.iter().map(|c| c.record.clone()).collect();
    let areas = IdIndex::from_iter((0..sim.num_areas()).map(|i| sim.area_id(i)));
    std::fs::create_dir_all(&args.out_dir)?;
    io::write_children(&args.out_dir.join("children.csv"), &hash, &records)?;
    io::write_sia_calendar(&args.out_dir.join("sia_calendar.csv"), &hash, &sim.sia_events())?;
    io::write_adjacency(&args.out_dir.join("adjacency.csv"), &hash, &sim.graph(), &areas)?;
    io::write_truth(&args.out_dir.join("truth.csv"), &hash, &truth.p_ri, &areas)?;
    manifest.write_json(&args.out_dir.join("manifest.json"))?;
    println!(
        "simulated {} children across {} surveys and {} areas",
        records.len(),
        sim.survey_cmcs.len(),
        sim.num_areas()
    );
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    let config = load_config(cli)?;
    init_threads(&config);
    match &cli.command {
        Command::Process(args) => run_process(&config, args),
        Command::Direct(args) => run_direct(&config, args),
        Command::Fit(args) => run_fit(&config, args),
        Command::Predict(args) => run_predict(&config, args),
        Command::Assess(args) => run_assess(&config, args),
        Command::Simulate(args) => run_simulate(&config, args),
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
