use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use dtse::config::RunConfig;
use dtse::experiment::{
    bottleneck_cells, detection, ego_metrics, monte_carlo, onset, run_scenario, stream_rng,
    GroundTruth, Record, ScenarioContext, ScenarioRun, ESTIMATE_STREAM,
};
use dtse::export;
use dtse::{DtseError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Command {
    /// Microsimulation only: trajectories and aggregated fields.
    Simulate,
    /// One filter run with the microsimulation's CV flags.
    Estimate,
    /// Penetration-rate study.
    Montecarlo,
    /// Communication graph of the estimate run, nothing else.
    ExportSnapshots,
}

#[derive(Debug, Parser)]
#[command(version, about = "Distributed traffic state estimation over V2X sensor networks")]
struct Cli {
    #[arg(long, value_enum)]
    command: Command,
    /// TOML run configuration; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Penetration rates in percent, comma separated.
    #[arg(long, value_delimiter = ',')]
    rates: Option<Vec<f64>>,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = cli.trials {
        cfg.trials = trials;
    }
    if let Some(rates) = &cli.rates {
        cfg.penetration_rates = rates.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn estimate_run(cfg: &RunConfig, gt: &GroundTruth) -> Result<ScenarioRun> {
    let ctx = ScenarioContext::new(cfg)?;
    let ego = gt.ego()?;
    let mut rng = stream_rng(cfg.seed, ESTIMATE_STREAM);
    run_scenario(&ctx, gt, &gt.flagged_cvs(), ego, &mut rng, Record::All)
}

fn simulate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let gt = GroundTruth::generate(cfg)?;
    export::write_trajectories(&out.join(export::TRAJECTORIES), &gt.trajectories)?;
    export::write_fields(&out.join(export::FIELDS), &gt.fields)?;
    export::write_truth_heatmap(&out.join(export::TRUTH_HEATMAP), &gt)?;
    let last = gt.trajectories.snapshots.last();
    println!(
        "vehicles entered {}, exited {}, in window pool {}",
        last.map_or(0, |s| s.entered),
        last.map_or(0, |s| s.exited),
        gt.vehicle_pool().len()
    );
    match onset(&gt, bottleneck_cells(cfg)) {
        Some(k) => println!("congestion onset at k = {k}"),
        None => println!("no congestion in the bottleneck region"),
    }
    Ok(())
}

fn estimate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let gt = GroundTruth::generate(cfg)?;
    let run = estimate_run(cfg, &gt)?;
    export::write_fields(&out.join(export::FIELDS), &gt.fields)?;
    export::write_measurements(&out.join(export::MEASUREMENTS), &run)?;
    let files = export::write_estimates(out, &run)?;
    export::write_graph(&out.join(export::GRAPH_NODES), &out.join(export::GRAPH_EDGES), &run)?;
    export::write_truth_heatmap(&out.join(export::TRUTH_HEATMAP), &gt)?;
    export::write_heatmap(
        &out.join(export::EGO_HEATMAP),
        run.ego_estimates().iter().map(|(&k, x)| (k, x)),
    )?;
    export::write_ego_trajectory(&out.join(export::EGO_TRAJECTORY), &gt, run.ego, cfg.dh_m)?;

    let [rmse_rho, rmse_psi, smape_rho, smape_psi] = ego_metrics(&run, &gt)?;
    println!(
        "ego cv{} with {} CVs, {} estimate files",
        run.ego,
        gt.flagged_cvs().len(),
        files.len()
    );
    println!("RMSE rho {rmse_rho:.3} veh/km, psi {rmse_psi:.1} veh/h");
    println!("SMAPE rho {smape_rho:.2} %, psi {smape_psi:.2} %");
    let cells = bottleneck_cells(cfg);
    if let (Some(on), Some(det)) = (onset(&gt, cells.clone()), detection(run.ego_estimates(), cells)) {
        println!("congestion onset k = {on}, ego detection k = {det}");
    }
    Ok(())
}

fn montecarlo(cfg: &RunConfig, out: &Path) -> Result<()> {
    let gt = GroundTruth::generate(cfg)?;
    let report = monte_carlo(cfg, &gt)?;
    export::write_study(&out.join(export::STUDY), &report)?;
    export::write_summary(&out.join(export::SUMMARY), &report)?;
    println!(
        "ego cv{}, pool {}, {} trials per rate",
        report.ego, report.pool_size, report.trials
    );
    println!("rate_%  n_cvs  median_smape_rho  iqr_smape_rho  median_smape_psi");
    for r in &report.rates {
        println!(
            "{:>6}  {:>5}  {:>16.2}  {:>13.2}  {:>16.2}",
            r.rate,
            r.n_cvs,
            r.summary.smape_rho.median,
            r.summary.smape_rho.iqr(),
            r.summary.smape_psi.median
        );
    }
    Ok(())
}

fn export_snapshots(cfg: &RunConfig, out: &Path) -> Result<()> {
    let gt = GroundTruth::generate(cfg)?;
    let run = estimate_run(cfg, &gt)?;
    export::write_graph(&out.join(export::GRAPH_NODES), &out.join(export::GRAPH_EDGES), &run)?;
    println!("{} graph snapshots", run.steps.len());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    std::fs::create_dir_all(&cli.out).map_err(|e| DtseError::io(&cli.out, e))?;
    match cli.command {
        Command::Simulate => simulate(&cfg, &cli.out),
        Command::Estimate => estimate(&cfg, &cli.out),
        Command::Montecarlo => montecarlo(&cfg, &cli.out),
        Command::ExportSnapshots => export_snapshots(&cfg, &cli.out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
