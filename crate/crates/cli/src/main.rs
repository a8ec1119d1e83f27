use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::Value;

use capstep_core::analysis::{
    build_heatmap, energy_stats, fall_probability, AnalysisError, EnergyStats, FallProbabilityTable,
    PhaseSpaceHeatmap,
};
use capstep_core::balance::ControllerKind;
use capstep_core::calibration::{calibrate, Calibration, CalibrationError};
use capstep_core::config::{self, ConfigError, LabConfig};
use capstep_core::experiment::{run_experiment_with_grid, ExperimentLog, LogError};
use capstep_core::learning::{GridApproximator, GridFileError};
use capstep_core::report;

#[derive(Parser, Debug)]
#[command(name = "capstep", version, about = "Lateral capture-step balance lab")]
struct Cli {
    /// JSON config layered over the built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set plant.latency=0.03`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.FIELD=VALUE", global = true)]
    overrides: Vec<String>,
    /// Print the fully resolved config and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Walk open loop and write the calibrated gait parameters.
    Calibrate {
        #[arg(long, default_value = "gait_params.json")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run push experiments and write their logs.
    Run {
        /// Calibrated gait parameters.
        #[arg(long, default_value = "gait_params.json")]
        gait: PathBuf,
        /// none, timing, timing+step or timing+step+learning.
        #[arg(long, conflicts_with = "controllers", required_unless_present = "controllers")]
        controller: Option<ControllerKind>,
        /// Run every controller on the same pushes.
        #[arg(long, value_enum)]
        controllers: Option<Fleet>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Parallel runs; defaults to the number of CPUs.
        #[arg(long)]
        jobs: Option<usize>,
        /// Start the learner from a saved grid instead of zeros.
        #[arg(long)]
        grid: Option<PathBuf>,
    },
    /// Turn run logs into CSV tables and SVG figures.
    Analyze {
        /// `.json` sidecars (or their `.csv` traces) written by `run`.
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(long, value_enum)]
        artifact: Artifact,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Fleet {
    All,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Artifact {
    Fallprob,
    Heatmap,
    Energy,
}

/// Exit status classes.
enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn runtime(e: impl Into<anyhow::Error>) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Validation(e.into())
    }
}

impl From<LogError> for Failure {
    fn from(e: LogError) -> Self {
        match e {
            LogError::Io { .. } => Failure::Runtime(e.into()),
            _ => Failure::Validation(e.into()),
        }
    }
}

impl From<CalibrationError> for Failure {
    fn from(e: CalibrationError) -> Self {
        match e {
            CalibrationError::Param(_) => Failure::Validation(e.into()),
            _ => Failure::Runtime(e.into()),
        }
    }
}

impl From<AnalysisError> for Failure {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Param(_) | AnalysisError::MixedControllers(..) => Failure::Validation(e.into()),
            AnalysisError::NoPushes => Failure::Runtime(e.into()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<LabConfig, Failure> {
    let mut layers: Vec<(Value, String)> = Vec::new();
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(Failure::Runtime)?;
        let label = path.display().to_string();
        layers.push((config::parse_json(&text, &label)?, label));
    }
    let mut flags = Value::Object(Default::default());
    for spec in &cli.overrides {
        config::merge(&mut flags, config::parse_override(spec)?);
    }
    match &cli.command {
        Some(Command::Calibrate { seed: Some(s), .. }) => {
            config::merge(&mut flags, serde_json::json!({"calibration": {"seed": s}}));
        }
        Some(Command::Run { seed: Some(s), .. }) => {
            config::merge(&mut flags, serde_json::json!({"experiment": {"seed": s}}));
        }
        _ => {}
    }
    layers.push((flags, "command line".to_owned()));
    Ok(LabConfig::layered(layers.iter().map(|(v, l)| (v.clone(), l.as_str())))?)
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let cfg = resolve_config(&cli)?;
    if cli.print_config {
        print!("{}", cfg.to_json_pretty());
        return Ok(());
    }
    match cli.command {
        None => Err(Failure::Validation(anyhow!(
            "no command given (try `capstep --help`)"
        ))),
        Some(Command::Calibrate { out, .. }) => cmd_calibrate(&cfg, &out),
        Some(Command::Run {
            gait,
            controller,
            controllers,
            out,
            jobs,
            grid,
            ..
        }) => {
            let kinds = match (controller, controllers) {
                (Some(k), _) => vec![k],
                (None, _) => ControllerKind::ALL.to_vec(),
            };
            cmd_run(&cfg, &gait, &kinds, &out, jobs, grid.as_deref())
        }
        Some(Command::Analyze { logs, artifact, out }) => cmd_analyze(&cfg, &logs, artifact, &out),
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(Failure::Runtime)?;
    }
    fs::write(path, bytes)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::Runtime)
}

fn cmd_calibrate(cfg: &LabConfig, out: &Path) -> Result<(), Failure> {
    let cal = calibrate(&cfg.plant, &cfg.nominals, cfg.model_c, &cfg.calibration)?;
    let mut json = serde_json::to_string_pretty(&cal).map_err(Failure::runtime)?;
    json.push('\n');
    write_file(out, json)?;
    println!(
        "alpha = {:.6} m, delta = {:.6} m, period = {:.4} s, width = {:.4} m -> {}",
        cal.gait.alpha,
        cal.gait.delta,
        cal.measured_period,
        cal.measured_width,
        out.display()
    );
    Ok(())
}

fn read_gait(path: &Path) -> Result<Calibration, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading gait parameters {} (run `capstep calibrate` first)", path.display()))
        .map_err(Failure::Runtime)?;
    let label = path.display().to_string();
    let cal: Calibration = config::decode(config::parse_json(&text, &label)?, &label)?;
    cal.gait
        .validate()
        .map_err(|e| Failure::Validation(anyhow!("{label}: {}", e.within("gait"))))?;
    Ok(cal)
}

/// File stem of a run, e.g. `timing-step-s1`.
fn run_stem(kind: ControllerKind, seed: u64) -> String {
    format!("{}-s{seed}", kind.as_str().replace('+', "-"))
}

fn cmd_run(
    cfg: &LabConfig,
    gait: &Path,
    kinds: &[ControllerKind],
    out: &Path,
    jobs: Option<usize>,
    grid: Option<&Path>,
) -> Result<(), Failure> {
    let cal = read_gait(gait)?;
    let initial = match grid {
        Some(p) => Some(GridApproximator::load(p).map_err(|e| match e {
            GridFileError::Io { .. } => Failure::runtime(e),
            _ => Failure::Validation(e.into()),
        })?),
        None => None,
    };
    let configs: Vec<_> = kinds.iter().map(|&k| cfg.experiment(k, cal)).collect();
    for c in &configs {
        c.validate().map_err(|e| Failure::Validation(e.into()))?;
    }
    fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(Failure::Runtime)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(Failure::runtime)?;
    let results: Vec<Result<String, Failure>> = pool.install(|| {
        configs
            .par_iter()
            .map(|c| {
                let log = run_experiment_with_grid(c, initial.clone()).map_err(|e| Failure::Validation(e.into()))?;
                let stem = run_stem(c.controller, c.seed);
                let (csv, json) = log.write(out, &stem)?;
                if let Some(g) = &log.grid {
                    let path = out.join(format!("{stem}.grid.csv"));
                    g.save(&path).map_err(Failure::runtime)?;
                }
                Ok(format!(
                    "{:<22} falls {:>3}/{}  -> {}, {}",
                    c.controller.as_str(),
                    log.fall_count(),
                    log.pushes.len(),
                    csv.display(),
                    json.display()
                ))
            })
            .collect()
    });
    for r in results {
        println!("{}", r?);
    }
    Ok(())
}

fn read_logs(paths: &[PathBuf]) -> Result<Vec<ExperimentLog>, Failure> {
    paths
        .par_iter()
        .map(|p| {
            let json = if p.extension().is_some_and(|e| e == "csv") {
                p.with_extension("json")
            } else {
                p.clone()
            };
            Ok(ExperimentLog::read(&json)?)
        })
        .collect()
}

fn cmd_analyze(cfg: &LabConfig, paths: &[PathBuf], artifact: Artifact, out: &Path) -> Result<(), Failure> {
    let mut logs = read_logs(paths)?;
    logs.sort_by_key(|l| l.controller());
    let settings = &cfg.analysis;
    match artifact {
        Artifact::Fallprob => {
            let tables = logs
                .par_iter()
                .map(|l| fall_probability(l, settings.bin_width))
                .collect::<Result<Vec<FallProbabilityTable>, _>>()?;
            write_file(&out.join("fallprob.csv"), report::fallprob_csv(&tables).map_err(Failure::runtime)?)?;
            write_file(&out.join("fallprob.svg"), report::fallprob_svg(&tables))?;
            for t in &tables {
                let falls: usize = t.bins.iter().map(|b| b.falls).sum();
                println!("{:<22} falls {falls:>3}/{}", t.controller.as_str(), t.trials());
            }
        }
        Artifact::Heatmap => {
            let mut kinds: Vec<ControllerKind> = logs.iter().map(|l| l.controller()).collect();
            kinds.sort();
            kinds.dedup();
            let maps = kinds
                .par_iter()
                .map(|&k| {
                    let group: Vec<&ExperimentLog> = logs.iter().filter(|l| l.controller() == k).collect();
                    build_heatmap(&group, &settings.heatmap)
                })
                .collect::<Result<Vec<PhaseSpaceHeatmap>, _>>()?;
            write_file(&out.join("heatmap.csv"), report::heatmap_csv(&maps).map_err(Failure::runtime)?)?;
            write_file(&out.join("heatmap.svg"), report::heatmap_svg(&maps))?;
            for m in &maps {
                let frac = m.unstable_fraction().map_or_else(|| "n/a".to_owned(), |f| format!("{:.1}%", 100.0 * f));
                println!(
                    "{:<22} falls {:>3}  heat in E>0 cells {frac}  falls through E>0 {}/{}",
                    m.controller.as_str(),
                    m.falls,
                    m.falls_with_positive_energy,
                    m.falls
                );
            }
        }
        Artifact::Energy => {
            let stats = logs
                .par_iter()
                .map(|l| energy_stats(l, settings))
                .collect::<Result<Vec<EnergyStats>, _>>()?;
            write_file(
                &out.join("energy_series.csv"),
                report::energy_series_csv(&stats).map_err(Failure::runtime)?,
            )?;
            write_file(
                &out.join("energy_steps.csv"),
                report::energy_steps_csv(&stats).map_err(Failure::runtime)?,
            )?;
            write_file(&out.join("efficiency.csv"), report::efficiency_csv(&stats).map_err(Failure::runtime)?)?;
            write_file(&out.join("energy.svg"), report::energy_svg(&stats))?;
            let pct = |p: Option<f64>| p.map_or_else(|| "n/a".to_owned(), |p| format!("{p:.1}%"));
            for s in &stats {
                println!(
                    "{:<22} efficiency {:>7}  late {:>7}",
                    s.controller.as_str(),
                    pct(s.efficiency.percent),
                    pct(s.efficiency_late.percent)
                );
            }
        }
    }
    Ok(())
}
