use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use replsim::config::ScenarioConfig;
use replsim::experiment::{self, StateDump};
use replsim::simkernel::{load_ticks_csv, MetricsReport};

/// Cluster-based replication simulator.
///
/// Settings are resolved as command-line flags, then the scenario file,
/// then built-in defaults.
#[derive(Parser)]
#[command(name = "replsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and emit its metrics.
    Run(RunArgs),
    /// Run both arms over a parameter sweep and emit a comparison table.
    Sweep(SweepArgs),
    /// Emit the system state after initial placement as JSON.
    DumpState(DumpArgs),
    /// Check a scenario file, a state dump, or both.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed in the scenario file.
    #[arg(long)]
    seed: Option<u64>,
    /// Enable load balancing (run only; sweeps always run both arms)
    #[arg(long, conflicts_with = "without_lb")]
    with_lb: bool,
    /// Disable load balancing (run only; sweeps always run both arms)
    #[arg(long)]
    without_lb: bool,
}

impl Common {
    fn load(&self) -> Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(p) => ScenarioConfig::from_path(p).with_context(|| format!("{}", p.display()))?,
            None => ScenarioConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if self.with_lb {
            cfg.lb_enabled = true;
        }
        if self.without_lb {
            cfg.lb_enabled = false;
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Output file. Relative paths land in $REPLSIM_OUT_DIR when set. Stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Also write the audit log (JSON lines) here.
    #[arg(long)]
    audit: Option<PathBuf>,
    /// Also write per-tick peer loads (CSV) here.
    #[arg(long)]
    load_ticks: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Parameter to vary, e.g. payload_bytes or workload.duration_s.
    #[arg(long)]
    param: Option<String>,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
    /// Comma-separated seeds shared by both arms.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    /// Output directory for the table, plot data and plot script.
    /// Falls back to $REPLSIM_OUT_DIR, then stdout (table only).
    #[arg(long, env = "REPLSIM_OUT_DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Args)]
struct DumpArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// State dump produced by dump-state.
    #[arg(long)]
    dump: Option<PathBuf>,
}

fn out_path(p: &Path) -> PathBuf {
    match std::env::var_os("REPLSIM_OUT_DIR") {
        Some(dir) if p.is_relative() => PathBuf::from(dir).join(p),
        _ => p.to_path_buf(),
    }
}

fn emit(out: Option<&Path>, body: &str) -> Result<()> {
    match out {
        Some(p) => {
            let p = out_path(p);
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(&p, body).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            std::io::stdout().write_all(body.as_bytes())?;
            Ok(())
        }
    }
}

const METRICS_CSV_HEADER: &str = "mean_delay_ms,aggregate_throughput_bps,packets_lost,\
requests_total,requests_completed,bytes_delivered,window_s,replication_bytes_moved,\
moves_applied,replicas_deleted,placement_failures";

fn metrics_csv(m: &MetricsReport) -> String {
    format!(
        "{METRICS_CSV_HEADER}\n{},{},{},{},{},{},{},{},{},{},{}\n",
        m.mean_delay_ms,
        m.aggregate_throughput_bps,
        m.packets_lost,
        m.requests_total,
        m.requests_completed,
        m.bytes_delivered,
        m.window_s,
        m.replication_bytes_moved,
        m.moves_applied,
        m.replicas_deleted,
        m.placement_failures
    )
}

fn run(a: RunArgs) -> Result<()> {
    let mut cfg = a.common.load()?;
    if a.load_ticks.is_some() {
        cfg.record_load_ticks = true;
    }
    let result = experiment::run(&cfg)?;
    let body = match a.format {
        Format::Json => serde_json::to_string_pretty(&result.metrics)? + "\n",
        Format::Csv => metrics_csv(&result.metrics),
    };
    emit(a.out.as_deref(), &body)?;
    if let Some(p) = &a.audit {
        let mut log = result.audit.join("\n");
        if !log.is_empty() {
            log.push('\n');
        }
        emit(Some(p), &log)?;
    }
    if let Some(p) = &a.load_ticks {
        emit(Some(p), &load_ticks_csv(&result.load_ticks))?;
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let cfg = a.common.load()?;
    let spec = cfg.sweep.clone();
    let param = a
        .param
        .or_else(|| spec.as_ref().map(|s| s.param.clone()))
        .context("no sweep parameter: pass --param or add a [sweep] table")?;
    let values = a
        .values
        .or_else(|| spec.as_ref().map(|s| s.values.clone()))
        .context("no sweep values: pass --values or add a [sweep] table")?;
    let seeds = a
        .seeds
        .or_else(|| spec.as_ref().map(|s| s.seeds.clone()))
        .unwrap_or_else(|| (1..=5).collect());
    if values.is_empty() {
        bail!("sweep needs at least one value");
    }

    let render = |t: &experiment::ComparisonTable| -> Result<String> {
        Ok(match a.format {
            Format::Csv => t.to_csv(),
            Format::Json => serde_json::to_string_pretty(t)? + "\n",
        })
    };
    let file = match a.format {
        Format::Csv => "sweep.csv",
        Format::Json => "sweep.json",
    };
    match experiment::sweep(&cfg, &param, &values, &seeds, a.parallel) {
        Ok(table) => {
            let body = render(&table)?;
            match &a.out {
                Some(dir) => {
                    fs::create_dir_all(dir)?;
                    fs::write(dir.join(file), body)?;
                    table.write_plots(dir)?;
                }
                None => std::io::stdout().write_all(body.as_bytes())?,
            }
            Ok(())
        }
        Err(e) => {
            if let (Some(partial), Some(dir)) = (&e.partial, &a.out) {
                let body = format!("# invalid: {}\n{}", e.error, render(partial)?);
                fs::create_dir_all(dir)?;
                fs::write(dir.join(file), body)?;
            }
            Err(e.error.into())
        }
    }
}

fn dump(a: DumpArgs) -> Result<()> {
    let cfg = a.common.load()?;
    let d = experiment::dump_state(&cfg, cfg.seed)?;
    emit(a.out.as_deref(), &(serde_json::to_string_pretty(&d)? + "\n"))
}

fn validate(a: ValidateArgs) -> Result<()> {
    if a.config.is_none() && a.dump.is_none() {
        bail!("nothing to validate: pass --config and/or --dump");
    }
    if let Some(p) = &a.config {
        ScenarioConfig::from_path(p).with_context(|| format!("{}", p.display()))?;
        println!("{}: ok", p.display());
    }
    if let Some(p) = &a.dump {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let d: StateDump =
            serde_json::from_str(&text).with_context(|| format!("{}", p.display()))?;
        let problems = experiment::validate_dump(&d);
        if !problems.is_empty() {
            for v in &problems {
                eprintln!("{v}");
            }
            bail!("{}: {} violation(s)", p.display(), problems.len());
        }
        println!("{}: ok", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::DumpState(a) => dump(a),
        Command::Validate(a) => validate(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
