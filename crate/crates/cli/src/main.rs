// SPDX-License-Identifier: Apache-2.0

mod overrides;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};

/// `println!` that reports write errors instead of panicking, so a closed
/// pipe ends the process quietly.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        writeln!(std::io::stdout(), $($arg)*)?
    }};
}
use clap::{Parser, Subcommand};
use fedlmd::config::{split_override, RunConfig};
use fedlmd::engine::ClientState;
use fedlmd::experiment::{prepare, run_comparison, run_experiment, ComparisonPlan, GridAxis, Method};
use fedlmd::gradcheck::{run_suite, GradCheckConfig};

#[derive(Parser)]
#[command(
    name = "fedlmd",
    version,
    about = "Federated learning with label-masking distillation"
)]
#[command(after_help = "Any `--section.key value` or `--section.key=value` argument overrides the config file.")]
struct Cli {
    /// Only print warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Config file in `section.key = value` form.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Threads per round for client training.
    #[arg(long)]
    workers: Option<usize>,
    /// Output root directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run several methods on a shared partition and compute speedups.
    Compare {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// `NAME` or `NAME:key=value,key=value`; repeatable.
        #[arg(long = "method", required = true)]
        methods: Vec<String>,
        /// Method whose best accuracy sets the speedup target.
        #[arg(long)]
        baseline: String,
        /// `[METHOD:]key=v1,v2,...`; repeatable, crossed per method.
        #[arg(long)]
        grid: Vec<String>,
    },
    /// Print per-client label counts and majority sets.
    PartitionInspect {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Also write the partition JSON here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = GradCheckConfig::default().seed)]
        seed: u64,
    },
}

fn load_config(args: &ConfigArgs, extra: &[(String, String)]) -> Result<RunConfig> {
    let mut ov: Vec<(String, String)> = Vec::new();
    for s in &args.set {
        ov.push(split_override(s)?);
    }
    ov.extend(extra.iter().cloned());
    if let Some(w) = args.workers {
        ov.push(("run.workers".into(), w.to_string()));
    }
    if let Some(o) = &args.out {
        ov.push(("run.output".into(), o.display().to_string()));
    }
    let cfg = match &args.config {
        Some(path) => RunConfig::load(path, &ov),
        None => RunConfig::parse("", &ov),
    };
    cfg.context("invalid configuration")
}

fn parse_method(s: &str) -> Result<Method> {
    let (name, rest) = s.split_once(':').unwrap_or((s, ""));
    if name.is_empty() {
        bail!("method {s:?} has no name");
    }
    let overrides = rest
        .split(',')
        .filter(|p| !p.is_empty())
        .map(split_override)
        .collect::<fedlmd::Result<_>>()?;
    Ok(Method {
        name: name.to_string(),
        overrides,
    })
}

fn parse_grid(s: &str) -> Result<GridAxis> {
    let (key_part, values) = s
        .split_once('=')
        .with_context(|| format!("grid {s:?} is not key=v1,v2"))?;
    let (method, key) = match key_part.split_once(':') {
        Some((m, k)) => (Some(m.to_string()), k),
        None => (None, key_part),
    };
    let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
    if values.iter().any(String::is_empty) {
        bail!("grid {s:?} has an empty value");
    }
    Ok(GridAxis {
        method,
        key: key.trim().to_string(),
        values,
    })
}

fn inspect(cfg: &RunConfig, json: Option<&Path>) -> Result<()> {
    let prepared = prepare(cfg)?;
    let classes = prepared.train.classes();
    let mut header = format!("{:>6} {:>6}", "client", "n");
    for c in 1..=classes {
        header += &format!(" {c:>5}");
    }
    out!("{header}  majority (mask: {})", cfg.engine.mask_mode);
    for p in &prepared.partitions {
        let state = ClientState::new(p.clone(), cfg.engine.mask_mode);
        let mut line = format!("{:>6} {:>6}", p.client, p.len());
        for n in p.label_counts() {
            line += &format!(" {n:>5}");
        }
        let mask: Vec<String> = state.mask.iter().map(|l| l.to_string()).collect();
        line += &format!("  {{{}}}", mask.join(","));
        if !p.is_empty() && state.is_degenerate() {
            line += "  degenerate";
        }
        out!("{line}");
    }
    if let Some(path) = json {
        fedlmd::data::write_partitions(path, &prepared.partitions)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let (argv, extra) = match overrides::extract(argv) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(argv);
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match dispatch(cli.command, &extra) {
        Ok(code) => code,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain()
        .filter_map(|c| c.downcast_ref::<std::io::Error>())
        .any(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
}

fn dispatch(command: Command, extra: &[(String, String)]) -> Result<ExitCode> {
    match command {
        Command::Run { cfg } => {
            let cfg = load_config(&cfg, extra)?;
            let out = run_experiment(&cfg)?;
            let s = &out.summary;
            match s.best_accuracy {
                Some(acc) => out!(
                    "best accuracy {acc:.4} at round {} ({} rounds, {:.1}s)",
                    s.best_round.unwrap_or(0),
                    s.rounds,
                    s.total_wall_seconds
                ),
                None => out!("no rounds run"),
            }
            out!("{}", out.dir.display());
        }
        Command::Compare {
            cfg,
            methods,
            baseline,
            grid,
        } => {
            let base = load_config(&cfg, extra)?;
            let out_dir = base.output.clone();
            let plan = ComparisonPlan {
                base,
                methods: methods.iter().map(|m| parse_method(m)).collect::<Result<_>>()?,
                grid: grid.iter().map(|g| parse_grid(g)).collect::<Result<_>>()?,
                baseline,
            };
            let out = run_comparison(&plan, &out_dir)?;
            out!("{:<40} {:>8} {:>8}  best", "run", "acc", "speedup");
            for (e, row) in out.entries.iter().zip(&out.speedup) {
                let sp = row.report.ratio().map_or("Failed".to_string(), |r| format!("{r:.2}"));
                let mark = if e.best_of_method { "*" } else { "" };
                out!(
                    "{:<40} {:>8.4} {:>8}  {mark}",
                    e.label,
                    e.summary.best_accuracy.unwrap_or(f64::NAN),
                    sp
                );
            }
            out!("{}", out_dir.join("speedup.csv").display());
        }
        Command::PartitionInspect { cfg, json } => {
            let cfg = load_config(&cfg, extra)?;
            inspect(&cfg, json.as_deref())?;
        }
        Command::Gradcheck { instances, seed } => {
            let cfg = GradCheckConfig {
                instances,
                seed,
                ..Default::default()
            };
            let start = std::time::Instant::now();
            let reports = run_suite(&cfg)?;
            let mut ok = true;
            for r in &reports {
                ok &= r.passed();
                out!(
                    "{} {:<16} instances {:>4} entries {:>6} max rel err {:.2e} rejected {}",
                    if r.passed() { "PASS" } else { "FAIL" },
                    r.name,
                    r.instances,
                    r.entries,
                    r.max_rel_err,
                    r.rejected
                );
            }
            out!("{:.1}s", start.elapsed().as_secs_f64());
            if !ok {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
