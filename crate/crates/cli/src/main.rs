use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use memdisc::numcore::GradcheckOptions;
use memdisc::Exec;
use memdisc_cli::config::{parse_int_list, SweepAxis, KEYS};
use memdisc_cli::{analyze, gradcheck, run, sweep, CliError, ExperimentConfig, WORKERS_ENV};

#[derive(Parser)]
#[command(name = "memdisc", version, about = "Accumulative poisoning and memorization-discrepancy experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides output.dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides run.seeds, e.g. 0..5 or 0..=4.
    #[arg(long)]
    seeds: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Burn-in and victim phases for every seed; writes metrics.csv.
    Run(Common),
    /// One run per value of a config axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Overrides sweep.axis.
        #[arg(long)]
        axis: Option<SweepAxis>,
    },
    /// Discrepancy exports from a completed run directory.
    Analyze(Common),
    /// Finite-difference checks of the numerical operators.
    Gradcheck {
        #[arg(long, default_value = "0..100")]
        seeds: String,
        /// Corrupts one analytic gradient entry; the check must then fail.
        #[arg(long)]
        inject_fault: bool,
    },
    /// Lists the recognized config keys.
    Keys,
}

fn load(c: &Common) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(s) = &c.seeds {
        cfg.seeds = parse_int_list("--seeds", s)?;
    }
    cfg.validate()?;
    let out = c.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    Ok((cfg, out))
}

fn configure_workers() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("{WORKERS_ENV} must be a positive integer, got `{raw}`")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("{WORKERS_ENV}: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn execute(cmd: Command) -> Result<(), CliError> {
    configure_workers()?;
    let exec = Exec::Parallel;
    match cmd {
        Command::Run(c) => {
            let (cfg, out) = load(&c)?;
            let rows = run::cmd_run(&cfg, &out, exec)?;
            println!("{} rows -> {}", rows.len(), out.join(run::METRICS_FILE).display());
        }
        Command::Sweep { common, axis } => {
            let (cfg, out) = load(&common)?;
            let axis = axis
                .or(cfg.sweep_axis)
                .ok_or_else(|| CliError::Config("sweep.axis: no axis given".into()))?;
            let res = sweep::cmd_sweep(&cfg, axis, &out, exec)?;
            println!("{} values -> {}", res.groups.len(), res.table.display());
        }
        Command::Analyze(c) => {
            let (cfg, out) = load(&c)?;
            let res = analyze::cmd_analyze(&cfg, &out, exec)?;
            for r in &res {
                let show = |p: Option<f64>| p.map_or("n/a".to_string(), |v| format!("{v:.4}"));
                println!(
                    "seed {}: correlation stable {} full {}",
                    r.seed,
                    show(r.stable.pearson),
                    show(r.full.pearson)
                );
            }
            println!("analysis -> {}", out.join("analysis").display());
        }
        Command::Gradcheck { seeds, inject_fault } => {
            let seeds = parse_int_list("--seeds", &seeds)?;
            let opts = GradcheckOptions {
                inject_fault,
                ..GradcheckOptions::default()
            };
            let res = gradcheck::cmd_gradcheck(&seeds, &opts, exec)?;
            match res.warning {
                Some(w) => eprintln!("warning: {w}"),
                None => println!("gradcheck passed on {} seeds", res.reports.len()),
            }
        }
        Command::Keys => {
            for (k, doc) in KEYS {
                println!("{k:<28} {doc}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
