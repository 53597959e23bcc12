//! One-axis sweeps: a full run per axis value with shared seeds, merged into
//! a long-format table.

use std::fs;
use std::path::{Path, PathBuf};

use memdisc::exec::collect_ordered;
use memdisc::stream::MetricsRow;
use memdisc::Exec;

use crate::analyze::{analyze_seed, write_interval_sweep};
use crate::config::{ExperimentConfig, SweepAxis};
use crate::error::{io_error, CliError};
use crate::metrics::{metrics_lines, write_csv, METRICS_HEADER};
use crate::run::{cmd_run, seed_dir};

pub fn sweep_header() -> String {
    format!("axis,axis_value,{METRICS_HEADER}")
}

/// Config for one axis value. The `eps` axis keeps the reference
/// step-to-budget ratio; the `k` axis moves the auxiliary checkpoint `k`
/// epochs back from the end of burn-in.
pub fn with_axis_value(
    base: &ExperimentConfig,
    axis: SweepAxis,
    value: &str,
) -> Result<ExperimentConfig, CliError> {
    let mut cfg = base.clone();
    let num = |key: &str| -> Result<f64, CliError> {
        value
            .trim()
            .parse()
            .map_err(|e| CliError::Config(format!("sweep.values: `{value}` for {key}: {e}")))
    };
    match axis {
        SweepAxis::Beta => cfg.attack.beta = num("beta")?,
        SweepAxis::Eps => {
            let eps = num("eps")?;
            let ratio = base.attack.step_size / base.attack.eps;
            cfg.attack.eps = eps;
            cfg.attack.step_size = eps * ratio;
        }
        SweepAxis::ThresholdLevel => cfg.defense.threshold_level = num("threshold_level")?,
        SweepAxis::Measure => cfg.set("defense.measure", value)?,
        SweepAxis::K => {
            let k: u64 = value
                .trim()
                .parse()
                .map_err(|e| CliError::Config(format!("sweep.values: `{value}` for k: {e}")))?;
            let epochs = cfg.stream.burn_in_epochs;
            if k == 0 || k > epochs {
                return Err(CliError::Config(format!(
                    "sweep.values: k = {k} must lie in [1, {epochs}]"
                )));
            }
            cfg.stream.aux_epoch = Some(epochs - k);
            cfg.analysis.k_list = (1..=k as usize).collect();
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub struct SweepOutput {
    pub table: PathBuf,
    /// Rows per axis value, in `values` order.
    pub groups: Vec<(String, Vec<MetricsRow>)>,
}

/// Runs `axis` over the configured values into `out/sweep_<axis>/`.
pub fn cmd_sweep(
    cfg: &ExperimentConfig,
    axis: SweepAxis,
    out: &Path,
    exec: Exec,
) -> Result<SweepOutput, CliError> {
    if cfg.sweep_values.is_empty() {
        return Err(CliError::Config("sweep.values: no axis values listed".into()));
    }
    let configs: Vec<(String, ExperimentConfig)> = cfg
        .sweep_values
        .iter()
        .map(|v| Ok((v.clone(), with_axis_value(cfg, axis, v)?)))
        .collect::<Result<_, CliError>>()?;
    let root = out.join(format!("sweep_{axis}"));
    fs::create_dir_all(&root).map_err(io_error("output directory"))?;
    let groups = collect_ordered(exec.map_range(configs.len(), |i| {
        let (value, c) = &configs[i];
        let dir = root.join(format!("value_{i}"));
        let rows = cmd_run(c, &dir, exec)?;
        if matches!(axis, SweepAxis::K | SweepAxis::Measure) {
            for &seed in &c.seeds {
                let a = analyze_seed(c, &dir, seed, exec)?;
                let path = seed_dir(&dir.join("analysis"), seed);
                fs::create_dir_all(&path).map_err(io_error("analysis writer"))?;
                write_interval_sweep(&path.join("interval_sweep.csv"), &a.sweep)?;
            }
        }
        Ok::<_, CliError>((value.clone(), rows))
    }))?;
    let lines: Vec<String> = groups
        .iter()
        .flat_map(|(v, rows)| {
            metrics_lines(rows)
                .into_iter()
                .map(move |l| format!("{axis},{v},{l}"))
        })
        .collect();
    let table = root.join("sweep.csv");
    write_csv(&table, &sweep_header(), &lines)?;
    Ok(SweepOutput { table, groups })
}
