//! Experiment execution: one burn-in per seed shared by every
//! (defense, mode) victim phase of that seed.

use std::fs;
use std::path::{Path, PathBuf};

use memdisc::checkpoints::CheckpointStore;
use memdisc::defense::{DefenseConfig, DefenseKind};
use memdisc::discrepancy::{estimate_schedule, ThresholdSchedule};
use memdisc::exec::collect_ordered;
use memdisc::numcore::ModelShape;
use memdisc::stream::{
    build_attacker, burn_in, gen_synthetic, load_idx, victim_phase, BurnIn, Dataset, MetricsRow,
    RunMode, Split, StreamConfig, SyntheticSpec, VictimReport,
};
use memdisc::Exec;

use crate::config::{DataSource, DatasetConfig, ExperimentConfig};
use crate::error::{in_component, io_error, CliError};
use crate::metrics::write_metrics;

pub const METRICS_FILE: &str = "metrics.csv";

pub fn load_dataset(cfg: &DatasetConfig, seed: u64) -> Result<Dataset, CliError> {
    let ds = match cfg.source {
        DataSource::Synthetic(kind) => gen_synthetic(&SyntheticSpec {
            kind,
            n: cfg.n,
            dim: cfg.dim,
            n_classes: cfg.classes,
            noise: cfg.noise,
            separation: cfg.separation,
            clusters_per_class: cfg.clusters_per_class,
            seed,
        }),
        DataSource::Idx => {
            let (Some(images), Some(labels)) = (&cfg.idx_images, &cfg.idx_labels) else {
                return Err(CliError::Config(
                    "dataset.kind = idx needs dataset.idx_images and dataset.idx_labels".into(),
                ));
            };
            load_idx(images, labels, cfg.classes, seed)
        }
    };
    ds.map_err(in_component("dataset"))
}

pub fn model_shape(hidden: &[usize], ds: &Dataset) -> Result<ModelShape, CliError> {
    let mut dims = vec![ds.dim()];
    dims.extend_from_slice(hidden);
    dims.push(ds.n_classes);
    ModelShape::mlp(&dims).map_err(in_component("model"))
}

pub fn stream_config(cfg: &ExperimentConfig, seed: u64) -> StreamConfig {
    StreamConfig {
        seed,
        ..cfg.stream.clone()
    }
}

pub fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed_{seed}"))
}

pub fn checkpoint_root(out: &Path) -> PathBuf {
    out.join("ckpt")
}

/// Dataset, trained burn-in state and its checkpoints for one seed.
pub struct Prepared {
    pub dataset: Dataset,
    pub stream: StreamConfig,
    pub store: CheckpointStore,
    pub burn: BurnIn,
}

pub fn prepare_seed(cfg: &ExperimentConfig, seed: u64) -> Result<Prepared, CliError> {
    let dataset = load_dataset(&cfg.dataset, seed)?;
    let shape = model_shape(&cfg.hidden, &dataset)?;
    let stream = stream_config(cfg, seed);
    stream
        .validate(dataset.train.len())
        .map_err(in_component("stream"))?;
    let mut store = CheckpointStore::unbounded();
    let probe = dataset.split(Split::Val);
    let burn = burn_in(&dataset, &shape, &stream, &mut store, &probe, cfg.defense.measure)
        .map_err(in_component("burn-in"))?;
    Ok(Prepared {
        dataset,
        stream,
        store,
        burn,
    })
}

/// Threshold schedule of the discrepancy-aware defenses: the fixed values
/// when configured, otherwise a fit of the burn-in series, scaled by the
/// threshold level.
pub fn schedule_for(cfg: &ExperimentConfig, burn: &BurnIn) -> Result<ThresholdSchedule, CliError> {
    let d = &cfg.defense;
    let base = match (d.mu, d.tau) {
        (Some(mu), Some(tau)) => ThresholdSchedule::new(mu, tau),
        _ => estimate_schedule(&burn.md_series, d.threshold_margin),
    }
    .map_err(in_component("threshold schedule"))?;
    ThresholdSchedule::new(base.mu * d.threshold_level, base.tau * d.threshold_level)
        .map_err(in_component("threshold schedule"))
}

pub fn defense_config(
    cfg: &ExperimentConfig,
    kind: DefenseKind,
    schedule: Option<ThresholdSchedule>,
) -> DefenseConfig {
    let d = &cfg.defense;
    DefenseConfig {
        kind,
        gc_clip_norm: d.gc_clip_norm,
        at_eps: d.at_eps,
        at_step: d.at_step,
        at_steps: d.at_steps,
        dsc_schedule: schedule,
        dsc_eps: d.dsc_eps,
        dsc_step: d.dsc_step,
        dsc_max_steps: d.dsc_steps,
        aux_checkpoint_id: Some(cfg.stream.aux_epoch()),
        measure: d.measure,
    }
}

pub struct SeedRun {
    pub seed: u64,
    pub schedule: Option<ThresholdSchedule>,
    /// In (defense, mode) configuration order.
    pub reports: Vec<VictimReport>,
}

/// Burn-in then every configured victim phase for `seed`. Checkpoints are
/// written under `ckpt_root` when given.
pub fn run_seed(
    cfg: &ExperimentConfig,
    seed: u64,
    exec: Exec,
    ckpt_root: Option<&Path>,
) -> Result<SeedRun, CliError> {
    let prep = prepare_seed(cfg, seed)?;
    if let Some(root) = ckpt_root {
        prep.store
            .save_dir(&seed_dir(root, seed))
            .map_err(in_component("checkpoint store"))?;
    }
    let schedule = if cfg.defense.kinds.iter().any(|k| k.needs_aux()) {
        Some(schedule_for(cfg, &prep.burn)?)
    } else {
        None
    };
    let attacker = if cfg.modes.contains(&RunMode::Attack) {
        Some(
            build_attacker(
                &prep.dataset,
                &cfg.attack,
                &prep.store,
                prep.stream.batch_size,
                seed,
                cfg.defense.measure,
            )
            .map_err(in_component("attacker"))?,
        )
    } else {
        None
    };
    let jobs: Vec<(DefenseKind, RunMode)> = cfg
        .defense
        .kinds
        .iter()
        .flat_map(|&k| cfg.modes.iter().map(move |&m| (k, m)))
        .collect();
    let reports = exec.map_slice(&jobs, |&(kind, mode)| {
        let def = defense_config(cfg, kind, schedule);
        let att = match mode {
            RunMode::Attack => attacker.as_ref(),
            RunMode::CleanOracle => None,
        };
        victim_phase(&prep.burn, &prep.store, &prep.dataset, att, &def, &prep.stream, exec)
            .map_err(in_component("victim phase"))
    });
    Ok(SeedRun {
        seed,
        schedule,
        reports: collect_ordered(reports)?,
    })
}

/// Runs every seed; results come back in seed-list order whatever the
/// completion order.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    exec: Exec,
    ckpt_root: Option<&Path>,
) -> Result<Vec<SeedRun>, CliError> {
    cfg.validate()?;
    collect_ordered(exec.map_slice(&cfg.seeds, |&s| run_seed(cfg, s, exec, ckpt_root)))
}

pub fn metrics_rows(runs: &[SeedRun]) -> Vec<MetricsRow> {
    runs.iter()
        .flat_map(|r| r.reports.iter().map(|v| v.metrics.clone()))
        .collect()
}

/// Runs the experiment into `out` and writes `out/metrics.csv`.
pub fn cmd_run(cfg: &ExperimentConfig, out: &Path, exec: Exec) -> Result<Vec<MetricsRow>, CliError> {
    fs::create_dir_all(out).map_err(io_error("output directory"))?;
    let runs = run_experiment(cfg, exec, Some(&checkpoint_root(out)))?;
    let rows = metrics_rows(&runs);
    write_metrics(&out.join(METRICS_FILE), &rows)?;
    Ok(rows)
}
