//! Post-run analysis from saved checkpoints: interval sweep, correlation
//! check and OOD comparison per seed.

use std::fs;
use std::path::Path;

use memdisc::attack::accumulative_perturb;
use memdisc::checkpoints::CheckpointStore;
use memdisc::discrepancy::{
    correlation_check, fmt_f64, interval_sweep, ood_compare, CorrelationReport, SweepRow,
    CORRELATION_HEADER, SWEEP_HEADER, SWEEP_HEADER_OOD,
};
use memdisc::exec::collect_ordered;
use memdisc::numcore::{Batch, ParamState};
use memdisc::stream::{build_attacker, gen_ood, Dataset, Split};
use memdisc::{Error, Exec};

use crate::config::ExperimentConfig;
use crate::error::{in_component, io_error, CliError};
use crate::metrics::write_csv;
use crate::run::{checkpoint_root, load_dataset, seed_dir};

pub const CORRELATION_SUMMARY_HEADER: &str = "seed,window,n_intervals,pearson";

pub struct SeedAnalysis {
    pub seed: u64,
    pub sweep: Vec<SweepRow>,
    pub ood: Vec<SweepRow>,
    /// Correlation over the configured stable window.
    pub stable: CorrelationReport,
    /// Correlation over every available interval, early epochs included.
    pub full: CorrelationReport,
}

pub fn load_checkpoints(run_dir: &Path, seed: u64) -> Result<CheckpointStore, CliError> {
    let dir = seed_dir(&checkpoint_root(run_dir), seed);
    let lookup = |m: String| CliError::Runtime {
        component: "checkpoint store",
        source: Error::Lookup(m),
    };
    if !dir.is_dir() {
        return Err(lookup(format!("no checkpoint directory {}", dir.display())));
    }
    let store = CheckpointStore::load_dir(&dir).map_err(in_component("checkpoint store"))?;
    if store.len() < 2 {
        return Err(lookup(format!(
            "{} holds {} checkpoint(s); analysis needs a historical model",
            dir.display(),
            store.len()
        )));
    }
    Ok(store)
}

/// Poison generator used by the analysis: accumulative crafting of `clean`
/// on whichever model is passed in.
pub struct PoisonSource<'a> {
    pub cfg: &'a ExperimentConfig,
    pub clean: Batch,
    pub val: Batch,
    pub trigger: Batch,
    pub aux: Option<ParamState>,
}

impl<'a> PoisonSource<'a> {
    pub fn new(
        cfg: &'a ExperimentConfig,
        ds: &Dataset,
        store: &CheckpointStore,
        seed: u64,
    ) -> Result<Self, CliError> {
        let att = build_attacker(
            ds,
            &cfg.attack,
            store,
            cfg.stream.batch_size,
            seed,
            cfg.defense.measure,
        )
        .map_err(in_component("attacker"))?;
        Ok(Self {
            cfg,
            clean: ds.split(Split::Test),
            val: att.val,
            trigger: att.trigger,
            aux: att.aux,
        })
    }

    pub fn craft(&self, params: &ParamState) -> memdisc::Result<Batch> {
        accumulative_perturb(
            &self.clean,
            params,
            &self.val,
            &self.trigger,
            &self.cfg.attack,
            self.aux.as_ref(),
            self.cfg.defense.measure,
        )
    }
}

pub fn analyze_seed(
    cfg: &ExperimentConfig,
    run_dir: &Path,
    seed: u64,
    exec: Exec,
) -> Result<SeedAnalysis, CliError> {
    let ds = load_dataset(&cfg.dataset, seed)?;
    let mut store = load_checkpoints(run_dir, seed)?;
    store.set_auxiliary(Some(cfg.stream.aux_epoch()));
    let source = PoisonSource::new(cfg, &ds, &store, seed)?;
    let measure = cfg.defense.measure;
    let current = store
        .fetch_params(memdisc::checkpoints::Selector::BackK(0))
        .map_err(in_component("checkpoint store"))?;
    let poison = source.craft(&current).map_err(in_component("attack"))?;
    let k = &cfg.analysis.k_list;
    let sweep = interval_sweep(&store, &source.clean, &poison, k, measure, exec)
        .map_err(in_component("interval sweep"))?;
    let a = &cfg.analysis;
    let ood_batch = gen_ood(&ds, a.ood_shift, a.ood_magnitude, a.ood_n, seed)
        .map_err(in_component("ood generator"))?;
    let ood = ood_compare(&store, &source.clean, &poison, &ood_batch, k, measure, exec)
        .map_err(in_component("ood comparison"))?;
    let corr = |window: &[usize]| {
        correlation_check(&store, &source.clean, |p| source.craft(p), window, measure, exec)
            .map_err(in_component("correlation check"))
    };
    let full_window: Vec<usize> = (1..store.len()).collect();
    Ok(SeedAnalysis {
        seed,
        sweep,
        ood,
        stable: corr(&a.k_window)?,
        full: corr(&full_window)?,
    })
}

fn sweep_lines(rows: &[SweepRow]) -> Vec<String> {
    let mut buf = Vec::new();
    memdisc::discrepancy::write_sweep_csv(&mut buf, rows).expect("writing to a Vec cannot fail");
    String::from_utf8(buf)
        .expect("CSV is ASCII")
        .lines()
        .skip(1)
        .map(str::to_string)
        .collect()
}

fn correlation_lines(label: &str, rep: &CorrelationReport) -> Vec<String> {
    rep.rows
        .iter()
        .map(|r| format!("{label},{},{},{}", r.k, fmt_f64(r.md_gap), fmt_f64(r.loss_gap)))
        .collect()
}

/// Writes the per-seed interval sweep of `rows` to `path`.
pub fn write_interval_sweep(path: &Path, rows: &[SweepRow]) -> Result<(), CliError> {
    write_csv(path, SWEEP_HEADER, &sweep_lines(rows))
}

/// Analyzes every seed of the run in `run_dir` and writes the CSVs under
/// `run_dir/analysis`.
pub fn cmd_analyze(
    cfg: &ExperimentConfig,
    run_dir: &Path,
    exec: Exec,
) -> Result<Vec<SeedAnalysis>, CliError> {
    cfg.validate()?;
    let results = collect_ordered(exec.map_slice(&cfg.seeds, |&s| {
        analyze_seed(cfg, run_dir, s, exec)
    }))?;
    let root = run_dir.join("analysis");
    let mut summary = Vec::new();
    for r in &results {
        let dir = seed_dir(&root, r.seed);
        fs::create_dir_all(&dir).map_err(io_error("analysis writer"))?;
        write_interval_sweep(&dir.join("interval_sweep.csv"), &r.sweep)?;
        write_csv(&dir.join("ood_compare.csv"), SWEEP_HEADER_OOD, &sweep_lines(&r.ood))?;
        let mut lines = correlation_lines("stable", &r.stable);
        lines.extend(correlation_lines("full", &r.full));
        write_csv(&dir.join("correlation.csv"), CORRELATION_HEADER, &lines)?;
        for (label, rep) in [("stable", &r.stable), ("full", &r.full)] {
            summary.push(format!(
                "{},{label},{},{}",
                r.seed,
                rep.rows.len(),
                rep.pearson.map(fmt_f64).unwrap_or_default()
            ));
        }
    }
    write_csv(
        &root.join("correlation_summary.csv"),
        CORRELATION_SUMMARY_HEADER,
        &summary,
    )?;
    Ok(results)
}
