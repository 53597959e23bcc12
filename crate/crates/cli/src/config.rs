//! Flat `key.path = value` experiment configuration.
//!
//! One assignment per line; `#` starts a comment. Lists are comma separated
//! and integer lists also accept `a..b` (exclusive) and `a..=b` ranges. Every
//! key must appear in [`KEYS`]; anything else is rejected by name.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use memdisc::attack::{AttackConfig, MonitorSource};
use memdisc::defense::DefenseKind;
use memdisc::numcore::Measure;
use memdisc::stream::{OodShift, RunMode, StreamConfig, SyntheticKind};

use crate::error::CliError;

/// Recognized keys with a one-line description each.
pub const KEYS: &[(&str, &str)] = &[
    ("dataset.kind", "blobs | moons | rings | idx"),
    ("dataset.n", "number of generated samples"),
    ("dataset.dim", "feature dimension of generated data"),
    ("dataset.classes", "number of classes"),
    ("dataset.noise", "per-sample Gaussian noise"),
    ("dataset.separation", "scale of blob centers"),
    ("dataset.clusters_per_class", "blob centers per class"),
    ("dataset.idx_images", "IDX image file (kind = idx)"),
    ("dataset.idx_labels", "IDX label file (kind = idx)"),
    ("model.hidden", "hidden layer widths, e.g. 32,32"),
    ("stream.batch_size", "mini-batch size"),
    ("stream.burn_in_epochs", "clean burn-in epochs"),
    ("stream.lr", "SGD learning rate"),
    ("stream.momentum", "SGD momentum"),
    ("stream.weight_decay", "L2 weight decay"),
    ("stream.aux_epoch", "burn-in epoch used as the auxiliary model"),
    ("stream.victim_batches", "victim-phase batch budget"),
    ("attack.eps", "l-inf budget of poison samples"),
    ("attack.step_size", "PGD step size"),
    ("attack.steps", "PGD steps per crafted batch"),
    ("attack.lambda", "weight of the trigger-accumulation term"),
    ("attack.beta", "weight of the adaptive discrepancy penalty"),
    ("attack.gamma", "loss ratio that trips the monitor"),
    ("attack.monitor", "incoming | held_out"),
    ("attack.surrogate_step", "checkpoint id of a black-box surrogate"),
    ("defense.kinds", "defenses to run, e.g. ST,GC,AT,DSC,DGC"),
    ("defense.measure", "KL | JS"),
    ("defense.gc_clip_norm", "gradient-norm bound of GC and DGC"),
    ("defense.at_eps", "AT correction budget"),
    ("defense.at_step", "AT correction step"),
    ("defense.at_steps", "AT correction steps"),
    ("defense.dsc_eps", "DSC correction budget"),
    ("defense.dsc_step", "DSC correction step"),
    ("defense.dsc_steps", "maximum DSC correction steps"),
    ("defense.threshold_margin", "residual-std multiples added to the fitted threshold"),
    ("defense.threshold_level", "scale applied to the threshold schedule"),
    ("defense.mu", "fixed threshold intercept (with defense.tau)"),
    ("defense.tau", "fixed threshold slope (with defense.mu)"),
    ("run.modes", "attack, clean_oracle or both"),
    ("run.seeds", "seed list or range"),
    ("analysis.k_list", "backtracking intervals of the interval sweep"),
    ("analysis.k_window", "stable window of the correlation check"),
    ("analysis.ood_shift", "mean_shift | uniform"),
    ("analysis.ood_magnitude", "size of the OOD shift"),
    ("analysis.ood_n", "OOD samples"),
    ("sweep.axis", "beta | k | eps | threshold_level | measure"),
    ("sweep.values", "axis values"),
    ("output.dir", "run directory"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    Synthetic(SyntheticKind),
    Idx,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub source: DataSource,
    pub n: usize,
    pub dim: usize,
    pub classes: usize,
    pub noise: f64,
    pub separation: f64,
    pub clusters_per_class: usize,
    pub idx_images: Option<PathBuf>,
    pub idx_labels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DefenseSettings {
    pub kinds: Vec<DefenseKind>,
    pub measure: Measure,
    pub gc_clip_norm: f64,
    pub at_eps: f64,
    pub at_step: f64,
    pub at_steps: usize,
    pub dsc_eps: f64,
    pub dsc_step: f64,
    pub dsc_steps: usize,
    pub threshold_margin: f64,
    pub threshold_level: f64,
    pub mu: Option<f64>,
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSettings {
    pub k_list: Vec<usize>,
    pub k_window: Vec<usize>,
    pub ood_shift: OodShift,
    pub ood_magnitude: f64,
    pub ood_n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Beta,
    K,
    Eps,
    ThresholdLevel,
    Measure,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Beta => "beta",
            SweepAxis::K => "k",
            SweepAxis::Eps => "eps",
            SweepAxis::ThresholdLevel => "threshold_level",
            SweepAxis::Measure => "measure",
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "beta" => Ok(SweepAxis::Beta),
            "k" => Ok(SweepAxis::K),
            "eps" => Ok(SweepAxis::Eps),
            "threshold_level" => Ok(SweepAxis::ThresholdLevel),
            "measure" => Ok(SweepAxis::Measure),
            other => Err(format!(
                "unknown sweep axis `{other}` (expected beta, k, eps, threshold_level or measure)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub hidden: Vec<usize>,
    /// Stream settings; the seed field is overwritten per run.
    pub stream: StreamConfig,
    pub attack: AttackConfig,
    pub defense: DefenseSettings,
    pub modes: Vec<RunMode>,
    pub seeds: Vec<u64>,
    pub analysis: AnalysisSettings,
    pub sweep_axis: Option<SweepAxis>,
    pub sweep_values: Vec<String>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    /// The reference desk-scale experiment.
    fn default() -> Self {
        Self {
            dataset: DatasetConfig {
                source: DataSource::Synthetic(SyntheticKind::Blobs),
                n: 1000,
                dim: 8,
                classes: 4,
                noise: 0.35,
                separation: 1.0,
                clusters_per_class: 4,
                idx_images: None,
                idx_labels: None,
            },
            hidden: vec![32, 32],
            stream: StreamConfig {
                aux_epoch: Some(20),
                ..StreamConfig::default()
            },
            attack: AttackConfig::default(),
            defense: DefenseSettings {
                kinds: DefenseKind::ALL.to_vec(),
                measure: Measure::Kl,
                gc_clip_norm: 1.0,
                at_eps: 0.06,
                at_step: 0.015,
                at_steps: 10,
                dsc_eps: 0.06,
                dsc_step: 0.015,
                dsc_steps: 10,
                threshold_margin: 2.0,
                threshold_level: 1.0,
                mu: None,
                tau: None,
            },
            modes: vec![RunMode::Attack, RunMode::CleanOracle],
            seeds: (0..5).collect(),
            analysis: AnalysisSettings {
                k_list: (1..40).collect(),
                k_window: (1..=35).collect(),
                ood_shift: OodShift::MeanShift,
                ood_magnitude: 0.2,
                ood_n: 100,
            },
            sweep_axis: None,
            sweep_values: Vec::new(),
            output_dir: PathBuf::from("runs/reference"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| CliError::Config(format!("{key}: cannot parse `{value}`: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError>
where
    T::Err: fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

/// Integer list with optional `a..b` / `a..=b` ranges.
pub fn parse_int_list(key: &str, value: &str) -> Result<Vec<u64>, CliError> {
    let mut out = Vec::new();
    for part in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if let Some((lo, hi)) = part.split_once("..") {
            let lo: u64 = parse(key, lo.trim())?;
            let hi = hi.trim();
            let hi: u64 = match hi.strip_prefix('=') {
                Some(h) => parse::<u64>(key, h.trim())?.saturating_add(1),
                None => parse(key, hi)?,
            };
            out.extend(lo..hi);
        } else {
            out.push(parse(key, part)?);
        }
    }
    Ok(out)
}

fn parse_usize_list(key: &str, value: &str) -> Result<Vec<usize>, CliError> {
    Ok(parse_int_list(key, value)?
        .into_iter()
        .map(|v| v as usize)
        .collect())
}

fn parse_measure(key: &str, value: &str) -> Result<Measure, CliError> {
    value
        .trim()
        .parse()
        .map_err(|e: String| CliError::Config(format!("{key}: {e}")))
}

fn core_err(key: &str) -> impl Fn(memdisc::Error) -> CliError + '_ {
    move |e| CliError::Config(format!("{key}: {e}"))
}

impl ExperimentConfig {
    /// Applies one assignment. Unknown keys are an error naming the key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        let ds = &mut self.dataset;
        match key {
            "dataset.kind" => {
                ds.source = if v.eq_ignore_ascii_case("idx") {
                    DataSource::Idx
                } else {
                    DataSource::Synthetic(v.parse().map_err(core_err(key))?)
                }
            }
            "dataset.n" => ds.n = parse(key, v)?,
            "dataset.dim" => ds.dim = parse(key, v)?,
            "dataset.classes" => ds.classes = parse(key, v)?,
            "dataset.noise" => ds.noise = parse(key, v)?,
            "dataset.separation" => ds.separation = parse(key, v)?,
            "dataset.clusters_per_class" => ds.clusters_per_class = parse(key, v)?,
            "dataset.idx_images" => ds.idx_images = Some(PathBuf::from(v)),
            "dataset.idx_labels" => ds.idx_labels = Some(PathBuf::from(v)),
            "model.hidden" => self.hidden = parse_list(key, v)?,
            "stream.batch_size" => self.stream.batch_size = parse(key, v)?,
            "stream.burn_in_epochs" => self.stream.burn_in_epochs = parse(key, v)?,
            "stream.lr" => self.stream.lr = parse(key, v)?,
            "stream.momentum" => self.stream.momentum = parse(key, v)?,
            "stream.weight_decay" => self.stream.weight_decay = parse(key, v)?,
            "stream.aux_epoch" => self.stream.aux_epoch = Some(parse(key, v)?),
            "stream.victim_batches" => self.stream.victim_batches = parse(key, v)?,
            "attack.eps" => self.attack.eps = parse(key, v)?,
            "attack.step_size" => self.attack.step_size = parse(key, v)?,
            "attack.steps" => self.attack.n_steps = parse(key, v)?,
            "attack.lambda" => self.attack.lambda = parse(key, v)?,
            "attack.beta" => self.attack.beta = parse(key, v)?,
            "attack.gamma" => self.attack.monitor_gamma = parse(key, v)?,
            "attack.monitor" => {
                self.attack.monitor_source = match v {
                    "incoming" => MonitorSource::IncomingBatch,
                    "held_out" => MonitorSource::HeldOut,
                    _ => {
                        return Err(CliError::Config(format!(
                            "{key}: expected incoming or held_out, got `{v}`"
                        )))
                    }
                }
            }
            "attack.surrogate_step" => self.attack.surrogate_step = Some(parse(key, v)?),
            "defense.kinds" => {
                self.defense.kinds = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse().map_err(core_err(key)))
                    .collect::<Result<_, _>>()?
            }
            "defense.measure" => self.defense.measure = parse_measure(key, v)?,
            "defense.gc_clip_norm" => self.defense.gc_clip_norm = parse(key, v)?,
            "defense.at_eps" => self.defense.at_eps = parse(key, v)?,
            "defense.at_step" => self.defense.at_step = parse(key, v)?,
            "defense.at_steps" => self.defense.at_steps = parse(key, v)?,
            "defense.dsc_eps" => self.defense.dsc_eps = parse(key, v)?,
            "defense.dsc_step" => self.defense.dsc_step = parse(key, v)?,
            "defense.dsc_steps" => self.defense.dsc_steps = parse(key, v)?,
            "defense.threshold_margin" => self.defense.threshold_margin = parse(key, v)?,
            "defense.threshold_level" => self.defense.threshold_level = parse(key, v)?,
            "defense.mu" => self.defense.mu = Some(parse(key, v)?),
            "defense.tau" => self.defense.tau = Some(parse(key, v)?),
            "run.modes" => {
                self.modes = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse().map_err(core_err(key)))
                    .collect::<Result<_, _>>()?
            }
            "run.seeds" => self.seeds = parse_int_list(key, v)?,
            "analysis.k_list" => self.analysis.k_list = parse_usize_list(key, v)?,
            "analysis.k_window" => self.analysis.k_window = parse_usize_list(key, v)?,
            "analysis.ood_shift" => self.analysis.ood_shift = v.parse().map_err(core_err(key))?,
            "analysis.ood_magnitude" => self.analysis.ood_magnitude = parse(key, v)?,
            "analysis.ood_n" => self.analysis.ood_n = parse(key, v)?,
            "sweep.axis" => self.sweep_axis = Some(parse(key, v)?),
            "sweep.values" => {
                self.sweep_values = v
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            }
            "output.dir" => self.output_dir = PathBuf::from(v),
            _ => return Err(CliError::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Parses config text on top of the reference defaults.
    pub fn parse_str(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("line {}: expected `key = value`", no + 1))
            })?;
            cfg.set(key.trim(), value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.seeds.is_empty() {
            return bad("run.seeds: seed list is empty");
        }
        if self.modes.is_empty() {
            return bad("run.modes: no run mode given");
        }
        if self.defense.kinds.is_empty() {
            return bad("defense.kinds: no defense given");
        }
        if self.hidden.contains(&0) {
            return bad("model.hidden: layer widths must be positive");
        }
        if self.defense.mu.is_some() != self.defense.tau.is_some() {
            return bad("defense.mu and defense.tau must be given together");
        }
        if !(self.defense.threshold_level > 0.0) {
            return bad("defense.threshold_level must be > 0");
        }
        if !(self.defense.threshold_margin >= 0.0) {
            return bad("defense.threshold_margin must be >= 0");
        }
        if self.dataset.source == DataSource::Idx
            && (self.dataset.idx_images.is_none() || self.dataset.idx_labels.is_none())
        {
            return bad("dataset.kind = idx needs dataset.idx_images and dataset.idx_labels");
        }
        if self.analysis.k_list.contains(&0) || self.analysis.k_window.contains(&0) {
            return bad("analysis: backtracking intervals start at 1");
        }
        if let Some(e) = self.stream.aux_epoch {
            if e > self.stream.burn_in_epochs {
                return bad("stream.aux_epoch exceeds stream.burn_in_epochs");
            }
        }
        self.attack.validate().map_err(|e| CliError::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_registered_key_is_accepted() {
        let samples = [
            ("dataset.kind", "moons"),
            ("dataset.idx_images", "a.idx"),
            ("model.hidden", "16,8"),
            ("attack.monitor", "held_out"),
            ("defense.kinds", "st,dsc"),
            ("defense.measure", "js"),
            ("run.modes", "clean_oracle"),
            ("analysis.ood_shift", "uniform"),
            ("sweep.axis", "beta"),
            ("sweep.values", "0,0.1"),
            ("output.dir", "out"),
        ];
        for (key, _) in KEYS {
            let mut cfg = ExperimentConfig::default();
            let value = samples
                .iter()
                .find(|(k, _)| k == key)
                .map_or("1", |(_, v)| v);
            cfg.set(key, value).unwrap_or_else(|e| panic!("{key}: {e}"));
        }
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ExperimentConfig::parse_str("defnse.kind = DSC\n").unwrap_err();
        assert!(err.to_string().contains("defnse.kind"));
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn ranges_comments_and_lists() {
        let cfg = ExperimentConfig::parse_str(
            "run.seeds = 2..4, 7   # tail comment\n\n# full line\nanalysis.k_list = 1..=3\ndefense.kinds = ST, DSC\n",
        )
        .unwrap();
        assert_eq!(cfg.seeds, vec![2, 3, 7]);
        assert_eq!(cfg.analysis.k_list, vec![1, 2, 3]);
        assert_eq!(cfg.defense.kinds, vec![DefenseKind::St, DefenseKind::Dsc]);
    }

    #[test]
    fn empty_seed_list_and_bad_values_are_rejected() {
        assert!(ExperimentConfig::parse_str("run.seeds = 3..3").is_err());
        let err = ExperimentConfig::parse_str("attack.eps = wide").unwrap_err();
        assert!(err.to_string().contains("attack.eps"));
        assert!(ExperimentConfig::parse_str("defense.mu = 0.5").is_err());
        assert!(ExperimentConfig::parse_str("no equals sign").is_err());
    }
}
