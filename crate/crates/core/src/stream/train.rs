use rand::seq::{IndexedRandom, SliceRandom};
use rand_chacha::ChaCha8Rng;

use super::data::{Dataset, Split};
use super::{component_rng, RngStream};
use crate::attack::{run_attack_phase, AttackConfig, Attacker, TriggerOutcome, VictimStream};
use crate::checkpoints::{CheckpointStore, Selector};
use crate::defense::{apply_defense, DefenseConfig, DefenseContext, DefenseKind};
use crate::discrepancy::memorization_discrepancy;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::numcore::{
    argmax, cross_entropy_loss, forward_probs, loss_and_grad, sgd_step, Batch, Measure,
    ModelShape, ParamState,
};

#[derive(Debug, Clone, PartialEq)]
pub struct StreamConfig {
    pub batch_size: usize,
    pub burn_in_epochs: u64,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Burn-in epoch whose checkpoint serves as the auxiliary model; defaults
    /// to the midpoint of burn-in.
    pub aux_epoch: Option<u64>,
    /// Victim-phase length: the attacker's batch budget, or the number of
    /// clean batches in clean-oracle mode.
    pub victim_batches: usize,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            batch_size: 100,
            burn_in_epochs: 40,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
            aux_epoch: None,
            victim_batches: 100,
        }
    }
}

impl StreamConfig {
    pub fn aux_epoch(&self) -> u64 {
        self.aux_epoch.unwrap_or(self.burn_in_epochs / 2)
    }

    pub fn validate(&self, train_len: usize) -> Result<()> {
        if self.batch_size == 0 || self.batch_size > train_len {
            return Err(Error::Config(format!(
                "stream.batch_size must lie in [1, {train_len}], got {}",
                self.batch_size
            )));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("stream.lr must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "stream.momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "stream.weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.aux_epoch() > self.burn_in_epochs {
            return Err(Error::Config(format!(
                "stream.aux_epoch {} beyond burn-in ({} epochs)",
                self.aux_epoch(),
                self.burn_in_epochs
            )));
        }
        Ok(())
    }
}

/// Shuffled pass over the training split. Each epoch is a fresh permutation;
/// a tail shorter than one batch is skipped.
#[derive(Debug, Clone)]
pub struct BatchStream {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
}

impl BatchStream {
    pub fn new(train: &[usize], batch_size: usize, seed: u64) -> Self {
        let mut rng = component_rng(seed, RngStream::Shuffle);
        let mut order = train.to_vec();
        order.shuffle(&mut rng);
        Self {
            rng,
            order,
            cursor: 0,
            batch_size,
        }
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.order.len() / self.batch_size
    }

    pub fn next_indices(&mut self) -> Vec<usize> {
        if self.cursor + self.batch_size > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let idx = self.order[self.cursor..self.cursor + self.batch_size].to_vec();
        self.cursor += self.batch_size;
        idx
    }
}

#[derive(Debug, Clone)]
pub struct BurnIn {
    pub params: ParamState,
    pub momentum: Vec<f64>,
    /// Mean training loss over the final burn-in epoch.
    pub reference_loss: f64,
    /// `(m, mean MD of the probe batch against the auxiliary model)` after
    /// every step past the auxiliary epoch; `m = 0` is the last step.
    pub md_series: Vec<(i64, f64)>,
    pub stream: BatchStream,
    pub steps: u64,
}

/// Clean pre-training. Records checkpoint 0 (initialization) and one
/// checkpoint per epoch under ids `1..=burn_in_epochs`, and pins the
/// auxiliary epoch in `store`.
pub fn burn_in(
    dataset: &Dataset,
    shape: &ModelShape,
    cfg: &StreamConfig,
    store: &mut CheckpointStore,
    probe: &Batch,
    measure: Measure,
) -> Result<BurnIn> {
    cfg.validate(dataset.train.len())?;
    let mut rng = component_rng(cfg.seed, RngStream::Init);
    let mut params = ParamState::init(shape.clone(), &mut rng);
    let mut momentum = vec![0.0; params.len()];
    let aux_epoch = cfg.aux_epoch();
    store.set_auxiliary(Some(aux_epoch));
    store.record(0, &params)?;

    let mut stream = BatchStream::new(&dataset.train, cfg.batch_size, cfg.seed);
    let per_epoch = stream.batches_per_epoch();
    let total = cfg.burn_in_epochs as i64 * per_epoch as i64;
    let mut aux = (aux_epoch == 0).then(|| params.clone());
    let mut md_series = Vec::new();
    let mut reference_loss = None;
    let mut step = 0u64;
    for epoch in 1..=cfg.burn_in_epochs {
        let mut loss_sum = 0.0;
        for b in 0..per_epoch {
            let batch = dataset.batch(&stream.next_indices());
            let (loss, grad) = loss_and_grad(&params, &batch)?;
            let at = || format!("burn-in epoch {epoch}, batch {b}");
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss {loss} at {}", at())));
            }
            (params, momentum) = sgd_step(&params, &grad, cfg.lr, &momentum, cfg.momentum, cfg.weight_decay)
                .map_err(|e| Error::NonFinite(format!("{e} at {}", at())))?;
            step += 1;
            loss_sum += loss;
            if let Some(aux) = &aux {
                let md = memorization_discrepancy(&params, aux, &probe.features, measure)?;
                md_series.push((step as i64 - total, md.mean));
            }
        }
        store.record(epoch, &params)?;
        if epoch == aux_epoch {
            aux = Some(params.clone());
        }
        if epoch == cfg.burn_in_epochs {
            reference_loss = Some(loss_sum / per_epoch as f64);
        }
    }
    let reference_loss = match reference_loss {
        Some(l) => l,
        None => cross_entropy_loss(&params, &dataset.split(Split::Train))?,
    };
    Ok(BurnIn {
        params,
        momentum,
        reference_loss,
        md_series,
        stream,
        steps: step,
    })
}

/// Argmax accuracy; ties resolve to the lowest class index.
pub fn evaluate_accuracy(params: &ParamState, split: &Batch) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate on an empty split".into()));
    }
    let probs = forward_probs(params, &split.features)?;
    let hits = probs
        .iter_rows()
        .zip(&split.labels)
        .filter(|(p, &y)| argmax(p) == y)
        .count();
    Ok(hits as f64 / split.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RunMode {
    Attack,
    CleanOracle,
}

impl RunMode {
    pub fn name(self) -> &'static str {
        match self {
            RunMode::Attack => "attack",
            RunMode::CleanOracle => "clean_oracle",
        }
    }
}

impl std::fmt::Display for RunMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for RunMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "attack" => Ok(RunMode::Attack),
            "clean_oracle" => Ok(RunMode::CleanOracle),
            _ => Err(Error::Config(format!("unknown run mode `{s}`"))),
        }
    }
}

/// One experiment outcome. Accuracies are fractions in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub run_id: String,
    pub seed: u64,
    pub defense: DefenseKind,
    pub mode: RunMode,
    pub acc_start: f64,
    pub n_poison_batches: Option<usize>,
    pub acc_post_poison: f64,
    pub acc_post_trigger: f64,
    pub delta: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct VictimReport {
    pub metrics: MetricsRow,
    pub outcome: Option<TriggerOutcome>,
    /// Samples DSC moved at least one step, over all victim batches.
    pub corrected_samples: usize,
    pub seen_samples: usize,
    pub final_params: ParamState,
}

struct Victim<'a> {
    dataset: &'a Dataset,
    cfg: &'a StreamConfig,
    defense: &'a DefenseConfig,
    exec: Exec,
    params: ParamState,
    momentum: Vec<f64>,
    aux: Option<ParamState>,
    store: CheckpointStore,
    stream: BatchStream,
    next_id: u64,
    batch_index: u64,
    held_out: Batch,
    test: Batch,
    acc_post_poison: Option<f64>,
    corrected: usize,
    seen: usize,
}

impl VictimStream for Victim<'_> {
    fn params(&self) -> &ParamState {
        &self.params
    }

    fn checkpoints(&self) -> &CheckpointStore {
        &self.store
    }

    fn next_stream_batch(&mut self) -> Result<Batch> {
        Ok(self.dataset.batch(&self.stream.next_indices()))
    }

    fn submit(&mut self, batch: Batch) -> Result<f64> {
        let ctx = DefenseContext {
            params: &self.params,
            aux: self.aux.as_ref(),
            batch_index: self.batch_index,
            exec: self.exec,
        };
        let params = &self.params;
        let out = apply_defense(self.defense, batch, |b| loss_and_grad(params, b), &ctx)?;
        if !out.loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss {} at victim batch {}",
                out.loss, self.batch_index
            )));
        }
        self.seen += out.batch.len();
        if let Some(steps) = &out.dsc_steps {
            self.corrected += steps.iter().filter(|&&s| s > 0).count();
        }
        let cfg = self.cfg;
        (self.params, self.momentum) = sgd_step(
            &self.params,
            &out.grad,
            cfg.lr,
            &self.momentum,
            cfg.momentum,
            cfg.weight_decay,
        )?;
        self.store.record(self.next_id, &self.params)?;
        self.next_id += 1;
        self.batch_index += 1;
        Ok(out.loss)
    }

    fn held_out_loss(&self) -> Result<f64> {
        cross_entropy_loss(&self.params, &self.held_out)
    }

    fn before_trigger(&mut self) -> Result<()> {
        self.acc_post_poison = Some(evaluate_accuracy(&self.params, &self.test)?);
        Ok(())
    }
}

/// Builds the attacker: the validation split as `S_val` and a trigger batch
/// of `batch_size` training samples drawn with the attack stream of `seed`.
pub fn build_attacker(
    dataset: &Dataset,
    cfg: &AttackConfig,
    store: &CheckpointStore,
    batch_size: usize,
    seed: u64,
    measure: Measure,
) -> Result<Attacker> {
    cfg.validate()?;
    if let Some(id) = cfg.surrogate_step {
        store.fetch(Selector::ById(id))?;
    }
    let mut rng = component_rng(seed, RngStream::Attack);
    let mut pick: Vec<usize> = dataset
        .train
        .choose_multiple(&mut rng, batch_size.min(dataset.train.len()))
        .copied()
        .collect();
    pick.sort_unstable();
    let aux = if cfg.beta > 0.0 {
        Some(store.fetch_params(Selector::Auxiliary)?)
    } else {
        None
    };
    Ok(Attacker {
        cfg: cfg.clone(),
        val: dataset.split(Split::Val),
        trigger: dataset.batch(&pick),
        aux,
        measure,
    })
}

/// Streams the victim phase from the end of burn-in through `defense`.
///
/// With an attacker, accumulative batches replace stream batches one for one
/// until the monitor trips or the budget runs out, then the trigger batch is
/// submitted. Without one (clean oracle), `victim_batches` clean batches go
/// through the same defense path.
pub fn victim_phase(
    burn: &BurnIn,
    store: &CheckpointStore,
    dataset: &Dataset,
    attacker: Option<&Attacker>,
    defense: &DefenseConfig,
    cfg: &StreamConfig,
    exec: Exec,
) -> Result<VictimReport> {
    defense.validate()?;
    let aux = match (defense.kind.needs_aux(), defense.aux_checkpoint_id) {
        (true, Some(id)) => Some(store.fetch_params(Selector::ById(id))?),
        _ => None,
    };
    let next_id = store.newest().map_or(0, |c| c.step_id + 1);
    let mut v = Victim {
        dataset,
        cfg,
        defense,
        exec,
        params: burn.params.clone(),
        momentum: burn.momentum.clone(),
        aux,
        store: store.clone(),
        stream: burn.stream.clone(),
        next_id,
        batch_index: 0,
        held_out: dataset.split(Split::Val),
        test: dataset.split(Split::Test),
        acc_post_poison: None,
        corrected: 0,
        seen: 0,
    };
    let acc_start = evaluate_accuracy(&v.params, &v.test)?;
    let mode = if attacker.is_some() {
        RunMode::Attack
    } else {
        RunMode::CleanOracle
    };
    let (n_poison, post_poison, post_trigger, outcome) = match attacker {
        Some(a) => {
            let res = run_attack_phase(&mut v, a, burn.reference_loss, cfg.victim_batches)?;
            let post_poison = v
                .acc_post_poison
                .ok_or_else(|| Error::InvalidArgument("attack phase skipped the trigger".into()))?;
            let post_trigger = evaluate_accuracy(&v.params, &v.test)?;
            (Some(res.n_poison_batches), post_poison, post_trigger, Some(res.outcome))
        }
        None => {
            for _ in 0..cfg.victim_batches {
                let b = v.next_stream_batch()?;
                v.submit(b)?;
            }
            let acc = evaluate_accuracy(&v.params, &v.test)?;
            (None, acc, acc, None)
        }
    };
    let metrics = MetricsRow {
        run_id: format!("seed{}-{}-{}", cfg.seed, defense.kind, mode),
        seed: cfg.seed,
        defense: defense.kind,
        mode,
        acc_start,
        n_poison_batches: n_poison,
        acc_post_poison: post_poison,
        acc_post_trigger: post_trigger,
        delta: attacker.map(|_| post_trigger - post_poison),
    };
    Ok(VictimReport {
        metrics,
        outcome,
        corrected_samples: v.corrected,
        seen_samples: v.seen,
        final_params: v.params,
    })
}
