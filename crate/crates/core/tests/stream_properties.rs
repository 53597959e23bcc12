use memdisc::attack::{run_attack_phase, AttackConfig, TriggerOutcome, VictimStream};
use memdisc::checkpoints::CheckpointStore;
use memdisc::defense::{DefenseConfig, DefenseKind};
use memdisc::discrepancy::ThresholdSchedule;
use memdisc::numcore::*;
use memdisc::stream::*;
use memdisc::Exec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn blobs(n: usize, noise: f64, clusters: usize, seed: u64) -> Dataset {
    gen_synthetic(&SyntheticSpec {
        kind: SyntheticKind::Blobs,
        n,
        dim: 4,
        n_classes: 3,
        noise,
        separation: 1.0,
        clusters_per_class: clusters,
        seed,
    })
    .unwrap()
}

fn stream(seed: u64, victim_batches: usize) -> StreamConfig {
    StreamConfig {
        batch_size: 40,
        burn_in_epochs: 4,
        victim_batches,
        seed,
        ..StreamConfig::default()
    }
}

fn prepared(seed: u64) -> (Dataset, CheckpointStore, BurnIn, StreamConfig) {
    let ds = blobs(400, 0.3, 1, seed);
    let cfg = stream(seed, 4);
    let mut store = CheckpointStore::unbounded();
    let shape = ModelShape::mlp(&[4, 8, 3]).unwrap();
    let burn = burn_in(&ds, &shape, &cfg, &mut store, &ds.split(Split::Val), Measure::Kl).unwrap();
    (ds, store, burn, cfg)
}

#[test]
fn well_separated_blobs_are_learned_perfectly() {
    let ds = blobs(600, 0.01, 1, 7);
    let cfg = StreamConfig { burn_in_epochs: 30, ..stream(7, 0) };
    let mut store = CheckpointStore::unbounded();
    let shape = ModelShape::mlp(&[4, 3]).unwrap();
    let burn = burn_in(&ds, &shape, &cfg, &mut store, &ds.split(Split::Val), Measure::Kl).unwrap();
    assert_eq!(evaluate_accuracy(&burn.params, &ds.split(Split::Test)).unwrap(), 1.0);
}

#[test]
fn accuracy_matches_a_confusion_count() {
    let mut r = ChaCha8Rng::seed_from_u64(11);
    let shape = ModelShape::mlp(&[4, 6, 3]).unwrap();
    for _ in 0..10 {
        let p = ParamState::init(shape.clone(), &mut r);
        let n = 60;
        let x = Matrix::new(n, 4, (0..n * 4).map(|_| r.random()).collect()).unwrap();
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..3)).collect();
        let probs = forward_probs(&p, &x).unwrap();
        let mut confusion = [[0usize; 3]; 3];
        for (i, &y) in labels.iter().enumerate() {
            let row = probs.row(i);
            let mut best = 0;
            for c in 1..3 {
                if row[c] > row[best] {
                    best = c;
                }
            }
            confusion[y][best] += 1;
        }
        let diag: usize = (0..3).map(|c| confusion[c][c]).sum();
        let b = Batch { features: x, labels };
        assert_eq!(evaluate_accuracy(&p, &b).unwrap(), diag as f64 / n as f64);
    }
}

#[test]
fn constant_prediction_scores_the_class_share() {
    let shape = ModelShape::mlp(&[2, 3]).unwrap();
    let mut values = vec![0.0; shape.n_params()];
    // Output bias of class 1 dominates.
    values[2 * 3 + 1] = 5.0;
    let p = ParamState::new(shape, values).unwrap();
    let labels = vec![1, 1, 1, 0, 2, 1, 0, 1];
    let b = Batch { features: Matrix::new(8, 2, vec![0.3; 16]).unwrap(), labels };
    assert_eq!(evaluate_accuracy(&p, &b).unwrap(), 5.0 / 8.0);
}

#[test]
fn burn_in_checkpoint_ids_cover_every_epoch() {
    let (_, store, burn, cfg) = prepared(3);
    assert_eq!(store.ids(), (0..=cfg.burn_in_epochs).collect::<Vec<_>>());
    assert_eq!(burn.steps, cfg.burn_in_epochs * 8);
}

#[test]
fn victim_phase_is_execution_independent() {
    let (ds, store, burn, cfg) = prepared(4);
    let attack = AttackConfig::default();
    let attacker = build_attacker(&ds, &attack, &store, cfg.batch_size, cfg.seed, Measure::Kl).unwrap();
    let schedule = ThresholdSchedule::new(0.01, 0.0).unwrap();
    for kind in [DefenseKind::St, DefenseKind::Gc, DefenseKind::At, DefenseKind::Dsc, DefenseKind::Dgc] {
        let def = DefenseConfig {
            dsc_schedule: kind.needs_aux().then_some(schedule),
            aux_checkpoint_id: kind.needs_aux().then_some(cfg.aux_epoch()),
            ..DefenseConfig::standard().with_kind(kind)
        };
        let a = victim_phase(&burn, &store, &ds, Some(&attacker), &def, &cfg, Exec::Sequential).unwrap();
        let b = victim_phase(&burn, &store, &ds, Some(&attacker), &def, &cfg, Exec::Parallel).unwrap();
        assert_eq!(a.metrics, b.metrics, "{kind}");
        assert_eq!(a.final_params, b.final_params, "{kind}");
    }
}

#[test]
fn zero_budget_attack_barely_moves_accuracy() {
    for seed in 0..3 {
        let (ds, store, burn, cfg) = prepared(20 + seed);
        let attack = AttackConfig { eps: 0.0, step_size: 0.0, ..AttackConfig::default() };
        let attacker = build_attacker(&ds, &attack, &store, cfg.batch_size, cfg.seed, Measure::Kl).unwrap();
        let r = victim_phase(&burn, &store, &ds, Some(&attacker), &DefenseConfig::standard(), &cfg, Exec::Parallel)
            .unwrap();
        assert!(r.metrics.delta.unwrap().abs() <= 0.02, "seed {seed}: {:?}", r.metrics.delta);
    }
}

#[test]
fn every_submitted_batch_passes_the_defense() {
    let (ds, store, burn, cfg) = prepared(5);
    let attacker =
        build_attacker(&ds, &AttackConfig::default(), &store, cfg.batch_size, cfg.seed, Measure::Kl).unwrap();
    let r = victim_phase(&burn, &store, &ds, Some(&attacker), &DefenseConfig::standard(), &cfg, Exec::Sequential)
        .unwrap();
    let n = r.metrics.n_poison_batches.unwrap();
    assert!(n <= cfg.victim_batches);
    assert_eq!(r.seen_samples, (n + 1) * cfg.batch_size);
}

#[test]
fn budget_and_monitor_bound_the_poison_batches() {
    let (ds, store, burn, cfg) = prepared(6);
    let none = StreamConfig { victim_batches: 0, ..cfg.clone() };
    let attacker =
        build_attacker(&ds, &AttackConfig::default(), &store, cfg.batch_size, cfg.seed, Measure::Kl).unwrap();
    let r = victim_phase(&burn, &store, &ds, Some(&attacker), &DefenseConfig::standard(), &none, Exec::Sequential)
        .unwrap();
    assert_eq!(r.metrics.n_poison_batches, Some(0));
}

/// Replays a fixed loss sequence so the monitor can be driven exactly.
struct Scripted {
    params: ParamState,
    store: CheckpointStore,
    batch: Batch,
    losses: Vec<f64>,
    submitted: usize,
    triggered_before: Option<usize>,
}

impl VictimStream for Scripted {
    fn params(&self) -> &ParamState {
        &self.params
    }
    fn checkpoints(&self) -> &CheckpointStore {
        &self.store
    }
    fn next_stream_batch(&mut self) -> memdisc::Result<Batch> {
        Ok(self.batch.clone())
    }
    fn submit(&mut self, _: Batch) -> memdisc::Result<f64> {
        let l = self.losses.get(self.submitted).copied().unwrap_or(0.0);
        self.submitted += 1;
        Ok(l)
    }
    fn held_out_loss(&self) -> memdisc::Result<f64> {
        Ok(0.0)
    }
    fn before_trigger(&mut self) -> memdisc::Result<()> {
        self.triggered_before = Some(self.submitted);
        Ok(())
    }
}

#[test]
fn monitor_fires_the_trigger_on_the_first_breach() {
    let (ds, store, burn, cfg) = prepared(7);
    let attack = AttackConfig { monitor_gamma: 1.0 + 1e-9, ..AttackConfig::default() };
    let attacker = build_attacker(&ds, &attack, &store, cfg.batch_size, cfg.seed, Measure::Kl).unwrap();
    let run = |losses: Vec<f64>, budget: usize| {
        let mut v = Scripted {
            params: burn.params.clone(),
            store: store.clone(),
            batch: ds.batch(&ds.train[..8]),
            losses,
            submitted: 0,
            triggered_before: None,
        };
        let r = run_attack_phase(&mut v, &attacker, 1.0, budget).unwrap();
        assert_eq!(v.triggered_before, Some(r.n_poison_batches));
        assert_eq!(v.submitted, r.n_poison_batches + 1);
        r
    };
    let r = run(vec![1.0 + 1e-6], 10);
    assert_eq!((r.n_poison_batches, r.outcome), (1, TriggerOutcome::Triggered));
    let r = run(vec![0.5, 0.9, 1.2, 0.1], 10);
    assert_eq!((r.n_poison_batches, r.outcome), (3, TriggerOutcome::Triggered));
    let r = run(vec![0.5; 10], 4);
    assert_eq!((r.n_poison_batches, r.outcome), (4, TriggerOutcome::Exhausted));
}

#[test]
fn synthetic_generation_is_seeded() {
    let a = blobs(200, 0.3, 2, 9);
    let b = blobs(200, 0.3, 2, 9);
    let c = blobs(200, 0.3, 2, 10);
    assert_eq!(a.features, b.features);
    assert_ne!(a.features, c.features);
    assert!(a.features.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    let mut all: Vec<usize> = a.train.iter().chain(&a.val).chain(&a.test).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..200).collect::<Vec<_>>());
}
