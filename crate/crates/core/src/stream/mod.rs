//! Data sources and the two-phase streaming simulation.
//!
//! A run draws every random quantity from one master seed split into
//! independent ChaCha streams, one per component, so changing one knob (say
//! the attack) leaves the dataset, initialization and shuffle order intact.

mod data;
mod idx;
mod train;

pub use data::{gen_ood, gen_synthetic, Dataset, OodShift, Split, SyntheticKind, SyntheticSpec};
pub use idx::{load_idx, save_idx};
pub use train::{
    build_attacker, burn_in, evaluate_accuracy, victim_phase, BatchStream, BurnIn, MetricsRow,
    RunMode, StreamConfig, VictimReport,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent random stream per simulation component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RngStream {
    Dataset = 1,
    Split = 2,
    Init = 3,
    Shuffle = 4,
    Attack = 5,
    Ood = 6,
}

pub fn component_rng(seed: u64, stream: RngStream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
