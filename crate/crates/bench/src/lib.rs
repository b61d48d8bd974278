//! Fixtures shared by the benchmarks.

use unicr_core::corpus::{generate_synthetic, SynthConfig};
use unicr_core::Corpus;

/// The default synthetic corpus scaled down to `dialogues_per_task`.
pub fn corpus(dialogues_per_task: usize) -> Corpus {
    let cfg = SynthConfig {
        dialogues_per_task,
        ..SynthConfig::default()
    };
    generate_synthetic(&cfg, 0).expect("default generator settings are valid")
}
