//! Shared fixtures for the benchmarks.

use tbscan_core::micronet::PATCH_SIZE;
use tbscan_core::synthgen::generate_corpus;
use tbscan_core::{CascadeModel, Corpus, NetworkModel, PatchOrigin, PatchSample, Label, Stage2, SynthConfig, Tensor};

/// The default synthetic corpus.
pub fn corpus() -> Corpus {
    generate_corpus(&SynthConfig::default()).expect("default synth config is valid")
}

/// First view-field of the default corpus.
pub fn field() -> Tensor {
    corpus().slides[0].fields[0].field.image.clone()
}

/// A freshly initialized default-architecture network.
pub fn network(seed: u64) -> NetworkModel {
    NetworkModel::with_default_architecture(seed, 2.449).expect("default architecture is valid")
}

/// Two untrained stages at 0.5/0.5.
pub fn cascade() -> CascadeModel {
    CascadeModel::new(network(1), Stage2::Network(network(2)), 0.5, 0.5).expect("thresholds are valid")
}

/// `n` windows cut from the first field, alternating labels.
pub fn samples(n: usize) -> Vec<PatchSample> {
    let image = field();
    (0..n)
        .map(|i| {
            let (top, left) = ((i * 7) % 180, (i * 13) % 180);
            PatchSample {
                pixels: image.slice_patch(top, left, PATCH_SIZE, PATCH_SIZE).expect("window fits"),
                label: Label::from_positive(i % 2 == 0),
                origin: PatchOrigin::new("bench", 0, top, left),
            }
        })
        .collect()
}
