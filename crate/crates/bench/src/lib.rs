//! Fixed-seed fixtures shared by the benchmarks.

use fairssl::cka::LayerActivations;
use fairssl::dataio::generate_synthetic;
use fairssl::fairmetrics::PredictionTable;
use fairssl::{ActivationDump, Dataset, SeedTree, SynthSpec, Tensor};
use rand::Rng;

/// Uniform values in `[-1, 1)`.
pub fn tensor(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = SeedTree::new(seed).stream("bench", &[]);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

pub fn tensor64(shape: &[usize], seed: u64) -> Tensor<f64> {
    tensor(shape, seed).cast()
}

/// The default synthetic set at `n` windows.
pub fn dataset(n: usize) -> Dataset {
    generate_synthetic(&SynthSpec {
        n,
        seed: 1,
        ..SynthSpec::default()
    })
    .expect("default spec is valid")
}

/// Scores loosely correlated with the label, over one two-segment
/// attribute.
pub fn predictions(n: usize, seed: u64) -> PredictionTable {
    let mut rng = SeedTree::new(seed).stream("bench", &[]);
    let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
    let scores = labels
        .iter()
        .map(|&l| (0.35 * f64::from(l) + rng.random_range(0.0..0.65)).min(1.0))
        .collect();
    let group = (0..n).map(|i| if i % 3 == 0 { "B" } else { "A" }.to_string()).collect();
    PredictionTable::new("bench", (0..n as u64).collect(), scores, labels, vec!["group".into()], vec![group])
        .expect("consistent columns")
}

/// Activations shaped like the encoder with a classification head.
pub fn activations(n: usize, seed: u64) -> ActivationDump {
    let dims = [("conv1", 32), ("conv2", 64), ("conv3", 96), ("pool", 96), ("cls1", 128), ("cls2", 2)];
    let layers = dims
        .iter()
        .enumerate()
        .map(|(i, &(name, dim))| LayerActivations {
            name: name.into(),
            dim,
            data: tensor(&[n, dim], seed * 31 + i as u64).into_data(),
        })
        .collect();
    let gender = (0..n).map(|i| if i % 2 == 0 { "female" } else { "male" }.to_string()).collect();
    ActivationDump::new("bench", (0..n as u64).collect(), vec!["gender".into()], vec![gender], layers)
        .expect("consistent layers")
}
