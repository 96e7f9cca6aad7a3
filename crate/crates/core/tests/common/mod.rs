#![allow(dead_code)]

use graphpick::autodiff::{Tape, Tensor, Var};
use graphpick::graph::StarSubgraph;
use graphpick::model::ModelConfig;
use graphpick::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn uniform(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), uniform(shape.iter().product(), seed)).unwrap()
}

/// A random linear functional of `y`, so vector outputs reduce to a scalar
/// without every coordinate getting the same weight.
pub fn project(t: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let n = t.value(y).len();
    let r = t.constant(t.shape(y).to_vec(), uniform(n, seed ^ 0x9e37))?;
    let m = t.mul(y, r)?;
    Ok(t.sum(m))
}

/// A labeled star with random signals and weights.
pub fn toy_star(k: usize, len: usize, seed: u64) -> StarSubgraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut distances: Vec<f64> = (0..k).map(|_| rng.random_range(1.0..50.0)).collect();
    distances.sort_by(f64::total_cmp);
    let d_max = *distances.last().unwrap();
    StarSubgraph {
        center_id: 0,
        neighbor_ids: (1..=k as u64).collect(),
        weights: distances.iter().map(|&d| graphpick::graph::edge_weight(d, d_max)).collect(),
        distances,
        signals: (0..=k)
            .map(|_| (0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect())
            .collect(),
        labels: (0..=k).map(|_| Some(rng.random_range(0..len))).collect(),
    }
}

/// Narrow model over `len` samples, cheap enough for finite differences.
pub fn tiny_config(k: usize, len: usize) -> ModelConfig {
    let mut c = ModelConfig::new(k, len);
    c.encoder.lstm_hidden = 4;
    c.head.base_channels = 2;
    c
}
