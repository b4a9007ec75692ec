#![allow(dead_code)]

use csiloc::locnet::{Checkpoint, CheckpointMeta, Model, ModelSpec, TensorSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random inputs whose label is a smooth function of the first few values.
pub fn random_set(spec: &ModelSpec, n: usize, seed: u64) -> TensorSet<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = TensorSet::new(spec.input());
    for _ in 0..n {
        let v: Vec<f32> = (0..set.shape.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let label = [1.0 + 4.0 * v[0], 0.5 + 1.5 * v[1]];
        set.push(&v, label);
    }
    set
}

pub fn base_checkpoint(seed: u64) -> Checkpoint {
    Checkpoint::new(
        Model::build(ModelSpec::micro(), seed).unwrap(),
        CheckpointMeta::default(),
    )
}
