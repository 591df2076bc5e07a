use rand::Rng;

use crate::autodiff::Tensor;
use crate::net::{ModelParams, NetConfig, NetError};
use crate::rng::{purpose, stream, ChaCha12Rng};

/// Glorot-uniform sample: entries drawn from `[-b, b]` with
/// `b = sqrt(6 / (fan_in + fan_out))`. For a `[rows, cols]` weight acting
/// as `W x`, `fan_in = cols` and `fan_out = rows`; rank-1 shapes are
/// treated as a single row.
pub fn glorot_init(shape: &[usize], rng: &mut ChaCha12Rng) -> Tensor {
    let (fan_out, fan_in) = match shape.len() {
        1 => (1, shape[0]),
        _ => (shape[0], shape[1]),
    };
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
        .collect();
    Tensor::new(shape.to_vec(), data).expect("glorot shape")
}

/// Fresh model: Glorot weights (seeded), zero biases, normalization
/// constants from the corpus statistics.
pub fn init_model_params(
    config: NetConfig,
    feat_mean: &[f64],
    feat_std: &[f64],
    seed: u64,
) -> Result<ModelParams, NetError> {
    let mut rng = stream(seed, &[purpose::INIT]);
    ModelParams::build(config, feat_mean, feat_std, |shape| {
        glorot_init(shape, &mut rng)
    })
}
