//! Weight initialization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Tensor;

/// He-uniform initialization for layers feeding ReLU: samples from
/// `U(-sqrt(6/fan_in), +sqrt(6/fan_in))`.
pub fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let limit = (6.0 / fan_in as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::from_vec(data, shape).expect("shape/product mismatch is impossible here")
}
