use rand::Rng;

use crate::Tensor;

/// `[fan_in × fan_out]` weights drawn uniformly from
/// `±sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("xavier shape")
}
