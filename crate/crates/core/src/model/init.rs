use rand::Rng;

use crate::tensor::Tensor;

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`, rounded to `f32`.
pub fn glorot_uniform(
    shape: Vec<usize>,
    fan_in: usize,
    fan_out: usize,
    rng: &mut impl Rng,
) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| rng.gen_range(-limit..limit) as f32 as f64)
        .collect();
    Tensor::new(shape, data).expect("shape and data agree")
}
