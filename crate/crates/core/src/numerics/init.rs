use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};

/// How a parameter tensor was initialized; stored in checkpoint metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum InitScheme {
    GlorotUniform { fan_in: usize, fan_out: usize },
    ScaledUniform { limit: f64 },
    Constant { value: f64 },
    /// Rows (or columns, whichever are fewer) orthonormal, from a Gaussian
    /// draw by Gram-Schmidt.
    Orthogonal,
    /// LSTM bias in gate order i, f, g, o: ones on the forget gate.
    UnitForgetBias { hidden: usize },
}

impl InitScheme {
    pub fn sample<T: Scalar, R: Rng + ?Sized>(&self, shape: &[usize], rng: &mut R) -> Tensor<T> {
        match *self {
            InitScheme::GlorotUniform { fan_in, fan_out } => {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Tensor::from_fn(shape, |_| T::of(rng.gen_range(-limit..limit)))
            }
            InitScheme::ScaledUniform { limit } => Tensor::from_fn(shape, |_| T::of(rng.gen_range(-limit..limit))),
            InitScheme::Constant { value } => Tensor::full(shape, T::of(value)),
            InitScheme::Orthogonal => orthogonal(shape, rng),
            InitScheme::UnitForgetBias { hidden } => {
                Tensor::from_fn(shape, |i| if (hidden..2 * hidden).contains(&i) { T::one() } else { T::zero() })
            }
        }
    }
}
fn orthogonal<T: Scalar, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    let rows = shape[0];
    let cols: usize = shape[1..].iter().product::<usize>().max(1);
    let (n, len) = (rows.min(cols), rows.max(cols));
    let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(n);
    while vecs.len() < n {
        let mut v: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
        for u in &vecs {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            vecs.push(v);
        }
    }
    Tensor::from_fn(shape, |i| {
        let (r, c) = (i / cols, i % cols);
        T::of(if rows <= cols { vecs[r][c] } else { vecs[c][r] })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orthogonal_rows_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w: Tensor<f64> = InitScheme::Orthogonal.sample(&[5, 20], &mut rng);
        for a in 0..5 {
            for b in 0..5 {
                let d: f64 = (0..20).map(|k| w.data()[a * 20 + k] * w.data()[b * 20 + k]).sum();
                assert!((d - if a == b { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forget_bias_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b: Tensor<f32> = InitScheme::UnitForgetBias { hidden: 2 }.sample(&[8], &mut rng);
        assert_eq!(b.data(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }
}
