use rand::Rng;

use crate::tensor::Real;

/// Dense affine map `out = W·in + b`, `W` stored row-major `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Linear<T> {
    /// Weights and bias uniform in `±1/√in_dim`.
    pub fn random(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let mut draw = |k: usize| -> Vec<T> { (0..k).map(|_| T::of(rng.random_range(-bound..=bound))).collect() };
        let weight = draw(in_dim * out_dim);
        let bias = draw(out_dim);
        Self {
            in_dim,
            out_dim,
            weight,
            bias,
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
        }
    }

    pub fn apply(&self, input: &[T], out: &mut [T]) {
        debug_assert_eq!(input.len(), self.in_dim);
        debug_assert_eq!(out.len(), self.out_dim);
        for ((o, row), &b) in out
            .iter_mut()
            .zip(self.weight.chunks_exact(self.in_dim))
            .zip(&self.bias)
        {
            *o = row.iter().zip(input).fold(b, |acc, (&w, &v)| acc + w * v);
        }
    }

    /// Applies the map at every position of a position-major buffer.
    pub fn apply_rows(&self, input: &[T], out: &mut [T]) {
        for (src, dst) in input.chunks_exact(self.in_dim).zip(out.chunks_exact_mut(self.out_dim)) {
            self.apply(src, dst);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn applies_affine_map() {
        let lin = Linear {
            in_dim: 2,
            out_dim: 3,
            weight: vec![1.0, 2.0, 0.0, -1.0, 0.5, 0.5],
            bias: vec![0.0, 1.0, -1.0],
        };
        let mut out = [0.0; 3];
        lin.apply(&[3.0, 4.0], &mut out);
        assert_eq!(out, [11.0, -3.0, 2.5]);
    }

    #[test]
    fn random_init_is_bounded_and_seeded() {
        let a = Linear::<f64>::random(16, 4, &mut ChaCha8Rng::seed_from_u64(5));
        let b = Linear::<f64>::random(16, 4, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        assert!(a.weight.iter().chain(&a.bias).all(|v| v.abs() <= 0.25));
    }
}
