use rand::Rng;

use crate::error::{shape_mismatch, Error, Result};
use crate::model::linear::Linear;
use crate::tensor::{FeatureGrid, Real};

/// Two-map attention pooling: `D → K` followed by `tanh`, then `K → 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights<T> {
    pub first: Linear<T>,
    pub second: Linear<T>,
}

impl<T: Real> AttentionWeights<T> {
    pub fn random(dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            first: Linear::random(dim, hidden, rng),
            second: Linear::random(hidden, 1, rng),
        }
    }
}

/// Slide-level output of attention pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct SlideFeature<T> {
    /// `D`-vector aggregate.
    pub aggregate: Vec<T>,
    /// `H × W` attention weights; zero outside tissue.
    pub attention: FeatureGrid<T>,
}

/// Scores every tissue position, softmaxes over tissue only, and returns the
/// attention-weighted sum of features.
pub fn attention_aggregate<T: Real>(
    features: &FeatureGrid<T>,
    tissue: &[bool],
    weights: &AttentionWeights<T>,
) -> Result<SlideFeature<T>> {
    let (h, w, d) = features.shape();
    if tissue.len() != h * w {
        return Err(shape_mismatch(format!(
            "mask has {} entries, grid has {} positions",
            tissue.len(),
            h * w
        )));
    }
    if weights.first.in_dim != d || weights.second.in_dim != weights.first.out_dim || weights.second.out_dim != 1 {
        return Err(shape_mismatch(format!(
            "attention maps {}→{}→{} do not fit {d}-channel features",
            weights.first.in_dim, weights.first.out_dim, weights.second.out_dim
        )));
    }
    if !tissue.iter().any(|&t| t) {
        return Err(Error::NoTissue);
    }

    let mut hidden = vec![T::zero(); weights.first.out_dim];
    let mut score = [T::zero()];
    let mut scores = vec![T::zero(); h * w];
    for (p, f) in features.data().chunks_exact(d).enumerate() {
        if tissue[p] {
            weights.first.apply(f, &mut hidden);
            for v in &mut hidden {
                *v = v.tanh();
            }
            weights.second.apply(&hidden, &mut score);
            scores[p] = score[0];
        }
    }
    let max = scores
        .iter()
        .zip(tissue)
        .filter(|(_, &t)| t)
        .map(|(&s, _)| s)
        .fold(None, |m: Option<T>, s| Some(m.map_or(s, |m| m.max(s))))
        .expect("at least one tissue position");
    let mut attn = vec![T::zero(); h * w];
    let mut total = T::zero();
    for ((a, &s), &t) in attn.iter_mut().zip(&scores).zip(tissue) {
        if t {
            *a = (s - max).exp();
            total = total + *a;
        }
    }
    let mut aggregate = vec![T::zero(); d];
    for (a, f) in attn.iter_mut().zip(features.data().chunks_exact(d)) {
        *a = *a / total;
        if *a != T::zero() {
            for (g, &v) in aggregate.iter_mut().zip(f) {
                *g = *g + *a * v;
            }
        }
    }
    Ok(SlideFeature {
        aggregate,
        attention: FeatureGrid::scalar(h, w, attn)?,
    })
}
