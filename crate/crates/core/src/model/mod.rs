//! Forward-only multiple-instance aggregator around the 2D scan: padding-token
//! embedding, `U` scan blocks and attention pooling. Weights are seeded
//! random; nothing is trained.

mod attention;
mod block;
mod linear;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use attention::{attention_aggregate, AttentionWeights, SlideFeature};
pub use block::{block_forward, BlockWeights};
pub use linear::Linear;

use crate::engine::Executor;
use crate::error::{shape_mismatch, Error, Result};
use crate::tensor::{FeatureGrid, MaskedGrid, Real, TileConfig};

/// Model sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// Patch feature width `D`.
    pub dim: usize,
    /// Scan channels per block `E`.
    pub expand: usize,
    /// States per scan channel `N`.
    pub state_dim: usize,
    /// Attention hidden width `K`.
    pub attn_hidden: usize,
    /// Number of blocks `U`.
    pub blocks: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            expand: 128,
            state_dim: 16,
            attn_hidden: 64,
            blocks: 1,
        }
    }
}

impl ModelConfig {
    /// Width of the time-step bottleneck between the selective projection
    /// and the per-channel `zRaw`.
    pub fn dt_rank(&self) -> usize {
        self.expand.div_ceil(16)
    }

    fn validate(&self) -> Result<()> {
        if [self.dim, self.expand, self.state_dim, self.attn_hidden, self.blocks].contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "model sizes must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// All weights of the aggregator.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub blocks: Vec<BlockWeights<T>>,
    pub attention: AttentionWeights<T>,
}

impl<T: Real> Model<T> {
    pub fn random(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = (0..config.blocks)
            .map(|_| BlockWeights::random(&config, &mut rng))
            .collect();
        let attention = AttentionWeights::random(config.dim, config.attn_hidden, &mut rng);
        Ok(Self {
            config,
            blocks,
            attention,
        })
    }

    /// Runs the blocks over an already embedded grid.
    pub fn encode(&self, grid: &FeatureGrid<T>, tile: usize, exec: &Executor) -> Result<FeatureGrid<T>> {
        let tiles = TileConfig::new(tile, grid.height(), grid.width())?;
        let mut x = grid.clone();
        for w in &self.blocks {
            x = block_forward(&x, w, tiles, exec)?;
        }
        Ok(x)
    }

    /// Embedding, blocks and pooling.
    pub fn forward(&self, patches: &MaskedGrid<T>, tile: usize, exec: &Executor) -> Result<SlideFeature<T>> {
        if patches.patches().channels() != self.config.dim {
            return Err(shape_mismatch(format!(
                "patches have {} channels, model expects {}",
                patches.patches().channels(),
                self.config.dim
            )));
        }
        let dense = embed_with_padding(patches)?;
        let encoded = self.encode(&dense, tile, exec)?;
        attention_aggregate(&encoded, patches.tissue(), &self.attention)
    }
}

/// Dense grid with every non-tissue position replaced by the padding token.
pub fn embed_with_padding<T: Real>(patches: &MaskedGrid<T>) -> Result<FeatureGrid<T>> {
    let grid = patches.patches();
    let (h, w, d) = grid.shape();
    let token = patches.padding_token();
    let mut data = grid.data().to_vec();
    for (px, &tissue) in data.chunks_exact_mut(d).zip(patches.tissue()) {
        if !tissue {
            px.copy_from_slice(token);
        }
    }
    FeatureGrid::new(h, w, d, data)
}
