//! The optimized scan engine: segmented block scans over tiles, the fused
//! tiled 2D forward pass with carry prefixes, its backward pass, and the two
//! baselines it is measured against (row-major 1D chunked scan and the naive
//! materializing 2D scan).
//!
//! Every variant counts its main-store element transfers as it runs; see
//! [`TrafficCounts`].

mod backward;
mod cub1d;
mod linop;
mod naive;
mod segmented;
mod tiled;

use std::ops::AddAssign;

pub use backward::{tiled_scan2d_backward, GradBundle};
pub use cub1d::{cub1d_forward, CUB1D_CHUNK};
pub use linop::{linop_compose, LinOp};
pub use naive::naive_scan2d;
pub use segmented::{padded_len, segmented_block_scan, segmented_block_scan_with, WORK_GRANULARITY};
pub use tiled::{tiled_scan2d_forward, tiled_scan2d_infer, CarryState, ForwardOutput, SavedForward};

use crate::error::{Error, Result};

/// Element transfers between the main store and tile-local working storage,
/// as observed by an engine run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrafficCounts {
    pub payload_reads: u64,
    pub payload_writes: u64,
    /// Per-state grids written to and read back from the main store.
    pub intermediate: u64,
    /// Carry-prefix exchange between neighbouring tiles.
    pub carry: u64,
    /// Identity elements processed by segmented scans.
    pub padding: u64,
}

impl AddAssign for TrafficCounts {
    fn add_assign(&mut self, o: Self) {
        self.payload_reads += o.payload_reads;
        self.payload_writes += o.payload_writes;
        self.intermediate += o.intermediate;
        self.carry += o.carry;
        self.padding += o.padding;
    }
}

/// Worker configuration for engine calls. Outputs do not depend on the worker
/// count.
pub struct Executor {
    threads: usize,
    pool: Option<rayon::ThreadPool>,
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor").field("threads", &self.threads).finish()
    }
}

impl Default for Executor {
    fn default() -> Self {
        Self::sequential()
    }
}

impl Executor {
    pub fn sequential() -> Self {
        Self { threads: 1, pool: None }
    }

    /// `threads == 1` runs on the calling thread; more spawns a private pool.
    pub fn with_threads(threads: usize) -> Result<Self> {
        match threads {
            0 => Err(Error::InvalidArgument("thread count must be >= 1".into())),
            1 => Ok(Self::sequential()),
            n => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .thread_name(|i| format!("scan2d-{i}"))
                    .build()
                    .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
                Ok(Self {
                    threads: n,
                    pool: Some(pool),
                })
            }
        }
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    pub(crate) fn pool(&self) -> Option<&rayon::ThreadPool> {
        self.pool.as_ref()
    }
}
