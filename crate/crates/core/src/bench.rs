//! Wall-clock throughput of each scan variant on seeded random instances.
//!
//! Instances draw `A` from `(−1, 0)` and `x`, `zRaw`, `B`, `C` from a unit
//! normal (see [`Problem::random`]), so `Ā ∈ (0, 1)` and long loops stay
//! finite. Warmup repetitions are run first and excluded from every figure.

use std::fmt;
use std::hint::black_box;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::engine::{cub1d_forward, naive_scan2d, tiled_scan2d_infer, Executor};
use crate::error::{Error, Result};
use crate::memsim::{simulate_traffic, MemReport, Variant};
use crate::problem::Problem;
use crate::reference::{reference_forward, reference_forward_1d};
use crate::tensor::{DType, Element, FeatureGrid, TileConfig};

/// Every forward implementation that can be run and timed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanVariant {
    /// Sequential 1D reference over the row-major flattened grid.
    Seq1d,
    /// Sequential 2D reference.
    Seq2d,
    /// Chunked 1D engine.
    Cub1d,
    /// Materializing 2D engine.
    Naive2d,
    /// Tiled 2D engine.
    Tiled2d,
}

impl ScanVariant {
    pub const ALL: [ScanVariant; 5] = [
        ScanVariant::Seq1d,
        ScanVariant::Seq2d,
        ScanVariant::Cub1d,
        ScanVariant::Naive2d,
        ScanVariant::Tiled2d,
    ];

    pub const fn name(self) -> &'static str {
        match self {
            ScanVariant::Seq1d => "seq1d",
            ScanVariant::Seq2d => "seq2d",
            ScanVariant::Cub1d => "cub1d",
            ScanVariant::Naive2d => "naive2d",
            ScanVariant::Tiled2d => "tiled2d",
        }
    }

    /// Traffic model the variant is reported under. The sequential
    /// references share the access pattern of the corresponding engine
    /// baseline: one pass over the flattened grid, or a materialized
    /// horizontal state grid per state.
    pub const fn traffic_model(self) -> Variant {
        match self {
            ScanVariant::Seq1d | ScanVariant::Cub1d => Variant::Cub1d,
            ScanVariant::Seq2d | ScanVariant::Naive2d => Variant::Naive2d,
            ScanVariant::Tiled2d => Variant::Tiled2d,
        }
    }

    pub const fn uses_tile(self) -> bool {
        matches!(self, ScanVariant::Tiled2d)
    }
}

impl fmt::Display for ScanVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScanVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScanVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant {s:?}")))
    }
}

/// Runs one forward pass of `variant`.
pub fn run_variant<T: Element>(
    variant: ScanVariant,
    problem: &Problem<T>,
    tile: usize,
    exec: &Executor,
) -> Result<FeatureGrid<T>> {
    let (x, inp, p) = (&problem.x, &problem.inputs, &problem.params);
    Ok(match variant {
        ScanVariant::Seq1d => reference_forward_1d(x, inp, p)?,
        ScanVariant::Seq2d => reference_forward(x, inp, p)?.y,
        ScanVariant::Cub1d => cub1d_forward(x, inp, p)?.0,
        ScanVariant::Naive2d => naive_scan2d(x, inp, p)?.0,
        ScanVariant::Tiled2d => {
            let tc = TileConfig::new(tile, x.height(), x.width())?;
            tiled_scan2d_infer(x, inp, p, tc, exec)?.0
        }
    })
}

/// Timing and model figures for one variant and size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchResult {
    pub variant: ScanVariant,
    pub height: usize,
    pub width: usize,
    pub state_dim: usize,
    /// Tile size; `None` for variants that do not tile.
    pub tile: Option<usize>,
    pub dtype: DType,
    pub repetitions: u32,
    /// Seconds.
    pub wall_time_per_rep: f64,
    /// Feature maps per second.
    pub throughput: f64,
    pub flops: u64,
    pub mem_report: MemReport,
}

impl BenchResult {
    pub fn total_time(&self) -> f64 {
        self.wall_time_per_rep * f64::from(self.repetitions)
    }
}

/// What to benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchSpec {
    pub variant: ScanVariant,
    pub height: usize,
    pub width: usize,
    pub state_dim: usize,
    pub tile: usize,
    pub seed: u64,
}

impl BenchSpec {
    pub fn problem<T: Element>(&self) -> Result<Problem<T>> {
        Ok(Problem::<f64>::random(self.height, self.width, self.state_dim, self.seed)?.cast())
    }
}

/// Prepared benchmark: instance generated once, then timed in any number of
/// batches.
pub struct Bench<T> {
    spec: BenchSpec,
    problem: Problem<T>,
    elapsed: Duration,
    repetitions: u32,
}

impl<T: Element> Bench<T> {
    pub fn new(spec: BenchSpec) -> Result<Self> {
        if spec.variant.uses_tile() {
            TileConfig::new(spec.tile, spec.height, spec.width)?;
        }
        Ok(Self {
            problem: spec.problem()?,
            spec,
            elapsed: Duration::ZERO,
            repetitions: 0,
        })
    }

    /// Untimed repetitions.
    pub fn warmup(&mut self, reps: u32, exec: &Executor) -> Result<()> {
        for _ in 0..reps {
            black_box(run_variant(self.spec.variant, &self.problem, self.spec.tile, exec)?);
        }
        Ok(())
    }

    /// Timed repetitions, added to the running totals.
    pub fn measure(&mut self, reps: u32, exec: &Executor) -> Result<()> {
        for _ in 0..reps {
            let start = Instant::now();
            black_box(run_variant(self.spec.variant, &self.problem, self.spec.tile, exec)?);
            self.elapsed += start.elapsed();
            self.repetitions += 1;
        }
        Ok(())
    }

    /// Figures over every timed repetition so far.
    pub fn result(&self) -> Result<BenchResult> {
        if self.repetitions == 0 {
            return Err(Error::InvalidArgument("no timed repetitions".into()));
        }
        let s = &self.spec;
        let tile = s.variant.uses_tile().then_some(s.tile);
        let mem_report = simulate_traffic(s.variant.traffic_model(), s.height, s.width, s.state_dim, tile)?;
        let total = self.elapsed.as_secs_f64();
        let reps = f64::from(self.repetitions);
        Ok(BenchResult {
            variant: s.variant,
            height: s.height,
            width: s.width,
            state_dim: s.state_dim,
            tile,
            dtype: T::DTYPE,
            repetitions: self.repetitions,
            wall_time_per_rep: total / reps,
            throughput: reps / total,
            flops: mem_report.flops,
            mem_report,
        })
    }
}

/// Warmup, then `reps` timed repetitions.
pub fn run_bench<T: Element>(spec: BenchSpec, reps: u32, warmup: u32, exec: &Executor) -> Result<BenchResult> {
    if reps == 0 {
        return Err(Error::InvalidArgument("repetitions must be >= 1".into()));
    }
    let mut bench = Bench::<T>::new(spec)?;
    bench.warmup(warmup, exec)?;
    bench.measure(reps, exec)?;
    bench.result()
}
