//! The `scan2d` command line. Every subcommand writes line-delimited JSON
//! records to stdout (`--pretty` switches to aligned `key value` tables) and
//! exits with 0 on success, 1 when a check fails and 2 on usage or input
//! errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::bench::{run_bench, run_variant, BenchSpec, ScanVariant};
use crate::engine::{tiled_scan2d_backward, tiled_scan2d_forward, Executor};
use crate::error::{Error, Result};
use crate::memsim::{measure_traffic, padding_waste, simulate_traffic, PaddingScheme, Variant};
use crate::problem::Problem;
use crate::reference::{impulse_coefficient, ScanKind};
use crate::tensor::{load, save, AnyGrid, DType, Element, FeatureGrid, TileConfig};
use crate::verify::{compare_gradients, finite_difference_gradients, oracle_cases, GradTolerance};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "scan2d",
    version,
    about = "Two-dimensional selective scan: forward passes, checks, benchmarks and traffic models"
)]
struct Cli {
    /// Worker threads handed to the engines.
    #[arg(long, global = true, env = "SCAN2D_THREADS", default_value_t = 1)]
    threads: usize,

    /// Human-readable tables instead of JSON lines.
    #[arg(long, global = true)]
    pretty: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Forward pass over a T2DM tensor.
    Scan(ScanArgs),
    /// Oracle-equivalence and tile-invariance sweep.
    Verify(VerifyArgs),
    /// Backward pass against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Time one variant.
    Bench(BenchArgs),
    /// Closed-form traffic report, checked against the engine's counters.
    Memsim(MemsimArgs),
    /// Padding waste of granularity-padded row and column scans.
    Padding(PaddingArgs),
    /// Impulse coefficient between vertical neighbours, 1D vs 2D.
    Discrepancy(DiscrepancyArgs),
}

#[derive(Debug, Args)]
struct ScanArgs {
    /// Single-channel input tensor `x`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "tiled2d")]
    variant: ScanVariant,
    #[arg(long, default_value_t = 32)]
    tile: usize,
    /// State dimension for generated parameters.
    #[arg(long)]
    state_dim: Option<usize>,
    /// Parameter bundle (zRaw, B, C, constants).
    #[arg(long, conflicts_with = "seed")]
    params: Option<PathBuf>,
    /// Seed for generated parameters.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Grid sizes, e.g. `8x8,13x5`.
    #[arg(long, value_delimiter = ',', value_parser = parse_size, default_value = "1x1,8x8,13x5,33x20")]
    sizes: Vec<(usize, usize)>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    #[arg(long, default_value = "f64")]
    dtype: DType,
    #[arg(long, default_value_t = 4)]
    state_dim: usize,
    /// Tile sizes; the largest grid side is always added.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,8")]
    tiles: Vec<usize>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 5)]
    height: usize,
    #[arg(long, default_value_t = 4)]
    width: usize,
    #[arg(long, default_value_t = 3)]
    state_dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    tile: usize,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-6)]
    step: f64,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, default_value = "tiled2d")]
    variant: ScanVariant,
    #[arg(long, default_value_t = 200)]
    height: usize,
    #[arg(long, default_value_t = 200)]
    width: usize,
    #[arg(long, default_value_t = 16)]
    state_dim: usize,
    #[arg(long, default_value_t = 40)]
    tile: usize,
    #[arg(long, default_value_t = 10)]
    reps: u32,
    #[arg(long, default_value_t = 2)]
    warmup: u32,
    #[arg(long, default_value = "f32")]
    dtype: DType,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct MemsimArgs {
    #[arg(long)]
    variant: Variant,
    #[arg(long)]
    height: usize,
    #[arg(long)]
    width: usize,
    #[arg(long)]
    state_dim: usize,
    /// Required for tiled2d.
    #[arg(long)]
    tile: Option<usize>,
}

#[derive(Debug, Args)]
struct PaddingArgs {
    #[arg(long)]
    height: usize,
    #[arg(long)]
    width: usize,
    #[arg(long, default_value_t = crate::engine::WORK_GRANULARITY)]
    granularity: usize,
}

#[derive(Debug, Args)]
struct DiscrepancyArgs {
    #[arg(long)]
    width: usize,
    /// Constant `Ā`.
    #[arg(long)]
    alpha: f64,
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s.split_once('x').ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let dim = |v: &str| v.parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((dim(h)?, dim(w)?))
}

enum Outcome {
    Pass,
    /// First failing record, already emitted.
    Fail(String),
}

struct Emitter<'a> {
    out: &'a mut dyn Write,
    pretty: bool,
}

impl Emitter<'_> {
    fn emit(&mut self, record: &impl Serialize) -> Result<()> {
        let value = serde_json::to_value(record).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let text = if self.pretty {
            let mut rows = Vec::new();
            flatten("", &value, &mut rows);
            let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
            let mut s: String = rows.iter().map(|(k, v)| format!("{k:<width$}  {v}\n")).collect();
            s.push('\n');
            s
        } else {
            format!("{value}\n")
        };
        self.out
            .write_all(text.as_bytes())
            .map_err(|source| Error::Io { offset: 0, source })
    }
}

fn flatten(prefix: &str, v: &Value, rows: &mut Vec<(String, String)>) {
    match v {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, rows);
            }
        }
        Value::String(s) => rows.push((prefix.to_string(), s.clone())),
        other => rows.push((prefix.to_string(), other.to_string())),
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code. Records go to `out`, diagnostics to `err`.
pub fn run_cli<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    return EXIT_OK;
                }
                _ => EXIT_USAGE,
            };
            let _ = write!(err, "{}", e.render());
            return code;
        }
    };
    let exec = match Executor::with_threads(cli.threads) {
        Ok(exec) => exec,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_USAGE;
        }
    };
    let mut em = Emitter {
        out,
        pretty: cli.pretty,
    };
    let result = match &cli.command {
        Command::Scan(a) => scan(a, &exec, &mut em),
        Command::Verify(a) => verify(a, &exec, &mut em),
        Command::Gradcheck(a) => gradcheck(a, &exec, &mut em),
        Command::Bench(a) => bench(a, &exec, &mut em),
        Command::Memsim(a) => memsim(a, &mut em),
        Command::Padding(a) => padding(a, &mut em),
        Command::Discrepancy(a) => discrepancy(a, &mut em),
    };
    match result {
        Ok(Outcome::Pass) => EXIT_OK,
        Ok(Outcome::Fail(first)) => {
            let _ = writeln!(err, "check failed: {first}");
            EXIT_FAILED
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_USAGE
        }
    }
}

fn scan(a: &ScanArgs, exec: &Executor, em: &mut Emitter) -> Result<Outcome> {
    fn typed<T: Element>(x: FeatureGrid<T>, a: &ScanArgs, exec: &Executor, em: &mut Emitter) -> Result<Outcome> {
        if x.channels() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "x must have one channel, got {}",
                x.channels()
            )));
        }
        let (h, w) = (x.height(), x.width());
        let problem = match (&a.params, a.seed) {
            (Some(path), _) => {
                let file = std::fs::File::open(path).map_err(|source| Error::Io { offset: 0, source })?;
                let p = Problem::read_params(x, std::io::BufReader::new(file))?;
                if a.state_dim.is_some_and(|n| n != p.state_dim()) {
                    return Err(Error::ShapeMismatch(format!(
                        "--state-dim {} but the parameter bundle has N = {}",
                        a.state_dim.unwrap_or_default(),
                        p.state_dim()
                    )));
                }
                p
            }
            (None, Some(seed)) => {
                let n = a
                    .state_dim
                    .ok_or_else(|| Error::InvalidArgument("--seed needs --state-dim".into()))?;
                let mut p = Problem::<f64>::random(h, w, n, seed)?.cast::<T>();
                p.x = x;
                p
            }
            (None, None) => return Err(Error::InvalidArgument("one of --params or --seed is required".into())),
        };
        let y = run_variant(a.variant, &problem, a.tile, exec)?;
        let bytes = save(&y, &a.output)?;
        em.emit(&json!({
            "variant": a.variant,
            "height": h,
            "width": w,
            "state_dim": problem.state_dim(),
            "tile": a.variant.uses_tile().then_some(a.tile),
            "dtype": T::DTYPE,
            "output": a.output,
            "bytes": bytes,
        }))?;
        Ok(Outcome::Pass)
    }
    match load(&a.input)? {
        AnyGrid::F32(x) => typed(x, a, exec, em),
        AnyGrid::F64(x) => typed(x, a, exec, em),
    }
}

fn verify(a: &VerifyArgs, exec: &Executor, em: &mut Emitter) -> Result<Outcome> {
    fn typed<T: Element>(a: &VerifyArgs, exec: &Executor, em: &mut Emitter) -> Result<Outcome> {
        let mut first_failure = None;
        let (mut cases, mut failures, mut worst) = (0usize, 0usize, 0.0f64);
        for &(h, w) in &a.sizes {
            let mut tiles = a.tiles.clone();
            tiles.push(h.max(w));
            tiles.sort_unstable();
            tiles.dedup();
            for &seed in &a.seeds {
                let problem = Problem::<f64>::random(h, w, a.state_dim, seed)?.cast::<T>();
                for case in oracle_cases(&problem, &tiles, seed, exec)? {
                    em.emit(&case)?;
                    cases += 1;
                    worst = worst.max(case.max_rel_err);
                    if !case.pass {
                        failures += 1;
                        first_failure.get_or_insert_with(|| serde_json::to_string(&case).unwrap_or_default());
                    }
                }
            }
        }
        em.emit(&json!({
            "suite": "verify",
            "dtype": T::DTYPE,
            "cases": cases,
            "failures": failures,
            "max_rel_err": worst,
            "pass": failures == 0,
        }))?;
        Ok(first_failure.map_or(Outcome::Pass, Outcome::Fail))
    }
    match a.dtype {
        DType::F32 => typed::<f32>(a, exec, em),
        DType::F64 => typed::<f64>(a, exec, em),
    }
}

fn gradcheck(a: &GradcheckArgs, exec: &Executor, em: &mut Emitter) -> Result<Outcome> {
    let p = Problem::<f64>::random(a.height, a.width, a.state_dim, a.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed.wrapping_add(1));
    let dy = FeatureGrid::scalar(
        a.height,
        a.width,
        (0..a.height * a.width).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    let tiles = TileConfig::new(a.tile, a.height, a.width)?;
    let fwd = tiled_scan2d_forward(&p.x, &p.inputs, &p.params, tiles, exec)?;
    let analytic = tiled_scan2d_backward(&fwd.saved, &dy)?;
    let numeric = finite_difference_gradients(&p, &dy, a.step)?;
    let mut first_failure = None;
    for check in compare_gradients(&analytic, &numeric, GradTolerance::default()) {
        em.emit(&check)?;
        if !check.pass {
            first_failure.get_or_insert_with(|| serde_json::to_string(&check).unwrap_or_default());
        }
    }
    Ok(first_failure.map_or(Outcome::Pass, Outcome::Fail))
}

fn bench(a: &BenchArgs, exec: &Executor, em: &mut Emitter) -> Result<Outcome> {
    let spec = BenchSpec {
        variant: a.variant,
        height: a.height,
        width: a.width,
        state_dim: a.state_dim,
        tile: a.tile,
        seed: a.seed,
    };
    let result = match a.dtype {
        DType::F32 => run_bench::<f32>(spec, a.reps, a.warmup, exec)?,
        DType::F64 => run_bench::<f64>(spec, a.reps, a.warmup, exec)?,
    };
    em.emit(&result)?;
    Ok(Outcome::Pass)
}

fn memsim(a: &MemsimArgs, em: &mut Emitter) -> Result<Outcome> {
    let predicted = simulate_traffic(a.variant, a.height, a.width, a.state_dim, a.tile)?;
    let measured = measure_traffic(a.variant, a.height, a.width, a.state_dim, a.tile, 0)?;
    em.emit(&predicted)?;
    if measured == predicted {
        Ok(Outcome::Pass)
    } else {
        Ok(Outcome::Fail(format!(
            "engine counters disagree with the closed form: measured {}",
            serde_json::to_string(&measured).unwrap_or_default()
        )))
    }
}

fn padding(a: &PaddingArgs, em: &mut Emitter) -> Result<Outcome> {
    for scheme in [PaddingScheme::FullRowScan, PaddingScheme::Segmented] {
        let p = padding_waste(a.height, a.width, a.granularity, scheme)?;
        em.emit(&json!({
            "scheme": scheme,
            "height": a.height,
            "width": a.width,
            "granularity": a.granularity,
            "pad_per_row": p.pad_per_row,
            "pad_per_column": p.pad_per_column,
            "waste_fraction": p.waste_fraction,
        }))?;
    }
    Ok(Outcome::Pass)
}

fn discrepancy(a: &DiscrepancyArgs, em: &mut Emitter) -> Result<Outcome> {
    let (source, target) = ((0, 0), (1, 0));
    let two = impulse_coefficient(ScanKind::Grid2d, source, target, a.alpha, a.width)?;
    let one = impulse_coefficient(ScanKind::RowMajor1d, source, target, a.alpha, a.width)?;
    em.emit(&json!({
        "width": a.width,
        "alpha": a.alpha,
        "source": source,
        "target": target,
        "coefficient_2d": two,
        "coefficient_1d": one,
    }))?;
    Ok(Outcome::Pass)
}
