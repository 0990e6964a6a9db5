//! Closed-form element-transfer model of the two-level memory hierarchy
//! (main store vs tile-local working storage), the padding-waste analysis of
//! granularity-padded scans, and an analytic FLOP model.
//!
//! The engines count the same quantities as they run (see
//! [`TrafficCounts`]); [`measure_traffic`] runs an engine and packages its
//! counts so the two can be compared exactly.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::{cub1d_forward, naive_scan2d, padded_len, tiled_scan2d_infer, Executor, TrafficCounts};
use crate::error::{Error, Result};
use crate::problem::Problem;
use crate::tensor::TileConfig;

/// Scan strategies with a traffic model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Row-major flattened 1D scan.
    Cub1d,
    /// 2D scan materializing every per-state horizontal grid.
    Naive2d,
    /// Fused tiled 2D scan with carry prefixes.
    Tiled2d,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Cub1d, Variant::Naive2d, Variant::Tiled2d];

    pub const fn name(self) -> &'static str {
        match self {
            Variant::Cub1d => "cub1d",
            Variant::Naive2d => "naive2d",
            Variant::Tiled2d => "tiled2d",
        }
    }

    /// Number of scan directions per state.
    pub const fn directions(self) -> u64 {
        match self {
            Variant::Cub1d => 1,
            Variant::Naive2d | Variant::Tiled2d => 2,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| {
            Error::InvalidArgument(format!("unknown variant {s:?} (expected cub1d, naive2d or tiled2d)"))
        })
    }
}

/// Element transfers and work for one forward pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemReport {
    /// Reads of `x`, `zRaw`, `B` and `C` from the main store.
    pub payload_reads: u64,
    /// Writes of `y` to the main store.
    pub payload_writes: u64,
    /// Materialized per-state grids, written and read back.
    pub intermediate_traffic: u64,
    /// `P^h` / `P^v` exchange between tiles.
    pub carry_traffic: u64,
    /// Identity elements processed to fill work units.
    pub padding_elements: u64,
    pub flops: u64,
}

impl MemReport {
    /// Every main-store transfer.
    pub fn total_traffic(&self) -> u64 {
        self.payload_reads + self.payload_writes + self.intermediate_traffic + self.carry_traffic
    }

    /// Packages engine counts, attaching the FLOP model.
    pub fn from_counts(counts: TrafficCounts, flops: u64) -> Self {
        Self {
            payload_reads: counts.payload_reads,
            payload_writes: counts.payload_writes,
            intermediate_traffic: counts.intermediate,
            carry_traffic: counts.carry,
            padding_elements: counts.padding,
            flops,
        }
    }
}

/// Distinct per-position input streams: `x`, `zRaw`, and `B^d`, `C^d` for each
/// state.
pub const fn payload_streams(state_dim: usize) -> u64 {
    2 + 2 * state_dim as u64
}

fn check_dims(height: usize, width: usize, state_dim: usize) -> Result<()> {
    if height == 0 || width == 0 || state_dim == 0 {
        return Err(Error::InvalidArgument(format!(
            "dimensions must be positive, got {height}x{width} with N = {state_dim}"
        )));
    }
    Ok(())
}

fn tiling(variant: Variant, height: usize, width: usize, tile: Option<usize>) -> Result<Option<TileConfig>> {
    match (variant, tile) {
        (Variant::Tiled2d, None) => Err(Error::InvalidArgument("tiled2d needs a tile size".into())),
        (Variant::Tiled2d, Some(t)) => TileConfig::new(t, height, width).map(Some),
        _ => Ok(None),
    }
}

/// Closed-form transfer counts for one forward pass over an `H×W` grid with
/// `N` states.
///
/// * every variant reads `(2 + 2N)·L` payload elements and writes `L`;
/// * `naive2d` writes and reads back each per-state horizontal grid
///   (`2·N·L`), and its column pass re-reads `zRaw` and `x` (`2·L`);
/// * `tiled2d` reads and writes one carry column and one carry row per tile
///   and state (`4·T·N·K_H·K_W`).
///
/// Padding counts the identity elements each variant's work units carry: one
/// segment per flattened chunk (`cub1d`), per row and per column (`naive2d`),
/// or per tile-sized flat buffer in each direction (`tiled2d`). `tile` is
/// only used by `tiled2d`.
pub fn simulate_traffic(
    variant: Variant,
    height: usize,
    width: usize,
    state_dim: usize,
    tile: Option<usize>,
) -> Result<MemReport> {
    check_dims(height, width, state_dim)?;
    let tiles = tiling(variant, height, width, tile)?;
    let g = crate::engine::WORK_GRANULARITY;
    let (h, w, n) = (height as u64, width as u64, state_dim as u64);
    let l = h * w;
    let pad = |len: u64| padded_len(len as usize, g) as u64 - len;
    let mut r = MemReport {
        payload_reads: payload_streams(state_dim) * l,
        payload_writes: l,
        flops: count_flops(variant, height, width, state_dim)?,
        ..MemReport::default()
    };
    match variant {
        Variant::Cub1d => r.padding_elements = n * pad(l),
        Variant::Naive2d => {
            r.payload_reads += 2 * l;
            r.intermediate_traffic = 2 * n * l;
            r.padding_elements = n * (h * pad(w) + w * pad(h));
        }
        Variant::Tiled2d => {
            let tc = tiles.expect("tiling checked");
            let t = tc.tile() as u64;
            let k = tc.tile_count() as u64;
            r.carry_traffic = 2 * n * k * 2 * t;
            r.padding_elements = n * (2 * k * padded_len((t * t) as usize, g) as u64 - 2 * l);
        }
    }
    Ok(r)
}

/// Runs `variant` on a seeded random instance and reports the transfers its
/// counting hooks observed.
pub fn measure_traffic(
    variant: Variant,
    height: usize,
    width: usize,
    state_dim: usize,
    tile: Option<usize>,
    seed: u64,
) -> Result<MemReport> {
    check_dims(height, width, state_dim)?;
    let tiles = tiling(variant, height, width, tile)?;
    let p = Problem::<f64>::random(height, width, state_dim, seed)?;
    let counts = match variant {
        Variant::Cub1d => cub1d_forward(&p.x, &p.inputs, &p.params)?.1,
        Variant::Naive2d => naive_scan2d(&p.x, &p.inputs, &p.params)?.1,
        Variant::Tiled2d => {
            let tc = tiles.expect("tiling checked");
            tiled_scan2d_infer(&p.x, &p.inputs, &p.params, tc, &Executor::sequential())?.1
        }
    };
    Ok(MemReport::from_counts(
        counts,
        count_flops(variant, height, width, state_dim)?,
    ))
}

/// How a scan fills fixed-size work units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum PaddingScheme {
    /// Every row, then every column, is its own padded work unit.
    FullRowScan,
    /// All rows (or columns) share one flat buffer, padded once.
    Segmented,
}

impl FromStr for PaddingScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fullRowScan" | "full-row" => Ok(PaddingScheme::FullRowScan),
            "segmented" => Ok(PaddingScheme::Segmented),
            _ => Err(Error::InvalidArgument(format!("unknown padding scheme {s:?}"))),
        }
    }
}

/// Padding of a row pass plus a column pass over an `H×W` grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaddingWaste {
    /// Pads per row (amortized over the rows for the segmented scheme).
    pub pad_per_row: f64,
    /// Pads per column, likewise.
    pub pad_per_column: f64,
    /// Pad elements over all elements processed.
    pub waste_fraction: f64,
}

/// Padding incurred when rows and columns are scanned in work units of
/// `granularity` elements.
pub fn padding_waste(height: usize, width: usize, granularity: usize, scheme: PaddingScheme) -> Result<PaddingWaste> {
    if height == 0 || width == 0 || granularity == 0 {
        return Err(Error::InvalidArgument(format!(
            "dimensions must be positive, got {height}x{width} with granularity {granularity}"
        )));
    }
    let (h, w) = (height as f64, width as f64);
    Ok(match scheme {
        PaddingScheme::FullRowScan => {
            let pr = (padded_len(width, granularity) - width) as f64;
            let pc = (padded_len(height, granularity) - height) as f64;
            let pads = h * pr + w * pc;
            PaddingWaste {
                pad_per_row: pr,
                pad_per_column: pc,
                waste_fraction: pads / (2.0 * h * w + pads),
            }
        }
        PaddingScheme::Segmented => {
            let l = height * width;
            let pads = (padded_len(l, granularity) - l) as f64;
            PaddingWaste {
                pad_per_row: pads / h,
                pad_per_column: pads / w,
                waste_fraction: pads / (l as f64 + pads),
            }
        }
    })
}

/// Discretization per position: add bias, `exp`, `1 +`, `log`.
pub const FLOPS_DISCRETIZE: u64 = 4;
/// Skip term per position: multiply and add.
pub const FLOPS_SKIP: u64 = 2;
/// One recurrence update `a·h + b`, per state and direction.
pub const FLOPS_SCAN: u64 = 2;
/// Readout `y += C·h`, per state.
pub const FLOPS_OUTPUT: u64 = 2;

/// Analytic FLOP count for one forward pass: per position,
/// `FLOPS_DISCRETIZE + FLOPS_SKIP` plus, per state, `FLOPS_SCAN` for each scan
/// direction and `FLOPS_OUTPUT`.
pub fn count_flops(variant: Variant, height: usize, width: usize, state_dim: usize) -> Result<u64> {
    check_dims(height, width, state_dim)?;
    let per_state = FLOPS_SCAN * variant.directions() + FLOPS_OUTPUT;
    let per_position = FLOPS_DISCRETIZE + FLOPS_SKIP + per_state * state_dim as u64;
    Ok(per_position * (height * width) as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn naive_intermediate_traffic_at_56() {
        let r = simulate_traffic(Variant::Naive2d, 56, 56, 16, None).unwrap();
        assert_eq!(r.intermediate_traffic, 100_352);
        assert_eq!(r.carry_traffic, 0);
        let one = simulate_traffic(Variant::Naive2d, 56, 56, 1, None).unwrap();
        assert_eq!(one.intermediate_traffic, 2 * 56 * 56);
    }

    #[test]
    fn tiled_carry_traffic_at_56() {
        let r = simulate_traffic(Variant::Tiled2d, 56, 56, 16, Some(8)).unwrap();
        assert_eq!(r.carry_traffic, 25_088);
        assert_eq!(r.intermediate_traffic, 0);
    }

    #[test]
    fn tile_is_required_only_for_tiled() {
        assert!(simulate_traffic(Variant::Tiled2d, 4, 4, 2, None).is_err());
        assert!(simulate_traffic(Variant::Cub1d, 4, 4, 2, None).is_ok());
        assert!(simulate_traffic(Variant::Naive2d, 4, 0, 2, None).is_err());
        assert!(simulate_traffic(Variant::Naive2d, 4, 4, 0, None).is_err());
    }

    #[test]
    fn engines_agree_with_closed_forms() {
        for (h, w, n, t) in [
            (1, 1, 1, 1),
            (5, 7, 3, 2),
            (33, 17, 2, 8),
            (56, 56, 4, 16),
            (9, 40, 2, 40),
        ] {
            for v in Variant::ALL {
                let tile = Some(t);
                let want = simulate_traffic(v, h, w, n, tile).unwrap();
                let got = measure_traffic(v, h, w, n, tile, 3).unwrap();
                assert_eq!(got, want, "{v} {h}x{w} N={n} T={t}");
            }
        }
    }

    #[test]
    fn padding_waste_at_14() {
        let full = padding_waste(14, 14, 32, PaddingScheme::FullRowScan).unwrap();
        assert_eq!(full.pad_per_row, 18.0);
        assert_eq!(full.pad_per_column, 18.0);
        assert_eq!(full.waste_fraction, 0.5625);
        let seg = padding_waste(14, 14, 32, PaddingScheme::Segmented).unwrap();
        assert_eq!(seg.pad_per_row, 2.0);
        assert_eq!(seg.waste_fraction, 28.0 / 224.0);
        let aligned = padding_waste(32, 32, 32, PaddingScheme::FullRowScan).unwrap();
        assert_eq!(aligned.pad_per_row, 0.0);
        assert_eq!(aligned.waste_fraction, 0.0);
    }

    #[test]
    fn flop_model_at_14() {
        let one = count_flops(Variant::Cub1d, 14, 14, 16).unwrap();
        let two = count_flops(Variant::Tiled2d, 14, 14, 16).unwrap();
        assert_eq!(one, 196 * (6 + 4 * 16));
        assert_eq!(two, 196 * (6 + 6 * 16));
        assert_eq!(two, count_flops(Variant::Naive2d, 14, 14, 16).unwrap());
    }

    #[test]
    fn report_json_keys() {
        let r = simulate_traffic(Variant::Cub1d, 2, 3, 1, None).unwrap();
        let v = serde_json::to_value(r).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(
            keys,
            [
                "carry_traffic",
                "flops",
                "intermediate_traffic",
                "padding_elements",
                "payload_reads",
                "payload_writes"
            ]
        );
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("tiled".parse::<Variant>().is_err());
    }
}
