//! Fused tiled 2D forward pass.
//!
//! The grid is cut into `T × T` tiles (edge tiles padded with identity
//! elements). For each tile and each state dimension the tile is discretized
//! locally, scanned horizontally with the left neighbour's last-column states
//! as carries, scanned vertically with the top neighbour's last-row states as
//! carries, and reduced into the tile's output. Only `y` and the carry
//! prefixes reach the main store.

use rayon::prelude::*;

use crate::engine::segmented::{padded_len, scan_segments_interleaved, scan_segments_stepped, WORK_GRANULARITY};
use crate::engine::{Executor, TrafficCounts};
use crate::error::{shape_mismatch, Error, Result};
use crate::tensor::{FeatureGrid, Real, ScanParams, SelectiveInputs, TileConfig};

/// Carry prefixes emitted by every tile: `P^h` is the last column of the
/// tile's horizontal states, `P^v` the last row of its final states. Each is a
/// `T`-vector per tile and state dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct CarryState<T> {
    tiles: TileConfig,
    state_dim: usize,
    ph: Vec<T>,
    pv: Vec<T>,
}

impl<T: Real> CarryState<T> {
    pub(crate) fn zeros(tiles: TileConfig, state_dim: usize) -> Self {
        let n = tiles.tile_count() * state_dim * tiles.tile();
        Self {
            tiles,
            state_dim,
            ph: vec![T::zero(); n],
            pv: vec![T::zero(); n],
        }
    }

    fn offset(&self, kh: usize, kw: usize, d: usize) -> usize {
        ((kh * self.tiles.tiles_w() + kw) * self.state_dim + d) * self.tiles.tile()
    }

    pub fn tiles(&self) -> TileConfig {
        self.tiles
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// Last column of tile `(kh, kw)`'s horizontal states for state `d`.
    pub fn emitted_h(&self, kh: usize, kw: usize, d: usize) -> &[T] {
        let o = self.offset(kh, kw, d);
        &self.ph[o..o + self.tiles.tile()]
    }

    /// Last row of tile `(kh, kw)`'s final states for state `d`.
    pub fn emitted_v(&self, kh: usize, kw: usize, d: usize) -> &[T] {
        let o = self.offset(kh, kw, d);
        &self.pv[o..o + self.tiles.tile()]
    }

    /// Horizontal prefix seeding tile `(kh, kw)`; `None` on the left boundary,
    /// where the prefix is all zeros.
    pub fn incoming_h(&self, kh: usize, kw: usize, d: usize) -> Option<&[T]> {
        (kw > 0).then(|| self.emitted_h(kh, kw - 1, d))
    }

    /// Vertical prefix seeding tile `(kh, kw)`; `None` on the top boundary.
    pub fn incoming_v(&self, kh: usize, kw: usize, d: usize) -> Option<&[T]> {
        (kh > 0).then(|| self.emitted_v(kh - 1, kw, d))
    }

    /// Number of stored carry values.
    pub fn len(&self) -> usize {
        self.ph.len() + self.pv.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ph.is_empty()
    }

    fn write_tile(&mut self, kh: usize, kw: usize, ph: &[T], pv: &[T]) {
        let o = self.offset(kh, kw, 0);
        let n = self.state_dim * self.tiles.tile();
        self.ph[o..o + n].copy_from_slice(ph);
        self.pv[o..o + n].copy_from_slice(pv);
    }

    pub(crate) fn is_consistent(&self) -> bool {
        let n = self.tiles.tile_count() * self.state_dim * self.tiles.tile();
        self.ph.len() == n && self.pv.len() == n
    }
}

/// Residuals kept from a forward call for the backward pass: the inputs and
/// the tile carries. Intermediate state grids are recomputed, not stored.
#[derive(Debug, Clone)]
pub struct SavedForward<T> {
    pub(crate) x: FeatureGrid<T>,
    pub(crate) inputs: SelectiveInputs<T>,
    pub(crate) params: ScanParams<T>,
    pub(crate) carries: CarryState<T>,
}

impl<T: Real> SavedForward<T> {
    pub fn x(&self) -> &FeatureGrid<T> {
        &self.x
    }

    pub fn inputs(&self) -> &SelectiveInputs<T> {
        &self.inputs
    }

    pub fn params(&self) -> &ScanParams<T> {
        &self.params
    }

    pub fn carries(&self) -> &CarryState<T> {
        &self.carries
    }

    pub fn tiles(&self) -> TileConfig {
        self.carries.tiles
    }

    /// Values retained beyond the inputs themselves (the carries).
    pub fn residual_len(&self) -> usize {
        self.carries.len()
    }

    /// Replaces the carries; used to build deliberately inconsistent state in
    /// tests and by bindings that persist residuals.
    pub fn with_carries(mut self, carries: CarryState<T>) -> Self {
        self.carries = carries;
        self
    }
}

/// Output of [`tiled_scan2d_forward`].
#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    pub y: FeatureGrid<T>,
    pub saved: SavedForward<T>,
    pub traffic: TrafficCounts,
}

impl<T: Real> ForwardOutput<T> {
    pub fn carries(&self) -> &CarryState<T> {
        &self.saved.carries
    }
}

pub(crate) fn check_problem<T: Real>(
    x: &FeatureGrid<T>,
    inputs: &SelectiveInputs<T>,
    params: &ScanParams<T>,
) -> Result<()> {
    inputs.check_against(x)?;
    if params.state_dim() != inputs.state_dim() {
        return Err(shape_mismatch(format!(
            "A has {} states, B/C have {}",
            params.state_dim(),
            inputs.state_dim()
        )));
    }
    Ok(())
}

/// Tile-local working storage; every buffer is a row-major `T × T` tile.
pub(crate) struct TileWork<T> {
    pub(crate) t: usize,
    pub(crate) x: Vec<T>,
    pub(crate) z: Vec<T>,
    pub(crate) delta: Vec<T>,
    pub(crate) b: Vec<T>,
    pub(crate) c: Vec<T>,
    pub(crate) abar: Vec<T>,
    pub(crate) bx: Vec<T>,
    pub(crate) hhor: Vec<T>,
    pub(crate) h: Vec<T>,
    /// `Σ_d C·h` over the states processed so far.
    pub(crate) y: Vec<T>,
    pub(crate) zeros: Vec<T>,
    pub(crate) extent: (usize, usize, usize, usize),
}

impl<T: Real> TileWork<T> {
    pub(crate) fn new(t: usize) -> Self {
        let z = || vec![T::zero(); t * t];
        Self {
            t,
            x: z(),
            z: z(),
            delta: z(),
            b: z(),
            c: z(),
            abar: z(),
            bx: z(),
            hhor: z(),
            h: z(),
            y: z(),
            zeros: vec![T::zero(); t],
            extent: (0, 0, 0, 0),
        }
    }

    /// Loads `x` and `zRaw` for tile `(kh, kw)`, computes `δ`, and
    /// clears the output accumulator. Padding positions get `δ = 0` and
    /// `B̄x = 0`, so every state sees the identity `(Ā, B̄x) = (1, 0)` there.
    /// Returns payload elements read.
    pub(crate) fn load_position(
        &mut self,
        x: &FeatureGrid<T>,
        inputs: &SelectiveInputs<T>,
        params: &ScanParams<T>,
        tiles: &TileConfig,
        kh: usize,
        kw: usize,
    ) -> u64 {
        let t = self.t;
        let (r0, c0, rows, cols) = tiles.extent(kh, kw);
        self.extent = (r0, c0, rows, cols);
        let w = x.width();
        if rows < t || cols < t {
            for buf in [
                &mut self.x,
                &mut self.z,
                &mut self.delta,
                &mut self.bx,
                &mut self.b,
                &mut self.c,
            ] {
                buf.fill(T::zero());
            }
        }
        for i in 0..rows {
            let src = (r0 + i) * w + c0;
            let dst = i * t;
            self.x[dst..dst + cols].copy_from_slice(&x.data()[src..src + cols]);
            self.z[dst..dst + cols].copy_from_slice(&inputs.z_raw()[src..src + cols]);
            T::softplus_shifted(
                &self.z[dst..dst + cols],
                params.bias(),
                &mut self.delta[dst..dst + cols],
            );
        }
        self.y.fill(T::zero());
        2 * (rows * cols) as u64
    }

    /// Forms `Ā^d` over the whole tile and `B̄x^d` at real positions, reading
    /// `B^d` straight from the input plane. `keep_bc` also copies `B^d` and
    /// `C^d` into the tile for the backward pass. Returns payload elements
    /// read.
    #[inline(always)]
    fn load_state(&mut self, inputs: &SelectiveInputs<T>, a: T, d: usize, keep_bc: bool) -> u64 {
        let t = self.t;
        let (r0, c0, rows, cols) = self.extent;
        let w = inputs.width();
        let (bp, cp) = (inputs.b_plane(d), inputs.c_plane(d));
        T::exp_scaled(&self.delta, a, &mut self.abar);
        for i in 0..rows {
            let src = (r0 + i) * w + c0;
            let dst = i * t;
            let brow = &bp[src..src + cols];
            let (dl, xs) = (&self.delta[dst..dst + cols], &self.x[dst..dst + cols]);
            for (((o, &dl), &b), &x) in self.bx[dst..dst + cols].iter_mut().zip(dl).zip(brow).zip(xs) {
                *o = dl * b * x;
            }
            if keep_bc {
                self.b[dst..dst + cols].copy_from_slice(brow);
                self.c[dst..dst + cols].copy_from_slice(&cp[src..src + cols]);
            }
        }
        2 * (rows * cols) as u64
    }

    /// Horizontal scan (segments are rows) seeded by `P^h`, then vertical
    /// scan (segments are columns) seeded by `P^v`.
    #[inline(always)]
    fn scan_state(&mut self, ph: Option<&[T]>, pv: Option<&[T]>) {
        let ph = ph.unwrap_or(&self.zeros);
        let pv = pv.unwrap_or(&self.zeros);
        scan_segments_stepped(&self.abar, &self.bx, self.t, ph, &mut self.hhor);
        scan_segments_interleaved(&self.abar, &self.hhor, pv, &mut self.h);
    }

    #[inline(always)]
    fn state_generic(
        &mut self,
        inputs: &SelectiveInputs<T>,
        a: T,
        d: usize,
        carries: (Option<&[T]>, Option<&[T]>),
        accumulate: bool,
    ) -> u64 {
        let reads = self.load_state(inputs, a, d, !accumulate);
        self.scan_state(carries.0, carries.1);
        if accumulate {
            let t = self.t;
            let (r0, c0, rows, cols) = self.extent;
            let cp = inputs.c_plane(d);
            let w = inputs.width();
            for i in 0..rows {
                let src = (r0 + i) * w + c0;
                let dst = i * t;
                let yr = &mut self.y[dst..dst + cols];
                for ((y, &c), &h) in yr.iter_mut().zip(&cp[src..src + cols]).zip(&self.h[dst..dst + cols]) {
                    *y = *y + c * h;
                }
            }
        }
        reads
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn state_avx2(
        &mut self,
        inputs: &SelectiveInputs<T>,
        a: T,
        d: usize,
        carries: (Option<&[T]>, Option<&[T]>),
        accumulate: bool,
    ) -> u64 {
        self.state_generic(inputs, a, d, carries, accumulate)
    }

    /// Discretizes and scans state `d` of the loaded tile, leaving `hhor` and
    /// `h` in working storage. With `accumulate` set, `C·h` is added into
    /// `y`; without it, `B^d` and `C^d` are kept in `b` and `c` instead.
    /// Returns payload elements read.
    ///
    /// Runs an AVX2 build of the same code where the CPU supports it. No
    /// fused multiply-adds are emitted in either build, so results are
    /// bit-identical.
    pub(crate) fn state(
        &mut self,
        inputs: &SelectiveInputs<T>,
        a: T,
        d: usize,
        carries: (Option<&[T]>, Option<&[T]>),
        accumulate: bool,
    ) -> u64 {
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at runtime.
            return unsafe { self.state_avx2(inputs, a, d, carries, accumulate) };
        }
        self.state_generic(inputs, a, d, carries, accumulate)
    }

    /// Padding elements processed per state: edge-tile identities plus
    /// granularity padding of the flat `T²` work unit, for each of the two
    /// scans.
    pub(crate) fn state_padding(&self) -> u64 {
        let t = self.t;
        let (_, _, rows, cols) = self.extent;
        let flat_pad = padded_len(t * t, WORK_GRANULARITY) - t * t;
        2 * (flat_pad + t * t - rows * cols) as u64
    }

    pub(crate) fn last_column(&self, out: &mut [T]) {
        let t = self.t;
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.hhor[i * t + t - 1];
        }
    }

    pub(crate) fn last_row(&self, out: &mut [T]) {
        let t = self.t;
        out.copy_from_slice(&self.h[(t - 1) * t..]);
    }
}

struct TileOut<T> {
    kh: usize,
    kw: usize,
    y: Vec<T>,
    ph: Vec<T>,
    pv: Vec<T>,
    counts: TrafficCounts,
}

#[allow(clippy::too_many_arguments)]
fn forward_tile<T: Real>(
    work: &mut TileWork<T>,
    x: &FeatureGrid<T>,
    inputs: &SelectiveInputs<T>,
    params: &ScanParams<T>,
    tiles: &TileConfig,
    carries: &CarryState<T>,
    kh: usize,
    kw: usize,
) -> TileOut<T> {
    let t = tiles.tile();
    let n = params.state_dim();
    let mut counts = TrafficCounts {
        payload_reads: work.load_position(x, inputs, params, tiles, kh, kw),
        ..TrafficCounts::default()
    };
    let (_, _, rows, cols) = work.extent;
    let mut ph = vec![T::zero(); n * t];
    let mut pv = vec![T::zero(); n * t];

    for (d, &a) in params.a().iter().enumerate() {
        let incoming = (carries.incoming_h(kh, kw, d), carries.incoming_v(kh, kw, d));
        counts.payload_reads += work.state(inputs, a, d, incoming, true);
        counts.padding += work.state_padding();
        // one column and one row read in, one of each written out
        counts.carry += 4 * t as u64;
        work.last_column(&mut ph[d * t..(d + 1) * t]);
        work.last_row(&mut pv[d * t..(d + 1) * t]);
    }
    let skip = params.skip();
    let mut y = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let row = i * t..i * t + cols;
        y.extend(
            work.y[row.clone()]
                .iter()
                .zip(&work.x[row])
                .map(|(&acc, &x)| acc + skip * x),
        );
    }
    counts.payload_writes += (rows * cols) as u64;
    TileOut {
        kh,
        kw,
        y,
        ph,
        pv,
        counts,
    }
}

/// Fused tiled forward pass. Tiles run in row-major order on a sequential
/// executor and by anti-diagonal wavefront on a pooled one; per-tile
/// arithmetic is identical either way, so results are bit-identical.
pub fn tiled_scan2d_forward<T: Real>(
    x: &FeatureGrid<T>,
    inputs: &SelectiveInputs<T>,
    params: &ScanParams<T>,
    tiles: TileConfig,
    exec: &Executor,
) -> Result<ForwardOutput<T>> {
    let (y, carries, traffic) = run_tiles(x, inputs, params, tiles, exec)?;
    Ok(ForwardOutput {
        y,
        saved: SavedForward {
            x: x.clone(),
            inputs: inputs.clone(),
            params: params.clone(),
            carries,
        },
        traffic,
    })
}

/// [`tiled_scan2d_forward`] without retaining backward residuals; `y` and the
/// traffic counts are identical.
pub fn tiled_scan2d_infer<T: Real>(
    x: &FeatureGrid<T>,
    inputs: &SelectiveInputs<T>,
    params: &ScanParams<T>,
    tiles: TileConfig,
    exec: &Executor,
) -> Result<(FeatureGrid<T>, TrafficCounts)> {
    let (y, _, traffic) = run_tiles(x, inputs, params, tiles, exec)?;
    Ok((y, traffic))
}

type TileRun<T> = (FeatureGrid<T>, CarryState<T>, TrafficCounts);

fn run_tiles<T: Real>(
    x: &FeatureGrid<T>,
    inputs: &SelectiveInputs<T>,
    params: &ScanParams<T>,
    tiles: TileConfig,
    exec: &Executor,
) -> Result<TileRun<T>> {
    check_problem(x, inputs, params)?;
    if !tiles.matches(x.height(), x.width()) {
        return Err(shape_mismatch(format!(
            "tile config is for {}x{}, grid is {}x{}",
            tiles.height(),
            tiles.width(),
            x.height(),
            x.width()
        )));
    }
    let (h, w) = (x.height(), x.width());
    let mut carries = CarryState::zeros(tiles, params.state_dim());
    let mut y = vec![T::zero(); h * w];
    let mut traffic = TrafficCounts::default();

    let mut commit = |out: TileOut<T>, carries: &mut CarryState<T>| {
        let (r0, c0, rows, cols) = tiles.extent(out.kh, out.kw);
        for i in 0..rows {
            let dst = (r0 + i) * w + c0;
            y[dst..dst + cols].copy_from_slice(&out.y[i * cols..(i + 1) * cols]);
        }
        carries.write_tile(out.kh, out.kw, &out.ph, &out.pv);
        traffic += out.counts;
    };

    match exec.pool() {
        None => {
            let mut work = TileWork::new(tiles.tile());
            for kh in 0..tiles.tiles_h() {
                for kw in 0..tiles.tiles_w() {
                    let out = forward_tile(&mut work, x, inputs, params, &tiles, &carries, kh, kw);
                    commit(out, &mut carries);
                }
            }
        }
        Some(pool) => {
            let (kh_n, kw_n) = (tiles.tiles_h(), tiles.tiles_w());
            for diag in 0..kh_n + kw_n - 1 {
                let cells: Vec<(usize, usize)> = (0..kh_n)
                    .filter(|&kh| diag >= kh && diag - kh < kw_n)
                    .map(|kh| (kh, diag - kh))
                    .collect();
                let snapshot = &carries;
                let outs: Vec<TileOut<T>> = pool.install(|| {
                    cells
                        .par_iter()
                        .map_init(
                            || TileWork::new(tiles.tile()),
                            |work, &(kh, kw)| forward_tile(work, x, inputs, params, &tiles, snapshot, kh, kw),
                        )
                        .collect()
                });
                for out in outs {
                    commit(out, &mut carries);
                }
            }
        }
    }

    Ok((FeatureGrid::from_parts_unchecked(h, w, 1, y), carries, traffic))
}

pub(crate) fn validate_saved<T: Real>(saved: &SavedForward<T>) -> Result<()> {
    let tiles = saved.carries.tiles;
    if !tiles.matches(saved.x.height(), saved.x.width()) {
        return Err(Error::StaleSavedState(format!(
            "carries were produced for {}x{}, inputs are {}x{}",
            tiles.height(),
            tiles.width(),
            saved.x.height(),
            saved.x.width()
        )));
    }
    if saved.carries.state_dim != saved.params.state_dim() || !saved.carries.is_consistent() {
        return Err(Error::StaleSavedState(
            "carry storage does not match the state dimension".into(),
        ));
    }
    check_problem(&saved.x, &saved.inputs, &saved.params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::reference_forward;

    fn instance(h: usize, w: usize, n: usize) -> (FeatureGrid<f64>, SelectiveInputs<f64>, ScanParams<f64>) {
        let f = |k: usize, s: f64| ((k as f64 + 1.0) * s).sin();
        let l = h * w;
        let x = FeatureGrid::scalar(h, w, (0..l).map(|k| f(k, 0.7)).collect()).unwrap();
        let inp = SelectiveInputs::new(
            h,
            w,
            n,
            (0..l).map(|k| f(k, 1.3)).collect(),
            (0..l * n).map(|k| f(k, 0.31)).collect(),
            (0..l * n).map(|k| f(k, 0.17)).collect(),
        )
        .unwrap();
        let p = ScanParams::new((0..n).map(|d| -0.2 - 0.3 * d as f64).collect(), 0.8, 0.1).unwrap();
        (x, inp, p)
    }

    fn max_rel(a: &[f64], b: &[f64]) -> f64 {
        let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
    }

    #[test]
    fn matches_reference_for_several_tilings() {
        let (x, inp, p) = instance(7, 5, 3);
        let want = reference_forward(&x, &inp, &p).unwrap().y;
        for t in [1, 2, 3, 4, 8] {
            let tc = TileConfig::new(t, 7, 5).unwrap();
            let got = tiled_scan2d_forward(&x, &inp, &p, tc, &Executor::sequential()).unwrap();
            assert!(max_rel(got.y.data(), want.data()) <= 1e-12, "T={t}");
        }
    }

    #[test]
    fn boundary_carries_are_zero() {
        let (x, inp, p) = instance(6, 6, 2);
        let tc = TileConfig::new(3, 6, 6).unwrap();
        let out = tiled_scan2d_forward(&x, &inp, &p, tc, &Executor::sequential()).unwrap();
        for d in 0..2 {
            assert!(out.carries().incoming_h(1, 0, d).is_none());
            assert!(out.carries().incoming_v(0, 1, d).is_none());
            assert!(out.carries().incoming_h(1, 1, d).is_some());
        }
    }

    #[test]
    fn rejects_mismatched_tiles() {
        let (x, inp, p) = instance(4, 4, 1);
        let tc = TileConfig::new(2, 4, 5).unwrap();
        assert!(tiled_scan2d_forward(&x, &inp, &p, tc, &Executor::sequential()).is_err());
    }

    #[test]
    fn wavefront_is_bit_identical() {
        let (x, inp, p) = instance(11, 9, 4);
        let tc = TileConfig::new(3, 11, 9).unwrap();
        let seq = tiled_scan2d_forward(&x, &inp, &p, tc, &Executor::sequential()).unwrap();
        let par = tiled_scan2d_forward(&x, &inp, &p, tc, &Executor::with_threads(3).unwrap()).unwrap();
        assert_eq!(seq.y, par.y);
        assert_eq!(seq.carries(), par.carries());
        assert_eq!(seq.traffic, par.traffic);
    }
}
