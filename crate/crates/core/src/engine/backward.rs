//! Backward pass of the tiled scan.
//!
//! Tiles are visited in reverse row-major order. Per tile and state the
//! horizontal and vertical states are rebuilt from the saved carries (two
//! forward scans), then the adjoints run as two reverse scans:
//!
//! ```text
//! G(i,j)    = C(i,j)·dy(i,j) + Ā(i+1,j)·G(i+1,j)
//! Ghor(i,j) = G(i,j)         + Ā(i,j+1)·Ghor(i,j+1)
//! ```
//!
//! Reverse carries cross tile borders as `Ā·G` of the neighbour's first row
//! (from below) and `Ā·Ghor` of its first column (from the right).

use crate::engine::segmented::{SegmentedScanner, WORK_GRANULARITY};
use crate::engine::tiled::{validate_saved, SavedForward, TileWork};
use crate::error::{shape_mismatch, Result};
use crate::tensor::{sigmoid, FeatureGrid, Real};

/// Gradients of a scalar loss with respect to every scan input.
///
/// `db` and `dc` are state-major like [`SelectiveInputs`](crate::tensor::SelectiveInputs).
/// `dx` covers only the paths through `B̄x = δ·B·x` and the skip term; the
/// path through `zRaw` is reported separately in `dz_raw`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle<T> {
    pub dx: FeatureGrid<T>,
    pub dz_raw: FeatureGrid<T>,
    pub da: Vec<T>,
    pub db: Vec<T>,
    pub dc: Vec<T>,
    pub dd: T,
    pub dbias: T,
}

impl<T: Real> GradBundle<T> {
    pub fn is_finite(&self) -> bool {
        self.dx.data().iter().all(|v| v.is_finite())
            && self.dz_raw.data().iter().all(|v| v.is_finite())
            && self.da.iter().chain(&self.db).chain(&self.dc).all(|v| v.is_finite())
            && self.dd.is_finite()
            && self.dbias.is_finite()
    }
}

struct BackWork<T> {
    fwd: TileWork<T>,
    scanner: SegmentedScanner<T>,
    dy: Vec<T>,
    rev_a: Vec<T>,
    rev_b: Vec<T>,
    rev_out: Vec<T>,
    g: Vec<T>,
    ghor: Vec<T>,
    ddelta: Vec<T>,
    dx: Vec<T>,
}

/// Gradients of `Σ dy·y` for the forward call that produced `saved`.
pub fn tiled_scan2d_backward<T: Real>(saved: &SavedForward<T>, dy: &FeatureGrid<T>) -> Result<GradBundle<T>> {
    validate_saved(saved)?;
    let x = &saved.x;
    if dy.shape() != x.shape() {
        return Err(shape_mismatch(format!("dy is {:?}, y is {:?}", dy.shape(), x.shape())));
    }
    let inputs = &saved.inputs;
    let params = &saved.params;
    let carries = &saved.carries;
    let tiles = carries.tiles();
    let (h, w, n, t) = (x.height(), x.width(), params.state_dim(), tiles.tile());
    let l = h * w;
    let (kh_n, kw_n) = (tiles.tiles_h(), tiles.tiles_w());

    let z = || vec![T::zero(); t * t];
    let mut bw = BackWork {
        fwd: TileWork::new(t),
        scanner: SegmentedScanner::new(WORK_GRANULARITY),
        dy: z(),
        rev_a: z(),
        rev_b: z(),
        rev_out: z(),
        g: z(),
        ghor: z(),
        ddelta: z(),
        dx: z(),
    };

    let mut dx = vec![T::zero(); l];
    let mut dz = vec![T::zero(); l];
    let mut db = vec![T::zero(); l * n];
    let mut dc = vec![T::zero(); l * n];
    // per-tile partial sums, reduced in forward tile order at the end
    let mut part_da = vec![T::zero(); kh_n * kw_n * n];
    let mut part_dbias = vec![T::zero(); kh_n * kw_n];
    let mut part_dd = vec![T::zero(); kh_n * kw_n];

    // reverse carries: from the tile below (per tile column) and from the right
    let mut qv = vec![T::zero(); kw_n * n * t];
    let mut qh = vec![T::zero(); n * t];

    for kh in (0..kh_n).rev() {
        qh.fill(T::zero());
        for kw in (0..kw_n).rev() {
            let tile_idx = kh * kw_n + kw;
            bw.fwd.load_position(x, inputs, params, &tiles, kh, kw);
            let (r0, c0, rows, cols) = bw.fwd.extent;
            bw.dy.fill(T::zero());
            for i in 0..rows {
                let src = (r0 + i) * w + c0;
                bw.dy[i * t..i * t + cols].copy_from_slice(&dy.data()[src..src + cols]);
            }
            bw.ddelta.fill(T::zero());
            bw.dx.fill(T::zero());

            for (d, &a) in params.a().iter().enumerate() {
                let ph_in = carries.incoming_h(kh, kw, d);
                let pv_in = carries.incoming_v(kh, kw, d);
                bw.fwd.state(inputs, a, d, (ph_in, pv_in), false);
                let fw = &mut bw.fwd;

                // reverse vertical scan, column-major with rows reversed
                for j in 0..t {
                    for q in 0..t {
                        let i = t - 1 - q;
                        let k = j * t + q;
                        bw.rev_a[k] = if i == t - 1 { T::one() } else { fw.abar[(i + 1) * t + j] };
                        bw.rev_b[k] = fw.c[i * t + j] * bw.dy[i * t + j];
                    }
                }
                let qv_d = &mut qv[(kw * n + d) * t..(kw * n + d + 1) * t];
                bw.scanner.scan_uniform(&bw.rev_a, &bw.rev_b, t, qv_d, &mut bw.rev_out);
                for j in 0..t {
                    for q in 0..t {
                        bw.g[(t - 1 - q) * t + j] = bw.rev_out[j * t + q];
                    }
                }
                for (j, q) in qv_d.iter_mut().enumerate() {
                    *q = fw.abar[j] * bw.g[j];
                }

                // reverse horizontal scan, row-major with columns reversed
                for i in 0..t {
                    for q in 0..t {
                        let j = t - 1 - q;
                        let k = i * t + q;
                        bw.rev_a[k] = if j == t - 1 { T::one() } else { fw.abar[i * t + j + 1] };
                        bw.rev_b[k] = bw.g[i * t + j];
                    }
                }
                let qh_d = &mut qh[d * t..(d + 1) * t];
                bw.scanner.scan_uniform(&bw.rev_a, &bw.rev_b, t, qh_d, &mut bw.rev_out);
                for i in 0..t {
                    for q in 0..t {
                        bw.ghor[i * t + t - 1 - q] = bw.rev_out[i * t + q];
                    }
                }
                for (i, q) in qh_d.iter_mut().enumerate() {
                    *q = fw.abar[i * t] * bw.ghor[i * t];
                }

                // parameter gradients at real positions, row-major
                let mut da_tile = T::zero();
                for i in 0..rows {
                    for j in 0..cols {
                        let k = i * t + j;
                        let hhor_left = if j > 0 {
                            fw.hhor[k - 1]
                        } else {
                            ph_in.map_or(T::zero(), |p| p[i])
                        };
                        let h_up = if i > 0 {
                            fw.h[k - t]
                        } else {
                            pv_in.map_or(T::zero(), |p| p[j])
                        };
                        let dbx = bw.ghor[k];
                        let dabar = dbx * hhor_left + bw.g[k] * h_up;
                        let delta = fw.delta[k];
                        let abar = fw.abar[k];
                        bw.ddelta[k] = bw.ddelta[k] + dabar * a * abar + dbx * fw.b[k] * fw.x[k];
                        da_tile = da_tile + dabar * delta * abar;
                        bw.dx[k] = bw.dx[k] + dbx * delta * fw.b[k];

                        let p = d * l + (r0 + i) * w + c0 + j;
                        db[p] = dbx * delta * fw.x[k];
                        dc[p] = bw.dy[k] * fw.h[k];
                    }
                }
                part_da[tile_idx * n + d] = da_tile;
            }

            let fw = &bw.fwd;
            let skip = params.skip();
            let bias = params.bias();
            let mut dbias_tile = T::zero();
            let mut dd_tile = T::zero();
            for i in 0..rows {
                for j in 0..cols {
                    let k = i * t + j;
                    let p = (r0 + i) * w + c0 + j;
                    let dzv = bw.ddelta[k] * sigmoid(fw.z[k] + bias);
                    dz[p] = dzv;
                    dbias_tile = dbias_tile + dzv;
                    dx[p] = bw.dx[k] + skip * bw.dy[k];
                    dd_tile = dd_tile + bw.dy[k] * fw.x[k];
                }
            }
            part_dbias[tile_idx] = dbias_tile;
            part_dd[tile_idx] = dd_tile;
        }
    }

    let mut da = vec![T::zero(); n];
    for tile_idx in 0..kh_n * kw_n {
        for (d, v) in da.iter_mut().enumerate() {
            *v = *v + part_da[tile_idx * n + d];
        }
    }
    let dbias = part_dbias.iter().fold(T::zero(), |s, &v| s + v);
    let dd = part_dd.iter().fold(T::zero(), |s, &v| s + v);

    Ok(GradBundle {
        dx: FeatureGrid::from_parts_unchecked(h, w, 1, dx),
        dz_raw: FeatureGrid::from_parts_unchecked(h, w, 1, dz),
        da,
        db,
        dc,
        dd,
        dbias,
    })
}
