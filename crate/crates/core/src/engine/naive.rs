use crate::engine::segmented::{padded_len, SegmentedScanner, WORK_GRANULARITY};
use crate::engine::tiled::check_problem;
use crate::engine::TrafficCounts;
use crate::error::Result;
use crate::tensor::{FeatureGrid, Real, ScanParams, SelectiveInputs};

/// The unoptimized 2D strategy: one full-length scan per row and state that
/// writes every per-state horizontal grid to the main store, then one
/// full-length scan per column and state that reads them back.
///
/// Each row or column scan is a single segment padded to the work granularity,
/// as a full-sequence block scan requires. The column pass has to re-read
/// `zRaw` (to rebuild `Ā`) and `x` (for the skip term); those re-reads are
/// counted as payload.
#[allow(clippy::needless_range_loop)]
pub fn naive_scan2d<T: Real>(
    x: &FeatureGrid<T>,
    inputs: &SelectiveInputs<T>,
    params: &ScanParams<T>,
) -> Result<(FeatureGrid<T>, TrafficCounts)> {
    check_problem(x, inputs, params)?;
    let (h, w, n) = (x.height(), x.width(), params.state_dim());
    let l = h * w;
    let bias = params.bias();
    let mut counts = TrafficCounts::default();
    let mut scanner = SegmentedScanner::new(WORK_GRANULARITY);

    // main-store intermediate: N horizontal-state grids
    let mut hhor = vec![T::zero(); n * l];

    let mut delta = vec![T::zero(); w];
    let mut abar = vec![T::zero(); w];
    let mut bx = vec![T::zero(); w];
    let mut row_out = vec![T::zero(); w];
    for i in 0..h {
        let xr = &x.data()[i * w..(i + 1) * w];
        let zr = &inputs.z_raw()[i * w..(i + 1) * w];
        counts.payload_reads += 2 * w as u64;
        T::softplus_shifted(zr, bias, &mut delta);
        for (d, &a) in params.a().iter().enumerate() {
            let br = &inputs.b_plane(d)[i * w..(i + 1) * w];
            counts.payload_reads += w as u64;
            T::exp_scaled(&delta, a, &mut abar);
            for j in 0..w {
                bx[j] = delta[j] * br[j] * xr[j];
            }
            scanner.scan_uniform(&abar, &bx, w, &[T::zero()], &mut row_out);
            counts.padding += (padded_len(w, WORK_GRANULARITY) - w) as u64;
            hhor[d * l + i * w..d * l + (i + 1) * w].copy_from_slice(&row_out);
            counts.intermediate += w as u64;
        }
    }

    let mut y = vec![T::zero(); l];
    let mut zcol = vec![T::zero(); h];
    let mut delta = vec![T::zero(); h];
    let mut abar = vec![T::zero(); h];
    let mut hcol = vec![T::zero(); h];
    let mut col_out = vec![T::zero(); h];
    let mut ycol = vec![T::zero(); h];
    for j in 0..w {
        for i in 0..h {
            zcol[i] = inputs.z_raw()[i * w + j];
        }
        T::softplus_shifted(&zcol, bias, &mut delta);
        counts.payload_reads += h as u64;
        ycol.fill(T::zero());
        for (d, &a) in params.a().iter().enumerate() {
            let plane = &hhor[d * l..(d + 1) * l];
            for i in 0..h {
                hcol[i] = plane[i * w + j];
            }
            T::exp_scaled(&delta, a, &mut abar);
            counts.intermediate += h as u64;
            scanner.scan_uniform(&abar, &hcol, h, &[T::zero()], &mut col_out);
            counts.padding += (padded_len(h, WORK_GRANULARITY) - h) as u64;
            let cp = inputs.c_plane(d);
            for i in 0..h {
                ycol[i] = ycol[i] + cp[i * w + j] * col_out[i];
            }
            counts.payload_reads += h as u64;
        }
        let skip = params.skip();
        for i in 0..h {
            y[i * w + j] = ycol[i] + skip * x.data()[i * w + j];
        }
        counts.payload_reads += h as u64;
        counts.payload_writes += h as u64;
    }
    Ok((FeatureGrid::from_parts_unchecked(h, w, 1, y), counts))
}
