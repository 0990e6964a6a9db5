use crate::engine::segmented::{padded_len, SegmentedScanner, WORK_GRANULARITY};
use crate::engine::tiled::check_problem;
use crate::engine::TrafficCounts;
use crate::error::Result;
use crate::tensor::{FeatureGrid, Real, ScanParams, SelectiveInputs};

/// Sub-sequence length of the chunked 1D scan. A multiple of
/// [`WORK_GRANULARITY`], so only the final chunk is padded.
pub const CUB1D_CHUNK: usize = 2048;

/// The 1D selective scan over the row-major flattened grid, processed in
/// chunks of [`CUB1D_CHUNK`] positions. The running state of every state
/// dimension stays in working storage between chunks, so the only main-store
/// traffic is the payload.
pub fn cub1d_forward<T: Real>(
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
    let mut state = vec![T::zero(); n];
    let mut y = vec![T::zero(); l];

    let cap = CUB1D_CHUNK.min(l);
    let mut delta = vec![T::zero(); cap];
    let mut abar = vec![T::zero(); cap];
    let mut bx = vec![T::zero(); cap];
    let mut out = vec![T::zero(); cap];
    let mut acc = vec![T::zero(); cap];

    for lo in (0..l).step_by(CUB1D_CHUNK) {
        let hi = (lo + CUB1D_CHUNK).min(l);
        let len = hi - lo;
        let xs = &x.data()[lo..hi];
        counts.payload_reads += 2 * len as u64;
        T::softplus_shifted(&inputs.z_raw()[lo..hi], bias, &mut delta[..len]);
        acc[..len].fill(T::zero());
        for (d, &a) in params.a().iter().enumerate() {
            let bs = &inputs.b_plane(d)[lo..hi];
            let cs = &inputs.c_plane(d)[lo..hi];
            counts.payload_reads += 2 * len as u64;
            T::exp_scaled(&delta[..len], a, &mut abar[..len]);
            for k in 0..len {
                bx[k] = delta[k] * bs[k] * xs[k];
            }
            scanner.scan_uniform(&abar[..len], &bx[..len], len, &state[d..d + 1], &mut out[..len]);
            counts.padding += (padded_len(len, WORK_GRANULARITY) - len) as u64;
            state[d] = out[len - 1];
            for k in 0..len {
                acc[k] = acc[k] + cs[k] * out[k];
            }
        }
        let skip = params.skip();
        for k in 0..len {
            y[lo + k] = acc[k] + skip * xs[k];
        }
        counts.payload_writes += len as u64;
    }
    Ok((FeatureGrid::from_parts_unchecked(h, w, 1, y), counts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::{discretize, planes_to_position_major, scan1d_sequential};

    #[test]
    fn matches_flattened_sequential_scan() {
        // long enough to span several chunks
        let (h, w, n) = (70, 61, 2);
        let l = h * w;
        let s = |k: usize, m: f64| ((k as f64 + 0.5) * m).sin();
        let x = FeatureGrid::scalar(h, w, (0..l).map(|k| s(k, 0.9)).collect()).unwrap();
        let inp = SelectiveInputs::new(
            h,
            w,
            n,
            (0..l).map(|k| s(k, 1.7)).collect(),
            (0..l * n).map(|k| s(k, 0.4)).collect(),
            (0..l * n).map(|k| s(k, 0.6)).collect(),
        )
        .unwrap();
        let p = ScanParams::new(vec![-0.5, -0.05], 0.3, -0.2).unwrap();
        let g = discretize(&x, &inp, &p).unwrap();
        let (a_seq, bx_seq) = g.flatten();
        let c_seq = planes_to_position_major(inp.c(), l, n);
        let want = scan1d_sequential(&a_seq, &bx_seq, &c_seq, n, 0.3, x.data()).unwrap();
        let (got, counts) = cub1d_forward(&x, &inp, &p).unwrap();
        let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in got.data().iter().zip(&want) {
            assert!((a - b).abs() <= 1e-12 * scale);
        }
        assert_eq!(counts.payload_reads, ((2 + 2 * n) * l) as u64);
        assert_eq!(counts.padding, (n * (padded_len(l, 32) - l)) as u64);
    }
}
