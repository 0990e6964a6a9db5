//! Segmented block scan: many independent first-order recurrences (rows or
//! columns of a tile) packed into one flat buffer and scanned as a single work
//! unit.
//!
//! The flat buffer is padded with identity elements up to a multiple of the
//! work granularity and split into chunks of that size. Each chunk is scanned
//! locally (pass 1); a segment head is rewritten as a reset element
//! `(0, a·carry + b)` so nothing flows across a segment boundary. Pass 2
//! threads the running state from chunk to chunk, which only matters for
//! segments longer than a chunk or straddling a chunk boundary.

use crate::engine::linop::LinOp;
use crate::error::{Error, Result};
use crate::tensor::Real;

/// Smallest scheduling unit, in elements. Flat buffers are padded to a
/// multiple of this.
pub const WORK_GRANULARITY: usize = 32;

/// Segments advanced together by [`scan_segments_stepped`].
const STEP_BLOCK: usize = 8;

/// Length of a flat buffer of `len` elements once padded to `granularity`.
pub fn padded_len(len: usize, granularity: usize) -> usize {
    len.div_ceil(granularity) * granularity
}

/// Reusable scratch for segmented scans.
#[derive(Debug, Clone)]
pub(crate) struct SegmentedScanner<T> {
    granularity: usize,
    local_a: Vec<T>,
    local_b: Vec<T>,
}

impl<T: Real> SegmentedScanner<T> {
    pub(crate) fn new(granularity: usize) -> Self {
        assert!(granularity > 0);
        Self {
            granularity,
            local_a: Vec::new(),
            local_b: Vec::new(),
        }
    }

    /// Scans `segments` equal-length segments of `seg_len` elements each.
    /// Returns the number of padding elements processed.
    pub(crate) fn scan_uniform(&mut self, a: &[T], b: &[T], seg_len: usize, carries: &[T], out: &mut [T]) -> usize {
        debug_assert_eq!(a.len(), seg_len * carries.len());
        self.scan_with(a, b, carries.len(), |_| seg_len, carries, out)
    }

    #[allow(clippy::needless_range_loop)]
    fn scan_with(
        &mut self,
        a: &[T],
        b: &[T],
        n_segments: usize,
        seg_len: impl Fn(usize) -> usize,
        carries: &[T],
        out: &mut [T],
    ) -> usize {
        let len = a.len();
        let g = self.granularity;
        let padded = padded_len(len, g);
        self.local_a.resize(padded, T::zero());
        self.local_b.resize(padded, T::zero());

        // pass 1: chunk-local inclusive scan with head resets
        let mut seg = 0;
        let mut next_head = 0;
        let mut acc = LinOp::identity();
        for k in 0..padded {
            let e = if k < len {
                if k == next_head {
                    while seg_len(seg) == 0 {
                        seg += 1;
                    }
                    let head = LinOp::new(T::zero(), a[k] * carries[seg] + b[k]);
                    next_head = k + seg_len(seg);
                    seg += 1;
                    head
                } else {
                    LinOp::new(a[k], b[k])
                }
            } else {
                LinOp::identity()
            };
            acc = if k % g == 0 { e } else { acc.then(e) };
            self.local_a[k] = acc.a;
            self.local_b[k] = acc.b;
        }
        debug_assert!(seg <= n_segments);

        // pass 2: chunk carries
        let mut carry_in = T::zero();
        for chunk in 0..padded / g {
            let lo = chunk * g;
            let mut state = carry_in;
            for k in lo..lo + g {
                state = self.local_a[k] * carry_in + self.local_b[k];
                if k < len {
                    out[k] = state;
                }
            }
            carry_in = state;
        }
        padded - len
    }
}

/// Equal-length segments stored contiguously, stepped together in blocks of
/// [`STEP_BLOCK`] segments: step `k` of every segment in a block is computed
/// before step `k + 1` of any, so the independent dependency chains overlap.
pub(crate) fn scan_segments_stepped<T: Real>(a: &[T], b: &[T], seg_len: usize, carries: &[T], out: &mut [T]) {
    debug_assert_eq!(a.len(), seg_len * carries.len());
    let block = STEP_BLOCK * seg_len;
    let full = carries.len() / STEP_BLOCK;
    for (((ab, bb), ob), cs) in a
        .chunks_exact(block)
        .zip(b.chunks_exact(block))
        .zip(out.chunks_exact_mut(block))
        .zip(carries.chunks_exact(STEP_BLOCK))
    {
        let ar: [&[T]; STEP_BLOCK] = std::array::from_fn(|r| &ab[r * seg_len..(r + 1) * seg_len]);
        let br: [&[T]; STEP_BLOCK] = std::array::from_fn(|r| &bb[r * seg_len..(r + 1) * seg_len]);
        let or: [&mut [T]; STEP_BLOCK] = split_rows(ob, seg_len);
        let mut state: [T; STEP_BLOCK] = std::array::from_fn(|r| cs[r]);
        for k in 0..seg_len {
            for r in 0..STEP_BLOCK {
                state[r] = ar[r][k] * state[r] + br[r][k];
                or[r][k] = state[r];
            }
        }
    }
    let tail = full * block;
    for (s, &c) in carries[full * STEP_BLOCK..].iter().enumerate() {
        let range = tail + s * seg_len..tail + (s + 1) * seg_len;
        let mut st = c;
        for ((o, &ak), &bk) in out[range.clone()].iter_mut().zip(&a[range.clone()]).zip(&b[range]) {
            st = ak * st + bk;
            *o = st;
        }
    }
}

fn split_rows<T>(block: &mut [T], seg_len: usize) -> [&mut [T]; STEP_BLOCK] {
    let mut rows = block.chunks_exact_mut(seg_len);
    std::array::from_fn(|_| rows.next().expect("block holds STEP_BLOCK rows"))
}

/// Equal-length segments stored interleaved: element `k` of segment `s` sits
/// at `k·lanes + s`. Each step updates all segments from one contiguous slice.
pub(crate) fn scan_segments_interleaved<T: Real>(a: &[T], b: &[T], carries: &[T], out: &mut [T]) {
    let lanes = carries.len();
    debug_assert_eq!(a.len() % lanes, 0);
    let mut prev: &[T] = carries;
    for ((ak, bk), ok) in a
        .chunks_exact(lanes)
        .zip(b.chunks_exact(lanes))
        .zip(out.chunks_exact_mut(lanes))
    {
        for s in 0..lanes {
            ok[s] = ak[s] * prev[s] + bk[s];
        }
        prev = ok;
    }
}

/// Inclusive scan of each segment of `elements`, starting segment `s` from
/// `initial_carries[s]`. Segments never exchange information.
pub fn segmented_block_scan<T: Real>(
    elements: &[LinOp<T>],
    segment_lengths: &[usize],
    initial_carries: &[T],
) -> Result<Vec<T>> {
    segmented_block_scan_with(elements, segment_lengths, initial_carries, WORK_GRANULARITY).map(|(states, _)| states)
}

/// As [`segmented_block_scan`] with an explicit granularity; also returns the
/// number of identity padding elements processed.
pub fn segmented_block_scan_with<T: Real>(
    elements: &[LinOp<T>],
    segment_lengths: &[usize],
    initial_carries: &[T],
    granularity: usize,
) -> Result<(Vec<T>, usize)> {
    let total: usize = segment_lengths.iter().sum();
    if total != elements.len() {
        return Err(Error::LengthMismatch(format!(
            "segment lengths sum to {total}, {} elements given",
            elements.len()
        )));
    }
    if initial_carries.len() != segment_lengths.len() {
        return Err(Error::LengthMismatch(format!(
            "{} carries for {} segments",
            initial_carries.len(),
            segment_lengths.len()
        )));
    }
    if granularity == 0 {
        return Err(Error::InvalidArgument("granularity must be >= 1".into()));
    }
    let a: Vec<T> = elements.iter().map(|e| e.a).collect();
    let b: Vec<T> = elements.iter().map(|e| e.b).collect();
    let mut out = vec![T::zero(); elements.len()];
    let mut scanner = SegmentedScanner::new(granularity);
    let pads = scanner.scan_with(
        &a,
        &b,
        segment_lengths.len(),
        |s| segment_lengths[s],
        initial_carries,
        &mut out,
    );
    Ok((out, pads))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prefix(xs: &[f64]) -> Vec<LinOp<f64>> {
        xs.iter().map(|&x| LinOp::new(1.0, x)).collect()
    }

    fn sequential(elements: &[LinOp<f64>], lengths: &[usize], carries: &[f64]) -> Vec<f64> {
        let mut out = Vec::new();
        let mut k = 0;
        for (s, &n) in lengths.iter().enumerate() {
            let mut h = carries[s];
            for e in &elements[k..k + n] {
                h = e.apply(h);
                out.push(h);
            }
            k += n;
        }
        out
    }

    #[test]
    fn prefix_sums() {
        let out = segmented_block_scan(&prefix(&[1.0, 2.0, 3.0]), &[3], &[0.0]).unwrap();
        assert_eq!(out, vec![1.0, 3.0, 6.0]);
    }

    #[test]
    fn two_segments_are_independent() {
        let e = prefix(&[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let out = segmented_block_scan(&e, &[3, 3], &[0.0, 0.0]).unwrap();
        assert_eq!(out, vec![1.0, 3.0, 6.0, 1.0, 3.0, 6.0]);
        assert_eq!(out, sequential(&e, &[3, 3], &[0.0, 0.0]));
    }

    #[test]
    fn chained_segments_equal_unsegmented() {
        let e: Vec<_> = (0..100)
            .map(|k| LinOp::new(0.9 + 0.001 * k as f64, (k as f64 * 0.37).sin()))
            .collect();
        let whole = segmented_block_scan(&e, &[100], &[0.25]).unwrap();
        let lengths = [7, 40, 1, 0, 52];
        let mut carry = 0.25;
        let mut k = 0;
        for &n in &lengths {
            let part = segmented_block_scan(&e[k..k + n], &[n], &[carry]).unwrap();
            for (a, b) in part.iter().zip(&whole[k..k + n]) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
            if n > 0 {
                carry = *part.last().unwrap();
            }
            k += n;
        }
    }

    #[test]
    fn long_segments_cross_chunks() {
        let e: Vec<_> = (0..77).map(|k| LinOp::new(0.95, k as f64 * 0.1 - 2.0)).collect();
        for g in [1, 2, 5, 32, 64] {
            let (out, pads) = segmented_block_scan_with(&e, &[30, 47], &[1.0, -1.0], g).unwrap();
            assert_eq!(pads, padded_len(77, g) - 77);
            let want = sequential(&e, &[30, 47], &[1.0, -1.0]);
            for (a, b) in out.iter().zip(&want) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "g={g}");
            }
        }
    }

    #[test]
    fn mismatches_are_errors() {
        let e = prefix(&[1.0, 2.0]);
        assert!(matches!(
            segmented_block_scan(&e, &[3], &[0.0]),
            Err(Error::LengthMismatch(_))
        ));
        assert!(matches!(
            segmented_block_scan(&e, &[1, 1], &[0.0]),
            Err(Error::LengthMismatch(_))
        ));
    }

    #[test]
    fn stepped_and_interleaved_layouts_match() {
        let (segs, len) = (5, 7);
        let a: Vec<f64> = (0..segs * len).map(|k| 0.3 + 0.1 * ((k * 7 % 5) as f64)).collect();
        let b: Vec<f64> = (0..segs * len).map(|k| (k as f64 * 0.37).sin()).collect();
        let carries: Vec<f64> = (0..segs).map(|s| s as f64 - 2.0).collect();
        let elements: Vec<LinOp<f64>> = a.iter().zip(&b).map(|(&a, &b)| LinOp::new(a, b)).collect();
        let want = sequential(&elements, &vec![len; segs], &carries);

        let mut out = vec![0.0; segs * len];
        scan_segments_stepped(&a, &b, len, &carries, &mut out);
        assert_eq!(out, want);

        // same data with segment s, step k moved to k·segs + s
        let inter = |v: &[f64]| {
            let mut o = vec![0.0; v.len()];
            for s in 0..segs {
                for k in 0..len {
                    o[k * segs + s] = v[s * len + k];
                }
            }
            o
        };
        let mut out = vec![0.0; segs * len];
        scan_segments_interleaved(&inter(&a), &inter(&b), &carries, &mut out);
        assert_eq!(out, inter(&want));
    }

    #[test]
    fn padding_to_granularity() {
        let e = prefix(&[1.0; 196]);
        let (_, pads) = segmented_block_scan_with(&e, &[14; 14], &[0.0; 14], 32).unwrap();
        assert_eq!(pads, 28);
    }
}
