//! Sequential, single-threaded implementations of every recurrence. These are
//! the oracles the optimized engine is checked against; they favour clarity
//! over speed.
//!
//! Per-state grids (`Ā`, `B̄x`, states) are stored state-major: plane `d` is an
//! `H × W` row-major block at offset `d·H·W`. All indices are 0-based.

mod discrepancy;

pub use discrepancy::{impulse_coefficient, ScanKind};

use crate::error::{shape_mismatch, Error, Result};
use crate::tensor::{softplus, FeatureGrid, Real, ScanParams, SelectiveInputs};

/// Discretized per-position parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedGrids<T> {
    pub height: usize,
    pub width: usize,
    pub state_dim: usize,
    /// `Ā = exp(δ·A)`, state-major.
    pub a_bar: Vec<T>,
    /// `B̄x = δ·B·x`, state-major.
    pub bbar_x: Vec<T>,
    /// `δ = softplus(zRaw + bias)`, `H × W`.
    pub delta: Vec<T>,
}

impl<T: Real> DiscretizedGrids<T> {
    /// Grids with the same `Ā` and `B̄x` at every position and state.
    pub fn constant(height: usize, width: usize, state_dim: usize, a_bar: T, bbar_x: T) -> Self {
        let n = height * width * state_dim;
        Self {
            height,
            width,
            state_dim,
            a_bar: vec![a_bar; n],
            bbar_x: vec![bbar_x; n],
            delta: vec![T::zero(); height * width],
        }
    }

    fn idx(&self, d: usize, i: usize, j: usize) -> usize {
        (d * self.height + i) * self.width + j
    }

    pub fn a_bar_at(&self, d: usize, i: usize, j: usize) -> T {
        self.a_bar[self.idx(d, i, j)]
    }

    pub fn bbar_x_at(&self, d: usize, i: usize, j: usize) -> T {
        self.bbar_x[self.idx(d, i, j)]
    }

    /// Row-major position sequence of `(Ā, B̄x)`, each position an `N`-vector
    /// (state index fastest).
    pub fn flatten(&self) -> (Vec<T>, Vec<T>) {
        (
            planes_to_position_major(&self.a_bar, self.height * self.width, self.state_dim),
            planes_to_position_major(&self.bbar_x, self.height * self.width, self.state_dim),
        )
    }
}

/// States and output of a full 2D scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanStates<T> {
    pub height: usize,
    pub width: usize,
    pub state_dim: usize,
    /// Horizontal-scan states, state-major.
    pub h_hor: Vec<T>,
    /// Final states after the vertical scan, state-major.
    pub h: Vec<T>,
    pub y: FeatureGrid<T>,
}

impl<T: Real> ScanStates<T> {
    pub fn h_at(&self, d: usize, i: usize, j: usize) -> T {
        self.h[(d * self.height + i) * self.width + j]
    }

    pub fn h_hor_at(&self, d: usize, i: usize, j: usize) -> T {
        self.h_hor[(d * self.height + i) * self.width + j]
    }
}

/// Converts `N` planes of `L` values into `L` consecutive `N`-vectors.
pub fn planes_to_position_major<T: Copy>(planes: &[T], positions: usize, state_dim: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(planes.len());
    for p in 0..positions {
        for d in 0..state_dim {
            out.push(planes[d * positions + p]);
        }
    }
    out
}

/// `δ = softplus(zRaw + bias)`, `Ā = exp(δA)`, `B̄x = δ·B·x`.
pub fn discretize<T: Real>(
    x: &FeatureGrid<T>,
    inputs: &SelectiveInputs<T>,
    params: &ScanParams<T>,
) -> Result<DiscretizedGrids<T>> {
    inputs.check_against(x)?;
    if params.state_dim() != inputs.state_dim() {
        return Err(shape_mismatch(format!(
            "A has {} states, B/C have {}",
            params.state_dim(),
            inputs.state_dim()
        )));
    }
    let (h, w, n) = (x.height(), x.width(), inputs.state_dim());
    let l = h * w;
    let delta: Vec<T> = inputs.z_raw().iter().map(|&z| softplus(z + params.bias())).collect();
    let mut a_bar = Vec::with_capacity(l * n);
    let mut bbar_x = Vec::with_capacity(l * n);
    for (d, &a) in params.a().iter().enumerate() {
        let b = inputs.b_plane(d);
        for p in 0..l {
            a_bar.push((delta[p] * a).exp());
            bbar_x.push(delta[p] * b[p] * x.data()[p]);
        }
    }
    Ok(DiscretizedGrids {
        height: h,
        width: w,
        state_dim: n,
        a_bar,
        bbar_x,
        delta,
    })
}

/// One-dimensional selective scan from a zero initial state.
///
/// `a_bar`, `bbar_x` and `c` hold `L` consecutive `N`-vectors; `x` has `L`
/// entries. Returns `y_t = Σ_d C_t^d h_t^d + D·x_t`.
#[allow(clippy::needless_range_loop)]
pub fn scan1d_sequential<T: Real>(
    a_bar: &[T],
    bbar_x: &[T],
    c: &[T],
    state_dim: usize,
    skip: T,
    x: &[T],
) -> Result<Vec<T>> {
    let l = x.len();
    if state_dim == 0 {
        return Err(Error::InvalidArgument("state dimension must be >= 1".into()));
    }
    for (name, v) in [("a_bar", a_bar), ("bbar_x", bbar_x), ("c", c)] {
        if v.len() != l * state_dim {
            return Err(Error::LengthMismatch(format!(
                "{name} has {} values, expected {} ({l} steps x {state_dim} states)",
                v.len(),
                l * state_dim
            )));
        }
    }
    let mut h = vec![T::zero(); state_dim];
    let mut y = Vec::with_capacity(l);
    for t in 0..l {
        let mut acc = T::zero();
        for d in 0..state_dim {
            let k = t * state_dim + d;
            h[d] = a_bar[k] * h[d] + bbar_x[k];
            acc = acc + c[k] * h[d];
        }
        y.push(acc + skip * x[t]);
    }
    Ok(y)
}

/// Two-dimensional selective scan: a horizontal recurrence along each row
/// from a zero left boundary, then a vertical recurrence down each column over
/// the horizontal states from a zero top boundary, both with the same `Ā`.
///
/// `c` is state-major (`N` planes of `H × W`).
pub fn scan2d_sequential<T: Real>(
    g: &DiscretizedGrids<T>,
    c: &[T],
    skip: T,
    x: &FeatureGrid<T>,
) -> Result<ScanStates<T>> {
    let (h, w, n) = (g.height, g.width, g.state_dim);
    if x.shape() != (h, w, 1) {
        return Err(shape_mismatch(format!(
            "x is {:?}, discretized grids are {h}x{w}",
            x.shape()
        )));
    }
    let l = h * w;
    if c.len() != l * n || g.a_bar.len() != l * n || g.bbar_x.len() != l * n {
        return Err(shape_mismatch("per-state grids must hold N*H*W values"));
    }

    let mut h_hor = vec![T::zero(); l * n];
    let mut states = vec![T::zero(); l * n];
    for d in 0..n {
        let plane = d * l;
        for i in 0..h {
            let mut prev = T::zero();
            for j in 0..w {
                let k = plane + i * w + j;
                prev = g.a_bar[k] * prev + g.bbar_x[k];
                h_hor[k] = prev;
            }
        }
        for j in 0..w {
            let mut prev = T::zero();
            for i in 0..h {
                let k = plane + i * w + j;
                prev = g.a_bar[k] * prev + h_hor[k];
                states[k] = prev;
            }
        }
    }

    let mut y = Vec::with_capacity(l);
    for p in 0..l {
        let mut acc = T::zero();
        for d in 0..n {
            acc = acc + c[d * l + p] * states[d * l + p];
        }
        y.push(acc + skip * x.data()[p]);
    }
    Ok(ScanStates {
        height: h,
        width: w,
        state_dim: n,
        h_hor,
        h: states,
        y: FeatureGrid::from_parts_unchecked(h, w, 1, y),
    })
}

/// Discretize then scan: the full reference forward pass.
pub fn reference_forward<T: Real>(
    x: &FeatureGrid<T>,
    inputs: &SelectiveInputs<T>,
    params: &ScanParams<T>,
) -> Result<ScanStates<T>> {
    let g = discretize(x, inputs, params)?;
    scan2d_sequential(&g, inputs.c(), params.skip(), x)
}

/// Discretize, flatten row-major and run the 1D scan.
pub fn reference_forward_1d<T: Real>(
    x: &FeatureGrid<T>,
    inputs: &SelectiveInputs<T>,
    params: &ScanParams<T>,
) -> Result<FeatureGrid<T>> {
    let g = discretize(x, inputs, params)?;
    let (a_bar, bbar_x) = g.flatten();
    let (h, w, n) = (x.height(), x.width(), params.state_dim());
    let c = planes_to_position_major(inputs.c(), h * w, n);
    let y = scan1d_sequential(&a_bar, &bbar_x, &c, n, params.skip(), x.data())?;
    Ok(FeatureGrid::from_parts_unchecked(h, w, 1, y))
}

fn geometric_partial_sum<T: Real>(ratio: T, terms: usize) -> T {
    if terms == 0 {
        return T::zero();
    }
    if (T::one() - ratio).abs() >= T::of(0.5) {
        (T::one() - ratio.powi(terms as i32)) / (T::one() - ratio)
    } else {
        // the ratio form cancels badly near 1
        (1..terms).fold(T::one(), |s, _| T::one() + ratio * s)
    }
}

/// State at 1-based position `(row, col)` of a constant-parameter 2D scan:
/// `Σ_{i'≤row} Σ_{j'≤col} Ā^{(row−i') + (col−j')} · B̄x`, evaluated as the
/// product of two geometric partial sums. `0⁰` is taken as 1.
pub fn closed_form_constant<T: Real>(a_bar: T, bbar_x: T, row: usize, col: usize) -> T {
    bbar_x * geometric_partial_sum(a_bar, row) * geometric_partial_sum(a_bar, col)
}

/// Row-major flattening of a grid (channel index fastest within a position).
pub fn flatten_row_major<T: Real>(grid: &FeatureGrid<T>) -> Vec<T> {
    grid.data().to_vec()
}

/// Inverse of [`flatten_row_major`].
pub fn unflatten_row_major<T: Real>(
    seq: Vec<T>,
    height: usize,
    width: usize,
    channels: usize,
) -> Result<FeatureGrid<T>> {
    FeatureGrid::new(height, width, channels, seq)
}
