use crate::error::{Error, Result};
use crate::reference::{scan1d_sequential, scan2d_sequential, DiscretizedGrids};
use crate::tensor::{FeatureGrid, Real};

/// Which scan an impulse is pushed through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanKind {
    /// The grid flattened row-major and scanned as one sequence.
    RowMajor1d,
    /// Horizontal then vertical scan.
    Grid2d,
}

/// Measures how much of a unit impulse at `source` reaches the state at
/// `target` (both 0-based `(row, col)`), with constant `Ā = a_bar`, `B̄ = 1`
/// and a single state dimension.
///
/// The 2D scan yields `a_bar^{manhattan(source, target)}`; the row-major 1D
/// scan yields `a_bar^{flat(target) − flat(source)}`.
pub fn impulse_coefficient<T: Real>(
    kind: ScanKind,
    source: (usize, usize),
    target: (usize, usize),
    a_bar: T,
    width: usize,
) -> Result<T> {
    if source.1 >= width || target.1 >= width {
        return Err(Error::InvalidArgument(format!(
            "column index out of range for width {width}"
        )));
    }
    let flat = |(i, j): (usize, usize)| i * width + j;
    if flat(source) > flat(target) {
        return Err(Error::InvalidArgument(format!(
            "source {source:?} comes after target {target:?}"
        )));
    }
    if kind == ScanKind::Grid2d && source.1 > target.1 {
        return Err(Error::InvalidArgument(format!(
            "source {source:?} is not in the upper-left rectangle of target {target:?}"
        )));
    }

    let height = target.0 + 1;
    let l = height * width;
    let mut impulse = vec![T::zero(); l];
    impulse[flat(source)] = T::one();
    let x = FeatureGrid::scalar(height, width, impulse.clone())?;

    // B̄ = 1 so B̄x is the impulse itself; C = 1 with D = 0 reads the raw state.
    let grids = DiscretizedGrids {
        height,
        width,
        state_dim: 1,
        a_bar: vec![a_bar; l],
        bbar_x: impulse,
        delta: vec![T::one(); l],
    };
    let ones = vec![T::one(); l];
    match kind {
        ScanKind::Grid2d => {
            let s = scan2d_sequential(&grids, &ones, T::zero(), &x)?;
            Ok(s.h_at(0, target.0, target.1))
        }
        ScanKind::RowMajor1d => {
            let (a_seq, bx_seq) = grids.flatten();
            let y = scan1d_sequential(&a_seq, &bx_seq, &ones, 1, T::zero(), x.data())?;
            Ok(y[flat(target)])
        }
    }
}
