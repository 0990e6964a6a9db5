use crate::error::{shape_mismatch, Error, Result};
use crate::tensor::real::Real;

fn check_finite<T: Real>(data: &[T]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

/// Dense `height × width × channels` grid, row-major with the channel index
/// fastest. Public indices are 0-based: `(i, j, c)` lives at
/// `(i * width + j) * channels + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Real> FeatureGrid<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::EmptyDimension(vec![
                height as u64,
                width as u64,
                channels as u64,
            ]));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::LengthMismatch(format!(
                "grid {height}x{width}x{channels} needs {expected} values, got {}",
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Single-channel grid.
    pub fn scalar(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        Self::new(height, width, 1, data)
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::filled(height, width, channels, T::zero())
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for i in 0..height {
            for j in 0..width {
                for c in 0..channels {
                    data.push(f(i, j, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of spatial positions, `H·W`.
    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize, c: usize) -> T {
        self.data[(i * self.width + j) * self.channels + c]
    }

    /// Value of a single-channel grid at `(i, j)`.
    pub fn at(&self, i: usize, j: usize) -> T {
        self.get(i, j, 0)
    }

    /// Channel vector at `(i, j)`.
    pub fn pixel(&self, i: usize, j: usize) -> &[T] {
        let start = (i * self.width + j) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Copy of channel `c` as a single-channel grid.
    pub fn channel(&self, c: usize) -> FeatureGrid<T> {
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        FeatureGrid {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    pub fn same_shape<U>(&self, other: &FeatureGrid<U>) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// Applies `f` elementwise, re-validating finiteness.
    pub fn map(&self, f: impl Fn(T) -> T) -> Result<FeatureGrid<T>> {
        Self::new(
            self.height,
            self.width,
            self.channels,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Lossy precision conversion.
    pub fn cast<U: Real>(&self) -> FeatureGrid<U> {
        FeatureGrid {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    /// Internal constructor for values produced by engine arithmetic on
    /// finite inputs; skips the finiteness scan.
    pub(crate) fn from_parts_unchecked(height: usize, width: usize, channels: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        Self {
            height,
            width,
            channels,
            data,
        }
    }
}

/// Input-dependent scan parameters at every position: the raw time-step grid
/// (before softplus) and the `B`, `C` grids over `N` state dimensions.
///
/// `B` and `C` are stored state-major: plane `d` is an `H × W` row-major grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectiveInputs<T> {
    height: usize,
    width: usize,
    state_dim: usize,
    z_raw: Vec<T>,
    b: Vec<T>,
    c: Vec<T>,
}

impl<T: Real> SelectiveInputs<T> {
    /// `b` and `c` in state-major layout (`N` planes of `H·W`).
    pub fn new(height: usize, width: usize, state_dim: usize, z_raw: Vec<T>, b: Vec<T>, c: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 || state_dim == 0 {
            return Err(Error::EmptyDimension(vec![
                height as u64,
                width as u64,
                state_dim as u64,
            ]));
        }
        let l = height * width;
        if z_raw.len() != l {
            return Err(Error::LengthMismatch(format!(
                "z_raw has {} values, grid has {l} positions",
                z_raw.len()
            )));
        }
        for (name, v) in [("B", &b), ("C", &c)] {
            if v.len() != l * state_dim {
                return Err(Error::LengthMismatch(format!(
                    "{name} has {} values, expected {}",
                    v.len(),
                    l * state_dim
                )));
            }
        }
        check_finite(&z_raw)?;
        check_finite(&b)?;
        check_finite(&c)?;
        Ok(Self {
            height,
            width,
            state_dim,
            z_raw,
            b,
            c,
        })
    }

    /// Builds from position-major `B`/`C` (`H × W × N`, state index fastest).
    pub fn from_position_major(
        height: usize,
        width: usize,
        state_dim: usize,
        z_raw: Vec<T>,
        b: Vec<T>,
        c: Vec<T>,
    ) -> Result<Self> {
        let l = height * width;
        if b.len() != l * state_dim || c.len() != l * state_dim {
            return Err(Error::LengthMismatch(format!("B/C need {} values each", l * state_dim)));
        }
        let transpose = |src: &[T]| {
            let mut out = vec![T::zero(); src.len()];
            for p in 0..l {
                for d in 0..state_dim {
                    out[d * l + p] = src[p * state_dim + d];
                }
            }
            out
        };
        let (b, c) = (transpose(&b), transpose(&c));
        Self::new(height, width, state_dim, z_raw, b, c)
    }

    /// The same `B` and `C` with another `zRaw` grid.
    pub fn with_z_raw(&self, z_raw: Vec<T>) -> Result<Self> {
        if z_raw.len() != self.z_raw.len() {
            return Err(Error::LengthMismatch(format!(
                "z_raw has {} values, grid has {} positions",
                z_raw.len(),
                self.z_raw.len()
            )));
        }
        check_finite(&z_raw)?;
        Ok(Self {
            height: self.height,
            width: self.width,
            state_dim: self.state_dim,
            z_raw,
            b: self.b.clone(),
            c: self.c.clone(),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn z_raw(&self) -> &[T] {
        &self.z_raw
    }

    pub fn b(&self) -> &[T] {
        &self.b
    }

    pub fn c(&self) -> &[T] {
        &self.c
    }

    /// `B` plane for state `d`, row-major `H × W`.
    pub fn b_plane(&self, d: usize) -> &[T] {
        let l = self.height * self.width;
        &self.b[d * l..(d + 1) * l]
    }

    pub fn c_plane(&self, d: usize) -> &[T] {
        let l = self.height * self.width;
        &self.c[d * l..(d + 1) * l]
    }

    pub fn z_at(&self, i: usize, j: usize) -> T {
        self.z_raw[i * self.width + j]
    }

    pub fn b_at(&self, d: usize, i: usize, j: usize) -> T {
        self.b[(d * self.height + i) * self.width + j]
    }

    pub fn c_at(&self, d: usize, i: usize, j: usize) -> T {
        self.c[(d * self.height + i) * self.width + j]
    }

    /// Checks that `x` is a single-channel grid with the same extent.
    pub fn check_against<U>(&self, x: &FeatureGrid<U>) -> Result<()> {
        if x.height != self.height || x.width != self.width {
            return Err(shape_mismatch(format!(
                "x is {}x{}, selective inputs are {}x{}",
                x.height, x.width, self.height, self.width
            )));
        }
        if x.channels != 1 {
            return Err(shape_mismatch(format!(
                "scan operator takes one channel, x has {}",
                x.channels
            )));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> SelectiveInputs<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::of(x.as_f64())).collect();
        SelectiveInputs {
            height: self.height,
            width: self.width,
            state_dim: self.state_dim,
            z_raw: conv(&self.z_raw),
            b: conv(&self.b),
            c: conv(&self.c),
        }
    }
}

/// Input-independent parameters of one scan channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanParams<T> {
    a: Vec<T>,
    skip: T,
    bias: T,
    stable: bool,
}

impl<T: Real> ScanParams<T> {
    pub fn new(a: Vec<T>, skip: T, bias: T) -> Result<Self> {
        if a.is_empty() {
            return Err(Error::InvalidArgument("state dimension N must be >= 1".into()));
        }
        check_finite(&a)?;
        if !skip.is_finite() || !bias.is_finite() {
            return Err(Error::InvalidArgument("D and bias must be finite".into()));
        }
        let stable = a.iter().all(|&v| v < T::zero());
        Ok(Self { a, skip, bias, stable })
    }

    pub fn state_dim(&self) -> usize {
        self.a.len()
    }

    pub fn a(&self) -> &[T] {
        &self.a
    }

    /// Skip coefficient `D`.
    pub fn skip(&self) -> T {
        self.skip
    }

    pub fn bias(&self) -> T {
        self.bias
    }

    /// True when every `A` entry is negative, so each `Ā` lies in `(0, 1)`.
    pub fn is_stable(&self) -> bool {
        self.stable
    }

    pub fn cast<U: Real>(&self) -> ScanParams<U> {
        ScanParams {
            a: self.a.iter().map(|v| U::of(v.as_f64())).collect(),
            skip: U::of(self.skip.as_f64()),
            bias: U::of(self.bias.as_f64()),
            stable: self.stable,
        }
    }
}

/// Square tiling of an `H × W` grid into `K_H × K_W` tiles of edge `T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TileConfig {
    tile: usize,
    height: usize,
    width: usize,
    tiles_h: usize,
    tiles_w: usize,
}

impl TileConfig {
    pub fn new(tile: usize, height: usize, width: usize) -> Result<Self> {
        if tile == 0 {
            return Err(Error::InvalidArgument("tile size T must be >= 1".into()));
        }
        if height == 0 || width == 0 {
            return Err(Error::EmptyDimension(vec![height as u64, width as u64]));
        }
        Ok(Self {
            tile,
            height,
            width,
            tiles_h: height.div_ceil(tile),
            tiles_w: width.div_ceil(tile),
        })
    }

    pub fn tile(&self) -> usize {
        self.tile
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `K_H = ceil(H / T)`.
    pub fn tiles_h(&self) -> usize {
        self.tiles_h
    }

    /// `K_W = ceil(W / T)`.
    pub fn tiles_w(&self) -> usize {
        self.tiles_w
    }

    pub fn tile_count(&self) -> usize {
        self.tiles_h * self.tiles_w
    }

    /// Real (unpadded) extent of tile `(kh, kw)`: `(row0, col0, rows, cols)`.
    pub fn extent(&self, kh: usize, kw: usize) -> (usize, usize, usize, usize) {
        let r0 = kh * self.tile;
        let c0 = kw * self.tile;
        (r0, c0, self.tile.min(self.height - r0), self.tile.min(self.width - c0))
    }

    pub fn matches(&self, height: usize, width: usize) -> bool {
        self.height == height && self.width == width
    }
}

/// Patch-embedding grid with a tissue mask and the padding token substituted
/// at non-tissue positions.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedGrid<T> {
    patches: FeatureGrid<T>,
    tissue: Vec<bool>,
    padding_token: Vec<T>,
}

impl<T: Real> MaskedGrid<T> {
    pub fn new(patches: FeatureGrid<T>, tissue: Vec<bool>, padding_token: Vec<T>) -> Result<Self> {
        if tissue.len() != patches.positions() {
            return Err(shape_mismatch(format!(
                "mask has {} entries, grid has {} positions",
                tissue.len(),
                patches.positions()
            )));
        }
        if padding_token.len() != patches.channels() {
            return Err(shape_mismatch(format!(
                "padding token has {} channels, grid has {}",
                padding_token.len(),
                patches.channels()
            )));
        }
        check_finite(&padding_token)?;
        Ok(Self {
            patches,
            tissue,
            padding_token,
        })
    }

    pub fn patches(&self) -> &FeatureGrid<T> {
        &self.patches
    }

    pub fn tissue(&self) -> &[bool] {
        &self.tissue
    }

    pub fn padding_token(&self) -> &[T] {
        &self.padding_token
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite() {
        let err = FeatureGrid::scalar(1, 2, vec![1.0f64, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 1 }));
        assert!(FeatureGrid::scalar(1, 1, vec![f32::INFINITY]).is_err());
    }

    #[test]
    fn rejects_bad_length_and_empty() {
        assert!(matches!(
            FeatureGrid::scalar(2, 2, vec![0.0f64; 3]),
            Err(Error::LengthMismatch(_))
        ));
        assert!(matches!(
            FeatureGrid::<f64>::zeros(0, 2, 1),
            Err(Error::EmptyDimension(_))
        ));
    }

    #[test]
    fn tile_config_bounds() {
        for (t, h, w) in [(1, 5, 7), (3, 7, 7), (8, 56, 56), (16, 56, 56), (64, 3, 9)] {
            let tc = TileConfig::new(t, h, w).unwrap();
            assert!(tc.tiles_h() * t >= h && (tc.tiles_h() - 1) * t < h);
            assert!(tc.tiles_w() * t >= w && (tc.tiles_w() - 1) * t < w);
        }
        assert!(TileConfig::new(0, 3, 3).is_err());
        let tc = TileConfig::new(4, 10, 6).unwrap();
        assert_eq!(tc.extent(2, 1), (8, 4, 2, 2));
    }

    #[test]
    fn position_major_transposes() {
        let inp = SelectiveInputs::from_position_major(
            1,
            2,
            2,
            vec![0.0f64, 0.0],
            vec![1.0, 2.0, 3.0, 4.0],
            vec![5.0, 6.0, 7.0, 8.0],
        )
        .unwrap();
        assert_eq!(inp.b_plane(0), &[1.0, 3.0]);
        assert_eq!(inp.b_plane(1), &[2.0, 4.0]);
        assert_eq!(inp.c_at(1, 0, 1), 8.0);
    }

    #[test]
    fn stability_flag() {
        assert!(ScanParams::new(vec![-1.0f64, -0.5], 0.0, 0.0).unwrap().is_stable());
        assert!(!ScanParams::new(vec![-1.0f64, 0.0], 0.0, 0.0).unwrap().is_stable());
        assert!(ScanParams::<f64>::new(vec![], 0.0, 0.0).is_err());
    }

    #[test]
    fn channel_extraction() {
        let g = FeatureGrid::from_fn(2, 2, 3, |i, j, c| (i * 100 + j * 10 + c) as f64).unwrap();
        assert_eq!(g.channel(2).data(), &[2.0, 12.0, 102.0, 112.0]);
        assert_eq!(g.pixel(1, 0), &[100.0, 101.0, 102.0]);
    }
}
