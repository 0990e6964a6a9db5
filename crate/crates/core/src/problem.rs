//! Seeded random scan instances.
//!
//! `A` is drawn uniformly from `(−1, 0)` so every `Ā` lies in `(0, 1)`;
//! `x`, `zRaw`, `B` and `C` are unit normal. `D` and the softplus bias are
//! drawn from a unit normal as well.
//!
//! A problem's parameters can be stored next to its `x` tensor as a bundle of
//! four consecutive T2DM tensors: `zRaw` (`H × W`), `B` and `C`
//! (`H × W × N`, state index fastest) and the constants
//! `[A_1, …, A_N, D, bias]` as a rank-1 tensor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use std::io::{Read, Write};

use crate::error::{shape_mismatch, Result};
use crate::reference::planes_to_position_major;
use crate::tensor::{read_tensor, write_tensor, Element, FeatureGrid, Real, ScanParams, SelectiveInputs};

/// Everything a single-channel scan consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem<T> {
    pub x: FeatureGrid<T>,
    pub inputs: SelectiveInputs<T>,
    pub params: ScanParams<T>,
}

impl<T: Real> Problem<T> {
    pub fn random(height: usize, width: usize, state_dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = height * width;
        let mut normal = |k: usize| -> Vec<T> { (0..k).map(|_| T::of(rng.sample::<f64, _>(StandardNormal))).collect() };
        let x = normal(l);
        let z = normal(l);
        let b = normal(l * state_dim);
        let c = normal(l * state_dim);
        let skip = normal(1)[0];
        let bias = normal(1)[0];
        let a: Vec<T> = (0..state_dim)
            .map(|_| {
                // (−1, 0), excluding both ends
                let u: f64 = rng.random_range(f64::EPSILON..1.0);
                T::of(-u)
            })
            .collect();
        Ok(Self {
            x: FeatureGrid::scalar(height, width, x)?,
            inputs: SelectiveInputs::new(height, width, state_dim, z, b, c)?,
            params: ScanParams::new(a, skip, bias)?,
        })
    }

    pub fn height(&self) -> usize {
        self.x.height()
    }

    pub fn width(&self) -> usize {
        self.x.width()
    }

    pub fn state_dim(&self) -> usize {
        self.params.state_dim()
    }

    pub fn cast<U: Real>(&self) -> Problem<U> {
        Problem {
            x: self.x.cast(),
            inputs: self.inputs.cast(),
            params: self.params.cast(),
        }
    }
}

impl<T: Element> Problem<T> {
    /// Writes the parameter bundle; returns bytes written.
    pub fn write_params<W: Write>(&self, mut sink: W) -> Result<u64> {
        let (h, w, n) = (self.height(), self.width(), self.state_dim());
        let l = h * w;
        let z = FeatureGrid::scalar(h, w, self.inputs.z_raw().to_vec())?;
        let b = FeatureGrid::new(h, w, n, planes_to_position_major(self.inputs.b(), l, n))?;
        let c = FeatureGrid::new(h, w, n, planes_to_position_major(self.inputs.c(), l, n))?;
        let mut consts = self.params.a().to_vec();
        consts.extend([self.params.skip(), self.params.bias()]);
        let consts = FeatureGrid::scalar(1, n + 2, consts)?;
        let mut bytes = 0;
        for g in [&z, &b, &c, &consts] {
            bytes += write_tensor(g, &mut sink)?;
        }
        Ok(bytes)
    }

    /// Reads a parameter bundle for `x`, converting to `T` if the bundle was
    /// stored at the other precision.
    pub fn read_params<R: Read>(x: FeatureGrid<T>, mut source: R) -> Result<Self> {
        let (h, w) = (x.height(), x.width());
        let mut next = |what: &str| -> Result<FeatureGrid<T>> {
            let g = read_tensor(&mut source)?.to_real::<T>();
            if what != "constants" && (g.height(), g.width()) != (h, w) {
                return Err(shape_mismatch(format!(
                    "{what} is {}x{}, x is {h}x{w}",
                    g.height(),
                    g.width()
                )));
            }
            Ok(g)
        };
        let z = next("zRaw")?;
        let b = next("B")?;
        let c = next("C")?;
        let consts = next("constants")?;
        let n = b.channels();
        if z.channels() != 1 || c.channels() != n || consts.positions() != n + 2 || consts.channels() != 1 {
            return Err(shape_mismatch(format!(
                "parameter bundle shapes {:?}, {:?}, {:?}, {:?} are inconsistent",
                z.shape(),
                b.shape(),
                c.shape(),
                consts.shape()
            )));
        }
        let k = consts.data();
        Ok(Self {
            inputs: SelectiveInputs::from_position_major(h, w, n, z.into_data(), b.into_data(), c.into_data())?,
            params: ScanParams::new(k[..n].to_vec(), k[n], k[n + 1])?,
            x,
        })
    }
}
