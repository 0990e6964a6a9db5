use rand::Rng;
use rayon::prelude::*;

use crate::engine::{tiled_scan2d_infer, Executor};
use crate::error::{shape_mismatch, Result};
use crate::model::linear::Linear;
use crate::model::ModelConfig;
use crate::tensor::{silu, FeatureGrid, Real, ScanParams, SelectiveInputs, TileConfig};

const NORM_EPS: f64 = 1e-5;

/// Weights of one block: `D` model channels, `E` scan channels, `N` states.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights<T> {
    pub norm_scale: Vec<T>,
    pub norm_offset: Vec<T>,
    /// `D → 2E`: scan stream then gate.
    pub in_proj: Linear<T>,
    /// Depthwise 3×3 kernels, `E × 9` row-major.
    pub conv_weight: Vec<T>,
    pub conv_bias: Vec<T>,
    /// `E → R + 2N`: time-step features, then `B`, then `C`.
    pub x_proj: Linear<T>,
    /// `R → E`: per-channel `zRaw`.
    pub dt_proj: Linear<T>,
    /// `A`, `E × N` row-major.
    pub a: Vec<T>,
    /// Skip coefficient `D` per scan channel.
    pub skip: Vec<T>,
    /// Time-step bias per scan channel.
    pub dt_bias: Vec<T>,
    /// `E → D`.
    pub out_proj: Linear<T>,
}

impl<T: Real> BlockWeights<T> {
    /// Linear maps and kernels uniform in `±1/√fan_in`; `A` uniform in
    /// `(−1, 0)`; skip and bias uniform in `±1`; normalization starts at
    /// scale 1, offset 0.
    pub fn random(cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let (d, e, n, r) = (cfg.dim, cfg.expand, cfg.state_dim, cfg.dt_rank());
        let in_proj = Linear::random(d, 2 * e, rng);
        let conv_bound = 1.0 / 3.0;
        let conv_weight = (0..9 * e)
            .map(|_| T::of(rng.random_range(-conv_bound..=conv_bound)))
            .collect();
        let conv_bias = (0..e)
            .map(|_| T::of(rng.random_range(-conv_bound..=conv_bound)))
            .collect();
        let x_proj = Linear::random(e, r + 2 * n, rng);
        let dt_proj = Linear::random(r, e, rng);
        let a = (0..e * n)
            .map(|_| T::of(-rng.random_range(f64::EPSILON..1.0)))
            .collect();
        let skip = (0..e).map(|_| T::of(rng.random_range(-1.0..=1.0))).collect();
        let dt_bias = (0..e).map(|_| T::of(rng.random_range(-1.0..=1.0))).collect();
        let out_proj = Linear::random(e, d, rng);
        Self {
            norm_scale: vec![T::one(); d],
            norm_offset: vec![T::zero(); d],
            in_proj,
            conv_weight,
            conv_bias,
            x_proj,
            dt_proj,
            a,
            skip,
            dt_bias,
            out_proj,
        }
    }

    /// All-zero weights (normalization included): the block reduces to its
    /// residual path.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (d, e, n, r) = (cfg.dim, cfg.expand, cfg.state_dim, cfg.dt_rank());
        Self {
            norm_scale: vec![T::zero(); d],
            norm_offset: vec![T::zero(); d],
            in_proj: Linear::zeros(d, 2 * e),
            conv_weight: vec![T::zero(); 9 * e],
            conv_bias: vec![T::zero(); e],
            x_proj: Linear::zeros(e, r + 2 * n),
            dt_proj: Linear::zeros(r, e),
            a: vec![-T::one(); e * n],
            skip: vec![T::zero(); e],
            dt_bias: vec![T::zero(); e],
            out_proj: Linear::zeros(e, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.norm_scale.len()
    }

    pub fn expand(&self) -> usize {
        self.skip.len()
    }

    pub fn state_dim(&self) -> usize {
        self.a.len() / self.skip.len()
    }

    fn dt_rank(&self) -> usize {
        self.dt_proj.in_dim
    }

    pub fn is_finite(&self) -> bool {
        [
            &self.norm_scale,
            &self.norm_offset,
            &self.conv_weight,
            &self.conv_bias,
            &self.a,
            &self.skip,
            &self.dt_bias,
        ]
        .iter()
        .all(|v| v.iter().all(|x| x.is_finite()))
            && [&self.in_proj, &self.x_proj, &self.dt_proj, &self.out_proj]
                .iter()
                .all(|l| l.is_finite())
    }

    /// Sets every `A` entry, e.g. to drive `Ā` towards 0 or 1.
    pub fn with_constant_a(mut self, a: T) -> Self {
        self.a.fill(a);
        self
    }
}

fn layer_norm<T: Real>(v: &[T], scale: &[T], offset: &[T], out: &mut [T]) {
    let n = T::of(v.len() as f64);
    let mean = v.iter().fold(T::zero(), |s, &x| s + x) / n;
    let var = v.iter().fold(T::zero(), |s, &x| s + (x - mean) * (x - mean)) / n;
    let inv = T::one() / (var + T::of(NORM_EPS)).sqrt();
    for (((o, &x), &g), &b) in out.iter_mut().zip(v).zip(scale).zip(offset) {
        *o = (x - mean) * inv * g + b;
    }
}

/// Depthwise 3×3 convolution with zero padding over a position-major
/// `H × W × E` buffer.
fn depthwise_conv3x3<T: Real>(src: &[T], h: usize, w: usize, e: usize, kernel: &[T], bias: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); src.len()];
    for i in 0..h {
        for j in 0..w {
            let dst = &mut out[(i * w + j) * e..(i * w + j + 1) * e];
            dst.copy_from_slice(bias);
            for di in 0..3 {
                for dj in 0..3 {
                    let (Some(si), Some(sj)) = ((i + di).checked_sub(1), (j + dj).checked_sub(1)) else {
                        continue;
                    };
                    if si >= h || sj >= w {
                        continue;
                    }
                    let s = &src[(si * w + sj) * e..(si * w + sj + 1) * e];
                    for (c, o) in dst.iter_mut().enumerate() {
                        *o = *o + kernel[c * 9 + di * 3 + dj] * s[c];
                    }
                }
            }
        }
    }
    out
}

/// One block: normalization, input projection into a scan stream and a gate,
/// depthwise 3×3 convolution and SiLU on the stream, a 2D selective scan per
/// stream channel, SiLU gating, output projection and a residual connection.
///
/// `B` and `C` are shared by all scan channels; each channel has its own
/// `zRaw`, `A`, skip and bias. Scan channels run on `exec`'s workers and
/// results do not depend on the worker count.
pub fn block_forward<T: Real>(
    x: &FeatureGrid<T>,
    w: &BlockWeights<T>,
    tiles: TileConfig,
    exec: &Executor,
) -> Result<FeatureGrid<T>> {
    let (h, wd, d) = x.shape();
    if d != w.dim() {
        return Err(shape_mismatch(format!(
            "grid has {d} channels, block expects {}",
            w.dim()
        )));
    }
    if !tiles.matches(h, wd) {
        return Err(shape_mismatch(format!(
            "tile config is for {}x{}, grid is {h}x{wd}",
            tiles.height(),
            tiles.width()
        )));
    }
    let (l, e, n, r) = (h * wd, w.expand(), w.state_dim(), w.dt_rank());

    let mut normed = vec![T::zero(); l * d];
    for (src, dst) in x.data().chunks_exact(d).zip(normed.chunks_exact_mut(d)) {
        layer_norm(src, &w.norm_scale, &w.norm_offset, dst);
    }
    let mut projected = vec![T::zero(); l * 2 * e];
    w.in_proj.apply_rows(&normed, &mut projected);
    let (mut stream, mut gate) = (Vec::with_capacity(l * e), Vec::with_capacity(l * e));
    for p in projected.chunks_exact(2 * e) {
        stream.extend_from_slice(&p[..e]);
        gate.extend_from_slice(&p[e..]);
    }
    let mut u = depthwise_conv3x3(&stream, h, wd, e, &w.conv_weight, &w.conv_bias);
    for v in &mut u {
        *v = silu(*v);
    }

    let mut sel = vec![T::zero(); l * (r + 2 * n)];
    w.x_proj.apply_rows(&u, &mut sel);
    let mut z_raw = vec![T::zero(); l * e];
    let mut b = vec![T::zero(); l * n];
    let mut c = vec![T::zero(); l * n];
    for (p, s) in sel.chunks_exact(r + 2 * n).enumerate() {
        w.dt_proj.apply(&s[..r], &mut z_raw[p * e..(p + 1) * e]);
        b[p * n..(p + 1) * n].copy_from_slice(&s[r..r + n]);
        c[p * n..(p + 1) * n].copy_from_slice(&s[r + n..]);
    }
    let shared = SelectiveInputs::from_position_major(h, wd, n, vec![T::zero(); l], b, c)?;

    let scan_channel = |ch: usize| -> Result<Vec<T>> {
        let xs: Vec<T> = u.iter().skip(ch).step_by(e).copied().collect();
        let zs: Vec<T> = z_raw.iter().skip(ch).step_by(e).copied().collect();
        let inputs = shared.with_z_raw(zs)?;
        let params = ScanParams::new(w.a[ch * n..(ch + 1) * n].to_vec(), w.skip[ch], w.dt_bias[ch])?;
        let xg = FeatureGrid::scalar(h, wd, xs)?;
        let (y, _) = tiled_scan2d_infer(&xg, &inputs, &params, tiles, &Executor::sequential())?;
        Ok(y.into_data())
    };
    let scanned: Vec<Vec<T>> = match exec.pool() {
        Some(pool) => pool.install(|| (0..e).into_par_iter().map(scan_channel).collect::<Result<_>>())?,
        None => (0..e).map(scan_channel).collect::<Result<_>>()?,
    };

    let mut gated = vec![T::zero(); l * e];
    for (ch, ys) in scanned.iter().enumerate() {
        for (p, &y) in ys.iter().enumerate() {
            gated[p * e + ch] = y * silu(gate[p * e + ch]);
        }
    }
    let mut out = vec![T::zero(); l * d];
    w.out_proj.apply_rows(&gated, &mut out);
    for (o, &v) in out.iter_mut().zip(x.data()) {
        *o = *o + v;
    }
    FeatureGrid::new(h, wd, d, out)
}
