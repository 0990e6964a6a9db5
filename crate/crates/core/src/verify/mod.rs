//! Correctness harnesses shared by the CLI and the test suites: error metrics,
//! the oracle-equivalence sweep and the finite-difference gradient oracle.
//!
//! The finite-difference oracle differentiates the sequential reference scan,
//! never the engine it is used to check.

mod dd;

use serde::Serialize;

pub use dd::DoubleDouble;

use crate::engine::{naive_scan2d, tiled_scan2d_forward, Executor, GradBundle};
use crate::error::Result;
use crate::problem::Problem;
use crate::reference::reference_forward;
use crate::tensor::{Element, FeatureGrid, Real, ScanParams, SelectiveInputs, TileConfig};

/// `max |got − want| / max |want|`, with `0/0 = 0`.
///
/// Normalizing by the largest reference magnitude keeps cells where `y`
/// crosses zero from dominating the metric.
pub fn max_rel_err<T: Real>(got: &[T], want: &[T]) -> f64 {
    assert_eq!(got.len(), want.len());
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.as_f64().abs()));
    let diff = got
        .iter()
        .zip(want)
        .fold(0.0f64, |m, (a, b)| m.max((a.as_f64() - b.as_f64()).abs()));
    if diff == 0.0 {
        0.0
    } else if scale == 0.0 {
        f64::INFINITY
    } else {
        diff / scale
    }
}

/// Equivalence tolerance for oracle comparisons at a given precision.
pub fn oracle_tolerance<T: Element>() -> f64 {
    match T::DTYPE {
        crate::tensor::DType::F32 => 1e-5,
        crate::tensor::DType::F64 => 1e-12,
    }
}

/// One oracle-equivalence comparison.
#[derive(Debug, Clone, Serialize)]
pub struct OracleCase {
    pub suite: &'static str,
    pub variant: &'static str,
    pub height: usize,
    pub width: usize,
    pub state_dim: usize,
    pub tile: usize,
    pub seed: u64,
    pub dtype: &'static str,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Runs the tiled engine for each tile size and the naive engine against the
/// sequential reference, plus tile invariance against the largest tile.
pub fn oracle_cases<T: Element>(
    problem: &Problem<T>,
    tiles: &[usize],
    seed: u64,
    exec: &Executor,
) -> Result<Vec<OracleCase>> {
    let (h, w, n) = (problem.height(), problem.width(), problem.state_dim());
    let want = reference_forward(&problem.x, &problem.inputs, &problem.params)?.y;
    let tol = oracle_tolerance::<T>();
    let mut cases = Vec::new();
    let case = |suite, variant, tile, err: f64, tol: f64| OracleCase {
        suite,
        variant,
        height: h,
        width: w,
        state_dim: n,
        tile,
        seed,
        dtype: T::DTYPE.name(),
        max_rel_err: err,
        tolerance: tol,
        pass: err <= tol,
    };

    let big = h.max(w);
    let reference_tile = TileConfig::new(big, h, w)?;
    let y_big = tiled_scan2d_forward(&problem.x, &problem.inputs, &problem.params, reference_tile, exec)?.y;
    for &t in tiles {
        let tc = TileConfig::new(t, h, w)?;
        let y = tiled_scan2d_forward(&problem.x, &problem.inputs, &problem.params, tc, exec)?.y;
        cases.push(case("oracle", "tiled2d", t, max_rel_err(y.data(), want.data()), tol));
        if T::DTYPE == crate::tensor::DType::F64 {
            cases.push(case(
                "tile-invariance",
                "tiled2d",
                t,
                max_rel_err(y.data(), y_big.data()),
                1e-10,
            ));
        }
    }
    let (y, _) = naive_scan2d(&problem.x, &problem.inputs, &problem.params)?;
    cases.push(case("oracle", "naive2d", 0, max_rel_err(y.data(), want.data()), tol));
    Ok(cases)
}

type Dd = DoubleDouble;

/// `Σ dy·y` of the reference forward pass, evaluated in double-double.
fn linear_loss(x: &FeatureGrid<Dd>, inputs: &SelectiveInputs<Dd>, params: &ScanParams<Dd>, dy: &[Dd]) -> Result<Dd> {
    let y = reference_forward(x, inputs, params)?.y;
    Ok(y.data().iter().zip(dy).fold(Dd::zero(), |acc, (&a, &b)| acc + a * b))
}

/// Central-difference gradients of `Σ dy·y` through the sequential reference.
///
/// The loss is evaluated in double-double, so the only error left in each
/// quotient is the `O(step²)` truncation term.
pub fn finite_difference_gradients(
    problem: &Problem<f64>,
    dy: &FeatureGrid<f64>,
    step: f64,
) -> Result<GradBundle<f64>> {
    let Problem { x, inputs, params } = problem.cast::<Dd>();
    let dy: Vec<Dd> = dy.data().iter().map(|&v| Dd::of(v)).collect();
    let (h, w, n) = (x.height(), x.width(), params.state_dim());
    let s = Dd::of(step);
    let central =
        |f: &dyn Fn(Dd) -> Result<Dd>| -> Result<f64> { Ok(((f(s)? - f(-s)?) / Dd::of(2.0 * step)).as_f64()) };
    let perturb = |v: &[Dd], k: usize, s: Dd| {
        let mut v = v.to_vec();
        v[k] = v[k] + s;
        v
    };

    let mut dx = Vec::with_capacity(h * w);
    for k in 0..h * w {
        dx.push(central(&|s| {
            let xp = FeatureGrid::scalar(h, w, perturb(x.data(), k, s))?;
            linear_loss(&xp, &inputs, &params, &dy)
        })?);
    }

    let with_inputs = |z: Vec<Dd>, b: Vec<Dd>, c: Vec<Dd>| -> Result<Dd> {
        let ip = SelectiveInputs::new(h, w, n, z, b, c)?;
        linear_loss(&x, &ip, &params, &dy)
    };
    let mut dz = Vec::with_capacity(h * w);
    for k in 0..h * w {
        dz.push(central(&|s| {
            with_inputs(perturb(inputs.z_raw(), k, s), inputs.b().to_vec(), inputs.c().to_vec())
        })?);
    }
    let mut db = Vec::with_capacity(h * w * n);
    let mut dc = Vec::with_capacity(h * w * n);
    for k in 0..h * w * n {
        db.push(central(&|s| {
            with_inputs(inputs.z_raw().to_vec(), perturb(inputs.b(), k, s), inputs.c().to_vec())
        })?);
        dc.push(central(&|s| {
            with_inputs(inputs.z_raw().to_vec(), inputs.b().to_vec(), perturb(inputs.c(), k, s))
        })?);
    }

    let with_params = |a: Vec<Dd>, skip: Dd, bias: Dd| -> Result<Dd> {
        linear_loss(&x, &inputs, &ScanParams::new(a, skip, bias)?, &dy)
    };
    let mut da = Vec::with_capacity(n);
    for d in 0..n {
        da.push(central(&|s| {
            with_params(perturb(params.a(), d, s), params.skip(), params.bias())
        })?);
    }
    let dd = central(&|s| with_params(params.a().to_vec(), params.skip() + s, params.bias()))?;
    let dbias = central(&|s| with_params(params.a().to_vec(), params.skip(), params.bias() + s))?;

    Ok(GradBundle {
        dx: FeatureGrid::scalar(h, w, dx)?,
        dz_raw: FeatureGrid::scalar(h, w, dz)?,
        da,
        db,
        dc,
        dd,
        dbias,
    })
}

/// Per-component acceptance rule for gradient checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradTolerance {
    /// Relative bound on `|analytic − numeric| / max(|analytic|, |numeric|)`.
    pub rel: f64,
    /// Absolute bound used instead when `|analytic|` is below `small`.
    pub abs: f64,
    pub small: f64,
}

impl Default for GradTolerance {
    fn default() -> Self {
        Self {
            rel: 1e-6,
            abs: 1e-9,
            small: 1e-6,
        }
    }
}

/// Worst comparison within one parameter group.
#[derive(Debug, Clone, Serialize)]
pub struct GroupCheck {
    pub group: &'static str,
    pub components: usize,
    pub max_rel_err: f64,
    pub max_abs_err_small: f64,
    pub failures: usize,
    pub pass: bool,
}

fn check_group(group: &'static str, analytic: &[f64], numeric: &[f64], tol: GradTolerance) -> GroupCheck {
    let mut max_rel: f64 = 0.0;
    let mut max_abs_small: f64 = 0.0;
    let mut failures = 0;
    for (&a, &f) in analytic.iter().zip(numeric) {
        let diff = (a - f).abs();
        let ok = if a.abs() < tol.small {
            max_abs_small = max_abs_small.max(diff);
            diff <= tol.abs
        } else {
            let rel = diff / a.abs().max(f.abs());
            max_rel = max_rel.max(rel);
            rel <= tol.rel
        };
        if !ok {
            failures += 1;
        }
    }
    GroupCheck {
        group,
        components: analytic.len(),
        max_rel_err: max_rel,
        max_abs_err_small: max_abs_small,
        failures,
        pass: failures == 0,
    }
}

/// Compares every group of `analytic` with `numeric`.
pub fn compare_gradients(analytic: &GradBundle<f64>, numeric: &GradBundle<f64>, tol: GradTolerance) -> Vec<GroupCheck> {
    vec![
        check_group("dx", analytic.dx.data(), numeric.dx.data(), tol),
        check_group("dz_raw", analytic.dz_raw.data(), numeric.dz_raw.data(), tol),
        check_group("da", &analytic.da, &numeric.da, tol),
        check_group("db", &analytic.db, &numeric.db, tol),
        check_group("dc", &analytic.dc, &numeric.dc, tol),
        check_group("dd", &[analytic.dd], &[numeric.dd], tol),
        check_group("dbias", &[analytic.dbias], &[numeric.dbias], tol),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_err_metric() {
        assert_eq!(max_rel_err(&[1.0f64, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(max_rel_err(&[0.0f64], &[0.0]), 0.0);
        assert!((max_rel_err(&[1.0f64, 2.5], &[1.0, 2.0]) - 0.25).abs() < 1e-15);
        assert!(max_rel_err(&[1e-300f64], &[0.0]).is_infinite());
    }

    #[test]
    fn group_rule_uses_absolute_bound_for_small_values() {
        let tol = GradTolerance::default();
        let g = check_group("g", &[1e-8, 1.0], &[1e-8 + 5e-10, 1.0 + 5e-7], tol);
        assert!(g.pass);
        let g = check_group("g", &[1e-8], &[1e-8 + 2e-9], tol);
        assert!(!g.pass);
    }
}
