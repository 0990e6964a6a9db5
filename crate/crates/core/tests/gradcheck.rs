use scan2d::engine::{tiled_scan2d_backward, tiled_scan2d_forward, Executor};
use scan2d::tensor::{FeatureGrid, TileConfig};
use scan2d::verify::{compare_gradients, finite_difference_gradients, GradTolerance};
use scan2d::Problem;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn random_five_by_four_matches_finite_differences() {
    let p = Problem::<f64>::random(5, 4, 3, 42).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let dy = FeatureGrid::scalar(5, 4, (0..20).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    for t in [1, 2, 3, 5] {
        let tc = TileConfig::new(t, 5, 4).unwrap();
        let fwd = tiled_scan2d_forward(&p.x, &p.inputs, &p.params, tc, &Executor::sequential()).unwrap();
        let g = tiled_scan2d_backward(&fwd.saved, &dy).unwrap();
        let fd = finite_difference_gradients(&p, &dy, 1e-6).unwrap();
        for check in compare_gradients(&g, &fd, GradTolerance::default()) {
            println!("T={t} {check:?}");
            assert!(check.pass, "T={t} {check:?}");
        }
    }
}

#[test]
fn twenty_random_instances_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let exec = Executor::with_threads(2).unwrap();
    for case in 0..20 {
        let (h, w, n) = (
            rng.random_range(1..=6),
            rng.random_range(1..=6),
            rng.random_range(1..=4),
        );
        let t = rng.random_range(1..=h.max(w));
        let p = Problem::<f64>::random(h, w, n, rng.random()).unwrap();
        let dy = FeatureGrid::scalar(h, w, (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let tc = TileConfig::new(t, h, w).unwrap();
        let fwd = tiled_scan2d_forward(&p.x, &p.inputs, &p.params, tc, &exec).unwrap();
        let g = tiled_scan2d_backward(&fwd.saved, &dy).unwrap();
        let fd = finite_difference_gradients(&p, &dy, 1e-6).unwrap();
        for check in compare_gradients(&g, &fd, GradTolerance::default()) {
            assert!(check.pass, "case {case} ({h}x{w}, N={n}, T={t}) {check:?}");
        }
    }
}
