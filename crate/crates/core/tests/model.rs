use scan2d::engine::Executor;
use scan2d::model::{Model, ModelConfig};
use scan2d::tensor::{FeatureGrid, MaskedGrid};

const H: usize = 8;
const W: usize = 8;
const D: usize = 16;

fn config() -> ModelConfig {
    ModelConfig {
        dim: D,
        expand: 8,
        state_dim: 16,
        attn_hidden: 16,
        blocks: 1,
    }
}

fn patches(seed: u64) -> FeatureGrid<f64> {
    FeatureGrid::from_fn(H, W, D, |i, j, c| {
        (((i * 131 + j * 37 + c * 11) as u64 + seed * 977) as f64 * 0.377).sin()
    })
    .unwrap()
}

fn tissue() -> Vec<bool> {
    (0..H * W).map(|k| !(k / W + k % W).is_multiple_of(3)).collect()
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn with_a(a: f64) -> Model<f64> {
    let mut m = Model::random(config(), 11).unwrap();
    m.blocks = m.blocks.into_iter().map(|b| b.with_constant_a(a)).collect();
    m
}

fn perturbed(g: &FeatureGrid<f64>, i: usize, j: usize) -> FeatureGrid<f64> {
    FeatureGrid::from_fn(H, W, D, |a, b, c| {
        // varies across channels so the layer norm cannot cancel it
        g.get(a, b, c) + if (a, b) == (i, j) { 1.5 * c as f64 } else { 0.0 }
    })
    .unwrap()
}

#[test]
fn non_tissue_values_never_reach_the_output() {
    let model = Model::<f64>::random(config(), 3).unwrap();
    let token = vec![0.25; D];
    let mask = tissue();
    let base = patches(0);
    let noisy = FeatureGrid::from_fn(H, W, D, |i, j, c| {
        if mask[i * W + j] {
            base.get(i, j, c)
        } else {
            1e3 * ((i + j + c) as f64).cos()
        }
    })
    .unwrap();
    let exec = Executor::sequential();
    let a = model
        .forward(&MaskedGrid::new(base, mask.clone(), token.clone()).unwrap(), 3, &exec)
        .unwrap();
    let b = model
        .forward(&MaskedGrid::new(noisy, mask, token).unwrap(), 3, &exec)
        .unwrap();
    assert_eq!(bits(&a.aggregate), bits(&b.aggregate));
    assert_eq!(bits(a.attention.data()), bits(b.attention.data()));
}

#[test]
fn attention_covers_tissue_only() {
    let model = Model::<f64>::random(config(), 4).unwrap();
    let mask = tissue();
    let out = model
        .forward(
            &MaskedGrid::new(patches(1), mask.clone(), vec![0.0; D]).unwrap(),
            4,
            &Executor::sequential(),
        )
        .unwrap();
    assert_eq!(out.aggregate.len(), D);
    assert!(out.aggregate.iter().all(|v| v.is_finite()));
    let weights = out.attention.data();
    assert!(weights
        .iter()
        .zip(&mask)
        .all(|(&w, &t)| if t { w > 0.0 } else { w == 0.0 }));
    assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn blocks_preserve_the_grid_shape() {
    for blocks in [1, 2] {
        let model = Model::<f64>::random(ModelConfig { blocks, ..config() }, 5).unwrap();
        let g = patches(2);
        let y = model.encode(&g, 3, &Executor::sequential()).unwrap();
        assert_eq!(y.shape(), g.shape());
        assert!(y.data().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn vanishing_decay_keeps_the_receptive_field_local() {
    // Ā underflows to zero: each state only sees its own conv window
    let model = with_a(-1e6);
    let exec = Executor::sequential();
    let g = patches(3);
    let base = model.encode(&g, 3, &exec).unwrap();
    let (pi, pj) = (6, 1);
    let moved = model.encode(&perturbed(&g, pi, pj), 3, &exec).unwrap();
    let mut changed = 0;
    for i in 0..H {
        for j in 0..W {
            let same = bits(base.pixel(i, j)) == bits(moved.pixel(i, j));
            let near = i.abs_diff(pi) <= 1 && j.abs_diff(pj) <= 1;
            assert!(same || near, "({i}, {j}) changed");
            changed += usize::from(!same);
        }
    }
    assert!(changed > 0);
}

#[test]
fn slow_decay_reaches_the_far_corner() {
    let model = with_a(-1e-8);
    let exec = Executor::sequential();
    let g = patches(4);
    let base = model.encode(&g, 3, &exec).unwrap();
    let moved = model.encode(&perturbed(&g, 0, 0), 3, &exec).unwrap();
    let diff: f64 = base
        .pixel(H - 1, W - 1)
        .iter()
        .zip(moved.pixel(H - 1, W - 1))
        .map(|(a, b)| (a - b).abs())
        .sum();
    assert!(diff > 1e-9, "corner moved by {diff}");
}

#[test]
fn worker_count_does_not_change_the_output() {
    let model = Model::<f64>::random(config(), 6).unwrap();
    let input = MaskedGrid::new(patches(5), tissue(), vec![-0.5; D]).unwrap();
    let one = model.forward(&input, 3, &Executor::sequential()).unwrap();
    for threads in [2, 8] {
        let other = model
            .forward(&input, 3, &Executor::with_threads(threads).unwrap())
            .unwrap();
        assert_eq!(bits(&one.aggregate), bits(&other.aggregate), "{threads} workers");
        assert_eq!(bits(one.attention.data()), bits(other.attention.data()));
    }
}

#[test]
fn mismatched_patch_width_is_rejected() {
    let model = Model::<f64>::random(config(), 7).unwrap();
    let g = FeatureGrid::<f64>::zeros(4, 4, D + 1).unwrap();
    let input = MaskedGrid::new(g, vec![true; 16], vec![0.0; D + 1]).unwrap();
    assert!(model.forward(&input, 2, &Executor::sequential()).is_err());
    assert!(MaskedGrid::new(patches(0), vec![false; H * W], vec![0.0; D])
        .and_then(|m| model.forward(&m, 2, &Executor::sequential()))
        .is_err());
}
