//! Straight-line reference implementations of the forecaster, compared
//! against the optimized kernels.

mod common;

use common::*;
use featcast::forecaster::{forward, spatial_attention, temporal_attention, MaskPlan};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SHAPES: [(usize, usize, usize, usize); 4] = [(3, 2, 2, 3), (4, 3, 3, 2), (2, 1, 1, 4), (5, 4, 2, 2)];

#[test]
fn factorized_attention_matches_dense_slices() {
    let mut worst: f64 = 0.0;
    for trial in 0..100u64 {
        let (n, n_c, h, w) = SHAPES[trial as usize % SHAPES.len()];
        let cfg = config(n, n_c, h, w);
        let wts = weights(&cfg, trial);
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let x = random_seq([n, h, w, cfg.d_model], &mut rng);
        let g = to_grid(&x);
        let block = &wts.blocks[0];
        let t = temporal_attention(&x, &block.temporal, cfg.n_heads).unwrap();
        let s = spatial_attention(&x, &block.spatial, cfg.n_heads).unwrap();
        worst = worst.max(max_diff(&temporal_oracle(&g, &block.temporal, cfg.n_heads), &t));
        worst = worst.max(max_diff(&spatial_oracle(&g, &block.spatial, cfg.n_heads), &s));
    }
    assert!(worst < 1e-6, "max deviation {worst}");
}

#[test]
fn forward_matches_straight_line_oracle() {
    let mut worst: f64 = 0.0;
    for trial in 0..100u64 {
        let (n, n_c, h, w) = SHAPES[trial as usize % SHAPES.len()];
        let cfg = config(n, n_c, h, w);
        let wts = weights(&cfg, 500 + trial);
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let f = random_seq([n, h, w, cfg.d_in], &mut rng);
        let plan = MaskPlan::full(n, n_c, h, w).unwrap();
        let pred = forward(&f, &plan, &wts, &[]).unwrap().pred;
        worst = worst.max(max_diff(&forward_oracle(&f, &plan, &wts), &pred));
    }
    assert!(worst < 1e-6, "max deviation {worst}");
}
