//! Shared fixtures for the benchmarks.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ctxsched_core::sim::{gen_trace, Scenario};
use ctxsched_core::{
    build_prediction_map, BoundingBox, Catalog, CharacterizationTrace, GrayscaleImage,
    SchedulerConfig, SchedulerState,
};

pub const FRAME_SIDE: u32 = 640;

/// Two noisy 640x640 frames and a box on each.
pub fn frame_pair(seed: u64) -> (GrayscaleImage, GrayscaleImage, BoundingBox, BoundingBox) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<u8> = (0..FRAME_SIDE * FRAME_SIDE).map(|_| rng.random()).collect();
    let p = GrayscaleImage::new(FRAME_SIDE, FRAME_SIDE, base.clone()).unwrap();
    let c = GrayscaleImage::new(
        FRAME_SIDE,
        FRAME_SIDE,
        base.iter().map(|&v| v.saturating_add(rng.random_range(0..8))).collect(),
    )
    .unwrap();
    let pb = BoundingBox::new(100.0, 120.0, 380.0, 400.0).unwrap();
    let cb = BoundingBox::new(110.0, 118.0, 390.0, 410.0).unwrap();
    (p, c, pb, cb)
}

pub fn demo_trace() -> CharacterizationTrace {
    gen_trace(&Scenario::demo(), 1).unwrap()
}

pub fn scheduler(trace: &CharacterizationTrace, catalog: &Catalog) -> SchedulerState {
    let config = SchedulerConfig::default();
    let map = build_prediction_map(trace, config.graph_params()).unwrap();
    SchedulerState::new(config, Arc::new(map), catalog).unwrap()
}
