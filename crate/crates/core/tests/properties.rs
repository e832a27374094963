use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ctxsched_core::catalog::{energy_of, AcceleratorSpec, CatalogDocument};
use ctxsched_core::confidence_graph::{
    build_cograph, consolidate, neighborhood, normalize_invert, GraphParams,
};
use ctxsched_core::context::{ncc, similarity};
use ctxsched_core::loader::{LoadKind, ModelLoader};
use ctxsched_core::scheduler::{argmax, normalize_costs, score_pairs, valid_set};
use ctxsched_core::sim::{
    gen_trace, oracle_choose, ModelBehavior, Objective, Scenario, Segment, SUCCESS_IOU,
};
use ctxsched_core::{
    build_prediction_map, run, BoundingBox, Catalog, CharacterizationTrace, GrayscaleImage,
    Knobs, ModelId, ModelProfile, Pair, Policy, RunOptions, SchedulerConfig, SchedulerState,
};

fn random_scenario(rng: &mut ChaCha8Rng, models: &[ModelId], frames: std::ops::RangeInclusive<u64>) -> Scenario {
    let segments = (0..rng.random_range(1..=3))
        .map(|_| {
            let mut chosen = models.to_vec();
            chosen.shuffle(rng);
            chosen.truncate(rng.random_range(1..=models.len()));
            Segment {
                frames: rng.random_range(frames.clone()),
                models: chosen
                    .into_iter()
                    .map(|m| {
                        let b = ModelBehavior {
                            conf_mean: rng.random_range(0.0..=1.0),
                            conf_sigma: rng.random_range(0.0..0.3),
                            iou_mean: rng.random_range(0.0..=1.0),
                            iou_sigma: rng.random_range(0.0..0.3),
                        };
                        (m, b)
                    })
                    .collect(),
                texture_seed: rng.random_bool(0.5).then(|| rng.random()),
            }
        })
        .collect();
    Scenario {
        width: 24,
        height: 16,
        segments,
    }
}

fn builtin_models() -> Vec<ModelId> {
    Catalog::builtin().models().cloned().collect()
}

fn random_trace(seed: u64, frames: std::ops::RangeInclusive<u64>) -> CharacterizationTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scenario = random_scenario(&mut rng, &builtin_models(), frames);
    gen_trace(&scenario, rng.random()).unwrap()
}

// catalog

proptest! {
    #[test]
    fn energy_is_bilinear(t in 0.0f64..10.0, p in 0.0f64..100.0) {
        prop_assert!((energy_of(2.0 * t, p) - 2.0 * energy_of(t, p)).abs() <= 1e-12 * (1.0 + energy_of(t, p)));
        prop_assert!((energy_of(t, 3.0 * p) - 3.0 * energy_of(t, p)).abs() <= 1e-12 * (1.0 + energy_of(t, p)));
    }

    #[test]
    fn accepted_profiles_respect_tolerance(
        rows in prop::collection::vec((0.001f64..1.0, 0.1f64..20.0, 0.8f64..1.2), 1..6)
    ) {
        let profiles: Vec<ModelProfile> = rows
            .iter()
            .enumerate()
            .map(|(i, &(l, p, skew))| ModelProfile {
                model: format!("m{i}").into(),
                accelerator: "gpu".into(),
                avg_latency_s: l,
                avg_power_w: p,
                avg_energy_j: l * p * skew,
                memory_bytes: 10,
                load_time_s: 0.0,
                load_energy_j: 0.0,
            })
            .collect();
        let doc = CatalogDocument {
            energy_tolerance: None,
            accelerators: vec![AcceleratorSpec { name: "gpu".into(), memory_bytes: 100, gpu: Some(true) }],
            models: profiles.iter().map(|p| p.model.clone()).collect(),
            compatibility: profiles.iter().map(|p| (p.model.clone(), vec!["gpu".into()])).collect(),
            profiles,
        };
        if let Ok(catalog) = Catalog::from_document(doc) {
            for p in catalog.profiles() {
                prop_assert!((p.avg_energy_j - p.avg_latency_s * p.avg_power_w).abs() <= 0.05 * p.avg_energy_j);
            }
            // save/load round trip
            let again = Catalog::from_json_str(&catalog.to_json_string()).unwrap();
            prop_assert_eq!(again, catalog);
        }
    }
}

#[test]
fn builtin_catalog_round_trips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("catalog.json");
    let catalog = Catalog::builtin();
    catalog.save(&path).unwrap();
    assert_eq!(Catalog::load(&path).unwrap(), catalog);
}

// confidence graph

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prediction_map_is_deterministic_and_bounded(seed in any::<u64>(), thr in 0.0f64..1.5) {
        let trace = random_trace(seed, 5..=30);
        let params = GraphParams { distance_threshold: thr, ..GraphParams::default() };
        let a = build_prediction_map(&trace, params).unwrap();
        let b = build_prediction_map(&trace, params).unwrap();
        prop_assert_eq!(a.to_json_string(), b.to_json_string());
        for (_, preds) in a.entries() {
            for p in preds {
                prop_assert!((0.0..=1.0).contains(&p.predicted_accuracy));
                prop_assert!(p.distance >= 0.0 && p.distance <= thr);
            }
        }
        let cg = normalize_invert(&build_cograph(&trace, 0.1).unwrap());
        for (_, _, c) in cg.arcs() {
            prop_assert!((0.0..=1.0).contains(&c));
        }
    }

    #[test]
    fn neighborhoods_grow_with_threshold(seed in any::<u64>(), lo in 0.0f64..1.0, extra in 0.0f64..1.0) {
        let trace = random_trace(seed, 5..=30);
        let cg = normalize_invert(&build_cograph(&trace, 0.1).unwrap());
        for node in cg.nodes() {
            let small: Vec<_> = neighborhood(&cg, &node.key(), lo).iter().map(|(n, _)| n.key()).collect();
            let big: Vec<_> = neighborhood(&cg, &node.key(), lo + extra).iter().map(|(n, _)| n.key()).collect();
            prop_assert!(small.iter().all(|k| big.contains(k)));
        }
    }

    #[test]
    fn cograph_ignores_frame_order(seed in any::<u64>()) {
        let trace = random_trace(seed, 5..=30);
        let mut frames = trace.frames().to_vec();
        frames.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        for (i, f) in frames.iter_mut().enumerate() {
            f.frame_index = i as u64;
        }
        let shuffled = CharacterizationTrace::from_frames(frames).unwrap();
        let a = build_cograph(&trace, 0.1).unwrap();
        let b = build_cograph(&shuffled, 0.1).unwrap();
        let ea: Vec<_> = a.edges().collect();
        let eb: Vec<_> = b.edges().collect();
        prop_assert_eq!(ea, eb);
    }

    #[test]
    fn consolidate_ignores_input_order(seed in any::<u64>(), thr in 0.0f64..2.0) {
        let trace = random_trace(seed, 5..=30);
        let cg = normalize_invert(&build_cograph(&trace, 0.1).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for node in cg.nodes() {
            let mut neigh = neighborhood(&cg, &node.key(), thr);
            let before = consolidate(&neigh);
            neigh.shuffle(&mut rng);
            prop_assert_eq!(consolidate(&neigh), before);
        }
    }
}

// context

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn similarity_never_exceeds_frame_ncc(
        seed in any::<u64>(),
        w in 4u32..40,
        h in 4u32..40,
        has_boxes in any::<(bool, bool)>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = GrayscaleImage::from_fn(w, h, |_, _| rng.random()).unwrap();
        let c = GrayscaleImage::from_fn(w, h, |_, _| rng.random()).unwrap();
        let rbox = |rng: &mut ChaCha8Rng| {
            let x0 = rng.random_range(0.0..w as f64 - 1.0);
            let y0 = rng.random_range(0.0..h as f64 - 1.0);
            BoundingBox::new(x0, y0, rng.random_range(x0 + 0.5..=w as f64), rng.random_range(y0 + 0.5..=h as f64)).unwrap()
        };
        let pb = has_boxes.0.then(|| rbox(&mut rng));
        let cb = has_boxes.1.then(|| rbox(&mut rng));
        let s = similarity(&p, &c, pb.as_ref(), cb.as_ref()).unwrap().value();
        prop_assert!(s <= ncc(&p, &c).unwrap().value());
        if pb.is_none() || cb.is_none() {
            prop_assert!(s <= 0.0);
        }
    }
}

// scheduler

fn scheduler_for(seed: u64, threshold: f64) -> (CharacterizationTrace, SchedulerState) {
    let trace = random_trace(seed, 10..=40);
    let config = SchedulerConfig {
        accuracy_threshold: threshold,
        momentum: 3,
        ..SchedulerConfig::default()
    };
    let map = build_prediction_map(&trace, config.graph_params()).unwrap();
    let state = SchedulerState::new(config, Arc::new(map), &Catalog::builtin()).unwrap();
    (trace, state)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn scheduler_invariants(seed in any::<u64>(), threshold in 0.0f64..0.9) {
        let (trace, mut state) = scheduler_for(seed, threshold);
        let mut pair = state.initial_pair();
        for f in trace.frames() {
            let outcome = f.outcome(&pair.model);
            let c = outcome.map_or(0.0, |o| o.confidence);
            let bbox = outcome.and_then(|o| o.bbox.as_ref());
            let buffers = state.buffers().clone();
            let mut twin = state.clone();
            let d = state.schedule(&pair, c, f.frame.as_ref(), bbox).unwrap();
            // determinism
            prop_assert_eq!(&twin.schedule(&pair, c, f.frame.as_ref(), bbox).unwrap(), &d);
            if d.similarity.value() * c >= threshold {
                prop_assert!(!d.rescheduled);
                prop_assert_eq!(&d.pair, &pair);
                prop_assert_eq!(state.buffers(), &buffers);
            } else {
                prop_assert!(d.rescheduled);
                prop_assert_eq!(argmax(&d.scores), Some(&d.pair));
                // valid-set soundness
                let averaged: BTreeMap<ModelId, f64> = d
                    .predictions
                    .iter()
                    .map(|p| {
                        let buf = state.buffers().get(&p.model).unwrap();
                        (p.model.clone(), buf.iter().sum::<f64>() / buf.len() as f64)
                    })
                    .collect();
                let schedulable = |m: &ModelId| Catalog::builtin().pairs_for(m).next().is_some();
                if averaged.iter().any(|(m, &r)| r >= threshold && schedulable(m)) {
                    prop_assert!(averaged[&d.pair.model] >= threshold);
                }
            }
            pair = d.pair;
        }
    }

    #[test]
    fn uniform_knob_scaling_keeps_the_choice(
        r in prop::collection::vec(0.0f64..1.0, 8),
        k in (0.0f64..2.0, 0.0f64..2.0, 0.01f64..2.0),
        c in 0.01f64..100.0,
    ) {
        let catalog = Catalog::builtin();
        let costs = normalize_costs(&catalog);
        let averaged: BTreeMap<ModelId, f64> = catalog.models().cloned().zip(r).collect();
        let valid = valid_set(&averaged, 0.25);
        let a = Knobs::new(k.0, k.1, k.2).unwrap();
        let b = Knobs::new(k.0 * c, k.1 * c, k.2 * c).unwrap();
        let (sa, sb) = (score_pairs(&averaged, &valid, &costs, &a), score_pairs(&averaged, &valid, &costs, &b));
        prop_assert_eq!(argmax(&sa), argmax(&sb));
    }
}

// loader

proptest! {
    #[test]
    fn loader_accounting_and_isolation(requests in prop::collection::vec((0usize..8, 0usize..2), 1..200)) {
        let catalog = Catalog::builtin();
        let models: Vec<ModelId> = catalog.models().cloned().collect();
        let mut loader = ModelLoader::new(&catalog);
        let (mut time, mut expected) = (0.0, 0.0);
        for (m, a) in requests {
            let pair = Pair::new(models[m].clone(), ["dla", "gpu"][a]);
            if !catalog.is_compatible(&pair) {
                continue;
            }
            let other = ["gpu", "dla"][a].into();
            let before = loader.memory(&other).unwrap().clone();
            let resident = loader.is_resident(&pair);
            let out = loader.request(&pair, &catalog).unwrap();
            prop_assert_eq!(loader.memory(&other).unwrap(), &before);
            prop_assert_eq!(out.kind == LoadKind::Hit, resident);
            if !resident {
                expected += catalog.profile(&pair).unwrap().load_time_s;
            }
            time += out.time_cost_s;
            let mem = loader.memory(&pair.accelerator).unwrap();
            prop_assert!(mem.used_bytes() <= mem.capacity_bytes());
            let again = loader.request(&pair, &catalog).unwrap();
            prop_assert_eq!(again.kind, LoadKind::Hit);
            prop_assert_eq!(again.time_cost_s, 0.0);
        }
        prop_assert!((time - expected).abs() < 1e-9);
    }
}

// simulation

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn reports_are_self_consistent(seed in any::<u64>()) {
        let trace = random_trace(seed, 10..=40);
        let catalog = Catalog::builtin();
        let options = RunOptions::default();
        let config = SchedulerConfig::default();
        let map = Arc::new(build_prediction_map(&trace, config.graph_params()).unwrap());
        let shift = run(&trace, &catalog, &Policy::Shift { config, map }, &options).unwrap();
        prop_assert!(shift.is_consistent());
        // overhead is latency only: energy is inference plus loads
        let mut energy = 0.0;
        for f in &shift.per_frame {
            let p = catalog.profile(&f.pair).unwrap();
            prop_assert!((f.energy_j - (p.avg_energy_j + f.load_energy_j)).abs() < 1e-12);
            prop_assert!((f.latency_s - (p.avg_latency_s + f.load_time_s + options.overhead_s)).abs() < 1e-12);
            energy += f.energy_j;
        }
        prop_assert!((energy - shift.metrics.total_energy_j).abs() < 1e-9);
        let swaps = shift.per_frame.windows(2).filter(|w| w[0].pair != w[1].pair).count();
        prop_assert_eq!(swaps, shift.metrics.model_swaps);

        let some_pair = catalog.pairs().nth((seed % 18) as usize).unwrap().clone();
        let single = run(&trace, &catalog, &Policy::SingleModel(some_pair), &options).unwrap();
        prop_assert!(single.is_consistent());
        prop_assert_eq!((single.metrics.model_swaps, single.metrics.pairs_used), (0, 1));
        prop_assert_eq!(single.metrics.total_load_energy_j, 0.0);

        let oracle_a = run(&trace, &catalog, &Policy::Oracle(Objective::Accuracy), &options).unwrap();
        let every_frame_qualifies = trace
            .frames()
            .iter()
            .all(|f| f.per_model.values().any(|o| o.iou >= SUCCESS_IOU));
        if every_frame_qualifies {
            prop_assert!(oracle_a.metrics.success_rate >= shift.metrics.success_rate);
            prop_assert_eq!(oracle_a.metrics.success_rate, 1.0);
        }
    }

    #[test]
    fn oracle_energy_is_minimal_over_the_qualifying_set(seed in any::<u64>()) {
        let trace = random_trace(seed, 5..=20);
        let catalog = Catalog::builtin();
        for f in trace.frames() {
            let chosen = oracle_choose(f, &catalog, Objective::Energy).unwrap();
            let best = catalog.profile(&chosen).unwrap().avg_energy_j;
            let qualifying: Vec<&ModelId> = f.per_model.iter().filter(|(_, o)| o.iou >= SUCCESS_IOU).map(|(m, _)| m).collect();
            let pool: Vec<&ModelId> = if qualifying.is_empty() { f.per_model.keys().collect() } else { qualifying };
            for m in pool {
                for p in catalog.pairs_for(m) {
                    prop_assert!(best <= catalog.profile(p).unwrap().avg_energy_j);
                }
            }
        }
    }
}

#[test]
fn generated_traces_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("demo.jsonl");
    let trace = gen_trace(&Scenario::demo(), 3).unwrap();
    trace.save(&path).unwrap();
    let loaded = ctxsched_core::load_trace(&path, &Catalog::builtin()).unwrap();
    assert_eq!(loaded.to_jsonl_string(), trace.to_jsonl_string());
}
