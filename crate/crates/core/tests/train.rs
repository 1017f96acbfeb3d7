use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seqmot_core::geometry::point_in_box;
use seqmot_core::ssr::{confidence_target, SsrConfig, SsrModel};
use seqmot_core::synth::{generate_scene, NoiseModel, ScenarioConfig};
use seqmot_core::train::{
    apply_augment, augment, generate_training_sequences, iterative_refine_step, sample_augment, train, AugmentConfig,
    GenerationConfig, TrainConfig, TrainSequence,
};
use seqmot_core::{Box7, Detection, Frame, GtObject, ObjectClass, PipelineConfig, Scene, SceneHeader};

fn small_ssr() -> SsrConfig {
    SsrConfig {
        feat_dim: 16,
        point_hidden: 16,
        anchors_per_frame: 4,
        group_cap: 8,
        pos_dim: 8,
        attn_layers: 1,
        attn_heads: 2,
        ffn_dim: 16,
        head_hidden: 16,
        ..SsrConfig::for_class(ObjectClass::Car)
    }
}

fn pipeline(window: usize) -> PipelineConfig {
    PipelineConfig {
        window,
        max_refine_context: window,
        ..PipelineConfig::default()
    }
}

fn scenes(n: usize, noise: NoiseModel, seed: u64) -> Vec<Scene> {
    let cfg = ScenarioConfig {
        n_objects: 6,
        n_frames: 16,
        noise,
        seed,
        ..ScenarioConfig::for_class(ObjectClass::Car)
    };
    (0..n).map(|i| generate_scene(&cfg, i as u64).unwrap().scene).collect()
}

fn sequences(n: usize) -> Vec<TrainSequence> {
    let gen = GenerationConfig {
        stride: 3,
        max_sequences: Some(n),
        ..GenerationConfig::default()
    };
    let seqs = generate_training_sequences(&scenes(4, NoiseModel::moderate(), 3), ObjectClass::Car, &pipeline(6), &gen, 2.0).unwrap();
    assert_eq!(seqs.len(), n);
    seqs
}

#[test]
fn perfect_detections_give_targets_equal_to_inputs() {
    let gen = GenerationConfig {
        birth_thresholds: vec![0.0],
        kill_ages: vec![3],
        ..GenerationConfig::default()
    };
    let seqs = generate_training_sequences(&scenes(2, NoiseModel::none(), 9), ObjectClass::Car, &pipeline(5), &gen, 2.0).unwrap();
    assert!(!seqs.is_empty());
    let mut valid = 0;
    for s in &seqs {
        assert!(s.len() <= 6);
        for (state, t) in s.states.iter().zip(&s.targets.frames) {
            assert_eq!(t.center, state.bbox.center());
            assert_eq!(t.yaw, state.bbox.theta);
            assert!((t.velocity[0] - state.vx).abs() < 1e-12 && (t.velocity[1] - state.vy).abs() < 1e-12);
            valid += t.valid as usize;
        }
        if let Some(size) = s.targets.size {
            assert_eq!(size, s.states.last().unwrap().bbox.size());
        }
    }
    assert!(valid > 0);
}

#[test]
fn grid_runs_the_tracker_for_every_pair() {
    let scene = &scenes(1, NoiseModel::moderate(), 4)[..1];
    let all = generate_training_sequences(scene, ObjectClass::Car, &pipeline(6), &GenerationConfig::default(), 2.0).unwrap();
    let mut total = 0;
    for (c, k) in GenerationConfig::default().runs() {
        let one = GenerationConfig {
            birth_thresholds: vec![c],
            kill_ages: vec![k],
            ..GenerationConfig::default()
        };
        total += generate_training_sequences(scene, ObjectClass::Car, &pipeline(6), &one, 2.0).unwrap().len();
    }
    assert_eq!(all.len(), total);
}

/// Ground truth parked far from a stream of false detections.
fn false_positive_scene() -> Scene {
    let frames = (0..10)
        .map(|t| {
            let gt = vec![GtObject {
                id: 0,
                bbox: Box7::new(100.0, 0.0, 0.8, 4.0, 2.0, 1.6, 0.0).unwrap(),
                velocity: [0.0, 0.0],
            }];
            let detections = (0..3)
                .map(|k| Detection {
                    bbox: Box7::new(-50.0 + 10.0 * k as f64, 0.1 * t as f64, 0.8, 4.0, 2.0, 1.6, 0.0).unwrap(),
                    conf: 0.4,
                    class: ObjectClass::Car,
                    t,
                    velocity: Some([0.2, 0.0]),
                })
                .collect();
            Frame {
                t,
                points: vec![[-50.0, 0.0, 0.5], [-40.0, 0.2, 0.6]],
                detections,
                gt: Some(gt),
            }
        })
        .collect();
    Scene {
        header: SceneHeader {
            schema_version: 1,
            dt: 0.5,
            class: ObjectClass::Car,
            scene_id: "fp".into(),
        },
        frames,
    }
}

#[test]
fn false_positive_windows_get_zero_confidence_targets() {
    let ssr = SsrConfig::for_class(ObjectClass::Car);
    let seqs = generate_training_sequences(&[false_positive_scene()], ObjectClass::Car, &pipeline(5), &GenerationConfig::default(), ssr.match_radius).unwrap();
    assert!(!seqs.is_empty());
    for s in &seqs {
        assert!(s.targets.size.is_none());
        for (state, t) in s.states.iter().zip(&s.targets.frames) {
            assert!(!t.valid);
            assert_eq!(confidence_target(state.bbox.center(), &t.gt_centers, ssr.alpha, ssr.match_radius), 0.0);
        }
    }
}

#[test]
fn scenes_without_ground_truth_are_rejected() {
    let mut scene = false_positive_scene();
    scene.frames[3].gt = None;
    let err = generate_training_sequences(&[scene], ObjectClass::Car, &pipeline(5), &GenerationConfig::default(), 2.0).unwrap_err();
    assert!(matches!(err, seqmot_core::Error::NoGroundTruth(_)));
}

#[test]
fn identity_augmentation_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for s in sequences(20) {
        let (out, p) = augment(&s, &AugmentConfig::identity(), &mut rng).unwrap();
        assert_eq!(p.dropped, 0);
        assert_eq!(out, s);
    }
}

#[test]
fn sampled_parameters_stay_in_their_intervals() {
    let window = 8;
    let cfg = AugmentConfig::standard(window);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut seen = HashMap::new();
    let mut track = |name: &'static str, v: f64| {
        let e = seen.entry(name).or_insert((f64::INFINITY, f64::NEG_INFINITY));
        e.0 = e.0.min(v);
        e.1 = e.1.max(v);
    };
    for i in 0..10_000 {
        let len = 1 + i % (window + 1);
        let p = sample_augment(&cfg, len, &mut rng);
        let kept = len - p.dropped;
        if len > 1 {
            assert!((1..=window.min(len - 1)).contains(&p.dropped));
            assert!(kept >= 1.max(len.saturating_sub(window)) && kept < len);
        } else {
            assert_eq!(p.dropped, 0);
        }
        track("seq_rotation", p.seq_rotation);
        track("seq_scale", p.seq_scale);
        track("box_tx", p.box_translation[0]);
        track("box_ty", p.box_translation[1]);
        track("box_rotation", p.box_rotation);
        track("box_scale", p.box_scale);
        for j in &p.jitter {
            track("jitter_xy", j[0]);
            track("jitter_xy", j[1]);
            track("jitter_yaw", j[2]);
        }
    }
    let bounds = [
        ("seq_rotation", -1.57, 1.57),
        ("seq_scale", 0.95, 1.05),
        ("box_tx", -0.2, 0.2),
        ("box_ty", -0.2, 0.2),
        ("box_rotation", -0.25, 0.25),
        ("box_scale", 0.9, 1.1),
        ("jitter_xy", -0.1, 0.1),
        ("jitter_yaw", -0.1, 0.1),
    ];
    for (name, lo, hi) in bounds {
        let (min, max) = seen[name];
        assert!(min >= lo && max <= hi, "{name}: [{min}, {max}]");
        // The draws should also cover the interval.
        assert!(min < lo + 0.01 * (hi - lo) && max > hi - 0.01 * (hi - lo), "{name}: [{min}, {max}]");
    }
}

#[test]
fn sequence_transform_preserves_point_membership() {
    let cfg = AugmentConfig {
        seq_rotation: 1.57,
        seq_scale: 0.05,
        reflect_prob: 0.5,
        ..AugmentConfig::identity()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for s in sequences(40) {
        let (out, _) = augment(&s, &cfg, &mut rng).unwrap();
        for f in 0..s.len() {
            for (p, q) in s.points[f].iter().zip(&out.points[f]) {
                let before = point_in_box(&s.states[f].bbox, p.xyz(), 1.0);
                let after = point_in_box(&out.states[f].bbox, q.xyz(), 1.0 + 1e-9);
                assert!(!before || after);
            }
            // Target offsets from the input box scale with the transform.
            let t0 = &s.targets.frames[f];
            let t1 = &out.targets.frames[f];
            let d0 = (t0.center[0] - s.states[f].bbox.x).hypot(t0.center[1] - s.states[f].bbox.y);
            let d1 = (t1.center[0] - out.states[f].bbox.x).hypot(t1.center[1] - out.states[f].bbox.y);
            assert!(d1 <= d0 * 1.05 + 1e-9 && d1 >= d0 * 0.95 - 1e-9);
        }
    }
}

#[test]
fn box_only_augmentations_leave_targets_alone() {
    let cfg = AugmentConfig {
        box_translation: 0.2,
        box_rotation: 0.25,
        box_scale: 0.1,
        jitter_translation: 0.1,
        jitter_rotation: 0.1,
        ..AugmentConfig::identity()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for s in sequences(10) {
        let (out, _) = augment(&s, &cfg, &mut rng).unwrap();
        assert_eq!(out.targets, s.targets);
        assert_eq!(out.points, s.points);
        assert_ne!(out.states, s.states);
    }
}

#[test]
fn dropping_keeps_arrays_aligned() {
    let cfg = AugmentConfig {
        drop_leading: true,
        max_drop: 6,
        ..AugmentConfig::identity()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for s in sequences(30) {
        let p = sample_augment(&cfg, s.len(), &mut rng);
        let out = apply_augment(&s, &p).unwrap();
        out.validate().unwrap();
        assert_eq!(out.len(), s.len() - p.dropped);
        assert_eq!(out.states[..], s.states[p.dropped..]);
    }
}

#[test]
fn iterative_passes_feed_back_refined_states() {
    let model = SsrModel::new(small_ssr()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let seq = sequences(5).into_iter().find(|s| s.points.iter().any(|p| !p.is_empty())).unwrap();
    let mut counts = [0usize; 5];
    for epoch in [0, 4, 9] {
        for _ in 0..50 {
            let (input, n) = iterative_refine_step(&model, seq.input().unwrap(), epoch, &mut rng).unwrap();
            assert!((1..=4).contains(&n));
            if n == 1 {
                assert_eq!(input.states, seq.states);
            }
            counts[n] += 1;
        }
    }
    assert!(counts[1] > 0 && counts[4] > 0);
}

fn train_cfg(seed: u64, epochs: usize, iterative: bool) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 8,
        seed,
        iterative,
        ..TrainConfig::new(6)
    }
}

#[test]
fn training_is_deterministic() {
    let data = sequences(16);
    let run = || {
        let mut model = SsrModel::new(small_ssr()).unwrap();
        let report = train(&mut model, &data, &train_cfg(4, 2, true)).unwrap();
        (report, model.checkpoint().to_bytes())
    };
    let (a, ma) = run();
    let (b, mb) = run();
    assert_eq!(a, b);
    assert_eq!(ma, mb);
    assert!(a.loss_curve().iter().all(|l| l.is_finite()));
}

#[test]
fn median_loss_decreases_over_first_epochs() {
    let data = sequences(50);
    let curves: Vec<Vec<f64>> = (0..5)
        .map(|seed| {
            let mut model = SsrModel::new(SsrConfig {
                init_seed: seed,
                ..small_ssr()
            })
            .unwrap();
            train(&mut model, &data, &train_cfg(seed, 3, false)).unwrap().loss_curve()
        })
        .collect();
    let median = |e: usize| {
        let mut v: Vec<f64> = curves.iter().map(|c| c[e]).collect();
        v.sort_by(f64::total_cmp);
        v[2]
    };
    let m: Vec<f64> = (0..3).map(median).collect();
    assert!(m[0] > m[1] && m[1] > m[2], "{m:?}");
}

#[test]
fn empty_dataset_is_an_error() {
    let mut model = SsrModel::new(small_ssr()).unwrap();
    assert!(train(&mut model, &[], &train_cfg(0, 1, false)).is_err());
}
