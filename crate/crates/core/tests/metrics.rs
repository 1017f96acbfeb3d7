//! The sweep-based evaluator checked against a direct, slow
//! re-implementation of the metric definitions.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqmot_core::geometry::bev_iou;
use seqmot_core::metrics::{
    amota, amota_from_sweep, evaluate, mota, EvalConfig, EvalFrame, EvalScene, GtBox, MatchMode, MetricCounts,
    PredBox,
};
use seqmot_core::Box7;

/// Naive per-scene counting. Greedy matching repeatedly scans all free
/// pairs for the best one instead of sorting once.
fn oracle_counts(scene: &EvalScene, cutoff: f64, cfg: &EvalConfig) -> MetricCounts {
    let qualifies = |g: &Box7, p: &Box7| -> Option<f64> {
        match cfg.match_mode {
            MatchMode::CenterDistance => {
                let d = ((g.x - p.x).powi(2) + (g.y - p.y).powi(2)).sqrt();
                (d <= cfg.match_thresh).then_some(d)
            }
            MatchMode::BevIou => {
                let iou = bev_iou(g, p).unwrap();
                (iou >= cfg.match_thresh).then_some(-iou)
            }
        }
    };
    let mut c = MetricCounts::default();
    let mut prev: Vec<(u64, u64)> = Vec::new();
    let mut history: Vec<(u64, u64)> = Vec::new(); // (pred, gt) in match order
    for f in &scene.frames {
        let preds: Vec<&PredBox> = f.preds.iter().filter(|p| p.conf >= cutoff).collect();
        let mut g_free: Vec<bool> = vec![true; f.gt.len()];
        let mut p_free: Vec<bool> = vec![true; preds.len()];
        let mut pairs = Vec::new();
        for &(gid, pid) in &prev {
            let gi = f.gt.iter().position(|g| g.id == gid);
            let pi = preds.iter().position(|p| p.id == pid);
            if let (Some(gi), Some(pi)) = (gi, pi) {
                if g_free[gi] && p_free[pi] && qualifies(&f.gt[gi].bbox, &preds[pi].bbox).is_some() {
                    g_free[gi] = false;
                    p_free[pi] = false;
                    pairs.push((gi, pi));
                }
            }
        }
        loop {
            let mut best: Option<(f64, u64, u64, usize, usize)> = None;
            for gi in (0..f.gt.len()).filter(|&i| g_free[i]) {
                for pi in (0..preds.len()).filter(|&i| p_free[i]) {
                    if let Some(cost) = qualifies(&f.gt[gi].bbox, &preds[pi].bbox) {
                        let key = (cost, f.gt[gi].id, preds[pi].id, gi, pi);
                        let better = match best {
                            None => true,
                            Some(b) => (key.0, key.1, key.2) < (b.0, b.1, b.2),
                        };
                        if better {
                            best = Some(key);
                        }
                    }
                }
            }
            let Some((_, _, _, gi, pi)) = best else { break };
            g_free[gi] = false;
            p_free[pi] = false;
            pairs.push((gi, pi));
        }
        c.gt += f.gt.len() as u64;
        c.miss += g_free.iter().filter(|x| **x).count() as u64;
        c.fp += p_free.iter().filter(|x| **x).count() as u64;
        c.tp += pairs.len() as u64;
        prev.clear();
        for (gi, pi) in pairs {
            let (g, p) = (&f.gt[gi], preds[pi]);
            let last = history.iter().rev().find(|h| h.0 == p.id).map(|h| h.1);
            if matches!(last, Some(l) if l != g.id) {
                c.mismatch += 1;
            }
            history.push((p.id, g.id));
            c.tp_dist_sum += ((g.bbox.x - p.bbox.x).powi(2) + (g.bbox.y - p.bbox.y).powi(2)).sqrt();
            prev.push((g.id, p.id));
        }
    }
    c
}

struct OracleResult {
    mota_all: f64,
    motp_all: Option<f64>,
    amota: f64,
    amotp: Option<f64>,
}

fn oracle(scenes: &[EvalScene], cfg: &EvalConfig) -> OracleResult {
    let total = |cut: f64| {
        let mut t = MetricCounts::default();
        for s in scenes {
            let c = oracle_counts(s, cut, cfg);
            t.miss += c.miss;
            t.fp += c.fp;
            t.mismatch += c.mismatch;
            t.gt += c.gt;
            t.tp += c.tp;
            t.tp_dist_sum += c.tp_dist_sum;
        }
        t
    };
    let mut cuts: Vec<f64> = scenes
        .iter()
        .flat_map(|s| s.frames.iter().flat_map(|f| f.preds.iter().map(|p| p.conf)))
        .collect();
    cuts.sort_by(|a, b| b.partial_cmp(a).unwrap());
    cuts.dedup();
    let all = total(f64::NEG_INFINITY);
    let gt = all.gt as f64;
    let evals: Vec<(f64, MetricCounts)> = cuts.iter().map(|&c| (c, total(c))).collect();
    let n = cfg.recall_steps;
    let mut motars = Vec::new();
    let mut motps = Vec::new();
    for i in 1..n {
        let r = i as f64 / (n - 1) as f64;
        // Smallest recall at or above r; among equals the highest cutoff.
        let mut pick: Option<&(f64, MetricCounts)> = None;
        for e in &evals {
            let rec = e.1.tp as f64 / gt;
            if rec + 1e-12 < r {
                continue;
            }
            match pick {
                Some(p) if (p.1.tp as f64 / gt) < rec || ((p.1.tp as f64 / gt) == rec && p.0 > e.0) => {}
                _ => pick = Some(e),
            }
        }
        if pick.is_none() {
            for e in &evals {
                match pick {
                    Some(p) if p.1.tp > e.1.tp || (p.1.tp == e.1.tp && p.0 > e.0) => {}
                    _ => pick = Some(e),
                }
            }
        }
        match pick {
            Some((_, c)) if c.tp > 0 => {
                let ra = c.tp as f64 / gt;
                let m = 1.0 - ((c.miss + c.fp + c.mismatch) as f64 - (1.0 - ra) * gt) / (ra * gt);
                motars.push(m.max(0.0));
                motps.push(c.tp_dist_sum / c.tp as f64);
            }
            _ => motars.push(0.0),
        }
    }
    OracleResult {
        mota_all: 1.0 - (all.miss + all.fp + all.mismatch) as f64 / gt,
        motp_all: (all.tp > 0).then(|| all.tp_dist_sum / all.tp as f64),
        amota: motars.iter().sum::<f64>() / (n - 1) as f64,
        amotp: (!motps.is_empty()).then(|| motps.iter().sum::<f64>() / motps.len() as f64),
    }
}

fn random_scene(rng: &mut ChaCha8Rng) -> EvalScene {
    let n_obj = rng.random_range(1..=5);
    let n_frames = rng.random_range(1..=10);
    let starts: Vec<[f64; 2]> = (0..n_obj).map(|_| [rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0)]).collect();
    let frames = (0..n_frames)
        .map(|t| {
            let mut gt = Vec::new();
            let mut preds = Vec::new();
            for (o, s) in starts.iter().enumerate() {
                if rng.random_bool(0.85) {
                    let x = s[0] + 0.4 * t as f64;
                    let bbox = Box7::new(x, s[1], 0.0, 4.0, 2.0, 1.5, 0.0).unwrap();
                    gt.push(GtBox { id: o as u64, bbox });
                    if rng.random_bool(0.8) {
                        // Occasional identity swaps via a shared id pool.
                        let id = if rng.random_bool(0.15) { rng.random_range(0..n_obj) as u64 + 100 } else { o as u64 + 100 };
                        if preds.iter().any(|p: &PredBox| p.id == id) {
                            continue;
                        }
                        let pb = Box7::new(
                            x + rng.random_range(-1.5..1.5),
                            s[1] + rng.random_range(-1.5..1.5),
                            0.0,
                            4.0 * rng.random_range(0.8..1.2),
                            2.0,
                            1.5,
                            rng.random_range(-0.5..0.5),
                        )
                        .unwrap();
                        // Coarse confidences so cutoffs tie.
                        let conf = (rng.random_range(0.0..1.0f64) * 8.0).round() / 8.0;
                        preds.push(PredBox { id, bbox: pb, conf });
                    }
                }
            }
            for k in 0..rng.random_range(0..3) {
                let id = 200 + k;
                if rng.random_bool(0.5) {
                    let bbox = Box7::new(rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0), 0.0, 4.0, 2.0, 1.5, 0.0).unwrap();
                    preds.push(PredBox {
                        id,
                        bbox,
                        conf: rng.random_range(0.0..1.0),
                    });
                }
            }
            EvalFrame { gt, preds }
        })
        .collect();
    EvalScene { frames }
}

fn assert_matches_oracle(scenes: &[EvalScene], cfg: &EvalConfig) {
    let gt: usize = scenes.iter().flat_map(|s| &s.frames).map(|f| f.gt.len()).sum();
    if gt == 0 {
        assert!(evaluate(scenes, "car", cfg).is_err());
        return;
    }
    let lib = evaluate(scenes, "car", cfg).unwrap();
    let o = oracle(scenes, cfg);
    assert!((lib.mota - o.mota_all).abs() < 1e-9, "mota {} vs {}", lib.mota, o.mota_all);
    match (lib.motp, o.motp_all) {
        (Some(a), Some(b)) => assert!((a - b).abs() < 1e-9),
        (a, b) => assert_eq!(a, b),
    }
    assert!((lib.amota - o.amota).abs() < 1e-9, "amota {} vs {}", lib.amota, o.amota);
    match (lib.amotp, o.amotp) {
        (Some(a), Some(b)) => assert!((a - b).abs() < 1e-9, "amotp {a} vs {b}"),
        (a, b) => assert_eq!(a, b),
    }
    for level in &lib.motar_curve {
        assert_eq!(level.counts.tp + level.counts.miss, level.counts.gt);
        assert!(level.motar >= 0.0);
    }
}

#[test]
fn matches_oracle_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..200 {
        let n_scenes = rng.random_range(1..=2);
        let scenes: Vec<EvalScene> = (0..n_scenes).map(|_| random_scene(&mut rng)).collect();
        let cfg = EvalConfig {
            recall_steps: [2, 3, 11, 40][trial % 4],
            ..EvalConfig::default()
        };
        assert_matches_oracle(&scenes, &cfg);
    }
}

#[test]
fn matches_oracle_in_iou_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..60 {
        let scenes = vec![random_scene(&mut rng)];
        let cfg = EvalConfig {
            match_mode: MatchMode::BevIou,
            match_thresh: 0.3,
            recall_steps: 11,
        };
        assert_matches_oracle(&scenes, &cfg);
    }
}

#[test]
fn averaging_over_three_recall_points() {
    let cfg = EvalConfig {
        recall_steps: 3,
        ..EvalConfig::default()
    };
    let half = MetricCounts {
        gt: 10,
        tp: 5,
        miss: 5,
        fp: 1,
        ..Default::default()
    };
    let full = MetricCounts {
        gt: 10,
        tp: 10,
        miss: 0,
        fp: 4,
        ..Default::default()
    };
    let r = amota_from_sweep(&[(0.9, half), (0.5, full)], 10, &cfg).unwrap();
    assert!((r.levels[0].motar - 0.8).abs() < 1e-12);
    assert!((r.levels[1].motar - 0.6).abs() < 1e-12);
    assert!((r.amota - 0.7).abs() < 1e-12);
}

#[test]
fn unreachable_levels_are_flagged() {
    let frames = vec![EvalFrame {
        gt: vec![
            GtBox {
                id: 1,
                bbox: Box7::new(0.0, 0.0, 0.0, 4.0, 2.0, 1.5, 0.0).unwrap(),
            },
            GtBox {
                id: 2,
                bbox: Box7::new(30.0, 0.0, 0.0, 4.0, 2.0, 1.5, 0.0).unwrap(),
            },
        ],
        preds: vec![PredBox {
            id: 9,
            bbox: Box7::new(0.2, 0.0, 0.0, 4.0, 2.0, 1.5, 0.0).unwrap(),
            conf: 0.7,
        }],
    }];
    let r = amota(&[EvalScene { frames }], &EvalConfig { recall_steps: 5, ..EvalConfig::default() }).unwrap();
    let flags: Vec<bool> = r.levels.iter().map(|l| l.unreachable).collect();
    assert_eq!(flags, vec![false, false, true, true]);
    assert!(r.levels.iter().all(|l| l.achieved == 0.5));
}

fn relabel(scene: &EvalScene, offset: u64) -> EvalScene {
    EvalScene {
        frames: scene
            .frames
            .iter()
            .map(|f| EvalFrame {
                gt: f.gt.clone(),
                preds: f.preds.iter().map(|p| PredBox { id: p.id * 3 + offset, ..*p }).collect(),
            })
            .collect(),
    }
}

#[test]
fn low_confidence_far_false_positive_leaves_amota_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = EvalConfig::default();
    for _ in 0..30 {
        let scene = random_scene(&mut rng);
        if scene.frames.iter().all(|f| f.gt.is_empty()) {
            continue;
        }
        let before = amota(&[scene.clone()], &cfg).unwrap();
        let min_conf = scene.frames.iter().flat_map(|f| f.preds.iter().map(|p| p.conf)).fold(1.0, f64::min);
        if min_conf == 0.0 {
            continue;
        }
        let mut noisy = scene.clone();
        noisy.frames[0].preds.push(PredBox {
            id: 999,
            bbox: Box7::new(500.0, 500.0, 0.0, 4.0, 2.0, 1.5, 0.0).unwrap(),
            conf: min_conf * 0.5,
        });
        let after = amota(&[noisy], &cfg).unwrap();
        assert_eq!(before.amota, after.amota);
    }
}

proptest! {
    #[test]
    fn mota_ignores_id_relabeling(seed in 0u64..10_000, offset in 1u64..50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = random_scene(&mut rng);
        prop_assume!(scene.frames.iter().any(|f| !f.gt.is_empty()));
        let cfg = EvalConfig::default();
        let a = evaluate(&[scene.clone()], "car", &cfg).unwrap();
        let b = evaluate(&[relabel(&scene, offset)], "car", &cfg).unwrap();
        prop_assert_eq!(a.mota, b.mota);
        prop_assert_eq!(a.amota, b.amota);
    }

    #[test]
    fn motar_at_full_recall_is_clamped_mota(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = random_scene(&mut rng);
        prop_assume!(scene.frames.iter().any(|f| !f.gt.is_empty()));
        let r = evaluate(&[scene], "car", &EvalConfig::default()).unwrap();
        let last = r.motar_curve.last().unwrap();
        if !last.unreachable {
            prop_assert!((last.motar - mota(&last.counts).unwrap().max(0.0)).abs() < 1e-12);
        }
    }
}
