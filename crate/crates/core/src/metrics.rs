//! CLEAR-MOT (MOTA, MOTP) and recall-averaged (MOTAR, AMOTA, AMOTP)
//! evaluation.
//!
//! Counting is per object-frame. Correspondences persist across frames
//! within a scene: a pair from the previous frame is kept while it stays
//! within the match threshold, and the remaining objects are matched
//! greedily. A mismatch is a matched prediction whose ground-truth object
//! differs from the one it was last matched to.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::bev_iou;
use crate::pipeline::TrackerOutput;
use crate::types::{Box7, Scene};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchMode {
    /// BEV center distance no greater than the threshold, in meters.
    CenterDistance,
    /// BEV IoU at least the threshold.
    BevIou,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub match_mode: MatchMode,
    pub match_thresh: f64,
    /// Number of recall points n; AMOTA averages over `1/(n-1), …, 1`.
    pub recall_steps: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            match_mode: MatchMode::CenterDistance,
            match_thresh: 2.0,
            recall_steps: 40,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.match_thresh > 0.0) {
            return Err(Error::InvalidInput("match_thresh must be positive".into()));
        }
        if self.recall_steps < 2 {
            return Err(Error::InvalidInput("recall_steps must be at least 2".into()));
        }
        Ok(())
    }

    /// Matching cost (lower is better) when the pair qualifies.
    fn cost(&self, gt: &Box7, pred: &Box7) -> Result<Option<f64>> {
        match self.match_mode {
            MatchMode::CenterDistance => {
                let d = gt.bev_distance(pred);
                Ok((d <= self.match_thresh).then_some(d))
            }
            MatchMode::BevIou => {
                let iou = bev_iou(gt, pred)?;
                Ok((iou >= self.match_thresh).then_some(-iou))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtBox {
    pub id: u64,
    pub bbox: Box7,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredBox {
    pub id: u64,
    pub bbox: Box7,
    pub conf: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalFrame {
    pub gt: Vec<GtBox>,
    pub preds: Vec<PredBox>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalScene {
    pub frames: Vec<EvalFrame>,
}

impl EvalScene {
    /// Pairs a scene's ground truth with tracker output, frame by frame.
    pub fn from_tracking(scene: &Scene, out: &TrackerOutput) -> Result<Self> {
        let by_t: HashMap<i64, &crate::pipeline::FrameOutput> = out.frames.iter().map(|f| (f.t, f)).collect();
        let frames = scene
            .frames
            .iter()
            .map(|f| {
                let gt = f.gt.as_ref().ok_or_else(|| Error::NoGroundTruth(scene.header.scene_id.clone()))?;
                let preds = by_t.get(&f.t).map_or_else(Vec::new, |fo| {
                    fo.states
                        .iter()
                        .map(|(id, s)| PredBox {
                            id: *id,
                            bbox: s.bbox,
                            conf: s.conf,
                        })
                        .collect()
                });
                Ok(EvalFrame {
                    gt: gt.iter().map(|g| GtBox { id: g.id, bbox: g.bbox }).collect(),
                    preds,
                })
            })
            .collect::<Result<_>>()?;
        Ok(EvalScene { frames })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricCounts {
    pub miss: u64,
    pub fp: u64,
    pub mismatch: u64,
    pub gt: u64,
    pub tp: u64,
    pub tp_dist_sum: f64,
}

impl MetricCounts {
    pub fn merge(&mut self, other: &MetricCounts) {
        self.miss += other.miss;
        self.fp += other.fp;
        self.mismatch += other.mismatch;
        self.gt += other.gt;
        self.tp += other.tp;
        self.tp_dist_sum += other.tp_dist_sum;
    }

    pub fn recall(&self) -> f64 {
        if self.gt == 0 {
            0.0
        } else {
            self.tp as f64 / self.gt as f64
        }
    }
}

/// Matching result for one frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameMatch {
    /// `(gt id, pred id, BEV center distance)`.
    pub pairs: Vec<(u64, u64, f64)>,
    pub miss: u64,
    pub fp: u64,
    pub mismatch: u64,
}

/// Matches one frame given the previous frame's correspondences
/// `(gt id, pred id)` and each prediction's last matched ground truth.
pub fn match_frame(
    prev: &[(u64, u64)],
    last_gt: &HashMap<u64, u64>,
    gt: &[GtBox],
    preds: &[PredBox],
    cfg: &EvalConfig,
) -> Result<FrameMatch> {
    let mut cands = Vec::new();
    for (gi, g) in gt.iter().enumerate() {
        for (pi, p) in preds.iter().enumerate() {
            if let Some(c) = cfg.cost(&g.bbox, &p.bbox)? {
                cands.push((c, gi, pi));
            }
        }
    }
    cands.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(gt[a.1].id.cmp(&gt[b.1].id))
            .then(preds[a.2].id.cmp(&preds[b.2].id))
    });
    let mut g_used = vec![false; gt.len()];
    let mut p_used = vec![false; preds.len()];
    let mut chosen = Vec::new();
    for &(gid, pid) in prev {
        if let Some(&(_, gi, pi)) = cands.iter().find(|c| gt[c.1].id == gid && preds[c.2].id == pid) {
            if !g_used[gi] && !p_used[pi] {
                g_used[gi] = true;
                p_used[pi] = true;
                chosen.push((gi, pi));
            }
        }
    }
    for &(_, gi, pi) in &cands {
        if !g_used[gi] && !p_used[pi] {
            g_used[gi] = true;
            p_used[pi] = true;
            chosen.push((gi, pi));
        }
    }
    let mut out = FrameMatch {
        miss: g_used.iter().filter(|u| !**u).count() as u64,
        fp: p_used.iter().filter(|u| !**u).count() as u64,
        ..FrameMatch::default()
    };
    for (gi, pi) in chosen {
        let (g, p) = (&gt[gi], &preds[pi]);
        if last_gt.get(&p.id).is_some_and(|&prev_g| prev_g != g.id) {
            out.mismatch += 1;
        }
        out.pairs.push((g.id, p.id, g.bbox.bev_distance(&p.bbox)));
    }
    Ok(out)
}

/// Counts over a scene using only predictions with `conf >= cutoff`.
pub fn evaluate_scene(scene: &EvalScene, cutoff: f64, cfg: &EvalConfig) -> Result<MetricCounts> {
    let mut counts = MetricCounts::default();
    let mut prev: Vec<(u64, u64)> = Vec::new();
    let mut last_gt: HashMap<u64, u64> = HashMap::new();
    for frame in &scene.frames {
        let preds: Vec<PredBox> = frame.preds.iter().filter(|p| p.conf >= cutoff).copied().collect();
        let m = match_frame(&prev, &last_gt, &frame.gt, &preds, cfg)?;
        counts.miss += m.miss;
        counts.fp += m.fp;
        counts.mismatch += m.mismatch;
        counts.gt += frame.gt.len() as u64;
        counts.tp += m.pairs.len() as u64;
        for &(g, p, d) in &m.pairs {
            counts.tp_dist_sum += d;
            last_gt.insert(p, g);
        }
        prev = m.pairs.iter().map(|&(g, p, _)| (g, p)).collect();
    }
    Ok(counts)
}

pub fn mota(c: &MetricCounts) -> Result<f64> {
    if c.gt == 0 {
        return Err(Error::Undefined("MOTA without ground truth"));
    }
    Ok(1.0 - (c.miss + c.fp + c.mismatch) as f64 / c.gt as f64)
}

/// Mean true-positive center error; `None` without true positives.
pub fn motp(c: &MetricCounts) -> Option<f64> {
    (c.tp > 0).then(|| c.tp_dist_sum / c.tp as f64)
}

pub fn motar(c: &MetricCounts, r: f64, gt: u64) -> Result<f64> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::Undefined("MOTAR requires recall in (0, 1]"));
    }
    if gt == 0 {
        return Err(Error::Undefined("MOTAR without ground truth"));
    }
    let g = gt as f64;
    let errors = (c.miss + c.fp + c.mismatch) as f64;
    Ok((1.0 - (errors - (1.0 - r) * g) / (r * g)).max(0.0))
}

/// Precomputed per-frame candidate pairs, reused across cutoffs.
struct PreparedScene {
    frames: Vec<PreparedFrame>,
    n_preds: usize,
}

struct PreparedFrame {
    n_gt: usize,
    gt_ids: Vec<usize>,
    pred_ids: Vec<usize>,
    pred_conf: Vec<f64>,
    /// `(gt index, pred index, distance)` in greedy order.
    cands: Vec<(usize, usize, f64)>,
}

const NONE: usize = usize::MAX;

impl PreparedScene {
    fn new(scene: &EvalScene, cfg: &EvalConfig) -> Result<Self> {
        let mut gt_map: HashMap<u64, usize> = HashMap::new();
        let mut pred_map: HashMap<u64, usize> = HashMap::new();
        let mut frames = Vec::with_capacity(scene.frames.len());
        for f in &scene.frames {
            let gt_ids = f
                .gt
                .iter()
                .map(|g| {
                    let n = gt_map.len();
                    *gt_map.entry(g.id).or_insert(n)
                })
                .collect();
            let pred_ids = f
                .preds
                .iter()
                .map(|p| {
                    let n = pred_map.len();
                    *pred_map.entry(p.id).or_insert(n)
                })
                .collect();
            let mut cands = Vec::new();
            for (gi, g) in f.gt.iter().enumerate() {
                for (pi, p) in f.preds.iter().enumerate() {
                    if let Some(c) = cfg.cost(&g.bbox, &p.bbox)? {
                        cands.push((c, gi, pi, g.bbox.bev_distance(&p.bbox)));
                    }
                }
            }
            cands.sort_by(|a, b| {
                a.0.total_cmp(&b.0)
                    .then(f.gt[a.1].id.cmp(&f.gt[b.1].id))
                    .then(f.preds[a.2].id.cmp(&f.preds[b.2].id))
            });
            frames.push(PreparedFrame {
                n_gt: f.gt.len(),
                gt_ids,
                pred_ids,
                pred_conf: f.preds.iter().map(|p| p.conf).collect(),
                cands: cands.into_iter().map(|(_, g, p, d)| (g, p, d)).collect(),
            });
        }
        Ok(PreparedScene {
            frames,
            n_preds: pred_map.len(),
        })
    }

    fn counts(&self, cutoff: f64) -> MetricCounts {
        let mut c = MetricCounts::default();
        let mut last_gt = vec![NONE; self.n_preds];
        // Previous frame's pairs as dense (gt id, pred id).
        let mut prev: Vec<(usize, usize)> = Vec::new();
        let mut g_used = Vec::new();
        let mut p_used = Vec::new();
        for f in &self.frames {
            g_used.clear();
            g_used.resize(f.n_gt, false);
            p_used.clear();
            p_used.resize(f.pred_ids.len(), false);
            let active = |pi: usize| f.pred_conf[pi] >= cutoff;
            let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
            for &(pg, pp) in &prev {
                if let Some(&(gi, pi, d)) = f.cands.iter().find(|&&(gi, pi, _)| f.gt_ids[gi] == pg && f.pred_ids[pi] == pp) {
                    if active(pi) && !g_used[gi] && !p_used[pi] {
                        g_used[gi] = true;
                        p_used[pi] = true;
                        pairs.push((gi, pi, d));
                    }
                }
            }
            for &(gi, pi, d) in &f.cands {
                if active(pi) && !g_used[gi] && !p_used[pi] {
                    g_used[gi] = true;
                    p_used[pi] = true;
                    pairs.push((gi, pi, d));
                }
            }
            let n_active = (0..f.pred_ids.len()).filter(|&pi| active(pi)).count() as u64;
            c.gt += f.n_gt as u64;
            c.tp += pairs.len() as u64;
            c.miss += (f.n_gt - pairs.len()) as u64;
            c.fp += n_active - pairs.len() as u64;
            prev.clear();
            for &(gi, pi, d) in &pairs {
                let (g, p) = (f.gt_ids[gi], f.pred_ids[pi]);
                if last_gt[p] != NONE && last_gt[p] != g {
                    c.mismatch += 1;
                }
                last_gt[p] = g;
                c.tp_dist_sum += d;
                prev.push((g, p));
            }
        }
        c
    }
}

/// One AMOTA recall level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallLevel {
    pub target: f64,
    pub achieved: f64,
    pub cutoff: f64,
    pub motar: f64,
    pub motp: Option<f64>,
    /// The target recall is above every achievable recall; the level was
    /// evaluated at the maximum achievable recall.
    pub unreachable: bool,
    pub counts: MetricCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmotaResult {
    pub amota: f64,
    /// `None` when no level has a true positive.
    pub amotp: Option<f64>,
    /// Levels contributing to AMOTP.
    pub amotp_levels: usize,
    pub levels: Vec<RecallLevel>,
}

/// Counts at every distinct confidence cutoff, highest first.
pub fn sweep_cutoffs(scenes: &[EvalScene], cfg: &EvalConfig) -> Result<Vec<(f64, MetricCounts)>> {
    cfg.validate()?;
    let prepared = scenes
        .par_iter()
        .map(|s| PreparedScene::new(s, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut cutoffs: Vec<f64> = scenes
        .iter()
        .flat_map(|s| s.frames.iter().flat_map(|f| f.preds.iter().map(|p| p.conf)))
        .collect();
    cutoffs.sort_by(|a, b| b.total_cmp(a));
    cutoffs.dedup();
    Ok(cutoffs
        .par_iter()
        .map(|&c| {
            let mut total = MetricCounts::default();
            for s in &prepared {
                total.merge(&s.counts(c));
            }
            (c, total)
        })
        .collect())
}

/// Picks, for each recall target, the cutoff whose recall is the smallest
/// value at or above the target (ties to the higher cutoff).
pub fn amota_from_sweep(sweep: &[(f64, MetricCounts)], gt: u64, cfg: &EvalConfig) -> Result<AmotaResult> {
    if gt == 0 {
        return Err(Error::Undefined("AMOTA without ground truth"));
    }
    let steps = (cfg.recall_steps - 1) as u64;
    // Highest-recall cutoff, ties to the higher cutoff (first in the sweep).
    let best = sweep.iter().fold(None::<&(f64, MetricCounts)>, |acc, e| match acc {
        Some(a) if a.1.tp >= e.1.tp => Some(a),
        _ => Some(e),
    });
    let mut levels = Vec::with_capacity(steps as usize);
    for i in 1..=steps {
        let target = i as f64 / steps as f64;
        let reach = sweep
            .iter()
            .filter(|(_, c)| c.tp * steps >= i * gt)
            .fold(None::<&(f64, MetricCounts)>, |acc, e| match acc {
                Some(a) if a.1.tp <= e.1.tp => Some(a),
                _ => Some(e),
            });
        let (entry, unreachable) = match reach {
            Some(e) => (Some(e), false),
            None => (best, true),
        };
        let level = match entry {
            Some(&(cutoff, counts)) if counts.tp > 0 => {
                let achieved = counts.tp as f64 / gt as f64;
                RecallLevel {
                    target,
                    achieved,
                    cutoff,
                    motar: motar(&counts, achieved, gt)?,
                    motp: motp(&counts),
                    unreachable,
                    counts,
                }
            }
            other => RecallLevel {
                target,
                achieved: 0.0,
                cutoff: other.map_or(f64::INFINITY, |e| e.0),
                motar: 0.0,
                motp: None,
                unreachable: true,
                counts: other.map_or(MetricCounts { gt, miss: gt, ..Default::default() }, |e| e.1),
            },
        };
        levels.push(level);
    }
    let amota = levels.iter().map(|l| l.motar).sum::<f64>() / steps as f64;
    let motps: Vec<f64> = levels.iter().filter_map(|l| l.motp).collect();
    let amotp = (!motps.is_empty()).then(|| motps.iter().sum::<f64>() / motps.len() as f64);
    Ok(AmotaResult {
        amota,
        amotp,
        amotp_levels: motps.len(),
        levels,
    })
}

pub fn amota(scenes: &[EvalScene], cfg: &EvalConfig) -> Result<AmotaResult> {
    let sweep = sweep_cutoffs(scenes, cfg)?;
    amota_from_sweep(&sweep, total_gt(scenes), cfg)
}

fn total_gt(scenes: &[EvalScene]) -> u64 {
    scenes.iter().flat_map(|s| &s.frames).map(|f| f.gt.len() as u64).sum()
}

/// Summary of one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub class: String,
    pub scenes: usize,
    /// MOTA over every emitted prediction.
    pub mota: f64,
    /// Highest MOTA over all confidence cutoffs.
    pub mota_best: f64,
    pub mota_best_cutoff: f64,
    pub motp: Option<f64>,
    pub fp_pct: f64,
    pub miss_pct: f64,
    pub mismatch_pct: f64,
    pub amota: f64,
    pub amotp: Option<f64>,
    pub amotp_levels: usize,
    pub counts: MetricCounts,
    pub motar_curve: Vec<RecallLevel>,
}

pub fn evaluate(scenes: &[EvalScene], class: &str, cfg: &EvalConfig) -> Result<MetricsReport> {
    let gt = total_gt(scenes);
    if gt == 0 {
        return Err(Error::Undefined("evaluation without ground truth"));
    }
    let sweep = sweep_cutoffs(scenes, cfg)?;
    let all = sweep.last().map_or(
        MetricCounts {
            gt,
            miss: gt,
            ..Default::default()
        },
        |e| e.1,
    );
    let mut mota_best = f64::NEG_INFINITY;
    let mut mota_best_cutoff = f64::INFINITY;
    for (c, counts) in &sweep {
        let m = mota(counts)?;
        if m > mota_best {
            mota_best = m;
            mota_best_cutoff = *c;
        }
    }
    let mota_all = mota(&all)?;
    if sweep.is_empty() {
        mota_best = mota_all;
    }
    let am = amota_from_sweep(&sweep, gt, cfg)?;
    let pct = |x: u64| 100.0 * x as f64 / gt as f64;
    Ok(MetricsReport {
        class: class.to_string(),
        scenes: scenes.len(),
        mota: mota_all,
        mota_best,
        mota_best_cutoff,
        motp: motp(&all),
        fp_pct: pct(all.fp),
        miss_pct: pct(all.miss),
        mismatch_pct: pct(all.mismatch),
        amota: am.amota,
        amotp: am.amotp,
        amotp_levels: am.amotp_levels,
        counts: all,
        motar_curve: am.levels,
    })
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str =
        "class,scenes,mota,mota_best,motp,fp_pct,miss_pct,mismatch_pct,amota,amotp,gt,tp,fp,miss,mismatch";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
        let c = &self.counts;
        format!(
            "{},{},{:.6},{:.6},{},{:.4},{:.4},{:.4},{:.6},{},{},{},{},{},{}",
            self.class,
            self.scenes,
            self.mota,
            self.mota_best,
            opt(self.motp),
            self.fp_pct,
            self.miss_pct,
            self.mismatch_pct,
            self.amota,
            opt(self.amotp),
            c.gt,
            c.tp,
            c.fp,
            c.miss,
            c.mismatch
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x: f64, y: f64) -> Box7 {
        Box7::new(x, y, 0.0, 4.0, 2.0, 1.5, 0.0).unwrap()
    }

    fn gt(id: u64, x: f64) -> GtBox {
        GtBox { id, bbox: b(x, 0.0) }
    }

    fn pred(id: u64, x: f64, conf: f64) -> PredBox {
        PredBox {
            id,
            bbox: b(x, 0.0),
            conf,
        }
    }

    #[test]
    fn perfect_overlap_has_no_errors() {
        let cfg = EvalConfig::default();
        let m = match_frame(&[], &HashMap::new(), &[gt(1, 0.0), gt(2, 10.0)], &[pred(5, 0.0, 1.0), pred(6, 10.0, 1.0)], &cfg).unwrap();
        assert_eq!((m.miss, m.fp, m.mismatch), (0, 0, 0));
        assert!(m.pairs.iter().all(|p| p.2 == 0.0));
    }

    #[test]
    fn lone_gt_is_a_miss() {
        let m = match_frame(&[], &HashMap::new(), &[gt(1, 0.0)], &[], &EvalConfig::default()).unwrap();
        assert_eq!(m.miss, 1);
    }

    #[test]
    fn swapped_ids_are_two_mismatches() {
        let cfg = EvalConfig::default();
        let last: HashMap<u64, u64> = [(5, 1), (6, 2)].into_iter().collect();
        let m = match_frame(&[], &last, &[gt(1, 0.0), gt(2, 10.0)], &[pred(6, 0.0, 1.0), pred(5, 10.0, 1.0)], &cfg).unwrap();
        assert_eq!(m.mismatch, 2);
    }

    #[test]
    fn carried_pairs_take_precedence() {
        let cfg = EvalConfig::default();
        // Prediction 6 is nearer to gt 1, but 5 keeps its previous pairing.
        let m = match_frame(&[(1, 5)], &HashMap::new(), &[gt(1, 0.0)], &[pred(5, 1.5, 1.0), pred(6, 0.1, 1.0)], &cfg).unwrap();
        assert_eq!(m.pairs[0].1, 5);
        assert_eq!(m.fp, 1);
    }

    #[test]
    fn formula_examples() {
        let c = MetricCounts {
            gt: 10,
            miss: 2,
            fp: 1,
            mismatch: 1,
            tp: 8,
            tp_dist_sum: 0.0,
        };
        assert!((mota(&c).unwrap() - 0.6).abs() < 1e-12);
        let bad = MetricCounts {
            gt: 2,
            miss: 2,
            fp: 5,
            ..Default::default()
        };
        assert!(mota(&bad).unwrap() < 0.0);
        assert!(mota(&MetricCounts::default()).is_err());

        let d = MetricCounts {
            tp: 2,
            tp_dist_sum: 0.6,
            ..Default::default()
        };
        assert!((motp(&d).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(motp(&MetricCounts::default()), None);

        let r = MetricCounts {
            gt: 10,
            miss: 5,
            fp: 1,
            ..Default::default()
        };
        assert!((motar(&r, 0.5, 10).unwrap() - 0.8).abs() < 1e-12);
        let z = MetricCounts {
            gt: 10,
            miss: 0,
            fp: 0,
            ..Default::default()
        };
        assert_eq!(motar(&z, 1.0, 10).unwrap(), 1.0);
        let huge = MetricCounts {
            gt: 10,
            fp: 100,
            ..Default::default()
        };
        assert_eq!(motar(&huge, 0.5, 10).unwrap(), 0.0);
        assert!(motar(&z, 0.0, 10).is_err());
    }

    #[test]
    fn perfect_tracking_scores_one() {
        let frames = (0..5)
            .map(|t| EvalFrame {
                gt: vec![gt(1, t as f64), gt(2, 20.0 + t as f64)],
                preds: vec![pred(7, t as f64, 0.9), pred(8, 20.0 + t as f64, 0.6 + 0.01 * t as f64)],
            })
            .collect();
        let r = evaluate(&[EvalScene { frames }], "car", &EvalConfig::default()).unwrap();
        assert!((r.amota - 1.0).abs() < 1e-12);
        assert_eq!(r.amotp, Some(0.0));
        assert_eq!(r.mota, 1.0);
    }
}
