//! The tracking loop: predict, associate, update, lifecycle, and the
//! refinement hook.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{crop_points, nms};
use crate::ssr::{RefinedSequence, SsrInput, SsrModel};
use crate::types::{Detection, Frame, ObjectClass, PipelineConfig, Scene, State, Tracklet};
use crate::{Error, Result};

/// Anything that can re-estimate a tracklet window. Implementations must be
/// safe to share across scene workers.
pub trait Refiner: Sync {
    fn refine(&self, input: &SsrInput) -> Result<RefinedSequence>;
}

impl Refiner for SsrModel {
    fn refine(&self, input: &SsrInput) -> Result<RefinedSequence> {
        SsrModel::refine(self, input)
    }
}

/// Constant-velocity prediction of the next frame's state.
pub fn predict(tr: &Tracklet) -> Result<State> {
    let last = tr.last().ok_or(Error::EmptyTracklet)?;
    let mut s = *last;
    s.bbox.x += s.vx;
    s.bbox.y += s.vy;
    s.t += 1;
    Ok(s)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Association {
    /// `(tracklet id, detection index)`.
    pub matches: Vec<(u64, usize)>,
    pub unmatched_tracklets: Vec<u64>,
    pub unmatched_dets: Vec<usize>,
}

/// Greedy matching: detections in descending confidence (ties by input
/// order) each take the nearest unmatched prediction of the same class
/// within `max_dist` (ties by prediction order).
pub fn associate(predicted: &[(u64, State)], dets: &[Detection], max_dist: f64) -> Association {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].conf.total_cmp(&dets[a].conf).then(a.cmp(&b)));
    let mut taken = vec![false; predicted.len()];
    let mut det_matched = vec![false; dets.len()];
    let mut matches = Vec::new();
    for d in order {
        let det = &dets[d];
        let mut best: Option<(usize, f64)> = None;
        for (i, (_, s)) in predicted.iter().enumerate() {
            if taken[i] || s.class != det.class {
                continue;
            }
            let dist = s.bbox.bev_distance(&det.bbox);
            if dist <= max_dist && best.map_or(true, |(_, b)| dist < b) {
                best = Some((i, dist));
            }
        }
        if let Some((i, _)) = best {
            taken[i] = true;
            det_matched[d] = true;
            matches.push((predicted[i].0, d));
        }
    }
    Association {
        matches,
        unmatched_tracklets: predicted
            .iter()
            .zip(&taken)
            .filter(|(_, &t)| !t)
            .map(|((id, _), _)| *id)
            .collect(),
        unmatched_dets: (0..dets.len()).filter(|&d| !det_matched[d]).collect(),
    }
}

/// Everything the tracker produced at one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameOutput {
    pub t: i64,
    /// Latest state of every tracklet observed at this frame.
    pub states: Vec<(u64, State)>,
    pub association: Association,
    pub births: Vec<u64>,
    pub deaths: Vec<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackerOutput {
    pub frames: Vec<FrameOutput>,
}

/// Single-scene tracker state machine.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: PipelineConfig,
    /// Seconds per frame, for converting detector velocities.
    dt: f64,
    tracklets: Vec<Tracklet>,
    next_id: u64,
    last_t: Option<i64>,
}

impl Tracker {
    pub fn new(cfg: PipelineConfig, dt: f64) -> Result<Self> {
        cfg.validate()?;
        if !(dt > 0.0) {
            return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
        }
        Ok(Tracker {
            cfg,
            dt,
            tracklets: Vec::new(),
            next_id: 0,
            last_t: None,
        })
    }

    pub fn tracklets(&self) -> &[Tracklet] {
        &self.tracklets
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn step(&mut self, frame: &Frame, refiner: Option<&dyn Refiner>) -> Result<FrameOutput> {
        let t = frame.t;
        if let Some(prev) = self.last_t {
            if t != prev + 1 {
                return Err(Error::NonConsecutiveFrame { expected: prev + 1, got: t });
            }
        }
        frame.validate()?;
        self.last_t = Some(t);
        let cfg = self.cfg.clone();

        let dets = nms(&frame.detections, cfg.nms_iou)?;
        let predicted = self
            .tracklets
            .iter()
            .map(|tr| Ok((tr.id, predict(tr)?)))
            .collect::<Result<Vec<_>>>()?;
        let assoc = associate(&predicted, &dets, cfg.match_max_dist);

        let mut observed = Vec::new();
        for &(id, d) in &assoc.matches {
            let idx = self.index_of(id);
            let det = &dets[d];
            let tr = &mut self.tracklets[idx];
            let last = tr.last().ok_or(Error::EmptyTracklet)?;
            let [vx, vy] = match (tr.refined_velocity, det.velocity) {
                (Some(v), _) => v,
                (None, Some(v)) => [v[0] * self.dt, v[1] * self.dt],
                (None, None) => [det.bbox.x - last.bbox.x, det.bbox.y - last.bbox.y],
            };
            let state = State {
                bbox: det.bbox,
                vx,
                vy,
                class: det.class,
                conf: det.conf,
                t,
            }
            .validated()?;
            tr.push_state(state, crop_points(&frame.points, &det.bbox, cfg.crop_factor, t))?;
            observed.push(idx);
        }

        let mut deaths = Vec::new();
        let mut dead = vec![false; self.tracklets.len()];
        for &id in &assoc.unmatched_tracklets {
            let idx = self.index_of(id);
            let tr = &mut self.tracklets[idx];
            tr.age_unmatched += 1;
            if tr.age_unmatched > cfg.kill_age {
                dead[idx] = true;
                deaths.push(id);
            } else {
                let pred = predicted[idx].1;
                tr.push_coasting(pred)?;
            }
        }

        let mut births = Vec::new();
        for &d in &assoc.unmatched_dets {
            let det = &dets[d];
            if !(det.conf > cfg.birth_conf_thresh) {
                continue;
            }
            let id = self.next_id;
            self.next_id += 1;
            let [vx, vy] = det.velocity.map_or([0.0, 0.0], |v| [v[0] * self.dt, v[1] * self.dt]);
            let mut tr = Tracklet::new(id, cfg.window, t);
            let state = State {
                bbox: det.bbox,
                vx,
                vy,
                class: det.class,
                conf: det.conf,
                t,
            }
            .validated()?;
            tr.push_state(state, crop_points(&frame.points, &det.bbox, cfg.crop_factor, t))?;
            observed.push(self.tracklets.len());
            self.tracklets.push(tr);
            dead.push(false);
            births.push(id);
        }

        if let Some(refiner) = refiner {
            let eligible: Vec<usize> = observed
                .iter()
                .copied()
                .filter(|&i| self.tracklets[i].age() >= cfg.min_refine_age)
                .collect();
            let refined = eligible
                .par_iter()
                .map(|&i| {
                    let tr = &self.tracklets[i];
                    let start = tr.len().saturating_sub(cfg.max_refine_context);
                    let input = SsrInput::new(tr.states()[start..].to_vec(), tr.points()[start..].to_vec())?;
                    Ok((i, start, refiner.refine(&input)?))
                })
                .collect::<Result<Vec<_>>>()?;
            for (i, start, seq) in refined {
                let tr = &mut self.tracklets[i];
                let updated = seq.apply(&tr.states()[start..], cfg.store_refined)?;
                let states = &mut tr.states_mut()[start..];
                states.copy_from_slice(&updated);
                let last = seq.frames.last().expect("window is non-empty");
                if !last.fallback {
                    if !cfg.store_refined {
                        let s = states.last_mut().expect("window is non-empty");
                        s.vx = last.velocity[0];
                        s.vy = last.velocity[1];
                    }
                    tr.refined_velocity = Some(last.velocity);
                }
            }
        }

        observed.sort_unstable();
        let states = observed
            .iter()
            .map(|&i| {
                let tr = &self.tracklets[i];
                (tr.id, *tr.last().expect("observed tracklet has a state"))
            })
            .collect();

        let mut keep = dead.iter().map(|d| !d);
        self.tracklets.retain(|_| keep.next().unwrap_or(true));

        Ok(FrameOutput {
            t,
            states,
            association: assoc,
            births,
            deaths,
        })
    }

    fn index_of(&self, id: u64) -> usize {
        self.tracklets.iter().position(|tr| tr.id == id).expect("tracklet id is live")
    }
}

/// Copies of each detection backtracked along its velocity for the
/// `factor` sub-steps up to the keyframe, ordered `k = factor-1, …, 0`.
/// `dt` is the sub-step interval in seconds.
pub fn upsample_detections(dets: &[Detection], factor: usize, dt: f64) -> Result<Vec<Vec<Detection>>> {
    if factor == 0 {
        return Err(Error::InvalidInput("upsample factor must be at least 1".into()));
    }
    if factor == 1 {
        return Ok(vec![dets.to_vec()]);
    }
    (0..factor)
        .rev()
        .map(|k| {
            dets.iter()
                .map(|d| {
                    let v = d.velocity.ok_or(Error::MissingVelocity { t: d.t })?;
                    let mut out = *d;
                    out.bbox.x -= v[0] * k as f64 * dt;
                    out.bbox.y -= v[1] * k as f64 * dt;
                    Ok(out)
                })
                .collect()
        })
        .collect()
}

/// Tracks one scene from its first frame, keeping only detections of
/// `class`. With an upsample factor above 1 the tracker runs at the finer
/// rate (sub-frames carry backtracked detections and no points) and only
/// keyframe outputs are reported.
pub fn run_scene(scene: &Scene, class: ObjectClass, cfg: &PipelineConfig, refiner: Option<&dyn Refiner>) -> Result<TrackerOutput> {
    let factor = cfg.upsample_factor;
    let mut tracker = Tracker::new(cfg.clone(), scene.header.dt / factor as f64)?;
    let mut out = TrackerOutput::default();
    for frame in &scene.frames {
        let dets: Vec<Detection> = frame.detections.iter().filter(|d| d.class == class).copied().collect();
        if factor == 1 {
            let f = Frame {
                detections: dets,
                ..frame.clone()
            };
            out.frames.push(tracker.step(&f, refiner)?);
            continue;
        }
        let subs = upsample_detections(&dets, factor, scene.header.dt / factor as f64)?;
        let base = frame.t * factor as i64;
        for (j, sub) in subs.into_iter().enumerate() {
            let k = (factor - 1 - j) as i64;
            let t = base - k;
            let f = Frame {
                t,
                points: if k == 0 { frame.points.clone() } else { Vec::new() },
                detections: sub.into_iter().map(|d| Detection { t, ..d }).collect(),
                gt: None,
            };
            let fo = tracker.step(&f, refiner)?;
            if k == 0 {
                let mut fo = fo;
                fo.t = frame.t;
                for (_, s) in &mut fo.states {
                    s.t = frame.t;
                }
                out.frames.push(fo);
            }
        }
    }
    Ok(out)
}
