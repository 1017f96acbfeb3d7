//! Training data for the refinement network: tracker-produced windows with
//! ground-truth targets, augmentation, iterative refinement, and the
//! optimization loop.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use seqmot_tensor::{AdamConfig, Adam, Graph, Tensor};
use serde::{Deserialize, Serialize};

use crate::geometry::RigidTransform;
use crate::pipeline::Tracker;
use crate::ssr::{loss, Bound, FrameTarget, LossComponents, SequenceTargets, SsrInput, SsrModel};
use crate::types::{normalize_yaw, Detection, Frame, ObjectClass, PipelineConfig, Scene, State, TimedPoint};
use crate::{Error, Result};

/// One tracklet window with its supervision. Identity switches, false
/// positives and coasting gaps are kept as they come out of the tracker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSequence {
    pub states: Vec<State>,
    pub points: Vec<Vec<TimedPoint>>,
    pub targets: SequenceTargets,
}

impl TrainSequence {
    pub fn validate(&self) -> Result<()> {
        let n = self.states.len();
        if n == 0 {
            return Err(Error::EmptyTracklet);
        }
        if self.points.len() != n || self.targets.frames.len() != n {
            return Err(Error::InvalidInput(format!(
                "training sequence has {n} states, {} point frames and {} targets",
                self.points.len(),
                self.targets.frames.len()
            )));
        }
        Ok(())
    }

    pub fn input(&self) -> Result<SsrInput> {
        SsrInput::new(self.states.clone(), self.points.clone())
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// The tracker settings swept to diversify training windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationConfig {
    pub birth_thresholds: Vec<f64>,
    pub kill_ages: Vec<u32>,
    /// A window is emitted every `stride` frames of a tracklet's life.
    pub stride: usize,
    /// Shorter windows are not emitted.
    pub min_len: usize,
    /// Keep a seeded random subset of at most this many sequences.
    pub max_sequences: Option<usize>,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            birth_thresholds: vec![0.0, 0.3, 0.45, 0.6],
            kill_ages: vec![1, 2, 3],
            stride: 1,
            min_len: 1,
            max_sequences: None,
            seed: 0,
        }
    }
}

impl GenerationConfig {
    /// Every `(birth threshold, kill age)` pair, threshold-major.
    pub fn runs(&self) -> Vec<(f64, u32)> {
        self.birth_thresholds
            .iter()
            .flat_map(|&c| self.kill_ages.iter().map(move |&k| (c, k)))
            .collect()
    }
}

/// Runs the tracker without refinement over every scene and grid setting
/// and turns the emitted windows into training sequences.
pub fn generate_training_sequences(
    scenes: &[Scene],
    class: ObjectClass,
    pipeline: &PipelineConfig,
    gen: &GenerationConfig,
    match_radius: f64,
) -> Result<Vec<TrainSequence>> {
    if gen.stride == 0 {
        return Err(Error::InvalidInput("stride must be at least 1".into()));
    }
    for s in scenes {
        if s.frames.iter().any(|f| f.gt.is_none()) {
            return Err(Error::NoGroundTruth(s.header.scene_id.clone()));
        }
    }
    let runs = gen.runs();
    let jobs: Vec<(usize, f64, u32)> = (0..scenes.len())
        .flat_map(|s| runs.iter().map(move |&(c, k)| (s, c, k)))
        .collect();
    let per_job = jobs
        .par_iter()
        .map(|&(s, c, k)| {
            let cfg = PipelineConfig {
                birth_conf_thresh: c,
                kill_age: k,
                upsample_factor: 1,
                ..pipeline.clone()
            };
            windows_for_run(&scenes[s], class, cfg, gen, match_radius)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut all: Vec<TrainSequence> = per_job.into_iter().flatten().collect();
    if let Some(max) = gen.max_sequences {
        if all.len() > max {
            all.shuffle(&mut ChaCha8Rng::seed_from_u64(gen.seed));
            all.truncate(max);
        }
    }
    Ok(all)
}

fn windows_for_run(scene: &Scene, class: ObjectClass, cfg: PipelineConfig, gen: &GenerationConfig, match_radius: f64) -> Result<Vec<TrainSequence>> {
    let dt = scene.header.dt;
    let by_t: HashMap<i64, &Frame> = scene.frames.iter().map(|f| (f.t, f)).collect();
    let mut tracker = Tracker::new(cfg, dt)?;
    let mut out = Vec::new();
    for frame in &scene.frames {
        let dets: Vec<Detection> = frame.detections.iter().filter(|d| d.class == class).copied().collect();
        let f = Frame {
            detections: dets,
            ..frame.clone()
        };
        let fo = tracker.step(&f, None)?;
        for (id, _) in &fo.states {
            let tr = tracker.tracklets().iter().find(|tr| tr.id == *id).expect("emitted tracklet is live");
            if (tr.age() - 1) % gen.stride as i64 != 0 || tr.len() < gen.min_len {
                continue;
            }
            let targets = assign_targets(tr.states(), &by_t, dt, match_radius)?;
            out.push(TrainSequence {
                states: tr.states().to_vec(),
                points: tr.points().to_vec(),
                targets,
            });
        }
    }
    Ok(out)
}

/// Nearest ground truth within `match_radius` of each state supplies that
/// frame's box and velocity; the size target comes from the object
/// assigned most often.
pub fn assign_targets(states: &[State], frames: &HashMap<i64, &Frame>, dt: f64, match_radius: f64) -> Result<SequenceTargets> {
    let mut votes: BTreeMap<u64, usize> = BTreeMap::new();
    let mut sizes: HashMap<u64, [f64; 3]> = HashMap::new();
    let mut out = Vec::with_capacity(states.len());
    for s in states {
        let gt = frames
            .get(&s.t)
            .ok_or_else(|| Error::InvalidInput(format!("no frame at t={}", s.t)))?
            .gt
            .as_ref()
            .ok_or_else(|| Error::NoGroundTruth(format!("frame t={}", s.t)))?;
        let nearest = gt
            .iter()
            .map(|g| (g.bbox.bev_distance(&s.bbox), g))
            .filter(|(d, _)| *d <= match_radius)
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.id.cmp(&b.1.id)));
        let gt_centers = gt.iter().map(|g| g.bbox.center()).collect();
        out.push(match nearest {
            Some((_, g)) => {
                *votes.entry(g.id).or_default() += 1;
                sizes.insert(g.id, g.bbox.size());
                FrameTarget {
                    valid: true,
                    center: g.bbox.center(),
                    yaw: g.bbox.theta,
                    velocity: [g.velocity[0] * dt, g.velocity[1] * dt],
                    gt_centers,
                }
            }
            None => FrameTarget {
                valid: false,
                center: s.bbox.center(),
                yaw: s.bbox.theta,
                velocity: [s.vx, s.vy],
                gt_centers,
            },
        });
    }
    // Most frequent id; the BTreeMap order breaks ties toward the lower id.
    let modal = votes.iter().fold(None, |best: Option<(u64, usize)>, (&id, &n)| match best {
        Some((_, m)) if m >= n => best,
        _ => Some((id, n)),
    });
    Ok(SequenceTargets {
        frames: out,
        size: modal.map(|(id, _)| sizes[&id]),
    })
}

/// Half-widths of the uniform augmentation intervals. Scales are relative,
/// so `0.05` means a factor in `[0.95, 1.05]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    /// Drop between 1 and `max_drop` leading frames (never the last one).
    pub drop_leading: bool,
    pub max_drop: usize,
    pub seq_rotation: f64,
    pub seq_scale: f64,
    pub reflect_prob: f64,
    pub box_translation: f64,
    pub box_rotation: f64,
    pub box_scale: f64,
    pub jitter_translation: f64,
    pub jitter_rotation: f64,
}

impl AugmentConfig {
    pub fn standard(window: usize) -> Self {
        AugmentConfig {
            drop_leading: true,
            max_drop: window,
            seq_rotation: 1.57,
            seq_scale: 0.05,
            reflect_prob: 0.5,
            box_translation: 0.2,
            box_rotation: 0.25,
            box_scale: 0.10,
            jitter_translation: 0.1,
            jitter_rotation: 0.1,
        }
    }

    pub fn identity() -> Self {
        AugmentConfig {
            drop_leading: false,
            max_drop: 0,
            seq_rotation: 0.0,
            seq_scale: 0.0,
            reflect_prob: 0.0,
            box_translation: 0.0,
            box_rotation: 0.0,
            box_scale: 0.0,
            jitter_translation: 0.0,
            jitter_rotation: 0.0,
        }
    }
}

/// Sampled values for one augmentation pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentParams {
    pub dropped: usize,
    pub seq_rotation: f64,
    pub seq_scale: f64,
    pub reflect: bool,
    pub box_translation: [f64; 2],
    pub box_rotation: f64,
    pub box_scale: f64,
    /// Per remaining frame: `[dx, dy, dyaw]`.
    pub jitter: Vec<[f64; 3]>,
}

fn symmetric(rng: &mut ChaCha8Rng, half: f64) -> f64 {
    if half == 0.0 {
        0.0
    } else {
        rng.random_range(-half..=half)
    }
}

pub fn sample_augment(cfg: &AugmentConfig, len: usize, rng: &mut ChaCha8Rng) -> AugmentParams {
    let max_drop = cfg.max_drop.min(len.saturating_sub(1));
    let dropped = if cfg.drop_leading && max_drop >= 1 {
        rng.random_range(1..=max_drop)
    } else {
        0
    };
    let seq_rotation = symmetric(rng, cfg.seq_rotation);
    let seq_scale = 1.0 + symmetric(rng, cfg.seq_scale);
    let reflect = cfg.reflect_prob > 0.0 && rng.random_bool(cfg.reflect_prob);
    let box_translation = [symmetric(rng, cfg.box_translation), symmetric(rng, cfg.box_translation)];
    let box_rotation = symmetric(rng, cfg.box_rotation);
    let box_scale = 1.0 + symmetric(rng, cfg.box_scale);
    let jitter = (0..len - dropped)
        .map(|_| {
            [
                symmetric(rng, cfg.jitter_translation),
                symmetric(rng, cfg.jitter_translation),
                symmetric(rng, cfg.jitter_rotation),
            ]
        })
        .collect();
    AugmentParams {
        dropped,
        seq_rotation,
        seq_scale,
        reflect,
        box_translation,
        box_rotation,
        box_scale,
        jitter,
    }
}

/// A transform about `pivot` in BEV followed by `shift`.
fn about(pivot: [f64; 3], rotation: f64, scale: f64, reflect_x: bool, shift: [f64; 2]) -> RigidTransform {
    let linear = RigidTransform {
        rotation,
        scale,
        translation: [0.0, 0.0],
        reflect_x,
    };
    let moved = linear.apply_vector([pivot[0], pivot[1]]);
    RigidTransform {
        translation: [pivot[0] - moved[0] + shift[0], pivot[1] - moved[1] + shift[1]],
        ..linear
    }
}

fn transform_state(tf: &RigidTransform, s: &State) -> Result<State> {
    let [vx, vy] = tf.apply_vector([s.vx, s.vy]);
    Ok(State {
        bbox: tf.apply_box(&s.bbox)?,
        vx,
        vy,
        ..*s
    })
}

/// Applies, in order: leading-frame drop, a whole-sequence transform of
/// boxes, points and targets, a box-only global transform, and per-frame
/// box jitter. The last two leave targets untouched. Sequence transforms
/// pivot on the last box center.
pub fn apply_augment(seq: &TrainSequence, p: &AugmentParams) -> Result<TrainSequence> {
    seq.validate()?;
    let d = p.dropped;
    if d >= seq.len() || p.jitter.len() != seq.len() - d {
        return Err(Error::InvalidInput("augmentation parameters do not fit the sequence".into()));
    }
    let mut states = seq.states[d..].to_vec();
    let mut points = seq.points[d..].to_vec();
    let mut targets = SequenceTargets {
        frames: seq.targets.frames[d..].to_vec(),
        size: seq.targets.size,
    };
    let pivot = states.last().expect("non-empty").bbox.center();

    let tf = about(pivot, p.seq_rotation, p.seq_scale, p.reflect, [0.0, 0.0]);
    if !tf.is_identity() {
        for s in &mut states {
            *s = transform_state(&tf, s)?;
        }
        for frame in &mut points {
            for q in frame.iter_mut() {
                *q = tf.apply_timed(q);
            }
        }
        for t in &mut targets.frames {
            t.center = tf.apply_point(t.center);
            t.yaw = tf.apply_yaw(t.yaw)?;
            t.velocity = tf.apply_vector(t.velocity);
            for c in &mut t.gt_centers {
                *c = tf.apply_point(*c);
            }
        }
        if let Some(size) = &mut targets.size {
            for v in size.iter_mut() {
                *v *= tf.scale;
            }
        }
    }

    let pivot = states.last().expect("non-empty").bbox.center();
    let tf = about(pivot, p.box_rotation, p.box_scale, false, p.box_translation);
    if !tf.is_identity() {
        for s in &mut states {
            *s = transform_state(&tf, s)?;
        }
    }

    for (s, j) in states.iter_mut().zip(&p.jitter) {
        if *j == [0.0; 3] {
            continue;
        }
        s.bbox.x += j[0];
        s.bbox.y += j[1];
        s.bbox.theta = normalize_yaw(s.bbox.theta + j[2])?;
    }
    Ok(TrainSequence { states, points, targets })
}

pub fn augment(seq: &TrainSequence, cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Result<(TrainSequence, AugmentParams)> {
    let params = sample_augment(cfg, seq.len(), rng);
    Ok((apply_augment(seq, &params)?, params))
}

pub const MAX_REFINE_PASSES: usize = 4;

/// Probability of stopping iterative refinement after each pass.
pub fn p_end(epoch: usize) -> f64 {
    (1.0 - epoch as f64 / 8.0).min(0.4).clamp(0.0, 1.0)
}

/// Number of refinement passes, in `1..=MAX_REFINE_PASSES`.
pub fn sample_pass_count(p_end: f64, rng: &mut ChaCha8Rng) -> usize {
    let mut passes = 1;
    while passes < MAX_REFINE_PASSES && !rng.random_bool(p_end) {
        passes += 1;
    }
    passes
}

/// Feeds the network its own refined states for all but the final pass.
/// Returns the input for the final (gradient-carrying) pass and the total
/// pass count.
pub fn iterative_refine_step(model: &SsrModel, input: SsrInput, epoch: usize, rng: &mut ChaCha8Rng) -> Result<(SsrInput, usize)> {
    let passes = sample_pass_count(p_end(epoch), rng);
    let mut input = input;
    for _ in 1..passes {
        let refined = model.refine(&input)?;
        input.states = refined.apply(&input.states, true)?;
    }
    Ok((input, passes))
}

pub const BASE_LR: f64 = 0.0025;
pub const LR_DECAY: f64 = 0.95;

pub fn lr_schedule(epoch: usize) -> f64 {
    BASE_LR * LR_DECAY.powi(epoch as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub base_lr: f64,
    pub lr_decay: f64,
    pub iterative: bool,
    pub augment: AugmentConfig,
}

impl TrainConfig {
    pub fn new(window: usize) -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 16,
            seed: 0,
            base_lr: BASE_LR,
            lr_decay: LR_DECAY,
            iterative: false,
            augment: AugmentConfig::standard(window),
        }
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        self.base_lr * self.lr_decay.powi(epoch as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch_size must be at least 1".into()));
        }
        if !(self.base_lr > 0.0) || !(self.lr_decay > 0.0) {
            return Err(Error::InvalidInput("learning rate and decay must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.augment.reflect_prob) {
            return Err(Error::InvalidInput("reflect_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    /// Sequences that produced a loss (windows without points are skipped).
    pub sequences: usize,
    pub mean: LossComponents,
    pub mean_passes: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

impl TrainReport {
    pub fn loss_curve(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean.total).collect()
    }
}

struct SequenceStep {
    grads: Vec<Tensor>,
    components: LossComponents,
    passes: usize,
}

fn sequence_step(model: &SsrModel, seq: &TrainSequence, cfg: &TrainConfig, epoch: usize, batch: usize, seed: u64) -> Result<Option<SequenceStep>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (seq, _) = augment(seq, &cfg.augment, &mut rng)?;
    let mut input = seq.input()?;
    let mut passes = 1;
    if cfg.iterative {
        (input, passes) = iterative_refine_step(model, input, epoch, &mut rng)?;
    }
    let Some(prep) = model.prepare(&input)? else {
        return Ok(None);
    };
    let graph = Graph::new();
    let p = Bound::new(&graph, model.params());
    let out = model.forward(&p, &prep)?;
    let (l, components) = loss(&out, &prep, &seq.targets, model.config())?;
    if !components.total.is_finite() {
        return Err(Error::Divergence { epoch, batch });
    }
    let g = graph.backward(l)?;
    let grads: Vec<Tensor> = (0..model.params().len()).map(|i| g.wrt(p.get(i))).collect();
    if grads.iter().any(|t| t.data().iter().any(|v| !v.is_finite())) {
        return Err(Error::Divergence { epoch, batch });
    }
    Ok(Some(SequenceStep {
        grads,
        components,
        passes,
    }))
}

fn accumulate(sum: &mut LossComponents, c: &LossComponents) {
    sum.center += c.center;
    sum.yaw += c.yaw;
    sum.velocity += c.velocity;
    sum.size_cls += c.size_cls;
    sum.size_res += c.size_res;
    sum.conf += c.conf;
    sum.box_total += c.box_total;
    sum.total += c.total;
}

fn scaled(c: &LossComponents, k: f64) -> LossComponents {
    LossComponents {
        center: c.center * k,
        yaw: c.yaw * k,
        velocity: c.velocity * k,
        size_cls: c.size_cls * k,
        size_res: c.size_res * k,
        conf: c.conf * k,
        box_total: c.box_total * k,
        total: c.total * k,
    }
}

/// Minibatch Adam over the dataset. Shuffling, augmentation and iterative
/// refinement all draw from `cfg.seed`, so the run is reproducible
/// regardless of thread count.
pub fn train(model: &mut SsrModel, data: &[TrainSequence], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    for s in data {
        s.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.params().tensors(), AdamConfig::default());
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr(epoch);
        order.shuffle(&mut rng);
        let mut sum = LossComponents::default();
        let mut count = 0usize;
        let mut passes = 0usize;
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let seeds: Vec<u64> = chunk.iter().map(|_| rng.random()).collect();
            let model_ref: &SsrModel = model;
            let steps = chunk
                .par_iter()
                .zip(&seeds)
                .map(|(&i, &seed)| sequence_step(model_ref, &data[i], cfg, epoch, batch, seed))
                .collect::<Result<Vec<_>>>()?;
            let steps: Vec<SequenceStep> = steps.into_iter().flatten().collect();
            if steps.is_empty() {
                continue;
            }
            let mut grads: Vec<Tensor> = steps[0].grads.clone();
            for s in &steps[1..] {
                for (acc, g) in grads.iter_mut().zip(&s.grads) {
                    for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += v;
                    }
                }
            }
            let k = 1.0 / steps.len() as f64;
            for g in &mut grads {
                for v in g.data_mut() {
                    *v *= k;
                }
            }
            adam.step(model.params_mut().tensors_mut(), &grads, lr);
            for s in &steps {
                accumulate(&mut sum, &s.components);
                passes += s.passes;
            }
            count += steps.len();
        }
        let k = if count > 0 { 1.0 / count as f64 } else { 0.0 };
        let stats = EpochStats {
            epoch,
            lr,
            sequences: count,
            mean: scaled(&sum, k),
            mean_passes: passes as f64 * k,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} (box {:.4}, conf {:.4}) over {count} sequences, lr {lr:.6}",
            stats.mean.total,
            stats.mean.box_total,
            stats.mean.conf
        );
        report.epochs.push(stats);
    }
    Ok(report)
}
