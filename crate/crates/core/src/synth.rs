//! Synthetic scenarios: ground-truth trajectories, surface-sampled object
//! points, and a detector-noise model with misses, false positives, and
//! occlusion episodes.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::types::{normalize_yaw, Box7, Detection, Frame, GtObject, ObjectClass, Scene, SceneHeader};
use crate::{Error, Result};

pub use crate::io::SCHEMA_VERSION;

/// Extent distribution `(l, w, h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeDist {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionModel {
    /// Meters per second.
    pub speed_min: f64,
    pub speed_max: f64,
    /// Radians per second, symmetric around zero.
    pub turn_rate_max: f64,
}

/// LIDAR-like return counts: `near / (1 + (d / falloff)²)` points on the
/// object surface at sensor range `d`, capped at `max_points`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointModel {
    pub near: f64,
    pub falloff: f64,
    pub max_points: usize,
    /// Gaussian jitter on each surface point, meters.
    pub sigma: f64,
    /// Background points per frame, uniform over the arena near the ground.
    pub clutter: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    /// Per-axis center noise, truncated at 3σ.
    pub center_sigma: f64,
    pub yaw_sigma: f64,
    /// Relative extent noise.
    pub size_sigma: f64,
    /// Velocity noise, meters per second.
    pub velocity_sigma: f64,
    /// Confidence falls off as `exp(-conf_alpha * center_error)`.
    pub conf_alpha: f64,
    pub conf_jitter: f64,
    /// Expected false positives per frame per live object.
    pub fp_rate: f64,
    /// False-positive confidence is Beta(a, b).
    pub fp_conf_beta: [f64; 2],
    pub miss_rate: f64,
    /// Per-frame probability that a visible object enters an occlusion
    /// episode.
    pub occlusion_rate: f64,
    /// Inclusive episode length range, frames.
    pub occlusion_len: [usize; 2],
    /// Static clutter sites that keep producing low-confidence detections.
    pub ghosts: usize,
    pub ghost_detect_prob: f64,
}

impl NoiseModel {
    pub fn none() -> Self {
        NoiseModel {
            center_sigma: 0.0,
            yaw_sigma: 0.0,
            size_sigma: 0.0,
            velocity_sigma: 0.0,
            conf_alpha: 1.0,
            conf_jitter: 0.0,
            fp_rate: 0.0,
            fp_conf_beta: [2.0, 5.0],
            miss_rate: 0.0,
            occlusion_rate: 0.0,
            occlusion_len: [1, 1],
            ghosts: 0,
            ghost_detect_prob: 0.0,
        }
    }

    pub fn moderate() -> Self {
        NoiseModel {
            center_sigma: 0.3,
            yaw_sigma: 0.08,
            size_sigma: 0.05,
            velocity_sigma: 0.5,
            conf_alpha: 1.0,
            conf_jitter: 0.15,
            fp_rate: 0.08,
            fp_conf_beta: [2.0, 4.0],
            miss_rate: 0.1,
            occlusion_rate: 0.03,
            occlusion_len: [2, 5],
            ghosts: 2,
            ghost_detect_prob: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_objects: usize,
    pub n_frames: usize,
    /// Seconds per frame.
    pub dt: f64,
    pub class: ObjectClass,
    pub size: SizeDist,
    pub motion: MotionModel,
    pub points: PointModel,
    pub noise: NoiseModel,
    /// Objects spawn in `[-arena, arena]²`.
    pub arena: f64,
    pub min_lifespan: usize,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn for_class(class: ObjectClass) -> Self {
        let (size, motion) = match class {
            ObjectClass::Pedestrian => (
                SizeDist {
                    mean: [0.8, 0.7, 1.75],
                    std: [0.1, 0.08, 0.1],
                },
                MotionModel {
                    speed_min: 0.5,
                    speed_max: 2.0,
                    turn_rate_max: 0.4,
                },
            ),
            _ => (
                SizeDist {
                    mean: [4.6, 1.9, 1.7],
                    std: [0.4, 0.12, 0.15],
                },
                MotionModel {
                    speed_min: 1.0,
                    speed_max: 8.0,
                    turn_rate_max: 0.15,
                },
            ),
        };
        ScenarioConfig {
            n_objects: 10,
            n_frames: 40,
            dt: 0.5,
            class,
            size,
            motion,
            points: PointModel {
                near: 150.0,
                falloff: 15.0,
                max_points: 48,
                sigma: 0.03,
                clutter: 150,
            },
            noise: NoiseModel::moderate(),
            arena: 30.0,
            min_lifespan: 8,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("scenario config: {m}")));
        let n = &self.noise;
        let rates = [n.fp_rate, n.miss_rate, n.occlusion_rate, n.ghost_detect_prob];
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return bad("rates must lie in [0, 1]");
        }
        let sigmas = [n.center_sigma, n.yaw_sigma, n.size_sigma, n.velocity_sigma, n.conf_jitter, self.points.sigma];
        if sigmas.iter().chain(&self.size.std).any(|s| !(*s >= 0.0)) {
            return bad("noise scales must be nonnegative");
        }
        if !(self.dt > 0.0) || self.n_frames == 0 || !(self.arena > 0.0) {
            return bad("dt, n_frames and arena must be positive");
        }
        if self.size.mean.iter().any(|m| !(*m > 0.0)) {
            return bad("mean extents must be positive");
        }
        if self.motion.speed_min < 0.0 || self.motion.speed_max < self.motion.speed_min {
            return bad("speed range is invalid");
        }
        if n.occlusion_len[0] == 0 || n.occlusion_len[1] < n.occlusion_len[0] {
            return bad("occlusion_len must be a non-empty range of positive lengths");
        }
        if !(n.fp_conf_beta[0] > 0.0 && n.fp_conf_beta[1] > 0.0) {
            return bad("fp_conf_beta parameters must be positive");
        }
        Ok(())
    }
}

/// A generated scene plus the ground-truth id behind each detection
/// (`None` for false positives).
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub scene: Scene,
    pub provenance: Vec<Vec<Option<u64>>>,
}

/// The RNG for scene `index` of a dataset seeded with `seed`.
pub fn scene_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn normal(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).expect("sigma is finite").sample(rng)
}

/// Gaussian sample rejected outside ±3σ.
fn truncated_normal(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    loop {
        let x = normal(rng, sigma);
        if x.abs() <= 3.0 * sigma {
            return x;
        }
    }
}

fn sample_size(rng: &mut ChaCha8Rng, d: &SizeDist) -> [f64; 3] {
    let mut s = [0.0; 3];
    for k in 0..3 {
        s[k] = (d.mean[k] + truncated_normal(rng, d.std[k])).max(0.2 * d.mean[k]);
    }
    s
}

struct Trajectory {
    birth: usize,
    boxes: Vec<Box7>,
    occluded: Vec<bool>,
}

fn trajectory(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Result<Trajectory> {
    let n = cfg.n_frames;
    let min_life = cfg.min_lifespan.clamp(1, n);
    let birth = rng.random_range(0..=n - min_life);
    let life = rng.random_range(min_life..=n - birth);
    let [l, w, h] = sample_size(rng, &cfg.size);
    let mut x = rng.random_range(-cfg.arena..=cfg.arena);
    let mut y = rng.random_range(-cfg.arena..=cfg.arena);
    let mut heading = rng.random_range(-PI..PI);
    let m = &cfg.motion;
    let speed = rng.random_range(m.speed_min..=m.speed_max);
    let turn = if m.turn_rate_max > 0.0 {
        rng.random_range(-m.turn_rate_max..=m.turn_rate_max)
    } else {
        0.0
    };
    let mut boxes = Vec::with_capacity(life);
    let mut occluded = Vec::with_capacity(life);
    let mut occlusion_left = 0usize;
    let nm = &cfg.noise;
    for _ in 0..life {
        boxes.push(Box7::new(x, y, h / 2.0, l, w, h, heading)?);
        if occlusion_left == 0 && nm.occlusion_rate > 0.0 && rng.random_bool(nm.occlusion_rate) {
            occlusion_left = rng.random_range(nm.occlusion_len[0]..=nm.occlusion_len[1]);
        }
        occluded.push(occlusion_left > 0);
        occlusion_left = occlusion_left.saturating_sub(1);
        x += speed * cfg.dt * heading.cos();
        y += speed * cfg.dt * heading.sin();
        heading = normalize_yaw(heading + turn * cfg.dt)?;
    }
    Ok(Trajectory { birth, boxes, occluded })
}

/// Points uniformly distributed over the top and four side faces.
fn surface_points(b: &Box7, count: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let (l, w, h) = (b.l, b.w, b.h);
    let areas = [l * w, w * h, w * h, l * h, l * h];
    let total: f64 = areas.iter().sum();
    let (s, c) = b.theta.sin_cos();
    (0..count)
        .map(|_| {
            let mut pick = rng.random_range(0.0..total);
            let mut face = 0;
            while face < 4 && pick >= areas[face] {
                pick -= areas[face];
                face += 1;
            }
            let u = rng.random_range(-0.5..=0.5);
            let v = rng.random_range(-0.5..=0.5);
            let (px, py, pz) = match face {
                0 => (u * l, v * w, 0.5 * h),
                1 => (0.5 * l, u * w, v * h),
                2 => (-0.5 * l, u * w, v * h),
                3 => (u * l, 0.5 * w, v * h),
                _ => (u * l, -0.5 * w, v * h),
            };
            let (px, py, pz) = (px + normal(rng, sigma), py + normal(rng, sigma), pz + normal(rng, sigma));
            [b.x + c * px - s * py, b.y + s * px + c * py, b.z + pz]
        })
        .collect()
}

fn point_count(cfg: &PointModel, b: &Box7) -> usize {
    let d = b.x.hypot(b.y);
    let n = cfg.near / (1.0 + (d / cfg.falloff).powi(2));
    (n.round() as usize).min(cfg.max_points)
}

/// Noisy detector output for one frame: perturbed true detections (with
/// Bernoulli misses) followed by Poisson false positives. Returns each
/// detection with the ground-truth id it came from.
pub fn perturb_detections(gt: &[GtObject], cfg: &ScenarioConfig, t: i64, rng: &mut ChaCha8Rng) -> Result<Vec<(Detection, Option<u64>)>> {
    let nm = &cfg.noise;
    let mut out = Vec::new();
    for g in gt {
        if nm.miss_rate > 0.0 && rng.random_bool(nm.miss_rate) {
            continue;
        }
        let b = &g.bbox;
        let dx = truncated_normal(rng, nm.center_sigma);
        let dy = truncated_normal(rng, nm.center_sigma);
        let dz = truncated_normal(rng, nm.center_sigma);
        let scale = |rng: &mut ChaCha8Rng| (1.0 + truncated_normal(rng, nm.size_sigma)).max(0.5);
        let bbox = Box7::new(
            b.x + dx,
            b.y + dy,
            b.z + dz,
            b.l * scale(rng),
            b.w * scale(rng),
            b.h * scale(rng),
            b.theta + truncated_normal(rng, nm.yaw_sigma),
        )?;
        let err = dx.hypot(dy);
        let conf = ((-nm.conf_alpha * err).exp() + normal(rng, nm.conf_jitter)).clamp(0.0, 1.0);
        let velocity = [g.velocity[0] + normal(rng, nm.velocity_sigma), g.velocity[1] + normal(rng, nm.velocity_sigma)];
        out.push((
            Detection {
                bbox,
                conf,
                class: cfg.class,
                t,
                velocity: Some(velocity),
            },
            Some(g.id),
        ));
    }
    let lambda = nm.fp_rate * gt.len() as f64;
    let n_fp = if lambda > 0.0 {
        Poisson::new(lambda).expect("positive rate").sample(rng) as usize
    } else {
        0
    };
    for _ in 0..n_fp {
        out.push((false_positive(cfg, t, rng)?, None));
    }
    Ok(out)
}

fn false_positive(cfg: &ScenarioConfig, t: i64, rng: &mut ChaCha8Rng) -> Result<Detection> {
    let [l, w, h] = sample_size(rng, &cfg.size);
    let x = rng.random_range(-cfg.arena..=cfg.arena);
    let y = rng.random_range(-cfg.arena..=cfg.arena);
    let bbox = Box7::new(x, y, h / 2.0, l, w, h, rng.random_range(-PI..PI))?;
    Ok(Detection {
        bbox,
        conf: fp_conf(cfg, rng),
        class: cfg.class,
        t,
        velocity: Some([normal(rng, 1.0), normal(rng, 1.0)]),
    })
}

fn fp_conf(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> f64 {
    let [a, b] = cfg.noise.fp_conf_beta;
    Beta::new(a, b).expect("positive parameters").sample(rng)
}

/// Generates scene `index` of a dataset; fully determined by
/// `(cfg.seed, index)`.
pub fn generate_scene(cfg: &ScenarioConfig, index: u64) -> Result<SyntheticScene> {
    cfg.validate()?;
    let mut rng = scene_rng(cfg.seed, index);
    let trajectories = (0..cfg.n_objects).map(|_| trajectory(cfg, &mut rng)).collect::<Result<Vec<_>>>()?;
    // Ghost sites: static blobs of clutter that the detector keeps firing on.
    let ghosts: Vec<(Box7, [f64; 3])> = (0..cfg.noise.ghosts)
        .map(|_| {
            let [l, w, h] = sample_size(&mut rng, &cfg.size);
            let x = rng.random_range(-cfg.arena..=cfg.arena);
            let y = rng.random_range(-cfg.arena..=cfg.arena);
            Ok((Box7::new(x, y, h / 2.0, l, w, h, rng.random_range(-PI..PI))?, [0.5 * l, 0.5 * w, h]))
        })
        .collect::<Result<_>>()?;

    let mut frames = Vec::with_capacity(cfg.n_frames);
    let mut provenance = Vec::with_capacity(cfg.n_frames);
    for f in 0..cfg.n_frames {
        let t = f as i64;
        let mut points: Vec<[f64; 3]> = Vec::new();
        let mut gt = Vec::new();
        for (id, tr) in trajectories.iter().enumerate() {
            if f < tr.birth || f >= tr.birth + tr.boxes.len() {
                continue;
            }
            let k = f - tr.birth;
            let b = tr.boxes[k];
            if tr.occluded[k] {
                continue;
            }
            let n = point_count(&cfg.points, &b);
            if n == 0 {
                continue;
            }
            points.extend(surface_points(&b, n, cfg.points.sigma, &mut rng));
            let velocity = if tr.boxes.len() == 1 {
                [0.0, 0.0]
            } else {
                let (a, c) = if k == 0 { (tr.boxes[0], tr.boxes[1]) } else { (tr.boxes[k - 1], tr.boxes[k]) };
                [(c.x - a.x) / cfg.dt, (c.y - a.y) / cfg.dt]
            };
            gt.push(GtObject {
                id: id as u64,
                bbox: b,
                velocity,
            });
        }
        for _ in 0..cfg.points.clutter {
            points.push([
                rng.random_range(-cfg.arena..=cfg.arena),
                rng.random_range(-cfg.arena..=cfg.arena),
                rng.random_range(0.0..0.3),
            ]);
        }
        let mut dets = perturb_detections(&gt, cfg, t, &mut rng)?;
        for (site, spread) in &ghosts {
            let n = point_count(&cfg.points, site) / 2;
            for _ in 0..n {
                points.push([
                    site.x + normal(&mut rng, spread[0] * 0.5),
                    site.y + normal(&mut rng, spread[1] * 0.5),
                    rng.random_range(0.0..spread[2]),
                ]);
            }
            if rng.random_bool(cfg.noise.ghost_detect_prob) {
                let mut bbox = *site;
                bbox.x += truncated_normal(&mut rng, cfg.noise.center_sigma);
                bbox.y += truncated_normal(&mut rng, cfg.noise.center_sigma);
                let det = Detection {
                    bbox,
                    conf: fp_conf(cfg, &mut rng),
                    class: cfg.class,
                    t,
                    velocity: Some([normal(&mut rng, 0.3), normal(&mut rng, 0.3)]),
                };
                dets.push((det, None));
            }
        }
        provenance.push(dets.iter().map(|d| d.1).collect());
        frames.push(Frame {
            t,
            points,
            detections: dets.into_iter().map(|d| d.0).collect(),
            gt: Some(gt),
        });
    }
    Ok(SyntheticScene {
        scene: Scene {
            header: SceneHeader {
                schema_version: SCHEMA_VERSION,
                dt: cfg.dt,
                class: cfg.class,
                scene_id: format!("synth-{}-{index:04}", cfg.seed),
            },
            frames,
        },
        provenance,
    })
}

/// Generates scenes `0..n` in parallel.
pub fn generate_dataset(cfg: &ScenarioConfig, n: usize) -> Result<Vec<SyntheticScene>> {
    use rayon::prelude::*;
    (0..n as u64).into_par_iter().map(|i| generate_scene(cfg, i)).collect()
}
