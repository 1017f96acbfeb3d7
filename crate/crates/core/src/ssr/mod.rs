//! Sequence-to-sequence tracklet refinement.
//!
//! The network consumes one tracklet window (per-frame box states plus the
//! object points cropped at each frame) and re-estimates the whole window
//! at once: a shared object size, and per-frame center, yaw, BEV velocity,
//! and confidence.
//!
//! Encoding runs two branches over object-aware point features. A shared
//! per-point MLP forms the first; the second subsamples anchors per frame,
//! pools their neighborhoods, appends a learned 4-D positional embedding,
//! and runs self-attention across every anchor of every frame before
//! interpolating back to the points. Decoding groups the per-point features
//! by frame.

mod features;
mod loss;
mod model;
mod nn;

use serde::{Deserialize, Serialize};

pub use features::{build_point_features, farthest_point_sample, Prepared};
pub use loss::{confidence_target, confidence_targets, loss, loss_with_conf_targets, FrameTarget, LossComponents, SequenceTargets};
pub use model::{decode_size, SsrModel, SsrOutputs};
pub use nn::Bound;

use crate::types::{ObjectClass, State, TimedPoint};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub center: f64,
    pub yaw: f64,
    pub velocity: f64,
    pub size_cls: f64,
    pub size_res: f64,
    pub conf: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            center: 3.0,
            yaw: 3.0,
            velocity: 1.5,
            size_cls: 1.0,
            size_res: 1.5,
            conf: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsrConfig {
    /// Width of each encoder branch; the concatenated per-point feature is
    /// twice this.
    pub feat_dim: usize,
    /// Hidden width of the per-point and neighborhood MLPs.
    pub point_hidden: usize,
    pub anchors_per_frame: usize,
    /// Neighborhood radius for anchor pooling, meters.
    pub sa_radius: f64,
    /// Maximum neighbors pooled per anchor.
    pub group_cap: usize,
    pub pos_dim: usize,
    pub attn_layers: usize,
    pub attn_heads: usize,
    pub ffn_dim: usize,
    pub head_hidden: usize,
    /// Size bins `(l, w, h)`.
    pub size_templates: Vec<[f64; 3]>,
    /// Confidence-target temperature.
    pub alpha: f64,
    /// Boxes farther than this from their ground truth get target 0.
    pub match_radius: f64,
    pub weights: LossWeights,
    pub refine_size: bool,
    pub init_seed: u64,
}

impl SsrConfig {
    pub fn for_class(class: ObjectClass) -> Self {
        let base = SsrConfig::default();
        match class {
            ObjectClass::Car => base,
            ObjectClass::Vehicle => SsrConfig {
                alpha: 1.2,
                refine_size: false,
                size_templates: vec![[4.2, 1.8, 1.5], [4.8, 2.0, 1.7], [5.6, 2.2, 2.0], [9.0, 2.6, 3.2]],
                ..base
            },
            ObjectClass::Pedestrian => SsrConfig {
                sa_radius: 0.6,
                alpha: 1.0,
                match_radius: 1.0,
                size_templates: vec![[0.6, 0.6, 1.6], [0.75, 0.7, 1.75], [0.9, 0.8, 1.85], [1.1, 0.9, 1.9]],
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("ssr config: {m}")));
        if self.anchors_per_frame == 0 {
            return bad("anchors_per_frame must be at least 1");
        }
        if !(self.sa_radius > 0.0) {
            return bad("sa_radius must be positive");
        }
        if self.attn_heads == 0 || self.feat_dim % self.attn_heads != 0 {
            return bad("feat_dim must be a multiple of attn_heads");
        }
        if self.group_cap == 0 || self.feat_dim == 0 || self.point_hidden == 0 {
            return bad("layer widths must be positive");
        }
        if self.size_templates.is_empty() || self.size_templates.iter().flatten().any(|&v| !(v > 0.0)) {
            return bad("size_templates must be non-empty and positive");
        }
        if !(self.alpha > 0.0) || !(self.match_radius > 0.0) {
            return bad("alpha and match_radius must be positive");
        }
        let w = &self.weights;
        if [w.center, w.yaw, w.velocity, w.size_cls, w.size_res, w.conf].iter().any(|&x| !(x >= 0.0)) {
            return bad("loss weights must be nonnegative");
        }
        Ok(())
    }

    /// Stable hash recorded in checkpoints.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl Default for SsrConfig {
    fn default() -> Self {
        SsrConfig {
            feat_dim: 256,
            point_hidden: 128,
            anchors_per_frame: 10,
            sa_radius: 1.5,
            group_cap: 32,
            pos_dim: 64,
            attn_layers: 4,
            attn_heads: 4,
            ffn_dim: 512,
            head_hidden: 256,
            size_templates: vec![[3.9, 1.7, 1.5], [4.4, 1.85, 1.6], [4.9, 1.95, 1.75], [5.6, 2.1, 2.0]],
            alpha: 0.75,
            match_radius: 2.0,
            weights: LossWeights::default(),
            refine_size: true,
            init_seed: 0,
        }
    }
}

/// One tracklet window handed to the network: aligned states and points.
#[derive(Debug, Clone, PartialEq)]
pub struct SsrInput {
    pub states: Vec<State>,
    pub points: Vec<Vec<TimedPoint>>,
}

impl SsrInput {
    pub fn new(states: Vec<State>, points: Vec<Vec<TimedPoint>>) -> Result<Self> {
        if states.len() != points.len() {
            return Err(Error::InvalidInput(format!(
                "{} states but {} point frames",
                states.len(),
                points.len()
            )));
        }
        if states.is_empty() {
            return Err(Error::EmptyTracklet);
        }
        Ok(SsrInput { states, points })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn num_points(&self) -> usize {
        self.points.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinedFrame {
    pub t: i64,
    pub center: [f64; 3],
    pub yaw: f64,
    /// Meters per frame interval.
    pub velocity: [f64; 2],
    pub conf: f64,
    /// The frame had no points; values were copied from the input state.
    pub fallback: bool,
}

/// Network output for a whole window.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedSequence {
    pub frames: Vec<RefinedFrame>,
    /// Shared `(l, w, h)`; `None` when size refinement is disabled.
    pub size: Option<[f64; 3]>,
}

impl RefinedSequence {
    /// Every frame falls back to its input state.
    pub fn passthrough(input: &SsrInput) -> Self {
        RefinedSequence {
            frames: input.states.iter().map(fallback_frame).collect(),
            size: None,
        }
    }

    /// Input states with refined values substituted. With `boxes` false
    /// only confidences are replaced.
    pub fn apply(&self, states: &[State], boxes: bool) -> Result<Vec<State>> {
        if states.len() != self.frames.len() {
            return Err(Error::InvalidInput("refined sequence length mismatch".into()));
        }
        states
            .iter()
            .zip(&self.frames)
            .map(|(s, f)| {
                let mut out = *s;
                if f.fallback {
                    return Ok(out);
                }
                out.conf = f.conf;
                if boxes {
                    out.bbox.x = f.center[0];
                    out.bbox.y = f.center[1];
                    out.bbox.z = f.center[2];
                    out.bbox.theta = f.yaw;
                    out.vx = f.velocity[0];
                    out.vy = f.velocity[1];
                    if let Some([l, w, h]) = self.size {
                        out.bbox.l = l;
                        out.bbox.w = w;
                        out.bbox.h = h;
                    }
                }
                out.validated()
            })
            .collect()
    }
}

pub(crate) fn fallback_frame(s: &State) -> RefinedFrame {
    RefinedFrame {
        t: s.t,
        center: s.bbox.center(),
        yaw: s.bbox.theta,
        velocity: [s.vx, s.vy],
        conf: s.conf,
        fallback: true,
    }
}
