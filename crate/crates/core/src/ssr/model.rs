use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seqmot_tensor::{Checkpoint, Graph, ParamStore, Tensor, Var};

use super::features::{Prepared, GROUP_FEATURES, POINT_FEATURES};
use super::nn::{AttentionLayer, Bound, LayerNorm, Linear, Mlp};
use super::{fallback_frame, RefinedFrame, RefinedSequence, SsrConfig, SsrInput};
use crate::types::normalize_yaw;
use crate::{Error, Result};

const MIN_DECODED_EXTENT: f64 = 1e-3;

#[derive(Debug, Clone)]
struct Net {
    point_mlp: Mlp,
    point_norm: LayerNorm,
    group_mlp: Mlp,
    pos_mlp: Mlp,
    token_proj: Linear,
    attention: Vec<AttentionLayer>,
    propagate: Linear,
    token_norm: LayerNorm,
    size_head: Option<Mlp>,
    vote_head: Mlp,
    yaw_head: Mlp,
    conf_head: Mlp,
    vel_head: Mlp,
}

impl Net {
    fn new(cfg: &SsrConfig, store: &mut ParamStore) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let d = cfg.feat_dim;
        let h = cfg.point_hidden;
        let wide = 2 * d;
        let hh = cfg.head_hidden;
        let b = cfg.size_templates.len();
        Ok(Net {
            point_mlp: Mlp::new(store, "point_mlp", &[POINT_FEATURES, h, d, d], false, &mut rng)?,
            point_norm: LayerNorm::new(store, "point_norm", d)?,
            group_mlp: Mlp::new(store, "group_mlp", &[GROUP_FEATURES, h, d, d], true, &mut rng)?,
            pos_mlp: Mlp::new(store, "pos_mlp", &[4, cfg.pos_dim, cfg.pos_dim, cfg.pos_dim], false, &mut rng)?,
            token_proj: Linear::new(store, "token_proj", d + cfg.pos_dim, d, &mut rng)?,
            attention: (0..cfg.attn_layers)
                .map(|i| AttentionLayer::new(store, &format!("attn.{i}"), d, cfg.attn_heads, cfg.ffn_dim, &mut rng))
                .collect::<Result<_>>()?,
            propagate: Linear::new(store, "propagate", d, d, &mut rng)?,
            token_norm: LayerNorm::new(store, "token_norm", d)?,
            size_head: if cfg.refine_size {
                Some(Mlp::new(store, "size_head", &[wide, hh, 4 * b], false, &mut rng)?)
            } else {
                None
            },
            vote_head: Mlp::new(store, "vote_head", &[wide, hh, 3], false, &mut rng)?,
            yaw_head: Mlp::new(store, "yaw_head", &[wide, hh, 2], false, &mut rng)?,
            conf_head: Mlp::new(store, "conf_head", &[wide, hh, 1], false, &mut rng)?,
            vel_head: Mlp::new(store, "vel_head", &[wide, hh, 2], false, &mut rng)?,
        })
    }
}

/// Raw head outputs for one window, in the window-local frame.
pub struct SsrOutputs<'g> {
    /// `[F × 3]` per-frame centers (zeros for frames without points).
    pub center: Var<'g>,
    /// `[F × 2]` unnormalized `(sin θ, cos θ)`.
    pub yaw: Var<'g>,
    /// `[F × 1]` confidence logits.
    pub conf_logit: Var<'g>,
    /// `[F × 2]` velocity, meters per frame.
    pub velocity: Var<'g>,
    /// `[1 × B]` size-bin logits.
    pub size_logits: Option<Var<'g>>,
    /// `[B × 3]` per-bin size residuals.
    pub size_residual: Option<Var<'g>>,
}

/// The refinement network: configuration plus parameters.
#[derive(Debug, Clone)]
pub struct SsrModel {
    cfg: SsrConfig,
    store: ParamStore,
    net: Net,
}

impl SsrModel {
    pub fn new(cfg: SsrConfig) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let net = Net::new(&cfg, &mut store)?;
        Ok(SsrModel { cfg, store, net })
    }

    /// Restores parameters; the checkpoint must come from the same config.
    pub fn from_checkpoint(cfg: SsrConfig, ckpt: &Checkpoint) -> Result<Self> {
        let mut model = SsrModel::new(cfg)?;
        let hash = model.cfg.hash();
        if ckpt.config_hash != hash {
            return Err(Error::InvalidInput(format!(
                "checkpoint was trained with config {} but this config hashes to {hash}",
                ckpt.config_hash
            )));
        }
        if ckpt.params.names() != model.store.names() {
            return Err(Error::InvalidInput("checkpoint parameter names do not match the model".into()));
        }
        for (dst, src) in model.store.tensors_mut().iter_mut().zip(ckpt.params.tensors()) {
            if dst.shape() != src.shape() {
                return Err(Error::InvalidInput("checkpoint parameter shape mismatch".into()));
            }
            *dst = src.clone();
        }
        Ok(model)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config_hash: self.cfg.hash(),
            params: self.store.clone(),
        }
    }

    pub fn config(&self) -> &SsrConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn prepare(&self, input: &SsrInput) -> Result<Option<Prepared>> {
        Prepared::new(&self.cfg, input)
    }

    /// Records the network onto `p`'s graph.
    pub fn forward<'g>(&self, p: &Bound<'g>, prep: &Prepared) -> Result<SsrOutputs<'g>> {
        let net = &self.net;
        let g = p.graph();
        let feats = g.constant(prep.features.clone());

        let branch1 = net.point_norm.forward(p, net.point_mlp.forward(p, feats)?)?;

        let groups = net.group_mlp.forward(p, g.constant(prep.group_feats.clone()))?;
        let tokens = groups.segment_max(&prep.group_token, prep.n_tokens)?;
        let pos = net.pos_mlp.forward(p, g.constant(prep.token_pos.clone()))?;
        let mut tokens = net.token_proj.forward(p, Var::concat(&[tokens, pos], 1)?)?;
        for layer in &net.attention {
            tokens = layer.forward(p, tokens)?;
        }
        let per_point = g.constant(prep.interp.clone()).matmul(tokens)?;
        let branch2 = net.token_norm.forward(p, net.propagate.forward(p, per_point)?)?;

        let x = Var::concat(&[branch1, branch2], 1)?;
        let frames = prep.n_frames;

        let votes = g.constant(prep.xyz.clone()).add(net.vote_head.forward(p, x)?)?;
        let center = votes.segment_mean(&prep.point_frame, frames)?;

        let pooled = x.segment_max(&prep.point_frame, frames)?;
        let yaw = net.yaw_head.forward(p, pooled)?;
        let conf_logit = net.conf_head.forward(p, pooled)?;
        let velocity = net.vel_head.forward(p, pooled)?;

        let (size_logits, size_residual) = match &net.size_head {
            Some(head) => {
                let b = self.cfg.size_templates.len();
                let global = x.max_pool(0)?.reshape(&[1, 2 * self.cfg.feat_dim])?;
                let out = head.forward(p, global)?;
                (Some(out.slice(1, 0, b)?), Some(out.slice(1, b, 4 * b)?.reshape(&[b, 3])?))
            }
            None => (None, None),
        };
        Ok(SsrOutputs {
            center,
            yaw,
            conf_logit,
            velocity,
            size_logits,
            size_residual,
        })
    }

    /// Converts head outputs into world-frame boxes, substituting the input
    /// state for frames without points.
    pub fn decode(&self, out: &SsrOutputs<'_>, prep: &Prepared, input: &SsrInput) -> Result<RefinedSequence> {
        let center = out.center.to_tensor();
        let yaw = out.yaw.to_tensor();
        let conf = out.conf_logit.to_tensor();
        let vel = out.velocity.to_tensor();
        let o = prep.origin;
        let frames = input
            .states
            .iter()
            .enumerate()
            .map(|(f, s)| {
                if !prep.frame_has_points[f] {
                    return Ok(fallback_frame(s));
                }
                let c = center.row(f);
                let z = conf.at2(f, 0);
                Ok(RefinedFrame {
                    t: s.t,
                    center: [c[0] + o[0], c[1] + o[1], c[2] + o[2]],
                    yaw: normalize_yaw(yaw.at2(f, 0).atan2(yaw.at2(f, 1)))?,
                    velocity: [vel.at2(f, 0), vel.at2(f, 1)],
                    conf: 1.0 / (1.0 + (-z).exp()),
                    fallback: false,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let size = match (&out.size_logits, &out.size_residual) {
            (Some(logits), Some(res)) => Some(decode_size(&self.cfg.size_templates, &logits.to_tensor(), &res.to_tensor())),
            _ => None,
        };
        Ok(RefinedSequence { frames, size })
    }

    /// Inference with frozen parameters.
    pub fn refine(&self, input: &SsrInput) -> Result<RefinedSequence> {
        let Some(prep) = self.prepare(input)? else {
            return Ok(RefinedSequence::passthrough(input));
        };
        let graph = Graph::new();
        let p = Bound::frozen(&graph, &self.store);
        let out = self.forward(&p, &prep)?;
        self.decode(&out, &prep, input)
    }
}

/// Template of the highest-scoring bin plus that bin's residual. Ties go
/// to the lower bin.
pub fn decode_size(templates: &[[f64; 3]], logits: &Tensor, residual: &Tensor) -> [f64; 3] {
    let scores = logits.data();
    let mut k = 0;
    for i in 1..scores.len() {
        if scores[i] > scores[k] {
            k = i;
        }
    }
    let r = residual.row(k);
    let t = templates[k];
    [
        (t[0] + r[0]).max(MIN_DECODED_EXTENT),
        (t[1] + r[1]).max(MIN_DECODED_EXTENT),
        (t[2] + r[2]).max(MIN_DECODED_EXTENT),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_residual_returns_winning_template() {
        let templates = vec![[1.0, 1.0, 1.0], [4.0, 2.0, 1.5], [5.0, 2.0, 1.8]];
        let logits = Tensor::new(vec![1, 3], vec![0.1, 2.0, -1.0]).unwrap();
        let res = Tensor::zeros(&[3, 3]);
        assert_eq!(decode_size(&templates, &logits, &res), [4.0, 2.0, 1.5]);
    }
}
