use seqmot_tensor::{Tensor, Var};
use serde::{Deserialize, Serialize};

use super::features::Prepared;
use super::model::SsrOutputs;
use super::SsrConfig;
use crate::{Error, Result};

/// Regression target for one window frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTarget {
    /// A ground-truth object was assigned to this frame's state. Frames
    /// without one are excluded from box regression and get a zero
    /// confidence target.
    pub valid: bool,
    pub center: [f64; 3],
    pub yaw: f64,
    /// Meters per frame.
    pub velocity: [f64; 2],
    /// Ground-truth centers near the tracklet at this frame, used for the
    /// confidence target of the predicted box.
    pub gt_centers: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceTargets {
    pub frames: Vec<FrameTarget>,
    /// Ground-truth `(l, w, h)` of the object under the window, if any.
    pub size: Option<[f64; 3]>,
}

/// Unweighted loss terms and the weighted totals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub center: f64,
    pub yaw: f64,
    pub velocity: f64,
    pub size_cls: f64,
    pub size_res: f64,
    pub conf: f64,
    pub box_total: f64,
    pub total: f64,
}

/// `exp(-alpha * d)` for the BEV distance `d` to the nearest ground-truth
/// center, or 0 beyond `match_radius` or without any ground truth.
pub fn confidence_target(pred: [f64; 3], gt_centers: &[[f64; 3]], alpha: f64, match_radius: f64) -> f64 {
    let nearest = gt_centers
        .iter()
        .map(|g| (pred[0] - g[0]).hypot(pred[1] - g[1]))
        .fold(f64::INFINITY, f64::min);
    if nearest <= match_radius {
        (-alpha * nearest).exp()
    } else {
        0.0
    }
}

fn nearest_template(templates: &[[f64; 3]], size: [f64; 3]) -> usize {
    let d = |t: &[f64; 3]| (0..3).map(|k| (t[k] - size[k]).powi(2)).sum::<f64>();
    let mut best = 0;
    for (i, t) in templates.iter().enumerate().skip(1) {
        if d(t) < d(&templates[best]) {
            best = i;
        }
    }
    best
}

fn rows_const<'g>(like: Var<'g>, rows: Vec<f64>, cols: usize) -> Result<Var<'g>> {
    let n = rows.len() / cols;
    Ok(like.graph().constant(Tensor::new(vec![n, cols], rows)?))
}

/// Mean over the selected frames of the summed absolute error.
fn l1_rows<'g>(pred: Var<'g>, frames: &[usize], target: Vec<f64>, cols: usize) -> Result<Var<'g>> {
    let picked = pred.gather_rows(frames)?;
    let t = rows_const(pred, target, cols)?;
    Ok(picked.sub(t)?.abs().sum_all().scale(1.0 / frames.len() as f64))
}

/// Per-scored-frame confidence targets from the predicted centers, in the
/// order of frames that hold points.
pub fn confidence_targets(out: &SsrOutputs<'_>, prep: &Prepared, targets: &SequenceTargets, cfg: &SsrConfig) -> Result<Vec<f64>> {
    check_len(prep, targets)?;
    let o = prep.origin;
    let centers = out.center.to_tensor();
    Ok((0..prep.n_frames)
        .filter(|&f| prep.frame_has_points[f])
        .map(|f| {
            let c = centers.row(f);
            let tgt = &targets.frames[f];
            if !tgt.valid {
                return 0.0;
            }
            confidence_target([c[0] + o[0], c[1] + o[1], c[2] + o[2]], &tgt.gt_centers, cfg.alpha, cfg.match_radius)
        })
        .collect())
}

fn check_len(prep: &Prepared, targets: &SequenceTargets) -> Result<()> {
    if targets.frames.len() != prep.n_frames {
        return Err(Error::InvalidInput(format!(
            "{} target frames for a {}-frame window",
            targets.frames.len(),
            prep.n_frames
        )));
    }
    Ok(())
}

/// Training loss for one window, with confidence targets taken from the
/// current (detached) predictions. Frames without points are skipped.
pub fn loss<'g>(
    out: &SsrOutputs<'g>,
    prep: &Prepared,
    targets: &SequenceTargets,
    cfg: &SsrConfig,
) -> Result<(Var<'g>, LossComponents)> {
    let conf_targets = confidence_targets(out, prep, targets, cfg)?;
    loss_with_conf_targets(out, prep, targets, &conf_targets, cfg)
}

/// [`loss`] with externally fixed confidence targets.
pub fn loss_with_conf_targets<'g>(
    out: &SsrOutputs<'g>,
    prep: &Prepared,
    targets: &SequenceTargets,
    conf_targets: &[f64],
    cfg: &SsrConfig,
) -> Result<(Var<'g>, LossComponents)> {
    check_len(prep, targets)?;
    let w = cfg.weights;
    let o = prep.origin;
    let scored: Vec<usize> = (0..prep.n_frames).filter(|&f| prep.frame_has_points[f]).collect();
    let valid: Vec<usize> = scored.iter().copied().filter(|&f| targets.frames[f].valid).collect();
    if conf_targets.len() != scored.len() {
        return Err(Error::InvalidInput("confidence targets do not match the scored frames".into()));
    }
    let l_conf = out
        .conf_logit
        .gather_rows(&scored)?
        .bce_with_logits(conf_targets)?
        .mean_all();

    let mut comps = LossComponents::default();
    let mut terms: Vec<(f64, Var<'g>)> = vec![(w.conf, l_conf)];

    if !valid.is_empty() {
        let tf = |f: usize| &targets.frames[f];
        let center_t = valid
            .iter()
            .flat_map(|&f| {
                let c = tf(f).center;
                [c[0] - o[0], c[1] - o[1], c[2] - o[2]]
            })
            .collect();
        let yaw_t = valid.iter().flat_map(|&f| [tf(f).yaw.sin(), tf(f).yaw.cos()]).collect();
        let vel_t = valid.iter().flat_map(|&f| tf(f).velocity).collect();
        let l_c = l1_rows(out.center, &valid, center_t, 3)?;
        let l_yaw = l1_rows(out.yaw, &valid, yaw_t, 2)?;
        let l_vel = l1_rows(out.velocity, &valid, vel_t, 2)?;
        comps.center = l_c.value().item()?;
        comps.yaw = l_yaw.value().item()?;
        comps.velocity = l_vel.value().item()?;
        terms.push((w.center, l_c));
        terms.push((w.yaw, l_yaw));
        terms.push((w.velocity, l_vel));

        if let (Some(logits), Some(res), Some(size)) = (out.size_logits, out.size_residual, targets.size) {
            let k = nearest_template(&cfg.size_templates, size);
            let t = cfg.size_templates[k];
            let l_cls = logits.log_softmax()?.slice(1, k, k + 1)?.sum_all().scale(-1.0);
            let res_t = rows_const(res, vec![size[0] - t[0], size[1] - t[1], size[2] - t[2]], 3)?;
            let l_res = res.slice(0, k, k + 1)?.sub(res_t)?.abs().sum_all();
            comps.size_cls = l_cls.value().item()?;
            comps.size_res = l_res.value().item()?;
            terms.push((w.size_cls, l_cls));
            terms.push((w.size_res, l_res));
        }
    }

    comps.conf = l_conf.value().item()?;
    comps.box_total = w.center * comps.center
        + w.yaw * comps.yaw
        + w.velocity * comps.velocity
        + w.size_cls * comps.size_cls
        + w.size_res * comps.size_res;
    comps.total = w.conf * comps.conf + comps.box_total;

    let mut total = terms[0].1.scale(terms[0].0);
    for &(wt, term) in &terms[1..] {
        total = total.add(term.scale(wt))?;
    }
    Ok((total, comps))
}
