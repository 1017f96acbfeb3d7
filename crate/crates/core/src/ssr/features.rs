//! Object-aware point features and the fixed (parameter-free) structure
//! the encoder needs: anchors, neighborhoods, and interpolation weights.

use std::cmp::Ordering;

use seqmot_tensor::Tensor;

use super::{SsrConfig, SsrInput};
use crate::types::{State, TimedPoint};
use crate::{Error, Result};

pub const POINT_FEATURES: usize = 10;
pub const GROUP_FEATURES: usize = 3 + POINT_FEATURES;

const INTERP_EPS: f64 = 1e-8;
const INTERP_NEIGHBORS: usize = 3;

/// Per-point feature rows `[x, y, z, t, xc, yc, zc, sin θ, cos θ, s]`,
/// with `t` the frame offset within the window (0 = oldest) and the box
/// values taken from that frame's state. Coordinates are used as given.
pub fn build_point_features(states: &[State], points: &[Vec<TimedPoint>]) -> Result<Tensor> {
    let rows = feature_rows(states, points, [0.0; 3])?;
    let n = rows.len();
    Ok(Tensor::new(vec![n, POINT_FEATURES], rows.into_iter().flatten().collect())?)
}

fn feature_rows(states: &[State], points: &[Vec<TimedPoint>], origin: [f64; 3]) -> Result<Vec<[f64; POINT_FEATURES]>> {
    if points.len() > states.len() {
        return Err(Error::InvalidInput(format!(
            "{} point frames but only {} states",
            points.len(),
            states.len()
        )));
    }
    let mut rows = Vec::new();
    for (offset, (frame, state)) in points.iter().zip(states).enumerate() {
        let (sin, cos) = state.bbox.theta.sin_cos();
        let c = state.bbox.center();
        for p in frame {
            if p.t != state.t {
                return Err(Error::InvalidInput(format!(
                    "point stamped t={} has no state (window frame holds t={})",
                    p.t, state.t
                )));
            }
            rows.push([
                p.x - origin[0],
                p.y - origin[1],
                p.z - origin[2],
                offset as f64,
                c[0] - origin[0],
                c[1] - origin[1],
                c[2] - origin[2],
                sin,
                cos,
                state.conf,
            ]);
        }
    }
    Ok(rows)
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

fn lex(a: [f64; 3], b: [f64; 3]) -> Ordering {
    a[0].total_cmp(&b[0])
        .then(a[1].total_cmp(&b[1]))
        .then(a[2].total_cmp(&b[2]))
}

/// Farthest-point sampling of `k` indices starting from `start`. Each step
/// takes the point farthest from the current selection (ties by
/// coordinates, then index). With fewer than `k` points the selection
/// order repeats cyclically.
pub fn farthest_point_sample(points: &[[f64; 3]], k: usize, start: usize) -> Vec<usize> {
    let n = points.len();
    if n == 0 || k == 0 {
        return Vec::new();
    }
    let take = k.min(n);
    let mut chosen = vec![start];
    let mut picked = vec![false; n];
    picked[start] = true;
    let mut best: Vec<f64> = points.iter().map(|&p| dist2(p, points[start])).collect();
    while chosen.len() < take {
        let mut arg: Option<usize> = None;
        for i in (0..n).filter(|&i| !picked[i]) {
            arg = match arg {
                None => Some(i),
                Some(j) => match best[i].total_cmp(&best[j]) {
                    Ordering::Greater => Some(i),
                    Ordering::Equal if lex(points[i], points[j]) == Ordering::Less => Some(i),
                    _ => Some(j),
                },
            };
        }
        let next = arg.expect("unpicked point remains");
        picked[next] = true;
        chosen.push(next);
        for i in 0..n {
            best[i] = best[i].min(dist2(points[i], points[next]));
        }
    }
    (0..k).map(|i| chosen[i % take]).collect()
}

/// Starting point for sampling that does not depend on point order: the
/// point farthest from the frame centroid.
fn canonical_start(points: &[[f64; 3]]) -> usize {
    let n = points.len() as f64;
    let mut c = [0.0; 3];
    for p in points {
        for k in 0..3 {
            c[k] += p[k] / n;
        }
    }
    let mut arg = 0;
    for i in 1..points.len() {
        let ord = dist2(points[i], c).total_cmp(&dist2(points[arg], c));
        if ord == Ordering::Greater || (ord == Ordering::Equal && lex(points[i], points[arg]) == Ordering::Less) {
            arg = i;
        }
    }
    arg
}

/// Everything the network needs about one window besides its parameters.
/// Coordinates are relative to `origin`, the last state's box center.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub origin: [f64; 3],
    pub n_frames: usize,
    /// `[N × 10]` point features.
    pub features: Tensor,
    /// `[N × 3]` point positions.
    pub xyz: Tensor,
    pub point_frame: Vec<usize>,
    pub frame_has_points: Vec<bool>,
    /// `[M × 13]` neighborhood rows: offset from the anchor plus the
    /// neighbor's point features.
    pub group_feats: Tensor,
    /// Anchor token owning each neighborhood row.
    pub group_token: Vec<usize>,
    pub n_tokens: usize,
    /// `[T × 4]` anchor `(x, y, z, t)`.
    pub token_pos: Tensor,
    /// `[N × T]` inverse-distance weights over the nearest anchors of each
    /// point's frame.
    pub interp: Tensor,
}

impl Prepared {
    /// `None` when the window holds no points at all.
    pub fn new(cfg: &SsrConfig, input: &SsrInput) -> Result<Option<Self>> {
        if input.states.len() != input.points.len() {
            return Err(Error::InvalidInput("states and point frames are misaligned".into()));
        }
        let last = input.states.last().ok_or(Error::EmptyTracklet)?;
        let origin = last.bbox.center();
        let rows = feature_rows(&input.states, &input.points, origin)?;
        if rows.is_empty() {
            return Ok(None);
        }
        let n = rows.len();
        let n_frames = input.states.len();
        let mut point_frame = Vec::with_capacity(n);
        for (f, frame) in input.points.iter().enumerate() {
            point_frame.extend(std::iter::repeat(f).take(frame.len()));
        }
        let frame_has_points: Vec<bool> = input.points.iter().map(|f| !f.is_empty()).collect();
        let xyz: Vec<[f64; 3]> = rows.iter().map(|r| [r[0], r[1], r[2]]).collect();

        let a = cfg.anchors_per_frame;
        let r2 = cfg.sa_radius * cfg.sa_radius;
        let mut group_rows: Vec<f64> = Vec::new();
        let mut group_token = Vec::new();
        let mut token_pos = Vec::new();
        let mut token_xyz: Vec<[f64; 3]> = Vec::new();
        // Token range per frame.
        let mut frame_tokens = vec![0..0; n_frames];
        let mut start = 0;
        for (f, frame) in input.points.iter().enumerate() {
            let range = start..start + frame.len();
            start = range.end;
            if frame.is_empty() {
                continue;
            }
            let local = &xyz[range.clone()];
            let first = token_xyz.len();
            for anchor in farthest_point_sample(local, a, canonical_start(local)) {
                let ap = local[anchor];
                let token = token_xyz.len();
                let mut near: Vec<(f64, usize)> = local
                    .iter()
                    .enumerate()
                    .map(|(j, &p)| (dist2(p, ap), j))
                    .filter(|&(d, _)| d <= r2)
                    .collect();
                near.sort_by(|x, y| x.0.total_cmp(&y.0).then(lex(local[x.1], local[y.1])).then(x.1.cmp(&y.1)));
                near.truncate(cfg.group_cap);
                for (_, j) in near {
                    let p = local[j];
                    group_rows.extend_from_slice(&[p[0] - ap[0], p[1] - ap[1], p[2] - ap[2]]);
                    group_rows.extend_from_slice(&rows[range.start + j]);
                    group_token.push(token);
                }
                token_pos.extend_from_slice(&[ap[0], ap[1], ap[2], f as f64]);
                token_xyz.push(ap);
            }
            frame_tokens[f] = first..token_xyz.len();
        }
        let n_tokens = token_xyz.len();

        let mut interp = vec![0.0; n * n_tokens];
        for (i, (&p, &f)) in xyz.iter().zip(&point_frame).enumerate() {
            let mut cand: Vec<(f64, usize)> = frame_tokens[f].clone().map(|k| (dist2(p, token_xyz[k]).sqrt(), k)).collect();
            cand.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            cand.truncate(INTERP_NEIGHBORS);
            let inv: Vec<f64> = cand.iter().map(|(d, _)| 1.0 / (d + INTERP_EPS)).collect();
            let total: f64 = inv.iter().sum();
            for ((_, k), w) in cand.iter().zip(inv) {
                interp[i * n_tokens + k] += w / total;
            }
        }

        let m = group_token.len();
        Ok(Some(Prepared {
            origin,
            n_frames,
            features: Tensor::new(vec![n, POINT_FEATURES], rows.into_iter().flatten().collect())?,
            xyz: Tensor::new(vec![n, 3], xyz.into_iter().flatten().collect())?,
            point_frame,
            frame_has_points,
            group_feats: Tensor::new(vec![m, GROUP_FEATURES], group_rows)?,
            group_token,
            n_tokens,
            token_pos: Tensor::new(vec![n_tokens, 4], token_pos)?,
            interp: Tensor::new(vec![n, n_tokens], interp)?,
        }))
    }

    pub fn num_points(&self) -> usize {
        self.point_frame.len()
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use super::*;
    use crate::types::{Box7, ObjectClass};

    fn state(t: i64, c: [f64; 3], theta: f64, conf: f64) -> State {
        State {
            bbox: Box7::new(c[0], c[1], c[2], 4.0, 2.0, 1.5, theta).unwrap(),
            vx: 0.0,
            vy: 0.0,
            class: ObjectClass::Car,
            conf,
            t,
        }
    }

    #[test]
    fn feature_row_substitution() {
        let states: Vec<State> = (0..6).map(|t| state(t, [1.0, 2.0, 2.5], FRAC_PI_2, 0.8)).collect();
        let mut points = vec![Vec::new(); 6];
        points[5].push(TimedPoint { x: 1.0, y: 2.0, z: 3.0, t: 5 });
        let f = build_point_features(&states, &points).unwrap();
        assert_eq!(f.shape(), &[1, 10]);
        let want = [1.0, 2.0, 3.0, 5.0, 1.0, 2.0, 2.5, 1.0, 0.0, 0.8];
        for (a, b) in f.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_yaw_encodes_unit_cosine() {
        let states = vec![state(0, [0.0; 3], 0.0, 0.5)];
        let points = vec![vec![TimedPoint { x: 0.0, y: 0.0, z: 0.0, t: 0 }]];
        let f = build_point_features(&states, &points).unwrap();
        assert_eq!(f.data()[7], 0.0);
        assert_eq!(f.data()[8], 1.0);
    }

    #[test]
    fn empty_frames_add_no_rows() {
        let states = vec![state(0, [0.0; 3], 0.0, 0.5), state(1, [0.0; 3], 0.0, 0.5)];
        let points = vec![Vec::new(), vec![TimedPoint { x: 0.0, y: 0.0, z: 0.0, t: 1 }]];
        assert_eq!(build_point_features(&states, &points).unwrap().shape(), &[1, 10]);
    }

    #[test]
    fn point_without_state_is_rejected() {
        let states = vec![state(0, [0.0; 3], 0.0, 0.5)];
        let points = vec![vec![TimedPoint { x: 0.0, y: 0.0, z: 0.0, t: 3 }]];
        assert!(build_point_features(&states, &points).is_err());
    }

    #[test]
    fn fps_on_a_line_picks_the_ends() {
        let pts: Vec<[f64; 3]> = (0..10).map(|i| [i as f64, 0.0, 0.0]).collect();
        assert_eq!(farthest_point_sample(&pts, 2, 0), vec![0, 9]);
    }

    #[test]
    fn fps_repeats_when_short() {
        let pts = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        assert_eq!(farthest_point_sample(&pts, 5, 1), vec![1, 0, 1, 0, 1]);
    }

    #[test]
    fn interpolation_rows_sum_to_one() {
        let cfg = SsrConfig {
            anchors_per_frame: 3,
            ..SsrConfig::default()
        };
        let states = vec![state(0, [0.0; 3], 0.0, 0.5), state(1, [1.0, 0.0, 0.0], 0.0, 0.5)];
        let points = vec![
            (0..5).map(|i| TimedPoint { x: i as f64 * 0.3, y: 0.1, z: 0.0, t: 0 }).collect(),
            (0..2).map(|i| TimedPoint { x: 1.0 + i as f64 * 0.3, y: 0.0, z: 0.2, t: 1 }).collect(),
        ];
        let input = SsrInput::new(states, points).unwrap();
        let prep = Prepared::new(&cfg, &input).unwrap().unwrap();
        assert_eq!(prep.n_tokens, 6);
        for i in 0..prep.num_points() {
            let row = prep.interp.row(i);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let f = prep.point_frame[i];
            for (k, &w) in row.iter().enumerate() {
                if w > 0.0 {
                    assert_eq!(prep.token_pos.at2(k, 3) as usize, f);
                }
            }
        }
        // Every anchor pools at least itself.
        for k in 0..prep.n_tokens {
            assert!(prep.group_token.contains(&k));
        }
    }
}
