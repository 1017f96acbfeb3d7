//! Box geometry: rotated BEV overlap, suppression, cropping, and rigid
//! transforms shared by the tracker and the training augmentations.

use crate::types::{normalize_yaw, Box7, Detection, TimedPoint};
use crate::{Error, Result};

/// Rotated box footprint, four corners in counter-clockwise order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BevPolygon(pub [[f64; 2]; 4]);

impl BevPolygon {
    pub fn from_box(b: &Box7) -> Self {
        let (s, c) = b.theta.sin_cos();
        let (hl, hw) = (b.l / 2.0, b.w / 2.0);
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        BevPolygon(local.map(|[u, v]| [b.x + c * u - s * v, b.y + s * u + c * v]))
    }

    pub fn area(&self) -> f64 {
        shoelace(&self.0)
    }
}

fn shoelace(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n)
        .map(|i| {
            let [x0, y0] = poly[i];
            let [x1, y1] = poly[(i + 1) % n];
            x0 * y1 - x1 * y0
        })
        .sum();
    twice / 2.0
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Sutherland–Hodgman clipping of `subject` against the convex CCW `clip`.
fn clip_polygon(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = cross(a, b, cur) >= 0.0;
            let prev_in = cross(a, b, prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    output.push(intersect(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(intersect(prev, cur, a, b));
            }
        }
    }
    output
}

fn intersect(p: [f64; 2], q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let d1 = cross(a, b, p);
    let d2 = cross(a, b, q);
    let t = d1 / (d1 - d2);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Intersection-over-union of two rotated BEV footprints.
pub fn bev_iou(a: &Box7, b: &Box7) -> Result<f64> {
    let pa = BevPolygon::from_box(a);
    let pb = BevPolygon::from_box(b);
    let (area_a, area_b) = (pa.area(), pb.area());
    for area in [area_a, area_b] {
        if !(area > 0.0) {
            return Err(Error::DegenerateBox(area));
        }
    }
    // Quick reject on circumscribed circles.
    let ra = a.l.hypot(a.w) / 2.0;
    let rb = b.l.hypot(b.w) / 2.0;
    if a.bev_distance(b) >= ra + rb {
        return Ok(0.0);
    }
    let inter = shoelace(&clip_polygon(&pa.0, &pb.0)).max(0.0);
    let union = area_a + area_b - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Greedy class-aware BEV non-maximal suppression.
///
/// Detections are visited by descending confidence (input order on ties);
/// one is kept iff its IoU with every previously kept detection of the same
/// class is at most `iou_thresh`. Output is in visiting order.
pub fn nms(dets: &[Detection], iou_thresh: f64) -> Result<Vec<Detection>> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| dets[j].conf.total_cmp(&dets[i].conf).then(i.cmp(&j)));
    let mut kept: Vec<Detection> = Vec::new();
    for i in order {
        let d = &dets[i];
        let mut keep = true;
        for k in kept.iter().filter(|k| k.class == d.class) {
            if bev_iou(&k.bbox, &d.bbox)? > iou_thresh {
                keep = false;
                break;
            }
        }
        if keep {
            kept.push(*d);
        }
    }
    Ok(kept)
}

/// Coordinates of `p` in the frame of `b` (centered, yaw removed).
pub fn to_box_frame(b: &Box7, p: [f64; 3]) -> [f64; 3] {
    let (s, c) = b.theta.sin_cos();
    let (dx, dy) = (p[0] - b.x, p[1] - b.y);
    [c * dx + s * dy, -s * dx + c * dy, p[2] - b.z]
}

/// Closed containment test in the box scaled by `factor`.
pub fn point_in_box(b: &Box7, p: [f64; 3], factor: f64) -> bool {
    let [u, v, w] = to_box_frame(b, p);
    u.abs() <= factor * b.l / 2.0 && v.abs() <= factor * b.w / 2.0 && w.abs() <= factor * b.h / 2.0
}

/// Points of `cloud` inside `b` enlarged by `factor`, stamped with frame `t`.
pub fn crop_points(cloud: &[[f64; 3]], b: &Box7, factor: f64, t: i64) -> Vec<TimedPoint> {
    cloud
        .iter()
        .filter(|p| point_in_box(b, **p, factor))
        .map(|p| TimedPoint {
            x: p[0],
            y: p[1],
            z: p[2],
            t,
        })
        .collect()
}

/// Reflection about the x-axis, then rotation about the vertical axis, then
/// uniform scaling, then a BEV translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: f64,
    pub scale: f64,
    pub translation: [f64; 2],
    pub reflect_x: bool,
}

impl Default for RigidTransform {
    fn default() -> Self {
        RigidTransform::IDENTITY
    }
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        rotation: 0.0,
        scale: 1.0,
        translation: [0.0, 0.0],
        reflect_x: false,
    };

    pub fn is_identity(&self) -> bool {
        *self == RigidTransform::IDENTITY
    }

    fn linear(&self, x: f64, y: f64) -> (f64, f64) {
        let y = if self.reflect_x { -y } else { y };
        let (s, c) = self.rotation.sin_cos();
        (self.scale * (c * x - s * y), self.scale * (s * x + c * y))
    }

    pub fn apply_point(&self, p: [f64; 3]) -> [f64; 3] {
        if self.is_identity() {
            return p;
        }
        let (x, y) = self.linear(p[0], p[1]);
        [x + self.translation[0], y + self.translation[1], self.scale * p[2]]
    }

    /// Velocities transform like displacements: no translation.
    pub fn apply_vector(&self, v: [f64; 2]) -> [f64; 2] {
        if self.is_identity() {
            return v;
        }
        let (x, y) = self.linear(v[0], v[1]);
        [x, y]
    }

    pub fn apply_yaw(&self, theta: f64) -> Result<f64> {
        if self.is_identity() {
            return Ok(theta);
        }
        let theta = if self.reflect_x { -theta } else { theta };
        normalize_yaw(theta + self.rotation)
    }

    pub fn apply_box(&self, b: &Box7) -> Result<Box7> {
        if self.is_identity() {
            return Ok(*b);
        }
        let [x, y, z] = self.apply_point(b.center());
        Ok(Box7 {
            x,
            y,
            z,
            l: b.l * self.scale,
            w: b.w * self.scale,
            h: b.h * self.scale,
            theta: self.apply_yaw(b.theta)?,
        })
    }

    pub fn apply_timed(&self, p: &TimedPoint) -> TimedPoint {
        let [x, y, z] = self.apply_point(p.xyz());
        TimedPoint { x, y, z, t: p.t }
    }
}

/// Applies one transform consistently to a point set and a box set.
pub fn rigid_transform(
    points: &[TimedPoint],
    boxes: &[Box7],
    transform: &RigidTransform,
) -> Result<(Vec<TimedPoint>, Vec<Box7>)> {
    if !(transform.scale > 0.0) {
        return Err(Error::InvalidInput(format!("scale must be positive, got {}", transform.scale)));
    }
    let pts = points.iter().map(|p| transform.apply_timed(p)).collect();
    let bxs = boxes.iter().map(|b| transform.apply_box(b)).collect::<Result<_>>()?;
    Ok((pts, bxs))
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::types::ObjectClass;

    fn bx(x: f64, y: f64, l: f64, w: f64, theta: f64) -> Box7 {
        Box7::new(x, y, 0.0, l, w, 1.0, theta).unwrap()
    }

    fn det(b: Box7, conf: f64) -> Detection {
        Detection {
            bbox: b,
            conf,
            class: ObjectClass::Car,
            t: 0,
            velocity: None,
        }
    }

    #[test]
    fn identical_and_quarter_turned_squares() {
        let a = bx(0.0, 0.0, 1.0, 1.0, 0.0);
        assert!((bev_iou(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let r = bx(0.0, 0.0, 1.0, 1.0, PI / 2.0);
        assert!((bev_iou(&a, &r).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn edge_contact_is_zero() {
        let a = bx(0.0, 0.0, 2.0, 2.0, 0.0);
        let b = bx(2.0, 0.0, 2.0, 2.0, 0.0);
        assert!(bev_iou(&a, &b).unwrap().abs() < 1e-12);
    }

    #[test]
    fn half_overlap_squares() {
        // Overlap 1×2 = 2, union 6.
        let a = bx(0.0, 0.0, 2.0, 2.0, 0.0);
        let b = bx(1.0, 0.0, 2.0, 2.0, 0.0);
        assert!((bev_iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_box_is_an_error() {
        let a = bx(0.0, 0.0, 2.0, 2.0, 0.0);
        let mut b = a;
        b.w = 0.0;
        assert!(matches!(bev_iou(&a, &b), Err(Error::DegenerateBox(_))));
    }

    #[test]
    fn nms_single_and_duplicate() {
        let a = bx(0.0, 0.0, 4.0, 2.0, 0.0);
        assert_eq!(nms(&[det(a, 0.5)], 0.5).unwrap().len(), 1);
        let kept = nms(&[det(a, 0.8), det(a, 0.9)], 0.5).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].conf, 0.9);
    }

    #[test]
    fn nms_pairwise_trace() {
        // Unit-height 2x2 squares: offset 0.5 gives IoU 1.5/2.5 = 0.6 between
        // boxes 1 and 2; box 3 sits at a small overlap with both.
        let b1 = bx(0.0, 0.0, 2.0, 2.0, 0.0);
        let b2 = bx(0.5, 0.0, 2.0, 2.0, 0.0);
        let b3 = bx(0.0, 1.75, 2.0, 2.0, 0.0);
        assert!((bev_iou(&b1, &b2).unwrap() - 0.6).abs() < 1e-12);
        assert!(bev_iou(&b1, &b3).unwrap() < 0.5);
        assert!(bev_iou(&b2, &b3).unwrap() < 0.5);
        let kept = nms(&[det(b1, 0.9), det(b2, 0.8), det(b3, 0.7)], 0.5).unwrap();
        let confs: Vec<f64> = kept.iter().map(|d| d.conf).collect();
        assert_eq!(confs, vec![0.9, 0.7]);
    }

    #[test]
    fn nms_is_class_aware() {
        let a = bx(0.0, 0.0, 4.0, 2.0, 0.0);
        let mut other = det(a, 0.8);
        other.class = ObjectClass::Pedestrian;
        assert_eq!(nms(&[det(a, 0.9), other], 0.5).unwrap().len(), 2);
    }

    #[test]
    fn nms_ties_keep_input_order() {
        let a = bx(0.0, 0.0, 4.0, 2.0, 0.0);
        let b = bx(0.1, 0.0, 4.0, 2.0, 0.0);
        let kept = nms(&[det(a, 0.7), det(b, 0.7)], 0.5).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].bbox, a);
    }

    #[test]
    fn crop_examples() {
        let b = Box7::new(0.0, 0.0, 0.0, 2.0, 2.0, 2.0, 0.0).unwrap();
        let kept = crop_points(&[[1.2, 0.0, 0.0], [1.3, 0.0, 0.0]], &b, 1.25, 4);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].x, 1.2);
        assert_eq!(kept[0].t, 4);
        assert_eq!(crop_points(&[[1.0, 0.0, 0.0]], &b, 1.0, 0).len(), 1);

        let r = Box7::new(0.0, 0.0, 0.0, 4.0, 2.0, 2.0, PI / 2.0).unwrap();
        assert_eq!(crop_points(&[[0.9, 1.9, 0.0]], &r, 1.0, 0).len(), 1);
        assert_eq!(crop_points(&[[1.9, 0.9, 0.0]], &r, 1.0, 0).len(), 0);
    }

    #[test]
    fn transform_examples() {
        let b = Box7::new(1.0, 0.0, 0.5, 4.0, 2.0, 1.5, 0.3).unwrap();
        let p = TimedPoint {
            x: 1.0,
            y: 0.0,
            z: 0.0,
            t: 0,
        };
        let (pts, bxs) = rigid_transform(&[p], &[b], &RigidTransform::IDENTITY).unwrap();
        assert_eq!(pts[0], p);
        assert_eq!(bxs[0], b);

        let half_turn = RigidTransform {
            rotation: PI,
            ..RigidTransform::IDENTITY
        };
        let q = half_turn.apply_point([1.0, 0.0, 0.0]);
        assert!((q[0] + 1.0).abs() < 1e-12 && q[1].abs() < 1e-12 && q[2] == 0.0);

        let grow = RigidTransform {
            scale: 1.05,
            ..RigidTransform::IDENTITY
        };
        assert!((grow.apply_box(&b).unwrap().l - 4.2).abs() < 1e-12);

        let bad = RigidTransform {
            scale: 0.0,
            ..RigidTransform::IDENTITY
        };
        assert!(rigid_transform(&[p], &[b], &bad).is_err());
    }

    #[test]
    fn reflection_negates_yaw() {
        let b = Box7::new(1.0, 2.0, 0.0, 4.0, 2.0, 1.5, 0.4).unwrap();
        let t = RigidTransform {
            reflect_x: true,
            ..RigidTransform::IDENTITY
        };
        let r = t.apply_box(&b).unwrap();
        assert_eq!(r.y, -2.0);
        assert_eq!(r.theta, -0.4);
    }
}
