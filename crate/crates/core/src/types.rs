//! Domain types shared by the tracker, the refinement network, training,
//! and evaluation.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Wraps an angle into `(-π, π]`.
pub fn normalize_yaw(theta: f64) -> Result<f64> {
    if !theta.is_finite() {
        return Err(Error::NonFinite("yaw"));
    }
    if theta > -PI && theta <= PI {
        return Ok(theta);
    }
    let mut r = theta.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    if r <= -PI {
        r += 2.0 * PI;
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    Car,
    Pedestrian,
    Vehicle,
}

impl std::fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ObjectClass::Car => "car",
            ObjectClass::Pedestrian => "pedestrian",
            ObjectClass::Vehicle => "vehicle",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for ObjectClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "car" => Ok(ObjectClass::Car),
            "pedestrian" | "ped" => Ok(ObjectClass::Pedestrian),
            "vehicle" => Ok(ObjectClass::Vehicle),
            other => Err(Error::InvalidInput(format!("unknown class {other:?}"))),
        }
    }
}

/// 7-DoF amodal box: center, full extents, and yaw about the vertical axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box7 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
}

impl Box7 {
    /// Validates extents and normalizes yaw.
    pub fn new(x: f64, y: f64, z: f64, l: f64, w: f64, h: f64, theta: f64) -> Result<Self> {
        Box7 { x, y, z, l, w, h, theta }.validated()
    }

    pub fn validated(mut self) -> Result<Self> {
        let all = [self.x, self.y, self.z, self.l, self.w, self.h, self.theta];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("box"));
        }
        if self.l <= 0.0 || self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "box extents must be positive, got {}x{}x{}",
                self.l, self.w, self.h
            )));
        }
        self.theta = normalize_yaw(self.theta)?;
        Ok(self)
    }

    pub fn from_array(a: [f64; 7]) -> Result<Self> {
        Box7::new(a[0], a[1], a[2], a[3], a[4], a[5], a[6])
    }

    pub fn to_array(&self) -> [f64; 7] {
        [self.x, self.y, self.z, self.l, self.w, self.h, self.theta]
    }

    pub fn center(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn size(&self) -> [f64; 3] {
        [self.l, self.w, self.h]
    }

    /// Birds-eye-view distance between centers.
    pub fn bev_distance(&self, other: &Box7) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Per-frame tracklet state: box, BEV velocity in meters per frame interval,
/// class, and confidence. Eleven scalar payload elements plus the frame index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub bbox: Box7,
    pub vx: f64,
    pub vy: f64,
    pub class: ObjectClass,
    pub conf: f64,
    pub t: i64,
}

impl State {
    pub const PAYLOAD_LEN: usize = 11;

    pub fn validated(self) -> Result<Self> {
        if !(0.0..=1.0).contains(&self.conf) {
            return Err(Error::InvalidInput(format!("confidence {} outside [0, 1]", self.conf)));
        }
        if !self.vx.is_finite() || !self.vy.is_finite() {
            return Err(Error::NonFinite("velocity"));
        }
        Ok(State {
            bbox: self.bbox.validated()?,
            ..self
        })
    }

    /// The eleven payload values: box, velocity, class index, confidence.
    pub fn payload(&self) -> [f64; Self::PAYLOAD_LEN] {
        let b = self.bbox.to_array();
        [b[0], b[1], b[2], b[3], b[4], b[5], b[6], self.vx, self.vy, self.class as u8 as f64, self.conf]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub t: i64,
}

impl TimedPoint {
    pub fn xyz(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

/// A detector output. Velocity, when present, is in meters per second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: Box7,
    pub conf: f64,
    pub class: ObjectClass,
    pub t: i64,
    pub velocity: Option<[f64; 2]>,
}

/// Ground-truth object at one frame; velocity in meters per second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtObject {
    pub id: u64,
    pub bbox: Box7,
    pub velocity: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t: i64,
    pub points: Vec<[f64; 3]>,
    pub detections: Vec<Detection>,
    pub gt: Option<Vec<GtObject>>,
}

impl Frame {
    pub fn validate(&self) -> Result<()> {
        if let Some(d) = self.detections.iter().find(|d| d.t != self.t) {
            return Err(Error::InvalidInput(format!(
                "detection with t={} in frame t={}",
                d.t, self.t
            )));
        }
        if let Some(d) = self.detections.iter().find(|d| !(0.0..=1.0).contains(&d.conf)) {
            return Err(Error::InvalidInput(format!("detection confidence {} outside [0, 1]", d.conf)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneHeader {
    pub schema_version: u32,
    /// Seconds between consecutive frames.
    pub dt: f64,
    pub class: ObjectClass,
    pub scene_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub header: SceneHeader,
    pub frames: Vec<Frame>,
}

/// One tracked object: a sliding window of states and the object points
/// cropped at each of those frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    pub id: u64,
    states: Vec<State>,
    points: Vec<Vec<TimedPoint>>,
    pub age_unmatched: u32,
    pub birth_frame: i64,
    /// Maximum history K; the window holds at most K + 1 frames.
    window: usize,
    /// Velocity from the most recent refinement pass, meters per frame.
    pub refined_velocity: Option<[f64; 2]>,
}

impl Tracklet {
    pub fn new(id: u64, window: usize, birth_frame: i64) -> Self {
        Tracklet {
            id,
            states: Vec::new(),
            points: Vec::new(),
            age_unmatched: 0,
            birth_frame,
            window,
            refined_velocity: None,
        }
    }

    /// Appends an observed frame, evicting the oldest beyond K + 1 frames.
    pub fn push_state(&mut self, state: State, points: Vec<TimedPoint>) -> Result<()> {
        self.append(state, points)?;
        self.age_unmatched = 0;
        Ok(())
    }

    /// Appends a predicted frame with no observation; the unmatched age is
    /// left to the caller.
    pub fn push_coasting(&mut self, state: State) -> Result<()> {
        self.append(state, Vec::new())
    }

    fn append(&mut self, state: State, points: Vec<TimedPoint>) -> Result<()> {
        if let Some(last) = self.states.last() {
            if state.t != last.t + 1 {
                return Err(Error::NonConsecutiveFrame {
                    expected: last.t + 1,
                    got: state.t,
                });
            }
        }
        if let Some(p) = points.iter().find(|p| p.t != state.t) {
            return Err(Error::InvalidInput(format!(
                "point stamped t={} pushed with state t={}",
                p.t, state.t
            )));
        }
        self.states.push(state);
        self.points.push(points);
        if self.states.len() > self.window + 1 {
            let excess = self.states.len() - (self.window + 1);
            self.states.drain(..excess);
            self.points.drain(..excess);
        }
        Ok(())
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn states_mut(&mut self) -> &mut [State] {
        &mut self.states
    }

    pub fn points(&self) -> &[Vec<TimedPoint>] {
        &self.points
    }

    pub fn last(&self) -> Option<&State> {
        self.states.last()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Frames elapsed since birth, counting the birth frame.
    pub fn age(&self) -> i64 {
        self.states.last().map_or(0, |s| s.t - self.birth_frame + 1)
    }

    pub fn frame_indices(&self) -> Vec<i64> {
        self.states.iter().map(|s| s.t).collect()
    }
}

/// Tracker lifecycle and association settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Maximum history K.
    pub window: usize,
    /// Association gate on BEV center distance, meters.
    pub match_max_dist: f64,
    /// Unmatched detections strictly above this confidence start tracklets.
    pub birth_conf_thresh: f64,
    /// Tracklets unmatched for more than this many frames are killed.
    pub kill_age: u32,
    pub nms_iou: f64,
    pub crop_factor: f64,
    pub min_refine_age: i64,
    pub max_refine_context: usize,
    pub store_refined: bool,
    pub upsample_factor: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            window: 40,
            match_max_dist: 4.0,
            birth_conf_thresh: 0.0,
            kill_age: 3,
            nms_iou: 0.3,
            crop_factor: 1.25,
            min_refine_age: 30,
            max_refine_context: 40,
            store_refined: true,
            upsample_factor: 1,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("pipeline config: {m}")));
        if self.window == 0 {
            return bad("window must be at least 1");
        }
        if !(self.match_max_dist >= 0.0) {
            return bad("match_max_dist must be nonnegative");
        }
        if !(0.0..=1.0).contains(&self.birth_conf_thresh) {
            return bad("birth_conf_thresh must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.nms_iou) {
            return bad("nms_iou must lie in [0, 1]");
        }
        if !(self.crop_factor >= 1.0) {
            return bad("crop_factor must be at least 1");
        }
        if self.min_refine_age < 0 {
            return bad("min_refine_age must be nonnegative");
        }
        if self.max_refine_context == 0 || self.max_refine_context > self.window {
            return bad("max_refine_context must lie in [1, window]");
        }
        if self.upsample_factor == 0 {
            return bad("upsample_factor must be at least 1");
        }
        Ok(())
    }
}
