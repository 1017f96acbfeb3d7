//! Line-delimited JSON interchange: a header line carrying the schema
//! version, then one record per line.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::metrics::{EvalFrame, EvalScene, GtBox, PredBox};
use crate::pipeline::TrackerOutput;
use crate::train::TrainSequence;
use crate::types::{Box7, Detection, Frame, GtObject, ObjectClass, Scene, SceneHeader};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionRecord {
    #[serde(rename = "box")]
    bbox: [f64; 7],
    conf: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vy: Option<f64>,
    /// Defaults to the scene class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class: Option<ObjectClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GtRecord {
    id: u64,
    #[serde(rename = "box")]
    bbox: [f64; 7],
    vx: f64,
    vy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameRecord {
    t: i64,
    points: Vec<[f64; 3]>,
    detections: Vec<DetectionRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt: Option<Vec<GtRecord>>,
}

/// Header of a tracking output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackHeader {
    pub schema_version: u32,
    pub scene_id: String,
    pub class: ObjectClass,
    pub dt: f64,
    /// Whether the refinement network was active.
    pub refined: bool,
}

/// One emitted state; velocity in meters per second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackRecord {
    pub t: i64,
    pub id: u64,
    #[serde(rename = "box")]
    pub bbox: [f64; 7],
    pub vx: f64,
    pub vy: f64,
    pub conf: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackFile {
    pub header: TrackHeader,
    pub records: Vec<TrackRecord>,
}

impl TrackFile {
    pub fn from_output(scene: &SceneHeader, out: &TrackerOutput, refined: bool) -> Self {
        let dt = scene.dt;
        let records = out
            .frames
            .iter()
            .flat_map(|f| {
                f.states.iter().map(move |(id, s)| TrackRecord {
                    t: f.t,
                    id: *id,
                    bbox: s.bbox.to_array(),
                    vx: s.vx / dt,
                    vy: s.vy / dt,
                    conf: s.conf,
                })
            })
            .collect();
        TrackFile {
            header: TrackHeader {
                schema_version: SCHEMA_VERSION,
                scene_id: scene.scene_id.clone(),
                class: scene.class,
                dt,
                refined,
            },
            records,
        }
    }

    /// Pairs these tracks with a scene's ground truth.
    pub fn eval_scene(&self, scene: &Scene) -> Result<EvalScene> {
        if self.header.scene_id != scene.header.scene_id {
            return Err(Error::InvalidInput(format!(
                "tracks for scene {} evaluated against scene {}",
                self.header.scene_id, scene.header.scene_id
            )));
        }
        let frames = scene
            .frames
            .iter()
            .map(|f| {
                let gt = f.gt.as_ref().ok_or_else(|| Error::NoGroundTruth(scene.header.scene_id.clone()))?;
                let preds = self
                    .records
                    .iter()
                    .filter(|r| r.t == f.t)
                    .map(|r| {
                        Ok(PredBox {
                            id: r.id,
                            bbox: Box7::from_array(r.bbox)?,
                            conf: r.conf,
                        })
                    })
                    .collect::<Result<_>>()?;
                Ok(EvalFrame {
                    gt: gt.iter().map(|g| GtBox { id: g.id, bbox: g.bbox }).collect(),
                    preds,
                })
            })
            .collect::<Result<_>>()?;
        Ok(EvalScene { frames })
    }
}

/// Header of a training-sequence file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainHeader {
    pub schema_version: u32,
    pub class: ObjectClass,
}

fn to_line<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string(value)?)
}

fn parse_line<T: DeserializeOwned>(line: &str, number: usize) -> Result<T> {
    serde_json::from_str(line).map_err(|e| Error::Parse {
        line: number,
        message: e.to_string(),
    })
}

fn check_version(found: u32) -> Result<()> {
    if found != SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            found,
            expected: SCHEMA_VERSION,
        });
    }
    Ok(())
}

/// Non-empty lines with their 1-based numbers.
fn lines<R: BufRead>(r: R) -> impl Iterator<Item = Result<(usize, String)>> {
    r.lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 1, l)).map_err(Error::from))
        .filter(|l| !matches!(l, Ok((_, s)) if s.trim().is_empty()))
}

fn header_line(it: &mut impl Iterator<Item = Result<(usize, String)>>) -> Result<(usize, String)> {
    it.next().unwrap_or_else(|| {
        Err(Error::Parse {
            line: 1,
            message: "missing header line".into(),
        })
    })
}

fn frame_record(f: &Frame) -> FrameRecord {
    FrameRecord {
        t: f.t,
        points: f.points.clone(),
        detections: f
            .detections
            .iter()
            .map(|d| DetectionRecord {
                bbox: d.bbox.to_array(),
                conf: d.conf,
                vx: d.velocity.map(|v| v[0]),
                vy: d.velocity.map(|v| v[1]),
                class: Some(d.class),
            })
            .collect(),
        gt: f.gt.as_ref().map(|gt| {
            gt.iter()
                .map(|g| GtRecord {
                    id: g.id,
                    bbox: g.bbox.to_array(),
                    vx: g.velocity[0],
                    vy: g.velocity[1],
                })
                .collect()
        }),
    }
}

fn frame_from_record(r: FrameRecord, class: ObjectClass, line: usize) -> Result<Frame> {
    let at = |e: Error| Error::Parse {
        line,
        message: e.to_string(),
    };
    let detections = r
        .detections
        .into_iter()
        .map(|d| {
            let velocity = match (d.vx, d.vy) {
                (Some(x), Some(y)) => Some([x, y]),
                (None, None) => None,
                _ => return Err(Error::InvalidInput("detection has only one velocity component".into())),
            };
            Ok(Detection {
                bbox: Box7::from_array(d.bbox)?,
                conf: d.conf,
                class: d.class.unwrap_or(class),
                t: r.t,
                velocity,
            })
        })
        .collect::<Result<Vec<_>>>()
        .map_err(at)?;
    let gt = r
        .gt
        .map(|gt| {
            gt.into_iter()
                .map(|g| {
                    Ok(GtObject {
                        id: g.id,
                        bbox: Box7::from_array(g.bbox)?,
                        velocity: [g.vx, g.vy],
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .transpose()
        .map_err(at)?;
    let frame = Frame {
        t: r.t,
        points: r.points,
        detections,
        gt,
    };
    frame.validate().map_err(at)?;
    Ok(frame)
}

pub fn write_scene<W: Write>(mut w: W, scene: &Scene) -> Result<()> {
    writeln!(w, "{}", to_line(&scene.header)?)?;
    for f in &scene.frames {
        writeln!(w, "{}", to_line(&frame_record(f))?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scene<R: BufRead>(r: R) -> Result<Scene> {
    let mut it = lines::<R>(r);
    let (n, line) = header_line(&mut it)?;
    let header: SceneHeader = parse_line(&line, n)?;
    check_version(header.schema_version)?;
    let mut frames: Vec<Frame> = Vec::new();
    for item in it {
        let (n, line) = item?;
        let frame = frame_from_record(parse_line(&line, n)?, header.class, n)?;
        if let Some(prev) = frames.last() {
            if frame.t != prev.t + 1 {
                return Err(Error::Parse {
                    line: n,
                    message: format!("frame t={} does not follow t={}", frame.t, prev.t),
                });
            }
        }
        frames.push(frame);
    }
    Ok(Scene { header, frames })
}

pub fn write_tracks<W: Write>(mut w: W, tracks: &TrackFile) -> Result<()> {
    writeln!(w, "{}", to_line(&tracks.header)?)?;
    for r in &tracks.records {
        writeln!(w, "{}", to_line(r)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tracks<R: BufRead>(r: R) -> Result<TrackFile> {
    let mut it = lines::<R>(r);
    let (n, line) = header_line(&mut it)?;
    let header: TrackHeader = parse_line(&line, n)?;
    check_version(header.schema_version)?;
    let records = it
        .map(|item| {
            let (n, line) = item?;
            parse_line(&line, n)
        })
        .collect::<Result<_>>()?;
    Ok(TrackFile { header, records })
}

pub fn write_train<W: Write>(mut w: W, class: ObjectClass, seqs: &[TrainSequence]) -> Result<()> {
    let header = TrainHeader {
        schema_version: SCHEMA_VERSION,
        class,
    };
    writeln!(w, "{}", to_line(&header)?)?;
    for s in seqs {
        writeln!(w, "{}", to_line(s)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_train<R: BufRead>(r: R) -> Result<(TrainHeader, Vec<TrainSequence>)> {
    let mut it = lines::<R>(r);
    let (n, line) = header_line(&mut it)?;
    let header: TrainHeader = parse_line(&line, n)?;
    check_version(header.schema_version)?;
    let seqs = it
        .map(|item| {
            let (n, line) = item?;
            let s: TrainSequence = parse_line(&line, n)?;
            s.validate().map_err(|e| Error::Parse {
                line: n,
                message: e.to_string(),
            })?;
            Ok(s)
        })
        .collect::<Result<_>>()?;
    Ok((header, seqs))
}

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, write: impl FnOnce(&mut BufWriter<fs::File>) -> Result<()>) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        write(&mut w)?;
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_scene(path: &Path, scene: &Scene) -> Result<()> {
    write_atomic(path, |w| write_scene(w, scene))
}

pub fn load_scene(path: &Path) -> Result<Scene> {
    read_scene(BufReader::new(fs::File::open(path)?))
}

pub fn save_tracks(path: &Path, tracks: &TrackFile) -> Result<()> {
    write_atomic(path, |w| write_tracks(w, tracks))
}

pub fn load_tracks(path: &Path) -> Result<TrackFile> {
    read_tracks(BufReader::new(fs::File::open(path)?))
}

pub fn save_train(path: &Path, class: ObjectClass, seqs: &[TrainSequence]) -> Result<()> {
    write_atomic(path, |w| write_train(w, class, seqs))
}

pub fn load_train(path: &Path) -> Result<(TrainHeader, Vec<TrainSequence>)> {
    read_train(BufReader::new(fs::File::open(path)?))
}
