//! Run configuration: one TOML file with a section per component, plus the
//! named presets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use seqmot_core::metrics::{EvalConfig, MatchMode};
use seqmot_core::ssr::SsrConfig;
use seqmot_core::synth::ScenarioConfig;
use seqmot_core::train::{AugmentConfig, GenerationConfig, TrainConfig};
use seqmot_core::{ObjectClass, PipelineConfig};

use crate::CliError;

pub const PRESETS: [&str; 5] = ["nuscenes-car", "nuscenes-ped", "waymo-vehicle", "waymo-ped", "synthetic"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub class: ObjectClass,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub pipeline: PipelineConfig,
    pub ssr: SsrConfig,
    pub eval: EvalConfig,
    pub scenario: ScenarioConfig,
    pub generation: GenerationConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self, CliError> {
        match name {
            "nuscenes-car" => Ok(nuscenes(ObjectClass::Car, 4.0)),
            "nuscenes-ped" => Ok(nuscenes(ObjectClass::Pedestrian, 1.0)),
            "waymo-vehicle" => Ok(waymo(ObjectClass::Vehicle, 0.8, 0.7, 5, 0.7)),
            "waymo-ped" => Ok(waymo(ObjectClass::Pedestrian, 0.4, 0.6, 2, 0.5)),
            "synthetic" => Ok(synthetic()),
            other => Err(CliError::Usage(format!(
                "unknown preset {other:?}; expected one of {}",
                PRESETS.join(", ")
            ))),
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.pipeline.validate()?;
        self.ssr.validate()?;
        self.eval.validate()?;
        self.scenario.validate()?;
        self.train.validate()?;
        Ok(())
    }
}

fn base(class: ObjectClass) -> RunConfig {
    let pipeline = PipelineConfig::default();
    RunConfig {
        class,
        seed: 0,
        dataset: None,
        checkpoint: None,
        output: None,
        train: TrainConfig::new(pipeline.window),
        pipeline,
        ssr: SsrConfig::for_class(class),
        eval: EvalConfig::default(),
        scenario: ScenarioConfig::for_class(class),
        generation: GenerationConfig::default(),
    }
}

/// Keyframe detections upsampled tenfold, refined boxes stored, long
/// context, center-distance evaluation.
fn nuscenes(class: ObjectClass, match_dist: f64) -> RunConfig {
    let mut cfg = base(class);
    cfg.pipeline = PipelineConfig {
        window: 40,
        match_max_dist: match_dist,
        birth_conf_thresh: 0.0,
        kill_age: 3,
        nms_iou: 0.3,
        min_refine_age: 30,
        max_refine_context: 40,
        store_refined: true,
        upsample_factor: 10,
        ..PipelineConfig::default()
    };
    cfg.train = TrainConfig {
        epochs: if class == ObjectClass::Pedestrian { 10 } else { 20 },
        ..TrainConfig::new(40)
    };
    cfg
}

/// Raw detections stored, short context, IoU-matched evaluation.
fn waymo(class: ObjectClass, match_dist: f64, birth: f64, min_age: i64, eval_iou: f64) -> RunConfig {
    let mut cfg = base(class);
    cfg.pipeline = PipelineConfig {
        window: 15,
        match_max_dist: match_dist,
        birth_conf_thresh: birth,
        kill_age: 3,
        nms_iou: 0.5,
        min_refine_age: min_age,
        max_refine_context: 10,
        store_refined: false,
        upsample_factor: 1,
        ..PipelineConfig::default()
    };
    cfg.eval = EvalConfig {
        match_mode: MatchMode::BevIou,
        match_thresh: eval_iou,
        ..EvalConfig::default()
    };
    cfg.train = TrainConfig {
        epochs: if class == ObjectClass::Pedestrian { 10 } else { 20 },
        ..TrainConfig::new(15)
    };
    cfg
}

/// Desk-scale settings for the synthetic scenario generator: a short window,
/// refinement from the first frame, and a narrow network.
fn synthetic() -> RunConfig {
    let class = ObjectClass::Car;
    let mut cfg = base(class);
    let window = 8;
    cfg.pipeline = PipelineConfig {
        window,
        match_max_dist: 4.0,
        birth_conf_thresh: 0.0,
        kill_age: 3,
        nms_iou: 0.3,
        min_refine_age: 1,
        max_refine_context: window,
        store_refined: true,
        upsample_factor: 1,
        ..PipelineConfig::default()
    };
    cfg.ssr = SsrConfig {
        feat_dim: 32,
        point_hidden: 32,
        anchors_per_frame: 8,
        group_cap: 16,
        pos_dim: 16,
        attn_layers: 2,
        attn_heads: 4,
        ffn_dim: 64,
        head_hidden: 64,
        ..SsrConfig::for_class(class)
    };
    cfg.generation = GenerationConfig {
        stride: 4,
        min_len: 1,
        max_sequences: Some(1200),
        ..GenerationConfig::default()
    };
    cfg.train = TrainConfig {
        epochs: 10,
        batch_size: 16,
        augment: AugmentConfig::standard(window),
        ..TrainConfig::new(window)
    };
    cfg
}
