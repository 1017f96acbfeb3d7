use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use seqmot_core::io::{self, TrackFile, SCHEMA_VERSION};
use seqmot_core::metrics::{evaluate, EvalScene, MetricsReport};
use seqmot_core::pipeline::{run_scene, Refiner};
use seqmot_core::ssr::SsrModel;
use seqmot_core::synth::{generate_scene, ScenarioConfig};
use seqmot_core::train::{generate_training_sequences, train, TrainReport};
use seqmot_core::{PipelineConfig, Scene};
use seqmot_tensor::Checkpoint;

use crate::{CliError, RunConfig};

type Result<T> = std::result::Result<T, CliError>;

fn scene_file(index: usize) -> String {
    format!("scene_{index:04}.jsonl")
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))
}

/// `*.jsonl` files in `dir`, sorted by name.
fn jsonl_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "jsonl") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn with_path<T>(path: &Path, r: seqmot_core::Result<T>) -> Result<T> {
    r.map_err(|e| match CliError::from(e) {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Reads every scene file of a dataset directory in name order.
pub fn load_dataset(dir: &Path) -> Result<Vec<(String, Scene)>> {
    let files = jsonl_files(dir)?;
    if files.is_empty() {
        return Err(CliError::Data(format!("no scene files in {}", dir.display())));
    }
    files
        .par_iter()
        .map(|p| {
            let name = p.file_name().expect("listed file").to_string_lossy().into_owned();
            Ok((name, with_path(p, io::load_scene(p))?))
        })
        .collect()
}

/// Runs `f` on a pool of `jobs` threads, or the global pool when `None`.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(0) => Err(CliError::Usage("--jobs must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Usage(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// Writes `scenes` synthetic scenes into `out`.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path, scenes: usize) -> Result<Vec<PathBuf>> {
    if scenes == 0 {
        return Err(CliError::Usage("--scenes must be at least 1".into()));
    }
    let scenario = ScenarioConfig {
        seed: cfg.seed,
        ..cfg.scenario.clone()
    };
    scenario.validate()?;
    create_dir(out)?;
    (0..scenes)
        .into_par_iter()
        .map(|i| {
            let s = generate_scene(&scenario, i as u64)?;
            let path = out.join(scene_file(i));
            with_path(&path, io::save_scene(&path, &s.scene))?;
            Ok(path)
        })
        .collect()
}

/// Loads the refinement network for `cfg`, or `None` with `no_ssr`.
pub fn load_model(cfg: &RunConfig, checkpoint: Option<&Path>, no_ssr: bool) -> Result<Option<SsrModel>> {
    if no_ssr {
        return Ok(None);
    }
    let path = checkpoint
        .or(cfg.checkpoint.as_deref())
        .ok_or_else(|| CliError::Usage("a checkpoint is required unless --no-ssr is given".into()))?;
    let ckpt = Checkpoint::load(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(Some(with_path(path, SsrModel::from_checkpoint(cfg.ssr.clone(), &ckpt))?))
}

fn track_all(scenes: &[(String, Scene)], cfg: &RunConfig, pipeline: &PipelineConfig, model: Option<&SsrModel>) -> Result<Vec<TrackFile>> {
    let refiner = model.map(|m| m as &dyn Refiner);
    scenes
        .par_iter()
        .map(|(_, scene)| {
            let out = run_scene(scene, cfg.class, pipeline, refiner)?;
            Ok(TrackFile::from_output(&scene.header, &out, model.is_some()))
        })
        .collect()
}

/// Tracks every scene of `data`, writing one track file per scene into
/// `out` under the scene's file name.
pub fn cmd_track(cfg: &RunConfig, data: &Path, out: &Path, checkpoint: Option<&Path>, no_ssr: bool) -> Result<Vec<TrackFile>> {
    let model = load_model(cfg, checkpoint, no_ssr)?;
    let scenes = load_dataset(data)?;
    let tracks = track_all(&scenes, cfg, &cfg.pipeline, model.as_ref())?;
    create_dir(out)?;
    for ((name, _), t) in scenes.iter().zip(&tracks) {
        let path = out.join(name);
        with_path(&path, io::save_tracks(&path, t))?;
    }
    Ok(tracks)
}

/// Builds training sequences from a dataset with ground truth.
pub fn cmd_generate_data(cfg: &RunConfig, data: &Path, out: &Path) -> Result<usize> {
    let scenes: Vec<Scene> = load_dataset(data)?.into_iter().map(|s| s.1).collect();
    let seqs = generate_training_sequences(&scenes, cfg.class, &cfg.pipeline, &cfg.generation, cfg.ssr.match_radius)?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    with_path(out, io::save_train(out, cfg.class, &seqs))?;
    Ok(seqs.len())
}

pub fn report_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".report.json");
    PathBuf::from(s)
}

/// Trains a fresh network and writes the checkpoint plus a JSON loss report
/// next to it.
pub fn cmd_train(cfg: &RunConfig, train_file: &Path, out: &Path) -> Result<TrainReport> {
    let (header, seqs) = with_path(train_file, io::load_train(train_file))?;
    if header.class != cfg.class {
        return Err(CliError::Data(format!(
            "training data is for {:?} but the config tracks {:?}",
            header.class, cfg.class
        )));
    }
    let mut model = SsrModel::new(cfg.ssr.clone())?;
    let train_cfg = seqmot_core::train::TrainConfig {
        seed: cfg.seed,
        ..cfg.train.clone()
    };
    let report = train(&mut model, &seqs, &train_cfg)?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    model
        .checkpoint()
        .save(out)
        .map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(report_path(out), json)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalFile {
    pub schema_version: u32,
    pub refined: bool,
    pub report: MetricsReport,
}

fn eval_scenes(scenes: &[(String, Scene)], tracks: &[TrackFile]) -> Result<Vec<EvalScene>> {
    scenes
        .iter()
        .zip(tracks)
        .map(|((_, s), t)| Ok(t.eval_scene(s)?))
        .collect()
}

/// Scores the track files in `tracks` against the dataset's ground truth.
pub fn cmd_eval(cfg: &RunConfig, data: &Path, tracks: &Path, out: &Path) -> Result<EvalFile> {
    let scenes = load_dataset(data)?;
    let files = scenes
        .iter()
        .map(|(name, _)| {
            let p = tracks.join(name);
            if !p.exists() {
                return Err(CliError::Data(format!("missing track file {}", p.display())));
            }
            with_path(&p, io::load_tracks(&p))
        })
        .collect::<Result<Vec<_>>>()?;
    let refined = files.iter().any(|f| f.header.refined);
    let report = evaluate(&eval_scenes(&scenes, &files)?, &format!("{:?}", cfg.class).to_lowercase(), &cfg.eval)?;
    let file = EvalFile {
        schema_version: SCHEMA_VERSION,
        refined,
        report,
    };
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    fs::write(out, serde_json::to_string_pretty(&file).expect("report serializes"))?;
    Ok(file)
}

pub const CURVE_HEADER: &str = "target_recall,achieved_recall,cutoff,motar,motp,unreachable";

/// Renders the MOTAR-vs-recall curve of an evaluation file as CSV.
pub fn cmd_report(eval: &Path, out: &Path) -> Result<usize> {
    let text = fs::read_to_string(eval).map_err(|e| CliError::Data(format!("{}: {e}", eval.display())))?;
    let file: EvalFile = serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", eval.display())))?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(CliError::Data(format!(
            "{}: schema version {} (expected {SCHEMA_VERSION})",
            eval.display(),
            file.schema_version
        )));
    }
    let mut csv = String::from(CURVE_HEADER);
    csv.push('\n');
    for l in &file.report.motar_curve {
        csv.push_str(&format!(
            "{:.6},{:.6},{:.6},{:.6},{},{}\n",
            l.target,
            l.achieved,
            l.cutoff,
            l.motar,
            l.motp.map_or(String::new(), |v| format!("{v:.6}")),
            l.unreachable
        ));
    }
    fs::write(out, csv)?;
    Ok(file.report.motar_curve.len())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub variant: &'static str,
    pub birth_thresh: f64,
    pub report: MetricsReport,
}

pub fn sweep_header() -> String {
    format!("variant,c_thresh,{}", MetricsReport::CSV_HEADER)
}

/// Tracks and scores the dataset at each birth threshold, without and (if a
/// model is given) with refinement; writes one CSV row per combination.
pub fn cmd_sweep(cfg: &RunConfig, data: &Path, model: Option<&SsrModel>, thresholds: &[f64], out: &Path) -> Result<Vec<SweepRow>> {
    if thresholds.is_empty() {
        return Err(CliError::Usage("at least one threshold is required".into()));
    }
    let scenes = load_dataset(data)?;
    let class = format!("{:?}", cfg.class).to_lowercase();
    let mut rows = Vec::new();
    let variants: Vec<(&'static str, Option<&SsrModel>)> = match model {
        Some(m) => vec![("no-ssr", None), ("ssr", Some(m))],
        None => vec![("no-ssr", None)],
    };
    for (variant, m) in variants {
        for &c in thresholds {
            let pipeline = PipelineConfig {
                birth_conf_thresh: c,
                ..cfg.pipeline.clone()
            };
            pipeline.validate()?;
            let tracks = track_all(&scenes, cfg, &pipeline, m)?;
            let report = evaluate(&eval_scenes(&scenes, &tracks)?, &class, &cfg.eval)?;
            rows.push(SweepRow {
                variant,
                birth_thresh: c,
                report,
            });
        }
    }
    let mut w = Vec::new();
    writeln!(w, "{}", sweep_header())?;
    for r in &rows {
        writeln!(w, "{},{:.2},{}", r.variant, r.birth_thresh, r.report.csv_row())?;
    }
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    fs::write(out, w)?;
    Ok(rows)
}
