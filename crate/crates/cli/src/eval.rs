use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Subcommand};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::json;
use subtract_core::eval::{
    aggregate_confusion, directional_confusion, evaluate_sequence, ground_truth_from_scene, load_ground_truth,
    order_accuracy, pairwise_agreement, preference_table, DetectionParams, PairJudgment, RaterAnnotation,
    RemovalDetection, SequenceReport,
};
use subtract_core::{RasterImage, SceneSpec, SemanticLevel};

use crate::{print_json, read_json};

#[derive(Subcommand)]
pub enum EvalCommand {
    /// Detect each object's removal frame in a video and score the order.
    Detect(DetectArgs),
    /// Score removal order from saved detections.
    Order(OrderArgs),
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("truth").required(true).args(["gt", "scene"])))]
pub struct DetectArgs {
    /// Directory of PNG frames, ordered by file name.
    #[arg(long)]
    frames: PathBuf,
    /// Ground-truth list: `[{"id", "level", "mask": "path.png"}]`.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Take ground truth from a scene's rendered footprints instead.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    params: Option<PathBuf>,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct OrderArgs {
    /// A report from `eval detect`, or a bare list of detections.
    #[arg(long)]
    detections: PathBuf,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum DetectionsFile {
    Report(SequenceReport),
    List(Vec<RemovalDetection>),
}

fn load_frames(dir: &Path) -> anyhow::Result<Vec<RasterImage>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| dir.display().to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    anyhow::ensure!(!paths.is_empty(), "no PNG frames in {}", dir.display());
    paths.iter().map(|p| RasterImage::load_png(p).with_context(|| p.display().to_string())).collect()
}

pub fn run(cmd: EvalCommand) -> anyhow::Result<()> {
    match cmd {
        EvalCommand::Detect(args) => {
            let params: DetectionParams = match &args.params {
                Some(p) => read_json(p)?,
                None => DetectionParams::default(),
            };
            let gt = match (&args.gt, &args.scene) {
                (Some(gt), _) => load_ground_truth(gt)?,
                (None, Some(scene)) => ground_truth_from_scene(&SceneSpec::load(scene)?)?,
                (None, None) => unreachable!("clap requires one source of truth"),
            };
            let frames = load_frames(&args.frames)?;
            let report = evaluate_sequence(&frames, &gt, &params)?;
            if let Some(out) = &args.out {
                std::fs::write(out, serde_json::to_string_pretty(&report)?)?;
            }
            print_json(&report)
        }
        EvalCommand::Order(args) => {
            let detections = match read_json::<DetectionsFile>(&args.detections)? {
                DetectionsFile::Report(r) => r.detections,
                DetectionsFile::List(l) => l,
            };
            print_json(&order_accuracy(&detections)?)
        }
    }
}

fn read_csv<T: DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    let mut reader =
        csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).with_context(|| path.display().to_string())?;
    reader
        .deserialize()
        .enumerate()
        .map(|(i, row)| row.with_context(|| format!("{} row {}", path.display(), i + 2)))
        .collect()
}

#[derive(Args)]
pub struct AgreementArgs {
    /// CSV with columns `rater_id,element_id,level`.
    #[arg(long)]
    annotations: PathBuf,
    /// Optional CSV `element_id,level` of predicted levels, compared
    /// against every rater.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Deserialize)]
struct Prediction {
    element_id: String,
    level: SemanticLevel,
}

pub fn agreement(args: AgreementArgs) -> anyhow::Result<()> {
    let annotations: Vec<RaterAnnotation> = read_csv(&args.annotations)?;
    let pairs = pairwise_agreement(&annotations)?;
    let taus: Vec<f64> = pairs.iter().filter_map(|p| p.tau_b).collect();
    let mean = (!taus.is_empty()).then(|| taus.iter().sum::<f64>() / taus.len() as f64);
    let confusion = aggregate_confusion(&annotations)?;
    let directional = match &args.predictions {
        Some(p) => {
            let preds: BTreeMap<String, SemanticLevel> =
                read_csv::<Prediction>(p)?.into_iter().map(|r| (r.element_id, r.level)).collect();
            Some(directional_confusion(&preds, &annotations)?)
        }
        None => None,
    };
    print_json(&json!({
        "levels": SemanticLevel::ALL,
        "pairs": pairs,
        "mean_tau_b": mean,
        "confusion": confusion,
        "prediction_confusion": directional,
    }))
}

#[derive(Args)]
pub struct PreferenceArgs {
    /// CSV with columns `pair_id,level_a,level_b,choice` where choice is
    /// `a_first`, `b_first` or `equal`.
    #[arg(long)]
    judgments: PathBuf,
}

pub fn preference(args: PreferenceArgs) -> anyhow::Result<()> {
    let judgments: Vec<PairJudgment> = read_csv(&args.judgments)?;
    anyhow::ensure!(!judgments.is_empty(), "no judgments in {}", args.judgments.display());
    let table = preference_table(&judgments);
    print_json(&json!({"levels": SemanticLevel::ALL, "table": table}))
}
