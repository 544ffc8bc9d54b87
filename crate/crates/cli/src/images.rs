use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Args;
use serde_json::json;
use subtract_core::localize::{localize_edit, LocalizationParams};
use subtract_core::verify::{heuristic_verify, HeuristicVerifier};
use subtract_core::{BinaryMask, RasterImage};

use crate::{print_json, read_json, EXIT_REJECTED};

#[derive(Args)]
pub struct LocalizeArgs {
    /// The image before editing.
    #[arg(long)]
    reference: PathBuf,
    /// The editor's output.
    #[arg(long)]
    candidate: PathBuf,
    /// Writes `localized.png`, `change_mask.png` and `report.json` here.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    params: Option<PathBuf>,
}

pub fn localize(args: LocalizeArgs) -> anyhow::Result<()> {
    let params: LocalizationParams = match &args.params {
        Some(p) => read_json(p)?,
        None => LocalizationParams::default(),
    };
    params.validate()?;
    let reference = RasterImage::load_png(&args.reference).with_context(|| args.reference.display().to_string())?;
    let candidate = RasterImage::load_png(&args.candidate).with_context(|| args.candidate.display().to_string())?;
    let candidate = if candidate.dims() == reference.dims() {
        candidate
    } else {
        candidate.resized(reference.width(), reference.height())?
    };
    let edit = localize_edit(&reference, &candidate, &params)?;
    std::fs::create_dir_all(&args.out)?;
    edit.image.save_png(args.out.join("localized.png"))?;
    edit.change_mask.save_png(args.out.join("change_mask.png"))?;
    let report = json!({
        "change_area": edit.change_mask.area(),
        "noop": edit.is_noop(),
        "annulus_empty": edit.annulus_empty,
        "alignment": edit.alignment,
    });
    std::fs::write(args.out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    print_json(&report)
}

#[derive(Args)]
pub struct VerifyArgs {
    #[arg(long)]
    before: PathBuf,
    #[arg(long)]
    after: PathBuf,
    /// Footprint of the element that should be gone.
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    threshold: Option<f64>,
}

pub fn verify(args: VerifyArgs) -> anyhow::Result<ExitCode> {
    let before = RasterImage::load_png(&args.before).with_context(|| args.before.display().to_string())?;
    let after = RasterImage::load_png(&args.after).with_context(|| args.after.display().to_string())?;
    let mask = BinaryMask::load_png(&args.mask).with_context(|| args.mask.display().to_string())?;
    let mut cfg = HeuristicVerifier::default();
    if let Some(t) = args.threshold {
        anyhow::ensure!((0.0..=1.0).contains(&t), "threshold must lie in [0, 1]");
        cfg.threshold = t;
    }
    let result = heuristic_verify(&before, &after, &mask, &cfg)?;
    print_json(&result)?;
    Ok(if result.pass { ExitCode::SUCCESS } else { ExitCode::from(EXIT_REJECTED) })
}
