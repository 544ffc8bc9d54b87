//! Acceptance criteria 1 to 10. Runs without the libtest harness so each
//! criterion prints exactly one PASS/FAIL line.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use subtract_core::engine::{
    branch, export_frames, run_simplification, Backends, BranchAction, BranchDirective, BranchOptions, EngineConfig,
    EngineError, ExportPreset, Start, StepStatus, TrajectoryTree,
};
use subtract_core::eval::{
    aggregate_confusion, detect_removal_frame, evaluate_sequence, ground_truth_from_scene, kendall_tau_b,
    order_accuracy, preference_table, Choice, DetectionParams, EvalError, PairJudgment, RaterAnnotation,
    RemovalDetection,
};
use subtract_core::localize::{localize_edit, LocalizationParams};
use subtract_core::planner::{oracle_edit, EditVariation, ElementCandidate, PromptId, PromptSet};
use subtract_core::scene::Appearance;
use subtract_core::synth::{random_removal_video, random_scene, SceneGenConfig};
use subtract_core::verify::{gate_with, VerifyError, VerifyResult, MAX_CANDIDATES};
use subtract_core::{
    composite_scene, visible_footprint, BinaryMask, RasterImage, SceneElement, SceneSpec, SemanticLevel,
};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Criterion 1: oracle engine output, exported and re-detected, is ordered
/// perfectly on every scene.
fn end_to_end_oracle_ordering() -> Outcome {
    let start = Instant::now();
    let cfg = EngineConfig::default();
    let backends = Backends::oracle(&cfg);
    let mut failures = Vec::new();
    for seed in 0..20u64 {
        let scene = random_scene(&SceneGenConfig::default(), seed);
        let tree = run_simplification(Start::Scene(scene.clone()), &backends, &cfg).map_err(|e| e.to_string())?;
        let leaf = *tree.main_path.last().unwrap();
        let count = tree.path_images(leaf).unwrap().len();
        let preset = ExportPreset { repeat: 5, total: 5 * count - 1 };
        let frames = export_frames(&tree, leaf, preset).map_err(|e| e.to_string())?;
        let gt = ground_truth_from_scene(&scene).map_err(|e| e.to_string())?;
        let report = evaluate_sequence(&frames, &gt, &DetectionParams::default()).map_err(|e| e.to_string())?;
        if report.accuracy.score != 1.0 {
            failures.push(format!("seed {seed}: {:.3}", report.accuracy.score));
        }
    }
    let elapsed = start.elapsed();
    check(
        failures.is_empty() && elapsed < Duration::from_secs(60),
        format!("20 scenes, failures {:?}, {:.1}s", failures, elapsed.as_secs_f64()),
    )
}

/// Criterion 2: removal frames found within the window; untouched objects
/// never reported.
fn detection_localization() -> Outcome {
    let params = DetectionParams::default();
    let (mut removed, mut within, mut kept, mut false_pos) = (0, 0, 0, 0);
    for seed in 0..50u64 {
        let video = random_removal_video(96, 96, 24, seed);
        for (_, mask, at) in &video.schedule {
            let t = detect_removal_frame(&video.frames, mask, &params).map_err(|e| e.to_string())?;
            match at {
                Some(a) => {
                    removed += 1;
                    let truth = a + 1;
                    if t.is_some_and(|t| t.abs_diff(truth) <= params.window) {
                        within += 1;
                    }
                }
                None => {
                    kept += 1;
                    if t.is_some() {
                        false_pos += 1;
                    }
                }
            }
        }
    }
    let rate = within as f64 / removed as f64;
    check(
        rate >= 0.95 && false_pos == 0 && kept > 0,
        format!(
            "{within}/{removed} within ±{} ({:.1}%), {false_pos} false positives over {kept} kept",
            params.window,
            100.0 * rate
        ),
    )
}

/// Exhaustive ordered-pair count; never-removed objects sit after every frame.
fn brute_order(levels: &[SemanticLevel], times: &[Option<usize>]) -> Option<(usize, usize, usize, f64)> {
    let inf = usize::MAX;
    let (mut np, mut inv, mut eq) = (0, 0, 0);
    for i in 0..levels.len() {
        for j in 0..levels.len() {
            if levels[i] < levels[j] {
                np += 1;
                let (ti, tj) = (times[i].unwrap_or(inf), times[j].unwrap_or(inf));
                if tj < ti {
                    inv += 1;
                } else if tj == ti {
                    eq += 1;
                }
            }
        }
    }
    (np > 0).then(|| (np, inv, eq, 1.0 - (inv + eq) as f64 / np as f64))
}

/// Criterion 3.
fn order_accuracy_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    let mut undefined = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=12);
        let levels: Vec<SemanticLevel> = (0..n).map(|_| *SemanticLevel::ALL.choose(&mut rng).unwrap()).collect();
        let times: Vec<Option<usize>> =
            (0..n).map(|_| if rng.random_bool(0.2) { None } else { Some(rng.random_range(1..=8)) }).collect();
        let dets: Vec<RemovalDetection> = levels
            .iter()
            .zip(&times)
            .enumerate()
            .map(|(i, (&level, &t_star))| RemovalDetection { id: format!("o{i}"), level, t_star })
            .collect();
        match (order_accuracy(&dets), brute_order(&levels, &times)) {
            (Ok(r), Some((np, inv, eq, score))) => {
                if (r.n_prime, r.n_inv, r.n_eq) != (np, inv, eq) || r.score != score {
                    mismatches += 1;
                }
            }
            (Err(EvalError::NoCrossLevelPairs), None) => undefined += 1,
            _ => mismatches += 1,
        }
    }
    check(mismatches == 0, format!("1000 instances, {mismatches} mismatches ({undefined} without cross-level pairs)"))
}

/// O(n²) tau-b.
fn brute_tau_b(x: &[u32], y: &[u32]) -> Option<f64> {
    let (mut c, mut d, mut tx, mut ty) = (0u64, 0u64, 0u64, 0u64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let dx = x[i].cmp(&x[j]);
            let dy = y[i].cmp(&y[j]);
            use std::cmp::Ordering::Equal;
            match (dx, dy) {
                (Equal, Equal) => {}
                (Equal, _) => tx += 1,
                (_, Equal) => ty += 1,
                (a, b) if a == b => c += 1,
                _ => d += 1,
            }
        }
    }
    let denom = ((c + d + tx) as f64) * ((c + d + ty) as f64);
    (denom > 0.0).then(|| (c as f64 - d as f64) / denom.sqrt())
}

/// Criterion 4.
fn kendall_tau_b_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0;
    for _ in 0..200 {
        let n = rng.random_range(2..=50);
        let k = rng.random_range(2..=6);
        let x: Vec<u32> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let y: Vec<u32> = (0..n).map(|_| rng.random_range(0..k)).collect();
        if kendall_tau_b(&x, &y).ok() != brute_tau_b(&x, &y) {
            mismatches += 1;
        }
        if kendall_tau_b(&x, &x).ok().is_some_and(|t| t != 1.0) {
            mismatches += 1;
        }
    }
    let mut reversal_ok = true;
    for _ in 0..50 {
        let n = rng.random_range(2..=50u32);
        let mut x: Vec<u32> = (0..n).collect();
        for i in (1..x.len()).rev() {
            x.swap(i, rng.random_range(0..=i));
        }
        let rev: Vec<u32> = x.iter().map(|v| n - 1 - v).collect();
        reversal_ok &= kendall_tau_b(&x, &rev).unwrap() == -1.0 && kendall_tau_b(&x, &x).unwrap() == 1.0;
    }
    check(
        mismatches == 0 && reversal_ok,
        format!(
            "200 tied rankings, {mismatches} mismatches; identity/reversal {}",
            if reversal_ok { "ok" } else { "broken" }
        ),
    )
}

/// Criterion 5: a globally shifted candidate changes nothing outside the
/// removal footprint plus the blend reach.
fn edit_locality() -> Outcome {
    let params = LocalizationParams::default();
    let reach = params.dilation_radius + (3.0 * params.feather_sigma).ceil() as u32;
    let gen = SceneGenConfig { textured_canvas: true, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut bad = Vec::new();
    let mut noops = 0;
    for seed in 0..100u64 {
        let scene = random_scene(&gen, 500 + seed);
        let reference = composite_scene(&scene).map_err(|e| e.to_string())?;
        let target = scene.elements.choose(&mut rng).unwrap().id.clone();
        let removed = oracle_edit(&scene, &target).map_err(|e| e.to_string())?;
        let shifted = RasterImage::from_fn(removed.width(), removed.height(), |x, y| {
            removed.get(x, y).map(|v| (v + 0.05).min(1.0))
        })
        .unwrap()
        .quantized();
        let out = localize_edit(&reference, &shifted, &params).map_err(|e| e.to_string())?;
        let allowed = visible_footprint(&scene, &target).map_err(|e| e.to_string())?.dilate(reach);
        let leaks = (0..reference.pixel_count())
            .filter(|&i| !allowed.get_index(i) && out.image.get_index(i) != reference.get_index(i))
            .count();
        if leaks > 0 {
            bad.push((seed, leaks));
        }
        if out.change_mask.is_empty() {
            noops += 1;
        }
    }
    check(
        bad.is_empty() && noops == 0,
        format!("100 pairs, reach {reach}px, pairs with outside changes: {bad:?}, edits dropped: {noops}"),
    )
}

fn verdict(pass: bool) -> VerifyResult {
    VerifyResult {
        score: if pass { 1.0 } else { 0.0 },
        pass,
        threshold: 0.5,
        diagnostics: BTreeMap::new(),
        dominant: None,
        mask_source: None,
    }
}

/// Criterion 6.
fn gate_contract() -> Outcome {
    let mut runner =
        TestRunner::new(ProptestConfig { cases: 512, failure_persistence: None, ..ProptestConfig::default() });
    let strategy = prop::collection::vec(any::<bool>(), 1..=MAX_CANDIDATES);
    runner
        .run(&strategy, |passes| {
            let mut scored = Vec::new();
            let outcome = gate_with::<VerifyError>(passes.len(), |i| {
                scored.push(i);
                Ok(verdict(passes[i]))
            })
            .unwrap();
            let first = passes.iter().position(|&p| p);
            prop_assert_eq!(outcome.accepted, first);
            let expected: Vec<usize> = (0..=first.unwrap_or(passes.len() - 1)).collect();
            prop_assert_eq!(&scored, &expected);
            prop_assert_eq!(outcome.results.len(), expected.len());
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let all_fail = gate_with::<VerifyError>(MAX_CANDIDATES, |_| Ok(verdict(false))).unwrap();
    let too_many = gate_with::<VerifyError>(MAX_CANDIDATES + 1, |_| Ok(verdict(true)));
    check(
        all_fail.accepted.is_none()
            && all_fail.results.len() == MAX_CANDIDATES
            && matches!(too_many, Err(VerifyError::TooManyCandidates { .. })),
        "512 random pass/fail sequences; all-fail skips after 5; 6 candidates rejected".into(),
    )
}

fn grid_scene() -> SceneSpec {
    let levels = [
        SemanticLevel::Distractor,
        SemanticLevel::Distractor,
        SemanticLevel::Distractor,
        SemanticLevel::Secondary,
        SemanticLevel::Secondary,
        SemanticLevel::Primary,
        SemanticLevel::Primary,
        SemanticLevel::Background,
        SemanticLevel::Background,
    ];
    let mut scene = SceneSpec::new(90, 90, Appearance::Solid([0.1, 0.1, 0.1]));
    for (i, level) in levels.iter().enumerate() {
        let (gx, gy) = ((i % 3) as i64, (i / 3) as i64);
        scene = scene.with_element(SceneElement {
            id: format!("g{i}"),
            level: *level,
            z_order: 1,
            mask: BinaryMask::rect(90, 90, 6 + 30 * gx, 6 + 30 * gy, 16 + i as u32 % 3, 16),
            appearance: Appearance::Solid([0.9, 0.5, if i % 2 == 0 { 0.1 } else { 0.9 }]),
            description: format!("block {i}"),
        });
    }
    scene
}

/// Criterion 7.
fn frame_expansion() -> Outcome {
    let cfg = EngineConfig::default();
    let tree =
        run_simplification(Start::Scene(grid_scene()), &Backends::oracle(&cfg), &cfg).map_err(|e| e.to_string())?;
    let leaf = *tree.main_path.last().unwrap();
    let images = tree.path_images(leaf).unwrap();
    if images.len() != 10 {
        return Err(format!("expected a 10-image path, got {}", images.len()));
    }
    let frames = export_frames(&tree, leaf, ExportPreset { repeat: 5, total: 49 }).map_err(|e| e.to_string())?;
    let last = images[9];
    let last_count = frames.iter().filter(|f| *f == last).count();
    let runs_ok = (0..9).all(|i| frames[5 * i..5 * i + 5].iter().all(|f| f == images[i]));
    check(
        frames.len() == 49 && last_count == 4 && runs_ok,
        format!("{} frames, last image x{last_count}", frames.len()),
    )
}

/// Criterion 8.
fn analytics_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut asym, mut bad_rows, mut bad_cells, mut populated) = (0, 0, 0, 0);
    for _ in 0..300 {
        let raters = rng.random_range(2..=5);
        let elements = rng.random_range(1..=40);
        let mut anns = Vec::new();
        for r in 0..raters {
            for e in 0..elements {
                if rng.random_bool(0.85) {
                    anns.push(RaterAnnotation {
                        rater_id: format!("r{r}"),
                        element_id: format!("e{e}"),
                        level: *SemanticLevel::ALL.choose(&mut rng).unwrap(),
                    });
                }
            }
        }
        let Ok(c) = aggregate_confusion(&anns) else { continue };
        for i in 0..4 {
            for j in 0..4 {
                if c.raw[i][j] != c.raw[j][i] {
                    asym += 1;
                }
            }
            let sum: f64 = c.normalized[i].iter().sum();
            if c.raw[i].iter().any(|&v| v > 0) && (sum - 1.0).abs() > 1e-9 {
                bad_rows += 1;
            }
        }
    }
    for _ in 0..300 {
        let n = rng.random_range(0..200);
        let judgments: Vec<PairJudgment> = (0..n)
            .map(|i| PairJudgment {
                pair_id: format!("p{i}"),
                level_a: *SemanticLevel::ALL.choose(&mut rng).unwrap(),
                level_b: *SemanticLevel::ALL.choose(&mut rng).unwrap(),
                choice: *[Choice::AFirst, Choice::BFirst, Choice::Equal].choose(&mut rng).unwrap(),
            })
            .collect();
        let t = preference_table(&judgments);
        for r in 0..4 {
            for c in 0..4 {
                if let (Some(a), Some(b)) = (t.percent[r][c], t.percent[c][r]) {
                    populated += 1;
                    if (a + b - 100.0).abs() > 1e-9 {
                        bad_cells += 1;
                    }
                } else if t.percent[r][c].is_some() != t.percent[c][r].is_some() {
                    bad_cells += 1;
                }
            }
        }
    }
    check(
        asym == 0 && bad_rows == 0 && bad_cells == 0 && populated > 0,
        format!("asymmetric entries {asym}, bad rows {bad_rows}, non-complementary cells {bad_cells} of {populated}"),
    )
}

fn path_violations(tree: &TrajectoryTree) -> Vec<String> {
    let mut out = Vec::new();
    for leaf in tree.leaves() {
        let path = tree.path_to(leaf).unwrap();
        let steps = tree.steps_to(leaf).unwrap();
        if steps.windows(2).any(|w| w[0].level > w[1].level) {
            out.push(format!("levels decrease on path to {leaf}"));
        }
        if steps.iter().any(|s| s.status != StepStatus::Accepted) {
            out.push(format!("non-accepted edge on path to {leaf}"));
        }
        if steps.iter().any(|s| !s.forced && s.element_level.is_some_and(|l| l != s.level)) {
            out.push(format!("planner left its level on path to {leaf}"));
        }
        let ids: BTreeSet<_> = steps.iter().map(|s| &s.element_id).collect();
        if ids.len() != steps.len() {
            out.push(format!("element removed twice on path to {leaf}"));
        }
        for (k, &n) in path.iter().enumerate() {
            for f in &tree.nodes[n].forbidden {
                let later = path[k + 1..].iter().filter_map(|&m| tree.nodes[m].incoming.as_ref());
                if later.into_iter().any(|s| &s.element_id == f) {
                    out.push(format!("forbidden {f} removed below node {n}"));
                }
            }
        }
    }
    out
}

/// Criterion 9.
fn level_monotonicity() -> Outcome {
    let cfg = EngineConfig::default();
    let backends = Backends::oracle(&cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut violations = Vec::new();
    let mut branches = 0;
    for seed in 0..100u64 {
        let gen = SceneGenConfig { allow_overlap: seed % 2 == 1, ..Default::default() };
        let scene = random_scene(&gen, 9000 + seed);
        let mut tree = run_simplification(Start::Scene(scene.clone()), &backends, &cfg).map_err(|e| e.to_string())?;
        for _ in 0..2 {
            let node = rng.random_range(0..tree.nodes.len());
            let element = scene.elements.choose(&mut rng).unwrap().id.clone();
            let action =
                if rng.random_bool(0.5) { BranchAction::Forbid(element) } else { BranchAction::ForceRemove(element) };
            match branch(
                &mut tree,
                &BranchDirective { node_id: node, action },
                &backends,
                &cfg,
                BranchOptions::default(),
                &mut |_| Ok(()),
            ) {
                Ok(_) => branches += 1,
                Err(EngineError::Conflict(_)) => {}
                Err(e) => return Err(e.to_string()),
            }
        }
        violations.extend(path_violations(&tree).into_iter().map(|v| format!("seed {seed}: {v}")));
    }
    check(violations.is_empty(), format!("100 runs, {branches} branches, violations: {violations:?}"))
}

/// Criterion 10.
fn prompt_fidelity() -> Outcome {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let prompts = PromptSet::builtin();
    let candidates = [
        ElementCandidate { index: 0, name: "cable".into(), description: "black cable along the floor".into() },
        ElementCandidate { index: 1, name: "mug".into(), description: "red mug on the desk".into() },
    ];
    let render = |id: PromptId| -> Result<String, String> {
        match id {
            PromptId::EnumerateDistractor => prompts.enumerate(SemanticLevel::Distractor),
            PromptId::EnumerateStructural => prompts.enumerate(SemanticLevel::Background),
            PromptId::EnumerateGeneral => prompts.enumerate(SemanticLevel::Secondary),
            PromptId::SelectDistractor => prompts.select(SemanticLevel::Distractor, &candidates),
            PromptId::SelectGeneral => prompts.select(SemanticLevel::Primary, &candidates),
            PromptId::InpaintDirect => prompts.inpaint(EditVariation::Direct, "red mug"),
            PromptId::InpaintAbstractive => prompts.inpaint(EditVariation::Abstractive, "red mug"),
            PromptId::BaselineVideo => prompts.render(id, &BTreeMap::new()),
        }
        .map_err(|e| e.to_string())
    };
    let mut differing = Vec::new();
    for id in PromptId::ALL {
        let golden = std::fs::read(dir.join(id.file_name())).map_err(|e| format!("{}: {e}", id.name()))?;
        if render(id)?.as_bytes() != golden.as_slice() {
            differing.push(id.name());
        }
    }
    check(differing.is_empty(), format!("8 templates, differing: {differing:?}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("end-to-end oracle ordering", end_to_end_oracle_ordering),
        ("detection localization", detection_localization),
        ("order accuracy oracle equivalence", order_accuracy_oracle),
        ("kendall tau-b correctness", kendall_tau_b_correctness),
        ("edit locality", edit_locality),
        ("gate contract", gate_contract),
        ("frame expansion", frame_expansion),
        ("analytics algebra", analytics_algebra),
        ("level monotonicity", level_monotonicity),
        ("prompt fidelity", prompt_fidelity),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
