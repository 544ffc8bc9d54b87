//! Select and Remove back-ends: what to take out next, and an image with it
//! gone. Oracle back-ends read a [`SceneSpec`]; remote ones talk to HTTP
//! services through the prompt protocol.

pub mod oracle;
pub mod parse;
pub mod prompts;
pub mod remote;

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::level::SemanticLevel;
use crate::raster::{BinaryMask, RasterError, RasterImage};
use crate::scene::{visible_footprint, SceneError, SceneSpec};

pub use oracle::{oracle_edit, oracle_plan, oracle_plan_excluding, OraclePlan};
pub use parse::{parse_planner_response, parse_selection, ParseError};
pub use prompts::{render_prompt, EditVariation, PromptError, PromptId, PromptSet, VariationPolicy};
pub use remote::{
    remote_edit, remote_plan, remote_select, EndpointConfig, Fixture, FixtureExchange, FixtureTransport, HttpTransport,
    RemoteRequest, RequestKind, Transport, TransportError,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementCandidate {
    pub index: usize,
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannerResponse {
    pub primary_subject: String,
    pub list_objects: Vec<(String, String)>,
}

impl PlannerResponse {
    pub fn candidates(&self) -> Vec<ElementCandidate> {
        self.list_objects
            .iter()
            .enumerate()
            .map(|(index, (name, description))| ElementCandidate {
                index,
                name: name.clone(),
                description: description.clone(),
            })
            .collect()
    }

    /// A reply in the format the enumeration prompts ask for.
    pub fn to_reply_json(&self) -> String {
        serde_json::json!({
            "primary_subject": self.primary_subject,
            "list_objects": self.list_objects.iter().map(|(a, b)| [a, b]).collect::<Vec<_>>(),
        })
        .to_string()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PlannerError {
    #[error("planner unavailable: {0}")]
    Transport(#[from] TransportError),
    #[error("planner unavailable: {attempts} unparseable replies, last: {last}")]
    MalformedReplies { attempts: usize, last: ParseError },
    #[error("edited image could not be decoded: {0}")]
    Decode(RasterError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("the oracle back-end needs a scene description")]
    NoScene,
    #[error("endpoint configuration: {0}")]
    Config(String),
}

impl PlannerError {
    /// Remote service could not produce a usable answer.
    pub fn is_unavailable(&self) -> bool {
        matches!(self, PlannerError::Transport(_) | PlannerError::MalformedReplies { .. })
    }
}

/// What the engine knows when it asks for the next removal.
#[derive(Debug, Clone, Copy)]
pub struct PlanRequest<'a> {
    pub image: &'a RasterImage,
    /// Present for oracle runs: the scene as it currently stands.
    pub scene: Option<&'a SceneSpec>,
    pub level: SemanticLevel,
    /// Element ids that must not be proposed (forbidden or already skipped).
    pub excluded: &'a BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub element_id: String,
    pub name: String,
    pub description: String,
    /// Ground-truth footprint when the back-end knows it.
    pub target_mask: Option<BinaryMask>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanOutcome {
    Selected(Selection),
    LevelExhausted,
}

pub trait Planner: Send + Sync {
    fn plan(&self, request: &PlanRequest<'_>) -> Result<PlanOutcome, PlannerError>;
}

#[derive(Debug, Clone, Copy)]
pub struct EditRequest<'a> {
    pub image: &'a RasterImage,
    pub scene: Option<&'a SceneSpec>,
    pub selection: &'a Selection,
    /// 0-based candidate number within the step.
    pub attempt: usize,
}

pub trait Editor: Send + Sync {
    fn edit(&self, request: &EditRequest<'_>) -> Result<RasterImage, PlannerError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OraclePlanner;

impl Planner for OraclePlanner {
    fn plan(&self, request: &PlanRequest<'_>) -> Result<PlanOutcome, PlannerError> {
        let scene = request.scene.ok_or(PlannerError::NoScene)?;
        match oracle_plan_excluding(scene, request.level, request.excluded) {
            OraclePlan::LevelExhausted => Ok(PlanOutcome::LevelExhausted),
            OraclePlan::Select(id) => Ok(PlanOutcome::Selected(oracle_selection(scene, &id)?)),
        }
    }
}

/// Selection for a known scene element, footprint included.
pub fn oracle_selection(scene: &SceneSpec, id: &str) -> Result<Selection, SceneError> {
    let element = scene.element(id).ok_or_else(|| SceneError::UnknownElement(id.to_string()))?;
    Ok(Selection {
        element_id: id.to_string(),
        name: id.to_string(),
        description: element.description.clone(),
        target_mask: Some(visible_footprint(scene, id)?),
    })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OracleEditor;

impl Editor for OracleEditor {
    fn edit(&self, request: &EditRequest<'_>) -> Result<RasterImage, PlannerError> {
        let scene = request.scene.ok_or(PlannerError::NoScene)?;
        Ok(oracle_edit(scene, &request.selection.element_id)?)
    }
}

/// Enumerate-then-select planner over a [`Transport`]. Remote candidates are
/// identified by name.
pub struct RemotePlanner {
    pub transport: Arc<dyn Transport>,
    pub config: EndpointConfig,
    pub prompts: PromptSet,
}

impl Planner for RemotePlanner {
    fn plan(&self, request: &PlanRequest<'_>) -> Result<PlanOutcome, PlannerError> {
        let (_, candidates) =
            remote_plan(self.transport.as_ref(), &self.config, &self.prompts, request.image, request.level)?;
        let open: Vec<ElementCandidate> =
            candidates.into_iter().filter(|c| !request.excluded.contains(&c.name)).collect();
        if open.is_empty() {
            return Ok(PlanOutcome::LevelExhausted);
        }
        let picked = if open.len() == 1 {
            open[0].clone()
        } else {
            remote_select(self.transport.as_ref(), &self.config, &self.prompts, request.image, request.level, &open)?
        };
        Ok(PlanOutcome::Selected(Selection {
            element_id: picked.name.clone(),
            name: picked.name,
            description: picked.description,
            target_mask: None,
        }))
    }
}

pub struct RemoteEditor {
    pub transport: Arc<dyn Transport>,
    pub config: EndpointConfig,
    pub prompts: PromptSet,
    pub policy: VariationPolicy,
}

impl Editor for RemoteEditor {
    fn edit(&self, request: &EditRequest<'_>) -> Result<RasterImage, PlannerError> {
        remote_edit(
            self.transport.as_ref(),
            &self.config,
            &self.prompts,
            request.image,
            &request.selection.name,
            self.policy.for_attempt(request.attempt),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Appearance, SceneElement};

    fn scene() -> SceneSpec {
        let el = |id: &str, level, x| SceneElement {
            id: id.into(),
            level,
            z_order: 1,
            mask: BinaryMask::rect(32, 32, x, 4, 6, 6),
            appearance: Appearance::Solid([0.9, 0.1, 0.1]),
            description: format!("{id} thing"),
        };
        SceneSpec::new(32, 32, Appearance::Solid([0.1; 3]))
            .with_element(el("d", SemanticLevel::Distractor, 2))
            .with_element(el("s", SemanticLevel::Secondary, 16))
    }

    #[test]
    fn oracle_planner_stays_in_level() {
        let s = scene();
        let img = crate::scene::composite_scene(&s).unwrap();
        let none = BTreeSet::new();
        let req = PlanRequest { image: &img, scene: Some(&s), level: SemanticLevel::Secondary, excluded: &none };
        let PlanOutcome::Selected(sel) = OraclePlanner.plan(&req).unwrap() else { panic!() };
        assert_eq!(sel.element_id, "s");
        assert_eq!(sel.target_mask.unwrap().area(), 36);
        let req = PlanRequest { scene: None, ..req };
        assert!(matches!(OraclePlanner.plan(&req), Err(PlannerError::NoScene)));
    }

    #[test]
    fn remote_planner_skips_excluded_names() {
        let reply = PlannerResponse {
            primary_subject: "room".into(),
            list_objects: vec![("cup".into(), "a cup".into()), ("pen".into(), "a pen".into())],
        };
        let t = FixtureTransport::new(Fixture {
            exchanges: vec![FixtureExchange {
                kind: RequestKind::Plan,
                prompt: None,
                status: 200,
                body: Some(reply.to_reply_json()),
                body_base64: None,
            }],
        });
        let p =
            RemotePlanner { transport: Arc::new(t), config: EndpointConfig::default(), prompts: PromptSet::builtin() };
        let img = RasterImage::filled(8, 8, [0.5; 3]).unwrap();
        let excluded = BTreeSet::from(["cup".to_string()]);
        let req = PlanRequest { image: &img, scene: None, level: SemanticLevel::Distractor, excluded: &excluded };
        let PlanOutcome::Selected(sel) = p.plan(&req).unwrap() else { panic!() };
        assert_eq!(sel.element_id, "pen");
    }
}
