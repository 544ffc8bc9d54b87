//! Prompt templates shipped as text assets, with `{name}` placeholders.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::level::SemanticLevel;

use super::ElementCandidate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptId {
    EnumerateDistractor,
    EnumerateStructural,
    EnumerateGeneral,
    SelectDistractor,
    SelectGeneral,
    InpaintDirect,
    InpaintAbstractive,
    BaselineVideo,
}

impl PromptId {
    pub const ALL: [PromptId; 8] = [
        PromptId::EnumerateDistractor,
        PromptId::EnumerateStructural,
        PromptId::EnumerateGeneral,
        PromptId::SelectDistractor,
        PromptId::SelectGeneral,
        PromptId::InpaintDirect,
        PromptId::InpaintAbstractive,
        PromptId::BaselineVideo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PromptId::EnumerateDistractor => "enumerate_distractor",
            PromptId::EnumerateStructural => "enumerate_structural",
            PromptId::EnumerateGeneral => "enumerate_general",
            PromptId::SelectDistractor => "select_distractor",
            PromptId::SelectGeneral => "select_general",
            PromptId::InpaintDirect => "inpaint_direct",
            PromptId::InpaintAbstractive => "inpaint_abstractive",
            PromptId::BaselineVideo => "baseline_video",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.txt", self.name())
    }

    pub fn builtin(self) -> &'static str {
        match self {
            PromptId::EnumerateDistractor => include_str!("../../prompts/enumerate_distractor.txt"),
            PromptId::EnumerateStructural => include_str!("../../prompts/enumerate_structural.txt"),
            PromptId::EnumerateGeneral => include_str!("../../prompts/enumerate_general.txt"),
            PromptId::SelectDistractor => include_str!("../../prompts/select_distractor.txt"),
            PromptId::SelectGeneral => include_str!("../../prompts/select_general.txt"),
            PromptId::InpaintDirect => include_str!("../../prompts/inpaint_direct.txt"),
            PromptId::InpaintAbstractive => include_str!("../../prompts/inpaint_abstractive.txt"),
            PromptId::BaselineVideo => include_str!("../../prompts/baseline_video.txt"),
        }
    }

    /// Template used to enumerate candidates at `level`.
    pub fn enumerate_for(level: SemanticLevel) -> PromptId {
        match level {
            SemanticLevel::Distractor => PromptId::EnumerateDistractor,
            SemanticLevel::Background => PromptId::EnumerateStructural,
            SemanticLevel::Secondary | SemanticLevel::Primary => PromptId::EnumerateGeneral,
        }
    }

    pub fn select_for(level: SemanticLevel) -> PromptId {
        match level {
            SemanticLevel::Distractor => PromptId::SelectDistractor,
            _ => PromptId::SelectGeneral,
        }
    }
}

impl std::str::FromStr for PromptId {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PromptId::ALL.into_iter().find(|id| id.name() == s).ok_or_else(|| PromptError::UnknownTemplate(s.to_string()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("missing binding for placeholder {0:?}")]
    MissingBinding(String),
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
    #[error("reading prompt override {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Placeholder names in order of first appearance.
pub fn placeholders(body: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for (start, end) in placeholder_spans(body) {
        let name = &body[start + 1..end - 1];
        if !out.iter().any(|n| n == name) {
            out.push(name.to_string());
        }
    }
    out
}

/// Byte spans of `{identifier}` tokens, braces included.
fn placeholder_spans(body: &str) -> Vec<(usize, usize)> {
    let bytes = body.as_bytes();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let mut j = i + 1;
            while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                j += 1;
            }
            if j > i + 1 && j < bytes.len() && bytes[j] == b'}' {
                spans.push((i, j + 1));
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    spans
}

/// Substitutes every placeholder; extra bindings are ignored.
pub fn render_template(body: &str, bindings: &BTreeMap<String, String>) -> Result<String, PromptError> {
    let mut out = String::with_capacity(body.len());
    let mut last = 0;
    for (start, end) in placeholder_spans(body) {
        let name = &body[start + 1..end - 1];
        let value = bindings.get(name).ok_or_else(|| PromptError::MissingBinding(name.to_string()))?;
        out.push_str(&body[last..start]);
        out.push_str(value);
        last = end;
    }
    out.push_str(&body[last..]);
    Ok(out)
}

/// Renders a built-in template.
pub fn render_prompt(id: PromptId, bindings: &BTreeMap<String, String>) -> Result<String, PromptError> {
    render_template(id.builtin(), bindings)
}

/// The template set in use: built-ins, optionally overridden per file from a
/// directory.
#[derive(Debug, Clone, Default)]
pub struct PromptSet {
    overrides: HashMap<PromptId, String>,
}

impl PromptSet {
    pub fn builtin() -> Self {
        Self::default()
    }

    /// Loads `<name>.txt` files found in `dir`; missing files keep the
    /// built-in text.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, PromptError> {
        let mut overrides = HashMap::new();
        for id in PromptId::ALL {
            let path = dir.as_ref().join(id.file_name());
            match std::fs::read_to_string(&path) {
                Ok(text) => {
                    overrides.insert(id, text);
                }
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(source) => {
                    return Err(PromptError::Io { path: path.display().to_string(), source });
                }
            }
        }
        Ok(Self { overrides })
    }

    pub fn body(&self, id: PromptId) -> &str {
        self.overrides.get(&id).map(String::as_str).unwrap_or_else(|| id.builtin())
    }

    pub fn render(&self, id: PromptId, bindings: &BTreeMap<String, String>) -> Result<String, PromptError> {
        render_template(self.body(id), bindings)
    }

    pub fn enumerate(&self, level: SemanticLevel) -> Result<String, PromptError> {
        let bindings = BTreeMap::from([("p_level".to_string(), level.as_str().to_string())]);
        self.render(PromptId::enumerate_for(level), &bindings)
    }

    pub fn select(&self, level: SemanticLevel, candidates: &[ElementCandidate]) -> Result<String, PromptError> {
        let bindings = BTreeMap::from([("list_of_objects".to_string(), serialize_candidates(candidates))]);
        self.render(PromptId::select_for(level), &bindings)
    }

    pub fn inpaint(&self, variation: EditVariation, object: &str) -> Result<String, PromptError> {
        let bindings = BTreeMap::from([("OBJECT".to_string(), object.to_string())]);
        self.render(variation.prompt(), &bindings)
    }
}

/// `(ID, name, description)` tuples joined by `, `.
pub fn serialize_candidates(candidates: &[ElementCandidate]) -> String {
    candidates.iter().map(|c| format!("({}, {}, {})", c.index, c.name, c.description)).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditVariation {
    Direct,
    Abstractive,
}

impl EditVariation {
    pub fn prompt(self) -> PromptId {
        match self {
            EditVariation::Direct => PromptId::InpaintDirect,
            EditVariation::Abstractive => PromptId::InpaintAbstractive,
        }
    }
}

/// How the inpainting prompt varies across the candidates of one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariationPolicy {
    Direct,
    Abstractive,
    /// Direct for even attempts, abstractive for odd ones.
    #[default]
    Alternate,
}

impl VariationPolicy {
    pub fn for_attempt(self, attempt: usize) -> EditVariation {
        match self {
            VariationPolicy::Direct => EditVariation::Direct,
            VariationPolicy::Abstractive => EditVariation::Abstractive,
            VariationPolicy::Alternate if attempt % 2 == 0 => EditVariation::Direct,
            VariationPolicy::Alternate => EditVariation::Abstractive,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bind(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn every_template_declares_expected_placeholders() {
        let expect = |id: PromptId| -> Vec<&str> {
            match id {
                PromptId::EnumerateGeneral => vec!["p_level"],
                PromptId::SelectDistractor | PromptId::SelectGeneral => vec!["list_of_objects"],
                PromptId::InpaintDirect | PromptId::InpaintAbstractive => vec!["OBJECT"],
                _ => vec![],
            }
        };
        for id in PromptId::ALL {
            assert_eq!(placeholders(id.builtin()), expect(id), "{}", id.name());
        }
    }

    #[test]
    fn direct_inpaint_names_the_object() {
        let text = render_prompt(PromptId::InpaintDirect, &bind(&[("OBJECT", "red mug")])).unwrap();
        assert!(text.contains("Remove from the given image only the red mug"));
        assert!(placeholders(&text).is_empty());
    }

    #[test]
    fn selection_ends_with_the_list() {
        let text = render_prompt(PromptId::SelectGeneral, &bind(&[("list_of_objects", "(0, cup, a cup)")])).unwrap();
        assert!(text.ends_with("The given list is: (0, cup, a cup)"));
    }

    #[test]
    fn missing_binding_names_placeholder() {
        let err = render_prompt(PromptId::EnumerateGeneral, &BTreeMap::new()).unwrap_err();
        assert!(err.to_string().contains("p_level"));
        assert!(matches!(err, PromptError::MissingBinding(ref n) if n == "p_level"));
    }

    #[test]
    fn level_template_mapping() {
        assert_eq!(PromptId::enumerate_for(SemanticLevel::Background), PromptId::EnumerateStructural);
        assert_eq!(PromptId::enumerate_for(SemanticLevel::Primary), PromptId::EnumerateGeneral);
        assert_eq!(PromptId::select_for(SemanticLevel::Distractor), PromptId::SelectDistractor);
        assert_eq!(PromptId::select_for(SemanticLevel::Secondary), PromptId::SelectGeneral);
        let text = PromptSet::builtin().enumerate(SemanticLevel::Secondary).unwrap();
        assert!(text.contains("all secondary elements"));
    }

    #[test]
    fn overrides_replace_single_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("inpaint_direct.txt"), "erase {OBJECT}").unwrap();
        let set = PromptSet::from_dir(dir.path()).unwrap();
        assert_eq!(set.inpaint(EditVariation::Direct, "cup").unwrap(), "erase cup");
        assert_eq!(set.body(PromptId::SelectGeneral), PromptId::SelectGeneral.builtin());
    }

    #[test]
    fn alternate_policy_cycles() {
        let p = VariationPolicy::Alternate;
        assert_eq!(p.for_attempt(0), EditVariation::Direct);
        assert_eq!(p.for_attempt(1), EditVariation::Abstractive);
        assert_eq!(p.for_attempt(4), EditVariation::Direct);
        assert_eq!(VariationPolicy::Abstractive.for_attempt(0), EditVariation::Abstractive);
    }

    #[test]
    fn ids_parse_by_name() {
        for id in PromptId::ALL {
            assert_eq!(id.name().parse::<PromptId>().unwrap(), id);
        }
        assert!("enumerate_other".parse::<PromptId>().is_err());
    }
}
