//! Prompt template catalog keyed by prompt id, with `{placeholder}`
//! substitution. Literal JSON braces in templates (`{"bbox": ...}`) are left
//! alone because only `{identifier}` forms are placeholders.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Result, ToolError};

pub const DECOMPOSE: &str = "decompose";
pub const AGENT_ROUND: &str = "agent_round";
pub const FORCE_ANSWER: &str = "force_answer";
pub const FINAL_TARGET: &str = "final_target";
pub const VERIFY: &str = "verify";
pub const REPAIR: &str = "repair";
pub const APPEARANCE: &str = "appearance";
pub const DIRECT_GROUND: &str = "direct_ground";
pub const DETECT: &str = "detect";
pub const SALIENCY: &str = "saliency";
pub const SCORE_CANDIDATE: &str = "score_candidate";
pub const REF_MATCH: &str = "ref_match";
pub const JOINT_RANK: &str = "joint_rank";
pub const VISUAL_REPAIR: &str = "visual_repair";
pub const OPTION_RESOLVE: &str = "option_resolve";
pub const GROUNDED_SELECT: &str = "grounded_select";

const BUILTIN: [(&str, &str); 16] = [
    (DECOMPOSE, include_str!("../prompts/decompose.txt")),
    (AGENT_ROUND, include_str!("../prompts/agent_round.txt")),
    (FORCE_ANSWER, include_str!("../prompts/force_answer.txt")),
    (FINAL_TARGET, include_str!("../prompts/final_target.txt")),
    (VERIFY, include_str!("../prompts/verify.txt")),
    (REPAIR, include_str!("../prompts/repair.txt")),
    (APPEARANCE, include_str!("../prompts/appearance.txt")),
    (DIRECT_GROUND, include_str!("../prompts/direct_ground.txt")),
    (DETECT, include_str!("../prompts/detect.txt")),
    (SALIENCY, include_str!("../prompts/saliency.txt")),
    (SCORE_CANDIDATE, include_str!("../prompts/score_candidate.txt")),
    (REF_MATCH, include_str!("../prompts/ref_match.txt")),
    (JOINT_RANK, include_str!("../prompts/joint_rank.txt")),
    (VISUAL_REPAIR, include_str!("../prompts/visual_repair.txt")),
    (OPTION_RESOLVE, include_str!("../prompts/option_resolve.txt")),
    (GROUNDED_SELECT, include_str!("../prompts/grounded_select.txt")),
];

#[derive(Debug, Clone)]
pub struct PromptCatalog {
    templates: BTreeMap<String, String>,
}

impl Default for PromptCatalog {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptCatalog {
    pub fn builtin() -> Self {
        Self {
            templates: BUILTIN
                .iter()
                .map(|(k, v)| (k.to_string(), v.trim_end().to_string()))
                .collect(),
        }
    }

    /// Built-in catalog with any `<prompt_id>.txt` in `dir` taking precedence.
    pub fn with_overrides(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut cat = Self::builtin();
        let entries = std::fs::read_dir(dir)
            .map_err(|e| ToolError::Config(format!("prompt dir {}: {e}", dir.display())))?;
        for entry in entries.flatten() {
            let path = entry.path();
            if path.extension().is_some_and(|e| e == "txt") {
                let id = path.file_stem().unwrap_or_default().to_string_lossy().to_string();
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| ToolError::Config(format!("{}: {e}", path.display())))?;
                cat.templates.insert(id, text.trim_end().to_string());
            }
        }
        Ok(cat)
    }

    pub fn template(&self, id: &str) -> Option<&str> {
        self.templates.get(id).map(String::as_str)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    /// Substitute every placeholder. A placeholder left without a value is
    /// a configuration error.
    pub fn render(&self, id: &str, values: &[(&str, &str)]) -> Result<String> {
        let template = self
            .template(id)
            .ok_or_else(|| ToolError::Config(format!("unknown prompt id {id:?}")))?;
        render_template(template, values)
            .map_err(|name| ToolError::Config(format!("prompt {id}: no value for {{{name}}}")))
    }
}

/// Names of all `{identifier}` placeholders in order of appearance.
pub fn placeholders(template: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        let after = &rest[start + 1..];
        match placeholder_at(after) {
            Some(name) => {
                if !out.iter().any(|n| n == name) {
                    out.push(name.to_string());
                }
                rest = &after[name.len() + 1..];
            }
            None => rest = after,
        }
    }
    out
}

fn placeholder_at(s: &str) -> Option<&str> {
    let end = s.find('}')?;
    let name = &s[..end];
    let valid = !name.is_empty()
        && name.starts_with(|c: char| c.is_ascii_lowercase())
        && name
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_');
    valid.then_some(name)
}

fn render_template(template: &str, values: &[(&str, &str)]) -> std::result::Result<String, String> {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        match placeholder_at(after) {
            Some(name) => {
                let value = values
                    .iter()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| name.to_string())?;
                out.push_str(value);
                rest = &after[name.len() + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}
