//! Deterministic prompt assembly.
//!
//! A prompt is a list of [`PromptElement`]s, each one naming the instrument
//! element it came from. The user text is rendered from those elements in
//! fixed blocks:
//!
//! ```text
//! <<<PREMISE>>>
//! ...
//!
//! <<<CHARACTER>>>
//! Name: Bob
//! ...
//! ```
//!
//! Writer-supplied text never contains the `<<<` block delimiter; it is
//! escaped to `<<\<` on the way in, so [`parse_blocks`] always recovers the
//! block structure.

mod build;
mod templates;
mod truncate;

pub use build::{
    build_memory_condense_prompt, build_nudge_prompt, build_polish_prompt, build_prose_prompt,
    build_prose_prompt_with_previous, build_simulation_prompt, build_situation_update_prompt,
};
pub use templates::TEMPLATE_VERSION;
pub use truncate::{estimate_tokens, truncate_context};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::Coded;
use crate::model::{GenParams, ManifestEntry, ModelError, SceneId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Simulate,
    Nudge,
    Polish,
    SituationUpdate,
    Prose,
    ProseSegment,
    MemoryCondense,
}

impl PromptKind {
    pub const ALL: [PromptKind; 7] = [
        PromptKind::Simulate,
        PromptKind::Nudge,
        PromptKind::Polish,
        PromptKind::SituationUpdate,
        PromptKind::Prose,
        PromptKind::ProseSegment,
        PromptKind::MemoryCondense,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::Simulate => "simulate",
            PromptKind::Nudge => "nudge",
            PromptKind::Polish => "polish",
            PromptKind::SituationUpdate => "situation_update",
            PromptKind::Prose => "prose",
            PromptKind::ProseSegment => "prose_segment",
            PromptKind::MemoryCondense => "memory_condense",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

/// What an element is, which decides whether truncation may drop it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementRole {
    Premise,
    Name,
    Description,
    Trait,
    Goal,
    Memory,
    Situation,
    PriorBeat,
    Beat,
    Nudge,
    Draft,
    PreviousProse,
    Style,
    Instruction,
}

impl ElementRole {
    /// Drop priority for truncation, lowest dropped first. `None` is never
    /// dropped.
    pub fn drop_priority(self) -> Option<u8> {
        match self {
            ElementRole::PriorBeat => Some(0),
            ElementRole::Memory => Some(1),
            ElementRole::Description => Some(2),
            _ => None,
        }
    }

    fn label(self) -> Option<&'static str> {
        match self {
            ElementRole::Trait => Some("Traits:"),
            ElementRole::Goal => Some("Goals:"),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptElement {
    /// Consecutive elements with the same block number share one header.
    pub block: u32,
    pub block_title: String,
    pub role: ElementRole,
    pub section: String,
    pub source: String,
    /// Rendered line(s), already escaped.
    pub text: String,
}

impl PromptElement {
    pub fn manifest_entry(&self) -> ManifestEntry {
        ManifestEntry {
            section: self.section.clone(),
            source: self.source.clone(),
        }
    }
}

/// A fully assembled provider request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub kind: PromptKind,
    pub system_text: String,
    pub user_text: String,
    pub params: GenParams,
    pub debug_manifest: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped_sections: Vec<ManifestEntry>,
    /// Manifest entries for the system text (template sources).
    pub system_manifest: Vec<ManifestEntry>,
    pub elements: Vec<PromptElement>,
}

impl PromptBundle {
    pub(crate) fn assemble(
        kind: PromptKind,
        system_manifest: Vec<ManifestEntry>,
        system_text: String,
        elements: Vec<PromptElement>,
        params: GenParams,
    ) -> Self {
        let mut bundle = Self {
            kind,
            system_text,
            user_text: String::new(),
            params,
            debug_manifest: Vec::new(),
            dropped_sections: Vec::new(),
            system_manifest,
            elements,
        };
        bundle.rerender();
        bundle
    }

    pub(crate) fn rerender(&mut self) {
        self.user_text = render_user_text(&self.elements);
        self.debug_manifest = self
            .system_manifest
            .iter()
            .cloned()
            .chain(self.elements.iter().map(PromptElement::manifest_entry))
            .collect();
    }

    /// Texts of the elements with the given section name, in prompt order.
    pub fn section_texts(&self, section: &str) -> Vec<&str> {
        self.elements
            .iter()
            .filter(|e| e.section == section)
            .map(|e| e.text.as_str())
            .collect()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("unknown scene {0}")]
    UnknownScene(SceneId),
    #[error("scene has no beat {0}")]
    UnknownBeat(usize),
    #[error("scene has stale situations; recompute the chain first")]
    StaleChain,
    #[error("beat {0} sits downstream of an unrecomputed edit")]
    UpstreamStale(usize),
    #[error("nudge text is empty")]
    EmptyNudge,
    #[error("draft text is empty")]
    EmptyDraft,
    #[error("situation or beat text is empty")]
    EmptyInput,
    #[error("protected prompt content needs {needed} tokens, budget is {budget}")]
    BudgetUnsatisfiable { needed: usize, budget: usize },
    #[error(transparent)]
    InvalidParams(#[from] ModelError),
}

impl Coded for PromptError {
    fn code(&self) -> &'static str {
        match self {
            PromptError::UnknownScene(_) => "UNKNOWN_SCENE",
            PromptError::UnknownBeat(_) => "UNKNOWN_BEAT",
            PromptError::StaleChain => "STALE_CHAIN",
            PromptError::UpstreamStale(_) => "UPSTREAM_STALE",
            PromptError::EmptyNudge => "EMPTY_NUDGE",
            PromptError::EmptyDraft => "EMPTY_DRAFT",
            PromptError::EmptyInput => "EMPTY_INPUT",
            PromptError::BudgetUnsatisfiable { .. } => "BUDGET_UNSATISFIABLE",
            PromptError::InvalidParams(e) => e.code(),
        }
    }
}

pub const DELIMITER: &str = "<<<";

/// Escapes the block delimiter inside writer-supplied text.
pub fn escape(text: &str) -> String {
    text.replace(DELIMITER, "<<\\<")
}

pub(crate) fn render_user_text(elements: &[PromptElement]) -> String {
    let mut out = String::new();
    let mut current = None;
    let mut last_label = None;
    for e in elements {
        if current != Some(e.block) {
            if current.is_some() {
                out.push('\n');
            }
            out.push_str(DELIMITER);
            out.push_str(&e.block_title);
            out.push_str(">>>\n");
            current = Some(e.block);
            last_label = None;
        }
        if let Some(label) = e.role.label() {
            if last_label != Some(label) {
                out.push_str(label);
                out.push('\n');
                last_label = Some(label);
            }
        }
        out.push_str(&e.text);
        out.push('\n');
    }
    out
}

/// Splits rendered user text back into `(block title, body)` pairs.
pub fn parse_blocks(user_text: &str) -> Vec<(String, String)> {
    let mut blocks: Vec<(String, String)> = Vec::new();
    for line in user_text.split_inclusive('\n') {
        let bare = line.trim_end_matches('\n');
        if let Some(title) = bare.strip_prefix(DELIMITER).and_then(|t| t.strip_suffix(">>>")) {
            blocks.push((title.to_string(), String::new()));
        } else if let Some((_, body)) = blocks.last_mut() {
            body.push_str(line);
        }
    }
    for (_, body) in &mut blocks {
        while body.ends_with('\n') {
            body.pop();
        }
    }
    blocks
}
