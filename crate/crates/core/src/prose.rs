//! Prose rendering: one segment per accepted beat, regenerated or edited
//! segment by segment, and exported as plain text or markdown (`EXPORT.md`).

use chrono::Utc;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::Coded;
use crate::model::{
    ModelError, ProseDocument, ProseSegment, Scene, SceneId, SegmentOrigin, StoryInstrument, StyleParams,
};
use crate::prompt::{build_prose_prompt_with_previous, PromptError, PromptKind};
use crate::provider::{CompletionProvider, ProviderError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProseError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("scene has no beats to render")]
    EmptyScene,
    #[error("scene has stale situations; recompute before rendering")]
    ChainStale,
    #[error("scene has no prose document")]
    NoDocument,
    #[error("no prose segment for beat {0}")]
    UnknownBeat(usize),
    #[error("text is empty")]
    EmptyDraft,
    #[error("scene {scene} ({title:?}) has no rendered prose")]
    MissingProse { scene: SceneId, title: String },
}

impl Coded for ProseError {
    fn code(&self) -> &'static str {
        match self {
            ProseError::Model(e) => e.code(),
            ProseError::Prompt(e) => e.code(),
            ProseError::Provider(e) => e.code(),
            ProseError::EmptyScene => "EMPTY_SCENE",
            ProseError::ChainStale => "STALE_CHAIN",
            ProseError::NoDocument => "NO_DOCUMENT",
            ProseError::UnknownBeat(_) => "UNKNOWN_BEAT",
            ProseError::EmptyDraft => "EMPTY_DRAFT",
            ProseError::MissingProse { .. } => "MISSING_PROSE",
        }
    }
}

/// Whether regenerating a segment marks the segments after it stale.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContinuityMode {
    #[default]
    Loose,
    Strict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "scene", rename_all = "snake_case")]
pub enum ExportScope {
    Scene(SceneId),
    WholeStory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    Plain,
    Markdown,
}

fn generate(
    instr: &StoryInstrument,
    scene_id: &SceneId,
    beat_index: usize,
    style: &StyleParams,
    previous: Option<&str>,
    kind: PromptKind,
    provider: &dyn CompletionProvider,
) -> Result<String, ProseError> {
    let bundle = build_prose_prompt_with_previous(instr, scene_id, beat_index, style, previous, kind)?;
    let result = provider.complete(&bundle)?;
    Ok(result.text)
}

/// Renders every beat of the scene in order, each segment continuing from
/// the previous one. Replaces any earlier document; on failure nothing is
/// stored.
pub fn render_scene(
    instr: &mut StoryInstrument,
    scene_id: &SceneId,
    style: &StyleParams,
    provider: &dyn CompletionProvider,
) -> Result<ProseDocument, ProseError> {
    let scene = instr.require_scene(scene_id)?;
    if scene.beats.is_empty() {
        return Err(ProseError::EmptyScene);
    }
    if scene.has_stale_chain() {
        return Err(ProseError::ChainStale);
    }
    let mut segments: Vec<ProseSegment> = Vec::with_capacity(scene.beats.len());
    for i in 0..scene.beats.len() {
        let previous = segments.last().map(|s| s.text.as_str());
        let text = generate(instr, scene_id, i, style, previous, PromptKind::Prose, provider)?;
        segments.push(ProseSegment {
            beat_index: i,
            text,
            origin: SegmentOrigin::Generated,
            stale: false,
            style: style.clone(),
        });
    }
    let doc = ProseDocument {
        scene_id: scene_id.clone(),
        style: style.clone(),
        segments,
        rendered_at: Utc::now(),
        stale: false,
    };
    instr.scene_mut(scene_id).expect("looked up above").prose = Some(doc.clone());
    instr.touch();
    Ok(doc)
}

fn document<'a>(scene: &'a Scene, beat_index: usize) -> Result<&'a ProseDocument, ProseError> {
    let doc = scene.prose.as_ref().ok_or(ProseError::NoDocument)?;
    if beat_index >= doc.segments.len() || beat_index >= scene.beats.len() {
        return Err(ProseError::UnknownBeat(beat_index));
    }
    Ok(doc)
}

/// Regenerates one segment with `style`. Other segments keep their bytes;
/// in strict mode the later ones are flagged stale.
pub fn regenerate_segment(
    instr: &mut StoryInstrument,
    scene_id: &SceneId,
    beat_index: usize,
    style: &StyleParams,
    mode: ContinuityMode,
    provider: &dyn CompletionProvider,
) -> Result<(), ProseError> {
    let scene = instr.require_scene(scene_id)?;
    let doc = document(scene, beat_index)?;
    let previous = beat_index
        .checked_sub(1)
        .map(|i| doc.segments[i].text.as_str())
        .filter(|t| !t.trim().is_empty());
    let text = generate(instr, scene_id, beat_index, style, previous, PromptKind::ProseSegment, provider)?;
    let doc = instr
        .scene_mut(scene_id)
        .and_then(|s| s.prose.as_mut())
        .expect("looked up above");
    let seg = &mut doc.segments[beat_index];
    seg.text = text;
    seg.origin = SegmentOrigin::Generated;
    seg.stale = false;
    seg.style = style.clone();
    if mode == ContinuityMode::Strict {
        for later in doc.segments.iter_mut().skip(beat_index + 1) {
            later.stale = true;
        }
    }
    instr.touch();
    Ok(())
}

/// Writer edit of one segment. Never calls a provider.
pub fn edit_segment(
    instr: &mut StoryInstrument,
    scene_id: &SceneId,
    beat_index: usize,
    new_text: &str,
) -> Result<(), ProseError> {
    if new_text.trim().is_empty() {
        return Err(ProseError::EmptyDraft);
    }
    let scene = instr.require_scene(scene_id)?;
    document(scene, beat_index)?;
    let seg = &mut instr
        .scene_mut(scene_id)
        .and_then(|s| s.prose.as_mut())
        .expect("looked up above")
        .segments[beat_index];
    seg.text = new_text.to_string();
    seg.origin = SegmentOrigin::ManuallyEdited;
    seg.stale = false;
    instr.touch();
    Ok(())
}

fn escape_markdown(text: &str) -> String {
    text.lines()
        .map(|l| if l.starts_with('#') { format!("\\{l}") } else { l.to_string() })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Concatenates prose in beat order, scenes in ordinal order. Segments and
/// scenes are separated by one blank line and the output ends with a newline.
/// Markdown adds a level-1 heading with each scene's title.
pub fn export_document(
    instr: &StoryInstrument,
    scope: &ExportScope,
    format: ExportFormat,
) -> Result<String, ProseError> {
    let mut scenes: Vec<&Scene> = match scope {
        ExportScope::Scene(id) => vec![instr.require_scene(id)?],
        ExportScope::WholeStory => instr.scenes.iter().collect(),
    };
    scenes.sort_by_key(|s| s.ordinal);
    let mut parts = Vec::with_capacity(scenes.len());
    for s in scenes {
        let doc = s.prose.as_ref().ok_or_else(|| ProseError::MissingProse {
            scene: s.id.clone(),
            title: s.title.clone(),
        })?;
        let body = doc
            .segments
            .iter()
            .map(|seg| match format {
                ExportFormat::Plain => seg.text.clone(),
                ExportFormat::Markdown => escape_markdown(&seg.text),
            })
            .collect::<Vec<_>>()
            .join("\n\n");
        parts.push(match format {
            ExportFormat::Plain => body,
            ExportFormat::Markdown => {
                let title = if s.title.trim().is_empty() { s.id.as_str() } else { s.title.trim() };
                format!("# {}\n\n{body}", title.replace('\n', " "))
            }
        });
    }
    if parts.is_empty() {
        return Ok(String::new());
    }
    let mut out = parts.join("\n\n");
    out.push('\n');
    Ok(out)
}
