//! Domain types of the story instrument and the authoring operations that
//! build it up: premise, characters, scenes.
//!
//! Every derived state (situations, memories, prose) is stored materialized so
//! that it can be inspected, edited, and persisted alongside the writer's input.

use std::collections::BTreeSet;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::Coded;

/// Version written by this build. Loaders reject anything newer.
pub const SCHEMA_VERSION: u32 = 1;

pub const MIN_TEMPERATURE: f64 = 0.1;
pub const MAX_TEMPERATURE: f64 = 2.0;
pub const MAX_TRAIT_VALUE: u32 = 100;

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }
    };
}

string_id!(
    /// Project identifier (a UUID in practice).
    ProjectId
);
string_id!(
    /// Character identifier, unique within one instrument (`c1`, `c2`, ...).
    CharacterId
);
string_id!(
    /// Scene identifier, unique within one instrument (`s1`, `s2`, ...).
    SceneId
);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("premise text is empty")]
    EmptyPremise,
    #[error("character name is empty")]
    EmptyName,
    #[error("a character named {0:?} already exists")]
    DuplicateName(String),
    #[error("trait {name:?} has value {value}, expected 0..=100")]
    TraitOutOfRange { name: String, value: u32 },
    #[error("trait name is empty")]
    EmptyTraitName,
    #[error("trait {0:?} listed more than once")]
    DuplicateTraitName(String),
    #[error("unknown character {0}")]
    UnknownCharacter(CharacterId),
    #[error("unknown scene {0}")]
    UnknownScene(SceneId),
    #[error("scene needs at least one participant")]
    EmptyParticipants,
    #[error("initial situation is empty")]
    EmptySituation,
    #[error("character {0} still participates in beats or a draft of this scene")]
    ParticipantInUse(CharacterId),
    #[error("temperature {0} outside [0.1, 2.0]")]
    TemperatureOutOfRange(f64),
    #[error("context budget must be positive")]
    ZeroContextBudget,
}

impl Coded for ModelError {
    fn code(&self) -> &'static str {
        match self {
            ModelError::EmptyPremise => "EMPTY_PREMISE",
            ModelError::EmptyName => "EMPTY_NAME",
            ModelError::DuplicateName(_) => "DUPLICATE_NAME",
            ModelError::TraitOutOfRange { .. } => "TRAIT_OUT_OF_RANGE",
            ModelError::EmptyTraitName => "EMPTY_TRAIT_NAME",
            ModelError::DuplicateTraitName(_) => "DUPLICATE_TRAIT_NAME",
            ModelError::UnknownCharacter(_) => "UNKNOWN_CHARACTER",
            ModelError::UnknownScene(_) => "UNKNOWN_SCENE",
            ModelError::EmptyParticipants => "EMPTY_PARTICIPANTS",
            ModelError::EmptySituation => "EMPTY_SITUATION",
            ModelError::ParticipantInUse(_) => "PARTICIPANT_IN_USE",
            ModelError::TemperatureOutOfRange(_) => "TEMPERATURE_OUT_OF_RANGE",
            ModelError::ZeroContextBudget => "CONTEXT_BUDGET_ZERO",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adherence {
    Loose,
    Moderate,
    Strict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intensity {
    Restrained,
    Moderate,
    Vivid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetLength {
    Brief,
    Standard,
    Expansive,
}

impl TargetLength {
    /// Word-count range requested from the model for one prose segment.
    pub fn word_range(self) -> (u32, u32) {
        match self {
            TargetLength::Brief => (50, 120),
            TargetLength::Standard => (120, 300),
            TargetLength::Expansive => (300, 600),
        }
    }
}

/// Sampling and context settings captured with every generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub temperature: f64,
    pub adherence: Adherence,
    /// Approximate token budget for the prompt (characters / 4).
    pub context_budget: u32,
}

impl GenParams {
    pub fn new(temperature: f64, adherence: Adherence, context_budget: u32) -> Result<Self, ModelError> {
        let params = Self {
            temperature,
            adherence,
            context_budget,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        check_temperature(self.temperature)?;
        if self.context_budget == 0 {
            return Err(ModelError::ZeroContextBudget);
        }
        Ok(())
    }
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            adherence: Adherence::Moderate,
            context_budget: 6000,
        }
    }
}

pub fn check_temperature(temperature: f64) -> Result<(), ModelError> {
    // NaN fails both comparisons.
    if (MIN_TEMPERATURE..=MAX_TEMPERATURE).contains(&temperature) {
        Ok(())
    } else {
        Err(ModelError::TemperatureOutOfRange(temperature))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleParams {
    pub genre: String,
    pub style: String,
    pub intensity: Intensity,
    pub target_length: TargetLength,
}

impl Default for StyleParams {
    fn default() -> Self {
        Self {
            genre: "literary fiction".into(),
            style: "close third person, past tense".into(),
            intensity: Intensity::Moderate,
            target_length: TargetLength::Standard,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Premise {
    pub text: String,
    pub logline: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraitScale {
    pub name: String,
    pub value: u32,
}

impl TraitScale {
    pub fn new(name: impl Into<String>, value: u32) -> Self {
        Self {
            name: name.into(),
            value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MemorySource {
    pub scene: SceneId,
    pub beat_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Memory {
    pub source_scene: SceneId,
    pub source_beat_index: usize,
    pub text: String,
    pub stale: bool,
    /// Set on the synthetic summary produced by memory condensation.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub condensed: bool,
    /// Beats whose memories were folded into this summary.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub condensed_sources: Vec<MemorySource>,
}

impl Memory {
    pub fn source(&self) -> MemorySource {
        MemorySource {
            scene: self.source_scene.clone(),
            beat_index: self.source_beat_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Character {
    pub id: CharacterId,
    pub name: String,
    pub description: String,
    pub traits: Vec<TraitScale>,
    pub goals: Vec<String>,
    pub memories: Vec<Memory>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Simulated,
    Nudged,
    Manual,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Simulated => "simulated",
            Provenance::Nudged => "nudged",
            Provenance::Manual => "manual",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Derivation {
    Initial,
    ProviderUpdate,
    ManualOverride,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SituationState {
    pub text: String,
    pub stale: bool,
    pub derivation: Derivation,
}

/// Content of a beat before a manual edit replaced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeatRevision {
    pub text: String,
    pub provenance: Provenance,
    pub nudge_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Beat {
    pub index: usize,
    pub text: String,
    pub provenance: Provenance,
    pub nudge_text: Option<String>,
    pub participants: BTreeSet<CharacterId>,
    pub generation_params: Option<GenParams>,
    /// The situation this beat was applied to is stale.
    pub stale_downstream: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub edit_history: Vec<BeatRevision>,
}

/// One `(section, source path)` pair naming an instrument element that went
/// into a prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub section: String,
    pub source: String,
}

/// A generated or authored beat awaiting the writer's accept/reject decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DraftBeat {
    pub text: String,
    pub provenance: Provenance,
    pub nudge_text: Option<String>,
    pub proposed_participants: BTreeSet<CharacterId>,
    pub params: GenParams,
    pub source_bundle_manifest: Vec<ManifestEntry>,
    /// Writer text before polishing, kept for undo.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub authored_text: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentOrigin {
    Generated,
    ManuallyEdited,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProseSegment {
    pub beat_index: usize,
    pub text: String,
    pub origin: SegmentOrigin,
    pub stale: bool,
    /// Style used for the most recent generation of this segment.
    pub style: StyleParams,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProseDocument {
    pub scene_id: SceneId,
    pub style: StyleParams,
    pub segments: Vec<ProseSegment>,
    pub rendered_at: DateTime<Utc>,
    /// Beats changed since rendering.
    pub stale: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: SceneId,
    pub ordinal: u32,
    pub title: String,
    pub initial_situation: String,
    pub participants: BTreeSet<CharacterId>,
    pub beats: Vec<Beat>,
    pub situations: Vec<SituationState>,
    pub draft: Option<DraftBeat>,
    pub prose: Option<ProseDocument>,
}

impl Scene {
    /// The situation the next beat will be applied to.
    pub fn current_situation(&self) -> &SituationState {
        self.situations
            .last()
            .expect("a scene always holds its initial situation")
    }

    pub fn first_stale_situation(&self) -> Option<usize> {
        self.situations.iter().position(|s| s.stale)
    }

    pub fn has_stale_chain(&self) -> bool {
        self.first_stale_situation().is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoryInstrument {
    pub schema_version: u32,
    pub id: ProjectId,
    pub premise: Premise,
    pub style_defaults: StyleParams,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub characters: Vec<Character>,
    pub scenes: Vec<Scene>,
}

/// Fields a character edit may replace; `None` keeps the current value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CharacterPatch {
    pub name: Option<String>,
    pub description: Option<String>,
    pub traits: Option<Vec<TraitScale>>,
    pub goals: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScenePatch {
    pub title: Option<String>,
    pub initial_situation: Option<String>,
    pub participants: Option<BTreeSet<CharacterId>>,
}

pub fn create_instrument(premise_text: &str, style_defaults: StyleParams) -> Result<StoryInstrument, ModelError> {
    let text = premise_text.trim();
    if text.is_empty() {
        return Err(ModelError::EmptyPremise);
    }
    let now = Utc::now();
    Ok(StoryInstrument {
        schema_version: SCHEMA_VERSION,
        id: ProjectId(uuid::Uuid::new_v4().to_string()),
        premise: Premise {
            text: text.to_string(),
            logline: None,
        },
        style_defaults,
        created_at: now,
        updated_at: now,
        characters: Vec::new(),
        scenes: Vec::new(),
    })
}

fn check_traits(traits: &[TraitScale]) -> Result<(), ModelError> {
    let mut seen = BTreeSet::new();
    for t in traits {
        if t.name.trim().is_empty() {
            return Err(ModelError::EmptyTraitName);
        }
        if t.value > MAX_TRAIT_VALUE {
            return Err(ModelError::TraitOutOfRange {
                name: t.name.clone(),
                value: t.value,
            });
        }
        if !seen.insert(t.name.as_str()) {
            return Err(ModelError::DuplicateTraitName(t.name.clone()));
        }
    }
    Ok(())
}

fn next_id(prefix: char, existing: impl Iterator<Item = String>) -> String {
    let max = existing
        .filter_map(|id| id.strip_prefix(prefix).and_then(|n| n.parse::<u64>().ok()))
        .max()
        .unwrap_or(0);
    format!("{prefix}{}", max + 1)
}

impl StoryInstrument {
    pub fn touch(&mut self) {
        let now = Utc::now();
        // Keep updated_at monotone even if the wall clock steps back.
        self.updated_at = if now > self.updated_at { now } else { self.updated_at };
    }

    /// Short human title: the logline if set, else the premise's first line.
    pub fn title(&self) -> String {
        if let Some(l) = self.premise.logline.as_deref().filter(|l| !l.trim().is_empty()) {
            return l.trim().to_string();
        }
        let first = self.premise.text.lines().next().unwrap_or_default();
        let mut title: String = first.chars().take(80).collect();
        if first.chars().count() > 80 {
            title.push('…');
        }
        title
    }

    pub fn character(&self, id: &CharacterId) -> Option<&Character> {
        self.characters.iter().find(|c| &c.id == id)
    }

    pub fn character_mut(&mut self, id: &CharacterId) -> Option<&mut Character> {
        self.characters.iter_mut().find(|c| &c.id == id)
    }

    pub fn character_by_name(&self, name: &str) -> Option<&Character> {
        self.characters.iter().find(|c| c.name == name)
    }

    pub fn scene(&self, id: &SceneId) -> Option<&Scene> {
        self.scenes.iter().find(|s| &s.id == id)
    }

    pub fn scene_mut(&mut self, id: &SceneId) -> Option<&mut Scene> {
        self.scenes.iter_mut().find(|s| &s.id == id)
    }

    pub fn require_scene(&self, id: &SceneId) -> Result<&Scene, ModelError> {
        self.scene(id).ok_or_else(|| ModelError::UnknownScene(id.clone()))
    }

    pub fn scene_ordinal(&self, id: &SceneId) -> Option<u32> {
        self.scene(id).map(|s| s.ordinal)
    }

    /// Chronological sort key of a memory source. Unknown scenes sort last.
    pub fn memory_key(&self, scene: &SceneId, beat_index: usize) -> (u32, usize) {
        (self.scene_ordinal(scene).unwrap_or(u32::MAX), beat_index)
    }

    pub fn sort_memories(&mut self) {
        let ordinals: Vec<(SceneId, u32)> = self.scenes.iter().map(|s| (s.id.clone(), s.ordinal)).collect();
        let key = |m: &Memory| {
            let ord = ordinals
                .iter()
                .find(|(id, _)| id == &m.source_scene)
                .map_or(u32::MAX, |(_, o)| *o);
            (ord, m.source_beat_index)
        };
        for c in &mut self.characters {
            c.memories.sort_by_key(key);
        }
    }

    pub fn add_character(
        &mut self,
        name: &str,
        description: &str,
        traits: Vec<TraitScale>,
        goals: Vec<String>,
    ) -> Result<CharacterId, ModelError> {
        let name = name.trim();
        if name.is_empty() {
            return Err(ModelError::EmptyName);
        }
        if self.character_by_name(name).is_some() {
            return Err(ModelError::DuplicateName(name.to_string()));
        }
        check_traits(&traits)?;
        let id = CharacterId(next_id('c', self.characters.iter().map(|c| c.id.0.clone())));
        self.characters.push(Character {
            id: id.clone(),
            name: name.to_string(),
            description: description.to_string(),
            traits,
            goals,
            memories: Vec::new(),
        });
        self.touch();
        Ok(id)
    }

    pub fn edit_character(&mut self, id: &CharacterId, patch: CharacterPatch) -> Result<(), ModelError> {
        if self.character(id).is_none() {
            return Err(ModelError::UnknownCharacter(id.clone()));
        }
        let name = match &patch.name {
            Some(n) => {
                let n = n.trim();
                if n.is_empty() {
                    return Err(ModelError::EmptyName);
                }
                if self.characters.iter().any(|c| c.name == n && &c.id != id) {
                    return Err(ModelError::DuplicateName(n.to_string()));
                }
                Some(n.to_string())
            }
            None => None,
        };
        if let Some(traits) = &patch.traits {
            check_traits(traits)?;
        }
        let c = self.character_mut(id).expect("checked above");
        if let Some(n) = name {
            c.name = n;
        }
        if let Some(d) = patch.description {
            c.description = d;
        }
        if let Some(t) = patch.traits {
            c.traits = t;
        }
        if let Some(g) = patch.goals {
            c.goals = g;
        }
        self.touch();
        Ok(())
    }

    fn check_participants(&self, participants: &BTreeSet<CharacterId>) -> Result<(), ModelError> {
        if participants.is_empty() {
            return Err(ModelError::EmptyParticipants);
        }
        if let Some(unknown) = participants.iter().find(|id| self.character(id).is_none()) {
            return Err(ModelError::UnknownCharacter(unknown.clone()));
        }
        Ok(())
    }

    pub fn add_scene(
        &mut self,
        title: &str,
        initial_situation: &str,
        participants: BTreeSet<CharacterId>,
    ) -> Result<SceneId, ModelError> {
        self.check_participants(&participants)?;
        if initial_situation.trim().is_empty() {
            return Err(ModelError::EmptySituation);
        }
        let ordinal = self.scenes.iter().map(|s| s.ordinal + 1).max().unwrap_or(0);
        let id = SceneId(next_id('s', self.scenes.iter().map(|s| s.id.0.clone())));
        self.scenes.push(Scene {
            id: id.clone(),
            ordinal,
            title: title.to_string(),
            initial_situation: initial_situation.to_string(),
            participants,
            beats: Vec::new(),
            situations: vec![SituationState {
                text: initial_situation.to_string(),
                stale: false,
                derivation: Derivation::Initial,
            }],
            draft: None,
            prose: None,
        });
        self.touch();
        Ok(id)
    }

    /// Applies a scene edit. A new initial situation invalidates the whole
    /// chain downstream of it.
    pub fn edit_scene(&mut self, id: &SceneId, patch: ScenePatch) -> Result<(), ModelError> {
        let scene = self.require_scene(id)?;
        if let Some(p) = &patch.participants {
            self.check_participants(p)?;
            let used = scene
                .beats
                .iter()
                .flat_map(|b| b.participants.iter())
                .chain(scene.draft.iter().flat_map(|d| d.proposed_participants.iter()));
            for c in used {
                if !p.contains(c) {
                    return Err(ModelError::ParticipantInUse(c.clone()));
                }
            }
        }
        if let Some(s) = &patch.initial_situation {
            if s.trim().is_empty() {
                return Err(ModelError::EmptySituation);
            }
        }
        let changed_situation = patch
            .initial_situation
            .as_ref()
            .is_some_and(|s| s != &scene.initial_situation);
        let scene = self.scene_mut(id).expect("checked above");
        if let Some(t) = patch.title {
            scene.title = t;
        }
        if let Some(p) = patch.participants {
            scene.participants = p;
        }
        if let Some(s) = patch.initial_situation {
            scene.situations[0].text = s.clone();
            scene.initial_situation = s;
        }
        if changed_situation {
            self.invalidate_from(id, 0);
        }
        self.touch();
        Ok(())
    }

    /// Marks everything derived from beat `beat_index` onward as stale: the
    /// situations after it, the beats applied to those situations, memories
    /// sourced at or after it, and prose segments at or after it.
    pub(crate) fn invalidate_from(&mut self, scene_id: &SceneId, beat_index: usize) {
        let Some(scene) = self.scene_mut(scene_id) else {
            return;
        };
        for s in scene.situations.iter_mut().skip(beat_index + 1) {
            s.stale = true;
        }
        for b in scene.beats.iter_mut().skip(beat_index + 1) {
            b.stale_downstream = true;
        }
        if let Some(doc) = scene.prose.as_mut() {
            doc.stale = true;
            for seg in doc.segments.iter_mut().skip(beat_index) {
                seg.stale = true;
            }
        }
        for c in &mut self.characters {
            for m in &mut c.memories {
                if !m.condensed && &m.source_scene == scene_id && m.source_beat_index >= beat_index {
                    m.stale = true;
                }
            }
        }
    }
}
