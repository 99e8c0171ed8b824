//! The excavation loop: draft beats by simulation, nudging or manual
//! authoring; accept them into the scene's chain; edit, invalidate and
//! recompute downstream state.
//!
//! Chain bookkeeping: `situations[0]` is the writer's initial situation and
//! `situations[t + 1]` is the state after `beats[t]`. Every accepted beat
//! leaves one memory with each of its participants, holding the beat text.

use std::collections::BTreeSet;

use regex::RegexBuilder;
use thiserror::Error;

use crate::error::Coded;
use crate::model::{
    Beat, BeatRevision, CharacterId, Derivation, DraftBeat, GenParams, Memory, ModelError, Provenance, Scene,
    SceneId, SituationState, StoryInstrument,
};
use crate::prompt::{
    build_memory_condense_prompt, build_nudge_prompt, build_polish_prompt, build_simulation_prompt,
    build_situation_update_prompt, PromptBundle, PromptError,
};
use crate::provider::{CompletionProvider, CompletionResult, ProviderError};

/// Memories kept verbatim by [`condense_memories`] unless told otherwise.
pub const DEFAULT_CONDENSE_KEEP: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Provider(ProviderError),
    #[error("a draft beat is already pending for this scene")]
    DraftAlreadyPending,
    #[error("no draft beat is pending for this scene")]
    NoPendingDraft,
    #[error("the provider returned an empty beat")]
    EmptyGeneration,
    #[error("text is empty")]
    EmptyDraft,
    #[error("scene has no beat {0}")]
    UnknownBeat(usize),
    #[error("no provider is configured")]
    ProviderUnavailable,
    #[error("no stale situations to recompute")]
    NothingToRecompute,
    #[error("character {0} does not participate in this scene")]
    ParticipantNotInScene(CharacterId),
    #[error("situation position {0} cannot be overridden")]
    InvalidSituationPosition(usize),
}

impl From<ProviderError> for EngineError {
    fn from(e: ProviderError) -> Self {
        match e {
            ProviderError::EmptyCompletion => EngineError::EmptyGeneration,
            other => EngineError::Provider(other),
        }
    }
}

impl Coded for EngineError {
    fn code(&self) -> &'static str {
        match self {
            EngineError::Model(e) => e.code(),
            EngineError::Prompt(e) => e.code(),
            EngineError::Provider(e) => e.code(),
            EngineError::DraftAlreadyPending => "DRAFT_ALREADY_PENDING",
            EngineError::NoPendingDraft => "NO_PENDING_DRAFT",
            EngineError::EmptyGeneration => "EMPTY_GENERATION",
            EngineError::EmptyDraft => "EMPTY_DRAFT",
            EngineError::UnknownBeat(_) => "UNKNOWN_BEAT",
            EngineError::ProviderUnavailable => "PROVIDER_UNAVAILABLE",
            EngineError::NothingToRecompute => "NOTHING_TO_RECOMPUTE",
            EngineError::ParticipantNotInScene(_) => "PARTICIPANT_NOT_IN_SCENE",
            EngineError::InvalidSituationPosition(_) => "INVALID_SITUATION_POSITION",
        }
    }
}

fn scene<'a>(instr: &'a StoryInstrument, id: &SceneId) -> Result<&'a Scene, EngineError> {
    Ok(instr.require_scene(id)?)
}

fn scene_mut<'a>(instr: &'a mut StoryInstrument, id: &SceneId) -> Result<&'a mut Scene, EngineError> {
    instr
        .scene_mut(id)
        .ok_or_else(|| ModelError::UnknownScene(id.clone()).into())
}

fn call(provider: &dyn CompletionProvider, bundle: &PromptBundle) -> Result<CompletionResult, EngineError> {
    let result = provider.complete(bundle)?;
    if result.text.trim().is_empty() {
        return Err(EngineError::EmptyGeneration);
    }
    Ok(result)
}

/// Scene participants whose name appears in `text` as a whole word, ignoring
/// case. Falls back to every participant when nobody is named.
pub fn detect_participants(instr: &StoryInstrument, scene: &Scene, text: &str) -> BTreeSet<CharacterId> {
    let named: BTreeSet<CharacterId> = instr
        .characters
        .iter()
        .filter(|c| scene.participants.contains(&c.id))
        .filter(|c| {
            RegexBuilder::new(&format!(r"\b{}\b", regex::escape(&c.name)))
                .case_insensitive(true)
                .build()
                .is_ok_and(|re| re.is_match(text))
        })
        .map(|c| c.id.clone())
        .collect();
    if named.is_empty() {
        scene.participants.clone()
    } else {
        named
    }
}

fn ready_for_draft(instr: &StoryInstrument, scene_id: &SceneId) -> Result<(), EngineError> {
    let s = scene(instr, scene_id)?;
    if s.draft.is_some() {
        return Err(EngineError::DraftAlreadyPending);
    }
    if s.has_stale_chain() {
        return Err(PromptError::StaleChain.into());
    }
    Ok(())
}

fn store_draft(instr: &mut StoryInstrument, scene_id: &SceneId, draft: DraftBeat) -> Result<DraftBeat, EngineError> {
    scene_mut(instr, scene_id)?.draft = Some(draft.clone());
    Ok(draft)
}

/// Lets the model role-play the scene's characters to propose the next beat.
pub fn simulate_next_beat(
    instr: &mut StoryInstrument,
    scene_id: &SceneId,
    params: &GenParams,
    provider: &dyn CompletionProvider,
) -> Result<DraftBeat, EngineError> {
    ready_for_draft(instr, scene_id)?;
    let bundle = build_simulation_prompt(instr, scene_id, params)?;
    let result = call(provider, &bundle)?;
    let proposed = detect_participants(instr, scene(instr, scene_id)?, &result.text);
    let draft = DraftBeat {
        text: result.text,
        provenance: Provenance::Simulated,
        nudge_text: None,
        proposed_participants: proposed,
        params: params.clone(),
        source_bundle_manifest: bundle.debug_manifest,
        authored_text: None,
    };
    store_draft(instr, scene_id, draft)
}

/// Like [`simulate_next_beat`], steering the beat toward a writer-given
/// outcome.
pub fn nudge_next_beat(
    instr: &mut StoryInstrument,
    scene_id: &SceneId,
    nudge_text: &str,
    params: &GenParams,
    provider: &dyn CompletionProvider,
) -> Result<DraftBeat, EngineError> {
    if nudge_text.trim().is_empty() {
        return Err(PromptError::EmptyNudge.into());
    }
    ready_for_draft(instr, scene_id)?;
    let bundle = build_nudge_prompt(instr, scene_id, nudge_text, params)?;
    let result = call(provider, &bundle)?;
    let proposed = detect_participants(instr, scene(instr, scene_id)?, &result.text);
    let draft = DraftBeat {
        text: result.text,
        provenance: Provenance::Nudged,
        nudge_text: Some(nudge_text.to_string()),
        proposed_participants: proposed,
        params: params.clone(),
        source_bundle_manifest: bundle.debug_manifest,
        authored_text: None,
    };
    store_draft(instr, scene_id, draft)
}

/// A writer-authored beat, optionally polished by the model. The provider is
/// only needed when `polish` is set.
pub fn author_beat(
    instr: &mut StoryInstrument,
    scene_id: &SceneId,
    text: &str,
    polish: bool,
    params: &GenParams,
    provider: Option<&dyn CompletionProvider>,
) -> Result<DraftBeat, EngineError> {
    if text.trim().is_empty() {
        return Err(EngineError::EmptyDraft);
    }
    params.validate()?;
    ready_for_draft(instr, scene_id)?;
    let (final_text, authored_text, manifest) = if polish {
        let provider = provider.ok_or(EngineError::ProviderUnavailable)?;
        let mut bundle = build_polish_prompt(text, &instr.style_defaults)?;
        bundle.params = params.clone();
        let result = call(provider, &bundle)?;
        (result.text, Some(text.to_string()), bundle.debug_manifest)
    } else {
        (text.trim().to_string(), None, Vec::new())
    };
    let proposed = detect_participants(instr, scene(instr, scene_id)?, &final_text);
    let draft = DraftBeat {
        text: final_text,
        provenance: Provenance::Manual,
        nudge_text: None,
        proposed_participants: proposed,
        params: params.clone(),
        source_bundle_manifest: manifest,
        authored_text,
    };
    store_draft(instr, scene_id, draft)
}

/// Writer override of who takes part in the pending draft.
pub fn set_draft_participants(
    instr: &mut StoryInstrument,
    scene_id: &SceneId,
    participants: BTreeSet<CharacterId>,
) -> Result<(), EngineError> {
    let s = scene_mut(instr, scene_id)?;
    if participants.is_empty() {
        return Err(ModelError::EmptyParticipants.into());
    }
    if let Some(c) = participants.iter().find(|c| !s.participants.contains(c)) {
        return Err(EngineError::ParticipantNotInScene(c.clone()));
    }
    let draft = s.draft.as_mut().ok_or(EngineError::NoPendingDraft)?;
    draft.proposed_participants = participants;
    Ok(())
}

/// Commits the pending draft: appends the beat, the situation it produces,
/// and a memory for each participant. The situation update is fetched before
/// anything changes, so a provider failure leaves the instrument untouched.
pub fn accept_beat(
    instr: &mut StoryInstrument,
    scene_id: &SceneId,
    provider: &dyn CompletionProvider,
) -> Result<usize, EngineError> {
    let s = scene(instr, scene_id)?;
    let draft = s.draft.clone().ok_or(EngineError::NoPendingDraft)?;
    if s.has_stale_chain() {
        return Err(PromptError::StaleChain.into());
    }
    let mut bundle = build_situation_update_prompt(&s.current_situation().text, &draft.text)?;
    bundle.params = draft.params.clone();
    let update = call(provider, &bundle)?;

    let participants = if draft.proposed_participants.is_empty() {
        s.participants.clone()
    } else {
        draft.proposed_participants.clone()
    };
    let generated = draft.provenance != Provenance::Manual || draft.authored_text.is_some();
    let s = scene_mut(instr, scene_id)?;
    let index = s.beats.len();
    s.beats.push(Beat {
        index,
        text: draft.text.clone(),
        provenance: draft.provenance,
        nudge_text: draft.nudge_text.clone(),
        participants: participants.clone(),
        generation_params: generated.then(|| draft.params.clone()),
        stale_downstream: false,
        edit_history: Vec::new(),
    });
    s.situations.push(SituationState {
        text: update.text,
        stale: false,
        derivation: Derivation::ProviderUpdate,
    });
    s.draft = None;
    if let Some(doc) = s.prose.as_mut() {
        doc.stale = true;
    }
    for c in instr.characters.iter_mut().filter(|c| participants.contains(&c.id)) {
        c.memories.push(Memory {
            source_scene: scene_id.clone(),
            source_beat_index: index,
            text: draft.text.clone(),
            stale: false,
            condensed: false,
            condensed_sources: Vec::new(),
        });
    }
    instr.sort_memories();
    instr.touch();
    Ok(index)
}

/// Discards the pending draft without a trace.
pub fn reject_beat(instr: &mut StoryInstrument, scene_id: &SceneId) -> Result<(), EngineError> {
    let s = scene_mut(instr, scene_id)?;
    s.draft.take().ok_or(EngineError::NoPendingDraft)?;
    Ok(())
}

/// Replaces a beat's text. Everything derived downstream of it becomes stale
/// until [`recompute_chain`] runs, even if the text did not change.
pub fn edit_beat(
    instr: &mut StoryInstrument,
    scene_id: &SceneId,
    beat_index: usize,
    new_text: &str,
) -> Result<(), EngineError> {
    if new_text.trim().is_empty() {
        return Err(EngineError::EmptyDraft);
    }
    let s = scene_mut(instr, scene_id)?;
    let beat = s.beats.get_mut(beat_index).ok_or(EngineError::UnknownBeat(beat_index))?;
    beat.edit_history.push(BeatRevision {
        text: std::mem::replace(&mut beat.text, new_text.to_string()),
        provenance: beat.provenance,
        nudge_text: beat.nudge_text.take(),
    });
    beat.provenance = Provenance::Manual;
    for c in &mut instr.characters {
        for m in &mut c.memories {
            if !m.condensed && &m.source_scene == scene_id && m.source_beat_index == beat_index {
                m.text = new_text.to_string();
            }
        }
    }
    instr.invalidate_from(scene_id, beat_index);
    instr.touch();
    Ok(())
}

/// Writer-authored replacement for a derived situation (`position >= 1`).
pub fn override_situation(
    instr: &mut StoryInstrument,
    scene_id: &SceneId,
    position: usize,
    text: &str,
) -> Result<(), EngineError> {
    if text.trim().is_empty() {
        return Err(EngineError::EmptyDraft);
    }
    let s = scene_mut(instr, scene_id)?;
    if position == 0 || position >= s.situations.len() {
        return Err(EngineError::InvalidSituationPosition(position));
    }
    s.situations[position] = SituationState {
        text: text.to_string(),
        stale: false,
        derivation: Derivation::ManualOverride,
    };
    if let Some(b) = s.beats.get_mut(position) {
        b.stale_downstream = false;
    }
    instr.invalidate_from(scene_id, position);
    instr.touch();
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecomputeOutcome {
    pub recomputed: usize,
    /// Set when the provider failed part-way; the remaining positions are
    /// still stale and a later call resumes there.
    pub failure: Option<EngineError>,
}

/// Re-derives every stale situation in ascending order, refreshing the
/// memories of the beats involved.
pub fn recompute_chain(
    instr: &mut StoryInstrument,
    scene_id: &SceneId,
    provider: &dyn CompletionProvider,
) -> Result<RecomputeOutcome, EngineError> {
    let first = scene(instr, scene_id)?
        .first_stale_situation()
        .ok_or(EngineError::NothingToRecompute)?;
    let mut recomputed = 0;
    let len = scene(instr, scene_id)?.situations.len();
    for position in first..len {
        let s = scene(instr, scene_id)?;
        if !s.situations[position].stale {
            continue;
        }
        let beat = &s.beats[position - 1];
        let attempt = build_situation_update_prompt(&s.situations[position - 1].text, &beat.text)
            .map_err(EngineError::from)
            .and_then(|mut bundle| {
                bundle.params = beat.generation_params.clone().unwrap_or_default();
                call(provider, &bundle)
            });
        let update = match attempt {
            Ok(u) => u,
            Err(e) => {
                if recomputed > 0 {
                    instr.touch();
                }
                return Ok(RecomputeOutcome {
                    recomputed,
                    failure: Some(e),
                });
            }
        };
        let s = scene_mut(instr, scene_id)?;
        s.situations[position] = SituationState {
            text: update.text,
            stale: false,
            derivation: Derivation::ProviderUpdate,
        };
        if let Some(b) = s.beats.get_mut(position) {
            b.stale_downstream = false;
        }
        let beat_text = s.beats[position - 1].text.clone();
        for c in &mut instr.characters {
            for m in &mut c.memories {
                if !m.condensed && &m.source_scene == scene_id && m.source_beat_index == position - 1 {
                    m.text = beat_text.clone();
                    m.stale = false;
                }
            }
        }
        recomputed += 1;
    }
    instr.touch();
    Ok(RecomputeOutcome {
        recomputed,
        failure: None,
    })
}

/// Folds all but the `keep_recent` newest memories of a character into one
/// provider-written summary. Returns whether anything changed.
pub fn condense_memories(
    instr: &mut StoryInstrument,
    character_id: &CharacterId,
    keep_recent: usize,
    provider: &dyn CompletionProvider,
) -> Result<bool, EngineError> {
    let c = instr
        .character(character_id)
        .ok_or_else(|| ModelError::UnknownCharacter(character_id.clone()))?;
    if c.memories.len() <= keep_recent {
        return Ok(false);
    }
    let cut = c.memories.len() - keep_recent;
    let old = &c.memories[..cut];
    let bundle = build_memory_condense_prompt(instr, c, old);
    let summary = call(provider, &bundle)?;
    let covered = old
        .iter()
        .flat_map(|m| {
            if m.condensed {
                m.condensed_sources.clone()
            } else {
                vec![m.source()]
            }
        })
        .collect();
    let synthetic = Memory {
        source_scene: old[0].source_scene.clone(),
        source_beat_index: old[0].source_beat_index,
        text: summary.text,
        stale: false,
        condensed: true,
        condensed_sources: covered,
    };
    let c = instr.character_mut(character_id).expect("looked up above");
    let recent = c.memories.split_off(cut);
    c.memories = std::iter::once(synthetic).chain(recent).collect();
    instr.touch();
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::format::serialize;
    use crate::model::*;
    use crate::prompt::PromptKind;
    use crate::provider::{ScriptedFailure, ScriptedProvider, ScriptedResponses};

    const SIM: &str = "Bob, who is a taciturn man, lets go of the milk carton and immediately slinks off.";
    const NUDGED: &str = "Bob overcomes his bashfulness and twists the carton out of Alice's hands.";

    fn milk() -> (StoryInstrument, SceneId, CharacterId, CharacterId) {
        let mut instr = create_instrument("Strangers at a supermarket", StyleParams::default()).unwrap();
        let alice = instr.add_character("Alice", "", vec![], vec![]).unwrap();
        let bob = instr
            .add_character("Bob", "", vec![TraitScale::new("taciturnity", 90)], vec!["avoid conflict".into()])
            .unwrap();
        let sid = instr
            .add_scene(
                "Checkout",
                "Two shoppers fighting over the last milk carton",
                [alice.clone(), bob.clone()].into(),
            )
            .unwrap();
        (instr, sid, alice, bob)
    }

    fn scripted(pairs: &[(PromptKind, &str)]) -> ScriptedProvider {
        let mut s = ScriptedResponses::new();
        for (k, t) in pairs {
            s.push(*k, *t);
        }
        ScriptedProvider::new(s)
    }

    fn echo_updates() -> ScriptedProvider {
        ScriptedProvider::new(ScriptedResponses::new()).with_responder(PromptKind::SituationUpdate, |b| {
            Ok(format!("after: {}", b.section_texts("beat")[0]))
        })
    }

    fn add_beats(instr: &mut StoryInstrument, sid: &SceneId, texts: &[&str], p: &ScriptedProvider) {
        for t in texts {
            author_beat(instr, sid, t, false, &GenParams::default(), None).unwrap();
            accept_beat(instr, sid, p).unwrap();
        }
    }

    #[test]
    fn simulate_detects_named_participant() {
        let (mut instr, sid, _, bob) = milk();
        let p = scripted(&[(PromptKind::Simulate, SIM)]);
        let d = simulate_next_beat(&mut instr, &sid, &GenParams::default(), &p).unwrap();
        assert_eq!(d.text, SIM);
        assert_eq!(d.provenance, Provenance::Simulated);
        assert_eq!(d.proposed_participants, [bob].into());
        assert!(!d.source_bundle_manifest.is_empty());
        assert_eq!(
            simulate_next_beat(&mut instr, &sid, &GenParams::default(), &p),
            Err(EngineError::DraftAlreadyPending)
        );
    }

    #[test]
    fn participant_fallback_when_nobody_named() {
        let (mut instr, sid, alice, bob) = milk();
        let p = scripted(&[(PromptKind::Simulate, "The carton hits the floor.")]);
        let d = simulate_next_beat(&mut instr, &sid, &GenParams::default(), &p).unwrap();
        assert_eq!(d.proposed_participants, [alice, bob].into());
    }

    #[test]
    fn whole_word_case_insensitive_names() {
        let (instr, sid, alice, bob) = milk();
        let s = instr.scene(&sid).unwrap();
        assert_eq!(detect_participants(&instr, s, "BOB runs"), [bob.clone()].into());
        // "Bobby" and "Alicefield" are not whole-word matches.
        assert_eq!(detect_participants(&instr, s, "Bobby sees Alicefield"), [alice.clone(), bob].into());
        assert_eq!(detect_participants(&instr, s, "alice's cart"), [alice].into());
    }

    #[test]
    fn nudge_keeps_nudge_text_through_accept() {
        let (mut instr, sid, ..) = milk();
        let p = scripted(&[(PromptKind::Nudge, NUDGED), (PromptKind::SituationUpdate, "Bob holds the carton.")]);
        let nudge = "Bob becomes uncharacteristically bold";
        let d = nudge_next_beat(&mut instr, &sid, nudge, &GenParams::default(), &p).unwrap();
        assert_eq!(d.text, NUDGED);
        assert_eq!(d.provenance, Provenance::Nudged);
        assert!(p.consumed()[0].user_text.contains(nudge));
        accept_beat(&mut instr, &sid, &p).unwrap();
        let beat = &instr.scene(&sid).unwrap().beats[0];
        assert_eq!(beat.nudge_text.as_deref(), Some(nudge));
        assert_eq!(beat.provenance, Provenance::Nudged);
        assert_eq!(
            nudge_next_beat(&mut instr, &sid, "", &GenParams::default(), &p).unwrap_err().code(),
            "EMPTY_NUDGE"
        );
    }

    #[test]
    fn author_paths() {
        let (mut instr, sid, alice, _) = milk();
        let d = author_beat(&mut instr, &sid, "Alice gloats.", false, &GenParams::default(), None).unwrap();
        assert_eq!(d.text, "Alice gloats.");
        assert_eq!(d.proposed_participants, [alice].into());
        reject_beat(&mut instr, &sid).unwrap();

        let p = scripted(&[(PromptKind::Polish, "Alice gloats openly.")]);
        let d = author_beat(&mut instr, &sid, "alice gloats", true, &GenParams::default(), Some(&p)).unwrap();
        assert_eq!(d.text, "Alice gloats openly.");
        assert_eq!(d.authored_text.as_deref(), Some("alice gloats"));
        reject_beat(&mut instr, &sid).unwrap();

        assert_eq!(
            author_beat(&mut instr, &sid, "x", true, &GenParams::default(), None),
            Err(EngineError::ProviderUnavailable)
        );
        assert!(instr.scene(&sid).unwrap().draft.is_none());
        assert_eq!(
            author_beat(&mut instr, &sid, " ", false, &GenParams::default(), None),
            Err(EngineError::EmptyDraft)
        );
    }

    #[test]
    fn accept_appends_beat_situation_and_memory() {
        let (mut instr, sid, alice, bob) = milk();
        let p = scripted(&[(PromptKind::Simulate, SIM), (PromptKind::SituationUpdate, "Alice stands alone holding the carton.")]);
        simulate_next_beat(&mut instr, &sid, &GenParams::default(), &p).unwrap();
        assert_eq!(accept_beat(&mut instr, &sid, &p).unwrap(), 0);
        let s = instr.scene(&sid).unwrap();
        assert_eq!(s.beats.len(), 1);
        assert_eq!(s.situations.len(), 2);
        assert_eq!(s.situations[1].text, "Alice stands alone holding the carton.");
        assert_eq!(s.situations[1].derivation, Derivation::ProviderUpdate);
        assert!(s.draft.is_none());
        assert_eq!(instr.character(&bob).unwrap().memories.len(), 1);
        assert_eq!(instr.character(&bob).unwrap().memories[0].text, SIM);
        assert!(instr.character(&alice).unwrap().memories.is_empty());
        assert_eq!(accept_beat(&mut instr, &sid, &p), Err(EngineError::NoPendingDraft));
    }

    #[test]
    fn failed_accept_is_atomic() {
        let (mut instr, sid, ..) = milk();
        let p = scripted(&[(PromptKind::Simulate, SIM)]);
        p.push_failure(PromptKind::SituationUpdate, ScriptedFailure::Timeout);
        simulate_next_beat(&mut instr, &sid, &GenParams::default(), &p).unwrap();
        let before = serialize(&instr).unwrap();
        assert_eq!(accept_beat(&mut instr, &sid, &p).unwrap_err().code(), "TIMEOUT");
        assert_eq!(serialize(&instr).unwrap(), before);
    }

    #[test]
    fn reject_is_pure() {
        let (mut instr, sid, ..) = milk();
        let before = serialize(&instr).unwrap();
        let p = scripted(&[(PromptKind::Simulate, "first"), (PromptKind::Simulate, "second")]);
        simulate_next_beat(&mut instr, &sid, &GenParams::default(), &p).unwrap();
        reject_beat(&mut instr, &sid).unwrap();
        assert_eq!(serialize(&instr).unwrap(), before);
        assert_eq!(
            simulate_next_beat(&mut instr, &sid, &GenParams::default(), &p).unwrap().text,
            "second"
        );
        reject_beat(&mut instr, &sid).unwrap();
        assert_eq!(reject_beat(&mut instr, &sid), Err(EngineError::NoPendingDraft));
    }

    #[test]
    fn edit_marks_downstream_stale() {
        let (mut instr, sid, alice, bob) = milk();
        let p = echo_updates();
        add_beats(&mut instr, &sid, &["Alice pulls", "Bob pulls", "Alice and Bob fall"], &p);
        edit_beat(&mut instr, &sid, 0, "Alice yanks").unwrap();
        let s = instr.scene(&sid).unwrap();
        let stale: Vec<bool> = s.situations.iter().map(|x| x.stale).collect();
        assert_eq!(stale, [false, true, true, true]);
        let flags: Vec<bool> = s.beats.iter().map(|b| b.stale_downstream).collect();
        assert_eq!(flags, [false, true, true]);
        assert_eq!(s.beats[0].provenance, Provenance::Manual);
        assert_eq!(s.beats[0].edit_history[0].text, "Alice pulls");
        for c in [&alice, &bob] {
            assert!(instr.character(c).unwrap().memories.iter().all(|m| m.stale));
        }
        assert_eq!(instr.character(&alice).unwrap().memories[0].text, "Alice yanks");
        assert_eq!(edit_beat(&mut instr, &sid, 9, "x"), Err(EngineError::UnknownBeat(9)));
        assert_eq!(edit_beat(&mut instr, &sid, 0, ""), Err(EngineError::EmptyDraft));
    }

    #[test]
    fn edit_last_and_identical_text() {
        let (mut instr, sid, ..) = milk();
        let p = echo_updates();
        add_beats(&mut instr, &sid, &["Alice pulls", "Bob pulls"], &p);
        edit_beat(&mut instr, &sid, 1, "Bob pulls").unwrap();
        let stale: Vec<bool> = instr.scene(&sid).unwrap().situations.iter().map(|x| x.stale).collect();
        assert_eq!(stale, [false, false, true]);
    }

    #[test]
    fn recompute_repairs_in_order_and_resumes() {
        let (mut instr, sid, ..) = milk();
        let p = echo_updates();
        add_beats(&mut instr, &sid, &["Alice pulls", "Bob pulls", "Alice falls"], &p);
        edit_beat(&mut instr, &sid, 0, "Alice yanks").unwrap();

        let failing = scripted(&[(PromptKind::SituationUpdate, "S1 again")]);
        failing.push_failure(PromptKind::SituationUpdate, ScriptedFailure::ServerError);
        let out = recompute_chain(&mut instr, &sid, &failing).unwrap();
        assert_eq!(out.recomputed, 1);
        assert_eq!(out.failure.unwrap().code(), "SERVER_ERROR");
        let stale: Vec<bool> = instr.scene(&sid).unwrap().situations.iter().map(|x| x.stale).collect();
        assert_eq!(stale, [false, false, true, true]);

        let out = recompute_chain(&mut instr, &sid, &p).unwrap();
        assert_eq!(out.recomputed, 2);
        assert!(out.failure.is_none());
        let s = instr.scene(&sid).unwrap();
        assert_eq!(s.situations[1].text, "S1 again");
        assert_eq!(s.situations[2].text, "after: Bob pulls");
        assert!(!s.has_stale_chain());
        assert!(s.beats.iter().all(|b| !b.stale_downstream));
        assert!(instr.characters.iter().flat_map(|c| &c.memories).all(|m| !m.stale));
        assert_eq!(recompute_chain(&mut instr, &sid, &p), Err(EngineError::NothingToRecompute));
    }

    #[test]
    fn recompute_full_chain_counts() {
        let (mut instr, sid, ..) = milk();
        let p = echo_updates();
        add_beats(&mut instr, &sid, &["a", "b", "c"], &p);
        edit_beat(&mut instr, &sid, 0, "a2").unwrap();
        let s3 = scripted(&[
            (PromptKind::SituationUpdate, "x1"),
            (PromptKind::SituationUpdate, "x2"),
            (PromptKind::SituationUpdate, "x3"),
        ]);
        assert_eq!(recompute_chain(&mut instr, &sid, &s3).unwrap().recomputed, 3);
        assert_eq!(s3.remaining(PromptKind::SituationUpdate), 0);
        // Each update saw the repaired predecessor.
        let seen = s3.consumed();
        assert_eq!(seen[1].section_texts("previous_situation"), ["x1"]);
        assert_eq!(seen[2].section_texts("previous_situation"), ["x2"]);
    }

    #[test]
    fn stale_chain_blocks_drafts() {
        let (mut instr, sid, ..) = milk();
        let p = echo_updates();
        add_beats(&mut instr, &sid, &["a"], &p);
        edit_beat(&mut instr, &sid, 0, "b").unwrap();
        assert_eq!(
            author_beat(&mut instr, &sid, "c", false, &GenParams::default(), None).unwrap_err().code(),
            "STALE_CHAIN"
        );
    }

    #[test]
    fn override_situation_invalidates_after() {
        let (mut instr, sid, ..) = milk();
        let p = echo_updates();
        add_beats(&mut instr, &sid, &["a", "b", "c"], &p);
        override_situation(&mut instr, &sid, 1, "writer says so").unwrap();
        let s = instr.scene(&sid).unwrap();
        assert_eq!(s.situations[1].derivation, Derivation::ManualOverride);
        let stale: Vec<bool> = s.situations.iter().map(|x| x.stale).collect();
        assert_eq!(stale, [false, false, true, true]);
        assert!(crate::validate::validate_instrument(&instr).is_empty());
        assert_eq!(
            override_situation(&mut instr, &sid, 0, "x"),
            Err(EngineError::InvalidSituationPosition(0))
        );
    }

    #[test]
    fn condense_memories_counts() {
        let (mut instr, sid, _, bob) = milk();
        let p = echo_updates();
        let texts: Vec<String> = (0..25).map(|i| format!("Bob move {i}")).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        add_beats(&mut instr, &sid, &refs, &p);
        assert_eq!(instr.character(&bob).unwrap().memories.len(), 25);
        let summary = scripted(&[(PromptKind::MemoryCondense, "Bob made five early moves.")]);
        assert!(condense_memories(&mut instr, &bob, 20, &summary).unwrap());
        let mems = &instr.character(&bob).unwrap().memories;
        assert_eq!(mems.len(), 21);
        assert!(mems[0].condensed);
        assert_eq!(mems[0].source_beat_index, 0);
        assert_eq!(mems[0].condensed_sources.len(), 5);
        assert_eq!(mems[1].source_beat_index, 5);
        assert!(crate::validate::validate_instrument(&instr).is_empty());
        assert!(!condense_memories(&mut instr, &bob, 21, &summary).unwrap());
    }

    #[test]
    fn condense_failure_leaves_memories() {
        let (mut instr, sid, _, bob) = milk();
        let p = echo_updates();
        add_beats(&mut instr, &sid, &["Bob a", "Bob b", "Bob c"], &p);
        let before = instr.character(&bob).unwrap().memories.clone();
        let failing = ScriptedProvider::new(ScriptedResponses::new());
        assert!(condense_memories(&mut instr, &bob, 1, &failing).is_err());
        assert_eq!(instr.character(&bob).unwrap().memories, before);
    }

    #[test]
    fn set_participants_guards() {
        let (mut instr, sid, alice, _) = milk();
        assert_eq!(
            set_draft_participants(&mut instr, &sid, [alice.clone()].into()),
            Err(EngineError::NoPendingDraft)
        );
        author_beat(&mut instr, &sid, "x", false, &GenParams::default(), None).unwrap();
        assert_eq!(
            set_draft_participants(&mut instr, &sid, ["c9".into()].into()),
            Err(EngineError::ParticipantNotInScene("c9".into()))
        );
        set_draft_participants(&mut instr, &sid, [alice.clone()].into()).unwrap();
        assert_eq!(instr.scene(&sid).unwrap().draft.as_ref().unwrap().proposed_participants, [alice].into());
    }
}
