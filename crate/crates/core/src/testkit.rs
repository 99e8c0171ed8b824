//! Deterministic fixtures for tests: a provider that answers every prompt
//! kind from the prompt itself, and random instruments grown through the
//! public engine operations. Enabled by the `testkit` feature.

use std::collections::BTreeSet;
use std::hash::{DefaultHasher, Hash, Hasher};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::engine::{
    accept_beat, author_beat, condense_memories, edit_beat, nudge_next_beat, recompute_chain, reject_beat,
    set_draft_participants, simulate_next_beat,
};
use crate::model::{
    create_instrument, Adherence, CharacterId, GenParams, Intensity, SceneId, StoryInstrument, StyleParams,
    TargetLength, TraitScale,
};
use crate::prompt::{PromptBundle, PromptKind};
use crate::prose::{edit_segment, regenerate_segment, render_scene, ContinuityMode};
use crate::provider::{ScriptedProvider, ScriptedResponses};

pub const NAMES: [&str; 8] = ["Alice", "Bob", "Carol", "Dmitri", "Eun-ji", "Farah", "Gus", "Hélène"];
const WORDS: [&str; 24] = [
    "milk", "carton", "aisle", "grabs", "whispers", "glances", "shelf", "cart", "receipt", "runs", "quietly",
    "cold", "bright", "clerk", "refuses", "laughs", "door", "rain", "coupon", "insists", "drops", "last", "waits",
    "\"no\"",
];

fn hash_of(parts: &[&str]) -> u64 {
    let mut h = DefaultHasher::new();
    for p in parts {
        p.hash(&mut h);
    }
    h.finish()
}

/// The scripted situation update: a pure function of the previous situation
/// and the beat.
pub fn script_situation(prev: &str, beat: &str) -> String {
    let first: String = beat.split_whitespace().take(3).collect::<Vec<_>>().join(" ");
    format!("After \"{first}\", state {:016x}.", hash_of(&[prev, beat]))
}

fn first(bundle: &PromptBundle, section: &str) -> String {
    bundle.section_texts(section).first().copied().unwrap_or_default().to_string()
}

fn names_in(bundle: &PromptBundle) -> Vec<String> {
    bundle
        .section_texts("character")
        .iter()
        .filter_map(|t| t.strip_prefix("Name: "))
        .map(str::to_string)
        .collect()
}

fn beat_reply(bundle: &PromptBundle) -> String {
    let h = hash_of(&[&bundle.user_text]);
    let names = names_in(bundle);
    let acting: Vec<&str> = names
        .iter()
        .enumerate()
        .filter(|(i, _)| h >> (i % 60) & 1 == 1)
        .map(|(_, n)| n.as_str())
        .collect();
    let who = if acting.is_empty() { "Someone".to_string() } else { acting.join(" and ") };
    let verb = WORDS[(h % WORDS.len() as u64) as usize];
    format!("{who} {verb} near the shelf ({:08x}).", h >> 32)
}

/// A provider answering every prompt kind deterministically from the prompt
/// content. Situation updates follow [`script_situation`].
pub fn world_provider() -> ScriptedProvider {
    ScriptedProvider::new(ScriptedResponses::new())
        .with_responder(PromptKind::Simulate, |b| Ok(beat_reply(b)))
        .with_responder(PromptKind::Nudge, |b| Ok(format!("{} Boldly.", beat_reply(b))))
        .with_responder(PromptKind::Polish, |b| Ok(format!("{} (polished)", first(b, "draft"))))
        .with_responder(PromptKind::SituationUpdate, |b| {
            Ok(script_situation(&first(b, "previous_situation"), &first(b, "beat")))
        })
        .with_responder(PromptKind::Prose, |b| Ok(format!("Prose: {}", first(b, "beat"))))
        .with_responder(PromptKind::ProseSegment, |b| {
            Ok(format!("Prose again ({:08x}): {}", hash_of(&[&b.user_text]) >> 32, first(b, "beat")))
        })
        .with_responder(PromptKind::MemoryCondense, |b| {
            Ok(format!("Summary of {} memories.", b.section_texts("memory").len()))
        })
}

pub fn random_text(rng: &mut impl Rng, words: usize) -> String {
    let n = rng.random_range(1..=words.max(1));
    let mut out: Vec<&str> = (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect();
    out[0] = "The";
    out.join(" ")
}

/// Upper bounds for [`random_instrument`].
#[derive(Debug, Clone, Copy)]
pub struct Shape {
    pub max_characters: usize,
    pub max_scenes: usize,
    pub max_beats: usize,
}

impl Default for Shape {
    fn default() -> Self {
        Self {
            max_characters: 5,
            max_scenes: 3,
            max_beats: 10,
        }
    }
}

pub fn random_params(rng: &mut impl Rng) -> GenParams {
    GenParams {
        temperature: (rng.random_range(10..=200) as f64) / 100.0,
        adherence: *[Adherence::Loose, Adherence::Moderate, Adherence::Strict].choose(rng).unwrap(),
        context_budget: 6000,
    }
}

pub fn random_style(rng: &mut impl Rng) -> StyleParams {
    StyleParams {
        genre: ["literary fiction", "noir", "comedy"].choose(rng).unwrap().to_string(),
        style: ["close third person, past tense", "first person, present tense"]
            .choose(rng)
            .unwrap()
            .to_string(),
        intensity: *[Intensity::Restrained, Intensity::Moderate, Intensity::Vivid].choose(rng).unwrap(),
        target_length: *[TargetLength::Brief, TargetLength::Standard, TargetLength::Expansive]
            .choose(rng)
            .unwrap(),
    }
}

/// Characters and scenes only, no beats.
pub fn random_skeleton(rng: &mut impl Rng, shape: Shape) -> StoryInstrument {
    let mut instr = create_instrument(&random_text(rng, 12), random_style(rng)).unwrap();
    let mut names = NAMES.to_vec();
    names.shuffle(rng);
    let n_chars = rng.random_range(1..=shape.max_characters.clamp(1, NAMES.len()));
    let mut ids = Vec::new();
    for name in names.iter().take(n_chars) {
        let traits = (0..rng.random_range(0..=3))
            .map(|i| TraitScale::new(format!("{}{i}", WORDS[i * 5]), rng.random_range(0..=100)))
            .collect();
        let goals = (0..rng.random_range(0..=2)).map(|_| random_text(rng, 5)).collect();
        let description = if rng.random_bool(0.7) { random_text(rng, 10) } else { String::new() };
        ids.push(instr.add_character(name, &description, traits, goals).unwrap());
    }
    for s in 0..rng.random_range(1..=shape.max_scenes.max(1)) {
        let k = rng.random_range(1..=ids.len());
        let participants: BTreeSet<CharacterId> = ids.choose_multiple(rng, k).cloned().collect();
        instr
            .add_scene(&format!("Scene {s}"), &random_text(rng, 8), participants)
            .unwrap();
    }
    instr
}

/// Drafts one beat by a random route and accepts it.
pub fn grow_beat(
    rng: &mut impl Rng,
    instr: &mut StoryInstrument,
    scene: &SceneId,
    provider: &ScriptedProvider,
) -> usize {
    let params = random_params(rng);
    match rng.random_range(0..4) {
        0 => simulate_next_beat(instr, scene, &params, provider).map(|_| ()),
        1 => nudge_next_beat(instr, scene, &random_text(rng, 5), &params, provider).map(|_| ()),
        2 => author_beat(instr, scene, &random_text(rng, 10), false, &params, None).map(|_| ()),
        _ => author_beat(instr, scene, &random_text(rng, 10), true, &params, Some(provider)).map(|_| ()),
    }
    .unwrap();
    if rng.random_bool(0.3) {
        let all: Vec<CharacterId> = instr.scene(scene).unwrap().participants.iter().cloned().collect();
        let k = rng.random_range(1..=all.len());
        set_draft_participants(instr, scene, all.choose_multiple(rng, k).cloned().collect()).unwrap();
    }
    accept_beat(instr, scene, provider).unwrap()
}

/// A valid instrument exercising most of the model: accepted beats of every
/// provenance, edits with and without recompute, pending drafts, prose
/// documents with edited segments, and condensed memories.
pub fn random_instrument(rng: &mut impl Rng, shape: Shape) -> StoryInstrument {
    let provider = world_provider();
    let mut instr = random_skeleton(rng, shape);
    let scenes: Vec<SceneId> = instr.scenes.iter().map(|s| s.id.clone()).collect();
    for sid in &scenes {
        let n = rng.random_range(0..=shape.max_beats);
        for _ in 0..n {
            grow_beat(rng, &mut instr, sid, &provider);
        }
        if n > 0 && rng.random_bool(0.3) {
            let i = rng.random_range(0..n);
            edit_beat(&mut instr, sid, i, &random_text(rng, 8)).unwrap();
            if rng.random_bool(0.5) {
                recompute_chain(&mut instr, sid, &provider).unwrap();
            }
        }
        let fresh = !instr.scene(sid).unwrap().has_stale_chain();
        if n > 0 && fresh && rng.random_bool(0.5) {
            let style = random_style(rng);
            render_scene(&mut instr, sid, &style, &provider).unwrap();
            if rng.random_bool(0.4) {
                edit_segment(&mut instr, sid, rng.random_range(0..n), &random_text(rng, 6)).unwrap();
            }
            if rng.random_bool(0.3) {
                let mode = if rng.random_bool(0.5) { ContinuityMode::Strict } else { ContinuityMode::Loose };
                let style = random_style(rng);
                regenerate_segment(&mut instr, sid, rng.random_range(0..n), &style, mode, &provider).unwrap();
            }
        }
        if fresh && rng.random_bool(0.3) {
            author_beat(&mut instr, sid, &random_text(rng, 6), false, &random_params(rng), None).unwrap();
            if rng.random_bool(0.3) {
                reject_beat(&mut instr, sid).unwrap();
            }
        }
    }
    if rng.random_bool(0.2) {
        let cid = instr.characters.choose(rng).unwrap().id.clone();
        condense_memories(&mut instr, &cid, rng.random_range(1..=3), &provider).unwrap();
    }
    instr
}
