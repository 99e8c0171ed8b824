use std::collections::BTreeMap;

use super::templates::{self, Template};
use super::{escape, truncate_context, ElementRole, PromptBundle, PromptElement, PromptError, PromptKind};
use crate::model::{
    Character, CharacterId, GenParams, Intensity, ManifestEntry, Memory, Scene, SceneId, StoryInstrument,
    StyleParams,
};

#[derive(Default)]
struct Elements {
    items: Vec<PromptElement>,
    block: u32,
    title: String,
}

impl Elements {
    fn block(&mut self, title: &str) {
        if !self.items.is_empty() {
            self.block += 1;
        }
        self.title = title.to_string();
    }

    fn push(&mut self, role: ElementRole, section: &str, source: impl Into<String>, text: impl Into<String>) {
        self.items.push(PromptElement {
            block: self.block,
            block_title: self.title.clone(),
            role,
            section: section.to_string(),
            source: source.into(),
            text: text.into(),
        });
    }

    fn instruction(&mut self, template: &Template, text: String) {
        self.block("INSTRUCTION");
        self.push(ElementRole::Instruction, "instruction", template.source(), text);
    }

    fn premise(&mut self, instr: &StoryInstrument) {
        self.block("PREMISE");
        self.push(ElementRole::Premise, "premise", "premise.text", escape(&instr.premise.text));
    }

    fn character_sheet(&mut self, c: &Character) {
        self.block("CHARACTER");
        let path = format!("characters[{}]", c.id);
        self.push(ElementRole::Name, "character", format!("{path}.name"), format!("Name: {}", escape(&c.name)));
        if !c.description.trim().is_empty() {
            self.push(
                ElementRole::Description,
                "description",
                format!("{path}.description"),
                format!("Description: {}", escape(&c.description)),
            );
        }
        for t in &c.traits {
            self.push(
                ElementRole::Trait,
                "trait",
                format!("{path}.traits[{}]", t.name),
                format!("  {}: {}/100", escape(&t.name), t.value),
            );
        }
        for (i, g) in c.goals.iter().enumerate() {
            self.push(ElementRole::Goal, "goal", format!("{path}.goals[{i}]"), format!("  {}", escape(g)));
        }
    }

    fn style(&mut self, style: &StyleParams, with_directives: bool) {
        self.block("STYLE");
        self.push(ElementRole::Style, "style", "style.genre", format!("Genre: {}", escape(&style.genre)));
        self.push(ElementRole::Style, "style", "style.style", format!("Voice: {}", escape(&style.style)));
        if with_directives {
            let intensity = match style.intensity {
                Intensity::Restrained => "Intensity: restrained (understated, quiet emotional register)",
                Intensity::Moderate => "Intensity: moderate (balanced emotional register)",
                Intensity::Vivid => "Intensity: vivid (heightened, sensory, emotionally charged)",
            };
            self.push(ElementRole::Style, "style", "style.intensity", intensity);
            let (lo, hi) = style.target_length.word_range();
            self.push(
                ElementRole::Style,
                "style",
                "style.target_length",
                format!("Length: {lo}-{hi} words"),
            );
        }
    }
}

fn participants<'a>(instr: &'a StoryInstrument, scene: &Scene) -> Vec<&'a Character> {
    instr
        .characters
        .iter()
        .filter(|c| scene.participants.contains(&c.id))
        .collect()
}

fn scene_label(instr: &StoryInstrument, id: &SceneId) -> String {
    instr
        .scene(id)
        .map(|s| if s.title.trim().is_empty() { s.id.to_string() } else { s.title.clone() })
        .unwrap_or_else(|| id.to_string())
}

/// Emits the non-stale memories of `people` in chronological order. Shared
/// memories of one beat collapse into a single line.
fn memories_block(el: &mut Elements, instr: &StoryInstrument, people: &[&Character]) {
    #[derive(PartialEq, Eq, PartialOrd, Ord)]
    struct Key {
        when: (u32, usize),
        condensed_last: bool,
        owner: Option<CharacterId>,
        text: String,
    }
    let mut lines: BTreeMap<Key, (Vec<&Character>, &Memory)> = BTreeMap::new();
    for c in people {
        for m in c.memories.iter().filter(|m| !m.stale) {
            let key = Key {
                when: instr.memory_key(&m.source_scene, m.source_beat_index),
                // Summaries carry their oldest source, so they sort before
                // any retained memory of the same beat.
                condensed_last: !m.condensed,
                owner: m.condensed.then(|| c.id.clone()),
                text: m.text.clone(),
            };
            lines.entry(key).or_insert_with(|| (Vec::new(), m)).0.push(c);
        }
    }
    if lines.is_empty() {
        return;
    }
    el.block("MEMORIES");
    for (owners, m) in lines.values() {
        let ids: Vec<&str> = owners.iter().map(|c| c.id.as_str()).collect();
        let names: Vec<String> = owners.iter().map(|c| escape(&c.name)).collect();
        let scene = escape(&scene_label(instr, &m.source_scene));
        let (source, text) = if m.condensed {
            (
                format!("characters[{}].memories[{}#{}:condensed]", ids.join(","), m.source_scene, m.source_beat_index),
                format!("- (earlier memories, summarized; remembered by {}) {}", names.join(", "), escape(&m.text)),
            )
        } else {
            (
                format!("characters[{}].memories[{}#{}]", ids.join(","), m.source_scene, m.source_beat_index),
                format!(
                    "- ({scene}, beat {}; remembered by {}) {}",
                    m.source_beat_index,
                    names.join(", "),
                    escape(&m.text)
                ),
            )
        };
        el.push(ElementRole::Memory, "memory", source, text);
    }
}

fn scene_context<'a>(instr: &'a StoryInstrument, scene_id: &SceneId) -> Result<&'a Scene, PromptError> {
    let scene = instr
        .scene(scene_id)
        .ok_or_else(|| PromptError::UnknownScene(scene_id.clone()))?;
    if scene.has_stale_chain() {
        return Err(PromptError::StaleChain);
    }
    Ok(scene)
}

fn beat_context(
    el: &mut Elements,
    instr: &StoryInstrument,
    scene: &Scene,
) {
    el.premise(instr);
    let people = participants(instr, scene);
    for c in &people {
        el.character_sheet(c);
    }
    memories_block(el, instr, &people);
    el.block("CURRENT SITUATION");
    let t = scene.situations.len() - 1;
    el.push(
        ElementRole::Situation,
        "situation",
        format!("scenes[{}].situations[{t}]", scene.id),
        escape(&scene.current_situation().text),
    );
    if !scene.beats.is_empty() {
        el.block("RECENT BEATS");
        for b in &scene.beats {
            el.push(
                ElementRole::PriorBeat,
                "prior_beat",
                format!("scenes[{}].beats[{}]", scene.id, b.index),
                format!("- [{}] {}", b.index, escape(&b.text)),
            );
        }
    }
}

fn beat_system(params: &GenParams) -> (String, Vec<ManifestEntry>) {
    let adherence = templates::adherence(params.adherence);
    (
        format!("{}\n\n{}", templates::SYSTEM_SIMULATE.text, adherence.text),
        vec![templates::SYSTEM_SIMULATE.manifest("system"), adherence.manifest("adherence")],
    )
}

/// Prompt asking the model to role-play the scene's characters and produce the
/// next beat. Prior beats, memories, and descriptions are dropped as needed to
/// fit `params.context_budget`.
pub fn build_simulation_prompt(
    instr: &StoryInstrument,
    scene_id: &SceneId,
    params: &GenParams,
) -> Result<PromptBundle, PromptError> {
    params.validate()?;
    let scene = scene_context(instr, scene_id)?;
    let mut el = Elements::default();
    beat_context(&mut el, instr, scene);
    el.instruction(&templates::INSTRUCTION_SIMULATE, templates::INSTRUCTION_SIMULATE.text.to_string());
    let (system, manifest) = beat_system(params);
    let bundle = PromptBundle::assemble(PromptKind::Simulate, manifest, system, el.items, params.clone());
    truncate_context(&bundle, params.context_budget as usize)
}

/// Same context as the simulation prompt plus the writer's desired outcome.
pub fn build_nudge_prompt(
    instr: &StoryInstrument,
    scene_id: &SceneId,
    nudge_text: &str,
    params: &GenParams,
) -> Result<PromptBundle, PromptError> {
    if nudge_text.trim().is_empty() {
        return Err(PromptError::EmptyNudge);
    }
    params.validate()?;
    let scene = scene_context(instr, scene_id)?;
    let mut el = Elements::default();
    beat_context(&mut el, instr, scene);
    el.block("NUDGE");
    el.push(ElementRole::Nudge, "nudge", "request.nudge_text", escape(nudge_text));
    el.instruction(&templates::INSTRUCTION_NUDGE, templates::INSTRUCTION_NUDGE.text.to_string());
    let (system, manifest) = beat_system(params);
    let bundle = PromptBundle::assemble(PromptKind::Nudge, manifest, system, el.items, params.clone());
    truncate_context(&bundle, params.context_budget as usize)
}

/// Asks for tighter wording of a writer's beat. Never truncated.
pub fn build_polish_prompt(draft_text: &str, style_defaults: &StyleParams) -> Result<PromptBundle, PromptError> {
    if draft_text.trim().is_empty() {
        return Err(PromptError::EmptyDraft);
    }
    let mut el = Elements::default();
    el.block("DRAFT");
    el.push(ElementRole::Draft, "draft", "request.draft_text", escape(draft_text));
    el.style(style_defaults, false);
    el.instruction(&templates::INSTRUCTION_POLISH, templates::INSTRUCTION_POLISH.text.to_string());
    Ok(PromptBundle::assemble(
        PromptKind::Polish,
        vec![templates::SYSTEM_POLISH.manifest("system")],
        templates::SYSTEM_POLISH.text.to_string(),
        el.items,
        GenParams::default(),
    ))
}

/// Asks for the situation that results from applying a beat.
pub fn build_situation_update_prompt(prev_situation: &str, beat_text: &str) -> Result<PromptBundle, PromptError> {
    if prev_situation.trim().is_empty() || beat_text.trim().is_empty() {
        return Err(PromptError::EmptyInput);
    }
    let mut el = Elements::default();
    el.block("PREVIOUS SITUATION");
    el.push(ElementRole::Situation, "previous_situation", "input.previous_situation", escape(prev_situation));
    el.block("BEAT");
    el.push(ElementRole::Beat, "beat", "input.beat_text", escape(beat_text));
    el.instruction(&templates::INSTRUCTION_SITUATION, templates::INSTRUCTION_SITUATION.text.to_string());
    Ok(PromptBundle::assemble(
        PromptKind::SituationUpdate,
        vec![templates::SYSTEM_SITUATION.manifest("system")],
        templates::SYSTEM_SITUATION.text.to_string(),
        el.items,
        GenParams::default(),
    ))
}

/// Prose prompt for one beat, continuing from the stored prose of the
/// previous segment when there is one.
pub fn build_prose_prompt(
    instr: &StoryInstrument,
    scene_id: &SceneId,
    beat_index: usize,
    style: &StyleParams,
) -> Result<PromptBundle, PromptError> {
    let scene = instr
        .scene(scene_id)
        .ok_or_else(|| PromptError::UnknownScene(scene_id.clone()))?;
    let previous = beat_index
        .checked_sub(1)
        .and_then(|i| scene.prose.as_ref()?.segments.get(i))
        .filter(|s| !s.stale && !s.text.trim().is_empty())
        .map(|s| s.text.as_str());
    build_prose_prompt_with_previous(instr, scene_id, beat_index, style, previous, PromptKind::Prose)
}

pub fn build_prose_prompt_with_previous(
    instr: &StoryInstrument,
    scene_id: &SceneId,
    beat_index: usize,
    style: &StyleParams,
    previous_prose: Option<&str>,
    kind: PromptKind,
) -> Result<PromptBundle, PromptError> {
    let scene = instr
        .scene(scene_id)
        .ok_or_else(|| PromptError::UnknownScene(scene_id.clone()))?;
    let beat = scene.beats.get(beat_index).ok_or(PromptError::UnknownBeat(beat_index))?;
    if beat.stale_downstream || scene.situations[beat_index].stale {
        return Err(PromptError::UpstreamStale(beat_index));
    }
    let mut el = Elements::default();
    el.premise(instr);
    for c in participants(instr, scene) {
        el.character_sheet(c);
    }
    el.block("SITUATION BEFORE");
    el.push(
        ElementRole::Situation,
        "situation_before",
        format!("scenes[{}].situations[{beat_index}]", scene.id),
        escape(&scene.situations[beat_index].text),
    );
    el.block("BEAT");
    el.push(
        ElementRole::Beat,
        "beat",
        format!("scenes[{}].beats[{beat_index}]", scene.id),
        escape(&beat.text),
    );
    if let Some(prev) = previous_prose {
        el.block("PREVIOUS PROSE");
        el.push(
            ElementRole::PreviousProse,
            "previous_prose",
            format!("scenes[{}].prose.segments[{}]", scene.id, beat_index - 1),
            escape(prev),
        );
    }
    el.style(style, true);
    let (lo, hi) = style.target_length.word_range();
    el.instruction(
        &templates::INSTRUCTION_PROSE,
        templates::INSTRUCTION_PROSE.fill(&[("min_words", lo.to_string()), ("max_words", hi.to_string())]),
    );
    let params = GenParams::default();
    let bundle = PromptBundle::assemble(
        kind,
        vec![templates::SYSTEM_PROSE.manifest("system")],
        templates::SYSTEM_PROSE.text.to_string(),
        el.items,
        params.clone(),
    );
    truncate_context(&bundle, params.context_budget as usize)
}

/// Asks for one summary of a character's oldest memories.
pub fn build_memory_condense_prompt(
    instr: &StoryInstrument,
    character: &Character,
    memories: &[Memory],
) -> PromptBundle {
    let mut el = Elements::default();
    el.block("CHARACTER");
    el.push(
        ElementRole::Name,
        "character",
        format!("characters[{}].name", character.id),
        format!("Name: {}", escape(&character.name)),
    );
    el.block("MEMORIES");
    for m in memories {
        el.push(
            ElementRole::Memory,
            "memory",
            format!("characters[{}].memories[{}#{}]", character.id, m.source_scene, m.source_beat_index),
            format!(
                "- ({}, beat {}) {}",
                escape(&scene_label(instr, &m.source_scene)),
                m.source_beat_index,
                escape(&m.text)
            ),
        );
    }
    el.instruction(&templates::INSTRUCTION_CONDENSE, templates::INSTRUCTION_CONDENSE.text.to_string());
    PromptBundle::assemble(
        PromptKind::MemoryCondense,
        vec![templates::SYSTEM_CONDENSE.manifest("system")],
        templates::SYSTEM_CONDENSE.text.to_string(),
        el.items,
        GenParams::default(),
    )
}
