//! Referential-integrity and invariant checks over a whole instrument.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::model::{
    check_temperature, Derivation, GenParams, Provenance, StoryInstrument, MAX_TRAIT_VALUE, SCHEMA_VERSION,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub code: String,
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn codes(&self) -> Vec<&str> {
        self.findings.iter().map(|f| f.code.as_str()).collect()
    }

    fn push(&mut self, code: &str, path: impl Into<String>, message: impl Into<String>) {
        self.findings.push(Finding {
            code: code.to_string(),
            path: path.into(),
            message: message.into(),
        });
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, finding) in self.findings.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{} at {}: {}", finding.code, finding.path, finding.message)?;
        }
        Ok(())
    }
}

fn check_params(report: &mut ValidationReport, path: &str, params: &GenParams) {
    if check_temperature(params.temperature).is_err() {
        report.push(
            "TEMPERATURE_OUT_OF_RANGE",
            format!("{path}.temperature"),
            format!("{} outside [0.1, 2.0]", params.temperature),
        );
    }
    if params.context_budget == 0 {
        report.push("CONTEXT_BUDGET_ZERO", format!("{path}.context_budget"), "must be positive");
    }
}

/// Lists every violated invariant. An empty report means the instrument is
/// valid.
pub fn validate_instrument(instr: &StoryInstrument) -> ValidationReport {
    let mut r = ValidationReport::default();

    if instr.schema_version != SCHEMA_VERSION {
        r.push(
            "SCHEMA_VERSION_MISMATCH",
            "schema_version",
            format!("expected {SCHEMA_VERSION}, found {}", instr.schema_version),
        );
    }
    if instr.premise.text.trim().is_empty() {
        r.push("EMPTY_PREMISE", "premise.text", "premise text is empty");
    }
    if instr.updated_at < instr.created_at {
        r.push("TIMESTAMP_ORDER", "updated_at", "updated_at precedes created_at");
    }

    let mut char_ids = BTreeSet::new();
    let mut names = BTreeSet::new();
    for c in &instr.characters {
        let path = format!("characters[{}]", c.id);
        if !char_ids.insert(&c.id) {
            r.push("DUPLICATE_CHARACTER_ID", &path, "character id used twice");
        }
        if c.name.trim().is_empty() {
            r.push("EMPTY_CHARACTER_NAME", format!("{path}.name"), "name is empty");
        } else if !names.insert(c.name.as_str()) {
            r.push("DUPLICATE_CHARACTER_NAME", format!("{path}.name"), format!("{:?} used twice", c.name));
        }
        let mut trait_names = BTreeSet::new();
        for (i, t) in c.traits.iter().enumerate() {
            let tpath = format!("{path}.traits[{i}]");
            if t.name.trim().is_empty() {
                r.push("EMPTY_TRAIT_NAME", &tpath, "trait name is empty");
            } else if !trait_names.insert(t.name.as_str()) {
                r.push("DUPLICATE_TRAIT_NAME", &tpath, format!("{:?} used twice", t.name));
            }
            if t.value > MAX_TRAIT_VALUE {
                r.push("TRAIT_OUT_OF_RANGE", &tpath, format!("{} outside 0..=100", t.value));
            }
        }
    }

    let mut scene_ids = BTreeSet::new();
    let mut ordinals = BTreeSet::new();
    let mut prev_ordinal: Option<u32> = None;
    for s in &instr.scenes {
        let path = format!("scenes[{}]", s.id);
        if !scene_ids.insert(&s.id) {
            r.push("DUPLICATE_SCENE_ID", &path, "scene id used twice");
        }
        if !ordinals.insert(s.ordinal) {
            r.push("DUPLICATE_SCENE_ORDINAL", format!("{path}.ordinal"), format!("ordinal {} used twice", s.ordinal));
        }
        if prev_ordinal.is_some_and(|p| p > s.ordinal) {
            r.push("SCENE_ORDER", format!("{path}.ordinal"), "scenes not stored in ordinal order");
        }
        prev_ordinal = Some(s.ordinal);

        if s.participants.is_empty() {
            r.push("SCENE_EMPTY_PARTICIPANTS", format!("{path}.participants"), "scene has no participants");
        }
        for p in &s.participants {
            if !char_ids.contains(p) {
                r.push("SCENE_UNKNOWN_PARTICIPANT", format!("{path}.participants"), format!("unknown character {p}"));
            }
        }
        if s.initial_situation.trim().is_empty() {
            r.push("EMPTY_SITUATION", format!("{path}.initial_situation"), "initial situation is empty");
        }

        for (i, b) in s.beats.iter().enumerate() {
            let bpath = format!("{path}.beats[{i}]");
            if b.index != i {
                r.push("BEAT_INDEX_GAP", format!("{bpath}.index"), format!("expected index {i}, found {}", b.index));
            }
            if b.text.trim().is_empty() {
                r.push("EMPTY_BEAT_TEXT", format!("{bpath}.text"), "beat text is empty");
            }
            let has_nudge = b.nudge_text.as_deref().is_some_and(|n| !n.trim().is_empty());
            if (b.provenance == Provenance::Nudged) != has_nudge || (b.nudge_text.is_some() && !has_nudge) {
                r.push(
                    "NUDGE_TEXT_MISMATCH",
                    format!("{bpath}.nudge_text"),
                    "nudge text must be present and nonempty exactly for nudged beats",
                );
            }
            if b.participants.is_empty() {
                r.push("BEAT_EMPTY_PARTICIPANTS", format!("{bpath}.participants"), "beat has no participants");
            }
            for p in &b.participants {
                if !s.participants.contains(p) {
                    r.push(
                        "BEAT_PARTICIPANT_NOT_IN_SCENE",
                        format!("{bpath}.participants"),
                        format!("{p} does not participate in the scene"),
                    );
                }
            }
            if let Some(params) = &b.generation_params {
                check_params(&mut r, &format!("{bpath}.generation_params"), params);
            }
            if let Some(sit) = s.situations.get(i) {
                if sit.stale != b.stale_downstream {
                    r.push(
                        "STALE_FLAG_MISMATCH",
                        format!("{bpath}.stale_downstream"),
                        "beat staleness disagrees with the situation it was applied to",
                    );
                }
            }
        }

        if s.situations.len() != s.beats.len() + 1 {
            r.push(
                "SITUATION_CHAIN_LENGTH",
                format!("{path}.situations"),
                format!("{} situations for {} beats", s.situations.len(), s.beats.len()),
            );
        }
        match s.situations.first() {
            None => {}
            Some(first) => {
                if first.text != s.initial_situation {
                    r.push(
                        "INITIAL_SITUATION_MISMATCH",
                        format!("{path}.situations[0]"),
                        "first situation differs from the initial situation",
                    );
                }
                if first.derivation != Derivation::Initial || first.stale {
                    r.push(
                        "INITIAL_SITUATION_STATE",
                        format!("{path}.situations[0]"),
                        "first situation must be initial and never stale",
                    );
                }
            }
        }
        for (i, sit) in s.situations.iter().enumerate().skip(1) {
            if sit.derivation == Derivation::Initial {
                r.push(
                    "SITUATION_DERIVATION",
                    format!("{path}.situations[{i}].derivation"),
                    "only the first situation is initial",
                );
            }
        }

        if let Some(d) = &s.draft {
            let dpath = format!("{path}.draft");
            let has_nudge = d.nudge_text.as_deref().is_some_and(|n| !n.trim().is_empty());
            if (d.provenance == Provenance::Nudged) != has_nudge {
                r.push("NUDGE_TEXT_MISMATCH", format!("{dpath}.nudge_text"), "nudged drafts need nudge text");
            }
            for p in &d.proposed_participants {
                if !s.participants.contains(p) {
                    r.push(
                        "DRAFT_PARTICIPANT_NOT_IN_SCENE",
                        format!("{dpath}.proposed_participants"),
                        format!("{p} does not participate in the scene"),
                    );
                }
            }
            check_params(&mut r, &format!("{dpath}.params"), &d.params);
        }

        if let Some(doc) = &s.prose {
            let ppath = format!("{path}.prose");
            if doc.scene_id != s.id {
                r.push("PROSE_SCENE_MISMATCH", format!("{ppath}.scene_id"), "prose belongs to another scene");
            }
            if !doc.stale && doc.segments.len() != s.beats.len() {
                r.push(
                    "PROSE_SEGMENT_COUNT",
                    format!("{ppath}.segments"),
                    format!("{} segments for {} beats", doc.segments.len(), s.beats.len()),
                );
            }
            for (i, seg) in doc.segments.iter().enumerate() {
                if seg.beat_index != i {
                    r.push("PROSE_SEGMENT_INDEX", format!("{ppath}.segments[{i}]"), "segment index mismatch");
                }
                if seg.text.trim().is_empty() && !seg.stale {
                    r.push("EMPTY_PROSE_SEGMENT", format!("{ppath}.segments[{i}]"), "segment text is empty");
                }
            }
        }
    }

    let beat_counts: BTreeMap<_, _> = instr.scenes.iter().map(|s| (&s.id, s.beats.len())).collect();
    for c in &instr.characters {
        let mut seen = BTreeSet::new();
        let mut prev_key = None;
        for (i, m) in c.memories.iter().enumerate() {
            let mpath = format!("characters[{}].memories[{i}]", c.id);
            match beat_counts.get(&m.source_scene) {
                None => r.push("MEMORY_UNKNOWN_SCENE", &mpath, format!("unknown scene {}", m.source_scene)),
                Some(&n) if m.source_beat_index >= n => {
                    r.push("MEMORY_UNKNOWN_BEAT", &mpath, format!("beat {} does not exist", m.source_beat_index))
                }
                Some(_) => {}
            }
            for src in &m.condensed_sources {
                match beat_counts.get(&src.scene) {
                    Some(&n) if src.beat_index < n => {}
                    _ => r.push("MEMORY_UNKNOWN_BEAT", &mpath, "condensed source does not resolve"),
                }
            }
            if m.text.trim().is_empty() {
                r.push("MEMORY_EMPTY_TEXT", &mpath, "memory text is empty");
            }
            if !seen.insert((&m.source_scene, m.source_beat_index)) {
                r.push("DUPLICATE_MEMORY", &mpath, "two memories share one source");
            }
            let key = instr.memory_key(&m.source_scene, m.source_beat_index);
            if prev_key.is_some_and(|p| p > key) {
                r.push("MEMORY_ORDER", &mpath, "memories are not in chronological order");
            }
            prev_key = Some(key);
        }
    }

    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::*;

    fn fixture() -> StoryInstrument {
        let mut instr = create_instrument("premise", StyleParams::default()).unwrap();
        let a = instr.add_character("Alice", "", vec![], vec![]).unwrap();
        let b = instr.add_character("Bob", "", vec![], vec![]).unwrap();
        let sid = instr.add_scene("Checkout", "S0", [a, b.clone()].into()).unwrap();
        let scene = instr.scene_mut(&sid).unwrap();
        scene.beats.push(Beat {
            index: 0,
            text: "Bob leaves".into(),
            provenance: Provenance::Manual,
            nudge_text: None,
            participants: [b.clone()].into(),
            generation_params: None,
            stale_downstream: false,
            edit_history: vec![],
        });
        scene.situations.push(SituationState {
            text: "S1".into(),
            stale: false,
            derivation: Derivation::ProviderUpdate,
        });
        instr.character_mut(&b).unwrap().memories.push(Memory {
            source_scene: sid,
            source_beat_index: 0,
            text: "Bob leaves".into(),
            stale: false,
            condensed: false,
            condensed_sources: vec![],
        });
        instr
    }

    #[test]
    fn fresh_instrument_is_valid() {
        let instr = create_instrument("premise", StyleParams::default()).unwrap();
        assert!(validate_instrument(&instr).is_empty());
        assert!(validate_instrument(&fixture()).is_empty());
    }

    #[test]
    fn beat_participant_outside_scene() {
        let mut instr = fixture();
        instr.add_character("Carol", "", vec![], vec![]).unwrap();
        instr.scenes[0].beats[0].participants.insert("c3".into());
        let report = validate_instrument(&instr);
        assert_eq!(report.codes(), vec!["BEAT_PARTICIPANT_NOT_IN_SCENE"]);
        assert_eq!(report.findings[0].path, "scenes[s1].beats[0].participants");
    }

    #[test]
    fn chain_length_mismatch() {
        let mut instr = fixture();
        instr.scenes[0].situations.pop();
        assert_eq!(validate_instrument(&instr).codes(), vec!["SITUATION_CHAIN_LENGTH"]);
    }

    #[test]
    fn memory_problems() {
        let mut instr = fixture();
        let m = instr.characters[1].memories[0].clone();
        instr.characters[1].memories.push(m);
        assert_eq!(validate_instrument(&instr).codes(), vec!["DUPLICATE_MEMORY"]);
        instr.characters[1].memories[1].source_beat_index = 7;
        assert_eq!(validate_instrument(&instr).codes(), vec!["MEMORY_UNKNOWN_BEAT"]);
    }

    #[test]
    fn nudge_iff_nudged() {
        let mut instr = fixture();
        instr.scenes[0].beats[0].provenance = Provenance::Nudged;
        assert_eq!(validate_instrument(&instr).codes(), vec!["NUDGE_TEXT_MISMATCH"]);
        instr.scenes[0].beats[0].nudge_text = Some("be bold".into());
        assert!(validate_instrument(&instr).is_empty());
        instr.scenes[0].beats[0].provenance = Provenance::Manual;
        assert_eq!(validate_instrument(&instr).codes(), vec!["NUDGE_TEXT_MISMATCH"]);
    }
}
