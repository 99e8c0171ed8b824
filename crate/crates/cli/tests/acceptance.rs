//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Run with `cargo test -p tomb-cli --test acceptance`.

use std::collections::{BTreeMap, BTreeSet};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};

use tomb_core::engine::{
    accept_beat, author_beat, condense_memories, edit_beat, nudge_next_beat, recompute_chain, reject_beat,
    set_draft_participants, simulate_next_beat,
};
use tomb_core::error::Coded;
use tomb_core::model::{
    Adherence, CharacterId, Derivation, GenParams, SceneId, StoryInstrument, StyleParams, TraitScale,
};
use tomb_core::prompt::{
    build_nudge_prompt, build_simulation_prompt, truncate_context, ElementRole, PromptBundle, PromptElement,
    PromptKind,
};
use tomb_core::prose::{edit_segment, regenerate_segment, render_scene, ContinuityMode, ExportFormat, ExportScope};
use tomb_core::provider::{ScriptedFailure, ScriptedProvider, ScriptedResponses};
use tomb_core::store::{ProjectStore, SaveFault};
use tomb_core::testkit::{
    grow_beat, random_instrument, random_params, random_skeleton, random_style, random_text, script_situation,
    world_provider, Shape,
};
use tomb_core::{deserialize, serialize, validate_instrument};
use tomb_service::ops::{self, GenOptions, Workspace};
use tomb_service::{router, AppState};

const SEED: u64 = 0x70_6d_62;

const PREMISE: &str = "A small-town supermarket on a Sunday evening";
const SITUATION: &str = "Two shoppers fighting over the last milk carton";
const SIMULATED: &str = "Bob, who is a taciturn man, lets go of the milk carton and immediately slinks off.";
const NUDGE: &str = "Bob becomes uncharacteristically bold";
const NUDGED: &str = "Bob overcomes his bashfulness and twists the carton out of Alice's hands.";

const PIPELINE_LIMIT: Duration = Duration::from_secs(5);
const CHAIN_RUNS: usize = 1000;
const MEMORY_RUNS: usize = 1000;
const MEMORY_STEPS: usize = 30;
const FAULT_RUNS: usize = 200;
const PROMPT_FIXTURES: usize = 50;
const TRUNCATION_RUNS: usize = 200;
const REGEN_RUNS: usize = 100;
const SERDE_RUNS: usize = 500;

type Outcome = Result<String, String>;

fn main() {
    let criteria: [(&str, fn(&mut StdRng) -> Outcome); 9] = [
        ("milk-carton pipeline", milk_pipeline),
        ("situation chain law", chain_law),
        ("memory law", memory_law),
        ("atomicity and crash safety", atomicity),
        ("prompt determinism and content", prompt_content),
        ("truncation oracle", truncation_oracle),
        ("temperature bounds", temperature_bounds),
        ("regeneration locality", regeneration_locality),
        ("serialization idempotence", serialization_idempotence),
    ];
    let mut failed = 0;
    for (n, (name, run)) in criteria.iter().enumerate() {
        let mut rng = StdRng::seed_from_u64(SEED + n as u64);
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run(&mut rng)))
            .unwrap_or_else(|_| Err("panicked".into()));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {} ({name}): {detail} [{secs:.2}s]", n + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {} ({name}): {detail} [{secs:.2}s]", n + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fresh_chain(instr: &mut StoryInstrument, provider: &ScriptedProvider) {
    let stale: Vec<SceneId> = instr.scenes.iter().filter(|s| s.has_stale_chain()).map(|s| s.id.clone()).collect();
    for sid in stale {
        recompute_chain(instr, &sid, provider).unwrap();
    }
}

// 1

fn milk_pipeline(_: &mut StdRng) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let started = Instant::now();
    let script = ScriptedResponses::new()
        .with(PromptKind::Simulate, SIMULATED)
        .with(PromptKind::Nudge, NUDGED)
        .with(PromptKind::SituationUpdate, "Bob holds the last milk carton; Alice is empty-handed.")
        .with(PromptKind::Prose, "Bob's hand closed on the carton before he knew it had moved.");
    let p = ScriptedProvider::new(script);
    let ws = Workspace::open(dir.path()).map_err(|e| e.to_string())?;
    let api = |e: tomb_service::ApiError| format!("{}: {}", e.code, e.message);

    let id = ws
        .create(&ops::CreateProject {
            premise: PREMISE.into(),
            logline: None,
            style_defaults: None,
        })
        .map_err(api)?
        .id;
    for (name, t, v) in [("Alice", "assertiveness", 80), ("Bob", "taciturnity", 90)] {
        ws.add_character(
            &id,
            &ops::AddCharacter {
                name: name.into(),
                description: String::new(),
                traits: vec![TraitScale::new(t, v)],
                goals: vec![],
            },
        )
        .map_err(api)?;
    }
    let sid = ws
        .add_scene(
            &id,
            &ops::AddScene {
                title: "Checkout".into(),
                initial_situation: SITUATION.into(),
                participants: vec!["Alice".into(), "Bob".into()],
            },
        )
        .map_err(api)?
        .id;
    let draft = ws.simulate(&id, &sid, &Default::default(), &p, None).map_err(api)?;
    check(draft.text == SIMULATED, || format!("simulated beat was {:?}", draft.text))?;
    ws.reject(&id, &sid).map_err(api)?;
    let nudge = ops::NudgeBeat {
        nudge: NUDGE.into(),
        gen: GenOptions::default(),
    };
    let draft = ws.nudge(&id, &sid, &nudge, &p, None).map_err(api)?;
    check(draft.text == NUDGED, || format!("nudged beat was {:?}", draft.text))?;
    let nudge_prompt = &p.consumed()[1];
    check(nudge_prompt.user_text.contains(NUDGE), || "nudge missing from prompt".into())?;
    ws.accept(&id, &sid, &Default::default(), &p, None).map_err(api)?;
    ws.render(&id, &sid, &Default::default(), &p, None).map_err(api)?;
    let text = ws.export(&id, &ExportScope::WholeStory, ExportFormat::Plain).map_err(api)?;
    let elapsed = started.elapsed();
    check(text == "Bob's hand closed on the carton before he knew it had moved.\n", || {
        format!("export was {text:?}")
    })?;
    let stored = ws.get(&id).map_err(api)?;
    let beat = &stored.scenes[0].beats[0];
    check(beat.text == NUDGED && beat.nudge_text.as_deref() == Some(NUDGE), || {
        "stored beat does not carry the nudge".into()
    })?;
    check(elapsed < PIPELINE_LIMIT, || format!("pipeline took {elapsed:?}"))?;
    Ok(format!("exact simulated and nudged texts, pipeline {:.0} ms", elapsed.as_secs_f64() * 1000.0))
}

// 2

/// Positions `t` where the non-stale `situations[t + 1]` differs from the
/// scripted update of `(situations[t], beats[t])`. Returns (checked, violations).
fn chain_violations(instr: &StoryInstrument, require_fresh: bool) -> (usize, Vec<String>) {
    let mut checked = 0;
    let mut bad = Vec::new();
    for s in &instr.scenes {
        if s.situations.len() != s.beats.len() + 1 {
            bad.push(format!("{}: {} situations for {} beats", s.id, s.situations.len(), s.beats.len()));
            continue;
        }
        for t in 0..s.beats.len() {
            let next = &s.situations[t + 1];
            if next.stale {
                if require_fresh {
                    bad.push(format!("{}: situation {} still stale", s.id, t + 1));
                }
                continue;
            }
            if next.derivation != Derivation::ProviderUpdate {
                continue;
            }
            checked += 1;
            let want = script_situation(&s.situations[t].text, &s.beats[t].text);
            if next.text != want {
                bad.push(format!("{}: situation {} is {:?}, want {want:?}", s.id, t + 1, next.text));
            }
        }
    }
    (checked, bad)
}

fn chain_law(rng: &mut StdRng) -> Outcome {
    let provider = world_provider();
    let mut checked = 0;
    let mut violations = Vec::new();
    let mut stale_runs = 0;
    for _ in 0..CHAIN_RUNS {
        let mut instr = random_instrument(rng, Shape::default());
        let (c, v) = chain_violations(&instr, false);
        checked += c;
        violations.extend(v);
        if instr.scenes.iter().any(|s| s.has_stale_chain()) {
            stale_runs += 1;
            fresh_chain(&mut instr, &provider);
            let (c, v) = chain_violations(&instr, true);
            checked += c;
            violations.extend(v);
        }
    }
    check(violations.is_empty(), || {
        format!("{} violations, first: {}", violations.len(), violations[0])
    })?;
    Ok(format!(
        "{CHAIN_RUNS} instruments, {checked} transitions checked ({stale_runs} recomputed after edits), 0 violations"
    ))
}

// 3

type Source = (SceneId, usize);

fn memory_law_violation(instr: &StoryInstrument) -> Option<String> {
    for c in &instr.characters {
        let mut actual: Vec<Source> = Vec::new();
        for m in &c.memories {
            if m.condensed {
                actual.extend(m.condensed_sources.iter().map(|s| (s.scene.clone(), s.beat_index)));
            } else {
                actual.push((m.source_scene.clone(), m.source_beat_index));
            }
        }
        let set: BTreeSet<Source> = actual.iter().cloned().collect();
        if set.len() != actual.len() {
            return Some(format!("{} remembers a beat twice", c.id));
        }
        let expected: BTreeSet<Source> = instr
            .scenes
            .iter()
            .flat_map(|s| {
                s.beats
                    .iter()
                    .filter(|b| b.participants.contains(&c.id))
                    .map(|b| (s.id.clone(), b.index))
            })
            .collect();
        if set != expected {
            return Some(format!("{}: memories {set:?}, accepted beats {expected:?}", c.id));
        }
    }
    None
}

fn random_step(rng: &mut StdRng, instr: &mut StoryInstrument, provider: &ScriptedProvider) -> &'static str {
    let sid = instr.scenes.choose(rng).unwrap().id.clone();
    let params = random_params(rng);
    let n_beats = instr.scene(&sid).unwrap().beats.len();
    // Errors such as DRAFT_ALREADY_PENDING or STALE_CHAIN are expected
    // outcomes of random sequences; the law must hold either way.
    match rng.random_range(0..9) {
        0 => {
            let _ = simulate_next_beat(instr, &sid, &params, provider);
            "simulate"
        }
        1 => {
            let _ = nudge_next_beat(instr, &sid, &random_text(rng, 5), &params, provider);
            "nudge"
        }
        2 => {
            let polish = rng.random_bool(0.3);
            let _ = author_beat(instr, &sid, &random_text(rng, 8), polish, &params, polish.then_some(provider));
            "author"
        }
        3 | 4 => {
            if rng.random_bool(0.3) {
                let all: Vec<CharacterId> = instr.scene(&sid).unwrap().participants.iter().cloned().collect();
                let k = rng.random_range(1..=all.len());
                let _ = set_draft_participants(instr, &sid, all.choose_multiple(rng, k).cloned().collect());
            }
            let _ = accept_beat(instr, &sid, provider);
            "accept"
        }
        5 => {
            let _ = reject_beat(instr, &sid);
            "reject"
        }
        6 if n_beats > 0 => {
            let _ = edit_beat(instr, &sid, rng.random_range(0..n_beats), &random_text(rng, 6));
            "edit"
        }
        7 => {
            let _ = recompute_chain(instr, &sid, provider);
            "recompute"
        }
        _ => {
            let cid = instr.characters.choose(rng).unwrap().id.clone();
            let _ = condense_memories(instr, &cid, rng.random_range(0..=4), provider);
            "condense"
        }
    }
}

fn memory_law(rng: &mut StdRng) -> Outcome {
    let provider = world_provider();
    let mut ops: BTreeMap<&str, usize> = BTreeMap::new();
    let mut beats = 0;
    for run in 0..MEMORY_RUNS {
        let mut instr = random_skeleton(rng, Shape::default());
        for step in 0..MEMORY_STEPS {
            let op = random_step(rng, &mut instr, &provider);
            *ops.entry(op).or_default() += 1;
            if let Some(v) = memory_law_violation(&instr) {
                return Err(format!("run {run}, step {step} after {op}: {v}"));
            }
        }
        beats += instr.scenes.iter().map(|s| s.beats.len()).sum::<usize>();
    }
    Ok(format!(
        "{MEMORY_RUNS} sequences x {MEMORY_STEPS} steps, {beats} accepted beats, ops {ops:?}, 0 violations"
    ))
}

// 4

fn random_fresh_instrument(rng: &mut StdRng, provider: &ScriptedProvider) -> StoryInstrument {
    let mut instr = random_instrument(rng, Shape::default());
    fresh_chain(&mut instr, provider);
    instr
}

fn atomicity(rng: &mut StdRng) -> Outcome {
    let provider = world_provider();
    let root = tempfile::tempdir().unwrap();
    let failures = [
        ScriptedFailure::AuthFailed,
        ScriptedFailure::RateLimited,
        ScriptedFailure::Timeout,
        ScriptedFailure::ServerError,
        ScriptedFailure::MalformedResponse,
        ScriptedFailure::ContentFiltered,
    ];
    let (mut accept_faults, mut save_faults) = (0, 0);
    for run in 0..FAULT_RUNS {
        let mut instr = random_fresh_instrument(rng, &provider);
        let sid = instr.scenes.choose(rng).unwrap().id.clone();
        if instr.scene(&sid).unwrap().draft.is_none() {
            author_beat(&mut instr, &sid, &random_text(rng, 6), false, &random_params(rng), None).unwrap();
        }
        let dir = root.path().join(format!("run-{run}"));
        let mut store = ProjectStore::open(&dir).unwrap();
        store.save(&instr).unwrap();
        let before = store.load_bytes(&instr.id).unwrap();

        if run % 2 == 0 {
            // A failed accept through the service layer leaves the file alone.
            accept_faults += 1;
            let failing = ScriptedProvider::new(ScriptedResponses::new());
            if rng.random_bool(0.8) {
                failing.push_failure(PromptKind::SituationUpdate, *failures.choose(rng).unwrap());
            } else {
                failing.push(PromptKind::SituationUpdate, "   ");
            }
            let ws = Workspace::open(&dir).unwrap();
            let err = ws.accept(&instr.id, &sid, &Default::default(), &failing, None);
            check(err.is_err(), || format!("run {run}: accept succeeded with a failing provider"))?;
            // The in-memory engine is just as strict.
            let mut copy = instr.clone();
            failing.push_failure(PromptKind::SituationUpdate, ScriptedFailure::Timeout);
            check(accept_beat(&mut copy, &sid, &failing).is_err() && copy == instr, || {
                format!("run {run}: failed accept changed the instrument")
            })?;
        } else {
            save_faults += 1;
            let mut next = instr.clone();
            let _ = simulate_next_beat(&mut next, &sid, &random_params(rng), &provider);
            accept_beat(&mut next, &sid, &provider).unwrap();
            let new_bytes = serialize(&next).unwrap();
            let fault = if rng.random_bool(0.5) {
                SaveFault::PartialTempWrite(rng.random_range(0..new_bytes.len()))
            } else {
                SaveFault::BeforeRename
            };
            check(store.save_with_fault(&next, fault).is_err(), || format!("run {run}: faulty save reported success"))?;
        }

        // As after a restart: a fresh store over the same directory.
        let reopened = ProjectStore::open(&dir).unwrap();
        let after = reopened.load_bytes(&instr.id).unwrap();
        check(after == before, || format!("run {run}: stored bytes changed"))?;
        let loaded = deserialize(&after).map_err(|e| format!("run {run}: {e}"))?;
        check(validate_instrument(&loaded).findings.is_empty(), || format!("run {run}: stored version invalid"))?;
        check(reopened.list().len() == 1, || format!("run {run}: temp files leaked into the index"))?;
    }
    Ok(format!(
        "{FAULT_RUNS} faults ({accept_faults} failed accepts, {save_faults} interrupted saves), stored bytes unchanged in all"
    ))
}

// 5

fn block<'a>(user_text: &'a str, title: &str) -> Option<&'a str> {
    let header = format!("<<<{title}>>>\n");
    let start = user_text.find(&header)? + header.len();
    let rest = &user_text[start..];
    let body = match rest.find("\n<<<") {
        Some(end) => &rest[..end],
        None => rest,
    };
    Some(body.strip_suffix('\n').unwrap_or(body))
}

fn prompt_content(rng: &mut StdRng) -> Outcome {
    let provider = world_provider();
    let mut memories_checked = 0;
    for fixture in 0..PROMPT_FIXTURES {
        let instr = random_fresh_instrument(rng, &provider);
        let scene = instr.scenes.choose(rng).unwrap();
        let mut params = random_params(rng);
        params.context_budget = u32::MAX;
        let nudge = format!("{} \"now\"", random_text(rng, 6));
        let sim = |i: &StoryInstrument| build_simulation_prompt(i, &scene.id, &params).unwrap();
        let nud = |i: &StoryInstrument| build_nudge_prompt(i, &scene.id, &nudge, &params).unwrap();

        for (kind, build) in [("simulate", &sim as &dyn Fn(&StoryInstrument) -> PromptBundle), ("nudge", &nud)] {
            let first = build(&instr);
            let again = build(&instr.clone());
            let bytes = |b: &PromptBundle| serde_json::to_vec(b).unwrap();
            check(bytes(&first) == bytes(&again), || format!("fixture {fixture}: {kind} prompt not deterministic"))?;
            let text = &first.user_text;
            let fail = |what: String| format!("fixture {fixture} {kind}: {what}");

            check(block(text, "PREMISE") == Some(instr.premise.text.as_str()), || fail("premise missing".into()))?;
            let people: Vec<_> = instr.characters.iter().filter(|c| scene.participants.contains(&c.id)).collect();
            for c in &people {
                check(text.contains(&format!("Name: {}\n", c.name)), || fail(format!("{} missing", c.name)))?;
                for t in &c.traits {
                    let line = format!("\n  {}: {}/100\n", t.name, t.value);
                    check(text.contains(&line), || fail(format!("trait line {line:?} missing")))?;
                }
            }
            check(block(text, "CURRENT SITUATION") == Some(scene.current_situation().text.as_str()), || {
                fail("current situation missing".into())
            })?;
            if kind == "nudge" {
                check(block(text, "NUDGE") == Some(nudge.as_str()), || fail("nudge not verbatim".into()))?;
            }

            // Every non-stale memory, oldest first.
            let mut expected: Vec<((u32, usize), bool, &str)> = people
                .iter()
                .flat_map(|c| c.memories.iter().filter(|m| !m.stale))
                .map(|m| (instr.memory_key(&m.source_scene, m.source_beat_index), !m.condensed, m.text.as_str()))
                .collect();
            expected.sort();
            expected.dedup();
            let stale = people.iter().flat_map(|c| &c.memories).filter(|m| m.stale).count();
            check(stale == 0, || fail("fresh fixture has stale memories".into()))?;
            if expected.is_empty() {
                check(block(text, "MEMORIES").is_none(), || fail("empty memories block".into()))?;
                continue;
            }
            let mem = block(text, "MEMORIES").ok_or_else(|| fail("memories block missing".into()))?;
            let mem = format!("{mem}\n");
            let mut at = 0;
            for (_, _, m) in &expected {
                let pos = mem[at..].find(&format!(") {m}\n"));
                let pos = pos.ok_or_else(|| fail(format!("memory {m:?} missing or out of order")))?;
                at += pos + 1;
                memories_checked += 1;
            }
        }
    }
    Ok(format!(
        "{PROMPT_FIXTURES} fixtures x 2 kinds byte-identical on rebuild; premise, traits, situation, nudge and {memories_checked} memories in order"
    ))
}

// 6

fn oracle_render(elements: &[&PromptElement]) -> String {
    let mut out = String::new();
    let mut block = None;
    let mut label = None;
    for e in elements {
        if block != Some(e.block) {
            if block.is_some() {
                out += "\n";
            }
            out += &format!("<<<{}>>>\n", e.block_title);
            block = Some(e.block);
            label = None;
        }
        let wanted = match e.role {
            ElementRole::Trait => Some("Traits:"),
            ElementRole::Goal => Some("Goals:"),
            _ => None,
        };
        if wanted.is_some() && wanted != label {
            out += wanted.unwrap();
            out += "\n";
            label = wanted;
        }
        out += &e.text;
        out += "\n";
    }
    out
}

fn tokens(system: &str, user: &str) -> usize {
    (system.chars().count() + user.chars().count()).div_ceil(4)
}

fn drop_rank(role: ElementRole) -> Option<u8> {
    match role {
        ElementRole::PriorBeat => Some(0),
        ElementRole::Memory => Some(1),
        ElementRole::Description => Some(2),
        _ => None,
    }
}

/// Greedy oracle: drop candidates in priority order, re-rendering the whole
/// prompt after each, until it fits. `None` when even dropping all of them
/// is not enough.
fn greedy_keep(full: &PromptBundle, budget: usize) -> Option<Vec<bool>> {
    let mut keep = vec![true; full.elements.len()];
    let mut order: Vec<(u8, usize)> = full
        .elements
        .iter()
        .enumerate()
        .filter_map(|(i, e)| drop_rank(e.role).map(|r| (r, i)))
        .collect();
    order.sort();
    let render = |keep: &[bool]| {
        let kept: Vec<&PromptElement> = full.elements.iter().zip(keep).filter(|(_, k)| **k).map(|(e, _)| e).collect();
        tokens(&full.system_text, &oracle_render(&kept))
    };
    for (_, i) in order {
        if render(&keep) <= budget {
            return Some(keep);
        }
        keep[i] = false;
    }
    (render(&keep) <= budget).then_some(keep)
}

fn truncation_oracle(rng: &mut StdRng) -> Outcome {
    let provider = world_provider();
    let (mut satisfiable, mut unsatisfiable, mut dropped_total) = (0, 0, 0);
    let mut run = 0;
    while run < TRUNCATION_RUNS {
        let instr = random_fresh_instrument(rng, &provider);
        let scene = instr.scenes.choose(rng).unwrap();
        let mut params = random_params(rng);
        params.context_budget = u32::MAX;
        let nudge = random_text(rng, 6);
        let simulate = run % 2 == 0;
        let build = |p: &GenParams| {
            if simulate {
                build_simulation_prompt(&instr, &scene.id, p)
            } else {
                build_nudge_prompt(&instr, &scene.id, &nudge, p)
            }
        };
        let full = build(&params).unwrap();
        check(full.user_text == oracle_render(&full.elements.iter().collect::<Vec<_>>()), || {
            format!("run {run}: oracle renderer disagrees on the untruncated prompt")
        })?;
        let full_tokens = tokens(&full.system_text, &full.user_text);
        let all_dropped = {
            let kept: Vec<&PromptElement> = full.elements.iter().filter(|e| drop_rank(e.role).is_none()).collect();
            tokens(&full.system_text, &oracle_render(&kept))
        };
        if all_dropped >= full_tokens {
            continue; // nothing droppable; not an interesting bundle
        }
        run += 1;
        let budget = if rng.random_bool(0.1) {
            rng.random_range(1..all_dropped)
        } else {
            rng.random_range(all_dropped..full_tokens)
        };
        params.context_budget = budget as u32;
        let got = truncate_context(&full, budget);
        // The builder records the budget it was given; nothing else may differ.
        let built = build(&params).map(|mut b| {
            b.params.context_budget = u32::MAX;
            b
        });
        check(got == built, || format!("run {run}: builder and truncate_context disagree"))?;

        match (greedy_keep(&full, budget), got) {
            (None, Err(e)) => {
                check(e.code() == "BUDGET_UNSATISFIABLE", || format!("run {run}: error {}", e.code()))?;
                unsatisfiable += 1;
            }
            (Some(keep), Ok(cut)) => {
                let want: Vec<&PromptElement> =
                    full.elements.iter().zip(&keep).filter(|(_, k)| **k).map(|(e, _)| e).collect();
                check(cut.elements.iter().eq(want.iter().copied()), || {
                    format!("run {run}: retained set differs from the oracle at budget {budget}")
                })?;
                check(cut.user_text == oracle_render(&want), || format!("run {run}: rendered text differs"))?;
                check(tokens(&cut.system_text, &cut.user_text) <= budget, || format!("run {run}: over budget"))?;
                let protected_kept = full
                    .elements
                    .iter()
                    .filter(|e| drop_rank(e.role).is_none())
                    .all(|e| cut.elements.contains(e));
                check(protected_kept, || format!("run {run}: a protected element was dropped"))?;
                let dropped = keep.iter().filter(|k| !**k).count();
                check(cut.dropped_sections.len() == dropped, || format!("run {run}: dropped_sections incomplete"))?;
                dropped_total += dropped;
                satisfiable += 1;
            }
            (want, got) => {
                return Err(format!(
                    "run {run}: oracle fits={} but truncation returned {}",
                    want.is_some(),
                    match got {
                        Ok(_) => "a prompt".to_string(),
                        Err(e) => e.code().to_string(),
                    }
                ))
            }
        }
    }
    Ok(format!(
        "{TRUNCATION_RUNS} over-budget bundles ({satisfiable} fitted, {dropped_total} elements dropped, {unsatisfiable} unsatisfiable), all match the oracle"
    ))
}

// 7

const BAD_TEMPERATURES: [f64; 6] = [0.0, 0.09, 0.0999, 2.0001, 2.01, -1.0];
const GOOD_TEMPERATURES: [f64; 3] = [0.1, 1.0, 2.0];

fn temperature_engine() -> Result<usize, String> {
    let provider = world_provider();
    let mut rng = StdRng::seed_from_u64(7);
    let mut instr = random_skeleton(&mut rng, Shape::default());
    let sid = instr.scenes[0].id.clone();
    let mut checks = 0;
    let params = |t: f64| GenParams {
        temperature: t,
        adherence: Adherence::Moderate,
        context_budget: 6000,
    };
    for t in BAD_TEMPERATURES.into_iter().chain([f64::NAN, f64::INFINITY]) {
        let p = params(t);
        let codes = [
            simulate_next_beat(&mut instr, &sid, &p, &provider).map(|_| ()),
            nudge_next_beat(&mut instr, &sid, "The door", &p, &provider).map(|_| ()),
            author_beat(&mut instr, &sid, "The door", true, &p, Some(&provider)).map(|_| ()),
        ];
        for r in codes {
            let code = r.err().map(|e| e.code());
            check(code == Some("TEMPERATURE_OUT_OF_RANGE"), || format!("engine accepted {t} ({code:?})"))?;
            checks += 1;
        }
        check(GenParams::new(t, Adherence::Loose, 10).is_err(), || format!("GenParams::new accepted {t}"))?;
    }
    for t in GOOD_TEMPERATURES {
        simulate_next_beat(&mut instr, &sid, &params(t), &provider).map_err(|e| format!("engine rejected {t}: {e}"))?;
        reject_beat(&mut instr, &sid).unwrap();
        checks += 1;
    }
    Ok(checks)
}

fn temperature_service() -> Result<usize, String> {
    let dir = tempfile::tempdir().unwrap();
    let rt = tokio::runtime::Runtime::new().unwrap();
    let state = AppState::new(dir.path(), Some(Arc::new(world_provider())), 4).unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    rt.spawn(async move { axum::serve(listener, router(state)).await.unwrap() });

    let client = reqwest::blocking::Client::new();
    let post = |path: &str, body: Value| -> (u16, Value) {
        let r = client.post(format!("{base}{path}")).json(&body).send().unwrap();
        let status = r.status().as_u16();
        (status, r.json().unwrap_or(Value::Null))
    };
    let (_, v) = post("/projects", json!({ "premise": PREMISE }));
    let pid = v["project"]["id"].as_str().unwrap().to_string();
    post(&format!("/projects/{pid}/characters"), json!({ "name": "Alice" }));
    let (_, v) = post(
        &format!("/projects/{pid}/scenes"),
        json!({ "initial_situation": SITUATION, "participants": ["Alice"] }),
    );
    let scene = format!("/projects/{pid}/scenes/{}", v["scene"]["id"].as_str().unwrap());
    let mut checks = 0;
    for t in BAD_TEMPERATURES {
        for action in ["simulate", "nudge", "author"] {
            let (status, v) = post(
                &format!("{scene}/beats:{action}"),
                json!({ "temperature": t, "nudge": "The door", "text": "The door", "polish": true }),
            );
            check(status == 422 && v["error"]["code"] == "TEMPERATURE_OUT_OF_RANGE", || {
                format!("service answered {status} {v} for {action} at {t}")
            })?;
            checks += 1;
        }
    }
    for t in GOOD_TEMPERATURES {
        let (status, v) = post(&format!("{scene}/beats:simulate"), json!({ "temperature": t }));
        check(status == 200 && v["draft"]["params"]["temperature"] == json!(t), || {
            format!("service answered {status} {v} at {t}")
        })?;
        post(&format!("{scene}/beats:reject"), json!({}));
        checks += 1;
    }
    Ok(checks)
}

fn temperature_cli() -> Result<usize, String> {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("replies.script");
    std::fs::write(
        &script,
        (0..GOOD_TEMPERATURES.len())
            .map(|_| "[[response]]\nkind = \"simulate\"\ntext = \"The clerk waits.\"\n\n")
            .collect::<String>(),
    )
    .unwrap();
    let data = dir.path().join("data");
    let tomb = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_tomb"))
            .env("TOMB_DATA_DIR", &data)
            .args(args)
            .output()
            .unwrap()
    };
    tomb(&["new", "--premise", PREMISE]);
    tomb(&["character", "add", "--name", "Alice"]);
    tomb(&["scene", "add", "--situation", SITUATION, "--participant", "Alice"]);
    let mut checks = 0;
    for t in BAD_TEMPERATURES {
        let ts = t.to_string();
        for args in [vec!["beat", "simulate"], vec!["beat", "nudge", "The door"], vec!["beat", "author", "--polish", "x"]] {
            let mut all = vec!["--json", "--temperature", &ts];
            all.extend(args);
            let out = tomb(&all);
            let v: Value = serde_json::from_slice(&out.stdout).unwrap_or(Value::Null);
            check(out.status.code() == Some(1) && v["error"]["code"] == "TEMPERATURE_OUT_OF_RANGE", || {
                format!("cli exited {:?} with {v} at {t}", out.status.code())
            })?;
            checks += 1;
        }
    }
    let script = script.to_str().unwrap();
    for t in GOOD_TEMPERATURES {
        let ts = t.to_string();
        let out = tomb(&["--json", "--scripted", script, "--temperature", &ts, "beat", "simulate"]);
        let v: Value = serde_json::from_slice(&out.stdout).unwrap_or(Value::Null);
        check(out.status.success() && v["draft"]["params"]["temperature"] == json!(t), || {
            format!("cli rejected {t}: {v} {}", String::from_utf8_lossy(&out.stderr))
        })?;
        tomb(&["beat", "reject"]);
        checks += 1;
    }
    Ok(checks)
}

fn temperature_bounds(_: &mut StdRng) -> Outcome {
    let engine = temperature_engine()?;
    let service = temperature_service()?;
    let cli = temperature_cli()?;
    Ok(format!(
        "TEMPERATURE_OUT_OF_RANGE at engine ({engine} checks), service ({service}), cli ({cli}); 0.1 and 2.0 accepted"
    ))
}

// 8

fn random_document(rng: &mut StdRng, provider: &ScriptedProvider) -> StoryInstrument {
    let mut instr = random_skeleton(rng, Shape::default());
    let scenes: Vec<SceneId> = instr.scenes.iter().map(|s| s.id.clone()).collect();
    for sid in &scenes {
        let n = rng.random_range(1..=Shape::default().max_beats);
        for _ in 0..n {
            grow_beat(rng, &mut instr, sid, provider);
        }
        render_scene(&mut instr, sid, &random_style(rng), provider).unwrap();
        for _ in 0..rng.random_range(0..=2) {
            edit_segment(&mut instr, sid, rng.random_range(0..n), &random_text(rng, 6)).unwrap();
        }
    }
    instr
}

fn segment_bytes(instr: &StoryInstrument) -> BTreeMap<(SceneId, usize), Vec<u8>> {
    let mut out = BTreeMap::new();
    for s in &instr.scenes {
        for (i, seg) in s.prose.iter().flat_map(|d| d.segments.iter().enumerate()) {
            out.insert((s.id.clone(), i), serde_json::to_vec(seg).unwrap());
        }
    }
    out
}

fn regeneration_locality(rng: &mut StdRng) -> Outcome {
    let provider = world_provider();
    let mut compared = 0;
    for run in 0..REGEN_RUNS {
        let mut instr = random_document(rng, &provider);
        let scene = instr.scenes.choose(rng).unwrap();
        let sid = scene.id.clone();
        let i = rng.random_range(0..scene.beats.len());
        let before = segment_bytes(&instr);
        let style = if rng.random_bool(0.5) { random_style(rng) } else { StyleParams::default() };
        regenerate_segment(&mut instr, &sid, i, &style, ContinuityMode::Loose, &provider)
            .map_err(|e| format!("run {run}: {e}"))?;
        let after = segment_bytes(&instr);
        check(before.len() == after.len(), || format!("run {run}: segment count changed"))?;
        for (key, bytes) in &before {
            if *key == (sid.clone(), i) {
                check(after[key] != *bytes, || format!("run {run}: segment {i} did not change"))?;
            } else {
                check(after[key] == *bytes, || format!("run {run}: segment {key:?} changed"))?;
                compared += 1;
            }
        }
    }
    Ok(format!("{REGEN_RUNS} documents, {compared} untouched segments byte-identical"))
}

// 9

fn serialization_idempotence(rng: &mut StdRng) -> Outcome {
    let mut bytes_total = 0;
    for run in 0..SERDE_RUNS {
        let instr = random_instrument(rng, Shape::default());
        let first = serialize(&instr).map_err(|e| format!("run {run}: {e}"))?;
        let back = deserialize(&first).map_err(|e| format!("run {run}: {e}"))?;
        let second = serialize(&back).map_err(|e| format!("run {run}: {e}"))?;
        check(first == second, || format!("run {run}: bytes differ after a round trip"))?;
        check(back == instr, || format!("run {run}: value differs after a round trip"))?;
        bytes_total += first.len();
    }
    Ok(format!("{SERDE_RUNS} instruments ({} KiB) byte-stable", bytes_total / 1024))
}
