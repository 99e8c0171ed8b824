//! Project operations shared by the HTTP handlers and the CLI. Each mutation
//! runs under its project's lock: load, apply, re-validate, save. A failed
//! operation leaves the stored file untouched.

use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use tomb_core::engine::{self, RecomputeOutcome};
use tomb_core::model::{
    create_instrument, Adherence, Beat, Character, CharacterId, CharacterPatch, DraftBeat, GenParams, ProjectId,
    ProseDocument, ProseSegment, Scene, SceneId, ScenePatch, SituationState, StoryInstrument, StyleParams,
    TraitScale,
};
use tomb_core::provider::CompletionProvider;
use tomb_core::prose::{self, ContinuityMode, ExportFormat, ExportScope};
use tomb_core::store::{ProjectStore, ProjectSummary};
use tomb_core::validate_instrument;

use crate::error::ApiError;
use crate::events::{GenerationHandle, Phase};
use crate::provider::ObservedProvider;

/// Optional generation settings; missing fields take their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenOptions {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adherence: Option<Adherence>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_budget: Option<u32>,
}

impl GenOptions {
    pub fn params(&self) -> Result<GenParams, ApiError> {
        let d = GenParams::default();
        Ok(GenParams::new(
            self.temperature.unwrap_or(d.temperature),
            self.adherence.unwrap_or(d.adherence),
            self.context_budget.unwrap_or(d.context_budget),
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateProject {
    pub premise: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logline: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style_defaults: Option<StyleParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AddCharacter {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub traits: Vec<TraitScale>,
    #[serde(default)]
    pub goals: Vec<String>,
}

/// Participants are given by character id or exact name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AddScene {
    #[serde(default)]
    pub title: String,
    pub initial_situation: String,
    pub participants: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EditScene {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_situation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub participants: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimulateBeat {
    #[serde(flatten)]
    pub gen: GenOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NudgeBeat {
    pub nudge: String,
    #[serde(flatten)]
    pub gen: GenOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthorBeat {
    pub text: String,
    #[serde(default)]
    pub polish: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub participants: Option<Vec<String>>,
    #[serde(flatten)]
    pub gen: GenOptions,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptBeat {
    /// Replaces the draft's proposed participants before accepting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub participants: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditText {
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RenderScene {
    /// Defaults to the project's style defaults.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style: Option<StyleParams>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegenerateSegment {
    /// Defaults to the document's style.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style: Option<StyleParams>,
    #[serde(default)]
    pub continuity: ContinuityMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptResult {
    pub beat: Beat,
    pub situation: SituationState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecomputeResult {
    pub recomputed: usize,
    pub failure: Option<ApiError>,
    pub scene: Scene,
}

/// Parses the `scope` export parameter: `story` or a scene id.
pub fn parse_scope(scope: Option<&str>) -> ExportScope {
    match scope {
        None | Some("story") | Some("") => ExportScope::WholeStory,
        Some(id) => ExportScope::Scene(SceneId::from(id)),
    }
}

pub fn parse_format(format: Option<&str>) -> Result<ExportFormat, ApiError> {
    match format {
        None | Some("plain") | Some("txt") => Ok(ExportFormat::Plain),
        Some("markdown") | Some("md") => Ok(ExportFormat::Markdown),
        Some(other) => Err(ApiError::bad_request(format!("unknown export format {other:?}"))),
    }
}

fn resolve(instr: &StoryInstrument, refs: &[String]) -> Result<BTreeSet<CharacterId>, ApiError> {
    refs.iter()
        .map(|r| {
            let id = CharacterId::from(r.as_str());
            if instr.character(&id).is_some() {
                return Ok(id);
            }
            instr
                .character_by_name(r)
                .map(|c| c.id.clone())
                .ok_or_else(|| ApiError::new("UNKNOWN_CHARACTER", format!("unknown character {r:?}")))
        })
        .collect()
}

fn scene_of(instr: &StoryInstrument, sid: &SceneId) -> Result<Scene, ApiError> {
    Ok(instr.require_scene(sid)?.clone())
}

pub struct Workspace {
    store: Mutex<ProjectStore>,
    locks: Mutex<HashMap<ProjectId, Arc<Mutex<()>>>>,
}

impl Workspace {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, ApiError> {
        Ok(Self {
            store: Mutex::new(ProjectStore::open(root)?),
            locks: Mutex::new(HashMap::new()),
        })
    }

    fn lock_for(&self, id: &ProjectId) -> Arc<Mutex<()>> {
        self.locks.lock().unwrap().entry(id.clone()).or_default().clone()
    }

    pub fn list(&self) -> Vec<ProjectSummary> {
        self.store.lock().unwrap().list()
    }

    pub fn get(&self, id: &ProjectId) -> Result<StoryInstrument, ApiError> {
        Ok(self.store.lock().unwrap().load(id)?)
    }

    pub fn create(&self, req: &CreateProject) -> Result<StoryInstrument, ApiError> {
        let mut instr = create_instrument(&req.premise, req.style_defaults.clone().unwrap_or_default())?;
        instr.premise.logline = req.logline.clone().filter(|l| !l.trim().is_empty());
        self.save(&instr)?;
        Ok(instr)
    }

    pub fn delete(&self, id: &ProjectId) -> Result<(), ApiError> {
        let lock = self.lock_for(id);
        let _guard = lock.lock().unwrap();
        Ok(self.store.lock().unwrap().delete(id)?)
    }

    fn save(&self, instr: &StoryInstrument) -> Result<(), ApiError> {
        let report = validate_instrument(instr);
        if !report.is_empty() {
            return Err(ApiError::invalid(report));
        }
        Ok(self.store.lock().unwrap().save(instr)?)
    }

    /// Load, apply `f`, re-validate, save; all under the project's lock.
    pub fn mutate<T>(
        &self,
        id: &ProjectId,
        f: impl FnOnce(&mut StoryInstrument) -> Result<T, ApiError>,
    ) -> Result<T, ApiError> {
        let lock = self.lock_for(id);
        let _guard = lock.lock().unwrap();
        let mut instr = self.get(id)?;
        let out = f(&mut instr)?;
        self.save(&instr)?;
        Ok(out)
    }

    fn generate<T>(
        &self,
        id: &ProjectId,
        provider: &dyn CompletionProvider,
        progress: Option<&GenerationHandle>,
        f: impl FnOnce(&mut StoryInstrument, &dyn CompletionProvider) -> Result<T, ApiError>,
    ) -> Result<T, ApiError> {
        self.mutate(id, |instr| {
            let out = match progress {
                Some(h) => {
                    h.emit(Phase::Prompting, None);
                    f(instr, &ObservedProvider::new(provider, h))?
                }
                None => f(instr, provider)?,
            };
            if let Some(h) = progress {
                h.emit(Phase::Parsing, None);
            }
            Ok(out)
        })
    }

    pub fn add_character(&self, id: &ProjectId, req: &AddCharacter) -> Result<Character, ApiError> {
        self.mutate(id, |instr| {
            let cid = instr.add_character(&req.name, &req.description, req.traits.clone(), req.goals.clone())?;
            Ok(instr.character(&cid).cloned().expect("just added"))
        })
    }

    pub fn edit_character(&self, id: &ProjectId, cid: &CharacterId, patch: &CharacterPatch) -> Result<Character, ApiError> {
        self.mutate(id, |instr| {
            instr.edit_character(cid, patch.clone())?;
            Ok(instr.character(cid).cloned().expect("just edited"))
        })
    }

    pub fn add_scene(&self, id: &ProjectId, req: &AddScene) -> Result<Scene, ApiError> {
        self.mutate(id, |instr| {
            let participants = resolve(instr, &req.participants)?;
            let sid = instr.add_scene(&req.title, &req.initial_situation, participants)?;
            scene_of(instr, &sid)
        })
    }

    pub fn edit_scene(&self, id: &ProjectId, sid: &SceneId, req: &EditScene) -> Result<Scene, ApiError> {
        self.mutate(id, |instr| {
            let participants = req.participants.as_deref().map(|p| resolve(instr, p)).transpose()?;
            let patch = ScenePatch {
                title: req.title.clone(),
                initial_situation: req.initial_situation.clone(),
                participants,
            };
            instr.edit_scene(sid, patch)?;
            scene_of(instr, sid)
        })
    }

    pub fn simulate(
        &self,
        id: &ProjectId,
        sid: &SceneId,
        req: &SimulateBeat,
        provider: &dyn CompletionProvider,
        progress: Option<&GenerationHandle>,
    ) -> Result<DraftBeat, ApiError> {
        let params = req.gen.params()?;
        self.generate(id, provider, progress, |instr, p| {
            Ok(engine::simulate_next_beat(instr, sid, &params, p)?)
        })
    }

    pub fn nudge(
        &self,
        id: &ProjectId,
        sid: &SceneId,
        req: &NudgeBeat,
        provider: &dyn CompletionProvider,
        progress: Option<&GenerationHandle>,
    ) -> Result<DraftBeat, ApiError> {
        let params = req.gen.params()?;
        self.generate(id, provider, progress, |instr, p| {
            Ok(engine::nudge_next_beat(instr, sid, &req.nudge, &params, p)?)
        })
    }

    pub fn author(
        &self,
        id: &ProjectId,
        sid: &SceneId,
        req: &AuthorBeat,
        provider: Option<&dyn CompletionProvider>,
        progress: Option<&GenerationHandle>,
    ) -> Result<DraftBeat, ApiError> {
        let params = req.gen.params()?;
        let run = |instr: &mut StoryInstrument, p: Option<&dyn CompletionProvider>| -> Result<DraftBeat, ApiError> {
            let participants = req.participants.as_deref().map(|r| resolve(instr, r)).transpose()?;
            let mut draft = engine::author_beat(instr, sid, &req.text, req.polish, &params, p)?;
            if let Some(parts) = participants {
                engine::set_draft_participants(instr, sid, parts)?;
                draft = instr.require_scene(sid)?.draft.clone().expect("draft just stored");
            }
            Ok(draft)
        };
        match provider {
            Some(provider) if req.polish => self.generate(id, provider, progress, |instr, p| run(instr, Some(p))),
            _ => self.mutate(id, |instr| run(instr, None)),
        }
    }

    pub fn accept(
        &self,
        id: &ProjectId,
        sid: &SceneId,
        req: &AcceptBeat,
        provider: &dyn CompletionProvider,
        progress: Option<&GenerationHandle>,
    ) -> Result<AcceptResult, ApiError> {
        self.generate(id, provider, progress, |instr, p| {
            if let Some(refs) = &req.participants {
                let parts = resolve(instr, refs)?;
                engine::set_draft_participants(instr, sid, parts)?;
            }
            let index = engine::accept_beat(instr, sid, p)?;
            let scene = instr.require_scene(sid)?;
            Ok(AcceptResult {
                beat: scene.beats[index].clone(),
                situation: scene.situations[index + 1].clone(),
            })
        })
    }

    pub fn reject(&self, id: &ProjectId, sid: &SceneId) -> Result<Scene, ApiError> {
        self.mutate(id, |instr| {
            engine::reject_beat(instr, sid)?;
            scene_of(instr, sid)
        })
    }

    pub fn edit_beat(&self, id: &ProjectId, sid: &SceneId, index: usize, req: &EditText) -> Result<Scene, ApiError> {
        self.mutate(id, |instr| {
            engine::edit_beat(instr, sid, index, &req.text)?;
            scene_of(instr, sid)
        })
    }

    pub fn recompute(
        &self,
        id: &ProjectId,
        sid: &SceneId,
        provider: &dyn CompletionProvider,
        progress: Option<&GenerationHandle>,
    ) -> Result<RecomputeResult, ApiError> {
        self.generate(id, provider, progress, |instr, p| {
            let RecomputeOutcome { recomputed, failure } = engine::recompute_chain(instr, sid, p)?;
            Ok(RecomputeResult {
                recomputed,
                failure: failure.map(ApiError::from),
                scene: scene_of(instr, sid)?,
            })
        })
    }

    pub fn render(
        &self,
        id: &ProjectId,
        sid: &SceneId,
        req: &RenderScene,
        provider: &dyn CompletionProvider,
        progress: Option<&GenerationHandle>,
    ) -> Result<ProseDocument, ApiError> {
        self.generate(id, provider, progress, |instr, p| {
            let style = req.style.clone().unwrap_or_else(|| instr.style_defaults.clone());
            Ok(prose::render_scene(instr, sid, &style, p)?)
        })
    }

    pub fn regenerate_segment(
        &self,
        id: &ProjectId,
        sid: &SceneId,
        index: usize,
        req: &RegenerateSegment,
        provider: &dyn CompletionProvider,
        progress: Option<&GenerationHandle>,
    ) -> Result<ProseSegment, ApiError> {
        self.generate(id, provider, progress, |instr, p| {
            let style = match &req.style {
                Some(s) => s.clone(),
                None => instr
                    .require_scene(sid)?
                    .prose
                    .as_ref()
                    .map(|d| d.style.clone())
                    .unwrap_or_else(|| instr.style_defaults.clone()),
            };
            prose::regenerate_segment(instr, sid, index, &style, req.continuity, p)?;
            segment_of(instr, sid, index)
        })
    }

    pub fn edit_segment(&self, id: &ProjectId, sid: &SceneId, index: usize, req: &EditText) -> Result<ProseSegment, ApiError> {
        self.mutate(id, |instr| {
            prose::edit_segment(instr, sid, index, &req.text)?;
            segment_of(instr, sid, index)
        })
    }

    pub fn export(&self, id: &ProjectId, scope: &ExportScope, format: ExportFormat) -> Result<String, ApiError> {
        let instr = self.get(id)?;
        Ok(prose::export_document(&instr, scope, format)?)
    }
}

fn segment_of(instr: &StoryInstrument, sid: &SceneId, index: usize) -> Result<ProseSegment, ApiError> {
    Ok(instr.require_scene(sid)?.prose.as_ref().expect("document exists").segments[index].clone())
}
