//! `tomb`: headless driver for story instruments. Works on a local data
//! directory or, with `--server`, against a running service.

mod backend;
mod state;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde_json::Value;

use tomb_core::error::Coded;
use tomb_core::model::{
    check_temperature, Adherence, CharacterId, CharacterPatch, GenParams, Intensity, ProjectId, SceneId,
    StoryInstrument, StyleParams, TargetLength, TraitScale,
};
use tomb_core::prompt::{build_nudge_prompt, build_simulation_prompt};
use tomb_core::provider::{CompletionProvider, HttpProvider, ProviderConfig};
use tomb_core::{deserialize, validate_instrument, Finding, FormatError};
use tomb_service::ops::{self, GenOptions, Workspace};
use tomb_service::{ApiError, ServiceConfig, DEFAULT_PROVIDER_CAP};

use backend::{Backend, Op};
use state::{CliState, ScriptSession};

#[derive(Parser)]
#[command(name = "tomb", version, about = "Excavate a story beat by beat, then render it as prose")]
struct Cli {
    /// Project store directory.
    #[arg(long, global = true, env = "TOMB_DATA_DIR", default_value = "tomb-data")]
    data_dir: PathBuf,
    /// Run against a service at this base URL instead of the local store.
    #[arg(long, global = true)]
    server: Option<String>,
    /// Print machine-readable JSON.
    #[arg(long, global = true)]
    json: bool,
    /// Answer completions from this script file instead of a real provider.
    #[arg(long, global = true, value_name = "FILE")]
    scripted: Option<PathBuf>,
    /// Sampling temperature, 0.1 to 2.0.
    #[arg(long, global = true, allow_negative_numbers = true)]
    temperature: Option<f64>,
    /// How closely generations stick to the instrument: loose, moderate or strict.
    #[arg(long, global = true, value_parser = parse_enum::<Adherence>)]
    adherence: Option<Adherence>,
    /// Approximate prompt token budget.
    #[arg(long, global = true)]
    context_budget: Option<u32>,
    /// Project id; defaults to the last one created or selected.
    #[arg(long, global = true)]
    project: Option<String>,
    /// Scene id; defaults to the last one added, or the only scene.
    #[arg(long, global = true)]
    scene: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create a project and make it current.
    New {
        #[arg(long)]
        premise: String,
        #[arg(long)]
        logline: Option<String>,
        #[command(flatten)]
        style: StyleArgs,
    },
    /// List projects.
    List,
    /// Print the current project.
    Show,
    /// Select the current project (and optionally scene).
    Use { project: String },
    #[command(subcommand)]
    Character(CharacterCmd),
    #[command(subcommand)]
    Scene(SceneCmd),
    #[command(subcommand)]
    Beat(BeatCmd),
    /// Recompute stale situations of the scene.
    Recompute,
    /// Render the scene's beats as prose.
    Render {
        #[command(flatten)]
        style: StyleArgs,
    },
    #[command(subcommand)]
    Segment(SegmentCmd),
    /// Export rendered prose.
    Export {
        /// `story` or a scene id.
        #[arg(long, default_value = "story")]
        scope: String,
        /// `plain` or `markdown`.
        #[arg(long, default_value = "plain")]
        format: String,
        /// Write to this file instead of stdout.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Check a project file, or the current project, against the format rules.
    Validate { file: Option<PathBuf> },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: std::net::SocketAddr,
        #[arg(long, default_value_t = DEFAULT_PROVIDER_CAP)]
        provider_cap: usize,
    },
}

#[derive(Subcommand)]
enum CharacterCmd {
    Add {
        #[arg(long)]
        name: String,
        #[arg(long, default_value = "")]
        description: String,
        /// `name=value`, value 0 to 100. Repeatable.
        #[arg(long = "trait", value_parser = parse_trait)]
        traits: Vec<TraitScale>,
        /// Repeatable.
        #[arg(long = "goal")]
        goals: Vec<String>,
    },
    Edit {
        /// Character id or name.
        character: String,
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        description: Option<String>,
        /// Replaces all traits when given.
        #[arg(long = "trait", value_parser = parse_trait)]
        traits: Vec<TraitScale>,
        /// Replaces all goals when given.
        #[arg(long = "goal")]
        goals: Vec<String>,
        #[arg(long)]
        clear_traits: bool,
        #[arg(long)]
        clear_goals: bool,
    },
}

#[derive(Subcommand)]
enum SceneCmd {
    Add {
        #[arg(long, default_value = "")]
        title: String,
        #[arg(long)]
        situation: String,
        /// Character id or name. Repeatable or comma-separated.
        #[arg(long = "participant", value_delimiter = ',', required = true)]
        participants: Vec<String>,
    },
    Edit {
        scene: String,
        #[arg(long)]
        title: Option<String>,
        #[arg(long)]
        situation: Option<String>,
        #[arg(long = "participant", value_delimiter = ',')]
        participants: Vec<String>,
    },
}

#[derive(Subcommand)]
enum BeatCmd {
    /// Draft the next beat by simulating the characters.
    Simulate {
        /// Print the prompt instead of calling the provider.
        #[arg(long)]
        dump_prompt: bool,
    },
    /// Draft the next beat steered by a nudge.
    Nudge {
        text: String,
        #[arg(long)]
        dump_prompt: bool,
    },
    /// Draft the next beat from your own text.
    Author {
        text: String,
        /// Have the provider polish the text.
        #[arg(long)]
        polish: bool,
        #[arg(long = "participant", value_delimiter = ',')]
        participants: Vec<String>,
    },
    /// Accept the pending draft.
    Accept {
        #[arg(long = "participant", value_delimiter = ',')]
        participants: Vec<String>,
    },
    /// Discard the pending draft.
    Reject,
    /// Replace an accepted beat's text.
    Edit { index: usize, text: String },
}

#[derive(Subcommand)]
enum SegmentCmd {
    Regenerate {
        index: usize,
        /// Mark later segments stale.
        #[arg(long)]
        strict: bool,
        #[command(flatten)]
        style: StyleArgs,
    },
    Edit { index: usize, text: String },
}

#[derive(Args, Clone, Default)]
struct StyleArgs {
    #[arg(long)]
    genre: Option<String>,
    #[arg(long)]
    voice: Option<String>,
    /// restrained, moderate or vivid.
    #[arg(long, value_parser = parse_enum::<Intensity>)]
    intensity: Option<Intensity>,
    /// brief, standard or expansive.
    #[arg(long, value_parser = parse_enum::<TargetLength>)]
    length: Option<TargetLength>,
}

impl StyleArgs {
    fn is_empty(&self) -> bool {
        self.genre.is_none() && self.voice.is_none() && self.intensity.is_none() && self.length.is_none()
    }

    fn apply(&self, mut base: StyleParams) -> StyleParams {
        if let Some(g) = &self.genre {
            base.genre = g.clone();
        }
        if let Some(v) = &self.voice {
            base.style = v.clone();
        }
        if let Some(i) = self.intensity {
            base.intensity = i;
        }
        if let Some(l) = self.length {
            base.target_length = l;
        }
        base
    }
}

fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(Value::String(s.to_ascii_lowercase())).map_err(|_| format!("invalid value {s:?}"))
}

fn parse_trait(s: &str) -> Result<TraitScale, String> {
    let (name, value) = s.split_once('=').ok_or("expected name=value")?;
    let value = value.trim().parse().map_err(|_| format!("invalid trait value in {s:?}"))?;
    Ok(TraitScale::new(name.trim(), value))
}

enum CliError {
    Usage(String),
    Api(ApiError),
}

impl From<ApiError> for CliError {
    fn from(e: ApiError) -> Self {
        CliError::Api(e)
    }
}

struct Ctx<'a> {
    cli: &'a Cli,
    backend: Backend<'a>,
    state: CliState,
}

impl Ctx<'_> {
    fn project(&self) -> Result<ProjectId, CliError> {
        self.cli
            .project
            .clone()
            .or_else(|| self.state.current_project.clone())
            .map(|p| ProjectId::from(p.as_str()))
            .ok_or_else(|| CliError::Usage("no project selected; pass --project or run `tomb new`".into()))
    }

    fn run(&self, op: Op) -> Result<Value, CliError> {
        let project = match op {
            Op::Create(_) | Op::List => None,
            _ => Some(self.project()?),
        };
        Ok(self.backend.run(project.as_ref(), op)?)
    }

    fn instrument(&self) -> Result<StoryInstrument, CliError> {
        let v = self.run(Op::Get)?;
        serde_json::from_value(v["project"].clone())
            .map_err(|e| CliError::Api(ApiError::new("MALFORMED_RESPONSE", e.to_string())))
    }

    fn scene(&self) -> Result<SceneId, CliError> {
        if let Some(s) = &self.cli.scene {
            return Ok(SceneId::from(s.as_str()));
        }
        let instr = self.instrument()?;
        if let Some(s) = &self.state.current_scene {
            let id = SceneId::from(s.as_str());
            if instr.scene(&id).is_some() {
                return Ok(id);
            }
        }
        match instr.scenes.as_slice() {
            [only] => Ok(only.id.clone()),
            [] => Err(CliError::Usage("project has no scenes; run `tomb scene add`".into())),
            _ => Err(CliError::Usage("project has several scenes; pass --scene".into())),
        }
    }

    fn gen(&self) -> GenOptions {
        GenOptions {
            temperature: self.cli.temperature,
            adherence: self.cli.adherence,
            context_budget: self.cli.context_budget,
        }
    }

    fn character(&self, reference: &str) -> Result<CharacterId, CliError> {
        let instr = self.instrument()?;
        let id = CharacterId::from(reference);
        if instr.character(&id).is_some() {
            return Ok(id);
        }
        instr
            .character_by_name(reference)
            .map(|c| c.id.clone())
            .ok_or_else(|| CliError::Api(ApiError::new("UNKNOWN_CHARACTER", format!("unknown character {reference:?}"))))
    }

    fn style(&self, args: &StyleArgs, base: impl FnOnce(&StoryInstrument) -> StyleParams) -> Result<Option<StyleParams>, CliError> {
        if args.is_empty() {
            return Ok(None);
        }
        Ok(Some(args.apply(base(&self.instrument()?))))
    }
}

fn print_error(e: &ApiError, json: bool) {
    if json {
        println!("{}", serde_json::json!({ "error": e }));
    } else {
        eprintln!("error[{}]: {}", e.code, e.message);
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.temperature {
        if let Err(e) = check_temperature(t) {
            print_error(&ApiError::new(e.code(), e.to_string()), cli.json);
            return ExitCode::from(1);
        }
    }
    if let Command::Serve { addr, provider_cap } = &cli.command {
        return serve(&cli, *addr, *provider_cap);
    }
    if cli.server.is_some() && cli.scripted.is_some() {
        eprintln!("error: --scripted cannot be combined with --server; give the script to the server instead");
        return ExitCode::from(2);
    }
    if let Command::Validate { file } = &cli.command {
        return validate(&cli, file.as_deref());
    }
    let mut state = CliState::load(&cli.data_dir);
    let script = match &cli.scripted {
        Some(path) => match ScriptSession::open(path, &state) {
            Ok(s) => Some(s),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
        None => None,
    };
    let http = if script.is_none() && cli.server.is_none() {
        HttpProvider::new(ProviderConfig::from_env()).ok()
    } else {
        None
    };
    let provider: Option<&dyn CompletionProvider> = match (&script, &http) {
        (Some(s), _) => Some(&s.provider),
        (None, Some(h)) => Some(h),
        _ => None,
    };
    let backend = match &cli.server {
        Some(url) => Backend::Remote {
            base: url.clone(),
            client: reqwest::blocking::Client::new(),
        },
        None => match Workspace::open(&cli.data_dir) {
            Ok(workspace) => Backend::Local { workspace, provider },
            Err(e) => {
                print_error(&e, cli.json);
                return ExitCode::from(1);
            }
        },
    };
    let mut ctx = Ctx {
        cli: &cli,
        backend,
        state: std::mem::take(&mut state),
    };
    let result = dispatch(&mut ctx);
    let mut state = ctx.state;
    if let Some(s) = &script {
        s.record(&mut state);
    }
    if let Err(e) = state.save(&cli.data_dir) {
        eprintln!("warning: cannot save CLI state: {e}");
    }
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Api(e)) => {
            print_error(&e, cli.json);
            ExitCode::from(1)
        }
    }
}

fn emit(ctx: &Ctx, value: &Value, human: impl FnOnce(&Value) -> String) {
    if ctx.cli.json {
        println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
    } else {
        println!("{}", human(value));
    }
}

fn str_of(v: &Value) -> &str {
    v.as_str().unwrap_or_default()
}

fn dispatch(ctx: &mut Ctx) -> Result<(), CliError> {
    let cli = ctx.cli;
    match &cli.command {
        Command::New { premise, logline, style } => {
            let req = ops::CreateProject {
                premise: premise.clone(),
                logline: logline.clone(),
                style_defaults: (!style.is_empty()).then(|| style.apply(StyleParams::default())),
            };
            let v = ctx.run(Op::Create(req))?;
            ctx.state.current_project = Some(str_of(&v["project"]["id"]).to_string());
            ctx.state.current_scene = None;
            emit(ctx, &v, |v| format!("created project {}", str_of(&v["project"]["id"])));
        }
        Command::List => {
            let v = ctx.run(Op::List)?;
            emit(ctx, &v, |v| {
                v["projects"]
                    .as_array()
                    .into_iter()
                    .flatten()
                    .map(|p| format!("{}  {}  {}", str_of(&p["id"]), str_of(&p["updated_at"]), str_of(&p["title"])))
                    .collect::<Vec<_>>()
                    .join("\n")
            });
        }
        Command::Show => {
            let v = ctx.run(Op::Get)?;
            emit(ctx, &v, |v| serde_json::to_string_pretty(&v["project"]).expect("serializable"));
        }
        Command::Use { project } => {
            ctx.state.current_project = Some(project.clone());
            ctx.state.current_scene = cli.scene.clone();
            ctx.instrument()?;
            emit(ctx, &serde_json::json!({ "project": project }), |_| format!("using project {project}"));
        }
        Command::Character(CharacterCmd::Add { name, description, traits, goals }) => {
            let v = ctx.run(Op::AddCharacter(ops::AddCharacter {
                name: name.clone(),
                description: description.clone(),
                traits: traits.clone(),
                goals: goals.clone(),
            }))?;
            emit(ctx, &v, |v| {
                format!("added character {} ({})", str_of(&v["character"]["id"]), str_of(&v["character"]["name"]))
            });
        }
        Command::Character(CharacterCmd::Edit { character, name, description, traits, goals, clear_traits, clear_goals }) => {
            let cid = ctx.character(character)?;
            let patch = CharacterPatch {
                name: name.clone(),
                description: description.clone(),
                traits: (*clear_traits || !traits.is_empty()).then(|| traits.clone()),
                goals: (*clear_goals || !goals.is_empty()).then(|| goals.clone()),
            };
            let v = ctx.run(Op::EditCharacter(cid, patch))?;
            emit(ctx, &v, |v| format!("edited character {}", str_of(&v["character"]["id"])));
        }
        Command::Scene(SceneCmd::Add { title, situation, participants }) => {
            let v = ctx.run(Op::AddScene(ops::AddScene {
                title: title.clone(),
                initial_situation: situation.clone(),
                participants: participants.clone(),
            }))?;
            ctx.state.current_scene = Some(str_of(&v["scene"]["id"]).to_string());
            emit(ctx, &v, |v| format!("added scene {}", str_of(&v["scene"]["id"])));
        }
        Command::Scene(SceneCmd::Edit { scene, title, situation, participants }) => {
            let req = ops::EditScene {
                title: title.clone(),
                initial_situation: situation.clone(),
                participants: (!participants.is_empty()).then(|| participants.clone()),
            };
            let v = ctx.run(Op::EditScene(SceneId::from(scene.as_str()), req))?;
            emit(ctx, &v, |v| {
                let stale = v["scene"]["situations"].as_array().into_iter().flatten().filter(|s| s["stale"] == true).count();
                format!("edited scene {}; {stale} situations stale", str_of(&v["scene"]["id"]))
            });
        }
        Command::Beat(cmd) => beat(ctx, cmd)?,
        Command::Recompute => {
            let sid = ctx.scene()?;
            let v = ctx.run(Op::Recompute(sid))?;
            emit(ctx, &v, |v| format!("recomputed {} situations", v["recomputed"]));
            if let Some(failure) = v.get("failure").filter(|f| !f.is_null()) {
                let e: ApiError = serde_json::from_value(failure.clone())
                    .unwrap_or_else(|_| ApiError::new("RECOMPUTE_FAILED", failure.to_string()));
                return Err(CliError::Api(e));
            }
        }
        Command::Render { style } => {
            let sid = ctx.scene()?;
            let style = ctx.style(style, |i| i.style_defaults.clone())?;
            let v = ctx.run(Op::Render(sid, ops::RenderScene { style }))?;
            emit(ctx, &v, |v| {
                v["document"]["segments"]
                    .as_array()
                    .into_iter()
                    .flatten()
                    .map(|s| str_of(&s["text"]).to_string())
                    .collect::<Vec<_>>()
                    .join("\n\n")
            });
        }
        Command::Segment(SegmentCmd::Regenerate { index, strict, style }) => {
            let sid = ctx.scene()?;
            let base_sid = sid.clone();
            let style = ctx.style(style, move |i| {
                i.scene(&base_sid)
                    .and_then(|s| s.prose.as_ref())
                    .map(|d| d.style.clone())
                    .unwrap_or_else(|| i.style_defaults.clone())
            })?;
            let continuity = if *strict { tomb_core::prose::ContinuityMode::Strict } else { Default::default() };
            let v = ctx.run(Op::Regenerate(sid, *index, ops::RegenerateSegment { style, continuity }))?;
            emit(ctx, &v, |v| str_of(&v["segment"]["text"]).to_string());
        }
        Command::Segment(SegmentCmd::Edit { index, text }) => {
            let sid = ctx.scene()?;
            let v = ctx.run(Op::EditSegment(sid, *index, ops::EditText { text: text.clone() }))?;
            emit(ctx, &v, |v| str_of(&v["segment"]["text"]).to_string());
        }
        Command::Export { scope, format, output } => {
            let v = ctx.run(Op::Export {
                scope: Some(scope.clone()),
                format: Some(format.clone()),
            })?;
            let text = str_of(&v);
            match output {
                Some(path) => {
                    std::fs::write(path, text).map_err(|e| {
                        CliError::Api(ApiError::new("STORAGE_FAILURE", format!("{}: {e}", path.display())))
                    })?;
                    if cli.json {
                        println!("{}", serde_json::json!({ "written": path, "bytes": text.len() }));
                    } else {
                        println!("wrote {}", path.display());
                    }
                }
                None if cli.json => println!("{}", serde_json::json!({ "text": text })),
                None => print!("{text}"),
            }
        }
        Command::Validate { .. } | Command::Serve { .. } => unreachable!("handled before dispatch"),
    }
    Ok(())
}

fn beat(ctx: &mut Ctx, cmd: &BeatCmd) -> Result<(), CliError> {
    let sid = ctx.scene()?;
    let draft = |v: &Value| str_of(&v["draft"]["text"]).to_string();
    match cmd {
        BeatCmd::Simulate { dump_prompt: true } | BeatCmd::Nudge { dump_prompt: true, .. } => {
            let instr = ctx.instrument()?;
            let params: GenParams = ctx.gen().params()?;
            let bundle = match cmd {
                BeatCmd::Nudge { text, .. } => build_nudge_prompt(&instr, &sid, text, &params),
                _ => build_simulation_prompt(&instr, &sid, &params),
            }
            .map_err(ApiError::from)?;
            if ctx.cli.json {
                println!("{}", serde_json::to_string_pretty(&bundle).expect("serializable"));
            } else {
                println!("{}\n\n{}", bundle.system_text, bundle.user_text);
            }
        }
        BeatCmd::Simulate { .. } => {
            let v = ctx.run(Op::Simulate(sid, ops::SimulateBeat { gen: ctx.gen() }))?;
            emit(ctx, &v, draft);
        }
        BeatCmd::Nudge { text, .. } => {
            let v = ctx.run(Op::Nudge(
                sid,
                ops::NudgeBeat {
                    nudge: text.clone(),
                    gen: ctx.gen(),
                },
            ))?;
            emit(ctx, &v, draft);
        }
        BeatCmd::Author { text, polish, participants } => {
            let v = ctx.run(Op::Author(
                sid,
                ops::AuthorBeat {
                    text: text.clone(),
                    polish: *polish,
                    participants: (!participants.is_empty()).then(|| participants.clone()),
                    gen: ctx.gen(),
                },
            ))?;
            emit(ctx, &v, draft);
        }
        BeatCmd::Accept { participants } => {
            let v = ctx.run(Op::Accept(
                sid,
                ops::AcceptBeat {
                    participants: (!participants.is_empty()).then(|| participants.clone()),
                },
            ))?;
            emit(ctx, &v, |v| {
                format!("accepted beat {}\nsituation: {}", v["beat"]["index"], str_of(&v["situation"]["text"]))
            });
        }
        BeatCmd::Reject => {
            let v = ctx.run(Op::Reject(sid))?;
            emit(ctx, &v, |_| "rejected draft".into());
        }
        BeatCmd::Edit { index, text } => {
            let v = ctx.run(Op::EditBeat(sid, *index, ops::EditText { text: text.clone() }))?;
            emit(ctx, &v, |v| {
                let stale = v["scene"]["situations"].as_array().into_iter().flatten().filter(|s| s["stale"] == true).count();
                format!("edited beat {index}; {stale} situations stale")
            });
        }
    }
    Ok(())
}

/// Exit 0 when valid, 1 with findings otherwise.
fn validate(cli: &Cli, file: Option<&Path>) -> ExitCode {
    let path = match file {
        Some(p) => p.to_path_buf(),
        None => {
            let state = CliState::load(&cli.data_dir);
            let Some(id) = cli.project.clone().or(state.current_project) else {
                eprintln!("error: no project selected; pass a FILE or --project");
                return ExitCode::from(2);
            };
            tomb_core::store::ProjectStore::open(&cli.data_dir)
                .map(|s| s.path_for(&ProjectId::from(id.as_str())))
                .unwrap_or_default()
        }
    };
    let findings: Vec<Finding> = match std::fs::read(&path) {
        Err(e) => vec![Finding {
            code: "STORAGE_FAILURE".into(),
            path: path.display().to_string(),
            message: e.to_string(),
        }],
        Ok(bytes) => match deserialize(&bytes) {
            Ok(instr) => validate_instrument(&instr).findings,
            Err(FormatError::InvariantViolation(report)) => report.findings,
            Err(e @ FormatError::MalformedDocument { .. }) => {
                let location = match &e {
                    FormatError::MalformedDocument { location, .. } => location.clone(),
                    _ => unreachable!(),
                };
                vec![Finding {
                    code: e.code().into(),
                    path: location,
                    message: e.to_string(),
                }]
            }
            Err(e) => vec![Finding {
                code: e.code().into(),
                path: "schema_version".into(),
                message: e.to_string(),
            }],
        },
    };
    if cli.json {
        let out = serde_json::json!({ "valid": findings.is_empty(), "findings": findings });
        println!("{}", serde_json::to_string_pretty(&out).expect("serializable"));
    } else if findings.is_empty() {
        println!("{}: valid", path.display());
    } else {
        for f in &findings {
            println!("{} {}: {}", f.code, f.path, f.message);
        }
    }
    if findings.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn serve(cli: &Cli, addr: std::net::SocketAddr, provider_cap: usize) -> ExitCode {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let provider: Arc<dyn CompletionProvider> = match &cli.scripted {
        Some(path) => match tomb_core::provider::ScriptedResponses::load(path) {
            Ok(script) => Arc::new(tomb_core::provider::ScriptedProvider::new(script)),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
        None => match HttpProvider::new(ProviderConfig::from_env()) {
            Ok(p) => Arc::new(p),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
        },
    };
    let config = ServiceConfig {
        data_dir: cli.data_dir.clone(),
        addr,
        provider: Some(provider),
        provider_cap,
    };
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match runtime.block_on(tomb_service::serve(config)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
