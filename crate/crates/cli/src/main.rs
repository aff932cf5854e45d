//! `deltamem`: validate, replay, score, ingest, split and synthesize persona
//! memory corpora, locally or against a running `deltamem` service.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage or I/O error.

mod config;
mod endpoint;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use deltamem_client::{Client, ClientError};
use deltamem_core::agent::{ChatClient, OracleClient, ScriptedClient};
use deltamem_core::api::{ClientSpec, CorpusBody, IngestRequest, ReplayResponse, UserFingerprints, UserReport, ValidateResponse};
use deltamem_core::memory::{fingerprint_hex, state_fingerprint, MemoryState};
use deltamem_core::pipeline::{reward_request_for, run_corpus, ScriptFile};
use deltamem_core::retrieval::HashedEmbedder;
use deltamem_core::reward::{score_request, RewardBreakdown, RewardRequest};
use deltamem_core::synth::{
    load_corpus, replay_targets, split_corpus, synthesize_with_client, validate_user, Corpus,
    CorpusManifest, CorpusSplit, UserBundle, SCHEMA_VERSION,
};
use serde::{Deserialize, Serialize};

use config::{ClientChoice, RunConfig};
use endpoint::EndpointClient;

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation or unreadable input: exit 2.
    Usage(String),
    /// The inputs were read but the operation failed on their content: exit 1.
    Domain(String),
}

impl CliError {
    fn io(path: &Path, e: impl fmt::Display) -> Self {
        CliError::Usage(format!("{}: {e}", path.display()))
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Domain(_) => 1,
            CliError::Usage(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Domain(m) => f.write_str(m),
        }
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        if e.is_rejection() {
            CliError::Domain(e.to_string())
        } else {
            CliError::Usage(format!("server: {e}"))
        }
    }
}

type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Parser)]
#[command(name = "deltamem", version, about = "Persona memory engine tools")]
struct Cli {
    /// Run configuration (TOML or JSON).
    #[arg(long, global = true, env = "DELTAMEM_CONFIG")]
    config: Option<PathBuf>,
    /// Send work to a running service instead of computing locally.
    #[arg(long, global = true, value_name = "URL")]
    server: Option<String>,
    /// Worker threads for per-user work.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ScoringFlags {
    /// Similarity threshold for matching.
    #[arg(long)]
    tau: Option<f64>,
    /// Score matched pairs by similarity alone, without lexical fidelity.
    #[arg(long)]
    no_fidelity: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Check a corpus against the synthesis rules; writes a JSON report beside it.
    Validate {
        /// Manifest file, or a directory holding `manifest.json`.
        corpus: PathBuf,
        /// Report path instead of `<manifest>.validation.json`.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Replay oracle operations and print per-session state fingerprints.
    Replay {
        corpus: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score one prediction.
    Reward {
        /// A complete reward request.
        #[arg(long, conflicts_with_all = ["pred", "corpus", "user", "session"])]
        request: Option<PathBuf>,
        /// `{"pred_state": ..., "transcript": ...}` for a corpus session.
        #[arg(long, requires_all = ["corpus", "user", "session"])]
        pred: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        user: Option<String>,
        /// Session id, or 0-based index.
        #[arg(long)]
        session: Option<String>,
        #[command(flatten)]
        scoring: ScoringFlags,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the memory agent over every user and score each session.
    Ingest {
        corpus: PathBuf,
        /// Receives metrics.json, final_states.json and transcripts.json.
        #[arg(long)]
        out_dir: PathBuf,
        /// Replies keyed by user id; overrides the configured client.
        #[arg(long)]
        script: Option<PathBuf>,
        #[command(flatten)]
        scoring: ScoringFlags,
    },
    /// Seeded train/validation split; writes both manifests beside the input.
    Split {
        corpus: PathBuf,
        /// Fraction of users kept for training.
        #[arg(long)]
        ratio: Option<f64>,
    },
    /// Synthesize user bundles from persona seeds (always local).
    Synth {
        #[arg(long)]
        persona: Vec<String>,
        /// One persona seed per line.
        #[arg(long)]
        personas: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// `{"replies": [...]}` consumed in order across personas.
        #[arg(long)]
        script: Option<PathBuf>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

struct Ctx {
    cfg: RunConfig,
    server: Option<Client>,
}

impl Ctx {
    fn block_on<F: std::future::Future>(&self, f: F) -> Result<F::Output> {
        let rt = tokio::runtime::Builder::new_current_thread()
            .enable_all()
            .build()
            .map_err(|e| CliError::Usage(format!("runtime: {e}")))?;
        Ok(rt.block_on(f))
    }
}

fn run(cli: Cli) -> Result<u8> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(jobs) = cli.jobs {
        cfg.jobs = Some(jobs);
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(server) = cli.server {
        cfg.server = Some(server);
    }
    let server = cfg.server.as_deref().map(Client::new);
    let mut ctx = Ctx { cfg, server };

    match cli.command {
        Command::Validate { corpus, report } => validate(&ctx, &corpus, report),
        Command::Replay { corpus, out } => replay(&ctx, &corpus, out.as_deref()),
        Command::Reward { request, pred, corpus, user, session, scoring, out } => {
            let source = match (request, pred, corpus, user, session) {
                (Some(r), ..) => RewardSource::Request(r),
                (None, Some(pred), Some(corpus), Some(user), Some(session)) => {
                    RewardSource::Session { pred, corpus, user, session }
                }
                _ => return Err(CliError::Usage("reward needs --request, or --pred with --corpus --user --session".into())),
            };
            reward(&mut ctx, source, &scoring, out.as_deref())
        }
        Command::Ingest { corpus, out_dir, script, scoring } => {
            if let Some(script) = script {
                ctx.cfg.client = ClientChoice::Scripted { script };
            }
            apply_scoring(&mut ctx.cfg, &scoring);
            ingest(&ctx, &corpus, &out_dir)
        }
        Command::Split { corpus, ratio } => {
            if let Some(r) = ratio {
                ctx.cfg.split_ratio = r;
            }
            split(&ctx, &corpus)
        }
        Command::Synth { persona, personas, out_dir, script } => {
            if let Some(script) = script {
                ctx.cfg.client = ClientChoice::Scripted { script };
            }
            synth(&ctx, persona, personas.as_deref(), &out_dir)
        }
        Command::Serve { bind } => serve(bind),
    }
}

fn apply_scoring(cfg: &mut RunConfig, flags: &ScoringFlags) {
    if let Some(tau) = flags.tau {
        cfg.tau = tau;
    }
    if flags.no_fidelity {
        cfg.use_fidelity = false;
    }
}

/// Semantic config problems are domain errors; unreadable config is usage.
fn checked(cfg: &RunConfig) -> Result<()> {
    cfg.check().map_err(|e| CliError::Domain(e.to_string()))
}

fn manifest_path(corpus: &Path) -> PathBuf {
    if corpus.is_dir() {
        corpus.join("manifest.json")
    } else {
        corpus.to_owned()
    }
}

fn load(corpus: &Path) -> Result<(PathBuf, Corpus)> {
    let path = manifest_path(corpus);
    let corpus = load_corpus(&path).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok((path, corpus))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::io(path, e))
}

fn to_json(value: &impl Serialize) -> String {
    let mut out = serde_json::to_string_pretty(value).expect("output serializes");
    out.push('\n');
    out
}

/// Temp file in the target directory, then rename.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(contents.as_bytes()).map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

fn emit(out: Option<&Path>, contents: &str) -> Result<()> {
    match out {
        Some(path) => write_atomic(path, contents),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn sibling(manifest: &Path, suffix: &str) -> PathBuf {
    let stem = manifest.file_stem().and_then(|s| s.to_str()).unwrap_or("corpus");
    manifest.with_file_name(format!("{stem}.{suffix}.json"))
}

fn body(corpus: &Corpus) -> CorpusBody {
    CorpusBody { config: corpus.manifest.config.clone(), users: corpus.users.clone() }
}

fn uid(user: &UserBundle) -> String {
    user.user_id.clone().unwrap_or_default()
}

fn validate(ctx: &Ctx, corpus: &Path, report: Option<PathBuf>) -> Result<u8> {
    let (path, corpus) = load(corpus)?;
    let resp = match &ctx.server {
        Some(c) => ctx.block_on(c.validate(&body(&corpus)))??,
        None => {
            let users: Vec<UserReport> = corpus
                .users
                .iter()
                .map(|u| UserReport { user_id: uid(u), report: validate_user(u, &corpus.manifest.config) })
                .collect();
            let errors = users.iter().map(|u| u.report.error_count()).sum();
            let warnings = users.iter().map(|u| u.report.warnings().count()).sum();
            ValidateResponse { ok: errors == 0, errors, warnings, users }
        }
    };
    let report = report.unwrap_or_else(|| sibling(&path, "validation"));
    write_atomic(&report, &to_json(&resp))?;
    eprintln!("{} error(s), {} warning(s); report: {}", resp.errors, resp.warnings, report.display());
    for user in &resp.users {
        for v in user.report.errors() {
            eprintln!("  {}: {}", user.user_id, v.message);
        }
    }
    Ok(if resp.ok { 0 } else { 1 })
}

fn replay(ctx: &Ctx, corpus: &Path, out: Option<&Path>) -> Result<u8> {
    let (_, corpus) = load(corpus)?;
    let resp = match &ctx.server {
        Some(c) => ctx.block_on(c.replay(&body(&corpus)))??,
        None => {
            let users: Vec<UserFingerprints> = corpus
                .users
                .iter()
                .map(|u| match replay_targets(&u.initial_state, &u.sessions) {
                    Ok(states) => UserFingerprints {
                        user_id: uid(u),
                        fingerprints: states.iter().map(|s| fingerprint_hex(state_fingerprint(s))).collect(),
                        error: None,
                    },
                    Err(e) => UserFingerprints {
                        user_id: uid(u),
                        fingerprints: Vec::new(),
                        error: Some(deltamem_core::api::ApiError { code: "replay_error".into(), message: e.to_string() }),
                    },
                })
                .collect();
            ReplayResponse { ok: users.iter().all(|u| u.error.is_none()), users }
        }
    };
    emit(out, &to_json(&resp))?;
    for user in &resp.users {
        if let Some(e) = &user.error {
            eprintln!("{}: {}", user.user_id, e.message);
        }
    }
    Ok(if resp.ok { 0 } else { 1 })
}

enum RewardSource {
    Request(PathBuf),
    Session { pred: PathBuf, corpus: PathBuf, user: String, session: String },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Prediction {
    pred_state: MemoryState,
    transcript: String,
}

fn reward(ctx: &mut Ctx, source: RewardSource, flags: &ScoringFlags, out: Option<&Path>) -> Result<u8> {
    let request = match source {
        RewardSource::Request(path) => {
            let mut req: RewardRequest = read_json(&path)?;
            if let Some(tau) = flags.tau {
                req.tau = tau;
            }
            if flags.no_fidelity {
                req.use_fidelity = false;
            }
            req
        }
        RewardSource::Session { pred, corpus, user, session } => {
            apply_scoring(&mut ctx.cfg, flags);
            checked(&ctx.cfg)?;
            let p: Prediction = read_json(&pred)?;
            let (_, corpus) = load(&corpus)?;
            reward_request_for(&corpus, &user, &session, p.pred_state, p.transcript, &ctx.cfg.settings())
                .map_err(|e| CliError::Domain(e.to_string()))?
        }
    };
    if !(0.0..=1.0).contains(&request.tau) {
        return Err(CliError::Domain(format!("tau must lie in [0, 1], got {}", request.tau)));
    }
    let breakdown: RewardBreakdown = match &ctx.server {
        Some(c) => ctx.block_on(c.reward(&request))??,
        None => score_request(&request, &HashedEmbedder::default()).map_err(|e| CliError::Domain(e.to_string()))?,
    };
    emit(out, &to_json(&breakdown))?;
    Ok(0)
}

fn ingest(ctx: &Ctx, corpus: &Path, out_dir: &Path) -> Result<u8> {
    checked(&ctx.cfg)?;
    let (_, corpus) = load(corpus)?;
    let settings = ctx.cfg.settings();

    let (metrics_json, final_states, transcripts) = if let Some(c) = &ctx.server {
        let client = match &ctx.cfg.client {
            ClientChoice::Oracle => ClientSpec::Oracle,
            ClientChoice::Scripted { script } => ClientSpec::Scripted { script: read_json(script)? },
            ClientChoice::Endpoint { .. } => {
                return Err(CliError::Usage("endpoint clients run locally only; drop --server".into()))
            }
        };
        let req = IngestRequest { users: corpus.users.clone(), client, settings };
        let resp = ctx.block_on(c.ingest(&req))??;
        (resp.metrics.to_json(), resp.final_states, resp.transcripts)
    } else {
        let embedder = HashedEmbedder::default();
        let top_k = settings.session.top_k;
        let script: Option<ScriptFile> = match &ctx.cfg.client {
            ClientChoice::Scripted { script } => Some(read_json(script)?),
            _ => None,
        };
        let choice = ctx.cfg.client.clone();
        let factory = move |u: &UserBundle| -> Result<Box<dyn ChatClient>, String> {
            match &choice {
                ClientChoice::Oracle => Ok(Box::new(OracleClient::new(&u.sessions, top_k))),
                ClientChoice::Scripted { .. } => script.as_ref().expect("script loaded").client_for(u),
                ClientChoice::Endpoint { url, model, api_key_env, temperature } => {
                    let key = api_key_env.as_deref().and_then(|v| std::env::var(v).ok());
                    Ok(Box::new(EndpointClient::new(url, model, key, *temperature)))
                }
            }
        };
        let (metrics, runs) = run_corpus(&corpus, &factory, &embedder, &settings, ctx.cfg.jobs());
        let mut states = BTreeMap::new();
        let mut transcripts = BTreeMap::new();
        for run in runs {
            states.insert(run.metrics.user_id.clone(), run.final_state);
            transcripts.insert(run.metrics.user_id.clone(), run.transcripts);
        }
        (metrics.to_json(), states, transcripts)
    };

    write_atomic(&out_dir.join("final_states.json"), &to_json(&final_states))?;
    write_atomic(&out_dir.join("transcripts.json"), &to_json(&transcripts))?;
    write_atomic(&out_dir.join("metrics.json"), &metrics_json)?;
    eprintln!("wrote {}", out_dir.join("metrics.json").display());
    Ok(0)
}

#[derive(Serialize)]
struct SplitSummary<'a> {
    train: &'a Path,
    validation: &'a Path,
    train_users: usize,
    validation_users: usize,
    warnings: &'a [String],
}

fn split(ctx: &Ctx, corpus: &Path) -> Result<u8> {
    let path = manifest_path(corpus);
    let manifest: CorpusManifest = read_json(&path)?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(CliError::Usage(format!(
            "{}: unsupported schema_version {}",
            path.display(),
            manifest.schema_version
        )));
    }
    let (ratio, seed) = (ctx.cfg.split_ratio, ctx.cfg.seed);
    let result: CorpusSplit = match &ctx.server {
        Some(c) => ctx.block_on(c.split(&manifest, ratio, seed))??,
        None => split_corpus(&manifest, ratio, seed).map_err(|e| CliError::Domain(e.to_string()))?,
    };
    let (train, validation) = (sibling(&path, "train"), sibling(&path, "validation_split"));
    write_atomic(&train, &to_json(&result.train))?;
    write_atomic(&validation, &to_json(&result.validation))?;
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    let summary = SplitSummary {
        train: &train,
        validation: &validation,
        train_users: result.train.users.len(),
        validation_users: result.validation.users.len(),
        warnings: &result.warnings,
    };
    print!("{}", to_json(&summary));
    Ok(0)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthScript {
    replies: Vec<String>,
}

fn synth(ctx: &Ctx, mut seeds: Vec<String>, file: Option<&Path>, out_dir: &Path) -> Result<u8> {
    if let Some(file) = file {
        let text = fs::read_to_string(file).map_err(|e| CliError::io(file, e))?;
        seeds.extend(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from));
    }
    if seeds.is_empty() {
        return Err(CliError::Usage("synth needs --persona or --personas".into()));
    }
    let mut client: Box<dyn ChatClient> = match &ctx.cfg.client {
        ClientChoice::Scripted { script } => {
            let s: SynthScript = read_json(script)?;
            Box::new(ScriptedClient::new(s.replies))
        }
        ClientChoice::Endpoint { url, model, api_key_env, temperature } => {
            let key = api_key_env.as_deref().and_then(|v| std::env::var(v).ok());
            Box::new(EndpointClient::new(url, model, key, *temperature))
        }
        ClientChoice::Oracle => {
            return Err(CliError::Usage("synth needs a scripted or endpoint client".into()))
        }
    };

    let cfg = &ctx.cfg.synthesis;
    let mut files = Vec::new();
    let mut failures = 0;
    for (i, seed) in seeds.iter().enumerate() {
        let id = format!("u{:03}", i + 1);
        match synthesize_with_client(client.as_mut(), seed, cfg) {
            Ok(mut bundle) => {
                bundle.user_id = Some(id.clone());
                let name = format!("{id}.json");
                write_atomic(&out_dir.join(&name), &bundle.to_json())?;
                files.push(name);
            }
            Err(e) => {
                failures += 1;
                eprintln!("{id}: {e}");
            }
        }
    }
    let manifest = CorpusManifest { schema_version: SCHEMA_VERSION, users: files, config: cfg.clone() };
    write_atomic(&out_dir.join("manifest.json"), &to_json(&manifest))?;
    eprintln!("{} of {} persona(s) synthesized", seeds.len() - failures, seeds.len());
    Ok(if failures == 0 { 0 } else { 1 })
}

fn serve(bind: SocketAddr) -> Result<u8> {
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Usage(format!("runtime: {e}")))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(bind).await.map_err(|e| CliError::Usage(format!("{bind}: {e}")))?;
        let addr = listener.local_addr().map_err(|e| CliError::Usage(e.to_string()))?;
        eprintln!("listening on http://{addr}");
        deltamem_server::serve(listener, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CliError::Usage(format!("serve: {e}")))
    })?;
    Ok(0)
}
