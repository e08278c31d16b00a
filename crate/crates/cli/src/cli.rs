//! Command-line parsing and the individual commands.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use steerkit_core::backend::{Backend, Fixture, RemoteConfig, ReplayBackend, SyntheticBackend};
use steerkit_core::dataset::{self, DEFAULT_PAIR_COUNT};
use steerkit_core::elastic::{BandPreset, ElasticConfig};
use steerkit_core::metrics::{self, Scorer, SyntheticScorer};
use steerkit_core::select::EditType;
use steerkit_core::tensor::ScheduleMode;

use crate::config::{parse_set_args, BackendConfig, EngineConfig, ScorerConfig};
use crate::engine::{load_vector_file, CalibrateArgs, Engine};
use crate::error::{AppError, AppResult, ErrorKind};

#[derive(Debug, Parser)]
#[command(name = "steerkit", version, about = "Calibrated text-embedding steering sliders")]
pub struct Cli {
    /// Engine configuration (JSON).
    #[arg(long, global = true, env = "STEERKIT_CONFIG")]
    pub config: Option<PathBuf>,
    /// Seed for every generation; overrides the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Use the remote backend at this URL.
    #[arg(long, global = true)]
    pub backend_url: Option<String>,
    /// Machine-readable output on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ask the LLM for contrastive prompt pairs.
    GenDataset(GenDatasetArgs),
    /// Build a steering vector from a dataset.
    BuildVector(BuildVectorArgs),
    /// Show which prompt tokens would be steered.
    SelectTokens(SelectTokensArgs),
    /// Find the usable steering range for a prompt.
    Calibrate(CalibrateCmd),
    /// Render one prompt at one steering strength.
    Steer(SteerArgs),
    /// Measure slider continuity for a calibration profile.
    Evaluate(EvaluateArgs),
    /// Run the slider HTTP service.
    Serve(ServeArgs),
    /// Serve the configured backend over the backend wire protocol.
    ServeBackend(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenDatasetArgs {
    #[arg(long)]
    pub concept: String,
    #[arg(long, default_value_t = DEFAULT_PAIR_COUNT, value_parser = parse_positive)]
    pub k: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite an existing file.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct BuildVectorArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Defaults to `<root>/vectors/<concept>-<hash>.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectTokensArgs {
    #[arg(long)]
    pub prompt: String,
    #[arg(long)]
    pub concept: String,
    #[arg(long)]
    pub edit_type: Option<EditType>,
    /// Skip the LLM and use the rule engine.
    #[arg(long)]
    pub rules: bool,
}

#[derive(Debug, Args)]
pub struct CalibrateCmd {
    #[arg(long)]
    pub prompt: String,
    /// Vector file, or a file name under `<root>/vectors/`.
    #[arg(long)]
    pub vector: String,
    /// Concept used for token selection; defaults to the vector's.
    #[arg(long)]
    pub concept: Option<String>,
    #[arg(long)]
    pub edit_type: Option<EditType>,
    /// Similarity band preset; defaults to the edit type's.
    #[arg(long)]
    pub preset: Option<BandPreset>,
    /// Elastic parameter override, e.g. `--set sim_max=0.2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub schedule: Option<ScheduleMode>,
    /// Starting range instead of the vector's recorded projection.
    #[arg(long, allow_negative_numbers = true)]
    pub alpha_max: Option<f64>,
    #[arg(long)]
    pub rules: bool,
    /// Defaults to `<root>/profiles/<id>.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SteerArgs {
    #[arg(long)]
    pub prompt: String,
    #[arg(long)]
    pub vector: String,
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: f64,
    #[arg(long, default_value = "uniform")]
    pub schedule: ScheduleMode,
    /// Words to steer, comma separated; selected automatically otherwise.
    #[arg(long, value_delimiter = ',')]
    pub words: Option<Vec<String>>,
    #[arg(long)]
    pub edit_type: Option<EditType>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub profile: PathBuf,
    #[arg(long, default_value_t = metrics::DEFAULT_POINTS, value_parser = parse_points)]
    pub n: usize,
    #[arg(long)]
    pub question: Option<String>,
    /// Tradeoff curve CSV; defaults to `<root>/traces/`.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Address to listen on; defaults to the configuration's.
    #[arg(long)]
    pub listen: Option<String>,
}

fn parse_count(s: &str, min: usize) -> Result<usize, String> {
    let v: usize = s.parse().map_err(|e| format!("{e}"))?;
    if v < min {
        return Err(format!("must be at least {min}"));
    }
    Ok(v)
}

fn parse_positive(s: &str) -> Result<usize, String> {
    parse_count(s, 1)
}

fn parse_points(s: &str) -> Result<usize, String> {
    parse_count(s, 2)
}

/// Parses arguments, runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .try_init();
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(args, &mut stdout.lock(), &mut stderr.lock())
}

/// Like [`main_with_args`] with explicit output streams.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let target: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = write!(target, "{}", e.render());
            return e.exit_code();
        }
    };
    match execute(&cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn load_config(cli: &Cli) -> AppResult<EngineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => EngineConfig::load(p)?,
        None => EngineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(url) = &cli.backend_url {
        let mut remote = match &cfg.backend {
            BackendConfig::Remote(r) => r.clone(),
            _ => RemoteConfig::default(),
        };
        remote.base_url = url.clone();
        cfg.backend = BackendConfig::Remote(remote);
        if matches!(cfg.scorer, ScorerConfig::Synthetic { .. }) {
            cfg.scorer = ScorerConfig::Remote { base_url: None };
        }
    }
    Ok(cfg)
}

fn emit(out: &mut dyn Write, json_mode: bool, value: serde_json::Value, text: &str) -> AppResult<()> {
    if json_mode {
        writeln!(out, "{value}")?;
    } else {
        write!(out, "{text}")?;
    }
    Ok(())
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter().map(|x| metrics::fmt_sig9(*x)).collect::<Vec<_>>().join(", ")
}

fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> AppResult<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::ServeBackend(args) => return serve_backend(cfg, args),
        Command::Serve(args) => {
            let listen = args.listen.clone().unwrap_or_else(|| cfg.listen.clone());
            let engine = Arc::new(Engine::from_config(cfg)?);
            return runtime()?.block_on(crate::service::serve(engine, &listen));
        }
        _ => {}
    }
    let engine = Engine::from_config(cfg)?;
    match &cli.command {
        Command::GenDataset(a) => gen_dataset(&engine, a, cli.json, out, err),
        Command::BuildVector(a) => build_vector(&engine, a, cli.json, out, err),
        Command::SelectTokens(a) => select_tokens(&engine, a, cli.json, out),
        Command::Calibrate(a) => calibrate(&engine, a, cli.json, out, err),
        Command::Steer(a) => steer(&engine, a, cli.json, out),
        Command::Evaluate(a) => evaluate(&engine, a, cli.json, out),
        Command::Serve(_) | Command::ServeBackend(_) => unreachable!("handled above"),
    }
}

fn runtime() -> AppResult<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| AppError::new(ErrorKind::Backend, format!("runtime: {e}")))
}

fn gen_dataset(engine: &Engine, a: &GenDatasetArgs, json_mode: bool, out: &mut dyn Write, err: &mut dyn Write) -> AppResult<()> {
    if a.out.exists() && !a.force {
        return Err(AppError::validation(format!(
            "{} exists; pass --force to overwrite",
            a.out.display()
        )));
    }
    let ds = engine.gen_dataset(&a.concept, a.k)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    ds.save(&a.out)?;
    let report = ds.lint();
    for w in &report.warnings {
        writeln!(err, "warning: {w}")?;
    }
    emit(
        out,
        json_mode,
        json!({"path": a.out, "k": ds.len(), "pos_style": ds.pos_style(), "neg_style": ds.neg_style(), "warnings": report.warnings}),
        &format!(
            "wrote {} pairs ({} vs {}) to {}; {} lint warning(s)\n",
            ds.len(),
            ds.pos_style(),
            ds.neg_style(),
            a.out.display(),
            report.warnings.len()
        ),
    )
}

fn build_vector(engine: &Engine, a: &BuildVectorArgs, json_mode: bool, out: &mut dyn Write, err: &mut dyn Write) -> AppResult<()> {
    let ds = dataset::load_dataset(&a.dataset)?;
    for w in ds.lint().warnings {
        writeln!(err, "warning: {w}")?;
    }
    let (v, text) = engine.build_vector(&ds)?;
    let path = match &a.out {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(p, &text)?;
            p.clone()
        }
        None => engine.storage.save_vector(ds.concept(), &text)?,
    };
    emit(
        out,
        json_mode,
        json!({"path": path, "concept": v.concept(), "raw_norm": v.raw_norm(), "k": v.pair_count(), "encoder_id": v.encoder_id(), "projection_max": v.projection_max()}),
        &format!(
            "vector {}\n  concept {}\n  raw_norm {}\n  K {}\n  encoder_id {}\n",
            path.display(),
            v.concept(),
            metrics::fmt_sig9(v.raw_norm()),
            v.pair_count(),
            v.encoder_id()
        ),
    )
}

fn select_tokens(engine: &Engine, a: &SelectTokensArgs, json_mode: bool, out: &mut dyn Write) -> AppResult<()> {
    let edit = engine.edit_type_for(&a.concept, a.edit_type);
    let sel = engine.select(&a.prompt, &a.concept, edit, a.rules)?;
    emit(
        out,
        json_mode,
        serde_json::to_value(&sel)?,
        &format!("{}\n", sel.words.join(" ")),
    )
}

fn calibrate(engine: &Engine, a: &CalibrateCmd, json_mode: bool, out: &mut dyn Write, err: &mut dyn Write) -> AppResult<()> {
    let config = a.preset.map(|p| {
        let edit = a.edit_type.unwrap_or(EditType::Local);
        engine.config.preset(edit).with_band(p)
    });
    let args = CalibrateArgs {
        prompt: a.prompt.clone(),
        vector: a.vector.clone(),
        concept: a.concept.clone(),
        edit_type: a.edit_type,
        config,
        overrides: parse_set_args(&a.set)?,
        schedule: a.schedule,
        alpha_max: a.alpha_max,
        rules_only: a.rules,
    };
    let profile = engine.calibrate(&args)?;
    let path = match &a.out {
        Some(p) => {
            std::fs::write(p, profile.to_json())?;
            p.clone()
        }
        None => engine.save_profile(&profile)?,
    };
    if profile.valid_points.is_empty() {
        writeln!(
            err,
            "warning: {}",
            profile.diagnostic.as_deref().unwrap_or("no valid points")
        )?;
    }
    emit(
        out,
        json_mode,
        json!({
            "path": path,
            "profile_id": profile.id(),
            "valid_points": profile.valid_points,
            "band_points": profile.band_points,
            "generations_used": profile.generations_used,
            "iterations_used": profile.iterations_used,
            "alpha_max": profile.alpha_max_used,
            "extrapolation_steps": profile.extrapolation_steps_taken,
            "tokens": profile.selection.words,
        }),
        &format!(
            "profile {}\n  tokens {}\n  valid points [{}]\n  band [{}]\n  generations_used {}\n",
            path.display(),
            profile.selection.words.join(" "),
            fmt_list(&profile.valid_points),
            fmt_list(&profile.band_points),
            profile.generations_used
        ),
    )
}

fn steer(engine: &Engine, a: &SteerArgs, json_mode: bool, out: &mut dyn Write) -> AppResult<()> {
    let loaded = engine.load_vector(&a.vector)?;
    let edit = engine.edit_type_for(loaded.vector.concept(), a.edit_type);
    let img = engine.steer(
        &a.prompt,
        &loaded.vector,
        a.words.clone(),
        edit,
        a.alpha,
        a.schedule,
        engine.config.seed,
    )?;
    emit(
        out,
        json_mode,
        json!({"image_id": img.id, "alpha": a.alpha, "schedule": a.schedule, "seed": engine.config.seed}),
        &format!("{}\n", img.id),
    )
}

fn evaluate(engine: &Engine, a: &EvaluateArgs, json_mode: bool, out: &mut dyn Write) -> AppResult<()> {
    let profile = engine.load_profile(&a.profile)?;
    let report = engine.evaluate(&profile, a.n, a.question.as_deref())?;
    let stem = format!("{}-n{}", report.profile_id, a.n);
    let bundle_text = serde_json::to_string_pretty(&report.bundle)?;
    let trace_path = engine.storage.put("traces", &stem, &bundle_text)?;
    let curve_csv = metrics::tradeoff_csv(&report.curve);
    let csv_path = match &a.csv {
        Some(p) => {
            std::fs::write(p, &curve_csv)?;
            p.clone()
        }
        None => {
            let p = engine.storage.dir("traces")?.join(format!("{stem}-curve.csv"));
            std::fs::write(&p, &curve_csv)?;
            p
        }
    };
    let ev = &report.evaluation;
    let inc_path = csv_path.with_file_name(format!("{stem}-increments.csv"));
    std::fs::write(
        &inc_path,
        metrics::increments_csv(&ev.trace, &ev.distributions, &ev.dv, &ev.dd),
    )?;
    emit(
        out,
        json_mode,
        json!({"mid": report.mid, "n": report.n, "alpha_max": report.alpha_max, "curve": report.curve, "trace": trace_path, "csv": csv_path}),
        &format!(
            "MID {}\n  N {}\n  alpha_max {}\n  trace {}\n  curve {}\n",
            metrics::fmt_sig9(report.mid),
            report.n,
            metrics::fmt_sig9(report.alpha_max),
            trace_path.display(),
            csv_path.display()
        ),
    )
}

fn serve_backend(cfg: EngineConfig, args: &ServeArgs) -> AppResult<()> {
    let listen = args.listen.clone().unwrap_or_else(|| cfg.listen.clone());
    let (backend, scorer): (Arc<dyn Backend>, Option<Arc<dyn Scorer>>) = match &cfg.backend {
        BackendConfig::Synthetic(s) => {
            let b = SyntheticBackend::new(s.clone())?;
            let scorer: Arc<dyn Scorer> = Arc::new(SyntheticScorer::for_backend(&b));
            (Arc::new(b), Some(scorer))
        }
        BackendConfig::Replay { fixture } => {
            let text = std::fs::read_to_string(fixture)?;
            (Arc::new(ReplayBackend::new(Fixture::from_json(&text)?)?), None)
        }
        BackendConfig::Remote(_) => {
            return Err(AppError::usage("serve-backend needs a synthetic or replay backend"))
        }
    };
    runtime()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&listen)
            .await
            .map_err(|e| AppError::usage(format!("cannot bind {listen}: {e}")))?;
        tracing::info!("backend protocol on {}", listener.local_addr()?);
        axum::serve(listener, crate::wire_server::wire_router(backend, scorer))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

/// Reads a vector file; exposed for tests and tooling.
pub fn read_vector(path: &Path) -> AppResult<steerkit_core::tensor::SteeringVector> {
    Ok(load_vector_file(path)?.vector)
}

/// Elastic settings the CLI would use for an edit type and optional preset.
pub fn effective_config(cfg: &EngineConfig, edit: EditType, preset: Option<BandPreset>) -> ElasticConfig {
    let base = cfg.preset(edit);
    match preset {
        Some(p) => base.with_band(p),
        None => base,
    }
}
