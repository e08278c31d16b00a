//! Operations shared by the command line and the HTTP service.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use steerkit_core::backend::{
    Backend, Fixture, GenerateRequest, ImageRef, RemoteBackend, RemoteConfig, ReplayBackend, Schedule,
    SyntheticBackend,
};
use steerkit_core::dataset::{self, ContrastiveDataset, GenerateOptions};
use steerkit_core::elastic::{BackendOracle, ElasticConfig};
use steerkit_core::llm::{HttpLlmClient, LlmClient, ScriptedLlm};
use steerkit_core::metrics::{
    self, Evaluation, RemoteScorer, Scorer, SyntheticScorer, TraceBundle, TradeoffRow,
};
use steerkit_core::profile::{content_hash, run_calibration, CalibrationProfile, CalibrationRequest};
use steerkit_core::select::{
    resolve_selection, select_tokens_llm, select_tokens_rules, ConceptLexicon, EditType, TokenSelection,
};
use steerkit_core::tensor::{apply_steering, ScheduleMode, SteeringVector, TensorContainer};

use crate::config::{apply_overrides, BackendConfig, EngineConfig, LlmConfig, ScorerConfig};
use crate::error::{AppError, AppResult, ErrorKind};
use crate::storage::Storage;

pub struct Engine {
    pub config: EngineConfig,
    pub backend: Arc<dyn Backend>,
    pub llm: Option<Arc<dyn LlmClient>>,
    pub scorer: Arc<dyn Scorer>,
    pub lexicon: ConceptLexicon,
    pub storage: Storage,
}

/// A loaded steering vector and where it came from.
#[derive(Debug, Clone)]
pub struct LoadedVector {
    pub vector: SteeringVector,
    pub path: PathBuf,
    pub hash: String,
}

#[derive(Debug, Clone, Default)]
pub struct CalibrateArgs {
    pub prompt: String,
    pub vector: String,
    pub concept: Option<String>,
    pub edit_type: Option<EditType>,
    pub config: Option<ElasticConfig>,
    pub overrides: serde_json::Map<String, serde_json::Value>,
    pub schedule: Option<ScheduleMode>,
    pub alpha_max: Option<f64>,
    pub rules_only: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvaluationReport {
    pub profile_id: String,
    pub mid: f64,
    pub n: usize,
    pub alpha_max: f64,
    pub curve: Vec<TradeoffRow>,
    #[serde(skip)]
    pub evaluation: Evaluation,
    #[serde(skip)]
    pub bundle: TraceBundle,
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct Health {
    pub backend: String,
    pub llm: String,
    pub scorer: String,
}

fn load_llm(cfg: &LlmConfig) -> AppResult<Arc<dyn LlmClient>> {
    Ok(match cfg {
        LlmConfig::Http(http) => Arc::new(HttpLlmClient::new(http)),
        LlmConfig::Scripted { path } => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| AppError::usage(format!("scripted LLM {}: {e}", path.display())))?;
            let llm: ScriptedLlm = serde_json::from_str(&text)
                .map_err(|e| AppError::usage(format!("scripted LLM {}: {e}", path.display())))?;
            Arc::new(llm)
        }
    })
}

impl Engine {
    /// Connects to everything named in the configuration.
    pub fn from_config(config: EngineConfig) -> AppResult<Self> {
        config.validate()?;
        let (backend, synthetic_scorer): (Arc<dyn Backend>, Option<SyntheticScorer>) = match &config.backend {
            BackendConfig::Synthetic(s) => {
                let b = SyntheticBackend::new(s.clone())?;
                let scorer = SyntheticScorer::for_backend(&b);
                (Arc::new(b), Some(scorer))
            }
            BackendConfig::Remote(r) => (Arc::new(RemoteBackend::connect(r)?), None),
            BackendConfig::Replay { fixture } => {
                let text = std::fs::read_to_string(fixture)
                    .map_err(|e| AppError::usage(format!("fixture {}: {e}", fixture.display())))?;
                (Arc::new(ReplayBackend::new(Fixture::from_json(&text)?)?), None)
            }
        };
        let scorer: Arc<dyn Scorer> = match &config.scorer {
            ScorerConfig::Synthetic { gain } => {
                let base = synthetic_scorer
                    .ok_or_else(|| AppError::usage("the synthetic scorer needs the synthetic backend"))?;
                Arc::new(SyntheticScorer::new(base.world().clone(), *gain * base.gain()))
            }
            ScorerConfig::Remote { base_url } => {
                let mut rc = match &config.backend {
                    BackendConfig::Remote(r) => r.clone(),
                    _ => RemoteConfig::default(),
                };
                match (base_url, &config.backend) {
                    (Some(url), _) => rc.base_url = url.clone(),
                    (None, BackendConfig::Remote(_)) => {}
                    (None, _) => return Err(AppError::usage("remote scorer needs a base_url")),
                }
                Arc::new(RemoteScorer::new(&rc))
            }
        };
        let llm = config.llm.as_ref().map(load_llm).transpose()?;
        Self::with_parts(config, backend, llm, scorer)
    }

    pub fn with_parts(
        config: EngineConfig,
        backend: Arc<dyn Backend>,
        llm: Option<Arc<dyn LlmClient>>,
        scorer: Arc<dyn Scorer>,
    ) -> AppResult<Self> {
        let lexicon = match &config.lexicon {
            Some(path) => ConceptLexicon::load(path)?,
            None => ConceptLexicon::default(),
        };
        let storage = Storage::new(config.storage_root.clone());
        Ok(Self {
            config,
            backend,
            llm,
            scorer,
            lexicon,
            storage,
        })
    }

    fn require_llm(&self) -> AppResult<&dyn LlmClient> {
        self.llm
            .as_deref()
            .ok_or_else(|| AppError::usage("no LLM configured"))
    }

    pub fn gen_dataset(&self, concept: &str, k: usize) -> AppResult<ContrastiveDataset> {
        Ok(dataset::generate_dataset(
            concept,
            k,
            self.require_llm()?,
            GenerateOptions::default(),
        )?)
    }

    /// Builds the vector and returns it with its canonical JSON.
    pub fn build_vector(&self, ds: &ContrastiveDataset) -> AppResult<(SteeringVector, String)> {
        let v = dataset::build_steering_vector(ds, self.backend.as_ref())?;
        let json = TensorContainer::from_vector(&v).to_json_pretty();
        Ok((v, json))
    }

    pub fn load_vector(&self, reference: &str) -> AppResult<LoadedVector> {
        let path = self.storage.resolve_vector(reference)?;
        load_vector_file(&path)
    }

    pub fn edit_type_for(&self, concept: &str, explicit: Option<EditType>) -> EditType {
        explicit
            .or_else(|| self.lexicon.get(concept).map(|e| e.edit_type))
            .unwrap_or(EditType::Local)
    }

    pub fn select(&self, prompt: &str, concept: &str, edit: EditType, rules_only: bool) -> AppResult<TokenSelection> {
        match (&self.llm, rules_only) {
            (Some(llm), false) => Ok(select_tokens_llm(prompt, concept, edit, llm.as_ref(), &self.lexicon)?),
            _ => Ok(select_tokens_rules(prompt, concept, edit, &self.lexicon)?),
        }
    }

    pub fn calibrate(&self, args: &CalibrateArgs) -> AppResult<CalibrationProfile> {
        let loaded = self.load_vector(&args.vector)?;
        let concept = args
            .concept
            .clone()
            .unwrap_or_else(|| loaded.vector.concept().to_string());
        let edit = self.edit_type_for(&concept, args.edit_type);
        let base = args.config.clone().unwrap_or_else(|| self.config.preset(edit));
        let cfg = apply_overrides(&base, &args.overrides)?;
        let selection = self.select(&args.prompt, &concept, edit, args.rules_only)?;
        let schedule = Schedule::new(args.schedule.unwrap_or(ScheduleMode::Uniform));
        let path = loaded.path.to_string_lossy().into_owned();
        let profile = run_calibration(
            self.backend.as_ref(),
            CalibrationRequest {
                prompt: &args.prompt,
                edit_type: edit,
                vector: &loaded.vector,
                vector_path: &path,
                vector_hash: &loaded.hash,
                selection,
                config: cfg,
                schedule,
                seed: self.config.seed,
                alpha_max: args.alpha_max,
            },
        )?;
        Ok(profile)
    }

    pub fn save_profile(&self, profile: &CalibrationProfile) -> AppResult<PathBuf> {
        self.storage.save("profiles", &profile.id(), "json", &profile.to_json())
    }

    pub fn load_profile(&self, path: &Path) -> AppResult<CalibrationProfile> {
        let text = std::fs::read_to_string(path)?;
        Ok(CalibrationProfile::from_json(&text)?)
    }

    /// Renders one prompt with the vector added to the given words (or the
    /// selected tokens) at strength `alpha`.
    pub fn steer(
        &self,
        prompt: &str,
        vector: &SteeringVector,
        words: Option<Vec<String>>,
        edit: EditType,
        alpha: f64,
        schedule: ScheduleMode,
        seed: u64,
    ) -> AppResult<ImageRef> {
        let emb = self.backend.encode(prompt)?;
        let words = match words {
            Some(w) => w,
            None => self.select(prompt, vector.concept(), edit, false)?.words,
        };
        let span = resolve_selection(&words, &emb)?;
        let steered = apply_steering(&emb, &span, vector, alpha)?;
        let req = GenerateRequest::new(steered, seed)
            .with_schedule(Schedule::new(schedule))
            .with_alpha(alpha);
        Ok(self.backend.generate(&req)?)
    }

    pub fn profile_oracle<'a>(
        &'a self,
        profile: &CalibrationProfile,
        vector: &SteeringVector,
    ) -> AppResult<BackendOracle<'a>> {
        let emb = self.backend.encode(&profile.prompt)?;
        Ok(BackendOracle::new(
            self.backend.as_ref(),
            emb,
            profile.span.clone(),
            vector.clone(),
            profile.seed,
            profile.schedule,
        )?)
    }

    /// Loads the profile's vector, refusing one whose content changed.
    pub fn profile_vector(&self, profile: &CalibrationProfile) -> AppResult<SteeringVector> {
        let loaded = load_vector_file(Path::new(&profile.vector_path))?;
        if loaded.hash != profile.vector_hash {
            return Err(AppError::validation(format!(
                "vector {} changed since calibration",
                profile.vector_path
            )));
        }
        Ok(loaded.vector)
    }

    /// Renders a calibrated slider at `alpha`.
    pub fn render_profile(
        &self,
        profile: &CalibrationProfile,
        vector: &SteeringVector,
        alpha: f64,
        seed: u64,
    ) -> AppResult<ImageRef> {
        let emb = self.backend.encode(&profile.prompt)?;
        let steered = apply_steering(&emb, &profile.span, vector, alpha)?;
        let req = GenerateRequest::new(steered, seed)
            .with_schedule(profile.schedule)
            .with_alpha(alpha);
        Ok(self.backend.generate(&req)?)
    }

    pub fn question(&self, concept: &str) -> String {
        self.config.question_template.replace("{concept}", concept)
    }

    /// MID and the tradeoff curve over `n` evenly spaced strengths up to the
    /// top of the calibrated range.
    pub fn evaluate(&self, profile: &CalibrationProfile, n: usize, question: Option<&str>) -> AppResult<EvaluationReport> {
        if n < 2 {
            return Err(AppError::usage("need at least 2 points"));
        }
        let vector = self.profile_vector(profile)?;
        let mut oracle = self.profile_oracle(profile, &vector)?;
        let alpha_max = profile
            .range()
            .map(|(_, hi)| hi)
            .unwrap_or(profile.alpha_max_used);
        let question = question
            .map(str::to_string)
            .unwrap_or_else(|| self.question(&profile.concept));
        let evaluation = metrics::evaluate_slider(
            &mut oracle,
            self.backend.as_ref(),
            self.scorer.as_ref(),
            &question,
            alpha_max,
            n,
            metrics::DEFAULT_EPSILON,
        )?;
        let curve = metrics::tradeoff_curve(std::slice::from_ref(&evaluation.trace), self.backend.as_ref())?;
        let bundle = TraceBundle::from_trace(&evaluation.trace, self.config.distance_oracle.clone());
        Ok(EvaluationReport {
            profile_id: profile.id(),
            mid: evaluation.mid,
            n,
            alpha_max,
            curve,
            evaluation,
            bundle,
        })
    }

    pub fn health(&self) -> Health {
        let backend = match self.backend.encode(steerkit_core::backend::conformance::DEFAULT_PROBE_PROMPT) {
            Ok(_) => "ok".to_string(),
            Err(e) => format!("error: {e}"),
        };
        Health {
            backend,
            llm: if self.llm.is_some() { "configured" } else { "not configured" }.into(),
            scorer: "configured".into(),
        }
    }
}

pub fn load_vector_file(path: &Path) -> AppResult<LoadedVector> {
    let bytes = std::fs::read(path).map_err(|e| {
        AppError::new(ErrorKind::NotFound, format!("vector {}: {e}", path.display()))
    })?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| AppError::validation(format!("vector {} is not UTF-8", path.display())))?;
    let vector = TensorContainer::from_json(&text)?.to_vector()?;
    Ok(LoadedVector {
        vector,
        path: path.to_path_buf(),
        hash: content_hash(&bytes),
    })
}
