//! Run configuration: TOML file plus command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use refinekit_core::corpus::{CorpusFormat, TokenizerSpec, DEFAULT_CHUNK_BUDGET};
use refinekit_core::llm_client::{DecodeParams, EndpointConfig};
use refinekit_core::metrics::DEFAULT_TIE_EPS;
use refinekit_core::prompting::{TemplateId, TemplateSet};
use refinekit_core::quality::WeightParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    /// JSONL documents, or the source side of a plaintext corpus.
    pub source: PathBuf,
    /// Plaintext format only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<PathBuf>,
    #[serde(default = "default_format")]
    pub format: CorpusFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src_lang: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tgt_lang: Option<String>,
    #[serde(default = "yes")]
    pub require_aligned: bool,
    /// Term lexicon for consistency scoring.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<PathBuf>,
}

fn default_format() -> CorpusFormat {
    CorpusFormat::JsonlDocs
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Endpoint {
    #[serde(flatten)]
    pub http: EndpointConfig,
    /// Environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
}

impl Endpoint {
    pub fn resolve(&self) -> Result<EndpointConfig, CliError> {
        let mut cfg = self.http.clone();
        if let Some(var) = &self.api_key_env {
            cfg.api_key = Some(
                std::env::var(var)
                    .map_err(|_| CliError::Validation(format!("environment variable {var} is not set")))?,
            );
        }
        cfg.validate().map_err(CliError::Validation)?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Endpoints {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translator: Option<Endpoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refiner: Option<Endpoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scorer: Option<Endpoint>,
    /// Falls back to the refiner.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotator: Option<Endpoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerSettings {
    #[serde(default)]
    pub mock: bool,
    /// Service reports scores on 0-100.
    #[serde(default)]
    pub hundred_scale: bool,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

fn default_batch() -> usize {
    64
}

impl Default for ScorerSettings {
    fn default() -> Self {
        ScorerSettings {
            mock: false,
            hundred_scale: false,
            batch_size: default_batch(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeSettings {
    #[serde(default)]
    pub translate: DecodeParams,
    #[serde(default)]
    pub refine: DecodeParams,
    #[serde(default)]
    pub annotate: DecodeParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub tokenizer: TokenizerSpec,
    #[serde(default = "default_budget")]
    pub chunk_budget: usize,
    #[serde(default)]
    pub endpoints: Endpoints,
    #[serde(default)]
    pub scorer: ScorerSettings,
    #[serde(default)]
    pub weights: WeightParams,
    #[serde(default)]
    pub decode: DecodeSettings,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_weight: Option<f64>,
    #[serde(default = "default_tie_eps")]
    pub tie_eps: f64,
    #[serde(default)]
    pub diverse: bool,
    /// Template bodies replacing the built-in ones, keyed by template id.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub templates: BTreeMap<TemplateId, String>,
}

fn default_budget() -> usize {
    DEFAULT_CHUNK_BUDGET
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_tie_eps() -> f64 {
    DEFAULT_TIE_EPS
}

/// Flags shared by all subcommands that override file values.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub min_weight: Option<f64>,
    pub tie_eps: Option<f64>,
    pub diverse: bool,
    pub mock_scorer: bool,
    pub hundred_scale: bool,
}

impl RunConfig {
    /// Reads the file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.corpus.source);
        if let Some(p) = cfg.corpus.reference.as_mut() {
            rebase(p);
        }
        if let Some(p) = cfg.corpus.lexicon.as_mut() {
            rebase(p);
        }
        if let TokenizerSpec::External { vocab } = &mut cfg.tokenizer {
            rebase(vocab);
        }
        rebase(&mut cfg.output_dir);
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(d) = &o.output_dir {
            self.output_dir = d.clone();
        }
        if o.min_weight.is_some() {
            self.min_weight = o.min_weight;
        }
        if let Some(e) = o.tie_eps {
            self.tie_eps = e;
        }
        self.diverse |= o.diverse;
        self.scorer.mock |= o.mock_scorer;
        self.scorer.hundred_scale |= o.hundred_scale;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let v = |m: String| Err(CliError::Validation(m));
        let mut paths = vec![("corpus.source", &self.corpus.source)];
        if let Some(p) = &self.corpus.reference {
            paths.push(("corpus.reference", p));
        }
        if let Some(p) = &self.corpus.lexicon {
            paths.push(("corpus.lexicon", p));
        }
        if let TokenizerSpec::External { vocab } = &self.tokenizer {
            paths.push(("tokenizer.vocab", vocab));
        }
        for (key, p) in paths {
            if !p.exists() {
                return v(format!("{key}: {} does not exist", p.display()));
            }
        }
        if self.corpus.format == CorpusFormat::PlaintextWithBoundaries {
            if self.corpus.reference.is_none() {
                return v("corpus.reference is required for the plaintext format".into());
            }
            if self.corpus.src_lang.is_none() || self.corpus.tgt_lang.is_none() {
                return v("corpus.src_lang and corpus.tgt_lang are required for the plaintext format".into());
            }
        }
        if self.chunk_budget == 0 {
            return v("chunk_budget must be >= 1".into());
        }
        if let TokenizerSpec::CharBudget { divisor: 0 } = self.tokenizer {
            return v("tokenizer.divisor must be >= 1".into());
        }
        self.weights
            .validate()
            .map_err(|e| CliError::Validation(e.to_string()))?;
        if let Some(m) = self.min_weight {
            if !m.is_finite() {
                return v(format!("min_weight must be finite, got {m}"));
            }
        }
        if !(self.tie_eps >= 0.0 && self.tie_eps.is_finite()) {
            return v(format!("tie_eps must be >= 0, got {}", self.tie_eps));
        }
        if self.scorer.batch_size == 0 {
            return v("scorer.batch_size must be >= 1".into());
        }
        for (name, dp) in [
            ("decode.translate", &self.decode.translate),
            ("decode.refine", &self.decode.refine),
            ("decode.annotate", &self.decode.annotate),
        ] {
            dp.validate()
                .map_err(|e| CliError::Validation(format!("{name}: {e}")))?;
        }
        self.template_set()?;
        Ok(())
    }

    pub fn template_set(&self) -> Result<TemplateSet, CliError> {
        TemplateSet::with_overrides(self.templates.iter().map(|(k, v)| (*k, v.clone())))
            .map_err(|e| CliError::Validation(e.to_string()))
    }

    pub fn translate_decode(&self) -> DecodeParams {
        if self.diverse {
            DecodeParams {
                max_tokens: self.decode.translate.max_tokens,
                ..DecodeParams::diverse()
            }
        } else {
            self.decode.translate
        }
    }

    pub fn endpoint(&self, role: Role) -> Result<EndpointConfig, CliError> {
        let e = match role {
            Role::Translator => &self.endpoints.translator,
            Role::Refiner => &self.endpoints.refiner,
            Role::Scorer => &self.endpoints.scorer,
            Role::Annotator if self.endpoints.annotator.is_some() => &self.endpoints.annotator,
            Role::Annotator => &self.endpoints.refiner,
        };
        e.as_ref()
            .ok_or_else(|| CliError::Validation(format!("endpoints.{} is not configured", role.key())))?
            .resolve()
    }

    /// SHA-256 over the configuration with output location, endpoint
    /// addresses and credentials removed and input paths cut to file names.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let base = |p: &mut PathBuf| *p = p.file_name().map(PathBuf::from).unwrap_or_default();
        base(&mut c.corpus.source);
        for p in [c.corpus.reference.as_mut(), c.corpus.lexicon.as_mut()]
            .into_iter()
            .flatten()
        {
            base(p);
        }
        if let TokenizerSpec::External { vocab } = &mut c.tokenizer {
            base(vocab);
        }
        for e in [
            &mut c.endpoints.translator,
            &mut c.endpoints.refiner,
            &mut c.endpoints.scorer,
            &mut c.endpoints.annotator,
        ]
        .into_iter()
        .flatten()
        {
            e.http.base_url.clear();
            e.http.api_key = None;
            e.api_key_env = None;
        }
        let v = serde_json::to_value(&c).expect("config serializes");
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Translator,
    Refiner,
    Scorer,
    Annotator,
}

impl Role {
    fn key(self) -> &'static str {
        match self {
            Role::Translator => "translator",
            Role::Refiner => "refiner",
            Role::Scorer => "scorer",
            Role::Annotator => "annotator",
        }
    }
}
