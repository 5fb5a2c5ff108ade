//! Quality-aware sentence weights, refinement quintuples and fine-tuning
//! dataset export.
//!
//! A sentence weight is `1 + lambda * (da - epsilon)` where `da` is the
//! reference-based quality of the better intermediate translation (or of the
//! first hypothesis in the prompt, or of the instance average, depending on
//! [`WeightMode`]). Weights are deliberately left unclamped; flooring is an
//! explicit choice made through [`apply_min_weight`].

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ChunkPair, Tokenizer};
use crate::prompting::{augment_swap, PromptError, TemplateSet};
use crate::translate::IntermediatePair;

pub const DEFAULT_LAMBDA: f64 = 3.75;
pub const DEFAULT_EPSILON: f64 = 0.7;

#[derive(Debug, Error)]
pub enum QualityError {
    #[error("score {value} outside [0, 1]{hint}")]
    ScoreRange { value: f64, hint: &'static str },
    #[error("invalid weight params: {0}")]
    Params(String),
    #[error("mode instance_avg is instance-level; use instance_weight")]
    InstanceMode,
    #[error("mode {0:?} is not instance-level; use sentence_weight")]
    SentenceMode(WeightMode),
    #[error("empty score lists")]
    Empty,
    #[error("{context}: length mismatch ({detail})")]
    Length { context: String, detail: String },
    #[error("document {doc_id} chunk {chunk_index}: {message}")]
    Quintuple {
        doc_id: String,
        chunk_index: usize,
        message: String,
    },
    #[error("log-probability {0} at index {1} is positive or not finite")]
    LogProb(f64, usize),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Reference-based quality score on the unit interval.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct DaScore(f64);

impl DaScore {
    pub fn new(value: f64) -> Result<Self, QualityError> {
        if !(0.0..=1.0).contains(&value) {
            let hint = if value > 1.0 && value <= 100.0 {
                " (looks like a 0-100 score; enable the 0-100 scale)"
            } else {
                ""
            };
            return Err(QualityError::ScoreRange { value, hint });
        }
        Ok(DaScore(value))
    }

    /// Accepts raw scorer output; with `hundred_scale` the value is divided by 100.
    pub fn ingest(raw: f64, hundred_scale: bool) -> Result<Self, QualityError> {
        if hundred_scale {
            Self::new(raw / 100.0)
        } else {
            Self::new(raw)
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for DaScore {
    type Error = QualityError;
    fn try_from(v: f64) -> Result<Self, Self::Error> {
        DaScore::new(v)
    }
}

impl From<DaScore> for f64 {
    fn from(s: DaScore) -> f64 {
        s.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Better of the two intermediate translations, per sentence.
    #[default]
    MaxPair,
    /// Whichever hypothesis the prompt lists first, per sentence.
    FirstHyp,
    /// One weight per instance from the better average score.
    InstanceAvg,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightParams {
    pub lambda: f64,
    pub epsilon: f64,
    #[serde(default)]
    pub mode: WeightMode,
}

impl Default for WeightParams {
    fn default() -> Self {
        WeightParams {
            lambda: DEFAULT_LAMBDA,
            epsilon: DEFAULT_EPSILON,
            mode: WeightMode::MaxPair,
        }
    }
}

impl WeightParams {
    pub fn validate(&self) -> Result<(), QualityError> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(QualityError::Params(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(QualityError::Params(format!(
                "epsilon must be in [0, 1], got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// Smallest weight reachable from scores in [0, 1].
    pub fn min_weight(&self) -> f64 {
        1.0 - self.lambda * self.epsilon
    }

    fn weight_of(&self, da: f64) -> f64 {
        1.0 + self.lambda * (da - self.epsilon)
    }
}

/// Per-sentence weight. In `first_hyp` mode `da_first` must be the score of the
/// hypothesis placed first in the prompt.
pub fn sentence_weight(da_first: DaScore, da_second: DaScore, p: &WeightParams) -> Result<f64, QualityError> {
    match p.mode {
        WeightMode::MaxPair => Ok(p.weight_of(da_first.0.max(da_second.0))),
        WeightMode::FirstHyp => Ok(p.weight_of(da_first.0)),
        WeightMode::InstanceAvg => Err(QualityError::InstanceMode),
    }
}

pub fn instance_weight(da_y: &[DaScore], da_z: &[DaScore], p: &WeightParams) -> Result<f64, QualityError> {
    if p.mode != WeightMode::InstanceAvg {
        return Err(QualityError::SentenceMode(p.mode));
    }
    if da_y.is_empty() || da_z.is_empty() {
        return Err(QualityError::Empty);
    }
    if da_y.len() != da_z.len() {
        return Err(QualityError::Length {
            context: "instance_weight".into(),
            detail: format!("{} vs {}", da_y.len(), da_z.len()),
        });
    }
    let mean = |xs: &[DaScore]| xs.iter().map(|s| s.0).sum::<f64>() / xs.len() as f64;
    Ok(p.weight_of(mean(da_y).max(mean(da_z))))
}

/// `(src, y, z, w, ref)` plus bookkeeping. `y` is the sentence-level and `z`
/// the document-level intermediate translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementQuintuple {
    pub doc_id: String,
    pub chunk_index: usize,
    pub src_lang: String,
    pub tgt_lang: String,
    pub src: Vec<String>,
    pub y: Vec<String>,
    pub z: Vec<String>,
    /// Weights for the instance that lists `y` first.
    pub weights: Vec<f64>,
    /// Weights for the instance that lists `z` first; only differs in `first_hyp` mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub swapped_weights: Option<Vec<f64>>,
    #[serde(rename = "ref")]
    pub reference: Vec<String>,
}

impl RefinementQuintuple {
    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn weights_for(&self, swapped: bool) -> &[f64] {
        match (&self.swapped_weights, swapped) {
            (Some(w), true) => w,
            _ => &self.weights,
        }
    }

    pub fn validate(&self, p: &WeightParams) -> Result<(), QualityError> {
        let n = self.src.len();
        let err = |message: String| QualityError::Quintuple {
            doc_id: self.doc_id.clone(),
            chunk_index: self.chunk_index,
            message,
        };
        let lens = [
            ("y", self.y.len()),
            ("z", self.z.len()),
            ("weights", self.weights.len()),
            ("ref", self.reference.len()),
        ];
        if n == 0 {
            return Err(err("empty quintuple".into()));
        }
        for (name, len) in lens {
            if len != n {
                return Err(err(format!("{name} has {len} entries, src has {n}")));
            }
        }
        let floor = p.min_weight() - 1e-12;
        for w in self.weights.iter().chain(self.swapped_weights.iter().flatten()) {
            if !w.is_finite() || *w < floor {
                return Err(err(format!("weight {w} below {} or not finite", p.min_weight())));
            }
        }
        Ok(())
    }
}

/// Assembles a quintuple for one aligned chunk.
pub fn build_quintuple(
    pair: &ChunkPair,
    inter: &IntermediatePair,
    scores_y: &[DaScore],
    scores_z: &[DaScore],
    p: &WeightParams,
) -> Result<RefinementQuintuple, QualityError> {
    let doc_id = &pair.chunk.doc_id;
    let n = pair.chunk.len();
    let reference = pair.reference.as_ref().ok_or_else(|| QualityError::Quintuple {
        doc_id: doc_id.clone(),
        chunk_index: pair.chunk.chunk_index,
        message: "chunk has no aligned reference".into(),
    })?;
    let lists = [
        ("ref", reference.len()),
        ("sent2sent", inter.sent2sent.len()),
        ("doc2doc", inter.doc2doc.len()),
        ("scores_y", scores_y.len()),
        ("scores_z", scores_z.len()),
    ];
    let bad: Vec<String> = lists
        .iter()
        .filter(|(_, l)| *l != n)
        .map(|(name, l)| format!("{name}={l}"))
        .collect();
    if !bad.is_empty() {
        return Err(QualityError::Length {
            context: format!("document {doc_id} chunk {}", pair.chunk.chunk_index),
            detail: format!("src={n}, {}", bad.join(", ")),
        });
    }

    let (weights, swapped_weights) = match p.mode {
        WeightMode::InstanceAvg => (vec![instance_weight(scores_y, scores_z, p)?; n], None),
        WeightMode::MaxPair => (
            scores_y
                .iter()
                .zip(scores_z)
                .map(|(y, z)| sentence_weight(*y, *z, p))
                .collect::<Result<Vec<_>, _>>()?,
            None,
        ),
        WeightMode::FirstHyp => {
            let w = |a: &[DaScore], b: &[DaScore]| {
                a.iter()
                    .zip(b)
                    .map(|(x, y)| sentence_weight(*x, *y, p))
                    .collect::<Result<Vec<_>, _>>()
            };
            (w(scores_y, scores_z)?, Some(w(scores_z, scores_y)?))
        }
    };

    Ok(RefinementQuintuple {
        doc_id: doc_id.clone(),
        chunk_index: pair.chunk.chunk_index,
        src_lang: pair.src_lang.clone(),
        tgt_lang: pair.tgt_lang.clone(),
        src: pair.chunk.sentences.clone(),
        y: inter.sent2sent.clone(),
        z: inter.doc2doc.clone(),
        weights,
        swapped_weights,
        reference: reference.clone(),
    })
}

/// Floors every weight at `min`.
pub fn apply_min_weight(q: &mut RefinementQuintuple, min: f64) {
    for w in q.weights.iter_mut().chain(q.swapped_weights.iter_mut().flatten()) {
        *w = w.max(min);
    }
}

/// Sentence weights expanded onto the tokens of the reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenWeightVector {
    pub tokens: Vec<String>,
    pub weights: Vec<f64>,
    pub sentence_spans: Vec<(usize, usize)>,
}

impl TokenWeightVector {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn uniform(n: usize, w: f64) -> Self {
        TokenWeightVector {
            tokens: vec![String::new(); n],
            weights: vec![w; n],
            sentence_spans: vec![(0, n)],
        }
    }
}

pub fn expand_token_weights(
    reference: &[String],
    weights: &[f64],
    tok: &Tokenizer,
) -> Result<TokenWeightVector, QualityError> {
    if reference.len() != weights.len() {
        return Err(QualityError::Length {
            context: "expand_token_weights".into(),
            detail: format!("{} sentences vs {} weights", reference.len(), weights.len()),
        });
    }
    let mut tokens = Vec::new();
    let mut token_weights = Vec::new();
    let mut spans = Vec::with_capacity(reference.len());
    for (sentence, &w) in reference.iter().zip(weights) {
        let start = tokens.len();
        for piece in tok.tokenize(sentence) {
            tokens.push(piece.to_string());
            token_weights.push(w);
        }
        spans.push((start, tokens.len()));
    }
    debug_assert!(spans
        .iter()
        .zip(weights)
        .all(|(&(s, e), &w)| token_weights[s..e].iter().all(|&x| x == w)));
    Ok(TokenWeightVector {
        tokens,
        weights: token_weights,
        sentence_spans: spans,
    })
}

/// `-sum_i w_i * logprob_i`; with unit weights this is the plain token NLL.
pub fn weighted_nll(token_logprobs: &[f64], v: &TokenWeightVector) -> Result<f64, QualityError> {
    if token_logprobs.len() != v.weights.len() {
        return Err(QualityError::Length {
            context: "weighted_nll".into(),
            detail: format!("{} log-probs vs {} weights", token_logprobs.len(), v.weights.len()),
        });
    }
    let mut total = 0.0;
    for (i, (&lp, &w)) in token_logprobs.iter().zip(&v.weights).enumerate() {
        if !(lp <= 0.0) {
            return Err(QualityError::LogProb(lp, i));
        }
        total -= w * lp;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    #[serde(rename = "stage1_naive")]
    Stage1Naive,
    #[serde(rename = "stage2_qa")]
    Stage2Qa,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Stage1Naive => "stage1_naive",
            Stage::Stage2Qa => "stage2_qa",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub doc_id: String,
    pub chunk_index: usize,
    pub swapped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub prompt: String,
    pub target: String,
    pub sentence_weights: Vec<f64>,
    pub stage: Stage,
    pub meta: RecordMeta,
}

/// Two records per quintuple (both candidate orders). Stage 1 forces unit weights.
pub fn dataset_records(
    quintuples: &[RefinementQuintuple],
    stage: Stage,
    templates: &TemplateSet,
) -> Result<Vec<DatasetRecord>, QualityError> {
    let mut out = Vec::with_capacity(quintuples.len() * 2);
    for q in quintuples {
        for inst in augment_swap(q, templates)? {
            let swapped = inst.meta.swapped.unwrap_or(false);
            let sentence_weights = match stage {
                Stage::Stage1Naive => vec![1.0; q.len()],
                Stage::Stage2Qa => q.weights_for(swapped).to_vec(),
            };
            out.push(DatasetRecord {
                id: format!(
                    "{}:{}:{}",
                    q.doc_id,
                    q.chunk_index,
                    if swapped { "swap" } else { "orig" }
                ),
                prompt: inst.prompt,
                target: inst.target.unwrap_or_default(),
                sentence_weights,
                stage,
                meta: RecordMeta {
                    doc_id: inst.meta.doc_id,
                    chunk_index: inst.meta.chunk_index,
                    swapped,
                },
            });
        }
    }
    Ok(out)
}

/// Writes the stage's records as JSONL and returns how many were written.
pub fn export_dataset(
    quintuples: &[RefinementQuintuple],
    stage: Stage,
    templates: &TemplateSet,
    out_path: &Path,
) -> Result<usize, QualityError> {
    let records = dataset_records(quintuples, stage, templates)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(out_path)?);
    for r in &records {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(records.len())
}

/// Fine-tuning settings carried alongside exported datasets. Inert: nothing in
/// this crate trains, but downstream trainers read these from the header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub method: String,
    pub lora_rank: u32,
    pub lora_alpha: u32,
    pub lora_target_modules: Vec<String>,
    pub optimizer: String,
    pub lr_scheduler: String,
    pub learning_rate: f64,
    pub warmup_ratio: f64,
    pub batch_size: u32,
    pub gradient_accumulation_steps: u32,
    pub epochs_per_stage: u32,
    pub weights: WeightParams,
}

impl Default for TrainingMetadata {
    fn default() -> Self {
        TrainingMetadata {
            method: "qlora".into(),
            lora_rank: 8,
            lora_alpha: 16,
            lora_target_modules: vec!["q_proj".into(), "v_proj".into()],
            optimizer: "adamw".into(),
            lr_scheduler: "cosine".into(),
            learning_rate: 1e-4,
            warmup_ratio: 0.1,
            batch_size: 2,
            gradient_accumulation_steps: 8,
            epochs_per_stage: 1,
            weights: WeightParams::default(),
        }
    }
}
