//! Per-sentence reranking of two candidates by reference-free score, and
//! rerank followed by single-candidate refinement.

use serde::{Deserialize, Serialize};

use crate::corpus::ChunkPair;
use crate::llm_client::{DecodeParams, LlmClient};
use crate::prompting::{TemplateId, TemplateSet};
use crate::quality::DaScore;
use crate::translate::{refine_single, ParseReport, TranslateError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RerankMode {
    #[default]
    AsSentCandidate,
    AsDocCandidate,
}

impl RerankMode {
    pub fn template(self) -> TemplateId {
        match self {
            RerankMode::AsSentCandidate => TemplateId::RefineSingleSent,
            RerankMode::AsDocCandidate => TemplateId::RefineSingleDoc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LengthMismatch {
    pub y: usize,
    pub z: usize,
    pub kiwi_y: usize,
    pub kiwi_z: usize,
}

impl std::fmt::Display for LengthMismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "rerank inputs differ in length: y={}, z={}, kiwi_y={}, kiwi_z={}",
            self.y, self.z, self.kiwi_y, self.kiwi_z
        )
    }
}

impl std::error::Error for LengthMismatch {}

/// Index-wise argmax; ties keep `y`.
pub fn rerank_select(
    y: &[String],
    z: &[String],
    kiwi_y: &[DaScore],
    kiwi_z: &[DaScore],
) -> Result<Vec<String>, LengthMismatch> {
    let n = y.len();
    if z.len() != n || kiwi_y.len() != n || kiwi_z.len() != n {
        return Err(LengthMismatch {
            y: n,
            z: z.len(),
            kiwi_y: kiwi_y.len(),
            kiwi_z: kiwi_z.len(),
        });
    }
    Ok((0..n)
        .map(|i| {
            if kiwi_y[i].value() >= kiwi_z[i].value() {
                y[i].clone()
            } else {
                z[i].clone()
            }
        })
        .collect())
}

#[allow(clippy::too_many_arguments)]
pub async fn rerank_refine(
    client: &LlmClient,
    templates: &TemplateSet,
    pair: &ChunkPair,
    y: &[String],
    z: &[String],
    kiwi_y: &[DaScore],
    kiwi_z: &[DaScore],
    mode: RerankMode,
    dp: &DecodeParams,
) -> Result<(Vec<String>, ParseReport), TranslateError> {
    let selected = rerank_select(y, z, kiwi_y, kiwi_z).map_err(|e| TranslateError::Shape {
        doc_id: pair.chunk.doc_id.clone(),
        chunk_index: pair.chunk.chunk_index,
        message: e.to_string(),
    })?;
    refine_single(client, templates, mode.template(), pair, &selected, dp).await
}
