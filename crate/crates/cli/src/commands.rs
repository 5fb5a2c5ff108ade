use std::collections::HashMap;
use std::path::Path;

use anyhow::anyhow;
use futures::future::join_all;
use refinekit_core::annotate::{aggregate_errors, build_mqm_prompt_with, parse_mqm, tally_csv, ErrorRecord};
use refinekit_core::corpus::{load_corpus, ChunkPair, Document, LoadOptions, ParallelDocument};
use refinekit_core::llm_client::LlmClient;
use refinekit_core::metrics::{
    coherence, compare_systems, d_bleu, distribution_csv, ltcr, score_distribution, BleuTokenize, DocumentMetrics,
    Lexicon, MetricReport,
};
use refinekit_core::prompting::TemplateSet;
use refinekit_core::quality::{
    apply_min_weight, build_quintuple, export_dataset, DaScore, RefinementQuintuple, Stage, TrainingMetadata,
};
use refinekit_core::rerank::{rerank_refine, rerank_select, RerankMode};
use refinekit_core::scorer::{HttpScorer, ScoreItem, ScoreMetric, Scorer};
use refinekit_core::translate::{refine, translate_doc2doc, translate_sent2sent, IntermediatePair, ParseReport};
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::artifacts::{documents_from_chunks, system_chunks, Run, ScoreRecord, SystemChunk, CHUNKS};
use crate::config::{Role, RunConfig};
use crate::{CliError, Command, MetricArg, RefineArg, StageArg, TokenizeArg, TranslateMode};

type Result<T> = std::result::Result<T, CliError>;

fn validation(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

pub(crate) async fn dispatch(cfg: &RunConfig, cmd: Command) -> Result<()> {
    let templates = cfg.template_set()?;
    let mut run = Run::new(&cfg.output_dir, cmd.name(), cfg.hash())?;
    let outcome = match cmd {
        Command::Prepare => prepare(cfg, &mut run),
        Command::Translate { mode } => translate(cfg, &templates, &mut run, mode).await,
        Command::Score { metric, systems, .. } => score(cfg, &mut run, metric, &systems).await,
        Command::BuildDataset { stage } => build_dataset(cfg, &templates, &mut run, stage),
        Command::Refine { h1, h2, name } => refine_cmd(cfg, &templates, &mut run, &h1, h2.as_deref(), &name).await,
        Command::Evaluate {
            systems,
            tokenize,
            coherence,
            scorer_metrics,
            ..
        } => evaluate(cfg, &mut run, &systems, tokenize, coherence, scorer_metrics).await,
        Command::Rerank { y, z, refine, name } => rerank(cfg, &templates, &mut run, &y, &z, refine, name).await,
        Command::Annotate { system } => annotate(cfg, &templates, &mut run, &system).await,
        Command::Compare { a, b, metric } => compare(cfg, &mut run, &a, &b, metric),
        Command::Stats {
            system,
            minus,
            metric,
            bin_width,
        } => stats(&mut run, &system, minus.as_deref(), metric, bin_width),
    };
    if let Err(e @ CliError::Validation(_)) = outcome {
        return Err(e);
    }
    // partial results still get a manifest
    let manifest = run.finish()?;
    info!(manifest = %manifest.display(), "wrote manifest");
    outcome
}

fn load_documents(cfg: &RunConfig, run: &mut Run) -> Result<Vec<ParallelDocument>> {
    let opts = LoadOptions {
        require_aligned: cfg.corpus.require_aligned,
        reference: cfg.corpus.reference.clone(),
        src_lang: cfg.corpus.src_lang.clone(),
        tgt_lang: cfg.corpus.tgt_lang.clone(),
    };
    let docs = load_corpus(&cfg.corpus.source, cfg.corpus.format, &opts).map_err(|e| validation(e.to_string()))?;
    run.input(&cfg.corpus.source);
    if let Some(r) = &cfg.corpus.reference {
        run.input(r);
    }
    if docs.is_empty() {
        return Err(validation("corpus contains no documents"));
    }
    Ok(docs)
}

fn prepare(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let tok = cfg.tokenizer.load().map_err(|e| validation(e.to_string()))?;
    let docs = load_documents(cfg, run)?;
    let chunks: Vec<ChunkPair> = docs.iter().flat_map(|d| d.chunk(cfg.chunk_budget, &tok)).collect();
    run.write_jsonl(CHUNKS, &chunks)?;
    run.note("documents", docs.len());
    run.note("chunks", chunks.len());
    run.note("unaligned_documents", docs.iter().filter(|d| !d.aligned).count());
    info!(documents = docs.len(), chunks = chunks.len(), "prepared corpus");
    Ok(())
}

fn client(cfg: &RunConfig, role: Role) -> Result<LlmClient> {
    let ep = cfg.endpoint(role)?;
    LlmClient::new(ep).map_err(|e| validation(e.to_string()))
}

fn failed_chunk(pair: &ChunkPair) -> SystemChunk {
    SystemChunk {
        doc_id: pair.chunk.doc_id.clone(),
        chunk_index: pair.chunk.chunk_index,
        sentences: vec![String::new(); pair.chunk.len()],
        parse_report: None,
        degraded: true,
    }
}

fn output_chunk(pair: &ChunkPair, sentences: Vec<String>, report: Option<ParseReport>) -> SystemChunk {
    SystemChunk {
        doc_id: pair.chunk.doc_id.clone(),
        chunk_index: pair.chunk.chunk_index,
        sentences,
        parse_report: report,
        degraded: false,
    }
}

/// Writes a system's chunks and per-document text, then fails if any chunk failed.
fn write_system(run: &mut Run, chunks: &[ChunkPair], system: &str, outputs: Vec<SystemChunk>) -> Result<()> {
    let failed = outputs.iter().filter(|o| o.degraded).count();
    let repaired = outputs
        .iter()
        .filter(|o| o.parse_report.as_ref().is_some_and(|r| r.repaired))
        .count();
    run.write_jsonl(&system_chunks(system), &outputs)?;
    let docs = documents_from_chunks(chunks, &outputs, |c| c.tgt_lang.clone())?;
    run.write_documents(system, &docs)?;
    run.note(&format!("{system}_failed_chunks"), failed);
    run.note(&format!("{system}_repaired_chunks"), repaired);
    if failed > 0 {
        return Err(anyhow!("{system}: {failed} of {} chunks failed", outputs.len()).into());
    }
    Ok(())
}

async fn translate(cfg: &RunConfig, templates: &TemplateSet, run: &mut Run, mode: TranslateMode) -> Result<()> {
    let client = client(cfg, Role::Translator)?;
    let chunks: Vec<ChunkPair> = run.read_jsonl(CHUNKS)?;
    let dp = cfg.translate_decode();
    let mut first_err = None;
    if matches!(mode, TranslateMode::Sent2sent | TranslateMode::Both) {
        let outs = join_all(chunks.iter().map(|p| async {
            match translate_sent2sent(&client, templates, p, &dp).await {
                Ok(s) => output_chunk(p, s, None),
                Err(e) => {
                    warn!(doc_id = %p.chunk.doc_id, chunk = p.chunk.chunk_index, error = %e, "sent2sent failed");
                    failed_chunk(p)
                }
            }
        }))
        .await;
        if let Err(e) = write_system(run, &chunks, "sent2sent", outs) {
            first_err.get_or_insert(e);
        }
    }
    if matches!(mode, TranslateMode::Doc2doc | TranslateMode::Both) {
        let outs = join_all(chunks.iter().map(|p| async {
            match translate_doc2doc(&client, templates, p, &dp).await {
                Ok((s, rep)) => output_chunk(p, s, Some(rep)),
                Err(e) => {
                    warn!(doc_id = %p.chunk.doc_id, chunk = p.chunk.chunk_index, error = %e, "doc2doc failed");
                    failed_chunk(p)
                }
            }
        }))
        .await;
        if let Err(e) = write_system(run, &chunks, "doc2doc", outs) {
            first_err.get_or_insert(e);
        }
    }
    run.note("retries", client.retry_count());
    run.note("decode", dp);
    first_err.map_or(Ok(()), Err)
}

fn scorer(cfg: &RunConfig) -> Result<Scorer> {
    if cfg.scorer.mock {
        return Ok(Scorer::Mock);
    }
    let ep = cfg.endpoint(Role::Scorer)?;
    Ok(Scorer::Http(
        HttpScorer::new(ep)
            .map_err(|e| validation(e.to_string()))?
            .batch_size(cfg.scorer.batch_size),
    ))
}

fn metric_of(m: MetricArg) -> ScoreMetric {
    match m {
        MetricArg::Da => ScoreMetric::Da,
        MetricArg::Qe => ScoreMetric::Qe,
    }
}

fn scores_file(m: MetricArg) -> String {
    format!("scores.{}.jsonl", metric_of(m).as_str())
}

fn ingest(raw: &[f64], cfg: &RunConfig) -> Result<Vec<f64>> {
    raw.iter()
        .map(|&r| {
            DaScore::ingest(r, cfg.scorer.hundred_scale)
                .map(DaScore::value)
                .map_err(|e| CliError::Runtime(e.into()))
        })
        .collect()
}

async fn score(cfg: &RunConfig, run: &mut Run, metric: MetricArg, systems: &[String]) -> Result<()> {
    let scorer = scorer(cfg)?;
    let m = metric_of(metric);
    let chunks: Vec<ChunkPair> = run.read_jsonl(CHUNKS)?;
    let mut records = Vec::new();
    let mut skipped = 0usize;
    for system in systems {
        let outputs: Vec<SystemChunk> = run.read_jsonl(&system_chunks(system))?;
        let by_key = index_outputs(&outputs);
        let mut items = Vec::new();
        let mut spans = Vec::new();
        for p in &chunks {
            let Some(out) = by_key.get(&(p.chunk.doc_id.as_str(), p.chunk.chunk_index)) else {
                skipped += 1;
                continue;
            };
            let reference = match (m, &p.reference) {
                (ScoreMetric::Da, None) => {
                    skipped += 1;
                    continue;
                }
                (_, r) => r,
            };
            if out.degraded || out.sentences.len() != p.chunk.len() {
                skipped += 1;
                continue;
            }
            let start = items.len();
            for (i, (src, mt)) in p.chunk.sentences.iter().zip(&out.sentences).enumerate() {
                let r = match m {
                    ScoreMetric::Da => reference.as_ref().map(|r| r[i].clone()),
                    ScoreMetric::Qe => None,
                };
                items.push(ScoreItem::new(src.clone(), mt.clone(), r));
            }
            spans.push((p, start..items.len()));
        }
        if items.is_empty() {
            warn!(system, "nothing to score");
            continue;
        }
        let raw = scorer.score(m, &items).await.map_err(|e| CliError::Runtime(e.into()))?;
        let vals = ingest(&raw, cfg)?;
        for (p, r) in spans {
            records.push(ScoreRecord {
                system: system.clone(),
                doc_id: p.chunk.doc_id.clone(),
                chunk_index: p.chunk.chunk_index,
                scores: vals[r].to_vec(),
            });
        }
    }
    run.write_jsonl(&scores_file(metric), &records)?;
    run.note("mock", scorer.is_mock());
    run.note("skipped_chunks", skipped);
    if skipped > 0 {
        warn!(skipped, "chunks skipped while scoring");
    }
    Ok(())
}

fn index_outputs(outputs: &[SystemChunk]) -> HashMap<(&str, usize), &SystemChunk> {
    outputs
        .iter()
        .map(|o| ((o.doc_id.as_str(), o.chunk_index), o))
        .collect()
}

fn index_scores<'a>(records: &'a [ScoreRecord], system: &str) -> HashMap<(&'a str, usize), &'a [f64]> {
    records
        .iter()
        .filter(|r| r.system == system)
        .map(|r| ((r.doc_id.as_str(), r.chunk_index), r.scores.as_slice()))
        .collect()
}

fn das(v: &[f64]) -> Result<Vec<DaScore>> {
    v.iter()
        .map(|&x| DaScore::new(x).map_err(|e| CliError::Runtime(e.into())))
        .collect()
}

fn build_dataset(cfg: &RunConfig, templates: &TemplateSet, run: &mut Run, stage: StageArg) -> Result<()> {
    let chunks: Vec<ChunkPair> = run.read_jsonl(CHUNKS)?;
    let y_out: Vec<SystemChunk> = run.read_jsonl(&system_chunks("sent2sent"))?;
    let z_out: Vec<SystemChunk> = run.read_jsonl(&system_chunks("doc2doc"))?;
    let needs_scores = stage != StageArg::Stage1;
    let scores_rel = scores_file(MetricArg::Da);
    let scores: Vec<ScoreRecord> = if needs_scores || run.path(&scores_rel).exists() {
        run.read_jsonl(&scores_rel)?
    } else {
        Vec::new()
    };
    let (ys, zs) = (index_outputs(&y_out), index_outputs(&z_out));
    let (sy, sz) = (index_scores(&scores, "sent2sent"), index_scores(&scores, "doc2doc"));

    let mut quintuples = Vec::new();
    let mut skipped = 0usize;
    for p in &chunks {
        let key = (p.chunk.doc_id.as_str(), p.chunk.chunk_index);
        let (Some(y), Some(z)) = (ys.get(&key), zs.get(&key)) else {
            skipped += 1;
            continue;
        };
        if y.degraded || z.degraded || p.reference.is_none() {
            skipped += 1;
            continue;
        }
        let inter = IntermediatePair {
            sent2sent: y.sentences.clone(),
            doc2doc: z.sentences.clone(),
            parse_report: z
                .parse_report
                .clone()
                .unwrap_or_else(|| ParseReport::clean(p.chunk.len())),
            degraded: false,
        };
        let q = match (sy.get(&key), sz.get(&key)) {
            (Some(a), Some(b)) => build_quintuple(p, &inter, &das(a)?, &das(b)?, &cfg.weights),
            _ if !needs_scores => {
                let ones = vec![DaScore::new(1.0).expect("in range"); p.chunk.len()];
                build_quintuple(p, &inter, &ones, &ones, &cfg.weights)
            }
            _ => {
                skipped += 1;
                continue;
            }
        };
        let mut q: RefinementQuintuple = q.map_err(|e| CliError::Runtime(e.into()))?;
        if let Some(min) = cfg.min_weight {
            apply_min_weight(&mut q, min);
        }
        quintuples.push(q);
    }
    if skipped > 0 {
        warn!(skipped, "chunks skipped (degraded, unaligned or unscored)");
    }
    if quintuples.is_empty() {
        return Err(anyhow!("no usable chunks for the dataset").into());
    }
    let stages: &[Stage] = match stage {
        StageArg::Stage1 => &[Stage::Stage1Naive],
        StageArg::Stage2 => &[Stage::Stage2Qa],
        StageArg::Both => &[Stage::Stage1Naive, Stage::Stage2Qa],
    };
    let mut counts = serde_json::Map::new();
    for &s in stages {
        let rel = format!("dataset.{}.jsonl", s.as_str());
        let n = export_dataset(&quintuples, s, templates, &run.path(&rel)).map_err(|e| CliError::Runtime(e.into()))?;
        run.adopt(&rel);
        counts.insert(s.as_str().into(), n.into());
    }
    let training = TrainingMetadata {
        weights: cfg.weights,
        ..Default::default()
    };
    let meta = serde_json::json!({
        "training": training,
        "min_weight": cfg.min_weight,
        "quintuples": quintuples.len(),
        "records": counts,
    });
    run.write_json("dataset.meta.json", &meta)?;
    run.note("training", training);
    run.note("records", counts);
    run.note("skipped_chunks", skipped);
    Ok(())
}

#[derive(Deserialize)]
struct ExternalDoc {
    doc_id: String,
    sentences: Vec<String>,
}

/// A candidate given on the command line: an earlier system's name, or a JSONL
/// file with one `{"doc_id", "sentences"}` object per document.
fn candidate(run: &mut Run, chunks: &[ChunkPair], given: &str) -> Result<HashMap<(String, usize), Vec<String>>> {
    let path = Path::new(given);
    if path.is_file() {
        let docs: Vec<ExternalDoc> = crate::artifacts::read_jsonl(path).map_err(|e| validation(format!("{e:#}")))?;
        run.input(path);
        let by_id: HashMap<&str, &ExternalDoc> = docs.iter().map(|d| (d.doc_id.as_str(), d)).collect();
        let mut out = HashMap::new();
        for p in chunks {
            let d = by_id
                .get(p.chunk.doc_id.as_str())
                .ok_or_else(|| validation(format!("{given}: no document {}", p.chunk.doc_id)))?;
            let (a, b) = p.chunk.sentence_span;
            if d.sentences.len() < b {
                return Err(validation(format!(
                    "{given}: document {} has {} sentences, source needs at least {b}",
                    d.doc_id,
                    d.sentences.len()
                )));
            }
            out.insert(
                (p.chunk.doc_id.clone(), p.chunk.chunk_index),
                d.sentences[a..b].to_vec(),
            );
        }
        return Ok(out);
    }
    let outputs: Vec<SystemChunk> = run
        .read_jsonl(&system_chunks(given))
        .map_err(|e| validation(format!("{e:#}")))?;
    Ok(outputs
        .into_iter()
        .filter(|o| !o.degraded)
        .map(|o| ((o.doc_id, o.chunk_index), o.sentences))
        .collect())
}

async fn refine_cmd(
    cfg: &RunConfig,
    templates: &TemplateSet,
    run: &mut Run,
    h1: &str,
    h2: Option<&str>,
    name: &str,
) -> Result<()> {
    let client = client(cfg, Role::Refiner)?;
    let chunks: Vec<ChunkPair> = run.read_jsonl(CHUNKS)?;
    let c1 = candidate(run, &chunks, h1)?;
    let c2 = match h2 {
        Some(h) => candidate(run, &chunks, h)?,
        None => c1.clone(),
    };
    let dp = cfg.decode.refine;
    let outs = join_all(chunks.iter().map(|p| {
        let key = (p.chunk.doc_id.clone(), p.chunk.chunk_index);
        let (a, b) = (c1.get(&key), c2.get(&key));
        let client = &client;
        async move {
            let (Some(a), Some(b)) = (a, b) else {
                warn!(doc_id = %p.chunk.doc_id, chunk = p.chunk.chunk_index, "missing candidate");
                return failed_chunk(p);
            };
            match refine(client, templates, p, a, b, &dp).await {
                Ok((s, rep)) => output_chunk(p, s, Some(rep)),
                Err(e) => {
                    warn!(doc_id = %p.chunk.doc_id, chunk = p.chunk.chunk_index, error = %e, "refine failed");
                    failed_chunk(p)
                }
            }
        }
    }))
    .await;
    run.note("h1", h1);
    run.note("h2", h2.unwrap_or(h1));
    run.note("retries", client.retry_count());
    write_system(run, &chunks, name, outs)
}

fn bleu_mode(t: TokenizeArg) -> BleuTokenize {
    match t {
        TokenizeArg::Thirteen => BleuTokenize::Thirteen,
        TokenizeArg::Intl => BleuTokenize::Intl,
        TokenizeArg::None => BleuTokenize::None,
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

async fn evaluate(
    cfg: &RunConfig,
    run: &mut Run,
    systems: &[String],
    tokenize: TokenizeArg,
    want_coherence: bool,
    scorer_metrics: bool,
) -> Result<()> {
    let scorer = if want_coherence || scorer_metrics {
        Some(scorer(cfg)?)
    } else {
        None
    };
    let lexicon = match &cfg.corpus.lexicon {
        Some(p) => {
            run.input(p);
            Some(Lexicon::from_file(p).map_err(|e| validation(e.to_string()))?)
        }
        None => None,
    };
    let corpus = load_documents(cfg, run)?;
    let chunks: Vec<ChunkPair> = run.read_jsonl(CHUNKS)?;
    let mode = bleu_mode(tokenize);
    let src_docs: Vec<Document> = corpus.iter().map(|d| d.source.clone()).collect();
    let ref_docs: Vec<Document> = corpus.iter().map(|d| d.reference.clone()).collect();
    let runtime = |e: refinekit_core::metrics::MetricError| CliError::Runtime(e.into());

    for system in systems {
        let outputs: Vec<SystemChunk> = run.read_jsonl(&system_chunks(system))?;
        let hyp_docs = documents_from_chunks(&chunks, &outputs, |c| c.tgt_lang.clone())?;
        let mut report = MetricReport {
            system_name: system.clone(),
            d_bleu: d_bleu(&hyp_docs, &ref_docs, mode).map_err(runtime)?,
            ltcr: None,
            coherence: None,
            scorer_metrics: Default::default(),
            per_document: Default::default(),
        };
        for (h, r) in hyp_docs.iter().zip(&ref_docs) {
            let doc_ltcr = match &lexicon {
                Some(lex) => {
                    let src = src_docs.iter().find(|s| s.doc_id == h.doc_id).expect("corpus document");
                    let res = ltcr(std::slice::from_ref(src), std::slice::from_ref(h), lex).map_err(runtime)?;
                    (!res.vacuous).then_some(res.score)
                }
                None => None,
            };
            report.per_document.insert(
                h.doc_id.clone(),
                DocumentMetrics {
                    d_bleu: d_bleu(std::slice::from_ref(h), std::slice::from_ref(r), mode).map_err(runtime)?,
                    ltcr: doc_ltcr,
                    coherence: None,
                },
            );
        }
        if let Some(lex) = &lexicon {
            report.ltcr = Some(ltcr(&src_docs, &hyp_docs, lex).map_err(runtime)?);
        }
        if let Some(scorer) = &scorer {
            let err = |e: refinekit_core::scorer::ScorerError| CliError::Runtime(e.into());
            if want_coherence {
                let mut embeddings = Vec::new();
                for h in &hyp_docs {
                    let texts: Vec<String> = h.sentences.clone();
                    let e = if texts.is_empty() {
                        Vec::new()
                    } else {
                        scorer.embed(&texts).await.map_err(err)?
                    };
                    if let Some(c) = coherence(std::slice::from_ref(&e)).map_err(runtime)?.score {
                        if let Some(d) = report.per_document.get_mut(&h.doc_id) {
                            d.coherence = Some(c);
                        }
                    }
                    embeddings.push(e);
                }
                report.coherence = Some(coherence(&embeddings).map_err(runtime)?);
            }
            if scorer_metrics {
                let mut sent_items = Vec::new();
                for ((s, h), r) in src_docs.iter().zip(&hyp_docs).zip(&ref_docs) {
                    if s.len() == h.len() && s.len() == r.len() {
                        for i in 0..s.len() {
                            sent_items.push(ScoreItem::new(
                                s.sentences[i].clone(),
                                h.sentences[i].clone(),
                                Some(r.sentences[i].clone()),
                            ));
                        }
                    }
                }
                if !sent_items.is_empty() {
                    let raw = scorer.score(ScoreMetric::Da, &sent_items).await.map_err(err)?;
                    if let Some(m) = mean(&ingest(&raw, cfg)?) {
                        report.scorer_metrics.insert("s_comet".into(), m);
                    }
                }
                let doc_items: Vec<ScoreItem> = src_docs
                    .iter()
                    .zip(&hyp_docs)
                    .zip(&ref_docs)
                    .map(|((s, h), r)| ScoreItem::new(s.text(), h.text(), Some(r.text())))
                    .collect();
                let raw = scorer.score(ScoreMetric::Da, &doc_items).await.map_err(err)?;
                if let Some(m) = mean(&ingest(&raw, cfg)?) {
                    report.scorer_metrics.insert("d_comet".into(), m);
                }
                let texts: Vec<String> = hyp_docs.iter().map(Document::text).filter(|t| !t.is_empty()).collect();
                if !texts.is_empty() {
                    let ppl = scorer.ppl(&texts).await.map_err(err)?;
                    if let Some(m) = mean(&ppl) {
                        report.scorer_metrics.insert("ppl".into(), m);
                    }
                }
            }
        }
        info!(system, d_bleu = report.d_bleu, "evaluated");
        run.write_json(&format!("report.{system}.json"), &report)?;
    }
    Ok(())
}

async fn rerank(
    cfg: &RunConfig,
    templates: &TemplateSet,
    run: &mut Run,
    y: &str,
    z: &str,
    refine_mode: RefineArg,
    name: Option<String>,
) -> Result<()> {
    let mode = match refine_mode {
        RefineArg::None => None,
        RefineArg::Sent => Some(RerankMode::AsSentCandidate),
        RefineArg::Doc => Some(RerankMode::AsDocCandidate),
    };
    let client = match mode {
        Some(_) => Some(client(cfg, Role::Refiner)?),
        None => None,
    };
    let name = name.unwrap_or_else(|| match refine_mode {
        RefineArg::None => "rerank".into(),
        RefineArg::Sent => "rerank_refine_sent".into(),
        RefineArg::Doc => "rerank_refine_doc".into(),
    });
    let chunks: Vec<ChunkPair> = run.read_jsonl(CHUNKS)?;
    let y_out: Vec<SystemChunk> = run.read_jsonl(&system_chunks(y))?;
    let z_out: Vec<SystemChunk> = run.read_jsonl(&system_chunks(z))?;
    let scores: Vec<ScoreRecord> = run.read_jsonl(&scores_file(MetricArg::Qe))?;
    let (ys, zs) = (index_outputs(&y_out), index_outputs(&z_out));
    let (ky, kz) = (index_scores(&scores, y), index_scores(&scores, z));
    let dp = cfg.decode.refine;

    let outs = join_all(chunks.iter().map(|p| {
        let key = (p.chunk.doc_id.as_str(), p.chunk.chunk_index);
        let inputs = (ys.get(&key), zs.get(&key), ky.get(&key), kz.get(&key));
        let client = client.as_ref();
        async move {
            let (Some(a), Some(b), Some(sa), Some(sb)) = inputs else {
                warn!(doc_id = %p.chunk.doc_id, chunk = p.chunk.chunk_index, "missing candidate or scores");
                return failed_chunk(p);
            };
            let (Ok(sa), Ok(sb)) = (das(sa), das(sb)) else {
                return failed_chunk(p);
            };
            match (mode, client) {
                (Some(m), Some(c)) => {
                    match rerank_refine(c, templates, p, &a.sentences, &b.sentences, &sa, &sb, m, &dp).await {
                        Ok((s, rep)) => output_chunk(p, s, Some(rep)),
                        Err(e) => {
                            warn!(doc_id = %p.chunk.doc_id, error = %e, "rerank refine failed");
                            failed_chunk(p)
                        }
                    }
                }
                _ => match rerank_select(&a.sentences, &b.sentences, &sa, &sb) {
                    Ok(s) => output_chunk(p, s, None),
                    Err(e) => {
                        warn!(doc_id = %p.chunk.doc_id, error = %e, "rerank failed");
                        failed_chunk(p)
                    }
                },
            }
        }
    }))
    .await;
    run.note("y", y);
    run.note("z", z);
    write_system(run, &chunks, &name, outs)
}

#[derive(Serialize)]
struct DocAnnotation<'a> {
    doc_id: &'a str,
    records: &'a [ErrorRecord],
}

async fn annotate(cfg: &RunConfig, templates: &TemplateSet, run: &mut Run, system: &str) -> Result<()> {
    let client = client(cfg, Role::Annotator)?;
    let corpus = load_documents(cfg, run)?;
    let chunks: Vec<ChunkPair> = run.read_jsonl(CHUNKS)?;
    let outputs: Vec<SystemChunk> = run.read_jsonl(&system_chunks(system))?;
    let hyp_docs = documents_from_chunks(&chunks, &outputs, |c| c.tgt_lang.clone())?;
    let mut targets = Vec::new();
    let mut prompts = Vec::new();
    for (d, h) in corpus.iter().zip(&hyp_docs) {
        match build_mqm_prompt_with(templates, &d.source, &d.reference, h) {
            Ok(p) => {
                targets.push(h);
                prompts.push(p);
            }
            Err(e) => warn!(doc_id = %h.doc_id, error = %e, "document not annotated"),
        }
    }
    let outcome = client.complete_batch(&prompts, &cfg.decode.annotate, false).await;
    let mut all = Vec::new();
    let mut rows = Vec::new();
    let mut failed = 0;
    for (h, r) in targets.iter().zip(outcome.results) {
        match r {
            Ok(reply) => {
                let recs = parse_mqm(&reply, h.len());
                rows.push((h.doc_id.clone(), recs.clone()));
                all.push(recs);
            }
            Err(e) => {
                warn!(doc_id = %h.doc_id, error = %e, "annotation failed");
                failed += 1;
            }
        }
    }
    let lines: Vec<DocAnnotation> = rows
        .iter()
        .map(|(id, r)| DocAnnotation { doc_id: id, records: r })
        .collect();
    run.write_jsonl(&format!("mqm.{system}.jsonl"), &lines)?;
    run.write_text(&format!("mqm_tally.{system}.csv"), &tally_csv(&aggregate_errors(&all)))?;
    run.note("annotated_documents", rows.len());
    run.note("failed_documents", failed);
    if failed > 0 {
        return Err(anyhow!("{failed} documents could not be annotated").into());
    }
    Ok(())
}

fn paired_scores(records: &[ScoreRecord], a: &str, b: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let sb = index_scores(records, b);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for r in records.iter().filter(|r| r.system == a) {
        if let Some(other) = sb.get(&(r.doc_id.as_str(), r.chunk_index)) {
            if other.len() != r.scores.len() {
                bail_runtime(format!("score lengths differ for {} chunk {}", r.doc_id, r.chunk_index))?;
            }
            xs.extend_from_slice(&r.scores);
            ys.extend_from_slice(other);
        }
    }
    if xs.is_empty() {
        return Err(validation(format!("no chunks scored for both {a} and {b}")));
    }
    Ok((xs, ys))
}

fn bail_runtime(msg: String) -> Result<()> {
    Err(CliError::Runtime(anyhow!(msg)))
}

fn compare(cfg: &RunConfig, run: &mut Run, a: &str, b: &str, metric: MetricArg) -> Result<()> {
    let records: Vec<ScoreRecord> = run.read_jsonl(&scores_file(metric))?;
    let (xs, ys) = paired_scores(&records, a, b)?;
    let r = compare_systems(&xs, &ys, cfg.tie_eps).map_err(|e| CliError::Runtime(e.into()))?;
    let out = serde_json::json!({
        "a": a,
        "b": b,
        "metric": metric_of(metric).as_str(),
        "sentences": xs.len(),
        "wins": r.wins,
        "ties": r.ties,
        "losses": r.losses,
        "tie_eps": r.tie_eps,
    });
    info!(
        wins = r.wins,
        ties = r.ties,
        losses = r.losses,
        "compared {a} against {b}"
    );
    run.write_json("compare.json", &out)?;
    Ok(())
}

fn stats(run: &mut Run, system: &str, minus: Option<&str>, metric: MetricArg, bin_width: f64) -> Result<()> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(validation(format!("--bin-width must be > 0, got {bin_width}")));
    }
    let records: Vec<ScoreRecord> = run.read_jsonl(&scores_file(metric))?;
    let values: Vec<f64> = match minus {
        Some(b) => {
            let (xs, ys) = paired_scores(&records, system, b)?;
            xs.iter().zip(&ys).map(|(x, y)| x - y).collect()
        }
        None => records
            .iter()
            .filter(|r| r.system == system)
            .flat_map(|r| r.scores.iter().copied())
            .collect(),
    };
    if values.is_empty() {
        return Err(validation(format!(
            "no {} scores for {system}",
            metric_of(metric).as_str()
        )));
    }
    let bins = score_distribution(&values, bin_width).map_err(|e| CliError::Runtime(e.into()))?;
    run.write_text("distribution.csv", &distribution_csv(&bins))?;
    let m = mean(&values).unwrap_or(0.0);
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64;
    run.note("count", values.len());
    run.note("mean", m);
    run.note("std", var.sqrt());
    Ok(())
}
