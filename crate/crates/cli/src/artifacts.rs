//! Output directory layout, JSONL helpers and run manifests.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use refinekit_core::corpus::{reassemble, Chunk, ChunkPair, Document};
use refinekit_core::translate::ParseReport;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const CHUNKS: &str = "chunks.jsonl";

pub fn system_chunks(system: &str) -> String {
    format!("chunks.{system}.jsonl")
}

/// One chunk of a system's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemChunk {
    pub doc_id: String,
    pub chunk_index: usize,
    pub sentences: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_report: Option<ParseReport>,
    #[serde(default)]
    pub degraded: bool,
}

/// Sentence-level scores for one chunk of one system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub system: String,
    pub doc_id: String,
    pub chunk_index: usize,
    pub scores: Vec<f64>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

/// Tracks everything one subcommand reads and writes under the output directory.
pub struct Run {
    pub out: PathBuf,
    command: String,
    config_hash: String,
    inputs: Vec<PathBuf>,
    artifacts: Vec<PathBuf>,
    extra: serde_json::Map<String, Value>,
}

impl Run {
    pub fn new(out: &Path, command: &str, config_hash: String) -> Result<Self> {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Run {
            out: out.to_path_buf(),
            command: command.to_string(),
            config_hash,
            inputs: Vec::new(),
            artifacts: Vec::new(),
            extra: Default::default(),
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    pub fn input(&mut self, p: &Path) {
        if !self.inputs.iter().any(|x| x == p) {
            self.inputs.push(p.to_path_buf());
        }
    }

    pub fn note(&mut self, key: &str, v: impl Serialize) {
        self.extra
            .insert(key.to_string(), serde_json::to_value(v).expect("serializable note"));
    }

    fn record(&mut self, rel: &str) -> PathBuf {
        let p = self.out.join(rel);
        if !self.artifacts.iter().any(|x| x == Path::new(rel)) {
            self.artifacts.push(PathBuf::from(rel));
        }
        p
    }

    pub fn write_text(&mut self, rel: &str, text: &str) -> Result<()> {
        let p = self.record(rel);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, v: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(v)?;
        s.push('\n');
        self.write_text(rel, &s)
    }

    pub fn write_jsonl<T: Serialize>(&mut self, rel: &str, rows: &[T]) -> Result<()> {
        let p = self.record(rel);
        let mut w =
            std::io::BufWriter::new(std::fs::File::create(&p).with_context(|| format!("writing {}", p.display()))?);
        for r in rows {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Registers a file some other routine already wrote under the output directory.
    pub fn adopt(&mut self, rel: &str) {
        self.record(rel);
    }

    /// Reads an artifact of an earlier step and records it as an input.
    pub fn read_jsonl<T: DeserializeOwned>(&mut self, rel: &str) -> Result<Vec<T>> {
        let p = self.out.join(rel);
        if !p.exists() {
            anyhow::bail!("{} not found; run the step that produces it first", p.display());
        }
        self.input(&p);
        read_jsonl(&p)
    }

    /// Writes one text file per document under `<system>/`.
    pub fn write_documents(&mut self, system: &str, docs: &[Document]) -> Result<()> {
        for d in docs {
            let mut text = d.sentences.join("\n");
            text.push('\n');
            self.write_text(&format!("{system}/{}.txt", d.doc_id), &text)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        let mut inputs = Vec::new();
        for p in &self.inputs {
            inputs.push(serde_json::json!({
                "name": p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                "sha256": sha256_file(p)?,
            }));
        }
        self.artifacts.sort();
        let mut artifacts = Vec::new();
        for rel in &self.artifacts {
            artifacts.push(serde_json::json!({
                "path": rel.to_string_lossy().replace('\\', "/"),
                "sha256": sha256_file(&self.out.join(rel))?,
            }));
        }
        let mut m = serde_json::Map::new();
        m.insert("command".into(), self.command.clone().into());
        m.insert("version".into(), env!("CARGO_PKG_VERSION").into());
        m.insert("config_hash".into(), self.config_hash.clone().into());
        m.insert("inputs".into(), inputs.into());
        m.insert("artifacts".into(), artifacts.into());
        m.append(&mut self.extra);
        let path = self.out.join("manifests").join(format!("{}.json", self.command));
        std::fs::create_dir_all(path.parent().unwrap())?;
        let mut s = serde_json::to_string_pretty(&Value::Object(m))?;
        s.push('\n');
        std::fs::write(&path, s)?;
        Ok(path)
    }
}

/// Rebuilds whole documents from per-chunk system output, in corpus order.
pub fn documents_from_chunks(
    chunks: &[ChunkPair],
    outputs: &[SystemChunk],
    lang_of: impl Fn(&ChunkPair) -> String,
) -> Result<Vec<Document>> {
    let lookup: std::collections::HashMap<(&str, usize), &SystemChunk> = outputs
        .iter()
        .map(|o| ((o.doc_id.as_str(), o.chunk_index), o))
        .collect();
    let mut docs = Vec::new();
    let mut i = 0;
    while i < chunks.len() {
        let doc_id = &chunks[i].chunk.doc_id;
        let j = chunks[i..]
            .iter()
            .position(|c| &c.chunk.doc_id != doc_id)
            .map_or(chunks.len(), |k| i + k);
        let group: Vec<Chunk> = chunks[i..j].iter().map(|c| c.chunk.clone()).collect();
        let hyps = group
            .iter()
            .map(|c| {
                lookup
                    .get(&(c.doc_id.as_str(), c.chunk_index))
                    .map(|o| o.sentences.clone())
                    .with_context(|| format!("no output for document {} chunk {}", c.doc_id, c.chunk_index))
            })
            .collect::<Result<Vec<_>>>()?;
        docs.push(reassemble(&group, &hyps, &lang_of(&chunks[i]))?);
        i = j;
    }
    Ok(docs)
}
