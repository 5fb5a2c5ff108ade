#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Output;

use refinekit_fixtures::{Fixture, Reply};
use serde_json::{json, Value};

pub const DOCS: [(&str, &[&str], &[&str]); 3] = [
    (
        "d1",
        &["Der Hund schläft.", "Die Katze spielt im Garten.", "Es regnet."],
        &["The dog sleeps.", "The cat plays in the garden.", "It is raining."],
    ),
    (
        "d2",
        &["Das Laufband ist kaputt.", "Ich repariere das Laufband morgen."],
        &["The treadmill is broken.", "I will fix the treadmill tomorrow."],
    ),
    (
        "d3",
        &["Guten Morgen.", "Wie geht es dir?", "Mir geht es gut.", "Danke."],
        &["Good morning.", "How are you?", "I am fine.", "Thanks."],
    ),
];

fn after_first_line(prompt: &str) -> &str {
    prompt.split_once('\n').map_or("", |(_, rest)| rest)
}

fn between<'a>(text: &'a str, start: &str, end: &str) -> &'a str {
    let Some(i) = text.find(start) else { return "" };
    let rest = &text[i + start.len()..];
    rest.find(end).map_or(rest, |j| &rest[..j])
}

/// A deterministic stand-in for the translator, refiner and annotator models.
pub fn scripted_model() -> Fixture {
    Fixture::spawn(|call| {
        let p = call.prompt();
        if p.starts_with("Translate the following") && p.contains(" sentence into ") {
            Reply::chat(format!("[s] {}", after_first_line(p).trim()))
        } else if p.starts_with("Translate the following") {
            let body: Vec<String> = after_first_line(p)
                .lines()
                .map(|l| match l.split_once(": ") {
                    Some((m, t)) => format!("{m}: [d] {t}"),
                    None => l.to_string(),
                })
                .collect();
            Reply::chat(body.join("\n"))
        } else if p.contains("Candidate 1:\n") {
            Reply::chat(between(p, "Candidate 1:\n", "\nCandidate 2:").to_string())
        } else if p.contains("Candidate:\n") {
            Reply::chat(between(p, "Candidate:\n", "\nImproved translation:").to_string())
        } else {
            Reply::chat(
                "Sentence #1:\nError types: Mistranslation\nExplanation: wrong word\nSentence #2:\nError types: None",
            )
        }
    })
}

pub struct Workspace {
    pub dir: tempfile::TempDir,
}

impl Workspace {
    /// Corpus, reference documents, lexicon and a config pointing at `model`.
    pub fn new(model: &Fixture) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let mut corpus = String::new();
        let mut refs = String::new();
        for (id, src, reference) in DOCS {
            corpus.push_str(
                &json!({"doc_id": id, "src_lang": "de", "tgt_lang": "en", "src": src, "ref": reference}).to_string(),
            );
            corpus.push('\n');
            refs.push_str(&json!({"doc_id": id, "sentences": reference}).to_string());
            refs.push('\n');
        }
        std::fs::write(root.join("corpus.jsonl"), corpus).unwrap();
        std::fs::write(root.join("references.jsonl"), refs).unwrap();
        std::fs::write(root.join("terms.tsv"), "Laufband\ttreadmill|running machine\n").unwrap();
        let cfg = format!(
            r#"chunk_budget = 8

[corpus]
source = "corpus.jsonl"
lexicon = "terms.tsv"

[tokenizer]
kind = "whitespace"

[endpoints.translator]
base_url = "{url}"
model_name = "scripted"
max_retries = 0

[endpoints.refiner]
base_url = "{url}"
model_name = "scripted"
max_retries = 0
"#,
            url = model.base_url()
        );
        std::fs::write(root.join("run.toml"), cfg).unwrap();
        Workspace { dir }
    }

    pub fn root(&self) -> &Path {
        self.dir.path()
    }

    pub fn config(&self) -> PathBuf {
        self.root().join("run.toml")
    }

    pub fn run(&self, out: &str, args: &[&str]) -> Output {
        let out_dir = self.root().join(out);
        std::process::Command::new(env!("CARGO_BIN_EXE_refinekit"))
            .arg("-c")
            .arg(self.config())
            .arg("-o")
            .arg(&out_dir)
            .args(args)
            .env("RUST_LOG", "warn")
            .output()
            .expect("spawn refinekit")
    }

    pub fn run_ok(&self, out: &str, args: &[&str]) {
        let o = self.run(out, args);
        assert!(
            o.status.success(),
            "refinekit {args:?} exited with {:?}\n{}",
            o.status.code(),
            String::from_utf8_lossy(&o.stderr)
        );
    }

    pub fn read(&self, out: &str, rel: &str) -> String {
        std::fs::read_to_string(self.root().join(out).join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
    }

    pub fn json(&self, out: &str, rel: &str) -> Value {
        serde_json::from_str(&self.read(out, rel)).unwrap()
    }

    pub fn jsonl(&self, out: &str, rel: &str) -> Vec<Value> {
        self.read(out, rel)
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    }
}

pub const PIPELINE: &[&[&str]] = &[
    &["prepare"],
    &["translate", "--mode", "both"],
    &["score", "--metric", "da", "--mock"],
    &["build-dataset", "--stage", "both"],
    &["refine", "--h1", "sent2sent", "--h2", "doc2doc"],
    &[
        "evaluate",
        "--system",
        "sent2sent",
        "--system",
        "doc2doc",
        "--system",
        "refined",
    ],
];

pub const MANIFESTS: &[&str] = &["prepare", "translate", "score", "build-dataset", "refine", "evaluate"];
