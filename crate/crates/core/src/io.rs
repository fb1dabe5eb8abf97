//! On-disk formats: triples TSV, corpus/lexicon/question JSON Lines, traces
//! and metrics, plus the owned bundle of stores they load into.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::warn;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusIndex, Lexicon};
use crate::engine::{Question, Stores};
use crate::error::{Error, Result};
use crate::kb::{KbBuilder, KbIndex};

pub type Triple = (String, String, String);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: u64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub surface: String,
    pub entity: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: u64,
    pub text: String,
    pub answers: Vec<String>,
}

pub fn read_triples(path: &Path) -> Result<Vec<Triple>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        out.push((fields[0].to_owned(), fields[1].to_owned(), fields[2].to_owned()));
    }
    Ok(out)
}

pub fn write_triples(path: &Path, triples: &[Triple]) -> Result<()> {
    let mut w = create(path)?;
    let ctx = || path.display().to_string();
    for (s, r, o) in triples {
        writeln!(w, "{s}\t{r}\t{o}").map_err(|e| Error::io(ctx(), e))?;
    }
    w.flush().map_err(|e| Error::io(ctx(), e))
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = create(path)?;
    let ctx = || path.display().to_string();
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(ctx(), e))?;
    }
    w.flush().map_err(|e| Error::io(ctx(), e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path.display().to_string(), e))?;
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })
}

/// Writes `header` then one comma-separated row per entry.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = create(path)?;
    let ctx = || path.display().to_string();
    writeln!(w, "{}", header.join(",")).map_err(|e| Error::io(ctx(), e))?;
    for row in rows {
        writeln!(w, "{}", row.join(",")).map_err(|e| Error::io(ctx(), e))?;
    }
    w.flush().map_err(|e| Error::io(ctx(), e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    let f = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(BufWriter::new(f))
}

/// Raw string-level knowledge sources.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawKnowledge {
    pub triples: Vec<Triple>,
    pub sentences: Vec<String>,
    pub lexicon: Vec<LexiconEntry>,
}

/// Owned KB and corpus. Lexicon entities absent from the triples become
/// fact-less KB entities so every linked mention has an id.
#[derive(Debug, Clone)]
pub struct Knowledge {
    pub kb: KbIndex,
    pub corpus: CorpusIndex,
}

impl Knowledge {
    pub fn build(raw: &RawKnowledge) -> Result<Self> {
        let mut b = KbBuilder::new();
        for (i, (s, r, o)) in raw.triples.iter().enumerate() {
            b.add(i + 1, s, r, o)?;
        }
        let mut lexicon = Lexicon::new();
        let mut entries = Vec::with_capacity(raw.lexicon.len());
        for entry in &raw.lexicon {
            entries.push((entry, b.add_entity(&entry.entity)));
        }
        let mut conflicts = 0;
        for (entry, e) in entries {
            if !lexicon.insert(&entry.surface, e) {
                conflicts += 1;
            }
        }
        if conflicts > 0 {
            warn!("{conflicts} lexicon entr(ies) ignored: empty or already bound to another entity");
        }
        let kb = b.finish();
        let (corpus, _) = CorpusIndex::build(&raw.sentences, lexicon);
        Ok(Knowledge { kb, corpus })
    }

    pub fn stores(&self) -> Stores<'_> {
        Stores {
            kb: &self.kb,
            corpus: &self.corpus,
        }
    }

    /// Same corpus, every fact dropped independently with probability `p`.
    pub fn with_dropped_facts(&self, p: f64, seed: u64) -> Knowledge {
        Knowledge {
            kb: self.kb.drop_facts(p, seed),
            corpus: self.corpus.clone(),
        }
    }

    /// Links question records. Records without a linked entity, or naming
    /// an unknown answer, are skipped; the count is returned.
    pub fn link_questions(&self, records: &[QuestionRecord]) -> (Vec<Question>, usize) {
        let mut out = Vec::with_capacity(records.len());
        let mut skipped = 0;
        for r in records {
            match Question::link(r.id, &r.text, &r.answers, self.corpus.lexicon(), &self.kb) {
                Ok(q) if !q.entities.is_empty() => out.push(q),
                _ => skipped += 1,
            }
        }
        if skipped > 0 {
            warn!("{skipped} question(s) skipped: no linked entity or unknown answer");
        }
        (out, skipped)
    }
}

/// Standard file names inside a data directory.
#[derive(Debug, Clone)]
pub struct DataLayout {
    pub dir: PathBuf,
}

impl DataLayout {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        DataLayout { dir: dir.into() }
    }

    pub fn triples(&self) -> PathBuf {
        self.dir.join("triples.tsv")
    }

    pub fn corpus(&self) -> PathBuf {
        self.dir.join("corpus.jsonl")
    }

    pub fn lexicon(&self) -> PathBuf {
        self.dir.join("lexicon.jsonl")
    }

    pub fn questions(&self, hops: u32, split: &str) -> PathBuf {
        self.dir.join(format!("questions_{hops}hop_{split}.jsonl"))
    }

    /// A missing corpus file means an empty corpus.
    pub fn read_knowledge(&self) -> Result<RawKnowledge> {
        let triples = read_triples(&self.triples())?;
        let corpus_path = self.corpus();
        let sentences = if corpus_path.exists() {
            read_jsonl::<CorpusRecord>(&corpus_path)?.into_iter().map(|r| r.text).collect()
        } else {
            Vec::new()
        };
        let lexicon = read_jsonl(&self.lexicon())?;
        Ok(RawKnowledge {
            triples,
            sentences,
            lexicon,
        })
    }

    pub fn write_knowledge(&self, raw: &RawKnowledge) -> Result<()> {
        write_triples(&self.triples(), &raw.triples)?;
        let records: Vec<CorpusRecord> = raw
            .sentences
            .iter()
            .enumerate()
            .map(|(i, t)| CorpusRecord {
                id: i as u64,
                text: t.clone(),
            })
            .collect();
        write_jsonl(&self.corpus(), &records)?;
        write_jsonl(&self.lexicon(), &raw.lexicon)
    }
}
