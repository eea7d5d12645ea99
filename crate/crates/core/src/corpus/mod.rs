//! Corpus ingestion: cleaning, sentence splitting, transliteration and the
//! train/validation split.
//!
//! On disk a corpus is UTF-8 with one sentence per line and a blank line
//! between documents, LF line endings.

mod clean;
mod translit;

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};

pub use clean::{clean, clean_documents};
pub use translit::{
    is_source_script, transliterate, HttpTransliterator, TableTransliterator, Transliteration,
    TransliterationTable, Transliterator, DEFAULT_TABLE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CorpusStats {
    pub sentence_count: usize,
    pub word_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    documents: Vec<Vec<String>>,
    pub source_tag: String,
}

impl Corpus {
    /// Rejects empty documents and sentences that could not survive a round
    /// trip through the file format (blank, or containing a line break).
    pub fn new(documents: Vec<Vec<String>>, source_tag: impl Into<String>) -> Result<Self> {
        for (d, doc) in documents.iter().enumerate() {
            if doc.is_empty() {
                return Err(Error::InvalidCorpus(format!("document {d} is empty")));
            }
            for s in doc {
                if s.trim().is_empty() || s.contains(['\n', '\r']) {
                    return Err(Error::InvalidCorpus(format!(
                        "document {d} has a blank or multi-line sentence {s:?}"
                    )));
                }
            }
        }
        Ok(Self {
            documents,
            source_tag: source_tag.into(),
        })
    }

    pub fn documents(&self) -> &[Vec<String>] {
        &self.documents
    }

    pub fn into_documents(self) -> Vec<Vec<String>> {
        self.documents
    }

    pub fn sentences(&self) -> impl Iterator<Item = &str> {
        self.documents.iter().flatten().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn stats(&self) -> CorpusStats {
        stats(self)
    }

    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for (i, doc) in self.documents.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            for s in doc {
                out.push_str(s);
                out.push('\n');
            }
        }
        out
    }

    pub fn parse(text: &str, source_tag: impl Into<String>) -> Result<Self> {
        let mut documents = Vec::new();
        let mut current = Vec::new();
        for line in text.split('\n') {
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.trim().is_empty() {
                if !current.is_empty() {
                    documents.push(std::mem::take(&mut current));
                }
            } else {
                current.push(line.to_string());
            }
        }
        if !current.is_empty() {
            documents.push(current);
        }
        Self::new(documents, source_tag)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_file_string()).at(path)
    }

    /// Loads a corpus file; the source tag is the file name.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let tag = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::parse(&fs::read_to_string(path).at(path)?, tag)
    }
}

/// Sentence count and whitespace-delimited word count.
pub fn stats(corpus: &Corpus) -> CorpusStats {
    CorpusStats {
        sentence_count: corpus.sentences().count(),
        word_count: corpus.sentences().map(|s| s.split_whitespace().count()).sum(),
    }
}

fn sentence_hash(seed: u64, text: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(text.as_bytes());
    h.finalize().into()
}

/// Splits into `(train, valid)` by a seeded hash of each sentence's text.
///
/// Distinct sentence texts are ranked by hash and the lowest-ranked ones go
/// to validation until `round(valid_fraction × n)` sentences are held out,
/// so the held-out share is exact up to duplicate sentences, which always
/// land on the same side. Document structure and sentence order are kept;
/// documents left empty on one side are dropped from it.
pub fn split_corpus(corpus: &Corpus, valid_fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(valid_fraction > 0.0 && valid_fraction < 1.0) {
        return Err(Error::InvalidFraction(valid_fraction));
    }
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut multiplicity: HashMap<&str, usize> = HashMap::new();
    for s in corpus.sentences() {
        *multiplicity.entry(s).or_default() += 1;
    }
    let mut ranked: Vec<([u8; 32], &str)> = multiplicity
        .keys()
        .map(|&s| (sentence_hash(seed, s), s))
        .collect();
    ranked.sort_unstable();
    let total: usize = multiplicity.values().sum();
    let target = (valid_fraction * total as f64).round() as usize;
    let mut held_out = std::collections::HashSet::new();
    let mut taken = 0;
    for (_, s) in ranked {
        if taken >= target {
            break;
        }
        taken += multiplicity[s];
        held_out.insert(s);
    }

    let mut train = Vec::new();
    let mut valid = Vec::new();
    for doc in corpus.documents() {
        let (v, t): (Vec<String>, Vec<String>) =
            doc.iter().cloned().partition(|s| held_out.contains(s.as_str()));
        if !t.is_empty() {
            train.push(t);
        }
        if !v.is_empty() {
            valid.push(v);
        }
    }
    Ok((
        Corpus::new(train, format!("{}#train", corpus.source_tag))?,
        Corpus::new(valid, format!("{}#valid", corpus.source_tag))?,
    ))
}
