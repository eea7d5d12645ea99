//! Byte-level byte-pair-encoding tokenizer.
//!
//! Text is case-folded (unless cased), split into whitespace runs and word
//! runs (a single space preceding a word is attached to it), and each piece
//! is encoded independently, so merges never cross word boundaries. Every
//! byte has a base token, so encoding never fails.

mod bytes;
mod train;

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::vocab::{Vocabulary, SPECIAL_TOKENS};

pub use bytes::{byte_to_char, decode_token as token_bytes, encode_bytes};
pub use train::{train_bpe, BpeTrainerConfig};

pub const MERGES_HEADER: &str = "#version 1";

/// Unicode simple lowercase mapping applied char by char.
pub fn casefold(text: &str) -> String {
    text.chars().map(simple_lowercase).collect()
}

fn simple_lowercase(c: char) -> char {
    // The only unconditional multi-char lowercase mapping; its simple form is 'i'.
    if c == '\u{130}' {
        return 'i';
    }
    let mut lower = c.to_lowercase();
    match (lower.next(), lower.next()) {
        (Some(l), None) => l,
        _ => c,
    }
}

/// Splits text into alternating whitespace and word pieces; a single space
/// directly before a word is moved onto that word.
pub(crate) fn pieces(text: &str) -> Vec<&str> {
    let mut runs: Vec<(usize, usize, bool)> = Vec::new();
    for (i, c) in text.char_indices() {
        let ws = c.is_whitespace();
        match runs.last_mut() {
            Some((_, end, kind)) if *kind == ws => *end = i + c.len_utf8(),
            _ => runs.push((i, i + c.len_utf8(), ws)),
        }
    }
    let mut out = Vec::with_capacity(runs.len());
    let mut carry: Option<usize> = None;
    for (i, &(start, end, ws)) in runs.iter().enumerate() {
        if ws {
            let next_is_word = runs.get(i + 1).is_some_and(|r| !r.2);
            if next_is_word && text[start..end].ends_with(' ') {
                if end - 1 > start {
                    out.push(&text[start..end - 1]);
                }
                carry = Some(end - 1);
            } else {
                out.push(&text[start..end]);
            }
        } else {
            out.push(&text[carry.take().unwrap_or(start)..end]);
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
struct TokenizerMeta {
    cased: bool,
    special_tokens: Vec<String>,
}

/// A trained byte-level BPE model. Immutable once built; `encode` and
/// `decode` take `&self` and are safe to share across threads.
#[derive(Debug, Clone)]
pub struct BpeModel {
    vocab: Vocabulary,
    merges: Vec<(String, String)>,
    special_tokens: Vec<String>,
    cased: bool,
    byte_ids: [u32; 256],
    ranks: HashMap<(u32, u32), (u32, u32)>,
    rendered: Vec<Vec<u8>>,
}

impl BpeModel {
    /// Assembles a model from its parts. Every byte token and every merge
    /// result must be present in `vocab`; `vocab` may hold extra tokens.
    pub fn from_parts(
        vocab: Vocabulary,
        merges: Vec<(String, String)>,
        special_tokens: Vec<String>,
        cased: bool,
    ) -> Result<Self> {
        for (i, s) in special_tokens.iter().enumerate() {
            if vocab.token(i as u32) != Some(s.as_str()) {
                return Err(Error::InvalidVocabulary(format!(
                    "special token {s:?} must sit at id {i}"
                )));
            }
        }
        let mut byte_ids = [0u32; 256];
        for b in 0..=255u8 {
            let t = byte_to_char(b).to_string();
            byte_ids[b as usize] = vocab.id(&t).ok_or_else(|| {
                Error::InvalidVocabulary(format!("missing byte token {t:?} for byte {b:#04x}"))
            })?;
        }
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, (l, r)) in merges.iter().enumerate() {
            let lookup = |t: &str| {
                vocab
                    .id(t)
                    .ok_or_else(|| Error::InvalidMerges(format!("merge symbol {t:?} not in vocab")))
            };
            let key = (lookup(l)?, lookup(r)?);
            let result = lookup(&format!("{l}{r}"))?;
            ranks.entry(key).or_insert((rank as u32, result));
        }
        let specials: std::collections::HashSet<&str> =
            special_tokens.iter().map(String::as_str).collect();
        let rendered = vocab
            .tokens()
            .iter()
            .map(|t| {
                if specials.contains(t.as_str()) {
                    t.as_bytes().to_vec()
                } else {
                    bytes::decode_token(t).unwrap_or_else(|| t.as_bytes().to_vec())
                }
            })
            .collect();
        Ok(Self {
            vocab,
            merges,
            special_tokens,
            cased,
            byte_ids,
            ranks,
            rendered,
        })
    }

    /// Same merges, re-indexed onto another vocabulary (for example the
    /// output of vocabulary augmentation).
    pub fn with_vocabulary(&self, vocab: Vocabulary) -> Result<Self> {
        for token in self.vocab.tokens() {
            if !vocab.contains(token) {
                return Err(Error::InvalidVocabulary(format!(
                    "token {token:?} missing from replacement vocabulary"
                )));
            }
        }
        Self::from_parts(
            vocab,
            self.merges.clone(),
            self.special_tokens.clone(),
            self.cased,
        )
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn special_tokens(&self) -> &[String] {
        &self.special_tokens
    }

    pub fn is_cased(&self) -> bool {
        self.cased
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn normalize(&self, text: &str) -> String {
        if self.cased {
            text.to_owned()
        } else {
            casefold(text)
        }
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        let text = self.normalize(text);
        let mut out = Vec::with_capacity(text.len() / 3 + 1);
        for piece in pieces(&text) {
            self.encode_piece(piece.as_bytes(), &mut out);
        }
        out
    }

    fn encode_piece(&self, piece: &[u8], out: &mut Vec<u32>) {
        let mut symbols: Vec<u32> = piece.iter().map(|&b| self.byte_ids[b as usize]).collect();
        // Rules are applied in training order: each round picks the
        // lowest-ranked applicable rule above the last one applied and
        // merges all of its occurrences left to right.
        let mut floor: Option<u32> = None;
        while symbols.len() > 1 {
            let best = symbols
                .windows(2)
                .filter_map(|w| {
                    let &(rank, merged) = self.ranks.get(&(w[0], w[1]))?;
                    Some((rank, w[0], w[1], merged))
                })
                .filter(|&(rank, ..)| floor.is_none_or(|f| rank > f))
                .min_by_key(|&(rank, ..)| rank);
            let Some((rank, l, r, merged)) = best else { break };
            let mut next = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && symbols[i] == l && symbols[i + 1] == r {
                    next.push(merged);
                    i += 2;
                } else {
                    next.push(symbols[i]);
                    i += 1;
                }
            }
            symbols = next;
            floor = Some(rank);
        }
        out.extend_from_slice(&symbols);
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut buf = Vec::with_capacity(ids.len() * 4);
        for &id in ids {
            let bytes = self.rendered.get(id as usize).ok_or(Error::UnknownTokenId {
                id,
                size: self.vocab.len(),
            })?;
            buf.extend_from_slice(bytes);
        }
        Ok(String::from_utf8_lossy(&buf).into_owned())
    }

    pub fn merges_file_string(&self) -> String {
        let mut out = String::from(MERGES_HEADER);
        out.push('\n');
        for (l, r) in &self.merges {
            out.push_str(l);
            out.push(' ');
            out.push_str(r);
            out.push('\n');
        }
        out
    }

    pub fn parse_merges(text: &str) -> Result<Vec<(String, String)>> {
        let mut lines = text.split('\n');
        if lines.next() != Some(MERGES_HEADER) {
            return Err(Error::InvalidMerges(format!(
                "missing header line {MERGES_HEADER:?}"
            )));
        }
        let mut merges = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let (l, r) = line
                .split_once(' ')
                .filter(|(l, r)| !l.is_empty() && !r.is_empty() && !r.contains(' '))
                .ok_or_else(|| Error::InvalidMerges(format!("line {}: {line:?}", n + 2)))?;
            merges.push((l.to_owned(), r.to_owned()));
        }
        Ok(merges)
    }

    /// Writes `vocab.txt`, `merges.txt` and `tokenizer.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).at(dir)?;
        self.vocab.save(dir.join("vocab.txt"))?;
        let merges = dir.join("merges.txt");
        fs::write(&merges, self.merges_file_string()).at(&merges)?;
        let meta = TokenizerMeta {
            cased: self.cased,
            special_tokens: self.special_tokens.clone(),
        };
        let meta_path = dir.join("tokenizer.json");
        fs::write(&meta_path, serde_json::to_string_pretty(&meta)? + "\n").at(&meta_path)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let vocab = Vocabulary::load(dir.join("vocab.txt"))?;
        let merges_path = dir.join("merges.txt");
        let merges = Self::parse_merges(&fs::read_to_string(&merges_path).at(&merges_path)?)?;
        let meta_path = dir.join("tokenizer.json");
        let meta: TokenizerMeta = match fs::read_to_string(&meta_path) {
            Ok(text) => serde_json::from_str(&text)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => TokenizerMeta {
                cased: false,
                special_tokens: SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect(),
            },
            Err(e) => return Err(e).at(&meta_path),
        };
        Self::from_parts(vocab, merges, meta.special_tokens, meta.cased)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pieces_attach_single_space_to_words() {
        assert_eq!(pieces("salam dunya"), vec!["salam", " dunya"]);
        assert_eq!(pieces("  a\tb \n"), vec![" ", " a", "\t", "b", " \n"]);
        assert_eq!(pieces(""), Vec::<&str>::new());
        assert_eq!(pieces("a   b"), vec!["a", "  ", " b"]);
    }

    #[test]
    fn casefold_uses_simple_mapping() {
        assert_eq!(casefold("Ab ÀΣ"), "ab àσ");
        assert_eq!(casefold("\u{130}"), "i");
        assert_eq!(casefold("ß"), "ß");
    }

    #[test]
    fn merges_file_requires_header() {
        assert!(BpeModel::parse_merges("a b\n").is_err());
        let m = BpeModel::parse_merges("#version 1\na b\nab c\n").unwrap();
        assert_eq!(m, vec![("a".into(), "b".into()), ("ab".into(), "c".into())]);
    }
}
