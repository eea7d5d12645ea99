use std::collections::{BTreeMap, HashMap, HashSet};

use super::{byte_to_char, casefold, pieces, BpeModel};
use crate::error::{Error, Result};
use crate::vocab::{Vocabulary, SPECIAL_TOKENS};

#[derive(Debug, Clone, PartialEq)]
pub struct BpeTrainerConfig {
    pub vocab_size: usize,
    pub special_tokens: Vec<String>,
    pub cased: bool,
}

impl BpeTrainerConfig {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            special_tokens: SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect(),
            cased: false,
        }
    }

    pub fn cased(mut self, cased: bool) -> Self {
        self.cased = cased;
        self
    }
}

type Pair = (u32, u32);

struct Word {
    symbols: Vec<u32>,
    count: u64,
}

impl Word {
    fn pairs(&self) -> impl Iterator<Item = Pair> + '_ {
        self.symbols.windows(2).map(|w| (w[0], w[1]))
    }

    fn merge(&mut self, (l, r): Pair, merged: u32) {
        let mut out = Vec::with_capacity(self.symbols.len());
        let mut i = 0;
        while i < self.symbols.len() {
            if i + 1 < self.symbols.len() && self.symbols[i] == l && self.symbols[i + 1] == r {
                out.push(merged);
                i += 2;
            } else {
                out.push(self.symbols[i]);
                i += 1;
            }
        }
        self.symbols = out;
    }
}

/// Learns byte-level BPE merges until the vocabulary holds exactly
/// `vocab_size` tokens.
///
/// The most frequent adjacent pair is merged first; ties go to the
/// lexicographically smallest `(left, right)` pair. If the corpus runs out
/// of pairs before the target size, the vocabulary is padded with unseen
/// two-byte tokens in byte order.
pub fn train_bpe<'a, I>(corpus: I, config: &BpeTrainerConfig) -> Result<BpeModel>
where
    I: IntoIterator<Item = &'a str>,
{
    let minimum = config.special_tokens.len() + 256;
    if config.vocab_size < minimum {
        return Err(Error::VocabSizeBelowAlphabet {
            requested: config.vocab_size,
            minimum: minimum - 1,
        });
    }

    // BTreeMap keeps word order (and hence everything downstream) deterministic.
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for sentence in corpus {
        let text = if config.cased {
            sentence.to_owned()
        } else {
            casefold(sentence)
        };
        for piece in pieces(&text) {
            *counts.entry(piece.to_owned()).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let mut tokens: Vec<String> = config.special_tokens.clone();
    tokens.extend((0..=255u8).map(|b| byte_to_char(b).to_string()));
    let mut index: HashMap<String, u32> = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i as u32))
        .collect();
    if index.len() != tokens.len() {
        return Err(Error::InvalidVocabulary(
            "special tokens collide with byte tokens".into(),
        ));
    }
    let specials: HashSet<&str> = config.special_tokens.iter().map(String::as_str).collect();
    let byte_base = config.special_tokens.len() as u32;

    let mut words: Vec<Word> = counts
        .iter()
        .map(|(piece, &count)| Word {
            symbols: piece.bytes().map(|b| byte_base + u32::from(b)).collect(),
            count,
        })
        .collect();

    let mut pair_counts: HashMap<Pair, u64> = HashMap::new();
    let mut occurs: HashMap<Pair, HashSet<usize>> = HashMap::new();
    for (wi, word) in words.iter().enumerate() {
        for p in word.pairs() {
            *pair_counts.entry(p).or_default() += word.count;
            occurs.entry(p).or_default().insert(wi);
        }
    }

    let mut merges: Vec<(String, String)> = Vec::new();
    let mut banned: HashSet<Pair> = HashSet::new();
    while tokens.len() < config.vocab_size {
        let best = pair_counts
            .iter()
            .filter(|(p, &c)| c > 0 && !banned.contains(p))
            .max_by(|(pa, ca), (pb, cb)| {
                ca.cmp(cb).then_with(|| {
                    let ka = (&tokens[pa.0 as usize], &tokens[pa.1 as usize]);
                    let kb = (&tokens[pb.0 as usize], &tokens[pb.1 as usize]);
                    kb.cmp(&ka)
                })
            })
            .map(|(&p, _)| p);
        let Some(pair) = best else { break };

        let merged_str = format!("{}{}", tokens[pair.0 as usize], tokens[pair.1 as usize]);
        if specials.contains(merged_str.as_str()) {
            banned.insert(pair);
            continue;
        }
        let merged = *index.entry(merged_str.clone()).or_insert_with(|| {
            tokens.push(merged_str);
            (tokens.len() - 1) as u32
        });
        merges.push((tokens[pair.0 as usize].clone(), tokens[pair.1 as usize].clone()));

        let affected: Vec<usize> = occurs
            .remove(&pair)
            .map(|s| {
                let mut v: Vec<usize> = s.into_iter().collect();
                v.sort_unstable();
                v
            })
            .unwrap_or_default();
        for wi in affected {
            let word = &mut words[wi];
            for p in word.pairs().collect::<Vec<_>>() {
                if let Some(c) = pair_counts.get_mut(&p) {
                    *c -= word.count;
                }
            }
            word.merge(pair, merged);
            for p in word.pairs().collect::<Vec<_>>() {
                *pair_counts.entry(p).or_default() += word.count;
                occurs.entry(p).or_default().insert(wi);
            }
        }
        pair_counts.retain(|_, c| *c > 0);
    }

    // Padding with unseen byte pairs once the corpus is exhausted.
    'pad: for a in 0..=255u8 {
        for b in 0..=255u8 {
            if tokens.len() >= config.vocab_size {
                break 'pad;
            }
            let (l, r) = (byte_to_char(a).to_string(), byte_to_char(b).to_string());
            let joined = format!("{l}{r}");
            if index.contains_key(&joined) || specials.contains(joined.as_str()) {
                continue;
            }
            index.insert(joined.clone(), tokens.len() as u32);
            tokens.push(joined);
            merges.push((l, r));
        }
    }

    let vocab = Vocabulary::new(tokens)?;
    BpeModel::from_parts(vocab, merges, config.special_tokens.clone(), config.cased)
}
