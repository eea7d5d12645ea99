use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::model::{MaskedBatch, Objective, IGNORE_LABEL};
use crate::tokenizer::BpeModel;
use crate::vocab::{CLS_ID, MASK_ID, PAD_ID, SEP_ID, SPECIAL_TOKENS};

/// First id that is an ordinary (maskable) token.
pub const FIRST_REGULAR_ID: u32 = SPECIAL_TOKENS.len() as u32;

/// One model input before masking: a sentence, or a sentence pair with its
/// pair-task label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub first: Vec<u32>,
    pub second: Option<Vec<u32>>,
    pub label: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair<S> {
    pub first: S,
    pub second: S,
    /// 1 = consecutive and in order, 0 = not.
    pub label: u8,
}

/// Builds labeled pairs from consecutive sentences of each document.
///
/// NSP keeps the true successor half of the time and otherwise swaps in a
/// random sentence from a different document; SOP keeps the order half of
/// the time and otherwise swaps the two sentences. Under plain MLM every
/// consecutive pair is returned with label 1.
pub fn sentence_pairs<S: Clone, R: Rng>(
    documents: &[Vec<S>],
    objective: Objective,
    rng: &mut R,
) -> Result<Vec<SentencePair<S>>> {
    if objective == Objective::MlmNsp && documents.len() < 2 {
        return Err(Error::NeedTwoDocuments);
    }
    let mut out = Vec::new();
    for (d, doc) in documents.iter().enumerate() {
        for w in doc.windows(2) {
            let (a, b) = (w[0].clone(), w[1].clone());
            let keep = rng.random_bool(0.5);
            out.push(match objective {
                Objective::Mlm => SentencePair { first: a, second: b, label: 1 },
                _ if keep => SentencePair { first: a, second: b, label: 1 },
                Objective::MlmSop => SentencePair { first: b, second: a, label: 0 },
                Objective::MlmNsp => {
                    let mut other = rng.random_range(0..documents.len() - 1);
                    if other >= d {
                        other += 1;
                    }
                    let pick = &documents[other];
                    let s = pick[rng.random_range(0..pick.len())].clone();
                    SentencePair { first: a, second: s, label: 0 }
                }
            });
        }
    }
    if out.is_empty() {
        return Err(Error::NoSentencePairs);
    }
    Ok(out)
}

/// [`sentence_pairs`] over the documents of a corpus, seeded.
pub fn make_sentence_pairs(
    corpus: &Corpus,
    objective: Objective,
    seed: u64,
) -> Result<Vec<SentencePair<String>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sentence_pairs(corpus.documents(), objective, &mut rng)
}

/// `[CLS] a [SEP]` or `[CLS] a [SEP] b [SEP]`, trimming the longer side
/// from the end until the sequence fits.
fn pack(example: &Example, seq_len: usize) -> (Vec<u32>, Vec<u8>) {
    let mut a = example.first.clone();
    match &example.second {
        None => {
            a.truncate(seq_len.saturating_sub(2).max(1));
            let mut ids = vec![CLS_ID];
            ids.extend(a);
            ids.push(SEP_ID);
            let segs = vec![0; ids.len()];
            (ids, segs)
        }
        Some(b) => {
            let mut b = b.clone();
            while a.len() + b.len() + 3 > seq_len && (a.len() > 1 || b.len() > 1) {
                if a.len() >= b.len() {
                    a.pop();
                } else {
                    b.pop();
                }
            }
            let mut ids = vec![CLS_ID];
            ids.extend(&a);
            ids.push(SEP_ID);
            let mut segs = vec![0; ids.len()];
            ids.extend(&b);
            ids.push(SEP_ID);
            segs.resize(ids.len(), 1);
            (ids, segs)
        }
    }
}

/// Packs, pads and masks a batch.
///
/// Every ordinary token is labeled independently with probability
/// `mask_rate`. A labeled token becomes `[MASK]` 80% of the time, a token
/// drawn uniformly from the ordinary ids below `vocab_size` 10% of the
/// time, and stays unchanged otherwise. Rows are padded to the longest row.
pub fn build_batch<R: Rng>(
    examples: &[Example],
    seq_len: usize,
    mask_rate: f64,
    vocab_size: usize,
    rng: &mut R,
) -> MaskedBatch {
    let packed: Vec<(Vec<u32>, Vec<u8>)> = examples.iter().map(|e| pack(e, seq_len)).collect();
    let width = packed.iter().map(|(ids, _)| ids.len()).max().unwrap_or(0);
    let b = examples.len();
    let mut batch = MaskedBatch {
        input_ids: Array2::from_elem((b, width), PAD_ID),
        attention_mask: Array2::from_elem((b, width), false),
        segment_ids: Array2::zeros((b, width)),
        mlm_labels: Array2::from_elem((b, width), IGNORE_LABEL),
        pair_labels: examples.iter().map(|e| e.label).collect(),
    };
    for (row, (ids, segs)) in packed.iter().enumerate() {
        for (p, (&id, &seg)) in ids.iter().zip(segs).enumerate() {
            batch.attention_mask[[row, p]] = true;
            batch.segment_ids[[row, p]] = seg;
            let mut input = id;
            if id >= FIRST_REGULAR_ID && mask_rate > 0.0 && rng.random_bool(mask_rate) {
                batch.mlm_labels[[row, p]] = id as i32;
                let u: f64 = rng.random();
                if u < 0.8 {
                    input = MASK_ID;
                } else if u < 0.9 {
                    input = rng.random_range(FIRST_REGULAR_ID..vocab_size as u32);
                }
            }
            batch.input_ids[[row, p]] = input;
        }
    }
    batch
}

/// Tokenizes `sentences` one per row and masks them. Sentences that
/// tokenize to nothing are skipped; long ones are truncated to `seq_len`.
pub fn prepare_mlm_batch<S: AsRef<str>>(
    sentences: &[S],
    bpe: &BpeModel,
    seq_len: usize,
    mask_rate: f64,
    seed: u64,
) -> Result<MaskedBatch> {
    let examples: Vec<Example> = sentences
        .iter()
        .map(|s| bpe.encode(s.as_ref()))
        .filter(|ids| !ids.is_empty())
        .map(|first| Example { first, second: None, label: None })
        .collect();
    if examples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(build_batch(&examples, seq_len, mask_rate, bpe.vocab_size(), &mut rng))
}

/// An endless, seeded stream of training examples: shuffled epochs of
/// sentence pairs (single sentences under plain MLM).
pub(crate) struct ExampleStream<'a> {
    documents: &'a [Vec<Vec<u32>>],
    objective: Objective,
    rng: ChaCha8Rng,
    pool: Vec<Example>,
}

impl<'a> ExampleStream<'a> {
    pub fn new(documents: &'a [Vec<Vec<u32>>], objective: Objective, seed: u64) -> Result<Self> {
        let mut stream = Self {
            documents,
            objective,
            rng: ChaCha8Rng::seed_from_u64(seed),
            pool: Vec::new(),
        };
        stream.refill()?;
        Ok(stream)
    }

    fn refill(&mut self) -> Result<()> {
        self.pool = if self.objective.has_pair_task() {
            sentence_pairs(self.documents, self.objective, &mut self.rng)?
                .into_iter()
                .map(|p| Example {
                    first: p.first,
                    second: Some(p.second),
                    label: Some(p.label),
                })
                .collect()
        } else {
            self.documents
                .iter()
                .flatten()
                .map(|s| Example { first: s.clone(), second: None, label: None })
                .collect()
        };
        if self.pool.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        self.pool.shuffle(&mut self.rng);
        Ok(())
    }

    pub fn take(&mut self, n: usize) -> Result<(Vec<Example>, &mut ChaCha8Rng)> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.pool.is_empty() {
                self.refill()?;
            }
            out.push(self.pool.pop().expect("refilled"));
        }
        Ok((out, &mut self.rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(first: &[u32], second: Option<&[u32]>) -> Example {
        Example {
            first: first.to_vec(),
            second: second.map(<[u32]>::to_vec),
            label: second.map(|_| 1),
        }
    }

    #[test]
    fn packing_and_truncation() {
        let (ids, segs) = pack(&ex(&[7, 8], Some(&[9])), 16);
        assert_eq!(ids, [CLS_ID, 7, 8, SEP_ID, 9, SEP_ID]);
        assert_eq!(segs, [0, 0, 0, 0, 1, 1]);
        let (ids, _) = pack(&ex(&[5; 10], Some(&[6; 4])), 10);
        assert_eq!(ids.len(), 10);
        assert_eq!(ids.iter().filter(|&&i| i == 5).count(), 3);
        assert_eq!(ids.iter().filter(|&&i| i == 6).count(), 4);
        let (ids, _) = pack(&ex(&[5; 10], None), 6);
        assert_eq!(ids, [CLS_ID, 5, 5, 5, 5, SEP_ID]);
    }

    #[test]
    fn zero_mask_rate_leaves_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = build_batch(&[ex(&[7, 8, 9], None)], 8, 0.0, 20, &mut rng);
        assert_eq!(b.masked_count(), 0);
        assert_eq!(b.input_ids.row(0).to_vec(), [CLS_ID, 7, 8, 9, SEP_ID]);
    }

    #[test]
    fn sop_negatives_are_swaps() {
        let docs = vec![vec!["a", "b", "c"]];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pairs = sentence_pairs(&docs, Objective::MlmSop, &mut rng).unwrap();
        for p in pairs {
            let forward = (p.first, p.second) == ("a", "b") || (p.first, p.second) == ("b", "c");
            assert_eq!(forward, p.label == 1);
        }
        assert!(matches!(
            sentence_pairs(&docs, Objective::MlmNsp, &mut rng),
            Err(Error::NeedTwoDocuments)
        ));
        let singles = vec![vec!["a"], vec!["b"]];
        assert!(matches!(
            sentence_pairs(&singles, Objective::MlmNsp, &mut rng),
            Err(Error::NoSentencePairs)
        ));
    }
}
