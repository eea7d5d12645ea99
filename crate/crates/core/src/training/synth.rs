//! Synthetic language families for desk-scale experiments.
//!
//! All languages express the same concepts through one topic-driven
//! grammar; they differ only in word forms. The high-resource language
//! `hi` and the low-resource language `lo` are built from disjoint
//! alphabets, and `lo` borrows the `hi` word for a chosen share of its
//! concepts, which is what code-switched text looks like to a tokenizer.

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Corpus;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Det,
    Prep,
    Conj,
    Pron,
    Neg,
    Aux,
    Noun,
    Verb,
    Adj,
}

use Role::*;

const FUNCTION_ROLES: [(Role, usize); 6] = [(Det, 2), (Prep, 3), (Conj, 2), (Pron, 3), (Neg, 1), (Aux, 1)];

const TEMPLATES: [&[Role]; 6] = [
    &[Det, Adj, Noun, Verb, Det, Noun],
    &[Pron, Verb, Det, Noun, Prep, Det, Adj, Noun],
    &[Det, Noun, Verb, Conj, Pron, Verb, Det, Noun],
    &[Det, Noun, Aux, Adj],
    &[Pron, Neg, Verb, Det, Adj, Noun],
    &[Prep, Det, Noun, Pron, Verb, Det, Noun],
];

/// Shape of the concept inventory and of the generated text.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub topics: usize,
    pub nouns_per_topic: usize,
    pub verbs_per_topic: usize,
    pub adjectives_per_topic: usize,
    /// Probability that a content word comes from the document's topic.
    pub topic_fidelity: f64,
    pub min_document: usize,
    pub max_document: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            topics: 8,
            nouns_per_topic: 6,
            verbs_per_topic: 4,
            adjectives_per_topic: 3,
            topic_fidelity: 0.85,
            min_document: 6,
            max_document: 12,
        }
    }
}

impl SynthSpec {
    fn function_words(&self) -> usize {
        FUNCTION_ROLES.iter().map(|(_, n)| n).sum()
    }

    fn per_topic(&self) -> usize {
        self.nouns_per_topic + self.verbs_per_topic + self.adjectives_per_topic
    }

    pub fn concepts(&self) -> usize {
        self.function_words() + self.topics * self.per_topic()
    }

    /// Concept id for a role: function words by index, content words by
    /// topic and index.
    fn concept(&self, role: Role, topic: usize, index: usize) -> usize {
        let mut base = 0;
        for (r, n) in FUNCTION_ROLES {
            if r == role {
                return base + index % n;
            }
            base += n;
        }
        let offset = match role {
            Noun => index % self.nouns_per_topic,
            Verb => self.nouns_per_topic + index % self.verbs_per_topic,
            _ => self.nouns_per_topic + self.verbs_per_topic + index % self.adjectives_per_topic,
        };
        base + topic * self.per_topic() + offset
    }

    fn role_size(&self, role: Role) -> usize {
        match role {
            Noun => self.nouns_per_topic,
            Verb => self.verbs_per_topic,
            Adj => self.adjectives_per_topic,
            r => FUNCTION_ROLES.iter().find(|(x, _)| *x == r).map_or(1, |(_, n)| *n),
        }
    }
}

/// Letters a language builds its syllables from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Language {
    pub consonants: Vec<char>,
    pub vowels: Vec<char>,
}

impl Language {
    pub fn high_resource() -> Self {
        Self {
            consonants: "bcdfglmnprstvw".chars().collect(),
            vowels: "aeo".chars().collect(),
        }
    }

    pub fn low_resource() -> Self {
        Self {
            consonants: "hjkqxyz".chars().collect(),
            vowels: "iu".chars().collect(),
        }
    }
}

/// Word form for every concept, indexed by concept id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    pub words: Vec<String>,
}

impl Lexicon {
    fn generate<R: Rng>(
        language: &Language,
        spec: &SynthSpec,
        taken: &mut HashSet<String>,
        rng: &mut R,
    ) -> Self {
        let functions = spec.function_words();
        let words = (0..spec.concepts())
            .map(|concept| {
                let syllables = if concept < functions { 1..=2 } else { 2..=3 };
                loop {
                    let n = rng.random_range(syllables.clone());
                    let word: String = (0..n)
                        .flat_map(|_| {
                            [
                                *language.consonants.choose(rng).expect("consonants"),
                                *language.vowels.choose(rng).expect("vowels"),
                            ]
                        })
                        .collect();
                    if taken.insert(word.clone()) {
                        break word;
                    }
                }
            })
            .collect();
        Self { words }
    }

    pub fn types(&self) -> HashSet<&str> {
        self.words.iter().map(String::as_str).collect()
    }
}

/// A family of synthetic languages over one concept inventory.
#[derive(Debug, Clone)]
pub struct SynthWorld {
    pub spec: SynthSpec,
    pub hi: Lexicon,
    pub lo: Lexicon,
    /// Further high-resource-alphabet languages for a multilingual base.
    pub extra: Vec<Lexicon>,
}

impl SynthWorld {
    /// `lo` takes the `hi` word for exactly `round(shared_fraction × C)` of
    /// its `C` concepts.
    pub fn new(shared_fraction: f64, extra_languages: usize, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&shared_fraction) {
            return Err(Error::InvalidSharedFraction(shared_fraction));
        }
        let spec = SynthSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut taken = HashSet::new();
        let hi = Lexicon::generate(&Language::high_resource(), &spec, &mut taken, &mut rng);
        let mut lo = Lexicon::generate(&Language::low_resource(), &spec, &mut taken, &mut rng);
        let mut concepts: Vec<usize> = (0..spec.concepts()).collect();
        concepts.shuffle(&mut rng);
        let shared = (shared_fraction * spec.concepts() as f64).round() as usize;
        for &c in &concepts[..shared] {
            lo.words[c] = hi.words[c].clone();
        }
        let extra = (0..extra_languages)
            .map(|_| Lexicon::generate(&Language::high_resource(), &spec, &mut taken, &mut rng))
            .collect();
        Ok(Self { spec, hi, lo, extra })
    }

    fn sentence<R: Rng>(&self, lexicon: &Lexicon, topic: usize, rng: &mut R) -> String {
        let template = TEMPLATES[rng.random_range(0..TEMPLATES.len())];
        let words: Vec<&str> = template
            .iter()
            .map(|&role| {
                let t = if matches!(role, Noun | Verb | Adj) && !rng.random_bool(self.spec.topic_fidelity) {
                    rng.random_range(0..self.spec.topics)
                } else {
                    topic
                };
                let index = rng.random_range(0..self.spec.role_size(role));
                lexicon.words[self.spec.concept(role, t, index)].as_str()
            })
            .collect();
        words.join(" ")
    }

    /// Documents in the given languages, taken in turn, until exactly
    /// `sentences` sentences exist. Each document keeps to one topic.
    pub fn corpus(&self, lexicons: &[&Lexicon], sentences: usize, seed: u64, tag: &str) -> Corpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut documents = Vec::new();
        let mut total = 0;
        while total < sentences {
            let lexicon = lexicons[documents.len() % lexicons.len()];
            let topic = rng.random_range(0..self.spec.topics);
            let len = rng
                .random_range(self.spec.min_document..=self.spec.max_document)
                .min(sentences - total);
            let doc: Vec<String> = (0..len).map(|_| self.sentence(lexicon, topic, &mut rng)).collect();
            total += doc.len();
            documents.push(doc);
        }
        Corpus::new(documents, tag).expect("generated documents are non-empty")
    }
}

/// A high-resource corpus and a low-resource corpus of `sentences`
/// sentences each, where the low-resource lexicon borrows
/// `shared_fraction` of its word types from the high-resource one.
pub fn synth_bilingual_corpus(
    shared_fraction: f64,
    sentences: usize,
    seed: u64,
) -> Result<(Corpus, Corpus)> {
    let world = SynthWorld::new(shared_fraction, 0, seed)?;
    Ok((
        world.corpus(&[&world.hi], sentences, seed.wrapping_add(1), "synthetic-hi"),
        world.corpus(&[&world.lo], sentences, seed.wrapping_add(2), "synthetic-lo"),
    ))
}
