//! Position-preserving vocabulary augmentation and embedding surgery.
//!
//! Given the vocabulary `V(y)` of a pretrained model and the vocabulary
//! `V(x)` of a new language, [`augment`] builds `V(z)`: every token the two
//! share keeps its `V(y)` id, tokens unique to `V(x)` take over the
//! remaining slots in their `V(x)` order, and any surplus is appended.
//! [`embedding_surgery`] then moves the pretrained embedding rows onto the
//! new ids.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::model::{ModelParams, Scalar, INIT_STD};
use crate::tokenizer::{byte_to_char, casefold, encode_bytes, token_bytes};
use crate::vocab::{Vocabulary, SPECIAL_TOKENS};

pub const MAP_HEADER: &str = "token\tid\torigin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    /// In both vocabularies; keeps its `V(y)` id.
    Shared,
    /// Only in `V(x)`; placed in a free slot or appended.
    NewFromX,
    /// Only in `V(y)`, and no `V(x)` token needed its slot.
    RetainedFromY,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::Shared => "Shared",
            Origin::NewFromX => "NewFromX",
            Origin::RetainedFromY => "RetainedFromY",
        })
    }
}

impl FromStr for Origin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Shared" => Ok(Origin::Shared),
            "NewFromX" => Ok(Origin::NewFromX),
            "RetainedFromY" => Ok(Origin::RetainedFromY),
            other => Err(Error::InvalidAugmentationMap(format!(
                "unknown origin {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapEntry {
    pub token: String,
    pub id: u32,
    pub origin: Origin,
}

/// One entry per id of the augmented vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentationMap {
    pub entries: Vec<MapEntry>,
    /// Shared tokens outside the reserved prefix.
    pub shared_count: usize,
    pub x_only_count: usize,
    pub y_only_count: usize,
    /// Leading ids identical in both vocabularies by construction (special
    /// tokens, plus the byte alphabet for byte-level vocabularies). They
    /// count as `Shared` entries but not towards `shared_count`.
    pub reserved: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationReport {
    /// `shared_count / |V(x)|`, both taken outside the reserved prefix.
    pub overlap_ratio: f64,
    /// Some non-reserved token occurs in both vocabularies.
    pub precondition_eq1: bool,
    /// Every non-reserved `V(y)` token also occurs in `V(x)`. Diagnostic only.
    pub precondition_eq2: bool,
    /// Fraction of non-reserved `V(y)` tokens found in `V(x)`.
    pub y_coverage: f64,
    pub augmented_size: usize,
    pub shared_count: usize,
    pub x_only_count: usize,
    pub reserved: usize,
    pub shared: Vec<String>,
}

/// Key on which sharing is decided: the case-folded surface text. Byte-level
/// tokens are decoded to text first so that folding acts on real characters
/// rather than on the printable byte stand-ins.
pub fn sharing_key(token: &str) -> String {
    match token_bytes(token).map(String::from_utf8) {
        Some(Ok(text)) => encode_bytes(casefold(&text).as_bytes()),
        _ => casefold(token),
    }
}

/// Length of the fixed prefix of a single vocabulary: 5 when it starts with
/// the special tokens, 261 when the byte alphabet follows in byte order, 0
/// otherwise.
fn fixed_prefix(tokens: &[String]) -> usize {
    let specials = tokens.len() >= SPECIAL_TOKENS.len()
        && tokens.iter().zip(SPECIAL_TOKENS).all(|(t, s)| t == s);
    if !specials {
        return 0;
    }
    let n = SPECIAL_TOKENS.len();
    let bytes = tokens.len() >= n + 256
        && (0..=255u8).all(|b| {
            let mut buf = [0u8; 4];
            tokens[n + b as usize] == *byte_to_char(b).encode_utf8(&mut buf)
        });
    if bytes {
        n + 256
    } else {
        n
    }
}

/// Reserved prefix common to both vocabularies. Special tokens must agree:
/// either both vocabularies start with them or neither does.
pub fn reserved_prefix(vy: &Vocabulary, vx: &Vocabulary) -> Result<usize> {
    let py = fixed_prefix(vy.tokens());
    let px = fixed_prefix(vx.tokens());
    if (py == 0) != (px == 0) {
        for id in 0..SPECIAL_TOKENS.len() {
            let base = vy.token(id as u32).unwrap_or("").to_string();
            let new = vx.token(id as u32).unwrap_or("").to_string();
            if base != new || base != SPECIAL_TOKENS[id] {
                return Err(Error::SpecialTokenMismatch { id, base, new });
            }
        }
    }
    Ok(py.min(px))
}

struct Plan {
    reserved: usize,
    /// `V(y)` ids (outside the prefix) that some `V(x)` token shares.
    shared: Vec<u32>,
    /// `V(x)` tokens with no counterpart in `V(y)`, first of each key only.
    x_only: Vec<String>,
    y_covered: usize,
}

fn plan(vy: &Vocabulary, vx: &Vocabulary) -> Result<Plan> {
    let reserved = reserved_prefix(vy, vx)?;
    let mut y_first: HashMap<String, u32> = HashMap::new();
    for (id, token) in vy.iter() {
        y_first.entry(sharing_key(token)).or_insert(id);
    }
    let mut shared = HashSet::new();
    let mut x_keys = HashSet::new();
    let mut x_only = Vec::new();
    for (_, token) in vx.iter().skip(reserved) {
        let key = sharing_key(token);
        match y_first.get(&key) {
            Some(&yid) if yid as usize >= reserved => {
                shared.insert(yid);
            }
            Some(_) => {}
            None => {
                if !x_keys.contains(&key) {
                    x_only.push(token.to_string());
                }
            }
        }
        x_keys.insert(key);
    }
    let y_covered = vy
        .iter()
        .skip(reserved)
        .filter(|(_, t)| x_keys.contains(&sharing_key(t)))
        .count();
    let mut shared: Vec<u32> = shared.into_iter().collect();
    shared.sort_unstable();
    Ok(Plan {
        reserved,
        shared,
        x_only,
        y_covered,
    })
}

/// Reports whether augmentation applies, without building anything.
pub fn check_preconditions(vx: &Vocabulary, vy: &Vocabulary) -> Result<AugmentationReport> {
    let p = plan(vy, vx)?;
    let x_len = vx.len().saturating_sub(p.reserved);
    let y_len = vy.len().saturating_sub(p.reserved);
    let free = y_len - p.shared.len();
    let surplus = p.x_only.len().saturating_sub(free);
    Ok(AugmentationReport {
        overlap_ratio: if x_len == 0 {
            0.0
        } else {
            (p.shared.len() as f64 / x_len as f64).min(1.0)
        },
        precondition_eq1: !p.shared.is_empty(),
        precondition_eq2: p.y_covered == y_len,
        y_coverage: if y_len == 0 {
            0.0
        } else {
            p.y_covered as f64 / y_len as f64
        },
        augmented_size: vy.len() + surplus,
        shared_count: p.shared.len(),
        x_only_count: p.x_only.len(),
        reserved: p.reserved,
        shared: p
            .shared
            .iter()
            .map(|&id| vy.token(id).unwrap_or_default().to_string())
            .collect(),
    })
}

/// Builds `V(z)` from the pretrained vocabulary `vy` and the new vocabulary
/// `vx`.
pub fn augment(vy: &Vocabulary, vx: &Vocabulary) -> Result<(Vocabulary, AugmentationMap)> {
    let p = plan(vy, vx)?;
    if p.shared.is_empty() {
        return Err(Error::NoSharedVocabulary);
    }
    let shared: HashSet<u32> = p.shared.iter().copied().collect();
    let mut queue = p.x_only.into_iter();
    let mut entries = Vec::with_capacity(vy.len());
    let mut y_only = 0;
    for (id, token) in vy.iter() {
        let (token, origin) = if (id as usize) < p.reserved || shared.contains(&id) {
            (token.to_string(), Origin::Shared)
        } else if let Some(x) = queue.next() {
            (x, Origin::NewFromX)
        } else {
            y_only += 1;
            (token.to_string(), Origin::RetainedFromY)
        };
        entries.push(MapEntry { token, id, origin });
    }
    for token in queue {
        let id = entries.len() as u32;
        entries.push(MapEntry {
            token,
            id,
            origin: Origin::NewFromX,
        });
    }
    let x_only_count = entries
        .iter()
        .filter(|e| e.origin == Origin::NewFromX)
        .count();
    let map = AugmentationMap {
        entries,
        shared_count: shared.len(),
        x_only_count,
        y_only_count: y_only,
        reserved: p.reserved,
    };
    Ok((map.vocabulary()?, map))
}

impl AugmentationMap {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn vocabulary(&self) -> Result<Vocabulary> {
        Vocabulary::new(self.entries.iter().map(|e| e.token.clone()))
    }

    /// Id table from `V(x)` into `V(z)`: `table[x_id] = z_id`.
    pub fn remap_table(&self, vx: &Vocabulary) -> Result<Vec<u32>> {
        let mut z_first: HashMap<String, u32> = HashMap::new();
        for e in &self.entries {
            z_first.entry(sharing_key(&e.token)).or_insert(e.id);
        }
        vx.iter()
            .map(|(id, token)| {
                if (id as usize) < self.reserved {
                    return Ok(id);
                }
                z_first.get(&sharing_key(token)).copied().ok_or_else(|| {
                    Error::InvalidAugmentationMap(format!(
                        "token {token:?} of the new vocabulary has no place in the map"
                    ))
                })
            })
            .collect()
    }

    /// Checks that the map could have been produced from a base vocabulary
    /// of `base_size` tokens.
    pub fn check_base_size(&self, base_size: usize) -> Result<()> {
        let fail = |why: String| Err(Error::ParamsVocabMismatch(why));
        if base_size > self.len() {
            return fail(format!(
                "base has {base_size} rows but the augmented vocabulary only {}",
                self.len()
            ));
        }
        if let Some(e) = self.entries[base_size..]
            .iter()
            .find(|e| e.origin != Origin::NewFromX)
        {
            return fail(format!(
                "map keeps {:?} (id {}) from the base, which has only {base_size} rows",
                e.token, e.id
            ));
        }
        if base_size < self.len() && self.y_only_count > 0 {
            return fail(format!(
                "map appends tokens beyond a base of {base_size} rows while free slots remain"
            ));
        }
        Ok(())
    }

    pub fn to_tsv(&self) -> Result<String> {
        let mut out = String::from(MAP_HEADER);
        out.push('\n');
        for e in &self.entries {
            if e.token.is_empty() || e.token.contains(['\t', '\n', '\r']) {
                return Err(Error::InvalidAugmentationMap(format!(
                    "token {:?} cannot be stored in a TSV row",
                    e.token
                )));
            }
            out.push_str(&format!("{}\t{}\t{}\n", e.token, e.id, e.origin));
        }
        Ok(out)
    }

    pub fn parse_tsv(text: &str) -> Result<Self> {
        let bad = |why: String| Error::InvalidAugmentationMap(why);
        let mut lines = text.lines();
        if lines.next() != Some(MAP_HEADER) {
            return Err(bad(format!("first line must be {MAP_HEADER:?}")));
        }
        let mut entries = Vec::new();
        for (n, line) in lines.enumerate() {
            let cols: Vec<&str> = line.split('\t').collect();
            let [token, id, origin] = cols[..] else {
                return Err(bad(format!("line {}: expected 3 columns", n + 2)));
            };
            let id: u32 = id
                .parse()
                .map_err(|_| bad(format!("line {}: bad id {id:?}", n + 2)))?;
            if id as usize != entries.len() {
                return Err(bad(format!(
                    "line {}: ids must be dense and ascending, found {id}",
                    n + 2
                )));
            }
            entries.push(MapEntry {
                token: token.to_string(),
                id,
                origin: origin.parse()?,
            });
        }
        let tokens: Vec<String> = entries.iter().map(|e| e.token.clone()).collect();
        let reserved = fixed_prefix(&tokens);
        if let Some(e) = entries[..reserved].iter().find(|e| e.origin != Origin::Shared) {
            return Err(bad(format!("reserved token {:?} must be Shared", e.token)));
        }
        let count = |o: Origin| entries.iter().filter(|e| e.origin == o).count();
        let map = Self {
            shared_count: count(Origin::Shared) - reserved,
            x_only_count: count(Origin::NewFromX),
            y_only_count: count(Origin::RetainedFromY),
            reserved,
            entries,
        };
        map.vocabulary()?;
        Ok(map)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()?).at(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse_tsv(&fs::read_to_string(path).at(path)?)
    }
}

/// How embedding rows for `NewFromX` tokens are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitPolicy {
    /// Independent Gaussian entries with the given standard deviation.
    Gaussian { std: f64 },
    /// Arithmetic mean of the shared (non-reserved) rows.
    MeanOfShared,
}

impl Default for InitPolicy {
    fn default() -> Self {
        Self::gaussian()
    }
}

impl InitPolicy {
    pub fn gaussian() -> Self {
        InitPolicy::Gaussian { std: INIT_STD }
    }
}

impl FromStr for InitPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gaussian" => Ok(Self::gaussian()),
            "mean-of-shared" | "mean" => Ok(InitPolicy::MeanOfShared),
            other => Err(format!("unknown init policy {other:?} (gaussian, mean-of-shared)")),
        }
    }
}

/// Moves a model trained over `V(y)` onto `V(z)`.
///
/// Rows (and MLM bias entries) of `Shared` and `RetainedFromY` tokens are
/// copied unchanged; `NewFromX` rows come from `policy` and get a zero bias.
/// Every other tensor is cloned as is. The MLM projection is tied to the
/// embedding matrix, so it follows automatically.
pub fn embedding_surgery<T: Scalar>(
    params: &ModelParams<T>,
    map: &AugmentationMap,
    policy: InitPolicy,
    seed: u64,
) -> Result<ModelParams<T>> {
    let (rows, hidden) = params.token_embeddings.dim();
    if params.mlm_bias.len() != rows {
        return Err(Error::ParamsVocabMismatch(format!(
            "embedding has {rows} rows but the MLM bias has {}",
            params.mlm_bias.len()
        )));
    }
    map.check_base_size(rows)?;

    let mut embeddings = Array2::<T>::zeros((map.len(), hidden));
    let mut bias = Array1::<T>::zeros(map.len());
    let mut fresh = Vec::new();
    for e in &map.entries {
        let id = e.id as usize;
        match e.origin {
            Origin::Shared | Origin::RetainedFromY => {
                embeddings.row_mut(id).assign(&params.token_embeddings.row(id));
                bias[id] = params.mlm_bias[id];
            }
            Origin::NewFromX => fresh.push(id),
        }
    }

    match policy {
        InitPolicy::Gaussian { std } => {
            let normal = Normal::new(0.0, std)
                .map_err(|e| Error::InvalidModelConfig(format!("init std {std}: {e}")))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for &id in &fresh {
                for x in embeddings.row_mut(id) {
                    *x = T::of(normal.sample(&mut rng));
                }
            }
        }
        InitPolicy::MeanOfShared => {
            let mut sources: Vec<usize> = map
                .entries
                .iter()
                .filter(|e| e.origin == Origin::Shared && e.id as usize >= map.reserved)
                .map(|e| e.id as usize)
                .collect();
            if sources.is_empty() {
                sources = map
                    .entries
                    .iter()
                    .filter(|e| e.origin == Origin::Shared)
                    .map(|e| e.id as usize)
                    .collect();
            }
            let mut mean = vec![0.0f64; hidden];
            for &id in &sources {
                for (m, x) in mean.iter_mut().zip(params.token_embeddings.row(id)) {
                    *m += x.as_f64();
                }
            }
            let n = sources.len().max(1) as f64;
            for &id in &fresh {
                for (x, m) in embeddings.row_mut(id).iter_mut().zip(&mean) {
                    *x = T::of(m / n);
                }
            }
        }
    }

    let mut out = params.clone();
    out.token_embeddings = embeddings;
    out.mlm_bias = bias;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(tokens: &[&str]) -> Vocabulary {
        Vocabulary::new(tokens.iter().copied()).unwrap()
    }

    #[test]
    fn worked_example() {
        let vy = vocab(&["y1", "y2", "y3", "y4", "y5", "y6"]);
        let vx = vocab(&["y1", "x2", "y3", "x4", "x5", "x6"]);
        let (vz, map) = augment(&vy, &vx).unwrap();
        assert_eq!(vz.tokens(), ["y1", "x2", "y3", "x4", "x5", "x6"]);
        assert_eq!(map.shared_count, 2);
        assert_eq!(map.x_only_count, 4);
        assert_eq!(map.y_only_count, 0);
    }

    #[test]
    fn preconditions_on_mixed_sentence() {
        let vx = vocab(&["abbas", "school", "parhata"]);
        let vy = vocab(&["school", "teacher"]);
        let r = check_preconditions(&vx, &vy).unwrap();
        assert!(r.precondition_eq1);
        assert!(!r.precondition_eq2);
        assert_eq!(r.shared, ["school"]);
        assert!((r.overlap_ratio - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.augmented_size, 3);
    }

    #[test]
    fn disjoint_and_identical() {
        let a = vocab(&["a", "b"]);
        let b = vocab(&["c", "d"]);
        assert!(!check_preconditions(&a, &b).unwrap().precondition_eq1);
        assert!(matches!(augment(&a, &b), Err(Error::NoSharedVocabulary)));
        let r = check_preconditions(&a, &a).unwrap();
        assert_eq!(r.overlap_ratio, 1.0);
        let (vz, map) = augment(&a, &a).unwrap();
        assert_eq!(vz, a);
        assert!(map.entries.iter().all(|e| e.origin == Origin::Shared));
    }

    #[test]
    fn sharing_folds_case_on_decoded_text() {
        let vy = vocab(&["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "Ġschool", "y"]);
        let vx = vocab(&["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "ĠSchool", "x"]);
        let (vz, map) = augment(&vy, &vx).unwrap();
        assert_eq!(map.reserved, 5);
        assert_eq!(vz.tokens()[5..], ["Ġschool", "x"]);
        assert_eq!(map.remap_table(&vx).unwrap(), [0, 1, 2, 3, 4, 5, 6]);
        // 'Ġ' and 'ġ' stand for different bytes and must not be folded together.
        assert_ne!(sharing_key("Ġa"), sharing_key("ġa"));
    }

    #[test]
    fn special_tokens_must_agree() {
        let vy = vocab(&["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "a"]);
        let vx = vocab(&["a", "b"]);
        assert!(matches!(
            augment(&vy, &vx),
            Err(Error::SpecialTokenMismatch { id: 0, .. })
        ));
    }

    #[test]
    fn surplus_is_appended_and_retained_rows_stay() {
        let vy = vocab(&["s", "y2", "y3"]);
        let grow = vocab(&["s", "a", "b", "c"]);
        let (vz, map) = augment(&vy, &grow).unwrap();
        assert_eq!(vz.tokens(), ["s", "a", "b", "c"]);
        assert_eq!(map.entries[3].origin, Origin::NewFromX);
        let shrink = vocab(&["a", "s"]);
        let (vz, map) = augment(&vy, &shrink).unwrap();
        assert_eq!(vz.tokens(), ["s", "a", "y3"]);
        assert_eq!(map.entries[2].origin, Origin::RetainedFromY);
        assert_eq!(map.remap_table(&shrink).unwrap(), [1, 0]);
    }

    #[test]
    fn tsv_round_trip() {
        let vy = vocab(&["s", "y2", "y3"]);
        let vx = vocab(&["a", "s"]);
        let (_, map) = augment(&vy, &vx).unwrap();
        let text = map.to_tsv().unwrap();
        assert!(text.starts_with("token\tid\torigin\ns\t0\tShared\n"));
        assert_eq!(AugmentationMap::parse_tsv(&text).unwrap(), map);
        assert!(AugmentationMap::parse_tsv("token\tid\n").is_err());
        assert!(AugmentationMap::parse_tsv("token\tid\torigin\na\t1\tShared\n").is_err());
    }

    #[test]
    fn base_size_check() {
        let vy = vocab(&["s", "y2", "y3"]);
        let (_, map) = augment(&vy, &vocab(&["a", "s"])).unwrap();
        assert!(map.check_base_size(3).is_ok());
        assert!(map.check_base_size(2).is_err());
        assert!(map.check_base_size(4).is_err());
    }
}
