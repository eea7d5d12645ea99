//! Ordered token lists where a token's id is its zero-based position.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, IoContext, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";

/// Reserved tokens, pinned at ids `0..5` in every vocabulary this crate builds.
pub const SPECIAL_TOKENS: [&str; 5] = [PAD, UNK, CLS, SEP, MASK];

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const MASK_ID: u32 = 4;

/// Dense, duplicate-free token list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn new<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, token) in tokens.iter().enumerate() {
            if index.insert(token.clone(), id as u32).is_some() {
                return Err(Error::InvalidVocabulary(format!(
                    "duplicate token {token:?} at id {id}"
                )));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &str)> {
        self.tokens
            .iter()
            .enumerate()
            .map(|(id, t)| (id as u32, t.as_str()))
    }

    /// True when ids `0..5` hold [`SPECIAL_TOKENS`] in order.
    pub fn has_special_prefix(&self) -> bool {
        self.tokens.len() >= SPECIAL_TOKENS.len()
            && self
                .tokens
                .iter()
                .zip(SPECIAL_TOKENS)
                .all(|(t, s)| t == s)
    }

    /// Renders the on-disk form: one token per line, LF endings.
    pub fn to_file_string(&self) -> Result<String> {
        let mut out = String::new();
        for token in &self.tokens {
            if token.is_empty()
                || token.contains(['\n', '\r'])
                || token.ends_with(char::is_whitespace)
            {
                return Err(Error::InvalidVocabulary(format!(
                    "token {token:?} cannot be stored one-per-line"
                )));
            }
            out.push_str(token);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let body = text.strip_suffix('\n').unwrap_or(text);
        if body.is_empty() {
            return Self::new(Vec::<String>::new());
        }
        Self::new(body.split('\n'))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_file_string()?).at(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path).at(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicates() {
        let err = Vocabulary::new(["a", "b", "a"]).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn ids_are_positions() {
        let v = Vocabulary::new(["x", "y", "z"]).unwrap();
        assert_eq!(v.id("z"), Some(2));
        assert_eq!(v.token(1), Some("y"));
        assert_eq!(v.token(3), None);
    }

    #[test]
    fn file_format_is_one_token_per_line() {
        let v = Vocabulary::new(["[PAD]", "ab", "ĠŁ"]).unwrap();
        let text = v.to_file_string().unwrap();
        assert_eq!(text, "[PAD]\nab\nĠŁ\n");
        assert_eq!(Vocabulary::parse(&text).unwrap(), v);
    }

    #[test]
    fn refuses_unstorable_tokens() {
        assert!(Vocabulary::new(["a b "]).unwrap().to_file_string().is_err());
        assert!(Vocabulary::new(["a\nb"]).unwrap().to_file_string().is_err());
    }
}
