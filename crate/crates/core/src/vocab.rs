//! Tokenization, vocabulary construction and corpus ingestion.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::TokenId;

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

pub const BOS_ID: TokenId = 0;
pub const EOS_ID: TokenId = 1;
pub const UNK_ID: TokenId = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizeMode {
    /// Split on runs of Unicode whitespace.
    #[default]
    Whitespace,
    /// One token per Unicode scalar value, whitespace included.
    Char,
}

pub fn tokenize(text: &str, mode: TokenizeMode) -> Vec<String> {
    match mode {
        TokenizeMode::Whitespace => text.split_whitespace().map(str::to_owned).collect(),
        TokenizeMode::Char => text.chars().map(String::from).collect(),
    }
}

/// Inverse of [`tokenize`] up to whitespace normalization.
pub fn detokenize<S: AsRef<str>>(tokens: &[S], mode: TokenizeMode) -> String {
    let sep = match mode {
        TokenizeMode::Whitespace => " ",
        TokenizeMode::Char => "",
    };
    tokens.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(sep)
}

/// Bijection between token strings and dense ids. Ids 0, 1, 2 are BOS, EOS
/// and UNK.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Builds from tokens in id order. The three specials are prepended when
    /// `tokens` does not already start with them.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if all.len() < 3 || all[..3] != [BOS, EOS, UNK] {
            let mut with_specials: Vec<String> = vec![BOS.into(), EOS.into(), UNK.into()];
            with_specials.append(&mut all);
            all = with_specials;
        }
        let mut index = HashMap::with_capacity(all.len());
        for (id, tok) in all.iter().enumerate() {
            if index.insert(tok.clone(), id).is_some() {
                return Err(Error::Parameter(format!("duplicate vocabulary token {tok:?}")));
            }
        }
        Ok(Vocabulary { tokens: all, index })
    }

    /// Builds from in-memory lines. Tokens seen at least `min_count` times get
    /// ids in frequency-descending order, ties broken lexicographically.
    pub fn build<S: AsRef<str>>(lines: &[S], mode: TokenizeMode, min_count: usize) -> Result<Self> {
        if min_count < 1 {
            return Err(Error::Parameter("min_count must be at least 1".into()));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for line in lines {
            for tok in tokenize(line.as_ref(), mode) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(tok, c)| *c >= min_count && ![BOS, EOS, UNK].contains(&tok.as_str()))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_tokens(kept.into_iter().map(|(t, _)| t))
    }

    pub fn build_from_file(path: &Path, mode: TokenizeMode, min_count: usize) -> Result<Self> {
        let lines = read_lines(path)?;
        Self::build(&lines, mode, min_count)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Like [`Vocabulary::id`] but maps out-of-vocabulary tokens to UNK.
    pub fn id_or_unk(&self, token: &str) -> TokenId {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        id <= UNK_ID
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.id_or_unk(t.as_ref())).collect()
    }

    pub fn encode_text(&self, text: &str, mode: TokenizeMode) -> Vec<TokenId> {
        self.encode(&tokenize(text, mode))
    }

    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter().map(|&id| self.token(id).unwrap_or(UNK).to_owned()).collect()
    }

    /// One token per line, line number = id.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for tok in &self.tokens {
            writeln!(out, "{tok}").expect("write to vec");
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens: Vec<&str> = text.split('\n').collect();
        // a trailing newline leaves one empty element
        let tokens = match tokens.split_last() {
            Some((&"", rest)) => rest,
            _ => &tokens[..],
        };
        if tokens.len() < 3 || tokens[..3] != [BOS, EOS, UNK] {
            return Err(Error::parse(path, 1, "vocabulary must start with <s>, </s>, <unk>"));
        }
        Self::from_tokens(tokens.iter().copied())
    }
}

/// Documents as id sequences, one per non-blank input line.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    documents: Vec<Vec<TokenId>>,
    source: Option<PathBuf>,
    token_count: usize,
}

impl Corpus {
    pub fn from_lines<S: AsRef<str>>(lines: &[S], vocab: &Vocabulary, mode: TokenizeMode) -> Self {
        let documents: Vec<Vec<TokenId>> = lines
            .iter()
            .map(|l| l.as_ref())
            .filter(|l| !l.trim().is_empty())
            .map(|l| vocab.encode_text(l, mode))
            .collect();
        Self::from_documents(documents)
    }

    pub fn from_documents(documents: Vec<Vec<TokenId>>) -> Self {
        let token_count = documents.iter().map(Vec::len).sum();
        Corpus {
            documents,
            source: None,
            token_count,
        }
    }

    pub fn load(path: &Path, vocab: &Vocabulary, mode: TokenizeMode) -> Result<Self> {
        let lines = read_lines(path)?;
        let mut corpus = Self::from_lines(&lines, vocab, mode);
        corpus.source = Some(path.to_path_buf());
        Ok(corpus)
    }

    pub fn documents(&self) -> &[Vec<TokenId>] {
        &self.documents
    }

    pub fn source(&self) -> Option<&Path> {
        self.source.as_deref()
    }

    pub fn token_count(&self) -> usize {
        self.token_count
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }
}

/// Non-blank lines of a UTF-8 file.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_owned)
        .collect())
}
