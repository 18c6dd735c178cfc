//! Language-model interface, the bundled n-gram model and a replay provider
//! that feeds distributions exported by an external model.

use std::cell::Cell;
use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dist::{compensated_sum, ProbDist};
use crate::error::{Error, Result};
use crate::vocab::{Corpus, Vocabulary, BOS_ID, EOS_ID, UNK_ID};
use crate::TokenId;

/// Anything that can score the next token given the tokens generated so far.
///
/// `context` holds prompt and generated tokens only; implementations supply
/// their own start-of-sequence padding.
pub trait LanguageModel {
    fn vocab_size(&self) -> usize;

    fn next_distribution(&self, context: &[TokenId]) -> Result<ProbDist>;
}

impl<L: LanguageModel + ?Sized> LanguageModel for &L {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn next_distribution(&self, context: &[TokenId]) -> Result<ProbDist> {
        (**self).next_distribution(context)
    }
}

/// Sum of per-step log probabilities (nats) of `tokens`, each conditioned on
/// its prefix.
pub fn sequence_logprob<L: LanguageModel + ?Sized>(lm: &L, tokens: &[TokenId]) -> Result<f64> {
    if tokens.is_empty() {
        return Err(Error::Parameter("cannot score an empty sequence".into()));
    }
    let mut steps = Vec::with_capacity(tokens.len());
    for t in 0..tokens.len() {
        let dist = lm.next_distribution(&tokens[..t])?;
        steps.push(dist.prob(tokens[t]).ln());
    }
    Ok(compensated_sum(steps))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Smoothing {
    /// `(c(ctx, w) + k) / (c(ctx) + k |V|)` on the full-order context.
    AddK(f64),
    /// Linear interpolation of maximum-likelihood estimates, unigram first.
    /// The unigram level is add-one smoothed so every token keeps mass.
    /// Orders whose context was never seen donate their weight to the rest.
    Interpolated(Vec<f64>),
}

impl Default for Smoothing {
    fn default() -> Self {
        Smoothing::AddK(0.01)
    }
}

impl Smoothing {
    fn validate(&self, order: usize) -> Result<()> {
        match self {
            Smoothing::AddK(k) if !(k.is_finite() && *k > 0.0) => {
                Err(Error::Parameter(format!("add-k smoothing needs k > 0, got {k}")))
            }
            Smoothing::AddK(_) => Ok(()),
            Smoothing::Interpolated(w) => {
                if w.len() != order {
                    return Err(Error::Parameter(format!(
                        "interpolation needs {order} weights, got {}",
                        w.len()
                    )));
                }
                if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || w[0] <= 0.0 {
                    return Err(Error::Parameter(
                        "interpolation weights must be nonnegative with a positive unigram weight".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Successors {
    total: u64,
    counts: BTreeMap<TokenId, u64>,
}

/// Counts-based n-gram model with BOS padding of length `order - 1` and an
/// EOS event at the end of every document.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramLm {
    order: usize,
    smoothing: Smoothing,
    vocab: Vocabulary,
    /// `tables[j]` maps contexts of length `j` to successor counts.
    tables: Vec<HashMap<Vec<TokenId>, Successors>>,
}

pub const DEFAULT_ORDER: usize = 3;

impl NGramLm {
    pub fn train(corpus: &Corpus, vocab: Vocabulary, order: usize, smoothing: Smoothing) -> Result<Self> {
        if order < 1 {
            return Err(Error::Parameter("n-gram order must be at least 1".into()));
        }
        if corpus.is_empty() {
            return Err(Error::Parameter("cannot train on an empty corpus".into()));
        }
        smoothing.validate(order)?;
        let mut tables: Vec<HashMap<Vec<TokenId>, Successors>> = vec![HashMap::new(); order];
        for doc in corpus.documents() {
            if let Some(&bad) = doc.iter().find(|&&t| t >= vocab.len()) {
                return Err(Error::Parameter(format!("token id {bad} outside vocabulary")));
            }
            let mut padded = vec![BOS_ID; order - 1];
            padded.extend_from_slice(doc);
            padded.push(EOS_ID);
            for i in (order - 1)..padded.len() {
                let next = padded[i];
                for (len, table) in tables.iter_mut().enumerate() {
                    let entry = table.entry(padded[i - len..i].to_vec()).or_default();
                    entry.total += 1;
                    *entry.counts.entry(next).or_default() += 1;
                }
            }
        }
        Ok(NGramLm {
            order,
            smoothing,
            vocab,
            tables,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing(&self) -> &Smoothing {
        &self.smoothing
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Raw count of `next` following `context` (context length < order).
    pub fn count(&self, context: &[TokenId], next: TokenId) -> u64 {
        self.tables
            .get(context.len())
            .and_then(|t| t.get(context))
            .and_then(|s| s.counts.get(&next))
            .copied()
            .unwrap_or(0)
    }

    fn history(&self, context: &[TokenId]) -> Vec<TokenId> {
        let want = self.order - 1;
        let mut h = Vec::with_capacity(want);
        let have = context.len().min(want);
        h.extend(std::iter::repeat_n(BOS_ID, want - have));
        h.extend(
            context[context.len() - have..]
                .iter()
                .map(|&t| if t < self.vocab.len() { t } else { UNK_ID }),
        );
        h
    }

    fn add_k(&self, history: &[TokenId], k: f64) -> Vec<f64> {
        let v = self.vocab.len();
        match self.tables[history.len()].get(history) {
            None => vec![1.0 / v as f64; v],
            Some(s) => {
                let denom = s.total as f64 + k * v as f64;
                let mut probs = vec![k / denom; v];
                for (&w, &c) in &s.counts {
                    probs[w] = (c as f64 + k) / denom;
                }
                probs
            }
        }
    }

    fn interpolated(&self, history: &[TokenId], weights: &[f64]) -> Vec<f64> {
        let v = self.vocab.len();
        let unigram = &self.tables[0][&Vec::new()];
        let mut levels: Vec<(f64, &Successors)> = vec![(weights[0], unigram)];
        for len in 1..self.order {
            if let Some(s) = self.tables[len].get(&history[history.len() - len..]) {
                levels.push((weights[len], s));
            }
        }
        let wsum: f64 = levels.iter().map(|(w, _)| w).sum();
        let uni_denom = unigram.total as f64 + v as f64;
        let mut probs = vec![levels[0].0 / wsum / uni_denom; v];
        for (&w, &c) in &unigram.counts {
            probs[w] = levels[0].0 / wsum * (c as f64 + 1.0) / uni_denom;
        }
        for (weight, s) in &levels[1..] {
            let scale = weight / wsum / s.total as f64;
            for (&w, &c) in &s.counts {
                probs[w] += scale * c as f64;
            }
        }
        probs
    }

    /// Line-oriented dump that reads back to an equal model.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "ifdid-ngram v1").unwrap();
        writeln!(out, "order {}", self.order).unwrap();
        match &self.smoothing {
            Smoothing::AddK(k) => writeln!(out, "smoothing add_k {k}").unwrap(),
            Smoothing::Interpolated(w) => {
                let ws: Vec<String> = w.iter().map(f64::to_string).collect();
                writeln!(out, "smoothing interpolated {}", ws.join(" ")).unwrap();
            }
        }
        writeln!(out, "vocab {}", self.vocab.len()).unwrap();
        for tok in self.vocab.tokens() {
            writeln!(out, "{tok}").unwrap();
        }
        let mut rows: Vec<(&Vec<TokenId>, TokenId, u64)> = Vec::new();
        for table in &self.tables {
            for (ctx, s) in table {
                for (&w, &c) in &s.counts {
                    rows.push((ctx, w, c));
                }
            }
        }
        rows.sort_by(|a, b| a.0.len().cmp(&b.0.len()).then(a.0.cmp(b.0)).then(a.1.cmp(&b.1)));
        writeln!(out, "counts {}", rows.len()).unwrap();
        for (ctx, w, c) in rows {
            let ctx: Vec<String> = ctx.iter().map(usize::to_string).collect();
            let ctx = if ctx.is_empty() { "-".to_owned() } else { ctx.join(" ") };
            writeln!(out, "{ctx}\t{w}\t{c}").unwrap();
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.split('\n').enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::parse(path, 0, format!("unexpected end of file, expected {what}")))
        };
        let (n, header) = next("header")?;
        if header != "ifdid-ngram v1" {
            return Err(Error::parse(path, n, "not an ifdid-ngram v1 file"));
        }
        let (n, line) = next("order")?;
        let order: usize = keyed(line, "order")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::parse(path, n, "expected `order <n>`"))?;
        let (n, line) = next("smoothing")?;
        let fields: Vec<&str> = keyed(line, "smoothing")
            .ok_or_else(|| Error::parse(path, n, "expected `smoothing ...`"))?
            .split(' ')
            .collect();
        let nums: Vec<f64> = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(path, n, "bad smoothing parameter"))?;
        let smoothing = match (fields[0], nums.as_slice()) {
            ("add_k", [k]) => Smoothing::AddK(*k),
            ("interpolated", w) => Smoothing::Interpolated(w.to_vec()),
            _ => return Err(Error::parse(path, n, "unknown smoothing")),
        };
        let (n, line) = next("vocab")?;
        let vsize: usize = keyed(line, "vocab")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::parse(path, n, "expected `vocab <n>`"))?;
        let mut tokens = Vec::with_capacity(vsize);
        for _ in 0..vsize {
            tokens.push(next("vocabulary token")?.1.to_owned());
        }
        let vocab = Vocabulary::from_tokens(tokens)?;
        if vocab.len() != vsize {
            return Err(Error::parse(
                path,
                n,
                "vocabulary does not start with the special tokens",
            ));
        }
        let (n, line) = next("counts")?;
        let rows: usize = keyed(line, "counts")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::parse(path, n, "expected `counts <n>`"))?;
        let mut tables: Vec<HashMap<Vec<TokenId>, Successors>> = vec![HashMap::new(); order];
        for _ in 0..rows {
            let (n, line) = next("count row")?;
            let bad = || Error::parse(path, n, "malformed count row");
            let mut parts = line.split('\t');
            let (ctx, w, c) = (
                parts.next().ok_or_else(bad)?,
                parts.next().ok_or_else(bad)?,
                parts.next().ok_or_else(bad)?,
            );
            let ctx: Vec<TokenId> = if ctx == "-" {
                Vec::new()
            } else {
                ctx.split(' ')
                    .map(|x| x.parse().map_err(|_| bad()))
                    .collect::<Result<_>>()?
            };
            let w: TokenId = w.parse().map_err(|_| bad())?;
            let c: u64 = c.parse().map_err(|_| bad())?;
            if ctx.len() >= order || w >= vsize || ctx.iter().any(|&t| t >= vsize) {
                return Err(bad());
            }
            let entry = tables[ctx.len()].entry(ctx).or_default();
            entry.total += c;
            entry.counts.insert(w, c);
        }
        smoothing.validate(order)?;
        if tables[0].is_empty() {
            return Err(Error::parse(path, n, "model has no unigram counts"));
        }
        Ok(NGramLm {
            order,
            smoothing,
            vocab,
            tables,
        })
    }
}

fn keyed<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    line.strip_prefix(key)?.strip_prefix(' ')
}

impl LanguageModel for NGramLm {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn next_distribution(&self, context: &[TokenId]) -> Result<ProbDist> {
        let history = self.history(context);
        let probs = match &self.smoothing {
            Smoothing::AddK(k) => self.add_k(&history, *k),
            Smoothing::Interpolated(w) => self.interpolated(&history, w),
        };
        Ok(ProbDist::from_vec_unchecked(probs))
    }
}

/// Replays a fixed sequence of distributions, one per call, ignoring the
/// context. Single consumer.
#[derive(Debug, Clone)]
pub struct ReplayProvider {
    steps: Vec<ProbDist>,
    cursor: Cell<usize>,
}

impl ReplayProvider {
    pub fn new(steps: Vec<ProbDist>) -> Result<Self> {
        if let Some(first) = steps.first() {
            if steps.iter().any(|s| s.len() != first.len()) {
                return Err(Error::Parameter("replay steps differ in width".into()));
            }
        }
        Ok(ReplayProvider {
            steps,
            cursor: Cell::new(0),
        })
    }

    /// One step per line, whitespace-separated probabilities. Rows are
    /// renormalized on load; negative or non-numeric entries are rejected.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut steps = Vec::new();
        let mut width = None;
        for (i, line) in text.lines().enumerate() {
            let row = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let values: Vec<f64> = line
                .split_whitespace()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(path, row, format!("row {row}: {e}")))?;
            if let Some((j, v)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
                return Err(Error::parse(path, row, format!("row {row}: entry {j} is {v}")));
            }
            match width {
                None => width = Some(values.len()),
                Some(w) if w != values.len() => {
                    return Err(Error::parse(
                        path,
                        row,
                        format!("row {row}: {} entries, expected {w}", values.len()),
                    ))
                }
                _ => {}
            }
            let dist = ProbDist::normalize(&values).map_err(|e| Error::parse(path, row, format!("row {row}: {e}")))?;
            steps.push(dist);
        }
        Self::new(steps)
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn cursor(&self) -> usize {
        self.cursor.get()
    }

    pub fn rewind(&self) {
        self.cursor.set(0);
    }

    pub fn replay_next(&mut self) -> Result<ProbDist> {
        self.advance()
    }

    fn advance(&self) -> Result<ProbDist> {
        let at = self.cursor.get();
        let step = self.steps.get(at).cloned().ok_or(Error::EndOfStream(at))?;
        self.cursor.set(at + 1);
        Ok(step)
    }
}

impl LanguageModel for ReplayProvider {
    fn vocab_size(&self) -> usize {
        self.steps.first().map_or(0, ProbDist::len)
    }

    fn next_distribution(&self, _context: &[TokenId]) -> Result<ProbDist> {
        self.advance()
    }
}
