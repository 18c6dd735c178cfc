//! The autoregressive decoding loop and every selection strategy.
//!
//! A strategy sees the model's next-token distribution at each step and
//! returns a token. The gamma family runs a fixed per-step pipeline:
//! extremeness clamp, Enhance, Filter (IFDID variants only), then sampling.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::dist::{clamp_extremes, entropy, ExtremenessPolicy, ProbDist};
use crate::embeddings::{average_embedding, EmbeddingTable};
use crate::enhance::{
    build_repeated_set, build_terminal_set, build_theme_set, enhance_step, gamma_transform, simi_enhance_frozen,
    FrozenSet, GammaParams, SimiParams, ThemeMode, TokenSet, TypicalSets,
};
use crate::error::{Error, Result};
use crate::filter::{filter_detailed, FilterParams};
use crate::lm::LanguageModel;
use crate::rng::SplitMix64;
use crate::vocab::{Vocabulary, BOS_ID, EOS_ID, UNK_ID};
use crate::TokenId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Strategy {
    Greedy,
    Beam {
        beam_size: usize,
        /// Block any n-gram of this size from appearing twice. Defaults to
        /// [`DEFAULT_NO_REPEAT_NGRAM`]; `null` disables.
        #[serde(default = "default_no_repeat_ngram")]
        no_repeat_ngram: Option<usize>,
    },
    Temperature {
        t: f64,
    },
    TopK {
        k: usize,
    },
    Nucleus {
        p: f64,
    },
    Gamma {
        #[serde(default)]
        gamma: GammaParams,
    },
    Ifdid {
        #[serde(default)]
        gamma: GammaParams,
        #[serde(default)]
        filter: FilterParams,
    },
    IfdidSimi {
        #[serde(default)]
        gamma: GammaParams,
        #[serde(default)]
        simi: SimiParams,
        #[serde(default)]
        filter: FilterParams,
    },
}

pub const DEFAULT_NO_REPEAT_NGRAM: usize = 3;

fn default_no_repeat_ngram() -> Option<usize> {
    Some(DEFAULT_NO_REPEAT_NGRAM)
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Greedy => "greedy",
            Strategy::Beam { .. } => "beam",
            Strategy::Temperature { .. } => "temperature",
            Strategy::TopK { .. } => "top_k",
            Strategy::Nucleus { .. } => "nucleus",
            Strategy::Gamma { .. } => "gamma",
            Strategy::Ifdid { .. } => "ifdid",
            Strategy::IfdidSimi { .. } => "ifdid_simi",
        }
    }

    pub fn is_gamma_family(&self) -> bool {
        matches!(
            self,
            Strategy::Gamma { .. } | Strategy::Ifdid { .. } | Strategy::IfdidSimi { .. }
        )
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        match self {
            Strategy::Greedy => Ok(()),
            Strategy::Beam {
                beam_size,
                no_repeat_ngram,
            } => {
                if *beam_size < 1 {
                    return Err(Error::Parameter("beam_size must be at least 1".into()));
                }
                if *no_repeat_ngram == Some(0) {
                    return Err(Error::Parameter("no_repeat_ngram must be at least 1".into()));
                }
                Ok(())
            }
            Strategy::Temperature { t } => {
                if !(t.is_finite() && *t > 0.0) {
                    return Err(Error::Parameter(format!("temperature must be > 0, got {t}")));
                }
                Ok(())
            }
            Strategy::TopK { k } => {
                if *k < 1 || *k > vocab_size {
                    return Err(Error::Parameter(format!("k must lie in [1, {vocab_size}], got {k}")));
                }
                Ok(())
            }
            Strategy::Nucleus { p } => {
                if !(*p > 0.0 && *p <= 1.0) {
                    return Err(Error::Parameter(format!("p must lie in (0, 1], got {p}")));
                }
                Ok(())
            }
            Strategy::Gamma { gamma } => gamma.validate(),
            Strategy::Ifdid { gamma, filter } => {
                gamma.validate()?;
                filter.validate()
            }
            Strategy::IfdidSimi { gamma, simi, filter } => {
                gamma.validate()?;
                simi.validate()?;
                filter.validate()
            }
        }
    }
}

/// How the IFDID variants pick among filter survivors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// In proportion to the renormalized survivor probabilities.
    #[default]
    Proportional,
    /// Uniformly over the survivor set.
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    pub max_length: usize,
    pub seed: u64,
    /// Sequence index mixed into the seed, so each sequence of a run gets its
    /// own stream.
    pub stream: u64,
    /// Conditioning prefix; never part of the output.
    pub prompt: Vec<TokenId>,
    pub input_pieces: Vec<Vec<TokenId>>,
    /// `None` clamps for the gamma family and not for classical baselines.
    pub clamp: Option<bool>,
    pub extremeness: ExtremenessPolicy,
    pub selection: Selection,
    pub terminal_extra: Vec<String>,
}

impl DecodeConfig {
    pub fn new(strategy: Strategy, max_length: usize) -> Self {
        DecodeConfig {
            strategy,
            max_length,
            seed: 0,
            stream: 0,
            prompt: Vec::new(),
            input_pieces: Vec::new(),
            clamp: None,
            extremeness: ExtremenessPolicy::default(),
            selection: Selection::Proportional,
            terminal_extra: Vec::new(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }

    pub fn with_prompt(mut self, prompt: Vec<TokenId>) -> Self {
        self.prompt = prompt;
        self
    }

    pub fn with_pieces(mut self, pieces: Vec<Vec<TokenId>>) -> Self {
        self.input_pieces = pieces;
        self
    }

    fn policy(&self) -> Option<ExtremenessPolicy> {
        self.clamp
            .unwrap_or(self.strategy.is_gamma_family())
            .then_some(self.extremeness)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Eos,
    MaxLength,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    /// Entropy of the model distribution at this step (nats), after special
    /// tokens are suppressed.
    pub entropy: f64,
    /// Information content of the chosen token under that distribution;
    /// `None` when the model gave it zero probability.
    pub info: Option<f64>,
    /// Tokens left after the information filter (IFDID variants only).
    pub survivors: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeRecord {
    /// Emitted tokens, including the final EOS when generation stopped on it.
    pub tokens: Vec<TokenId>,
    pub steps: Vec<StepDiagnostics>,
    pub termination: Termination,
}

impl DecodeRecord {
    /// Emitted tokens without the terminating EOS.
    pub fn content(&self) -> &[TokenId] {
        match self.tokens.split_last() {
            Some((&EOS_ID, rest)) => rest,
            _ => &self.tokens,
        }
    }

    /// The record as if generation had been cut off after `max_length`
    /// tokens.
    pub fn truncated(&self, max_length: usize) -> DecodeRecord {
        if self.tokens.len() <= max_length {
            return self.clone();
        }
        DecodeRecord {
            tokens: self.tokens[..max_length].to_vec(),
            steps: self.steps[..max_length].to_vec(),
            termination: Termination::MaxLength,
        }
    }
}

/// Draws one token from `dist` using a single uniform variate.
pub fn sample(dist: &ProbDist, rng: &mut SplitMix64) -> TokenId {
    let u = rng.next_f64();
    let mut cum = 0.0;
    let mut last = 0;
    for (i, &p) in dist.as_slice().iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        cum += p;
        last = i;
        if u < cum {
            return i;
        }
    }
    last
}

fn sample_uniform_support(dist: &ProbDist, rng: &mut SplitMix64) -> TokenId {
    let support = dist.support();
    let u = rng.next_f64();
    let at = ((u * support.len() as f64) as usize).min(support.len() - 1);
    support[at]
}

fn select(dist: &ProbDist, selection: Selection, rng: &mut SplitMix64) -> TokenId {
    match selection {
        Selection::Proportional => sample(dist, rng),
        Selection::Uniform => sample_uniform_support(dist, rng),
    }
}

/// Ids sorted by descending probability, ties by ascending id.
fn ranked(dist: &ProbDist) -> Vec<TokenId> {
    let p = dist.as_slice();
    let mut ids: Vec<TokenId> = (0..p.len()).collect();
    ids.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    ids
}

fn keep_only(dist: &ProbDist, keep: &[TokenId]) -> ProbDist {
    let p = dist.as_slice();
    let mut w = vec![0.0; p.len()];
    for &t in keep {
        w[t] = p[t];
    }
    ProbDist::normalize(&w).expect("kept tokens carry mass")
}

pub fn step_greedy(dist: &ProbDist) -> TokenId {
    dist.argmax()
}

pub fn temperature_transform(dist: &ProbDist, t: f64) -> ProbDist {
    if t == 1.0 {
        return dist.clone();
    }
    let inv = 1.0 / t;
    let w: Vec<f64> = dist.as_slice().iter().map(|p| p.powf(inv)).collect();
    match ProbDist::normalize(&w) {
        Ok(d) => d,
        // every power underflowed: the limit is the argmax
        Err(_) => ProbDist::point(dist.len(), dist.argmax()).unwrap(),
    }
}

pub fn step_temperature(dist: &ProbDist, t: f64, rng: &mut SplitMix64) -> TokenId {
    sample(&temperature_transform(dist, t), rng)
}

pub fn top_k_transform(dist: &ProbDist, k: usize) -> ProbDist {
    let ids = ranked(dist);
    let keep: Vec<TokenId> = ids.into_iter().take(k.max(1)).filter(|&t| dist.prob(t) > 0.0).collect();
    if keep.is_empty() {
        return dist.clone();
    }
    keep_only(dist, &keep)
}

pub fn step_topk(dist: &ProbDist, k: usize, rng: &mut SplitMix64) -> TokenId {
    sample(&top_k_transform(dist, k), rng)
}

/// Absorbs rounding in the running sum, so `p = 1` never drops the tail.
const NUCLEUS_SLACK: f64 = 1e-12;

/// Smallest probability-sorted prefix whose mass reaches `p`.
pub fn nucleus_transform(dist: &ProbDist, p: f64) -> ProbDist {
    let mut keep = Vec::new();
    let mut cum = 0.0;
    for t in ranked(dist) {
        let q = dist.prob(t);
        if q <= 0.0 {
            break;
        }
        keep.push(t);
        cum += q;
        if cum >= p - NUCLEUS_SLACK {
            break;
        }
    }
    keep_only(dist, &keep)
}

pub fn step_nucleus(dist: &ProbDist, p: f64, rng: &mut SplitMix64) -> TokenId {
    sample(&nucleus_transform(dist, p), rng)
}

fn maybe_clamp(dist: &ProbDist, policy: Option<ExtremenessPolicy>) -> ProbDist {
    match policy {
        Some(p) => clamp_extremes(dist, p),
        None => dist.clone(),
    }
}

/// Gamma-sample distribution: clamp then Enhance.
pub fn gamma_pipeline(
    dist: &ProbDist,
    sets: &TypicalSets,
    params: &GammaParams,
    policy: Option<ExtremenessPolicy>,
) -> Result<ProbDist> {
    enhance_step(&maybe_clamp(dist, policy), sets, params)
}

pub fn step_gamma(
    dist: &ProbDist,
    sets: &TypicalSets,
    params: &GammaParams,
    rng: &mut SplitMix64,
    policy: Option<ExtremenessPolicy>,
) -> Result<TokenId> {
    Ok(sample(&gamma_pipeline(dist, sets, params, policy)?, rng))
}

/// Returns the chosen token and the survivor count.
pub fn step_ifdid(
    dist: &ProbDist,
    sets: &TypicalSets,
    params: &GammaParams,
    filter: &FilterParams,
    rng: &mut SplitMix64,
    policy: Option<ExtremenessPolicy>,
    selection: Selection,
) -> Result<(TokenId, usize)> {
    let enhanced = gamma_pipeline(dist, sets, params, policy)?;
    let filtered = filter_detailed(&enhanced, filter);
    Ok((select(&filtered.dist, selection, rng), filtered.survivors))
}

/// Inputs of the SIMI theme channel.
#[derive(Debug, Clone, Copy)]
pub struct SimiContext<'a> {
    pub theme: &'a TokenSet,
    pub piece_embedding: &'a [f64],
    pub embeddings: &'a EmbeddingTable,
    pub params: &'a SimiParams,
}

/// Clamp, gamma on the repeated set, similarity bump on the theme set, gamma
/// on the terminal set, then the filter.
pub fn simi_pipeline(
    dist: &ProbDist,
    repeated: &TokenSet,
    terminal: &TokenSet,
    simi: SimiContext<'_>,
    gamma: &GammaParams,
    policy: Option<ExtremenessPolicy>,
) -> Result<ProbDist> {
    let clamped = maybe_clamp(dist, policy);
    let (after_rep, frozen) = gamma_transform(&clamped, repeated, &FrozenSet::new(), gamma.rep)?;
    let (after_theme, frozen) = simi_enhance_frozen(
        &after_rep,
        simi.theme,
        simi.piece_embedding,
        simi.embeddings,
        simi.params,
        &frozen,
    )?;
    let terminal: TokenSet = terminal.iter().copied().filter(|t| !frozen.contains(*t)).collect();
    Ok(gamma_transform(&after_theme, &terminal, &frozen, gamma.sentence)?.0)
}

#[allow(clippy::too_many_arguments)]
pub fn step_ifdid_simi(
    dist: &ProbDist,
    repeated: &TokenSet,
    terminal: &TokenSet,
    simi: SimiContext<'_>,
    gamma: &GammaParams,
    filter: &FilterParams,
    rng: &mut SplitMix64,
    policy: Option<ExtremenessPolicy>,
    selection: Selection,
) -> Result<(TokenId, usize)> {
    let enhanced = simi_pipeline(dist, repeated, terminal, simi, gamma, policy)?;
    let filtered = filter_detailed(&enhanced, filter);
    Ok((select(&filtered.dist, selection, rng), filtered.survivors))
}

/// Zeroes BOS and UNK, which are never valid output, and renormalizes. A
/// distribution with no mass elsewhere is returned unchanged.
pub fn suppress_specials(dist: ProbDist) -> ProbDist {
    let p = dist.as_slice();
    let hit = |t: TokenId| p.get(t).is_some_and(|&x| x > 0.0);
    if !hit(BOS_ID) && !hit(UNK_ID) {
        return dist;
    }
    let mut w = p.to_vec();
    for t in [BOS_ID, UNK_ID] {
        if t < w.len() {
            w[t] = 0.0;
        }
    }
    ProbDist::normalize(&w).unwrap_or(dist)
}

fn diagnostics(dist: &ProbDist, ent: f64, token: TokenId, survivors: Option<usize>) -> StepDiagnostics {
    let p = dist.prob(token);
    StepDiagnostics {
        entropy: ent,
        info: (p > 0.0).then(|| -p.ln()),
        survivors,
    }
}

/// True when appending `next` to `emitted` would repeat an n-gram already in
/// `emitted`.
pub fn repeats_ngram(emitted: &[TokenId], next: TokenId, n: usize) -> bool {
    if n == 0 || emitted.len() < n {
        return false;
    }
    let tail = &emitted[emitted.len() + 1 - n..];
    emitted.windows(n).any(|w| w[n - 1] == next && w[..n - 1] == *tail)
}

/// Model plus the vocabulary and optional embeddings the strategies need.
pub struct Decoder<'a, L: LanguageModel + ?Sized> {
    lm: &'a L,
    vocab: &'a Vocabulary,
    embeddings: Option<&'a EmbeddingTable>,
}

impl<'a, L: LanguageModel + ?Sized> Decoder<'a, L> {
    pub fn new(lm: &'a L, vocab: &'a Vocabulary) -> Self {
        Decoder {
            lm,
            vocab,
            embeddings: None,
        }
    }

    pub fn with_embeddings(mut self, embeddings: &'a EmbeddingTable) -> Self {
        self.embeddings = Some(embeddings);
        self
    }

    fn validate(&self, cfg: &DecodeConfig) -> Result<()> {
        if cfg.max_length < 1 {
            return Err(Error::Parameter("max_length must be at least 1".into()));
        }
        if self.lm.vocab_size() != self.vocab.len() {
            return Err(Error::Parameter(format!(
                "model vocabulary ({}) and tokenizer vocabulary ({}) differ",
                self.lm.vocab_size(),
                self.vocab.len()
            )));
        }
        cfg.strategy.validate(self.vocab.len())?;
        if matches!(cfg.strategy, Strategy::IfdidSimi { .. }) && self.embeddings.is_none() {
            return Err(Error::Parameter("ifdid_simi needs an embedding table".into()));
        }
        Ok(())
    }

    pub fn decode(&self, cfg: &DecodeConfig) -> Result<DecodeRecord> {
        self.validate(cfg)?;
        if let Strategy::Beam {
            beam_size,
            no_repeat_ngram,
        } = cfg.strategy
        {
            return self.beam_decode(cfg, beam_size, no_repeat_ngram);
        }

        let policy = cfg.policy();
        let terminal = build_terminal_set(self.vocab, &cfg.terminal_extra);
        let mut theme = TokenSet::new();
        let mut piece_embedding = Vec::new();
        match &cfg.strategy {
            Strategy::Gamma { .. } | Strategy::Ifdid { .. } => {
                theme = build_theme_set(
                    &cfg.input_pieces,
                    ThemeMode::Verbatim,
                    None,
                    0,
                    &HashSet::new(),
                    self.vocab,
                )?;
            }
            Strategy::IfdidSimi { simi, .. } => {
                let emb = self.embeddings.expect("validated");
                let exclude: HashSet<TokenId> = terminal.iter().copied().collect();
                theme = build_theme_set(
                    &cfg.input_pieces,
                    ThemeMode::Simi,
                    Some(emb),
                    simi.top_n,
                    &exclude,
                    self.vocab,
                )?;
                let all: Vec<TokenId> = cfg
                    .input_pieces
                    .iter()
                    .flatten()
                    .copied()
                    .filter(|&t| !self.vocab.is_special(t))
                    .collect();
                piece_embedding = if all.is_empty() {
                    vec![0.0; emb.dim()]
                } else {
                    average_embedding(&all, emb)?
                };
            }
            _ => {}
        }

        let mut rng = SplitMix64::for_stream(cfg.seed, cfg.stream);
        let mut context = cfg.prompt.clone();
        let mut tokens = Vec::with_capacity(cfg.max_length);
        let mut steps = Vec::with_capacity(cfg.max_length);
        let mut termination = Termination::MaxLength;
        for _ in 0..cfg.max_length {
            let dist = suppress_specials(self.lm.next_distribution(&context)?);
            let ent = entropy(&dist);
            let (token, survivors) = match &cfg.strategy {
                Strategy::Greedy => (step_greedy(&dist), None),
                Strategy::Temperature { t } => (step_temperature(&dist, *t, &mut rng), None),
                Strategy::TopK { k } => (step_topk(&dist, *k, &mut rng), None),
                Strategy::Nucleus { p } => (step_nucleus(&dist, *p, &mut rng), None),
                Strategy::Gamma { gamma } => {
                    let sets = TypicalSets {
                        theme: theme.clone(),
                        terminal: terminal.clone(),
                        repeated: build_repeated_set(&tokens),
                    };
                    (step_gamma(&dist, &sets, gamma, &mut rng, policy)?, None)
                }
                Strategy::Ifdid { gamma, filter } => {
                    let sets = TypicalSets {
                        theme: theme.clone(),
                        terminal: terminal.clone(),
                        repeated: build_repeated_set(&tokens),
                    };
                    let (t, n) = step_ifdid(&dist, &sets, gamma, filter, &mut rng, policy, cfg.selection)?;
                    (t, Some(n))
                }
                Strategy::IfdidSimi { gamma, simi, filter } => {
                    let ctx = SimiContext {
                        theme: &theme,
                        piece_embedding: &piece_embedding,
                        embeddings: self.embeddings.expect("validated"),
                        params: simi,
                    };
                    let repeated = build_repeated_set(&tokens);
                    let (t, n) = step_ifdid_simi(
                        &dist,
                        &repeated,
                        &terminal,
                        ctx,
                        gamma,
                        filter,
                        &mut rng,
                        policy,
                        cfg.selection,
                    )?;
                    (t, Some(n))
                }
                Strategy::Beam { .. } => unreachable!(),
            };
            steps.push(diagnostics(&dist, ent, token, survivors));
            tokens.push(token);
            context.push(token);
            if token == EOS_ID {
                termination = Termination::Eos;
                break;
            }
        }
        Ok(DecodeRecord {
            tokens,
            steps,
            termination,
        })
    }

    /// Length-normalized log-probability beam search. Candidates that would
    /// repeat an n-gram of size `no_repeat_ngram` are dropped. Hypotheses
    /// ending in EOS leave the beam; the result is the best normalized score
    /// among finished and surviving hypotheses, ties to the lexicographically
    /// smallest token sequence.
    pub fn beam_decode(
        &self,
        cfg: &DecodeConfig,
        beam_size: usize,
        no_repeat_ngram: Option<usize>,
    ) -> Result<DecodeRecord> {
        #[derive(Clone)]
        struct Hyp {
            tokens: Vec<TokenId>,
            steps: Vec<StepDiagnostics>,
            logp: f64,
        }
        let mut active = vec![Hyp {
            tokens: Vec::new(),
            steps: Vec::new(),
            logp: 0.0,
        }];
        let mut finished: Vec<Hyp> = Vec::new();
        for _ in 0..cfg.max_length {
            let mut candidates: Vec<(f64, usize, TokenId, StepDiagnostics)> = Vec::new();
            for (bi, h) in active.iter().enumerate() {
                let mut context = cfg.prompt.clone();
                context.extend_from_slice(&h.tokens);
                let dist = suppress_specials(self.lm.next_distribution(&context)?);
                let ent = entropy(&dist);
                for (tok, &p) in dist.as_slice().iter().enumerate() {
                    if p <= 0.0 || no_repeat_ngram.is_some_and(|n| repeats_ngram(&h.tokens, tok, n)) {
                        continue;
                    }
                    candidates.push((h.logp + p.ln(), bi, tok, diagnostics(&dist, ent, tok, None)));
                }
            }
            candidates.sort_by(|a, b| {
                b.0.total_cmp(&a.0)
                    .then_with(|| active[a.1].tokens.cmp(&active[b.1].tokens))
                    .then(a.2.cmp(&b.2))
            });
            candidates.truncate(beam_size);
            let mut next = Vec::with_capacity(candidates.len());
            for (logp, bi, tok, diag) in candidates {
                let mut h = active[bi].clone();
                h.tokens.push(tok);
                h.steps.push(diag);
                h.logp = logp;
                if tok == EOS_ID {
                    finished.push(h);
                } else {
                    next.push(h);
                }
            }
            active = next;
            if active.is_empty() {
                break;
            }
        }
        let best = finished
            .into_iter()
            .chain(active)
            .filter(|h| !h.tokens.is_empty())
            .min_by(|a, b| {
                let sa = a.logp / a.tokens.len() as f64;
                let sb = b.logp / b.tokens.len() as f64;
                sb.total_cmp(&sa).then_with(|| a.tokens.cmp(&b.tokens))
            });
        Ok(match best {
            Some(h) => {
                let termination = if h.tokens.last() == Some(&EOS_ID) {
                    Termination::Eos
                } else {
                    Termination::MaxLength
                };
                DecodeRecord {
                    tokens: h.tokens,
                    steps: h.steps,
                    termination,
                }
            }
            // every continuation was blocked at the first step
            None => DecodeRecord {
                tokens: Vec::new(),
                steps: Vec::new(),
                termination: Termination::MaxLength,
            },
        })
    }
}
