//! The Enhance stage.
//!
//! Three per-step typical-token sets (repeated, theme, terminal) are pushed up
//! or down with the gamma transform
//!
//! ```text
//! h(γ)  = tan(πγ/2)
//! p*_T  = p_T^h · (1 − p_F)^(1 − h)
//! p*_t  = p_t · p*_T / p_T                       t ∈ T
//! p*_i  = p_i · (1 + (p_T − p*_T) / p_C)          i ∉ F ∪ T
//! ```
//!
//! where `F` holds the tokens already moved earlier in the same step and
//! `p_C` is the mass outside `F ∪ T`. γ = 0.5 is the identity, γ < 0.5 boosts
//! the set and γ > 0.5 suppresses it.
//!
//! The SIMI variant replaces the theme transform with an additive bump
//! `p_i += λ · cos(emb(I), emb(i))` over a near-synonym-expanded theme set.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::dist::{compensated_sum, ProbDist};
use crate::embeddings::{average_embedding, cosine, nearest, EmbeddingTable};
use crate::error::{Error, Result};
use crate::vocab::{Vocabulary, EOS_ID};
use crate::TokenId;

pub type TokenSet = BTreeSet<TokenId>;

/// `tan(πγ/2)`, with γ = 0.5 mapped to exactly 1.
pub fn activation(gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Parameter(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    if gamma == 0.5 {
        return Ok(1.0);
    }
    Ok((std::f64::consts::FRAC_PI_2 * gamma).tan())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaParams {
    pub topic: f64,
    pub sentence: f64,
    pub rep: f64,
}

impl GammaParams {
    pub fn new(topic: f64, sentence: f64, rep: f64) -> Result<Self> {
        let p = GammaParams { topic, sentence, rep };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for g in [self.topic, self.sentence, self.rep] {
            activation(g)?;
        }
        Ok(())
    }

    pub fn identity() -> Self {
        GammaParams {
            topic: 0.5,
            sentence: 0.5,
            rep: 0.5,
        }
    }

    /// Keyword-to-sentence setting.
    pub fn commongen() -> Self {
        GammaParams {
            topic: 0.4,
            sentence: 0.9,
            rep: 0.99,
        }
    }

    /// Story setting.
    pub fn rocstories() -> Self {
        GammaParams {
            topic: 0.4,
            sentence: 0.7,
            rep: 0.99,
        }
    }

    /// Attribute-table-to-advertisement setting.
    pub fn adgen() -> Self {
        GammaParams {
            topic: 0.4,
            sentence: 0.5,
            rep: 0.9,
        }
    }

    fn for_kind(&self, kind: SetKind) -> f64 {
        match kind {
            SetKind::Repeated => self.rep,
            SetKind::Theme => self.topic,
            SetKind::Terminal => self.sentence,
        }
    }
}

impl Default for GammaParams {
    fn default() -> Self {
        Self::commongen()
    }
}

/// Tokens whose probability is locked for the rest of the current step.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FrozenSet(TokenSet);

impl FrozenSet {
    pub fn new() -> Self {
        FrozenSet::default()
    }

    pub fn contains(&self, id: TokenId) -> bool {
        self.0.contains(&id)
    }

    pub fn ids(&self) -> &TokenSet {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromIterator<TokenId> for FrozenSet {
    fn from_iter<I: IntoIterator<Item = TokenId>>(iter: I) -> Self {
        FrozenSet(iter.into_iter().collect())
    }
}

/// How the mass taken from (or given to) the typical set is spread over the
/// remaining free tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Redistribution {
    /// Scale every free token by one common factor. Keeps the sum at one.
    #[default]
    Proportional,
    /// Add `(p_T − p*_T) / p_C` to each free token as the formula is printed,
    /// then floor at zero and renormalize the whole vector. Not
    /// mass-preserving before the renormalization and does not keep frozen
    /// entries fixed; kept for comparison only.
    LiteralAdditive,
}

pub fn gamma_transform(
    dist: &ProbDist,
    typical: &TokenSet,
    frozen: &FrozenSet,
    gamma: f64,
) -> Result<(ProbDist, FrozenSet)> {
    gamma_transform_with(dist, typical, frozen, gamma, Redistribution::Proportional)
}

pub fn gamma_transform_with(
    dist: &ProbDist,
    typical: &TokenSet,
    frozen: &FrozenSet,
    gamma: f64,
    redistribution: Redistribution,
) -> Result<(ProbDist, FrozenSet)> {
    let h = activation(gamma)?;
    let n = dist.len();
    if let Some(&t) = typical.iter().find(|&&t| t >= n) {
        return Err(Error::Parameter(format!("typical token {t} outside vocabulary of {n}")));
    }
    if let Some(&t) = typical.intersection(&frozen.0).next() {
        return Err(Error::SetOverlap(t));
    }
    let frozen_out = FrozenSet(frozen.0.union(typical).copied().collect());
    let p = dist.as_slice();

    let p_t = compensated_sum(typical.iter().map(|&t| p[t]));
    if p_t <= 0.0 || h == 1.0 {
        return Ok((dist.clone(), frozen_out));
    }
    let p_f = compensated_sum(frozen.0.iter().filter(|&&t| t < n).map(|&t| p[t]));
    let free = |i: usize| !typical.contains(&i) && !frozen.contains(i);
    let p_c = compensated_sum((0..n).filter(|&i| free(i)).map(|i| p[i]));

    // p*_T <= 1 - p_F holds exactly; the floor and min only remove rounding
    let room = (1.0 - p_f).max(0.0);
    let p_t_star = (h * p_t.ln() + (1.0 - h) * room.ln()).exp().min(room);
    if p_c <= 0.0 {
        // nowhere to move mass to or from
        return Ok((dist.clone(), frozen_out));
    }
    let t_scale = p_t_star / p_t;

    let out = match redistribution {
        Redistribution::Proportional => {
            let c_scale = (1.0 + (p_t - p_t_star) / p_c).max(0.0);
            let probs = (0..n)
                .map(|i| {
                    if frozen.contains(i) {
                        p[i]
                    } else if typical.contains(&i) {
                        (p[i] * t_scale).min(1.0)
                    } else {
                        (p[i] * c_scale).min(1.0)
                    }
                })
                .collect();
            ProbDist::from_vec_unchecked(probs)
        }
        Redistribution::LiteralAdditive => {
            let shift = (p_t - p_t_star) / p_c;
            let weights: Vec<f64> = (0..n)
                .map(|i| {
                    if frozen.contains(i) {
                        p[i]
                    } else if typical.contains(&i) {
                        p[i] * t_scale
                    } else {
                        (p[i] + shift).max(0.0)
                    }
                })
                .collect();
            ProbDist::normalize(&weights)?
        }
    };
    Ok((out, frozen_out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetKind {
    Repeated,
    Theme,
    Terminal,
}

pub const DEFAULT_SET_ORDER: [SetKind; 3] = [SetKind::Repeated, SetKind::Theme, SetKind::Terminal];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TypicalSets {
    pub theme: TokenSet,
    pub terminal: TokenSet,
    pub repeated: TokenSet,
}

impl TypicalSets {
    pub fn get(&self, kind: SetKind) -> &TokenSet {
        match kind {
            SetKind::Repeated => &self.repeated,
            SetKind::Theme => &self.theme,
            SetKind::Terminal => &self.terminal,
        }
    }
}

/// Applies the gamma transform to each set in turn, repeated first, then
/// theme, then terminal. Ids moved by an earlier pass are frozen and pruned
/// from later sets.
pub fn enhance_step(dist: &ProbDist, sets: &TypicalSets, params: &GammaParams) -> Result<ProbDist> {
    enhance_step_ordered(dist, sets, params, &DEFAULT_SET_ORDER)
}

pub fn enhance_step_ordered(
    dist: &ProbDist,
    sets: &TypicalSets,
    params: &GammaParams,
    order: &[SetKind],
) -> Result<ProbDist> {
    let mut current = dist.clone();
    let mut frozen = FrozenSet::new();
    for &kind in order {
        let typical: TokenSet = sets.get(kind).difference(&frozen.0).copied().collect();
        let (next, f) = gamma_transform(&current, &typical, &frozen, params.for_kind(kind))?;
        current = next;
        frozen = f;
    }
    Ok(current)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThemeMode {
    #[default]
    Verbatim,
    Simi,
}

/// Theme tokens for a prompt. Verbatim: every token of every input piece.
/// Simi: additionally, for each piece, the `top_n` tokens nearest to the
/// piece's mean embedding, skipping `exclude`, the pieces' own tokens and
/// tokens with a zero vector. Special tokens are never theme tokens.
pub fn build_theme_set(
    pieces: &[Vec<TokenId>],
    mode: ThemeMode,
    emb: Option<&EmbeddingTable>,
    top_n: usize,
    exclude: &HashSet<TokenId>,
    vocab: &Vocabulary,
) -> Result<TokenSet> {
    let mut theme: TokenSet = pieces
        .iter()
        .flatten()
        .copied()
        .filter(|&t| !vocab.is_special(t))
        .collect();
    if mode == ThemeMode::Verbatim {
        return Ok(theme);
    }
    let emb = emb.ok_or_else(|| Error::Parameter("similarity theme mode needs embeddings".into()))?;
    let mut skip: HashSet<TokenId> = exclude.clone();
    skip.extend(pieces.iter().flatten().copied());
    skip.extend((0..vocab.len()).filter(|&t| vocab.is_special(t)));
    skip.extend(emb.zero_rows().iter().copied());
    for piece in pieces.iter().filter(|p| !p.is_empty()) {
        let query = average_embedding(piece, emb)?;
        theme.extend(nearest(emb, &query, top_n, &skip)?.into_iter().map(|(t, _)| t));
    }
    Ok(theme)
}

pub const TERMINAL_PUNCTUATION: [&str; 3] = [".", "!", "?"];

/// `.`, `!`, `?` when present, EOS, and any configured extras.
pub fn build_terminal_set<S: AsRef<str>>(vocab: &Vocabulary, extra: &[S]) -> TokenSet {
    let mut set: TokenSet = TERMINAL_PUNCTUATION
        .iter()
        .copied()
        .chain(extra.iter().map(AsRef::as_ref))
        .filter_map(|t| vocab.id(t))
        .collect();
    set.insert(EOS_ID);
    set
}

pub fn build_repeated_set(emitted: &[TokenId]) -> TokenSet {
    emitted.iter().copied().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimiParams {
    pub lambda: f64,
    pub top_n: usize,
}

impl SimiParams {
    pub fn new(lambda: f64, top_n: usize) -> Result<Self> {
        let p = SimiParams { lambda, top_n };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Parameter(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.top_n == 0 {
            return Err(Error::Parameter("top_n must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for SimiParams {
    fn default() -> Self {
        SimiParams {
            lambda: 0.0005,
            top_n: 350,
        }
    }
}

/// Additive similarity bump over the theme set, then renormalization.
pub fn simi_enhance(
    dist: &ProbDist,
    theme: &TokenSet,
    piece_embedding: &[f64],
    emb: &EmbeddingTable,
    params: &SimiParams,
) -> Result<ProbDist> {
    Ok(simi_enhance_frozen(dist, theme, piece_embedding, emb, params, &FrozenSet::new())?.0)
}

/// As [`simi_enhance`], leaving `frozen` entries untouched: frozen theme
/// members get no bump and only the unfrozen entries are rescaled, back to
/// their combined pre-bump mass. Bumped values below zero are floored.
pub fn simi_enhance_frozen(
    dist: &ProbDist,
    theme: &TokenSet,
    piece_embedding: &[f64],
    emb: &EmbeddingTable,
    params: &SimiParams,
    frozen: &FrozenSet,
) -> Result<(ProbDist, FrozenSet)> {
    params.validate()?;
    let n = dist.len();
    let p = dist.as_slice();
    let targets: TokenSet = theme.difference(&frozen.0).copied().collect();
    let frozen_out = FrozenSet(frozen.0.union(&targets).copied().collect());
    if targets.is_empty() || params.lambda == 0.0 {
        return Ok((dist.clone(), frozen_out));
    }
    let mut weights = p.to_vec();
    for &t in &targets {
        let v = emb
            .vector(t)
            .ok_or_else(|| Error::Parameter(format!("token {t} has no embedding")))?;
        if t >= n {
            return Err(Error::Parameter(format!("theme token {t} outside vocabulary of {n}")));
        }
        weights[t] = (p[t] + params.lambda * cosine(piece_embedding, v)?).max(0.0);
    }
    let p_f = compensated_sum(frozen.0.iter().filter(|&&t| t < n).map(|&t| p[t]));
    let free_after = compensated_sum((0..n).filter(|&i| !frozen.contains(i)).map(|i| weights[i]));
    if free_after <= 0.0 {
        return Ok((dist.clone(), frozen_out));
    }
    let scale = (1.0 - p_f).max(0.0) / free_after;
    let probs: Vec<f64> = (0..n)
        .map(|i| {
            if frozen.contains(i) {
                p[i]
            } else {
                (weights[i] * scale).min(1.0)
            }
        })
        .collect();
    let out = if frozen.is_empty() {
        ProbDist::normalize(&weights)?
    } else {
        ProbDist::from_vec_unchecked(probs)
    };
    Ok((out, frozen_out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::TokenizeMode;
    use proptest::prelude::*;

    fn d(v: &[f64]) -> ProbDist {
        ProbDist::new(v.to_vec()).unwrap()
    }

    fn set(ids: &[TokenId]) -> TokenSet {
        ids.iter().copied().collect()
    }

    #[test]
    fn published_presets() {
        let t = |g: GammaParams| (g.topic, g.sentence, g.rep);
        assert_eq!(t(GammaParams::commongen()), (0.4, 0.9, 0.99));
        assert_eq!(t(GammaParams::rocstories()), (0.4, 0.7, 0.99));
        assert_eq!(t(GammaParams::adgen()), (0.4, 0.5, 0.9));
        let simi = SimiParams::default();
        assert_eq!((simi.lambda, simi.top_n), (0.0005, 350));
    }

    /// Frozen entries whose sum rounds to just above one.
    fn overfull() -> ProbDist {
        d(&[0.1, 0.2, 0.7000000000000002, 1e-17, 1e-17])
    }

    #[test]
    fn gamma_with_overfull_frozen_mass_stays_nonnegative() {
        let frozen: FrozenSet = [0, 1, 2].into_iter().collect();
        for g in [0.1, 0.9] {
            let (q, _) = gamma_transform(&overfull(), &set(&[3]), &frozen, g).unwrap();
            assert!(q.as_slice().iter().all(|&x| x >= 0.0), "{q:?}");
        }
    }

    #[test]
    fn simi_with_overfull_frozen_mass_stays_nonnegative() {
        let frozen: FrozenSet = [0, 1, 2].into_iter().collect();
        let emb = EmbeddingTable::new(vec![vec![1.0]; 5]).unwrap();
        let params = SimiParams::new(0.5, 1).unwrap();
        let (q, _) = simi_enhance_frozen(&overfull(), &set(&[3]), &[1.0], &emb, &params, &frozen).unwrap();
        assert!(q.as_slice().iter().all(|&x| x >= 0.0), "{q:?}");
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn activation_values() {
        assert_eq!(activation(0.5).unwrap(), 1.0);
        assert!((activation(0.25).unwrap() - 0.414214).abs() < 1e-6);
        assert!((activation(0.99).unwrap() - 63.657).abs() < 0.01);
        assert!(activation(0.0).is_err());
        assert!(activation(1.0).is_err());
        assert!(activation(0.3).unwrap() < activation(0.31).unwrap());
    }

    #[test]
    fn identity_at_half() {
        let p = d(&[0.4, 0.3, 0.2, 0.1]);
        let (out, f) = gamma_transform(&p, &set(&[0, 2]), &FrozenSet::new(), 0.5).unwrap();
        assert_eq!(out, p);
        assert_eq!(f.ids(), &set(&[0, 2]));
    }

    #[test]
    fn boost_single_token() {
        let p = d(&[0.4, 0.3, 0.2, 0.1]);
        let (out, _) = gamma_transform(&p, &set(&[0]), &FrozenSet::new(), 0.25).unwrap();
        assert!(close(out.as_slice(), &[0.68424, 0.15788, 0.10525, 0.05263], 1e-4));
        // exact values from 0.4^tan(π/8) and the common rescale of the rest
        assert!(close(
            out.as_slice(),
            &[
                0.684176024833911,
                0.157911987583044,
                0.105274658388696,
                0.052637329194348
            ],
            1e-12
        ));
    }

    #[test]
    fn boost_with_frozen_token() {
        let p = d(&[0.4, 0.3, 0.2, 0.1]);
        let frozen: FrozenSet = [0].into_iter().collect();
        let (out, f) = gamma_transform(&p, &set(&[1]), &frozen, 0.25).unwrap();
        assert_eq!(out.prob(0), 0.4);
        assert!(close(
            out.as_slice(),
            &[0.4, 0.450257072695778, 0.099828618202815, 0.049914309101407],
            1e-12
        ));
        assert_eq!(f.ids(), &set(&[0, 1]));
    }

    #[test]
    fn overlap_and_degenerate_cases() {
        let p = d(&[0.5, 0.5, 0.0]);
        let frozen: FrozenSet = [0].into_iter().collect();
        assert!(matches!(
            gamma_transform(&p, &set(&[0]), &frozen, 0.3),
            Err(Error::SetOverlap(0))
        ));
        let (out, f) = gamma_transform(&p, &set(&[2]), &frozen, 0.3).unwrap();
        assert_eq!(out, p);
        assert_eq!(f.ids(), &set(&[0, 2]));
        // no free mass left to trade with
        let (out, _) = gamma_transform(&p, &set(&[1, 2]), &frozen, 0.9).unwrap();
        assert_eq!(out, p);
        assert!(gamma_transform(&p, &set(&[7]), &FrozenSet::new(), 0.3).is_err());
    }

    #[test]
    fn literal_additive_differs_but_stays_valid() {
        let p = d(&[0.4, 0.3, 0.2, 0.1]);
        let (lit, _) =
            gamma_transform_with(&p, &set(&[0]), &FrozenSet::new(), 0.25, Redistribution::LiteralAdditive).unwrap();
        let (prop, _) = gamma_transform(&p, &set(&[0]), &FrozenSet::new(), 0.25).unwrap();
        assert!(!close(lit.as_slice(), prop.as_slice(), 1e-3));
        assert!(ProbDist::new(lit.into_vec()).is_ok());
    }

    #[test]
    fn enhance_identity_and_freeze() {
        let p = d(&[0.4, 0.3, 0.2, 0.1]);
        let sets = TypicalSets {
            theme: set(&[0, 1]),
            terminal: set(&[3]),
            repeated: set(&[1]),
        };
        assert_eq!(enhance_step(&p, &sets, &GammaParams::identity()).unwrap(), p);

        // token 1 is moved by the repeated pass only
        let params = GammaParams::new(0.3, 0.5, 0.7).unwrap();
        let out = enhance_step(&p, &sets, &params).unwrap();
        let (after_rep, f) = gamma_transform(&p, &set(&[1]), &FrozenSet::new(), 0.7).unwrap();
        let (after_theme, _) = gamma_transform(&after_rep, &set(&[0]), &f, 0.3).unwrap();
        assert_eq!(out, after_theme);
        assert_eq!(out.prob(1), after_rep.prob(1));
    }

    #[test]
    fn repeated_token_collapses() {
        let p = d(&[0.4, 0.3, 0.2, 0.1]);
        let sets = TypicalSets {
            repeated: set(&[0]),
            ..Default::default()
        };
        let params = GammaParams::new(0.5, 0.5, 0.99).unwrap();
        let out = enhance_step(&p, &sets, &params).unwrap();
        assert!(out.prob(0) < 1e-3);
        let rest = &out.as_slice()[1..];
        assert!(close(&[rest[0] / rest[2], rest[1] / rest[2]], &[3.0, 2.0], 1e-9));
    }

    fn vocab() -> Vocabulary {
        Vocabulary::from_tokens(["climb", "ascend", "scale", "wall", ".", "sit", "!"]).unwrap()
    }

    fn table() -> EmbeddingTable {
        EmbeddingTable::new(vec![
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![1.0, 0.0],  // climb
            vec![0.95, 0.1], // ascend
            vec![0.9, 0.2],  // scale
            vec![0.0, 1.0],  // wall
            vec![1.0, 0.01], // .
            vec![-1.0, 0.0], // sit
            vec![0.5, 0.5],  // !
        ])
        .unwrap()
    }

    #[test]
    fn theme_sets() {
        let v = vocab();
        let (climb, wall) = (v.id("climb").unwrap(), v.id("wall").unwrap());
        let verbatim = build_theme_set(
            &[vec![climb], vec![wall]],
            ThemeMode::Verbatim,
            None,
            0,
            &HashSet::new(),
            &v,
        )
        .unwrap();
        assert_eq!(verbatim, set(&[climb, wall]));

        let terminal: HashSet<TokenId> = build_terminal_set::<&str>(&v, &[]).into_iter().collect();
        let simi = build_theme_set(&[vec![climb]], ThemeMode::Simi, Some(&table()), 2, &terminal, &v).unwrap();
        assert_eq!(simi, set(&[climb, v.id("ascend").unwrap(), v.id("scale").unwrap()]));
        assert!(build_theme_set(&[vec![climb]], ThemeMode::Simi, None, 2, &terminal, &v).is_err());
    }

    #[test]
    fn multi_token_piece_uses_mean() {
        let v = vocab();
        let t = table();
        let piece = vec![v.id("climb").unwrap(), v.id("wall").unwrap()];
        let mean = average_embedding(&piece, &t).unwrap();
        assert_eq!(mean, vec![0.5, 0.5]);
        let got = build_theme_set(
            std::slice::from_ref(&piece),
            ThemeMode::Simi,
            Some(&t),
            1,
            &HashSet::new(),
            &v,
        )
        .unwrap();
        // `!` sits exactly on the mean
        assert!(got.contains(&v.id("!").unwrap()));
    }

    #[test]
    fn terminal_sets() {
        let v = vocab();
        assert_eq!(
            build_terminal_set::<&str>(&v, &[]),
            set(&[EOS_ID, v.id(".").unwrap(), v.id("!").unwrap()])
        );
        let bare = Vocabulary::build(&["a b"], TokenizeMode::Whitespace, 1).unwrap();
        assert_eq!(build_terminal_set::<&str>(&bare, &[]), set(&[EOS_ID]));
        let zh = Vocabulary::build(&["好。"], TokenizeMode::Char, 1).unwrap();
        assert!(build_terminal_set(&zh, &["。"]).contains(&zh.id("。").unwrap()));
    }

    #[test]
    fn repeated_sets() {
        assert!(build_repeated_set(&[]).is_empty());
        assert_eq!(build_repeated_set(&[5, 5, 7]), set(&[5, 7]));
        assert_eq!(build_repeated_set(&[1, 2, 3, 4]).len(), 4);
    }

    #[test]
    fn simi_examples() {
        let emb = EmbeddingTable::new(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap();
        let u = ProbDist::uniform(4).unwrap();
        let piece = [1.0, 0.0];
        let out = simi_enhance(&u, &set(&[0]), &piece, &emb, &SimiParams::new(0.1, 1).unwrap()).unwrap();
        assert!(close(out.as_slice(), &[0.31818, 0.22727, 0.22727, 0.22727], 1e-5));

        let same = simi_enhance(&u, &set(&[0]), &piece, &emb, &SimiParams::new(0.0, 1).unwrap()).unwrap();
        assert_eq!(same, u);
        let tiny = simi_enhance(&u, &set(&[0]), &piece, &emb, &SimiParams::new(1e-12, 1).unwrap()).unwrap();
        assert!(close(tiny.as_slice(), u.as_slice(), 1e-9));

        let floored = simi_enhance(&u, &set(&[3]), &piece, &emb, &SimiParams::new(0.6, 1).unwrap()).unwrap();
        assert_eq!(floored.prob(3), 0.0);
        assert!(close(&floored.as_slice()[..3], &[1.0 / 3.0; 3], 1e-12));
    }

    #[test]
    fn simi_respects_frozen() {
        let emb = EmbeddingTable::new(vec![vec![1.0, 0.0]; 4]).unwrap();
        let p = d(&[0.4, 0.3, 0.2, 0.1]);
        let frozen: FrozenSet = [1].into_iter().collect();
        let (out, f) = simi_enhance_frozen(
            &p,
            &set(&[0, 1]),
            &[1.0, 0.0],
            &emb,
            &SimiParams::new(0.1, 1).unwrap(),
            &frozen,
        )
        .unwrap();
        assert_eq!(out.prob(1), 0.3);
        assert_eq!(f.ids(), &set(&[0, 1]));
        assert!(close(
            out.as_slice(),
            &[0.5 * 0.7 / 0.8, 0.3, 0.2 * 0.7 / 0.8, 0.1 * 0.7 / 0.8],
            1e-12
        ));
    }

    fn dist_strategy() -> impl Strategy<Value = ProbDist> {
        prop::collection::vec(prop_oneof![Just(0.0), 1e-9..1.0f64], 2..12)
            .prop_filter("positive mass", |w| w.iter().any(|x| *x > 0.0))
            .prop_map(|w| ProbDist::normalize(&w).unwrap())
    }

    proptest! {
        #[test]
        fn gamma_invariants(
            p in dist_strategy(),
            mask in prop::collection::vec(0u8..3, 12),
            gamma in 0.01..0.99f64,
        ) {
            let n = p.len();
            let typical: TokenSet = (0..n).filter(|&i| mask[i] == 1).collect();
            let frozen: FrozenSet = (0..n).filter(|&i| mask[i] == 2).collect();
            let (out, f) = gamma_transform(&p, &typical, &frozen, gamma).unwrap();
            let sum = compensated_sum(out.as_slice().iter().copied());
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(out.as_slice().iter().all(|x| (0.0..=1.0).contains(x)));
            for &i in frozen.ids() {
                prop_assert_eq!(out.prob(i).to_bits(), p.prob(i).to_bits());
            }
            prop_assert_eq!(f.len(), typical.len() + frozen.len());

            let p_t: f64 = typical.iter().map(|&i| p.prob(i)).sum();
            let q_t: f64 = typical.iter().map(|&i| out.prob(i)).sum();
            if frozen.is_empty() && p_t > 0.0 && p_t < 1.0 {
                if gamma < 0.5 { prop_assert!(q_t >= p_t - 1e-12); }
                if gamma > 0.5 { prop_assert!(q_t <= p_t + 1e-12); }
            }

            // one factor per group
            for group in [typical.iter().copied().collect::<Vec<_>>(),
                          (0..n).filter(|i| !typical.contains(i) && !frozen.contains(*i)).collect()] {
                let live: Vec<usize> = group.into_iter().filter(|&i| p.prob(i) > 1e-6).collect();
                if let Some(&first) = live.first() {
                    let ratio = out.prob(first) / p.prob(first);
                    for &i in &live {
                        let r = out.prob(i) / p.prob(i);
                        prop_assert!((r - ratio).abs() <= 1e-9 * ratio.max(1e-300));
                    }
                }
            }
        }

        #[test]
        fn enhance_identity(p in dist_strategy(), mask in prop::collection::vec(0u8..4, 12)) {
            let n = p.len();
            let sets = TypicalSets {
                theme: (0..n).filter(|&i| mask[i] == 1).collect(),
                terminal: (0..n).filter(|&i| mask[i] == 2).collect(),
                repeated: (0..n).filter(|&i| mask[i] >= 2).collect(),
            };
            let out = enhance_step(&p, &sets, &GammaParams::identity()).unwrap();
            prop_assert!(close(out.as_slice(), p.as_slice(), 1e-12));
        }

        #[test]
        fn simi_sums_to_one(p in dist_strategy(), lambda in 0.0..2.0f64, seed in 0u64..1000) {
            let n = p.len();
            let vectors: Vec<Vec<f64>> = (0..n).map(|i| {
                let x = ((i as u64 * 7 + seed) % 13) as f64 - 6.0;
                vec![x, 1.0 - x.abs() / 6.0]
            }).collect();
            let emb = EmbeddingTable::new(vectors).unwrap();
            let theme: TokenSet = (0..n).step_by(2).collect();
            let out = simi_enhance(&p, &theme, &[1.0, -0.5], &emb, &SimiParams { lambda, top_n: 1 });
            if let Ok(out) = out {
                let sum = compensated_sum(out.as_slice().iter().copied());
                prop_assert!((sum - 1.0).abs() < 1e-9);
            }
        }
    }
}
