//! Diversity, repetition, faithfulness and fluency metrics over token
//! sequences.
//!
//! All functions are generic over the token type so they work on ids and on
//! strings alike.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::hash::Hash;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dist::compensated_sum;
use crate::error::{Error, Result};
use crate::lm::LanguageModel;
use crate::TokenId;

fn ngrams<T>(text: &[T], n: usize) -> impl Iterator<Item = &[T]> {
    // windows(0) panics; n == 0 is rejected by callers anyway
    text.windows(n.max(1)).filter(move |_| n > 0)
}

fn ngram_counts<T: Hash + Eq>(text: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    for g in ngrams(text, n) {
        *counts.entry(g).or_insert(0) += 1;
    }
    counts
}

/// Distinct n-grams over total n-grams across the whole corpus; 0 when the
/// corpus has no n-grams.
pub fn dist_n<T: Hash + Eq, S: AsRef<[T]>>(texts: &[S], n: usize) -> f64 {
    let mut seen = HashSet::new();
    let mut total = 0usize;
    for text in texts {
        for g in ngrams(text.as_ref(), n) {
            seen.insert(g);
            total += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        seen.len() as f64 / total as f64
    }
}

/// Number of distinct n-grams across the corpus.
pub fn uniq_n<T: Hash + Eq, S: AsRef<[T]>>(texts: &[S], n: usize) -> usize {
    texts
        .iter()
        .flat_map(|t| ngrams(t.as_ref(), n))
        .collect::<HashSet<_>>()
        .len()
}

/// Fraction of duplicate n-grams within one text; 0 when it has fewer than
/// `n` tokens.
pub fn rep_n<T: Hash + Eq>(text: &[T], n: usize) -> f64 {
    if n == 0 || text.len() < n {
        return 0.0;
    }
    1.0 - dist_n(&[text], n)
}

/// Sentence BLEU with uniform weights up to `max_n` and the brevity penalty
/// against the closest reference length (ties to the shorter reference).
///
/// A zero unigram precision gives 0. A zero precision at `n >= 2` is
/// smoothed to `1 / (total + 1)`.
pub fn bleu_n<T: Hash + Eq, S: AsRef<[T]>>(hypothesis: &[T], references: &[S], max_n: usize) -> f64 {
    if hypothesis.is_empty() || references.is_empty() || max_n == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let hyp = ngram_counts(hypothesis, n);
        let mut max_ref: HashMap<&[T], usize> = HashMap::new();
        for r in references {
            for (g, c) in ngram_counts(r.as_ref(), n) {
                let slot = max_ref.entry(g).or_insert(0);
                *slot = (*slot).max(c);
            }
        }
        let total: usize = hyp.values().sum();
        let matched: usize = hyp
            .iter()
            .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
        let precision = if matched > 0 {
            matched as f64 / total as f64
        } else if n == 1 {
            return 0.0;
        } else {
            1.0 / (total as f64 + 1.0)
        };
        log_sum += precision.ln();
    }
    let c = hypothesis.len();
    let r = references
        .iter()
        .map(|r| r.as_ref().len())
        .min_by_key(|&len| (len.abs_diff(c), len))
        .expect("nonempty references");
    let bp = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * (log_sum / max_n as f64).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    fn from_counts(hits: usize, hyp_total: usize, ref_total: usize) -> Self {
        let precision = if hyp_total == 0 {
            0.0
        } else {
            hits as f64 / hyp_total as f64
        };
        let recall = if ref_total == 0 {
            0.0
        } else {
            hits as f64 / ref_total as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        RougeScore { precision, recall, f1 }
    }
}

pub fn rouge_n<T: Hash + Eq>(hypothesis: &[T], reference: &[T], n: usize) -> RougeScore {
    let hyp = ngram_counts(hypothesis, n);
    let reference = ngram_counts(reference, n);
    let hits = hyp
        .iter()
        .map(|(g, &c)| c.min(reference.get(g).copied().unwrap_or(0)))
        .sum();
    RougeScore::from_counts(hits, hyp.values().sum(), reference.values().sum())
}

/// Positions in `a` of one longest common subsequence with `b`.
fn lcs_positions<T: Eq>(a: &[T], b: &[T]) -> Vec<usize> {
    let (m, n) = (a.len(), b.len());
    let mut table = vec![0u32; (m + 1) * (n + 1)];
    let at = |i: usize, j: usize| i * (n + 1) + j;
    for i in 1..=m {
        for j in 1..=n {
            table[at(i, j)] = if a[i - 1] == b[j - 1] {
                table[at(i - 1, j - 1)] + 1
            } else {
                table[at(i - 1, j)].max(table[at(i, j - 1)])
            };
        }
    }
    let (mut i, mut j) = (m, n);
    let mut out = Vec::with_capacity(table[at(m, n)] as usize);
    while i > 0 && j > 0 {
        if a[i - 1] == b[j - 1] {
            out.push(i - 1);
            i -= 1;
            j -= 1;
        } else if table[at(i - 1, j)] >= table[at(i, j - 1)] {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    out.reverse();
    out
}

pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    lcs_positions(a, b).len()
}

/// Whole-text LCS statistics.
pub fn rouge_l<T: Eq>(hypothesis: &[T], reference: &[T]) -> RougeScore {
    RougeScore::from_counts(lcs_len(hypothesis, reference), hypothesis.len(), reference.len())
}

/// Summary-level LCS: for every reference sentence, the union of its LCS
/// hits against each hypothesis sentence.
pub fn rouge_l_union<T: Eq, S: AsRef<[T]>>(hypothesis: &[S], reference: &[S]) -> RougeScore {
    let mut hits = 0;
    for r in reference {
        let r = r.as_ref();
        let mut union = HashSet::new();
        for h in hypothesis {
            union.extend(lcs_positions(r, h.as_ref()));
        }
        hits += union.len();
    }
    let hyp_total = hypothesis.iter().map(|h| h.as_ref().len()).sum();
    let ref_total = reference.iter().map(|r| r.as_ref().len()).sum();
    RougeScore::from_counts(hits, hyp_total, ref_total)
}

/// Fraction of nonempty input pieces that occur as a contiguous run in the
/// hypothesis. With no pieces there is nothing to miss and the result is 1.
pub fn coverage<T: Eq, S: AsRef<[T]>>(hypothesis: &[T], pieces: &[S]) -> f64 {
    let pieces: Vec<&[T]> = pieces.iter().map(AsRef::as_ref).filter(|p| !p.is_empty()).collect();
    if pieces.is_empty() {
        return 1.0;
    }
    let found = pieces
        .iter()
        .filter(|p| hypothesis.windows(p.len()).any(|w| w == **p))
        .count();
    found as f64 / pieces.len() as f64
}

/// Log probability of `tokens` given `prefix`, summed over `tokens` only.
pub fn conditional_logprob<L: LanguageModel + ?Sized>(lm: &L, prefix: &[TokenId], tokens: &[TokenId]) -> Result<f64> {
    let mut context = prefix.to_vec();
    let mut steps = Vec::with_capacity(tokens.len());
    for &t in tokens {
        steps.push(lm.next_distribution(&context)?.prob(t).ln());
        context.push(t);
    }
    Ok(compensated_sum(steps))
}

/// `exp(-total log-likelihood / total tokens)` over `(prefix, scored)` pairs.
/// Only the scored tokens count.
pub fn perplexity<L, P, S>(lm: &L, texts: &[(P, S)]) -> Result<f64>
where
    L: LanguageModel + ?Sized,
    P: AsRef<[TokenId]>,
    S: AsRef<[TokenId]>,
{
    let mut parts = Vec::with_capacity(texts.len());
    let mut count = 0usize;
    for (prefix, scored) in texts {
        parts.push(conditional_logprob(lm, prefix.as_ref(), scored.as_ref())?);
        count += scored.as_ref().len();
    }
    if count == 0 {
        return Err(Error::Parameter("perplexity needs at least one scored token".into()));
    }
    Ok((-compensated_sum(parts) / count as f64).exp())
}

/// One selectable metric column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Dist(usize),
    Uniq(usize),
    Rep(usize),
    Bleu(usize),
    Rouge(usize),
    RougeL,
    Ppl,
    Coverage,
}

impl Metric {
    pub fn higher_is_better(self) -> bool {
        !matches!(self, Metric::Rep(_) | Metric::Ppl)
    }

    pub fn needs_references(self) -> bool {
        matches!(self, Metric::Bleu(_) | Metric::Rouge(_) | Metric::RougeL)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Dist(n) => write!(f, "dist{n}"),
            Metric::Uniq(n) => write!(f, "uniq{n}"),
            Metric::Rep(n) => write!(f, "rep{n}"),
            Metric::Bleu(n) => write!(f, "bleu{n}"),
            Metric::Rouge(n) => write!(f, "rouge{n}"),
            Metric::RougeL => f.write_str("rougeL"),
            Metric::Ppl => f.write_str("ppl"),
            Metric::Coverage => f.write_str("coverage"),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rougeL" => return Ok(Metric::RougeL),
            "ppl" => return Ok(Metric::Ppl),
            "coverage" => return Ok(Metric::Coverage),
            _ => {}
        }
        let split = s.find(|c: char| c.is_ascii_digit()).unwrap_or(s.len());
        let (name, digits) = s.split_at(split);
        let n: usize = digits
            .parse()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| Error::Config(format!("unknown metric {s:?}")))?;
        match name {
            "dist" => Ok(Metric::Dist(n)),
            "uniq" => Ok(Metric::Uniq(n)),
            "rep" => Ok(Metric::Rep(n)),
            "bleu" => Ok(Metric::Bleu(n)),
            "rouge" => Ok(Metric::Rouge(n)),
            _ => Err(Error::Config(format!("unknown metric {s:?}"))),
        }
    }
}

impl Serialize for Metric {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Metric {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub const DEFAULT_METRICS: [Metric; 9] = [
    Metric::Dist(2),
    Metric::Uniq(2),
    Metric::Rep(2),
    Metric::Bleu(2),
    Metric::Rouge(1),
    Metric::Rouge(2),
    Metric::RougeL,
    Metric::Ppl,
    Metric::Coverage,
];

/// One generated text with what it is scored against.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sample {
    /// Generated content, without a trailing EOS.
    pub hypothesis: Vec<TokenId>,
    /// Everything the model emitted, scored for perplexity.
    pub emitted: Vec<TokenId>,
    /// Conditioning context preceding `emitted`.
    pub prefix: Vec<TokenId>,
    pub references: Vec<Vec<TokenId>>,
    pub pieces: Vec<Vec<TokenId>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub samples: usize,
    /// Corpus-level values. Dist and Uniq pool all n-grams; per-text metrics
    /// are averaged; perplexity pools all scored tokens.
    pub corpus: BTreeMap<String, f64>,
    /// Per-text values of the per-text metrics, in sample order.
    pub per_sample: Vec<BTreeMap<String, f64>>,
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        compensated_sum(values.iter().copied()) / values.len() as f64
    }
}

fn per_text(metric: Metric, s: &Sample) -> Option<f64> {
    let h = &s.hypothesis;
    match metric {
        Metric::Rep(n) => Some(rep_n(h, n)),
        Metric::Coverage => Some(coverage(h, &s.pieces)),
        _ if metric.needs_references() && s.references.is_empty() => None,
        Metric::Bleu(n) => Some(bleu_n(h, &s.references, n)),
        Metric::Rouge(n) => s.references.iter().map(|r| rouge_n(h, r, n).f1).reduce(f64::max),
        Metric::RougeL => s.references.iter().map(|r| rouge_l(h, r).f1).reduce(f64::max),
        Metric::Dist(_) | Metric::Uniq(_) | Metric::Ppl => None,
    }
}

/// Scores `samples` on every metric in `metrics`. `lm` is required only when
/// perplexity is selected. Reference-based metrics skip samples without
/// references and are omitted when no sample has one.
pub fn evaluate<L: LanguageModel + ?Sized>(
    samples: &[Sample],
    metrics: &[Metric],
    lm: Option<&L>,
) -> Result<MetricReport> {
    let texts: Vec<&[TokenId]> = samples.iter().map(|s| s.hypothesis.as_slice()).collect();
    let mut corpus = BTreeMap::new();
    let mut per_sample = vec![BTreeMap::new(); samples.len()];
    for &m in metrics {
        let key = m.to_string();
        match m {
            Metric::Dist(n) => {
                corpus.insert(key, dist_n(&texts, n));
            }
            Metric::Uniq(n) => {
                corpus.insert(key, uniq_n(&texts, n) as f64);
            }
            Metric::Ppl => {
                let lm = lm.ok_or_else(|| Error::Config("perplexity needs a scoring model".into()))?;
                let pairs: Vec<(&[TokenId], &[TokenId])> = samples
                    .iter()
                    .filter(|s| !s.emitted.is_empty())
                    .map(|s| (s.prefix.as_slice(), s.emitted.as_slice()))
                    .collect();
                if !pairs.is_empty() {
                    corpus.insert(key, perplexity(lm, &pairs)?);
                }
            }
            _ => {
                let mut values = Vec::new();
                for (s, row) in samples.iter().zip(per_sample.iter_mut()) {
                    if let Some(v) = per_text(m, s) {
                        row.insert(key.clone(), v);
                        values.push(v);
                    }
                }
                if !values.is_empty() {
                    corpus.insert(key, mean(&values));
                }
            }
        }
    }
    Ok(MetricReport {
        samples: samples.len(),
        corpus,
        per_sample,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::ProbDist;
    use proptest::prelude::*;

    fn w(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-6
    }

    #[test]
    fn distinct_and_unique() {
        assert!(close(dist_n(&[w("a b a b")], 2), 2.0 / 3.0));
        assert_eq!(dist_n(&[w("a b c d")], 2), 1.0);
        assert!(close(dist_n(&[w("a a a a a")], 2), 1.0 / 4.0));
        assert_eq!(dist_n::<&str, Vec<&str>>(&[], 2), 0.0);
        assert_eq!(dist_n(&[w("a")], 2), 0.0);
        assert_eq!(uniq_n(&[w("a b a b")], 2), 2);
        assert_eq!(uniq_n::<&str, Vec<&str>>(&[], 2), 0);
        assert_eq!(uniq_n(&[w("a b a"), w("c d c")], 2), 4);
    }

    #[test]
    fn repetition() {
        assert!(close(rep_n(&w("a b a b"), 2), 1.0 / 3.0));
        assert_eq!(rep_n(&w("a b c"), 2), 0.0);
        assert!(close(rep_n(&w("a a a a"), 2), 2.0 / 3.0));
        assert_eq!(rep_n(&w("a"), 2), 0.0);
    }

    #[test]
    fn bleu_fixtures() {
        let x = w("a b c");
        assert!(close(bleu_n(&x, std::slice::from_ref(&x), 4), 1.0));
        let got = bleu_n(&w("a b c"), &[w("a b d")], 2);
        assert!(close(got, (1.0f64 / 3.0).sqrt()), "{got}");
        assert_eq!(bleu_n(&w("x y"), &[w("a b")], 2), 0.0);
        assert_eq!(bleu_n::<&str, Vec<&str>>(&[], &[w("a")], 2), 0.0);
        // p1 = 1, p2 = 1/2 smoothed from zero matches out of one bigram
        assert!(close(bleu_n(&w("a b"), &[w("b a")], 2), 0.5f64.sqrt()));
        // short hypothesis: BP = exp(1 - 4/2)
        let bp = bleu_n(&w("a b"), &[w("a b c d")], 1);
        assert!(close(bp, (-1.0f64).exp()));
        // closest reference length wins
        assert!(close(bleu_n(&w("a b"), &[w("a b c d"), w("a b")], 1), 1.0));
    }

    #[test]
    fn rouge_fixtures() {
        let x = w("a b c");
        let one = RougeScore {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
        };
        assert_eq!(rouge_n(&x, &x, 1), one);
        assert_eq!(rouge_n(&x, &x, 2), one);
        assert_eq!(rouge_l(&x, &x), one);
        let r = rouge_n(&w("a b c"), &w("a c"), 1);
        assert!(close(r.precision, 2.0 / 3.0) && close(r.recall, 1.0) && close(r.f1, 0.8));
        assert_eq!(rouge_n(&w("a b"), &w("c d"), 1), RougeScore::default());
        let l = rouge_l(&w("a b c d"), &w("a c e d"));
        assert!(close(l.precision, 0.75) && close(l.recall, 0.75));
    }

    #[test]
    fn union_lcs() {
        // reference sentence "a b c d"; hypothesis sentences "a b" and "c d"
        let r = rouge_l_union(&[w("a b"), w("c d")], &[w("a b c d")]);
        assert!(close(r.recall, 1.0) && close(r.precision, 1.0));
        let single = rouge_l_union(&[w("a x c")], &[w("a b c")]);
        assert_eq!(single, rouge_l(&w("a x c"), &w("a b c")));
    }

    #[test]
    fn coverage_counts_pieces() {
        let h = w("the boy rode a bike");
        assert_eq!(coverage(&h, &[w("boy"), w("bike")]), 1.0);
        assert_eq!(coverage(&h, &[w("girl"), w("car")]), 0.0);
        assert!(close(coverage(&h, &[w("boy"), w("rode a"), w("car")]), 2.0 / 3.0));
        assert_eq!(coverage(&h, &[w("a rode")]), 0.0);
    }

    struct Uniform(usize);

    impl LanguageModel for Uniform {
        fn vocab_size(&self) -> usize {
            self.0
        }

        fn next_distribution(&self, _: &[TokenId]) -> Result<ProbDist> {
            ProbDist::uniform(self.0)
        }
    }

    struct Forced;

    impl LanguageModel for Forced {
        fn vocab_size(&self) -> usize {
            4
        }

        fn next_distribution(&self, context: &[TokenId]) -> Result<ProbDist> {
            ProbDist::point(4, 3 - context.len() % 2)
        }
    }

    #[test]
    fn perplexity_bounds() {
        let texts = [(vec![], vec![3, 4, 5]), (vec![1], vec![6])];
        assert!(close(perplexity(&Uniform(10), &texts).unwrap(), 10.0));
        assert!(close(perplexity(&Forced, &[(vec![], vec![3, 2, 3, 2])]).unwrap(), 1.0));
        let none: [(Vec<TokenId>, Vec<TokenId>); 0] = [];
        assert!(perplexity(&Uniform(3), &none).is_err());
    }

    #[test]
    fn metric_names_round_trip() {
        for m in DEFAULT_METRICS {
            assert_eq!(m.to_string().parse::<Metric>().unwrap(), m);
        }
        assert_eq!("dist4".parse::<Metric>().unwrap(), Metric::Dist(4));
        for bad in ["dist", "dist0", "foo2", "rougel", ""] {
            assert!(bad.parse::<Metric>().is_err(), "{bad}");
        }
        let json = serde_json::to_string(&DEFAULT_METRICS).unwrap();
        assert_eq!(
            json,
            r#"["dist2","uniq2","rep2","bleu2","rouge1","rouge2","rougeL","ppl","coverage"]"#
        );
    }

    #[test]
    fn evaluate_report() {
        let samples = vec![
            Sample {
                hypothesis: vec![3, 4, 3, 4],
                emitted: vec![3, 4, 3, 4],
                references: vec![vec![3, 4, 5]],
                pieces: vec![vec![3], vec![9]],
                ..Default::default()
            },
            Sample {
                hypothesis: vec![5, 6],
                emitted: vec![5, 6, 1],
                ..Default::default()
            },
        ];
        let r = evaluate(&samples, &DEFAULT_METRICS, Some(&Uniform(10))).unwrap();
        assert_eq!(r.samples, 2);
        assert!(close(r.corpus["dist2"], 3.0 / 4.0));
        assert_eq!(r.corpus["uniq2"], 3.0);
        assert!(close(r.corpus["rep2"], (1.0 / 3.0) / 2.0));
        assert!(close(r.corpus["coverage"], 0.75));
        assert!(close(r.corpus["ppl"], 10.0));
        assert!(r.per_sample[0].contains_key("bleu2"));
        assert!(!r.per_sample[1].contains_key("bleu2"));
        assert!(evaluate::<Uniform>(&samples, &[Metric::Ppl], None).is_err());
    }

    fn text() -> impl Strategy<Value = Vec<u8>> {
        prop::collection::vec(0u8..6, 1..40)
    }

    proptest! {
        #[test]
        fn self_scores_are_perfect(x in text()) {
            prop_assert!((bleu_n(&x, std::slice::from_ref(&x), 2) - 1.0).abs() < 1e-12);
            let r = rouge_n(&x, &x, 1);
            prop_assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
            prop_assert_eq!(rouge_l(&x, &x).f1, 1.0);
        }

        #[test]
        fn rep_complements_dist(x in text(), n in 1usize..4) {
            prop_assume!(x.len() >= n);
            prop_assert!((rep_n(&x, n) - (1.0 - dist_n(&[&x], n))).abs() < 1e-12);
        }

        #[test]
        fn bounded(x in text(), y in text()) {
            for v in [dist_n(&[&x, &y], 2), rep_n(&x, 2), bleu_n(&x, &[&y], 2), rouge_l(&x, &y).f1, rouge_n(&x, &y, 2).f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn dist_is_permutation_invariant(x in text(), y in text(), z in text()) {
            prop_assert_eq!(dist_n(&[&x, &y, &z], 2), dist_n(&[&z, &x, &y], 2));
        }

        #[test]
        fn lcs_is_common_subsequence(x in text(), y in text()) {
            let pos = lcs_positions(&x, &y);
            let sub: Vec<u8> = pos.iter().map(|&i| x[i]).collect();
            let mut it = y.iter();
            prop_assert!(sub.iter().all(|c| it.any(|d| d == c)));
            prop_assert_eq!(pos.len(), lcs_len(&y, &x));
        }
    }
}
