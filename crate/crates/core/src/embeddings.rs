//! Word vectors: a deterministic PPMI + spectral trainer, a word2vec text
//! loader/exporter, and the similarity helpers used by the SIMI enhance path.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::vocab::{Corpus, Vocabulary};
use crate::TokenId;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: Vec<Vec<f64>>,
    zero_rows: Vec<TokenId>,
}

impl EmbeddingTable {
    pub fn new(vectors: Vec<Vec<f64>>) -> Result<Self> {
        let dim = vectors.first().map_or(0, Vec::len);
        if dim == 0 {
            return Err(Error::Parameter("embedding table needs dim >= 1".into()));
        }
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(Error::Parameter(format!("vector {i} has dim {} not {dim}", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Parameter(format!("vector {i} is not finite")));
            }
        }
        let zero_rows = vectors
            .iter()
            .enumerate()
            .filter(|(_, v)| v.iter().all(|x| *x == 0.0))
            .map(|(i, _)| i)
            .collect();
        Ok(EmbeddingTable {
            dim,
            vectors,
            zero_rows,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vector(&self, id: TokenId) -> Option<&[f64]> {
        self.vectors.get(id).map(Vec::as_slice)
    }

    /// Tokens whose vector is all zeros (no co-occurrence signal, or absent
    /// from a loaded file).
    pub fn zero_rows(&self) -> &[TokenId] {
        &self.zero_rows
    }

    /// PPMI-weighted symmetric co-occurrence within `window` tokens, reduced
    /// to `dim` dimensions by the eigenvectors of largest |eigenvalue|,
    /// scaled by sqrt(|eigenvalue|). Each basis vector is sign-fixed so that
    /// its largest-magnitude component is positive.
    pub fn train_cooccurrence(corpus: &Corpus, vocab_size: usize, window: usize, dim: usize) -> Result<Self> {
        if window < 1 || dim < 1 {
            return Err(Error::Parameter("window and dim must be at least 1".into()));
        }
        if dim > vocab_size {
            return Err(Error::Parameter(format!(
                "dim {dim} exceeds vocabulary size {vocab_size}"
            )));
        }
        if corpus.is_empty() {
            return Err(Error::Parameter("cannot train embeddings on an empty corpus".into()));
        }
        let v = vocab_size;
        let mut counts = DMatrix::<f64>::zeros(v, v);
        for doc in corpus.documents() {
            for (i, &a) in doc.iter().enumerate() {
                for &b in &doc[i + 1..(i + 1 + window).min(doc.len())] {
                    counts[(a, b)] += 1.0;
                    counts[(b, a)] += 1.0;
                }
            }
        }
        let row_sums: Vec<f64> = (0..v).map(|i| counts.row(i).sum()).collect();
        let total: f64 = row_sums.iter().sum();
        let mut ppmi = DMatrix::<f64>::zeros(v, v);
        if total > 0.0 {
            for i in 0..v {
                for j in 0..v {
                    let c = counts[(i, j)];
                    if c > 0.0 {
                        let pmi = (c * total / (row_sums[i] * row_sums[j])).ln();
                        ppmi[(i, j)] = pmi.max(0.0);
                    }
                }
            }
        }
        let zero: Vec<bool> = (0..v).map(|i| ppmi.row(i).iter().all(|x| *x == 0.0)).collect();

        let eig = SymmetricEigen::new(ppmi);
        let mut order: Vec<usize> = (0..v).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .abs()
                .total_cmp(&eig.eigenvalues[a].abs())
                .then(a.cmp(&b))
        });
        let mut vectors = vec![vec![0.0; dim]; v];
        for (k, &col) in order.iter().take(dim).enumerate() {
            let basis = eig.eigenvectors.column(col);
            let mut pivot = 0;
            for i in 0..v {
                if basis[i].abs() > basis[pivot].abs() {
                    pivot = i;
                }
            }
            let sign = if basis[pivot] < 0.0 { -1.0 } else { 1.0 };
            let scale = eig.eigenvalues[col].abs().sqrt() * sign;
            for (i, row) in vectors.iter_mut().enumerate() {
                if !zero[i] {
                    row[k] = basis[i] * scale;
                }
            }
        }
        Self::new(vectors)
    }

    /// Loads word2vec text vectors (`count dim` header, then `word v1 .. vdim`).
    /// Vocabulary tokens absent from the file get zero vectors; the returned
    /// list names the non-special ones.
    pub fn load_text_vectors(path: &Path, vocab: &Vocabulary) -> Result<(Self, Vec<String>)> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "missing header"))?;
        let header: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(path, 1, "header must be `count dim`"))?;
        let [_, dim] = header[..] else {
            return Err(Error::parse(path, 1, "header must be `count dim`"));
        };
        if dim == 0 {
            return Err(Error::parse(path, 1, "dim must be at least 1"));
        }
        let mut vectors = vec![vec![0.0; dim]; vocab.len()];
        let mut seen = vec![false; vocab.len()];
        for (i, line) in lines {
            let row = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != dim + 1 {
                return Err(Error::parse(
                    path,
                    row,
                    format!("row {row} has {} values, header says {dim}", fields.len() - 1),
                ));
            }
            let values: Vec<f64> = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(path, row, format!("row {row}: {e}")))?;
            if values.iter().any(|x| !x.is_finite()) {
                return Err(Error::parse(path, row, format!("row {row}: non-finite value")));
            }
            if let Some(id) = vocab.id(fields[0]) {
                vectors[id] = values;
                seen[id] = true;
            }
        }
        let missing = (0..vocab.len())
            .filter(|&id| !seen[id] && !vocab.is_special(id))
            .map(|id| vocab.token(id).unwrap().to_owned())
            .collect();
        Ok((Self::new(vectors)?, missing))
    }

    /// word2vec text export. Tokens containing whitespace cannot be
    /// represented in the format and are skipped.
    pub fn to_text(&self, vocab: &Vocabulary) -> String {
        let rows: Vec<(TokenId, &str)> = (0..self.len().min(vocab.len()))
            .map(|id| (id, vocab.token(id).unwrap()))
            .filter(|(_, tok)| !tok.is_empty() && !tok.chars().any(char::is_whitespace))
            .collect();
        let mut out = String::new();
        writeln!(out, "{} {}", rows.len(), self.dim).unwrap();
        for (id, tok) in rows {
            out.push_str(tok);
            for x in &self.vectors[id] {
                write!(out, " {x}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path, vocab: &Vocabulary) -> Result<()> {
        fs::write(path, self.to_text(vocab)).map_err(|e| Error::io(path, e))
    }
}

/// Cosine similarity, defined as 0 when either vector is all zeros.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Parameter(format!(
            "cosine of vectors with dims {} and {}",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Componentwise mean of the vectors of `tokens`, one weight per token.
pub fn average_embedding(tokens: &[TokenId], table: &EmbeddingTable) -> Result<Vec<f64>> {
    if tokens.is_empty() {
        return Err(Error::Parameter("cannot average an empty token list".into()));
    }
    let mut mean = vec![0.0; table.dim()];
    for &t in tokens {
        let v = table
            .vector(t)
            .ok_or_else(|| Error::Parameter(format!("token {t} has no embedding")))?;
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    let n = tokens.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

/// The `top_n` tokens most similar to `query`, skipping `exclude`. Sorted by
/// descending similarity, ties by ascending id.
pub fn nearest(
    table: &EmbeddingTable,
    query: &[f64],
    top_n: usize,
    exclude: &HashSet<TokenId>,
) -> Result<Vec<(TokenId, f64)>> {
    let mut scored = Vec::with_capacity(table.len());
    for id in 0..table.len() {
        if exclude.contains(&id) {
            continue;
        }
        scored.push((id, cosine(query, table.vector(id).unwrap())?));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(top_n);
    Ok(scored)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::TokenizeMode;
    use proptest::prelude::*;

    fn synthetic() -> (Vocabulary, Corpus) {
        let lines = [
            "the cat eats food",
            "the dog eats food",
            "a cat runs fast",
            "a dog runs fast",
            "the cat sleeps here",
            "the dog sleeps here",
            "big rock stays still",
            "lonely",
        ];
        let vocab = Vocabulary::build(&lines, TokenizeMode::Whitespace, 1).unwrap();
        let corpus = Corpus::from_lines(&lines, &vocab, TokenizeMode::Whitespace);
        (vocab, corpus)
    }

    #[test]
    fn shared_contexts_are_similar() {
        let (vocab, corpus) = synthetic();
        let table = EmbeddingTable::train_cooccurrence(&corpus, vocab.len(), 2, 6).unwrap();
        let v = |w: &str| table.vector(vocab.id(w).unwrap()).unwrap().to_vec();
        let cat_dog = cosine(&v("cat"), &v("dog")).unwrap();
        assert!(cat_dog > cosine(&v("cat"), &v("rock")).unwrap());
        assert!(cat_dog > cosine(&v("cat"), &v("still")).unwrap());
        assert!(cat_dog > 0.9, "{cat_dog}");
    }

    #[test]
    fn training_is_deterministic() {
        let (vocab, corpus) = synthetic();
        let a = EmbeddingTable::train_cooccurrence(&corpus, vocab.len(), 2, 5).unwrap();
        let b = EmbeddingTable::train_cooccurrence(&corpus, vocab.len(), 2, 5).unwrap();
        let bits = |t: &EmbeddingTable| -> Vec<u64> { t.vectors.iter().flatten().map(|x| x.to_bits()).collect() };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn isolated_token_gets_zero_vector() {
        let (vocab, corpus) = synthetic();
        let table = EmbeddingTable::train_cooccurrence(&corpus, vocab.len(), 2, 4).unwrap();
        let lonely = vocab.id("lonely").unwrap();
        assert!(table.zero_rows().contains(&lonely));
        assert!(table.vector(lonely).unwrap().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn dim_larger_than_vocab_is_rejected() {
        let (vocab, corpus) = synthetic();
        assert!(EmbeddingTable::train_cooccurrence(&corpus, vocab.len(), 2, vocab.len() + 1).is_err());
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine(&[0.3, -2.0], &[0.3, -2.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert!(cosine(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn average_examples() {
        let t = EmbeddingTable::new(vec![vec![2.0, 0.0], vec![0.0, 2.0], vec![-2.0, 0.0]]).unwrap();
        assert_eq!(average_embedding(&[0], &t).unwrap(), vec![2.0, 0.0]);
        assert_eq!(average_embedding(&[0, 2], &t).unwrap(), vec![0.0, 0.0]);
        assert_eq!(average_embedding(&[0, 1], &t).unwrap(), vec![1.0, 1.0]);
        assert!(average_embedding(&[], &t).is_err());
    }

    #[test]
    fn nearest_rules() {
        let t = EmbeddingTable::new(vec![vec![1.0, 0.0], vec![0.9, 0.1], vec![0.0, 1.0], vec![0.9, 0.1]]).unwrap();
        let q = t.vector(0).unwrap().to_vec();
        let got = nearest(&t, &q, 2, &HashSet::from([0])).unwrap();
        assert_eq!(got.iter().map(|x| x.0).collect::<Vec<_>>(), vec![1, 3]);
        let all = nearest(&t, &q, 10, &HashSet::new()).unwrap();
        assert_eq!(all.iter().map(|x| x.0).collect::<Vec<_>>(), vec![0, 1, 3, 2]);
    }

    #[test]
    fn text_vectors_load_and_report() {
        let vocab = Vocabulary::from_tokens(["cat", "zebra"]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.txt");
        fs::write(&path, "2 2\ncat 0.5 1\nzebra 1 0\n").unwrap();
        let (t, missing) = EmbeddingTable::load_text_vectors(&path, &vocab).unwrap();
        assert!(missing.is_empty());
        assert_eq!(t.vector(4).unwrap(), &[1.0, 0.0]);

        fs::write(&path, "1 2\ncat 0.5 1\n").unwrap();
        let (t, missing) = EmbeddingTable::load_text_vectors(&path, &vocab).unwrap();
        assert_eq!(missing, vec!["zebra".to_owned()]);
        assert_eq!(t.vector(4).unwrap(), &[0.0, 0.0]);

        fs::write(&path, "2 2\ncat 0.5 1\nzebra 1 0 3\n").unwrap();
        let err = EmbeddingTable::load_text_vectors(&path, &vocab).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn export_roundtrip() {
        let (vocab, corpus) = synthetic();
        let table = EmbeddingTable::train_cooccurrence(&corpus, vocab.len(), 2, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        table.save(&path, &vocab).unwrap();
        let (back, missing) = EmbeddingTable::load_text_vectors(&path, &vocab).unwrap();
        assert!(missing.is_empty());
        assert_eq!(back, table);
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_scale_invariant(
            a in prop::collection::vec(-5.0..5.0f64, 4),
            b in prop::collection::vec(-5.0..5.0f64, 4),
            s in 0.01..100.0f64,
        ) {
            let ab = cosine(&a, &b).unwrap();
            prop_assert!((ab - cosine(&b, &a).unwrap()).abs() < 1e-12);
            let scaled: Vec<f64> = a.iter().map(|x| x * s).collect();
            prop_assert!((ab - cosine(&scaled, &b).unwrap()).abs() < 1e-9);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }

        #[test]
        fn average_is_permutation_invariant(ids in prop::collection::vec(0usize..5, 1..8)) {
            let t = EmbeddingTable::new((0..5).map(|i| vec![i as f64, 1.0 / (i as f64 + 1.0)]).collect()).unwrap();
            let mut rev = ids.clone();
            rev.reverse();
            let a = average_embedding(&ids, &t).unwrap();
            let b = average_embedding(&rev, &t).unwrap();
            prop_assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
        }

        #[test]
        fn nearest_is_sorted(q in prop::collection::vec(-1.0..1.0f64, 3)) {
            let t = EmbeddingTable::new((0..12).map(|i| {
                let f = i as f64;
                vec![f.sin(), f.cos(), (f * 0.5).sin()]
            }).collect()).unwrap();
            let got = nearest(&t, &q, 12, &HashSet::new()).unwrap();
            prop_assert!(got.windows(2).all(|w| w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0)));
        }
    }
}
