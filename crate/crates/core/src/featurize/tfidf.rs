use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Matrix;

pub const DEFAULT_MAX_FEATURES: usize = 1000;
pub const DEFAULT_MIN_DF: usize = 5;

/// Fitted TF-IDF vocabulary.
///
/// Terms are ordered by document frequency (descending), ties broken
/// lexicographically; only terms in at least `min_df` documents are kept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TfidfVocabulary {
    pub terms: Vec<String>,
    pub doc_freq: Vec<usize>,
    pub n_docs: usize,
}

impl TfidfVocabulary {
    pub fn fit<S: AsRef<str>>(corpus: &[Vec<S>], max_features: usize, min_df: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Config("tf-idf fit on an empty corpus".into()));
        }
        if max_features == 0 {
            return Err(Error::Config("tf-idf max_features must be positive".into()));
        }
        let mut df: BTreeMap<&str, usize> = BTreeMap::new();
        for doc in corpus {
            let uniq: HashSet<&str> = doc.iter().map(AsRef::as_ref).collect();
            for t in uniq {
                *df.entry(t).or_default() += 1;
            }
        }
        let mut eligible: Vec<(&str, usize)> = df.into_iter().filter(|&(_, c)| c >= min_df).collect();
        eligible.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        eligible.truncate(max_features);
        Ok(Self {
            terms: eligible.iter().map(|(t, _)| t.to_string()).collect(),
            doc_freq: eligible.iter().map(|&(_, c)| c).collect(),
            n_docs: corpus.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Smoothed inverse document frequency `ln((1 + N)/(1 + df)) + 1`.
    pub fn idf(&self, term_index: usize) -> f64 {
        let n = self.n_docs as f64;
        ((1.0 + n) / (1.0 + self.doc_freq[term_index] as f64)).ln() + 1.0
    }

    /// `tf·idf` per document with `tf = count / doc length`, each nonzero row
    /// then scaled to unit L2 norm. Out-of-vocabulary tokens still count toward
    /// the document length.
    pub fn transform<S: AsRef<str>>(&self, corpus: &[Vec<S>]) -> Result<Matrix> {
        let index: HashMap<&str, usize> = self
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), i))
            .collect();
        let idf: Vec<f64> = (0..self.len()).map(|i| self.idf(i)).collect();
        let v = self.len();
        let mut data = vec![0.0; corpus.len() * v];
        for (d, doc) in corpus.iter().enumerate() {
            if doc.is_empty() {
                continue;
            }
            let row = &mut data[d * v..(d + 1) * v];
            for tok in doc {
                if let Some(&j) = index.get(tok.as_ref()) {
                    row[j] += 1.0;
                }
            }
            let len = doc.len() as f64;
            for (w, f) in row.iter_mut().zip(&idf) {
                *w = *w / len * f;
            }
            let norm = row.iter().map(|w| w * w).sum::<f64>().sqrt();
            if norm > 0.0 {
                for w in row.iter_mut() {
                    *w /= norm;
                }
            }
        }
        Matrix::new(corpus.len(), v, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(raw: &[&str]) -> Vec<Vec<String>> {
        raw.iter()
            .map(|d| d.split_whitespace().map(str::to_string).collect())
            .collect()
    }

    #[test]
    fn empty_corpus_rejected() {
        let empty: Vec<Vec<String>> = vec![];
        assert!(matches!(
            TfidfVocabulary::fit(&empty, 10, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn min_df_boundary() {
        // "rare" in 4 docs, "common" in 5
        let corpus = docs(&["rare common", "rare common", "rare common", "rare common", "common"]);
        let v = TfidfVocabulary::fit(&corpus, DEFAULT_MAX_FEATURES, DEFAULT_MIN_DF).unwrap();
        assert_eq!(v.terms, vec!["common".to_string()]);
        assert_eq!(v.doc_freq, vec![5]);
    }

    #[test]
    fn truncation_keeps_highest_df_with_lexicographic_ties() {
        // term t{i} appears in 1 + (i % 7) documents; 2000 terms, all eligible at min_df=1.
        let n_terms = 2000;
        let mut corpus: Vec<Vec<String>> = vec![Vec::new(); 7];
        for i in 0..n_terms {
            for doc in corpus.iter_mut().take(1 + i % 7) {
                doc.push(format!("t{i:04}"));
            }
        }
        let v = TfidfVocabulary::fit(&corpus, 1000, 1).unwrap();
        assert_eq!(v.len(), 1000);

        // Sort oracle over (df desc, name asc).
        let mut all: Vec<(usize, String)> = (0..n_terms).map(|i| (1 + i % 7, format!("t{i:04}"))).collect();
        all.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let expected: Vec<String> = all.into_iter().take(1000).map(|(_, t)| t).collect();
        assert_eq!(v.terms, expected);
    }

    #[test]
    fn absent_term_and_universal_term() {
        let corpus = docs(&["a b", "a c", "a b b"]);
        let v = TfidfVocabulary::fit(&corpus, 10, 1).unwrap();
        let a = v.terms.iter().position(|t| t == "a").unwrap();
        assert_eq!(v.idf(a), 1.0);
        let m = v.transform(&corpus).unwrap();
        let c = v.terms.iter().position(|t| t == "c").unwrap();
        assert_eq!(m.get(0, c), 0.0);
    }

    #[test]
    fn three_document_hand_oracle() {
        // d0 = "x y x", d1 = "y z", d2 = "x"; N = 3
        // df: x=2, y=2, z=1 -> order x, y, z
        // idf(x)=idf(y)=ln(4/3)+1, idf(z)=ln(2)+1
        let corpus = docs(&["x y x", "y z", "x"]);
        let v = TfidfVocabulary::fit(&corpus, 10, 1).unwrap();
        assert_eq!(v.terms, vec!["x", "y", "z"]);
        let m = v.transform(&corpus).unwrap();

        let i_xy = (4.0f64 / 3.0).ln() + 1.0;
        let i_z = 2f64.ln() + 1.0;
        let normalize = |r: [f64; 3]| {
            let n = r.iter().map(|a| a * a).sum::<f64>().sqrt();
            r.map(|a| a / n)
        };
        let expected = [
            normalize([2.0 / 3.0 * i_xy, 1.0 / 3.0 * i_xy, 0.0]),
            normalize([0.0, 0.5 * i_xy, 0.5 * i_z]),
            normalize([i_xy, 0.0, 0.0]),
        ];
        for (i, row) in expected.iter().enumerate() {
            for (j, e) in row.iter().enumerate() {
                assert!((m.get(i, j) - e).abs() < 1e-10, "({i},{j})");
            }
        }
    }

    #[test]
    fn rows_are_unit_or_zero_and_nonnegative() {
        let corpus = docs(&["a b c", "", "zzz", "a a a"]);
        let v = TfidfVocabulary::fit(&corpus, 10, 2).unwrap();
        let m = v.transform(&corpus).unwrap();
        for i in 0..m.rows() {
            let n: f64 = m.row(i).iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(n == 0.0 || (n - 1.0).abs() < 1e-10);
            assert!(m.row(i).iter().all(|&a| a >= 0.0));
        }
    }
}
