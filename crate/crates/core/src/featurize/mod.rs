//! Structured, textual and categorical featurization. Every statistic is fitted
//! on the training rows only and then applied to all rows.

mod onehot;
mod tfidf;
mod zscore;

use serde::{Deserialize, Serialize};

pub use onehot::CategoryEncoder;
pub use tfidf::{TfidfVocabulary, DEFAULT_MAX_FEATURES, DEFAULT_MIN_DF};
pub use zscore::{ZScoreScaler, MIN_STD};

use crate::error::{Error, Result};
use crate::numcore::Matrix;

pub const RATIO_COLUMNS: [&str; 5] = [
    "roa",
    "debt_to_asset",
    "asset_turnover",
    "cash_flow_ratio",
    "net_asset_growth",
];

/// One enterprise: the five financial ratios plus its industry and region codes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructuredRecord {
    pub id: String,
    pub roa: f64,
    pub debt_to_asset: f64,
    pub asset_turnover: f64,
    pub cash_flow_ratio: f64,
    pub net_asset_growth: f64,
    pub industry: String,
    pub region: String,
}

impl StructuredRecord {
    pub fn ratios(&self) -> [f64; 5] {
        [
            self.roa,
            self.debt_to_asset,
            self.asset_turnover,
            self.cash_flow_ratio,
            self.net_asset_growth,
        ]
    }
}

/// Dense per-modality matrix with column names.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub matrix: Matrix,
    pub columns: Vec<String>,
}

pub fn ratio_matrix(records: &[StructuredRecord]) -> Result<Matrix> {
    let data = records.iter().flat_map(|r| r.ratios()).collect();
    Matrix::new(records.len(), RATIO_COLUMNS.len(), data)
        .map_err(|e| Error::Data(format!("structured ratios: {e}")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeaturizerConfig {
    pub max_features: usize,
    pub min_df: usize,
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        Self {
            max_features: DEFAULT_MAX_FEATURES,
            min_df: DEFAULT_MIN_DF,
        }
    }
}

/// Fitted featurizer state; serialized into model files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Featurizer {
    pub scaler: ZScoreScaler,
    pub vocabulary: Option<TfidfVocabulary>,
    pub encoder: CategoryEncoder,
}

/// All modality matrices for one set of enterprises.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    pub structured: FeatureMatrix,
    pub text: Option<FeatureMatrix>,
    /// Industry one-hot block: the node features of the relational channel.
    pub industry: FeatureMatrix,
    /// Industry and region one-hot blocks: the similarity profile for the graph.
    pub profile: Matrix,
}

impl Featurizer {
    pub fn fit(
        records: &[StructuredRecord],
        texts: Option<&[Vec<String>]>,
        train_idx: &[usize],
        cfg: &FeaturizerConfig,
    ) -> Result<Self> {
        if train_idx.is_empty() {
            return Err(Error::Config("featurizer fit on an empty training split".into()));
        }
        let train: Vec<StructuredRecord> = train_idx.iter().map(|&i| records[i].clone()).collect();
        let scaler = ZScoreScaler::fit(&ratio_matrix(&train)?)?;
        let vocabulary = match texts {
            Some(t) => {
                let docs: Vec<&Vec<String>> = train_idx.iter().map(|&i| &t[i]).collect();
                let docs: Vec<Vec<&str>> = docs
                    .into_iter()
                    .map(|d| d.iter().map(String::as_str).collect())
                    .collect();
                Some(TfidfVocabulary::fit(&docs, cfg.max_features, cfg.min_df)?)
            }
            None => None,
        };
        let encoder = CategoryEncoder::fit(train.iter().map(|r| (r.industry.as_str(), r.region.as_str())));
        Ok(Self {
            scaler,
            vocabulary,
            encoder,
        })
    }

    pub fn transform(&self, records: &[StructuredRecord], texts: Option<&[Vec<String>]>) -> Result<Features> {
        let structured = FeatureMatrix {
            matrix: self.scaler.apply(&ratio_matrix(records)?)?,
            columns: RATIO_COLUMNS.iter().map(|s| s.to_string()).collect(),
        };
        let text = match (&self.vocabulary, texts) {
            (Some(v), Some(t)) => {
                if t.len() != records.len() {
                    return Err(Error::Data(format!(
                        "{} documents for {} enterprises",
                        t.len(),
                        records.len()
                    )));
                }
                Some(FeatureMatrix {
                    matrix: v.transform(t)?,
                    columns: v.terms.clone(),
                })
            }
            _ => None,
        };
        let mut industry_names: Vec<(&String, &usize)> = self.encoder.industries.iter().collect();
        industry_names.sort_by_key(|&(_, &i)| i);
        let industry = FeatureMatrix {
            matrix: self.encoder.industry_block(records.iter().map(|r| r.industry.as_str())),
            columns: industry_names.into_iter().map(|(k, _)| format!("industry={k}")).collect(),
        };
        let profile = self
            .encoder
            .onehot(records.iter().map(|r| (r.industry.as_str(), r.region.as_str())));
        Ok(Features {
            structured,
            text,
            industry,
            profile,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(i: usize, roa: f64, ind: &str) -> StructuredRecord {
        StructuredRecord {
            id: format!("e{i}"),
            roa,
            debt_to_asset: 0.5 + 0.01 * i as f64,
            asset_turnover: 1.0,
            cash_flow_ratio: (i as f64).sin(),
            net_asset_growth: 0.1 * i as f64,
            industry: ind.into(),
            region: "R".into(),
        }
    }

    #[test]
    fn statistics_read_only_training_rows() {
        let records: Vec<_> = (0..10).map(|i| rec(i, i as f64, if i < 5 { "A" } else { "B" })).collect();
        let texts: Vec<Vec<String>> = (0..10)
            .map(|i| vec![if i < 5 { "early".into() } else { "late".into() }])
            .collect();
        let train: Vec<usize> = (0..5).collect();
        let all: Vec<usize> = (0..10).collect();
        let cfg = FeaturizerConfig {
            max_features: 10,
            min_df: 1,
        };
        let f_train = Featurizer::fit(&records, Some(&texts), &train, &cfg).unwrap();
        let f_all = Featurizer::fit(&records, Some(&texts), &all, &cfg).unwrap();
        assert_ne!(f_train.scaler, f_all.scaler);
        assert_eq!(f_train.vocabulary.as_ref().unwrap().terms, vec!["early"]);
        assert_eq!(f_train.encoder.n_industries(), 1);
        assert_ne!(f_train.vocabulary, f_all.vocabulary);

        let feats = f_train.transform(&records, Some(&texts)).unwrap();
        assert_eq!(feats.structured.matrix.shape(), (10, 5));
        // Unseen industry "B" rows are all zero.
        assert!(feats.industry.matrix.row(7).iter().all(|&v| v == 0.0));
        assert_eq!(feats.profile.cols(), 2);
    }

    #[test]
    fn refit_on_transformed_train_is_standard() {
        let records: Vec<_> = (0..20).map(|i| rec(i, (i * i) as f64 * 0.01, "A")).collect();
        let train: Vec<usize> = (0..16).collect();
        let f = Featurizer::fit(&records, None, &train, &FeaturizerConfig::default()).unwrap();
        let sub: Vec<_> = train.iter().map(|&i| records[i].clone()).collect();
        let z = f.transform(&sub, None).unwrap().structured.matrix;
        let refit = ZScoreScaler::fit(&z).unwrap();
        for (j, (m, s)) in refit.mean.iter().zip(&refit.std).enumerate() {
            if j == 2 {
                // constant column stays zero
                assert_eq!(*s, 0.0);
                continue;
            }
            assert!(m.abs() < 1e-10, "mean {m}");
            assert!((s - 1.0).abs() < 1e-10, "std {s}");
        }
    }
}
