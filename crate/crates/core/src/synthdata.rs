//! Seeded synthetic enterprise datasets with a planted risk signal per modality.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::StructuredRecord;

/// Base mean, standard deviation and risk direction of each ratio.
const RATIO_PRIORS: [(f64, f64, f64); 5] = [
    (0.05, 0.08, -1.0),
    (0.45, 0.15, 1.0),
    (0.80, 0.30, -1.0),
    (0.10, 0.10, -1.0),
    (0.08, 0.15, -1.0),
];

/// Share of lexicon tokens in each document.
const LEXICON_SHARE: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_enterprises: usize,
    pub positive_rate: f64,
    pub n_industries: usize,
    pub n_regions: usize,
    pub signal_structured: f64,
    pub signal_text: f64,
    pub signal_graph: f64,
    pub vocab_size: usize,
    pub tokens_per_doc: usize,
    /// Tokens in each of the risk and safe lexicons.
    pub lexicon_size: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_enterprises: 1000,
            positive_rate: 0.15,
            n_industries: 12,
            n_regions: 8,
            signal_structured: 1.0,
            signal_text: 1.0,
            signal_graph: 1.0,
            vocab_size: 600,
            tokens_per_doc: 60,
            lexicon_size: 20,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.n_enterprises < 2 {
            return err(format!("n_enterprises = {} (need at least 2)", self.n_enterprises));
        }
        if !(self.positive_rate > 0.0 && self.positive_rate < 1.0) {
            return err(format!("positive_rate = {} is outside (0, 1)", self.positive_rate));
        }
        if self.n_industries < 2 || self.n_regions < 2 {
            return err("n_industries and n_regions must each be at least 2".into());
        }
        for (name, s) in [
            ("signal_structured", self.signal_structured),
            ("signal_text", self.signal_text),
            ("signal_graph", self.signal_graph),
        ] {
            if !(s >= 0.0 && s.is_finite()) {
                return err(format!("{name} = {s} must be a finite non-negative number"));
            }
        }
        if self.tokens_per_doc == 0 {
            return err("tokens_per_doc must be positive".into());
        }
        if self.lexicon_size == 0 || self.vocab_size <= 2 * self.lexicon_size {
            return err(format!(
                "vocab_size = {} must exceed twice lexicon_size = {}",
                self.vocab_size, self.lexicon_size
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub records: Vec<StructuredRecord>,
    pub texts: Vec<Vec<String>>,
    pub labels: Vec<f64>,
}

struct Draft {
    label: bool,
    ratios: [f64; 5],
    industry: usize,
    region: usize,
    tokens: Vec<usize>,
}

/// Cumulative weights for sampling with `partition_point`.
fn cumulative(weights: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .into_iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

fn sample(cum: &[f64], rng: &mut impl Rng) -> usize {
    let u = rng.random::<f64>() * cum[cum.len() - 1];
    cum.partition_point(|&c| c <= u).min(cum.len() - 1)
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let label_dist = Bernoulli::new(cfg.positive_rate).map_err(|e| Error::Config(e.to_string()))?;
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    // Shifting every ratio by s·σ_j/√5 in the risk direction separates the
    // class means by Mahalanobis distance s.
    let shift = cfg.signal_structured / (RATIO_PRIORS.len() as f64).sqrt();

    // Industry tilt: positives favour high-index industries, negatives low.
    let z: Vec<f64> = (0..cfg.n_industries)
        .map(|i| -1.0 + 2.0 * i as f64 / (cfg.n_industries - 1) as f64)
        .collect();
    let tilt = |sign: f64| cumulative(z.iter().map(|&zi| (sign * cfg.signal_graph * zi).exp()));
    let industry_cum = [tilt(-1.0), tilt(1.0)];

    // Lexicon tokens are 0..L (risk) and L..2L (safe); the rest are neutral
    // with Zipf-like frequencies.
    let lex = cfg.lexicon_size;
    let neutral_cum = cumulative((0..cfg.vocab_size - 2 * lex).map(|r| 1.0 / (r as f64 + 10.0)));
    let n_lex_tokens = (LEXICON_SHARE * cfg.tokens_per_doc as f64).round().max(1.0);
    let delta = (cfg.signal_text / (4.0 * n_lex_tokens.sqrt())).min(0.45);

    let mut drafts: Vec<Draft> = (0..cfg.n_enterprises)
        .map(|_| {
            let label = label_dist.sample(&mut rng);
            let sign = if label { 1.0 } else { -1.0 };
            let class_shift = if label { shift } else { 0.0 };
            let ratios = std::array::from_fn(|j| {
                let (mean, sd, dir) = RATIO_PRIORS[j];
                mean + sd * (std_normal.sample(&mut rng) + dir * class_shift)
            });
            let industry = sample(&industry_cum[label as usize], &mut rng);
            let region = rng.random_range(0..cfg.n_regions);
            let p_risk = 0.5 + sign * delta;
            let tokens = (0..cfg.tokens_per_doc)
                .map(|_| {
                    if rng.random::<f64>() < LEXICON_SHARE {
                        let base = if rng.random::<f64>() < p_risk { 0 } else { lex };
                        base + rng.random_range(0..lex)
                    } else {
                        2 * lex + sample(&neutral_cum, &mut rng)
                    }
                })
                .collect();
            Draft {
                label,
                ratios,
                industry,
                region,
                tokens,
            }
        })
        .collect();
    drafts.shuffle(&mut rng);

    // Token names are a fixed random relabelling so that lexicon membership
    // cannot be read off the token id.
    let mut names: Vec<usize> = (0..cfg.vocab_size).collect();
    names.shuffle(&mut rng);
    let width = cfg.n_enterprises.to_string().len().max(5);

    let mut out = SynthDataset {
        records: Vec::with_capacity(drafts.len()),
        texts: Vec::with_capacity(drafts.len()),
        labels: Vec::with_capacity(drafts.len()),
    };
    for (i, d) in drafts.into_iter().enumerate() {
        let [roa, debt_to_asset, asset_turnover, cash_flow_ratio, net_asset_growth] = d.ratios;
        out.records.push(StructuredRecord {
            id: format!("E{i:0width$}"),
            roa,
            debt_to_asset,
            asset_turnover,
            cash_flow_ratio,
            net_asset_growth,
            industry: format!("IND{:02}", d.industry),
            region: format!("REG{:02}", d.region),
        });
        out.texts
            .push(d.tokens.into_iter().map(|t| format!("w{:04}", names[t])).collect());
        out.labels.push(if d.label { 1.0 } else { 0.0 });
    }
    Ok(out)
}
