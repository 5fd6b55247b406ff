//! End-to-end preparation, training and the experiment grid.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate, mean_std, EvalReport, DEFAULT_THRESHOLD};
use crate::featurize::{Featurizer, FeaturizerConfig, Features, StructuredRecord};
use crate::gin::{DEFAULT_EMBED, DEFAULT_HIDDEN};
use crate::graph::{build_knn_graph, EnterpriseGraph, DEFAULT_K};
use crate::model::{FusionOverride, GraphInputs, Model, ModelSpec, Variant};
use crate::synthdata::SynthDataset;
use crate::train::{split_dataset, train_model, SplitSpec, Splits, TrainConfig, TrainOutcome};

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub records: Vec<StructuredRecord>,
    pub texts: Option<Vec<Vec<String>>>,
    pub labels: Vec<f64>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        let n = self.records.len();
        if self.labels.len() != n {
            return Err(Error::Data(format!("{} labels for {n} enterprises", self.labels.len())));
        }
        if let Some(t) = &self.texts {
            if t.len() != n {
                return Err(Error::Data(format!("{} documents for {n} enterprises", t.len())));
            }
        }
        let mut seen = HashSet::with_capacity(n);
        for (i, r) in self.records.iter().enumerate() {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Data(format!("row {}: duplicate id `{}`", i + 1, r.id)));
            }
        }
        if let Some((i, y)) = self.labels.iter().enumerate().find(|(_, &y)| y != 0.0 && y != 1.0) {
            return Err(Error::Data(format!("row {}: label {y} is not 0 or 1", i + 1)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl From<SynthDataset> for Dataset {
    fn from(d: SynthDataset) -> Self {
        Self {
            records: d.records,
            texts: Some(d.texts),
            labels: d.labels,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub train: TrainConfig,
    pub featurizer: FeaturizerConfig,
    pub k: usize,
    pub hidden: usize,
    pub embed: usize,
    pub threshold: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            featurizer: FeaturizerConfig::default(),
            k: DEFAULT_K,
            hidden: DEFAULT_HIDDEN,
            embed: DEFAULT_EMBED,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

/// Split, fitted featurizer, graph and model inputs for one seed.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub splits: Splits,
    pub featurizer: Featurizer,
    pub features: Features,
    pub graph: EnterpriseGraph,
    pub inputs: GraphInputs,
}

pub fn inputs_from(features: &Features, graph: &EnterpriseGraph) -> Result<GraphInputs> {
    GraphInputs::new(
        features.structured.matrix.clone(),
        features.text.as_ref().map(|t| t.matrix.clone()),
        features.industry.matrix.clone(),
        graph,
    )
}

pub fn prepare(data: &Dataset, cfg: &PipelineConfig, seed: u64) -> Result<Prepared> {
    data.validate()?;
    let splits = split_dataset(&data.labels, &SplitSpec::new(seed))?;
    let featurizer = Featurizer::fit(&data.records, data.texts.as_deref(), &splits.train, &cfg.featurizer)?;
    let features = featurizer.transform(&data.records, data.texts.as_deref())?;
    let graph = build_knn_graph(&features.profile, cfg.k)?;
    let inputs = inputs_from(&features, &graph)?;
    Ok(Prepared {
        splits,
        featurizer,
        features,
        graph,
        inputs,
    })
}

pub fn model_spec(variant: Variant, inputs: &GraphInputs, cfg: &PipelineConfig) -> ModelSpec {
    ModelSpec {
        hidden: cfg.hidden,
        embed: cfg.embed,
        ..ModelSpec::new(variant, inputs.dims())
    }
}

pub fn train_spec(
    prepared: &Prepared,
    labels: &[f64],
    spec: ModelSpec,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<(Model, TrainOutcome)> {
    let mut model = Model::new(spec, seed)?;
    let tc = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let outcome = train_model(&mut model, &prepared.inputs, labels, &prepared.splits, &tc)?;
    Ok((model, outcome))
}

/// One configuration of the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridConfig {
    pub variant: Variant,
    pub fusion_override: FusionOverride,
}

impl GridConfig {
    pub fn name(&self) -> String {
        let o = self.fusion_override;
        let mut s = self.variant.key().to_string();
        if o.freeze_uniform_alpha {
            s.push_str("+uniform-alpha");
        }
        if o.open_gate {
            s.push_str("+open-gate");
        }
        s
    }
}

impl From<Variant> for GridConfig {
    fn from(variant: Variant) -> Self {
        Self {
            variant,
            fusion_override: FusionOverride::default(),
        }
    }
}

/// Every in-scope configuration: baselines, channel subsets, fusion versions
/// and the leave-one-channel-out runs.
pub fn default_grid() -> Vec<GridConfig> {
    Variant::ALL.into_iter().map(GridConfig::from).collect()
}

/// Baselines listed in result tables but not implemented here.
pub const EXTERNAL_BASELINES: [&str; 2] = ["Random Forest (RF)", "XGBoost"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRun {
    pub config: String,
    pub label: String,
    pub seed: u64,
    pub validation: EvalReport,
    pub test: Option<EvalReport>,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub config: String,
    pub label: String,
    pub runs: usize,
    pub auc_mean: f64,
    pub auc_std: f64,
    pub precision_mean: f64,
    pub precision_std: f64,
    pub recall_mean: f64,
    pub recall_std: f64,
    pub f1_mean: f64,
    pub f1_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub runs: Vec<GridRun>,
    pub summary: Vec<GridSummary>,
}

impl GridResult {
    pub fn summary_for(&self, config: &str) -> Option<&GridSummary> {
        self.summary.iter().find(|s| s.config == config)
    }

    pub fn mean_auc(&self, config: &str) -> Option<f64> {
        self.summary_for(config).map(|s| s.auc_mean)
    }
}

fn subset(v: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| v[i]).collect()
}

/// Trains every configuration for every seed and scores the validation split
/// (and the test split when it holds both classes).
pub fn run_grid(data: &Dataset, grid: &[GridConfig], seeds: &[u64], cfg: &PipelineConfig) -> Result<GridResult> {
    if grid.is_empty() || seeds.is_empty() {
        return Err(Error::Config("grid needs at least one configuration and one seed".into()));
    }
    let mut runs = Vec::new();
    for &seed in seeds {
        let prepared = prepare(data, cfg, seed)?;
        for gc in grid {
            let name = gc.name();
            let spec = ModelSpec {
                fusion_override: gc.fusion_override,
                ..model_spec(gc.variant, &prepared.inputs, cfg)
            };
            let (model, outcome) = train_spec(&prepared, &data.labels, spec, cfg, seed)?;
            let probs = model.predict(&prepared.inputs)?.probabilities;
            let s = &prepared.splits;
            let validation = evaluate(
                &subset(&probs, &s.val),
                &subset(&data.labels, &s.val),
                &name,
                seed,
                "validation",
                cfg.threshold,
            )?;
            let test = evaluate(
                &subset(&probs, &s.test),
                &subset(&data.labels, &s.test),
                &name,
                seed,
                "test",
                cfg.threshold,
            )
            .ok();
            log::info!("{name} seed {seed}: validation AUC {:.4}", validation.auc);
            runs.push(GridRun {
                config: name,
                label: gc.variant.label().to_string(),
                seed,
                validation,
                test,
                best_epoch: outcome.best_epoch,
                epochs_run: outcome.history.len(),
            });
        }
    }
    let summary = grid
        .iter()
        .map(|gc| {
            let name = gc.name();
            let rs: Vec<&EvalReport> = runs.iter().filter(|r| r.config == name).map(|r| &r.validation).collect();
            let stat = |f: fn(&EvalReport) -> f64| mean_std(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (auc_mean, auc_std) = stat(|r| r.auc);
            let (precision_mean, precision_std) = stat(|r| r.precision);
            let (recall_mean, recall_std) = stat(|r| r.recall);
            let (f1_mean, f1_std) = stat(|r| r.f1);
            GridSummary {
                config: name,
                label: gc.variant.label().to_string(),
                runs: rs.len(),
                auc_mean,
                auc_std,
                precision_mean,
                precision_std,
                recall_mean,
                recall_std,
                f1_mean,
                f1_std,
            }
        })
        .collect();
    Ok(GridResult { runs, summary })
}
