//! Run configuration and the command implementations behind the binary.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::artifact::{config_hash, dataset_hash, roc_csv, Meta, ModelFile, MODEL_KIND};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport, DEFAULT_THRESHOLD};
use crate::featurize::{FeaturizerConfig, DEFAULT_MAX_FEATURES, DEFAULT_MIN_DF};
use crate::gin::{DEFAULT_EMBED, DEFAULT_HIDDEN};
use crate::graph::{build_knn_graph, DEFAULT_K};
use crate::io::{
    csv_line, fmt_f64, read_dataset, read_enterprises, read_texts_for, write_dataset, write_file, DatasetPaths,
};
use crate::model::{Prediction, Variant};
use crate::pipeline::{
    default_grid, inputs_from, model_spec, prepare, run_grid, train_spec, Dataset, GridConfig, GridResult,
    PipelineConfig, EXTERNAL_BASELINES,
};
use crate::synthdata::{generate, SynthConfig};
use crate::train::{split_dataset, SplitSpec, TrainConfig};

/// Risk probability above which `predict` flags an enterprise.
pub const DEFAULT_FLAG_THRESHOLD: f64 = 0.8;
pub const DEFAULT_ABLATION_SEEDS: usize = 5;

/// Flat key-value run configuration, read from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Directory holding the three dataset files.
    pub data: Option<PathBuf>,
    pub enterprises: Option<PathBuf>,
    pub texts: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    /// Seeds for `ablate`; defaults to five consecutive seeds from `seed`.
    pub seeds: Option<Vec<u64>>,

    pub n_enterprises: usize,
    pub positive_rate: f64,
    pub n_industries: usize,
    pub n_regions: usize,
    pub signal_structured: f64,
    pub signal_text: f64,
    pub signal_graph: f64,
    pub vocab_size: usize,
    pub tokens_per_doc: usize,
    pub lexicon_size: usize,

    pub variant: String,
    /// Subset of grid configurations for `ablate` (all when absent).
    pub configs: Option<Vec<String>>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub l2_coeff: f64,
    pub dropout: f64,
    pub early_stop_patience: usize,
    pub k: usize,
    pub max_features: usize,
    pub min_df: usize,
    pub hidden: usize,
    pub embed: usize,
    pub threshold: f64,
    pub flag_threshold: f64,
    pub split: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = SynthConfig::default();
        let t = TrainConfig::default();
        Self {
            data: None,
            enterprises: None,
            texts: None,
            labels: None,
            model: None,
            out: PathBuf::from("out"),
            seed: 0,
            seeds: None,
            n_enterprises: s.n_enterprises,
            positive_rate: s.positive_rate,
            n_industries: s.n_industries,
            n_regions: s.n_regions,
            signal_structured: s.signal_structured,
            signal_text: s.signal_text,
            signal_graph: s.signal_graph,
            vocab_size: s.vocab_size,
            tokens_per_doc: s.tokens_per_doc,
            lexicon_size: s.lexicon_size,
            variant: Variant::V3.key().to_string(),
            configs: None,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            l2_coeff: t.l2_coeff,
            dropout: t.dropout,
            early_stop_patience: t.early_stop_patience,
            k: DEFAULT_K,
            max_features: DEFAULT_MAX_FEATURES,
            min_df: DEFAULT_MIN_DF,
            hidden: DEFAULT_HIDDEN,
            embed: DEFAULT_EMBED,
            threshold: DEFAULT_THRESHOLD,
            flag_threshold: DEFAULT_FLAG_THRESHOLD,
            split: "validation".into(),
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub variant: Option<String>,
    pub split: Option<String>,
    pub seeds: Option<Vec<u64>>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string().replace('\n', " ")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn apply(mut self, o: Overrides) -> Self {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = o.out {
            self.out = p;
        }
        if o.data.is_some() {
            self.data = o.data;
        }
        if o.model.is_some() {
            self.model = o.model;
        }
        if let Some(v) = o.variant {
            self.variant = v;
        }
        if let Some(s) = o.split {
            self.split = s;
        }
        if o.seeds.is_some() {
            self.seeds = o.seeds;
        }
        self
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            n_enterprises: self.n_enterprises,
            positive_rate: self.positive_rate,
            n_industries: self.n_industries,
            n_regions: self.n_regions,
            signal_structured: self.signal_structured,
            signal_text: self.signal_text,
            signal_graph: self.signal_graph,
            vocab_size: self.vocab_size,
            tokens_per_doc: self.tokens_per_doc,
            lexicon_size: self.lexicon_size,
            seed: self.seed,
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            train: TrainConfig {
                learning_rate: self.learning_rate,
                batch_size: self.batch_size,
                max_epochs: self.max_epochs,
                l2_coeff: self.l2_coeff,
                dropout: self.dropout,
                early_stop_patience: self.early_stop_patience,
                seed: self.seed,
            },
            featurizer: FeaturizerConfig {
                max_features: self.max_features,
                min_df: self.min_df,
            },
            k: self.k,
            hidden: self.hidden,
            embed: self.embed,
            threshold: self.threshold,
        }
    }

    pub fn variant(&self) -> Result<Variant> {
        self.variant.parse()
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.seeds
            .clone()
            .unwrap_or_else(|| (0..DEFAULT_ABLATION_SEEDS as u64).map(|i| self.seed + i).collect())
    }

    pub fn dataset_paths(&self) -> Result<DatasetPaths> {
        let base = match &self.data {
            Some(d) => DatasetPaths::in_dir(d),
            None if self.enterprises.is_some() && self.labels.is_some() => DatasetPaths {
                enterprises: PathBuf::new(),
                texts: PathBuf::new(),
                labels: PathBuf::new(),
            },
            None => return Err(Error::Config("no dataset: set `data` or `enterprises` and `labels`".into())),
        };
        Ok(DatasetPaths {
            enterprises: self.enterprises.clone().unwrap_or(base.enterprises),
            texts: self.texts.clone().unwrap_or(base.texts),
            labels: self.labels.clone().unwrap_or(base.labels),
        })
    }

    pub fn model_path(&self) -> PathBuf {
        self.model.clone().unwrap_or_else(|| self.out.join("model.json"))
    }

    /// Hash of everything that influences numeric results for one seed.
    pub fn hash(&self) -> String {
        #[derive(Serialize)]
        struct Numeric<'a> {
            seed: u64,
            synth: SynthConfig,
            pipeline: PipelineConfig,
            variant: &'a str,
            configs: &'a Option<Vec<String>>,
            seeds: Vec<u64>,
            flag_threshold: f64,
            split: &'a str,
        }
        config_hash(&Numeric {
            seed: self.seed,
            synth: self.synth(),
            pipeline: self.pipeline(),
            variant: &self.variant,
            configs: &self.configs,
            seeds: self.seeds(),
            flag_threshold: self.flag_threshold,
            split: &self.split,
        })
    }

    fn meta(&self) -> Meta {
        Meta::new(self.seed, self.hash())
    }
}

fn to_json_line<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

#[derive(Debug, Serialize)]
struct DatasetManifest<'a> {
    #[serde(flatten)]
    meta: Meta,
    n_enterprises: usize,
    positives: usize,
    files: Vec<(&'a str, String)>,
}

pub fn cmd_gen_data(cfg: &RunConfig) -> Result<PathBuf> {
    let synth = generate(&cfg.synth())?;
    let data = Dataset::from(synth);
    let paths = write_dataset(&cfg.out, &data)?;
    let hashes = [
        (crate::io::ENTERPRISES_FILE, &paths.enterprises),
        (crate::io::TEXTS_FILE, &paths.texts),
        (crate::io::LABELS_FILE, &paths.labels),
    ]
    .into_iter()
    .map(|(n, p)| {
        let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
        Ok((n, crate::artifact::sha256_hex(&bytes)))
    })
    .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        meta: cfg.meta(),
        n_enterprises: data.len(),
        positives: data.labels.iter().filter(|&&y| y == 1.0).count(),
        files: hashes,
    };
    write_file(&cfg.out.join("manifest.json"), to_json_line(&manifest).as_bytes())?;
    Ok(cfg.out.clone())
}

fn load_data(cfg: &RunConfig) -> Result<Dataset> {
    let paths = cfg.dataset_paths()?;
    read_dataset(&paths)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    #[serde(flatten)]
    pub meta: Meta,
    pub variant: String,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs_run: usize,
    pub validation: Option<EvalReport>,
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    let variant = cfg.variant()?;
    let data = load_data(cfg)?;
    if variant.uses_text() && data.texts.is_none() {
        return Err(Error::Data(format!(
            "variant {variant} needs {} but it was not found",
            crate::io::TEXTS_FILE
        )));
    }
    let pcfg = cfg.pipeline();
    pcfg.train.validate()?;
    let prepared = prepare(&data, &pcfg, cfg.seed)?;
    let spec = model_spec(variant, &prepared.inputs, &pcfg);
    let (model, outcome) = train_spec(&prepared, &data.labels, spec, &pcfg, cfg.seed)?;
    let meta = cfg.meta();
    let file = ModelFile {
        kind: MODEL_KIND.to_string(),
        meta: meta.clone(),
        dataset_hash: dataset_hash(&data),
        spec: model.spec.clone(),
        pipeline: pcfg.clone(),
        featurizer: prepared.featurizer.clone(),
        best_epoch: outcome.best_epoch,
        params: model.params.entries().to_vec(),
    };
    file.save(&cfg.model_path())?;
    write_file(
        &cfg.out.join("history.csv"),
        (meta.csv_comment() + &outcome.history_csv()).as_bytes(),
    )?;
    write_file(
        &cfg.out.join("edges.csv"),
        (meta.csv_comment() + &prepared.graph.to_edge_csv()).as_bytes(),
    )?;
    let probs = model.predict(&prepared.inputs)?.probabilities;
    let val = &prepared.splits.val;
    let validation = evaluate(
        &val.iter().map(|&i| probs[i]).collect::<Vec<_>>(),
        &val.iter().map(|&i| data.labels[i]).collect::<Vec<_>>(),
        variant.key(),
        cfg.seed,
        "validation",
        pcfg.threshold,
    )
    .ok();
    Ok(TrainSummary {
        meta,
        variant: variant.key().to_string(),
        best_epoch: outcome.best_epoch,
        best_val_loss: outcome.best_val_loss,
        epochs_run: outcome.history.len(),
        validation,
    })
}

/// Featurizes `data` with the stored featurizer and scores every row.
pub fn score(file: &ModelFile, data: &Dataset) -> Result<Prediction> {
    let features = file.featurizer.transform(&data.records, data.texts.as_deref())?;
    let graph = build_knn_graph(&features.profile, file.pipeline.k)?;
    let inputs = inputs_from(&features, &graph)?;
    file.model()?.predict(&inputs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluateReport {
    #[serde(flatten)]
    pub meta: Meta,
    pub model_config_hash: String,
    pub variant: String,
    pub report: EvalReport,
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<EvaluateReport> {
    let file = ModelFile::load(&cfg.model_path())?;
    let data = load_data(cfg)?;
    let n = data.len();
    let rows: Vec<usize> = match cfg.split.as_str() {
        "all" => (0..n).collect(),
        split @ ("train" | "validation" | "test") => {
            if dataset_hash(&data) != file.dataset_hash {
                return Err(Error::Incompatible(format!(
                    "dataset differs from the one the model was trained on; split `{split}` is undefined (use `all`)"
                )));
            }
            let s = split_dataset(&data.labels, &SplitSpec::new(file.meta.seed))?;
            match split {
                "train" => s.train,
                "validation" => s.val,
                _ => s.test,
            }
        }
        other => {
            return Err(Error::Config(format!(
                "unknown split `{other}` (expected train, validation, test or all)"
            )))
        }
    };
    let probs = score(&file, &data)?.probabilities;
    let variant = file.spec.variant;
    let report = evaluate(
        &rows.iter().map(|&i| probs[i]).collect::<Vec<_>>(),
        &rows.iter().map(|&i| data.labels[i]).collect::<Vec<_>>(),
        variant.key(),
        file.meta.seed,
        &cfg.split,
        file.pipeline.threshold,
    )?;
    let meta = Meta::new(file.meta.seed, cfg.hash());
    write_file(&cfg.out.join("roc.csv"), roc_csv(&meta, &report.roc_points).as_bytes())?;
    let out = EvaluateReport {
        meta,
        model_config_hash: file.meta.config_hash.clone(),
        variant: variant.key().to_string(),
        report,
    };
    write_file(&cfg.out.join("report.json"), to_json_line(&out).as_bytes())?;
    Ok(out)
}

/// Label shown in the "Fusion Strategy" column.
pub fn fusion_strategy(v: Variant) -> &'static str {
    use crate::model::FusionKind;
    match (v, v.fusion()) {
        (Variant::Lr, _) => "--",
        (Variant::Gcn, _) => "Graph-only",
        (_, FusionKind::None) => "Single-view",
        (Variant::V2, _) => "FC fusion",
        (_, FusionKind::Concat) => "Concatenation",
        (_, FusionKind::Mean) => "Simple weighted average",
        (_, FusionKind::AttentionGate) => "GIN + gating + attention",
    }
}

pub const RESULTS_HEADER: &str = "model,fusion_strategy,auc,precision,recall,f1,config,seed,row,note";

pub fn results_csv(meta: &Meta, grid: &[GridConfig], result: &GridResult) -> String {
    let mut out = meta.csv_comment();
    out.push_str(RESULTS_HEADER);
    out.push('\n');
    let line = |fields: Vec<String>| csv_line(&fields);
    for name in EXTERNAL_BASELINES {
        out.push_str(&line(vec![
            name.into(),
            "--".into(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            "external".into(),
            "external: not implemented".into(),
        ]));
    }
    for gc in grid {
        let name = gc.name();
        let label = gc.variant.label().to_string();
        let strategy = fusion_strategy(gc.variant).to_string();
        for r in result.runs.iter().filter(|r| r.config == name) {
            let v = &r.validation;
            out.push_str(&line(vec![
                label.clone(),
                strategy.clone(),
                fmt_f64(v.auc),
                fmt_f64(v.precision),
                fmt_f64(v.recall),
                fmt_f64(v.f1),
                name.clone(),
                r.seed.to_string(),
                "run".into(),
                if v.degenerate { "no positive predictions".into() } else { String::new() },
            ]));
        }
        if let Some(s) = result.summary_for(&name) {
            for (row, vals) in [
                ("mean", [s.auc_mean, s.precision_mean, s.recall_mean, s.f1_mean]),
                ("std", [s.auc_std, s.precision_std, s.recall_std, s.f1_std]),
            ] {
                let mut fields = vec![label.clone(), strategy.clone()];
                fields.extend(vals.iter().map(|&x| fmt_f64(x)));
                fields.extend([name.clone(), String::new(), row.into(), format!("{} seeds", s.runs)]);
                out.push_str(&line(fields));
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    #[serde(flatten)]
    pub meta: Meta,
    pub seeds: Vec<u64>,
    pub result: GridResult,
}

pub fn grid_from(cfg: &RunConfig) -> Result<Vec<GridConfig>> {
    match &cfg.configs {
        None => Ok(default_grid()),
        Some(names) => names
            .iter()
            .map(|n| n.parse::<Variant>().map(GridConfig::from))
            .collect(),
    }
}

pub fn cmd_ablate(cfg: &RunConfig) -> Result<AblationReport> {
    let grid = grid_from(cfg)?;
    let seeds = cfg.seeds();
    let data = load_data(cfg)?;
    if data.texts.is_none() && grid.iter().any(|g| g.variant.uses_text()) {
        return Err(Error::Data(format!(
            "the grid includes text variants but {} was not found",
            crate::io::TEXTS_FILE
        )));
    }
    let pcfg = cfg.pipeline();
    pcfg.train.validate()?;
    let result = run_grid(&data, &grid, &seeds, &pcfg)?;
    let meta = cfg.meta();
    write_file(&cfg.out.join("results.csv"), results_csv(&meta, &grid, &result).as_bytes())?;
    for gc in &grid {
        let name = gc.name();
        if let Some(r) = result.runs.iter().find(|r| r.config == name) {
            let m = Meta::new(r.seed, meta.config_hash.clone());
            write_file(
                &cfg.out.join(format!("roc_{name}.csv")),
                roc_csv(&m, &r.validation.roc_points).as_bytes(),
            )?;
        }
    }
    let report = AblationReport { meta, seeds, result };
    write_file(&cfg.out.join("report.json"), to_json_line(&report).as_bytes())?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredRow {
    pub id: String,
    pub probability: f64,
    pub flag: bool,
    pub alpha: Vec<f64>,
}

/// Scores enterprise rows (labels not needed). The similarity graph is built
/// over the supplied rows.
pub fn cmd_predict(cfg: &RunConfig) -> Result<Vec<ScoredRow>> {
    let file = ModelFile::load(&cfg.model_path())?;
    let paths = cfg.dataset_paths().or_else(|_| {
        Err(Error::Config(
            "predict needs `data` or `enterprises` pointing at the rows to score".into(),
        ))
    })?;
    let records = read_enterprises(&paths.enterprises)?;
    let texts = if paths.texts.exists() {
        Some(read_texts_for(&paths.texts, &records)?)
    } else {
        None
    };
    let variant = file.spec.variant;
    if variant.uses_text() && texts.is_none() {
        return Err(Error::Data(format!(
            "variant {variant} needs {} but it was not found",
            crate::io::TEXTS_FILE
        )));
    }
    let data = Dataset {
        labels: vec![0.0; records.len()],
        records,
        texts,
    };
    data.validate()?;
    let pred = score(&file, &data)?;
    let n_alpha = 3;
    let rows: Vec<ScoredRow> = data
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let p = pred.probabilities[i];
            ScoredRow {
                id: r.id.clone(),
                probability: p,
                flag: p > cfg.flag_threshold,
                alpha: pred.alpha.as_ref().map(|a| a.row(i).to_vec()).unwrap_or_default(),
            }
        })
        .collect();
    let meta = Meta::new(file.meta.seed, cfg.hash());
    let mut out = meta.csv_comment();
    out.push_str("id,probability,flag,alpha1,alpha2,alpha3\n");
    for r in &rows {
        let mut fields = vec![r.id.clone(), fmt_f64(r.probability), r.flag.to_string()];
        fields.extend((0..n_alpha).map(|j| r.alpha.get(j).map_or_else(String::new, |&a| fmt_f64(a))));
        out.push_str(&csv_line(&fields));
    }
    write_file(&cfg.out.join("predictions.csv"), out.as_bytes())?;
    Ok(rows)
}
