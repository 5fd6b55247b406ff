//! Dataset splitting, Adam, and the mini-batched training loop with early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::roc_auc;
use crate::gin::ForwardCtx;
use crate::model::{GraphInputs, Model};
use crate::numcore::{bce_logits_value, Matrix, Tape};
use crate::params::ParamEntry;

const SPLIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const DROPOUT_STREAM: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub stratified: bool,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            stratified: true,
            seed,
        }
    }

    pub fn test(&self) -> f64 {
        1.0 - self.train - self.val
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Disjoint train/validation/test index sets of sizes
/// `(floor(train·n), floor(val·n), remainder)`, each sorted ascending.
pub fn split_dataset(labels: &[f64], spec: &SplitSpec) -> Result<Splits> {
    let n = labels.len();
    if !(spec.train > 0.0 && spec.val > 0.0 && spec.test() > 1e-12) {
        return Err(Error::Config(format!(
            "split fractions train={} val={} leave no test split",
            spec.train, spec.val
        )));
    }
    let n_train = (spec.train * n as f64).floor() as usize;
    let n_val = (spec.val * n as f64).floor() as usize;
    if n < 10 || n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::Config(format!("cannot split {n} rows into three non-empty sets")));
    }
    let mut rng = seeded(spec.seed, SPLIT_STREAM);
    let (train, val, test) = if spec.stratified {
        if let Some(y) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(Error::Data(format!("label {y} is not 0 or 1")));
        }
        let mut pos: Vec<usize> = (0..n).filter(|&i| labels[i] == 1.0).collect();
        let mut neg: Vec<usize> = (0..n).filter(|&i| labels[i] != 1.0).collect();
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        let rate = pos.len() as f64 / n as f64;
        let p_train = ((rate * n_train as f64).round() as usize).min(pos.len());
        let p_val = ((rate * n_val as f64).round() as usize).min(pos.len() - p_train);
        let (pt, rest) = pos.split_at(p_train);
        let (pv, ptest) = rest.split_at(p_val);
        let n_neg_train = n_train - p_train;
        let n_neg_val = n_val - p_val;
        if n_neg_train + n_neg_val > neg.len() {
            return Err(Error::Config("too few negatives for a stratified split".into()));
        }
        let (nt, rest) = neg.split_at(n_neg_train);
        let (nv, ntest) = rest.split_at(n_neg_val);
        ([pt, nt].concat(), [pv, nv].concat(), [ptest, ntest].concat())
    } else {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let (a, rest) = idx.split_at(n_train);
        let (b, c) = rest.split_at(n_val);
        (a.to_vec(), b.to_vec(), c.to_vec())
    };
    let sorted = |mut v: Vec<usize>| {
        v.sort_unstable();
        v
    };
    Ok(Splits {
        train: sorted(train),
        val: sorted(val),
        test: sorted(test),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[Matrix]) -> Self {
        let zeros: Vec<Matrix> = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step<'a>(
    params: impl IntoIterator<Item = &'a mut Matrix>,
    grads: &[Matrix],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    for (i, g) in grads.iter().enumerate() {
        if let Some(bad) = g.as_slice().iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of parameter {i} contains {bad} at Adam step {}",
                state.t + 1
            )));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let mut count = 0;
    for (i, p) in params.into_iter().enumerate() {
        count += 1;
        let g = &grads[i];
        if p.shape() != g.shape() {
            return Err(Error::shape("adam_step", p.shape(), g.shape()));
        }
        let m = state.m[i].as_mut_slice();
        let v = state.v[i].as_mut_slice();
        for (j, (w, &gj)) in p.as_mut_slice().iter_mut().zip(g.as_slice()).enumerate() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    if count != grads.len() {
        return Err(Error::Config(format!("{count} parameters for {} gradients", grads.len())));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub l2_coeff: f64,
    pub dropout: f64,
    pub early_stop_patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 32,
            max_epochs: 100,
            l2_coeff: 0.01,
            dropout: 0.2,
            early_stop_patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.learning_rate > 0.0 && self.learning_rate.is_finite(), "learning_rate must be positive"),
            (self.batch_size > 0, "batch_size must be positive"),
            (self.max_epochs > 0, "max_epochs must be positive"),
            (self.l2_coeff >= 0.0 && self.l2_coeff.is_finite(), "l2_coeff must be non-negative"),
            ((0.0..1.0).contains(&self.dropout), "dropout must lie in [0, 1)"),
            (self.early_stop_patience > 0, "early_stop_patience must be positive"),
            (
                self.early_stop_patience <= self.max_epochs,
                "early_stop_patience must not exceed max_epochs",
            ),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::Config((*msg).to_string())),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Eval-mode cross-entropy on the training rows, without the L2 term.
    pub train_loss: f64,
    pub val_loss: f64,
    /// NaN when the validation split holds a single class.
    pub val_auc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub steps: u64,
}

impl TrainOutcome {
    pub fn history_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,val_auc\n");
        for r in &self.history {
            s.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, r.val_loss, r.val_auc));
        }
        s
    }
}

/// Training objective `BCE(rows) + l2·Σ‖W‖²` and its gradient with respect to
/// every parameter of `model`, in store order.
pub fn objective(
    model: &Model,
    inputs: &GraphInputs,
    rows: &[usize],
    labels: &[f64],
    l2: f64,
    ctx: &mut ForwardCtx<'_, ChaCha8Rng>,
) -> Result<(f64, Vec<Matrix>)> {
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let out = model.forward(&mut tape, &bound, inputs, ctx)?;
    let y: Vec<f64> = rows.iter().map(|&i| labels[i]).collect();
    let picked = tape.gather_rows(out.logit, rows)?;
    let mut loss = tape.bce_logits(picked, &y)?;
    if l2 > 0.0 {
        let mut penalty = None;
        for (e, &v) in model.params.entries().iter().zip(bound.vars()) {
            if !e.decay {
                continue;
            }
            let sq = tape.sum_squares(v)?;
            penalty = Some(match penalty {
                None => sq,
                Some(p) => tape.add(p, sq)?,
            });
        }
        if let Some(p) = penalty {
            let scaled = tape.scale(p, l2)?;
            loss = tape.add(loss, scaled)?;
        }
    }
    let value = tape.value(loss).get(0, 0);
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("training loss is {value}")));
    }
    let mut grads = tape.backward(loss)?;
    let g = model
        .params
        .entries()
        .iter()
        .zip(bound.vars())
        .map(|(e, &v)| grads.take(v).unwrap_or_else(|| Matrix::zeros(e.value.rows(), e.value.cols())))
        .collect();
    Ok((value, g))
}

fn subset(values: &[f64], rows: &[usize]) -> Vec<f64> {
    rows.iter().map(|&i| values[i]).collect()
}

/// Trains `model` in place and leaves it at the best-validation snapshot.
pub fn train_model(
    model: &mut Model,
    inputs: &GraphInputs,
    labels: &[f64],
    splits: &Splits,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if labels.len() != inputs.node_count() {
        return Err(Error::Data(format!(
            "{} labels for {} nodes",
            labels.len(),
            inputs.node_count()
        )));
    }
    if splits.train.is_empty() || splits.val.is_empty() {
        return Err(Error::Config("training needs non-empty train and validation splits".into()));
    }
    let adam = AdamConfig::with_lr(cfg.learning_rate);
    let mut state = AdamState::new(&model.params.values());
    let mut shuffle_rng = seeded(cfg.seed, SHUFFLE_STREAM);
    let mut dropout_rng = seeded(cfg.seed, DROPOUT_STREAM);
    let mut order = splits.train.clone();
    let val_y = subset(labels, &splits.val);
    let train_y = subset(labels, &splits.train);

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Vec<ParamEntry>)> = None;
    let mut since_best = 0;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut ctx = ForwardCtx {
                training: true,
                dropout: cfg.dropout,
                rng: &mut dropout_rng,
            };
            let (_, grads) = objective(model, inputs, batch, labels, cfg.l2_coeff, &mut ctx).map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("epoch {epoch}, step {}: {m}", step + 1)),
                other => other,
            })?;
            adam_step(model.params.values_mut(), &grads, &mut state, &adam)?;
        }

        let pred = model.predict(inputs)?;
        let train_loss = bce_logits_value(&subset(&pred.logits, &splits.train), &train_y)?;
        let val_loss = bce_logits_value(&subset(&pred.logits, &splits.val), &val_y)?;
        let val_auc = roc_auc(&subset(&pred.probabilities, &splits.val), &val_y).unwrap_or(f64::NAN);
        log::debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5} auc {val_auc:.4}");
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_auc,
        });
        if best.as_ref().is_none_or(|b| val_loss < b.0) {
            best = Some((val_loss, epoch, model.params.entries().to_vec()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                break;
            }
        }
    }
    let (best_val_loss, best_epoch, snapshot) = best.expect("at least one epoch");
    model.params.restore(&snapshot)?;
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_val_loss,
        steps: state.t,
    })
}

/// Logistic regression on structured features with the same training loop.
pub fn train_logreg(
    x_structured: &Matrix,
    labels: &[f64],
    splits: &Splits,
    cfg: &TrainConfig,
) -> Result<(Model, TrainOutcome)> {
    let inputs = GraphInputs::features_only(x_structured.clone());
    let spec = crate::model::ModelSpec::new(crate::model::Variant::Lr, inputs.dims());
    let mut model = Model::new(spec, cfg.seed)?;
    let outcome = train_model(&mut model, &inputs, labels, splits, cfg)?;
    Ok((model, outcome))
}
