//! Channel fusion strategies, the sigmoid classifier head and the loss.

use crate::error::{Error, Result};
use crate::numcore::{Activation, Matrix, Tape, Var};
use crate::params::{Bound, ParamId, ParamStore};

pub const PROB_CLAMP: f64 = 1e-7;

/// Shared scorer `score(h) = w·h + b` applied to every channel embedding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionParams {
    pub w: ParamId,
    pub b: ParamId,
}

impl AttentionParams {
    pub fn init(store: &mut ParamStore, d: usize) -> Self {
        Self {
            w: store.glorot("fusion.att.w", d, 1),
            b: store.bias("fusion.att.b", 1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GateParams {
    pub w: ParamId,
    pub b: ParamId,
}

impl GateParams {
    pub fn init(store: &mut ParamStore, d: usize) -> Self {
        Self {
            w: store.glorot("fusion.gate.w", d, d),
            b: store.bias("fusion.gate.b", d),
        }
    }
}

/// Affine map used by concatenation fusion.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConcatParams {
    pub w: ParamId,
    pub b: ParamId,
}

impl ConcatParams {
    pub fn init(store: &mut ParamStore, d_in: usize, d_out: usize) -> Self {
        Self {
            w: store.glorot("fusion.fc.w", d_in, d_out),
            b: store.bias("fusion.fc.b", d_out),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClassifierParams {
    pub w: ParamId,
    pub b: ParamId,
}

impl ClassifierParams {
    pub fn init(store: &mut ParamStore, d: usize) -> Self {
        Self {
            w: store.glorot("head.w", d, 1),
            b: store.bias("head.b", 1),
        }
    }
}

fn check_widths(tape: &Tape, op: &'static str, hs: &[Var]) -> Result<(usize, usize)> {
    let Some(&first) = hs.first() else {
        return Err(Error::Config(format!("{op}: no channels")));
    };
    let shape = tape.shape(first);
    for &h in &hs[1..] {
        if tape.shape(h) != shape {
            return Err(Error::shape(op, shape, tape.shape(h)));
        }
    }
    Ok(shape)
}

/// Per-node softmax over channel scores; returns an `n×m` matrix of α.
pub fn attention_weights(tape: &mut Tape, hs: &[Var], p: &AttentionParams, bound: &Bound) -> Result<Var> {
    check_widths(tape, "attention_weights", hs)?;
    let scores = hs
        .iter()
        .map(|&h| tape.affine(h, bound.var(p.w), Some(bound.var(p.b))))
        .collect::<Result<Vec<_>>>()?;
    let s = tape.concat_cols(&scores)?;
    tape.row_softmax(s)
}

/// `Σ_i α_i h_i` per node.
pub fn fuse_attention(tape: &mut Tape, hs: &[Var], alpha: Var) -> Result<Var> {
    let (n, _) = check_widths(tape, "fuse_attention", hs)?;
    if tape.shape(alpha) != (n, hs.len()) {
        return Err(Error::shape("fuse_attention", (n, hs.len()), tape.shape(alpha)));
    }
    let mut acc: Option<Var> = None;
    for (i, &h) in hs.iter().enumerate() {
        let a = tape.column(alpha, i)?;
        let term = tape.scale_rows(h, a)?;
        acc = Some(match acc {
            None => term,
            Some(prev) => tape.add(prev, term)?,
        });
    }
    Ok(acc.expect("at least one channel"))
}

/// Uniform weights `1/m` as a constant `n×m` matrix.
pub fn uniform_weights(tape: &mut Tape, n: usize, m: usize) -> Result<Var> {
    Ok(tape.constant(Matrix::filled(n, m, 1.0 / m as f64)?))
}

/// Uniform mean of the channel embeddings.
pub fn fuse_v1(tape: &mut Tape, hs: &[Var]) -> Result<Var> {
    let (n, _) = check_widths(tape, "fuse_v1", hs)?;
    let alpha = uniform_weights(tape, n, hs.len())?;
    fuse_attention(tape, hs, alpha)
}

/// `relu(fc([h_1; …; h_m]))`.
pub fn fuse_concat(tape: &mut Tape, hs: &[Var], p: &ConcatParams, bound: &Bound) -> Result<Var> {
    check_widths(tape, "fuse_concat", hs)?;
    let cat = tape.concat_cols(hs)?;
    let z = tape.affine(cat, bound.var(p.w), Some(bound.var(p.b)))?;
    tape.activate(z, Activation::Relu)
}

/// `h ⊙ σ(W_g h + b_g)`.
pub fn gate(tape: &mut Tape, h: Var, p: &GateParams, bound: &Bound) -> Result<Var> {
    let z = tape.affine(h, bound.var(p.w), Some(bound.var(p.b)))?;
    let s = tape.activate(z, Activation::Sigmoid)?;
    tape.hadamard(h, s)
}

pub fn logit(tape: &mut Tape, h: Var, p: &ClassifierParams, bound: &Bound) -> Result<Var> {
    tape.affine(h, bound.var(p.w), Some(bound.var(p.b)))
}

/// Sigmoid probability clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub fn predict_proba(tape: &mut Tape, h: Var, p: &ClassifierParams, bound: &Bound) -> Result<Var> {
    let z = logit(tape, h, p, bound)?;
    probability(tape, z)
}

pub fn probability(tape: &mut Tape, logit: Var) -> Result<Var> {
    let s = tape.activate(logit, Activation::Sigmoid)?;
    tape.clamp(s, PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Mean binary cross-entropy over the rows in `rows`.
pub fn bce_loss(tape: &mut Tape, probs: Var, rows: &[usize], labels: &[f64]) -> Result<Var> {
    let picked = tape.gather_rows(probs, rows)?;
    tape.bce(picked, labels)
}
