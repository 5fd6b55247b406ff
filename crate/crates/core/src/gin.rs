//! GIN channel encoders and the GCN baseline layer.
//!
//! A GIN layer computes `MLP((1 + ε)·h_v + Σ_{u ∈ N(v)} h_u)` where the MLP is
//! affine → ReLU → affine and ε is a learnable per-layer scalar. A channel
//! stacks three layers and applies dropout after every layer output.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Activation, SparseAggregator, Tape, Var};
use crate::params::{Bound, ParamId, ParamStore};

pub const GIN_LAYERS: usize = 3;
pub const EPSILON_INIT: f64 = 0.1;
pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_EMBED: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Structured,
    Text,
    Graph,
}

impl ChannelKind {
    pub const ALL: [ChannelKind; 3] = [ChannelKind::Structured, ChannelKind::Text, ChannelKind::Graph];

    pub fn letter(self) -> char {
        match self {
            ChannelKind::Structured => 'S',
            ChannelKind::Text => 'T',
            ChannelKind::Graph => 'G',
        }
    }
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChannelKind::Structured => "structured",
            ChannelKind::Text => "text",
            ChannelKind::Graph => "graph",
        })
    }
}

impl FromStr for ChannelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "structured" | "S" => Ok(ChannelKind::Structured),
            "text" | "T" => Ok(ChannelKind::Text),
            "graph" | "G" => Ok(ChannelKind::Graph),
            _ => Err(Error::Config(format!("unknown channel `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GinLayerParams {
    pub epsilon: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl GinLayerParams {
    pub fn init(store: &mut ParamStore, prefix: &str, d_in: usize, hidden: usize, d_out: usize) -> Self {
        Self {
            epsilon: store.scalar(format!("{prefix}.eps"), EPSILON_INIT),
            w1: store.glorot(format!("{prefix}.w1"), d_in, hidden),
            b1: store.bias(format!("{prefix}.b1"), hidden),
            w2: store.glorot(format!("{prefix}.w2"), hidden, d_out),
            b2: store.bias(format!("{prefix}.b2"), d_out),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GinChannel {
    pub kind: ChannelKind,
    pub layers: [GinLayerParams; GIN_LAYERS],
}

impl GinChannel {
    pub fn init(store: &mut ParamStore, kind: ChannelKind, d_in: usize, hidden: usize, embed: usize) -> Self {
        let layers = std::array::from_fn(|k| {
            let width_in = if k == 0 { d_in } else { embed };
            GinLayerParams::init(store, &format!("gin.{kind}.{k}"), width_in, hidden, embed)
        });
        Self { kind, layers }
    }
}

/// Per-forward settings shared by all layers.
pub struct ForwardCtx<'a, R: Rng + ?Sized> {
    pub training: bool,
    pub dropout: f64,
    pub rng: &'a mut R,
}

/// One GIN layer without dropout.
pub fn gin_layer_forward(
    tape: &mut Tape,
    h: Var,
    neighbor_sum: &Arc<SparseAggregator>,
    p: &GinLayerParams,
    bound: &Bound,
) -> Result<Var> {
    let (n, _) = tape.shape(h);
    if n != neighbor_sum.node_count() {
        return Err(Error::shape("gin_layer_forward", tape.shape(h), (neighbor_sum.node_count(), 0)));
    }
    // The first affine map is linear, so it is applied before aggregation:
    // ((1+ε)h + Σh_u)W = (1+ε)hW + Σ(hW)_u.
    let proj = tape.affine(h, bound.var(p.w1), None)?;
    let agg = tape.aggregate(proj, neighbor_sum)?;
    let mixed = tape.self_scale_add(proj, bound.var(p.epsilon), agg)?;
    let z = tape.add_bias(mixed, bound.var(p.b1))?;
    let z = tape.activate(z, Activation::Relu)?;
    tape.affine(z, bound.var(p.w2), Some(bound.var(p.b2)))
}

/// Three stacked GIN layers, dropout after each when training.
pub fn channel_encode<R: Rng + ?Sized>(
    tape: &mut Tape,
    features: Var,
    neighbor_sum: &Arc<SparseAggregator>,
    channel: &GinChannel,
    bound: &Bound,
    ctx: &mut ForwardCtx<'_, R>,
) -> Result<Var> {
    let mut h = features;
    for layer in &channel.layers {
        h = gin_layer_forward(tape, h, neighbor_sum, layer, bound)?;
        h = tape.dropout(h, ctx.dropout, ctx.training, ctx.rng)?;
    }
    Ok(h)
}

/// `relu(D̂^{-1/2} Â D̂^{-1/2} H W)` with `Â = A + I`; `propagation` comes from
/// [`crate::graph::EnterpriseGraph::gcn_operator`].
pub fn gcn_layer_forward(tape: &mut Tape, h: Var, propagation: &Arc<SparseAggregator>, w: Var) -> Result<Var> {
    let hw = tape.matmul(h, w)?;
    let prop = tape.aggregate(hw, propagation)?;
    tape.activate(prop, Activation::Relu)
}
