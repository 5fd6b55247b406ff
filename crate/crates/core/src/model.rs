//! Model variants: baselines, single/bi-channel GINs and the fused models.

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::EnterpriseGraph;
use crate::fusion::{self, AttentionParams, ClassifierParams, ConcatParams, GateParams};
use crate::gin::{channel_encode, gcn_layer_forward, ChannelKind, ForwardCtx, GinChannel, DEFAULT_EMBED, DEFAULT_HIDDEN};
use crate::numcore::{Matrix, SparseAggregator, Tape, Var};
use crate::params::{Bound, ParamId, ParamStore};

use ChannelKind::{Graph as G, Structured as S, Text as T};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "lr")]
    Lr,
    #[serde(rename = "gcn")]
    Gcn,
    #[serde(rename = "single-s")]
    SingleS,
    #[serde(rename = "single-t")]
    SingleT,
    #[serde(rename = "single-g")]
    SingleG,
    #[serde(rename = "bi-st")]
    BiSt,
    #[serde(rename = "bi-sg")]
    BiSg,
    #[serde(rename = "bi-tg")]
    BiTg,
    #[serde(rename = "v1")]
    V1,
    #[serde(rename = "v2")]
    V2,
    #[serde(rename = "v3")]
    V3,
    #[serde(rename = "v3-no-s")]
    V3NoS,
    #[serde(rename = "v3-no-t")]
    V3NoT,
    #[serde(rename = "v3-no-g")]
    V3NoG,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionKind {
    None,
    Mean,
    Concat,
    AttentionGate,
}

impl Variant {
    pub const ALL: [Variant; 14] = [
        Variant::Lr,
        Variant::Gcn,
        Variant::SingleS,
        Variant::SingleT,
        Variant::SingleG,
        Variant::BiSt,
        Variant::BiSg,
        Variant::BiTg,
        Variant::V1,
        Variant::V2,
        Variant::V3,
        Variant::V3NoS,
        Variant::V3NoT,
        Variant::V3NoG,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Variant::Lr => "lr",
            Variant::Gcn => "gcn",
            Variant::SingleS => "single-s",
            Variant::SingleT => "single-t",
            Variant::SingleG => "single-g",
            Variant::BiSt => "bi-st",
            Variant::BiSg => "bi-sg",
            Variant::BiTg => "bi-tg",
            Variant::V1 => "v1",
            Variant::V2 => "v2",
            Variant::V3 => "v3",
            Variant::V3NoS => "v3-no-s",
            Variant::V3NoT => "v3-no-t",
            Variant::V3NoG => "v3-no-g",
        }
    }

    /// Row label used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Lr => "Logistic Regression (LR)",
            Variant::Gcn => "Graph Convolutional Network (GCN)",
            Variant::SingleS => "Single-Channel GIN (Structured)",
            Variant::SingleT => "Single-Channel GIN (Text)",
            Variant::SingleG => "Single-Channel GIN (Graph)",
            Variant::BiSt => "Bi-Channel GIN (Structured + Text)",
            Variant::BiSg => "Bi-Channel GIN (Structured + Graph)",
            Variant::BiTg => "Bi-Channel GIN (Text + Graph)",
            Variant::V1 => "Multi-Channel GIN (V1): Simple average fusion",
            Variant::V2 => "Multi-Channel GIN (V2): Concatenation + FC",
            Variant::V3 => "Multi-Channel GIN (V3): GIN + gating + attention",
            Variant::V3NoS => "Without Structured Channel",
            Variant::V3NoT => "Without Text Channel",
            Variant::V3NoG => "Without Graph Channel",
        }
    }

    pub fn channels(self) -> &'static [ChannelKind] {
        match self {
            Variant::Lr => &[S],
            Variant::Gcn => &[S, T, G],
            Variant::SingleS => &[S],
            Variant::SingleT => &[T],
            Variant::SingleG => &[G],
            Variant::BiSt => &[S, T],
            Variant::BiSg => &[S, G],
            Variant::BiTg => &[T, G],
            Variant::V1 | Variant::V2 | Variant::V3 => &[S, T, G],
            Variant::V3NoS => &[T, G],
            Variant::V3NoT => &[S, G],
            Variant::V3NoG => &[S, T],
        }
    }

    pub fn fusion(self) -> FusionKind {
        match self {
            Variant::Lr | Variant::Gcn | Variant::SingleS | Variant::SingleT | Variant::SingleG => FusionKind::None,
            Variant::BiSt | Variant::BiSg | Variant::BiTg | Variant::V2 => FusionKind::Concat,
            Variant::V1 => FusionKind::Mean,
            Variant::V3 | Variant::V3NoS | Variant::V3NoT | Variant::V3NoG => FusionKind::AttentionGate,
        }
    }

    pub fn uses_text(self) -> bool {
        self.channels().contains(&T)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let k = s.trim().to_ascii_lowercase().replace('_', "-");
        Variant::ALL
            .into_iter()
            .find(|v| v.key() == k)
            .ok_or_else(|| Error::Config(format!("unknown model variant `{s}`")))
    }
}

/// Overrides for the attention/gate fusion, used by equivalence checks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionOverride {
    /// Replace learned attention with uniform weights.
    pub freeze_uniform_alpha: bool,
    /// Skip the gating unit.
    pub open_gate: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDims {
    pub structured: usize,
    pub text: usize,
    pub industry: usize,
}

impl InputDims {
    pub fn of(&self, kind: ChannelKind) -> usize {
        match kind {
            S => self.structured,
            T => self.text,
            G => self.industry,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub hidden: usize,
    pub embed: usize,
    pub dims: InputDims,
    #[serde(default)]
    pub fusion_override: FusionOverride,
}

impl ModelSpec {
    pub fn new(variant: Variant, dims: InputDims) -> Self {
        Self {
            variant,
            hidden: DEFAULT_HIDDEN,
            embed: DEFAULT_EMBED,
            dims,
            fusion_override: FusionOverride::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.embed == 0 {
            return Err(Error::Config("hidden and embedding widths must be positive".into()));
        }
        for &c in self.variant.channels() {
            if self.dims.of(c) == 0 {
                return Err(Error::Config(format!(
                    "variant {} needs {c} features but the input width is 0",
                    self.variant
                )));
            }
        }
        if self.fusion_override != FusionOverride::default() && self.variant.fusion() != FusionKind::AttentionGate {
            return Err(Error::Config(format!(
                "fusion overrides apply only to attention-gated variants, not {}",
                self.variant
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Body {
    Logistic,
    Gcn { layers: [ParamId; 3] },
    Gin {
        channels: Vec<GinChannel>,
        concat: Option<ConcatParams>,
        attention: Option<AttentionParams>,
        gate: Option<GateParams>,
    },
}

/// Parameter layout derived deterministically from a [`ModelSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    body: Body,
    head: ClassifierParams,
}

impl Architecture {
    pub fn build(spec: &ModelSpec, store: &mut ParamStore) -> Result<Self> {
        spec.validate()?;
        let (h, d) = (spec.hidden, spec.embed);
        let v = spec.variant;
        let (body, head_in) = match v {
            Variant::Lr => (Body::Logistic, spec.dims.structured),
            Variant::Gcn => {
                let d_in = spec.dims.structured + spec.dims.text + spec.dims.industry;
                let layers = [
                    store.glorot("gcn.0.w", d_in, h),
                    store.glorot("gcn.1.w", h, h),
                    store.glorot("gcn.2.w", h, d),
                ];
                (Body::Gcn { layers }, d)
            }
            _ => {
                let channels: Vec<GinChannel> = v
                    .channels()
                    .iter()
                    .map(|&c| GinChannel::init(store, c, spec.dims.of(c), h, d))
                    .collect();
                let m = channels.len();
                let (mut concat, mut attention, mut gate) = (None, None, None);
                match v.fusion() {
                    FusionKind::Concat => concat = Some(ConcatParams::init(store, m * d, d)),
                    FusionKind::AttentionGate => {
                        if !spec.fusion_override.freeze_uniform_alpha {
                            attention = Some(AttentionParams::init(store, d));
                        }
                        if !spec.fusion_override.open_gate {
                            gate = Some(GateParams::init(store, d));
                        }
                    }
                    FusionKind::None | FusionKind::Mean => {}
                }
                (
                    Body::Gin {
                        channels,
                        concat,
                        attention,
                        gate,
                    },
                    d,
                )
            }
        };
        let head = ClassifierParams::init(store, head_in);
        Ok(Self { body, head })
    }
}

/// Node inputs for one graph.
#[derive(Clone, Debug)]
pub struct GraphInputs {
    structured: Arc<Matrix>,
    text: Option<Arc<Matrix>>,
    industry: Arc<Matrix>,
    pub neighbor_sum: Arc<SparseAggregator>,
    pub propagation: Arc<SparseAggregator>,
    stacked: OnceLock<Arc<Matrix>>,
}

impl GraphInputs {
    pub fn new(structured: Matrix, text: Option<Matrix>, industry: Matrix, graph: &EnterpriseGraph) -> Result<Self> {
        let n = structured.rows();
        let rows_ok = graph.node_count() == n
            && industry.rows() == n
            && text.as_ref().is_none_or(|t| t.rows() == n);
        if !rows_ok {
            return Err(Error::Data(format!(
                "feature blocks and graph disagree on the node count ({n} structured rows, {} nodes)",
                graph.node_count()
            )));
        }
        Ok(Self {
            structured: Arc::new(structured),
            text: text.map(Arc::new),
            industry: Arc::new(industry),
            neighbor_sum: graph.neighbor_sum_operator(),
            propagation: graph.gcn_operator(),
            stacked: OnceLock::new(),
        })
    }

    /// Structured features alone with an edgeless graph.
    pub fn features_only(structured: Matrix) -> Self {
        let n = structured.rows();
        let empty = EnterpriseGraph::from_edges(n, []).expect("edgeless graph");
        Self::new(structured, None, Matrix::zeros(n, 0), &empty).expect("consistent shapes")
    }

    pub fn node_count(&self) -> usize {
        self.structured.rows()
    }

    pub fn structured(&self) -> &Matrix {
        &self.structured
    }

    pub fn text(&self) -> Option<&Matrix> {
        self.text.as_deref()
    }

    pub fn industry(&self) -> &Matrix {
        &self.industry
    }

    pub fn dims(&self) -> InputDims {
        InputDims {
            structured: self.structured.cols(),
            text: self.text.as_ref().map_or(0, |t| t.cols()),
            industry: self.industry.cols(),
        }
    }

    fn channel_matrix(&self, kind: ChannelKind) -> Result<&Arc<Matrix>> {
        match kind {
            S => Ok(&self.structured),
            T => self
                .text
                .as_ref()
                .ok_or_else(|| Error::Data("text channel requested but no documents were provided".into())),
            G => Ok(&self.industry),
        }
    }

    /// `[structured | text | industry]`, built once.
    fn stacked(&self) -> Result<Arc<Matrix>> {
        let text = self.channel_matrix(T)?;
        let m = self.stacked.get_or_init(|| {
            let parts: [&Matrix; 3] = [&self.structured, text, &self.industry];
            Arc::new(Matrix::hconcat(&parts).expect("row counts checked at construction"))
        });
        Ok(Arc::clone(m))
    }
}

pub struct ForwardOutput {
    pub logit: Var,
    pub prob: Var,
    /// Per-node channel weights for attention-fused variants.
    pub alpha: Option<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ParamStore,
    arch: Architecture,
}

impl Model {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new(seed);
        let arch = Architecture::build(&spec, &mut params)?;
        Ok(Self { spec, params, arch })
    }

    /// Channel embeddings for every node, in `variant.channels()` order.
    pub fn encode<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        inputs: &GraphInputs,
        ctx: &mut ForwardCtx<'_, R>,
    ) -> Result<Vec<Var>> {
        let Body::Gin { channels, .. } = &self.arch.body else {
            return Ok(Vec::new());
        };
        channels
            .iter()
            .map(|ch| {
                let x = tape.constant_shared(Arc::clone(inputs.channel_matrix(ch.kind)?));
                channel_encode(tape, x, &inputs.neighbor_sum, ch, bound, ctx)
            })
            .collect()
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        inputs: &GraphInputs,
        ctx: &mut ForwardCtx<'_, R>,
    ) -> Result<ForwardOutput> {
        let dims = inputs.dims();
        for &c in self.spec.variant.channels() {
            inputs.channel_matrix(c)?;
            let want = self.spec.dims.of(c);
            if dims.of(c) != want {
                return Err(Error::Incompatible(format!(
                    "{c} input width {} differs from the model's {want}",
                    dims.of(c)
                )));
            }
        }
        let n = inputs.node_count();
        let mut alpha = None;
        let rep = match &self.arch.body {
            Body::Logistic => tape.constant_shared(Arc::clone(&inputs.structured)),
            Body::Gcn { layers } => {
                let mut h = tape.constant_shared(inputs.stacked()?);
                for (k, &w) in layers.iter().enumerate() {
                    h = gcn_layer_forward(tape, h, &inputs.propagation, bound.var(w))?;
                    if k + 1 < layers.len() {
                        h = tape.dropout(h, ctx.dropout, ctx.training, ctx.rng)?;
                    }
                }
                h
            }
            Body::Gin {
                concat,
                attention,
                gate,
                ..
            } => {
                let hs = self.encode(tape, bound, inputs, ctx)?;
                match self.spec.variant.fusion() {
                    FusionKind::None => hs[0],
                    FusionKind::Mean => fusion::fuse_v1(tape, &hs)?,
                    FusionKind::Concat => {
                        fusion::fuse_concat(tape, &hs, concat.as_ref().expect("concat params"), bound)?
                    }
                    FusionKind::AttentionGate => {
                        let a = match attention {
                            Some(p) => fusion::attention_weights(tape, &hs, p, bound)?,
                            None => fusion::uniform_weights(tape, n, hs.len())?,
                        };
                        alpha = Some(a);
                        let fused = fusion::fuse_attention(tape, &hs, a)?;
                        match gate {
                            Some(p) => fusion::gate(tape, fused, p, bound)?,
                            None => fused,
                        }
                    }
                }
            }
        };
        let logit = fusion::logit(tape, rep, &self.arch.head, bound)?;
        let prob = fusion::probability(tape, logit)?;
        Ok(ForwardOutput { logit, prob, alpha })
    }

    /// Eval-mode probabilities and attention weights for all nodes.
    pub fn predict(&self, inputs: &GraphInputs) -> Result<Prediction> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ctx = ForwardCtx {
            training: false,
            dropout: 0.0,
            rng: &mut rng,
        };
        let out = self.forward(&mut tape, &bound, inputs, &mut ctx)?;
        Ok(Prediction {
            logits: tape.value(out.logit).as_slice().to_vec(),
            probabilities: tape.value(out.prob).as_slice().to_vec(),
            alpha: out.alpha.map(|a| tape.value(a).clone()),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub alpha: Option<Matrix>,
}
