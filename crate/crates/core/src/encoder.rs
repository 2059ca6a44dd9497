//! Shared feature extractors: plain graph convolution, graph convolution with
//! relation-type embeddings, an n-gram CNN, and their combinations.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::DepGraph;
use crate::error::{Error, Result};
use crate::nn::{glorot_bound, Ctx, Linear};
use crate::params::{ParamId, ParamStore};
use crate::tape::Var;
use crate::tensor::Tensor;

/// Bound for the initial relation look-up table.
pub const RELATION_INIT_BOUND: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderMode {
    CnnOnly,
    VanillaGcn,
    Dregcn,
    DregcnPlusCnn,
}

impl EncoderMode {
    pub const ALL: [EncoderMode; 4] = [
        EncoderMode::CnnOnly,
        EncoderMode::VanillaGcn,
        EncoderMode::Dregcn,
        EncoderMode::DregcnPlusCnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EncoderMode::CnnOnly => "cnn_only",
            EncoderMode::VanillaGcn => "vanilla_gcn",
            EncoderMode::Dregcn => "dregcn",
            EncoderMode::DregcnPlusCnn => "dregcn_plus_cnn",
        }
    }

    pub fn uses_graph(self) -> bool {
        self != EncoderMode::CnnOnly
    }

    pub fn uses_relations(self) -> bool {
        matches!(self, EncoderMode::Dregcn | EncoderMode::DregcnPlusCnn)
    }

    pub fn uses_cnn(self) -> bool {
        matches!(self, EncoderMode::CnnOnly | EncoderMode::DregcnPlusCnn)
    }
}

impl FromStr for EncoderMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        EncoderMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown encoder mode `{s}` (expected cnn_only, vanilla_gcn, dregcn or dregcn_plus_cnn)"))
    }
}

impl fmt::Display for EncoderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub mode: EncoderMode,
    pub gcn_layers: usize,
    pub cnn_layers: usize,
    pub kernel_widths: Vec<usize>,
    /// Feature size `d` of graph layers and of the shared sequence.
    pub hidden: usize,
    /// Relation feature size `m`.
    pub relation_dim: usize,
    pub normalize_adjacency: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            mode: EncoderMode::DregcnPlusCnn,
            gcn_layers: 2,
            cnn_layers: 2,
            kernel_widths: vec![3, 5],
            hidden: 64,
            relation_dim: 16,
            normalize_adjacency: false,
        }
    }
}

/// `h' = ReLU(A·H·Wᵀ + b)` with a square `W`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GcnLayer {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// `h'_i = ReLU(Σ_j Σ_k A_ij Q_ijk W [h_j; R[k]] + b)` with `W` of shape
/// `d × (d + m)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DreGcnLayer {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Trainable `|N| × m` relation features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationTable {
    pub table: ParamId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnnLayer {
    /// One convolution per kernel width, each a linear map over a window.
    pub convs: Vec<(usize, Linear)>,
    pub projection: Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnnEncoder {
    pub layers: Vec<CnnLayer>,
}

impl GcnLayer {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d: usize, rng: &mut R) -> Self {
        let weight = store.add(format!("{name}.weight"), Tensor::uniform(&[d, d], glorot_bound(d, d), rng));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[d]));
        GcnLayer { weight, bias }
    }
}

impl DreGcnLayer {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d: usize, m: usize, rng: &mut R) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::uniform(&[d, d + m], glorot_bound(d + m, d), rng),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[d]));
        DreGcnLayer { weight, bias }
    }
}

impl RelationTable {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, types: usize, m: usize, rng: &mut R) -> Self {
        let table = store.add("relations", Tensor::uniform(&[types, m], RELATION_INIT_BOUND, rng));
        RelationTable { table }
    }
}

impl CnnEncoder {
    /// Length-preserving stack. Every layer maps its input through parallel
    /// convolutions (one per odd width, `channels` outputs each, ReLU) and
    /// projects the concatenation to `out_dim`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        in_dim: usize,
        out_dim: usize,
        layers: usize,
        widths: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        if let Some(w) = widths.iter().find(|w| **w % 2 == 0) {
            return Err(Error::Contract(format!("kernel width {w} must be odd")));
        }
        let channels = out_dim;
        let mut built = Vec::with_capacity(layers);
        let mut width_in = in_dim;
        for l in 0..layers {
            let convs = widths
                .iter()
                .map(|&w| (w, Linear::new(store, &format!("cnn.{l}.conv{w}"), w * width_in, channels, rng)))
                .collect();
            let projection = Linear::new(store, &format!("cnn.{l}.proj"), channels * widths.len(), out_dim, rng);
            built.push(CnnLayer { convs, projection });
            width_in = out_dim;
        }
        Ok(CnnEncoder { layers: built })
    }
}

/// Per-sentence graph operators derived from a [`DepGraph`].
#[derive(Clone, Debug, PartialEq)]
pub struct GraphOperators {
    /// `A`, or its symmetric degree normalisation.
    pub propagation: Tensor,
    /// `P[i][j] = Â_ij · Σ_k Q_ijk`.
    pub neighbour: Tensor,
    /// `G[i][k] = Σ_j Â_ij Q_ijk`.
    pub relation: Tensor,
}

impl GraphOperators {
    pub fn from_graph(graph: &DepGraph, normalize: bool) -> Result<Self> {
        graph.validate()?;
        let (neighbour, relation) = graph.relational_operators(normalize);
        Ok(GraphOperators {
            propagation: graph.propagation_matrix(normalize),
            neighbour,
            relation,
        })
    }
}

fn check_square(op: &'static str, h: &Tensor, a: &Tensor) -> Result<()> {
    if a.shape().len() != 2 || a.rows() != a.cols() || a.rows() != h.rows() {
        return Err(Error::dim(op, h.shape(), a.shape()));
    }
    Ok(())
}

pub fn gcn_layer_forward(ctx: &mut Ctx<'_>, h: Var, adjacency: &Tensor, layer: &GcnLayer) -> Result<Var> {
    check_square("gcn layer", ctx.value(h), adjacency)?;
    let a = ctx.input(adjacency.clone());
    let ah = ctx.tape.matmul(a, h)?;
    let w = ctx.param(layer.weight);
    let b = ctx.param(layer.bias);
    let pre = ctx.tape.linear(ah, w, Some(b))?;
    Ok(ctx.tape.relu(pre))
}

/// Relational layer evaluated as `ReLU([P·H ; G·R] · Wᵀ + b)`, which expands
/// the double sum over neighbours and relation types into two products.
pub fn dregcn_layer_forward(
    ctx: &mut Ctx<'_>,
    h: Var,
    ops: &GraphOperators,
    layer: &DreGcnLayer,
    table: &RelationTable,
) -> Result<Var> {
    check_square("dregcn layer", ctx.value(h), &ops.neighbour)?;
    let r = ctx.param(table.table);
    if ops.relation.cols() != ctx.value(r).rows() {
        return Err(Error::Contract(format!(
            "graph has {} relation types but the table has {} rows",
            ops.relation.cols(),
            ctx.value(r).rows()
        )));
    }
    let p = ctx.input(ops.neighbour.clone());
    let g = ctx.input(ops.relation.clone());
    let ph = ctx.tape.matmul(p, h)?;
    let gr = ctx.tape.matmul(g, r)?;
    let x = ctx.tape.concat(ph, gr)?;
    let w = ctx.param(layer.weight);
    let b = ctx.param(layer.bias);
    let pre = ctx.tape.linear(x, w, Some(b))?;
    Ok(ctx.tape.relu(pre))
}

pub fn cnn_encoder_forward(ctx: &mut Ctx<'_>, x: Var, cnn: &CnnEncoder) -> Result<Var> {
    let mut h = x;
    for layer in &cnn.layers {
        let mut branches = Vec::with_capacity(layer.convs.len());
        for (width, conv) in &layer.convs {
            let windows = ctx.tape.unfold(h, *width)?;
            let c = conv.forward(ctx, windows)?;
            branches.push(ctx.tape.relu(c));
        }
        let joined = ctx.tape.concat_all(&branches)?;
        h = layer.projection.forward(ctx, joined)?;
    }
    Ok(h)
}

/// Parameters of the whole encoder for one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub input_projection: Option<Linear>,
    pub gcn: Vec<GcnLayer>,
    pub dregcn: Vec<DreGcnLayer>,
    pub relations: Option<RelationTable>,
    pub cnn: Option<CnnEncoder>,
    pub combine: Option<Linear>,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        config: &EncoderConfig,
        input_dim: usize,
        relation_types: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let d = config.hidden;
        let mode = config.mode;
        let mut enc = Encoder {
            config: config.clone(),
            input_projection: None,
            gcn: Vec::new(),
            dregcn: Vec::new(),
            relations: None,
            cnn: None,
            combine: None,
        };
        if mode.uses_graph() {
            enc.input_projection = Some(Linear::new(store, "input_proj", input_dim, d, rng));
            if mode.uses_relations() {
                enc.relations = Some(RelationTable::new(store, relation_types, config.relation_dim, rng));
                enc.dregcn = (0..config.gcn_layers)
                    .map(|l| DreGcnLayer::new(store, &format!("dregcn.{l}"), d, config.relation_dim, rng))
                    .collect();
            } else {
                enc.gcn = (0..config.gcn_layers)
                    .map(|l| GcnLayer::new(store, &format!("gcn.{l}"), d, rng))
                    .collect();
            }
        }
        if mode.uses_cnn() {
            enc.cnn = Some(CnnEncoder::new(
                store,
                input_dim,
                d,
                config.cnn_layers,
                &config.kernel_widths,
                rng,
            )?);
        }
        if mode == EncoderMode::DregcnPlusCnn {
            enc.combine = Some(Linear::new(store, "combine", 2 * d, d, rng));
        }
        Ok(enc)
    }

    /// Width of the shared sequence.
    pub fn output_dim(&self) -> usize {
        self.config.hidden
    }

    /// Token embeddings `[n × d_in]` to the shared sequence `[n × d]`.
    pub fn encode_shared(&self, ctx: &mut Ctx<'_>, embeddings: Var, graph: Option<&GraphOperators>) -> Result<Var> {
        let mode = self.config.mode;
        let graph_branch = if mode.uses_graph() {
            let ops = graph.ok_or_else(|| {
                Error::Contract(format!("encoder mode {mode} needs a dependency graph"))
            })?;
            let proj = self.input_projection.as_ref().expect("graph modes project inputs");
            let mut h = proj.forward(ctx, embeddings)?;
            if let Some(table) = &self.relations {
                for layer in &self.dregcn {
                    h = dregcn_layer_forward(ctx, h, ops, layer, table)?;
                }
            } else {
                for layer in &self.gcn {
                    h = gcn_layer_forward(ctx, h, &ops.propagation, layer)?;
                }
            }
            Some(h)
        } else {
            None
        };
        let cnn_branch = match &self.cnn {
            Some(cnn) => Some(cnn_encoder_forward(ctx, embeddings, cnn)?),
            None => None,
        };
        match (graph_branch, cnn_branch, &self.combine) {
            (Some(g), Some(c), Some(combine)) => {
                let both = ctx.tape.concat(g, c)?;
                combine.forward(ctx, both)
            }
            (Some(g), None, _) => Ok(g),
            (None, Some(c), _) => Ok(c),
            _ => Err(Error::Contract("encoder has no branch for its mode".into())),
        }
    }
}
