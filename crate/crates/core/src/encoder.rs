//! GNN feature extractor mapping a graph to node embeddings.
//!
//! Attention and propagation run over the edge list (with self-loops added
//! here, never stored in [`Graph`]), so a layer costs O(edges · width).

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result, TensorError};
use crate::graph::Graph;
use crate::tensor::Tensor;

/// Negative slope of the attention LeakyReLU.
pub const ATTENTION_SLOPE: f64 = 0.2;
/// ELU alpha for hidden layers.
pub const ELU_ALPHA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    Gat,
    Gcn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub backbone: Backbone,
    pub layers: usize,
    /// Attention heads on hidden layers.
    pub heads: usize,
    /// Units per head on hidden layers.
    pub units: usize,
    /// Attention heads on the output layer; their outputs are averaged.
    pub out_heads: usize,
    /// Embedding width d2.
    pub out_dim: usize,
    /// Input dropout on every layer during pre-training.
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            backbone: Backbone::Gat,
            layers: 2,
            heads: 8,
            units: 8,
            out_heads: 1,
            out_dim: 64,
            dropout: 0.0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(format!("encoder: {m}")));
        if self.layers == 0 {
            return err("at least one layer is required");
        }
        if self.heads == 0 || self.units == 0 || self.out_heads == 0 || self.out_dim == 0 {
            return err("heads, units, out_heads and out_dim must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err("dropout must lie in [0, 1)");
        }
        Ok(())
    }

    /// Shape of every layer for a given input width.
    pub fn layer_shapes(&self, in_dim: usize) -> Vec<LayerShape> {
        (0..self.layers)
            .map(|l| {
                let input = if l == 0 {
                    in_dim
                } else {
                    self.heads * self.units
                };
                if l + 1 == self.layers {
                    LayerShape {
                        input,
                        heads: self.out_heads,
                        units: self.out_dim,
                        hidden: false,
                    }
                } else {
                    LayerShape {
                        input,
                        heads: self.heads,
                        units: self.units,
                        hidden: true,
                    }
                }
            })
            .collect()
    }

    fn params_per_layer(&self) -> usize {
        match self.backbone {
            Backbone::Gat => 3,
            Backbone::Gcn => 1,
        }
    }
}

/// Geometry of one layer. Hidden layers concatenate heads and apply ELU; the
/// output layer averages heads and is linear. GCN layers use
/// `heads · units` as a plain width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub input: usize,
    pub heads: usize,
    pub units: usize,
    pub hidden: bool,
}

impl LayerShape {
    pub fn output(&self) -> usize {
        if self.hidden {
            self.heads * self.units
        } else {
            self.units
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Identity,
    Elu(f64),
}

impl Activation {
    fn apply<'t>(self, v: Var<'t>) -> Var<'t> {
        match self {
            Activation::Identity => v,
            Activation::Elu(alpha) => v.elu(alpha),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadCombine {
    Concat,
    Mean,
}

/// Edge list of a graph with one self-loop per node, grouped by center node.
#[derive(Debug, Clone)]
pub struct MessageGraph {
    num_nodes: usize,
    offsets: Rc<[usize]>,
    centers: Rc<[usize]>,
    sources: Rc<[usize]>,
    gcn_weights: Tensor,
}

impl MessageGraph {
    pub fn new(g: &Graph) -> Self {
        let n = g.num_nodes();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut centers = Vec::with_capacity(g.num_entries() + n);
        let mut sources = Vec::with_capacity(g.num_entries() + n);
        offsets.push(0);
        for i in 0..n {
            let nbrs = g.neighbors(i);
            let split = nbrs.partition_point(|&j| j < i);
            for &j in nbrs[..split].iter().chain([i].iter()).chain(&nbrs[split..]) {
                centers.push(i);
                sources.push(j);
            }
            offsets.push(sources.len());
        }
        let deg: Vec<f64> = (0..n).map(|i| (g.degree(i) + 1) as f64).collect();
        let gcn_weights = Tensor::col_vector(
            centers
                .iter()
                .zip(&sources)
                .map(|(&i, &j)| 1.0 / (deg[i] * deg[j]).sqrt())
                .collect(),
        );
        Self {
            num_nodes: n,
            offsets: offsets.into(),
            centers: centers.into(),
            sources: sources.into(),
            gcn_weights,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_messages(&self) -> usize {
        self.sources.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// `(center, source)` for every message.
    pub fn messages(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.centers
            .iter()
            .copied()
            .zip(self.sources.iter().copied())
    }
}

pub struct GatOutput<'t> {
    pub output: Var<'t>,
    /// Attention coefficients, one row per message, one column per head.
    pub attention: Var<'t>,
}

/// One graph attention layer.
///
/// For head `h`: `e_ij = LeakyReLU(a_src·W h_i + a_dst·W h_j)` over
/// `j ∈ N(i) ∪ {i}`, normalized by softmax over the neighborhood, then
/// `Σ_j att_ij · W h_j`. `w` is `input × heads·units`; `a_src` and `a_dst`
/// are `1 × heads·units` with head `h` occupying columns `h·units..`.
#[allow(clippy::too_many_arguments)]
pub fn gat_layer<'t>(
    h: Var<'t>,
    mg: &MessageGraph,
    w: Var<'t>,
    a_src: Var<'t>,
    a_dst: Var<'t>,
    heads: usize,
    units: usize,
    combine: HeadCombine,
    activation: Activation,
) -> Result<GatOutput<'t>, TensorError> {
    let wh = h.matmul(w)?;
    let src = wh.mul_row(a_src)?.block_sum_cols(units)?;
    let dst = wh.mul_row(a_dst)?.block_sum_cols(units)?;
    let logits = src
        .gather_rows(mg.centers.clone())?
        .add(dst.gather_rows(mg.sources.clone())?)?
        .leaky_relu(ATTENTION_SLOPE);
    let attention = logits.segment_softmax(mg.offsets.clone())?;
    let messages = wh
        .gather_rows(mg.sources.clone())?
        .hadamard(attention.repeat_cols(units))?;
    let agg = messages.segment_sum(mg.offsets.clone())?;
    let combined = match combine {
        HeadCombine::Concat => agg,
        HeadCombine::Mean if heads == 1 => agg,
        HeadCombine::Mean => {
            let mut acc = agg.slice_cols(0, units)?;
            for k in 1..heads {
                acc = acc.add(agg.slice_cols(k * units, (k + 1) * units)?)?;
            }
            acc.scale(1.0 / heads as f64)
        }
    };
    Ok(GatOutput {
        output: activation.apply(combined),
        attention,
    })
}

/// One GCN layer: `activation(D̃^{-1/2} Ã D̃^{-1/2} H W)` with `Ã = A + I`.
pub fn gcn_layer<'t>(
    h: Var<'t>,
    mg: &MessageGraph,
    w: Var<'t>,
    activation: Activation,
) -> Result<Var<'t>, TensorError> {
    let hw = h.matmul(w)?;
    let weights = h.tape().constant(mg.gcn_weights.clone());
    let out = hw
        .gather_rows(mg.sources.clone())?
        .mul_col(weights)?
        .segment_sum(mg.offsets.clone())?;
    Ok(activation.apply(out))
}

/// Encoder architecture plus its parameters.
///
/// Parameter layout per layer: GAT `[W, a_src, a_dst]`, GCN `[W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    config: EncoderConfig,
    in_dim: usize,
    params: Vec<Tensor>,
}

impl Encoder {
    /// Glorot-uniform initialization, `U(-s, s)` with
    /// `s = sqrt(6 / (fan_in + fan_out))`.
    pub fn init<R: Rng + ?Sized>(
        config: EncoderConfig,
        in_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let mut params = Vec::new();
        let mut uniform = |rows: usize, cols: usize, fan_in: usize, fan_out: usize| {
            let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Tensor::from_fn(rows, cols, |_, _| rng.random_range(-s..s))
        };
        for shape in config.layer_shapes(in_dim) {
            let width = shape.heads * shape.units;
            params.push(uniform(shape.input, width, shape.input, width));
            if config.backbone == Backbone::Gat {
                params.push(uniform(1, width, shape.units, 1));
                params.push(uniform(1, width, shape.units, 1));
            }
        }
        Ok(Self {
            config,
            in_dim,
            params,
        })
    }

    pub fn from_params(config: EncoderConfig, in_dim: usize, params: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let expected = Self::expected_shapes(&config, in_dim);
        if expected.len() != params.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (k, (p, s)) in params.iter().zip(&expected).enumerate() {
            if p.shape() != *s {
                return Err(Error::Config(format!(
                    "parameter {k}: shape {:?}, expected {s:?}",
                    p.shape()
                )));
            }
            if !p.is_finite() {
                return Err(Error::Config(format!("parameter {k} is not finite")));
            }
        }
        Ok(Self {
            config,
            in_dim,
            params,
        })
    }

    fn expected_shapes(config: &EncoderConfig, in_dim: usize) -> Vec<[usize; 2]> {
        config
            .layer_shapes(in_dim)
            .iter()
            .flat_map(|s| {
                let width = s.heads * s.units;
                let mut v = vec![[s.input, width]];
                if config.backbone == Backbone::Gat {
                    v.extend([[1, width], [1, width]]);
                }
                v
            })
            .collect()
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.config.out_dim
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn into_params(self) -> Vec<Tensor> {
        self.params
    }

    /// Registers the parameters on `tape` as gradient-collecting leaves.
    pub fn leaves<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.clone(), true))
            .collect()
    }

    /// Embeds the graph. `params` are the tape handles from
    /// [`Encoder::leaves`]; `dropout_rng` enables input dropout.
    pub fn forward<'t, R: Rng + ?Sized>(
        &self,
        tape: &'t Tape,
        mg: &MessageGraph,
        features: &Tensor,
        params: &[Var<'t>],
        mut dropout_rng: Option<&mut R>,
    ) -> Result<Var<'t>> {
        if features.cols() != self.in_dim || features.rows() != mg.num_nodes() {
            return Err(TensorError::ShapeMismatch {
                op: "encode",
                left: features.shape(),
                right: [mg.num_nodes(), self.in_dim],
            }
            .into());
        }
        let mut h = tape.constant(features.clone());
        let per = self.config.params_per_layer();
        for (l, shape) in self
            .config
            .layer_shapes(self.in_dim)
            .into_iter()
            .enumerate()
        {
            if let (Some(rng), true) = (dropout_rng.as_deref_mut(), self.config.dropout > 0.0) {
                h = dropout(h, self.config.dropout, rng)?;
            }
            let p = &params[l * per..(l + 1) * per];
            let activation = if shape.hidden {
                Activation::Elu(ELU_ALPHA)
            } else {
                Activation::Identity
            };
            h = match self.config.backbone {
                Backbone::Gat => {
                    let combine = if shape.hidden {
                        HeadCombine::Concat
                    } else {
                        HeadCombine::Mean
                    };
                    gat_layer(
                        h,
                        mg,
                        p[0],
                        p[1],
                        p[2],
                        shape.heads,
                        shape.units,
                        combine,
                        activation,
                    )?
                    .output
                }
                Backbone::Gcn => gcn_layer(h, mg, p[0], activation)?,
            };
        }
        Ok(h)
    }

    /// Embeddings without gradient tracking or dropout.
    pub fn embed(&self, g: &Graph) -> Result<Tensor> {
        let tape = Tape::new();
        let params: Vec<_> = self
            .params
            .iter()
            .map(|p| tape.constant(p.clone()))
            .collect();
        let mg = MessageGraph::new(g);
        let z = self.forward::<rand_chacha::ChaCha8Rng>(&tape, &mg, g.features(), &params, None)?;
        let out = z.value().clone();
        Ok(out)
    }
}

fn dropout<'t, R: Rng + ?Sized>(h: Var<'t>, p: f64, rng: &mut R) -> Result<Var<'t>, TensorError> {
    let [r, c] = h.shape();
    let keep = 1.0 / (1.0 - p);
    let mask = Tensor::from_fn(
        r,
        c,
        |_, _| if rng.random::<f64>() < p { 0.0 } else { keep },
    );
    h.hadamard(h.tape().constant(mask))
}
