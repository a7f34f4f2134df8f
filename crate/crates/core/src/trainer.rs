//! Full-batch coarse-to-fine pre-training.
//!
//! Each iteration encodes the clean graph, draws fresh augmented views,
//! encodes them, refreshes the negative bank from the clean embeddings,
//! samples negatives per node, evaluates the unified loss and takes one Adam
//! step.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{make_views_with, validate_views, Ordering, ViewSpec};
use crate::autodiff::Tape;
use crate::encoder::{Encoder, EncoderConfig, MessageGraph};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::losses::{c2f_loss, C2fParams, SimilarityConfig};
use crate::tensor::Tensor;

/// Which parts of the ranking objective are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    /// Plain contrastive learning: `α = 1`, equal judgments.
    Vanilla,
    /// Coarse ranking only: `α = 1`.
    Coarse,
    /// Fine-grained ranking only: equal judgments.
    Fine,
    /// Both.
    C2f,
}

impl AblationMode {
    pub const ALL: [AblationMode; 4] = [
        AblationMode::Vanilla,
        AblationMode::Coarse,
        AblationMode::Fine,
        AblationMode::C2f,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AblationMode::Vanilla => "vanilla",
            AblationMode::Coarse => "coarse",
            AblationMode::Fine => "fine",
            AblationMode::C2f => "c2f",
        }
    }

    fn ordering(&self) -> Ordering {
        match self {
            AblationMode::Coarse | AblationMode::C2f => Ordering::Strict,
            AblationMode::Vanilla | AblationMode::Fine => Ordering::AllowTies,
        }
    }
}

impl std::str::FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation mode {s:?}")))
    }
}

/// Every hyperparameter of a pre-training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Views ordered by increasing perturbation strength.
    pub views: Vec<ViewSpec>,
    /// Weight of the coarse term; `α = 1/(1+λ)`.
    pub alpha: f64,
    /// Negatives per node, clamped to `N - 1`.
    pub negatives: usize,
    pub temperature: f64,
    /// Cosine instead of raw dot-product similarity. On by default: with
    /// detached negatives, raw dot products let embedding norms grow without
    /// bound.
    pub normalize_embeddings: bool,
    pub learning_rate: f64,
    pub iterations: usize,
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub mode: AblationMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            views: vec![ViewSpec::drop_edge(0.5, 1.0), ViewSpec::drop_edge(0.8, 0.7)],
            alpha: 0.8,
            negatives: 1024,
            temperature: 0.1,
            normalize_embeddings: true,
            learning_rate: 0.001,
            iterations: 300,
            seed: 0,
            encoder: EncoderConfig::default(),
            mode: AblationMode::C2f,
        }
    }
}

impl TrainConfig {
    pub fn similarity(&self) -> SimilarityConfig {
        SimilarityConfig {
            temperature: self.temperature,
            normalize_embeddings: self.normalize_embeddings,
        }
    }

    pub fn judgments(&self) -> Vec<f64> {
        self.views.iter().map(|v| v.judgment).collect()
    }

    /// Negatives actually drawn on a graph with `num_nodes` nodes.
    pub fn effective_negatives(&self, num_nodes: usize) -> usize {
        self.negatives.min(num_nodes.saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.negatives == 0 {
            return err("negatives must be at least 1".into());
        }
        if self.iterations == 0 {
            return err("iterations must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return err(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return err(format!("learning_rate {} must be >= 0", self.learning_rate));
        }
        self.similarity().validate()?;
        self.encoder.validate()?;
        validate_views(&self.views, self.mode.ordering())?;
        let equal_judgments = self
            .views
            .windows(2)
            .all(|w| w[0].judgment == w[1].judgment);
        match self.mode {
            AblationMode::Vanilla if self.alpha != 1.0 || !equal_judgments => {
                err("vanilla mode needs alpha = 1 and equal judgments".into())
            }
            AblationMode::Coarse if self.alpha != 1.0 => err("coarse mode needs alpha = 1".into()),
            AblationMode::Fine if !equal_judgments => err("fine mode needs equal judgments".into()),
            _ => Ok(()),
        }
    }

    /// The configuration of one ablation row derived from this (full C2F)
    /// configuration. Vanilla uses two identical views at drop ratio 0.2.
    pub fn for_mode(&self, mode: AblationMode) -> TrainConfig {
        let mut cfg = self.clone();
        cfg.mode = mode;
        let equalize = |views: &mut Vec<ViewSpec>| {
            for v in views.iter_mut() {
                v.judgment = 1.0;
            }
        };
        match mode {
            AblationMode::Vanilla => {
                cfg.alpha = 1.0;
                cfg.views = self
                    .views
                    .iter()
                    .map(|v| ViewSpec::drop_edge(0.2, 1.0).with_kind_of(v))
                    .collect();
            }
            AblationMode::Coarse => cfg.alpha = 1.0,
            AblationMode::Fine => equalize(&mut cfg.views),
            AblationMode::C2f => {}
        }
        cfg
    }
}

impl ViewSpec {
    fn with_kind_of(self, template: &ViewSpec) -> ViewSpec {
        use crate::augment::ViewKind;
        let strength = self.kind.strength();
        let kind = match template.kind {
            ViewKind::DropEdge { .. } => ViewKind::DropEdge {
                drop_ratio: strength,
            },
            ViewKind::FeatureMask { .. } => ViewKind::FeatureMask {
                mask_prob: strength,
            },
        };
        ViewSpec { kind, ..self }
    }
}

/// `k` distinct nodes drawn uniformly from `{0..num_nodes} \ {node}`.
pub fn sample_negatives<R: Rng + ?Sized>(
    num_nodes: usize,
    node: usize,
    k: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if k >= num_nodes {
        return Err(Error::TooManyNegatives { k, n: num_nodes });
    }
    Ok(index::sample(rng, num_nodes - 1, k)
        .into_iter()
        .map(|i| if i >= node { i + 1 } else { i })
        .collect())
}

/// Detached embeddings of the current iteration plus the negatives drawn
/// from them.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeBank {
    embeddings: Tensor,
    indices: Vec<usize>,
    per_node: usize,
}

impl NegativeBank {
    pub fn sample<R: Rng + ?Sized>(embeddings: Tensor, k: usize, rng: &mut R) -> Result<Self> {
        let n = embeddings.rows();
        let mut indices = Vec::with_capacity(n * k);
        for node in 0..n {
            indices.extend(sample_negatives(n, node, k, rng)?);
        }
        Ok(Self {
            embeddings,
            indices,
            per_node: k,
        })
    }

    pub fn embeddings(&self) -> &Tensor {
        &self.embeddings
    }

    pub fn per_node(&self) -> usize {
        self.per_node
    }

    /// Indices of node `n`'s negatives.
    pub fn indices(&self, node: usize) -> &[usize] {
        &self.indices[node * self.per_node..(node + 1) * self.per_node]
    }

    /// `(N·K)×d` matrix of negative embeddings, row `n·K + k`.
    pub fn gather(&self) -> Tensor {
        let d = self.embeddings.cols();
        let mut out = Tensor::zeros(self.indices.len(), d);
        for (r, &src) in self.indices.iter().enumerate() {
            out.row_mut(r).copy_from_slice(self.embeddings.row(src));
        }
        out
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|p| Tensor::zeros(p.rows(), p.cols()))
                .collect()
        };
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for (((x, &gx), mx), vx) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mx = self.beta1 * *mx + (1.0 - self.beta1) * gx;
                *vx = self.beta2 * *vx + (1.0 - self.beta2) * gx * gx;
                *x -= lr * (*mx / c1) / ((*vx / c2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub iteration: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

/// Mutable state of a run over one graph. Holds its own copy of the graph.
pub struct Trainer {
    graph: Graph,
    clean: MessageGraph,
    config: TrainConfig,
    encoder: Encoder,
    adam: AdamState,
    rng: ChaCha8Rng,
    iteration: usize,
    bank: Option<NegativeBank>,
}

impl Trainer {
    pub fn new(graph: &Graph, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if graph.num_nodes() < 2 {
            return Err(Error::TooManyNegatives {
                k: 1,
                n: graph.num_nodes(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let encoder = Encoder::init(config.encoder.clone(), graph.feature_dim(), &mut rng)?;
        let adam = AdamState::new(encoder.params());
        Ok(Self {
            graph: graph.clone(),
            clean: MessageGraph::new(graph),
            config,
            encoder,
            adam,
            rng,
            iteration: 0,
            bank: None,
        })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Bank of the most recent step.
    pub fn bank(&self) -> Option<&NegativeBank> {
        self.bank.as_ref()
    }

    /// Loss and parameter gradients at the current parameters, consuming
    /// randomness exactly as a training step does.
    fn loss_and_grads(&mut self) -> Result<(f64, Vec<Tensor>, NegativeBank)> {
        let cfg = &self.config;
        let tape = Tape::new();
        let params = self.encoder.leaves(&tape);
        let mut dropout_rng = (cfg.encoder.dropout > 0.0).then(|| self.rng.clone());
        let z = self.encoder.forward(
            &tape,
            &self.clean,
            self.graph.features(),
            &params,
            dropout_rng.as_mut(),
        )?;
        if let Some(r) = dropout_rng {
            self.rng = r;
        }
        let views = make_views_with(&self.graph, &cfg.views, cfg.mode.ordering(), &mut self.rng)?;
        let mut view_vars = Vec::with_capacity(views.len());
        for view in &views {
            let mg = MessageGraph::new(view);
            let mut dropout_rng = (cfg.encoder.dropout > 0.0).then(|| self.rng.clone());
            view_vars.push(self.encoder.forward(
                &tape,
                &mg,
                view.features(),
                &params,
                dropout_rng.as_mut(),
            )?);
            if let Some(r) = dropout_rng {
                self.rng = r;
            }
        }
        let k = cfg.effective_negatives(self.graph.num_nodes());
        let bank = NegativeBank::sample(z.value().clone(), k, &mut self.rng)?;
        let negatives = tape.constant(bank.gather());
        let judgments = cfg.judgments();
        let loss = c2f_loss(
            z,
            &view_vars,
            negatives,
            &C2fParams {
                judgments: &judgments,
                alpha: cfg.alpha,
                negatives_per_node: k,
                similarity: cfg.similarity(),
            },
        )?;
        let value = loss.item()?;
        tape.backward(loss)?;
        let grads = params
            .iter()
            .zip(self.encoder.params())
            .map(|(v, p)| {
                tape.grad(*v)
                    .unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols()))
            })
            .collect();
        Ok((value, grads, bank))
    }

    /// One iteration: forward, backward, Adam update.
    pub fn step(&mut self) -> Result<StepReport> {
        let (loss, grads, bank) = self.loss_and_grads()?;
        let grad_norms: Vec<f64> = grads.iter().map(Tensor::norm).collect();
        if !loss.is_finite() || grad_norms.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss {
                iteration: self.iteration,
                loss,
                grad_norms,
            });
        }
        let lr = self.config.learning_rate;
        self.adam.update(self.encoder.params_mut(), &grads, lr);
        self.bank = Some(bank);
        let report = StepReport {
            iteration: self.iteration,
            loss,
            grad_norm: grad_norms.iter().map(|g| g * g).sum::<f64>().sqrt(),
        };
        self.iteration += 1;
        Ok(report)
    }

    /// Runs the configured number of iterations.
    pub fn run(mut self) -> Result<PretrainOutput> {
        let mut losses = Vec::with_capacity(self.config.iterations);
        for _ in 0..self.config.iterations {
            losses.push(self.step()?.loss);
        }
        let embeddings = self.encoder.embed(&self.graph)?;
        Ok(PretrainOutput {
            encoder: self.encoder,
            embeddings,
            losses,
        })
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutput {
    pub encoder: Encoder,
    /// Embeddings of the clean graph under the final parameters.
    pub embeddings: Tensor,
    pub losses: Vec<f64>,
}

pub fn pretrain(graph: &Graph, config: &TrainConfig) -> Result<PretrainOutput> {
    Trainer::new(graph, config.clone())?.run()
}

/// The encoder a run with this config starts from, before any update.
pub fn initial_encoder(graph: &Graph, config: &TrainConfig) -> Result<Encoder> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    Encoder::init(config.encoder.clone(), graph.feature_dim(), &mut rng)
}
