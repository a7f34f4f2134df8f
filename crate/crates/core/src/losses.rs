//! Contrastive and listwise ranking losses.
//!
//! All batched functions take one query per row. Negatives are passed as a
//! single `(N·K)×d` matrix whose row `n·K + k` is the `k`-th negative of
//! node `n`. Every loss is averaged over nodes.
//!
//! Cross-entropies always weight the log of the *predicted* distribution by
//! the *target* distribution, `-Σ target · log σ(scores)`.
//!
//! Score layout of the coarse-to-fine matrix `S_n` (`M×(K+1)`), flattened
//! view-major into one row per node:
//!
//! ```text
//! [ s(z¹,z) s(z¹,ẑ¹) … s(z¹,ẑᴷ) | s(z²,z) s(z²,ẑ¹) … | … | s(zᴹ,z) … s(zᴹ,ẑᴷ) ]
//! ```

use serde::{Deserialize, Serialize};

use crate::autodiff::{concat_cols, row_dot, Var};
use crate::error::{Error, Result, TensorError};
use crate::tensor::{softmax, Tensor};

/// Similarity `s(z1, z2) = z1ᵀz2 / τ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    pub temperature: f64,
    /// Unit-normalize embeddings before taking dot products.
    pub normalize_embeddings: bool,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            normalize_embeddings: false,
        }
    }
}

impl SimilarityConfig {
    pub fn new(temperature: f64) -> Self {
        Self {
            temperature,
            normalize_embeddings: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.temperature > 0.0 && self.temperature.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )))
        }
    }

    fn prepare<'t>(&self, v: Var<'t>) -> Result<Var<'t>> {
        Ok(if self.normalize_embeddings {
            v.normalize_rows()?
        } else {
            v
        })
    }
}

/// Similarity of two plain vectors.
pub fn similarity(z1: &[f64], z2: &[f64], cfg: &SimilarityConfig) -> Result<f64> {
    if z1.len() != z2.len() {
        return Err(TensorError::ShapeMismatch {
            op: "similarity",
            left: [1, z1.len()],
            right: [1, z2.len()],
        }
        .into());
    }
    let dot: f64 = z1.iter().zip(z2).map(|(a, b)| a * b).sum();
    let scale = if cfg.normalize_embeddings {
        let n1 = z1.iter().map(|x| x * x).sum::<f64>().sqrt();
        let n2 = z2.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n1 == 0.0 || n2 == 0.0 {
            return Err(TensorError::ZeroNorm { row: 0 }.into());
        }
        n1 * n2
    } else {
        1.0
    };
    Ok(dot / scale / cfg.temperature)
}

/// `[0, 0, …, 0, 1, 1, …]`: row index `n` repeated `k` times.
pub fn repeat_index(n: usize, k: usize) -> Vec<usize> {
    (0..n).flat_map(|i| std::iter::repeat_n(i, k)).collect()
}

fn batch_shape(query: Var<'_>, negatives: Var<'_>, k: usize) -> Result<(usize, usize)> {
    let [n, d] = query.shape();
    let ns = negatives.shape();
    if k == 0 || ns != [n * k, d] {
        return Err(TensorError::ShapeMismatch {
            op: "negatives",
            left: [n * k, d],
            right: ns,
        }
        .into());
    }
    Ok((n, d))
}

/// `N×1` column of `s(a_n, b_n)` for already prepared rows.
fn paired<'t>(a: Var<'t>, b: Var<'t>, cfg: &SimilarityConfig) -> Result<Var<'t>> {
    Ok(row_dot(a, b)?.scale(1.0 / cfg.temperature))
}

/// `N×K` matrix of `s(q_n, ẑ_n^k)` for already prepared rows.
fn against_negatives<'t>(
    q: Var<'t>,
    negatives: Var<'t>,
    k: usize,
    cfg: &SimilarityConfig,
) -> Result<Var<'t>> {
    let n = q.shape()[0];
    Ok(row_dot(q.gather_rows(repeat_index(n, k))?, negatives)?
        .reshape(n, k)?
        .scale(1.0 / cfg.temperature))
}

/// Mean cross-entropy `-(1/N) Σ_n Σ_j target[n,j] · log σ(scores)[n,j]`
/// against a fixed target distribution.
pub fn cross_entropy<'t>(target: &Tensor, scores: Var<'t>) -> Result<Var<'t>> {
    let shape = scores.shape();
    if target.shape() != shape {
        return Err(TensorError::ShapeMismatch {
            op: "cross_entropy",
            left: target.shape(),
            right: shape,
        }
        .into());
    }
    let log_p = scores.log_row_softmax()?;
    let weighted = log_p.hadamard(scores.tape().constant(target.clone()))?;
    Ok(weighted.sum().scale(-1.0 / shape[0] as f64))
}

/// Row-wise softmax of plain scores, `-inf` mapped to zero.
pub fn softmax_rows(scores: &Tensor) -> Result<Tensor> {
    let mut out = Tensor::zeros(scores.rows(), scores.cols());
    for i in 0..scores.rows() {
        let p = softmax(scores.row(i)).ok_or(TensorError::EmptySoftmax { row: i })?;
        out.row_mut(i).copy_from_slice(&p);
    }
    Ok(out)
}

/// ListNet top-one cross-entropy `D_CE(g ‖ s) = -Σ_k σ(g)_k log σ(s)_k`,
/// averaged over rows. `targets` may contain `-inf` but no row may be
/// entirely `-inf`.
pub fn listnet_ce<'t>(targets: &Tensor, scores: Var<'t>) -> Result<Var<'t>> {
    cross_entropy(&softmax_rows(targets)?, scores)
}

/// InfoNCE with one positive and `k` negatives per query.
pub fn info_nce<'t>(
    query: Var<'t>,
    positive: Var<'t>,
    negatives: Var<'t>,
    k: usize,
    cfg: &SimilarityConfig,
) -> Result<Var<'t>> {
    cfg.validate()?;
    let (n, _) = batch_shape(query, negatives, k)?;
    let (q, p, neg) = (
        cfg.prepare(query)?,
        cfg.prepare(positive)?,
        cfg.prepare(negatives)?,
    );
    let logits = concat_cols(&[paired(q, p, cfg)?, against_negatives(q, neg, k, cfg)?])?;
    let log_p = logits.log_row_softmax()?;
    Ok(log_p.slice_cols(0, 1)?.sum().scale(-1.0 / n as f64))
}

fn check_judgments(judgments: &[f64], strict: bool) -> Result<()> {
    if judgments.is_empty() {
        return Err(Error::Config(
            "at least one view judgment is required".into(),
        ));
    }
    if judgments.iter().any(|g| !g.is_finite()) {
        return Err(Error::Config("judgments must be finite".into()));
    }
    if strict && judgments.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::Config(format!(
            "judgments must be strictly decreasing, got {judgments:?}"
        )));
    }
    Ok(())
}

/// Coarse ground truth `[g_1, …, g_M, -inf × K]`.
pub fn coarse_ground_truth(judgments: &[f64], k: usize) -> Vec<f64> {
    judgments
        .iter()
        .copied()
        .chain(std::iter::repeat_n(f64::NEG_INFINITY, k))
        .collect()
}

/// Coarse ranking loss with its own denominator: the query `z_n` ranks its
/// `M` views (ordered by judgment) above the `K` negatives.
pub fn coarse_loss<'t>(
    z: Var<'t>,
    views: &[Var<'t>],
    negatives: Var<'t>,
    k: usize,
    judgments: &[f64],
    cfg: &SimilarityConfig,
) -> Result<Var<'t>> {
    cfg.validate()?;
    check_judgments(judgments, true)?;
    check_view_count(views, judgments)?;
    let (n, _) = batch_shape(z, negatives, k)?;
    let q = cfg.prepare(z)?;
    let mut cols = Vec::with_capacity(views.len() + 1);
    for v in views {
        cols.push(paired(q, cfg.prepare(*v)?, cfg)?);
    }
    cols.push(against_negatives(q, cfg.prepare(negatives)?, k, cfg)?);
    let scores = concat_cols(&cols)?;
    let g = coarse_ground_truth(judgments, k);
    let targets = Tensor::from_fn(n, g.len(), |_, j| g[j]);
    listnet_ce(&targets, scores)
}

fn check_view_count(views: &[Var<'_>], judgments: &[f64]) -> Result<()> {
    if views.len() != judgments.len() || views.is_empty() {
        return Err(Error::Config(format!(
            "{} views but {} judgments",
            views.len(),
            judgments.len()
        )));
    }
    Ok(())
}

/// Self-generated fine-grained supervision, one row per node:
/// `[s(z_n, z_n), s(z_n, ẑ_n^1), …, s(z_n, ẑ_n^K)]`. Plain values, so no
/// gradient ever reaches them.
pub fn fine_ground_truth(
    z: &Tensor,
    negatives: &Tensor,
    k: usize,
    cfg: &SimilarityConfig,
) -> Result<Tensor> {
    let n = z.rows();
    if k == 0 || negatives.shape() != [n * k, z.cols()] {
        return Err(TensorError::ShapeMismatch {
            op: "fine_ground_truth",
            left: [n * k, z.cols()],
            right: negatives.shape(),
        }
        .into());
    }
    let mut out = Tensor::zeros(n, k + 1);
    for i in 0..n {
        let zi = z.row(i);
        out.set(i, 0, similarity(zi, zi, cfg)?);
        for j in 0..k {
            out.set(i, j + 1, similarity(zi, negatives.row(i * k + j), cfg)?);
        }
    }
    Ok(out)
}

/// Predicted score matrices `S_n`, flattened view-major to `N × M(K+1)`.
pub fn score_matrix<'t>(
    z: Var<'t>,
    views: &[Var<'t>],
    negatives: Var<'t>,
    k: usize,
    cfg: &SimilarityConfig,
) -> Result<Var<'t>> {
    cfg.validate()?;
    if views.is_empty() {
        return Err(Error::Config("at least one view is required".into()));
    }
    batch_shape(z, negatives, k)?;
    let q = cfg.prepare(z)?;
    let neg = cfg.prepare(negatives)?;
    let mut cols = Vec::with_capacity(2 * views.len());
    for v in views {
        let v = cfg.prepare(*v)?;
        cols.push(paired(v, q, cfg)?);
        cols.push(against_negatives(v, neg, k, cfg)?);
    }
    Ok(concat_cols(&cols)?)
}

/// Normalizes each node's score matrix over all `M(K+1)` entries.
pub fn normalize_score_matrix<'t>(scores: Var<'t>) -> Result<Var<'t>> {
    Ok(scores.row_softmax()?)
}

/// Fine-grained ranking loss. `scores` is the flattened score matrix from
/// [`score_matrix`] and `ground_truth` the rows of [`fine_ground_truth`];
/// the target for every view row is `σ(g_n) / M`.
pub fn fine_loss<'t>(scores: Var<'t>, ground_truth: &Tensor, num_views: usize) -> Result<Var<'t>> {
    let targets = fine_targets(ground_truth, num_views)?;
    cross_entropy(&targets, scores)
}

fn fine_targets(ground_truth: &Tensor, num_views: usize) -> Result<Tensor> {
    let p = softmax_rows(ground_truth)?;
    let width = p.cols();
    let m = num_views as f64;
    Ok(Tensor::from_fn(p.rows(), num_views * width, |i, j| {
        p.get(i, j % width) / m
    }))
}

/// The coarse, fine and overall judgment probability matrices of one node,
/// each `M×(K+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JudgmentMatrices {
    pub coarse: Tensor,
    pub fine: Tensor,
    pub overall: Tensor,
}

/// `J^c = σ(judgments)·eᵀ`, `J^f = (1/M)·1·σ(g_n)ᵀ`,
/// `J^a = α J^c + (1-α) J^f`.
pub fn judgment_matrices(judgments: &[f64], g_n: &[f64], alpha: f64) -> Result<JudgmentMatrices> {
    check_alpha(alpha)?;
    check_judgments(judgments, false)?;
    let m = judgments.len();
    let width = g_n.len();
    if width < 2 {
        return Err(Error::Config(
            "fine ground truth needs the positive entry and at least one negative".into(),
        ));
    }
    let pc = softmax(judgments).expect("finite judgments");
    let pf = softmax(g_n).ok_or(TensorError::EmptySoftmax { row: 0 })?;
    let coarse = Tensor::from_fn(m, width, |i, j| if j == 0 { pc[i] } else { 0.0 });
    let fine = Tensor::from_fn(m, width, |_, j| pf[j] / m as f64);
    let overall = coarse.zip_map(&fine, |c, f| alpha * c + (1.0 - alpha) * f);
    Ok(JudgmentMatrices {
        coarse,
        fine,
        overall,
    })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )))
    }
}

/// Flattened `J^a` for every node, matching the [`score_matrix`] layout.
pub fn overall_targets(judgments: &[f64], ground_truth: &Tensor, alpha: f64) -> Result<Tensor> {
    let m = judgments.len();
    let width = ground_truth.cols();
    let mut out = Tensor::zeros(ground_truth.rows(), m * width);
    for i in 0..ground_truth.rows() {
        let j = judgment_matrices(judgments, ground_truth.row(i), alpha)?;
        out.row_mut(i).copy_from_slice(j.overall.data());
    }
    Ok(out)
}

/// Inputs of the unified objective that are not embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct C2fParams<'a> {
    pub judgments: &'a [f64],
    pub alpha: f64,
    pub negatives_per_node: usize,
    pub similarity: SimilarityConfig,
}

/// Unified coarse-to-fine loss
/// `(1/N) Σ_n -Σ_{m,j} J^a_n[m,j] · log σ(S_n)[m,j]`.
///
/// Gradients flow into `z` and the views; the fine-grained ground truth is
/// computed from the values of `z` and `negatives` and never differentiated.
pub fn c2f_loss<'t>(
    z: Var<'t>,
    views: &[Var<'t>],
    negatives: Var<'t>,
    params: &C2fParams<'_>,
) -> Result<Var<'t>> {
    check_alpha(params.alpha)?;
    check_judgments(params.judgments, false)?;
    check_view_count(views, params.judgments)?;
    let k = params.negatives_per_node;
    let scores = score_matrix(z, views, negatives, k, &params.similarity)?;
    let g = fine_ground_truth(&z.value(), &negatives.value(), k, &params.similarity)?;
    let targets = overall_targets(params.judgments, &g, params.alpha)?;
    cross_entropy(&targets, scores)
}

/// Coarse term with the shared `M(K+1)` denominator; equals [`c2f_loss`]
/// at `α = 1`.
pub fn coarse_shared_loss<'t>(
    z: Var<'t>,
    views: &[Var<'t>],
    negatives: Var<'t>,
    k: usize,
    judgments: &[f64],
    cfg: &SimilarityConfig,
) -> Result<Var<'t>> {
    check_judgments(judgments, false)?;
    check_view_count(views, judgments)?;
    let scores = score_matrix(z, views, negatives, k, cfg)?;
    let n = scores.shape()[0];
    let pc = softmax(judgments).expect("finite judgments");
    let width = k + 1;
    let targets = Tensor::from_fn(n, judgments.len() * width, |_, j| {
        if j % width == 0 {
            pc[j / width]
        } else {
            0.0
        }
    });
    cross_entropy(&targets, scores)
}

/// Per-node entropy of the `J^a` target, the lower bound of [`c2f_loss`].
pub fn target_entropy(targets: &Tensor) -> f64 {
    let total: f64 = targets
        .data()
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    total / targets.rows() as f64
}
