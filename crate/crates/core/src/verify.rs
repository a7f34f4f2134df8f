//! Oracle suite: equivalences, normalization, ordering and gradient checks
//! that a correct build must pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::augment::{make_views, ViewSpec};
use crate::autodiff::{grad_check_many, Tape};
use crate::encoder::{Encoder, EncoderConfig, MessageGraph};
use crate::error::Result;
use crate::graph::{generate_sbm, SbmSpec};
use crate::losses::{
    c2f_loss, coarse_loss, coarse_shared_loss, cross_entropy, fine_ground_truth, fine_loss,
    info_nce, judgment_matrices, listnet_ce, overall_targets, score_matrix, similarity, C2fParams,
    SimilarityConfig,
};
use crate::reference;
use crate::tensor::Tensor;
use crate::trainer::NegativeBank;

/// Outcome of one check: the worst measured quantity against its bound.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn below(name: &'static str, measured: f64, tolerance: f64) -> Self {
        Self {
            name,
            measured,
            tolerance,
            passed: measured < tolerance,
        }
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}: measured {:.3e}, bound {:.0e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.tolerance
        )
    }
}

fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn c<'t>(x: &Tensor, tape: &'t Tape) -> crate::autodiff::Var<'t> {
    tape.constant(x.clone())
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

/// Strictly decreasing judgments with gaps of at least 0.05.
fn random_judgments(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    let mut g = Vec::with_capacity(m);
    let mut cur = rng.random_range(0.5..2.0);
    for _ in 0..m {
        g.push(cur);
        cur -= rng.random_range(0.05..0.5);
    }
    g
}

fn tape_value(f: impl for<'t> FnOnce(&'t Tape) -> Result<crate::autodiff::Var<'t>>) -> Result<f64> {
    let tape = Tape::new();
    f(&tape)?.item().map_err(Into::into)
}

/// InfoNCE equals ListNet with a one-hot `[0, -inf, …]` target, over 200
/// instances with `d ∈ {4, 16, 64}` and `K ∈ {1, 8, 64}`.
pub fn proposition_one(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for i in 0..200 {
        let d = [4, 16, 64][i % 3];
        let k = [1, 8, 64][(i / 3) % 3];
        let cfg = SimilarityConfig {
            temperature: [0.1, 0.5, 1.0][(i / 9) % 3],
            normalize_embeddings: i % 2 == 1,
        };
        let q = randn(&mut rng, 1, d);
        let p = randn(&mut rng, 1, d);
        let negs = randn(&mut rng, k, d);
        let nce = tape_value(|t| {
            info_nce(
                t.constant(q.clone()),
                t.constant(p.clone()),
                t.constant(negs.clone()),
                k,
                &cfg,
            )
        })?;
        let mut s = vec![similarity(q.row(0), p.row(0), &cfg)?];
        for j in 0..k {
            s.push(similarity(q.row(0), negs.row(j), &cfg)?);
        }
        let mut g = vec![f64::NEG_INFINITY; k + 1];
        g[0] = 0.0;
        let ce =
            tape_value(|t| listnet_ce(&Tensor::row_vector(g), t.constant(Tensor::row_vector(s))))?;
        worst = worst.max((nce - ce).abs());
    }
    Ok(Check::below("InfoNCE equals one-hot ListNet", worst, 1e-10))
}

/// `ΣΣ J^a = 1` over `α ∈ {0, .25, .5, .75, 1}`, `M ∈ {1,2,3}`,
/// `K ∈ {1,4,16}` with random fine-grained ground truth.
pub fn judgment_normalization(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for alpha in [0.0, 0.25, 0.5, 0.75, 1.0] {
        for m in [1, 2, 3] {
            for k in [1, 4, 16] {
                for _ in 0..4 {
                    let judgments = random_judgments(&mut rng, m);
                    let g: Vec<f64> = (0..=k)
                        .map(|_| 5.0 * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    let j = judgment_matrices(&judgments, &g, alpha)?;
                    for t in [&j.overall, &j.coarse, &j.fine] {
                        worst = worst.max((t.sum() - 1.0).abs());
                    }
                }
            }
        }
    }
    Ok(Check::below("judgment matrices sum to one", worst, 1e-12))
}

/// Counts violations of the column structure of `J^a` over 100 random
/// instances with strictly ordered judgments and `0 < α < 1`: column 0
/// strictly decreasing, `σ(g)_i/σ(g)_j > J^a_i0/J^a_j0 > 1` for `i < j`, and
/// the negative columns constant.
pub fn ordering_structure(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0usize;
    for _ in 0..100 {
        let m = rng.random_range(2..=5);
        let k = rng.random_range(1..=16);
        let alpha = rng.random_range(0.05..0.95);
        let judgments = random_judgments(&mut rng, m);
        let g: Vec<f64> = (0..=k)
            .map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let j = judgment_matrices(&judgments, &g, alpha)?;
        let ja = &j.overall;
        for i in 0..m {
            for l in i + 1..m {
                let coarse_ratio = (alpha * j.coarse.get(i, 0)) / (alpha * j.coarse.get(l, 0));
                let overall_ratio = ja.get(i, 0) / ja.get(l, 0);
                if !(ja.get(i, 0) > ja.get(l, 0)
                    && coarse_ratio > overall_ratio
                    && overall_ratio > 1.0)
                {
                    violations += 1;
                }
            }
            for c in 1..=k {
                if ja.get(i, c) != ja.get(0, c) {
                    violations += 1;
                }
            }
        }
    }
    Ok(Check {
        name: "judgment column ordering",
        measured: violations as f64,
        tolerance: 0.0,
        passed: violations == 0,
    })
}

fn tiny_graph(seed: u64) -> Result<crate::graph::Graph> {
    Ok(generate_sbm(&SbmSpec {
        block_sizes: vec![5, 5],
        p_in: 0.6,
        p_out: 0.15,
        feature_dim: 4,
        mean_separation: 1.0,
        seed,
    })?)
}

/// Central-difference checks (`h = 1e-5`) of every loss on random
/// embeddings and of the full objective through a 2-layer GAT on a 10-node
/// graph.
pub fn gradient_checks(seed: u64) -> Result<Check> {
    const H: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, d, k) = (5, 4, 3);
    let mut worst = 0.0_f64;
    for normalize in [false, true] {
        let cfg = SimilarityConfig {
            temperature: 0.5,
            normalize_embeddings: normalize,
        };
        let z = randn(&mut rng, n, d);
        let negs = randn(&mut rng, n * k, d);
        let inputs = [
            z.clone(),
            randn(&mut rng, n, d),
            randn(&mut rng, n, d),
            negs.clone(),
        ];
        let gt = fine_ground_truth(&z, &negs, k, &cfg)?;
        let targets = overall_targets(&[1.0, 0.7], &gt, 0.8)?;
        let list_targets = randn(&mut rng, n, k + 1);
        let errs = [
            grad_check_many(|_, v| info_nce(v[0], v[1], v[3], k, &cfg), &inputs, H)?,
            grad_check_many(
                |_, v| {
                    listnet_ce(
                        &list_targets,
                        v[0].matmul(v[1].transpose())?.slice_cols(0, k + 1)?,
                    )
                },
                &[randn(&mut rng, n, d), randn(&mut rng, k + 1, d)],
                H,
            )?,
            grad_check_many(
                |_, v| coarse_loss(v[0], &[v[1], v[2]], v[3], k, &[1.0, 0.7], &cfg),
                &inputs,
                H,
            )?,
            grad_check_many(
                |_, v| fine_loss(score_matrix(v[0], &[v[1], v[2]], v[3], k, &cfg)?, &gt, 2),
                &inputs,
                H,
            )?,
            grad_check_many(
                |_, v| cross_entropy(&targets, score_matrix(v[0], &[v[1], v[2]], v[3], k, &cfg)?),
                &inputs,
                H,
            )?,
        ];
        worst = errs.iter().fold(worst, |a, &b| a.max(b));
    }

    // End to end through the encoder, fine targets frozen at the base point.
    let g = tiny_graph(seed)?;
    let config = EncoderConfig {
        heads: 2,
        units: 3,
        out_dim: 4,
        ..EncoderConfig::default()
    };
    let enc = Encoder::init(config, g.feature_dim(), &mut rng)?;
    let views = make_views(
        &g,
        &[ViewSpec::drop_edge(0.5, 1.0), ViewSpec::drop_edge(0.8, 0.7)],
        &mut rng,
    )?;
    let mgs: Vec<MessageGraph> = std::iter::once(&g)
        .chain(&views)
        .map(MessageGraph::new)
        .collect();
    let feats: Vec<&Tensor> = std::iter::once(&g)
        .chain(&views)
        .map(|v| v.features())
        .collect();
    let k = 4;
    let z0 = enc.embed(&g)?;
    let negs = NegativeBank::sample(z0.clone(), k, &mut rng)?.gather();
    let sim = SimilarityConfig::new(0.1);
    let targets = overall_targets(&[1.0, 0.7], &fine_ground_truth(&z0, &negs, k, &sim)?, 0.8)?;
    let err = grad_check_many(
        |tape, p| {
            let mut zs = Vec::new();
            for (mg, x) in mgs.iter().zip(&feats) {
                zs.push(enc.forward::<ChaCha8Rng>(tape, mg, x, p, None)?);
            }
            let s = score_matrix(zs[0], &zs[1..], tape.constant(negs.clone()), k, &sim)?;
            cross_entropy(&targets, s)
        },
        enc.params(),
        H,
    )?;
    Ok(Check::below(
        "analytic gradients match finite differences",
        worst.max(err),
        1e-4,
    ))
}

/// Tensor-path unified loss against the scalar loop implementation on 20
/// random instances with `N = 10`, `M = 2`, `K = 4`.
pub fn scalar_oracle(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, d, m, k) = (10, 6, 2, 4);
    let mut worst = 0.0_f64;
    for i in 0..20 {
        let cfg = SimilarityConfig {
            temperature: rng.random_range(0.1..1.0),
            normalize_embeddings: i % 2 == 0,
        };
        let alpha = rng.random_range(0.0..=1.0);
        let judgments = random_judgments(&mut rng, m);
        let z = randn(&mut rng, n, d);
        let views: Vec<Tensor> = (0..m).map(|_| randn(&mut rng, n, d)).collect();
        let negs = randn(&mut rng, n * k, d);
        let tensor = tape_value(|t| {
            let vs: Vec<_> = views.iter().map(|v| t.constant(v.clone())).collect();
            let params = C2fParams {
                judgments: &judgments,
                alpha,
                negatives_per_node: k,
                similarity: cfg,
            };
            c2f_loss(
                t.constant(z.clone()),
                &vs,
                t.constant(negs.clone()),
                &params,
            )
        })?;
        let neg_rows = rows(&negs);
        let per_node: Vec<Vec<Vec<f64>>> = neg_rows.chunks(k).map(<[_]>::to_vec).collect();
        let view_rows: Vec<_> = views.iter().map(rows).collect();
        let scalar = reference::c2f(
            &rows(&z),
            &view_rows,
            &per_node,
            &judgments,
            alpha,
            cfg.temperature,
            cfg.normalize_embeddings,
        );
        worst = worst.max((tensor - scalar).abs());
    }
    Ok(Check::below(
        "unified loss matches scalar oracle",
        worst,
        1e-9,
    ))
}

/// The ablation reductions: vanilla (`α = 1`, one view) is InfoNCE with the
/// view as query, `α = 0` is the fine loss, `α = 1` is the coarse term, and
/// the coarse loss with one view is InfoNCE with `z` as query.
pub fn reduction_chain(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, d, k) = (8, 5, 6);
    let mut worst = 0.0_f64;
    for i in 0..10 {
        let cfg = SimilarityConfig {
            temperature: [0.1, 0.5][i % 2],
            normalize_embeddings: i % 3 == 0,
        };
        let z = randn(&mut rng, n, d);
        let v1 = randn(&mut rng, n, d);
        let v2 = randn(&mut rng, n, d);
        let negs = randn(&mut rng, n * k, d);
        let unified = |views: &[&Tensor], judgments: &[f64], alpha: f64| {
            tape_value(|t| {
                let vs: Vec<_> = views.iter().map(|v| c(v, t)).collect();
                let params = C2fParams {
                    judgments,
                    alpha,
                    negatives_per_node: k,
                    similarity: cfg,
                };
                c2f_loss(c(&z, t), &vs, c(&negs, t), &params)
            })
        };
        let vanilla = unified(&[&v1], &[1.0], 1.0)?;
        let nce_view = tape_value(|t| info_nce(c(&v1, t), c(&z, t), c(&negs, t), k, &cfg))?;
        worst = worst.max((vanilla - nce_view).abs());

        let fine_only = unified(&[&v1, &v2], &[1.0, 0.7], 0.0)?;
        let gt = fine_ground_truth(&z, &negs, k, &cfg)?;
        let fine = tape_value(|t| {
            fine_loss(
                score_matrix(c(&z, t), &[c(&v1, t), c(&v2, t)], c(&negs, t), k, &cfg)?,
                &gt,
                2,
            )
        })?;
        worst = worst.max((fine_only - fine).abs());

        let coarse_only = unified(&[&v1, &v2], &[1.0, 0.7], 1.0)?;
        let coarse = tape_value(|t| {
            coarse_shared_loss(
                c(&z, t),
                &[c(&v1, t), c(&v2, t)],
                c(&negs, t),
                k,
                &[1.0, 0.7],
                &cfg,
            )
        })?;
        worst = worst.max((coarse_only - coarse).abs());

        let coarse_one =
            tape_value(|t| coarse_loss(c(&z, t), &[c(&v1, t)], c(&negs, t), k, &[1.0], &cfg))?;
        let nce_query = tape_value(|t| info_nce(c(&z, t), c(&v1, t), c(&negs, t), k, &cfg))?;
        worst = worst.max((coarse_one - nce_query).abs());
    }
    Ok(Check::below("ablation reductions", worst, 1e-10))
}

/// Every check above, in order.
pub fn run_all(seed: u64) -> Result<Vec<Check>> {
    Ok(vec![
        proposition_one(seed)?,
        judgment_normalization(seed)?,
        ordering_structure(seed)?,
        gradient_checks(seed)?,
        scalar_oracle(seed)?,
        reduction_chain(seed)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        for check in run_all(7).unwrap() {
            assert!(check.passed, "{check}");
        }
    }
}
