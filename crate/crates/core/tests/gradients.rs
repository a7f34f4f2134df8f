//! Analytic gradients against central finite differences.

use c2f::autodiff::{concat_cols, grad_check, grad_check_many, row_dot, Tape, Var};
use c2f::encoder::{Backbone, Encoder, EncoderConfig, MessageGraph};
use c2f::error::TensorError;
use c2f::graph::{generate_sbm, Graph, SbmSpec};
use c2f::losses::{
    c2f_loss, coarse_loss, cross_entropy, fine_ground_truth, fine_loss, info_nce, listnet_ce,
    overall_targets, score_matrix, C2fParams, SimilarityConfig,
};
use c2f::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const TRIALS: usize = 100;

fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

/// Every checked function ends in a weighted sum so that all output entries
/// matter.
fn weigh<'t>(y: Var<'t>, seed: u64) -> Result<Var<'t>, TensorError> {
    let [r, c] = y.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = y.tape().constant(randn(&mut rng, r, c));
    Ok(y.hadamard(w)?.sum())
}

fn check_unary(
    name: &str,
    f: impl for<'t> Fn(Var<'t>) -> Result<Var<'t>, TensorError>,
    positive: bool,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64);
    let mut worst = 0.0_f64;
    for trial in 0..TRIALS {
        let (r, c) = (rng.random_range(1..5), rng.random_range(1..5));
        let mut x = randn(&mut rng, r, c);
        if positive {
            x = x.map(|v| v.abs() + 0.5);
        }
        // Keep kinks of piecewise functions away from the probe points.
        x = x.map(|v| if v.abs() < 1e-3 { v + 0.01 } else { v });
        let err = grad_check(|_, v| weigh(f(v)?, trial as u64), &x, H).unwrap();
        worst = worst.max(err);
    }
    assert!(worst < TOL, "{name}: {worst}");
}

#[test]
fn elementwise_ops() {
    check_unary("exp", |x| Ok(x.exp()), false);
    check_unary("log", |x| x.log(), true);
    check_unary("scale", |x| Ok(x.scale(-2.5)), false);
    check_unary("neg", |x| Ok(x.neg()), false);
    check_unary("leaky_relu", |x| Ok(x.leaky_relu(0.2)), false);
    check_unary("elu", |x| Ok(x.elu(1.0)), false);
    check_unary("hadamard_self", |x| x.hadamard(x), false);
}

#[test]
fn row_ops() {
    check_unary("row_softmax", |x| x.row_softmax(), false);
    check_unary("log_row_softmax", |x| x.log_row_softmax(), false);
    check_unary("normalize_rows", |x| x.normalize_rows(), false);
    check_unary("sum_cols", |x| Ok(x.sum_cols()), false);
    check_unary("transpose", |x| Ok(x.transpose()), false);
    check_unary("reduce_sum", |x| Ok(x.reduce_sum()), false);
    check_unary("concat", |x| concat_cols(&[x, x.exp(), x]), false);
    check_unary("row_dot", |x| row_dot(x, x.exp()), false);
    check_unary("repeat_cols", |x| Ok(x.repeat_cols(3)), false);
    check_unary("block_sum", |x| x.repeat_cols(2).block_sum_cols(2), false);
    check_unary(
        "slice",
        |x| {
            let c = x.shape()[1];
            x.slice_cols(c / 2, c)
        },
        false,
    );
    check_unary(
        "reshape",
        |x| {
            let [r, c] = x.shape();
            x.reshape(c, r)
        },
        false,
    );
}

#[test]
fn indexing_ops() {
    check_unary(
        "gather_rows",
        |x| {
            let r = x.shape()[0];
            let idx: Vec<usize> = (0..2 * r + 1).map(|i| (i * 7) % r).collect();
            x.gather_rows(idx)
        },
        false,
    );
    check_unary(
        "segment_sum",
        |x| {
            let r = x.shape()[0];
            x.segment_sum(vec![0, r / 2, r / 2, r])
        },
        false,
    );
    check_unary(
        "segment_softmax",
        |x| {
            let r = x.shape()[0];
            x.segment_softmax(vec![0, r / 2, r])
        },
        false,
    );
}

#[test]
fn binary_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0_f64;
    for trial in 0..TRIALS {
        let (n, k, m) = (
            rng.random_range(1..5),
            rng.random_range(1..5),
            rng.random_range(1..5),
        );
        let a = randn(&mut rng, n, k);
        let b = randn(&mut rng, k, m);
        let c = randn(&mut rng, n, m);
        let row = randn(&mut rng, 1, m);
        let col = randn(&mut rng, n, 1);
        let inputs = [a, b, c, row, col];
        let err = grad_check_many(
            |_, v| {
                let p = v[0].matmul(v[1])?;
                let y = p.add(v[2])?.sub(v[2].hadamard(p)?)?;
                let y = y.add_row(v[3])?.mul_row(v[3])?.mul_col(v[4])?;
                weigh(y, trial as u64)
            },
            &inputs,
            H,
        )
        .unwrap();
        worst = worst.max(err);
    }
    assert!(worst < TOL, "{worst}");
}

#[test]
fn three_layer_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0_f64;
    for trial in 0..TRIALS {
        let inputs = [
            randn(&mut rng, 4, 3),
            randn(&mut rng, 3, 5),
            randn(&mut rng, 5, 2),
        ];
        let err = grad_check_many(
            |_, v| {
                let h = v[0].matmul(v[1])?.elu(1.0);
                let h = h.matmul(v[2])?.leaky_relu(0.2).row_softmax()?;
                weigh(h.exp().log()?, trial as u64)
            },
            &inputs,
            H,
        )
        .unwrap();
        worst = worst.max(err);
    }
    assert!(worst < TOL, "{worst}");
}

fn cfg(normalize: bool) -> SimilarityConfig {
    SimilarityConfig {
        temperature: 0.5,
        normalize_embeddings: normalize,
    }
}

#[test]
fn loss_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (n, d, k) = (5, 4, 3);
    for normalize in [false, true] {
        let c = cfg(normalize);
        let z = randn(&mut rng, n, d);
        let p = randn(&mut rng, n, d);
        let v2 = randn(&mut rng, n, d);
        let neg = randn(&mut rng, n * k, d);
        let inputs = [z.clone(), p, v2, neg.clone()];

        let err = grad_check_many(|_, v| info_nce(v[0], v[1], v[3], k, &c), &inputs, H).unwrap();
        assert!(err < TOL, "info_nce {err}");

        let err = grad_check_many(
            |_, v| coarse_loss(v[0], &[v[1], v[2]], v[3], k, &[1.0, 0.7], &c),
            &inputs,
            H,
        )
        .unwrap();
        assert!(err < TOL, "coarse {err}");

        let targets = Tensor::from_fn(n, k + 1, |i, j| ((i + 2 * j) % 5) as f64 * 0.3);
        let err = grad_check(
            |_, s| listnet_ce(&targets, s),
            &randn(&mut rng, n, k + 1),
            H,
        )
        .unwrap();
        assert!(err < TOL, "listnet {err}");

        // The fine targets are fixed values, so freeze them at the base point.
        let g = fine_ground_truth(&z, &neg, k, &c).unwrap();
        let err = grad_check_many(
            |_, v| -> c2f::Result<_> {
                fine_loss(score_matrix(v[0], &[v[1], v[2]], v[3], k, &c)?, &g, 2)
            },
            &inputs,
            H,
        )
        .unwrap();
        assert!(err < TOL, "fine {err}");

        let t = overall_targets(&[1.0, 0.7], &g, 0.8).unwrap();
        let err = grad_check_many(
            |_, v| cross_entropy(&t, score_matrix(v[0], &[v[1], v[2]], v[3], k, &c)?),
            &inputs,
            H,
        )
        .unwrap();
        assert!(err < TOL, "c2f {err}");
    }
}

fn ten_node_graph() -> Graph {
    generate_sbm(&SbmSpec {
        block_sizes: vec![5, 5],
        p_in: 0.6,
        p_out: 0.15,
        feature_dim: 4,
        mean_separation: 1.0,
        seed: 4,
    })
    .unwrap()
}

#[test]
fn encoder_gradients() {
    let g = ten_node_graph();
    let mg = MessageGraph::new(&g);
    for backbone in [Backbone::Gat, Backbone::Gcn] {
        let config = EncoderConfig {
            backbone,
            heads: 2,
            units: 3,
            out_heads: 2,
            out_dim: 4,
            ..EncoderConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = Encoder::init(config, 4, &mut rng).unwrap();
        let err = grad_check_many(
            |tape: &Tape, p| {
                let z = enc.forward::<ChaCha8Rng>(tape, &mg, g.features(), p, None)?;
                Ok::<_, c2f::Error>(weigh(z, 3)?)
            },
            enc.params(),
            H,
        )
        .unwrap();
        assert!(err < TOL, "{backbone:?}: {err}");
    }
}

/// The full objective through a 2-layer GAT. Views and negatives are fixed
/// draws; the fine targets are frozen at the base parameters, as they are
/// detached during training.
#[test]
fn end_to_end_c2f_gradient() {
    let g = ten_node_graph();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let config = EncoderConfig {
        heads: 2,
        units: 3,
        out_heads: 1,
        out_dim: 4,
        ..EncoderConfig::default()
    };
    let enc = Encoder::init(config, 4, &mut rng).unwrap();
    let views = c2f::augment::make_views(
        &g,
        &[
            c2f::augment::ViewSpec::drop_edge(0.5, 1.0),
            c2f::augment::ViewSpec::drop_edge(0.8, 0.7),
        ],
        &mut rng,
    )
    .unwrap();
    let mgs: Vec<_> = std::iter::once(&g)
        .chain(&views)
        .map(MessageGraph::new)
        .collect();
    let k = 4;
    let z0 = enc.embed(&g).unwrap();
    let bank = c2f::trainer::NegativeBank::sample(z0.clone(), k, &mut rng).unwrap();
    let negs = bank.gather();
    let sim = SimilarityConfig::new(0.1);
    let gt = fine_ground_truth(&z0, &negs, k, &sim).unwrap();
    let targets = overall_targets(&[1.0, 0.7], &gt, 0.8).unwrap();
    let err = grad_check_many(
        |tape: &Tape, p| {
            let embed = |i: usize, x: &Tensor| enc.forward::<ChaCha8Rng>(tape, &mgs[i], x, p, None);
            let z = embed(0, g.features())?;
            let v1 = embed(1, views[0].features())?;
            let v2 = embed(2, views[1].features())?;
            let s = score_matrix(z, &[v1, v2], tape.constant(negs.clone()), k, &sim)?;
            cross_entropy(&targets, s)
        },
        enc.params(),
        H,
    )
    .unwrap();
    assert!(err < TOL, "{err}");

    // c2f_loss computes the same value and the same gradient.
    let tape = Tape::new();
    let p = enc.leaves(&tape);
    let z = enc
        .forward::<ChaCha8Rng>(&tape, &mgs[0], g.features(), &p, None)
        .unwrap();
    let v1 = enc
        .forward::<ChaCha8Rng>(&tape, &mgs[1], views[0].features(), &p, None)
        .unwrap();
    let v2 = enc
        .forward::<ChaCha8Rng>(&tape, &mgs[2], views[1].features(), &p, None)
        .unwrap();
    let params = C2fParams {
        judgments: &[1.0, 0.7],
        alpha: 0.8,
        negatives_per_node: k,
        similarity: sim,
    };
    let loss = c2f_loss(z, &[v1, v2], tape.constant(negs.clone()), &params).unwrap();
    let s = score_matrix(z, &[v1, v2], tape.constant(negs.clone()), k, &sim).unwrap();
    let reference = cross_entropy(&targets, s).unwrap();
    assert!((loss.item().unwrap() - reference.item().unwrap()).abs() < 1e-12);
}
