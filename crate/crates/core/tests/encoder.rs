use c2f::autodiff::Tape;
use c2f::encoder::{
    gat_layer, Activation, Backbone, Encoder, EncoderConfig, HeadCombine, MessageGraph,
    ATTENTION_SLOPE,
};
use c2f::graph::{generate_sbm, SbmSpec};
use c2f::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_graph(seed: u64) -> Graph {
    let edges = [(0, 1), (1, 2), (2, 3), (3, 0), (0, 4), (4, 5)];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0));
    Graph::from_edges(6, &edges, x, None).unwrap()
}

fn dense_adjacency(g: &Graph) -> Vec<Vec<bool>> {
    let n = g.num_nodes();
    (0..n)
        .map(|i| (0..n).map(|j| i == j || g.has_edge(i, j)).collect())
        .collect()
}

fn matmul(a: &[Vec<f64>], w: &Tensor) -> Vec<Vec<f64>> {
    a.iter()
        .map(|row| {
            (0..w.cols())
                .map(|c| row.iter().enumerate().map(|(k, x)| x * w.get(k, c)).sum())
                .collect()
        })
        .collect()
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        ATTENTION_SLOPE * x
    }
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

/// Dense GAT layer: attention over `adj`, heads concatenated or averaged.
fn dense_gat(
    h: &[Vec<f64>],
    adj: &[Vec<bool>],
    p: &[Tensor],
    heads: usize,
    units: usize,
    hidden: bool,
) -> Vec<Vec<f64>> {
    let wh = matmul(h, &p[0]);
    let n = h.len();
    let mut out = vec![vec![0.0; if hidden { heads * units } else { units }]; n];
    for i in 0..n {
        for hd in 0..heads {
            let cols = hd * units..(hd + 1) * units;
            let score =
                |v: &[f64], a: &Tensor| cols.clone().map(|c| v[c] * a.get(0, c)).sum::<f64>();
            let mut e = vec![f64::NEG_INFINITY; n];
            for j in 0..n {
                if adj[i][j] {
                    e[j] = leaky(score(&wh[i], &p[1]) + score(&wh[j], &p[2]));
                }
            }
            let max = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = e.iter().map(|&x| (x - max).exp()).collect();
            let total: f64 = w.iter().sum();
            for u in 0..units {
                let v: f64 = (0..n).map(|j| w[j] / total * wh[j][hd * units + u]).sum();
                if hidden {
                    out[i][hd * units + u] = elu(v);
                } else {
                    out[i][u] += v / heads as f64;
                }
            }
        }
    }
    out
}

fn dense_gcn(h: &[Vec<f64>], adj: &[Vec<bool>], w: &Tensor, hidden: bool) -> Vec<Vec<f64>> {
    let hw = matmul(h, w);
    let n = h.len();
    let deg: Vec<f64> = adj
        .iter()
        .map(|r| r.iter().filter(|&&b| b).count() as f64)
        .collect();
    (0..n)
        .map(|i| {
            (0..w.cols())
                .map(|c| {
                    let v: f64 = (0..n)
                        .filter(|&j| adj[i][j])
                        .map(|j| hw[j][c] / (deg[i] * deg[j]).sqrt())
                        .sum();
                    if hidden {
                        elu(v)
                    } else {
                        v
                    }
                })
                .collect()
        })
        .collect()
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn max_diff(a: &Tensor, b: &[Vec<f64>]) -> f64 {
    let mut m: f64 = 0.0;
    for (i, row) in b.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            m = m.max((a.get(i, j) - v).abs());
        }
    }
    m
}

#[test]
fn gat_matches_dense_loops() {
    for seed in 0..5 {
        let g = small_graph(seed);
        let cfg = EncoderConfig {
            heads: 3,
            units: 4,
            out_heads: 2,
            out_dim: 5,
            ..EncoderConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let enc = Encoder::init(cfg, 3, &mut rng).unwrap();
        let adj = dense_adjacency(&g);
        let p = enc.params();
        let h1 = dense_gat(&rows(g.features()), &adj, &p[0..3], 3, 4, true);
        let h2 = dense_gat(&h1, &adj, &p[3..6], 2, 5, false);
        let z = enc.embed(&g).unwrap();
        assert_eq!(z.shape(), [6, 5]);
        assert!(max_diff(&z, &h2) < 1e-10, "seed {seed}");
    }
}

#[test]
fn gcn_matches_dense_loops() {
    let g = small_graph(7);
    let cfg = EncoderConfig {
        backbone: Backbone::Gcn,
        heads: 2,
        units: 3,
        out_dim: 4,
        ..EncoderConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let enc = Encoder::init(cfg, 3, &mut rng).unwrap();
    let adj = dense_adjacency(&g);
    let h1 = dense_gcn(&rows(g.features()), &adj, &enc.params()[0], true);
    let h2 = dense_gcn(&h1, &adj, &enc.params()[1], false);
    assert!(max_diff(&enc.embed(&g).unwrap(), &h2) < 1e-10);
}

#[test]
fn attention_rows_sum_to_one() {
    let g = small_graph(3);
    let mg = MessageGraph::new(&g);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let tape = Tape::new();
    let rnd =
        |r, c, rng: &mut ChaCha8Rng| Tensor::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
    let w = tape.constant(rnd(3, 8, &mut rng));
    let a_src = tape.constant(rnd(1, 8, &mut rng));
    let a_dst = tape.constant(rnd(1, 8, &mut rng));
    let h = tape.constant(g.features().clone());
    let out = gat_layer(
        h,
        &mg,
        w,
        a_src,
        a_dst,
        2,
        4,
        HeadCombine::Concat,
        Activation::Identity,
    )
    .unwrap();
    let att = out.attention.value();
    assert_eq!(att.rows(), mg.num_messages());
    let offsets = mg.offsets();
    for i in 0..g.num_nodes() {
        for h in 0..2 {
            let s: f64 = (offsets[i]..offsets[i + 1]).map(|m| att.get(m, h)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn permutation_equivariant() {
    let g = generate_sbm(&SbmSpec {
        block_sizes: vec![8, 7],
        p_in: 0.4,
        p_out: 0.1,
        feature_dim: 4,
        mean_separation: 1.0,
        seed: 5,
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let enc = Encoder::init(EncoderConfig::default(), 4, &mut rng).unwrap();
    let mut perm: Vec<usize> = (0..15).collect();
    perm.reverse();
    perm.swap(0, 7);
    let z = enc.embed(&g).unwrap();
    let zp = enc.embed(&g.permute(&perm)).unwrap();
    for (i, &p) in perm.iter().enumerate() {
        for c in 0..z.cols() {
            assert!((z.get(i, c) - zp.get(p, c)).abs() < 1e-9);
        }
    }
}

#[test]
fn isolated_node_sees_only_itself() {
    let x = Tensor::from_fn(3, 2, |i, j| (i + 2 * j) as f64 * 0.3 - 0.4);
    let g = Graph::from_edges(3, &[(0, 1)], x.clone(), None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let enc = Encoder::init(EncoderConfig::default(), 2, &mut rng).unwrap();
    let z = enc.embed(&g).unwrap();
    let alone = Graph::from_edges(1, &[], Tensor::row_vector(x.row(2).to_vec()), None).unwrap();
    let za = enc.embed(&alone).unwrap();
    for c in 0..z.cols() {
        assert!((z.get(2, c) - za.get(0, c)).abs() < 1e-12);
    }
}

#[test]
fn automorphic_nodes_share_embeddings() {
    // 1 and 2 are both attached only to 0 and carry equal features.
    let x = Tensor::from_rows(&[[1.0, -0.5], [0.2, 0.7], [0.2, 0.7], [-1.0, 0.3]]).unwrap();
    let g = Graph::from_edges(4, &[(0, 1), (0, 2), (0, 3)], x, None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let enc = Encoder::init(EncoderConfig::default(), 2, &mut rng).unwrap();
    let z = enc.embed(&g).unwrap();
    assert_eq!(z.row(1), z.row(2));
}

#[test]
fn complete_graph_with_equal_features_collapses_under_gcn() {
    let n = 5;
    let edges: Vec<_> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    let g = Graph::from_edges(n, &edges, Tensor::filled(n, 3, 0.4), None).unwrap();
    let cfg = EncoderConfig {
        backbone: Backbone::Gcn,
        ..EncoderConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let z = Encoder::init(cfg, 3, &mut rng).unwrap().embed(&g).unwrap();
    for i in 1..n {
        for c in 0..z.cols() {
            assert!((z.get(i, c) - z.get(0, c)).abs() < 1e-12);
        }
    }
}

#[test]
fn embedding_is_deterministic() {
    let g = small_graph(9);
    let a = Encoder::init(
        EncoderConfig::default(),
        3,
        &mut ChaCha8Rng::seed_from_u64(11),
    )
    .unwrap();
    let b = Encoder::init(
        EncoderConfig::default(),
        3,
        &mut ChaCha8Rng::seed_from_u64(11),
    )
    .unwrap();
    assert_eq!(a, b);
    let (za, zb) = (a.embed(&g).unwrap(), b.embed(&g).unwrap());
    assert!(za
        .data()
        .iter()
        .zip(zb.data())
        .all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn wrong_feature_width_is_rejected() {
    let g = small_graph(1);
    let enc = Encoder::init(
        EncoderConfig::default(),
        4,
        &mut ChaCha8Rng::seed_from_u64(1),
    )
    .unwrap();
    assert!(enc.embed(&g).is_err());
}
