//! Plain scalar implementations of the losses, written with explicit loops
//! over nodes, views and negatives. They share no code with [`crate::losses`]
//! and serve as its oracle.

fn similarity(a: &[f64], b: &[f64], tau: f64, normalize: bool) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if normalize {
        dot / (na.sqrt() * nb.sqrt()) / tau
    } else {
        dot / tau
    }
}

/// `e^{x_i} / Σ_j e^{x_j}` with `-inf` giving zero.
fn softmax(x: &[f64]) -> Vec<f64> {
    let mut max = f64::NEG_INFINITY;
    for &v in x {
        if v > max {
            max = v;
        }
    }
    let mut e = Vec::with_capacity(x.len());
    let mut total = 0.0;
    for &v in x {
        let w = if v == f64::NEG_INFINITY {
            0.0
        } else {
            (v - max).exp()
        };
        total += w;
        e.push(w);
    }
    for w in &mut e {
        *w /= total;
    }
    e
}

/// `ln Σ_j e^{x_j}`.
fn log_sum_exp(x: &[f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for &v in x {
        if v > max {
            max = v;
        }
    }
    let mut total = 0.0;
    for &v in x {
        total += (v - max).exp();
    }
    max + total.ln()
}

/// `-Σ_k σ(g)_k log σ(s)_k`, skipping zero-probability targets.
pub fn listnet(g: &[f64], s: &[f64]) -> f64 {
    let p = softmax(g);
    let lse = log_sum_exp(s);
    let mut loss = 0.0;
    for k in 0..s.len() {
        if p[k] > 0.0 {
            loss -= p[k] * (s[k] - lse);
        }
    }
    loss
}

/// InfoNCE of one query.
pub fn info_nce(q: &[f64], p: &[f64], negatives: &[Vec<f64>], tau: f64, normalize: bool) -> f64 {
    let pos = similarity(q, p, tau, normalize);
    let mut scores = vec![pos];
    for n in negatives {
        scores.push(similarity(q, n, tau, normalize));
    }
    log_sum_exp(&scores) - pos
}

/// Coarse loss of one node with its own `M + K` denominator.
pub fn coarse(
    z: &[f64],
    views: &[Vec<f64>],
    negatives: &[Vec<f64>],
    judgments: &[f64],
    tau: f64,
    normalize: bool,
) -> f64 {
    let mut g = judgments.to_vec();
    let mut s = Vec::new();
    for v in views {
        s.push(similarity(z, v, tau, normalize));
    }
    for n in negatives {
        g.push(f64::NEG_INFINITY);
        s.push(similarity(z, n, tau, normalize));
    }
    listnet(&g, &s)
}

/// `M × (K+1)` score matrix of one node.
pub fn score_matrix(
    z: &[f64],
    views: &[Vec<f64>],
    negatives: &[Vec<f64>],
    tau: f64,
    normalize: bool,
) -> Vec<Vec<f64>> {
    let mut rows = Vec::new();
    for v in views {
        let mut row = vec![similarity(v, z, tau, normalize)];
        for n in negatives {
            row.push(similarity(v, n, tau, normalize));
        }
        rows.push(row);
    }
    rows
}

/// Overall judgment matrix of one node.
pub fn judgment_matrix(
    z: &[f64],
    negatives: &[Vec<f64>],
    judgments: &[f64],
    alpha: f64,
    tau: f64,
    normalize: bool,
) -> Vec<Vec<f64>> {
    let m = judgments.len();
    let mut g = vec![similarity(z, z, tau, normalize)];
    for n in negatives {
        g.push(similarity(z, n, tau, normalize));
    }
    let pf = softmax(&g);
    let pc = softmax(judgments);
    let mut j = vec![vec![0.0; g.len()]; m];
    for (r, row) in j.iter_mut().enumerate() {
        for (c, x) in row.iter_mut().enumerate() {
            let coarse = if c == 0 { pc[r] } else { 0.0 };
            *x = alpha * coarse + (1.0 - alpha) * pf[c] / m as f64;
        }
    }
    j
}

/// Unified loss of one node: cross-entropy between its judgment matrix and
/// the softmax over all `M(K+1)` scores.
pub fn c2f_node(
    z: &[f64],
    views: &[Vec<f64>],
    negatives: &[Vec<f64>],
    judgments: &[f64],
    alpha: f64,
    tau: f64,
    normalize: bool,
) -> f64 {
    let s = score_matrix(z, views, negatives, tau, normalize);
    let j = judgment_matrix(z, negatives, judgments, alpha, tau, normalize);
    let mut flat = Vec::new();
    for row in &s {
        flat.extend_from_slice(row);
    }
    let lse = log_sum_exp(&flat);
    let mut loss = 0.0;
    for m in 0..s.len() {
        for k in 0..s[m].len() {
            if j[m][k] > 0.0 {
                loss -= j[m][k] * (s[m][k] - lse);
            }
        }
    }
    loss
}

/// Fine-grained loss of one node (`α = 0`).
pub fn fine_node(
    z: &[f64],
    views: &[Vec<f64>],
    negatives: &[Vec<f64>],
    tau: f64,
    normalize: bool,
) -> f64 {
    let judgments = vec![1.0; views.len()];
    c2f_node(z, views, negatives, &judgments, 0.0, tau, normalize)
}

/// Mean of [`c2f_node`] over nodes. `views[m][n]` is node `n` in view `m`
/// and `negatives[n]` the negatives of node `n`.
pub fn c2f(
    z: &[Vec<f64>],
    views: &[Vec<Vec<f64>>],
    negatives: &[Vec<Vec<f64>>],
    judgments: &[f64],
    alpha: f64,
    tau: f64,
    normalize: bool,
) -> f64 {
    let mut total = 0.0;
    for n in 0..z.len() {
        let node_views: Vec<Vec<f64>> = views.iter().map(|v| v[n].clone()).collect();
        total += c2f_node(
            &z[n],
            &node_views,
            &negatives[n],
            judgments,
            alpha,
            tau,
            normalize,
        );
    }
    total / z.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn listnet_hand_values() {
        assert!((listnet(&[0.5, 0.5], &[3.0, 3.0]) - 2f64.ln()).abs() < 1e-15);
        // σ([1, 0.7]) = [0.574443, 0.425557].
        let s = [2.0, 1.0];
        let ls = [-(1.0 + (-1f64).exp()).ln(), -(1.0 + 1f64.exp()).ln()];
        let expect = -(0.574_442_516_811_659_9 * ls[0] + 0.425_557_483_188_340_1 * ls[1]);
        assert!((listnet(&[1.0, 0.7], &s) - expect).abs() < 1e-12);
    }

    #[test]
    fn judgment_matrix_sums_to_one() {
        let z = [0.3, -1.2];
        let negs = vec![vec![1.0, 0.5], vec![-0.4, 0.9]];
        let j = judgment_matrix(&z, &negs, &[1.0, 0.7], 0.8, 0.1, false);
        let total: f64 = j.iter().flatten().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(j[0][0] > j[1][0]);
        assert_eq!(j[0][1], j[1][1]);
    }
}
