//! Linear-probe evaluation, classification metrics and view-similarity
//! diagnostics.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::drop_edge;
use crate::autodiff::Tape;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tensor::Tensor;
use crate::trainer::AdamState;

/// Disjoint node index lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn validate(&self, num_nodes: usize) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::Config("split: empty train set".into()));
        }
        let mut seen = vec![false; num_nodes];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= num_nodes {
                return Err(Error::Config(format!("split: node {i} out of range")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Config(format!("split: node {i} appears twice")));
            }
        }
        Ok(())
    }
}

/// Stratified split: per class, `per_class_train` nodes for training,
/// `per_class_val` for validation, the rest for testing. Lists are sorted.
pub fn make_split(
    labels: &[usize],
    per_class_train: usize,
    per_class_val: usize,
    seed: u64,
) -> Result<Split> {
    let num_classes = labels.iter().max().map_or(0, |&c| c + 1);
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, &c) in labels.iter().enumerate() {
        by_class[c].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (class, mut members) in by_class.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let needed = per_class_train + per_class_val;
        if members.len() < needed {
            return Err(Error::ClassTooSmall {
                class,
                available: members.len(),
                required: needed,
            });
        }
        members.shuffle(&mut rng);
        split.train.extend_from_slice(&members[..per_class_train]);
        split
            .val
            .extend_from_slice(&members[per_class_train..needed]);
        split.test.extend_from_slice(&members[needed..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Z-score every embedding column over all nodes before fitting. Uses no
    /// labels, and removes the scale difference between encoders.
    pub standardize: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            learning_rate: 0.01,
            weight_decay: 5e-4,
            standardize: true,
        }
    }
}

/// Softmax regression on frozen embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub weights: Tensor,
    pub bias: Tensor,
    /// Epoch (1-based) whose parameters were kept; 0 means the initial ones.
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

fn rows_of(z: &Tensor, nodes: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(nodes.len(), z.cols());
    for (r, &n) in nodes.iter().enumerate() {
        out.row_mut(r).copy_from_slice(z.row(n));
    }
    out
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

impl LinearProbe {
    /// Trains with full-batch Adam, keeping the parameters of the epoch with
    /// the best validation accuracy (earliest on ties). An empty validation
    /// set keeps the final epoch.
    pub fn fit(
        z: &Tensor,
        train: &[usize],
        train_labels: &[usize],
        val: &[usize],
        val_labels: &[usize],
        num_classes: usize,
        cfg: &ProbeConfig,
    ) -> Result<Self> {
        if train.is_empty() || train.len() != train_labels.len() || val.len() != val_labels.len() {
            return Err(Error::Config(
                "probe: train/val index and label lists disagree".into(),
            ));
        }
        if !z.is_finite() {
            return Err(Error::Config(
                "probe: embeddings contain non-finite values".into(),
            ));
        }
        if train_labels.iter().any(|&c| c >= num_classes)
            || val_labels.iter().any(|&c| c >= num_classes)
        {
            return Err(Error::Config("probe: label out of range".into()));
        }
        if train_labels.iter().all(|&c| c == train_labels[0]) {
            return Err(Error::SingleClassTrain);
        }
        let x = rows_of(z, train);
        let xv = rows_of(z, val);
        let targets = Tensor::from_fn(train.len(), num_classes, |i, c| {
            f64::from(train_labels[i] == c)
        });
        let mut params = vec![
            Tensor::zeros(z.cols(), num_classes),
            Tensor::zeros(1, num_classes),
        ];
        let mut adam = AdamState::new(&params);
        let mut probe = LinearProbe {
            weights: params[0].clone(),
            bias: params[1].clone(),
            best_epoch: 0,
            best_val_accuracy: f64::NEG_INFINITY,
        };
        let val_accuracy = |p: &LinearProbe| -> f64 {
            let logits = p.logits(&xv);
            let hits = (0..val.len())
                .filter(|&i| argmax(logits.row(i)) == val_labels[i])
                .count();
            hits as f64 / val.len() as f64
        };
        if !val.is_empty() {
            probe.best_val_accuracy = val_accuracy(&probe);
        }
        for epoch in 1..=cfg.epochs {
            let tape = Tape::new();
            let w = tape.leaf(params[0].clone(), true);
            let b = tape.leaf(params[1].clone(), true);
            let logits = tape.constant(x.clone()).matmul(w)?.add_row(b)?;
            let loss = crate::losses::cross_entropy(&targets, logits)?;
            tape.backward(loss)?;
            let mut gw = tape.grad(w).expect("leaf");
            let gb = tape.grad(b).expect("leaf");
            // Coupled L2 penalty on the weights only.
            gw.add_assign(&params[0].map(|v| cfg.weight_decay * v));
            adam.update(&mut params, &[gw, gb], cfg.learning_rate);
            let candidate = LinearProbe {
                weights: params[0].clone(),
                bias: params[1].clone(),
                best_epoch: epoch,
                best_val_accuracy: 0.0,
            };
            if val.is_empty() {
                probe = candidate;
                probe.best_val_accuracy = f64::NAN;
            } else {
                let acc = val_accuracy(&candidate);
                if acc > probe.best_val_accuracy {
                    probe = LinearProbe {
                        best_val_accuracy: acc,
                        ..candidate
                    };
                }
            }
        }
        Ok(probe)
    }

    fn logits(&self, x: &Tensor) -> Tensor {
        let mut out = x.matmul(&self.weights).expect("probe width");
        for i in 0..out.rows() {
            for (v, b) in out.row_mut(i).iter_mut().zip(self.bias.data()) {
                *v += b;
            }
        }
        out
    }

    /// Class probabilities for the given nodes, one row each.
    pub fn predict_proba(&self, z: &Tensor, nodes: &[usize]) -> Tensor {
        let logits = self.logits(&rows_of(z, nodes));
        crate::losses::softmax_rows(&logits).expect("finite logits")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    /// Macro-averaged F1.
    pub f1: f64,
    /// Macro one-vs-rest ROC AUC over class probabilities.
    pub auc: f64,
    /// Macro-averaged recall.
    pub recall: f64,
}

/// Area under the ROC curve via the Mann–Whitney statistic, ties counted as
/// one half. `None` unless both classes are present.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positive.len());
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(positive)
        .filter(|(_, &p)| p)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation; `NaN` when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Metrics of predicted class probabilities against true labels. Macro
/// averages run over classes present in the labels or the predictions; AUC
/// skips classes without both positives and negatives (0.5 if none qualify).
pub fn classification_metrics(labels: &[usize], probs: &Tensor) -> Result<MetricsReport> {
    if labels.is_empty() || labels.len() != probs.rows() {
        return Err(Error::Config(
            "metrics: need one probability row per label".into(),
        ));
    }
    let c = probs.cols();
    if labels.iter().any(|&l| l >= c) {
        return Err(Error::Config("metrics: label out of range".into()));
    }
    let preds: Vec<usize> = (0..labels.len()).map(|i| argmax(probs.row(i))).collect();
    let n = labels.len() as f64;
    let accuracy = labels.iter().zip(&preds).filter(|(a, b)| a == b).count() as f64 / n;

    let mut f1 = 0.0;
    let mut recall = 0.0;
    let mut present = 0usize;
    let mut auc = 0.0;
    let mut auc_classes = 0usize;
    for class in 0..c {
        let tp = labels
            .iter()
            .zip(&preds)
            .filter(|&(&l, &p)| l == class && p == class)
            .count();
        let support = labels.iter().filter(|&&l| l == class).count();
        let predicted = preds.iter().filter(|&&p| p == class).count();
        if support > 0 || predicted > 0 {
            present += 1;
            let r = if support > 0 {
                tp as f64 / support as f64
            } else {
                0.0
            };
            let p = if predicted > 0 {
                tp as f64 / predicted as f64
            } else {
                0.0
            };
            recall += r;
            if p + r > 0.0 {
                f1 += 2.0 * p * r / (p + r);
            }
        }
        let scores: Vec<f64> = (0..labels.len()).map(|i| probs.get(i, class)).collect();
        let positive: Vec<bool> = labels.iter().map(|&l| l == class).collect();
        if let Some(a) = roc_auc(&scores, &positive) {
            auc += a;
            auc_classes += 1;
        }
    }
    Ok(MetricsReport {
        accuracy,
        f1: f1 / present as f64,
        auc: if auc_classes > 0 {
            auc / auc_classes as f64
        } else {
            0.5
        },
        recall: recall / present as f64,
    })
}

/// Fits a probe on the train/val part of `split` and reports test metrics.
/// Test labels are only handed to the metric computation.
pub fn linear_probe(
    z: &Tensor,
    labels: &[usize],
    num_classes: usize,
    split: &Split,
    cfg: &ProbeConfig,
) -> Result<MetricsReport> {
    split.validate(z.rows())?;
    if labels.len() != z.rows() {
        return Err(Error::Config(format!(
            "probe: {} labels for {} embeddings",
            labels.len(),
            z.rows()
        )));
    }
    if split.test.is_empty() {
        return Err(Error::Config("probe: empty test set".into()));
    }
    let pick = |nodes: &[usize]| nodes.iter().map(|&i| labels[i]).collect::<Vec<_>>();
    let standardized;
    let z = if cfg.standardize {
        standardized = standardize_columns(z);
        &standardized
    } else {
        z
    };
    let probe = LinearProbe::fit(
        z,
        &split.train,
        &pick(&split.train),
        &split.val,
        &pick(&split.val),
        num_classes,
        cfg,
    )?;
    let probs = probe.predict_proba(z, &split.test);
    classification_metrics(&pick(&split.test), &probs)
}

/// Columns shifted to zero mean and scaled to unit variance; constant
/// columns become zero.
pub fn standardize_columns(z: &Tensor) -> Tensor {
    let n = z.rows() as f64;
    let mut out = z.clone();
    for j in 0..z.cols() {
        let mean = (0..z.rows()).map(|i| z.get(i, j)).sum::<f64>() / n;
        let var = (0..z.rows())
            .map(|i| (z.get(i, j) - mean).powi(2))
            .sum::<f64>()
            / n;
        let scale = if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 };
        for i in 0..z.rows() {
            out.set(i, j, (z.get(i, j) - mean) * scale);
        }
    }
    out
}

fn unit_rows(z: &Tensor) -> Tensor {
    let mut out = z.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb).sqrt()).clamp(-1.0, 1.0)
}

/// Mean cosine similarity over unordered pairs of distinct rows.
pub fn mean_pairwise_cosine(z: &Tensor) -> f64 {
    let n = z.rows();
    if n < 2 {
        return 0.0;
    }
    let u = unit_rows(z);
    let mut total = vec![0.0; z.cols()];
    let mut self_sum = 0.0;
    for i in 0..n {
        let row = u.row(i);
        self_sum += row.iter().map(|v| v * v).sum::<f64>();
        total.iter_mut().zip(row).for_each(|(t, v)| *t += v);
    }
    let all: f64 = total.iter().map(|t| t * t).sum();
    (all - self_sum) / (n * (n - 1)) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub drop_ratio: f64,
    /// Mean cosine between a node's clean and view embeddings.
    pub inter_view: f64,
    /// Mean pairwise cosine between view embeddings of distinct nodes.
    pub intra_view: f64,
}

/// Similarity between clean and edge-dropped embeddings, averaged over
/// `seeds` draws per ratio. Draw `s` uses the same random stream for every
/// ratio, so larger ratios drop a superset of the edges dropped by smaller
/// ones.
pub fn similarity_diagnostics(
    graph: &Graph,
    encoder: &Encoder,
    drop_ratios: &[f64],
    seeds: usize,
    base_seed: u64,
) -> Result<Vec<DiagnosticRow>> {
    if seeds == 0 {
        return Err(Error::Config(
            "diagnostics: seeds must be at least 1".into(),
        ));
    }
    if let Some(r) = drop_ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::Config(format!(
            "diagnostics: drop ratio {r} outside [0, 1]"
        )));
    }
    let clean = encoder.embed(graph)?;
    drop_ratios
        .iter()
        .map(|&ratio| {
            let mut inter = 0.0;
            let mut intra = 0.0;
            for s in 0..seeds as u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(s));
                let view = encoder.embed(&drop_edge(graph, ratio, &mut rng))?;
                let per_node: f64 = (0..clean.rows())
                    .map(|i| cosine(clean.row(i), view.row(i)))
                    .sum();
                inter += per_node / clean.rows() as f64;
                intra += mean_pairwise_cosine(&view);
            }
            Ok(DiagnosticRow {
                drop_ratio: ratio,
                inter_view: inter / seeds as f64,
                intra_view: intra / seeds as f64,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes() {
        let labels: Vec<usize> = (0..100).map(|i| i / 50).collect();
        let s = make_split(&labels, 20, 30, 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (40, 60, 0));
        let labels: Vec<usize> = (0..200).map(|i| i % 2).collect();
        let s = make_split(&labels, 20, 30, 1).unwrap();
        assert_eq!(s.test.len(), 100);
        assert_eq!(s.test.iter().filter(|&&i| labels[i] == 0).count(), 50);
        s.validate(200).unwrap();
        assert!(matches!(
            make_split(&labels, 60, 50, 0),
            Err(Error::ClassTooSmall { .. })
        ));
    }

    #[test]
    fn auc_extremes() {
        let scores = [0.1, 0.2, 0.8, 0.9];
        assert_eq!(roc_auc(&scores, &[false, false, true, true]), Some(1.0));
        assert_eq!(roc_auc(&scores, &[true, true, false, false]), Some(0.0));
        assert_eq!(roc_auc(&[0.5, 0.5], &[true, false]), Some(0.5));
        assert_eq!(roc_auc(&scores, &[true; 4]), None);
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 4.0, 9.0, 16.0]) - 1.0).abs() < 1e-15);
        assert_eq!(average_ranks(&[2.0, 1.0, 2.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn separable_probe_is_perfect() {
        let n = 80;
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let z = Tensor::from_fn(n, 3, |i, j| {
            let sign = if labels[i] == 0 { -1.0 } else { 1.0 };
            if j == 0 {
                sign * (1.0 + (i % 7) as f64 * 0.1)
            } else {
                ((i * 31 + j * 17) % 11) as f64 / 11.0
            }
        });
        let split = make_split(&labels, 10, 10, 3).unwrap();
        let m = linear_probe(&z, &labels, 2, &split, &ProbeConfig::default()).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.auc, 1.0);
        assert_eq!(m.f1, 1.0);
        assert_eq!(m.recall, 1.0);
    }

    #[test]
    fn single_class_train_rejected() {
        let z = Tensor::ones(4, 2);
        let err = LinearProbe::fit(&z, &[0, 1], &[1, 1], &[2], &[0], 2, &ProbeConfig::default());
        assert!(matches!(err, Err(Error::SingleClassTrain)));
    }

    #[test]
    fn pairwise_cosine_matches_loop() {
        let z = Tensor::from_fn(6, 3, |i, j| ((i * 5 + j * 3) % 7) as f64 - 3.0);
        let mut s = 0.0;
        let mut count = 0.0;
        for i in 0..6 {
            for j in i + 1..6 {
                s += cosine(z.row(i), z.row(j));
                count += 1.0;
            }
        }
        assert!((mean_pairwise_cosine(&z) - s / count).abs() < 1e-12);
    }
}
