//! Undirected attributed graphs in CSR form, file loading and a stochastic
//! block model generator.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{GraphError, GraphViolation};
use crate::tensor::Tensor;

/// Undirected graph with node features. Each undirected edge is stored in
/// both directions; no self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    features: Tensor,
    labels: Option<Vec<usize>>,
    num_classes: usize,
}

impl Graph {
    /// Builds a graph from an arbitrary edge list: edges are symmetrized,
    /// duplicates and self-loops dropped.
    pub fn from_edges(
        num_nodes: usize,
        edges: &[(usize, usize)],
        features: Tensor,
        labels: Option<Vec<usize>>,
    ) -> Result<Self, GraphError> {
        if features.rows() != num_nodes {
            return Err(GraphError::FeatureRowMismatch {
                expected: num_nodes,
                found: features.rows(),
            });
        }
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
        for &(a, b) in edges {
            for idx in [a, b] {
                if idx >= num_nodes {
                    return Err(GraphError::NodeOutOfRange {
                        index: idx,
                        num_nodes,
                    });
                }
            }
            if a != b {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for mut row in adj {
            row.sort_unstable();
            row.dedup();
            neighbors.extend(row);
            offsets.push(neighbors.len());
        }
        let num_classes = labels
            .as_ref()
            .and_then(|l| l.iter().max())
            .map_or(0, |m| m + 1);
        let g = Self {
            offsets,
            neighbors,
            features,
            labels,
            num_classes,
        };
        g.validate()?;
        Ok(g)
    }

    /// Assembles a graph from raw CSR arrays without checking anything; use
    /// [`Graph::validate`] to inspect the result.
    pub fn from_csr_unchecked(
        offsets: Vec<usize>,
        neighbors: Vec<usize>,
        features: Tensor,
        labels: Option<Vec<usize>>,
        num_classes: usize,
    ) -> Self {
        Self {
            offsets,
            neighbors,
            features,
            labels,
            num_classes,
        }
    }

    /// Returns the first invariant violation, if any.
    pub fn validate(&self) -> Result<(), GraphViolation> {
        let n = self.num_nodes();
        if self.offsets.len() != n + 1 || self.offsets[0] != 0 {
            return Err(GraphViolation::OffsetLength {
                expected: n + 1,
                found: self.offsets.len(),
            });
        }
        for (row, w) in self.offsets.windows(2).enumerate() {
            if w[0] > w[1] {
                return Err(GraphViolation::OffsetOrder { row });
            }
        }
        if self.offsets[n] != self.neighbors.len() {
            return Err(GraphViolation::OffsetTotal {
                last: self.offsets[n],
                entries: self.neighbors.len(),
            });
        }
        for row in 0..n {
            let nbrs = self.neighbors(row);
            for &col in nbrs {
                if col >= n {
                    return Err(GraphViolation::ColumnRange { row, col });
                }
                if col == row {
                    return Err(GraphViolation::SelfLoop { node: row });
                }
            }
            if nbrs.windows(2).any(|w| w[0] >= w[1]) {
                return Err(GraphViolation::ColumnOrder { row });
            }
        }
        for row in 0..n {
            for &col in self.neighbors(row) {
                if self.neighbors(col).binary_search(&row).is_err() {
                    return Err(GraphViolation::Asymmetric { from: row, to: col });
                }
            }
        }
        if self.features.rows() != n {
            return Err(GraphViolation::FeatureRows {
                expected: n,
                found: self.features.rows(),
            });
        }
        if let Some(labels) = &self.labels {
            if labels.len() != n {
                return Err(GraphViolation::LabelCount {
                    expected: n,
                    found: labels.len(),
                });
            }
            if let Some((node, &label)) = labels
                .iter()
                .enumerate()
                .find(|(_, &l)| l >= self.num_classes)
            {
                return Err(GraphViolation::LabelRange {
                    node,
                    label,
                    classes: self.num_classes,
                });
            }
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    /// Directed adjacency entries (twice the undirected edge count).
    pub fn num_entries(&self) -> usize {
        self.neighbors.len()
    }

    pub fn num_undirected_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn neighbor_indices(&self) -> &[usize] {
        &self.neighbors
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[self.offsets[node]..self.offsets[node + 1]]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.neighbors(a).binary_search(&b).is_ok()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Undirected edges `(i, j)` with `i < j`, in row-major order.
    pub fn undirected_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes()).flat_map(move |i| {
            self.neighbors(i)
                .iter()
                .filter(move |&&j| j > i)
                .map(move |&j| (i, j))
        })
    }

    /// Same nodes and labels with a different edge set.
    pub fn with_edges(&self, edges: &[(usize, usize)]) -> Self {
        Self::from_edges(
            self.num_nodes(),
            edges,
            self.features.clone(),
            self.labels.clone(),
        )
        .map(|mut g| {
            g.num_classes = self.num_classes;
            g
        })
        .expect("edges drawn from a valid graph")
    }

    /// Same structure with replaced features.
    pub fn with_features(&self, features: Tensor) -> Self {
        assert_eq!(features.rows(), self.num_nodes());
        Self {
            features,
            ..self.clone()
        }
    }

    /// Relabels nodes: node `i` becomes `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Self {
        let n = self.num_nodes();
        let edges: Vec<_> = self
            .undirected_edges()
            .map(|(a, b)| (perm[a], perm[b]))
            .collect();
        let mut features = Tensor::zeros(n, self.feature_dim());
        for (i, &p) in perm.iter().enumerate() {
            features.row_mut(p).copy_from_slice(self.features.row(i));
        }
        let labels = self.labels.as_ref().map(|l| {
            let mut out = vec![0; n];
            for i in 0..n {
                out[perm[i]] = l[i];
            }
            out
        });
        let mut g =
            Self::from_edges(n, &edges, features, labels).expect("permutation of valid graph");
        g.num_classes = self.num_classes;
        g
    }
}

/// Reads a graph from an edge list, a feature CSV and optional labels.
///
/// The node count is the number of feature rows.
pub fn load_graph(
    edge_path: &Path,
    feature_path: &Path,
    label_path: Option<&Path>,
) -> Result<Graph, GraphError> {
    let features = read_features(feature_path)?;
    let n = features.rows();
    let edges = read_edges(edge_path)?;
    let labels = label_path.map(read_labels).transpose()?;
    if let Some(l) = &labels {
        if l.len() != n {
            return Err(GraphError::Violation(GraphViolation::LabelCount {
                expected: n,
                found: l.len(),
            }));
        }
    }
    Graph::from_edges(n, &edges, features, labels)
}

fn read_text(path: &Path) -> Result<String, GraphError> {
    fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_error(path: &Path, line: usize, reason: impl Into<String>) -> GraphError {
    GraphError::Parse {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

pub fn read_edges(path: &Path) -> Result<Vec<(usize, usize)>, GraphError> {
    let text = read_text(path)?;
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let mut next = || -> Result<usize, GraphError> {
            let tok = it
                .next()
                .ok_or_else(|| parse_error(path, lineno + 1, "expected two node indices"))?;
            tok.parse()
                .map_err(|_| parse_error(path, lineno + 1, format!("bad node index {tok:?}")))
        };
        let a = next()?;
        let b = next()?;
        if it.next().is_some() {
            return Err(parse_error(path, lineno + 1, "trailing tokens"));
        }
        edges.push((a, b));
    }
    Ok(edges)
}

pub fn read_features(path: &Path) -> Result<Tensor, GraphError> {
    let text = read_text(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|tok| {
                tok.trim().parse::<f64>().map_err(|_| {
                    parse_error(path, lineno + 1, format!("bad feature value {tok:?}"))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_error(
                    path,
                    lineno + 1,
                    format!("expected {} columns, found {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    Tensor::from_rows(&rows).map_err(|e| parse_error(path, 0, e.to_string()))
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>, GraphError> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(lineno, l)| {
            l.trim()
                .parse()
                .map_err(|_| parse_error(path, lineno + 1, format!("bad label {:?}", l.trim())))
        })
        .collect()
}

/// Writes the three text files [`load_graph`] reads.
pub fn write_graph(
    g: &Graph,
    edge_path: &Path,
    feature_path: &Path,
    label_path: Option<&Path>,
) -> std::io::Result<()> {
    use std::fmt::Write as _;
    let mut edges = String::new();
    for (a, b) in g.undirected_edges() {
        let _ = writeln!(edges, "{a} {b}");
    }
    fs::write(edge_path, edges)?;
    let mut feats = String::new();
    for i in 0..g.num_nodes() {
        let row: Vec<String> = g.features.row(i).iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(feats, "{}", row.join(","));
    }
    fs::write(feature_path, feats)?;
    if let (Some(path), Some(labels)) = (label_path, g.labels()) {
        let mut out = String::new();
        for l in labels {
            let _ = writeln!(out, "{l}");
        }
        fs::write(path, out)?;
    }
    Ok(())
}

/// Parameters of a stochastic block model with Gaussian node features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbmSpec {
    pub block_sizes: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub mean_separation: f64,
    pub seed: u64,
}

impl SbmSpec {
    pub fn validate(&self) -> Result<(), GraphError> {
        let bad = |msg: String| Err(GraphError::Spec(msg));
        if self.block_sizes.is_empty() || self.block_sizes.contains(&0) {
            return bad("block sizes must be nonempty and positive".into());
        }
        for (name, p) in [("p_in", self.p_in), ("p_out", self.p_out)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} outside [0, 1]"));
            }
        }
        if self.feature_dim < self.block_sizes.len() {
            return bad(format!(
                "feature_dim {} smaller than block count {}",
                self.feature_dim,
                self.block_sizes.len()
            ));
        }
        if !(self.mean_separation >= 0.0 && self.mean_separation.is_finite()) {
            return bad(format!(
                "mean_separation {} must be >= 0",
                self.mean_separation
            ));
        }
        Ok(())
    }
}

/// Samples a graph from `spec`. Block `b` has feature mean
/// `(mean_separation / √2)·e_b`, so any two block means are exactly
/// `mean_separation` apart; noise is unit-variance isotropic.
pub fn generate_sbm(spec: &SbmSpec) -> Result<Graph, GraphError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let labels: Vec<usize> = spec
        .block_sizes
        .iter()
        .enumerate()
        .flat_map(|(b, &size)| std::iter::repeat_n(b, size))
        .collect();
    let n = labels.len();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] {
                spec.p_in
            } else {
                spec.p_out
            };
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    let offset = spec.mean_separation / std::f64::consts::SQRT_2;
    let mut features = Tensor::zeros(n, spec.feature_dim);
    for (i, &label) in labels.iter().enumerate() {
        for (j, x) in features.row_mut(i).iter_mut().enumerate() {
            let noise: f64 = rng.sample(StandardNormal);
            *x = noise + if j == label { offset } else { 0.0 };
        }
    }
    let mut g = Graph::from_edges(n, &edges, features, Some(labels))?;
    g.num_classes = spec.block_sizes.len();
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn feats(n: usize) -> Tensor {
        Tensor::from_fn(n, 1, |i, _| i as f64 + 1.0)
    }

    #[test]
    fn smallest_graph() {
        let g = Graph::from_edges(2, &[(0, 1)], feats(2), None).unwrap();
        assert_eq!(g.num_nodes(), 2);
        assert_eq!(g.num_entries(), 2);
    }

    #[test]
    fn self_loop_dropped() {
        let g = Graph::from_edges(2, &[(0, 0)], feats(2), None).unwrap();
        assert_eq!(g.num_entries(), 0);
    }

    #[test]
    fn duplicate_edges_collapse() {
        let g = Graph::from_edges(2, &[(0, 1), (1, 0), (0, 1)], feats(2), None).unwrap();
        assert_eq!(g.num_entries(), 2);
    }

    #[test]
    fn out_of_range_node() {
        let err = Graph::from_edges(2, &[(0, 2)], feats(2), None).unwrap_err();
        assert!(matches!(err, GraphError::NodeOutOfRange { index: 2, .. }));
    }

    #[test]
    fn validate_reports_violations() {
        let ok = Graph::from_csr_unchecked(vec![0, 1, 2], vec![1, 0], feats(2), None, 0);
        assert_eq!(ok.validate(), Ok(()));
        let asym = Graph::from_csr_unchecked(vec![0, 1, 1], vec![1], feats(2), None, 0);
        assert_eq!(
            asym.validate(),
            Err(GraphViolation::Asymmetric { from: 0, to: 1 })
        );
        let unsorted =
            Graph::from_csr_unchecked(vec![0, 2, 3, 4], vec![2, 1, 0, 0], feats(3), None, 0);
        assert_eq!(
            unsorted.validate(),
            Err(GraphViolation::ColumnOrder { row: 0 })
        );
        let bad_label =
            Graph::from_csr_unchecked(vec![0, 0, 0], vec![], feats(2), Some(vec![0, 3]), 2);
        assert!(matches!(
            bad_label.validate(),
            Err(GraphViolation::LabelRange { node: 1, .. })
        ));
    }

    #[test]
    fn sbm_extremes() {
        let spec = SbmSpec {
            block_sizes: vec![3],
            p_in: 1.0,
            p_out: 0.0,
            feature_dim: 2,
            mean_separation: 1.0,
            seed: 7,
        };
        assert_eq!(generate_sbm(&spec).unwrap().num_entries(), 6);
        let spec = SbmSpec {
            block_sizes: vec![2, 2],
            p_in: 0.0,
            ..spec
        };
        let g = generate_sbm(&spec).unwrap();
        assert_eq!(g.num_entries(), 0);
        assert_eq!(g.labels().unwrap(), &[0, 0, 1, 1]);
        assert_eq!(g.num_classes(), 2);
    }

    #[test]
    fn sbm_rejects_bad_spec() {
        let spec = SbmSpec {
            block_sizes: vec![3, 0],
            p_in: 0.5,
            p_out: 0.1,
            feature_dim: 4,
            mean_separation: 1.0,
            seed: 0,
        };
        assert!(generate_sbm(&spec).is_err());
        let spec = SbmSpec {
            block_sizes: vec![3],
            p_in: 1.5,
            ..spec
        };
        assert!(generate_sbm(&spec).is_err());
    }

    #[test]
    fn load_reports_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let edges = dir.path().join("e.txt");
        let feats = dir.path().join("f.csv");
        fs::write(&feats, "1.0\n2.0\n").unwrap();
        let mut f = fs::File::create(&edges).unwrap();
        writeln!(f, "# comment\n0 1\n1 x").unwrap();
        match load_graph(&edges, &feats, None) {
            Err(GraphError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        fs::write(&edges, "0 5\n").unwrap();
        assert!(matches!(
            load_graph(&edges, &feats, None),
            Err(GraphError::NodeOutOfRange { index: 5, .. })
        ));
        let labels = dir.path().join("l.txt");
        fs::write(&edges, "0 1\n").unwrap();
        fs::write(&labels, "0\n1\n2\n").unwrap();
        assert!(load_graph(&edges, &feats, Some(&labels)).is_err());
    }
}
