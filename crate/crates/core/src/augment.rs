//! Graph augmentations and ordered view lists.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Augmentation applied to produce one view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ViewKind {
    /// Each undirected edge removed with probability `drop_ratio`.
    DropEdge { drop_ratio: f64 },
    /// Each feature dimension zeroed for all nodes with probability `mask_prob`.
    FeatureMask { mask_prob: f64 },
}

impl ViewKind {
    pub fn strength(&self) -> f64 {
        match *self {
            ViewKind::DropEdge { drop_ratio } => drop_ratio,
            ViewKind::FeatureMask { mask_prob } => mask_prob,
        }
    }

    fn same_kind(&self, other: &Self) -> bool {
        std::mem::discriminant(self) == std::mem::discriminant(other)
    }
}

/// One augmentation recipe and the judgment score of its view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewSpec {
    pub kind: ViewKind,
    pub judgment: f64,
}

impl ViewSpec {
    pub fn drop_edge(drop_ratio: f64, judgment: f64) -> Self {
        Self {
            kind: ViewKind::DropEdge { drop_ratio },
            judgment,
        }
    }

    pub fn feature_mask(mask_prob: f64, judgment: f64) -> Self {
        Self {
            kind: ViewKind::FeatureMask { mask_prob },
            judgment,
        }
    }
}

/// How strictly a view list must be ordered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ordering {
    /// Strengths strictly increase, judgments strictly decrease.
    Strict,
    /// Ties allowed; the ablation baselines repeat one view or one judgment.
    AllowTies,
}

/// Checks that a view list is homogeneous and ordered by increasing strength
/// and decreasing judgment.
pub fn validate_views(specs: &[ViewSpec], ordering: Ordering) -> Result<()> {
    let err = |m: String| Err(Error::Config(m));
    let Some(first) = specs.first() else {
        return err("at least one view is required".into());
    };
    for (m, s) in specs.iter().enumerate() {
        let p = s.kind.strength();
        if !(0.0..=1.0).contains(&p) {
            return err(format!("view {m}: strength {p} outside [0, 1]"));
        }
        if !(s.judgment.is_finite() && s.judgment > 0.0) {
            return err(format!(
                "view {m}: judgment {} must be positive",
                s.judgment
            ));
        }
        if !s.kind.same_kind(&first.kind) {
            return err(format!("view {m}: mixed augmentation kinds in one list"));
        }
    }
    for (m, w) in specs.windows(2).enumerate() {
        let (a, b) = (w[0].kind.strength(), w[1].kind.strength());
        let (ga, gb) = (w[0].judgment, w[1].judgment);
        let (strength_ok, judgment_ok) = match ordering {
            Ordering::Strict => (a < b, ga > gb),
            Ordering::AllowTies => (a <= b, ga >= gb),
        };
        if !strength_ok {
            return err(format!(
                "views {m} and {}: strengths must increase ({a} then {b})",
                m + 1
            ));
        }
        if !judgment_ok {
            return err(format!(
                "views {m} and {}: judgments must decrease ({ga} then {gb})",
                m + 1
            ));
        }
    }
    Ok(())
}

/// Removes each undirected edge independently with probability `drop_ratio`.
pub fn drop_edge<R: Rng + ?Sized>(g: &Graph, drop_ratio: f64, rng: &mut R) -> Graph {
    let kept: Vec<_> = g
        .undirected_edges()
        .filter(|_| rng.random::<f64>() >= drop_ratio)
        .collect();
    g.with_edges(&kept)
}

/// Zeroes each feature dimension, for every node at once, with probability
/// `mask_prob`.
pub fn feature_mask<R: Rng + ?Sized>(g: &Graph, mask_prob: f64, rng: &mut R) -> Graph {
    let keep: Vec<bool> = (0..g.feature_dim())
        .map(|_| rng.random::<f64>() >= mask_prob)
        .collect();
    let mut features = g.features().clone();
    for i in 0..features.rows() {
        for (x, &k) in features.row_mut(i).iter_mut().zip(&keep) {
            if !k {
                *x = 0.0;
            }
        }
    }
    g.with_features(features)
}

pub fn apply_view<R: Rng + ?Sized>(g: &Graph, kind: ViewKind, rng: &mut R) -> Graph {
    match kind {
        ViewKind::DropEdge { drop_ratio } => drop_edge(g, drop_ratio, rng),
        ViewKind::FeatureMask { mask_prob } => feature_mask(g, mask_prob, rng),
    }
}

/// One fresh view per spec, in spec order. Specs must be strictly ordered.
pub fn make_views<R: Rng + ?Sized>(
    g: &Graph,
    specs: &[ViewSpec],
    rng: &mut R,
) -> Result<Vec<Graph>> {
    make_views_with(g, specs, Ordering::Strict, rng)
}

pub fn make_views_with<R: Rng + ?Sized>(
    g: &Graph,
    specs: &[ViewSpec],
    ordering: Ordering,
    rng: &mut R,
) -> Result<Vec<Graph>> {
    validate_views(specs, ordering)?;
    Ok(specs.iter().map(|s| apply_view(g, s.kind, rng)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_sbm, SbmSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sbm(seed: u64) -> Graph {
        generate_sbm(&SbmSpec {
            block_sizes: vec![20, 20],
            p_in: 0.3,
            p_out: 0.05,
            feature_dim: 6,
            mean_separation: 1.0,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn drop_extremes() {
        let g = sbm(1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(drop_edge(&g, 0.0, &mut rng), g);
        let empty = drop_edge(&g, 1.0, &mut rng);
        assert_eq!(empty.num_entries(), 0);
        assert_eq!(empty.features(), g.features());
    }

    #[test]
    fn mask_extremes() {
        let g = sbm(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(feature_mask(&g, 0.0, &mut rng), g);
        let zeroed = feature_mask(&g, 1.0, &mut rng);
        assert!(zeroed.features().data().iter().all(|&x| x == 0.0));
        assert_eq!(zeroed.offsets(), g.offsets());
    }

    #[test]
    fn view_order_enforced() {
        let g = sbm(3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ok = [ViewSpec::drop_edge(0.5, 1.0), ViewSpec::drop_edge(0.8, 0.7)];
        assert_eq!(make_views(&g, &ok, &mut rng).unwrap().len(), 2);
        let bad = [ViewSpec::drop_edge(0.8, 1.0), ViewSpec::drop_edge(0.5, 0.7)];
        let msg = make_views(&g, &bad, &mut rng).unwrap_err().to_string();
        assert!(msg.contains("strengths must increase"), "{msg}");
        let bad = [ViewSpec::drop_edge(0.5, 0.7), ViewSpec::drop_edge(0.8, 1.0)];
        assert!(make_views(&g, &bad, &mut rng).is_err());
        let mixed = [
            ViewSpec::drop_edge(0.5, 1.0),
            ViewSpec::feature_mask(0.8, 0.7),
        ];
        assert!(make_views(&g, &mixed, &mut rng).is_err());
        let tied = [ViewSpec::drop_edge(0.2, 1.0), ViewSpec::drop_edge(0.2, 1.0)];
        assert!(make_views(&g, &tied, &mut rng).is_err());
        assert!(make_views_with(&g, &tied, Ordering::AllowTies, &mut rng).is_ok());
    }

    #[test]
    fn single_identity_view() {
        let g = sbm(4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let views = make_views(&g, &[ViewSpec::drop_edge(0.0, 1.0)], &mut rng).unwrap();
        assert_eq!(views, vec![g]);
    }
}
