//! Stochastic contrastive-view generation: edge dropping plus feature
//! masking, two independent draws per epoch.

use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::graph::{normalize_adjacency, Graph, NormalizedAdjacency};
use crate::rng::{stream, substream};

/// Which feature entries a mask draw zeroes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskMode {
    /// Whole feature dimensions zeroed across all nodes.
    #[default]
    Column,
    /// Independent per-entry zeroing at the same ratio.
    Entry,
}

/// View-generation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub edge_drop_ratio: f64,
    pub feature_mask_ratio: f64,
    pub mask_mode: MaskMode,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            edge_drop_ratio: 0.4,
            feature_mask_ratio: 0.1,
            mask_mode: MaskMode::Column,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("edge_drop_ratio", self.edge_drop_ratio),
            ("feature_mask_ratio", self.feature_mask_ratio),
        ] {
            if !(0.0..1.0).contains(&r) {
                return Err(CoreError::Argument(format!(
                    "{name} must lie in [0, 1), got {r}"
                )));
            }
        }
        Ok(())
    }
}

/// A perturbed graph together with its normalized adjacency. Node indexing
/// is preserved: node i refers to the same original node in every view.
#[derive(Debug, Clone)]
pub struct View {
    pub graph: Graph,
    pub adjacency: Rc<NormalizedAdjacency>,
}

/// Removes each undirected edge independently with probability `ratio`.
pub fn drop_edges(g: &Graph, ratio: f64, rng: &mut ChaCha8Rng) -> Result<Graph> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(CoreError::Argument(format!(
            "edge drop ratio must lie in [0, 1), got {ratio}"
        )));
    }
    let kept: Vec<(u32, u32)> = g
        .edges()
        .iter()
        .copied()
        .filter(|_| rng.gen::<f64>() >= ratio)
        .collect();
    g.with_edges(kept)
}

/// Zeroes `ceil(ratio * F)` feature dimensions sampled without replacement
/// across all nodes (column mode), or each entry independently with
/// probability `ratio` (entry mode).
pub fn mask_features(g: &Graph, ratio: f64, mode: MaskMode, rng: &mut ChaCha8Rng) -> Result<Graph> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(CoreError::Argument(format!(
            "feature mask ratio must lie in [0, 1), got {ratio}"
        )));
    }
    let f = g.feature_dim();
    let mut x = g.features().clone();
    match mode {
        MaskMode::Column => {
            let count = (ratio * f as f64).ceil() as usize;
            let mut cols: Vec<usize> = (0..f).collect();
            cols.shuffle(rng);
            cols.truncate(count);
            for r in 0..x.rows() {
                let row = x.row_mut(r);
                for &c in &cols {
                    row[c] = 0.0;
                }
            }
        }
        MaskMode::Entry => {
            for v in x.values_mut() {
                if rng.gen::<f64>() < ratio {
                    *v = 0.0;
                }
            }
        }
    }
    g.with_features(x)
}

fn one_view(g: &Graph, cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Result<View> {
    let dropped = drop_edges(g, cfg.edge_drop_ratio, rng)?;
    let masked = mask_features(&dropped, cfg.feature_mask_ratio, cfg.mask_mode, rng)?;
    let adjacency = Rc::new(normalize_adjacency(&masked));
    Ok(View {
        graph: masked,
        adjacency,
    })
}

/// Two independent contrastive views for the given epoch. Each view draws
/// from its own substream of the config seed, so a (seed, epoch) pair fully
/// determines both views.
pub fn make_views(g: &Graph, cfg: &AugmentConfig, epoch: usize) -> Result<(View, View)> {
    cfg.validate()?;
    let mut rng_a = substream(cfg.seed, stream::AUGMENT_BASE + 2 * epoch as u64);
    let mut rng_b = substream(cfg.seed, stream::AUGMENT_BASE + 2 * epoch as u64 + 1);
    Ok((one_view(g, cfg, &mut rng_a)?, one_view(g, cfg, &mut rng_b)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_sbm, SbmSpec};
    use crate::tensor::Tensor;

    fn test_graph() -> Graph {
        generate_sbm(&SbmSpec {
            block_sizes: vec![10, 10],
            p_in: 0.5,
            p_out: 0.1,
            feature_dim: 10,
            feature_shift: 1.0,
            seed: 3,
        })
        .unwrap()
    }

    #[test]
    fn zero_ratios_leave_graph_unchanged() {
        let g = test_graph();
        let cfg = AugmentConfig {
            edge_drop_ratio: 0.0,
            feature_mask_ratio: 0.0,
            ..Default::default()
        };
        let (a, b) = make_views(&g, &cfg, 0).unwrap();
        assert_eq!(a.graph, g);
        assert_eq!(b.graph, g);
    }

    #[test]
    fn near_one_ratio_leaves_almost_nothing() {
        let spec = SbmSpec {
            block_sizes: vec![60, 60],
            p_in: 0.3,
            p_out: 0.1,
            feature_dim: 4,
            feature_shift: 0.0,
            seed: 1,
        };
        let g = generate_sbm(&spec).unwrap();
        assert!(g.num_edges() > 1000);
        let mut rng = substream(0, 2000);
        let dropped = drop_edges(&g, 0.999_999, &mut rng).unwrap();
        assert!(dropped.num_edges() < 10);
    }

    #[test]
    fn mean_surviving_edges_matches_binomial_moments() {
        // K4 has 6 edges; with drop ratio 0.4 the survivor count is
        // Binomial(6, 0.6) per trial.
        let edges = vec![(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
        let g = Graph::new(4, edges, Tensor::zeros(4, 1), None).unwrap();
        let trials = 10_000usize;
        let mut rng = substream(5, 2001);
        let mut total = 0usize;
        for _ in 0..trials {
            total += drop_edges(&g, 0.4, &mut rng).unwrap().num_edges();
        }
        let mean = total as f64 / trials as f64;
        let want = 0.6 * 6.0;
        // 4 sigma of the sample mean.
        let sd = (6.0 * 0.6 * 0.4 / trials as f64).sqrt();
        assert!((mean - want).abs() < 4.0 * sd, "mean {mean} want {want}");
    }

    #[test]
    fn column_mask_zeroes_exactly_the_ceiling_count() {
        let g = test_graph();
        let mut rng = substream(0, 2002);
        let masked = mask_features(&g, 0.1, MaskMode::Column, &mut rng).unwrap();
        let x = masked.features();
        let zero_cols: Vec<usize> = (0..x.cols())
            .filter(|&c| (0..x.rows()).all(|r| x.at(r, c) == 0.0))
            .collect();
        // F = 10, ratio 0.1: exactly one column.
        assert_eq!(zero_cols.len(), 1);
        // Masked columns are identical across rows by construction; every
        // unmasked entry is untouched.
        for r in 0..x.rows() {
            for c in 0..x.cols() {
                if !zero_cols.contains(&c) {
                    assert_eq!(x.at(r, c), g.features().at(r, c));
                }
            }
        }
    }

    #[test]
    fn views_are_deterministic_per_seed_and_epoch() {
        let g = test_graph();
        let cfg = AugmentConfig {
            seed: 11,
            ..Default::default()
        };
        let (a1, b1) = make_views(&g, &cfg, 4).unwrap();
        let (a2, b2) = make_views(&g, &cfg, 4).unwrap();
        assert_eq!(a1.graph, a2.graph);
        assert_eq!(b1.graph, b2.graph);
        // Different epochs re-draw.
        let (a3, _) = make_views(&g, &cfg, 5).unwrap();
        assert_ne!(a1.graph, a3.graph);
    }

    #[test]
    fn paired_views_are_independent_draws() {
        let g = test_graph();
        let cfg = AugmentConfig {
            seed: 7,
            ..Default::default()
        };
        let (a, b) = make_views(&g, &cfg, 0).unwrap();
        assert_ne!(a.graph, b.graph);
    }

    #[test]
    fn augmentation_never_adds_edges_and_preserves_node_count() {
        let g = test_graph();
        let cfg = AugmentConfig {
            edge_drop_ratio: 0.5,
            feature_mask_ratio: 0.3,
            ..Default::default()
        };
        for epoch in 0..20 {
            let (a, b) = make_views(&g, &cfg, epoch).unwrap();
            for view in [&a, &b] {
                assert_eq!(view.graph.num_nodes(), g.num_nodes());
                for e in view.graph.edges() {
                    assert!(g.edges().binary_search(e).is_ok());
                }
            }
        }
    }

    #[test]
    fn entry_mode_masks_entries_not_columns() {
        let g = test_graph();
        let mut rng = substream(0, 2003);
        let masked = mask_features(&g, 0.3, MaskMode::Entry, &mut rng).unwrap();
        let x = masked.features();
        let zeroed = x
            .values()
            .iter()
            .zip(g.features().values())
            .filter(|(a, b)| **a == 0.0 && **b != 0.0)
            .count();
        let total = x.len();
        assert!(zeroed > total / 6 && zeroed < total / 2, "zeroed {zeroed}");
        // No column is fully zero with overwhelming probability (20 rows).
        let full_cols = (0..x.cols())
            .filter(|&c| (0..x.rows()).all(|r| x.at(r, c) == 0.0))
            .count();
        assert_eq!(full_cols, 0);
    }

    #[test]
    fn invalid_ratio_is_rejected() {
        let g = test_graph();
        let mut rng = substream(0, 2004);
        assert!(drop_edges(&g, 1.0, &mut rng).is_err());
        assert!(mask_features(&g, -0.1, MaskMode::Column, &mut rng).is_err());
    }
}
