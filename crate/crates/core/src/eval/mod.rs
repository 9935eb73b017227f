//! Downstream evaluation (linear probe, clustering) and label-aware
//! diagnostics over embeddings and metric matrices.

mod cluster;
mod diagnostics;
mod probe;

pub use cluster::{ari, fmi, kmeans, kmeans_detailed, KmeansResult};
pub use diagnostics::{
    distance_ratio, fn_tn_weight_sums, similarity_histograms, DistanceKind, SimilarityHistograms,
    WeightSums,
};
pub use probe::{fit_probe, linear_probe, probe_accuracy, ProbeModel};

use rand::seq::SliceRandom;

use crate::error::{CoreError, Result};
use crate::rng::{stream, substream};

/// Node index sets for probe training, validation, and testing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitSpec {
    /// Random split by ratio over a shuffled node order; the default
    /// evaluation protocol uses 1:1:8.
    pub fn random_ratio(
        num_nodes: usize,
        ratios: (usize, usize, usize),
        seed: u64,
    ) -> Result<Self> {
        let (a, b, c) = ratios;
        let total = a + b + c;
        if total == 0 {
            return Err(CoreError::Argument("split ratios sum to zero".into()));
        }
        let mut order: Vec<usize> = (0..num_nodes).collect();
        let mut rng = substream(seed, stream::SPLIT);
        order.shuffle(&mut rng);
        let n_train = num_nodes * a / total;
        let n_val = num_nodes * b / total;
        let split = SplitSpec {
            train: order[..n_train].to_vec(),
            val: order[n_train..n_train + n_val].to_vec(),
            test: order[n_train + n_val..].to_vec(),
        };
        split.validate(num_nodes)?;
        Ok(split)
    }

    /// Builds from per-node role assignments (0 = train, 1 = val, 2 = test).
    pub fn from_assignments(roles: &[u8]) -> Result<Self> {
        let mut split = SplitSpec {
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
        };
        for (i, &r) in roles.iter().enumerate() {
            match r {
                0 => split.train.push(i),
                1 => split.val.push(i),
                2 => split.test.push(i),
                other => {
                    return Err(CoreError::Argument(format!(
                        "split role for node {i} must be 0, 1, or 2, got {other}"
                    )))
                }
            }
        }
        split.validate(roles.len())?;
        Ok(split)
    }

    pub fn validate(&self, num_nodes: usize) -> Result<()> {
        let mut seen = vec![false; num_nodes];
        for idx in self.train.iter().chain(&self.val).chain(&self.test) {
            if *idx >= num_nodes {
                return Err(CoreError::Bounds {
                    id: *idx,
                    num_nodes,
                });
            }
            if seen[*idx] {
                return Err(CoreError::Argument(format!(
                    "node {idx} appears in more than one split"
                )));
            }
            seen[*idx] = true;
        }
        Ok(())
    }
}

/// Final downstream metrics plus label-aware diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub fmi: f64,
    pub ari: f64,
    pub distance_ratio: Option<f64>,
    pub fn_weight_sum: Option<f64>,
    pub tn_weight_sum: Option<f64>,
    pub diag_weight: Option<f64>,
}

impl EvalReport {
    /// Flat key-value rendering, one `key = value` line per field.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("accuracy = {:.6}\n", self.accuracy));
        out.push_str(&format!("fmi = {:.6}\n", self.fmi));
        out.push_str(&format!("ari = {:.6}\n", self.ari));
        if let Some(v) = self.distance_ratio {
            out.push_str(&format!("distance_ratio = {v:.6}\n"));
        }
        if let Some(v) = self.fn_weight_sum {
            out.push_str(&format!("fn_weight_sum = {v:.6}\n"));
        }
        if let Some(v) = self.tn_weight_sum {
            out.push_str(&format!("tn_weight_sum = {v:.6}\n"));
        }
        if let Some(v) = self.diag_weight {
            out.push_str(&format!("diag_weight = {v:.6}\n"));
        }
        out
    }
}
