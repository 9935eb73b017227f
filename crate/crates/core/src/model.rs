//! The two trainable networks: a two-layer GCN encoder and the pairwise
//! negative metric network that scores every ordered embedding pair.

use std::rc::Rc;

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::graph::NormalizedAdjacency;
use crate::rng::{stream, substream};
use crate::tape::{Tape, Var};
use crate::tensor::{self, Tensor};

/// Default embedding and hidden width.
pub const DEFAULT_EMBED_DIM: usize = 512;
pub const DEFAULT_HIDDEN_DIM: usize = 512;

/// Weights of the two-layer GCN encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    /// F x d input projection.
    pub w1: Tensor,
    /// d x d output projection.
    pub w2: Tensor,
    /// Apply the rectifier after the second layer as well. Off by default:
    /// the final layer stays linear so embeddings are not sign-constrained.
    pub final_activation: bool,
}

impl EncoderParams {
    pub fn feature_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.w2.cols()
    }
}

/// How the two pair embeddings are combined before the scoring MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PairCombiner {
    /// Concatenate `[u_i, v_j]` into a 2d-wide input row.
    #[default]
    Concat,
}

/// Weights of the negative metric network: a two-hidden-layer rectifier MLP
/// over combined pair embeddings, followed by a row softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct NmnParams {
    /// 2d x h.
    pub l1: Tensor,
    /// 1 x h.
    pub b1: Tensor,
    /// h x h.
    pub l2: Tensor,
    /// 1 x h.
    pub b2: Tensor,
    /// h x 1.
    pub l3: Tensor,
    /// 1 x 1.
    pub b3: Tensor,
    pub combiner: PairCombiner,
}

impl NmnParams {
    pub fn hidden_dim(&self) -> usize {
        self.l1.cols()
    }

    pub fn pair_dim(&self) -> usize {
        self.l1.rows()
    }
}

/// Row-stochastic N x N matrix; entry (i, j) is the soft probability that
/// node j acts as a negative for anchor i.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeMetricMatrix(Tensor);

impl NegativeMetricMatrix {
    /// Validates squareness, entry range, and row sums within 1e-9.
    pub fn from_tensor(t: Tensor) -> Result<Self> {
        if t.rows() != t.cols() {
            return Err(CoreError::Shape(format!(
                "metric matrix must be square, got {}x{}",
                t.rows(),
                t.cols()
            )));
        }
        for r in 0..t.rows() {
            let mut sum = 0.0;
            for &v in t.row(r) {
                if !(0.0..=1.0).contains(&v) {
                    return Err(CoreError::Contract(format!(
                        "metric entry ({r}) = {v} outside [0, 1]"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(CoreError::Contract(format!(
                    "metric row {r} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(NegativeMetricMatrix(t))
    }

    /// Skips validation; for internal construction from softmax outputs and
    /// for tests that need deliberately broken rows.
    pub fn from_tensor_unchecked(t: Tensor) -> Self {
        NegativeMetricMatrix(t)
    }

    /// The weighting InfoNCE implies: zero on the diagonal, `1/(N-1)` off
    /// it. For a single node the whole row collapses onto the diagonal.
    pub fn infonce_equivalent(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        if n == 1 {
            t.set(0, 0, 1.0);
        } else {
            let w = 1.0 / (n - 1) as f64;
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        t.set(i, j, w);
                    }
                }
            }
        }
        NegativeMetricMatrix(t)
    }

    pub fn uniform(n: usize) -> Self {
        NegativeMetricMatrix(Tensor::filled(n, n, 1.0 / n as f64))
    }

    pub fn n(&self) -> usize {
        self.0.rows()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }
}

/// Model dimensions used at initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

fn glorot(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::new(rows, cols, data).expect("sized by construction")
}

/// Glorot-uniform initialization of both networks, deterministic under the
/// seed. Encoder and metric network draw from independent streams so the
/// encoder draws match between runs that do and do not build the metric
/// network.
pub fn init_params(seed: u64, dims: Dims) -> Result<(EncoderParams, NmnParams)> {
    if dims.feature_dim == 0 || dims.embed_dim == 0 || dims.hidden_dim == 0 {
        return Err(CoreError::Argument(format!("dims must be positive: {dims:?}")));
    }
    let (f, d, h) = (dims.feature_dim, dims.embed_dim, dims.hidden_dim);

    let mut enc_rng = substream(seed, stream::ENCODER_INIT);
    let encoder = EncoderParams {
        w1: glorot(&mut enc_rng, f, d),
        w2: glorot(&mut enc_rng, d, d),
        final_activation: false,
    };

    let mut nmn_rng = substream(seed, stream::NMN_INIT);
    let nmn = NmnParams {
        l1: glorot(&mut nmn_rng, 2 * d, h),
        b1: Tensor::zeros(1, h),
        l2: glorot(&mut nmn_rng, h, h),
        b2: Tensor::zeros(1, h),
        l3: glorot(&mut nmn_rng, h, 1),
        b3: Tensor::zeros(1, 1),
        combiner: PairCombiner::Concat,
    };
    Ok((encoder, nmn))
}

/// Encoder weights registered on a tape.
#[derive(Debug, Clone, Copy)]
pub struct EncoderVars {
    pub w1: Var,
    pub w2: Var,
    pub final_activation: bool,
}

impl EncoderParams {
    /// Registers the weights as differentiable leaves.
    pub fn leaves(&self, tape: &mut Tape) -> EncoderVars {
        EncoderVars {
            w1: tape.leaf(self.w1.clone()),
            w2: tape.leaf(self.w2.clone()),
            final_activation: self.final_activation,
        }
    }

    /// Registers the weights as constants (frozen).
    pub fn constants(&self, tape: &mut Tape) -> EncoderVars {
        EncoderVars {
            w1: tape.constant(self.w1.clone()),
            w2: tape.constant(self.w2.clone()),
            final_activation: self.final_activation,
        }
    }
}

/// Metric network weights registered on a tape.
#[derive(Debug, Clone, Copy)]
pub struct NmnVars {
    pub l1: Var,
    pub b1: Var,
    pub l2: Var,
    pub b2: Var,
    pub l3: Var,
    pub b3: Var,
}

impl NmnParams {
    pub fn leaves(&self, tape: &mut Tape) -> NmnVars {
        NmnVars {
            l1: tape.leaf(self.l1.clone()),
            b1: tape.leaf(self.b1.clone()),
            l2: tape.leaf(self.l2.clone()),
            b2: tape.leaf(self.b2.clone()),
            l3: tape.leaf(self.l3.clone()),
            b3: tape.leaf(self.b3.clone()),
        }
    }

    pub fn constants(&self, tape: &mut Tape) -> NmnVars {
        NmnVars {
            l1: tape.constant(self.l1.clone()),
            b1: tape.constant(self.b1.clone()),
            l2: tape.constant(self.l2.clone()),
            b2: tape.constant(self.b2.clone()),
            l3: tape.constant(self.l3.clone()),
            b3: tape.constant(self.b3.clone()),
        }
    }
}

/// Two-layer GCN forward on the tape: `relu(A x w1)` then `A h w2`, with an
/// optional rectifier on the output layer.
pub fn encoder_forward(
    tape: &mut Tape,
    vars: &EncoderVars,
    adj: &Rc<NormalizedAdjacency>,
    x: Var,
) -> Result<Var> {
    let xw = tape.matmul(x, vars.w1)?;
    let ax = tape.spmm(adj, xw)?;
    let h1 = tape.relu(ax)?;
    let hw = tape.matmul(h1, vars.w2)?;
    let out = tape.spmm(adj, hw)?;
    if vars.final_activation {
        tape.relu(out)
    } else {
        Ok(out)
    }
}

/// Forward pass without tape recording, for evaluation-time embedding.
pub fn encoder_forward_plain(
    p: &EncoderParams,
    adj: &NormalizedAdjacency,
    x: &Tensor,
) -> Result<Tensor> {
    if x.cols() != p.w1.rows() {
        return Err(CoreError::Shape(format!(
            "encoder expects {} features, graph has {}",
            p.w1.rows(),
            x.cols()
        )));
    }
    let h1 = tensor::relu(&adj.mul_dense(&tensor::matmul(x, &p.w1)?)?);
    let out = adj.mul_dense(&tensor::matmul(&h1, &p.w2)?)?;
    Ok(if p.final_activation {
        tensor::relu(&out)
    } else {
        out
    })
}

/// Metric network forward on the tape: raw pair scores through the blocked
/// pair MLP, then a row softmax. Every ordered pair is scored, including
/// the diagonal.
pub fn nmn_forward(
    tape: &mut Tape,
    vars: &NmnVars,
    u: Var,
    v: Var,
    block_rows: usize,
) -> Result<Var> {
    let scores = tape.pair_score_mlp(
        u, v, vars.l1, vars.b1, vars.l2, vars.b2, vars.l3, vars.b3, block_rows,
    )?;
    tape.row_softmax(scores)
}

/// Metric matrix without tape recording.
pub fn nmn_forward_plain(
    p: &NmnParams,
    u: &Tensor,
    v: &Tensor,
    block_rows: usize,
) -> Result<NegativeMetricMatrix> {
    let mut tape = Tape::new();
    let vars = p.constants(&mut tape);
    let uv = tape.constant(u.clone());
    let vv = tape.constant(v.clone());
    let m = nmn_forward(&mut tape, &vars, uv, vv, block_rows)?;
    Ok(NegativeMetricMatrix::from_tensor_unchecked(
        tape.value(m).clone(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{normalize_adjacency, Graph};

    fn params_for(f: usize, d: usize, h: usize, seed: u64) -> (EncoderParams, NmnParams) {
        init_params(
            seed,
            Dims {
                feature_dim: f,
                embed_dim: d,
                hidden_dim: h,
            },
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_give_zero_embeddings() {
        let g = Graph::new(3, vec![(0, 1)], Tensor::filled(3, 4, 1.0), None).unwrap();
        let adj = normalize_adjacency(&g);
        let p = EncoderParams {
            w1: Tensor::zeros(4, 2),
            w2: Tensor::zeros(2, 2),
            final_activation: false,
        };
        let z = encoder_forward_plain(&p, &adj, g.features()).unwrap();
        assert_eq!(z, Tensor::zeros(3, 2));
    }

    #[test]
    fn isolated_node_with_identity_weights_is_identity() {
        let g = Graph::new(
            1,
            vec![],
            Tensor::new(1, 2, vec![0.3, 1.7]).unwrap(),
            None,
        )
        .unwrap();
        let adj = normalize_adjacency(&g);
        let p = EncoderParams {
            w1: Tensor::identity(2),
            w2: Tensor::identity(2),
            final_activation: false,
        };
        let z = encoder_forward_plain(&p, &adj, g.features()).unwrap();
        assert!(z.max_abs_diff(g.features()) < 1e-15);
    }

    #[test]
    fn two_node_clique_matches_hand_computation() {
        // adj is the all-half matrix; weights chosen by hand.
        let x = Tensor::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let g = Graph::new(2, vec![(0, 1)], x.clone(), None).unwrap();
        let adj = normalize_adjacency(&g);
        let w1 = Tensor::new(2, 2, vec![1.0, -1.0, 0.5, 2.0]).unwrap();
        let w2 = Tensor::new(2, 2, vec![2.0, 0.0, 1.0, 1.0]).unwrap();
        let p = EncoderParams {
            w1: w1.clone(),
            w2: w2.clone(),
            final_activation: false,
        };

        let a = Tensor::filled(2, 2, 0.5);
        let h1 = tensor::relu(&tensor::matmul(&a, &tensor::matmul(&x, &w1).unwrap()).unwrap());
        let want = tensor::matmul(&a, &tensor::matmul(&h1, &w2).unwrap()).unwrap();

        let got = encoder_forward_plain(&p, &adj, g.features()).unwrap();
        assert!(got.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn feature_dim_mismatch_is_shape_error() {
        let g = Graph::new(2, vec![(0, 1)], Tensor::zeros(2, 3), None).unwrap();
        let adj = normalize_adjacency(&g);
        let (p, _) = params_for(4, 2, 2, 0);
        assert!(matches!(
            encoder_forward_plain(&p, &adj, g.features()),
            Err(CoreError::Shape(_))
        ));
    }

    #[test]
    fn zero_nmn_weights_give_uniform_rows() {
        let d = 3;
        let nmn = NmnParams {
            l1: Tensor::zeros(2 * d, 4),
            b1: Tensor::zeros(1, 4),
            l2: Tensor::zeros(4, 4),
            b2: Tensor::zeros(1, 4),
            l3: Tensor::zeros(4, 1),
            b3: Tensor::zeros(1, 1),
            combiner: PairCombiner::Concat,
        };
        let u = Tensor::filled(5, d, 0.7);
        let m = nmn_forward_plain(&nmn, &u, &u, 1024).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert!((m.tensor().at(i, j) - 0.2).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn tiny_nmn_matches_hand_computed_softmax() {
        // d = 1, h = 1: score(i,j) = l3 * relu(l2 * relu(u_i l1a + v_j l1b + b1) + b2) + b3.
        let nmn = NmnParams {
            l1: Tensor::new(2, 1, vec![1.0, -0.5]).unwrap(),
            b1: Tensor::new(1, 1, vec![0.1]).unwrap(),
            l2: Tensor::new(1, 1, vec![2.0]).unwrap(),
            b2: Tensor::new(1, 1, vec![-0.05]).unwrap(),
            l3: Tensor::new(1, 1, vec![1.5]).unwrap(),
            b3: Tensor::new(1, 1, vec![0.2]).unwrap(),
            combiner: PairCombiner::Concat,
        };
        let u = Tensor::new(2, 1, vec![0.4, -0.3]).unwrap();
        let v = Tensor::new(2, 1, vec![0.9, 0.2]).unwrap();
        let score = |ui: f64, vj: f64| {
            let z1 = (ui * 1.0 + vj * -0.5 + 0.1).max(0.0);
            let z2 = (z1 * 2.0 - 0.05).max(0.0);
            z2 * 1.5 + 0.2
        };
        let mut want = Tensor::zeros(2, 2);
        for i in 0..2 {
            for j in 0..2 {
                want.set(i, j, score(u.at(i, 0), v.at(j, 0)));
            }
        }
        let want = tensor::row_softmax(&want);
        let got = nmn_forward_plain(&nmn, &u, &v, 1).unwrap();
        assert!(got.tensor().max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn nmn_rows_are_stochastic_for_random_weights() {
        for seed in 0..100u64 {
            let (_, nmn) = params_for(3, 4, 6, seed);
            let mut rng = substream(seed, 500);
            let u = glorot(&mut rng, 6, 4);
            let v = glorot(&mut rng, 6, 4);
            let m = nmn_forward_plain(&nmn, &u, &v, 7).unwrap();
            // The unchecked constructor skipped validation; validate now.
            let validated = NegativeMetricMatrix::from_tensor(m.tensor().clone());
            assert!(validated.is_ok(), "seed {seed}: {validated:?}");
        }
    }

    #[test]
    fn blocked_and_unblocked_metric_agree() {
        let (_, nmn) = params_for(3, 4, 5, 9);
        let mut rng = substream(9, 501);
        let u = glorot(&mut rng, 6, 4);
        let v = glorot(&mut rng, 6, 4);
        let full = nmn_forward_plain(&nmn, &u, &v, 36).unwrap();
        let blocked = nmn_forward_plain(&nmn, &u, &v, 5).unwrap();
        assert!(full.tensor().max_abs_diff(blocked.tensor()) <= 1e-12);
    }

    #[test]
    fn glorot_bounds_and_seed_behavior() {
        let (a1, n1) = params_for(7, 3, 4, 5);
        let (a2, _) = params_for(7, 3, 4, 5);
        let (a3, _) = params_for(7, 3, 4, 6);
        assert!(a1.w1.bitwise_eq(&a2.w1));
        assert!(!a1.w1.bitwise_eq(&a3.w1));
        let bound = (6.0 / (7 + 3) as f64).sqrt();
        assert!(a1.w1.values().iter().all(|v| v.abs() <= bound));
        assert!(n1.b1.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn metric_matrix_validation_rejects_bad_rows() {
        let bad = Tensor::new(2, 2, vec![0.9, 0.2, 0.5, 0.5]).unwrap();
        assert!(NegativeMetricMatrix::from_tensor(bad).is_err());
        let negative = Tensor::new(2, 2, vec![-0.1, 1.1, 0.5, 0.5]).unwrap();
        assert!(NegativeMetricMatrix::from_tensor(negative).is_err());
        let ok = Tensor::new(2, 2, vec![0.25, 0.75, 1.0, 0.0]).unwrap();
        assert!(NegativeMetricMatrix::from_tensor(ok).is_ok());
    }

    #[test]
    fn infonce_equivalent_rows() {
        let m = NegativeMetricMatrix::infonce_equivalent(4);
        for i in 0..4 {
            assert_eq!(m.tensor().at(i, i), 0.0);
            let sum: f64 = m.tensor().row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        let single = NegativeMetricMatrix::infonce_equivalent(1);
        assert_eq!(single.tensor().at(0, 0), 1.0);
    }
}
