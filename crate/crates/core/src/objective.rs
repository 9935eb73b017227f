//! Scalar objectives: the InfoNCE baseline loss, the metric-weighted
//! contrastive loss, the KL regularizer toward uniform rows, mutual
//! information estimates, a hinge-style per-anchor diagnostic, and a
//! numerical simplex oracle for the optimal metric row.
//!
//! Everything is computed through max-subtraction stabilization; exponents
//! of similarity over temperature never overflow even at small
//! temperatures.

use crate::error::{CoreError, Result};
use crate::model::NegativeMetricMatrix;
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, CLAMP_FLOOR};

/// Similarity function tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SimilarityKind {
    #[default]
    Cosine,
}

/// N x N matrix of pairwise similarities between anchor embeddings and
/// candidate embeddings; entry (i, j) compares anchor i with candidate j.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    values: Tensor,
    kind: SimilarityKind,
}

impl SimilarityMatrix {
    /// Wraps a precomputed similarity matrix, checking the cosine range.
    pub fn from_tensor(values: Tensor, kind: SimilarityKind) -> Result<Self> {
        if values.rows() != values.cols() {
            return Err(CoreError::Shape(format!(
                "similarity matrix must be square, got {}x{}",
                values.rows(),
                values.cols()
            )));
        }
        if matches!(kind, SimilarityKind::Cosine)
            && values.values().iter().any(|v| v.abs() > 1.0 + 1e-9)
        {
            return Err(CoreError::Contract(
                "cosine similarity entries must lie in [-1, 1]".into(),
            ));
        }
        Ok(SimilarityMatrix { values, kind })
    }

    /// Cosine similarities of all row pairs, with zero rows clamped at the
    /// numeric floor.
    pub fn cosine_from_embeddings(u: &Tensor, v: &Tensor) -> Result<Self> {
        let mut tape = Tape::new();
        let uv = tape.constant(u.clone());
        let vv = tape.constant(v.clone());
        let s = tape.cosine_similarity_matrix(uv, vv)?;
        Ok(SimilarityMatrix {
            values: tape.value(s).clone(),
            kind: SimilarityKind::Cosine,
        })
    }

    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.values
    }

    pub fn kind(&self) -> SimilarityKind {
        self.kind
    }
}

/// All objective values for one (similarity, metric) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub nml_loss: f64,
    pub infonce_loss: f64,
    pub kl_reg: f64,
    pub inner_objective: f64,
    pub i_nml: f64,
    pub i_nce: f64,
}

fn check_tau(tau: f64) -> Result<()> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(CoreError::Argument(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_nan() || alpha < 0.0 {
        return Err(CoreError::Argument(format!(
            "regularizer weight must be nonnegative, got {alpha}"
        )));
    }
    Ok(())
}

fn check_row_stochastic(m: &Tensor) -> Result<()> {
    for r in 0..m.rows() {
        let sum: f64 = m.row(r).iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(CoreError::Contract(format!(
                "metric row {r} sums to {sum}, beyond the 1e-6 tolerance"
            )));
        }
    }
    Ok(())
}

/// Per-anchor InfoNCE term: `lse_j(s_ij / tau) - s_ii / tau`.
pub fn per_anchor_infonce_loss(s: &SimilarityMatrix, tau: f64, anchor: usize) -> Result<f64> {
    check_tau(tau)?;
    let row = s.tensor().row(anchor);
    let max = row.iter().map(|v| v / tau).fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|v| (v / tau - max).exp()).sum();
    Ok(max + sum.ln() - row[anchor] / tau)
}

/// Per-anchor metric-weighted term with weights `delta_ij + (N-1) m_ij`.
pub fn per_anchor_nml_loss(
    s: &SimilarityMatrix,
    m: &NegativeMetricMatrix,
    tau: f64,
    anchor: usize,
) -> Result<f64> {
    check_tau(tau)?;
    let n = s.n();
    let srow = s.tensor().row(anchor);
    let mrow = m.tensor().row(anchor);
    let max = srow.iter().map(|v| v / tau).fold(f64::NEG_INFINITY, f64::max);
    let scale = (n - 1) as f64;
    let mut sum = 0.0;
    for (j, (&sv, &mv)) in srow.iter().zip(mrow).enumerate() {
        let w = if j == anchor { 1.0 + scale * mv } else { scale * mv };
        sum += w * (sv / tau - max).exp();
    }
    Ok(max + sum.ln() - srow[anchor] / tau)
}

/// Mean InfoNCE loss over anchors.
pub fn infonce_loss(s: &SimilarityMatrix, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    let n = s.n();
    let mut total = 0.0;
    for i in 0..n {
        total += per_anchor_infonce_loss(s, tau, i)?;
    }
    Ok(total / n as f64)
}

/// Mean metric-weighted contrastive loss over anchors. The metric must be
/// row-stochastic within 1e-6.
pub fn nml_loss(s: &SimilarityMatrix, m: &NegativeMetricMatrix, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    if m.n() != s.n() {
        return Err(CoreError::Shape(format!(
            "similarity is {}x{} but metric is {}x{}",
            s.n(),
            s.n(),
            m.n(),
            m.n()
        )));
    }
    check_row_stochastic(m.tensor())?;
    let n = s.n();
    let mut total = 0.0;
    for i in 0..n {
        total += per_anchor_nml_loss(s, m, tau, i)?;
    }
    Ok(total / n as f64)
}

/// Per-anchor KL term `(N-1) * KL(uniform || m_row)` with probabilities
/// clamped at the numeric floor before logs.
pub fn per_anchor_kl(m: &NegativeMetricMatrix, anchor: usize) -> f64 {
    let n = m.n();
    let inv_n = 1.0 / n as f64;
    let row = m.tensor().row(anchor);
    let sum: f64 = row
        .iter()
        .map(|&v| inv_n * (inv_n / v.max(CLAMP_FLOOR)).ln())
        .sum();
    (n - 1) as f64 * sum
}

/// Mean KL regularizer over anchors.
pub fn kl_regularizer(m: &NegativeMetricMatrix) -> f64 {
    let n = m.n();
    (0..n).map(|i| per_anchor_kl(m, i)).sum::<f64>() / n as f64
}

/// `nml_loss + alpha * kl_regularizer`.
pub fn inner_objective(
    s: &SimilarityMatrix,
    m: &NegativeMetricMatrix,
    tau: f64,
    alpha: f64,
) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(nml_loss(s, m, tau)? + alpha * kl_regularizer(m))
}

/// Per-anchor combined objective for a free metric row, used by the
/// simplex oracle and its tests.
pub fn per_anchor_inner_objective(
    s: &SimilarityMatrix,
    tau: f64,
    alpha: f64,
    anchor: usize,
    m_row: &[f64],
) -> f64 {
    let n = s.n();
    let srow = s.tensor().row(anchor);
    let max = srow.iter().map(|v| v / tau).fold(f64::NEG_INFINITY, f64::max);
    let scale = (n - 1) as f64;
    let mut sum = (srow[anchor] / tau - max).exp();
    for (&sv, &mv) in srow.iter().zip(m_row) {
        sum += scale * mv * (sv / tau - max).exp();
    }
    let loss = max + sum.ln() - srow[anchor] / tau;
    let inv_n = 1.0 / n as f64;
    let kl: f64 = m_row
        .iter()
        .map(|&v| inv_n * (inv_n / v.max(CLAMP_FLOOR)).ln())
        .sum::<f64>()
        * scale;
    loss + alpha * kl
}

/// Hinge approximation of the per-anchor loss together with the exact
/// stabilized value, for side-by-side diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HingeDiagnostic {
    pub hinge: f64,
    pub exact: f64,
}

/// Max-term approximation of the per-anchor loss:
/// `max(0, ln((N-1) m_ii), max_{j != i}(x_ij - x_ii + ln((N-1) m_ij)))`
/// with `x = s / tau`.
pub fn hinge_diagnostic(
    s: &SimilarityMatrix,
    m: &NegativeMetricMatrix,
    tau: f64,
    anchor: usize,
) -> Result<HingeDiagnostic> {
    check_tau(tau)?;
    let n = s.n();
    let srow = s.tensor().row(anchor);
    let mrow = m.tensor().row(anchor);
    let scale = (n - 1) as f64;
    let mut hinge = (scale * mrow[anchor]).ln().max(0.0);
    for j in 0..n {
        if j == anchor {
            continue;
        }
        let term = (srow[j] - srow[anchor]) / tau + (scale * mrow[j]).ln();
        hinge = hinge.max(term);
    }
    Ok(HingeDiagnostic {
        hinge,
        exact: per_anchor_nml_loss(s, m, tau, anchor)?,
    })
}

/// Mutual information estimates from both losses: negative mean loss plus
/// `ln N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiEstimates {
    pub i_nml: f64,
    pub i_nce: f64,
}

pub fn mi_estimates(
    s: &SimilarityMatrix,
    m: &NegativeMetricMatrix,
    tau: f64,
) -> Result<MiEstimates> {
    let log_n = (s.n() as f64).ln();
    Ok(MiEstimates {
        i_nml: log_n - nml_loss(s, m, tau)?,
        i_nce: log_n - infonce_loss(s, tau)?,
    })
}

/// Everything at once; the combined objective is exactly
/// `nml_loss + alpha * kl_reg` by construction.
pub fn loss_report(
    s: &SimilarityMatrix,
    m: &NegativeMetricMatrix,
    tau: f64,
    alpha: f64,
) -> Result<LossReport> {
    check_alpha(alpha)?;
    let nml = nml_loss(s, m, tau)?;
    let nce = infonce_loss(s, tau)?;
    let kl = kl_regularizer(m);
    let log_n = (s.n() as f64).ln();
    Ok(LossReport {
        nml_loss: nml,
        infonce_loss: nce,
        kl_reg: kl,
        inner_objective: nml + alpha * kl,
        i_nml: log_n - nml,
        i_nce: log_n - nce,
    })
}

// ---------------------------------------------------------------------------
// Tape builders used by training.
// ---------------------------------------------------------------------------

/// InfoNCE on the tape: `mean_i(lse_j(x_ij) - x_ii)` with `x = s / tau`.
pub fn infonce_loss_t(tape: &mut Tape, s: Var, tau: f64) -> Result<Var> {
    check_tau(tau)?;
    let x = tape.scale(s, 1.0 / tau)?;
    let lse = tape.logsumexp_row(x)?;
    let diag = tape.take_diag(x)?;
    let gap = tape.sub(lse, diag)?;
    tape.reduce_mean(gap)
}

/// Metric-weighted loss on the tape with a differentiable metric var.
pub fn nml_loss_t(tape: &mut Tape, s: Var, m: Var, tau: f64) -> Result<Var> {
    check_tau(tau)?;
    let n = tape.value(s).rows();
    let x = tape.scale(s, 1.0 / tau)?;
    let scaled = tape.scale(m, (n - 1) as f64)?;
    let eye = tape.constant(Tensor::identity(n));
    let weights = tape.add(scaled, eye)?;
    let wlse = tape.weighted_logsumexp_row(x, weights)?;
    let diag = tape.take_diag(x)?;
    let gap = tape.sub(wlse, diag)?;
    tape.reduce_mean(gap)
}

/// Metric-weighted loss on the tape against a fixed metric matrix.
pub fn nml_loss_with_constant_metric_t(
    tape: &mut Tape,
    s: Var,
    m: &NegativeMetricMatrix,
    tau: f64,
) -> Result<Var> {
    let mv = tape.constant(m.tensor().clone());
    nml_loss_t(tape, s, mv, tau)
}

/// KL regularizer on the tape.
pub fn kl_regularizer_t(tape: &mut Tape, m: Var) -> Result<Var> {
    let n = tape.value(m).rows();
    let scale = (n - 1) as f64;
    let logm = tape.ln_clamped(m)?;
    let sums = tape.row_sum(logm)?;
    let scaled = tape.scale(sums, -scale / n as f64)?;
    let shifted = tape.add_scalar(scaled, -scale * (n as f64).ln())?;
    tape.reduce_mean(shifted)
}

/// Combined inner objective on the tape; returns (inner, nml, kl).
pub fn inner_objective_t(
    tape: &mut Tape,
    s: Var,
    m: Var,
    tau: f64,
    alpha: f64,
) -> Result<(Var, Var, Var)> {
    check_alpha(alpha)?;
    let nml = nml_loss_t(tape, s, m, tau)?;
    let kl = kl_regularizer_t(tape, m)?;
    let weighted = tape.scale(kl, alpha)?;
    let inner = tape.add(nml, weighted)?;
    Ok((inner, nml, kl))
}

// ---------------------------------------------------------------------------
// Simplex oracle.
// ---------------------------------------------------------------------------

const ORACLE_MAX_ITERS: usize = 100_000;
const ORACLE_TOL: f64 = 1e-8;

/// Numerically minimizes the per-anchor inner objective over the
/// probability simplex and returns the optimal metric row.
///
/// Projected gradient descent with backtracking, warm-started at the
/// stationarity system's solution (a one-dimensional bisection; cold
/// plain descent cannot reach the required tolerance for small `alpha`
/// because the barrier makes the problem arbitrarily ill-conditioned).
/// Convergence means the gradient projected onto the simplex tangent has
/// norm below 1e-8; the routine is independent of the metric network
/// parameterization and exists as a test oracle.
pub fn optimal_metric_oracle(
    s: &SimilarityMatrix,
    tau: f64,
    alpha: f64,
    anchor: usize,
) -> Result<Vec<f64>> {
    check_tau(tau)?;
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(CoreError::Argument(format!(
            "oracle requires alpha > 0, got {alpha}"
        )));
    }
    let n = s.n();
    if n > 16 {
        return Err(CoreError::Argument(format!(
            "oracle is restricted to N <= 16, got {n}"
        )));
    }
    if anchor >= n {
        return Err(CoreError::Bounds {
            id: anchor,
            num_nodes: n,
        });
    }
    if n == 1 {
        return Ok(vec![1.0]);
    }

    // Work with exp((s_j - max) / tau) so nothing overflows.
    let srow = s.tensor().row(anchor);
    let max = srow.iter().map(|v| v / tau).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = srow.iter().map(|v| ((v / tau) - max).exp()).collect();
    let e_anchor = e[anchor];
    let scale = (n - 1) as f64;

    let mut m = kkt_warm_start(&e, e_anchor, alpha, n).unwrap_or_else(|| vec![1.0 / n as f64; n]);

    let objective = |m: &[f64]| per_anchor_objective_scaled(&e, e_anchor, alpha, n, m);
    let gradient = |m: &[f64]| -> Vec<f64> {
        let denom: f64 = e_anchor + scale * m.iter().zip(&e).map(|(mv, ev)| mv * ev).sum::<f64>();
        m.iter()
            .zip(&e)
            .map(|(&mv, &ev)| scale * ev / denom - alpha * scale / (n as f64 * mv.max(CLAMP_FLOOR)))
            .collect()
    };

    let mut step = 1e-2;
    let mut value = objective(&m);
    for iter in 0..ORACLE_MAX_ITERS {
        let g = gradient(&m);
        let residual = projected_gradient_norm(&m, &g);
        if residual < ORACLE_TOL {
            return Ok(m);
        }

        // Backtracking projected step.
        let mut moved = false;
        for _ in 0..60 {
            let trial: Vec<f64> = m.iter().zip(&g).map(|(mv, gv)| mv - step * gv).collect();
            let trial = project_to_simplex(&trial);
            let trial_value = objective(&trial);
            if trial_value < value {
                m = trial;
                value = trial_value;
                step *= 1.5;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            // Descent stalled; report the current residual.
            return Err(CoreError::OracleFailure {
                iterations: iter,
                residual,
            });
        }
    }
    let residual = projected_gradient_norm(&m, &gradient(&m));
    if residual < ORACLE_TOL {
        Ok(m)
    } else {
        Err(CoreError::OracleFailure {
            iterations: ORACLE_MAX_ITERS,
            residual,
        })
    }
}

fn per_anchor_objective_scaled(e: &[f64], e_anchor: f64, alpha: f64, n: usize, m: &[f64]) -> f64 {
    let scale = (n - 1) as f64;
    let denom: f64 = e_anchor + scale * m.iter().zip(e).map(|(mv, ev)| mv * ev).sum::<f64>();
    let inv_n = 1.0 / n as f64;
    let kl: f64 = m
        .iter()
        .map(|&v| inv_n * (inv_n / v.max(CLAMP_FLOOR)).ln())
        .sum::<f64>()
        * scale;
    // The shared max-shift cancels between numerator and denominator, so
    // the loss term is just ln(denom / e_anchor).
    (denom / e_anchor).ln() + alpha * kl
}

/// Solves the interior stationarity system: rows have the form
/// `m_k = c / (e_k - beta)` with two scalars fixed by the simplex
/// constraint and the self-consistent denominator.
///
/// Parameterized by `delta = min(e) - beta > 0` rather than `beta`
/// directly: for small `alpha` the root presses against `min(e)` and the
/// gap would fall below `beta`'s own floating-point resolution, while
/// `delta` keeps full precision arbitrarily close to zero. Reduces to a
/// bracketed 1-D bisection, increasing in `delta`.
fn kkt_warm_start(e: &[f64], e_anchor: f64, alpha: f64, n: usize) -> Option<Vec<f64>> {
    let e_min = e.iter().copied().fold(f64::INFINITY, f64::min);
    // Gaps above the minimum; the smallest is exactly zero.
    let gaps: Vec<f64> = e.iter().map(|&ev| ev - e_min).collect();
    let scale = (n - 1) as f64;
    let g = |delta: f64| -> f64 {
        let h: f64 = gaps.iter().map(|&gap| 1.0 / (gap + delta)).sum();
        let c = 1.0 / h;
        c * n as f64 / alpha - e_anchor - scale * (c * n as f64 + e_min - delta)
    };

    // g < 0 as delta -> 0+, g -> +inf as delta grows: expand the bracket
    // geometrically in both directions.
    let mut lo = 1e-300;
    let mut hi = 1.0;
    for _ in 0..2000 {
        if g(hi) > 0.0 {
            break;
        }
        hi *= 2.0;
    }
    if g(hi) <= 0.0 {
        return None;
    }
    if g(lo) >= 0.0 {
        return None;
    }
    for _ in 0..20_000 {
        // Geometric midpoint: the root can sit hundreds of orders of
        // magnitude below the initial upper bound.
        let mid = (lo * hi).sqrt();
        if g(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-16 * lo {
            break;
        }
    }
    let delta = 0.5 * (lo + hi);
    let h: f64 = gaps.iter().map(|&gap| 1.0 / (gap + delta)).sum();
    let c = 1.0 / h;
    let mut m: Vec<f64> = gaps.iter().map(|&gap| c / (gap + delta)).collect();
    let total: f64 = m.iter().sum();
    if !total.is_finite() || total <= 0.0 {
        return None;
    }
    for v in &mut m {
        *v /= total;
    }
    Some(m)
}

/// Norm of the gradient projected onto the feasible directions of the
/// simplex: the tangent plane for interior coordinates, with coordinates
/// pinned at zero contributing only when the objective wants them positive.
fn projected_gradient_norm(m: &[f64], g: &[f64]) -> f64 {
    let interior: Vec<usize> = (0..m.len()).filter(|&k| m[k] > 1e-15).collect();
    if interior.is_empty() {
        return 0.0;
    }
    let mean: f64 = interior.iter().map(|&k| g[k]).sum::<f64>() / interior.len() as f64;
    let mut norm2 = 0.0;
    for k in 0..m.len() {
        // Pinned-at-zero coordinates only count when the objective wants
        // them positive.
        let d = g[k] - mean;
        if m[k] > 1e-15 || d < 0.0 {
            norm2 += d * d;
        }
    }
    norm2.sqrt()
}

/// Euclidean projection onto the probability simplex (sort-based).
fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    let mut support = 0;
    for (k, &val) in sorted.iter().enumerate() {
        cumsum += val;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if val - t > 0.0 {
            theta = t;
            support = k + 1;
        }
    }
    debug_assert!(support > 0);
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn sim(values: Vec<f64>) -> SimilarityMatrix {
        let n = (values.len() as f64).sqrt() as usize;
        SimilarityMatrix::from_tensor(
            Tensor::new(n, n, values).unwrap(),
            SimilarityKind::Cosine,
        )
        .unwrap()
    }

    fn random_sim(rng: &mut impl Rng, n: usize) -> SimilarityMatrix {
        let values = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        sim_of(n, values)
    }

    fn sim_of(n: usize, values: Vec<f64>) -> SimilarityMatrix {
        SimilarityMatrix::from_tensor(
            Tensor::new(n, n, values).unwrap(),
            SimilarityKind::Cosine,
        )
        .unwrap()
    }

    fn random_metric(rng: &mut impl Rng, n: usize) -> NegativeMetricMatrix {
        let mut t = Tensor::zeros(n, n);
        for r in 0..n {
            let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            for (c, v) in raw.iter().enumerate() {
                t.set(r, c, v / sum);
            }
        }
        NegativeMetricMatrix::from_tensor_unchecked(t)
    }

    /// Naive, unstabilized direct evaluation used as the independent route.
    fn naive_nml(s: &SimilarityMatrix, m: &NegativeMetricMatrix, tau: f64) -> f64 {
        let n = s.n();
        let mut total = 0.0;
        for i in 0..n {
            let num = (s.tensor().at(i, i) / tau).exp();
            let mut den = num;
            for j in 0..n {
                den += (n - 1) as f64 * m.tensor().at(i, j) * (s.tensor().at(i, j) / tau).exp();
            }
            total += -(num / den).ln();
        }
        total / n as f64
    }

    fn naive_infonce(s: &SimilarityMatrix, tau: f64) -> f64 {
        let n = s.n();
        let mut total = 0.0;
        for i in 0..n {
            let num = (s.tensor().at(i, i) / tau).exp();
            let mut den = 0.0;
            for j in 0..n {
                den += (s.tensor().at(i, j) / tau).exp();
            }
            total += -(num / den).ln();
        }
        total / n as f64
    }

    #[test]
    fn infonce_identity_similarity() {
        let s = sim(vec![1.0, 0.0, 0.0, 1.0]);
        let loss = infonce_loss(&s, 1.0).unwrap();
        let want = (1.0 + (-1.0f64).exp()).ln();
        assert!((loss - want).abs() < 1e-12, "loss {loss} want {want}");
    }

    #[test]
    fn infonce_indistinguishable_positive_gives_log2() {
        let s = sim(vec![0.3, 0.3, 0.3, 0.3]);
        let loss = infonce_loss(&s, 1.0).unwrap();
        assert!((loss - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn infonce_temperature_scaling_cancels() {
        let mut rng = crate::rng::substream(0, 300);
        for _ in 0..20 {
            let n = rng.gen_range(2..6);
            let s1 = random_sim(&mut rng, n);
            let tau = rng.gen_range(0.4..1.2);
            let scaled = crate::tensor::scale(s1.tensor(), tau);
            let s_scaled =
                SimilarityMatrix::from_tensor(scaled, SimilarityKind::Cosine);
            // Scaling by tau < 1 keeps the cosine range valid.
            if let Ok(s_scaled) = s_scaled {
                let a = infonce_loss(&s_scaled, tau).unwrap();
                let b = infonce_loss(&s1, 1.0).unwrap();
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn infonce_rejects_nonpositive_tau() {
        let s = sim(vec![1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(infonce_loss(&s, 0.0), Err(CoreError::Argument(_))));
        assert!(matches!(infonce_loss(&s, -1.0), Err(CoreError::Argument(_))));
    }

    #[test]
    fn nml_reduces_to_infonce_with_equivalent_weights() {
        let s = sim(vec![1.0, 0.0, 0.0, 1.0]);
        let m = NegativeMetricMatrix::infonce_equivalent(2);
        let a = nml_loss(&s, &m, 1.0).unwrap();
        let b = infonce_loss(&s, 1.0).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn nml_uniform_metric_matches_direct_evaluation() {
        let s = sim(vec![1.0, 0.0, 0.0, 1.0]);
        let m = NegativeMetricMatrix::uniform(2);
        let got = nml_loss(&s, &m, 1.0).unwrap();
        // Each anchor: -ln(e / (e + (0.5 e + 0.5))).
        let e = std::f64::consts::E;
        let want = -(e / (1.5 * e + 0.5)).ln();
        assert!((got - want).abs() < 1e-12, "got {got} want {want}");
        assert!((got - 0.5211).abs() < 1e-3);
    }

    #[test]
    fn nml_rejects_non_stochastic_rows() {
        let s = sim(vec![1.0, 0.0, 0.0, 1.0]);
        let bad = NegativeMetricMatrix::from_tensor_unchecked(
            Tensor::new(2, 2, vec![0.9, 0.3, 0.5, 0.5]).unwrap(),
        );
        assert!(matches!(
            nml_loss(&s, &bad, 1.0),
            Err(CoreError::Contract(_))
        ));
    }

    #[test]
    fn concentrating_on_most_similar_column_maximizes_loss() {
        // Brute force over a simplex grid at N = 3.
        let mut rng = crate::rng::substream(4, 301);
        for _ in 0..10 {
            let s = random_sim(&mut rng, 3);
            let anchor = 0usize;
            let best_col = (0..3)
                .max_by(|&a, &b| {
                    s.tensor()
                        .at(anchor, a)
                        .partial_cmp(&s.tensor().at(anchor, b))
                        .unwrap()
                })
                .unwrap();
            let eval = |row: [f64; 3]| {
                let mut t = Tensor::zeros(3, 3);
                for (c, &v) in row.iter().enumerate() {
                    t.set(anchor, c, v);
                    // Other rows uniform; they do not affect anchor 0's term.
                    t.set(1, c, 1.0 / 3.0);
                    t.set(2, c, 1.0 / 3.0);
                }
                let m = NegativeMetricMatrix::from_tensor_unchecked(t);
                per_anchor_nml_loss(&s, &m, 1.0, anchor).unwrap()
            };
            let mut vertex = [0.0; 3];
            vertex[best_col] = 1.0;
            let vertex_loss = eval(vertex);
            let steps = 20usize;
            for a in 0..=steps {
                for b in 0..=(steps - a) {
                    let row = [
                        a as f64 / steps as f64,
                        b as f64 / steps as f64,
                        (steps - a - b) as f64 / steps as f64,
                    ];
                    assert!(eval(row) <= vertex_loss + 1e-12);
                }
            }
        }
    }

    #[test]
    fn kl_uniform_is_zero_and_nonuniform_positive() {
        assert_eq!(kl_regularizer(&NegativeMetricMatrix::uniform(4)), 0.0);
        let m = NegativeMetricMatrix::from_tensor_unchecked(
            Tensor::new(2, 2, vec![0.75, 0.25, 0.5, 0.5]).unwrap(),
        );
        let row0 = per_anchor_kl(&m, 0);
        let want = 0.5 * (0.5f64 / 0.75).ln() + 0.5 * (0.5f64 / 0.25).ln();
        assert!((row0 - want).abs() < 1e-12);
        assert!((row0 - 0.14384).abs() < 1e-5);
        assert!(kl_regularizer(&m) > 0.0);
    }

    #[test]
    fn inner_objective_composes_additively() {
        let mut rng = crate::rng::substream(8, 302);
        let s = random_sim(&mut rng, 4);
        let m = random_metric(&mut rng, 4);
        let alpha = 0.1;
        let inner = inner_objective(&s, &m, 0.7, alpha).unwrap();
        let parts = nml_loss(&s, &m, 0.7).unwrap() + alpha * kl_regularizer(&m);
        assert!((inner - parts).abs() < 1e-15);
        let zero = inner_objective(&s, &m, 0.7, 0.0).unwrap();
        assert!((zero - nml_loss(&s, &m, 0.7).unwrap()).abs() < 1e-15);
        let report = loss_report(&s, &m, 0.7, alpha).unwrap();
        assert!((report.inner_objective - (report.nml_loss + alpha * report.kl_reg)).abs() < 1e-12);
    }

    #[test]
    fn hinge_zero_when_positive_dominates_under_uniform_metric() {
        let s = sim(vec![1.0, -1.0, -1.0, 1.0]);
        let m = NegativeMetricMatrix::uniform(2);
        let d = hinge_diagnostic(&s, &m, 0.1, 0).unwrap();
        // ln((N-1) m_ii) = ln(1/2) < 0 and the off-diagonal term is far
        // negative, so the hinge sits at zero.
        assert_eq!(d.hinge, 0.0);
    }

    #[test]
    fn hinge_stays_within_logsumexp_bounds() {
        let mut rng = crate::rng::substream(9, 303);
        for _ in 0..100 {
            let n = rng.gen_range(2..6);
            let s = random_sim(&mut rng, n);
            let m = random_metric(&mut rng, n);
            let tau = rng.gen_range(0.4..1.2);
            for anchor in 0..n {
                let d = hinge_diagnostic(&s, &m, tau, anchor).unwrap();
                // max <= lse <= max + ln(terms); the exact loss sums N+1
                // weighted exponentials.
                assert!(d.hinge <= d.exact + 1e-12);
                assert!(d.exact <= d.hinge + ((n + 1) as f64).ln() + 1e-12);
            }
        }
    }

    #[test]
    fn hinge_gap_bound_at_n3() {
        let mut rng = crate::rng::substream(10, 304);
        for _ in 0..100 {
            let s = random_sim(&mut rng, 3);
            let m = random_metric(&mut rng, 3);
            let d = hinge_diagnostic(&s, &m, 1.0, 0).unwrap();
            assert!((d.hinge - d.exact).abs() <= 4.0f64.ln() + 1e-12);
        }
    }

    #[test]
    fn mi_estimates_match_hand_values() {
        let s = sim(vec![1.0, 0.0, 0.0, 1.0]);
        let m = NegativeMetricMatrix::infonce_equivalent(2);
        let mi = mi_estimates(&s, &m, 1.0).unwrap();
        let want = -(1.0 + (-1.0f64).exp()).ln() + 2.0f64.ln();
        assert!((mi.i_nce - want).abs() < 1e-12);
        assert!((mi.i_nce - 0.37989).abs() < 1e-5);
        // With InfoNCE-equivalent weights the two estimates coincide.
        assert!((mi.i_nml - mi.i_nce).abs() < 1e-12);

        // Flat similarity: i_nce = ln N - ln N = 0 at N = 2.
        let flat = sim(vec![0.2, 0.2, 0.2, 0.2]);
        let mi = mi_estimates(&flat, &NegativeMetricMatrix::uniform(2), 1.0).unwrap();
        assert!(mi.i_nce.abs() < 1e-12);
    }

    #[test]
    fn stabilized_matches_naive_on_well_scaled_inputs() {
        let mut rng = crate::rng::substream(11, 305);
        for _ in 0..50 {
            let n = rng.gen_range(2..=16);
            let s = random_sim(&mut rng, n);
            let m = random_metric(&mut rng, n);
            let tau = rng.gen_range(0.4..1.2);
            assert!((nml_loss(&s, &m, tau).unwrap() - naive_nml(&s, &m, tau)).abs() < 1e-9);
            assert!((infonce_loss(&s, tau).unwrap() - naive_infonce(&s, tau)).abs() < 1e-9);
        }
    }

    #[test]
    fn objective_gradients_pass_finite_difference_checks() {
        use crate::gradcheck::grad_check;
        let mut rng = crate::rng::substream(12, 306);
        for trial in 0..10 {
            let n = rng.gen_range(2..6);
            let s0 = random_sim(&mut rng, n).tensor().clone();
            let m0 = random_metric(&mut rng, n).tensor().clone();
            let tau = rng.gen_range(0.4..1.2);
            let alpha = rng.gen_range(0.01..0.5);
            let err = grad_check(&[s0, m0], 1e-5, |tape, vars| {
                let (inner, _, _) = inner_objective_t(tape, vars[0], vars[1], tau, alpha)?;
                Ok(inner)
            })
            .unwrap();
            assert!(err < 1e-5, "trial {trial}: max relative error {err}");
        }
    }

    #[test]
    fn tape_losses_match_plain_losses() {
        let mut rng = crate::rng::substream(13, 307);
        for _ in 0..20 {
            let n = rng.gen_range(2..8);
            let s = random_sim(&mut rng, n);
            let m = random_metric(&mut rng, n);
            let tau = rng.gen_range(0.4..1.2);

            let mut tape = Tape::new();
            let sv = tape.constant(s.tensor().clone());
            let mv = tape.constant(m.tensor().clone());
            let nml_t = nml_loss_t(&mut tape, sv, mv, tau).unwrap();
            let nce_t = infonce_loss_t(&mut tape, sv, tau).unwrap();
            let kl_t = kl_regularizer_t(&mut tape, mv).unwrap();

            assert!(
                (tape.value(nml_t).item().unwrap() - nml_loss(&s, &m, tau).unwrap()).abs() < 1e-12
            );
            assert!(
                (tape.value(nce_t).item().unwrap() - infonce_loss(&s, tau).unwrap()).abs() < 1e-12
            );
            assert!((tape.value(kl_t).item().unwrap() - kl_regularizer(&m)).abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_returns_uniform_for_symmetric_similarities() {
        let s = sim(vec![0.4, 0.4, 0.4, 0.4, 0.4, 0.4, 0.4, 0.4, 0.4]);
        let row = optimal_metric_oracle(&s, 0.8, 0.1, 1).unwrap();
        for v in &row {
            assert!((v - 1.0 / 3.0).abs() < 1e-9, "row {row:?}");
        }
    }

    #[test]
    fn oracle_matches_dense_grid_search_at_n2() {
        let mut rng = crate::rng::substream(14, 308);
        for _ in 0..10 {
            let s = random_sim(&mut rng, 2);
            let tau = rng.gen_range(0.4..1.0);
            let alpha = rng.gen_range(0.05..0.5);
            let oracle = optimal_metric_oracle(&s, tau, alpha, 0).unwrap();

            let mut best = (f64::INFINITY, 0.0);
            let steps = 100_000usize;
            for k in 0..=steps {
                let m0 = k as f64 / steps as f64;
                let val = per_anchor_inner_objective(&s, tau, alpha, 0, &[m0, 1.0 - m0]);
                if val < best.0 {
                    best = (val, m0);
                }
            }
            assert!(
                (oracle[0] - best.1).abs() < 1e-4,
                "oracle {} grid {}",
                oracle[0],
                best.1
            );
        }
    }

    #[test]
    fn oracle_rows_decrease_with_similarity() {
        let mut rng = crate::rng::substream(15, 309);
        for _ in 0..30 {
            let n = rng.gen_range(2..=8);
            let s = random_sim(&mut rng, n);
            let tau = rng.gen_range(0.4..1.0);
            let alpha = rng.gen_range(0.01..0.5);
            let anchor = rng.gen_range(0..n);
            let row = optimal_metric_oracle(&s, tau, alpha, anchor).unwrap();
            for a in 0..n {
                for b in 0..n {
                    if s.tensor().at(anchor, a) > s.tensor().at(anchor, b) {
                        assert!(
                            row[a] < row[b] + 1e-9,
                            "similarity order violated: {row:?}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn oracle_beats_every_grid_point_at_n3() {
        let mut rng = crate::rng::substream(16, 310);
        let s = random_sim(&mut rng, 3);
        let (tau, alpha) = (0.7, 0.1);
        let row = optimal_metric_oracle(&s, tau, alpha, 0).unwrap();
        let opt = per_anchor_inner_objective(&s, tau, alpha, 0, &row);
        let steps = 60usize;
        for a in 0..=steps {
            for b in 0..=(steps - a) {
                let grid = [
                    a as f64 / steps as f64,
                    b as f64 / steps as f64,
                    (steps - a - b) as f64 / steps as f64,
                ];
                assert!(opt <= per_anchor_inner_objective(&s, tau, alpha, 0, &grid) + 1e-10);
            }
        }
    }

    #[test]
    fn oracle_requires_positive_alpha_and_small_n() {
        let s = sim(vec![1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(
            optimal_metric_oracle(&s, 1.0, 0.0, 0),
            Err(CoreError::Argument(_))
        ));
        let mut rng = crate::rng::substream(17, 311);
        let big = random_sim(&mut rng, 17);
        assert!(matches!(
            optimal_metric_oracle(&big, 1.0, 0.1, 0),
            Err(CoreError::Argument(_))
        ));
    }

    #[test]
    fn single_node_losses_are_zero() {
        // With one node there are no negatives: the InfoNCE fraction is 1
        // and the weighted term's (N-1) factor vanishes.
        let s = SimilarityMatrix::from_tensor(Tensor::scalar(1.0), SimilarityKind::Cosine)
            .unwrap();
        let m = NegativeMetricMatrix::infonce_equivalent(1);
        assert_eq!(infonce_loss(&s, 0.5).unwrap(), 0.0);
        assert_eq!(nml_loss(&s, &m, 0.5).unwrap(), 0.0);
        assert_eq!(kl_regularizer(&m), 0.0);
    }

    #[test]
    fn simplex_projection_properties() {
        let cases: Vec<Vec<f64>> = vec![
            vec![0.5, 0.5],
            vec![2.0, -1.0, 0.3],
            vec![-5.0, -6.0, -7.0, -4.0],
            vec![0.25, 0.25, 0.25, 0.25],
        ];
        for v in cases {
            let p = project_to_simplex(&v);
            let sum: f64 = p.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|&x| x >= 0.0));
        }
        // Projection of a simplex point is itself.
        let p = project_to_simplex(&[0.2, 0.3, 0.5]);
        assert!((p[0] - 0.2).abs() < 1e-12 && (p[2] - 0.5).abs() < 1e-12);
    }
}
