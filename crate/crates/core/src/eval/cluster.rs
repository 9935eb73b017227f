//! Lloyd's k-means with k-means++ seeding, and the pair-counting agreement
//! indices used to score clusterings against ground truth.

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::rng::{stream, substream};
use crate::tensor::Tensor;

/// Outcome of a k-means run.
#[derive(Debug, Clone)]
pub struct KmeansResult {
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Final inertia of each restart, in restart order.
    pub restart_inertias: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn lloyd(z: &Tensor, k: usize, rng: &mut rand_chacha::ChaCha8Rng) -> (Vec<usize>, f64) {
    let n = z.rows();
    let d = z.cols();

    // k-means++ seeding.
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(z.row(rng.gen_range(0..n)).to_vec());
    let mut dist2: Vec<f64> = (0..n).map(|i| sq_dist(z.row(i), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = dist2.iter().sum();
        let next = if total <= 0.0 {
            // All points coincide with existing centroids.
            rng.gen_range(0..n)
        } else {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in dist2.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        centroids.push(z.row(next).to_vec());
        let newest = centroids.last().unwrap();
        for (i, d) in dist2.iter_mut().enumerate() {
            *d = d.min(sq_dist(z.row(i), newest));
        }
    }

    let mut assignments = vec![0usize; n];
    for _ in 0..100 {
        let mut changed = false;
        for (i, slot) in assignments.iter_mut().enumerate() {
            let row = z.row(i);
            let (best, _) = centroids
                .iter()
                .enumerate()
                .map(|(c, cent)| (c, sq_dist(row, cent)))
                .min_by(|(_, a), (_, b)| a.partial_cmp(b).expect("finite"))
                .expect("k >= 1");
            if *slot != best {
                *slot = best;
                changed = true;
            }
        }

        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (i, &c) in assignments.iter().enumerate() {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(z.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seed an empty cluster at the point farthest from its
                // centroid.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(z.row(a), &centroids[assignments[a]])
                            .partial_cmp(&sq_dist(z.row(b), &centroids[assignments[b]]))
                            .expect("finite")
                    })
                    .expect("nonempty");
                centroids[c] = z.row(far).to_vec();
                changed = true;
            } else {
                for (j, s) in sums[c].iter().enumerate() {
                    centroids[c][j] = s / counts[c] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }

    let inertia = (0..n)
        .map(|i| sq_dist(z.row(i), &centroids[assignments[i]]))
        .sum();
    (assignments, inertia)
}

/// Best-of-restarts k-means, deterministic under the seed.
pub fn kmeans_detailed(z: &Tensor, k: usize, seed: u64, restarts: usize) -> Result<KmeansResult> {
    if k < 2 {
        return Err(CoreError::Argument(format!("k must be at least 2, got {k}")));
    }
    if k > z.rows() {
        return Err(CoreError::Argument(format!(
            "k = {k} exceeds the number of points {}",
            z.rows()
        )));
    }
    if restarts == 0 {
        return Err(CoreError::Argument("need at least one restart".into()));
    }
    let mut rng = substream(seed, stream::KMEANS);
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut restart_inertias = Vec::with_capacity(restarts);
    for _ in 0..restarts {
        let (assign, inertia) = lloyd(z, k, &mut rng);
        restart_inertias.push(inertia);
        if best.as_ref().is_none_or(|(_, b)| inertia < *b) {
            best = Some((assign, inertia));
        }
    }
    let (assignments, inertia) = best.expect("at least one restart");
    Ok(KmeansResult {
        assignments,
        inertia,
        restart_inertias,
    })
}

/// Cluster assignments from the best of `restarts` runs.
pub fn kmeans(z: &Tensor, k: usize, seed: u64, restarts: usize) -> Result<Vec<usize>> {
    Ok(kmeans_detailed(z, k, seed, restarts)?.assignments)
}

fn choose2(x: f64) -> f64 {
    x * (x - 1.0) / 2.0
}

struct PairCounts {
    tp: f64,
    pred_pairs: f64,
    truth_pairs: f64,
    total_pairs: f64,
}

fn pair_counts(pred: &[usize], truth: &[usize]) -> Result<PairCounts> {
    if pred.len() != truth.len() {
        return Err(CoreError::Shape(format!(
            "{} predictions vs {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let kp = pred.iter().max().map_or(0, |m| m + 1);
    let kt = truth.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![0.0f64; kp * kt];
    let mut a = vec![0.0f64; kp];
    let mut b = vec![0.0f64; kt];
    for (&p, &t) in pred.iter().zip(truth) {
        table[p * kt + t] += 1.0;
        a[p] += 1.0;
        b[t] += 1.0;
    }
    Ok(PairCounts {
        tp: table.iter().map(|&c| choose2(c)).sum(),
        pred_pairs: a.iter().map(|&c| choose2(c)).sum(),
        truth_pairs: b.iter().map(|&c| choose2(c)).sum(),
        total_pairs: choose2(pred.len() as f64),
    })
}

/// Fowlkes-Mallows index in percent: `TP / sqrt((TP+FP)(TP+FN))` over node
/// pairs. Zero when either marginal has no co-clustered pairs.
pub fn fmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let c = pair_counts(pred, truth)?;
    if c.pred_pairs == 0.0 || c.truth_pairs == 0.0 {
        return Ok(0.0);
    }
    Ok(100.0 * c.tp / (c.pred_pairs * c.truth_pairs).sqrt())
}

/// Adjusted Rand index in percent: `(RI - E[RI]) / (max RI - E[RI])` from
/// the contingency table. Two identical trivial partitions score 100.
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let c = pair_counts(pred, truth)?;
    if c.total_pairs == 0.0 {
        return Ok(100.0);
    }
    let expected = c.pred_pairs * c.truth_pairs / c.total_pairs;
    let max_index = 0.5 * (c.pred_pairs + c.truth_pairs);
    if (max_index - expected).abs() < 1e-12 {
        // Both partitions carry no information beyond chance; identical
        // inputs count as perfect agreement.
        return Ok(if pred == truth { 100.0 } else { 0.0 });
    }
    Ok(100.0 * (c.tp - expected) / (max_index - expected))
}
