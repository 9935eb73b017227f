//! Label-aware diagnostics: how much negative weight lands on same-label
//! nodes, how close false negatives sit to anchors compared with true
//! negatives, and the similarity distributions of both groups.

use crate::error::{CoreError, Result};
use crate::model::NegativeMetricMatrix;
use crate::tensor::{Tensor, CLAMP_FLOOR};

/// Mean metric mass per anchor, split by label agreement. The diagonal is
/// reported separately since the loss treats the anchor's own pair as both
/// positive and candidate negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightSums {
    /// Mass on same-label candidates (false negatives), excluding j = i.
    pub fn_sum: f64,
    /// Mass on different-label candidates (true negatives).
    pub tn_sum: f64,
    /// Mass on the diagonal.
    pub diag: f64,
}

pub fn fn_tn_weight_sums(m: &NegativeMetricMatrix, labels: &[usize]) -> Result<WeightSums> {
    let n = m.n();
    if labels.len() != n {
        return Err(CoreError::Shape(format!(
            "{} labels for a {n}x{n} metric",
            labels.len()
        )));
    }
    let (mut fn_sum, mut tn_sum, mut diag) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let row = m.tensor().row(i);
        for (j, &w) in row.iter().enumerate() {
            if j == i {
                diag += w;
            } else if labels[j] == labels[i] {
                fn_sum += w;
            } else {
                tn_sum += w;
            }
        }
    }
    let scale = 1.0 / n as f64;
    Ok(WeightSums {
        fn_sum: fn_sum * scale,
        tn_sum: tn_sum * scale,
        diag: diag * scale,
    })
}

/// Distance function for embedding-space diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistanceKind {
    /// `1 - cosine(z_i, z_j)`, matching the similarity used by the losses.
    #[default]
    CosineComplement,
    Euclidean,
}

fn distance(a: &[f64], b: &[f64], kind: DistanceKind) -> f64 {
    match kind {
        DistanceKind::CosineComplement => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(CLAMP_FLOOR);
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(CLAMP_FLOOR);
            1.0 - dot / (na * nb)
        }
        DistanceKind::Euclidean => a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt(),
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// 100 times the ratio of the median anchor-to-false-negative distance to
/// the median anchor-to-true-negative distance, pooled over all anchors.
/// Anchors whose class has size one contribute no false-negative pairs.
pub fn distance_ratio(z: &Tensor, labels: &[usize], kind: DistanceKind) -> Result<f64> {
    if labels.len() != z.rows() {
        return Err(CoreError::Shape(format!(
            "{} labels for {} embeddings",
            labels.len(),
            z.rows()
        )));
    }
    let n = z.rows();
    let mut fn_dists = Vec::new();
    let mut tn_dists = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = distance(z.row(i), z.row(j), kind);
            if labels[i] == labels[j] {
                fn_dists.push(d);
            } else {
                tn_dists.push(d);
            }
        }
    }
    if fn_dists.is_empty() {
        return Err(CoreError::Argument(
            "no false-negative pairs: every class has size one".into(),
        ));
    }
    if tn_dists.is_empty() {
        return Err(CoreError::Argument(
            "no true-negative pairs: only one class present".into(),
        ));
    }
    let med_tn = median(&mut tn_dists);
    if med_tn == 0.0 {
        return Err(CoreError::Numeric(
            "median true-negative distance is zero".into(),
        ));
    }
    Ok(100.0 * median(&mut fn_dists) / med_tn)
}

/// Histograms over cosine similarity in [-1, 1] of anchor pairs, split into
/// false negatives (same label) and true negatives (different label).
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityHistograms {
    pub bin_edges: Vec<f64>,
    pub fn_counts: Vec<usize>,
    pub tn_counts: Vec<usize>,
}

impl SimilarityHistograms {
    pub fn fn_total(&self) -> usize {
        self.fn_counts.iter().sum()
    }

    pub fn tn_total(&self) -> usize {
        self.tn_counts.iter().sum()
    }

    /// Count-weighted mean similarity of a histogram, at bin centers.
    fn histogram_mean(edges: &[f64], counts: &[usize]) -> f64 {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return 0.0;
        }
        counts
            .iter()
            .enumerate()
            .map(|(b, &c)| 0.5 * (edges[b] + edges[b + 1]) * c as f64)
            .sum::<f64>()
            / total as f64
    }

    pub fn fn_mean(&self) -> f64 {
        Self::histogram_mean(&self.bin_edges, &self.fn_counts)
    }

    pub fn tn_mean(&self) -> f64 {
        Self::histogram_mean(&self.bin_edges, &self.tn_counts)
    }

    /// CSV with one row per bin.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,fn_count,tn_count\n");
        for b in 0..self.fn_counts.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.bin_edges[b],
                self.bin_edges[b + 1],
                self.fn_counts[b],
                self.tn_counts[b]
            ));
        }
        out
    }
}

pub fn similarity_histograms(
    z: &Tensor,
    labels: &[usize],
    bins: usize,
) -> Result<SimilarityHistograms> {
    if bins < 2 {
        return Err(CoreError::Argument(format!(
            "need at least 2 bins, got {bins}"
        )));
    }
    if labels.len() != z.rows() {
        return Err(CoreError::Shape(format!(
            "{} labels for {} embeddings",
            labels.len(),
            z.rows()
        )));
    }
    let bin_edges: Vec<f64> = (0..=bins)
        .map(|b| -1.0 + 2.0 * b as f64 / bins as f64)
        .collect();
    let mut fn_counts = vec![0usize; bins];
    let mut tn_counts = vec![0usize; bins];
    let n = z.rows();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let sim = 1.0 - distance(z.row(i), z.row(j), DistanceKind::CosineComplement);
            let pos = ((sim + 1.0) / 2.0 * bins as f64).floor() as isize;
            let bin = pos.clamp(0, bins as isize - 1) as usize;
            if labels[i] == labels[j] {
                fn_counts[bin] += 1;
            } else {
                tn_counts[bin] += 1;
            }
        }
    }
    Ok(SimilarityHistograms {
        bin_edges,
        fn_counts,
        tn_counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metric(rows: Vec<Vec<f64>>) -> NegativeMetricMatrix {
        NegativeMetricMatrix::from_tensor_unchecked(Tensor::from_rows(&rows).unwrap())
    }

    #[test]
    fn uniform_metric_weight_sums_match_counting() {
        // Two balanced classes of size n: fn = (n-1)/N, tn = n/N.
        let n = 6;
        let labels = vec![0, 0, 0, 1, 1, 1];
        let m = NegativeMetricMatrix::uniform(n);
        let sums = fn_tn_weight_sums(&m, &labels).unwrap();
        assert!((sums.fn_sum - 2.0 / 6.0).abs() < 1e-12);
        assert!((sums.tn_sum - 3.0 / 6.0).abs() < 1e-12);
        assert!((sums.diag - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn weight_mass_partitions_to_one() {
        use rand::Rng;
        let mut rng = crate::rng::substream(3, 460);
        for _ in 0..20 {
            let n = rng.gen_range(2..10usize);
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
            let mut t = Tensor::zeros(n, n);
            for r in 0..n {
                let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
                let sum: f64 = raw.iter().sum();
                for (c, v) in raw.iter().enumerate() {
                    t.set(r, c, v / sum);
                }
            }
            let sums =
                fn_tn_weight_sums(&NegativeMetricMatrix::from_tensor_unchecked(t), &labels)
                    .unwrap();
            assert!((sums.fn_sum + sums.tn_sum + sums.diag - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn metric_concentrated_on_same_label_saturates_fn_sum() {
        let labels = vec![0, 0, 1, 1];
        let m = metric(vec![
            vec![0.0, 1.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0, 1.0, 0.0],
        ]);
        let sums = fn_tn_weight_sums(&m, &labels).unwrap();
        assert_eq!(sums.fn_sum, 1.0);
        assert_eq!(sums.tn_sum, 0.0);
    }

    #[test]
    fn identical_within_class_embeddings_give_zero_ratio() {
        let z = Tensor::from_rows(&[
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
        ])
        .unwrap();
        let labels = vec![0, 0, 1, 1];
        let ratio = distance_ratio(&z, &labels, DistanceKind::CosineComplement).unwrap();
        assert!(ratio.abs() < 1e-9, "ratio {ratio}");
    }

    #[test]
    fn random_isotropic_embeddings_give_ratio_near_hundred() {
        use rand::Rng;
        let mut rng = crate::rng::substream(4, 461);
        let n = 300;
        let z = Tensor::new(n, 6, (0..n * 6).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let ratio = distance_ratio(&z, &labels, DistanceKind::CosineComplement).unwrap();
        assert!((ratio - 100.0).abs() < 5.0, "ratio {ratio}");
    }

    #[test]
    fn singleton_classes_are_skipped_or_rejected() {
        let z = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        // Class 1 is a singleton: its anchor contributes no FN distance,
        // but class 0 still provides pairs.
        let ok = distance_ratio(&z, &[0, 1, 0], DistanceKind::CosineComplement);
        assert!(ok.is_ok());
        // All classes singleton: no FN pairs at all.
        let err = distance_ratio(&z, &[0, 1, 2], DistanceKind::CosineComplement);
        assert!(matches!(err, Err(CoreError::Argument(_))));
    }

    #[test]
    fn euclidean_distance_kind_is_supported() {
        let z = Tensor::from_rows(&[vec![0.0], vec![1.0], vec![10.0], vec![11.0]]).unwrap();
        let labels = vec![0, 0, 1, 1];
        let ratio = distance_ratio(&z, &labels, DistanceKind::Euclidean).unwrap();
        // FN median 1, TN median ~10.
        assert!(ratio < 15.0);
    }

    #[test]
    fn histogram_masses_sum_to_pair_counts() {
        use rand::Rng;
        let mut rng = crate::rng::substream(5, 462);
        let n = 40;
        let z = Tensor::new(n, 3, (0..n * 3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let labels: Vec<usize> = (0..n).map(|i| i % 4).collect();
        let hist = similarity_histograms(&z, &labels, 16).unwrap();
        let fn_pairs = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && labels[i] == labels[j])
            .count();
        let tn_pairs = n * (n - 1) - fn_pairs;
        assert_eq!(hist.fn_total(), fn_pairs);
        assert_eq!(hist.tn_total(), tn_pairs);
    }

    #[test]
    fn identical_within_class_embeddings_fill_the_top_bin() {
        let z = Tensor::from_rows(&[
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![-1.0, 0.0],
        ])
        .unwrap();
        let labels = vec![0, 0, 1, 1];
        let hist = similarity_histograms(&z, &labels, 8).unwrap();
        assert_eq!(hist.fn_counts[7], hist.fn_total());
        // Opposite-class pairs are at similarity -1: bottom bin.
        assert_eq!(hist.tn_counts[0], hist.tn_total());
    }

    #[test]
    fn histogram_requires_two_bins() {
        let z = Tensor::zeros(3, 2);
        assert!(similarity_histograms(&z, &[0, 0, 1], 1).is_err());
    }

    #[test]
    fn diagnostics_are_pure_functions() {
        use rand::Rng;
        let mut rng = crate::rng::substream(6, 463);
        let n = 20;
        let z = Tensor::new(n, 4, (0..n * 4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let a = distance_ratio(&z, &labels, DistanceKind::CosineComplement).unwrap();
        let b = distance_ratio(&z, &labels, DistanceKind::CosineComplement).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        let h1 = similarity_histograms(&z, &labels, 10).unwrap();
        let h2 = similarity_histograms(&z, &labels, 10).unwrap();
        assert_eq!(h1, h2);
    }
}
