//! Linear probe: multinomial logistic regression on frozen embeddings.
//!
//! Fitting sees only train and validation indices; test labels enter
//! nothing but the final scoring call.

use crate::adam::{adam_step, AdamState};
use crate::error::{CoreError, Result};
use crate::eval::SplitSpec;
use crate::tensor::{self, Tensor};

/// Probe weights selected at the best validation epoch.
#[derive(Debug, Clone)]
pub struct ProbeModel {
    w: Tensor,
    b: Tensor,
    num_classes: usize,
}

fn gather_rows(z: &Tensor, idx: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(idx.len(), z.cols());
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).copy_from_slice(z.row(i));
    }
    out
}

fn predictions(z: &Tensor, w: &Tensor, b: &Tensor) -> Result<Vec<usize>> {
    let logits = tensor::add_row_broadcast(&tensor::matmul(z, w)?, b)?;
    Ok((0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            row.iter()
                .enumerate()
                .max_by(|(_, a), (_, b)| a.partial_cmp(b).expect("finite logits"))
                .map(|(k, _)| k)
                .unwrap_or(0)
        })
        .collect())
}

fn accuracy_of(pred: &[usize], labels: &[usize], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    let hits = idx
        .iter()
        .zip(pred)
        .filter(|(&i, &p)| labels[i] == p)
        .count();
    hits as f64 / idx.len() as f64
}

/// Trains the probe by full-batch Adam on the train indices, selecting the
/// epoch with the best validation accuracy.
pub fn fit_probe(
    z: &Tensor,
    labels: &[usize],
    train: &[usize],
    val: &[usize],
    lr: f64,
    epochs: usize,
) -> Result<ProbeModel> {
    if labels.len() != z.rows() {
        return Err(CoreError::Shape(format!(
            "{} labels for {} embeddings",
            labels.len(),
            z.rows()
        )));
    }
    if train.is_empty() {
        return Err(CoreError::DegenerateSplit("empty training split".into()));
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let train_classes: std::collections::BTreeSet<usize> =
        train.iter().map(|&i| labels[i]).collect();
    if train_classes.len() < 2 {
        return Err(CoreError::DegenerateSplit(format!(
            "training split contains {} class(es); need at least 2",
            train_classes.len()
        )));
    }

    let z_train = gather_rows(z, train);
    let n_train = train.len() as f64;
    // One-hot targets.
    let mut y = Tensor::zeros(train.len(), num_classes);
    for (r, &i) in train.iter().enumerate() {
        y.set(r, labels[i], 1.0);
    }

    // Zero init keeps the convex fit deterministic.
    let mut w = Tensor::zeros(z.cols(), num_classes);
    let mut b = Tensor::zeros(1, num_classes);
    let mut state = AdamState::new(&[w.shape(), b.shape()]);

    let z_val = gather_rows(z, val);
    let mut best = ProbeModel {
        w: w.clone(),
        b: b.clone(),
        num_classes,
    };
    let mut best_val = f64::NEG_INFINITY;

    for _ in 0..epochs {
        let logits = tensor::add_row_broadcast(&tensor::matmul(&z_train, &w)?, &b)?;
        let probs = tensor::row_softmax(&logits);
        let delta = tensor::scale(&tensor::sub(&probs, &y)?, 1.0 / n_train);
        let grad_w = tensor::matmul_tn(&z_train, &delta)?;
        let grad_b = tensor::col_sum(&delta);
        adam_step(
            &mut [("probe.w", &mut w), ("probe.b", &mut b)],
            &[grad_w, grad_b],
            &mut state,
            lr,
            0.0,
        )?;

        let val_acc = if val.is_empty() {
            // No validation set: keep the final epoch.
            f64::INFINITY
        } else {
            let pred = predictions(&z_val, &w, &b)?;
            accuracy_of(&pred, labels, val)
        };
        if val_acc > best_val {
            best_val = val_acc;
            best = ProbeModel {
                w: w.clone(),
                b: b.clone(),
                num_classes,
            };
        }
    }
    Ok(best)
}

/// Accuracy (percent) of the probe on the given indices.
pub fn probe_accuracy(
    model: &ProbeModel,
    z: &Tensor,
    labels: &[usize],
    idx: &[usize],
) -> Result<f64> {
    if labels.iter().any(|&l| l >= model.num_classes) {
        return Err(CoreError::Argument(
            "label outside the classes seen at fit time".into(),
        ));
    }
    let z_idx = gather_rows(z, idx);
    let pred = predictions(&z_idx, &model.w, &model.b)?;
    Ok(accuracy_of(&pred, labels, idx) * 100.0)
}

/// Full probe protocol: fit on train/val, score on test. Returns percent
/// accuracy.
pub fn linear_probe(
    z: &Tensor,
    labels: &[usize],
    split: &SplitSpec,
    probe_lr: f64,
    probe_epochs: usize,
) -> Result<f64> {
    split.validate(z.rows())?;
    let model = fit_probe(z, labels, &split.train, &split.val, probe_lr, probe_epochs)?;
    probe_accuracy(&model, z, labels, &split.test)
}
