//! Alternating bi-level training: per epoch, fresh contrastive views, a
//! frozen-encoder inner phase of metric-network steps, then a frozen-metric
//! encoder step. A plain InfoNCE trainer shares the same loop and random
//! streams for controlled comparison.

use std::time::Instant;

use crate::adam::{adam_step, AdamState};
use crate::augment::{make_views, AugmentConfig, View};
use crate::checkpoint::checkpoint_bytes;
use crate::error::{CoreError, Result};
use crate::eval::fn_tn_weight_sums;
use crate::graph::Graph;
use crate::model::{
    encoder_forward, encoder_forward_plain, init_params, nmn_forward, nmn_forward_plain, Dims,
    EncoderParams, NegativeMetricMatrix, NmnParams,
};
use crate::objective::{
    infonce_loss, infonce_loss_t, inner_objective_t, loss_report,
    nml_loss_with_constant_metric_t, SimilarityMatrix,
};
use crate::tensor::Tensor;

/// Where the metric weights come from during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MetricMode {
    /// Metric network trained by the inner phase.
    #[default]
    Learned,
    /// Metric frozen to the InfoNCE-equivalent weighting; no inner steps.
    /// With this mode the run must match the baseline trainer trajectory.
    InfoNceEquivalent,
}

/// Full training configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub tau: f64,
    pub alpha: f64,
    /// Outer epochs.
    pub epochs: usize,
    /// Metric-network steps per epoch.
    pub inner_steps: usize,
    /// Encoder steps per epoch (ablation knob; the algorithm uses one).
    pub outer_steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub augment: AugmentConfig,
    pub seed: u64,
    /// Train the plain InfoNCE objective without any metric network.
    pub baseline_mode: bool,
    pub metric_mode: MetricMode,
    /// Pair rows processed at a time inside the metric network.
    pub block_rows: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            tau: 0.5,
            alpha: 0.1,
            epochs: 100,
            inner_steps: 3,
            outer_steps: 1,
            lr: 1e-2,
            weight_decay: 0.0,
            embed_dim: 64,
            hidden_dim: 64,
            augment: AugmentConfig::default(),
            seed: 0,
            baseline_mode: false,
            metric_mode: MetricMode::Learned,
            block_rows: 4096,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau.is_nan() || self.tau <= 0.0 {
            return Err(CoreError::Argument(format!("tau must be positive, got {}", self.tau)));
        }
        if self.alpha.is_nan() || self.alpha < 0.0 {
            return Err(CoreError::Argument(format!(
                "alpha must be nonnegative, got {}",
                self.alpha
            )));
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(CoreError::Argument(format!("lr must be positive, got {}", self.lr)));
        }
        if self.weight_decay < 0.0 {
            return Err(CoreError::Argument("weight_decay must be nonnegative".into()));
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(CoreError::Argument("dims must be positive".into()));
        }
        if self.outer_steps == 0 {
            return Err(CoreError::Argument("need at least one outer step".into()));
        }
        if self.block_rows == 0 {
            return Err(CoreError::Argument("block_rows must be positive".into()));
        }
        self.augment.validate()
    }
}

/// Per-epoch measurements, taken at the end of the inner phase (before the
/// encoder update) on that epoch's views.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub infonce_loss: f64,
    pub i_nce: f64,
    pub nml_loss: Option<f64>,
    pub kl_reg: Option<f64>,
    pub inner_objective: Option<f64>,
    /// Inner objective before the first metric step of the epoch.
    pub inner_objective_start: Option<f64>,
    pub i_nml: Option<f64>,
    pub fn_weight_sum: Option<f64>,
    pub tn_weight_sum: Option<f64>,
    pub diag_weight: Option<f64>,
    pub wall_clock_ms: f64,
}

/// One record per completed epoch, in order.
#[derive(Debug, Clone, PartialEq)]
pub struct RunHistory {
    pub baseline: bool,
    pub records: Vec<EpochRecord>,
}

impl RunHistory {
    pub fn csv_header(&self) -> &'static str {
        if self.baseline {
            "epoch,infonce_loss,i_nce,wall_clock_ms"
        } else {
            "epoch,nml_loss,infonce_loss,kl_reg,inner_objective,inner_objective_start,\
             i_nml,i_nce,fn_weight_sum,tn_weight_sum,diag_weight,wall_clock_ms"
        }
    }

    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.17e}"));
        let mut out = String::from(self.csv_header());
        out.push('\n');
        for r in &self.records {
            if self.baseline {
                out.push_str(&format!(
                    "{},{:.17e},{:.17e},{:.3}\n",
                    r.epoch, r.infonce_loss, r.i_nce, r.wall_clock_ms
                ));
            } else {
                out.push_str(&format!(
                    "{},{},{:.17e},{},{},{},{},{:.17e},{},{},{},{:.3}\n",
                    r.epoch,
                    fmt(r.nml_loss),
                    r.infonce_loss,
                    fmt(r.kl_reg),
                    fmt(r.inner_objective),
                    fmt(r.inner_objective_start),
                    fmt(r.i_nml),
                    r.i_nce,
                    fmt(r.fn_weight_sum),
                    fmt(r.tn_weight_sum),
                    fmt(r.diag_weight),
                    r.wall_clock_ms
                ));
            }
        }
        out
    }

    /// Bitwise equality of every recorded value except wall clock.
    pub fn same_measurements(&self, other: &RunHistory) -> bool {
        let key = |r: &EpochRecord| {
            (
                r.epoch,
                r.infonce_loss.to_bits(),
                r.i_nce.to_bits(),
                r.nml_loss.map(f64::to_bits),
                r.kl_reg.map(f64::to_bits),
                r.inner_objective.map(f64::to_bits),
                r.inner_objective_start.map(f64::to_bits),
                r.i_nml.map(f64::to_bits),
                r.fn_weight_sum.map(f64::to_bits),
                r.tn_weight_sum.map(f64::to_bits),
                r.diag_weight.map(f64::to_bits),
            )
        };
        self.baseline == other.baseline
            && self.records.len() == other.records.len()
            && self
                .records
                .iter()
                .zip(&other.records)
                .all(|(a, b)| key(a) == key(b))
    }
}

/// Trained parameters plus the per-epoch history.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub encoder: EncoderParams,
    pub nmn: Option<NmnParams>,
    pub history: RunHistory,
}

fn encoder_param_names() -> [&'static str; 2] {
    ["encoder.w1", "encoder.w2"]
}

fn nmn_param_names() -> [&'static str; 6] {
    ["nmn.l1", "nmn.b1", "nmn.l2", "nmn.b2", "nmn.l3", "nmn.b3"]
}

/// Inner phase: several metric-network steps against the combined
/// objective with the encoder frozen. The encoder is immutable here by
/// signature, so freezing cannot be violated. Returns the inner objective
/// observed before the first step, when at least one step ran.
fn nmn_inner_phase(
    nmn: &mut NmnParams,
    state: &mut AdamState,
    u: &Tensor,
    v: &Tensor,
    s: &SimilarityMatrix,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<Option<f64>> {
    let mut start_value = None;
    for _ in 0..cfg.inner_steps {
        let mut tape = crate::tape::Tape::new();
        let vars = nmn.leaves(&mut tape);
        let uc = tape.constant(u.clone());
        let vc = tape.constant(v.clone());
        let sc = tape.constant(s.tensor().clone());
        let m = nmn_forward(&mut tape, &vars, uc, vc, cfg.block_rows)?;
        let (inner, _, _) = inner_objective_t(&mut tape, sc, m, cfg.tau, cfg.alpha)?;
        let value = tape.value(inner).item()?;
        if !value.is_finite() {
            return Err(CoreError::Numeric(format!(
                "non-finite inner objective at epoch {epoch}"
            )));
        }
        if start_value.is_none() {
            start_value = Some(value);
        }
        let grads = tape.backward(inner)?;
        let grad_list = [
            grads.wrt(vars.l1),
            grads.wrt(vars.b1),
            grads.wrt(vars.l2),
            grads.wrt(vars.b2),
            grads.wrt(vars.l3),
            grads.wrt(vars.b3),
        ];
        let names = nmn_param_names();
        let mut params: Vec<(&str, &mut Tensor)> = vec![
            (names[0], &mut nmn.l1),
            (names[1], &mut nmn.b1),
            (names[2], &mut nmn.l2),
            (names[3], &mut nmn.b2),
            (names[4], &mut nmn.l3),
            (names[5], &mut nmn.b3),
        ];
        adam_step(&mut params, &grad_list, state, cfg.lr, cfg.weight_decay)?;
    }
    Ok(start_value)
}

/// Outer phase: encoder steps against the loss with the metric held
/// constant (or plain InfoNCE in baseline mode). The metric network is
/// immutable here by signature.
fn encoder_outer_phase(
    encoder: &mut EncoderParams,
    state: &mut AdamState,
    view_a: &View,
    view_b: &View,
    metric: Option<&NegativeMetricMatrix>,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<()> {
    for _ in 0..cfg.outer_steps {
        let mut tape = crate::tape::Tape::new();
        let vars = encoder.leaves(&mut tape);
        let xa = tape.constant(view_a.graph.features().clone());
        let xb = tape.constant(view_b.graph.features().clone());
        let u = encoder_forward(&mut tape, &vars, &view_a.adjacency, xa)?;
        let v = encoder_forward(&mut tape, &vars, &view_b.adjacency, xb)?;
        let s = tape.cosine_similarity_matrix(u, v)?;
        let loss = match metric {
            Some(m) => nml_loss_with_constant_metric_t(&mut tape, s, m, cfg.tau)?,
            None => infonce_loss_t(&mut tape, s, cfg.tau)?,
        };
        let value = tape.value(loss).item()?;
        if !value.is_finite() {
            return Err(CoreError::Numeric(format!(
                "non-finite encoder loss at epoch {epoch}"
            )));
        }
        let grads = tape.backward(loss)?;
        let grad_list = [grads.wrt(vars.w1), grads.wrt(vars.w2)];
        let names = encoder_param_names();
        let mut params: Vec<(&str, &mut Tensor)> =
            vec![(names[0], &mut encoder.w1), (names[1], &mut encoder.w2)];
        adam_step(&mut params, &grad_list, state, cfg.lr, cfg.weight_decay)?;
    }
    Ok(())
}

fn run(g: &Graph, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let dims = Dims {
        feature_dim: g.feature_dim(),
        embed_dim: cfg.embed_dim,
        hidden_dim: cfg.hidden_dim,
    };
    let (mut encoder, mut nmn) = init_params(cfg.seed, dims)?;
    let learned = !cfg.baseline_mode && cfg.metric_mode == MetricMode::Learned;

    let mut enc_state = AdamState::new(&[encoder.w1.shape(), encoder.w2.shape()]);
    let mut nmn_state = AdamState::new(&[
        nmn.l1.shape(),
        nmn.b1.shape(),
        nmn.l2.shape(),
        nmn.b2.shape(),
        nmn.l3.shape(),
        nmn.b3.shape(),
    ]);

    let mut augment = cfg.augment.clone();
    augment.seed = cfg.seed;

    let mut history = RunHistory {
        baseline: cfg.baseline_mode,
        records: Vec::with_capacity(cfg.epochs),
    };
    let mut last_good: Option<Vec<u8>> = None;
    let n = g.num_nodes();

    for epoch in 1..=cfg.epochs {
        let t0 = Instant::now();
        // Attach the epoch and the last completed checkpoint to numeric
        // failures so callers can salvage the run.
        let step = |err: CoreError| match err {
            CoreError::Numeric(_) => CoreError::NonFiniteLoss {
                epoch,
                last_good_checkpoint: last_good.clone(),
            },
            other => other,
        };

        let (view_a, view_b) = make_views(g, &augment, epoch - 1)?;
        let u = encoder_forward_plain(&encoder, &view_a.adjacency, view_a.graph.features())?;
        let v = encoder_forward_plain(&encoder, &view_b.adjacency, view_b.graph.features())?;
        let s = SimilarityMatrix::cosine_from_embeddings(&u, &v)?;

        let mut inner_start = None;
        let metric = if cfg.baseline_mode {
            None
        } else if learned {
            inner_start =
                nmn_inner_phase(&mut nmn, &mut nmn_state, &u, &v, &s, cfg, epoch).map_err(step)?;
            Some(nmn_forward_plain(&nmn, &u, &v, cfg.block_rows)?)
        } else {
            Some(NegativeMetricMatrix::infonce_equivalent(n))
        };

        // Measurements at the end of the inner phase, before the encoder
        // moves.
        let record = match &metric {
            Some(m) => {
                let report = loss_report(&s, m, cfg.tau, cfg.alpha)?;
                if !report.inner_objective.is_finite() {
                    return Err(CoreError::NonFiniteLoss {
                        epoch,
                        last_good_checkpoint: last_good,
                    });
                }
                let sums = g
                    .labels()
                    .map(|labels| fn_tn_weight_sums(m, labels))
                    .transpose()?;
                EpochRecord {
                    epoch,
                    infonce_loss: report.infonce_loss,
                    i_nce: report.i_nce,
                    nml_loss: Some(report.nml_loss),
                    kl_reg: Some(report.kl_reg),
                    inner_objective: Some(report.inner_objective),
                    inner_objective_start: inner_start,
                    i_nml: Some(report.i_nml),
                    fn_weight_sum: sums.map(|s| s.fn_sum),
                    tn_weight_sum: sums.map(|s| s.tn_sum),
                    diag_weight: sums.map(|s| s.diag),
                    wall_clock_ms: 0.0,
                }
            }
            None => {
                let nce = infonce_loss(&s, cfg.tau)?;
                if !nce.is_finite() {
                    return Err(CoreError::NonFiniteLoss {
                        epoch,
                        last_good_checkpoint: last_good,
                    });
                }
                EpochRecord {
                    epoch,
                    infonce_loss: nce,
                    i_nce: (n as f64).ln() - nce,
                    nml_loss: None,
                    kl_reg: None,
                    inner_objective: None,
                    inner_objective_start: None,
                    i_nml: None,
                    fn_weight_sum: None,
                    tn_weight_sum: None,
                    diag_weight: None,
                    wall_clock_ms: 0.0,
                }
            }
        };

        encoder_outer_phase(
            &mut encoder,
            &mut enc_state,
            &view_a,
            &view_b,
            metric.as_ref(),
            cfg,
            epoch,
        )
        .map_err(step)?;

        let mut record = record;
        record.wall_clock_ms = t0.elapsed().as_secs_f64() * 1e3;
        history.records.push(record);
        last_good = Some(checkpoint_bytes(
            &encoder,
            if learned { Some(&nmn) } else { None },
        )?);
    }

    Ok(TrainOutput {
        encoder,
        nmn: if learned { Some(nmn) } else { None },
        history,
    })
}

/// Bi-level training of encoder and metric network.
pub fn train(g: &Graph, cfg: &TrainConfig) -> Result<TrainOutput> {
    if cfg.baseline_mode {
        return Err(CoreError::Argument(
            "baseline_mode config passed to train; use train_baseline".into(),
        ));
    }
    run(g, cfg)
}

/// Plain InfoNCE training with the same loop, streams, and encoder init.
pub fn train_baseline(g: &Graph, cfg: &TrainConfig) -> Result<TrainOutput> {
    let mut cfg = cfg.clone();
    cfg.baseline_mode = true;
    run(g, &cfg)
}

/// Embeds the unaugmented graph with trained encoder weights; no tape, no
/// randomness.
pub fn embed(p: &EncoderParams, g: &Graph) -> Result<Tensor> {
    let adj = crate::graph::normalize_adjacency(g);
    encoder_forward_plain(p, &adj, g.features())
}
