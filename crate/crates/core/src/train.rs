//! The training loop and the per-run report.

use serde::{Deserialize, Serialize};

use crate::adapter::WeightUpdate;
use crate::config::{RunConfig, TrainConfig};
use crate::error::Result;
use crate::optim::OptimizerState;
use crate::rng::{derive_seed, SeededRng};
use crate::tape::Tape;
use crate::task::{teacher_loss, teacher_loss_value, Dataset, ToyClassifier};
use crate::tensor::Tensor;

/// Seed stream for minibatch order, separate from adapter init.
pub const SHUFFLE_STREAM: u64 = 2;

/// What a run optimises and how its final metric is read.
#[derive(Clone, Copy, Debug)]
pub enum Problem<'a> {
    Classification {
        model: &'a ToyClassifier,
        data: &'a Dataset,
    },
    Teacher {
        target: &'a Tensor,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    TeacherLoss,
}

impl MetricKind {
    pub fn higher_is_better(self) -> bool {
        matches!(self, MetricKind::Accuracy)
    }

    /// True when `a` is strictly better than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        if self.higher_is_better() {
            a > b
        } else {
            a < b
        }
    }
}

impl Problem<'_> {
    pub fn metric_kind(&self) -> MetricKind {
        match self {
            Problem::Classification { .. } => MetricKind::Accuracy,
            Problem::Teacher { .. } => MetricKind::TeacherLoss,
        }
    }

    pub fn metric(&self, delta: &Tensor) -> Result<f64> {
        match self {
            Problem::Classification { model, data } => model.accuracy(Some(delta), data),
            Problem::Teacher { target } => teacher_loss_value(delta, target),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    /// 1-based epoch after which the metric was read.
    pub epoch: usize,
    pub metric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// Sample-weighted mean loss of each completed epoch.
    pub epoch_losses: Vec<f64>,
    pub evals: Vec<EvalPoint>,
    /// `None` when the run diverged.
    pub final_metric: Option<f64>,
    /// 1-based epoch at which a loss or parameter became non-finite.
    pub diverged_at_epoch: Option<usize>,
}

fn all_finite(update: &dyn WeightUpdate) -> bool {
    update
        .parameters()
        .iter()
        .all(|p| p.data().iter().all(|v| v.is_finite()))
}

/// One optimiser step on `loss_fn`'s scalar; returns the loss value.
fn step<F>(
    update: &mut dyn WeightUpdate,
    opt: &mut OptimizerState,
    lr: f64,
    loss_fn: F,
) -> Result<f64>
where
    F: FnOnce(&mut Tape, crate::tape::Var) -> Result<crate::tape::Var>,
{
    let mut tape = Tape::new();
    let (params, delta) = update.bind(&mut tape)?;
    let loss = loss_fn(&mut tape, delta)?;
    let value = tape.value(loss).data()[0];
    if !value.is_finite() {
        return Ok(value);
    }
    tape.backward(loss)?;
    let grads: Vec<Vec<f64>> = params
        .iter()
        .map(|&p| {
            tape.grad(p)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; tape.value(p).len()])
        })
        .collect();
    let mut tensors = update.parameters_mut();
    opt.step(&mut tensors, &grads, lr);
    Ok(value)
}

/// Trains `update` in place. Classification runs shuffled minibatches drawn
/// from `cfg.seed`; the teacher task takes one full-batch step per epoch.
///
/// The learning rate is not checked here, so `lr = 0` is a valid no-op run.
pub fn train(problem: &Problem, update: &mut dyn WeightUpdate, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let sizes: Vec<usize> = update.parameters().iter().map(|p| p.len()).collect();
    let mut opt = OptimizerState::new(cfg.optimizer, &sizes);
    let mut rng = SeededRng::new(derive_seed(cfg.seed, SHUFFLE_STREAM));
    let lr = cfg.learning_rate;

    let mut out = TrainOutcome {
        epoch_losses: Vec::with_capacity(cfg.epochs),
        evals: Vec::new(),
        final_metric: None,
        diverged_at_epoch: None,
    };
    let mut order: Vec<usize> = match problem {
        Problem::Classification { data, .. } => (0..data.len()).collect(),
        Problem::Teacher { .. } => Vec::new(),
    };

    for epoch in 1..=cfg.epochs {
        let loss = match problem {
            Problem::Teacher { target } => {
                step(update, &mut opt, lr, |tape, delta| teacher_loss(tape, delta, target))?
            }
            Problem::Classification { model, data } => {
                rng.shuffle(&mut order);
                let batch = cfg.batch_size.unwrap_or(order.len()).max(1);
                let mut total = 0.0;
                for chunk in order.chunks(batch) {
                    let x = data.features.select_columns(chunk);
                    let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
                    let l = step(update, &mut opt, lr, |tape, delta| {
                        let xv = tape.constant(x);
                        let logits = model.logits(tape, xv, Some(delta))?;
                        tape.softmax_cross_entropy(logits, &labels)
                    })?;
                    total += l * chunk.len() as f64;
                    if !l.is_finite() {
                        break;
                    }
                }
                total / order.len() as f64
            }
        };
        if !loss.is_finite() || !all_finite(update) {
            out.diverged_at_epoch = Some(epoch);
            return Ok(out);
        }
        out.epoch_losses.push(loss);
        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let metric = problem.metric(&update.delta_weight()?)?;
            out.evals.push(EvalPoint { epoch, metric });
        }
    }
    let metric = problem.metric(&update.delta_weight()?)?;
    if metric.is_finite() {
        out.final_metric = Some(metric);
    } else {
        out.diverged_at_epoch = Some(cfg.epochs);
    }
    Ok(out)
}

/// JSON record of one `(config, seed)` run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub label: String,
    pub seed: u64,
    pub config: RunConfig,
    pub metric: MetricKind,
    pub epoch_losses: Vec<f64>,
    pub evals: Vec<EvalPoint>,
    pub final_metric: Option<f64>,
    pub diverged_at_epoch: Option<usize>,
    pub trainable_parameters: usize,
    /// SHA-256 of the frozen weights, identical before and after training.
    pub frozen_fingerprint: String,
    /// SHA-256 of the final update matrix.
    pub delta_fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_seconds: Option<f64>,
    /// Unix seconds at the start of the run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_at: Option<u64>,
}

impl RunReport {
    pub fn diverged(&self) -> bool {
        self.diverged_at_epoch.is_some()
    }

    pub fn mean_loss(&self) -> Option<f64> {
        if self.epoch_losses.is_empty() {
            None
        } else {
            Some(self.epoch_losses.iter().sum::<f64>() / self.epoch_losses.len() as f64)
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}
