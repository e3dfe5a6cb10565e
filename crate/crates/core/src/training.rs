//! Training loop: MSE loss on normalized targets, Adam updates, loss
//! history, and the finite-difference gradient checking harness used by the
//! `verify` command.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    compute_norm_stats_pooled, normalize, window_sequences, FeatureSelection, NormStats,
    Normalization, SequenceDataset,
};
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::network::{
    backward, forward, init_params, Dropout, Gradients, NetworkConfig, NetworkParams,
};

/// Mean squared error over all elements and its gradient with respect to
/// the predictions: `2 (pred - target) / N`.
pub fn mse_loss(predictions: &Mat, targets: &Mat) -> Result<(f64, Mat)> {
    if predictions.rows() != targets.rows()
        || predictions.cols() != targets.cols()
        || predictions.rows() == 0
    {
        return Err(Error::config(format!(
            "loss shapes: {}x{} predictions vs {}x{} targets",
            predictions.rows(),
            predictions.cols(),
            targets.rows(),
            targets.cols()
        )));
    }
    let n = (predictions.rows() * predictions.cols()) as f64;
    let mut grad = Mat::zeros(predictions.rows(), predictions.cols());
    let mut acc = 0.0;
    for r in 0..predictions.rows() {
        let p = predictions.row(r);
        let t = targets.row(r);
        let g = grad.row_mut(r);
        for i in 0..p.len() {
            let d = p[i] - t[i];
            acc += d * d;
            g[i] = 2.0 * d / n;
        }
    }
    Ok((acc / n, grad))
}

/// Adam accumulators. `m` and `v` mirror the canonical flat parameter order
/// of [`NetworkParams::blocks`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Completed steps.
    pub t: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(param_count: usize, learning_rate: f64) -> Self {
        AdamState {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One Adam update with bias correction:
/// `m <- b1 m + (1-b1) g`, `v <- b2 v + (1-b2) g^2`,
/// `p <- p - lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step(
    params: &mut NetworkParams,
    grads: &Gradients,
    state: &mut AdamState,
) -> Result<()> {
    if !grads.all_finite() {
        return Err(Error::Diverged("non-finite gradient in Adam step".into()));
    }
    let grad_blocks = grads.blocks();
    let mut param_blocks = params.blocks_mut();
    let total: usize = param_blocks.iter().map(|b| b.len()).sum();
    if total != state.m.len() || grad_blocks.len() != param_blocks.len() {
        return Err(Error::config(format!(
            "Adam state covers {} parameters but the network has {total}",
            state.m.len()
        )));
    }

    state.t += 1;
    let bc1 = 1.0 - state.beta1.powi(state.t as i32);
    let bc2 = 1.0 - state.beta2.powi(state.t as i32);
    let mut offset = 0;
    for (pb, gb) in param_blocks.iter_mut().zip(&grad_blocks) {
        for (i, (p, &g)) in pb.iter_mut().zip(gb.iter()).enumerate() {
            let k = offset + i;
            state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g;
            state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * g * g;
            let m_hat = state.m[k] / bc1;
            let v_hat = state.v[k] / bc2;
            *p -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
        }
        offset += pb.len();
    }
    Ok(())
}

/// Optional windowed batching for long trajectories. `None` trains on full
/// sequences, which is the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPolicy {
    pub length: usize,
    pub stride: usize,
}

/// Training recipe.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Dropout probability on hidden dense layer inputs.
    pub dropout: f64,
    pub seed: u64,
    /// z-score inputs and targets before training.
    pub normalize: bool,
    /// One optimizer step per sequence; windowing is the batching extension.
    pub window: Option<WindowPolicy>,
    /// Stop once the seen-data loss improves by less than 1e-7 over 20
    /// epochs.
    pub early_stop: bool,
    /// Print a progress line every N epochs (0 = silent).
    pub report_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 300,
            learning_rate: 1e-3,
            dropout: 0.1,
            seed: 0,
            normalize: true,
            window: None,
            early_stop: true,
            report_every: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("need at least one epoch"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::config(format!("learning rate {} invalid", self.learning_rate)));
        }
        if let Some(w) = self.window {
            if w.length == 0 || w.stride == 0 {
                return Err(Error::config("window length and stride must be at least 1"));
            }
        }
        Ok(())
    }
}

const EARLY_STOP_WINDOW: usize = 20;
const EARLY_STOP_IMPROVEMENT: f64 = 1e-7;

/// Per-epoch training record. Losses are in the units the optimizer saw
/// (normalized-target units when normalization is on).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    /// Mean per-element squared error per epoch.
    pub loss: Vec<f64>,
    /// Per-epoch, per-joint mean squared error (same units as `loss`).
    pub per_joint: Vec<Vec<f64>>,
    /// Wall-clock seconds per epoch. Diagnostic only; not serialized to CSV.
    pub epoch_seconds: Vec<f64>,
}

impl LossHistory {
    pub fn epochs(&self) -> usize {
        self.loss.len()
    }

    /// Two-column CSV `epoch,loss` (epoch is 1-based).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss\n");
        for (i, l) in self.loss.iter().enumerate() {
            out.push_str(&format!("{},{}\n", i + 1, l));
        }
        out
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Converts per-epoch losses to squared degrees C using the target
    /// statistics: `mean_j sigma_j^2 * mse_j`. With identity statistics this
    /// is the stored loss, so histories from normalized and unnormalized
    /// runs become comparable.
    pub fn losses_in_squared_degc(&self, target_stats: &NormStats) -> Result<Vec<f64>> {
        let joints = target_stats.std.len();
        if self.per_joint.iter().any(|v| v.len() != joints) {
            return Err(Error::config("per-joint history width disagrees with stats"));
        }
        Ok(self
            .per_joint
            .iter()
            .map(|per_j| {
                per_j.iter().zip(&target_stats.std).map(|(mse, s)| mse * s * s).sum::<f64>()
                    / joints as f64
            })
            .collect())
    }
}

/// Why a training run stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StopReason {
    /// All epochs completed.
    Completed,
    /// Seen-data loss stopped improving.
    EarlyStop { epoch: usize },
    /// Loss or gradient went non-finite; parameters roll back to the last
    /// finite epoch.
    Diverged { epoch: usize, detail: String },
}

/// Everything a training run produces.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: NetworkParams,
    pub history: LossHistory,
    pub normalization: Normalization,
    pub stop: StopReason,
}

/// Full training pipeline on the seen partition: compute normalization
/// statistics, z-score inputs and targets, then loop epochs over sequences
/// in seeded shuffled order with dropout, MSE and Adam. Deterministic for a
/// fixed (dataset, config, seed).
///
/// On divergence the run aborts and the last finite epoch's parameters are
/// returned with [`StopReason::Diverged`].
pub fn train(
    dataset: &SequenceDataset,
    selection: FeatureSelection,
    network: &NetworkConfig,
    config: &TrainingConfig,
) -> Result<TrainOutput> {
    config.validate()?;
    network.validate()?;
    if dataset.is_empty() {
        return Err(Error::config("training dataset is empty"));
    }
    for s in &dataset.sequences {
        if s.inputs.rows() == 0 || s.inputs.rows() != s.targets.rows() {
            return Err(Error::config(format!(
                "sequence '{}' has misaligned inputs/targets",
                s.id
            )));
        }
        if s.inputs.cols() != network.input_size {
            return Err(Error::config(format!(
                "sequence '{}' has {} features but the network expects {}",
                s.id,
                s.inputs.cols(),
                network.input_size
            )));
        }
        if s.targets.cols() != *network.dense_widths.last().unwrap() {
            return Err(Error::config(format!(
                "sequence '{}' has {} targets but the network emits {}",
                s.id,
                s.targets.cols(),
                network.dense_widths.last().unwrap()
            )));
        }
    }

    // Statistics come from the seen data only and are reused unchanged for
    // any later partition.
    let input_mats: Vec<Mat> = dataset.sequences.iter().map(|s| s.inputs.clone()).collect();
    let target_mats: Vec<Mat> = dataset.sequences.iter().map(|s| s.targets.clone()).collect();
    let normalization = if config.normalize {
        Normalization {
            selection,
            input: compute_norm_stats_pooled(&input_mats)?,
            target: compute_norm_stats_pooled(&target_mats)?,
        }
    } else {
        Normalization {
            selection,
            input: NormStats::identity(network.input_size),
            target: NormStats::identity(*network.dense_widths.last().unwrap()),
        }
    };

    let mut items: Vec<(Mat, Mat)> = Vec::new();
    for s in &dataset.sequences {
        let inputs = normalize(&s.inputs, &normalization.input)?;
        let targets = normalize(&s.targets, &normalization.target)?;
        match config.window {
            Some(w) => items.extend(window_sequences(&inputs, &targets, w.length, w.stride)?),
            None => items.push((inputs, targets)),
        }
    }

    let mut params = init_params(network, config.seed)?;
    let mut adam = AdamState::new(params.param_count(), config.learning_rate);
    // Separate stream for shuffling and dropout so the initialization draw
    // count does not couple into the training schedule.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);

    let joints = *network.dense_widths.last().unwrap();
    let mut history =
        LossHistory { loss: Vec::new(), per_joint: Vec::new(), epoch_seconds: Vec::new() };
    let mut last_finite = params.clone();
    let mut stop = StopReason::Completed;

    'epochs: for epoch in 0..config.epochs {
        let started = std::time::Instant::now();
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(&mut rng);

        let mut sq_sum = 0.0f64;
        let mut sq_per_joint = vec![0.0f64; joints];
        let mut elements = 0usize;
        for &idx in &order {
            let (inputs, targets) = &items[idx];
            let (pred, cache) =
                forward(&params, inputs, Dropout::Train { p: config.dropout, rng: &mut rng })?;
            let (loss, dloss) = mse_loss(&pred, targets)?;
            if !loss.is_finite() {
                params = last_finite;
                stop = StopReason::Diverged {
                    epoch: epoch + 1,
                    detail: format!("loss became {loss} on sequence {idx}"),
                };
                break 'epochs;
            }
            for r in 0..pred.rows() {
                let p = pred.row(r);
                let t = targets.row(r);
                for j in 0..joints {
                    let d = p[j] - t[j];
                    sq_per_joint[j] += d * d;
                }
            }
            sq_sum += loss * (pred.rows() * joints) as f64;
            elements += pred.rows() * joints;

            let grads = backward(&params, &cache, &dloss)?;
            match adam_step(&mut params, &grads, &mut adam) {
                Ok(()) => {}
                Err(Error::Diverged(detail)) => {
                    params = last_finite;
                    stop = StopReason::Diverged { epoch: epoch + 1, detail };
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }

        let rows = (elements / joints) as f64;
        history.loss.push(sq_sum / elements as f64);
        history.per_joint.push(sq_per_joint.iter().map(|s| s / rows).collect());
        history.epoch_seconds.push(started.elapsed().as_secs_f64());
        last_finite = params.clone();

        if config.report_every > 0 && (epoch + 1) % config.report_every == 0 {
            eprintln!(
                "epoch {:>4}/{}: loss {:.6e}",
                epoch + 1,
                config.epochs,
                history.loss[epoch]
            );
        }
        if config.early_stop && epoch + 1 >= 2 * EARLY_STOP_WINDOW {
            // Dropout makes single epochs noisy; compare 20-epoch means so
            // the criterion sees the trend, not the noise.
            let e = epoch + 1;
            let mean = |range: std::ops::Range<usize>| {
                history.loss[range.clone()].iter().sum::<f64>() / range.len() as f64
            };
            let before = mean(e - 2 * EARLY_STOP_WINDOW..e - EARLY_STOP_WINDOW);
            let after = mean(e - EARLY_STOP_WINDOW..e);
            if before - after < EARLY_STOP_IMPROVEMENT {
                stop = StopReason::EarlyStop { epoch: e };
                break;
            }
        }
    }

    Ok(TrainOutput { params, history, normalization, stop })
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

/// Sizes for one gradient-check run. The default is small on purpose:
/// central differences cost two forward passes per parameter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradientCheckConfig {
    pub network: NetworkConfig,
    pub sequence_len: usize,
    /// Central-difference step.
    pub step: f64,
}

impl Default for GradientCheckConfig {
    fn default() -> Self {
        GradientCheckConfig {
            network: NetworkConfig {
                input_size: 7,
                lstm_hidden: 8,
                dense_widths: vec![8, 6, 4, 3, 2, 7],
                activations: vec![
                    crate::network::Activation::Tanh,
                    crate::network::Activation::Elu,
                    crate::network::Activation::Sigmoid,
                    crate::network::Activation::Tanh,
                    crate::network::Activation::Elu,
                    crate::network::Activation::Identity,
                ],
            },
            sequence_len: 5,
            step: 1e-5,
        }
    }
}

/// Outcome of [`gradient_check_suite`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradientCheckReport {
    pub tolerance: f64,
    /// (seed, max relative error) per run.
    pub per_seed: Vec<(u64, f64)>,
    pub max_relative_error: f64,
    pub passed: bool,
}

/// MSE loss of a dropout-off forward pass; the scalar the finite
/// differences probe.
fn scalar_loss(params: &NetworkParams, sequence: &Mat, targets: &Mat) -> Result<f64> {
    let (pred, _) = forward(params, sequence, Dropout::Off)?;
    Ok(mse_loss(&pred, targets)?.0)
}

/// Analytic gradients of the MSE loss with dropout off.
pub fn analytic_gradients(
    params: &NetworkParams,
    sequence: &Mat,
    targets: &Mat,
) -> Result<Gradients> {
    let (pred, cache) = forward(params, sequence, Dropout::Off)?;
    let (_, dloss) = mse_loss(&pred, targets)?;
    backward(params, &cache, &dloss)
}

/// Central-difference gradient of the same loss, flattened in canonical
/// block order. Independent of [`backward`]: only forward passes are used.
pub fn finite_difference_gradients(
    params: &NetworkParams,
    sequence: &Mat,
    targets: &Mat,
    step: f64,
) -> Result<Vec<f64>> {
    let mut probe = params.clone();
    let count = probe.param_count();
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let nudge = |p: &mut NetworkParams, value: f64| {
            let mut blocks = p.blocks_mut();
            let mut idx = k;
            for b in blocks.iter_mut() {
                if idx < b.len() {
                    b[idx] += value;
                    return;
                }
                idx -= b.len();
            }
            unreachable!("parameter index out of range");
        };
        nudge(&mut probe, step);
        let plus = scalar_loss(&probe, sequence, targets)?;
        nudge(&mut probe, -2.0 * step);
        let minus = scalar_loss(&probe, sequence, targets)?;
        nudge(&mut probe, step);
        out.push((plus - minus) / (2.0 * step));
    }
    Ok(out)
}

/// Relative error between two flat gradient vectors. The denominator floor
/// absorbs finite-difference cancellation noise on near-zero entries.
pub fn max_relative_error(analytic: &[f64], reference: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(reference)
        .map(|(&a, &r)| (a - r).abs() / (a.abs() + r.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Runs the finite-difference oracle against the analytic backward pass for
/// every seed, on a random sequence/target pair. Fails when any relative
/// error reaches the tolerance.
pub fn gradient_check_suite(
    config: &GradientCheckConfig,
    seeds: &[u64],
    tolerance: f64,
) -> Result<GradientCheckReport> {
    use rand::Rng;
    config.network.validate()?;
    if config.sequence_len == 0 || seeds.is_empty() {
        return Err(Error::config("gradient check needs a sequence and at least one seed"));
    }
    let out_width = *config.network.dense_widths.last().unwrap();
    let mut per_seed = Vec::with_capacity(seeds.len());
    let mut worst = 0.0f64;
    for &seed in seeds {
        let params = init_params(&config.network, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5eed));
        let sequence = Mat::from_fn(config.sequence_len, config.network.input_size, |_, _| {
            rng.random_range(-1.5..1.5)
        });
        let targets =
            Mat::from_fn(config.sequence_len, out_width, |_, _| rng.random_range(-1.0..1.0));

        let analytic = analytic_gradients(&params, &sequence, &targets)?;
        let flat_analytic: Vec<f64> =
            analytic.blocks().iter().flat_map(|b| b.iter().copied()).collect();
        let fd = finite_difference_gradients(&params, &sequence, &targets, config.step)?;
        let err = max_relative_error(&flat_analytic, &fd);
        worst = worst.max(err);
        per_seed.push((seed, err));
    }
    Ok(GradientCheckReport {
        tolerance,
        per_seed,
        max_relative_error: worst,
        passed: worst < tolerance,
    })
}
