//! The hybrid prediction network: one LSTM layer as temporal feature
//! extractor feeding a stack of dense layers that shrink toward the 7-wide
//! temperature output.
//!
//! Forward and backward passes are written out explicitly. The backward
//! pass is exact reverse accumulation: gradients flow through the dense
//! stack at every timestep and through the full recurrence (no truncation
//! unless the caller windows the sequence), honoring the dropout masks
//! stored during the forward pass.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Normalization;
use crate::error::{Error, Result};
use crate::mat::Mat;

/// Activation kinds used across the dense stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Elu,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp() - 1.0
                }
            }
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative with respect to the pre-activation.
    #[inline]
    pub fn grad(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Identity => 1.0,
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Weights of one LSTM gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    /// hidden x input.
    pub w_input: Mat,
    /// hidden x hidden.
    pub w_recurrent: Mat,
    /// hidden.
    pub bias: Vec<f64>,
}

impl GateParams {
    fn zeros(hidden: usize, input: usize) -> Self {
        GateParams {
            w_input: Mat::zeros(hidden, input),
            w_recurrent: Mat::zeros(hidden, hidden),
            bias: vec![0.0; hidden],
        }
    }
}

/// All four gates of the LSTM cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub input_gate: GateParams,
    pub forget_gate: GateParams,
    pub cell_gate: GateParams,
    pub output_gate: GateParams,
}

impl LstmParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        LstmParams {
            input_gate: GateParams::zeros(hidden, input),
            forget_gate: GateParams::zeros(hidden, input),
            cell_gate: GateParams::zeros(hidden, input),
            output_gate: GateParams::zeros(hidden, input),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.input_gate.w_input.rows()
    }

    pub fn input_size(&self) -> usize {
        self.input_gate.w_input.cols()
    }

    fn gates(&self) -> [&GateParams; 4] {
        [&self.input_gate, &self.forget_gate, &self.cell_gate, &self.output_gate]
    }

    fn gates_mut(&mut self) -> [&mut GateParams; 4] {
        [
            &mut self.input_gate,
            &mut self.forget_gate,
            &mut self.cell_gate,
            &mut self.output_gate,
        ]
    }

    fn validate(&self) -> Result<()> {
        let h = self.hidden_size();
        let d = self.input_size();
        if h == 0 || d == 0 {
            return Err(Error::config("LSTM sizes must be positive"));
        }
        for g in self.gates() {
            if g.w_input.rows() != h
                || g.w_input.cols() != d
                || g.w_recurrent.rows() != h
                || g.w_recurrent.cols() != h
                || g.bias.len() != h
            {
                return Err(Error::config("all four gate weight sets must share shapes"));
            }
        }
        Ok(())
    }
}

/// One dense layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayerParams {
    /// out x in.
    pub weight: Mat,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// Full parameter set of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub lstm: LstmParams,
    pub dense: Vec<DenseLayerParams>,
}

impl NetworkParams {
    pub fn input_size(&self) -> usize {
        self.lstm.input_size()
    }

    pub fn output_size(&self) -> usize {
        self.dense.last().map_or(0, |l| l.weight.rows())
    }

    pub fn validate(&self) -> Result<()> {
        self.lstm.validate()?;
        if self.dense.is_empty() {
            return Err(Error::config("network needs at least one dense layer"));
        }
        let mut width = self.lstm.hidden_size();
        for (i, layer) in self.dense.iter().enumerate() {
            if layer.weight.cols() != width {
                return Err(Error::config(format!(
                    "dense layer {i} expects {} inputs but receives {width}",
                    layer.weight.cols()
                )));
            }
            if layer.weight.rows() == 0 {
                return Err(Error::config(format!("dense layer {i} has zero width")));
            }
            if layer.bias.len() != layer.weight.rows() {
                return Err(Error::config(format!("dense layer {i} bias width mismatch")));
            }
            width = layer.weight.rows();
        }
        // Hidden widths shrink toward the output; the output layer itself is
        // pinned to the target width instead.
        let hidden_widths: Vec<usize> =
            self.dense[..self.dense.len() - 1].iter().map(|l| l.weight.rows()).collect();
        if hidden_widths.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::config("hidden dense widths must be non-increasing"));
        }
        if self.dense.last().map(|l| l.activation) != Some(Activation::Identity) {
            return Err(Error::config("output layer activation must be identity"));
        }
        Ok(())
    }

    /// Parameter blocks in canonical order: the four gates (input, forget,
    /// cell, output) as input-weight/recurrent-weight/bias triples, then
    /// each dense layer as weight/bias. Adam state and flattening both rely
    /// on this order.
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for g in self.lstm.gates() {
            out.push(g.w_input.as_slice());
            out.push(g.w_recurrent.as_slice());
            out.push(g.bias.as_slice());
        }
        for l in &self.dense {
            out.push(l.weight.as_slice());
            out.push(l.bias.as_slice());
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for g in self.lstm.gates_mut() {
            out.push(g.w_input.as_mut_slice());
            out.push(g.w_recurrent.as_mut_slice());
            out.push(g.bias.as_mut_slice());
        }
        for l in &mut self.dense {
            out.push(l.weight.as_mut_slice());
            out.push(l.bias.as_mut_slice());
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Gradients in the same layout as [`NetworkParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub lstm: LstmParams,
    pub dense: Vec<DenseGrads>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weight: Mat,
    pub bias: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        Gradients {
            lstm: LstmParams::zeros(params.lstm.hidden_size(), params.lstm.input_size()),
            dense: params
                .dense
                .iter()
                .map(|l| DenseGrads {
                    weight: Mat::zeros(l.weight.rows(), l.weight.cols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    /// Same canonical block order as [`NetworkParams::blocks`].
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for g in self.lstm.gates() {
            out.push(g.w_input.as_slice());
            out.push(g.w_recurrent.as_slice());
            out.push(g.bias.as_slice());
        }
        for l in &self.dense {
            out.push(l.weight.as_slice());
            out.push(l.bias.as_slice());
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Shape and activation description used to initialize a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_size: usize,
    pub lstm_hidden: usize,
    /// Widths of the dense stack including the output layer (last entry).
    pub dense_widths: Vec<usize>,
    /// One activation per dense layer; the last must be `identity`.
    pub activations: Vec<Activation>,
}

impl NetworkConfig {
    /// Default desk-scale architecture: LSTM hidden 32, dense
    /// 32-24-16-12-8-7 with tanh/elu/sigmoid/tanh/elu hidden activations and
    /// an identity output.
    pub fn with_input(input_size: usize) -> Self {
        NetworkConfig {
            input_size,
            lstm_hidden: 32,
            dense_widths: vec![32, 24, 16, 12, 8, 7],
            activations: vec![
                Activation::Tanh,
                Activation::Elu,
                Activation::Sigmoid,
                Activation::Tanh,
                Activation::Elu,
                Activation::Identity,
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.lstm_hidden == 0 {
            return Err(Error::config("zero-width layer"));
        }
        if self.dense_widths.is_empty() {
            return Err(Error::config("network needs at least one dense layer"));
        }
        if self.dense_widths.iter().any(|&w| w == 0) {
            return Err(Error::config("zero-width layer"));
        }
        if self.activations.len() != self.dense_widths.len() {
            return Err(Error::config(format!(
                "{} activations for {} dense layers",
                self.activations.len(),
                self.dense_widths.len()
            )));
        }
        if self.activations.last() != Some(&Activation::Identity) {
            return Err(Error::config("output layer activation must be identity"));
        }
        let hidden = &self.dense_widths[..self.dense_widths.len() - 1];
        if hidden.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::config("hidden dense widths must be non-increasing"));
        }
        Ok(())
    }
}

/// Glorot-uniform initialization: weights drawn from
/// +-sqrt(6 / (fan_in + fan_out)), zero biases except the forget gate bias,
/// which starts at 1.0 so early training does not forget everything.
/// Deterministic for a fixed seed.
pub fn init_params(config: &NetworkConfig, seed: u64) -> Result<NetworkParams> {
    use rand::SeedableRng;
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let glorot = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        Mat::from_fn(rows, cols, |_, _| rng.random_range(-limit..limit))
    };

    let h = config.lstm_hidden;
    let d = config.input_size;
    let mut lstm = LstmParams::zeros(h, d);
    for gate in lstm.gates_mut() {
        gate.w_input = glorot(h, d, &mut rng);
        gate.w_recurrent = glorot(h, h, &mut rng);
    }
    lstm.forget_gate.bias = vec![1.0; h];

    let mut dense = Vec::with_capacity(config.dense_widths.len());
    let mut fan_in = h;
    for (&width, &activation) in config.dense_widths.iter().zip(&config.activations) {
        dense.push(DenseLayerParams {
            weight: glorot(width, fan_in, &mut rng),
            bias: vec![0.0; width],
            activation,
        });
        fan_in = width;
    }

    let params = NetworkParams { lstm, dense };
    params.validate()?;
    Ok(params)
}

/// Dropout behavior of a forward pass.
pub enum Dropout<'a> {
    /// Inference: deterministic pure function of (params, sequence).
    Off,
    /// Training: inverted dropout on each hidden dense layer input — mask
    /// with keep probability `1 - p`, scale survivors by `1 / (1 - p)`.
    Train { p: f64, rng: &'a mut ChaCha8Rng },
}

/// Per-timestep LSTM intermediates needed for the exact backward pass.
#[derive(Debug, Clone)]
pub struct LstmStepCache {
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub gate_input: Vec<f64>,
    pub gate_forget: Vec<f64>,
    pub gate_cell: Vec<f64>,
    pub gate_output: Vec<f64>,
    pub cell: Vec<f64>,
    pub cell_tanh: Vec<f64>,
}

/// Per-timestep, per-dense-layer intermediates.
#[derive(Debug, Clone)]
pub struct DenseStepCache {
    /// Layer input after the dropout mask was applied.
    pub input: Vec<f64>,
    /// Scale per input element: 0 for dropped, 1/(1-p) for kept; absent when
    /// dropout was off for this layer.
    pub mask: Option<Vec<f64>>,
    /// Pre-activation `W x + b`.
    pub pre: Vec<f64>,
}

/// Everything [`backward`] needs, recorded by [`forward`].
pub struct ForwardCache {
    /// Copy of the input sequence (time x feature).
    pub sequence: Mat,
    pub lstm_steps: Vec<LstmStepCache>,
    /// `dense_steps[t][l]` for timestep `t`, layer `l`.
    pub dense_steps: Vec<Vec<DenseStepCache>>,
}

/// One LSTM cell update. Returns the new hidden state, the new cell state
/// and the intermediates for backpropagation.
pub fn lstm_cell_step(
    params: &LstmParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, LstmStepCache)> {
    let h = params.hidden_size();
    if x.len() != params.input_size() || h_prev.len() != h || c_prev.len() != h {
        return Err(Error::config(format!(
            "LSTM step shapes: input {} (expected {}), h {} / c {} (expected {h})",
            x.len(),
            params.input_size(),
            h_prev.len(),
            c_prev.len()
        )));
    }

    let pre = |gate: &GateParams| {
        let mut z = gate.bias.clone();
        gate.w_input.matvec_acc(x, &mut z);
        gate.w_recurrent.matvec_acc(h_prev, &mut z);
        z
    };
    let gate_input: Vec<f64> = pre(&params.input_gate).iter().map(|&z| sigmoid(z)).collect();
    let gate_forget: Vec<f64> = pre(&params.forget_gate).iter().map(|&z| sigmoid(z)).collect();
    let gate_cell: Vec<f64> = pre(&params.cell_gate).iter().map(|&z| z.tanh()).collect();
    let gate_output: Vec<f64> = pre(&params.output_gate).iter().map(|&z| sigmoid(z)).collect();

    let mut cell = vec![0.0; h];
    let mut cell_tanh = vec![0.0; h];
    let mut hidden = vec![0.0; h];
    for i in 0..h {
        cell[i] = gate_forget[i] * c_prev[i] + gate_input[i] * gate_cell[i];
        cell_tanh[i] = cell[i].tanh();
        hidden[i] = gate_output[i] * cell_tanh[i];
    }

    let cache = LstmStepCache {
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        gate_input,
        gate_forget,
        gate_cell,
        gate_output,
        cell: cell.clone(),
        cell_tanh,
    };
    Ok((hidden, cell, cache))
}

/// Runs the network over a whole sequence. Initial LSTM states are zero.
/// Returns one prediction row per input row plus the backward cache.
pub fn forward(
    params: &NetworkParams,
    sequence: &Mat,
    mut dropout: Dropout,
) -> Result<(Mat, ForwardCache)> {
    params.validate()?;
    if sequence.cols() != params.input_size() {
        return Err(Error::config(format!(
            "sequence has {} features but the network expects {}",
            sequence.cols(),
            params.input_size()
        )));
    }
    if let Dropout::Train { p, .. } = dropout {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::config(format!("dropout probability {p} outside [0, 1)")));
        }
    }

    let steps = sequence.rows();
    let h_size = params.lstm.hidden_size();
    let out_size = params.output_size();
    let mut h = vec![0.0; h_size];
    let mut c = vec![0.0; h_size];
    let mut predictions = Mat::zeros(steps, out_size);
    let mut lstm_steps = Vec::with_capacity(steps);
    let mut dense_steps = Vec::with_capacity(steps);

    for t in 0..steps {
        let (h_new, c_new, lstm_cache) = lstm_cell_step(&params.lstm, sequence.row(t), &h, &c)?;
        h = h_new;
        c = c_new;
        lstm_steps.push(lstm_cache);

        let mut activation = h.clone();
        let mut layer_caches = Vec::with_capacity(params.dense.len());
        let last = params.dense.len() - 1;
        for (l, layer) in params.dense.iter().enumerate() {
            // The output layer is not a hidden layer; its input stays intact.
            let mask = match (&mut dropout, l < last) {
                (Dropout::Train { p, rng }, true) if *p > 0.0 => {
                    let keep = 1.0 - *p;
                    let mask: Vec<f64> = activation
                        .iter()
                        .map(|_| if rng.random::<f64>() < *p { 0.0 } else { 1.0 / keep })
                        .collect();
                    for (a, m) in activation.iter_mut().zip(&mask) {
                        *a *= m;
                    }
                    Some(mask)
                }
                _ => None,
            };

            let mut pre = layer.bias.clone();
            layer.weight.matvec_acc(&activation, &mut pre);
            let out: Vec<f64> = pre.iter().map(|&z| layer.activation.eval(z)).collect();
            layer_caches.push(DenseStepCache { input: activation, mask, pre });
            activation = out;
        }
        predictions.row_mut(t).copy_from_slice(&activation);
        dense_steps.push(layer_caches);
    }

    let cache = ForwardCache { sequence: sequence.clone(), lstm_steps, dense_steps };
    Ok((predictions, cache))
}

/// Exact gradients of a scalar loss with respect to every parameter, given
/// the loss gradient at each prediction. Reverse accumulation runs through
/// the dense stack at each timestep and through the full recurrence.
pub fn backward(
    params: &NetworkParams,
    cache: &ForwardCache,
    dloss_dpred: &Mat,
) -> Result<Gradients> {
    let steps = cache.lstm_steps.len();
    let h_size = params.lstm.hidden_size();
    if dloss_dpred.rows() != steps || dloss_dpred.cols() != params.output_size() {
        return Err(Error::config(format!(
            "upstream gradient is {}x{}, expected {}x{}",
            dloss_dpred.rows(),
            dloss_dpred.cols(),
            steps,
            params.output_size()
        )));
    }
    if cache.sequence.cols() != params.input_size()
        || cache.dense_steps.len() != steps
        || cache.dense_steps.iter().any(|ls| ls.len() != params.dense.len())
        || cache.lstm_steps.iter().any(|s| s.h_prev.len() != h_size)
    {
        return Err(Error::config("cache does not match these parameters"));
    }

    let mut grads = Gradients::zeros_like(params);
    let mut dh_next = vec![0.0; h_size];
    let mut dc_next = vec![0.0; h_size];

    for t in (0..steps).rev() {
        // Dense stack, output layer first.
        let mut d = dloss_dpred.row(t).to_vec();
        for (l, layer) in params.dense.iter().enumerate().rev() {
            let step = &cache.dense_steps[t][l];
            let dpre: Vec<f64> = d
                .iter()
                .zip(&step.pre)
                .map(|(dv, &z)| dv * layer.activation.grad(z))
                .collect();
            grads.dense[l].weight.add_outer(&dpre, &step.input);
            for (gb, dp) in grads.dense[l].bias.iter_mut().zip(&dpre) {
                *gb += dp;
            }
            let mut dinput = vec![0.0; layer.weight.cols()];
            layer.weight.matvec_t_acc(&dpre, &mut dinput);
            if let Some(mask) = &step.mask {
                for (di, m) in dinput.iter_mut().zip(mask) {
                    *di *= m;
                }
            }
            d = dinput;
        }

        // Into the LSTM cell.
        let s = &cache.lstm_steps[t];
        let mut dh = d;
        for (dhv, up) in dh.iter_mut().zip(&dh_next) {
            *dhv += up;
        }

        let mut dz_input = vec![0.0; h_size];
        let mut dz_forget = vec![0.0; h_size];
        let mut dz_cell = vec![0.0; h_size];
        let mut dz_output = vec![0.0; h_size];
        let mut dc = vec![0.0; h_size];
        for i in 0..h_size {
            let do_gate = dh[i] * s.cell_tanh[i];
            dz_output[i] = do_gate * s.gate_output[i] * (1.0 - s.gate_output[i]);
            dc[i] = dh[i] * s.gate_output[i] * (1.0 - s.cell_tanh[i] * s.cell_tanh[i])
                + dc_next[i];
            dz_input[i] = dc[i] * s.gate_cell[i] * s.gate_input[i] * (1.0 - s.gate_input[i]);
            dz_forget[i] = dc[i] * s.c_prev[i] * s.gate_forget[i] * (1.0 - s.gate_forget[i]);
            dz_cell[i] = dc[i] * s.gate_input[i] * (1.0 - s.gate_cell[i] * s.gate_cell[i]);
        }

        let x = cache.sequence.row(t);
        let gate_grads = [
            (&mut grads.lstm.input_gate, &dz_input, &params.lstm.input_gate),
            (&mut grads.lstm.forget_gate, &dz_forget, &params.lstm.forget_gate),
            (&mut grads.lstm.cell_gate, &dz_cell, &params.lstm.cell_gate),
            (&mut grads.lstm.output_gate, &dz_output, &params.lstm.output_gate),
        ];
        dh_next = vec![0.0; h_size];
        for (g, dz, p) in gate_grads {
            g.w_input.add_outer(dz, x);
            g.w_recurrent.add_outer(dz, &s.h_prev);
            for (gb, dzv) in g.bias.iter_mut().zip(dz.iter()) {
                *gb += dzv;
            }
            p.w_recurrent.matvec_t_acc(dz, &mut dh_next);
        }
        for i in 0..h_size {
            dc_next[i] = dc[i] * s.gate_forget[i];
        }
    }

    Ok(grads)
}

// ---------------------------------------------------------------------------
// Model file
// ---------------------------------------------------------------------------

pub const MODEL_FORMAT: &str = "jointherm-model-v1";

/// Self-contained trained model: architecture summary, dropout probability
/// used in training, all weights with explicit shapes, and the
/// normalization needed to reconstruct temperatures in degrees C.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub config: NetworkConfig,
    pub dropout: f64,
    pub params: NetworkParams,
    pub normalization: Normalization,
}

impl ModelFile {
    pub fn new(
        config: NetworkConfig,
        dropout: f64,
        params: NetworkParams,
        normalization: Normalization,
    ) -> Self {
        ModelFile { format: MODEL_FORMAT.to_string(), config, dropout, params, normalization }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != MODEL_FORMAT {
            return Err(Error::data(format!(
                "unsupported model format '{}', expected '{MODEL_FORMAT}'",
                self.format
            )));
        }
        self.config.validate()?;
        self.params.validate()?;
        if self.params.input_size() != self.config.input_size
            || self.params.lstm.hidden_size() != self.config.lstm_hidden
            || self.params.dense.len() != self.config.dense_widths.len()
        {
            return Err(Error::data("model config disagrees with stored weights"));
        }
        if self.normalization.selection.width() != self.params.input_size() {
            return Err(Error::data(format!(
                "normalization covers {} inputs but the network takes {}",
                self.normalization.selection.width(),
                self.params.input_size()
            )));
        }
        Ok(())
    }
}

pub fn save_model(model: &ModelFile, path: &std::path::Path) -> Result<()> {
    model.validate()?;
    let text = serde_json::to_string_pretty(model)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn load_model(path: &std::path::Path) -> Result<ModelFile> {
    let text = std::fs::read_to_string(path)?;
    let model: ModelFile = serde_json::from_str(&text)?;
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{FeatureSelection, Normalization};
    use rand::SeedableRng;

    fn tiny_config() -> NetworkConfig {
        NetworkConfig {
            input_size: 3,
            lstm_hidden: 4,
            dense_widths: vec![4, 3, 2],
            activations: vec![Activation::Tanh, Activation::Elu, Activation::Identity],
        }
    }

    fn random_sequence(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mat::from_fn(rows, cols, |_, _| rng.random_range(-1.5..1.5))
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = NetworkConfig::with_input(7);
        let a = init_params(&cfg, 99).unwrap();
        let b = init_params(&cfg, 99).unwrap();
        assert_eq!(a, b);
        let c = init_params(&cfg, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn forget_gate_bias_starts_at_one() {
        let params = init_params(&NetworkConfig::with_input(7), 1).unwrap();
        assert!(params.lstm.forget_gate.bias.iter().all(|&b| b == 1.0));
        assert!(params.lstm.input_gate.bias.iter().all(|&b| b == 0.0));
        assert!(params.dense.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn weights_respect_the_glorot_bound() {
        let cfg = NetworkConfig::with_input(7);
        let params = init_params(&cfg, 5).unwrap();
        let check = |m: &Mat| {
            let limit = (6.0 / (m.rows() + m.cols()) as f64).sqrt();
            assert!(m.as_slice().iter().all(|w| w.abs() <= limit));
            // And the draw is not degenerate.
            assert!(m.as_slice().iter().any(|w| w.abs() > limit * 0.1));
        };
        for g in params.lstm.gates() {
            check(&g.w_input);
            check(&g.w_recurrent);
        }
        for l in &params.dense {
            check(&l.weight);
        }
    }

    #[test]
    fn zero_width_layer_is_rejected() {
        let mut cfg = tiny_config();
        cfg.dense_widths[1] = 0;
        assert!(matches!(init_params(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn activation_values_at_zero() {
        assert_eq!(Activation::Sigmoid.eval(0.0), 0.5);
        assert_eq!(Activation::Tanh.eval(0.0), 0.0);
        assert_eq!(Activation::Elu.eval(0.0), 0.0);
        assert_eq!(Activation::Identity.eval(0.0), 0.0);
    }

    #[test]
    fn elu_limits() {
        assert!((Activation::Elu.eval(-50.0) + 1.0).abs() < 1e-15);
        assert_eq!(Activation::Elu.eval(3.25), 3.25);
        assert_eq!(Activation::Elu.eval(1e-12), 1e-12);
    }

    #[test]
    fn activation_gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let kinds =
            [Activation::Tanh, Activation::Elu, Activation::Sigmoid, Activation::Identity];
        for _ in 0..100 {
            let x: f64 = rng.random_range(-5.0..5.0);
            for kind in kinds {
                let h = 1e-6;
                let fd = (kind.eval(x + h) - kind.eval(x - h)) / (2.0 * h);
                assert!(
                    (kind.grad(x) - fd).abs() < 1e-8,
                    "{kind:?} at {x}: {} vs {fd}",
                    kind.grad(x)
                );
            }
        }
    }

    #[test]
    fn zero_param_cell_keeps_zero_state() {
        let lstm = LstmParams::zeros(4, 3);
        let (h, c, _) = lstm_cell_step(&lstm, &[1.0, -2.0, 0.5], &[0.0; 4], &[0.0; 4]).unwrap();
        assert_eq!(h, vec![0.0; 4]);
        assert_eq!(c, vec![0.0; 4]);
    }

    #[test]
    fn zero_param_cell_halves_the_cell_state() {
        // All gates sit at sigmoid(0) = 1/2 and the candidate is tanh(0) = 0.
        let lstm = LstmParams::zeros(2, 2);
        let c_prev = [0.8, -0.4];
        let (_, c, _) = lstm_cell_step(&lstm, &[0.3, 0.7], &[0.0; 2], &c_prev).unwrap();
        assert_eq!(c, vec![0.4, -0.2]);
    }

    #[test]
    fn hidden_state_is_bounded_by_one() {
        for seed in 0..20 {
            let cfg = tiny_config();
            let params = init_params(&cfg, seed).unwrap();
            let seq = random_sequence(30, 3, seed + 1000);
            let mut h = vec![0.0; 4];
            let mut c = vec![0.0; 4];
            for t in 0..seq.rows() {
                let (hn, cn, _) = lstm_cell_step(&params.lstm, seq.row(t), &h, &c).unwrap();
                h = hn;
                c = cn;
                assert!(h.iter().all(|v| v.abs() <= 1.0));
            }
        }
    }

    #[test]
    fn cell_step_shape_mismatch_is_config_error() {
        let lstm = LstmParams::zeros(4, 3);
        assert!(matches!(
            lstm_cell_step(&lstm, &[1.0, 2.0], &[0.0; 4], &[0.0; 4]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn zero_lstm_with_dense_biases_gives_composed_constant() {
        // Hidden state stays zero and all weights are zero, so the
        // prediction is the activations composed over the biases alone:
        // layer 1 emits tanh(b1), layer 2 emits b2.
        let params = NetworkParams {
            lstm: LstmParams::zeros(4, 3),
            dense: vec![
                DenseLayerParams {
                    weight: Mat::zeros(3, 4),
                    bias: vec![0.3, -0.2, 1.1],
                    activation: Activation::Tanh,
                },
                DenseLayerParams {
                    weight: Mat::zeros(2, 3),
                    bias: vec![0.5, -1.0],
                    activation: Activation::Identity,
                },
            ],
        };
        let seq = random_sequence(6, 3, 3);
        let (pred, _) = forward(&params, &seq, Dropout::Off).unwrap();
        for t in 0..pred.rows() {
            assert_eq!(pred.row(t), &[0.5, -1.0]);
        }
    }

    #[test]
    fn dropout_zero_equals_off_exactly() {
        let params = init_params(&tiny_config(), 2).unwrap();
        let seq = random_sequence(10, 3, 4);
        let (off, _) = forward(&params, &seq, Dropout::Off).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let (zero, _) = forward(&params, &seq, Dropout::Train { p: 0.0, rng: &mut rng }).unwrap();
        assert_eq!(off, zero);
    }

    #[test]
    fn masked_forward_is_reproducible_for_a_fixed_seed() {
        let params = init_params(&tiny_config(), 2).unwrap();
        let seq = random_sequence(10, 3, 4);
        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            forward(&params, &seq, Dropout::Train { p: 0.1, rng: &mut rng }).unwrap().0
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }

    #[test]
    fn forward_off_is_deterministic() {
        let params = init_params(&tiny_config(), 2).unwrap();
        let seq = random_sequence(25, 3, 4);
        let (a, _) = forward(&params, &seq, Dropout::Off).unwrap();
        let (b, _) = forward(&params, &seq, Dropout::Off).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn feature_width_mismatch_is_config_error() {
        let params = init_params(&tiny_config(), 2).unwrap();
        let seq = random_sequence(10, 5, 4);
        assert!(matches!(forward(&params, &seq, Dropout::Off), Err(Error::Config(_))));
    }

    #[test]
    fn inverted_dropout_preserves_expectation() {
        // Average the masked value of a fixed activation over many draws;
        // inverted scaling keeps the mean within 2%.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let p = 0.1;
        let keep = 1.0 - p;
        let value = 0.8f64;
        let draws = 20_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            let mask = if rng.random::<f64>() < p { 0.0 } else { 1.0 / keep };
            acc += value * mask;
        }
        let mean = acc / draws as f64;
        assert!((mean - value).abs() / value < 0.02, "mean {mean} vs {value}");
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_grads() {
        let params = init_params(&tiny_config(), 6).unwrap();
        let seq = random_sequence(8, 3, 7);
        let (pred, cache) = forward(&params, &seq, Dropout::Off).unwrap();
        let zeros = Mat::zeros(pred.rows(), pred.cols());
        let grads = backward(&params, &cache, &zeros).unwrap();
        for block in grads.blocks() {
            assert!(block.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn backward_rejects_mismatched_cache() {
        let params = init_params(&tiny_config(), 6).unwrap();
        let seq = random_sequence(8, 3, 7);
        let (_, cache) = forward(&params, &seq, Dropout::Off).unwrap();
        let bad = Mat::zeros(5, 2);
        assert!(matches!(backward(&params, &cache, &bad), Err(Error::Config(_))));

        let other = init_params(&NetworkConfig::with_input(3), 6).unwrap();
        let upstream = Mat::zeros(8, other.output_size());
        assert!(matches!(backward(&other, &cache, &upstream), Err(Error::Config(_))));
    }

    #[test]
    fn model_file_round_trips() {
        let cfg = NetworkConfig::with_input(7);
        let params = init_params(&cfg, 13).unwrap();
        let norm = Normalization::identity(FeatureSelection::default());
        let model = ModelFile::new(cfg, 0.1, params, norm);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&model, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(model.params, back.params);
        assert_eq!(model.config, back.config);
        assert_eq!(model.normalization, back.normalization);
    }

    #[test]
    fn model_file_rejects_wrong_format_tag() {
        let cfg = NetworkConfig::with_input(7);
        let params = init_params(&cfg, 13).unwrap();
        let norm = Normalization::identity(FeatureSelection::default());
        let mut model = ModelFile::new(cfg, 0.1, params, norm);
        model.format = "something-else".into();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let text = serde_json::to_string(&model).unwrap();
        std::fs::write(&path, text).unwrap();
        assert!(matches!(load_model(&path), Err(Error::Data(_))));
    }

    #[test]
    fn increasing_hidden_widths_are_rejected() {
        let cfg = NetworkConfig {
            input_size: 3,
            lstm_hidden: 4,
            dense_widths: vec![3, 4, 2],
            activations: vec![Activation::Tanh, Activation::Elu, Activation::Identity],
        };
        assert!(matches!(init_params(&cfg, 0), Err(Error::Config(_))));

        // A wider output layer is fine; only hidden widths must shrink.
        let cfg = NetworkConfig {
            input_size: 3,
            lstm_hidden: 4,
            dense_widths: vec![4, 2, 7],
            activations: vec![Activation::Tanh, Activation::Elu, Activation::Identity],
        };
        assert!(init_params(&cfg, 0).is_ok());
    }
}
