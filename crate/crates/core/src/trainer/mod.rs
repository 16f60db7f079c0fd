//! Deterministic toy-scale training of an embedding MLP under the margin
//! losses.
//!
//! One iteration: embed the batch, compute cosines against the classifier,
//! run the loss forward, push gradients back through the cosine layer, the
//! embedding normalization and the MLP, take an SGD-with-momentum step
//! (re-projecting classifier columns to unit norm), then fold the batch
//! statistic into the curriculum EMA. The trace records one row per
//! iteration, and identical configs replay bit for bit.

mod checkpoint;
mod trace;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use trace::{TraceRecord, TrainTrace, TRACE_HEADER};

use crate::curriculum::{batch_statistic, CurriculumState, MomentumPlacement, StatisticKind};
use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};
use crate::margin_losses::{forward, gradient_modulation, CosineBatch, LossOutput, LossVariant, VariantKind};
use crate::numerics::{cosine_batch, l2_norm, l2_normalize, ClassifierMatrix, Matrix};
use crate::rng::{stream_rng, StreamId};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

/// Fully connected layer computing `act(x W^T + b)`; `weights` is
/// `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }
}

/// The embedding MLP plus the classifier column matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<DenseLayer>,
    pub classifier: ClassifierMatrix,
}

impl ModelParams {
    /// Uniform Glorot weights, zero biases, random unit classifier columns.
    /// Hidden layers use ReLU; the final layer is linear (its output is
    /// normalized, so a ReLU there would pin embeddings to one orthant).
    pub fn init(
        input_dim: usize,
        hidden_dims: &[usize],
        embed_dim: usize,
        num_classes: usize,
        seed: u64,
    ) -> Result<ModelParams> {
        if input_dim == 0 || embed_dim == 0 || num_classes < 2 || hidden_dims.contains(&0) {
            return Err(Error::InvalidInput(format!(
                "bad architecture: input {input_dim}, hidden {hidden_dims:?}, embed {embed_dim}, classes {num_classes}"
            )));
        }
        let mut rng = stream_rng(seed, StreamId::ParamInit, 0);
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden_dims);
        dims.push(embed_dim);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights = Matrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-bound..bound));
            layers.push(DenseLayer {
                weights,
                biases: vec![0.0; fan_out],
                activation: Activation::Relu,
            });
        }
        layers.last_mut().unwrap().activation = Activation::Identity;
        let classifier = ClassifierMatrix::random(embed_dim, num_classes, &mut rng)?;
        Ok(ModelParams { layers, classifier })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.layers.last().unwrap().output_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.num_classes()
    }

    pub fn hidden_dims(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(|l| l.output_dim()).collect()
    }
}

/// One tensor per parameter group; used for both gradients and momentum
/// buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensors {
    pub layer_weights: Vec<Matrix>,
    pub layer_biases: Vec<Vec<f64>>,
    pub classifier: Matrix,
}

pub type Gradients = ParamTensors;
pub type Velocity = ParamTensors;

impl ParamTensors {
    pub fn zeros_like(params: &ModelParams) -> ParamTensors {
        ParamTensors {
            layer_weights: params
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.output_dim(), l.input_dim()))
                .collect(),
            layer_biases: params.layers.iter().map(|l| vec![0.0; l.output_dim()]).collect(),
            classifier: Matrix::zeros(params.classifier.embedding_dim(), params.classifier.num_classes()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layer_weights.iter().all(Matrix::is_finite)
            && self.layer_biases.iter().flatten().all(|x| x.is_finite())
            && self.classifier.is_finite()
    }

    fn shape_matches(&self, params: &ModelParams) -> bool {
        self.layer_weights.len() == params.layers.len()
            && self
                .layer_weights
                .iter()
                .zip(&params.layers)
                .all(|(m, l)| m.rows() == l.output_dim() && m.cols() == l.input_dim())
            && self
                .layer_biases
                .iter()
                .zip(&params.layers)
                .all(|(b, l)| b.len() == l.output_dim())
            && self.classifier.rows() == params.classifier.embedding_dim()
            && self.classifier.cols() == params.classifier.num_classes()
    }
}

fn default_hidden_dims() -> Vec<usize> {
    vec![32]
}

fn default_embed_dim() -> usize {
    16
}

fn default_curriculum_momentum() -> f64 {
    0.99
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Optimizer momentum (classical, velocity form).
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    /// Epochs at which the learning rate is multiplied by
    /// `lr_decay_factor` (1-based; each reached milestone applies once).
    #[serde(default)]
    pub lr_decay_epochs: Vec<u32>,
    #[serde(default = "one")]
    pub lr_decay_factor: f64,
    pub epochs: u32,
    pub batch_size: usize,
    pub seed: u64,
    pub variant: LossVariant,
    #[serde(default)]
    pub statistic_kind: StatisticKind,
    #[serde(default = "default_curriculum_momentum")]
    pub curriculum_momentum: f64,
    #[serde(default)]
    pub momentum_placement: MomentumPlacement,
    #[serde(default = "default_hidden_dims")]
    pub hidden_dims: Vec<usize>,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
}

fn one() -> f64 {
    1.0
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !self.momentum.is_finite() || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidInput(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::InvalidInput(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if !self.lr_decay_factor.is_finite() || self.lr_decay_factor <= 0.0 || self.lr_decay_factor > 1.0 {
            return Err(Error::InvalidInput(format!(
                "lr_decay_factor must be in (0, 1], got {}",
                self.lr_decay_factor
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidInput("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch_size must be at least 1".into()));
        }
        if self.embed_dim < 2 {
            return Err(Error::InvalidInput(format!(
                "embed_dim must be at least 2, got {}",
                self.embed_dim
            )));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::InvalidInput("hidden_dims must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.curriculum_momentum) {
            return Err(Error::InvalidInput(format!(
                "curriculum_momentum must be in [0, 1], got {}",
                self.curriculum_momentum
            )));
        }
        self.variant.validate()
    }

    /// Learning rate in force during `epoch` (1-based): the base rate times
    /// `lr_decay_factor` for every milestone at or before the epoch.
    pub fn learning_rate_at(&self, epoch: u32) -> f64 {
        let hits = self.lr_decay_epochs.iter().filter(|&&e| epoch >= e).count();
        self.learning_rate * self.lr_decay_factor.powi(hits as i32)
    }
}

/// Intermediate state of one embedding forward pass, kept for backprop.
struct ForwardCache {
    /// Input to each layer (`layer_inputs[0]` is the batch input).
    layer_inputs: Vec<Matrix>,
    /// Pre-activation of each layer.
    pre_activations: Vec<Matrix>,
    /// Euclidean norm of each final-layer output row.
    raw_norms: Vec<f64>,
    embeddings: Matrix,
}

fn forward_embed_cached(params: &ModelParams, inputs: &Matrix) -> Result<ForwardCache> {
    if inputs.cols() != params.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "inputs have dimension {}, model expects {}",
            inputs.cols(),
            params.input_dim()
        )));
    }
    if !inputs.is_finite() {
        return Err(Error::InvalidInput("non-finite input entry".into()));
    }
    let mut layer_inputs = Vec::with_capacity(params.layers.len());
    let mut pre_activations = Vec::with_capacity(params.layers.len());
    let mut x = inputs.clone();
    for layer in &params.layers {
        let mut z = x.matmul(&layer.weights.transpose())?;
        for i in 0..z.rows() {
            for (j, &b) in layer.biases.iter().enumerate() {
                z.set(i, j, z.get(i, j) + b);
            }
        }
        let a = match layer.activation {
            Activation::Identity => z.clone(),
            Activation::Relu => z.map(|v| v.max(0.0)),
        };
        layer_inputs.push(x);
        pre_activations.push(z);
        x = a;
    }
    let mut embeddings = Matrix::zeros(x.rows(), x.cols());
    let mut raw_norms = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let row = x.row(i);
        let unit = l2_normalize(row).map_err(|_| {
            Error::DegenerateInput(format!("zero-norm embedding for sample {i}"))
        })?;
        embeddings.row_mut(i).copy_from_slice(&unit);
        raw_norms.push(l2_norm(row));
    }
    Ok(ForwardCache {
        layer_inputs,
        pre_activations,
        raw_norms,
        embeddings,
    })
}

/// Embed a batch of inputs: MLP forward pass, then each output row scaled to
/// unit norm. A zero-norm row is an error naming the sample.
pub fn forward_embed(params: &ModelParams, inputs: &Matrix) -> Result<Matrix> {
    Ok(forward_embed_cached(params, inputs)?.embeddings)
}

/// Gradients of all model parameters given the loss gradient with respect
/// to the unit embeddings and the classifier columns.
fn backprop(
    params: &ModelParams,
    cache: &ForwardCache,
    grad_embeddings: &Matrix,
    grad_classifier: Matrix,
) -> Result<Gradients> {
    // Through y = x / |x|: dL/dx = (g - (g . y) y) / |x|.
    let b = grad_embeddings.rows();
    let d = grad_embeddings.cols();
    let mut g = Matrix::zeros(b, d);
    for i in 0..b {
        let y = cache.embeddings.row(i);
        let gi = grad_embeddings.row(i);
        let gy = crate::numerics::dot(gi, y);
        let norm = cache.raw_norms[i];
        for j in 0..d {
            g.set(i, j, (gi[j] - gy * y[j]) / norm);
        }
    }

    let mut layer_weights = vec![Matrix::zeros(0, 0); params.layers.len()];
    let mut layer_biases = vec![Vec::new(); params.layers.len()];
    for (l, layer) in params.layers.iter().enumerate().rev() {
        let delta = match layer.activation {
            Activation::Identity => g,
            Activation::Relu => {
                let z = &cache.pre_activations[l];
                Matrix::from_fn(g.rows(), g.cols(), |i, j| {
                    if z.get(i, j) > 0.0 {
                        g.get(i, j)
                    } else {
                        0.0
                    }
                })
            }
        };
        layer_weights[l] = delta.transpose().matmul(&cache.layer_inputs[l])?;
        let mut bias_grad = vec![0.0; layer.output_dim()];
        for i in 0..delta.rows() {
            for (j, bg) in bias_grad.iter_mut().enumerate() {
                *bg += delta.get(i, j);
            }
        }
        layer_biases[l] = bias_grad;
        g = delta.matmul(&layer.weights)?;
    }

    Ok(Gradients {
        layer_weights,
        layer_biases,
        classifier: grad_classifier,
    })
}

/// One SGD step with classical momentum and decoupled-from-biases weight
/// decay. Classifier columns are renormalized to unit length afterwards;
/// the momentum buffer is not projected.
pub fn sgd_step(
    params: ModelParams,
    grads: &Gradients,
    mut velocity: Velocity,
    config: &TrainConfig,
    epoch: u32,
) -> Result<(ModelParams, Velocity)> {
    if !grads.shape_matches(&params) || !velocity.shape_matches(&params) {
        return Err(Error::ShapeMismatch(
            "gradient or velocity shape does not match parameters".into(),
        ));
    }
    if !grads.is_finite() {
        return Err(Error::NumericalFailure("non-finite gradient".into()));
    }
    let lr = config.learning_rate_at(epoch);
    let mu = config.momentum;
    let wd = config.weight_decay;

    let mut layers = params.layers;
    for (l, layer) in layers.iter_mut().enumerate() {
        let vw = velocity.layer_weights[l].as_mut_slice();
        let gw = grads.layer_weights[l].as_slice();
        let w = layer.weights.as_mut_slice();
        for k in 0..w.len() {
            vw[k] = mu * vw[k] + gw[k] + wd * w[k];
            w[k] -= lr * vw[k];
        }
        let vb = &mut velocity.layer_biases[l];
        let gb = &grads.layer_biases[l];
        for k in 0..layer.biases.len() {
            vb[k] = mu * vb[k] + gb[k];
            layer.biases[k] -= lr * vb[k];
        }
    }

    let mut raw = params.classifier.matrix().clone();
    {
        let vc = velocity.classifier.as_mut_slice();
        let gc = grads.classifier.as_slice();
        let wc = raw.as_mut_slice();
        for k in 0..wc.len() {
            vc[k] = mu * vc[k] + gc[k] + wd * wc[k];
            wc[k] -= lr * vc[k];
        }
    }
    let classifier = ClassifierMatrix::from_unnormalized(raw)?;
    Ok((ModelParams { layers, classifier }, velocity))
}

/// The shuffled train-row order for an epoch, derivable without replaying
/// earlier epochs.
pub fn epoch_order(seed: u64, epoch: u32, train_indices: &[usize]) -> Vec<usize> {
    let mut order = train_indices.to_vec();
    order.shuffle(&mut stream_rng(seed, StreamId::EpochShuffle, epoch as u64));
    order
}

/// Gradient coefficient range over the hard pairs of a batch; `(1, 1)` when
/// nothing was hard (or the variant does not mine).
fn modulation_range(batch: &CosineBatch, out: &LossOutput, variant: &LossVariant, t_eff: f64) -> (f64, f64) {
    if !variant.mines_hard_samples() {
        return (1.0, 1.0);
    }
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut any = false;
    for i in 0..batch.batch_size() {
        for j in 0..batch.num_classes() {
            if out.is_hard(i, j) {
                let m = match variant.kind {
                    VariantKind::MvArcSoftmax => t_eff,
                    VariantKind::CurricularFace => gradient_modulation(batch.cosines().get(i, j), t_eff),
                    _ => unreachable!(),
                };
                min = min.min(m);
                max = max.max(m);
                any = true;
            }
        }
    }
    if any {
        (min, max)
    } else {
        (1.0, 1.0)
    }
}

/// Train from a fresh initialization. Returns the final parameters and the
/// full per-iteration trace.
pub fn train(config: &TrainConfig, dataset: &LabeledDataset) -> Result<(ModelParams, TrainTrace)> {
    let (ckpt, trace) = train_run(config, dataset, None)?;
    Ok((ckpt.params, trace))
}

/// Continue a checkpointed run under the same config. The trace covers only
/// the remaining iterations (`k` keeps counting globally), and the result
/// matches an uninterrupted run bit for bit.
pub fn resume(
    config: &TrainConfig,
    dataset: &LabeledDataset,
    checkpoint: Checkpoint,
) -> Result<(ModelParams, TrainTrace)> {
    let (ckpt, trace) = train_run(config, dataset, Some(checkpoint))?;
    Ok((ckpt.params, trace))
}

/// Full-state form of [`train`]/[`resume`]: the returned [`Checkpoint`]
/// carries the final parameters, curriculum, and momentum buffers, so it can
/// be saved and later resumed with no drift.
pub fn train_run(
    config: &TrainConfig,
    dataset: &LabeledDataset,
    from: Option<Checkpoint>,
) -> Result<(Checkpoint, TrainTrace)> {
    config.validate()?;
    if dataset.num_classes() < 2 {
        return Err(Error::InvalidInput("training needs at least 2 classes".into()));
    }
    let (params, velocity, curriculum) = match from {
        None => {
            let params = ModelParams::init(
                dataset.input_dim(),
                &config.hidden_dims,
                config.embed_dim,
                dataset.num_classes(),
                config.seed,
            )?;
            let velocity = Velocity::zeros_like(&params);
            let curriculum = CurriculumState::new(
                config.curriculum_momentum,
                config.statistic_kind,
                config.momentum_placement,
            )?;
            (params, velocity, curriculum)
        }
        Some(ckpt) => {
            let params = ckpt.params;
            if params.input_dim() != dataset.input_dim()
                || params.num_classes() != dataset.num_classes()
                || params.embed_dim() != config.embed_dim
                || params.hidden_dims() != config.hidden_dims
            {
                return Err(Error::InvalidInput(
                    "checkpoint architecture does not match config and dataset".into(),
                ));
            }
            let cur = ckpt.curriculum;
            if cur.momentum() != config.curriculum_momentum
                || cur.statistic_kind() != config.statistic_kind
                || cur.placement() != config.momentum_placement
            {
                return Err(Error::InvalidInput(
                    "checkpoint curriculum settings do not match config".into(),
                ));
            }
            let velocity = match ckpt.velocity {
                Some(v) => {
                    if !v.shape_matches(&params) {
                        return Err(Error::InvalidInput(
                            "checkpoint velocity shape does not match".into(),
                        ));
                    }
                    v
                }
                None => Velocity::zeros_like(&params),
            };
            (params, velocity, cur)
        }
    };
    run_loop(config, dataset, params, velocity, curriculum)
}

fn run_loop(
    config: &TrainConfig,
    dataset: &LabeledDataset,
    mut params: ModelParams,
    mut velocity: Velocity,
    mut curriculum: CurriculumState,
) -> Result<(Checkpoint, TrainTrace)> {
    let train_indices = dataset.train_indices();
    if train_indices.is_empty() {
        return Err(Error::DegenerateInput("no train rows".into()));
    }
    let steps_per_epoch = train_indices.len().div_ceil(config.batch_size);
    let total_steps = config.epochs as u64 * steps_per_epoch as u64;
    let done = curriculum.iteration();
    if done > total_steps {
        return Err(Error::InvalidInput(format!(
            "checkpoint is at iteration {done}, beyond the configured {total_steps}"
        )));
    }
    let start_epoch = (done / steps_per_epoch as u64) as u32 + 1;
    let skip_batches = (done % steps_per_epoch as u64) as usize;

    let mut trace = TrainTrace::new();
    for epoch in start_epoch..=config.epochs {
        let order = epoch_order(config.seed, epoch, &train_indices);
        let lr = config.learning_rate_at(epoch);
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            if epoch == start_epoch && bi < skip_batches {
                continue;
            }
            let k = curriculum.iteration() + 1;
            let step = || -> Result<(ModelParams, Velocity, CurriculumState, TraceRecord)> {
                let (inputs, labels) = dataset.gather(chunk);
                let cache = forward_embed_cached(&params, &inputs)?;
                let cosines = cosine_batch(&cache.embeddings, &params.classifier)?;
                let batch = CosineBatch::new(cosines, labels)?;
                let t_pre = curriculum.t();
                let out = forward(&batch, &config.variant, t_pre)?;

                // Same formulas as the standalone backward op, reusing the
                // forward output already in hand.
                let grad_embeddings = out.grad_cosines.matmul(&params.classifier.matrix().transpose())?;
                let grad_classifier = cache.embeddings.transpose().matmul(&out.grad_cosines)?;
                let grads = backprop(&params, &cache, &grad_embeddings, grad_classifier)?;

                let (new_params, new_velocity) =
                    sgd_step(params.clone(), &grads, velocity.clone(), config, epoch)?;
                let r = batch_statistic(&batch, &out.prob_gt, config.statistic_kind)?;
                let new_curriculum = curriculum.update(r)?;
                let t_eff = config.variant.resolve_t(t_pre);
                let (m_min, m_max) = modulation_range(&batch, &out, &config.variant, t_eff);
                let record = TraceRecord {
                    k,
                    loss: out.loss,
                    t: new_curriculum.t(),
                    r,
                    hard_fraction: out.hard_sample_fraction(),
                    m_min,
                    m_max,
                    lr,
                };
                Ok((new_params, new_velocity, new_curriculum, record))
            };
            let (p, v, c, record) = step().map_err(|e| e.at_iteration(k))?;
            params = p;
            velocity = v;
            curriculum = c;
            trace.push(record);
        }
    }
    Ok((
        Checkpoint {
            params,
            curriculum,
            velocity: Some(velocity),
        },
        trace,
    ))
}
