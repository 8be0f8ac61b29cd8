//! Wiretap-channel prediction with a learned error bound.
//!
//! The predicted channel itself is the exact LoS construction from
//! [`crate::channel_models`], evaluated at the predicted eavesdropper
//! position. What this module adds is a small fully-connected network that
//! maps the prediction variances and the two endpoint positions to an upper
//! bound on the squared channel-prediction error, trained offline on
//! worst-case-over-draws labels and consumed online by the robust precoder.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::channel_models::{wiretap_channel, ChannelError, ChannelVec, LinkBudget};
use crate::core_geometry::{UpaLayout, Vec3};

/// Input width of the bound network: three variances plus two positions.
pub const INPUT_WIDTH: usize = 9;

/// Hidden widths of the production bound network.
pub const HIDDEN_WIDTHS: [usize; 3] = [20, 100, 20];

/// Errors from network construction, training, and persistence.
#[derive(Debug, Error)]
pub enum MlpError {
    /// Layer dimensions or normalization scales are inconsistent.
    #[error("invalid network: {0}")]
    Shape(&'static str),
    /// A dataset request that cannot be satisfied.
    #[error("invalid dataset request: {0}")]
    Dataset(&'static str),
    /// Training requires at least one sample.
    #[error("training requires a non-empty dataset")]
    EmptyDataset,
    /// The optimizer produced a non-finite epoch loss.
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    /// Channel construction failed while labeling.
    #[error(transparent)]
    Channel(#[from] ChannelError),
    /// Model or dataset file i/o failed.
    #[error("model file i/o: {0}")]
    Io(#[from] std::io::Error),
    /// A model file had a malformed header or body.
    #[error("model file malformed: {0}")]
    Format(&'static str),
}

/// One affine layer of the bound network.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpLayer {
    /// Output-by-input weight matrix.
    pub weight: DMatrix<f64>,
    /// Per-output bias.
    pub bias: DVector<f64>,
}

/// Feed-forward bound network plus the unit conversions baked in at
/// training time.
///
/// Hidden layers are rectified; the final layer is linear and the emitted
/// bound is clamped at zero. Inputs are divided by `var_scale` (variances)
/// and `pos_scale` (positions) before the first layer; labels are divided by
/// `label_scale` during training and the bound is multiplied back out, so
/// callers always work in raw squared-channel-norm units.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    /// Affine layers, rectified everywhere except after the last.
    pub layers: Vec<MlpLayer>,
    /// Divisor applied to the six position inputs.
    pub pos_scale: f64,
    /// Divisor applied to the three variance inputs.
    pub var_scale: f64,
    /// Divisor applied to labels during training; multiplies the bound back out.
    pub label_scale: f64,
    /// Calibrated additive lift on the clamped output, in normalized label
    /// units; set by [`calibrate_bound`]. A multiplier cannot rescue samples
    /// the net maps to zero, an offset covers them too.
    pub bound_offset: f64,
    /// Manual safety multiplier on the emitted bound.
    pub bound_margin: f64,
}

impl MlpModel {
    /// Production-shaped network (9 → 20 → 100 → 20 → 1) with He-initialized
    /// weights, zero biases, and unit bound margin.
    pub fn new(pos_scale: f64, var_scale: f64, label_scale: f64, rng: &mut impl Rng) -> Self {
        let sizes = [
            INPUT_WIDTH,
            HIDDEN_WIDTHS[0],
            HIDDEN_WIDTHS[1],
            HIDDEN_WIDTHS[2],
            1,
        ];
        Self::with_layers(&sizes, pos_scale, var_scale, label_scale, rng)
            .expect("fixed width chain is consistent")
    }

    /// He-initialized network with an arbitrary width chain.
    pub fn with_layers(
        sizes: &[usize],
        pos_scale: f64,
        var_scale: f64,
        label_scale: f64,
        rng: &mut impl Rng,
    ) -> Result<Self, MlpError> {
        if sizes.len() < 2 {
            return Err(MlpError::Shape("need at least input and output widths"));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(MlpError::Shape("zero-width layer"));
        }
        let layers = sizes.windows(2).map(|w| he_layer(w[1], w[0], rng)).collect();
        let model = Self {
            layers,
            pos_scale,
            var_scale,
            label_scale,
            bound_offset: 0.0,
            bound_margin: 1.0,
        };
        model.validate()?;
        Ok(model)
    }

    /// Width accepted by the first layer.
    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weight.ncols())
    }

    /// Full width chain, input first.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_width()];
        sizes.extend(self.layers.iter().map(|l| l.weight.nrows()));
        sizes
    }

    /// Checks the dimension chain and the normalization scales.
    pub fn validate(&self) -> Result<(), MlpError> {
        if self.layers.is_empty() {
            return Err(MlpError::Shape("no layers"));
        }
        let mut width = self.input_width();
        for layer in &self.layers {
            if layer.weight.ncols() != width {
                return Err(MlpError::Shape("weight columns break the width chain"));
            }
            if layer.bias.len() != layer.weight.nrows() {
                return Err(MlpError::Shape("bias length differs from weight rows"));
            }
            width = layer.weight.nrows();
        }
        if self.layers.last().map_or(0, |l| l.weight.nrows()) != 1 {
            return Err(MlpError::Shape("final layer must emit one output"));
        }
        let scales_ok = [self.pos_scale, self.var_scale, self.label_scale, self.bound_margin]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite());
        if !scales_ok {
            return Err(MlpError::Shape("normalization scales must be positive"));
        }
        if !(self.bound_offset >= 0.0) || !self.bound_offset.is_finite() {
            return Err(MlpError::Shape("bound offset must be non-negative"));
        }
        Ok(())
    }

    /// Writes the model as flat little-endian binary: layer count, width
    /// chain, the four scales, then row-major weight and bias per layer.
    pub fn save(&self, path: &Path) -> Result<(), MlpError> {
        self.validate()?;
        let mut w = BufWriter::new(File::create(path)?);
        write_u64(&mut w, self.layers.len() as u64)?;
        for size in self.layer_sizes() {
            write_u64(&mut w, size as u64)?;
        }
        for value in [
            self.pos_scale,
            self.var_scale,
            self.label_scale,
            self.bound_offset,
            self.bound_margin,
        ] {
            write_f64(&mut w, value)?;
        }
        for layer in &self.layers {
            for r in 0..layer.weight.nrows() {
                for c in 0..layer.weight.ncols() {
                    write_f64(&mut w, layer.weight[(r, c)])?;
                }
            }
            for r in 0..layer.bias.len() {
                write_f64(&mut w, layer.bias[r])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a model written by [`MlpModel::save`], rejecting malformed or
    /// trailing bytes.
    pub fn load(path: &Path) -> Result<Self, MlpError> {
        let mut r = BufReader::new(File::open(path)?);
        let count = read_u64(&mut r)? as usize;
        if count == 0 || count > 1024 {
            return Err(MlpError::Format("implausible layer count"));
        }
        let mut sizes = Vec::with_capacity(count + 1);
        for _ in 0..=count {
            let size = read_u64(&mut r)? as usize;
            if size == 0 || size > 1 << 20 {
                return Err(MlpError::Format("implausible layer width"));
            }
            sizes.push(size);
        }
        let pos_scale = read_f64(&mut r)?;
        let var_scale = read_f64(&mut r)?;
        let label_scale = read_f64(&mut r)?;
        let bound_offset = read_f64(&mut r)?;
        let bound_margin = read_f64(&mut r)?;
        let mut layers = Vec::with_capacity(count);
        for w in sizes.windows(2) {
            let (cols, rows) = (w[0], w[1]);
            let mut weight = DMatrix::zeros(rows, cols);
            for r_idx in 0..rows {
                for c_idx in 0..cols {
                    weight[(r_idx, c_idx)] = read_f64(&mut r)?;
                }
            }
            let mut bias = DVector::zeros(rows);
            for r_idx in 0..rows {
                bias[r_idx] = read_f64(&mut r)?;
            }
            layers.push(MlpLayer { weight, bias });
        }
        if r.read(&mut [0u8])? != 0 {
            return Err(MlpError::Format("trailing bytes"));
        }
        let model =
            Self { layers, pos_scale, var_scale, label_scale, bound_offset, bound_margin };
        model.validate()?;
        Ok(model)
    }
}

/// Predicted wiretap channel together with its learned error bound.
#[derive(Debug, Clone)]
pub struct ChannelPrediction {
    /// Channel at the planned transmitter and predicted eavesdropper positions.
    pub channel: ChannelVec,
    /// Upper bound on the squared channel-prediction error; never negative.
    pub error_bound: f64,
}

/// One training sample in raw units: `(σ²_x, σ²_y, σ²_z, predicted q_e,
/// planned q_b)` against the worst observed squared channel error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSample {
    /// Variances then the two positions, in that order.
    pub input: [f64; INPUT_WIDTH],
    /// Max squared channel-prediction error over the episode's noisy draws.
    pub label: f64,
}

/// Geometry box and sampling counts for offline dataset generation.
#[derive(Debug, Clone, Copy)]
pub struct DatasetSpec {
    /// Lower corner of the position box both endpoints are drawn from.
    pub box_min: Vec3,
    /// Upper corner of the position box.
    pub box_max: Vec3,
    /// Variances are drawn uniformly from `[0, var_max]` per axis.
    pub var_max: f64,
    /// Number of independent geometry draws.
    pub episodes: usize,
    /// Noisy predicted positions per episode; the label maximizes over them.
    pub draws: usize,
    /// Rejection floor on the endpoint separation, matching the deployed
    /// collision-avoidance regime so labels stay off the near-field blow-up.
    pub min_separation: f64,
}

impl DatasetSpec {
    /// Spec with the offline-training defaults: variances up to 10 m² and a
    /// 10 m separation floor.
    pub fn new(box_min: Vec3, box_max: Vec3, episodes: usize, draws: usize) -> Self {
        Self { box_min, box_max, var_max: 10.0, episodes, draws, min_separation: 10.0 }
    }

    /// Diagonal of the position box, the natural position scale.
    pub fn diagonal(&self) -> f64 {
        (self.box_max - self.box_min).norm()
    }

    /// Checks counts, the box orientation, and that the separation floor is
    /// actually attainable inside the box.
    pub fn validate(&self) -> Result<(), MlpError> {
        if self.episodes == 0 || self.draws == 0 {
            return Err(MlpError::Dataset("episodes and draws must be at least 1"));
        }
        if !(self.var_max >= 0.0) || !self.var_max.is_finite() {
            return Err(MlpError::Dataset("variance range must be finite and non-negative"));
        }
        for axis in 0..3 {
            if !(self.box_min[axis] <= self.box_max[axis]) {
                return Err(MlpError::Dataset("box corners are not ordered"));
            }
        }
        if !(self.min_separation >= 0.0) {
            return Err(MlpError::Dataset("separation floor must be non-negative"));
        }
        if self.min_separation >= self.diagonal() {
            return Err(MlpError::Dataset("separation floor exceeds the box diagonal"));
        }
        Ok(())
    }
}

/// Adam hyperparameters and the epoch/batch schedule.
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    /// Optimizer step size.
    pub learning_rate: f64,
    /// First-moment decay.
    pub decay1: f64,
    /// Second-moment decay.
    pub decay2: f64,
    /// Denominator guard.
    pub epsilon: f64,
    /// Minibatch size; the last batch of an epoch may be shorter.
    pub batch_size: usize,
    /// Full passes over the dataset.
    pub epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            decay1: 0.9,
            decay2: 0.999,
            epsilon: 1e-8,
            batch_size: 256,
            epochs: 50,
        }
    }
}

impl TrainConfig {
    /// Rejects schedules the optimizer update is undefined for.
    pub fn validate(&self) -> Result<(), MlpError> {
        let decays_ok = (0.0..1.0).contains(&self.decay1) && (0.0..1.0).contains(&self.decay2);
        let scalars_ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.epsilon > 0.0
            && self.epsilon.is_finite();
        if !decays_ok || !scalars_ok || self.batch_size == 0 || self.epochs == 0 {
            return Err(MlpError::Dataset("invalid optimizer schedule"));
        }
        Ok(())
    }
}

/// Channel at the planned transmitter position toward the predicted
/// eavesdropper position.
///
/// Shares the construction with [`wiretap_channel`], so a perfect prediction
/// reproduces the true channel exactly. Errors on coincident endpoints.
pub fn predict_channel(
    budget: &LinkBudget,
    layout: &UpaLayout,
    planned_b: &Vec3,
    predicted_e: &Vec3,
) -> Result<ChannelVec, ChannelError> {
    wiretap_channel(budget, layout, planned_b, predicted_e)
}

/// Predicted channel bundled with the learned error bound for the same
/// geometry and the given prediction variances.
pub fn predict_with_bound(
    model: &MlpModel,
    budget: &LinkBudget,
    layout: &UpaLayout,
    planned_b: &Vec3,
    predicted_e: &Vec3,
    variance_diag: &Vec3,
) -> Result<ChannelPrediction, ChannelError> {
    let channel = predict_channel(budget, layout, planned_b, predicted_e)?;
    let error_bound = error_bound(model, variance_diag, predicted_e, planned_b);
    Ok(ChannelPrediction { channel, error_bound })
}

/// Forward pass on an already-normalized input, clamped at zero.
///
/// Inference entry points ([`error_bound`]) handle the unit conversion; this
/// is the bare affine-rectifier chain. Panics if the input width differs
/// from the model's first layer.
pub fn mlp_forward(model: &MlpModel, input: &[f64]) -> f64 {
    assert_eq!(input.len(), model.input_width(), "input width mismatch");
    forward_unclamped(&model.layers, &DVector::from_column_slice(input)).max(0.0)
}

/// Upper bound on the squared channel-prediction error, in raw units.
///
/// Normalizes the inputs, runs the network, clamps at zero, lifts by the
/// calibrated offset, and scales back out by `label_scale` and the safety
/// margin. Always finite and non-negative for finite inputs.
pub fn error_bound(
    model: &MlpModel,
    variance_diag: &Vec3,
    predicted_e: &Vec3,
    planned_b: &Vec3,
) -> f64 {
    let raw = [
        variance_diag.x,
        variance_diag.y,
        variance_diag.z,
        predicted_e.x,
        predicted_e.y,
        predicted_e.z,
        planned_b.x,
        planned_b.y,
        planned_b.z,
    ];
    let x = normalize_input(model, &raw);
    (forward_unclamped(&model.layers, &x).max(0.0) + model.bound_offset)
        * model.label_scale
        * model.bound_margin
}

/// Draws `episodes` labeled samples: uniform endpoint pair and variances,
/// then the worst squared channel error over `draws` noisy predicted
/// positions.
///
/// Each episode's noise comes from a child stream seeded off the caller's
/// generator, so matched seeds line up episode-by-episode even when `draws`
/// differs, and a run is bitwise reproducible from its seed.
pub fn generate_dataset(
    spec: &DatasetSpec,
    budget: &LinkBudget,
    layout: &UpaLayout,
    rng: &mut impl Rng,
) -> Result<Vec<TrainSample>, MlpError> {
    spec.validate()?;
    budget.validate()?;
    let mut samples = Vec::with_capacity(spec.episodes);
    for _ in 0..spec.episodes {
        let (q_b, q_e) = draw_separated_pair(spec, rng)?;
        let variance = Vec3::new(
            rng.random_range(0.0..=spec.var_max),
            rng.random_range(0.0..=spec.var_max),
            rng.random_range(0.0..=spec.var_max),
        );
        let mut noise = ChaCha8Rng::seed_from_u64(rng.next_u64());
        let label = episode_label(budget, layout, &q_b, &q_e, &variance, spec.draws, &mut noise)?;
        samples.push(TrainSample {
            input: [
                variance.x, variance.y, variance.z, q_e.x, q_e.y, q_e.z, q_b.x, q_b.y, q_b.z,
            ],
            label,
        });
    }
    Ok(samples)
}

/// Minimizes the squared-error loss with bias-corrected adaptive moments,
/// returning the per-epoch mean minibatch loss (normalized label units).
///
/// The fit targets the raw (unclamped) network output; clamping is an
/// inference-time projection. A non-finite epoch loss aborts with the epoch
/// and value in the error.
pub fn train(
    model: &mut MlpModel,
    dataset: &[TrainSample],
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<Vec<f64>, MlpError> {
    model.validate()?;
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(MlpError::EmptyDataset);
    }
    if model.input_width() != INPUT_WIDTH {
        return Err(MlpError::Shape("training samples are nine-wide"));
    }
    let inputs: Vec<DVector<f64>> =
        dataset.iter().map(|s| normalize_input(model, &s.input)).collect();
    let labels: Vec<f64> = dataset.iter().map(|s| s.label / model.label_scale).collect();

    let mut opt = AdamState::new(&model.layers);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let (loss, grads) = batch_gradients(&model.layers, &inputs, &labels, chunk);
            opt.apply(&mut model.layers, &grads, cfg);
            epoch_loss += loss;
            batches += 1;
        }
        let mean = epoch_loss / batches as f64;
        if !mean.is_finite() {
            return Err(MlpError::Diverged { epoch, loss: mean });
        }
        trace.push(mean);
    }
    Ok(trace)
}

/// Gradients of the mean squared-error loss, shaped like the layers.
#[derive(Debug, Clone)]
pub struct LayerGradients {
    /// Loss gradient with respect to the weight matrix.
    pub weight: DMatrix<f64>,
    /// Loss gradient with respect to the bias.
    pub bias: DVector<f64>,
}

/// Mean loss and its gradients over `samples`, exactly the quantities one
/// optimizer step consumes; exposed so backpropagation can be checked
/// against finite differences of [`batch_loss`] from outside. Panics if the
/// model is not nine-wide; an empty slice gives zero loss and gradients.
pub fn loss_gradients(model: &MlpModel, samples: &[TrainSample]) -> (f64, Vec<LayerGradients>) {
    assert_eq!(model.input_width(), INPUT_WIDTH, "input width mismatch");
    if samples.is_empty() {
        let zeros = model
            .layers
            .iter()
            .map(|l| LayerGradients {
                weight: DMatrix::zeros(l.weight.nrows(), l.weight.ncols()),
                bias: DVector::zeros(l.bias.len()),
            })
            .collect();
        return (0.0, zeros);
    }
    let inputs: Vec<DVector<f64>> =
        samples.iter().map(|s| normalize_input(model, &s.input)).collect();
    let labels: Vec<f64> = samples.iter().map(|s| s.label / model.label_scale).collect();
    let batch: Vec<usize> = (0..samples.len()).collect();
    batch_gradients(&model.layers, &inputs, &labels, &batch)
}

/// Mean squared-error loss of the model on `samples`, in normalized label
/// units; the same objective [`train`] minimizes. Empty input gives 0.
pub fn batch_loss(model: &MlpModel, samples: &[TrainSample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let total: f64 = samples
        .iter()
        .map(|s| {
            let out = forward_unclamped(&model.layers, &normalize_input(model, &s.input));
            let residual = out - s.label / model.label_scale;
            0.5 * residual * residual
        })
        .sum();
    total / samples.len() as f64
}

/// Mean label of `samples`, the natural `label_scale` for a training run;
/// normalizing labels to unit mean keeps the rectifier outputs positive
/// where the data is. Empty input gives 0, which callers must guard.
pub fn mean_label(samples: &[TrainSample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|s| s.label).sum::<f64>() / samples.len() as f64
}

/// Fraction of `samples` whose true label exceeds the emitted bound.
pub fn coverage(model: &MlpModel, samples: &[TrainSample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let violations = samples.iter().filter(|s| s.label > sample_bound(model, s)).count();
    violations as f64 / samples.len() as f64
}

/// Sets `bound_offset` so that at most a `target` fraction of `validation`
/// exceeds the bound, and returns the achieved violation fraction.
///
/// The offset is the `(1 − target)` order statistic of the normalized
/// shortfalls `label/label_scale − clamped output`, floored at zero, so on
/// the calibration set itself the violation count never exceeds the budget.
/// An additive lift covers samples the net maps to zero, which no
/// multiplicative margin can reach.
pub fn calibrate_bound(model: &mut MlpModel, validation: &[TrainSample], target: f64) -> f64 {
    if validation.is_empty() {
        return 0.0;
    }
    let margin = model.bound_margin;
    let mut shortfalls: Vec<f64> = validation
        .iter()
        .map(|s| {
            let out =
                forward_unclamped(&model.layers, &normalize_input(model, &s.input)).max(0.0);
            // Violation needs label > (out + offset)*scale*margin.
            s.label / (model.label_scale * margin) - out
        })
        .collect();
    shortfalls.sort_by(|a, b| a.partial_cmp(b).expect("shortfalls are never NaN"));
    let n = shortfalls.len();
    let allowed = (target.clamp(0.0, 1.0) * n as f64).floor() as usize;
    if allowed < n {
        model.bound_offset = shortfalls[n - 1 - allowed].max(0.0);
    }
    coverage(model, validation)
}

/// Writes `samples` as CSV, one per row, the nine inputs then the label.
pub fn export_csv(samples: &[TrainSample], path: &Path) -> Result<(), MlpError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "var_x,var_y,var_z,pred_e_x,pred_e_y,pred_e_z,plan_b_x,plan_b_y,plan_b_z,label")?;
    for s in samples {
        for v in s.input {
            write!(w, "{},", v)?;
        }
        writeln!(w, "{}", s.label)?;
    }
    w.flush()?;
    Ok(())
}

fn he_layer(rows: usize, cols: usize, rng: &mut impl Rng) -> MlpLayer {
    let std = (2.0 / cols as f64).sqrt();
    let weight = DMatrix::from_fn(rows, cols, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        z * std
    });
    MlpLayer { weight, bias: DVector::zeros(rows) }
}

fn normalize_input(model: &MlpModel, raw: &[f64; INPUT_WIDTH]) -> DVector<f64> {
    let mut x = DVector::zeros(INPUT_WIDTH);
    for i in 0..3 {
        x[i] = raw[i] / model.var_scale;
    }
    for i in 3..INPUT_WIDTH {
        x[i] = raw[i] / model.pos_scale;
    }
    x
}

/// Bare affine-rectifier chain, no output clamp; training fits this value.
fn forward_unclamped(layers: &[MlpLayer], input: &DVector<f64>) -> f64 {
    let mut a = input.clone();
    for (l, layer) in layers.iter().enumerate() {
        let mut z = &layer.weight * &a + &layer.bias;
        if l + 1 < layers.len() {
            z.apply(|v| *v = v.max(0.0));
        }
        a = z;
    }
    a[0]
}

fn sample_bound(model: &MlpModel, s: &TrainSample) -> f64 {
    (forward_unclamped(&model.layers, &normalize_input(model, &s.input)).max(0.0)
        + model.bound_offset)
        * model.label_scale
        * model.bound_margin
}

fn draw_separated_pair(spec: &DatasetSpec, rng: &mut impl Rng) -> Result<(Vec3, Vec3), MlpError> {
    let draw_point = |rng: &mut dyn rand::RngCore| {
        Vec3::new(
            rng.random_range(spec.box_min.x..=spec.box_max.x),
            rng.random_range(spec.box_min.y..=spec.box_max.y),
            rng.random_range(spec.box_min.z..=spec.box_max.z),
        )
    };
    for _ in 0..10_000 {
        let q_b = draw_point(rng);
        let q_e = draw_point(rng);
        if (q_b - q_e).norm() >= spec.min_separation {
            return Ok((q_b, q_e));
        }
    }
    Err(MlpError::Dataset("separation floor rejected too many draws"))
}

/// Worst squared channel error over `draws` noisy predicted positions.
///
/// A draw landing exactly on the transmitter has no channel; it is retaken,
/// which the coupled-stream tests tolerate because the retake consumes the
/// same child stream.
fn episode_label(
    budget: &LinkBudget,
    layout: &UpaLayout,
    q_b: &Vec3,
    q_e: &Vec3,
    variance: &Vec3,
    draws: usize,
    noise: &mut ChaCha8Rng,
) -> Result<f64, MlpError> {
    let truth = wiretap_channel(budget, layout, q_b, q_e)?;
    let sigma = Vec3::new(variance.x.sqrt(), variance.y.sqrt(), variance.z.sqrt());
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let guess = loop {
            let offset = Vec3::new(
                sigma.x * noise.sample::<f64, _>(StandardNormal),
                sigma.y * noise.sample::<f64, _>(StandardNormal),
                sigma.z * noise.sample::<f64, _>(StandardNormal),
            );
            match wiretap_channel(budget, layout, q_b, &(q_e + offset)) {
                Ok(channel) => break channel,
                Err(ChannelError::Geometry(_)) => continue,
                Err(other) => return Err(other.into()),
            }
        };
        let err = (&truth.coefficients - &guess.coefficients).norm_squared();
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Mean loss and mean loss gradients of the batch rows of `inputs`.
fn batch_gradients(
    layers: &[MlpLayer],
    inputs: &[DVector<f64>],
    labels: &[f64],
    batch: &[usize],
) -> (f64, Vec<LayerGradients>) {
    let mut grads: Vec<LayerGradients> = layers
        .iter()
        .map(|l| LayerGradients {
            weight: DMatrix::zeros(l.weight.nrows(), l.weight.ncols()),
            bias: DVector::zeros(l.bias.len()),
        })
        .collect();
    let mut loss = 0.0;
    for &i in batch {
        let mut pre: Vec<DVector<f64>> = Vec::with_capacity(layers.len());
        let mut act: Vec<DVector<f64>> = Vec::with_capacity(layers.len() + 1);
        act.push(inputs[i].clone());
        for (l, layer) in layers.iter().enumerate() {
            let z = &layer.weight * act.last().expect("activation stack is non-empty")
                + &layer.bias;
            let a = if l + 1 < layers.len() { z.map(|v| v.max(0.0)) } else { z.clone() };
            pre.push(z);
            act.push(a);
        }
        let residual = act.last().expect("activation stack is non-empty")[0] - labels[i];
        loss += 0.5 * residual * residual;
        // delta holds dL/dz of the current layer; the output layer is linear.
        let mut delta = DVector::from_element(1, residual);
        for l in (0..layers.len()).rev() {
            grads[l].weight += &delta * act[l].transpose();
            grads[l].bias += &delta;
            if l > 0 {
                let mut back = layers[l].weight.transpose() * &delta;
                for (v, z) in back.iter_mut().zip(pre[l - 1].iter()) {
                    if *z <= 0.0 {
                        *v = 0.0;
                    }
                }
                delta = back;
            }
        }
    }
    let scale = 1.0 / batch.len() as f64;
    for g in &mut grads {
        g.weight *= scale;
        g.bias *= scale;
    }
    (loss * scale, grads)
}

/// First/second moment accumulators with bias-corrected updates.
struct AdamState {
    m: Vec<LayerGradients>,
    v: Vec<LayerGradients>,
    step: u64,
}

impl AdamState {
    fn new(layers: &[MlpLayer]) -> Self {
        let zeros = || -> Vec<LayerGradients> {
            layers
                .iter()
                .map(|l| LayerGradients {
                    weight: DMatrix::zeros(l.weight.nrows(), l.weight.ncols()),
                    bias: DVector::zeros(l.bias.len()),
                })
                .collect()
        };
        Self { m: zeros(), v: zeros(), step: 0 }
    }

    fn apply(&mut self, layers: &mut [MlpLayer], grads: &[LayerGradients], cfg: &TrainConfig) {
        self.step += 1;
        let c1 = 1.0 - cfg.decay1.powi(self.step as i32);
        let c2 = 1.0 - cfg.decay2.powi(self.step as i32);
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = cfg.decay1 * *m + (1.0 - cfg.decay1) * g;
            *v = cfg.decay2 * *v + (1.0 - cfg.decay2) * g * g;
            *p -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
        };
        for (l, layer) in layers.iter_mut().enumerate() {
            for ((p, &g), (m, v)) in layer
                .weight
                .iter_mut()
                .zip(grads[l].weight.iter())
                .zip(self.m[l].weight.iter_mut().zip(self.v[l].weight.iter_mut()))
            {
                update(p, g, m, v);
            }
            for ((p, &g), (m, v)) in layer
                .bias
                .iter_mut()
                .zip(grads[l].bias.iter())
                .zip(self.m[l].bias.iter_mut().zip(self.v[l].bias.iter_mut()))
            {
                update(p, g, m, v);
            }
        }
    }
}

fn write_u64(w: &mut impl Write, value: u64) -> Result<(), MlpError> {
    w.write_all(&value.to_le_bytes())?;
    Ok(())
}

fn write_f64(w: &mut impl Write, value: f64) -> Result<(), MlpError> {
    w.write_all(&value.to_le_bytes())?;
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64, MlpError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64(r: &mut impl Read) -> Result<f64, MlpError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}
