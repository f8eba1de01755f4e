//! Histogram-to-accuracy regressor: a network of three fully connected
//! layers (rectifier hidden activations, logistic output) trained with
//! mini-batch Adam on mean squared error.
//!
//! Training is deterministic given the seed: samples are first brought into
//! a canonical order (sorted by bins, then target), so the result does not
//! depend on the order in which callers supply them, and every shuffle and
//! weight draw comes from one seeded generator.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bop::BopHistogram;
use crate::codebook::Fingerprint;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Hidden layer widths; `None` derives them from the input width K as
    /// `(max(64, K), max(32, K/2))`.
    pub hidden_dims: Option<(usize, usize)>,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 32,
            seed: 0,
            hidden_dims: None,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "epochs and batch_size must be at least 1".into(),
            ));
        }
        if let Some((h1, h2)) = self.hidden_dims {
            if h1 == 0 || h2 == 0 {
                return Err(Error::InvalidArgument(
                    "hidden widths must be at least 1".into(),
                ));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }

    fn resolve_hidden(&self, k: usize) -> (usize, usize) {
        self.hidden_dims
            .unwrap_or((k.max(64), (k / 2).max(32)))
    }
}

/// Three fully connected layers mapping a K-bin histogram to an accuracy
/// estimate in (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct MlpModel<F: Real> {
    /// `[K, h1, h2, 1]`
    layer_dims: Vec<usize>,
    /// One `d_in x d_out` row-major matrix per layer.
    weights: Vec<Vec<F>>,
    biases: Vec<Vec<F>>,
    input_fingerprint: Fingerprint,
}

impl<F: Real> MlpModel<F> {
    fn init(k: usize, hidden: (usize, usize), fingerprint: Fingerprint, rng: &mut ChaCha8Rng) -> Self {
        let dims = vec![k, hidden.0, hidden.1, 1];
        let mut weights = Vec::with_capacity(3);
        let mut biases = Vec::with_capacity(3);
        for l in 0..3 {
            let (d_in, d_out) = (dims[l], dims[l + 1]);
            let bound = (6.0 / (d_in + d_out) as f64).sqrt();
            let w = (0..d_in * d_out)
                .map(|_| F::of((rng.random::<f64>() * 2.0 - 1.0) * bound))
                .collect();
            weights.push(w);
            biases.push(vec![F::zero(); d_out]);
        }
        Self {
            layer_dims: dims,
            weights,
            biases,
            input_fingerprint: fingerprint,
        }
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_fingerprint(&self) -> Fingerprint {
        self.input_fingerprint
    }

    pub fn n_parameters(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    fn check_finite(&self) -> Result<()> {
        let ok = self
            .weights
            .iter()
            .chain(self.biases.iter())
            .flatten()
            .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Numerical("model parameters diverged".into()))
        }
    }

    /// Forward pass keeping pre-activations for backpropagation.
    fn forward_full(&self, input: &[F]) -> ForwardPass<F> {
        let mut activations: Vec<Vec<F>> = vec![input.to_vec()];
        let mut pre_activations: Vec<Vec<F>> = Vec::with_capacity(3);
        for l in 0..3 {
            let (d_in, d_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let prev = &activations[l];
            let mut z = self.biases[l].clone();
            for i in 0..d_in {
                let a = prev[i];
                if a == F::zero() {
                    continue;
                }
                let row = &self.weights[l][i * d_out..(i + 1) * d_out];
                for (zo, w) in z.iter_mut().zip(row) {
                    *zo += a * *w;
                }
            }
            let act: Vec<F> = if l < 2 {
                z.iter().map(|v| v.max(F::zero())).collect() // rectifier
            } else {
                z.iter().map(|v| logistic(*v)).collect()
            };
            pre_activations.push(z);
            activations.push(act);
        }
        ForwardPass {
            activations,
            pre_activations,
        }
    }

    fn output(&self, input: &[F]) -> F {
        self.forward_full(input).activations[3][0]
    }
}

fn logistic<F: Real>(z: F) -> F {
    F::one() / (F::one() + (-z).exp())
}

struct ForwardPass<F: Real> {
    /// Input plus the activation of each layer (length 4).
    activations: Vec<Vec<F>>,
    /// Pre-activation of each layer (length 3).
    pre_activations: Vec<Vec<F>>,
}

/// Per-parameter gradients, same shapes as the model.
struct Gradients<F: Real> {
    weights: Vec<Vec<F>>,
    biases: Vec<Vec<F>>,
}

impl<F: Real> Gradients<F> {
    fn zeros(model: &MlpModel<F>) -> Self {
        Self {
            weights: model.weights.iter().map(|w| vec![F::zero(); w.len()]).collect(),
            biases: model.biases.iter().map(|b| vec![F::zero(); b.len()]).collect(),
        }
    }

    fn scale(&mut self, factor: F) {
        for v in self.weights.iter_mut().flatten() {
            *v *= factor;
        }
        for v in self.biases.iter_mut().flatten() {
            *v *= factor;
        }
    }
}

/// Squared-error loss of one sample and its gradient added into `grads`.
fn backprop_sample<F: Real>(
    model: &MlpModel<F>,
    input: &[F],
    target: F,
    grads: &mut Gradients<F>,
) -> F {
    let pass = model.forward_full(input);
    let y = pass.activations[3][0];
    let err = y - target;
    let loss = err * err;

    // d loss / d z3 through the logistic output.
    let mut delta = vec![F::of(2.0) * err * y * (F::one() - y)];
    for l in (0..3).rev() {
        let (d_in, d_out) = (model.layer_dims[l], model.layer_dims[l + 1]);
        let a_prev = &pass.activations[l];
        for i in 0..d_in {
            let a = a_prev[i];
            let grad_row = &mut grads.weights[l][i * d_out..(i + 1) * d_out];
            for (g, d) in grad_row.iter_mut().zip(&delta) {
                *g += a * *d;
            }
        }
        for (g, d) in grads.biases[l].iter_mut().zip(&delta) {
            *g += *d;
        }
        if l > 0 {
            let z_prev = &pass.pre_activations[l - 1];
            let mut next = vec![F::zero(); d_in];
            for i in 0..d_in {
                if z_prev[i] > F::zero() {
                    let row = &model.weights[l][i * d_out..(i + 1) * d_out];
                    let mut acc = F::zero();
                    for (w, d) in row.iter().zip(&delta) {
                        acc += *w * *d;
                    }
                    next[i] = acc;
                }
            }
            delta = next;
        }
    }
    loss
}

/// Adam state per parameter tensor.
struct Adam<F: Real> {
    m_weights: Vec<Vec<F>>,
    v_weights: Vec<Vec<F>>,
    m_biases: Vec<Vec<F>>,
    v_biases: Vec<Vec<F>>,
    step: i32,
}

impl<F: Real> Adam<F> {
    fn new(model: &MlpModel<F>) -> Self {
        Self {
            m_weights: model.weights.iter().map(|w| vec![F::zero(); w.len()]).collect(),
            v_weights: model.weights.iter().map(|w| vec![F::zero(); w.len()]).collect(),
            m_biases: model.biases.iter().map(|b| vec![F::zero(); b.len()]).collect(),
            v_biases: model.biases.iter().map(|b| vec![F::zero(); b.len()]).collect(),
            step: 0,
        }
    }

    fn update(&mut self, model: &mut MlpModel<F>, grads: &Gradients<F>, lr: F, weight_decay: F) {
        self.step += 1;
        let beta1 = F::of(0.9);
        let beta2 = F::of(0.999);
        let eps = F::of(1e-8);
        let bc1 = F::one() - beta1.powi(self.step);
        let bc2 = F::one() - beta2.powi(self.step);
        for l in 0..3 {
            step_tensor(
                &mut model.weights[l],
                &grads.weights[l],
                &mut self.m_weights[l],
                &mut self.v_weights[l],
                lr,
                beta1,
                beta2,
                eps,
                bc1,
                bc2,
                weight_decay,
            );
            step_tensor(
                &mut model.biases[l],
                &grads.biases[l],
                &mut self.m_biases[l],
                &mut self.v_biases[l],
                lr,
                beta1,
                beta2,
                eps,
                bc1,
                bc2,
                F::zero(),
            );
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn step_tensor<F: Real>(
    params: &mut [F],
    grads: &[F],
    m: &mut [F],
    v: &mut [F],
    lr: F,
    beta1: F,
    beta2: F,
    eps: F,
    bc1: F,
    bc2: F,
    weight_decay: F,
) {
    for i in 0..params.len() {
        let g = grads[i] + weight_decay * params[i];
        m[i] = beta1 * m[i] + (F::one() - beta1) * g;
        v[i] = beta2 * v[i] + (F::one() - beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Trained model plus the per-epoch training loss trace.
#[derive(Debug, Clone)]
pub struct TrainOutcome<F: Real> {
    pub model: MlpModel<F>,
    pub epoch_losses: Vec<F>,
    pub final_loss: F,
}

/// Trains the regressor on `(histogram, accuracy)` pairs. All histograms
/// must share one codebook fingerprint; targets live in `[0, 1]`.
pub fn train<F: Real>(
    data: &[(BopHistogram<F>, f64)],
    config: &TrainConfig,
) -> Result<TrainOutcome<F>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument(
            "training needs at least one sample".into(),
        ));
    }
    let fingerprint = data[0].0.codebook_fingerprint();
    let k = data[0].0.len();
    for (h, t) in data {
        if h.codebook_fingerprint() != fingerprint {
            return Err(Error::Comparability(
                "training histograms come from different codebooks".into(),
            ));
        }
        if h.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: h.len(),
            });
        }
        if !(0.0..=1.0).contains(t) {
            return Err(Error::InvalidArgument(format!(
                "accuracy target must lie in [0, 1], got {t}"
            )));
        }
    }

    // Canonical sample order: results must not depend on caller order.
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&i, &j| {
        let (hi, ti) = &data[i];
        let (hj, tj) = &data[j];
        hi.bins()
            .partial_cmp(hj.bins())
            .unwrap()
            .then(ti.partial_cmp(tj).unwrap())
    });

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = MlpModel::init(k, config.resolve_hidden(k), fingerprint, &mut rng);
    let mut adam = Adam::new(&model);
    let lr = F::of(config.learning_rate);
    let weight_decay = F::of(config.weight_decay);

    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        // Seeded shuffle over the canonical order.
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = F::zero();
        for batch in order.chunks(config.batch_size) {
            let mut grads = Gradients::zeros(&model);
            let mut batch_loss = F::zero();
            for &idx in batch {
                let (h, t) = &data[idx];
                batch_loss += backprop_sample(&model, h.bins(), F::of(*t), &mut grads);
            }
            grads.scale(F::one() / F::of_usize(batch.len()));
            adam.update(&mut model, &grads, lr, weight_decay);
            epoch_loss += batch_loss;
        }
        let mean_loss = epoch_loss / F::of_usize(data.len());
        if !mean_loss.is_finite() {
            return Err(Error::Numerical("training loss diverged".into()));
        }
        epoch_losses.push(mean_loss);
    }
    model.check_finite()?;
    let final_loss = *epoch_losses.last().unwrap();
    Ok(TrainOutcome {
        model,
        epoch_losses,
        final_loss,
    })
}

/// Deterministic forward pass; the histogram must come from the codebook
/// the model was trained against.
pub fn predict<F: Real>(model: &MlpModel<F>, histogram: &BopHistogram<F>) -> Result<F> {
    if histogram.codebook_fingerprint() != model.input_fingerprint {
        return Err(Error::Comparability(format!(
            "histogram codebook {} does not match the model's {}",
            histogram.codebook_fingerprint(),
            model.input_fingerprint
        )));
    }
    if histogram.len() != model.layer_dims[0] {
        return Err(Error::DimensionMismatch {
            expected: model.layer_dims[0],
            got: histogram.len(),
        });
    }
    Ok(model.output(histogram.bins()))
}

/// Compares analytic gradients against central finite differences with the
/// default step 1e-5; returns the maximum relative error over all
/// parameters.
pub fn grad_check<F: Real>(
    model: &MlpModel<F>,
    histogram: &BopHistogram<F>,
    target: f64,
) -> Result<F> {
    grad_check_with_step(model, histogram, target, 1e-5)
}

/// Relative error is `|analytic - numeric| / max(|analytic| + |numeric|, 1e-6)`,
/// so a zero-gradient point reports an error near zero rather than 0/0.
pub fn grad_check_with_step<F: Real>(
    model: &MlpModel<F>,
    histogram: &BopHistogram<F>,
    target: f64,
    step: f64,
) -> Result<F> {
    if histogram.len() != model.layer_dims[0] {
        return Err(Error::DimensionMismatch {
            expected: model.layer_dims[0],
            got: histogram.len(),
        });
    }
    let input = histogram.bins();
    let t = F::of(target);
    let h = F::of(step);

    let mut analytic = Gradients::zeros(model);
    backprop_sample(model, input, t, &mut analytic);

    let loss_at = |m: &MlpModel<F>| {
        let y = m.output(input);
        (y - t) * (y - t)
    };

    let mut max_rel = F::zero();
    let mut scratch = model.clone();
    for l in 0..3 {
        for idx in 0..model.weights[l].len() {
            let orig = scratch.weights[l][idx];
            scratch.weights[l][idx] = orig + h;
            let plus = loss_at(&scratch);
            scratch.weights[l][idx] = orig - h;
            let minus = loss_at(&scratch);
            scratch.weights[l][idx] = orig;
            let numeric = (plus - minus) / (F::of(2.0) * h);
            max_rel = max_rel.max(relative_error(analytic.weights[l][idx], numeric));
        }
        for idx in 0..model.biases[l].len() {
            let orig = scratch.biases[l][idx];
            scratch.biases[l][idx] = orig + h;
            let plus = loss_at(&scratch);
            scratch.biases[l][idx] = orig - h;
            let minus = loss_at(&scratch);
            scratch.biases[l][idx] = orig;
            let numeric = (plus - minus) / (F::of(2.0) * h);
            max_rel = max_rel.max(relative_error(analytic.biases[l][idx], numeric));
        }
    }
    Ok(max_rel)
}

fn relative_error<F: Real>(a: F, b: F) -> F {
    (a - b).abs() / (a.abs() + b.abs()).max(F::of(1e-6))
}

/// On-disk model document: parameters at full 64-bit precision plus an echo
/// of the training configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct ModelFile<F: Real> {
    #[serde(flatten)]
    pub model: MlpModel<F>,
    pub train_config: TrainConfig,
    pub final_loss: f64,
}

pub fn save_model<F: Real>(
    model: &MlpModel<F>,
    config: &TrainConfig,
    final_loss: f64,
    path: &Path,
) -> Result<()> {
    let doc = ModelFile {
        model: model.clone(),
        train_config: config.clone(),
        final_loss,
    };
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, &doc)
        .map_err(|e| Error::Numerical(format!("model serialization failed: {e}")))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_model<F: Real>(path: &Path) -> Result<ModelFile<F>> {
    let file = File::open(path)?;
    let doc: ModelFile<F> = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::load(path, format!("not a model JSON document: {e}")))?;
    let dims = &doc.model.layer_dims;
    if dims.len() != 4 || dims[3] != 1 {
        return Err(Error::load(path, "model must have layer dims [K, h1, h2, 1]"));
    }
    for l in 0..3 {
        if doc.model.weights[l].len() != dims[l] * dims[l + 1]
            || doc.model.biases[l].len() != dims[l + 1]
        {
            return Err(Error::load(path, format!("layer {l} has inconsistent shapes")));
        }
    }
    doc.model.check_finite().map_err(|e| Error::load(path, e.to_string()))?;
    Ok(doc)
}
