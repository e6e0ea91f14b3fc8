//! The two labellers: a dilated CNN and a stacked BLSTM, each topped by a
//! per-timestep softmax.

use ndarray::{Array2, ArrayView2};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ArchConfig, ModelConfig};
use crate::error::{CheckpointError, Error, Result};
use crate::features::{featurize, EmbeddingTable, FeatureConfig, IntervalMode, SIDE_COLUMN};
use crate::nn::activation::{selu_backward, selu_inplace};
use crate::nn::conv::Conv1d;
use crate::nn::dense::{softmax_rows, Dense};
use crate::nn::gradcheck::Differentiable;
use crate::nn::loss::masked_cross_entropy;
use crate::nn::lstm::{BiLstm, BiLstmCache};
use crate::nn::noise::{add_gaussian_noise, dropout};
use crate::nn::{Parameter, Real, SeqLayout, Tensor};
use crate::{Dialogue, PunctuationClass};

/// Equal-length sequences stacked in a [`SeqLayout`] with per-row targets.
/// Gap rows carry label 0 and are masked out.
#[derive(Debug, Clone)]
pub struct Batch<F> {
    pub x: Array2<F>,
    pub layout: SeqLayout,
    pub labels: Vec<usize>,
    pub mask: Vec<bool>,
}

impl<F: Real> Batch<F> {
    pub fn pack(seqs: &[ArrayView2<'_, F>], labels: &[&[usize]], masks: &[&[bool]], gap: usize) -> Result<Self> {
        let (x, layout) = SeqLayout::pack(seqs, gap)?;
        if labels.len() != seqs.len() || masks.len() != seqs.len() {
            return Err(Error::Shape("one label and mask slice per sequence expected".into()));
        }
        let mut row_labels = vec![0; layout.rows()];
        let mut row_mask = vec![false; layout.rows()];
        for (i, (l, m)) in labels.iter().zip(masks).enumerate() {
            if l.len() != layout.len || m.len() != layout.len {
                return Err(Error::Shape(format!("sequence {i}: labels or mask length differs from {}", layout.len)));
            }
            let start = layout.row(i, 0);
            row_labels[start..start + layout.len].copy_from_slice(l);
            row_mask[start..start + layout.len].copy_from_slice(m);
        }
        Ok(Batch {
            x,
            layout,
            labels: row_labels,
            mask: row_mask,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Model<F> {
    config: ModelConfig,
    convs: Vec<Conv1d<F>>,
    blstms: Vec<BiLstm<F>>,
    softmax: Dense<F>,
}

/// Intermediate activations needed by the backward pass.
pub struct Tape<F> {
    /// Input of every hidden layer.
    inputs: Vec<Array2<F>>,
    /// Output of the last hidden layer.
    top: Array2<F>,
    caches: Vec<BiLstmCache<F>>,
    dropout_mask: Option<Array2<F>>,
    head_input: Array2<F>,
}

impl<F: Real> Model<F> {
    pub fn new<R: RngCore + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut width = config.input_dim;
        let mut convs = Vec::new();
        let mut blstms = Vec::new();
        match &config.arch {
            ArchConfig::Cnn(c) => {
                for (i, (&k, &d)) in c.kernels.iter().zip(&c.dilations).enumerate() {
                    convs.push(Conv1d::new(&format!("conv{i}"), k, width, c.filters, d, rng)?);
                    width = c.filters;
                }
            }
            ArchConfig::Blstm(b) => {
                for i in 0..b.layers {
                    let mut layer = BiLstm::new(&format!("blstm{i}"), width, b.hidden, rng);
                    layer.forward.w_recurrent.decay = config.weight_decay;
                    layer.backward.w_recurrent.decay = config.weight_decay;
                    blstms.push(layer);
                    width = 2 * b.hidden;
                }
            }
        }
        let mut softmax = Dense::new("softmax", width, config.classes, rng);
        softmax.weight.decay = config.weight_decay;
        Ok(Model {
            config,
            convs,
            blstms,
            softmax,
        })
    }

    /// Builds a model from named tensors, checking every name and shape
    /// against the configuration.
    pub fn from_parameters(config: ModelConfig, tensors: Vec<(String, Tensor<F>)>) -> Result<Self, CheckpointError> {
        let mut model = Model::new(config, &mut ChaCha8Rng::seed_from_u64(0))
            .map_err(|e| CheckpointError::Config(e.to_string()))?;
        let mut seen = vec![false; model.parameters().len()];
        for (name, tensor) in tensors {
            let mut params = model.parameters_mut();
            let Some(i) = params.iter().position(|p| p.name == name) else {
                return Err(CheckpointError::ShapeMismatch {
                    name,
                    message: "not part of this architecture".into(),
                });
            };
            if seen[i] {
                return Err(CheckpointError::ShapeMismatch {
                    name,
                    message: "stored twice".into(),
                });
            }
            if params[i].value.shape() != tensor.shape() {
                return Err(CheckpointError::ShapeMismatch {
                    message: format!("stored {:?}, config needs {:?}", tensor.shape(), params[i].value.shape()),
                    name,
                });
            }
            seen[i] = true;
            params[i].value = tensor;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(CheckpointError::ShapeMismatch {
                name: model.parameters()[i].name.clone(),
                message: "missing".into(),
            });
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig {
            use_time: self.config.time_features,
            interval: IntervalMode::PerSpeaker,
        }
    }

    pub fn parameters(&self) -> Vec<&Parameter<F>> {
        let mut out = Vec::new();
        for c in &self.convs {
            out.extend([&c.kernel, &c.bias]);
        }
        for b in &self.blstms {
            for l in [&b.forward, &b.backward] {
                out.extend([&l.w_input, &l.w_recurrent, &l.bias]);
            }
        }
        out.extend([&self.softmax.weight, &self.softmax.bias]);
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<F>> {
        let mut out = Vec::new();
        for c in &mut self.convs {
            out.extend([&mut c.kernel, &mut c.bias]);
        }
        for b in &mut self.blstms {
            for l in [&mut b.forward, &mut b.backward] {
                out.extend([&mut l.w_input, &mut l.w_recurrent, &mut l.bias]);
            }
        }
        out.extend([&mut self.softmax.weight, &mut self.softmax.bias]);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.parameters_mut().into_iter().for_each(Parameter::zero_grad);
    }

    pub fn decay_loss(&self) -> f64 {
        self.parameters().iter().map(|p| p.decay_loss()).sum()
    }

    /// Zero rows needed around each sequence so no convolution reads across
    /// a sequence boundary.
    pub fn required_gap(&self) -> usize {
        self.convs
            .iter()
            .map(|c| {
                let (before, after) = c.reach();
                before.max(after)
            })
            .max()
            .unwrap_or(0)
    }

    fn noise(&self, m: &mut Array2<F>, layout: SeqLayout, rng: &mut Option<&mut dyn RngCore>, skip: Option<usize>) {
        if let Some(rng) = rng.as_deref_mut() {
            if self.config.noise_sigma > 0.0 {
                add_gaussian_noise(&mut m.view_mut(), self.config.noise_sigma, rng, skip);
                layout.zero_gaps(m);
            }
        }
    }

    /// Class probabilities for every row. Passing an RNG switches on training
    /// behaviour (Gaussian noise and dropout); without one the pass is
    /// deterministic.
    pub fn forward(&self, x: &Array2<F>, layout: SeqLayout, mut rng: Option<&mut dyn RngCore>) -> Result<(Array2<F>, Tape<F>)> {
        layout.check_rows(x, "model input")?;
        if x.ncols() != self.config.input_dim {
            return Err(Error::Shape(format!(
                "model expects {} input columns, got {}",
                self.config.input_dim,
                x.ncols()
            )));
        }
        if layout.gap < self.required_gap() {
            return Err(Error::Shape(format!("layout gap {} below the required {}", layout.gap, self.required_gap())));
        }
        let side = (SIDE_COLUMN < self.config.input_dim).then_some(SIDE_COLUMN);
        let mut h = x.clone();
        self.noise(&mut h, layout, &mut rng, side);
        let mut inputs = Vec::new();
        let mut caches = Vec::new();
        for conv in &self.convs {
            let mut z = conv.forward(&h, layout)?;
            self.noise(&mut z, layout, &mut rng, None);
            selu_inplace(&mut z);
            inputs.push(std::mem::replace(&mut h, z));
        }
        for layer in &self.blstms {
            let (out, cache) = layer.forward(h.view(), layout)?;
            caches.push(cache);
            inputs.push(std::mem::replace(&mut h, out));
        }
        let (mut head_input, dropout_mask) = match rng.as_deref_mut() {
            Some(r) => dropout(&h, self.config.dropout, r, true)?,
            None => (h.clone(), None),
        };
        self.noise(&mut head_input, layout, &mut rng, None);
        let mut probs = self.softmax.logits(&head_input.view())?;
        softmax_rows(&mut probs);
        let tape = Tape {
            inputs,
            top: h,
            caches,
            dropout_mask,
            head_input,
        };
        Ok((probs, tape))
    }

    /// Accumulates parameter gradients given the gradient at the logits.
    pub fn backward(&mut self, tape: &Tape<F>, dlogits: &Array2<F>, layout: SeqLayout) {
        let mut dh = self
            .softmax
            .backward(&tape.head_input, dlogits, true)
            .expect("input gradient requested");
        if let Some(mask) = &tape.dropout_mask {
            dh *= mask;
        }
        let n = self.convs.len();
        for i in (0..n).rev() {
            let y = tape.inputs.get(i + 1).unwrap_or(&tape.top);
            selu_backward(y, &mut dh);
            layout.zero_gaps(&mut dh);
            match self.convs[i].backward(&tape.inputs[i], &dh, layout, i > 0) {
                Some(dx) => dh = dx,
                None => return,
            }
        }
        for i in (0..self.blstms.len()).rev() {
            match self.blstms[i].backward(tape.inputs[i].view(), &tape.caches[i], &dh, layout, i > 0) {
                Some(dx) => dh = dx,
                None => return,
            }
        }
    }

    /// Masked cross-entropy plus the L2 penalty. Parameter gradients of the
    /// cross-entropy are accumulated; the penalty's gradient is left to the
    /// optimizer.
    pub fn loss_and_grad(
        &mut self,
        batch: &Batch<F>,
        rng: Option<&mut dyn RngCore>,
        class_weights: Option<&[f64]>,
    ) -> Result<f64> {
        let (probs, tape) = self.forward(&batch.x, batch.layout, rng)?;
        let (ce, dlogits) = masked_cross_entropy(probs.view(), &batch.labels, &batch.mask, class_weights)?;
        self.backward(&tape, &dlogits, batch.layout);
        Ok(ce + self.decay_loss())
    }

    /// Inference-mode loss, the quantity monitored for early stopping.
    pub fn loss(&self, batch: &Batch<F>) -> Result<f64> {
        let (probs, _) = self.forward(&batch.x, batch.layout, None)?;
        let (ce, _) = masked_cross_entropy(probs.view(), &batch.labels, &batch.mask, None)?;
        Ok(ce + self.decay_loss())
    }

    /// Inference over one whole sequence, `T x classes`.
    pub fn probabilities(&self, x: ArrayView2<'_, F>) -> Result<Array2<F>> {
        let (packed, layout) = SeqLayout::pack(&[x], self.required_gap())?;
        let (probs, _) = self.forward(&packed, layout, None)?;
        Ok(layout.sequence(&probs, 0).to_owned())
    }
}

/// Row-wise argmax; ties go to the lowest index.
pub fn argmax_rows<F: Real>(probs: &Array2<F>) -> Vec<usize> {
    probs
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Labels every word of a dialogue, running the model over the whole
/// conversation at once.
pub fn predict_labels(model: &Model<f32>, dialogue: &Dialogue, table: &EmbeddingTable) -> Result<Vec<PunctuationClass>> {
    if dialogue.is_empty() {
        return Ok(Vec::new());
    }
    let features = featurize(dialogue, table, model.feature_config());
    let probs = model.probabilities(features.rows.view())?;
    Ok(argmax_rows(&probs)
        .into_iter()
        .map(|i| PunctuationClass::from_index(i).unwrap_or(PunctuationClass::Blank))
        .collect())
}

/// A model and a fixed batch viewed as a deterministic objective, for
/// gradient checking. Training-time noise and dropout are off and the L2
/// penalty's gradient is included.
pub struct Objective<'a> {
    pub model: &'a mut Model<f64>,
    pub batch: &'a Batch<f64>,
    pub class_weights: Option<Vec<f64>>,
}

impl Differentiable for Objective<'_> {
    fn parameters_mut(&mut self) -> Vec<&mut Parameter<f64>> {
        self.model.parameters_mut()
    }

    fn loss_and_grad(&mut self) -> Result<f64> {
        let loss = self.model.loss_and_grad(self.batch, None, self.class_weights.as_deref())?;
        for p in self.model.parameters_mut() {
            let decay = p.decay;
            if decay != 0.0 {
                let Parameter { value, grad, .. } = p;
                for (g, w) in grad.data_mut().iter_mut().zip(value.data()) {
                    *g += decay * w;
                }
            }
        }
        Ok(loss)
    }

    fn loss(&mut self) -> Result<f64> {
        let (probs, _) = self.model.forward(&self.batch.x, self.batch.layout, None)?;
        let (ce, _) = masked_cross_entropy(probs.view(), &self.batch.labels, &self.batch.mask, self.class_weights.as_deref())?;
        Ok(ce + self.model.decay_loss())
    }
}
