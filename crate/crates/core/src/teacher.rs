//! The classifier under explanation: a one-hidden-layer ReLU network.

use crate::dataio::{ImageDataset, ModelArchive};
use crate::error::{Error, Result};
use crate::numkit::{argmax, softmax_f64, widen, Affine, AffineGrad, DenseTensor, Rng};

/// Black-box access to a classifier: logits in, nothing else exposed.
pub trait Classifier {
    fn input_dim(&self) -> usize;

    fn num_classes(&self) -> usize;

    fn logits(&self, x: &[f32]) -> Result<Vec<f64>>;

    /// Softmax of the logits.
    fn predict_proba(&self, x: &[f32]) -> Result<Vec<f64>> {
        Ok(softmax_f64(&self.logits(x)?))
    }

    /// Argmax of the logits, ties to the lowest class index.
    fn predict(&self, x: &[f32]) -> Result<usize> {
        Ok(argmax(&self.logits(x)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            epochs: 30,
            batch_size: 32,
            lr: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherModel {
    hidden: Affine,
    output: Affine,
    epochs: usize,
    accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TeacherGrads {
    hidden: AffineGrad,
    output: AffineGrad,
}

impl TeacherGrads {
    /// Flattened in [`TeacherModel::parameters_mut`] order.
    pub fn to_flat(&self) -> Vec<f64> {
        [&self.hidden, &self.output]
            .iter()
            .flat_map(|g| g.weight.iter().chain(&g.bias).copied())
            .collect()
    }
}

impl TeacherModel {
    pub fn init(input_dim: usize, classes: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        if classes < 2 || input_dim == 0 || hidden == 0 {
            return Err(Error::Parameter(format!(
                "teacher needs >= 2 classes and positive sizes (D={input_dim}, H={hidden}, K={classes})"
            )));
        }
        Ok(Self {
            hidden: Affine::init(input_dim, hidden, rng),
            output: Affine::init(hidden, classes, rng),
            epochs: 0,
            accuracy: None,
        })
    }

    pub fn from_layers(hidden: Affine, output: Affine) -> Result<Self> {
        if output.inputs() != hidden.outputs() || output.outputs() < 2 {
            return Err(Error::Parameter("teacher layers do not chain".into()));
        }
        Ok(Self {
            hidden,
            output,
            epochs: 0,
            accuracy: None,
        })
    }

    pub fn epochs(&self) -> usize {
        self.epochs
    }

    /// Training-set accuracy recorded after the final epoch.
    pub fn accuracy(&self) -> Option<f64> {
        self.accuracy
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut DenseTensor> {
        vec![
            &mut self.hidden.weight,
            &mut self.hidden.bias,
            &mut self.output.weight,
            &mut self.output.bias,
        ]
    }

    fn check_input(&self, x: &[f32]) -> Result<()> {
        if x.len() != self.hidden.inputs() {
            return Err(Error::shape("teacher input", &[x.len()], &[self.hidden.inputs()]));
        }
        Ok(())
    }

    fn hidden_activations(&self, x: &[f64]) -> Vec<f64> {
        self.hidden
            .forward(x)
            .into_iter()
            .map(|v| v.max(0.0))
            .collect()
    }

    fn ce_pass(&self, x: &[f64], label: usize, grads: Option<&mut TeacherGrads>) -> f64 {
        let h = self.hidden_activations(x);
        let logits = self.output.forward(&h);
        let proba = softmax_f64(&logits);
        // log-sum-exp form keeps the loss finite for confident wrong answers
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        let loss = lse - logits[label];
        if let Some(g) = grads {
            let mut d_logits = proba;
            d_logits[label] -= 1.0;
            let d_h = self.output.backward(&h, &d_logits, &mut g.output);
            let d_pre: Vec<f64> = d_h
                .iter()
                .zip(&h)
                .map(|(&d, &a)| if a > 0.0 { d } else { 0.0 })
                .collect();
            self.hidden.backward_params(x, &d_pre, &mut g.hidden);
        }
        loss
    }

    fn zero_grads(&self) -> TeacherGrads {
        TeacherGrads {
            hidden: self.hidden.zero_grad(),
            output: self.output.zero_grad(),
        }
    }

    pub fn to_archive(&self) -> Result<ModelArchive> {
        let meta = [self.epochs as f32, self.accuracy.map_or(-1.0, |a| a as f32)];
        ModelArchive::new()
            .with("t.w1", self.hidden.weight.clone())?
            .with("t.b1", self.hidden.bias.clone())?
            .with("t.w2", self.output.weight.clone())?
            .with("t.b2", self.output.bias.clone())?
            .with("t.meta", DenseTensor::from_slice(&meta))
    }

    pub fn from_archive(archive: &ModelArchive) -> Result<Self> {
        let hidden = Affine::from_parts(archive.require("t.w1")?.clone(), archive.require("t.b1")?.clone())?;
        let output = Affine::from_parts(archive.require("t.w2")?.clone(), archive.require("t.b2")?.clone())?;
        let mut model = Self::from_layers(hidden, output)?;
        let meta = archive.require("t.meta")?.data();
        if meta.len() != 2 {
            return Err(Error::Parameter("t.meta must hold two values".into()));
        }
        model.epochs = meta[0] as usize;
        model.accuracy = (meta[1] >= 0.0).then_some(meta[1] as f64);
        Ok(model)
    }
}

impl Classifier for TeacherModel {
    fn input_dim(&self) -> usize {
        self.hidden.inputs()
    }

    fn num_classes(&self) -> usize {
        self.output.outputs()
    }

    fn logits(&self, x: &[f32]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.output.forward(&self.hidden_activations(&widen(x))))
    }
}

/// Softmax cross-entropy of one labelled image, with parameter gradients.
pub fn cross_entropy_loss(model: &TeacherModel, x: &[f32], label: usize) -> Result<(f64, TeacherGrads)> {
    model.check_input(x)?;
    if label >= model.num_classes() {
        return Err(Error::Parameter(format!(
            "label {label} out of range for {} classes",
            model.num_classes()
        )));
    }
    let mut grads = model.zero_grads();
    let loss = model.ce_pass(&widen(x), label, Some(&mut grads));
    Ok((loss, grads))
}

/// Fraction of `dataset` the classifier labels correctly.
pub fn accuracy(model: &impl Classifier, dataset: &ImageDataset) -> Result<f64> {
    let mut correct = 0usize;
    for (i, &label) in dataset.labels().iter().enumerate() {
        if model.predict(dataset.pixels(i))? == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len().max(1) as f64)
}

pub fn train_teacher(dataset: &ImageDataset, config: &TeacherConfig, rng: &mut Rng) -> Result<TeacherModel> {
    train_teacher_with(dataset, config, rng, |_, _| {})
}

/// Minibatch SGD on softmax cross-entropy; `on_epoch` receives `(epoch, mean loss)`.
pub fn train_teacher_with(
    dataset: &ImageDataset,
    config: &TeacherConfig,
    rng: &mut Rng,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TeacherModel> {
    if dataset.is_empty() {
        return Err(Error::Parameter("cannot train on an empty dataset".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Parameter("batch size must be positive".into()));
    }
    let mut model = TeacherModel::init(
        dataset.image_shape().len(),
        dataset.classes(),
        config.hidden,
        rng,
    )?;
    if config.epochs == 0 {
        return Ok(model);
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut grads = model.zero_grads();
    for epoch in 1..=config.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.hidden.reset();
            grads.output.reset();
            for &i in batch {
                total += model.ce_pass(&widen(dataset.pixels(i)), dataset.labels()[i], Some(&mut grads));
            }
            let scale = 1.0 / batch.len() as f64;
            model.hidden.apply(&grads.hidden, scale, config.lr)?;
            model.output.apply(&grads.output, scale, config.lr)?;
        }
        let mean = total / dataset.len() as f64;
        if !mean.is_finite() || !model.hidden.all_finite() || !model.output.all_finite() {
            return Err(Error::Training { epoch, loss: mean });
        }
        on_epoch(epoch, mean);
    }
    model.epochs = config.epochs;
    model.accuracy = Some(accuracy(&model, dataset)?);
    Ok(model)
}
