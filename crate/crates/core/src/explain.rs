//! Re-label distillation.
//!
//! A neighborhood decoded around the anchor is labelled by whether the
//! classifier keeps the anchor's class (1) or moves away from it (0). A
//! single-logit logistic student `p1(x) = sigmoid(w . x + b)` is then fit to
//! those labels and to the classifier's probabilities collapsed to two
//! classes, minimizing per sample
//!
//! ```text
//! lambda1 * || [p1, 1 - p1] - [p_c, 1 - p_c] ||_2  +  lambda2 * | p1 - y |
//! ```
//!
//! The learned weights, one per pixel, are the saliency map.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::numkit::{sigmoid_scalar, DenseTensor, Rng};
use crate::teacher::Classifier;
use crate::vae::{sample_neighborhood, VaeModel};

/// Smoothing added under the soft term's square root.
pub const NORM_SMOOTHING: f64 = 1e-12;

/// Synthetic samples around one anchor with their teacher-derived targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    pub anchor: DenseTensor,
    pub anchor_class: usize,
    /// One flattened sample per row.
    pub samples: DenseTensor,
    pub soft_targets: Vec<[f64; 2]>,
    pub hard_labels: Vec<u8>,
    /// Perturbation scale of the final sampling round, when VAE-generated.
    pub tau_used: Option<f32>,
}

impl Neighborhood {
    pub fn len(&self) -> usize {
        self.hard_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hard_labels.is_empty()
    }

    /// Samples keeping the anchor class.
    pub fn kept(&self) -> usize {
        self.hard_labels.iter().filter(|&&y| y == 1).count()
    }

    pub fn shifted(&self) -> usize {
        self.len() - self.kept()
    }

    /// Size of the smaller re-label class as a fraction of the whole.
    pub fn minority_fraction(&self) -> f64 {
        self.kept().min(self.shifted()) as f64 / self.len().max(1) as f64
    }
}

/// `[p_c, 1 - p_c]` for anchor class `c`.
pub fn collapse_soft_target(proba: &[f64], anchor_class: usize) -> Result<[f64; 2]> {
    let p = *proba.get(anchor_class).ok_or_else(|| {
        Error::Parameter(format!(
            "anchor class {anchor_class} out of range for {} classes",
            proba.len()
        ))
    })?;
    Ok([p, 1.0 - p])
}

/// Labels each sample 1 when the classifier's prediction equals its
/// prediction on `anchor`, 0 otherwise.
pub fn relabel(teacher: &impl Classifier, anchor: &DenseTensor, samples: &DenseTensor) -> Result<Neighborhood> {
    if samples.rank() != 2 || samples.shape()[1] != anchor.len() {
        return Err(Error::shape("relabel", samples.shape(), anchor.shape()));
    }
    let anchor_class = teacher.predict(anchor.data())?;
    let n = samples.shape()[0];
    let mut soft_targets = Vec::with_capacity(n);
    let mut hard_labels = Vec::with_capacity(n);
    for i in 0..n {
        let logits = teacher.logits(samples.row(i))?;
        let class = crate::numkit::argmax(&logits);
        let proba = crate::numkit::softmax_f64(&logits);
        soft_targets.push(collapse_soft_target(&proba, anchor_class)?);
        hard_labels.push(u8::from(class == anchor_class));
    }
    Ok(Neighborhood {
        anchor: anchor.clone(),
        anchor_class,
        samples: samples.clone(),
        soft_targets,
        hard_labels,
        tau_used: None,
    })
}

/// Weight coefficients of the soft and hard loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.7,
            lambda2: 0.3,
        }
    }
}

impl LossWeights {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        let w = Self { lambda1, lambda2 };
        w.validate()?;
        Ok(w)
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::Parameter(format!(
                "loss weights must be nonnegative, got lambda1={} lambda2={}",
                self.lambda1, self.lambda2
            )));
        }
        Ok(())
    }

    /// Loss of one sample and its derivative with respect to `p1`.
    pub fn sample_loss(&self, p1: f64, soft: [f64; 2], hard: u8) -> (f64, f64) {
        let (e0, e1) = (p1 - soft[0], (1.0 - p1) - soft[1]);
        let norm = (e0 * e0 + e1 * e1 + NORM_SMOOTHING).sqrt();
        let diff = p1 - f64::from(hard);
        let loss = self.lambda1 * norm + self.lambda2 * diff.abs();
        let d_p1 = self.lambda1 * (e0 - e1) / norm + self.lambda2 * sign(diff);
        (loss, d_p1)
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Logistic student over flattened pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearStudent {
    pub w: DenseTensor,
    pub b: f32,
    pub final_loss: Option<f64>,
    /// Fraction of samples where `p1 >= 0.5` agrees with the hard label.
    pub relabel_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentGrads {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LinearStudent {
    pub fn zeros(dim: usize) -> Self {
        Self {
            w: DenseTensor::zeros(&[dim]),
            b: 0.0,
            final_loss: None,
            relabel_accuracy: None,
        }
    }

    pub fn from_weights(w: DenseTensor, b: f32) -> Self {
        Self {
            w,
            b,
            final_loss: None,
            relabel_accuracy: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn logit(&self, x: &[f32]) -> f64 {
        self.w
            .data()
            .iter()
            .zip(x)
            .fold(self.b as f64, |acc, (&w, &x)| acc + w as f64 * x as f64)
    }

    /// Probability of the "anchor class kept" outcome.
    pub fn p1(&self, x: &[f32]) -> f64 {
        sigmoid_scalar(self.logit(x))
    }
}

/// Summed re-label distillation loss over the neighborhood with analytic
/// gradients for `(w, b)`.
pub fn distill_loss(
    student: &LinearStudent,
    neighborhood: &Neighborhood,
    weights: LossWeights,
) -> Result<(f64, StudentGrads)> {
    weights.validate()?;
    if student.dim() != neighborhood.anchor.len() {
        return Err(Error::shape(
            "distill_loss",
            student.w.shape(),
            neighborhood.anchor.shape(),
        ));
    }
    let mut grads = StudentGrads {
        w: vec![0.0; student.dim()],
        b: 0.0,
    };
    let mut total = 0.0;
    for i in 0..neighborhood.len() {
        let x = neighborhood.samples.row(i);
        let p1 = student.p1(x);
        let (loss, d_p1) = weights.sample_loss(
            p1,
            neighborhood.soft_targets[i],
            neighborhood.hard_labels[i],
        );
        total += loss;
        let g = d_p1 * p1 * (1.0 - p1);
        grads.b += g;
        for (gw, &xv) in grads.w.iter_mut().zip(x) {
            *gw += g * xv as f64;
        }
    }
    Ok((total, grads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentConfig {
    pub weights: LossWeights,
    pub lr: f64,
    pub epochs: usize,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            lr: 5.0,
            epochs: 500,
        }
    }
}

/// Full-batch gradient descent from `w = 0, b = 0`.
///
/// Steps use the per-sample mean gradient and are taken in mean-centered
/// input coordinates (`w . (x - mean) + c`), which is the same model with
/// the bias reparameterized; the returned student is mapped back so that
/// `p1(x) = sigmoid(w . x + b)`.
pub fn train_student(neighborhood: &Neighborhood, config: &StudentConfig) -> Result<LinearStudent> {
    config.weights.validate()?;
    let n = neighborhood.len();
    if n < 2 {
        return Err(Error::Parameter(format!(
            "student needs at least 2 samples, got {n}"
        )));
    }
    let d = neighborhood.anchor.len();
    let mut mean = vec![0.0f64; d];
    for i in 0..n {
        for (m, &v) in mean.iter_mut().zip(neighborhood.samples.row(i)) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<f64> = (0..n)
        .flat_map(|i| {
            neighborhood
                .samples
                .row(i)
                .iter()
                .zip(&mean)
                .map(|(&v, m)| v as f64 - m)
        })
        .collect();

    let mut w = vec![0.0f64; d];
    let mut c = 0.0f64;
    let mut gw = vec![0.0f64; d];
    let step = config.lr / n as f64;
    for epoch in 1..=config.epochs {
        gw.iter_mut().for_each(|g| *g = 0.0);
        let mut gc = 0.0;
        let mut loss = 0.0;
        for (i, row) in centered.chunks_exact(d).enumerate() {
            let z = c + row.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>();
            let p1 = sigmoid_scalar(z);
            let (l, d_p1) = config.weights.sample_loss(
                p1,
                neighborhood.soft_targets[i],
                neighborhood.hard_labels[i],
            );
            loss += l;
            let g = d_p1 * p1 * (1.0 - p1);
            gc += g;
            for (acc, x) in gw.iter_mut().zip(row) {
                *acc += g * x;
            }
        }
        if !loss.is_finite() {
            return Err(Error::Training { epoch, loss });
        }
        c -= step * gc;
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= step * g;
        }
    }
    let b = c - w.iter().zip(&mean).map(|(w, m)| w * m).sum::<f64>();
    let mut student = LinearStudent::from_weights(DenseTensor::from_f64(&[d], &w)?, b as f32);
    let (final_loss, _) = distill_loss(&student, neighborhood, config.weights)?;
    if !final_loss.is_finite() {
        return Err(Error::Training {
            epoch: config.epochs,
            loss: final_loss,
        });
    }
    student.final_loss = Some(final_loss);
    student.relabel_accuracy = Some(relabel_accuracy(&student, neighborhood));
    Ok(student)
}

pub fn relabel_accuracy(student: &LinearStudent, neighborhood: &Neighborhood) -> f64 {
    let agree = (0..neighborhood.len())
        .filter(|&i| {
            let predicted = u8::from(student.p1(neighborhood.samples.row(i)) >= 0.5);
            predicted == neighborhood.hard_labels[i]
        })
        .count();
    agree as f64 / neighborhood.len().max(1) as f64
}

/// Per-pixel importance with its display normalization and ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub raw: DenseTensor,
    pub normalized: DenseTensor,
    /// Pixel indices by descending raw value, ties to the lower index.
    pub ordering: Vec<usize>,
}

/// Raw ranges at or below this are treated as flat.
pub const FLAT_RANGE: f64 = 1e-9;

impl SaliencyMap {
    /// Builds the map from a signed `H x W` tensor.
    pub fn from_raw(raw: DenseTensor) -> Result<Self> {
        if raw.rank() != 2 {
            return Err(Error::shape("saliency", raw.shape(), &[0, 0]));
        }
        if !raw.all_finite() {
            return Err(Error::Parameter("saliency values must be finite".into()));
        }
        let values = raw.data();
        let min = values.iter().copied().fold(f32::INFINITY, f32::min) as f64;
        let max = values.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let normalized: Vec<f64> = if max - min > FLAT_RANGE {
            values.iter().map(|&v| (v as f64 - min) / (max - min)).collect()
        } else {
            vec![0.5; values.len()]
        };
        let mut ordering: Vec<usize> = (0..values.len()).collect();
        ordering.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
        Ok(Self {
            normalized: DenseTensor::from_f64(raw.shape(), &normalized)?,
            raw,
            ordering,
        })
    }

    /// Saliency from student weights: per-pixel sum over channels.
    pub fn from_student(student: &LinearStudent, height: usize, width: usize) -> Result<Self> {
        let pixels = height * width;
        if pixels == 0 || !student.dim().is_multiple_of(pixels) {
            return Err(Error::shape("saliency", &[height, width], student.w.shape()));
        }
        let channels = student.dim() / pixels;
        let raw: Vec<f32> = student
            .w
            .data()
            .chunks_exact(channels)
            .map(|c| c.iter().map(|&v| v as f64).sum::<f64>() as f32)
            .collect();
        Self::from_raw(DenseTensor::new(&[height, width], raw)?)
    }

    pub fn height(&self) -> usize {
        self.raw.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.raw.shape()[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplainConfig {
    pub n_samples: usize,
    pub tau: f32,
    pub student: StudentConfig,
    /// Resample when either re-label class is rarer than this fraction.
    pub min_class_fraction: f64,
    pub tau_growth: f32,
    pub max_retries: usize,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            n_samples: 1000,
            tau: 1.0,
            student: StudentConfig::default(),
            min_class_fraction: 0.05,
            tau_growth: 1.5,
            max_retries: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub student: LinearStudent,
    pub saliency: SaliencyMap,
    pub neighborhood: Neighborhood,
    pub retries: usize,
    pub warnings: Vec<String>,
}

impl Explanation {
    /// Plain-text neighborhood report.
    pub fn summary(&self) -> String {
        let nb = &self.neighborhood;
        let mut out = String::new();
        let _ = writeln!(out, "anchor_class {}", nb.anchor_class);
        let _ = writeln!(out, "samples {}", nb.len());
        let _ = writeln!(out, "kept {}", nb.kept());
        let _ = writeln!(out, "shifted {}", nb.shifted());
        let _ = writeln!(out, "tau_used {:.6}", nb.tau_used.unwrap_or(f32::NAN));
        let _ = writeln!(out, "retries {}", self.retries);
        let _ = writeln!(
            out,
            "student_relabel_accuracy {:.6}",
            self.student.relabel_accuracy.unwrap_or(f64::NAN)
        );
        let _ = writeln!(
            out,
            "student_final_loss {:.6}",
            self.student.final_loss.unwrap_or(f64::NAN)
        );
        for w in &self.warnings {
            let _ = writeln!(out, "warning {w}");
        }
        out
    }
}

/// Explains `teacher`'s prediction on `anchor` (an `H x W x C` image).
pub fn explain(
    teacher: &impl Classifier,
    vae: &VaeModel,
    anchor: &DenseTensor,
    config: &ExplainConfig,
    rng: &mut Rng,
) -> Result<Explanation> {
    if anchor.rank() != 3 {
        return Err(Error::shape("explain", anchor.shape(), &[0, 0, 0]));
    }
    if anchor.len() != vae.input_dim() || anchor.len() != teacher.input_dim() {
        return Err(Error::shape(
            "explain",
            anchor.shape(),
            &[vae.input_dim(), teacher.input_dim()],
        ));
    }
    if !(config.tau >= 0.0) || !(config.tau_growth >= 1.0) {
        return Err(Error::Parameter("tau must be >= 0 and tau growth >= 1".into()));
    }
    let mut tau = config.tau;
    let mut retries = 0;
    let mut warnings = Vec::new();
    let neighborhood = loop {
        let samples = sample_neighborhood(vae, anchor.data(), config.n_samples, tau, rng)?;
        let mut nb = relabel(teacher, anchor, &samples)?;
        nb.tau_used = Some(tau);
        if nb.minority_fraction() >= config.min_class_fraction {
            break nb;
        }
        if retries == config.max_retries {
            warnings.push(format!(
                "degenerate neighborhood: {} kept / {} shifted at tau {tau:.4} after {retries} retries",
                nb.kept(),
                nb.shifted()
            ));
            break nb;
        }
        retries += 1;
        tau *= config.tau_growth;
    };
    let student = train_student(&neighborhood, &config.student)?;
    let saliency = SaliencyMap::from_student(&student, anchor.shape()[0], anchor.shape()[1])?;
    Ok(Explanation {
        student,
        saliency,
        neighborhood,
        retries,
        warnings,
    })
}
