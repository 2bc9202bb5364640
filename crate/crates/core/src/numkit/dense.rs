use super::{sgd_step_in_place, DenseTensor, Rng};
use crate::error::{Error, Result};

/// Fully connected layer `y = W x + b` with `W` stored `[out, in]`.
///
/// Parameters are `f32`; forward and backward passes run in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weight: DenseTensor,
    pub bias: DenseTensor,
}

/// Gradient accumulator matching an [`Affine`] layer.
#[derive(Debug, Clone)]
pub struct AffineGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Affine {
    /// Glorot-uniform weights, zero bias.
    pub fn init(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / (inputs + outputs) as f64).sqrt();
        Self::init_scaled(inputs, outputs, bound, rng)
    }

    pub fn init_scaled(inputs: usize, outputs: usize, bound: f64, rng: &mut Rng) -> Self {
        let mut weight = DenseTensor::zeros(&[outputs, inputs]);
        for w in weight.data_mut() {
            *w = rng.uniform_range(-bound, bound) as f32;
        }
        Self {
            weight,
            bias: DenseTensor::zeros(&[outputs]),
        }
    }

    pub fn from_parts(weight: DenseTensor, bias: DenseTensor) -> Result<Self> {
        if weight.rank() != 2 || bias.rank() != 1 || bias.shape()[0] != weight.shape()[0] {
            return Err(Error::shape("affine", weight.shape(), bias.shape()));
        }
        Ok(Self { weight, bias })
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs());
        let n_in = self.inputs();
        let w = self.weight.data();
        self.bias
            .data()
            .iter()
            .enumerate()
            .map(|(j, &b)| {
                let row = &w[j * n_in..(j + 1) * n_in];
                row.iter()
                    .zip(x)
                    .fold(b as f64, |acc, (&wi, &xi)| acc + wi as f64 * xi)
            })
            .collect()
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut AffineGrad) -> Vec<f64> {
        let n_in = self.inputs();
        let w = self.weight.data();
        let mut dx = vec![0.0f64; n_in];
        for (j, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[j] += g;
            let row = &w[j * n_in..(j + 1) * n_in];
            let grow = &mut grad.weight[j * n_in..(j + 1) * n_in];
            for i in 0..n_in {
                grow[i] += g * x[i];
                dx[i] += g * row[i] as f64;
            }
        }
        dx
    }

    /// Parameter gradients only; skips the input gradient.
    pub fn backward_params(&self, x: &[f64], dy: &[f64], grad: &mut AffineGrad) {
        let n_in = self.inputs();
        for (j, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[j] += g;
            for (gw, &xi) in grad.weight[j * n_in..(j + 1) * n_in].iter_mut().zip(x) {
                *gw += g * xi;
            }
        }
    }

    pub fn zero_grad(&self) -> AffineGrad {
        AffineGrad {
            weight: vec![0.0; self.weight.len()],
            bias: vec![0.0; self.bias.len()],
        }
    }

    /// SGD update with the accumulated gradient scaled by `scale`.
    pub fn apply(&mut self, grad: &AffineGrad, scale: f64, lr: f32) -> Result<()> {
        let gw = DenseTensor::from_f64(
            self.weight.shape(),
            &grad.weight.iter().map(|g| g * scale).collect::<Vec<_>>(),
        )?;
        let gb = DenseTensor::from_f64(
            self.bias.shape(),
            &grad.bias.iter().map(|g| g * scale).collect::<Vec<_>>(),
        )?;
        sgd_step_in_place(&mut self.weight, &gw, lr)?;
        sgd_step_in_place(&mut self.bias, &gb, lr)
    }

    pub fn all_finite(&self) -> bool {
        self.weight.all_finite() && self.bias.all_finite()
    }
}

impl AffineGrad {
    pub fn reset(&mut self) {
        self.weight.iter_mut().for_each(|v| *v = 0.0);
        self.bias.iter_mut().for_each(|v| *v = 0.0);
    }
}

pub fn widen(x: &[f32]) -> Vec<f64> {
    x.iter().map(|&v| v as f64).collect()
}
