//! Variational autoencoder used as the neighborhood generator.
//!
//! ```text
//! x ─ tanh(enc) ─┬─ mu head ──────┐
//!                └─ logvar head ─ z = mu + tau * eps * exp(logvar / 2)
//!                                 │
//!                   sigmoid(out(tanh(hidden(z)))) = x'
//! ```
//!
//! Training minimizes summed pixelwise binary cross-entropy plus the KL
//! divergence of the diagonal posterior from `N(0, I)`, with one
//! reparameterized sample per example per step (`tau = 1`).

use crate::dataio::{ImageDataset, ModelArchive};
use crate::error::{Error, Result};
use crate::numkit::{
    kl_standard_f64, sigmoid_scalar, softplus, widen, Affine, AffineGrad, DenseTensor, Rng,
};

pub const LOGVAR_LIMIT: f64 = 10.0;

// Decoder pixels stay strictly inside (0, 1) after rounding to f32.
const PIXEL_FLOOR: f64 = 1e-7;
const PIXEL_CEIL: f64 = 1.0 - 6e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct VaeConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            hidden: 128,
            epochs: 30,
            batch_size: 64,
            lr: 0.01,
        }
    }
}

/// Posterior mean and clamped log-variance.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentStats {
    pub mu: DenseTensor,
    pub logvar: DenseTensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    pub(crate) encoder: Affine,
    pub(crate) mu_head: Affine,
    pub(crate) logvar_head: Affine,
    pub(crate) dec_hidden: Affine,
    pub(crate) dec_out: Affine,
    trained: bool,
    epoch_losses: Vec<f64>,
}

/// Gradients for every VAE parameter, in [`VaeModel::parameters_mut`] order.
#[derive(Debug, Clone)]
pub struct VaeGrads {
    layers: [AffineGrad; 5],
}

impl VaeGrads {
    pub fn to_flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|g| g.weight.iter().chain(&g.bias).copied())
            .collect()
    }

    fn reset(&mut self) {
        self.layers.iter_mut().for_each(AffineGrad::reset);
    }
}

struct Forward {
    h: Vec<f64>,
    mu: Vec<f64>,
    logvar: Vec<f64>,
    // whether the log-variance clamp was inactive
    lv_free: Vec<bool>,
    z: Vec<f64>,
    g: Vec<f64>,
    logits: Vec<f64>,
}

impl VaeModel {
    pub fn init(input_dim: usize, config: &VaeConfig, rng: &mut Rng) -> Result<Self> {
        if input_dim == 0 || config.latent_dim == 0 || config.hidden == 0 {
            return Err(Error::Parameter("VAE dimensions must be positive".into()));
        }
        let (d, h, l) = (input_dim, config.hidden, config.latent_dim);
        let encoder = Affine::init(d, h, rng);
        let mu_head = Affine::init(h, l, rng);
        // small log-variance weights start the posterior near unit variance
        let logvar_head = Affine::init_scaled(h, l, 0.01, rng);
        let dec_hidden = Affine::init(l, h, rng);
        let dec_out = Affine::init(h, d, rng);
        Ok(Self {
            encoder,
            mu_head,
            logvar_head,
            dec_hidden,
            dec_out,
            trained: false,
            epoch_losses: Vec::new(),
        })
    }

    /// Assembles a model from explicit layers:
    /// `[encoder, mu head, logvar head, decoder hidden, decoder output]`.
    pub fn from_layers(layers: [Affine; 5], trained: bool) -> Result<Self> {
        let [encoder, mu_head, logvar_head, dec_hidden, dec_out] = layers;
        let ok = mu_head.inputs() == encoder.outputs()
            && logvar_head.inputs() == encoder.outputs()
            && mu_head.outputs() == logvar_head.outputs()
            && dec_hidden.inputs() == mu_head.outputs()
            && dec_out.inputs() == dec_hidden.outputs()
            && dec_out.outputs() == encoder.inputs();
        if !ok {
            return Err(Error::Parameter("VAE layer dimensions do not chain".into()));
        }
        Ok(Self {
            encoder,
            mu_head,
            logvar_head,
            dec_hidden,
            dec_out,
            trained,
            epoch_losses: Vec::new(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.inputs()
    }

    pub fn latent_dim(&self) -> usize {
        self.mu_head.outputs()
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    /// Mean ELBO per epoch from the last training run.
    pub fn epoch_losses(&self) -> &[f64] {
        &self.epoch_losses
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut DenseTensor> {
        let mut out = Vec::with_capacity(10);
        for layer in [
            &mut self.encoder,
            &mut self.mu_head,
            &mut self.logvar_head,
            &mut self.dec_hidden,
            &mut self.dec_out,
        ] {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
        }
        out
    }

    fn layers(&self) -> [&Affine; 5] {
        [
            &self.encoder,
            &self.mu_head,
            &self.logvar_head,
            &self.dec_hidden,
            &self.dec_out,
        ]
    }

    fn zero_grads(&self) -> VaeGrads {
        VaeGrads {
            layers: self.layers().map(Affine::zero_grad),
        }
    }

    fn check_input(&self, x: &[f32]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::shape("vae input", &[x.len()], &[self.input_dim()]));
        }
        Ok(())
    }

    fn encode_f64(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<bool>) {
        let h: Vec<f64> = self.encoder.forward(x).into_iter().map(f64::tanh).collect();
        let mu = self.mu_head.forward(&h);
        let raw = self.logvar_head.forward(&h);
        let lv_free = raw
            .iter()
            .map(|v| v.abs() < LOGVAR_LIMIT)
            .collect();
        let logvar = raw
            .into_iter()
            .map(|v| v.clamp(-LOGVAR_LIMIT, LOGVAR_LIMIT))
            .collect();
        (h, mu, logvar, lv_free)
    }

    fn decode_logits(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let g: Vec<f64> = self.dec_hidden.forward(z).into_iter().map(f64::tanh).collect();
        let logits = self.dec_out.forward(&g);
        (g, logits)
    }

    fn forward(&self, x: &[f64], eps: &[f64]) -> Forward {
        let (h, mu, logvar, lv_free) = self.encode_f64(x);
        let z: Vec<f64> = mu
            .iter()
            .zip(&logvar)
            .zip(eps)
            .map(|((m, lv), e)| m + e * (0.5 * lv).exp())
            .collect();
        let (g, logits) = self.decode_logits(&z);
        Forward {
            h,
            mu,
            logvar,
            lv_free,
            z,
            g,
            logits,
        }
    }

    /// Returns (reconstruction BCE, KL) and accumulates gradients when asked.
    fn elbo_pass(&self, x: &[f64], eps: &[f64], grads: Option<&mut VaeGrads>) -> (f64, f64) {
        let f = self.forward(x, eps);
        let bce: f64 = f
            .logits
            .iter()
            .zip(x)
            .map(|(&l, &xi)| softplus(l) - xi * l)
            .sum();
        let kl = kl_standard_f64(&f.mu, &f.logvar);
        let Some(grads) = grads else {
            return (bce, kl);
        };
        let [g_enc, g_mu, g_lv, g_dh, g_do] = &mut grads.layers;

        let d_logits: Vec<f64> = f
            .logits
            .iter()
            .zip(x)
            .map(|(&l, &xi)| sigmoid_scalar(l) - xi)
            .collect();
        let d_g = self.dec_out.backward(&f.g, &d_logits, g_do);
        let d_gpre: Vec<f64> = d_g.iter().zip(&f.g).map(|(d, g)| d * (1.0 - g * g)).collect();
        let d_z = self.dec_hidden.backward(&f.z, &d_gpre, g_dh);

        let d_mu: Vec<f64> = d_z.iter().zip(&f.mu).map(|(dz, m)| dz + m).collect();
        let d_lv: Vec<f64> = (0..d_z.len())
            .map(|i| {
                if !f.lv_free[i] {
                    return 0.0;
                }
                let std = (0.5 * f.logvar[i]).exp();
                d_z[i] * eps[i] * 0.5 * std + 0.5 * (f.logvar[i].exp() - 1.0)
            })
            .collect();
        let mut d_h = self.mu_head.backward(&f.h, &d_mu, g_mu);
        for (a, b) in d_h.iter_mut().zip(self.logvar_head.backward(&f.h, &d_lv, g_lv)) {
            *a += b;
        }
        let d_hpre: Vec<f64> = d_h.iter().zip(&f.h).map(|(d, h)| d * (1.0 - h * h)).collect();
        self.encoder.backward_params(x, &d_hpre, g_enc);
        (bce, kl)
    }

    pub fn encode(&self, x: &[f32]) -> Result<LatentStats> {
        self.check_input(x)?;
        let (_, mu, logvar, _) = self.encode_f64(&widen(x));
        Ok(LatentStats {
            mu: DenseTensor::from_f64(&[mu.len()], &mu)?,
            logvar: DenseTensor::from_f64(&[logvar.len()], &logvar)?,
        })
    }

    pub fn decode(&self, z: &[f32]) -> Result<DenseTensor> {
        if z.len() != self.latent_dim() {
            return Err(Error::shape("vae decode", &[z.len()], &[self.latent_dim()]));
        }
        let (_, logits) = self.decode_logits(&widen(z));
        let pixels: Vec<f64> = logits
            .iter()
            .map(|&l| sigmoid_scalar(l).clamp(PIXEL_FLOOR, PIXEL_CEIL))
            .collect();
        DenseTensor::from_f64(&[pixels.len()], &pixels)
    }

    /// Decodes the posterior mean of `x`.
    pub fn reconstruct(&self, x: &[f32]) -> Result<DenseTensor> {
        let stats = self.encode(x)?;
        self.decode(stats.mu.data())
    }

    pub fn to_archive(&self) -> Result<ModelArchive> {
        let mut archive = ModelArchive::new();
        let names = ["enc.w1", "enc.b1", "enc.mu.w", "enc.mu.b", "enc.lv.w", "enc.lv.b"];
        let dec = ["dec.w1", "dec.b1", "dec.w2", "dec.b2"];
        for (pair, layer) in names
            .chunks(2)
            .chain(dec.chunks(2))
            .zip(self.layers())
        {
            archive.push(pair[0], layer.weight.clone())?;
            archive.push(pair[1], layer.bias.clone())?;
        }
        let mut meta = vec![if self.trained { 1.0 } else { 0.0 }];
        meta.extend(self.epoch_losses.iter().map(|&v| v as f32));
        archive.push("vae.meta", DenseTensor::from_slice(&meta))?;
        Ok(archive)
    }

    pub fn from_archive(archive: &ModelArchive) -> Result<Self> {
        let layer = |w: &str, b: &str| -> Result<Affine> {
            Affine::from_parts(archive.require(w)?.clone(), archive.require(b)?.clone())
        };
        let meta = archive.require("vae.meta")?.data();
        let mut model = Self::from_layers(
            [
                layer("enc.w1", "enc.b1")?,
                layer("enc.mu.w", "enc.mu.b")?,
                layer("enc.lv.w", "enc.lv.b")?,
                layer("dec.w1", "dec.b1")?,
                layer("dec.w2", "dec.b2")?,
            ],
            meta[0] != 0.0,
        )?;
        model.epoch_losses = meta[1..].iter().map(|&v| v as f64).collect();
        Ok(model)
    }
}

/// `mu + tau * eps * exp(logvar / 2)`.
pub fn reparameterize(stats: &LatentStats, eps: &[f32], tau: f32) -> Result<DenseTensor> {
    if eps.len() != stats.mu.len() || stats.logvar.len() != stats.mu.len() {
        return Err(Error::shape("reparameterize", stats.mu.shape(), &[eps.len()]));
    }
    if !(tau >= 0.0) {
        return Err(Error::Parameter(format!("tau must be nonnegative, got {tau}")));
    }
    let z: Vec<f64> = stats
        .mu
        .data()
        .iter()
        .zip(stats.logvar.data())
        .zip(eps)
        .map(|((&m, &lv), &e)| m as f64 + tau as f64 * e as f64 * (0.5 * lv as f64).exp())
        .collect();
    DenseTensor::from_f64(stats.mu.shape(), &z)
}

/// Negative ELBO for one image and one noise draw, with parameter gradients.
pub fn elbo_loss(model: &VaeModel, x: &[f32], eps: &[f32]) -> Result<(f64, VaeGrads)> {
    model.check_input(x)?;
    if eps.len() != model.latent_dim() {
        return Err(Error::shape("elbo_loss", &[eps.len()], &[model.latent_dim()]));
    }
    let mut grads = model.zero_grads();
    let (bce, kl) = model.elbo_pass(&widen(x), &widen(eps), Some(&mut grads));
    Ok((bce + kl, grads))
}

/// Minibatch SGD on the negative ELBO.
pub fn train_vae(dataset: &ImageDataset, config: &VaeConfig, rng: &mut Rng) -> Result<VaeModel> {
    train_vae_with(dataset, config, rng, |_, _| {})
}

/// [`train_vae`] with a callback receiving `(epoch, mean loss)` after each epoch.
pub fn train_vae_with(
    dataset: &ImageDataset,
    config: &VaeConfig,
    rng: &mut Rng,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<VaeModel> {
    if dataset.is_empty() {
        return Err(Error::Parameter("cannot train on an empty dataset".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Parameter("batch size must be positive".into()));
    }
    let mut model = VaeModel::init(dataset.image_shape().len(), config, rng)?;
    if config.epochs == 0 {
        return Ok(model);
    }
    let latent = config.latent_dim;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut grads = model.zero_grads();
    let mut eps = vec![0.0f64; latent];
    for epoch in 1..=config.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.reset();
            for &i in batch {
                eps.iter_mut().for_each(|e| *e = rng.normal());
                let (bce, kl) = model.elbo_pass(&widen(dataset.pixels(i)), &eps, Some(&mut grads));
                total += bce + kl;
            }
            let scale = 1.0 / batch.len() as f64;
            for (layer, g) in [
                &mut model.encoder,
                &mut model.mu_head,
                &mut model.logvar_head,
                &mut model.dec_hidden,
                &mut model.dec_out,
            ]
            .into_iter()
            .zip(&grads.layers)
            {
                layer.apply(g, scale, config.lr)?;
            }
        }
        let mean = total / dataset.len() as f64;
        if !mean.is_finite() || !model.layers().iter().all(|l| l.all_finite()) {
            return Err(Error::Training { epoch, loss: mean });
        }
        model.epoch_losses.push(mean);
        on_epoch(epoch, mean);
    }
    model.trained = true;
    Ok(model)
}

/// `n` decoded samples around the posterior of `anchor`, one row per sample.
pub fn sample_neighborhood(
    model: &VaeModel,
    anchor: &[f32],
    n: usize,
    tau: f32,
    rng: &mut Rng,
) -> Result<DenseTensor> {
    if !model.is_trained() {
        return Err(Error::Usage("VAE must be trained before sampling".into()));
    }
    if n < 2 {
        return Err(Error::Parameter(format!("need at least 2 samples, got {n}")));
    }
    let stats = model.encode(anchor)?;
    let latent = model.latent_dim();
    let mut eps = vec![0.0f32; latent];
    let mut rows = Vec::with_capacity(n * model.input_dim());
    for _ in 0..n {
        eps.iter_mut().for_each(|e| *e = rng.normal() as f32);
        let z = reparameterize(&stats, &eps, tau)?;
        rows.extend_from_slice(model.decode(z.data())?.data());
    }
    DenseTensor::new(&[n, model.input_dim()], rows)
}

/// Mean squared error between images and their posterior-mean reconstructions.
pub fn reconstruction_mse(model: &VaeModel, dataset: &ImageDataset, count: usize) -> Result<f64> {
    let count = count.min(dataset.len());
    let mut total = 0.0;
    for i in 0..count {
        let x = dataset.pixels(i);
        let r = model.reconstruct(x)?;
        total += x
            .iter()
            .zip(r.data())
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum::<f64>()
            / x.len() as f64;
    }
    Ok(total / count.max(1) as f64)
}

/// Average KL term over the first `count` images.
pub fn mean_kl(model: &VaeModel, dataset: &ImageDataset, count: usize) -> Result<f64> {
    let count = count.min(dataset.len()).max(1);
    let mut total = 0.0;
    for i in 0..count {
        let s = model.encode(dataset.pixels(i))?;
        total += crate::numkit::kl_diag_gaussian_to_standard(&s.mu, &s.logvar)?;
    }
    Ok(total / count as f64)
}
