#![allow(dead_code)]

use relabel_distill::numkit::{Affine, DenseTensor};
use relabel_distill::teacher::TeacherModel;
use relabel_distill::vae::VaeModel;

pub const FD_STEP: f32 = 1e-3;

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps components whose
/// gradient is numerically zero from dividing by rounding noise.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Mutable reference to the `k`-th scalar across a parameter list.
pub fn flat_slot(params: Vec<&mut DenseTensor>, mut k: usize) -> &mut f32 {
    for t in params {
        if k < t.len() {
            return &mut t.data_mut()[k];
        }
        k -= t.len();
    }
    panic!("parameter index out of range");
}

/// Largest relative error between `analytic` and central finite differences
/// of `loss`, perturbing each scalar reached through `slot`.
///
/// Parameters are f32, so `x +- h` is rounded; the quotient uses the step
/// that was actually taken.
pub fn max_fd_error<M: Clone>(
    model: &M,
    analytic: &[f64],
    floor: f64,
    mut slot: impl FnMut(&mut M, usize) -> &mut f32,
    loss: impl Fn(&M) -> f64,
) -> f64 {
    let mut work = model.clone();
    let mut worst = 0.0f64;
    for (k, &a) in analytic.iter().enumerate() {
        let orig = *slot(&mut work, k);
        let (plus, minus) = (orig + FD_STEP, orig - FD_STEP);
        *slot(&mut work, k) = plus;
        let up = loss(&work);
        *slot(&mut work, k) = minus;
        let down = loss(&work);
        *slot(&mut work, k) = orig;
        let numeric = (up - down) / (plus as f64 - minus as f64);
        worst = worst.max(relative_error(a, numeric, floor));
    }
    worst
}

pub const PLANTED_SIDE: usize = 8;

/// Latent `j` drives one 4x2 pixel block; the first four blocks tile the
/// left half, the rest the right half. The posterior is the prior for every
/// input, and the zero latent decodes to a flat 0.5 image.
pub fn planted_vae() -> VaeModel {
    let side = PLANTED_SIDE;
    let d = side * side;
    let latent = 8;
    let zeros = |o: usize, i: usize| Affine::from_parts(DenseTensor::zeros(&[o, i]), DenseTensor::zeros(&[o])).unwrap();
    let mut eye = vec![0.0f32; latent * latent];
    for j in 0..latent {
        eye[j * latent + j] = 1.0;
    }
    let dec_hidden = Affine::from_parts(DenseTensor::new(&[latent, latent], eye).unwrap(), DenseTensor::zeros(&[latent])).unwrap();
    let mut out = vec![0.0f32; d * latent];
    for p in 0..d {
        out[p * latent + block_of(p)] = 3.0;
    }
    let dec_out = Affine::from_parts(DenseTensor::new(&[d, latent], out).unwrap(), DenseTensor::zeros(&[d])).unwrap();
    VaeModel::from_layers([zeros(2, d), zeros(latent, 2), zeros(latent, 2), dec_hidden, dec_out], true).unwrap()
}

fn block_of(p: usize) -> usize {
    let (r, c) = (p / PLANTED_SIDE, p % PLANTED_SIDE);
    if c < PLANTED_SIDE / 2 {
        (r / 4) * 2 + c / 2
    } else {
        4 + (r / 4) * 2 + (c - PLANTED_SIDE / 2) / 2
    }
}

pub fn is_left(p: usize) -> bool {
    p % PLANTED_SIDE < PLANTED_SIDE / 2
}

/// Class-0 logit `gain * (mean of left-half pixels - 0.45)`, class-1 logit 0.
/// Right-half pixels have exactly zero weight.
pub fn planted_teacher() -> TeacherModel {
    let d = PLANTED_SIDE * PLANTED_SIDE;
    let left = (d / 2) as f32;
    let threshold = 0.45f32;
    let gain = 40.0f32;
    let mut w1 = vec![0.0f32; 2 * d];
    for p in (0..d).filter(|&p| is_left(p)) {
        w1[p] = 1.0 / left;
        w1[d + p] = -1.0 / left;
    }
    let hidden = Affine::from_parts(DenseTensor::new(&[2, d], w1).unwrap(), DenseTensor::from_slice(&[-threshold, threshold])).unwrap();
    let output = Affine::from_parts(
        DenseTensor::new(&[2, 2], vec![gain, -gain, 0.0, 0.0]).unwrap(),
        DenseTensor::zeros(&[2]),
    )
    .unwrap();
    TeacherModel::from_layers(hidden, output).unwrap()
}

pub fn planted_anchor() -> DenseTensor {
    DenseTensor::filled(&[PLANTED_SIDE, PLANTED_SIDE, 1], 0.5)
}
