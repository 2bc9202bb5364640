//! Deletion/insertion faithfulness curves, their AUC, and the occlusion and
//! random-order baselines.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::explain::SaliencyMap;
use crate::numkit::{DenseTensor, Rng};
use crate::teacher::Classifier;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveConfig {
    pub step_fraction: f64,
    pub baseline_value: f32,
}

impl Default for CurveConfig {
    fn default() -> Self {
        Self {
            step_fraction: 0.02,
            baseline_value: 0.0,
        }
    }
}

/// `(fraction of pixels changed, anchor-class probability)` pairs and their AUC.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationCurve {
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// Trapezoidal area under `points`, divided by the covered fraction span.
pub fn auc_trapezoid(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::Parameter(format!(
            "AUC needs at least 2 points, got {}",
            points.len()
        )));
    }
    let mut area = 0.0;
    for pair in points.windows(2) {
        let ((x0, y0), (x1, y1)) = (pair[0], pair[1]);
        if !(x1 > x0) {
            return Err(Error::Parameter("curve fractions must strictly increase".into()));
        }
        area += 0.5 * (x1 - x0) * (y0 + y1);
    }
    let span = points[points.len() - 1].0 - points[0].0;
    Ok(area / span)
}

fn validate_ordering(ordering: &[usize], pixels: usize) -> Result<()> {
    if ordering.len() != pixels {
        return Err(Error::Parameter(format!(
            "ordering has {} entries for {pixels} pixels",
            ordering.len()
        )));
    }
    let mut seen = vec![false; pixels];
    for &p in ordering {
        if p >= pixels || std::mem::replace(&mut seen[p], true) {
            return Err(Error::Parameter(format!("ordering is not a permutation (index {p})")));
        }
    }
    Ok(())
}

fn image_dims(anchor: &DenseTensor) -> Result<(usize, usize)> {
    if anchor.rank() != 3 {
        return Err(Error::shape("perturbation", anchor.shape(), &[0, 0, 0]));
    }
    Ok((anchor.shape()[0] * anchor.shape()[1], anchor.shape()[2]))
}

/// Pixel counts changed at each curve step, paired with their fraction.
fn schedule(step_fraction: f64, pixels: usize) -> Result<Vec<(f64, usize)>> {
    if !(step_fraction > 0.0 && step_fraction <= 1.0) {
        return Err(Error::Parameter(format!(
            "step fraction must be in (0, 1], got {step_fraction}"
        )));
    }
    let steps = (1.0 / step_fraction - 1e-9).ceil() as usize;
    Ok((0..=steps)
        .map(|t| {
            let f = if t == steps { 1.0 } else { t as f64 * step_fraction };
            (f, (f * pixels as f64).round() as usize)
        })
        .collect())
}

fn fill_pixel(image: &mut [f32], pixel: usize, channels: usize, source: Option<&[f32]>, value: f32) {
    let span = pixel * channels..(pixel + 1) * channels;
    match source {
        Some(src) => image[span.clone()].copy_from_slice(&src[span]),
        None => image[span].iter_mut().for_each(|v| *v = value),
    }
}

fn perturbation_curve(
    teacher: &impl Classifier,
    anchor: &DenseTensor,
    ordering: &[usize],
    config: CurveConfig,
    insert: bool,
) -> Result<PerturbationCurve> {
    let (pixels, channels) = image_dims(anchor)?;
    validate_ordering(ordering, pixels)?;
    let class = teacher.predict(anchor.data())?;
    let mut image = if insert {
        vec![config.baseline_value; anchor.len()]
    } else {
        anchor.data().to_vec()
    };
    let mut done = 0;
    let mut points = Vec::new();
    for (fraction, count) in schedule(config.step_fraction, pixels)? {
        for &p in &ordering[done..count] {
            let source = insert.then_some(anchor.data());
            fill_pixel(&mut image, p, channels, source, config.baseline_value);
        }
        done = count;
        points.push((fraction, teacher.predict_proba(&image)?[class]));
    }
    let auc = auc_trapezoid(&points)?;
    Ok(PerturbationCurve { points, auc })
}

/// Anchor-class probability as the highest-ranked pixels are replaced by the baseline.
pub fn deletion_curve(
    teacher: &impl Classifier,
    anchor: &DenseTensor,
    ordering: &[usize],
    config: CurveConfig,
) -> Result<PerturbationCurve> {
    perturbation_curve(teacher, anchor, ordering, config, false)
}

/// Anchor-class probability as the highest-ranked pixels are revealed on a baseline image.
pub fn insertion_curve(
    teacher: &impl Classifier,
    anchor: &DenseTensor,
    ordering: &[usize],
    config: CurveConfig,
) -> Result<PerturbationCurve> {
    perturbation_curve(teacher, anchor, ordering, config, true)
}

fn window_starts(extent: usize, window: usize, stride: usize) -> Vec<usize> {
    let last = extent - window;
    let mut starts: Vec<usize> = (0..=last).step_by(stride).collect();
    if starts.last() != Some(&last) {
        starts.push(last);
    }
    starts
}

/// Occlusion sensitivity: every pixel gets the mean drop in anchor-class
/// probability over the `window x window` occluders covering it.
pub fn occlusion_saliency(
    teacher: &impl Classifier,
    anchor: &DenseTensor,
    window: usize,
    stride: usize,
    baseline_value: f32,
) -> Result<SaliencyMap> {
    image_dims(anchor)?;
    let (h, w, c) = (anchor.shape()[0], anchor.shape()[1], anchor.shape()[2]);
    if window.is_multiple_of(2) || window > h.min(w) {
        return Err(Error::Parameter(format!(
            "occlusion window must be odd and at most {}, got {window}",
            h.min(w)
        )));
    }
    if stride == 0 {
        return Err(Error::Parameter("occlusion stride must be positive".into()));
    }
    let class = teacher.predict(anchor.data())?;
    let clean = teacher.predict_proba(anchor.data())?[class];
    let mut sum = vec![0.0f64; h * w];
    let mut count = vec![0u32; h * w];
    let mut image = anchor.data().to_vec();
    for top in window_starts(h, window, stride) {
        for left in window_starts(w, window, stride) {
            image.copy_from_slice(anchor.data());
            for y in top..top + window {
                for x in left..left + window {
                    fill_pixel(&mut image, y * w + x, c, None, baseline_value);
                }
            }
            let drop = clean - teacher.predict_proba(&image)?[class];
            for y in top..top + window {
                for x in left..left + window {
                    sum[y * w + x] += drop;
                    count[y * w + x] += 1;
                }
            }
        }
    }
    let raw: Vec<f64> = sum
        .iter()
        .zip(&count)
        .map(|(&s, &n)| s / n as f64)
        .collect();
    SaliencyMap::from_raw(DenseTensor::from_f64(&[h, w], &raw)?)
}

/// Uniform random permutation of the `h * w` pixel indices.
pub fn random_ordering(h: usize, w: usize, rng: &mut Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..h * w).collect();
    rng.shuffle(&mut order);
    order
}

/// Share of the normalized saliency mass of the top `top_fraction` pixels
/// (by raw ranking) that lies in the left half of the image.
pub fn left_half_mass(map: &SaliencyMap, top_fraction: f64) -> f64 {
    let width = map.width();
    let take = ((map.ordering.len() as f64 * top_fraction).round() as usize).max(1);
    let values = map.normalized.data();
    let (mut left, mut total) = (0.0, 0.0);
    for &p in &map.ordering[..take] {
        let v = values[p] as f64;
        total += v;
        if p % width < width / 2 {
            left += v;
        }
    }
    if total > 0.0 {
        left / total
    } else {
        0.0
    }
}

/// Mean deletion and insertion AUC of one method across evaluated images.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodScore {
    pub method: String,
    pub deletion_auc: f64,
    pub insertion_auc: f64,
}

/// Aligned plain-text table, one row per method.
pub fn format_summary(rows: &[MethodScore]) -> String {
    let width = rows
        .iter()
        .map(|r| r.method.len())
        .chain(["method".len()])
        .max()
        .unwrap_or(6);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>12}  {:>13}", "method", "deletion_auc", "insertion_auc");
    for r in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>12.6}  {:>13.6}",
            r.method, r.deletion_auc, r.insertion_auc
        );
    }
    out
}
