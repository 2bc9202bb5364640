//! Procedural shapes corpus for offline runs.

use super::ImageDataset;
use crate::error::{Error, Result};
use crate::numkit::{DenseTensor, Rng};

const NOISE_SIGMA: f64 = 0.05;

/// Shape family rendered for each class index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Square,
    Circle,
    Cross,
    Triangle,
    Bar,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 5] = [
        ShapeKind::Square,
        ShapeKind::Circle,
        ShapeKind::Cross,
        ShapeKind::Triangle,
        ShapeKind::Bar,
    ];

    pub fn for_class(class: usize) -> Option<Self> {
        Self::ALL.get(class).copied()
    }

    /// Whether the pixel at offset `(dy, dx)` from the top-left corner of a
    /// `size`-wide bounding box is inside the shape. Offsets are pixel centers.
    fn covers(self, dy: f64, dx: f64, size: f64) -> bool {
        let half = size / 2.0;
        let (cy, cx) = (dy - half, dx - half);
        let arm = (size / 6.0).max(1.0);
        match self {
            ShapeKind::Square => true,
            ShapeKind::Circle => cy * cy + cx * cx <= half * half,
            ShapeKind::Cross => cy.abs() <= arm || cx.abs() <= arm,
            // apex at the top, base along the bottom edge
            ShapeKind::Triangle => cx.abs() <= (dy / size) * half,
            ShapeKind::Bar => cy.abs() <= arm,
        }
    }
}

/// `n` images of `h x w`; image `i` has class `i % k` so classes are balanced
/// up to rounding. Each shape gets a random size in `[min(h,w)/3, min(h,w)/2]`
/// and a random position that keeps it inside the frame, then Gaussian noise
/// with sigma 0.05 is added and pixels are clamped to `[0, 1]`.
pub fn synth_shapes(n: usize, h: usize, w: usize, k: usize, rng: &mut Rng) -> Result<ImageDataset> {
    if !(2..=ShapeKind::ALL.len()).contains(&k) {
        return Err(Error::Parameter(format!(
            "shape classes must be in 2..=5, got {k}"
        )));
    }
    if h < 16 || w < 16 {
        return Err(Error::Parameter(format!(
            "shape images must be at least 16x16, got {h}x{w}"
        )));
    }
    if n == 0 {
        return Err(Error::Parameter("shape count must be positive".into()));
    }
    let side = h.min(w);
    let (lo, hi) = (side / 3, side / 2);
    let mut data = vec![0.0f32; n * h * w];
    let mut labels = Vec::with_capacity(n);
    for (i, img) in data.chunks_exact_mut(h * w).enumerate() {
        let class = i % k;
        labels.push(class);
        let kind = ShapeKind::ALL[class];
        let size = lo + rng.below(hi - lo + 1);
        let top = rng.below(h - size + 1);
        let left = rng.below(w - size + 1);
        for y in 0..h {
            for x in 0..w {
                let inside = y >= top && y < top + size && x >= left && x < left + size && {
                    let dy = (y - top) as f64 + 0.5;
                    let dx = (x - left) as f64 + 0.5;
                    kind.covers(dy, dx, size as f64)
                };
                let base = if inside { 1.0 } else { 0.0 };
                let v = base + NOISE_SIGMA * rng.normal();
                img[y * w + x] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    let images = DenseTensor::new(&[n, h, w, 1], data)?;
    ImageDataset::new(images, labels, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_two_class() {
        let ds = synth_shapes(100, 16, 16, 2, &mut Rng::seed_from(1)).unwrap();
        let squares = ds.labels().iter().filter(|&&l| l == 0).count();
        assert_eq!(squares, 50);
        assert_eq!(ds.len() - squares, 50);
        assert_eq!(ds.classes(), 2);
    }

    #[test]
    fn deterministic_and_clamped() {
        let a = synth_shapes(30, 16, 20, 5, &mut Rng::seed_from(9)).unwrap();
        let b = synth_shapes(30, 16, 20, 5, &mut Rng::seed_from(9)).unwrap();
        assert_eq!(a, b);
        assert!(a.images().data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a.image_shape().dims(), [16, 20, 1]);
    }

    #[test]
    fn rejects_bad_parameters() {
        let mut rng = Rng::seed_from(0);
        assert!(matches!(synth_shapes(10, 16, 16, 1, &mut rng), Err(Error::Parameter(_))));
        assert!(matches!(synth_shapes(10, 16, 16, 6, &mut rng), Err(Error::Parameter(_))));
        assert!(matches!(synth_shapes(10, 8, 16, 2, &mut rng), Err(Error::Parameter(_))));
    }

    #[test]
    fn shapes_are_distinguishable() {
        // mean foreground coverage differs between a square and a cross of equal size
        let size = 8.0;
        let count = |k: ShapeKind| {
            (0..8)
                .flat_map(|y| (0..8).map(move |x| (y, x)))
                .filter(|&(y, x)| k.covers(y as f64 + 0.5, x as f64 + 0.5, size))
                .count()
        };
        let counts: Vec<usize> = ShapeKind::ALL.iter().map(|&k| count(k)).collect();
        assert_eq!(counts[0], 64);
        for c in &counts[1..] {
            assert!(*c > 0 && *c < 64, "{counts:?}");
        }
    }
}
