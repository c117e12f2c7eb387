//! Weak perturbations applied to the student's input.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::Augmentation;
use crate::field::Image;
use crate::{rng, Result};

/// Axis-aligned rectangle `[y0, y0 + h) x [x0, x0 + w)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub y0: usize,
    pub x0: usize,
    pub h: usize,
    pub w: usize,
}

impl Rect {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.y0 && y < self.y0 + self.h && x >= self.x0 && x < self.x0 + self.w
    }
}

/// Random draws for one augmentation, except the per-pixel noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentPlan {
    pub contrast: f64,
    pub erase: Option<Rect>,
}

/// Draws the contrast factor and optional erased rectangle (side lengths up
/// to half the image).
pub fn plan_augmentation(seed: u64, height: usize, width: usize, aug: &Augmentation) -> AugmentPlan {
    let mut r = rng::stream(seed, "augment-plan", 0, 0);
    let u: f64 = r.random();
    let contrast = 1.0 + aug.contrast * (2.0 * u - 1.0);
    let erase_draw: f64 = r.random();
    let h = r.random_range(1..=(height / 2).max(1));
    let w = r.random_range(1..=(width / 2).max(1));
    let y0 = r.random_range(0..=height - h);
    let x0 = r.random_range(0..=width - w);
    let erase = (erase_draw < aug.erase_prob).then_some(Rect { y0, x0, h, w });
    AugmentPlan { contrast, erase }
}

/// Noise, then contrast about the image mean, then erasing; clipped to `[0, 1]`.
pub fn augment(img: &Image, seed: u64, aug: &Augmentation) -> Result<Image> {
    let (h, w) = img.dims();
    let c = img.channels();
    let plan = plan_augmentation(seed, h, w, aug);
    let mut values = img.values().to_vec();
    if aug.noise_std > 0.0 {
        let mut r = rng::stream(seed, "augment-noise", 0, 0);
        for v in &mut values {
            let z: f64 = StandardNormal.sample(&mut r);
            *v += aug.noise_std * z;
        }
    }
    if aug.contrast > 0.0 {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        for v in &mut values {
            *v = mean + plan.contrast * (*v - mean);
        }
    }
    if let Some(rect) = plan.erase {
        for y in rect.y0..rect.y0 + rect.h {
            for x in rect.x0..rect.x0 + rect.w {
                for ch in 0..c {
                    values[(y * w + x) * c + ch] = 0.0;
                }
            }
        }
    }
    Image::new(h, w, c, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Image {
        Image::new(h, w, 1, (0..h * w).map(|i| i as f64 / (h * w) as f64).collect()).unwrap()
    }

    #[test]
    fn zero_strength_is_identity() {
        let img = ramp(6, 5);
        assert_eq!(augment(&img, 3, &Augmentation::none()).unwrap(), img);
    }

    #[test]
    fn contrast_preserves_constant_image() {
        let img = Image::new(4, 4, 1, vec![0.375; 16]).unwrap();
        let aug = Augmentation { contrast: 0.5, ..Augmentation::none() };
        for seed in 0..10 {
            assert_eq!(augment(&img, seed, &aug).unwrap(), img);
        }
    }

    #[test]
    fn erased_rectangle_is_zero() {
        let img = Image::new(8, 8, 1, vec![0.8; 64]).unwrap();
        let aug = Augmentation { erase_prob: 1.0, ..Augmentation::none() };
        let rect = plan_augmentation(5, 8, 8, &aug).erase.expect("always erases");
        let out = augment(&img, 5, &aug).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let want = if rect.contains(y, x) { 0.0 } else { 0.8 };
                assert_eq!(out.get(y, x, 0), want);
            }
        }
    }

    #[test]
    fn seeded() {
        let img = ramp(8, 8);
        let aug = Augmentation::default();
        assert_eq!(augment(&img, 1, &aug).unwrap(), augment(&img, 1, &aug).unwrap());
        assert_ne!(augment(&img, 1, &aug).unwrap(), augment(&img, 2, &aug).unwrap());
    }
}
