//! Stochastic transform family used to build positive pairs.
//!
//! Order: crop → flip → noise → {brightness, contrast}, where contrast runs
//! before brightness with probability `contrast_first_prob`. Every transform
//! fires independently. Random draws happen in a fixed sequence regardless of
//! which transforms fire, so one `apply` always consumes the same decisions.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{resize_bilinear, Image};
use crate::{Error, Result, FRAME_SIZE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationPolicy {
    pub crop_prob: f64,
    /// Fraction of the frame area kept by a crop.
    pub crop_area_range: (f64, f64),
    pub flip_prob: f64,
    pub noise_prob: f64,
    pub noise_sigma_range: (f64, f64),
    pub brightness_prob: f64,
    pub brightness_range: (f64, f64),
    pub contrast_prob: f64,
    pub contrast_range: (f64, f64),
    pub contrast_first_prob: f64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self {
            crop_prob: 0.8,
            crop_area_range: (0.5, 1.0),
            flip_prob: 0.5,
            noise_prob: 0.5,
            noise_sigma_range: (0.0, 0.1),
            brightness_prob: 0.7,
            brightness_range: (0.5, 1.5),
            contrast_prob: 0.7,
            contrast_range: (0.6, 1.0),
            contrast_first_prob: 0.5,
        }
    }
}

impl AugmentationPolicy {
    /// A policy that never changes its input.
    pub fn identity() -> Self {
        Self {
            crop_prob: 0.0,
            flip_prob: 0.0,
            noise_prob: 0.0,
            brightness_prob: 0.0,
            contrast_prob: 0.0,
            contrast_first_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("crop_prob", self.crop_prob),
            ("flip_prob", self.flip_prob),
            ("noise_prob", self.noise_prob),
            ("brightness_prob", self.brightness_prob),
            ("contrast_prob", self.contrast_prob),
            ("contrast_first_prob", self.contrast_first_prob),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(
                    format!("augmentation.{name}"),
                    format!("probability must lie in [0, 1], got {p}"),
                ));
            }
        }
        let ranges = [
            ("crop_area_range", self.crop_area_range),
            ("noise_sigma_range", self.noise_sigma_range),
            ("brightness_range", self.brightness_range),
            ("contrast_range", self.contrast_range),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::config(
                    format!("augmentation.{name}"),
                    format!("need low <= high, got ({lo}, {hi})"),
                ));
            }
        }
        let (lo, hi) = self.crop_area_range;
        if !(lo > 0.0 && hi <= 1.0) {
            return Err(Error::config(
                "augmentation.crop_area_range",
                "crop areas must lie in (0, 1]",
            ));
        }
        if self.noise_sigma_range.0 < 0.0 || self.brightness_range.0 < 0.0 || self.contrast_range.0 < 0.0 {
            return Err(Error::config(
                "augmentation",
                "noise, brightness and contrast ranges must be non-negative",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropWindow {
    pub x: usize,
    pub y: usize,
    pub side: usize,
}

/// Which transforms fired during one `apply`, with their sampled parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AppliedTransforms {
    pub crop: Option<CropWindow>,
    pub flip: bool,
    pub noise_sigma: Option<f64>,
    pub brightness: Option<f64>,
    pub contrast: Option<f64>,
    pub contrast_first: bool,
}

fn uniform<R: RngCore + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn fires<R: RngCore + ?Sized>(rng: &mut R, p: f64) -> bool {
    rng.random::<f64>() < p
}

pub fn apply<R: RngCore + ?Sized>(policy: &AugmentationPolicy, image: &Image, rng: &mut R) -> Image {
    apply_traced(policy, image, rng).0
}

pub fn apply_traced<R: RngCore + ?Sized>(
    policy: &AugmentationPolicy,
    image: &Image,
    rng: &mut R,
) -> (Image, AppliedTransforms) {
    let mut trace = AppliedTransforms::default();
    let mut out = image.clone();

    if fires(rng, policy.crop_prob) {
        let area = uniform(rng, policy.crop_area_range);
        let side = ((area.sqrt() * FRAME_SIZE as f64).round() as usize).clamp(1, FRAME_SIZE);
        let span = FRAME_SIZE - side;
        let x = rng.random_range(0..=span);
        let y = rng.random_range(0..=span);
        trace.crop = Some(CropWindow { x, y, side });
        out = crop_resize(&out, x, y, side);
    }

    if fires(rng, policy.flip_prob) {
        trace.flip = true;
        for row in out.data.chunks_exact_mut(out.width) {
            row.reverse();
        }
    }

    if fires(rng, policy.noise_prob) {
        let sigma = uniform(rng, policy.noise_sigma_range);
        trace.noise_sigma = Some(sigma);
        for v in &mut out.data {
            let n: f64 = rng.sample(StandardNormal);
            *v = ((*v as f64) * (1.0 + sigma * n)).clamp(0.0, 1.0) as f32;
        }
    }

    trace.contrast_first = fires(rng, policy.contrast_first_prob);
    if fires(rng, policy.brightness_prob) {
        trace.brightness = Some(uniform(rng, policy.brightness_range));
    }
    if fires(rng, policy.contrast_prob) {
        trace.contrast = Some(uniform(rng, policy.contrast_range));
    }
    if trace.contrast_first {
        trace.contrast.inspect(|&c| adjust_contrast(&mut out, c));
        trace.brightness.inspect(|&c| adjust_brightness(&mut out, c));
    } else {
        trace.brightness.inspect(|&c| adjust_brightness(&mut out, c));
        trace.contrast.inspect(|&c| adjust_contrast(&mut out, c));
    }
    (out, trace)
}

/// Two independent draws of [`apply`] on the same source.
pub fn make_pair<R: RngCore + ?Sized>(
    policy: &AugmentationPolicy,
    image: &Image,
    rng: &mut R,
) -> (Image, Image) {
    let a = apply(policy, image, rng);
    let b = apply(policy, image, rng);
    (a, b)
}

fn crop_resize(image: &Image, x: usize, y: usize, side: usize) -> Image {
    let mut window = Vec::with_capacity(side * side);
    for row in y..y + side {
        let start = row * image.width + x;
        window.extend_from_slice(&image.data[start..start + side]);
    }
    let window = Image {
        width: side,
        height: side,
        data: window,
    };
    resize_bilinear(&window, FRAME_SIZE, FRAME_SIZE).expect("crop window is non-empty")
}

fn adjust_brightness(image: &mut Image, factor: f64) {
    for v in &mut image.data {
        *v = ((*v as f64) * factor).clamp(0.0, 1.0) as f32;
    }
}

fn adjust_contrast(image: &mut Image, factor: f64) {
    let mean = image.data.iter().map(|&v| v as f64).sum::<f64>() / image.data.len().max(1) as f64;
    for v in &mut image.data {
        *v = (mean + factor * ((*v as f64) - mean)).clamp(0.0, 1.0) as f32;
    }
}
