//! Procedural ultrasound-like frames with exact labels.
//!
//! Parenchymal frames show a bright horizontal pleural line over darker lung
//! with either A-lines (fainter horizontal repeats at multiples of the pleural
//! depth) or B-lines (bright vertical bands descending from the pleural line).
//! Pleural frames show a bright curved diaphragm arc with either an anechoic
//! pocket directly above it (effusion) or homogeneous tissue. Every frame is
//! scaled by a patient-level gain and overlaid with multiplicative speckle.
//! Frames of one video share their scene, perturbed slightly per frame.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Image, ImageRecord, Labels, PARENCHYMAL, PLEURAL};
use crate::rng::{self, StreamRng};
use crate::{Error, Result, FRAME_SIZE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_patients: usize,
    pub videos_per_patient: usize,
    pub frames_per_video: usize,
    /// Probability that a video is a pleural view.
    pub pleural_prior: f64,
    /// Probability that a parenchymal video shows B-lines.
    pub b_lines_prior: f64,
    /// Probability that a pleural video shows an effusion.
    pub effusion_prior: f64,
    /// Fraction of patients whose labels are stripped.
    pub unlabelled_fraction: f64,
    /// Standard deviation of the multiplicative speckle.
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_patients: 40,
            videos_per_patient: 2,
            frames_per_video: 8,
            pleural_prior: 0.4,
            b_lines_prior: 0.4,
            effusion_prior: 0.4,
            unlabelled_fraction: 0.25,
            noise_level: 0.35,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("pleural_prior", self.pleural_prior),
            ("b_lines_prior", self.b_lines_prior),
            ("effusion_prior", self.effusion_prior),
            ("unlabelled_fraction", self.unlabelled_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(
                    format!("synthetic.{field}"),
                    format!("must lie in [0, 1], got {v}"),
                ));
            }
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(Error::config(
                "synthetic.noise_level",
                format!("must be a finite value >= 0, got {}", self.noise_level),
            ));
        }
        Ok(())
    }

    pub fn total_frames(&self) -> usize {
        self.n_patients * self.videos_per_patient * self.frames_per_video
    }
}

/// Ground-truth rendering parameters of one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Scene {
    Parenchymal {
        pleura_depth: f64,
        /// Gain of the horizontal reverberations relative to the pleural line.
        a_line_gain: f64,
        /// Centre columns of the vertical comet bands; empty for A-line scenes.
        b_lines: Vec<f64>,
    },
    Pleural {
        arc_top: f64,
        /// Vertical extent of the anechoic pocket; `None` without effusion.
        effusion_depth: Option<f64>,
    },
}

impl Scene {
    /// Labels implied by the scene parameters.
    pub fn labels(&self) -> Labels {
        match self {
            Scene::Parenchymal { b_lines, .. } => Labels {
                view: Some(PARENCHYMAL),
                ab: Some(u8::from(!b_lines.is_empty())),
                pe: None,
            },
            Scene::Pleural { effusion_depth, .. } => Labels {
                view: Some(PLEURAL),
                ab: None,
                pe: Some(u8::from(effusion_depth.is_some())),
            },
        }
    }
}

/// Full parameter set for one video; `Scene` is its label-bearing summary.
#[derive(Debug, Clone)]
struct VideoParams {
    scene: Scene,
    tissue: f64,
    line_intensity: f64,
    line_sigma: f64,
    tilt: f64,
    b_width: f64,
    b_intensity: f64,
    effusion_level: f64,
    arc_center_x: f64,
    arc_radius: f64,
    /// Probe zoom about `(zoom_cx, zoom_cy)`; values above 1 magnify.
    zoom: f64,
    zoom_cx: f64,
    zoom_cy: f64,
    mirrored: bool,
    /// Contrast about the frame mean; below 1 washes the frame out.
    contrast: f64,
    speckle: f64,
    gain: f64,
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Dataset> {
    generate_synthetic_with_scenes(config).map(|(d, _)| d)
}

/// Like [`generate_synthetic`], also returning the scene of each record (same
/// order) so labels can be checked against the generator's parameters.
pub fn generate_synthetic_with_scenes(config: &SyntheticConfig) -> Result<(Dataset, Vec<Scene>)> {
    config.validate()?;
    let mut patient_rng = rng::stream(config.seed, &[0]);
    let mut order: Vec<usize> = (0..config.n_patients).collect();
    order.shuffle(&mut patient_rng);
    let n_unlabelled = (config.unlabelled_fraction * config.n_patients as f64).round() as usize;
    let mut unlabelled = vec![false; config.n_patients];
    for &p in order.iter().take(n_unlabelled) {
        unlabelled[p] = true;
    }

    let mut records = Vec::with_capacity(config.total_frames());
    let mut scenes = Vec::with_capacity(config.total_frames());
    for p in 0..config.n_patients {
        let mut prng = rng::stream(config.seed, &[1, p as u64]);
        let gain = prng.random_range(0.65..1.35);
        let patient_id = format!("p{p:04}");
        for v in 0..config.videos_per_patient {
            let mut vrng = rng::stream(config.seed, &[2, p as u64, v as u64]);
            let params = sample_video(config, gain, &mut vrng);
            let video_id = format!("{patient_id}_v{v:02}");
            let labels = if unlabelled[p] {
                Labels::default()
            } else {
                params.scene.labels()
            };
            for f in 0..config.frames_per_video {
                let mut frng = rng::stream(config.seed, &[3, p as u64, v as u64, f as u64]);
                let pixels = render(&params, &mut frng);
                records.push(ImageRecord::new(
                    format!("{video_id}_f{f:03}"),
                    patient_id.clone(),
                    video_id.clone(),
                    f as u32,
                    pixels,
                    labels,
                )?);
                scenes.push(params.scene.clone());
            }
        }
    }
    Ok((Dataset::new(format!("synthetic-{}", config.seed), records)?, scenes))
}

fn sample_video(config: &SyntheticConfig, gain: f64, rng: &mut StreamRng) -> VideoParams {
    let pleural = rng.random_bool(config.pleural_prior);
    let positive = rng.random_bool(if pleural {
        config.effusion_prior
    } else {
        config.b_lines_prior
    });
    let size = FRAME_SIZE as f64;
    let scene = if pleural {
        let arc_top = rng.random_range(0.35..0.6) * size;
        let effusion_depth = positive.then(|| rng.random_range(0.06..0.16) * size);
        Scene::Pleural {
            arc_top,
            effusion_depth,
        }
    } else {
        let pleura_depth = rng.random_range(0.16..0.32) * size;
        let (a_line_gain, b_lines) = if positive {
            let n = rng.random_range(1..=2);
            let cols = (0..n).map(|_| rng.random_range(0.2..0.8) * size).collect();
            (rng.random_range(0.0..0.35), cols)
        } else {
            (rng.random_range(0.2..0.55), Vec::new())
        };
        Scene::Parenchymal {
            pleura_depth,
            a_line_gain,
            b_lines,
        }
    };
    VideoParams {
        scene,
        tissue: rng.random_range(0.22..0.38),
        line_intensity: rng.random_range(0.6..0.95),
        line_sigma: rng.random_range(1.0..2.0),
        tilt: rng.random_range(-0.15..0.15),
        b_width: rng.random_range(1.2..2.5),
        b_intensity: rng.random_range(0.2..0.45),
        effusion_level: rng.random_range(0.1..0.35),
        arc_center_x: rng.random_range(0.25..0.75) * size,
        arc_radius: rng.random_range(0.6..1.4) * size,
        zoom: rng.random_range(1.0..1.4),
        zoom_cx: rng.random_range(0.3..0.7) * size,
        zoom_cy: rng.random_range(0.3..0.7) * size,
        mirrored: rng.random_bool(0.5),
        contrast: rng.random_range(0.4..1.0),
        speckle: config.noise_level * rng.random_range(0.6..1.6),
        gain,
    }
}

fn gaussian(d: f64, sigma: f64) -> f64 {
    (-0.5 * (d / sigma).powi(2)).exp()
}

/// Noise-free echo intensity at scene coordinates `(x, y)`.
fn echo(p: &VideoParams, x: f64, y: f64, shift: f64, col_jitter: f64) -> f64 {
    let size = FRAME_SIZE as f64;
    let mut v = p.tissue * (1.0 - 0.35 * y / size);
    match &p.scene {
        Scene::Parenchymal {
            pleura_depth,
            a_line_gain,
            b_lines,
        } => {
            let depth = pleura_depth + shift + p.tilt * (x - size / 2.0);
            if y > depth {
                // aerated lung is darker than the chest wall
                v *= 0.45;
            }
            v += p.line_intensity * gaussian(y - depth, p.line_sigma);
            let mut k = 2.0;
            while k * depth < size + 3.0 * p.line_sigma {
                v += p.line_intensity * a_line_gain * 0.8f64.powf(k - 2.0) * gaussian(y - k * depth, p.line_sigma);
                k += 1.0;
            }
            if y > depth {
                let fade = 1.0 - 0.4 * (y - depth) / (size - depth).max(1.0);
                for &col in b_lines {
                    v += p.b_intensity * fade * gaussian(x - col - col_jitter, p.b_width);
                }
            }
        }
        Scene::Pleural {
            arc_top,
            effusion_depth,
        } => {
            let cy = arc_top + shift + p.arc_radius;
            let d = ((x - p.arc_center_x).powi(2) + (y - cy).powi(2)).sqrt();
            if d < p.arc_radius {
                // solid organ below the diaphragm
                v *= 1.3;
            } else if let Some(e) = effusion_depth {
                if d < p.arc_radius + e {
                    v *= p.effusion_level;
                }
            }
            v += p.line_intensity * gaussian(d - p.arc_radius, 1.5 * p.line_sigma);
        }
    }
    v
}

fn render(p: &VideoParams, rng: &mut StreamRng) -> Image {
    let n = FRAME_SIZE;
    let size = n as f64;
    // probe motion and gain drift between frames
    let shift: f64 = Normal::new(0.0, 1.0).unwrap().sample(rng);
    let drift = 1.0 + 0.03 * rng.sample::<f64, _>(StandardNormal);
    let col_jitter: f64 = rng.sample::<f64, _>(StandardNormal);

    let mut clean = Vec::with_capacity(n * n);
    for y in 0..n {
        let sy = p.zoom_cy + (y as f64 - p.zoom_cy) / p.zoom;
        for x in 0..n {
            let xf = if p.mirrored { size - 1.0 - x as f64 } else { x as f64 };
            let sx = p.zoom_cx + (xf - p.zoom_cx) / p.zoom;
            clean.push(echo(p, sx, sy, shift, col_jitter) * p.gain * drift);
        }
    }
    let mean = clean.iter().sum::<f64>() / clean.len() as f64;
    let data = clean
        .into_iter()
        .map(|v| {
            let v = mean + p.contrast * (v - mean);
            let speckle = (1.0 + p.speckle * rng.sample::<f64, _>(StandardNormal)).max(0.0);
            (v * speckle).clamp(0.0, 1.0) as f32
        })
        .collect();
    Image {
        width: n,
        height: n,
        data,
    }
}
