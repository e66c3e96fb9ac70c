//! Synthetic normalized iris images for tests and demos: one smooth random
//! texture per class, observed with additive noise, a random circular
//! shift and a random occluded block.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bits::BitPlane;
use crate::error::{Error, Result};
use crate::imgio::{save_manifest, write_mask_pgm, write_pgm, DatasetManifest, Eye, ManifestRecord, NormalizedIris};
use crate::seeds::{purpose, rng_from};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub classes: usize,
    pub samples_per_class: usize,
    pub width: usize,
    pub height: usize,
    /// Standard deviation (pixels) of the Gaussian that smooths the texture.
    pub blur_sigma: f64,
    /// Grey-level standard deviation of the per-sample noise.
    pub noise_sigma: f64,
    /// Largest circular shift between any two samples of a class; each
    /// sample is shifted by at most half of it.
    pub max_shift: usize,
    /// Largest occluded fraction of the image.
    pub max_occlusion: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 20,
            samples_per_class: 4,
            width: 512,
            height: 64,
            blur_sigma: 1.5,
            noise_sigma: 25.0,
            max_shift: 16,
            max_occlusion: 0.25,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.samples_per_class == 0 || self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("synthetic dataset dimensions must be positive".into()));
        }
        if !(self.blur_sigma >= 0.0 && self.noise_sigma >= 0.0) {
            return Err(Error::InvalidArgument("blur and noise must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.max_occlusion) {
            return Err(Error::InvalidArgument("occlusion fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub class: usize,
    pub sample: usize,
    pub shift: i64,
    pub occluded: usize,
    pub iris: NormalizedIris,
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Smooth texture with mean 128 and standard deviation 40 before clamping;
/// wraps along columns, clamps along rows.
pub fn class_texture(seed: u64, class: usize, width: usize, height: usize, blur_sigma: f64) -> Vec<f64> {
    let mut rng = rng_from(seed, &[purpose::SYNTH, 0, class as u64]);
    let noise: Vec<f64> = (0..width * height).map(|_| rng.sample(StandardNormal)).collect();
    let k = gaussian_kernel(blur_sigma);
    let r = (k.len() / 2) as i64;
    let mut tmp = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            tmp[y * width + x] = k
                .iter()
                .enumerate()
                .map(|(i, c)| c * noise[y * width + (x as i64 + i as i64 - r).rem_euclid(width as i64) as usize])
                .sum();
        }
    }
    let mut out = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            out[y * width + x] = k
                .iter()
                .enumerate()
                .map(|(i, c)| c * tmp[(y as i64 + i as i64 - r).clamp(0, height as i64 - 1) as usize * width + x])
                .sum();
        }
    }
    let mean = out.iter().sum::<f64>() / out.len() as f64;
    let sd = (out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / out.len() as f64).sqrt();
    out.iter().map(|v| 128.0 + 40.0 * (v - mean) / sd.max(1e-12)).collect()
}

/// Generates `classes * samples_per_class` images, class-major.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<SynthSample>> {
    cfg.validate()?;
    let (w, h) = (cfg.width, cfg.height);
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut out = Vec::with_capacity(cfg.classes * cfg.samples_per_class);
    for class in 0..cfg.classes {
        let texture = class_texture(cfg.seed, class, w, h, cfg.blur_sigma);
        for sample in 0..cfg.samples_per_class {
            let mut rng = rng_from(cfg.seed, &[purpose::SYNTH, 1, class as u64, sample as u64]);
            let m = (cfg.max_shift / 2) as i64;
            let shift = rng.random_range(-m..=m);
            let mut pixels: Vec<u8> = (0..w * h)
                .map(|i| {
                    let (x, y) = (i % w, i / w);
                    let src = (x as i64 - shift).rem_euclid(w as i64) as usize;
                    (texture[y * w + src] + noise.sample(&mut rng)).round().clamp(0.0, 255.0) as u8
                })
                .collect();

            // an eyelid-like block anchored at the outer rows
            let budget = (cfg.max_occlusion * rng.random::<f64>() * (w * h) as f64).floor() as usize;
            let rows = rng.random_range(h.div_ceil(2)..=h);
            let cols = (budget / rows).min(w);
            let start = rng.random_range(0..w);
            let mut mask = BitPlane::filled(w, h);
            for y in h - rows..h {
                for c in 0..cols {
                    let x = (start + c) % w;
                    mask.set(x, y, false);
                    pixels[y * w + x] = 230;
                }
            }
            let id = format!("c{class:03}_s{sample:02}");
            out.push(SynthSample {
                class,
                sample,
                shift,
                occluded: rows * cols,
                iris: NormalizedIris::new(id, w, h, pixels, mask)?,
            });
        }
    }
    Ok(out)
}

/// Writes images, masks and `manifest.csv` under `dir`; one subject per
/// class, left eye, sensor `synth`.
pub fn write_dataset(samples: &[SynthSample], dir: &Path) -> Result<DatasetManifest> {
    let img_dir = dir.join("images");
    fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    let mut records = Vec::with_capacity(samples.len());
    for s in samples {
        let image = format!("images/{}.pgm", s.iris.id);
        let mask = format!("images/{}_mask.pgm", s.iris.id);
        write_pgm(&dir.join(&image), s.iris.width, s.iris.height, &s.iris.pixels)?;
        write_mask_pgm(&dir.join(&mask), &s.iris.mask)?;
        let subject = format!("c{:03}", s.class);
        records.push(ManifestRecord {
            image,
            mask,
            iris_id: format!("{subject}_L"),
            subject,
            eye: Eye::L,
            sensor: "synth".into(),
        });
    }
    let manifest = DatasetManifest::new(records, dir)?;
    save_manifest(&manifest, &dir.join("manifest.csv"))?;
    Ok(manifest)
}
