//! Photometric jitter and Gaussian blur for `[3, H, W]` frames in [0, 1].

use gsvit_tensor::Tensor;
use rand::Rng;

use crate::config::AugmentConfig;
use crate::nn::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    /// Added to every value.
    pub brightness: f32,
    /// Scale of deviations from the frame mean.
    pub contrast: f32,
    /// Scale of deviations from per-pixel luma.
    pub saturation: f32,
    pub blur_sigma: Option<f32>,
    pub blur_kernel: usize,
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self { brightness: 0.0, contrast: 1.0, saturation: 1.0, blur_sigma: None, blur_kernel: 5 }
    }

    pub fn sample(cfg: &AugmentConfig, rng: &mut SeededRng) -> Self {
        let uniform = |rng: &mut SeededRng, lo: f64, hi: f64| if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let brightness = uniform(rng, -cfg.brightness, cfg.brightness) as f32;
        let contrast = uniform(rng, cfg.contrast.0, cfg.contrast.1) as f32;
        let saturation = uniform(rng, cfg.saturation.0, cfg.saturation.1) as f32;
        let blur = rng.random::<f64>() < cfg.blur_prob;
        let sigma = uniform(rng, 0.0, cfg.blur_sigma_max) as f32;
        Self { brightness, contrast, saturation, blur_sigma: blur.then_some(sigma), blur_kernel: cfg.blur_kernel }
    }

    pub fn apply(&self, frame: &Tensor<f32>) -> Tensor<f32> {
        let (h, w) = (frame.shape()[1], frame.shape()[2]);
        let plane = h * w;
        let mut d = frame.data().to_vec();
        if self.brightness != 0.0 {
            d.iter_mut().for_each(|v| *v += self.brightness);
        }
        if self.contrast != 1.0 {
            let mean = (d.iter().map(|&v| f64::from(v)).sum::<f64>() / d.len() as f64) as f32;
            d.iter_mut().for_each(|v| *v = mean + (*v - mean) * self.contrast);
        }
        if self.saturation != 1.0 {
            for i in 0..plane {
                let gray = 0.299 * d[i] + 0.587 * d[plane + i] + 0.114 * d[2 * plane + i];
                for c in 0..3 {
                    let v = &mut d[c * plane + i];
                    *v = gray + (*v - gray) * self.saturation;
                }
            }
        }
        if let Some(sigma) = self.blur_sigma {
            d = gaussian_blur(&d, 3, h, w, sigma, self.blur_kernel);
        }
        d.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        Tensor::new(frame.shape().to_vec(), d).expect("shape preserved")
    }
}

/// Normalized 1-D Gaussian taps; a non-positive sigma gives the unit impulse.
pub fn gaussian_kernel(sigma: f32, size: usize) -> Vec<f32> {
    let r = (size / 2) as i64;
    let mut k: Vec<f64> = (-r..=r)
        .map(|x| if sigma > 0.0 { (-(x * x) as f64 / (2.0 * f64::from(sigma).powi(2))).exp() } else { f64::from(u8::from(x == 0)) })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k.into_iter().map(|v| v as f32).collect()
}

/// Separable blur of `c` planes with edge clamping.
pub fn gaussian_blur(d: &[f32], c: usize, h: usize, w: usize, sigma: f32, size: usize) -> Vec<f32> {
    let k = gaussian_kernel(sigma, size);
    let r = (size / 2) as i64;
    let mut tmp = vec![0f32; d.len()];
    let mut out = vec![0f32; d.len()];
    for ch in 0..c {
        let p = &d[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0f32;
                for (t, kv) in k.iter().enumerate() {
                    let xx = (x as i64 + t as i64 - r).clamp(0, w as i64 - 1) as usize;
                    acc += kv * p[y * w + xx];
                }
                tmp[ch * h * w + y * w + x] = acc;
            }
        }
        let p = &tmp[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0f32;
                for (t, kv) in k.iter().enumerate() {
                    let yy = (y as i64 + t as i64 - r).clamp(0, h as i64 - 1) as usize;
                    acc += kv * p[yy * w + x];
                }
                out[ch * h * w + y * w + x] = acc;
            }
        }
    }
    out
}

pub fn augment(frame: &Tensor<f32>, cfg: &AugmentConfig, rng: &mut SeededRng) -> Tensor<f32> {
    AugmentParams::sample(cfg, rng).apply(frame)
}
