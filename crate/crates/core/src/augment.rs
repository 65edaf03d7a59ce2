//! Stochastic training-time augmentation for 5-channel slices.
//!
//! The pipeline runs on [0,1]-scaled image intensities (input channels are
//! divided by 255 on entry) in a fixed order: geometric resample (rotation
//! and independent width/height scaling, one coin each), additive Gaussian
//! noise, Gaussian blur, simulated low resolution, gamma adjustment, then
//! always a per-channel z-score. The annotation sees only the geometric
//! step, with nearest-neighbor sampling. Every step draws from the caller's
//! rng in a fixed order (coin first, parameters only when the coin fires),
//! so a seed fully determines the output.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataio::{SliceSample, N_MODALITIES};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub p_rotate: f64,
    /// Degrees.
    pub rotate_range: (f64, f64),
    pub p_scale: f64,
    pub scale_range: (f64, f64),
    pub p_noise: f64,
    pub noise_std_range: (f64, f64),
    pub p_blur: f64,
    pub blur_std_range: (f64, f64),
    pub p_lowres: f64,
    pub lowres_zoom_range: (f64, f64),
    pub p_gamma: f64,
    pub gamma_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            p_rotate: 0.75,
            rotate_range: (-30.0, 30.0),
            p_scale: 0.75,
            scale_range: (0.9, 1.1),
            p_noise: 0.5,
            noise_std_range: (0.0, 0.05),
            p_blur: 0.2,
            blur_std_range: (0.5, 1.0),
            p_lowres: 0.25,
            lowres_zoom_range: (0.75, 1.0),
            p_gamma: 0.3,
            gamma_range: (0.8, 1.2),
        }
    }
}

impl AugmentConfig {
    /// Z-score only; no coins are even flipped.
    pub fn disabled() -> Self {
        Self { enabled: false, ..Self::default() }
    }

    pub fn validate(&self) {
        for (name, p) in [
            ("p_rotate", self.p_rotate),
            ("p_scale", self.p_scale),
            ("p_noise", self.p_noise),
            ("p_blur", self.p_blur),
            ("p_lowres", self.p_lowres),
            ("p_gamma", self.p_gamma),
        ] {
            assert!((0.0..=1.0).contains(&p), "AugmentConfig: {name} = {p} outside [0,1]");
        }
        for (name, (lo, hi)) in [
            ("rotate_range", self.rotate_range),
            ("scale_range", self.scale_range),
            ("noise_std_range", self.noise_std_range),
            ("blur_std_range", self.blur_std_range),
            ("lowres_zoom_range", self.lowres_zoom_range),
            ("gamma_range", self.gamma_range),
        ] {
            assert!(lo <= hi, "AugmentConfig: {name} = ({lo}, {hi}) has lo > hi");
        }
        assert!(self.scale_range.0 > 0.0, "AugmentConfig: nonpositive scale");
        assert!(self.lowres_zoom_range.0 > 0.0, "AugmentConfig: nonpositive zoom");
        assert!(self.gamma_range.0 > 0.0, "AugmentConfig: nonpositive gamma");
    }
}

/// Augmented sample: z-scored image channels and the (possibly
/// geometrically transformed) annotation.
pub struct Augmented {
    pub resolution: usize,
    /// `4 * resolution * resolution`, channel-major.
    pub image: Vec<f32>,
    /// `resolution * resolution` annotation values from {0, 51, 102, 204}.
    pub target: Vec<u8>,
}

/// Run the full augmentation pipeline on one slice.
pub fn augment(sample: &SliceSample, cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Augmented {
    cfg.validate();
    let r = sample.resolution;
    let r2 = r * r;
    let mut image: Vec<f32> = Vec::with_capacity(N_MODALITIES * r2);
    for c in 0..N_MODALITIES {
        image.extend(sample.channel(c).iter().map(|&v| v / 255.0));
    }
    let mut target: Vec<u8> = sample.annotation().iter().map(|&v| v as u8).collect();

    if cfg.enabled {
        let rotate = rng.gen_bool(cfg.p_rotate);
        let angle_deg = if rotate {
            rng.gen_range(cfg.rotate_range.0..=cfg.rotate_range.1)
        } else {
            0.0
        };
        let scale = rng.gen_bool(cfg.p_scale);
        let (sx, sy) = if scale {
            (
                rng.gen_range(cfg.scale_range.0..=cfg.scale_range.1),
                rng.gen_range(cfg.scale_range.0..=cfg.scale_range.1),
            )
        } else {
            (1.0, 1.0)
        };
        if rotate || scale {
            let angle = angle_deg.to_radians();
            let (img, tgt) = rotate_scale(&image, &target, r, angle, sx, sy);
            image = img;
            target = tgt;
        }

        if rng.gen_bool(cfg.p_noise) {
            let std = rng.gen_range(cfg.noise_std_range.0..=cfg.noise_std_range.1);
            add_gaussian_noise(&mut image, std, rng);
        }

        if rng.gen_bool(cfg.p_blur) {
            let sigma = rng.gen_range(cfg.blur_std_range.0..=cfg.blur_std_range.1);
            for c in 0..N_MODALITIES {
                let blurred = gaussian_blur(&image[c * r2..(c + 1) * r2], r, sigma);
                image[c * r2..(c + 1) * r2].copy_from_slice(&blurred);
            }
        }

        if rng.gen_bool(cfg.p_lowres) {
            let zoom = rng.gen_range(cfg.lowres_zoom_range.0..=cfg.lowres_zoom_range.1);
            for c in 0..N_MODALITIES {
                let out = simulate_low_res(&image[c * r2..(c + 1) * r2], r, zoom);
                image[c * r2..(c + 1) * r2].copy_from_slice(&out);
            }
        }

        if rng.gen_bool(cfg.p_gamma) {
            let gamma = rng.gen_range(cfg.gamma_range.0..=cfg.gamma_range.1);
            for c in 0..N_MODALITIES {
                let clamped: Vec<f32> =
                    image[c * r2..(c + 1) * r2].iter().map(|v| v.clamp(0.0, 1.0)).collect();
                let out = adjust_gamma(&clamped, gamma);
                image[c * r2..(c + 1) * r2].copy_from_slice(&out);
            }
        }
    }

    for c in 0..N_MODALITIES {
        let out = zscore(&image[c * r2..(c + 1) * r2]);
        image[c * r2..(c + 1) * r2].copy_from_slice(&out);
    }

    Augmented { resolution: r, image, target }
}

/// Affine resample about the image center: the output pixel grid is pulled
/// back through scale-then-rotate (`M = R(angle) * diag(sx, sy)`);
/// out-of-bounds reads are 0. Image channels sample bilinearly, the target
/// nearest-neighbor.
pub fn rotate_scale(
    image: &[f32],
    target: &[u8],
    resolution: usize,
    angle: f64,
    sx: f64,
    sy: f64,
) -> (Vec<f32>, Vec<u8>) {
    assert!(sx > 0.0 && sy > 0.0, "rotate_scale: scales must be positive");
    let r = resolution;
    let r2 = r * r;
    assert_eq!(image.len() % r2, 0, "rotate_scale: image buffer not a multiple of R^2");
    assert_eq!(target.len(), r2, "rotate_scale: target size");
    let channels = image.len() / r2;
    let c = (r as f64 - 1.0) / 2.0;
    let (sin, cos) = angle.sin_cos();
    // Inverse map: diag(1/sx, 1/sy) * R(-angle).
    let inv = move |x: f64, y: f64| -> (f64, f64) {
        let dx = x - c;
        let dy = y - c;
        let rx = cos * dx + sin * dy;
        let ry = -sin * dx + cos * dy;
        (c + rx / sx, c + ry / sy)
    };
    let mut out_img = vec![0.0f32; image.len()];
    let mut out_tgt = vec![0u8; r2];
    for y in 0..r {
        for x in 0..r {
            let (u, v) = inv(x as f64, y as f64);
            for ch in 0..channels {
                out_img[ch * r2 + y * r + x] = bilinear(&image[ch * r2..(ch + 1) * r2], r, u, v);
            }
            let (nu, nv) = (u.round(), v.round());
            out_tgt[y * r + x] = if nu >= 0.0 && nv >= 0.0 && (nu as usize) < r && (nv as usize) < r
            {
                target[nv as usize * r + nu as usize]
            } else {
                0
            };
        }
    }
    (out_img, out_tgt)
}

fn bilinear(plane: &[f32], r: usize, u: f64, v: f64) -> f32 {
    let x0 = u.floor();
    let y0 = v.floor();
    let fx = (u - x0) as f32;
    let fy = (v - y0) as f32;
    let sample = |x: f64, y: f64| -> f32 {
        if x >= 0.0 && y >= 0.0 && (x as usize) < r && (y as usize) < r {
            plane[y as usize * r + x as usize]
        } else {
            0.0
        }
    };
    let p00 = sample(x0, y0);
    let p10 = sample(x0 + 1.0, y0);
    let p01 = sample(x0, y0 + 1.0);
    let p11 = sample(x0 + 1.0, y0 + 1.0);
    p00 * (1.0 - fx) * (1.0 - fy) + p10 * fx * (1.0 - fy) + p01 * (1.0 - fx) * fy + p11 * fx * fy
}

/// Add iid Gaussian noise with the given standard deviation to every image
/// value.
pub fn add_gaussian_noise(image: &mut [f32], std: f64, rng: &mut ChaCha8Rng) {
    if std <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0f64, std).unwrap();
    for v in image.iter_mut() {
        *v += normal.sample(rng) as f32;
    }
}

/// Separable Gaussian blur: kernel radius `ceil(3 sigma)`, normalized to
/// sum 1, reflect padding (edge duplication) at borders.
pub fn gaussian_blur(plane: &[f32], r: usize, sigma: f64) -> Vec<f32> {
    assert!(sigma > 0.0, "gaussian_blur: sigma must be positive");
    assert_eq!(plane.len(), r * r, "gaussian_blur: plane size");
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for d in -radius..=radius {
        kernel.push((-((d * d) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let sum: f64 = kernel.iter().sum();
    let kernel: Vec<f32> = kernel.into_iter().map(|k| (k / sum) as f32).collect();

    let reflect = |i: isize| -> usize {
        let n = r as isize;
        let i = if i < 0 { -i - 1 } else if i >= n { 2 * n - 1 - i } else { i };
        i.clamp(0, n - 1) as usize
    };
    let mut tmp = vec![0.0f32; r * r];
    for y in 0..r {
        for x in 0..r {
            let mut acc = 0.0f32;
            for (ki, d) in (-radius..=radius).enumerate() {
                acc += kernel[ki] * plane[y * r + reflect(x as isize + d)];
            }
            tmp[y * r + x] = acc;
        }
    }
    let mut out = vec![0.0f32; r * r];
    for y in 0..r {
        for x in 0..r {
            let mut acc = 0.0f32;
            for (ki, d) in (-radius..=radius).enumerate() {
                acc += kernel[ki] * tmp[reflect(y as isize + d) * r + x];
            }
            out[y * r + x] = acc;
        }
    }
    out
}

/// Bilinear resize between square resolutions with pixel-center alignment.
fn resize_bilinear(plane: &[f32], from: usize, to: usize) -> Vec<f32> {
    if from == to {
        return plane.to_vec();
    }
    let ratio = from as f64 / to as f64;
    let mut out = vec![0.0f32; to * to];
    for y in 0..to {
        let v = ((y as f64 + 0.5) * ratio - 0.5).clamp(0.0, from as f64 - 1.0);
        for x in 0..to {
            let u = ((x as f64 + 0.5) * ratio - 0.5).clamp(0.0, from as f64 - 1.0);
            out[y * to + x] = bilinear(plane, from, u, v);
        }
    }
    out
}

/// Fake a lower acquisition resolution: bilinear downscale to
/// `round(zoom * r)` pixels, then bilinear upscale back to `r`.
pub fn simulate_low_res(plane: &[f32], r: usize, zoom: f64) -> Vec<f32> {
    assert!(zoom > 0.0 && zoom <= 1.0, "simulate_low_res: zoom {zoom} outside (0, 1]");
    let small = ((zoom * r as f64).round() as usize).max(1);
    if small == r {
        return plane.to_vec();
    }
    let down = resize_bilinear(plane, r, small);
    resize_bilinear(&down, small, r)
}

/// Elementwise `v^gamma` on [0,1] intensities.
pub fn adjust_gamma(plane: &[f32], gamma: f64) -> Vec<f32> {
    assert!(gamma > 0.0, "adjust_gamma: gamma must be positive");
    let g = gamma as f32;
    plane.iter().map(|&v| v.powf(g)).collect()
}

/// `(v - mean) / max(std, 1e-8)` over the whole channel (population std).
pub fn zscore(plane: &[f32]) -> Vec<f32> {
    assert!(plane.len() > 1, "zscore: need more than one pixel");
    let n = plane.len() as f64;
    let mean = plane.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let var = plane.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n;
    let denom = var.sqrt().max(1e-8);
    plane.iter().map(|&v| ((f64::from(v) - mean) / denom) as f32).collect()
}
