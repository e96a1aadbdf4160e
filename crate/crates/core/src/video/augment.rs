//! Spatial and photometric augmentation of single frames.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::video::raster::{Frame, Region};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpatialAugment {
    pub enabled: bool,
    /// Crop area as a fraction of the frame area.
    pub crop_scale: (f32, f32),
    /// Crop aspect ratio (width / height).
    pub crop_ratio: (f32, f32),
    pub flip_prob: f32,
}

impl Default for SpatialAugment {
    fn default() -> Self {
        SpatialAugment {
            enabled: true,
            crop_scale: (0.6, 1.0),
            crop_ratio: (3.0 / 4.0, 4.0 / 3.0),
            flip_prob: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColorAugment {
    pub enabled: bool,
    pub jitter_prob: f32,
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    pub hue: f32,
    pub grayscale_prob: f32,
    pub blur_prob: f32,
    pub blur_sigma: (f32, f32),
}

impl Default for ColorAugment {
    fn default() -> Self {
        ColorAugment {
            enabled: false,
            jitter_prob: 0.8,
            brightness: 0.4,
            contrast: 0.4,
            saturation: 0.4,
            hue: 0.1,
            grayscale_prob: 0.2,
            blur_prob: 0.5,
            blur_sigma: (0.05, 0.3),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSpec {
    pub spatial: SpatialAugment,
    pub color: ColorAugment,
    /// Output `(height, width)`; the input size when absent.
    pub output_size: Option<(usize, usize)>,
}

impl AugmentSpec {
    /// Both families disabled.
    pub fn none() -> Self {
        let mut spec = AugmentSpec::default();
        spec.spatial.enabled = false;
        spec.color.enabled = false;
        spec
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("spatial.flip_prob", self.spatial.flip_prob),
            ("color.jitter_prob", self.color.jitter_prob),
            ("color.grayscale_prob", self.color.grayscale_prob),
            ("color.blur_prob", self.color.blur_prob),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Parameter(format!("{} = {} outside [0, 1]", name, p)));
            }
        }
        let (lo, hi) = self.spatial.crop_scale;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::Parameter(format!(
                "crop_scale ({}, {}) must lie in (0, 1]",
                lo, hi
            )));
        }
        let (rlo, rhi) = self.spatial.crop_ratio;
        if !(rlo > 0.0 && rlo <= rhi) {
            return Err(Error::Parameter(format!("crop_ratio ({}, {})", rlo, rhi)));
        }
        let c = &self.color;
        if c.brightness < 0.0 || c.contrast < 0.0 || c.saturation < 0.0 || !(0.0..=0.5).contains(&c.hue) {
            return Err(Error::Parameter("negative jitter range or hue outside [0, 0.5]".into()));
        }
        if c.blur_sigma.0 < 0.0 || c.blur_sigma.0 > c.blur_sigma.1 {
            return Err(Error::Parameter(format!("blur_sigma {:?}", c.blur_sigma)));
        }
        if matches!(self.output_size, Some((0, _)) | Some((_, 0))) {
            return Err(Error::Parameter("output_size must be positive".into()));
        }
        Ok(())
    }
}

fn uniform(rng: &mut Rng, lo: f32, hi: f32) -> f32 {
    if hi <= lo {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

fn coin(rng: &mut Rng, p: f32) -> bool {
    // Always draw so the stream position does not depend on p.
    rng.gen::<f32>() < p
}

pub fn hflip(frame: &Frame) -> Frame {
    let mut out = frame.clone();
    for y in 0..frame.height {
        for x in 0..frame.width {
            out.set_pixel(y, x, frame.pixel(y, frame.width - 1 - x));
        }
    }
    out
}

#[inline]
fn luma(p: [f32; 3]) -> f32 {
    (p[0] as f64 * 0.299 + p[1] as f64 * 0.587 + p[2] as f64 * 0.114) as f32
}

pub fn grayscale(frame: &Frame) -> Frame {
    let mut out = frame.clone();
    for px in out.data.chunks_exact_mut(3) {
        let l = luma([px[0], px[1], px[2]]);
        px.iter_mut().for_each(|v| *v = l);
    }
    out
}

pub fn adjust_brightness(frame: &mut Frame, factor: f32) {
    frame.data.iter_mut().for_each(|v| *v = (*v * factor).clamp(0.0, 1.0));
}

pub fn adjust_contrast(frame: &mut Frame, factor: f32) {
    let n = (frame.height * frame.width).max(1) as f64;
    let mean = frame
        .data
        .chunks_exact(3)
        .map(|p| luma([p[0], p[1], p[2]]) as f64)
        .sum::<f64>()
        / n;
    let mean = mean as f32;
    frame
        .data
        .iter_mut()
        .for_each(|v| *v = (*v * factor + mean * (1.0 - factor)).clamp(0.0, 1.0));
}

pub fn adjust_saturation(frame: &mut Frame, factor: f32) {
    for px in frame.data.chunks_exact_mut(3) {
        let l = luma([px[0], px[1], px[2]]);
        px.iter_mut()
            .for_each(|v| *v = (*v * factor + l * (1.0 - factor)).clamp(0.0, 1.0));
    }
}

fn rgb_to_hsv([r, g, b]: [f32; 3]) -> [f32; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    [h, s, max]
}

fn hsv_to_rgb([h, s, v]: [f32; 3]) -> [f32; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i as i32 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Rotates hue by `shift` turns.
pub fn adjust_hue(frame: &mut Frame, shift: f32) {
    for px in frame.data.chunks_exact_mut(3) {
        let mut hsv = rgb_to_hsv([px[0], px[1], px[2]]);
        hsv[0] += shift;
        let rgb = hsv_to_rgb(hsv);
        for k in 0..3 {
            px[k] = rgb[k].clamp(0.0, 1.0);
        }
    }
}

/// Separable Gaussian blur with clamped borders.
pub fn gaussian_blur(frame: &Frame, sigma: f32) -> Frame {
    if sigma <= 0.0 {
        return frame.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f32 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let (h, w) = (frame.height as isize, frame.width as isize);
    let pass = |src: &Frame, horizontal: bool| {
        let mut out = Frame::new(src.height, src.width);
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0f32; 3];
                for (k, &wk) in kernel.iter().enumerate() {
                    let o = k as isize - radius;
                    let (sy, sx) = if horizontal {
                        (y, (x + o).clamp(0, w - 1))
                    } else {
                        ((y + o).clamp(0, h - 1), x)
                    };
                    let p = src.pixel(sy as usize, sx as usize);
                    for c in 0..3 {
                        acc[c] += wk * p[c];
                    }
                }
                out.set_pixel(y as usize, x as usize, acc);
            }
        }
        out
    };
    let tmp = pass(frame, true);
    pass(&tmp, false)
}

fn random_resized_crop(frame: &Frame, spec: &SpatialAugment, rng: &mut Rng) -> Region {
    let (fh, fw) = (frame.height as f32, frame.width as f32);
    let area = fh * fw;
    let (lr_lo, lr_hi) = (spec.crop_ratio.0.ln(), spec.crop_ratio.1.ln());
    for _ in 0..10 {
        let target = area * uniform(rng, spec.crop_scale.0, spec.crop_scale.1);
        let ratio = uniform(rng, lr_lo, lr_hi).exp();
        let w = (target * ratio).sqrt();
        let h = (target / ratio).sqrt();
        if w <= fw && h <= fh {
            let x = uniform(rng, 0.0, fw - w);
            let y = uniform(rng, 0.0, fh - h);
            return Region { x, y, w, h };
        }
    }
    Region {
        x: 0.0,
        y: 0.0,
        w: fw,
        h: fh,
    }
}

/// Applies the enabled augmentation families. Output values stay in
/// `[0, 1]`, and the output has `spec.output_size` (default: input size).
pub fn augment(frame: &Frame, spec: &AugmentSpec, rng: &mut Rng) -> Frame {
    let (out_h, out_w) = spec.output_size.unwrap_or((frame.height, frame.width));
    let mut out = if spec.spatial.enabled {
        let region = random_resized_crop(frame, &spec.spatial, rng);
        let fill = frame.mean_color();
        let cropped = frame.crop_resize(region, out_h, out_w, fill);
        if coin(rng, spec.spatial.flip_prob) {
            hflip(&cropped)
        } else {
            cropped
        }
    } else {
        frame.resize(out_h, out_w)
    };

    let c = &spec.color;
    if c.enabled {
        if coin(rng, c.jitter_prob) {
            let b = uniform(rng, 1.0 - c.brightness, 1.0 + c.brightness).max(0.0);
            let k = uniform(rng, 1.0 - c.contrast, 1.0 + c.contrast).max(0.0);
            let s = uniform(rng, 1.0 - c.saturation, 1.0 + c.saturation).max(0.0);
            let h = uniform(rng, -c.hue, c.hue);
            if b != 1.0 {
                adjust_brightness(&mut out, b);
            }
            if k != 1.0 {
                adjust_contrast(&mut out, k);
            }
            if s != 1.0 {
                adjust_saturation(&mut out, s);
            }
            if h != 0.0 {
                adjust_hue(&mut out, h);
            }
        }
        if coin(rng, c.grayscale_prob) {
            out = grayscale(&out);
        }
        if coin(rng, c.blur_prob) {
            let sigma = uniform(rng, c.blur_sigma.0, c.blur_sigma.1);
            out = gaussian_blur(&out, sigma);
        }
    }
    out.clamp01();
    out
}
