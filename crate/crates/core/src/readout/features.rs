use vfs_tensor::Tensor;

use crate::error::{Error, Result};
use crate::model::Encoder;
use crate::video::Frame;

/// Dense features stored location-major (`[H * W, C]`), unit norm per
/// location unless built with [`FeatureMap::raw`].
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn raw(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Contract(format!(
                "{}x{}x{} feature map needs {} values, got {}",
                height,
                width,
                channels,
                height * width * channels,
                data.len()
            )));
        }
        Ok(FeatureMap {
            height,
            width,
            channels,
            data,
        })
    }

    /// Location-major map with every location scaled to unit norm (zero
    /// vectors stay zero).
    pub fn normalized(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        let mut m = Self::raw(height, width, channels, data)?;
        m.normalize();
        Ok(m)
    }

    /// From a `[C, H, W]` tensor, normalized per location.
    pub fn from_chw(t: &Tensor<f32>) -> Result<Self> {
        let s = t.shape();
        if s.len() != 3 {
            return Err(Error::Contract(format!("expected [C, H, W], got {:?}", s)));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let src = t.data();
        let mut data = vec![0.0; c * h * w];
        for ch in 0..c {
            for i in 0..h * w {
                data[i * c + ch] = src[ch * h * w + i];
            }
        }
        Self::normalized(h, w, c, data)
    }

    /// Centred RGB values (`rgb - 0.5`), unit norm per location.
    pub fn from_frame(frame: &Frame) -> Self {
        let data = frame.data.iter().map(|v| v - 0.5).collect();
        Self::normalized(frame.height, frame.width, 3, data).expect("frame layout")
    }

    pub fn normalize(&mut self) {
        for v in self.data.chunks_exact_mut(self.channels.max(1)) {
            let n = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
            if n > 0.0 {
                v.iter_mut().for_each(|x| *x = (*x as f64 / n) as f32);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn at(&self, i: usize) -> &[f32] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn congruent(&self, other: &FeatureMap) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }
}

#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Something that turns frames into dense feature maps.
pub trait FeatureExtractor {
    fn extract(&self, frames: &[&Frame]) -> Result<Vec<FeatureMap>>;

    /// Input pixels per feature-map cell.
    fn stride(&self) -> usize;
}

/// Centred, normalized RGB at stride 1.
#[derive(Clone, Copy, Debug, Default)]
pub struct PixelFeatures;

impl FeatureExtractor for PixelFeatures {
    fn extract(&self, frames: &[&Frame]) -> Result<Vec<FeatureMap>> {
        Ok(frames.iter().map(|f| FeatureMap::from_frame(f)).collect())
    }

    fn stride(&self) -> usize {
        1
    }
}

/// Encoder block maps at the given strides.
#[derive(Clone, Debug)]
pub struct EncoderFeatures<'a> {
    pub encoder: &'a Encoder,
    pub strides: Vec<usize>,
    pub block: usize,
}

impl<'a> EncoderFeatures<'a> {
    /// Intermediate block with its own stride reduced to 1.
    pub fn fine(encoder: &'a Encoder) -> Self {
        let block = encoder.cfg.intermediate_block;
        EncoderFeatures {
            encoder,
            strides: encoder.cfg.dense_strides(block),
            block,
        }
    }

    /// Final block with the blocks from the intermediate one on at stride 1.
    pub fn object(encoder: &'a Encoder) -> Self {
        EncoderFeatures {
            encoder,
            strides: encoder.cfg.dense_strides(encoder.cfg.intermediate_block),
            block: encoder.cfg.final_block,
        }
    }
}

impl FeatureExtractor for EncoderFeatures<'_> {
    fn extract(&self, frames: &[&Frame]) -> Result<Vec<FeatureMap>> {
        self.encoder
            .block_maps(frames, &self.strides, self.block)?
            .iter()
            .map(FeatureMap::from_chw)
            .collect()
    }

    fn stride(&self) -> usize {
        self.strides[..=self.block].iter().product()
    }
}

/// Per-pixel class distributions stored `[H * W, C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub data: Vec<f32>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, classes: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * classes || classes == 0 {
            return Err(Error::Contract(format!(
                "{}x{} label map over {} classes needs {} values, got {}",
                height,
                width,
                classes,
                height * width * classes,
                data.len()
            )));
        }
        Ok(LabelMap {
            height,
            width,
            classes,
            data,
        })
    }

    pub fn one_hot(labels: &[u8], height: usize, width: usize, classes: usize) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::Contract("label count does not match extent".into()));
        }
        let mut data = vec![0.0; height * width * classes];
        for (i, &l) in labels.iter().enumerate() {
            if l as usize >= classes {
                return Err(Error::Contract(format!("label {} with {} classes", l, classes)));
            }
            data[i * classes + l as usize] = 1.0;
        }
        Self::new(height, width, classes, data)
    }

    #[inline]
    pub fn at(&self, i: usize) -> &[f32] {
        &self.data[i * self.classes..(i + 1) * self.classes]
    }

    /// Hard labels; ties go to the lowest class.
    pub fn argmax(&self) -> Vec<u8> {
        self.data
            .chunks_exact(self.classes)
            .map(|p| {
                let mut best = 0;
                for (c, &v) in p.iter().enumerate() {
                    if v > p[best] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect()
    }

    /// Averages `factor x factor` blocks.
    pub fn downsample(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.height.is_multiple_of(factor) || !self.width.is_multiple_of(factor) {
            return Err(Error::Contract(format!(
                "{}x{} is not divisible by {}",
                self.height, self.width, factor
            )));
        }
        let (h, w, c) = (self.height / factor, self.width / factor, self.classes);
        let mut data = vec![0.0f32; h * w * c];
        let inv = 1.0 / (factor * factor) as f32;
        for y in 0..self.height {
            for x in 0..self.width {
                let dst = ((y / factor) * w + x / factor) * c;
                for (k, &v) in self.at(y * self.width + x).iter().enumerate() {
                    data[dst + k] += v * inv;
                }
            }
        }
        Self::new(h, w, c, data)
    }

    /// Bilinear resampling to `height x width` at pixel centres.
    pub fn upsample(&self, height: usize, width: usize) -> Result<Self> {
        if height == self.height && width == self.width {
            return Ok(self.clone());
        }
        let c = self.classes;
        let (sy, sx) = (self.height as f32 / height as f32, self.width as f32 / width as f32);
        let mut data = vec![0.0f32; height * width * c];
        for y in 0..height {
            let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f32);
            let (y0, dy) = (fy.floor() as usize, fy - fy.floor());
            let y1 = (y0 + 1).min(self.height - 1);
            for x in 0..width {
                let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f32);
                let (x0, dx) = (fx.floor() as usize, fx - fx.floor());
                let x1 = (x0 + 1).min(self.width - 1);
                let corners = [
                    (y0, x0, (1.0 - dy) * (1.0 - dx)),
                    (y0, x1, (1.0 - dy) * dx),
                    (y1, x0, dy * (1.0 - dx)),
                    (y1, x1, dy * dx),
                ];
                let dst = (y * width + x) * c;
                for (yy, xx, wgt) in corners {
                    if wgt == 0.0 {
                        continue;
                    }
                    for (k, &v) in self.at(yy * self.width + xx).iter().enumerate() {
                        data[dst + k] += wgt * v;
                    }
                }
            }
        }
        Self::new(height, width, c, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chw_conversion_normalizes_locations() {
        let t = Tensor::new(vec![2, 1, 2], vec![3.0, 0.0, 4.0, 0.0]).unwrap();
        let m = FeatureMap::from_chw(&t).unwrap();
        assert_eq!(m.at(0), &[0.6, 0.8]);
        assert_eq!(m.at(1), &[0.0, 0.0]);
    }

    #[test]
    fn pool_then_upsample_keeps_constant_blocks() {
        let labels: Vec<u8> = (0..16).map(|i| if i % 4 < 2 { 0 } else { 1 }).collect();
        let m = LabelMap::one_hot(&labels, 4, 4, 2).unwrap();
        let d = m.downsample(2).unwrap();
        assert_eq!(d.argmax(), vec![0, 1, 0, 1]);
        assert_eq!(d.upsample(4, 4).unwrap().argmax(), labels);
    }
}
