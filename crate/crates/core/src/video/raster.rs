use std::path::Path;

use crate::error::{Error, Result};

/// Axis-aligned region in pixel coordinates, `(x, y)` is the top-left corner.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Region {
    pub x: f32,
    pub y: f32,
    pub w: f32,
    pub h: f32,
}

/// RGB raster stored row-major as `H x W x 3`, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Frame {
    pub fn new(height: usize, width: usize) -> Self {
        Frame {
            height,
            width,
            data: vec![0.0; height * width * 3],
        }
    }

    pub fn from_data(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::Contract(format!(
                "{}x{} frame needs {} values, got {}",
                height,
                width,
                height * width * 3,
                data.len()
            )));
        }
        Ok(Frame { height, width, data })
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_size(&self, other: &Frame) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn clamp01(&mut self) {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }

    pub fn mean_color(&self) -> [f32; 3] {
        let mut acc = [0.0f64; 3];
        for px in self.data.chunks_exact(3) {
            for c in 0..3 {
                acc[c] += px[c] as f64;
            }
        }
        let n = (self.height * self.width).max(1) as f64;
        [(acc[0] / n) as f32, (acc[1] / n) as f32, (acc[2] / n) as f32]
    }

    /// Planar `C x H x W` copy, the layout the encoders consume.
    pub fn to_chw(&self) -> Vec<f32> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; plane * 3];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            out[i] = px[0];
            out[plane + i] = px[1];
            out[2 * plane + i] = px[2];
        }
        out
    }

    /// Bilinear sample at continuous pixel-centre coordinates; outside
    /// samples take `fill`.
    pub fn sample(&self, fy: f32, fx: f32, fill: [f32; 3]) -> [f32; 3] {
        let (h, w) = (self.height as f32, self.width as f32);
        if fy < -0.5 || fx < -0.5 || fy > h - 0.5 || fx > w - 0.5 {
            return fill;
        }
        let fy = fy.clamp(0.0, h - 1.0);
        let fx = fx.clamp(0.0, w - 1.0);
        let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(self.height - 1), (x0 + 1).min(self.width - 1));
        let (dy, dx) = (fy - y0 as f32, fx - x0 as f32);
        if dy == 0.0 && dx == 0.0 {
            return self.pixel(y0, x0);
        }
        let (a, b, c, d) = (
            self.pixel(y0, x0),
            self.pixel(y0, x1),
            self.pixel(y1, x0),
            self.pixel(y1, x1),
        );
        let mut out = [0.0; 3];
        for k in 0..3 {
            let top = a[k] * (1.0 - dx) + b[k] * dx;
            let bot = c[k] * (1.0 - dx) + d[k] * dx;
            out[k] = top * (1.0 - dy) + bot * dy;
        }
        out
    }

    /// Resamples `region` to an `out_h x out_w` raster (bilinear).
    pub fn crop_resize(&self, region: Region, out_h: usize, out_w: usize, fill: [f32; 3]) -> Frame {
        let mut out = Frame::new(out_h, out_w);
        let sy = region.h / out_h as f32;
        let sx = region.w / out_w as f32;
        for y in 0..out_h {
            let fy = region.y + (y as f32 + 0.5) * sy - 0.5;
            for x in 0..out_w {
                let fx = region.x + (x as f32 + 0.5) * sx - 0.5;
                out.set_pixel(y, x, self.sample(fy, fx, fill));
            }
        }
        out
    }

    pub fn resize(&self, out_h: usize, out_w: usize) -> Frame {
        if out_h == self.height && out_w == self.width {
            return self.clone();
        }
        let full = Region {
            x: 0.0,
            y: 0.0,
            w: self.width as f32,
            h: self.height as f32,
        };
        self.crop_resize(full, out_h, out_w, [0.0; 3])
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        write_png(path, self.width, self.height, png::ColorType::Rgb, &bytes)
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Frame> {
        let (w, h, color, bytes) = read_png(path.as_ref())?;
        let data = match color {
            png::ColorType::Rgb => bytes.iter().map(|&b| b as f32 / 255.0).collect(),
            png::ColorType::Rgba => bytes
                .chunks_exact(4)
                .flat_map(|p| p[..3].iter().map(|&b| b as f32 / 255.0))
                .collect(),
            png::ColorType::Grayscale => bytes
                .iter()
                .flat_map(|&b| std::iter::repeat_n(b as f32 / 255.0, 3))
                .collect(),
            other => return Err(Error::Png(format!("unsupported color type {:?}", other))),
        };
        Frame::from_data(h, w, data)
    }
}

pub(crate) fn write_png(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    color: png::ColorType,
    bytes: &[u8],
) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
    writer
        .write_image_data(bytes)
        .map_err(|e| Error::Png(e.to_string()))?;
    Ok(())
}

pub(crate) fn read_png(path: &Path) -> Result<(usize, usize, png::ColorType, Vec<u8>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| Error::Png(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Png(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Png(format!("unsupported bit depth {:?}", info.bit_depth)));
    }
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, info.height as usize, info.color_type, buf))
}
