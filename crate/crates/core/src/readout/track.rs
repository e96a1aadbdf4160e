//! Cross-correlation tracking of a single box.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::readout::features::{dot, FeatureExtractor, FeatureMap};
use crate::video::{BoxXywh, Frame, Region};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// Context margin as a fraction of `w + h` added around the exemplar.
    pub context: f32,
    /// Exemplar crop side after resizing, in pixels.
    pub exemplar_size: usize,
    /// Search crop side after resizing, in pixels.
    pub search_size: usize,
    /// Weight of the Hann window mixed into the response.
    pub window_influence: f64,
    pub scales: Vec<f32>,
    /// Multiplier on the peak of every non-unit scale.
    pub scale_penalty: f64,
    /// Interpolation rate of the box size towards the chosen scale.
    pub scale_lr: f32,
    /// Response refinement: grid steps per feature cell.
    pub upsample: usize,
    pub min_size: f32,
    /// Cut the exemplar features from the centre of a search-sized crop's
    /// feature map instead of encoding the exemplar crop on its own.
    pub exemplar_in_context: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            context: 0.5,
            exemplar_size: 16,
            search_size: 32,
            window_influence: 0.3,
            scales: vec![0.96, 1.0, 1.04],
            scale_penalty: 0.97,
            scale_lr: 0.59,
            upsample: 16,
            min_size: 2.0,
            exemplar_in_context: true,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.exemplar_size == 0 || self.search_size < self.exemplar_size {
            return Err(Error::Parameter("search_size must be at least exemplar_size > 0".into()));
        }
        if self.scales.is_empty() || self.scales.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Parameter("scales must be positive and non-empty".into()));
        }
        if !(0.0..=1.0).contains(&self.window_influence) || self.upsample == 0 {
            return Err(Error::Parameter("window_influence in [0, 1] and upsample >= 1".into()));
        }
        Ok(())
    }
}

/// Valid cross-correlation scores, `(Hx - Hz + 1) x (Wx - Wz + 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Response {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl Response {
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    fn at_clamped(&self, y: isize, x: isize) -> f64 {
        let y = y.clamp(0, self.height as isize - 1) as usize;
        let x = x.clamp(0, self.width as isize - 1) as usize;
        self.values[y * self.width + x]
    }

    /// Catmull-Rom bicubic interpolation with clamped borders.
    fn bicubic(&self, fy: f64, fx: f64) -> f64 {
        let (y0, x0) = (fy.floor(), fx.floor());
        let (ty, tx) = (fy - y0, fx - x0);
        let (wy, wx) = (catmull_rom(ty), catmull_rom(tx));
        let mut acc = 0.0;
        for (i, wyi) in wy.iter().enumerate() {
            for (j, wxj) in wx.iter().enumerate() {
                acc += wyi * wxj * self.at_clamped(y0 as isize + i as isize - 1, x0 as isize + j as isize - 1);
            }
        }
        acc
    }
}

fn catmull_rom(t: f64) -> [f64; 4] {
    let (t2, t3) = (t * t, t * t * t);
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

/// Mean over exemplar locations of the feature dot products at every
/// valid placement of `z` inside `x`.
pub fn xcorr(z: &FeatureMap, x: &FeatureMap) -> Result<Response> {
    if z.channels != x.channels || z.height > x.height || z.width > x.width {
        return Err(Error::Contract(format!(
            "exemplar {}x{}x{} does not fit search {}x{}x{}",
            z.height, z.width, z.channels, x.height, x.width, x.channels
        )));
    }
    let (rh, rw) = (x.height - z.height + 1, x.width - z.width + 1);
    let norm = 1.0 / z.len() as f64;
    let mut values = vec![0.0; rh * rw];
    for oy in 0..rh {
        for ox in 0..rw {
            let mut acc = 0.0;
            for zy in 0..z.height {
                for zx in 0..z.width {
                    acc += dot(z.at(zy * z.width + zx), x.at((oy + zy) * x.width + ox + zx));
                }
            }
            values[oy * rw + ox] = acc * norm;
        }
    }
    Ok(Response {
        height: rh,
        width: rw,
        values,
    })
}

fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Peak of the window-blended, refined response, as a displacement from
/// the response centre in feature cells.
pub fn refined_peak(resp: &Response, upsample: usize, window_influence: f64) -> (f64, f64) {
    let gh = (resp.height - 1) * upsample + 1;
    let gw = (resp.width - 1) * upsample + 1;
    let mut grid = Vec::with_capacity(gh * gw);
    for y in 0..gh {
        for x in 0..gw {
            grid.push(resp.bicubic(y as f64 / upsample as f64, x as f64 / upsample as f64));
        }
    }
    let lo = grid.iter().copied().fold(f64::INFINITY, f64::min);
    grid.iter_mut().for_each(|v| *v -= lo);
    let total: f64 = grid.iter().sum();
    if total > 0.0 {
        grid.iter_mut().for_each(|v| *v /= total);
    }
    let (wy, wx) = (hann(gh), hann(gw));
    let wsum: f64 = wy.iter().sum::<f64>() * wx.iter().sum::<f64>();
    let mut best = (f64::NEG_INFINITY, 0, 0);
    for y in 0..gh {
        for x in 0..gw {
            let s = (1.0 - window_influence) * grid[y * gw + x] + window_influence * wy[y] * wx[x] / wsum;
            if s > best.0 {
                best = (s, y, x);
            }
        }
    }
    let cy = (gh - 1) as f64 / 2.0;
    let cx = (gw - 1) as f64 / 2.0;
    ((best.1 as f64 - cy) / upsample as f64, (best.2 as f64 - cx) / upsample as f64)
}

/// Tracker state after a frame.
#[derive(Clone, Debug)]
pub struct TrackState {
    pub exemplar: FeatureMap,
    pub center: (f32, f32),
    pub size: (f32, f32),
    pub response: Option<Response>,
}

impl TrackState {
    pub fn boxed(&self) -> BoxXywh {
        BoxXywh {
            x: self.center.0 - self.size.0 / 2.0,
            y: self.center.1 - self.size.1 / 2.0,
            w: self.size.0,
            h: self.size.1,
        }
    }
}

fn exemplar_side(size: (f32, f32), context: f32) -> f32 {
    let pad = context * (size.0 + size.1);
    ((size.0 + pad) * (size.1 + pad)).sqrt()
}

fn square(center: (f32, f32), side: f32) -> Region {
    Region {
        x: center.0 - side / 2.0,
        y: center.1 - side / 2.0,
        w: side,
        h: side,
    }
}

/// Central `cells x cells` window of `map`.
fn center_window(map: &FeatureMap, cells: usize) -> Result<FeatureMap> {
    if cells > map.height || cells > map.width {
        return Err(Error::Contract(format!("{} cells exceed a {}x{} map", cells, map.height, map.width)));
    }
    let (y0, x0) = ((map.height - cells) / 2, (map.width - cells) / 2);
    let mut data = Vec::with_capacity(cells * cells * map.channels);
    for y in y0..y0 + cells {
        for x in x0..x0 + cells {
            data.extend_from_slice(map.at(y * map.width + x));
        }
    }
    FeatureMap::raw(cells, cells, map.channels, data)
}

pub fn init_track(frame: &Frame, init: BoxXywh, extractor: &dyn FeatureExtractor, cfg: &TrackerConfig) -> Result<TrackState> {
    cfg.validate()?;
    if !(init.w > 0.0 && init.h > 0.0) {
        return Err(Error::Contract(format!("degenerate initial box {:?}", init)));
    }
    let inside = init.x >= 0.0
        && init.y >= 0.0
        && init.x + init.w <= frame.width as f32
        && init.y + init.h <= frame.height as f32;
    if !inside {
        return Err(Error::Contract(format!("initial box {:?} leaves the frame", init)));
    }
    let size = (init.w, init.h);
    let center = init.center();
    let side = exemplar_side(size, cfg.context);
    let exemplar = if cfg.exemplar_in_context {
        let side_x = side * cfg.search_size as f32 / cfg.exemplar_size as f32;
        let crop = frame.crop_resize(square(center, side_x), cfg.search_size, cfg.search_size, frame.mean_color());
        let full = extractor.extract(&[&crop])?.remove(0);
        let cells = (cfg.exemplar_size / extractor.stride()).max(1);
        center_window(&full, cells)?
    } else {
        let crop = frame.crop_resize(square(center, side), cfg.exemplar_size, cfg.exemplar_size, frame.mean_color());
        extractor.extract(&[&crop])?.remove(0)
    };
    Ok(TrackState {
        exemplar,
        center,
        size,
        response: None,
    })
}

pub fn track_step(state: &mut TrackState, frame: &Frame, extractor: &dyn FeatureExtractor, cfg: &TrackerConfig) -> Result<BoxXywh> {
    let side_z = exemplar_side(state.size, cfg.context);
    let side_x = side_z * cfg.search_size as f32 / cfg.exemplar_size as f32;
    let fill = frame.mean_color();
    let crops: Vec<Frame> = cfg
        .scales
        .iter()
        .map(|&s| frame.crop_resize(square(state.center, side_x * s), cfg.search_size, cfg.search_size, fill))
        .collect();
    let refs: Vec<&Frame> = crops.iter().collect();
    let feats = extractor.extract(&refs)?;
    let mut best: Option<(f64, usize, Response)> = None;
    for (i, x) in feats.iter().enumerate() {
        let r = xcorr(&state.exemplar, x)?;
        let penalty = if cfg.scales[i] == 1.0 { 1.0 } else { cfg.scale_penalty };
        let peak = r.max() * penalty;
        if best.as_ref().is_none_or(|b| peak > b.0) {
            best = Some((peak, i, r));
        }
    }
    let (_, si, resp) = best.expect("at least one scale");
    let scale = cfg.scales[si];
    let (dy, dx) = refined_peak(&resp, cfg.upsample, cfg.window_influence);
    let px_per_crop = side_x * scale / cfg.search_size as f32;
    let stride = extractor.stride() as f32;
    let (w, h) = (frame.width as f32, frame.height as f32);
    state.center = (
        (state.center.0 + dx as f32 * stride * px_per_crop).clamp(0.0, w),
        (state.center.1 + dy as f32 * stride * px_per_crop).clamp(0.0, h),
    );
    let grow = 1.0 - cfg.scale_lr + cfg.scale_lr * scale;
    state.size = (
        (state.size.0 * grow).clamp(cfg.min_size, w),
        (state.size.1 * grow).clamp(cfg.min_size, h),
    );
    state.response = Some(resp);
    Ok(state.boxed())
}

/// Boxes for every frame, the first being `init`.
pub fn track(frames: &[Frame], init: BoxXywh, extractor: &dyn FeatureExtractor, cfg: &TrackerConfig) -> Result<Vec<BoxXywh>> {
    let Some(first) = frames.first() else {
        return Ok(Vec::new());
    };
    let mut state = init_track(first, init, extractor, cfg)?;
    let mut out = vec![init];
    for frame in &frames[1..] {
        out.push(track_step(&mut state, frame, extractor, cfg)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::readout::features::PixelFeatures;

    #[test]
    fn response_extent_is_valid_correlation() {
        let z = FeatureMap::raw(3, 4, 2, vec![0.5; 24]).unwrap();
        let x = FeatureMap::raw(7, 9, 2, vec![0.5; 126]).unwrap();
        let r = xcorr(&z, &x).unwrap();
        assert_eq!((r.height, r.width), (5, 6));
    }

    #[test]
    fn static_video_keeps_box() {
        let mut f = Frame::new(32, 32);
        for y in 10..18 {
            for x in 12..20 {
                f.set_pixel(y, x, [0.9, 0.2, 0.1]);
            }
        }
        let frames = vec![f.clone(), f.clone(), f];
        let init = BoxXywh { x: 12.0, y: 10.0, w: 8.0, h: 8.0 };
        let cfg = TrackerConfig {
            scales: vec![1.0],
            ..Default::default()
        };
        let boxes = track(&frames, init, &PixelFeatures, &cfg).unwrap();
        assert!(boxes.iter().all(|b| *b == init));
    }

    #[test]
    fn zero_area_box_is_rejected() {
        let f = Frame::new(8, 8);
        let bad = BoxXywh { x: 1.0, y: 1.0, w: 0.0, h: 3.0 };
        assert!(track(&[f], bad, &PixelFeatures, &TrackerConfig::default()).is_err());
    }
}
