//! Synthetic clips of textured objects moving over a textured background,
//! with exact ground-truth masks, boxes and pixel correspondences.
//!
//! Each frame is `gain_t * albedo_t + offset_t` per channel, where `albedo_t`
//! is the rendered scene and the gain/offset ramp linearly from identity at
//! frame 0. Albedo values stay inside `[0.2, 0.8]`, so the default
//! photometric ranges never clip.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Rng};
use crate::video::raster::Frame;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Rect,
    Ellipse,
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionSpec {
    /// Per-axis speed bound in px/frame for random velocities.
    pub max_speed: f32,
    /// Overrides the random velocity of every object, `(dx, dy)` px/frame.
    pub fixed_velocity: Option<(f32, f32)>,
    /// Bound on the rotation rate in degrees/frame (0 disables rotation).
    pub max_rotation_deg: f32,
    /// Bound on the relative scale change per frame (0 disables scaling).
    pub max_scale_rate: f32,
}

impl Default for MotionSpec {
    fn default() -> Self {
        MotionSpec {
            max_speed: 1.0,
            fixed_velocity: None,
            max_rotation_deg: 0.0,
            max_scale_rate: 0.0,
        }
    }
}

impl MotionSpec {
    pub fn is_pure_translation(&self) -> bool {
        self.max_rotation_deg == 0.0 && self.max_scale_rate == 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhotometricSpec {
    /// Final-frame gain drawn from `[1 - gain, 1 + gain]` per channel.
    pub gain: f32,
    /// Final-frame offset drawn from `[-offset, offset]` per channel.
    pub offset: f32,
}

impl Default for PhotometricSpec {
    fn default() -> Self {
        PhotometricSpec {
            gain: 0.1,
            offset: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSpec {
    pub height: usize,
    pub width: usize,
    pub num_frames: usize,
    pub num_objects: usize,
    /// Object side length range in pixels (inclusive).
    pub object_size: (usize, usize),
    pub shape: ShapeKind,
    pub motion: MotionSpec,
    pub photometric: PhotometricSpec,
    pub textured_background: bool,
    /// Trajectory redraws allowed before overlap makes the spec infeasible.
    pub max_attempts: usize,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            height: 32,
            width: 32,
            num_frames: 40,
            num_objects: 2,
            object_size: (8, 12),
            shape: ShapeKind::Mixed,
            motion: MotionSpec::default(),
            photometric: PhotometricSpec::default(),
            textured_background: true,
            max_attempts: 200,
        }
    }
}

/// Box as top-left corner plus size, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxXywh {
    pub x: f32,
    pub y: f32,
    pub w: f32,
    pub h: f32,
}

impl BoxXywh {
    pub fn center(&self) -> (f32, f32) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f32 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn iou(&self, other: &BoxXywh) -> f32 {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = (self.x + self.w).min(other.x + other.w);
        let y1 = (self.y + self.h).min(other.y + other.h);
        let inter = (x1 - x0).max(0.0) * (y1 - y0).max(0.0);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Photometric {
    pub gain: [f32; 3],
    pub offset: [f32; 3],
}

/// A clip with per-frame ground truth. Labels are `0` for background and
/// `j + 1` for object `j`; flow maps every foreground pixel of frame `t` to
/// `(y, x)` in frame 0 and is `(-1, -1)` on background.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub frames: Vec<Frame>,
    pub masks: Vec<Vec<u8>>,
    pub boxes: Vec<Vec<BoxXywh>>,
    pub flow: Vec<Vec<[i32; 2]>>,
    pub photometric: Vec<Photometric>,
    pub num_objects: usize,
}

impl VideoClip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.frames.first().map_or(0, |f| f.height)
    }

    pub fn width(&self) -> usize {
        self.frames.first().map_or(0, |f| f.width)
    }

    /// Binary mask of one object in frame `t`.
    pub fn object_mask(&self, t: usize, label: u8) -> Vec<bool> {
        self.masks[t].iter().map(|&l| l == label).collect()
    }
}

#[derive(Clone, Copy, Debug)]
enum Pattern {
    Stripes { angle: f32, period: f32 },
    Checker { cell: f32, angle: f32 },
    Rings { period: f32 },
    Dots { period: f32 },
}

#[derive(Clone, Debug)]
struct Texture {
    pattern: Pattern,
    colors: [[f32; 3]; 2],
    phase: f32,
}

impl Texture {
    fn color(&self, u: f32, v: f32) -> [f32; 3] {
        let t = match self.pattern {
            Pattern::Stripes { angle, period } => {
                let d = u * angle.cos() + v * angle.sin();
                0.5 + 0.5 * (std::f32::consts::TAU * d / period + self.phase).sin()
            }
            Pattern::Checker { cell, angle } => {
                let (c, s) = (angle.cos(), angle.sin());
                let (a, b) = (u * c - v * s, u * s + v * c);
                let k = ((a / cell).floor() + (b / cell).floor()) as i64;
                if k.rem_euclid(2) == 0 {
                    0.0
                } else {
                    1.0
                }
            }
            Pattern::Rings { period } => {
                let r = (u * u + v * v).sqrt();
                0.5 + 0.5 * (std::f32::consts::TAU * r / period + self.phase).cos()
            }
            Pattern::Dots { period } => {
                let a = (std::f32::consts::TAU * u / period).cos();
                let b = (std::f32::consts::TAU * v / period + self.phase).cos();
                if a * b > 0.3 {
                    1.0
                } else {
                    0.0
                }
            }
        };
        let [c0, c1] = self.colors;
        [
            c0[0] * (1.0 - t) + c1[0] * t,
            c0[1] * (1.0 - t) + c1[1] * t,
            c0[2] * (1.0 - t) + c1[2] * t,
        ]
    }
}

fn hue_color(hue: f32, sat: f32, val: f32) -> [f32; 3] {
    // Albedo kept inside [0.2, 0.8].
    let h6 = hue.rem_euclid(1.0) * 6.0;
    let f = h6 - h6.floor();
    let (p, q, t) = (val * (1.0 - sat), val * (1.0 - sat * f), val * (1.0 - sat * (1.0 - f)));
    let rgb = match h6.floor() as i32 {
        0 => [val, t, p],
        1 => [q, val, p],
        2 => [p, val, t],
        3 => [p, q, val],
        4 => [t, p, val],
        _ => [val, p, q],
    };
    rgb.map(|c| 0.2 + 0.6 * c)
}

fn random_texture(rng: &mut Rng, hue: f32, scale: f32) -> Texture {
    let pattern = match rng.gen_range(0..4) {
        0 => Pattern::Stripes {
            angle: rng.gen_range(0.0..std::f32::consts::PI),
            period: rng.gen_range(0.3..0.6) * scale,
        },
        1 => Pattern::Checker {
            cell: rng.gen_range(0.18..0.3) * scale,
            angle: rng.gen_range(0.0..std::f32::consts::FRAC_PI_2),
        },
        2 => Pattern::Rings {
            period: rng.gen_range(0.3..0.5) * scale,
        },
        _ => Pattern::Dots {
            period: rng.gen_range(0.3..0.5) * scale,
        },
    };
    let hue2 = hue + rng.gen_range(0.15..0.35);
    Texture {
        pattern,
        colors: [
            hue_color(hue, rng.gen_range(0.6..1.0), rng.gen_range(0.7..1.0)),
            hue_color(hue2, rng.gen_range(0.2..0.8), rng.gen_range(0.1..0.5)),
        ],
        phase: rng.gen_range(0.0..std::f32::consts::TAU),
    }
}

#[derive(Clone, Debug)]
struct Background {
    waves: Vec<(f32, f32, f32, f32, [f32; 3])>,
    base: [f32; 3],
}

impl Background {
    fn random(rng: &mut Rng, textured: bool, h: usize, w: usize) -> Self {
        let base = hue_color(rng.gen(), rng.gen_range(0.1..0.4), rng.gen_range(0.4..0.7));
        let waves = if textured {
            (0..4)
                .map(|_| {
                    let period = rng.gen_range(0.3..0.9) * h.max(w) as f32;
                    let angle: f32 = rng.gen_range(0.0..std::f32::consts::PI);
                    let amp = hue_color(rng.gen(), 1.0, 1.0).map(|c| (c - 0.5) * 0.12);
                    (angle.cos() / period, angle.sin() / period, rng.gen_range(0.0..std::f32::consts::TAU), 0.0, amp)
                })
                .collect()
        } else {
            Vec::new()
        };
        Background { waves, base }
    }

    fn color(&self, y: f32, x: f32) -> [f32; 3] {
        let mut c = self.base;
        for &(fx, fy, phase, _, amp) in &self.waves {
            let s = (std::f32::consts::TAU * (fx * x + fy * y) + phase).sin();
            for k in 0..3 {
                c[k] += amp[k] * s;
            }
        }
        c.map(|v| v.clamp(0.2, 0.8))
    }
}

#[derive(Clone, Debug)]
struct ObjectTrack {
    ellipse: bool,
    /// Half extents `(x, y)` at scale 1.
    half: (f32, f32),
    texture: Texture,
    /// Reference point per frame (pixel coordinates, integral under translation).
    centers: Vec<(f32, f32)>,
    angles: Vec<f32>,
    scales: Vec<f32>,
}

impl ObjectTrack {
    fn local(&self, t: usize, y: f32, x: f32) -> (f32, f32) {
        let (cx, cy) = self.centers[t];
        let (dx, dy) = (x - cx, y - cy);
        let a = -self.angles[t];
        let s = self.scales[t];
        ((dx * a.cos() - dy * a.sin()) / s, (dx * a.sin() + dy * a.cos()) / s)
    }

    fn contains(&self, u: f32, v: f32) -> bool {
        let tol = 1e-3;
        let (hx, hy) = self.half;
        if self.ellipse {
            let (a, b) = (hx + 0.5, hy + 0.5);
            (u / a).powi(2) + (v / b).powi(2) <= 1.0 + tol
        } else {
            u.abs() <= hx + tol && v.abs() <= hy + tol
        }
    }

    /// Frame-0 pixel holding local point `(u, v)`.
    fn source(&self, u: f32, v: f32) -> (f32, f32) {
        let (cx, cy) = self.centers[0];
        let a = self.angles[0];
        let s = self.scales[0];
        let (du, dv) = (u * s, v * s);
        (cy + du * a.sin() + dv * a.cos(), cx + du * a.cos() - dv * a.sin())
    }

    fn bound_radius(&self, t: usize) -> (f32, f32) {
        let s = self.scales[t];
        if self.angles.iter().all(|&a| a == 0.0) {
            (self.half.0 * s, self.half.1 * s)
        } else {
            let r = (self.half.0.powi(2) + self.half.1.powi(2)).sqrt() * s;
            (r, r)
        }
    }
}

fn plan_track(spec: &GenSpec, rng: &mut Rng, hue: f32) -> Result<ObjectTrack> {
    let (h, w) = (spec.height as f32, spec.width as f32);
    let (lo, hi) = spec.object_size;
    let side_w = rng.gen_range(lo..=hi) as f32;
    let side_h = rng.gen_range(lo..=hi) as f32;
    let ellipse = match spec.shape {
        ShapeKind::Rect => false,
        ShapeKind::Ellipse => true,
        ShapeKind::Mixed => rng.gen_bool(0.5),
    };
    let half = ((side_w - 1.0) / 2.0, (side_h - 1.0) / 2.0);
    let m = &spec.motion;
    let rot_rate = if m.max_rotation_deg > 0.0 {
        rng.gen_range(-m.max_rotation_deg..m.max_rotation_deg).to_radians()
    } else {
        0.0
    };
    let scale_rate = if m.max_scale_rate > 0.0 {
        rng.gen_range(-m.max_scale_rate..m.max_scale_rate)
    } else {
        0.0
    };
    let n = spec.num_frames;
    let angles: Vec<f32> = (0..n).map(|t| rot_rate * t as f32).collect();
    let scales: Vec<f32> = (0..n)
        .map(|t| (1.0 + scale_rate * t as f32).clamp(0.6, 1.4))
        .collect();
    let texture = random_texture(rng, hue, side_w.min(side_h));
    let mut track = ObjectTrack {
        ellipse,
        half,
        texture,
        centers: Vec::with_capacity(n),
        angles,
        scales,
    };
    let (rx, ry) = (0..n).fold((0.0f32, 0.0f32), |acc, t| {
        let r = track.bound_radius(t);
        (acc.0.max(r.0), acc.1.max(r.1))
    });
    if 2.0 * rx + 1.0 > w || 2.0 * ry + 1.0 > h {
        return Err(Error::Spec(format!(
            "object of half extent ({:.1}, {:.1}) does not fit a {}x{} canvas",
            rx, ry, spec.width, spec.height
        )));
    }
    // Even sides put the reference point on a half pixel.
    let frac = (half.0.fract(), half.1.fract());
    let range = |r: f32, extent: f32, f: f32| {
        let lo = (r - f).ceil();
        let hi = (extent - 1.0 - r - f).floor();
        (lo, hi.max(lo))
    };
    let (x_lo, x_hi) = range(rx, w, frac.0);
    let (y_lo, y_hi) = range(ry, h, frac.1);
    let mut px = rng.gen_range(x_lo..=x_hi);
    let mut py = rng.gen_range(y_lo..=y_hi);
    let (mut vx, mut vy) = match m.fixed_velocity {
        Some(v) => v,
        None if m.max_speed > 0.0 => (
            rng.gen_range(-m.max_speed..=m.max_speed),
            rng.gen_range(-m.max_speed..=m.max_speed),
        ),
        None => (0.0, 0.0),
    };
    for t in 0..n {
        if t > 0 {
            let (nx, ny) = (px + vx, py + vy);
            if nx < x_lo || nx > x_hi {
                vx = -vx;
            }
            if ny < y_lo || ny > y_hi {
                vy = -vy;
            }
            px = (px + vx).clamp(x_lo, x_hi);
            py = (py + vy).clamp(y_lo, y_hi);
        }
        track.centers.push((px.round() + frac.0, py.round() + frac.1));
    }
    Ok(track)
}

pub fn gen_synthetic_clip(spec: &GenSpec, seed: u64) -> Result<VideoClip> {
    if spec.height == 0 || spec.width == 0 || spec.num_frames == 0 {
        return Err(Error::Spec("canvas and clip length must be positive".into()));
    }
    if spec.object_size.0 == 0 || spec.object_size.0 > spec.object_size.1 {
        return Err(Error::Spec(format!("object_size {:?}", spec.object_size)));
    }
    if spec.num_objects > 254 {
        return Err(Error::Spec("at most 254 objects".into()));
    }
    let mut rng = stream(seed, "synthetic-clip");
    let (h, w, n) = (spec.height, spec.width, spec.num_frames);
    let background = Background::random(&mut rng, spec.textured_background, h, w);
    let base_hue: f32 = rng.gen();

    let mut attempt = 0;
    let (tracks, masks) = loop {
        attempt += 1;
        let mut tracks = Vec::with_capacity(spec.num_objects);
        for j in 0..spec.num_objects {
            let hue = base_hue + j as f32 / spec.num_objects.max(1) as f32;
            tracks.push(plan_track(spec, &mut rng, hue)?);
        }
        match rasterize_masks(&tracks, h, w, n) {
            Some(masks) => break (tracks, masks),
            None if attempt >= spec.max_attempts => {
                return Err(Error::Spec(format!(
                    "no overlap-free trajectories for {} objects after {} attempts",
                    spec.num_objects, attempt
                )))
            }
            None => continue,
        }
    };

    let photometric = plan_photometric(&spec.photometric, &mut rng, n);
    let mut frames = Vec::with_capacity(n);
    let mut flow = Vec::with_capacity(n);
    let mut boxes = Vec::with_capacity(n);
    for t in 0..n {
        let mut frame = Frame::new(h, w);
        let mut fl = vec![[-1, -1]; h * w];
        let mut extents = vec![(usize::MAX, usize::MAX, 0usize, 0usize); tracks.len()];
        for y in 0..h {
            for x in 0..w {
                let label = masks[t][y * w + x];
                let albedo = if label == 0 {
                    background.color(y as f32, x as f32)
                } else {
                    let j = label as usize - 1;
                    let tr = &tracks[j];
                    let (u, v) = tr.local(t, y as f32, x as f32);
                    let (sy, sx) = tr.source(u, v);
                    fl[y * w + x] = [
                        (sy.round() as i32).clamp(0, h as i32 - 1),
                        (sx.round() as i32).clamp(0, w as i32 - 1),
                    ];
                    let e = &mut extents[j];
                    *e = (e.0.min(x), e.1.min(y), e.2.max(x), e.3.max(y));
                    tr.texture.color(u, v)
                };
                let p = photometric[t];
                let rgb = [0, 1, 2].map(|c| (p.gain[c] * albedo[c] + p.offset[c]).clamp(0.0, 1.0));
                frame.set_pixel(y, x, rgb);
            }
        }
        frames.push(frame);
        flow.push(fl);
        boxes.push(
            extents
                .iter()
                .map(|&(x0, y0, x1, y1)| BoxXywh {
                    x: x0 as f32,
                    y: y0 as f32,
                    w: (x1 + 1 - x0) as f32,
                    h: (y1 + 1 - y0) as f32,
                })
                .collect(),
        );
    }
    Ok(VideoClip {
        frames,
        masks,
        boxes,
        flow,
        photometric,
        num_objects: spec.num_objects,
    })
}

/// Per-frame label maps, or `None` when two objects claim a pixel or an
/// object has no pixels.
fn rasterize_masks(tracks: &[ObjectTrack], h: usize, w: usize, n: usize) -> Option<Vec<Vec<u8>>> {
    let mut all = Vec::with_capacity(n);
    for t in 0..n {
        let mut mask = vec![0u8; h * w];
        for (j, tr) in tracks.iter().enumerate() {
            let mut any = false;
            for y in 0..h {
                for x in 0..w {
                    let (u, v) = tr.local(t, y as f32, x as f32);
                    if tr.contains(u, v) {
                        if mask[y * w + x] != 0 {
                            return None;
                        }
                        mask[y * w + x] = j as u8 + 1;
                        any = true;
                    }
                }
            }
            if !any {
                return None;
            }
        }
        all.push(mask);
    }
    Some(all)
}

fn plan_photometric(spec: &PhotometricSpec, rng: &mut Rng, n: usize) -> Vec<Photometric> {
    let pick = |rng: &mut Rng, r: f32| if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 };
    let gain_end: [f32; 3] = [0, 1, 2].map(|_| 1.0 + pick(rng, spec.gain));
    let offset_end: [f32; 3] = [0, 1, 2].map(|_| pick(rng, spec.offset));
    (0..n)
        .map(|t| {
            let a = if n > 1 { t as f32 / (n - 1) as f32 } else { 0.0 };
            Photometric {
                gain: [0, 1, 2].map(|c| 1.0 + (gain_end[c] - 1.0) * a),
                offset: [0, 1, 2].map(|c| offset_end[c] * a),
            }
        })
        .collect()
}
