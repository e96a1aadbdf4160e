//! Clip directories: `frame_0000.png ...`, a `clip.json` sidecar with masks,
//! boxes and photometric parameters, and `flow.vfst` holding an `i32`
//! tensor of shape `[T, H, W, 2]`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use vfs_tensor::{AnyTensor, IntTensor};

use crate::error::{Error, Result};
use crate::video::raster::Frame;
use crate::video::synthetic::{BoxXywh, Photometric, VideoClip};

pub const SIDECAR: &str = "clip.json";
pub const FLOW_FILE: &str = "flow.vfst";

#[derive(Serialize, Deserialize)]
struct Sidecar {
    height: usize,
    width: usize,
    num_frames: usize,
    num_objects: usize,
    masks: Vec<Vec<u8>>,
    boxes: Vec<Vec<BoxXywh>>,
    photometric: Vec<Photometric>,
    flow: String,
}

pub fn frame_name(t: usize) -> String {
    format!("frame_{:04}.png", t)
}

pub fn save_clip(clip: &VideoClip, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (t, frame) in clip.frames.iter().enumerate() {
        frame.save_png(dir.join(frame_name(t)))?;
    }
    let (h, w) = (clip.height(), clip.width());
    let flow: Vec<i32> = clip.flow.iter().flatten().flat_map(|p| *p).collect();
    let flow = IntTensor::new(vec![clip.len(), h, w, 2], flow)?;
    vfs_tensor::io::save_any(&AnyTensor::I32(flow), dir.join(FLOW_FILE))?;
    let sidecar = Sidecar {
        height: h,
        width: w,
        num_frames: clip.len(),
        num_objects: clip.num_objects,
        masks: clip.masks.clone(),
        boxes: clip.boxes.clone(),
        photometric: clip.photometric.clone(),
        flow: FLOW_FILE.into(),
    };
    let path = dir.join(SIDECAR);
    let text = serde_json::to_string(&sidecar)?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Loads a clip saved by [`save_clip`]. Frame values are 8-bit quantized.
pub fn load_clip(dir: impl AsRef<Path>) -> Result<VideoClip> {
    let dir = dir.as_ref();
    let path = dir.join(SIDECAR);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: Sidecar = serde_json::from_str(&text)?;
    let (n, h, w) = (meta.num_frames, meta.height, meta.width);
    let mut frames = Vec::with_capacity(n);
    for t in 0..n {
        let frame = Frame::load_png(dir.join(frame_name(t)))?;
        if frame.height != h || frame.width != w {
            return Err(Error::Contract(format!(
                "{} is {}x{}, sidecar declares {}x{}",
                frame_name(t),
                frame.height,
                frame.width,
                h,
                w
            )));
        }
        frames.push(frame);
    }
    let flow = match vfs_tensor::io::load_any(dir.join(&meta.flow))? {
        AnyTensor::I32(t) if t.shape == [n, h, w, 2] => t.data,
        other => {
            return Err(Error::Contract(format!(
                "flow tensor must be i32 [{}, {}, {}, 2], found {:?} {:?}",
                n,
                h,
                w,
                other.dtype(),
                other.shape()
            )))
        }
    };
    let flow: Vec<Vec<[i32; 2]>> = flow
        .chunks_exact(h * w * 2)
        .map(|f| f.chunks_exact(2).map(|p| [p[0], p[1]]).collect())
        .collect();
    if meta.masks.len() != n
        || meta.boxes.len() != n
        || meta.photometric.len() != n
        || meta.masks.iter().any(|m| m.len() != h * w)
    {
        return Err(Error::Contract("sidecar arrays disagree with frame count or size".into()));
    }
    Ok(VideoClip {
        frames,
        masks: meta.masks,
        boxes: meta.boxes,
        flow,
        photometric: meta.photometric,
        num_objects: meta.num_objects,
    })
}

/// Saves a label map as an 8-bit grayscale PNG.
pub fn save_label_png(labels: &[u8], height: usize, width: usize, path: impl AsRef<Path>) -> Result<()> {
    if labels.len() != height * width {
        return Err(Error::Contract("label map size".into()));
    }
    crate::video::raster::write_png(path, width, height, png::ColorType::Grayscale, labels)
}
