//! Label propagation on whole clips, scored against ground-truth masks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::readout::features::{FeatureExtractor, FeatureMap, LabelMap};
use crate::readout::metrics::{boundary_f, iou};
use crate::readout::propagation::{recurrent_inference, PropagationConfig};
use crate::video::VideoClip;

/// Hard masks at frame resolution for every frame, propagated from the
/// frame-0 ground truth over precomputed maps. Map extents must divide the
/// frame extent; labels are average-pooled down and probabilities are
/// upsampled bilinearly.
pub fn segment_from_maps(maps: &[FeatureMap], clip: &VideoClip, cfg: &PropagationConfig) -> Result<Vec<Vec<u8>>> {
    if maps.len() != clip.len() || clip.is_empty() {
        return Err(Error::Contract(format!("{} maps for {} frames", maps.len(), clip.len())));
    }
    let (h, w) = (clip.height(), clip.width());
    let (mh, mw) = (maps[0].height, maps[0].width);
    if mh == 0 || h % mh != 0 || w % mw != 0 || h / mh != w / mw {
        return Err(Error::Contract(format!("{}x{} maps for {}x{} frames", mh, mw, h, w)));
    }
    let classes = clip.num_objects + 1;
    let first = LabelMap::one_hot(&clip.masks[0], h, w, classes)?.downsample(h / mh)?;
    let probs = recurrent_inference(maps, &first, cfg)?;
    let mut out = vec![clip.masks[0].clone()];
    for p in &probs[1..] {
        out.push(p.upsample(h, w)?.argmax());
    }
    Ok(out)
}

pub fn segment_clip(extractor: &dyn FeatureExtractor, clip: &VideoClip, cfg: &PropagationConfig) -> Result<Vec<Vec<u8>>> {
    let frames: Vec<_> = clip.frames.iter().collect();
    let maps = extractor.extract(&frames)?;
    segment_from_maps(&maps, clip, cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationScore {
    /// Region IoU averaged over objects and frames `1..T`.
    pub j_mean: f64,
    /// Boundary F averaged the same way.
    pub f_mean: f64,
    /// Per frame `1..T`, averaged over objects.
    pub per_frame_j: Vec<f64>,
}

pub fn score_segmentation(pred: &[Vec<u8>], clip: &VideoClip, boundary_tol: usize) -> Result<SegmentationScore> {
    if pred.len() != clip.len() {
        return Err(Error::Contract(format!("{} predictions for {} frames", pred.len(), clip.len())));
    }
    let (h, w) = (clip.height(), clip.width());
    let mut per_frame_j = Vec::new();
    let (mut j_total, mut f_total, mut count) = (0.0, 0.0, 0usize);
    for (t, labels) in pred.iter().enumerate().skip(1) {
        let mut frame_j = 0.0;
        for obj in 1..=clip.num_objects as u8 {
            let a: Vec<bool> = labels.iter().map(|&l| l == obj).collect();
            let b = clip.object_mask(t, obj);
            let j = iou(&a, &b)?;
            frame_j += j;
            j_total += j;
            f_total += boundary_f(&a, &b, h, w, boundary_tol)?;
            count += 1;
        }
        per_frame_j.push(frame_j / clip.num_objects.max(1) as f64);
    }
    let n = count.max(1) as f64;
    Ok(SegmentationScore {
        j_mean: j_total / n,
        f_mean: f_total / n,
        per_frame_j,
    })
}
