//! Region, boundary and tracking metrics.

use crate::error::{Error, Result};
use crate::video::BoxXywh;

/// `|A & B| / |A | B|`, 1 when both masks are empty.
pub fn iou(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!("mask sizes {} vs {}", a.len(), b.len())));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Foreground pixels with a 4-neighbour in the background.
pub fn boundary(mask: &[bool], height: usize, width: usize) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            if !mask[i] {
                continue;
            }
            let bg = |yy: usize, xx: usize| !mask[yy * width + xx];
            out[i] = (y > 0 && bg(y - 1, x))
                || (y + 1 < height && bg(y + 1, x))
                || (x > 0 && bg(y, x - 1))
                || (x + 1 < width && bg(y, x + 1));
        }
    }
    out
}

/// Square dilation by `tol` pixels.
fn dilate(mask: &[bool], height: usize, width: usize, tol: usize) -> Vec<bool> {
    let mut rows = vec![false; mask.len()];
    for y in 0..height {
        for x in 0..width {
            let lo = x.saturating_sub(tol);
            let hi = (x + tol).min(width - 1);
            rows[y * width + x] = (lo..=hi).any(|xx| mask[y * width + xx]);
        }
    }
    let mut out = vec![false; mask.len()];
    for y in 0..height {
        let lo = y.saturating_sub(tol);
        let hi = (y + tol).min(height - 1);
        for x in 0..width {
            out[y * width + x] = (lo..=hi).any(|yy| rows[yy * width + x]);
        }
    }
    out
}

/// F-measure of boundary pixels, each side matched within `tol` pixels
/// (Chebyshev) of the other side's boundary.
pub fn boundary_f(a: &[bool], b: &[bool], height: usize, width: usize, tol: usize) -> Result<f64> {
    if a.len() != b.len() || a.len() != height * width {
        return Err(Error::Contract("mask sizes do not match the extent".into()));
    }
    let (ba, bb) = (boundary(a, height, width), boundary(b, height, width));
    let (na, nb) = (ba.iter().filter(|&&v| v).count(), bb.iter().filter(|&&v| v).count());
    if na == 0 && nb == 0 {
        return Ok(1.0);
    }
    if na == 0 || nb == 0 {
        return Ok(0.0);
    }
    let (da, db) = (dilate(&ba, height, width, tol), dilate(&bb, height, width, tol));
    let hit_a = ba.iter().zip(&db).filter(|(&x, &y)| x && y).count();
    let hit_b = bb.iter().zip(&da).filter(|(&x, &y)| x && y).count();
    let precision = hit_a as f64 / na as f64;
    let recall = hit_b as f64 / nb as f64;
    Ok(if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    })
}

fn check_boxes(boxes: &[BoxXywh], gt: &[BoxXywh]) -> Result<()> {
    if boxes.len() != gt.len() || boxes.is_empty() {
        return Err(Error::Contract(format!("{} boxes vs {} ground-truth boxes", boxes.len(), gt.len())));
    }
    Ok(())
}

pub fn center_error(a: &BoxXywh, b: &BoxXywh) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    ((ax - bx) as f64).hypot((ay - by) as f64)
}

/// Fraction of frames whose centre error is strictly below `threshold`.
pub fn precision_at(boxes: &[BoxXywh], gt: &[BoxXywh], threshold: f64) -> Result<f64> {
    check_boxes(boxes, gt)?;
    let hits = boxes.iter().zip(gt).filter(|(a, b)| center_error(a, b) < threshold).count();
    Ok(hits as f64 / boxes.len() as f64)
}

pub const SUCCESS_THRESHOLDS: usize = 21;

/// Mean over overlap thresholds `0, 0.05, ..., 1` of the fraction of frames
/// with IoU above the threshold.
pub fn success_auc(boxes: &[BoxXywh], gt: &[BoxXywh]) -> Result<f64> {
    check_boxes(boxes, gt)?;
    let ious: Vec<f64> = boxes.iter().zip(gt).map(|(a, b)| a.iou(b) as f64).collect();
    let mut total = 0.0;
    for i in 0..SUCCESS_THRESHOLDS {
        let th = i as f64 * 0.05;
        total += ious.iter().filter(|&&v| v > th).count() as f64 / ious.len() as f64;
    }
    Ok(total / SUCCESS_THRESHOLDS as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(h: usize, w: usize, y0: usize, x0: usize, s: usize) -> Vec<bool> {
        (0..h * w)
            .map(|i| (y0..y0 + s).contains(&(i / w)) && (x0..x0 + s).contains(&(i % w)))
            .collect()
    }

    #[test]
    fn identity_and_disjoint() {
        let a = square(10, 10, 2, 2, 4);
        let b = square(10, 10, 7, 7, 2);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(boundary_f(&a, &a, 10, 10, 1).unwrap(), 1.0);
        assert_eq!(iou(&a, &b).unwrap(), 0.0);
        assert_eq!(iou(&[false; 4], &[false; 4]).unwrap(), 1.0);
        assert!(iou(&a, &b[..5]).is_err());
    }

    #[test]
    fn shifted_boundary_within_tolerance() {
        let a = square(12, 12, 3, 3, 5);
        let b = square(12, 12, 3, 4, 5);
        assert_eq!(boundary_f(&a, &b, 12, 12, 1).unwrap(), 1.0);
        assert!(boundary_f(&a, &b, 12, 12, 0).unwrap() < 1.0);
    }

    #[test]
    fn precision_is_strict_at_threshold() {
        let gt = [BoxXywh { x: 0.0, y: 0.0, w: 4.0, h: 4.0 }];
        let off = [BoxXywh { x: 5.0, y: 0.0, w: 4.0, h: 4.0 }];
        assert_eq!(precision_at(&off, &gt, 5.0).unwrap(), 0.0);
        assert_eq!(precision_at(&off, &gt, 5.0001).unwrap(), 1.0);
    }

    #[test]
    fn success_of_perfect_boxes() {
        let gt = [BoxXywh { x: 1.0, y: 1.0, w: 4.0, h: 4.0 }; 3];
        assert!((success_auc(&gt, &gt).unwrap() - 20.0 / 21.0).abs() < 1e-12);
    }
}
