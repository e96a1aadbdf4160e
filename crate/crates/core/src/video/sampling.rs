//! Temporal frame sampling.
//!
//! Continuous sampling takes `n` frames at a fixed interval from a start
//! index. Distant sampling splits the clip into `n` disjoint segments,
//! segment `i` being `[floor(L*i/n), floor(L*(i+1)/n))`, and draws one frame
//! uniformly from each. Indices are 0-based.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    Continuous,
    Distant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSpec {
    pub mode: SampleMode,
    /// Clip length `L` in frames.
    pub clip_len: usize,
    /// Frames to sample.
    pub n: usize,
    /// Frame interval (continuous only).
    #[serde(default)]
    pub delta: usize,
    /// First index (continuous only); drawn uniformly over the valid range when absent.
    #[serde(default)]
    pub start: Option<usize>,
}

impl SamplerSpec {
    pub fn continuous(clip_len: usize, n: usize, delta: usize, start: Option<usize>) -> Self {
        SamplerSpec {
            mode: SampleMode::Continuous,
            clip_len,
            n,
            delta,
            start,
        }
    }

    pub fn distant(clip_len: usize, n: usize) -> Self {
        SamplerSpec {
            mode: SampleMode::Distant,
            clip_len,
            n,
            delta: 0,
            start: None,
        }
    }
}

/// Half-open bounds of distant-sampling segment `i`.
pub fn segment(clip_len: usize, n: usize, i: usize) -> (usize, usize) {
    (clip_len * i / n, clip_len * (i + 1) / n)
}

pub fn sample_continuous(spec: &SamplerSpec, rng: &mut Rng) -> Result<Vec<usize>> {
    if spec.n == 0 {
        return Err(Error::Range("continuous sampling of zero frames".into()));
    }
    let span = (spec.n - 1) * spec.delta;
    if spec.clip_len == 0 || span > spec.clip_len - 1 {
        return Err(Error::Range(format!(
            "{} frames at interval {} need {} frames, clip has {}",
            spec.n,
            spec.delta,
            span + 1,
            spec.clip_len
        )));
    }
    let last_start = spec.clip_len - 1 - span;
    let start = match spec.start {
        Some(s) if s > last_start => {
            return Err(Error::Range(format!(
                "start {} + {} exceeds last index {}",
                s,
                span,
                spec.clip_len - 1
            )))
        }
        Some(s) => s,
        None => rng.gen_range(0..=last_start),
    };
    Ok((0..spec.n).map(|i| start + i * spec.delta).collect())
}

pub fn sample_distant(spec: &SamplerSpec, rng: &mut Rng) -> Result<Vec<usize>> {
    if spec.n == 0 || spec.n > spec.clip_len {
        return Err(Error::Range(format!(
            "distant sampling of {} frames from a {}-frame clip",
            spec.n, spec.clip_len
        )));
    }
    Ok((0..spec.n)
        .map(|i| {
            let (lo, hi) = segment(spec.clip_len, spec.n, i);
            rng.gen_range(lo..hi)
        })
        .collect())
}

pub fn sample(spec: &SamplerSpec, rng: &mut Rng) -> Result<Vec<usize>> {
    match spec.mode {
        SampleMode::Continuous => sample_continuous(spec, rng),
        SampleMode::Distant => sample_distant(spec, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn continuous_fixed_start() {
        let mut rng = stream(0, "t");
        let spec = SamplerSpec::continuous(30, 3, 8, Some(10));
        assert_eq!(sample_continuous(&spec, &mut rng).unwrap(), vec![10, 18, 26]);
    }

    #[test]
    fn zero_interval_repeats_frame() {
        let mut rng = stream(0, "t");
        let spec = SamplerSpec::continuous(12, 2, 0, None);
        let idx = sample_continuous(&spec, &mut rng).unwrap();
        assert_eq!(idx[0], idx[1]);
    }

    #[test]
    fn continuous_overflow_is_range_error() {
        let mut rng = stream(0, "t");
        let spec = SamplerSpec::continuous(10, 2, 4, Some(8));
        assert!(matches!(sample_continuous(&spec, &mut rng), Err(Error::Range(_))));
        let spec = SamplerSpec::continuous(10, 3, 5, None);
        assert!(matches!(sample_continuous(&spec, &mut rng), Err(Error::Range(_))));
    }

    #[test]
    fn distant_into_halves() {
        let mut rng = stream(1, "t");
        let spec = SamplerSpec::distant(300, 2);
        for _ in 0..200 {
            let idx = sample_distant(&spec, &mut rng).unwrap();
            assert!(idx[0] < 150 && (150..300).contains(&idx[1]));
        }
    }

    #[test]
    fn distant_with_one_frame_segments_is_identity() {
        let mut rng = stream(1, "t");
        let spec = SamplerSpec::distant(5, 5);
        assert_eq!(sample_distant(&spec, &mut rng).unwrap(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn distant_too_many_frames() {
        let mut rng = stream(1, "t");
        assert!(matches!(
            sample_distant(&SamplerSpec::distant(3, 4), &mut rng),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn segments_partition_the_clip() {
        for (l, n) in [(10, 3), (7, 7), (300, 8), (31, 4)] {
            let mut next = 0;
            for i in 0..n {
                let (lo, hi) = segment(l, n, i);
                assert_eq!(lo, next);
                assert!(hi > lo);
                next = hi;
            }
            assert_eq!(next, l);
        }
    }
}
