//! Label propagation over windowed feature affinities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::readout::features::{dot, FeatureMap, LabelMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopkScope {
    /// One top-k over the candidates of all references.
    Global,
    /// Top-k within each reference, then pooled.
    PerReference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropagationConfig {
    pub topk: usize,
    /// Preceding predicted frames used as references besides frame 0.
    pub m_frames: usize,
    /// Window radius (Chebyshev) in feature cells at the reference extent.
    pub radius: usize,
    pub temperature: f64,
    pub topk_scope: TopkScope,
    /// Map extent at which `radius` applies. For another extent `e` the
    /// radius becomes `max(1, round(radius * e / reference_extent))`; no
    /// scaling when absent.
    pub reference_extent: Option<usize>,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        PropagationConfig {
            topk: 10,
            m_frames: 20,
            radius: 12,
            temperature: 0.07,
            topk_scope: TopkScope::Global,
            reference_extent: Some(60),
        }
    }
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.topk == 0 {
            return Err(Error::Parameter("topk must be at least 1".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Parameter(format!("temperature {} must be positive", self.temperature)));
        }
        if self.reference_extent == Some(0) {
            return Err(Error::Parameter("reference_extent must be positive".into()));
        }
        Ok(())
    }

    /// Radius used for maps of `height x width`.
    pub fn effective_radius(&self, height: usize, width: usize) -> usize {
        match self.reference_extent {
            None => self.radius,
            Some(_) if self.radius == 0 => 0,
            Some(e) => {
                let scaled = (self.radius as f64 * height.max(width) as f64 / e as f64).round();
                (scaled as usize).max(1)
            }
        }
    }
}

/// Scores of every query location against the reference locations in its
/// `(2r+1)^2` window, row-major over offsets `(dy, dx)`; `-inf` marks
/// offsets that fall outside the map.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinityBlock {
    pub height: usize,
    pub width: usize,
    pub radius: usize,
    pub values: Vec<f64>,
}

impl AffinityBlock {
    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    /// Reference location of window slot `slot` for query `q`, if inside.
    pub fn ref_index(&self, q: usize, slot: usize) -> Option<usize> {
        let s = self.side();
        let (qy, qx) = ((q / self.width) as isize, (q % self.width) as isize);
        let r = self.radius as isize;
        let y = qy + (slot / s) as isize - r;
        let x = qx + (slot % s) as isize - r;
        (y >= 0 && x >= 0 && (y as usize) < self.height && (x as usize) < self.width)
            .then(|| y as usize * self.width + x as usize)
    }

    /// `HW x HW` matrix with `-inf` outside the window.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.height * self.width;
        let s2 = self.side() * self.side();
        let mut out = vec![f64::NEG_INFINITY; n * n];
        for q in 0..n {
            for slot in 0..s2 {
                if let Some(r) = self.ref_index(q, slot) {
                    out[q * n + r] = self.values[q * s2 + slot];
                }
            }
        }
        out
    }
}

pub fn local_affinity(query: &FeatureMap, reference: &FeatureMap, radius: usize) -> Result<AffinityBlock> {
    if !query.congruent(reference) {
        return Err(Error::Contract(format!(
            "query {}x{}x{} vs reference {}x{}x{}",
            query.height, query.width, query.channels, reference.height, reference.width, reference.channels
        )));
    }
    // Offsets past the map extent never land inside it.
    let radius = radius.min(query.height.max(query.width).saturating_sub(1));
    let mut block = AffinityBlock {
        height: query.height,
        width: query.width,
        radius,
        values: Vec::new(),
    };
    let s2 = block.side() * block.side();
    let n = query.len();
    block.values = vec![f64::NEG_INFINITY; n * s2];
    for q in 0..n {
        let qf = query.at(q);
        for slot in 0..s2 {
            if let Some(r) = block.ref_index(q, slot) {
                block.values[q * s2 + slot] = dot(qf, reference.at(r));
            }
        }
    }
    Ok(block)
}

/// Candidate `(score, flat index)` where the flat index is
/// `reference * HW + location`.
type Candidate = (f64, usize);

fn by_score_then_index(a: &Candidate, b: &Candidate) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

fn select_topk(cands: &mut Vec<Candidate>, k: usize) {
    if cands.len() > k {
        cands.select_nth_unstable_by(k - 1, by_score_then_index);
        cands.truncate(k);
    }
    cands.sort_by(by_score_then_index);
}

/// Labels for `query` as a softmax-weighted mix of the top-k reference
/// labels within the window.
pub fn propagate_step(query: &FeatureMap, refs: &[(&FeatureMap, &LabelMap)], cfg: &PropagationConfig) -> Result<LabelMap> {
    cfg.validate()?;
    let Some(&(_, first_labels)) = refs.first() else {
        return Err(Error::Contract("propagation needs at least one reference".into()));
    };
    let classes = first_labels.classes;
    for (f, l) in refs {
        if !f.congruent(query) || l.height != query.height || l.width != query.width || l.classes != classes {
            return Err(Error::Contract("reference maps are not congruent with the query".into()));
        }
    }
    let n = query.len();
    let radius = cfg.effective_radius(query.height, query.width);
    let blocks: Vec<AffinityBlock> = refs
        .iter()
        .map(|(f, _)| local_affinity(query, f, radius))
        .collect::<Result<_>>()?;
    let s2 = blocks[0].side() * blocks[0].side();
    let mut out = vec![0.0f32; n * classes];
    let mut cands: Vec<Candidate> = Vec::with_capacity(refs.len() * s2);
    let mut part: Vec<Candidate> = Vec::with_capacity(s2);
    for q in 0..n {
        cands.clear();
        for (ri, block) in blocks.iter().enumerate() {
            part.clear();
            for slot in 0..s2 {
                if let Some(loc) = block.ref_index(q, slot) {
                    part.push((block.values[q * s2 + slot], ri * n + loc));
                }
            }
            if cfg.topk_scope == TopkScope::PerReference {
                select_topk(&mut part, cfg.topk);
            }
            cands.extend_from_slice(&part);
        }
        let dst = &mut out[q * classes..(q + 1) * classes];
        select_topk(&mut cands, cfg.topk);
        if cands.is_empty() {
            dst[0] = 1.0;
            continue;
        }
        let top = cands[0].0;
        let weights: Vec<f64> = cands.iter().map(|c| ((c.0 - top) / cfg.temperature).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut acc = vec![0.0f64; classes];
        for (c, w) in cands.iter().zip(&weights) {
            let labels = refs[c.1 / n].1.at(c.1 % n);
            for (a, &l) in acc.iter_mut().zip(labels) {
                *a += w / total * l as f64;
            }
        }
        for (d, a) in dst.iter_mut().zip(acc) {
            *d = a as f32;
        }
    }
    LabelMap::new(query.height, query.width, classes, out)
}

/// Propagates `first` through the clip. Frame `t` uses frame 0 with its
/// given labels plus the predictions of frames `max(1, t - m)..t`.
pub fn recurrent_inference(maps: &[FeatureMap], first: &LabelMap, cfg: &PropagationConfig) -> Result<Vec<LabelMap>> {
    let Some(map0) = maps.first() else {
        return Ok(Vec::new());
    };
    let mut preds: Vec<LabelMap> = vec![first.clone()];
    for t in 1..maps.len() {
        let lo = t.saturating_sub(cfg.m_frames).max(1);
        let mut refs: Vec<(&FeatureMap, &LabelMap)> = vec![(map0, first)];
        refs.extend((lo..t).map(|s| (&maps[s], &preds[s])));
        let next = propagate_step(&maps[t], &refs, cfg)?;
        preds.push(next);
    }
    Ok(preds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(topk: usize, radius: usize) -> PropagationConfig {
        PropagationConfig {
            topk,
            m_frames: 0,
            radius,
            temperature: 0.07,
            topk_scope: TopkScope::Global,
            reference_extent: None,
        }
    }

    fn one_hot_map(h: usize, w: usize) -> FeatureMap {
        let n = h * w;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        FeatureMap::raw(h, w, n, data).unwrap()
    }

    #[test]
    fn zero_radius_sees_own_location() {
        let m = one_hot_map(3, 3);
        let a = local_affinity(&m, &m, 0).unwrap();
        assert_eq!(a.side(), 1);
        assert!(a.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn exact_match_with_k1_copies_label() {
        let m = one_hot_map(2, 2);
        let labels = LabelMap::one_hot(&[0, 1, 2, 1], 2, 2, 3).unwrap();
        let out = propagate_step(&m, &[(&m, &labels)], &cfg(1, 1)).unwrap();
        assert_eq!(out.argmax(), vec![0, 1, 2, 1]);
    }

    #[test]
    fn identical_features_average_window_labels() {
        let m = FeatureMap::raw(1, 3, 1, vec![1.0; 3]).unwrap();
        let labels = LabelMap::one_hot(&[0, 1, 1], 1, 3, 2).unwrap();
        let out = propagate_step(&m, &[(&m, &labels)], &cfg(9, 1)).unwrap();
        assert!((out.at(0)[1] - 0.5).abs() < 1e-6);
        assert!((out.at(1)[1] - 2.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn radius_scaling_rule() {
        let c = PropagationConfig::default();
        assert_eq!(c.effective_radius(60, 60), 12);
        assert_eq!(c.effective_radius(16, 16), 3);
        assert_eq!(c.effective_radius(2, 2), 1);
    }
}
