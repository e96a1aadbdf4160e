use proptest::prelude::*;
use vfs_core::readout::{
    iou, local_affinity, propagate_step, recurrent_inference, segment_from_maps, track, xcorr, FeatureMap, LabelMap,
    PixelFeatures, PropagationConfig, TopkScope, TrackerConfig,
};
use vfs_core::rng::stream;
use vfs_core::video::{gen_synthetic_clip, Frame, GenSpec, MotionSpec};
use rand::Rng as _;

fn random_map(h: usize, w: usize, c: usize, seed: u64) -> FeatureMap {
    let mut rng = stream(seed, "map");
    let data = (0..h * w * c).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    FeatureMap::normalized(h, w, c, data).unwrap()
}

fn random_labels(h: usize, w: usize, classes: usize, seed: u64) -> LabelMap {
    let mut rng = stream(seed, "labels");
    let l: Vec<u8> = (0..h * w).map(|_| rng.gen_range(0..classes as u8)).collect();
    LabelMap::one_hot(&l, h, w, classes).unwrap()
}

fn cfg(topk: usize, m: usize, radius: usize) -> PropagationConfig {
    PropagationConfig {
        topk,
        m_frames: m,
        radius,
        temperature: 0.07,
        topk_scope: TopkScope::Global,
        reference_extent: None,
    }
}

fn dot64(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

fn cheb(w: usize, a: usize, b: usize) -> usize {
    let (ay, ax) = ((a / w) as isize, (a % w) as isize);
    let (by, bx) = ((b / w) as isize, (b % w) as isize);
    (ay - by).unsigned_abs().max((ax - bx).unsigned_abs())
}

/// Every candidate of every reference, sorted by score then flat index.
fn oracle_step(query: &FeatureMap, refs: &[(&FeatureMap, Vec<Vec<f64>>)], c: &PropagationConfig) -> Vec<Vec<f64>> {
    let (n, w) = (query.len(), query.width);
    let classes = refs[0].1[0].len();
    (0..n)
        .map(|q| {
            let mut cands: Vec<(f64, usize)> = Vec::new();
            for (ri, (f, _)) in refs.iter().enumerate() {
                for l in 0..n {
                    if cheb(w, q, l) <= c.radius {
                        cands.push((dot64(query.at(q), f.at(l)), ri * n + l));
                    }
                }
            }
            cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            cands.truncate(c.topk);
            let top = cands[0].0;
            let ws: Vec<f64> = cands.iter().map(|x| ((x.0 - top) / c.temperature).exp()).collect();
            let total: f64 = ws.iter().sum();
            let mut out = vec![0.0; classes];
            for (cand, wt) in cands.iter().zip(&ws) {
                for (o, &l) in out.iter_mut().zip(&refs[cand.1 / n].1[cand.1 % n]) {
                    *o += wt / total * l;
                }
            }
            out
        })
        .collect()
}

fn soft(l: &LabelMap) -> Vec<Vec<f64>> {
    (0..l.height * l.width).map(|i| l.at(i).iter().map(|&x| x as f64).collect()).collect()
}

#[test]
fn local_affinity_matches_dense_then_mask() {
    let (a, b) = (random_map(6, 6, 5, 1), random_map(6, 6, 5, 2));
    for radius in [0usize, 2, 5, 9] {
        let dense = local_affinity(&a, &b, radius).unwrap().to_dense();
        for q in 0..36 {
            for l in 0..36 {
                let want = if cheb(6, q, l) <= radius { dot64(a.at(q), b.at(l)) } else { f64::NEG_INFINITY };
                assert_eq!(dense[q * 36 + l], want, "r={} q={} l={}", radius, q, l);
            }
        }
    }
}

#[test]
fn step_with_k3_matches_exhaustive_sort() {
    let q = random_map(5, 5, 4, 3);
    let r = random_map(5, 5, 4, 4);
    let labels = random_labels(5, 5, 3, 5);
    let c = cfg(3, 0, 2);
    let got = propagate_step(&q, &[(&r, &labels)], &c).unwrap();
    let want = oracle_step(&q, &[(&r, soft(&labels))], &c);
    for (i, row) in want.iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            assert!((got.at(i)[k] as f64 - v).abs() < 1e-6);
        }
    }
}

#[test]
fn recurrent_inference_matches_brute_force() {
    for k in [1usize, 3] {
        for m in [0usize, 2] {
            for r in [1usize, 8] {
                let maps: Vec<FeatureMap> = (0..6).map(|t| random_map(8, 8, 6, 100 + t)).collect();
                let first = random_labels(8, 8, 3, 7);
                let c = cfg(k, m, r);
                let got = recurrent_inference(&maps, &first, &c).unwrap();
                let mut preds = vec![soft(&first)];
                for t in 1..6usize {
                    let lo = t.saturating_sub(m).max(1);
                    let mut refs = vec![(&maps[0], preds[0].clone())];
                    refs.extend((lo..t).map(|s| (&maps[s], preds[s].clone())));
                    let next = oracle_step(&maps[t], &refs, &c);
                    preds.push(next);
                }
                for t in 0..6 {
                    for (i, row) in preds[t].iter().enumerate() {
                        for (cl, &v) in row.iter().enumerate() {
                            let diff = (got[t].at(i)[cl] as f64 - v).abs();
                            assert!(diff <= 1e-6, "k={} m={} r={} t={} diff {}", k, m, r, t, diff);
                        }
                    }
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn step_outputs_distributions_and_is_label_equivariant(seed in 0u64..10_000, k in 1usize..12, r in 0usize..4) {
        let q = random_map(5, 6, 4, seed);
        let refs_f = [random_map(5, 6, 4, seed + 1), random_map(5, 6, 4, seed + 2)];
        let mut rng = stream(seed, "soft");
        let mut soft_labels = |_: usize| {
            let data: Vec<f32> = (0..30).flat_map(|_| {
                let v: [f32; 3] = [rng.gen(), rng.gen(), rng.gen()];
                let s: f32 = v.iter().sum();
                v.map(|x| x / s)
            }).collect();
            LabelMap::new(5, 6, 3, data).unwrap()
        };
        let labels = [soft_labels(0), soft_labels(1)];
        let c = cfg(k, 0, r);
        let refs: Vec<(&FeatureMap, &LabelMap)> = refs_f.iter().zip(&labels).collect();
        let out = propagate_step(&q, &refs, &c).unwrap();
        for i in 0..30 {
            let s: f32 = out.at(i).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-5);
        }
        let perm = [2usize, 0, 1];
        let permute = |l: &LabelMap| {
            let data = (0..30).flat_map(|i| perm.map(|p| l.at(i)[p])).collect();
            LabelMap::new(l.height, l.width, 3, data).unwrap()
        };
        let plabels = [permute(&labels[0]), permute(&labels[1])];
        let prefs: Vec<(&FeatureMap, &LabelMap)> = refs_f.iter().zip(&plabels).collect();
        let pout = propagate_step(&q, &prefs, &c).unwrap();
        prop_assert_eq!(pout, permute(&out));
    }
}

/// Multi-frequency encoding of a frame-0 position, zero on the background
/// channel.
fn position_code(y: i32, x: i32) -> Vec<f32> {
    let mut v = Vec::with_capacity(21);
    for f in [1.0f64, 2.0, 4.0, 8.0, 16.0] {
        for p in [y, x] {
            let a = 2.0 * std::f64::consts::PI * f * p as f64 / 64.0;
            v.push(a.cos() as f32);
            v.push(a.sin() as f32);
        }
    }
    v.push(0.0);
    v
}

/// Features built from ground truth: foreground pixels carry the code of
/// their frame-0 source, the background a single shared code.
fn flow_features(clip: &vfs_core::video::VideoClip) -> Vec<FeatureMap> {
    let (h, w) = (clip.height(), clip.width());
    let mut bg = vec![0.0f32; 21];
    bg[20] = 1.0;
    (0..clip.len())
        .map(|t| {
            let data = (0..h * w)
                .flat_map(|q| {
                    if clip.masks[t][q] == 0 {
                        bg.clone()
                    } else {
                        let [sy, sx] = clip.flow[t][q];
                        position_code(sy, sx)
                    }
                })
                .collect();
            FeatureMap::normalized(h, w, 21, data).unwrap()
        })
        .collect()
}

#[test]
fn flow_derived_features_segment_perfectly() {
    let spec = GenSpec {
        num_frames: 10,
        motion: MotionSpec {
            max_speed: 1.5,
            ..Default::default()
        },
        ..Default::default()
    };
    for seed in 0..3 {
        let clip = gen_synthetic_clip(&spec, seed).unwrap();
        assert!(spec.motion.is_pure_translation());
        let maps = flow_features(&clip);
        let masks = segment_from_maps(&maps, &clip, &PropagationConfig::default()).unwrap();
        for (t, labels) in masks.iter().enumerate().skip(1) {
            for obj in 1..=clip.num_objects as u8 {
                let a: Vec<bool> = labels.iter().map(|&l| l == obj).collect();
                assert_eq!(iou(&a, &clip.object_mask(t, obj)).unwrap(), 1.0, "seed {} frame {}", seed, t);
            }
        }
    }
}

/// Normalized cross-correlation of raw pixel values at every placement.
fn ncc_argmax(z: &Frame, x: &Frame) -> (usize, usize) {
    let (rh, rw) = (x.height - z.height + 1, x.width - z.width + 1);
    let zv = z.data.iter().map(|&v| v as f64).collect::<Vec<_>>();
    let zm = zv.iter().sum::<f64>() / zv.len() as f64;
    let zc: Vec<f64> = zv.iter().map(|v| v - zm).collect();
    let zn = zc.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut best = (f64::NEG_INFINITY, (0, 0));
    for oy in 0..rh {
        for ox in 0..rw {
            let mut patch = Vec::with_capacity(zc.len());
            for y in 0..z.height {
                for xx in 0..z.width {
                    patch.extend(x.pixel(oy + y, ox + xx).map(|v| v as f64));
                }
            }
            let pm = patch.iter().sum::<f64>() / patch.len() as f64;
            let pc: Vec<f64> = patch.iter().map(|v| v - pm).collect();
            let pn = pc.iter().map(|v| v * v).sum::<f64>().sqrt();
            let s = zc.iter().zip(&pc).map(|(a, b)| a * b).sum::<f64>() / (zn * pn).max(1e-12);
            if s > best.0 {
                best = (s, (oy, ox));
            }
        }
    }
    best.1
}

#[test]
fn xcorr_recovers_translation_of_an_exact_copy() {
    let mut rng = stream(9, "xcorr");
    for _ in 0..10 {
        let x = Frame::from_data(14, 15, (0..14 * 15 * 3).map(|_| rng.gen::<f32>()).collect()).unwrap();
        let (oy, ox) = (rng.gen_range(0..8usize), rng.gen_range(0..9usize));
        let mut z = Frame::new(6, 6);
        for y in 0..6 {
            for xx in 0..6 {
                z.set_pixel(y, xx, x.pixel(oy + y, ox + xx));
            }
        }
        let resp = xcorr(&FeatureMap::from_frame(&z), &FeatureMap::from_frame(&x)).unwrap();
        assert_eq!((resp.height, resp.width), (9, 10));
        assert_eq!(ncc_argmax(&z, &x), (oy, ox));
        assert_eq!(resp.argmax(), (oy, ox));
    }
}

#[test]
fn static_clip_keeps_the_box() {
    let spec = GenSpec {
        num_frames: 6,
        motion: MotionSpec {
            max_speed: 0.0,
            ..Default::default()
        },
        ..Default::default()
    };
    let clip = gen_synthetic_clip(&spec, 4).unwrap();
    let boxes = track(&clip.frames, clip.boxes[0][0], &PixelFeatures, &TrackerConfig::default()).unwrap();
    for b in &boxes {
        assert!((b.x - boxes[0].x).abs() < 1e-3 && (b.y - boxes[0].y).abs() < 1e-3);
    }
}
