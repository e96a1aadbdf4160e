use proptest::prelude::*;
use vfs_core::objectives::{
    build_affinity, cosine_loss, infonce_loss, momentum_update, multi_pair_loss, multi_pair_loss_graph, NegativeBank,
    Regime,
};
use vfs_tensor::{Graph, Tensor};

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-3);
    v.into_iter().map(|x| x / n).collect()
}

fn unit_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, dim)
        .prop_filter("non-degenerate", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-2)
        .prop_map(unit)
}

fn unit_rows(rows: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(unit_vec(dim), rows)
}

fn to_f32(rows: &[Vec<f64>]) -> Vec<f32> {
    rows.iter().flat_map(|r| r.iter().map(|&x| x as f32)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn cosine_loss_is_squared_distance(p in unit_vec(16), z in unit_vec(16)) {
        let l = cosine_loss(&p, &z).unwrap();
        let dist: f64 = p.iter().zip(&z).map(|(a, b)| (a - b).powi(2)).sum();
        prop_assert!((l - dist).abs() < 1e-9);
        prop_assert!((0.0..=4.0 + 1e-12).contains(&l));
    }

    #[test]
    fn infonce_is_nonnegative_and_shift_invariant(
        p in unit_vec(8),
        z in unit_vec(8),
        negs in unit_rows(6, 8),
        tau in 0.05f64..2.0,
    ) {
        let refs: Vec<&[f64]> = negs.iter().map(Vec::as_slice).collect();
        let l = infonce_loss(&p, &z, &refs, tau).unwrap();
        prop_assert!(l >= 0.0);
        // Adding a constant to every logit is the same as adding tau * c to
        // every dot product; the loss is recomputed from shifted logits.
        let dots: Vec<f64> = std::iter::once(&z).chain(negs.iter())
            .map(|u| p.iter().zip(u).map(|(a, b)| a * b).sum::<f64>() / tau)
            .collect();
        for c in [-50.0, 3.0, 400.0] {
            let shifted: Vec<f64> = dots.iter().map(|d| d + c).collect();
            let m = shifted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + shifted.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            prop_assert!((lse - shifted[0] - l).abs() < 1e-9);
        }
    }

    #[test]
    fn bank_rows_stay_unit_norm(batches in prop::collection::vec(1usize..7, 1..12), seed in 0u64..1000) {
        let dim = 5;
        let mut bank = NegativeBank::new(8, dim);
        let mut k = seed;
        for rows in batches {
            let data: Vec<Vec<f64>> = (0..rows).map(|_| {
                unit((0..dim).map(|_| { k = k.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); ((k >> 33) as f64 / (1u64 << 31) as f64) - 0.5 }).collect())
            }).collect();
            bank.enqueue(&to_f32(&data)).unwrap();
            for row in bank.fifo() {
                let n = row.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
                prop_assert!((n - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn two_enqueues_equal_one_of_the_concatenation(a in unit_rows(3, 4), b in unit_rows(4, 4), pre in unit_rows(5, 4)) {
        let mut split = NegativeBank::new(8, 4);
        let mut joined = NegativeBank::new(8, 4);
        split.enqueue(&to_f32(&pre)).unwrap();
        joined.enqueue(&to_f32(&pre)).unwrap();
        split.enqueue(&to_f32(&a)).unwrap();
        split.enqueue(&to_f32(&b)).unwrap();
        let mut ab = to_f32(&a);
        ab.extend(to_f32(&b));
        joined.enqueue(&ab).unwrap();
        prop_assert_eq!(split, joined);
    }

    #[test]
    fn graph_loss_matches_per_clip_affinity_loss(
        rows in unit_rows(12, 6),
        bank in unit_rows(5, 6),
        with_neg in any::<bool>(),
        half in prop::sample::select(vec![1usize, 2, 3]),
    ) {
        let clips = 2;
        let (p_rows, z_rows) = (&rows[..clips * half], &rows[6..6 + clips * half]);
        let regime = if with_neg { Regime::WithNeg } else { Regime::WithoutNeg };
        let tau = 0.2;
        let mut oracle = 0.0;
        for c in 0..clips {
            let p: Vec<&[f64]> = p_rows[c * half..(c + 1) * half].iter().map(Vec::as_slice).collect();
            let z: Vec<&[f64]> = z_rows[c * half..(c + 1) * half].iter().map(Vec::as_slice).collect();
            let u: Vec<&[f64]> = bank.iter().map(Vec::as_slice).collect();
            let aff = build_affinity(&p, &z, with_neg.then_some(&u[..])).unwrap();
            oracle += multi_pair_loss(&aff, regime, tau).unwrap() / clips as f64;
        }
        let flat = |r: &[Vec<f64>]| Tensor::new(vec![r.len(), 6], r.concat()).unwrap();
        let mut g = Graph::<f64>::new();
        let p = g.param(flat(p_rows));
        let z = g.constant(flat(z_rows));
        let u = with_neg.then(|| g.constant(flat(&bank)));
        let l = multi_pair_loss_graph(&mut g, p, z, u, clips, regime, tau, true).unwrap();
        prop_assert!((g.value(l).item().unwrap() - oracle).abs() < 1e-12);
    }
}

#[test]
fn infonce_reference_value() {
    let p = [1.0, 0.0];
    let z = [1.0, 0.0];
    let u = [0.0, 1.0];
    let l = infonce_loss(&p, &z, &[&u[..]], 1.0).unwrap();
    let oracle = (1.0f64 + (-1.0f64).exp()).ln();
    assert!((l - oracle).abs() < 1e-12);
    assert!((l - 0.3132617).abs() < 1e-6);
    assert_eq!(infonce_loss(&p, &z, &[], 0.2).unwrap(), 0.0);
}

#[test]
fn affinity_shapes() {
    let e = |i: usize| {
        let mut v = vec![0.0f64; 4];
        v[i % 4] = 1.0;
        v
    };
    for n in [2usize, 4, 8] {
        for k in [0usize, 4, 256] {
            let preds: Vec<Vec<f64>> = (0..n / 2).map(e).collect();
            let targs: Vec<Vec<f64>> = (0..n / 2).map(|i| e(i + 1)).collect();
            let bank: Vec<Vec<f64>> = (0..k).map(e).collect();
            let p: Vec<&[f64]> = preds.iter().map(Vec::as_slice).collect();
            let z: Vec<&[f64]> = targs.iter().map(Vec::as_slice).collect();
            let b: Vec<&[f64]> = bank.iter().map(Vec::as_slice).collect();
            assert_eq!(build_affinity(&p, &z, None).unwrap().shape(), (n / 2, n / 2));
            assert_eq!(build_affinity(&p, &z, Some(&b)).unwrap().shape(), (n / 2, n / 2 + k));
        }
    }
}

#[test]
fn momentum_matches_closed_form() {
    for m in [0.0, 0.9, 0.999] {
        let thetas: Vec<f64> = (0..100).map(|s| (s as f64 * 0.37).sin() * 2.0 + 0.1 * s as f64).collect();
        let xi0 = -0.75;
        let mut xi = vec![Tensor::new(vec![1], vec![xi0]).unwrap()];
        for t in 1..=100usize {
            xi = momentum_update(&[Tensor::new(vec![1], vec![thetas[t - 1]]).unwrap()], &xi, m).unwrap();
            let closed = m.powi(t as i32) * xi0
                + (1.0 - m) * (0..t).map(|s| m.powi((t - 1 - s) as i32) * thetas[s]).sum::<f64>();
            assert!((xi[0].data()[0] - closed).abs() < 1e-6, "m={} t={}", m, t);
        }
    }
}
