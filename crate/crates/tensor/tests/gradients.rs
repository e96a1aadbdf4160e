//! Randomized finite-difference checks of every primitive's backward rule.

use proptest::prelude::*;
use vfs_tensor::{grad_check, BnMode, ConvParams, Graph, Result, Tensor, Var};

const TOL: f64 = 1e-4;
const EPS: f64 = 1e-5;

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n)
}

fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Contracts an arbitrary-shaped output with fixed weights so every output
/// element contributes a distinct amount to the scalar.
fn project(g: &mut Graph<f64>, y: Var) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let w = Tensor::from_fn(shape, |i| ((i as f64) * 0.731).sin() + 0.1);
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn check<F>(f: F, inputs: &[Tensor<f64>]) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    grad_check(f, inputs, EPS).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn elementwise(a in values(6), b in values(6)) {
        let err = check(|g, v| {
            let s = g.add(v[0], v[1])?;
            let d = g.sub(s, v[1])?;
            let m = g.mul(d, v[1])?;
            let m = g.scale(m, 0.7);
            let m = g.add_scalar(m, -0.2);
            project(g, m)
        }, &[t(&[2, 3], a), t(&[2, 3], b)]);
        prop_assert!(err <= TOL, "err {}", err);
    }

    #[test]
    fn matmul_and_transpose(a in values(6), b in values(6)) {
        let err = check(|g, v| {
            let bt = g.transpose(v[1])?;
            let m = g.matmul(v[0], bt)?;
            project(g, m)
        }, &[t(&[2, 3], a), t(&[2, 3], b)]);
        prop_assert!(err <= TOL, "err {}", err);
    }

    #[test]
    fn conv2d_strided_padded(x in values(2 * 2 * 5 * 5), w in values(3 * 2 * 3 * 3), b in values(3)) {
        let err = check(|g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), ConvParams { stride: 2, pad: 1 })?;
            project(g, y)
        }, &[t(&[2, 2, 5, 5], x), t(&[3, 2, 3, 3], w), t(&[3], b)]);
        prop_assert!(err <= TOL, "err {}", err);
    }

    #[test]
    fn relu(x in values(8)) {
        prop_assume!(x.iter().all(|v| v.abs() > 1e-3));
        let err = check(|g, v| {
            let y = g.relu(v[0]);
            project(g, y)
        }, &[t(&[8], x)]);
        prop_assert!(err <= TOL, "err {}", err);
    }

    #[test]
    fn mean_pool_and_bias(x in values(2 * 3 * 2 * 2), b in values(3)) {
        let err = check(|g, v| {
            let y = g.bias_add(v[0], v[1])?;
            let y = g.mean_pool(y)?;
            project(g, y)
        }, &[t(&[2, 3, 2, 2], x), t(&[3], b)]);
        prop_assert!(err <= TOL, "err {}", err);
    }

    #[test]
    fn softmax_any_axis(x in values(24), axis in 0usize..3) {
        let err = check(|g, v| {
            let y = g.softmax(v[0], axis)?;
            project(g, y)
        }, &[t(&[2, 3, 4], x)]);
        prop_assert!(err <= TOL, "err {}", err);
    }

    #[test]
    fn log_softmax_rows(x in values(12)) {
        let err = check(|g, v| {
            let y = g.log_softmax(v[0])?;
            project(g, y)
        }, &[t(&[3, 4], x)]);
        prop_assert!(err <= TOL, "err {}", err);
    }

    #[test]
    fn reshape_sum_mean(x in values(12)) {
        let err = check(|g, v| {
            let y = g.reshape(v[0], &[4, 3])?;
            let p = project(g, y)?;
            let m = g.mean(v[0]);
            let sq = g.mul(m, m)?;
            g.add(p, sq)
        }, &[t(&[2, 6], x)]);
        prop_assert!(err <= TOL, "err {}", err);
    }

    #[test]
    fn l2_normalize_axis(x in values(12), axis in 0usize..2) {
        prop_assume!(x.iter().map(|v| v * v).sum::<f64>() > 1e-2);
        let err = check(|g, v| {
            let y = g.l2_normalize(v[0], axis, 1e-12)?;
            project(g, y)
        }, &[t(&[3, 4], x)]);
        prop_assert!(err <= TOL, "err {}", err);
    }

    #[test]
    fn batch_norm_train(x in values(4 * 3 * 2 * 2), gam in values(3), bet in values(3)) {
        let err = check(|g, v| {
            let (y, _) = g.batch_norm(v[0], v[1], v[2], BnMode::Train { eps: 1e-5 })?;
            project(g, y)
        }, &[t(&[4, 3, 2, 2], x), t(&[3], gam), t(&[3], bet)]);
        prop_assert!(err <= TOL, "err {}", err);
    }

    #[test]
    fn batch_norm_eval(x in values(5 * 3), gam in values(3), bet in values(3)) {
        let mean = [0.1, -0.3, 0.5];
        let var = [0.8, 1.3, 0.2];
        let err = check(|g, v| {
            let mode = BnMode::Eval { mean: &mean, var: &var, eps: 1e-5 };
            let (y, _) = g.batch_norm(v[0], v[1], v[2], mode)?;
            project(g, y)
        }, &[t(&[5, 3], x), t(&[3], gam), t(&[3], bet)]);
        prop_assert!(err <= TOL, "err {}", err);
    }

    #[test]
    fn gather_rows_concat(x in values(12), y in values(8)) {
        let err = check(|g, v| {
            let r = g.rows(v[0], 1, 3)?;
            let c = g.concat(&[r, v[1]])?;
            let picked = g.gather(c, vec![0, 5, 5, 9, 15], &[5])?;
            let p1 = project(g, picked)?;
            let p2 = project(g, c)?;
            g.add(p1, p2)
        }, &[t(&[3, 4], x), t(&[2, 4], y)]);
        prop_assert!(err <= TOL, "err {}", err);
    }

    /// Cutting a branch with stop-gradient gives the same upstream gradient
    /// as feeding that branch's value in as a constant.
    #[test]
    fn stop_gradient_equals_constant_branch(x in values(4), w in values(4)) {
        let build = |g: &mut Graph<f64>, x: Var, w: Var, cut: bool| -> Result<Var> {
            let branch = g.mul(x, w)?;
            let branch = if cut {
                g.stop_gradient(branch)
            } else {
                let value = g.value(branch).clone();
                g.constant(value)
            };
            let other = g.mul(x, x)?;
            let y = g.mul(branch, other)?;
            Ok(g.sum(y))
        };
        let mut grads = Vec::new();
        for cut in [true, false] {
            let mut g = Graph::new();
            let xv = g.param(t(&[4], x.clone()));
            let wv = g.param(t(&[4], w.clone()));
            let out = build(&mut g, xv, wv, cut)?;
            let gr = g.backward(out).unwrap();
            grads.push((gr.get(xv).unwrap().clone(), gr.get(wv).unwrap().clone()));
        }
        prop_assert_eq!(&grads[0], &grads[1]);
        prop_assert!(grads[0].1.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn forward_is_bit_deterministic() {
    let run = || {
        let mut g = Graph::<f32>::new();
        let x = g.param(Tensor::from_fn(vec![2, 3, 8, 8], |i| ((i * 7919) % 101) as f32 / 50.0 - 1.0));
        let w = g.param(Tensor::from_fn(vec![4, 3, 3, 3], |i| ((i * 31) % 17) as f32 / 17.0 - 0.5));
        let y = g.conv2d(x, w, None, ConvParams { stride: 2, pad: 1 }).unwrap();
        let y = g.relu(y);
        let y = g.mean_pool(y).unwrap();
        let y = g.l2_normalize(y, 1, 1e-12).unwrap();
        g.value(y).clone()
    };
    let a = run();
    let b = run();
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}
