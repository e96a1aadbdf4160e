//! Cosine and InfoNCE objectives, as plain functions of embedding values
//! and as graph builders for training.

use vfs_tensor::{Element, Graph, Var};

use crate::error::{Error, Result};
use crate::objectives::bank::UNIT_TOLERANCE;

fn check_unit<T: Element>(v: &[T], what: &str) -> Result<()> {
    let norm = v.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::Contract(format!("{} has norm {:.6}, expected 1", what, norm)));
    }
    Ok(())
}

fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// `2 - 2 p.z` for unit vectors, i.e. the squared distance `|p - z|^2`.
pub fn cosine_loss<T: Element>(p: &[T], z: &[T]) -> Result<T> {
    if p.len() != z.len() {
        return Err(Error::Contract(format!("dims {} vs {}", p.len(), z.len())));
    }
    check_unit(p, "p")?;
    check_unit(z, "z")?;
    let two = T::from_f64(2.0);
    Ok(two - two * dot(p, z))
}

/// `-log(exp(p.z/tau) / (exp(p.z/tau) + sum_k exp(p.u_k/tau)))`, evaluated
/// with a max shift.
pub fn infonce_loss<T: Element>(p: &[T], z: &[T], negatives: &[&[T]], tau: f64) -> Result<T> {
    if !(tau > 0.0) {
        return Err(Error::Parameter(format!("temperature {} must be positive", tau)));
    }
    if p.len() != z.len() || negatives.iter().any(|u| u.len() != p.len()) {
        return Err(Error::Contract("embedding dims differ".into()));
    }
    check_unit(p, "p")?;
    check_unit(z, "z")?;
    for (k, u) in negatives.iter().enumerate() {
        check_unit(u, &format!("negative {}", k))?;
    }
    let logits: Vec<f64> = std::iter::once(dot(p, z))
        .chain(negatives.iter().map(|u| dot(p, u)))
        .map(|s| s.as_f64() / tau)
        .collect();
    Ok(T::from_f64(logsumexp(&logits) - logits[0]))
}

pub(crate) fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Mean of `2 - 2 p_i.z_i` over the rows of `p` and `z` (`[B, D]`). `z` is
/// detached here, so callers may pass a live branch.
pub fn cosine_loss_graph<T: Element>(g: &mut Graph<T>, p: Var, z: Var) -> Result<Var> {
    if g.shape(p) != g.shape(z) || g.shape(p).len() != 2 {
        return Err(Error::Contract(format!("p {:?} vs z {:?}", g.shape(p), g.shape(z))));
    }
    let rows = g.shape(p)[0];
    let z = g.stop_gradient(z);
    let prod = g.mul(p, z)?;
    let total = g.sum(prod);
    let mean_dot = g.scale(total, T::from_f64(1.0 / rows as f64));
    let neg2 = g.scale(mean_dot, T::from_f64(-2.0));
    Ok(g.add_scalar(neg2, T::from_f64(2.0)))
}

/// Mean InfoNCE over rows of `p` paired with the same rows of `z`, with the
/// rows of `negatives` (`[K, D]`) shared by every pair. `z` and the
/// negatives are detached.
pub fn infonce_graph<T: Element>(
    g: &mut Graph<T>,
    p: Var,
    z: Var,
    negatives: Option<Var>,
    tau: f64,
) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::Parameter(format!("temperature {} must be positive", tau)));
    }
    if g.shape(p) != g.shape(z) || g.shape(p).len() != 2 {
        return Err(Error::Contract(format!("p {:?} vs z {:?}", g.shape(p), g.shape(z))));
    }
    let (b, d) = (g.shape(p)[0], g.shape(p)[1]);
    let z = g.stop_gradient(z);
    let pos = g.mul(p, z)?;
    let ones = g.constant(vfs_tensor::Tensor::full(vec![d, 1], T::one()));
    let pos = g.matmul(pos, ones)?;
    let logits = match negatives {
        Some(u) if g.shape(u)[0] > 0 => {
            if g.shape(u).len() != 2 || g.shape(u)[1] != d {
                return Err(Error::Contract(format!("negatives {:?} for dim {}", g.shape(u), d)));
            }
            let k = g.shape(u)[0];
            let u = g.stop_gradient(u);
            let ut = g.transpose(u)?;
            let neg = g.matmul(p, ut)?;
            // Interleave [pos_i, neg_i,*] row by row.
            let pos_flat = g.reshape(pos, &[b])?;
            let neg_flat = g.reshape(neg, &[b * k])?;
            let stacked = g.concat(&[pos_flat, neg_flat])?;
            let idx = (0..b)
                .flat_map(|i| std::iter::once(i).chain((0..k).map(move |j| b + i * k + j)))
                .collect();
            g.gather(stacked, idx, &[b, 1 + k])?
        }
        _ => pos,
    };
    let logits = g.scale(logits, T::from_f64(1.0 / tau));
    let lsm = g.log_softmax(logits)?;
    let cols = g.shape(lsm)[1];
    let picked = g.gather(lsm, (0..b).map(|i| i * cols).collect(), &[b])?;
    let mean = g.mean(picked);
    Ok(g.neg(mean))
}
