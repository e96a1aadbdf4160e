//! Multi-frame affinity between the predictor split and the target split of
//! a clip, optionally extended by bank columns, and the losses over it.

use serde::{Deserialize, Serialize};
use vfs_tensor::{Element, Graph, Var};

use crate::error::{Error, Result};
use crate::objectives::losses::logsumexp;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    WithNeg,
    WithoutNeg,
}

/// Row-major `rows x (pos_cols + neg_cols)` matrix of dot products.
/// `neg_cols` is `None` when no bank was supplied.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinityMatrix<T> {
    pub rows: usize,
    pub pos_cols: usize,
    pub neg_cols: Option<usize>,
    pub values: Vec<T>,
}

impl<T: Element> AffinityMatrix<T> {
    pub fn cols(&self) -> usize {
        self.pos_cols + self.neg_cols.unwrap_or(0)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols())
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[i * self.cols() + j]
    }
}

fn check_rows<T: Element>(rows: &[&[T]], dim: usize, what: &str) -> Result<()> {
    for (i, r) in rows.iter().enumerate() {
        if r.len() != dim {
            return Err(Error::Contract(format!("{} {} has dim {}, expected {}", what, i, r.len(), dim)));
        }
        let norm = r.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > crate::objectives::bank::UNIT_TOLERANCE {
            return Err(Error::Contract(format!("{} {} has norm {:.6}", what, i, norm)));
        }
    }
    Ok(())
}

pub fn build_affinity<T: Element>(
    preds: &[&[T]],
    targets: &[&[T]],
    bank: Option<&[&[T]]>,
) -> Result<AffinityMatrix<T>> {
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(Error::Contract(format!(
            "{} predictor vs {} target embeddings",
            preds.len(),
            targets.len()
        )));
    }
    let dim = preds[0].len();
    check_rows(preds, dim, "predictor embedding")?;
    check_rows(targets, dim, "target embedding")?;
    if let Some(b) = bank {
        check_rows(b, dim, "bank entry")?;
    }
    let cols: Vec<&[T]> = targets.iter().chain(bank.unwrap_or(&[]).iter()).copied().collect();
    let values = preds
        .iter()
        .flat_map(|p| cols.iter().map(move |c| p.iter().zip(c.iter()).map(|(&a, &b)| a * b).sum()))
        .collect();
    Ok(AffinityMatrix {
        rows: preds.len(),
        pos_cols: targets.len(),
        neg_cols: bank.map(|b| b.len()),
        values,
    })
}

pub fn multi_pair_loss<T: Element>(aff: &AffinityMatrix<T>, regime: Regime, tau: f64) -> Result<T> {
    let (r, c) = (aff.rows, aff.pos_cols);
    match regime {
        Regime::WithoutNeg => {
            let mut acc = 0.0;
            for i in 0..r {
                for j in 0..c {
                    acc += 2.0 - 2.0 * aff.get(i, j).as_f64();
                }
            }
            Ok(T::from_f64(acc / (r * c) as f64))
        }
        Regime::WithNeg => {
            let k = aff
                .neg_cols
                .ok_or_else(|| Error::Contract("with-negatives loss needs bank columns".into()))?;
            if !(tau > 0.0) {
                return Err(Error::Parameter(format!("temperature {} must be positive", tau)));
            }
            let mut acc = 0.0;
            for i in 0..r {
                let negs: Vec<f64> = (0..k).map(|q| aff.get(i, c + q).as_f64() / tau).collect();
                for j in 0..c {
                    let mut logits = vec![aff.get(i, j).as_f64() / tau];
                    logits.extend_from_slice(&negs);
                    acc += logsumexp(&logits) - logits[0];
                }
            }
            Ok(T::from_f64(acc / (r * c) as f64))
        }
    }
}

/// Mean multi-pair loss over `clips` clips. `p` and `z` are `[clips * r, D]`
/// with each clip's `r` rows contiguous; `bank` is `[K, D]` and always
/// detached. `z` is detached unless `detach_target` is false. The
/// with-negatives regime requires `bank` (possibly with zero rows, which
/// reduces every cell to a single-term softmax).
#[allow(clippy::too_many_arguments)]
pub fn multi_pair_loss_graph<T: Element>(
    g: &mut Graph<T>,
    p: Var,
    z: Var,
    bank: Option<Var>,
    clips: usize,
    regime: Regime,
    tau: f64,
    detach_target: bool,
) -> Result<Var> {
    let ps = g.shape(p).to_vec();
    if ps.len() != 2 || g.shape(z) != &ps[..] || clips == 0 || !ps[0].is_multiple_of(clips) {
        return Err(Error::Contract(format!(
            "p {:?} / z {:?} do not split into {} clips",
            ps,
            g.shape(z),
            clips
        )));
    }
    let (n, d) = (ps[0], ps[1]);
    let r = n / clips;
    let z = if detach_target { g.stop_gradient(z) } else { z };
    let k = match bank {
        Some(b) => {
            if g.shape(b).len() != 2 || g.shape(b)[1] != d {
                return Err(Error::Contract(format!("bank {:?} for dim {}", g.shape(b), d)));
            }
            g.shape(b)[0]
        }
        None => 0,
    };
    let cols_var = match bank {
        Some(b) if k > 0 => {
            let b = g.stop_gradient(b);
            g.concat(&[z, b])?
        }
        _ => z,
    };
    let ct = g.transpose(cols_var)?;
    let full = g.matmul(p, ct)?;
    let width = n + k;
    let cell = |c: usize, i: usize, j: usize| (c * r + i) * width + c * r + j;
    let cells = clips * r * r;
    match regime {
        Regime::WithoutNeg => {
            let idx = (0..clips)
                .flat_map(|c| (0..r).flat_map(move |i| (0..r).map(move |j| cell(c, i, j))))
                .collect();
            let pos = g.gather(full, idx, &[cells])?;
            let m = g.mean(pos);
            let m2 = g.scale(m, T::from_f64(-2.0));
            Ok(g.add_scalar(m2, T::from_f64(2.0)))
        }
        Regime::WithNeg => {
            if bank.is_none() {
                return Err(Error::Contract("with-negatives loss needs bank columns".into()));
            }
            if !(tau > 0.0) {
                return Err(Error::Parameter(format!("temperature {} must be positive", tau)));
            }
            let mut idx = Vec::with_capacity(cells * (1 + k));
            for c in 0..clips {
                for i in 0..r {
                    for j in 0..r {
                        idx.push(cell(c, i, j));
                        idx.extend((0..k).map(|q| (c * r + i) * width + n + q));
                    }
                }
            }
            let logits = g.gather(full, idx, &[cells, 1 + k])?;
            let logits = g.scale(logits, T::from_f64(1.0 / tau));
            let lsm = g.log_softmax(logits)?;
            let picked = g.gather(lsm, (0..cells).map(|i| i * (1 + k)).collect(), &[cells])?;
            let m = g.mean(picked);
            Ok(g.neg(m))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::losses::infonce_loss;

    #[test]
    fn shapes_with_and_without_bank() {
        let e = [1.0f64, 0.0];
        let four = [&e[..]; 4];
        assert_eq!(build_affinity(&four[..2], &four[..2], None).unwrap().shape(), (2, 2));
        assert_eq!(build_affinity(&four, &four, Some(&four)).unwrap().shape(), (4, 8));
        let aff = build_affinity(&four, &four, None).unwrap();
        assert!(aff.values.iter().all(|&v| v == 1.0));
        assert!(build_affinity(&four[..2], &four[..3], None).is_err());
    }

    #[test]
    fn loss_examples() {
        let one = AffinityMatrix { rows: 1, pos_cols: 1, neg_cols: None, values: vec![1.0f64] };
        assert_eq!(multi_pair_loss(&one, Regime::WithoutNeg, 0.2).unwrap(), 0.0);
        let zeros = AffinityMatrix { rows: 2, pos_cols: 2, neg_cols: None, values: vec![0.0f64; 4] };
        assert_eq!(multi_pair_loss(&zeros, Regime::WithoutNeg, 0.2).unwrap(), 2.0);
        assert!(multi_pair_loss(&zeros, Regime::WithNeg, 0.2).is_err());
    }

    #[test]
    fn single_row_with_bank_is_infonce() {
        let p = [0.6f64, 0.8];
        let z = [1.0f64, 0.0];
        let u = [[0.0f64, 1.0], [-0.8, 0.6]];
        let bank: Vec<&[f64]> = u.iter().map(|r| &r[..]).collect();
        let aff = build_affinity(&[&p], &[&z], Some(&bank)).unwrap();
        let want = infonce_loss(&p, &z, &bank, 0.2).unwrap();
        assert!((multi_pair_loss(&aff, Regime::WithNeg, 0.2).unwrap() - want).abs() < 1e-12);
    }
}
