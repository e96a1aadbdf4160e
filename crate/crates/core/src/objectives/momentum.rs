use vfs_tensor::{Element, Tensor};

use crate::error::{Error, Result};

fn check(theta: usize, xi: usize, m: f64) -> Result<()> {
    if !(0.0..1.0).contains(&m) {
        return Err(Error::Parameter(format!("momentum {} outside [0, 1)", m)));
    }
    if theta != xi {
        return Err(Error::Contract(format!("{} online vs {} target tensors", theta, xi)));
    }
    Ok(())
}

/// `xi <- m * xi + (1 - m) * theta`, elementwise over congruent tensors.
pub fn momentum_update<T: Element>(theta: &[Tensor<T>], xi: &[Tensor<T>], m: f64) -> Result<Vec<Tensor<T>>> {
    let mut out = xi.to_vec();
    momentum_update_in_place(theta, &mut out, m)?;
    Ok(out)
}

pub fn momentum_update_in_place<T: Element>(theta: &[Tensor<T>], xi: &mut [Tensor<T>], m: f64) -> Result<()> {
    check(theta.len(), xi.len(), m)?;
    if let Some(i) = theta.iter().zip(xi.iter()).position(|(a, b)| a.shape() != b.shape()) {
        return Err(Error::Contract(format!(
            "tensor {}: {:?} vs {:?}",
            i,
            theta[i].shape(),
            xi[i].shape()
        )));
    }
    let (mt, one_m) = (T::from_f64(m), T::from_f64(1.0 - m));
    for (t, x) in theta.iter().zip(xi.iter_mut()) {
        for (dst, &src) in x.data_mut().iter_mut().zip(t.data()) {
            *dst = mt * *dst + one_m * src;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let theta = vec![Tensor::vector(vec![1.0f64, 2.0])];
        let xi = vec![Tensor::vector(vec![5.0f64, -3.0])];
        assert_eq!(momentum_update(&theta, &xi, 0.0).unwrap(), theta);
        assert_eq!(momentum_update(&theta, &theta, 0.7).unwrap(), theta);
        let zero = vec![Tensor::vector(vec![0.0f64])];
        let one = vec![Tensor::vector(vec![1.0f64])];
        let out = momentum_update(&one, &zero, 0.999).unwrap();
        assert!((out[0].data()[0] - 0.001).abs() < 1e-15);
        assert!(momentum_update(&one, &theta, 0.5).is_err());
        assert!(momentum_update(&one, &zero, 1.0).is_err());
    }
}
