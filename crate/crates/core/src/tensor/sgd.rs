use super::Tensor;
use crate::error::{shape_err, Error, Result};

/// Momentum SGD: `v' = momentum * v + grad`, `param' = param - lr * v'`.
///
/// Nothing is written when `grad` holds a non-finite entry.
pub fn sgd_update(
    param: &mut Tensor<f32>,
    grad: &Tensor<f32>,
    velocity: &mut Tensor<f32>,
    lr: f32,
    momentum: f32,
) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != velocity.shape() {
        return shape_err(format!(
            "sgd shapes differ: param {:?}, grad {:?}, velocity {:?}",
            param.shape(),
            grad.shape(),
            velocity.shape()
        ));
    }
    if !grad.is_finite() {
        return Err(Error::Numeric("non-finite gradient entry".into()));
    }
    for ((p, v), &g) in param.data_mut().iter_mut().zip(velocity.data_mut()).zip(grad.data()) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f32]) -> Tensor<f32> {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn plain_step_without_momentum() {
        let (mut p, mut v) = (t(&[1.0, -2.0]), t(&[0.0, 0.0]));
        sgd_update(&mut p, &t(&[0.5, 1.0]), &mut v, 0.1, 0.0).unwrap();
        assert_eq!(p.data(), &[1.0 - 0.05, -2.0 - 0.1]);
        assert_eq!(v.data(), &[0.5, 1.0]);
    }

    #[test]
    fn zero_grad_is_fixed_point() {
        let (mut p, mut v) = (t(&[3.0]), t(&[0.0]));
        sgd_update(&mut p, &t(&[0.0]), &mut v, 0.5, 0.9).unwrap();
        assert_eq!(p.data(), &[3.0]);
    }

    #[test]
    fn momentum_recurrence() {
        let (mut p, mut v) = (t(&[0.0]), t(&[0.0]));
        sgd_update(&mut p, &t(&[1.0]), &mut v, 1.0, 0.9).unwrap();
        assert_eq!((p.data()[0], v.data()[0]), (-1.0, 1.0));
        sgd_update(&mut p, &t(&[1.0]), &mut v, 1.0, 0.9).unwrap();
        assert!((v.data()[0] - 1.9).abs() < 1e-6);
        assert!((p.data()[0] + 2.9).abs() < 1e-6);
    }

    #[test]
    fn non_finite_gradient_aborts_untouched() {
        let (mut p, mut v) = (t(&[1.0, 1.0]), t(&[0.5, 0.5]));
        let err = sgd_update(&mut p, &t(&[0.1, f32::NAN]), &mut v, 0.1, 0.9);
        assert!(matches!(err, Err(Error::Numeric(_))));
        assert_eq!(p.data(), &[1.0, 1.0]);
        assert_eq!(v.data(), &[0.5, 0.5]);
    }
}
