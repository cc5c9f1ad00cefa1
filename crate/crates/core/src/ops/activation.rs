use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

pub fn relu<T: Scalar>(input: &Tensor4<T>) -> Tensor4<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `grad_out` where the forward input was strictly positive.
pub fn relu_backward<T: Scalar>(input: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    input.check_same_shape("relu_backward", grad_out)?;
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor4::new(input.shape(), data)
}

/// Logistic function, evaluated without overflow for large |x|.
#[inline]
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(input: &Tensor4<T>) -> Tensor4<T> {
    input.map(sigmoid_scalar)
}

/// Uses the forward output `s`: `ds/dx = s (1 − s)`.
pub fn sigmoid_backward<T: Scalar>(output: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    output.check_same_shape("sigmoid_backward", grad_out)?;
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&s, &g)| g * s * (T::one() - s))
        .collect();
    Tensor4::new(output.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f64]) -> Tensor4<f64> {
        Tensor4::new([1, 1, 1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn relu_definition() {
        assert_eq!(relu(&row(&[-1.0, 0.0, 2.0])).data(), &[0.0, 0.0, 2.0]);
        assert!(relu(&row(&[-3.0, -0.5, -1e-9])).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_gradient_gate() {
        let g = relu_backward(&row(&[3.0, -3.0, 0.0]), &row(&[1.0, 1.0, 1.0])).unwrap();
        assert_eq!(g.data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn sigmoid_values() {
        let s = sigmoid(&row(&[0.0, 3f64.ln(), 800.0, -800.0]));
        assert_eq!(s.data()[0], 0.5);
        assert!((s.data()[1] - 0.75).abs() < 1e-15);
        assert_eq!(s.data()[2], 1.0);
        assert!(s.data()[3] >= 0.0 && s.data()[3] < 1e-300);
        assert!(s.all_finite());
        let s32 = sigmoid_scalar(40.0f32);
        assert!(s32 <= 1.0 && s32 > 0.999);
        assert!(sigmoid_scalar(-40.0f32) > 0.0);
    }
}
