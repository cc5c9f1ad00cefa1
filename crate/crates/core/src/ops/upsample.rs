use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

pub const SUPPORTED_FACTORS: [usize; 4] = [1, 2, 4, 8];

/// Source taps `(lo, hi, frac)` for each destination index along one axis,
/// using sample-center (align-corners-false) geometry.
fn axis_taps(len: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..len * factor)
        .map(|d| {
            let src = ((d as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(len - 1);
            let hi = (lo + 1).min(len - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

fn check_factor(factor: usize) -> Result<()> {
    if SUPPORTED_FACTORS.contains(&factor) {
        Ok(())
    } else {
        Err(Error::UnsupportedFactor(factor))
    }
}

/// Bilinear upsampling by an integer factor in {1, 2, 4, 8}.
pub fn bilinear_upsample<T: Scalar>(input: &Tensor4<T>, factor: usize) -> Result<Tensor4<T>> {
    check_factor(factor)?;
    if factor == 1 {
        return Ok(input.clone());
    }
    let [n, c, h, w] = input.shape();
    let (ho, wo) = (h * factor, w * factor);
    let rows = axis_taps(h, factor);
    let cols = axis_taps(w, factor);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut wide = vec![T::zero(); h * wo];
    for plane in 0..n * c {
        let src = &input.data()[plane * h * w..(plane + 1) * h * w];
        for y in 0..h {
            for (x, &(lo, hi, f)) in cols.iter().enumerate() {
                let a = src[y * w + lo];
                let b = src[y * w + hi];
                wide[y * wo + x] = a + T::from_f64_lossy(f) * (b - a);
            }
        }
        for &(lo, hi, f) in &rows {
            let f = T::from_f64_lossy(f);
            for x in 0..wo {
                let a = wide[lo * wo + x];
                let b = wide[hi * wo + x];
                out.push(a + f * (b - a));
            }
        }
    }
    Tensor4::new([n, c, ho, wo], out)
}

/// Transpose of [`bilinear_upsample`].
pub fn bilinear_upsample_backward<T: Scalar>(
    input_shape: [usize; 4],
    factor: usize,
    grad_out: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    check_factor(factor)?;
    let [n, c, h, w] = input_shape;
    let (ho, wo) = (h * factor, w * factor);
    if grad_out.shape() != [n, c, ho, wo] {
        return Err(Error::ShapeMismatch {
            op: "bilinear_upsample_backward",
            expected: vec![n, c, ho, wo],
            got: grad_out.shape().to_vec(),
        });
    }
    if factor == 1 {
        return Ok(grad_out.clone());
    }
    let rows = axis_taps(h, factor);
    let cols = axis_taps(w, factor);
    let mut dx = Tensor4::zeros(input_shape);
    let mut wide = vec![T::zero(); h * wo];
    for plane in 0..n * c {
        let g = &grad_out.data()[plane * ho * wo..(plane + 1) * ho * wo];
        wide.fill(T::zero());
        for (y, &(lo, hi, f)) in rows.iter().enumerate() {
            let f = T::from_f64_lossy(f);
            for x in 0..wo {
                let v = g[y * wo + x];
                wide[lo * wo + x] += v - f * v;
                wide[hi * wo + x] += f * v;
            }
        }
        let dst = &mut dx.data_mut()[plane * h * w..(plane + 1) * h * w];
        for y in 0..h {
            for (x, &(lo, hi, f)) in cols.iter().enumerate() {
                let f = T::from_f64_lossy(f);
                let v = wide[y * wo + x];
                dst[y * w + lo] += v - f * v;
                dst[y * w + hi] += f * v;
            }
        }
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_one_identity() {
        let x = Tensor4::from_fn([1, 2, 3, 3], |_, c, y, x| (c * 9 + y * 3 + x) as f32);
        assert_eq!(bilinear_upsample(&x, 1).unwrap(), x);
    }

    #[test]
    fn two_pixel_row() {
        let x = Tensor4::new([1, 1, 1, 2], vec![0.0f64, 1.0]).unwrap();
        let y = bilinear_upsample(&x, 2).unwrap();
        assert_eq!(y.shape(), [1, 1, 2, 4]);
        assert_eq!(&y.data()[..4], &[0.0, 0.25, 0.75, 1.0]);
        assert_eq!(&y.data()[4..], &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn constants_are_exact() {
        for f in [2, 4, 8] {
            let x = Tensor4::full([1, 1, 3, 5], 0.1f32);
            let y = bilinear_upsample(&x, f).unwrap();
            assert!(y.data().iter().all(|&v| v == 0.1));
        }
    }

    #[test]
    fn unsupported_factor() {
        let x = Tensor4::<f32>::zeros([1, 1, 2, 2]);
        assert!(matches!(bilinear_upsample(&x, 3), Err(Error::UnsupportedFactor(3))));
    }

    #[test]
    fn backward_is_transpose() {
        // <U x, g> == <x, Uᵀ g>
        let x = Tensor4::from_fn([1, 2, 3, 4], |_, c, y, x| ((c * 5 + y * 3 + x * 7) % 9) as f64 - 4.0);
        let g = Tensor4::from_fn([1, 2, 12, 16], |_, c, y, x| ((c + y * 5 + x * 3) % 7) as f64 - 3.0);
        let lhs = bilinear_upsample(&x, 4).unwrap().dot(&g).unwrap();
        let rhs = x.dot(&bilinear_upsample_backward(x.shape(), 4, &g).unwrap()).unwrap();
        assert!((lhs - rhs).abs() < 1e-9);
    }
}
