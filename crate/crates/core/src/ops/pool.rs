use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// 2×2, stride-2 max pooling.
pub fn max_pool_2x2<T: Scalar>(input: &Tensor4<T>) -> Result<Tensor4<T>> {
    max_pool_2x2_with_argmax(input).map(|(out, _)| out)
}

/// Pooling that also returns, per output element, the flat input index of
/// the winning element. Ties go to the first maximum in row-major window order.
pub fn max_pool_2x2_with_argmax<T: Scalar>(input: &Tensor4<T>) -> Result<(Tensor4<T>, Vec<usize>)> {
    let [n, c, h, w] = input.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::OddSpatial { h, w });
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    let data = input.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let top = base + 2 * oy * w + 2 * ox;
                let mut best = top;
                for idx in [top + 1, top + w, top + w + 1] {
                    if data[idx] > data[best] {
                        best = idx;
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor4::new([n, c, ho, wo], out)?, argmax))
}

/// Routes each output gradient to its recorded argmax.
pub fn max_pool_2x2_backward<T: Scalar>(
    input_shape: [usize; 4],
    argmax: &[usize],
    grad_out: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    if grad_out.len() != argmax.len() {
        return Err(Error::ShapeMismatch {
            op: "max_pool_2x2_backward",
            expected: vec![argmax.len()],
            got: grad_out.shape().to_vec(),
        });
    }
    let mut dx = Tensor4::zeros(input_shape);
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        d[i] += g;
    }
    Ok(dx)
}
