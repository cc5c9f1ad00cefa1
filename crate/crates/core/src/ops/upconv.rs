use super::conv::ConvKernel;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

pub(crate) fn check_up_geometry<T: Scalar>(input: &Tensor4<T>, weight: &Tensor4<T>, bias_len: usize) -> Result<()> {
    let [o, c, kh, kw] = weight.shape();
    if kh != 2 || kw != 2 {
        return Err(Error::KernelGeometry {
            op: "up_conv_2x2",
            reason: format!("expected a 2x2 kernel, got {kh}x{kw}"),
        });
    }
    if c != input.c() {
        return Err(Error::ChannelMismatch {
            op: "up_conv_2x2",
            input: input.shape(),
            kernel: weight.shape(),
            input_channels: input.c(),
            kernel_in: c,
        });
    }
    if bias_len != o {
        return Err(Error::KernelGeometry {
            op: "up_conv_2x2",
            reason: format!("bias has {bias_len} entries for {o} output channels"),
        });
    }
    Ok(())
}

pub(crate) fn up_conv_raw<T: Scalar>(input: &Tensor4<T>, weight: &Tensor4<T>, bias: &[T]) -> Result<Tensor4<T>> {
    check_up_geometry(input, weight, bias.len())?;
    let [n, c, h, w] = input.shape();
    let o = weight.n();
    let hw = h * w;
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = Tensor4::zeros([n, o, ho, wo]);
    let mut tap = vec![T::zero(); o * hw];
    for ni in 0..n {
        let x = input.sample(ni);
        let y = out.sample_mut(ni);
        for a in 0..2 {
            for b in 0..2 {
                // W_ab[o][c] = weight[o, c, a, b]
                let wab = &weight.data()[a * 2 + b..];
                T::gemm(o, c, hw, T::one(), wab, 4 * c as isize, 4, x, hw as isize, 1, T::zero(), &mut tap, hw as isize, 1);
                for oc in 0..o {
                    let bias = bias[oc];
                    let src = &tap[oc * hw..(oc + 1) * hw];
                    let dst = &mut y[oc * ho * wo..(oc + 1) * ho * wo];
                    for i in 0..h {
                        let row = &mut dst[(2 * i + a) * wo..(2 * i + a + 1) * wo];
                        for j in 0..w {
                            row[2 * j + b] = src[i * w + j] + bias;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Transposed 2×2 convolution at stride 2: every input element scatters a
/// weighted 2×2 footprint, footprints never overlap.
///
/// `kernel.weight` is `(out_channels, in_channels, 2, 2)`.
pub fn up_conv_2x2<T: Scalar>(input: &Tensor4<T>, kernel: &ConvKernel<T>) -> Result<Tensor4<T>> {
    if kernel.stride != 2 || kernel.dilation != 1 || kernel.padding != 0 {
        return Err(Error::KernelGeometry {
            op: "up_conv_2x2",
            reason: format!(
                "expected stride 2, dilation 1, padding 0; got stride {}, dilation {}, padding {}",
                kernel.stride, kernel.dilation, kernel.padding
            ),
        });
    }
    up_conv_raw(input, &kernel.weight, &kernel.bias)
}

/// Returns `(d_input, d_weight, d_bias)`.
pub fn up_conv_2x2_backward<T: Scalar>(
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
    grad_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, Tensor4<T>, Vec<T>)> {
    check_up_geometry(input, weight, weight.n())?;
    let [n, c, h, w] = input.shape();
    let o = weight.n();
    if grad_out.shape() != [n, o, 2 * h, 2 * w] {
        return Err(Error::ShapeMismatch {
            op: "up_conv_2x2_backward",
            expected: vec![n, o, 2 * h, 2 * w],
            got: grad_out.shape().to_vec(),
        });
    }
    let hw = h * w;
    let wo = 2 * w;
    let mut dx = Tensor4::zeros(input.shape());
    let mut dw = Tensor4::zeros(weight.shape());
    let mut db = vec![T::zero(); o];
    let mut tap = vec![T::zero(); o * hw];
    for ni in 0..n {
        let x = input.sample(ni);
        let go = grad_out.sample(ni);
        for (oc, acc) in db.iter_mut().enumerate() {
            *acc += go[oc * 4 * hw..(oc + 1) * 4 * hw].iter().copied().sum::<T>();
        }
        for a in 0..2 {
            for b in 0..2 {
                for oc in 0..o {
                    let src = &go[oc * 4 * hw..(oc + 1) * 4 * hw];
                    for i in 0..h {
                        let row = &src[(2 * i + a) * wo..(2 * i + a + 1) * wo];
                        for j in 0..w {
                            tap[oc * hw + i * w + j] = row[2 * j + b];
                        }
                    }
                }
                let off = a * 2 + b;
                // dX += W_abᵀ · G_ab
                T::gemm(c, o, hw, T::one(), &weight.data()[off..], 4, 4 * c as isize, &tap, hw as isize, 1, T::one(), dx.sample_mut(ni), hw as isize, 1);
                // dW_ab += G_ab · Xᵀ
                T::gemm(o, hw, c, T::one(), &tap, hw as isize, 1, x, 1, hw as isize, T::one(), &mut dw.data_mut()[off..], 4 * c as isize, 4);
            }
        }
    }
    Ok((dx, dw, db))
}
