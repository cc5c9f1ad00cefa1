use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Upper bound on im2col buffer elements; larger images are processed in row bands.
const COLS_BUDGET: usize = 1 << 22;

/// Spatial extent covered by a `k`-tap kernel at dilation `r`: `k + (k-1)(r-1)`.
pub fn effective_kernel_size(k: usize, r: usize) -> usize {
    k + (k - 1) * (r - 1)
}

/// Convolution weights plus geometry.
///
/// `weight` is `(out_channels, in_channels, k, k)`; `bias` has one entry per
/// output channel. `stride` is 1 for ordinary convolutions and 2 for the
/// transposed 2×2 up-convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel<T> {
    pub weight: Tensor4<T>,
    pub bias: Vec<T>,
    pub dilation: usize,
    pub padding: usize,
    pub stride: usize,
}

impl<T: Scalar> ConvKernel<T> {
    pub fn new(weight: Tensor4<T>, bias: Vec<T>, dilation: usize, padding: usize) -> Self {
        Self {
            weight,
            bias,
            dilation,
            padding,
            stride: 1,
        }
    }

    /// Stride-1 kernel padded so the output keeps the input's size.
    pub fn same(weight: Tensor4<T>, bias: Vec<T>, dilation: usize) -> Self {
        let k = weight.h();
        let padding = dilation * (k.saturating_sub(1)) / 2;
        Self::new(weight, bias, dilation, padding)
    }

    /// 2×2, stride-2 kernel for [`up_conv_2x2`](super::up_conv_2x2).
    pub fn up(weight: Tensor4<T>, bias: Vec<T>) -> Self {
        Self {
            weight,
            bias,
            dilation: 1,
            padding: 0,
            stride: 2,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.n()
    }

    pub fn in_channels(&self) -> usize {
        self.weight.c()
    }

    pub fn size(&self) -> usize {
        self.weight.h()
    }

    pub fn effective_extent(&self) -> usize {
        effective_kernel_size(self.size(), self.dilation)
    }
}

pub(crate) struct Geometry {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub k: usize,
    pub r: usize,
    pub p: usize,
    pub ho: usize,
    pub wo: usize,
}

impl Geometry {
    fn ck2(&self) -> usize {
        self.c * self.k * self.k
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.p == 0
    }

    fn band_rows(&self) -> usize {
        (COLS_BUDGET / (self.ck2() * self.wo).max(1)).clamp(1, self.ho)
    }
}

pub(crate) fn geometry<T: Scalar>(
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
    bias_len: usize,
    dilation: usize,
    padding: usize,
) -> Result<Geometry> {
    if dilation == 0 {
        return Err(Error::InvalidDilation(dilation));
    }
    let [n, c, h, w] = input.shape();
    let [o, ci, kh, kw] = weight.shape();
    if ci != c {
        return Err(Error::ChannelMismatch {
            op: "conv2d",
            input: input.shape(),
            kernel: weight.shape(),
            input_channels: c,
            kernel_in: ci,
        });
    }
    if kh != kw || kh == 0 {
        return Err(Error::KernelGeometry {
            op: "conv2d",
            reason: format!("kernel must be square and non-empty, got {kh}x{kw}"),
        });
    }
    if bias_len != o {
        return Err(Error::KernelGeometry {
            op: "conv2d",
            reason: format!("bias has {bias_len} entries for {o} output channels"),
        });
    }
    let extent = effective_kernel_size(kh, dilation);
    if h + 2 * padding < extent || w + 2 * padding < extent {
        return Err(Error::KernelGeometry {
            op: "conv2d",
            reason: format!("effective extent {extent} exceeds padded input {h}x{w} (padding {padding})"),
        });
    }
    Ok(Geometry {
        n,
        c,
        h,
        w,
        o,
        k: kh,
        r: dilation,
        p: padding,
        ho: h + 2 * padding - extent + 1,
        wo: w + 2 * padding - extent + 1,
    })
}

/// Valid output-column range `[lo, hi)` for a tap at horizontal offset `dx`.
#[inline]
fn column_range(dx: isize, wo: usize, w: usize) -> (usize, usize) {
    let lo = (-dx).max(0) as usize;
    let hi = (w as isize - dx).clamp(0, wo as isize) as usize;
    (lo.min(hi), hi)
}

fn im2col<T: Scalar>(x: &[T], g: &Geometry, oy0: usize, oy1: usize, cols: &mut [T]) {
    let ncol = (oy1 - oy0) * g.wo;
    let hw = g.h * g.w;
    for ci in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * ncol..(row + 1) * ncol];
                let dx = (kx * g.r) as isize - g.p as isize;
                let (lo, hi) = column_range(dx, g.wo, g.w);
                for oy in oy0..oy1 {
                    let drow = &mut dst[(oy - oy0) * g.wo..(oy - oy0 + 1) * g.wo];
                    let iy = (oy + ky * g.r) as isize - g.p as isize;
                    if iy < 0 || iy >= g.h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    drow[..lo].fill(T::zero());
                    drow[hi..].fill(T::zero());
                    if lo < hi {
                        let src = ci * hw + iy as usize * g.w + (lo as isize + dx) as usize;
                        drow[lo..hi].copy_from_slice(&x[src..src + hi - lo]);
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], g: &Geometry, oy0: usize, oy1: usize, dx_out: &mut [T]) {
    let ncol = (oy1 - oy0) * g.wo;
    let hw = g.h * g.w;
    for ci in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &cols[row * ncol..(row + 1) * ncol];
                let dx = (kx * g.r) as isize - g.p as isize;
                let (lo, hi) = column_range(dx, g.wo, g.w);
                if lo >= hi {
                    continue;
                }
                for oy in oy0..oy1 {
                    let iy = (oy + ky * g.r) as isize - g.p as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let srow = &src[(oy - oy0) * g.wo + lo..(oy - oy0) * g.wo + hi];
                    let base = ci * hw + iy as usize * g.w + (lo as isize + dx) as usize;
                    for (d, &s) in dx_out[base..base + hi - lo].iter_mut().zip(srow) {
                        *d += s;
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_raw<T: Scalar>(
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
    bias: &[T],
    dilation: usize,
    padding: usize,
) -> Result<Tensor4<T>> {
    let g = geometry(input, weight, bias.len(), dilation, padding)?;
    let plane = g.ho * g.wo;
    let mut out = Tensor4::zeros([g.n, g.o, g.ho, g.wo]);
    let ck2 = g.ck2();
    let wdata = weight.data();
    let band = g.band_rows();
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); ck2 * band * g.wo]
    };
    for ni in 0..g.n {
        let x = input.sample(ni);
        let y = out.sample_mut(ni);
        if g.is_pointwise() {
            T::gemm(g.o, ck2, plane, T::one(), wdata, ck2 as isize, 1, x, plane as isize, 1, T::zero(), y, plane as isize, 1);
        } else {
            let mut oy0 = 0;
            while oy0 < g.ho {
                let oy1 = (oy0 + band).min(g.ho);
                let ncol = (oy1 - oy0) * g.wo;
                im2col(x, &g, oy0, oy1, &mut cols);
                T::gemm(
                    g.o,
                    ck2,
                    ncol,
                    T::one(),
                    wdata,
                    ck2 as isize,
                    1,
                    &cols,
                    ncol as isize,
                    1,
                    T::zero(),
                    &mut y[oy0 * g.wo..],
                    plane as isize,
                    1,
                );
                oy0 = oy1;
            }
        }
        for (oc, &b) in bias.iter().enumerate() {
            if b != T::zero() {
                for v in &mut y[oc * plane..(oc + 1) * plane] {
                    *v += b;
                }
            }
        }
    }
    Ok(out)
}

/// Dilated 2-D cross-correlation (no kernel flip) with symmetric zero padding.
///
/// Output rows are `h + 2p − (k + (k−1)(r−1)) + 1`; with `p = r(k−1)/2` and odd
/// `k` the spatial size is preserved.
pub fn conv2d<T: Scalar>(input: &Tensor4<T>, kernel: &ConvKernel<T>) -> Result<Tensor4<T>> {
    if kernel.stride != 1 {
        return Err(Error::KernelGeometry {
            op: "conv2d",
            reason: format!("stride {} unsupported; only stride 1", kernel.stride),
        });
    }
    conv2d_raw(input, &kernel.weight, &kernel.bias, kernel.dilation, kernel.padding)
}

/// Gradients of a convolution with respect to its three operands.
#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Option<Tensor4<T>>,
    pub weight: Tensor4<T>,
    pub bias: Vec<T>,
}

/// Vector-Jacobian product of [`conv2d`]. The input gradient is skipped when
/// `want_input` is false (e.g. for the raw image).
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
    dilation: usize,
    padding: usize,
    grad_out: &Tensor4<T>,
    want_input: bool,
) -> Result<ConvGrads<T>> {
    let g = geometry(input, weight, weight.n(), dilation, padding)?;
    if grad_out.shape() != [g.n, g.o, g.ho, g.wo] {
        return Err(Error::ShapeMismatch {
            op: "conv2d_backward",
            expected: vec![g.n, g.o, g.ho, g.wo],
            got: grad_out.shape().to_vec(),
        });
    }
    let plane = g.ho * g.wo;
    let ck2 = g.ck2();
    let wdata = weight.data();
    let mut dw = Tensor4::zeros(weight.shape());
    let mut db = vec![T::zero(); g.o];
    let mut dx = want_input.then(|| Tensor4::zeros(input.shape()));
    let band = g.band_rows();
    let buf_len = if g.is_pointwise() { 0 } else { ck2 * band * g.wo };
    let mut cols = vec![T::zero(); buf_len];
    let mut dcols = if want_input { vec![T::zero(); buf_len] } else { Vec::new() };

    for ni in 0..g.n {
        let x = input.sample(ni);
        let go = grad_out.sample(ni);
        for (oc, acc) in db.iter_mut().enumerate() {
            *acc += go[oc * plane..(oc + 1) * plane].iter().copied().sum::<T>();
        }
        if g.is_pointwise() {
            // dW += G · Xᵀ ; dX = Wᵀ · G
            T::gemm(g.o, plane, ck2, T::one(), go, plane as isize, 1, x, 1, plane as isize, T::one(), dw.data_mut(), ck2 as isize, 1);
            if let Some(dx) = dx.as_mut() {
                T::gemm(ck2, g.o, plane, T::one(), wdata, 1, ck2 as isize, go, plane as isize, 1, T::zero(), dx.sample_mut(ni), plane as isize, 1);
            }
            continue;
        }
        let mut oy0 = 0;
        while oy0 < g.ho {
            let oy1 = (oy0 + band).min(g.ho);
            let ncol = (oy1 - oy0) * g.wo;
            let gband = &go[oy0 * g.wo..];
            im2col(x, &g, oy0, oy1, &mut cols);
            T::gemm(
                g.o,
                ncol,
                ck2,
                T::one(),
                gband,
                plane as isize,
                1,
                &cols,
                1,
                ncol as isize,
                T::one(),
                dw.data_mut(),
                ck2 as isize,
                1,
            );
            if let Some(dx) = dx.as_mut() {
                T::gemm(
                    ck2,
                    g.o,
                    ncol,
                    T::one(),
                    wdata,
                    1,
                    ck2 as isize,
                    gband,
                    plane as isize,
                    1,
                    T::zero(),
                    &mut dcols,
                    ncol as isize,
                    1,
                );
                col2im(&dcols, &g, oy0, oy1, dx.sample_mut(ni));
            }
            oy0 = oy1;
        }
    }
    Ok(ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    })
}
