use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Concatenates along the channel axis in argument order.
pub fn concat_channels<T: Scalar>(parts: &[&Tensor4<T>]) -> Result<Tensor4<T>> {
    let first = parts.first().ok_or(Error::EmptyConcat)?;
    let [n, _, h, w] = first.shape();
    for (index, p) in parts.iter().enumerate() {
        if p.n() != n || p.h() != h || p.w() != w {
            return Err(Error::ConcatMismatch {
                index,
                expected: first.shape(),
                got: p.shape(),
            });
        }
    }
    let total: usize = parts.iter().map(|p| p.c()).sum();
    let mut data = Vec::with_capacity(n * total * h * w);
    for ni in 0..n {
        for p in parts {
            data.extend_from_slice(p.sample(ni));
        }
    }
    Tensor4::new([n, total, h, w], data)
}

/// Inverse of [`concat_channels`]: cuts `whole` into blocks of the given widths.
pub fn split_channels<T: Scalar>(whole: &Tensor4<T>, widths: &[usize]) -> Result<Vec<Tensor4<T>>> {
    let [n, c, h, w] = whole.shape();
    if widths.iter().sum::<usize>() != c {
        return Err(Error::ShapeMismatch {
            op: "split_channels",
            expected: vec![n, widths.iter().sum(), h, w],
            got: whole.shape().to_vec(),
        });
    }
    let hw = h * w;
    let mut parts: Vec<Vec<T>> = widths.iter().map(|&wd| Vec::with_capacity(n * wd * hw)).collect();
    for ni in 0..n {
        let sample = whole.sample(ni);
        let mut offset = 0;
        for (part, &wd) in parts.iter_mut().zip(widths) {
            part.extend_from_slice(&sample[offset * hw..(offset + wd) * hw]);
            offset += wd;
        }
    }
    parts
        .into_iter()
        .zip(widths)
        .map(|(data, &wd)| Tensor4::new([n, wd, h, w], data))
        .collect()
}
