//! Single-image binary masks and probability maps.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Binary crack mask, row-major, values 0 (background) or 1 (crack).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch {
                op: "Mask::new",
                expected: vec![height, width],
                got: vec![data.len()],
            });
        }
        if let Some((index, &v)) = data.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(Error::InvalidTarget { index, value: v as f64 });
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x) as u8);
            }
        }
        Self { height, width, data }
    }

    /// Mask of plane `(n, 0)` of a {0,1}-valued tensor; nonzero counts as crack.
    pub fn from_tensor<T: Scalar>(t: &Tensor4<T>, n: usize) -> Self {
        let data = t.plane(n, 0).iter().map(|&v| (v > T::zero()) as u8).collect();
        Self {
            height: t.h(),
            width: t.w(),
            data,
        }
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor4<T> {
        let data = self.data.iter().map(|&v| if v == 1 { T::one() } else { T::zero() }).collect();
        Tensor4::new([1, 1, self.height, self.width], data).expect("mask dims consistent")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] == 1
    }

    pub fn set(&mut self, y: usize, x: usize, value: bool) {
        self.data[y * self.width + x] = value as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    /// Top-left `height × width` window.
    pub fn crop(&self, height: usize, width: usize) -> Self {
        Self::from_fn(height.min(self.height), width.min(self.width), |y, x| self.get(y, x))
    }
}

/// Per-pixel crack probabilities in [0, 1], row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ProbMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch {
                op: "ProbMap::new",
                expected: vec![height, width],
                got: vec![data.len()],
            });
        }
        Ok(Self { height, width, data })
    }

    pub fn from_tensor<T: Scalar>(t: &Tensor4<T>, n: usize) -> Self {
        Self {
            height: t.h(),
            width: t.w(),
            data: t.plane(n, 0).iter().map(|v| v.to_f64_lossy() as f32).collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Pixels with probability `>= threshold` become crack.
    pub fn binarize(&self, threshold: f64) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&p| (p as f64 >= threshold) as u8).collect(),
        }
    }

    pub fn crop(&self, height: usize, width: usize) -> Self {
        let (h, w) = (height.min(self.height), width.min(self.width));
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            data.extend_from_slice(&self.data[y * self.width..y * self.width + w]);
        }
        Self {
            height: h,
            width: w,
            data,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binarize_is_inclusive() {
        let p = ProbMap::new(1, 3, vec![0.49, 0.5, 0.51]).unwrap();
        assert_eq!(p.binarize(0.5).data(), &[0, 1, 1]);
    }

    #[test]
    fn crop_keeps_top_left() {
        let p = ProbMap::new(2, 3, vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        assert_eq!(p.crop(1, 2).data(), &[0.0, 0.1]);
        let m = Mask::from_fn(3, 3, |y, x| y == x);
        assert_eq!(m.crop(2, 2).data(), &[1, 0, 0, 1]);
    }

    #[test]
    fn rejects_non_binary() {
        assert!(Mask::new(1, 2, vec![0, 2]).is_err());
    }
}
