//! Deeply-supervised, class-weighted sigmoid cross-entropy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::sigmoid_scalar;
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Probability clamp applied before taking logarithms.
pub const DEFAULT_EPS: f64 = 1e-7;

/// Weights of the crack (`beta`) and background (`gamma`) terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BceWeights {
    pub beta: f64,
    pub gamma: f64,
    pub eps: f64,
}

impl BceWeights {
    pub fn new(beta: f64, gamma: f64) -> Self {
        Self {
            beta,
            gamma,
            eps: DEFAULT_EPS,
        }
    }

    pub fn unweighted() -> Self {
        Self::new(1.0, 1.0)
    }

    /// Up-weights the rare class: `beta = #background / N`, `gamma = #crack / N`.
    pub fn balanced<T: Scalar>(target: &Tensor4<T>, eps: f64) -> Self {
        let n = target.len().max(1) as f64;
        let crack = target.data().iter().filter(|&&v| v > T::zero()).count() as f64;
        Self {
            beta: (n - crack) / n,
            gamma: crack / n,
            eps,
        }
    }
}

/// How class weights are chosen per batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ClassWeights {
    Fixed { beta: f64, gamma: f64 },
    AutoBalance,
}

impl ClassWeights {
    pub fn resolve<T: Scalar>(&self, target: &Tensor4<T>, eps: f64) -> BceWeights {
        match *self {
            ClassWeights::Fixed { beta, gamma } => BceWeights { beta, gamma, eps },
            ClassWeights::AutoBalance => BceWeights::balanced(target, eps),
        }
    }
}

fn validate<T: Scalar>(logits: &Tensor4<T>, target: &Tensor4<T>) -> Result<()> {
    logits.check_same_shape("weighted_bce", target)?;
    for (index, &v) in target.data().iter().enumerate() {
        if v != T::zero() && v != T::one() {
            return Err(Error::InvalidTarget {
                index,
                value: v.to_f64_lossy(),
            });
        }
    }
    Ok(())
}

#[inline]
fn clamped_prob(z: f64, eps: f64) -> (f64, bool) {
    let p = sigmoid_scalar(z);
    if p < eps {
        (eps, true)
    } else if p > 1.0 - eps {
        (1.0 - eps, true)
    } else {
        (p, false)
    }
}

pub(crate) fn weighted_bce_forward<T: Scalar>(logits: &Tensor4<T>, target: &Tensor4<T>, w: BceWeights) -> Result<f64> {
    validate(logits, target)?;
    let mut acc = 0.0;
    for (&z, &y) in logits.data().iter().zip(target.data()) {
        let (p, _) = clamped_prob(z.to_f64_lossy(), w.eps);
        acc += if y == T::one() {
            w.beta * p.ln()
        } else {
            w.gamma * (1.0 - p).ln()
        };
    }
    Ok(-acc / logits.len().max(1) as f64)
}

pub(crate) fn weighted_bce_backward<T: Scalar>(
    logits: &Tensor4<T>,
    target: &Tensor4<T>,
    w: BceWeights,
    upstream: T,
) -> Result<Tensor4<T>> {
    validate(logits, target)?;
    let scale = upstream.to_f64_lossy() / logits.len().max(1) as f64;
    let data = logits
        .data()
        .iter()
        .zip(target.data())
        .map(|(&z, &y)| {
            let (p, clamped) = clamped_prob(z.to_f64_lossy(), w.eps);
            if clamped {
                return T::zero();
            }
            let d = if y == T::one() { -w.beta * (1.0 - p) } else { w.gamma * p };
            T::from_f64_lossy(d * scale)
        })
        .collect();
    Tensor4::new(logits.shape(), data)
}

/// `−(1/N) Σ [β y log ŷ + γ (1−y) log(1−ŷ)]` with `ŷ = clamp(σ(z), ε, 1−ε)`,
/// averaged over every pixel of every image in the batch.
pub fn weighted_bce<T: Scalar>(logits: &Tensor4<T>, target: &Tensor4<T>, beta: f64, gamma: f64, eps: f64) -> Result<f64> {
    weighted_bce_forward(logits, target, BceWeights { beta, gamma, eps })
}
