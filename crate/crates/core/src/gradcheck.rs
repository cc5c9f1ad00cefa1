//! Finite-difference verification of every differentiable operation.
//!
//! Each check draws small random operands in `f64`, records the operation on
//! a [`GradTape`], reduces the output with a random projection, and compares
//! the reverse-mode gradient of every operand element with a central
//! difference. Operands are drawn away from kinks (ReLU at zero, max-pool
//! ties) so the one-sided derivatives agree.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tape::{GradTape, Var};
use crate::tensor::Tensor4;
use crate::training::loss::BceWeights;

pub const FD_EPSILON: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor so that near-zero gradients are compared absolutely.
pub const ERROR_FLOOR: f64 = 1e-6;
const KINK_MARGIN: f64 = 1e-3;

pub const OP_NAMES: [&str; 10] = [
    "conv2d",
    "conv2d_dilated",
    "up_conv",
    "max_pool",
    "relu",
    "sigmoid",
    "concat",
    "upsample",
    "weighted_bce",
    "conv_relu_sum",
];

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ERROR_FLOOR)
}

/// Worst disagreement found for one operation.
#[derive(Clone, Debug)]
pub struct CheckReport {
    pub op: String,
    pub trials: usize,
    pub elements_checked: usize,
    pub worst_error: f64,
    pub worst_operand: usize,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.worst_error < TOLERANCE
    }
}

type Builder = Box<dyn Fn(&mut GradTape<f64>, &[Var]) -> Result<Var>>;

struct Instance {
    operands: Vec<Tensor4<f64>>,
    build: Builder,
}

fn normal(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor4<f64> {
    let data = (0..shape.iter().product()).map(|_| rng.sample(StandardNormal)).collect();
    Tensor4::new(shape, data).expect("shape matches data")
}

fn away_from_zero(t: &Tensor4<f64>) -> Tensor4<f64> {
    t.map(|v| if v.abs() < KINK_MARGIN { v.signum() * KINK_MARGIN + v } else { v })
}

fn random_shape(rng: &mut ChaCha8Rng, min_hw: usize, even: bool) -> [usize; 4] {
    let mut side = || {
        let v = rng.gen_range(min_hw..=6);
        if even {
            v & !1
        } else {
            v
        }
    };
    let (h, w) = (side(), side());
    [rng.gen_range(1..=3), rng.gen_range(1..=4), h.max(min_hw), w.max(min_hw)]
}

fn conv_instance(rng: &mut ChaCha8Rng, dilation: usize, with_relu: bool) -> Result<Instance> {
    let shape = random_shape(rng, 3, false);
    let out = rng.gen_range(1..=4);
    let k = [1usize, 3, 3][rng.gen_range(0..3)];
    let padding = dilation * (k - 1) / 2;
    for _ in 0..200 {
        let x = normal(rng, shape);
        let w = normal(rng, [out, shape[1], k, k]);
        let b = normal(rng, [out, 1, 1, 1]);
        if with_relu {
            // keep every pre-activation clear of the kink
            let kernel = crate::ops::ConvKernel::new(w.clone(), b.data().to_vec(), dilation, padding);
            let pre = crate::ops::conv2d(&x, &kernel)?;
            if pre.data().iter().any(|v| v.abs() < 1e-2) {
                continue;
            }
        }
        let build: Builder = Box::new(move |tape, v| {
            let y = tape.conv2d(v[0], v[1], v[2], dilation, padding)?;
            Ok(if with_relu { tape.relu(y) } else { y })
        });
        return Ok(Instance {
            operands: vec![x, w, b],
            build,
        });
    }
    Err(Error::NonFinite("could not draw a kink-free conv_relu instance".into()))
}

/// A tensor whose 2x2 windows hold well separated values.
fn tie_free(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor4<f64> {
    let len: usize = shape.iter().product();
    let mut levels: Vec<f64> = (0..len).map(|i| (i as f64 - len as f64 / 2.0) * 0.05).collect();
    levels.shuffle(rng);
    Tensor4::new(shape, levels).expect("shape matches data")
}

fn instance(op: &str, rng: &mut ChaCha8Rng) -> Result<Instance> {
    let inst = match op {
        "conv2d" => conv_instance(rng, 1, false)?,
        "conv2d_dilated" => conv_instance(rng, 2, false)?,
        "conv_relu_sum" => conv_instance(rng, 1, true)?,
        "up_conv" => {
            let s = random_shape(rng, 1, false);
            let out = rng.gen_range(1..=4);
            Instance {
                operands: vec![normal(rng, s), normal(rng, [out, s[1], 2, 2]), normal(rng, [out, 1, 1, 1])],
                build: Box::new(|tape, v| tape.up_conv_2x2(v[0], v[1], v[2])),
            }
        }
        "max_pool" => {
            let s = random_shape(rng, 2, true);
            Instance {
                operands: vec![tie_free(rng, s)],
                build: Box::new(|tape, v| tape.max_pool_2x2(v[0])),
            }
        }
        "relu" => {
            let s = random_shape(rng, 1, false);
            Instance {
                operands: vec![away_from_zero(&normal(rng, s))],
                build: Box::new(|tape, v| Ok(tape.relu(v[0]))),
            }
        }
        "sigmoid" => {
            let s = random_shape(rng, 1, false);
            Instance {
                operands: vec![normal(rng, s).scaled(3.0)],
                build: Box::new(|tape, v| Ok(tape.sigmoid(v[0]))),
            }
        }
        "concat" => {
            let s = random_shape(rng, 1, false);
            let parts = rng.gen_range(2..=3);
            let operands = (0..parts)
                .map(|_| {
                    let c = rng.gen_range(1..=3);
                    normal(rng, [s[0], c, s[2], s[3]])
                })
                .collect();
            Instance {
                operands,
                build: Box::new(|tape, v| tape.concat_channels(v)),
            }
        }
        "upsample" => {
            let s = random_shape(rng, 1, false);
            let factor = [2usize, 4, 8][rng.gen_range(0..3)];
            Instance {
                operands: vec![normal(rng, s)],
                build: Box::new(move |tape, v| tape.bilinear_upsample(v[0], factor)),
            }
        }
        "weighted_bce" => {
            let s = random_shape(rng, 1, false);
            let target = Tensor4::from_fn(s, |_, _, _, _| if rng.gen_bool(0.3) { 1.0 } else { 0.0 });
            let mut logits = normal(rng, s).scaled(2.0);
            // saturated logits exercise the clamp
            for v in logits.data_mut().iter_mut() {
                if rng.gen_bool(0.15) {
                    *v = if rng.gen_bool(0.5) { 20.0 } else { -20.0 };
                }
            }
            let weights = BceWeights::new(rng.gen_range(0.05..1.0), rng.gen_range(0.05..1.0));
            Instance {
                operands: vec![logits],
                build: Box::new(move |tape, v| tape.weighted_bce(v[0], &target, weights)),
            }
        }
        other => {
            return Err(Error::Config(format!(
                "unknown op '{other}'; available: {}",
                OP_NAMES.join(", ")
            )))
        }
    };
    Ok(inst)
}

fn evaluate(inst: &Instance, operands: &[Tensor4<f64>], projection: &Tensor4<f64>) -> Result<f64> {
    let mut tape = GradTape::new();
    let vars: Vec<Var> = operands.iter().enumerate().map(|(k, t)| tape.param(k, t.clone())).collect();
    let out = (inst.build)(&mut tape, &vars)?;
    let loss = tape.project(out, projection)?;
    Ok(tape.value(loss).data()[0])
}

/// Runs `trials` random instances of `op`.
pub fn check_op(op: &str, trials: usize, seed: u64) -> Result<CheckReport> {
    let index = OP_NAMES
        .iter()
        .position(|&n| n == op)
        .ok_or_else(|| Error::Config(format!("unknown op '{op}'; available: {}", OP_NAMES.join(", "))))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ index as u64);
    let mut report = CheckReport {
        op: op.to_string(),
        trials,
        elements_checked: 0,
        worst_error: 0.0,
        worst_operand: 0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for _ in 0..trials {
        let inst = instance(op, &mut rng)?;
        let mut tape = GradTape::new();
        let vars: Vec<Var> = inst.operands.iter().enumerate().map(|(k, t)| tape.param(k, t.clone())).collect();
        let out = (inst.build)(&mut tape, &vars)?;
        let projection = normal(&mut rng, tape.value(out).shape());
        let loss = tape.project(out, &projection)?;
        let grads = tape.backward(loss, 1.0)?;

        let mut operands = inst.operands.clone();
        for k in 0..operands.len() {
            let analytic = grads.get(k).expect("every operand is a parameter").clone();
            for i in 0..operands[k].len() {
                let orig = operands[k].data()[i];
                operands[k].data_mut()[i] = orig + FD_EPSILON;
                let plus = evaluate(&inst, &operands, &projection)?;
                operands[k].data_mut()[i] = orig - FD_EPSILON;
                let minus = evaluate(&inst, &operands, &projection)?;
                operands[k].data_mut()[i] = orig;
                let numeric = (plus - minus) / (2.0 * FD_EPSILON);
                let a = analytic.data()[i];
                let err = relative_error(a, numeric);
                report.elements_checked += 1;
                if err.is_nan() || err > report.worst_error {
                    report.worst_error = err;
                    report.worst_operand = k;
                    report.worst_index = i;
                    report.analytic = a;
                    report.numeric = numeric;
                }
            }
        }
    }
    Ok(report)
}

/// Checks every named op; `["all"]` expands to [`OP_NAMES`].
pub fn check_ops(ops: &[String], trials: usize, seed: u64) -> Result<Vec<CheckReport>> {
    let names: Vec<String> = if ops.iter().any(|o| o == "all") {
        OP_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        ops.to_vec()
    };
    names.iter().map(|op| check_op(op, trials, seed)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_passes_one_trial() {
        for op in OP_NAMES {
            let r = check_op(op, 1, 11).unwrap();
            assert!(r.passed(), "{op}: {r:?}");
            assert!(r.elements_checked > 0);
        }
    }

    #[test]
    fn unknown_op_lists_names() {
        let msg = check_op("softmax", 1, 0).unwrap_err().to_string();
        assert!(msg.contains("conv2d") && msg.contains("weighted_bce"), "{msg}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        assert!(relative_error(1.0, 1.001) > TOLERANCE);
        assert!(relative_error(1e-11, 0.0) < TOLERANCE);
    }
}
