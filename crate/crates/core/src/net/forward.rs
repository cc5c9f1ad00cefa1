use std::collections::BTreeMap;

use super::{NetworkConfig, NetworkParams, SIDE_COUNT, SPATIAL_MULTIPLE};
use crate::error::{Error, Result};
use crate::maps::{Mask, ProbMap};
use crate::ops::sigmoid;
use crate::scalar::Scalar;
use crate::tape::{GradTape, Var};
use crate::tensor::Tensor4;

/// Side logits plus the fused logit, all at input resolution.
///
/// With the hierarchical head disabled `sides` holds only the last tap and
/// `fused` equals it.
#[derive(Clone, Debug, PartialEq)]
pub struct SideBundle<T> {
    pub sides: Vec<Tensor4<T>>,
    pub fused: Tensor4<T>,
}

/// [`SideBundle`] as tape handles.
#[derive(Clone, Debug)]
pub struct SideVars {
    pub sides: Vec<Var>,
    pub fused: Var,
}

/// Parameters placed on a tape, addressable by name. Trainable entries use
/// their index in name order as the gradient key.
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
    names: Vec<String>,
}

impl BoundParams {
    pub fn bind<T: Scalar>(tape: &mut GradTape<T>, params: &NetworkParams<T>, trainable: bool) -> Self {
        let mut vars = BTreeMap::new();
        let mut names = Vec::with_capacity(params.len());
        for (key, (name, value)) in params.iter().enumerate() {
            let v = if trainable {
                tape.param(key, value.clone())
            } else {
                tape.constant(value.clone())
            };
            vars.insert(name.clone(), v);
            names.push(name.clone());
        }
        Self { vars, names }
    }

    fn var(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::ParamMismatch {
            missing: vec![name.to_string()],
            unexpected: vec![],
            wrong_shape: vec![],
        })
    }

    /// Name registered under gradient key `key`.
    pub fn name(&self, key: usize) -> &str {
        &self.names[key]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

fn conv<T: Scalar>(tape: &mut GradTape<T>, p: &BoundParams, layer: &str, x: Var, dilation: usize) -> Result<Var> {
    let w = p.var(&format!("{layer}.weight"))?;
    let b = p.var(&format!("{layer}.bias"))?;
    tape.conv2d_same(x, w, b, dilation)
}

fn conv_relu<T: Scalar>(tape: &mut GradTape<T>, p: &BoundParams, layer: &str, x: Var, dilation: usize) -> Result<Var> {
    let y = conv(tape, p, layer, x, dilation)?;
    Ok(tape.relu(y))
}

fn double_conv<T: Scalar>(tape: &mut GradTape<T>, p: &BoundParams, block: &str, x: Var) -> Result<Var> {
    let y = conv_relu(tape, p, &format!("{block}.conv1"), x, 1)?;
    conv_relu(tape, p, &format!("{block}.conv2"), y, 1)
}

fn mdm_on_tape<T: Scalar>(tape: &mut GradTape<T>, p: &BoundParams, x: Var, rates: &[usize]) -> Result<Var> {
    let mut features = vec![x];
    for &r in rates {
        features.push(conv_relu(tape, p, &format!("mdm.branch_r{r}"), x, r)?);
    }
    let cat = tape.concat_channels(&features)?;
    conv_relu(tape, p, "mdm.project", cat, 1)
}

fn decoder_block<T: Scalar>(tape: &mut GradTape<T>, p: &BoundParams, block: &str, x: Var, skip: Var) -> Result<Var> {
    let up = tape.up_conv_2x2(x, p.var(&format!("{block}.up.weight"))?, p.var(&format!("{block}.up.bias"))?)?;
    let cat = tape.concat_channels(&[up, skip])?;
    double_conv(tape, p, block, cat)
}

fn check_input<T: Scalar>(config: &NetworkConfig, input: &Tensor4<T>) -> Result<()> {
    let [_, c, h, w] = input.shape();
    if c != config.in_channels {
        return Err(Error::ShapeMismatch {
            op: "forward",
            expected: vec![input.n(), config.in_channels, h, w],
            got: input.shape().to_vec(),
        });
    }
    if h % SPATIAL_MULTIPLE != 0 || w % SPATIAL_MULTIPLE != 0 || h == 0 || w == 0 {
        return Err(Error::NotDivisible {
            h,
            w,
            multiple: SPATIAL_MULTIPLE,
        });
    }
    Ok(())
}

/// Records the whole network on `tape`.
pub fn forward_on_tape<T: Scalar>(
    tape: &mut GradTape<T>,
    params: &BoundParams,
    config: &NetworkConfig,
    input: Var,
) -> Result<SideVars> {
    check_input(config, tape.value(input))?;
    let e1 = double_conv(tape, params, "enc1", input)?;
    let p1 = tape.max_pool_2x2(e1)?;
    let e2 = double_conv(tape, params, "enc2", p1)?;
    let p2 = tape.max_pool_2x2(e2)?;
    let e3 = double_conv(tape, params, "enc3", p2)?;
    let p3 = tape.max_pool_2x2(e3)?;
    let e4 = double_conv(tape, params, "enc4", p3)?;

    let mid = if config.with_mdm {
        mdm_on_tape(tape, params, e4, &config.dilation_rates)?
    } else {
        double_conv(tape, params, "bottleneck", e4)?
    };

    let d1 = decoder_block(tape, params, "dec1", mid, e3)?;
    let d2 = decoder_block(tape, params, "dec2", d1, e2)?;
    let d3 = decoder_block(tape, params, "dec3", d2, e1)?;

    if !config.with_hf {
        let side5 = conv(tape, params, "side5", d3, 1)?;
        return Ok(SideVars {
            sides: vec![side5],
            fused: side5,
        });
    }

    let taps = [(e4, 8), (mid, 8), (d1, 4), (d2, 2), (d3, 1)];
    let mut sides = Vec::with_capacity(SIDE_COUNT);
    for (i, (tap, factor)) in taps.into_iter().enumerate() {
        let logit = conv(tape, params, &format!("side{}", i + 1), tap, 1)?;
        sides.push(tape.bilinear_upsample(logit, factor)?);
    }
    let stacked = tape.concat_channels(&sides)?;
    let fused = conv(tape, params, "fuse", stacked, 1)?;
    Ok(SideVars { sides, fused })
}

/// Inference-only forward pass.
pub fn forward<T: Scalar>(params: &NetworkParams<T>, config: &NetworkConfig, input: &Tensor4<T>) -> Result<SideBundle<T>> {
    check_input(config, input)?;
    let mut tape = GradTape::new();
    let bound = BoundParams::bind(&mut tape, params, false);
    let x = tape.constant(input.clone());
    let vars = forward_on_tape(&mut tape, &bound, config, x)?;
    Ok(SideBundle {
        sides: vars.sides.iter().map(|&v| tape.value(v).clone()).collect(),
        fused: tape.value(vars.fused).clone(),
    })
}

/// Multi-dilation module on its own: one ReLU'd dilated 3×3 branch per rate,
/// concatenated after the unmodified input and projected by a 1×1 conv.
pub fn mdm_forward<T: Scalar>(params: &NetworkParams<T>, input: &Tensor4<T>, rates: &[usize]) -> Result<Tensor4<T>> {
    let mut tape = GradTape::new();
    let bound = BoundParams::bind(&mut tape, params, false);
    let x = tape.constant(input.clone());
    let y = mdm_on_tape(&mut tape, &bound, x, rates)?;
    Ok(tape.value(y).clone())
}

/// Fused crack probabilities for each image in the batch.
pub fn probabilities<T: Scalar>(params: &NetworkParams<T>, config: &NetworkConfig, input: &Tensor4<T>) -> Result<Vec<ProbMap>> {
    let bundle = forward(params, config, input)?;
    let probs = sigmoid(&bundle.fused);
    Ok((0..probs.n()).map(|n| ProbMap::from_tensor(&probs, n)).collect())
}

/// Binary crack masks: `sigmoid(fused) >= threshold`.
pub fn predict<T: Scalar>(
    params: &NetworkParams<T>,
    config: &NetworkConfig,
    image: &Tensor4<T>,
    threshold: f64,
) -> Result<Vec<Mask>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    Ok(probabilities(params, config, image)?
        .iter()
        .map(|p| p.binarize(threshold))
        .collect())
}
