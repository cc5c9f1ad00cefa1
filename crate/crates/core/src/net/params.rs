use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{NetworkConfig, SIDE_COUNT};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Named trainable tensors. Weights are `(out, in, k, k)`; biases are stored
/// as `(out, 1, 1, 1)` and serialized as rank-1 vectors.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct NetworkParams<T> {
    entries: BTreeMap<String, Tensor4<T>>,
}

impl<T: Scalar> NetworkParams<T> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor4<T>) {
        self.entries.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor4<T>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor4<T>> {
        self.entries.get_mut(name)
    }

    /// Entries in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor4<T>)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn parameter_count(&self) -> usize {
        self.entries.values().map(Tensor4::len).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), Tensor4::zeros(v.shape())))
                .collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> NetworkParams<U> {
        NetworkParams {
            entries: self.entries.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Checks names and shapes against the parameter set implied by `config`.
    pub fn check_against(&self, config: &NetworkConfig) -> Result<()> {
        let expected: BTreeMap<String, [usize; 4]> = parameter_shapes(config).into_iter().collect();
        let missing: Vec<String> = expected.keys().filter(|k| !self.entries.contains_key(*k)).cloned().collect();
        let unexpected: Vec<String> = self.entries.keys().filter(|k| !expected.contains_key(*k)).cloned().collect();
        let wrong_shape: Vec<String> = expected
            .iter()
            .filter_map(|(k, s)| {
                let got = self.entries.get(k)?.shape();
                (got != *s).then(|| format!("{k} (expected {s:?}, got {got:?})"))
            })
            .collect();
        if missing.is_empty() && unexpected.is_empty() && wrong_shape.is_empty() {
            Ok(())
        } else {
            Err(Error::ParamMismatch {
                missing,
                unexpected,
                wrong_shape,
            })
        }
    }
}

struct Layer {
    name: String,
    out_c: usize,
    in_c: usize,
    k: usize,
}

fn layer(name: impl Into<String>, in_c: usize, out_c: usize, k: usize) -> Layer {
    Layer {
        name: name.into(),
        out_c,
        in_c,
        k,
    }
}

fn layers(config: &NetworkConfig) -> Vec<Layer> {
    let [c1, c2, c3, c4, c5] = config.widths();
    let mut ls = Vec::new();
    for (i, (cin, cout)) in [(config.in_channels, c1), (c1, c2), (c2, c3), (c3, c4)].into_iter().enumerate() {
        ls.push(layer(format!("enc{}.conv1", i + 1), cin, cout, 3));
        ls.push(layer(format!("enc{}.conv2", i + 1), cout, cout, 3));
    }
    if config.with_mdm {
        for &r in &config.dilation_rates {
            ls.push(layer(format!("mdm.branch_r{r}"), c4, c4, 3));
        }
        ls.push(layer("mdm.project", c4 * (1 + config.dilation_rates.len()), c5, 1));
    } else {
        ls.push(layer("bottleneck.conv1", c4, c5, 3));
        ls.push(layer("bottleneck.conv2", c5, c5, 3));
    }
    for (i, (cin, skip)) in [(c5, c3), (c3, c2), (c2, c1)].into_iter().enumerate() {
        let d = i + 1;
        ls.push(layer(format!("dec{d}.up"), cin, skip, 2));
        ls.push(layer(format!("dec{d}.conv1"), 2 * skip, skip, 3));
        ls.push(layer(format!("dec{d}.conv2"), skip, skip, 3));
    }
    if config.with_hf {
        for (i, c) in [c4, c5, c3, c2, c1].into_iter().enumerate() {
            ls.push(layer(format!("side{}", i + 1), c, 1, 1));
        }
        ls.push(layer("fuse", SIDE_COUNT, 1, 1));
    } else {
        ls.push(layer("side5", c1, 1, 1));
    }
    ls
}

/// Every parameter name with its shape, in name order.
pub fn parameter_shapes(config: &NetworkConfig) -> Vec<(String, [usize; 4])> {
    let mut out: Vec<(String, [usize; 4])> = layers(config)
        .into_iter()
        .flat_map(|l| {
            [
                (format!("{}.weight", l.name), [l.out_c, l.in_c, l.k, l.k]),
                (format!("{}.bias", l.name), [l.out_c, 1, 1, 1]),
            ]
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

fn name_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a, so each tensor's stream depends only on (seed, name).
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Allocates and initializes every parameter: He-normal weights
/// (`std = sqrt(2 / fan_in)`), zero biases.
pub fn build<T: Scalar>(config: &NetworkConfig) -> Result<NetworkParams<T>> {
    config.validate()?;
    let mut params = NetworkParams::new();
    for l in layers(config) {
        let fan_in = (l.in_c * l.k * l.k) as f64;
        let weight_name = format!("{}.weight", l.name);
        let mut rng = ChaCha8Rng::seed_from_u64(name_seed(config.seed, &weight_name));
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        let shape = [l.out_c, l.in_c, l.k, l.k];
        let data = (0..shape.iter().product::<usize>())
            .map(|_| T::from_f64_lossy(normal.sample(&mut rng)))
            .collect();
        params.insert(weight_name, Tensor4::new(shape, data)?);
        params.insert(format!("{}.bias", l.name), Tensor4::zeros([l.out_c, 1, 1, 1]));
    }
    Ok(params)
}
