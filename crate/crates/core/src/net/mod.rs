//! The U-HDN network: a U-net trimmed to three pooling stages, a
//! multi-dilation bottleneck, and five deeply-supervised side outputs fused
//! by a 1×1 convolution.
//!
//! Channel plan for base width `b` (default 64):
//!
//! | stage       | output channels | scale |
//! |-------------|-----------------|-------|
//! | enc1..enc4  | b, 2b, 4b, 8b   | 1, 1/2, 1/4, 1/8 |
//! | mdm         | 8b·(1+R) → 16b  | 1/8 |
//! | dec1..dec3  | 4b, 2b, b       | 1/4, 1/2, 1 |
//!
//! Side taps are enc4, mdm, dec1, dec2 and dec3.

mod forward;
mod params;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use forward::{forward, forward_on_tape, mdm_forward, predict, probabilities, BoundParams, SideBundle, SideVars};
pub use params::{build, parameter_shapes, NetworkParams};

/// Number of supervised side outputs.
pub const SIDE_COUNT: usize = 5;

/// Spatial multiple every input must satisfy (three 2×2 poolings).
pub const SPATIAL_MULTIPLE: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    pub dilation_rates: Vec<usize>,
    pub with_mdm: bool,
    pub with_hf: bool,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            base_channels: 64,
            dilation_rates: vec![2, 4, 8, 16],
            with_mdm: true,
            with_hf: true,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::Config("in_channels must be at least 1".into()));
        }
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be at least 1".into()));
        }
        if self.dilation_rates.is_empty() {
            return Err(Error::Config("dilation_rates must not be empty".into()));
        }
        if self.dilation_rates.contains(&0) {
            return Err(Error::Config("dilation rates must be >= 1".into()));
        }
        if self.dilation_rates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "dilation_rates must be strictly increasing, got {:?}",
                self.dilation_rates
            )));
        }
        Ok(())
    }

    /// Short variant label.
    pub fn variant_name(&self) -> &'static str {
        match (self.with_mdm, self.with_hf) {
            (false, false) => "U-net",
            (false, true) => "U-net + HF",
            (true, false) => "U-net + MDM",
            (true, true) => "U-HDN",
        }
    }

    /// Widths `[enc1, enc2, enc3, enc4, bottleneck]`.
    pub fn widths(&self) -> [usize; 5] {
        let b = self.base_channels;
        [b, 2 * b, 4 * b, 8 * b, 16 * b]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        NetworkConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_rates() {
        for rates in [vec![], vec![2, 2], vec![4, 2], vec![0, 1]] {
            let c = NetworkConfig {
                dilation_rates: rates,
                ..Default::default()
            };
            assert!(c.validate().is_err());
        }
        let c = NetworkConfig {
            base_channels: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
