use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How max-pooling layers are realised in the spiking network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolMode {
    /// Lateral-inhibition pooling with private block copies and ceil padding.
    Mlip,
    /// Replace max pooling by average pooling of spike counts.
    Avg,
    /// Per-step maximum of member spikes, the uncorrected baseline.
    NaiveMax,
}

impl std::str::FromStr for PoolMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlip" => Ok(PoolMode::Mlip),
            "avg" => Ok(PoolMode::Avg),
            "naive-max" => Ok(PoolMode::NaiveMax),
            other => Err(Error::InvalidConfig(format!("unknown pool mode `{other}`"))),
        }
    }
}

/// Temporal treatment of biases in the spiking network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BiasMode {
    /// Normalized bias injected as a constant current on every step.
    Constant,
    /// Biases ignored.
    Off,
}

/// How the final weighted layer reports its output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReadoutMode {
    /// Accumulate input current without thresholding; rate = sum(I) / T.
    Current,
    /// Ordinary IF neurons; rate = spikes / T.
    Spiking,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConversionConfig {
    /// Normalization percentile.
    pub p: f64,
    /// Maximum spikes a neuron may emit in one step.
    pub gamma: u32,
    pub theta: f64,
    pub timesteps: usize,
    /// SpiCalib allowance in steps; `None` means `timesteps / 2`.
    pub beta: Option<usize>,
    pub v0: f64,
    pub spicalib: bool,
    pub pool: PoolMode,
    pub bias: BiasMode,
    pub readout: ReadoutMode,
}

impl Default for ConversionConfig {
    fn default() -> Self {
        Self {
            p: 0.999,
            gamma: 5,
            theta: 1.0,
            timesteps: 256,
            beta: None,
            v0: 0.0,
            spicalib: true,
            pool: PoolMode::Mlip,
            bias: BiasMode::Constant,
            readout: ReadoutMode::Current,
        }
    }
}

impl ConversionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.timesteps == 0 {
            return bad("timesteps must be >= 1".into());
        }
        if self.gamma == 0 {
            return bad("gamma must be >= 1".into());
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return bad(format!("p must lie in (0, 1], got {}", self.p));
        }
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return bad(format!("theta must be positive, got {}", self.theta));
        }
        if !self.v0.is_finite() {
            return bad("v0 must be finite".into());
        }
        if let Some(b) = self.beta {
            if b > self.timesteps {
                return bad(format!("beta {b} exceeds timesteps {}", self.timesteps));
            }
        }
        Ok(())
    }

    pub fn beta(&self) -> usize {
        self.beta.unwrap_or(self.timesteps / 2)
    }

    pub fn with_timesteps(mut self, t: usize) -> Self {
        self.timesteps = t;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_with_half_horizon_allowance() {
        let c = ConversionConfig::default();
        c.validate().unwrap();
        assert_eq!(c.beta(), 128);
        assert_eq!(c.gamma, 5);
    }

    #[test]
    fn rejects_out_of_range_fields() {
        let base = ConversionConfig::default();
        for bad in [
            ConversionConfig { timesteps: 0, ..base.clone() },
            ConversionConfig { gamma: 0, ..base.clone() },
            ConversionConfig { p: 0.0, ..base.clone() },
            ConversionConfig { p: 1.5, ..base.clone() },
            ConversionConfig { beta: Some(300), ..base.clone() },
            ConversionConfig { theta: 0.0, ..base.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn pool_mode_parses_cli_names() {
        assert_eq!("mlip".parse::<PoolMode>().unwrap(), PoolMode::Mlip);
        assert_eq!("naive-max".parse::<PoolMode>().unwrap(), PoolMode::NaiveMax);
        assert!("max".parse::<PoolMode>().is_err());
    }
}
