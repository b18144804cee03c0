use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use snnconv::boa::{BoaOptions, GpHyper};
use snnconv::metrics::EnergyConstants;
use snnconv::snn::{BiasMode, ConversionConfig};

use crate::CliError;

/// Everything one run needs. Loaded from an optional JSON file, then
/// overridden by command-line flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    /// Leading samples of `data` used for activation statistics; all if unset.
    pub calib_size: Option<usize>,
    /// Fixed percentile; takes precedence over BOA.
    pub p: Option<f64>,
    pub boa: bool,
    pub boa_budget: usize,
    pub boa_range: (f64, f64),
    pub boa_batch: usize,
    pub seed: u64,
    pub timesteps: usize,
    pub gamma: u32,
    pub theta: f64,
    pub v0: f64,
    pub spicalib: bool,
    pub beta: Option<usize>,
    pub pool: snnconv::snn::PoolMode,
    pub readout: snnconv::snn::ReadoutMode,
    pub bias: BiasMode,
    pub reservoir_cap: usize,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub emit_plot_data: bool,
    pub save_traces: bool,
    /// Horizons compared by `ablate`.
    pub horizons: Vec<usize>,
    pub e_mac: f64,
    pub e_ac: f64,
}

pub const DEFAULT_P: f64 = 0.999;

impl Default for RunConfig {
    fn default() -> Self {
        let c = ConversionConfig::default();
        let b = BoaOptions::default();
        let e = EnergyConstants::default();
        Self {
            model: None,
            data: None,
            labels: None,
            calib_size: None,
            p: None,
            boa: false,
            boa_budget: b.budget,
            boa_range: b.range,
            boa_batch: 50,
            seed: 0,
            timesteps: c.timesteps,
            gamma: c.gamma,
            theta: c.theta,
            v0: c.v0,
            spicalib: c.spicalib,
            beta: c.beta,
            pool: c.pool,
            readout: c.readout,
            bias: c.bias,
            reservoir_cap: 1 << 20,
            out: None,
            workers: None,
            emit_plot_data: false,
            save_traces: false,
            horizons: vec![64, 128, 256],
            e_mac: e.e_mac,
            e_ac: e.e_ac,
        }
    }
}

fn require_file(kind: &str, path: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    let p = path
        .clone()
        .ok_or_else(|| CliError::Validation(format!("--{kind} is required")))?;
    if !p.is_file() {
        return Err(CliError::Validation(format!("{kind} file {} does not exist", p.display())));
    }
    Ok(p)
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))
    }

    pub fn conversion(&self) -> ConversionConfig {
        ConversionConfig {
            p: self.p.unwrap_or(DEFAULT_P),
            gamma: self.gamma,
            theta: self.theta,
            timesteps: self.timesteps,
            beta: self.beta,
            v0: self.v0,
            spicalib: self.spicalib,
            pool: self.pool,
            bias: self.bias,
            readout: self.readout,
        }
    }

    pub fn boa_options(&self) -> BoaOptions {
        BoaOptions {
            budget: self.boa_budget,
            range: self.boa_range,
            seed: self.seed,
            candidates: 2000,
            hyper: GpHyper::default(),
        }
    }

    pub fn energy(&self) -> EnergyConstants {
        EnergyConstants {
            e_mac: self.e_mac,
            e_ac: self.e_ac,
        }
    }

    pub fn model_path(&self) -> Result<PathBuf, CliError> {
        require_file("model", &self.model)
    }

    pub fn data_path(&self) -> Result<PathBuf, CliError> {
        require_file("data", &self.data)
    }

    pub fn labels_path(&self) -> Result<Option<PathBuf>, CliError> {
        match &self.labels {
            None => Ok(None),
            some => require_file("labels", some).map(Some),
        }
    }

    pub fn out_dir(&self) -> Result<PathBuf, CliError> {
        self.out
            .clone()
            .ok_or_else(|| CliError::Validation("--out is required".into()))
    }

    /// Checks paths and numeric fields before any computation starts.
    pub fn validate(&self, needs_labels_ok: bool) -> Result<(), CliError> {
        self.model_path()?;
        self.data_path()?;
        if needs_labels_ok {
            self.labels_path()?;
        }
        self.out_dir()?;
        let mut cfg = self.conversion();
        if let Some(p) = self.p {
            cfg.p = p;
        }
        cfg.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        if self.boa && self.p.is_none() {
            self.boa_options()
                .validate()
                .map_err(|e| CliError::Validation(e.to_string()))?;
            if self.boa_batch == 0 {
                return Err(CliError::Validation("boa batch must be >= 1".into()));
            }
        }
        if self.calib_size == Some(0) {
            return Err(CliError::Validation("calib size must be >= 1".into()));
        }
        if self.reservoir_cap == 0 {
            return Err(CliError::Validation("reservoir cap must be >= 1".into()));
        }
        if self.workers == Some(0) {
            return Err(CliError::Validation("workers must be >= 1".into()));
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(CliError::Validation("horizons must be a nonempty list of positive integers".into()));
        }
        if !(self.e_mac > 0.0 && self.e_ac >= 0.0) {
            return Err(CliError::Validation("energy constants must be positive".into()));
        }
        Ok(())
    }
}
