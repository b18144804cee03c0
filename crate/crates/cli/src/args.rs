use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use snnconv::snn::{PoolMode, ReadoutMode};

use crate::config::RunConfig;
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "snnconv", version, about = "Convert ReLU networks to spiking networks and simulate them")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Collect activation statistics, choose p and write the normalized model.
    Convert(RunArgs),
    /// Simulate a normalized model over a dataset and write reports.
    Simulate(RunArgs),
    /// Compare mechanism combinations across horizons.
    Ablate(RunArgs),
    /// Run only the percentile search and write its history.
    Boa(RunArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

impl From<Switch> for bool {
    fn from(s: Switch) -> bool {
        s == Switch::On
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PoolArg {
    Mlip,
    Avg,
    NaiveMax,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ReadoutArg {
    Current,
    Spiking,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s
        .split_once(',')
        .ok_or_else(|| format!("expected lo,hi, got `{s}`"))?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("bad lower bound: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("bad upper bound: {e}"))?;
    Ok((lo, hi))
}

#[derive(Clone, Debug, Default, Args)]
pub struct RunArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Dataset tensor file with samples along the first axis.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Tensor of class indices, one per sample.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub calib_size: Option<usize>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long, value_enum)]
    pub boa: Option<Switch>,
    #[arg(long)]
    pub boa_budget: Option<usize>,
    #[arg(long, value_parser = parse_range)]
    pub boa_range: Option<(f64, f64)>,
    #[arg(long)]
    pub boa_batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub timesteps: Option<usize>,
    #[arg(long)]
    pub gamma: Option<u32>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub v0: Option<f64>,
    #[arg(long, value_enum)]
    pub spicalib: Option<Switch>,
    #[arg(long)]
    pub beta: Option<usize>,
    #[arg(long, value_enum)]
    pub pool: Option<PoolArg>,
    #[arg(long, value_enum)]
    pub readout: Option<ReadoutArg>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub emit_plot_data: bool,
    #[arg(long)]
    pub save_traces: bool,
    /// Comma-separated horizons for `ablate`.
    #[arg(long, value_delimiter = ',')]
    pub horizons: Option<Vec<usize>>,
    #[arg(long)]
    pub e_mac: Option<f64>,
    #[arg(long)]
    pub e_ac: Option<f64>,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field { c.$field = v.clone().into(); })*
            };
        }
        set!(boa_budget, boa_range, boa_batch, seed, timesteps, gamma, theta, v0, horizons, e_mac, e_ac);
        if let Some(v) = &self.model {
            c.model = Some(v.clone());
        }
        if let Some(v) = &self.data {
            c.data = Some(v.clone());
        }
        if let Some(v) = &self.labels {
            c.labels = Some(v.clone());
        }
        if let Some(v) = &self.out {
            c.out = Some(v.clone());
        }
        if self.calib_size.is_some() {
            c.calib_size = self.calib_size;
        }
        if self.p.is_some() {
            c.p = self.p;
        }
        if self.beta.is_some() {
            c.beta = self.beta;
        }
        if self.workers.is_some() {
            c.workers = self.workers;
        }
        if let Some(s) = self.boa {
            c.boa = s.into();
        }
        if let Some(s) = self.spicalib {
            c.spicalib = s.into();
        }
        if let Some(p) = self.pool {
            c.pool = match p {
                PoolArg::Mlip => PoolMode::Mlip,
                PoolArg::Avg => PoolMode::Avg,
                PoolArg::NaiveMax => PoolMode::NaiveMax,
            };
        }
        if let Some(r) = self.readout {
            c.readout = match r {
                ReadoutArg::Current => ReadoutMode::Current,
                ReadoutArg::Spiking => ReadoutMode::Spiking,
            };
        }
        c.emit_plot_data |= self.emit_plot_data;
        c.save_traces |= self.save_traces;
        Ok(c)
    }
}
