//! Clock-driven spiking simulation of a normalized network.

pub mod config;
pub mod network;
pub mod neuron;
pub mod simulate;
pub mod trace;

pub use config::{BiasMode, ConversionConfig, PoolMode, ReadoutMode};
pub use network::{LinearChain, PoolKind, SpikingNetwork, Stage};
pub use neuron::{spike_count_extremum, step_layer, NeuronLayerState};
pub use simulate::{simulate, simulate_compiled};
pub use trace::{decode_planes, firing_rate, SimulationTrace, TraceKind, TraceLayer, TraceSummary};
