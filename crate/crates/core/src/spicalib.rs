//! Spike calibration: online interspike-interval monitoring, detection of
//! neurons that fired early and then fell silent, and cancellation of their
//! downstream effect through a twin synapse carrying negative spikes.

use serde::{Deserialize, Serialize};

/// Per-neuron ISI statistics and cancellation bookkeeping.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IsiMonitor {
    /// Running mean interspike interval.
    pub phi: f64,
    /// Spikes folded into the mean.
    pub n: u64,
    /// Time of the most recent spike (0 before any spike).
    pub t_last: u64,
    pub flagged: bool,
    /// Negative spikes already issued.
    pub cancelled: u64,
}

impl IsiMonitor {
    /// Folds `count` spikes emitted at step `t` into the mean ISI.
    ///
    /// A burst contributes one interval `t - t_last` followed by
    /// `count - 1` zero intervals. Any spike clears the flag.
    pub fn update(&mut self, t: u64, count: u32) {
        debug_assert!(t >= self.t_last);
        if count == 0 {
            return;
        }
        let gap = (t - self.t_last) as f64;
        self.phi = (self.phi * self.n as f64 + gap) / (self.n + 1) as f64;
        self.n += 1;
        for _ in 1..count {
            self.phi = self.phi * self.n as f64 / (self.n + 1) as f64;
            self.n += 1;
        }
        self.t_last = t;
        self.flagged = false;
    }

    /// True once the silence since the last spike exceeds `phi + beta`.
    pub fn detect_sin(&self, t: u64, beta: u64) -> bool {
        self.n > 0 && (t - self.t_last) as f64 > self.phi + beta as f64
    }

    /// Negative spikes for this step, at most `gamma`, until every emitted
    /// spike has been cancelled.
    pub fn emit_negative(&mut self, gamma: u32) -> u32 {
        let k = (self.n - self.cancelled).min(gamma as u64);
        self.cancelled += k;
        k as u32
    }
}

/// Functional form of [`IsiMonitor::update`] for a single-spike step.
pub fn isi_update(mut mon: IsiMonitor, t: u64, spiked: bool) -> IsiMonitor {
    mon.update(t, spiked as u32);
    mon
}

pub fn detect_sin(mon: &IsiMonitor, t: u64, beta: u64) -> bool {
    mon.detect_sin(t, beta)
}

pub fn emit_negative(mon: &mut IsiMonitor, gamma: u32) -> u32 {
    mon.emit_negative(gamma)
}

/// Calibration state for one spiking layer.
#[derive(Clone, Debug)]
pub struct LayerCalibrator {
    monitors: Vec<IsiMonitor>,
    beta: u64,
    gamma: u32,
    /// Times a neuron went from unflagged to flagged.
    pub flag_events: u64,
}

impl LayerCalibrator {
    pub fn new(n: usize, beta: usize, gamma: u32) -> Self {
        Self {
            monitors: vec![IsiMonitor::default(); n],
            beta: beta as u64,
            gamma,
            flag_events: 0,
        }
    }

    pub fn monitors(&self) -> &[IsiMonitor] {
        &self.monitors
    }

    /// Processes the spikes of step `t` and writes negative spikes to `neg`.
    pub fn step(&mut self, t: u64, spikes: &[u32], neg: &mut [u32]) {
        for ((mon, &s), out) in self.monitors.iter_mut().zip(spikes).zip(neg.iter_mut()) {
            *out = 0;
            if s > 0 {
                mon.update(t, s);
                continue;
            }
            if !mon.flagged && mon.detect_sin(t, self.beta) {
                mon.flagged = true;
                self.flag_events += 1;
            }
            if mon.flagged {
                *out = mon.emit_negative(self.gamma);
            }
        }
    }

    pub fn flagged_count(&self) -> usize {
        self.monitors.iter().filter(|m| m.flagged).count()
    }

    pub fn cancelled_total(&self) -> u64 {
        self.monitors.iter().map(|m| m.cancelled).sum()
    }
}
