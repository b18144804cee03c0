mod common;

use common::{constant_drive, rng, sin_graph};
use proptest::prelude::*;
use rand::Rng;
use snnconv::boa::kl_divergence;
use snnconv::metrics::{downstream_contribution, residual_sin_ratio, sin_ratio};
use snnconv::snn::{firing_rate, simulate, ConversionConfig, SpikingNetwork};
use snnconv::spicalib::{detect_sin, emit_negative, IsiMonitor, LayerCalibrator};
use snnconv::Tensor;

fn cfg(t: usize, spicalib: bool) -> ConversionConfig {
    ConversionConfig {
        timesteps: t,
        spicalib,
        ..Default::default()
    }
}

/// Hidden pairs `(a, b)` with `1 <= a < 2` and `3a - 2 < b`, `b > 2a`:
/// a single spike at t = 1, then the membrane only falls.
fn sin_pairs(r: &mut impl Rng, n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|_| {
            let a = r.random_range(1.0..1.9);
            (a, r.random_range(2.0 * a + 0.05..2.0 * a + 2.0))
        })
        .collect()
}

proptest! {
    #[test]
    fn flagged_neurons_net_to_zero(seed in 0u64..1000, t in 8usize..400) {
        let mut r = rng(seed);
        let pairs = sin_pairs(&mut r, 4);
        let norm = sin_graph(&pairs, &[1.0; 4], &[0.1]);
        let trace = simulate(&norm, &Tensor::vector(vec![1.0]), &cfg(t, true)).unwrap();
        let hidden = &trace.layers[1];
        let spikes = hidden.spike_totals(t);
        let beta = t / 2;
        for i in 0..4 {
            prop_assert_eq!(spikes[i], 1);
            // flagged at the first step with t - 1 > 1 + beta
            let t_flag = beta + 3;
            let rate = firing_rate(&trace, 1, t).unwrap()[i];
            if t >= t_flag {
                prop_assert_eq!(rate, 0.0);
            } else {
                prop_assert_eq!(rate, 1.0 / t as f64);
            }
        }
    }

    #[test]
    fn cancelled_neuron_delivers_no_current(seed in 0u64..500) {
        let t = 128;
        let mut r = rng(seed);
        let pairs = sin_pairs(&mut r, 3);
        let w: Vec<f64> = (0..6).map(|_| r.random_range(-2.0..2.0)).collect();
        let norm = sin_graph(&pairs, &w, &[0.0, 0.0]);
        let c = cfg(t, true);
        let snn = SpikingNetwork::compile(&norm, &c).unwrap();
        let trace = simulate(&norm, &Tensor::vector(vec![1.0]), &c).unwrap();
        for source in 0..3 {
            for target in 0..2 {
                let series = downstream_contribution(&trace, &snn, 1, source, target).unwrap();
                prop_assert_eq!(*series.last().unwrap(), 0.0);
                prop_assert!((series[0] - w[target * 3 + source]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn periodic_neurons_are_untouched(seed in 0u64..500, t in prop::sample::select(vec![64usize, 128, 256])) {
        let mut r = rng(seed);
        // period at most ceil(1 / I) <= 20 <= beta
        let currents: Vec<f64> = (0..16).map(|_| r.random_range(0.05..5.0)).collect();
        let norm = constant_drive(&currents);
        let x = Tensor::vector(vec![1.0]);
        let off = simulate(&norm, &x, &cfg(t, false)).unwrap();
        let on = simulate(&norm, &x, &cfg(t, true)).unwrap();
        prop_assert_eq!(&off.layers[0].spikes, &on.layers[0].spikes);
        prop_assert_eq!(&off.layers[0].final_v, &on.layers[0].final_v);
        prop_assert!(on.layers[0].neg.iter().all(|&q| q == 0));
        prop_assert_eq!(on.layers[0].flag_events, 0);
        prop_assert_eq!(off.output_rates(), on.output_rates());
    }

    /// Adversarial nets: SIN hidden neurons plus positive ones, nonnegative
    /// readout weights and positive biases.
    #[test]
    fn calibration_restores_output(seed in 0u64..500) {
        let t = 256;
        let mut r = rng(seed);
        let mut pairs = sin_pairs(&mut r, 3);
        let positive: Vec<(f64, f64)> = (0..2).map(|_| (r.random_range(0.1..0.9), 0.0)).collect();
        pairs.extend(&positive);
        let mut w = Vec::new();
        for _ in 0..3 {
            w.extend((0..3).map(|_| r.random_range(3.0..5.0)));
            w.extend((0..2).map(|_| r.random_range(0.0..1.0)));
        }
        let norm = sin_graph(&pairs, &w, &[0.2, 0.3, 0.4]);
        let x = Tensor::vector(vec![1.0]);
        let acts = norm.graph.forward(&x).unwrap();
        let o = acts[4].data();
        let plain = simulate(&norm, &x, &cfg(t, false)).unwrap();
        let calib = simulate(&norm, &x, &cfg(t, true)).unwrap();
        let bound = 2.0 / t as f64;
        let (rp, rc) = (plain.output_rates(), calib.output_rates());
        prop_assert!(rc.iter().zip(o).all(|(a, b)| (a - b).abs() <= bound), "{:?} vs {:?}", rc, o);
        prop_assert!(rp.iter().zip(o).any(|(a, b)| (a - b).abs() > bound));
        prop_assert!(kl_divergence(&rc, o).unwrap() <= kl_divergence(&rp, o).unwrap());
        prop_assert!(sin_ratio(&plain, &acts).unwrap()[1] > 0.0);
        prop_assert_eq!(residual_sin_ratio(&calib, &acts).unwrap()[1], 0.0);
    }
}

#[test]
fn negative_spikes_drain_at_gamma_per_step() {
    let mut m = IsiMonitor::default();
    m.update(1, 3);
    m.flagged = true;
    assert_eq!(emit_negative(&mut m, 2), 2);
    assert_eq!(emit_negative(&mut m, 2), 1);
    assert_eq!(emit_negative(&mut m, 2), 0);

    let mut one = IsiMonitor::default();
    one.update(4, 1);
    assert_eq!(emit_negative(&mut one, 5), 1);
    assert_eq!(emit_negative(&mut one, 5), 0);
}

#[test]
fn detection_is_strict_and_needs_a_spike() {
    let mut m = IsiMonitor::default();
    assert!(!detect_sin(&m, 100, 3));
    m.update(2, 1);
    assert_eq!(m.phi, 2.0);
    assert!(!detect_sin(&m, 7, 3));
    assert!(detect_sin(&m, 8, 3));
}

#[test]
fn refiring_clears_the_flag_without_reinstating() {
    let mut cal = LayerCalibrator::new(1, 2, 5);
    let mut neg = [0u32];
    cal.step(1, &[1], &mut neg);
    for t in 2..=5 {
        cal.step(t, &[0], &mut neg);
    }
    assert_eq!(cal.flag_events, 1);
    assert_eq!(cal.cancelled_total(), 1);
    cal.step(6, &[1], &mut neg);
    assert_eq!(cal.flagged_count(), 0);
    assert_eq!(cal.cancelled_total(), 1);
}
