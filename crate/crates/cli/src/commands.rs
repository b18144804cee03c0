use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use snnconv::boa::{optimize_p, BoaOutcome, KLObjective};
use snnconv::io::{load_dataset, load_model, load_tensor, save_model, NormalizationEntry};
use snnconv::metrics::{ann_macs, current_trace, error_report, mean_firing_rates, synaptic_ops};
use snnconv::normalize::{apply_norm, collect_stats_with, ActivationStats, NormalizedGraph, StatsOptions};
use snnconv::snn::{simulate_compiled, ConversionConfig, PoolMode, SimulationTrace, SpikingNetwork};
use snnconv::{NetworkGraph, Tensor};

use crate::config::{RunConfig, DEFAULT_P};
use crate::report::{ablation_csv, aggregate, layers_csv, AblationRow, SampleResult, SimulationReport};
use crate::CliError;

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(snnconv::Error::from)?;
    text.push('\n');
    write(path, text)
}

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn thread_pool(workers: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        b = b.num_threads(w);
    }
    b.build().map_err(|e| CliError::Validation(format!("worker pool: {e}")))
}

fn load_labels(path: Option<PathBuf>, n: usize) -> Result<Option<Vec<usize>>, CliError> {
    let Some(path) = path else { return Ok(None) };
    let t = load_tensor(&path)?;
    if t.len() != n {
        return Err(CliError::Validation(format!(
            "{} holds {} labels for {n} samples",
            path.display(),
            t.len()
        )));
    }
    t.data()
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(CliError::Validation(format!("label {v} is not a class index")))
            }
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

#[derive(Debug, Serialize)]
struct ConvertSummary {
    p: f64,
    source: &'static str,
    scales: Vec<f64>,
    calibration_samples: usize,
    boa_best_kl: Option<f64>,
}

#[derive(Debug, Serialize)]
struct BoaSummary {
    best_p: f64,
    best_kl: f64,
    evaluations: usize,
    batch: usize,
}

/// Searches p against `net` and writes `boa_history.csv`.
fn search_p(
    cfg: &RunConfig,
    pool: &rayon::ThreadPool,
    net: &NetworkGraph,
    stats: &ActivationStats,
    samples: &[Tensor],
    out: &Path,
) -> Result<BoaOutcome, CliError> {
    let objective = KLObjective::new(
        net.clone(),
        stats.clone(),
        cfg.conversion(),
        samples,
        cfg.boa_batch,
        cfg.seed,
    )?;
    let eval = |p: f64| -> snnconv::Result<f64> {
        let snn = objective.prepare(p)?;
        let kls: Vec<snnconv::Result<f64>> = pool.install(|| {
            (0..objective.batch.len())
                .into_par_iter()
                .map(|i| objective.sample_kl(&snn, i))
                .collect()
        });
        let mut total = 0.0;
        for kl in kls {
            total += kl?;
        }
        Ok(total / objective.batch.len() as f64)
    };
    let history_path = out.join("boa_history.csv");
    match optimize_p(eval, &cfg.boa_options()) {
        Ok(outcome) => {
            write(&history_path, outcome.history_csv())?;
            info!("BOA selected p = {} (KL {})", outcome.best_p, outcome.best_value);
            Ok(outcome)
        }
        Err(abort) => {
            write(&history_path, snnconv::boa::optimize::history_csv(&abort.history))?;
            Err(CliError::Runtime(abort.error))
        }
    }
}

fn calibration_stats(cfg: &RunConfig, net: &NetworkGraph, samples: &[Tensor]) -> Result<ActivationStats, CliError> {
    let n = cfg.calib_size.unwrap_or(samples.len()).min(samples.len());
    let opts = StatsOptions {
        reservoir_cap: cfg.reservoir_cap,
        seed: cfg.seed,
    };
    Ok(collect_stats_with(net, &samples[..n], opts)?)
}

pub fn run_convert(cfg: &RunConfig) -> Result<NormalizedGraph, CliError> {
    cfg.validate(false)?;
    let out = cfg.out_dir()?;
    let (net, _) = load_model(&cfg.model_path()?)?;
    let samples = load_dataset(&cfg.data_path()?)?;
    prepare_out(&out)?;
    let pool = thread_pool(cfg.workers)?;

    let stats = calibration_stats(cfg, &net, &samples)?;
    stats.save(&out.join("stats.json"))?;

    let (p, source, boa_best_kl) = match (cfg.p, cfg.boa) {
        (Some(p), boa) => {
            if boa {
                warn!("--p {p} given; skipping BOA");
            }
            (p, "fixed", None)
        }
        (None, true) => {
            let o = search_p(cfg, &pool, &net, &stats, &samples, &out)?;
            (o.best_p, "boa", Some(o.best_value))
        }
        (None, false) => (DEFAULT_P, "default", None),
    };
    let norm = apply_norm(&net, &stats, p)?;
    save_model(
        &norm.graph,
        &out.join("model.norm.json"),
        Some(NormalizationEntry {
            p,
            scales: norm.scales.clone(),
        }),
    )?;
    write_json(
        &out.join("convert.json"),
        &ConvertSummary {
            p,
            source,
            scales: norm.scales.clone(),
            calibration_samples: cfg.calib_size.unwrap_or(samples.len()).min(samples.len()),
            boa_best_kl,
        },
    )?;
    Ok(norm)
}

pub fn run_boa(cfg: &RunConfig) -> Result<BoaOutcome, CliError> {
    let mut cfg = cfg.clone();
    cfg.boa = true;
    cfg.p = None;
    cfg.validate(false)?;
    let out = cfg.out_dir()?;
    let (net, _) = load_model(&cfg.model_path()?)?;
    let samples = load_dataset(&cfg.data_path()?)?;
    prepare_out(&out)?;
    let pool = thread_pool(cfg.workers)?;
    let stats = calibration_stats(&cfg, &net, &samples)?;
    let outcome = search_p(&cfg, &pool, &net, &stats, &samples, &out)?;
    write_json(
        &out.join("boa.json"),
        &BoaSummary {
            best_p: outcome.best_p,
            best_kl: outcome.best_value,
            evaluations: outcome.history.len(),
            batch: cfg.boa_batch.min(samples.len()),
        },
    )?;
    Ok(outcome)
}

/// Loads a model written by `convert`.
fn load_normalized(path: &Path) -> Result<NormalizedGraph, CliError> {
    let (graph, norm) = load_model(path)?;
    let norm = norm.ok_or_else(|| {
        CliError::Validation(format!("{} is not a normalized model; run convert first", path.display()))
    })?;
    Ok(NormalizedGraph {
        graph,
        scales: norm.scales,
        p: norm.p,
    })
}

struct Inputs {
    norm: NormalizedGraph,
    samples: Vec<Tensor>,
    labels: Option<Vec<usize>>,
}

fn load_inputs(cfg: &RunConfig) -> Result<Inputs, CliError> {
    cfg.validate(true)?;
    let norm = load_normalized(&cfg.model_path()?)?;
    let samples = load_dataset(&cfg.data_path()?)?;
    let labels = load_labels(cfg.labels_path()?, samples.len())?;
    Ok(Inputs { norm, samples, labels })
}

fn run_sample(
    snn: &SpikingNetwork,
    norm: &NormalizedGraph,
    x: &Tensor,
    conv: &ConversionConfig,
) -> snnconv::Result<(SampleResult, SimulationTrace)> {
    let trace = simulate_compiled(snn, x, conv)?;
    let acts = norm.graph.forward(x)?;
    let errors = error_report(&trace, &acts)?;
    let result = SampleResult {
        sops: synaptic_ops(&trace),
        mean_rates: mean_firing_rates(&trace),
        output_rates: trace.output_rates(),
        ann_output: acts.last().expect("nonempty graph").data().to_vec(),
        conservation: trace.conservation_residual(),
        errors,
    };
    Ok((result, trace))
}

/// Simulates every sample in parallel; results come back in sample order.
fn simulate_all(
    pool: &rayon::ThreadPool,
    inputs: &Inputs,
    conv: &ConversionConfig,
    keep_trace: impl Fn(usize) -> bool + Sync,
) -> Result<Vec<(usize, Result<SampleResult, String>, Option<SimulationTrace>)>, CliError> {
    conv.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    let snn = SpikingNetwork::compile(&inputs.norm, conv)?;
    Ok(pool.install(|| {
        inputs
            .samples
            .par_iter()
            .enumerate()
            .map(|(i, x)| match run_sample(&snn, &inputs.norm, x, conv) {
                Ok((r, trace)) => (i, Ok(r), keep_trace(i).then_some(trace)),
                Err(e) => {
                    warn!("sample {i}: {e}");
                    (i, Err(e.to_string()), None)
                }
            })
            .collect()
    }))
}

fn emit_plot_data(dir: &Path, trace: &SimulationTrace, acts: &[Tensor]) -> Result<(), CliError> {
    prepare_out(dir)?;
    for (li, layer) in trace.layers.iter().enumerate() {
        if !layer.currents.is_empty() {
            let ids: Vec<usize> = (0..layer.len().min(8)).collect();
            let series = current_trace(trace, li, &ids)?;
            let mut s = String::from("t");
            for id in &ids {
                s.push_str(&format!(",n{id}"));
            }
            s.push('\n');
            for t in 0..trace.timesteps {
                s.push_str(&(t + 1).to_string());
                for col in &series {
                    s.push_str(&format!(",{}", col[t]));
                }
                s.push('\n');
            }
            write(&dir.join(format!("current_layer{li}.csv")), s)?;
        }
        let rates = snnconv::snn::firing_rate(trace, li, trace.timesteps)?;
        let ann = acts[layer.ann_layer].data();
        let (lo, hi) = rates
            .iter()
            .chain(ann)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let bins = 20usize;
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let bin = |v: f64| (((v - lo) / width) as usize).min(bins - 1);
        let (mut hs, mut ha) = (vec![0usize; bins], vec![0usize; bins]);
        for &v in &rates {
            hs[bin(v)] += 1;
        }
        for &v in ann {
            ha[bin(v)] += 1;
        }
        let mut s = String::from("bin_lo,bin_hi,ann,snn\n");
        for b in 0..bins {
            let a = lo + width * b as f64;
            s.push_str(&format!("{a},{},{},{}\n", a + width, ha[b], hs[b]));
        }
        write(&dir.join(format!("hist_layer{li}.csv")), s)?;
    }
    Ok(())
}

pub fn run_simulate(cfg: &RunConfig) -> Result<SimulationReport, CliError> {
    let inputs = load_inputs(cfg)?;
    let out = cfg.out_dir()?;
    prepare_out(&out)?;
    let pool = thread_pool(cfg.workers)?;
    let conv = ConversionConfig {
        p: inputs.norm.p,
        ..cfg.conversion()
    };
    let keep = |i: usize| cfg.save_traces || (cfg.emit_plot_data && i == 0);
    let results = simulate_all(&pool, &inputs, &conv, keep)?;

    if cfg.save_traces {
        let dir = out.join("traces");
        prepare_out(&dir)?;
        for (i, _, trace) in &results {
            if let Some(t) = trace {
                t.save(&dir.join(format!("sample{i}.bin")), &dir.join(format!("sample{i}.json")))?;
            }
        }
    }
    if cfg.emit_plot_data {
        if let Some((_, _, Some(trace))) = results.first() {
            let acts = inputs.norm.graph.forward(&inputs.samples[0])?;
            emit_plot_data(&out.join("plotdata"), trace, &acts)?;
        }
    }

    let flat: Vec<(usize, Result<SampleResult, String>)> = results.into_iter().map(|(i, r, _)| (i, r)).collect();
    let report = aggregate(
        &conv,
        &flat,
        inputs.labels.as_deref(),
        ann_macs(&inputs.norm.graph),
        cfg.energy(),
    );
    write_json(&out.join("report.json"), &report)?;
    write(&out.join("report.csv"), layers_csv(&report))?;
    if report.succeeded == 0 && report.samples > 0 {
        return Err(CliError::Runtime(snnconv::Error::InvalidConfig(format!(
            "all {} samples failed",
            report.samples
        ))));
    }
    Ok(report)
}

/// A mechanism combination compared by `ablate`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mechanisms {
    pub name: String,
    pub pool: PoolMode,
    pub spicalib: bool,
}

pub fn default_grid() -> Vec<Mechanisms> {
    let m = |name: &str, pool, spicalib| Mechanisms {
        name: name.to_string(),
        pool,
        spicalib,
    };
    vec![
        m("Burst", PoolMode::NaiveMax, false),
        m("Burst+MLIPooling", PoolMode::Mlip, false),
        m("Burst+SpiCalib", PoolMode::NaiveMax, true),
        m("Burst+MLIPooling+SpiCalib", PoolMode::Mlip, true),
    ]
}

#[derive(Debug, Serialize)]
struct AblationReport<'a> {
    p: f64,
    rows: &'a [AblationRow],
}

pub fn run_ablate(cfg: &RunConfig, grid: &[Mechanisms]) -> Result<Vec<AblationRow>, CliError> {
    let inputs = load_inputs(cfg)?;
    let out = cfg.out_dir()?;
    prepare_out(&out)?;
    let pool = thread_pool(cfg.workers)?;
    let macs = ann_macs(&inputs.norm.graph);
    let mut rows = Vec::with_capacity(grid.len() * cfg.horizons.len());
    for mech in grid {
        for &t in &cfg.horizons {
            let conv = ConversionConfig {
                p: inputs.norm.p,
                pool: mech.pool,
                spicalib: mech.spicalib,
                timesteps: t,
                ..cfg.conversion()
            };
            let results = simulate_all(&pool, &inputs, &conv, |_| false)?;
            let flat: Vec<_> = results.into_iter().map(|(i, r, _)| (i, r)).collect();
            let report = aggregate(&conv, &flat, inputs.labels.as_deref(), macs, cfg.energy());
            rows.push(AblationRow {
                mechanisms: mech.name.clone(),
                timesteps: t,
                pool: mech.pool,
                spicalib: mech.spicalib,
                accuracy: report.accuracy,
                agreement: report.agreement,
                output_kl: report.output_kl_mean,
                output_max_abs_error: report.output_max_abs_error,
                energy_ratio: report.energy.ratio,
                failures: report.failures.len(),
            });
        }
    }
    write(&out.join("ablation.csv"), ablation_csv(&rows))?;
    write_json(
        &out.join("report.json"),
        &AblationReport {
            p: inputs.norm.p,
            rows: &rows,
        },
    )?;
    Ok(rows)
}
