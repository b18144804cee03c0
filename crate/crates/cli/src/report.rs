use serde::Serialize;
use snnconv::metrics::{energy_from_counts, EnergyConstants, EnergyReport, ErrorReport};
use snnconv::snn::{ConversionConfig, TraceKind};

/// Per-sample outcome kept for aggregation.
#[derive(Clone, Debug)]
pub struct SampleResult {
    pub errors: ErrorReport,
    pub sops: f64,
    pub mean_rates: Vec<f64>,
    pub output_rates: Vec<f64>,
    pub ann_output: Vec<f64>,
    pub conservation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleFailure {
    pub index: usize,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerAggregate {
    pub kind: TraceKind,
    pub graph_layer: usize,
    pub neurons: usize,
    pub clipped_mean: f64,
    pub sin_ratio_mean: f64,
    pub residual_sin_ratio_mean: f64,
    pub flag_events: u64,
    pub negative_spikes: u64,
    pub max_abs_error: f64,
    pub mean_abs_error: f64,
    /// Mean over samples where the layer KL is defined.
    pub kl_mean: Option<f64>,
    pub mean_firing_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimulationReport {
    pub config: ConversionConfig,
    pub samples: usize,
    pub succeeded: usize,
    pub failures: Vec<SampleFailure>,
    pub output_kl_mean: Option<f64>,
    pub output_max_abs_error: f64,
    pub output_mean_abs_error: f64,
    /// Fraction of labelled samples whose SNN output argmax matches the label.
    pub accuracy: Option<f64>,
    pub ann_accuracy: Option<f64>,
    /// Fraction of samples whose SNN and ANN argmax agree.
    pub agreement: f64,
    pub conservation_residual: f64,
    pub layers: Vec<LayerAggregate>,
    pub energy: EnergyReport,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

/// Folds per-sample results in sample order.
pub fn aggregate(
    config: &ConversionConfig,
    results: &[(usize, Result<SampleResult, String>)],
    labels: Option<&[usize]>,
    macs_per_sample: f64,
    constants: EnergyConstants,
) -> SimulationReport {
    let ok: Vec<(usize, &SampleResult)> = results
        .iter()
        .filter_map(|(i, r)| r.as_ref().ok().map(|r| (*i, r)))
        .collect();
    let failures = results
        .iter()
        .filter_map(|(i, r)| r.as_ref().err().map(|e| SampleFailure { index: *i, error: e.clone() }))
        .collect();

    let n_layers = ok.first().map_or(0, |(_, r)| r.errors.layers.len());
    let layers = (0..n_layers)
        .map(|li| {
            let per = || ok.iter().map(move |(_, r)| &r.errors.layers[li]);
            let first = per().next().expect("at least one sample");
            let count = ok.len() as f64;
            LayerAggregate {
                kind: first.kind,
                graph_layer: first.graph_layer,
                neurons: first.neurons,
                clipped_mean: per().map(|l| l.clipped as f64).sum::<f64>() / count,
                sin_ratio_mean: per().map(|l| l.sin_ratio).sum::<f64>() / count,
                residual_sin_ratio_mean: per().map(|l| l.residual_sin_ratio).sum::<f64>() / count,
                flag_events: per().map(|l| l.flag_events).sum(),
                negative_spikes: per().map(|l| l.negative_spikes).sum(),
                max_abs_error: per().map(|l| l.error.max_abs).fold(0.0, f64::max),
                mean_abs_error: per().map(|l| l.error.mean_abs).sum::<f64>() / count,
                kl_mean: mean(per().filter_map(|l| l.error.kl)),
                mean_firing_rate: ok.iter().map(|(_, r)| r.mean_rates[li]).sum::<f64>() / count,
            }
        })
        .collect();

    let accuracy_of = |pick: &dyn Fn(&SampleResult) -> &[f64]| {
        labels.and_then(|labels| {
            mean(
                ok.iter()
                    .filter(|(i, _)| *i < labels.len())
                    .map(|(i, r)| f64::from(u8::from(argmax(pick(r)) == labels[*i]))),
            )
        })
    };
    let accuracy = accuracy_of(&|r| &r.output_rates);
    let ann_accuracy = accuracy_of(&|r| &r.ann_output);
    let agreement = mean(
        ok.iter()
            .map(|(_, r)| f64::from(u8::from(argmax(&r.output_rates) == argmax(&r.ann_output)))),
    )
    .unwrap_or(0.0);
    let outputs: Vec<_> = ok.iter().filter_map(|(_, r)| r.errors.layers.last()).collect();

    let sops = ok.iter().map(|(_, r)| r.sops).sum::<f64>();
    let mean_rates = (0..n_layers)
        .map(|li| ok.iter().map(|(_, r)| r.mean_rates[li]).sum::<f64>() / ok.len().max(1) as f64)
        .collect();
    let energy = energy_from_counts(sops, macs_per_sample * ok.len() as f64, constants, mean_rates);

    SimulationReport {
        config: config.clone(),
        samples: results.len(),
        succeeded: ok.len(),
        failures,
        output_kl_mean: mean(ok.iter().filter_map(|(_, r)| r.errors.output_kl)),
        output_max_abs_error: outputs.iter().map(|l| l.error.max_abs).fold(0.0, f64::max),
        output_mean_abs_error: mean(outputs.iter().map(|l| l.error.mean_abs)).unwrap_or(0.0),
        accuracy,
        ann_accuracy,
        agreement,
        conservation_residual: ok.iter().map(|(_, r)| r.conservation).fold(0.0, f64::max),
        layers,
        energy,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn kind_name(k: TraceKind) -> &'static str {
    match k {
        TraceKind::Spiking => "spiking",
        TraceKind::Pool => "pool",
        TraceKind::Readout => "readout",
        TraceKind::SpikingReadout => "spiking-readout",
    }
}

/// Per-layer table of a simulation report.
pub fn layers_csv(report: &SimulationReport) -> String {
    let mut s = String::from(
        "stage,kind,graph_layer,neurons,clipped_mean,sin_ratio,residual_sin_ratio,flag_events,negative_spikes,max_abs_error,mean_abs_error,kl,mean_firing_rate\n",
    );
    for (i, l) in report.layers.iter().enumerate() {
        s.push_str(&format!(
            "{i},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            kind_name(l.kind),
            l.graph_layer,
            l.neurons,
            l.clipped_mean,
            l.sin_ratio_mean,
            l.residual_sin_ratio_mean,
            l.flag_events,
            l.negative_spikes,
            l.max_abs_error,
            l.mean_abs_error,
            opt(l.kl_mean),
            l.mean_firing_rate
        ));
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub mechanisms: String,
    pub timesteps: usize,
    pub pool: snnconv::snn::PoolMode,
    pub spicalib: bool,
    pub accuracy: Option<f64>,
    pub agreement: f64,
    pub output_kl: Option<f64>,
    pub output_max_abs_error: f64,
    pub energy_ratio: f64,
    pub failures: usize,
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("mechanisms,timesteps,accuracy,agreement,output_kl,output_max_abs_error,energy_ratio,failures\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.mechanisms,
            r.timesteps,
            opt(r.accuracy),
            r.agreement,
            opt(r.output_kl),
            r.output_max_abs_error,
            r.energy_ratio,
            r.failures
        ));
    }
    s
}
