mod common;

use std::fs;
use std::path::Path;

use common::{fixture, p, snnconv};
use snnconv::io::{save_model, save_tensor, stack_samples};
use snnconv::metrics::{error_report, EnergyConstants};
use snnconv::model::{Dense, Layer};
use snnconv::normalize::NormalizedGraph;
use snnconv::snn::{simulate, ConversionConfig};
use snnconv::{NetworkGraph, Tensor};
use snnconv_cli::report::{aggregate, SampleResult};

fn convert(model: &Path, data: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec!["convert", "--model", p(model), "--data", p(data), "--out", p(out)];
    args.extend_from_slice(extra);
    let o = snnconv(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn simulate_cli(model: &Path, data: &Path, out: &Path, extra: &[&str]) -> serde_json::Value {
    let mut args = vec!["simulate", "--model", p(model), "--data", p(data), "--out", p(out)];
    args.extend_from_slice(extra);
    let o = snnconv(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap()
}

#[test]
fn missing_dataset_fails_before_compute() {
    let fx = fixture(4, 1);
    let out = fx.dir.path().join("out");
    let missing = fx.dir.path().join("nope.bin");
    let o = snnconv(&["convert", "--model", p(&fx.model), "--data", p(&missing), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.bin"));
    assert!(!out.exists());
}

#[test]
fn bad_flag_value_is_a_validation_error() {
    let fx = fixture(4, 1);
    let out = fx.dir.path().join("out");
    let o = snnconv(&[
        "convert", "--model", p(&fx.model), "--data", p(&fx.data), "--out", p(&out), "--p", "1.5",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn simulate_rejects_unnormalized_model() {
    let fx = fixture(4, 1);
    let out = fx.dir.path().join("out");
    let o = snnconv(&["simulate", "--model", p(&fx.model), "--data", p(&fx.data), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn same_seed_gives_identical_reports() {
    let fx = fixture(8, 3);
    let conv_out = fx.dir.path().join("conv");
    convert(&fx.model, &fx.data, &conv_out, &["--seed", "5"]);
    let norm = conv_out.join("model.norm.json");
    let a = fx.dir.path().join("a");
    let b = fx.dir.path().join("b");
    simulate_cli(&norm, &fx.data, &a, &["--timesteps", "32", "--seed", "5", "--workers", "1"]);
    simulate_cli(&norm, &fx.data, &b, &["--timesteps", "32", "--seed", "5", "--workers", "3"]);
    for f in ["report.json", "report.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn unit_scale_network_keeps_its_weights() {
    let dir = tempfile::tempdir().unwrap();
    let eye = |n: usize| {
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        Layer::Dense(Dense {
            weight: Tensor::new(vec![n, n], w).unwrap(),
            bias: None,
        })
    };
    let net = NetworkGraph::new(vec![3], vec![eye(3), Layer::Relu, eye(3)]).unwrap();
    let model = dir.path().join("model.json");
    save_model(&net, &model, None).unwrap();
    let samples = vec![Tensor::vector(vec![1.0, 0.25, 0.5]), Tensor::vector(vec![0.5, 0.75, 0.0])];
    let data = dir.path().join("data.bin");
    save_tensor(&stack_samples(&samples).unwrap(), &data).unwrap();
    let out = dir.path().join("out");
    convert(&model, &data, &out, &["--p", "1.0"]);
    assert_eq!(
        fs::read(dir.path().join("model.bin")).unwrap(),
        fs::read(out.join("model.norm.bin")).unwrap()
    );
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out.join("convert.json")).unwrap()).unwrap();
    assert_eq!(summary["scales"], serde_json::json!([1.0, 1.0]));
}

#[test]
fn ablate_writes_grid_times_horizons_rows() {
    let fx = fixture(4, 2);
    let conv_out = fx.dir.path().join("conv");
    convert(&fx.model, &fx.data, &conv_out, &[]);
    let out = fx.dir.path().join("abl");
    let o = snnconv(&[
        "ablate",
        "--model",
        p(&conv_out.join("model.norm.json")),
        "--data",
        p(&fx.data),
        "--labels",
        p(&fx.labels),
        "--out",
        p(&out),
        "--horizons",
        "8,16,32",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 12);
    for name in ["Burst,", "Burst+MLIPooling,", "Burst+SpiCalib,", "Burst+MLIPooling+SpiCalib,"] {
        assert_eq!(rows.iter().filter(|r| r.starts_with(name)).count(), 3, "{name}");
    }
}

#[test]
fn single_step_rates_lie_on_the_spike_grid() {
    let fx = fixture(3, 4);
    let conv_out = fx.dir.path().join("conv");
    convert(&fx.model, &fx.data, &conv_out, &[]);
    let out = fx.dir.path().join("sim");
    simulate_cli(
        &conv_out.join("model.norm.json"),
        &fx.data,
        &out,
        &["--timesteps", "1", "--save-traces", "--readout", "spiking"],
    );
    for i in 0..3 {
        let s: serde_json::Value =
            serde_json::from_slice(&fs::read(out.join(format!("traces/sample{i}.json"))).unwrap()).unwrap();
        for layer in s["layers"].as_array().unwrap() {
            for r in layer["rates"].as_array().unwrap() {
                let r = r.as_f64().unwrap();
                assert!(r.fract() == 0.0 && (-5.0..=5.0).contains(&r), "rate {r}");
            }
        }
    }
}

#[test]
fn spicalib_is_inert_without_sin() {
    let dir = tempfile::tempdir().unwrap();
    let positive = |out: usize, inp: usize, seed: u64| {
        let w = (0..out * inp).map(|k| 0.05 + 0.15 * (((k as u64 * 7919 + seed) % 97) as f64 / 97.0)).collect();
        Layer::Dense(Dense {
            weight: Tensor::new(vec![out, inp], w).unwrap(),
            bias: None,
        })
    };
    let net = NetworkGraph::new(
        vec![8],
        vec![positive(16, 8, 1), Layer::Relu, positive(12, 16, 2), Layer::Relu, positive(4, 12, 3)],
    )
    .unwrap();
    let model = dir.path().join("model.json");
    save_model(&net, &model, None).unwrap();
    let samples: Vec<Tensor> = (0..6)
        .map(|s| Tensor::vector((0..8).map(|k| 0.5 + 0.5 * (((s * 8 + k) * 37 % 11) as f64 / 11.0)).collect()))
        .collect();
    let data = dir.path().join("data.bin");
    save_tensor(&stack_samples(&samples).unwrap(), &data).unwrap();
    let conv_out = dir.path().join("conv");
    convert(&model, &data, &conv_out, &[]);
    let norm = conv_out.join("model.norm.json");
    let mut on = simulate_cli(&norm, &data, &dir.path().join("on"), &["--timesteps", "64", "--spicalib", "on"]);
    let mut off = simulate_cli(&norm, &data, &dir.path().join("off"), &["--timesteps", "64", "--spicalib", "off"]);
    for layer in on["layers"].as_array().unwrap() {
        assert_eq!(layer["flag_events"], 0);
        assert_eq!(layer["negative_spikes"], 0);
        assert_eq!(layer["sin_ratio_mean"], 0.0);
    }
    for r in [&mut on, &mut off] {
        let c = r["config"].as_object_mut().unwrap();
        c.remove("spicalib");
        c.remove("beta");
    }
    assert_eq!(on, off);
}

#[test]
fn failed_samples_are_reported_and_skipped() {
    let net = NetworkGraph::new(
        vec![2],
        vec![
            Layer::Dense(Dense {
                weight: Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
                bias: None,
            }),
            Layer::Relu,
            Layer::Dense(Dense {
                weight: Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
                bias: None,
            }),
        ],
    )
    .unwrap();
    let norm = NormalizedGraph::identity(net, 1.0);
    let cfg = ConversionConfig {
        timesteps: 16,
        ..Default::default()
    };
    let x = Tensor::vector(vec![0.5, 0.25]);
    let trace = simulate(&norm, &x, &cfg).unwrap();
    let acts = norm.graph.forward(&x).unwrap();
    let ok = SampleResult {
        errors: error_report(&trace, &acts).unwrap(),
        sops: 3.0,
        mean_rates: vec![0.375, 0.375],
        output_rates: trace.output_rates(),
        ann_output: acts.last().unwrap().data().to_vec(),
        conservation: 0.0,
    };
    let results = vec![
        (0, Ok(ok.clone())),
        (1, Err("non-finite current".to_string())),
        (2, Ok(ok)),
    ];
    let report = aggregate(&cfg, &results, Some(&[0, 1, 0]), 8.0, EnergyConstants::default());
    assert_eq!(report.samples, 3);
    assert_eq!(report.succeeded, 2);
    assert_eq!(report.failures.len(), 1);
    assert_eq!(report.failures[0].index, 1);
    assert_eq!(report.accuracy, Some(1.0));
    assert_eq!(report.energy.sops, 6.0);
    assert_eq!(report.energy.macs, 16.0);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let fx = fixture(4, 6);
    let conv_out = fx.dir.path().join("conv");
    convert(&fx.model, &fx.data, &conv_out, &["--p", "0.99"]);
    let cfg_path = fx.dir.path().join("run.json");
    let out = fx.dir.path().join("sim");
    let cfg = serde_json::json!({
        "model": conv_out.join("model.norm.json"),
        "data": fx.data,
        "out": out,
        "timesteps": 12,
        "gamma": 3,
    });
    fs::write(&cfg_path, cfg.to_string()).unwrap();
    let o = snnconv(&["simulate", "--config", p(&cfg_path), "--timesteps", "20"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(r["config"]["timesteps"], 20);
    assert_eq!(r["config"]["gamma"], 3);
    assert_eq!(r["config"]["p"], 0.99);

    fs::write(&cfg_path, r#"{"timestep": 5}"#).unwrap();
    let o = snnconv(&["simulate", "--config", p(&cfg_path)]);
    assert_eq!(o.status.code(), Some(1));
}
