use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::NetworkGraph;
use crate::normalize::{apply_norm, ActivationStats};
use crate::snn::{simulate_compiled, ConversionConfig, SpikingNetwork};
use crate::tensor::Tensor;

use super::gp::{expected_improvement, gp_fit, GpHyper};
use super::kl::kl_divergence;

#[derive(Clone, Debug, PartialEq)]
pub struct BoaOptions {
    /// Total objective evaluations, initial design included.
    pub budget: usize,
    pub range: (f64, f64),
    pub seed: u64,
    /// Candidates scanned per acquisition step.
    pub candidates: usize,
    pub hyper: GpHyper,
}

impl Default for BoaOptions {
    fn default() -> Self {
        Self {
            budget: 15,
            range: (0.9, 1.0),
            seed: 0,
            candidates: 2000,
            hyper: GpHyper::default(),
        }
    }
}

impl BoaOptions {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.range;
        if self.budget < 3 {
            return Err(Error::InvalidConfig(format!("BOA budget must be >= 3, got {}", self.budget)));
        }
        if !(lo > 0.0 && lo < hi && hi <= 1.0) {
            return Err(Error::InvalidConfig(format!("BOA range ({lo}, {hi}) must satisfy 0 < lo < hi <= 1")));
        }
        if self.candidates == 0 {
            return Err(Error::InvalidConfig("BOA needs at least one candidate".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoaRecord {
    pub iteration: usize,
    pub p: f64,
    pub value: f64,
    /// Best value seen up to and including this evaluation.
    pub incumbent: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoaOutcome {
    pub best_p: f64,
    pub best_value: f64,
    pub history: Vec<BoaRecord>,
}

impl BoaOutcome {
    /// History as CSV with columns `iteration,p,kl,incumbent`.
    pub fn history_csv(&self) -> String {
        history_csv(&self.history)
    }
}

pub fn history_csv(history: &[BoaRecord]) -> String {
    let mut s = String::from("iteration,p,kl,incumbent\n");
    for r in history {
        s.push_str(&format!("{},{},{},{}\n", r.iteration, r.p, r.value, r.incumbent));
    }
    s
}

/// An objective failure together with everything evaluated before it.
#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct BoaAbort {
    pub history: Vec<BoaRecord>,
    #[source]
    pub error: Error,
}

/// Minimizes `objective` over `opts.range`.
///
/// Evaluates an evenly spaced initial design of up to four points with both
/// ends included, then repeatedly evaluates the EI maximizer over a scan
/// grid whose offset is drawn from `opts.seed`.
pub fn optimize_p<F>(mut objective: F, opts: &BoaOptions) -> std::result::Result<BoaOutcome, BoaAbort>
where
    F: FnMut(f64) -> Result<f64>,
{
    let abort = |history: Vec<BoaRecord>, error: Error| BoaAbort { history, error };
    if let Err(e) = opts.validate() {
        return Err(abort(Vec::new(), e));
    }
    let (lo, hi) = opts.range;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut history: Vec<BoaRecord> = Vec::with_capacity(opts.budget);

    let record = |history: &mut Vec<BoaRecord>, p: f64, objective: &mut F| -> Result<()> {
        let value = objective(p).map_err(|e| Error::Objective { p, source: Box::new(e) })?;
        if !value.is_finite() {
            return Err(Error::Objective {
                p,
                source: Box::new(Error::InvalidConfig(format!("objective returned {value}"))),
            });
        }
        let incumbent = history.last().map_or(value, |r| r.incumbent.min(value));
        history.push(BoaRecord {
            iteration: history.len(),
            p,
            value,
            incumbent,
        });
        Ok(())
    };

    let n0 = opts.budget.min(4);
    for i in 0..n0 {
        let p = lo + (hi - lo) * i as f64 / (n0 - 1) as f64;
        if let Err(e) = record(&mut history, p, &mut objective) {
            return Err(abort(history, e));
        }
    }

    while history.len() < opts.budget {
        let xs: Vec<f64> = history.iter().map(|r| r.p).collect();
        let ys: Vec<f64> = history.iter().map(|r| r.value).collect();
        let gp = match gp_fit(&xs, &ys, opts.hyper) {
            Ok(gp) => gp,
            Err(e) => return Err(abort(history, e)),
        };
        let phase: f64 = rng.random();
        let step = (hi - lo) / opts.candidates as f64;
        let mut best: Option<(f64, f64)> = None;
        for j in 0..opts.candidates {
            let c = (lo + (j as f64 + phase) * step).min(hi);
            let ei = expected_improvement(&gp, c);
            if best.is_none_or(|(_, b)| ei > b) {
                best = Some((c, ei));
            }
        }
        let (mut next, ei) = best.expect("at least one candidate");
        if !(ei > 0.0) {
            // flat acquisition: probe the widest gap between observations
            let mut pts = gp.points.clone();
            pts.push(lo);
            pts.push(hi);
            pts.sort_by(f64::total_cmp);
            next = pts
                .windows(2)
                .max_by(|a, b| (a[1] - a[0]).total_cmp(&(b[1] - b[0])))
                .map_or(lo, |w| 0.5 * (w[0] + w[1]));
        }
        if let Err(e) = record(&mut history, next, &mut objective) {
            return Err(abort(history, e));
        }
    }

    let best = history
        .iter()
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .expect("budget >= 3");
    Ok(BoaOutcome {
        best_p: best.p,
        best_value: best.value,
        history,
    })
}

/// Mean output KL divergence between the ANN and its spiking conversion at a
/// given percentile, over a fixed evaluation batch.
#[derive(Clone, Debug)]
pub struct KLObjective {
    pub graph: NetworkGraph,
    pub stats: ActivationStats,
    pub config: ConversionConfig,
    pub batch: Vec<Tensor>,
    /// ANN output for every batch sample.
    pub reference: Vec<Vec<f64>>,
}

impl KLObjective {
    /// Draws an evaluation batch of up to `batch_size` samples from `pool`
    /// using `seed`; the batch stays fixed for the objective's lifetime.
    pub fn new(
        graph: NetworkGraph,
        stats: ActivationStats,
        config: ConversionConfig,
        pool: &[Tensor],
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if pool.is_empty() || batch_size == 0 {
            return Err(Error::EmptyDataset);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = if batch_size >= pool.len() {
            (0..pool.len()).collect::<Vec<_>>()
        } else {
            sample(&mut rng, pool.len(), batch_size).into_vec()
        };
        idx.sort_unstable();
        let batch: Vec<Tensor> = idx.into_iter().map(|i| pool[i].clone()).collect();
        let reference = batch
            .iter()
            .map(|x| graph.predict(x).map(Tensor::into_data))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            graph,
            stats,
            config,
            batch,
            reference,
        })
    }

    /// Normalizes at `p` and lowers the result for simulation.
    pub fn prepare(&self, p: f64) -> Result<SpikingNetwork> {
        let norm = apply_norm(&self.graph, &self.stats, p)?;
        let cfg = ConversionConfig { p, ..self.config.clone() };
        cfg.validate()?;
        SpikingNetwork::compile(&norm, &cfg)
    }

    /// Output KL of batch sample `i` under a prepared network.
    pub fn sample_kl(&self, snn: &SpikingNetwork, i: usize) -> Result<f64> {
        let trace = simulate_compiled(snn, &self.batch[i], &self.config)?;
        kl_divergence(&trace.output_rates(), &self.reference[i])
    }

    pub fn evaluate(&self, p: f64) -> Result<f64> {
        let snn = self.prepare(p)?;
        let mut total = 0.0;
        for i in 0..self.batch.len() {
            total += self.sample_kl(&snn, i)?;
        }
        Ok(total / self.batch.len() as f64)
    }
}
