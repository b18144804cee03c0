//! One-dimensional Gaussian-process surrogate with a squared-exponential
//! kernel, and the expected-improvement acquisition for minimization.
//!
//! The kernel matrix of a dozen points inside a few length scales routinely
//! has a condition number above 1e15, so the factorization and solves run in
//! double-double arithmetic.

use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use twofloat::TwoFloat;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GpHyper {
    pub length_scale: f64,
    /// Prior variance of the latent function; `None` derives it from the
    /// spread of the observations.
    pub signal_variance: Option<f64>,
    /// Observation noise as a fraction of the signal variance.
    pub noise: f64,
}

impl Default for GpHyper {
    fn default() -> Self {
        Self {
            length_scale: 0.02,
            signal_variance: None,
            noise: 1e-6,
        }
    }
}

impl GpHyper {
    pub fn noiseless() -> Self {
        Self {
            noise: 0.0,
            ..Self::default()
        }
    }
}

/// Fitted posterior over a set of distinct observations.
#[derive(Clone, Debug)]
pub struct GPState {
    pub points: Vec<f64>,
    pub values: Vec<f64>,
    pub length_scale: f64,
    pub signal_variance: f64,
    /// Noise variance actually added to the diagonal, jitter included.
    pub noise_variance: f64,
    pub prior_mean: f64,
    /// Lower Cholesky factor of the kernel matrix, row-major.
    chol: Vec<TwoFloat>,
    alpha: Vec<TwoFloat>,
}

fn sq_exp(a: f64, b: f64, ell: f64, sv: f64) -> f64 {
    let d = (a - b) / ell;
    sv * (-0.5 * d * d).exp()
}

/// Merges duplicate points by averaging their values; output sorted by point.
fn merge_duplicates(points: &[f64], values: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut pairs: Vec<(f64, f64)> = points.iter().copied().zip(values.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let mut counts: Vec<f64> = Vec::new();
    for (x, y) in pairs {
        match xs.last() {
            Some(&last) if (x - last).abs() <= 1e-12 => {
                let k = counts.last_mut().unwrap();
                let m = ys.last_mut().unwrap();
                *m = (*m * *k + y) / (*k + 1.0);
                *k += 1.0;
            }
            _ => {
                xs.push(x);
                ys.push(y);
                counts.push(1.0);
            }
        }
    }
    (xs, ys)
}

pub fn gp_fit(points: &[f64], values: &[f64], hyper: GpHyper) -> Result<GPState> {
    if points.is_empty() || points.len() != values.len() {
        return Err(Error::InvalidConfig(format!(
            "GP needs matching, nonempty observations ({} points, {} values)",
            points.len(),
            values.len()
        )));
    }
    if points.iter().chain(values).any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("GP observations must be finite".into()));
    }
    if !(hyper.length_scale > 0.0) || hyper.noise < 0.0 {
        return Err(Error::InvalidConfig(format!("bad GP hyperparameters {hyper:?}")));
    }
    let (xs, ys) = merge_duplicates(points, values);
    let n = xs.len();
    let prior_mean = ys.iter().sum::<f64>() / n as f64;
    let sv = hyper.signal_variance.unwrap_or_else(|| {
        let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        if range > 0.0 {
            range * range
        } else {
            prior_mean.abs().max(1.0).powi(2)
        }
    });
    let ell = hyper.length_scale;
    let base: Vec<f64> = (0..n * n).map(|ij| sq_exp(xs[ij / n], xs[ij % n], ell, sv)).collect();
    let y: Vec<TwoFloat> = ys.iter().map(|&v| TwoFloat::from(v) - prior_mean).collect();

    let mut noise = hyper.noise * sv;
    let mut jitter = 1e-12 * sv;
    for _ in 0..10 {
        let mut k: Vec<TwoFloat> = base.iter().map(|&v| TwoFloat::from(v)).collect();
        for i in 0..n {
            k[i * n + i] += noise;
        }
        if let Some(chol) = cholesky(&k, n) {
            let alpha = back_substitute(&chol, n, forward_substitute(&chol, n, &y));
            return Ok(GPState {
                points: xs,
                values: ys,
                length_scale: ell,
                signal_variance: sv,
                noise_variance: noise,
                prior_mean,
                chol,
                alpha,
            });
        }
        noise += jitter;
        jitter *= 10.0;
    }
    Err(Error::NotPositiveDefinite)
}

fn cholesky(k: &[TwoFloat], n: usize) -> Option<Vec<TwoFloat>> {
    let mut l = vec![TwoFloat::from(0.0); n * n];
    for j in 0..n {
        let mut d = k[j * n + j];
        for c in 0..j {
            d -= l[j * n + c] * l[j * n + c];
        }
        if !(f64::from(d) > 0.0) {
            return None;
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in j + 1..n {
            let mut v = k[i * n + j];
            for c in 0..j {
                v -= l[i * n + c] * l[j * n + c];
            }
            l[i * n + j] = v / d;
        }
    }
    Some(l)
}

/// Solves `L z = b`.
fn forward_substitute(l: &[TwoFloat], n: usize, b: &[TwoFloat]) -> Vec<TwoFloat> {
    let mut z = b.to_vec();
    for i in 0..n {
        for c in 0..i {
            z[i] = z[i] - l[i * n + c] * z[c];
        }
        z[i] /= l[i * n + i];
    }
    z
}

/// Solves `L^T x = z`.
fn back_substitute(l: &[TwoFloat], n: usize, mut z: Vec<TwoFloat>) -> Vec<TwoFloat> {
    for i in (0..n).rev() {
        for r in i + 1..n {
            z[i] = z[i] - l[r * n + i] * z[r];
        }
        z[i] /= l[i * n + i];
    }
    z
}

impl GPState {
    fn cross(&self, x: f64) -> Vec<TwoFloat> {
        self.points
            .iter()
            .map(|&p| TwoFloat::from(sq_exp(x, p, self.length_scale, self.signal_variance)))
            .collect()
    }

    /// Posterior mean and variance of the latent function at `x`.
    pub fn predict(&self, x: f64) -> (f64, f64) {
        let n = self.points.len();
        let k = self.cross(x);
        let mut mean = TwoFloat::from(self.prior_mean);
        for (a, b) in k.iter().zip(&self.alpha) {
            mean += *a * *b;
        }
        let v = forward_substitute(&self.chol, n, &k);
        let mut explained = TwoFloat::from(0.0);
        for a in &v {
            explained += *a * *a;
        }
        let var = f64::from(TwoFloat::from(self.signal_variance) - explained).max(0.0);
        (f64::from(mean), var)
    }

    /// Smallest observed value.
    pub fn incumbent(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Expected improvement below `f_star` of a normal posterior `N(mu, sigma^2)`.
pub fn ei_closed_form(mu: f64, sigma: f64, f_star: f64) -> f64 {
    let diff = f_star - mu;
    if !(sigma > 0.0) {
        return diff.max(0.0);
    }
    let z = diff / sigma;
    let n = Normal::standard();
    (diff * n.cdf(z) + sigma * n.pdf(z)).max(0.0)
}

pub fn expected_improvement(gp: &GPState, p: f64) -> f64 {
    let (mu, var) = gp.predict(p);
    ei_closed_form(mu, var.sqrt(), gp.incumbent())
}
