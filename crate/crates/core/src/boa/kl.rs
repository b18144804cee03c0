use crate::error::{Error, Result};

/// Smoothing added to every entry before normalization.
pub const KL_EPSILON: f64 = 1e-8;

fn to_distribution(v: &[f64]) -> Result<Vec<f64>> {
    let clamped: Vec<f64> = v.iter().map(|&x| x.max(0.0)).collect();
    if clamped.iter().all(|&x| x == 0.0) {
        return Err(Error::ZeroDistribution);
    }
    let total: f64 = clamped.iter().map(|x| x + KL_EPSILON).sum();
    Ok(clamped.into_iter().map(|x| (x + KL_EPSILON) / total).collect())
}

/// `KL(r || o)` after clamping both vectors at zero, adding
/// [`KL_EPSILON`] and normalizing each to sum one. Natural log.
pub fn kl_divergence(r: &[f64], o: &[f64]) -> Result<f64> {
    if r.len() != o.len() {
        return Err(Error::InvalidTensor(format!(
            "KL over vectors of length {} and {}",
            r.len(),
            o.len()
        )));
    }
    if r.iter().chain(o).any(|v| !v.is_finite()) {
        return Err(Error::InvalidTensor("KL over non-finite values".into()));
    }
    let p = to_distribution(r)?;
    let q = to_distribution(o)?;
    let kl: f64 = p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum();
    Ok(kl.max(0.0))
}
