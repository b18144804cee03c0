//! Bayesian optimization of the normalization percentile.

pub mod gp;
pub mod kl;
pub mod optimize;

pub use gp::{expected_improvement, gp_fit, ei_closed_form, GpHyper, GPState};
pub use kl::{kl_divergence, KL_EPSILON};
pub use optimize::{optimize_p, BoaAbort, BoaOptions, BoaOutcome, BoaRecord, KLObjective};
