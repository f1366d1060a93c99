//! Local-model baseline: every message is an `(ε₀, δ₀)`-LDP Gaussian report
//! and the server sees them as sent.

use super::amp::{calibrate_amp_ldp_targeted, GaussianProtocol};
use crate::error::Result;

/// Gaussian randomizer with `σ = 4√(2 log(2.5/δ₀))/ε₀` behind an identity
/// shuffler. `B = 1` is the sequential local model.
pub fn make_local_protocol(epsilon0: f64, delta0: f64, batch_size: usize) -> Result<GaussianProtocol> {
    Ok(GaussianProtocol::local(calibrate_amp_ldp_targeted(epsilon0, delta0, batch_size)?))
}
