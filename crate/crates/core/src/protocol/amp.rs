//! Shuffle protocol built on amplification of a local Gaussian mechanism.
//!
//! Each user perturbs `φ y` with iid Gaussian noise and the upper triangle of
//! `φ φᵀ` with iid Gaussian noise (mirrored below). The shuffler applies a
//! uniform permutation and the analyzer sums. Summation commutes with the
//! permutation, so utility does not depend on the shuffle; privacy accounting
//! does.

use log::warn;
use nalgebra::DVector;
use rand::seq::SliceRandom;

use super::{gaussian_vector, symmetric_gaussian};
use crate::engine::{sum_matrices, sum_vectors, ShuffleProtocol};
use crate::error::{Error, Result};
use crate::model::GramMatrix;
use crate::rng::StreamRng;

const UNIT_SLACK: f64 = 1e-9;

/// Which calibration produced a noise level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AmpCalibration {
    /// SDP target, every user appears in one batch.
    UniqueUsers,
    /// SDP target composed over all batches of a horizon.
    ReturningUsers { horizon: usize },
    /// LDP target `(ε₀, δ₀)`; the noise does not depend on `B`.
    LdpTargeted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmpNoiseSpec {
    /// Noise std on matrix entries.
    pub sigma1: f64,
    /// Noise std on vector entries.
    pub sigma2: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub batch_size: usize,
    pub calibration: AmpCalibration,
    /// Whether `epsilon` lies in the range where the amplification bound
    /// yields `O(ε, δ)` shuffle privacy.
    pub in_range: bool,
}

impl AmpNoiseSpec {
    /// Noiseless spec; handy for tests and debugging.
    pub fn noiseless(batch_size: usize) -> Self {
        Self {
            sigma1: 0.0,
            sigma2: 0.0,
            epsilon: f64::INFINITY,
            delta: 1.0,
            batch_size,
            calibration: AmpCalibration::UniqueUsers,
            in_range: false,
        }
    }

    /// Spec with a fixed noise level on both channels.
    pub fn with_sigma(sigma: f64, batch_size: usize) -> Self {
        Self {
            sigma1: sigma,
            sigma2: sigma,
            ..Self::noiseless(batch_size)
        }
    }
}

fn check_budget(epsilon: f64, delta: f64, batch_size: usize) -> Result<()> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidParameter(format!("epsilon must be > 0, got {epsilon}")));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidParameter(format!("delta must be in (0, 1], got {delta}")));
    }
    if batch_size == 0 {
        return Err(Error::InvalidParameter("batch size must be >= 1".into()));
    }
    Ok(())
}

/// `σ₁ = σ₂ = 4√(2 log(2.5B/δ) log(2/δ)) / (ε√B)`.
///
/// Warns (but succeeds) when `ε > √(log(2/δ)/B)`, where the bound only holds
/// asymptotically.
pub fn calibrate_amp(epsilon: f64, delta: f64, batch_size: usize) -> Result<AmpNoiseSpec> {
    check_budget(epsilon, delta, batch_size)?;
    let b = batch_size as f64;
    let sigma = 4.0 * (2.0 * (2.5 * b / delta).ln() * (2.0 / delta).ln()).sqrt() / (epsilon * b.sqrt());
    let limit = ((2.0 / delta).ln() / b).sqrt();
    let in_range = epsilon <= limit;
    if !in_range {
        warn!("epsilon {epsilon} exceeds {limit:.4}; shuffle amplification guarantee is asymptotic only");
    }
    Ok(AmpNoiseSpec {
        sigma1: sigma,
        sigma2: sigma,
        epsilon,
        delta,
        batch_size,
        calibration: AmpCalibration::UniqueUsers,
        in_range,
    })
}

/// `σ₁ = σ₂ = 16 log(2/δ) √(T log(5T/δ)) / (εB)` for users who may return in
/// every batch.
pub fn calibrate_amp_returning(
    epsilon: f64,
    delta: f64,
    batch_size: usize,
    horizon: usize,
) -> Result<AmpNoiseSpec> {
    check_budget(epsilon, delta, batch_size)?;
    if batch_size > horizon {
        return Err(Error::InvalidParameter(format!(
            "batch size {batch_size} exceeds horizon {horizon}"
        )));
    }
    let (b, t) = (batch_size as f64, horizon as f64);
    let log2d = (2.0 / delta).ln();
    let sigma = 16.0 * log2d * (t * (5.0 * t / delta).ln()).sqrt() / (epsilon * b);
    let limit = 2.0 / b * log2d * (2.0 * t).sqrt();
    let in_range = epsilon <= limit;
    if !in_range {
        warn!("epsilon {epsilon} exceeds {limit:.4}; returning-user guarantee is asymptotic only");
    }
    Ok(AmpNoiseSpec {
        sigma1: sigma,
        sigma2: sigma,
        epsilon,
        delta,
        batch_size,
        calibration: AmpCalibration::ReturningUsers { horizon },
        in_range,
    })
}

/// Gaussian mechanism noise for an `(ε₀, δ₀)`-LDP randomizer:
/// `4√(2 log(2.5/δ₀)) / ε₀`.
pub fn gaussian_ldp_sigma(epsilon0: f64, delta0: f64) -> Result<f64> {
    check_budget(epsilon0, delta0, 1)?;
    Ok(4.0 * (2.0 * (2.5 / delta0).ln()).sqrt() / epsilon0)
}

/// LDP-targeted calibration: the local randomizer alone is `(ε₀, δ₀)`-LDP and
/// the noise is independent of `B`.
pub fn calibrate_amp_ldp_targeted(epsilon0: f64, delta0: f64, batch_size: usize) -> Result<AmpNoiseSpec> {
    check_budget(epsilon0, delta0, batch_size)?;
    let sigma = gaussian_ldp_sigma(epsilon0, delta0)?;
    Ok(AmpNoiseSpec {
        sigma1: sigma,
        sigma2: sigma,
        epsilon: epsilon0,
        delta: delta0,
        batch_size,
        calibration: AmpCalibration::LdpTargeted,
        in_range: epsilon0 <= 1.0,
    })
}

/// A randomized statistic; after shuffling nothing ties it to its sender.
#[derive(Debug, Clone, PartialEq)]
pub struct AmpMessage<P> {
    pub payload: P,
}

/// `x + N(0, σ₂² I)`.
pub fn randomize_vector_amp(
    x: &DVector<f64>,
    spec: &AmpNoiseSpec,
    rng: &mut StreamRng,
) -> Result<AmpMessage<DVector<f64>>> {
    let norm = x.norm();
    if norm > 1.0 + UNIT_SLACK {
        return Err(Error::InvalidParameter(format!("statistic norm {norm} exceeds 1")));
    }
    let payload = if spec.sigma2 > 0.0 {
        x + gaussian_vector(x.len(), spec.sigma2, rng)
    } else {
        x.clone()
    };
    Ok(AmpMessage { payload })
}

/// `X + N` with `N` symmetric and iid `N(0, σ₁²)` on and above the diagonal.
pub fn randomize_matrix_amp(
    x: &GramMatrix,
    spec: &AmpNoiseSpec,
    rng: &mut StreamRng,
) -> Result<AmpMessage<GramMatrix>> {
    let trace = x.trace();
    if trace > 1.0 + UNIT_SLACK {
        return Err(Error::InvalidParameter(format!("statistic trace {trace} exceeds 1")));
    }
    let payload = if spec.sigma1 > 0.0 {
        x.add(&symmetric_gaussian(x.dim(), spec.sigma1, rng))?
    } else {
        x.clone()
    };
    Ok(AmpMessage { payload })
}

/// Uniformly random permutation of the batch (Fisher-Yates).
pub fn shuffle_amp<T>(mut batch: Vec<T>, rng: &mut StreamRng) -> Result<Vec<T>> {
    if batch.is_empty() {
        return Err(Error::Empty("message batch"));
    }
    batch.shuffle(rng);
    Ok(batch)
}

pub fn analyze_amp_vectors(messages: &[AmpMessage<DVector<f64>>]) -> Result<DVector<f64>> {
    let payloads: Vec<_> = messages.iter().map(|m| m.payload.clone()).collect();
    sum_vectors(&payloads)
}

pub fn analyze_amp_matrices(messages: &[AmpMessage<GramMatrix>]) -> Result<GramMatrix> {
    let payloads: Vec<_> = messages.iter().map(|m| m.payload.clone()).collect();
    sum_matrices(&payloads)
}

/// How a Gaussian-randomizer protocol forwards messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shuffler {
    /// Uniform permutation (shuffle model).
    Uniform,
    /// Messages are forwarded as sent (local model).
    Identity,
}

/// Gaussian local randomizer with a summing analyzer. With
/// [`Shuffler::Uniform`] this is the amplification shuffle protocol; with
/// [`Shuffler::Identity`] it is the batched local-model baseline.
#[derive(Debug, Clone, Copy)]
pub struct GaussianProtocol {
    pub spec: AmpNoiseSpec,
    pub shuffler: Shuffler,
}

impl GaussianProtocol {
    pub fn shuffled(spec: AmpNoiseSpec) -> Self {
        Self {
            spec,
            shuffler: Shuffler::Uniform,
        }
    }

    pub fn local(spec: AmpNoiseSpec) -> Self {
        Self {
            spec,
            shuffler: Shuffler::Identity,
        }
    }

    fn forward<T>(&self, batch: Vec<T>, rng: &mut StreamRng) -> Result<Vec<T>> {
        match self.shuffler {
            Shuffler::Uniform => shuffle_amp(batch, rng),
            Shuffler::Identity if batch.is_empty() => Err(Error::Empty("message batch")),
            Shuffler::Identity => Ok(batch),
        }
    }
}

impl ShuffleProtocol for GaussianProtocol {
    type VectorMessage = AmpMessage<DVector<f64>>;
    type MatrixMessage = AmpMessage<GramMatrix>;
    type ShuffledVectors = Vec<AmpMessage<DVector<f64>>>;
    type ShuffledMatrices = Vec<AmpMessage<GramMatrix>>;

    fn randomize_vector(&self, x: &DVector<f64>, rng: &mut StreamRng) -> Result<Self::VectorMessage> {
        randomize_vector_amp(x, &self.spec, rng)
    }

    fn randomize_matrix(&self, x: &GramMatrix, rng: &mut StreamRng) -> Result<Self::MatrixMessage> {
        randomize_matrix_amp(x, &self.spec, rng)
    }

    fn shuffle_vectors(&self, batch: Vec<Self::VectorMessage>, rng: &mut StreamRng) -> Result<Self::ShuffledVectors> {
        self.forward(batch, rng)
    }

    fn shuffle_matrices(&self, batch: Vec<Self::MatrixMessage>, rng: &mut StreamRng) -> Result<Self::ShuffledMatrices> {
        self.forward(batch, rng)
    }

    fn analyze_vectors(&mut self, shuffled: Self::ShuffledVectors, _: &mut StreamRng) -> Result<DVector<f64>> {
        analyze_amp_vectors(&shuffled)
    }

    fn analyze_matrices(&mut self, shuffled: Self::ShuffledMatrices, _: &mut StreamRng) -> Result<GramMatrix> {
        analyze_amp_matrices(&shuffled)
    }

    /// One noise draw per round: `σ √T`.
    fn sigma_total(&self, horizon: usize, _: usize) -> f64 {
        self.spec.sigma1.max(self.spec.sigma2) * (horizon as f64).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FeatureVector;
    use crate::rng::{stream, Purpose};
    use std::collections::HashMap;

    fn rng(seed: u64) -> StreamRng {
        stream(seed, 77, Purpose::PrivacyNoise)
    }

    fn oracle_amp_sigma(eps: f64, delta: f64, b: f64) -> f64 {
        // Composes the two steps of the calibration separately: local budget
        // ε₀ = ε√B/√log(2/δ), δ₀ = δ/B, then the Gaussian mechanism for it.
        let eps0 = eps * b.sqrt() / (2.0 / delta).ln().sqrt();
        let delta0 = delta / b;
        4.0 * (2.0 * (2.5 / delta0).ln()).sqrt() / eps0
    }

    #[test]
    fn calibrate_amp_reference_value() {
        let spec = calibrate_amp(0.2, 0.1, 20).unwrap();
        assert!((spec.sigma1 - 27.29).abs() < 0.01, "{}", spec.sigma1);
        assert!((spec.sigma1 - oracle_amp_sigma(0.2, 0.1, 20.0)).abs() < 1e-9);
        assert_eq!(spec.sigma1, spec.sigma2);
        assert!(spec.in_range);
    }

    #[test]
    fn calibrate_amp_decreases_in_batch_size() {
        let mut prev = f64::INFINITY;
        for b in 1..=10_000 {
            let s = calibrate_amp(1.0, 0.1, b).unwrap().sigma1;
            assert!(s < prev, "B={b}");
            prev = s;
        }
    }

    #[test]
    fn calibrate_amp_scales_inverse_epsilon() {
        let a = calibrate_amp(0.5, 0.05, 30).unwrap().sigma1;
        let b = calibrate_amp(1.0, 0.05, 30).unwrap().sigma1;
        assert!((a / 2.0 - b).abs() < 1e-12 * a);
    }

    #[test]
    fn calibrate_amp_range_flag() {
        // √(ln 20 / 20) ≈ 0.387
        assert!(calibrate_amp(0.38, 0.1, 20).unwrap().in_range);
        assert!(!calibrate_amp(0.39, 0.1, 20).unwrap().in_range);
    }

    #[test]
    fn calibrate_amp_rejects_bad_budget() {
        assert!(calibrate_amp(0.0, 0.1, 20).is_err());
        assert!(calibrate_amp(1.0, 0.0, 20).is_err());
        assert!(calibrate_amp(1.0, 1.5, 20).is_err());
        assert!(calibrate_amp(1.0, 0.1, 0).is_err());
    }

    #[test]
    fn calibrate_amp_returning_reference_value() {
        let s = calibrate_amp_returning(1.0, 0.1, 100, 1000).unwrap().sigma1;
        assert!((s - 49.86).abs() < 0.01, "{s}");
        let direct = 16.0 * 20f64.ln() * (1000.0 * 50_000f64.ln()).sqrt() / 100.0;
        assert!((s - direct).abs() < 1e-9);
    }

    #[test]
    fn returning_noise_dominates_unique() {
        for &eps in &[0.2, 1.0, 10.0] {
            for &delta in &[0.01, 0.1, 0.5] {
                for &b in &[1usize, 5, 20, 100] {
                    for &t in &[b, 2 * b, 1000, 20_000] {
                        let r = calibrate_amp_returning(eps, delta, b, t.max(b)).unwrap().sigma1;
                        let u = calibrate_amp(eps, delta, b).unwrap().sigma1;
                        assert!(r >= u, "eps={eps} delta={delta} B={b} T={t}: {r} < {u}");
                    }
                }
            }
        }
    }

    #[test]
    fn returning_noise_scales_inverse_batch() {
        let a = calibrate_amp_returning(1.0, 0.1, 10, 1000).unwrap().sigma1;
        let b = calibrate_amp_returning(1.0, 0.1, 20, 1000).unwrap().sigma1;
        assert!((a / 2.0 - b).abs() < 1e-12 * a);
    }

    #[test]
    fn ldp_targeted_ignores_batch_size() {
        let a = calibrate_amp_ldp_targeted(1.0, 0.1, 1).unwrap();
        let b = calibrate_amp_ldp_targeted(1.0, 0.1, 500).unwrap();
        assert_eq!(a.sigma1, b.sigma1);
        assert!((a.sigma1 - 10.149).abs() < 1e-3);
    }

    #[test]
    fn zero_noise_is_identity() {
        let spec = AmpNoiseSpec::noiseless(1);
        let x = DVector::from_vec(vec![0.3, -0.4]);
        assert_eq!(randomize_vector_amp(&x, &spec, &mut rng(1)).unwrap().payload, x);
        let m = FeatureVector::new(vec![0.6, 0.8]).unwrap().outer();
        assert_eq!(randomize_matrix_amp(&m, &spec, &mut rng(1)).unwrap().payload, m);
    }

    #[test]
    fn randomizers_reject_out_of_range_inputs() {
        let spec = AmpNoiseSpec::with_sigma(1.0, 1);
        let x = DVector::from_vec(vec![1.0, 1.0]);
        assert!(randomize_vector_amp(&x, &spec, &mut rng(1)).is_err());
        let big = GramMatrix::scaled_identity(2, 1.0);
        assert!(randomize_matrix_amp(&big, &spec, &mut rng(1)).is_err());
    }

    #[test]
    fn vector_noise_moments() {
        let sigma = 2.0;
        let spec = AmpNoiseSpec::with_sigma(sigma, 1);
        let x = DVector::from_vec(vec![0.5, -0.5, 0.0]);
        let n = 100_000;
        let mut r = rng(2);
        let mut sum = DVector::zeros(3);
        let mut sq = DVector::zeros(3);
        for _ in 0..n {
            let p = randomize_vector_amp(&x, &spec, &mut r).unwrap().payload - &x;
            sq += p.component_mul(&p);
            sum += p;
        }
        for k in 0..3 {
            let mean = sum[k] / n as f64;
            assert!(mean.abs() < 4.0 * sigma / (n as f64).sqrt(), "mean {mean}");
            let var = sq[k] / n as f64 - mean * mean;
            assert!((var / (sigma * sigma) - 1.0).abs() < 0.05, "var {var}");
        }
    }

    #[test]
    fn matrix_noise_is_exactly_symmetric() {
        let spec = AmpNoiseSpec::with_sigma(3.0, 1);
        let m = FeatureVector::new(vec![0.6, 0.0, 0.8]).unwrap().outer();
        let mut r = rng(3);
        for _ in 0..1000 {
            let p = randomize_matrix_amp(&m, &spec, &mut r).unwrap().payload;
            let p = p.as_matrix();
            assert_eq!(p - p.transpose(), nalgebra::DMatrix::zeros(3, 3));
            assert_eq!(p[(0, 1)].to_bits(), p[(1, 0)].to_bits());
        }
    }

    #[test]
    fn shuffle_single_and_multiset() {
        assert_eq!(shuffle_amp(vec![7], &mut rng(4)).unwrap(), vec![7]);
        let items: Vec<u32> = (0..50).collect();
        let mut out = shuffle_amp(items.clone(), &mut rng(4)).unwrap();
        out.sort_unstable();
        assert_eq!(out, items);
        assert!(shuffle_amp(Vec::<u8>::new(), &mut rng(4)).is_err());
    }

    #[test]
    fn shuffle_is_uniform_over_orders() {
        let n = 100_000;
        let mut r = rng(5);
        let mut counts: HashMap<Vec<u8>, usize> = HashMap::new();
        for _ in 0..n {
            *counts.entry(shuffle_amp(vec![0u8, 1, 2], &mut r).unwrap()).or_default() += 1;
        }
        assert_eq!(counts.len(), 6);
        let expected = n as f64 / 6.0;
        let chi2: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 5 degrees of freedom, 0.999 quantile ≈ 20.5.
        assert!(chi2 < 20.5, "chi2 {chi2}");
        for &c in counts.values() {
            assert!((c as f64 / n as f64 - 1.0 / 6.0).abs() < 0.01);
        }
    }

    #[test]
    fn analyzer_sums() {
        let x = DVector::from_vec(vec![0.25, -0.5]);
        let one = [AmpMessage { payload: x.clone() }];
        assert_eq!(analyze_amp_vectors(&one).unwrap(), x);
        let pair = [AmpMessage { payload: x.clone() }, AmpMessage { payload: -x.clone() }];
        assert_eq!(analyze_amp_vectors(&pair).unwrap(), DVector::zeros(2));
        let mismatched = [
            AmpMessage { payload: x.clone() },
            AmpMessage { payload: DVector::zeros(3) },
        ];
        assert!(analyze_amp_vectors(&mismatched).is_err());
    }

    #[test]
    fn noiseless_batch_sum_matches_direct_sum() {
        let spec = AmpNoiseSpec::noiseless(20);
        let mut r = rng(6);
        let features: Vec<FeatureVector> = (0..20)
            .map(|i| {
                let a = i as f64 * 0.3;
                FeatureVector::new(vec![a.cos() * 0.6, a.sin() * 0.6, 0.8]).unwrap()
            })
            .collect();
        let msgs: Vec<_> = features
            .iter()
            .map(|f| randomize_matrix_amp(&f.outer(), &spec, &mut r).unwrap())
            .collect();
        let shuffled = shuffle_amp(msgs, &mut r).unwrap();
        let got = analyze_amp_matrices(&shuffled).unwrap();
        let mut direct = nalgebra::DMatrix::<f64>::zeros(3, 3);
        for f in &features {
            direct += f.as_vector() * f.as_vector().transpose();
        }
        assert!((got.as_matrix() - direct).amax() < 1e-12);
    }
}
