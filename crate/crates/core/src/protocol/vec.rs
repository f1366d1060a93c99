//! Shuffle protocol built on fixed-point bit encoding with binomial noise.
//!
//! Each entry `x ∈ [-1, 1]` of a statistic is shifted to `w = x + 1 ∈ [0, 2]`
//! and encoded as a count of ones: `⌊wg⌋` plus a Bernoulli rounding bit plus
//! `Bin(b, p)` noise bits. Bits carry only their label, so the shuffler can
//! merge them into per-label totals. The analyzer removes the expected noise
//! and the shift.
//!
//! Messages are per-label counts rather than materialized bits; calibrated
//! `b` reaches tens of millions and the analyzer only ever reads label sums.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::engine::ShuffleProtocol;
use crate::error::{Error, Result};
use crate::model::GramMatrix;
use crate::rng::StreamRng;

/// Leading constant of the unique-user bit count.
pub const PAPER_CONSTANT: f64 = 24.0e4;
/// Leading constant of the returning-user bit count.
pub const PAPER_CONSTANT_RETURNING: f64 = 1.0e7;
/// Binomial success probability.
pub const NOISE_PROB: f64 = 0.25;

const MAX_EPSILON: f64 = 15.0;
const ENTRY_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VecParams {
    /// Encoding granularity.
    pub g: u64,
    /// Binomial trials per scalar.
    pub b: u64,
    pub p: f64,
    pub batch_size: usize,
    pub epsilon: f64,
    pub delta: f64,
    /// Leading constant used for `b`.
    pub constant: f64,
}

impl VecParams {
    /// Explicit parameters, for tests and small demonstrations.
    pub fn explicit(g: u64, b: u64, p: f64, batch_size: usize) -> Result<Self> {
        if g == 0 {
            return Err(Error::InvalidParameter("g must be >= 1".into()));
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidParameter(format!("p must lie in (0, 1), got {p}")));
        }
        Ok(Self {
            g,
            b,
            p,
            batch_size,
            epsilon: f64::NAN,
            delta: f64::NAN,
            constant: f64::NAN,
        })
    }

    /// Bits a single user sends per label.
    pub fn bits_per_user(&self) -> u64 {
        2 * self.g + self.b
    }

    /// Per-entry noise std bound of one analyzer output from `users` users.
    pub fn noise_std(&self, users: usize) -> f64 {
        let n = users as f64;
        (n / 4.0 + n * self.b as f64 / 4.0).sqrt() / self.g as f64
    }
}

fn check_range(epsilon: f64, delta: f64, batch_size: usize, d: usize) -> Result<()> {
    if !(epsilon > 0.0 && epsilon <= MAX_EPSILON) {
        return Err(Error::OutOfRange(format!("epsilon {epsilon} not in (0, {MAX_EPSILON}]")));
    }
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::OutOfRange(format!("delta {delta} not in (0, 1/2)")));
    }
    if batch_size == 0 || d == 0 {
        return Err(Error::InvalidParameter("batch size and dimension must be >= 1".into()));
    }
    Ok(())
}

fn check_constant(c: f64) -> Result<()> {
    if c > 0.0 && c.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("leading constant must be positive, got {c}")))
    }
}

/// `g = ⌈max{2√B, d, 4}⌉`.
pub fn granularity(batch_size: usize, d: usize) -> u64 {
    (2.0 * (batch_size as f64).sqrt()).max(d as f64).max(4.0).ceil() as u64
}

/// Unique-user calibration with the theoretical constant.
pub fn calibrate_vec(epsilon: f64, delta: f64, batch_size: usize, d: usize) -> Result<VecParams> {
    calibrate_vec_with_constant(epsilon, delta, batch_size, d, PAPER_CONSTANT)
}

/// `b = ⌈C g² log²(4(d²+1)/δ) / (ε² B)⌉`.
pub fn calibrate_vec_with_constant(
    epsilon: f64,
    delta: f64,
    batch_size: usize,
    d: usize,
    constant: f64,
) -> Result<VecParams> {
    check_range(epsilon, delta, batch_size, d)?;
    check_constant(constant)?;
    let g = granularity(batch_size, d);
    let dd = d as f64;
    let log = (4.0 * (dd * dd + 1.0) / delta).ln();
    let b = constant * (g * g) as f64 * log * log / (epsilon * epsilon * batch_size as f64);
    Ok(VecParams {
        g,
        b: b.ceil() as u64,
        p: NOISE_PROB,
        batch_size,
        epsilon,
        delta,
        constant,
    })
}

/// Returning-user calibration with the theoretical constant.
pub fn calibrate_vec_returning(
    epsilon: f64,
    delta: f64,
    batch_size: usize,
    horizon: usize,
    d: usize,
) -> Result<VecParams> {
    calibrate_vec_returning_with_constant(epsilon, delta, batch_size, horizon, d, PAPER_CONSTANT_RETURNING)
}

/// `b = ⌈C log(2/δ) g² T log²(8T(d²+1)/(Bδ)) / (ε² B²)⌉`.
pub fn calibrate_vec_returning_with_constant(
    epsilon: f64,
    delta: f64,
    batch_size: usize,
    horizon: usize,
    d: usize,
    constant: f64,
) -> Result<VecParams> {
    check_range(epsilon, delta, batch_size, d)?;
    check_constant(constant)?;
    if batch_size > horizon {
        return Err(Error::InvalidParameter(format!(
            "batch size {batch_size} exceeds horizon {horizon}"
        )));
    }
    let g = granularity(batch_size, d);
    let (bs, t, dd) = (batch_size as f64, horizon as f64, d as f64);
    let log = (8.0 * t * (dd * dd + 1.0) / (bs * delta)).ln();
    let b = constant * (2.0 / delta).ln() * (g * g) as f64 * t * log * log / (epsilon * epsilon * bs * bs);
    Ok(VecParams {
        g,
        b: b.ceil() as u64,
        p: NOISE_PROB,
        batch_size,
        epsilon,
        delta,
        constant,
    })
}

/// Which scalar a count belongs to: a vector coordinate or an upper-triangle
/// matrix entry `(i, j)` with `i ≤ j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Coord(usize),
    Pair(usize, usize),
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Coord(k) => write!(f, "{k}"),
            Label::Pair(i, j) => write!(f, "({i},{j})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabeledBitCount {
    pub label: Label,
    pub ones: u64,
    pub total_bits: u64,
}

fn sample_binomial(n: u64, p: f64, rng: &mut StreamRng) -> u64 {
    if n == 0 {
        return 0;
    }
    Binomial::new(n, p).expect("p checked at construction").sample(rng)
}

/// Encode one shifted scalar `x ∈ [0, 2]`.
pub fn scalar_randomize(x: f64, label: Label, params: &VecParams, rng: &mut StreamRng) -> Result<LabeledBitCount> {
    if !(-ENTRY_SLACK..=2.0 + ENTRY_SLACK).contains(&x) {
        return Err(Error::OutOfRange(format!("shifted entry {x} not in [0, 2]")));
    }
    let scaled = x.clamp(0.0, 2.0) * params.g as f64;
    let floor = scaled.floor();
    let frac = scaled - floor;
    let round_up = frac > 0.0 && rng.random::<f64>() < frac;
    let noise = sample_binomial(params.b, params.p, rng);
    Ok(LabeledBitCount {
        label,
        ones: floor as u64 + u64::from(round_up) + noise,
        total_bits: params.bits_per_user(),
    })
}

/// `(1/g)(Σ ones − p b n) − n` for a label merged over `users` users.
pub fn scalar_analyze(count: &LabeledBitCount, users: usize, params: &VecParams) -> Result<f64> {
    let per_user = params.bits_per_user();
    if count.total_bits != users as u64 * per_user {
        return Err(Error::UserCountMismatch {
            expected: users,
            actual: (count.total_bits / per_user) as usize,
        });
    }
    let n = users as f64;
    Ok((count.ones as f64 - params.p * params.b as f64 * n) / params.g as f64 - n)
}

fn shift(x: f64) -> Result<f64> {
    if x.abs() > 1.0 + ENTRY_SLACK {
        return Err(Error::OutOfRange(format!("statistic entry {x} not in [-1, 1]")));
    }
    Ok(x + 1.0)
}

/// One user's encoded statistic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VecMessage {
    pub counts: Vec<LabeledBitCount>,
}

/// One count per coordinate.
pub fn randomize_vector_vec(x: &DVector<f64>, params: &VecParams, rng: &mut StreamRng) -> Result<VecMessage> {
    let counts = x
        .iter()
        .enumerate()
        .map(|(k, &v)| scalar_randomize(shift(v)?, Label::Coord(k), params, rng))
        .collect::<Result<_>>()?;
    Ok(VecMessage { counts })
}

/// One count per upper-triangle entry, row by row.
pub fn randomize_matrix_vec(x: &GramMatrix, params: &VecParams, rng: &mut StreamRng) -> Result<VecMessage> {
    let m = x.as_matrix();
    let d = x.dim();
    let mut counts = Vec::with_capacity(d * (d + 1) / 2);
    for i in 0..d {
        for j in i..d {
            counts.push(scalar_randomize(shift(m[(i, j)])?, Label::Pair(i, j), params, rng)?);
        }
    }
    Ok(VecMessage { counts })
}

/// Per-label totals after shuffling, with the number of contributing users.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergedCounts {
    pub users: usize,
    pub counts: BTreeMap<Label, LabeledBitCount>,
}

impl MergedCounts {
    fn get(&self, label: Label) -> Result<&LabeledBitCount> {
        self.counts.get(&label).ok_or_else(|| Error::MissingLabel(label.to_string()))
    }
}

/// Permute the batch and regroup its bits by label. Bits with one label are
/// exchangeable, so the regrouped view is fully described by per-label sums.
pub fn shuffle_vec(mut batch: Vec<VecMessage>, rng: &mut StreamRng) -> Result<MergedCounts> {
    if batch.is_empty() {
        return Err(Error::Empty("message batch"));
    }
    batch.shuffle(rng);
    let users = batch.len();
    let mut per_user_bits: BTreeMap<Label, u64> = BTreeMap::new();
    let mut counts: BTreeMap<Label, LabeledBitCount> = BTreeMap::new();
    for msg in &batch {
        for c in &msg.counts {
            let expected = *per_user_bits.entry(c.label).or_insert(c.total_bits);
            if c.total_bits != expected {
                return Err(Error::InvalidParameter(format!(
                    "label {} has inconsistent bit totals {} and {}",
                    c.label, expected, c.total_bits
                )));
            }
            let slot = counts.entry(c.label).or_insert(LabeledBitCount {
                label: c.label,
                ones: 0,
                total_bits: 0,
            });
            slot.ones += c.ones;
            slot.total_bits += c.total_bits;
        }
    }
    Ok(MergedCounts { users, counts })
}

pub fn analyze_vector_vec(merged: &MergedCounts, d: usize, params: &VecParams) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(d);
    for k in 0..d {
        out[k] = scalar_analyze(merged.get(Label::Coord(k))?, merged.users, params)?;
    }
    Ok(out)
}

pub fn analyze_matrix_vec(merged: &MergedCounts, d: usize, params: &VecParams) -> Result<GramMatrix> {
    let mut m = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            m[(i, j)] = scalar_analyze(merged.get(Label::Pair(i, j))?, merged.users, params)?;
        }
    }
    GramMatrix::from_upper(m)
}

fn vector_dim(merged: &MergedCounts) -> usize {
    merged.counts.keys().filter(|l| matches!(l, Label::Coord(_))).count()
}

fn matrix_dim(merged: &MergedCounts) -> Result<usize> {
    let pairs = merged.counts.keys().filter(|l| matches!(l, Label::Pair(..))).count();
    let d = ((((8 * pairs + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    if d * (d + 1) / 2 != pairs {
        return Err(Error::MissingLabel(format!("{pairs} pair labels do not form a triangle")));
    }
    Ok(d)
}

#[derive(Debug, Clone, Copy)]
pub struct VecProtocol {
    pub params: VecParams,
}

impl VecProtocol {
    pub fn new(params: VecParams) -> Self {
        Self { params }
    }
}

impl ShuffleProtocol for VecProtocol {
    type VectorMessage = VecMessage;
    type MatrixMessage = VecMessage;
    type ShuffledVectors = MergedCounts;
    type ShuffledMatrices = MergedCounts;

    fn randomize_vector(&self, x: &DVector<f64>, rng: &mut StreamRng) -> Result<VecMessage> {
        randomize_vector_vec(x, &self.params, rng)
    }

    fn randomize_matrix(&self, x: &GramMatrix, rng: &mut StreamRng) -> Result<VecMessage> {
        randomize_matrix_vec(x, &self.params, rng)
    }

    fn shuffle_vectors(&self, batch: Vec<VecMessage>, rng: &mut StreamRng) -> Result<MergedCounts> {
        shuffle_vec(batch, rng)
    }

    fn shuffle_matrices(&self, batch: Vec<VecMessage>, rng: &mut StreamRng) -> Result<MergedCounts> {
        shuffle_vec(batch, rng)
    }

    fn analyze_vectors(&mut self, shuffled: MergedCounts, _: &mut StreamRng) -> Result<DVector<f64>> {
        analyze_vector_vec(&shuffled, vector_dim(&shuffled), &self.params)
    }

    fn analyze_matrices(&mut self, shuffled: MergedCounts, _: &mut StreamRng) -> Result<GramMatrix> {
        let d = matrix_dim(&shuffled)?;
        analyze_matrix_vec(&shuffled, d, &self.params)
    }

    /// `√M · noise_std(B)` with `M = ⌈T/B⌉` batches.
    fn sigma_total(&self, horizon: usize, batch_size: usize) -> f64 {
        let m = horizon.div_ceil(batch_size) as f64;
        m.sqrt() * self.params.noise_std(batch_size)
    }
}
