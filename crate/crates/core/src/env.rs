//! Synthetic linear contextual bandit with Bernoulli rewards.
//!
//! Parameters and arm features are built the same way: a uniformly random
//! direction in `d - 1` dimensions scaled to norm `1/√2`, followed by a fixed
//! last entry `1/√2`. Every vector therefore has unit norm and every mean
//! reward `⟨θ*, φ⟩` lies in `[0, 1]`.

use std::f64::consts::FRAC_1_SQRT_2;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::FeatureVector;
use crate::rng::{instance_stream, StreamRng};

const MEAN_SLACK: f64 = 1e-9;

fn half_sphere_point<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    let mut v: Vec<f64> = loop {
        let draw: Vec<f64> = (0..d - 1).map(|_| rng.sample(StandardNormal)).collect();
        if draw.iter().any(|x: &f64| *x != 0.0) {
            break draw;
        }
    };
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut v {
        *x *= FRAC_1_SQRT_2 / norm;
    }
    v.push(FRAC_1_SQRT_2);
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct BanditInstance {
    theta_star: Vec<f64>,
    dim: usize,
    num_arms: usize,
    seed: u64,
}

/// Draws `θ*` for an instance of dimension `d` with `num_arms` arms per round.
pub fn generate_instance(d: usize, num_arms: usize, seed: u64) -> Result<BanditInstance> {
    if d < 2 {
        return Err(Error::InvalidDimension(d));
    }
    if num_arms < 2 {
        return Err(Error::InvalidParameter(format!(
            "at least 2 arms required, got {num_arms}"
        )));
    }
    let mut rng = instance_stream(seed);
    Ok(BanditInstance {
        theta_star: half_sphere_point(d, &mut rng),
        dim: d,
        num_arms,
        seed,
    })
}

impl BanditInstance {
    pub fn theta_star(&self) -> &[f64] {
        &self.theta_star
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_arms(&self) -> usize {
        self.num_arms
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mean_reward(&self, phi: &FeatureVector) -> f64 {
        phi.dot(&self.theta_star)
    }
}

/// The `K` feature vectors offered in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextArmSet {
    arms: Vec<FeatureVector>,
}

impl ContextArmSet {
    pub fn new(arms: Vec<FeatureVector>) -> Result<Self> {
        if arms.is_empty() {
            return Err(Error::Empty("arm set"));
        }
        let d = arms[0].dim();
        if let Some(bad) = arms.iter().find(|a| a.dim() != d) {
            return Err(crate::error::shape_err(d, bad.dim()));
        }
        Ok(Self { arms })
    }

    pub fn arms(&self) -> &[FeatureVector] {
        &self.arms
    }

    pub fn len(&self) -> usize {
        self.arms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arms.is_empty()
    }

    pub fn get(&self, index: usize) -> Result<&FeatureVector> {
        self.arms.get(index).ok_or(Error::IndexOutOfRange {
            index,
            len: self.arms.len(),
        })
    }
}

/// Draws a fresh arm set for `round` (1-based).
pub fn sample_context(
    instance: &BanditInstance,
    round: usize,
    rng: &mut StreamRng,
) -> Result<ContextArmSet> {
    if round == 0 {
        return Err(Error::InvalidParameter("rounds are numbered from 1".into()));
    }
    let arms = (0..instance.num_arms)
        .map(|_| FeatureVector::new(half_sphere_point(instance.dim, rng)))
        .collect::<Result<Vec<_>>>()?;
    ContextArmSet::new(arms)
}

/// How arm sets evolve over an episode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContextMode {
    /// New arms every round.
    #[default]
    Resampled,
    /// One arm set drawn at the start of the episode and reused (debugging aid).
    Fixed,
}

/// Produces the arm set for each round according to a [`ContextMode`].
#[derive(Debug)]
pub struct ContextSampler<'a> {
    instance: &'a BanditInstance,
    mode: ContextMode,
    fixed: Option<ContextArmSet>,
}

impl<'a> ContextSampler<'a> {
    pub fn new(instance: &'a BanditInstance, mode: ContextMode) -> Self {
        Self {
            instance,
            mode,
            fixed: None,
        }
    }

    pub fn next(&mut self, round: usize, rng: &mut StreamRng) -> Result<ContextArmSet> {
        match self.mode {
            ContextMode::Resampled => sample_context(self.instance, round, rng),
            ContextMode::Fixed => {
                if self.fixed.is_none() {
                    self.fixed = Some(sample_context(self.instance, round.max(1), rng)?);
                }
                Ok(self.fixed.clone().expect("initialized above"))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RewardSample(bool);

impl RewardSample {
    pub fn value(self) -> f64 {
        if self.0 {
            1.0
        } else {
            0.0
        }
    }
}

/// Bernoulli reward with mean `⟨θ*, φ⟩`.
pub fn sample_reward(
    instance: &BanditInstance,
    phi: &FeatureVector,
    rng: &mut StreamRng,
) -> Result<RewardSample> {
    if phi.dim() != instance.dim {
        return Err(crate::error::shape_err(instance.dim, phi.dim()));
    }
    let mean = instance.mean_reward(phi);
    bernoulli(mean, rng)
}

pub(crate) fn bernoulli(mean: f64, rng: &mut StreamRng) -> Result<RewardSample> {
    if !(mean >= -MEAN_SLACK && mean <= 1.0 + MEAN_SLACK) {
        return Err(Error::InvalidMean(mean));
    }
    let u: f64 = rng.random();
    Ok(RewardSample(u < mean.clamp(0.0, 1.0)))
}

/// Gap between the best arm's mean reward and the chosen arm's.
pub fn instant_regret(
    instance: &BanditInstance,
    context: &ContextArmSet,
    chosen: usize,
) -> Result<f64> {
    let chosen_mean = instance.mean_reward(context.get(chosen)?);
    let best = context
        .arms()
        .iter()
        .map(|a| instance.mean_reward(a))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((best - chosen_mean).max(0.0))
}

/// Cumulative pseudo-regret, one entry per round.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegretTrace {
    cumulative: Vec<f64>,
}

impl RegretTrace {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            cumulative: Vec::with_capacity(n),
        }
    }

    pub fn push(&mut self, instant: f64) {
        debug_assert!(instant >= 0.0);
        let last = self.cumulative.last().copied().unwrap_or(0.0);
        self.cumulative.push(last + instant.max(0.0));
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn len(&self) -> usize {
        self.cumulative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cumulative.is_empty()
    }

    pub fn final_regret(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::dot;
    use crate::rng::{stream, Purpose};

    #[test]
    fn instance_has_unit_norm_and_fixed_tail() {
        for seed in 0..20 {
            let inst = generate_instance(5, 10, seed).unwrap();
            let norm = dot(inst.theta_star(), inst.theta_star()).sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
        let inst = generate_instance(5, 10, 42).unwrap();
        assert_eq!(inst.theta_star()[4], FRAC_1_SQRT_2);
        assert!((inst.theta_star()[4] - 0.70711).abs() < 1e-5);
    }

    #[test]
    fn instance_is_deterministic() {
        let a = generate_instance(6, 3, 17).unwrap();
        let b = generate_instance(6, 3, 17).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_instance(6, 3, 18).unwrap());
    }

    #[test]
    fn instance_rejects_small_dimension() {
        assert!(matches!(generate_instance(1, 4, 0), Err(Error::InvalidDimension(1))));
        assert!(generate_instance(3, 1, 0).is_err());
    }

    #[test]
    fn contexts_have_unit_arms_and_bounded_means() {
        let inst = generate_instance(5, 100, 3).unwrap();
        let mut rng = stream(3, 1, Purpose::Context);
        for round in 1..=50 {
            let ctx = sample_context(&inst, round, &mut rng).unwrap();
            assert_eq!(ctx.len(), 100);
            for arm in ctx.arms() {
                let norm = arm.as_vector().norm();
                assert!((norm - 1.0).abs() < 1e-12);
                let mean = inst.mean_reward(arm);
                assert!((-1e-12..=1.0 + 1e-12).contains(&mean));
            }
        }
    }

    #[test]
    fn fixed_mode_repeats_arms() {
        let inst = generate_instance(4, 5, 1).unwrap();
        let mut rng = stream(1, 1, Purpose::Context);
        let mut sampler = ContextSampler::new(&inst, ContextMode::Fixed);
        let a = sampler.next(1, &mut rng).unwrap();
        let b = sampler.next(2, &mut rng).unwrap();
        assert_eq!(a, b);
        let mut resampled = ContextSampler::new(&inst, ContextMode::Resampled);
        assert_ne!(resampled.next(1, &mut rng).unwrap(), resampled.next(2, &mut rng).unwrap());
    }

    #[test]
    fn reward_at_extreme_means() {
        let inst = generate_instance(5, 2, 9).unwrap();
        let best = FeatureVector::new(inst.theta_star().to_vec()).unwrap();
        let mut rng = stream(9, 0, Purpose::Reward);
        for _ in 0..1000 {
            assert_eq!(sample_reward(&inst, &best, &mut rng).unwrap().value(), 1.0);
            assert_eq!(bernoulli(0.0, &mut rng).unwrap().value(), 0.0);
        }
    }

    #[test]
    fn reward_rejects_invalid_mean() {
        let mut rng = stream(0, 0, Purpose::Reward);
        assert!(matches!(bernoulli(1.1, &mut rng), Err(Error::InvalidMean(_))));
        assert!(matches!(bernoulli(-0.01, &mut rng), Err(Error::InvalidMean(_))));
        assert!(bernoulli(1.0 + 1e-12, &mut rng).is_ok());
    }

    #[test]
    fn reward_empirical_mean() {
        let mut rng = stream(5, 5, Purpose::Reward);
        let n = 100_000;
        let ones: f64 = (0..n).map(|_| bernoulli(0.5, &mut rng).unwrap().value()).sum();
        let tol = 3.0 * (0.25f64 / n as f64).sqrt();
        assert!((ones / n as f64 - 0.5).abs() < tol);
    }

    fn two_arm_context(means: [f64; 2]) -> (BanditInstance, ContextArmSet) {
        // θ* = e₁ makes the first coordinate the mean.
        let inst = BanditInstance {
            theta_star: vec![1.0, 0.0],
            dim: 2,
            num_arms: 2,
            seed: 0,
        };
        let arms = means
            .iter()
            .map(|&m| FeatureVector::new(vec![m, (1.0 - m * m).sqrt()]).unwrap())
            .collect();
        (inst, ContextArmSet::new(arms).unwrap())
    }

    #[test]
    fn instant_regret_closed_forms() {
        let (inst, ctx) = two_arm_context([0.9, 0.4]);
        assert_eq!(instant_regret(&inst, &ctx, 0).unwrap(), 0.0);
        assert!((instant_regret(&inst, &ctx, 1).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(
            instant_regret(&inst, &ctx, 2),
            Err(Error::IndexOutOfRange { index: 2, len: 2 })
        ));
    }

    #[test]
    fn instant_regret_matches_exhaustive_scan() {
        for seed in 1..=10 {
            let inst = generate_instance(5, 20, seed).unwrap();
            let mut rng = stream(seed, 0, Purpose::Context);
            let ctx = sample_context(&inst, 1, &mut rng).unwrap();
            let means: Vec<f64> = ctx
                .arms()
                .iter()
                .map(|a| {
                    let mut s = 0.0;
                    for (x, y) in a.as_slice().iter().zip(inst.theta_star()) {
                        s += x * y;
                    }
                    s
                })
                .collect();
            let mut best = means[0];
            for &m in &means {
                if m > best {
                    best = m;
                }
            }
            for (k, m) in means.iter().enumerate() {
                let r = instant_regret(&inst, &ctx, k).unwrap();
                assert_eq!(r, best - m);
                assert_eq!(r == 0.0, *m == best);
            }
        }
    }

    #[test]
    fn regret_trace_accumulates() {
        let mut trace = RegretTrace::default();
        for r in [0.5, 0.0, 0.25] {
            trace.push(r);
        }
        assert_eq!(trace.cumulative(), &[0.5, 0.5, 0.75]);
        assert_eq!(trace.final_regret(), 0.75);
    }
}
