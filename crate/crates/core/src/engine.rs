//! Batched optimistic linear bandit loop.
//!
//! Users in batch `m` act on the model computed at the end of batch `m - 1`.
//! Each user hands its two statistics `φ y` and `φ φᵀ` to the protocol's local
//! randomizers; at the batch boundary the shuffler and analyzer turn the batch
//! of messages into one pair `(ũ_m, Ṽ_m)`. The engine never looks at raw user
//! data for learning: the analyzer output is its only input.

use nalgebra::DVector;

use crate::env::{instant_regret, sample_reward, BanditInstance, ContextArmSet, ContextMode, ContextSampler, RegretTrace};
use crate::error::{shape_err, Error, Result};
use crate::model::{confidence_radius, ucb_score, GramMatrix, ModelState, RidgeConfig};
use crate::rng::{EpisodeStreams, StreamRng};

/// Per-batch analyzer output `(ũ, Ṽ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStatistics {
    pub u: DVector<f64>,
    pub v: GramMatrix,
}

impl BatchStatistics {
    pub fn zeros(d: usize) -> Self {
        Self {
            u: DVector::zeros(d),
            v: GramMatrix::zeros(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.u.len()
    }
}

/// Randomizer, shuffler and analyzer for the vector and matrix channels.
///
/// Randomizers run on the user side and must not depend on anything but the
/// user's own statistic and fresh randomness. Analyzers may keep state across
/// batches (the tree-based central analyzer does).
pub trait ShuffleProtocol {
    type VectorMessage;
    type MatrixMessage;
    type ShuffledVectors;
    type ShuffledMatrices;

    fn randomize_vector(&self, x: &DVector<f64>, rng: &mut StreamRng) -> Result<Self::VectorMessage>;

    fn randomize_matrix(&self, x: &GramMatrix, rng: &mut StreamRng) -> Result<Self::MatrixMessage>;

    fn shuffle_vectors(
        &self,
        batch: Vec<Self::VectorMessage>,
        rng: &mut StreamRng,
    ) -> Result<Self::ShuffledVectors>;

    fn shuffle_matrices(
        &self,
        batch: Vec<Self::MatrixMessage>,
        rng: &mut StreamRng,
    ) -> Result<Self::ShuffledMatrices>;

    fn analyze_vectors(&mut self, shuffled: Self::ShuffledVectors, rng: &mut StreamRng) -> Result<DVector<f64>>;

    fn analyze_matrices(&mut self, shuffled: Self::ShuffledMatrices, rng: &mut StreamRng) -> Result<GramMatrix>;

    /// Both channels of one batch. Analyzers whose output couples the two
    /// channels (or that keep cross-batch state) override this.
    fn analyze(
        &mut self,
        vectors: Self::ShuffledVectors,
        matrices: Self::ShuffledMatrices,
        rng: &mut StreamRng,
    ) -> Result<BatchStatistics> {
        let u = self.analyze_vectors(vectors, rng)?;
        let v = self.analyze_matrices(matrices, rng)?;
        Ok(BatchStatistics { u, v })
    }

    /// Per-entry standard deviation of the noise accumulated in the model
    /// statistics by the end of the horizon. Feeds [`select_lambda`].
    fn sigma_total(&self, horizon: usize, batch_size: usize) -> f64;
}

/// No randomization: messages are the raw statistics and the analyzer sums them.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityProtocol;

impl ShuffleProtocol for IdentityProtocol {
    type VectorMessage = DVector<f64>;
    type MatrixMessage = GramMatrix;
    type ShuffledVectors = Vec<DVector<f64>>;
    type ShuffledMatrices = Vec<GramMatrix>;

    fn randomize_vector(&self, x: &DVector<f64>, _: &mut StreamRng) -> Result<DVector<f64>> {
        Ok(x.clone())
    }

    fn randomize_matrix(&self, x: &GramMatrix, _: &mut StreamRng) -> Result<GramMatrix> {
        Ok(x.clone())
    }

    fn shuffle_vectors(&self, batch: Vec<DVector<f64>>, _: &mut StreamRng) -> Result<Vec<DVector<f64>>> {
        Ok(batch)
    }

    fn shuffle_matrices(&self, batch: Vec<GramMatrix>, _: &mut StreamRng) -> Result<Vec<GramMatrix>> {
        Ok(batch)
    }

    fn analyze_vectors(&mut self, shuffled: Vec<DVector<f64>>, _: &mut StreamRng) -> Result<DVector<f64>> {
        sum_vectors(&shuffled)
    }

    fn analyze_matrices(&mut self, shuffled: Vec<GramMatrix>, _: &mut StreamRng) -> Result<GramMatrix> {
        sum_matrices(&shuffled)
    }

    fn sigma_total(&self, _: usize, _: usize) -> f64 {
        0.0
    }
}

/// Sequential entrywise sum.
pub fn sum_vectors(items: &[DVector<f64>]) -> Result<DVector<f64>> {
    let first = items.first().ok_or(Error::Empty("message batch"))?;
    let mut acc = DVector::zeros(first.len());
    for x in items {
        if x.len() != acc.len() {
            return Err(shape_err(acc.len(), x.len()));
        }
        acc += x;
    }
    Ok(acc)
}

/// Sequential entrywise sum.
pub fn sum_matrices(items: &[GramMatrix]) -> Result<GramMatrix> {
    let first = items.first().ok_or(Error::Empty("message batch"))?;
    let mut acc = GramMatrix::zeros(first.dim());
    for x in items {
        acc = acc.add(x)?;
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum TieBreak {
    #[default]
    LowestIndex,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    pub horizon: usize,
    pub batch_size: usize,
    pub ridge: RidgeConfig,
    pub tie_break: TieBreak,
    pub context_mode: ContextMode,
    /// Keep every batch's `(ũ, Ṽ)` in the ledger.
    pub keep_batches: bool,
}

impl EngineConfig {
    pub fn new(horizon: usize, batch_size: usize, ridge: RidgeConfig) -> Result<Self> {
        let cfg = Self {
            horizon,
            batch_size,
            ridge,
            tie_break: TieBreak::LowestIndex,
            context_mode: ContextMode::Resampled,
            keep_batches: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.batch_size > self.horizon {
            return Err(Error::InvalidParameter(format!(
                "batch size must satisfy 1 <= B <= T, got B={} T={}",
                self.batch_size, self.horizon
            )));
        }
        Ok(())
    }

    /// Number of model updates; a short final batch counts as its own batch.
    pub fn num_batches(&self) -> usize {
        self.horizon.div_ceil(self.batch_size)
    }
}

/// Running aggregate of analyzer outputs.
#[derive(Debug, Clone)]
pub struct BatchLedger {
    lambda: f64,
    u_running: DVector<f64>,
    v_running: GramMatrix,
    per_batch: Vec<BatchStatistics>,
    keep: bool,
}

impl BatchLedger {
    pub fn new(d: usize, lambda: f64, keep: bool) -> Self {
        Self {
            lambda,
            u_running: DVector::zeros(d),
            v_running: GramMatrix::scaled_identity(d, lambda),
            per_batch: Vec::new(),
            keep,
        }
    }

    pub fn record(&mut self, stats: BatchStatistics) -> Result<()> {
        if stats.dim() != self.u_running.len() || stats.v.dim() != self.u_running.len() {
            return Err(shape_err(self.u_running.len(), stats.dim()));
        }
        self.u_running += &stats.u;
        self.v_running = self.v_running.add(&stats.v)?;
        if self.keep {
            self.per_batch.push(stats);
        }
        Ok(())
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn u_running(&self) -> &DVector<f64> {
        &self.u_running
    }

    pub fn v_running(&self) -> &GramMatrix {
        &self.v_running
    }

    pub fn per_batch(&self) -> &[BatchStatistics] {
        &self.per_batch
    }
}

/// Index of the arm with the largest UCB score; ties go to the lowest index.
pub fn select_action(model: &ModelState, context: &ContextArmSet) -> Result<usize> {
    if context.is_empty() {
        return Err(Error::Empty("arm set"));
    }
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (k, arm) in context.arms().iter().enumerate() {
        let score = ucb_score(arm, model)?;
        if score > best_score {
            best = k;
            best_score = score;
        }
    }
    Ok(best)
}

/// `λ = max{1, σ_total (√d + √log(T/(Bα)))}`.
pub fn select_lambda(sigma_total: f64, d: usize, horizon: usize, batch_size: usize, alpha: f64) -> f64 {
    let ratio = horizon as f64 / (batch_size as f64 * alpha);
    let noise = sigma_total * ((d as f64).sqrt() + ratio.ln().max(0.0).sqrt());
    noise.max(1.0)
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub trace: RegretTrace,
    pub actions: Vec<usize>,
    /// Round at which each model update happened.
    pub update_times: Vec<usize>,
    pub ledger: BatchLedger,
    pub final_model: ModelState,
}

/// Plays `config.horizon` rounds against `instance` with randomness keyed by
/// `(instance.seed(), episode_seed)`.
pub fn run_episode<P: ShuffleProtocol>(
    instance: &BanditInstance,
    protocol: &mut P,
    config: &EngineConfig,
    episode_seed: u64,
) -> Result<Episode> {
    config.validate()?;
    let d = instance.dim();
    let ridge = config.ridge;
    let mut streams = EpisodeStreams::new(instance.seed(), episode_seed);
    let mut contexts = ContextSampler::new(instance, config.context_mode);

    let mut model = ModelState::initial(d, ridge)?;
    let mut ledger = BatchLedger::new(d, ridge.lambda, config.keep_batches);
    let mut trace = RegretTrace::with_capacity(config.horizon);
    let mut actions = Vec::with_capacity(config.horizon);
    let mut update_times = Vec::with_capacity(config.num_batches());
    let mut vec_msgs = Vec::with_capacity(config.batch_size);
    let mut mat_msgs = Vec::with_capacity(config.batch_size);

    for t in 1..=config.horizon {
        let context = contexts.next(t, &mut streams.context)?;
        let chosen = select_action(&model, &context)?;
        trace.push(instant_regret(instance, &context, chosen)?);
        actions.push(chosen);

        let phi = context.get(chosen)?;
        let y = sample_reward(instance, phi, &mut streams.reward)?.value();
        vec_msgs.push(protocol.randomize_vector(&phi.scaled(y), &mut streams.noise)?);
        mat_msgs.push(protocol.randomize_matrix(&phi.outer(), &mut streams.noise)?);

        if t % config.batch_size == 0 || t == config.horizon {
            let batch = update_times.len() + 1;
            let stats = close_batch(
                protocol,
                std::mem::take(&mut vec_msgs),
                std::mem::take(&mut mat_msgs),
                &mut streams.noise,
                d,
            )
            .and_then(|stats| {
                ledger.record(stats)?;
                let beta = confidence_radius(ridge.alpha, d, t, ridge.lambda)?;
                ModelState::from_statistics(ledger.u_running(), ledger.v_running().clone(), beta, batch, t)
            });
            model = stats.map_err(|e| Error::Batch {
                batch,
                source: Box::new(e),
            })?;
            update_times.push(t);
        }
    }

    Ok(Episode {
        trace,
        actions,
        update_times,
        ledger,
        final_model: model,
    })
}

fn close_batch<P: ShuffleProtocol>(
    protocol: &mut P,
    vec_msgs: Vec<P::VectorMessage>,
    mat_msgs: Vec<P::MatrixMessage>,
    rng: &mut StreamRng,
    d: usize,
) -> Result<BatchStatistics> {
    let shuffled_v = protocol.shuffle_vectors(vec_msgs, rng)?;
    let shuffled_m = protocol.shuffle_matrices(mat_msgs, rng)?;
    let BatchStatistics { u, v } = protocol.analyze(shuffled_v, shuffled_m, rng)?;
    if u.len() != d {
        return Err(shape_err(d, u.len()));
    }
    if v.dim() != d {
        return Err(shape_err(format!("{d}x{d}"), format!("{0}x{0}", v.dim())));
    }
    Ok(BatchStatistics { u, v })
}
