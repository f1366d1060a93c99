use std::time::{Duration, Instant};

use rayon::prelude::*;

use super::config::{Algo, ExperimentConfig};
use crate::accounting::{budget_report, BudgetReport, ProtocolConfig};
use crate::engine::{run_episode, select_lambda, EngineConfig, Episode, IdentityProtocol, ShuffleProtocol};
use crate::env::generate_instance;
use crate::error::{Error, Result};
use crate::model::RidgeConfig;
use crate::protocol::amp::{calibrate_amp, calibrate_amp_returning, GaussianProtocol};
use crate::protocol::central::make_central_protocol;
use crate::protocol::local::make_local_protocol;
use crate::protocol::vec::{
    calibrate_vec_returning_with_constant, calibrate_vec_with_constant, VecProtocol, PAPER_CONSTANT,
    PAPER_CONSTANT_RETURNING,
};

/// One episode's downsampled regret curve.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub algo: Algo,
    pub epsilon: f64,
    pub seed: u64,
    /// Rounds at which `regret` is sampled, increasing, ending at `T`.
    pub t: Vec<usize>,
    pub regret: Vec<f64>,
    pub lambda: f64,
    pub wall_time: Duration,
    pub budget: Vec<BudgetReport>,
}

impl RunRecord {
    pub fn final_regret(&self) -> f64 {
        self.regret.last().copied().unwrap_or(0.0)
    }
}

/// Rounds kept when downsampling a trace of length `horizon` to at most
/// `points` entries. Always ends at `horizon`.
pub fn grid(horizon: usize, points: usize) -> Vec<usize> {
    if horizon <= points {
        return (1..=horizon).collect();
    }
    let mut out: Vec<usize> = (1..=points).map(|i| (i * horizon).div_ceil(points)).collect();
    out.dedup();
    out
}

fn vec_constant(cfg: &ExperimentConfig) -> f64 {
    match (cfg.vec_constant_override, cfg.returning_users) {
        (Some(c), _) => c,
        (None, false) => PAPER_CONSTANT,
        (None, true) => PAPER_CONSTANT_RETURNING,
    }
}

/// Privacy description of `algo` at `epsilon` under `cfg`.
pub fn protocol_config(cfg: &ExperimentConfig, algo: Algo, epsilon: f64) -> ProtocolConfig {
    let batch_size = cfg.batch_for(algo);
    match algo {
        Algo::LinUcb => ProtocolConfig::NonPrivate,
        Algo::Ldp => ProtocolConfig::Local {
            epsilon0: epsilon,
            delta0: cfg.delta,
        },
        Algo::Jdp => ProtocolConfig::Central {
            epsilon,
            delta: cfg.delta,
            m0: cfg.m0,
        },
        Algo::SdpAmp => ProtocolConfig::Amp {
            epsilon,
            delta: cfg.delta,
            batch_size,
            horizon: cfg.horizon,
            returning: cfg.returning_users,
        },
        Algo::SdpVec => ProtocolConfig::Vec {
            epsilon,
            delta: cfg.delta,
            batch_size,
            horizon: cfg.horizon,
            returning: cfg.returning_users,
            constant: vec_constant(cfg),
        },
    }
}

fn play<P: ShuffleProtocol>(cfg: &ExperimentConfig, mut protocol: P, algo: Algo, seed: u64) -> Result<(Episode, f64)> {
    let batch = cfg.batch_for(algo);
    let lambda = select_lambda(protocol.sigma_total(cfg.horizon, batch), cfg.d, cfg.horizon, batch, cfg.alpha);
    let mut engine = EngineConfig::new(cfg.horizon, batch, RidgeConfig::new(lambda, cfg.alpha)?)?;
    engine.context_mode = cfg.context_mode;
    let instance = generate_instance(cfg.d, cfg.num_arms, seed)?;
    // Contexts and rewards depend on the seed only, so every algorithm faces
    // the same arm sets and reward draws.
    Ok((run_episode(&instance, &mut protocol, &engine, seed)?, lambda))
}

/// Plays one episode of `algo` at `epsilon` on the instance drawn from `seed`.
pub fn run_one(cfg: &ExperimentConfig, algo: Algo, epsilon: f64, seed: u64) -> Result<(Episode, f64)> {
    let batch = cfg.batch_for(algo);
    let (t, delta) = (cfg.horizon, cfg.delta);
    match algo {
        Algo::LinUcb => play(cfg, IdentityProtocol, algo, seed),
        Algo::Ldp => play(cfg, make_local_protocol(epsilon, delta, batch)?, algo, seed),
        Algo::Jdp => play(cfg, make_central_protocol(epsilon, delta, t, batch, cfg.m0)?, algo, seed),
        Algo::SdpAmp => {
            let spec = if cfg.returning_users {
                calibrate_amp_returning(epsilon, delta, batch, t)?
            } else {
                calibrate_amp(epsilon, delta, batch)?
            };
            play(cfg, GaussianProtocol::shuffled(spec), algo, seed)
        }
        Algo::SdpVec => {
            let c = vec_constant(cfg);
            let params = if cfg.returning_users {
                calibrate_vec_returning_with_constant(epsilon, delta, batch, t, cfg.d, c)?
            } else {
                calibrate_vec_with_constant(epsilon, delta, batch, cfg.d, c)?
            };
            play(cfg, VecProtocol::new(params), algo, seed)
        }
    }
}

/// `(algo, ε, seed)` jobs in output order. The non-private algorithm still
/// gets one job per ε so every ε panel has the same legend.
pub fn jobs(cfg: &ExperimentConfig) -> Vec<(Algo, f64, u64)> {
    let mut algos = cfg.algos.clone();
    algos.sort();
    algos.dedup();
    let mut out = Vec::new();
    for algo in algos {
        for &eps in &cfg.epsilons {
            for &seed in &cfg.seeds {
                out.push((algo, eps, seed));
            }
        }
    }
    out
}

fn record(cfg: &ExperimentConfig, algo: Algo, epsilon: f64, seed: u64) -> Result<RunRecord> {
    let wrap = |e: Error| Error::Episode {
        algo: algo.key().to_string(),
        epsilon,
        seed,
        source: Box::new(e),
    };
    let start = Instant::now();
    let (episode, lambda) = run_one(cfg, algo, epsilon, seed).map_err(wrap)?;
    let wall_time = start.elapsed();
    let budget = budget_report(&protocol_config(cfg, algo, epsilon)).map_err(wrap)?;
    let cumulative = episode.trace.cumulative();
    let t = if cfg.full_trace {
        (1..=cfg.horizon).collect()
    } else {
        grid(cfg.horizon, cfg.grid_points)
    };
    let regret = t.iter().map(|&i| cumulative[i - 1]).collect();
    Ok(RunRecord {
        algo,
        epsilon,
        seed,
        t,
        regret,
        lambda,
        wall_time,
        budget,
    })
}

/// Runs every job, in parallel unless `serial`. Results come back in
/// [`jobs`] order regardless of scheduling; the first failure in that order
/// is returned.
pub fn run_matrix_with(cfg: &ExperimentConfig, serial: bool) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let jobs = jobs(cfg);
    let results: Vec<Result<RunRecord>> = if serial {
        jobs.iter().map(|&(a, e, s)| record(cfg, a, e, s)).collect()
    } else {
        jobs.par_iter().map(|&(a, e, s)| record(cfg, a, e, s)).collect()
    };
    results.into_iter().collect()
}

pub fn run_matrix(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    run_matrix_with(cfg, false)
}

/// Mean and standard error over seeds of one `(algo, ε)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub algo: Algo,
    pub epsilon: f64,
    pub seeds: usize,
    pub t: Vec<usize>,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
}

impl Curve {
    pub fn final_mean(&self) -> f64 {
        self.mean.last().copied().unwrap_or(0.0)
    }

    pub fn final_se(&self) -> f64 {
        self.se.last().copied().unwrap_or(0.0)
    }
}

/// Groups records by `(algo, ε)` in first-seen order and averages them
/// pointwise. Records of one group must share a grid.
pub fn aggregate(records: &[RunRecord]) -> Result<Vec<Curve>> {
    let mut groups: Vec<(Algo, f64, Vec<&RunRecord>)> = Vec::new();
    for r in records {
        match groups.iter_mut().find(|(a, e, _)| *a == r.algo && *e == r.epsilon) {
            Some((_, _, members)) => members.push(r),
            None => groups.push((r.algo, r.epsilon, vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|(algo, epsilon, members)| {
            let t = members[0].t.clone();
            if members.iter().any(|m| m.t != t) {
                return Err(Error::InvalidParameter(format!("records of {algo} at epsilon {epsilon} use different grids")));
            }
            let n = members.len() as f64;
            let mut mean = vec![0.0; t.len()];
            let mut se = vec![0.0; t.len()];
            for i in 0..t.len() {
                let m = members.iter().map(|r| r.regret[i]).sum::<f64>() / n;
                mean[i] = m;
                if members.len() > 1 {
                    let var = members.iter().map(|r| (r.regret[i] - m).powi(2)).sum::<f64>() / (n - 1.0);
                    se[i] = (var / n).sqrt();
                }
            }
            Ok(Curve {
                algo,
                epsilon,
                seeds: members.len(),
                t,
                mean,
                se,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            algos: vec![Algo::LinUcb, Algo::SdpAmp],
            epsilons: vec![0.2, 1.0, 10.0],
            horizon: 60,
            batch_size: 10,
            seeds: (0..5).collect(),
            num_arms: 10,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn grid_shapes() {
        assert_eq!(grid(10, 400), (1..=10).collect::<Vec<_>>());
        let g = grid(20_000, 400);
        assert_eq!(g.len(), 400);
        assert_eq!(*g.last().unwrap(), 20_000);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(grid(401, 400).last(), Some(&401));
    }

    #[test]
    fn cartesian_product_of_jobs() {
        let recs = run_matrix(&tiny()).unwrap();
        assert_eq!(recs.len(), 30);
        for r in &recs {
            assert!(r.regret.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn every_algo_runs() {
        let cfg = ExperimentConfig {
            algos: Algo::ALL.to_vec(),
            epsilons: vec![1.0],
            seeds: vec![7],
            ..tiny()
        };
        let recs = run_matrix(&cfg).unwrap();
        assert_eq!(recs.len(), 5);
        let lin = recs.iter().find(|r| r.algo == Algo::LinUcb).unwrap();
        assert_eq!(lin.lambda, 1.0);
        assert!(lin.budget.is_empty());
        assert!(recs.iter().filter(|r| r.algo.is_private()).all(|r| !r.budget.is_empty()));
    }

    #[test]
    fn failure_names_the_episode() {
        let cfg = ExperimentConfig {
            algos: vec![Algo::SdpVec],
            epsilons: vec![20.0],
            seeds: vec![3],
            ..tiny()
        };
        match run_matrix(&cfg) {
            Err(Error::Episode { algo, epsilon, seed, .. }) => {
                assert_eq!((algo.as_str(), epsilon, seed), ("sdp-vec", 20.0, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn aggregate_mean_and_se() {
        let mk = |seed, v: [f64; 2]| RunRecord {
            algo: Algo::Ldp,
            epsilon: 1.0,
            seed,
            t: vec![1, 2],
            regret: v.to_vec(),
            lambda: 1.0,
            wall_time: Duration::ZERO,
            budget: vec![],
        };
        let curves = aggregate(&[mk(0, [1.0, 2.0]), mk(1, [3.0, 6.0])]).unwrap();
        assert_eq!(curves.len(), 1);
        assert_eq!(curves[0].mean, vec![2.0, 4.0]);
        assert!((curves[0].se[1] - 2.0).abs() < 1e-12);
    }
}
