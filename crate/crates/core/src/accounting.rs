//! Closed-form privacy calculators and per-configuration budget reports.

use std::fmt::{self, Write as _};

use crate::error::{Error, Result};
use crate::protocol::amp::{calibrate_amp, calibrate_amp_returning};
use crate::protocol::vec::{PAPER_CONSTANT, PAPER_CONSTANT_RETURNING};

pub const UP_TO_CONSTANTS: &str = "up to constants";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrivacyModel {
    Ldp,
    Sdp,
    Jdp,
}

impl fmt::Display for PrivacyModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PrivacyModel::Ldp => "LDP",
            PrivacyModel::Sdp => "SDP",
            PrivacyModel::Jdp => "JDP",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetReport {
    pub model: PrivacyModel,
    pub epsilon: f64,
    pub delta: f64,
    pub assumptions: Vec<String>,
}

impl BudgetReport {
    fn new(model: PrivacyModel, epsilon: f64, delta: f64, assumptions: &[&str]) -> Self {
        Self {
            model,
            epsilon,
            delta,
            assumptions: assumptions.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn with(mut self, assumption: impl Into<String>) -> Self {
        self.assumptions.push(assumption.into());
        self
    }
}

/// Output of the shuffling amplification bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Amplification {
    pub epsilon: f64,
    pub delta: f64,
    /// `ε₀ ≤ log(n / (16 log(2/δ′)))`; outside it the bound is not proven.
    pub applicable: bool,
}

/// Central guarantee of shuffling `n` reports, each `(ε₀, δ₀)`-LDP:
///
/// `ε̃ = log(1 + (e^ε₀ − 1)/(e^ε₀ + 1) · (8√(e^ε₀ log(4/δ′))/√n + 8e^ε₀/n))`,
/// `δ̃ = δ′ + (e^ε̃ + 1)(1 + e^{−ε₀}/2) n δ₀`.
pub fn amplified_epsilon(epsilon0: f64, delta0: f64, n: usize, delta_prime: f64) -> Result<Amplification> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be >= 1".into()));
    }
    if !(epsilon0 > 0.0) || !(delta0 >= 0.0) || !(delta_prime > 0.0 && delta_prime < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "invalid amplification inputs eps0={epsilon0}, delta0={delta0}, delta'={delta_prime}"
        )));
    }
    let nf = n as f64;
    let e0 = epsilon0.exp();
    let lead = (e0 - 1.0) / (e0 + 1.0);
    let inner = 8.0 * (e0 * (4.0 / delta_prime).ln()).sqrt() / nf.sqrt() + 8.0 * e0 / nf;
    let epsilon = (lead * inner).ln_1p();
    let delta = delta_prime + (epsilon.exp() + 1.0) * (1.0 + (-epsilon0).exp() / 2.0) * nf * delta0;
    let threshold = nf / (16.0 * (2.0 / delta_prime).ln());
    let applicable = threshold > 1.0 && epsilon0 <= threshold.ln();
    Ok(Amplification {
        epsilon,
        delta,
        applicable,
    })
}

/// Per-mechanism budget for `k`-fold adaptive composition to reach
/// `(ε′, kδ + δ′)`: `ε′ / (2√(2k log(1/δ′)))`.
pub fn advanced_composition(epsilon_total: f64, delta_prime: f64, k: usize) -> Result<f64> {
    if !(epsilon_total > 0.0 && epsilon_total <= 1.0) {
        return Err(Error::OutOfRange(format!("total epsilon {epsilon_total} not in (0, 1]")));
    }
    if !(delta_prime > 0.0 && delta_prime < 1.0) || k == 0 {
        return Err(Error::InvalidParameter(format!(
            "need delta' in (0, 1) and k >= 1, got ({delta_prime}, {k})"
        )));
    }
    Ok(epsilon_total / (2.0 * (2.0 * k as f64 * (1.0 / delta_prime).ln()).sqrt()))
}

/// Per-batch budget when users return in each of `batches` batches.
pub fn returning_batch_budget(epsilon: f64, delta: f64, batches: usize) -> (f64, f64) {
    let m = batches as f64;
    (epsilon / (2.0 * (2.0 * m * (2.0 / delta).ln()).sqrt()), delta / (2.0 * m))
}

/// Local budget implied by the amplification calibration:
/// `ε₀ = ε√B / √log(2/δ)`, `δ₀ = δ/B`.
pub fn amp_local_budget(epsilon: f64, delta: f64, batch_size: usize) -> (f64, f64) {
    let b = batch_size as f64;
    (epsilon * b.sqrt() / (2.0 / delta).ln().sqrt(), delta / b)
}

/// Privacy-relevant description of a protocol configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum ProtocolConfig {
    NonPrivate,
    Local {
        epsilon0: f64,
        delta0: f64,
    },
    Central {
        epsilon: f64,
        delta: f64,
        m0: u32,
    },
    Amp {
        epsilon: f64,
        delta: f64,
        batch_size: usize,
        horizon: usize,
        returning: bool,
    },
    Vec {
        epsilon: f64,
        delta: f64,
        batch_size: usize,
        horizon: usize,
        returning: bool,
        constant: f64,
    },
}

fn check(epsilon: f64, delta: f64) -> Result<()> {
    if epsilon > 0.0 && (0.0..1.0).contains(&delta) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("budget ({epsilon}, {delta}) is not valid")))
    }
}

/// Guarantees each configuration earns, one report per trust model.
/// Shuffle guarantees carry over to JDP by post-processing.
pub fn budget_report(config: &ProtocolConfig) -> Result<Vec<BudgetReport>> {
    use PrivacyModel::*;
    let reports = match *config {
        ProtocolConfig::NonPrivate => vec![],
        ProtocolConfig::Local { epsilon0, delta0 } => {
            check(epsilon0, delta0)?;
            vec![
                BudgetReport::new(Ldp, epsilon0, delta0, &["per report", "Gaussian mechanism"]),
                BudgetReport::new(Jdp, epsilon0, delta0, &["implied by LDP"]),
            ]
        }
        ProtocolConfig::Central { epsilon, delta, m0 } => {
            check(epsilon, delta)?;
            let level = if m0 == 1 {
                "event-level".to_string()
            } else {
                format!("user-level, each user in at most {m0} rounds")
            };
            vec![BudgetReport::new(Jdp, epsilon, delta, &["tree mechanism", "implementation-chosen tree constants"])
                .with(level)]
        }
        ProtocolConfig::Amp {
            epsilon,
            delta,
            batch_size,
            horizon,
            returning,
        } => {
            check(epsilon, delta)?;
            if returning {
                let spec = calibrate_amp_returning(epsilon, delta, batch_size, horizon)?;
                let batches = horizon.div_ceil(batch_size);
                let (eb, db) = returning_batch_budget(epsilon, delta, batches);
                let mut sdp = BudgetReport::new(Sdp, epsilon, delta, &[UP_TO_CONSTANTS])
                    .with(format!("returning users, {batches} batches"));
                if !spec.in_range {
                    sdp = sdp.with("epsilon outside theorem range; asymptotic only");
                }
                vec![
                    sdp.clone(),
                    BudgetReport::new(Sdp, eb, db, &[UP_TO_CONSTANTS, "per batch, before composition"]),
                    BudgetReport {
                        model: Jdp,
                        ..sdp
                    }
                    .with("implied by SDP"),
                ]
            } else {
                let spec = calibrate_amp(epsilon, delta, batch_size)?;
                let (e0, d0) = amp_local_budget(epsilon, delta, batch_size);
                let mut sdp = BudgetReport::new(Sdp, epsilon, delta, &[UP_TO_CONSTANTS, "unique users"]);
                if !spec.in_range {
                    sdp = sdp.with("epsilon outside theorem range; asymptotic only");
                }
                let mut reports = vec![
                    sdp.clone(),
                    BudgetReport::new(Ldp, e0, d0, &[UP_TO_CONSTANTS, "per report"]),
                ];
                let amp = amplified_epsilon(e0, d0, batch_size, delta / 2.0)?;
                let mut explicit = BudgetReport::new(
                    Sdp,
                    amp.epsilon,
                    amp.delta,
                    &["unique users", "explicit amplification bound over one batch"],
                );
                if !amp.applicable {
                    explicit = explicit.with("amplification bound outside its applicability condition");
                }
                if amp.delta < 1.0 {
                    reports.push(explicit);
                }
                reports.push(BudgetReport { model: Jdp, ..sdp }.with("implied by SDP"));
                reports
            }
        }
        ProtocolConfig::Vec {
            epsilon,
            delta,
            batch_size,
            horizon,
            returning,
            constant,
        } => {
            check(epsilon, delta)?;
            let (paper, users) = if returning {
                let batches = horizon.div_ceil(batch_size);
                (PAPER_CONSTANT_RETURNING, format!("returning users, {batches} batches"))
            } else {
                (PAPER_CONSTANT, "unique users".to_string())
            };
            let mut sdp = BudgetReport::new(Sdp, epsilon, delta, &[UP_TO_CONSTANTS]).with(users);
            if constant == paper {
                sdp = sdp.with(format!("leading constant {paper}"));
            } else {
                sdp = sdp.with(format!(
                    "leading constant {constant} replaces {paper}; guarantee not established at this constant"
                ));
            }
            let b = batch_size as f64;
            vec![
                sdp.clone(),
                BudgetReport::new(Ldp, epsilon * b.sqrt(), delta, &[UP_TO_CONSTANTS, "per report", "loose bound"]),
                BudgetReport { model: Jdp, ..sdp }.with("implied by SDP"),
            ]
        }
    };
    Ok(reports)
}

/// Key-value text block, one `key = value` line per field, reports separated
/// by `[report]` headers.
pub fn render_reports(label: &str, reports: &[BudgetReport]) -> String {
    let mut out = String::new();
    for r in reports {
        let _ = writeln!(out, "[report]");
        let _ = writeln!(out, "config = {label}");
        let _ = writeln!(out, "model = {}", r.model);
        let _ = writeln!(out, "epsilon = {:.6e}", r.epsilon);
        let _ = writeln!(out, "delta = {:.6e}", r.delta);
        let _ = writeln!(out, "assumptions = {}", r.assumptions.join("; "));
    }
    if reports.is_empty() {
        let _ = writeln!(out, "[report]");
        let _ = writeln!(out, "config = {label}");
        let _ = writeln!(out, "model = none");
    }
    out
}
