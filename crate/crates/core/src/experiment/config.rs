use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::ContextMode;
use crate::error::{Error, Result};

/// Algorithms compared in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Algo {
    #[serde(rename = "linucb")]
    LinUcb,
    #[serde(rename = "jdp")]
    Jdp,
    #[serde(rename = "sdp-amp")]
    SdpAmp,
    #[serde(rename = "sdp-vec")]
    SdpVec,
    #[serde(rename = "ldp")]
    Ldp,
}

impl Algo {
    pub const ALL: [Algo; 5] = [Algo::LinUcb, Algo::Jdp, Algo::SdpAmp, Algo::SdpVec, Algo::Ldp];

    pub fn key(self) -> &'static str {
        match self {
            Algo::LinUcb => "linucb",
            Algo::Jdp => "jdp",
            Algo::SdpAmp => "sdp-amp",
            Algo::SdpVec => "sdp-vec",
            Algo::Ldp => "ldp",
        }
    }

    /// Legend label.
    pub fn label(self) -> &'static str {
        match self {
            Algo::LinUcb => "LinUCB",
            Algo::Jdp => "LinUCB-JDP",
            Algo::SdpAmp => "LinUCB-SDP-Amp",
            Algo::SdpVec => "LinUCB-SDP-Vec",
            Algo::Ldp => "LinUCB-LDP",
        }
    }

    pub fn is_private(self) -> bool {
        self != Algo::LinUcb
    }

    /// Shuffle-model algorithms run with the configured batch size; the
    /// baselines with `baseline_batch`.
    pub fn is_shuffle(self) -> bool {
        matches!(self, Algo::SdpAmp | Algo::SdpVec)
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algo::ALL
            .into_iter()
            .find(|a| a.key() == s)
            .ok_or_else(|| Error::Config(format!("unknown algo {s:?}; expected one of linucb, ldp, jdp, sdp-amp, sdp-vec")))
    }
}

/// Flat key-value experiment description. Every field has a default, so a
/// config file only lists what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(rename = "algo")]
    pub algos: Vec<Algo>,
    #[serde(rename = "epsilon")]
    pub epsilons: Vec<f64>,
    #[serde(rename = "T")]
    pub horizon: usize,
    /// Batch size of the shuffle-model algorithms.
    #[serde(rename = "B")]
    pub batch_size: usize,
    /// Batch size of the non-private, local and central baselines.
    pub baseline_batch: usize,
    pub d: usize,
    pub num_arms: usize,
    pub delta: f64,
    pub alpha: f64,
    pub seeds: Vec<u64>,
    pub returning_users: bool,
    #[serde(rename = "M0")]
    pub m0: u32,
    /// Replaces the leading constant of the bit-count calibration; `None`
    /// means the theoretical constant. Defaults to the demo constant.
    pub vec_constant_override: Option<f64>,
    pub context_mode: ContextMode,
    /// Maximum number of rounds kept per curve.
    pub grid_points: usize,
    /// Keep every round instead of the grid.
    pub full_trace: bool,
    pub csv_path: Option<PathBuf>,
    pub svg_path: Option<PathBuf>,
    pub report_path: Option<PathBuf>,
}

pub const DEMO_VEC_CONSTANT: f64 = 10.0;

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algos: vec![Algo::LinUcb, Algo::Ldp, Algo::Jdp, Algo::SdpAmp, Algo::SdpVec],
            epsilons: vec![0.2, 1.0, 10.0],
            horizon: 20_000,
            batch_size: 20,
            baseline_batch: 1,
            d: 5,
            num_arms: 100,
            delta: 0.1,
            alpha: 0.1,
            seeds: (0..50).collect(),
            returning_users: false,
            m0: 1,
            vec_constant_override: Some(DEMO_VEC_CONSTANT),
            context_mode: ContextMode::Resampled,
            grid_points: 400,
            full_trace: false,
            csv_path: None,
            svg_path: None,
            report_path: None,
        }
    }
}

impl ExperimentConfig {
    /// Simulation settings of the reference figure.
    pub fn paper_figure1() -> Self {
        Self::default()
    }

    /// Same settings at `T = 5000` over 20 seeds.
    pub fn desk_scale() -> Self {
        Self {
            horizon: 5_000,
            seeds: (0..20).collect(),
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.algos.is_empty() {
            return fail("algo list is empty".into());
        }
        if self.seeds.is_empty() {
            return fail("seed list is empty".into());
        }
        if self.algos.iter().any(|a| a.is_private()) && self.epsilons.is_empty() {
            return fail("epsilon list is empty".into());
        }
        if let Some(e) = self.epsilons.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return fail(format!("epsilon {e} must be positive"));
        }
        if self.horizon == 0 {
            return fail("T must be >= 1".into());
        }
        for (name, b) in [("B", self.batch_size), ("baseline_batch", self.baseline_batch)] {
            if b == 0 || b > self.horizon {
                return fail(format!("{name}={b} must lie in 1..=T"));
            }
        }
        if self.d < 2 || self.num_arms == 0 {
            return fail(format!("need d >= 2 and num_arms >= 1, got d={} num_arms={}", self.d, self.num_arms));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return fail(format!("delta {} not in (0, 1)", self.delta));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail(format!("alpha {} not in (0, 1)", self.alpha));
        }
        if self.m0 == 0 {
            return fail("M0 must be >= 1".into());
        }
        if let Some(c) = self.vec_constant_override {
            if !(c > 0.0 && c.is_finite()) {
                return fail(format!("vec_constant_override {c} must be positive"));
            }
        }
        if self.grid_points == 0 {
            return fail("grid_points must be >= 1".into());
        }
        Ok(())
    }

    /// Batch size used by `algo`.
    pub fn batch_for(&self, algo: Algo) -> usize {
        if algo.is_shuffle() {
            self.batch_size
        } else {
            self.baseline_batch
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_setup() {
        let c = ExperimentConfig::default();
        assert_eq!((c.horizon, c.d, c.num_arms, c.batch_size, c.seeds.len()), (20_000, 5, 100, 20, 50));
        assert_eq!(c.delta, 0.1);
        c.validate().unwrap();
        let desk = ExperimentConfig::desk_scale();
        assert_eq!((desk.horizon, desk.seeds.len()), (5_000, 20));
    }

    #[test]
    fn toml_round_trip() {
        let c = ExperimentConfig::desk_scale();
        let text = c.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), c);
    }

    #[test]
    fn flat_keys_override_defaults() {
        let c = ExperimentConfig::from_toml_str(
            "algo = [\"linucb\", \"sdp-amp\"]\nT = 300\nB = 10\nepsilon = [1.0]\nseeds = [3, 4]\nM0 = 2\n",
        )
        .unwrap();
        assert_eq!(c.algos, vec![Algo::LinUcb, Algo::SdpAmp]);
        assert_eq!((c.horizon, c.batch_size, c.m0), (300, 10, 2));
        assert_eq!(c.d, 5);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(ExperimentConfig::from_toml_str("horizon = 10\n").is_err());
        assert!(ExperimentConfig::from_toml_str("T = 10\nB = 20\n").is_err());
        assert!(ExperimentConfig::from_toml_str("algo = [\"oful\"]\n").is_err());
        assert!(ExperimentConfig::from_toml_str("delta = 1.5\n").is_err());
    }

    #[test]
    fn algo_parsing() {
        for a in Algo::ALL {
            assert_eq!(a.key().parse::<Algo>().unwrap(), a);
        }
        assert!("LinUCB".parse::<Algo>().is_err());
    }
}
