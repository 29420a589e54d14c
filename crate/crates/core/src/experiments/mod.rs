//! Sweep presets, results store and plot-data export.
//!
//! A sweep trains one ensemble per level of a single hyperparameter, then
//! reports the generalization level per threshold, training-time moments and
//! rank tests across levels.

mod export;
mod run;
mod store;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::genlevel::{Side, DEFAULT_N_GRID};
use crate::mlp::MlpArchitecture;
use crate::problem::Interval;
use crate::training::TrainConfig;

pub use export::{export_plot_data, ensemble_band, Band};
pub use run::{run_sweep, EpsilonTests, LevelSummary, PairTest, SideResults, SweepSummary, Timing};
pub use store::{Provenance, ResultsStore, CODE_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepName {
    BaselineFullDomain,
    ThreeSubdomains,
    Neurons,
    Layers,
    CollocationPoints,
    DomainSize,
}

impl SweepName {
    pub const ALL: [SweepName; 6] = [
        SweepName::BaselineFullDomain,
        SweepName::ThreeSubdomains,
        SweepName::Neurons,
        SweepName::Layers,
        SweepName::CollocationPoints,
        SweepName::DomainSize,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SweepName::BaselineFullDomain => "baseline_full_domain",
            SweepName::ThreeSubdomains => "three_subdomains",
            SweepName::Neurons => "neurons",
            SweepName::Layers => "layers",
            SweepName::CollocationPoints => "collocation_points",
            SweepName::DomainSize => "domain_size",
        }
    }
}

impl fmt::Display for SweepName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SweepName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::UnknownPreset(s.to_string()))
    }
}

/// One hyperparameter setting: everything that distinguishes its ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub label: String,
    /// The swept value as a number, for plotting.
    pub value: f64,
    pub arch: MlpArchitecture,
    pub train_domain: Interval,
    pub n_cp: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub name: SweepName,
    pub levels: Vec<Level>,
    pub ensemble_size: usize,
    /// Shared training settings; `n_cp` and `seed` are taken from the level
    /// and `base_seed`.
    pub train_config: TrainConfig,
    pub base_seed: u64,
    #[serde(default = "default_n_grid")]
    pub n_grid: usize,
    /// Sides on which G_l is reported; the first one feeds the rank tests.
    #[serde(default = "default_sides")]
    pub sides: Vec<Side>,
    /// Multiply pairwise p-values by the number of pairs.
    #[serde(default)]
    pub bonferroni: bool,
}

fn default_n_grid() -> usize {
    DEFAULT_N_GRID
}

fn default_sides() -> Vec<Side> {
    vec![Side::Right]
}

pub const DEFAULT_ENSEMBLE_SIZE: usize = 100;

/// Collocation points on the reference sweep domain [-pi, -pi/3].
pub const SWEEP_N_CP: usize = 36;

/// Training domain shared by all hyperparameter sweeps.
pub fn sweep_domain() -> Interval {
    Interval { lo: -PI, hi: -PI / 3.0 }
}

/// Training interval of level `i` in the domain-size sweep: its right end is
/// fixed at -pi/3 and its length halves with each level.
pub fn domain_size_interval(i: u32) -> Interval {
    let hi = -PI / 3.0;
    Interval { lo: hi - 2.0 * PI / (3.0 * 2f64.powi(i as i32)), hi }
}

fn single_layer(width: usize) -> MlpArchitecture {
    MlpArchitecture::uniform(1, width).expect("preset widths are positive")
}

/// The preset sweep called `name`.
pub fn preset(name: &str) -> Result<SweepSpec> {
    let name: SweepName = name.parse()?;
    let spec = |levels, train_config, sides| SweepSpec {
        name,
        levels,
        ensemble_size: DEFAULT_ENSEMBLE_SIZE,
        train_config,
        base_seed: 0,
        n_grid: DEFAULT_N_GRID,
        sides,
        bonferroni: false,
    };
    let baseline_arch = MlpArchitecture::uniform(2, 50).expect("fixed");
    let right = vec![Side::Right];
    Ok(match name {
        SweepName::BaselineFullDomain => spec(
            vec![Level {
                label: "full".into(),
                value: 2.0 * PI,
                arch: baseline_arch,
                train_domain: Interval::full(),
                n_cp: 100,
            }],
            TrainConfig::baseline(),
            right,
        ),
        SweepName::ThreeSubdomains => {
            let third = PI / 3.0;
            let domains = [(-PI, -third), (-third, third), (third, PI)];
            let levels = domains
                .iter()
                .enumerate()
                .map(|(j, &(lo, hi))| Level {
                    label: format!("omega{}", j + 1),
                    value: (j + 1) as f64,
                    arch: baseline_arch.clone(),
                    train_domain: Interval { lo, hi },
                    n_cp: SWEEP_N_CP,
                })
                .collect();
            spec(levels, TrainConfig::baseline(), vec![Side::Left, Side::Right])
        }
        SweepName::Neurons => {
            let levels = [10, 20, 50, 100, 200, 400, 600]
                .into_iter()
                .map(|w| Level {
                    label: w.to_string(),
                    value: w as f64,
                    arch: single_layer(w),
                    train_domain: sweep_domain(),
                    n_cp: SWEEP_N_CP,
                })
                .collect();
            spec(levels, TrainConfig::sweep(), right)
        }
        SweepName::Layers => {
            let levels = [1, 4, 10, 20]
                .into_iter()
                .map(|d| Level {
                    label: format!("{d}x50"),
                    value: d as f64,
                    arch: MlpArchitecture::uniform(d, 50).expect("fixed"),
                    train_domain: sweep_domain(),
                    n_cp: SWEEP_N_CP,
                })
                .collect();
            spec(levels, TrainConfig::sweep(), right)
        }
        SweepName::CollocationPoints => {
            let levels = [18, 25, 36, 50, 100, 200]
                .into_iter()
                .map(|n| Level {
                    label: n.to_string(),
                    value: n as f64,
                    arch: single_layer(20),
                    train_domain: sweep_domain(),
                    n_cp: n,
                })
                .collect();
            spec(levels, TrainConfig::sweep(), right)
        }
        SweepName::DomainSize => {
            let levels = (0..5u32)
                .map(|i| {
                    let d = domain_size_interval(i);
                    Level {
                        label: format!("i={i}"),
                        value: d.length(),
                        arch: single_layer(20),
                        train_domain: d,
                        n_cp: (SWEEP_N_CP as f64 / 2f64.powi(i as i32)).round() as usize,
                    }
                })
                .collect();
            spec(levels, TrainConfig::sweep(), right)
        }
    })
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::config("sweep needs at least one level"));
        }
        if self.ensemble_size == 0 {
            return Err(Error::config("ensemble_size must be positive"));
        }
        if self.n_grid < 100 {
            return Err(Error::config("n_grid must be at least 100"));
        }
        if self.sides.is_empty() {
            return Err(Error::config("at least one side must be reported"));
        }
        self.train_config.validate()?;
        for l in &self.levels {
            if l.n_cp == 0 {
                return Err(Error::config(format!("level {} has no collocation points", l.label)));
            }
            if !l.train_domain.is_subset_of(&Interval::full()) {
                return Err(Error::config(format!("level {} trains outside [-pi, pi]", l.label)));
            }
        }
        Ok(())
    }

    /// Training settings for one level, before the per-model seed offset.
    pub fn level_config(&self, level: &Level) -> TrainConfig {
        TrainConfig {
            n_cp: level.n_cp,
            seed: self.base_seed,
            ..self.train_config.clone()
        }
    }

    pub fn with_ensemble_size(mut self, n: usize) -> Self {
        self.ensemble_size = n;
        self
    }

    pub fn with_adam_iters(mut self, n: usize) -> Self {
        self.train_config.adam_iters = n;
        self
    }

    pub fn with_lbfgs_iters(mut self, n: usize) -> Self {
        self.train_config.lbfgs_max_iters = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.base_seed = seed;
        self
    }

    /// Reduced budgets for quick runs: the given ensemble size, 2000 Adam
    /// and at most 1000 L-BFGS iterations.
    pub fn desk_scale(self, ensemble_size: usize) -> Self {
        self.with_ensemble_size(ensemble_size)
            .with_adam_iters(2000)
            .with_lbfgs_iters(1000)
    }

    /// Hex sha256 of the canonical JSON form plus the code version.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        let mut h = Sha256::new();
        h.update(CODE_VERSION.as_bytes());
        h.update([0]);
        h.update(&json);
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
