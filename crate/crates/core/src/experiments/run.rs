use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::store::{ModelsDoc, Provenance, ResultsStore};
use super::{Level, SweepName, SweepSpec};
use crate::error::Result;
use crate::genlevel::{error_profile, gl_alt, gl_ensemble, GenLevelResult, GlAltResult, Side, EPSILONS};
use crate::mlp::MlpArchitecture;
use crate::problem::Interval;
use crate::stats::{kruskal_wallis, pairwise_mann_whitney, StatTestResult};
use crate::training::{train_ensemble, ConvergedBy, Ensemble};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub mean_s: f64,
    /// Unbiased sample variance; 0 for a single model.
    pub variance_s: f64,
    pub per_model_s: Vec<f64>,
}

impl Timing {
    fn of(times: Vec<f64>) -> Self {
        let n = times.len() as f64;
        let mean_s = times.iter().sum::<f64>() / n;
        let variance_s = if times.len() > 1 {
            times.iter().map(|t| (t - mean_s).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Timing {
            mean_s,
            variance_s,
            per_model_s: times,
        }
    }
}

/// G_l on one side, one entry per threshold in [`EPSILONS`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideResults {
    pub side: Side,
    pub genlevel: Vec<GenLevelResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub label: String,
    pub value: f64,
    pub arch: MlpArchitecture,
    pub train_domain: Interval,
    pub n_cp: usize,
    pub sides: Vec<SideResults>,
    pub gl_alt: Vec<GlAltResult>,
    pub timing: Timing,
    pub final_losses: Vec<f64>,
    pub converged_by: Vec<ConvergedBy>,
    pub n_failed: usize,
}

impl LevelSummary {
    /// Ensemble G_l on the primary side at `EPSILONS[eps_index]`.
    pub fn g_l(&self, eps_index: usize) -> f64 {
        self.sides[0].genlevel[eps_index].ensemble_g_l
    }

    pub fn per_model_g_l(&self, eps_index: usize) -> &[f64] {
        &self.sides[0].genlevel[eps_index].per_model_g_l
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub a: String,
    pub b: String,
    pub result: StatTestResult,
}

/// Rank tests across levels on per-model g_l at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonTests {
    pub epsilon: f64,
    pub side: Side,
    /// Absent when there are fewer than two levels or models per level.
    pub kruskal_wallis: Option<StatTestResult>,
    pub pairwise: Vec<PairTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub provenance: Provenance,
    pub sweep: SweepName,
    pub ensemble_size: usize,
    pub base_seed: u64,
    pub epsilons: Vec<f64>,
    pub levels: Vec<LevelSummary>,
    pub tests: Vec<EpsilonTests>,
}

impl SweepSummary {
    /// Copy with every wall-clock number zeroed, for comparing runs.
    pub fn without_timing(&self) -> Self {
        let mut s = self.clone();
        for l in &mut s.levels {
            l.timing = Timing {
                mean_s: 0.0,
                variance_s: 0.0,
                per_model_s: vec![0.0; l.timing.per_model_s.len()],
            };
        }
        s
    }
}

fn summarize_level(spec: &SweepSpec, level: &Level, ensemble: &Ensemble<f64>) -> Result<LevelSummary> {
    let profile = error_profile(ensemble, spec.n_grid)?;
    let sides = spec
        .sides
        .iter()
        .map(|&side| {
            let genlevel = EPSILONS
                .iter()
                .map(|&eps| gl_ensemble(&profile, level.train_domain, eps, side))
                .collect::<Result<Vec<_>>>()?;
            Ok(SideResults { side, genlevel })
        })
        .collect::<Result<Vec<_>>>()?;
    let gl_alt = EPSILONS
        .iter()
        .map(|&eps| gl_alt(&profile, level.train_domain, eps))
        .collect::<Result<Vec<_>>>()?;
    let models = &ensemble.models;
    Ok(LevelSummary {
        label: level.label.clone(),
        value: level.value,
        arch: level.arch.clone(),
        train_domain: level.train_domain,
        n_cp: level.n_cp,
        sides,
        gl_alt,
        timing: Timing::of(models.iter().map(|m| m.wall_time_s).collect()),
        final_losses: models.iter().map(|m| m.final_loss).collect(),
        converged_by: models.iter().map(|m| m.converged_by).collect(),
        n_failed: models.iter().filter(|m| m.failed()).count(),
    })
}

fn level_ensemble(spec: &SweepSpec, store: &ResultsStore, index: usize) -> Result<Ensemble<f64>> {
    let level = &spec.levels[index];
    let problem = ResultsStore::problem_of(level)?;
    let config = spec.level_config(level);
    // Reuse models left by an interrupted run of the same spec.
    if let Some(models) = store.load_level_models(spec, index)? {
        return Ok(Ensemble {
            models,
            config,
            arch: level.arch.clone(),
            problem,
        });
    }
    train_ensemble(&problem, &level.arch, &config, spec.ensemble_size)
}

fn rank_tests(spec: &SweepSpec, levels: &[LevelSummary]) -> Result<Vec<EpsilonTests>> {
    let testable = levels.len() >= 2 && spec.ensemble_size >= 2;
    (0..EPSILONS.len())
        .map(|e| {
            let groups: Vec<Vec<f64>> = levels.iter().map(|l| l.per_model_g_l(e).to_vec()).collect();
            let (kw, pairwise) = if testable {
                let pairs = pairwise_mann_whitney(&groups, spec.bonferroni)?
                    .into_iter()
                    .map(|(i, j, result)| PairTest {
                        a: levels[i].label.clone(),
                        b: levels[j].label.clone(),
                        result,
                    })
                    .collect();
                (Some(kruskal_wallis(&groups)?), pairs)
            } else {
                (None, Vec::new())
            };
            Ok(EpsilonTests {
                epsilon: EPSILONS[e],
                side: spec.sides[0],
                kruskal_wallis: kw,
                pairwise,
            })
        })
        .collect()
}

/// Trains every level, stores models and the summary, and returns the
/// summary. A spec that already has a complete run in `store` is not
/// retrained; its stored summary is returned.
pub fn run_sweep(spec: &SweepSpec, store: &ResultsStore) -> Result<SweepSummary> {
    spec.validate()?;
    if store.is_complete(spec) {
        return store.load_summary_for(spec);
    }
    let dir = store.begin_run(spec)?;
    let provenance = Provenance::of(spec);
    let levels = (0..spec.levels.len())
        .into_par_iter()
        .map(|i| {
            let ensemble = level_ensemble(spec, store, i)?;
            store.write_models(
                &dir,
                &ModelsDoc {
                    provenance: provenance.clone(),
                    level_index: i,
                    level: spec.levels[i].clone(),
                    ensemble: ensemble.clone(),
                },
            )?;
            summarize_level(spec, &spec.levels[i], &ensemble)
        })
        .collect::<Result<Vec<_>>>()?;
    let tests = rank_tests(spec, &levels)?;
    let summary = SweepSummary {
        provenance,
        sweep: spec.name,
        ensemble_size: spec.ensemble_size,
        base_seed: spec.base_seed,
        epsilons: EPSILONS.to_vec(),
        levels,
        tests,
    };
    store.finish_run(spec, &summary)?;
    Ok(summary)
}
