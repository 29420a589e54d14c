//! Two-phase PINN training (Adam, then L-BFGS) and seeded ensembles.

pub mod adam;
pub mod lbfgs;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{adam_run, BETA1, BETA2, EPSILON};
pub use lbfgs::{lbfgs_run, LbfgsReport, LbfgsSettings, LbfgsStop};

use crate::diff_engine::{LossReduction, PinnObjective};
use crate::error::{Error, Result};
use crate::mlp::{MlpArchitecture, ParamVector};
use crate::problem::PoissonProblem;
use crate::sampling::{init_params, latin_hypercube, latin_hypercube_resample};
use crate::scalar::Scalar;

/// Optimizer budgets and data size for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam_iters: usize,
    pub adam_lr: f64,
    pub lbfgs_max_iters: usize,
    pub lbfgs_tol: f64,
    pub lbfgs_history: usize,
    pub n_cp: usize,
    pub seed: u64,
    #[serde(default)]
    pub reduction: LossReduction,
    /// Draw a fresh collocation sample before every Adam step. The L-BFGS
    /// phase and the reported loss always use the initial sample.
    #[serde(default)]
    pub resample_each_iter: bool,
}

impl TrainConfig {
    /// 10000 Adam steps at 1e-3 followed by up to 10000 L-BFGS steps.
    pub fn baseline() -> Self {
        TrainConfig {
            adam_iters: 10_000,
            adam_lr: 1e-3,
            lbfgs_max_iters: 10_000,
            lbfgs_tol: 1e-8,
            lbfgs_history: 50,
            n_cp: 100,
            seed: 0,
            reduction: LossReduction::Sum,
            resample_each_iter: false,
        }
    }

    /// Budget used for every hyperparameter sweep: 5000 + 5000 steps.
    pub fn sweep() -> Self {
        TrainConfig {
            adam_iters: 5_000,
            lbfgs_max_iters: 5_000,
            ..Self::baseline()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.adam_lr > 0.0 && self.adam_lr.is_finite()) {
            return Err(Error::config("adam_lr must be positive"));
        }
        if !(self.lbfgs_tol > 0.0) {
            return Err(Error::config("lbfgs_tol must be positive"));
        }
        if self.lbfgs_history == 0 {
            return Err(Error::config("lbfgs_history must be at least 1"));
        }
        if self.n_cp == 0 {
            return Err(Error::config("n_cp must be at least 1"));
        }
        Ok(())
    }

    fn lbfgs_settings(&self) -> LbfgsSettings {
        LbfgsSettings {
            max_iters: self.lbfgs_max_iters,
            tol: self.lbfgs_tol,
            history: self.lbfgs_history,
            ..LbfgsSettings::default()
        }
    }
}

/// How a training run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergedBy {
    /// Adam budget used up and no L-BFGS phase configured.
    AdamBudget,
    LbfgsTol,
    LbfgsBudget,
    /// L-BFGS stopped on a failed line search; best iterate kept.
    LbfgsLineSearch,
    /// An optimizer hit a non-finite loss or gradient.
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel<T> {
    pub arch: MlpArchitecture,
    pub params: ParamVector<T>,
    pub seed: u64,
    pub wall_time_s: f64,
    pub adam_time_s: f64,
    pub lbfgs_time_s: f64,
    pub final_loss: f64,
    pub converged_by: ConvergedBy,
    pub lbfgs_iterations: usize,
    /// Diagnostic for aborted runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl<T> TrainedModel<T> {
    pub fn failed(&self) -> bool {
        self.converged_by == ConvergedBy::Aborted
    }
}

/// Models sharing architecture, problem and configuration; member `i` was
/// trained with seed `config.seed + i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble<T> {
    pub models: Vec<TrainedModel<T>>,
    pub config: TrainConfig,
    pub arch: MlpArchitecture,
    pub problem: PoissonProblem,
}

impl<T> Ensemble<T> {
    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

/// Trains one network: sample collocation points, run Adam, then L-BFGS.
pub fn train_single<T: Scalar>(
    problem: &PoissonProblem,
    arch: &MlpArchitecture,
    config: &TrainConfig,
) -> Result<TrainedModel<T>> {
    config.validate()?;
    let colloc = latin_hypercube(config.n_cp, problem.train_domain, config.seed)?;
    let mut params: ParamVector<T> = init_params(arch, config.seed);
    let mut objective = PinnObjective::new(arch, &colloc, &problem.boundary, config.reduction)?;

    let start = Instant::now();
    let mut failure = None;
    let adam_result = if config.resample_each_iter {
        let mut step = 0u64;
        let mut sampler = objective.clone();
        let domain = problem.train_domain;
        let (n, seed) = (config.n_cp, config.seed);
        adam_run(
            &mut params.values,
            |p, g| {
                let fresh = latin_hypercube_resample(n, domain, seed, step)
                    .expect("n_cp validated above");
                step += 1;
                sampler.set_collocation(&fresh).expect("non-empty sample");
                sampler.loss_and_grad_into(p, g)
            },
            config.adam_iters,
            T::c(config.adam_lr),
        )
    } else {
        adam_run(
            &mut params.values,
            |p, g| objective.loss_and_grad_into(p, g),
            config.adam_iters,
            T::c(config.adam_lr),
        )
    };
    let adam_time_s = start.elapsed().as_secs_f64();
    if let Err(e) = adam_result {
        match e {
            Error::OptimizerAbort { .. } => failure = Some(format!("adam: {e}")),
            other => return Err(other),
        }
    }

    let lbfgs_start = Instant::now();
    let mut lbfgs_iterations = 0;
    let converged_by = if failure.is_some() {
        ConvergedBy::Aborted
    } else if config.lbfgs_max_iters == 0 {
        ConvergedBy::AdamBudget
    } else {
        let report = lbfgs_run(
            &mut params.values,
            |p, g| objective.loss_and_grad_into(p, g),
            &config.lbfgs_settings(),
        );
        lbfgs_iterations = report.iterations;
        match report.stop {
            LbfgsStop::Tolerance => ConvergedBy::LbfgsTol,
            LbfgsStop::Budget => ConvergedBy::LbfgsBudget,
            LbfgsStop::LineSearchFailed => ConvergedBy::LbfgsLineSearch,
            LbfgsStop::NonFinite => {
                failure = Some("lbfgs: non-finite loss or gradient at start".into());
                ConvergedBy::Aborted
            }
        }
    };
    let lbfgs_time_s = lbfgs_start.elapsed().as_secs_f64();
    let wall_time_s = start.elapsed().as_secs_f64();
    let final_loss = objective.loss(params.as_slice()).to_f64_lossy();

    Ok(TrainedModel {
        arch: arch.clone(),
        params,
        seed: config.seed,
        wall_time_s,
        adam_time_s,
        lbfgs_time_s,
        final_loss,
        converged_by,
        lbfgs_iterations,
        failure,
    })
}

/// Trains `n_models` independent networks with seeds `config.seed + i`.
/// Members run in parallel; the result is ordered by seed.
pub fn train_ensemble<T: Scalar>(
    problem: &PoissonProblem,
    arch: &MlpArchitecture,
    config: &TrainConfig,
    n_models: usize,
) -> Result<Ensemble<T>> {
    if n_models == 0 {
        return Err(Error::config("ensemble needs at least one model"));
    }
    config.validate()?;
    let models = (0..n_models as u64)
        .into_par_iter()
        .map(|i| {
            let member = TrainConfig {
                seed: config.seed + i,
                ..config.clone()
            };
            train_single(problem, arch, &member)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Ensemble {
        models,
        config: config.clone(),
        arch: arch.clone(),
        problem: problem.clone(),
    })
}
