//! Generalization level: how far outside the training interval an ensemble
//! stays within an error threshold of the exact solution.
//!
//! Everything is computed on a grid over the full domain. The grid is
//! uniform with `n_grid` nodes, plus the two endpoints of the training
//! interval inserted as extra nodes so that exterior segments start exactly
//! at the training boundary. A grid cell counts as accurate when the
//! absolute error at both of its nodes is at most `epsilon`; segment lengths
//! are sums of cell widths, so the continuous maximum is approached from
//! below.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::mlp_forward_values;
use crate::problem::{analytic_u, Interval};
use crate::scalar::Scalar;
use crate::training::Ensemble;

/// Thresholds swept in every report.
pub const EPSILONS: [f64; 4] = [1e-2, 1e-3, 1e-4, 1e-5];

pub const DEFAULT_N_GRID: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

/// Pointwise absolute errors of every ensemble member on a common grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorProfile {
    pub grid: Vec<f64>,
    /// `errors[model][node]`; non-finite predictions are stored as `inf`.
    pub errors: Vec<Vec<f64>>,
    pub full_domain: Interval,
    pub train_domain: Interval,
    /// Number of uniform nodes before the training endpoints were inserted.
    pub n_grid: usize,
}

/// Uniform nodes over `full` with the endpoints of `train` merged in.
pub fn evaluation_grid(full: Interval, train: Interval, n_grid: usize) -> Result<Vec<f64>> {
    if n_grid < 2 {
        return Err(Error::config("evaluation grid needs at least two nodes"));
    }
    if !train.is_subset_of(&full) {
        return Err(Error::config("training domain outside the full domain"));
    }
    let h = full.length() / (n_grid - 1) as f64;
    let mut grid: Vec<f64> = (0..n_grid)
        .map(|i| if i == n_grid - 1 { full.hi } else { full.lo + i as f64 * h })
        .collect();
    grid.extend([train.lo, train.hi]);
    grid.sort_by(|a, b| a.total_cmp(b));
    // Drop nodes closer than a rounding error to a neighbour, keeping the
    // training endpoints exact.
    let tiny = 1e-12 * full.length();
    let mut merged: Vec<f64> = Vec::with_capacity(grid.len());
    for x in grid {
        match merged.last_mut() {
            Some(last) if x - *last <= tiny => {
                if x == train.lo || x == train.hi {
                    *last = x;
                }
            }
            _ => merged.push(x),
        }
    }
    Ok(merged)
}

impl ErrorProfile {
    /// Builds a profile from precomputed predictions `u_theta(grid[j])`.
    pub fn from_predictions(
        grid: Vec<f64>,
        predictions: &[Vec<f64>],
        full_domain: Interval,
        train_domain: Interval,
        n_grid: usize,
    ) -> Result<Self> {
        if grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::contract("grid must be strictly increasing"));
        }
        if predictions.iter().any(|p| p.len() != grid.len()) {
            return Err(Error::contract("prediction length differs from grid"));
        }
        let errors = predictions
            .iter()
            .map(|pred| {
                grid.iter()
                    .zip(pred)
                    .map(|(&x, &u)| {
                        let e = (analytic_u(x) - u).abs();
                        if e.is_finite() {
                            e
                        } else {
                            f64::INFINITY
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(ErrorProfile {
            grid,
            errors,
            full_domain,
            train_domain,
            n_grid,
        })
    }

    pub fn n_models(&self) -> usize {
        self.errors.len()
    }

    /// Uniform spacing of the underlying grid.
    pub fn spacing(&self) -> f64 {
        self.full_domain.length() / (self.n_grid - 1) as f64
    }

    /// Node indices of the exterior on `side`, ordered outward from the
    /// training boundary.
    fn exterior_nodes(&self, train: Interval, side: Side) -> Vec<usize> {
        match side {
            Side::Right => (0..self.grid.len()).filter(|&i| self.grid[i] >= train.hi).collect(),
            Side::Left => (0..self.grid.len())
                .rev()
                .filter(|&i| self.grid[i] <= train.lo)
                .collect(),
        }
    }
}

/// Absolute errors of every ensemble member over `n_grid` uniform nodes of
/// the full domain (plus the training endpoints).
pub fn error_profile<T: Scalar>(ensemble: &Ensemble<T>, n_grid: usize) -> Result<ErrorProfile> {
    if n_grid < 100 {
        return Err(Error::config("error profile needs n_grid >= 100"));
    }
    let problem = &ensemble.problem;
    let grid = evaluation_grid(problem.full_domain, problem.train_domain, n_grid)?;
    let xs: Vec<T> = grid.iter().map(|&x| T::c(x)).collect();
    let predictions = ensemble
        .models
        .iter()
        .map(|m| {
            mlp_forward_values(&m.arch, &m.params, &xs)
                .map(|v| v.into_iter().map(|u| u.to_f64_lossy()).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    ErrorProfile::from_predictions(grid, &predictions, problem.full_domain, problem.train_domain, n_grid)
}

/// Accurate-segment length on one side for one model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SideLength {
    pub length: f64,
    /// The side has no exterior (training interval touches the domain edge).
    pub degenerate: bool,
}

fn runs(profile: &ErrorProfile, model: usize, train: Interval, eps: f64, side: Side) -> (f64, f64, bool) {
    let nodes = profile.exterior_nodes(train, side);
    if nodes.len() < 2 {
        return (0.0, 0.0, true);
    }
    let err = &profile.errors[model];
    let ok = |i: usize| err[i] <= eps;
    let (mut best, mut current, mut anchored) = (0.0f64, 0.0f64, 0.0f64);
    let mut still_anchored = true;
    for pair in nodes.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let width = (profile.grid[b] - profile.grid[a]).abs();
        if ok(a) && ok(b) {
            current += width;
            if still_anchored {
                anchored += width;
            }
        } else {
            current = 0.0;
            still_anchored = false;
        }
        best = best.max(current);
    }
    (best, anchored, false)
}

/// Longest contiguous exterior segment on `side` where the model's error
/// stays at most `epsilon`.
pub fn g_l_single(
    profile: &ErrorProfile,
    model_index: usize,
    train_domain: Interval,
    epsilon: f64,
    side: Side,
) -> Result<SideLength> {
    check_eps(epsilon)?;
    check_model(profile, model_index)?;
    let (length, _, degenerate) = runs(profile, model_index, train_domain, epsilon, side);
    Ok(SideLength { length, degenerate })
}

/// Like [`g_l_single`] but the segment must start at the training boundary.
pub fn anchored_single(
    profile: &ErrorProfile,
    model_index: usize,
    train_domain: Interval,
    epsilon: f64,
    side: Side,
) -> Result<SideLength> {
    check_eps(epsilon)?;
    check_model(profile, model_index)?;
    let (_, length, degenerate) = runs(profile, model_index, train_domain, epsilon, side);
    Ok(SideLength { length, degenerate })
}

fn check_eps(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0) {
        return Err(Error::contract("epsilon must be positive"));
    }
    Ok(())
}

fn check_model(profile: &ErrorProfile, model: usize) -> Result<()> {
    if model >= profile.n_models() {
        return Err(Error::contract(format!(
            "model index {model} out of range ({} models)",
            profile.n_models()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenLevelResult {
    pub epsilon: f64,
    pub side: Side,
    pub per_model_g_l: Vec<f64>,
    /// Minimum over the ensemble.
    pub ensemble_g_l: f64,
    pub grid_resolution: usize,
    pub degenerate: bool,
}

/// Ensemble generalization level: the smallest per-model segment length.
pub fn gl_ensemble(
    profile: &ErrorProfile,
    train_domain: Interval,
    epsilon: f64,
    side: Side,
) -> Result<GenLevelResult> {
    if profile.n_models() == 0 {
        return Err(Error::config("generalization level of an empty ensemble"));
    }
    let mut degenerate = false;
    let per_model = (0..profile.n_models())
        .map(|m| {
            let r = g_l_single(profile, m, train_domain, epsilon, side)?;
            degenerate |= r.degenerate;
            Ok(r.length)
        })
        .collect::<Result<Vec<f64>>>()?;
    let ensemble_g_l = per_model.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(GenLevelResult {
        epsilon,
        side,
        per_model_g_l: per_model,
        ensemble_g_l,
        grid_resolution: profile.n_grid,
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlAltResult {
    pub epsilon: f64,
    /// Per model: minimum over non-degenerate sides of the anchored run.
    pub per_model: Vec<f64>,
    pub ensemble: f64,
    pub grid_resolution: usize,
    /// No side has any exterior.
    pub degenerate: bool,
}

/// Distance-based variant: the largest `d` such that every point within
/// distance `d` of the training interval is accurate for every model.
pub fn gl_alt(profile: &ErrorProfile, train_domain: Interval, epsilon: f64) -> Result<GlAltResult> {
    check_eps(epsilon)?;
    if profile.n_models() == 0 {
        return Err(Error::config("generalization level of an empty ensemble"));
    }
    let mut degenerate = true;
    let per_model: Vec<f64> = (0..profile.n_models())
        .map(|m| {
            [Side::Left, Side::Right]
                .into_iter()
                .filter_map(|side| {
                    let (_, anchored, deg) = runs(profile, m, train_domain, epsilon, side);
                    (!deg).then_some(anchored)
                })
                .inspect(|_| degenerate = false)
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let per_model: Vec<f64> = per_model
        .into_iter()
        .map(|v| if v.is_finite() { v } else { 0.0 })
        .collect();
    let ensemble = per_model.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(GlAltResult {
        epsilon,
        per_model,
        ensemble,
        grid_resolution: profile.n_grid,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn omega1() -> Interval {
        Interval::new(-PI, -PI / 3.0).unwrap()
    }

    fn profile_from(preds: &[&dyn Fn(f64) -> f64], train: Interval, n_grid: usize) -> ErrorProfile {
        let grid = evaluation_grid(Interval::full(), train, n_grid).unwrap();
        let p: Vec<Vec<f64>> = preds.iter().map(|f| grid.iter().map(|&x| f(x)).collect()).collect();
        ErrorProfile::from_predictions(grid, &p, Interval::full(), train, n_grid).unwrap()
    }

    #[test]
    fn grid_spacing_and_breakpoints() {
        let g = evaluation_grid(Interval::full(), Interval::full(), 2001).unwrap();
        assert_eq!(g.len(), 2001);
        assert!((g[1] - g[0] - PI / 1000.0).abs() < 1e-12);
        let g = evaluation_grid(Interval::full(), omega1(), 2000).unwrap();
        assert!(g.contains(&(-PI / 3.0)));
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(*g.first().unwrap(), -PI);
        assert_eq!(*g.last().unwrap(), PI);
    }

    #[test]
    fn oracle_model_covers_whole_right_exterior() {
        let exact = |x: f64| analytic_u(x);
        let p = profile_from(&[&exact], omega1(), 2000);
        assert!(p.errors[0].iter().all(|&e| e == 0.0));
        let r = g_l_single(&p, 0, omega1(), 1e-5, Side::Right).unwrap();
        assert!((r.length - 4.0 * PI / 3.0).abs() < 1e-12);
        let left = g_l_single(&p, 0, omega1(), 1e-5, Side::Left).unwrap();
        assert!(left.degenerate);
        assert_eq!(left.length, 0.0);
        let alt = gl_alt(&p, omega1(), 1e-5).unwrap();
        assert!((alt.ensemble - 4.0 * PI / 3.0).abs() < 1e-12);
        assert!(!alt.degenerate);
    }

    #[test]
    fn zero_model_error_is_abs_solution() {
        let zero = |_: f64| 0.0;
        let p = profile_from(&[&zero], omega1(), 2000);
        for (x, e) in p.grid.iter().zip(&p.errors[0]) {
            assert_eq!(*e, analytic_u(*x).abs());
        }
        // Only cells touching zeros of u can pass; |u| grows with slope ~5.
        let r = g_l_single(&p, 0, omega1(), 1e-5, Side::Right).unwrap();
        assert!(r.length <= 2.0 * p.spacing() + 1e-12, "{}", r.length);
    }

    #[test]
    fn failing_everywhere_gives_zero() {
        let bad = |x: f64| analytic_u(x) + 1.0;
        let p = profile_from(&[&bad], omega1(), 500);
        assert_eq!(g_l_single(&p, 0, omega1(), 0.5, Side::Right).unwrap().length, 0.0);
        assert_eq!(gl_alt(&p, omega1(), 0.5).unwrap().ensemble, 0.0);
    }

    #[test]
    fn ensemble_min_and_dominance() {
        let exact = |x: f64| analytic_u(x);
        let drift = |x: f64| analytic_u(x) + 1e-3 * (x + PI / 3.0).max(0.0);
        let bad = |x: f64| analytic_u(x) + 2.0;
        let one = profile_from(&[&exact], omega1(), 1000);
        let r1 = gl_ensemble(&one, omega1(), 1e-3, Side::Right).unwrap();
        assert_eq!(r1.ensemble_g_l, r1.per_model_g_l[0]);

        let two = profile_from(&[&exact, &drift], omega1(), 1000);
        let r2 = gl_ensemble(&two, omega1(), 1e-3, Side::Right).unwrap();
        assert!(r2.ensemble_g_l <= r1.ensemble_g_l);
        assert!((r2.ensemble_g_l - 1.0).abs() < 2.0 * two.spacing());

        let three = profile_from(&[&exact, &drift, &bad], omega1(), 1000);
        assert_eq!(gl_ensemble(&three, omega1(), 1e-3, Side::Right).unwrap().ensemble_g_l, 0.0);
    }

    #[test]
    fn detached_segment_counts_for_free_but_not_anchored_run() {
        // Wrong right next to the boundary, exact further out.
        let f = |x: f64| if x < 0.0 { analytic_u(x) + 1.0 } else { analytic_u(x) };
        let p = profile_from(&[&f], omega1(), 2000);
        let free = g_l_single(&p, 0, omega1(), 1e-3, Side::Right).unwrap().length;
        let anchored = anchored_single(&p, 0, omega1(), 1e-3, Side::Right).unwrap().length;
        assert!((free - PI).abs() < 2.0 * p.spacing());
        assert_eq!(anchored, 0.0);
    }

    #[test]
    fn both_sides_and_alt_minimum() {
        let mid = Interval::new(-PI / 3.0, PI / 3.0).unwrap();
        // Accurate for 0.5 rad on the left, 1.0 rad on the right.
        let f = |x: f64| {
            if (-PI / 3.0 - 0.5..=PI / 3.0 + 1.0).contains(&x) {
                analytic_u(x)
            } else {
                analytic_u(x) + 1.0
            }
        };
        let p = profile_from(&[&f], mid, 4000);
        let h = p.spacing();
        let l = g_l_single(&p, 0, mid, 1e-3, Side::Left).unwrap().length;
        let r = g_l_single(&p, 0, mid, 1e-3, Side::Right).unwrap().length;
        assert!((l - 0.5).abs() <= h && (r - 1.0).abs() <= h);
        let alt = gl_alt(&p, mid, 1e-3).unwrap();
        assert!((alt.ensemble - l).abs() < 1e-15);
    }

    #[test]
    fn invalid_inputs() {
        let exact = |x: f64| analytic_u(x);
        let p = profile_from(&[&exact], omega1(), 200);
        assert!(g_l_single(&p, 0, omega1(), 0.0, Side::Right).is_err());
        assert!(g_l_single(&p, 1, omega1(), 1e-3, Side::Right).is_err());
        assert!(gl_alt(&p, omega1(), -1.0).is_err());
    }

    #[test]
    fn monotone_in_epsilon() {
        let wobble = |x: f64| analytic_u(x) + 1e-4 * (3.0 * x).sin() * x.abs();
        let p = profile_from(&[&wobble], omega1(), 2000);
        let vals: Vec<f64> = EPSILONS
            .iter()
            .rev()
            .map(|&e| gl_ensemble(&p, omega1(), e, Side::Right).unwrap().ensemble_g_l)
            .collect();
        assert!(vals.windows(2).all(|w| w[0] <= w[1]), "{vals:?}");
    }
}
