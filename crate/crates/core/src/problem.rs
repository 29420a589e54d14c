//! The 1D Poisson benchmark: source term, boundary data, residual and the
//! closed-form solution used as ground truth.
//!
//! The benchmark solution is `u(x) = sum_{k=1..5} sin(2kx) / (2k)` on
//! `[-pi, pi]`. Differentiating twice gives `u'' = -f` with
//! `f(x) = sum_{k=1..5} 2k sin(2kx)`, so the residual is `u'' + f`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::Jet4;
use crate::scalar::Scalar;

/// Number of sine modes in the source term and solution.
pub const N_MODES: usize = 5;

/// A closed interval `[lo, hi]` with `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::config(format!("invalid interval [{lo}, {hi}]")));
        }
        Ok(Interval { lo, hi })
    }

    /// `[-pi, pi]`.
    pub fn full() -> Self {
        Interval { lo: -PI, hi: PI }
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn is_subset_of(&self, other: &Interval) -> bool {
        other.lo <= self.lo && self.hi <= other.hi
    }

    /// Distance from `x` to the nearest point of the interval.
    pub fn distance(&self, x: f64) -> f64 {
        if x < self.lo {
            self.lo - x
        } else if x > self.hi {
            x - self.hi
        } else {
            0.0
        }
    }
}

/// A Dirichlet condition `u(x) = value`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub x: f64,
    pub value: f64,
}

/// Poisson problem restricted to a training interval inside `[-pi, pi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonProblem {
    pub train_domain: Interval,
    pub full_domain: Interval,
    pub n_modes: usize,
    pub boundary: Vec<BoundaryPoint>,
}

impl PoissonProblem {
    /// Problem trained on `train_domain`, closed with exact Dirichlet data
    /// at both of its endpoints.
    pub fn on(train_domain: Interval) -> Result<Self> {
        let full_domain = Interval::full();
        let boundary = boundary_targets(train_domain, full_domain)?;
        Ok(PoissonProblem {
            train_domain,
            full_domain,
            n_modes: N_MODES,
            boundary,
        })
    }

    /// Problem on the whole of `[-pi, pi]`.
    pub fn full_domain() -> Self {
        Self::on(Interval::full()).expect("full domain is valid")
    }
}

/// Source term `f(x) = sum_k 2k sin(2kx)`.
pub fn source_f<T: Scalar>(x: T) -> T {
    (1..=N_MODES)
        .map(|k| {
            let w = T::c(2.0 * k as f64);
            w * (w * x).sin()
        })
        .fold(T::zero(), |acc, t| acc + t)
}

/// Closed-form solution `u(x) = sum_k sin(2kx) / (2k)`.
pub fn analytic_u<T: Scalar>(x: T) -> T {
    (1..=N_MODES)
        .map(|k| {
            let w = T::c(2.0 * k as f64);
            (w * x).sin() / w
        })
        .fold(T::zero(), |acc, t| acc + t)
}

/// `k`-th derivative of the closed-form solution, `1 <= k <= 4`.
pub fn analytic_deriv<T: Scalar>(x: T, k: usize) -> Result<T> {
    if !(1..=4).contains(&k) {
        return Err(Error::contract(format!(
            "analytic_deriv: order {k} outside 1..=4"
        )));
    }
    Ok(analytic_nth(x, k))
}

// d^k/dx^k sin(wx) = w^k sin(wx + k*pi/2)
fn analytic_nth<T: Scalar>(x: T, k: usize) -> T {
    (1..=N_MODES)
        .map(|m| {
            let w = T::c(2.0 * m as f64);
            let wx = w * x;
            let trig = match k % 4 {
                0 => wx.sin(),
                1 => wx.cos(),
                2 => -wx.sin(),
                _ => -wx.cos(),
            };
            w.powi(k as i32 - 1) * trig
        })
        .fold(T::zero(), |acc, t| acc + t)
}

/// Jet of the closed-form solution at `x`.
pub fn analytic_jet<T: Scalar>(x: T) -> Jet4<T> {
    Jet4::new(
        analytic_u(x),
        analytic_nth(x, 1),
        analytic_nth(x, 2),
        analytic_nth(x, 3),
        analytic_nth(x, 4),
    )
}

/// PDE residual `u'' + f` evaluated from a jet of the candidate solution.
pub fn residual_from_jet<T: Scalar>(j: &Jet4<T>, x: T) -> T {
    j.d2 + source_f(x)
}

/// Dirichlet targets at both ends of `train_domain`, taken from the
/// closed-form solution.
pub fn boundary_targets(train_domain: Interval, full_domain: Interval) -> Result<Vec<BoundaryPoint>> {
    if !train_domain.is_subset_of(&full_domain) {
        return Err(Error::config(format!(
            "training domain [{}, {}] is not inside [{}, {}]",
            train_domain.lo, train_domain.hi, full_domain.lo, full_domain.hi
        )));
    }
    Ok([train_domain.lo, train_domain.hi]
        .into_iter()
        .map(|x| BoundaryPoint {
            x,
            value: analytic_u(x),
        })
        .collect())
}
