//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! Search directions come from the two-loop recursion over the last
//! `history` curvature pairs, with the initial inverse Hessian scaled by
//! `s'y / y'y`. The line search brackets a step satisfying the strong Wolfe
//! conditions and refines it by safeguarded cubic interpolation.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsSettings {
    pub max_iters: usize,
    /// Stops when the gradient max-norm or the loss decrease of an accepted
    /// step falls to this value or below.
    pub tol: f64,
    pub history: usize,
    pub c1: f64,
    pub c2: f64,
    /// Function evaluations allowed per line search.
    pub max_line_search: usize,
}

impl Default for LbfgsSettings {
    fn default() -> Self {
        LbfgsSettings {
            max_iters: 10_000,
            tol: 1e-8,
            history: 50,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 25,
        }
    }
}

/// Why the quasi-Newton phase stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LbfgsStop {
    /// Gradient max-norm or loss decrease at or below tolerance.
    Tolerance,
    /// Iteration budget exhausted.
    Budget,
    /// No acceptable step could be found along the search direction.
    LineSearchFailed,
    /// Loss or gradient at the starting point was not finite.
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsReport<T> {
    pub stop: LbfgsStop,
    pub iterations: usize,
    pub evaluations: usize,
    pub final_loss: T,
    /// Loss at the start and after every accepted step.
    pub loss_trace: Vec<T>,
}

struct Pair<T> {
    s: Vec<T>,
    y: Vec<T>,
    rho: T,
}

/// Eight independent partial sums so the loop vectorizes; the summation
/// order is fixed, so results stay deterministic.
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: T = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| *x * *y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    acc.iter().copied().sum::<T>() + tail
}

fn max_abs<T: Scalar>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |m, v| m.max(v.abs()))
}

/// Search direction `-H g` by the two-loop recursion.
fn two_loop<T: Scalar>(g: &[T], hist: &VecDeque<Pair<T>>, d: &mut [T]) {
    d.iter_mut().zip(g).for_each(|(d, g)| *d = -*g);
    let mut alpha = vec![T::zero(); hist.len()];
    for (k, pair) in hist.iter().enumerate().rev() {
        let a = pair.rho * dot(&pair.s, d);
        alpha[k] = a;
        d.iter_mut().zip(&pair.y).for_each(|(d, y)| *d -= a * *y);
    }
    if let Some(last) = hist.back() {
        let gamma = dot(&last.s, &last.y) / dot(&last.y, &last.y);
        d.iter_mut().for_each(|d| *d *= gamma);
    }
    for (k, pair) in hist.iter().enumerate() {
        let b = pair.rho * dot(&pair.y, d);
        let a = alpha[k];
        d.iter_mut().zip(&pair.s).for_each(|(d, s)| *d += (a - b) * *s);
    }
}

/// A trial point of the one-dimensional search.
#[derive(Clone, Copy)]
struct Probe<T> {
    step: T,
    f: T,
    df: T,
}

struct Evaluator<'a, T, F> {
    f: &'a mut F,
    x0: &'a [T],
    d: &'a [T],
    x: Vec<T>,
    g: Vec<T>,
    evaluations: usize,
}

impl<'a, T: Scalar, F: FnMut(&[T], &mut [T]) -> T> Evaluator<'a, T, F> {
    fn probe(&mut self, step: T) -> Probe<T> {
        for ((x, x0), d) in self.x.iter_mut().zip(self.x0).zip(self.d) {
            *x = *x0 + step * *d;
        }
        let f = (self.f)(&self.x, &mut self.g);
        self.evaluations += 1;
        let df = dot(&self.g, self.d);
        Probe { step, f, df }
    }
}

/// Minimizer of the cubic through two probes, kept inside the bracket.
fn cubic_step<T: Scalar>(a: Probe<T>, b: Probe<T>) -> T {
    let (lo, hi) = if a.step < b.step { (a.step, b.step) } else { (b.step, a.step) };
    let width = hi - lo;
    let guard = T::c(0.1) * width;
    let mid = lo + T::c(0.5) * width;
    let d1 = a.df + b.df - T::c(3.0) * (a.f - b.f) / (a.step - b.step);
    let rad = d1 * d1 - a.df * b.df;
    if !(rad >= T::zero()) || !a.f.is_finite() || !b.f.is_finite() {
        return mid;
    }
    let d2 = (b.step - a.step).signum() * rad.sqrt();
    let denom = b.df - a.df + T::c(2.0) * d2;
    if denom == T::zero() {
        return mid;
    }
    let t = b.step - (b.step - a.step) * (b.df + d2 - d1) / denom;
    if !t.is_finite() {
        return mid;
    }
    t.max(lo + guard).min(hi - guard)
}

enum Search<T> {
    Found(Probe<T>),
    /// No strong-Wolfe point; carries the best Armijo point if any.
    Failed(Option<Probe<T>>),
}

fn strong_wolfe<T, F>(ev: &mut Evaluator<'_, T, F>, f0: T, df0: T, first: T, s: &LbfgsSettings) -> Search<T>
where
    T: Scalar,
    F: FnMut(&[T], &mut [T]) -> T,
{
    let (c1, c2) = (T::c(s.c1), T::c(s.c2));
    let armijo = |p: &Probe<T>| p.f.is_finite() && p.f <= f0 + c1 * p.step * df0;
    let curvature = |p: &Probe<T>| p.df.abs() <= -c2 * df0;
    let start = Probe { step: T::zero(), f: f0, df: df0 };
    let mut prev = start;
    let mut step = first;
    let mut budget = s.max_line_search;
    let mut best: Option<Probe<T>> = None;

    let keep_best = |p: &Probe<T>, best: &mut Option<Probe<T>>| {
        if armijo(p) && p.f < f0 && best.map_or(true, |b| p.f < b.f) {
            *best = Some(*p);
        }
    };

    // Bracketing phase.
    let (mut lo, mut hi) = loop {
        if budget == 0 {
            return Search::Failed(best);
        }
        budget -= 1;
        let p = ev.probe(step);
        keep_best(&p, &mut best);
        if !armijo(&p) || (prev.step > T::zero() && p.f >= prev.f) {
            break (prev, p);
        }
        if curvature(&p) {
            return Search::Found(p);
        }
        if p.df >= T::zero() {
            break (p, prev);
        }
        prev = p;
        step = step * T::c(2.0);
    };

    // Zoom phase: `lo` satisfies Armijo and has the lowest value so far.
    while budget > 0 {
        budget -= 1;
        let width = (hi.step - lo.step).abs();
        if width <= T::epsilon() * lo.step.abs().max(T::one()) {
            break;
        }
        let trial = if hi.f.is_finite() {
            cubic_step(lo, hi)
        } else {
            lo.step + T::c(0.5) * (hi.step - lo.step)
        };
        let p = ev.probe(trial);
        keep_best(&p, &mut best);
        if !armijo(&p) || p.f >= lo.f {
            hi = p;
        } else {
            if curvature(&p) {
                return Search::Found(p);
            }
            if p.df * (hi.step - lo.step) >= T::zero() {
                hi = lo;
            }
            lo = p;
        }
    }
    Search::Failed(best)
}

/// Minimizes with L-BFGS starting from `params`, updating them in place.
///
/// `loss_grad` writes the gradient into its second argument and returns the
/// loss. Accepted steps always decrease the loss.
pub fn lbfgs_run<T, F>(params: &mut [T], mut loss_grad: F, settings: &LbfgsSettings) -> LbfgsReport<T>
where
    T: Scalar,
    F: FnMut(&[T], &mut [T]) -> T,
{
    let n = params.len();
    let tol = T::c(settings.tol);
    let history = settings.history.max(1);
    let mut g = vec![T::zero(); n];
    let mut f = loss_grad(params, &mut g);
    let mut evaluations = 1;
    let mut trace = vec![f];
    let report = |stop, iterations, evaluations, f, trace| LbfgsReport {
        stop,
        iterations,
        evaluations,
        final_loss: f,
        loss_trace: trace,
    };
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return report(LbfgsStop::NonFinite, 0, evaluations, f, trace);
    }
    if settings.max_iters == 0 {
        return report(LbfgsStop::Budget, 0, evaluations, f, trace);
    }
    if max_abs(&g) <= tol {
        return report(LbfgsStop::Tolerance, 0, evaluations, f, trace);
    }

    let mut hist: VecDeque<Pair<T>> = VecDeque::with_capacity(history);
    let mut d = vec![T::zero(); n];
    for iter in 0..settings.max_iters {
        two_loop(&g, &hist, &mut d);
        let mut df0 = dot(&g, &d);
        if !(df0 < T::zero()) {
            hist.clear();
            d.iter_mut().zip(&g).for_each(|(d, g)| *d = -*g);
            df0 = dot(&g, &d);
        }
        let first = if hist.is_empty() {
            let norm = dot(&d, &d).sqrt();
            T::one().min(T::one() / norm)
        } else {
            T::one()
        };

        let x0 = params.to_vec();
        let mut ev = Evaluator {
            f: &mut loss_grad,
            x0: &x0,
            d: &d,
            x: vec![T::zero(); n],
            g: vec![T::zero(); n],
            evaluations: 0,
        };
        let outcome = strong_wolfe(&mut ev, f, df0, first, settings);
        evaluations += ev.evaluations;
        let accepted = match outcome {
            Search::Found(p) => Some((p, false)),
            Search::Failed(Some(p)) => Some((p, true)),
            Search::Failed(None) => None,
        };
        let Some((probe, weak)) = accepted else {
            return report(LbfgsStop::LineSearchFailed, iter, evaluations, f, trace);
        };

        // Re-evaluate when the accepted probe is not the last one evaluated.
        let mut g_new = vec![T::zero(); n];
        let mut x_new = vec![T::zero(); n];
        for ((x, x0), d) in x_new.iter_mut().zip(&x0).zip(&d) {
            *x = *x0 + probe.step * *d;
        }
        let f_new = if ev.x == x_new {
            g_new.copy_from_slice(&ev.g);
            probe.f
        } else {
            evaluations += 1;
            loss_grad(&x_new, &mut g_new)
        };

        let s: Vec<T> = x_new.iter().zip(&x0).map(|(a, b)| *a - *b).collect();
        let y: Vec<T> = g_new.iter().zip(&g).map(|(a, b)| *a - *b).collect();
        let sy = dot(&s, &y);
        if sy > T::epsilon() * dot(&y, &y) {
            if hist.len() == history {
                hist.pop_front();
            }
            hist.push_back(Pair { s, y, rho: T::one() / sy });
        }
        let decrease = f - f_new;
        params.copy_from_slice(&x_new);
        g = g_new;
        f = f_new;
        trace.push(f);

        if weak {
            return report(LbfgsStop::LineSearchFailed, iter + 1, evaluations, f, trace);
        }
        if max_abs(&g) <= tol || decrease <= tol {
            return report(LbfgsStop::Tolerance, iter + 1, evaluations, f, trace);
        }
    }
    report(LbfgsStop::Budget, settings.max_iters, evaluations, f, trace)
}
