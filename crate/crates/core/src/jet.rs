//! Fourth-order jets: a value together with its first four derivatives
//! with respect to one scalar input.

use std::ops::{Add, Mul};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Value and derivatives `d^k/dx^k` for `k = 1..=4`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Jet4<T> {
    pub v: T,
    pub d1: T,
    pub d2: T,
    pub d3: T,
    pub d4: T,
}

impl<T: Scalar> Jet4<T> {
    pub fn new(v: T, d1: T, d2: T, d3: T, d4: T) -> Self {
        Jet4 { v, d1, d2, d3, d4 }
    }

    /// Jet of a quantity that does not depend on the input.
    pub fn constant(v: T) -> Self {
        Jet4::new(v, T::zero(), T::zero(), T::zero(), T::zero())
    }

    /// Jet of the independent variable itself, seeded at `x`.
    pub fn variable(x: T) -> Self {
        Jet4::new(x, T::one(), T::zero(), T::zero(), T::zero())
    }

    /// Derivative of order `k` (0 is the value).
    pub fn order(&self, k: usize) -> T {
        match k {
            0 => self.v,
            1 => self.d1,
            2 => self.d2,
            3 => self.d3,
            4 => self.d4,
            _ => panic!("jet order {k} exceeds 4"),
        }
    }

    pub fn as_array(&self) -> [T; 5] {
        [self.v, self.d1, self.d2, self.d3, self.d4]
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|c| c.is_finite())
    }

    pub fn scale(self, s: T) -> Self {
        Jet4::new(s * self.v, s * self.d1, s * self.d2, s * self.d3, s * self.d4)
    }

    /// Composes an outer scalar function with this jet given the outer
    /// function's derivatives `f1..f4` evaluated at `self.v`.
    pub fn compose(self, value: T, f1: T, f2: T, f3: T, f4: T) -> Self {
        let (g1, g2, g3, g4) = (self.d1, self.d2, self.d3, self.d4);
        let g1_2 = g1 * g1;
        let three = T::c(3.0);
        let four = T::c(4.0);
        let six = T::c(6.0);
        Jet4 {
            v: value,
            d1: f1 * g1,
            d2: f2 * g1_2 + f1 * g2,
            d3: f3 * g1_2 * g1 + three * f2 * g1 * g2 + f1 * g3,
            d4: f4 * g1_2 * g1_2
                + six * f3 * g1_2 * g2
                + f2 * (three * g2 * g2 + four * g1 * g3)
                + f1 * g4,
        }
    }
}

impl<T: Scalar> Add for Jet4<T> {
    type Output = Jet4<T>;

    fn add(self, o: Self) -> Self {
        Jet4::new(
            self.v + o.v,
            self.d1 + o.d1,
            self.d2 + o.d2,
            self.d3 + o.d3,
            self.d4 + o.d4,
        )
    }
}

impl<T: Scalar> Mul<T> for Jet4<T> {
    type Output = Jet4<T>;

    fn mul(self, s: T) -> Self {
        self.scale(s)
    }
}

/// Derivatives of `tanh` at a point, written in terms of `t = tanh(z)`.
///
/// Returns `(t, t', t'', t''', t'''')`.
#[inline]
pub fn tanh_derivatives<T: Scalar>(z: T) -> (T, T, T, T, T) {
    let t = z.tanh();
    let t2 = t * t;
    let s = T::one() - t2;
    let two = T::c(2.0);
    (
        t,
        s,
        -two * t * s,
        s * (T::c(6.0) * t2 - two),
        s * (T::c(16.0) * t - T::c(24.0) * t2 * t),
    )
}

/// Affine combination `sum_i w_i * in_i + b` of jets. The bias only
/// reaches the value slot.
pub fn jet_affine<T: Scalar>(inputs: &[Jet4<T>], weights: &[T], bias: T) -> Result<Jet4<T>> {
    if inputs.len() != weights.len() {
        return Err(Error::contract(format!(
            "jet_affine: {} input jets but {} weights",
            inputs.len(),
            weights.len()
        )));
    }
    Ok(affine_unchecked(inputs, weights, bias))
}

#[inline]
pub(crate) fn affine_unchecked<T: Scalar>(inputs: &[Jet4<T>], weights: &[T], bias: T) -> Jet4<T> {
    let mut out = Jet4::constant(bias);
    for (j, &w) in inputs.iter().zip(weights) {
        out.v += w * j.v;
        out.d1 += w * j.d1;
        out.d2 += w * j.d2;
        out.d3 += w * j.d3;
        out.d4 += w * j.d4;
    }
    out
}

/// Jet of `tanh(g)` from the jet of `g`.
pub fn jet_tanh<T: Scalar>(j: Jet4<T>) -> Jet4<T> {
    let (t, f1, f2, f3, f4) = tanh_derivatives(j.v);
    j.compose(t, f1, f2, f3, f4)
}
