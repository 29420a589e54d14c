//! Scalar-input, scalar-output tanh networks and their jet evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::{affine_unchecked, jet_tanh, Jet4};
use crate::scalar::Scalar;

/// Dense network `R -> R`: tanh on every hidden layer, identity on the
/// output layer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MlpArchitecture {
    hidden_widths: Vec<usize>,
}

/// Where one dense layer lives inside a flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Offset of the `fan_out x fan_in` row-major weight block.
    pub weights: usize,
    /// Offset of the `fan_out` biases, directly after the weights.
    pub biases: usize,
}

impl LayerShape {
    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.weights..self.weights + self.fan_in * self.fan_out
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        self.biases..self.biases + self.fan_out
    }
}

impl MlpArchitecture {
    pub fn new(hidden_widths: Vec<usize>) -> Result<Self> {
        if hidden_widths.is_empty() {
            return Err(Error::config("network needs at least one hidden layer"));
        }
        if hidden_widths.contains(&0) {
            return Err(Error::config("hidden layer widths must be positive"));
        }
        Ok(MlpArchitecture { hidden_widths })
    }

    /// `depth` hidden layers of `width` units each.
    pub fn uniform(depth: usize, width: usize) -> Result<Self> {
        Self::new(vec![width; depth])
    }

    pub fn hidden_widths(&self) -> &[usize] {
        &self.hidden_widths
    }

    pub fn depth(&self) -> usize {
        self.hidden_widths.len()
    }

    /// Layer sizes including the scalar input and output.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden_widths.len() + 2);
        sizes.push(1);
        sizes.extend_from_slice(&self.hidden_widths);
        sizes.push(1);
        sizes
    }

    pub fn layers(&self) -> Vec<LayerShape> {
        let sizes = self.layer_sizes();
        let mut offset = 0;
        sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let shape = LayerShape {
                    fan_in,
                    fan_out,
                    weights: offset,
                    biases: offset + fan_in * fan_out,
                };
                offset += fan_in * fan_out + fan_out;
                shape
            })
            .collect()
    }

    /// Total number of trainable parameters.
    pub fn param_count(&self) -> usize {
        self.layer_sizes()
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    pub fn max_width(&self) -> usize {
        self.hidden_widths.iter().copied().max().unwrap_or(1)
    }
}

/// Flat parameter storage. Layer by layer: the row-major weight matrix
/// (one row per output unit), then the biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector<T> {
    pub values: Vec<T>,
}

impl<T: Scalar> ParamVector<T> {
    pub fn zeros(arch: &MlpArchitecture) -> Self {
        ParamVector {
            values: vec![T::zero(); arch.param_count()],
        }
    }

    pub fn from_values(arch: &MlpArchitecture, values: Vec<T>) -> Result<Self> {
        let p = ParamVector { values };
        p.check(arch)?;
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn check(&self, arch: &MlpArchitecture) -> Result<()> {
        let expected = arch.param_count();
        if self.values.len() != expected {
            return Err(Error::contract(format!(
                "parameter vector has {} entries, architecture needs {expected}",
                self.values.len()
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Element-wise conversion to another scalar type.
    pub fn cast<U: Scalar>(&self) -> ParamVector<U> {
        ParamVector {
            values: self
                .values
                .iter()
                .map(|v| U::c(v.to_f64_lossy()))
                .collect(),
        }
    }
}

/// Jet of the network output at `x`, seeded with `dx/dx = 1`.
pub fn mlp_forward_jet<T: Scalar>(
    arch: &MlpArchitecture,
    params: &ParamVector<T>,
    x: T,
) -> Result<Jet4<T>> {
    params.check(arch)?;
    let p = params.as_slice();
    let layers = arch.layers();
    let last = layers.len() - 1;
    let mut current = vec![Jet4::variable(x)];
    let mut next = Vec::with_capacity(arch.max_width());
    for (li, layer) in layers.iter().enumerate() {
        next.clear();
        let w = &p[layer.weight_range()];
        let b = &p[layer.bias_range()];
        for unit in 0..layer.fan_out {
            let row = &w[unit * layer.fan_in..(unit + 1) * layer.fan_in];
            let z = affine_unchecked(&current, row, b[unit]);
            next.push(if li == last { z } else { jet_tanh(z) });
        }
        std::mem::swap(&mut current, &mut next);
    }
    Ok(current[0])
}

/// Plain forward pass over a batch of inputs.
pub fn mlp_forward_values<T: Scalar>(
    arch: &MlpArchitecture,
    params: &ParamVector<T>,
    xs: &[T],
) -> Result<Vec<T>> {
    params.check(arch)?;
    let p = params.as_slice();
    let n = xs.len();
    let mut act: Vec<T> = xs.to_vec();
    let layers = arch.layers();
    let last = layers.len() - 1;
    for (li, layer) in layers.iter().enumerate() {
        let mut out = vec![T::zero(); n * layer.fan_out];
        for row in out.chunks_exact_mut(layer.fan_out) {
            row.copy_from_slice(&p[layer.bias_range()]);
        }
        // out (n x fan_out) += act (n x fan_in) * W^T
        T::gemm(
            n,
            layer.fan_in,
            layer.fan_out,
            T::one(),
            &act,
            layer.fan_in as isize,
            1,
            &p[layer.weight_range()],
            1,
            layer.fan_in as isize,
            T::one(),
            &mut out,
            layer.fan_out as isize,
            1,
        );
        if li != last {
            out.iter_mut().for_each(|v| *v = v.tanh());
        }
        act = out;
    }
    Ok(act)
}

/// Central finite-difference estimates of derivatives 1-4 of the network
/// output at `x`, from value evaluations only. The step grows with the order
/// to balance truncation against rounding.
pub fn fd_jet(arch: &MlpArchitecture, params: &ParamVector<f64>, x: f64) -> Result<Jet4<f64>> {
    let at = |h: f64| -> Result<[f64; 5]> {
        let xs = [x - 2.0 * h, x - h, x, x + h, x + 2.0 * h];
        let v = mlp_forward_values(arch, params, &xs)?;
        Ok([v[0], v[1], v[2], v[3], v[4]])
    };
    let (h1, h2, h3, h4) = (1e-5, 1e-3, 3e-3, 5e-3);
    let f1 = at(h1)?;
    let f2 = at(h2)?;
    let f3 = at(h3)?;
    let f4 = at(h4)?;
    Ok(Jet4::new(
        f1[2],
        (f1[3] - f1[1]) / (2.0 * h1),
        (f2[3] - 2.0 * f2[2] + f2[1]) / (h2 * h2),
        (f3[4] - 2.0 * f3[3] + 2.0 * f3[1] - f3[0]) / (2.0 * h3 * h3 * h3),
        (f4[4] - 4.0 * f4[3] + 6.0 * f4[2] - 4.0 * f4[1] + f4[0]) / (h4 * h4 * h4 * h4),
    ))
}

/// Worst relative discrepancy between a jet and its finite-difference
/// estimate, per order 1-4, over well-conditioned orders only: those with
/// `|d_k| >= 1e-3 * max(1, |v|, |d_1|, .., |d_4|)`. Orders below that floor
/// report 0.
pub fn jet_fd_discrepancy(jet: &Jet4<f64>, fd: &Jet4<f64>) -> [f64; 4] {
    let scale = jet.as_array().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut out = [0.0; 4];
    for k in 1..=4 {
        let (a, b) = (jet.order(k), fd.order(k));
        if a.abs() >= 1e-3 * scale {
            out[k - 1] = (a - b).abs() / a.abs();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::init_params;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn param_count_formula() {
        let arch = MlpArchitecture::uniform(2, 50).unwrap();
        // 1*50+50 + 50*50+50 + 50*1+1
        assert_eq!(arch.param_count(), 100 + 2550 + 51);
        let layers = arch.layers();
        assert_eq!(layers.len(), 3);
        assert_eq!(layers[1].weights, 100);
        assert_eq!(layers[1].biases, 100 + 2500);
        assert_eq!(layers[2].bias_range().end, arch.param_count());
    }

    #[test]
    fn architecture_validation() {
        assert!(MlpArchitecture::new(vec![]).is_err());
        assert!(MlpArchitecture::new(vec![3, 0]).is_err());
    }

    #[test]
    fn zero_params_give_zero_jet() {
        let arch = MlpArchitecture::new(vec![4, 3]).unwrap();
        let p = ParamVector::<f64>::zeros(&arch);
        for x in [-2.0, 0.0, 1.3] {
            assert_eq!(mlp_forward_jet(&arch, &p, x).unwrap(), Jet4::constant(0.0));
        }
    }

    #[test]
    fn single_unit_network_is_tanh() {
        let arch = MlpArchitecture::new(vec![1]).unwrap();
        // w1, b1, w2, b2
        let p = ParamVector::from_values(&arch, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let j = mlp_forward_jet(&arch, &p, 0.0).unwrap();
        assert_eq!(j, Jet4::new(0.0, 1.0, 0.0, -2.0, 0.0));
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let arch = MlpArchitecture::new(vec![2]).unwrap();
        let p = ParamVector { values: vec![0.0f64; 3] };
        assert!(matches!(
            mlp_forward_jet(&arch, &p, 0.0),
            Err(Error::Contract(_))
        ));
        assert!(ParamVector::from_values(&arch, vec![0.0f64; 6]).is_err());
    }

    #[test]
    fn batched_values_match_jets() {
        let arch = MlpArchitecture::new(vec![5, 4]).unwrap();
        let values: Vec<f64> = (0..arch.param_count())
            .map(|i| ((i * 7919) % 97) as f64 / 48.5 - 1.0)
            .collect();
        let p = ParamVector::from_values(&arch, values).unwrap();
        let xs = [-2.0, -0.5, 0.0, 0.7, 3.0];
        let batch = mlp_forward_values(&arch, &p, &xs).unwrap();
        for (x, v) in xs.iter().zip(batch) {
            let j = mlp_forward_jet(&arch, &p, *x).unwrap();
            assert!((j.v - v).abs() < 1e-12);
        }
    }

    #[test]
    fn jets_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut checked = [0usize; 4];
        for case in 0..100u64 {
            let depth = rng.gen_range(1..=3);
            let widths: Vec<usize> = (0..depth).map(|_| rng.gen_range(1..=20)).collect();
            let arch = MlpArchitecture::new(widths).unwrap();
            let p: ParamVector<f64> = init_params(&arch, case);
            let x = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            let jet = mlp_forward_jet(&arch, &p, x).unwrap();
            let fd = fd_jet(&arch, &p, x).unwrap();
            let d = jet_fd_discrepancy(&jet, &fd);
            for k in 0..4 {
                let tol = if k < 2 { 1e-5 } else { 1e-3 };
                assert!(d[k] <= tol, "case {case} order {}: {:e}", k + 1, d[k]);
                checked[k] += (d[k] > 0.0) as usize;
            }
        }
        // most triples are well conditioned at every order
        assert!(checked.iter().all(|&c| c >= 80), "{checked:?}");
    }
}
