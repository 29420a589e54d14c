//! Physics-informed loss and its exact parameter gradient.
//!
//! The forward pass propagates second-order jets `(u, u', u'')` for every
//! point at once, one matrix product per layer and jet slot. The reverse
//! pass walks the same program backwards, treating each jet slot as its own
//! intermediate variable, so the adjoint of the residual flows through the
//! `u''` channel into every weight.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::{mlp_forward_jet, LayerShape, MlpArchitecture, ParamVector};
use crate::problem::{residual_from_jet, source_f, BoundaryPoint};
use crate::sampling::CollocationSet;
use crate::scalar::Scalar;

/// Number of jet slots the loss needs: value, first and second derivative.
const CH: usize = 3;

/// How the residual and boundary sums are normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossReduction {
    /// Plain sums over collocation and boundary points.
    #[default]
    Sum,
    /// Each of the two sums divided by its point count.
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossAndGrad<T> {
    pub loss: T,
    pub grad: Vec<T>,
}

/// Reusable evaluator of the PINN loss for one architecture and point set.
#[derive(Debug, Clone)]
pub struct PinnObjective<T> {
    arch: MlpArchitecture,
    layers: Vec<LayerShape>,
    /// Collocation inputs followed by boundary inputs.
    xs: Vec<T>,
    n_colloc: usize,
    sources: Vec<T>,
    targets: Vec<T>,
    reduction: LossReduction,
    // Per layer: pre-activation jets (rows = point * CH + slot).
    pre: Vec<Vec<T>>,
    // Per layer input jets; entry 0 is the seeded network input.
    acts: Vec<Vec<T>>,
    adj: Vec<T>,
    adj_in: Vec<T>,
    out_seed: Vec<T>,
}

impl<T: Scalar> PinnObjective<T> {
    pub fn new(
        arch: &MlpArchitecture,
        colloc: &CollocationSet,
        boundary: &[BoundaryPoint],
        reduction: LossReduction,
    ) -> Result<Self> {
        if colloc.is_empty() {
            return Err(Error::config("PINN loss needs at least one collocation point"));
        }
        if boundary.is_empty() {
            return Err(Error::config("PINN loss needs at least one boundary point"));
        }
        let mut obj = PinnObjective {
            arch: arch.clone(),
            layers: arch.layers(),
            xs: Vec::new(),
            n_colloc: 0,
            sources: Vec::new(),
            targets: boundary.iter().map(|b| T::c(b.value)).collect(),
            reduction,
            pre: Vec::new(),
            acts: Vec::new(),
            adj: Vec::new(),
            adj_in: Vec::new(),
            out_seed: Vec::new(),
        };
        obj.set_points(&colloc.points, boundary);
        Ok(obj)
    }

    /// Replaces the collocation points, keeping the boundary data.
    pub fn set_collocation(&mut self, colloc: &CollocationSet) -> Result<()> {
        if colloc.is_empty() {
            return Err(Error::config("PINN loss needs at least one collocation point"));
        }
        let boundary: Vec<BoundaryPoint> = self.xs[self.n_colloc..]
            .iter()
            .zip(&self.targets)
            .map(|(x, v)| BoundaryPoint {
                x: x.to_f64_lossy(),
                value: v.to_f64_lossy(),
            })
            .collect();
        self.set_points(&colloc.points, &boundary);
        Ok(())
    }

    fn set_points(&mut self, colloc: &[f64], boundary: &[BoundaryPoint]) {
        self.n_colloc = colloc.len();
        self.xs = colloc
            .iter()
            .copied()
            .chain(boundary.iter().map(|b| b.x))
            .map(T::c)
            .collect();
        self.sources = colloc.iter().map(|&x| source_f(T::c(x))).collect();
        let rows = self.xs.len() * CH;
        self.pre = self
            .layers
            .iter()
            .map(|l| vec![T::zero(); rows * l.fan_out])
            .collect();
        self.acts = self
            .layers
            .iter()
            .map(|l| vec![T::zero(); rows * l.fan_in])
            .collect();
        let input = &mut self.acts[0];
        for (p, &x) in self.xs.iter().enumerate() {
            input[p * CH] = x;
            input[p * CH + 1] = T::one();
            input[p * CH + 2] = T::zero();
        }
        let widest = self.arch.max_width();
        self.adj = vec![T::zero(); rows * widest];
        self.adj_in = vec![T::zero(); rows * widest];
        self.out_seed = vec![T::zero(); rows];
    }

    pub fn arch(&self) -> &MlpArchitecture {
        &self.arch
    }

    pub fn dim(&self) -> usize {
        self.arch.param_count()
    }

    pub fn n_collocation(&self) -> usize {
        self.n_colloc
    }

    fn weights(&self) -> (T, T) {
        match self.reduction {
            LossReduction::Sum => (T::one(), T::one()),
            LossReduction::Mean => (
                T::one() / T::c(self.n_colloc as f64),
                T::one() / T::c(self.targets.len() as f64),
            ),
        }
    }

    fn forward(&mut self, params: &[T]) {
        let rows = self.xs.len() * CH;
        let last = self.layers.len() - 1;
        for li in 0..self.layers.len() {
            let layer = self.layers[li];
            let w = &params[layer.weight_range()];
            let b = &params[layer.bias_range()];
            let z = &mut self.pre[li];
            T::gemm(
                rows,
                layer.fan_in,
                layer.fan_out,
                T::one(),
                &self.acts[li],
                layer.fan_in as isize,
                1,
                w,
                1,
                layer.fan_in as isize,
                T::zero(),
                z,
                layer.fan_out as isize,
                1,
            );
            for point in z.chunks_exact_mut(CH * layer.fan_out) {
                for (zv, bias) in point[..layer.fan_out].iter_mut().zip(b) {
                    *zv += *bias;
                }
            }
            if li == last {
                break;
            }
            let width = layer.fan_out;
            let (z, next) = (&self.pre[li], &mut self.acts[li + 1]);
            for (zp, ap) in z.chunks_exact(CH * width).zip(next.chunks_exact_mut(CH * width)) {
                let (z0, rest) = zp.split_at(width);
                let (z1, z2) = rest.split_at(width);
                let (a0, rest) = ap.split_at_mut(width);
                let (a1, a2) = rest.split_at_mut(width);
                for u in 0..width {
                    let t = z0[u].tanh();
                    let s = T::one() - t * t;
                    let p = -T::c(2.0) * t * s;
                    a0[u] = t;
                    a1[u] = s * z1[u];
                    a2[u] = p * z1[u] * z1[u] + s * z2[u];
                }
            }
        }
    }

    /// Loss and the output-layer adjoint seeds.
    fn loss_from_output(&mut self) -> T {
        let out = &self.pre[self.layers.len() - 1];
        let (wc, wb) = self.weights();
        let two = T::c(2.0);
        let mut loss = T::zero();
        self.out_seed.iter_mut().for_each(|v| *v = T::zero());
        for p in 0..self.n_colloc {
            let r = out[p * CH + 2] + self.sources[p];
            loss += wc * r * r;
            self.out_seed[p * CH + 2] = two * wc * r;
        }
        for (q, target) in self.targets.iter().enumerate() {
            let p = self.n_colloc + q;
            let e = out[p * CH] - *target;
            loss += wb * e * e;
            self.out_seed[p * CH] = two * wb * e;
        }
        loss
    }

    /// Loss value only.
    pub fn loss(&mut self, params: &[T]) -> T {
        assert_eq!(params.len(), self.dim(), "parameter length");
        self.forward(params);
        self.loss_from_output()
    }

    /// Loss value, with the gradient written into `grad`.
    pub fn loss_and_grad_into(&mut self, params: &[T], grad: &mut [T]) -> T {
        assert_eq!(params.len(), self.dim(), "parameter length");
        assert_eq!(grad.len(), self.dim(), "gradient length");
        self.forward(params);
        let loss = self.loss_from_output();
        let rows = self.xs.len() * CH;
        let n_layers = self.layers.len();

        // Adjoint of the current layer's pre-activations, rows x fan_out.
        self.adj[..rows].copy_from_slice(&self.out_seed);
        for li in (0..n_layers).rev() {
            let layer = self.layers[li];
            let (fi, fo) = (layer.fan_in, layer.fan_out);
            let adj = &self.adj[..rows * fo];
            // dL/dW = adj^T * acts
            T::gemm(
                fo,
                rows,
                fi,
                T::one(),
                adj,
                1,
                fo as isize,
                &self.acts[li],
                fi as isize,
                1,
                T::zero(),
                &mut grad[layer.weight_range()],
                fi as isize,
                1,
            );
            let gb = &mut grad[layer.bias_range()];
            gb.iter_mut().for_each(|g| *g = T::zero());
            for point in adj.chunks_exact(CH * fo) {
                for (g, a) in gb.iter_mut().zip(&point[..fo]) {
                    *g += *a;
                }
            }
            if li == 0 {
                break;
            }
            // Adjoint of this layer's inputs: adj * W.
            let adj_in = &mut self.adj_in[..rows * fi];
            T::gemm(
                rows,
                fo,
                fi,
                T::one(),
                adj,
                fo as isize,
                1,
                &params[layer.weight_range()],
                fi as isize,
                1,
                T::zero(),
                adj_in,
                fi as isize,
                1,
            );
            // Through the tanh of the previous layer.
            // acts[li] slot 0 already holds tanh of pre[li - 1] slot 0.
            let z = &self.pre[li - 1];
            let act = &self.acts[li];
            let width = fi;
            let adj_out = &mut self.adj[..rows * width];
            for (((zp, tp), ap), out) in z
                .chunks_exact(CH * width)
                .zip(act.chunks_exact(CH * width))
                .zip(self.adj_in[..rows * width].chunks_exact(CH * width))
                .zip(adj_out.chunks_exact_mut(CH * width))
            {
                for u in 0..width {
                    let (z1, z2) = (zp[width + u], zp[2 * width + u]);
                    let (b0, b1, b2) = (ap[u], ap[width + u], ap[2 * width + u]);
                    let t = tp[u];
                    let t2 = t * t;
                    let s = T::one() - t2;
                    let p = -T::c(2.0) * t * s;
                    let t3 = s * (T::c(6.0) * t2 - T::c(2.0));
                    out[u] = b0 * s + b1 * z1 * p + b2 * (z1 * z1 * t3 + z2 * p);
                    out[width + u] = b1 * s + b2 * T::c(2.0) * p * z1;
                    out[2 * width + u] = b2 * s;
                }
            }
        }
        loss
    }

    pub fn loss_and_grad(&mut self, params: &[T]) -> LossAndGrad<T> {
        let mut grad = vec![T::zero(); self.dim()];
        let loss = self.loss_and_grad_into(params, &mut grad);
        LossAndGrad { loss, grad }
    }
}

/// PINN loss (plain sums) and its gradient at `params`.
pub fn grad_pinn_loss<T: Scalar>(
    arch: &MlpArchitecture,
    params: &ParamVector<T>,
    colloc: &CollocationSet,
    boundary: &[BoundaryPoint],
) -> Result<LossAndGrad<T>> {
    params.check(arch)?;
    let mut obj = PinnObjective::new(arch, colloc, boundary, LossReduction::Sum)?;
    Ok(obj.loss_and_grad(params.as_slice()))
}

/// Point-by-point evaluation of the same loss through full fourth-order
/// jets. Slower; used to cross-check the batched path.
pub fn pinn_loss_pointwise<T: Scalar>(
    arch: &MlpArchitecture,
    params: &ParamVector<T>,
    colloc: &CollocationSet,
    boundary: &[BoundaryPoint],
    reduction: LossReduction,
) -> Result<T> {
    if colloc.is_empty() || boundary.is_empty() {
        return Err(Error::config("PINN loss needs collocation and boundary points"));
    }
    let mut residual = T::zero();
    for &x in &colloc.points {
        let x = T::c(x);
        let r = residual_from_jet(&mlp_forward_jet(arch, params, x)?, x);
        residual += r * r;
    }
    let mut mismatch = T::zero();
    for b in boundary {
        let e = mlp_forward_jet(arch, params, T::c(b.x))?.v - T::c(b.value);
        mismatch += e * e;
    }
    Ok(match reduction {
        LossReduction::Sum => residual + mismatch,
        LossReduction::Mean => {
            residual / T::c(colloc.len() as f64) + mismatch / T::c(boundary.len() as f64)
        }
    })
}

/// Central-difference gradient of `loss` at `params`, one pair of loss
/// evaluations per coordinate.
pub fn fd_gradient<T, F>(
    arch: &MlpArchitecture,
    params: &ParamVector<T>,
    mut loss: F,
    step: T,
) -> Result<Vec<T>>
where
    T: Scalar,
    F: FnMut(&[T]) -> T,
{
    if !(step > T::zero()) {
        return Err(Error::contract("fd_gradient: step must be positive"));
    }
    params.check(arch)?;
    let mut work = params.values.clone();
    let two_h = step + step;
    Ok((0..work.len())
        .map(|i| {
            let orig = work[i];
            work[i] = orig + step;
            let up = loss(&work);
            work[i] = orig - step;
            let down = loss(&work);
            work[i] = orig;
            (up - down) / two_h
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{source_f, Interval};
    use crate::sampling::{init_params, latin_hypercube};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn colloc(points: Vec<f64>) -> CollocationSet {
        CollocationSet {
            points,
            domain: Interval::full(),
            seed: 0,
        }
    }

    #[test]
    fn zero_network_loss_is_source_squared() {
        let arch = MlpArchitecture::new(vec![3]).unwrap();
        let p = ParamVector::<f64>::zeros(&arch);
        let x1 = 0.9;
        let lg = grad_pinn_loss(
            &arch,
            &p,
            &colloc(vec![x1]),
            &[BoundaryPoint { x: -PI, value: 0.0 }],
        )
        .unwrap();
        assert!((lg.loss - source_f(x1).powi(2)).abs() < 1e-12);
        assert_eq!(lg.grad.len(), arch.param_count());
    }

    #[test]
    fn empty_sets_are_configuration_errors() {
        let arch = MlpArchitecture::new(vec![2]).unwrap();
        let p = ParamVector::<f64>::zeros(&arch);
        let b = [BoundaryPoint { x: 0.0, value: 0.0 }];
        assert!(matches!(
            grad_pinn_loss(&arch, &p, &colloc(vec![]), &b),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            grad_pinn_loss(&arch, &p, &colloc(vec![0.5]), &[]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn fd_gradient_of_quadratic_and_constant() {
        let arch = MlpArchitecture::new(vec![1]).unwrap();
        let p = ParamVector::from_values(&arch, vec![1.0f64, 2.0, 0.0, 0.0]).unwrap();
        let g = fd_gradient(&arch, &p, |t| t.iter().map(|v| v * v).sum(), 1e-5).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] - 4.0).abs() < 1e-8);
        let c = fd_gradient(&arch, &p, |_| 3.0, 1e-5).unwrap();
        assert!(c.iter().all(|v| v.abs() < 1e-12));
        assert!(fd_gradient(&arch, &p, |_| 0.0, 0.0).is_err());
    }

    #[test]
    fn batched_loss_matches_pointwise_reference() {
        let arch = MlpArchitecture::new(vec![6, 5]).unwrap();
        let p: ParamVector<f64> = init_params(&arch, 3);
        let dom = Interval::new(-PI, -PI / 3.0).unwrap();
        let cs = latin_hypercube(12, dom, 8).unwrap();
        let b = crate::problem::boundary_targets(dom, Interval::full()).unwrap();
        for red in [LossReduction::Sum, LossReduction::Mean] {
            let mut obj = PinnObjective::new(&arch, &cs, &b, red).unwrap();
            let fast = obj.loss(p.as_slice());
            let slow = pinn_loss_pointwise(&arch, &p, &cs, &b, red).unwrap();
            assert!((fast - slow).abs() <= 1e-12 * slow.abs().max(1.0));
        }
    }

    #[test]
    fn set_collocation_keeps_boundary() {
        let arch = MlpArchitecture::new(vec![4]).unwrap();
        let p: ParamVector<f64> = init_params(&arch, 1);
        let b = [BoundaryPoint { x: -1.0, value: 0.25 }, BoundaryPoint { x: 1.0, value: -0.5 }];
        let mut obj = PinnObjective::new(&arch, &colloc(vec![0.0, 0.2]), &b, LossReduction::Sum).unwrap();
        let other = colloc(vec![0.3, 0.5, 0.7]);
        obj.set_collocation(&other).unwrap();
        let slow = pinn_loss_pointwise(&arch, &p, &other, &b, LossReduction::Sum).unwrap();
        assert!((obj.loss(p.as_slice()) - slow).abs() < 1e-12);
        assert_eq!(obj.n_collocation(), 3);
    }

    // With w1 = 0 the network is u = w2*tanh(b1) + b2 for every x, so u'' = 0
    // and a collocation point at x = 0 (where f = 0) contributes nothing.
    // The loss reduces to the boundary term (u(1) - 0)^2 = (w2*t + b2)^2, the
    // same shape as (w*x + b)^2 with x = t.
    #[test]
    fn boundary_only_gradient_by_hand() {
        let arch = MlpArchitecture::new(vec![1]).unwrap();
        let (b1, w2, b2) = (-0.2f64, 1.3, 0.4);
        let p = ParamVector::from_values(&arch, vec![0.0, b1, w2, b2]).unwrap();
        let x = 1.0;
        let t = b1.tanh();
        let e = w2 * t + b2;
        let s = 1.0 - t * t;
        let lg = grad_pinn_loss(&arch, &p, &colloc(vec![0.0]), &[BoundaryPoint { x, value: 0.0 }]).unwrap();
        assert!((lg.loss - e * e).abs() < 1e-15);
        let hand = [2.0 * e * w2 * s * x, 2.0 * e * w2 * s, 2.0 * e * t, 2.0 * e];
        for i in 0..4 {
            assert!((lg.grad[i] - hand[i]).abs() < 1e-14, "i = {i}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for case in 0..50 {
            let depth = rng.gen_range(1..=3);
            let widths: Vec<usize> = (0..depth).map(|_| rng.gen_range(1..=20)).collect();
            let arch = MlpArchitecture::new(widths).unwrap();
            let p: ParamVector<f64> = init_params(&arch, case);
            let lo = rng.gen_range(-PI..0.0);
            let hi = rng.gen_range(lo + 0.3..PI.min(lo + 4.0));
            let dom = Interval::new(lo, hi).unwrap();
            let cs = latin_hypercube(rng.gen_range(1..=10), dom, case).unwrap();
            let b = crate::problem::boundary_targets(dom, Interval::full()).unwrap();
            let mut obj = PinnObjective::new(&arch, &cs, &b, LossReduction::Sum).unwrap();
            let lg = obj.loss_and_grad(p.as_slice());
            let fd = fd_gradient(&arch, &p, |q| obj.loss(q), 1e-5).unwrap();
            // Central differences of a loss of size L carry rounding noise of
            // about eps * L / h, which exceeds 1e-6 relative on small
            // coordinates; accept either bound.
            let floor = 4.0 * f64::EPSILON * lg.loss / 1e-5;
            for (i, (g, f)) in lg.grad.iter().zip(&fd).enumerate() {
                if g.abs() > 1e-8 && f.abs() > 1e-8 {
                    let rel = (g - f).abs() / g.abs().max(f.abs());
                    assert!(rel <= 1e-6 || (g - f).abs() <= floor, "case {case} coord {i}: {g} vs {f}");
                }
            }
        }
    }

    #[test]
    fn exact_fit_has_zero_gradient() {
        // One-unit net u = w2*tanh(w1*x+b1)+b2 with w1 = 0 gives u = w2*tanh(b1)+b2,
        // u'' = 0. At x = 0 the source is 0, so the residual vanishes; choose the
        // boundary target equal to u(0). Loss is 0 and so is the gradient.
        let arch = MlpArchitecture::new(vec![1]).unwrap();
        let p = ParamVector::from_values(&arch, vec![0.0f64, 0.3, 0.8, 0.1]).unwrap();
        let u0 = 0.8 * 0.3f64.tanh() + 0.1;
        let lg = grad_pinn_loss(&arch, &p, &colloc(vec![0.0]), &[BoundaryPoint { x: 0.0, value: u0 }]).unwrap();
        assert!(lg.loss.abs() < 1e-30);
        assert!(lg.grad.iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn f32_path_agrees_with_f64() {
        let arch = MlpArchitecture::new(vec![8]).unwrap();
        let p64: ParamVector<f64> = init_params(&arch, 4);
        let p32: ParamVector<f32> = p64.cast();
        let cs = latin_hypercube(10, Interval::full(), 4).unwrap();
        let b = crate::problem::boundary_targets(Interval::full(), Interval::full()).unwrap();
        let l64 = grad_pinn_loss(&arch, &p64, &cs, &b).unwrap();
        let l32 = grad_pinn_loss(&arch, &p32, &cs, &b).unwrap();
        assert!(((l32.loss as f64) - l64.loss).abs() <= 1e-4 * l64.loss);
    }
}
