//! Seeded collocation-point sampling and weight initialization.
//!
//! All randomness comes from ChaCha8 seeded via `seed_from_u64`, with a
//! separate stream per purpose so that changing the number of collocation
//! points never perturbs the initial weights (and vice versa).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::{MlpArchitecture, ParamVector};
use crate::problem::Interval;
use crate::scalar::Scalar;

/// Identity of the generator, written into every result document.
pub const RNG_IDENTITY: &str =
    "ChaCha8Rng (rand_chacha 0.3) seed_from_u64; stream 0 = weights, 1 = collocation, 2+i = resample i";

const STREAM_INIT: u64 = 0;
const STREAM_COLLOCATION: u64 = 1;
const STREAM_RESAMPLE_BASE: u64 = 2;

pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Sorted collocation points strictly inside `domain`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollocationSet {
    pub points: Vec<f64>,
    pub domain: Interval,
    pub seed: u64,
}

impl CollocationSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Latin hypercube sample: one uniform draw in each of `n` equal strata.
pub fn latin_hypercube(n: usize, domain: Interval, seed: u64) -> Result<CollocationSet> {
    latin_hypercube_stream(n, domain, seed, STREAM_COLLOCATION)
}

/// Fresh sample for the `iteration`-th resampling step of a run.
pub fn latin_hypercube_resample(
    n: usize,
    domain: Interval,
    seed: u64,
    iteration: u64,
) -> Result<CollocationSet> {
    latin_hypercube_stream(n, domain, seed, STREAM_RESAMPLE_BASE + iteration)
}

fn latin_hypercube_stream(
    n: usize,
    domain: Interval,
    seed: u64,
    stream: u64,
) -> Result<CollocationSet> {
    if n == 0 {
        return Err(Error::config("latin_hypercube: need at least one point"));
    }
    let mut rng = rng_for(seed, stream);
    let width = domain.length() / n as f64;
    let points = (0..n)
        .map(|i| {
            let lower = domain.lo + i as f64 * width;
            let upper = domain.lo + (i + 1) as f64 * width;
            loop {
                let u: f64 = rng.gen();
                let x = domain.lo + (i as f64 + u) * width;
                if x > domain.lo && x < domain.hi && x >= lower && x < upper {
                    break x;
                }
            }
        })
        .collect();
    Ok(CollocationSet {
        points,
        domain,
        seed,
    })
}

/// Glorot-uniform weights, zero biases.
pub fn init_params<T: Scalar>(arch: &MlpArchitecture, seed: u64) -> ParamVector<T> {
    let mut rng = rng_for(seed, STREAM_INIT);
    let mut params = ParamVector::zeros(arch);
    for layer in arch.layers() {
        let limit = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
        for w in &mut params.values[layer.weight_range()] {
            *w = T::c(rng.gen_range(-limit..limit));
        }
    }
    params
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn one_point_per_unit_stratum() {
        let dom = Interval::new(0.0, 4.0).unwrap();
        for seed in 0..20 {
            let cs = latin_hypercube(4, dom, seed).unwrap();
            for (i, x) in cs.points.iter().enumerate() {
                assert!(*x >= i as f64 && *x < (i + 1) as f64);
            }
        }
    }

    #[test]
    fn single_point_inside() {
        let dom = Interval::new(-1.5, 2.0).unwrap();
        let cs = latin_hypercube(1, dom, 3).unwrap();
        assert_eq!(cs.len(), 1);
        assert!(cs.points[0] > -1.5 && cs.points[0] < 2.0);
    }

    #[test]
    fn zero_points_rejected() {
        assert!(latin_hypercube(0, Interval::full(), 0).is_err());
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let dom = Interval::full();
        let a = latin_hypercube(100, dom, 42).unwrap();
        let b = latin_hypercube(100, dom, 42).unwrap();
        assert_eq!(a, b);
        for s in 0..100u64 {
            let x = latin_hypercube(100, dom, s).unwrap();
            let y = latin_hypercube(100, dom, s + 1000).unwrap();
            assert_ne!(x.points, y.points);
        }
    }

    #[test]
    fn stratification_exhaustive() {
        let dom = Interval::new(-PI, -PI / 3.0).unwrap();
        for n in 1..=1000usize {
            let cs = latin_hypercube(n, dom, n as u64).unwrap();
            let width = dom.length() / n as f64;
            assert_eq!(cs.len(), n);
            let mut counts = vec![0usize; n];
            for &x in &cs.points {
                assert!(x > dom.lo && x < dom.hi);
                let k = (0..n)
                    .find(|&k| x >= dom.lo + k as f64 * width && x < dom.lo + (k + 1) as f64 * width)
                    .expect("point in some stratum");
                counts[k] += 1;
            }
            assert!(counts.iter().all(|&c| c == 1), "n = {n}");
            assert!(cs.points.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn resampling_differs_from_initial_sample() {
        let dom = Interval::full();
        let a = latin_hypercube(20, dom, 5).unwrap();
        let b = latin_hypercube_resample(20, dom, 5, 0).unwrap();
        assert_ne!(a.points, b.points);
    }

    #[test]
    fn glorot_bounds_and_zero_biases() {
        let arch = MlpArchitecture::new(vec![50, 20]).unwrap();
        let p: ParamVector<f64> = init_params(&arch, 9);
        let layers = arch.layers();
        for layer in &layers {
            assert!(p.values[layer.bias_range()].iter().all(|&b| b == 0.0));
        }
        let first = (6.0f64 / 51.0).sqrt();
        assert!(p.values[layers[0].weight_range()]
            .iter()
            .all(|w| w.abs() <= first));
        assert!(p.values[layers[0].weight_range()].iter().any(|w| *w != 0.0));
        let q: ParamVector<f64> = init_params(&arch, 9);
        assert_eq!(p, q);
        let r: ParamVector<f64> = init_params(&arch, 10);
        assert_ne!(p, r);
    }
}
