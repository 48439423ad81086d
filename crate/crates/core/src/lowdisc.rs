//! Scrambled low-discrepancy sequence used for initial designs and the
//! quasi-random search baseline.
//!
//! The generator is the Kronecker sequence built on the generalized golden
//! ratio (the positive root of `x^(d+1) = x + 1`), randomized by a seeded
//! Cranley-Patterson rotation. It is dimension-agnostic, deterministic per
//! seed, and well-stratified in every axis-aligned projection.

use crate::acquisition::BoundBox;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct LowDiscrepancy {
    alpha: Vec<f64>,
    shift: Vec<f64>,
    index: u64,
}

impl LowDiscrepancy {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim >= 1);
        // positive root of x^(d+1) = x + 1 by Newton iteration
        let d = dim as f64;
        let mut phi: f64 = 1.5;
        for _ in 0..64 {
            let f = phi.powf(d + 1.0) - phi - 1.0;
            let fp = (d + 1.0) * phi.powf(d) - 1.0;
            phi -= f / fp;
        }
        let mut alpha = Vec::with_capacity(dim);
        let mut inv: f64 = 1.0;
        for _ in 0..dim {
            inv /= phi;
            alpha.push(inv.fract());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        Self {
            alpha,
            shift,
            index: 0,
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    /// Next point of the rotated sequence in `[0, 1)^d`.
    pub fn next_unit(&mut self) -> Vec<f64> {
        self.index += 1;
        let n = self.index as f64;
        self.alpha
            .iter()
            .zip(&self.shift)
            .map(|(a, s)| (s + n * a).fract())
            .collect()
    }

    /// Next point mapped into the box.
    pub fn next_in_box(&mut self, bounds: &BoundBox) -> Vec<f64> {
        debug_assert_eq!(bounds.dim(), self.dim());
        self.next_unit()
            .into_iter()
            .zip(bounds.lo().iter().zip(bounds.hi()))
            .map(|(u, (l, h))| l + (h - l) * u)
            .collect()
    }
}
