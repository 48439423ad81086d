//! Synthetic benchmark objectives, all in maximization convention.
//!
//! `branin` embeds the two-dimensional Branin function into a higher
//! dimensional latent space through a fixed orthonormal linear map, so only
//! two directions carry signal — a stand-in for optimizing inside a learned
//! embedding.

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

/// Seed of the fixed embedding map; part of the objective definition, not of
/// any experiment's seed stream.
const EMBEDDING_SEED: u64 = 0x42f0_e1eb_a9ea_3693;

#[derive(Clone, Debug)]
enum Kind {
    Sphere,
    Ackley,
    Rastrigin,
    BraninEmbedded { map: DenseMatrix },
}

/// A deterministic scalar objective over a latent box.
#[derive(Clone, Debug)]
pub struct Objective {
    name: &'static str,
    dim: usize,
    kind: Kind,
    optimum: Option<f64>,
}

impl Objective {
    pub fn by_name(name: &str, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("objective dimension must be >= 1".into()));
        }
        match name {
            "sphere" => Ok(Self {
                name: "sphere",
                dim,
                kind: Kind::Sphere,
                optimum: Some(0.0),
            }),
            "ackley" => Ok(Self {
                name: "ackley",
                dim,
                kind: Kind::Ackley,
                optimum: Some(0.0),
            }),
            "rastrigin" => Ok(Self {
                name: "rastrigin",
                dim,
                kind: Kind::Rastrigin,
                optimum: Some(0.0),
            }),
            "branin" => {
                if dim < 2 {
                    return Err(Error::Config("branin embedding needs dim >= 2".into()));
                }
                Ok(Self {
                    name: "branin",
                    dim,
                    kind: Kind::BraninEmbedded {
                        map: orthonormal_rows(2, dim),
                    },
                    optimum: Some(-0.397887),
                })
            }
            other => Err(Error::Config(format!("unknown objective '{other}'"))),
        }
    }

    #[inline]
    pub fn name(&self) -> &'static str {
        self.name
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn optimum(&self) -> Option<f64> {
        self.optimum
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        debug_assert_eq!(z.len(), self.dim);
        match &self.kind {
            Kind::Sphere => -z.iter().map(|v| v * v).sum::<f64>(),
            Kind::Ackley => {
                let d = z.len() as f64;
                let rms = (z.iter().map(|v| v * v).sum::<f64>() / d).sqrt();
                let cos_mean = z.iter().map(|v| (2.0 * PI * v).cos()).sum::<f64>() / d;
                -(-20.0 * (-0.2 * rms).exp() - cos_mean.exp() + 20.0 + 1.0_f64.exp())
            }
            Kind::Rastrigin => {
                -(10.0 * z.len() as f64
                    + z.iter()
                        .map(|v| v * v - 10.0 * (2.0 * PI * v).cos())
                        .sum::<f64>())
            }
            Kind::BraninEmbedded { map } => {
                let u1: f64 = map.row(0).iter().zip(z).map(|(a, b)| a * b).sum();
                let u2: f64 = map.row(1).iter().zip(z).map(|(a, b)| a * b).sum();
                // [-3, 3] in each projected coordinate spans the Branin domain
                let x1 = 2.5 * u1 + 2.5;
                let x2 = 2.5 * u2 + 7.5;
                let a = x2 - 5.1 * x1 * x1 / (4.0 * PI * PI) + 5.0 * x1 / PI - 6.0;
                -(a * a + 10.0 * (1.0 - 1.0 / (8.0 * PI)) * x1.cos() + 10.0)
            }
        }
    }

    /// The embedding rows for the Branin objective (test access).
    pub fn embedding(&self) -> Option<&DenseMatrix> {
        match &self.kind {
            Kind::BraninEmbedded { map } => Some(map),
            _ => None,
        }
    }
}

/// `rows` orthonormal rows of width `dim`, from a fixed seed.
fn orthonormal_rows(rows: usize, dim: usize) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(EMBEDDING_SEED);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(rows);
    while basis.len() < rows {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= dot * bi;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    DenseMatrix::from_rows(&basis).expect("orthonormal basis rows")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_optima_at_origin() {
        for name in ["sphere", "ackley", "rastrigin"] {
            let obj = Objective::by_name(name, 6).unwrap();
            let at_origin = obj.eval(&vec![0.0; 6]);
            assert!(
                at_origin.abs() < 1e-9,
                "{name} at origin = {at_origin}"
            );
            assert_eq!(obj.optimum(), Some(0.0));
            // any perturbed point is worse
            assert!(obj.eval(&vec![0.7; 6]) < at_origin);
        }
    }

    #[test]
    fn branin_optimum_is_reachable() {
        let obj = Objective::by_name("branin", 8).unwrap();
        let map = obj.embedding().unwrap().clone();
        // global minimum of Branin at (π, 2.275) maps back through the
        // orthonormal embedding as z = Rᵀ u
        let u = [(PI - 2.5) / 2.5, (2.275 - 7.5) / 2.5];
        let mut z = vec![0.0; 8];
        for j in 0..8 {
            z[j] = map.get(0, j) * u[0] + map.get(1, j) * u[1];
        }
        let v = obj.eval(&z);
        assert!((v - (-0.397887)).abs() < 1e-4, "value at optimum {v}");
        let norm = z.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm <= 3.0, "optimum must lie inside the default box");
    }

    #[test]
    fn embedding_rows_are_orthonormal_and_fixed() {
        let a = Objective::by_name("branin", 10).unwrap();
        let b = Objective::by_name("branin", 10).unwrap();
        assert_eq!(a.embedding().unwrap(), b.embedding().unwrap());
        let m = a.embedding().unwrap();
        let dot: f64 = m.row(0).iter().zip(m.row(1)).map(|(x, y)| x * y).sum();
        assert!(dot.abs() < 1e-12);
        for r in 0..2 {
            let n: f64 = m.row(r).iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unknown_objective_is_a_config_error() {
        assert!(Objective::by_name("levy", 3).is_err());
    }

    #[test]
    fn evaluation_is_deterministic() {
        let obj = Objective::by_name("ackley", 5).unwrap();
        let z = vec![0.3, -1.2, 0.8, 2.1, -0.4];
        assert_eq!(obj.eval(&z), obj.eval(&z));
    }
}
