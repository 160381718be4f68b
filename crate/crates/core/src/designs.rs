//! Simulation designs and noise laws.
//!
//! The paired design has `X = e_1 + e_{p+2}` and `Z_k = e_{k+1} + e_{p+2}`,
//! so swapping rows 1 and `k+1` gives `X = P(Z_k − X) + Z_k`.

use rand::Rng;
use rand_distr::{Cauchy, Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::DesignContext;
use crate::linalg::{numerical_rank, Matrix, RankTolerance};

pub const MIXTURE_ZERO_PROB: f64 = 0.95;
pub const MIXTURE_MAX_DRAWS: usize = 100;
pub const SPIKE_SIZE: f64 = 1e4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    Gaussian,
    Paired,
    Mixture,
}

impl DesignKind {
    pub fn name(self) -> &'static str {
        match self {
            DesignKind::Gaussian => "gaussian",
            DesignKind::Paired => "paired",
            DesignKind::Mixture => "mixture",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    pub kind: DesignKind,
    pub n: usize,
    pub p: usize,
}

impl DesignSpec {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.n < self.p + 2 {
            return Err(Error::InvalidArgument(format!(
                "design needs p >= 1 and n >= p + 2, got n = {}, p = {}",
                self.n, self.p
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian,
    StudentT3,
    Cauchy,
    MultinomialSpike,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 4] = [
        NoiseKind::Gaussian,
        NoiseKind::StudentT3,
        NoiseKind::Cauchy,
        NoiseKind::MultinomialSpike,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::StudentT3 => "student_t3",
            NoiseKind::Cauchy => "cauchy",
            NoiseKind::MultinomialSpike => "multinomial_spike",
        }
    }

    pub(crate) fn index(self) -> u64 {
        match self {
            NoiseKind::Gaussian => 0,
            NoiseKind::StudentT3 => 1,
            NoiseKind::Cauchy => 2,
            NoiseKind::MultinomialSpike => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Design {
    pub x: Vec<f64>,
    pub z: Matrix,
    /// Rejected draws before an identifiable one (mixture only).
    pub redraws: usize,
}

pub fn paired_design(n: usize, p: usize) -> Result<Design> {
    DesignSpec {
        kind: DesignKind::Paired,
        n,
        p,
    }
    .validate()?;
    let mut x = vec![0.0; n];
    x[0] = 1.0;
    x[p + 1] = 1.0;
    let mut z = Matrix::zeros(n, p);
    for k in 0..p {
        z.set(k + 1, k, 1.0);
        z.set(p + 1, k, 1.0);
    }
    Ok(Design { x, z, redraws: 0 })
}

fn identifiable(x: &[f64], z: &Matrix) -> bool {
    let full_rank = numerical_rank(z)
        .map(|r| r.numerical_rank == z.cols())
        .unwrap_or(false);
    full_rank && DesignContext::new(x, z, RankTolerance::default()).is_ok()
}

pub fn make_design<R: Rng + ?Sized>(spec: &DesignSpec, rng: &mut R) -> Result<Design> {
    spec.validate()?;
    let (n, p) = (spec.n, spec.p);
    match spec.kind {
        DesignKind::Paired => paired_design(n, p),
        DesignKind::Gaussian => {
            let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let z = Matrix::from_column_major(
                n,
                p,
                (0..n * p).map(|_| rng.sample(StandardNormal)).collect(),
            )?;
            if !identifiable(&x, &z) {
                return Err(Error::Unidentifiable);
            }
            Ok(Design { x, z, redraws: 0 })
        }
        DesignKind::Mixture => {
            let entry = |rng: &mut R| -> f64 {
                if rng.random::<f64>() < MIXTURE_ZERO_PROB {
                    0.0
                } else {
                    rng.sample(StandardNormal)
                }
            };
            for redraws in 0..MIXTURE_MAX_DRAWS {
                let x: Vec<f64> = (0..n).map(|_| entry(rng)).collect();
                let z = Matrix::from_column_major(n, p, (0..n * p).map(|_| entry(rng)).collect())?;
                if identifiable(&x, &z) {
                    return Ok(Design { x, z, redraws });
                }
            }
            Err(Error::DesignRedrawExhausted {
                attempts: MIXTURE_MAX_DRAWS,
            })
        }
    }
}

pub fn draw_noise<R: Rng + ?Sized>(spec: &NoiseSpec, rng: &mut R) -> Result<Vec<f64>> {
    if spec.n == 0 {
        return Err(Error::InvalidArgument(
            "noise length must be positive".into(),
        ));
    }
    let n = spec.n;
    Ok(match spec.kind {
        NoiseKind::Gaussian => (0..n).map(|_| rng.sample(StandardNormal)).collect(),
        NoiseKind::StudentT3 => {
            let d = StudentT::new(3.0).expect("valid degrees of freedom");
            (0..n).map(|_| d.sample(rng)).collect()
        }
        NoiseKind::Cauchy => {
            let d = Cauchy::new(0.0, 1.0).expect("valid scale");
            (0..n).map(|_| d.sample(rng)).collect()
        }
        NoiseKind::MultinomialSpike => {
            let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let at = rng.random_range(0..n);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            v[at] += sign * SPIKE_SIZE;
            v
        }
    })
}
