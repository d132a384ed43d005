use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::shapemodel::{mahalanobis_sq, PcaSubspace, ScoreVector};

/// Covariance of each KDE kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelCovariance {
    /// `sigma^2 * Delta`: isotropic in whitened coordinates, consistent with
    /// the Mahalanobis bandwidth.
    #[default]
    Mahalanobis,
    /// `sigma^2 * I` over raw scores.
    Isotropic,
}

/// Mean squared Mahalanobis nearest-neighbour distance over the training
/// scores: `(1/N) sum_n min_{k != n} (z_n - z_k)^T Delta^{-1} (z_n - z_k)`.
pub fn bandwidth(sub: &PcaSubspace, scores: &[ScoreVector]) -> Result<f64> {
    let n = scores.len();
    if n < 2 {
        return Err(Error::Degenerate(format!("KDE bandwidth needs N >= 2, got {n}")));
    }
    let l = sub.num_modes();
    for z in scores {
        if z.whitened {
            return Err(Error::Whitening("KDE expects raw scores"));
        }
        if z.len() != l {
            return Err(Error::dim(l, z.len(), "score length in bandwidth"));
        }
    }
    let mut total = 0.0;
    for (i, zi) in scores.iter().enumerate() {
        let nearest = scores
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .map(|(_, zk)| mahalanobis_sq(&zi.values, &zk.values, sub.eigenvalues()))
            .fold(f64::INFINITY, f64::min);
        total += nearest;
    }
    let sigma2 = total / n as f64;
    if !(sigma2 > 0.0) {
        return Err(Error::Degenerate(
            "duplicate training scores give a zero KDE bandwidth".into(),
        ));
    }
    Ok(sigma2)
}

/// One draw from the KDE, tagged with the kernel (training sample) it came
/// from.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeDraw {
    pub scores: ScoreVector,
    pub kernel: usize,
}

#[derive(Debug, Clone)]
pub struct KdeModel {
    centers: Vec<Vec<f64>>,
    eigenvalues: Vec<f64>,
    sigma2: f64,
    covariance: KernelCovariance,
}

impl KdeModel {
    /// Kernels at the training scores with the nearest-neighbour bandwidth.
    pub fn fit(sub: &PcaSubspace, scores: &[ScoreVector], covariance: KernelCovariance) -> Result<Self> {
        let sigma2 = bandwidth(sub, scores)?;
        Self::with_bandwidth(sub, scores, sigma2, covariance)
    }

    pub fn with_bandwidth(
        sub: &PcaSubspace,
        scores: &[ScoreVector],
        sigma2: f64,
        covariance: KernelCovariance,
    ) -> Result<Self> {
        if scores.len() < 2 {
            return Err(Error::Degenerate("KDE needs at least 2 kernels".into()));
        }
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::Config(format!("KDE bandwidth must be positive, got {sigma2}")));
        }
        if let Some(z) = scores.iter().find(|z| z.whitened || z.len() != sub.num_modes()) {
            return Err(if z.whitened {
                Error::Whitening("KDE expects raw scores")
            } else {
                Error::dim(sub.num_modes(), z.len(), "score length in KDE")
            });
        }
        Ok(Self {
            centers: scores.iter().map(|z| z.values.clone()).collect(),
            eigenvalues: sub.eigenvalues().to_vec(),
            sigma2,
            covariance,
        })
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn num_kernels(&self) -> usize {
        self.centers.len()
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn covariance(&self) -> KernelCovariance {
        self.covariance
    }

    fn kernel_variance(&self, l: usize) -> f64 {
        match self.covariance {
            KernelCovariance::Mahalanobis => self.sigma2 * self.eigenvalues[l],
            KernelCovariance::Isotropic => self.sigma2,
        }
    }

    /// Draws one sample using the caller's generator.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> KdeDraw {
        let kernel = rng.random_range(0..self.centers.len());
        let values = self.centers[kernel]
            .iter()
            .enumerate()
            .map(|(l, &c)| {
                let e: f64 = StandardNormal.sample(rng);
                c + self.kernel_variance(l).sqrt() * e
            })
            .collect();
        KdeDraw {
            scores: ScoreVector::raw(values),
            kernel,
        }
    }

    pub fn sample(&self, count: usize, seed: u64) -> Vec<KdeDraw> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| self.draw(&mut rng)).collect()
    }

    /// Mixture density `(1/N) sum_n K_n(z)`.
    pub fn density(&self, z: &[f64]) -> f64 {
        let l = self.eigenvalues.len();
        let log_norm: f64 = (0..l)
            .map(|m| -0.5 * (2.0 * std::f64::consts::PI * self.kernel_variance(m)).ln())
            .sum();
        let sum: f64 = self
            .centers
            .iter()
            .map(|c| {
                let q: f64 = (0..l)
                    .map(|m| (z[m] - c[m]).powi(2) / self.kernel_variance(m))
                    .sum();
                (log_norm - 0.5 * q).exp()
            })
            .sum();
        sum / self.centers.len() as f64
    }
}
