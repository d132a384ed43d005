//! PCA point-distribution model: mean shape, eigenpairs, score encoding,
//! whitening and Mahalanobis geometry.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::binio::{read_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::supershapes::ShapeSample;

pub const PCA_MAGIC: &[u8; 8] = b"PSPCA1\0\0";

/// How many modes to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSelection {
    /// Smallest mode count whose cumulative variance reaches the fraction.
    VarianceTarget(f64),
    Fixed(usize),
}

impl Default for ModeSelection {
    fn default() -> Self {
        ModeSelection::VarianceTarget(0.95)
    }
}

/// PCA scores, tagged with the basis they are expressed in.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub values: Vec<f64>,
    pub whitened: bool,
}

impl ScoreVector {
    pub fn raw(values: Vec<f64>) -> Self {
        Self {
            values,
            whitened: false,
        }
    }

    pub fn whitened(values: Vec<f64>) -> Self {
        Self {
            values,
            whitened: true,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaSubspace {
    mean: Vec<f64>,
    /// `3M x L`, column-major.
    basis: Vec<f64>,
    eigenvalues: Vec<f64>,
    num_points: usize,
    /// Fraction of total variance captured; unknown for subspaces loaded
    /// from disk.
    variance_retained: Option<f64>,
}

impl PcaSubspace {
    /// Fits the subspace to corresponded shapes. Eigenvalues use the
    /// `1/(N-1)` sample convention.
    pub fn fit(shapes: &[ShapeSample], selection: ModeSelection) -> Result<Self> {
        let n = shapes.len();
        if n < 2 {
            return Err(Error::Degenerate(format!("PCA needs at least 2 shapes, got {n}")));
        }
        let dim = shapes[0].as_flat().len();
        for s in shapes {
            if s.as_flat().len() != dim {
                return Err(Error::dim(dim, s.as_flat().len(), "shape length in PCA fit"));
            }
        }
        let mut mean = vec![0.0; dim];
        for s in shapes {
            for (m, &x) in mean.iter_mut().zip(s.as_flat()) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let centered = DMatrix::from_fn(n, dim, |i, j| shapes[i].as_flat()[j] - mean[j]);
        let denom = (n - 1) as f64;

        // eigenpairs as (value, unit column in shape space)
        let mut pairs: Vec<(f64, Vec<f64>)> = if n < dim {
            let gram = (&centered * centered.transpose()) / denom;
            let eig = SymmetricEigen::new(gram);
            (0..n)
                .map(|k| {
                    let lambda = eig.eigenvalues[k];
                    let v = eig.eigenvectors.column(k);
                    let u = centered.transpose() * v;
                    let nrm = u.norm();
                    let col = if nrm > 0.0 {
                        u.iter().map(|x| x / nrm).collect()
                    } else {
                        vec![0.0; dim]
                    };
                    (lambda, col)
                })
                .collect()
        } else {
            let cov = (centered.transpose() * &centered) / denom;
            let eig = SymmetricEigen::new(cov);
            (0..dim)
                .map(|k| (eig.eigenvalues[k], eig.eigenvectors.column(k).iter().copied().collect()))
                .collect()
        };
        // descending; stable sort keeps the original index order on ties
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));

        let total: f64 = pairs.iter().map(|p| p.0.max(0.0)).sum();
        let top = pairs.first().map_or(0.0, |p| p.0);
        let tol = top.max(0.0) * 1e-10 + f64::MIN_POSITIVE;
        let rank = pairs.iter().take_while(|p| p.0 > tol).count();
        if rank == 0 {
            return Err(Error::Degenerate("all shapes are identical (rank 0)".into()));
        }
        let modes = match selection {
            ModeSelection::Fixed(l) => {
                if l == 0 || l > rank {
                    return Err(Error::Degenerate(format!(
                        "requested {l} modes but the data has rank {rank}"
                    )));
                }
                l
            }
            ModeSelection::VarianceTarget(frac) => {
                if !(frac > 0.0 && frac <= 1.0) {
                    return Err(Error::Config(format!("variance target {frac} not in (0, 1]")));
                }
                let mut acc = 0.0;
                let mut l = rank;
                for (k, p) in pairs.iter().take(rank).enumerate() {
                    acc += p.0;
                    if acc / total >= frac - 1e-12 {
                        l = k + 1;
                        break;
                    }
                }
                l
            }
        };
        let mut basis = Vec::with_capacity(dim * modes);
        let mut eigenvalues = Vec::with_capacity(modes);
        for (lambda, mut col) in pairs.into_iter().take(modes) {
            // sign convention: largest-magnitude component positive
            let mut best = 0;
            for (i, c) in col.iter().enumerate() {
                if c.abs() > col[best].abs() {
                    best = i;
                }
            }
            if col[best] < 0.0 {
                col.iter_mut().for_each(|c| *c = -*c);
            }
            basis.extend(col);
            eigenvalues.push(lambda);
        }
        let retained = eigenvalues.iter().sum::<f64>() / total;
        Ok(Self {
            mean,
            basis,
            eigenvalues,
            num_points: dim / 3,
            variance_retained: Some(retained),
        })
    }

    pub fn num_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn num_points(&self) -> usize {
        self.num_points
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn mean_shape(&self) -> ShapeSample {
        ShapeSample::from_flat(self.mean.clone()).expect("finite mean")
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn variance_retained(&self) -> Option<f64> {
        self.variance_retained
    }

    /// Column `l` of `U`.
    pub fn mode(&self, l: usize) -> &[f64] {
        let d = self.dim();
        &self.basis[l * d..(l + 1) * d]
    }

    fn check_len(&self, got: usize, what: &'static str) -> Result<()> {
        if got != self.num_modes() {
            return Err(Error::dim(self.num_modes(), got, what));
        }
        Ok(())
    }

    /// `z = U^T (x - mu)`.
    pub fn encode(&self, x: &ShapeSample) -> Result<ScoreVector> {
        let x = x.as_flat();
        if x.len() != self.dim() {
            return Err(Error::dim(self.dim(), x.len(), "shape length in encode"));
        }
        let values = (0..self.num_modes())
            .map(|l| {
                self.mode(l)
                    .iter()
                    .zip(x.iter().zip(&self.mean))
                    .map(|(u, (xi, mi))| u * (xi - mi))
                    .sum()
            })
            .collect();
        Ok(ScoreVector::raw(values))
    }

    /// `x = U z + mu`; whitened scores are un-whitened first.
    pub fn decode(&self, z: &ScoreVector) -> Result<ShapeSample> {
        self.check_len(z.len(), "score length in decode")?;
        let z = if z.whitened {
            self.unwhiten(z)?
        } else {
            z.clone()
        };
        let mut x = self.mean.clone();
        for (l, &zl) in z.values.iter().enumerate() {
            for (xi, u) in x.iter_mut().zip(self.mode(l)) {
                *xi += zl * u;
            }
        }
        ShapeSample::from_flat(x)
    }

    pub fn whiten(&self, z: &ScoreVector) -> Result<ScoreVector> {
        if z.whitened {
            return Err(Error::Whitening("scores are already whitened"));
        }
        self.check_len(z.len(), "score length in whiten")?;
        Ok(ScoreVector::whitened(
            z.values
                .iter()
                .zip(&self.eigenvalues)
                .map(|(v, d)| v / d.sqrt())
                .collect(),
        ))
    }

    pub fn unwhiten(&self, z: &ScoreVector) -> Result<ScoreVector> {
        if !z.whitened {
            return Err(Error::Whitening("scores are not whitened"));
        }
        self.check_len(z.len(), "score length in unwhiten")?;
        Ok(ScoreVector::raw(
            z.values
                .iter()
                .zip(&self.eigenvalues)
                .map(|(v, d)| v * d.sqrt())
                .collect(),
        ))
    }

    /// Per-mode variances in the whitened basis mapped back to raw scores.
    pub fn unwhiten_variance(&self, var: &[f64]) -> Result<Vec<f64>> {
        self.check_len(var.len(), "variance length")?;
        Ok(var.iter().zip(&self.eigenvalues).map(|(v, d)| v * d).collect())
    }

    /// Squared Mahalanobis distance `sum_l (a_l - b_l)^2 / delta_l`.
    pub fn mahalanobis(&self, a: &ScoreVector, b: &ScoreVector) -> Result<f64> {
        if a.whitened || b.whitened {
            return Err(Error::Whitening("mahalanobis expects raw scores"));
        }
        self.check_len(a.len(), "score length in mahalanobis")?;
        self.check_len(b.len(), "score length in mahalanobis")?;
        Ok(mahalanobis_sq(&a.values, &b.values, &self.eigenvalues))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_writer().finish()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.to_writer().write_to(path)
    }

    fn to_writer(&self) -> Writer {
        let mut w = Writer::new(PCA_MAGIC);
        w.u32(self.num_points as u32)
            .u32(self.num_modes() as u32)
            .f64s(self.mean.iter().copied())
            .f64s(self.eigenvalues.iter().copied())
            .f64s(self.basis.iter().copied());
        w
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        Self::from_bytes(path, &bytes)
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(path, bytes, PCA_MAGIC)?;
        let m = r.u32("M")? as usize;
        let l = r.u32("L")? as usize;
        let mean = r.f64s(3 * m, "mean")?;
        let eigenvalues = r.f64s(l, "eigenvalues")?;
        let basis = r.f64s(3 * m * l, "basis")?;
        r.finish()?;
        if eigenvalues.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::format(path, "non-positive eigenvalue"));
        }
        Ok(Self {
            mean,
            basis,
            eigenvalues,
            num_points: m,
            variance_retained: None,
        })
    }
}

pub(crate) fn mahalanobis_sq(a: &[f64], b: &[f64], eigenvalues: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(eigenvalues)
        .map(|((x, y), d)| (x - y) * (x - y) / d)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_shapes(n: usize, m: usize, seed: u64) -> Vec<ShapeSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| ShapeSample::from_flat((0..3 * m).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
            .collect()
    }

    #[test]
    fn orthonormal_sorted_basis() {
        let shapes = random_shapes(10, 20, 1);
        let pca = PcaSubspace::fit(&shapes, ModeSelection::Fixed(9)).unwrap();
        for a in 0..9 {
            for b in 0..9 {
                let d: f64 = pca.mode(a).iter().zip(pca.mode(b)).map(|(x, y)| x * y).sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((d - expect).abs() < 1e-8);
            }
        }
        assert!(pca.eigenvalues().windows(2).all(|w| w[0] > w[1]));
        assert!(pca.eigenvalues().iter().all(|&d| d > 0.0));
    }

    #[test]
    fn exact_rank_reconstruction() {
        let shapes = random_shapes(10, 20, 2);
        let pca = PcaSubspace::fit(&shapes, ModeSelection::VarianceTarget(1.0)).unwrap();
        assert_eq!(pca.num_modes(), 9);
        for s in &shapes {
            let back = pca.decode(&pca.encode(s).unwrap()).unwrap();
            let err: f64 = back.as_flat().iter().zip(s.as_flat()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let nrm: f64 = s.as_flat().iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(err / nrm < 1e-6);
        }
    }

    #[test]
    fn covariance_path_matches_gram_path() {
        // N >= 3M exercises the covariance route
        let shapes = random_shapes(12, 3, 3);
        let pca = PcaSubspace::fit(&shapes, ModeSelection::Fixed(3)).unwrap();
        let n = shapes.len() as f64;
        for l in 0..3 {
            let scores: Vec<f64> = shapes.iter().map(|s| pca.encode(s).unwrap().values[l]).collect();
            let var = scores.iter().map(|z| z * z).sum::<f64>() / (n - 1.0);
            assert!((var - pca.eigenvalues()[l]).abs() < 1e-10);
        }
    }

    #[test]
    fn identical_shapes_are_rejected() {
        let s = random_shapes(1, 5, 4).pop().unwrap();
        let err = PcaSubspace::fit(&[s.clone(), s.clone(), s], ModeSelection::default()).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
        assert!(PcaSubspace::fit(&random_shapes(1, 5, 4), ModeSelection::default()).is_err());
        let mut mixed = random_shapes(3, 5, 4);
        mixed.push(random_shapes(1, 4, 4).pop().unwrap());
        assert!(matches!(PcaSubspace::fit(&mixed, ModeSelection::default()), Err(Error::Dimension { .. })));
        assert!(PcaSubspace::fit(&random_shapes(4, 5, 4), ModeSelection::Fixed(4)).is_err());
    }

    #[test]
    fn encode_decode_contracts() {
        let shapes = random_shapes(8, 10, 5);
        let pca = PcaSubspace::fit(&shapes, ModeSelection::Fixed(4)).unwrap();
        let z0 = pca.encode(&pca.mean_shape()).unwrap();
        assert!(z0.values.iter().all(|z| z.abs() < 1e-12));

        let d1 = pca.eigenvalues()[0];
        let x: Vec<f64> = pca.mean().iter().zip(pca.mode(0)).map(|(m, u)| m + d1.sqrt() * u).collect();
        let z = pca.encode(&ShapeSample::from_flat(x).unwrap()).unwrap();
        assert!((z.values[0] - d1.sqrt()).abs() < 1e-10);
        assert!(z.values[1..].iter().all(|v| v.abs() < 1e-10));

        // identity on span(U)
        let z = ScoreVector::raw(vec![0.3, -1.2, 0.05, 2.0]);
        let back = pca.encode(&pca.decode(&z).unwrap()).unwrap();
        for (a, b) in z.values.iter().zip(&back.values) {
            assert!((a - b).abs() < 1e-8);
        }

        // reconstruction residual is orthogonal to the subspace
        let s = &random_shapes(1, 10, 77)[0];
        let rec = pca.decode(&pca.encode(s).unwrap()).unwrap();
        let resid: Vec<f64> = s.as_flat().iter().zip(rec.as_flat()).map(|(a, b)| a - b).collect();
        for l in 0..4 {
            let d: f64 = resid.iter().zip(pca.mode(l)).map(|(r, u)| r * u).sum();
            assert!(d.abs() < 1e-8);
        }
        assert!(pca.encode(&random_shapes(1, 9, 1)[0]).is_err());
    }

    #[test]
    fn whitening_contracts() {
        let shapes = random_shapes(30, 6, 6);
        let pca = PcaSubspace::fit(&shapes, ModeSelection::Fixed(5)).unwrap();
        let white: Vec<ScoreVector> = shapes.iter().map(|s| pca.whiten(&pca.encode(s).unwrap()).unwrap()).collect();
        for l in 0..5 {
            let mean = white.iter().map(|w| w.values[l]).sum::<f64>() / 30.0;
            let var = white.iter().map(|w| (w.values[l] - mean).powi(2)).sum::<f64>() / 29.0;
            assert!((var - 1.0).abs() < 5e-2);
        }
        let z = pca.encode(&shapes[0]).unwrap();
        let round = pca.unwhiten(&pca.whiten(&z).unwrap()).unwrap();
        for (a, b) in z.values.iter().zip(&round.values) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(pca.whiten(&white[0]).is_err());
        assert!(pca.unwhiten(&z).is_err());
        let v = pca.unwhiten_variance(&[0.5, 1.0, 2.0, 0.0, 1.5]).unwrap();
        for l in 0..5 {
            assert!((v[l] - [0.5, 1.0, 2.0, 0.0, 1.5][l] * pca.eigenvalues()[l]).abs() < 1e-15);
        }
        // decode accepts whitened input
        let a = pca.decode(&z).unwrap();
        let b = pca.decode(&pca.whiten(&z).unwrap()).unwrap();
        for (x, y) in a.as_flat().iter().zip(b.as_flat()) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn mahalanobis_contracts() {
        let shapes = random_shapes(12, 6, 8);
        let pca = PcaSubspace::fit(&shapes, ModeSelection::Fixed(4)).unwrap();
        let a = pca.encode(&shapes[0]).unwrap();
        let b = pca.encode(&shapes[1]).unwrap();
        assert_eq!(pca.mahalanobis(&a, &a).unwrap(), 0.0);
        let mut step = a.clone();
        step.values[2] += pca.eigenvalues()[2].sqrt();
        assert!((pca.mahalanobis(&a, &step).unwrap() - 1.0).abs() < 1e-12);
        let (wa, wb) = (pca.whiten(&a).unwrap(), pca.whiten(&b).unwrap());
        let euclid: f64 = wa.values.iter().zip(&wb.values).map(|(x, y)| (x - y).powi(2)).sum();
        assert!((pca.mahalanobis(&a, &b).unwrap() - euclid).abs() < 1e-10);
        assert!(pca.mahalanobis(&wa, &b).is_err());
    }

    #[test]
    fn fit_is_order_invariant() {
        let shapes = random_shapes(9, 8, 9);
        let mut rev = shapes.clone();
        rev.reverse();
        let a = PcaSubspace::fit(&shapes, ModeSelection::Fixed(5)).unwrap();
        let b = PcaSubspace::fit(&rev, ModeSelection::Fixed(5)).unwrap();
        for l in 0..5 {
            assert!((a.eigenvalues()[l] - b.eigenvalues()[l]).abs() < 1e-9);
            let d: f64 = a.mode(l).iter().zip(b.mode(l)).map(|(x, y)| x * y).sum();
            assert!((d.abs() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn file_round_trip() {
        let pca = PcaSubspace::fit(&random_shapes(6, 5, 10), ModeSelection::Fixed(3)).unwrap();
        let bytes = pca.to_bytes();
        assert_eq!(bytes.len(), 16 + 8 * (15 + 3 + 45));
        let back = PcaSubspace::from_bytes(Path::new("mem"), &bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.eigenvalues(), pca.eigenvalues());
        assert!(PcaSubspace::from_bytes(Path::new("mem"), &bytes[..40]).is_err());
    }
}
