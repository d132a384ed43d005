//! Monte-Carlo dropout inference and per-point uncertainty fields.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Matrix3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::mesh::{dist2, TriMesh, Vec3};
use crate::network::{DropoutMode, NetParams, Prediction};
use crate::pipeline::io::write_text;
use crate::seeds;
use crate::shapemodel::{PcaSubspace, ScoreVector};
use crate::volume::Volume3D;

pub type Cov3 = [[f64; 3]; 3];

/// Number of nearest correspondence points used by [`interpolate_to_mesh`].
pub const IDW_NEIGHBORS: usize = 4;
pub const IDW_POWER: i32 = 2;

/// Aggregate of `V` stochastic forward passes. `z_mean` and both variances
/// are in the raw (un-whitened) PCA basis; `samples` stay whitened.
#[derive(Debug, Clone, PartialEq)]
pub struct McPrediction {
    pub samples: Vec<Prediction>,
    pub z_mean: ScoreVector,
    pub aleatoric_var: Vec<f64>,
    pub epistemic_var: Vec<f64>,
}

impl McPrediction {
    pub fn num_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn mean_aleatoric(&self) -> f64 {
        mean(&self.aleatoric_var)
    }

    pub fn mean_epistemic(&self) -> f64 {
        mean(&self.epistemic_var)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Per-coordinate population mean and variance (`1/V` normalization) of a
/// list of equal-length vectors. Identical samples give exactly zero variance.
pub fn population_moments(samples: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let l = samples.first().map_or(0, Vec::len);
    let mut m = vec![0.0; l];
    let mut m2 = vec![0.0; l];
    for (k, s) in samples.iter().enumerate() {
        assert_eq!(s.len(), l, "samples differ in length");
        let n = (k + 1) as f64;
        for ((mi, m2i), &x) in m.iter_mut().zip(&mut m2).zip(s) {
            let d = x - *mi;
            *mi += d / n;
            *m2i += d * (x - *mi);
        }
    }
    let v = samples.len() as f64;
    (m, m2.into_iter().map(|s| (s / v).max(0.0)).collect())
}

/// Epistemic variance of dropout samples: `(1/V) sum z^2 - ((1/V) sum z)^2`
/// per mode.
pub fn epistemic_variance(samples: &[Vec<f64>]) -> Vec<f64> {
    population_moments(samples).1
}

/// Combines whitened dropout samples into an [`McPrediction`].
pub fn aggregate(sub: &PcaSubspace, samples: Vec<Prediction>) -> Result<McPrediction> {
    if samples.len() < 2 {
        return Err(Error::Config(format!(
            "Monte-Carlo inference needs V >= 2 samples, got {}",
            samples.len()
        )));
    }
    let means: Vec<Vec<f64>> = samples.iter().map(|p| p.z_bar.clone()).collect();
    let (z_mean, epistemic) = population_moments(&means);
    let v = samples.len() as f64;
    let mut aleatoric = vec![0.0; z_mean.len()];
    for p in &samples {
        for (a, lv) in aleatoric.iter_mut().zip(&p.log_var) {
            *a += lv.exp();
        }
    }
    aleatoric.iter_mut().for_each(|a| *a /= v);
    Ok(McPrediction {
        z_mean: sub.unwhiten(&ScoreVector::whitened(z_mean))?,
        aleatoric_var: sub.unwhiten_variance(&aleatoric)?,
        epistemic_var: sub.unwhiten_variance(&epistemic)?,
        samples,
    })
}

/// `V` forward passes with independent dropout masks on a normalized image.
pub fn mc_infer(
    params: &NetParams<f32>,
    sub: &PcaSubspace,
    image: &Volume3D,
    v: usize,
    seed: u64,
) -> Result<McPrediction> {
    if v < 2 {
        return Err(Error::Config(format!("Monte-Carlo inference needs V >= 2 samples, got {v}")));
    }
    if params.config().output_dim != sub.num_modes() {
        return Err(Error::dim(sub.num_modes(), params.config().output_dim, "network output vs PCA modes"));
    }
    let samples = (0..v)
        .map(|i| params.forward(image.data(), DropoutMode::On(seeds::child(seed, i as u64))))
        .collect::<Result<Vec<_>>>()?;
    aggregate(sub, samples)
}

/// Per-point 3D Gaussians of the decoded shape distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct PointGaussians {
    pub means: Vec<Vec3>,
    pub covariances: Vec<Cov3>,
}

/// Draws `j` raw score vectors from `N(z_mean, diag(var))`, decodes each and
/// fits a per-point sample mean and covariance.
pub fn point_distributions(
    sub: &PcaSubspace,
    z_mean: &ScoreVector,
    var: &[f64],
    j: usize,
    seed: u64,
) -> Result<PointGaussians> {
    if j < 10 {
        return Err(Error::Config(format!("point distributions need J >= 10 draws, got {j}")));
    }
    if z_mean.whitened {
        return Err(Error::Whitening("point distributions expect raw scores"));
    }
    if var.len() != sub.num_modes() || z_mean.len() != sub.num_modes() {
        return Err(Error::dim(sub.num_modes(), var.len().min(z_mean.len()), "score length in point distributions"));
    }
    if var.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::Domain("variances must be finite and non-negative".into()));
    }
    let m = sub.num_points();
    let sd: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<Vec<f64>> = (0..j)
        .map(|_| {
            let z: Vec<f64> = z_mean
                .values
                .iter()
                .zip(&sd)
                .map(|(mu, s)| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    mu + s * e
                })
                .collect();
            sub.decode(&ScoreVector::raw(z)).map(|s| s.into_flat())
        })
        .collect::<Result<_>>()?;
    let (flat_mean, _) = population_moments(&draws);
    let mut covariances = vec![[[0.0; 3]; 3]; m];
    for x in &draws {
        for (k, c) in covariances.iter_mut().enumerate() {
            let d = [
                x[3 * k] - flat_mean[3 * k],
                x[3 * k + 1] - flat_mean[3 * k + 1],
                x[3 * k + 2] - flat_mean[3 * k + 2],
            ];
            for a in 0..3 {
                for b in 0..3 {
                    c[a][b] += d[a] * d[b];
                }
            }
        }
    }
    let denom = (j - 1) as f64;
    for c in &mut covariances {
        c.iter_mut().flatten().for_each(|v| *v /= denom);
    }
    let means = flat_mean.chunks(3).map(|p| [p[0], p[1], p[2]]).collect();
    Ok(PointGaussians { means, covariances })
}

/// Closed-form per-point covariance of the decoded distribution,
/// `sum_l var_l u_l^(k) u_l^(k)^T` with raw-basis variances.
pub fn exact_point_covariances(sub: &PcaSubspace, var: &[f64]) -> Result<Vec<Cov3>> {
    if var.len() != sub.num_modes() {
        return Err(Error::dim(sub.num_modes(), var.len(), "variance length"));
    }
    let mut out = vec![[[0.0; 3]; 3]; sub.num_points()];
    for (l, &v) in var.iter().enumerate() {
        let u = sub.mode(l);
        for (k, c) in out.iter_mut().enumerate() {
            for a in 0..3 {
                for b in 0..3 {
                    c[a][b] += v * u[3 * k + a] * u[3 * k + b];
                }
            }
        }
    }
    Ok(out)
}

/// Differential entropy in nats of a 3D Gaussian. Eigenvalues are floored at
/// `1e-9` times the mean eigenvalue (or `1e-15` for a zero covariance) so
/// degenerate covariances stay finite.
pub fn gaussian_entropy(cov: &Cov3) -> f64 {
    let m = Matrix3::from_fn(|a, b| 0.5 * (cov[a][b] + cov[b][a]));
    let trace_scale = (m.trace() / 3.0).max(1e-6);
    let eps = 1e-9 * trace_scale;
    let eig = m.symmetric_eigenvalues();
    let log_det: f64 = eig.iter().map(|&l| l.max(eps).ln()).sum();
    let two_pi_e = 2.0 * std::f64::consts::PI * std::f64::consts::E;
    0.5 * (3.0 * two_pi_e.ln() + log_det)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Aleatoric,
    Epistemic,
}

impl FieldKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FieldKind::Aleatoric => "aleatoric",
            FieldKind::Epistemic => "epistemic",
        }
    }
}

/// Per-correspondence-point entropies.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyField {
    pub values: Vec<f64>,
    pub kind: FieldKind,
}

pub fn entropy_field(g: &PointGaussians, kind: FieldKind) -> UncertaintyField {
    UncertaintyField {
        values: g.covariances.iter().map(gaussian_entropy).collect(),
        kind,
    }
}

/// Aleatoric and epistemic entropy fields for one prediction.
pub fn uncertainty_fields(
    sub: &PcaSubspace,
    pred: &McPrediction,
    j: usize,
    seed: u64,
) -> Result<[UncertaintyField; 2]> {
    let alea = point_distributions(sub, &pred.z_mean, &pred.aleatoric_var, j, seeds::derive(seed, "aleatoric"))?;
    let epis = point_distributions(sub, &pred.z_mean, &pred.epistemic_var, j, seeds::derive(seed, "epistemic"))?;
    Ok([
        entropy_field(&alea, FieldKind::Aleatoric),
        entropy_field(&epis, FieldKind::Epistemic),
    ])
}

/// Inverse-distance weighting (power 2) over the nearest
/// [`IDW_NEIGHBORS`] correspondence points. A vertex coinciding with a point
/// takes that point's value.
pub fn interpolate_to_mesh(field: &[f64], points: &[Vec3], mesh: &TriMesh) -> Result<Vec<f64>> {
    if field.len() != points.len() {
        return Err(Error::dim(points.len(), field.len(), "field length vs correspondence points"));
    }
    if points.is_empty() {
        return Err(Error::Degenerate("no correspondence points to interpolate from".into()));
    }
    let k = IDW_NEIGHBORS.min(points.len());
    Ok(mesh
        .vertices
        .iter()
        .map(|&v| {
            let mut near: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, &p)| (dist2(v, p), i)).collect();
            near.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let near = &mut near[..k];
            near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            if near[0].0 == 0.0 {
                return field[near[0].1];
            }
            let (mut num, mut den) = (0.0, 0.0);
            for &(d2, i) in near.iter() {
                let w = 1.0 / d2.sqrt().powi(IDW_POWER);
                num += w * field[i];
                den += w;
            }
            num / den
        })
        .collect())
}

/// One value per line.
pub fn write_field(path: &Path, values: &[f64]) -> Result<()> {
    let mut s = String::new();
    for v in values {
        writeln!(s, "{v}").unwrap();
    }
    write_text(path, &s)
}

/// `vertex,value` rows for a mesh viewer.
pub fn write_vertex_scalars(path: &Path, values: &[f64]) -> Result<()> {
    let mut s = String::from("vertex,value\n");
    for (i, v) in values.iter().enumerate() {
        writeln!(s, "{i},{v}").unwrap();
    }
    write_text(path, &s)
}
