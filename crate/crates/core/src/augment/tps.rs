use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::mesh::{bbox_diagonal, dist2, Vec3};
use crate::volume::Volume3D;

/// 3D thin-plate spline `f(p) = A p + t + sum_k w_k |p - c_k|`.
#[derive(Debug, Clone)]
pub struct TpsWarp {
    source: Vec<Vec3>,
    target: Vec<Vec3>,
    /// Row `i`: `[t_i, A_i0, A_i1, A_i2]`.
    affine: [[f64; 4]; 3],
    weights: Vec<Vec3>,
    lambda: f64,
}

impl TpsWarp {
    /// Solves the TPS system with kernel `phi(r) = r` and `lambda` added to
    /// the kernel block diagonal. `lambda = 0` interpolates exactly.
    pub fn fit(source: &[Vec3], target: &[Vec3], lambda: f64) -> Result<Self> {
        let m = source.len();
        if target.len() != m {
            return Err(Error::dim(m, target.len(), "TPS target point count"));
        }
        if m < 5 {
            return Err(Error::TpsFit(format!("need at least 5 control points, got {m}")));
        }
        if !(lambda >= 0.0) {
            return Err(Error::TpsFit(format!("regularization must be >= 0, got {lambda}")));
        }
        check_configuration(source)?;

        let n = m + 4;
        let mut sys = DMatrix::<f64>::zeros(n, n);
        for i in 0..m {
            for j in 0..i {
                let r = dist2(source[i], source[j]).sqrt();
                sys[(i, j)] = r;
                sys[(j, i)] = r;
            }
            sys[(i, i)] = lambda;
            sys[(i, m)] = 1.0;
            sys[(m, i)] = 1.0;
            for a in 0..3 {
                sys[(i, m + 1 + a)] = source[i][a];
                sys[(m + 1 + a, i)] = source[i][a];
            }
        }
        let mut rhs = DMatrix::<f64>::zeros(n, 3);
        for (i, t) in target.iter().enumerate() {
            for a in 0..3 {
                rhs[(i, a)] = t[a];
            }
        }
        let sol = sys
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::TpsFit("singular TPS system (duplicate or coplanar control points)".into()))?;
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(Error::TpsFit("non-finite TPS solution".into()));
        }
        let weights = (0..m).map(|i| [sol[(i, 0)], sol[(i, 1)], sol[(i, 2)]]).collect();
        let mut affine = [[0.0; 4]; 3];
        for (a, row) in affine.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = sol[(m + c, a)];
            }
        }
        Ok(Self {
            source: source.to_vec(),
            target: target.to_vec(),
            affine,
            weights,
            lambda,
        })
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        let mut out: Vec3 = std::array::from_fn(|a| {
            let r = &self.affine[a];
            r[0] + r[1] * p[0] + r[2] * p[1] + r[3] * p[2]
        });
        for (c, w) in self.source.iter().zip(&self.weights) {
            let r = dist2(p, *c).sqrt();
            out[0] += w[0] * r;
            out[1] += w[1] * r;
            out[2] += w[2] * r;
        }
        out
    }

    pub fn affine(&self) -> [[f64; 4]; 3] {
        self.affine
    }

    pub fn weights(&self) -> &[Vec3] {
        &self.weights
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn source(&self) -> &[Vec3] {
        &self.source
    }

    pub fn target(&self) -> &[Vec3] {
        &self.target
    }

    /// Largest `|P^T w|` entry; zero for an exact solution.
    pub fn side_condition_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for a in 0..3 {
            let mut s = [0.0; 4];
            for (c, w) in self.source.iter().zip(&self.weights) {
                s[0] += w[a];
                for b in 0..3 {
                    s[b + 1] += w[a] * c[b];
                }
            }
            worst = s.iter().fold(worst, |acc, v| acc.max(v.abs()));
        }
        worst
    }

    /// Largest distance between `apply(source_k)` and `target_k`.
    pub fn max_control_residual(&self) -> f64 {
        self.source
            .iter()
            .zip(&self.target)
            .map(|(s, t)| dist2(self.apply(*s), *t).sqrt())
            .fold(0.0, f64::max)
    }
}

fn check_configuration(points: &[Vec3]) -> Result<()> {
    let diag = bbox_diagonal(points);
    if !(diag > 0.0) || !diag.is_finite() {
        return Err(Error::TpsFit("control points collapse to a single location".into()));
    }
    let tol = (1e-12 * diag).powi(2);
    for i in 0..points.len() {
        for j in 0..i {
            if dist2(points[i], points[j]) <= tol {
                return Err(Error::TpsFit(format!(
                    "duplicate control points {j} and {i} at {:?}",
                    points[i]
                )));
            }
        }
    }
    // coplanarity: smallest principal extent relative to the largest
    let n = points.len() as f64;
    let c: Vec3 = std::array::from_fn(|a| points.iter().map(|p| p[a]).sum::<f64>() / n);
    let cov = DMatrix::from_fn(3, 3, |a, b| {
        points.iter().map(|p| (p[a] - c[a]) * (p[b] - c[b])).sum::<f64>() / n
    });
    let eig = SymmetricEigen::new(cov).eigenvalues;
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if lo <= 1e-12 * hi {
        return Err(Error::TpsFit("control points are coplanar".into()));
    }
    Ok(())
}

/// Backward warp: every output voxel samples `image` at `warp(p)`, where `p`
/// is the voxel's world position. The warp must map new-shape points to the
/// image's own shape points. Mapped positions within `1e-7` voxel of a grid
/// node snap to it, so identity and integer-shift warps are exact.
pub fn warp_image(warp: &TpsWarp, image: &Volume3D) -> Volume3D {
    let [nx, ny, nz] = image.dims();
    let mut out = Vec::with_capacity(image.len());
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let p = image.voxel_to_world([x as f64, y as f64, z as f64]);
                let mut v = image.world_to_voxel(warp.apply(p));
                for c in v.iter_mut() {
                    let r = c.round();
                    if (*c - r).abs() < 1e-7 {
                        *c = r;
                    }
                }
                out.push(image.trilinear_sample(v) as f32);
            }
        }
    }
    image.with_data(out).expect("same voxel count")
}
