//! Parametric 3D supershapes with built-in dense correspondences.
//!
//! A shape is the spherical product of two superformula curves sharing the
//! same exponents: `n1 = c1`, `n2 = n3 = c2`, `a = b = 1`, with the lobe
//! count `m` as the rotational order. Every shape is evaluated on the same
//! `(theta, phi)` lattice, so point `k` corresponds across the population.
//! Shapes are scaled by `1 / r_max^2`, where `r_max` bounds the superformula
//! radius, which keeps every surface inside the unit ball while leaving the
//! sphere (`c1 = c2 = 2`) untouched.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::binio::{read_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::mesh::{TriMesh, Vec3};
use crate::volume::{ImagingConfig, Volume3D};

pub const POINTS_MAGIC: &[u8; 8] = b"PSPTS1\0\0";

/// Fraction of the smallest volume dimension covered by the unit ball's
/// diameter when rasterizing.
pub const FIELD_OF_VIEW: f64 = 0.8;

pub const MIN_RASTER_DIM: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupershapeParams {
    pub lobes: u32,
    pub c1: f64,
    pub c2: f64,
}

impl SupershapeParams {
    pub fn new(lobes: u32, c1: f64, c2: f64) -> Result<Self> {
        let p = Self { lobes, c1, c2 };
        p.validate()?;
        Ok(p)
    }

    pub fn sphere() -> Self {
        Self {
            lobes: 3,
            c1: 2.0,
            c2: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lobes == 0 {
            return Err(Error::Domain("lobe count must be >= 1".into()));
        }
        if !(self.c1 > 0.0 && self.c1.is_finite() && self.c2 > 0.0 && self.c2.is_finite()) {
            return Err(Error::Domain(format!(
                "curvature exponents must be positive and finite, got c1={}, c2={}",
                self.c1, self.c2
            )));
        }
        Ok(())
    }

    /// Superformula radius at angle `gamma`.
    pub fn radius(&self, gamma: f64) -> f64 {
        superformula(gamma, f64::from(self.lobes), self.c1, self.c2, self.c2)
    }

    /// Upper bound on [`Self::radius`] over all angles.
    pub fn radius_bound(&self) -> f64 {
        if self.c2 > 2.0 {
            2f64.powf((self.c2 / 2.0 - 1.0) / self.c1)
        } else {
            1.0
        }
    }

    fn scale(&self) -> f64 {
        1.0 / self.radius_bound().powi(2)
    }

    /// Surface point at lattice angles `(theta, phi)`.
    pub fn surface_point(&self, theta: f64, phi: f64) -> Vec3 {
        let s = self.scale();
        let r1 = self.radius(theta);
        let r2 = self.radius(phi);
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        [s * r2 * r1 * ct * cp, s * r2 * r1 * st * cp, s * r2 * sp]
    }

    /// Exact inside test for the (star-convex) surface.
    pub fn contains(&self, p: Vec3) -> bool {
        let rho = crate::mesh::norm(p);
        if rho == 0.0 {
            return true;
        }
        let theta = p[1].atan2(p[0]);
        let elev = (p[2] / rho).clamp(-1.0, 1.0).asin();
        let r1 = self.radius(theta);
        // the surface point at parameter phi has elevation atan(tan(phi) / r1)
        let phi = (r1 * elev.sin()).atan2(elev.cos());
        let (sp, cp) = phi.sin_cos();
        let surface = self.scale() * self.radius(phi) * (r1 * r1 * cp * cp + sp * sp).sqrt();
        rho <= surface
    }
}

pub fn superformula(gamma: f64, m: f64, n1: f64, n2: f64, n3: f64) -> f64 {
    let u = m * gamma / 4.0;
    (u.cos().abs().powf(n2) + u.sin().abs().powf(n3)).powf(-1.0 / n1)
}

/// Distribution of the curvature exponents: `chi2(dof) + shift`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentDistribution {
    pub dof: f64,
    pub shift: f64,
}

impl Default for ExponentDistribution {
    fn default() -> Self {
        Self {
            dof: 4.0,
            shift: 1.0,
        }
    }
}

pub fn sample_params(
    lobes: u32,
    dist: ExponentDistribution,
    seed: u64,
    count: usize,
) -> Result<Vec<SupershapeParams>> {
    if count == 0 {
        return Err(Error::Config("shape count must be >= 1".into()));
    }
    if lobes == 0 {
        return Err(Error::Config("lobe count must be >= 1".into()));
    }
    let chi = ChiSquared::new(dist.dof)
        .map_err(|e| Error::Config(format!("chi-square dof {}: {e}", dist.dof)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let c1 = chi.sample(&mut rng) + dist.shift;
            let c2 = chi.sample(&mut rng) + dist.shift;
            SupershapeParams::new(lobes, c1, c2)
        })
        .collect()
}

/// The shared `(theta, phi)` parameter lattice. Point `k = j * n_theta + i`
/// sits at `theta_i = -pi + 2 pi i / n_theta` and
/// `phi_j = -pi/2 + (j + 1/2) pi / n_phi` (poles excluded).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lattice {
    pub n_theta: usize,
    pub n_phi: usize,
}

impl Lattice {
    pub fn new(n_theta: usize, n_phi: usize) -> Result<Self> {
        let l = Self { n_theta, n_phi };
        l.validate()?;
        Ok(l)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_theta < 8 || self.n_phi < 5 {
            return Err(Error::Config(format!(
                "lattice must be at least 8x5, got {}x{}",
                self.n_theta, self.n_phi
            )));
        }
        Ok(())
    }

    pub fn num_points(&self) -> usize {
        self.n_theta * self.n_phi
    }

    pub fn angles(&self, k: usize) -> (f64, f64) {
        let (i, j) = (k % self.n_theta, k / self.n_theta);
        (
            -PI + 2.0 * PI * i as f64 / self.n_theta as f64,
            -FRAC_PI_2 + (j as f64 + 0.5) * PI / self.n_phi as f64,
        )
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.n_theta + (i % self.n_theta)
    }

    /// Two triangles per lattice quad plus fan caps onto pole vertices
    /// `M` (south) and `M + 1` (north). Faces are wound outward.
    pub fn faces(&self) -> Vec<[usize; 3]> {
        let m = self.num_points();
        let (south, north) = (m, m + 1);
        let mut faces = Vec::with_capacity(2 * self.n_theta * self.n_phi);
        for j in 0..self.n_phi - 1 {
            for i in 0..self.n_theta {
                let a = self.index(i, j);
                let b = self.index(i + 1, j);
                let c = self.index(i, j + 1);
                let d = self.index(i + 1, j + 1);
                faces.push([a, b, d]);
                faces.push([a, d, c]);
            }
        }
        for i in 0..self.n_theta {
            faces.push([self.index(i, 0), south, self.index(i + 1, 0)]);
            let top = self.n_phi - 1;
            faces.push([self.index(i, top), self.index(i + 1, top), north]);
        }
        faces
    }

    /// Lattice mesh over arbitrary corresponded points; pole vertices are the
    /// centroids of the first and last latitude rings.
    pub fn mesh_from_points(&self, shape: &ShapeSample) -> Result<TriMesh> {
        if shape.num_points() != self.num_points() {
            return Err(Error::dim(self.num_points(), shape.num_points(), "lattice points"));
        }
        let mut vertices: Vec<Vec3> = shape.points().collect();
        let ring_centroid = |j: usize| -> Vec3 {
            let mut c = [0.0; 3];
            for i in 0..self.n_theta {
                let p = vertices[self.index(i, j)];
                for a in 0..3 {
                    c[a] += p[a] / self.n_theta as f64;
                }
            }
            c
        };
        let south = ring_centroid(0);
        let north = ring_centroid(self.n_phi - 1);
        vertices.push(south);
        vertices.push(north);
        TriMesh::new(vertices, self.faces())
    }
}

/// `M` corresponded surface points, flattened as `[x0, y0, z0, x1, ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSample {
    coords: Vec<f64>,
}

impl ShapeSample {
    pub fn from_flat(coords: Vec<f64>) -> Result<Self> {
        if coords.len() % 3 != 0 {
            return Err(Error::Domain(format!(
                "shape vector length {} is not divisible by 3",
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain("non-finite shape coordinate".into()));
        }
        Ok(Self { coords })
    }

    pub fn from_points(points: &[Vec3]) -> Result<Self> {
        Self::from_flat(points.iter().flatten().copied().collect())
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.coords
    }

    pub fn num_points(&self) -> usize {
        self.coords.len() / 3
    }

    pub fn point(&self, k: usize) -> Vec3 {
        [self.coords[3 * k], self.coords[3 * k + 1], self.coords[3 * k + 2]]
    }

    pub fn points(&self) -> impl Iterator<Item = Vec3> + '_ {
        self.coords.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(POINTS_MAGIC);
        w.u32(self.num_points() as u32)
            .f32s(self.coords.iter().map(|&c| c as f32));
        w.finish()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = Writer::new(POINTS_MAGIC);
        w.u32(self.num_points() as u32)
            .f32s(self.coords.iter().map(|&c| c as f32));
        w.write_to(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        Self::from_bytes(path, &bytes)
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(path, bytes, POINTS_MAGIC)?;
        let m = r.u32("M")? as usize;
        let coords = r.f32s(3 * m, "points")?;
        r.finish()?;
        Self::from_flat(coords.into_iter().map(f64::from).collect())
            .map_err(|e| Error::format(path, e.to_string()))
    }
}

pub fn surface_points(params: &SupershapeParams, lattice: Lattice) -> Result<ShapeSample> {
    params.validate()?;
    lattice.validate()?;
    let mut coords = Vec::with_capacity(3 * lattice.num_points());
    for k in 0..lattice.num_points() {
        let (theta, phi) = lattice.angles(k);
        let p = params.surface_point(theta, phi);
        if p.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite surface point for {params:?} at theta={theta}, phi={phi}"
            )));
        }
        coords.extend_from_slice(&p);
    }
    ShapeSample::from_flat(coords)
}

/// Watertight triangulation of the lattice surface; vertex `k < M` is exactly
/// `surface_points` point `k`, followed by the two analytic pole vertices.
pub fn extract_mesh(params: &SupershapeParams, lattice: Lattice) -> Result<TriMesh> {
    let shape = surface_points(params, lattice)?;
    let mut vertices: Vec<Vec3> = shape.points().collect();
    vertices.push(params.surface_point(0.0, -FRAC_PI_2));
    vertices.push(params.surface_point(0.0, FRAC_PI_2));
    TriMesh::new(vertices, lattice.faces())
}

/// Origin and spacing placing the world unit ball at the volume center with
/// its diameter spanning [`FIELD_OF_VIEW`] of the smallest dimension.
pub fn shape_frame(dims: [usize; 3]) -> ([f64; 3], [f64; 3]) {
    let min_dim = *dims.iter().min().unwrap() as f64;
    let spacing = 2.0 / (FIELD_OF_VIEW * min_dim);
    let origin = std::array::from_fn(|a| -spacing * (dims[a] as f64 - 1.0) / 2.0);
    (origin, [spacing; 3])
}

pub fn check_raster_dims(dims: [usize; 3]) -> Result<()> {
    if dims.iter().any(|&d| d < MIN_RASTER_DIM) {
        return Err(Error::Config(format!(
            "volume dims {dims:?} too small; each must be >= {MIN_RASTER_DIM}"
        )));
    }
    Ok(())
}

/// Binary foreground mask in the shape frame; independent of any imaging
/// parameters.
pub fn foreground_mask(params: &SupershapeParams, dims: [usize; 3]) -> Result<Vec<bool>> {
    params.validate()?;
    check_raster_dims(dims)?;
    let (origin, spacing) = shape_frame(dims);
    let mut mask = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p = [
                    origin[0] + spacing[0] * x as f64,
                    origin[1] + spacing[1] * y as f64,
                    origin[2] + spacing[2] * z as f64,
                ];
                mask.push(params.contains(p));
            }
        }
    }
    Ok(mask)
}

/// Renders the shape into an intensity volume: per-voxel Gaussian
/// foreground/background intensities, then additive noise, then blur.
pub fn rasterize(
    params: &SupershapeParams,
    dims: [usize; 3],
    imaging: &ImagingConfig,
    seed: u64,
) -> Result<Volume3D> {
    imaging.validate()?;
    let mask = foreground_mask(params, dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fg = Normal::new(imaging.fg_mean, imaging.intensity_sigma)
        .map_err(|e| Error::Config(e.to_string()))?;
    let bg = Normal::new(imaging.bg_mean, imaging.intensity_sigma)
        .map_err(|e| Error::Config(e.to_string()))?;
    let data = mask
        .iter()
        .map(|&inside| {
            let v = if inside {
                fg.sample(&mut rng)
            } else {
                bg.sample(&mut rng)
            };
            v as f32
        })
        .collect();
    let (origin, spacing) = shape_frame(dims);
    let vol = Volume3D::new(dims, data)?.with_geometry(origin, spacing)?;
    let noise_seed: u64 = rng.random();
    Ok(vol
        .add_noise_seeded(imaging.noise_sigma, noise_seed)
        .gaussian_blur(imaging.blur_sigma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{dist2, norm};

    fn lattice() -> Lattice {
        Lattice::new(24, 13).unwrap()
    }

    #[test]
    fn params_are_seeded_and_grouped() {
        let d = ExponentDistribution::default();
        let a = sample_params(3, d, 7, 5000).unwrap();
        assert_eq!(a.len(), 5000);
        assert!(a.iter().all(|p| p.lobes == 3 && p.c1 >= 1.0 && p.c2 >= 1.0));
        assert_eq!(a, sample_params(3, d, 7, 5000).unwrap());
        assert!(sample_params(3, d, 7, 0).is_err());
    }

    #[test]
    fn chi_square_mean() {
        let p = sample_params(3, ExponentDistribution::default(), 99, 10_000).unwrap();
        let mean = p.iter().map(|p| p.c1 - 1.0).sum::<f64>() / p.len() as f64;
        assert!((mean - 4.0).abs() < 0.2, "mean {mean}");
    }

    #[test]
    fn sphere_points_have_unit_norm() {
        for m in [1, 3, 5, 7] {
            let p = SupershapeParams::new(m, 2.0, 2.0).unwrap();
            let s = surface_points(&p, lattice()).unwrap();
            assert!(s.points().all(|q| (norm(q) - 1.0).abs() < 1e-9));
        }
    }

    #[test]
    fn shapes_stay_inside_unit_ball() {
        for p in sample_params(3, ExponentDistribution::default(), 1, 200).unwrap() {
            let s = surface_points(&p, lattice()).unwrap();
            assert!(s.points().all(|q| norm(q) <= 1.0 + 1e-12), "{p:?}");
        }
    }

    #[test]
    fn correspondence_contract() {
        let l = lattice();
        let a = surface_points(&SupershapeParams::new(3, 3.0, 5.0).unwrap(), l).unwrap();
        let b = surface_points(&SupershapeParams::new(3, 1.5, 1.2).unwrap(), l).unwrap();
        assert_eq!(a.num_points(), b.num_points());
        // same angular index: longitudes agree point by point
        for k in 0..l.num_points() {
            let (pa, pb) = (a.point(k), b.point(k));
            let (ta, tb) = (pa[1].atan2(pa[0]), pb[1].atan2(pb[0]));
            let d = (ta - tb).rem_euclid(2.0 * PI);
            assert!(d < 1e-9 || 2.0 * PI - d < 1e-9);
        }
    }

    #[test]
    fn three_lobe_rotational_symmetry() {
        let l = Lattice::new(30, 13).unwrap();
        let p = SupershapeParams::new(3, 2.5, 4.0).unwrap();
        let s = surface_points(&p, l).unwrap();
        let pts: Vec<Vec3> = s.points().collect();
        let (sn, cs) = (2.0 * PI / 3.0).sin_cos();
        let spacing = 2.0 * PI / l.n_theta as f64 * 0.5;
        for q in &pts {
            let r = [cs * q[0] - sn * q[1], sn * q[0] + cs * q[1], q[2]];
            let nn = pts.iter().map(|t| dist2(*t, r)).fold(f64::INFINITY, f64::min).sqrt();
            assert!(nn < spacing, "nearest neighbour {nn}");
        }
    }

    #[test]
    fn refined_lattice_is_stable() {
        let p = SupershapeParams::new(3, 3.0, 6.0).unwrap();
        let coarse = extract_mesh(&p, Lattice::new(16, 9).unwrap()).unwrap();
        let fine = extract_mesh(&p, Lattice::new(32, 18).unwrap()).unwrap();
        let spacing = 2.0 * PI / 16.0;
        for v in &coarse.vertices {
            assert!(fine.distance_to(*v) < spacing);
        }
    }

    #[test]
    fn sphere_mesh_area_and_watertight() {
        let l = Lattice::new(64, 33).unwrap();
        let mesh = extract_mesh(&SupershapeParams::sphere(), l).unwrap();
        let area = mesh.area();
        assert!(((area - 4.0 * PI) / (4.0 * PI)).abs() < 0.02, "area {area}");
        assert!(mesh.is_watertight());
        let pts = surface_points(&SupershapeParams::sphere(), l).unwrap();
        for (k, p) in pts.points().enumerate() {
            assert_eq!(mesh.vertices[k], p);
        }
        let lobed = extract_mesh(&SupershapeParams::new(5, 1.3, 7.0).unwrap(), lattice()).unwrap();
        assert!(lobed.is_watertight());
    }

    #[test]
    fn lattice_validation() {
        assert!(Lattice::new(7, 5).is_err());
        assert!(Lattice::new(8, 4).is_err());
        assert!(surface_points(
            &SupershapeParams { lobes: 3, c1: 0.0, c2: 1.0 },
            lattice()
        )
        .is_err());
    }

    #[test]
    fn contains_agrees_with_surface() {
        let p = SupershapeParams::new(3, 2.2, 5.5).unwrap();
        let s = surface_points(&p, lattice()).unwrap();
        for q in s.points() {
            assert!(p.contains(crate::mesh::scale(q, 0.999)));
            assert!(!p.contains(crate::mesh::scale(q, 1.001)));
        }
    }

    #[test]
    fn rasterized_sphere_volume() {
        let imaging = ImagingConfig {
            intensity_sigma: 0.0,
            noise_sigma: 0.0,
            blur_sigma: 0.0,
            ..Default::default()
        };
        let v = rasterize(&SupershapeParams::sphere(), [48; 3], &imaging, 1).unwrap();
        let fg = v.data().iter().filter(|&&x| x == 0.7f32).count();
        let bg = v.data().iter().filter(|&&x| x == 0.3f32).count();
        assert_eq!(fg + bg, v.len());
        let r = 0.4 * 48.0;
        let expect = 4.0 / 3.0 * PI * r * r * r;
        assert!(((fg as f64 - expect) / expect).abs() < 0.03, "{fg} vs {expect}");
    }

    #[test]
    fn rasterize_is_deterministic_and_checks_dims() {
        let p = SupershapeParams::new(3, 3.0, 3.0).unwrap();
        let im = ImagingConfig::default();
        let a = rasterize(&p, [20; 3], &im, 4).unwrap();
        assert_eq!(a, rasterize(&p, [20; 3], &im, 4).unwrap());
        assert!(matches!(rasterize(&p, [15, 20, 20], &im, 4), Err(Error::Config(_))));
    }

    #[test]
    fn mask_is_independent_of_imaging() {
        let p = SupershapeParams::new(3, 2.0, 4.0).unwrap();
        let mask = foreground_mask(&p, [24; 3]).unwrap();
        for (noise, sigma) in [(0.0, 0.0), (0.3, 0.2)] {
            let im = ImagingConfig {
                noise_sigma: noise,
                intensity_sigma: sigma,
                blur_sigma: 0.0,
                ..Default::default()
            };
            let v = rasterize(&p, [24; 3], &im, 9).unwrap();
            if noise == 0.0 {
                let derived: Vec<bool> = v.data().iter().map(|&x| x > 0.5).collect();
                assert_eq!(derived, mask);
            }
        }
        assert_eq!(mask, foreground_mask(&p, [24; 3]).unwrap());
    }

    #[test]
    fn heavier_blur_weakens_boundary_gradients() {
        let p = SupershapeParams::new(3, 2.5, 4.5).unwrap();
        let dims = [32; 3];
        let mask = foreground_mask(&p, dims).unwrap();
        let energy = |blur: f64| {
            let im = ImagingConfig {
                blur_sigma: blur,
                ..Default::default()
            };
            let v = rasterize(&p, dims, &im, 3).unwrap();
            let mut e = 0.0;
            for z in 1..dims[2] - 1 {
                for y in 1..dims[1] - 1 {
                    for x in 1..dims[0] - 1 {
                        let i = v.index(x, y, z);
                        let boundary = mask[i] != mask[i + 1] || mask[i] != mask[i + dims[0]];
                        if boundary {
                            let gx = f64::from(v.get(x + 1, y, z) - v.get(x - 1, y, z));
                            let gy = f64::from(v.get(x, y + 1, z) - v.get(x, y - 1, z));
                            let gz = f64::from(v.get(x, y, z + 1) - v.get(x, y, z - 1));
                            e += gx * gx + gy * gy + gz * gz;
                        }
                    }
                }
            }
            e
        };
        assert!(energy(2.5) < energy(1.0));
    }

    #[test]
    fn points_round_trip() {
        let s = surface_points(&SupershapeParams::new(3, 2.0, 3.0).unwrap(), lattice()).unwrap();
        let bytes = s.to_bytes();
        assert_eq!(bytes.len(), 12 + 12 * s.num_points());
        let back = ShapeSample::from_bytes(Path::new("mem"), &bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        for (a, b) in s.as_flat().iter().zip(back.as_flat()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
