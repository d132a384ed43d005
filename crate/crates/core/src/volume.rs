//! Dense 3D scalar volumes: sampling, separable Gaussian filtering, seeded
//! noise, z-score normalization and the `PSVOL1` file format.

use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::binio::{read_file, Reader, Writer};
use crate::error::{Error, Result};

pub const VOLUME_MAGIC: &[u8; 8] = b"PSVOL1\0\0";

/// Dense scalar grid with a world-coordinate mapping.
///
/// Storage is x-fastest: `index = x + nx * (y + ny * z)` where
/// `dims = [nx, ny, nz]` (the H, W, D of the image).
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    dims: [usize; 3],
    origin: [f64; 3],
    spacing: [f64; 3],
    data: Vec<f32>,
}

impl Volume3D {
    pub fn new(dims: [usize; 3], data: Vec<f32>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("volume dims must be positive, got {dims:?}")));
        }
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(Error::dim(n, data.len(), "volume data length"));
        }
        Ok(Self {
            dims,
            origin: [0.0; 3],
            spacing: [1.0; 3],
            data,
        })
    }

    pub fn filled(dims: [usize; 3], value: f32) -> Self {
        let n = dims[0] * dims[1] * dims[2];
        Self::new(dims, vec![value; n]).expect("positive dims")
    }

    /// Sets the world mapping `world = origin + spacing * voxel`.
    pub fn with_geometry(mut self, origin: [f64; 3], spacing: [f64; 3]) -> Result<Self> {
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Config(format!("spacing must be positive, got {spacing:?}")));
        }
        self.origin = origin;
        self.spacing = spacing;
        Ok(self)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    pub fn voxel_to_world(&self, v: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|a| self.origin[a] + self.spacing[a] * v[a])
    }

    pub fn world_to_voxel(&self, p: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|a| (p[a] - self.origin[a]) / self.spacing[a])
    }

    /// Same geometry, new data.
    pub fn with_data(&self, data: Vec<f32>) -> Result<Self> {
        if data.len() != self.data.len() {
            return Err(Error::dim(self.data.len(), data.len(), "volume data length"));
        }
        Ok(Self {
            data,
            ..self.clone_geometry()
        })
    }

    fn clone_geometry(&self) -> Self {
        Self {
            dims: self.dims,
            origin: self.origin,
            spacing: self.spacing,
            data: Vec::new(),
        }
    }

    /// Trilinear interpolation at a continuous voxel coordinate. Coordinates
    /// outside `[0, dim - 1]` are clamped to the boundary.
    pub fn trilinear_sample(&self, p: [f64; 3]) -> f64 {
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let hi = (self.dims[a] - 1) as f64;
            let c = if p[a].is_nan() { 0.0 } else { p[a].clamp(0.0, hi) };
            let f = c.floor();
            let mut i = f as usize;
            let mut t = c - f;
            if i + 1 >= self.dims[a] {
                // on the upper face (or a 1-voxel axis)
                i = self.dims[a] - 1;
                t = 0.0;
            }
            base[a] = i;
            frac[a] = t;
        }
        let step = |a: usize| usize::from(frac[a] > 0.0);
        let [x0, y0, z0] = base;
        let (x1, y1, z1) = (x0 + step(0), y0 + step(1), z0 + step(2));
        let [tx, ty, tz] = frac;
        let v = |x, y, z| f64::from(self.get(x, y, z));
        let c00 = v(x0, y0, z0) * (1.0 - tx) + v(x1, y0, z0) * tx;
        let c10 = v(x0, y1, z0) * (1.0 - tx) + v(x1, y1, z0) * tx;
        let c01 = v(x0, y0, z1) * (1.0 - tx) + v(x1, y0, z1) * tx;
        let c11 = v(x0, y1, z1) * (1.0 - tx) + v(x1, y1, z1) * tx;
        let c0 = c00 * (1.0 - ty) + c10 * ty;
        let c1 = c01 * (1.0 - ty) + c11 * ty;
        c0 * (1.0 - tz) + c1 * tz
    }

    /// Separable Gaussian filter with clamped boundaries; `sigma` in voxels.
    pub fn gaussian_blur(&self, sigma: f64) -> Self {
        if !(sigma > 0.0) {
            return self.clone();
        }
        let kernel = gaussian_kernel(sigma);
        let mut cur: Vec<f64> = self.data.iter().map(|&v| f64::from(v)).collect();
        let mut next = vec![0.0; cur.len()];
        for axis in 0..3 {
            convolve_axis(&cur, &mut next, self.dims, axis, &kernel);
            std::mem::swap(&mut cur, &mut next);
        }
        Self {
            data: cur.into_iter().map(|v| v as f32).collect(),
            ..self.clone_geometry()
        }
    }

    /// Adds i.i.d. `N(0, sigma^2)` noise drawn from the caller's generator.
    pub fn add_noise<R: Rng + ?Sized>(&self, sigma: f64, rng: &mut R) -> Self {
        if !(sigma > 0.0) {
            return self.clone();
        }
        let data = self
            .data
            .iter()
            .map(|&v| {
                let n: f64 = StandardNormal.sample(rng);
                (f64::from(v) + sigma * n) as f32
            })
            .collect();
        Self {
            data,
            ..self.clone_geometry()
        }
    }

    pub fn add_noise_seeded(&self, sigma: f64, seed: u64) -> Self {
        self.add_noise(sigma, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn normalize(&self, stats: &NormStats) -> Result<Self> {
        stats.check()?;
        let data = self
            .data
            .iter()
            .map(|&v| ((f64::from(v) - stats.mean) / stats.std) as f32)
            .collect();
        Ok(Self {
            data,
            ..self.clone_geometry()
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v)).sum()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.to_writer().write_to(path)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_writer().finish()
    }

    fn to_writer(&self) -> Writer {
        let mut w = Writer::new(VOLUME_MAGIC);
        w.u32(self.dims[0] as u32)
            .u32(self.dims[1] as u32)
            .u32(self.dims[2] as u32)
            .bytes(&[0u8; 4])
            .f32s(self.data.iter().copied());
        w
    }

    /// Reads a `PSVOL1` file. The format carries no geometry, so the result
    /// has unit spacing and zero origin.
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        Self::from_bytes(path, &bytes)
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(path, bytes, VOLUME_MAGIC)?;
        let dims = [
            r.u32("H")? as usize,
            r.u32("W")? as usize,
            r.u32("D")? as usize,
        ];
        r.bytes(4, "reserved")?;
        let n = dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .ok_or_else(|| Error::format(path, "dims overflow"))?;
        let data = r.f32s(n, "voxel data")?;
        r.finish()?;
        Self::new(dims, data).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Normalized discrete Gaussian truncated at `ceil(3 sigma)` taps per side.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

fn convolve_axis(src: &[f64], dst: &mut [f64], dims: [usize; 3], axis: usize, kernel: &[f64]) {
    let radius = (kernel.len() / 2) as i64;
    let n = dims[axis] as i64;
    let stride = match axis {
        0 => 1,
        1 => dims[0],
        _ => dims[0] * dims[1],
    };
    let mut line = vec![0.0; dims[axis]];
    let mut out = vec![0.0; dims[axis]];
    // iterate over every 1D line along `axis`
    let others: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
    for j in 0..dims[others[1]] {
        for i in 0..dims[others[0]] {
            let mut start = 0usize;
            let mut coord = [0usize; 3];
            coord[others[0]] = i;
            coord[others[1]] = j;
            start += coord[0] + dims[0] * (coord[1] + dims[1] * coord[2]);
            for (t, l) in line.iter_mut().enumerate() {
                *l = src[start + t * stride];
            }
            for (t, o) in out.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (ki, &w) in kernel.iter().enumerate() {
                    let s = (t as i64 + ki as i64 - radius).clamp(0, n - 1) as usize;
                    acc += w * line[s];
                }
                *o = acc;
            }
            for (t, o) in out.iter().enumerate() {
                dst[start + t * stride] = *o;
            }
        }
    }
}

/// Global z-score statistics, computed once over a training set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub fn from_volumes<'a>(vols: impl IntoIterator<Item = &'a Volume3D>) -> Result<Self> {
        let mut n = 0usize;
        let mut mean = 0.0;
        let mut m2 = 0.0;
        // Welford over every voxel of every volume
        for v in vols {
            for &x in v.data() {
                n += 1;
                let x = f64::from(x);
                let d = x - mean;
                mean += d / n as f64;
                m2 += d * (x - mean);
            }
        }
        if n == 0 {
            return Err(Error::Degenerate("no voxels to compute statistics from".into()));
        }
        let stats = Self {
            mean,
            std: (m2 / n as f64).sqrt(),
        };
        stats.check()?;
        Ok(stats)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.std > 0.0) || !self.std.is_finite() {
            return Err(Error::Degenerate(format!(
                "dataset intensity std is {} (constant training images?)",
                self.std
            )));
        }
        Ok(())
    }
}

/// Intensity model for rasterized images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImagingConfig {
    pub fg_mean: f64,
    pub bg_mean: f64,
    pub intensity_sigma: f64,
    pub noise_sigma: f64,
    pub blur_sigma: f64,
}

impl Default for ImagingConfig {
    fn default() -> Self {
        Self {
            fg_mean: 0.7,
            bg_mean: 0.3,
            intensity_sigma: 0.05,
            noise_sigma: 0.02,
            blur_sigma: 1.0,
        }
    }
}

impl ImagingConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("intensity_sigma", self.intensity_sigma),
            ("noise_sigma", self.noise_sigma),
            ("blur_sigma", self.blur_sigma),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("imaging.{name} must be >= 0, got {v}")));
            }
        }
        if self.fg_mean == self.bg_mean {
            return Err(Error::Config(
                "imaging.fg_mean equals imaging.bg_mean; the shape would be invisible".into(),
            ));
        }
        Ok(())
    }
}
