use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::KernelCovariance;
use crate::error::{Error, Result};
use crate::network::NetConfig;
use crate::supershapes::{check_raster_dims, ExponentDistribution, Lattice};
use crate::volume::ImagingConfig;

use super::io::read_text;

/// How the three test sets are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Aleatoric set: heavier blur. Epistemic set: a different lobe count.
    Synthetic,
    /// Outlier ranking of a mixed pool by image and distance-transform PCA.
    Principled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub dims: [usize; 3],
    /// Correspondence lattice of the shape model.
    pub lattice: Lattice,
    /// Lattice of the reference surfaces used for error measurement.
    pub eval_lattice: Lattice,
    pub lobes: u32,
    pub epistemic_lobes: u32,
    pub exponents: ExponentDistribution,
    /// Training originals (synthetic split) or pool size (principled split).
    pub count: usize,
    pub test_size: usize,
    pub split: SplitMode,
    /// Blur of the aleatoric group (synthetic) or of the blurred share of
    /// the pool (principled).
    pub aleatoric_blur: f64,
    /// Principled split: share of the pool drawn with `epistemic_lobes` and
    /// share drawn with `aleatoric_blur`.
    pub pool_epistemic_share: f64,
    pub pool_aleatoric_share: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dims: [48; 3],
            lattice: Lattice { n_theta: 24, n_phi: 13 },
            eval_lattice: Lattice { n_theta: 48, n_phi: 25 },
            lobes: 3,
            epistemic_lobes: 5,
            exponents: ExponentDistribution::default(),
            count: 100,
            test_size: 100,
            split: SplitMode::Synthetic,
            aleatoric_blur: 2.5,
            pool_epistemic_share: 0.15,
            pool_aleatoric_share: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Variance fraction retained by the shape model.
    pub pca_variance: f64,
    pub kernel: KernelCovariance,
    /// TPS regularization relative to the control-point bounding diagonal.
    pub tps_lambda: f64,
    /// Augmented training and validation counts at 100% of the originals;
    /// smaller fractions scale both proportionally.
    pub train_count: usize,
    pub val_count: usize,
    /// Training-data fractions; each gets its own shape model and networks.
    pub fractions: Vec<f64>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            pca_variance: 0.95,
            kernel: KernelCovariance::Mahalanobis,
            tps_lambda: 0.0,
            train_count: 400,
            val_count: 100,
            fractions: vec![0.25, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub conv_channels: Vec<usize>,
    pub kernel_size: usize,
    pub stride: usize,
    pub fc_widths: Vec<usize>,
    pub dropout: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let d = NetConfig::desk([48; 3], 1);
        Self {
            conv_channels: d.conv_channels,
            kernel_size: d.kernel_size,
            stride: d.stride,
            fc_widths: d.fc_widths,
            dropout: d.dropout,
        }
    }
}

impl NetworkConfig {
    pub fn net_config(&self, input_dims: [usize; 3], output_dim: usize) -> NetConfig {
        NetConfig {
            input_dims,
            conv_channels: self.conv_channels.clone(),
            kernel_size: self.kernel_size,
            stride: self.stride,
            fc_widths: self.fc_widths.clone(),
            dropout: self.dropout,
            output_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Also train the deterministic baseline (dropout off, L2 only) at the
    /// largest fraction.
    pub baseline: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 1e-4,
            batch_size: 8,
            baseline: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    /// Dropout samples per test image.
    pub samples: usize,
    /// Score draws per entropy field.
    pub field_draws: usize,
    /// Test images per set that get exported uncertainty fields.
    pub field_images: usize,
    /// Midpoint subdivisions of the mean mesh used for reconstruction.
    pub mesh_subdivisions: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            samples: 30,
            field_draws: 1000,
            field_images: 2,
            mesh_subdivisions: 1,
        }
    }
}

/// Every knob of the pipeline. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub imaging: ImagingConfig,
    pub augment: AugmentConfig,
    pub network: NetworkConfig,
    pub training: TrainingConfig,
    pub inference: InferenceConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            data: DataConfig::default(),
            imaging: ImagingConfig::default(),
            augment: AugmentConfig::default(),
            network: NetworkConfig::default(),
            training: TrainingConfig::default(),
            inference: InferenceConfig::default(),
        }
    }
}

fn positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::Config(format!("{name} must be >= 1")));
    }
    Ok(())
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        check_raster_dims(d.dims)?;
        d.lattice.validate()?;
        d.eval_lattice.validate()?;
        positive("data.count", d.count)?;
        positive("data.test_size", d.test_size)?;
        if d.lobes == 0 || d.epistemic_lobes == 0 {
            return Err(Error::Config("data.lobes and data.epistemic_lobes must be >= 1".into()));
        }
        if !(d.exponents.dof > 0.0) || !(d.exponents.shift >= 1.0) {
            return Err(Error::Config("data.exponents needs dof > 0 and shift >= 1".into()));
        }
        if !(d.aleatoric_blur >= 0.0) || !d.aleatoric_blur.is_finite() {
            return Err(Error::Config("data.aleatoric_blur must be >= 0".into()));
        }
        for (name, v) in [
            ("data.pool_epistemic_share", d.pool_epistemic_share),
            ("data.pool_aleatoric_share", d.pool_aleatoric_share),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        match d.split {
            SplitMode::Synthetic if d.count < 2 => {
                return Err(Error::Config("data.count must be >= 2 training originals".into()));
            }
            SplitMode::Principled if d.count < 3 * d.test_size + 2 => {
                return Err(Error::Config(format!(
                    "data.count ({}) must be at least 3 * data.test_size + 2 for the principled split",
                    d.count
                )));
            }
            _ => {}
        }
        self.imaging.validate()?;
        let a = &self.augment;
        if !(a.pca_variance > 0.0 && a.pca_variance <= 1.0) {
            return Err(Error::Config(format!("augment.pca_variance must lie in (0, 1], got {}", a.pca_variance)));
        }
        if !(a.tps_lambda >= 0.0) || !a.tps_lambda.is_finite() {
            return Err(Error::Config("augment.tps_lambda must be >= 0".into()));
        }
        positive("augment.train_count", a.train_count)?;
        positive("augment.val_count", a.val_count)?;
        if a.fractions.is_empty() {
            return Err(Error::Config("augment.fractions must not be empty".into()));
        }
        for w in a.fractions.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::Config("augment.fractions must be strictly increasing".into()));
            }
        }
        if a.fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
            return Err(Error::Config("augment.fractions must lie in (0, 1]".into()));
        }
        self.network.net_config(d.dims, 1).validate()?;
        let t = &self.training;
        positive("training.batch_size", t.batch_size)?;
        if t.epochs < 2 {
            return Err(Error::Config(format!("training.epochs must be >= 2, got {}", t.epochs)));
        }
        if !(t.lr > 0.0) || !t.lr.is_finite() {
            return Err(Error::Config(format!("training.lr must be > 0, got {}", t.lr)));
        }
        let i = &self.inference;
        if i.samples < 2 {
            return Err(Error::Config(format!("inference.samples must be >= 2, got {}", i.samples)));
        }
        if i.field_draws < 10 {
            return Err(Error::Config(format!("inference.field_draws must be >= 10, got {}", i.field_draws)));
        }
        Ok(())
    }

    /// Number of originals used at training fraction `f`.
    pub fn originals_at(&self, f: f64, available: usize) -> usize {
        ((f * available as f64).round() as usize).clamp(2, available)
    }

    pub fn counts_at(&self, f: f64) -> (usize, usize) {
        let s = |n: usize| ((f * n as f64).round() as usize).max(1);
        (s(self.augment.train_count), s(self.augment.val_count))
    }
}

/// Directory label of a training fraction, e.g. `frac_0.25`.
pub fn fraction_label(f: f64) -> String {
    format!("frac_{f:.2}")
}
