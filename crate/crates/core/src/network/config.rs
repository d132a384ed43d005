use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture of the regression network: a stack of strided 3D
/// convolutions, fully connected layers, and two linear heads of width
/// `output_dim` (mean scores and log aleatoric variances). Every hidden
/// layer is followed by a parametric ReLU and, when enabled, dropout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub input_dims: [usize; 3],
    pub conv_channels: Vec<usize>,
    pub kernel_size: usize,
    pub stride: usize,
    pub fc_widths: Vec<usize>,
    pub dropout: f64,
    pub output_dim: usize,
}

impl NetConfig {
    /// Five conv stages (8, 16, 16, 32, 32), stride 2, then FC (96, 48).
    pub fn desk(input_dims: [usize; 3], output_dim: usize) -> Self {
        Self {
            input_dims,
            conv_channels: vec![8, 16, 16, 32, 32],
            kernel_size: 3,
            stride: 2,
            fc_widths: vec![96, 48],
            dropout: 0.2,
            output_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("network.input_dims must be positive".into()));
        }
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return Err(Error::Config("network.conv_channels must be non-empty and positive".into()));
        }
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return Err(Error::Config(format!(
                "network.kernel_size must be odd, got {}",
                self.kernel_size
            )));
        }
        if self.stride == 0 {
            return Err(Error::Config("network.stride must be >= 1".into()));
        }
        if self.fc_widths.is_empty() || self.fc_widths.contains(&0) {
            return Err(Error::Config("network.fc_widths must be non-empty and positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "network.dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.output_dim == 0 {
            return Err(Error::Config("network.output_dim must be >= 1".into()));
        }
        Ok(())
    }

    /// Five conv and two fully connected stages.
    pub fn is_standard_depth(&self) -> bool {
        self.conv_channels.len() == 5 && self.fc_widths.len() == 2
    }

    /// Spatial size after each conv stage.
    pub fn stage_dims(&self) -> Vec<[usize; 3]> {
        let pad = self.kernel_size / 2;
        let mut dims = self.input_dims;
        self.conv_channels
            .iter()
            .map(|_| {
                dims = dims.map(|d| (d + 2 * pad - self.kernel_size) / self.stride + 1);
                dims
            })
            .collect()
    }

    pub fn flat_features(&self) -> usize {
        let last = *self.stage_dims().last().expect("at least one stage");
        last.iter().product::<usize>() * self.conv_channels.last().unwrap()
    }
}

/// Which loss each epoch optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSchedule {
    /// L2 for the first epoch, the Bayesian loss afterwards.
    L2ThenBayesian,
    /// L2 throughout (the deterministic baseline).
    L2Only,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    L2,
    Bayesian,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::L2 => "l2",
            LossKind::Bayesian => "bayesian",
        }
    }
}

impl LossSchedule {
    pub fn kind(self, epoch: usize) -> LossKind {
        match self {
            LossSchedule::L2ThenBayesian if epoch > 1 => LossKind::Bayesian,
            _ => LossKind::L2,
        }
    }

    pub fn final_kind(self) -> LossKind {
        match self {
            LossSchedule::L2ThenBayesian => LossKind::Bayesian,
            LossSchedule::L2Only => LossKind::L2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub dropout: bool,
    pub schedule: LossSchedule,
}

impl TrainConfig {
    /// Adam at `1e-4`, dropout on, L2 for epoch 1 then the Bayesian loss.
    pub fn uncertain(epochs: usize, seed: u64) -> Self {
        Self {
            lr: 1e-4,
            batch_size: 8,
            epochs,
            seed,
            dropout: true,
            schedule: LossSchedule::L2ThenBayesian,
        }
    }

    /// The deterministic baseline: no dropout, L2 only.
    pub fn baseline(epochs: usize, seed: u64) -> Self {
        Self {
            dropout: false,
            schedule: LossSchedule::L2Only,
            ..Self::uncertain(epochs, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("train.lr must be > 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be >= 1".into()));
        }
        if self.epochs < 2 {
            return Err(Error::Config(format!(
                "train.epochs must be >= 2 (one L2 epoch plus Bayesian epochs), got {}",
                self.epochs
            )));
        }
        Ok(())
    }
}
