use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dropout::DropoutConfig;
use crate::error::{Error, Result};
use crate::linalg::Rng;
use crate::nnet::{Activation, Loss, Mode, Network};
use crate::sdr::SdrConfig;

use super::dataset::{gen_parity, load_idx, Dataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    Parity {
        bits: usize,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        train_size: usize,
        val_size: usize,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Idx {
            images: PathBuf::from("data/mnist/images-idx3-ubyte.gz"),
            labels: PathBuf::from("data/mnist/labels-idx1-ubyte.gz"),
            train_size: 1000,
            val_size: 9000,
        }
    }
}

impl DataSource {
    pub fn load(&self, rng: &mut Rng) -> Result<Dataset> {
        match self {
            DataSource::Parity { bits } => gen_parity(*bits, rng),
            DataSource::Idx {
                images,
                labels,
                train_size,
                val_size,
            } => Dataset::split(&load_idx(images, labels)?, *train_size, *val_size),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub lr_drop_factor: f64,
    /// Fractions of the run after which the learning rate is multiplied by `lr_drop_factor`.
    pub lr_drop_points: Vec<f64>,
    pub mode: Mode,
    pub sdr: SdrConfig,
    pub dropout: DropoutConfig,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub loss: Loss,
    pub data: DataSource,
    /// Measure wall time per epoch. Off by default so metrics files are reproducible.
    pub record_wall_time: bool,
    /// End the run at the first epoch with zero training error.
    pub stop_at_zero_train_error: bool,
    /// Keep a spread snapshot every this many epochs (0: only the first and last).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 100,
            base_lr: 0.1,
            lr_drop_factor: 0.1,
            lr_drop_points: vec![0.5, 0.75],
            mode: Mode::Plain,
            sdr: SdrConfig::default(),
            dropout: DropoutConfig::default(),
            seed: 0,
            hidden: vec![64],
            hidden_activation: Activation::Relu,
            output_activation: Activation::Softmax,
            loss: Loss::CrossEntropy,
            data: DataSource::default(),
            record_wall_time: false,
            stop_at_zero_train_error: false,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return Err(Error::domain("lr", self.base_lr, "[0, inf)"));
        }
        if !(self.lr_drop_factor > 0.0 && self.lr_drop_factor.is_finite()) {
            return Err(Error::domain("lr_drop_factor", self.lr_drop_factor, "(0, inf)"));
        }
        if let Some(&p) = self.lr_drop_points.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return Err(Error::domain("lr_drop_points", p, "(0, 1)"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("hidden layer widths must be positive".into()));
        }
        self.sdr.validate()?;
        self.dropout.validate()?;
        Ok(())
    }

    /// `lr_drop_factor^(drop points passed)`; a drop at fraction `f` takes effect after
    /// epoch `f·epochs`.
    pub fn lr_scale(&self, epoch: usize) -> f64 {
        let passed = self
            .lr_drop_points
            .iter()
            .filter(|&&f| epoch as f64 > f * self.epochs as f64)
            .count();
        self.lr_drop_factor.powi(passed as i32)
    }

    /// Network layer widths for a dataset with the given input and output widths.
    pub fn layer_sizes(&self, input_dim: usize, output_dim: usize) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden.len() + 2);
        sizes.push(input_dim);
        sizes.extend_from_slice(&self.hidden);
        sizes.push(output_dim);
        sizes
    }

    /// Whether two configs differ only in their regularizer settings and seed.
    pub fn paired_with(&self, other: &TrainConfig) -> bool {
        self.epochs == other.epochs
            && self.batch_size == other.batch_size
            && self.base_lr == other.base_lr
            && self.lr_drop_factor == other.lr_drop_factor
            && self.lr_drop_points == other.lr_drop_points
            && self.hidden == other.hidden
            && self.hidden_activation == other.hidden_activation
            && self.output_activation == other.output_activation
            && self.loss == other.loss
            && self.data == other.data
    }
}

/// Learning rate for `epoch` (1-based).
pub fn lr_at(config: &TrainConfig, epoch: usize) -> f64 {
    config.base_lr * config.lr_scale(epoch)
}

/// Stream ids split off a run's root [`Rng`].
pub mod streams {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const DROPOUT: u64 = 4;
    pub const DATA: u64 = 5;
}

/// Fresh network for `config` on `data`, initialized from the run's init stream.
/// The initial weights depend only on the seed and architecture, never on the mode.
pub fn build_network(config: &TrainConfig, data: &Dataset, rng: &Rng) -> Result<Network> {
    let sizes = config.layer_sizes(data.input_dim(), data.output_dim());
    Network::new(
        &sizes,
        config.hidden_activation,
        config.output_activation,
        config.loss,
        config.mode,
        &mut rng.split(streams::INIT),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_schedule_at_half_and_three_quarters() {
        let cfg = TrainConfig::default();
        assert!((lr_at(&cfg, 10) - 0.1).abs() < 1e-15);
        assert!((lr_at(&cfg, 50) - 0.1).abs() < 1e-15);
        assert!((lr_at(&cfg, 60) - 0.01).abs() < 1e-15);
        assert!((lr_at(&cfg, 80) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn forty_epoch_run_drops_after_twenty_and_thirty() {
        let cfg = TrainConfig {
            epochs: 40,
            ..TrainConfig::default()
        };
        let lrs: Vec<f64> = (1..=40).map(|e| lr_at(&cfg, e)).collect();
        let drops: Vec<usize> = (1..40).filter(|&i| lrs[i] < lrs[i - 1]).map(|i| i + 1).collect();
        // The reduced rate is first used on the epochs after 20 and 30.
        assert_eq!(drops, vec![21, 31]);
    }

    #[test]
    fn unit_factor_is_constant() {
        let cfg = TrainConfig {
            lr_drop_factor: 1.0,
            ..TrainConfig::default()
        };
        assert!((1..=100).all(|e| lr_at(&cfg, e) == 0.1));
    }

    #[test]
    fn lr_is_non_increasing() {
        for factor in [0.1, 0.5, 1.0] {
            let cfg = TrainConfig {
                lr_drop_factor: factor,
                lr_drop_points: vec![0.3, 0.5, 0.9],
                epochs: 37,
                ..TrainConfig::default()
            };
            for e in 2..=37 {
                assert!(lr_at(&cfg, e) <= lr_at(&cfg, e - 1));
            }
        }
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut cfg = TrainConfig::default();
        cfg.sdr.zeta = 1.5;
        assert!(matches!(cfg.validate(), Err(Error::Domain { what: "sdr.zeta", .. })));
        let cfg = TrainConfig {
            lr_drop_points: vec![1.0],
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
