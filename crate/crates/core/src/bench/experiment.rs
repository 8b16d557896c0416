use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Rng;
use crate::nnet::{Activation, Loss, Mode};
use crate::sdr::{SigmaCadence, ZetaSchedule};

use super::config::{build_network, DataSource, TrainConfig};
use super::dataset::{gen_parity, Dataset};
use super::train::{run_id, train, MetricsRecord, RunRecords, TrainRun};

/// `(baseline − candidate) / baseline`; `None` when the baseline is zero.
pub fn relative_improvement(baseline: f64, candidate: f64) -> Option<f64> {
    (baseline != 0.0).then(|| (baseline - candidate) / baseline)
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of nothing");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// First epoch whose validation error is at or below `target`.
pub fn epochs_to_target(records: &[MetricsRecord], target: f64) -> Option<usize> {
    records.iter().find(|r| r.val_error <= target).map(|r| r.epoch)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedComparison {
    pub seed: u64,
    pub sdr: MetricsRecord,
    pub dropout: MetricsRecord,
    /// First SDR epoch reaching the dropout arm's final validation error.
    pub epochs_to_target: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub epoch_budget: usize,
    pub seeds: Vec<SeedComparison>,
    pub median_val_error_sdr: f64,
    pub median_val_error_dropout: f64,
    pub median_train_loss_sdr: f64,
    pub median_train_loss_dropout: f64,
    /// Relative reduction of the median validation error, SDR over dropout.
    pub val_error_improvement: Option<f64>,
    /// Relative reduction of the median training loss, SDR over dropout.
    pub train_loss_improvement: Option<f64>,
    pub seeds_reaching_target: usize,
    /// Median of `epochs_to_target / epoch_budget` over the seeds that reached it.
    pub median_epoch_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedOutcome {
    pub summary: ComparisonSummary,
    /// SDR and dropout runs interleaved per seed.
    pub runs: Vec<RunRecords>,
}

fn run_arm(config: &TrainConfig, seed: u64, data: &Dataset) -> Result<TrainRun> {
    let config = TrainConfig { seed, ..config.clone() };
    let rng = Rng::new(seed);
    let mut net = build_network(&config, data, &rng)?;
    train(&mut net, &config, data, &rng)
}

/// Trains both arms on every seed with identical initial weights and batch orders,
/// then summarizes final metrics and the epochs SDR needs to match dropout's result.
pub fn run_paired_experiment(
    config_sdr: &TrainConfig,
    config_dropout: &TrainConfig,
    data: &Dataset,
    seeds: &[u64],
) -> Result<PairedOutcome> {
    if !config_sdr.paired_with(config_dropout) {
        return Err(Error::InvalidConfig(
            "paired configs may differ only in mode, regularizer settings and seed".into(),
        ));
    }
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("no seeds given".into()));
    }
    let mut comparisons = Vec::with_capacity(seeds.len());
    let mut runs = Vec::with_capacity(2 * seeds.len());
    for &seed in seeds {
        let sdr = run_arm(config_sdr, seed, data)?;
        let dropout = run_arm(config_dropout, seed, data)?;
        let target = dropout.last().val_error;
        comparisons.push(SeedComparison {
            seed,
            sdr: sdr.last().clone(),
            dropout: dropout.last().clone(),
            epochs_to_target: epochs_to_target(&sdr.records, target),
        });
        let same_mode = config_sdr.mode == config_dropout.mode;
        for (arm, config, run) in [("a", config_sdr, sdr), ("b", config_dropout, dropout)] {
            let id = run_id(config.mode, seed);
            runs.push(RunRecords {
                // Both arms would otherwise share an id.
                run_id: if same_mode { format!("{arm}-{id}") } else { id },
                mode: config.mode,
                seed,
                records: run.records,
            });
        }
    }

    let pick = |f: fn(&SeedComparison) -> f64| median(&comparisons.iter().map(f).collect::<Vec<_>>());
    let median_val_error_sdr = pick(|c| c.sdr.val_error);
    let median_val_error_dropout = pick(|c| c.dropout.val_error);
    let median_train_loss_sdr = pick(|c| c.sdr.train_loss);
    let median_train_loss_dropout = pick(|c| c.dropout.train_loss);
    let budget = config_sdr.epochs;
    let ratios: Vec<f64> = comparisons
        .iter()
        .filter_map(|c| c.epochs_to_target)
        .map(|e| e as f64 / budget as f64)
        .collect();

    Ok(PairedOutcome {
        summary: ComparisonSummary {
            epoch_budget: budget,
            seeds_reaching_target: ratios.len(),
            median_epoch_ratio: (!ratios.is_empty()).then(|| median(&ratios)),
            val_error_improvement: relative_improvement(median_val_error_dropout, median_val_error_sdr),
            train_loss_improvement: relative_improvement(median_train_loss_dropout, median_train_loss_sdr),
            median_val_error_sdr,
            median_val_error_dropout,
            median_train_loss_sdr,
            median_train_loss_dropout,
            seeds: comparisons,
        },
        runs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParitySuccess {
    pub bits: usize,
    pub runs: usize,
    pub epoch_budget: usize,
    pub sdr_successes: usize,
    pub plain_successes: usize,
    pub sdr_rate: f64,
    pub plain_rate: f64,
    /// Mean epochs to zero training error over successful runs.
    pub sdr_mean_epochs: Option<f64>,
    pub plain_mean_epochs: Option<f64>,
}

/// Parity architecture: one hidden layer of logistic units and a single logistic output
/// trained online, one pattern per update.
pub fn parity_config(bits: usize, mode: Mode) -> TrainConfig {
    let mut config = TrainConfig {
        epochs: 2000,
        batch_size: 1,
        base_lr: 1.0,
        lr_drop_factor: 1.0,
        lr_drop_points: Vec::new(),
        mode,
        hidden: vec![8],
        hidden_activation: Activation::Sigmoid,
        output_activation: Activation::Sigmoid,
        loss: Loss::CrossEntropy,
        data: DataSource::Parity { bits },
        ..TrainConfig::default()
    };
    config.sdr.alpha = config.base_lr;
    config.sdr.beta = 10.0;
    config.sdr.zeta = 0.7;
    config.sdr.zeta_schedule = ZetaSchedule::Constant;
    config.sdr.sigma_update_every = SigmaCadence::EveryBatch;
    config
}

/// Counts how many of `runs` paired seeds reach zero training error within the epoch
/// budget, for SDR and for plain backpropagation. A run that diverges counts as a failure.
pub fn parity_success_experiment(
    bits: usize,
    runs: usize,
    config_sdr: &TrainConfig,
    config_plain: &TrainConfig,
    rng: &Rng,
) -> Result<ParitySuccess> {
    let data = gen_parity(bits, &mut rng.split(super::config::streams::DATA))?;
    let outcome = |config: &TrainConfig, seed: u64| -> Result<Option<usize>> {
        let config = TrainConfig {
            stop_at_zero_train_error: true,
            data: DataSource::Parity { bits },
            ..config.clone()
        };
        match run_arm(&config, seed, &data) {
            Ok(run) => Ok((run.last().train_error == 0.0).then(|| run.last().epoch)),
            Err(Error::Diverged { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    };
    let mut sdr_epochs = Vec::new();
    let mut plain_epochs = Vec::new();
    for i in 0..runs {
        let seed = rng.split(i as u64).next_u64();
        if let Some(e) = outcome(config_sdr, seed)? {
            sdr_epochs.push(e as f64);
        }
        if let Some(e) = outcome(config_plain, seed)? {
            plain_epochs.push(e as f64);
        }
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    Ok(ParitySuccess {
        bits,
        runs,
        epoch_budget: config_sdr.epochs,
        sdr_successes: sdr_epochs.len(),
        plain_successes: plain_epochs.len(),
        sdr_rate: sdr_epochs.len() as f64 / runs as f64,
        plain_rate: plain_epochs.len() as f64 / runs as f64,
        sdr_mean_epochs: mean(&sdr_epochs),
        plain_mean_epochs: mean(&plain_epochs),
    })
}
