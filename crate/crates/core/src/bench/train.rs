use std::borrow::Cow;
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dropout::{reconstituted_network, sample_hidden_masks, Scaling};
use crate::error::{Error, Result};
use crate::linalg::Rng;
use crate::nnet::{Mode, Network};
use crate::sdr::{effective_zetas, sdr_train_step, StepRates, StochasticWeights};

use super::config::{lr_at, streams, TrainConfig};
use super::dataset::Dataset;

pub const METRICS_HEADER: &str =
    "run_id,mode,seed,epoch,train_loss,train_error,val_loss,val_error,max_sigma,mean_sigma,wall_ms";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_error: f64,
    pub val_loss: f64,
    pub val_error: f64,
    pub max_sigma: f64,
    pub mean_sigma: f64,
    pub wall_ms: u64,
}

/// Spread snapshot taken after `epoch` (0 is before training).
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaCheckpoint {
    pub epoch: usize,
    pub weights: StochasticWeights,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub records: Vec<MetricsRecord>,
    /// Empty unless the run used SDR.
    pub checkpoints: Vec<SigmaCheckpoint>,
}

impl TrainRun {
    pub fn last(&self) -> &MetricsRecord {
        self.records.last().expect("a run has at least one epoch")
    }
}

/// Trains `net` in place according to `config.mode`.
///
/// Batch order comes from `rng`'s shuffle stream and is identical across modes for a
/// given seed. Each epoch is evaluated on the collapsed mean network (SDR) or without
/// masks (dropout).
pub fn train(net: &mut Network, config: &TrainConfig, data: &Dataset, rng: &Rng) -> Result<TrainRun> {
    config.validate()?;
    let rows = data.train.len();
    if config.batch_size > rows {
        return Err(Error::InvalidConfig(format!(
            "batch_size {} exceeds {rows} training rows",
            config.batch_size
        )));
    }
    let mut shuffle = rng.split(streams::SHUFFLE);
    let mut noise = rng.split(streams::NOISE);
    let mut dropout_rng = rng.split(streams::DROPOUT);

    let mut sw = (config.mode == Mode::Sdr).then(|| StochasticWeights::from_network(net, config.sdr.sigma_init_scale));
    let mut checkpoints = Vec::new();
    if let Some(sw) = &sw {
        checkpoints.push(SigmaCheckpoint {
            epoch: 0,
            weights: sw.clone(),
        });
    }

    let batches = rows.div_ceil(config.batch_size);
    let layer_count = net.layers().len();
    let mut order: Vec<usize> = (0..rows).collect();
    let mut records = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let lr = lr_at(config, epoch);
        let zetas = effective_zetas(&config.sdr, epoch, config.epochs, layer_count);
        shuffle.shuffle(&mut order);

        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let x = data.train.inputs.select_rows(chunk);
            let t = data.train.targets.select_rows(chunk);
            match (config.mode, sw.as_mut()) {
                (Mode::Sdr, Some(sw)) => {
                    let fires = config.sdr.sigma_update_every.fires(b, batches);
                    let rates = StepRates {
                        alpha: config.sdr.alpha * config.lr_scale(epoch),
                        beta: config.sdr.beta,
                        sigma_update: fires.then_some(zetas.as_slice()),
                    };
                    sdr_train_step(net, sw, &x, &t, rates, &mut noise)?;
                }
                (Mode::Dropout, _) => {
                    let masks = sample_hidden_masks(net, chunk.len(), &config.dropout, &mut dropout_rng)?;
                    let (_, grads) = {
                        let pass = net.forward_masked(&x, None, &masks)?;
                        net.backward(&pass, &t)?
                    };
                    net.apply_sgd(&grads, lr)?;
                }
                _ => {
                    let (_, grads) = {
                        let pass = net.forward(&x, None)?;
                        net.backward(&pass, &t)?
                    };
                    net.apply_sgd(&grads, lr)?;
                }
            }
        }

        let eval_net: Cow<'_, Network> = match (config.mode, config.dropout.scaling) {
            (Mode::Dropout, Scaling::Expectation) => Cow::Owned(reconstituted_network(net, config.dropout.p_drop)?),
            _ => Cow::Borrowed(net),
        };
        let (train_loss, train_error) = eval_net.evaluate(&data.train.inputs, &data.train.targets)?;
        let (val_loss, val_error) = if data.validation == data.train {
            (train_loss, train_error)
        } else {
            eval_net.evaluate(&data.validation.inputs, &data.validation.targets)?
        };
        if !(train_loss.is_finite() && val_loss.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        let (max_sigma, mean_sigma) = sw.as_ref().map_or((0.0, 0.0), |s| (s.max_sigma(), s.mean_sigma()));
        records.push(MetricsRecord {
            epoch,
            train_loss,
            train_error,
            val_loss,
            val_error,
            max_sigma,
            mean_sigma,
            wall_ms: if config.record_wall_time {
                started.elapsed().as_millis() as u64
            } else {
                0
            },
        });

        let done = epoch == config.epochs || (config.stop_at_zero_train_error && train_error == 0.0);
        if let Some(sw) = &sw {
            let periodic = config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0;
            if periodic || done {
                checkpoints.push(SigmaCheckpoint {
                    epoch,
                    weights: sw.clone(),
                });
            }
        }
        if done {
            break;
        }
    }
    Ok(TrainRun { records, checkpoints })
}

/// The records of one run plus the identifiers that go into each CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecords {
    pub run_id: String,
    pub mode: Mode,
    pub seed: u64,
    pub records: Vec<MetricsRecord>,
}

pub fn run_id(mode: Mode, seed: u64) -> String {
    format!("{mode}-seed{seed}")
}

/// Writes rows in the order given, under [`METRICS_HEADER`].
pub fn write_metrics_csv<W: Write>(out: &mut W, runs: &[RunRecords]) -> Result<()> {
    let io = |e| Error::io("writing metrics", e);
    writeln!(out, "{METRICS_HEADER}").map_err(io)?;
    for run in runs {
        for r in &run.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                run.run_id,
                run.mode,
                run.seed,
                r.epoch,
                r.train_loss,
                r.train_error,
                r.val_loss,
                r.val_error,
                r.max_sigma,
                r.mean_sigma,
                r.wall_ms
            )
            .map_err(io)?;
        }
    }
    Ok(())
}
