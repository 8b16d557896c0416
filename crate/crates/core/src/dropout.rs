//! Bernoulli hidden-unit dropout and the drop-count statistics it produces.
//!
//! `p_drop` is the probability that a unit is REMOVED. Over repeated trials the number of
//! removed units in a layer of `n` is Binomial(n, p) with fixed parameters, which
//! [`drop_count_experiment`] measures and [`DropCountStats::chi_square_vs_binomial`] tests.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, Discrete};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};
use crate::nnet::Network;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// Survivors scaled by `1 / (1 − p)` during training; evaluation is untouched.
    Inverted,
    /// Unscaled training; evaluation multiplies outgoing weights by `1 − p`.
    Expectation,
}

impl fmt::Display for Scaling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scaling::Inverted => "inverted",
            Scaling::Expectation => "expectation",
        })
    }
}

impl FromStr for Scaling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inverted" => Ok(Scaling::Inverted),
            "expectation" => Ok(Scaling::Expectation),
            other => Err(format!("unknown dropout scaling `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoutConfig {
    pub p_drop: f64,
    pub scaling: Scaling,
}

impl Default for DropoutConfig {
    fn default() -> Self {
        DropoutConfig {
            p_drop: 0.2,
            scaling: Scaling::Inverted,
        }
    }
}

impl DropoutConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_drop >= 0.0 && self.p_drop < 1.0) {
            return Err(Error::domain("dropout.p", self.p_drop, "[0, 1)"));
        }
        Ok(())
    }

    fn survivor_scale(&self) -> f64 {
        match self.scaling {
            Scaling::Inverted => 1.0 / (1.0 - self.p_drop),
            Scaling::Expectation => 1.0,
        }
    }
}

/// Mask with entries `0` (dropped) or the survivor scale, one per unit per row.
pub fn sample_mask(rows: usize, cols: usize, config: &DropoutConfig, rng: &mut Rng) -> Result<Matrix> {
    config.validate()?;
    let keep = config.survivor_scale();
    let data = (0..rows * cols)
        .map(|_| if rng.uniform() < config.p_drop { 0.0 } else { keep })
        .collect();
    Matrix::from_vec(rows, cols, data)
}

/// Fresh masks for every hidden layer of `net`; the output layer never gets one.
pub fn sample_hidden_masks(
    net: &Network,
    batch_rows: usize,
    config: &DropoutConfig,
    rng: &mut Rng,
) -> Result<Vec<Option<Matrix>>> {
    let n = net.layers().len();
    net.layers()
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            if l + 1 == n {
                Ok(None)
            } else {
                sample_mask(batch_rows, layer.fan_out(), config, rng).map(Some)
            }
        })
        .collect()
}

/// Masks hidden-layer activations. Identity when `training` is false.
pub fn apply_dropout(activations: &Matrix, config: &DropoutConfig, rng: &mut Rng, training: bool) -> Result<Matrix> {
    config.validate()?;
    if !training {
        return Ok(activations.clone());
    }
    let mask = sample_mask(activations.rows(), activations.cols(), config, rng)?;
    activations.hadamard(&mask)
}

/// Weights scaled by the survival probability `1 − p_drop`.
pub fn expected_value_reconstitution(weights: &Matrix, p_drop: f64) -> Result<Matrix> {
    if !(0.0..1.0).contains(&p_drop) {
        return Err(Error::domain("dropout.p", p_drop, "[0, 1)"));
    }
    Ok(weights.scale(1.0 - p_drop))
}

/// Evaluation network for expectation scaling: every layer fed by a dropped hidden
/// layer has its incoming weights reconstituted.
pub fn reconstituted_network(net: &Network, p_drop: f64) -> Result<Network> {
    let mut out = net.clone();
    for layer in out.layers_mut().iter_mut().skip(1) {
        layer.weights = expected_value_reconstitution(&layer.weights, p_drop)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropCountStats {
    pub n: usize,
    pub p: f64,
    pub trials: usize,
    /// `histogram[k]` is the number of trials in which exactly `k` units were dropped.
    pub histogram: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
}

impl DropCountStats {
    pub fn mean(&self) -> f64 {
        let total: f64 = self
            .histogram
            .iter()
            .enumerate()
            .map(|(k, &c)| k as f64 * c as f64)
            .sum();
        total / self.trials as f64
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        let ss: f64 = self
            .histogram
            .iter()
            .enumerate()
            .map(|(k, &c)| c as f64 * (k as f64 - mean).powi(2))
            .sum();
        ss / (self.trials as f64 - 1.0)
    }

    /// Pearson goodness of fit against Binomial(n, p). Adjacent cells are pooled from
    /// each tail inward until every cell expects at least 5 trials.
    pub fn chi_square_vs_binomial(&self) -> ChiSquareResult {
        let binom = Binomial::new(self.p, self.n as u64).expect("p validated at construction");
        let expected: Vec<f64> = (0..=self.n).map(|k| binom.pmf(k as u64) * self.trials as f64).collect();
        let observed: Vec<f64> = self.histogram.iter().map(|&c| c as f64).collect();

        let mut cells: Vec<(f64, f64)> = Vec::new();
        let (mut obs, mut exp) = (0.0, 0.0);
        for (o, e) in observed.iter().zip(&expected) {
            obs += o;
            exp += e;
            if exp >= 5.0 {
                cells.push((obs, exp));
                obs = 0.0;
                exp = 0.0;
            }
        }
        if exp > 0.0 || obs > 0.0 {
            match cells.last_mut() {
                Some(last) => {
                    last.0 += obs;
                    last.1 += exp;
                }
                None => cells.push((obs, exp)),
            }
        }

        let statistic: f64 = cells.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
        let dof = cells.len().saturating_sub(1);
        let p_value = if dof == 0 {
            1.0
        } else {
            1.0 - ChiSquared::new(dof as f64).expect("dof > 0").cdf(statistic)
        };
        ChiSquareResult {
            statistic,
            degrees_of_freedom: dof,
            p_value,
        }
    }
}

/// Drops each of `n` units independently with probability `p`, `trials` times, and
/// histograms how many were dropped per trial.
pub fn drop_count_experiment(n: usize, p: f64, trials: usize, rng: &mut Rng) -> Result<DropCountStats> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain("p", p, "[0, 1]"));
    }
    let mut histogram = vec![0u64; n + 1];
    for _ in 0..trials {
        let dropped = (0..n).filter(|_| rng.uniform() < p).count();
        histogram[dropped] += 1;
    }
    Ok(DropCountStats {
        n,
        p,
        trials,
        histogram,
    })
}
