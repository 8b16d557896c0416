//! The stochastic delta rule.
//!
//! Every weight is a Gaussian with its own mean and standard deviation. Each training
//! step draws a realization `w* = μ + σ·z`, evaluates the network and its gradient at
//! `w*`, then
//!
//! - moves the mean against the gradient: `μ ← μ − α·∂E/∂w*`,
//! - widens the spread by the gradient magnitude: `σ ← σ + β·|∂E/∂w*|`,
//! - drains the spread: `σ ← ζ·σ` with `ζ < 1`.
//!
//! The spread updates run at a configurable cadence; the mean moves on every step. At
//! evaluation time the distribution collapses to its mean.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};
use crate::nnet::{sgd_bias_step, sgd_step, GradientSet, Network};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZetaSchedule {
    Constant,
    /// `ζ / (1 + c·t)` over run fraction `t`.
    Hyperbolic,
    /// `ζ · r^t` over run fraction `t`.
    Exponential,
}

impl fmt::Display for ZetaSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ZetaSchedule::Constant => "constant",
            ZetaSchedule::Hyperbolic => "hyperbolic",
            ZetaSchedule::Exponential => "exponential",
        })
    }
}

impl FromStr for ZetaSchedule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "constant" => Ok(ZetaSchedule::Constant),
            "hyperbolic" => Ok(ZetaSchedule::Hyperbolic),
            "exponential" => Ok(ZetaSchedule::Exponential),
            other => Err(format!("unknown zeta schedule `{other}`")),
        }
    }
}

/// When the spread (`σ`) rules fire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaCadence {
    EveryBatch,
    /// Twice per epoch: after the middle batch and after the last one.
    HalfEpoch,
}

impl fmt::Display for SigmaCadence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SigmaCadence::EveryBatch => "every_batch",
            SigmaCadence::HalfEpoch => "half_epoch",
        })
    }
}

impl FromStr for SigmaCadence {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "every_batch" => Ok(SigmaCadence::EveryBatch),
            "half_epoch" => Ok(SigmaCadence::HalfEpoch),
            other => Err(format!("unknown sigma cadence `{other}`")),
        }
    }
}

impl SigmaCadence {
    /// Whether the spread rules fire after batch `batch` (0-based) of `batches`.
    pub fn fires(self, batch: usize, batches: usize) -> bool {
        match self {
            SigmaCadence::EveryBatch => true,
            SigmaCadence::HalfEpoch => batch + 1 == batches || (batches >= 2 && batch + 1 == batches / 2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdrConfig {
    /// Step size for the mean.
    pub alpha: f64,
    /// Gain on `|∂E/∂w*|` for the spread.
    pub beta: f64,
    /// Spread decay per update event, in `(0, 1)`.
    pub zeta: f64,
    pub zeta_schedule: ZetaSchedule,
    /// `c` in the hyperbolic schedule.
    pub hyperbolic_c: f64,
    /// `r` in the exponential schedule.
    pub exponential_r: f64,
    /// Multiplier applied to `ζ` in the earlier layers.
    pub zeta_front_scale: f64,
    /// Fraction of layers counted as "earlier".
    pub front_fraction: f64,
    pub sigma_update_every: SigmaCadence,
    /// Multiplier on the Xavier standard deviation for the initial spread.
    pub sigma_init_scale: f64,
}

impl Default for SdrConfig {
    fn default() -> Self {
        SdrConfig {
            alpha: 0.25,
            beta: 0.05,
            zeta: 0.7,
            zeta_schedule: ZetaSchedule::Constant,
            hyperbolic_c: 9.0,
            exponential_r: 0.9,
            zeta_front_scale: 0.9,
            front_fraction: 0.5,
            sigma_update_every: SigmaCadence::EveryBatch,
            sigma_init_scale: 0.5,
        }
    }
}

impl SdrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.zeta > 0.0 && self.zeta < 1.0) {
            return Err(Error::domain("sdr.zeta", self.zeta, "(0, 1)"));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::domain("sdr.alpha", self.alpha, "[0, inf)"));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::domain("sdr.beta", self.beta, "[0, inf)"));
        }
        if !(self.front_fraction > 0.0 && self.front_fraction < 1.0) {
            return Err(Error::domain("sdr.front_fraction", self.front_fraction, "(0, 1)"));
        }
        if !(self.sigma_init_scale >= 0.0) {
            return Err(Error::domain("sdr.sigma_init_scale", self.sigma_init_scale, "[0, inf)"));
        }
        if !(self.zeta_front_scale > 0.0) {
            return Err(Error::domain("sdr.zeta_front_scale", self.zeta_front_scale, "(0, inf)"));
        }
        if !(self.hyperbolic_c >= 0.0) {
            return Err(Error::domain("sdr.hyperbolic_c", self.hyperbolic_c, "[0, inf)"));
        }
        if !(self.exponential_r > 0.0) {
            return Err(Error::domain("sdr.exponential_r", self.exponential_r, "(0, inf)"));
        }
        Ok(())
    }
}

/// Per-layer means, spreads, and the most recent realization.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticWeights {
    pub mu: Vec<Matrix>,
    pub sigma: Vec<Matrix>,
    pub w_star: Vec<Matrix>,
}

/// Constant per-layer spread `scale · sqrt(2 / (fan_in + fan_out))`.
///
/// `shapes` are `(fan_out, fan_in)` as returned by [`Network::weight_shapes`].
pub fn init_sigma(shapes: &[(usize, usize)], sigma_init_scale: f64) -> Vec<Matrix> {
    shapes
        .iter()
        .map(|&(fan_out, fan_in)| {
            let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
            Matrix::filled(fan_out, fan_in, sigma_init_scale * std)
        })
        .collect()
}

impl StochasticWeights {
    /// Means taken from the network's current weights, spreads from [`init_sigma`].
    pub fn from_network(net: &Network, sigma_init_scale: f64) -> Self {
        let mu: Vec<Matrix> = net.weights().into_iter().cloned().collect();
        let sigma = init_sigma(&net.weight_shapes(), sigma_init_scale);
        StochasticWeights {
            w_star: mu.clone(),
            mu,
            sigma,
        }
    }

    pub fn new(mu: Vec<Matrix>, sigma: Vec<Matrix>) -> Result<Self> {
        if mu.len() != sigma.len() {
            return Err(Error::InvalidNetwork(format!(
                "{} mean matrices but {} spread matrices",
                mu.len(),
                sigma.len()
            )));
        }
        for (m, s) in mu.iter().zip(&sigma) {
            m.check_same_shape(s, "stochastic weights")?;
            if let Some(&bad) = s.as_slice().iter().find(|v| !(**v >= 0.0)) {
                return Err(Error::domain("sigma", bad, "[0, inf)"));
            }
        }
        Ok(StochasticWeights {
            w_star: mu.clone(),
            mu,
            sigma,
        })
    }

    /// Draws `w* = μ + σ·z` with fresh standard normals and stores it.
    pub fn sample_weights(&mut self, rng: &mut Rng) -> &[Matrix] {
        for ((w, mu), sigma) in self.w_star.iter_mut().zip(&self.mu).zip(&self.sigma) {
            for ((w, &m), &s) in w.as_mut_slice().iter_mut().zip(mu.as_slice()).zip(sigma.as_slice()) {
                *w = m + s * rng.standard_normal();
            }
        }
        &self.w_star
    }

    /// `μ ← μ − α·∂E/∂w*`.
    pub fn update_mu(&mut self, grads: &GradientSet, alpha: f64) -> Result<()> {
        for (mu, g) in self.mu.iter_mut().zip(&grads.weights) {
            sgd_step(mu, g, alpha)?;
        }
        Ok(())
    }

    /// `σ ← σ + β·|∂E/∂w*|`.
    pub fn update_sigma(&mut self, grads: &GradientSet, beta: f64) -> Result<()> {
        for (sigma, g) in self.sigma.iter_mut().zip(&grads.weights) {
            sigma.check_same_shape(g, "update_sigma")?;
            for (s, &gi) in sigma.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *s += beta * gi.abs();
            }
        }
        Ok(())
    }

    /// `σ ← ζ_l·σ` for each layer `l`.
    pub fn decay_sigma(&mut self, zeta: &[f64]) -> Result<()> {
        if zeta.len() != self.sigma.len() {
            return Err(Error::InvalidNetwork(format!(
                "{} decay factors for {} layers",
                zeta.len(),
                self.sigma.len()
            )));
        }
        if let Some(&bad) = zeta.iter().find(|z| !(**z > 0.0 && **z < 1.0)) {
            return Err(Error::domain("zeta", bad, "(0, 1)"));
        }
        for (sigma, &z) in self.sigma.iter_mut().zip(zeta) {
            for s in sigma.as_mut_slice() {
                *s *= z;
            }
        }
        Ok(())
    }

    /// The mean network, used for every evaluation.
    pub fn collapse(&self) -> Vec<Matrix> {
        self.mu.clone()
    }

    pub fn max_sigma(&self) -> f64 {
        self.sigma.iter().map(Matrix::max).fold(0.0, f64::max)
    }

    pub fn mean_sigma(&self) -> f64 {
        let count: usize = self.sigma.iter().map(|s| s.as_slice().len()).sum();
        if count == 0 {
            return 0.0;
        }
        self.sigma.iter().map(Matrix::sum).sum::<f64>() / count as f64
    }

    /// Writes a textual checkpoint. Values use Rust's shortest round-trip formatting,
    /// so [`StochasticWeights::read_checkpoint`] restores them bit for bit.
    pub fn checkpoint_string(&self) -> String {
        let mut out = String::new();
        out.push_str("sdr-checkpoint 1\n");
        out.push_str(&format!("layers {}\n", self.mu.len()));
        for (l, (mu, sigma)) in self.mu.iter().zip(&self.sigma).enumerate() {
            out.push_str(&format!("layer {l} {} {}\n", mu.rows(), mu.cols()));
            for (name, m) in [("mu", mu), ("sigma", sigma)] {
                out.push_str(name);
                for v in m.as_slice() {
                    out.push(' ');
                    out.push_str(&format!("{v:?}"));
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn write_checkpoint(&self, path: &Path) -> Result<()> {
        fs::write(path, self.checkpoint_string())
            .map_err(|e| Error::io(format!("writing checkpoint {}", path.display()), e))
    }

    pub fn read_checkpoint(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(format!("reading checkpoint {}", path.display()), e))?;
        Self::parse_checkpoint(&text, path)
    }

    pub fn parse_checkpoint(text: &str, path: &Path) -> Result<Self> {
        let bad = |line: usize, message: &str| Error::MalformedCheckpoint {
            path: path.to_path_buf(),
            line,
            message: message.to_string(),
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| lines.next().ok_or_else(|| bad(0, &format!("missing {what}")));

        let (ln, header) = next("header")?;
        if header.trim() != "sdr-checkpoint 1" {
            return Err(bad(ln, "unrecognized header"));
        }
        let (ln, count_line) = next("layer count")?;
        let count: usize = count_line
            .strip_prefix("layers ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad(ln, "expected `layers <n>`"))?;

        let mut mu = Vec::with_capacity(count);
        let mut sigma = Vec::with_capacity(count);
        for l in 0..count {
            let (ln, shape_line) = next("layer shape")?;
            let parts: Vec<&str> = shape_line.split_whitespace().collect();
            let (rows, cols) = match parts.as_slice() {
                ["layer", idx, r, c] if idx.parse() == Ok(l) => (
                    r.parse::<usize>().map_err(|_| bad(ln, "bad row count"))?,
                    c.parse::<usize>().map_err(|_| bad(ln, "bad column count"))?,
                ),
                _ => return Err(bad(ln, "expected `layer <index> <rows> <cols>`")),
            };
            for (name, dst) in [("mu", &mut mu), ("sigma", &mut sigma)] {
                let (ln, values_line) = next(name)?;
                let mut tokens = values_line.split_whitespace();
                if tokens.next() != Some(name) {
                    return Err(bad(ln, &format!("expected `{name}` row")));
                }
                let values: Vec<f64> = tokens
                    .map(|t| t.parse::<f64>().map_err(|_| bad(ln, &format!("bad number `{t}`"))))
                    .collect::<Result<_>>()?;
                if values.len() != rows * cols {
                    return Err(bad(ln, "value count does not match shape"));
                }
                dst.push(Matrix::from_vec(rows, cols, values)?);
            }
        }
        StochasticWeights::new(mu, sigma)
    }
}

/// Per-layer decay factor for `epoch` (1-based) of `total_epochs`.
pub fn effective_zeta(
    config: &SdrConfig,
    epoch: usize,
    total_epochs: usize,
    layer_index: usize,
    layer_count: usize,
) -> f64 {
    let t = epoch as f64 / total_epochs.max(1) as f64;
    let base = match config.zeta_schedule {
        ZetaSchedule::Constant => config.zeta,
        ZetaSchedule::Hyperbolic => config.zeta / (1.0 + config.hyperbolic_c * t),
        ZetaSchedule::Exponential => config.zeta * config.exponential_r.powf(t),
    };
    let front = (layer_index as f64) < config.front_fraction * layer_count as f64;
    let z = if front { config.zeta_front_scale * base } else { base };
    z.clamp(1e-12, 1.0 - 1e-12)
}

/// [`effective_zeta`] for every layer.
pub fn effective_zetas(config: &SdrConfig, epoch: usize, total_epochs: usize, layer_count: usize) -> Vec<f64> {
    (0..layer_count)
        .map(|l| effective_zeta(config, epoch, total_epochs, l, layer_count))
        .collect()
}

/// Rates for one [`sdr_train_step`].
#[derive(Debug, Clone, Copy)]
pub struct StepRates<'a> {
    pub alpha: f64,
    pub beta: f64,
    /// Per-layer `ζ` when the spread rules fire on this step, `None` otherwise.
    pub sigma_update: Option<&'a [f64]>,
}

/// One SDR update on a batch; returns the loss at the sampled weights.
///
/// On return the network's weights equal the updated means. Biases are deterministic
/// and take a plain gradient step with `alpha`. When the spread rules fire, `σ` is
/// widened by `β·|∂E/∂w*|` and then decayed.
pub fn sdr_train_step(
    net: &mut Network,
    sw: &mut StochasticWeights,
    batch: &Matrix,
    targets: &Matrix,
    rates: StepRates<'_>,
    rng: &mut Rng,
) -> Result<f64> {
    let StepRates {
        alpha,
        beta,
        sigma_update,
    } = rates;
    sw.sample_weights(rng);
    let (loss, grads) = {
        let pass = net.forward(batch, Some(&sw.w_star))?;
        net.backward(&pass, targets)?
    };
    sw.update_mu(&grads, alpha)?;
    for (layer, g) in net.layers_mut().iter_mut().zip(&grads.biases) {
        sgd_bias_step(&mut layer.bias, g, alpha);
    }
    if let Some(zetas) = sigma_update {
        sw.update_sigma(&grads, beta)?;
        sw.decay_sigma(zetas)?;
    }
    net.set_weights(&sw.mu)?;
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sample_gaussian;
    use crate::linalg::Rng;
    use crate::nnet::{Activation, Loss, Mode};
    use proptest::prelude::*;

    fn single(mu: f64, sigma: f64) -> StochasticWeights {
        StochasticWeights::new(vec![Matrix::filled(1, 1, mu)], vec![Matrix::filled(1, 1, sigma)]).unwrap()
    }

    fn grad(g: f64) -> GradientSet {
        GradientSet {
            weights: vec![Matrix::filled(1, 1, g)],
            biases: vec![vec![0.0]],
        }
    }

    #[test]
    fn halved_xavier_init() {
        let s = init_sigma(&[(2, 2)], 0.5);
        for &v in s[0].as_slice() {
            assert!((v - 0.353_553_390_593_273_8).abs() < 1e-15);
        }
        assert!(init_sigma(&[(3, 5)], 0.0)[0].as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_spread_samples_the_mean() {
        let mut rng = Rng::new(1);
        let mu = sample_gaussian(&mut rng, 3, 4);
        let mut sw = StochasticWeights::new(vec![mu.clone()], vec![Matrix::zeros(3, 4)]).unwrap();
        assert_eq!(sw.sample_weights(&mut rng)[0], mu);
    }

    #[test]
    fn unit_spread_gives_raw_normals() {
        let mut sw = StochasticWeights::new(vec![Matrix::zeros(2, 3)], vec![Matrix::filled(2, 3, 1.0)]).unwrap();
        let drawn = sw.sample_weights(&mut Rng::new(4))[0].clone();
        let raw = sample_gaussian(&mut Rng::new(4), 2, 3);
        assert_eq!(drawn, raw);
    }

    #[test]
    fn sampling_statistics_of_one_weight() {
        let mut sw = single(1.0, 0.5);
        let mut rng = Rng::new(99);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| sw.sample_weights(&mut rng)[0].get(0, 0)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let std = (draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((mean - 1.0).abs() < 0.005, "{mean}");
        assert!((std - 0.5).abs() < 0.005, "{std}");
    }

    #[test]
    fn mean_update() {
        let mut sw = single(0.5, 0.1);
        sw.update_mu(&grad(0.0), 0.25).unwrap();
        assert_eq!(sw.mu[0].get(0, 0), 0.5);
        sw.update_mu(&grad(0.1), 0.25).unwrap();
        assert!((sw.mu[0].get(0, 0) - 0.475).abs() < 1e-15);
        sw.update_mu(&grad(123.0), 0.0).unwrap();
        assert!((sw.mu[0].get(0, 0) - 0.475).abs() < 1e-15);
    }

    #[test]
    fn spread_update() {
        let mut sw = single(0.0, 0.1);
        sw.update_sigma(&grad(-0.2), 0.0).unwrap();
        assert_eq!(sw.sigma[0].get(0, 0), 0.1);
        sw.update_sigma(&grad(0.0), 0.05).unwrap();
        assert_eq!(sw.sigma[0].get(0, 0), 0.1);
        sw.update_sigma(&grad(-0.2), 0.05).unwrap();
        assert!((sw.sigma[0].get(0, 0) - 0.11).abs() < 1e-15);
    }

    #[test]
    fn spread_decay() {
        let mut sw = single(0.0, 0.1);
        sw.decay_sigma(&[0.7]).unwrap();
        assert!((sw.sigma[0].get(0, 0) - 0.07).abs() < 1e-15);
        for bad in [1.0, 0.0, 1.2, -0.3] {
            assert!(matches!(sw.decay_sigma(&[bad]), Err(Error::Domain { .. })));
        }
        let mut sw = single(0.0, 0.3);
        for _ in 0..25 {
            sw.decay_sigma(&[0.7]).unwrap();
        }
        let expected = 0.3 * 0.7f64.powi(25);
        assert!((sw.sigma[0].get(0, 0) - expected).abs() <= 1e-12 * expected.max(1e-300));
    }

    #[test]
    fn zeta_schedules() {
        let mut cfg = SdrConfig {
            zeta_front_scale: 1.0,
            ..SdrConfig::default()
        };
        for epoch in 1..=10 {
            assert_eq!(effective_zeta(&cfg, epoch, 10, 1, 2), 0.7);
        }
        cfg.zeta_front_scale = 0.9;
        assert!((effective_zeta(&cfg, 3, 10, 0, 2) - 0.63).abs() < 1e-15);
        assert_eq!(effective_zeta(&cfg, 3, 10, 1, 2), 0.7);

        cfg.zeta_schedule = ZetaSchedule::Exponential;
        assert!((effective_zeta(&cfg, 10, 10, 1, 2) - 0.63).abs() < 1e-15);
        cfg.zeta_schedule = ZetaSchedule::Hyperbolic;
        assert!((effective_zeta(&cfg, 10, 10, 1, 2) - 0.07).abs() < 1e-15);
        assert!((effective_zeta(&cfg, 5, 10, 1, 2) - 0.7 / 5.5).abs() < 1e-15);

        // A front scale that would push past 1 is clamped.
        cfg.zeta_schedule = ZetaSchedule::Constant;
        cfg.zeta = 0.95;
        cfg.zeta_front_scale = 2.0;
        let z = effective_zeta(&cfg, 1, 10, 0, 4);
        assert!(z < 1.0 && z > 0.99);
    }

    #[test]
    fn half_epoch_cadence_fires_twice() {
        let fired: Vec<usize> = (0..10).filter(|&b| SigmaCadence::HalfEpoch.fires(b, 10)).collect();
        assert_eq!(fired, vec![4, 9]);
        assert_eq!((0..1).filter(|&b| SigmaCadence::HalfEpoch.fires(b, 1)).count(), 1);
        assert!((0..7).all(|b| SigmaCadence::EveryBatch.fires(b, 7)));
    }

    #[test]
    fn collapse_is_the_mean() {
        let mut rng = Rng::new(2);
        let mu = sample_gaussian(&mut rng, 2, 2);
        let sw = StochasticWeights::new(vec![mu.clone()], vec![Matrix::filled(2, 2, 5.0)]).unwrap();
        assert_eq!(sw.collapse(), vec![mu]);
    }

    #[test]
    fn train_step_without_noise_matches_sgd() {
        let mut rng = Rng::new(13);
        let base = Network::new(
            &[3, 5, 2],
            Activation::Relu,
            Activation::Softmax,
            Loss::CrossEntropy,
            Mode::Sdr,
            &mut rng,
        )
        .unwrap();
        let x = sample_gaussian(&mut rng, 6, 3);
        let mut t = Matrix::zeros(6, 2);
        for r in 0..6 {
            t.set(r, r % 2, 1.0);
        }
        let mut plain = base.clone();
        let mut sdr = base.clone();
        let mut sw = StochasticWeights::from_network(&sdr, 0.0);
        let mut noise = Rng::new(77);
        for _ in 0..20 {
            let pass = plain.forward(&x, None).unwrap();
            let (plain_loss, g) = plain.backward(&pass, &t).unwrap();
            plain.apply_sgd(&g, 0.3).unwrap();
            let loss = sdr_train_step(
                &mut sdr,
                &mut sw,
                &x,
                &t,
                StepRates {
                    alpha: 0.3,
                    beta: 0.0,
                    sigma_update: Some(&[0.7, 0.7]),
                },
                &mut noise,
            )
            .unwrap();
            assert_eq!(loss.to_bits(), plain_loss.to_bits());
        }
        assert_eq!(plain.layers(), sdr.layers());
    }

    #[test]
    fn train_step_returns_loss_at_sampled_weights() {
        let mut rng = Rng::new(14);
        let mut net = Network::new(
            &[3, 4, 1],
            Activation::Tanh,
            Activation::Sigmoid,
            Loss::CrossEntropy,
            Mode::Sdr,
            &mut rng,
        )
        .unwrap();
        let x = sample_gaussian(&mut rng, 5, 3);
        let t = Matrix::from_rows(&[&[1.0], &[0.0], &[1.0], &[0.0], &[1.0]]);
        let mut sw = StochasticWeights::from_network(&net, 0.5);
        let before = net.clone();
        let mut noise = Rng::new(3);
        let loss = sdr_train_step(
            &mut net,
            &mut sw,
            &x,
            &t,
            StepRates {
                alpha: 0.1,
                beta: 0.05,
                sigma_update: None,
            },
            &mut noise,
        )
        .unwrap();
        let pass = before.forward(&x, Some(&sw.w_star)).unwrap();
        let (expected, _) = before.backward(&pass, &t).unwrap();
        assert_eq!(loss, expected);
        assert_eq!(net.weights().into_iter().cloned().collect::<Vec<_>>(), sw.mu);
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        let p = Path::new("x.ckpt");
        assert!(StochasticWeights::parse_checkpoint("nope", p).is_err());
        assert!(
            StochasticWeights::parse_checkpoint("sdr-checkpoint 1\nlayers 1\nlayer 0 1 2\nmu 1 2\nsigma 1\n", p)
                .is_err()
        );
        assert!(
            StochasticWeights::parse_checkpoint("sdr-checkpoint 1\nlayers 1\nlayer 0 1 1\nmu 1\nsigma -1\n", p)
                .is_err()
        );
        assert!(
            StochasticWeights::parse_checkpoint("sdr-checkpoint 1\nlayers 1\nlayer 0 1 1\nmu x\nsigma 1\n", p).is_err()
        );
    }

    proptest! {
        #[test]
        fn checkpoint_round_trips_bit_exactly(seed in any::<u64>(), r in 1usize..5, c in 1usize..5, scale in 1e-300f64..1e300) {
            let mut rng = Rng::new(seed);
            let mu = sample_gaussian(&mut rng, r, c).scale(scale);
            let sigma = sample_gaussian(&mut rng, r, c).abs().scale(scale);
            let sw = StochasticWeights::new(vec![mu, sigma.clone()], vec![sigma.clone(), sigma]).unwrap();
            let back = StochasticWeights::parse_checkpoint(&sw.checkpoint_string(), Path::new("p")).unwrap();
            for (a, b) in sw.mu.iter().chain(&sw.sigma).zip(back.mu.iter().chain(&back.sigma)) {
                let bits_a: Vec<u64> = a.as_slice().iter().map(|v| v.to_bits()).collect();
                let bits_b: Vec<u64> = b.as_slice().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(bits_a, bits_b);
            }
        }

        #[test]
        fn spread_stays_nonnegative(seed in any::<u64>(), beta in 0.0f64..1.0, zeta in 0.01f64..0.99, steps in 1usize..30) {
            let mut rng = Rng::new(seed);
            let shapes = [(3usize, 2usize), (1, 3)];
            let mu = shapes.iter().map(|&(r, c)| sample_gaussian(&mut rng, r, c)).collect();
            let mut sw = StochasticWeights::new(mu, init_sigma(&shapes, 0.5)).unwrap();
            for _ in 0..steps {
                let g = GradientSet {
                    weights: shapes.iter().map(|&(r, c)| sample_gaussian(&mut rng, r, c)).collect(),
                    biases: vec![vec![0.0; 3], vec![0.0]],
                };
                let before = sw.sigma.clone();
                sw.update_sigma(&g, beta).unwrap();
                for (b, a) in before.iter().zip(&sw.sigma) {
                    for (x, y) in b.as_slice().iter().zip(a.as_slice()) {
                        prop_assert!(y >= x);
                    }
                }
                sw.decay_sigma(&[zeta, zeta]).unwrap();
                prop_assert!(sw.sigma.iter().all(|s| s.as_slice().iter().all(|&v| v >= 0.0)));
            }
        }

        #[test]
        fn drain_without_gain_is_geometric(sigma0 in 1e-3f64..10.0, zeta in 0.05f64..0.99, k in 1i32..60) {
            let mut sw = single(0.0, sigma0);
            let mut prev = sigma0;
            for _ in 0..k {
                sw.update_sigma(&grad(3.0), 0.0).unwrap();
                sw.decay_sigma(&[zeta]).unwrap();
                let now = sw.sigma[0].get(0, 0);
                prop_assert!(now < prev);
                prev = now;
            }
            let expected = sigma0 * zeta.powi(k);
            prop_assert!((prev - expected).abs() <= 1e-12 * expected);
        }
    }
}
