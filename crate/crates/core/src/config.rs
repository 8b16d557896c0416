//! Flat `key=value` configuration files.
//!
//! One key per line, `#` starts a comment, blank lines are ignored. Every key not set
//! keeps its default, and `--set key=value` overrides are applied after the file.
//!
//! ```text
//! mode=sdr
//! epochs=40
//! sdr.zeta=0.7
//! hidden=128,64
//! ```

use std::fmt::Write as _;
use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::bench::{DataSource, TrainConfig};
use crate::error::{Error, Result};

/// Every recognized key, in the order [`render_config`] writes them.
pub const KEYS: &[&str] = &[
    "mode",
    "seed",
    "epochs",
    "batch_size",
    "lr",
    "lr_drop_factor",
    "lr_drop_points",
    "hidden",
    "hidden_activation",
    "output_activation",
    "loss",
    "data",
    "data.bits",
    "data.images",
    "data.labels",
    "data.train_size",
    "data.val_size",
    "record_wall_time",
    "stop_at_zero_train_error",
    "checkpoint_every",
    "sdr.alpha",
    "sdr.beta",
    "sdr.zeta",
    "sdr.zeta_schedule",
    "sdr.hyperbolic_c",
    "sdr.exponential_r",
    "sdr.zeta_front_scale",
    "sdr.front_fraction",
    "sdr.sigma_update_every",
    "sdr.sigma_init_scale",
    "dropout.p",
    "dropout.scaling",
];

// The data source is an enum; its fields are collected flat and assembled at the end.
struct DataFields {
    kind: String,
    bits: usize,
    images: PathBuf,
    labels: PathBuf,
    train_size: usize,
    val_size: usize,
}

impl DataFields {
    fn from_source(source: &DataSource) -> Self {
        let mut fields = DataFields {
            kind: "idx".into(),
            bits: 4,
            images: PathBuf::new(),
            labels: PathBuf::new(),
            train_size: 0,
            val_size: 0,
        };
        if let DataSource::Idx {
            images,
            labels,
            train_size,
            val_size,
        } = DataSource::default()
        {
            fields.images = images;
            fields.labels = labels;
            fields.train_size = train_size;
            fields.val_size = val_size;
        }
        match source {
            DataSource::Parity { bits } => {
                fields.kind = "parity".into();
                fields.bits = *bits;
            }
            DataSource::Idx {
                images,
                labels,
                train_size,
                val_size,
            } => {
                fields.images = images.clone();
                fields.labels = labels.clone();
                fields.train_size = *train_size;
                fields.val_size = *val_size;
            }
        }
        fields
    }

    fn build(self) -> Result<DataSource> {
        match self.kind.as_str() {
            "parity" => Ok(DataSource::Parity { bits: self.bits }),
            "idx" => Ok(DataSource::Idx {
                images: self.images,
                labels: self.labels,
                train_size: self.train_size,
                val_size: self.val_size,
            }),
            other => Err(Error::InvalidConfig(format!("unknown data source `{other}`"))),
        }
    }
}

struct Entry<'a> {
    source: &'a str,
    line: usize,
    key: &'a str,
    value: &'a str,
}

impl Entry<'_> {
    fn parse<T: FromStr>(&self) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.value.parse::<T>().map_err(|e| self.bad(e.to_string()))
    }

    fn list<T: FromStr>(&self) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        if self.value.is_empty() {
            return Ok(Vec::new());
        }
        self.value
            .split(',')
            .map(|item| item.trim().parse::<T>().map_err(|e| self.bad(e.to_string())))
            .collect()
    }

    fn bad(&self, reason: String) -> Error {
        Error::BadValue {
            source_name: self.source.to_string(),
            line: self.line,
            key: self.key.to_string(),
            value: self.value.to_string(),
            reason,
        }
    }
}

fn apply(cfg: &mut TrainConfig, data: &mut DataFields, e: &Entry<'_>) -> Result<()> {
    match e.key {
        "mode" => cfg.mode = e.parse()?,
        "seed" => cfg.seed = e.parse()?,
        "epochs" => cfg.epochs = e.parse()?,
        "batch_size" => cfg.batch_size = e.parse()?,
        "lr" => cfg.base_lr = e.parse()?,
        "lr_drop_factor" => cfg.lr_drop_factor = e.parse()?,
        "lr_drop_points" => cfg.lr_drop_points = e.list()?,
        "hidden" => cfg.hidden = e.list()?,
        "hidden_activation" => cfg.hidden_activation = e.parse()?,
        "output_activation" => cfg.output_activation = e.parse()?,
        "loss" => cfg.loss = e.parse()?,
        "data" => data.kind = e.value.to_string(),
        "data.bits" => data.bits = e.parse()?,
        "data.images" => data.images = PathBuf::from(e.value),
        "data.labels" => data.labels = PathBuf::from(e.value),
        "data.train_size" => data.train_size = e.parse()?,
        "data.val_size" => data.val_size = e.parse()?,
        "record_wall_time" => cfg.record_wall_time = e.parse()?,
        "stop_at_zero_train_error" => cfg.stop_at_zero_train_error = e.parse()?,
        "checkpoint_every" => cfg.checkpoint_every = e.parse()?,
        "sdr.alpha" => cfg.sdr.alpha = e.parse()?,
        "sdr.beta" => cfg.sdr.beta = e.parse()?,
        "sdr.zeta" => cfg.sdr.zeta = e.parse()?,
        "sdr.zeta_schedule" => cfg.sdr.zeta_schedule = e.parse()?,
        "sdr.hyperbolic_c" => cfg.sdr.hyperbolic_c = e.parse()?,
        "sdr.exponential_r" => cfg.sdr.exponential_r = e.parse()?,
        "sdr.zeta_front_scale" => cfg.sdr.zeta_front_scale = e.parse()?,
        "sdr.front_fraction" => cfg.sdr.front_fraction = e.parse()?,
        "sdr.sigma_update_every" => cfg.sdr.sigma_update_every = e.parse()?,
        "sdr.sigma_init_scale" => cfg.sdr.sigma_init_scale = e.parse()?,
        "dropout.p" => cfg.dropout.p_drop = e.parse()?,
        "dropout.scaling" => cfg.dropout.scaling = e.parse()?,
        _ => {
            return Err(Error::UnknownKey {
                source_name: e.source.to_string(),
                line: e.line,
                key: e.key.to_string(),
            })
        }
    }
    Ok(())
}

fn split_pair<'a>(source: &'a str, line: usize, text: &'a str) -> Result<Entry<'a>> {
    match text.split_once('=') {
        Some((key, value)) => Ok(Entry {
            source,
            line,
            key: key.trim(),
            value: value.trim(),
        }),
        None => Err(Error::BadValue {
            source_name: source.to_string(),
            line,
            key: text.trim().to_string(),
            value: String::new(),
            reason: "expected `key=value`".into(),
        }),
    }
}

/// Parses config text named `source` in errors, then applies `overrides`.
pub fn parse_config_str(text: &str, source: &str, overrides: &[String]) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    let mut data = DataFields::from_source(&cfg.data);
    for (i, raw) in text.lines().enumerate() {
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        apply(&mut cfg, &mut data, &split_pair(source, i + 1, content)?)?;
    }
    for (i, ov) in overrides.iter().enumerate() {
        apply(&mut cfg, &mut data, &split_pair("--set", i + 1, ov)?)?;
    }
    cfg.data = data.build()?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path, overrides: &[String]) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        ErrorKind::NotFound => Error::ConfigNotFound(path.to_path_buf()),
        _ => Error::io(format!("reading {}", path.display()), e),
    })?;
    parse_config_str(&text, &path.display().to_string(), overrides)
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Writes every key with its value; parsing the result gives back `cfg`.
pub fn render_config(cfg: &TrainConfig) -> String {
    let data = DataFields::from_source(&cfg.data);
    let values: Vec<(&str, String)> = vec![
        ("mode", cfg.mode.to_string()),
        ("seed", cfg.seed.to_string()),
        ("epochs", cfg.epochs.to_string()),
        ("batch_size", cfg.batch_size.to_string()),
        ("lr", cfg.base_lr.to_string()),
        ("lr_drop_factor", cfg.lr_drop_factor.to_string()),
        ("lr_drop_points", join(&cfg.lr_drop_points)),
        ("hidden", join(&cfg.hidden)),
        ("hidden_activation", cfg.hidden_activation.to_string()),
        ("output_activation", cfg.output_activation.to_string()),
        ("loss", cfg.loss.to_string()),
        ("data", data.kind.clone()),
        ("data.bits", data.bits.to_string()),
        ("data.images", data.images.display().to_string()),
        ("data.labels", data.labels.display().to_string()),
        ("data.train_size", data.train_size.to_string()),
        ("data.val_size", data.val_size.to_string()),
        ("record_wall_time", cfg.record_wall_time.to_string()),
        ("stop_at_zero_train_error", cfg.stop_at_zero_train_error.to_string()),
        ("checkpoint_every", cfg.checkpoint_every.to_string()),
        ("sdr.alpha", cfg.sdr.alpha.to_string()),
        ("sdr.beta", cfg.sdr.beta.to_string()),
        ("sdr.zeta", cfg.sdr.zeta.to_string()),
        ("sdr.zeta_schedule", cfg.sdr.zeta_schedule.to_string()),
        ("sdr.hyperbolic_c", cfg.sdr.hyperbolic_c.to_string()),
        ("sdr.exponential_r", cfg.sdr.exponential_r.to_string()),
        ("sdr.zeta_front_scale", cfg.sdr.zeta_front_scale.to_string()),
        ("sdr.front_fraction", cfg.sdr.front_fraction.to_string()),
        ("sdr.sigma_update_every", cfg.sdr.sigma_update_every.to_string()),
        ("sdr.sigma_init_scale", cfg.sdr.sigma_init_scale.to_string()),
        ("dropout.p", cfg.dropout.p_drop.to_string()),
        ("dropout.scaling", cfg.dropout.scaling.to_string()),
    ];
    debug_assert_eq!(values.len(), KEYS.len());
    let mut out = String::new();
    for (k, v) in values {
        let _ = writeln!(out, "{k}={v}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::Mode;
    use crate::sdr::ZetaSchedule;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = parse_config_str("", "empty", &[]).unwrap();
        assert_eq!(cfg, TrainConfig::default());
        assert_eq!(cfg.mode, Mode::Plain);
        assert_eq!(cfg.epochs, 100);
        assert_eq!(cfg.batch_size, 100);
        assert_eq!(cfg.base_lr, 0.1);
    }

    #[test]
    fn keys_comments_and_overrides() {
        let text = "# paired run\nmode=sdr\n\nsdr.zeta=0.7   # decay\nsdr.zeta_schedule = hyperbolic\nhidden=32,16\ndata=parity\ndata.bits=3\n";
        let cfg = parse_config_str(text, "t", &["epochs=7".into(), "mode=dropout".into()]).unwrap();
        assert_eq!(cfg.sdr.zeta, 0.7);
        assert_eq!(cfg.sdr.zeta_schedule, ZetaSchedule::Hyperbolic);
        assert_eq!(cfg.hidden, vec![32, 16]);
        assert_eq!(cfg.data, DataSource::Parity { bits: 3 });
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.mode, Mode::Dropout);
    }

    #[test]
    fn distinct_errors_name_the_offender() {
        match parse_config_str("epochs=5\nsdr.gamma=1", "f.cfg", &[]).unwrap_err() {
            Error::UnknownKey { line, key, .. } => {
                assert_eq!(line, 2);
                assert_eq!(key, "sdr.gamma");
            }
            other => panic!("{other:?}"),
        }
        match parse_config_str("epochs=five", "f.cfg", &[]).unwrap_err() {
            Error::BadValue { line, key, value, .. } => {
                assert_eq!((line, key.as_str(), value.as_str()), (1, "epochs", "five"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_config_str("sdr.zeta=1.5", "f.cfg", &[]),
            Err(Error::Domain { what: "sdr.zeta", .. })
        ));
        assert!(matches!(
            parse_config(Path::new("/definitely/not/here.cfg"), &[]),
            Err(Error::ConfigNotFound(_))
        ));
        assert!(matches!(
            parse_config_str("", "f", &["nonsense".into()]),
            Err(Error::BadValue { .. })
        ));
        assert!(matches!(
            parse_config_str("", "f", &["bogus=1".into()]),
            Err(Error::UnknownKey { .. })
        ));
    }

    #[test]
    fn rendered_config_parses_back() {
        let mut cfg = parse_config_str(
            "mode=sdr\ndata=parity\ndata.bits=5\nlr_drop_points=0.25,0.5\n",
            "t",
            &[],
        )
        .unwrap();
        cfg.sdr.beta = 0.0125;
        let text = render_config(&cfg);
        assert_eq!(parse_config_str(&text, "rendered", &[]).unwrap(), cfg);
        let keys: Vec<&str> = text.lines().map(|l| l.split('=').next().unwrap()).collect();
        assert_eq!(keys, KEYS);
    }
}
