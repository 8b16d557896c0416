//! Plot-ready series from a metrics CSV and its spread checkpoints.
//!
//! Every `(run, metric)` pair becomes `<run_id>.<metric>.dat` with two whitespace
//! separated columns, `epoch value`. Every checkpoint in the `checkpoints/` directory
//! next to the CSV becomes one histogram per layer, `<stem>.layer<l>.sigma_hist.dat`,
//! with columns `bin_low bin_high count`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::bench::METRICS_HEADER;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::sdr::StochasticWeights;

pub const SERIES: &[&str] = &[
    "train_loss",
    "train_error",
    "val_loss",
    "val_error",
    "max_sigma",
    "mean_sigma",
    "wall_ms",
];

pub const HISTOGRAM_BINS: usize = 20;

pub const CHECKPOINT_DIR: &str = "checkpoints";

/// File name for a spread checkpoint of `run_id` after `epoch`.
pub fn checkpoint_file_name(run_id: &str, epoch: usize) -> String {
    format!("{run_id}.epoch{epoch:04}.ckpt")
}

struct Series {
    run_id: String,
    points: Vec<(usize, [f64; 7])>,
}

fn read_series(csv: &Path) -> Result<Vec<Series>> {
    let text = fs::read_to_string(csv).map_err(|e| Error::io(format!("reading {}", csv.display()), e))?;
    let malformed = |row: usize, message: String| Error::MalformedCsv {
        path: csv.to_path_buf(),
        row,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end() == METRICS_HEADER => {}
        _ => return Err(malformed(1, "missing or unexpected header".into())),
    }

    let mut series: Vec<Series> = Vec::new();
    for (i, line) in lines {
        let row = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(malformed(row, format!("expected 11 fields, found {}", fields.len())));
        }
        let epoch: usize = fields[3]
            .parse()
            .map_err(|_| malformed(row, format!("bad epoch `{}`", fields[3])))?;
        let mut values = [0.0; 7];
        for (slot, (name, raw)) in values.iter_mut().zip(SERIES.iter().zip(&fields[4..])) {
            *slot = raw.parse().map_err(|_| malformed(row, format!("bad {name} `{raw}`")))?;
        }
        let run_id = fields[0];
        match series.iter_mut().find(|s| s.run_id == run_id) {
            Some(s) => s.points.push((epoch, values)),
            None => series.push(Series {
                run_id: run_id.to_string(),
                points: vec![(epoch, values)],
            }),
        }
    }
    Ok(series)
}

/// `(low, high, count)` rows over `[min, max]`; a single row when all values coincide.
pub fn histogram(values: &Matrix, bins: usize) -> Vec<(f64, f64, usize)> {
    let (lo, hi) = (values.min(), values.max());
    let n = values.as_slice().len();
    if n == 0 {
        return Vec::new();
    }
    if hi <= lo {
        return vec![(lo, hi, n)];
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values.as_slice() {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(b, c)| {
            (
                lo + b as f64 * width,
                if b + 1 == bins { hi } else { lo + (b + 1) as f64 * width },
                c,
            )
        })
        .collect()
}

fn write(path: PathBuf, body: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, body).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    written.push(path);
    Ok(())
}

/// Writes all series and histograms into `out_dir`; returns the files written.
pub fn emit_plot_data(metrics_csv: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let series = read_series(metrics_csv)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    let mut written = Vec::new();

    for s in &series {
        for (m, name) in SERIES.iter().enumerate() {
            let mut body = format!("# epoch {name}\n");
            for (epoch, values) in &s.points {
                let _ = writeln!(body, "{epoch} {}", values[m]);
            }
            write(out_dir.join(format!("{}.{name}.dat", s.run_id)), &body, &mut written)?;
        }
    }

    let ckpt_dir = metrics_csv
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(CHECKPOINT_DIR);
    if ckpt_dir.is_dir() {
        let mut paths: Vec<PathBuf> = fs::read_dir(&ckpt_dir)
            .map_err(|e| Error::io(format!("listing {}", ckpt_dir.display()), e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
            .collect();
        paths.sort();
        for path in paths {
            let sw = StochasticWeights::read_checkpoint(&path)?;
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("checkpoint");
            for (l, sigma) in sw.sigma.iter().enumerate() {
                let mut body = String::from("# bin_low bin_high count\n");
                for (lo, hi, c) in histogram(sigma, HISTOGRAM_BINS) {
                    let _ = writeln!(body, "{lo} {hi} {c}");
                }
                write(
                    out_dir.join(format!("{stem}.layer{l}.sigma_hist.dat")),
                    &body,
                    &mut written,
                )?;
            }
        }
    }
    Ok(written)
}
