use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sdrnet::bench::config::streams;
use sdrnet::bench::{
    build_network, parity_config, parity_success_experiment, run_id, run_paired_experiment, train, write_metrics_csv,
    RunRecords,
};
use sdrnet::config::{parse_config, render_config};
use sdrnet::dropout::drop_count_experiment;
use sdrnet::plots::{checkpoint_file_name, emit_plot_data, CHECKPOINT_DIR};
use sdrnet::{Error, Mode, Result, Rng};

#[derive(Parser)]
#[command(
    name = "sdrnet",
    version,
    about = "Stochastic-weight and dropout training experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one network and write per-epoch metrics.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override a config key, applied after the file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Paired SDR and dropout runs over consecutive seeds starting at the config seed.
    Compare {
        #[arg(long)]
        config_sdr: PathBuf,
        #[arg(long)]
        config_dropout: PathBuf,
        #[arg(long)]
        seeds: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Success rates of SDR and plain backpropagation on n-bit parity.
    Parity {
        #[arg(long)]
        bits: usize,
        #[arg(long)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Drop-count statistics of a dropout layer against the binomial law.
    DropoutStats {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Turn a metrics CSV and its checkpoints into plot-ready series.
    EmitPlots {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::ConfigNotFound(_)
        | Error::UnknownKey { .. }
        | Error::BadValue { .. }
        | Error::InvalidConfig(_)
        | Error::Domain { .. } => 3,
        Error::BadMagic { .. }
        | Error::Truncated { .. }
        | Error::CountMismatch { .. }
        | Error::LabelOutOfRange { .. }
        | Error::MalformedCsv { .. }
        | Error::MalformedCheckpoint { .. } => 4,
        Error::Io { .. } => 5,
        Error::ShapeMismatch { .. } | Error::InvalidNetwork(_) => 6,
        Error::Diverged { .. } => 7,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        context: format!("creating {}", dir.display()),
        source: e,
    })
}

fn write_file(path: &Path, body: &[u8]) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::Io {
        context: format!("writing {}", path.display()),
        source: e,
    })
}

fn write_csv(path: &Path, runs: &[RunRecords]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::Io {
        context: format!("creating {}", path.display()),
        source: e,
    })?;
    let mut out = BufWriter::new(file);
    write_metrics_csv(&mut out, runs)?;
    out.flush().map_err(|e| Error::Io {
        context: format!("writing {}", path.display()),
        source: e,
    })
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value).expect("summary types serialize");
    body.push('\n');
    write_file(path, body.as_bytes())
}

fn cmd_train(config: &Path, overrides: &[String], out: &Path) -> Result<()> {
    let cfg = parse_config(config, overrides)?;
    let rng = Rng::new(cfg.seed);
    let data = cfg.data.load(&mut rng.split(streams::DATA))?;
    let mut net = build_network(&cfg, &data, &rng)?;
    let run = train(&mut net, &cfg, &data, &rng)?;

    create_dir(out)?;
    write_file(&out.join("config.used"), render_config(&cfg).as_bytes())?;
    let id = run_id(cfg.mode, cfg.seed);
    if !run.checkpoints.is_empty() {
        let dir = out.join(CHECKPOINT_DIR);
        create_dir(&dir)?;
        for c in &run.checkpoints {
            c.weights
                .write_checkpoint(&dir.join(checkpoint_file_name(&id, c.epoch)))?;
        }
    }
    let last = run.last().clone();
    write_csv(
        &out.join("metrics.csv"),
        &[RunRecords {
            run_id: id,
            mode: cfg.mode,
            seed: cfg.seed,
            records: run.records,
        }],
    )?;
    println!(
        "epochs {}  train_error {:.4}  val_error {:.4}  val_loss {:.4}",
        last.epoch, last.train_error, last.val_error, last.val_loss
    );
    Ok(())
}

fn cmd_compare(config_sdr: &Path, config_dropout: &Path, seeds: usize, out: &Path) -> Result<()> {
    let sdr = parse_config(config_sdr, &[])?;
    let dropout = parse_config(config_dropout, &[])?;
    if sdr.mode != Mode::Sdr || dropout.mode != Mode::Dropout {
        return Err(Error::InvalidConfig(format!(
            "compare expects mode=sdr and mode=dropout, got {} and {}",
            sdr.mode, dropout.mode
        )));
    }
    let data = sdr.data.load(&mut Rng::new(sdr.seed).split(streams::DATA))?;
    let seeds: Vec<u64> = (0..seeds as u64).map(|i| sdr.seed + i).collect();
    let outcome = run_paired_experiment(&sdr, &dropout, &data, &seeds)?;

    create_dir(out)?;
    write_csv(&out.join("metrics.csv"), &outcome.runs)?;
    write_json(&out.join("summary.json"), &outcome.summary)?;
    let s = &outcome.summary;
    println!(
        "median val_error  sdr {:.4}  dropout {:.4}  seeds reaching dropout's final error {}/{}",
        s.median_val_error_sdr,
        s.median_val_error_dropout,
        s.seeds_reaching_target,
        s.seeds.len()
    );
    Ok(())
}

fn cmd_parity(bits: usize, runs: usize, seed: u64, out: &Path) -> Result<()> {
    if runs == 0 {
        return Err(Error::InvalidConfig("runs must be positive".into()));
    }
    let result = parity_success_experiment(
        bits,
        runs,
        &parity_config(bits, Mode::Sdr),
        &parity_config(bits, Mode::Plain),
        &Rng::new(seed),
    )?;
    create_dir(out)?;
    write_json(&out.join("parity.json"), &result)?;
    println!(
        "{bits}-bit parity over {runs} runs: sdr {:.2}  plain {:.2}",
        result.sdr_rate, result.plain_rate
    );
    Ok(())
}

fn cmd_dropout_stats(n: usize, p: f64, trials: usize, seed: u64) -> Result<()> {
    let stats = drop_count_experiment(n, p, trials, &mut Rng::new(seed))?;
    let chi = stats.chi_square_vs_binomial();
    let report = serde_json::json!({
        "n": n,
        "p": p,
        "trials": trials,
        "mean": stats.mean(),
        "expected_mean": n as f64 * p,
        "variance": stats.variance(),
        "expected_variance": n as f64 * p * (1.0 - p),
        "chi_square": chi.statistic,
        "degrees_of_freedom": chi.degrees_of_freedom,
        "p_value": chi.p_value,
    });
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("json values serialize")
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, overrides, out } => cmd_train(&config, &overrides, &out),
        Command::Compare {
            config_sdr,
            config_dropout,
            seeds,
            out,
        } => cmd_compare(&config_sdr, &config_dropout, seeds, &out),
        Command::Parity { bits, runs, seed, out } => cmd_parity(bits, runs, seed, &out),
        Command::DropoutStats { n, p, trials, seed } => cmd_dropout_stats(n, p, trials, seed),
        Command::EmitPlots { metrics, out } => {
            let files = emit_plot_data(&metrics, &out)?;
            println!("wrote {} files to {}", files.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
