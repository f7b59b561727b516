use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use mimo_detect::channel::{export_channels, import_channels, ChannelFileEncoding, ChannelModel};
use mimo_detect::harness::{
    render_results, render_timings, runtime_bench, ser_sweep, BenchSpec, DetectorSpec, OutputFormat, SweepSpec,
    CV_LIMIT,
};
use mimo_detect::modulation::Scheme;
use mimo_detect::rng::{derive_seed, stream};
use mimo_detect::training::{
    gradcheck, train_offline, train_online_mmnet, write_curve_csv, GradcheckConfig, OnlineConfig, TrainConfig,
};
use mimo_detect::unfolded::{save_model, Family};
use mimo_detect::Error;

/// Gradient audits pass below this relative error.
const GRADCHECK_TOLERANCE: f64 = 1e-5;

#[derive(Parser)]
#[command(name = "mimo-detect", version, about = "Massive-MIMO detection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file. `.csv` selects CSV where supported, anything else JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample channel realizations and write a channel file.
    GenChannels {
        #[command(flatten)]
        common: Common,
        #[arg(long = "K")]
        users: Option<usize>,
        #[arg(long = "N")]
        antennas: Option<usize>,
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Kronecker receive correlation; i.i.d. Rayleigh when absent.
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long, value_parser = parse_encoding)]
        encoding: Option<ChannelFileEncoding>,
    },
    /// Train an unfolded network offline and save the model file.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        family: Option<Family>,
        #[arg(long = "K")]
        users: Option<usize>,
        #[arg(long = "N")]
        antennas: Option<usize>,
        #[arg(long = "L")]
        layers: Option<usize>,
        #[arg(long)]
        alphabet: Option<Scheme>,
        #[arg(long, allow_negative_numbers = true)]
        snr_min: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        snr_max: Option<f64>,
        #[arg(long)]
        iterations: Option<usize>,
        /// Also write the learning curve as CSV.
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Train MMNet online for one channel realization.
    TrainOnline {
        #[command(flatten)]
        common: Common,
        #[arg(long = "K")]
        users: Option<usize>,
        #[arg(long = "N")]
        antennas: Option<usize>,
        #[arg(long = "L")]
        layers: Option<usize>,
        #[arg(long)]
        alphabet: Option<Scheme>,
        #[arg(long, allow_negative_numbers = true)]
        snr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        rho: Option<f64>,
        /// Take the channel from a channel file instead of sampling it.
        #[arg(long)]
        channels: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// SER at a single SNR point.
    Eval {
        #[command(flatten)]
        common: Common,
        /// `mf`, `zf`, `lmmse`, `ml` or `sphere`.
        #[arg(long)]
        detector: Option<String>,
        /// Model file of a trained network.
        #[arg(long, conflicts_with = "detector")]
        model: Option<PathBuf>,
        #[arg(long = "K")]
        users: Option<usize>,
        #[arg(long = "N")]
        antennas: Option<usize>,
        #[arg(long)]
        alphabet: Option<Scheme>,
        #[arg(long, allow_negative_numbers = true)]
        snr: Option<f64>,
        #[arg(long)]
        max_trials: Option<u64>,
        #[arg(long)]
        min_errors: Option<u64>,
    },
    /// SER curve over an SNR grid.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Per-vector run times as a runtime table.
    Bench {
        #[command(flatten)]
        common: Common,
        /// `table1-qpsk` or `table1-qam16`.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        reps: Option<usize>,
    },
    /// Compare reverse-mode gradients with finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        family: Option<Family>,
        #[arg(long = "K")]
        users: Option<usize>,
        #[arg(long = "N")]
        antennas: Option<usize>,
        #[arg(long = "L")]
        layers: Option<usize>,
        #[arg(long)]
        alphabet: Option<Scheme>,
    },
}

#[derive(Debug)]
enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

type Outcome = Result<(), Failure>;

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Validation(msg.into())
}

fn parse_encoding(s: &str) -> Result<ChannelFileEncoding, String> {
    match s {
        "base64" => Ok(ChannelFileEncoding::Base64),
        "array" => Ok(ChannelFileEncoding::Array),
        _ => Err(format!("unknown encoding {s:?}, expected base64 or array")),
    }
}

fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T, Failure> {
    value.ok_or_else(|| invalid(format!("--{flag} is required without --config")))
}

fn emit(text: &str, out: Option<&Path>) -> Outcome {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| invalid(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn format_for(out: Option<&Path>) -> OutputFormat {
    out.map_or(OutputFormat::Csv, OutputFormat::from_path)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenChannelsConfig {
    #[serde(rename = "K")]
    users: usize,
    #[serde(rename = "N")]
    antennas: usize,
    #[serde(default = "one")]
    count: usize,
    #[serde(default)]
    channel: ChannelModel,
    #[serde(default)]
    encoding: ChannelFileEncoding,
    #[serde(default)]
    seed: u64,
}

fn one() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainOnlineConfig {
    #[serde(rename = "K")]
    users: usize,
    #[serde(rename = "N")]
    antennas: usize,
    #[serde(default)]
    channel: ChannelModel,
    epochs: usize,
    training: OnlineConfig,
}

fn model_from_rho(rho: Option<f64>) -> ChannelModel {
    rho.map_or(ChannelModel::IidRayleigh, |rho| ChannelModel::Kronecker { rho })
}

fn run(command: Command) -> Outcome {
    match command {
        Command::GenChannels { common, users, antennas, count, rho, encoding } => {
            let mut cfg = match &common.config {
                Some(path) => load_config(path)?,
                None => GenChannelsConfig {
                    users: required(users, "K")?,
                    antennas: required(antennas, "N")?,
                    count,
                    channel: model_from_rho(rho),
                    encoding: encoding.unwrap_or_default(),
                    seed: 0,
                },
            };
            if let Some(seed) = common.seed {
                cfg.seed = seed;
            }
            cfg.channel.validate()?;
            let out = required(common.out, "out")?;
            let channels = (0..cfg.count)
                .map(|i| {
                    let seed = derive_seed(cfg.seed, &[stream::CHANNEL, i as u64]);
                    cfg.channel.sample(cfg.users, cfg.antennas, seed)
                })
                .collect::<Result<Vec<_>, _>>()?;
            export_channels(&out, &channels, cfg.encoding)?;
            println!("wrote {} channels to {}", channels.len(), out.display());
            Ok(())
        }
        Command::Train { common, family, users, antennas, layers, alphabet, snr_min, snr_max, iterations, curve } => {
            let mut cfg: TrainConfig = match &common.config {
                Some(path) => load_config(path)?,
                None => TrainConfig::new(
                    required(family, "family")?,
                    required(users, "K")?,
                    required(antennas, "N")?,
                    required(layers, "L")?,
                    required(alphabet, "alphabet")?,
                    [required(snr_min, "snr-min")?, required(snr_max, "snr-max")?],
                ),
            };
            if let Some(seed) = common.seed {
                cfg.seed = seed;
            }
            if let Some(n) = iterations {
                cfg.iterations = n;
            }
            cfg.validate()?;
            let out = common.out.unwrap_or_else(|| PathBuf::from("model.json"));
            let outcome = train_offline(&cfg)?;
            save_model(&out, &outcome.params)?;
            if let Some(path) = curve {
                write_curve_csv(&outcome.curve, path)?;
            }
            println!(
                "{}: {} iterations in {:.1} s, validation SER {:.4e} -> {:.4e} (best at iteration {}), model written to {}",
                cfg.family,
                outcome.iterations_run,
                outcome.elapsed_seconds,
                outcome.initial_val_ser,
                outcome.best_val_ser,
                outcome.best_iteration,
                out.display()
            );
            Ok(())
        }
        Command::TrainOnline { common, users, antennas, layers, alphabet, snr, epochs, rho, channels, index } => {
            let mut cfg = match &common.config {
                Some(path) => load_config(path)?,
                None => TrainOnlineConfig {
                    // A channel file fixes the dimensions.
                    users: if channels.is_some() { users.unwrap_or(0) } else { required(users, "K")? },
                    antennas: if channels.is_some() { antennas.unwrap_or(0) } else { required(antennas, "N")? },
                    channel: model_from_rho(rho),
                    epochs: epochs.unwrap_or(500),
                    training: OnlineConfig::new(
                        required(layers, "L")?,
                        required(alphabet, "alphabet")?,
                        required(snr, "snr")?,
                    ),
                },
            };
            if let Some(seed) = common.seed {
                cfg.training.seed = seed;
            }
            let h = match channels {
                Some(path) => {
                    let list = import_channels(&path)?;
                    list.into_iter().nth(index).ok_or_else(|| {
                        invalid(format!("{}: no channel at index {index}", path.display()))
                    })?
                }
                None => {
                    cfg.channel.validate()?;
                    let seed = derive_seed(cfg.training.seed, &[stream::CHANNEL]);
                    cfg.channel.sample(cfg.users, cfg.antennas, seed)?
                }
            };
            let outcome = train_online_mmnet(&h, &cfg.training, cfg.epochs)?;
            if let Some(out) = &common.out {
                save_model(out, &outcome.params)?;
            }
            let first = outcome.losses.first().copied().unwrap_or(f64::NAN);
            let last = outcome.losses.last().copied().unwrap_or(f64::NAN);
            println!(
                "MMNet: {} epochs in {:.2} s, loss {first:.4} -> {last:.4}",
                cfg.epochs, outcome.training_seconds
            );
            Ok(())
        }
        Command::Eval { common, detector, model, users, antennas, alphabet, snr, max_trials, min_errors } => {
            let mut spec: SweepSpec = match &common.config {
                Some(path) => load_config(path)?,
                None => {
                    let det = match (detector, model) {
                        (_, Some(path)) => DetectorSpec::Model { path },
                        (Some(kind), None) => classical(&kind)?,
                        (None, None) => return Err(invalid("--detector or --model is required without --config")),
                    };
                    SweepSpec::new(
                        det,
                        required(users, "K")?,
                        required(antennas, "N")?,
                        required(alphabet, "alphabet")?,
                        vec![required(snr, "snr")?],
                        max_trials.unwrap_or(100_000),
                    )
                }
            };
            if let Some(snr) = snr {
                spec.snr_grid_db = vec![snr];
            }
            if spec.snr_grid_db.len() != 1 {
                return Err(invalid("eval takes a single SNR point; pass --snr"));
            }
            if let Some(n) = max_trials {
                spec.max_trials = n;
            }
            if let Some(n) = min_errors {
                spec.min_errors = n;
            }
            sweep(spec, common)
        }
        Command::Sweep { common } => {
            let path = required(common.config.clone(), "config")?;
            let spec: SweepSpec = load_config(&path)?;
            sweep(spec, common)
        }
        Command::Bench { common, preset, reps } => {
            let mut spec: BenchSpec = match (&common.config, preset) {
                (Some(path), _) => load_config(path)?,
                (None, Some(name)) => BenchSpec::preset(&name)?,
                (None, None) => return Err(invalid("--preset or --config is required")),
            };
            if let Some(seed) = common.seed {
                spec.seed = seed;
            }
            if let Some(n) = reps {
                spec.reps = n;
            }
            spec.validate()?;
            let results = runtime_bench(&spec)?;
            for r in results.iter().filter(|r| r.noisy) {
                eprintln!("warning: {} timings are noisy (cv {:.2} >= {CV_LIMIT})", r.detector, r.cv);
            }
            let out = common.out.as_deref();
            emit(&render_timings(&results, format_for(out))?, out)
        }
        Command::Gradcheck { common, family, users, antennas, layers, alphabet } => {
            let mut cfg: GradcheckConfig = match &common.config {
                Some(path) => load_config(path)?,
                None => GradcheckConfig::new(
                    required(family, "family")?,
                    required(users, "K")?,
                    required(antennas, "N")?,
                    required(layers, "L")?,
                ),
            };
            if let Some(seed) = common.seed {
                cfg.seed = seed;
            }
            if let Some(a) = alphabet {
                cfg.alphabet = a;
            }
            let report = gradcheck(&cfg)?;
            if let Some(out) = &common.out {
                let text = serde_json::to_string_pretty(&report).map_err(Error::from)?;
                emit(&text, Some(out))?;
            }
            let w = &report.worst;
            println!(
                "{}: {} entries, max relative error {:.3e} at {}[{}, {}]",
                report.family, report.checked, report.max_rel_error, w.name, w.row, w.col
            );
            if report.max_rel_error < GRADCHECK_TOLERANCE {
                Ok(())
            } else {
                Err(Failure::Runtime(format!(
                    "max relative error {:.3e} exceeds {GRADCHECK_TOLERANCE:e}",
                    report.max_rel_error
                )))
            }
        }
    }
}

fn classical(kind: &str) -> Result<DetectorSpec, Failure> {
    Ok(match kind.to_ascii_lowercase().as_str() {
        "mf" => DetectorSpec::Mf,
        "zf" => DetectorSpec::Zf,
        "lmmse" => DetectorSpec::Lmmse,
        "ml" => DetectorSpec::Ml,
        "sd" | "sphere" => DetectorSpec::Sphere,
        other => return Err(invalid(format!("unknown detector {other:?}"))),
    })
}

fn sweep(mut spec: SweepSpec, common: Common) -> Outcome {
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    spec.validate()?;
    let result = ser_sweep(&spec)?;
    let out = common.out.as_deref();
    emit(&render_results(&result, format_for(out))?, out)?;
    if out.is_some() {
        for p in &result.points {
            println!("{} {} dB: SER {:.4e} [{:.4e}, {:.4e}] over {} vectors", result.detector, p.snr_db, p.ser, p.lo95, p.hi95, p.trials);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
