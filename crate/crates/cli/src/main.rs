//! `msan` command-line tool.
//!
//! Exit codes: 0 success, 1 internal error, 2 configuration error,
//! 3 data or format error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use msan::autodiff::Tensor;
use msan::harness::dataset::{ae_loss_csv, create_dir, parse_raw_csv, read_bytes, write_tensor};
use msan::harness::{self, Checkpoint, RunConfig};
use msan::nets::{default_feature_spec, Autoencoder};
use msan::signal::{extract_features, BandSpec, ElectrodeLayout};
use msan::synth::{generate_benchmark, generate_raw_eeg_named};
use msan::trainer::{fit, loso_run, pretrain_autoencoder, stack_rows, DomainDataset, Mode};
use msan::{Error, Result};

#[derive(Parser)]
#[command(name = "msan", version, about = "Multi-subdomain adversarial training for cross-subject EEG features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// `key = value` run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed from the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-subject dataset directory.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract DE feature maps from a raw CSV recording (or a generated one).
    Features {
        #[command(flatten)]
        common: Common,
        /// Raw CSV, one row per channel: name, then samples. Omit to
        /// generate a toy recording on the layout's channels.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Electrode layout file; defaults to the built-in 62-channel grid.
        #[arg(long)]
        layout: Option<PathBuf>,
        /// Length of the generated toy recording in seconds.
        #[arg(long, default_value_t = 60.0)]
        duration: f64,
        /// Class whose band profile the generated recording follows.
        #[arg(long, default_value_t = 0)]
        class: usize,
        /// Output tensor file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Pre-train the autoencoder on every sample of a dataset.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train with one subject held out as the unlabeled target.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Target subject id; defaults to the first subject in the manifest.
        #[arg(long)]
        target: Option<usize>,
    },
    /// Leave-one-subject-out evaluation.
    Loso {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a two-component PCA of learned features as CSV.
    ExportEmbeddings {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Subject marked as the target domain; defaults to the first one.
        #[arg(long)]
        target: Option<usize>,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => {
            let text = String::from_utf8(read_bytes(p)?).map_err(|_| Error::config("config", "file is not UTF-8"))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.set_seed(s);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    harness::write_atomic(path, text.as_bytes())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common, out } => {
            let cfg = load_config(&common)?;
            let subjects = generate_benchmark(&cfg.synth)?;
            harness::write_dataset(&out, &subjects, cfg.synth.num_classes)?;
            eprintln!("wrote {} subjects to {}", subjects.len(), out.display());
        }
        Command::Features { common, data, layout, duration, class, out } => {
            let cfg = load_config(&common)?;
            let layout = match layout {
                Some(p) => {
                    let text =
                        String::from_utf8(read_bytes(&p)?).map_err(|_| Error::Data("layout is not UTF-8".into()))?;
                    ElectrodeLayout::parse(&text)?
                }
                None => ElectrodeLayout::seed62(),
            };
            let rec = match data {
                Some(p) => {
                    let rate = cfg.rate_hz.ok_or_else(|| Error::config("rate_hz", "required for CSV input"))?;
                    let text =
                        String::from_utf8(read_bytes(&p)?).map_err(|_| Error::Data("input is not UTF-8".into()))?;
                    parse_raw_csv(&text, rate)?
                }
                None => {
                    let names = layout.channel_names();
                    generate_raw_eeg_named(names, cfg.rate_hz.unwrap_or(200.0), duration, class, cfg.synth.seed)?
                }
            };
            let maps = extract_features(&rec, &BandSpec::standard(), &layout, cfg.window_s, cfg.stride_s)?;
            let dims = maps[0].values.dims().to_vec();
            let data: Vec<f64> = maps.iter().flat_map(|m| m.values.data().iter().copied()).collect();
            let t = Tensor::new([vec![maps.len()], dims].concat(), data)?;
            write_tensor(&out, &t)?;
            eprintln!("wrote feature maps {:?} to {}", t.dims(), out.display());
        }
        Command::Pretrain { common, data, out } => {
            let cfg = load_config(&common)?;
            let (_, subjects) = harness::read_dataset(&data)?;
            let flats: Vec<Tensor> = subjects.iter().map(|s| s.flat_features()).collect();
            let all = stack_rows(&flats.iter().collect::<Vec<_>>())?;
            let ae = Autoencoder::new(&default_feature_spec(all.cols()), cfg.train.seed.wrapping_add(3))?;
            let (ae, curve) = pretrain_autoencoder(ae, &all, &cfg.train)?;
            create_dir(&out)?;
            harness::save_checkpoint(&out.join("autoencoder.msck"), &Checkpoint::from_autoencoder(&ae)?)?;
            write_text(&out.join("ae_loss.csv"), &ae_loss_csv(&curve))?;
            eprintln!("final reconstruction loss {:.6}", curve.last().copied().unwrap_or(f64::NAN));
        }
        Command::Train { common, data, out, target } => {
            let cfg = load_config(&common)?;
            let (manifest, subjects) = harness::read_dataset(&data)?;
            let target =
                target.or(manifest.subjects.first().copied()).ok_or_else(|| Error::Data("empty dataset".into()))?;
            let dataset = DomainDataset::leave_one_out(&subjects, target)?;
            let (bundle, metrics) = fit(&dataset, &cfg.train)?;
            create_dir(&out)?;
            harness::save_checkpoint(&out.join("model.msck"), &Checkpoint::from_bundle(&bundle)?)?;
            write_text(&out.join("metrics.csv"), &metrics.to_csv())?;
            if cfg.train.mode == Mode::MsanPt {
                write_text(&out.join("ae_loss.csv"), &ae_loss_csv(&metrics.ae_loss))?;
            }
            println!("target subject {target}: accuracy {:.4}", metrics.accuracy);
        }
        Command::Loso { common, data, out } => {
            let cfg = load_config(&common)?;
            let (_, subjects) = harness::read_dataset(&data)?;
            let report = loso_run(&subjects, &cfg.train)?;
            create_dir(&out)?;
            for f in &report.folds {
                let dir = out.join(format!("fold_{}", f.fold));
                create_dir(&dir)?;
                write_text(&dir.join("metrics.csv"), &f.metrics.to_csv())?;
                harness::save_checkpoint(&dir.join("model.msck"), &Checkpoint::from_bundle(&f.bundle)?)?;
            }
            if cfg.train.mode == Mode::MsanPt {
                let curve = report.folds.first().map(|f| f.metrics.ae_loss.clone()).unwrap_or_default();
                write_text(&out.join("ae_loss.csv"), &ae_loss_csv(&curve))?;
            }
            write_text(&out.join("summary.csv"), &report.summary_csv())?;
            println!("{}: mean {:.4} std {:.4}", cfg.train.mode.name(), report.mean, report.std);
        }
        Command::ExportEmbeddings { common, checkpoint, data, out, target } => {
            load_config(&common)?;
            let bundle = harness::load_checkpoint(&checkpoint)?.to_bundle()?;
            let (manifest, subjects) = harness::read_dataset(&data)?;
            let target =
                target.or(manifest.subjects.first().copied()).ok_or_else(|| Error::Data("empty dataset".into()))?;
            write_text(&out, &harness::export_embeddings(&bundle, &subjects, target)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.category().exit_code() as u8)
        }
    }
}
