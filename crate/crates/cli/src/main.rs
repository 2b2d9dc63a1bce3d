//! Command-line entry point: dataset synthesis, codec pretraining, model
//! training, evaluation, robustness grids, ablations and the theory suite.
//!
//! Exit codes: 0 success, 1 validation/usage error, 2 runtime failure.

mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use forgeloc_core::checkpoint::hash_str;
use forgeloc_core::codec::{pretrain_codec, CodecWeights, PretrainConfig};
use forgeloc_core::data::{
    load_image, load_mask, read_manifest, resolve_record_path, synth, ForgeryKind, Split,
};
use forgeloc_core::metrics::binarize;
use forgeloc_core::robustness::PerturbationGrid;
use forgeloc_core::theory;
use forgeloc_core::train::{
    self, config_hash, evaluate, infer, run_ablation, run_robustness_suite, Ablation, ModelSpec,
    TrainConfig,
};
use forgeloc_core::Error;

#[derive(Parser)]
#[command(name = "forgeloc", version, about = "Forgery localization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Overrides {
    /// Override a config key, e.g. --set epochs=10 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic forgery dataset (PNG pairs plus manifest)
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Number of image/mask pairs
        #[arg(long, default_value_t = 100)]
        count: usize,
        /// Square image size in pixels (>= 32, multiple of 4)
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Comma-separated kinds: copy-move,splice,inpaint,pristine
        #[arg(long, default_value = "copy-move,splice,inpaint")]
        kinds: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Manifest split label: train, val or test
        #[arg(long, default_value = "train")]
        split: String,
        /// Also dump per-kernel residual planes as normalized grayscale PNGs
        #[arg(long, default_value_t = false)]
        dump_residuals: bool,
    },
    /// Pretrain the latent codec on a manifest of images
    PretrainCodec {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional JSON config for the pretraining run
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train the localization model against a frozen codec
    Train {
        /// JSON training config
        #[arg(long)]
        config: PathBuf,
        /// Codec checkpoint directory (overrides the config entry)
        #[arg(long)]
        codec: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate a trained checkpoint on a manifest
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write this many example overlay images
        #[arg(long, default_value_t = 4)]
        overlays: usize,
    },
    /// Run the perturbation grid over a manifest
    Robustness {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Grid spec, e.g. noise=0.1,0.3,0.5;jpeg=70,80,90;resize=0.7,0.8,0.9;osn=light,medium,heavy
        #[arg(
            long,
            default_value = "noise=0.1,0.3,0.5;jpeg=70,80,90;resize=0.7,0.8,0.9;osn=light,medium,heavy"
        )]
        grid: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train and score ablation variants under one seed and budget
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        codec: Option<PathBuf>,
        #[arg(long = "train-manifest")]
        train_manifest: PathBuf,
        #[arg(long = "test-manifest")]
        test_manifest: PathBuf,
        /// Comma-separated variants; defaults to all four
        #[arg(long, default_value = "no_srm_flmm,no_vae_lmm,no_lmm,no_codec_pretrain")]
        variants: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the numeric verification suite and write its report
    Theory {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Print version information
    Version,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::ConfigError(_)
        | Error::SchemaError(_)
        | Error::InvalidKind(_)
        | Error::FileMissing(_)
        | Error::EmptyInput(_)
        | Error::DecodeError(_)
        | Error::TooSmall(_)
        | Error::DivisibilityError(_, _)
        | Error::ShapeMismatch(_) => 1,
        _ => 2,
    }
}

type Result<T> = std::result::Result<T, Error>;

/// Seeds and versions recorded beside every artifact; the timestamp lives
/// only here so reruns stay byte-identical elsewhere.
fn write_run_manifest(out: &Path, command: &str, config_hash: &str, seeds: &[u64]) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let manifest = serde_json::json!({
        "command": command,
        "config_hash": config_hash,
        "seeds": seeds,
        "module_versions": {
            "forgeloc-core": env!("CARGO_PKG_VERSION"),
            "forgeloc-cli": env!("CARGO_PKG_VERSION"),
        },
        "argv": std::env::args().collect::<Vec<_>>(),
        "unix_time": std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    });
    std::fs::write(
        out.join("run_manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(())
}

/// Merge `--set key=value` pairs into a JSON object, insisting the keys
/// already exist (typo guard).
fn apply_overrides(mut base: serde_json::Value, sets: &[String]) -> Result<serde_json::Value> {
    let obj = base
        .as_object_mut()
        .ok_or_else(|| Error::ConfigError("config must be a JSON object".into()))?;
    for kv in sets {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Error::ConfigError(format!("override '{kv}' is not KEY=VALUE")))?;
        if !obj.contains_key(key) {
            return Err(Error::ConfigError(format!(
                "override references unknown config key '{key}'"
            )));
        }
        let parsed = serde_json::from_str::<serde_json::Value>(value)
            .unwrap_or_else(|_| serde_json::Value::String(value.to_string()));
        obj.insert(key.to_string(), parsed);
    }
    Ok(base)
}

fn load_config_value(path: Option<&Path>, defaults: serde_json::Value) -> Result<serde_json::Value> {
    match path {
        None => Ok(defaults),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|_| Error::FileMissing(p.into()))?;
            let file: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| Error::ConfigError(e.to_string()))?;
            // file keys win over defaults; stray keys are rejected by the
            // typed parse afterwards
            let mut merged = defaults;
            if let (Some(m), Some(f)) = (merged.as_object_mut(), file.as_object()) {
                for (k, v) in f {
                    m.insert(k.clone(), v.clone());
                }
            }
            Ok(merged)
        }
    }
}

fn parse_kinds(spec: &str) -> Result<Vec<ForgeryKind>> {
    spec.split(',')
        .map(|s| ForgeryKind::parse(s.trim()))
        .collect()
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(Error::ConfigError(format!("unknown split {other}"))),
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            out,
            count,
            size,
            kinds,
            seed,
            split,
            dump_residuals,
        } => {
            let kinds = parse_kinds(&kinds)?;
            let split = parse_split(&split)?;
            let manifest = synth::synthesize_dataset::<f32>(&out, count, size, &kinds, seed, split)?;
            if dump_residuals {
                let rdir = out.join("residuals");
                std::fs::create_dir_all(&rdir)?;
                for rec in &manifest.records {
                    let img = load_image::<f32>(&out.join(&rec.image_path))?;
                    let res = forgeloc_core::srm::extract_residuals(&img);
                    let stem = Path::new(&rec.image_path)
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| rec.seed.to_string());
                    for k in 0..3 {
                        forgeloc_core::data::save_map_normalized(
                            &res.channel(k),
                            res.height,
                            res.width,
                            &rdir.join(format!("{stem}_srm{k}.png")),
                        )?;
                    }
                }
            }
            let hash = hash_str(&format!("synth:{count}:{size}:{kinds:?}:{seed}:{split}"));
            write_run_manifest(&out, "synth", &hash, &[seed])?;
            println!(
                "wrote {count} {size}x{size} pairs to {} (manifest.jsonl)",
                out.display()
            );
            Ok(())
        }

        Command::PretrainCodec {
            manifest,
            out,
            config,
            overrides,
        } => {
            let defaults = serde_json::to_value(PretrainConfig::default())?;
            let merged =
                apply_overrides(load_config_value(config.as_deref(), defaults)?, &overrides.set)?;
            let cfg: PretrainConfig =
                serde_json::from_value(merged).map_err(|e| Error::ConfigError(e.to_string()))?;
            let records = read_manifest(&manifest)?;
            let (codec, report) = pretrain_codec::<f32>(&records, &manifest, &cfg)?;
            let cfg_hash = hash_str(&serde_json::to_string(&cfg)?);
            codec.save(&out, cfg.seed, &cfg_hash, report.epoch_losses.clone())?;
            std::fs::write(
                out.join("pretrain_report.json"),
                serde_json::to_string_pretty(&report)? + "\n",
            )?;
            let mut log = String::new();
            for (epoch, loss) in report.epoch_losses.iter().enumerate() {
                log.push_str(&serde_json::json!({"epoch": epoch, "loss": loss}).to_string());
                log.push('\n');
            }
            std::fs::write(out.join("pretrain_log.jsonl"), log)?;
            let y_max = report.epoch_losses.iter().cloned().fold(1e-9, f64::max);
            plot::line_chart(
                &out.join("loss_curve.png"),
                &[("loss".into(), report.epoch_losses.clone())],
                y_max,
                640,
                360,
            )?;
            write_run_manifest(&out, "pretrain-codec", &cfg_hash, &[cfg.seed])?;
            println!(
                "codec pretrained: holdout mae {:.4}, mask accuracy {:.4}, hash {}",
                report.holdout_mae, report.mask_accuracy, report.content_hash
            );
            Ok(())
        }

        Command::Train {
            config,
            codec,
            manifest,
            out,
            overrides,
        } => {
            let text =
                std::fs::read_to_string(&config).map_err(|_| Error::FileMissing(config.clone()))?;
            let value: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| Error::ConfigError(e.to_string()))?;
            let merged = apply_overrides(value, &overrides.set)?;
            let mut cfg: TrainConfig =
                serde_json::from_value(merged).map_err(|e| Error::ConfigError(e.to_string()))?;
            if let Some(codec_path) = codec {
                cfg.codec_checkpoint = Some(codec_path);
            }
            cfg.validate()?;
            let spec = model_spec_for(&cfg)?;
            let outcome = train::train::<f32>(&cfg, &spec, &manifest)?;
            std::fs::create_dir_all(&out)?;
            train::save_model(
                &out.join("checkpoint"),
                &outcome.model,
                &outcome.codec,
                &cfg,
                &spec,
                cfg.epochs as u32,
                outcome.epoch_loss.clone(),
            )?;
            let mut log = String::new();
            for line in &outcome.log {
                log.push_str(&serde_json::to_string(line)?);
                log.push('\n');
            }
            std::fs::write(out.join("train_log.jsonl"), log)?;
            let y_max = outcome.epoch_loss.iter().cloned().fold(1e-9, f64::max);
            plot::line_chart(
                &out.join("loss_curve.png"),
                &[("total".into(), outcome.epoch_loss.clone())],
                y_max,
                640,
                360,
            )?;
            write_run_manifest(&out, "train", &config_hash(&cfg, &spec), &[cfg.seed])?;
            println!(
                "trained {} epochs; final epoch loss {:.4}; checkpoint at {}",
                cfg.epochs,
                outcome.epoch_loss.last().copied().unwrap_or(f64::NAN),
                out.join("checkpoint").display()
            );
            Ok(())
        }

        Command::Eval {
            checkpoint,
            manifest,
            out,
            overlays,
        } => {
            let (model, codec, meta) = train::load_model::<f32>(&checkpoint)?;
            let report = evaluate(&codec, &model, &manifest, &meta.config_hash)?;
            std::fs::create_dir_all(&out)?;
            report.write_json(&out.join("report.json"))?;
            report.write_csv(&out.join("report.csv"))?;
            if overlays > 0 {
                write_overlays(&codec, &model, &manifest, &out, overlays)?;
            }
            write_run_manifest(&out, "eval", &meta.config_hash, &[meta.seed])?;
            let row = &report.summary["none"];
            println!(
                "evaluated {} images: complement-F1 {:.4}, F1 {:.4}, IoU {:.4}",
                row.count, row.f1_complement_max, row.f1, row.iou
            );
            Ok(())
        }

        Command::Robustness {
            checkpoint,
            manifest,
            grid,
            out,
            seed,
        } => {
            let (model, codec, meta) = train::load_model::<f32>(&checkpoint)?;
            let grid = PerturbationGrid::parse(&grid)?;
            let report =
                run_robustness_suite(&codec, &model, &manifest, &grid, seed, &meta.config_hash)?;
            std::fs::create_dir_all(&out)?;
            report.write_json(&out.join("report.json"))?;
            report.write_csv(&out.join("report.csv"))?;
            let series_for = |labels: Vec<String>| -> Vec<f64> {
                labels
                    .iter()
                    .filter_map(|l| report.summary.get(l).map(|r| r.f1_complement_max))
                    .collect()
            };
            let mut series = Vec::new();
            if let Some(row) = report.summary.get("none") {
                series.push(("none".to_string(), vec![row.f1_complement_max; 3]));
            }
            series.push((
                "noise".into(),
                series_for(grid.noise_sigmas.iter().map(|s| format!("noise{s}")).collect()),
            ));
            series.push((
                "jpeg".into(),
                series_for(grid.jpeg_qualities.iter().rev().map(|q| format!("jpeg{q}")).collect()),
            ));
            series.push((
                "resize".into(),
                series_for(grid.resize_factors.iter().rev().map(|f| format!("resize{f}")).collect()),
            ));
            series.push((
                "osn".into(),
                series_for(
                    grid.osn_profiles
                        .iter()
                        .map(|p| format!("osn_{}", p.as_str()))
                        .collect(),
                ),
            ));
            plot::line_chart(&out.join("f1_vs_level.png"), &series, 1.0, 640, 360)?;
            write_run_manifest(&out, "robustness", &meta.config_hash, &[meta.seed, seed])?;
            for (tag, row) in &report.summary {
                println!(
                    "{tag:>12}: complement-F1 {:.4} (n={})",
                    row.f1_complement_max, row.count
                );
            }
            Ok(())
        }

        Command::Ablate {
            config,
            codec,
            train_manifest,
            test_manifest,
            variants,
            out,
            overrides,
        } => {
            let text =
                std::fs::read_to_string(&config).map_err(|_| Error::FileMissing(config.clone()))?;
            let value: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| Error::ConfigError(e.to_string()))?;
            let merged = apply_overrides(value, &overrides.set)?;
            let mut cfg: TrainConfig =
                serde_json::from_value(merged).map_err(|e| Error::ConfigError(e.to_string()))?;
            if let Some(codec_path) = codec {
                cfg.codec_checkpoint = Some(codec_path);
            }
            cfg.validate()?;
            let variant_list: Vec<Ablation> = variants
                .split(',')
                .map(|v| Ablation::parse(v.trim()))
                .collect::<Result<_>>()?;
            let spec = model_spec_for(&cfg)?;
            let results =
                run_ablation::<f32>(&cfg, &spec, &train_manifest, &test_manifest, &variant_list)?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(
                out.join("ablation.json"),
                serde_json::to_string_pretty(&results)? + "\n",
            )?;
            write_run_manifest(&out, "ablate", &config_hash(&cfg, &spec), &[cfg.seed])?;
            for r in &results {
                println!("{:>18}: complement-F1 {:.4}", r.variant, r.complement_f1);
            }
            Ok(())
        }

        Command::Theory { out, seed } => {
            let report = theory::run_theory_suite(seed)?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(
                out.join("theory_report.json"),
                serde_json::to_string_pretty(&report)? + "\n",
            )?;
            write_run_manifest(&out, "theory", &hash_str(&format!("theory:{seed}")), &[seed])?;
            println!(
                "fold max err {:.3e}; MI gain min {:.3e}; xor gain {} bit; jensen gap min {:.3e}",
                report.fold_max_err, report.mi_gain_min, report.xor_gain_bits, report.jensen_gap_min
            );
            Ok(())
        }

        Command::Version => {
            println!("forgeloc {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
    }
}

/// Model architecture derived from the codec checkpoint geometry; the
/// residual patch always tracks the codec stride so tokens align with
/// latent cells.
fn model_spec_for(cfg: &TrainConfig) -> Result<ModelSpec> {
    let codec_spec = match (
        &cfg.codec_checkpoint,
        cfg.ablation.contains(&Ablation::NoCodecPretrain),
    ) {
        (Some(path), _) => CodecWeights::<f32>::load_spec(path)?,
        (None, true) => Default::default(),
        (None, false) => {
            return Err(Error::ConfigError(
                "codec_checkpoint required unless ablation no_codec_pretrain".into(),
            ))
        }
    };
    let mut spec = ModelSpec {
        codec: codec_spec,
        ..Default::default()
    };
    spec.flmm.patch = codec_spec.downsample;
    spec.flmm.out_channels = codec_spec.latent_channels;
    Ok(spec)
}

/// Blend prediction and ground truth over the input for quick inspection:
/// predicted region tinted red, truth boundary drawn green.
fn write_overlays(
    codec: &CodecWeights<f32>,
    model: &train::Localizer<f32>,
    manifest_path: &Path,
    out: &Path,
    count: usize,
) -> Result<()> {
    let manifest = read_manifest(manifest_path)?;
    let dir = out.join("overlays");
    std::fs::create_dir_all(&dir)?;
    for rec in manifest.records.iter().take(count) {
        let image = load_image::<f32>(&resolve_record_path(manifest_path, &rec.image_path))?;
        let mask = load_mask(&resolve_record_path(manifest_path, &rec.mask_path))?;
        let prob = infer(codec, model, &image)?;
        let pred = binarize(&prob, 0.5);
        let mut overlay = image.clone();
        for i in 0..image.height {
            for j in 0..image.width {
                if pred.at(i, j) > 0 {
                    let r = overlay.at(i, j, 0);
                    *overlay.at_mut(i, j, 0) = 0.5 * r + 0.5;
                    *overlay.at_mut(i, j, 1) = 0.5 * overlay.at(i, j, 1);
                    *overlay.at_mut(i, j, 2) = 0.5 * overlay.at(i, j, 2);
                }
                if mask.at(i, j) > 0 {
                    let boundary = [(0i64, 1i64), (0, -1), (1, 0), (-1, 0)]
                        .iter()
                        .any(|&(di, dj)| {
                            let (ni, nj) = (i as i64 + di, j as i64 + dj);
                            ni < 0
                                || nj < 0
                                || ni >= image.height as i64
                                || nj >= image.width as i64
                                || mask.at(ni as usize, nj as usize) == 0
                        });
                    if boundary {
                        *overlay.at_mut(i, j, 0) = 0.0;
                        *overlay.at_mut(i, j, 1) = 1.0;
                        *overlay.at_mut(i, j, 2) = 0.0;
                    }
                }
            }
        }
        let stem = Path::new(&rec.image_path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| rec.seed.to_string());
        forgeloc_core::data::save_image(&overlay, &dir.join(format!("overlay_{stem}.png")))?;
    }
    Ok(())
}
