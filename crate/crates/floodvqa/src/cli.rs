//! The `floodvqa` command line: `split`, `extract`, `train`, `eval` and
//! `report`.
//!
//! Outputs land under `--out-dir` as `splits/`, `features/<encoder>/`,
//! `checkpoints/` and `reports/`. Each run also writes the resolved
//! configuration to `<out-dir>/config.resolved.toml`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use floodvqa_core::{split_by_image, type_histogram, DatasetSplit, FusionMethod, LabelVocabulary};

use crate::annotations::{load_annotations, load_annotations_with_images, resolve_image};
use crate::checkpoint;
use crate::config::{backbone_encoder, ExperimentConfig};
use crate::encoders::{
    extract_images, extract_text, CacheOutcome, CandleProvider, EncoderProvider, Modality,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    disambiguate_tags, evaluate, reference_rows, render_json, render_table, write_misclassified, ReportFile,
};
use crate::split_file::{file_digest, SplitFile};
use crate::store::FeatureStore;
use crate::training::{build_features, train, StoreRef, TrainLog};

#[derive(Debug, Parser)]
#[command(name = "floodvqa", version, about = "FloodNet VQA fusion-head pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root of all outputs.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Seed for the split, head initialization and shuffling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Annotation JSON (overrides data.annotations).
    #[arg(long, global = true)]
    pub annotations: Option<PathBuf>,
    /// Image directory (overrides data.images).
    #[arg(long, global = true)]
    pub images: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pin an image-disjoint train/test split.
    Split {
        #[arg(long)]
        test_fraction: Option<f64>,
    },
    /// Run a frozen encoder once and cache its vectors.
    Extract {
        #[arg(long)]
        modality: Modality,
        /// Registered encoder name; defaults to the configured one.
        #[arg(long)]
        encoder: Option<String>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Root holding `<encoder>/model.safetensors`.
        #[arg(long)]
        weights_dir: Option<PathBuf>,
        /// Use deterministic untrained weights (offline smoke runs).
        #[arg(long)]
        seeded_weights: bool,
    },
    /// Train a fusion head on cached features.
    Train {
        #[arg(long)]
        method: Option<FusionMethod>,
        /// resnet50 | convnext (also resnet18, convnext-atto).
        #[arg(long)]
        backbone: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score a checkpoint on the test split.
    Eval {
        #[arg(long)]
        method: Option<FusionMethod>,
        #[arg(long)]
        backbone: Option<String>,
        /// Defaults to `checkpoints/<tag>.safetensors`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Combine report files into one table.
    Report {
        /// Report JSON files; defaults to every report under `reports/`.
        files: Vec<PathBuf>,
        /// Add the published comparison rows, marked `ref:`.
        #[arg(long)]
        include_reference: bool,
        /// Also write the table here, plus a `.json` sidecar.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn resolve_config(global: &GlobalArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &global.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => {
            let mut cfg = ExperimentConfig::default();
            cfg.resolve_paths(&std::env::current_dir().map_err(Error::io("."))?);
            cfg
        }
    };
    if let Some(dir) = &global.out_dir {
        cfg.out_dir = dir.clone();
    }
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(p) = &global.annotations {
        cfg.data.annotations = Some(p.clone());
    }
    if let Some(p) = &global.images {
        cfg.data.images = Some(p.clone());
    }
    Ok(cfg)
}

fn apply_head_flags(cfg: &mut ExperimentConfig, method: Option<FusionMethod>, backbone: Option<&str>) -> Result<()> {
    if let Some(m) = method {
        cfg.fusion.method = m;
    }
    if let Some(b) = backbone {
        cfg.encoders.image = backbone_encoder(b)?.to_string();
    }
    Ok(())
}

fn write_resolved(cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(Error::io(&cfg.out_dir))?;
    let path = cfg.out_dir.join("config.resolved.toml");
    std::fs::write(&path, cfg.to_toml()).map_err(Error::io(&path))
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = resolve_config(&cli.global)?;
    match cli.command {
        Command::Split { test_fraction } => {
            if let Some(f) = test_fraction {
                cfg.split.test_image_fraction = f;
            }
            cfg.validate()?;
            write_resolved(&cfg)?;
            let (path, split) = cmd_split(&cfg)?;
            print_split(&path, &split);
            Ok(())
        }
        Command::Extract {
            modality,
            encoder,
            batch_size,
            weights_dir,
            seeded_weights,
        } => {
            if let Some(e) = encoder {
                match modality {
                    Modality::Image => cfg.encoders.image = e,
                    Modality::Text => cfg.encoders.text = e,
                }
            }
            if let Some(b) = batch_size {
                cfg.encoders.batch_size = b;
            }
            if let Some(w) = weights_dir {
                cfg.encoders.weights_dir = Some(w);
            }
            cfg.encoders.seeded_weights |= seeded_weights;
            cfg.validate()?;
            write_resolved(&cfg)?;
            let provider = CandleProvider::new(cfg.weight_source()?);
            let (store, outcome) = cmd_extract(&cfg, modality, &provider)?;
            print_extraction(&store, outcome);
            Ok(())
        }
        Command::Train {
            method,
            backbone,
            epochs,
        } => {
            apply_head_flags(&mut cfg, method, backbone.as_deref())?;
            if let Some(e) = epochs {
                cfg.training.epochs = e;
            }
            cfg.validate()?;
            write_resolved(&cfg)?;
            let log = cmd_train(&cfg)?;
            println!(
                "{}: {} epochs, final loss {:.4}, {:.1}s -> {}",
                log.model_tag,
                log.epochs.len(),
                log.final_loss().unwrap_or(f64::NAN),
                log.total_seconds,
                checkpoint_path(&cfg).display()
            );
            Ok(())
        }
        Command::Eval {
            method,
            backbone,
            checkpoint,
        } => {
            apply_head_flags(&mut cfg, method, backbone.as_deref())?;
            cfg.validate()?;
            write_resolved(&cfg)?;
            let ckpt = checkpoint.unwrap_or_else(|| checkpoint_path(&cfg));
            let report = cmd_eval(&cfg, &ckpt)?;
            print!("{}", render_table(&[report], None));
            Ok(())
        }
        Command::Report {
            files,
            include_reference,
            output,
        } => {
            let files = if files.is_empty() { list_reports(&cfg.reports_dir())? } else { files };
            let table = cmd_report(&files, include_reference, output.as_deref())?;
            print!("{table}");
            Ok(())
        }
    }
}

/// Splits the configured annotations and writes the pinned split file.
pub fn cmd_split(cfg: &ExperimentConfig) -> Result<(PathBuf, DatasetSplit)> {
    let pairs = match &cfg.data.images {
        Some(images) => load_annotations_with_images(cfg.annotations()?, images)?,
        None => load_annotations(cfg.annotations()?)?,
    };
    let split = split_by_image(&pairs, cfg.split.test_image_fraction, cfg.seed)?;
    let path = cfg.split_path();
    SplitFile::from_split(&split).write(&path)?;
    Ok((path, split))
}

fn print_split(path: &Path, split: &DatasetSplit) {
    println!(
        "split seed {}: {} train / {} test images, {} / {} questions -> {}",
        split.seed,
        split.image_ids_train.len(),
        split.image_ids_test.len(),
        split.train.len(),
        split.test.len(),
        path.display()
    );
    for (side, pairs) in [("train", &split.train), ("test", &split.test)] {
        let hist: Vec<String> = type_histogram(pairs)
            .iter()
            .map(|(t, n)| format!("{}={n}", t.key()))
            .collect();
        println!("  {side}: {}", hist.join(" "));
    }
}

/// Encodes every image (or question) in the annotations into
/// `features/<encoder>/`.
pub fn cmd_extract(
    cfg: &ExperimentConfig,
    modality: Modality,
    provider: &dyn EncoderProvider,
) -> Result<(FeatureStore, CacheOutcome)> {
    let pairs = load_annotations(cfg.annotations()?)?;
    let batch = cfg.encoders.batch_size;
    let (name, extraction) = match modality {
        Modality::Text => {
            let name = &cfg.encoders.text;
            let encoder = provider.text_encoder(name)?;
            log::info!("{name}: weights {}", encoder.weights_checksum()?);
            (name, extract_text(encoder.as_ref(), &pairs, &cfg.features_dir(name), batch)?)
        }
        Modality::Image => {
            let name = &cfg.encoders.image;
            let dir = cfg.images()?;
            if !dir.is_dir() {
                return Err(Error::Io {
                    path: dir.to_path_buf(),
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "image directory not found"),
                });
            }
            let mut items: Vec<(String, PathBuf)> = Vec::new();
            let mut seen = std::collections::HashSet::new();
            for p in &pairs {
                if seen.insert(p.image_id.clone()) {
                    let path = resolve_image(dir, &p.image_id).ok_or_else(|| Error::Annotation {
                        question_id: p.question_id.clone(),
                        message: format!("image {} not found in {}", p.image_id, dir.display()),
                    })?;
                    items.push((p.image_id.clone(), path));
                }
            }
            let encoder = provider.image_encoder(name)?;
            log::info!("{name}: weights {}", encoder.weights_checksum()?);
            (name, extract_images(encoder.as_ref(), &items, &cfg.features_dir(name), batch)?)
        }
    };
    let store = FeatureStore::open(&cfg.features_dir(name))?;
    Ok((store, extraction.outcome))
}

fn print_extraction(store: &FeatureStore, outcome: CacheOutcome) {
    match outcome {
        CacheOutcome::Reused => println!("{}: cache valid, {} vectors", store.dir().display(), store.len()),
        CacheOutcome::Written => println!(
            "{}: wrote {} vectors of width {}",
            store.dir().display(),
            store.len(),
            store.output_dim()
        ),
    }
}

fn load_split(cfg: &ExperimentConfig) -> Result<(DatasetSplit, PathBuf)> {
    let path = cfg.split_path();
    if !path.is_file() {
        return Err(Error::Config(format!(
            "split file {} not found; run `floodvqa split` with the same --seed first",
            path.display()
        )));
    }
    let pairs = load_annotations(cfg.annotations()?)?;
    Ok((SplitFile::read(&path)?.apply(&pairs)?, path))
}

fn open_stores(cfg: &ExperimentConfig) -> Result<(FeatureStore, FeatureStore)> {
    let open = |name: &str| {
        let dir = cfg.features_dir(name);
        if !FeatureStore::manifest_exists(&dir) {
            return Err(Error::Store {
                path: dir,
                message: format!("no features for {name}; run `floodvqa extract` first"),
            });
        }
        FeatureStore::open(&dir)
    };
    Ok((open(&cfg.encoders.image)?, open(&cfg.encoders.text)?))
}

pub fn checkpoint_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.checkpoints_dir().join(format!("{}.safetensors", cfg.model_tag()))
}

fn train_log_path(cfg: &ExperimentConfig, tag: &str) -> PathBuf {
    cfg.checkpoints_dir().join(format!("{tag}.train.json"))
}

/// Trains the configured head; writes the checkpoint and its training log.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainLog> {
    let (split, _) = load_split(cfg)?;
    let (image_store, text_store) = open_stores(cfg)?;
    let vocab = LabelVocabulary::canonical();
    let data = build_features(&split.train, &vocab, &image_store, &text_store)?;
    let fusion = cfg.fusion_config(image_store.output_dim(), text_store.output_dim());
    let tag = cfg.model_tag();
    let mut outcome = train(&tag, fusion, cfg.train_config(), &data)?;
    outcome.log.split_seed = Some(split.seed);
    outcome.log.image_features = Some(StoreRef::of(&image_store));
    outcome.log.text_features = Some(StoreRef::of(&text_store));

    let path = checkpoint_path(cfg);
    checkpoint::save(&path, &tag, &outcome.model)?;
    let log_path = train_log_path(cfg, &tag);
    let json = serde_json::to_string_pretty(&outcome.log).expect("train log serializes") + "\n";
    std::fs::write(&log_path, json).map_err(Error::io(&log_path))?;
    log::info!("{tag}: checkpoint {}", path.display());
    Ok(outcome.log)
}

/// Evaluates a checkpoint on the test split; writes `reports/<tag>.json` and
/// `reports/<tag>.misclassified.csv`.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint_file: &Path) -> Result<ReportFile> {
    let ckpt = checkpoint::load(checkpoint_file)?;
    let (split, split_path) = load_split(cfg)?;
    let (image_store, text_store) = open_stores(cfg)?;
    let vocab = LabelVocabulary::canonical();
    let tag = if ckpt.model_tag.is_empty() { cfg.model_tag() } else { ckpt.model_tag.clone() };
    let evaluation = evaluate(&ckpt.model, &tag, &split.test, &vocab, &image_store, &text_store)?;
    let mut report = evaluation.report;
    let log_path = train_log_path(cfg, &tag);
    if let Ok(text) = std::fs::read_to_string(&log_path) {
        if let Ok(log) = serde_json::from_str::<TrainLog>(&text) {
            report.train_seconds = Some(log.total_seconds);
        }
    }

    let reports = cfg.reports_dir();
    std::fs::create_dir_all(&reports).map_err(Error::io(&reports))?;
    let config_ref = cfg.out_dir.join("config.resolved.toml");
    let file = ReportFile::from_report(
        &report,
        Some(config_ref.display().to_string()),
        Some(format!("{} sha256:{}", split_path.display(), file_digest(&split_path)?)),
    );
    file.write(&reports.join(format!("{tag}.json")))?;
    let wrong = write_misclassified(
        &reports.join(format!("{tag}.misclassified.csv")),
        &split.test,
        &evaluation.predictions,
        &vocab,
    )?;
    log::info!("{tag}: {wrong} of {} test questions misclassified", split.test.len());
    Ok(file)
}

fn list_reports(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(Error::io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    files.sort();
    Ok(files)
}

/// Renders the given reports as one table, optionally writing it and a JSON
/// sidecar to `output`.
pub fn cmd_report(files: &[PathBuf], include_reference: bool, output: Option<&Path>) -> Result<String> {
    let mut reports = files.iter().map(|f| ReportFile::read(f)).collect::<Result<Vec<_>>>()?;
    disambiguate_tags(&mut reports);
    let refs = include_reference.then(reference_rows);
    let table = render_table(&reports, refs.as_deref());
    if let Some(out) = output {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(Error::io(parent))?;
        }
        std::fs::write(out, &table).map_err(Error::io(out))?;
        let sidecar = out.with_extension("json");
        let json = serde_json::to_string_pretty(&render_json(&reports, refs.as_deref())).expect("json") + "\n";
        std::fs::write(&sidecar, json).map_err(Error::io(&sidecar))?;
    }
    Ok(table)
}

