//! Command-line front end. Every run writes `manifest.json` into its output
//! directory; `replay` re-executes a manifest.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{canonicalize_sequence, RansacConfig};
use crate::io::{self, CanonicalSequence, PoseFormat};
use crate::rng;
use crate::skeleton::{builtin_skeletons, remap_keypoints, KeypointMap};
use crate::synth::{class_names, generate_dataset_with, generate_motion, generate_motion_corpus, SynthConfig};
use crate::tas::{evaluate_videos, EvalConfig, LabelSchema, LabeledTimeline, Level};
use crate::train::{
    self, embed_sequence, epoch_order, epoch_pairs, finetune_classifier, gradient_suite, pretrain_encoder,
    ClassifierModel, FinetuneConfig, LabeledSequenceDataset, PretrainConfig,
};

#[derive(Debug, Parser)]
#[command(name = "skatepose", version, about = "Pose pretraining and jump-procedure segmentation tools")]
pub struct Cli {
    /// TOML file with optional [preprocess], [synth], [pretrain], [finetune]
    /// and [evaluate] tables. Explicit flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for data-parallel sections; 1 gives bit-identical reruns.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Command {
    /// 3D pose dataset -> canonical JSONL.
    Preprocess(PreprocessArgs),
    /// Synthetic motions, labeled 2D sequences and label files.
    Synth(SynthArgs),
    /// Canonical poses -> encoder checkpoint and loss CSV.
    Pretrain(PretrainArgs),
    /// Encoder checkpoint + 2D sequences -> per-frame embeddings.
    Embed(EmbedArgs),
    /// Labeled 2D sequences -> classifier checkpoint and accuracy CSV.
    Finetune(FinetuneArgs),
    /// Predicted vs ground-truth frame labels -> report JSON.
    Evaluate(EvaluateArgs),
    /// Finite-difference checks of the training losses.
    Gradcheck(GradcheckArgs),
    /// Re-runs a recorded manifest.
    Replay(ReplayArgs),
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Defaults to the file extension (csv or jsonl).
    #[arg(long)]
    pub format: Option<PoseFormat>,
    /// Keypoint map applied before canonicalization.
    #[arg(long)]
    pub keypoint_map: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    /// TOML with the synth settings; replaces the [synth] table of --config.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub n_per_class: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub pool_motions: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct PretrainArgs {
    /// Canonical JSONL; every frame is one training pose.
    #[arg(long)]
    pub input: PathBuf,
    /// Use a seeded random subset of this many poses.
    #[arg(long)]
    pub poses: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Also write the first epoch's contrastive pairs to pairs.jsonl.
    #[arg(long)]
    #[serde(default)]
    pub export_pairs: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct EmbedArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Labeled-sequence JSONL.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub train: PathBuf,
    /// Held-out labeled sequences, scored every logged epoch.
    #[arg(long)]
    pub eval: Option<PathBuf>,
    /// One class name per line.
    #[arg(long)]
    pub class_names: Option<PathBuf>,
    /// Pretrained encoder checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Ignore --checkpoint and start from a random encoder.
    #[arg(long)]
    #[serde(default)]
    pub scratch: bool,
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    #[serde(default)]
    pub freeze_encoder: bool,
    #[arg(long)]
    #[serde(default)]
    pub scale_epochs: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    /// Frame-label file or a directory of them.
    #[arg(long)]
    pub pred: PathBuf,
    /// Frame-label file or a directory with the same file names as --pred.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, default_value = "element")]
    pub level: Level,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Write outputs here instead of the recorded directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Optional per-command tables of the `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    preprocess: Option<RansacConfig>,
    synth: Option<SynthConfig>,
    pretrain: Option<PretrainConfig>,
    finetune: Option<FinetuneConfig>,
    evaluate: Option<EvalConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub argv: Vec<String>,
    pub args: Command,
    /// Fully resolved settings of the command.
    pub config: serde_json::Value,
    pub seed: u64,
    pub threads: Option<usize>,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub duration_secs: f64,
}

pub const MANIFEST_NAME: &str = "manifest.json";

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn artifacts(paths: &[PathBuf]) -> Result<Vec<Artifact>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|e| e.file_name().is_some_and(|n| n != MANIFEST_NAME))
                .collect();
            entries.sort();
            out.extend(artifacts(&entries)?);
        } else {
            out.push(Artifact {
                path: p.clone(),
                sha256: sha256_file(p)?,
            });
        }
    }
    Ok(out)
}

fn to_json<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    serde_json::to_value(v).map_err(|e| Error::Config(e.to_string()))
}

fn from_json<T: for<'de> Deserialize<'de>>(v: &serde_json::Value) -> Result<T> {
    serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("manifest config: {e}")))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Config of the command from defaults, the config file and flags, in that
/// order, with `seed` applied.
fn resolve(cmd: &Command, file: &FileConfig, seed: u64) -> Result<serde_json::Value> {
    match cmd {
        Command::Preprocess(_) => {
            let mut c = file.preprocess.clone().unwrap_or_default();
            c.seed = seed;
            to_json(&c)
        }
        Command::Synth(a) => {
            let mut c = match &a.spec {
                Some(p) => read_toml::<SynthConfig>(p)?,
                None => file.synth.clone().unwrap_or_default(),
            };
            if let Some(n) = a.n_per_class {
                c.dataset.n_per_class = n;
            }
            if let Some(n) = a.classes {
                c.dataset.classes = n;
            }
            if let Some(n) = a.pool_motions {
                c.pool_motions = n;
            }
            c.seed = seed;
            c.dataset.seed = seed;
            to_json(&c)
        }
        Command::Pretrain(a) => {
            let mut c = file.pretrain.clone().unwrap_or_default();
            if let Some(e) = a.epochs {
                c.epochs = e;
            }
            if let Some(b) = a.batch_size {
                c.batch_size = b;
            }
            if let Some(lr) = a.lr {
                c.optimizer.lr = lr;
            }
            c.seed = seed;
            c.augment.seed = seed;
            to_json(&c)
        }
        Command::Finetune(a) => {
            let mut c = file.finetune.clone().unwrap_or_default();
            if let Some(f) = a.fraction {
                c.fraction = f;
            }
            if let Some(e) = a.epochs {
                c.epochs = e;
            }
            if let Some(lr) = a.lr {
                c.lr = lr;
            }
            c.freeze_encoder |= a.freeze_encoder;
            c.scale_epochs |= a.scale_epochs;
            c.seed = seed;
            to_json(&c)
        }
        Command::Evaluate(_) => to_json(&file.evaluate.clone().unwrap_or_default()),
        Command::Embed(_) | Command::Gradcheck(_) => Ok(serde_json::Value::Null),
        Command::Replay(_) => Err(Error::State("replay has no config of its own".into())),
    }
}

fn out_dir(cmd: &Command) -> Option<&Path> {
    match cmd {
        Command::Preprocess(a) => Some(&a.out_dir),
        Command::Synth(a) => Some(&a.out_dir),
        Command::Pretrain(a) => Some(&a.out_dir),
        Command::Embed(a) => Some(&a.out_dir),
        Command::Finetune(a) => Some(&a.out_dir),
        Command::Evaluate(a) => Some(&a.out_dir),
        Command::Gradcheck(a) => Some(&a.out_dir),
        Command::Replay(_) => None,
    }
}

fn set_out_dir(cmd: &mut Command, dir: PathBuf) {
    match cmd {
        Command::Preprocess(a) => a.out_dir = dir,
        Command::Synth(a) => a.out_dir = dir,
        Command::Pretrain(a) => a.out_dir = dir,
        Command::Embed(a) => a.out_dir = dir,
        Command::Finetune(a) => a.out_dir = dir,
        Command::Evaluate(a) => a.out_dir = dir,
        Command::Gradcheck(a) => a.out_dir = dir,
        Command::Replay(_) => {}
    }
}

fn input_paths(cmd: &Command) -> Vec<PathBuf> {
    let mut v: Vec<Option<&PathBuf>> = match cmd {
        Command::Preprocess(a) => vec![Some(&a.input), a.keypoint_map.as_ref()],
        Command::Synth(a) => vec![a.spec.as_ref()],
        Command::Pretrain(a) => vec![Some(&a.input)],
        Command::Embed(a) => vec![Some(&a.checkpoint), Some(&a.input)],
        Command::Finetune(a) => vec![
            Some(&a.train),
            a.eval.as_ref(),
            a.class_names.as_ref(),
            if a.scratch { None } else { a.checkpoint.as_ref() },
        ],
        Command::Evaluate(a) => vec![Some(&a.pred), Some(&a.gt)],
        Command::Gradcheck(_) | Command::Replay(_) => vec![],
    };
    v.retain(Option::is_some);
    v.into_iter().flatten().cloned().collect()
}

/// Runs a command with an already resolved config and returns the files it
/// wrote.
fn execute(cmd: &Command, config: &serde_json::Value, seed: u64) -> Result<Vec<PathBuf>> {
    let dir = out_dir(cmd).ok_or_else(|| Error::State("command has no output directory".into()))?;
    create_dir(dir)?;
    match cmd {
        Command::Preprocess(a) => preprocess(a, &from_json(config)?, dir),
        Command::Synth(a) => synth(a, &from_json(config)?, dir),
        Command::Pretrain(a) => pretrain(a, &from_json(config)?, dir),
        Command::Embed(a) => embed(a, dir),
        Command::Finetune(a) => finetune(a, &from_json(config)?, dir),
        Command::Evaluate(a) => evaluate(a, &from_json(config)?, dir),
        Command::Gradcheck(_) => gradcheck(seed, dir),
        Command::Replay(_) => Err(Error::State("nested replay".into())),
    }
}

fn preprocess(a: &PreprocessArgs, cfg: &RansacConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let format = a.format.unwrap_or_else(|| PoseFormat::from_path(&a.input));
    let mut seqs = io::load_pose_dataset(&a.input, format)?;
    if let Some(p) = &a.keypoint_map {
        let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let map = KeypointMap::parse(&text, &builtin_skeletons())?;
        seqs = seqs.iter().map(|s| remap_keypoints(s, &map)).collect::<Result<_>>()?;
    }
    let canon = seqs
        .iter()
        .map(|s| Ok(CanonicalSequence::from_sequence(s, canonicalize_sequence(s, cfg)?)))
        .collect::<Result<Vec<_>>>()?;
    let out = dir.join("canonical.jsonl");
    io::save_canonical(&out, &canon)?;
    log::info!("preprocessed {} sequences", canon.len());
    Ok(vec![out])
}

fn synth(_a: &SynthArgs, cfg: &SynthConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let ds = generate_dataset_with(&cfg.dataset)?;
    let train_path = dir.join("train.jsonl");
    let test_path = dir.join("test.jsonl");
    ds.train.write_jsonl(&train_path)?;
    ds.test.write_jsonl(&test_path)?;
    let classes_path = dir.join("classes.txt");
    let names = class_names(cfg.dataset.classes);
    fs::write(&classes_path, names.join("\n") + "\n").map_err(|e| Error::io(&classes_path, e))?;

    let d = &cfg.dataset;
    let mut motions = generate_motion_corpus(cfg.pool_motions, cfg.pool_classes, d.frames, d.noise, cfg.seed)?;
    for (i, spec) in cfg.motions.iter().enumerate() {
        let mut m = generate_motion(spec)?;
        m.sequence.trial = format!("motion-{i:03}");
        motions.push(m);
    }
    let motions_path = dir.join("motions.jsonl");
    let seqs: Vec<_> = motions.iter().map(|m| m.sequence.clone()).collect();
    io::save_pose_dataset(&motions_path, &seqs, PoseFormat::Jsonl)?;

    let labels_dir = dir.join("labels");
    create_dir(&labels_dir)?;
    let schema = LabelSchema::new(Level::Element);
    let mut timelines = Vec::with_capacity(motions.len());
    let mut out = vec![train_path, test_path, classes_path, motions_path];
    for m in &motions {
        let t = LabeledTimeline::new(m.sequence.trial.clone(), m.labels.clone(), &schema)?;
        let p = labels_dir.join(format!("{}.txt", t.video_id));
        t.write(&p)?;
        out.push(p);
        timelines.push(t);
    }
    let seg = dir.join("segments.csv");
    crate::tas::schema::write_segment_csv(&seg, &timelines)?;
    out.push(seg);
    log::info!(
        "synthesized {} train / {} test sequences and {} motions",
        ds.train.len(),
        ds.test.len(),
        motions.len()
    );
    Ok(out)
}

#[derive(Serialize)]
struct PretrainMetrics {
    poses: usize,
    steps: usize,
    epoch_mean_loss: Vec<f64>,
    probe: Vec<f64>,
}

fn pretrain(a: &PretrainArgs, cfg: &PretrainConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let seqs = io::load_canonical(&a.input)?;
    let mut poses: Vec<_> = seqs.into_iter().flat_map(|s| s.poses).collect();
    if let Some(n) = a.poses {
        if n < poses.len() {
            let mut r = rng::derived(cfg.seed, &[20]);
            let mut idx = rand::seq::index::sample(&mut r, poses.len(), n).into_vec();
            idx.sort_unstable();
            poses = idx.into_iter().map(|i| poses[i].clone()).collect();
        }
    }
    let mut out = Vec::new();
    if a.export_pairs {
        let pairs = epoch_pairs(&poses, &epoch_order(poses.len(), cfg, 0), cfg, 0)?;
        let p = dir.join("pairs.jsonl");
        io::save_pairs(&p, &pairs)?;
        out.push(p);
    }
    let result = pretrain_encoder(&poses, cfg)?;
    let ckpt = dir.join("encoder.ckpt");
    train::save_encoder(&ckpt, &result.encoder)?;
    let loss = dir.join("loss.csv");
    result.write_loss_csv(&loss)?;
    let metrics = dir.join("metrics.json");
    write_json(
        &metrics,
        &PretrainMetrics {
            poses: poses.len(),
            steps: result.history.len(),
            epoch_mean_loss: result.epoch_means(),
            probe: result.probe.clone(),
        },
    )?;
    out.extend([ckpt, loss, metrics]);
    Ok(out)
}

fn embed(a: &EmbedArgs, dir: &Path) -> Result<Vec<PathBuf>> {
    let encoder = train::load_encoder(&a.checkpoint)?;
    let data = LabeledSequenceDataset::read_jsonl(&a.input, None)?;
    let rows = data
        .items
        .iter()
        .map(|s| Ok((Some(s.label), embed_sequence(&encoder, &s.frames)?)))
        .collect::<Result<Vec<_>>>()?;
    let out = dir.join("embeddings.jsonl");
    io::save_embeddings(&out, &rows, encoder.d_pose)?;
    Ok(vec![out])
}

#[derive(Serialize)]
struct FinetuneMetrics {
    pretrained: bool,
    items_used: usize,
    epochs_run: usize,
    train_accuracy: Option<f64>,
    eval_accuracy: Option<f64>,
}

fn finetune(a: &FinetuneArgs, cfg: &FinetuneConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let names = match &a.class_names {
        Some(p) => Some(
            fs::read_to_string(p)
                .map_err(|e| Error::io(p, e))?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect(),
        ),
        None => None,
    };
    let data = LabeledSequenceDataset::read_jsonl(&a.train, names.clone())?;
    let eval = match &a.eval {
        Some(p) => Some(LabeledSequenceDataset::read_jsonl(p, Some(data.class_names.clone()))?),
        None => None,
    };
    let pretrained = match (&a.checkpoint, a.scratch) {
        (Some(p), false) => Some(train::load_encoder(p)?),
        _ => None,
    };
    let result = finetune_classifier(pretrained.as_ref(), &data, eval.as_ref(), cfg)?;
    let model = ClassifierModel {
        encoder: result.encoder.clone(),
        classifier: result.classifier.clone(),
        features: cfg.features,
        class_names: data.class_names.clone(),
    };
    let ckpt = dir.join("classifier.ckpt");
    model.save(&ckpt)?;
    let acc = dir.join("accuracy.csv");
    result.write_accuracy_csv(&acc)?;
    let last = result.history.last();
    let metrics = dir.join("metrics.json");
    write_json(
        &metrics,
        &FinetuneMetrics {
            pretrained: pretrained.is_some(),
            items_used: result.subset.len(),
            epochs_run: result.epochs_run,
            train_accuracy: last.map(|h| h.train_accuracy),
            eval_accuracy: last.and_then(|h| h.eval_accuracy),
        },
    )?;
    Ok(vec![ckpt, acc, metrics])
}

fn label_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        v.sort();
        Ok(v)
    } else {
        Ok(vec![path.to_path_buf()])
    }
}

fn evaluate(a: &EvaluateArgs, cfg: &EvalConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let schema = LabelSchema::new(a.level);
    let preds = label_files(&a.pred)?;
    let mut pairs = Vec::with_capacity(preds.len());
    for p in &preds {
        let g = if a.gt.is_dir() {
            a.gt.join(p.file_name().unwrap_or_default())
        } else {
            a.gt.clone()
        };
        if !g.is_file() {
            return Err(Error::Validation(format!("no ground truth for {}", p.display())));
        }
        pairs.push((LabeledTimeline::read(p, &schema)?, LabeledTimeline::read(&g, &schema)?));
    }
    let report = evaluate_videos(&pairs, cfg)?;
    print!("{}", report.to_table());
    let out = dir.join("report.json");
    write_json(&out, &report)?;
    Ok(vec![out])
}

fn gradcheck(seed: u64, dir: &Path) -> Result<Vec<PathBuf>> {
    let cases = gradient_suite(seed)?;
    let out = dir.join("gradcheck.json");
    write_json(&out, &cases)?;
    let mut failed = Vec::new();
    for c in &cases {
        println!(
            "{:<40} checked {:>5}  max rel err {:.3e}  {}",
            c.name,
            c.report.checked,
            c.report.max_relative_error,
            if c.report.passed() { "ok" } else { "FAILED" }
        );
        if !c.report.passed() {
            failed.push(c.name.clone());
        }
    }
    if !failed.is_empty() {
        return Err(Error::Validation(format!("gradient check failed: {}", failed.join(", "))));
    }
    Ok(vec![out])
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            pool.install(f)
        }
        None => f(),
    }
}

fn run_manifest(
    argv: Vec<String>,
    args: Command,
    config: serde_json::Value,
    seed: u64,
    threads: Option<usize>,
) -> Result<RunManifest> {
    let dir = out_dir(&args)
        .ok_or_else(|| Error::State("command has no output directory".into()))?
        .to_path_buf();
    let inputs = artifacts(&input_paths(&args))?;
    let start = Instant::now();
    let written = with_threads(threads, || execute(&args, &config, seed))?;
    let duration_secs = start.elapsed().as_secs_f64();
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        argv,
        args,
        config,
        seed,
        threads,
        inputs,
        outputs: artifacts(&written)?,
        duration_secs,
    };
    write_json(&dir.join(MANIFEST_NAME), &manifest)?;
    Ok(manifest)
}

/// Parses and runs one invocation. Usage errors are returned by clap.
pub fn run_cli(cli: Cli, argv: Vec<String>) -> Result<RunManifest> {
    if let Command::Replay(r) = &cli.command {
        let text = fs::read_to_string(&r.manifest).map_err(|e| Error::io(&r.manifest, e))?;
        let m: RunManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: r.manifest.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let mut args = m.args;
        if let Some(d) = &r.out_dir {
            set_out_dir(&mut args, d.clone());
        }
        let threads = cli.threads.or(m.threads);
        return run_manifest(argv, args, m.config, m.seed, threads);
    }
    let file = match &cli.config {
        Some(p) => read_toml::<FileConfig>(p)?,
        None => FileConfig::default(),
    };
    let seed = cli.seed.unwrap_or(0);
    let config = resolve(&cli.command, &file, seed)?;
    run_manifest(argv, cli.command, config, seed, cli.threads)
}

/// Entry point: 0 on success, 2 on usage errors, 1 on any other failure.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let argv: Vec<String> = argv.iter().map(|s| s.to_string_lossy().into_owned()).collect();
    match run_cli(cli, argv) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            1
        }
    }
}
