//! Contrastive pre-training of the pose encoder, classification fine-tuning
//! of encoder + BiGRU head, and the label-fraction ablation.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{make_contrastive_pair, ContrastivePair, render_view, sample_virtual_camera, AugmentConfig, Pose2D};
use crate::error::{Error, Result};
use crate::geometry::CanonicalPose;
use crate::losses::{total_loss_graph, LossConfig, LossTerms, PairBatch};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::gradcheck::{grad_check, grad_check_params, GradCheckReport};
use crate::nn::layers::{ClassifierConfig, ClassifierParams, EncoderConfig, EncoderParams, Parameters};
use crate::nn::optim::{Adam, AdamConfig};
use crate::nn::{Graph, Tensor, Var};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub loss: LossConfig,
    pub augment: AugmentConfig,
    pub hidden: Vec<usize>,
    pub d_pose: usize,
    pub d_view: usize,
    /// Poses used for the per-epoch view-invariance probe (0 disables it).
    pub probe_poses: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 30,
            batch_size: 64,
            optimizer: AdamConfig::default(),
            loss: LossConfig::default(),
            augment: AugmentConfig::default(),
            hidden: vec![256, 256],
            d_pose: 32,
            d_view: 8,
            probe_poses: 64,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch size must be >= 2, got {}", self.batch_size)));
        }
        if !(self.optimizer.lr >= 0.0) {
            return Err(Error::Config("learning rate must be >= 0".into()));
        }
        if self.d_pose == 0 || self.d_view == 0 {
            return Err(Error::Config("d_pose and d_view must be >= 1".into()));
        }
        self.loss.validate()?;
        self.augment.validate()
    }

    pub fn encoder_config(&self, num_joints: usize) -> EncoderConfig {
        EncoderConfig {
            input_dim: 2 * num_joints,
            hidden: self.hidden.clone(),
            d_pose: self.d_pose,
            d_view: self.d_view,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub terms: LossTerms,
}

#[derive(Clone, Debug)]
pub struct PretrainResult {
    pub encoder: EncoderParams,
    pub history: Vec<StepRecord>,
    /// View-invariance probe after each epoch.
    pub probe: Vec<f64>,
}

impl PretrainResult {
    /// Mean total loss per epoch.
    pub fn epoch_means(&self) -> Vec<f64> {
        let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for r in &self.history {
            let e = sums.entry(r.epoch).or_default();
            e.0 += r.terms.total;
            e.1 += 1;
        }
        sums.values().map(|(s, n)| s / *n as f64).collect()
    }

    pub fn write_loss_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["step", "epoch", "L_pose", "L_view", "L_var", "L_klu", "L_total"])
            .map_err(|e| csv_err(path, e))?;
        for r in &self.history {
            let t = &r.terms;
            w.write_record([
                r.step.to_string(),
                r.epoch.to_string(),
                t.pose.to_string(),
                t.view.to_string(),
                t.var.to_string(),
                t.klu.to_string(),
                t.total.to_string(),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}

fn pose_batch(poses: &[&Pose2D]) -> Result<Tensor> {
    let width = poses.first().map_or(0, |p| 2 * p.num_joints());
    let mut data = Vec::with_capacity(poses.len() * width);
    for p in poses {
        if 2 * p.num_joints() != width {
            return Err(Error::Shape("poses in one batch differ in joint count".into()));
        }
        data.extend(p.flatten());
    }
    Tensor::from_vec(poses.len(), width, data)
}

fn directions(v: &[[f64; 3]]) -> Result<Tensor> {
    Tensor::from_vec(v.len(), 3, v.iter().flatten().copied().collect())
}

/// The contrastive pairs of one epoch, in `order`.
pub fn epoch_pairs(
    poses: &[CanonicalPose],
    order: &[usize],
    cfg: &PretrainConfig,
    epoch: usize,
) -> Result<Vec<ContrastivePair>> {
    order
        .par_iter()
        .map(|&i| {
            let mut r = rng::derived(cfg.seed, &[2, epoch as u64, i as u64]);
            make_contrastive_pair(&poses[i], &cfg.augment, &mut r)
        })
        .collect()
}

/// The shuffled pose order of one epoch.
pub fn epoch_order(count: usize, cfg: &PretrainConfig, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut rng::derived(cfg.seed, &[1, epoch as u64]));
    order
}

/// Trains the encoder on contrastive pairs synthesized from `poses`.
/// Pair synthesis uses one RNG stream per (epoch, pose), so the result does
/// not depend on the thread count.
pub fn pretrain_encoder(poses: &[CanonicalPose], cfg: &PretrainConfig) -> Result<PretrainResult> {
    cfg.validate()?;
    if poses.len() < cfg.batch_size {
        return Err(Error::InsufficientData(format!(
            "{} poses for batch size {}",
            poses.len(),
            cfg.batch_size
        )));
    }
    let joints = poses[0].coords.len();
    if poses.iter().any(|p| p.coords.len() != joints) {
        return Err(Error::Shape("poses differ in joint count".into()));
    }
    let mut encoder = EncoderParams::init(&cfg.encoder_config(joints), rng::derive_seed(cfg.seed, &[0]))?;
    let mut opt = Adam::new(cfg.optimizer.clone())?;
    let probe_set = &poses[..cfg.probe_poses.min(poses.len())];
    let mut history = Vec::new();
    let mut probe = Vec::new();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let order = epoch_order(poses.len(), cfg, epoch);
        let pairs = epoch_pairs(poses, &order, cfg, epoch)?;
        for chunk in pairs.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let a = pose_batch(&chunk.iter().map(|p| &p.anchor).collect::<Vec<_>>())?;
            let b = pose_batch(&chunk.iter().map(|p| &p.positive).collect::<Vec<_>>())?;
            let va = directions(&chunk.iter().map(|p| p.v_anchor).collect::<Vec<_>>())?;
            let vb = directions(&chunk.iter().map(|p| p.v_positive).collect::<Vec<_>>())?;

            let mut g = Graph::new();
            let enc = encoder.bind(&mut g);
            let xa = g.constant(a);
            let xb = g.constant(b);
            let z = enc.forward(&mut g, xa)?;
            let z_prime = enc.forward(&mut g, xb)?;
            let batch = PairBatch {
                z,
                z_prime,
                v: &va,
                v_prime: &vb,
                d_pose: cfg.d_pose,
            };
            let (loss, terms) = total_loss_graph(&mut g, &batch, &cfg.loss)?;
            if !terms.total.is_finite() {
                return Err(Error::Divergence { step, loss: terms.total });
            }
            let grads = g.backward(loss)?;
            let vars = enc.vars();
            let gs: Vec<Tensor> = vars.iter().map(|&v| grads.get_or_zeros(v, g.shape(v))).collect();
            opt.step(&mut encoder.tensors_mut(), &gs)?;
            history.push(StepRecord { epoch, step, terms });
            step += 1;
        }
        if !probe_set.is_empty() {
            let p = view_invariance_probe(&encoder, probe_set, rng::derive_seed(cfg.seed, &[3]))?;
            log::info!("epoch {epoch}: probe {p:.4}");
            probe.push(p);
        }
    }
    Ok(PretrainResult {
        encoder,
        history,
        probe,
    })
}

/// Per-frame embeddings of one sequence: T x d.
pub fn embed_sequence(params: &EncoderParams, seq: &[Pose2D]) -> Result<Tensor> {
    if seq.is_empty() {
        return Err(Error::Shape("empty sequence".into()));
    }
    let batch = pose_batch(&seq.iter().collect::<Vec<_>>())?;
    if batch.cols() != params.input_dim() {
        return Err(Error::Shape(format!(
            "encoder expects {} inputs per frame, sequence has {}",
            params.input_dim(),
            batch.cols()
        )));
    }
    crate::nn::layers::encoder_forward(params, &batch)
}

fn unit_rows(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    let c = t.cols();
    for r in 0..t.rows() {
        let n = t.row(r).iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        for j in 0..c {
            out.set(r, j, t.get(r, j) / n);
        }
    }
    out
}

/// Unit-normalized `z_pose` of each pose under two independent random
/// cameras, without jitter or masking.
pub fn two_view_embeddings(encoder: &EncoderParams, poses: &[CanonicalPose], seed: u64) -> Result<(Tensor, Tensor)> {
    let clean = AugmentConfig::clean();
    let mut views = [Vec::with_capacity(poses.len()), Vec::with_capacity(poses.len())];
    for (i, p) in poses.iter().enumerate() {
        let mut r = rng::derived(seed, &[i as u64]);
        for v in &mut views {
            let cam = sample_virtual_camera(&mut r);
            v.push(render_view(p, &cam, &clean, &mut r)?);
        }
    }
    let embed = |v: &[Pose2D]| -> Result<Tensor> {
        let z = crate::nn::layers::encoder_forward(encoder, &pose_batch(&v.iter().collect::<Vec<_>>())?)?;
        Ok(unit_rows(&z.slice_cols(0, encoder.d_pose)))
    };
    Ok((embed(&views[0])?, embed(&views[1])?))
}

/// Mean cosine of `z_pose` between two views of the same pose minus the mean
/// cosine between views of different poses.
pub fn view_invariance_probe(encoder: &EncoderParams, poses: &[CanonicalPose], seed: u64) -> Result<f64> {
    let (a, b) = two_view_embeddings(encoder, poses, seed)?;
    Ok(probe_from_views(&a, &b))
}

fn probe_from_views(a: &Tensor, b: &Tensor) -> f64 {
    let n = a.rows();
    let sim = a.matmul_nt(b);
    let same: f64 = (0..n).map(|i| sim.get(i, i)).sum::<f64>() / n as f64;
    if n < 2 {
        return same;
    }
    let diff = (sim.sum() - same * n as f64) / (n * (n - 1)) as f64;
    same - diff
}

/// Fraction of poses whose first view retrieves its own second view as the
/// top-1 cosine neighbour among all second views.
pub fn cross_view_retrieval(encoder: &EncoderParams, poses: &[CanonicalPose], seed: u64) -> Result<f64> {
    let (a, b) = two_view_embeddings(encoder, poses, seed)?;
    Ok(retrieval_from_views(&a, &b))
}

fn retrieval_from_views(a: &Tensor, b: &Tensor) -> f64 {
    let sim = a.matmul_nt(b);
    let hits = (0..sim.rows())
        .filter(|&i| {
            let row = sim.row(i);
            let best = (0..row.len()).fold(0, |k, j| if row[j] > row[k] { j } else { k });
            best == i
        })
        .count();
    hits as f64 / sim.rows() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewInvarianceReport {
    pub retrieval_top1: f64,
    pub probe: f64,
    pub poses: usize,
}

/// Retrieval and probe computed from the same pair of views.
pub fn view_invariance_report(
    encoder: &EncoderParams,
    poses: &[CanonicalPose],
    seed: u64,
) -> Result<ViewInvarianceReport> {
    if poses.is_empty() {
        return Err(Error::InsufficientData("no poses to evaluate".into()));
    }
    let (a, b) = two_view_embeddings(encoder, poses, seed)?;
    Ok(ViewInvarianceReport {
        retrieval_top1: retrieval_from_views(&a, &b),
        probe: probe_from_views(&a, &b),
        poses: poses.len(),
    })
}

/// One labeled 2D sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSequence {
    pub label: usize,
    pub frames: Vec<Pose2D>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabeledSequenceDataset {
    pub items: Vec<LabeledSequence>,
    pub class_names: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct SequenceLine {
    label: usize,
    frames: Vec<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    masks: Option<Vec<Vec<bool>>>,
}

impl LabeledSequenceDataset {
    pub fn new(class_names: Vec<String>) -> Self {
        LabeledSequenceDataset {
            items: Vec::new(),
            class_names,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn num_joints(&self) -> Option<usize> {
        self.items.first().and_then(|s| s.frames.first()).map(Pose2D::num_joints)
    }

    pub fn validate(&self) -> Result<()> {
        let joints = self.num_joints();
        for (i, s) in self.items.iter().enumerate() {
            if s.label >= self.class_names.len() {
                return Err(Error::Validation(format!(
                    "item {i}: label {} outside [0, {})",
                    s.label,
                    self.class_names.len()
                )));
            }
            if s.frames.is_empty() {
                return Err(Error::Validation(format!("item {i}: empty sequence")));
            }
            if s.frames.iter().any(|f| Some(f.num_joints()) != joints) {
                return Err(Error::Shape(format!("item {i}: inconsistent joint count")));
            }
        }
        Ok(())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for s in &self.items {
            if s.label < counts.len() {
                counts[s.label] += 1;
            }
        }
        counts
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        LabeledSequenceDataset {
            items: idx.iter().map(|&i| self.items[i].clone()).collect(),
            class_names: self.class_names.clone(),
        }
    }

    /// One JSON object per line: `{"label": c, "frames": T x N x 2}`. The
    /// class count is the largest label + 1 unless `class_names` is given.
    pub fn read_jsonl(path: &Path, class_names: Option<Vec<String>>) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut items = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parse = |message: String| Error::Parse {
                path: path.display().to_string(),
                line: n + 1,
                message,
            };
            let rec: SequenceLine = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
            let masks = rec.masks.unwrap_or_default();
            let frames = rec
                .frames
                .into_iter()
                .enumerate()
                .map(|(t, coords)| {
                    let mask = masks.get(t).cloned().unwrap_or_else(|| vec![false; coords.len()]);
                    if mask.len() != coords.len() {
                        return Err(parse(format!("frame {t}: mask length differs from joint count")));
                    }
                    Ok(Pose2D { coords, mask })
                })
                .collect::<Result<Vec<_>>>()?;
            items.push(LabeledSequence { label: rec.label, frames });
        }
        let names = class_names.unwrap_or_else(|| {
            let c = items.iter().map(|s| s.label + 1).max().unwrap_or(0);
            (0..c).map(|i| format!("class{i}")).collect()
        });
        let ds = LabeledSequenceDataset { items, class_names: names };
        ds.validate()?;
        Ok(ds)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        for s in &self.items {
            let any_mask = s.frames.iter().any(|f| f.mask.iter().any(|&m| m));
            let rec = SequenceLine {
                label: s.label,
                frames: s.frames.iter().map(|f| f.coords.clone()).collect(),
                masks: any_mask.then(|| s.frames.iter().map(|f| f.mask.clone()).collect()),
            };
            let line = serde_json::to_string(&rec).map_err(|e| Error::io(path, e.into()))?;
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

/// Which part of the encoder output feeds the GRU.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Features {
    /// The whole embedding `z = (z_pose, z_view)`.
    #[default]
    Full,
    PoseOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub dropout: [f64; 2],
    /// Share of labeled items used, in (0, 1].
    pub fraction: f64,
    pub freeze_encoder: bool,
    pub features: Features,
    pub gru_hidden: usize,
    pub gru_layers: usize,
    pub fc_hidden: usize,
    /// Encoder shape when no pretrained encoder is supplied.
    pub hidden: Vec<usize>,
    pub d_pose: usize,
    pub d_view: usize,
    /// Multiply epochs so a reduced fraction still gets about as many
    /// optimizer steps as the full set.
    pub scale_epochs: bool,
    /// Upper bound on the epoch multiplier from `scale_epochs`.
    pub max_epoch_scale: usize,
    /// Accuracy is recorded every this many (scaled) epochs and after the
    /// last one; 0 records only the last.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            epochs: 30,
            batch_size: 16,
            lr: 1e-3,
            dropout: [0.5, 0.5],
            fraction: 1.0,
            freeze_encoder: false,
            features: Features::Full,
            gru_hidden: 128,
            gru_layers: 2,
            fc_hidden: 128,
            hidden: vec![256, 256],
            d_pose: 32,
            d_view: 8,
            scale_epochs: false,
            max_epoch_scale: 100,
            eval_every: 1,
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::Config(format!("label fraction {} outside (0, 1]", self.fraction)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("learning rate must be finite and >= 0".into()));
        }
        if self.dropout.iter().any(|p| !(0.0..1.0).contains(p)) {
            return Err(Error::Config("dropout rates must lie in [0, 1)".into()));
        }
        if self.gru_layers == 0 || self.gru_hidden == 0 || self.fc_hidden == 0 {
            return Err(Error::Config("GRU and FC widths must be >= 1".into()));
        }
        if self.max_epoch_scale == 0 {
            return Err(Error::Config("max_epoch_scale must be >= 1".into()));
        }
        Ok(())
    }

    fn feature_dim(&self, encoder: &EncoderParams) -> usize {
        match self.features {
            Features::Full => encoder.embedding_dim(),
            Features::PoseOnly => encoder.d_pose,
        }
    }
}

/// Nested stratified subsample: each class is shuffled once with a seed that
/// depends only on `seed` and the class, and the first `ceil(fraction·n_c)`
/// items (at least one) are kept. Smaller fractions therefore give subsets of
/// larger ones.
pub fn stratified_subsample(data: &LabeledSequenceDataset, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("label fraction {fraction} outside (0, 1]")));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in data.items.iter().enumerate() {
        by_class.entry(s.label).or_default().push(i);
    }
    let mut out = Vec::new();
    for (c, mut idx) in by_class {
        idx.shuffle(&mut rng::derived(seed, &[100, c as u64]));
        let take = ((fraction * idx.len() as f64 - 1e-9).ceil() as usize).clamp(1, idx.len());
        out.extend_from_slice(&idx[..take]);
    }
    out.sort_unstable();
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    /// Held-out accuracy when an evaluation set was supplied.
    pub eval_accuracy: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct FinetuneResult {
    pub classifier: ClassifierParams,
    pub encoder: EncoderParams,
    pub history: Vec<EpochRecord>,
    /// Training items actually used.
    pub subset: Vec<usize>,
    pub epochs_run: usize,
}

impl FinetuneResult {
    pub fn write_accuracy_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["epoch", "loss", "train_accuracy", "eval_accuracy"])
            .map_err(|e| csv_err(path, e))?;
        for r in &self.history {
            w.write_record([
                r.epoch.to_string(),
                r.loss.to_string(),
                r.train_accuracy.to_string(),
                r.eval_accuracy.map(|a| a.to_string()).unwrap_or_default(),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Stacks same-length sequences time-major: row `t·B + b` is frame `t` of
/// item `b`.
fn time_major(items: &[&LabeledSequence]) -> Result<(Tensor, usize)> {
    let steps = items[0].frames.len();
    let mut rows = Vec::with_capacity(steps * items.len());
    for t in 0..steps {
        for s in items {
            rows.push(&s.frames[t]);
        }
    }
    Ok((pose_batch(&rows)?, steps))
}

fn forward_logits(
    g: &mut Graph,
    encoder: &EncoderParams,
    classifier: &ClassifierParams,
    features: Features,
    items: &[&LabeledSequence],
    dropout_rng: Option<&mut rng::Rng>,
) -> Result<(Var, Vec<Var>, Vec<Var>)> {
    let (x, steps) = time_major(items)?;
    let enc = encoder.bind(g);
    let head = classifier.bind(g);
    let x = g.constant(x);
    let z = enc.forward(g, x)?;
    let f = match features {
        Features::Full => z,
        Features::PoseOnly => enc.split(g, z)?.0,
    };
    let logits = head.forward(g, f, steps, dropout_rng)?;
    Ok((logits, enc.vars(), head.vars()))
}

/// Minibatches of same-length items, in a seeded order.
fn length_batches(items: &[usize], data: &LabeledSequenceDataset, batch: usize, r: &mut rng::Rng) -> Vec<Vec<usize>> {
    let mut by_len: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in items {
        by_len.entry(data.items[i].frames.len()).or_default().push(i);
    }
    let mut out = Vec::new();
    for (_, mut idx) in by_len {
        idx.shuffle(r);
        out.extend(idx.chunks(batch).map(<[usize]>::to_vec));
    }
    out.shuffle(r);
    out
}

/// Predicted class of every item (no dropout).
pub fn predict(
    encoder: &EncoderParams,
    classifier: &ClassifierParams,
    features: Features,
    data: &LabeledSequenceDataset,
) -> Result<Vec<usize>> {
    let mut by_len: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in data.items.iter().enumerate() {
        by_len.entry(s.frames.len()).or_default().push(i);
    }
    let mut out = vec![0; data.items.len()];
    for idx in by_len.values() {
        for chunk in idx.chunks(64) {
            let items: Vec<&LabeledSequence> = chunk.iter().map(|&i| &data.items[i]).collect();
            let mut g = Graph::new();
            let (logits, _, _) = forward_logits(&mut g, encoder, classifier, features, &items, None)?;
            let l = g.value(logits);
            for (b, &i) in chunk.iter().enumerate() {
                let row = l.row(b);
                out[i] = (0..row.len()).fold(0, |k, j| if row[j] > row[k] { j } else { k });
            }
        }
    }
    Ok(out)
}

pub fn accuracy(
    encoder: &EncoderParams,
    classifier: &ClassifierParams,
    features: Features,
    data: &LabeledSequenceDataset,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of an empty dataset".into()));
    }
    let pred = predict(encoder, classifier, features, data)?;
    let hits = pred.iter().zip(&data.items).filter(|(p, s)| **p == s.label).count();
    Ok(hits as f64 / data.len() as f64)
}

/// Epochs after optional scaling for a subset of `used` out of `total` items.
pub fn scaled_epochs(cfg: &FinetuneConfig, used: usize, total: usize) -> usize {
    if !cfg.scale_epochs || used == 0 {
        return cfg.epochs;
    }
    let full = total.div_ceil(cfg.batch_size);
    let sub = used.div_ceil(cfg.batch_size);
    let factor = full.div_ceil(sub).clamp(1, cfg.max_epoch_scale);
    cfg.epochs * factor
}

/// Trains encoder + classifier head on (a stratified fraction of) `data`.
/// Without `pretrained`, the encoder starts from a random initialization.
pub fn finetune_classifier(
    pretrained: Option<&EncoderParams>,
    data: &LabeledSequenceDataset,
    eval: Option<&LabeledSequenceDataset>,
    cfg: &FinetuneConfig,
) -> Result<FinetuneResult> {
    cfg.validate()?;
    data.validate()?;
    if data.is_empty() {
        return Err(Error::InsufficientData("empty labeled dataset".into()));
    }
    let joints = data.num_joints().unwrap_or(0);
    let mut encoder = match pretrained {
        Some(p) => {
            if p.input_dim() != 2 * joints {
                return Err(Error::Shape(format!(
                    "encoder takes {} inputs, dataset frames have {}",
                    p.input_dim(),
                    2 * joints
                )));
            }
            p.clone()
        }
        None => EncoderParams::init(
            &EncoderConfig {
                input_dim: 2 * joints,
                hidden: cfg.hidden.clone(),
                d_pose: cfg.d_pose,
                d_view: cfg.d_view,
            },
            rng::derive_seed(cfg.seed, &[10]),
        )?,
    };
    let classifier_cfg = ClassifierConfig {
        input_dim: cfg.feature_dim(&encoder),
        gru_hidden: cfg.gru_hidden,
        gru_layers: cfg.gru_layers,
        fc_hidden: cfg.fc_hidden,
        num_classes: data.num_classes(),
        dropout: cfg.dropout,
    };
    let mut classifier = ClassifierParams::init(&classifier_cfg, rng::derive_seed(cfg.seed, &[11]))?;

    let subset = stratified_subsample(data, cfg.fraction, cfg.seed)?;
    let present: std::collections::BTreeSet<usize> = subset.iter().map(|&i| data.items[i].label).collect();
    for c in 0..data.num_classes() {
        if !present.contains(&c) {
            log::warn!("class {c} ({}) has no training items", data.class_names[c]);
        }
    }
    let epochs = scaled_epochs(cfg, subset.len(), data.len());
    let mut opt = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    })?;
    let train_view = data.subset(&subset);
    let mut history = Vec::with_capacity(epochs);
    let mut step = 0;
    for epoch in 0..epochs {
        let mut order_rng = rng::derived(cfg.seed, &[13, epoch as u64]);
        let mut drop_rng = rng::derived(cfg.seed, &[12, epoch as u64]);
        let batches = length_batches(&subset, data, cfg.batch_size, &mut order_rng);
        let (mut loss_sum, mut count) = (0.0, 0usize);
        for batch in batches {
            let items: Vec<&LabeledSequence> = batch.iter().map(|&i| &data.items[i]).collect();
            let labels: Vec<usize> = items.iter().map(|s| s.label).collect();
            let mut g = Graph::new();
            let (logits, enc_vars, head_vars) =
                forward_logits(&mut g, &encoder, &classifier, cfg.features, &items, Some(&mut drop_rng))?;
            let loss = g.softmax_cross_entropy(logits, &labels)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Divergence { step, loss: value });
            }
            let grads = g.backward(loss)?;
            let collect = |vars: &[Var]| -> Vec<Tensor> { vars.iter().map(|&v| grads.get_or_zeros(v, g.shape(v))).collect() };
            let head_grads = collect(&head_vars);
            if cfg.freeze_encoder {
                opt.step(&mut classifier.tensors_mut(), &head_grads)?;
            } else {
                let mut gs = collect(&enc_vars);
                gs.extend(head_grads);
                let mut params = encoder.tensors_mut();
                params.extend(classifier.tensors_mut());
                opt.step(&mut params, &gs)?;
            }
            loss_sum += value * items.len() as f64;
            count += items.len();
            step += 1;
        }
        let last = epoch + 1 == epochs;
        let every = cfg.eval_every * (epochs / cfg.epochs.max(1)).max(1);
        let log_epoch = last || (every > 0 && (epoch + 1) % every == 0);
        if log_epoch {
            let train_accuracy = accuracy(&encoder, &classifier, cfg.features, &train_view)?;
            let eval_accuracy = match eval {
                Some(e) if !e.is_empty() => Some(accuracy(&encoder, &classifier, cfg.features, e)?),
                _ => None,
            };
            history.push(EpochRecord {
                epoch,
                loss: loss_sum / count.max(1) as f64,
                train_accuracy,
                eval_accuracy,
            });
        }
    }
    Ok(FinetuneResult {
        classifier,
        encoder,
        history,
        subset,
        epochs_run: epochs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    pub finetune: FinetuneConfig,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            fractions: vec![1.0, 0.5, 0.1, 0.01],
            seeds: vec![0, 1, 2],
            finetune: FinetuneConfig {
                scale_epochs: true,
                eval_every: 0,
                ..FinetuneConfig::default()
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub seed: u64,
    pub fraction: f64,
    pub items: usize,
    pub pretrained_accuracy: f64,
    pub scratch_accuracy: f64,
}

impl AblationRow {
    pub fn gain(&self) -> f64 {
        self.pretrained_accuracy - self.scratch_accuracy
    }
}

/// Held-out accuracy of pretrained-init and scratch-init fine-tuning at every
/// (seed, fraction). Both arms share the subsample and head initialization;
/// the scratch encoder has the same shape as the pretrained one.
pub fn run_ablation(
    pretrained: &EncoderParams,
    train: &LabeledSequenceDataset,
    test: &LabeledSequenceDataset,
    cfg: &AblationConfig,
) -> Result<Vec<AblationRow>> {
    let enc_cfg = pretrained.config();
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        for &fraction in &cfg.fractions {
            let ft = FinetuneConfig {
                fraction,
                seed,
                hidden: enc_cfg.hidden.clone(),
                d_pose: enc_cfg.d_pose,
                d_view: enc_cfg.d_view,
                ..cfg.finetune.clone()
            };
            let pre = finetune_classifier(Some(pretrained), train, None, &ft)?;
            let scratch = finetune_classifier(None, train, None, &ft)?;
            let row = AblationRow {
                seed,
                fraction,
                items: pre.subset.len(),
                pretrained_accuracy: accuracy(&pre.encoder, &pre.classifier, ft.features, test)?,
                scratch_accuracy: accuracy(&scratch.encoder, &scratch.classifier, ft.features, test)?,
            };
            log::info!("{row:?}");
            rows.push(row);
        }
    }
    Ok(rows)
}

const ENCODER_KIND: &str = "encoder";
const CLASSIFIER_KIND: &str = "classifier";

/// Writes the encoder with its shape in the checkpoint header.
pub fn save_encoder(path: &Path, encoder: &EncoderParams) -> Result<()> {
    let meta = serde_json::json!({ "config": encoder.config() });
    Checkpoint::from_params(ENCODER_KIND, encoder, meta).save(path)
}

pub fn load_encoder(path: &Path) -> Result<EncoderParams> {
    let ckpt = Checkpoint::load(path)?;
    let cfg: EncoderConfig = serde_json::from_value(ckpt.meta["config"].clone())
        .map_err(|e| Error::Checkpoint(format!("{}: bad encoder config: {e}", path.display())))?;
    let mut enc = EncoderParams::init(&cfg, 0)?;
    ckpt.restore_into(ENCODER_KIND, &mut enc)?;
    Ok(enc)
}

/// A fine-tuned model: encoder, classifier head and what it was trained on.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierModel {
    pub encoder: EncoderParams,
    pub classifier: ClassifierParams,
    pub features: Features,
    pub class_names: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ClassifierMeta {
    encoder: EncoderConfig,
    classifier: ClassifierConfig,
    features: Features,
    class_names: Vec<String>,
}

/// Encoder and head tensors in one checkpoint.
#[derive(Clone)]
struct ModelTensors<'a>(std::borrow::Cow<'a, EncoderParams>, std::borrow::Cow<'a, ClassifierParams>);

impl Parameters for ModelTensors<'_> {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> =
            self.0.named_tensors().into_iter().map(|(n, t)| (format!("encoder.{n}"), t)).collect();
        out.extend(self.1.named_tensors().into_iter().map(|(n, t)| (format!("head.{n}"), t)));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.0.to_mut().tensors_mut();
        out.extend(self.1.to_mut().tensors_mut());
        out
    }
}

impl ClassifierModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = ClassifierMeta {
            encoder: self.encoder.config(),
            classifier: self.classifier.config(),
            features: self.features,
            class_names: self.class_names.clone(),
        };
        let meta = serde_json::to_value(meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let tensors = ModelTensors(
            std::borrow::Cow::Borrowed(&self.encoder),
            std::borrow::Cow::Borrowed(&self.classifier),
        );
        Checkpoint::from_params(CLASSIFIER_KIND, &tensors, meta).save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt = Checkpoint::load(path)?;
        let meta: ClassifierMeta = serde_json::from_value(ckpt.meta.clone())
            .map_err(|e| Error::Checkpoint(format!("{}: bad classifier header: {e}", path.display())))?;
        let mut tensors = ModelTensors(
            std::borrow::Cow::Owned(EncoderParams::init(&meta.encoder, 0)?),
            std::borrow::Cow::Owned(ClassifierParams::init(&meta.classifier, 0)?),
        );
        ckpt.restore_into(CLASSIFIER_KIND, &mut tensors)?;
        Ok(ClassifierModel {
            encoder: tensors.0.into_owned(),
            classifier: tensors.1.into_owned(),
            features: meta.features,
            class_names: meta.class_names,
        })
    }

    pub fn predict(&self, data: &LabeledSequenceDataset) -> Result<Vec<usize>> {
        predict(&self.encoder, &self.classifier, self.features, data)
    }

    pub fn accuracy(&self, data: &LabeledSequenceDataset) -> Result<f64> {
        accuracy(&self.encoder, &self.classifier, self.features, data)
    }
}

/// One named finite-difference comparison of the gradient suite.
#[derive(Clone, Debug, Serialize)]
pub struct GradientCase {
    pub name: String,
    pub report: GradCheckReport,
}

/// Finite-difference step and relative tolerance of the gradient suite.
pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Central-difference checks of the pretraining loss (w.r.t. embeddings and
/// encoder weights) and of the classification loss (w.r.t. classifier and
/// encoder weights) on B = 8, N = 17, d = 16 instances.
pub fn gradient_suite(seed: u64) -> Result<Vec<GradientCase>> {
    const B: usize = 8;
    const N: usize = 17;
    const D_POSE: usize = 12;
    const D_VIEW: usize = 4;
    let (h, tol) = (GRADCHECK_STEP, GRADCHECK_TOLERANCE);
    let mut r = rng::derived(seed, &[0]);
    let loss_cfg = LossConfig::default();
    let unit_rows = |r: &mut rng::Rng| -> Tensor {
        let mut t = Tensor::random_normal(B, 3, 1.0, r);
        for i in 0..B {
            let n = t.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
            for j in 0..3 {
                t.set(i, j, t.get(i, j) / n);
            }
        }
        t
    };
    let v = unit_rows(&mut r);
    let vp = unit_rows(&mut r);
    let mut cases = Vec::new();

    let z = Tensor::random_normal(B, D_POSE + D_VIEW, 1.0, &mut r);
    let zp = Tensor::random_normal(B, D_POSE + D_VIEW, 1.0, &mut r);
    let report = grad_check(
        |g, x| {
            let batch = PairBatch {
                z: x[0],
                z_prime: x[1],
                v: &v,
                v_prime: &vp,
                d_pose: D_POSE,
            };
            Ok(total_loss_graph(g, &batch, &loss_cfg)?.0)
        },
        &[z, zp],
        h,
        tol,
        None,
    )?;
    cases.push(GradientCase {
        name: "L_total / embeddings".into(),
        report,
    });

    let enc_cfg = EncoderConfig {
        input_dim: 2 * N,
        hidden: vec![24],
        d_pose: D_POSE,
        d_view: D_VIEW,
    };
    let encoder = EncoderParams::init(&enc_cfg, rng::derive_seed(seed, &[1]))?;
    let xa = Tensor::random_normal(B, 2 * N, 0.5, &mut r);
    let xb = Tensor::random_normal(B, 2 * N, 0.5, &mut r);
    let report = grad_check_params(
        &encoder,
        |g, p| {
            let enc = p.bind(g);
            let a = g.constant(xa.clone());
            let b = g.constant(xb.clone());
            let z = enc.forward(g, a)?;
            let z_prime = enc.forward(g, b)?;
            let batch = PairBatch {
                z,
                z_prime,
                v: &v,
                v_prime: &vp,
                d_pose: D_POSE,
            };
            Ok((total_loss_graph(g, &batch, &loss_cfg)?.0, enc.vars()))
        },
        h,
        tol,
        None,
    )?;
    cases.push(GradientCase {
        name: "L_total / encoder weights".into(),
        report,
    });

    const T: usize = 4;
    const CLASSES: usize = 28;
    let items: Vec<LabeledSequence> = (0..B)
        .map(|i| {
            Ok(LabeledSequence {
                label: (i * 11 + seed as usize) % CLASSES,
                frames: (0..T)
                    .map(|_| Pose2D::from_flat(Tensor::random_normal(1, 2 * N, 0.5, &mut r).data()))
                    .collect::<Result<_>>()?,
            })
        })
        .collect::<Result<_>>()?;
    let refs: Vec<&LabeledSequence> = items.iter().collect();
    let labels: Vec<usize> = items.iter().map(|s| s.label).collect();
    let head_cfg = ClassifierConfig {
        input_dim: D_POSE + D_VIEW,
        gru_hidden: 6,
        gru_layers: 2,
        fc_hidden: 8,
        num_classes: CLASSES,
        dropout: [0.5, 0.5],
    };
    let head = ClassifierParams::init(&head_cfg, rng::derive_seed(seed, &[2]))?;
    let report = grad_check_params(
        &head,
        |g, p| {
            let (logits, _, head_vars) = forward_logits(g, &encoder, p, Features::Full, &refs, None)?;
            Ok((g.softmax_cross_entropy(logits, &labels)?, head_vars))
        },
        h,
        tol,
        None,
    )?;
    cases.push(GradientCase {
        name: "classifier loss / classifier weights".into(),
        report,
    });
    let report = grad_check_params(
        &encoder,
        |g, p| {
            let (logits, enc_vars, _) = forward_logits(g, p, &head, Features::Full, &refs, None)?;
            Ok((g.softmax_cross_entropy(logits, &labels)?, enc_vars))
        },
        h,
        tol,
        None,
    )?;
    cases.push(GradientCase {
        name: "classifier loss / encoder weights".into(),
        report,
    });
    Ok(cases)
}

#[cfg(test)]
mod tests {

    #[test]
    fn checkpoints_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let enc = EncoderParams::init(&EncoderConfig::for_joints(17), 3).unwrap();
        let p = dir.path().join("enc.ckpt");
        save_encoder(&p, &enc).unwrap();
        assert_eq!(load_encoder(&p).unwrap(), enc);
        let model = ClassifierModel {
            classifier: ClassifierParams::init(&ClassifierConfig::new(enc.d_pose, 3), 4).unwrap(),
            encoder: enc,
            features: Features::PoseOnly,
            class_names: vec!["a".into(), "b".into(), "c".into()],
        };
        let q = dir.path().join("clf.ckpt");
        model.save(&q).unwrap();
        assert_eq!(ClassifierModel::load(&q).unwrap(), model);
        assert!(matches!(load_encoder(&q), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn gradient_suite_passes() {
        for case in gradient_suite(0).unwrap() {
            assert!(case.report.checked > 0, "{}", case.name);
            assert!(case.report.passed(), "{}: {:?}", case.name, case.report.worst);
        }
    }

    use super::*;
    use crate::nn::layers::encoder_forward;

    fn poses(n: usize, seed: u64) -> Vec<CanonicalPose> {
        crate::synth::generate_pose_pool(n, 3, 16, seed).unwrap()
    }

    fn small_cfg() -> PretrainConfig {
        PretrainConfig {
            epochs: 2,
            batch_size: 8,
            hidden: vec![16],
            d_pose: 6,
            d_view: 2,
            probe_poses: 8,
            ..PretrainConfig::default()
        }
    }

    #[test]
    fn zero_lr_leaves_encoder_at_init() {
        let p = poses(24, 1);
        let mut cfg = small_cfg();
        cfg.optimizer.lr = 0.0;
        let out = pretrain_encoder(&p, &cfg).unwrap();
        let init = EncoderParams::init(&cfg.encoder_config(17), rng::derive_seed(cfg.seed, &[0])).unwrap();
        assert_eq!(out.encoder, init);
        assert_eq!(out.history.len(), 2 * 3);
    }

    #[test]
    fn same_seed_same_history() {
        let p = poses(16, 2);
        let a = pretrain_encoder(&p, &small_cfg()).unwrap();
        let b = pretrain_encoder(&p, &small_cfg()).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.encoder, b.encoder);
    }

    #[test]
    fn batch_of_one_is_rejected() {
        let p = poses(4, 3);
        let cfg = PretrainConfig {
            batch_size: 1,
            ..small_cfg()
        };
        assert!(matches!(pretrain_encoder(&p, &cfg), Err(Error::Config(_))));
        let cfg = PretrainConfig {
            batch_size: 8,
            ..small_cfg()
        };
        assert!(matches!(pretrain_encoder(&p, &cfg), Err(Error::InsufficientData(_))));
    }

    fn encoder() -> EncoderParams {
        EncoderParams::init(&EncoderConfig::for_joints(3), 5).unwrap()
    }

    fn frame(k: f64) -> Pose2D {
        Pose2D::unmasked(vec![[k, 0.1], [0.2 * k, -0.3], [0.0, k * k]])
    }

    #[test]
    fn embedding_is_per_frame() {
        let enc = encoder();
        let one = embed_sequence(&enc, &[frame(0.5)]).unwrap();
        let direct = encoder_forward(&enc, &Tensor::from_vec(1, 6, frame(0.5).flatten()).unwrap()).unwrap();
        assert_eq!(one, direct);
        let seq = [frame(0.1), frame(0.7), frame(0.7), frame(-0.4)];
        let z = embed_sequence(&enc, &seq).unwrap();
        assert_eq!(z.row(1), z.row(2));
        let perm = [seq[3].clone(), seq[0].clone(), seq[2].clone(), seq[1].clone()];
        let zp = embed_sequence(&enc, &perm).unwrap();
        for (i, j) in [(0, 3), (1, 0), (2, 2), (3, 1)] {
            assert_eq!(zp.row(i), z.row(j));
        }
    }

    #[test]
    fn embedding_rejects_wrong_width() {
        let enc = encoder();
        let bad = Pose2D::unmasked(vec![[0.0, 0.0]; 4]);
        assert!(matches!(embed_sequence(&enc, &[bad]), Err(Error::Shape(_))));
        let mixed = [frame(0.1), Pose2D::unmasked(vec![[0.0, 0.0]; 2])];
        assert!(matches!(embed_sequence(&enc, &mixed), Err(Error::Shape(_))));
    }

    fn toy_dataset(per_class: usize) -> LabeledSequenceDataset {
        let mut ds = LabeledSequenceDataset::new(vec!["a".into(), "b".into(), "c".into()]);
        for c in 0..3 {
            for i in 0..per_class {
                let frames = (0..5)
                    .map(|t| frame(c as f64 - 1.0 + 0.05 * (t + i) as f64))
                    .collect();
                ds.items.push(LabeledSequence { label: c, frames });
            }
        }
        ds
    }

    #[test]
    fn subsampling_is_stratified_and_nested() {
        let ds = toy_dataset(40);
        let mut prev: Option<Vec<usize>> = None;
        for f in [0.01, 0.1, 0.5, 1.0] {
            let s = stratified_subsample(&ds, f, 9).unwrap();
            let sub = ds.subset(&s);
            let expect = ((f * 40.0 - 1e-9).ceil() as usize).max(1);
            assert_eq!(sub.class_counts(), vec![expect; 3]);
            if let Some(p) = &prev {
                assert!(p.iter().all(|i| s.contains(i)));
            }
            prev = Some(s);
        }
        assert!(stratified_subsample(&ds, 0.0, 0).is_err());
    }

    fn tiny_ft() -> FinetuneConfig {
        FinetuneConfig {
            epochs: 3,
            batch_size: 4,
            gru_hidden: 4,
            gru_layers: 1,
            fc_hidden: 4,
            hidden: vec![8],
            d_pose: 3,
            d_view: 1,
            ..FinetuneConfig::default()
        }
    }

    #[test]
    fn zero_lr_finetune_keeps_parameters() {
        let ds = toy_dataset(4);
        let cfg = FinetuneConfig { lr: 0.0, ..tiny_ft() };
        let out = finetune_classifier(None, &ds, Some(&ds), &cfg).unwrap();
        let enc = EncoderParams::init(
            &EncoderConfig {
                input_dim: 6,
                hidden: vec![8],
                d_pose: 3,
                d_view: 1,
            },
            rng::derive_seed(0, &[10]),
        )
        .unwrap();
        assert_eq!(out.encoder, enc);
        let init_acc = accuracy(&out.encoder, &out.classifier, cfg.features, &ds).unwrap();
        assert!(out.history.iter().all(|r| r.eval_accuracy == Some(init_acc)));
    }

    #[test]
    fn frozen_encoder_does_not_move() {
        let ds = toy_dataset(4);
        let enc = encoder();
        let cfg = FinetuneConfig {
            freeze_encoder: true,
            ..tiny_ft()
        };
        let out = finetune_classifier(Some(&enc), &ds, None, &cfg).unwrap();
        assert_eq!(out.encoder, enc);
        let cfg = FinetuneConfig { lr: 1e-2, ..tiny_ft() };
        let moved = finetune_classifier(Some(&enc), &ds, None, &cfg).unwrap();
        assert_ne!(moved.encoder, enc);
    }

    #[test]
    fn epoch_scaling() {
        let cfg = FinetuneConfig {
            epochs: 30,
            batch_size: 16,
            scale_epochs: true,
            ..FinetuneConfig::default()
        };
        assert_eq!(scaled_epochs(&cfg, 300, 300), 30);
        assert_eq!(scaled_epochs(&cfg, 3, 300), 30 * 19);
        assert_eq!(scaled_epochs(&FinetuneConfig::default(), 3, 300), 30);
    }

    #[test]
    fn dataset_jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seq.jsonl");
        let mut ds = toy_dataset(2);
        ds.items[0].frames[1].mask[2] = true;
        ds.items[0].frames[1].coords[2] = [0.0, 0.0];
        ds.write_jsonl(&path).unwrap();
        let back = LabeledSequenceDataset::read_jsonl(&path, Some(ds.class_names.clone())).unwrap();
        assert_eq!(back, ds);
        std::fs::write(&path, "{\"label\": 0, \"frames\": [[[0,0]]]}\n{\"label\": 5, \"frames\": [[[0,0]]]}\n").unwrap();
        assert!(matches!(
            LabeledSequenceDataset::read_jsonl(&path, Some(vec!["x".into()])),
            Err(Error::Validation(_))
        ));
        std::fs::write(&path, "{\"label\": 0}\nnot json\n").unwrap();
        match LabeledSequenceDataset::read_jsonl(&path, None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn probe_extremes() {
        let a = unit_rows(&Tensor::identity(4));
        assert_eq!(probe_from_views(&a, &a), 1.0);
        assert_eq!(retrieval_from_views(&a, &a), 1.0);
        let ones = Tensor::filled(4, 2, 1.0);
        let u = unit_rows(&ones);
        assert!(probe_from_views(&u, &u).abs() < 1e-12);
    }
}
