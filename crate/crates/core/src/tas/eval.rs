//! Frame-wise accuracy and segmental F1@k.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tas::schema::{ActionLabel, JumpType, LabeledTimeline, Segment};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Overlap {
    /// Intersection over union.
    Iou,
    /// Intersection over the ground-truth segment length.
    GtFraction,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    /// Maximum-cardinality one-to-one matching among qualifying pairs.
    Optimal,
    /// Predictions in temporal order each take the unmatched same-label
    /// ground truth of highest overlap.
    Greedy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Sum TP/FP/FN over videos, then compute P/R/F1.
    Pooled,
    /// Mean of per-video P/R/F1 over videos with evaluable ground truth.
    PerVideo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub thresholds: Vec<f64>,
    pub excluded: BTreeSet<ActionLabel>,
    pub overlap: Overlap,
    pub matcher: Matcher,
    pub aggregation: Aggregation,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let mut excluded: BTreeSet<ActionLabel> = JumpType::ALL.iter().map(|&j| ActionLabel::Entry(j)).collect();
        excluded.insert(ActionLabel::Landing);
        excluded.insert(ActionLabel::None);
        EvalConfig {
            thresholds: vec![10.0, 25.0, 50.0, 75.0, 90.0],
            excluded,
            overlap: Overlap::Iou,
            matcher: Matcher::Optimal,
            aggregation: Aggregation::Pooled,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::Config("at least one F1 threshold is required".into()));
        }
        if let Some(k) = self.thresholds.iter().find(|k| !(**k > 0.0 && **k <= 100.0)) {
            return Err(Error::Config(format!("threshold {k} outside (0, 100]")));
        }
        Ok(())
    }

    pub fn is_excluded(&self, label: ActionLabel) -> bool {
        self.excluded.contains(&label)
    }
}

fn check_pair(pred: &LabeledTimeline, gt: &LabeledTimeline) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::Validation(format!(
            "video {}: prediction has {} frames, ground truth {}",
            gt.video_id,
            pred.len(),
            gt.len()
        )));
    }
    if pred.level != gt.level {
        return Err(Error::Validation(format!(
            "video {}: prediction is {:?} level, ground truth {:?}",
            gt.video_id, pred.level, gt.level
        )));
    }
    Ok(())
}

/// (correct, evaluable) frame counts.
fn frame_counts(pred: &LabeledTimeline, gt: &LabeledTimeline, cfg: &EvalConfig) -> Result<(usize, usize)> {
    check_pair(pred, gt)?;
    let mut correct = 0;
    let mut total = 0;
    for (p, g) in pred.labels.iter().zip(&gt.labels) {
        if cfg.is_excluded(*g) {
            continue;
        }
        total += 1;
        if p == g {
            correct += 1;
        }
    }
    Ok((correct, total))
}

/// Percentage of correctly labeled frames among frames whose ground truth is
/// not excluded.
pub fn frame_accuracy(pred: &LabeledTimeline, gt: &LabeledTimeline, cfg: &EvalConfig) -> Result<f64> {
    let (correct, total) = frame_counts(pred, gt, cfg)?;
    if total == 0 {
        return Err(Error::UndefinedMetric(format!(
            "video {} has no evaluable ground-truth frames",
            gt.video_id
        )));
    }
    Ok(100.0 * correct as f64 / total as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchedSegment {
    pub video_id: String,
    pub pred: Segment,
    pub gt: Segment,
    pub overlap: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct F1Score {
    pub k: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub matches: Vec<MatchedSegment>,
}

impl F1Score {
    fn from_counts(k: f64, tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { 100.0 * a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        F1Score {
            k,
            precision,
            recall,
            f1: harmonic(precision, recall),
            tp,
            fp,
            fn_,
            matches: Vec::new(),
        }
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn overlap(kind: Overlap, pred: &Segment, gt: &Segment) -> f64 {
    let inter = pred.intersection(gt) as f64;
    match kind {
        Overlap::Iou => inter / pred.union(gt) as f64,
        Overlap::GtFraction => inter / gt.len() as f64,
    }
}

/// `overlap ≥ k/100`, evaluated on integer counts so the decision is exact.
fn qualifies(kind: Overlap, pred: &Segment, gt: &Segment, k: f64) -> bool {
    let inter = pred.intersection(gt);
    if inter == 0 {
        return false;
    }
    let denom = match kind {
        Overlap::Iou => pred.union(gt),
        Overlap::GtFraction => gt.len(),
    };
    100.0 * inter as f64 >= k * denom as f64
}

/// Evaluable segments of a timeline.
fn kept_segments(t: &LabeledTimeline, cfg: &EvalConfig) -> Vec<Segment> {
    t.segments().into_iter().filter(|s| !cfg.is_excluded(s.label)).collect()
}

/// Maximum matching between two time-ordered lists of disjoint segments.
/// Qualifying pairs need a nonempty intersection, and two such pairs can
/// never cross (if `p_a < p_b` and `g_c < g_d`, then `p_a ∩ g_d ≠ ∅` and
/// `p_b ∩ g_c ≠ ∅` cannot both hold), so a longest-common-subsequence style
/// recurrence is exact.
fn optimal_pairs(preds: &[Segment], gts: &[Segment], edge: impl Fn(usize, usize) -> bool) -> Vec<(usize, usize)> {
    let (n, m) = (preds.len(), gts.len());
    let mut dp = vec![vec![0usize; m + 1]; n + 1];
    for i in 1..=n {
        for j in 1..=m {
            let diag = if edge(i - 1, j - 1) { dp[i - 1][j - 1] + 1 } else { 0 };
            dp[i][j] = dp[i - 1][j].max(dp[i][j - 1]).max(diag);
        }
    }
    let mut pairs = Vec::with_capacity(dp[n][m]);
    let (mut i, mut j) = (n, m);
    while i > 0 && j > 0 {
        if edge(i - 1, j - 1) && dp[i][j] == dp[i - 1][j - 1] + 1 {
            pairs.push((i - 1, j - 1));
            i -= 1;
            j -= 1;
        } else if dp[i][j] == dp[i - 1][j] {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    pairs.reverse();
    pairs
}

fn greedy_pairs(preds: &[Segment], gts: &[Segment], cfg: &EvalConfig, k: f64) -> Vec<(usize, usize)> {
    let mut used = vec![false; gts.len()];
    let mut pairs = Vec::new();
    for (i, p) in preds.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if used[j] || g.label != p.label {
                continue;
            }
            let o = overlap(cfg.overlap, p, g);
            if best.is_none_or(|(_, b)| o > b) {
                best = Some((j, o));
            }
        }
        if let Some((j, _)) = best {
            if qualifies(cfg.overlap, p, &gts[j], k) {
                used[j] = true;
                pairs.push((i, j));
            }
        }
    }
    pairs
}

fn match_video(pred: &LabeledTimeline, gt: &LabeledTimeline, k: f64, cfg: &EvalConfig) -> Result<F1Score> {
    check_pair(pred, gt)?;
    let preds = kept_segments(pred, cfg);
    let gts = kept_segments(gt, cfg);
    let mut pairs = match cfg.matcher {
        Matcher::Greedy => greedy_pairs(&preds, &gts, cfg, k),
        Matcher::Optimal => {
            let labels: BTreeSet<ActionLabel> = preds.iter().map(|s| s.label).collect();
            let mut pairs = Vec::new();
            for label in labels {
                let pi: Vec<usize> = (0..preds.len()).filter(|&i| preds[i].label == label).collect();
                let gi: Vec<usize> = (0..gts.len()).filter(|&j| gts[j].label == label).collect();
                let ps: Vec<Segment> = pi.iter().map(|&i| preds[i]).collect();
                let gs: Vec<Segment> = gi.iter().map(|&j| gts[j]).collect();
                for (a, b) in optimal_pairs(&ps, &gs, |a, b| qualifies(cfg.overlap, &ps[a], &gs[b], k)) {
                    pairs.push((pi[a], gi[b]));
                }
            }
            pairs
        }
    };
    pairs.sort_unstable();
    let tp = pairs.len();
    let mut score = F1Score::from_counts(k, tp, preds.len() - tp, gts.len() - tp);
    score.matches = pairs
        .into_iter()
        .map(|(i, j)| MatchedSegment {
            video_id: gt.video_id.clone(),
            pred: preds[i],
            gt: gts[j],
            overlap: overlap(cfg.overlap, &preds[i], &gts[j]),
        })
        .collect();
    Ok(score)
}

/// Precision, recall and F1 (percentages) at overlap threshold `k` percent.
pub fn f1_at_k(pred: &LabeledTimeline, gt: &LabeledTimeline, k: f64, cfg: &EvalConfig) -> Result<F1Score> {
    if !(k > 0.0 && k <= 100.0) {
        return Err(Error::Config(format!("threshold {k} outside (0, 100]")));
    }
    frame_accuracy(pred, gt, cfg)?;
    match_video(pred, gt, k, cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub videos: usize,
    pub frame_accuracy: f64,
    pub aggregation: Aggregation,
    pub scores: Vec<F1Score>,
}

impl EvalReport {
    pub fn f1(&self, k: f64) -> Option<f64> {
        self.scores.iter().find(|s| s.k == k).map(|s| s.f1)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "videos          {}", self.videos);
        let _ = writeln!(s, "frame accuracy  {:.2}", self.frame_accuracy);
        let _ = writeln!(s, "{:>6} {:>8} {:>8} {:>8} {:>5} {:>5} {:>5}", "k", "P", "R", "F1", "TP", "FP", "FN");
        for sc in &self.scores {
            let _ = writeln!(
                s,
                "{:>6} {:>8.2} {:>8.2} {:>8.2} {:>5} {:>5} {:>5}",
                sc.k, sc.precision, sc.recall, sc.f1, sc.tp, sc.fp, sc.fn_
            );
        }
        s
    }
}

/// Single-video report.
pub fn evaluate(pred: &LabeledTimeline, gt: &LabeledTimeline, cfg: &EvalConfig) -> Result<EvalReport> {
    evaluate_videos(&[(pred.clone(), gt.clone())], cfg)
}

/// Multi-video report. Frame accuracy always pools frames; F1 follows
/// `cfg.aggregation`.
pub fn evaluate_videos(pairs: &[(LabeledTimeline, LabeledTimeline)], cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::UndefinedMetric("no videos to evaluate".into()));
    }
    let (mut correct, mut total) = (0, 0);
    let mut evaluable = Vec::with_capacity(pairs.len());
    for (p, g) in pairs {
        let (c, t) = frame_counts(p, g, cfg)?;
        correct += c;
        total += t;
        evaluable.push(t > 0);
    }
    if total == 0 {
        return Err(Error::UndefinedMetric("no evaluable ground-truth frames in any video".into()));
    }
    let mut scores = Vec::with_capacity(cfg.thresholds.len());
    for &k in &cfg.thresholds {
        let per_video = pairs
            .iter()
            .map(|(p, g)| match_video(p, g, k, cfg))
            .collect::<Result<Vec<_>>>()?;
        let (tp, fp, fn_) = per_video
            .iter()
            .fold((0, 0, 0), |(a, b, c), s| (a + s.tp, b + s.fp, c + s.fn_));
        let mut score = F1Score::from_counts(k, tp, fp, fn_);
        if cfg.aggregation == Aggregation::PerVideo {
            let kept: Vec<&F1Score> = per_video.iter().zip(&evaluable).filter(|(_, e)| **e).map(|(s, _)| s).collect();
            let n = kept.len() as f64;
            score.precision = kept.iter().map(|s| s.precision).sum::<f64>() / n;
            score.recall = kept.iter().map(|s| s.recall).sum::<f64>() / n;
            score.f1 = kept.iter().map(|s| s.f1).sum::<f64>() / n;
        }
        score.matches = per_video.into_iter().flat_map(|s| s.matches).collect();
        scores.push(score);
    }
    Ok(EvalReport {
        videos: pairs.len(),
        frame_accuracy: 100.0 * correct as f64 / total as f64,
        aggregation: cfg.aggregation,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tas::schema::{LabelSchema, Level};

    fn jump(j: JumpType) -> ActionLabel {
        ActionLabel::Jump { jump: j, rotations: None }
    }

    fn timeline(spans: &[(usize, usize, ActionLabel)], len: usize) -> LabeledTimeline {
        let mut labels = vec![ActionLabel::None; len];
        for &(s, e, l) in spans {
            labels[s..e].fill(l);
        }
        LabeledTimeline::new("v", labels, &LabelSchema::new(Level::Set)).unwrap()
    }

    #[test]
    fn accuracy_examples() {
        let cfg = EvalConfig::default();
        let lutz = jump(JumpType::Lutz);
        let gt = timeline(&[(0, 10, lutz)], 20);
        assert_eq!(frame_accuracy(&gt, &gt, &cfg).unwrap(), 100.0);
        let pred = timeline(&[(0, 7, lutz)], 20);
        assert_eq!(frame_accuracy(&pred, &gt, &cfg).unwrap(), 70.0);
        let empty = timeline(&[(0, 5, ActionLabel::Landing)], 20);
        assert!(matches!(frame_accuracy(&empty, &empty, &cfg), Err(Error::UndefinedMetric(_))));
        let short = timeline(&[], 19);
        assert!(matches!(frame_accuracy(&short, &gt, &cfg), Err(Error::Validation(_))));
    }

    #[test]
    fn partial_overlap_example() {
        let cfg = EvalConfig::default();
        let flip = jump(JumpType::Flip);
        let gt = timeline(&[(10, 20, flip)], 30);
        let pred = timeline(&[(15, 25, flip)], 30);
        for k in [10.0, 25.0] {
            let s = f1_at_k(&pred, &gt, k, &cfg).unwrap();
            assert_eq!((s.tp, s.fp, s.fn_), (1, 0, 0));
        }
        let s = f1_at_k(&pred, &gt, 50.0, &cfg).unwrap();
        assert_eq!((s.tp, s.fp, s.fn_, s.f1), (0, 1, 1, 0.0));
        assert!((f1_at_k(&pred, &gt, 10.0, &cfg).unwrap().matches[0].overlap - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn greedy_can_lose_a_match() {
        let a = jump(JumpType::Axel);
        let gt = timeline(&[(0, 2, a), (3, 12, a)], 12);
        let pred = timeline(&[(0, 10, a), (11, 12, a)], 12);
        let optimal = f1_at_k(&pred, &gt, 10.0, &EvalConfig::default()).unwrap();
        assert_eq!(optimal.tp, 2);
        let greedy_cfg = EvalConfig {
            matcher: Matcher::Greedy,
            ..EvalConfig::default()
        };
        assert_eq!(f1_at_k(&pred, &gt, 10.0, &greedy_cfg).unwrap().tp, 1);
    }

    #[test]
    fn one_sided_overlap() {
        let l = jump(JumpType::Loop);
        let gt = timeline(&[(10, 14, l)], 40);
        let pred = timeline(&[(10, 30, l)], 40);
        let cfg = EvalConfig {
            overlap: Overlap::GtFraction,
            ..EvalConfig::default()
        };
        assert_eq!(f1_at_k(&pred, &gt, 90.0, &cfg).unwrap().tp, 1);
        assert_eq!(f1_at_k(&pred, &gt, 90.0, &EvalConfig::default()).unwrap().tp, 0);
    }

    #[test]
    fn report_extremes() {
        let cfg = EvalConfig::default();
        let s = jump(JumpType::Salchow);
        let gt = timeline(&[(2, 6, ActionLabel::Entry(JumpType::Salchow)), (6, 9, s), (9, 11, ActionLabel::Landing)], 20);
        let same = evaluate(&gt, &gt, &cfg).unwrap();
        assert_eq!(same.frame_accuracy, 100.0);
        assert!(same.scores.iter().all(|x| x.f1 == 100.0));
        let none = timeline(&[], 20);
        let zero = evaluate(&none, &gt, &cfg).unwrap();
        assert_eq!(zero.frame_accuracy, 0.0);
        assert!(zero.scores.iter().all(|x| x.f1 == 0.0));
        assert!(zero.to_table().contains("frame accuracy"));
    }

    #[test]
    fn per_video_averaging_differs_from_pooling() {
        let t = jump(JumpType::ToeLoop);
        let gt1 = timeline(&[(0, 5, t)], 10);
        let gt2 = timeline(&[(0, 2, t), (3, 5, t), (6, 8, t)], 10);
        let pred2 = timeline(&[], 10);
        let pairs = vec![(gt1.clone(), gt1), (pred2, gt2)];
        let pooled = evaluate_videos(&pairs, &EvalConfig::default()).unwrap();
        // Pooled: TP 1, FP 0, FN 3 -> P 100, R 25, F1 40.
        assert!((pooled.scores[0].f1 - 40.0).abs() < 1e-12);
        let per = evaluate_videos(
            &pairs,
            &EvalConfig {
                aggregation: Aggregation::PerVideo,
                ..EvalConfig::default()
            },
        )
        .unwrap();
        assert!((per.scores[0].f1 - 50.0).abs() < 1e-12);
    }
}
