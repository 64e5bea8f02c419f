//! Jump-procedure label vocabulary, timelines and segments.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum JumpType {
    Axel,
    Salchow,
    ToeLoop,
    Loop,
    Flip,
    Lutz,
}

impl JumpType {
    pub const ALL: [JumpType; 6] = [
        JumpType::Axel,
        JumpType::Salchow,
        JumpType::ToeLoop,
        JumpType::Loop,
        JumpType::Flip,
        JumpType::Lutz,
    ];

    pub fn name(self) -> &'static str {
        match self {
            JumpType::Axel => "Axel",
            JumpType::Salchow => "Salchow",
            JumpType::ToeLoop => "ToeLoop",
            JumpType::Loop => "Loop",
            JumpType::Flip => "Flip",
            JumpType::Lutz => "Lutz",
        }
    }
}

impl FromStr for JumpType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        JumpType::ALL
            .into_iter()
            .find(|j| j.name() == s)
            .ok_or_else(|| Error::Schema(format!("unknown jump type {s:?}")))
    }
}

pub const MAX_ROTATIONS: u8 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ActionLabel {
    None,
    Entry(JumpType),
    /// `rotations` is `None` at Set level and `Some(1..=4)` at Element level.
    Jump {
        jump: JumpType,
        rotations: Option<u8>,
    },
    Landing,
}

impl ActionLabel {
    pub fn is_none(self) -> bool {
        self == ActionLabel::None
    }

    pub fn is_entry(self) -> bool {
        matches!(self, ActionLabel::Entry(_))
    }

    pub fn is_jump(self) -> bool {
        matches!(self, ActionLabel::Jump { .. })
    }

    /// Entry and Landing become None; everything else is kept.
    pub fn coarsened(self) -> ActionLabel {
        match self {
            ActionLabel::Entry(_) | ActionLabel::Landing => ActionLabel::None,
            other => other,
        }
    }
}

impl fmt::Display for ActionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionLabel::None => f.write_str("NONE"),
            ActionLabel::Landing => f.write_str("landing"),
            ActionLabel::Entry(j) => write!(f, "{}_entry", j.name()),
            ActionLabel::Jump {
                jump,
                rotations: None,
            } => write!(f, "{}_jump", jump.name()),
            ActionLabel::Jump {
                jump,
                rotations: Some(r),
            } => write!(f, "{r}{}_jump", jump.name()),
        }
    }
}

/// Grammar: `NONE`, `landing`, `<Type>_entry`, `<Type>_jump`, `<r><Type>_jump`.
impl FromStr for ActionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "NONE" => return Ok(ActionLabel::None),
            "landing" => return Ok(ActionLabel::Landing),
            _ => {}
        }
        let bad = || Error::Schema(format!("unrecognized label {s:?}"));
        let (head, phase) = s.rsplit_once('_').ok_or_else(bad)?;
        match phase {
            "entry" => Ok(ActionLabel::Entry(head.parse()?)),
            "jump" => {
                let digits = head.chars().take_while(char::is_ascii_digit).count();
                let rotations = if digits == 0 {
                    None
                } else {
                    let r: u8 = head[..digits].parse().map_err(|_| bad())?;
                    if r == 0 || r > MAX_ROTATIONS {
                        return Err(Error::Schema(format!("rotation count {r} outside 1..=4 in {s:?}")));
                    }
                    Some(r)
                };
                Ok(ActionLabel::Jump {
                    jump: head[digits..].parse()?,
                    rotations,
                })
            }
            _ => Err(bad()),
        }
    }
}

impl Serialize for ActionLabel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ActionLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Set,
    Element,
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "set" => Ok(Level::Set),
            "element" => Ok(Level::Element),
            _ => Err(Error::Config(format!("unknown schema level {s:?}"))),
        }
    }
}

/// The ordered label vocabulary of one annotation level.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelSchema {
    level: Level,
    excluded_jumps: Vec<(JumpType, u8)>,
    labels: Vec<ActionLabel>,
}

impl LabelSchema {
    /// Element level leaves out the quadruple Axel.
    pub fn new(level: Level) -> Self {
        Self::with_excluded_jumps(level, vec![(JumpType::Axel, 4)])
    }

    pub fn with_excluded_jumps(level: Level, excluded_jumps: Vec<(JumpType, u8)>) -> Self {
        let mut labels: Vec<ActionLabel> = JumpType::ALL.iter().map(|&j| ActionLabel::Entry(j)).collect();
        for j in JumpType::ALL {
            match level {
                Level::Set => labels.push(ActionLabel::Jump {
                    jump: j,
                    rotations: None,
                }),
                Level::Element => {
                    for r in 1..=MAX_ROTATIONS {
                        if !excluded_jumps.contains(&(j, r)) {
                            labels.push(ActionLabel::Jump {
                                jump: j,
                                rotations: Some(r),
                            });
                        }
                    }
                }
            }
        }
        labels.push(ActionLabel::Landing);
        LabelSchema {
            level,
            excluded_jumps,
            labels,
        }
    }

    pub fn level(&self) -> Level {
        self.level
    }

    /// Action labels in stable order, without None.
    pub fn labels(&self) -> &[ActionLabel] {
        &self.labels
    }

    /// None followed by the action labels; a label's position is its class id.
    pub fn classes(&self) -> Vec<ActionLabel> {
        std::iter::once(ActionLabel::None).chain(self.labels.iter().copied()).collect()
    }

    pub fn class_index(&self, label: ActionLabel) -> Option<usize> {
        if label.is_none() {
            return Some(0);
        }
        self.labels.iter().position(|&l| l == label).map(|i| i + 1)
    }

    pub fn contains(&self, label: ActionLabel) -> bool {
        self.class_index(label).is_some()
    }

    pub fn excluded_jumps(&self) -> &[(JumpType, u8)] {
        &self.excluded_jumps
    }

    pub fn parse_label(&self, s: &str) -> Result<ActionLabel> {
        let label: ActionLabel = s.parse()?;
        if !self.contains(label) {
            return Err(Error::Schema(format!("label {s:?} is not part of the {:?} schema", self.level)));
        }
        Ok(label)
    }
}

/// `build_label_schema(level)`: the ordered action labels (None excluded).
pub fn build_label_schema(level: Level) -> Vec<ActionLabel> {
    LabelSchema::new(level).labels().to_vec()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledTimeline {
    pub video_id: String,
    pub level: Level,
    pub labels: Vec<ActionLabel>,
}

impl LabeledTimeline {
    pub fn new(video_id: impl Into<String>, labels: Vec<ActionLabel>, schema: &LabelSchema) -> Result<Self> {
        let t = LabeledTimeline {
            video_id: video_id.into(),
            level: schema.level(),
            labels,
        };
        t.validate(schema)?;
        Ok(t)
    }

    pub fn validate(&self, schema: &LabelSchema) -> Result<()> {
        if self.labels.is_empty() {
            return Err(Error::Validation(format!("timeline {} is empty", self.video_id)));
        }
        if self.level != schema.level() {
            return Err(Error::Schema(format!(
                "timeline {} is {:?} level, schema is {:?}",
                self.video_id,
                self.level,
                schema.level()
            )));
        }
        if let Some((i, l)) = self.labels.iter().enumerate().find(|(_, l)| !schema.contains(**l)) {
            return Err(Error::Schema(format!(
                "frame {i} of {}: label {l} is not in the {:?} schema",
                self.video_id,
                schema.level()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Fraction of frames carrying a label other than None.
    pub fn action_fraction(&self) -> f64 {
        self.labels.iter().filter(|l| !l.is_none()).count() as f64 / self.labels.len().max(1) as f64
    }

    pub fn segments(&self) -> Vec<Segment> {
        segments_from_frames(&self.labels)
    }

    /// Reads one label per line; blank lines are skipped. The video id is the
    /// file stem.
    pub fn read(path: &Path, schema: &LabelSchema) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let video_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let labels = parse_frame_labels(&text, schema).map_err(|e| match e {
            Error::Parse { line, message, .. } => Error::Parse {
                path: path.display().to_string(),
                line,
                message,
            },
            other => other,
        })?;
        LabeledTimeline::new(video_id, labels, schema)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.labels.len() * 8);
        for l in &self.labels {
            s.push_str(&l.to_string());
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

pub fn parse_frame_labels(text: &str, schema: &LabelSchema) -> Result<Vec<ActionLabel>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        out.push(schema.parse_label(line).map_err(|e| Error::Parse {
            path: String::new(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Half-open frame range `[start, end)` with one label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub label: ActionLabel,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn intersection(&self, other: &Segment) -> usize {
        self.end.min(other.end).saturating_sub(self.start.max(other.start))
    }

    pub fn union(&self, other: &Segment) -> usize {
        self.len() + other.len() - self.intersection(other)
    }
}

/// Maximal runs of equal labels.
pub fn segments_from_frames(labels: &[ActionLabel]) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        match out.last_mut() {
            Some(s) if s.label == l => s.end = i + 1,
            _ => out.push(Segment {
                start: i,
                end: i + 1,
                label: l,
            }),
        }
    }
    out
}

/// Inverse of [`segments_from_frames`]; segments must tile `[0, n)` in order.
pub fn frames_from_segments(segments: &[Segment]) -> Result<Vec<ActionLabel>> {
    let mut out = Vec::new();
    for s in segments {
        if s.start != out.len() || s.end <= s.start {
            return Err(Error::Validation(format!(
                "segment [{}, {}) does not continue a tiling at frame {}",
                s.start,
                s.end,
                out.len()
            )));
        }
        out.extend(std::iter::repeat_n(s.label, s.len()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    MissingEntry { segment: usize, jump: JumpType },
    EntryTypeMismatch { segment: usize, entry: JumpType, jump: JumpType },
    MissingLanding { segment: usize },
    OrphanEntry { segment: usize },
    OrphanLanding { segment: usize },
}

/// Checks entry → jump → landing ordering on the segment sequence.
/// `segment` indices refer to `timeline.segments()`.
pub fn validate_procedure(timeline: &LabeledTimeline) -> Vec<Violation> {
    let segs = timeline.segments();
    let mut out = Vec::new();
    for (i, s) in segs.iter().enumerate() {
        let prev = i.checked_sub(1).map(|p| segs[p].label);
        let next = segs.get(i + 1).map(|n| n.label);
        match s.label {
            ActionLabel::Jump { jump, .. } => {
                match prev {
                    Some(ActionLabel::Entry(e)) if e == jump => {}
                    Some(ActionLabel::Entry(e)) => out.push(Violation::EntryTypeMismatch {
                        segment: i,
                        entry: e,
                        jump,
                    }),
                    _ => out.push(Violation::MissingEntry { segment: i, jump }),
                }
                if next != Some(ActionLabel::Landing) {
                    out.push(Violation::MissingLanding { segment: i });
                }
            }
            ActionLabel::Entry(_) => {
                if !next.is_some_and(ActionLabel::is_jump) {
                    out.push(Violation::OrphanEntry { segment: i });
                }
            }
            ActionLabel::Landing => {
                if !prev.is_some_and(ActionLabel::is_jump) {
                    out.push(Violation::OrphanLanding { segment: i });
                }
            }
            ActionLabel::None => {}
        }
    }
    out
}

/// Entry and Landing frames become None.
pub fn coarsen_annotation(timeline: &LabeledTimeline) -> LabeledTimeline {
    LabeledTimeline {
        video_id: timeline.video_id.clone(),
        level: timeline.level,
        labels: timeline.labels.iter().map(|l| l.coarsened()).collect(),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SegmentRow {
    video_id: String,
    start: usize,
    end: usize,
    label: ActionLabel,
}

/// `video_id,start,end,label` with a header row.
pub fn write_segment_csv(path: &Path, timelines: &[LabeledTimeline]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for t in timelines {
        for s in t.segments() {
            w.serialize(SegmentRow {
                video_id: t.video_id.clone(),
                start: s.start,
                end: s.end,
                label: s.label,
            })
            .map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a segment CSV back into timelines, in first-appearance order.
pub fn read_segment_csv(path: &Path, schema: &LabelSchema) -> Result<Vec<LabeledTimeline>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut grouped: Vec<(String, Vec<Segment>)> = Vec::new();
    for (i, row) in r.deserialize::<SegmentRow>().enumerate() {
        let row = row.map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 2,
            message: e.to_string(),
        })?;
        let seg = Segment {
            start: row.start,
            end: row.end,
            label: row.label,
        };
        match grouped.iter_mut().find(|(v, _)| *v == row.video_id) {
            Some((_, segs)) => segs.push(seg),
            None => grouped.push((row.video_id, vec![seg])),
        }
    }
    grouped
        .into_iter()
        .map(|(id, segs)| LabeledTimeline::new(id, frames_from_segments(&segs)?, schema))
        .collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line: e.position().map_or(0, |p| p.line() as usize),
        message: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn jump(j: JumpType, r: Option<u8>) -> ActionLabel {
        ActionLabel::Jump { jump: j, rotations: r }
    }

    fn tl(labels: Vec<ActionLabel>, level: Level) -> LabeledTimeline {
        LabeledTimeline::new("v", labels, &LabelSchema::new(level)).unwrap()
    }

    #[test]
    fn schema_sizes() {
        let set = build_label_schema(Level::Set);
        assert_eq!(set.len(), 13);
        let element = build_label_schema(Level::Element);
        assert_eq!(element.len(), 30);
        assert_eq!(element.iter().filter(|l| l.is_jump()).count(), 23);
        assert!(!element.contains(&jump(JumpType::Axel, Some(4))));
        assert_eq!(LabelSchema::new(Level::Set).classes().len(), 14);
        assert_eq!(LabelSchema::new(Level::Element).classes().len(), 31);
        let all = LabelSchema::with_excluded_jumps(Level::Element, vec![]);
        assert_eq!(all.labels().len(), 31);
    }

    #[test]
    fn labels_round_trip_through_strings() {
        for level in [Level::Set, Level::Element] {
            let schema = LabelSchema::new(level);
            for l in schema.classes() {
                assert_eq!(schema.parse_label(&l.to_string()).unwrap(), l);
            }
        }
        assert_eq!(jump(JumpType::Lutz, Some(3)).to_string(), "3Lutz_jump");
        assert_eq!(ActionLabel::Entry(JumpType::Axel).to_string(), "Axel_entry");
        assert!("5Lutz_jump".parse::<ActionLabel>().is_err());
        assert!("Spin_jump".parse::<ActionLabel>().is_err());
        assert!(LabelSchema::new(Level::Element).parse_label("4Axel_jump").is_err());
        assert!(LabelSchema::new(Level::Set).parse_label("2Flip_jump").is_err());
    }

    #[test]
    fn segmentation_examples() {
        let n = ActionLabel::None;
        assert_eq!(
            segments_from_frames(&vec![n; 100]),
            vec![Segment { start: 0, end: 100, label: n }]
        );
        let a = ActionLabel::Landing;
        let b = ActionLabel::Entry(JumpType::Loop);
        let segs = segments_from_frames(&[a, a, b, b, b, a]);
        let spans: Vec<_> = segs.iter().map(|s| (s.start, s.end, s.label)).collect();
        assert_eq!(spans, vec![(0, 2, a), (2, 5, b), (5, 6, a)]);
        assert!(frames_from_segments(&[Segment { start: 1, end: 2, label: a }]).is_err());
    }

    #[test]
    fn procedure_examples() {
        use ActionLabel::{Entry, Landing, None as N};
        let ok = tl(vec![Entry(JumpType::Axel), jump(JumpType::Axel, None), Landing, N], Level::Set);
        assert!(validate_procedure(&ok).is_empty());

        let missing = tl(vec![N, jump(JumpType::Lutz, None), Landing], Level::Set);
        assert_eq!(
            validate_procedure(&missing),
            vec![Violation::MissingEntry { segment: 1, jump: JumpType::Lutz }]
        );

        let mismatch = tl(
            vec![Entry(JumpType::Flip), jump(JumpType::Lutz, None), Landing],
            Level::Set,
        );
        assert_eq!(
            validate_procedure(&mismatch),
            vec![Violation::EntryTypeMismatch {
                segment: 1,
                entry: JumpType::Flip,
                jump: JumpType::Lutz
            }]
        );

        let orphans = tl(vec![Entry(JumpType::Loop), N, Landing, jump(JumpType::Loop, Some(2))], Level::Element);
        assert_eq!(
            validate_procedure(&orphans),
            vec![
                Violation::OrphanEntry { segment: 0 },
                Violation::OrphanLanding { segment: 2 },
                Violation::MissingEntry { segment: 3, jump: JumpType::Loop },
                Violation::MissingLanding { segment: 3 },
            ]
        );
    }

    #[test]
    fn coarsen_examples() {
        use ActionLabel::{Entry, Landing, None as N};
        let none = tl(vec![N; 10], Level::Set);
        assert_eq!(coarsen_annotation(&none), none);
        let run = tl(vec![Entry(JumpType::Flip), jump(JumpType::Flip, None), Landing], Level::Set);
        assert_eq!(coarsen_annotation(&run).labels, vec![N, jump(JumpType::Flip, None), N]);
        let mut labels = vec![N; 100];
        labels[10..16].fill(Entry(JumpType::Flip));
        labels[16..18].fill(jump(JumpType::Flip, None));
        labels[18..20].fill(Landing);
        let t = tl(labels, Level::Set);
        assert!((t.action_fraction() - 0.10).abs() < 1e-12);
        assert!((coarsen_annotation(&t).action_fraction() - 0.02).abs() < 1e-12);
    }

    #[test]
    fn file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let schema = LabelSchema::new(Level::Element);
        let t = tl(
            vec![
                ActionLabel::None,
                ActionLabel::Entry(JumpType::Lutz),
                jump(JumpType::Lutz, Some(3)),
                ActionLabel::Landing,
            ],
            Level::Element,
        );
        let p = dir.path().join("v.txt");
        t.write(&p).unwrap();
        assert_eq!(LabeledTimeline::read(&p, &schema).unwrap(), t);
        let csv_path = dir.path().join("segs.csv");
        write_segment_csv(&csv_path, std::slice::from_ref(&t)).unwrap();
        assert_eq!(read_segment_csv(&csv_path, &schema).unwrap(), vec![t]);

        fs::write(&p, "NONE\nbogus\n").unwrap();
        match LabeledTimeline::read(&p, &schema) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    fn any_label() -> impl Strategy<Value = ActionLabel> {
        let classes = LabelSchema::new(Level::Element).classes();
        proptest::sample::select(classes)
    }

    proptest! {
        #[test]
        fn segments_invert(labels in proptest::collection::vec(any_label(), 1..60)) {
            let segs = segments_from_frames(&labels);
            prop_assert_eq!(frames_from_segments(&segs).unwrap(), labels);
            for w in segs.windows(2) {
                prop_assert!(w[0].label != w[1].label);
            }
        }

        #[test]
        fn coarsen_idempotent(labels in proptest::collection::vec(any_label(), 1..60)) {
            let t = tl(labels, Level::Element);
            let once = coarsen_annotation(&t);
            prop_assert_eq!(coarsen_annotation(&once), once.clone());
            prop_assert!(once.action_fraction() <= t.action_fraction());
        }
    }
}
