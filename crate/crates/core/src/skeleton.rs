//! Joint sets, keypoint remapping between skeleton conventions, and the
//! 3D pose sequence container.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];
/// One pose: `N` joints, each an `[x, y, z]` coordinate.
pub type Frame3 = Vec<Point3>;

/// Name of the canonical 17-joint skeleton.
pub const CANONICAL: &str = "h36m17";
pub const FS_JUMP3D: &str = "fsjump3d83";

const FS_JUMP3D_DEF: &str = include_str!("../data/fsjump3d83.skeleton");
/// Shipped rule table from the 83-joint capture skeleton to [`CANONICAL`].
pub const FS_JUMP3D_TO_CANONICAL: &str = include_str!("../data/fsjump3d83_to_h36m17.map");

const CANONICAL_JOINTS: [(&str, usize); 17] = [
    ("pelvis", 0),
    ("right_hip", 0),
    ("right_knee", 1),
    ("right_ankle", 2),
    ("left_hip", 0),
    ("left_knee", 4),
    ("left_ankle", 5),
    ("chest", 0),
    ("neck", 7),
    ("nose", 8),
    ("head", 8),
    ("left_shoulder", 8),
    ("left_elbow", 11),
    ("left_wrist", 12),
    ("right_shoulder", 8),
    ("right_elbow", 14),
    ("right_wrist", 15),
];

/// Indices into the canonical skeleton.
pub mod joint {
    pub const PELVIS: usize = 0;
    pub const RIGHT_HIP: usize = 1;
    pub const RIGHT_KNEE: usize = 2;
    pub const RIGHT_ANKLE: usize = 3;
    pub const LEFT_HIP: usize = 4;
    pub const LEFT_KNEE: usize = 5;
    pub const LEFT_ANKLE: usize = 6;
    pub const CHEST: usize = 7;
    pub const NECK: usize = 8;
    pub const NOSE: usize = 9;
    pub const HEAD: usize = 10;
    pub const LEFT_SHOULDER: usize = 11;
    pub const LEFT_ELBOW: usize = 12;
    pub const LEFT_WRIST: usize = 13;
    pub const RIGHT_SHOULDER: usize = 14;
    pub const RIGHT_ELBOW: usize = 15;
    pub const RIGHT_WRIST: usize = 16;
}

/// The four joints alignment and normalization depend on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Landmarks {
    pub left_hip: usize,
    pub right_hip: usize,
    pub chest: usize,
    pub neck: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    name: String,
    joints: Vec<String>,
    parent: Vec<usize>,
    landmarks: Landmarks,
}

impl Skeleton {
    pub fn new(
        name: impl Into<String>,
        joints: Vec<String>,
        parent: Vec<usize>,
        landmarks: Landmarks,
    ) -> Result<Self> {
        let name = name.into();
        let n = joints.len();
        if n == 0 {
            return Err(Error::Validation(format!("skeleton {name} has no joints")));
        }
        if parent.len() != n {
            return Err(Error::Validation(format!(
                "skeleton {name}: {} parents for {n} joints",
                parent.len()
            )));
        }
        let mut seen = HashMap::new();
        for (i, j) in joints.iter().enumerate() {
            if let Some(prev) = seen.insert(j.as_str(), i) {
                return Err(Error::Validation(format!(
                    "skeleton {name}: joint {j} appears at {prev} and {i}"
                )));
            }
        }
        let marks = [
            landmarks.left_hip,
            landmarks.right_hip,
            landmarks.chest,
            landmarks.neck,
        ];
        for (a, &ia) in marks.iter().enumerate() {
            if ia >= n {
                return Err(Error::Validation(format!(
                    "skeleton {name}: landmark index {ia} out of range"
                )));
            }
            if marks[..a].contains(&ia) {
                return Err(Error::Validation(format!(
                    "skeleton {name}: landmark indices must be distinct"
                )));
            }
        }
        let roots: Vec<usize> = (0..n).filter(|&i| parent[i] == i).collect();
        if roots.len() != 1 {
            return Err(Error::Validation(format!(
                "skeleton {name}: expected one root, found {}",
                roots.len()
            )));
        }
        for start in 0..n {
            let mut cur = start;
            for _ in 0..=n {
                if parent[cur] >= n {
                    return Err(Error::Validation(format!(
                        "skeleton {name}: parent index {} out of range",
                        parent[cur]
                    )));
                }
                if parent[cur] == cur {
                    break;
                }
                cur = parent[cur];
            }
            if parent[cur] != cur {
                return Err(Error::Validation(format!(
                    "skeleton {name}: parent cycle through joint {start}"
                )));
            }
        }
        Ok(Skeleton {
            name,
            joints,
            parent,
            landmarks,
        })
    }

    /// The canonical 17-joint skeleton (pelvis root, hip-midpoint convention).
    pub fn canonical() -> Self {
        Skeleton {
            name: CANONICAL.to_string(),
            joints: CANONICAL_JOINTS.iter().map(|(n, _)| n.to_string()).collect(),
            parent: CANONICAL_JOINTS.iter().map(|&(_, p)| p).collect(),
            landmarks: Landmarks {
                left_hip: joint::LEFT_HIP,
                right_hip: joint::RIGHT_HIP,
                chest: joint::CHEST,
                neck: joint::NECK,
            },
        }
    }

    pub fn fs_jump3d() -> Self {
        Self::parse_definition(FS_JUMP3D_DEF).expect("shipped skeleton definition is valid")
    }

    /// Looks up a built-in skeleton.
    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            CANONICAL => Some(Self::canonical()),
            FS_JUMP3D => Some(Self::fs_jump3d()),
            _ => None,
        }
    }

    /// Parses the plain-text skeleton definition format:
    ///
    /// ```text
    /// skeleton <name>
    /// landmarks left_hip=<j> right_hip=<j> chest=<j> neck=<j>
    /// <joint> <parent | ->
    /// ```
    pub fn parse_definition(text: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: "<skeleton>".into(),
            line,
            message,
        };
        let mut name = None;
        let mut marks: Option<(usize, HashMap<String, String>)> = None;
        let mut joints: Vec<(String, Option<String>, usize)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks[0] {
                "skeleton" if toks.len() == 2 => name = Some(toks[1].to_string()),
                "landmarks" => {
                    let mut m = HashMap::new();
                    for t in &toks[1..] {
                        let (k, v) = t
                            .split_once('=')
                            .ok_or_else(|| err(lineno, format!("bad landmark entry {t}")))?;
                        m.insert(k.to_string(), v.to_string());
                    }
                    marks = Some((lineno, m));
                }
                _ if toks.len() == 2 => {
                    let parent = (toks[1] != "-").then(|| toks[1].to_string());
                    joints.push((toks[0].to_string(), parent, lineno));
                }
                _ => return Err(err(lineno, format!("unrecognized line `{line}`"))),
            }
        }
        let name = name.ok_or_else(|| err(0, "missing `skeleton <name>` line".into()))?;
        let index: HashMap<&str, usize> = joints
            .iter()
            .enumerate()
            .map(|(i, (n, _, _))| (n.as_str(), i))
            .collect();
        let mut parent = Vec::with_capacity(joints.len());
        for (i, (_, p, lineno)) in joints.iter().enumerate() {
            match p {
                None => parent.push(i),
                Some(p) => parent.push(
                    *index
                        .get(p.as_str())
                        .ok_or_else(|| err(*lineno, format!("unknown parent joint {p}")))?,
                ),
            }
        }
        let (mline, marks) = marks.ok_or_else(|| err(0, "missing landmarks line".into()))?;
        let lookup = |key: &str| -> Result<usize> {
            let j = marks
                .get(key)
                .ok_or_else(|| err(mline, format!("missing landmark {key}")))?;
            index
                .get(j.as_str())
                .copied()
                .ok_or_else(|| err(mline, format!("landmark {key} names unknown joint {j}")))
        };
        let landmarks = Landmarks {
            left_hip: lookup("left_hip")?,
            right_hip: lookup("right_hip")?,
            chest: lookup("chest")?,
            neck: lookup("neck")?,
        };
        Skeleton::new(
            name,
            joints.into_iter().map(|(n, _, _)| n).collect(),
            parent,
            landmarks,
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn joints(&self) -> &[String] {
        &self.joints
    }

    pub fn parents(&self) -> &[usize] {
        &self.parent
    }

    pub fn landmarks(&self) -> Landmarks {
        self.landmarks
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn root(&self) -> usize {
        (0..self.parent.len())
            .find(|&i| self.parent[i] == i)
            .expect("validated skeleton has a root")
    }

    pub fn index_of(&self, joint: &str) -> Option<usize> {
        self.joints.iter().position(|j| j == joint)
    }

    /// Removes joints, reattaching their children to the nearest kept ancestor.
    fn without(&self, dropped: &[bool]) -> Result<Skeleton> {
        let kept: Vec<usize> = (0..self.len()).filter(|&i| !dropped[i]).collect();
        let mut new_index = vec![usize::MAX; self.len()];
        for (k, &i) in kept.iter().enumerate() {
            new_index[i] = k;
        }
        let root = self.root();
        if dropped[root] {
            return Err(Error::Validation(format!(
                "cannot drop root joint {}",
                self.joints[root]
            )));
        }
        let parent = kept
            .iter()
            .map(|&i| {
                let mut p = self.parent[i];
                while dropped[p] {
                    p = self.parent[p];
                }
                new_index[p]
            })
            .collect();
        let remap = |i: usize, what: &str| -> Result<usize> {
            if dropped[i] {
                Err(Error::Validation(format!("landmark joint {what} cannot be dropped")))
            } else {
                Ok(new_index[i])
            }
        };
        let lm = self.landmarks;
        let dropped_names: Vec<&str> = (0..self.len())
            .filter(|&i| dropped[i])
            .map(|i| self.joints[i].as_str())
            .collect();
        Skeleton::new(
            format!("{}-without-{}", self.name, dropped_names.join("+")),
            kept.iter().map(|&i| self.joints[i].clone()).collect(),
            parent,
            Landmarks {
                left_hip: remap(lm.left_hip, "left_hip")?,
                right_hip: remap(lm.right_hip, "right_hip")?,
                chest: remap(lm.chest, "chest")?,
                neck: remap(lm.neck, "neck")?,
            },
        )
    }
}

/// A time-ordered series of 3D poses on one skeleton.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseSequence3D {
    pub skeleton: Skeleton,
    pub frames: Vec<Frame3>,
    /// Frames per second.
    pub fps: f64,
    pub subject: String,
    pub trial: String,
}

impl PoseSequence3D {
    pub fn new(
        skeleton: Skeleton,
        frames: Vec<Frame3>,
        fps: f64,
        subject: impl Into<String>,
        trial: impl Into<String>,
    ) -> Result<Self> {
        let seq = PoseSequence3D {
            skeleton,
            frames,
            fps,
            subject: subject.into(),
            trial: trial.into(),
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Validation(format!(
                "sequence {}/{} has no frames",
                self.subject, self.trial
            )));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::Validation(format!("fps must be positive, got {}", self.fps)));
        }
        let n = self.skeleton.len();
        for (t, f) in self.frames.iter().enumerate() {
            if f.len() != n {
                return Err(Error::Validation(format!(
                    "frame {t} has {} joints, skeleton {} has {n}",
                    f.len(),
                    self.skeleton.name()
                )));
            }
            if let Some(j) = f.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
                return Err(Error::Validation(format!(
                    "non-finite coordinate at frame {t}, joint {j}"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rule {
    Copy(usize),
    Midpoint(usize, usize),
    Drop,
}

/// Per-target-joint rules producing one skeleton's joints from another's.
#[derive(Clone, Debug, PartialEq)]
pub struct KeypointMap {
    source: Skeleton,
    target: Skeleton,
    rules: Vec<Rule>,
    output: Skeleton,
}

impl KeypointMap {
    pub fn new(source: Skeleton, target: Skeleton, rules: Vec<Rule>) -> Result<Self> {
        if rules.len() != target.len() {
            return Err(Error::Validation(format!(
                "{} rules for {} target joints",
                rules.len(),
                target.len()
            )));
        }
        for (t, r) in rules.iter().enumerate() {
            let bad = match *r {
                Rule::Copy(a) => a >= source.len(),
                Rule::Midpoint(a, b) => a >= source.len() || b >= source.len(),
                Rule::Drop => false,
            };
            if bad {
                return Err(Error::Validation(format!(
                    "rule for {} references a joint missing from {}",
                    target.joints[t],
                    source.name()
                )));
            }
        }
        let dropped: Vec<bool> = rules.iter().map(|r| *r == Rule::Drop).collect();
        let output = if dropped.iter().any(|&d| d) {
            target.without(&dropped)?
        } else {
            target.clone()
        };
        Ok(KeypointMap {
            source,
            target,
            rules,
            output,
        })
    }

    pub fn identity(skeleton: &Skeleton) -> Self {
        let rules = (0..skeleton.len()).map(Rule::Copy).collect();
        KeypointMap::new(skeleton.clone(), skeleton.clone(), rules).expect("identity map is valid")
    }

    /// The shipped 83-joint to canonical rule table.
    pub fn fs_jump3d_to_canonical() -> Self {
        Self::parse(FS_JUMP3D_TO_CANONICAL, &builtin_skeletons())
            .expect("shipped rule table is valid")
    }

    /// Parses `target_joint <- copy src | mid srcA srcB | drop` lines, preceded
    /// by `source <skeleton>` and `target <skeleton>` directives naming entries
    /// of `skeletons`.
    pub fn parse(text: &str, skeletons: &[Skeleton]) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: "<keypoint map>".into(),
            line,
            message,
        };
        let find = |line: usize, name: &str| {
            skeletons
                .iter()
                .find(|s| s.name() == name)
                .cloned()
                .ok_or_else(|| Error::Schema(format!("line {line}: unknown skeleton {name}")))
        };
        let mut source: Option<Skeleton> = None;
        let mut target: Option<Skeleton> = None;
        let mut rules: Vec<Option<Rule>> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks.as_slice() {
                ["source", name] => source = Some(find(lineno, name)?),
                ["target", name] => {
                    let t = find(lineno, name)?;
                    rules = vec![None; t.len()];
                    target = Some(t);
                }
                [tj, "<-", rest @ ..] => {
                    let (src, tgt) = match (&source, &target) {
                        (Some(s), Some(t)) => (s, t),
                        _ => {
                            return Err(err(lineno, "rule before source/target directives".into()))
                        }
                    };
                    let ti = tgt.index_of(tj).ok_or_else(|| {
                        Error::Validation(format!("line {lineno}: unknown target joint {tj}"))
                    })?;
                    let sj = |name: &str| {
                        src.index_of(name).ok_or_else(|| {
                            Error::Validation(format!("line {lineno}: unknown source joint {name}"))
                        })
                    };
                    let rule = match rest {
                        ["copy", a] => Rule::Copy(sj(a)?),
                        ["mid", a, b] => Rule::Midpoint(sj(a)?, sj(b)?),
                        ["drop"] => Rule::Drop,
                        _ => return Err(err(lineno, format!("bad rule `{line}`"))),
                    };
                    if rules[ti].replace(rule).is_some() {
                        return Err(Error::Validation(format!(
                            "line {lineno}: second rule for target joint {tj}"
                        )));
                    }
                }
                _ => return Err(err(lineno, format!("unrecognized line `{line}`"))),
            }
        }
        let (source, target) = match (source, target) {
            (Some(s), Some(t)) => (s, t),
            _ => return Err(err(0, "missing source or target directive".into())),
        };
        let mut out = Vec::with_capacity(rules.len());
        for (i, r) in rules.into_iter().enumerate() {
            out.push(r.ok_or_else(|| {
                Error::Validation(format!("no rule for target joint {}", target.joints[i]))
            })?);
        }
        KeypointMap::new(source, target, out)
    }

    /// Renders the map in the text format accepted by [`KeypointMap::parse`].
    pub fn to_text(&self) -> String {
        let mut s = format!("source {}\ntarget {}\n", self.source.name(), self.target.name());
        for (t, r) in self.rules.iter().enumerate() {
            let sj = |i: usize| self.source.joints[i].as_str();
            let rule = match *r {
                Rule::Copy(a) => format!("copy {}", sj(a)),
                Rule::Midpoint(a, b) => format!("mid {} {}", sj(a), sj(b)),
                Rule::Drop => "drop".to_string(),
            };
            s.push_str(&format!("{} <- {}\n", self.target.joints[t], rule));
        }
        s
    }

    pub fn source(&self) -> &Skeleton {
        &self.source
    }

    pub fn target(&self) -> &Skeleton {
        &self.target
    }

    /// Skeleton of the remapped output; equals the target unless rules drop joints.
    pub fn output_skeleton(&self) -> &Skeleton {
        &self.output
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    /// Composes `self` (A→B) with `next` (B→C) into A→C when every resulting
    /// rule is still a copy or a midpoint of two source joints.
    pub fn compose(&self, next: &KeypointMap) -> Option<KeypointMap> {
        if next.source != self.target {
            return None;
        }
        let mut rules = Vec::with_capacity(next.rules.len());
        for r in &next.rules {
            let composed = match *r {
                Rule::Drop => Rule::Drop,
                Rule::Copy(b) => self.rules[b],
                Rule::Midpoint(b1, b2) => match (self.rules[b1], self.rules[b2]) {
                    (Rule::Copy(a1), Rule::Copy(a2)) => Rule::Midpoint(a1, a2),
                    (r1, r2) if r1 == r2 && r1 != Rule::Drop => r1,
                    _ => return None,
                },
            };
            rules.push(composed);
        }
        KeypointMap::new(self.source.clone(), next.target.clone(), rules).ok()
    }

    pub fn apply_frame(&self, frame: &[Point3]) -> Frame3 {
        self.rules
            .iter()
            .filter_map(|r| match *r {
                Rule::Copy(a) => Some(frame[a]),
                Rule::Midpoint(a, b) => {
                    let (p, q) = (frame[a], frame[b]);
                    Some([
                        0.5 * (p[0] + q[0]),
                        0.5 * (p[1] + q[1]),
                        0.5 * (p[2] + q[2]),
                    ])
                }
                Rule::Drop => None,
            })
            .collect()
    }
}

pub fn builtin_skeletons() -> Vec<Skeleton> {
    vec![Skeleton::canonical(), Skeleton::fs_jump3d()]
}

/// Converts a sequence onto the map's target skeleton, frame by frame.
pub fn remap_keypoints(seq: &PoseSequence3D, map: &KeypointMap) -> Result<PoseSequence3D> {
    if seq.skeleton != *map.source() {
        return Err(Error::Schema(format!(
            "sequence is on skeleton {}, map expects {}",
            seq.skeleton.name(),
            map.source().name()
        )));
    }
    let n = seq.skeleton.len();
    let frames = seq
        .frames
        .iter()
        .enumerate()
        .map(|(t, f)| {
            if f.len() != n {
                Err(Error::Validation(format!(
                    "frame {t} has {} joints, expected {n}",
                    f.len()
                )))
            } else {
                Ok(map.apply_frame(f))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PoseSequence3D {
        skeleton: map.output_skeleton().clone(),
        frames,
        fps: seq.fps,
        subject: seq.subject.clone(),
        trial: seq.trial.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pose(n: usize, k: f64) -> Frame3 {
        (0..n)
            .map(|i| [i as f64 * k, -(i as f64) + k, 0.5 * i as f64])
            .collect()
    }

    #[test]
    fn canonical_skeleton_is_valid() {
        let s = Skeleton::canonical();
        assert_eq!(s.len(), 17);
        assert_eq!(s.root(), joint::PELVIS);
        let again = Skeleton::new(
            s.name(),
            s.joints().to_vec(),
            s.parents().to_vec(),
            s.landmarks(),
        );
        assert_eq!(again.unwrap(), s);
    }

    #[test]
    fn capture_skeleton_has_83_joints() {
        let s = Skeleton::fs_jump3d();
        assert_eq!(s.len(), 83);
        assert_eq!(s.joints()[s.landmarks().chest], "chest");
    }

    #[test]
    fn skeleton_validation_rejects_bad_trees() {
        let names = |n: usize| (0..n).map(|i| format!("j{i}")).collect::<Vec<_>>();
        let lm = Landmarks {
            left_hip: 1,
            right_hip: 2,
            chest: 3,
            neck: 4,
        };
        // Two roots.
        assert!(Skeleton::new("x", names(5), vec![0, 1, 0, 0, 0], lm).is_err());
        // Cycle 1 -> 2 -> 1.
        assert!(Skeleton::new("x", names(5), vec![0, 2, 1, 0, 0], lm).is_err());
        // Duplicate landmark.
        let dup = Landmarks { neck: 3, ..lm };
        assert!(Skeleton::new("x", names(5), vec![0, 0, 0, 0, 0], dup).is_err());
        // Duplicate joint names.
        let mut n = names(5);
        n[4] = "j0".into();
        assert!(Skeleton::new("x", n, vec![0, 0, 0, 0, 0], lm).is_err());
        assert!(Skeleton::new("x", names(5), vec![0, 0, 0, 0, 0], lm).is_ok());
    }

    #[test]
    fn identity_map_is_bit_identical() {
        let s = Skeleton::canonical();
        let seq = PoseSequence3D::new(s.clone(), vec![pose(17, 0.3), pose(17, 1.7)], 30.0, "a", "b")
            .unwrap();
        let out = remap_keypoints(&seq, &KeypointMap::identity(&s)).unwrap();
        assert_eq!(out, seq);
    }

    #[test]
    fn midpoint_rule_averages() {
        let s = Skeleton::canonical();
        let mut rules: Vec<Rule> = (0..17).map(Rule::Copy).collect();
        rules[joint::PELVIS] = Rule::Midpoint(joint::LEFT_HIP, joint::RIGHT_HIP);
        let map = KeypointMap::new(s.clone(), s.clone(), rules).unwrap();
        let mut f = pose(17, 1.0);
        f[joint::LEFT_HIP] = [0.1, 0.0, 1.0];
        f[joint::RIGHT_HIP] = [-0.1, 0.0, 1.0];
        let out = map.apply_frame(&f);
        assert_eq!(out[joint::PELVIS], [0.0, 0.0, 1.0]);
    }

    #[test]
    fn capture_frame_maps_to_hand_built_reference() {
        let src = Skeleton::fs_jump3d();
        let map = KeypointMap::fs_jump3d_to_canonical();
        // Every joint gets a unique coordinate so any mix-up is visible.
        let frame: Frame3 = (0..83)
            .map(|i| [i as f64, 100.0 + 2.0 * i as f64, -3.0 * i as f64])
            .collect();
        let seq = PoseSequence3D::new(src.clone(), vec![frame.clone(); 3], 60.0, "s", "t").unwrap();
        let out = remap_keypoints(&seq, &map).unwrap();
        assert_eq!(out.skeleton, Skeleton::canonical());
        assert!(out.frames.iter().all(|f| f.len() == 17));

        // Reference table written out by hand from the rule file.
        let at = |name: &str| frame[src.index_of(name).unwrap()];
        let lh = at("left_hip");
        let rh = at("right_hip");
        let reference: [(usize, Point3); 17] = [
            (
                joint::PELVIS,
                [(lh[0] + rh[0]) / 2.0, (lh[1] + rh[1]) / 2.0, (lh[2] + rh[2]) / 2.0],
            ),
            (joint::RIGHT_HIP, rh),
            (joint::RIGHT_KNEE, at("right_knee")),
            (joint::RIGHT_ANKLE, at("right_ankle")),
            (joint::LEFT_HIP, lh),
            (joint::LEFT_KNEE, at("left_knee")),
            (joint::LEFT_ANKLE, at("left_ankle")),
            (joint::CHEST, at("chest")),
            (joint::NECK, at("neck")),
            (joint::NOSE, at("nose")),
            (joint::HEAD, at("head_top")),
            (joint::LEFT_SHOULDER, at("left_shoulder")),
            (joint::LEFT_ELBOW, at("left_elbow")),
            (joint::LEFT_WRIST, at("left_wrist")),
            (joint::RIGHT_SHOULDER, at("right_shoulder")),
            (joint::RIGHT_ELBOW, at("right_elbow")),
            (joint::RIGHT_WRIST, at("right_wrist")),
        ];
        for f in &out.frames {
            for (j, p) in reference {
                assert_eq!(f[j], p, "joint {j}");
            }
        }
        // Landmarks as literal numbers: left hip is joint 51, right hip 67.
        assert_eq!(src.index_of("left_hip"), Some(51));
        assert_eq!(src.index_of("right_hip"), Some(67));
        assert_eq!(out.frames[0][joint::LEFT_HIP], [51.0, 202.0, -153.0]);
        assert_eq!(out.frames[0][joint::PELVIS], [59.0, 218.0, -177.0]);
    }

    #[test]
    fn skeleton_mismatch_is_schema_error() {
        let seq = PoseSequence3D::new(Skeleton::canonical(), vec![pose(17, 0.0)], 30.0, "a", "b")
            .unwrap();
        let err = remap_keypoints(&seq, &KeypointMap::fs_jump3d_to_canonical()).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn rules_referencing_missing_joints_are_rejected() {
        let s = Skeleton::canonical();
        let mut rules: Vec<Rule> = (0..17).map(Rule::Copy).collect();
        rules[3] = Rule::Copy(40);
        assert!(matches!(
            KeypointMap::new(s.clone(), s.clone(), rules),
            Err(Error::Validation(_))
        ));
        let text = "source h36m17\ntarget h36m17\npelvis <- copy tail\n";
        assert!(matches!(
            KeypointMap::parse(text, &builtin_skeletons()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn map_text_round_trips() {
        let map = KeypointMap::fs_jump3d_to_canonical();
        let again = KeypointMap::parse(&map.to_text(), &builtin_skeletons()).unwrap();
        assert_eq!(again, map);
    }

    #[test]
    fn drop_rule_shrinks_output_skeleton() {
        let s = Skeleton::canonical();
        let mut rules: Vec<Rule> = (0..17).map(Rule::Copy).collect();
        rules[joint::NOSE] = Rule::Drop;
        let map = KeypointMap::new(s.clone(), s.clone(), rules).unwrap();
        assert_eq!(map.output_skeleton().len(), 16);
        assert_eq!(map.output_skeleton().index_of("nose"), None);
        let seq = PoseSequence3D::new(s.clone(), vec![pose(17, 2.0)], 30.0, "a", "b").unwrap();
        let out = remap_keypoints(&seq, &map).unwrap();
        out.validate().unwrap();

        let mut rules: Vec<Rule> = (0..17).map(Rule::Copy).collect();
        rules[joint::CHEST] = Rule::Drop;
        assert!(KeypointMap::new(s.clone(), s, rules).is_err());
    }
}
