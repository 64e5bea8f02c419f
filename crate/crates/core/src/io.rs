//! File formats: 3D pose datasets (JSONL and CSV), canonical sequences,
//! contrastive pair exports and embedding dumps.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::camera::ContrastivePair;
use crate::error::{Error, Result};
use crate::geometry::CanonicalPose;
use crate::nn::Tensor;
use crate::skeleton::{Frame3, Landmarks, PoseSequence3D, Skeleton};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoseFormat {
    Jsonl,
    Csv,
}

impl FromStr for PoseFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" => Ok(PoseFormat::Jsonl),
            "csv" => Ok(PoseFormat::Csv),
            other => Err(Error::Config(format!("unknown pose format {other:?} (jsonl or csv)"))),
        }
    }
}

impl PoseFormat {
    /// Guesses the format from the file extension, defaulting to JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => PoseFormat::Csv,
            _ => PoseFormat::Jsonl,
        }
    }
}

/// Skeleton field of a JSONL record: a built-in name or an inline definition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum SkeletonField {
    Named(String),
    Inline(InlineSkeleton),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct InlineSkeleton {
    name: String,
    joints: Vec<String>,
    parents: Vec<usize>,
    /// Joint names: left hip, right hip, chest, neck.
    landmarks: [String; 4],
}

impl SkeletonField {
    fn from_skeleton(s: &Skeleton) -> Self {
        if Skeleton::by_name(s.name()).as_ref() == Some(s) {
            return SkeletonField::Named(s.name().to_string());
        }
        let lm = s.landmarks();
        let j = |i: usize| s.joints()[i].clone();
        SkeletonField::Inline(InlineSkeleton {
            name: s.name().to_string(),
            joints: s.joints().to_vec(),
            parents: s.parents().to_vec(),
            landmarks: [j(lm.left_hip), j(lm.right_hip), j(lm.chest), j(lm.neck)],
        })
    }

    fn resolve(self) -> Result<Skeleton> {
        match self {
            SkeletonField::Named(n) => {
                Skeleton::by_name(&n).ok_or_else(|| Error::Schema(format!("unknown skeleton {n:?}")))
            }
            SkeletonField::Inline(d) => {
                let find = |name: &str| {
                    d.joints
                        .iter()
                        .position(|j| j == name)
                        .ok_or_else(|| Error::Validation(format!("landmark joint {name:?} not in skeleton {}", d.name)))
                };
                let landmarks = Landmarks {
                    left_hip: find(&d.landmarks[0])?,
                    right_hip: find(&d.landmarks[1])?,
                    chest: find(&d.landmarks[2])?,
                    neck: find(&d.landmarks[3])?,
                };
                Skeleton::new(d.name.clone(), d.joints.clone(), d.parents.clone(), landmarks)
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct PoseRecord {
    subject: String,
    trial: String,
    fps: f64,
    skeleton: SkeletonField,
    frames: Vec<Frame3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    facing_angle: Option<Vec<f64>>,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Writes one JSON value per line.
pub fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let mut out = create(path)?;
    for r in records {
        serde_json::to_writer(&mut out, &r).map_err(|e| Error::io(path, e.into()))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Parses every nonblank line as `T`, reporting 1-based line numbers.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| parse_err(path, i + 1, e.to_string()))?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

fn record_to_sequence(path: &Path, line: usize, rec: PoseRecord) -> Result<(PoseSequence3D, Option<Vec<f64>>)> {
    let skeleton = rec.skeleton.resolve()?;
    let seq = PoseSequence3D::new(skeleton, rec.frames, rec.fps, rec.subject, rec.trial).map_err(|e| match e {
        Error::Validation(m) => Error::Validation(format!("{}:{line}: {m}", path.display())),
        other => other,
    })?;
    Ok((seq, rec.facing_angle))
}

fn sequence_record(seq: &PoseSequence3D, facing: Option<Vec<f64>>) -> PoseRecord {
    PoseRecord {
        subject: seq.subject.clone(),
        trial: seq.trial.clone(),
        fps: seq.fps,
        skeleton: SkeletonField::from_skeleton(&seq.skeleton),
        frames: seq.frames.clone(),
        facing_angle: facing,
    }
}

const CSV_HEADER: [&str; 9] = ["subject", "trial", "fps", "skeleton", "frame", "joint", "x", "y", "z"];

/// Loads 3D pose sequences. JSONL: one sequence object per line. CSV: one
/// row per joint with columns `subject,trial,fps,skeleton,frame,joint,x,y,z`,
/// rows of a sequence contiguous and in frame/joint order; the skeleton must
/// be a built-in name.
pub fn load_pose_dataset(path: &Path, format: PoseFormat) -> Result<Vec<PoseSequence3D>> {
    match format {
        PoseFormat::Jsonl => read_jsonl::<PoseRecord>(path)?
            .into_iter()
            .map(|(line, rec)| record_to_sequence(path, line, rec).map(|(s, _)| s))
            .collect(),
        PoseFormat::Csv => load_pose_csv(path),
    }
}

pub fn save_pose_dataset(path: &Path, seqs: &[PoseSequence3D], format: PoseFormat) -> Result<()> {
    match format {
        PoseFormat::Jsonl => write_jsonl(path, seqs.iter().map(|s| sequence_record(s, None))),
        PoseFormat::Csv => save_pose_csv(path, seqs),
    }
}

fn save_pose_csv(path: &Path, seqs: &[PoseSequence3D]) -> Result<()> {
    let io = |e: csv::Error| Error::io(path, std::io::Error::other(e.to_string()));
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(CSV_HEADER).map_err(io)?;
    for s in seqs {
        if Skeleton::by_name(s.skeleton.name()).as_ref() != Some(&s.skeleton) {
            return Err(Error::Schema(format!(
                "CSV needs a built-in skeleton, {} is custom",
                s.skeleton.name()
            )));
        }
        for (t, f) in s.frames.iter().enumerate() {
            for (j, p) in f.iter().enumerate() {
                w.write_record([
                    s.subject.clone(),
                    s.trial.clone(),
                    s.fps.to_string(),
                    s.skeleton.name().to_string(),
                    t.to_string(),
                    j.to_string(),
                    p[0].to_string(),
                    p[1].to_string(),
                    p[2].to_string(),
                ])
                .map_err(io)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn load_pose_csv(path: &Path) -> Result<Vec<PoseSequence3D>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(open(path)?);
    let header = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        if header.is_empty() {
            return Ok(Vec::new());
        }
        return Err(parse_err(path, 1, format!("expected header {}", CSV_HEADER.join(","))));
    }
    struct Partial {
        subject: String,
        trial: String,
        fps: f64,
        skeleton: Skeleton,
        frames: Vec<Frame3>,
    }
    let mut out = Vec::new();
    let mut cur: Option<Partial> = None;
    let finish = |p: Partial| PoseSequence3D::new(p.skeleton, p.frames, p.fps, p.subject, p.trial);
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| parse_err(path, line, e.to_string()))?;
        if row.len() != CSV_HEADER.len() {
            return Err(parse_err(path, line, format!("expected 9 fields, got {}", row.len())));
        }
        let num = |k: usize| -> Result<f64> {
            row[k]
                .trim()
                .parse::<f64>()
                .map_err(|e| parse_err(path, line, format!("{}: {e}", CSV_HEADER[k])))
        };
        let idx = |k: usize| -> Result<usize> {
            row[k]
                .trim()
                .parse::<usize>()
                .map_err(|e| parse_err(path, line, format!("{}: {e}", CSV_HEADER[k])))
        };
        let (frame, joint) = (idx(4)?, idx(5)?);
        let point = [num(6)?, num(7)?, num(8)?];
        let starts_new = match &cur {
            Some(p) => p.subject != row[0] || p.trial != row[1] || (frame == 0 && joint == 0),
            None => true,
        };
        if starts_new {
            if let Some(p) = cur.take() {
                out.push(finish(p)?);
            }
            let skeleton = Skeleton::by_name(&row[3])
                .ok_or_else(|| Error::Schema(format!("{}:{line}: unknown skeleton {:?}", path.display(), &row[3])))?;
            cur = Some(Partial {
                subject: row[0].to_string(),
                trial: row[1].to_string(),
                fps: num(2)?,
                skeleton,
                frames: Vec::new(),
            });
        }
        let p = cur.as_mut().expect("sequence started above");
        let n = p.skeleton.len();
        if joint == 0 {
            if frame != p.frames.len() {
                return Err(parse_err(path, line, format!("expected frame {}, got {frame}", p.frames.len())));
            }
            p.frames.push(Vec::with_capacity(n));
        }
        let nframes = p.frames.len();
        let f = p
            .frames
            .last_mut()
            .ok_or_else(|| parse_err(path, line, "sequence must start at frame 0, joint 0"))?;
        if frame + 1 != nframes || joint != f.len() || joint >= n {
            return Err(parse_err(path, line, format!("out-of-order row: frame {frame}, joint {joint}")));
        }
        f.push(point);
    }
    if let Some(p) = cur {
        out.push(finish(p)?);
    }
    Ok(out)
}

/// A canonicalized sequence: the pose dataset schema plus per-frame facing.
#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalSequence {
    pub subject: String,
    pub trial: String,
    pub fps: f64,
    pub skeleton: Skeleton,
    pub poses: Vec<CanonicalPose>,
}

impl CanonicalSequence {
    pub fn from_sequence(seq: &PoseSequence3D, poses: Vec<CanonicalPose>) -> Self {
        CanonicalSequence {
            subject: seq.subject.clone(),
            trial: seq.trial.clone(),
            fps: seq.fps,
            skeleton: seq.skeleton.clone(),
            poses,
        }
    }
}

pub fn save_canonical(path: &Path, seqs: &[CanonicalSequence]) -> Result<()> {
    write_jsonl(
        path,
        seqs.iter().map(|s| PoseRecord {
            subject: s.subject.clone(),
            trial: s.trial.clone(),
            fps: s.fps,
            skeleton: SkeletonField::from_skeleton(&s.skeleton),
            frames: s.poses.iter().map(|p| p.coords.clone()).collect(),
            facing_angle: Some(s.poses.iter().map(|p| p.facing_angle).collect()),
        }),
    )
}

pub fn load_canonical(path: &Path) -> Result<Vec<CanonicalSequence>> {
    read_jsonl::<PoseRecord>(path)?
        .into_iter()
        .map(|(line, rec)| {
            let (seq, facing) = record_to_sequence(path, line, rec)?;
            let facing = facing.ok_or_else(|| parse_err(path, line, "missing facing_angle"))?;
            if facing.len() != seq.frames.len() {
                return Err(parse_err(path, line, "facing_angle length differs from frame count"));
            }
            let poses = seq
                .frames
                .iter()
                .zip(facing)
                .map(|(f, a)| CanonicalPose {
                    coords: f.clone(),
                    facing_angle: a,
                })
                .collect();
            Ok(CanonicalSequence::from_sequence(&seq, poses))
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct PairRecord {
    anchor: Vec<[f64; 2]>,
    positive: Vec<[f64; 2]>,
    mask_a: Vec<bool>,
    mask_p: Vec<bool>,
    v_a: [f64; 3],
    v_p: [f64; 3],
}

pub fn save_pairs(path: &Path, pairs: &[ContrastivePair]) -> Result<()> {
    write_jsonl(
        path,
        pairs.iter().map(|p| PairRecord {
            anchor: p.anchor.coords.clone(),
            positive: p.positive.coords.clone(),
            mask_a: p.anchor.mask.clone(),
            mask_p: p.positive.mask.clone(),
            v_a: p.v_anchor,
            v_p: p.v_positive,
        }),
    )
}

pub fn load_pairs(path: &Path) -> Result<Vec<ContrastivePair>> {
    read_jsonl::<PairRecord>(path)?
        .into_iter()
        .map(|(line, r)| {
            if r.anchor.len() != r.mask_a.len() || r.positive.len() != r.mask_p.len() || r.anchor.len() != r.positive.len()
            {
                return Err(parse_err(path, line, "pair fields differ in joint count"));
            }
            Ok(ContrastivePair {
                anchor: crate::camera::Pose2D {
                    coords: r.anchor,
                    mask: r.mask_a,
                },
                positive: crate::camera::Pose2D {
                    coords: r.positive,
                    mask: r.mask_p,
                },
                v_anchor: r.v_a,
                v_positive: r.v_p,
            })
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct EmbeddingRecord {
    index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<usize>,
    d_pose: usize,
    embedding: Vec<Vec<f64>>,
}

/// One line per sequence: `{index, label?, d_pose, embedding: T x d}`.
pub fn save_embeddings(path: &Path, rows: &[(Option<usize>, Tensor)], d_pose: usize) -> Result<()> {
    write_jsonl(
        path,
        rows.iter().enumerate().map(|(index, (label, z))| EmbeddingRecord {
            index,
            label: *label,
            d_pose,
            embedding: z.to_rows(),
        }),
    )
}

pub fn load_embeddings(path: &Path) -> Result<Vec<(Option<usize>, Tensor)>> {
    read_jsonl::<EmbeddingRecord>(path)?
        .into_iter()
        .map(|(line, r)| {
            let z = Tensor::from_rows(&r.embedding).map_err(|e| parse_err(path, line, e.to_string()))?;
            Ok((r.label, z))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;

    fn random_dataset(n: usize, seed: u64) -> Vec<PoseSequence3D> {
        let mut r = rng::seeded(seed);
        (0..n)
            .map(|i| {
                let t = r.random_range(1..6);
                let frames = (0..t)
                    .map(|_| (0..17).map(|_| [r.random(), r.random(), r.random::<f64>() * 2.0]).collect())
                    .collect();
                PoseSequence3D::new(Skeleton::canonical(), frames, 30.0 + i as f64, format!("s{i}"), "t").unwrap()
            })
            .collect()
    }

    #[test]
    fn jsonl_and_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data = random_dataset(10, 3);
        for fmt in [PoseFormat::Jsonl, PoseFormat::Csv] {
            let p = dir.path().join(format!("d.{fmt:?}"));
            save_pose_dataset(&p, &data, fmt).unwrap();
            assert_eq!(load_pose_dataset(&p, fmt).unwrap(), data);
        }
    }

    #[test]
    fn single_sequence_and_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.jsonl");
        let frame: Vec<[f64; 3]> = vec![[0.0, 0.0, 1.0]; 17];
        let rec = serde_json::json!({"subject": "a", "trial": "b", "fps": 60.0, "skeleton": "h36m17", "frames": [frame, frame]});
        std::fs::write(&p, format!("{rec}\n")).unwrap();
        let seqs = load_pose_dataset(&p, PoseFormat::Jsonl).unwrap();
        assert_eq!(seqs.len(), 1);
        assert_eq!((seqs[0].frames.len(), seqs[0].frames[0].len()), (2, 17));
        std::fs::write(&p, "").unwrap();
        assert!(load_pose_dataset(&p, PoseFormat::Jsonl).unwrap().is_empty());
        let c = dir.path().join("e.csv");
        std::fs::write(&c, "").unwrap();
        assert!(load_pose_dataset(&c, PoseFormat::Csv).unwrap().is_empty());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        let good = serde_json::json!({"subject": "a", "trial": "b", "fps": 60.0, "skeleton": "h36m17", "frames": [vec![[0.0; 3]; 17]]});
        std::fs::write(&p, format!("{good}\n\n{{\"subject\": 3}}\n")).unwrap();
        match load_pose_dataset(&p, PoseFormat::Jsonl) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let c = dir.path().join("bad.csv");
        std::fs::write(&c, format!("{}\na,b,30,h36m17,0,0,NaN,0,0\n", CSV_HEADER.join(","))).unwrap();
        let err = load_pose_dataset(&c, PoseFormat::Csv).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err:?}");
        std::fs::write(&c, format!("{}\na,b,30,h36m17,0,1,0,0,0\n", CSV_HEADER.join(","))).unwrap();
        match load_pose_dataset(&c, PoseFormat::Csv) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn inline_skeleton_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let sk = Skeleton::new(
            "tiny",
            ["root", "lh", "rh", "chest", "neck"].map(String::from).to_vec(),
            vec![0, 0, 0, 0, 3],
            Landmarks {
                left_hip: 1,
                right_hip: 2,
                chest: 3,
                neck: 4,
            },
        )
        .unwrap();
        let seq = PoseSequence3D::new(sk, vec![vec![[0.5; 3]; 5]], 25.0, "x", "y").unwrap();
        let p = dir.path().join("t.jsonl");
        save_pose_dataset(&p, std::slice::from_ref(&seq), PoseFormat::Jsonl).unwrap();
        assert_eq!(load_pose_dataset(&p, PoseFormat::Jsonl).unwrap(), vec![seq.clone()]);
        assert!(matches!(
            save_pose_dataset(&dir.path().join("t.csv"), &[seq], PoseFormat::Csv),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn canonical_and_pairs_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let seq = &random_dataset(1, 5)[0];
        let poses: Vec<CanonicalPose> = seq
            .frames
            .iter()
            .enumerate()
            .map(|(i, f)| CanonicalPose {
                coords: f.clone(),
                facing_angle: 0.1 * i as f64,
            })
            .collect();
        let cs = vec![CanonicalSequence::from_sequence(seq, poses.clone())];
        let p = dir.path().join("c.jsonl");
        save_canonical(&p, &cs).unwrap();
        assert_eq!(load_canonical(&p).unwrap(), cs);

        let mut r = rng::seeded(1);
        let pairs: Vec<_> = poses
            .iter()
            .map(|c| crate::camera::make_contrastive_pair(c, &crate::camera::AugmentConfig::default(), &mut r).unwrap())
            .collect();
        let q = dir.path().join("p.jsonl");
        save_pairs(&q, &pairs).unwrap();
        assert_eq!(load_pairs(&q).unwrap(), pairs);

        let e = dir.path().join("e.jsonl");
        let rows = vec![(Some(2), Tensor::from_rows(&[vec![1.0, 2.5], vec![-0.25, 3.0]]).unwrap()), (None, Tensor::from_rows(&[vec![0.125, 0.0]]).unwrap())];
        save_embeddings(&e, &rows, 1).unwrap();
        assert_eq!(load_embeddings(&e).unwrap(), rows);
    }
}
