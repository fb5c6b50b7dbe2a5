//! Sequences of ground-truth tracks and per-frame detections, and their
//! on-disk directory layout.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::mot::{format_records, parse_mot_file, MotRecord};
use super::synthetic::MotionKind;
use crate::error::{domain, Error, Result};
use crate::geometry::BBox;

#[derive(Debug, Clone, PartialEq)]
pub struct GtTrack {
    pub id: i64,
    /// Generator regime, when known.
    pub kind: Option<MotionKind>,
    /// Ascending 1-based frame numbers.
    pub frames: Vec<i64>,
    pub boxes: Vec<BBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub name: String,
    pub img_w: f64,
    pub img_h: f64,
    pub fps: f64,
    pub length: usize,
    pub gt: Vec<GtTrack>,
    /// Detections per frame; index `k` holds frame `k + 1`.
    pub detections: Vec<Vec<BBox>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SequenceDataset {
    pub sequences: Vec<Sequence>,
}

impl Sequence {
    /// Groups gt rows by id. Rows with zero confidence (MOT ignore regions)
    /// and ids seen in fewer than two frames are dropped.
    pub fn from_records(
        name: &str,
        img_w: f64,
        img_h: f64,
        fps: f64,
        length: usize,
        gt: &[MotRecord],
        det: &[MotRecord],
    ) -> Result<Self> {
        if !(img_w > 0.0 && img_h > 0.0) {
            return domain(format!("sequence {name}: image size must be positive"));
        }
        let mut by_id: BTreeMap<i64, Vec<(i64, BBox)>> = BTreeMap::new();
        for r in gt.iter().filter(|r| r.conf != 0.0) {
            by_id.entry(r.id).or_default().push((r.frame, r.bbox()));
        }
        let mut tracks = Vec::with_capacity(by_id.len());
        for (id, mut rows) in by_id {
            rows.sort_by_key(|(f, _)| *f);
            rows.dedup_by_key(|(f, _)| *f);
            if rows.len() < 2 {
                continue;
            }
            tracks.push(GtTrack {
                id,
                kind: None,
                frames: rows.iter().map(|(f, _)| *f).collect(),
                boxes: rows.iter().map(|(_, b)| *b).collect(),
            });
        }
        let max_frame = gt
            .iter()
            .chain(det)
            .map(|r| r.frame)
            .max()
            .unwrap_or(0)
            .max(length as i64) as usize;
        let mut detections = vec![Vec::new(); max_frame];
        for r in det {
            detections[(r.frame - 1) as usize].push(r.bbox());
        }
        Ok(Self {
            name: name.to_string(),
            img_w,
            img_h,
            fps,
            length: max_frame,
            gt: tracks,
            detections,
        })
    }

    pub fn gt_records(&self) -> Vec<MotRecord> {
        let mut out: Vec<MotRecord> = self
            .gt
            .iter()
            .flat_map(|t| {
                t.frames
                    .iter()
                    .zip(&t.boxes)
                    .map(move |(&f, b)| MotRecord::from_bbox(f, t.id, b, 1.0))
            })
            .collect();
        out.sort_by_key(|r| (r.frame, r.id));
        out
    }

    pub fn det_records(&self) -> Vec<MotRecord> {
        self.detections
            .iter()
            .enumerate()
            .flat_map(|(k, dets)| {
                dets.iter()
                    .map(move |b| MotRecord::from_bbox(k as i64 + 1, -1, b, 1.0))
            })
            .collect()
    }

    /// Copies ground truth into the detection lists.
    pub fn with_oracle_detections(&self) -> Self {
        let mut s = self.clone();
        s.detections = vec![Vec::new(); s.length];
        for t in &s.gt {
            for (&f, b) in t.frames.iter().zip(&t.boxes) {
                s.detections[(f - 1) as usize].push(*b);
            }
        }
        s
    }

    pub fn seqinfo(&self) -> String {
        format!(
            "[Sequence]\nname={}\nframeRate={}\nseqLength={}\nimWidth={}\nimHeight={}\n",
            self.name, self.fps, self.length, self.img_w, self.img_h
        )
    }

    fn motion_csv(&self) -> String {
        let mut out = String::from("track_id,motion\n");
        for t in &self.gt {
            if let Some(k) = t.kind {
                let _ = writeln!(out, "{},{}", t.id, k.name());
            }
        }
        out
    }

    /// Writes `gt.txt`, `det.txt`, `seqinfo.ini` and `motion.csv` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("gt.txt"), format_records(&self.gt_records()))?;
        std::fs::write(dir.join("det.txt"), format_records(&self.det_records()))?;
        std::fs::write(dir.join("seqinfo.ini"), self.seqinfo())?;
        std::fs::write(dir.join("motion.csv"), self.motion_csv())?;
        Ok(())
    }

    /// Reads a sequence directory. Accepts `gt.txt`/`det.txt` beside
    /// `seqinfo.ini` or the MOT Challenge `gt/gt.txt`/`det/det.txt` layout.
    pub fn read_dir(dir: &Path) -> Result<Self> {
        let info = parse_seqinfo(&std::fs::read_to_string(dir.join("seqinfo.ini"))?)?;
        let get = |k: &str| -> Result<&String> {
            info.get(k)
                .ok_or_else(|| Error::Domain(format!("{}: seqinfo.ini lacks {k}", dir.display())))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?.parse::<f64>().map_err(|_| {
                Error::Domain(format!("{}: seqinfo {k} is not a number", dir.display()))
            })
        };
        let name = info.get("name").cloned().unwrap_or_else(|| {
            dir.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default()
        });
        let find = |a: &str, b: &str| -> Option<PathBuf> {
            [dir.join(a), dir.join(b)].into_iter().find(|p| p.exists())
        };
        let gt = match find("gt.txt", "gt/gt.txt") {
            Some(p) => parse_mot_file(&p)?,
            None => Vec::new(),
        };
        let det = match find("det.txt", "det/det.txt") {
            Some(p) => parse_mot_file(&p)?,
            None => Vec::new(),
        };
        let fps = if info.contains_key("frameRate") {
            num("frameRate")?
        } else {
            30.0
        };
        let mut seq = Self::from_records(
            &name,
            num("imWidth")?,
            num("imHeight")?,
            fps,
            num("seqLength")? as usize,
            &gt,
            &det,
        )?;
        let motion = dir.join("motion.csv");
        if motion.exists() {
            let kinds = parse_motion_csv(&std::fs::read_to_string(motion)?)?;
            for t in &mut seq.gt {
                t.kind = kinds.get(&t.id).copied();
            }
        }
        Ok(seq)
    }
}

fn parse_seqinfo(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty()
            || line.starts_with('[')
            || line.starts_with(';')
            || line.starts_with('#')
        {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Parse {
                line: i + 1,
                column: 1,
                message: "expected key=value".into(),
            });
        };
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn parse_motion_csv(text: &str) -> Result<BTreeMap<i64, MotionKind>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let err = |column: usize, message: &str| Error::Parse {
            line: i + 1,
            column,
            message: message.into(),
        };
        let (id, kind) = line
            .split_once(',')
            .ok_or_else(|| err(1, "expected track_id,motion"))?;
        let id: i64 = id.trim().parse().map_err(|_| err(1, "bad track id"))?;
        let kind =
            MotionKind::from_name(kind.trim()).ok_or_else(|| err(2, "unknown motion kind"))?;
        out.insert(id, kind);
    }
    Ok(out)
}

impl SequenceDataset {
    /// One subdirectory per sequence, named after the sequence.
    pub fn write_dir(&self, root: &Path) -> Result<()> {
        std::fs::create_dir_all(root)?;
        for s in &self.sequences {
            s.write_dir(&root.join(&s.name))?;
        }
        Ok(())
    }

    /// Reads either a single sequence directory or a directory of them, in
    /// name order.
    pub fn read_dir(root: &Path) -> Result<Self> {
        if root.join("seqinfo.ini").exists() {
            return Ok(Self {
                sequences: vec![Sequence::read_dir(root)?],
            });
        }
        let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("seqinfo.ini").exists())
            .collect();
        dirs.sort();
        if dirs.is_empty() {
            return domain(format!("{} holds no sequence directories", root.display()));
        }
        Ok(Self {
            sequences: dirs
                .iter()
                .map(|d| Sequence::read_dir(d))
                .collect::<Result<_>>()?,
        })
    }
}
