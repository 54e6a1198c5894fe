//! Per-video manifests: one JSON record per line, diff-friendly and
//! streamable. Paths inside records are relative to the data root.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::Real => 0,
            Label::Fake => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_index: u32,
    pub image_path: PathBuf,
    /// Post-expansion face box in source-frame coordinates (x1, y1, x2, y2).
    pub face_box: [f64; 4],
    pub landmarks_found: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VideoManifest {
    pub video_id: String,
    pub source_path: PathBuf,
    pub label: Label,
    /// Forgery method or dataset name (DF / F2F / FS / FN / ...).
    pub method_tag: String,
    pub split: Split,
    pub frames: Vec<FrameRecord>,
}

impl VideoManifest {
    pub fn validate(&self, max_frames: usize) -> Result<()> {
        if self.frames.len() > max_frames {
            return Err(Error::Integrity(format!(
                "video {} has {} frames, cap is {max_frames}",
                self.video_id,
                self.frames.len()
            )));
        }
        let increasing =
            self.frames.windows(2).all(|w| w[0].frame_index < w[1].frame_index);
        if !increasing {
            return Err(Error::Integrity(format!(
                "video {} frame indices are not strictly increasing",
                self.video_id
            )));
        }
        Ok(())
    }
}

pub fn write_manifests(path: &Path, manifests: &[VideoManifest]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    for m in manifests {
        serde_json::to_writer(&mut w, m)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifests(path: &Path) -> Result<Vec<VideoManifest>> {
    let r = BufReader::new(fs::File::open(path).map_err(|e| {
        Error::Config(format!("cannot open manifest {}: {e}", path.display()))
    })?);
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let m: VideoManifest = serde_json::from_str(&line).map_err(|e| {
            Error::Input(format!("{}:{}: bad manifest record: {e}", path.display(), lineno + 1))
        })?;
        out.push(m);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: &str) -> VideoManifest {
        VideoManifest {
            video_id: id.into(),
            source_path: PathBuf::from(format!("videos/{id}")),
            label: Label::Fake,
            method_tag: "F2F".into(),
            split: Split::Train,
            frames: vec![
                FrameRecord {
                    frame_index: 0,
                    image_path: PathBuf::from(format!("crops/{id}/00000.png")),
                    face_box: [10.0, 10.0, 90.0, 90.0],
                    landmarks_found: true,
                },
                FrameRecord {
                    frame_index: 4,
                    image_path: PathBuf::from(format!("crops/{id}/00004.png")),
                    face_box: [12.0, 11.0, 92.0, 91.0],
                    landmarks_found: true,
                },
            ],
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.jsonl");
        let manifests = vec![sample("a"), sample("b")];
        write_manifests(&path, &manifests).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2, "one record per line");
        let back = read_manifests(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].video_id, "a");
        assert_eq!(back[1].frames[1].frame_index, 4);
    }

    #[test]
    fn validation_rejects_unordered_frames() {
        let mut m = sample("x");
        m.frames.swap(0, 1);
        assert!(matches!(m.validate(32), Err(Error::Integrity(_))));
        let m = sample("y");
        m.validate(32).unwrap();
        assert!(m.validate(1).is_err());
    }
}
