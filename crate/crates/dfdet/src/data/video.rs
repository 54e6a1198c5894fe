//! Video sources. Videos are frame sequences behind a trait so the pipeline
//! works the same over extracted-frame directories and generated test
//! videos.

use std::path::{Path, PathBuf};

use image::RgbImage;

use crate::error::{Error, Result};

pub trait VideoSource: Send + Sync {
    fn video_id(&self) -> &str;
    fn source_path(&self) -> &Path;
    fn frame_count(&self) -> usize;
    fn read_frame(&self, index: usize) -> Result<RgbImage>;
}

/// A directory of frame images (sorted by filename), the on-disk layout for
/// datasets with pre-extracted frames.
pub struct FrameDirVideo {
    id: String,
    dir: PathBuf,
    frames: Vec<PathBuf>,
}

impl FrameDirVideo {
    pub fn open(dir: &Path) -> Result<Self> {
        let id = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Input(format!("bad video directory {}", dir.display())))?
            .to_string();
        let mut frames: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("png" | "jpg" | "jpeg" | "PNG" | "JPG" | "JPEG")
                )
            })
            .collect();
        frames.sort();
        if frames.is_empty() {
            return Err(Error::EmptyVideo(format!("no frames under {}", dir.display())));
        }
        Ok(Self { id, dir: dir.to_path_buf(), frames })
    }
}

impl VideoSource for FrameDirVideo {
    fn video_id(&self) -> &str {
        &self.id
    }

    fn source_path(&self) -> &Path {
        &self.dir
    }

    fn frame_count(&self) -> usize {
        self.frames.len()
    }

    fn read_frame(&self, index: usize) -> Result<RgbImage> {
        let path = self.frames.get(index).ok_or_else(|| {
            Error::Input(format!("frame {index} out of range for {}", self.id))
        })?;
        Ok(image::open(path)?.to_rgb8())
    }
}
