//! Face preprocessing: sample frames evenly, detect the largest face, align
//! by eye landmarks, expand the box by a margin, crop, resize, save PNG.
//! Videos where detection fails on every sampled frame are excluded and
//! counted; that bookkeeping feeds the dataset statistics.

use std::path::{Path, PathBuf};

use image::RgbImage;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::Result;

use super::detector::{Detection, FaceBox, FaceDetector};
use super::imgproc::{crop_resize, warp_affine, Affine2};
use super::manifest::{FrameRecord, Label, Split, VideoManifest};
use super::sampling::sample_frames;
use super::video::VideoSource;

#[derive(Debug, Clone)]
pub struct PreprocessOptions {
    pub frames_per_video: usize,
    pub margin: f64,
    pub crop_side: u32,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self { frames_per_video: 32, margin: 1.3, crop_side: 256 }
    }
}

/// Scale a box about its center.
pub fn expand_box(b: FaceBox, margin: f64) -> FaceBox {
    let (cx, cy) = b.center();
    let hw = b.width() / 2.0 * margin;
    let hh = b.height() / 2.0 * margin;
    FaceBox { x1: cx - hw, y1: cy - hh, x2: cx + hw, y2: cy + hh }
}

/// Grow the short side so the box is square, about the center.
pub fn square_box(b: FaceBox) -> FaceBox {
    let side = b.width().max(b.height());
    let (cx, cy) = b.center();
    FaceBox { x1: cx - side / 2.0, y1: cy - side / 2.0, x2: cx + side / 2.0, y2: cy + side / 2.0 }
}

/// Similarity alignment: rotate about the eye midpoint so the eye line is
/// horizontal. Returns the warped image and the transform that was applied.
pub fn align_by_eyes(img: &RgbImage, det: &Detection) -> (RgbImage, Affine2) {
    let (lx, ly) = det.left_eye;
    let (rx, ry) = det.right_eye;
    let angle = (ry - ly).atan2(rx - lx);
    let mid = ((lx + rx) / 2.0, (ly + ry) / 2.0);
    let transform = Affine2::rotation_about(mid, -angle, 1.0);
    (warp_affine(img, &transform), transform)
}

/// Bounding box of the transformed corners.
fn transform_box(b: &FaceBox, t: &Affine2) -> FaceBox {
    let pts = b.corners().map(|(x, y)| t.apply(x, y));
    let xs = pts.map(|p| p.0);
    let ys = pts.map(|p| p.1);
    FaceBox {
        x1: xs.iter().copied().fold(f64::INFINITY, f64::min),
        y1: ys.iter().copied().fold(f64::INFINITY, f64::min),
        x2: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        y2: ys.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

#[derive(Debug)]
pub struct VideoOutcome {
    /// `None` when every sampled frame lost its face.
    pub manifest: Option<VideoManifest>,
    pub dropped_frames: usize,
}

pub fn preprocess_video(
    video: &dyn VideoSource,
    label: Label,
    method_tag: &str,
    split: Split,
    detector: &dyn FaceDetector,
    opts: &PreprocessOptions,
    data_root: &Path,
) -> Result<VideoOutcome> {
    let indices = sample_frames(video.frame_count(), opts.frames_per_video)?;
    let rel_dir = PathBuf::from("crops").join(video.video_id());
    std::fs::create_dir_all(data_root.join(&rel_dir))?;

    let mut frames = Vec::new();
    let mut dropped = 0usize;
    for idx in indices {
        let img = video.read_frame(idx)?;
        let Some(det) = detector.detect_largest_face(&img) else {
            dropped += 1;
            continue;
        };
        let (aligned, transform) = align_by_eyes(&img, &det);
        let aligned_box = transform_box(&det.face_box, &transform);
        let expanded = square_box(expand_box(aligned_box, opts.margin));
        let crop = crop_resize(
            &aligned,
            [expanded.x1, expanded.y1, expanded.x2, expanded.y2],
            opts.crop_side,
        );
        let rel = rel_dir.join(format!("{idx:05}.png"));
        crop.save(data_root.join(&rel))?;
        frames.push(FrameRecord {
            frame_index: idx as u32,
            image_path: rel,
            face_box: [expanded.x1, expanded.y1, expanded.x2, expanded.y2],
            landmarks_found: true,
        });
    }

    if frames.is_empty() {
        return Ok(VideoOutcome { manifest: None, dropped_frames: dropped });
    }
    let manifest = VideoManifest {
        video_id: video.video_id().to_string(),
        source_path: video.source_path().to_path_buf(),
        label,
        method_tag: method_tag.to_string(),
        split,
        frames,
    };
    manifest.validate(opts.frames_per_video)?;
    Ok(VideoOutcome { manifest: Some(manifest), dropped_frames: dropped })
}

pub struct PreprocessTask {
    pub video: Box<dyn VideoSource>,
    pub label: Label,
    pub method_tag: String,
    pub split: Split,
}

#[derive(Debug, Default)]
pub struct DatasetSummary {
    pub processed: usize,
    /// (video id, reason) for each excluded video — mirrors the benchmark
    /// tables' parenthetical exclusion counts.
    pub excluded: Vec<(String, String)>,
    pub dropped_frames: usize,
}

/// Preprocess many videos (in parallel when built with rayon); manifests
/// come back in task order.
pub fn preprocess_dataset(
    tasks: &[PreprocessTask],
    detector: &dyn FaceDetector,
    opts: &PreprocessOptions,
    data_root: &Path,
) -> Result<(Vec<VideoManifest>, DatasetSummary)> {
    let run = |task: &PreprocessTask| {
        preprocess_video(
            task.video.as_ref(),
            task.label,
            &task.method_tag,
            task.split,
            detector,
            opts,
            data_root,
        )
        .map(|o| (task.video.video_id().to_string(), o))
    };
    #[cfg(feature = "parallel")]
    let outcomes: Result<Vec<_>> = tasks.par_iter().map(run).collect();
    #[cfg(not(feature = "parallel"))]
    let outcomes: Result<Vec<_>> = tasks.iter().map(run).collect();

    let mut manifests = Vec::new();
    let mut summary = DatasetSummary::default();
    for (video_id, outcome) in outcomes? {
        summary.dropped_frames += outcome.dropped_frames;
        match outcome.manifest {
            Some(m) => {
                summary.processed += 1;
                manifests.push(m);
            }
            None => summary
                .excluded
                .push((video_id, "face detector failed on every sampled frame".into())),
        }
    }
    Ok((manifests, summary))
}
