//! Deterministic synthetic data: planted-face videos for pipeline tests and
//! class-separable crop datasets for desk-scale training runs.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::Rng;

use crate::error::Result;
use crate::util::{fnv1a64, stream_rng};

use super::manifest::{FrameRecord, Label, Split, VideoManifest};
use super::video::VideoSource;

/// A synthetic face: bright ellipse with two dark eye dots, optionally
/// rotated.
#[derive(Debug, Clone, Copy)]
pub struct PlantedFace {
    pub center: (f64, f64),
    pub rx: f64,
    pub ry: f64,
    /// Roll angle in radians; eyes rotate with the face.
    pub angle: f64,
}

pub fn draw_face(img: &mut RgbImage, face: &PlantedFace) {
    let (cs, sn) = (face.angle.cos(), face.angle.sin());
    let skin = Rgb([240, 225, 205]);
    for (x, y, p) in img.enumerate_pixels_mut() {
        let dx = x as f64 + 0.5 - face.center.0;
        let dy = y as f64 + 0.5 - face.center.1;
        // Into the face frame.
        let u = (cs * dx + sn * dy) / face.rx;
        let v = (-sn * dx + cs * dy) / face.ry;
        if u * u + v * v <= 1.0 {
            *p = skin;
        }
    }
    let eye_r = (face.rx * 0.14).max(1.4);
    for side in [-1.0f64, 1.0] {
        let (eu, ev) = (side * 0.45 * face.rx, -0.30 * face.ry);
        let ex = face.center.0 + cs * eu - sn * ev;
        let ey = face.center.1 + sn * eu + cs * ev;
        for (x, y, p) in img.enumerate_pixels_mut() {
            let dx = x as f64 + 0.5 - ex;
            let dy = y as f64 + 0.5 - ey;
            if dx * dx + dy * dy <= eye_r * eye_r {
                *p = Rgb([25, 25, 25]);
            }
        }
    }
}

/// Generated video with a face planted in every frame (or none at all, to
/// exercise detector-failure bookkeeping). Frames are a pure function of
/// (video id, frame index).
pub struct SyntheticVideo {
    pub id: String,
    pub path: PathBuf,
    pub frames: usize,
    pub size: u32,
    pub face: Option<PlantedFace>,
}

impl SyntheticVideo {
    pub fn with_face(id: &str, frames: usize, size: u32) -> Self {
        let c = size as f64 / 2.0;
        Self {
            id: id.to_string(),
            path: PathBuf::from(format!("synthetic://{id}")),
            frames,
            size,
            face: Some(PlantedFace {
                center: (c, c + 2.0),
                rx: size as f64 * 0.22,
                ry: size as f64 * 0.28,
                angle: 0.0,
            }),
        }
    }

    pub fn faceless(id: &str, frames: usize, size: u32) -> Self {
        Self {
            id: id.to_string(),
            path: PathBuf::from(format!("synthetic://{id}")),
            frames,
            size,
            face: None,
        }
    }
}

impl VideoSource for SyntheticVideo {
    fn video_id(&self) -> &str {
        &self.id
    }

    fn source_path(&self) -> &Path {
        &self.path
    }

    fn frame_count(&self) -> usize {
        self.frames
    }

    fn read_frame(&self, index: usize) -> Result<RgbImage> {
        let mut rng = stream_rng(fnv1a64(self.id.as_bytes()) ^ index as u64, "synthetic-frame");
        let mut img = RgbImage::from_fn(self.size, self.size, |_, _| {
            Rgb([
                40 + rng.gen_range(0..20),
                40 + rng.gen_range(0..20),
                70 + rng.gen_range(0..20),
            ])
        });
        if let Some(face) = &self.face {
            // The face drifts slightly between frames.
            let mut f = *face;
            f.center.0 += (index as f64 * 0.7).sin() * 2.0;
            f.center.1 += (index as f64 * 0.9).cos() * 2.0;
            draw_face(&mut img, &f);
        }
        Ok(img)
    }
}

/// Materialize a synthetic video as a frame directory (the layout
/// `preprocess` consumes).
pub fn write_video_frames(dir: &Path, video: &SyntheticVideo) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for i in 0..video.frames {
        video.read_frame(i)?.save(dir.join(format!("{i:03}.png")))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Class-separable crop dataset for desk-scale training

/// 256x256 crop whose background statistics separate the two classes:
/// real crops ramp toward blue, fake crops toward red with a per-method
/// green shift. The planted face itself looks the same for both classes.
pub fn synthetic_crop(label: Label, method: u8, video_seed: u64, frame_index: u32) -> RgbImage {
    let mut vid_rng = stream_rng(video_seed, "crop-video-jitter");
    let jitter: [i32; 3] = [
        vid_rng.gen_range(-14..=14),
        vid_rng.gen_range(-14..=14),
        vid_rng.gen_range(-14..=14),
    ];
    let mut frame_rng = stream_rng(video_seed ^ (frame_index as u64) << 17, "crop-frame-noise");
    let side = 256u32;
    let base: [i32; 3] = match label {
        Label::Real => [60, 90, 170],
        Label::Fake => [170, 70 + 25 * method as i32, 60 + 10 * method as i32],
    };
    let mut img = RgbImage::from_fn(side, side, |x, y| {
        let ramp = match label {
            Label::Real => x as i32 * 40 / side as i32,
            Label::Fake => y as i32 * 40 / side as i32,
        };
        let noise = frame_rng.gen_range(-12..=12);
        let px = |c: usize| (base[c] + jitter[c] + ramp + noise).clamp(0, 255) as u8;
        Rgb([px(0), px(1), px(2)])
    });
    draw_face(
        &mut img,
        &PlantedFace { center: (128.0, 136.0), rx: 58.0, ry: 72.0, angle: 0.0 },
    );
    img
}

#[derive(Debug, Clone)]
pub struct CropDatasetSpec {
    pub videos_per_class: usize,
    pub frames_per_video: usize,
    pub seed: u64,
    /// Fake-class method tags; fake videos cycle through them.
    pub methods: Vec<String>,
    pub split: Split,
    /// Prepended to video ids so several datasets can share one data root.
    pub id_prefix: String,
}

/// Writes crops under `root/crops/<video_id>/` and returns the manifests
/// (paths relative to `root`).
pub fn generate_crop_dataset(root: &Path, spec: &CropDatasetSpec) -> Result<Vec<VideoManifest>> {
    let mut manifests = Vec::new();
    for class in [Label::Real, Label::Fake] {
        for v in 0..spec.videos_per_class {
            let (method, tag) = match class {
                Label::Real => (0u8, "real".to_string()),
                Label::Fake => {
                    let m = v % spec.methods.len().max(1);
                    (m as u8, spec.methods.get(m).cloned().unwrap_or_else(|| "fake".into()))
                }
            };
            let video_id = format!("{}{tag}_{v:04}", spec.id_prefix);
            let video_seed = spec.seed ^ fnv1a64(video_id.as_bytes());
            let rel_dir = PathBuf::from("crops").join(&video_id);
            std::fs::create_dir_all(root.join(&rel_dir))?;
            let mut frames = Vec::new();
            for f in 0..spec.frames_per_video {
                let img = synthetic_crop(class, method, video_seed, f as u32);
                let rel = rel_dir.join(format!("{f:05}.png"));
                img.save(root.join(&rel))?;
                frames.push(FrameRecord {
                    frame_index: f as u32,
                    image_path: rel,
                    face_box: [70.0, 64.0, 186.0, 208.0],
                    landmarks_found: true,
                });
            }
            manifests.push(VideoManifest {
                video_id,
                source_path: PathBuf::from(format!("synthetic://{tag}/{v}")),
                label: class,
                method_tag: tag,
                split: spec.split,
                frames,
            });
        }
    }
    Ok(manifests)
}
