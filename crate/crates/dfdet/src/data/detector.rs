//! Pluggable face detection. The production landmark detector is an external
//! dependency behind this interface; the implementations here cover tests
//! and synthetic data end to end.

use image::RgbImage;

/// Axis-aligned box in pixel coordinates, (x1, y1) top-left inclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl FaceBox {
    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn corners(&self) -> [(f64, f64); 4] {
        [(self.x1, self.y1), (self.x2, self.y1), (self.x1, self.y2), (self.x2, self.y2)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub face_box: FaceBox,
    pub left_eye: (f64, f64),
    pub right_eye: (f64, f64),
}

/// Returns the largest face, or absent when none is found — never garbage.
pub trait FaceDetector: Send + Sync {
    fn detect_largest_face(&self, image: &RgbImage) -> Option<Detection>;
}

/// Scripted detector for geometry tests: returns the configured detection
/// on every frame (or always fails when configured with `None`).
pub struct FixedDetector {
    pub detection: Option<Detection>,
}

impl FaceDetector for FixedDetector {
    fn detect_largest_face(&self, _image: &RgbImage) -> Option<Detection> {
        self.detection
    }
}

/// Blob detector for the synthetic faces used in tests and demos: finds the
/// bright elliptical face against a darker background and locates the two
/// dark eye dots inside it.
pub struct SyntheticFaceDetector {
    /// Luma threshold separating face pixels from background.
    pub luma_threshold: f64,
    /// Minimum number of face pixels before we believe a detection.
    pub min_pixels: usize,
}

impl Default for SyntheticFaceDetector {
    fn default() -> Self {
        Self { luma_threshold: 190.0, min_pixels: 40 }
    }
}

fn luma(p: &image::Rgb<u8>) -> f64 {
    0.299 * p.0[0] as f64 + 0.587 * p.0[1] as f64 + 0.114 * p.0[2] as f64
}

impl FaceDetector for SyntheticFaceDetector {
    fn detect_largest_face(&self, image: &RgbImage) -> Option<Detection> {
        let (mut x1, mut y1) = (f64::INFINITY, f64::INFINITY);
        let (mut x2, mut y2) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        let mut count = 0usize;
        for (x, y, p) in image.enumerate_pixels() {
            if luma(p) >= self.luma_threshold {
                count += 1;
                x1 = x1.min(x as f64);
                y1 = y1.min(y as f64);
                x2 = x2.max(x as f64 + 1.0);
                y2 = y2.max(y as f64 + 1.0);
            }
        }
        if count < self.min_pixels {
            return None;
        }
        let face_box = FaceBox { x1, y1, x2, y2 };
        // Eye dots are dark pixels inside the bright blob; split them left
        // and right of the blob center.
        let (cx, _) = face_box.center();
        let mut left = (0.0, 0.0, 0usize);
        let mut right = (0.0, 0.0, 0usize);
        for (x, y, p) in image.enumerate_pixels() {
            let xf = x as f64;
            let yf = y as f64;
            if xf < face_box.x1 || xf >= face_box.x2 || yf < face_box.y1 || yf >= face_box.y2 {
                continue;
            }
            if luma(p) < 80.0 {
                let slot = if xf < cx { &mut left } else { &mut right };
                slot.0 += xf;
                slot.1 += yf;
                slot.2 += 1;
            }
        }
        let eye = |acc: (f64, f64, usize), fallback: (f64, f64)| {
            if acc.2 > 0 {
                (acc.0 / acc.2 as f64, acc.1 / acc.2 as f64)
            } else {
                fallback
            }
        };
        // Fall back to canonical eye positions inside the box.
        let w = face_box.width();
        let h = face_box.height();
        let left_eye = eye(left, (face_box.x1 + 0.3 * w, face_box.y1 + 0.4 * h));
        let right_eye = eye(right, (face_box.x1 + 0.7 * w, face_box.y1 + 0.4 * h));
        Some(Detection { face_box, left_eye, right_eye })
    }
}
