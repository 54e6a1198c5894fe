//! Train-time image augmentations: horizontal flip, random affine, Gaussian
//! blur, color jitter, JPEG compression. Validation/test images pass through
//! untouched. Everything is driven by the caller's rng, so a fixed seed
//! replays exactly.

use image::{Rgb, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::imgproc::{warp_affine, Affine2};
use super::manifest::Split;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentParams {
    pub enabled: bool,
    pub flip_prob: f64,
    pub affine_prob: f64,
    /// Max absolute rotation, degrees.
    pub affine_max_rotate: f64,
    /// Max translation as a fraction of the side.
    pub affine_max_translate: f64,
    pub affine_scale_range: (f64, f64),
    pub blur_prob: f64,
    pub blur_sigma_range: (f64, f64),
    pub jitter_prob: f64,
    /// Max relative change for brightness/contrast/saturation.
    pub jitter_strength: f64,
    pub jpeg_prob: f64,
    pub jpeg_quality_range: (u8, u8),
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            enabled: true,
            flip_prob: 0.5,
            affine_prob: 0.5,
            affine_max_rotate: 8.0,
            affine_max_translate: 0.04,
            affine_scale_range: (0.95, 1.05),
            blur_prob: 0.3,
            blur_sigma_range: (0.3, 1.5),
            jitter_prob: 0.5,
            jitter_strength: 0.2,
            jpeg_prob: 0.5,
            jpeg_quality_range: (60, 95),
        }
    }
}

impl AugmentParams {
    pub fn disabled() -> Self {
        Self { enabled: false, ..Default::default() }
    }
}

/// Stochastic composition of the five augmentation families.
pub fn augment_image(img: &RgbImage, rng: &mut impl Rng, params: &AugmentParams) -> Result<RgbImage> {
    let mut out = img.clone();
    if rng.gen_bool(params.flip_prob) {
        out = image::imageops::flip_horizontal(&out);
    }
    if rng.gen_bool(params.affine_prob) {
        let angle = rng.gen_range(-params.affine_max_rotate..=params.affine_max_rotate)
            * std::f64::consts::PI
            / 180.0;
        let scale = rng.gen_range(params.affine_scale_range.0..=params.affine_scale_range.1);
        let max_t = params.affine_max_translate * out.width() as f64;
        let tx = rng.gen_range(-max_t..=max_t);
        let ty = rng.gen_range(-max_t..=max_t);
        let center = (out.width() as f64 / 2.0, out.height() as f64 / 2.0);
        let mut t = Affine2::rotation_about(center, angle, scale);
        t.tx += tx;
        t.ty += ty;
        out = warp_affine(&out, &t);
    }
    if rng.gen_bool(params.blur_prob) {
        let sigma = rng.gen_range(params.blur_sigma_range.0..=params.blur_sigma_range.1);
        out = image::imageops::blur(&out, sigma as f32);
    }
    if rng.gen_bool(params.jitter_prob) {
        let s = params.jitter_strength;
        let brightness = rng.gen_range(1.0 - s..=1.0 + s);
        let contrast = rng.gen_range(1.0 - s..=1.0 + s);
        let saturation = rng.gen_range(1.0 - s..=1.0 + s);
        out = color_jitter(&out, brightness, contrast, saturation);
    }
    if rng.gen_bool(params.jpeg_prob) {
        let q = rng.gen_range(params.jpeg_quality_range.0..=params.jpeg_quality_range.1);
        out = jpeg_round_trip(&out, q)?;
    }
    Ok(out)
}

/// Train images get the stochastic pipeline; everything else passes through
/// bit-identical.
pub fn augment_for_split(
    img: &RgbImage,
    split: Split,
    rng: &mut impl Rng,
    params: &AugmentParams,
) -> Result<RgbImage> {
    if split != Split::Train || !params.enabled {
        return Ok(img.clone());
    }
    augment_image(img, rng, params)
}

fn color_jitter(img: &RgbImage, brightness: f64, contrast: f64, saturation: f64) -> RgbImage {
    RgbImage::from_fn(img.width(), img.height(), |x, y| {
        let p = img.get_pixel(x, y).0;
        let mut v = [p[0] as f64, p[1] as f64, p[2] as f64];
        for c in &mut v {
            *c *= brightness;
        }
        for c in &mut v {
            *c = (*c - 128.0) * contrast + 128.0;
        }
        let luma = 0.299 * v[0] + 0.587 * v[1] + 0.114 * v[2];
        for c in &mut v {
            *c = luma + (*c - luma) * saturation;
        }
        Rgb(v.map(|c| c.round().clamp(0.0, 255.0) as u8))
    })
}

/// Encode to JPEG at the given quality and decode back.
pub fn jpeg_round_trip(img: &RgbImage, quality: u8) -> Result<RgbImage> {
    let mut buf = Vec::new();
    let encoder =
        image::codecs::jpeg::JpegEncoder::new_with_quality(std::io::Cursor::new(&mut buf), quality);
    img.write_with_encoder(encoder)?;
    Ok(image::load_from_memory_with_format(&buf, image::ImageFormat::Jpeg)?.to_rgb8())
}
