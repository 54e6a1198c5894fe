//! Shared raster helpers: bilinear sampling with edge replication, inverse
//! affine warps, and box-region crop/resize.

use image::{Rgb, RgbImage};

/// Bilinear sample at floating-point coordinates; out-of-range coordinates
/// clamp to the edge (replicated border).
pub fn bilinear_sample(img: &RgbImage, x: f64, y: f64) -> Rgb<u8> {
    let w = img.width() as i64;
    let h = img.height() as i64;
    let x0 = x.floor() as i64;
    let y0 = y.floor() as i64;
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let px = |xi: i64, yi: i64| -> [f64; 3] {
        let xc = xi.clamp(0, w - 1) as u32;
        let yc = yi.clamp(0, h - 1) as u32;
        let p = img.get_pixel(xc, yc).0;
        [p[0] as f64, p[1] as f64, p[2] as f64]
    };
    let (p00, p10, p01, p11) = (px(x0, y0), px(x0 + 1, y0), px(x0, y0 + 1), px(x0 + 1, y0 + 1));
    let mut out = [0u8; 3];
    for c in 0..3 {
        let top = p00[c] * (1.0 - fx) + p10[c] * fx;
        let bot = p01[c] * (1.0 - fx) + p11[c] * fx;
        out[c] = (top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8;
    }
    Rgb(out)
}

/// 2x3 affine transform mapping destination pixels back into the source
/// image: `src = [[a, b, tx], [c, d, ty]] * [x, y, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct Affine2 {
    pub a: f64,
    pub b: f64,
    pub tx: f64,
    pub c: f64,
    pub d: f64,
    pub ty: f64,
}

impl Affine2 {
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (self.a * x + self.b * y + self.tx, self.c * x + self.d * y + self.ty)
    }

    /// Rotation by `angle` (radians, counter-clockwise) about `center`,
    /// with uniform `scale`.
    pub fn rotation_about(center: (f64, f64), angle: f64, scale: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let (a, b, cc, d) = (scale * c, -scale * s, scale * s, scale * c);
        let tx = center.0 - a * center.0 - b * center.1;
        let ty = center.1 - cc * center.0 - d * center.1;
        Self { a, b, tx, c: cc, d, ty }
    }

    pub fn inverse(&self) -> Self {
        let det = self.a * self.d - self.b * self.c;
        let (ia, ib, ic, id) = (self.d / det, -self.b / det, -self.c / det, self.a / det);
        Self {
            a: ia,
            b: ib,
            tx: -(ia * self.tx + ib * self.ty),
            c: ic,
            d: id,
            ty: -(ic * self.tx + id * self.ty),
        }
    }
}

/// Warp with a forward transform: each destination pixel samples the source
/// at `transform^-1(dest)`.
pub fn warp_affine(img: &RgbImage, transform: &Affine2) -> RgbImage {
    let inv = transform.inverse();
    RgbImage::from_fn(img.width(), img.height(), |x, y| {
        let (sx, sy) = inv.apply(x as f64, y as f64);
        bilinear_sample(img, sx, sy)
    })
}

/// Crop the (possibly out-of-bounds) box region and resize to
/// `side` x `side`; outside pixels replicate the nearest edge.
pub fn crop_resize(img: &RgbImage, bbox: [f64; 4], side: u32) -> RgbImage {
    let [x1, y1, x2, y2] = bbox;
    let bw = x2 - x1;
    let bh = y2 - y1;
    RgbImage::from_fn(side, side, |x, y| {
        // Pixel centers map into the box interior.
        let sx = x1 + (x as f64 + 0.5) / side as f64 * bw - 0.5;
        let sy = y1 + (y as f64 + 0.5) / side as f64 * bh - 0.5;
        bilinear_sample(img, sx, sy)
    })
}
