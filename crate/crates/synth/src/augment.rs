//! In-plane rotation and rectangular occlusion.

use image::{Rgb, RgbImage};
use rand::Rng;
use sixd_core::{DepthMap, Quaternion, RigidTransform};

use crate::error::SynthError;
use crate::image::{Mask, RED};
use crate::render::Capture;

/// Largest occlusion fraction accepted by [`occlude`].
pub const MAX_OCCLUSION: f64 = 0.5;

fn rotate_px(p: [f64; 2], c: [f64; 2], cos: f64, sin: f64) -> [f64; 2] {
    let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
    [c[0] + cos * dx - sin * dy, c[1] + sin * dx + cos * dy]
}

fn bilinear(img: &RgbImage, x: f64, y: f64) -> Rgb<u8> {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let (x0, y0) = (x.floor() as i64, y.floor() as i64);
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let mut acc = [0.0f64; 3];
    for (dx, dy, wgt) in [
        (0, 0, (1.0 - fx) * (1.0 - fy)),
        (1, 0, fx * (1.0 - fy)),
        (0, 1, (1.0 - fx) * fy),
        (1, 1, fx * fy),
    ] {
        let (sx, sy) = (x0 + dx, y0 + dy);
        if wgt == 0.0 || sx < 0 || sy < 0 || sx >= w || sy >= h {
            continue;
        }
        let p = img.get_pixel(sx as u32, sy as u32);
        for k in 0..3 {
            acc[k] += wgt * p.0[k] as f64;
        }
    }
    Rgb(acc.map(|v| v.round().clamp(0.0, 255.0) as u8))
}

/// Rotates a capture by `angle` radians about the camera axis. Images turn
/// about the image center (bilinear RGB, nearest mask and depth); the pose
/// is premultiplied by the same rotation. The principal point is assumed to
/// sit at the image center with square pixels, which makes the image
/// rotation and the 3D rotation agree.
pub fn rotate_augment(capture: &Capture, angle: f64) -> Capture {
    let (w, h) = capture.rgb.dimensions();
    let c = [(w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0];
    let (cos, sin) = (angle.cos(), angle.sin());
    let mut rgb = RgbImage::new(w, h);
    let mut depth = DepthMap::new(w as usize, h as usize);
    let mut mask = Mask::new(w as usize, h as usize);
    for y in 0..h {
        for x in 0..w {
            // inverse map: rotate the output pixel by -angle
            let s = rotate_px([x as f64, y as f64], c, cos, -sin);
            rgb.put_pixel(x, y, bilinear(&capture.rgb, s[0], s[1]));
            let (nx, ny) = (s[0].round() as i64, s[1].round() as i64);
            if capture.mask.get_signed(nx, ny) {
                mask.set(x as usize, y as usize, true);
                depth.set(x as usize, y as usize, capture.depth.get(nx as usize, ny as usize));
            }
        }
    }
    let rz = Quaternion::rz(angle);
    let pose = RigidTransform::new(
        (rz * capture.pose.rotation).normalize().unwrap_or(capture.pose.rotation),
        rz.rotate(capture.pose.translation),
    );
    Capture {
        rgb,
        depth,
        mask,
        pose,
        class_id: capture.class_id,
        center: rotate_px(capture.center, c, cos, sin),
    }
}

/// Sides of the mask bounding box an occluder can sweep in from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
    Top,
    Bottom,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Left, Side::Right, Side::Top, Side::Bottom];
}

/// Result of an occlusion.
#[derive(Debug, Clone, PartialEq)]
pub struct Occlusion {
    /// Inclusive rectangle `(x0, y0, x1, y1)`, `None` when nothing was covered.
    pub rect: Option<(usize, usize, usize, usize)>,
    /// Fraction of the mask pixels the rectangle covers.
    pub realized: f64,
    /// Mask pixels left visible.
    pub visible: Mask,
}

/// Covers roughly `fraction` of the mask with a pure-red rectangle swept in
/// from a random side of the mask's bounding box; the rectangle spans the
/// whole box across the sweep direction and its depth is chosen so that the
/// covered fraction is closest to the request without exceeding
/// [`MAX_OCCLUSION`]. Exactly one value is drawn
/// from `rng` (the side) whatever the fraction.
pub fn occlude<R: Rng>(image: &mut RgbImage, mask: &Mask, fraction: f64, rng: &mut R) -> Result<Occlusion, SynthError> {
    if !(fraction <= MAX_OCCLUSION) {
        return Err(SynthError::OcclusionTooLarge(fraction));
    }
    let side = Side::ALL[rng.gen_range(0..4)];
    occlude_from(image, mask, fraction.max(0.0), side)
}

pub fn occlude_from(image: &mut RgbImage, mask: &Mask, fraction: f64, side: Side) -> Result<Occlusion, SynthError> {
    if !(fraction <= MAX_OCCLUSION) {
        return Err(SynthError::OcclusionTooLarge(fraction));
    }
    let total = mask.count();
    let Some((x0, y0, x1, y1)) = mask.bounding_box() else {
        return Err(SynthError::EmptyMask);
    };
    // mask counts per line along the sweep, ordered from the starting side
    let lines: Vec<usize> = match side {
        Side::Left => (x0..=x1).map(|x| (y0..=y1).filter(|&y| mask.get(x, y)).count()).collect(),
        Side::Right => (x0..=x1).rev().map(|x| (y0..=y1).filter(|&y| mask.get(x, y)).count()).collect(),
        Side::Top => (y0..=y1).map(|y| (x0..=x1).filter(|&x| mask.get(x, y)).count()).collect(),
        Side::Bottom => (y0..=y1).rev().map(|y| (x0..=x1).filter(|&x| mask.get(x, y)).count()).collect(),
    };
    let (mut best_k, mut best_err, mut covered) = (0usize, fraction, 0usize);
    let mut best_covered = 0usize;
    for (k, n) in lines.iter().enumerate() {
        covered += n;
        if covered as f64 > MAX_OCCLUSION * total as f64 {
            break;
        }
        let err = (covered as f64 / total as f64 - fraction).abs();
        if err < best_err {
            best_err = err;
            best_k = k + 1;
            best_covered = covered;
        }
    }
    let mut visible = mask.clone();
    if best_k == 0 {
        return Ok(Occlusion {
            rect: None,
            realized: 0.0,
            visible,
        });
    }
    let rect = match side {
        Side::Left => (x0, y0, x0 + best_k - 1, y1),
        Side::Right => (x1 + 1 - best_k, y0, x1, y1),
        Side::Top => (x0, y0, x1, y0 + best_k - 1),
        Side::Bottom => (x0, y1 + 1 - best_k, x1, y1),
    };
    for y in rect.1..=rect.3 {
        for x in rect.0..=rect.2 {
            image.put_pixel(x as u32, y as u32, RED);
            visible.set(x, y, false);
        }
    }
    Ok(Occlusion {
        rect: Some(rect),
        realized: best_covered as f64 / total as f64,
        visible,
    })
}
