//! Masks, compositing, focus encoding and cropping on 8-bit RGB images.

use image::{Rgb, RgbImage};
use rand::Rng;
use sixd_core::DepthMap;

use crate::error::SynthError;

/// The focus-encoding and padding color.
pub const RED: Rgb<u8> = Rgb([255, 0, 0]);

/// Row-major binary mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    /// `false` outside the mask bounds.
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height && self.get(x as usize, y as usize)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|v| *v)
    }

    /// Mean pixel coordinate of the set pixels.
    pub fn centroid(&self) -> Option<[f64; 2]> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    sx += x as f64;
                    sy += y as f64;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| [sx / n as f64, sy / n as f64])
    }

    /// Inclusive bounding box `(x0, y0, x1, y1)`.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    bb = Some(match bb {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
        bb
    }

    fn morph(&self, keep_if_all: bool) -> Mask {
        let mut out = Mask::new(self.width, self.height);
        for y in 0..self.height as i64 {
            for x in 0..self.width as i64 {
                let mut all = true;
                let mut any = false;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let v = self.get_signed(x + dx, y + dy);
                        all &= v;
                        any |= v;
                    }
                }
                out.set(x as usize, y as usize, if keep_if_all { all } else { any });
            }
        }
        out
    }

    /// 3x3 erosion; pixels outside the image count as unset.
    pub fn erode(&self) -> Mask {
        self.morph(true)
    }

    /// 3x3 dilation.
    pub fn dilate(&self) -> Mask {
        self.morph(false)
    }
}

fn check_same_size(what: &str, a: (u32, u32), b: (u32, u32)) -> Result<(), SynthError> {
    if a != b {
        return Err(SynthError::DimensionMismatch(format!(
            "{what}: {}x{} vs {}x{}",
            a.0, a.1, b.0, b.1
        )));
    }
    Ok(())
}

/// Foreground where any channel differs from the empty frame by more than
/// `threshold`, cleaned by one erosion followed by one dilation.
pub fn background_subtract(frame: &RgbImage, empty_frame: &RgbImage, threshold: u8) -> Result<Mask, SynthError> {
    check_same_size("background subtraction", frame.dimensions(), empty_frame.dimensions())?;
    let (w, h) = frame.dimensions();
    let mut raw = Mask::new(w as usize, h as usize);
    for (x, y, p) in frame.enumerate_pixels() {
        let e = empty_frame.get_pixel(x, y);
        let differs = p.0.iter().zip(e.0).any(|(a, b)| a.abs_diff(b) > threshold);
        raw.set(x as usize, y as usize, differs);
    }
    Ok(raw.erode().dilate())
}

/// `(1 - blend) * c + blend * target`, rounded half away from zero.
pub fn blend_channel(c: u8, target: u8, blend: f64) -> u8 {
    ((1.0 - blend) * c as f64 + blend * target as f64).round().clamp(0.0, 255.0) as u8
}

/// Pushes every pixel outside `focus_mask` toward pure red.
pub fn encode_focus(image: &RgbImage, focus_mask: &Mask, blend: f64) -> Result<RgbImage, SynthError> {
    check_same_size(
        "focus encoding",
        image.dimensions(),
        (focus_mask.width as u32, focus_mask.height as u32),
    )?;
    if !(0.0..=1.0).contains(&blend) {
        return Err(SynthError::InvalidConfig(format!("focus_blend {blend} outside [0, 1]")));
    }
    let mut out = image.clone();
    for (x, y, p) in out.enumerate_pixels_mut() {
        if !focus_mask.get(x as usize, y as usize) {
            for (c, t) in p.0.iter_mut().zip(RED.0) {
                *c = blend_channel(*c, t, blend);
            }
        }
    }
    Ok(out)
}

/// Result of pasting a capture onto a background.
#[derive(Debug, Clone)]
pub struct Composite {
    pub rgb: RgbImage,
    /// Pixels written by this overlay.
    pub mask: Mask,
    /// Depth of the pasted pixels; `0` elsewhere.
    pub depth: DepthMap,
    /// Image-plane object center after placement.
    pub center: [f64; 2],
}

/// Pastes the masked pixels of `rgb` onto `background`, shifted by
/// `placement` pixels.
pub fn overlay(
    rgb: &RgbImage,
    mask: &Mask,
    depth: &DepthMap,
    center: [f64; 2],
    background: &RgbImage,
    placement: [i64; 2],
) -> Result<Composite, SynthError> {
    check_same_size("overlay", rgb.dimensions(), (mask.width as u32, mask.height as u32))?;
    let total = mask.count();
    if total == 0 {
        return Err(SynthError::EmptyMask);
    }
    let (bw, bh) = background.dimensions();
    let mut out = background.clone();
    let mut out_mask = Mask::new(bw as usize, bh as usize);
    let mut out_depth = DepthMap::new(bw as usize, bh as usize);
    let mut kept = 0usize;
    for y in 0..mask.height {
        for x in 0..mask.width {
            if !mask.get(x, y) {
                continue;
            }
            let tx = x as i64 + placement[0];
            let ty = y as i64 + placement[1];
            if tx < 0 || ty < 0 || tx >= bw as i64 || ty >= bh as i64 {
                continue;
            }
            kept += 1;
            out.put_pixel(tx as u32, ty as u32, *rgb.get_pixel(x as u32, y as u32));
            out_mask.set(tx as usize, ty as usize, true);
            if x < depth.width && y < depth.height {
                out_depth.set(tx as usize, ty as usize, depth.get(x, y));
            }
        }
    }
    if 2 * kept < total {
        return Err(SynthError::OutOfFrame(100.0 * (total - kept) as f64 / total as f64));
    }
    Ok(Composite {
        rgb: out,
        mask: out_mask,
        depth: out_depth,
        center: [center[0] + placement[0] as f64, center[1] + placement[1] as f64],
    })
}

/// A square window cut from a full image.
#[derive(Debug, Clone, PartialEq)]
pub struct CropWindow {
    /// Full-image pixel of the crop's top-left pixel.
    pub origin: [i64; 2],
    pub size: usize,
}

impl CropWindow {
    /// Full-image coordinates of the crop's geometric center (pixel centers
    /// sit at integer coordinates).
    pub fn center(&self) -> [f64; 2] {
        let half = (self.size as f64 - 1.0) / 2.0;
        [self.origin[0] as f64 + half, self.origin[1] as f64 + half]
    }

    /// Window of `size` whose center is as close as possible to `center`.
    pub fn around(center: [f64; 2], size: usize) -> Self {
        let half = (size as f64 - 1.0) / 2.0;
        Self {
            origin: [(center[0] - half).round() as i64, (center[1] - half).round() as i64],
            size,
        }
    }

    /// `2 (point - center) / size`, the crop-normalized coordinates.
    pub fn normalized(&self, point: [f64; 2]) -> [f64; 2] {
        let c = self.center();
        let s = self.size as f64;
        [2.0 * (point[0] - c[0]) / s, 2.0 * (point[1] - c[1]) / s]
    }

    pub fn crop_rgb(&self, image: &RgbImage) -> RgbImage {
        let (w, h) = image.dimensions();
        RgbImage::from_fn(self.size as u32, self.size as u32, |x, y| {
            let sx = self.origin[0] + x as i64;
            let sy = self.origin[1] + y as i64;
            if sx < 0 || sy < 0 || sx >= w as i64 || sy >= h as i64 {
                RED
            } else {
                *image.get_pixel(sx as u32, sy as u32)
            }
        })
    }

    pub fn crop_depth(&self, depth: &DepthMap) -> DepthMap {
        let mut out = DepthMap::new(self.size, self.size);
        for y in 0..self.size {
            for x in 0..self.size {
                if let Some(d) = depth.valid_at(self.origin[0] + x as i64, self.origin[1] + y as i64) {
                    out.set(x, y, d);
                }
            }
        }
        out
    }

    pub fn crop_mask(&self, mask: &Mask) -> Mask {
        let mut out = Mask::new(self.size, self.size);
        for y in 0..self.size {
            for x in 0..self.size {
                out.set(x, y, mask.get_signed(self.origin[0] + x as i64, self.origin[1] + y as i64));
            }
        }
        out
    }
}

/// Crop of `image` centered near `object_center` and displaced by a uniform
/// integer jitter in `[-jitter_max, jitter_max]` on each axis. Returns the
/// crop, the window and the object's crop-normalized position.
pub fn crop_with_jitter<R: Rng>(
    image: &RgbImage,
    object_center: [f64; 2],
    crop_size: usize,
    jitter_max: usize,
    rng: &mut R,
) -> (RgbImage, CropWindow, [f64; 2]) {
    let j = jitter_max as i64;
    let dx = rng.gen_range(-j..=j);
    let dy = rng.gen_range(-j..=j);
    let mut window = CropWindow::around(object_center, crop_size);
    window.origin[0] += dx;
    window.origin[1] += dy;
    let uv = window.normalized(object_center);
    (window.crop_rgb(image), window, uv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn blend_rounding() {
        assert_eq!(blend_channel(0, 255, 0.5), 128);
        assert_eq!(blend_channel(0, 0, 0.5), 0);
        assert_eq!(blend_channel(100, 255, 1.0), 255);
        assert_eq!(blend_channel(100, 0, 0.0), 100);
        assert_eq!(blend_channel(1, 0, 0.5), 1);
    }

    #[test]
    fn focus_encoding_examples() {
        let img = RgbImage::from_pixel(4, 3, Rgb([10, 20, 30]));
        let mut m = Mask::new(4, 3);
        m.set(1, 1, true);
        let full = encode_focus(&img, &m, 1.0).unwrap();
        assert_eq!(*full.get_pixel(0, 0), RED);
        assert_eq!(*full.get_pixel(1, 1), Rgb([10, 20, 30]));
        assert_eq!(encode_focus(&img, &m, 0.0).unwrap(), img);
        let black = RgbImage::new(2, 2);
        let half = encode_focus(&black, &Mask::new(2, 2), 0.5).unwrap();
        assert_eq!(*half.get_pixel(0, 0), Rgb([128, 0, 0]));
        assert!(encode_focus(&img, &Mask::new(2, 2), 0.5).is_err());
    }

    #[test]
    fn background_subtraction_examples() {
        let empty = RgbImage::from_pixel(12, 10, Rgb([50, 60, 70]));
        assert!(background_subtract(&empty, &empty, 10).unwrap().is_empty());
        let mut frame = empty.clone();
        for y in 3..7 {
            for x in 4..9 {
                frame.put_pixel(x, y, Rgb([50, 90, 70]));
            }
        }
        // a lone speckle disappears under the opening
        frame.put_pixel(0, 9, Rgb([255, 255, 255]));
        let m = background_subtract(&frame, &empty, 10).unwrap();
        for y in 0..10 {
            for x in 0..12 {
                assert_eq!(m.get(x, y), (4..9).contains(&x) && (3..7).contains(&y), "({x},{y})");
            }
        }
        assert!(background_subtract(&frame, &RgbImage::new(3, 3), 10).is_err());
    }

    fn square(w: usize, h: usize, x0: usize, y0: usize, s: usize) -> Mask {
        let mut m = Mask::new(w, h);
        for y in y0..y0 + s {
            for x in x0..x0 + s {
                m.set(x, y, true);
            }
        }
        m
    }

    #[test]
    fn overlay_examples() {
        let rgb = RgbImage::from_pixel(10, 10, Rgb([1, 2, 3]));
        let mask = square(10, 10, 2, 2, 4);
        let depth = DepthMap::filled(10, 10, 0.5);
        let bg = RgbImage::from_pixel(10, 10, Rgb([9, 9, 9]));
        let c = overlay(&rgb, &mask, &depth, [3.5, 3.5], &bg, [0, 0]).unwrap();
        for (x, y, p) in c.rgb.enumerate_pixels() {
            let expected = if mask.get(x as usize, y as usize) { Rgb([1, 2, 3]) } else { Rgb([9, 9, 9]) };
            assert_eq!(*p, expected);
        }
        assert_eq!(c.mask.count(), mask.count());
        assert_eq!(c.center, [3.5, 3.5]);

        let second = RgbImage::from_pixel(10, 10, Rgb([200, 0, 200]));
        let c2 = overlay(&second, &square(10, 10, 4, 4, 4), &depth, [5.5, 5.5], &c.rgb, [0, 0]).unwrap();
        assert_eq!(*c2.rgb.get_pixel(4, 4), Rgb([200, 0, 200]));
        assert_eq!(*c2.rgb.get_pixel(2, 2), Rgb([1, 2, 3]));

        let shifted = overlay(&rgb, &mask, &depth, [3.5, 3.5], &bg, [5, 1]).unwrap();
        assert_eq!(shifted.center, [8.5, 4.5]);
        assert!(matches!(
            overlay(&rgb, &mask, &depth, [3.5, 3.5], &bg, [7, 0]),
            Err(SynthError::OutOfFrame(_))
        ));
    }

    #[test]
    fn crop_examples() {
        let img = RgbImage::from_fn(40, 40, |x, y| Rgb([x as u8, y as u8, 7]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (crop, win, uv) = crop_with_jitter(&img, [19.5, 19.5], 20, 0, &mut rng);
        assert_eq!(uv, [0.0, 0.0]);
        assert_eq!(win.origin, [10, 10]);
        assert_eq!(*crop.get_pixel(0, 0), Rgb([10, 10, 7]));

        let w = CropWindow::around([160.0 - 0.5, 160.0 - 0.5], 320);
        assert_eq!(w.normalized([175.5, 159.5]), [0.1, 0.0]);

        let corner = CropWindow { origin: [-5, -5], size: 10 };
        let c = corner.crop_rgb(&img);
        assert_eq!(*c.get_pixel(0, 0), RED);
        assert_eq!(*c.get_pixel(5, 5), Rgb([0, 0, 7]));
    }

    #[test]
    fn jittered_targets_stay_in_range() {
        let img = RgbImage::new(64, 64);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let (_, win, uv) = crop_with_jitter(&img, [31.5, 31.5], 32, 15, &mut rng);
            assert!(uv[0].abs() <= 1.0 && uv[1].abs() <= 1.0);
            let c = win.center();
            assert!((c[0] - 31.5).abs() <= 15.0 && (c[1] - 31.5).abs() <= 15.0);
        }
    }
}
