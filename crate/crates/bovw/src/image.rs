//! Grayscale image container, loading and geometric helpers.
//!
//! Intensities are `f32` in `[0, 1]` throughout; all operations are pure.

use std::path::Path;

use crate::error::{Error, Result};

/// Single-channel raster, row-major, intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::validation("image dimensions must be >= 1"));
        }
        if pixels.len() != width * height {
            return Err(Error::validation(format!(
                "pixel buffer length {} does not match {}x{}",
                pixels.len(),
                width,
                height
            )));
        }
        if let Some(bad) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::validation(format!(
                "intensity {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Build an image by evaluating `f(x, y)`; values are clamped to `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        debug_assert!(x < self.width && y < self.height);
        self.pixels[y * self.width + x]
    }

    /// Intensity at `(x, y)` with out-of-bounds treated as 0.
    #[inline]
    fn get_or_zero(&self, x: i64, y: i64) -> f32 {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            0.0
        } else {
            self.pixels[y as usize * self.width + x as usize]
        }
    }

    /// Intensity at `(x, y)` with coordinates clamped to the border.
    #[inline]
    pub(crate) fn get_clamped(&self, x: i64, y: i64) -> f32 {
        let cx = x.clamp(0, self.width as i64 - 1) as usize;
        let cy = y.clamp(0, self.height as i64 - 1) as usize;
        self.pixels[cy * self.width + cx]
    }

    /// Bilinear sample at a fractional coordinate; taps outside the raster
    /// contribute intensity 0.
    fn sample_bilinear(&self, x: f64, y: f64) -> f32 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = (x - x0) as f32;
        let fy = (y - y0) as f32;
        let (x0, y0) = (x0 as i64, y0 as i64);
        let v00 = self.get_or_zero(x0, y0);
        let v10 = self.get_or_zero(x0 + 1, y0);
        let v01 = self.get_or_zero(x0, y0 + 1);
        let v11 = self.get_or_zero(x0 + 1, y0 + 1);
        let top = v00 * (1.0 - fx) + v10 * fx;
        let bot = v01 * (1.0 - fx) + v11 * fx;
        top * (1.0 - fy) + bot * fy
    }

    /// Aspect-preserving bilinear resize so that `max(w, h) == max_side`.
    /// Images already within the bound are returned unchanged.
    pub fn resize_max_side(&self, max_side: usize) -> GrayImage {
        let long = self.width.max(self.height);
        if max_side == 0 || long <= max_side {
            return self.clone();
        }
        let scale = max_side as f64 / long as f64;
        let nw = ((self.width as f64 * scale).round() as usize).max(1);
        let nh = ((self.height as f64 * scale).round() as usize).max(1);
        let sx = self.width as f64 / nw as f64;
        let sy = self.height as f64 / nh as f64;
        GrayImage::from_fn(nw, nh, |x, y| {
            // Align pixel centers of source and destination grids.
            let src_x = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, self.width as f64 - 1.0);
            let src_y = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, self.height as f64 - 1.0);
            self.sample_bilinear(src_x, src_y)
        })
    }

    /// Encode as an 8-bit PNG (intensity scaled by 255, rounded).
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let buf: Vec<u8> = self
            .pixels
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        let img: image::GrayImage =
            image::ImageBuffer::from_raw(self.width as u32, self.height as u32, buf)
                .expect("buffer length matches dimensions");
        let mut out = std::io::Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png)
            .map_err(|e| Error::validation(format!("png encode failed: {e}")))?;
        Ok(out.into_inner())
    }
}

/// Load a PNG/JPEG image as grayscale.
///
/// Color inputs are converted with the luma weights 0.299 R + 0.587 G +
/// 0.114 B. When `max_side` is given and the longer side exceeds it, the
/// image is resized (bilinear, aspect preserved, rounded to nearest pixel).
pub fn load_grayscale(path: impl AsRef<Path>, max_side: Option<usize>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoded = image::load_from_memory(&bytes).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })?;
    let rgb = decoded.to_rgb32f();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::validation(format!(
            "zero-dimension image: {}",
            path.display()
        )));
    }
    let pixels: Vec<f32> = rgb
        .pixels()
        .map(|p| (0.299 * p.0[0] + 0.587 * p.0[1] + 0.114 * p.0[2]).clamp(0.0, 1.0))
        .collect();
    let img = GrayImage::new(w, h, pixels)?;
    Ok(match max_side {
        Some(side) => img.resize_max_side(side),
        None => img,
    })
}

/// Rotate by `angle` radians about the image center `((w-1)/2, (h-1)/2)`.
///
/// Output dimensions equal input dimensions. Exact multiples of pi/2 are
/// remapped by index permutation (half turns for any shape, quarter turns
/// for square images), so repeated quarter turns are lossless; other angles
/// use bilinear sampling with out-of-bounds sources reading as 0.
pub fn rotate_about_center(img: &GrayImage, angle: f64) -> Result<GrayImage> {
    if !angle.is_finite() {
        return Err(Error::validation("rotation angle must be finite"));
    }
    let (w, h) = (img.width(), img.height());

    let quarters = angle / std::f64::consts::FRAC_PI_2;
    let k = quarters.round();
    if (quarters - k).abs() < 1e-9 && k.abs() < 1e15 {
        let k = (k as i64).rem_euclid(4);
        match k {
            0 => return Ok(img.clone()),
            2 => {
                return Ok(GrayImage::from_fn(w, h, |x, y| {
                    img.get(w - 1 - x, h - 1 - y)
                }))
            }
            1 if w == h => return Ok(GrayImage::from_fn(w, h, |x, y| img.get(y, w - 1 - x))),
            3 if w == h => return Ok(GrayImage::from_fn(w, h, |x, y| img.get(w - 1 - y, x))),
            _ => {} // odd quarter turn of a non-square image: fall through
        }
    }

    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let (sin, cos) = (-angle).sin_cos();
    Ok(GrayImage::from_fn(w, h, |x, y| {
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        let src_x = cx + cos * dx - sin * dy;
        let src_y = cy + sin * dx + cos * dy;
        img.sample_bilinear(src_x, src_y)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checkerboard(n: usize) -> GrayImage {
        GrayImage::from_fn(n, n, |x, y| if (x + y) % 2 == 0 { 1.0 } else { 0.25 })
    }

    #[test]
    fn new_rejects_bad_dimensions_and_intensities() {
        assert!(GrayImage::new(0, 4, vec![]).is_err());
        assert!(GrayImage::new(2, 2, vec![0.0; 3]).is_err());
        assert!(GrayImage::new(2, 2, vec![0.0, 0.5, 1.0, 1.5]).is_err());
    }

    #[test]
    fn rotation_preserves_dimensions() {
        let img = GrayImage::from_fn(13, 7, |x, y| ((x * y) % 5) as f32 / 4.0);
        let rot = rotate_about_center(&img, 0.7).unwrap();
        assert_eq!(rot.width(), 13);
        assert_eq!(rot.height(), 7);
    }

    #[test]
    fn zero_rotation_is_identity() {
        let img = checkerboard(9);
        assert_eq!(rotate_about_center(&img, 0.0).unwrap(), img);
    }

    #[test]
    fn four_quarter_turns_are_bit_exact() {
        let img = checkerboard(8);
        let mut cur = img.clone();
        for _ in 0..4 {
            cur = rotate_about_center(&cur, std::f64::consts::FRAC_PI_2).unwrap();
        }
        assert_eq!(cur, img);
    }

    #[test]
    fn quarter_turn_matches_bilinear_within_tolerance() {
        // The permutation path and the generic path must agree on a square
        // image (interior pixels land on exact grid points).
        let img = checkerboard(9);
        let exact = rotate_about_center(&img, std::f64::consts::FRAC_PI_2).unwrap();
        let near = rotate_about_center(&img, std::f64::consts::FRAC_PI_2 + 1e-7).unwrap();
        for (a, b) in exact.pixels().iter().zip(near.pixels()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn center_pixel_is_fixed_point() {
        let mut img = GrayImage::from_fn(11, 11, |_, _| 0.0);
        img.pixels[5 * 11 + 5] = 1.0;
        for &angle in &[0.3, 1.2, 2.9, -0.8] {
            let rot = rotate_about_center(&img, angle).unwrap();
            assert!((rot.get(5, 5) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn half_turn_works_for_non_square() {
        let img = GrayImage::from_fn(5, 3, |x, y| (x as f32 + y as f32 * 5.0) / 20.0);
        let rot = rotate_about_center(&img, std::f64::consts::PI).unwrap();
        assert_eq!(rot.get(0, 0), img.get(4, 2));
        assert_eq!(rotate_about_center(&rot, std::f64::consts::PI).unwrap(), img);
    }

    #[test]
    fn resize_max_side_scales_aspect_preserving() {
        let img = GrayImage::from_fn(640, 480, |x, _| (x % 7) as f32 / 6.0);
        let small = img.resize_max_side(256);
        assert_eq!((small.width(), small.height()), (256, 192));
        let untouched = img.resize_max_side(1024);
        assert_eq!((untouched.width(), untouched.height()), (640, 480));
    }
}
