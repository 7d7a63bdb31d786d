//! Dense upright SIFT descriptors on a regular grid.
//!
//! Descriptors follow Lowe's 4x4 spatial x 8 orientation layout (128-D):
//! central-difference gradients (border-replicated at the image edge),
//! Gaussian weighting with sigma = patch/2 about the patch center, trilinear
//! soft assignment into the spatial/orientation histogram, then
//! L2-normalize with components capped at 0.2. No scale
//! pyramid and no per-keypoint orientation: patches are axis-aligned at a
//! single scale, which keeps the spatial-tiling comparisons about geometry
//! rather than descriptor re-orientation.

use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::io::atomic_write;

pub const DESCRIPTOR_DIM: usize = 128;
pub const ORIENTATION_BINS: usize = 8;
pub const SPATIAL_BINS: usize = 4;

/// Component clamp applied after the first L2 normalization.
const CLAMP_THRESHOLD: f64 = 0.2;
/// Descriptors with a pre-normalization norm below this are all zeros.
const DEGENERATE_NORM_EPS: f64 = 1e-10;

pub type Descriptor = [f32; DESCRIPTOR_DIM];

/// A grid location plus its 128-D descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointDescriptor {
    pub x: f32,
    pub y: f32,
    pub descriptor: Descriptor,
}

/// Dense sampling geometry: grid stride and descriptor support side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DenseSiftParams {
    /// Grid stride in pixels.
    pub step: usize,
    /// Patch side in pixels; must be a positive multiple of 4.
    pub patch: usize,
}

impl Default for DenseSiftParams {
    fn default() -> Self {
        Self { step: 8, patch: 16 }
    }
}

impl DenseSiftParams {
    pub fn new(step: usize, patch: usize) -> Result<Self> {
        let p = Self { step, patch };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.step == 0 {
            return Err(Error::validation("dense grid step must be > 0"));
        }
        if self.patch < 4 || self.patch % 4 != 0 {
            return Err(Error::validation(format!(
                "patch side must be a positive multiple of 4, got {}",
                self.patch
            )));
        }
        Ok(())
    }
}

/// Patch centers `patch/2 + i*step` along each axis, row-major (y outer).
/// Every returned patch lies fully inside a `width` x `height` image; an
/// image smaller than the patch yields no centers.
pub fn dense_grid(width: usize, height: usize, params: &DenseSiftParams) -> Vec<(usize, usize)> {
    let p = params.patch;
    if width < p || height < p {
        return Vec::new();
    }
    let nx = (width - p) / params.step + 1;
    let ny = (height - p) / params.step + 1;
    let mut centers = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            centers.push((p / 2 + i * params.step, p / 2 + j * params.step));
        }
    }
    centers
}

/// Per-pixel gradient magnitude and orientation (radians in [0, 2pi)),
/// central differences with border replication.
struct GradientField {
    width: usize,
    height: usize,
    magnitude: Vec<f64>,
    orientation: Vec<f64>,
}

impl GradientField {
    fn compute(img: &GrayImage) -> Self {
        let (w, h) = (img.width(), img.height());
        let mut magnitude = vec![0.0; w * h];
        let mut orientation = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let gx = (f64::from(img.get_clamped(x as i64 + 1, y as i64))
                    - f64::from(img.get_clamped(x as i64 - 1, y as i64)))
                    / 2.0;
                let gy = (f64::from(img.get_clamped(x as i64, y as i64 + 1))
                    - f64::from(img.get_clamped(x as i64, y as i64 - 1)))
                    / 2.0;
                let idx = y * w + x;
                magnitude[idx] = (gx * gx + gy * gy).sqrt();
                let mut theta = gy.atan2(gx);
                if theta < 0.0 {
                    theta += 2.0 * PI;
                }
                orientation[idx] = theta;
            }
        }
        Self {
            width: w,
            height: h,
            magnitude,
            orientation,
        }
    }
}

/// Accumulate one patch into a 4x4x8 histogram and normalize it.
fn descriptor_at(field: &GradientField, cx: usize, cy: usize, patch: usize) -> Descriptor {
    let half = patch / 2;
    let x0 = cx - half;
    let y0 = cy - half;
    let center = (patch as f64 - 1.0) / 2.0;
    let sigma = patch as f64 / 2.0;
    let inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);
    let cell = patch as f64 / SPATIAL_BINS as f64;
    let ori_scale = ORIENTATION_BINS as f64 / (2.0 * PI);

    let mut hist = [0.0f64; DESCRIPTOR_DIM];
    for v in 0..patch {
        let dv = v as f64 - center;
        let by = dv / cell + (SPATIAL_BINS as f64 - 1.0) / 2.0;
        let row = y0 + v;
        for u in 0..patch {
            let idx = row * field.width + (x0 + u);
            let mag = field.magnitude[idx];
            if mag == 0.0 {
                continue;
            }
            let du = u as f64 - center;
            let weight = (-(du * du + dv * dv) * inv_two_sigma_sq).exp();
            let bx = du / cell + (SPATIAL_BINS as f64 - 1.0) / 2.0;
            let mut bo = field.orientation[idx] * ori_scale;
            if bo >= ORIENTATION_BINS as f64 {
                bo -= ORIENTATION_BINS as f64;
            }

            let xi = bx.floor();
            let yi = by.floor();
            let oi = bo.floor();
            let fx = bx - xi;
            let fy = by - yi;
            let fo = bo - oi;
            let contrib = weight * mag;

            for (dy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
                let sy = yi as i64 + dy;
                if sy < 0 || sy >= SPATIAL_BINS as i64 || wy == 0.0 {
                    continue;
                }
                for (dx, wx) in [(0i64, 1.0 - fx), (1, fx)] {
                    let sx = xi as i64 + dx;
                    if sx < 0 || sx >= SPATIAL_BINS as i64 || wx == 0.0 {
                        continue;
                    }
                    let base = (sy as usize * SPATIAL_BINS + sx as usize) * ORIENTATION_BINS;
                    for (do_, wo) in [(0usize, 1.0 - fo), (1, fo)] {
                        let so = (oi as usize + do_) % ORIENTATION_BINS;
                        hist[base + so] += contrib * wy * wx * wo;
                    }
                }
            }
        }
    }
    normalize_descriptor(&hist)
}

/// L2-normalize, clamp at 0.2, L2-renormalize, clamp again; degenerate
/// input maps to the zero descriptor. The trailing clamp keeps every
/// component at or below 0.2 (renormalization alone would push the
/// saturated components back above the threshold); the norm stays in (0, 1].
pub(crate) fn normalize_descriptor(hist: &[f64; DESCRIPTOR_DIM]) -> Descriptor {
    let mut out = [0.0f32; DESCRIPTOR_DIM];
    let norm = hist.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < DEGENERATE_NORM_EPS {
        return out;
    }
    let mut clamped = [0.0f64; DESCRIPTOR_DIM];
    for (c, v) in clamped.iter_mut().zip(hist) {
        *c = (v / norm).min(CLAMP_THRESHOLD);
    }
    let renorm = clamped.iter().map(|v| v * v).sum::<f64>().sqrt();
    if renorm < DEGENERATE_NORM_EPS {
        return out;
    }
    for (o, c) in out.iter_mut().zip(&clamped) {
        *o = (c / renorm).min(CLAMP_THRESHOLD) as f32;
    }
    out
}

/// Descriptor for a single patch centered at `center`.
pub fn compute_descriptor(
    img: &GrayImage,
    center: (usize, usize),
    params: &DenseSiftParams,
) -> Result<Descriptor> {
    params.validate()?;
    let (cx, cy) = center;
    let half = params.patch / 2;
    if cx < half
        || cy < half
        || cx + half > img.width()
        || cy + half > img.height()
    {
        return Err(Error::validation(format!(
            "patch at ({cx}, {cy}) with side {} exceeds {}x{} image",
            params.patch,
            img.width(),
            img.height()
        )));
    }
    let field = GradientField::compute(img);
    Ok(descriptor_at(&field, cx, cy, params.patch))
}

/// One descriptor per dense grid center, in grid order. Deterministic; an
/// image smaller than the patch yields an empty list.
pub fn extract_dense_sift(img: &GrayImage, params: &DenseSiftParams) -> Vec<KeypointDescriptor> {
    let centers = dense_grid(img.width(), img.height(), params);
    if centers.is_empty() {
        return Vec::new();
    }
    let field = GradientField::compute(img);
    centers
        .into_par_iter()
        .map(|(cx, cy)| KeypointDescriptor {
            x: cx as f32,
            y: cy as f32,
            descriptor: descriptor_at(&field, cx, cy, params.patch),
        })
        .collect()
}

/// Write a `.dsift` cache record: little-endian u32 count, then repeated
/// `{f32 x, f32 y, 128 x f32}`.
pub fn write_dsift_cache(path: impl AsRef<Path>, descriptors: &[KeypointDescriptor]) -> Result<()> {
    let mut bytes = Vec::with_capacity(4 + descriptors.len() * (2 + DESCRIPTOR_DIM) * 4);
    bytes.extend_from_slice(&(descriptors.len() as u32).to_le_bytes());
    for kd in descriptors {
        bytes.extend_from_slice(&kd.x.to_le_bytes());
        bytes.extend_from_slice(&kd.y.to_le_bytes());
        for v in &kd.descriptor {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    atomic_write(path, &bytes)
}

/// Read a `.dsift` cache record written by [`write_dsift_cache`].
pub fn read_dsift_cache(path: impl AsRef<Path>) -> Result<Vec<KeypointDescriptor>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let record = (2 + DESCRIPTOR_DIM) * 4;
    if bytes.len() < 4 {
        return Err(Error::validation(format!(
            "truncated dsift cache: {}",
            path.display()
        )));
    }
    let count = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    if bytes.len() != 4 + count * record {
        return Err(Error::validation(format!(
            "dsift cache length mismatch in {}: header says {count} records",
            path.display()
        )));
    }
    let mut out = Vec::with_capacity(count);
    let mut off = 4;
    let mut read_f32 = |off: &mut usize| {
        let v = f32::from_le_bytes(bytes[*off..*off + 4].try_into().unwrap());
        *off += 4;
        v
    };
    for _ in 0..count {
        let x = read_f32(&mut off);
        let y = read_f32(&mut off);
        let mut descriptor = [0.0f32; DESCRIPTOR_DIM];
        for d in descriptor.iter_mut() {
            *d = read_f32(&mut off);
        }
        out.push(KeypointDescriptor { x, y, descriptor });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn noise_image(n: usize, seed: u64) -> GrayImage {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_fn(n, n, |_, _| rng.gen::<f32>())
    }

    #[test]
    fn grid_counts_match_formula() {
        let p = DenseSiftParams::default();
        let centers = dense_grid(64, 64, &p);
        assert_eq!(centers.len(), 49);
        assert_eq!(centers[0], (8, 8));
        assert_eq!(centers[48], (56, 56));

        assert_eq!(dense_grid(16, 16, &p), vec![(8, 8)]);
        assert!(dense_grid(15, 64, &p).is_empty());
    }

    #[test]
    fn grid_is_row_major() {
        let p = DenseSiftParams::default();
        let centers = dense_grid(25, 25, &p);
        assert_eq!(centers, vec![(8, 8), (16, 8), (8, 16), (16, 16)]);
    }

    #[test]
    fn params_validation() {
        assert!(DenseSiftParams::new(0, 16).is_err());
        assert!(DenseSiftParams::new(8, 15).is_err());
        assert!(DenseSiftParams::new(8, 2).is_err());
        assert!(DenseSiftParams::new(4, 8).is_ok());
    }

    #[test]
    fn constant_image_gives_zero_descriptors() {
        let img = GrayImage::from_fn(64, 64, |_, _| 0.5);
        let descs = extract_dense_sift(&img, &DenseSiftParams::default());
        assert_eq!(descs.len(), 49);
        for kd in &descs {
            assert!(kd.descriptor.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn descriptor_bounds_hold_on_noise() {
        let img = noise_image(64, 11);
        let descs = extract_dense_sift(&img, &DenseSiftParams::default());
        assert_eq!(descs.len(), 49);
        for kd in &descs {
            let norm: f64 = kd.descriptor.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
            assert!(norm > 0.0 && norm <= 1.0 + 1e-6, "norm {norm}");
            for &v in &kd.descriptor {
                assert!((0.0..=0.2 + 1e-6).contains(&f64::from(v)), "component {v}");
            }
        }
    }

    #[test]
    fn extraction_is_deterministic() {
        let img = noise_image(64, 3);
        let a = extract_dense_sift(&img, &DenseSiftParams::default());
        let b = extract_dense_sift(&img, &DenseSiftParams::default());
        assert_eq!(a, b);
    }

    #[test]
    fn intensity_scale_leaves_descriptors_unchanged() {
        let img = noise_image(48, 5);
        let scaled = GrayImage::from_fn(48, 48, |x, y| img.get(x, y) * 0.4);
        let p = DenseSiftParams::default();
        let a = extract_dense_sift(&img, &p);
        let b = extract_dense_sift(&scaled, &p);
        for (ka, kb) in a.iter().zip(&b) {
            for (va, vb) in ka.descriptor.iter().zip(&kb.descriptor) {
                assert!((va - vb).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn vertical_edge_mass_sits_at_orientation_zero() {
        // Left half dark, right half bright: gradients point along +x, so
        // orientation bin 0 takes all the mass.
        let img = GrayImage::from_fn(16, 16, |x, _| if x < 8 { 0.0 } else { 1.0 });
        let desc = compute_descriptor(&img, (8, 8), &DenseSiftParams::default()).unwrap();
        let mut per_bin = [0.0f64; ORIENTATION_BINS];
        for (i, &v) in desc.iter().enumerate() {
            per_bin[i % ORIENTATION_BINS] += f64::from(v);
        }
        assert!(per_bin[0] > 0.0);
        for (bin, &mass) in per_bin.iter().enumerate().skip(1) {
            assert!(mass < 1e-12, "bin {bin} has mass {mass}");
        }
    }

    #[test]
    fn out_of_bounds_patch_is_rejected() {
        let img = GrayImage::from_fn(32, 32, |_, _| 0.0);
        assert!(compute_descriptor(&img, (4, 16), &DenseSiftParams::default()).is_err());
        assert!(compute_descriptor(&img, (16, 25), &DenseSiftParams::default()).is_err());
        assert!(compute_descriptor(&img, (16, 16), &DenseSiftParams::default()).is_ok());
    }

    #[test]
    fn cache_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let img = noise_image(32, 9);
        let descs = extract_dense_sift(&img, &DenseSiftParams::default());
        let path = dir.path().join("img.dsift");
        write_dsift_cache(&path, &descs).unwrap();
        let back = read_dsift_cache(&path).unwrap();
        assert_eq!(descs, back);

        // byte layout is pinned: header + fixed-size records
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 4 + descs.len() * (2 + DESCRIPTOR_DIM) * 4);
        assert_eq!(&bytes[..4], &(descs.len() as u32).to_le_bytes());
    }

    #[test]
    fn truncated_cache_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.dsift");
        std::fs::write(&path, 7u32.to_le_bytes()).unwrap();
        assert!(read_dsift_cache(&path).is_err());
    }
}
