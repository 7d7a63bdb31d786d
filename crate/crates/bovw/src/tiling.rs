//! Spatial tilings: encode (location, word) assignments into per-region
//! histograms concatenated region-major and L1-normalized.
//!
//! Four schemes: a single global region; 2x2 rectangular quadrants; log-polar
//! sectors (r radial scales x theta orientations, radial edges geometric with
//! ratio 2); and concentric circular rings (equally spaced radii). The polar
//! schemes are bounded by the inscribed circle R = min(w, h)/2 about the
//! image center; points at distance >= R fall outside every region and are
//! discarded, which is what makes the circular histogram exactly invariant
//! to rotations about the center.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::atomic_write;

pub const DEFAULT_LOGPOLAR_SCALES: usize = 3;
pub const DEFAULT_LOGPOLAR_ORIENTATIONS: usize = 4;
pub const DEFAULT_CIRCULAR_RINGS: usize = 3;

/// Spatial partitioning scheme for histogram encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TilingScheme {
    /// One region covering the whole image (plain bag of words).
    Global,
    /// 2x2 quadrants, row-major; boundary points go right/bottom.
    Rectangular,
    /// `scales` radial bins x `orientations` angular bins about the center.
    LogPolar { scales: usize, orientations: usize },
    /// `rings` concentric rings about the center.
    Circular { rings: usize },
}

impl TilingScheme {
    pub fn logpolar_default() -> Self {
        TilingScheme::LogPolar {
            scales: DEFAULT_LOGPOLAR_SCALES,
            orientations: DEFAULT_LOGPOLAR_ORIENTATIONS,
        }
    }

    pub fn circular_default() -> Self {
        TilingScheme::Circular {
            rings: DEFAULT_CIRCULAR_RINGS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            TilingScheme::LogPolar {
                scales,
                orientations,
            } if scales == 0 || orientations == 0 => Err(Error::validation(
                "log-polar tiling needs scales >= 1 and orientations >= 1",
            )),
            TilingScheme::Circular { rings } if rings == 0 => {
                Err(Error::validation("circular tiling needs rings >= 1"))
            }
            _ => Ok(()),
        }
    }

    /// Number of spatial regions.
    pub fn region_count(&self) -> usize {
        match *self {
            TilingScheme::Global => 1,
            TilingScheme::Rectangular => 4,
            TilingScheme::LogPolar {
                scales,
                orientations,
            } => scales * orientations,
            TilingScheme::Circular { rings } => rings,
        }
    }

    /// Encoded vector length for a vocabulary of size `m`.
    pub fn feature_len(&self, m: usize) -> usize {
        self.region_count() * m
    }
}

impl fmt::Display for TilingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            TilingScheme::Global => write!(f, "global"),
            TilingScheme::Rectangular => write!(f, "rectangular"),
            TilingScheme::LogPolar {
                scales,
                orientations,
            } => write!(f, "logpolar-{scales}x{orientations}"),
            TilingScheme::Circular { rings } => write!(f, "circular-{rings}"),
        }
    }
}

impl FromStr for TilingScheme {
    type Err = Error;

    /// Accepts `global`, `rectangular`, `logpolar[-RxT]`, `circular[-R]`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let scheme = match s.as_str() {
            "global" => TilingScheme::Global,
            "rectangular" => TilingScheme::Rectangular,
            "logpolar" => TilingScheme::logpolar_default(),
            "circular" => TilingScheme::circular_default(),
            other => {
                if let Some(spec) = other.strip_prefix("logpolar-") {
                    let (r, t) = spec
                        .split_once('x')
                        .ok_or_else(|| Error::validation(format!("bad tiling: {other}")))?;
                    TilingScheme::LogPolar {
                        scales: r
                            .parse()
                            .map_err(|_| Error::validation(format!("bad tiling: {other}")))?,
                        orientations: t
                            .parse()
                            .map_err(|_| Error::validation(format!("bad tiling: {other}")))?,
                    }
                } else if let Some(r) = other.strip_prefix("circular-") {
                    TilingScheme::Circular {
                        rings: r
                            .parse()
                            .map_err(|_| Error::validation(format!("bad tiling: {other}")))?,
                    }
                } else {
                    return Err(Error::validation(format!("unknown tiling: {other}")));
                }
            }
        };
        scheme.validate()?;
        Ok(scheme)
    }
}

impl Serialize for TilingScheme {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TilingScheme {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn check_in_image(x: f64, y: f64, width: usize, height: usize) -> Result<()> {
    if !x.is_finite() || !y.is_finite() || x < 0.0 || y < 0.0 || x >= width as f64 || y >= height as f64
    {
        return Err(Error::validation(format!(
            "point ({x}, {y}) outside {width}x{height} image"
        )));
    }
    Ok(())
}

/// Quadrant of `(x, y)`: `2*[y >= h/2] + [x >= w/2]` (row-major; boundary
/// points go right/bottom).
pub fn region_rectangular(x: f64, y: f64, width: usize, height: usize) -> Result<usize> {
    check_in_image(x, y, width, height)?;
    let right = usize::from(x >= width as f64 / 2.0);
    let bottom = usize::from(y >= height as f64 / 2.0);
    Ok(2 * bottom + right)
}

fn center_and_radius(width: usize, height: usize) -> (f64, f64, f64) {
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let radius = width.min(height) as f64 / 2.0;
    (cx, cy, radius)
}

/// Log-polar sector of `(x, y)`, or `None` when the point lies at distance
/// >= R from the center. Radial edges are `R * 2^(i - scales)`; angular bin
/// 0 starts at the +x axis, counterclockwise; index = radial * orientations
/// + angular.
pub fn region_logpolar(
    x: f64,
    y: f64,
    width: usize,
    height: usize,
    scales: usize,
    orientations: usize,
) -> Result<Option<usize>> {
    check_in_image(x, y, width, height)?;
    let (cx, cy, radius) = center_and_radius(width, height);
    let dx = x - cx;
    let dy = y - cy;
    let dist = dx.hypot(dy);
    if dist >= radius {
        return Ok(None);
    }
    let mut radial = None;
    for i in 1..=scales {
        if dist < radius * 2f64.powi(i as i32 - scales as i32) {
            radial = Some(i - 1);
            break;
        }
    }
    let radial = radial.expect("dist < R implies dist < the outermost edge R");
    let mut phi = dy.atan2(dx);
    if phi < 0.0 {
        phi += 2.0 * std::f64::consts::PI;
    }
    let angular =
        ((orientations as f64 * phi / (2.0 * std::f64::consts::PI)) as usize).min(orientations - 1);
    Ok(Some(radial * orientations + angular))
}

/// Ring of `(x, y)` under `rings` equally spaced radii `R * i / rings`, or
/// `None` at distance >= R.
pub fn region_circular(
    x: f64,
    y: f64,
    width: usize,
    height: usize,
    rings: usize,
) -> Result<Option<usize>> {
    check_in_image(x, y, width, height)?;
    let (cx, cy, radius) = center_and_radius(width, height);
    let dist = (x - cx).hypot(y - cy);
    if dist >= radius {
        return Ok(None);
    }
    for i in 1..=rings {
        if dist < radius * i as f64 / rings as f64 {
            return Ok(Some(i - 1));
        }
    }
    Ok(Some(rings - 1)) // unreachable for dist < R, kept for fp safety
}

/// Region of `(x, y)` under `scheme`; `None` means the point is discarded.
pub fn region(
    scheme: &TilingScheme,
    x: f64,
    y: f64,
    width: usize,
    height: usize,
) -> Result<Option<usize>> {
    match *scheme {
        TilingScheme::Global => {
            check_in_image(x, y, width, height)?;
            Ok(Some(0))
        }
        TilingScheme::Rectangular => region_rectangular(x, y, width, height).map(Some),
        TilingScheme::LogPolar {
            scales,
            orientations,
        } => region_logpolar(x, y, width, height, scales, orientations),
        TilingScheme::Circular { rings } => region_circular(x, y, width, height, rings),
    }
}

/// Concatenated per-region word histograms under a tiling scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct TiledFeatureVector {
    values: Vec<f64>,
    scheme: TilingScheme,
    m: usize,
}

impl TiledFeatureVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scheme(&self) -> &TilingScheme {
        &self.scheme
    }

    /// Vocabulary size M.
    pub fn vocab_size(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Histogram slice of one region.
    pub fn region_block(&self, region: usize) -> &[f64] {
        &self.values[region * self.m..(region + 1) * self.m]
    }
}

/// Scale to unit L1 mass; an all-zero vector stays all-zero.
pub fn l1_normalize(values: &mut [f64]) {
    let mass: f64 = values.iter().sum();
    if mass > 0.0 {
        for v in values.iter_mut() {
            *v /= mass;
        }
    }
}

/// Raw (un-normalized) region-major histogram of word counts.
pub fn encode_counts(
    assignments: &[(f64, f64, usize)],
    width: usize,
    height: usize,
    m: usize,
    scheme: &TilingScheme,
) -> Result<TiledFeatureVector> {
    scheme.validate()?;
    if m == 0 {
        return Err(Error::validation("vocabulary size must be >= 1"));
    }
    let mut values = vec![0.0f64; scheme.feature_len(m)];
    for &(x, y, word) in assignments {
        if word >= m {
            return Err(Error::validation(format!(
                "word index {word} >= vocabulary size {m}"
            )));
        }
        if let Some(r) = region(scheme, x, y, width, height)? {
            values[r * m + word] += 1.0;
        }
    }
    Ok(TiledFeatureVector {
        values,
        scheme: *scheme,
        m,
    })
}

/// Region-major histogram of word counts, L1-normalized.
pub fn encode(
    assignments: &[(f64, f64, usize)],
    width: usize,
    height: usize,
    m: usize,
    scheme: &TilingScheme,
) -> Result<TiledFeatureVector> {
    let mut vec = encode_counts(assignments, width, height, m, scheme)?;
    l1_normalize(&mut vec.values);
    Ok(vec)
}

#[derive(Serialize, Deserialize)]
struct FeatureFile {
    format_version: u32,
    scheme: TilingScheme,
    #[serde(rename = "M")]
    m: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    r: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    theta: Option<usize>,
    values: Vec<f64>,
}

const FEATURE_FORMAT_VERSION: u32 = 1;

/// Persist an encoded vector as `.feat.json`.
pub fn save_feature_vector(vec: &TiledFeatureVector, path: impl AsRef<Path>) -> Result<()> {
    let (r, theta) = match *vec.scheme() {
        TilingScheme::LogPolar {
            scales,
            orientations,
        } => (Some(scales), Some(orientations)),
        TilingScheme::Circular { rings } => (Some(rings), None),
        _ => (None, None),
    };
    let file = FeatureFile {
        format_version: FEATURE_FORMAT_VERSION,
        scheme: vec.scheme,
        m: vec.m,
        r,
        theta,
        values: vec.values.clone(),
    };
    atomic_write(path, &serde_json::to_vec(&file)?)
}

/// Load a `.feat.json` vector.
pub fn load_feature_vector(path: impl AsRef<Path>) -> Result<TiledFeatureVector> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let file: FeatureFile = serde_json::from_slice(&bytes)?;
    if file.format_version != FEATURE_FORMAT_VERSION {
        return Err(Error::FormatVersion {
            expected: FEATURE_FORMAT_VERSION,
            found: file.format_version,
        });
    }
    if file.values.len() != file.scheme.feature_len(file.m) {
        return Err(Error::validation(format!(
            "feature vector length {} does not match scheme {} with M={}",
            file.values.len(),
            file.scheme,
            file.m
        )));
    }
    Ok(TiledFeatureVector {
        values: file.values,
        scheme: file.scheme,
        m: file.m,
    })
}
