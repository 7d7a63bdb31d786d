//! Visual vocabulary: feature subsampling, k-means clustering and
//! nearest-word assignment.

use std::collections::HashSet;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsift::KeypointDescriptor;
use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::seeding::derive_rng;

pub const KMEANS_DEFAULT_MAX_ITER: usize = 100;
pub const KMEANS_DEFAULT_TOL: f64 = 1e-4;

/// M centroids in descriptor space.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    centroids: Vec<Vec<f64>>,
}

impl Vocabulary {
    pub fn new(centroids: Vec<Vec<f64>>) -> Result<Self> {
        if centroids.is_empty() {
            return Err(Error::validation("vocabulary needs at least one centroid"));
        }
        let dim = centroids[0].len();
        if dim == 0 {
            return Err(Error::validation("centroid dimension must be >= 1"));
        }
        for c in &centroids {
            if c.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: c.len(),
                });
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation("centroid has non-finite component"));
            }
        }
        Ok(Self { centroids })
    }

    /// Vocabulary size M.
    pub fn size(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids[0].len()
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }
}

/// How many features to keep and the seed selecting them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubsampleSpec {
    pub total: usize,
    pub seed: u64,
}

/// Draw an equal share of features from every image, without replacement.
///
/// Each image contributes `total / n` features (the first `total % n`
/// images one more), selected by a counter-based generator derived from
/// `(seed, image index)`, so the choice for one image is independent of all
/// others. Errors if any image holds fewer features than its quota.
pub fn subsample_features<T: Clone>(per_image: &[Vec<T>], spec: &SubsampleSpec) -> Result<Vec<T>> {
    let n = per_image.len();
    if n == 0 {
        return Err(Error::validation("subsample needs at least one image"));
    }
    if spec.total < n {
        return Err(Error::validation(format!(
            "subsample total {} is below the image count {n}",
            spec.total
        )));
    }
    let base = spec.total / n;
    let remainder = spec.total % n;
    let mut out = Vec::with_capacity(spec.total);
    for (i, feats) in per_image.iter().enumerate() {
        let quota = base + usize::from(i < remainder);
        if feats.len() < quota {
            return Err(Error::QuotaShortfall {
                image: format!("#{i}"),
                available: feats.len(),
                required: quota,
            });
        }
        let mut rng = derive_rng(spec.seed, "subsample", i as u64);
        let mut picked = rand::seq::index::sample(&mut rng, feats.len(), quota).into_vec();
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|j| feats[j].clone()));
    }
    Ok(out)
}

/// Promote descriptors to the f64 points consumed by k-means.
pub fn to_points<'a>(descs: impl IntoIterator<Item = &'a KeypointDescriptor>) -> Vec<Vec<f64>> {
    descs
        .into_iter()
        .map(|kd| kd.descriptor.iter().map(|&v| f64::from(v)).collect())
        .collect()
}

/// Full k-means result: the vocabulary plus the diagnostics the tests lean
/// on (per-iteration WCSS and the final assignment).
#[derive(Debug, Clone)]
pub struct KmeansOutcome {
    pub vocabulary: Vocabulary,
    /// Cluster index per input point, nearest against the final centroids.
    pub assignments: Vec<usize>,
    /// WCSS after each assignment phase, including the final one.
    pub wcss_history: Vec<f64>,
    pub iterations: usize,
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

fn nearest_centroid(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    (best, best_d)
}

fn count_distinct(features: &[Vec<f64>]) -> usize {
    let mut set: HashSet<Vec<u64>> = HashSet::with_capacity(features.len());
    for f in features {
        set.insert(f.iter().map(|v| v.to_bits()).collect());
    }
    set.len()
}

/// k-means++ initialization: first centroid uniform, the rest D^2-weighted.
fn kmeanspp_init(features: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = features.len();
    let mut centroids = Vec::with_capacity(k);
    let first = rng.gen_range(0..n);
    centroids.push(features[first].clone());
    let mut min_d2: Vec<f64> = features.iter().map(|f| sq_dist(f, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = min_d2.iter().sum();
        let threshold = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = None;
        for (i, &d) in min_d2.iter().enumerate() {
            acc += d;
            if acc > threshold && d > 0.0 {
                chosen = Some(i);
                break;
            }
        }
        let chosen = chosen.unwrap_or_else(|| {
            // numeric fallback: last point with positive weight
            min_d2
                .iter()
                .rposition(|&d| d > 0.0)
                .expect("k <= distinct points guarantees a positive weight")
        });
        let centroid = features[chosen].clone();
        for (d, f) in min_d2.iter_mut().zip(features) {
            *d = d.min(sq_dist(f, &centroid));
        }
        centroids.push(centroid);
    }
    centroids
}

/// Lloyd iterations from the given initial centroids. Assignments break
/// ties toward the lowest centroid index; means accumulate in point-index
/// order; an emptied cluster is re-seeded with the point farthest from its
/// assigned centroid.
fn lloyd(
    features: &[Vec<f64>],
    mut centroids: Vec<Vec<f64>>,
    max_iter: usize,
    tol: f64,
) -> KmeansOutcome {
    let k = centroids.len();
    let dim = features[0].len();
    let mut assignments = vec![0usize; features.len()];
    let mut wcss_history: Vec<f64> = Vec::new();
    let mut iterations = 0;

    for _ in 0..max_iter {
        iterations += 1;
        let pairs: Vec<(usize, f64)> = features
            .par_iter()
            .map(|f| nearest_centroid(f, &centroids))
            .collect();
        let mut wcss = 0.0;
        for (i, (c, d)) in pairs.iter().enumerate() {
            assignments[i] = *c;
            wcss += d;
        }
        if let Some(&prev) = wcss_history.last() {
            assert!(
                wcss <= prev + 1e-9 * (1.0 + prev),
                "Lloyd WCSS increased: {prev} -> {wcss}"
            );
        }
        wcss_history.push(wcss);

        let mut counts = vec![0usize; k];
        for &a in &assignments {
            counts[a] += 1;
        }
        // Re-seed empty clusters with the farthest assigned point, drawn
        // from clusters that can spare one.
        let mut taken: HashSet<usize> = HashSet::new();
        for empty in 0..k {
            if counts[empty] > 0 {
                continue;
            }
            let mut far: Option<(usize, f64)> = None;
            for (i, (_, d)) in pairs.iter().enumerate() {
                if taken.contains(&i) || counts[assignments[i]] < 2 {
                    continue;
                }
                if far.is_none_or(|(_, fd)| *d > fd) {
                    far = Some((i, *d));
                }
            }
            if let Some((i, _)) = far {
                counts[assignments[i]] -= 1;
                assignments[i] = empty;
                counts[empty] = 1;
                taken.insert(i);
            }
        }

        let mut sums = vec![vec![0.0f64; dim]; k];
        for (f, &a) in features.iter().zip(&assignments) {
            for (s, v) in sums[a].iter_mut().zip(f) {
                *s += v;
            }
        }
        let mut movement: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue; // unsalvageable empty cluster keeps its centroid
            }
            let inv = 1.0 / counts[c] as f64;
            for s in sums[c].iter_mut() {
                *s *= inv;
            }
            movement = movement.max(sq_dist(&sums[c], &centroids[c]).sqrt());
            centroids[c] = std::mem::take(&mut sums[c]);
        }
        if movement < tol {
            break;
        }
    }

    // Final assignment against the final centroids, so the reported
    // clustering is consistent with the returned vocabulary.
    let mut wcss = 0.0;
    for (i, f) in features.iter().enumerate() {
        let (c, d) = nearest_centroid(f, &centroids);
        assignments[i] = c;
        wcss += d;
    }
    if let Some(&prev) = wcss_history.last() {
        assert!(wcss <= prev + 1e-9 * (1.0 + prev));
    }
    wcss_history.push(wcss);

    KmeansOutcome {
        vocabulary: Vocabulary { centroids },
        assignments,
        wcss_history,
        iterations,
    }
}

/// Cluster `features` into a k-word vocabulary (k-means++ then Lloyd).
pub fn kmeans(
    features: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<Vocabulary> {
    kmeans_detailed(features, k, seed, max_iter, tol).map(|o| o.vocabulary)
}

/// As [`kmeans`], but returns assignments and the WCSS trace as well.
pub fn kmeans_detailed(
    features: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<KmeansOutcome> {
    if features.is_empty() {
        return Err(Error::validation("k-means needs at least one feature"));
    }
    if k == 0 {
        return Err(Error::validation("k must be >= 1"));
    }
    let dim = features[0].len();
    for f in features {
        if f.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: f.len(),
            });
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("feature has non-finite component"));
        }
    }
    let distinct = count_distinct(features);
    if k > distinct {
        return Err(Error::validation(format!(
            "k = {k} exceeds the {distinct} distinct feature vectors"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = kmeanspp_init(features, k, &mut rng);
    Ok(lloyd(features, init, max_iter, tol))
}

/// Index of the centroid nearest to `d` (ties to the lowest index).
pub fn assign_word(d: &[f64], vocab: &Vocabulary) -> Result<usize> {
    if d.len() != vocab.dim() {
        return Err(Error::DimensionMismatch {
            expected: vocab.dim(),
            got: d.len(),
        });
    }
    Ok(nearest_centroid(d, &vocab.centroids).0)
}

/// Nearest word for an f32 descriptor (exact f64 promotion, same result as
/// [`assign_word`] on the promoted vector).
pub fn assign_word_f32(d: &[f32], vocab: &Vocabulary) -> Result<usize> {
    if d.len() != vocab.dim() {
        return Err(Error::DimensionMismatch {
            expected: vocab.dim(),
            got: d.len(),
        });
    }
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in vocab.centroids.iter().enumerate() {
        let dist: f64 = d
            .iter()
            .zip(centroid)
            .map(|(x, y)| {
                let diff = f64::from(*x) - y;
                diff * diff
            })
            .sum();
        if dist < best_d {
            best_d = dist;
            best = c;
        }
    }
    Ok(best)
}

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    format_version: u32,
    #[serde(rename = "M")]
    m: usize,
    dim: usize,
    centroids: Vec<Vec<f64>>,
}

const VOCAB_FORMAT_VERSION: u32 = 1;

/// Persist a vocabulary as `.vocab.json`.
pub fn save_vocabulary(vocab: &Vocabulary, path: impl AsRef<Path>) -> Result<()> {
    let file = VocabularyFile {
        format_version: VOCAB_FORMAT_VERSION,
        m: vocab.size(),
        dim: vocab.dim(),
        centroids: vocab.centroids.clone(),
    };
    atomic_write(path, &serde_json::to_vec_pretty(&file)?)
}

/// Load a `.vocab.json` vocabulary.
pub fn load_vocabulary(path: impl AsRef<Path>) -> Result<Vocabulary> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let file: VocabularyFile = serde_json::from_slice(&bytes)?;
    if file.format_version != VOCAB_FORMAT_VERSION {
        return Err(Error::FormatVersion {
            expected: VOCAB_FORMAT_VERSION,
            found: file.format_version,
        });
    }
    let vocab = Vocabulary::new(file.centroids)?;
    if vocab.size() != file.m || vocab.dim() != file.dim {
        return Err(Error::validation(format!(
            "vocabulary header (M={}, dim={}) disagrees with centroid data ({}x{})",
            file.m,
            file.dim,
            vocab.size(),
            vocab.dim()
        )));
    }
    Ok(vocab)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_points(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..dim).map(|_| rng.gen::<f64>()).collect())
            .collect()
    }

    #[test]
    fn subsample_equal_split() {
        let per_image: Vec<Vec<(usize, usize)>> = (0..4)
            .map(|i| (0..100).map(|j| (i, j)).collect())
            .collect();
        let picked = subsample_features(&per_image, &SubsampleSpec { total: 400, seed: 1 }).unwrap();
        assert_eq!(picked.len(), 400);
        for img in 0..4 {
            assert_eq!(picked.iter().filter(|(i, _)| *i == img).count(), 100);
        }
    }

    #[test]
    fn subsample_remainder_goes_to_first_images() {
        let per_image: Vec<Vec<(usize, usize)>> =
            (0..3).map(|i| (0..20).map(|j| (i, j)).collect()).collect();
        let picked = subsample_features(&per_image, &SubsampleSpec { total: 10, seed: 9 }).unwrap();
        let counts: Vec<usize> = (0..3)
            .map(|img| picked.iter().filter(|(i, _)| *i == img).count())
            .collect();
        assert_eq!(counts, vec![4, 3, 3]);
    }

    #[test]
    fn subsample_is_deterministic_and_seed_sensitive() {
        let per_image: Vec<Vec<usize>> = (0..3).map(|_| (0..50).collect()).collect();
        let a = subsample_features(&per_image, &SubsampleSpec { total: 30, seed: 5 }).unwrap();
        let b = subsample_features(&per_image, &SubsampleSpec { total: 30, seed: 5 }).unwrap();
        let c = subsample_features(&per_image, &SubsampleSpec { total: 30, seed: 6 }).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn subsample_shortfall_names_the_image() {
        let per_image: Vec<Vec<usize>> = vec![(0..50).collect(), (0..2).collect()];
        let err = subsample_features(&per_image, &SubsampleSpec { total: 20, seed: 0 }).unwrap_err();
        match err {
            Error::QuotaShortfall { image, available, required } => {
                assert_eq!(image, "#1");
                assert_eq!(available, 2);
                assert_eq!(required, 10);
            }
            other => panic!("expected quota shortfall, got {other:?}"),
        }
    }

    #[test]
    fn kmeans_k1_is_the_mean() {
        let features = random_points(25, 8, 3);
        let vocab = kmeans(&features, 1, 0, 100, 1e-8).unwrap();
        for (j, &v) in vocab.centroids()[0].iter().enumerate() {
            let mean: f64 = features.iter().map(|f| f[j]).sum::<f64>() / 25.0;
            assert!((v - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn kmeans_separates_coincident_groups() {
        let mut features = vec![vec![0.0; 16]; 10];
        let mut spike = vec![0.0; 16];
        spike[0] = 1.0;
        spike[1] = 1.0;
        features.extend(std::iter::repeat_n(spike.clone(), 10));
        let vocab = kmeans(&features, 2, 7, 100, 1e-6).unwrap();
        let mut got: Vec<Vec<f64>> = vocab.centroids().to_vec();
        got.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        assert_eq!(got[0], vec![0.0; 16]);
        assert_eq!(got[1], spike);
    }

    #[test]
    fn kmeans_rejects_bad_inputs() {
        assert!(kmeans(&[], 1, 0, 10, 1e-4).is_err());
        let dup = vec![vec![1.0, 2.0], vec![1.0, 2.0]];
        assert!(kmeans(&dup, 2, 0, 10, 1e-4).is_err());
        assert!(kmeans(&dup, 1, 0, 10, 1e-4).is_ok());
    }

    #[test]
    fn wcss_history_is_non_increasing() {
        let features = random_points(200, 6, 11);
        let outcome = kmeans_detailed(&features, 5, 42, 100, 1e-6).unwrap();
        for w in outcome.wcss_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * (1.0 + w[0]));
        }
        assert_eq!(outcome.assignments.len(), 200);
    }

    #[test]
    fn final_assignment_is_nearest() {
        let features = random_points(80, 4, 2);
        let outcome = kmeans_detailed(&features, 4, 5, 100, 1e-6).unwrap();
        for (f, &a) in features.iter().zip(&outcome.assignments) {
            let (best, _) = nearest_centroid(f, outcome.vocabulary.centroids());
            assert_eq!(a, best);
        }
    }

    #[test]
    fn lloyd_wcss_is_order_insensitive_for_fixed_init() {
        let features = random_points(60, 5, 21);
        let init = kmeanspp_init(&features, 3, &mut ChaCha8Rng::seed_from_u64(1));
        let a = lloyd(&features, init.clone(), 100, 1e-8);
        let mut permuted = features.clone();
        permuted.reverse();
        let b = lloyd(&permuted, init, 100, 1e-8);
        let (wa, wb) = (
            *a.wcss_history.last().unwrap(),
            *b.wcss_history.last().unwrap(),
        );
        assert!((wa - wb).abs() < 1e-6, "{wa} vs {wb}");
    }

    #[test]
    fn assign_word_returns_matching_centroid() {
        let features = random_points(40, 8, 13);
        let vocab = kmeans(&features, 6, 3, 100, 1e-6).unwrap();
        for (i, c) in vocab.centroids().iter().enumerate() {
            assert_eq!(assign_word(c, &vocab).unwrap(), i);
        }
    }

    #[test]
    fn assign_word_ties_break_to_lowest_index() {
        let vocab = Vocabulary::new(vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![5.0, 5.0]]).unwrap();
        assert_eq!(assign_word(&[1.0, 0.1], &vocab).unwrap(), 0);
    }

    #[test]
    fn assign_word_checks_dimension() {
        let vocab = Vocabulary::new(vec![vec![0.0; 4]]).unwrap();
        assert!(assign_word(&[0.0; 3], &vocab).is_err());
        assert!(assign_word_f32(&[0.0; 5], &vocab).is_err());
    }

    #[test]
    fn f32_assignment_matches_promoted_f64() {
        let features = random_points(30, 128, 17);
        let vocab = kmeans(&features, 10, 23, 100, 1e-6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let d32: Vec<f32> = (0..128).map(|_| rng.gen::<f32>()).collect();
            let d64: Vec<f64> = d32.iter().map(|&v| f64::from(v)).collect();
            assert_eq!(
                assign_word_f32(&d32, &vocab).unwrap(),
                assign_word(&d64, &vocab).unwrap()
            );
        }
    }

    #[test]
    fn vocabulary_json_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = kmeans(&random_points(30, 16, 1), 4, 9, 100, 1e-6).unwrap();
        let path = dir.path().join("words.vocab.json");
        save_vocabulary(&vocab, &path).unwrap();
        assert_eq!(load_vocabulary(&path).unwrap(), vocab);

        let text = std::fs::read_to_string(&path).unwrap();
        let json: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(json["format_version"], 1);
        assert_eq!(json["M"], 4);
        assert_eq!(json["dim"], 16);
    }

    #[test]
    fn vocabulary_load_rejects_unknown_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.vocab.json");
        std::fs::write(
            &path,
            r#"{"format_version":2,"M":1,"dim":1,"centroids":[[0.0]]}"#,
        )
        .unwrap();
        assert!(matches!(
            load_vocabulary(&path),
            Err(Error::FormatVersion { .. })
        ));
    }
}
