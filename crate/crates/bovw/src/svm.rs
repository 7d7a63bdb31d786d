//! RBF-kernel SVM: binary training by SMO, one-vs-all multiclass, and
//! n-fold cross-validated grid search over (C, gamma).
//!
//! The solver optimizes the usual soft-margin dual with a working set of
//! two multipliers per step, chosen as the maximal violating pair (first
//! order for i, second order for j), full kernel caching and no shrinking.
//! It terminates when every KKT violation is at or below `tol`, which is
//! exactly the reported stopping criterion, and is deterministic given the
//! input order.

use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::seeding::derive_rng;

pub const DEFAULT_SMO_TOL: f64 = 1e-3;
pub const DEFAULT_MAX_PASSES: usize = 100;

/// Gain threshold standing in for a non-positive curvature pair.
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmHyperParams {
    #[serde(rename = "C")]
    pub c: f64,
    pub gamma: f64,
}

impl SvmHyperParams {
    pub fn new(c: f64, gamma: f64) -> Result<Self> {
        let hp = Self { c, gamma };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::validation(format!("C must be finite and > 0, got {}", self.c)));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::validation(format!(
                "gamma must be finite and > 0, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// exp(-gamma * ||x - y||^2)
pub fn rbf_kernel(x: &[f64], y: &[f64], gamma: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let d2: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum();
    Ok((-gamma * d2).exp())
}

/// Soft-margin binary RBF-SVM in dual form.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarySvmModel {
    support_vectors: Vec<Vec<f64>>,
    /// alpha_i * y_i per support vector.
    dual_coefs: Vec<f64>,
    bias: f64,
    hyperparams: SvmHyperParams,
}

impl BinarySvmModel {
    pub fn new(
        support_vectors: Vec<Vec<f64>>,
        dual_coefs: Vec<f64>,
        bias: f64,
        hyperparams: SvmHyperParams,
    ) -> Result<Self> {
        hyperparams.validate()?;
        if support_vectors.len() != dual_coefs.len() {
            return Err(Error::validation(format!(
                "{} support vectors but {} dual coefficients",
                support_vectors.len(),
                dual_coefs.len()
            )));
        }
        if let Some(dim) = support_vectors.first().map(Vec::len) {
            if support_vectors.iter().any(|sv| sv.len() != dim) {
                return Err(Error::validation("support vectors of mixed dimension"));
            }
        }
        if dual_coefs.iter().any(|a| a.abs() > hyperparams.c + 1e-9) {
            return Err(Error::validation("dual coefficient exceeds C"));
        }
        Ok(Self {
            support_vectors,
            dual_coefs,
            bias,
            hyperparams,
        })
    }

    pub fn support_vectors(&self) -> &[Vec<f64>] {
        &self.support_vectors
    }

    pub fn dual_coefs(&self) -> &[f64] {
        &self.dual_coefs
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn hyperparams(&self) -> SvmHyperParams {
        self.hyperparams
    }

    fn dim(&self) -> Option<usize> {
        self.support_vectors.first().map(Vec::len)
    }
}

/// sum_i alpha_i y_i K(sv_i, x) + b
pub fn decision_value(model: &BinarySvmModel, x: &[f64]) -> Result<f64> {
    if let Some(dim) = model.dim() {
        if x.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: x.len(),
            });
        }
    }
    let gamma = model.hyperparams.gamma;
    let mut sum = model.bias;
    for (sv, coef) in model.support_vectors.iter().zip(&model.dual_coefs) {
        sum += coef * rbf_kernel(sv, x, gamma)?;
    }
    Ok(sum)
}

/// SMO stopping controls: `tol` is the KKT tolerance, `max_passes` bounds
/// the optimization effort at `max_passes * n` pair updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub tol: f64,
    pub max_passes: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_SMO_TOL,
            max_passes: DEFAULT_MAX_PASSES,
        }
    }
}

/// Binary training result along with the full multiplier vector, which the
/// feasibility checks inspect.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: BinarySvmModel,
    pub alphas: Vec<f64>,
    /// Final maximal KKT violation (m(alpha) - M(alpha), clamped at 0).
    pub kkt_violation: f64,
    pub pair_updates: usize,
}

fn validate_training_inputs(x: &[Vec<f64>], y: &[i8]) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::validation(format!(
            "{} feature rows but {} labels",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::validation("training set is empty"));
    }
    let dim = x[0].len();
    for row in x {
        if row.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("non-finite feature value"));
        }
    }
    if y.iter().any(|&l| l != 1 && l != -1) {
        return Err(Error::validation("labels must be +1 or -1"));
    }
    if !y.contains(&1) || !y.contains(&-1) {
        return Err(Error::validation("training set needs both classes"));
    }
    Ok(dim)
}

/// Train a binary soft-margin RBF-SVM with SMO.
pub fn train_binary(
    x: &[Vec<f64>],
    y: &[i8],
    hp: SvmHyperParams,
    opts: TrainOptions,
) -> Result<BinarySvmModel> {
    train_binary_detailed(x, y, hp, opts).map(|o| o.model)
}

/// As [`train_binary`], additionally returning the multipliers and the
/// final KKT violation.
pub fn train_binary_detailed(
    x: &[Vec<f64>],
    y: &[i8],
    hp: SvmHyperParams,
    opts: TrainOptions,
) -> Result<TrainOutcome> {
    hp.validate()?;
    validate_training_inputs(x, y)?;
    let n = x.len();
    let c = hp.c;

    // full kernel cache; problem sizes here are a few thousand at most
    let kernel: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / n, idx % n);
            rbf_kernel(&x[i], &x[j], hp.gamma).expect("dims checked")
        })
        .collect();
    let k = |i: usize, j: usize| kernel[i * n + j];

    let mut alpha = vec![0.0f64; n];
    // f_i = sum_j alpha_j y_j K_ij (decision without bias)
    let mut f = vec![0.0f64; n];

    let in_up = |i: usize, alpha: &[f64]| {
        (y[i] == 1 && alpha[i] < c) || (y[i] == -1 && alpha[i] > 0.0)
    };
    let in_low = |i: usize, alpha: &[f64]| {
        (y[i] == 1 && alpha[i] > 0.0) || (y[i] == -1 && alpha[i] < c)
    };

    let max_updates = opts.max_passes.saturating_mul(n).max(1);
    let mut updates = 0usize;
    let (mut m_up, mut m_low);
    loop {
        // maximal violating pair: i maximizes y - f over I_up,
        // j minimizes it over I_low
        m_up = f64::NEG_INFINITY;
        m_low = f64::INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            let g = f64::from(y[t]) - f[t];
            if in_up(t, &alpha) && g > m_up {
                m_up = g;
                i_sel = Some(t);
            }
            if in_low(t, &alpha) && g < m_low {
                m_low = g;
            }
        }
        if m_up - m_low <= opts.tol || updates >= max_updates {
            break;
        }
        let i = i_sel.expect("both classes present implies I_up is non-empty");

        // second-order choice of j: maximize the guaranteed objective gain
        // b^2 / a among violating candidates
        let gi = f64::from(y[i]) - f[i];
        let mut j_sel = None;
        let mut best_gain = f64::NEG_INFINITY;
        for t in 0..n {
            if !in_low(t, &alpha) {
                continue;
            }
            let gt = f64::from(y[t]) - f[t];
            let b = gi - gt;
            if b <= 0.0 {
                continue;
            }
            let a = (k(i, i) + k(t, t) - 2.0 * k(i, t)).max(TAU);
            let gain = b * b / a;
            if gain > best_gain {
                best_gain = gain;
                j_sel = Some(t);
            }
        }
        let j = j_sel.expect("m_up > m_low implies a violating candidate");

        // two-variable subproblem on (alpha_i, alpha_j)
        let (yi, yj) = (f64::from(y[i]), f64::from(y[j]));
        let (l, h) = if y[i] != y[j] {
            let d = alpha[j] - alpha[i];
            (d.max(0.0), (c + d).min(c))
        } else {
            let s = alpha[i] + alpha[j];
            ((s - c).max(0.0), s.min(c))
        };
        let eta = (k(i, i) + k(j, j) - 2.0 * k(i, j)).max(TAU);
        let ei = f[i] - yi;
        let ej = f[j] - yj;
        let mut aj_new = alpha[j] + yj * (ei - ej) / eta;
        aj_new = aj_new.clamp(l, h);
        let ai_new = (alpha[i] + yi * yj * (alpha[j] - aj_new)).clamp(0.0, c);

        let delta_i = (ai_new - alpha[i]) * yi;
        let delta_j = (aj_new - alpha[j]) * yj;
        alpha[i] = ai_new;
        alpha[j] = aj_new;
        for t in 0..n {
            f[t] += delta_i * k(i, t) + delta_j * k(j, t);
        }
        updates += 1;
    }
    if m_up - m_low > opts.tol {
        log::warn!(
            "SMO stopped after {updates} pair updates with KKT violation {:.3e} > tol {:.1e}",
            m_up - m_low,
            opts.tol
        );
    }

    // with b midway between the active bounds, every per-point KKT
    // violation is at most (m_up - m_low) / 2
    let bias = if m_up.is_finite() && m_low.is_finite() {
        (m_up + m_low) / 2.0
    } else {
        0.0
    };

    let mut support_vectors = Vec::new();
    let mut dual_coefs = Vec::new();
    for i in 0..n {
        if alpha[i] > 0.0 {
            support_vectors.push(x[i].clone());
            dual_coefs.push(alpha[i] * f64::from(y[i]));
        }
    }
    Ok(TrainOutcome {
        model: BinarySvmModel {
            support_vectors,
            dual_coefs,
            bias,
            hyperparams: hp,
        },
        alphas: alpha,
        kkt_violation: (m_up - m_low).max(0.0),
        pair_updates: updates,
    })
}

/// Largest per-point KKT violation of `model` on its training set, in
/// margin units: points with alpha = 0 must have y*g >= 1, points at the
/// C bound y*g <= 1, free points y*g = 1.
pub fn max_kkt_violation(
    x: &[Vec<f64>],
    y: &[i8],
    alphas: &[f64],
    model: &BinarySvmModel,
) -> Result<f64> {
    let c = model.hyperparams.c;
    let mut worst: f64 = 0.0;
    for ((xi, &yi), &a) in x.iter().zip(y).zip(alphas) {
        let margin = f64::from(yi) * decision_value(model, xi)?;
        let v = if a <= 0.0 {
            1.0 - margin
        } else if a >= c {
            margin - 1.0
        } else {
            (margin - 1.0).abs()
        };
        worst = worst.max(v);
    }
    Ok(worst)
}

/// One-vs-all multiclass model: one binary model per label, shared
/// hyperparameters; labels are kept in sorted order.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiClassSvmModel {
    labels: Vec<String>,
    models: Vec<BinarySvmModel>,
    hyperparams: SvmHyperParams,
}

impl MultiClassSvmModel {
    pub fn new(
        labels: Vec<String>,
        models: Vec<BinarySvmModel>,
        hyperparams: SvmHyperParams,
    ) -> Result<Self> {
        if labels.len() != models.len() {
            return Err(Error::validation(format!(
                "{} labels but {} binary models",
                labels.len(),
                models.len()
            )));
        }
        if labels.len() < 2 {
            return Err(Error::validation("multiclass model needs >= 2 labels"));
        }
        let dims: Vec<usize> = models.iter().filter_map(BinarySvmModel::dim).collect();
        if dims.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::validation("binary models of mixed dimension"));
        }
        Ok(Self {
            labels,
            models,
            hyperparams,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn models(&self) -> &[BinarySvmModel] {
        &self.models
    }

    pub fn hyperparams(&self) -> SvmHyperParams {
        self.hyperparams
    }

    /// Per-label decision values, in label order.
    pub fn decision_values(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.models.iter().map(|m| decision_value(m, x)).collect()
    }

    /// Label with the largest decision value; ties go to the earliest label.
    pub fn predict(&self, x: &[f64]) -> Result<&str> {
        let values = self.decision_values(x)?;
        let mut best = 0;
        for (i, &v) in values.iter().enumerate().skip(1) {
            if v > values[best] {
                best = i;
            }
        }
        Ok(&self.labels[best])
    }
}

fn distinct_sorted_labels(labels: &[String]) -> Vec<String> {
    let mut distinct: Vec<String> = labels.to_vec();
    distinct.sort();
    distinct.dedup();
    distinct
}

/// Train one binary model per distinct label (that label +1, rest -1).
pub fn train_one_vs_all(
    x: &[Vec<f64>],
    labels: &[String],
    hp: SvmHyperParams,
    opts: TrainOptions,
) -> Result<MultiClassSvmModel> {
    if x.len() != labels.len() {
        return Err(Error::validation(format!(
            "{} feature rows but {} labels",
            x.len(),
            labels.len()
        )));
    }
    let distinct = distinct_sorted_labels(labels);
    if distinct.len() < 2 {
        return Err(Error::validation("one-vs-all needs >= 2 distinct labels"));
    }
    let models: Result<Vec<BinarySvmModel>> = distinct
        .par_iter()
        .map(|label| {
            let y: Vec<i8> = labels
                .iter()
                .map(|l| if l == label { 1 } else { -1 })
                .collect();
            train_binary(x, &y, hp, opts)
        })
        .collect();
    MultiClassSvmModel::new(distinct, models?, hp)
}

/// Deterministic stratified fold assignment: per label, indices are
/// shuffled by a seeded generator and dealt round-robin.
pub fn stratified_folds(labels: &[String], n_folds: usize, seed: u64) -> Result<Vec<usize>> {
    if n_folds < 2 {
        return Err(Error::validation("cross-validation needs >= 2 folds"));
    }
    let distinct = distinct_sorted_labels(labels);
    let mut fold_of = vec![0usize; labels.len()];
    for (label_idx, label) in distinct.iter().enumerate() {
        let mut indices: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| (l == label).then_some(i))
            .collect();
        let mut rng = derive_rng(seed, "folds", label_idx as u64);
        indices.shuffle(&mut rng);
        for (j, i) in indices.into_iter().enumerate() {
            fold_of[i] = j % n_folds;
        }
    }
    Ok(fold_of)
}

/// Pick (C, gamma) by stratified n-fold cross-validation. Returns the pair
/// with the highest mean held-out accuracy (ties: smaller C, then smaller
/// gamma) along with that accuracy. If some label has fewer than `n_folds`
/// examples the fold count is reduced to the minimum class count.
pub fn grid_search_cv(
    x: &[Vec<f64>],
    labels: &[String],
    c_grid: &[f64],
    gamma_grid: &[f64],
    n_folds: usize,
    seed: u64,
    opts: TrainOptions,
) -> Result<(SvmHyperParams, f64)> {
    if c_grid.is_empty() || gamma_grid.is_empty() {
        return Err(Error::validation("hyperparameter grid is empty"));
    }
    if x.len() != labels.len() {
        return Err(Error::validation(format!(
            "{} feature rows but {} labels",
            x.len(),
            labels.len()
        )));
    }
    let distinct = distinct_sorted_labels(labels);
    if distinct.len() < 2 {
        return Err(Error::validation("grid search needs >= 2 distinct labels"));
    }
    let min_class = distinct
        .iter()
        .map(|d| labels.iter().filter(|l| *l == d).count())
        .min()
        .unwrap_or(0);
    let mut folds = n_folds;
    if min_class < n_folds {
        log::warn!(
            "smallest class has {min_class} examples; reducing {n_folds}-fold CV to {min_class} folds"
        );
        folds = min_class;
    }
    if folds < 2 {
        return Err(Error::validation(
            "stratified CV needs every label to have >= 2 examples",
        ));
    }
    let fold_of = stratified_folds(labels, folds, seed)?;

    let cells: Vec<(f64, f64)> = c_grid
        .iter()
        .flat_map(|&c| gamma_grid.iter().map(move |&g| (c, g)))
        .collect();
    let accuracies: Result<Vec<f64>> = cells
        .par_iter()
        .map(|&(c, gamma)| {
            let hp = SvmHyperParams::new(c, gamma)?;
            let mut fold_acc = Vec::with_capacity(folds);
            for fold in 0..folds {
                let mut train_x = Vec::new();
                let mut train_l = Vec::new();
                let mut test_idx = Vec::new();
                for (i, &f) in fold_of.iter().enumerate() {
                    if f == fold {
                        test_idx.push(i);
                    } else {
                        train_x.push(x[i].clone());
                        train_l.push(labels[i].clone());
                    }
                }
                let model = train_one_vs_all(&train_x, &train_l, hp, opts)?;
                let correct = test_idx
                    .iter()
                    .filter(|&&i| model.predict(&x[i]).is_ok_and(|p| p == labels[i]))
                    .count();
                fold_acc.push(correct as f64 / test_idx.len().max(1) as f64);
            }
            Ok(fold_acc.iter().sum::<f64>() / folds as f64)
        })
        .collect();
    let accuracies = accuracies?;

    let mut best = 0;
    for i in 1..cells.len() {
        let better = accuracies[i] > accuracies[best]
            || (accuracies[i] == accuracies[best]
                && (cells[i].0 < cells[best].0
                    || (cells[i].0 == cells[best].0 && cells[i].1 < cells[best].1)));
        if better {
            best = i;
        }
    }
    Ok((
        SvmHyperParams::new(cells[best].0, cells[best].1)?,
        accuracies[best],
    ))
}

/// The conventional coarse log-scale search grid for C.
pub fn default_c_grid() -> Vec<f64> {
    (-5..=15).step_by(2).map(|e| 2f64.powi(e)).collect()
}

/// The conventional coarse log-scale search grid for gamma.
pub fn default_gamma_grid() -> Vec<f64> {
    (-15..=3).step_by(2).map(|e| 2f64.powi(e)).collect()
}

#[derive(Serialize, Deserialize)]
pub(crate) struct BinaryModelFile {
    bias: f64,
    support_vectors: Vec<Vec<f64>>,
    dual_coefs: Vec<f64>,
}

/// On-disk shape of a multiclass model; shared with the CLI bundle format.
#[derive(Serialize, Deserialize)]
pub(crate) struct MultiClassModelFile {
    format_version: u32,
    labels: Vec<String>,
    hyperparams: SvmHyperParams,
    per_label: Vec<BinaryModelFile>,
}

const SVM_FORMAT_VERSION: u32 = 1;

pub(crate) fn to_model_file(model: &MultiClassSvmModel) -> MultiClassModelFile {
    MultiClassModelFile {
        format_version: SVM_FORMAT_VERSION,
        labels: model.labels.clone(),
        hyperparams: model.hyperparams,
        per_label: model
            .models
            .iter()
            .map(|m| BinaryModelFile {
                bias: m.bias,
                support_vectors: m.support_vectors.clone(),
                dual_coefs: m.dual_coefs.clone(),
            })
            .collect(),
    }
}

pub(crate) fn from_model_file(file: MultiClassModelFile) -> Result<MultiClassSvmModel> {
    if file.format_version != SVM_FORMAT_VERSION {
        return Err(Error::FormatVersion {
            expected: SVM_FORMAT_VERSION,
            found: file.format_version,
        });
    }
    let models: Result<Vec<BinarySvmModel>> = file
        .per_label
        .into_iter()
        .map(|m| BinarySvmModel::new(m.support_vectors, m.dual_coefs, m.bias, file.hyperparams))
        .collect();
    MultiClassSvmModel::new(file.labels, models?, file.hyperparams)
}

/// Persist a multiclass model as `.svm.json`.
pub fn save_model(model: &MultiClassSvmModel, path: impl AsRef<Path>) -> Result<()> {
    atomic_write(path, &serde_json::to_vec(&to_model_file(model))?)
}

/// Load a `.svm.json` model.
pub fn load_model(path: impl AsRef<Path>) -> Result<MultiClassSvmModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_model_file(serde_json::from_slice(&bytes)?)
}
