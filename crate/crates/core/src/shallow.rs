//! Shallow baselines on mean-spectrum features: an RBF-kernel SVM trained
//! with sequential minimal optimization, and a k-nearest-neighbor
//! classifier. Hyperparameters come from cross-validated grid search on the
//! training split.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cube::HyperCube;
use crate::error::{Error, Result};
use crate::preprocess::BinaryMask;

/// Mean spectrum over the pixels where the mask is true.
pub fn masked_mean_spectrum(cube: &HyperCube, mask: &BinaryMask) -> Result<Vec<f64>> {
    if mask.dim() != (cube.height(), cube.width()) {
        return Err(Error::ShapeMismatch(format!(
            "mask {:?} does not match cube {}x{}",
            mask.dim(),
            cube.height(),
            cube.width()
        )));
    }
    let b = cube.bands();
    let mut sum = vec![0.0f64; b];
    let mut n = 0usize;
    for ((y, x), &m) in mask.indexed_iter() {
        if !m {
            continue;
        }
        n += 1;
        for k in 0..b {
            sum[k] += cube.data[[y, x, k]] as f64;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    for s in &mut sum {
        *s /= n as f64;
    }
    Ok(sum)
}

/// Mean spectrum over fruit pixels, where a fruit pixel is any pixel with at
/// least one nonzero band (the preprocessing convention forces background to
/// exactly zero).
pub fn extract_shallow_features(cube: &HyperCube) -> Result<Vec<f64>> {
    let mask = ndarray::Array2::from_shape_fn((cube.height(), cube.width()), |(y, x)| {
        (0..cube.bands()).any(|k| cube.data[[y, x, k]] != 0.0)
    });
    masked_mean_spectrum(cube, &mask).map_err(|e| match e {
        Error::EmptyMask => Error::Degenerate("cube has no nonzero pixels".into()),
        other => other,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShallowKind {
    SvmRbf,
    Knn,
}

struct BinarySvm {
    /// support vectors with their y·alpha coefficients
    vectors: Vec<(Vec<f64>, f64)>,
    bias: f64,
}

impl BinarySvm {
    fn decision(&self, x: &[f64], gamma: f64) -> f64 {
        self.vectors
            .iter()
            .map(|(sv, coef)| coef * rbf(sv, x, gamma))
            .sum::<f64>()
            + self.bias
    }
}

enum ShallowInner {
    Svm {
        /// one machine per unordered class pair (a < b)
        machines: Vec<(usize, usize, BinarySvm)>,
        gamma: f64,
        c: f64,
    },
    Knn {
        x: Vec<Vec<f64>>,
        y: Vec<usize>,
        k: usize,
    },
}

/// A fitted shallow classifier over 3 ripeness classes.
pub struct ShallowModel {
    pub kind: ShallowKind,
    inner: ShallowInner,
}

impl ShallowModel {
    pub fn predict(&self, x: &[f64]) -> usize {
        match &self.inner {
            ShallowInner::Svm { machines, gamma, .. } => {
                let mut votes = [0usize; 3];
                for (a, b, svm) in machines {
                    if svm.decision(x, *gamma) >= 0.0 {
                        votes[*a] += 1;
                    } else {
                        votes[*b] += 1;
                    }
                }
                argmax3(&votes)
            }
            ShallowInner::Knn { x: xs, y: ys, k } => {
                let mut dist: Vec<(f64, usize)> = xs
                    .iter()
                    .zip(ys)
                    .map(|(xi, &yi)| (sq_dist(xi, x), yi))
                    .collect();
                dist.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                let mut votes = [0usize; 3];
                for &(_, yi) in dist.iter().take(*k) {
                    votes[yi] += 1;
                }
                argmax3(&votes)
            }
        }
    }

    /// Chosen hyperparameter for reporting.
    pub fn describe(&self) -> String {
        match &self.inner {
            ShallowInner::Svm { c, gamma, .. } => format!("svm_rbf C={c} gamma={gamma:.6}"),
            ShallowInner::Knn { k, .. } => format!("knn k={k}"),
        }
    }
}

fn argmax3(votes: &[usize; 3]) -> usize {
    let mut best = 0;
    for c in 1..3 {
        if votes[c] > votes[best] {
            best = c;
        }
    }
    best
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    (-gamma * sq_dist(a, b)).exp()
}

/// Feature-variance-scaled kernel width, 1 / (d · Var[X]).
fn scale_gamma(x: &[Vec<f64>]) -> f64 {
    let d = x[0].len();
    let n = (x.len() * d) as f64;
    let mean = x.iter().flatten().sum::<f64>() / n;
    let var = x.iter().flatten().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var > 1e-12 {
        1.0 / (d as f64 * var)
    } else {
        1.0
    }
}

/// Simplified sequential minimal optimization for one binary subproblem.
fn smo(
    kmat: &Array2<f64>,
    y: &[f64],
    c: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, f64) {
    let n = y.len();
    let tol = 1e-3;
    let mut alpha = vec![0.0f64; n];
    let mut bias = 0.0f64;
    let decision = |alpha: &[f64], bias: f64, i: usize| -> f64 {
        (0..n).map(|j| alpha[j] * y[j] * kmat[[j, i]]).sum::<f64>() + bias
    };
    let mut quiet_passes = 0usize;
    let mut iterations = 0usize;
    while quiet_passes < 3 && iterations < 200 {
        iterations += 1;
        let mut changed = 0usize;
        for i in 0..n {
            let ei = decision(&alpha, bias, i) - y[i];
            if !((y[i] * ei < -tol && alpha[i] < c) || (y[i] * ei > tol && alpha[i] > 0.0)) {
                continue;
            }
            let mut j = rng.gen_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            let ej = decision(&alpha, bias, j) - y[j];
            let (ai_old, aj_old) = (alpha[i], alpha[j]);
            let (lo, hi) = if (y[i] - y[j]).abs() > 1e-12 {
                (
                    (alpha[j] - alpha[i]).max(0.0),
                    (c + alpha[j] - alpha[i]).min(c),
                )
            } else {
                (
                    (alpha[i] + alpha[j] - c).max(0.0),
                    (alpha[i] + alpha[j]).min(c),
                )
            };
            if hi - lo < 1e-12 {
                continue;
            }
            let eta = 2.0 * kmat[[i, j]] - kmat[[i, i]] - kmat[[j, j]];
            if eta >= 0.0 {
                continue;
            }
            let mut aj = aj_old - y[j] * (ei - ej) / eta;
            aj = aj.clamp(lo, hi);
            if (aj - aj_old).abs() < 1e-7 {
                continue;
            }
            let ai = ai_old + y[i] * y[j] * (aj_old - aj);
            alpha[i] = ai;
            alpha[j] = aj;
            let b1 = bias - ei
                - y[i] * (ai - ai_old) * kmat[[i, i]]
                - y[j] * (aj - aj_old) * kmat[[i, j]];
            let b2 = bias - ej
                - y[i] * (ai - ai_old) * kmat[[i, j]]
                - y[j] * (aj - aj_old) * kmat[[j, j]];
            bias = if ai > 0.0 && ai < c {
                b1
            } else if aj > 0.0 && aj < c {
                b2
            } else {
                (b1 + b2) / 2.0
            };
            changed += 1;
        }
        if changed == 0 {
            quiet_passes += 1;
        } else {
            quiet_passes = 0;
        }
    }
    (alpha, bias)
}

fn fit_svm_once(x: &[Vec<f64>], y: &[usize], c: f64, gamma: f64, seed: u64) -> ShallowModel {
    let mut machines = Vec::new();
    for a in 0..3usize {
        for b in (a + 1)..3 {
            let idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == a || y[i] == b).collect();
            if idx.iter().all(|&i| y[i] == a) || idx.iter().all(|&i| y[i] == b) || idx.is_empty()
            {
                continue;
            }
            let sub_y: Vec<f64> = idx
                .iter()
                .map(|&i| if y[i] == a { 1.0 } else { -1.0 })
                .collect();
            let n = idx.len();
            let mut kmat = Array2::<f64>::zeros((n, n));
            for p in 0..n {
                for q in p..n {
                    let v = rbf(&x[idx[p]], &x[idx[q]], gamma);
                    kmat[[p, q]] = v;
                    kmat[[q, p]] = v;
                }
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((a * 3 + b) as u64));
            let (alpha, bias) = smo(&kmat, &sub_y, c, &mut rng);
            let vectors: Vec<(Vec<f64>, f64)> = idx
                .iter()
                .enumerate()
                .filter(|(p, _)| alpha[*p] > 1e-9)
                .map(|(p, &i)| (x[i].clone(), alpha[p] * sub_y[p]))
                .collect();
            machines.push((a, b, BinarySvm { vectors, bias }));
        }
    }
    ShallowModel {
        kind: ShallowKind::SvmRbf,
        inner: ShallowInner::Svm { machines, gamma, c },
    }
}

fn fit_knn_once(x: &[Vec<f64>], y: &[usize], k: usize) -> ShallowModel {
    ShallowModel {
        kind: ShallowKind::Knn,
        inner: ShallowInner::Knn {
            x: x.to_vec(),
            y: y.to_vec(),
            k,
        },
    }
}

fn check_inputs(x: &[Vec<f64>], y: &[usize], folds: usize) -> Result<()> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "feature/label length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if y.iter().any(|&c| c >= 3) {
        return Err(Error::InvalidArgument("class index out of range".into()));
    }
    if folds < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 cross-validation folds, got {folds}"
        )));
    }
    let mut counts = [0usize; 3];
    for &c in y {
        counts[c] += 1;
    }
    let min_class = counts.iter().filter(|&&c| c > 0).min().copied().unwrap();
    if folds > min_class {
        return Err(Error::InvalidArgument(format!(
            "{folds} folds exceed the smallest class size {min_class}"
        )));
    }
    Ok(())
}

/// Stratified fold index (0..folds) for every sample.
fn stratified_folds(y: &[usize], folds: usize) -> Vec<usize> {
    let mut fold = vec![0usize; y.len()];
    let mut seen = [0usize; 3];
    for (i, &c) in y.iter().enumerate() {
        fold[i] = seen[c] % folds;
        seen[c] += 1;
    }
    fold
}

fn cross_val_accuracy<F>(x: &[Vec<f64>], y: &[usize], folds: usize, fit: F) -> f64
where
    F: Fn(&[Vec<f64>], &[usize]) -> ShallowModel,
{
    let fold = stratified_folds(y, folds);
    let mut correct = 0usize;
    for f in 0..folds {
        let (mut tx, mut ty) = (Vec::new(), Vec::new());
        for i in 0..y.len() {
            if fold[i] != f {
                tx.push(x[i].clone());
                ty.push(y[i]);
            }
        }
        let model = fit(&tx, &ty);
        for i in 0..y.len() {
            if fold[i] == f && model.predict(&x[i]) == y[i] {
                correct += 1;
            }
        }
    }
    correct as f64 / y.len() as f64
}

/// Grid-search C by cross-validation on the training split, then refit on
/// the full split with the winner.
pub fn fit_svm(
    x: &[Vec<f64>],
    y: &[usize],
    c_grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<(ShallowModel, f64)> {
    check_inputs(x, y, folds)?;
    if c_grid.is_empty() {
        return Err(Error::InvalidArgument("empty C grid".into()));
    }
    let gamma = scale_gamma(x);
    let mut best = (f64::NEG_INFINITY, c_grid[0]);
    for &c in c_grid {
        if c <= 0.0 {
            return Err(Error::InvalidArgument(format!("C must be positive, got {c}")));
        }
        let acc = cross_val_accuracy(x, y, folds, |tx, ty| fit_svm_once(tx, ty, c, gamma, seed));
        if acc > best.0 {
            best = (acc, c);
        }
    }
    Ok((fit_svm_once(x, y, best.1, gamma, seed), best.0))
}

/// Grid-search k by cross-validation on the training split, then refit.
pub fn fit_knn(
    x: &[Vec<f64>],
    y: &[usize],
    k_grid: &[usize],
    folds: usize,
) -> Result<(ShallowModel, f64)> {
    check_inputs(x, y, folds)?;
    if k_grid.is_empty() || k_grid.iter().any(|&k| k == 0) {
        return Err(Error::InvalidArgument("k grid must be non-empty and positive".into()));
    }
    let mut best = (f64::NEG_INFINITY, k_grid[0]);
    for &k in k_grid {
        let acc = cross_val_accuracy(x, y, folds, |tx, ty| fit_knn_once(tx, ty, k));
        if acc > best.0 {
            best = (acc, k);
        }
    }
    Ok((fit_knn_once(x, y, best.1), best.0))
}

/// Fit with the stock hyperparameter grids, shrinking the fold count to the
/// smallest class when necessary.
pub fn fit_default(
    kind: ShallowKind,
    x: &[Vec<f64>],
    y: &[usize],
    seed: u64,
) -> Result<ShallowModel> {
    let mut counts = [0usize; 3];
    for &c in y {
        if c < 3 {
            counts[c] += 1;
        }
    }
    let min_class = counts.iter().filter(|&&c| c > 0).min().copied().unwrap_or(0);
    let folds = min_class.min(5).max(2);
    match kind {
        ShallowKind::SvmRbf => {
            fit_svm(x, y, &[0.1, 1.0, 10.0, 100.0], folds, seed).map(|(m, _)| m)
        }
        ShallowKind::Knn => fit_knn(x, y, &[1, 3, 5, 7], folds).map(|(m, _)| m),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::WavelengthAxis;
    use ndarray::Array3;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn constant_fruit_gives_constant_feature() {
        let mut data = Array3::<f32>::zeros((6, 6, 4));
        for y in 1..5 {
            for x in 1..5 {
                for k in 0..4 {
                    data[[y, x, k]] = 0.7;
                }
            }
        }
        let cube =
            HyperCube::new(data, WavelengthAxis::linspace(400.0, 1000.0, 4).unwrap()).unwrap();
        let f = extract_shallow_features(&cube).unwrap();
        for v in f {
            assert!((v - 0.7f32 as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn background_zeros_are_excluded() {
        // half the pixels 1.0, half exactly 0 -> mean over fruit pixels is 1
        let data = Array3::from_shape_fn((4, 4, 3), |(y, _, _)| if y < 2 { 1.0 } else { 0.0 });
        let cube =
            HyperCube::new(data, WavelengthAxis::linspace(400.0, 1000.0, 3).unwrap()).unwrap();
        let f = extract_shallow_features(&cube).unwrap();
        for v in f {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn all_zero_cube_is_an_error() {
        let data = Array3::<f32>::zeros((4, 4, 3));
        let cube =
            HyperCube::new(data, WavelengthAxis::linspace(400.0, 1000.0, 3).unwrap()).unwrap();
        assert!(extract_shallow_features(&cube).is_err());
    }

    #[test]
    fn masked_mean_matches_loop_oracle() {
        let data = Array3::from_shape_fn((5, 7, 6), |(y, x, k)| {
            ((y * 61 + x * 17 + k * 5) % 23) as f32 / 23.0 + 0.01
        });
        let cube =
            HyperCube::new(data.clone(), WavelengthAxis::linspace(400.0, 1000.0, 6).unwrap())
                .unwrap();
        let mask = ndarray::Array2::from_shape_fn((5, 7), |(y, x)| (y + x) % 3 != 0);
        let f = masked_mean_spectrum(&cube, &mask).unwrap();
        for k in 0..6 {
            let mut sum = 0.0f64;
            let mut n = 0usize;
            for y in 0..5 {
                for x in 0..7 {
                    if mask[[y, x]] {
                        sum += data[[y, x, k]] as f64;
                        n += 1;
                    }
                }
            }
            assert!((f[k] - sum / n as f64).abs() < 1e-9);
        }
    }

    fn gaussian_blobs(n_per_class: usize, sep: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let centers = [(0.0, 0.0), (sep, 0.0), (0.0, sep)];
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (c, &(cx, cy)) in centers.iter().enumerate() {
            for _ in 0..n_per_class {
                x.push(vec![cx + noise.sample(&mut rng), cy + noise.sample(&mut rng)]);
                y.push(c);
            }
        }
        (x, y)
    }

    #[test]
    fn well_separated_blobs_reach_high_cv_accuracy() {
        let (x, y) = gaussian_blobs(20, 6.0, 1);
        let (_, svm_acc) = fit_svm(&x, &y, &[0.1, 1.0, 10.0], 5, 0).unwrap();
        assert!(svm_acc >= 0.95, "svm CV accuracy {svm_acc}");
        let (_, knn_acc) = fit_knn(&x, &y, &[1, 3, 5], 5).unwrap();
        assert!(knn_acc >= 0.95, "knn CV accuracy {knn_acc}");
    }

    #[test]
    fn trained_models_predict_fresh_points() {
        let (x, y) = gaussian_blobs(20, 6.0, 2);
        let (svm, _) = fit_svm(&x, &y, &[1.0, 10.0], 4, 0).unwrap();
        let (knn, _) = fit_knn(&x, &y, &[3], 4).unwrap();
        let (tx, ty) = gaussian_blobs(5, 6.0, 99);
        let svm_ok = tx.iter().zip(&ty).filter(|(f, &t)| svm.predict(f) == t).count();
        let knn_ok = tx.iter().zip(&ty).filter(|(f, &t)| knn.predict(f) == t).count();
        assert!(svm_ok >= 13, "svm got {svm_ok}/15");
        assert!(knn_ok >= 13, "knn got {knn_ok}/15");
    }

    #[test]
    fn one_nearest_neighbor_memorizes_the_training_set() {
        let (x, y) = gaussian_blobs(10, 3.0, 3);
        let (knn, _) = fit_knn(&x, &y, &[1], 2).unwrap();
        for (f, &t) in x.iter().zip(&y) {
            assert_eq!(knn.predict(f), t);
        }
    }

    #[test]
    fn too_many_folds_is_an_error() {
        let (x, y) = gaussian_blobs(3, 6.0, 4);
        assert!(fit_knn(&x, &y, &[1], 4).is_err());
        assert!(fit_svm(&x, &y, &[1.0], 4, 0).is_err());
    }

    #[test]
    fn empty_grid_is_an_error() {
        let (x, y) = gaussian_blobs(5, 6.0, 5);
        assert!(fit_knn(&x, &y, &[], 2).is_err());
        assert!(fit_svm(&x, &y, &[], 2, 0).is_err());
    }

    #[test]
    fn describe_names_the_chosen_hyperparameter() {
        let (x, y) = gaussian_blobs(10, 6.0, 6);
        let (knn, _) = fit_knn(&x, &y, &[3], 2).unwrap();
        assert!(knn.describe().contains("k=3"));
        let (svm, _) = fit_svm(&x, &y, &[10.0], 2, 0).unwrap();
        assert!(svm.describe().contains("C=10"));
    }
}
