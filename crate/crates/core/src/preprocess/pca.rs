//! Spectral dimensionality reduction with principal component analysis.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array3;

use crate::cube::HyperCube;
use crate::error::{Error, Result};

/// A fitted spectral projection: per-band mean plus the top-k eigenvectors
/// of the pixel covariance, ordered by explained variance.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PcaProjection {
    pub mean: Vec<f64>,
    /// `components[c][b]`: weight of band `b` in component `c`.
    pub components: Vec<Vec<f64>>,
    /// Fraction of total variance captured by each kept component.
    pub explained_variance_ratio: Vec<f64>,
}

impl PcaProjection {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn n_bands(&self) -> usize {
        self.mean.len()
    }
}

/// Cap on the number of pixels used to estimate the covariance; beyond this
/// the pixels are strided down to keep fitting fast on full scans.
const MAX_FIT_PIXELS: usize = 200_000;

/// Fit a k-component PCA on the pixel spectra of the given cubes.
///
/// Statistics accumulate in f64. Masked-out pixels (all-zero spectra from
/// cropping) are skipped so the background does not dominate the components.
pub fn fit_pca(cubes: &[HyperCube], k: usize) -> Result<PcaProjection> {
    if cubes.is_empty() {
        return Err(Error::InvalidArgument("no cubes to fit PCA on".into()));
    }
    let bands = cubes[0].bands();
    if cubes.iter().any(|c| c.bands() != bands) {
        return Err(Error::ShapeMismatch(
            "cubes have inconsistent band counts".into(),
        ));
    }
    if k == 0 || k > bands {
        return Err(Error::InvalidArgument(format!(
            "component count {k} not in 1..={bands}"
        )));
    }

    let mut spectra: Vec<Vec<f64>> = Vec::new();
    for cube in cubes {
        for y in 0..cube.height() {
            for x in 0..cube.width() {
                let s = cube.data.slice(ndarray::s![y, x, ..]);
                if s.iter().all(|&v| v == 0.0) {
                    continue;
                }
                spectra.push(s.iter().map(|&v| v as f64).collect());
            }
        }
    }
    if spectra.len() > MAX_FIT_PIXELS {
        let stride = spectra.len().div_ceil(MAX_FIT_PIXELS);
        spectra = spectra.into_iter().step_by(stride).collect();
    }
    if spectra.len() < 2 {
        return Err(Error::Degenerate(format!(
            "only {} usable pixels for PCA",
            spectra.len()
        )));
    }

    let n = spectra.len() as f64;
    let mut mean = vec![0.0f64; bands];
    for s in &spectra {
        for (m, &v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }

    let mut cov = DMatrix::<f64>::zeros(bands, bands);
    for s in &spectra {
        let d: Vec<f64> = s.iter().zip(&mean).map(|(&v, &m)| v - m).collect();
        for i in 0..bands {
            for j in i..bands {
                cov[(i, j)] += d[i] * d[j];
            }
        }
    }
    for i in 0..bands {
        for j in i..bands {
            cov[(i, j)] /= n - 1.0;
            cov[(j, i)] = cov[(i, j)];
        }
    }

    let total_var: f64 = cov.diagonal().iter().sum();
    if total_var <= 0.0 {
        return Err(Error::Degenerate(
            "pixel spectra have zero variance".into(),
        ));
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..bands).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());

    let mut components = Vec::with_capacity(k);
    let mut explained = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let val = eig.eigenvalues[idx];
        if val <= total_var * 1e-12 {
            return Err(Error::Degenerate(format!(
                "covariance rank is below the requested {k} components"
            )));
        }
        let col = eig.eigenvectors.column(idx);
        // fix the sign so the largest-magnitude entry is positive
        let pivot = col
            .iter()
            .cloned()
            .max_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap())
            .unwrap();
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        components.push(col.iter().map(|&v| v * sign).collect());
        explained.push(val / total_var);
    }

    Ok(PcaProjection {
        mean,
        components,
        explained_variance_ratio: explained,
    })
}

/// Project every pixel of a cube onto the fitted components; the output is a
/// cube with `k` "bands" indexed 1..=k on a synthetic axis.
pub fn apply_pca(cube: &HyperCube, proj: &PcaProjection) -> Result<HyperCube> {
    if cube.bands() != proj.n_bands() {
        return Err(Error::ShapeMismatch(format!(
            "cube has {} bands, projection expects {}",
            cube.bands(),
            proj.n_bands()
        )));
    }
    let k = proj.n_components();
    let (h, w, b) = cube.data.dim();
    let mut out = Array3::<f32>::zeros((h, w, k));
    for y in 0..h {
        for x in 0..w {
            for (c, comp) in proj.components.iter().enumerate() {
                let mut acc = 0.0f64;
                for i in 0..b {
                    acc += (cube.data[[y, x, i]] as f64 - proj.mean[i]) * comp[i];
                }
                out[[y, x, c]] = acc as f32;
            }
        }
    }
    let axis = crate::cube::WavelengthAxis::new((1..=k).map(|i| i as f64).collect())?;
    HyperCube::new(out, axis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::WavelengthAxis;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cube_from_spectra(spectra: &[Vec<f32>], bands: usize) -> HyperCube {
        let n = spectra.len();
        let data = Array3::from_shape_fn((n, 1, bands), |(i, _, k)| spectra[i][k]);
        HyperCube::new(data, WavelengthAxis::linspace(400.0, 1000.0, bands).unwrap()).unwrap()
    }

    #[test]
    fn rank_one_data_is_captured_by_the_first_component() {
        let bands = 12;
        let dir: Vec<f32> = (0..bands).map(|i| ((i + 1) as f32).sin() + 2.0).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spectra: Vec<Vec<f32>> = (0..200)
            .map(|_| {
                let t: f32 = rng.gen_range(0.1..1.0);
                dir.iter()
                    .map(|&d| d * t + rng.gen_range(-1e-3..1e-3))
                    .collect()
            })
            .collect();
        let cube = cube_from_spectra(&spectra, bands);
        let proj = fit_pca(&[cube], 2).unwrap();
        assert!(
            proj.explained_variance_ratio[0] >= 0.99,
            "first component explains {}",
            proj.explained_variance_ratio[0]
        );
    }

    #[test]
    fn components_are_orthonormal() {
        let bands = 10;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spectra: Vec<Vec<f32>> = (0..300)
            .map(|_| (0..bands).map(|_| rng.gen_range(0.0f32..1.0)).collect())
            .collect();
        let cube = cube_from_spectra(&spectra, bands);
        let proj = fit_pca(&[cube], 5).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let dot: f64 = proj.components[i]
                    .iter()
                    .zip(&proj.components[j])
                    .map(|(a, b)| a * b)
                    .sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-6, "<c{i}, c{j}> = {dot}");
            }
        }
    }

    #[test]
    fn explained_variance_is_nonincreasing_and_sums_below_one() {
        let bands = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spectra: Vec<Vec<f32>> = (0..150)
            .map(|_| {
                (0..bands)
                    .map(|k| rng.gen_range(0.0f32..1.0) * (1.0 + k as f32))
                    .collect()
            })
            .collect();
        let cube = cube_from_spectra(&spectra, bands);
        let proj = fit_pca(&[cube], 6).unwrap();
        let r = &proj.explained_variance_ratio;
        for w in r.windows(2) {
            assert!(w[0] >= w[1] - 1e-12);
        }
        let sum: f64 = r.iter().sum();
        assert!(sum <= 1.0 + 1e-9 && sum > 0.0);
    }

    #[test]
    fn projection_matches_per_pixel_dot_product_oracle() {
        let bands = 6;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spectra: Vec<Vec<f32>> = (0..100)
            .map(|_| (0..bands).map(|_| rng.gen_range(0.0f32..1.0)).collect())
            .collect();
        let cube = cube_from_spectra(&spectra, bands);
        let proj = fit_pca(&[cube.clone()], 3).unwrap();
        let reduced = apply_pca(&cube, &proj).unwrap();
        assert_eq!(reduced.data.shape(), &[100, 1, 3]);
        for i in 0..100 {
            for c in 0..3 {
                let mut acc = 0.0f64;
                for k in 0..bands {
                    acc += (spectra[i][k] as f64 - proj.mean[k]) * proj.components[c][k];
                }
                assert!((reduced.data[[i, 0, c]] as f64 - acc).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn projected_component_variances_match_eigenvalue_ratios() {
        let bands = 7;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spectra: Vec<Vec<f32>> = (0..400)
            .map(|_| (0..bands).map(|_| rng.gen_range(0.0f32..2.0)).collect())
            .collect();
        let cube = cube_from_spectra(&spectra, bands);
        let proj = fit_pca(&[cube.clone()], bands).unwrap();
        let reduced = apply_pca(&cube, &proj).unwrap();
        // total variance of raw data
        let total: f64 = proj.explained_variance_ratio.iter().sum();
        assert!((total - 1.0).abs() < 1e-9, "full PCA explains everything");
        // variance of the first projected coordinate matches its ratio
        let n = 400.0f64;
        let col: Vec<f64> = (0..400).map(|i| reduced.data[[i, 0, 0]] as f64).collect();
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // reconstruct total variance from per-band sample variances
        let mut total_var = 0.0f64;
        for k in 0..bands {
            let m = spectra.iter().map(|s| s[k] as f64).sum::<f64>() / n;
            total_var += spectra.iter().map(|s| (s[k] as f64 - m).powi(2)).sum::<f64>() / (n - 1.0);
        }
        assert!(
            (var / total_var - proj.explained_variance_ratio[0]).abs() < 1e-4,
            "projected variance ratio {} vs reported {}",
            var / total_var,
            proj.explained_variance_ratio[0]
        );
    }

    #[test]
    fn constant_data_and_rank_deficit_error() {
        let spectra: Vec<Vec<f32>> = (0..50).map(|_| vec![0.3f32; 5]).collect();
        let cube = cube_from_spectra(&spectra, 5);
        assert!(fit_pca(&[cube], 2).is_err());

        // rank-1 data cannot support 3 components
        let dir = [1.0f32, 2.0, 3.0, 4.0];
        let spectra: Vec<Vec<f32>> = (0..50)
            .map(|i| dir.iter().map(|&d| d * (i as f32 + 1.0)).collect())
            .collect();
        let cube = cube_from_spectra(&spectra, 4);
        assert!(fit_pca(&[cube], 3).is_err());
    }

    #[test]
    fn zero_spectra_are_ignored_when_fitting() {
        let bands = 4;
        let mut spectra: Vec<Vec<f32>> = (0..60)
            .map(|i| (0..bands).map(|k| ((i + k) % 7) as f32 + 1.0).collect())
            .collect();
        let proj_clean = fit_pca(&[cube_from_spectra(&spectra, bands)], 2).unwrap();
        spectra.extend((0..40).map(|_| vec![0.0f32; bands]));
        let proj_padded = fit_pca(&[cube_from_spectra(&spectra, bands)], 2).unwrap();
        for (a, b) in proj_clean.mean.iter().zip(&proj_padded.mean) {
            assert!((a - b).abs() < 1e-9);
        }
        for c in 0..2 {
            for (a, b) in proj_clean.components[c].iter().zip(&proj_padded.components[c]) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
