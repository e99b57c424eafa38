//! Pixel autoencoder with a 3-dimensional latent space, joint latent-space
//! classification, and false-color rendering of the ripening process.

use std::path::Path;

use ndarray::{Array2, Array3, Array4, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cube::HyperCube;
use crate::dataset::Category;
use crate::error::{Error, Result};
use crate::models::{ClassifierModel, ModelArch, ModelConfig};
use crate::nn::{mse_loss, Conv2d, Layer, Optimizer, OptimizerKind, ReLU, Sequential};
use crate::train::{cube_to_input, TrainConfig};

pub const LATENT_DIM: usize = 3;
const MIN_AE_SPECTRA: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    ReconstructionOnly,
    ClassificationTuned,
}

/// Symmetric per-pixel autoencoder (B→64→16→3 and mirror) built from 1x1
/// convolutions, so the encoder applies to single spectra and whole cubes
/// alike.
pub struct EncoderBundle {
    pub encoder: Sequential,
    pub decoder: Sequential,
    /// per-latent-dimension (min, max) over the training latents
    pub latent_norm: [(f32, f32); LATENT_DIM],
    pub stage: Stage,
    pub bands: usize,
    pub held_out_mse: f64,
    pub category: Option<Category>,
}

fn build_encoder(rng: &mut ChaCha8Rng, bands: usize) -> Sequential {
    Sequential::new(vec![
        Box::new(Conv2d::pointwise(rng, bands, 64)),
        Box::new(ReLU::new()),
        Box::new(Conv2d::pointwise(rng, 64, 16)),
        Box::new(ReLU::new()),
        Box::new(Conv2d::pointwise(rng, 16, LATENT_DIM)),
    ])
}

fn build_decoder(rng: &mut ChaCha8Rng, bands: usize) -> Sequential {
    Sequential::new(vec![
        Box::new(Conv2d::pointwise(rng, LATENT_DIM, 16)),
        Box::new(ReLU::new()),
        Box::new(Conv2d::pointwise(rng, 16, 64)),
        Box::new(ReLU::new()),
        Box::new(Conv2d::pointwise(rng, 64, bands)),
    ])
}

fn spectra_batch(spectra: &[Vec<f32>], idx: &[usize]) -> Array4<f32> {
    let bands = spectra[0].len();
    let mut x = Array4::<f32>::zeros((idx.len(), bands, 1, 1));
    for (i, &p) in idx.iter().enumerate() {
        for k in 0..bands {
            x[[i, k, 0, 0]] = spectra[p][k];
        }
    }
    x
}

impl EncoderBundle {
    /// Latent image of a cube, shape `(LATENT_DIM, h, w)`.
    pub fn encode_cube(&mut self, cube: &HyperCube) -> Result<Array3<f32>> {
        if cube.bands() != self.bands {
            return Err(Error::ShapeMismatch(format!(
                "cube has {} bands, encoder expects {}",
                cube.bands(),
                self.bands
            )));
        }
        let x = cube_to_input(cube).insert_axis(Axis(0));
        let z = self.encoder.forward(&x, false);
        Ok(z.index_axis(Axis(0), 0).to_owned())
    }

    pub fn encode_spectrum(&mut self, spectrum: &[f32]) -> Result<[f32; LATENT_DIM]> {
        if spectrum.len() != self.bands {
            return Err(Error::ShapeMismatch(format!(
                "spectrum has {} bands, encoder expects {}",
                spectrum.len(),
                self.bands
            )));
        }
        let mut x = Array4::<f32>::zeros((1, self.bands, 1, 1));
        for (k, &v) in spectrum.iter().enumerate() {
            x[[0, k, 0, 0]] = v;
        }
        let z = self.encoder.forward(&x, false);
        Ok([z[[0, 0, 0, 0]], z[[0, 1, 0, 0]], z[[0, 2, 0, 0]]])
    }

    /// Mean reconstruction error over a spectra set.
    pub fn reconstruction_mse(&mut self, spectra: &[Vec<f32>]) -> f64 {
        let mut total = 0.0;
        let idx: Vec<usize> = (0..spectra.len()).collect();
        for chunk in idx.chunks(256) {
            let x = spectra_batch(spectra, chunk);
            let z = self.encoder.forward(&x, false);
            let xhat = self.decoder.forward(&z, false);
            let (l, _) = mse_loss(&xhat, &x);
            total += l * chunk.len() as f64;
        }
        total / spectra.len() as f64
    }

    /// Deep copy via weight snapshots.
    pub fn duplicate(&self) -> EncoderBundle {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut encoder = build_encoder(&mut rng, self.bands);
        let mut decoder = build_decoder(&mut rng, self.bands);
        encoder.restore_snapshot(&self.encoder.state_snapshot());
        decoder.restore_snapshot(&self.decoder.state_snapshot());
        EncoderBundle {
            encoder,
            decoder,
            latent_norm: self.latent_norm,
            stage: self.stage,
            bands: self.bands,
            held_out_mse: self.held_out_mse,
            category: self.category,
        }
    }

    fn recompute_latent_norm(&mut self, spectra: &[Vec<f32>]) {
        let mut lo = [f32::MAX; LATENT_DIM];
        let mut hi = [f32::MIN; LATENT_DIM];
        let idx: Vec<usize> = (0..spectra.len()).collect();
        for chunk in idx.chunks(256) {
            let x = spectra_batch(spectra, chunk);
            let z = self.encoder.forward(&x, false);
            for i in 0..chunk.len() {
                for d in 0..LATENT_DIM {
                    let v = z[[i, d, 0, 0]];
                    lo[d] = lo[d].min(v);
                    hi[d] = hi[d].max(v);
                }
            }
        }
        for d in 0..LATENT_DIM {
            if hi[d] - lo[d] < 1e-12 {
                hi[d] = lo[d] + 1.0;
            }
            self.latent_norm[d] = (lo[d], hi[d]);
        }
    }
}

/// Stage 1: train the autoencoder on pixel spectra (labeled and unlabeled
/// recordings alike) with mean-squared error. 90% of the spectra train, the
/// held-out rest report `held_out_mse`.
pub fn train_autoencoder(spectra: &[Vec<f32>], seed: u64) -> Result<EncoderBundle> {
    if spectra.len() < MIN_AE_SPECTRA {
        return Err(Error::InvalidArgument(format!(
            "autoencoder training needs at least {MIN_AE_SPECTRA} spectra, got {}",
            spectra.len()
        )));
    }
    let bands = spectra[0].len();
    if spectra.iter().any(|s| s.len() != bands) {
        return Err(Error::ShapeMismatch(
            "spectra have inconsistent band counts".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut encoder = build_encoder(&mut rng, bands);
    let mut decoder = build_decoder(&mut rng, bands);
    let mut enc_opt = Optimizer::new(OptimizerKind::Adam, 1e-2);
    let mut dec_opt = Optimizer::new(OptimizerKind::Adam, 1e-2);

    let mut order: Vec<usize> = (0..spectra.len()).collect();
    order.shuffle(&mut rng);
    let n_train = spectra.len() * 9 / 10;
    let (train_idx, held_idx) = order.split_at(n_train);

    let mut idx = train_idx.to_vec();
    for _ in 0..30 {
        idx.shuffle(&mut rng);
        for chunk in idx.chunks(256) {
            let x = spectra_batch(spectra, chunk);
            encoder.zero_grad();
            decoder.zero_grad();
            let z = encoder.forward(&x, true);
            let xhat = decoder.forward(&z, true);
            let (_, grad) = mse_loss(&xhat, &x);
            let gz = decoder.backward(&grad);
            encoder.backward(&gz);
            enc_opt.step(encoder.params_mut());
            dec_opt.step(decoder.params_mut());
        }
    }

    let mut bundle = EncoderBundle {
        encoder,
        decoder,
        latent_norm: [(0.0, 1.0); LATENT_DIM],
        stage: Stage::ReconstructionOnly,
        bands,
        held_out_mse: 0.0,
        category: None,
    };
    let held: Vec<Vec<f32>> = held_idx.iter().map(|&i| spectra[i].clone()).collect();
    bundle.held_out_mse = bundle.reconstruction_mse(&held);
    let train_spectra: Vec<Vec<f32>> = train_idx.iter().map(|&i| spectra[i].clone()).collect();
    bundle.recompute_latent_norm(&train_spectra);
    Ok(bundle)
}

/// Outcome of stage 2.
pub struct LatentTrainOutcome {
    pub bundle: EncoderBundle,
    pub classifier: ClassifierModel,
    pub val_accuracy: f64,
}

/// Stage 2: jointly fine-tune the encoder with a 3-channel classifier under
/// focal loss (set `freeze_encoder` to keep the encoder fixed as an
/// ablation). The latent normalization is recomputed after tuning.
pub fn train_latent_classifier(
    mut bundle: EncoderBundle,
    train_set: &[(HyperCube, usize)],
    val_set: &[(HyperCube, usize)],
    category: Category,
    freeze_encoder: bool,
    cfg: &TrainConfig,
) -> Result<LatentTrainOutcome> {
    if bundle.stage != Stage::ReconstructionOnly {
        return Err(Error::InvalidArgument(
            "bundle was already classification-tuned".into(),
        ));
    }
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidArgument(
            "latent classifier needs labeled train and validation data".into(),
        ));
    }
    cfg.validate()?;
    if train_set.iter().chain(val_set).any(|(c, _)| c.bands() != bundle.bands) {
        return Err(Error::ShapeMismatch(
            "cube band count does not match the encoder".into(),
        ));
    }

    let mut classifier = ClassifierModel::build(
        ModelArch::HsCnn(ModelConfig::default_for(LATENT_DIM)),
        cfg.seed,
    )?;
    let mut enc_opt = cfg.optimizer.build(cfg.learning_rate);
    let mut cls_opt = cfg.optimizer.build(cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let loss = cfg.loss;

    let mut best_val = f64::INFINITY;
    let mut best_acc = 0.0f64;
    let mut best_enc = bundle.encoder.state_snapshot();
    let mut best_cls = classifier.net.state_snapshot();
    let mut since_best = 0usize;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let inputs: Vec<Array3<f32>> =
                chunk.iter().map(|&i| cube_to_input(&train_set[i].0)).collect();
            let targets: Vec<usize> = chunk.iter().map(|&i| train_set[i].1).collect();
            let (c, h, w) = inputs[0].dim();
            let mut x = Array4::<f32>::zeros((inputs.len(), c, h, w));
            for (i, inp) in inputs.iter().enumerate() {
                x.index_axis_mut(Axis(0), i).assign(inp);
            }
            bundle.encoder.zero_grad();
            classifier.net.zero_grad();
            let z = bundle.encoder.forward(&x, !freeze_encoder);
            let out = classifier.net.forward(&z, true);
            let n = out.shape()[0];
            let logits = Array2::from_shape_fn((n, 3), |(i, j)| out[[i, j, 0, 0]]);
            let (l, grad) = loss.loss_and_grad(&logits, &targets, None);
            if !l.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite latent-classifier loss at epoch {epoch}"
                )));
            }
            let grad4 = Array4::from_shape_fn((n, 3, 1, 1), |(i, j, _, _)| grad[[i, j]]);
            let gz = classifier.net.backward(&grad4);
            cls_opt.step(classifier.net.params_mut());
            if !freeze_encoder {
                bundle.encoder.backward(&gz);
                enc_opt.step(bundle.encoder.params_mut());
            }
        }

        // validation
        let mut val_loss = 0.0;
        let mut correct = 0usize;
        for chunk in val_set.chunks(16) {
            let inputs: Vec<Array3<f32>> =
                chunk.iter().map(|(cu, _)| cube_to_input(cu)).collect();
            let targets: Vec<usize> = chunk.iter().map(|(_, t)| *t).collect();
            let (c, h, w) = inputs[0].dim();
            let mut x = Array4::<f32>::zeros((inputs.len(), c, h, w));
            for (i, inp) in inputs.iter().enumerate() {
                x.index_axis_mut(Axis(0), i).assign(inp);
            }
            let z = bundle.encoder.forward(&x, false);
            let out = classifier.net.forward(&z, false);
            let n = out.shape()[0];
            let logits = Array2::from_shape_fn((n, 3), |(i, j)| out[[i, j, 0, 0]]);
            let (l, _) = loss.loss_and_grad(&logits, &targets, None);
            val_loss += l * n as f64;
            for (i, &t) in targets.iter().enumerate() {
                let mut best = 0usize;
                for j in 1..3 {
                    if logits[[i, j]] > logits[[i, best]] {
                        best = j;
                    }
                }
                if best == t {
                    correct += 1;
                }
            }
        }
        val_loss /= val_set.len() as f64;
        let val_acc = correct as f64 / val_set.len() as f64;
        if val_loss < best_val {
            best_val = val_loss;
            best_acc = val_acc;
            best_enc = bundle.encoder.state_snapshot();
            best_cls = classifier.net.state_snapshot();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                break;
            }
        }
    }

    bundle.encoder.restore_snapshot(&best_enc);
    classifier.net.restore_snapshot(&best_cls);
    bundle.stage = Stage::ClassificationTuned;
    bundle.category = Some(category);

    // latent normalization from fruit pixels of the training cubes
    let mut spectra = Vec::new();
    for (cube, _) in train_set {
        for y in 0..cube.height() {
            for x in 0..cube.width() {
                let s = cube.spectrum_at(x, y)?;
                if s.iter().any(|&v| v != 0.0) {
                    spectra.push(s);
                }
            }
        }
    }
    if !spectra.is_empty() {
        bundle.recompute_latent_norm(&spectra);
    }

    Ok(LatentTrainOutcome {
        bundle,
        classifier,
        val_accuracy: best_acc,
    })
}

/// Per-pixel false-color rendering: encode, normalize each latent dimension
/// by the persisted training min/max, clip to [0, 1], and read the latent
/// dimensions as (R, G, B). Background pixels (all-zero spectra) come out
/// black. Returns a warning string when the bundle was never
/// classification-tuned.
pub fn render_false_color(
    bundle: &mut EncoderBundle,
    cube: &HyperCube,
) -> Result<(Array3<f32>, Option<String>)> {
    let z = bundle.encode_cube(cube)?;
    let (h, w) = (cube.height(), cube.width());
    let mut img = Array3::<f32>::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let background = (0..cube.bands()).all(|k| cube.data[[y, x, k]] == 0.0);
            if background {
                continue;
            }
            for d in 0..LATENT_DIM {
                let (lo, hi) = bundle.latent_norm[d];
                let v = (z[[d, y, x]] - lo) / (hi - lo);
                img[[y, x, d]] = v.clamp(0.0, 1.0);
            }
        }
    }
    let warning = if bundle.stage == Stage::ReconstructionOnly {
        Some("bundle is reconstruction-only; colors are not ripeness-tuned".to_string())
    } else {
        None
    };
    Ok((img, warning))
}

/// Save a rendering from [`render_false_color`] as an 8-bit PNG.
pub fn save_false_color_png(img: &Array3<f32>, path: &Path) -> Result<()> {
    let (h, w, _) = img.dim();
    let mut out = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = image::Rgb([
                (img[[y, x, 0]].clamp(0.0, 1.0) * 255.0).round() as u8,
                (img[[y, x, 1]].clamp(0.0, 1.0) * 255.0).round() as u8,
                (img[[y, x, 2]].clamp(0.0, 1.0) * 255.0).round() as u8,
            ]);
            out.put_pixel(x as u32, y as u32, px);
        }
    }
    out.save(path)
        .map_err(|e| Error::Io(std::io::Error::new(std::io::ErrorKind::Other, e)))
}

/// Spearman rank correlation between two equal-length sequences.
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..xs.len() {
        cov += (rx[i] - mx) * (ry[i] - my);
        vx += (rx[i] - mx).powi(2);
        vy += (ry[i] - my).powi(2);
    }
    if vx <= 0.0 || vy <= 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

/// Bundle checkpoint: JSON metadata plus the flat weight snapshots.
#[derive(Serialize, Deserialize)]
struct BundleFile {
    version: u32,
    bands: usize,
    stage: Stage,
    category: Option<Category>,
    latent_norm: [(f32, f32); LATENT_DIM],
    held_out_mse: f64,
    encoder: Vec<Vec<f32>>,
    decoder: Vec<Vec<f32>>,
}

pub fn save_bundle(bundle: &EncoderBundle, path: &Path) -> Result<()> {
    let file = BundleFile {
        version: 1,
        bands: bundle.bands,
        stage: bundle.stage,
        category: bundle.category,
        latent_norm: bundle.latent_norm,
        held_out_mse: bundle.held_out_mse,
        encoder: bundle.encoder.state_snapshot(),
        decoder: bundle.decoder.state_snapshot(),
    };
    std::fs::write(path, serde_json::to_vec(&file)?)?;
    Ok(())
}

pub fn load_bundle(path: &Path) -> Result<EncoderBundle> {
    let bytes = std::fs::read(path)?;
    let file: BundleFile = serde_json::from_slice(&bytes)?;
    if file.version != 1 {
        return Err(Error::Checkpoint(format!(
            "unsupported bundle version {}",
            file.version
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut encoder = build_encoder(&mut rng, file.bands);
    let mut decoder = build_decoder(&mut rng, file.bands);
    encoder.restore_snapshot(&file.encoder);
    decoder.restore_snapshot(&file.decoder);
    Ok(EncoderBundle {
        encoder,
        decoder,
        latent_norm: file.latent_norm,
        stage: file.stage,
        bands: file.bands,
        held_out_mse: file.held_out_mse,
        category: file.category,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::WavelengthAxis;
    use rand::Rng;

    const B: usize = 12;

    /// Spectra on a 3-dimensional nonnegative subspace plus noise.
    fn subspace_spectra(n: usize, noise: f64, seed: u64) -> Vec<Vec<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let basis: Vec<Vec<f64>> = (0..3)
            .map(|d| {
                (0..B)
                    .map(|k| 0.2 + 0.8 * ((k + d * 4) as f64 / B as f64))
                    .collect()
            })
            .collect();
        (0..n)
            .map(|_| {
                let c: Vec<f64> = (0..3).map(|_| rng.gen_range(0.1..1.0)).collect();
                (0..B)
                    .map(|k| {
                        let v: f64 = (0..3).map(|d| c[d] * basis[d][k]).sum::<f64>()
                            + rng.gen_range(-noise..noise);
                        v as f32
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn too_few_spectra_is_an_error() {
        let spectra = subspace_spectra(100, 0.01, 0);
        assert!(train_autoencoder(&spectra, 0).is_err());
    }

    #[test]
    fn rank_three_spectra_reconstruct_to_near_noise_floor() {
        let noise = 0.02f64;
        let spectra = subspace_spectra(12_000, noise, 1);
        let mut bundle = train_autoencoder(&spectra, 2).unwrap();
        // uniform(-a, a) noise variance = a^2/3 per band
        let floor = noise * noise / 3.0;
        assert!(
            bundle.held_out_mse <= 2.0 * floor.max(1e-6),
            "held-out MSE {} vs floor {}",
            bundle.held_out_mse,
            floor
        );
        // train error at or below held-out on average
        let train_mse = bundle.reconstruction_mse(&spectra[..1000].to_vec());
        assert!(train_mse <= bundle.held_out_mse * 1.5 + 1e-6);
    }

    #[test]
    fn constant_spectra_reconstruct_almost_exactly() {
        let spectra: Vec<Vec<f32>> = (0..MIN_AE_SPECTRA).map(|_| vec![0.4f32; B]).collect();
        let mut bundle = train_autoencoder(&spectra, 3).unwrap();
        let mse = bundle.reconstruction_mse(&spectra[..100].to_vec());
        assert!(mse < 1e-4, "constant reconstruction MSE {mse}");
    }

    /// 8x8 cubes whose class signal is a rank-1 spectral direction riding on
    /// large-variance nuisance structure.
    fn latent_task(
        n_per_class: usize,
        seed: u64,
    ) -> (Vec<(HyperCube, usize)>, Vec<Vec<f32>>) {
        let axis = WavelengthAxis::linspace(400.0, 1000.0, B).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let signal: Vec<f64> = (0..B).map(|k| if k % 3 == 0 { 0.25 } else { 0.0 }).collect();
        let mut cubes = Vec::new();
        let mut spectra = Vec::new();
        for c in 0..3usize {
            for _ in 0..n_per_class {
                let nuisance: Vec<f64> = (0..4)
                    .map(|_| rng.gen_range(-0.3..0.3))
                    .collect();
                let data = Array3::from_shape_fn((8, 8, B), |(y, x, k)| {
                    let n1 = nuisance[0] * ((k as f64 / B as f64) * 6.0).sin();
                    let n2 = nuisance[1] * ((k as f64 / B as f64) * 11.0).cos();
                    let n3 = nuisance[2] * (k as f64 / B as f64);
                    let n4 = nuisance[3];
                    let px = 0.01 * ((y * 7 + x) % 5) as f64;
                    (0.8 + n1 + n2 + n3 + n4 + px + c as f64 * signal[k]) as f32
                });
                let cube = HyperCube::new(data, axis.clone()).unwrap();
                for y in 0..8 {
                    for x in 0..8 {
                        spectra.push(cube.spectrum_at(x, y).unwrap());
                    }
                }
                cubes.push((cube, c));
            }
        }
        (cubes, spectra)
    }

    fn quick_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            max_epochs: 25,
            early_stop_patience: 25,
            augment: None,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn latent_classifier_learns_a_rank_one_signal() {
        let (train_set, spectra) = latent_task(60, 1);
        let (val_set, _) = latent_task(10, 2);
        let bundle = train_autoencoder(&spectra, 3).unwrap();
        let outcome = train_latent_classifier(
            bundle,
            &train_set,
            &val_set,
            Category::Firmness,
            false,
            &quick_cfg(0),
        )
        .unwrap();
        assert!(
            outcome.val_accuracy >= 0.9,
            "latent val accuracy {}",
            outcome.val_accuracy
        );
        assert_eq!(outcome.bundle.stage, Stage::ClassificationTuned);
    }

    #[test]
    fn tuning_twice_is_rejected() {
        let (full, spectra) = latent_task(60, 4);
        let train_set: Vec<(HyperCube, usize)> = full.into_iter().take(30).collect();
        let (val_set, _) = latent_task(3, 5);
        let bundle = train_autoencoder(&spectra, 6).unwrap();
        let cfg = TrainConfig {
            max_epochs: 1,
            ..quick_cfg(0)
        };
        let outcome = train_latent_classifier(
            bundle,
            &train_set,
            &val_set,
            Category::Firmness,
            false,
            &cfg,
        )
        .unwrap();
        let err = train_latent_classifier(
            outcome.bundle,
            &train_set,
            &val_set,
            Category::Firmness,
            false,
            &cfg,
        );
        assert!(err.is_err());
    }

    #[test]
    fn frozen_encoder_does_not_beat_joint_tuning_on_average() {
        let (train_set, spectra) = latent_task(60, 7);
        let (val_set, _) = latent_task(10, 8);
        let base = train_autoencoder(&spectra, 9).unwrap();
        let mut frozen_sum = 0.0;
        let mut tuned_sum = 0.0;
        for seed in 0..3u64 {
            let cfg = quick_cfg(seed);
            let frozen = train_latent_classifier(
                base.duplicate(),
                &train_set,
                &val_set,
                Category::Firmness,
                true,
                &cfg,
            )
            .unwrap();
            let tuned = train_latent_classifier(
                base.duplicate(),
                &train_set,
                &val_set,
                Category::Firmness,
                false,
                &cfg,
            )
            .unwrap();
            frozen_sum += frozen.val_accuracy;
            tuned_sum += tuned.val_accuracy;
        }
        assert!(
            frozen_sum <= tuned_sum + 1e-9,
            "frozen {frozen_sum} vs tuned {tuned_sum} (sum over 3 seeds)"
        );
    }

    #[test]
    fn render_is_black_on_background_and_deterministic() {
        let spectra = subspace_spectra(MIN_AE_SPECTRA, 0.01, 10);
        let mut bundle = train_autoencoder(&spectra, 11).unwrap();

        let axis = WavelengthAxis::linspace(400.0, 1000.0, B).unwrap();
        let zero = HyperCube::new(Array3::zeros((4, 4, B)), axis.clone()).unwrap();
        let (img, warning) = render_false_color(&mut bundle, &zero).unwrap();
        assert!(img.iter().all(|&v| v == 0.0));
        assert!(warning.is_some(), "reconstruction-only render must warn");

        let mut data = Array3::<f32>::zeros((4, 4, B));
        for k in 0..B {
            data[[1, 2, k]] = spectra[0][k];
        }
        let cube = HyperCube::new(data, axis).unwrap();
        let (a, _) = render_false_color(&mut bundle, &cube).unwrap();
        let (b, _) = render_false_color(&mut bundle, &cube).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|&v| (0.0..=1.0).contains(&v)));
        // only the single fruit pixel may be nonzero
        for y in 0..4 {
            for x in 0..4 {
                if (y, x) != (1, 2) {
                    for d in 0..3 {
                        assert_eq!(a[[y, x, d]], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn bundle_round_trips_through_its_checkpoint() {
        let spectra = subspace_spectra(MIN_AE_SPECTRA, 0.01, 12);
        let mut bundle = train_autoencoder(&spectra, 13).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bundle.json");
        save_bundle(&bundle, &path).unwrap();
        let mut loaded = load_bundle(&path).unwrap();
        assert_eq!(loaded.bands, bundle.bands);
        assert_eq!(loaded.stage, bundle.stage);
        let z1 = bundle.encode_spectrum(&spectra[0]).unwrap();
        let z2 = loaded.encode_spectrum(&spectra[0]).unwrap();
        assert_eq!(z1, z2);
    }

    #[test]
    fn spearman_detects_monotone_sequences() {
        let xs: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
        let up: Vec<f64> = xs.iter().map(|&x| 2.0 * x + 0.3).collect();
        let down: Vec<f64> = xs.iter().map(|&x| 1.0 - x * x).collect();
        assert!((spearman_rho(&xs, &up) - 1.0).abs() < 1e-12);
        assert!((spearman_rho(&xs, &down) + 1.0).abs() < 1e-12);
        let noise = [0.4, 0.1, 0.9, 0.2, 0.8, 0.5, 0.3, 0.7, 0.6, 0.0, 1.0];
        assert!(spearman_rho(&xs, &noise).abs() < 0.5);
    }
}
