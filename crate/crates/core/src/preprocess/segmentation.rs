//! Fruit/background separation: a small per-pixel classifier, thresholded
//! segmentation with largest-component cleanup, and tight cropping.

use ndarray::{Array2, Array3, Array4};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cube::HyperCube;
use crate::error::{Error, Result};
use crate::nn::{bce_with_logits_loss, Conv2d, Layer, Optimizer, OptimizerKind, ReLU, Sequential};

/// `true` marks fruit pixels.
pub type BinaryMask = Array2<bool>;

/// One-hidden-layer per-pixel model mapping a B-vector to P(fruit).
///
/// The hidden layers are 1x1 convolutions, so the same network evaluates a
/// pixel list or a whole cube.
pub struct PixelClassifier {
    net: Sequential,
    pub bands: usize,
    pub held_out_accuracy: f64,
}

impl PixelClassifier {
    /// P(fruit) for every pixel of a cube, shape `(h, w)`.
    pub fn predict_cube(&mut self, cube: &HyperCube) -> Result<Array2<f32>> {
        if cube.bands() != self.bands {
            return Err(Error::ShapeMismatch(format!(
                "cube has {} bands but the classifier was trained on {}",
                cube.bands(),
                self.bands
            )));
        }
        let (h, w) = (cube.height(), cube.width());
        let mut x = Array4::<f32>::zeros((1, self.bands, h, w));
        for y in 0..h {
            for xx in 0..w {
                for k in 0..self.bands {
                    x[[0, k, y, xx]] = cube.data[[y, xx, k]];
                }
            }
        }
        let logits = self.net.forward(&x, false);
        let mut probs = Array2::<f32>::zeros((h, w));
        for y in 0..h {
            for xx in 0..w {
                probs[[y, xx]] = 1.0 / (1.0 + (-logits[[0, 0, y, xx]]).exp());
            }
        }
        Ok(probs)
    }

    pub fn predict_pixel(&mut self, spectrum: &[f32]) -> Result<f32> {
        if spectrum.len() != self.bands {
            return Err(Error::ShapeMismatch(format!(
                "spectrum has {} bands, classifier expects {}",
                spectrum.len(),
                self.bands
            )));
        }
        let mut x = Array4::<f32>::zeros((1, self.bands, 1, 1));
        for (k, &v) in spectrum.iter().enumerate() {
            x[[0, k, 0, 0]] = v;
        }
        let logits = self.net.forward(&x, false);
        Ok(1.0 / (1.0 + (-logits[[0, 0, 0, 0]]).exp()))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        #[derive(serde::Serialize)]
        struct File<'a> {
            bands: usize,
            held_out_accuracy: f64,
            weights: &'a Vec<Vec<f32>>,
        }
        let weights = self.net.state_snapshot();
        std::fs::write(
            path,
            serde_json::to_vec(&File {
                bands: self.bands,
                held_out_accuracy: self.held_out_accuracy,
                weights: &weights,
            })?,
        )?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        #[derive(serde::Deserialize)]
        struct File {
            bands: usize,
            held_out_accuracy: f64,
            weights: Vec<Vec<f32>>,
        }
        let file: File = serde_json::from_slice(&std::fs::read(path)?)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = build_pixel_net(&mut rng, file.bands);
        net.restore_snapshot(&file.weights);
        Ok(Self {
            net,
            bands: file.bands,
            held_out_accuracy: file.held_out_accuracy,
        })
    }
}

fn build_pixel_net(rng: &mut ChaCha8Rng, bands: usize) -> Sequential {
    let hidden = 16;
    Sequential::new(vec![
        Box::new(Conv2d::pointwise(rng, bands, hidden)),
        Box::new(ReLU::new()),
        Box::new(Conv2d::pointwise(rng, hidden, 1)),
    ])
}

/// Train the background classifier on labeled pixel spectra. 80% of the
/// pixels train the model; the rest report `held_out_accuracy`.
pub fn train_background_classifier(
    pixels: &[(Vec<f32>, bool)],
    seed: u64,
) -> Result<PixelClassifier> {
    let n_fruit = pixels.iter().filter(|(_, f)| *f).count();
    if n_fruit == 0 || n_fruit == pixels.len() {
        return Err(Error::InvalidArgument(format!(
            "need both classes to train ({} fruit / {} background pixels)",
            n_fruit,
            pixels.len() - n_fruit
        )));
    }
    let bands = pixels[0].0.len();
    if pixels.iter().any(|(s, _)| s.len() != bands) {
        return Err(Error::ShapeMismatch(
            "pixel spectra have inconsistent band counts".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..pixels.len()).collect();
    order.shuffle(&mut rng);
    let n_train = ((pixels.len() as f64 * 0.8).round() as usize)
        .clamp(1, pixels.len() - 1);
    let (train_idx, held_idx) = order.split_at(n_train);

    let mut net = build_pixel_net(&mut rng, bands);
    let mut opt = Optimizer::new(OptimizerKind::Adam, 1e-2);

    let batch = 256;
    let epochs = 40;
    let mut idx = train_idx.to_vec();
    for _ in 0..epochs {
        idx.shuffle(&mut rng);
        for chunk in idx.chunks(batch) {
            let mut x = Array4::<f32>::zeros((chunk.len(), bands, 1, 1));
            let mut t = Vec::with_capacity(chunk.len());
            for (i, &p) in chunk.iter().enumerate() {
                for k in 0..bands {
                    x[[i, k, 0, 0]] = pixels[p].0[k];
                }
                t.push(if pixels[p].1 { 1.0 } else { 0.0 });
            }
            net.zero_grad();
            let logits = net.forward(&x, true);
            let (_, grad) = bce_with_logits_loss(&logits, &t);
            net.backward(&grad);
            opt.step(net.params_mut());
        }
    }

    // held-out accuracy
    let mut correct = 0usize;
    let mut x = Array4::<f32>::zeros((held_idx.len(), bands, 1, 1));
    for (i, &p) in held_idx.iter().enumerate() {
        for k in 0..bands {
            x[[i, k, 0, 0]] = pixels[p].0[k];
        }
    }
    let logits = net.forward(&x, false);
    for (i, &p) in held_idx.iter().enumerate() {
        let pred = logits[[i, 0, 0, 0]] > 0.0;
        if pred == pixels[p].1 {
            correct += 1;
        }
    }
    let held_out_accuracy = correct as f64 / held_idx.len().max(1) as f64;

    Ok(PixelClassifier {
        net,
        bands,
        held_out_accuracy,
    })
}

/// Threshold P(fruit) and keep only the largest 4-connected component.
pub fn segment(
    cube: &HyperCube,
    clf: &mut PixelClassifier,
    threshold: f32,
) -> Result<BinaryMask> {
    let probs = clf.predict_cube(cube)?;
    let raw = probs.mapv(|p| p >= threshold);
    Ok(largest_component(&raw))
}

fn largest_component(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = mask.dim();
    let mut labels = Array2::<u32>::zeros((h, w));
    let mut best_label = 0u32;
    let mut best_size = 0usize;
    let mut next = 1u32;
    let mut stack = Vec::new();
    for sy in 0..h {
        for sx in 0..w {
            if !mask[[sy, sx]] || labels[[sy, sx]] != 0 {
                continue;
            }
            let label = next;
            next += 1;
            let mut size = 0usize;
            stack.push((sy, sx));
            labels[[sy, sx]] = label;
            while let Some((y, x)) = stack.pop() {
                size += 1;
                let mut push = |ny: usize, nx: usize, labels: &mut Array2<u32>| {
                    if mask[[ny, nx]] && labels[[ny, nx]] == 0 {
                        labels[[ny, nx]] = label;
                        stack.push((ny, nx));
                    }
                };
                if y > 0 {
                    push(y - 1, x, &mut labels);
                }
                if y + 1 < h {
                    push(y + 1, x, &mut labels);
                }
                if x > 0 {
                    push(y, x - 1, &mut labels);
                }
                if x + 1 < w {
                    push(y, x + 1, &mut labels);
                }
            }
            if size > best_size {
                best_size = size;
                best_label = label;
            }
        }
    }
    Array2::from_shape_fn((h, w), |(y, x)| labels[[y, x]] == best_label && best_label != 0)
}

/// Crop to the tight bounding box of the mask and force off-mask pixels to
/// zero in every band.
pub fn crop_to_fruit(cube: &HyperCube, mask: &BinaryMask) -> Result<HyperCube> {
    if mask.dim() != (cube.height(), cube.width()) {
        return Err(Error::ShapeMismatch(format!(
            "mask {:?} does not match cube {}x{}",
            mask.dim(),
            cube.height(),
            cube.width()
        )));
    }
    let mut y0 = usize::MAX;
    let mut y1 = 0usize;
    let mut x0 = usize::MAX;
    let mut x1 = 0usize;
    for ((y, x), &m) in mask.indexed_iter() {
        if m {
            y0 = y0.min(y);
            y1 = y1.max(y);
            x0 = x0.min(x);
            x1 = x1.max(x);
        }
    }
    if y0 == usize::MAX {
        return Err(Error::EmptyMask);
    }
    let (oh, ow, b) = (y1 - y0 + 1, x1 - x0 + 1, cube.bands());
    let mut out = Array3::<f32>::zeros((oh, ow, b));
    for y in 0..oh {
        for x in 0..ow {
            if mask[[y0 + y, x0 + x]] {
                for k in 0..b {
                    out[[y, x, k]] = cube.data[[y0 + y, x0 + x, k]];
                }
            }
        }
    }
    HyperCube::new(out, cube.axis.clone())
}
