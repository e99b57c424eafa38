//! Training loop with balanced sampling and early stopping, test-time
//! augmented evaluation, and the benchmark grid runner.

use ndarray::{Array2, Array3, Array4, Axis};
use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cube::HyperCube;
use crate::dataset::{self, class_for, Camera, Category, LabelRecord, Split};
use crate::error::{Error, Result};
use crate::models::{ClassifierModel, ModelArch, ModelConfig};
use crate::nn::{Layer, Loss, Optimizer, OptimizerKind};
use crate::preprocess::{fit_pca, apply_pca, to_rgb, BinaryMask};
use crate::shallow::{self, ShallowKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerChoice {
    Sgd,
    Adam,
    AdaboundDefault,
    AdaboundLr01,
}

impl OptimizerChoice {
    pub(crate) fn build(self, lr_override: Option<f64>) -> Optimizer {
        match self {
            OptimizerChoice::Sgd => Optimizer::new(
                OptimizerKind::Sgd { momentum: 0.9 },
                lr_override.unwrap_or(1e-2),
            ),
            OptimizerChoice::Adam => {
                Optimizer::new(OptimizerKind::Adam, lr_override.unwrap_or(1e-3))
            }
            OptimizerChoice::AdaboundDefault => Optimizer::new(
                OptimizerKind::AdaBound { final_lr: 0.1 },
                lr_override.unwrap_or(1e-3),
            ),
            OptimizerChoice::AdaboundLr01 => Optimizer::new(
                OptimizerKind::AdaBound { final_lr: 0.1 },
                lr_override.unwrap_or(1e-2),
            ),
        }
    }
}

/// Training recipe. The defaults follow the reference setup: batch size 32,
/// Adabound at learning rate 0.01, focal loss, early stopping on the
/// validation loss.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub optimizer: OptimizerChoice,
    /// overrides the optimizer's default learning rate when set
    pub learning_rate: Option<f64>,
    pub loss: Loss,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub augment: Option<dataset::AugmentationConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            optimizer: OptimizerChoice::AdaboundLr01,
            learning_rate: None,
            loss: Loss::Focal { gamma: 2.0 },
            early_stop_patience: 10,
            max_epochs: 200,
            seed: 0,
            augment: Some(dataset::AugmentationConfig::geometric_only()),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        if self.early_stop_patience == 0 {
            return Err(Error::InvalidArgument("patience must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidArgument("max_epochs must be >= 1".into()));
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub best_val_accuracy: f64,
    /// class sizes seen in the training set
    pub train_class_counts: [usize; 3],
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `confusion[true][pred]`
    pub confusion: [[usize; 3]; 3],
    pub precision: [f64; 3],
    pub recall: [f64; 3],
    pub tta_views: usize,
}

/// Band-last cube to channel-first network input.
pub fn cube_to_input(cube: &HyperCube) -> Array3<f32> {
    let (h, w, b) = cube.data.dim();
    Array3::from_shape_fn((b, h, w), |(c, y, x)| cube.data[[y, x, c]])
}

fn stack_batch(inputs: &[Array3<f32>]) -> Array4<f32> {
    let (c, h, w) = inputs[0].dim();
    let mut out = Array4::<f32>::zeros((inputs.len(), c, h, w));
    for (i, x) in inputs.iter().enumerate() {
        out.index_axis_mut(Axis(0), i).assign(x);
    }
    out
}

fn class_counts(labels: &[usize]) -> [usize; 3] {
    let mut counts = [0usize; 3];
    for &l in labels {
        counts[l] += 1;
    }
    counts
}

/// Validation pass in eval mode: (mean loss, accuracy).
fn validate_pass(
    model: &mut ClassifierModel,
    set: &[(HyperCube, usize)],
    loss: Loss,
) -> (f64, f64) {
    let mut total_loss = 0.0;
    let mut correct = 0usize;
    for chunk in set.chunks(16) {
        let inputs: Vec<Array3<f32>> = chunk.iter().map(|(c, _)| cube_to_input(c)).collect();
        let targets: Vec<usize> = chunk.iter().map(|(_, t)| *t).collect();
        let x = stack_batch(&inputs);
        let logits = model.forward_logits(&x, false);
        let (l, _) = loss.loss_and_grad(&logits, &targets, None);
        total_loss += l * chunk.len() as f64;
        for (i, &t) in targets.iter().enumerate() {
            if argmax_row(&logits, i) == t {
                correct += 1;
            }
        }
    }
    (
        total_loss / set.len() as f64,
        correct as f64 / set.len() as f64,
    )
}

fn argmax_row(m: &Array2<f32>, row: usize) -> usize {
    let mut best = 0usize;
    for j in 1..m.shape()[1] {
        if m[[row, j]] > m[[row, best]] {
            best = j;
        }
    }
    best
}

/// Train a classifier. Batches are drawn with class-balanced weighted
/// sampling; augmentation (if configured) is applied per sample. Training
/// stops when the validation loss fails to improve for
/// `early_stop_patience` epochs, and the best-epoch parameters are restored
/// before returning. Deterministic given the seed.
pub fn train(
    model: &mut ClassifierModel,
    train_set: &[(HyperCube, usize)],
    val_set: &[(HyperCube, usize)],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidArgument(
            "train and validation sets must be non-empty".into(),
        ));
    }
    let labels: Vec<usize> = train_set.iter().map(|(_, t)| *t).collect();
    if labels.iter().any(|&l| l >= 3) {
        return Err(Error::InvalidArgument("class index out of range".into()));
    }
    let counts = class_counts(&labels);
    let present = counts.iter().filter(|&&c| c > 0).count();
    let weights: Vec<f64> = labels
        .iter()
        .map(|&l| 1.0 / (present as f64 * counts[l] as f64))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sampler = WeightedIndex::new(&weights)
        .map_err(|e| Error::InvalidArgument(format!("bad sampling weights: {e}")))?;
    let mut optimizer = cfg.optimizer.build(cfg.learning_rate);

    let batches_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let mut epochs = Vec::new();
    let mut best_val_loss = f64::INFINITY;
    let mut best_val_accuracy = 0.0;
    let mut best_epoch = 0usize;
    let mut best_state = model.net.state_snapshot();
    let mut since_best = 0usize;
    let mut stopped_epoch = 0usize;

    for epoch in 1..=cfg.max_epochs {
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        let mut correct = 0usize;
        for _ in 0..batches_per_epoch {
            let idx: Vec<usize> = (0..cfg.batch_size)
                .map(|_| sampler.sample(&mut rng))
                .collect();
            let mut inputs = Vec::with_capacity(idx.len());
            let mut targets = Vec::with_capacity(idx.len());
            for &i in &idx {
                let (cube, label) = &train_set[i];
                let cube = match &cfg.augment {
                    Some(a) => dataset::augment(cube, a, &mut rng)?,
                    None => cube.clone(),
                };
                inputs.push(cube_to_input(&cube));
                targets.push(*label);
            }
            let x = stack_batch(&inputs);
            model.net.zero_grad();
            let out4 = model.net.forward(&x, true);
            let n = out4.shape()[0];
            let logits =
                Array2::from_shape_fn((n, 3), |(i, j)| out4[[i, j, 0, 0]]);
            let (loss, grad) = cfg.loss.loss_and_grad(&logits, &targets, None);
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss {loss} at epoch {epoch}"
                )));
            }
            let grad4 =
                Array4::from_shape_fn((n, 3, 1, 1), |(i, j, _, _)| grad[[i, j]]);
            model.net.backward(&grad4);
            optimizer.step(model.net.params_mut());

            epoch_loss += loss * n as f64;
            seen += n;
            for (i, &t) in targets.iter().enumerate() {
                if argmax_row(&logits, i) == t {
                    correct += 1;
                }
            }
        }

        let (val_loss, val_accuracy) = validate_pass(model, val_set, cfg.loss);
        if !val_loss.is_finite() {
            return Err(Error::Training(format!(
                "non-finite validation loss at epoch {epoch}"
            )));
        }
        epochs.push(EpochStats {
            train_loss: epoch_loss / seen as f64,
            train_accuracy: correct as f64 / seen as f64,
            val_loss,
            val_accuracy,
        });
        stopped_epoch = epoch;

        if val_loss < best_val_loss {
            best_val_loss = val_loss;
            best_val_accuracy = val_accuracy;
            best_epoch = epoch;
            best_state = model.net.state_snapshot();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                break;
            }
        }
    }

    model.net.restore_snapshot(&best_state);
    Ok(TrainReport {
        epochs,
        stopped_epoch,
        best_epoch,
        best_val_loss,
        best_val_accuracy,
        train_class_counts: counts,
        config: cfg.clone(),
    })
}

/// The eight dihedral views used for test-time augmentation, in fixed
/// order: identity, three quarter-turn rotations, horizontal and vertical
/// flips, and the two flipped quarter turns.
fn tta_view(cube: &HyperCube, view: usize) -> HyperCube {
    match view {
        0 => cube.clone(),
        1 => dataset::rotate90(cube, 1),
        2 => dataset::rotate90(cube, 2),
        3 => dataset::rotate90(cube, 3),
        4 => dataset::flip(cube, true),
        5 => dataset::flip(cube, false),
        6 => dataset::flip(&dataset::rotate90(cube, 1), true),
        _ => dataset::flip(&dataset::rotate90(cube, 1), false),
    }
}

/// Evaluate with deterministic test-time augmentation: class probabilities
/// are averaged over `views` dihedral views (view 1 is the identity), ties
/// break toward the lower class index. `views = 1` is bit-identical to a
/// plain evaluation pass.
pub fn evaluate_tta(
    model: &mut ClassifierModel,
    test_set: &[(HyperCube, usize)],
    views: usize,
) -> Result<EvalReport> {
    if !(1..=8).contains(&views) {
        return Err(Error::InvalidArgument(format!(
            "views {views} outside 1..=8"
        )));
    }
    if test_set.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let square = test_set
        .iter()
        .all(|(c, _)| c.height() == c.width());
    if !square && views > 1 {
        return Err(Error::InvalidArgument(
            "quarter-turn TTA views require square inputs".into(),
        ));
    }

    let n = test_set.len();
    let mut probs = Array2::<f32>::zeros((n, 3));
    for view in 0..views {
        for (start, chunk) in test_set.chunks(16).enumerate().map(|(i, c)| (i * 16, c)) {
            let inputs: Vec<Array3<f32>> = chunk
                .iter()
                .map(|(c, _)| cube_to_input(&tta_view(c, view)))
                .collect();
            let x = stack_batch(&inputs);
            let p = model.predict_probs(&x);
            for i in 0..chunk.len() {
                for j in 0..3 {
                    probs[[start + i, j]] += p[[i, j]];
                }
            }
        }
    }
    probs.mapv_inplace(|v| v / views as f32);

    let mut confusion = [[0usize; 3]; 3];
    for (i, (_, t)) in test_set.iter().enumerate() {
        let pred = argmax_row(&probs, i);
        confusion[*t][pred] += 1;
    }
    let total: usize = confusion.iter().flatten().sum();
    let trace: usize = (0..3).map(|c| confusion[c][c]).sum();
    let mut precision = [0.0f64; 3];
    let mut recall = [0.0f64; 3];
    for c in 0..3 {
        let col: usize = (0..3).map(|t| confusion[t][c]).sum();
        let row: usize = confusion[c].iter().sum();
        precision[c] = if col > 0 {
            confusion[c][c] as f64 / col as f64
        } else {
            0.0
        };
        recall[c] = if row > 0 {
            confusion[c][c] as f64 / row as f64
        } else {
            0.0
        };
    }
    Ok(EvalReport {
        accuracy: trace as f64 / total as f64,
        confusion,
        precision,
        recall,
        tta_views: views,
    })
}

/// Plain evaluation: the identity-only special case of [`evaluate_tta`].
pub fn evaluate(model: &mut ClassifierModel, test_set: &[(HyperCube, usize)]) -> Result<EvalReport> {
    evaluate_tta(model, test_set, 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Full,
    Rgb,
    Pca5,
}

impl Reduction {
    pub fn name(&self) -> &'static str {
        match self {
            Reduction::Full => "full",
            Reduction::Rgb => "rgb",
            Reduction::Pca5 => "pca5",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridModelKind {
    HsCnn,
    ResNet18,
    AlexNet,
    SvmRbf,
    Knn,
}

impl GridModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            GridModelKind::HsCnn => "hs_cnn",
            GridModelKind::ResNet18 => "resnet18",
            GridModelKind::AlexNet => "alexnet",
            GridModelKind::SvmRbf => "svm_rbf",
            GridModelKind::Knn => "knn",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridCell {
    pub model: String,
    pub reduction: Reduction,
    pub category: Category,
    pub camera: Camera,
    /// `None` marks a cell that could not be populated
    pub accuracy: Option<f64>,
    pub note: String,
    pub seed: u64,
}

/// Run the model × reduction × category × camera accuracy grid. Cells
/// without usable data (missing labels, reductions that do not apply) are
/// marked absent and the run continues.
pub fn run_benchmark_grid(
    data: &[(HyperCube, LabelRecord, BinaryMask)],
    models: &[GridModelKind],
    reductions: &[Reduction],
    categories: &[Category],
    cfg: &TrainConfig,
) -> Result<Vec<GridCell>> {
    cfg.validate()?;
    let mut cells = Vec::new();
    if models.is_empty() || data.is_empty() {
        return Ok(cells);
    }

    let mut cameras: Vec<Camera> = Vec::new();
    for (_, r, _) in data {
        if !cameras.contains(&r.camera) {
            cameras.push(r.camera);
        }
    }

    for &camera in &cameras {
        for &category in categories {
            let subset: Vec<&(HyperCube, LabelRecord, BinaryMask)> = data
                .iter()
                .filter(|(_, r, _)| r.camera == camera && class_for(r, category).is_ok())
                .collect();
            let absent = |note: &str, cells: &mut Vec<GridCell>| {
                for &model in models {
                    for &reduction in reductions {
                        cells.push(GridCell {
                            model: model.name().to_string(),
                            reduction,
                            category,
                            camera,
                            accuracy: None,
                            note: note.to_string(),
                            seed: cfg.seed,
                        });
                    }
                }
            };
            if subset.is_empty() {
                absent("no labeled data", &mut cells);
                continue;
            }
            let records: Vec<LabelRecord> = subset.iter().map(|(_, r, _)| r.clone()).collect();
            let assignment =
                match dataset::split(&records, category, [0.75, 0.125, 0.125], cfg.seed) {
                    Ok(a) => a,
                    Err(e) => {
                        absent(&format!("split failed: {e}"), &mut cells);
                        continue;
                    }
                };

            for &reduction in reductions {
                let reduced = match reduce_cubes(&subset, &assignment, reduction) {
                    Ok(r) => r,
                    Err(e) => {
                        for &model in models {
                            cells.push(GridCell {
                                model: model.name().to_string(),
                                reduction,
                                category,
                                camera,
                                accuracy: None,
                                note: format!("reduction failed: {e}"),
                                seed: cfg.seed,
                            });
                        }
                        continue;
                    }
                };
                for &model in models {
                    let cell = run_grid_cell(model, &reduced, &subset, &assignment, category, cfg);
                    cells.push(match cell {
                        Ok((accuracy, note)) => GridCell {
                            model: model.name().to_string(),
                            reduction,
                            category,
                            camera,
                            accuracy: Some(accuracy),
                            note,
                            seed: cfg.seed,
                        },
                        Err(e) => GridCell {
                            model: model.name().to_string(),
                            reduction,
                            category,
                            camera,
                            accuracy: None,
                            note: format!("cell failed: {e}"),
                            seed: cfg.seed,
                        },
                    });
                }
            }
        }
    }
    Ok(cells)
}

/// Apply a band reduction to every cube; PCA is fit on the training split
/// only.
pub fn reduce_cubes(
    subset: &[&(HyperCube, LabelRecord, BinaryMask)],
    assignment: &dataset::SplitAssignment,
    reduction: Reduction,
) -> Result<Vec<HyperCube>> {
    match reduction {
        Reduction::Full => Ok(subset.iter().map(|(c, _, _)| c.clone()).collect()),
        Reduction::Rgb => subset
            .iter()
            .map(|(c, _, _)| {
                let rgb = to_rgb(c)?;
                let axis = crate::cube::WavelengthAxis::new(vec![1.0, 2.0, 3.0])?;
                HyperCube::new(rgb.pixels, axis)
            })
            .collect(),
        Reduction::Pca5 => {
            let train_cubes: Vec<HyperCube> = subset
                .iter()
                .filter(|(_, r, _)| assignment.of(&r.recording_id) == Some(Split::Train))
                .map(|(c, _, _)| c.clone())
                .collect();
            let proj = fit_pca(&train_cubes, 5)?;
            subset.iter().map(|(c, _, _)| apply_pca(c, &proj)).collect()
        }
    }
}

fn run_grid_cell(
    model: GridModelKind,
    reduced: &[HyperCube],
    subset: &[&(HyperCube, LabelRecord, BinaryMask)],
    assignment: &dataset::SplitAssignment,
    category: Category,
    cfg: &TrainConfig,
) -> Result<(f64, String)> {
    let mut sets: [Vec<(HyperCube, usize)>; 3] = Default::default();
    let mut shallow_sets: [Vec<(Vec<f64>, usize)>; 3] = Default::default();
    let is_shallow = matches!(model, GridModelKind::SvmRbf | GridModelKind::Knn);
    for (cube, (_, record, mask)) in reduced.iter().zip(subset) {
        let label = class_for(record, category)?.class_index;
        let s = assignment
            .of(&record.recording_id)
            .ok_or_else(|| Error::InvalidArgument("record missing from split".into()))?;
        let si = match s {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        };
        if is_shallow {
            shallow_sets[si].push((shallow::masked_mean_spectrum(cube, mask)?, label));
        } else {
            sets[si].push((cube.clone(), label));
        }
    }

    match model {
        GridModelKind::SvmRbf | GridModelKind::Knn => {
            let (train_x, train_y): (Vec<_>, Vec<_>) =
                shallow_sets[0].iter().cloned().unzip();
            let kind = if model == GridModelKind::SvmRbf {
                ShallowKind::SvmRbf
            } else {
                ShallowKind::Knn
            };
            let fitted = shallow::fit_default(kind, &train_x, &train_y, cfg.seed)?;
            let mut correct = 0usize;
            for (x, y) in &shallow_sets[2] {
                if fitted.predict(x) == *y {
                    correct += 1;
                }
            }
            Ok((
                correct as f64 / shallow_sets[2].len().max(1) as f64,
                fitted.describe(),
            ))
        }
        _ => {
            let in_bands = reduced[0].bands();
            let arch = match model {
                GridModelKind::HsCnn => ModelArch::HsCnn(ModelConfig::default_for(in_bands)),
                GridModelKind::ResNet18 => ModelArch::ResNet18 { in_bands },
                GridModelKind::AlexNet => ModelArch::AlexNet { in_bands },
                _ => unreachable!(),
            };
            let mut m = ClassifierModel::build(arch, cfg.seed)?;
            let report = train(&mut m, &sets[0], &sets[1], cfg)?;
            let eval = evaluate_tta(&mut m, &sets[2], 8)?;
            Ok((
                eval.accuracy,
                format!("best_epoch={} best_val_loss={:.4}", report.best_epoch, report.best_val_loss),
            ))
        }
    }
}

/// Render grid cells as CSV.
pub fn grid_to_csv(cells: &[GridCell]) -> String {
    let mut out =
        String::from("model,reduction,category,camera,accuracy,note,seed\n");
    for c in cells {
        out.push_str(&format!(
            "{},{},{},{:?},{},{},{}\n",
            c.model,
            c.reduction.name(),
            c.category,
            c.camera,
            c.accuracy.map(|a| format!("{a:.4}")).unwrap_or_default(),
            c.note.replace(',', ";"),
            c.seed,
        ));
    }
    out
}
