//! Label taxonomy, stratified splitting, class balancing, and augmentation.

use std::collections::BTreeMap;
use std::fmt;

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cube::HyperCube;
use crate::error::{Error, Result};
use crate::preprocess::resize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fruit {
    Avocado,
    Kiwi,
}

impl fmt::Display for Fruit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fruit::Avocado => write!(f, "avocado"),
            Fruit::Kiwi => write!(f, "kiwi"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Camera {
    SpecimFx10,
    Redeye17,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Front,
    Back,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RipenessState {
    Unripe,
    Perfect,
    Overripe,
}

/// One recording of one fruit side, together with whatever label sources
/// were measured for it. `fruit_id` names the physical fruit so both sides
/// stay on the same side of a split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelRecord {
    pub recording_id: String,
    pub fruit_id: String,
    pub fruit: Fruit,
    pub camera: Camera,
    pub day: i32,
    pub series: u8,
    pub side: Side,
    pub firmness_g_cm2: Option<f64>,
    pub sugar_brix: Option<f64>,
    pub ripeness_state: Option<RipenessState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Firmness,
    Sweetness,
    Ripeness,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Category::Firmness => write!(f, "firmness"),
            Category::Sweetness => write!(f, "sweetness"),
            Category::Ripeness => write!(f, "ripeness"),
        }
    }
}

/// Class index semantics: 0 = under (too hard / not sweet / unripe),
/// 1 = perfect, 2 = over (too soft / too sweet / overripe).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassLabel {
    pub category: Category,
    pub class_index: usize,
}

pub const N_RIPENESS_CLASSES: usize = 3;

/// Firmness class from penetrometer readings in g/cm².
///
/// Avocado: too hard above 1200, too soft below 900. Kiwi: 1500 / 1000.
/// Values exactly at a threshold count as perfect (the outer classes are
/// defined by strict inequalities).
pub fn assign_firmness_class(fruit: Fruit, firmness_g_cm2: f64) -> Result<ClassLabel> {
    if !(firmness_g_cm2 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "firmness must be positive, got {firmness_g_cm2}"
        )));
    }
    let (hard, soft) = match fruit {
        Fruit::Avocado => (1200.0, 900.0),
        Fruit::Kiwi => (1500.0, 1000.0),
    };
    let class_index = if firmness_g_cm2 > hard {
        0
    } else if firmness_g_cm2 < soft {
        2
    } else {
        1
    };
    Ok(ClassLabel {
        category: Category::Firmness,
        class_index,
    })
}

/// Sweetness class from °Brix; only defined for kiwi. Below 15.5 is not
/// sweet, above 17 is too sweet, thresholds themselves are perfect.
pub fn assign_sweetness_class(fruit: Fruit, brix: f64) -> Result<ClassLabel> {
    if fruit != Fruit::Kiwi {
        return Err(Error::InvalidArgument(format!(
            "sweetness classes are only defined for kiwi, got {fruit}"
        )));
    }
    if brix < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "brix must be nonnegative, got {brix}"
        )));
    }
    let class_index = if brix < 15.5 {
        0
    } else if brix > 17.0 {
        2
    } else {
        1
    };
    Ok(ClassLabel {
        category: Category::Sweetness,
        class_index,
    })
}

/// The class of a record under the given category, or an error when the
/// record lacks that label source.
pub fn class_for(record: &LabelRecord, category: Category) -> Result<ClassLabel> {
    match category {
        Category::Firmness => {
            let firmness = record.firmness_g_cm2.ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "record {} has no firmness measurement",
                    record.recording_id
                ))
            })?;
            assign_firmness_class(record.fruit, firmness)
        }
        Category::Sweetness => {
            let brix = record.sugar_brix.ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "record {} has no brix measurement",
                    record.recording_id
                ))
            })?;
            assign_sweetness_class(record.fruit, brix)
        }
        Category::Ripeness => {
            let state = record.ripeness_state.ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "record {} has no ripeness state",
                    record.recording_id
                ))
            })?;
            Ok(ClassLabel {
                category: Category::Ripeness,
                class_index: match state {
                    RipenessState::Unripe => 0,
                    RipenessState::Perfect => 1,
                    RipenessState::Overripe => 2,
                },
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

const SPLITS: [Split; 3] = [Split::Train, Split::Val, Split::Test];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub assignment: BTreeMap<String, Split>,
}

impl SplitAssignment {
    pub fn of(&self, recording_id: &str) -> Option<Split> {
        self.assignment.get(recording_id).copied()
    }

    pub fn counts(&self) -> [usize; 3] {
        let mut c = [0usize; 3];
        for s in self.assignment.values() {
            c[SPLITS.iter().position(|x| x == s).unwrap()] += 1;
        }
        c
    }
}

/// Stratified train/val/test split.
///
/// Per class, record counts follow largest-remainder apportionment of the
/// requested ratios; remainder ties go to the split that is globally most
/// behind its quota, then to test. Physical fruits (`fruit_id`) never
/// straddle splits. Deterministic given the seed.
pub fn split(
    records: &[LabelRecord],
    category: Category,
    ratios: [f64; 3],
    seed: u64,
) -> Result<SplitAssignment> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records to split".into()));
    }
    let rsum: f64 = ratios.iter().sum();
    if ratios.iter().any(|&r| r <= 0.0) || (rsum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios {ratios:?} must be positive and sum to 1"
        )));
    }

    // class of every record; physical fruits must be class-pure
    let mut by_class: [BTreeMap<String, Vec<&LabelRecord>>; 3] = Default::default();
    for r in records {
        let label = class_for(r, category)?;
        by_class[label.class_index]
            .entry(r.fruit_id.clone())
            .or_default()
            .push(r);
    }
    for c in 0..3 {
        for fruit_id in by_class[c].keys() {
            for other in 0..3 {
                if other != c && by_class[other].contains_key(fruit_id) {
                    return Err(Error::InvalidArgument(format!(
                        "fruit {fruit_id} has records in more than one class"
                    )));
                }
            }
        }
    }
    for (c, groups) in by_class.iter().enumerate() {
        if !groups.is_empty() && groups.len() < 3 {
            return Err(Error::InvalidArgument(format!(
                "class {c} has only {} physical fruits; need at least 3 to populate every split",
                groups.len()
            )));
        }
    }

    let mut assignment = BTreeMap::new();
    let mut global_assigned = [0f64; 3];
    let mut global_quota = [0f64; 3];
    for (c, groups) in by_class.iter().enumerate() {
        if groups.is_empty() {
            continue;
        }
        let n: usize = groups.values().map(|v| v.len()).sum();

        // largest-remainder targets for this class
        let quotas: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
        let mut targets: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
        let mut leftover = n - targets.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| {
            let fa = quotas[a] - targets[a] as f64;
            let fb = quotas[b] - targets[b] as f64;
            fb.partial_cmp(&fa).unwrap().then_with(|| {
                // tie: most globally behind first, then test before val
                let da = global_quota[a] + quotas[a] - (global_assigned[a] + targets[a] as f64);
                let db = global_quota[b] + quotas[b] - (global_assigned[b] + targets[b] as f64);
                db.partial_cmp(&da).unwrap().then(b.cmp(&a))
            })
        });
        for &s in &order {
            if leftover == 0 {
                break;
            }
            targets[s] += 1;
            leftover -= 1;
        }

        // hand out whole fruits, always to the split furthest below target
        let mut keys: Vec<&String> = groups.keys().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(c as u64));
        keys.shuffle(&mut rng);
        let mut assigned = [0usize; 3];
        for key in keys {
            let size = groups[key].len();
            let s = (0..3)
                .max_by(|&a, &b| {
                    let da = targets[a] as isize - assigned[a] as isize;
                    let db = targets[b] as isize - assigned[b] as isize;
                    da.cmp(&db).then(b.cmp(&a))
                })
                .unwrap();
            assigned[s] += size;
            for r in &groups[key] {
                assignment.insert(r.recording_id.clone(), SPLITS[s]);
            }
        }
        for s in 0..3 {
            global_assigned[s] += assigned[s] as f64;
            global_quota[s] += quotas[s];
        }
    }
    Ok(SplitAssignment { assignment })
}

/// Per-record sampling weights making expected class frequencies uniform:
/// w = 1 / (n_classes · n_class). The weights over each class sum to the
/// same value.
pub fn balance(records: &[LabelRecord], category: Category) -> Result<Vec<f64>> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records to balance".into()));
    }
    let mut counts = [0usize; 3];
    let mut classes = Vec::with_capacity(records.len());
    for r in records {
        let c = class_for(r, category)?.class_index;
        counts[c] += 1;
        classes.push(c);
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidArgument(format!(
            "class {empty} has no records in the training set"
        )));
    }
    Ok(classes
        .iter()
        .map(|&c| 1.0 / (N_RIPENESS_CLASSES as f64 * counts[c] as f64))
        .collect())
}

/// Augmentation switches. Each enabled transform fires independently with
/// probability 0.5 per call.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentationConfig {
    pub rotate: bool,
    pub flip: bool,
    pub noise_sigma: f64,
    pub random_cut: bool,
    /// fraction of each spatial dimension kept by the random cut
    pub cut_extent: (f64, f64),
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            rotate: true,
            flip: true,
            noise_sigma: 0.1,
            random_cut: true,
            cut_extent: (0.7, 1.0),
        }
    }
}

impl AugmentationConfig {
    pub fn disabled() -> Self {
        AugmentationConfig {
            rotate: false,
            flip: false,
            noise_sigma: 0.0,
            random_cut: false,
            cut_extent: (0.7, 1.0),
        }
    }

    /// Rotations and flips only: label-safe and pixel-multiset-preserving.
    pub fn geometric_only() -> Self {
        AugmentationConfig {
            rotate: true,
            flip: true,
            noise_sigma: 0.0,
            random_cut: false,
            cut_extent: (0.7, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.noise_sigma < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "noise sigma must be nonnegative, got {}",
                self.noise_sigma
            )));
        }
        let (lo, hi) = self.cut_extent;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "cut extent ({lo}, {hi}) must satisfy 0 < lo <= hi <= 1"
            )));
        }
        Ok(())
    }
}

/// Rotate the spatial plane by `k` quarter turns counterclockwise.
pub fn rotate90(cube: &HyperCube, k: usize) -> HyperCube {
    let (h, w, b) = cube.data.dim();
    let k = k % 4;
    let (oh, ow) = if k % 2 == 0 { (h, w) } else { (w, h) };
    let data = Array3::from_shape_fn((oh, ow, b), |(y, x, kk)| match k {
        0 => cube.data[[y, x, kk]],
        1 => cube.data[[x, ow - 1 - y, kk]],
        2 => cube.data[[oh - 1 - y, ow - 1 - x, kk]],
        _ => cube.data[[oh - 1 - x, y, kk]],
    });
    HyperCube::new(data, cube.axis.clone()).expect("rotation preserves validity")
}

/// Mirror left-right (`horizontal = true`) or top-bottom.
pub fn flip(cube: &HyperCube, horizontal: bool) -> HyperCube {
    let (h, w, b) = cube.data.dim();
    let data = Array3::from_shape_fn((h, w, b), |(y, x, k)| {
        if horizontal {
            cube.data[[y, w - 1 - x, k]]
        } else {
            cube.data[[h - 1 - y, x, k]]
        }
    });
    HyperCube::new(data, cube.axis.clone()).expect("flip preserves validity")
}

/// Apply the configured augmentations, each with independent probability
/// 0.5. Noise scales with the band-wise standard deviation (falling back to
/// 1.0 for constant bands so the knob still has effect). The random cut
/// crops a sub-rectangle covering `cut_extent` of each spatial dimension and
/// resizes back.
pub fn augment<R: Rng>(cube: &HyperCube, cfg: &AugmentationConfig, rng: &mut R) -> Result<HyperCube> {
    cfg.validate()?;
    let mut out = cube.clone();
    let (h, w, b) = cube.data.dim();

    if cfg.rotate && rng.gen_bool(0.5) {
        let k = if h == w {
            rng.gen_range(1..4)
        } else {
            2 // quarter turns would change the shape
        };
        out = rotate90(&out, k);
    }
    if cfg.flip {
        if rng.gen_bool(0.5) {
            out = flip(&out, true);
        }
        if rng.gen_bool(0.5) {
            out = flip(&out, false);
        }
    }
    if cfg.random_cut && rng.gen_bool(0.5) {
        let (lo, hi) = cfg.cut_extent;
        let fh = rng.gen_range(lo..=hi);
        let fw = rng.gen_range(lo..=hi);
        let ch = ((h as f64 * fh).round() as usize).clamp(1, h);
        let cw = ((w as f64 * fw).round() as usize).clamp(1, w);
        let y0 = rng.gen_range(0..=h - ch);
        let x0 = rng.gen_range(0..=w - cw);
        let view = out
            .data
            .slice(ndarray::s![y0..y0 + ch, x0..x0 + cw, ..])
            .to_owned();
        let cropped = HyperCube::new(view, out.axis.clone())?;
        out = resize(&cropped, h, w)?;
    }
    if cfg.noise_sigma > 0.0 && rng.gen_bool(0.5) {
        let n_px = (h * w) as f64;
        for band in 0..b {
            let slice = out.data.slice(ndarray::s![.., .., band]);
            let mean = slice.iter().map(|&v| v as f64).sum::<f64>() / n_px;
            let var = slice
                .iter()
                .map(|&v| (v as f64 - mean).powi(2))
                .sum::<f64>()
                / n_px;
            let std = var.sqrt();
            let scale = if std > 1e-12 { std } else { 1.0 };
            let normal = Normal::new(0.0, cfg.noise_sigma * scale).unwrap();
            for y in 0..h {
                for x in 0..w {
                    out.data[[y, x, band]] += normal.sample(rng) as f32;
                }
            }
        }
    }
    Ok(out)
}

/// Write records as CSV (one header row plus one row per recording).
pub fn manifest_to_csv(records: &[LabelRecord]) -> String {
    let mut out = String::from(
        "recording_id,fruit_id,fruit,camera,day,series,side,firmness_g_cm2,sugar_brix,ripeness_state\n",
    );
    for r in records {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let state = match r.ripeness_state {
            Some(RipenessState::Unripe) => "unripe",
            Some(RipenessState::Perfect) => "perfect",
            Some(RipenessState::Overripe) => "overripe",
            None => "",
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.recording_id,
            r.fruit_id,
            r.fruit,
            match r.camera {
                Camera::SpecimFx10 => "specim_fx10",
                Camera::Redeye17 => "redeye_17",
            },
            r.day,
            r.series,
            match r.side {
                Side::Front => "front",
                Side::Back => "back",
            },
            opt(r.firmness_g_cm2),
            opt(r.sugar_brix),
            state,
        ));
    }
    out
}

/// Parse a manifest produced by [`manifest_to_csv`].
pub fn manifest_from_csv(text: &str) -> Result<Vec<LabelRecord>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidArgument("empty manifest".into()))?;
    if !header.starts_with("recording_id,") {
        return Err(Error::InvalidArgument(format!(
            "unexpected manifest header: {header}"
        )));
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(Error::InvalidArgument(format!(
                "manifest row {} has {} fields, expected 10",
                i + 2,
                f.len()
            )));
        }
        let parse_opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse::<f64>()
                    .map(Some)
                    .map_err(|e| Error::InvalidArgument(format!("bad number {s:?}: {e}")))
            }
        };
        records.push(LabelRecord {
            recording_id: f[0].to_string(),
            fruit_id: f[1].to_string(),
            fruit: match f[2] {
                "avocado" => Fruit::Avocado,
                "kiwi" => Fruit::Kiwi,
                other => {
                    return Err(Error::InvalidArgument(format!("unknown fruit {other:?}")))
                }
            },
            camera: match f[3] {
                "specim_fx10" => Camera::SpecimFx10,
                "redeye_17" => Camera::Redeye17,
                other => {
                    return Err(Error::InvalidArgument(format!("unknown camera {other:?}")))
                }
            },
            day: f[4]
                .parse()
                .map_err(|e| Error::InvalidArgument(format!("bad day {:?}: {e}", f[4])))?,
            series: f[5]
                .parse()
                .map_err(|e| Error::InvalidArgument(format!("bad series {:?}: {e}", f[5])))?,
            side: match f[6] {
                "front" => Side::Front,
                "back" => Side::Back,
                other => return Err(Error::InvalidArgument(format!("unknown side {other:?}"))),
            },
            firmness_g_cm2: parse_opt(f[7])?,
            sugar_brix: parse_opt(f[8])?,
            ripeness_state: match f[9] {
                "" => None,
                "unripe" => Some(RipenessState::Unripe),
                "perfect" => Some(RipenessState::Perfect),
                "overripe" => Some(RipenessState::Overripe),
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown ripeness state {other:?}"
                    )))
                }
            },
        });
    }
    Ok(records)
}
