//! Synthetic hyperspectral fruit generator with exact ground truth, used to
//! exercise the full pipeline at desk scale.

use ndarray::{Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cube::{HyperCube, WavelengthAxis};
use crate::dataset::{Camera, Fruit, LabelRecord, Side};
use crate::error::{Error, Result};
use crate::preprocess::BinaryMask;

/// Recipe for one synthetic recording.
///
/// The fruit is an ellipse on a zero background. Fruit spectra are a smooth
/// base curve plus two localized, ripeness-dependent features: a pigment
/// absorption dip whose depth shrinks as `ripeness_t` grows, and a
/// reflectance bump in the near infrared whose amplitude grows with
/// `ripeness_t`. Both features have compact support, so spectra at two
/// ripeness values differ only inside the designated windows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub axis: WavelengthAxis,
    pub height: usize,
    pub width: usize,
    /// ellipse semi-axes in pixels (vertical, horizontal)
    pub semi_axes: (f64, f64),
    /// ripeness in [0, 1]
    pub ripeness_t: f64,
    pub dip_center_nm: f64,
    pub dip_width_nm: f64,
    /// set the dip depth constant instead of ripeness-dependent
    pub dip_static: bool,
    pub nir_center_nm: f64,
    pub nir_width_nm: f64,
    pub noise_sigma: f64,
    pub fruit: Fruit,
    pub camera: Camera,
    pub seed: u64,
}

impl SynthSpec {
    /// 64x64 avocado-style recording on the visible/NIR axis.
    pub fn default_with(axis: WavelengthAxis, ripeness_t: f64, seed: u64) -> Self {
        SynthSpec {
            axis,
            height: 64,
            width: 64,
            semi_axes: (24.0, 18.0),
            ripeness_t,
            dip_center_nm: 680.0,
            dip_width_nm: 30.0,
            dip_static: false,
            nir_center_nm: 900.0,
            nir_width_nm: 25.0,
            noise_sigma: 0.01,
            fruit: Fruit::Avocado,
            camera: Camera::SpecimFx10,
            seed,
        }
    }

    /// Variant whose only class signal sits in the near infrared: the
    /// pigment dip is frozen so RGB renderings carry no label information.
    pub fn nir_only_with(axis: WavelengthAxis, ripeness_t: f64, seed: u64) -> Self {
        let mut spec = Self::default_with(axis, ripeness_t, seed);
        spec.dip_static = true;
        spec
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ripeness_t) {
            return Err(Error::InvalidArgument(format!(
                "ripeness {} outside [0, 1]",
                self.ripeness_t
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::InvalidArgument("negative noise sigma".into()));
        }
        let (ry, rx) = self.semi_axes;
        if ry < 1.0 || rx < 1.0 || ry * 2.0 >= self.height as f64 || rx * 2.0 >= self.width as f64
        {
            return Err(Error::Degenerate(format!(
                "ellipse semi-axes ({ry}, {rx}) do not fit a {}x{} image",
                self.height, self.width
            )));
        }
        let (lo, hi) = self.axis.range();
        for (name, c) in [("dip", self.dip_center_nm), ("nir", self.nir_center_nm)] {
            if c < lo || c > hi {
                return Err(Error::InvalidArgument(format!(
                    "{name} center {c} nm outside axis range {lo}-{hi} nm"
                )));
            }
        }
        Ok(())
    }
}

/// Quartic window with compact support: (1-u^2)^2 for |u| < 1, else 0.
fn window(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        let v = 1.0 - u * u;
        v * v
    }
}

fn base_curve(nm: f64) -> f64 {
    // gentle positive slope with a broad hump, always >= 0.2
    0.35 + 0.15 * ((nm - 400.0) / 600.0 * std::f64::consts::PI).sin()
}

/// Noiseless fruit reflectance at one wavelength for ripeness `t`.
pub fn fruit_reflectance(spec: &SynthSpec, nm: f64) -> f64 {
    let dip_t = if spec.dip_static { 0.5 } else { spec.ripeness_t };
    let dip = 0.25 * (1.0 - dip_t) * window((nm - spec.dip_center_nm) / spec.dip_width_nm);
    let nir = 0.30 * spec.ripeness_t * window((nm - spec.nir_center_nm) / spec.nir_width_nm);
    base_curve(nm) - dip + nir
}

/// Firmness in g/cm² as an affine map of ripeness that crosses both class
/// thresholds, so every class is realizable.
pub fn firmness_of_t(fruit: Fruit, t: f64) -> f64 {
    let (f0, f1) = firmness_endpoints(fruit);
    f0 + (f1 - f0) * t
}

fn firmness_endpoints(fruit: Fruit) -> (f64, f64) {
    match fruit {
        Fruit::Avocado => (1400.0, 700.0),
        Fruit::Kiwi => (1700.0, 800.0),
    }
}

/// Ripeness interval mapping to the given class (0 hard, 1 perfect, 2 soft),
/// shrunk by a safety margin so sampled firmness never sits on a threshold.
pub fn t_interval_for_class(fruit: Fruit, class_index: usize) -> Result<(f64, f64)> {
    let (f0, f1) = firmness_endpoints(fruit);
    let (hard, soft) = match fruit {
        Fruit::Avocado => (1200.0, 900.0),
        Fruit::Kiwi => (1500.0, 1000.0),
    };
    let t_at = |f: f64| (f0 - f) / (f0 - f1);
    let (lo, hi) = match class_index {
        0 => (0.0, t_at(hard)),
        1 => (t_at(hard), t_at(soft)),
        2 => (t_at(soft), 1.0),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "class index {class_index} out of range"
            )))
        }
    };
    let margin = (hi - lo) * 0.1;
    let (lo, hi) = (lo + margin, hi - margin);
    if !(lo < hi && (0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi)) {
        return Err(Error::InvalidArgument(format!(
            "class {class_index} is unreachable under the firmness mapping"
        )));
    }
    Ok((lo, hi))
}

/// Generate one recording: cube (background exactly zero), its label record
/// with firmness derived from `ripeness_t`, and the exact fruit mask.
pub fn generate_cube(spec: &SynthSpec) -> Result<(HyperCube, LabelRecord, BinaryMask)> {
    spec.validate()?;
    let (h, w, b) = (spec.height, spec.width, spec.axis.len());
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (ry, rx) = spec.semi_axes;

    let mask = Array2::from_shape_fn((h, w), |(y, x)| {
        let dy = (y as f64 - cy) / ry;
        let dx = (x as f64 - cx) / rx;
        dy * dy + dx * dx <= 1.0
    });
    if !mask.iter().any(|&m| m) {
        return Err(Error::Degenerate("ellipse covers no pixels".into()));
    }

    let spectrum: Vec<f64> = spec
        .axis
        .values()
        .iter()
        .map(|&nm| fruit_reflectance(spec, nm))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = if spec.noise_sigma > 0.0 {
        Some(Normal::new(0.0, spec.noise_sigma).unwrap())
    } else {
        None
    };
    let mut data = Array3::<f32>::zeros((h, w, b));
    for y in 0..h {
        for x in 0..w {
            if !mask[[y, x]] {
                continue;
            }
            // deterministic radial shading, independent of ripeness
            let dy = (y as f64 - cy) / ry;
            let dx = (x as f64 - cx) / rx;
            let shade = 1.0 - 0.15 * (dy * dy + dx * dx);
            for k in 0..b {
                let mut v = spectrum[k] * shade;
                if let Some(n) = &noise {
                    v += n.sample(&mut rng);
                }
                data[[y, x, k]] = v as f32;
            }
        }
    }

    let mut cube = HyperCube::new(data, spec.axis.clone())?;
    cube.mask = Some(mask.clone());

    let recording_id = format!("synth_{:08x}", spec.seed);
    let record = LabelRecord {
        recording_id: recording_id.clone(),
        fruit_id: recording_id,
        fruit: spec.fruit,
        camera: spec.camera,
        day: 0,
        series: 1,
        side: Side::Front,
        firmness_g_cm2: Some(firmness_of_t(spec.fruit, spec.ripeness_t)),
        sugar_brix: None,
        ripeness_state: None,
    };
    Ok((cube, record, mask))
}

/// Generate `class_counts[c]` recordings per firmness class. Per-record
/// seeds derive from `seed`, ripeness is sampled inside the class interval,
/// and ellipse geometry is jittered for variety.
pub fn generate_dataset(
    template: &SynthSpec,
    class_counts: [usize; 3],
    seed: u64,
) -> Result<Vec<(HyperCube, LabelRecord, BinaryMask)>> {
    let total: usize = class_counts.iter().sum();
    if total < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 recordings, requested {total}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(total);
    let mut index = 0usize;
    for (c, &count) in class_counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let (lo, hi) = t_interval_for_class(template.fruit, c)?;
        for _ in 0..count {
            let mut spec = template.clone();
            spec.ripeness_t = rng.gen_range(lo..hi);
            spec.seed = seed
                .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                .wrapping_add(index as u64);
            let (ry, rx) = template.semi_axes;
            spec.semi_axes = (
                ry * rng.gen_range(0.8..1.0),
                rx * rng.gen_range(0.8..1.0),
            );
            let (cube, mut record, mask) = generate_cube(&spec)?;
            record.recording_id = format!("synth_{index:05}");
            record.fruit_id = record.recording_id.clone();
            out.push((cube, record, mask));
            index += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::assign_firmness_class;
    use crate::preprocess::crop_to_fruit;

    fn axis() -> WavelengthAxis {
        WavelengthAxis::linspace(400.0, 1000.0, 224).unwrap()
    }

    #[test]
    fn same_seed_is_identical() {
        let spec = SynthSpec {
            noise_sigma: 0.02,
            ..SynthSpec::default_with(axis(), 0.4, 77)
        };
        let (a, ra, ma) = generate_cube(&spec).unwrap();
        let (b, rb, mb) = generate_cube(&spec).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(ma, mb);
        assert_eq!(ra.firmness_g_cm2, rb.firmness_g_cm2);
    }

    #[test]
    fn ripeness_only_moves_the_designated_windows() {
        let mut lo = SynthSpec::default_with(axis(), 0.0, 1);
        lo.noise_sigma = 0.0;
        let mut hi = lo.clone();
        hi.ripeness_t = 1.0;
        let (a, _, mask) = generate_cube(&lo).unwrap();
        let (b, _, _) = generate_cube(&hi).unwrap();
        let wl = a.axis.values().to_vec();
        for ((y, x), &m) in mask.indexed_iter() {
            if !m {
                continue;
            }
            for (k, &nm) in wl.iter().enumerate() {
                let in_dip = (nm - 680.0).abs() < 30.0;
                let in_nir = (nm - 900.0).abs() < 25.0;
                let delta = (a.data[[y, x, k]] - b.data[[y, x, k]]).abs();
                if !in_dip && !in_nir {
                    assert!(delta < 1e-9, "band {nm} nm moved by {delta}");
                }
            }
        }
    }

    #[test]
    fn nir_only_variant_freezes_the_dip() {
        let a = SynthSpec::nir_only_with(axis(), 0.0, 1);
        let mut b = a.clone();
        b.ripeness_t = 1.0;
        for nm in [650.0, 680.0, 700.0] {
            assert!((fruit_reflectance(&a, nm) - fruit_reflectance(&b, nm)).abs() < 1e-12);
        }
        assert!(
            (fruit_reflectance(&a, 900.0) - fruit_reflectance(&b, 900.0)).abs() > 0.1,
            "NIR signal missing"
        );
    }

    #[test]
    fn background_is_exactly_zero_and_mask_recoverable() {
        let mut spec = SynthSpec::default_with(axis(), 0.5, 9);
        spec.noise_sigma = 0.0;
        let (cube, _, mask) = generate_cube(&spec).unwrap();
        for ((y, x), &m) in mask.indexed_iter() {
            for k in 0..cube.bands() {
                if m {
                    assert!(cube.data[[y, x, k]] > 0.0);
                } else {
                    assert_eq!(cube.data[[y, x, k]], 0.0);
                }
            }
        }
        // cropping with the returned mask leaves background exactly zero
        let cropped = crop_to_fruit(&cube, &mask).unwrap();
        assert!(cropped.data.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn firmness_round_trips_through_the_class_tables() {
        let spec = SynthSpec::default_with(axis(), 0.5, 3);
        let data = generate_dataset(&spec, [10, 10, 10], 5).unwrap();
        assert_eq!(data.len(), 30);
        let mut counts = [0usize; 3];
        for (_, record, _) in &data {
            let c = assign_firmness_class(record.fruit, record.firmness_g_cm2.unwrap())
                .unwrap()
                .class_index;
            counts[c] += 1;
        }
        assert_eq!(counts, [10, 10, 10]);
    }

    #[test]
    fn dataset_generation_is_deterministic() {
        let spec = SynthSpec::default_with(axis(), 0.5, 3);
        let a = generate_dataset(&spec, [3, 3, 3], 21).unwrap();
        let b = generate_dataset(&spec, [3, 3, 3], 21).unwrap();
        for ((ca, ra, _), (cb, rb, _)) in a.iter().zip(&b) {
            assert_eq!(ca.data, cb.data);
            assert_eq!(ra.firmness_g_cm2, rb.firmness_g_cm2);
        }
    }

    #[test]
    fn degenerate_ellipse_is_rejected() {
        let mut spec = SynthSpec::default_with(axis(), 0.5, 0);
        spec.semi_axes = (0.2, 18.0);
        assert!(generate_cube(&spec).is_err());
        let mut spec = SynthSpec::default_with(axis(), 0.5, 0);
        spec.semi_axes = (40.0, 18.0);
        assert!(generate_cube(&spec).is_err());
    }

    #[test]
    fn kiwi_classes_are_reachable() {
        for c in 0..3 {
            let (lo, hi) = t_interval_for_class(Fruit::Kiwi, c).unwrap();
            let f = firmness_of_t(Fruit::Kiwi, (lo + hi) / 2.0);
            assert_eq!(
                assign_firmness_class(Fruit::Kiwi, f).unwrap().class_index,
                c
            );
        }
    }
}
