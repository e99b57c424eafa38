//! Integrated-gradients attribution with spatial and spectral
//! marginalizations and image/CSV exports.

use std::path::Path;

use ndarray::{Array2, Array3, Array4};

use crate::cube::HyperCube;
use crate::error::{Error, Result};
use crate::models::ClassifierModel;
use crate::train::cube_to_input;

/// Signed attributions for one (input, class) pair.
#[derive(Debug, Clone)]
pub struct AttributionResult {
    /// H×W×B, same layout as the input cube
    pub values: Array3<f64>,
    pub wavelengths: Vec<f64>,
    pub target_class: usize,
    pub baseline: String,
    pub steps: usize,
    /// |Σ attributions − (F_c(x) − F_c(x'))|
    pub completeness_gap: f64,
}

/// Per-band profile paired with the wavelength axis.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SpectralProfile {
    pub wavelengths_nm: Vec<f64>,
    pub signed: Vec<f64>,
    pub absolute: Vec<f64>,
}

fn target_score(model: &mut ClassifierModel, x: &Array4<f32>, class: usize) -> f64 {
    model.forward_logits(x, false)[[0, class]] as f64
}

/// Integrated gradients of the pre-softmax score for `target_class`, using
/// two-point Gauss-Legendre quadrature over `m` path steps from `baseline`
/// (default: the all-zero cube) to `cube`.
pub fn integrated_gradients(
    model: &mut ClassifierModel,
    cube: &HyperCube,
    target_class: usize,
    baseline: Option<&HyperCube>,
    m: usize,
) -> Result<AttributionResult> {
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one step".into()));
    }
    if target_class >= 3 {
        return Err(Error::InvalidArgument(format!(
            "target class {target_class} out of range"
        )));
    }
    let (h, w, b) = cube.data.dim();
    let x = cube_to_input(cube);
    let (x_base, baseline_desc) = match baseline {
        Some(bl) => {
            if bl.data.dim() != cube.data.dim() {
                return Err(Error::ShapeMismatch(format!(
                    "baseline {:?} does not match input {:?}",
                    bl.data.dim(),
                    cube.data.dim()
                )));
            }
            (cube_to_input(bl), "custom".to_string())
        }
        None => (Array3::<f32>::zeros((b, h, w)), "zero".to_string()),
    };
    let diff = &x - &x_base;

    // two-point Gauss-Legendre nodes per step, weight 1/2 each
    let gl_offset = 0.5 / 3.0f64.sqrt();
    let alphas: Vec<f32> = (0..m)
        .flat_map(|s| {
            let mid = s as f64 + 0.5;
            [
                ((mid - gl_offset) / m as f64) as f32,
                ((mid + gl_offset) / m as f64) as f32,
            ]
        })
        .collect();

    // accumulate path gradients in f64, evaluating nodes in small batches
    let mut grad_sum = Array3::<f64>::zeros((b, h, w));
    let chunk = 4usize;
    let mut node = 0usize;
    while node < alphas.len() {
        let n = chunk.min(alphas.len() - node);
        let mut batch = Array4::<f32>::zeros((n, b, h, w));
        for i in 0..n {
            let alpha = alphas[node + i];
            for c in 0..b {
                for yy in 0..h {
                    for xx in 0..w {
                        batch[[i, c, yy, xx]] = x_base[[c, yy, xx]] + alpha * diff[[c, yy, xx]];
                    }
                }
            }
        }
        use crate::nn::Layer;
        let out = model.net.forward(&batch, false);
        let mut seed = Array4::<f32>::zeros(out.raw_dim());
        for i in 0..n {
            seed[[i, target_class, 0, 0]] = 1.0;
        }
        let gx = model.net.backward(&seed);
        for i in 0..n {
            for c in 0..b {
                for yy in 0..h {
                    for xx in 0..w {
                        grad_sum[[c, yy, xx]] += 0.5 * gx[[i, c, yy, xx]] as f64;
                    }
                }
            }
        }
        node += n;
    }

    let mut values = Array3::<f64>::zeros((h, w, b));
    let mut total = 0.0f64;
    for c in 0..b {
        for yy in 0..h {
            for xx in 0..w {
                let v = diff[[c, yy, xx]] as f64 * grad_sum[[c, yy, xx]] / m as f64;
                values[[yy, xx, c]] = v;
                total += v;
            }
        }
    }

    let fx = target_score(model, &x.clone().insert_axis(ndarray::Axis(0)), target_class);
    let fb = target_score(
        model,
        &x_base.clone().insert_axis(ndarray::Axis(0)),
        target_class,
    );
    Ok(AttributionResult {
        values,
        wavelengths: cube.axis.values().to_vec(),
        target_class,
        baseline: baseline_desc,
        steps: m,
        completeness_gap: (total - (fx - fb)).abs(),
    })
}

/// Per-pixel sums over bands: (signed, absolute).
pub fn spatial_impact(attr: &AttributionResult) -> (Array2<f64>, Array2<f64>) {
    let (h, w, b) = attr.values.dim();
    let mut signed = Array2::<f64>::zeros((h, w));
    let mut absolute = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            for k in 0..b {
                let v = attr.values[[y, x, k]];
                signed[[y, x]] += v;
                absolute[[y, x]] += v.abs();
            }
        }
    }
    (signed, absolute)
}

/// Per-band sums over pixels, paired with the wavelength axis.
pub fn spectral_impact(attr: &AttributionResult) -> SpectralProfile {
    let (h, w, b) = attr.values.dim();
    let mut signed = vec![0.0f64; b];
    let mut absolute = vec![0.0f64; b];
    for y in 0..h {
        for x in 0..w {
            for k in 0..b {
                let v = attr.values[[y, x, k]];
                signed[k] += v;
                absolute[k] += v.abs();
            }
        }
    }
    SpectralProfile {
        wavelengths_nm: attr.wavelengths.clone(),
        signed,
        absolute,
    }
}

/// Diverging blue–white–red heat map of a signed spatial impact.
pub fn save_spatial_png(map: &Array2<f64>, path: &Path) -> Result<()> {
    let (h, w) = map.dim();
    let peak = map.iter().fold(0.0f64, |m, &v| m.max(v.abs())).max(1e-12);
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let t = (map[[y, x]] / peak).clamp(-1.0, 1.0);
            let px = if t >= 0.0 {
                let s = (255.0 * (1.0 - t)) as u8;
                image::Rgb([255, s, s])
            } else {
                let s = (255.0 * (1.0 + t)) as u8;
                image::Rgb([s, s, 255])
            };
            img.put_pixel(x as u32, y as u32, px);
        }
    }
    img.save(path)
        .map_err(|e| Error::Io(std::io::Error::new(std::io::ErrorKind::Other, e)))
}

/// CSV rows `wavelength_nm,signed,absolute`.
pub fn save_spectral_csv(profile: &SpectralProfile, path: &Path) -> Result<()> {
    let mut out = String::from("wavelength_nm,signed,absolute\n");
    for i in 0..profile.wavelengths_nm.len() {
        out.push_str(&format!(
            "{:.3},{:.9e},{:.9e}\n",
            profile.wavelengths_nm[i], profile.signed[i], profile.absolute[i]
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Line plot of the absolute spectral profile.
pub fn save_spectral_plot_png(profile: &SpectralProfile, path: &Path) -> Result<()> {
    let (w, h) = (640u32, 360u32);
    let margin = 20i64;
    let mut img = image::RgbImage::from_pixel(w, h, image::Rgb([255, 255, 255]));
    let n = profile.absolute.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "need at least two bands to plot".into(),
        ));
    }
    let max = profile
        .absolute
        .iter()
        .cloned()
        .fold(f64::MIN, f64::max)
        .max(1e-12);
    let to_px = |i: usize, v: f64| -> (i64, i64) {
        let x = margin + ((w as i64 - 2 * margin) * i as i64) / (n as i64 - 1);
        let y = (h as i64 - margin) - (((h as i64 - 2 * margin) as f64) * (v / max)) as i64;
        (x, y)
    };
    // axes
    for x in margin..w as i64 - margin {
        img.put_pixel(x as u32, (h as i64 - margin) as u32, image::Rgb([0, 0, 0]));
    }
    for y in margin..h as i64 - margin {
        img.put_pixel(margin as u32, y as u32, image::Rgb([0, 0, 0]));
    }
    // polyline
    for i in 1..n {
        let (x0, y0) = to_px(i - 1, profile.absolute[i - 1]);
        let (x1, y1) = to_px(i, profile.absolute[i]);
        let steps = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
        for s in 0..=steps {
            let x = x0 + (x1 - x0) * s / steps;
            let y = y0 + (y1 - y0) * s / steps;
            if x >= 0 && y >= 0 && (x as u32) < w && (y as u32) < h {
                img.put_pixel(x as u32, y as u32, image::Rgb([200, 30, 30]));
            }
        }
    }
    img.save(path)
        .map_err(|e| Error::Io(std::io::Error::new(std::io::ErrorKind::Other, e)))
}
