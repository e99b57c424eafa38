//! Physically motivated RGB rendering of reflectance cubes via the CIE 1931
//! standard observer.

use nalgebra::Matrix3;
use ndarray::Array3;

use crate::cube::HyperCube;
use crate::error::{Error, Result};

/// Interpolated color matching functions, tabulated at 5 nm from 380-740 nm.
const CMF_TABLE: &str = include_str!("../../assets/cie1931_2deg_5nm.csv");

/// RGB render of a cube, values in `[0, 1]`, shape `(h, w, 3)`.
pub struct RgbImage {
    pub pixels: Array3<f32>,
}

fn cmf_rows() -> Vec<(f64, f64, f64, f64)> {
    CMF_TABLE
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let mut it = l.split(',').map(|v| v.trim().parse::<f64>().unwrap());
            (
                it.next().unwrap(),
                it.next().unwrap(),
                it.next().unwrap(),
                it.next().unwrap(),
            )
        })
        .collect()
}

fn cmf_at(rows: &[(f64, f64, f64, f64)], nm: f64) -> (f64, f64, f64) {
    if nm <= rows[0].0 {
        return (rows[0].1, rows[0].2, rows[0].3);
    }
    if nm >= rows[rows.len() - 1].0 {
        let r = rows[rows.len() - 1];
        return (r.1, r.2, r.3);
    }
    let i = rows.partition_point(|r| r.0 <= nm) - 1;
    let (a, b) = (rows[i], rows[i + 1]);
    let t = (nm - a.0) / (b.0 - a.0);
    (
        a.1 + t * (b.1 - a.1),
        a.2 + t * (b.2 - a.2),
        a.3 + t * (b.3 - a.3),
    )
}

/// XYZ -> linear RGB matrix built from the sRGB primaries with an
/// equal-energy white point, so a spectrally flat reflectance maps to a
/// neutral gray.
fn xyz_to_rgb_matrix() -> Matrix3<f64> {
    // sRGB primary chromaticities
    let prim = [(0.64, 0.33), (0.30, 0.60), (0.15, 0.06)];
    let cols: Vec<[f64; 3]> = prim
        .iter()
        .map(|&(x, y)| [x / y, 1.0, (1.0 - x - y) / y])
        .collect();
    let m = Matrix3::from_columns(&[
        nalgebra::Vector3::from_column_slice(&cols[0]),
        nalgebra::Vector3::from_column_slice(&cols[1]),
        nalgebra::Vector3::from_column_slice(&cols[2]),
    ]);
    // scale columns so the primaries sum to the equal-energy white (1,1,1)
    let white = nalgebra::Vector3::new(1.0, 1.0, 1.0);
    let s = m.try_inverse().expect("primary matrix is invertible") * white;
    let rgb_to_xyz = Matrix3::from_columns(&[
        m.column(0) * s[0],
        m.column(1) * s[1],
        m.column(2) * s[2],
    ]);
    rgb_to_xyz
        .try_inverse()
        .expect("RGB-to-XYZ matrix is invertible")
}

/// Tristimulus integration of each pixel spectrum over the visible overlap
/// of the cube's wavelength axis, normalized so a flat unit reflectance
/// yields Y = 1. Errors when the axis has fewer than two bands inside the
/// 380-740 nm observer range.
pub fn to_xyz(cube: &HyperCube) -> Result<Array3<f32>> {
    let rows = cmf_rows();
    let (vis_lo, vis_hi) = (rows[0].0, rows[rows.len() - 1].0);
    let wl = cube.axis.values();
    let in_range: Vec<usize> = (0..wl.len())
        .filter(|&i| wl[i] >= vis_lo && wl[i] <= vis_hi)
        .collect();
    if in_range.len() < 2 {
        let (lo, hi) = cube.axis.range();
        return Err(Error::NoVisibleBand { low: lo, high: hi });
    }

    // trapezoid weights over the visible sub-axis
    let n = in_range.len();
    let mut weights = vec![[0.0f64; 3]; n];
    let mut y_norm = 0.0f64;
    for (j, &i) in in_range.iter().enumerate() {
        let nm = wl[i];
        let dw = match j {
            0 => (wl[in_range[1]] - wl[in_range[0]]) / 2.0,
            _ if j == n - 1 => (wl[in_range[n - 1]] - wl[in_range[n - 2]]) / 2.0,
            _ => (wl[in_range[j + 1]] - wl[in_range[j - 1]]) / 2.0,
        };
        let (xb, yb, zb) = cmf_at(&rows, nm);
        weights[j] = [xb * dw, yb * dw, zb * dw];
        y_norm += yb * dw;
    }
    if y_norm <= 0.0 {
        let (lo, hi) = cube.axis.range();
        return Err(Error::NoVisibleBand { low: lo, high: hi });
    }

    let (h, w, _) = cube.data.dim();
    let mut xyz = Array3::<f32>::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f64; 3];
            for (j, &i) in in_range.iter().enumerate() {
                let r = cube.data[[y, x, i]] as f64;
                acc[0] += r * weights[j][0];
                acc[1] += r * weights[j][1];
                acc[2] += r * weights[j][2];
            }
            for c in 0..3 {
                xyz[[y, x, c]] = (acc[c] / y_norm) as f32;
            }
        }
    }
    Ok(xyz)
}

/// Render a reflectance cube to RGB: tristimulus integration, the
/// equal-energy XYZ->RGB transform, negative clipping, then normalization by
/// the image maximum.
pub fn to_rgb(cube: &HyperCube) -> Result<RgbImage> {
    let xyz = to_xyz(cube)?;
    let m = xyz_to_rgb_matrix();
    let (h, w, _) = xyz.dim();
    let mut px = Array3::<f32>::zeros((h, w, 3));
    let mut max = 0.0f32;
    for y in 0..h {
        for x in 0..w {
            let v = nalgebra::Vector3::new(
                xyz[[y, x, 0]] as f64,
                xyz[[y, x, 1]] as f64,
                xyz[[y, x, 2]] as f64,
            );
            let rgb = m * v;
            for c in 0..3 {
                let val = (rgb[c].max(0.0)) as f32;
                px[[y, x, c]] = val;
                max = max.max(val);
            }
        }
    }
    if max > 0.0 {
        px.mapv_inplace(|v| v / max);
    }
    Ok(RgbImage { pixels: px })
}
