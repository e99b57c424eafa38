//! Bilinear spatial resampling of hyperspectral cubes.

use ndarray::Array3;

use crate::cube::HyperCube;
use crate::error::{Error, Result};

/// Resize a cube to `out_h` x `out_w` with bilinear interpolation applied
/// independently to every band.
///
/// Sample positions follow the pixel-centers convention:
/// `src = (dst + 0.5) * in / out - 0.5`, clamped to the image. Resizing to
/// the input size returns the data unchanged.
pub fn resize(cube: &HyperCube, out_h: usize, out_w: usize) -> Result<HyperCube> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument(format!(
            "target size {out_h}x{out_w} has a zero dimension"
        )));
    }
    let (in_h, in_w, bands) = cube.data.dim();
    if (in_h, in_w) == (out_h, out_w) {
        return HyperCube::new(cube.data.clone(), cube.axis.clone());
    }

    let coords = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        (0..out)
            .map(|i| {
                let src = ((i as f32 + 0.5) * inp as f32 / out as f32 - 0.5)
                    .clamp(0.0, (inp - 1) as f32);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, src - lo as f32)
            })
            .collect()
    };
    let ys = coords(out_h, in_h);
    let xs = coords(out_w, in_w);

    let mut out = Array3::<f32>::zeros((out_h, out_w, bands));
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            for k in 0..bands {
                let top = cube.data[[y0, x0, k]] * (1.0 - fx) + cube.data[[y0, x1, k]] * fx;
                let bot = cube.data[[y1, x0, k]] * (1.0 - fx) + cube.data[[y1, x1, k]] * fx;
                out[[oy, ox, k]] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    HyperCube::new(out, cube.axis.clone())
}
