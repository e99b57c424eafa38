//! Hyperspectral cube types and reference-based reflectance calibration.
//!
//! In-memory layout is always band-last: `(height, width, bands)`.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spectral axis in nanometers, strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WavelengthAxis {
    values: Vec<f64>,
}

impl WavelengthAxis {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("wavelength axis is empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "wavelength axis contains non-finite values".into(),
            ));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "wavelength axis must be strictly increasing".into(),
            ));
        }
        Ok(Self { values })
    }

    /// Evenly spaced axis over `[low, high]` with `bands` samples.
    pub fn linspace(low: f64, high: f64, bands: usize) -> Result<Self> {
        if bands == 0 || low >= high {
            return Err(Error::InvalidArgument("degenerate wavelength range".into()));
        }
        if bands == 1 {
            return Self::new(vec![low]);
        }
        let step = (high - low) / (bands - 1) as f64;
        Self::new((0..bands).map(|i| low + step * i as f64).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn range(&self) -> (f64, f64) {
        (self.values[0], *self.values.last().unwrap())
    }

    /// True when the two axes agree to `tol` nm everywhere.
    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| (a - b).abs() <= tol)
    }
}

/// Uncalibrated camera output, nonnegative intensity counts.
#[derive(Debug, Clone)]
pub struct RawFrame {
    pub data: Array3<f32>,
    pub axis: WavelengthAxis,
}

impl RawFrame {
    pub fn new(data: Array3<f32>, axis: WavelengthAxis) -> Result<Self> {
        if data.shape()[2] != axis.len() {
            return Err(Error::ShapeMismatch(format!(
                "frame has {} bands but axis has {}",
                data.shape()[2],
                axis.len()
            )));
        }
        if data.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "raw frame holds negative or non-finite counts".into(),
            ));
        }
        Ok(Self { data, axis })
    }

    pub fn height(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn bands(&self) -> usize {
        self.data.shape()[2]
    }
}

/// Calibrated reflectance volume with an optional per-pixel validity mask.
///
/// Reflectance is not clamped: specular highlights may exceed 1.
#[derive(Debug, Clone)]
pub struct HyperCube {
    pub data: Array3<f32>,
    pub axis: WavelengthAxis,
    pub mask: Option<Array2<bool>>,
}

impl HyperCube {
    pub fn new(data: Array3<f32>, axis: WavelengthAxis) -> Result<Self> {
        if data.shape()[2] != axis.len() {
            return Err(Error::ShapeMismatch(format!(
                "cube has {} bands but axis has {}",
                data.shape()[2],
                axis.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "cube holds non-finite reflectance".into(),
            ));
        }
        Ok(Self {
            data,
            axis,
            mask: None,
        })
    }

    pub fn height(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn bands(&self) -> usize {
        self.data.shape()[2]
    }

    /// Reflectance spectrum at pixel `(x, y)`; `x` is the column index.
    pub fn spectrum_at(&self, x: usize, y: usize) -> Result<Vec<f32>> {
        if y >= self.height() || x >= self.width() {
            return Err(Error::OutOfBounds {
                x,
                y,
                width: self.width(),
                height: self.height(),
            });
        }
        Ok(self.data.slice(ndarray::s![y, x, ..]).to_vec())
    }
}

/// Static description of a camera's spectral coverage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraProfile {
    pub name: String,
    pub band_count: usize,
    pub range_nm: (f64, f64),
}

impl CameraProfile {
    /// Specim FX 10: 224 channels, 400-1000 nm (VIS + lower NIR).
    pub fn specim_fx10() -> Self {
        Self {
            name: "specim_fx10".into(),
            band_count: 224,
            range_nm: (400.0, 1000.0),
        }
    }

    /// INNO-SPEC Redeye 1.7: 252 channels, 950-1700 nm.
    pub fn redeye_17() -> Self {
        Self {
            name: "redeye_17".into(),
            band_count: 252,
            range_nm: (950.0, 1700.0),
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "specim_fx10" => Some(Self::specim_fx10()),
            "redeye_17" => Some(Self::redeye_17()),
            _ => None,
        }
    }

    pub fn axis(&self) -> WavelengthAxis {
        WavelengthAxis::linspace(self.range_nm.0, self.range_nm.1, self.band_count)
            .expect("camera profile ranges are valid")
    }
}

/// Element-wise mean of reference frames (white/dark references are the
/// average of 10 measurements).
pub fn average_references(frames: &[RawFrame]) -> Result<RawFrame> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty reference frame list".into()))?;
    let shape = first.data.raw_dim();
    for (i, f) in frames.iter().enumerate().skip(1) {
        if f.data.raw_dim() != shape {
            return Err(Error::ShapeMismatch(format!(
                "reference frame {i} has shape {:?}, expected {:?}",
                f.data.shape(),
                shape
            )));
        }
        if !f.axis.approx_eq(&first.axis, 1e-9) {
            return Err(Error::AxisMismatch(format!(
                "reference frame {i} has a different wavelength axis"
            )));
        }
    }
    let mut acc = Array3::<f64>::zeros(shape);
    for f in frames {
        acc.zip_mut_with(&f.data, |a, &b| *a += b as f64);
    }
    let n = frames.len() as f64;
    let mean = acc.mapv(|v| (v / n) as f32);
    RawFrame::new(mean, first.axis.clone())
}

/// Flat-field correction: `reflectance = (raw - dark) / (white - dark)`.
///
/// Bands where `white == dark` produce 0 and flag the pixel invalid in the
/// mask instead of erroring, so dead bands never abort a batch run.
pub fn calibrate(raw: &RawFrame, white: &RawFrame, dark: &RawFrame) -> Result<HyperCube> {
    if raw.data.raw_dim() != white.data.raw_dim() || raw.data.raw_dim() != dark.data.raw_dim() {
        return Err(Error::ShapeMismatch(format!(
            "raw {:?} / white {:?} / dark {:?}",
            raw.data.shape(),
            white.data.shape(),
            dark.data.shape()
        )));
    }
    if !raw.axis.approx_eq(&white.axis, 1e-9) || !raw.axis.approx_eq(&dark.axis, 1e-9) {
        return Err(Error::AxisMismatch(
            "raw/white/dark wavelength axes differ".into(),
        ));
    }
    let (h, w, b) = (raw.height(), raw.width(), raw.bands());
    let mut out = Array3::<f32>::zeros((h, w, b));
    let mut mask = Array2::<bool>::from_elem((h, w), true);
    for y in 0..h {
        for x in 0..w {
            for k in 0..b {
                let d = dark.data[[y, x, k]] as f64;
                let wv = white.data[[y, x, k]] as f64;
                let denom = wv - d;
                if denom <= 0.0 {
                    out[[y, x, k]] = 0.0;
                    mask[[y, x]] = false;
                } else {
                    out[[y, x, k]] = ((raw.data[[y, x, k]] as f64 - d) / denom) as f32;
                }
            }
        }
    }
    let mut cube = HyperCube::new(out, raw.axis.clone())?;
    cube.mask = Some(mask);
    Ok(cube)
}
