//! ENVI-style cube file I/O.
//!
//! A recording is a pair of files: a line-oriented `key = value` text header
//! at `<path>.hdr` and a flat little-endian binary payload at `<path>`.
//! Calibrated cubes are stored as 32-bit floats (data type 4), raw frames as
//! 16-bit unsigned counts (data type 12). All three classic interleaves are
//! accepted on load; the in-memory layout is always band-last.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;

use crate::cube::{HyperCube, RawFrame, WavelengthAxis};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interleave {
    /// Band sequential: `(band, line, sample)`.
    Bsq,
    /// Band interleaved by line: `(line, band, sample)`.
    Bil,
    /// Band interleaved by pixel: `(line, sample, band)`.
    Bip,
}

impl Interleave {
    fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bsq" => Ok(Self::Bsq),
            "bil" => Ok(Self::Bil),
            "bip" => Ok(Self::Bip),
            other => Err(Error::UnknownInterleave(other.into())),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Self::Bsq => "bsq",
            Self::Bil => "bil",
            Self::Bip => "bip",
        }
    }

    /// Flat payload offset of element `(line, sample, band)`.
    fn offset(self, h: usize, w: usize, b: usize, y: usize, x: usize, k: usize) -> usize {
        match self {
            Self::Bsq => (k * h + y) * w + x,
            Self::Bil => (y * b + k) * w + x,
            Self::Bip => (y * w + x) * b + k,
        }
    }

    fn _dims_used(self, h: usize, w: usize, b: usize) -> usize {
        h * w * b
    }
}

/// Either a calibrated reflectance cube or a raw count frame, matching the
/// on-disk data type.
#[derive(Debug, Clone)]
pub enum CubeFile {
    Reflectance(HyperCube),
    Raw(RawFrame),
}

impl CubeFile {
    pub fn into_cube(self) -> Result<HyperCube> {
        match self {
            Self::Reflectance(c) => Ok(c),
            Self::Raw(_) => Err(Error::InvalidArgument(
                "expected calibrated cube, found raw frame".into(),
            )),
        }
    }
}

fn header_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".hdr");
    PathBuf::from(s)
}

fn parse_header(text: &str) -> Result<HashMap<String, String>> {
    let mut map = HashMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with(';') || line.eq_ignore_ascii_case("envi") {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::MalformedHeader(format!("line without `key = value` form: `{line}`"))
        })?;
        map.insert(
            key.trim().to_ascii_lowercase(),
            value.trim().trim_matches(|c| c == '{' || c == '}').trim().to_string(),
        );
    }
    Ok(map)
}

fn get<'a>(map: &'a HashMap<String, String>, key: &str) -> Result<&'a str> {
    map.get(key)
        .map(|s| s.as_str())
        .ok_or_else(|| Error::MissingHeaderKey(key.into()))
}

fn get_usize(map: &HashMap<String, String>, key: &str) -> Result<usize> {
    get(map, key)?
        .parse()
        .map_err(|_| Error::MalformedHeader(format!("key `{key}` is not an integer")))
}

/// Load a cube/frame pair from `<path>` + `<path>.hdr`.
pub fn load_cube(path: &Path) -> Result<CubeFile> {
    let header = fs::read_to_string(header_path(path))?;
    let map = parse_header(&header)?;

    let w = get_usize(&map, "samples")?;
    let h = get_usize(&map, "lines")?;
    let b = get_usize(&map, "bands")?;
    let data_type = get_usize(&map, "data type")?;
    let interleave = Interleave::parse(get(&map, "interleave")?)?;
    let wavelengths: Vec<f64> = get(&map, "wavelength")?
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::MalformedHeader(format!("bad wavelength entry `{s}`")))
        })
        .collect::<Result<_>>()?;
    if wavelengths.len() != b {
        return Err(Error::MalformedHeader(format!(
            "header declares {b} bands but lists {} wavelengths",
            wavelengths.len()
        )));
    }
    let axis = WavelengthAxis::new(wavelengths)?;

    let payload = fs::read(path)?;
    let n = h * w * b;
    let elem = match data_type {
        4 => 4,
        12 => 2,
        other => {
            return Err(Error::MalformedHeader(format!(
                "unsupported data type {other} (expected 4 or 12)"
            )))
        }
    };
    if payload.len() != n * elem {
        return Err(Error::PayloadSize {
            expected: n * elem,
            found: payload.len(),
        });
    }

    let mut data = Array3::<f32>::zeros((h, w, b));
    for y in 0..h {
        for x in 0..w {
            for k in 0..b {
                let off = interleave.offset(h, w, b, y, x, k) * elem;
                data[[y, x, k]] = match data_type {
                    4 => f32::from_le_bytes(payload[off..off + 4].try_into().unwrap()),
                    _ => u16::from_le_bytes(payload[off..off + 2].try_into().unwrap()) as f32,
                };
            }
        }
    }

    match data_type {
        4 => Ok(CubeFile::Reflectance(HyperCube::new(data, axis)?)),
        _ => Ok(CubeFile::Raw(RawFrame::new(data, axis)?)),
    }
}

fn write_header(
    path: &Path,
    h: usize,
    w: usize,
    b: usize,
    data_type: usize,
    interleave: Interleave,
    axis: &WavelengthAxis,
) -> Result<()> {
    let wl = axis
        .values()
        .iter()
        .map(|v| format!("{v:.6}"))
        .collect::<Vec<_>>()
        .join(", ");
    let text = format!(
        "ENVI\nsamples = {w}\nlines = {h}\nbands = {b}\ndata type = {data_type}\n\
         interleave = {}\nbyte order = 0\nwavelength = {{ {wl} }}\n",
        interleave.name()
    );
    fs::write(header_path(path), text)?;
    Ok(())
}

/// Save a calibrated cube as 32-bit float with the given interleave.
pub fn save_cube_interleaved(cube: &HyperCube, path: &Path, interleave: Interleave) -> Result<()> {
    let (h, w, b) = (cube.height(), cube.width(), cube.bands());
    write_header(path, h, w, b, 4, interleave, &cube.axis)?;
    let mut payload = vec![0u8; h * w * b * 4];
    for y in 0..h {
        for x in 0..w {
            for k in 0..b {
                let off = interleave.offset(h, w, b, y, x, k) * 4;
                payload[off..off + 4].copy_from_slice(&cube.data[[y, x, k]].to_le_bytes());
            }
        }
    }
    fs::write(path, payload)?;
    Ok(())
}

/// Save a calibrated cube (band-sequential, the common ENVI default).
pub fn save_cube(cube: &HyperCube, path: &Path) -> Result<()> {
    save_cube_interleaved(cube, path, Interleave::Bsq)
}

/// Save a raw count frame as 16-bit unsigned, band-sequential.
pub fn save_raw(frame: &RawFrame, path: &Path) -> Result<()> {
    let (h, w, b) = (frame.height(), frame.width(), frame.bands());
    if frame.data.iter().any(|&v| v > u16::MAX as f32) {
        return Err(Error::InvalidArgument(
            "raw counts exceed the 16-bit range".into(),
        ));
    }
    write_header(path, h, w, b, 12, Interleave::Bsq, &frame.axis)?;
    let mut payload = vec![0u8; h * w * b * 2];
    for y in 0..h {
        for x in 0..w {
            for k in 0..b {
                let off = Interleave::Bsq.offset(h, w, b, y, x, k) * 2;
                let v = frame.data[[y, x, k]].round() as u16;
                payload[off..off + 2].copy_from_slice(&v.to_le_bytes());
            }
        }
    }
    fs::write(path, payload)?;
    Ok(())
}
