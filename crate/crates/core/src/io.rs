//! Frame files: a raw little-endian `f32` payload (`<name>.usef`) next to a
//! JSON header (`<name>.json`), plus 16-bit PGM export of strain maps.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, ParseError, Result};
use crate::grid::{DisplacementField, Grid2, RfFrame, StrainMap};

pub const MAGIC: &str = "USEF1";
pub const DTYPE: &str = "f32le";
pub const LAYOUT: &str = "axial_major";
pub const SIGN_CONVENTION: &str = "compression_positive";
pub const PAYLOAD_EXTENSION: &str = "usef";
pub const HEADER_EXTENSION: &str = "json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    Rf,
    DdfAxial,
    DdfLateral,
    Strain,
}

impl FrameKind {
    fn name(self) -> &'static str {
        match self {
            FrameKind::Rf => "rf",
            FrameKind::DdfAxial => "ddf_axial",
            FrameKind::DdfLateral => "ddf_lateral",
            FrameKind::Strain => "strain",
        }
    }
}

/// Acquisition metadata carried by every frame file.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub sampling_freq_hz: f64,
    pub center_freq_hz: f64,
    pub axial_spacing_mm: f64,
    pub lateral_spacing_mm: f64,
}

impl FrameMeta {
    pub fn of(frame: &RfFrame) -> Self {
        Self {
            sampling_freq_hz: frame.sampling_freq_hz(),
            center_freq_hz: frame.center_freq_hz(),
            axial_spacing_mm: frame.axial_spacing_mm(),
            lateral_spacing_mm: frame.lateral_spacing_mm(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameFileHeader {
    pub magic: String,
    pub dtype: String,
    pub layout: String,
    pub n_axial: usize,
    pub n_lateral: usize,
    pub sampling_freq_hz: f64,
    pub center_freq_hz: f64,
    pub axial_spacing_mm: f64,
    pub lateral_spacing_mm: f64,
    pub kind: FrameKind,
    pub sign_convention: String,
    /// Strain files only: half-open range of rows holding valid estimates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid_rows: Option<[usize; 2]>,
}

impl FrameFileHeader {
    pub fn new(kind: FrameKind, shape: (usize, usize), meta: &FrameMeta) -> Self {
        Self {
            magic: MAGIC.into(),
            dtype: DTYPE.into(),
            layout: LAYOUT.into(),
            n_axial: shape.0,
            n_lateral: shape.1,
            sampling_freq_hz: meta.sampling_freq_hz,
            center_freq_hz: meta.center_freq_hz,
            axial_spacing_mm: meta.axial_spacing_mm,
            lateral_spacing_mm: meta.lateral_spacing_mm,
            kind,
            sign_convention: SIGN_CONVENTION.into(),
            valid_rows: None,
        }
    }

    pub fn meta(&self) -> FrameMeta {
        FrameMeta {
            sampling_freq_hz: self.sampling_freq_hz,
            center_freq_hz: self.center_freq_hz,
            axial_spacing_mm: self.axial_spacing_mm,
            lateral_spacing_mm: self.lateral_spacing_mm,
        }
    }

    pub fn payload_bytes(&self) -> usize {
        4 * self.n_axial * self.n_lateral
    }

    fn check(&self) -> std::result::Result<(), ParseError> {
        if self.magic != MAGIC {
            return Err(ParseError::MagicMismatch {
                found: self.magic.clone(),
            });
        }
        for (field, found, want) in [
            ("dtype", &self.dtype, DTYPE),
            ("layout", &self.layout, LAYOUT),
            ("sign_convention", &self.sign_convention, SIGN_CONVENTION),
        ] {
            if found != want {
                return Err(ParseError::Unsupported {
                    field,
                    found: found.clone(),
                });
            }
        }
        if self.n_axial == 0 || self.n_lateral == 0 {
            return Err(ParseError::Invariant(format!(
                "n_axial and n_lateral must be positive, got {}x{}",
                self.n_axial, self.n_lateral
            )));
        }
        for (name, v) in [
            ("sampling_freq_hz", self.sampling_freq_hz),
            ("center_freq_hz", self.center_freq_hz),
            ("axial_spacing_mm", self.axial_spacing_mm),
            ("lateral_spacing_mm", self.lateral_spacing_mm),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ParseError::Invariant(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some([a, b]) = self.valid_rows {
            if self.kind != FrameKind::Strain || a > b || b > self.n_axial {
                return Err(ParseError::Invariant(format!(
                    "valid_rows [{a}, {b}) invalid for a {} file with {} rows",
                    self.kind.name(),
                    self.n_axial
                )));
            }
        }
        Ok(())
    }
}

/// `(payload, header)` paths for a frame, whatever extension `path` has.
pub fn frame_paths(path: &Path) -> (PathBuf, PathBuf) {
    (
        path.with_extension(PAYLOAD_EXTENSION),
        path.with_extension(HEADER_EXTENSION),
    )
}

fn write_raw(path: &Path, header: &FrameFileHeader, values: impl Iterator<Item = f32>) -> Result<()> {
    let (payload_path, header_path) = frame_paths(path);
    if let Some(dir) = payload_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut bytes = Vec::with_capacity(header.payload_bytes());
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    debug_assert_eq!(bytes.len(), header.payload_bytes());
    fs::write(&payload_path, bytes).map_err(|e| Error::io(&payload_path, e))?;
    let mut json = serde_json::to_string_pretty(header)?;
    json.push('\n');
    fs::write(&header_path, json).map_err(|e| Error::io(&header_path, e))?;
    Ok(())
}

/// Header and payload of any frame file.
pub fn read_raw(path: &Path) -> Result<(FrameFileHeader, Grid2<f32>)> {
    let (payload_path, header_path) = frame_paths(path);
    let text = fs::read_to_string(&header_path).map_err(|e| Error::io(&header_path, e))?;
    let header: FrameFileHeader = serde_json::from_str(&text)
        .map_err(|e| Error::parse(&header_path, ParseError::Header(e.to_string())))?;
    header.check().map_err(|k| Error::parse(&header_path, k))?;
    let bytes = fs::read(&payload_path).map_err(|e| Error::io(&payload_path, e))?;
    let expected = header.payload_bytes();
    if bytes.len() < expected {
        return Err(Error::parse(
            &payload_path,
            ParseError::Truncated {
                expected,
                actual: bytes.len(),
            },
        ));
    }
    if bytes.len() > expected {
        return Err(Error::parse(
            &payload_path,
            ParseError::Invariant(format!("payload holds {} bytes, header implies {expected}", bytes.len())),
        ));
    }
    let mut values = Vec::with_capacity(expected / 4);
    for (k, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        if !v.is_finite() {
            return Err(Error::parse(&payload_path, ParseError::NonFinite { offset: 4 * k }));
        }
        values.push(v);
    }
    let grid = Grid2::from_vec(header.n_axial, header.n_lateral, values)?;
    Ok((header, grid))
}

fn expect_kind(path: &Path, header: &FrameFileHeader, kind: FrameKind) -> Result<()> {
    if header.kind != kind {
        return Err(Error::parse(
            frame_paths(path).1,
            ParseError::WrongKind {
                expected: kind.name().into(),
                found: header.kind.name().into(),
            },
        ));
    }
    Ok(())
}

pub fn write_frame(path: &Path, frame: &RfFrame) -> Result<()> {
    let header = FrameFileHeader::new(FrameKind::Rf, frame.shape(), &FrameMeta::of(frame));
    write_raw(path, &header, frame.samples().as_slice().iter().copied())
}

pub fn read_frame(path: &Path) -> Result<RfFrame> {
    let (header, grid) = read_raw(path)?;
    expect_kind(path, &header, FrameKind::Rf)?;
    RfFrame::with_spacing(
        grid,
        header.sampling_freq_hz,
        header.center_freq_hz,
        header.axial_spacing_mm,
        header.lateral_spacing_mm,
    )
}

/// Any frame file, dispatched on its `kind`.
#[derive(Clone, Debug, PartialEq)]
pub enum FrameData {
    Rf(RfFrame),
    /// One displacement component; `kind` is `DdfAxial` or `DdfLateral`.
    Field { kind: FrameKind, values: Grid2<f64>, meta: FrameMeta },
    Strain { map: StrainMap, meta: FrameMeta },
}

pub fn read_any(path: &Path) -> Result<FrameData> {
    let (header, grid) = read_raw(path)?;
    let meta = header.meta();
    Ok(match header.kind {
        FrameKind::Rf => FrameData::Rf(RfFrame::with_spacing(
            grid,
            meta.sampling_freq_hz,
            meta.center_freq_hz,
            meta.axial_spacing_mm,
            meta.lateral_spacing_mm,
        )?),
        kind @ (FrameKind::DdfAxial | FrameKind::DdfLateral) => FrameData::Field {
            kind,
            values: grid.map(f64::from),
            meta,
        },
        FrameKind::Strain => FrameData::Strain {
            map: strain_from(&header, &grid)?,
            meta,
        },
    })
}

/// Writes `<base>_axial` and `<base>_lateral` frame files. Values are stored
/// as `f32`.
pub fn write_field(base: &Path, u: &DisplacementField, meta: &FrameMeta) -> Result<()> {
    let (a, l) = field_paths(base);
    let header = FrameFileHeader::new(FrameKind::DdfAxial, u.shape(), meta);
    write_raw(&a, &header, u.axial.as_slice().iter().map(|&v| v as f32))?;
    let header = FrameFileHeader {
        kind: FrameKind::DdfLateral,
        ..header
    };
    write_raw(&l, &header, u.lateral.as_slice().iter().map(|&v| v as f32))
}

pub fn read_field(base: &Path) -> Result<(DisplacementField, FrameMeta)> {
    let (a, l) = field_paths(base);
    let (ha, ga) = read_raw(&a)?;
    expect_kind(&a, &ha, FrameKind::DdfAxial)?;
    let (hl, gl) = read_raw(&l)?;
    expect_kind(&l, &hl, FrameKind::DdfLateral)?;
    if ga.shape() != gl.shape() {
        return Err(Error::parse(
            frame_paths(&l).1,
            ParseError::Invariant(format!(
                "lateral component {:?} does not match axial component {:?}",
                gl.shape(),
                ga.shape()
            )),
        ));
    }
    let u = DisplacementField::new(ga.map(f64::from), gl.map(f64::from))?;
    Ok((u, ha.meta()))
}

fn field_paths(base: &Path) -> (PathBuf, PathBuf) {
    let name = base.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    (
        base.with_file_name(format!("{name}_axial")),
        base.with_file_name(format!("{name}_lateral")),
    )
}

/// Row range covering every valid cell, if the mask is made of whole rows.
fn valid_row_range(valid: &Grid2<bool>) -> Result<[usize; 2]> {
    let (na, nl) = valid.shape();
    let row_ok = |i: usize| (0..nl).all(|j| valid.get(i, j));
    let row_any = |i: usize| (0..nl).any(|j| valid.get(i, j));
    let start = (0..na).find(|&i| row_any(i)).unwrap_or(na);
    let end = (0..na).rev().find(|&i| row_any(i)).map_or(start, |i| i + 1);
    if (start..end).any(|i| !row_ok(i)) {
        return Err(Error::InvalidArgument(
            "strain validity mask is not a contiguous band of whole rows".into(),
        ));
    }
    Ok([start, end])
}

pub fn write_strain(path: &Path, strain: &StrainMap, meta: &FrameMeta) -> Result<()> {
    let mut header = FrameFileHeader::new(FrameKind::Strain, strain.shape(), meta);
    header.valid_rows = Some(valid_row_range(strain.valid())?);
    write_raw(path, &header, strain.strain().as_slice().iter().map(|&v| v as f32))
}

fn strain_from(header: &FrameFileHeader, grid: &Grid2<f32>) -> Result<StrainMap> {
    let [a, b] = header.valid_rows.unwrap_or([0, header.n_axial]);
    let valid = Grid2::from_fn(header.n_axial, header.n_lateral, |i, _| (a..b).contains(&i));
    StrainMap::new(grid.map(f64::from), valid)
}

pub fn read_strain(path: &Path) -> Result<(StrainMap, FrameMeta)> {
    let (header, grid) = read_raw(path)?;
    expect_kind(path, &header, FrameKind::Strain)?;
    Ok((strain_from(&header, &grid)?, header.meta()))
}

/// Display window of a 16-bit PGM export; written to `<name>.pgm.json`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PgmWindow {
    pub min: f64,
    pub max: f64,
    pub max_value: u16,
}

impl PgmWindow {
    /// `[0, 2 * median]` of the valid strain; falls back to the valid range
    /// when the median is not positive.
    pub fn default_for(strain: &StrainMap) -> Self {
        let mut v: Vec<f64> = strain
            .strain()
            .as_slice()
            .iter()
            .zip(strain.valid().as_slice())
            .filter(|(_, &ok)| ok)
            .map(|(&x, _)| x)
            .collect();
        v.sort_by(f64::total_cmp);
        let (lo, hi) = if v.is_empty() {
            (0.0, 1.0)
        } else {
            let median = if v.len() % 2 == 1 {
                v[v.len() / 2]
            } else {
                0.5 * (v[v.len() / 2 - 1] + v[v.len() / 2])
            };
            if median > 0.0 {
                (0.0, 2.0 * median)
            } else {
                (v[0], v[v.len() - 1])
            }
        };
        Self {
            min: lo,
            max: if hi > lo { hi } else { lo + 1.0 },
            max_value: u16::MAX,
        }
    }

    /// Strain change per grey level.
    pub fn step(&self) -> f64 {
        (self.max - self.min) / self.max_value as f64
    }

    pub fn quantize(&self, x: f64) -> u16 {
        let t = ((x - self.min) / (self.max - self.min)).clamp(0.0, 1.0);
        (t * self.max_value as f64).round() as u16
    }

    pub fn dequantize(&self, q: u16) -> f64 {
        self.min + q as f64 * self.step()
    }
}

fn pgm_json_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".json");
    path.with_file_name(name)
}

/// Binary 16-bit PGM, one column per RF line, depth downwards. Invalid
/// cells are written as 0.
pub fn export_pgm(path: &Path, strain: &StrainMap, window: Option<PgmWindow>) -> Result<PgmWindow> {
    let window = window.unwrap_or_else(|| PgmWindow::default_for(strain));
    if !(window.max > window.min && window.min.is_finite() && window.max.is_finite()) {
        return Err(Error::InvalidArgument(format!("bad display window {window:?}")));
    }
    let (na, nl) = strain.shape();
    let mut bytes = format!("P5\n{nl} {na}\n{}\n", window.max_value).into_bytes();
    for i in 0..na {
        for j in 0..nl {
            let q = if strain.valid().get(i, j) {
                window.quantize(strain.strain().get(i, j))
            } else {
                0
            };
            bytes.extend_from_slice(&q.to_be_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let json_path = pgm_json_path(path);
    let mut json = serde_json::to_string_pretty(&window)?;
    json.push('\n');
    fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    Ok(window)
}

/// Reads a PGM written by [`export_pgm`] back into grey levels
/// (`n_axial x n_lateral`) and its window.
pub fn read_pgm(path: &Path) -> Result<(Grid2<u16>, PgmWindow)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::parse(path, ParseError::Header(m.into()));
    // Header: magic, width, height, maxval separated by single whitespace.
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("incomplete PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(bad("not a binary PGM"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("non-numeric PGM header field"));
    let (nl, na, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval < 256 {
        return Err(bad("expected a 16-bit PGM"));
    }
    let expected = 2 * na * nl;
    let actual = bytes.len().saturating_sub(pos);
    if actual != expected {
        return Err(Error::parse(path, ParseError::Truncated { expected, actual }));
    }
    let mut grid = Grid2::filled(na, nl, 0u16);
    for (k, chunk) in bytes[pos..].chunks_exact(2).enumerate() {
        grid.set(k / nl, k % nl, u16::from_be_bytes([chunk[0], chunk[1]]));
    }
    let json_path = pgm_json_path(path);
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let window = serde_json::from_str(&text).map_err(|e| Error::parse(&json_path, ParseError::Header(e.to_string())))?;
    Ok((grid, window))
}
