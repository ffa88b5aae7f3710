//! Domain types shared by every stage: RF frames, displacement fields,
//! strain maps, regions of interest, and the grid resampling used by the
//! coarse-to-fine solver.
//!
//! All grids are stored axial-major: the axial sample index `i` varies
//! fastest, so each RF line `j` is one contiguous slice. Window and kernel
//! loops scan along the axial direction and stay inside a single slice.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of sound in soft tissue used to derive the axial sample pitch.
pub const SOUND_SPEED_M_PER_S: f64 = 1540.0;

/// Axial distance between RF samples for a pulse-echo acquisition.
pub fn axial_spacing_mm(sampling_freq_hz: f64) -> f64 {
    SOUND_SPEED_M_PER_S / (2.0 * sampling_freq_hz) * 1e3
}

/// Dense 2D grid in axial-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid2<T> {
    data: Vec<T>,
    n_axial: usize,
    n_lateral: usize,
}

impl<T: Copy> Grid2<T> {
    pub fn filled(n_axial: usize, n_lateral: usize, value: T) -> Self {
        Self {
            data: vec![value; n_axial * n_lateral],
            n_axial,
            n_lateral,
        }
    }

    pub fn from_fn(n_axial: usize, n_lateral: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(n_axial * n_lateral);
        for j in 0..n_lateral {
            for i in 0..n_axial {
                data.push(f(i, j));
            }
        }
        Self {
            data,
            n_axial,
            n_lateral,
        }
    }

    /// Wraps an axial-major buffer (`data[j * n_axial + i]`).
    pub fn from_vec(n_axial: usize, n_lateral: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n_axial * n_lateral {
            return Err(Error::InvalidArgument(format!(
                "buffer holds {} values, grid {}x{} needs {}",
                data.len(),
                n_axial,
                n_lateral,
                n_axial * n_lateral
            )));
        }
        Ok(Self {
            data,
            n_axial,
            n_lateral,
        })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[j * self.n_axial + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: T) {
        self.data[j * self.n_axial + i] = value;
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Grid2<U> {
        Grid2 {
            data: self.data.iter().map(|&v| f(v)).collect(),
            n_axial: self.n_axial,
            n_lateral: self.n_lateral,
        }
    }
}

impl<T> Grid2<T> {
    #[inline]
    pub fn n_axial(&self) -> usize {
        self.n_axial
    }

    #[inline]
    pub fn n_lateral(&self) -> usize {
        self.n_lateral
    }

    /// `(n_axial, n_lateral)`
    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.n_axial, self.n_lateral)
    }

    /// One RF line: all axial samples of lateral position `j`.
    #[inline]
    pub fn line(&self, j: usize) -> &[T] {
        &self.data[j * self.n_axial..(j + 1) * self.n_axial]
    }

    #[inline]
    pub fn line_mut(&mut self, j: usize) -> &mut [T] {
        &mut self.data[j * self.n_axial..(j + 1) * self.n_axial]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }
}

/// A beamformed RF frame with its acquisition metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct RfFrame {
    samples: Grid2<f32>,
    sampling_freq_hz: f64,
    center_freq_hz: f64,
    axial_spacing_mm: f64,
    lateral_spacing_mm: f64,
}

impl RfFrame {
    /// Builds a frame whose axial pitch follows from the sampling frequency.
    pub fn new(
        samples: Grid2<f32>,
        sampling_freq_hz: f64,
        center_freq_hz: f64,
        lateral_spacing_mm: f64,
    ) -> Result<Self> {
        Self::with_spacing(
            samples,
            sampling_freq_hz,
            center_freq_hz,
            axial_spacing_mm(sampling_freq_hz),
            lateral_spacing_mm,
        )
    }

    /// Builds a frame with an explicit axial pitch (decimated or loaded frames).
    pub fn with_spacing(
        samples: Grid2<f32>,
        sampling_freq_hz: f64,
        center_freq_hz: f64,
        axial_spacing_mm: f64,
        lateral_spacing_mm: f64,
    ) -> Result<Self> {
        let (na, nl) = samples.shape();
        if na < 2 || nl < 2 {
            return Err(Error::InvalidArgument(format!(
                "frame must be at least 2x2, got {na}x{nl}"
            )));
        }
        if let Some(k) = samples.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite sample at flat index {k}"
            )));
        }
        for (name, v) in [
            ("sampling_freq_hz", sampling_freq_hz),
            ("center_freq_hz", center_freq_hz),
            ("axial_spacing_mm", axial_spacing_mm),
            ("lateral_spacing_mm", lateral_spacing_mm),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(Self {
            samples,
            sampling_freq_hz,
            center_freq_hz,
            axial_spacing_mm,
            lateral_spacing_mm,
        })
    }

    pub fn samples(&self) -> &Grid2<f32> {
        &self.samples
    }

    pub fn n_axial(&self) -> usize {
        self.samples.n_axial()
    }

    pub fn n_lateral(&self) -> usize {
        self.samples.n_lateral()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.samples.shape()
    }

    pub fn sampling_freq_hz(&self) -> f64 {
        self.sampling_freq_hz
    }

    pub fn center_freq_hz(&self) -> f64 {
        self.center_freq_hz
    }

    pub fn axial_spacing_mm(&self) -> f64 {
        self.axial_spacing_mm
    }

    pub fn lateral_spacing_mm(&self) -> f64 {
        self.lateral_spacing_mm
    }

    /// Same metadata, new sample values of identical shape.
    pub fn with_samples(&self, samples: Grid2<f32>) -> Result<Self> {
        debug_assert_eq!(samples.shape(), self.shape());
        Self::with_spacing(
            samples,
            self.sampling_freq_hz,
            self.center_freq_hz,
            self.axial_spacing_mm,
            self.lateral_spacing_mm,
        )
    }

    pub(crate) fn same_geometry(&self, other: &RfFrame) -> bool {
        self.shape() == other.shape()
            && self.sampling_freq_hz == other.sampling_freq_hz
            && self.center_freq_hz == other.center_freq_hz
            && self.axial_spacing_mm == other.axial_spacing_mm
            && self.lateral_spacing_mm == other.lateral_spacing_mm
    }
}

/// Dense displacement field in grid units: `axial` in samples, `lateral` in
/// lines. Cell `(i, j)` of the reference frame corresponds to position
/// `(i + axial, j + lateral)` of the moving frame.
///
/// Objective gradients reuse this type since they share its shape.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField {
    pub axial: Grid2<f64>,
    pub lateral: Grid2<f64>,
}

impl DisplacementField {
    pub fn zeros(n_axial: usize, n_lateral: usize) -> Self {
        Self {
            axial: Grid2::filled(n_axial, n_lateral, 0.0),
            lateral: Grid2::filled(n_axial, n_lateral, 0.0),
        }
    }

    pub fn new(axial: Grid2<f64>, lateral: Grid2<f64>) -> Result<Self> {
        if axial.shape() != lateral.shape() {
            return Err(Error::InvalidArgument(format!(
                "component shapes differ: {:?} vs {:?}",
                axial.shape(),
                lateral.shape()
            )));
        }
        let field = Self { axial, lateral };
        if !field.is_finite() {
            return Err(Error::InvalidArgument("displacement field has non-finite entries".into()));
        }
        Ok(field)
    }

    pub fn from_fn(
        n_axial: usize,
        n_lateral: usize,
        f: impl Fn(usize, usize) -> (f64, f64),
    ) -> Self {
        Self {
            axial: Grid2::from_fn(n_axial, n_lateral, |i, j| f(i, j).0),
            lateral: Grid2::from_fn(n_axial, n_lateral, |i, j| f(i, j).1),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.axial.shape()
    }

    pub fn is_finite(&self) -> bool {
        self.axial.as_slice().iter().all(|v| v.is_finite())
            && self.lateral.as_slice().iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.axial
            .as_slice()
            .iter()
            .chain(self.lateral.as_slice())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// `self + k * other`, componentwise.
    pub fn scaled_add(&self, k: f64, other: &DisplacementField) -> DisplacementField {
        let mut out = self.clone();
        for (a, b) in out.axial.as_mut_slice().iter_mut().zip(other.axial.as_slice()) {
            *a += k * b;
        }
        for (a, b) in out.lateral.as_mut_slice().iter_mut().zip(other.lateral.as_slice()) {
            *a += k * b;
        }
        out
    }

    pub fn scaled(&self, k: f64) -> DisplacementField {
        DisplacementField {
            axial: self.axial.map(|v| v * k),
            lateral: self.lateral.map(|v| v * k),
        }
    }
}

/// Axial strain image with the cells that had full estimator support.
#[derive(Clone, Debug, PartialEq)]
pub struct StrainMap {
    strain: Grid2<f64>,
    valid: Grid2<bool>,
}

/// Quasi-static strains never approach this magnitude.
pub const STRAIN_SANITY_BOUND: f64 = 0.5;

impl StrainMap {
    /// Masked-out cells are forced to the sentinel value 0.
    pub fn new(mut strain: Grid2<f64>, valid: Grid2<bool>) -> Result<Self> {
        if strain.shape() != valid.shape() {
            return Err(Error::InvalidArgument("strain and mask shapes differ".into()));
        }
        for (s, &v) in strain.as_mut_slice().iter_mut().zip(valid.as_slice()) {
            if !v {
                *s = 0.0;
            } else if !s.is_finite() {
                return Err(Error::InvalidArgument("non-finite strain on a valid cell".into()));
            }
        }
        Ok(Self { strain, valid })
    }

    pub fn strain(&self) -> &Grid2<f64> {
        &self.strain
    }

    pub fn valid(&self) -> &Grid2<bool> {
        &self.valid
    }

    pub fn shape(&self) -> (usize, usize) {
        self.strain.shape()
    }

    /// True when every valid cell is below [`STRAIN_SANITY_BOUND`].
    pub fn is_plausible(&self) -> bool {
        self.strain
            .as_slice()
            .iter()
            .zip(self.valid.as_slice())
            .all(|(s, &v)| !v || s.abs() < STRAIN_SANITY_BOUND)
    }

    /// Valid strain values inside `roi`, lines outer, samples inner.
    pub fn roi_values(&self, roi: &RoiSpec) -> Result<Vec<f64>> {
        roi.check_within(self.shape())?;
        let mut out = Vec::with_capacity(roi.area());
        for j in roi.j0..roi.j1 {
            for i in roi.i0..roi.i1 {
                if !self.valid.get(i, j) {
                    return Err(Error::DegenerateRoi(format!(
                        "ROI cell ({i}, {j}) lies outside the valid strain region"
                    )));
                }
                out.push(self.strain.get(i, j));
            }
        }
        Ok(out)
    }

    pub fn scaled(&self, k: f64) -> StrainMap {
        StrainMap {
            strain: self.strain.map(|v| v * k),
            valid: self.valid.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoiLabel {
    Target,
    Background,
}

/// Rectangular region `[i0, i1) x [j0, j1)` on the frame grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiSpec {
    pub i0: usize,
    pub i1: usize,
    pub j0: usize,
    pub j1: usize,
    pub label: RoiLabel,
}

/// Smallest ROI that still supports a variance estimate.
pub const MIN_ROI_AREA: usize = 16;

impl RoiSpec {
    pub fn new(i0: usize, i1: usize, j0: usize, j1: usize, label: RoiLabel) -> Result<Self> {
        if i0 >= i1 || j0 >= j1 {
            return Err(Error::InvalidArgument(format!(
                "empty ROI [{i0}, {i1}) x [{j0}, {j1})"
            )));
        }
        let roi = Self {
            i0,
            i1,
            j0,
            j1,
            label,
        };
        if roi.area() < MIN_ROI_AREA {
            return Err(Error::InvalidArgument(format!(
                "ROI area {} below minimum {MIN_ROI_AREA}",
                roi.area()
            )));
        }
        Ok(roi)
    }

    pub fn area(&self) -> usize {
        (self.i1 - self.i0) * (self.j1 - self.j0)
    }

    pub fn check_within(&self, (n_axial, n_lateral): (usize, usize)) -> Result<()> {
        if self.i0 >= self.i1 || self.j0 >= self.j1 || self.i1 > n_axial || self.j1 > n_lateral {
            return Err(Error::InvalidArgument(format!(
                "ROI [{}, {}) x [{}, {}) does not fit a {n_axial}x{n_lateral} grid",
                self.i0, self.i1, self.j0, self.j1
            )));
        }
        if self.area() < MIN_ROI_AREA {
            return Err(Error::DegenerateRoi(format!(
                "ROI area {} below minimum {MIN_ROI_AREA}",
                self.area()
            )));
        }
        Ok(())
    }
}

/// Block-mean decimation. Trailing partial blocks average the samples they
/// contain; pitches grow by the factors, other metadata is kept.
pub fn grid_downsample(frame: &RfFrame, factor_axial: usize, factor_lateral: usize) -> Result<RfFrame> {
    let (na, nl) = frame.shape();
    if factor_axial == 0 || factor_lateral == 0 || factor_axial > na || factor_lateral > nl {
        return Err(Error::InvalidArgument(format!(
            "downsample factors ({factor_axial}, {factor_lateral}) invalid for a {na}x{nl} frame"
        )));
    }
    let samples = if factor_axial == 1 && factor_lateral == 1 {
        frame.samples().clone()
    } else {
        block_mean(frame.samples(), factor_axial, factor_lateral)
    };
    RfFrame::with_spacing(
        samples,
        frame.sampling_freq_hz(),
        frame.center_freq_hz(),
        frame.axial_spacing_mm() * factor_axial as f64,
        frame.lateral_spacing_mm() * factor_lateral as f64,
    )
}

pub(crate) fn block_mean(src: &Grid2<f32>, fa: usize, fl: usize) -> Grid2<f32> {
    let (na, nl) = src.shape();
    let oa = na.div_ceil(fa);
    let ol = nl.div_ceil(fl);
    Grid2::from_fn(oa, ol, |i, j| {
        let (ia, ib) = (i * fa, ((i + 1) * fa).min(na));
        let (ja, jb) = (j * fl, ((j + 1) * fl).min(nl));
        let mut acc = 0.0f64;
        for jj in ja..jb {
            acc += src.line(jj)[ia..ib].iter().map(|&v| v as f64).sum::<f64>();
        }
        (acc / ((ib - ia) * (jb - ja)) as f64) as f32
    })
}

/// Bilinear upsampling of a displacement field to a finer grid. Values are
/// rescaled by the per-axis size ratio so the physical displacement is kept.
pub fn field_upsample(u: &DisplacementField, target: (usize, usize)) -> Result<DisplacementField> {
    let (sa, sl) = u.shape();
    let (ta, tl) = target;
    if ta < sa || tl < sl {
        return Err(Error::InvalidArgument(format!(
            "target {ta}x{tl} smaller than source {sa}x{sl}"
        )));
    }
    Ok(resample_field(u, target, ta as f64 / sa as f64, tl as f64 / sl as f64))
}

/// Resamples `u` onto `target`, where one source cell spans `scale_*` target
/// cells and cell centres are aligned. Edges extrapolate linearly.
pub(crate) fn resample_field(
    u: &DisplacementField,
    target: (usize, usize),
    scale_axial: f64,
    scale_lateral: f64,
) -> DisplacementField {
    let (sa, sl) = u.shape();
    let (ta, tl) = target;
    let axial_taps: Vec<(usize, f64)> = (0..ta).map(|i| linear_tap(i, scale_axial, sa)).collect();
    let lateral_taps: Vec<(usize, f64)> = (0..tl).map(|j| linear_tap(j, scale_lateral, sl)).collect();
    let interp = |g: &Grid2<f64>, k: f64| {
        Grid2::from_fn(ta, tl, |i, j| {
            let (i0, wa) = axial_taps[i];
            let (j0, wl) = lateral_taps[j];
            let i1 = (i0 + 1).min(sa - 1);
            let j1 = (j0 + 1).min(sl - 1);
            let top = (1.0 - wl) * g.get(i0, j0) + wl * g.get(i0, j1);
            let bottom = (1.0 - wl) * g.get(i1, j0) + wl * g.get(i1, j1);
            k * ((1.0 - wa) * top + wa * bottom)
        })
    };
    DisplacementField {
        axial: interp(&u.axial, scale_axial),
        lateral: interp(&u.lateral, scale_lateral),
    }
}

fn linear_tap(t: usize, scale: f64, n_src: usize) -> (usize, f64) {
    if n_src == 1 {
        return (0, 0.0);
    }
    let x = (t as f64 + 0.5) / scale - 0.5;
    let cell = (x.floor().max(0.0) as usize).min(n_src - 2);
    (cell, x - cell as f64)
}
