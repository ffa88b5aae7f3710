//! Synthetic quasi-static compression phantoms with analytic ground truth.
//!
//! A rectangular speckle phantom holds one circular inclusion. Scatterers
//! are rendered into RF lines with a separable point-spread function
//! (Gaussian-windowed cosine axially, Gaussian laterally). The post frame is
//! rendered again from displaced scatterers, so speckle decorrelates as it
//! would in a real acquisition.
//!
//! Displacements come from a uniform-stress (Reuss-type) model: along each
//! RF line the local axial strain is inversely proportional to the local
//! Young's modulus, scaled so the line shortens by exactly the applied
//! compression. The probe sits at depth 0 and is the frame of reference, so
//! deeper tissue moves toward it (`uy <= 0`).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{axial_spacing_mm, DisplacementField, Grid2, RfFrame, RoiLabel, RoiSpec, StrainMap};

/// Width of the raised-cosine stiffness transition across the inclusion edge.
pub const BOUNDARY_BAND_MM: f64 = 1.0;
/// Lateral expansion per unit axial compression.
pub const LATERAL_EXPANSION_RATIO: f64 = 0.3;
/// Required clearance between the inclusion and the phantom walls.
pub const INCLUSION_MARGIN_MM: f64 = 2.0;
/// Inclusion moduli drawn from when none is given.
pub const INCLUSION_MODULI_KPA: [f64; 4] = [8.0, 15.0, 45.0, 75.0];
/// -6 dB fractional bandwidth of the transmit pulse.
pub const FRACTIONAL_BANDWIDTH: f64 = 0.6;
/// Full width at half maximum of the lateral beam, in line pitches.
pub const LATERAL_BEAM_FWHM_LINES: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Echogenicity {
    /// Inclusion scatterers carry zero amplitude.
    Anechoic,
    /// Inclusion scatterers are drawn like the background.
    BackgroundMatched,
}

/// Phantom description. `None` fields are drawn from the seeded generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub width_mm: f64,
    pub depth_mm: f64,
    pub n_scatterers: usize,
    /// `(x, y)`: lateral position and depth.
    pub inclusion_center_mm: Option<(f64, f64)>,
    pub inclusion_diameter_mm: Option<f64>,
    pub youngs_inclusion_kpa: Option<f64>,
    pub youngs_background_kpa: f64,
    pub applied_compression_pct: Option<f64>,
    pub inclusion_echogenicity: Echogenicity,
    /// Noise level in dB below the unit-power signal.
    pub noise_power_dbw: Option<f64>,
    /// Disables additive noise entirely.
    pub add_noise: bool,
    pub n_lines: usize,
    pub center_freq_hz: f64,
    pub sampling_freq_hz: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            width_mm: 38.0,
            depth_mm: 40.0,
            n_scatterers: 400_000,
            inclusion_center_mm: None,
            inclusion_diameter_mm: None,
            youngs_inclusion_kpa: None,
            youngs_background_kpa: 25.0,
            applied_compression_pct: None,
            inclusion_echogenicity: Echogenicity::BackgroundMatched,
            noise_power_dbw: None,
            add_noise: true,
            n_lines: 192,
            center_freq_hz: 7e6,
            sampling_freq_hz: 40e6,
            seed: 0,
        }
    }
}

/// Fully resolved phantom parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomParams {
    pub width_mm: f64,
    pub depth_mm: f64,
    pub n_scatterers: usize,
    pub inclusion_center_mm: (f64, f64),
    pub inclusion_diameter_mm: f64,
    pub youngs_inclusion_kpa: f64,
    pub youngs_background_kpa: f64,
    pub applied_compression_pct: f64,
    pub inclusion_echogenicity: Echogenicity,
    /// `None` when noise is disabled.
    pub noise_power_dbw: Option<f64>,
    pub n_lines: usize,
    pub center_freq_hz: f64,
    pub sampling_freq_hz: f64,
    pub seed: u64,
}

impl PhantomSpec {
    /// Draws every unset parameter and validates the result.
    pub fn resolve(&self) -> Result<PhantomParams> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let diameter = match self.inclusion_diameter_mm {
            Some(d) => d,
            None => rng.random_range(8.0..=12.0),
        };
        let r = diameter / 2.0;
        let center = match self.inclusion_center_mm {
            Some(c) => c,
            None => {
                let lo = r + INCLUSION_MARGIN_MM;
                let (hx, hy) = (self.width_mm - lo, self.depth_mm - lo);
                if hx < lo || hy < lo {
                    return Err(Error::InvalidArgument(format!(
                        "a {diameter} mm inclusion does not fit a {}x{} mm phantom with margin",
                        self.width_mm, self.depth_mm
                    )));
                }
                (rng.random_range(lo..=hx), rng.random_range(lo..=hy))
            }
        };
        let youngs_inclusion = match self.youngs_inclusion_kpa {
            Some(e) => e,
            None => INCLUSION_MODULI_KPA[rng.random_range(0..INCLUSION_MODULI_KPA.len())],
        };
        let compression = match self.applied_compression_pct {
            Some(c) => c,
            None => rng.random_range(0.5..=4.0),
        };
        let noise = match (self.add_noise, self.noise_power_dbw) {
            (false, _) => None,
            (true, Some(db)) => Some(db),
            (true, None) => Some(rng.random_range(5.0..=20.0)),
        };
        let params = PhantomParams {
            width_mm: self.width_mm,
            depth_mm: self.depth_mm,
            n_scatterers: self.n_scatterers,
            inclusion_center_mm: center,
            inclusion_diameter_mm: diameter,
            youngs_inclusion_kpa: youngs_inclusion,
            youngs_background_kpa: self.youngs_background_kpa,
            applied_compression_pct: compression,
            inclusion_echogenicity: self.inclusion_echogenicity,
            noise_power_dbw: noise,
            n_lines: self.n_lines,
            center_freq_hz: self.center_freq_hz,
            sampling_freq_hz: self.sampling_freq_hz,
            seed: self.seed,
        };
        params.validate()?;
        Ok(params)
    }
}

impl PhantomParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.width_mm > 0.0 && self.depth_mm > 0.0) {
            return bad(format!("phantom extent {}x{} mm must be positive", self.width_mm, self.depth_mm));
        }
        if !(self.inclusion_diameter_mm > 0.0) {
            return bad(format!("inclusion diameter {} must be positive", self.inclusion_diameter_mm));
        }
        let (cx, cy) = self.inclusion_center_mm;
        let r = self.inclusion_diameter_mm / 2.0;
        let m = INCLUSION_MARGIN_MM - 1e-9;
        if cx - r < m || cx + r > self.width_mm - m || cy - r < m || cy + r > self.depth_mm - m {
            return bad(format!(
                "inclusion at ({cx}, {cy}) mm with diameter {} mm violates the {INCLUSION_MARGIN_MM} mm margin",
                self.inclusion_diameter_mm
            ));
        }
        // Zero compression is accepted for null-displacement pairs.
        if !(self.applied_compression_pct >= 0.0 && self.applied_compression_pct < 10.0) {
            return bad(format!("compression {}% outside [0, 10)", self.applied_compression_pct));
        }
        if !(self.youngs_inclusion_kpa > 0.0 && self.youngs_background_kpa > 0.0) {
            return bad("Young's moduli must be positive".into());
        }
        if self.n_lines < 2 || self.n_scatterers == 0 {
            return bad("need at least 2 lines and 1 scatterer".into());
        }
        if !(self.sampling_freq_hz > 0.0 && self.center_freq_hz > 0.0 && self.center_freq_hz < self.sampling_freq_hz / 2.0)
        {
            return bad("centre frequency must lie below Nyquist".into());
        }
        if let Some(db) = self.noise_power_dbw {
            if !db.is_finite() {
                return bad("noise level must be finite".into());
            }
        }
        if self.n_axial() < 2 {
            return bad("phantom is shallower than two samples".into());
        }
        Ok(())
    }

    pub fn axial_spacing_mm(&self) -> f64 {
        axial_spacing_mm(self.sampling_freq_hz)
    }

    pub fn lateral_spacing_mm(&self) -> f64 {
        self.width_mm / self.n_lines as f64
    }

    /// Samples per line: the phantom depth at the axial pitch.
    pub fn n_axial(&self) -> usize {
        (self.depth_mm / self.axial_spacing_mm()).round() as usize
    }

    /// Depth of sample `i` (sample 0 at the probe face).
    pub fn sample_depth_mm(&self, i: usize) -> f64 {
        i as f64 * self.axial_spacing_mm()
    }

    /// Lateral position of line `j` (line centres).
    pub fn line_position_mm(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.lateral_spacing_mm()
    }

    fn compression_fraction(&self) -> f64 {
        self.applied_compression_pct / 100.0
    }

    fn oracle(&self) -> StrainModel {
        StrainModel::new(self)
    }
}

/// Compliance profile `s = E_bg / E` with the blended inclusion edge.
struct StrainModel {
    cx: f64,
    cy: f64,
    r_in: f64,
    r_out: f64,
    /// `E_bg / E_inc`
    ratio: f64,
    depth: f64,
    compression: f64,
}

// 16-point Gauss-Legendre nodes and weights on [-1, 1].
const GL_NODES: [f64; 8] = [
    0.095_012_509_837_637_44,
    0.281_603_550_779_258_9,
    0.458_016_777_657_227_4,
    0.617_876_244_402_643_8,
    0.755_404_408_355_003,
    0.865_631_202_387_831_8,
    0.944_575_023_073_232_6,
    0.989_400_934_991_649_9,
];
const GL_WEIGHTS: [f64; 8] = [
    0.189_450_610_455_068_5,
    0.182_603_415_044_923_6,
    0.169_156_519_395_002_5,
    0.149_595_988_816_576_7,
    0.124_628_971_255_533_9,
    0.095_158_511_682_492_8,
    0.062_253_523_938_647_9,
    0.027_152_459_411_754_1,
];
const BAND_SUBINTERVALS: usize = 4;

impl StrainModel {
    fn new(p: &PhantomParams) -> Self {
        let r = p.inclusion_diameter_mm / 2.0;
        let half = BOUNDARY_BAND_MM / 2.0;
        Self {
            cx: p.inclusion_center_mm.0,
            cy: p.inclusion_center_mm.1,
            r_in: (r - half).max(0.0),
            r_out: r + half,
            ratio: p.youngs_background_kpa / p.youngs_inclusion_kpa,
            depth: p.depth_mm,
            compression: p.compression_fraction(),
        }
    }

    /// Inclusion weight: 1 inside, 0 outside, raised cosine across the band.
    fn weight(&self, r: f64) -> f64 {
        if r <= self.r_in {
            1.0
        } else if r >= self.r_out {
            0.0
        } else {
            0.5 * (1.0 + (std::f64::consts::PI * (r - self.r_in) / (self.r_out - self.r_in)).cos())
        }
    }

    fn compliance(&self, x: f64, y: f64) -> f64 {
        let r = (x - self.cx).hypot(y - self.cy);
        1.0 + (self.ratio - 1.0) * self.weight(r)
    }

    /// `int_0^y s(x, t) dt`, split where the line enters or leaves the band.
    fn integral(&self, x: f64, y: f64) -> f64 {
        let dx = (x - self.cx).abs();
        if dx >= self.r_out || self.ratio == 1.0 {
            return y;
        }
        let mut cuts = vec![0.0, y];
        for r in [self.r_in, self.r_out] {
            if r > dx {
                let h = (r * r - dx * dx).sqrt();
                cuts.extend([self.cy - h, self.cy + h]);
            }
        }
        cuts.retain(|&t| (0.0..=y).contains(&t));
        cuts.sort_by(f64::total_cmp);
        let mut acc = 0.0;
        for seg in cuts.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            if b <= a {
                continue;
            }
            let rm = dx.hypot(0.5 * (a + b) - self.cy);
            acc += if rm <= self.r_in {
                self.ratio * (b - a)
            } else if rm >= self.r_out {
                b - a
            } else {
                self.band_quadrature(x, a, b)
            };
        }
        acc
    }

    fn band_quadrature(&self, x: f64, a: f64, b: f64) -> f64 {
        let h = (b - a) / BAND_SUBINTERVALS as f64;
        let mut acc = 0.0;
        for k in 0..BAND_SUBINTERVALS {
            let mid = a + (k as f64 + 0.5) * h;
            let half = 0.5 * h;
            for (node, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
                acc += w * half * (self.compliance(x, mid - half * node) + self.compliance(x, mid + half * node));
            }
        }
        acc
    }

    /// Per-line scale making the line shorten by the applied compression.
    fn line_scale(&self, x: f64) -> f64 {
        self.compression * self.depth / self.integral(x, self.depth)
    }

    fn at(&self, x: f64, y: f64) -> (f64, f64, f64) {
        let c = self.line_scale(x);
        let strain = c * self.compliance(x, y);
        let uy = -c * self.integral(x, y);
        let ux = LATERAL_EXPANSION_RATIO * (x - self.cx) * self.compression;
        (ux, uy, strain)
    }
}

/// Analytic displacement `(ux_mm, uy_mm)` and axial strain at a point of
/// the uncompressed phantom.
pub fn displacement_oracle(params: &PhantomParams, x_mm: f64, y_mm: f64) -> Result<(f64, f64, f64)> {
    if !(0.0..=params.width_mm).contains(&x_mm) || !(0.0..=params.depth_mm).contains(&y_mm) {
        return Err(Error::InvalidArgument(format!(
            "point ({x_mm}, {y_mm}) mm lies outside the {}x{} mm phantom",
            params.width_mm, params.depth_mm
        )));
    }
    Ok(params.oracle().at(x_mm, y_mm))
}

/// A simulated pre/post pair with its ground truth.
#[derive(Clone, Debug)]
pub struct PhantomTruth {
    pub params: PhantomParams,
    pub pre: RfFrame,
    pub post: RfFrame,
    pub u_true: DisplacementField,
    pub strain_true: StrainMap,
    pub roi_target: RoiSpec,
    pub roi_background: RoiSpec,
}

struct Psf {
    axial_sigma: f64,
    axial_radius: isize,
    cycles_per_sample: f64,
    lateral_sigma: f64,
    lateral_radius: isize,
}

impl Psf {
    fn new(p: &PhantomParams) -> Self {
        let sigma_f = FRACTIONAL_BANDWIDTH * p.center_freq_hz / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
        let axial_sigma = p.sampling_freq_hz / (2.0 * std::f64::consts::PI * sigma_f);
        let lateral_sigma = LATERAL_BEAM_FWHM_LINES / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
        Self {
            axial_sigma,
            axial_radius: (4.0 * axial_sigma).ceil() as isize,
            cycles_per_sample: p.center_freq_hz / p.sampling_freq_hz,
            lateral_sigma,
            lateral_radius: (3.5 * lateral_sigma).ceil() as isize,
        }
    }
}

/// Positions in mm, amplitudes unitless.
struct Scatterers {
    x: Vec<f64>,
    y: Vec<f64>,
    amp: Vec<f64>,
}

fn render(p: &PhantomParams, psf: &Psf, s: &Scatterers) -> Grid2<f64> {
    let (na, nl) = (p.n_axial(), p.n_lines);
    let (dy, dx) = (p.axial_spacing_mm(), p.lateral_spacing_mm());
    let mut out = Grid2::filled(na, nl, 0.0f64);
    let two_pi_f = 2.0 * std::f64::consts::PI * psf.cycles_per_sample;
    let mut axial = Vec::with_capacity(2 * psf.axial_radius as usize + 1);
    for k in 0..s.x.len() {
        if s.amp[k] == 0.0 {
            continue;
        }
        let ys = s.y[k] / dy;
        let xs = s.x[k] / dx - 0.5;
        let ic = ys.round() as isize;
        let jc = xs.round() as isize;
        let i_lo = (ic - psf.axial_radius).max(0);
        let i_hi = (ic + psf.axial_radius).min(na as isize - 1);
        if i_lo > i_hi {
            continue;
        }
        axial.clear();
        for i in i_lo..=i_hi {
            let d = i as f64 - ys;
            axial.push((-d * d / (2.0 * psf.axial_sigma * psf.axial_sigma)).exp() * (two_pi_f * d).cos());
        }
        for j in (jc - psf.lateral_radius).max(0)..=(jc + psf.lateral_radius).min(nl as isize - 1) {
            let d = j as f64 - xs;
            let w = s.amp[k] * (-d * d / (2.0 * psf.lateral_sigma * psf.lateral_sigma)).exp();
            let line = &mut out.line_mut(j as usize)[i_lo as usize..=i_hi as usize];
            for (o, a) in line.iter_mut().zip(&axial) {
                *o += w * a;
            }
        }
    }
    out
}

fn target_and_background(p: &PhantomParams) -> Result<(RoiSpec, RoiSpec)> {
    let (dy, dx) = (p.axial_spacing_mm(), p.lateral_spacing_mm());
    let (cx, cy) = p.inclusion_center_mm;
    let r = p.inclusion_diameter_mm / 2.0;
    // Square inscribed in the circle of 80% of the inclusion diameter.
    let h = 0.8 * r / std::f64::consts::SQRT_2;
    let i0 = ((cy - h) / dy).ceil().max(0.0) as usize;
    let i1 = (((cy + h) / dy).floor() as usize + 1).min(p.n_axial());
    let line_range = |a: f64, b: f64| {
        let j0 = (a / dx - 0.5).ceil().max(0.0) as usize;
        let j1 = ((b / dx - 0.5).floor().max(-1.0) + 1.0) as usize;
        (j0, j1.min(p.n_lines))
    };
    let (j0, j1) = line_range(cx - h, cx + h);
    let target = RoiSpec::new(i0, i1, j0, j1, RoiLabel::Target)?;

    // Same depth band, beside the inclusion with 1 mm clearance past the band.
    let gap = r + BOUNDARY_BAND_MM / 2.0 + 1.0;
    let right = line_range(cx + gap, (cx + gap + 2.0 * h).min(p.width_mm));
    let left = line_range((cx - gap - 2.0 * h).max(0.0), cx - gap);
    let width = |(a, b): (usize, usize)| b.saturating_sub(a);
    let (b0, b1) = if width(right) >= width(left) { right } else { left };
    let background = RoiSpec::new(i0, i1, b0, b1, RoiLabel::Background)?;
    Ok((target, background))
}

/// Simulates a pre/post RF pair and samples the ground truth on its grid.
pub fn generate_pair(spec: &PhantomSpec) -> Result<PhantomTruth> {
    let params = spec.resolve()?;
    generate_from_params(&params)
}

/// Same as [`generate_pair`] for already resolved parameters.
pub fn generate_from_params(params: &PhantomParams) -> Result<PhantomTruth> {
    params.validate()?;
    let p = params;
    let model = p.oracle();
    let psf = Psf::new(p);

    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    rng.set_stream(1);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let (cx, cy) = p.inclusion_center_mm;
    let r = p.inclusion_diameter_mm / 2.0;
    let mut pre_s = Scatterers {
        x: Vec::with_capacity(p.n_scatterers),
        y: Vec::with_capacity(p.n_scatterers),
        amp: Vec::with_capacity(p.n_scatterers),
    };
    for _ in 0..p.n_scatterers {
        let x = rng.random_range(0.0..p.width_mm);
        let y = rng.random_range(0.0..p.depth_mm);
        let mut a = unit.sample(&mut rng);
        if p.inclusion_echogenicity == Echogenicity::Anechoic && (x - cx).hypot(y - cy) < r {
            a = 0.0;
        }
        pre_s.x.push(x);
        pre_s.y.push(y);
        pre_s.amp.push(a);
    }
    let mut post_s = Scatterers {
        x: Vec::with_capacity(p.n_scatterers),
        y: Vec::with_capacity(p.n_scatterers),
        amp: pre_s.amp.clone(),
    };
    for k in 0..p.n_scatterers {
        let (ux, uy, _) = model.at(pre_s.x[k], pre_s.y[k]);
        post_s.x.push(pre_s.x[k] + ux);
        post_s.y.push(pre_s.y[k] + uy);
    }

    let pre_rf = render(p, &psf, &pre_s);
    let post_rf = render(p, &psf, &post_s);
    let power = pre_rf.as_slice().iter().map(|v| v * v).sum::<f64>() / pre_rf.as_slice().len() as f64;
    if !(power > 0.0) {
        return Err(Error::DegenerateInput("rendered frame has zero energy".into()));
    }
    let gain = 1.0 / power.sqrt();
    let noise_sd = p.noise_power_dbw.map(|db| 10f64.powf(-db / 20.0));
    let finish = |rf: Grid2<f64>, stream: u64| -> Result<RfFrame> {
        let mut g = rf.map(|v| v * gain);
        if let Some(sd) = noise_sd {
            let mut nrng = ChaCha8Rng::seed_from_u64(p.seed);
            nrng.set_stream(stream);
            let noise = Normal::new(0.0, sd).expect("finite noise sd");
            for v in g.as_mut_slice() {
                *v += noise.sample(&mut nrng);
            }
        }
        RfFrame::new(g.map(|v| v as f32), p.sampling_freq_hz, p.center_freq_hz, p.lateral_spacing_mm())
    };
    let pre = finish(pre_rf, 2)?;
    let post = finish(post_rf, 3)?;

    let (na, nl) = (p.n_axial(), p.n_lines);
    let (dy, dx) = (p.axial_spacing_mm(), p.lateral_spacing_mm());
    let mut ua = Grid2::filled(na, nl, 0.0);
    let mut ul = Grid2::filled(na, nl, 0.0);
    let mut st = Grid2::filled(na, nl, 0.0);
    for j in 0..nl {
        let x = p.line_position_mm(j);
        let c = model.line_scale(x);
        for i in 0..na {
            let y = p.sample_depth_mm(i);
            let uy = -c * model.integral(x, y);
            let ux = LATERAL_EXPANSION_RATIO * (x - cx) * model.compression;
            ua.set(i, j, uy / dy);
            ul.set(i, j, ux / dx);
            st.set(i, j, c * model.compliance(x, y));
        }
    }
    let u_true = DisplacementField::new(ua, ul)?;
    let strain_true = StrainMap::new(st, Grid2::filled(na, nl, true))?;
    let (roi_target, roi_background) = target_and_background(p)?;
    Ok(PhantomTruth {
        params: params.clone(),
        pre,
        post,
        u_true,
        strain_true,
        roi_target,
        roi_background,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(e_inc: f64, compression: f64) -> PhantomParams {
        PhantomSpec {
            inclusion_center_mm: Some((19.0, 20.0)),
            inclusion_diameter_mm: Some(10.0),
            youngs_inclusion_kpa: Some(e_inc),
            applied_compression_pct: Some(compression),
            add_noise: false,
            ..Default::default()
        }
        .resolve()
        .unwrap()
    }

    #[test]
    fn homogeneous_uniform_compression() {
        let p = params(25.0, 2.0);
        let (_, uy, e) = displacement_oracle(&p, 5.0, 40.0).unwrap();
        assert!((uy + 0.8).abs() < 1e-12);
        assert!((e - 0.02).abs() < 1e-15);
        let (_, uy, e) = displacement_oracle(&p, 19.0, 20.0).unwrap();
        assert!((uy + 0.4).abs() < 1e-12);
        assert!((e - 0.02).abs() < 1e-15);
    }

    #[test]
    fn probe_face_does_not_move() {
        let p = params(75.0, 3.0);
        for x in [0.0, 10.0, 19.0, 23.9, 38.0] {
            assert_eq!(displacement_oracle(&p, x, 0.0).unwrap().1, 0.0);
        }
    }

    #[test]
    fn stiff_inclusion_contrast_is_three_to_one() {
        let p = params(75.0, 2.0);
        let (_, _, inside) = displacement_oracle(&p, 19.0, 20.0).unwrap();
        let (_, _, above) = displacement_oracle(&p, 19.0, 5.0).unwrap();
        assert!((above / inside - 3.0).abs() < 1e-12);
        // Far-field lines are untouched by the normalisation.
        let (_, _, far) = displacement_oracle(&p, 2.0, 20.0).unwrap();
        assert!((far - 0.02).abs() < 1e-15);
        // Central line: background strain rises so the line still shortens by 0.8 mm.
        assert!(above > 0.02);
    }

    #[test]
    fn rejects_points_outside() {
        let p = params(75.0, 2.0);
        assert!(displacement_oracle(&p, -0.1, 3.0).is_err());
        assert!(displacement_oracle(&p, 3.0, 40.5).is_err());
    }

    // Independent composite Simpson integration of the strain profile.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut acc = f(a) + f(b);
        for k in 1..n {
            acc += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    }

    #[test]
    fn depth_integral_of_strain_matches_compression() {
        let p = params(75.0, 2.0);
        for x in [14.0, 14.6, 16.0, 19.0, 21.3, 23.9, 24.4] {
            let total = simpson(|y| displacement_oracle(&p, x, y).unwrap().2, 0.0, 40.0, 400_000);
            assert!((total / 0.8 - 1.0).abs() < 1e-6, "x {x}: {total}");
        }
    }

    #[test]
    fn axial_derivative_of_displacement_is_strain() {
        let p = params(8.0, 4.0);
        let h = 0.01;
        for (x, y) in [(19.0, 17.0), (22.0, 21.0), (15.5, 23.0), (19.0, 30.0), (5.0, 10.0), (23.6, 19.0)] {
            let up = displacement_oracle(&p, x, y + h).unwrap().1;
            let dn = displacement_oracle(&p, x, y - h).unwrap().1;
            let e = displacement_oracle(&p, x, y).unwrap().2;
            let fd = -(up - dn) / (2.0 * h);
            assert!((fd / e - 1.0).abs() < 1e-3, "({x},{y}): fd {fd} strain {e}");
        }
    }

    #[test]
    fn spec_validation() {
        let bad_margin = PhantomSpec {
            inclusion_center_mm: Some((6.0, 20.0)),
            inclusion_diameter_mm: Some(10.0),
            ..Default::default()
        };
        assert!(bad_margin.resolve().is_err());
        let bad_compression = PhantomSpec {
            applied_compression_pct: Some(12.0),
            ..Default::default()
        };
        assert!(bad_compression.resolve().is_err());
        let bad_modulus = PhantomSpec {
            youngs_inclusion_kpa: Some(0.0),
            ..Default::default()
        };
        assert!(bad_modulus.resolve().is_err());
    }

    #[test]
    fn random_draws_stay_in_protocol_ranges() {
        for seed in 0..50 {
            let p = PhantomSpec { seed, ..Default::default() }.resolve().unwrap();
            assert!((8.0..=12.0).contains(&p.inclusion_diameter_mm));
            assert!((0.5..=4.0).contains(&p.applied_compression_pct));
            assert!(INCLUSION_MODULI_KPA.contains(&p.youngs_inclusion_kpa));
            let db = p.noise_power_dbw.unwrap();
            assert!((5.0..=20.0).contains(&db));
        }
    }

    fn small_spec(seed: u64) -> PhantomSpec {
        PhantomSpec {
            width_mm: 10.0,
            depth_mm: 8.0,
            n_scatterers: 20_000,
            n_lines: 48,
            inclusion_center_mm: Some((5.0, 4.0)),
            inclusion_diameter_mm: Some(3.0),
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_pair(&small_spec(3)).unwrap();
        let b = generate_pair(&small_spec(3)).unwrap();
        assert_eq!(a.pre, b.pre);
        assert_eq!(a.post, b.post);
        assert_eq!(a.u_true, b.u_true);
        assert_eq!(a.strain_true, b.strain_true);
        let c = generate_pair(&small_spec(4)).unwrap();
        assert_ne!(a.pre, c.pre);
    }

    #[test]
    fn frames_are_unit_power_before_noise() {
        let spec = PhantomSpec { add_noise: false, ..small_spec(5) };
        let t = generate_pair(&spec).unwrap();
        let s = t.pre.samples().as_slice();
        let power = s.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / s.len() as f64;
        assert!((power - 1.0).abs() < 1e-5);
        assert_eq!(t.pre.n_axial(), (8.0f64 / 0.01925).round() as usize);
        assert_eq!(t.pre.axial_spacing_mm(), 0.01925);
    }

    #[test]
    fn zero_compression_pair_differs_only_by_noise() {
        let spec = PhantomSpec {
            applied_compression_pct: Some(0.0),
            add_noise: false,
            ..small_spec(6)
        };
        let t = generate_pair(&spec).unwrap();
        assert_eq!(t.pre, t.post);
        assert_eq!(t.u_true.max_abs(), 0.0);
    }

    #[test]
    fn truth_field_units() {
        let spec = PhantomSpec {
            applied_compression_pct: Some(2.0),
            youngs_inclusion_kpa: Some(25.0),
            add_noise: false,
            ..small_spec(7)
        };
        let t = generate_pair(&spec).unwrap();
        let p = &t.params;
        let i = p.n_axial() - 1;
        let expect = -0.02 * p.sample_depth_mm(i) / p.axial_spacing_mm();
        assert!((t.u_true.axial.get(i, 10) - expect).abs() < 1e-9);
        assert!(t.strain_true.strain().as_slice().iter().all(|&e| (e - 0.02).abs() < 1e-15));
    }

    #[test]
    fn rois_sit_inside_and_beside_the_inclusion() {
        let t = generate_pair(&small_spec(8)).unwrap();
        let p = &t.params;
        let (cx, cy) = p.inclusion_center_mm;
        let r = p.inclusion_diameter_mm / 2.0;
        let tr = t.roi_target;
        for (i, j) in [(tr.i0, tr.j0), (tr.i1 - 1, tr.j1 - 1), (tr.i0, tr.j1 - 1), (tr.i1 - 1, tr.j0)] {
            let d = (p.line_position_mm(j) - cx).hypot(p.sample_depth_mm(i) - cy);
            assert!(d < 0.8 * r + 1e-9);
        }
        let bg = t.roi_background;
        assert_eq!((bg.i0, bg.i1), (tr.i0, tr.i1));
        for j in bg.j0..bg.j1 {
            assert!((p.line_position_mm(j) - cx).abs() > r + BOUNDARY_BAND_MM / 2.0);
        }
    }
}
