//! Elastogram quality metrics and registration diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DisplacementField, Grid2, RfFrame, RoiSpec, StrainMap};
use crate::objective::{window_nccs, ObjectiveConfig, WindowGrid};
use crate::warp::warp_grid;

/// Standard deviations below this are treated as zero.
pub const SIGMA_FLOOR: f64 = 1e-12;

fn moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean over population standard deviation of the strain inside `roi`.
pub fn strain_snr(strain: &StrainMap, roi: &RoiSpec) -> Result<f64> {
    let (mean, sd) = moments(&strain.roi_values(roi)?);
    if sd < SIGMA_FLOOR {
        return Err(Error::DegenerateRoi(format!(
            "strain is constant ({mean}) inside {:?} ROI",
            roi.label
        )));
    }
    Ok(mean / sd)
}

/// `sqrt(2 (mu_b - mu_t)^2 / (sigma_b^2 + sigma_t^2))`.
pub fn strain_cnr(strain: &StrainMap, target: &RoiSpec, background: &RoiSpec) -> Result<f64> {
    let (mt, st) = moments(&strain.roi_values(target)?);
    let (mb, sb) = moments(&strain.roi_values(background)?);
    let noise = sb * sb + st * st;
    if mb == mt {
        return Ok(0.0);
    }
    if sb < SIGMA_FLOOR && st < SIGMA_FLOOR {
        return Err(Error::DegenerateRoi(format!(
            "both ROIs are constant ({mt} vs {mb}); contrast-to-noise is unbounded"
        )));
    }
    Ok((2.0 * (mb - mt) * (mb - mt) / noise).sqrt())
}

/// Window-lattice map of NCC values; `None` marks skipped windows.
#[derive(Clone, Debug, PartialEq)]
pub struct LnccMap {
    pub grid: WindowGrid,
    /// Axial index fastest, like [`Grid2`].
    pub values: Vec<Option<f64>>,
}

impl LnccMap {
    pub fn get(&self, ka: usize, kl: usize) -> Option<f64> {
        self.values[kl * self.grid.count_axial + ka]
    }

    /// Dense grid with skipped windows as NaN.
    pub fn to_grid(&self) -> Grid2<f64> {
        Grid2::from_fn(self.grid.count_axial, self.grid.count_lateral, |a, l| {
            self.get(a, l).unwrap_or(f64::NAN)
        })
    }
}

/// Per-window NCC between `pre` and `post` warped by `u`, plus their mean.
pub fn lncc_quality(
    pre: &RfFrame,
    post: &RfFrame,
    u: &DisplacementField,
    cfg: &ObjectiveConfig,
) -> Result<(LnccMap, f64)> {
    if pre.shape() != post.shape() || u.shape() != pre.shape() {
        return Err(Error::InvalidArgument(format!(
            "shape mismatch: pre {:?}, post {:?}, field {:?}",
            pre.shape(),
            post.shape(),
            u.shape()
        )));
    }
    let warped = warp_grid(post.samples(), u, cfg.parallel).result;
    let (grid, values) = window_nccs(pre.samples(), &warped, cfg)?;
    let valid: Vec<f64> = values.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(Error::DegenerateInput(
            "no window is fully in bounds with non-negligible variance".into(),
        ));
    }
    let mean = valid.iter().sum::<f64>() / valid.len() as f64;
    Ok((LnccMap { grid, values }, mean))
}

/// Mean absolute difference over all cells and both components, in samples
/// (axial) and lines (lateral).
pub fn displacement_mae(u: &DisplacementField, u_true: &DisplacementField) -> Result<f64> {
    if u.shape() != u_true.shape() {
        return Err(Error::InvalidArgument(format!(
            "field shapes differ: {:?} vs {:?}",
            u.shape(),
            u_true.shape()
        )));
    }
    let sum: f64 = u
        .axial
        .as_slice()
        .iter()
        .zip(u_true.axial.as_slice())
        .chain(u.lateral.as_slice().iter().zip(u_true.lateral.as_slice()))
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(sum / (2 * u.axial.as_slice().len()) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub snr: f64,
    pub cnr: f64,
    pub lncc_mean: f64,
    pub displacement_mae_samples: Option<f64>,
    pub roi_target: RoiSpec,
    pub roi_background: RoiSpec,
    pub config_echo: ObjectiveConfig,
}

impl MetricsReport {
    /// Column names of [`MetricsReport::csv_row`].
    pub const CSV_HEADER: &'static str =
        "snr,cnr,lncc_mean,mae,target_i0,target_i1,target_j0,target_j1,background_i0,background_i1,background_j0,background_j1";

    /// Strain SNR is taken in the background ROI.
    pub fn compute(
        strain: &StrainMap,
        pre: &RfFrame,
        post: &RfFrame,
        u: &DisplacementField,
        u_true: Option<&DisplacementField>,
        target: RoiSpec,
        background: RoiSpec,
        cfg: &ObjectiveConfig,
    ) -> Result<Self> {
        let report = Self {
            snr: strain_snr(strain, &background)?,
            cnr: strain_cnr(strain, &target, &background)?,
            lncc_mean: lncc_quality(pre, post, u, cfg)?.1,
            displacement_mae_samples: u_true.map(|t| displacement_mae(u, t)).transpose()?,
            roi_target: target,
            roi_background: background,
            config_echo: cfg.clone(),
        };
        report.check()?;
        Ok(report)
    }

    fn check(&self) -> Result<()> {
        let finite = self.snr.is_finite()
            && self.cnr.is_finite()
            && self.lncc_mean.is_finite()
            && self.displacement_mae_samples.is_none_or(f64::is_finite);
        if !finite || self.cnr < 0.0 || !(-1.0..=1.0).contains(&self.lncc_mean) {
            return Err(Error::DegenerateInput(format!("metrics out of range: {self:?}")));
        }
        Ok(())
    }

    /// One CSV line without a trailing newline; a missing MAE is left empty.
    pub fn csv_row(&self) -> String {
        let (t, b) = (&self.roi_target, &self.roi_background);
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.snr,
            self.cnr,
            self.lncc_mean,
            self.displacement_mae_samples.map(|m| m.to_string()).unwrap_or_default(),
            t.i0,
            t.i1,
            t.j0,
            t.j1,
            b.i0,
            b.i1,
            b.j0,
            b.j1
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::RoiLabel;
    use crate::objective::local_ncc;
    use crate::warp::warp_image;

    fn map_from(values: impl Fn(usize, usize) -> f64) -> StrainMap {
        StrainMap::new(Grid2::from_fn(8, 8, values), Grid2::filled(8, 8, true)).unwrap()
    }

    fn left() -> RoiSpec {
        RoiSpec::new(0, 8, 0, 4, RoiLabel::Target).unwrap()
    }

    fn right() -> RoiSpec {
        RoiSpec::new(0, 8, 4, 8, RoiLabel::Background).unwrap()
    }

    #[test]
    fn snr_of_two_point_distribution() {
        let s = map_from(|i, _| if i % 2 == 0 { 0.009 } else { 0.011 });
        assert!((strain_snr(&s, &left()).unwrap() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn constant_roi_is_degenerate() {
        let s = map_from(|_, _| 0.01);
        assert!(matches!(strain_snr(&s, &left()), Err(Error::DegenerateRoi(_))));
        assert_eq!(strain_cnr(&s, &left(), &right()).unwrap(), 0.0);
        let step = map_from(|_, j| if j < 4 { 0.01 } else { 0.02 });
        assert!(matches!(strain_cnr(&step, &left(), &right()), Err(Error::DegenerateRoi(_))));
    }

    #[test]
    fn cnr_closed_form() {
        // Target mean 0.01, background 0.02, both with sigma 0.005.
        let s = map_from(|i, j| {
            let base = if j < 4 { 0.01 } else { 0.02 };
            base + if i % 2 == 0 { 0.005 } else { -0.005 }
        });
        assert!((strain_cnr(&s, &left(), &right()).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn cnr_zero_for_equal_means() {
        let s = map_from(|i, j| match (j < 4, i % 2 == 0) {
            (true, true) => 1.0,
            (true, false) => 3.0,
            (false, true) => 0.0,
            (false, false) => 4.0,
        });
        assert_eq!(strain_cnr(&s, &left(), &right()).unwrap(), 0.0);
    }

    #[test]
    fn ratios_are_scale_free_and_cnr_symmetric() {
        let s = map_from(|i, j| 0.01 + 1e-3 * ((i * 7 + j * 3) % 5) as f64 + if j < 4 { 0.0 } else { 0.004 });
        for k in [0.5, 3.0, 1e3] {
            let t = s.scaled(k);
            let a = strain_snr(&s, &right()).unwrap();
            assert!((strain_snr(&t, &right()).unwrap() / a - 1.0).abs() < 1e-12);
            let c = strain_cnr(&s, &left(), &right()).unwrap();
            assert!((strain_cnr(&t, &left(), &right()).unwrap() / c - 1.0).abs() < 1e-12);
        }
        let swapped = strain_cnr(&s, &right(), &left()).unwrap();
        assert!((swapped - strain_cnr(&s, &left(), &right()).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn invalid_cells_in_roi_are_rejected() {
        let mut valid = Grid2::filled(8, 8, true);
        valid.set(2, 2, false);
        let s = StrainMap::new(Grid2::filled(8, 8, 0.01), valid).unwrap();
        assert!(strain_snr(&s, &left()).is_err());
    }

    fn rf(seed: u32) -> RfFrame {
        let g = Grid2::from_fn(64, 12, |i, j| {
            let x = (i as u32).wrapping_mul(2654435761).wrapping_add((j as u32 + seed).wrapping_mul(40503));
            ((x >> 8) % 1000) as f32 / 500.0 - 1.0
        });
        RfFrame::new(g, 40e6, 7e6, 0.2).unwrap()
    }

    #[test]
    fn lncc_mean_is_negated_sim() {
        let pre = rf(1);
        let post = rf(2);
        let u = DisplacementField::from_fn(64, 12, |i, _| (0.01 * i as f64, 0.1));
        let cfg = ObjectiveConfig::default().with_windows(11, 3);
        let (map, mean) = lncc_quality(&pre, &post, &u, &cfg).unwrap();
        let (sim, n) = local_ncc(&pre, &warp_image(&post, &u).unwrap(), &cfg).unwrap();
        assert_eq!(mean, -sim);
        assert_eq!(map.values.iter().flatten().count(), n);
        assert_eq!(map.to_grid().shape(), (map.grid.count_axial, map.grid.count_lateral));
    }

    #[test]
    fn perfect_field_gives_unit_lncc() {
        let pre = rf(3);
        let cfg = ObjectiveConfig::default().with_windows(11, 3);
        let (_, mean) = lncc_quality(&pre, &pre, &DisplacementField::zeros(64, 12), &cfg).unwrap();
        assert_eq!(mean, 1.0);
    }

    #[test]
    fn mae_examples() {
        let t = DisplacementField::from_fn(5, 4, |i, j| (i as f64 * 0.3, j as f64 * -0.2));
        assert_eq!(displacement_mae(&t, &t).unwrap(), 0.0);
        let shifted = DisplacementField::from_fn(5, 4, |i, j| (i as f64 * 0.3 + 0.5, j as f64 * -0.2 + 0.5));
        assert!((displacement_mae(&shifted, &t).unwrap() - 0.5).abs() < 1e-12);
        assert!(displacement_mae(&t, &DisplacementField::zeros(4, 4)).is_err());
    }

    #[test]
    fn csv_row_matches_header() {
        let report = MetricsReport {
            snr: 5.0,
            cnr: 2.0,
            lncc_mean: 0.9,
            displacement_mae_samples: None,
            roi_target: left(),
            roi_background: right(),
            config_echo: ObjectiveConfig::default(),
        };
        let row = report.csv_row();
        assert_eq!(row.split(',').count(), MetricsReport::CSV_HEADER.split(',').count());
        assert!(row.starts_with("5,2,0.9,,0,8,0,4"));
        let back: MetricsReport = serde_json::from_str(&report.to_json().unwrap()).unwrap();
        assert_eq!(back, report);
    }
}
