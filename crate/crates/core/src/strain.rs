//! Axial strain from a displacement field.
//!
//! Strain is reported compression-positive: a displacement that decreases
//! with depth (deeper tissue moving toward the probe) yields positive strain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DisplacementField, Grid2, StrainMap};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LsqseConfig {
    /// Samples in the axial fitting window; odd, at least 3.
    pub kernel_samples: usize,
}

impl Default for LsqseConfig {
    fn default() -> Self {
        Self { kernel_samples: 43 }
    }
}

impl LsqseConfig {
    pub fn validate(&self, n_axial: usize) -> Result<()> {
        let k = self.kernel_samples;
        if k < 3 || k % 2 == 0 {
            return Err(Error::InvalidArgument(format!("kernel_samples must be odd and >= 3, got {k}")));
        }
        if k > n_axial {
            return Err(Error::InvalidArgument(format!(
                "kernel of {k} samples exceeds the {n_axial}-sample axial extent"
            )));
        }
        Ok(())
    }
}

/// Least-squares strain estimator: the slope of an ordinary least-squares
/// line fitted to `u_axial` over an axial window centred on each cell.
///
/// The slope is in samples per sample, so it is already dimensionless and
/// `_axial_spacing_mm` does not enter the result.
pub fn lsqse_axial(u: &DisplacementField, cfg: &LsqseConfig, _axial_spacing_mm: f64) -> Result<StrainMap> {
    let (na, nl) = u.shape();
    cfg.validate(na)?;
    let h = cfg.kernel_samples / 2;
    // Centred abscissae make the intercept drop out; pairing +d with -d keeps
    // the estimate independent of any constant offset in the field.
    let denom = (h * (h + 1) * (2 * h + 1)) as f64 / 3.0;
    let mut strain = Grid2::filled(na, nl, 0.0);
    let mut valid = Grid2::filled(na, nl, false);
    for j in 0..nl {
        let col = u.axial.line(j);
        let out = strain.line_mut(j);
        for i in h..na - h {
            let mut num = 0.0;
            for d in 1..=h {
                num += d as f64 * (col[i + d] - col[i - d]);
            }
            out[i] = -num / denom;
        }
        valid.line_mut(j)[h..na - h].fill(true);
    }
    StrainMap::new(strain, valid)
}

/// Direct differentiation: centred axial difference, one-sided at the ends.
pub fn gradient_strain(u: &DisplacementField) -> Result<StrainMap> {
    let (na, nl) = u.shape();
    if na < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 axial samples, got {na}")));
    }
    let strain = Grid2::from_fn(na, nl, |i, j| {
        let c = u.axial.line(j);
        let slope = if i == 0 {
            c[1] - c[0]
        } else if i == na - 1 {
            c[na - 1] - c[na - 2]
        } else {
            (c[i + 1] - c[i - 1]) / 2.0
        };
        -slope
    });
    StrainMap::new(strain, Grid2::filled(na, nl, true))
}
