//! Bilinear resampling of the post-compression frame through a displacement
//! field, plus the analytic derivative of the sampled values with respect to
//! the displacement.
//!
//! A cell is in bounds when its sample point `(i + u_axial, j + u_lateral)`
//! lies inside `[0, n_axial - 1] x [0, n_lateral - 1]`. Out-of-bounds cells
//! are masked and zeroed, never clamped. On a lattice line the derivative is
//! taken from the cell on the increasing side, except on the last line where
//! only the preceding cell exists.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{DisplacementField, Grid2, RfFrame};

/// Resampled image with the cells whose interpolation support was complete.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpResult {
    pub warped: Grid2<f64>,
    pub in_bounds: Grid2<bool>,
}

/// Warp plus `d warped / d u_axial` and `d warped / d u_lateral`.
#[derive(Clone, Debug)]
pub(crate) struct WarpWithJacobian {
    pub result: WarpResult,
    pub d_axial: Grid2<f64>,
    pub d_lateral: Grid2<f64>,
}

pub fn warp_image(post: &RfFrame, u: &DisplacementField) -> Result<WarpResult> {
    check_shapes(post.shape(), u.shape())?;
    Ok(warp_grid(post.samples(), u, true).result)
}

/// Partial derivatives of [`warp_image`] with respect to each displacement
/// component, evaluated cell by cell. Masked cells return 0.
pub fn warp_jacobian_samples(post: &RfFrame, u: &DisplacementField) -> Result<(Grid2<f64>, Grid2<f64>)> {
    check_shapes(post.shape(), u.shape())?;
    let w = warp_grid(post.samples(), u, true);
    Ok((w.d_axial, w.d_lateral))
}

fn check_shapes(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::InvalidArgument(format!(
            "frame shape {a:?} does not match displacement shape {b:?}"
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Default)]
struct Sample {
    value: f64,
    d_axial: f64,
    d_lateral: f64,
    inside: bool,
}

#[inline]
fn cell_of(p: f64, n: usize) -> Option<(usize, f64)> {
    // `!(p >= 0)` also rejects NaN.
    if !(p >= 0.0) || p > (n - 1) as f64 {
        return None;
    }
    let c = (p.floor() as usize).min(n - 2);
    Some((c, p - c as f64))
}

#[inline]
fn sample(image: &Grid2<f32>, p: f64, q: f64) -> Sample {
    let (na, nl) = image.shape();
    let (Some((i0, ta)), Some((j0, tl))) = (cell_of(p, na), cell_of(q, nl)) else {
        return Sample::default();
    };
    let left = image.line(j0);
    let right = image.line(j0 + 1);
    let v00 = left[i0] as f64;
    let v10 = left[i0 + 1] as f64;
    let v01 = right[i0] as f64;
    let v11 = right[i0 + 1] as f64;
    let top = (1.0 - tl) * v00 + tl * v01;
    let bottom = (1.0 - tl) * v10 + tl * v11;
    Sample {
        value: (1.0 - ta) * top + ta * bottom,
        d_axial: bottom - top,
        d_lateral: (1.0 - ta) * (v01 - v00) + ta * (v11 - v10),
        inside: true,
    }
}

pub(crate) fn warp_grid(image: &Grid2<f32>, u: &DisplacementField, parallel: bool) -> WarpWithJacobian {
    let (na, nl) = image.shape();
    let mut warped = vec![0.0; na * nl];
    let mut in_bounds = vec![false; na * nl];
    let mut d_axial = vec![0.0; na * nl];
    let mut d_lateral = vec![0.0; na * nl];
    let line = |(j, (((w, m), da), dl)): (usize, (((&mut [f64], &mut [bool]), &mut [f64]), &mut [f64]))| {
        let ua = u.axial.line(j);
        let ul = u.lateral.line(j);
        for i in 0..na {
            let s = sample(image, i as f64 + ua[i], j as f64 + ul[i]);
            w[i] = s.value;
            m[i] = s.inside;
            da[i] = s.d_axial;
            dl[i] = s.d_lateral;
        }
    };
    if parallel {
        warped
            .par_chunks_mut(na)
            .zip(in_bounds.par_chunks_mut(na))
            .zip(d_axial.par_chunks_mut(na))
            .zip(d_lateral.par_chunks_mut(na))
            .enumerate()
            .for_each(line);
    } else {
        warped
            .chunks_mut(na)
            .zip(in_bounds.chunks_mut(na))
            .zip(d_axial.chunks_mut(na))
            .zip(d_lateral.chunks_mut(na))
            .enumerate()
            .for_each(line);
    }
    let grid = |v| Grid2::from_vec(na, nl, v).expect("shape preserved");
    WarpWithJacobian {
        result: WarpResult {
            warped: grid(warped),
            in_bounds: Grid2::from_vec(na, nl, in_bounds).expect("shape preserved"),
        },
        d_axial: grid(d_axial),
        d_lateral: grid(d_lateral),
    }
}
