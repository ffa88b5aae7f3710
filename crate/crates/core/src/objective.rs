//! Registration objective: negative mean local NCC between the reference
//! frame and the warped moving frame, plus a weighted L1 penalty on the
//! second differences of both displacement components.
//!
//! `total = sim + alpha * reg` where
//!
//! * `sim = -(1/W) * sum_w NCC_w` over the `W` windows that are fully in
//!   bounds and have non-negligible variance in both images;
//! * `reg` is the Charbonnier-smoothed sum of `|D2_axial u_c| + |D2_lateral u_c|`
//!   over interior cells and both components `c`, optionally divided by the
//!   number of grid cells (see [`RegNormalization`]).
//!
//! Window statistics use population (1/N) moments. The analytic gradient is
//! assembled by gathering, for every cell, the contributions of the windows
//! that contain it, so the result does not depend on thread scheduling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DisplacementField, Grid2, RfFrame};
use crate::warp::{warp_grid, WarpResult};

/// Scale applied to the raw second-difference sum before weighting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegNormalization {
    /// Raw sum over all interior terms.
    Sum,
    /// Sum divided by `n_axial * n_lateral`; keeps `alpha` comparable across
    /// frame sizes and pyramid levels, like the window mean in `sim`.
    PerCell,
}

/// Summation order for the window reduction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Fixed window order; bit-reproducible for any thread count.
    Deterministic,
    /// Parallel tree reduction; last-bit results may vary between runs.
    Fast,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub window_axial: usize,
    pub window_lateral: usize,
    /// Defaults to half the window, rounded down.
    pub window_stride_axial: Option<usize>,
    pub window_stride_lateral: Option<usize>,
    pub alpha: f64,
    pub charbonnier_eps: f64,
    pub variance_floor: f64,
    pub reg_normalization: RegNormalization,
    pub reduction: Reduction,
    /// Evaluate windows and lines on the rayon pool.
    pub parallel: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            window_axial: 51,
            window_lateral: 7,
            window_stride_axial: None,
            window_stride_lateral: None,
            alpha: 2.0,
            charbonnier_eps: 1e-6,
            variance_floor: 1e-12,
            reg_normalization: RegNormalization::PerCell,
            reduction: Reduction::Deterministic,
            parallel: true,
        }
    }
}

impl ObjectiveConfig {
    pub fn stride_axial(&self) -> usize {
        self.window_stride_axial.unwrap_or((self.window_axial / 2).max(1))
    }

    pub fn stride_lateral(&self) -> usize {
        self.window_stride_lateral.unwrap_or((self.window_lateral / 2).max(1))
    }

    /// Copy with new window dimensions; explicit strides are dropped so they
    /// follow the new size.
    pub fn with_windows(&self, window_axial: usize, window_lateral: usize) -> Self {
        Self {
            window_axial,
            window_lateral,
            window_stride_axial: None,
            window_stride_lateral: None,
            ..self.clone()
        }
    }

    pub fn validate(&self, (n_axial, n_lateral): (usize, usize)) -> Result<()> {
        for (name, w) in [("window_axial", self.window_axial), ("window_lateral", self.window_lateral)] {
            if w < 3 || w % 2 == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be odd and >= 3, got {w}")));
            }
        }
        if self.window_axial > n_axial || self.window_lateral > n_lateral {
            return Err(Error::DegenerateInput(format!(
                "window {}x{} does not fit a {n_axial}x{n_lateral} frame",
                self.window_axial, self.window_lateral
            )));
        }
        if self.window_stride_axial == Some(0) || self.window_stride_lateral == Some(0) {
            return Err(Error::InvalidArgument("window strides must be >= 1".into()));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::InvalidArgument(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        if !(self.charbonnier_eps > 0.0 && self.charbonnier_eps.is_finite()) {
            return Err(Error::InvalidArgument("charbonnier_eps must be positive".into()));
        }
        if !(self.variance_floor > 0.0 && self.variance_floor.is_finite()) {
            return Err(Error::InvalidArgument("variance_floor must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub total: f64,
    pub sim: f64,
    pub reg: f64,
    pub n_windows: usize,
}

/// Regular lattice of window origins `(k_a * stride_a, k_l * stride_l)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowGrid {
    pub size_axial: usize,
    pub size_lateral: usize,
    pub stride_axial: usize,
    pub stride_lateral: usize,
    pub count_axial: usize,
    pub count_lateral: usize,
}

impl WindowGrid {
    pub fn new(cfg: &ObjectiveConfig, shape: (usize, usize)) -> Result<Self> {
        cfg.validate(shape)?;
        let (na, nl) = shape;
        let (sa, sl) = (cfg.stride_axial(), cfg.stride_lateral());
        Ok(Self {
            size_axial: cfg.window_axial,
            size_lateral: cfg.window_lateral,
            stride_axial: sa,
            stride_lateral: sl,
            count_axial: (na - cfg.window_axial) / sa + 1,
            count_lateral: (nl - cfg.window_lateral) / sl + 1,
        })
    }

    pub fn len(&self) -> usize {
        self.count_axial * self.count_lateral
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Window origin for flat index `w` (lateral-outer order).
    #[inline]
    fn origin(&self, w: usize) -> (usize, usize) {
        (
            (w % self.count_axial) * self.stride_axial,
            (w / self.count_axial) * self.stride_lateral,
        )
    }

    #[inline]
    fn covering(pos: usize, size: usize, stride: usize, count: usize) -> std::ops::Range<usize> {
        let lo = if pos + 1 > size { (pos + 1 - size).div_ceil(stride) } else { 0 };
        let hi = (pos / stride + 1).min(count);
        lo..hi.max(lo)
    }
}

/// Moments of one window that passed the validity checks.
#[derive(Clone, Copy, Debug)]
struct WindowStat {
    mean_ref: f64,
    mean_mov: f64,
    /// `1 / (sigma_ref * sigma_mov)`
    inv_sd_prod: f64,
    /// `1 / sigma_mov^2`
    inv_var_mov: f64,
    ncc: f64,
}

/// Population-moment NCC of two equally sized samples. `None` when either
/// variance vanishes.
pub fn ncc_pair(reference: &[f64], moving: &[f64]) -> Option<f64> {
    assert_eq!(reference.len(), moving.len());
    let n = reference.len() as f64;
    let ma = reference.iter().sum::<f64>() / n;
    let mb = moving.iter().sum::<f64>() / n;
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for (a, b) in reference.iter().zip(moving) {
        let (da, db) = (a - ma, b - mb);
        va += da * da;
        vb += db * db;
        cov += da * db;
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

/// Per-line running count of masked cells, for O(1) window mask checks.
fn masked_prefix(mask: &Grid2<bool>) -> Vec<Vec<u32>> {
    (0..mask.n_lateral())
        .map(|j| {
            let mut acc = 0u32;
            let mut out = Vec::with_capacity(mask.n_axial() + 1);
            out.push(0);
            for &m in mask.line(j) {
                acc += u32::from(!m);
                out.push(acc);
            }
            out
        })
        .collect()
}

fn window_stats(
    reference: &Grid2<f32>,
    warp: &WarpResult,
    grid: &WindowGrid,
    cfg: &ObjectiveConfig,
) -> Vec<Option<WindowStat>> {
    let prefix = masked_prefix(&warp.in_bounds);
    let n = (grid.size_axial * grid.size_lateral) as f64;
    let one = |w: usize| -> Option<WindowStat> {
        let (ia, ja) = grid.origin(w);
        let (ib, jb) = (ia + grid.size_axial, ja + grid.size_lateral);
        if (ja..jb).any(|j| prefix[j][ib] != prefix[j][ia]) {
            return None;
        }
        let (mut sa, mut sb) = (0.0, 0.0);
        for j in ja..jb {
            sa += reference.line(j)[ia..ib].iter().map(|&v| v as f64).sum::<f64>();
            sb += warp.warped.line(j)[ia..ib].iter().sum::<f64>();
        }
        let (ma, mb) = (sa / n, sb / n);
        let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
        for j in ja..jb {
            let a = &reference.line(j)[ia..ib];
            let b = &warp.warped.line(j)[ia..ib];
            for (&x, &y) in a.iter().zip(b) {
                let (da, db) = (x as f64 - ma, y - mb);
                va += da * da;
                vb += db * db;
                cov += da * db;
            }
        }
        let (va, vb, cov) = (va / n, vb / n, cov / n);
        if va < cfg.variance_floor || vb < cfg.variance_floor {
            return None;
        }
        let sd_prod = (va * vb).sqrt();
        Some(WindowStat {
            mean_ref: ma,
            mean_mov: mb,
            inv_sd_prod: 1.0 / sd_prod,
            inv_var_mov: 1.0 / vb,
            ncc: (cov / sd_prod).clamp(-1.0, 1.0),
        })
    };
    if cfg.parallel {
        (0..grid.len()).into_par_iter().map(one).collect()
    } else {
        (0..grid.len()).map(one).collect()
    }
}

fn mean_ncc(stats: &[Option<WindowStat>], cfg: &ObjectiveConfig) -> Result<(f64, usize)> {
    let valid = stats.iter().filter(|s| s.is_some()).count();
    if valid == 0 {
        return Err(Error::DegenerateInput(
            "no window is fully in bounds with non-negligible variance".into(),
        ));
    }
    let total: f64 = match cfg.reduction {
        Reduction::Deterministic => stats.iter().flatten().map(|s| s.ncc).sum(),
        Reduction::Fast => stats.par_iter().flatten().map(|s| s.ncc).sum(),
    };
    Ok((total / valid as f64, valid))
}

/// Negative mean window NCC between `pre` and an already warped frame.
/// Returns `(sim, n_windows)`.
pub fn local_ncc(pre: &RfFrame, warped: &WarpResult, cfg: &ObjectiveConfig) -> Result<(f64, usize)> {
    if pre.shape() != warped.warped.shape() {
        return Err(Error::InvalidArgument("reference and warped shapes differ".into()));
    }
    let grid = WindowGrid::new(cfg, pre.shape())?;
    let stats = window_stats(pre.samples(), warped, &grid, cfg);
    let (mean, n) = mean_ncc(&stats, cfg)?;
    Ok((-mean, n))
}

/// Per-window NCC values (`None` for skipped windows) on the window lattice.
pub(crate) fn window_nccs(
    reference: &Grid2<f32>,
    warped: &WarpResult,
    cfg: &ObjectiveConfig,
) -> Result<(WindowGrid, Vec<Option<f64>>)> {
    let grid = WindowGrid::new(cfg, reference.shape())?;
    let stats = window_stats(reference, warped, &grid, cfg);
    Ok((grid, stats.into_iter().map(|s| s.map(|s| s.ncc)).collect()))
}

#[inline]
fn charbonnier(x: f64, eps: f64) -> f64 {
    (x * x + eps * eps).sqrt() - eps
}

#[inline]
fn charbonnier_deriv(x: f64, eps: f64) -> f64 {
    x / (x * x + eps * eps).sqrt()
}

/// Smoothed L1 of axial and lateral second differences of one component.
fn component_smoothness(g: &Grid2<f64>, eps: f64, parallel: bool) -> f64 {
    let (na, nl) = g.shape();
    let line_sum = |j: usize| -> f64 {
        let c = g.line(j);
        let mut acc = 0.0;
        for i in 1..na.saturating_sub(1) {
            acc += charbonnier(c[i - 1] - 2.0 * c[i] + c[i + 1], eps);
        }
        if j >= 1 && j + 1 < nl {
            let (l, r) = (g.line(j - 1), g.line(j + 1));
            for i in 0..na {
                acc += charbonnier(l[i] - 2.0 * c[i] + r[i], eps);
            }
        }
        acc
    };
    let partial: Vec<f64> = if parallel {
        (0..nl).into_par_iter().map(line_sum).collect()
    } else {
        (0..nl).map(line_sum).collect()
    };
    partial.iter().sum()
}

/// Adds `scale * d(component_smoothness)/dg` into `out`.
fn add_component_smoothness_grad(g: &Grid2<f64>, eps: f64, scale: f64, out: &mut Grid2<f64>, parallel: bool) {
    let (na, nl) = g.shape();
    // Derivative of each penalty term at its centre cell, zero off the interior.
    let axial_d = Grid2::from_fn(na, nl, |i, j| {
        if i >= 1 && i + 1 < na {
            charbonnier_deriv(g.get(i - 1, j) - 2.0 * g.get(i, j) + g.get(i + 1, j), eps)
        } else {
            0.0
        }
    });
    let lateral_d = Grid2::from_fn(na, nl, |i, j| {
        if j >= 1 && j + 1 < nl {
            charbonnier_deriv(g.get(i, j - 1) - 2.0 * g.get(i, j) + g.get(i, j + 1), eps)
        } else {
            0.0
        }
    });
    let line = |(j, dst): (usize, &mut [f64])| {
        let a = axial_d.line(j);
        let c = lateral_d.line(j);
        for i in 0..na {
            let mut v = -2.0 * a[i] - 2.0 * c[i];
            if i >= 1 {
                v += a[i - 1];
            }
            if i + 1 < na {
                v += a[i + 1];
            }
            if j >= 1 {
                v += lateral_d.get(i, j - 1);
            }
            if j + 1 < nl {
                v += lateral_d.get(i, j + 1);
            }
            dst[i] += scale * v;
        }
    };
    if parallel {
        out.as_mut_slice().par_chunks_mut(na).enumerate().for_each(line);
    } else {
        out.as_mut_slice().chunks_mut(na).enumerate().for_each(line);
    }
}

/// Raw (unnormalized) smoothed L1 norm of the second differences of both
/// displacement components, interior cells only.
pub fn strain_smoothness(u: &DisplacementField, cfg: &ObjectiveConfig) -> Result<f64> {
    let (na, nl) = u.shape();
    if na < 3 || nl < 3 {
        return Err(Error::DegenerateInput(format!(
            "second differences need a grid of at least 3x3, got {na}x{nl}"
        )));
    }
    if !u.is_finite() {
        return Err(Error::InvalidArgument("displacement field has non-finite entries".into()));
    }
    let eps = cfg.charbonnier_eps;
    Ok(component_smoothness(&u.axial, eps, cfg.parallel) + component_smoothness(&u.lateral, eps, cfg.parallel))
}

fn reg_scale(cfg: &ObjectiveConfig, shape: (usize, usize)) -> f64 {
    match cfg.reg_normalization {
        RegNormalization::Sum => 1.0,
        RegNormalization::PerCell => 1.0 / (shape.0 * shape.1) as f64,
    }
}

/// Shared evaluation path for the value and, optionally, the gradient.
pub(crate) fn evaluate(
    reference: &Grid2<f32>,
    moving: &Grid2<f32>,
    u: &DisplacementField,
    cfg: &ObjectiveConfig,
    with_gradient: bool,
) -> Result<(ObjectiveValue, Option<DisplacementField>)> {
    let shape = reference.shape();
    if moving.shape() != shape || u.shape() != shape {
        return Err(Error::InvalidArgument(format!(
            "shape mismatch: reference {shape:?}, moving {:?}, field {:?}",
            moving.shape(),
            u.shape()
        )));
    }
    let grid = WindowGrid::new(cfg, shape)?;
    let warp = warp_grid(moving, u, cfg.parallel);
    let stats = window_stats(reference, &warp.result, &grid, cfg);
    let (mean, n_windows) = mean_ncc(&stats, cfg)?;
    let scale = reg_scale(cfg, shape);
    let reg = scale * strain_smoothness(u, cfg)?;
    let sim = -mean;
    let value = ObjectiveValue {
        total: sim + cfg.alpha * reg,
        sim,
        reg,
        n_windows,
    };
    if !with_gradient {
        return Ok((value, None));
    }

    let (na, nl) = shape;
    let n = (grid.size_axial * grid.size_lateral) as f64;
    let k = -1.0 / (n_windows as f64 * n);
    let warped = &warp.result.warped;
    // d sim / d warped(i, j), gathered over the windows containing the cell.
    let line = |(j, dst): (usize, &mut [f64])| {
        let kl_range = WindowGrid::covering(j, grid.size_lateral, grid.stride_lateral, grid.count_lateral);
        let refl = reference.line(j);
        let movl = warped.line(j);
        for i in 0..na {
            let ka_range = WindowGrid::covering(i, grid.size_axial, grid.stride_axial, grid.count_axial);
            let mut acc = 0.0;
            for kl in kl_range.clone() {
                for ka in ka_range.clone() {
                    if let Some(s) = &stats[kl * grid.count_axial + ka] {
                        acc += (refl[i] as f64 - s.mean_ref) * s.inv_sd_prod
                            - s.ncc * (movl[i] - s.mean_mov) * s.inv_var_mov;
                    }
                }
            }
            dst[i] = k * acc;
        }
    };
    let mut d_sim = Grid2::filled(na, nl, 0.0);
    if cfg.parallel {
        d_sim.as_mut_slice().par_chunks_mut(na).enumerate().for_each(line);
    } else {
        d_sim.as_mut_slice().chunks_mut(na).enumerate().for_each(line);
    }

    let mut g_axial = Grid2::from_fn(na, nl, |i, j| d_sim.get(i, j) * warp.d_axial.get(i, j));
    let mut g_lateral = Grid2::from_fn(na, nl, |i, j| d_sim.get(i, j) * warp.d_lateral.get(i, j));
    if cfg.alpha != 0.0 {
        let s = cfg.alpha * scale;
        add_component_smoothness_grad(&u.axial, cfg.charbonnier_eps, s, &mut g_axial, cfg.parallel);
        add_component_smoothness_grad(&u.lateral, cfg.charbonnier_eps, s, &mut g_lateral, cfg.parallel);
    }
    Ok((
        value,
        Some(DisplacementField {
            axial: g_axial,
            lateral: g_lateral,
        }),
    ))
}

fn check_pair(pre: &RfFrame, post: &RfFrame) -> Result<()> {
    if pre.shape() != post.shape() {
        return Err(Error::InvalidArgument(format!(
            "pre {:?} and post {:?} shapes differ",
            pre.shape(),
            post.shape()
        )));
    }
    Ok(())
}

/// Warps `post` by `u` and evaluates both objective terms.
pub fn objective_eval(
    pre: &RfFrame,
    post: &RfFrame,
    u: &DisplacementField,
    cfg: &ObjectiveConfig,
) -> Result<ObjectiveValue> {
    check_pair(pre, post)?;
    Ok(evaluate(pre.samples(), post.samples(), u, cfg, false)?.0)
}

/// Analytic gradient of `total` with respect to both displacement components.
pub fn objective_gradient(
    pre: &RfFrame,
    post: &RfFrame,
    u: &DisplacementField,
    cfg: &ObjectiveConfig,
) -> Result<DisplacementField> {
    check_pair(pre, post)?;
    let (_, grad) = evaluate(pre.samples(), post.samples(), u, cfg, true)?;
    Ok(grad.expect("gradient requested"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::warp::warp_image;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frame(na: usize, nl: usize, f: impl FnMut(usize, usize) -> f32) -> RfFrame {
        RfFrame::new(Grid2::from_fn(na, nl, f), 40e6, 7e6, 0.2).unwrap()
    }

    fn noise_frame(na: usize, nl: usize, seed: u64) -> RfFrame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        frame(na, nl, |_, _| rng.random_range(-1.0f32..1.0))
    }

    fn small_cfg() -> ObjectiveConfig {
        ObjectiveConfig {
            window_axial: 9,
            window_lateral: 5,
            ..Default::default()
        }
    }

    #[test]
    fn default_strides_are_half_windows() {
        let c = ObjectiveConfig::default();
        assert_eq!((c.stride_axial(), c.stride_lateral()), (25, 3));
    }

    #[test]
    fn validation_rejects_bad_windows() {
        let c = ObjectiveConfig {
            window_axial: 4,
            ..Default::default()
        };
        assert!(c.validate((100, 100)).is_err());
        assert!(matches!(
            ObjectiveConfig::default().validate((40, 100)),
            Err(Error::DegenerateInput(_))
        ));
        let c = ObjectiveConfig {
            alpha: -1.0,
            ..Default::default()
        };
        assert!(c.validate((100, 100)).is_err());
    }

    #[test]
    fn covering_ranges_match_brute_force() {
        for (size, stride, n) in [(9usize, 4usize, 40usize), (5, 2, 17), (7, 3, 7), (3, 1, 10), (51, 25, 300)] {
            let count = (n - size) / stride + 1;
            for pos in 0..n {
                let expect: Vec<usize> =
                    (0..count).filter(|k| k * stride <= pos && pos < k * stride + size).collect();
                let got: Vec<usize> = WindowGrid::covering(pos, size, stride, count).collect();
                assert_eq!(got, expect, "size {size} stride {stride} pos {pos}");
            }
        }
    }

    #[test]
    fn self_correlation_is_minus_one() {
        let pre = noise_frame(40, 20, 1);
        let w = warp_image(&pre, &DisplacementField::zeros(40, 20)).unwrap();
        let (sim, n) = local_ncc(&pre, &w, &small_cfg()).unwrap();
        assert_eq!(sim, -1.0);
        let grid = WindowGrid::new(&small_cfg(), (40, 20)).unwrap();
        assert_eq!(n, grid.len());
    }

    #[test]
    fn inverted_copy_is_plus_one() {
        let pre = noise_frame(40, 20, 2);
        let inv = pre.with_samples(pre.samples().map(|v| 10.0 - v)).unwrap();
        let w = warp_image(&inv, &DisplacementField::zeros(40, 20)).unwrap();
        let (sim, _) = local_ncc(&pre, &w, &small_cfg()).unwrap();
        assert!((sim - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pair_ncc_positive_rescale() {
        let v = ncc_pair(&[1.0, 2.0, 3.0, 4.0], &[2.0, 4.0, 6.0, 8.0]).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        assert!(ncc_pair(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]).is_none());
    }

    #[test]
    fn constant_window_is_skipped() {
        let pre = noise_frame(18, 10, 3);
        // Moving frame constant over the first axial band of windows.
        let post = frame(18, 10, |i, j| if i < 9 { 1.0 } else { pre.samples().get(i, j) });
        let w = warp_image(&post, &DisplacementField::zeros(18, 10)).unwrap();
        let cfg = ObjectiveConfig {
            window_axial: 9,
            window_lateral: 5,
            window_stride_axial: Some(9),
            window_stride_lateral: Some(5),
            ..Default::default()
        };
        let (sim, n) = local_ncc(&pre, &w, &cfg).unwrap();
        assert_eq!(n, 2);
        assert_eq!(sim, -1.0);
    }

    #[test]
    fn all_windows_skipped_is_an_error() {
        let pre = noise_frame(18, 10, 4);
        let post = frame(18, 10, |_, _| 0.5);
        let w = warp_image(&post, &DisplacementField::zeros(18, 10)).unwrap();
        assert!(matches!(local_ncc(&pre, &w, &small_cfg()), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn masked_windows_are_skipped() {
        let pre = noise_frame(30, 10, 5);
        let u = DisplacementField::from_fn(30, 10, |i, _| (if i > 25 { 10.0 } else { 0.0 }, 0.0));
        let w = warp_image(&pre, &u).unwrap();
        let cfg = small_cfg();
        let full = WindowGrid::new(&cfg, (30, 10)).unwrap().len();
        let (_, n) = local_ncc(&pre, &w, &cfg).unwrap();
        assert!(n < full);
    }

    #[test]
    fn smoothness_vanishes_on_affine_fields() {
        let u = DisplacementField::from_fn(9, 7, |i, j| {
            (0.37 * i as f64 - 1.3 * j as f64 + 0.1, -0.02 * i as f64 + 0.7 * j as f64)
        });
        assert_eq!(strain_smoothness(&u, &ObjectiveConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn smoothness_of_quadratic() {
        let u = DisplacementField::from_fn(5, 5, |i, _| ((i * i) as f64, 0.0));
        let eps = 1e-6;
        let expect = 15.0 * ((4.0f64 + eps * eps).sqrt() - eps);
        let got = strain_smoothness(&u, &ObjectiveConfig::default()).unwrap();
        assert!((got - expect).abs() < 1e-12);
        assert!((got - 30.0).abs() < 1e-4);
    }

    #[test]
    fn smoothness_needs_three_cells() {
        let u = DisplacementField::zeros(2, 9);
        assert!(matches!(
            strain_smoothness(&u, &ObjectiveConfig::default()),
            Err(Error::DegenerateInput(_))
        ));
    }

    // Straightforward double loop written independently of the line-sum path.
    fn smoothness_oracle(u: &DisplacementField, eps: f64) -> f64 {
        let (na, nl) = u.shape();
        let phi = |x: f64| (x * x + eps * eps).sqrt() - eps;
        let mut total = 0.0;
        for g in [&u.axial, &u.lateral] {
            for i in 0..na {
                for j in 0..nl {
                    if i > 0 && i < na - 1 {
                        total += phi(g.get(i - 1, j) - 2.0 * g.get(i, j) + g.get(i + 1, j));
                    }
                    if j > 0 && j < nl - 1 {
                        total += phi(g.get(i, j - 1) - 2.0 * g.get(i, j) + g.get(i, j + 1));
                    }
                }
            }
        }
        total
    }

    #[test]
    fn smoothness_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut u = DisplacementField::zeros(8, 8);
        for v in u.axial.as_mut_slice().iter_mut().chain(u.lateral.as_mut_slice()) {
            *v = rng.random_range(-2.0..2.0);
        }
        let got = strain_smoothness(&u, &ObjectiveConfig::default()).unwrap();
        let want = smoothness_oracle(&u, 1e-6);
        assert!((got - want).abs() / want < 1e-12);
    }

    #[test]
    fn eval_identity_pair() {
        let pre = noise_frame(40, 20, 6);
        let v = objective_eval(&pre, &pre, &DisplacementField::zeros(40, 20), &small_cfg()).unwrap();
        assert_eq!(v.sim, -1.0);
        assert_eq!(v.reg, 0.0);
        assert_eq!(v.total, -1.0);
    }

    #[test]
    fn eval_misaligned_identity_pair() {
        let pre = noise_frame(40, 20, 7);
        let u = DisplacementField::from_fn(40, 20, |i, j| (0.4 + 0.01 * i as f64, 0.3 - 0.01 * j as f64));
        let v = objective_eval(&pre, &pre, &u, &small_cfg()).unwrap();
        assert!(v.total > -1.0);
        assert_eq!(v.reg, 0.0);
    }

    #[test]
    fn total_is_affine_in_alpha() {
        let pre = noise_frame(30, 16, 9);
        let post = noise_frame(30, 16, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut u = DisplacementField::zeros(30, 16);
        for v in u.axial.as_mut_slice().iter_mut().chain(u.lateral.as_mut_slice()) {
            *v = rng.random_range(-0.4..0.4);
        }
        let at = |alpha: f64| {
            let cfg = ObjectiveConfig { alpha, ..small_cfg() };
            objective_eval(&pre, &post, &u, &cfg).unwrap()
        };
        let (v0, v1, v3) = (at(0.0), at(1.0), at(3.0));
        assert_eq!(v0.total, v0.sim);
        assert_eq!(v1.total, v1.sim + v1.reg);
        assert!((v3.total - v0.total - 3.0 * v0.reg).abs() < 1e-12);
    }

    #[test]
    fn identity_gradient_vanishes_without_regularizer_curvature() {
        let pre = noise_frame(40, 20, 12);
        let g = objective_gradient(&pre, &pre, &DisplacementField::zeros(40, 20), &small_cfg()).unwrap();
        assert!(g.max_abs() < 1e-12, "max {}", g.max_abs());
    }

    #[test]
    fn deterministic_and_sequential_paths_agree_bitwise() {
        let pre = noise_frame(50, 24, 13);
        let post = noise_frame(50, 24, 14);
        let u = DisplacementField::from_fn(50, 24, |i, j| (0.01 * i as f64 + 0.3, (j as f64 * 0.7).sin() * 0.2));
        let par = ObjectiveConfig { parallel: true, ..small_cfg() };
        let seq = ObjectiveConfig { parallel: false, ..small_cfg() };
        let (va, ga) = evaluate(pre.samples(), post.samples(), &u, &par, true).unwrap();
        let (vb, gb) = evaluate(pre.samples(), post.samples(), &u, &seq, true).unwrap();
        assert_eq!(va, vb);
        assert_eq!(ga, gb);
        let fast = ObjectiveConfig { reduction: Reduction::Fast, ..small_cfg() };
        let (vf, _) = evaluate(pre.samples(), post.samples(), &u, &fast, false).unwrap();
        assert!((vf.total - va.total).abs() < 1e-12);
    }

    /// Random instance whose second differences stay well away from zero so
    /// the smoothed L1 is differentiable at finite-difference scale.
    fn curved_field(n: usize, rng: &mut ChaCha8Rng) -> DisplacementField {
        let c = n as f64 / 2.0;
        let mut coef = || {
            let m: f64 = rng.random_range(0.004..0.008);
            if rng.random_bool(0.5) { m } else { -m }
        };
        let (aa, ab, la, lb) = (coef(), coef(), coef(), coef());
        let mut u = DisplacementField::from_fn(n, n, |i, j| {
            let (x, y) = (i as f64 - c, j as f64 - c);
            (aa * x * x + ab * y * y + 0.3, la * x * x + lb * y * y - 0.2)
        });
        for v in u.axial.as_mut_slice().iter_mut().chain(u.lateral.as_mut_slice()) {
            *v += rng.random_range(-0.001..0.001);
        }
        u
    }

    fn lattice_distance(p: f64) -> f64 {
        (p - p.round()).abs()
    }

    fn fd_check(pre: &RfFrame, post: &RfFrame, u: &DisplacementField, cfg: &ObjectiveConfig, probes: usize, seed: u64) -> f64 {
        let h = 1e-3;
        let grad = objective_gradient(pre, post, u, cfg).unwrap();
        let floor = 1e-6 * grad.max_abs();
        let (na, nl) = u.shape();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        let mut done = 0;
        while done < probes {
            let (i, j, comp) = (rng.random_range(0..na), rng.random_range(0..nl), rng.random_range(0..2));
            let pos = if comp == 0 { i as f64 + u.axial.get(i, j) } else { j as f64 + u.lateral.get(i, j) };
            if lattice_distance(pos) < 2.0 * h {
                continue;
            }
            let eval = |d: f64| {
                let mut v = u.clone();
                let g = if comp == 0 { &mut v.axial } else { &mut v.lateral };
                g.set(i, j, g.get(i, j) + d);
                objective_eval(pre, post, &v, cfg).unwrap().total
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let an = if comp == 0 { grad.axial.get(i, j) } else { grad.lateral.get(i, j) };
            // Entries that cancel to round-off are compared against a floor
            // tied to the largest gradient entry.
            let scale = fd.abs().max(an.abs()).max(floor);
            worst = worst.max((fd - an).abs() / scale);
            done += 1;
        }
        worst
    }

    #[test]
    fn single_window_similarity_gradient_matches_fd() {
        let pre = noise_frame(11, 7, 20);
        let post = noise_frame(11, 7, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut u = DisplacementField::zeros(11, 7);
        for v in u.axial.as_mut_slice().iter_mut().chain(u.lateral.as_mut_slice()) {
            *v = rng.random_range(0.05..0.45);
        }
        let cfg = ObjectiveConfig {
            alpha: 0.0,
            window_stride_axial: Some(9),
            window_stride_lateral: Some(5),
            ..small_cfg()
        };
        assert_eq!(WindowGrid::new(&cfg, (11, 7)).unwrap().len(), 1);
        let worst = fd_check(&pre, &post, &u, &cfg, 60, 23);
        assert!(worst < 1e-3, "worst rel err {worst}");
    }

    #[test]
    fn regularizer_gradient_matches_fd() {
        let pre = noise_frame(32, 32, 24);
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let u = curved_field(32, &mut rng);
        for norm in [RegNormalization::Sum, RegNormalization::PerCell] {
            // pre == post with zero field would leave only reg; use the warped
            // pair so both terms are active.
            let cfg = ObjectiveConfig { alpha: 2.0, reg_normalization: norm, ..small_cfg() };
            let worst = fd_check(&pre, &pre, &u, &cfg, 100, 26);
            assert!(worst < 1e-3, "{norm:?}: worst rel err {worst}");
            let sim_only = ObjectiveConfig { alpha: 0.0, ..cfg };
            let worst = fd_check(&pre, &pre, &u, &sim_only, 100, 27);
            assert!(worst < 1e-3, "sim only: worst rel err {worst}");
        }
    }

    #[test]
    fn full_gradient_matches_fd_on_random_instances() {
        for seed in 0..3 {
            let pre = noise_frame(32, 32, 100 + seed);
            let post = noise_frame(32, 32, 200 + seed);
            let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
            let u = curved_field(32, &mut rng);
            let worst = fd_check(&pre, &post, &u, &small_cfg(), 100, 400 + seed);
            assert!(worst < 1e-3, "seed {seed}: worst rel err {worst}");
        }
    }
}
