//! Coarse-to-fine minimization of the registration objective over a
//! per-cell displacement field.
//!
//! Each pyramid level block-averages both frames, shrinks the NCC window in
//! proportion (odd sizes, floored at 9x3) and runs Adam with a cosine-annealed
//! step on the field, starting from the upsampled result of the level below.
//! The coarsest level starts from the best axial offset and uniform strain
//! found by a grid search, which brings large compressions inside the
//! capture range. Levels whose downsampled carrier would exceed the coarse
//! Nyquist limit register envelope images instead of aliased RF. Sampling
//! positions are kept inside the frame after every step. The best iterate of
//! each level is kept, so a level never returns a field worse than its
//! initialization.

use std::time::Instant;

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{block_mean, resample_field, DisplacementField, Grid2, RfFrame};
use crate::objective::{evaluate, ObjectiveConfig, ObjectiveValue};
use crate::signal::envelope;

/// Iterations over which the relative loss decrease is measured.
pub const LOSS_WINDOW: usize = 10;
/// Smallest NCC window used on coarse levels.
pub const MIN_WINDOW: (usize, usize) = (9, 3);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub pyramid_levels: usize,
    /// Per-level decimation on both axes.
    pub downsample_factor: usize,
    pub max_iters_per_level: usize,
    /// Adam learning rate in samples (lines for the lateral component).
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Infinity norm of the gradient below which a level may stop.
    pub grad_tolerance: f64,
    /// Relative decrease of the best loss over [`LOSS_WINDOW`] iterations
    /// below which a level may stop.
    pub loss_tolerance: f64,
    /// The step is annealed along a half cosine from `step_size` to this
    /// fraction of it over `max_iters_per_level`.
    pub min_step_fraction: f64,
    /// Largest uniform strain magnitude tried when seeding the coarsest
    /// level. Zero starts from the zero field.
    pub strain_search_max: f64,
    /// Register envelope images on levels where block averaging would alias
    /// the RF carrier.
    pub envelope_coarse_levels: bool,
    /// Reserved for randomized probing; the current solver is deterministic.
    pub seed: u64,
    /// Threads used by `solve_batch`.
    pub workers: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            pyramid_levels: 4,
            downsample_factor: 2,
            max_iters_per_level: 400,
            step_size: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_tolerance: 1e-5,
            loss_tolerance: 1e-7,
            min_step_fraction: 1e-3,
            strain_search_max: 0.05,
            envelope_coarse_levels: true,
            seed: 0,
            workers: 1,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.pyramid_levels == 0 {
            return bad("pyramid_levels must be >= 1");
        }
        if self.downsample_factor < 2 && self.pyramid_levels > 1 {
            return bad("downsample_factor must be >= 2 with more than one level");
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad("step_size must be positive");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("Adam decay rates must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0 && self.grad_tolerance > 0.0 && self.loss_tolerance > 0.0) {
            return bad("adam_eps and tolerances must be positive");
        }
        if !(self.min_step_fraction >= 0.0 && self.min_step_fraction < 1.0) {
            return bad("min_step_fraction must lie in [0, 1)");
        }
        if !(self.strain_search_max >= 0.0 && self.strain_search_max < 1.0) {
            return bad("strain_search_max must lie in [0, 1)");
        }
        if self.workers == 0 {
            return bad("workers must be >= 1");
        }
        Ok(())
    }
}

/// Why a pyramid level stopped iterating.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIterations,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub shape: (usize, usize),
    pub window: (usize, usize),
    pub envelope: bool,
    pub iterations: usize,
    pub stop: StopReason,
    /// Both tolerances were met.
    pub converged: bool,
    pub initial_total: f64,
    pub final_total: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub u: DisplacementField,
    /// Objective of `u` on the finest level.
    pub final_objective: ObjectiveValue,
    /// Coarsest level first.
    pub iterations_per_level: Vec<usize>,
    pub converged: Vec<bool>,
    pub levels: Vec<LevelReport>,
    /// Uniform axial strain used to seed the coarsest level (0 when unused).
    pub initial_strain: f64,
    /// Rigid axial offset of the seed, in full-resolution samples.
    pub initial_offset: f64,
    pub wall_time_ms: f64,
}

struct Level {
    reference: Grid2<f32>,
    moving: Grid2<f32>,
    cfg: ObjectiveConfig,
    factor: usize,
    envelope: bool,
}

fn odd_at_least(v: usize, floor: usize) -> usize {
    let v = v.max(floor);
    if v % 2 == 0 {
        v + 1
    } else {
        v
    }
}

fn build_levels(pre: &RfFrame, post: &RfFrame, obj: &ObjectiveConfig, cfg: &SolverConfig) -> Result<Vec<Level>> {
    let carrier = pre.center_freq_hz() / pre.sampling_freq_hz();
    let mut envelopes: Option<(Grid2<f32>, Grid2<f32>)> = None;
    let mut levels = Vec::with_capacity(cfg.pyramid_levels);
    for l in 0..cfg.pyramid_levels {
        let factor = cfg.downsample_factor.pow(l as u32);
        let use_env = cfg.envelope_coarse_levels && carrier * factor as f64 > 0.5;
        let (na, nl) = pre.shape();
        if factor > na || factor > nl {
            return Err(Error::DegenerateInput(format!(
                "{} pyramid levels shrink a {na}x{nl} frame below one cell",
                cfg.pyramid_levels
            )));
        }
        let (reference, moving) = if use_env {
            let (re, me) = envelopes.get_or_insert_with(|| (envelope(pre), envelope(post)));
            (block_mean(re, factor, factor), block_mean(me, factor, factor))
        } else if factor == 1 {
            (pre.samples().clone(), post.samples().clone())
        } else {
            (block_mean(pre.samples(), factor, factor), block_mean(post.samples(), factor, factor))
        };
        let level_cfg = if l == 0 {
            obj.clone()
        } else {
            let wa = odd_at_least(obj.window_axial / factor, MIN_WINDOW.0);
            let wl = odd_at_least(obj.window_lateral / factor, MIN_WINDOW.1);
            obj.with_windows(wa, wl)
        };
        level_cfg.validate(reference.shape()).map_err(|e| match e {
            Error::DegenerateInput(m) => Error::DegenerateInput(format!("pyramid level {l}: {m}")),
            other => other,
        })?;
        levels.push(Level {
            reference,
            moving,
            cfg: level_cfg,
            factor,
            envelope: use_env,
        });
    }
    Ok(levels)
}

/// `u_axial(i) = offset - strain * i`, no lateral motion.
fn axial_affine(shape: (usize, usize), offset: f64, strain: f64) -> DisplacementField {
    DisplacementField::from_fn(shape.0, shape.1, |i, _| (offset - strain * i as f64, 0.0))
}

/// Alternating grid search over a uniform axial strain and a rigid axial
/// offset, both on quarter-cell steps at the deepest sample. Returns
/// `(offset, strain)` in level cells; stays at zero unless something beats
/// the zero field.
fn search_axial_affine(level: &Level, max_strain: f64) -> (f64, f64) {
    let shape = level.reference.shape();
    let n_a = shape.0.max(1) as f64;
    let steps = (max_strain * n_a / 0.25).ceil() as i64;
    let value = |offset: f64, strain: f64| -> f64 {
        evaluate(&level.reference, &level.moving, &axial_affine(shape, offset, strain), &level.cfg, false)
            .ok()
            .map(|(v, _)| v.total)
            .filter(|v| v.is_finite())
            .unwrap_or(f64::INFINITY)
    };
    let mut best = (0.0, 0.0, value(0.0, 0.0));
    for _ in 0..2 {
        for k in -steps..=steps {
            let strain = k as f64 * 0.25 / n_a;
            let v = value(best.0, strain);
            if v < best.2 {
                best = (best.0, strain, v);
            }
        }
        for k in -steps..=steps {
            let offset = k as f64 * 0.25;
            let v = value(offset, best.1);
            if v < best.2 {
                best = (offset, best.1, v);
            }
        }
    }
    (best.0, best.1)
}

struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(cfg: &SolverConfig, n: usize) -> Self {
        Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            lr: cfg.step_size,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One update of the parameter blocks, which together cover the moment
    /// buffers in order.
    fn step(&mut self, blocks: [(&mut [f64], &[f64]); 2]) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let mut offset = 0;
        for (params, grad) in blocks {
            let m = &mut self.m[offset..offset + params.len()];
            let v = &mut self.v[offset..offset + params.len()];
            for k in 0..params.len() {
                let g = grad[k];
                m[k] = b1 * m[k] + (1.0 - b1) * g;
                v[k] = b2 * v[k] + (1.0 - b2) * g * g;
                params[k] -= self.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
            }
            offset += params.len();
        }
    }
}

/// Keeps every sampling position `(i + u_a, j + u_l)` inside the frame.
fn project_in_bounds(u: &mut DisplacementField) {
    let (na, nl) = u.shape();
    for j in 0..nl {
        for (i, v) in u.axial.line_mut(j).iter_mut().enumerate() {
            *v = v.clamp(-(i as f64), (na - 1 - i) as f64);
        }
        let (lo, hi) = (-(j as f64), (nl - 1 - j) as f64);
        for v in u.lateral.line_mut(j) {
            *v = v.clamp(lo, hi);
        }
    }
}

fn run_level(
    level: &Level,
    index: usize,
    init: DisplacementField,
    cfg: &SolverConfig,
) -> Result<(DisplacementField, LevelReport)> {
    let n = init.axial.as_slice().len();
    let mut u = init;
    project_in_bounds(&mut u);
    let mut adam = Adam::new(cfg, 2 * n);
    let min_lr = cfg.step_size * cfg.min_step_fraction;
    let mut best_u = u.clone();
    let mut best = f64::INFINITY;
    let mut initial_total = f64::NAN;
    let mut history: Vec<f64> = Vec::with_capacity(cfg.max_iters_per_level + 1);
    let mut iterations = 0;
    let stop = loop {
        let (value, grad) = evaluate(&level.reference, &level.moving, &u, &level.cfg, true)?;
        let grad = grad.expect("gradient requested");
        if !value.total.is_finite() || !grad.is_finite() {
            return Err(Error::NumericalFailure {
                level: index,
                iteration: iterations,
            });
        }
        if iterations == 0 {
            initial_total = value.total;
        }
        if value.total < best {
            best = value.total;
            best_u.axial.as_mut_slice().copy_from_slice(u.axial.as_slice());
            best_u.lateral.as_mut_slice().copy_from_slice(u.lateral.as_slice());
        }
        history.push(best);
        if history.len() > LOSS_WINDOW {
            let past = history[history.len() - 1 - LOSS_WINDOW];
            let rel = (past - best) / past.abs().max(f64::MIN_POSITIVE);
            if rel < cfg.loss_tolerance && grad.max_abs() < cfg.grad_tolerance {
                break StopReason::Converged;
            }
        }
        if iterations == cfg.max_iters_per_level {
            break StopReason::MaxIterations;
        }
        {
            let phase = iterations as f64 / cfg.max_iters_per_level.max(1) as f64;
            adam.lr = min_lr + (cfg.step_size - min_lr) * 0.5 * (1.0 + (std::f64::consts::PI * phase).cos());
            let DisplacementField { axial, lateral } = &mut u;
            adam.step([
                (axial.as_mut_slice(), grad.axial.as_slice()),
                (lateral.as_mut_slice(), grad.lateral.as_slice()),
            ]);
            project_in_bounds(&mut u);
        }
        iterations += 1;
    };
    debug!(
        "level {index} ({}x{}): {iterations} iterations ({stop:?}), total {initial_total:.6} -> {best:.6}",
        level.reference.n_axial(),
        level.reference.n_lateral()
    );
    let report = LevelReport {
        shape: level.reference.shape(),
        window: (level.cfg.window_axial, level.cfg.window_lateral),
        envelope: level.envelope,
        iterations,
        stop,
        converged: stop == StopReason::Converged,
        initial_total,
        final_total: best,
    };
    Ok((best_u, report))
}

/// Estimates the field that maps `post` onto `pre`.
pub fn solve(
    pre: &RfFrame,
    post: &RfFrame,
    obj_cfg: &ObjectiveConfig,
    solve_cfg: &SolverConfig,
) -> Result<SolveReport> {
    let start = Instant::now();
    solve_cfg.validate()?;
    if !pre.same_geometry(post) {
        return Err(Error::InvalidArgument(
            "pre and post frames differ in shape or acquisition metadata".into(),
        ));
    }
    obj_cfg.validate(pre.shape())?;
    let levels = build_levels(pre, post, obj_cfg, solve_cfg)?;

    let coarsest = levels.last().expect("at least one level");
    let (offset, initial_strain) = if solve_cfg.strain_search_max > 0.0 {
        search_axial_affine(coarsest, solve_cfg.strain_search_max)
    } else {
        (0.0, 0.0)
    };
    let mut u = axial_affine(coarsest.reference.shape(), offset, initial_strain);
    let mut reports = Vec::with_capacity(levels.len());
    let mut prev_factor = coarsest.factor;
    for (index, level) in levels.iter().enumerate().rev() {
        if level.factor != prev_factor {
            let k = (prev_factor / level.factor) as f64;
            u = resample_field(&u, level.reference.shape(), k, k);
            prev_factor = level.factor;
        }
        let (best, report) = run_level(level, index, u, solve_cfg)?;
        u = best;
        reports.push(report);
    }
    let finest = &levels[0];
    let (final_objective, _) = evaluate(&finest.reference, &finest.moving, &u, &finest.cfg, false)?;
    Ok(SolveReport {
        u,
        final_objective,
        iterations_per_level: reports.iter().map(|r| r.iterations).collect(),
        converged: reports.iter().map(|r| r.converged).collect(),
        levels: reports,
        initial_strain,
        initial_offset: offset * coarsest.factor as f64,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Solves every pair on a pool of `solve_cfg.workers` threads. Results come
/// back in input order; a failing pair does not stop the others.
pub fn solve_batch(
    pairs: &[(RfFrame, RfFrame)],
    obj_cfg: &ObjectiveConfig,
    solve_cfg: &SolverConfig,
) -> Result<Vec<Result<SolveReport>>> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("solve_batch needs at least one pair".into()));
    }
    solve_cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(solve_cfg.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(|| {
        pairs
            .par_iter()
            .map(|(pre, post)| solve(pre, post, obj_cfg, solve_cfg))
            .collect()
    }))
}
