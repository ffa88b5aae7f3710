//! Throughput benchmark on synthetic pairs.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::axial_spacing_mm;
use crate::metrics::MetricsReport;
use crate::objective::ObjectiveConfig;
use crate::phantom::{generate_pair, PhantomSpec, PhantomTruth};
use crate::solver::{solve, SolverConfig};
use crate::strain::{lsqse_axial, LsqseConfig};

/// Published GPU inference rate of the learned estimator, shown next to
/// measured throughput for context only.
pub const REFERENCE_IMAGES_PER_SEC: f64 = 13.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub pairs: usize,
    pub workers: usize,
    pub n_axial: usize,
    pub n_lateral: usize,
    pub seed: u64,
    pub obj: ObjectiveConfig,
    pub solve: SolverConfig,
    pub lsqse: LsqseConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            pairs: 8,
            workers: 1,
            n_axial: 1024,
            n_lateral: 192,
            seed: 0,
            obj: ObjectiveConfig::default(),
            solve: SolverConfig::default(),
            lsqse: LsqseConfig::default(),
        }
    }
}

impl BenchConfig {
    /// Phantom spec whose RF grid is `n_axial x n_lateral`; the scatterer
    /// count keeps the default density and the inclusion spans at most half
    /// the depth.
    pub fn phantom_spec(&self, seed: u64) -> PhantomSpec {
        let base = PhantomSpec::default();
        let depth_mm = self.n_axial as f64 * axial_spacing_mm(base.sampling_freq_hz);
        let density = base.n_scatterers as f64 / (base.width_mm * base.depth_mm);
        PhantomSpec {
            depth_mm,
            n_lines: self.n_lateral,
            inclusion_diameter_mm: Some((0.5 * depth_mm).min(10.0)),
            n_scatterers: (density * base.width_mm * depth_mm).round() as usize,
            youngs_inclusion_kpa: Some(75.0),
            applied_compression_pct: Some(1.0),
            noise_power_dbw: Some(20.0),
            seed,
            ..base
        }
    }
}

/// Per-stage seconds, summed over pairs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub simulate_s: f64,
    pub solve_s: f64,
    pub strain_s: f64,
    pub metrics_s: f64,
}

impl StageTimes {
    fn add(self, o: StageTimes) -> StageTimes {
        StageTimes {
            simulate_s: self.simulate_s + o.simulate_s,
            solve_s: self.solve_s + o.solve_s,
            strain_s: self.strain_s + o.strain_s,
            metrics_s: self.metrics_s + o.metrics_s,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub pairs: usize,
    pub workers: usize,
    pub shape: (usize, usize),
    pub pyramid_levels: usize,
    /// Wall time of estimation, strain and metrics over all pairs.
    pub wall_s: f64,
    pub pairs_per_sec: f64,
    /// Longest single-pair estimation time.
    pub max_pair_solve_s: f64,
    pub stages: StageTimes,
    pub reference_images_per_sec: f64,
}

impl BenchReport {
    pub fn render(&self) -> String {
        let s = &self.stages;
        let n = self.pairs as f64;
        format!(
            "pairs: {} of {}x{}, {} pyramid levels, {} worker(s)\n\
             wall: {:.2} s, throughput: {:.4} pairs/s\n\
             per pair (mean): simulate {:.3} s, solve {:.3} s, strain {:.4} s, metrics {:.4} s\n\
             slowest solve: {:.3} s\n\
             reference (GPU network inference, not comparable): {} images/s\n",
            self.pairs,
            self.shape.0,
            self.shape.1,
            self.pyramid_levels,
            self.workers,
            self.wall_s,
            self.pairs_per_sec,
            s.simulate_s / n,
            s.solve_s / n,
            s.strain_s / n,
            s.metrics_s / n,
            self.max_pair_solve_s,
            self.reference_images_per_sec,
        )
    }
}

fn process(truth: &PhantomTruth, cfg: &BenchConfig) -> Result<StageTimes> {
    let t0 = Instant::now();
    let report = solve(&truth.pre, &truth.post, &cfg.obj, &cfg.solve)?;
    let t1 = Instant::now();
    let strain = lsqse_axial(&report.u, &cfg.lsqse, truth.pre.axial_spacing_mm())?;
    let t2 = Instant::now();
    MetricsReport::compute(
        &strain,
        &truth.pre,
        &truth.post,
        &report.u,
        Some(&truth.u_true),
        truth.roi_target,
        truth.roi_background,
        &cfg.obj,
    )?;
    let t3 = Instant::now();
    Ok(StageTimes {
        simulate_s: 0.0,
        solve_s: (t1 - t0).as_secs_f64(),
        strain_s: (t2 - t1).as_secs_f64(),
        metrics_s: (t3 - t2).as_secs_f64(),
    })
}

/// Generates `pairs` phantoms, then times estimation, strain and metrics on
/// a pool of `workers` threads. Phantom generation is timed separately and
/// excluded from the throughput.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.pairs == 0 || cfg.workers == 0 {
        return Err(Error::InvalidArgument("bench needs at least one pair and one worker".into()));
    }
    cfg.solve.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build worker pool: {e}")))?;

    let mut stages = StageTimes::default();
    let mut truths = Vec::with_capacity(cfg.pairs);
    for k in 0..cfg.pairs as u64 {
        let t = Instant::now();
        truths.push(generate_pair(&cfg.phantom_spec(cfg.seed + k))?);
        stages.simulate_s += t.elapsed().as_secs_f64();
    }

    let start = Instant::now();
    let times = pool.install(|| truths.par_iter().map(|t| process(t, cfg)).collect::<Result<Vec<_>>>())?;
    let wall_s = start.elapsed().as_secs_f64();
    let max_pair_solve_s = times.iter().map(|t| t.solve_s).fold(0.0, f64::max);
    stages = times.into_iter().fold(stages, StageTimes::add);
    Ok(BenchReport {
        pairs: cfg.pairs,
        workers: cfg.workers,
        shape: (truths[0].pre.n_axial(), truths[0].pre.n_lateral()),
        pyramid_levels: cfg.solve.pyramid_levels,
        wall_s,
        pairs_per_sec: cfg.pairs as f64 / wall_s,
        max_pair_solve_s,
        stages,
        reference_images_per_sec: REFERENCE_IMAGES_PER_SEC,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phantom_spec_hits_requested_grid() {
        let cfg = BenchConfig::default();
        let p = cfg.phantom_spec(4).resolve().unwrap();
        assert_eq!(p.n_axial(), 1024);
        assert_eq!(p.n_lines, 192);
        assert_eq!(p.seed, 4);
    }

    #[test]
    fn small_bench_reports_consistent_numbers() {
        let mut cfg = BenchConfig {
            pairs: 2,
            workers: 2,
            n_axial: 520,
            n_lateral: 24,
            ..BenchConfig::default()
        };
        cfg.solve.pyramid_levels = 2;
        cfg.obj = cfg.obj.with_windows(31, 5);
        cfg.lsqse.kernel_samples = 21;
        let r = run_bench(&cfg).unwrap();
        assert_eq!(r.shape, (520, 24));
        assert!(r.wall_s > 0.0 && r.pairs_per_sec > 0.0);
        assert!((r.pairs_per_sec - 2.0 / r.wall_s).abs() < 1e-9);
        assert!(r.stages.solve_s >= r.max_pair_solve_s);
        assert!(r.render().contains("13 images/s"));
    }

    #[test]
    fn rejects_empty_bench() {
        assert!(run_bench(&BenchConfig { pairs: 0, ..BenchConfig::default() }).is_err());
    }
}
