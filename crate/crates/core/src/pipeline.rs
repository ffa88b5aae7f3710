//! Batch pipeline: simulate or load pairs, estimate, differentiate,
//! evaluate and export, one output directory per pair plus `summary.csv`.
//!
//! Outputs hold no timings or host details, so two runs with the same
//! configuration produce identical trees.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DisplacementField, RfFrame, RoiSpec, StrainMap};
use crate::io::{self, FrameMeta};
use crate::metrics::{displacement_mae, lncc_quality, MetricsReport};
use crate::objective::{ObjectiveConfig, ObjectiveValue};
use crate::phantom::{generate_pair, PhantomParams, PhantomSpec, PhantomTruth};
use crate::solver::{solve, LevelReport, SolveReport, SolverConfig};
use crate::strain::{gradient_strain, lsqse_axial, LsqseConfig};

/// File name of the pair manifest written next to simulated frames.
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.csv";
/// First header cell of `summary.csv`; bumped whenever the columns change.
pub const SUMMARY_MAGIC: &str = "strainlab_summary_v1";
pub const SUMMARY_COLUMNS: [&str; 22] = [
    SUMMARY_MAGIC,
    "status",
    "snr",
    "cnr",
    "lncc_mean",
    "mae",
    "target_i0",
    "target_i1",
    "target_j0",
    "target_j1",
    "background_i0",
    "background_i1",
    "background_j0",
    "background_j1",
    "gradient_snr",
    "gradient_cnr",
    "sim",
    "reg",
    "total",
    "iterations",
    "converged_levels",
    "message",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportFlags {
    /// 16-bit PGM of the LSQSE strain map.
    pub pgm: bool,
    /// Per-pair `metrics.csv`.
    pub csv: bool,
    /// Per-pair `metrics.json`.
    pub json: bool,
}

impl Default for ExportFlags {
    fn default() -> Self {
        Self {
            pgm: true,
            csv: true,
            json: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub obj: ObjectiveConfig,
    pub solve: SolverConfig,
    pub lsqse: LsqseConfig,
    /// Generate phantoms instead of (or in addition to) reading `inputs`.
    pub phantom: Option<PhantomSpec>,
    /// Phantoms generated from `phantom`, with seeds `seed, seed + 1, ...`.
    pub phantom_count: usize,
    /// Pair directories holding `pre` and `post` frame files.
    pub inputs: Vec<PathBuf>,
    pub out_dir: PathBuf,
    pub export: ExportFlags,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            obj: ObjectiveConfig::default(),
            solve: SolverConfig::default(),
            lsqse: LsqseConfig::default(),
            phantom: None,
            phantom_count: 1,
            inputs: Vec::new(),
            out_dir: PathBuf::from("out"),
            export: ExportFlags::default(),
            workers: 1,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::InvalidArgument("workers must be at least 1".into()));
        }
        self.solve.validate()?;
        if self.phantom.is_none() && self.inputs.is_empty() {
            return Err(Error::InvalidArgument("no inputs and no phantom spec given".into()));
        }
        if self.phantom.is_some() && self.phantom_count == 0 {
            return Err(Error::InvalidArgument("phantom_count must be at least 1".into()));
        }
        for input in &self.inputs {
            if !input.is_dir() {
                return Err(Error::InvalidArgument(format!("input {} is not a directory", input.display())));
            }
        }
        let names = self.pair_names();
        let unique: BTreeSet<_> = names.iter().collect();
        if unique.len() != names.len() {
            return Err(Error::InvalidArgument("pair names are not unique".into()));
        }
        Ok(())
    }

    fn pair_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .inputs
            .iter()
            .map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "pair".into()))
            .collect();
        if let Some(spec) = &self.phantom {
            names.extend((0..self.phantom_count as u64).map(|k| phantom_name(spec.seed + k)));
        }
        names
    }
}

pub fn phantom_name(seed: u64) -> String {
    format!("phantom_{seed:04}")
}

/// Ground truth and ROIs stored beside a pair's frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairManifest {
    pub params: Option<PhantomParams>,
    pub roi_target: RoiSpec,
    pub roi_background: RoiSpec,
}

/// Writes `pre`, `post`, `u_true_{axial,lateral}`, `strain_true` and the
/// manifest into `dir`.
pub fn write_phantom(dir: &Path, truth: &PhantomTruth) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = FrameMeta::of(&truth.pre);
    io::write_frame(&dir.join("pre"), &truth.pre)?;
    io::write_frame(&dir.join("post"), &truth.post)?;
    io::write_field(&dir.join("u_true"), &truth.u_true, &meta)?;
    io::write_strain(&dir.join("strain_true"), &truth.strain_true, &meta)?;
    let manifest = PairManifest {
        params: Some(truth.params.clone()),
        roi_target: truth.roi_target,
        roi_background: truth.roi_background,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}

/// A pre/post pair with whatever ground truth came with it.
#[derive(Clone, Debug)]
pub struct PairInput {
    pub name: String,
    pub pre: RfFrame,
    pub post: RfFrame,
    pub u_true: Option<DisplacementField>,
    pub manifest: Option<PairManifest>,
}

impl PairInput {
    pub fn from_truth(name: String, truth: PhantomTruth) -> Self {
        let manifest = PairManifest {
            params: Some(truth.params),
            roi_target: truth.roi_target,
            roi_background: truth.roi_background,
        };
        Self {
            name,
            pre: truth.pre,
            post: truth.post,
            u_true: Some(truth.u_true),
            manifest: Some(manifest),
        }
    }
}

/// Reads a pair directory. `u_true` and the manifest are optional.
pub fn read_pair(dir: &Path) -> Result<PairInput> {
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "pair".into());
    let pre = io::read_frame(&dir.join("pre"))?;
    let post = io::read_frame(&dir.join("post"))?;
    let u_true = if dir.join("u_true_axial.json").exists() {
        Some(io::read_field(&dir.join("u_true"))?.0)
    } else {
        None
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest = if manifest_path.exists() {
        Some(read_json(&manifest_path)?)
    } else {
        None
    };
    Ok(PairInput {
        name,
        pre,
        post,
        u_true,
        manifest,
    })
}

/// The deterministic part of a [`SolveReport`], as written to `solve.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub final_objective: ObjectiveValue,
    pub iterations_per_level: Vec<usize>,
    pub converged: Vec<bool>,
    pub levels: Vec<LevelReport>,
    pub initial_strain: f64,
    pub initial_offset: f64,
}

impl From<&SolveReport> for SolveSummary {
    fn from(r: &SolveReport) -> Self {
        Self {
            final_objective: r.final_objective,
            iterations_per_level: r.iterations_per_level.clone(),
            converged: r.converged.clone(),
            levels: r.levels.clone(),
            initial_strain: r.initial_strain,
            initial_offset: r.initial_offset,
        }
    }
}

/// Metrics of one pair. A strain report is `None` when its ROI statistics
/// are degenerate (a constant strain map, e.g. on a null-displacement pair);
/// `notes` then says why.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub lncc_mean: f64,
    pub displacement_mae_samples: Option<f64>,
    pub roi_target: RoiSpec,
    pub roi_background: RoiSpec,
    pub lsqse: Option<MetricsReport>,
    pub gradient: Option<MetricsReport>,
    pub notes: Vec<String>,
}

/// Everything computed for one pair.
#[derive(Clone, Debug)]
pub struct PairResult {
    pub solve: SolveReport,
    pub lsqse: StrainMap,
    pub gradient: StrainMap,
    pub metrics: Option<PairMetrics>,
}

/// File stems inside a pair's result directory.
pub const FIELD_STEM: &str = "u";
pub const LSQSE_STEM: &str = "strain_lsqse";
pub const GRADIENT_STEM: &str = "strain_gradient";

/// Both strain estimates of one field.
#[derive(Clone, Debug, PartialEq)]
pub struct StrainPair {
    pub lsqse: StrainMap,
    pub gradient: StrainMap,
}

impl StrainPair {
    /// Both maps rounded to `f32`, as they are stored on disk.
    pub fn stored(&self) -> Result<StrainPair> {
        let round = |m: &StrainMap| StrainMap::new(m.strain().map(|v| v as f32 as f64), m.valid().clone());
        Ok(StrainPair {
            lsqse: round(&self.lsqse)?,
            gradient: round(&self.gradient)?,
        })
    }
}

pub fn strain_maps(u: &DisplacementField, cfg: &LsqseConfig, axial_spacing_mm: f64) -> Result<StrainPair> {
    Ok(StrainPair {
        lsqse: lsqse_axial(u, cfg, axial_spacing_mm)?,
        gradient: gradient_strain(u)?,
    })
}

/// Metrics of both strain maps; `None` when the pair carries no ROIs.
pub fn evaluate_pair(
    pair: &PairInput,
    u: &DisplacementField,
    strains: &StrainPair,
    obj: &ObjectiveConfig,
) -> Result<Option<PairMetrics>> {
    let Some(m) = &pair.manifest else {
        return Ok(None);
    };
    let mut notes = Vec::new();
    let mut eval = |label: &str, s: &StrainMap| {
        match MetricsReport::compute(
            s,
            &pair.pre,
            &pair.post,
            u,
            pair.u_true.as_ref(),
            m.roi_target,
            m.roi_background,
            obj,
        ) {
            Ok(r) => Ok(Some(r)),
            Err(Error::DegenerateRoi(why)) => {
                notes.push(format!("{label}: {why}"));
                Ok(None)
            }
            Err(e) => Err(e),
        }
    };
    let lsqse = eval("lsqse", &strains.lsqse)?;
    let gradient = eval("gradient", &strains.gradient)?;
    Ok(Some(PairMetrics {
        lncc_mean: lncc_quality(&pair.pre, &pair.post, u, obj)?.1,
        displacement_mae_samples: pair.u_true.as_ref().map(|t| displacement_mae(u, t)).transpose()?,
        roi_target: m.roi_target,
        roi_background: m.roi_background,
        lsqse,
        gradient,
        notes,
    }))
}

/// The field rounded to `f32`, as it is stored on disk.
pub fn stored_field(u: &DisplacementField) -> DisplacementField {
    DisplacementField {
        axial: u.axial.map(|v| v as f32 as f64),
        lateral: u.lateral.map(|v| v as f32 as f64),
    }
}

/// Estimation, both strain maps and, when ROIs are known, metrics.
pub fn process_pair(pair: &PairInput, cfg: &RunConfig) -> Result<PairResult> {
    let mut report = solve(&pair.pre, &pair.post, &cfg.obj, &cfg.solve)?;
    // Later stages see exactly the stored field, so a stepwise run from the
    // files reproduces the batch result.
    report.u = stored_field(&report.u);
    let strains = strain_maps(&report.u, &cfg.lsqse, pair.pre.axial_spacing_mm())?.stored()?;
    let metrics = evaluate_pair(pair, &report.u, &strains, &cfg.obj)?;
    Ok(PairResult {
        solve: report,
        lsqse: strains.lsqse,
        gradient: strains.gradient,
        metrics,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::parse(path, crate::error::ParseError::Header(e.to_string())))
}

pub fn write_solve_summary(path: &Path, report: &SolveReport) -> Result<()> {
    write_json(path, &SolveSummary::from(report))
}

/// Writes the field and `solve.json` into a result directory.
pub fn write_estimate(dir: &Path, report: &SolveReport, meta: &FrameMeta) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    io::write_field(&dir.join(FIELD_STEM), &report.u, meta)?;
    write_solve_summary(&dir.join("solve.json"), report)
}

pub fn read_estimate(dir: &Path) -> Result<(DisplacementField, FrameMeta)> {
    io::read_field(&dir.join(FIELD_STEM))
}

/// Writes both strain maps and, if enabled, the LSQSE PGM.
pub fn write_strain_maps(dir: &Path, strains: &StrainPair, meta: &FrameMeta, export: &ExportFlags) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    io::write_strain(&dir.join(LSQSE_STEM), &strains.lsqse, meta)?;
    io::write_strain(&dir.join(GRADIENT_STEM), &strains.gradient, meta)?;
    if export.pgm {
        io::export_pgm(&dir.join(format!("{LSQSE_STEM}.pgm")), &strains.lsqse, None)?;
    }
    Ok(())
}

pub fn read_strain_maps(dir: &Path) -> Result<StrainPair> {
    Ok(StrainPair {
        lsqse: io::read_strain(&dir.join(LSQSE_STEM))?.0,
        gradient: io::read_strain(&dir.join(GRADIENT_STEM))?.0,
    })
}

/// Writes `metrics.json` and `metrics.csv` as enabled.
pub fn write_metrics(dir: &Path, metrics: &PairMetrics, export: &ExportFlags) -> Result<()> {
    if export.json {
        write_json(&dir.join("metrics.json"), metrics)?;
    }
    if export.csv {
        if let Some(l) = &metrics.lsqse {
            let text = format!("{}\n{}\n", MetricsReport::CSV_HEADER, l.csv_row());
            let path = dir.join("metrics.csv");
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

fn write_outputs(dir: &Path, pair: &PairInput, result: &PairResult, export: &ExportFlags) -> Result<()> {
    let meta = FrameMeta::of(&pair.pre);
    write_estimate(dir, &result.solve, &meta)?;
    let strains = StrainPair {
        lsqse: result.lsqse.clone(),
        gradient: result.gradient.clone(),
    };
    write_strain_maps(dir, &strains, &meta, export)?;
    if let Some(m) = &result.metrics {
        write_metrics(dir, m, export)?;
    }
    Ok(())
}

/// Outcome of one pair as it appears in `summary.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairOutcome {
    pub name: String,
    pub summary: Option<SolveSummary>,
    pub metrics: Option<PairMetrics>,
    pub error: Option<String>,
}

impl PairOutcome {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }

    fn record(&self) -> Vec<String> {
        let f = |v: f64| v.to_string();
        let mut row = vec![self.name.clone(), if self.ok() { "ok" } else { "failed" }.to_string()];
        match &self.metrics {
            Some(m) => {
                let (t, b) = (&m.roi_target, &m.roi_background);
                let snr_cnr = |r: &Option<MetricsReport>| match r {
                    Some(r) => [f(r.snr), f(r.cnr)],
                    None => [String::new(), String::new()],
                };
                row.extend(snr_cnr(&m.lsqse));
                row.extend([f(m.lncc_mean), m.displacement_mae_samples.map(f).unwrap_or_default()]);
                row.extend([t.i0, t.i1, t.j0, t.j1, b.i0, b.i1, b.j0, b.j1].map(|v| v.to_string()));
                row.extend(snr_cnr(&m.gradient));
            }
            None => row.extend(std::iter::repeat_n(String::new(), 14)),
        }
        match &self.summary {
            Some(s) => {
                let o = &s.final_objective;
                row.extend([f(o.sim), f(o.reg), f(o.total)]);
                row.push(s.iterations_per_level.iter().sum::<usize>().to_string());
                row.push(s.converged.iter().filter(|&&c| c).count().to_string());
            }
            None => row.extend(std::iter::repeat_n(String::new(), 5)),
        }
        let notes = self.metrics.as_ref().map(|m| m.notes.join("; ")).unwrap_or_default();
        row.push(self.error.clone().unwrap_or(notes));
        debug_assert_eq!(row.len(), SUMMARY_COLUMNS.len());
        row
    }
}

/// Result of [`run_pipeline`]; the process exit status follows from it.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutcome {
    pub pairs: Vec<PairOutcome>,
    pub summary_path: PathBuf,
}

impl PipelineOutcome {
    /// 0 when every pair succeeded, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.pairs.iter().all(PairOutcome::ok) {
            0
        } else {
            1
        }
    }
}

enum Source<'a> {
    Dir(&'a Path),
    Phantom(PhantomSpec),
}

fn run_one(source: &Source, name: &str, cfg: &RunConfig) -> PairOutcome {
    let dir = cfg.out_dir.join(name);
    let mut outcome = PairOutcome {
        name: name.to_string(),
        summary: None,
        metrics: None,
        error: None,
    };
    let result = (|| -> Result<()> {
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let pair = match source {
            Source::Dir(path) => read_pair(path)?,
            Source::Phantom(spec) => {
                let truth = generate_pair(spec)?;
                write_phantom(&dir.join("truth"), &truth)?;
                PairInput::from_truth(name.to_string(), truth)
            }
        };
        let result = process_pair(&pair, cfg)?;
        outcome.summary = Some(SolveSummary::from(&result.solve));
        outcome.metrics = result.metrics.clone();
        write_outputs(&dir, &pair, &result, &cfg.export)
    })();
    if let Err(e) = result {
        log::warn!("pair {name} failed: {e}");
        outcome.error = Some(e.to_string());
    }
    outcome
}

/// Runs every configured pair on a pool of `cfg.workers` threads and writes
/// `<out_dir>/<pair>/...` plus `<out_dir>/summary.csv`. Configuration
/// problems are returned as errors; per-pair failures are recorded in the
/// outcome and the summary.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineOutcome> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let names = cfg.pair_names();
    let mut sources: Vec<Source> = cfg.inputs.iter().map(|p| Source::Dir(p.as_path())).collect();
    if let Some(spec) = &cfg.phantom {
        sources.extend((0..cfg.phantom_count as u64).map(|k| {
            Source::Phantom(PhantomSpec {
                seed: spec.seed + k,
                ..spec.clone()
            })
        }));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build worker pool: {e}")))?;
    let pairs: Vec<PairOutcome> = pool.install(|| {
        sources
            .par_iter()
            .zip(names.par_iter())
            .map(|(source, name)| run_one(source, name, cfg))
            .collect()
    });

    let summary_path = cfg.out_dir.join(SUMMARY_FILE);
    let mut writer = csv::Writer::from_path(&summary_path).map_err(|e| csv_error(&summary_path, e))?;
    writer.write_record(SUMMARY_COLUMNS).map_err(|e| csv_error(&summary_path, e))?;
    for p in &pairs {
        writer.write_record(p.record()).map_err(|e| csv_error(&summary_path, e))?;
    }
    writer.flush().map_err(|e| Error::io(&summary_path, e))?;
    Ok(PipelineOutcome { pairs, summary_path })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(out: &Path) -> RunConfig {
        let mut cfg = RunConfig {
            phantom: Some(PhantomSpec {
                width_mm: 10.0,
                depth_mm: 8.0,
                n_scatterers: 20_000,
                n_lines: 32,
                inclusion_diameter_mm: Some(3.0),
                youngs_inclusion_kpa: Some(75.0),
                applied_compression_pct: Some(1.0),
                noise_power_dbw: Some(20.0),
                seed: 3,
                ..PhantomSpec::default()
            }),
            out_dir: out.to_path_buf(),
            ..RunConfig::default()
        };
        cfg.solve.pyramid_levels = 2;
        cfg.obj.window_axial = 31;
        cfg.obj.window_lateral = 5;
        cfg.lsqse.kernel_samples = 21;
        cfg
    }

    #[test]
    fn pipeline_writes_pair_tree_and_summary() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let out = run_pipeline(&cfg).unwrap();
        assert_eq!(out.exit_code(), 0, "{:?}", out.pairs);
        let pair = dir.path().join("phantom_0003");
        for f in [
            "u_axial.usef",
            "u_lateral.json",
            "strain_lsqse.usef",
            "strain_gradient.json",
            "strain_lsqse.pgm",
            "strain_lsqse.pgm.json",
            "solve.json",
            "metrics.json",
            "metrics.csv",
            "truth/pre.usef",
            "truth/manifest.json",
        ] {
            assert!(pair.join(f).exists(), "missing {f}");
        }
        let summary = fs::read_to_string(&out.summary_path).unwrap();
        let lines: Vec<&str> = summary.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], SUMMARY_COLUMNS.join(","));
        assert!(lines[1].starts_with("phantom_0003,ok,"));
    }

    #[test]
    fn pair_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let truth = generate_pair(cfg.phantom.as_ref().unwrap()).unwrap();
        write_phantom(&dir.path().join("p"), &truth).unwrap();
        let pair = read_pair(&dir.path().join("p")).unwrap();
        assert_eq!(pair.pre, truth.pre);
        assert_eq!(pair.post, truth.post);
        assert_eq!(pair.manifest.unwrap().roi_target, truth.roi_target);
        assert_eq!(pair.name, "p");
    }

    #[test]
    fn failing_pair_is_recorded_and_others_continue() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(&dir.path().join("out"));
        let bad = dir.path().join("broken");
        fs::create_dir_all(&bad).unwrap();
        cfg.inputs = vec![bad];
        let out = run_pipeline(&cfg).unwrap();
        assert_eq!(out.exit_code(), 1);
        assert!(!out.pairs[0].ok());
        assert!(out.pairs[1].ok());
        let summary = fs::read_to_string(&out.summary_path).unwrap();
        assert!(summary.lines().nth(1).unwrap().starts_with("broken,failed,"));
    }

    #[test]
    fn config_errors_are_reported_up_front() {
        let cfg = RunConfig::default();
        assert!(run_pipeline(&cfg).is_err());
        let cfg = RunConfig {
            inputs: vec![PathBuf::from("/definitely/not/here")],
            ..RunConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::InvalidArgument(_))));
        let cfg = RunConfig {
            workers: 0,
            ..tiny_config(Path::new("x"))
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn run_config_json_round_trip_and_defaults() {
        let cfg = tiny_config(Path::new("out"));
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
        let partial: RunConfig = serde_json::from_str(r#"{"workers": 3, "solve": {"pyramid_levels": 2}}"#).unwrap();
        assert_eq!(partial.workers, 3);
        assert_eq!(partial.solve.pyramid_levels, 2);
        assert_eq!(partial.solve.max_iters_per_level, SolverConfig::default().max_iters_per_level);
    }
}
