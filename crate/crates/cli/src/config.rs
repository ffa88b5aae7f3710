//! Layered run configuration: defaults, then a JSON file, then
//! `STRAINLAB_WORKERS`, then command-line flags.

use std::path::{Path, PathBuf};

use clap::Args;
use serde_json::Value;
use strainlab::{Echogenicity, PhantomSpec, RunConfig};

pub const WORKERS_ENV: &str = "STRAINLAB_WORKERS";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{WORKERS_ENV} must be a positive integer, got {0:?}")]
    Workers(String),
    #[error("bad --set {0:?}: expected key.path=value")]
    SetSyntax(String),
    #[error("--set {key}: {source}")]
    Set { key: String, source: serde_json::Error },
}

/// Flags that override fields of the run configuration.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// JSON run configuration; fields not given keep their defaults.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Pair directory to process (repeatable).
    #[arg(long = "input", value_name = "DIR")]
    pub inputs: Vec<PathBuf>,

    /// Worker threads for pair-level parallelism.
    #[arg(long)]
    pub workers: Option<usize>,

    /// Regularization weight.
    #[arg(long)]
    pub alpha: Option<f64>,

    /// NCC window size in samples (odd).
    #[arg(long)]
    pub window_axial: Option<usize>,

    /// NCC window size in lines (odd).
    #[arg(long)]
    pub window_lateral: Option<usize>,

    #[arg(long)]
    pub pyramid_levels: Option<usize>,

    #[arg(long)]
    pub max_iters: Option<usize>,

    #[arg(long)]
    pub step_size: Option<f64>,

    /// LSQSE kernel length in samples (odd).
    #[arg(long)]
    pub kernel: Option<usize>,

    /// Phantom seed; enables phantom generation.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Number of phantoms to generate, with consecutive seeds.
    #[arg(long)]
    pub phantom_count: Option<usize>,

    /// Applied compression in percent.
    #[arg(long)]
    pub compression: Option<f64>,

    /// Inclusion Young's modulus in kPa.
    #[arg(long)]
    pub inclusion_kpa: Option<f64>,

    #[arg(long)]
    pub inclusion_diameter: Option<f64>,

    /// Noise level in dB below the unit-power signal.
    #[arg(long)]
    pub noise_db: Option<f64>,

    /// Generate noise-free frames.
    #[arg(long)]
    pub no_noise: bool,

    /// Zero-amplitude (anechoic) inclusion scatterers.
    #[arg(long)]
    pub anechoic: bool,

    #[arg(long)]
    pub depth_mm: Option<f64>,

    #[arg(long)]
    pub width_mm: Option<f64>,

    #[arg(long)]
    pub n_lines: Option<usize>,

    #[arg(long)]
    pub n_scatterers: Option<usize>,

    #[arg(long)]
    pub no_pgm: bool,

    #[arg(long)]
    pub no_csv: bool,

    #[arg(long)]
    pub no_json: bool,

    /// Set any configuration field by dotted path, e.g.
    /// `--set solve.min_step_fraction=0.01`. Values are JSON, or strings.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

impl ConfigArgs {
    fn touches_phantom(&self) -> bool {
        self.seed.is_some()
            || self.phantom_count.is_some()
            || self.compression.is_some()
            || self.inclusion_kpa.is_some()
            || self.inclusion_diameter.is_some()
            || self.noise_db.is_some()
            || self.no_noise
            || self.anechoic
            || self.depth_mm.is_some()
            || self.width_mm.is_some()
            || self.n_lines.is_some()
            || self.n_scatterers.is_some()
    }

    /// Builds the configuration; `env_workers` is the value of
    /// [`WORKERS_ENV`], if set.
    pub fn resolve(&self, env_workers: Option<&str>) -> Result<RunConfig, ConfigError> {
        let mut cfg = match &self.config {
            Some(path) => load(path)?,
            None => RunConfig::default(),
        };
        if let Some(w) = env_workers {
            cfg.workers = w
                .trim()
                .parse()
                .ok()
                .filter(|&n: &usize| n > 0)
                .ok_or_else(|| ConfigError::Workers(w.to_string()))?;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        cfg.inputs.extend(self.inputs.iter().cloned());
        set(&mut cfg.workers, self.workers);
        set(&mut cfg.obj.alpha, self.alpha);
        set(&mut cfg.obj.window_axial, self.window_axial);
        set(&mut cfg.obj.window_lateral, self.window_lateral);
        set(&mut cfg.solve.pyramid_levels, self.pyramid_levels);
        set(&mut cfg.solve.max_iters_per_level, self.max_iters);
        set(&mut cfg.solve.step_size, self.step_size);
        set(&mut cfg.lsqse.kernel_samples, self.kernel);
        if self.touches_phantom() {
            let p = cfg.phantom.get_or_insert_with(PhantomSpec::default);
            set(&mut p.seed, self.seed);
            if self.compression.is_some() {
                p.applied_compression_pct = self.compression;
            }
            if self.inclusion_kpa.is_some() {
                p.youngs_inclusion_kpa = self.inclusion_kpa;
            }
            if self.inclusion_diameter.is_some() {
                p.inclusion_diameter_mm = self.inclusion_diameter;
            }
            if self.noise_db.is_some() {
                p.noise_power_dbw = self.noise_db;
            }
            if self.no_noise {
                p.add_noise = false;
            }
            if self.anechoic {
                p.inclusion_echogenicity = Echogenicity::Anechoic;
            }
            set(&mut p.depth_mm, self.depth_mm);
            set(&mut p.width_mm, self.width_mm);
            set(&mut p.n_lines, self.n_lines);
            set(&mut p.n_scatterers, self.n_scatterers);
        }
        set(&mut cfg.phantom_count, self.phantom_count);
        cfg.export.pgm &= !self.no_pgm;
        cfg.export.csv &= !self.no_csv;
        cfg.export.json &= !self.no_json;
        if !self.sets.is_empty() {
            cfg = apply_sets(cfg, &self.sets)?;
        }
        Ok(cfg)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

fn apply_sets(cfg: RunConfig, sets: &[String]) -> Result<RunConfig, ConfigError> {
    let mut root = serde_json::to_value(&cfg).expect("config serializes");
    let mut last_key = String::new();
    for item in sets {
        let (key, raw) = item.split_once('=').ok_or_else(|| ConfigError::SetSyntax(item.clone()))?;
        if key.is_empty() {
            return Err(ConfigError::SetSyntax(item.clone()));
        }
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut node = &mut root;
        for part in key.split('.') {
            if !node.is_object() {
                *node = Value::Object(Default::default());
            }
            node = node
                .as_object_mut()
                .expect("object")
                .entry(part.to_string())
                .or_insert(Value::Null);
        }
        *node = value;
        last_key = key.to_string();
    }
    serde_json::from_value(root).map_err(|source| ConfigError::Set { key: last_key, source })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_and_env() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"workers": 2, "obj": {"alpha": 0.5}, "solve": {"pyramid_levels": 3}}"#).unwrap();
        let args = ConfigArgs {
            config: Some(path),
            alpha: Some(1.5),
            ..ConfigArgs::default()
        };
        let cfg = args.resolve(None).unwrap();
        assert_eq!(cfg.workers, 2);
        assert_eq!(cfg.obj.alpha, 1.5);
        assert_eq!(cfg.solve.pyramid_levels, 3);
        assert_eq!(args.resolve(Some("6")).unwrap().workers, 6);
        let args = ConfigArgs {
            workers: Some(3),
            ..args
        };
        assert_eq!(args.resolve(Some("6")).unwrap().workers, 3);
        assert!(matches!(args.resolve(Some("zero")), Err(ConfigError::Workers(_))));
    }

    #[test]
    fn phantom_flags_create_a_spec() {
        let cfg = ConfigArgs::default().resolve(None).unwrap();
        assert!(cfg.phantom.is_none());
        let cfg = ConfigArgs {
            seed: Some(7),
            compression: Some(0.0),
            ..ConfigArgs::default()
        }
        .resolve(None)
        .unwrap();
        let p = cfg.phantom.unwrap();
        assert_eq!((p.seed, p.applied_compression_pct), (7, Some(0.0)));
    }

    #[test]
    fn set_reaches_any_field() {
        let args = ConfigArgs {
            sets: vec![
                "solve.min_step_fraction=0.01".into(),
                "phantom.seed=4".into(),
                "obj.reduction=fast".into(),
            ],
            ..ConfigArgs::default()
        };
        let cfg = args.resolve(None).unwrap();
        assert_eq!(cfg.solve.min_step_fraction, 0.01);
        assert_eq!(cfg.phantom.unwrap().seed, 4);
        assert_eq!(cfg.obj.reduction, strainlab::objective::Reduction::Fast);
        let bad = ConfigArgs {
            sets: vec!["solve.pyramid_levels=many".into()],
            ..ConfigArgs::default()
        };
        assert!(matches!(bad.resolve(None), Err(ConfigError::Set { .. })));
        let bad = ConfigArgs {
            sets: vec!["novalue".into()],
            ..ConfigArgs::default()
        };
        assert!(matches!(bad.resolve(None), Err(ConfigError::SetSyntax(_))));
    }

    #[test]
    fn unreadable_config_is_an_error() {
        let args = ConfigArgs {
            config: Some("/no/such/run.json".into()),
            ..ConfigArgs::default()
        };
        assert!(matches!(args.resolve(None), Err(ConfigError::Read { .. })));
    }
}
