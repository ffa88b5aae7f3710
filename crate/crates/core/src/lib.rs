//! Quasi-static ultrasound strain elastography.
//!
//! A dense displacement field between a pre- and a post-compression RF frame
//! is estimated by directly minimizing a local-NCC similarity plus an L1
//! penalty on the field's second differences, over a coarse-to-fine pyramid.
//! Axial strain follows from a least-squares slope estimator. A speckle
//! phantom generator with analytic ground truth and an evaluation harness
//! (SNR, CNR, LNCC, displacement error) close the loop.

pub mod bench;
pub mod error;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod objective;
pub mod phantom;
pub mod pipeline;
pub mod signal;
pub mod solver;
pub mod strain;
pub mod warp;

pub use bench::{run_bench, BenchConfig, BenchReport, StageTimes};
pub use error::{Error, ParseError, Result};
pub use grid::{
    field_upsample, grid_downsample, DisplacementField, Grid2, RfFrame, RoiLabel, RoiSpec, StrainMap,
};
pub use objective::{
    local_ncc, objective_eval, objective_gradient, strain_smoothness, ObjectiveConfig, ObjectiveValue,
};
pub use warp::{warp_image, warp_jacobian_samples, WarpResult};
pub use phantom::{
    displacement_oracle, generate_from_params, generate_pair, Echogenicity, PhantomParams, PhantomSpec, PhantomTruth,
};
pub use pipeline::{
    evaluate_pair, process_pair, read_estimate, read_pair, read_strain_maps, run_pipeline, strain_maps, write_estimate,
    write_metrics, write_phantom, write_strain_maps, ExportFlags, PairInput, PairManifest, PairMetrics, PairOutcome,
    PairResult, PipelineOutcome, RunConfig, SolveSummary, StrainPair,
};
pub use signal::envelope;
pub use strain::{gradient_strain, lsqse_axial, LsqseConfig};
pub use solver::{solve, solve_batch, LevelReport, SolveReport, SolverConfig, StopReason};
pub use io::{
    export_pgm, read_any, read_field, read_frame, read_pgm, read_strain, write_field, write_frame, write_strain,
    FrameData, FrameFileHeader, FrameKind, FrameMeta, PgmWindow,
};
pub use metrics::{displacement_mae, lncc_quality, strain_cnr, strain_snr, LnccMap, MetricsReport};
