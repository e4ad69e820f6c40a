//! Forward models, MAP estimation, regularization selection and the
//! iterative hyperparameter drivers.

pub mod benchmark;
pub mod cg;
pub mod forward;
pub mod gcv;
pub mod map;
pub mod pipeline;

pub use benchmark::{bundled_benchmark, make_synthetic_benchmark, Benchmark, BenchmarkKind, ObservationSpec};
pub use cg::{pcg, CgOptions, CgSolution};
pub use forward::{BlurKernel, ForwardModel};
pub use gcv::{gcv_alpha, oracle_alpha, AlphaGrid, AlphaSelection, GcvEvaluator, GcvPoint, TraceMethod};
pub use map::{map_estimate, MapSolution, PreconditionerKind, SolverOptions};
pub use pipeline::{
    run_anisotropic_pipeline, run_isotropic_pipeline, run_pipeline, run_regional_pipeline, run_tikhonov,
    AlphaMode, Hyperparameters, IterationRecord, PipelineConfig, PriorKind, SolveReport,
};
