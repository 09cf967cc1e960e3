//! Configuration, phantoms, evaluation and the end-to-end run.

pub mod config;
pub mod evaluate;
pub mod io;
pub mod phantom;
pub mod register;
pub mod run;

pub use config::{
    AugmentEntry, AugmentTarget, NonlinearSection, PipelineConfig, StepToggles, SubjectInput, TemplateInput, VbmSection,
};
pub use evaluate::{evaluate_case, evaluate_files, write_metrics_csv, CaseMetrics};
pub use io::{read_field, write_field, write_phantom, PhantomRequest};
pub use phantom::PhantomKind;
pub use register::{register_files, RegisterRequest, RegisterSummary};
pub use run::{run_pipeline, vbm_analysis, Manifest, ManifestStep, SubjectReport, VbmReport, MANIFEST_NAME};
