//! Dataset loading, the EM-in metric, batch evaluation and configuration.

mod config;
mod dataset;
mod eval;

pub use config::{
    AppConfig, CacheConfig, ConfigError, EvalConfig, KgSpec, ENV_CACHE_DIR, ENV_RUN_DIR,
    ENV_USER_AGENT, ENV_WORKERS,
};
pub use dataset::{
    load_dataset, parse_dataset, resolve_labels, subsample, DatasetError, DatasetFormat, QaRecord,
};
pub use eval::{
    config_hash, em_in, mean, run_ablation, run_dir_for, run_eval, AblationReport, EvalError,
    EvalOptions, EvalReport, QuestionResult, QuestionSolver, Searcher, REPORT_SCHEMA_VERSION,
};
