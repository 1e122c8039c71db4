//! Experiment orchestration: run configuration, the episodic training loop
//! with early stopping, multi-seed reports and the synthetic corpus.

mod config;
mod report;
mod run;
mod synth;

pub use config::{default_data_dir, Profile, RunConfig, DATA_DIR_ENV};
pub use report::{
    emit_report, read_report_json, read_results_csv, read_sweep_csv, write_report_json, write_results_csv,
    write_sweep_csv, ResultRow,
};
pub use run::{
    mean_std, p_mask_grid, p_mask_sweep, run_experiment, CurvePoint, RunReport, SeedResult, SweepPoint, Workspace,
};
pub use synth::{build_synthetic, generate_synthetic_dataset, synonyms_path, SynthConfig, SyntheticCorpus};
