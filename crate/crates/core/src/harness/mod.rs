//! Experiment harness: configs, parallel runs, CSV/JSON outputs and charts.

pub mod chart;
pub mod config;
pub mod output;
pub mod run;

pub use chart::{
    emit_chart, series_from_sweep, series_from_traces, write_chart, ChartLabels, Series,
};
pub use config::{auto_t1, Algo, ExperimentConfig, StepSpec, T1Spec};
pub use output::{read_csv, read_sweep_csv, write_csv, write_sweep_csv};
pub use run::{
    run_experiment, run_omega_sweep, summarize, write_outputs, ExperimentOutput, RunSummary,
    SweepRow,
};
