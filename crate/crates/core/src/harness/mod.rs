//! Experiment orchestration: QAM framing, Monte Carlo sweeps over
//! estimator/equalizer pairs, and the complexity benchmark.

pub mod bench;
pub mod config;
pub mod qam;
pub mod sweep;

pub use bench::{bench_complexity, BenchConfig, BenchReport, BenchRow};
pub use config::{parse_snr_range, Combo, EqualizerKind, EstimatorKind, SimConfig};
pub use qam::Qam;
pub use sweep::{
    run_sweep, run_trial, stream_seed, write_csv, write_csv_to, SweepResult, SweepRow, TrialCounts,
};
