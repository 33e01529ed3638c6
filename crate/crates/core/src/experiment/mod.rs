//! Config-driven runs: training with either sampler plus instrumentation,
//! verification suites, and the files both write.

mod config;
mod output;
mod train;
mod verify;

pub use config::{
    DatasetConfig, DatasetKind, ExperimentConfig, InstrumentationConfig, MomentChoice, NetworkConfig, OptimizerConfig,
    OutputKind, PartitionStrategy, SamplerConfig, SamplerKind, Schedule, SubsampleConfig,
};
pub use output::{read_gsnr_csv, read_mi_csv, run_train, write_outcome, FileEntry, RunManifest, RunStatus};
pub use train::{
    first_epoch_reaching, fitting_epochs, train, train_on, GrowthSummary, GsnrRow, LossRow, PartitionEvent,
    TrainOutcome,
};
pub use verify::{run_verify, Check, Suite, VerifyReport};
