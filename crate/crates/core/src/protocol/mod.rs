//! The four-step round: election and masked local training, per-group
//! sketching, verification against the benchmark, and scoring.

pub mod config;
pub mod meter;
pub mod report;
pub mod sim;

pub use config::{Defense, ExperimentConfig, PartitionKind, Placement};
pub use meter::{meter, verification_ratio, Payload, PayloadKind};
pub use report::write_outputs;
pub use sim::{
    bootstrap, run_experiment, run_round, summarize, CandidateRecord, ExperimentReport,
    MessageRecord, NodeDescriptor, RoundTranscript, Summary, World,
};
