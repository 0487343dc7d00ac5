//! Synthetic multi-domain tasks and the leave-one-domain-out harness.

pub mod ablation;
pub mod experiments;
pub mod protocol;
pub mod suite;

pub use ablation::{ablate_num_aux, ablate_num_runs, ablate_steps, write_ablation_csv, AblationPoint};
pub use protocol::{emit_csv, read_csv, run_protocol, ProtocolConfig, ResultRow, Strategy};
pub use suite::{gen_synthetic_suite, SuiteSpec, SyntheticSuite};
