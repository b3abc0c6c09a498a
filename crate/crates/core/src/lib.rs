//! IPv6 overlapping-fragment test campaigns.
//!
//! * [`wire`]: packet construction and parsing.
//! * [`checksum`]: internet checksum and commutative payload patterns.
//! * [`models`]: overlap geometries and campaign generation.
//! * [`reassembly`]: policy simulator used as the oracle.
//! * [`scenarios`]: RFC 9099 experiments, DoS and modification-attack frames.
//! * [`runner`]: live or simulated execution.
//! * [`report`]: verdicts, fingerprints and dataset files.

pub mod checksum;
pub mod models;
pub mod reassembly;
pub mod report;
pub mod runner;
pub mod scenarios;
pub mod wire;

pub use models::{build_campaign, Campaign, CampaignSelection, Endpoints, FragmentSpec, ModelKind, OverlapModel, TestCase, TestMode};
pub use reassembly::{FragmentBuffer, ReassemblyOutcome, ReassemblyPolicy};
pub use runner::{Observed, RunnerConfig, TestResult};
