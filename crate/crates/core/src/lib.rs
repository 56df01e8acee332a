//! Greedy stepwise transmit-antenna selection with joint transmit-power
//! control for downlink multiuser MIMO.
//!
//! The greedy loop lives in [`stepwise`]; [`precoders`] provides MRT, ZF and
//! RZF precoders with exact rank-one growth, [`metrics`] the rate and
//! efficiency objectives, [`oracle`] exhaustive and random references, and
//! [`harness`] the Monte-Carlo sweeps.

pub mod channel;
pub mod error;
pub mod exec;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod oracle;
pub mod power;
pub mod precoders;
pub mod stepwise;

pub use channel::{generate_rayleigh, ChannelMatrix};
pub use error::{Result, TasError};
pub use exec::Execution;
pub use metrics::{LinkStats, Measure, MeasureKind, PowerModel};
pub use power::PowerSearch;
pub use precoders::{PrecoderKind, PrecoderSpec, PrecoderState};
pub use stepwise::{run, AlgoConfig, ScanPath, SelectionResult};
