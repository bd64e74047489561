//! Configuration lookup, the line-oriented control protocol and the scenario runner.

pub mod config;
pub mod protocol;
pub mod scenario;

pub use config::{AssetKind, Origin, Resolver};
pub use protocol::{serve_stream, ControlMessage, ControlReply, ErrorCode, Session};
pub use scenario::{run_scenario, Scenario, ScenarioError, ScenarioReport};
