//! Deterministic emulation of heterogeneous TinyAI SoCs: power-state
//! counters, virtual peripherals, accelerator offload and energy reports.

pub mod accel;
pub mod control;
pub mod engine;
pub mod json;
pub mod metrics;
pub mod model;
pub mod periph;
pub mod platform;

pub use accel::{register_accelerator, AcceleratorSpec, Stage};
pub use engine::{Engine, EngineConfig, Phase, SimError, SimOutcome, TimingTable, WorkloadProgram};
pub use metrics::{estimate_energy, CounterMode, EnergyReport};
pub use model::{ClockConfig, DomainKind, DomainSpec, EnergyModel, PowerState, StateCounters};
pub use platform::Platform;
