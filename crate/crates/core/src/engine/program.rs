//! Declarative workload programs and the cycle table that prices them.

use crate::accel::Stage;
use crate::json::{self, ParseError};
use crate::model::PowerState;
use crate::platform::{Platform, HOST_TARGET};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerAction {
    Start,
    Stop,
}

/// One step of a workload program.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Phase {
    Compute {
        #[serde(alias = "kernel_id")]
        kernel: String,
        target: String,
        #[serde(default = "one")]
        reps: u64,
    },
    Acquire {
        fs_hz: u64,
        n_samples: u64,
        per_sample_cpu_cycles: u64,
    },
    Sleep {
        mode: PowerState,
        duration_cycles: u64,
    },
    FlashRead {
        bytes: u64,
        #[serde(default)]
        addr: u64,
    },
    FlashWrite {
        bytes: u64,
        #[serde(default)]
        addr: u64,
    },
    Marker {
        action: MarkerAction,
    },
}

fn one() -> u64 {
    1
}

impl Phase {
    pub fn op(&self) -> &'static str {
        match self {
            Phase::Compute { .. } => "compute",
            Phase::Acquire { .. } => "acquire",
            Phase::Sleep { .. } => "sleep",
            Phase::FlashRead { .. } => "flash_read",
            Phase::FlashWrite { .. } => "flash_write",
            Phase::Marker { .. } => "marker",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadProgram {
    pub name: String,
    #[serde(default)]
    pub phases: Vec<Phase>,
}

impl WorkloadProgram {
    pub fn new(name: impl Into<String>, phases: Vec<Phase>) -> Self {
        Self {
            name: name.into(),
            phases,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ParseError> {
        json::parse(text)
    }

    pub fn to_json(&self) -> String {
        json::to_pretty(self)
    }

    pub fn has_markers(&self) -> bool {
        self.phases.iter().any(|p| matches!(p, Phase::Marker { .. }))
    }
}

/// Cycles per repetition, keyed by kernel then target:
/// `{"mm": {"cpu": 92000, "cgra": 20000}}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TimingTable(pub BTreeMap<String, BTreeMap<String, u64>>);

impl TimingTable {
    pub fn from_json(text: &str) -> Result<Self, ParseError> {
        json::parse(text)
    }

    pub fn insert(&mut self, kernel: &str, target: &str, cycles: u64) {
        self.0
            .entry(kernel.to_string())
            .or_default()
            .insert(target.to_string(), cycles);
    }

    pub fn get(&self, kernel: &str, target: &str) -> Option<u64> {
        self.0.get(kernel)?.get(target).copied()
    }

    /// Entry for `(kernel, target)`, falling back to the accelerator's own timing.
    pub fn resolve(&self, kernel: &str, target: &str, platform: &Platform) -> Option<u64> {
        self.get(kernel, target).or_else(|| {
            platform
                .accelerator(target)
                .and_then(|a| a.timing.as_ref())
                .and_then(|t| t.get(kernel).copied())
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProgramError {
    #[error("program name is empty")]
    EmptyName,
    #[error("phase {index}: no timing entry for kernel `{kernel}` on `{target}`")]
    UnknownKernel {
        index: usize,
        kernel: String,
        target: String,
    },
    #[error("phase {index}: unknown compute target `{target}`")]
    UnknownTarget { index: usize, target: String },
    #[error("phase {index}: marker {action:?} does not pair with a preceding marker")]
    UnbalancedMarkers { index: usize, action: MarkerAction },
    #[error("phase {index}: {reason}")]
    InvalidPhase { index: usize, reason: String },
}

/// Checks ranges, targets, timing coverage and marker pairing.
///
/// A `Start` left open at the end of the program closes at program end.
pub fn validate_program(
    program: &WorkloadProgram,
    timing: &TimingTable,
    platform: &Platform,
) -> Result<(), ProgramError> {
    if program.name.trim().is_empty() {
        return Err(ProgramError::EmptyName);
    }
    let clock_hz = platform.clock().freq_hz();
    let mut open = false;
    for (index, phase) in program.phases.iter().enumerate() {
        let invalid = |reason: String| ProgramError::InvalidPhase { index, reason };
        match phase {
            Phase::Compute { kernel, target, reps } => {
                if *reps == 0 {
                    return Err(invalid("reps must be at least 1".into()));
                }
                if !platform.is_target(target) {
                    return Err(ProgramError::UnknownTarget {
                        index,
                        target: target.clone(),
                    });
                }
                let unknown = || ProgramError::UnknownKernel {
                    index,
                    kernel: kernel.clone(),
                    target: target.clone(),
                };
                if target == HOST_TARGET {
                    match timing.get(kernel, target) {
                        Some(c) if c > 0 => {}
                        _ => return Err(unknown()),
                    }
                } else {
                    let spec = platform.accelerator(target).expect("target checked");
                    if !spec.kernels.contains(kernel) {
                        return Err(unknown());
                    }
                    if spec.stage == Stage::RtlStage {
                        match timing.resolve(kernel, target, platform) {
                            Some(c) if c > 0 => {}
                            _ => return Err(unknown()),
                        }
                    }
                }
            }
            Phase::Acquire {
                fs_hz,
                per_sample_cpu_cycles,
                ..
            } => {
                if *fs_hz == 0 || *fs_hz > clock_hz {
                    return Err(invalid(format!("fs_hz {fs_hz} outside [1, {clock_hz}]")));
                }
                if *per_sample_cpu_cycles == 0 {
                    return Err(invalid("per_sample_cpu_cycles must be positive".into()));
                }
            }
            Phase::Sleep { mode, .. } => {
                if !matches!(mode, PowerState::ClockGated | PowerState::PowerGated) {
                    return Err(invalid(format!(
                        "sleep mode must be clock_gated or power_gated, got {mode}"
                    )));
                }
            }
            Phase::FlashRead { bytes, addr } | Phase::FlashWrite { bytes, addr } => {
                if addr
                    .checked_add(*bytes)
                    .is_none_or(|end| end > crate::periph::flash::ADDRESS_SPACE)
                {
                    return Err(invalid("flash range exceeds the address space".into()));
                }
            }
            Phase::Marker { action } => match (action, open) {
                (MarkerAction::Start, false) => open = true,
                (MarkerAction::Stop, true) => open = false,
                (action, _) => return Err(ProgramError::UnbalancedMarkers { index, action: *action }),
            },
        }
    }
    Ok(())
}
