//! Shared domain vocabulary: clocks, power domains, power states, energy
//! models and per-state cycle counters.
//!
//! Powers are kept in microwatts and time in cycles. Conversion to joules
//! happens only when a report is produced (see [`crate::metrics`]).

use crate::json::{self, ParseError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

/// Operating point of the silicon reference.
pub const DEFAULT_FREQ_HZ: u64 = 20_000_000;

/// Host clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawClock")]
pub struct ClockConfig {
    freq_hz: u64,
}

#[derive(Deserialize)]
struct RawClock {
    freq_hz: u64,
}

impl TryFrom<RawClock> for ClockConfig {
    type Error = ModelError;

    fn try_from(raw: RawClock) -> Result<Self, Self::Error> {
        ClockConfig::new(raw.freq_hz)
    }
}

impl ClockConfig {
    pub fn new(freq_hz: u64) -> Result<Self, ModelError> {
        if freq_hz == 0 {
            return Err(ModelError::InvalidClock);
        }
        Ok(Self { freq_hz })
    }

    #[inline]
    pub fn freq_hz(&self) -> u64 {
        self.freq_hz
    }
}

impl Default for ClockConfig {
    fn default() -> Self {
        Self {
            freq_hz: DEFAULT_FREQ_HZ,
        }
    }
}

/// Converts a cycle count to seconds on the given clock.
pub fn cycles_to_seconds(cycles: u64, clock: ClockConfig) -> f64 {
    cycles as f64 / clock.freq_hz as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerState {
    Active,
    ClockGated,
    PowerGated,
    /// Memories only.
    Retention,
}

impl PowerState {
    pub const ALL: [PowerState; 4] = [
        PowerState::Active,
        PowerState::ClockGated,
        PowerState::PowerGated,
        PowerState::Retention,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PowerState::Active => "active",
            PowerState::ClockGated => "clock_gated",
            PowerState::PowerGated => "power_gated",
            PowerState::Retention => "retention",
        }
    }

    pub fn is_sleep(self) -> bool {
        self != PowerState::Active
    }
}

impl fmt::Display for PowerState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    Logic,
    Memory,
}

/// An independently gated region of the SoC.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub id: String,
    pub name: String,
    pub kind: DomainKind,
}

impl DomainSpec {
    pub fn new(id: impl Into<String>, name: impl Into<String>, kind: DomainKind) -> Self {
        Self {
            id: id.into(),
            name: name.into(),
            kind,
        }
    }
}

/// Average power of one domain in each power state, in microwatts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainPower {
    pub active_uw: f64,
    pub clock_gated_uw: f64,
    pub power_gated_uw: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retention_uw: Option<f64>,
}

impl DomainPower {
    pub fn logic(active_uw: f64, clock_gated_uw: f64, power_gated_uw: f64) -> Self {
        Self {
            active_uw,
            clock_gated_uw,
            power_gated_uw,
            retention_uw: None,
        }
    }

    pub fn memory(active_uw: f64, clock_gated_uw: f64, power_gated_uw: f64, retention: f64) -> Self {
        Self {
            retention_uw: Some(retention),
            ..Self::logic(active_uw, clock_gated_uw, power_gated_uw)
        }
    }

    /// Power in `state`; `None` for retention on a domain without a retention figure.
    pub fn power_uw(&self, state: PowerState) -> Option<f64> {
        match state {
            PowerState::Active => Some(self.active_uw),
            PowerState::ClockGated => Some(self.clock_gated_uw),
            PowerState::PowerGated => Some(self.power_gated_uw),
            PowerState::Retention => self.retention_uw,
        }
    }

    /// Every power scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            active_uw: self.active_uw * factor,
            clock_gated_uw: self.clock_gated_uw * factor,
            power_gated_uw: self.power_gated_uw * factor,
            retention_uw: self.retention_uw.map(|r| r * factor),
        }
    }

    fn fields(&self) -> impl Iterator<Item = (&'static str, f64)> {
        [
            ("active_uw", Some(self.active_uw)),
            ("clock_gated_uw", Some(self.clock_gated_uw)),
            ("power_gated_uw", Some(self.power_gated_uw)),
            ("retention_uw", self.retention_uw),
        ]
        .into_iter()
        .filter_map(|(name, value)| value.map(|v| (name, v)))
    }
}

/// One `domains` entry of an energy-model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "DomainEntry", into = "DomainEntry")]
pub struct DomainModel {
    pub kind: DomainKind,
    pub power: DomainPower,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DomainEntry {
    kind: DomainKind,
    active_uw: f64,
    clock_gated_uw: f64,
    power_gated_uw: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    retention_uw: Option<f64>,
}

impl From<DomainEntry> for DomainModel {
    fn from(e: DomainEntry) -> Self {
        Self {
            kind: e.kind,
            power: DomainPower {
                active_uw: e.active_uw,
                clock_gated_uw: e.clock_gated_uw,
                power_gated_uw: e.power_gated_uw,
                retention_uw: e.retention_uw,
            },
        }
    }
}

impl From<DomainModel> for DomainEntry {
    fn from(m: DomainModel) -> Self {
        Self {
            kind: m.kind,
            active_uw: m.power.active_uw,
            clock_gated_uw: m.power.clock_gated_uw,
            power_gated_uw: m.power.power_gated_uw,
            retention_uw: m.power.retention_uw,
        }
    }
}

/// Per-domain, per-state average power table plus technology metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyModel {
    pub technology: String,
    pub voltage_v: f64,
    pub ref_freq_hz: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
    pub domains: BTreeMap<String, DomainModel>,
}

impl EnergyModel {
    pub fn from_json(text: &str) -> Result<Self, ParseError> {
        json::parse(text)
    }

    pub fn to_json(&self) -> String {
        json::to_pretty(self)
    }

    /// The platform implied by the model's own domain entries.
    pub fn platform(&self) -> Vec<DomainSpec> {
        self.domains
            .iter()
            .map(|(id, entry)| DomainSpec::new(id.clone(), id.clone(), entry.kind))
            .collect()
    }

    /// Model with every power scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for entry in out.domains.values_mut() {
            entry.power = entry.power.scaled(factor);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("clock frequency must be positive")]
    InvalidClock,
    #[error("platform has no domains")]
    EmptyPlatform,
    #[error("domain `{0}` declared twice in the platform")]
    DuplicateDomain(String),
    #[error("energy model has no entry for domain `{0}`")]
    MissingDomain(String),
    #[error("energy model entry `{0}` matches no platform domain")]
    UnknownDomain(String),
    #[error("domains.{domain}.{field}: negative power {value}")]
    NegativePower {
        domain: String,
        field: &'static str,
        value: f64,
    },
    #[error("domains.{domain}.{field}: power must be finite")]
    NonFinitePower { domain: String, field: &'static str },
    #[error("domains.{0}.retention_uw: retention is only legal on memory domains")]
    RetentionOnLogicDomain(String),
    #[error("domains.{0}.kind: does not match the platform declaration")]
    KindMismatch(String),
    #[error("ref_freq_hz: must be positive")]
    InvalidReferenceFrequency,
    #[error("domain id `{0}` present in both models")]
    DomainIdCollision(String),
}

/// Non-fatal findings attached to a validated model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ModelWarning {
    /// Power does not decrease from `higher` to `lower` state.
    NonMonotonic {
        domain: String,
        higher: PowerState,
        lower: PowerState,
    },
}

impl fmt::Display for ModelWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelWarning::NonMonotonic { domain, higher, lower } => {
                write!(f, "domain `{domain}`: {higher} power below {lower} power")
            }
        }
    }
}

/// An energy model that passed [`validate_energy_model`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedModel {
    pub model: EnergyModel,
    pub warnings: Vec<ModelWarning>,
}

/// Checks `platform` on its own: at least one domain, unique ids.
pub fn validate_platform(platform: &[DomainSpec]) -> Result<(), Vec<ModelError>> {
    let mut errors = Vec::new();
    if platform.is_empty() {
        errors.push(ModelError::EmptyPlatform);
    }
    let mut seen = std::collections::BTreeSet::new();
    for domain in platform {
        if !seen.insert(domain.id.as_str()) {
            errors.push(ModelError::DuplicateDomain(domain.id.clone()));
        }
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

/// Accepts `model` iff it covers exactly `platform` with non-negative, finite powers.
pub fn validate_energy_model(model: &EnergyModel, platform: &[DomainSpec]) -> Result<ValidatedModel, Vec<ModelError>> {
    let mut errors = validate_platform(platform).err().unwrap_or_default();
    let mut warnings = Vec::new();

    if model.ref_freq_hz == 0 {
        errors.push(ModelError::InvalidReferenceFrequency);
    }
    for domain in platform {
        match model.domains.get(&domain.id) {
            None => errors.push(ModelError::MissingDomain(domain.id.clone())),
            Some(entry) if entry.kind != domain.kind => errors.push(ModelError::KindMismatch(domain.id.clone())),
            Some(_) => {}
        }
    }
    for (id, entry) in &model.domains {
        if !platform.iter().any(|d| &d.id == id) {
            errors.push(ModelError::UnknownDomain(id.clone()));
        }
        if entry.kind == DomainKind::Logic && entry.power.retention_uw.is_some() {
            errors.push(ModelError::RetentionOnLogicDomain(id.clone()));
        }
        for (field, value) in entry.power.fields() {
            if !value.is_finite() {
                errors.push(ModelError::NonFinitePower {
                    domain: id.clone(),
                    field,
                });
            } else if value < 0.0 {
                errors.push(ModelError::NegativePower {
                    domain: id.clone(),
                    field,
                    value,
                });
            }
        }
        let p = &entry.power;
        let ladder = [
            (PowerState::Active, p.active_uw),
            (PowerState::ClockGated, p.clock_gated_uw),
            (PowerState::PowerGated, p.power_gated_uw),
        ];
        for pair in ladder.windows(2) {
            if pair[0].1 < pair[1].1 {
                warnings.push(ModelWarning::NonMonotonic {
                    domain: id.clone(),
                    higher: pair[0].0,
                    lower: pair[1].0,
                });
            }
        }
    }

    if errors.is_empty() {
        Ok(ValidatedModel {
            model: model.clone(),
            warnings,
        })
    } else {
        Err(errors)
    }
}

/// Union of a host model and an accelerator model over disjoint domain sets.
///
/// Voltage and reference frequency are taken from `host`. Merging with a
/// model that has no domains returns the other model unchanged.
pub fn merge_models(host: &EnergyModel, accel: &EnergyModel) -> Result<EnergyModel, ModelError> {
    if accel.domains.is_empty() {
        return Ok(host.clone());
    }
    if host.domains.is_empty() {
        return Ok(accel.clone());
    }
    if let Some(id) = accel.domains.keys().find(|id| host.domains.contains_key(*id)) {
        return Err(ModelError::DomainIdCollision(id.clone()));
    }
    let mut domains = host.domains.clone();
    domains.extend(accel.domains.iter().map(|(k, v)| (k.clone(), v.clone())));
    Ok(EnergyModel {
        technology: format!("{}+{}", host.technology, accel.technology),
        voltage_v: host.voltage_v,
        ref_freq_hz: host.ref_freq_hz,
        notes: host.notes.clone(),
        domains,
    })
}

/// Cycle counts of one domain, one per power state.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateCycles {
    pub active: u64,
    pub clock_gated: u64,
    pub power_gated: u64,
    pub retention: u64,
}

impl StateCycles {
    pub fn get(&self, state: PowerState) -> u64 {
        match state {
            PowerState::Active => self.active,
            PowerState::ClockGated => self.clock_gated,
            PowerState::PowerGated => self.power_gated,
            PowerState::Retention => self.retention,
        }
    }

    fn slot(&mut self, state: PowerState) -> &mut u64 {
        match state {
            PowerState::Active => &mut self.active,
            PowerState::ClockGated => &mut self.clock_gated,
            PowerState::PowerGated => &mut self.power_gated,
            PowerState::Retention => &mut self.retention,
        }
    }

    pub fn add(&mut self, state: PowerState, cycles: u64) -> Option<()> {
        let slot = self.slot(state);
        *slot = slot.checked_add(cycles)?;
        Some(())
    }

    /// Sum over states; `None` on overflow.
    pub fn total(&self) -> Option<u64> {
        PowerState::ALL
            .iter()
            .try_fold(0u64, |acc, s| acc.checked_add(self.get(*s)))
    }

    pub fn sleep(&self) -> u64 {
        self.clock_gated + self.power_gated + self.retention
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("64-bit cycle counter overflow on domain `{domain}` ({state})")]
pub struct CounterOverflow {
    pub domain: String,
    pub state: PowerState,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("domain `{domain}`: state cycles sum to {sum:?}, window is {window}")]
pub struct ConservationViolation {
    pub domain: String,
    /// `None` when the sum itself overflows.
    pub sum: Option<u64>,
    pub window: u64,
}

/// Per-domain cycles spent in each power state over one counting window.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateCounters {
    pub window_cycles: u64,
    pub cycles: BTreeMap<String, StateCycles>,
}

impl StateCounters {
    pub fn zeroed<'a>(domains: impl IntoIterator<Item = &'a str>) -> Self {
        Self {
            window_cycles: 0,
            cycles: domains
                .into_iter()
                .map(|id| (id.to_string(), StateCycles::default()))
                .collect(),
        }
    }

    pub fn domain(&self, id: &str) -> Option<&StateCycles> {
        self.cycles.get(id)
    }

    pub fn add(&mut self, domain: &str, state: PowerState, cycles: u64) -> Result<(), CounterOverflow> {
        let overflow = || CounterOverflow {
            domain: domain.to_string(),
            state,
        };
        if let Some(slot) = self.cycles.get_mut(domain) {
            return slot.add(state, cycles).ok_or_else(overflow);
        }
        self.cycles
            .entry(domain.to_string())
            .or_default()
            .add(state, cycles)
            .ok_or_else(overflow)
    }

    pub fn check_conservation(&self) -> Result<(), ConservationViolation> {
        for (domain, cycles) in &self.cycles {
            let sum = cycles.total();
            if sum != Some(self.window_cycles) {
                return Err(ConservationViolation {
                    domain: domain.clone(),
                    sum,
                    window: self.window_cycles,
                });
            }
        }
        Ok(())
    }

    /// Adds `other` into `self` domain by domain (window lengths add too).
    pub fn accumulate(&mut self, other: &StateCounters) -> Result<(), CounterOverflow> {
        for (domain, cycles) in &other.cycles {
            for state in PowerState::ALL {
                self.add(domain, state, cycles.get(state))?;
            }
        }
        self.window_cycles = self
            .window_cycles
            .checked_add(other.window_cycles)
            .ok_or_else(|| CounterOverflow {
                domain: "<window>".into(),
                state: PowerState::Active,
            })?;
        Ok(())
    }
}
