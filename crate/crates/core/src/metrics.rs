//! Counter snapshots and the state-residency energy estimator.
//!
//! `energy[d][s] = power_uw[d][s] * 1e-6 * cycles[d][s] / freq_hz`, summed
//! domain-major, state-minor in `PowerState::ALL` order.

use crate::engine::SimOutcome;
use crate::model::{ClockConfig, ConservationViolation, EnergyModel, PowerState, StateCounters};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterMode {
    #[default]
    Automatic,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("manual counters requested but the program has no markers")]
    NoMarkersPresent,
    #[error("counters and energy model disagree: {0}")]
    ModelMismatch(String),
    #[error(transparent)]
    ConservationViolation(#[from] ConservationViolation),
}

pub fn counters_snapshot(outcome: &SimOutcome, mode: CounterMode) -> Result<StateCounters, MetricsError> {
    match mode {
        CounterMode::Automatic => Ok(outcome.counters.clone()),
        CounterMode::Manual if outcome.has_markers => Ok(outcome.manual.clone()),
        CounterMode::Manual => Err(MetricsError::NoMarkersPresent),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateEnergy {
    pub cycles: u64,
    pub time_s: f64,
    pub power_uw: f64,
    pub energy_j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainEnergy {
    pub states: BTreeMap<PowerState, StateEnergy>,
    pub total_j: f64,
    pub active_j: f64,
    pub sleep_j: f64,
    pub active_time_share: f64,
    pub sleep_time_share: f64,
    pub active_energy_share: f64,
    pub sleep_energy_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEcho {
    pub technology: String,
    pub voltage_v: f64,
    pub ref_freq_hz: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

/// Active/sleep split of a report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub active_time_share: f64,
    pub sleep_time_share: f64,
    pub active_energy_share: f64,
    pub sleep_energy_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub schema_version: u32,
    pub freq_hz: u64,
    pub window_cycles: u64,
    pub window_s: f64,
    pub domains: BTreeMap<String, DomainEnergy>,
    pub total_energy_j: f64,
    pub active_energy_j: f64,
    pub sleep_energy_j: f64,
    /// Cycle-weighted over domains.
    pub breakdown: Breakdown,
    pub model: ModelEcho,
}

fn share(part: f64, whole: f64) -> f64 {
    if whole > 0.0 {
        part / whole
    } else {
        0.0
    }
}

fn cycle_share(part: u128, whole: u128) -> f64 {
    if whole == 0 {
        0.0
    } else {
        part as f64 / whole as f64
    }
}

pub fn estimate_energy(
    counters: &StateCounters,
    model: &EnergyModel,
    clock: ClockConfig,
) -> Result<EnergyReport, MetricsError> {
    counters.check_conservation()?;
    for id in model.domains.keys() {
        if !counters.cycles.contains_key(id) {
            return Err(MetricsError::ModelMismatch(format!(
                "no counters for model domain `{id}`"
            )));
        }
    }
    let freq = clock.freq_hz() as f64;
    let window = counters.window_cycles;
    let mut domains = BTreeMap::new();
    let (mut total, mut active_total, mut sleep_total) = (0.0f64, 0.0f64, 0.0f64);
    let (mut active_cycles, mut all_cycles) = (0u128, 0u128);
    for (id, cycles) in &counters.cycles {
        let dm = model
            .domains
            .get(id)
            .ok_or_else(|| MetricsError::ModelMismatch(format!("domain `{id}` missing from the energy model")))?;
        let mut states = BTreeMap::new();
        let (mut d_total, mut d_active, mut d_sleep) = (0.0f64, 0.0f64, 0.0f64);
        for state in PowerState::ALL {
            let n = cycles.get(state);
            let power = match dm.power.power_uw(state) {
                Some(p) => p,
                None if n == 0 => continue,
                None => {
                    return Err(MetricsError::ModelMismatch(format!(
                        "domain `{id}` spent {n} cycles in {state} but the model has no {state} power"
                    )))
                }
            };
            let energy = power * 1e-6 * n as f64 / freq;
            d_total += energy;
            if state == PowerState::Active {
                d_active += energy;
            } else {
                d_sleep += energy;
            }
            states.insert(
                state,
                StateEnergy {
                    cycles: n,
                    time_s: n as f64 / freq,
                    power_uw: power,
                    energy_j: energy,
                },
            );
        }
        active_cycles += cycles.active as u128;
        all_cycles += window as u128;
        domains.insert(
            id.clone(),
            DomainEnergy {
                states,
                total_j: d_total,
                active_j: d_active,
                sleep_j: d_sleep,
                active_time_share: cycle_share(cycles.active as u128, window as u128),
                sleep_time_share: cycle_share(cycles.sleep() as u128, window as u128),
                active_energy_share: share(d_active, d_total),
                sleep_energy_share: share(d_sleep, d_total),
            },
        );
        total += d_total;
        active_total += d_active;
        sleep_total += d_sleep;
    }
    Ok(EnergyReport {
        schema_version: REPORT_SCHEMA_VERSION,
        freq_hz: clock.freq_hz(),
        window_cycles: window,
        window_s: window as f64 / freq,
        domains,
        total_energy_j: total,
        active_energy_j: active_total,
        sleep_energy_j: sleep_total,
        breakdown: Breakdown {
            active_time_share: cycle_share(active_cycles, all_cycles),
            sleep_time_share: cycle_share(all_cycles - active_cycles, all_cycles),
            active_energy_share: share(active_total, total),
            sleep_energy_share: share(sleep_total, total),
        },
        model: ModelEcho {
            technology: model.technology.clone(),
            voltage_v: model.voltage_v,
            ref_freq_hz: model.ref_freq_hz,
            notes: model.notes.clone(),
        },
    })
}

pub fn breakdown(report: &EnergyReport) -> Breakdown {
    report.breakdown
}

impl EnergyReport {
    pub fn to_json(&self) -> String {
        crate::json::to_pretty(self)
    }

    /// One row per (domain, state).
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["domain", "state", "cycles", "time_s", "power_uw", "energy_j"])
            .expect("in-memory write");
        for (id, d) in &self.domains {
            for (state, e) in &d.states {
                w.write_record([
                    id.as_str(),
                    state.as_str(),
                    &e.cycles.to_string(),
                    &e.time_s.to_string(),
                    &e.power_uw.to_string(),
                    &e.energy_j.to_string(),
                ])
                .expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DomainKind, DomainModel, DomainPower, StateCycles};

    fn model(domains: Vec<(&str, DomainKind, DomainPower)>) -> EnergyModel {
        EnergyModel {
            technology: "test".into(),
            voltage_v: 1.2,
            ref_freq_hz: 20_000_000,
            notes: None,
            domains: domains
                .into_iter()
                .map(|(id, kind, power)| (id.to_string(), DomainModel { kind, power }))
                .collect(),
        }
    }

    #[test]
    fn one_milliwatt_for_one_second() {
        let m = model(vec![("cpu", DomainKind::Logic, DomainPower::logic(1000.0, 0.0, 0.0))]);
        let mut c = StateCounters::zeroed(["cpu"]);
        c.window_cycles = 20_000_000;
        c.add("cpu", PowerState::Active, 20_000_000).unwrap();
        let r = estimate_energy(&c, &m, ClockConfig::default()).unwrap();
        assert!((r.total_energy_j - 1e-3).abs() < 1e-15);
        assert_eq!(r.breakdown.active_time_share, 1.0);
    }

    #[test]
    fn two_domain_example() {
        let m = model(vec![
            ("cpu", DomainKind::Logic, DomainPower::logic(800.0, 100.0, 1.0)),
            ("mem", DomainKind::Memory, DomainPower::memory(150.0, 50.0, 1.0, 20.0)),
        ]);
        let mut c = StateCounters::zeroed(["cpu", "mem"]);
        c.window_cycles = 2_000_000;
        c.add("cpu", PowerState::Active, 1_000_000).unwrap();
        c.add("cpu", PowerState::ClockGated, 1_000_000).unwrap();
        c.add("mem", PowerState::Retention, 2_000_000).unwrap();
        let r = estimate_energy(&c, &m, ClockConfig::default()).unwrap();
        // 800uW * 50ms + 100uW * 50ms = 45uJ; 20uW * 100ms = 2uJ
        assert!((r.domains["cpu"].total_j - 45e-6).abs() < 1e-18);
        assert!((r.domains["mem"].total_j - 2e-6).abs() < 1e-18);
        assert!((r.total_energy_j - 47e-6).abs() < 1e-18);
        assert_eq!(r.breakdown.active_time_share, 0.25);
    }

    #[test]
    fn missing_retention_power_is_a_mismatch() {
        let m = model(vec![("cpu", DomainKind::Logic, DomainPower::logic(1.0, 1.0, 1.0))]);
        let mut c = StateCounters::zeroed(["cpu"]);
        c.window_cycles = 10;
        c.add("cpu", PowerState::Retention, 10).unwrap();
        assert!(matches!(
            estimate_energy(&c, &m, ClockConfig::default()),
            Err(MetricsError::ModelMismatch(_))
        ));
    }

    #[test]
    fn unknown_domain_and_broken_conservation() {
        let m = model(vec![("cpu", DomainKind::Logic, DomainPower::logic(1.0, 1.0, 1.0))]);
        let mut c = StateCounters::zeroed(["cpu", "dsp"]);
        c.window_cycles = 0;
        assert!(matches!(
            estimate_energy(&c, &m, ClockConfig::default()),
            Err(MetricsError::ModelMismatch(_))
        ));
        let mut c = StateCounters::zeroed(["cpu"]);
        c.window_cycles = 5;
        c.cycles.insert(
            "cpu".into(),
            StateCycles {
                active: 4,
                ..Default::default()
            },
        );
        assert!(matches!(
            estimate_energy(&c, &m, ClockConfig::default()),
            Err(MetricsError::ConservationViolation(_))
        ));
    }

    #[test]
    fn empty_window_has_zero_shares() {
        let m = model(vec![("cpu", DomainKind::Logic, DomainPower::logic(1.0, 1.0, 1.0))]);
        let r = estimate_energy(&StateCounters::zeroed(["cpu"]), &m, ClockConfig::default()).unwrap();
        assert_eq!(r.total_energy_j, 0.0);
        assert_eq!(r.breakdown.active_time_share, 0.0);
        assert_eq!(r.breakdown.sleep_time_share, 0.0);
    }

    #[test]
    fn csv_has_a_row_per_domain_state() {
        let m = model(vec![("cpu", DomainKind::Logic, DomainPower::logic(1.0, 1.0, 1.0))]);
        let mut c = StateCounters::zeroed(["cpu"]);
        c.window_cycles = 3;
        c.add("cpu", PowerState::Active, 3).unwrap();
        let csv = estimate_energy(&c, &m, ClockConfig::default()).unwrap().to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "domain,state,cycles,time_s,power_uw,energy_j");
        assert_eq!(lines.len(), 1 + 3);
    }
}
