//! Deterministic discrete-event engine.
//!
//! The host is modelled at phase granularity: each [`Phase`] changes power
//! states and schedules the events that end it. Between two consecutive
//! events every domain sits in exactly one power state, and the elapsed
//! cycles are charged to that state, so per-domain counters always sum to
//! the window length.
//!
//! Domain rules:
//! - host logic domains follow the host state;
//! - memory domains are active while the host or any accelerator is, and
//!   otherwise clock-gated (host clock-gated) or in retention (host
//!   power-gated), unless [`MemoryPolicy::AlwaysActive`] is selected;
//! - an RTL-stage accelerator domain is active while it computes and sits
//!   in `accel_idle_state` otherwise.

mod program;
mod queue;

pub use program::{validate_program, MarkerAction, Phase, ProgramError, TimingTable, WorkloadProgram};
pub use queue::{EventQueue, Priority, Scheduled};

use crate::accel::Stage;
use crate::model::{CounterOverflow, DomainKind, PowerState, StateCounters};
use crate::periph::adc::{
    self, AdcConfig, AdcError, AdcSession, HardFifo, Pop, SampleSource, SoftFifo, UnderrunPolicy,
};
use crate::periph::flash::{Direction, FlashConfig, FlashError, VirtualFlash};
use crate::platform::{Platform, HOST_TARGET};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error(transparent)]
    Program(#[from] ProgramError),
    #[error("engine configuration: {0}")]
    Config(String),
    #[error(transparent)]
    CounterOverflow(#[from] CounterOverflow),
    #[error("ADC FIFO underrun at cycle {at}")]
    FifoUnderrun { at: u64 },
    #[error(transparent)]
    Adc(AdcError),
    #[error(transparent)]
    Flash(#[from] FlashError),
    #[error("program finished")]
    ProgramFinished,
    #[error("engine halted on an earlier error: {0}")]
    Faulted(String),
}

impl From<AdcError> for SimError {
    fn from(err: AdcError) -> Self {
        match err {
            AdcError::Underrun { at } => SimError::FifoUnderrun { at },
            other => SimError::Adc(other),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryPolicy {
    #[default]
    FollowHost,
    AlwaysActive,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffloadWait {
    #[default]
    ClockGated,
    ActivePolling,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdcSetup {
    #[serde(default)]
    pub soft: SoftFifo,
    #[serde(default)]
    pub hard: HardFifo,
    #[serde(default)]
    pub underrun_policy: UnderrunPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    /// Host state between samples of an acquisition.
    #[serde(default = "clock_gated")]
    pub acquire_sleep: PowerState,
    #[serde(default)]
    pub offload_wait: OffloadWait,
    #[serde(default)]
    pub memory_policy: MemoryPolicy,
    #[serde(default = "power_gated")]
    pub accel_idle_state: PowerState,
    /// Active cycles added whenever the host leaves a sleep state.
    #[serde(default)]
    pub wake_latency_cycles: u64,
    #[serde(default)]
    pub record_events: bool,
    #[serde(default)]
    pub adc: AdcSetup,
    #[serde(default)]
    pub flash: FlashConfig,
}

fn clock_gated() -> PowerState {
    PowerState::ClockGated
}
fn power_gated() -> PowerState {
    PowerState::PowerGated
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            acquire_sleep: PowerState::ClockGated,
            offload_wait: OffloadWait::ClockGated,
            memory_policy: MemoryPolicy::FollowHost,
            accel_idle_state: PowerState::PowerGated,
            wake_latency_cycles: 0,
            record_events: false,
            adc: AdcSetup::default(),
            flash: FlashConfig::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let sleepy = |s: PowerState| matches!(s, PowerState::ClockGated | PowerState::PowerGated);
        if !sleepy(self.acquire_sleep) {
            return Err(SimError::Config(
                "acquire_sleep must be clock_gated or power_gated".into(),
            ));
        }
        if !sleepy(self.accel_idle_state) {
            return Err(SimError::Config(
                "accel_idle_state must be clock_gated or power_gated".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
enum Resume {
    PhaseDone,
    SampleDone,
    StallRetry,
    WindowEnd,
    HandshakeDone,
    AccelDone,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
enum Event {
    Refill,
    SampleReady(u64),
    Resume(Resume),
    Marker(MarkerAction),
}

#[derive(Debug, Clone, Serialize)]
struct AcquireProgress {
    session: AdcSession,
    n: u64,
    per_sample: u64,
    fs_hz: u64,
    start: u64,
    pending: u64,
    busy: bool,
    stalled: bool,
    processed: u64,
    window_end: bool,
    refill_scheduled: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
enum Progress {
    Simple,
    Sleep {
        waking: bool,
    },
    Acquire(Box<AcquireProgress>),
    Offload {
        rep: u64,
        reps: u64,
        handshake: u64,
        accel_cycles: u64,
        domain: String,
    },
}

#[derive(Debug, Clone, Serialize)]
struct ActivePhase {
    index: usize,
    start: u64,
    cycles: u64,
    at_start: StateCounters,
    progress: Progress,
}

/// Cycles attributed to one executed phase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseAttribution {
    pub index: usize,
    pub op: String,
    pub start_cycle: u64,
    pub cycles: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdcTotals {
    pub samples: u64,
    pub refills: u64,
    pub underruns: u64,
    pub stall_cycles: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlashTotals {
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub transfer_cycles: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoggedEvent {
    pub time: u64,
    pub seq: u64,
    pub event: String,
}

/// Result of a run, a bounded run, or the current engine snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutcome {
    pub program: String,
    pub finished: bool,
    pub now_cycles: u64,
    /// Automatic mode: first phase to last.
    pub counters: StateCounters,
    /// Manual mode: union of marker windows.
    pub manual: StateCounters,
    pub has_markers: bool,
    pub phases: Vec<PhaseAttribution>,
    pub adc: AdcTotals,
    pub flash: FlashTotals,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub events: Option<Vec<LoggedEvent>>,
    /// Host time spent simulating; not part of the serialized outcome.
    #[serde(skip)]
    pub host_wall_time: Duration,
}

/// What one [`Engine::step_phase`] call did.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseResult {
    pub index: usize,
    pub op: String,
    pub cycles: u64,
    /// `(domain, state) -> cycles` for every state the phase touched.
    pub states: BTreeMap<String, BTreeMap<PowerState, u64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Engine {
    platform: Platform,
    program: WorkloadProgram,
    timing: TimingTable,
    config: EngineConfig,
    initial_source: SampleSource,
    initial_flash: VirtualFlash,

    now: u64,
    host_state: PowerState,
    accel_running: Option<String>,
    domain_state: BTreeMap<String, PowerState>,
    counters: StateCounters,
    manual: StateCounters,
    manual_open: bool,
    queue: EventQueue<Event>,
    next_phase: usize,
    current: Option<ActivePhase>,
    phases: Vec<PhaseAttribution>,
    source_cursor: usize,
    flash: VirtualFlash,
    adc_totals: AdcTotals,
    flash_totals: FlashTotals,
    last_samples: Vec<i16>,
    events: Vec<LoggedEvent>,
    fault: Option<String>,
    #[serde(skip)]
    wall: Duration,
}

/// Loads `program` with the default engine configuration, a synthetic sample
/// source sized for the program's acquisitions, and blank flash.
pub fn load_program(program: WorkloadProgram, timing: TimingTable, platform: Platform) -> Result<Engine, SimError> {
    let samples: u64 = program
        .phases
        .iter()
        .map(|p| match p {
            Phase::Acquire { n_samples, .. } => *n_samples,
            _ => 0,
        })
        .sum();
    let source = SampleSource::synthetic(samples.max(1) as usize, 0);
    Engine::load(program, timing, platform, EngineConfig::default(), source, None)
}

impl Engine {
    /// Validates inputs and returns an engine at cycle 0 with every domain active.
    ///
    /// `flash` defaults to blank storage using `config.flash`.
    pub fn load(
        program: WorkloadProgram,
        timing: TimingTable,
        platform: Platform,
        config: EngineConfig,
        source: SampleSource,
        flash: Option<VirtualFlash>,
    ) -> Result<Self, SimError> {
        validate_program(&program, &timing, &platform)?;
        config.validate()?;
        let flash = match flash {
            Some(f) => f,
            None => VirtualFlash::new(config.flash)?,
        };
        Ok(Self::fresh(program, timing, platform, config, source, flash))
    }

    fn fresh(
        program: WorkloadProgram,
        timing: TimingTable,
        platform: Platform,
        config: EngineConfig,
        source: SampleSource,
        flash: VirtualFlash,
    ) -> Self {
        let ids: Vec<&str> = platform.domains().iter().map(|d| d.id.as_str()).collect();
        let counters = StateCounters::zeroed(ids.iter().copied());
        let domain_state = ids.iter().map(|id| (id.to_string(), PowerState::Active)).collect();
        Self {
            initial_source: source.clone(),
            initial_flash: flash.clone(),
            now: 0,
            host_state: PowerState::Active,
            accel_running: None,
            domain_state,
            manual: counters.clone(),
            counters,
            manual_open: false,
            queue: EventQueue::default(),
            next_phase: 0,
            current: None,
            phases: Vec::new(),
            source_cursor: source.cursor(),
            flash,
            adc_totals: AdcTotals::default(),
            flash_totals: FlashTotals::default(),
            last_samples: Vec::new(),
            events: Vec::new(),
            fault: None,
            wall: Duration::ZERO,
            platform,
            program,
            timing,
            config,
        }
    }

    /// Back to the freshly loaded state: cycle 0, counters zeroed, domains
    /// active, program rewound, flash restored to its load-time image.
    pub fn reset(&mut self) {
        let fresh = Self::fresh(
            self.program.clone(),
            self.timing.clone(),
            self.platform.clone(),
            self.config,
            self.initial_source.clone(),
            self.initial_flash.clone(),
        );
        *self = fresh;
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn program(&self) -> &WorkloadProgram {
        &self.program
    }

    pub fn platform(&self) -> &Platform {
        &self.platform
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn flash(&self) -> &VirtualFlash {
        &self.flash
    }

    /// Live flash; writes here are lost on [`Engine::reset`].
    pub fn flash_mut(&mut self) -> &mut VirtualFlash {
        &mut self.flash
    }

    pub fn domain_state(&self) -> &BTreeMap<String, PowerState> {
        &self.domain_state
    }

    pub fn is_finished(&self) -> bool {
        self.current.is_none() && self.next_phase >= self.program.phases.len()
    }

    /// Full serialized state, used to check reset and replay equivalence.
    pub fn snapshot_json(&self) -> String {
        serde_json::to_string(self).expect("engine state serializes")
    }

    pub fn outcome(&self) -> SimOutcome {
        SimOutcome {
            program: self.program.name.clone(),
            finished: self.is_finished(),
            now_cycles: self.now,
            counters: self.counters.clone(),
            manual: self.manual.clone(),
            has_markers: self.program.has_markers(),
            phases: self.phases.clone(),
            adc: self.adc_totals,
            flash: self.flash_totals,
            events: self.config.record_events.then(|| self.events.clone()),
            host_wall_time: self.wall,
        }
    }

    fn check_fault(&self) -> Result<(), SimError> {
        match &self.fault {
            Some(msg) => Err(SimError::Faulted(msg.clone())),
            None => Ok(()),
        }
    }

    fn record_fault<T>(&mut self, result: Result<T, SimError>) -> Result<T, SimError> {
        if let Err(err) = &result {
            self.fault = Some(err.to_string());
        }
        result
    }

    /// Runs to program end, or until the next event would fall after `limit`.
    pub fn run_until(&mut self, limit: Option<u64>) -> Result<SimOutcome, SimError> {
        self.check_fault()?;
        let started = Instant::now();
        let result = self.run_inner(limit);
        self.wall += started.elapsed();
        self.record_fault(result)?;
        Ok(self.outcome())
    }

    pub fn run_to_end(&mut self) -> Result<SimOutcome, SimError> {
        self.run_until(None)
    }

    fn run_inner(&mut self, limit: Option<u64>) -> Result<(), SimError> {
        loop {
            if self.current.is_none() {
                if self.next_phase >= self.program.phases.len() {
                    return Ok(());
                }
                if limit.is_some_and(|l| self.now > l) {
                    return Ok(());
                }
                self.begin_phase()?;
            }
            let next = self
                .queue
                .peek_time()
                .expect("an active phase always has a pending event");
            if let Some(l) = limit {
                if next > l {
                    self.advance(l.max(self.now))?;
                    return Ok(());
                }
            }
            self.process_next()?;
        }
    }

    /// Runs exactly one phase (finishing the current one if a bounded run stopped inside it).
    pub fn step_phase(&mut self) -> Result<PhaseResult, SimError> {
        self.check_fault()?;
        if self.is_finished() {
            return Err(SimError::ProgramFinished);
        }
        let started = Instant::now();
        let result = self.step_inner();
        self.wall += started.elapsed();
        self.record_fault(result)
    }

    fn step_inner(&mut self) -> Result<PhaseResult, SimError> {
        if self.current.is_none() {
            self.begin_phase()?;
        }
        let (index, at_start) = {
            let cur = self.current.as_ref().expect("phase begun");
            (cur.index, cur.at_start.clone())
        };
        while self.current.is_some() {
            self.process_next()?;
        }
        let attribution = self.phases.last().expect("phase completed").clone();
        debug_assert_eq!(attribution.index, index);
        let mut states: BTreeMap<String, BTreeMap<PowerState, u64>> = BTreeMap::new();
        for (domain, now) in &self.counters.cycles {
            let before = at_start.domain(domain).copied().unwrap_or_default();
            for state in PowerState::ALL {
                let delta = now.get(state) - before.get(state);
                if delta > 0 {
                    states.entry(domain.clone()).or_default().insert(state, delta);
                }
            }
        }
        Ok(PhaseResult {
            index,
            op: attribution.op,
            cycles: attribution.cycles,
            states,
        })
    }

    fn schedule(&mut self, time: u64, priority: Priority, event: Event) {
        self.queue.push(time, priority, event);
    }

    fn at(&self, delta: u64) -> Result<u64, SimError> {
        self.now.checked_add(delta).ok_or_else(|| {
            SimError::CounterOverflow(CounterOverflow {
                domain: "<time>".into(),
                state: self.host_state,
            })
        })
    }

    fn advance(&mut self, t: u64) -> Result<(), SimError> {
        let dt = t - self.now;
        if dt == 0 {
            return Ok(());
        }
        let overflow = |state| CounterOverflow {
            domain: "<window>".into(),
            state,
        };
        for (domain, state) in &self.domain_state {
            self.counters.add(domain, *state, dt)?;
            if self.manual_open {
                self.manual.add(domain, *state, dt)?;
            }
        }
        self.counters.window_cycles = self
            .counters
            .window_cycles
            .checked_add(dt)
            .ok_or_else(|| overflow(self.host_state))?;
        if self.manual_open {
            self.manual.window_cycles = self
                .manual
                .window_cycles
                .checked_add(dt)
                .ok_or_else(|| overflow(self.host_state))?;
        }
        if let Some(cur) = &mut self.current {
            cur.cycles += dt;
        }
        self.now = t;
        Ok(())
    }

    fn apply_states(&mut self) {
        let host = self.host_state;
        let accel_active = self.accel_running.is_some();
        for domain in self.platform.domains() {
            let state = if self.platform.is_accel_domain(&domain.id) {
                if self.accel_running.as_deref() == Some(domain.id.as_str()) {
                    PowerState::Active
                } else {
                    self.config.accel_idle_state
                }
            } else {
                match domain.kind {
                    DomainKind::Logic => host,
                    DomainKind::Memory => {
                        if self.config.memory_policy == MemoryPolicy::AlwaysActive
                            || host == PowerState::Active
                            || accel_active
                        {
                            PowerState::Active
                        } else if host == PowerState::PowerGated {
                            PowerState::Retention
                        } else {
                            PowerState::ClockGated
                        }
                    }
                }
            };
            if let Some(slot) = self.domain_state.get_mut(&domain.id) {
                *slot = state;
            }
        }
    }

    fn set_host(&mut self, state: PowerState) {
        self.host_state = state;
        self.apply_states();
    }

    fn begin_phase(&mut self) -> Result<(), SimError> {
        let index = self.next_phase;
        self.next_phase += 1;
        let phase = self.program.phases[index].clone();
        self.current = Some(ActivePhase {
            index,
            start: self.now,
            cycles: 0,
            at_start: self.counters.clone(),
            progress: Progress::Simple,
        });
        let clock = self.platform.clock();
        match phase {
            Phase::Compute { kernel, target, reps } => {
                if target == HOST_TARGET {
                    let per_rep = self.timing.get(&kernel, &target).expect("validated at load");
                    let cycles = per_rep.checked_mul(reps).ok_or_else(|| self.time_overflow())?;
                    self.set_host(PowerState::Active);
                    let done = self.at(cycles)?;
                    self.schedule(done, Priority::HostResume, Event::Resume(Resume::PhaseDone));
                } else {
                    let spec = self.platform.accelerator(&target).expect("validated at load").clone();
                    let handshake = spec.handshake_cycles();
                    match spec.stage {
                        Stage::SoftwareModel => {
                            let cycles = handshake.checked_mul(reps).ok_or_else(|| self.time_overflow())?;
                            self.set_host(PowerState::Active);
                            let done = self.at(cycles)?;
                            self.schedule(done, Priority::HostResume, Event::Resume(Resume::PhaseDone));
                        }
                        Stage::RtlStage => {
                            let accel_cycles = self
                                .timing
                                .resolve(&kernel, &target, &self.platform)
                                .expect("validated at load");
                            let domain = self.platform.accel_domain(&target).expect("RTL stage has a domain");
                            self.set_progress(Progress::Offload {
                                rep: 0,
                                reps,
                                handshake,
                                accel_cycles,
                                domain,
                            });
                            self.start_handshake(handshake)?;
                        }
                    }
                }
            }
            Phase::Acquire {
                fs_hz,
                n_samples,
                per_sample_cpu_cycles,
            } => {
                if n_samples == 0 {
                    self.schedule(self.now, Priority::HostResume, Event::Resume(Resume::PhaseDone));
                } else {
                    let setup = self.config.adc;
                    let session = adc::configure_adc(
                        self.initial_source.at(self.source_cursor),
                        AdcConfig {
                            fs_hz,
                            underrun_policy: setup.underrun_policy,
                        },
                        setup.soft,
                        setup.hard,
                        clock.freq_hz(),
                    )?;
                    self.last_samples.clear();
                    let start = self.now;
                    self.set_progress(Progress::Acquire(Box::new(AcquireProgress {
                        session,
                        n: n_samples,
                        per_sample: per_sample_cpu_cycles,
                        fs_hz,
                        start,
                        pending: 0,
                        busy: false,
                        stalled: false,
                        processed: 0,
                        window_end: false,
                        refill_scheduled: None,
                    })));
                    self.schedule(start, Priority::SampleReady, Event::SampleReady(0));
                }
            }
            Phase::Sleep { mode, duration_cycles } => {
                self.set_host(mode);
                self.set_progress(Progress::Sleep { waking: false });
                let done = self.at(duration_cycles)?;
                self.schedule(done, Priority::HostResume, Event::Resume(Resume::PhaseDone));
            }
            Phase::FlashRead { bytes, addr } => {
                self.flash.read(addr, bytes)?;
                let cycles = self.flash.transfer_cycles(bytes, Direction::Read, clock);
                self.flash_totals.bytes_read += bytes;
                self.flash_totals.transfer_cycles += cycles;
                self.set_host(PowerState::Active);
                let done = self.at(cycles)?;
                self.schedule(done, Priority::HostResume, Event::Resume(Resume::PhaseDone));
            }
            Phase::FlashWrite { bytes, addr } => {
                let mut data: Vec<u8> = self.last_samples.iter().flat_map(|s| s.to_le_bytes()).collect();
                data.resize(bytes as usize, 0);
                self.flash.write(addr, &data)?;
                let cycles = self.flash.transfer_cycles(bytes, Direction::Write, clock);
                self.flash_totals.bytes_written += bytes;
                self.flash_totals.transfer_cycles += cycles;
                self.set_host(PowerState::Active);
                let done = self.at(cycles)?;
                self.schedule(done, Priority::HostResume, Event::Resume(Resume::PhaseDone));
            }
            Phase::Marker { action } => {
                self.schedule(self.now, Priority::Marker, Event::Marker(action));
            }
        }
        Ok(())
    }

    fn time_overflow(&self) -> SimError {
        SimError::CounterOverflow(CounterOverflow {
            domain: "<time>".into(),
            state: self.host_state,
        })
    }

    fn set_progress(&mut self, progress: Progress) {
        if let Some(cur) = &mut self.current {
            cur.progress = progress;
        }
    }

    fn progress_mut(&mut self) -> &mut Progress {
        &mut self.current.as_mut().expect("active phase").progress
    }

    fn acquire_mut(&mut self) -> &mut AcquireProgress {
        match self.progress_mut() {
            Progress::Acquire(p) => p,
            _ => unreachable!("acquisition event outside an acquire phase"),
        }
    }

    fn start_handshake(&mut self, handshake: u64) -> Result<(), SimError> {
        self.set_host(PowerState::Active);
        let done = self.at(handshake)?;
        self.schedule(done, Priority::HostResume, Event::Resume(Resume::HandshakeDone));
        Ok(())
    }

    fn complete_phase(&mut self) {
        let cur = self.current.take().expect("active phase");
        self.queue.clear();
        if let Progress::Acquire(p) = &cur.progress {
            let stats = p.session.stats();
            self.source_cursor = p.session.consumed_cursor();
            self.adc_totals.samples += stats.delivered;
            self.adc_totals.refills += stats.refills;
            self.adc_totals.underruns += stats.underruns;
        }
        self.phases.push(PhaseAttribution {
            index: cur.index,
            op: self.program.phases[cur.index].op().to_string(),
            start_cycle: cur.start,
            cycles: cur.cycles,
        });
    }

    fn sample_instant(p: &AcquireProgress, k: u64, freq_hz: u64) -> u64 {
        p.start + ((k as u128 * freq_hz as u128) / p.fs_hz as u128) as u64
    }

    fn sync_refill(&mut self) {
        let p = self.acquire_mut();
        let due = p.session.refill_due();
        if let Some(t) = due.filter(|_| due != p.refill_scheduled) {
            p.refill_scheduled = due;
            self.schedule(t, Priority::PeripheralRefill, Event::Refill);
        }
    }

    fn start_sample(&mut self) -> Result<(), SimError> {
        let now = self.now;
        let was_asleep = self.host_state != PowerState::Active;
        let wake = self.config.wake_latency_cycles;
        let pop = self.acquire_mut().session.pop(now)?;
        match pop {
            Pop::Sample { value, .. } => {
                let p = self.acquire_mut();
                p.pending -= 1;
                p.busy = true;
                let work = p.per_sample + if was_asleep { wake } else { 0 };
                self.last_samples.push(value);
                self.set_host(PowerState::Active);
                let done = self.at(work)?;
                self.schedule(done, Priority::HostResume, Event::Resume(Resume::SampleDone));
            }
            Pop::Stall { refill_at } => {
                self.acquire_mut().stalled = true;
                self.adc_totals.stall_cycles += refill_at - now;
                self.set_host(PowerState::ClockGated);
                self.schedule(refill_at, Priority::HostResume, Event::Resume(Resume::StallRetry));
            }
        }
        self.sync_refill();
        Ok(())
    }

    fn process_next(&mut self) -> Result<(), SimError> {
        let ev = self.queue.pop().expect("pending event");
        self.advance(ev.time)?;
        if self.config.record_events {
            self.events.push(LoggedEvent {
                time: ev.time,
                seq: ev.seq,
                event: format!("{:?}", ev.event),
            });
        }
        let freq = self.platform.clock().freq_hz();
        match ev.event {
            Event::Refill => {
                let now = self.now;
                let p = self.acquire_mut();
                p.refill_scheduled = None;
                p.session.complete_refill(now);
                self.sync_refill();
            }
            Event::SampleReady(k) => {
                let p = self.acquire_mut();
                p.pending += 1;
                let (next, prio, event) = if k + 1 < p.n {
                    (
                        Self::sample_instant(p, k + 1, freq),
                        Priority::SampleReady,
                        Event::SampleReady(k + 1),
                    )
                } else {
                    (
                        Self::sample_instant(p, p.n, freq),
                        Priority::HostResume,
                        Event::Resume(Resume::WindowEnd),
                    )
                };
                let idle = !p.busy && !p.stalled;
                self.schedule(next, prio, event);
                if idle {
                    self.start_sample()?;
                }
            }
            Event::Resume(Resume::SampleDone) => {
                let p = self.acquire_mut();
                p.busy = false;
                p.processed += 1;
                let (more, done) = (p.pending > 0, p.processed == p.n && p.window_end);
                if more {
                    self.start_sample()?;
                } else {
                    self.set_host(self.config.acquire_sleep);
                    if done {
                        self.complete_phase();
                    }
                }
            }
            Event::Resume(Resume::StallRetry) => {
                self.acquire_mut().stalled = false;
                self.start_sample()?;
            }
            Event::Resume(Resume::WindowEnd) => {
                let p = self.acquire_mut();
                p.window_end = true;
                if p.processed == p.n && !p.busy {
                    self.complete_phase();
                }
            }
            Event::Resume(Resume::HandshakeDone) => {
                let (accel_cycles, domain) = match self.progress_mut() {
                    Progress::Offload {
                        accel_cycles, domain, ..
                    } => (*accel_cycles, domain.clone()),
                    _ => unreachable!("handshake outside an offload"),
                };
                self.accel_running = Some(domain);
                let wait = match self.config.offload_wait {
                    OffloadWait::ClockGated => PowerState::ClockGated,
                    OffloadWait::ActivePolling => PowerState::Active,
                };
                self.set_host(wait);
                let done = self.at(accel_cycles)?;
                self.schedule(done, Priority::HostResume, Event::Resume(Resume::AccelDone));
            }
            Event::Resume(Resume::AccelDone) => {
                self.accel_running = None;
                let (again, handshake) = match self.progress_mut() {
                    Progress::Offload {
                        rep, reps, handshake, ..
                    } => {
                        *rep += 1;
                        (*rep < *reps, *handshake)
                    }
                    _ => unreachable!("accelerator completion outside an offload"),
                };
                if again {
                    self.start_handshake(handshake)?;
                } else {
                    self.set_host(PowerState::Active);
                    self.complete_phase();
                }
            }
            Event::Resume(Resume::PhaseDone) => {
                let wake = self.config.wake_latency_cycles;
                let waking = match self.progress_mut() {
                    Progress::Sleep { waking } if !*waking && wake > 0 => {
                        *waking = true;
                        true
                    }
                    _ => false,
                };
                if waking {
                    self.set_host(PowerState::Active);
                    let done = self.at(wake)?;
                    self.schedule(done, Priority::HostResume, Event::Resume(Resume::PhaseDone));
                } else {
                    self.complete_phase();
                }
            }
            Event::Marker(action) => {
                self.manual_open = action == MarkerAction::Start;
                self.complete_phase();
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
