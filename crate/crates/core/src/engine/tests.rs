use super::*;
use crate::accel::{register_accelerator, AccelPower, AcceleratorSpec, Stage};
use crate::model::{ClockConfig, DomainModel, DomainPower, EnergyModel};
use proptest::prelude::*;

fn platform() -> Platform {
    let domains = [
        ("cpu", DomainKind::Logic, DomainPower::logic(600.0, 60.0, 2.0)),
        ("ram0", DomainKind::Memory, DomainPower::memory(150.0, 20.0, 1.0, 8.0)),
    ];
    let model = EnergyModel {
        technology: "test".into(),
        voltage_v: 1.2,
        ref_freq_hz: 20_000_000,
        notes: None,
        domains: domains
            .into_iter()
            .map(|(id, kind, power)| (id.to_string(), DomainModel { kind, power }))
            .collect(),
    };
    Platform::from_model(model, ClockConfig::default()).unwrap()
}

fn cgra() -> AcceleratorSpec {
    AcceleratorSpec {
        stage: Stage::RtlStage,
        timing: Some([("mm".to_string(), 2000u64)].into_iter().collect()),
        power: Some(AccelPower {
            id: "cgra".into(),
            name: None,
            power: DomainPower::logic(1800.0, 150.0, 5.0),
        }),
        ..AcceleratorSpec::software_model("cgra", &["mm"])
    }
}

fn timing() -> TimingTable {
    let mut t = TimingTable::default();
    t.insert("mm", "cpu", 5000);
    t
}

fn engine(phases: Vec<Phase>) -> Engine {
    engine_with(phases, EngineConfig::default(), platform())
}

fn engine_with(phases: Vec<Phase>, config: EngineConfig, platform: Platform) -> Engine {
    let n: u64 = phases
        .iter()
        .map(|p| match p {
            Phase::Acquire { n_samples, .. } => *n_samples,
            _ => 0,
        })
        .sum();
    let source = SampleSource::synthetic(n.max(1) as usize, 7);
    Engine::load(
        WorkloadProgram::new("t", phases),
        timing(),
        platform,
        config,
        source,
        None,
    )
    .unwrap()
}

fn acquire(fs_hz: u64, n_samples: u64, c: u64) -> Phase {
    Phase::Acquire {
        fs_hz,
        n_samples,
        per_sample_cpu_cycles: c,
    }
}

fn mm(target: &str) -> Phase {
    Phase::Compute {
        kernel: "mm".into(),
        target: target.into(),
        reps: 1,
    }
}

fn marker(action: MarkerAction) -> Phase {
    Phase::Marker { action }
}

#[test]
fn starts_active_at_cycle_zero() {
    let e = engine(vec![mm("cpu")]);
    assert_eq!(e.now(), 0);
    assert!(e.domain_state().values().all(|s| *s == PowerState::Active));
}

#[test]
fn acquisition_matches_closed_form() {
    for fs in [100u64, 1_000, 10_000, 100_000] {
        let n = fs / 10;
        let mut e = engine(vec![acquire(fs, n, 150)]);
        let out = e.run_to_end().unwrap();
        let cpu = out.counters.domain("cpu").unwrap();
        assert_eq!(out.counters.window_cycles, n * 20_000_000 / fs);
        assert_eq!(cpu.active, n * 150, "fs {fs}");
        assert_eq!(cpu.clock_gated, out.counters.window_cycles - n * 150);
        assert_eq!(out.counters.domain("ram0").unwrap(), cpu);
        assert_eq!(out.adc.samples, n);
        assert_eq!(out.adc.underruns, 0);
        out.counters.check_conservation().unwrap();
    }
}

#[test]
fn saturated_acquisition_is_all_active() {
    // period 200 cycles, cost 300 cycles
    let mut e = engine(vec![acquire(100_000, 100, 300)]);
    let out = e.run_to_end().unwrap();
    let cpu = out.counters.domain("cpu").unwrap();
    assert_eq!(cpu.active, out.counters.window_cycles);
    assert_eq!(out.counters.window_cycles, 100 * 300);
}

#[test]
fn power_gated_sleep_puts_memory_in_retention() {
    let config = EngineConfig {
        acquire_sleep: PowerState::PowerGated,
        ..EngineConfig::default()
    };
    let mut e = engine_with(vec![acquire(1000, 10, 150)], config, platform());
    let out = e.run_to_end().unwrap();
    let ram = out.counters.domain("ram0").unwrap();
    assert_eq!(ram.active, 1500);
    assert_eq!(ram.retention, out.counters.window_cycles - 1500);
    assert_eq!(out.counters.domain("cpu").unwrap().power_gated, ram.retention);
}

#[test]
fn wake_latency_adds_active_cycles() {
    let config = EngineConfig {
        wake_latency_cycles: 10,
        ..EngineConfig::default()
    };
    let mut e = engine_with(
        vec![Phase::Sleep {
            mode: PowerState::ClockGated,
            duration_cycles: 100,
        }],
        config,
        platform(),
    );
    let out = e.run_to_end().unwrap();
    let cpu = out.counters.domain("cpu").unwrap();
    assert_eq!((cpu.clock_gated, cpu.active), (100, 10));
}

#[test]
fn slow_refill_stalls_the_host() {
    let config = EngineConfig {
        adc: AdcSetup {
            soft: SoftFifo {
                capacity: 64,
                refill_batch: 4,
                refill_latency_cycles: 5000,
            },
            hard: HardFifo { capacity: 8 },
            underrun_policy: UnderrunPolicy::CountAndStall,
        },
        ..EngineConfig::default()
    };
    let mut e = engine_with(vec![acquire(100_000, 64, 10)], config, platform());
    let out = e.run_to_end().unwrap();
    assert!(out.adc.underruns > 0);
    assert!(out.adc.stall_cycles > 0);
    assert_eq!(out.adc.samples, 64);
    out.counters.check_conservation().unwrap();

    let fatal = EngineConfig {
        adc: AdcSetup {
            underrun_policy: UnderrunPolicy::Fatal,
            ..config.adc
        },
        ..config
    };
    let mut e = engine_with(vec![acquire(100_000, 64, 10)], fatal, platform());
    assert!(matches!(e.run_to_end(), Err(SimError::FifoUnderrun { .. })));
    assert!(matches!(e.run_to_end(), Err(SimError::Faulted(_))));
}

#[test]
fn rtl_offload_attribution() {
    let p = register_accelerator(cgra(), &platform()).unwrap();
    let mut e = engine_with(
        vec![Phase::Compute {
            kernel: "mm".into(),
            target: "cgra".into(),
            reps: 3,
        }],
        EngineConfig::default(),
        p,
    );
    let out = e.run_to_end().unwrap();
    let cpu = out.counters.domain("cpu").unwrap();
    let acc = out.counters.domain("cgra").unwrap();
    let ram = out.counters.domain("ram0").unwrap();
    assert_eq!(out.counters.window_cycles, 3 * (10 + 2000));
    assert_eq!((cpu.active, cpu.clock_gated), (30, 6000));
    assert_eq!((acc.active, acc.power_gated), (6000, 30));
    assert_eq!(ram.active, out.counters.window_cycles);
}

#[test]
fn software_model_costs_handshake_only() {
    let p = register_accelerator(AcceleratorSpec::software_model("sw", &["mm"]), &platform()).unwrap();
    let mut e = engine_with(vec![mm("sw")], EngineConfig::default(), p);
    let out = e.run_to_end().unwrap();
    assert_eq!(out.counters.window_cycles, 10);
    assert_eq!(out.counters.domain("cpu").unwrap().active, 10);
}

#[test]
fn load_errors() {
    let load = |phases| {
        Engine::load(
            WorkloadProgram::new("t", phases),
            timing(),
            platform(),
            EngineConfig::default(),
            SampleSource::synthetic(1, 0),
            None,
        )
    };
    assert!(matches!(
        load(vec![Phase::Compute {
            kernel: "fft".into(),
            target: "cpu".into(),
            reps: 1
        }]),
        Err(SimError::Program(ProgramError::UnknownKernel { .. }))
    ));
    assert!(matches!(
        load(vec![mm("npu")]),
        Err(SimError::Program(ProgramError::UnknownTarget { .. }))
    ));
    assert!(matches!(
        load(vec![marker(MarkerAction::Stop)]),
        Err(SimError::Program(ProgramError::UnbalancedMarkers { .. }))
    ));
    assert!(matches!(
        load(vec![marker(MarkerAction::Start), marker(MarkerAction::Start)]),
        Err(SimError::Program(ProgramError::UnbalancedMarkers { .. }))
    ));
}

#[test]
fn manual_window_around_one_phase() {
    let mut e = engine(vec![
        acquire(1000, 5, 150),
        marker(MarkerAction::Start),
        mm("cpu"),
        marker(MarkerAction::Stop),
        acquire(1000, 5, 150),
    ]);
    let out = e.run_to_end().unwrap();
    assert_eq!(out.manual.window_cycles, 5000);
    assert_eq!(out.manual.domain("cpu").unwrap().active, 5000);
    assert_eq!(out.manual.domain("ram0").unwrap().active, 5000);
    assert!(out.counters.window_cycles > 5000);
}

#[test]
fn open_marker_closes_at_program_end() {
    let mut e = engine(vec![mm("cpu"), marker(MarkerAction::Start), mm("cpu")]);
    let out = e.run_to_end().unwrap();
    assert_eq!(out.manual.window_cycles, 5000);
    assert_eq!(out.counters.window_cycles, 10_000);
}

#[test]
fn step_reports_per_phase_states() {
    let mut e = engine(vec![mm("cpu"), acquire(1000, 2, 150)]);
    let first = e.step_phase().unwrap();
    assert_eq!((first.index, first.cycles), (0, 5000));
    assert_eq!(first.states["cpu"][&PowerState::Active], 5000);
    let second = e.step_phase().unwrap();
    assert_eq!(second.cycles, 2 * 20_000);
    assert_eq!(second.states["cpu"][&PowerState::Active], 300);
    assert_eq!(e.step_phase(), Err(SimError::ProgramFinished));
}

#[test]
fn flash_phases_use_the_bandwidth_model() {
    let mut e = engine(vec![
        acquire(10_000, 100, 150),
        Phase::FlashWrite {
            bytes: 200,
            addr: 0x1000,
        },
        Phase::FlashRead { bytes: 70_000, addr: 0 },
    ]);
    let out = e.run_to_end().unwrap();
    assert_eq!(out.flash.bytes_written, 200);
    assert_eq!(out.phases[2].cycles, 200_000);
    let stored = e.flash().read(0x1000, 4).unwrap();
    let source = SampleSource::synthetic(100, 7);
    let expect: Vec<u8> = source.samples()[..2].iter().flat_map(|s| s.to_le_bytes()).collect();
    assert_eq!(stored, expect);
}

#[test]
fn reset_is_bit_identical_to_fresh_load() {
    let phases = vec![
        acquire(1000, 20, 150),
        Phase::FlashWrite { bytes: 40, addr: 0 },
        mm("cpu"),
    ];
    let fresh = engine(phases.clone()).snapshot_json();
    let mut e = engine(phases);
    e.run_to_end().unwrap();
    assert_ne!(e.snapshot_json(), fresh);
    e.reset();
    assert_eq!(e.snapshot_json(), fresh);
}

#[test]
fn consecutive_acquisitions_continue_the_source() {
    let mut e = engine(vec![acquire(1000, 3, 10), acquire(1000, 3, 10)]);
    e.run_to_end().unwrap();
    let out = e.outcome();
    assert_eq!(out.adc.samples, 6);
}

#[test]
fn recorded_events_are_ordered() {
    let config = EngineConfig {
        record_events: true,
        ..EngineConfig::default()
    };
    let mut e = engine_with(vec![acquire(1000, 4, 10)], config, platform());
    let events = e.run_to_end().unwrap().events.unwrap();
    assert!(events.windows(2).all(|w| w[0].time <= w[1].time));
    assert_eq!(
        events.iter().filter(|ev| ev.event.starts_with("SampleReady")).count(),
        4
    );
}

fn arb_phase() -> impl Strategy<Value = Phase> {
    prop_oneof![
        (1u64..4).prop_map(|reps| Phase::Compute {
            kernel: "mm".into(),
            target: "cpu".into(),
            reps
        }),
        (1u64..4).prop_map(|reps| Phase::Compute {
            kernel: "mm".into(),
            target: "cgra".into(),
            reps
        }),
        (
            prop::sample::select(vec![100u64, 1000, 8000, 50_000, 100_000]),
            0u64..40,
            1u64..400
        )
            .prop_map(|(fs, n, c)| acquire(fs, n, c)),
        (
            prop::sample::select(vec![PowerState::ClockGated, PowerState::PowerGated]),
            0u64..10_000
        )
            .prop_map(|(mode, d)| Phase::Sleep {
                mode,
                duration_cycles: d
            }),
        (0u64..5000, 0u64..1000).prop_map(|(bytes, addr)| Phase::FlashRead { bytes, addr }),
        (0u64..5000, 0u64..1000).prop_map(|(bytes, addr)| Phase::FlashWrite { bytes, addr }),
    ]
}

fn arb_program() -> impl Strategy<Value = Vec<Phase>> {
    (
        prop::collection::vec(arb_phase(), 0..8),
        any::<bool>(),
        0usize..8,
        0usize..8,
    )
        .prop_map(|(mut phases, wrap, a, b)| {
            if wrap {
                let (lo, hi) = (a.min(b).min(phases.len()), a.max(b).min(phases.len()));
                phases.insert(hi, marker(MarkerAction::Stop));
                phases.insert(lo, marker(MarkerAction::Start));
            }
            phases
        })
}

fn arb_config() -> impl Strategy<Value = EngineConfig> {
    (
        prop::sample::select(vec![PowerState::ClockGated, PowerState::PowerGated]),
        any::<bool>(),
        any::<bool>(),
        0u64..20,
        1usize..16,
        0u64..3000,
    )
        .prop_map(|(sleep, polling, always, wake, hard, latency)| EngineConfig {
            acquire_sleep: sleep,
            offload_wait: if polling {
                OffloadWait::ActivePolling
            } else {
                OffloadWait::ClockGated
            },
            memory_policy: if always {
                MemoryPolicy::AlwaysActive
            } else {
                MemoryPolicy::FollowHost
            },
            wake_latency_cycles: wake,
            adc: AdcSetup {
                soft: SoftFifo {
                    capacity: 64,
                    refill_batch: 8,
                    refill_latency_cycles: latency,
                },
                hard: HardFifo { capacity: hard },
                underrun_policy: UnderrunPolicy::CountAndStall,
            },
            ..EngineConfig::default()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn counters_conserve_and_step_matches_run(phases in arb_program(), config in arb_config()) {
        let p = register_accelerator(cgra(), &platform()).unwrap();
        let mut run = engine_with(phases.clone(), config, p.clone());
        let out = run.run_to_end().unwrap();
        prop_assert!(out.counters.check_conservation().is_ok());
        prop_assert!(out.manual.check_conservation().is_ok());
        prop_assert_eq!(out.phases.iter().map(|a| a.cycles).sum::<u64>(), out.counters.window_cycles);

        let mut step = engine_with(phases.clone(), config, p.clone());
        while !step.is_finished() {
            step.step_phase().unwrap();
        }
        prop_assert_eq!(serde_json::to_string(&step.outcome()).unwrap(), serde_json::to_string(&out).unwrap());

        let mut bounded = engine_with(phases, config, p);
        let mut limit = 0;
        while !bounded.run_until(Some(limit)).unwrap().finished {
            limit += 100_003;
        }
        prop_assert_eq!(bounded.outcome().counters, out.counters);
    }
}
