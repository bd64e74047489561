//! Line-delimited JSON control protocol.
//!
//! Request: `{"id": <any>, "cmd": "<name>", "args": {...}}`; `args` may be
//! omitted. Reply: `{"id": <echo>, "ok": true, "payload": ...}` or
//! `{"id": <echo>, "ok": false, "error": {"code": ..., "message": ...}}`.
//! Exactly one reply is written per input line, in order.

use super::config::{AssetKind, Resolver};
use crate::accel::{register_accelerator, Accelerator, AcceleratorSpec, KernelOperands};
use crate::engine::{Engine, EngineConfig, TimingTable, WorkloadProgram};
use crate::json;
use crate::metrics::{counters_snapshot, estimate_energy, CounterMode};
use crate::model::{ClockConfig, EnergyModel};
use crate::periph::adc::{self, AdcConfig, HardFifo, SampleSource, SoftFifo, UnderrunPolicy};
use crate::periph::flash::{FlashConfig, FlashMode, VirtualFlash};
use crate::platform::Platform;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

pub const COMMANDS: [&str; 14] = [
    "load_program",
    "run",
    "step",
    "halt",
    "reset",
    "read_counters",
    "estimate_energy",
    "configure_adc",
    "flash_init",
    "flash_read",
    "flash_write",
    "register_accelerator",
    "offload",
    "shutdown",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlMessage {
    #[serde(default)]
    pub id: Value,
    pub cmd: String,
    #[serde(default)]
    pub args: Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorCode {
    UnknownCommand,
    BadArguments,
    InvalidState,
    ExecutionError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlReply {
    pub id: Value,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

impl ControlReply {
    fn ok(id: Value, payload: Option<Value>) -> Self {
        Self {
            id,
            ok: true,
            payload,
            error: None,
        }
    }

    fn err(id: Value, code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            id,
            ok: false,
            payload: None,
            error: Some(ErrorBody {
                code,
                message: message.into(),
            }),
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("reply serializes")
    }
}

type Outcome = Result<Option<Value>, (ErrorCode, String)>;

fn bad(msg: impl std::fmt::Display) -> (ErrorCode, String) {
    (ErrorCode::BadArguments, msg.to_string())
}

fn exec(msg: impl std::fmt::Display) -> (ErrorCode, String) {
    (ErrorCode::ExecutionError, msg.to_string())
}

fn args<T: DeserializeOwned>(value: &Value) -> Result<T, (ErrorCode, String)> {
    let v = if value.is_null() { json!({}) } else { value.clone() };
    json::from_value(v).map_err(bad)
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("payload serializes")
}

/// A document given inline or by file / built-in name.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum DocRef {
    Name(String),
    Inline(Value),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LoadArgs {
    program: DocRef,
    #[serde(default)]
    energy_model: Option<DocRef>,
    #[serde(default)]
    timing: Option<DocRef>,
    #[serde(default)]
    clock_hz: Option<u64>,
    #[serde(default)]
    engine: Option<EngineConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunArgs {
    #[serde(default)]
    until_cycle: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModeArgs {
    #[serde(default)]
    mode: CounterMode,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum SamplesArg {
    Samples(Vec<i16>),
    File(String),
    Synthetic {
        len: usize,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdcArgs {
    #[serde(default)]
    fs_hz: Option<u64>,
    #[serde(default)]
    soft: Option<SoftFifo>,
    #[serde(default)]
    hard: Option<HardFifo>,
    #[serde(default)]
    underrun_policy: Option<UnderrunPolicy>,
    #[serde(default)]
    source: Option<SamplesArg>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlashInitArgs {
    #[serde(default)]
    mode: Option<FlashMode>,
    #[serde(default)]
    virtual_bandwidth_bps: Option<u64>,
    #[serde(default)]
    physical_bandwidth_bps: Option<u64>,
    #[serde(default)]
    image: Option<String>,
    #[serde(default)]
    base: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlashReadArgs {
    addr: u64,
    len: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlashWriteArgs {
    addr: u64,
    /// Hex-encoded bytes.
    data: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegisterArgs {
    spec: DocRef,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OffloadArgs {
    target: String,
    operands: DocRef,
}

/// One client's state: the loaded program, its engine and the peripheral setup.
#[derive(Debug, Clone)]
pub struct Session {
    resolver: Resolver,
    seed: u64,
    model: Option<EnergyModel>,
    clock: ClockConfig,
    accelerators: Vec<AcceleratorSpec>,
    timing: TimingTable,
    config: EngineConfig,
    source: Option<SampleSource>,
    flash: VirtualFlash,
    program: Option<WorkloadProgram>,
    engine: Option<Engine>,
    devices: BTreeMap<String, Accelerator>,
    closed: bool,
}

impl Default for Session {
    fn default() -> Self {
        Self::new(Resolver::default(), 0)
    }
}

impl Session {
    pub fn new(resolver: Resolver, seed: u64) -> Self {
        Self {
            resolver,
            seed,
            model: None,
            clock: ClockConfig::default(),
            accelerators: Vec::new(),
            timing: TimingTable::default(),
            config: EngineConfig::default(),
            source: None,
            flash: VirtualFlash::default(),
            program: None,
            engine: None,
            devices: BTreeMap::new(),
            closed: false,
        }
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn engine(&self) -> Option<&Engine> {
        self.engine.as_ref()
    }

    /// Parses one input line and handles it; malformed lines get a `BadArguments` reply.
    pub fn handle_line(&mut self, line: &str) -> ControlReply {
        let value: Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => {
                return ControlReply::err(Value::Null, ErrorCode::BadArguments, format!("malformed message: {e}"))
            }
        };
        let id = value.get("id").cloned().unwrap_or(Value::Null);
        match serde_json::from_value::<ControlMessage>(value) {
            Ok(msg) => self.handle_message(msg),
            Err(e) => ControlReply::err(id, ErrorCode::BadArguments, format!("malformed message: {e}")),
        }
    }

    pub fn handle_message(&mut self, msg: ControlMessage) -> ControlReply {
        let id = msg.id.clone();
        if self.closed {
            return ControlReply::err(id, ErrorCode::InvalidState, "session is shut down");
        }
        let result = match msg.cmd.as_str() {
            "load_program" => self.load_program(&msg.args),
            "run" => self.run(&msg.args),
            "step" => self.step(),
            "halt" => self.halt(),
            "reset" => self.reset(),
            "read_counters" => self.read_counters(&msg.args),
            "estimate_energy" => self.estimate(&msg.args),
            "configure_adc" => self.configure_adc(&msg.args),
            "flash_init" => self.flash_init(&msg.args),
            "flash_read" => self.flash_read(&msg.args),
            "flash_write" => self.flash_write(&msg.args),
            "register_accelerator" => self.register(&msg.args),
            "offload" => self.offload(&msg.args),
            "shutdown" => {
                self.closed = true;
                Ok(None)
            }
            other => Err((ErrorCode::UnknownCommand, format!("unknown command `{other}`"))),
        };
        match result {
            Ok(payload) => ControlReply::ok(id, payload),
            Err((code, message)) => ControlReply::err(id, code, message),
        }
    }

    fn doc(&self, r: &DocRef, kind: AssetKind) -> Result<Value, (ErrorCode, String)> {
        match r {
            DocRef::Inline(v) => Ok(v.clone()),
            DocRef::Name(name) => {
                let (text, origin) = self.resolver.load(name, Some(kind)).map_err(bad)?;
                serde_json::from_str(&text).map_err(|e| bad(format!("{origin}: {e}")))
            }
        }
    }

    fn typed<T: DeserializeOwned>(&self, r: &DocRef, kind: AssetKind) -> Result<T, (ErrorCode, String)> {
        json::from_value(self.doc(r, kind)?).map_err(bad)
    }

    fn ensure_model(&mut self) -> Result<(), (ErrorCode, String)> {
        if self.model.is_none() {
            self.model = Some(self.typed(&DocRef::Name("tsmc65".into()), AssetKind::Model)?);
        }
        Ok(())
    }

    fn platform(&self) -> Result<Platform, (ErrorCode, String)> {
        let model = self.model.clone().expect("model resolved");
        let mut platform = Platform::from_model(model, self.clock)
            .map_err(|errs| bad(errs.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")))?;
        for spec in &self.accelerators {
            platform = register_accelerator(spec.clone(), &platform).map_err(bad)?;
        }
        Ok(platform)
    }

    fn source_for(&self, program: &WorkloadProgram) -> SampleSource {
        if let Some(s) = &self.source {
            return s.clone();
        }
        let n: u64 = program
            .phases
            .iter()
            .map(|p| match p {
                crate::engine::Phase::Acquire { n_samples, .. } => *n_samples,
                _ => 0,
            })
            .sum();
        SampleSource::synthetic(n.max(1) as usize, self.seed)
    }

    /// Rebuilds the engine from the session setup (used after configuration changes).
    fn rebuild(&mut self) -> Result<(), (ErrorCode, String)> {
        let Some(program) = self.program.clone() else {
            return Ok(());
        };
        self.ensure_model()?;
        let platform = self.platform()?;
        let engine = Engine::load(
            program.clone(),
            self.timing.clone(),
            platform,
            self.config,
            self.source_for(&program),
            Some(self.flash.clone()),
        )
        .map_err(exec)?;
        self.engine = Some(engine);
        Ok(())
    }

    fn engine_mut(&mut self) -> Result<&mut Engine, (ErrorCode, String)> {
        self.engine
            .as_mut()
            .ok_or_else(|| (ErrorCode::InvalidState, "no program loaded".to_string()))
    }

    fn load_program(&mut self, raw: &Value) -> Outcome {
        let a: LoadArgs = args(raw)?;
        let program: WorkloadProgram = self.typed(&a.program, AssetKind::Program)?;
        if let Some(m) = &a.energy_model {
            self.model = Some(self.typed(m, AssetKind::Model)?);
        }
        self.ensure_model()?;
        if let Some(t) = &a.timing {
            self.timing = self.typed(t, AssetKind::Timing)?;
        }
        let hz = a
            .clock_hz
            .unwrap_or_else(|| self.model.as_ref().expect("model resolved").ref_freq_hz);
        self.clock = ClockConfig::new(hz).map_err(bad)?;
        if let Some(c) = a.engine {
            self.config = c;
            self.flash.set_mode(c.flash.mode);
        }
        let previous = self.program.replace(program);
        if let Err(e) = self.rebuild() {
            self.program = previous;
            return Err(e);
        }
        let engine = self.engine.as_ref().expect("rebuilt");
        Ok(Some(json!({
            "program": engine.program().name,
            "phases": engine.program().phases.len(),
            "domains": engine.domain_state().keys().collect::<Vec<_>>(),
        })))
    }

    fn run(&mut self, raw: &Value) -> Outcome {
        let a: RunArgs = args(raw)?;
        let out = self.engine_mut()?.run_until(a.until_cycle).map_err(exec)?;
        Ok(Some(to_value(&out)))
    }

    fn step(&mut self) -> Outcome {
        let result = self.engine_mut()?.step_phase().map_err(|e| match e {
            crate::engine::SimError::ProgramFinished => (ErrorCode::InvalidState, e.to_string()),
            other => exec(other),
        })?;
        Ok(Some(to_value(&result)))
    }

    fn halt(&mut self) -> Outcome {
        let engine = self.engine_mut()?;
        Ok(Some(json!({
            "now_cycles": engine.now(),
            "finished": engine.is_finished(),
            "domain_state": engine.domain_state(),
        })))
    }

    fn reset(&mut self) -> Outcome {
        if let Some(engine) = &mut self.engine {
            engine.reset();
        }
        Ok(None)
    }

    fn read_counters(&mut self, raw: &Value) -> Outcome {
        let a: ModeArgs = args(raw)?;
        let out = self.engine_mut()?.outcome();
        let counters = counters_snapshot(&out, a.mode).map_err(exec)?;
        Ok(Some(to_value(&counters)))
    }

    fn estimate(&mut self, raw: &Value) -> Outcome {
        let a: ModeArgs = args(raw)?;
        let engine = self.engine_mut()?;
        let counters = counters_snapshot(&engine.outcome(), a.mode).map_err(exec)?;
        let report = estimate_energy(&counters, engine.platform().model(), engine.platform().clock()).map_err(exec)?;
        Ok(Some(to_value(&report)))
    }

    fn configure_adc(&mut self, raw: &Value) -> Outcome {
        let a: AdcArgs = args(raw)?;
        let mut setup = self.config.adc;
        if let Some(s) = a.soft {
            setup.soft = s;
        }
        if let Some(h) = a.hard {
            setup.hard = h;
        }
        if let Some(p) = a.underrun_policy {
            setup.underrun_policy = p;
        }
        let source = match a.source {
            None => self.source.clone(),
            Some(SamplesArg::Samples(s)) => Some(SampleSource::from_samples(s)),
            Some(SamplesArg::File(name)) => {
                let path = self
                    .resolver
                    .find_file(&name, None)
                    .ok_or_else(|| bad(format!("sample file `{name}` not found")))?;
                Some(SampleSource::from_file(&path).map_err(bad)?)
            }
            Some(SamplesArg::Synthetic { len, seed }) => Some(SampleSource::synthetic(len, seed)),
        };
        let probe = source.clone().unwrap_or_else(|| SampleSource::synthetic(1, self.seed));
        let fs_hz = a.fs_hz.unwrap_or(1);
        adc::configure_adc(
            probe,
            AdcConfig {
                fs_hz,
                underrun_policy: setup.underrun_policy,
            },
            setup.soft,
            setup.hard,
            self.clock.freq_hz(),
        )
        .map_err(bad)?;
        self.config.adc = setup;
        self.source = source;
        self.rebuild()?;
        let period = self.clock.freq_hz() / fs_hz;
        Ok(Some(json!({
            "refill_threshold": setup.hard.refill_threshold(),
            "no_underrun_latency_bound_cycles": a.fs_hz.map(|_| setup.hard.no_underrun_latency_bound(period)),
            "source_samples": self.source.as_ref().map(SampleSource::len),
            "reloaded": self.engine.is_some(),
        })))
    }

    fn flash_init(&mut self, raw: &Value) -> Outcome {
        let a: FlashInitArgs = args(raw)?;
        let mut cfg = FlashConfig::default();
        if let Some(m) = a.mode {
            cfg.mode = m;
        }
        if let Some(b) = a.virtual_bandwidth_bps {
            cfg.virtual_bandwidth_bps = b;
        }
        if let Some(b) = a.physical_bandwidth_bps {
            cfg.physical_bandwidth_bps = b;
        }
        let mut flash = VirtualFlash::new(cfg).map_err(bad)?;
        let mut imported = 0;
        if let Some(name) = &a.image {
            let path = self
                .resolver
                .find_file(name, None)
                .ok_or_else(|| bad(format!("flash image `{name}` not found")))?;
            imported = flash.import_image(&path, a.base).map_err(bad)?;
        }
        self.flash = flash;
        self.config.flash = cfg;
        self.rebuild()?;
        Ok(Some(
            json!({ "mode": cfg.mode, "imported_bytes": imported, "reloaded": self.engine.is_some() }),
        ))
    }

    fn current_flash(&self) -> &VirtualFlash {
        match &self.engine {
            Some(e) => e.flash(),
            None => &self.flash,
        }
    }

    fn flash_read(&mut self, raw: &Value) -> Outcome {
        let a: FlashReadArgs = args(raw)?;
        let bytes = self.current_flash().read(a.addr, a.len).map_err(bad)?;
        Ok(Some(json!({ "addr": a.addr, "data": hex::encode(bytes) })))
    }

    fn flash_write(&mut self, raw: &Value) -> Outcome {
        let a: FlashWriteArgs = args(raw)?;
        let bytes = hex::decode(&a.data).map_err(|e| bad(format!("data: {e}")))?;
        self.flash.write(a.addr, &bytes).map_err(bad)?;
        if let Some(engine) = &mut self.engine {
            engine.flash_mut().write(a.addr, &bytes).map_err(bad)?;
        }
        Ok(Some(json!({ "addr": a.addr, "written": bytes.len() })))
    }

    fn register(&mut self, raw: &Value) -> Outcome {
        let a: RegisterArgs = args(raw)?;
        let spec: AcceleratorSpec = self.typed(&a.spec, AssetKind::Accelerator)?;
        self.ensure_model()?;
        let mut specs = self.accelerators.clone();
        specs.push(spec.clone());
        let previous = std::mem::replace(&mut self.accelerators, specs);
        if let Err(e) = self.platform() {
            self.accelerators = previous;
            return Err(e);
        }
        let device = Accelerator::new(spec.clone()).map_err(bad)?;
        self.devices.insert(spec.name.clone(), device);
        self.rebuild()?;
        let platform = self.platform()?;
        Ok(Some(json!({
            "name": spec.name,
            "stage": spec.stage,
            "technology": platform.model().technology,
            "domains": platform.domains().iter().map(|d| d.id.clone()).collect::<Vec<_>>(),
        })))
    }

    fn offload(&mut self, raw: &Value) -> Outcome {
        let a: OffloadArgs = args(raw)?;
        let operands: KernelOperands = match &a.operands {
            DocRef::Inline(v) => json::from_value(v.clone()).map_err(bad)?,
            DocRef::Name(name) => {
                let path = self
                    .resolver
                    .find_file(name, None)
                    .ok_or_else(|| bad(format!("operand file `{name}` not found")))?;
                KernelOperands::from_file(&path).map_err(bad)?
            }
        };
        let device = self
            .devices
            .get_mut(&a.target)
            .ok_or_else(|| bad(format!("accelerator `{}` is not registered", a.target)))?;
        let result = device.offload(&operands).map_err(exec)?;
        Ok(Some(to_value(&result)))
    }
}

/// Serves one session over a line stream until EOF or `shutdown`.
pub fn serve_stream<R: BufRead, W: Write>(session: &mut Session, reader: R, mut writer: W) -> std::io::Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = session.handle_line(&line);
        writeln!(writer, "{}", reply.to_line())?;
        writer.flush()?;
        if session.is_closed() {
            break;
        }
    }
    Ok(())
}

/// Accepts connections on a Unix socket; each gets its own session and thread.
#[cfg(unix)]
pub fn serve_unix(path: &Path, template: Session) -> std::io::Result<()> {
    use std::io::BufReader;
    use std::os::unix::net::UnixListener;
    if path.exists() {
        std::fs::remove_file(path)?;
    }
    let listener = UnixListener::bind(path)?;
    for stream in listener.incoming() {
        let stream = stream?;
        let mut session = template.clone();
        std::thread::spawn(move || {
            let reader = BufReader::new(stream.try_clone().expect("socket clones"));
            let _ = serve_stream(&mut session, reader, stream);
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session() -> Session {
        Session::new(Resolver::new(None).with_config_dir(None), 0)
    }

    fn send(s: &mut Session, line: &str) -> ControlReply {
        s.handle_line(line)
    }

    #[test]
    fn reset_on_fresh_session() {
        let mut s = session();
        let r = send(&mut s, r#"{"id":"1","cmd":"reset"}"#);
        assert_eq!(r.to_line(), r#"{"id":"1","ok":true}"#);
    }

    #[test]
    fn malformed_lines_keep_the_session_open() {
        let mut s = session();
        let r = send(&mut s, "{not json");
        assert_eq!(r.error.unwrap().code, ErrorCode::BadArguments);
        let r = send(&mut s, r#"{"id":7,"cmd":"dance"}"#);
        assert_eq!((r.id, r.error.unwrap().code), (json!(7), ErrorCode::UnknownCommand));
        let r = send(&mut s, r#"{"id":[1,2],"cmd":"run"}"#);
        assert_eq!((r.id, r.error.unwrap().code), (json!([1, 2]), ErrorCode::InvalidState));
        assert!(send(&mut s, r#"{"id":1,"cmd":"reset"}"#).ok);
    }

    #[test]
    fn one_millijoule_fixture() {
        let mut s = session();
        let load = json!({"id": 1, "cmd": "load_program", "args": {
            "program": {"name": "busy", "phases": [{"op": "compute", "kernel": "spin", "target": "cpu"}]},
            "timing": {"spin": {"cpu": 20000000}},
            "energy_model": {"technology": "t", "voltage_v": 0.8, "ref_freq_hz": 20000000,
                "domains": {"cpu": {"kind": "logic", "active_uw": 1000.0, "clock_gated_uw": 0.0, "power_gated_uw": 0.0}}}
        }});
        assert!(send(&mut s, &load.to_string()).ok);
        assert!(send(&mut s, r#"{"id":2,"cmd":"run"}"#).ok);
        let r = send(&mut s, r#"{"id":3,"cmd":"estimate_energy"}"#);
        let total = r.payload.unwrap()["total_energy_j"].as_f64().unwrap();
        assert!((total - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn flash_round_trip() {
        let mut s = session();
        assert!(
            send(
                &mut s,
                r#"{"id":1,"cmd":"flash_write","args":{"addr":4094,"data":"deadbeef"}}"#
            )
            .ok
        );
        let r = send(&mut s, r#"{"id":2,"cmd":"flash_read","args":{"addr":4092,"len":8}}"#);
        assert_eq!(r.payload.unwrap()["data"], "0000deadbeef0000");
        let r = send(&mut s, r#"{"id":3,"cmd":"flash_write","args":{"addr":0,"data":"xyz"}}"#);
        assert_eq!(r.error.unwrap().code, ErrorCode::BadArguments);
    }

    #[test]
    fn offload_through_registered_accelerator() {
        let mut s = session();
        let r = send(
            &mut s,
            r#"{"id":1,"cmd":"register_accelerator","args":{"spec":"cgra-rtl"}}"#,
        );
        assert!(r.ok, "{r:?}");
        assert_eq!(r.payload.unwrap()["technology"], "tsmc65-placeholder+cgra-pnr");
        let a: Vec<i32> = (0..121 * 16).map(|i| i % 7 - 3).collect();
        let b: Vec<i32> = (0..16 * 4).map(|i| i % 5 - 2).collect();
        let msg = json!({"id": 2, "cmd": "offload", "args": {"target": "cgra", "operands": {
            "kernel": "mm", "a": {"shape": [121, 16], "data": a}, "b": {"shape": [16, 4], "data": b}}}});
        let r = send(&mut s, &msg.to_string());
        assert!(r.ok, "{r:?}");
        let p = r.payload.unwrap();
        assert_eq!(p["accel_cycles"], 20000);
        assert_eq!(p["output"]["shape"], json!([121, 4]));
    }

    #[test]
    fn shutdown_closes() {
        let mut s = session();
        let input = b"{\"id\":1,\"cmd\":\"shutdown\"}\n{\"id\":2,\"cmd\":\"reset\"}\n";
        let mut out = Vec::new();
        serve_stream(&mut s, &input[..], &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "{\"id\":1,\"ok\":true}\n");
    }
}
