//! Scenario files: parameter sweeps over workload programs, per-run energy
//! reports, a normalized summary table and regime assertions.
//!
//! A run template is any JSON object; each `sweep` entry substitutes its
//! parameters into the template and into the referenced program. A string
//! that is exactly `"$name"` becomes the parameter value (keeping its JSON
//! type); `$name` inside a longer string is replaced textually.

use super::config::{AssetKind, MissingInput, Origin, Resolver};
use crate::accel::{register_accelerator, AcceleratorSpec};
use crate::engine::{Engine, EngineConfig, Phase, SimError, SimOutcome, TimingTable, WorkloadProgram};
use crate::json::{self, ParseError};
use crate::metrics::{counters_snapshot, estimate_energy, CounterMode, EnergyReport, MetricsError};
use crate::model::{ClockConfig, EnergyModel};
use crate::periph::adc::SampleSource;
use crate::periph::flash::{FlashMode, VirtualFlash};
use crate::platform::Platform;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    MissingInput(#[from] MissingInput),
    #[error("{name}: {error}")]
    Parse { name: String, error: ParseError },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("run `{label}`: {error}")]
    Run { label: String, error: SimError },
    #[error("run `{label}`: {error}")]
    Metrics { label: String, error: MetricsError },
    #[error("writing outputs: {0}")]
    Io(#[from] std::io::Error),
    #[error("assertion(s) failed: {}", failed.join(", "))]
    AssertionFailed { failed: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplesSpec {
    Synthetic {
        #[serde(default)]
        seed: u64,
    },
    /// Raw little-endian `i16` or a headered sample file.
    File { path: String },
}

impl Default for SamplesSpec {
    fn default() -> Self {
        SamplesSpec::Synthetic { seed: 0 }
    }
}

/// Flash contents present before every run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlashImageSpec {
    /// Fill this many bytes with the synthetic sample stream.
    #[serde(default)]
    pub synthetic_bytes: Option<u64>,
    #[serde(default)]
    pub seed: u64,
    /// Raw binary image.
    #[serde(default)]
    pub file: Option<String>,
    #[serde(default)]
    pub base: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Lt,
    Gt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatioPair {
    pub name: String,
    pub num: String,
    pub den: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Check {
    /// `gt < metric(run) < lt`, either bound optional.
    Threshold {
        run: String,
        metric: String,
        #[serde(default)]
        lt: Option<f64>,
        #[serde(default)]
        gt: Option<f64>,
    },
    /// Non-decreasing along `runs` (non-increasing with `decreasing`).
    Monotonic {
        metric: String,
        runs: Vec<String>,
        #[serde(default)]
        decreasing: bool,
    },
    Compare {
        metric: String,
        lhs: String,
        op: Relation,
        rhs: String,
    },
    /// `min <= metric(num) / metric(den) <= max`.
    RatioRange {
        metric: String,
        num: String,
        den: String,
        min: f64,
        max: f64,
    },
    /// The pair named `expect` has the strictly largest ratio.
    LargestRatio {
        metric: String,
        pairs: Vec<RatioPair>,
        expect: String,
    },
    /// Active time share equals `min(1, fs*c/f)` exactly for every run whose
    /// program is a single acquisition (or for `runs`, if given).
    AcquisitionClosedForm {
        #[serde(default)]
        runs: Vec<String>,
    },
}

impl Check {
    fn kind(&self) -> &'static str {
        match self {
            Check::Threshold { .. } => "threshold",
            Check::Monotonic { .. } => "monotonic",
            Check::Compare { .. } => "compare",
            Check::RatioRange { .. } => "ratio_range",
            Check::LargestRatio { .. } => "largest_ratio",
            Check::AcquisitionClosedForm { .. } => "acquisition_closed_form",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(flatten)]
    pub check: Check,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub notes: Vec<String>,
    pub energy_model: String,
    #[serde(default)]
    pub timing: Option<String>,
    #[serde(default)]
    pub accelerators: Vec<String>,
    #[serde(default)]
    pub clock_hz: Option<u64>,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub samples: SamplesSpec,
    #[serde(default)]
    pub flash_image: Option<FlashImageSpec>,
    /// Label of the run every other run is normalized to, unless a run names its own `baseline`.
    #[serde(default)]
    pub normalize_to: Option<String>,
    pub runs: Vec<Value>,
    #[serde(default)]
    pub assertions: Vec<Assertion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum ProgramRef {
    Name(String),
    Inline(Value),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSpec {
    label: String,
    program: ProgramRef,
    #[serde(default)]
    baseline: Option<String>,
    #[serde(default)]
    tags: BTreeMap<String, Value>,
    #[serde(default)]
    flash_mode: Option<FlashMode>,
    #[serde(default)]
    counter_mode: CounterMode,
    #[serde(default)]
    engine: Option<EngineConfig>,
}

#[derive(Debug, Clone)]
struct ResolvedRun {
    spec: RunSpec,
    params: BTreeMap<String, Value>,
    program: WorkloadProgram,
}

/// A scenario with every referenced file loaded and validated.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub origin: Origin,
    platform: Platform,
    timing: TimingTable,
    samples: Option<SampleSource>,
    flash: VirtualFlash,
    runs: Vec<ResolvedRun>,
}

fn parse_named<T: serde::de::DeserializeOwned>(name: &str, text: &str) -> Result<T, ScenarioError> {
    json::parse(text).map_err(|error| ScenarioError::Parse {
        name: name.to_string(),
        error,
    })
}

fn text_of(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Replaces `$name` placeholders in every string of `value`.
pub fn substitute(value: &Value, params: &BTreeMap<String, Value>) -> Value {
    match value {
        Value::String(s) => {
            if let Some(v) = s.strip_prefix('$').and_then(|name| params.get(name)) {
                return v.clone();
            }
            let mut keys: Vec<&String> = params.keys().collect();
            keys.sort_by_key(|k| std::cmp::Reverse(k.len()));
            let mut out = s.clone();
            for k in keys {
                out = out.replace(&format!("${k}"), &text_of(&params[k]));
            }
            Value::String(out)
        }
        Value::Array(items) => Value::Array(items.iter().map(|v| substitute(v, params)).collect()),
        Value::Object(map) => Value::Object(map.iter().map(|(k, v)| (k.clone(), substitute(v, params))).collect()),
        other => other.clone(),
    }
}

/// File-name-safe form of a run label.
pub fn sanitize_label(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

impl Scenario {
    /// Loads a scenario by path or built-in name (`acquisition`, `processing`, `flash`).
    pub fn load(name: &str, resolver: &Resolver) -> Result<Self, ScenarioError> {
        let (text, origin) = resolver.load(name, Some(AssetKind::Scenario))?;
        Self::from_text(&text, origin, resolver)
    }

    pub fn from_text(text: &str, origin: Origin, resolver: &Resolver) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = parse_named(&origin.to_string(), text)?;
        let resolver = resolver.relative_to(&origin);

        let (model_text, model_origin) = resolver.load(&file.energy_model, Some(AssetKind::Model))?;
        let model: EnergyModel = parse_named(&model_origin.to_string(), &model_text)?;
        let clock = ClockConfig::new(file.clock_hz.unwrap_or(model.ref_freq_hz))
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        let mut platform = Platform::from_model(model, clock).map_err(|errs| {
            ScenarioError::Invalid(errs.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))
        })?;
        for name in &file.accelerators {
            let (text, origin) = resolver.load(name, Some(AssetKind::Accelerator))?;
            let spec: AcceleratorSpec = parse_named(&origin.to_string(), &text)?;
            platform = register_accelerator(spec, &platform).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        }
        let timing = match &file.timing {
            Some(name) => {
                let (text, origin) = resolver.load(name, Some(AssetKind::Timing))?;
                parse_named(&origin.to_string(), &text)?
            }
            None => TimingTable::default(),
        };
        file.engine
            .validate()
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;

        let samples = match &file.samples {
            SamplesSpec::Synthetic { .. } => None,
            SamplesSpec::File { path } => {
                let found = resolver.find_file(path, None).ok_or_else(|| MissingInput {
                    name: path.clone(),
                    reason: "sample file not found".into(),
                })?;
                Some(SampleSource::from_file(&found).map_err(|e| ScenarioError::Invalid(e.to_string()))?)
            }
        };

        let mut flash = VirtualFlash::new(file.engine.flash).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        if let Some(image) = &file.flash_image {
            if let Some(bytes) = image.synthetic_bytes {
                let source = SampleSource::synthetic(bytes.div_ceil(2) as usize, image.seed);
                let mut data: Vec<u8> = source.samples().iter().flat_map(|s| s.to_le_bytes()).collect();
                data.truncate(bytes as usize);
                flash
                    .write(image.base, &data)
                    .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
            }
            if let Some(path) = &image.file {
                let found = resolver.find_file(path, None).ok_or_else(|| MissingInput {
                    name: path.clone(),
                    reason: "flash image not found".into(),
                })?;
                flash
                    .import_image(&found, image.base)
                    .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
            }
        }

        let mut programs: BTreeMap<String, Value> = BTreeMap::new();
        let mut runs = Vec::new();
        for (i, template) in file.runs.iter().enumerate() {
            let mut template = template.clone();
            let sweep = match template.as_object_mut().and_then(|o| o.remove("sweep")) {
                None => vec![BTreeMap::new()],
                Some(v) => serde_json::from_value::<Vec<BTreeMap<String, Value>>>(v)
                    .map_err(|e| ScenarioError::Invalid(format!("runs[{i}].sweep: {e}")))?,
            };
            for params in sweep {
                let spec: RunSpec =
                    json::from_value(substitute(&template, &params)).map_err(|error| ScenarioError::Parse {
                        name: format!("runs[{i}]"),
                        error,
                    })?;
                let program_value = match &spec.program {
                    ProgramRef::Inline(v) => v.clone(),
                    ProgramRef::Name(name) => match programs.get(name) {
                        Some(v) => v.clone(),
                        None => {
                            let (text, origin) = resolver.load(name, Some(AssetKind::Program))?;
                            let v: Value = parse_named(&origin.to_string(), &text)?;
                            programs.insert(name.clone(), v.clone());
                            v
                        }
                    },
                };
                let program: WorkloadProgram =
                    json::from_value(substitute(&program_value, &params)).map_err(|error| ScenarioError::Parse {
                        name: format!("program of run `{}`", spec.label),
                        error,
                    })?;
                crate::engine::validate_program(&program, &timing, &platform).map_err(|e| ScenarioError::Run {
                    label: spec.label.clone(),
                    error: e.into(),
                })?;
                runs.push(ResolvedRun { spec, params, program });
            }
        }

        let mut seen = BTreeSet::new();
        for run in &runs {
            if !seen.insert(sanitize_label(&run.spec.label)) {
                return Err(ScenarioError::Invalid(format!(
                    "run label `{}` is not unique as a file name",
                    run.spec.label
                )));
            }
        }
        let labels: BTreeSet<&str> = runs.iter().map(|r| r.spec.label.as_str()).collect();
        let check_label = |l: &str| {
            if labels.contains(l) {
                Ok(())
            } else {
                Err(ScenarioError::Invalid(format!("unknown run label `{l}`")))
            }
        };
        if let Some(n) = &file.normalize_to {
            check_label(n)?;
        }
        for run in &runs {
            if let Some(b) = &run.spec.baseline {
                check_label(b)?;
            }
        }
        for a in &file.assertions {
            for l in referenced_labels(&a.check) {
                check_label(l)?;
            }
        }

        Ok(Self {
            file,
            origin,
            platform,
            timing,
            samples,
            flash,
            runs,
        })
    }

    /// Reseeds every synthetic input.
    pub fn with_seed(mut self, seed: u64) -> Self {
        if let SamplesSpec::Synthetic { seed: s } = &mut self.file.samples {
            *s = seed;
        }
        self
    }

    pub fn platform(&self) -> &Platform {
        &self.platform
    }

    pub fn run_labels(&self) -> Vec<&str> {
        self.runs.iter().map(|r| r.spec.label.as_str()).collect()
    }

    fn source_for(&self, program: &WorkloadProgram) -> SampleSource {
        match (&self.samples, &self.file.samples) {
            (Some(s), _) => s.clone(),
            (None, SamplesSpec::Synthetic { seed }) => {
                let n: u64 = program
                    .phases
                    .iter()
                    .map(|p| match p {
                        Phase::Acquire { n_samples, .. } => *n_samples,
                        _ => 0,
                    })
                    .sum();
                SampleSource::synthetic(n.max(1) as usize, *seed)
            }
            (None, SamplesSpec::File { .. }) => unreachable!("file samples are loaded up front"),
        }
    }

    /// Runs every sweep point and evaluates the assertions; writes nothing.
    pub fn execute(&self) -> Result<ScenarioReport, ScenarioError> {
        let clock = self.platform.clock();
        let mut reports = Vec::new();
        for run in &self.runs {
            let label = run.spec.label.clone();
            let mut config = run.spec.engine.unwrap_or(self.file.engine);
            let mut flash = self.flash.clone();
            if let Some(mode) = run.spec.flash_mode {
                config.flash.mode = mode;
                flash.set_mode(mode);
            }
            let mut engine = Engine::load(
                run.program.clone(),
                self.timing.clone(),
                self.platform.clone(),
                config,
                self.source_for(&run.program),
                Some(flash),
            )
            .map_err(|error| ScenarioError::Run {
                label: label.clone(),
                error,
            })?;
            let outcome = engine.run_to_end().map_err(|error| ScenarioError::Run {
                label: label.clone(),
                error,
            })?;
            let counters =
                counters_snapshot(&outcome, run.spec.counter_mode).map_err(|error| ScenarioError::Metrics {
                    label: label.clone(),
                    error,
                })?;
            let energy =
                estimate_energy(&counters, self.platform.model(), clock).map_err(|error| ScenarioError::Metrics {
                    label: label.clone(),
                    error,
                })?;
            let metrics = run_metrics(&energy, &outcome, clock);
            reports.push(RunReport {
                label,
                program: run.program.name.clone(),
                params: run.params.clone(),
                tags: run.spec.tags.iter().map(|(k, v)| (k.clone(), text_of(v))).collect(),
                counter_mode: run.spec.counter_mode,
                acquisition: single_acquisition(&run.program),
                metrics,
                energy,
                outcome,
            });
        }

        let by_label: BTreeMap<&str, &RunReport> = reports.iter().map(|r| (r.label.as_str(), r)).collect();
        let summary: Vec<SummaryRow> = self
            .runs
            .iter()
            .zip(&reports)
            .map(|(run, report)| {
                let baseline = run.spec.baseline.clone().or_else(|| self.file.normalize_to.clone());
                let (normalized_time, normalized_energy) = match baseline.as_deref().and_then(|b| by_label.get(b)) {
                    Some(base) => (
                        ratio(report.metric("window_s"), base.metric("window_s")),
                        ratio(report.metric("total_energy_j"), base.metric("total_energy_j")),
                    ),
                    None => (None, None),
                };
                SummaryRow {
                    label: report.label.clone(),
                    program: report.program.clone(),
                    tags: report.tags.clone(),
                    baseline,
                    metrics: report.metrics.clone(),
                    normalized_time,
                    normalized_energy,
                }
            })
            .collect();

        let assertions = self
            .file
            .assertions
            .iter()
            .enumerate()
            .map(|(i, a)| evaluate(i, a, &by_label, clock))
            .collect();

        Ok(ScenarioReport {
            scenario: self.file.name.clone(),
            description: self.file.description.clone(),
            notes: self.file.notes.clone(),
            runs: reports,
            summary,
            assertions,
        })
    }
}

fn ratio(a: f64, b: f64) -> Option<f64> {
    (b != 0.0).then(|| a / b)
}

fn referenced_labels(check: &Check) -> Vec<&str> {
    match check {
        Check::Threshold { run, .. } => vec![run.as_str()],
        Check::Monotonic { runs, .. } | Check::AcquisitionClosedForm { runs } => {
            runs.iter().map(String::as_str).collect()
        }
        Check::Compare { lhs, rhs, .. } => vec![lhs.as_str(), rhs.as_str()],
        Check::RatioRange { num, den, .. } => vec![num.as_str(), den.as_str()],
        Check::LargestRatio { pairs, .. } => pairs.iter().flat_map(|p| [p.num.as_str(), p.den.as_str()]).collect(),
    }
}

/// `(fs_hz, n_samples, per_sample_cpu_cycles)` of a program that is one acquisition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcquisitionParams {
    pub fs_hz: u64,
    pub n_samples: u64,
    pub per_sample_cpu_cycles: u64,
}

fn single_acquisition(program: &WorkloadProgram) -> Option<AcquisitionParams> {
    let mut phases = program.phases.iter().filter(|p| !matches!(p, Phase::Marker { .. }));
    match (phases.next(), phases.next()) {
        (
            Some(Phase::Acquire {
                fs_hz,
                n_samples,
                per_sample_cpu_cycles,
            }),
            None,
        ) => Some(AcquisitionParams {
            fs_hz: *fs_hz,
            n_samples: *n_samples,
            per_sample_cpu_cycles: *per_sample_cpu_cycles,
        }),
        _ => None,
    }
}

pub const METRICS: &[&str] = &[
    "window_cycles",
    "window_s",
    "total_energy_j",
    "active_energy_j",
    "sleep_energy_j",
    "active_time_share",
    "sleep_time_share",
    "active_energy_share",
    "sleep_energy_share",
    "flash_transfer_cycles",
    "flash_transfer_s",
    "adc_samples",
    "adc_underruns",
    "stall_cycles",
];

fn run_metrics(energy: &EnergyReport, outcome: &SimOutcome, clock: ClockConfig) -> BTreeMap<String, f64> {
    let f = clock.freq_hz() as f64;
    let b = energy.breakdown;
    [
        ("window_cycles", energy.window_cycles as f64),
        ("window_s", energy.window_s),
        ("total_energy_j", energy.total_energy_j),
        ("active_energy_j", energy.active_energy_j),
        ("sleep_energy_j", energy.sleep_energy_j),
        ("active_time_share", b.active_time_share),
        ("sleep_time_share", b.sleep_time_share),
        ("active_energy_share", b.active_energy_share),
        ("sleep_energy_share", b.sleep_energy_share),
        ("flash_transfer_cycles", outcome.flash.transfer_cycles as f64),
        ("flash_transfer_s", outcome.flash.transfer_cycles as f64 / f),
        ("adc_samples", outcome.adc.samples as f64),
        ("adc_underruns", outcome.adc.underruns as f64),
        ("stall_cycles", outcome.adc.stall_cycles as f64),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub label: String,
    pub program: String,
    pub params: BTreeMap<String, Value>,
    pub tags: BTreeMap<String, String>,
    pub counter_mode: CounterMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acquisition: Option<AcquisitionParams>,
    pub metrics: BTreeMap<String, f64>,
    pub energy: EnergyReport,
    pub outcome: SimOutcome,
}

impl RunReport {
    pub fn metric(&self, name: &str) -> f64 {
        self.metrics.get(name).copied().unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: String,
    pub program: String,
    pub tags: BTreeMap<String, String>,
    pub baseline: Option<String>,
    pub metrics: BTreeMap<String, f64>,
    pub normalized_time: Option<f64>,
    pub normalized_energy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssertionResult {
    pub name: String,
    pub kind: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub description: Option<String>,
    pub notes: Vec<String>,
    pub runs: Vec<RunReport>,
    pub summary: Vec<SummaryRow>,
    pub assertions: Vec<AssertionResult>,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    pub fn failed(&self) -> Vec<String> {
        self.assertions
            .iter()
            .filter(|a| !a.passed)
            .map(|a| a.name.clone())
            .collect()
    }

    pub fn run(&self, label: &str) -> Option<&RunReport> {
        self.runs.iter().find(|r| r.label == label)
    }

    pub fn summary_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["label", "program", "tags", "baseline"];
        header.extend_from_slice(METRICS);
        header.extend(["normalized_time", "normalized_energy"]);
        w.write_record(&header).expect("in-memory write");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for row in &self.summary {
            let tags: Vec<String> = row.tags.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let mut record = vec![
                row.label.clone(),
                row.program.clone(),
                tags.join(";"),
                row.baseline.clone().unwrap_or_default(),
            ];
            record.extend(METRICS.iter().map(|m| opt(row.metrics.get(*m).copied())));
            record.push(opt(row.normalized_time));
            record.push(opt(row.normalized_energy));
            w.write_record(&record).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    /// Writes per-run reports, the summary table and assertion results into `dir`.
    pub fn write(&self, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut put = |name: String, text: String| -> std::io::Result<()> {
            let path = dir.join(name);
            std::fs::write(&path, text)?;
            written.push(path);
            Ok(())
        };
        for run in &self.runs {
            let stem = sanitize_label(&run.label);
            put(format!("{stem}.json"), json::to_pretty(run))?;
            put(format!("{stem}.csv"), run.energy.to_csv())?;
        }
        put("summary.csv".into(), self.summary_csv())?;
        put(
            "summary.json".into(),
            json::to_pretty(&serde_json::json!({
                "scenario": self.scenario,
                "description": self.description,
                "notes": self.notes,
                "rows": self.summary,
            })),
        )?;
        put(
            "assertions.json".into(),
            json::to_pretty(&serde_json::json!({
                "scenario": self.scenario,
                "passed": self.passed(),
                "results": self.assertions,
            })),
        )?;
        Ok(written)
    }
}

/// Executes `scenario`, writes its outputs into `out`, and fails if any assertion failed.
pub fn run_scenario(scenario: &Scenario, out: &Path) -> Result<ScenarioReport, ScenarioError> {
    let report = scenario.execute()?;
    report.write(out)?;
    if report.passed() {
        Ok(report)
    } else {
        Err(ScenarioError::AssertionFailed {
            failed: report.failed(),
        })
    }
}

fn evaluate(index: usize, a: &Assertion, runs: &BTreeMap<&str, &RunReport>, clock: ClockConfig) -> AssertionResult {
    let name = a.name.clone().unwrap_or_else(|| format!("{}#{index}", a.check.kind()));
    let m = |label: &str, metric: &str| runs[label].metric(metric);
    let (passed, detail) = match &a.check {
        Check::Threshold { run, metric, lt, gt } => {
            let v = m(run, metric);
            let ok = lt.is_none_or(|b| v < b) && gt.is_none_or(|b| v > b);
            (ok, format!("{metric}({run}) = {v}; bounds gt {gt:?} lt {lt:?}"))
        }
        Check::Monotonic {
            metric,
            runs: labels,
            decreasing,
        } => {
            let values: Vec<f64> = labels.iter().map(|l| m(l, metric)).collect();
            let ok = values
                .windows(2)
                .all(|w| if *decreasing { w[1] <= w[0] } else { w[1] >= w[0] });
            (ok, format!("{metric} along {labels:?} = {values:?}"))
        }
        Check::Compare { metric, lhs, op, rhs } => {
            let (l, r) = (m(lhs, metric), m(rhs, metric));
            let ok = match op {
                Relation::Lt => l < r,
                Relation::Gt => l > r,
            };
            (ok, format!("{metric}: {lhs} = {l}, {rhs} = {r}, expected {op:?}"))
        }
        Check::RatioRange {
            metric,
            num,
            den,
            min,
            max,
        } => {
            let r = m(num, metric) / m(den, metric);
            (
                r >= *min && r <= *max,
                format!("{metric}({num}) / {metric}({den}) = {r}; range [{min}, {max}]"),
            )
        }
        Check::LargestRatio { metric, pairs, expect } => {
            let ratios: Vec<(String, f64)> = pairs
                .iter()
                .map(|p| (p.name.clone(), m(&p.num, metric) / m(&p.den, metric)))
                .collect();
            let target = ratios.iter().find(|(n, _)| n == expect).map(|(_, r)| *r);
            let ok = match target {
                Some(t) => ratios.iter().all(|(n, r)| n == expect || *r < t),
                None => false,
            };
            (ok, format!("{metric} ratios {ratios:?}; expected `{expect}` largest"))
        }
        Check::AcquisitionClosedForm { runs: labels } => {
            let selected: Vec<&RunReport> = if labels.is_empty() {
                runs.values().filter(|r| r.acquisition.is_some()).copied().collect()
            } else {
                labels.iter().map(|l| runs[l.as_str()]).collect()
            };
            let f = clock.freq_hz();
            let mut ok = !selected.is_empty();
            let mut parts = Vec::new();
            for r in selected {
                match r.acquisition {
                    Some(p) => {
                        let busy = p.fs_hz as u128 * p.per_sample_cpu_cycles as u128;
                        let expected = if busy >= f as u128 { 1.0 } else { busy as f64 / f as f64 };
                        let got = r.metric("active_time_share");
                        ok &= got == expected;
                        parts.push(format!("{}: {got} vs {expected}", r.label));
                    }
                    None => {
                        ok = false;
                        parts.push(format!("{}: not a single acquisition", r.label));
                    }
                }
            }
            (ok, parts.join("; "))
        }
    };
    AssertionResult {
        name,
        kind: a.check.kind().to_string(),
        passed,
        detail,
    }
}
