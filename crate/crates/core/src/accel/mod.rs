//! Pluggable accelerators: software models for functional bring-up and
//! RTL-stage models carrying timing and power annotations, both driven
//! through the same mailbox protocol.

pub mod fft;
pub mod kernels;
pub mod mailbox;

use crate::json::{self, ParseError};
use crate::model::{DomainKind, DomainPower, DomainSpec};
use crate::platform::Platform;
use mailbox::{ConfigBlock, Mailbox, MailboxLayout, MailboxStatus, CONFIG_WORDS};
use num_complex::Complex;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use thiserror::Error;

pub use fft::{kernel_fft512_fxp, FFT_POINTS};
pub use kernels::{kernel_conv2d_i32, kernel_matmul_i32, Tensor};

pub const KERNEL_MM: &str = "mm";
pub const KERNEL_CONV: &str = "conv";
pub const KERNEL_FFT: &str = "fft";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AccelError {
    #[error("accelerator name `{0}` is already in use")]
    DuplicateName(String),
    #[error("RTL-stage accelerator `{name}` lacks {missing}")]
    IncompleteRtlSpec { name: String, missing: String },
    #[error("accelerator `{0}` is not registered")]
    UnknownAccelerator(String),
    #[error("accelerator `{target}` does not support kernel `{kernel}`")]
    UnsupportedKernel { target: String, kernel: String },
    #[error("mailbox is busy")]
    MailboxBusy,
    #[error("accelerator reported an error: {0}")]
    AcceleratorError(String),
    #[error("illegal mailbox transition {from:?} -> {to:?}")]
    IllegalTransition { from: MailboxStatus, to: MailboxStatus },
    #[error("bad mailbox layout: {0}")]
    BadMailbox(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("energy model: {0}")]
    Model(#[from] crate::model::ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    SoftwareModel,
    RtlStage,
}

/// Power domain contributed by an RTL-stage accelerator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccelPower {
    pub id: String,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(flatten)]
    pub power: DomainPower,
}

impl AccelPower {
    pub fn domain(&self) -> DomainSpec {
        DomainSpec::new(
            self.id.clone(),
            self.name.clone().unwrap_or_else(|| self.id.clone()),
            DomainKind::Logic,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceleratorSpec {
    pub name: String,
    pub stage: Stage,
    pub kernels: BTreeSet<String>,
    #[serde(default)]
    pub mailbox: MailboxLayout,
    /// Accelerator cycles per kernel invocation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<BTreeMap<String, u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power: Option<AccelPower>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub technology: Option<String>,
    /// Host cycles spent per configuration word written to the mailbox.
    #[serde(default = "one")]
    pub host_cycles_per_word: u64,
}

fn one() -> u64 {
    1
}

impl AcceleratorSpec {
    pub fn from_json(text: &str) -> Result<Self, ParseError> {
        json::parse(text)
    }

    pub fn software_model(name: impl Into<String>, kernels: &[&str]) -> Self {
        Self {
            name: name.into(),
            stage: Stage::SoftwareModel,
            kernels: kernels.iter().map(|k| k.to_string()).collect(),
            mailbox: MailboxLayout::default(),
            timing: None,
            power: None,
            technology: None,
            host_cycles_per_word: 1,
        }
    }

    /// Checks the stage-specific requirements.
    pub fn validate(&self) -> Result<(), AccelError> {
        self.mailbox.validate()?;
        if self.stage == Stage::RtlStage {
            let incomplete = |missing: String| AccelError::IncompleteRtlSpec {
                name: self.name.clone(),
                missing,
            };
            let timing = self.timing.as_ref().ok_or_else(|| incomplete("timing".into()))?;
            if self.power.is_none() {
                return Err(incomplete("power".into()));
            }
            for kernel in &self.kernels {
                match timing.get(kernel) {
                    Some(c) if *c > 0 => {}
                    _ => return Err(incomplete(format!("a positive timing entry for `{kernel}`"))),
                }
            }
        }
        Ok(())
    }

    /// Power domain added to the platform, if any.
    pub fn power_domain(&self) -> Option<DomainSpec> {
        match self.stage {
            Stage::RtlStage => self.power.as_ref().map(AccelPower::domain),
            Stage::SoftwareModel => None,
        }
    }

    /// Host-side cycles for one mailbox handshake.
    pub fn handshake_cycles(&self) -> u64 {
        CONFIG_WORDS as u64 * self.host_cycles_per_word
    }

    /// Accelerator cycles for one invocation; zero for software models.
    pub fn accel_cycles(&self, kernel: &str) -> Option<u64> {
        match self.stage {
            Stage::SoftwareModel => Some(0),
            Stage::RtlStage => self.timing.as_ref()?.get(kernel).copied(),
        }
    }
}

/// Adds `spec` to `platform`, merging its power domain into the energy model.
pub fn register_accelerator(spec: AcceleratorSpec, platform: &Platform) -> Result<Platform, AccelError> {
    let mut next = platform.clone();
    next.insert_accelerator(spec)?;
    Ok(next)
}

/// Operands of one of the built-in kernels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kernel", rename_all = "snake_case")]
pub enum KernelOperands {
    Mm {
        a: Tensor,
        b: Tensor,
    },
    Conv {
        input: Tensor,
        filters: Tensor,
    },
    /// Shape 512×2: interleaved real and imaginary Q1.31 words.
    Fft {
        input: Tensor,
    },
}

impl KernelOperands {
    pub fn kernel_id(&self) -> &'static str {
        match self {
            KernelOperands::Mm { .. } => KERNEL_MM,
            KernelOperands::Conv { .. } => KERNEL_CONV,
            KernelOperands::Fft { .. } => KERNEL_FFT,
        }
    }

    fn code(&self) -> u32 {
        match self {
            KernelOperands::Mm { .. } => 1,
            KernelOperands::Conv { .. } => 2,
            KernelOperands::Fft { .. } => 3,
        }
    }

    /// Loads an operand file; tensors carry either inline `data` or a `raw_file`
    /// of little-endian `i32` words resolved against the file's directory.
    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut value: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(obj) = value.as_object_mut() {
            for (_, v) in obj.iter_mut() {
                let raw = v.get("raw_file").and_then(|r| r.as_str()).map(|s| base.join(s));
                if let (Some(raw), Some(shape)) = (raw, v.get("shape").cloned()) {
                    let shape: Vec<usize> = serde_json::from_value(shape).map_err(|e| e.to_string())?;
                    let bytes = std::fs::read(&raw).map_err(|e| format!("{}: {e}", raw.display()))?;
                    let tensor = Tensor::from_raw_le(shape, &bytes).map_err(|e| e.to_string())?;
                    *v = serde_json::to_value(tensor).expect("tensor serializes");
                }
            }
        }
        json::from_value(value).map_err(|e| e.to_string())
    }

    /// Runs the kernel directly on the host, bypassing any mailbox.
    pub fn run_direct(&self) -> Result<Tensor, AccelError> {
        match self {
            KernelOperands::Mm { a, b } => kernel_matmul_i32(a, b),
            KernelOperands::Conv { input, filters } => kernel_conv2d_i32(input, filters),
            KernelOperands::Fft { input } => {
                let points = fft_points(input)?;
                let out = kernel_fft512_fxp(&points)?;
                Ok(fft_tensor(&out))
            }
        }
    }

    fn encode(&self) -> Result<(ConfigBlock, Vec<u8>, u32), AccelError> {
        let (dims, bytes, out_words) = match self {
            KernelOperands::Mm { a, b } => {
                kernel_matmul_i32(&Tensor::zeros(a.shape.clone()), &Tensor::zeros(b.shape.clone()))?;
                let mut bytes = a.to_raw_le();
                bytes.extend(b.to_raw_le());
                ([a.shape[0], a.shape[1], b.shape[1], 0], bytes, a.shape[0] * b.shape[1])
            }
            KernelOperands::Conv { input, filters } => {
                kernel_conv2d_i32(
                    &Tensor::zeros(input.shape.clone()),
                    &Tensor::zeros(filters.shape.clone()),
                )?;
                let mut bytes = input.to_raw_le();
                bytes.extend(filters.to_raw_le());
                let [h, w, c] = kernels::CONV_INPUT_SHAPE;
                let out: usize = kernels::CONV_OUTPUT_SHAPE.iter().product();
                ([h, w, c, kernels::CONV_FILTER_SHAPE[0]], bytes, out)
            }
            KernelOperands::Fft { input } => {
                fft_points(input)?;
                ([FFT_POINTS, 0, 0, 0], input.to_raw_le(), 2 * FFT_POINTS)
            }
        };
        let block = ConfigBlock {
            kernel_code: self.code(),
            dims: dims.map(|d| d as u32),
            ..ConfigBlock::default()
        };
        Ok((block, bytes, (out_words * 4) as u32))
    }
}

fn fft_points(t: &Tensor) -> Result<Vec<Complex<i32>>, AccelError> {
    if t.shape != [FFT_POINTS, 2] {
        return Err(AccelError::ShapeMismatch(format!(
            "FFT input: expected shape [{FFT_POINTS}, 2], got {:?}",
            t.shape
        )));
    }
    Ok(t.data.chunks_exact(2).map(|c| Complex::new(c[0], c[1])).collect())
}

fn fft_tensor(points: &[Complex<i32>]) -> Tensor {
    Tensor {
        shape: vec![points.len(), 2],
        data: points.iter().flat_map(|c| [c.re, c.im]).collect(),
    }
}

fn words(bytes: &[u8]) -> Vec<i32> {
    bytes
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

/// Device-side execution of a decoded mailbox request.
fn execute(block: &ConfigBlock, input: &[u8]) -> Result<Vec<u8>, String> {
    let w = words(input);
    let d = block.dims.map(|v| v as usize);
    let result = match block.kernel_code {
        1 => {
            let (m, k, n) = (d[0], d[1], d[2]);
            if w.len() < m * k + k * n {
                return Err("short MM operands".into());
            }
            let a = Tensor::new(vec![m, k], w[..m * k].to_vec());
            let b = Tensor::new(vec![k, n], w[m * k..m * k + k * n].to_vec());
            kernel_matmul_i32(&a.map_err(|e| e.to_string())?, &b.map_err(|e| e.to_string())?)
        }
        2 => {
            let (h, wd, c, f) = (d[0], d[1], d[2], d[3]);
            let in_len = h * wd * c;
            let f_len = f * c * 9;
            if w.len() < in_len + f_len {
                return Err("short CONV operands".into());
            }
            let input = Tensor::new(vec![h, wd, c], w[..in_len].to_vec()).map_err(|e| e.to_string())?;
            let filters =
                Tensor::new(vec![f, c, 3, 3], w[in_len..in_len + f_len].to_vec()).map_err(|e| e.to_string())?;
            kernel_conv2d_i32(&input, &filters)
        }
        3 => {
            let n = d[0];
            if w.len() < 2 * n {
                return Err("short FFT operands".into());
            }
            let points: Vec<_> = w[..2 * n].chunks_exact(2).map(|c| Complex::new(c[0], c[1])).collect();
            kernel_fft512_fxp(&points).map(|out| fft_tensor(&out))
        }
        other => return Err(format!("unknown kernel code {other}")),
    };
    result.map(|t| t.to_raw_le()).map_err(|e| e.to_string())
}

/// What one offload cost and produced.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OffloadResult {
    pub output: Tensor,
    pub host_cycles: u64,
    pub accel_cycles: u64,
}

/// A registered accelerator together with its mailbox.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Accelerator {
    spec: AcceleratorSpec,
    mailbox: Mailbox,
}

impl Accelerator {
    pub fn new(spec: AcceleratorSpec) -> Result<Self, AccelError> {
        spec.validate()?;
        let mailbox = Mailbox::new(spec.mailbox)?;
        Ok(Self { spec, mailbox })
    }

    pub fn spec(&self) -> &AcceleratorSpec {
        &self.spec
    }

    pub fn mailbox(&self) -> &Mailbox {
        &self.mailbox
    }

    pub fn mailbox_mut(&mut self) -> &mut Mailbox {
        &mut self.mailbox
    }

    /// Device step: services a rung doorbell, if any.
    pub fn service(&mut self) -> Result<MailboxStatus, AccelError> {
        self.mailbox.service(execute)
    }

    /// Full handshake: configure, ring, service, collect, acknowledge.
    pub fn offload(&mut self, operands: &KernelOperands) -> Result<OffloadResult, AccelError> {
        if self.mailbox.status() != MailboxStatus::Idle {
            return Err(AccelError::MailboxBusy);
        }
        let kernel = operands.kernel_id();
        if !self.spec.kernels.contains(kernel) {
            return Err(AccelError::UnsupportedKernel {
                target: self.spec.name.clone(),
                kernel: kernel.to_string(),
            });
        }
        let accel_cycles = self
            .spec
            .accel_cycles(kernel)
            .ok_or_else(|| AccelError::UnsupportedKernel {
                target: self.spec.name.clone(),
                kernel: kernel.to_string(),
            })?;
        let (mut block, input, out_len) = operands.encode()?;
        let layout = *self.mailbox.layout();
        block.input_addr = layout.input.base;
        block.input_len = input.len() as u32;
        block.output_addr = layout.output.base;
        block.output_len = out_len;
        self.mailbox.write_input(&input)?;
        self.mailbox.write_config(&block)?;
        self.mailbox.ring_doorbell()?;
        let status = self.service()?;
        if status != MailboxStatus::Done {
            self.mailbox.acknowledge()?;
            return Err(AccelError::AcceleratorError(format!("status {status:?}")));
        }
        let bytes = self.mailbox.read_output();
        self.mailbox.acknowledge()?;
        let shape = match operands {
            KernelOperands::Mm { a, b } => vec![a.shape[0], b.shape[1]],
            KernelOperands::Conv { .. } => kernels::CONV_OUTPUT_SHAPE.to_vec(),
            KernelOperands::Fft { .. } => vec![FFT_POINTS, 2],
        };
        Ok(OffloadResult {
            output: Tensor::from_raw_le(shape, &bytes)?,
            host_cycles: self.spec.handshake_cycles(),
            accel_cycles,
        })
    }
}
