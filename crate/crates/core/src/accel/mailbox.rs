//! Shared-memory mailbox used to hand work to an accelerator.
//!
//! The host writes a configuration block and operands into fixed regions,
//! then rings the doorbell by setting the status word. The device side moves
//! the status to `Busy`, computes, writes the output region and sets `Done`
//! (or `Error`). The host reads the output and acknowledges, returning the
//! mailbox to `Idle`.

use super::AccelError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub base: u32,
    pub len: u32,
}

impl Region {
    pub fn end(&self) -> u64 {
        self.base as u64 + self.len as u64
    }

    fn overlaps(&self, other: &Region) -> bool {
        (self.base as u64) < other.end() && (other.base as u64) < self.end()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MailboxLayout {
    pub config: Region,
    pub status_addr: u32,
    pub input: Region,
    pub output: Region,
}

impl Default for MailboxLayout {
    fn default() -> Self {
        Self {
            config: Region {
                base: 0x0000,
                len: 0x40,
            },
            status_addr: 0x0040,
            input: Region {
                base: 0x0100,
                len: 0x2000,
            },
            output: Region {
                base: 0x2100,
                len: 0x2000,
            },
        }
    }
}

impl MailboxLayout {
    fn status_region(&self) -> Region {
        Region {
            base: self.status_addr,
            len: 4,
        }
    }

    pub fn validate(&self) -> Result<(), AccelError> {
        let regions = [
            ("config", self.config),
            ("status", self.status_region()),
            ("input", self.input),
            ("output", self.output),
        ];
        if (self.config.len as usize) < CONFIG_WORDS * 4 {
            return Err(AccelError::BadMailbox(format!(
                "config region holds {} bytes, needs {}",
                self.config.len,
                CONFIG_WORDS * 4
            )));
        }
        for (i, (na, a)) in regions.iter().enumerate() {
            for (nb, b) in &regions[i + 1..] {
                if a.overlaps(b) {
                    return Err(AccelError::BadMailbox(format!("{na} and {nb} regions overlap")));
                }
            }
        }
        Ok(())
    }

    fn span(&self) -> u64 {
        [
            self.config.end(),
            self.status_region().end(),
            self.input.end(),
            self.output.end(),
        ]
        .into_iter()
        .max()
        .unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u32)]
pub enum MailboxStatus {
    Idle = 0,
    DoorbellRung = 1,
    Busy = 2,
    Done = 3,
    Error = 4,
}

impl MailboxStatus {
    fn from_word(word: u32) -> Option<Self> {
        Some(match word {
            0 => Self::Idle,
            1 => Self::DoorbellRung,
            2 => Self::Busy,
            3 => Self::Done,
            4 => Self::Error,
            _ => return None,
        })
    }

    pub fn can_move_to(self, next: MailboxStatus) -> bool {
        use MailboxStatus::*;
        matches!(
            (self, next),
            (Idle, DoorbellRung) | (DoorbellRung, Busy) | (Busy, Done) | (Busy, Error) | (Done, Idle) | (Error, Idle)
        )
    }
}

/// kernel code, four dimension words, input addr/len, output addr/len, reserved
pub const CONFIG_WORDS: usize = 10;

/// Decoded configuration region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfigBlock {
    /// 0 means "not written".
    pub kernel_code: u32,
    pub dims: [u32; 4],
    pub input_addr: u32,
    pub input_len: u32,
    pub output_addr: u32,
    pub output_len: u32,
}

impl ConfigBlock {
    fn to_words(self) -> [u32; CONFIG_WORDS] {
        [
            self.kernel_code,
            self.dims[0],
            self.dims[1],
            self.dims[2],
            self.dims[3],
            self.input_addr,
            self.input_len,
            self.output_addr,
            self.output_len,
            0,
        ]
    }

    fn from_words(w: &[u32]) -> Self {
        Self {
            kernel_code: w[0],
            dims: [w[1], w[2], w[3], w[4]],
            input_addr: w[5],
            input_len: w[6],
            output_addr: w[7],
            output_len: w[8],
        }
    }
}

/// Memory image of one mailbox plus an audit trail of status changes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Mailbox {
    layout: MailboxLayout,
    #[serde(skip)]
    mem: Vec<u8>,
    transitions: Vec<(MailboxStatus, MailboxStatus)>,
}

impl Mailbox {
    pub fn new(layout: MailboxLayout) -> Result<Self, AccelError> {
        layout.validate()?;
        Ok(Self {
            mem: vec![0; layout.span() as usize],
            layout,
            transitions: Vec::new(),
        })
    }

    pub fn layout(&self) -> &MailboxLayout {
        &self.layout
    }

    pub fn transitions(&self) -> &[(MailboxStatus, MailboxStatus)] {
        &self.transitions
    }

    fn word(&self, addr: u32) -> u32 {
        let a = addr as usize;
        u32::from_le_bytes(self.mem[a..a + 4].try_into().expect("4 bytes"))
    }

    fn set_word(&mut self, addr: u32, value: u32) {
        let a = addr as usize;
        self.mem[a..a + 4].copy_from_slice(&value.to_le_bytes());
    }

    pub fn status(&self) -> MailboxStatus {
        MailboxStatus::from_word(self.word(self.layout.status_addr)).unwrap_or(MailboxStatus::Error)
    }

    fn transition(&mut self, next: MailboxStatus) -> Result<(), AccelError> {
        let current = self.status();
        if !current.can_move_to(next) {
            return Err(AccelError::IllegalTransition {
                from: current,
                to: next,
            });
        }
        self.set_word(self.layout.status_addr, next as u32);
        self.transitions.push((current, next));
        Ok(())
    }

    pub fn write_config(&mut self, block: &ConfigBlock) -> Result<(), AccelError> {
        if self.status() != MailboxStatus::Idle {
            return Err(AccelError::MailboxBusy);
        }
        let base = self.layout.config.base;
        for (i, w) in block.to_words().iter().enumerate() {
            self.set_word(base + 4 * i as u32, *w);
        }
        Ok(())
    }

    pub fn read_config(&self) -> ConfigBlock {
        let base = self.layout.config.base;
        let words: Vec<u32> = (0..CONFIG_WORDS as u32).map(|i| self.word(base + 4 * i)).collect();
        ConfigBlock::from_words(&words)
    }

    /// Writes operands at the start of the input region.
    pub fn write_input(&mut self, bytes: &[u8]) -> Result<(), AccelError> {
        if self.status() != MailboxStatus::Idle {
            return Err(AccelError::MailboxBusy);
        }
        if bytes.len() > self.layout.input.len as usize {
            return Err(AccelError::BadMailbox(format!(
                "{} operand bytes exceed the {}-byte input region",
                bytes.len(),
                self.layout.input.len
            )));
        }
        let base = self.layout.input.base as usize;
        self.mem[base..base + bytes.len()].copy_from_slice(bytes);
        Ok(())
    }

    pub fn ring_doorbell(&mut self) -> Result<(), AccelError> {
        if self.status() != MailboxStatus::Idle {
            return Err(AccelError::MailboxBusy);
        }
        self.transition(MailboxStatus::DoorbellRung)
    }

    /// Device side: executes one pending request with `exec`.
    ///
    /// `exec` receives the configuration and input bytes and returns output
    /// bytes or a reason. An unwritten configuration or an out-of-region
    /// request ends in `Error`.
    pub fn service<F>(&mut self, exec: F) -> Result<MailboxStatus, AccelError>
    where
        F: FnOnce(&ConfigBlock, &[u8]) -> Result<Vec<u8>, String>,
    {
        if self.status() != MailboxStatus::DoorbellRung {
            return Ok(self.status());
        }
        self.transition(MailboxStatus::Busy)?;
        let block = self.read_config();
        let input = self.layout.input;
        let output = self.layout.output;
        let in_range = |addr: u32, len: u32, region: Region| {
            addr as u64 >= region.base as u64 && addr as u64 + len as u64 <= region.end()
        };
        let result = if block.kernel_code == 0 {
            Err("doorbell rung without a configuration".to_string())
        } else if !in_range(block.input_addr, block.input_len, input)
            || !in_range(block.output_addr, block.output_len, output)
        {
            Err("operand addresses fall outside the mailbox regions".to_string())
        } else {
            let a = block.input_addr as usize;
            exec(&block, &self.mem[a..a + block.input_len as usize])
        };
        match result {
            Ok(bytes) if bytes.len() <= block.output_len as usize => {
                let o = block.output_addr as usize;
                self.mem[o..o + bytes.len()].copy_from_slice(&bytes);
                self.transition(MailboxStatus::Done)?;
            }
            _ => self.transition(MailboxStatus::Error)?,
        }
        Ok(self.status())
    }

    /// Bytes of the output region described by the current configuration.
    pub fn read_output(&self) -> Vec<u8> {
        let block = self.read_config();
        let o = block.output_addr as usize;
        let len = (block.output_len as usize).min(self.mem.len().saturating_sub(o));
        self.mem[o..o + len].to_vec()
    }

    /// Host side: returns a `Done` or `Error` mailbox to `Idle` and clears the config.
    pub fn acknowledge(&mut self) -> Result<(), AccelError> {
        self.transition(MailboxStatus::Idle)?;
        self.write_config(&ConfigBlock::default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout_is_valid() {
        MailboxLayout::default().validate().unwrap();
    }

    #[test]
    fn overlapping_regions_are_rejected() {
        let mut layout = MailboxLayout::default();
        layout.output.base = layout.input.base + 8;
        assert!(matches!(layout.validate(), Err(AccelError::BadMailbox(_))));
    }

    #[test]
    fn doorbell_without_config_errors() {
        let mut mb = Mailbox::new(MailboxLayout::default()).unwrap();
        mb.ring_doorbell().unwrap();
        let status = mb.service(|_, _| Ok(vec![])).unwrap();
        assert_eq!(status, MailboxStatus::Error);
        mb.acknowledge().unwrap();
        assert_eq!(mb.status(), MailboxStatus::Idle);
    }

    #[test]
    fn busy_mailbox_refuses_new_work() {
        let mut mb = Mailbox::new(MailboxLayout::default()).unwrap();
        mb.ring_doorbell().unwrap();
        assert_eq!(mb.ring_doorbell(), Err(AccelError::MailboxBusy));
        assert_eq!(mb.write_input(&[1]), Err(AccelError::MailboxBusy));
    }

    #[test]
    fn full_handshake() {
        let layout = MailboxLayout::default();
        let mut mb = Mailbox::new(layout).unwrap();
        mb.write_input(&[1, 2, 3, 4]).unwrap();
        mb.write_config(&ConfigBlock {
            kernel_code: 7,
            dims: [1, 0, 0, 0],
            input_addr: layout.input.base,
            input_len: 4,
            output_addr: layout.output.base,
            output_len: 4,
        })
        .unwrap();
        mb.ring_doorbell().unwrap();
        let status = mb
            .service(|_, input| Ok(input.iter().rev().copied().collect()))
            .unwrap();
        assert_eq!(status, MailboxStatus::Done);
        assert_eq!(mb.read_output(), vec![4, 3, 2, 1]);
        assert_eq!(mb.read_output(), vec![4, 3, 2, 1]);
        mb.acknowledge().unwrap();
        assert_eq!(mb.read_config(), ConfigBlock::default());
        assert!(mb.transitions().iter().all(|(a, b)| a.can_move_to(*b)));
        assert_eq!(mb.transitions().len(), 4);
    }

    #[test]
    fn idle_cannot_be_acknowledged() {
        let mut mb = Mailbox::new(MailboxLayout::default()).unwrap();
        assert!(matches!(mb.acknowledge(), Err(AccelError::IllegalTransition { .. })));
    }
}
