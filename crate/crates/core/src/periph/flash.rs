//! Memory-backed flash with a bandwidth timing model.

use crate::model::ClockConfig;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

/// Addressable span of the virtual flash.
pub const ADDRESS_SPACE: u64 = 1 << 32;

/// DRAM-backed bandwidth: 70 000 B moved in 10 ms.
pub const VIRTUAL_BANDWIDTH_BPS: u64 = 7_000_000;
/// SPI flash bandwidth: 70 000 B moved in 2.5 s.
pub const PHYSICAL_BANDWIDTH_BPS: u64 = 28_000;

const PAGE_SIZE: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlashMode {
    Virtual,
    PhysicalModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlashConfig {
    #[serde(default = "default_virtual_bw")]
    pub virtual_bandwidth_bps: u64,
    #[serde(default = "default_physical_bw")]
    pub physical_bandwidth_bps: u64,
    #[serde(default = "default_mode")]
    pub mode: FlashMode,
}

fn default_virtual_bw() -> u64 {
    VIRTUAL_BANDWIDTH_BPS
}
fn default_physical_bw() -> u64 {
    PHYSICAL_BANDWIDTH_BPS
}
fn default_mode() -> FlashMode {
    FlashMode::Virtual
}

impl Default for FlashConfig {
    fn default() -> Self {
        Self {
            virtual_bandwidth_bps: VIRTUAL_BANDWIDTH_BPS,
            physical_bandwidth_bps: PHYSICAL_BANDWIDTH_BPS,
            mode: FlashMode::Virtual,
        }
    }
}

impl FlashConfig {
    pub fn bandwidth_bps(&self) -> u64 {
        match self.mode {
            FlashMode::Virtual => self.virtual_bandwidth_bps,
            FlashMode::PhysicalModel => self.physical_bandwidth_bps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FlashError {
    #[error("flash access [{addr:#x}, +{len}) exceeds the 4 GiB address space")]
    OutOfRange { addr: u64, len: u64 },
    #[error("flash bandwidth must be positive")]
    ZeroBandwidth,
    #[error("flash image: {0}")]
    Image(String),
}

/// Sparse byte store. Bytes never written read as `0x00`; there is no erase-block model.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VirtualFlash {
    config: FlashConfig,
    pages: BTreeMap<u64, Vec<u8>>,
}

impl VirtualFlash {
    pub fn new(config: FlashConfig) -> Result<Self, FlashError> {
        if config.virtual_bandwidth_bps == 0 || config.physical_bandwidth_bps == 0 {
            return Err(FlashError::ZeroBandwidth);
        }
        Ok(Self {
            config,
            pages: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &FlashConfig {
        &self.config
    }

    pub fn set_mode(&mut self, mode: FlashMode) {
        self.config.mode = mode;
    }

    /// Number of bytes ever written-to pages hold (page granularity).
    pub fn resident_bytes(&self) -> u64 {
        self.pages.len() as u64 * PAGE_SIZE
    }

    /// Cycles needed to move `bytes` at the current mode's bandwidth, rounded half up.
    pub fn transfer_cycles(&self, bytes: u64, direction: Direction, clock: ClockConfig) -> u64 {
        flash_transfer_cycles(&self.config, bytes, direction, clock)
    }

    pub fn read(&self, addr: u64, len: u64) -> Result<Vec<u8>, FlashError> {
        check_range(addr, len)?;
        let mut out = vec![0u8; len as usize];
        let mut pos = addr;
        let end = addr + len;
        while pos < end {
            let page = pos / PAGE_SIZE;
            let offset = (pos % PAGE_SIZE) as usize;
            let chunk = ((PAGE_SIZE - offset as u64).min(end - pos)) as usize;
            if let Some(data) = self.pages.get(&page) {
                let dst = (pos - addr) as usize;
                out[dst..dst + chunk].copy_from_slice(&data[offset..offset + chunk]);
            }
            pos += chunk as u64;
        }
        Ok(out)
    }

    pub fn write(&mut self, addr: u64, bytes: &[u8]) -> Result<(), FlashError> {
        check_range(addr, bytes.len() as u64)?;
        let mut pos = addr;
        let mut rest = bytes;
        while !rest.is_empty() {
            let page = pos / PAGE_SIZE;
            let offset = (pos % PAGE_SIZE) as usize;
            let chunk = (PAGE_SIZE as usize - offset).min(rest.len());
            let data = self.pages.entry(page).or_insert_with(|| vec![0u8; PAGE_SIZE as usize]);
            data[offset..offset + chunk].copy_from_slice(&rest[..chunk]);
            rest = &rest[chunk..];
            pos += chunk as u64;
        }
        Ok(())
    }

    /// Drops all contents; bandwidth configuration is kept.
    pub fn erase_all(&mut self) {
        self.pages.clear();
    }

    /// Loads a raw binary image at `base`.
    pub fn import_image(&mut self, path: &Path, base: u64) -> Result<u64, FlashError> {
        let data = std::fs::read(path).map_err(|e| FlashError::Image(format!("{}: {e}", path.display())))?;
        self.write(base, &data)?;
        Ok(data.len() as u64)
    }

    /// Writes `[base, base + len)` to a raw binary file.
    pub fn export_image(&self, path: &Path, base: u64, len: u64) -> Result<(), FlashError> {
        let data = self.read(base, len)?;
        std::fs::write(path, data).map_err(|e| FlashError::Image(format!("{}: {e}", path.display())))
    }
}

fn check_range(addr: u64, len: u64) -> Result<(), FlashError> {
    match addr.checked_add(len) {
        Some(end) if end <= ADDRESS_SPACE => Ok(()),
        _ => Err(FlashError::OutOfRange { addr, len }),
    }
}

/// `round(bytes / bandwidth * freq)` in exact integer arithmetic.
///
/// Both directions share one bandwidth figure per mode.
pub fn flash_transfer_cycles(config: &FlashConfig, bytes: u64, _direction: Direction, clock: ClockConfig) -> u64 {
    let bw = config.bandwidth_bps() as u128;
    let num = bytes as u128 * clock.freq_hz() as u128;
    ((num + bw / 2) / bw) as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn clock() -> ClockConfig {
        ClockConfig::default()
    }

    #[test]
    fn transfer_cycles_examples() {
        let mut flash = VirtualFlash::default();
        assert_eq!(flash.transfer_cycles(0, Direction::Read, clock()), 0);
        // 10 ms
        assert_eq!(flash.transfer_cycles(70_000, Direction::Read, clock()), 200_000);
        flash.set_mode(FlashMode::PhysicalModel);
        // 2.5 s
        assert_eq!(flash.transfer_cycles(70_000, Direction::Read, clock()), 50_000_000);
    }

    #[test]
    fn rounding_is_half_up() {
        let cfg = FlashConfig {
            virtual_bandwidth_bps: 3,
            ..FlashConfig::default()
        };
        let clock = ClockConfig::new(2).unwrap();
        // 1 B at 3 B/s on a 2 Hz clock = 0.667 cycles
        assert_eq!(flash_transfer_cycles(&cfg, 1, Direction::Read, clock), 1);
        // 0.333 cycles
        let clock = ClockConfig::new(1).unwrap();
        assert_eq!(flash_transfer_cycles(&cfg, 1, Direction::Write, clock), 0);
    }

    #[test]
    fn blank_flash_reads_zero() {
        let flash = VirtualFlash::default();
        assert_eq!(flash.read(0x1234, 16).unwrap(), vec![0u8; 16]);
    }

    #[test]
    fn write_then_read_round_trips() {
        let mut flash = VirtualFlash::default();
        let data: Vec<u8> = (0..10_000u32).map(|i| (i * 7) as u8).collect();
        flash.write(4000, &data).unwrap();
        assert_eq!(flash.read(4000, data.len() as u64).unwrap(), data);
    }

    #[test]
    fn read_spanning_written_and_blank() {
        let mut flash = VirtualFlash::default();
        flash.write(100, &[1, 2, 3]).unwrap();
        assert_eq!(flash.read(100, 6).unwrap(), vec![1, 2, 3, 0, 0, 0]);
    }

    #[test]
    fn empty_write_is_noop_and_overlaps_last_writer_wins() {
        let mut flash = VirtualFlash::default();
        flash.write(10, &[]).unwrap();
        assert_eq!(flash.resident_bytes(), 0);
        flash.write(0, &[1, 1, 1, 1]).unwrap();
        flash.write(2, &[9, 9, 9]).unwrap();
        assert_eq!(flash.read(0, 6).unwrap(), vec![1, 1, 9, 9, 9, 0]);
    }

    #[test]
    fn out_of_range_is_rejected() {
        let mut flash = VirtualFlash::default();
        assert!(flash.read(ADDRESS_SPACE - 2, 2).is_ok());
        assert!(matches!(
            flash.read(ADDRESS_SPACE - 2, 3),
            Err(FlashError::OutOfRange { .. })
        ));
        assert!(flash.write(u64::MAX, &[1]).is_err());
    }

    #[test]
    fn speedup_equals_bandwidth_ratio() {
        let mut flash = VirtualFlash::default();
        let fast = 240 * flash.transfer_cycles(70_000, Direction::Write, clock());
        flash.set_mode(FlashMode::PhysicalModel);
        let slow = 240 * flash.transfer_cycles(70_000, Direction::Write, clock());
        assert_eq!(slow, 250 * fast);
        // 2.4 s and 600 s
        assert_eq!(fast, 48_000_000);
        assert_eq!(slow, 12_000_000_000);
    }

    #[test]
    fn image_import_export() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("in.bin");
        std::fs::write(&src, [5u8, 6, 7]).unwrap();
        let mut flash = VirtualFlash::default();
        assert_eq!(flash.import_image(&src, 0x100).unwrap(), 3);
        let dst = dir.path().join("out.bin");
        flash.export_image(&dst, 0xFF, 5).unwrap();
        assert_eq!(std::fs::read(dst).unwrap(), vec![0, 5, 6, 7, 0]);
    }

    proptest! {
        #[test]
        fn reads_return_last_written_bytes(
            writes in proptest::collection::vec((0u64..20_000, proptest::collection::vec(any::<u8>(), 0..300)), 0..30)
        ) {
            let mut flash = VirtualFlash::default();
            let mut shadow = vec![0u8; 20_400];
            for (addr, data) in &writes {
                flash.write(*addr, data).unwrap();
                shadow[*addr as usize..*addr as usize + data.len()].copy_from_slice(data);
            }
            prop_assert_eq!(flash.read(0, shadow.len() as u64).unwrap(), shadow);
        }
    }
}
