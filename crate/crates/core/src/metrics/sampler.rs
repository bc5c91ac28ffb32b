//! Power meter adapters for live runs.
//!
//! Two host-side meters are provided: a cumulative-energy counter file
//! (joule counters exposed by the OS, read as microjoules and differenced)
//! and a polling adapter that runs a command printing one watt reading per
//! device line. The mock server exposes its own meter over HTTP; that one
//! is polled directly by the live engine.

use std::fs;
use std::path::PathBuf;
use std::process::Command;

use crate::error::{Error, Result};
use crate::Scalar;

use super::{PowerSample, SampleSource};

/// A pollable power meter. `now_ms` is supplied by the caller so the meter
/// logic is testable without wall-clock time; meters that difference
/// cumulative counters return `None` until they have a baseline.
pub trait PowerMeter: Send {
    fn source(&self) -> SampleSource;
    fn read(&mut self, now_ms: Scalar) -> Result<Option<PowerSample>>;
}

/// Derives watts from a cumulative microjoule counter file by differencing
/// successive readings.
pub struct CumulativeEnergyFileMeter {
    path: PathBuf,
    last: Option<(Scalar, u128)>,
    /// Counters wrap; reported by the OS alongside the counter itself.
    max_range_uj: Option<u128>,
}

impl CumulativeEnergyFileMeter {
    pub fn new(path: impl Into<PathBuf>, max_range_uj: Option<u128>) -> Self {
        CumulativeEnergyFileMeter { path: path.into(), last: None, max_range_uj }
    }

    fn read_counter(&self) -> Result<u128> {
        let raw = fs::read_to_string(&self.path).map_err(|e| Error::Format {
            path: self.path.display().to_string(),
            detail: e.to_string(),
        })?;
        raw.trim().parse::<u128>().map_err(|e| Error::Format {
            path: self.path.display().to_string(),
            detail: format!("expected cumulative microjoules: {e}"),
        })
    }
}

impl PowerMeter for CumulativeEnergyFileMeter {
    fn source(&self) -> SampleSource {
        SampleSource::CpuEnergyCounter
    }

    fn read(&mut self, now_ms: Scalar) -> Result<Option<PowerSample>> {
        let counter = self.read_counter()?;
        let sample = match self.last {
            None => None,
            Some((last_ms, last_uj)) if now_ms > last_ms => {
                let delta_uj = if counter >= last_uj {
                    counter - last_uj
                } else {
                    // Counter wrapped at its advertised range.
                    match self.max_range_uj {
                        Some(range) => range - last_uj + counter,
                        None => 0,
                    }
                };
                let watts = delta_uj as Scalar / 1e6 / ((now_ms - last_ms) / 1_000.0);
                Some(PowerSample { timestamp_ms: now_ms, watts, source: self.source() })
            }
            Some(_) => None,
        };
        self.last = Some((now_ms, counter));
        Ok(sample)
    }
}

/// Polls an external command that prints one instantaneous watt reading per
/// line (one line per device) and reports the sum.
pub struct CommandPollMeter {
    program: String,
    args: Vec<String>,
}

impl CommandPollMeter {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        CommandPollMeter { program: program.into(), args }
    }
}

impl PowerMeter for CommandPollMeter {
    fn source(&self) -> SampleSource {
        SampleSource::GpuManagementPoll
    }

    fn read(&mut self, now_ms: Scalar) -> Result<Option<PowerSample>> {
        let output = Command::new(&self.program).args(&self.args).output().map_err(|e| {
            Error::Format { path: self.program.clone(), detail: e.to_string() }
        })?;
        if !output.status.success() {
            return Err(Error::Format {
                path: self.program.clone(),
                detail: format!("exited with {}", output.status),
            });
        }
        let stdout = String::from_utf8_lossy(&output.stdout);
        let mut watts = 0.0;
        let mut devices = 0usize;
        for line in stdout.lines().filter(|l| !l.trim().is_empty()) {
            watts += line.trim().parse::<Scalar>().map_err(|e| Error::Format {
                path: self.program.clone(),
                detail: format!("expected one watt value per line, got {line:?}: {e}"),
            })?;
            devices += 1;
        }
        if devices == 0 {
            return Err(Error::Format {
                path: self.program.clone(),
                detail: "no device lines in output".to_string(),
            });
        }
        Ok(Some(PowerSample { timestamp_ms: now_ms, watts, source: self.source() }))
    }
}
