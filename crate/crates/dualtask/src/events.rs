//! JSON-lines progress events: one object per line with the phase name,
//! seconds since start and phase metrics.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use serde_json::{json, Value};

#[derive(Debug)]
pub struct EventLog {
    file: Option<File>,
    start: Instant,
}

impl EventLog {
    pub fn disabled() -> Self {
        Self { file: None, start: Instant::now() }
    }

    pub fn open(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            Some(p) => Some(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .with_context(|| format!("cannot open event log {}", p.display()))?,
            ),
            None => None,
        };
        Ok(Self { file, start: Instant::now() })
    }

    pub fn emit(&mut self, phase: &str, metrics: Value) -> Result<()> {
        let Some(f) = &mut self.file else {
            return Ok(());
        };
        let line = json!({
            "phase": phase,
            "wall_seconds": self.start.elapsed().as_secs_f64(),
            "metrics": metrics,
        });
        writeln!(f, "{line}").context("cannot write event log")
    }
}
