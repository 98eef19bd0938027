use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::Error;

pub const RUN_LOG_FILE: &str = "run_log.jsonl";

#[derive(Serialize)]
struct StepLine {
    step: usize,
    loss: f64,
    lr: f64,
    wall_ms: u64,
}

/// JSON-lines training log: one `{step, loss, lr, wall_ms}` object per step,
/// plus free-form event lines tagged with `"event"`.
pub struct RunLog {
    out: Option<BufWriter<File>>,
    start: Instant,
}

impl RunLog {
    pub fn create(path: &Path) -> Result<Self, Error> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self { out: Some(BufWriter::new(f)), start: Instant::now() })
    }

    /// A log that discards everything.
    pub fn sink() -> Self {
        Self { out: None, start: Instant::now() }
    }

    pub fn step(&mut self, step: usize, loss: f64, lr: f64) -> Result<(), Error> {
        let wall_ms = self.start.elapsed().as_millis() as u64;
        self.write(&StepLine { step, loss, lr, wall_ms })
    }

    pub fn event(&mut self, event: &str, data: serde_json::Value) -> Result<(), Error> {
        self.write(&serde_json::json!({ "event": event, "data": data }))
    }

    fn write<T: Serialize>(&mut self, v: &T) -> Result<(), Error> {
        if let Some(out) = self.out.as_mut() {
            serde_json::to_writer(&mut *out, v)?;
            out.write_all(b"\n").and_then(|_| out.flush()).map_err(|e| Error::io(Path::new(RUN_LOG_FILE), e))?;
        }
        Ok(())
    }
}
