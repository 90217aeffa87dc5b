//! JSON-lines run log.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Value};
use vqd_core::{Error, Result};

pub struct RunLog {
    out: Option<BufWriter<File>>,
    command: String,
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

impl RunLog {
    pub fn open(path: Option<&Path>, command: &str) -> Result<Self> {
        let out = match path {
            Some(p) => {
                if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                }
                Some(BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?))
            }
            None => None,
        };
        Ok(Self {
            out,
            command: command.to_string(),
        })
    }

    /// Writes `{"ts_ms", "command", "event", ...fields}`.
    pub fn event(&mut self, event: &str, fields: Value) -> Result<()> {
        let Some(out) = self.out.as_mut() else {
            return Ok(());
        };
        let mut line = json!({"ts_ms": now_ms() as u64, "command": self.command, "event": event});
        if let (Some(l), Value::Object(f)) = (line.as_object_mut(), fields) {
            l.extend(f);
        }
        serde_json::to_writer(&mut *out, &line)?;
        out.write_all(b"\n").map_err(|e| Error::io("run log", e))?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        if let Some(out) = self.out.as_mut() {
            out.flush().map_err(|e| Error::io("run log", e))?;
        }
        Ok(())
    }
}

impl Drop for RunLog {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}
