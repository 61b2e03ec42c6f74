use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{Map, Value};

use crate::error::Result;

pub fn unix_millis() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

/// Newline-delimited JSON event log. Every event carries the command, the
/// master seed and the config hash.
pub struct RunLog {
    out: BufWriter<File>,
    base: Map<String, Value>,
}

impl RunLog {
    pub fn create(path: &Path, command: &str, seed: u64, config_hash: &str) -> Result<Self> {
        let mut base = Map::new();
        base.insert("command".into(), command.into());
        base.insert("seed".into(), seed.into());
        base.insert("config_hash".into(), config_hash.into());
        Ok(Self { out: BufWriter::new(File::create(path)?), base })
    }

    /// Writes one event. `timestamp_ms` defaults to the current time.
    pub fn event(&mut self, kind: &str, timestamp_ms: Option<u64>, fields: Value) -> Result<()> {
        let mut obj = Map::new();
        obj.insert("timestamp_ms".into(), timestamp_ms.unwrap_or_else(unix_millis).into());
        obj.insert("event".into(), kind.into());
        obj.extend(self.base.clone());
        if let Value::Object(extra) = fields {
            obj.extend(extra);
        }
        serde_json::to_writer(&mut self.out, &obj)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.event("finish", None, Value::Null)?;
        self.out.flush()?;
        Ok(())
    }
}
