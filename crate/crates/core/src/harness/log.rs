//! JSON Lines episode logs: a header line, then one record per line.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::orchestrator::Variant;

pub const LOG_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub kind: String,
    pub schema: u32,
    pub version: String,
    pub scenario_name: String,
    pub scenario_sha256: String,
    pub seed: u64,
    pub variant: Variant,
    pub dt: f64,
    pub seconds_per_prompt: f64,
    /// Scenario source text, verbatim.
    pub scenario: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LogError {
    #[error("malformed log: {0}")]
    MalformedLog(String),
}

/// One parsed record: its tick, kind and full JSON object.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub tick: u64,
    pub kind: String,
    pub value: Value,
}

impl LogRecord {
    pub fn get(&self, key: &str) -> Option<&Value> {
        self.value.get(key)
    }

    pub fn get_u64(&self, key: &str) -> Option<u64> {
        self.value.get(key).and_then(Value::as_u64)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.value.get(key).and_then(Value::as_str)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub header: LogHeader,
    pub records: Vec<LogRecord>,
}

/// Builds a record line: `tick` and `kind` plus the fields of `payload`.
pub fn record_line(tick: u64, kind: Option<&str>, payload: Value) -> String {
    let mut map = match payload {
        Value::Object(m) => m,
        Value::Null => Map::new(),
        other => {
            let mut m = Map::new();
            m.insert("value".into(), other);
            m
        }
    };
    map.insert("tick".into(), Value::from(tick));
    if let Some(k) = kind {
        map.insert("kind".into(), Value::from(k));
    }
    Value::Object(map).to_string()
}

impl EpisodeLog {
    pub fn parse(text: &str) -> Result<EpisodeLog, LogError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let first = lines
            .next()
            .ok_or_else(|| LogError::MalformedLog("empty log".into()))?;
        let header: LogHeader = serde_json::from_str(first)
            .map_err(|e| LogError::MalformedLog(format!("header: {e}")))?;
        if header.kind != "header" {
            return Err(LogError::MalformedLog("first line is not a header".into()));
        }
        let mut records = Vec::new();
        let mut last_tick = 0;
        for (i, line) in lines.enumerate() {
            let value: Value = serde_json::from_str(line)
                .map_err(|e| LogError::MalformedLog(format!("line {}: {e}", i + 2)))?;
            let tick = value
                .get("tick")
                .and_then(Value::as_u64)
                .ok_or_else(|| LogError::MalformedLog(format!("line {}: missing tick", i + 2)))?;
            let kind = value
                .get("kind")
                .and_then(Value::as_str)
                .ok_or_else(|| LogError::MalformedLog(format!("line {}: missing kind", i + 2)))?
                .to_string();
            if tick < last_tick {
                return Err(LogError::MalformedLog(format!("line {}: tick decreases", i + 2)));
            }
            last_tick = tick;
            records.push(LogRecord { tick, kind, value });
        }
        Ok(EpisodeLog { header, records })
    }

    pub fn of_kind<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a LogRecord> + 'a {
        self.records.iter().filter(move |r| r.kind == kind)
    }

    /// The `mode` field of every mode-change record, in order.
    pub fn mode_sequence(&self) -> Vec<String> {
        self.of_kind("mode")
            .filter_map(|r| r.get_str("to").map(str::to_string))
            .collect()
    }
}
