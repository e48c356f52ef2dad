//! Re-drives the orchestrator from a log's recorded inputs and compares
//! the mode, command and robot events it produces with the logged ones.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::log::{EpisodeLog, LogError, LogRecord};
use super::scenario::{sha256_hex, Scenario};
use crate::orchestrator::{Orchestrator, TickInputs};
use crate::world::ObjectId;

/// Record kinds the orchestrator itself emits.
const ROBOT_EVENT_KINDS: &[&str] = &[
    "mode",
    "prompt",
    "wayfind_start",
    "wayfind_end",
    "task_start",
    "goals",
    "servo_done",
    "hand_on_target",
    "clearance",
    "task_complete",
    "route_complete",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mismatch {
    pub tick: u64,
    pub field: String,
    pub expected: Value,
    pub actual: Value,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReplayReport {
    pub ticks: u64,
    pub modes: Vec<String>,
    pub mismatches: Vec<Mismatch>,
}

impl ReplayReport {
    pub fn is_clean(&self) -> bool {
        self.mismatches.is_empty()
    }
}

fn strip_tick(v: &Value) -> Value {
    let mut v = v.clone();
    if let Value::Object(m) = &mut v {
        m.remove("tick");
    }
    v
}

fn malformed(tick: u64, what: &str) -> LogError {
    LogError::MalformedLog(format!("tick {tick}: {what}"))
}

/// Replays `log`. Structural problems are errors; behavioural differences
/// are reported as mismatches.
pub fn replay(log: &EpisodeLog) -> Result<ReplayReport, LogError> {
    let h = &log.header;
    if sha256_hex(h.scenario.as_bytes()) != h.scenario_sha256 {
        return Err(LogError::MalformedLog("scenario hash does not match the embedded scenario".into()));
    }
    let scenario = Scenario::parse(&h.scenario)
        .map_err(|e| LogError::MalformedLog(format!("embedded scenario: {e}")))?;
    let mut world = scenario.world.clone();
    let mut orch = Orchestrator::new(scenario.config(h.variant), scenario.route());
    let mut report = ReplayReport::default();

    let records = &log.records;
    let mut i = 0;
    while i < records.len() {
        let step = &records[i];
        i += 1;
        if step.kind != "step" {
            continue;
        }
        let tick = step.tick;
        let mut expected: Vec<&LogRecord> = Vec::new();
        while i < records.len() && records[i].kind != "step" {
            if ROBOT_EVENT_KINDS.contains(&records[i].kind.as_str()) {
                expected.push(&records[i]);
            }
            i += 1;
        }

        let objects = step
            .get("objects")
            .and_then(Value::as_array)
            .ok_or_else(|| malformed(tick, "step without objects"))?;
        for o in objects {
            let id = o.get("id").and_then(Value::as_u64);
            let state = o.get("state").and_then(Value::as_f64);
            let (Some(id), Some(state)) = (id, state) else {
                return Err(malformed(tick, "bad object entry"));
            };
            world
                .set_object_state(ObjectId(id as u32), state)
                .map_err(|e| malformed(tick, &e.to_string()))?;
        }
        let inputs: TickInputs = serde_json::from_value(
            step.get("input").cloned().ok_or_else(|| malformed(tick, "step without input"))?,
        )
        .map_err(|e| malformed(tick, &format!("input: {e}")))?;

        let out = orch.tick(&world, &inputs);
        report.ticks += 1;
        let mut check = |field: &str, expected: Value, actual: Value| {
            if expected != actual {
                report.mismatches.push(Mismatch {
                    tick,
                    field: field.to_string(),
                    expected,
                    actual,
                });
            }
        };
        let mode = out.mode.unwrap_or(orch.mode());
        check(
            "mode",
            step.get("mode").cloned().unwrap_or(Value::Null),
            Value::from(mode.label()),
        );
        check(
            "command",
            step.get("command").cloned().unwrap_or(Value::Null),
            serde_json::to_value(&out.command).unwrap_or(Value::Null),
        );
        let want: Vec<Value> = expected.iter().map(|r| strip_tick(&r.value)).collect();
        let got: Vec<Value> = out
            .events
            .iter()
            .map(|e| serde_json::to_value(e).unwrap_or(Value::Null))
            .collect();
        check("events", Value::Array(want), Value::Array(got));
        for e in &out.events {
            if let crate::orchestrator::RobotEvent::Mode { to, .. } = e {
                report.modes.push(to.clone());
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::run_episode;
    use crate::orchestrator::Variant;

    fn door() -> Scenario {
        Scenario::parse(include_str!("../../fixtures/door_pull.json")).unwrap()
    }

    #[test]
    fn recorded_episode_replays_cleanly() {
        let run = run_episode(&door(), Variant::Full, 3);
        let log = EpisodeLog::parse(&run.text()).unwrap();
        let report = replay(&log).unwrap();
        assert!(report.is_clean(), "{:?}", report.mismatches.first());
        assert_eq!(report.modes, log.mode_sequence());
    }

    #[test]
    fn tampered_command_is_reported() {
        let run = run_episode(&door(), Variant::NonAdaptive, 3);
        let mut lines = run.lines.clone();
        let idx = lines.iter().position(|l| l.contains("\"kind\":\"step\"")).unwrap() + 20;
        let mut v: Value = serde_json::from_str(&lines[idx]).unwrap();
        v["command"]["heading"] = Value::from(9.0);
        lines[idx] = v.to_string();
        let log = EpisodeLog::parse(&lines.join("\n")).unwrap();
        let report = replay(&log).unwrap();
        assert_eq!(report.mismatches.len(), 1);
        assert_eq!(report.mismatches[0].field, "command");
    }

    #[test]
    fn hash_mismatch_is_malformed() {
        let run = run_episode(&door(), Variant::Full, 1);
        let mut lines = run.lines.clone();
        let mut h: Value = serde_json::from_str(&lines[0]).unwrap();
        h["scenario_sha256"] = Value::from("00");
        lines[0] = h.to_string();
        let log = EpisodeLog::parse(&lines.join("\n")).unwrap();
        assert!(matches!(replay(&log), Err(LogError::MalformedLog(_))));
    }
}
