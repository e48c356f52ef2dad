//! Stage timing and safety counts computed from a log.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::log::{EpisodeLog, LogError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub index: usize,
    pub object: u32,
    pub approach_s: Option<f64>,
    pub locate_s: Option<f64>,
    pub interact_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tasks: Vec<TaskMetrics>,
    /// Time on plain wayfinding legs between tasks.
    pub wayfinding_s: f64,
    pub time_s: f64,
    pub interventions: u32,
    pub collisions: u32,
    pub timed_out: bool,
}

/// Sequential prompt playback spans in seconds.
fn prompt_spans(log: &EpisodeLog) -> Vec<(f64, f64)> {
    let (dt, spp) = (log.header.dt, log.header.seconds_per_prompt);
    let mut spans = Vec::new();
    let mut busy_until = f64::NEG_INFINITY;
    for r in log.of_kind("prompt") {
        let start = (r.tick as f64 * dt).max(busy_until);
        busy_until = start + spp;
        spans.push((start, busy_until));
    }
    spans
}

/// Seconds between two ticks, less any prompt playback inside them.
fn net_seconds(from: u64, to: u64, dt: f64, spans: &[(f64, f64)]) -> f64 {
    let (a, b) = (from as f64 * dt, to as f64 * dt);
    let excluded: f64 = spans
        .iter()
        .map(|&(s, e)| (e.min(b) - s.max(a)).max(0.0))
        .sum();
    (b - a) - excluded
}

/// Number of contact spans, counting each run of consecutive ticks once per agent.
pub fn debounced_contacts<'a>(contacts: impl Iterator<Item = (&'a str, u64)>) -> u32 {
    let mut last: BTreeMap<&str, u64> = BTreeMap::new();
    let mut count = 0;
    for (agent, tick) in contacts {
        match last.get(agent) {
            Some(&prev) if tick == prev + 1 || tick == prev => {}
            _ => count += 1,
        }
        last.insert(agent, tick);
    }
    count
}

#[derive(Default, Clone, Copy)]
struct Marks {
    object: u32,
    start: Option<u64>,
    servo: Option<u64>,
    hand: Option<u64>,
    done: Option<u64>,
}

pub fn compute_metrics(log: &EpisodeLog) -> Result<Metrics, LogError> {
    let dt = log.header.dt;
    let end = log
        .of_kind("end")
        .next()
        .ok_or_else(|| LogError::MalformedLog("missing end record".into()))?;
    let timed_out = end.get_str("reason") == Some("timeout");
    let spans = prompt_spans(log);

    let mut marks: BTreeMap<usize, Marks> = BTreeMap::new();
    for r in &log.records {
        let slot = match r.kind.as_str() {
            "task_start" | "servo_done" | "hand_on_target" | "task_complete" => r.get_u64("task"),
            _ => None,
        };
        let Some(task) = slot else {
            continue;
        };
        let mk = marks.entry(task as usize).or_default();
        let field = match r.kind.as_str() {
            "task_start" => {
                if mk.start.is_none() {
                    mk.object = r.get_u64("object").unwrap_or(0) as u32;
                }
                &mut mk.start
            }
            "servo_done" => &mut mk.servo,
            "hand_on_target" => &mut mk.hand,
            _ => &mut mk.done,
        };
        field.get_or_insert(r.tick);
    }

    let stage = |a: Option<u64>, b: Option<u64>| match (a, b) {
        (Some(a), Some(b)) if b >= a => Some(net_seconds(a, b, dt, &spans)),
        _ => None,
    };
    let mut tasks = Vec::new();
    for (&index, m) in &marks {
        let complete = m.start.is_some() && m.servo.is_some() && m.hand.is_some() && m.done.is_some();
        if !complete && !timed_out {
            return Err(LogError::MalformedLog(format!("task {index} is missing stage markers")));
        }
        if m.start.is_none() {
            return Err(LogError::MalformedLog(format!("task {index} has no task_start")));
        }
        tasks.push(TaskMetrics {
            index,
            object: m.object,
            approach_s: stage(m.start, m.servo),
            locate_s: stage(m.servo, m.hand),
            interact_s: stage(m.hand, m.done),
        });
    }

    let mut wayfinding_s = 0.0;
    let mut open: BTreeMap<u64, u64> = BTreeMap::new();
    for r in &log.records {
        let Some(leg) = r.get_u64("leg") else {
            continue;
        };
        match r.kind.as_str() {
            "wayfind_start" => {
                open.entry(leg).or_insert(r.tick);
            }
            "wayfind_end" => {
                if let Some(s) = open.remove(&leg) {
                    wayfinding_s += net_seconds(s, r.tick, dt, &spans);
                }
            }
            _ => {}
        }
    }
    for (_, s) in open {
        wayfinding_s += net_seconds(s, end.tick, dt, &spans);
    }

    let contacts = log
        .of_kind("contact")
        .map(|r| (r.get_str("agent").unwrap_or("robot"), r.tick));
    Ok(Metrics {
        tasks,
        wayfinding_s,
        time_s: net_seconds(0, end.tick, dt, &spans),
        interventions: log.of_kind("intervention").count() as u32,
        collisions: debounced_contacts(contacts),
        timed_out,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_default()
}

impl Metrics {
    pub const CSV_HEADER: &'static str =
        "scope,task,object,approach_s,locate_s,interact_s,wayfinding_s,time_s,interventions,collisions,timed_out";

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(Self::CSV_HEADER);
        out.push('\n');
        for t in &self.tasks {
            let _ = writeln!(
                out,
                "task,{},{},{},{},{},,,,,",
                t.index,
                t.object,
                cell(t.approach_s),
                cell(t.locate_s),
                cell(t.interact_s)
            );
        }
        let _ = writeln!(
            out,
            "total,,,,,,{:.3},{:.3},{},{},{}",
            self.wayfinding_s, self.time_s, self.interventions, self.collisions, self.timed_out
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contact_debounce() {
        let ticks = [10, 11, 12, 18, 19];
        assert_eq!(debounced_contacts(ticks.iter().map(|&t| ("robot", t))), 2);
        let mixed = [("robot", 1), ("user", 2), ("robot", 2), ("user", 3)];
        assert_eq!(debounced_contacts(mixed.into_iter()), 2);
    }

    #[test]
    fn net_seconds_excludes_overlap_only() {
        let spans = [(1.0, 3.0), (3.0, 5.0), (9.0, 11.0)];
        assert!((net_seconds(0, 100, 0.1, &spans) - 5.0).abs() < 1e-12);
        assert!((net_seconds(20, 60, 0.1, &spans) - 1.0).abs() < 1e-12);
    }
}
