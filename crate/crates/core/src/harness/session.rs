//! The interactive session protocol behind the WebSocket service. A session
//! maps one JSON text message to the frames sent back; transport lives in
//! the CLI.

use std::collections::BTreeMap;

use serde::Deserialize;
use serde_json::{json, Value};

use super::episode::{Episode, HumanAct};
use super::scenario::Scenario;
use crate::orchestrator::{Mode, Variant};

/// Largest `n` accepted by one step message.
pub const MAX_STEPS_PER_MESSAGE: u64 = 1000;

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum ClientMessage {
    Reset {
        #[serde(alias = "scenario")]
        scenario_id: Option<String>,
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default)]
        variant: Option<Variant>,
    },
    Step {
        #[serde(default)]
        n: Option<u64>,
    },
    Act {
        action: HumanAct,
    },
    ListScenarios,
}

const KNOWN_TYPES: &[&str] = &["reset", "step", "act", "list_scenarios"];

pub fn error_frame(code: &str, detail: impl Into<String>) -> Value {
    json!({"type": "error", "code": code, "detail": detail.into()})
}

/// Coarse mode name used in state frames.
pub fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Lead { .. } => "lead",
        Mode::Adaptation { .. } => "adaptation",
        Mode::Fallback => "fallback",
    }
}

pub fn state_frame(ep: &Episode) -> Value {
    let r = ep.robot();
    let u = ep.user();
    let out = ep.last_output();
    let force = out.force.unwrap_or_default();
    let objects: Vec<Value> = ep
        .world()
        .objects()
        .iter()
        .map(|o| json!({"id": o.id, "kind": o.kind().as_str(), "state": o.state()}))
        .collect();
    let prompts: Vec<&str> = out.command.prompts.iter().map(|p| p.text.as_str()).collect();
    json!({
        "type": "state",
        "tick": ep.tick(),
        "mode": mode_name(ep.mode()),
        "phase": ep.mode().label(),
        "robot": {"x": r.x, "y": r.y, "heading": r.heading()},
        "user": {"x": u.pos.x, "y": u.pos.y, "hand": u.hand, "grasped": u.grasped},
        "objects": objects,
        "prompts": prompts,
        "forces": {
            "att": [force.f_att.x, force.f_att.y],
            "rep": [force.f_rep_sum.x, force.f_rep_sum.y],
        },
        "metrics_so_far": {
            "time_s": ep.time(),
            "collisions": ep.collisions(),
            "interventions": ep.interventions(),
        },
        "ended": ep.ended().map(|e| e.as_str()),
    })
}

/// One client's session: the scenario catalogue and the current episode.
#[derive(Debug, Clone)]
pub struct Session {
    scenarios: BTreeMap<String, Scenario>,
    episode: Option<Episode>,
}

impl Session {
    pub fn new(scenarios: BTreeMap<String, Scenario>) -> Self {
        Self {
            scenarios,
            episode: None,
        }
    }

    pub fn episode(&self) -> Option<&Episode> {
        self.episode.as_ref()
    }

    /// Serialized episode state, or `None` before the first reset.
    pub fn snapshot(&self) -> Option<String> {
        self.episode.as_ref().and_then(|e| serde_json::to_string(e).ok())
    }

    pub fn restore(&mut self, snapshot: &str) -> Result<(), serde_json::Error> {
        self.episode = Some(serde_json::from_str(snapshot)?);
        Ok(())
    }

    /// Handles one text message; errors become error frames and leave the
    /// session as it was.
    pub fn handle(&mut self, text: &str) -> Vec<Value> {
        let raw: Value = match serde_json::from_str(text) {
            Ok(v) => v,
            Err(e) => return vec![error_frame("bad_json", e.to_string())],
        };
        let ty = raw.get("type").and_then(Value::as_str);
        match ty {
            None => return vec![error_frame("bad_request", "missing field `type`")],
            Some(t) if !KNOWN_TYPES.contains(&t) => {
                return vec![error_frame("unknown_type", format!("unknown message type `{t}`"))]
            }
            _ => {}
        }
        let msg: ClientMessage = match serde_json::from_value(raw) {
            Ok(m) => m,
            Err(e) => return vec![error_frame("bad_request", e.to_string())],
        };
        match msg {
            ClientMessage::ListScenarios => {
                let ids: Vec<&String> = self.scenarios.keys().collect();
                vec![json!({"type": "scenarios", "scenarios": ids})]
            }
            ClientMessage::Reset {
                scenario_id,
                seed,
                variant,
            } => {
                let id = match scenario_id {
                    Some(id) => id,
                    None => match self.scenarios.keys().next() {
                        Some(k) => k.clone(),
                        None => return vec![error_frame("unknown_scenario", "no scenarios loaded")],
                    },
                };
                let Some(s) = self.scenarios.get(&id) else {
                    return vec![error_frame("unknown_scenario", format!("no scenario `{id}`"))];
                };
                let seed = seed.unwrap_or(s.file.seed);
                let ep = Episode::interactive(s, variant.unwrap_or(Variant::Full), seed);
                let frame = state_frame(&ep);
                self.episode = Some(ep);
                vec![frame]
            }
            ClientMessage::Step { n } => {
                let Some(ep) = self.episode.as_mut() else {
                    return vec![error_frame("no_session", "send reset first")];
                };
                let n = n.unwrap_or(1);
                if n == 0 || n > MAX_STEPS_PER_MESSAGE {
                    return vec![error_frame(
                        "bad_request",
                        format!("n must lie in 1..={MAX_STEPS_PER_MESSAGE}"),
                    )];
                }
                let mut frames = Vec::new();
                for _ in 0..n {
                    if ep.ended().is_some() {
                        break;
                    }
                    ep.step();
                    frames.push(state_frame(ep));
                }
                if frames.is_empty() {
                    frames.push(state_frame(ep));
                }
                frames
            }
            ClientMessage::Act { action } => {
                let Some(ep) = self.episode.as_mut() else {
                    return vec![error_frame("no_session", "send reset first")];
                };
                ep.apply_act(&action);
                vec![state_frame(ep)]
            }
        }
    }
}
