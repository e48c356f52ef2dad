//! Scenario files: schema, parsing and validation.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::orchestrator::{Route, SessionConfig, Task, Variant};
use crate::params::{NoiseParams, Params};
use crate::world::{
    Bystander, GridMap, InteractionTarget, MainObject, Pose2, Vec2, WorldError, WorldState,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSpec {
    pub resolution: f64,
    /// `.`/`#` rows, top row first; run-length rows such as `"3#10.3#"` are accepted.
    pub rows: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartSpec {
    pub robot: Pose2,
    pub user: Vec2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema: u32,
    #[serde(default)]
    pub name: String,
    pub map: MapSpec,
    #[serde(default)]
    pub objects: Vec<MainObject>,
    #[serde(default)]
    pub targets: Vec<InteractionTarget>,
    #[serde(default)]
    pub bystanders: Vec<Bystander>,
    #[serde(default)]
    pub tasks: Vec<Task>,
    #[serde(default)]
    pub finish: Option<Pose2>,
    pub start: StartSpec,
    #[serde(default)]
    pub config: Params,
    #[serde(default)]
    pub noise: NoiseParams,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldProblem {
    pub path: String,
    pub message: String,
}

impl fmt::Display for FieldProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ValidationError {
    pub problems: Vec<FieldProblem>,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lines: Vec<String> = self.problems.iter().map(ToString::to_string).collect();
        f.write_str(&lines.join("; "))
    }
}

impl ValidationError {
    fn single(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            problems: vec![FieldProblem {
                path: path.into(),
                message: message.into(),
            }],
        }
    }
}

/// A validated scenario with its built world.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub file: ScenarioFile,
    /// Exact source text, kept for hashing and embedding in logs.
    pub source: String,
    pub sha256: String,
    pub world: WorldState,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Scenario {
    pub fn parse(source: &str) -> Result<Scenario, ValidationError> {
        let de = &mut serde_json::Deserializer::from_str(source);
        let file: ScenarioFile = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { "$".to_string() } else { path };
            ValidationError::single(path, e.into_inner().to_string())
        })?;
        let world = validate(&file)?;
        Ok(Scenario {
            sha256: sha256_hex(source.as_bytes()),
            source: source.to_string(),
            file,
            world,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Scenario, ScenarioLoadError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioLoadError::Io(format!("{}: {e}", path.display())))?;
        Ok(Scenario::parse(&text)?)
    }

    pub fn name(&self) -> &str {
        &self.file.name
    }

    pub fn route(&self) -> Route {
        Route {
            tasks: self.file.tasks.clone(),
            finish: self.file.finish,
        }
    }

    pub fn config(&self, variant: Variant) -> SessionConfig {
        SessionConfig {
            variant,
            params: self.file.config,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioLoadError {
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Invalid(#[from] ValidationError),
}

fn world_problem(file: &ScenarioFile, err: WorldError) -> FieldProblem {
    let (path, message) = match err {
        WorldError::InvalidMap(m) if m.starts_with("bystander") => ("bystanders".to_string(), m),
        WorldError::InvalidMap(m) => ("map".to_string(), m),
        WorldError::OutOfBounds { x, y } => ("map".to_string(), format!("({x}, {y}) out of bounds")),
        WorldError::InvalidObject { id, reason } => {
            let idx = file.objects.iter().rposition(|o| o.id == id).unwrap_or(0);
            (format!("objects[{idx}]"), reason)
        }
        WorldError::UnknownObject(id) => {
            let idx = file.targets.iter().position(|t| t.owner == id).unwrap_or(0);
            (format!("targets[{idx}].owner"), format!("no object with id {id}"))
        }
    };
    FieldProblem { path, message }
}

fn validate(file: &ScenarioFile) -> Result<WorldState, ValidationError> {
    let mut problems = Vec::new();
    let mut push = |path: String, message: String| problems.push(FieldProblem { path, message });
    if file.schema != SCHEMA_VERSION {
        push("schema".into(), format!("unsupported schema {}, expected {SCHEMA_VERSION}", file.schema));
    }
    for p in file.config.problems() {
        let (path, message) = p.split_once(": ").unwrap_or((p.as_str(), "invalid"));
        push(path.to_string(), message.to_string());
    }
    let n = &file.noise;
    for (name, v) in [
        ("sigma_pos", n.sigma_pos),
        ("sigma_dim", n.sigma_dim),
        ("sigma_h", n.sigma_h),
        ("lambda_fp", n.lambda_fp),
        ("conf_sigma", n.conf_sigma),
        ("miss_window_s", n.miss_window_s),
        ("pose_sigma", n.pose_sigma),
    ] {
        if !(v >= 0.0 && v.is_finite()) {
            push(format!("noise.{name}"), "must be a finite value >= 0".into());
        }
    }
    if !(0.0..=1.0).contains(&n.miss_prob) {
        push("noise.miss_prob".into(), "must lie in [0, 1]".into());
    }
    if !(n.sensing_range > 0.0) {
        push("noise.sensing_range".into(), "must be > 0".into());
    }
    let map = match GridMap::from_rows(&file.map.rows, file.map.resolution) {
        Ok(m) => Some(m),
        Err(WorldError::InvalidMap(m)) => {
            let path = match m.split_once(':') {
                Some((idx, _)) if idx.starts_with("map[") => format!("map.rows{}", &idx[3..]),
                _ => "map".to_string(),
            };
            push(path, m);
            None
        }
        Err(e) => {
            push("map".into(), e.to_string());
            None
        }
    };
    let world = map.and_then(|map| {
        WorldState::new(map, file.objects.clone(), file.targets.clone(), file.bystanders.clone())
            .map_err(|e| problems.push(world_problem(file, e)))
            .ok()
    });
    let mut problems = problems;
    let Some(world) = world else {
        return Err(ValidationError { problems });
    };
    let geom = &file.config.geometry;
    for (i, task) in file.tasks.iter().enumerate() {
        match world.object(task.object) {
            Ok(o) if o.kind() != task.kind => problems.push(FieldProblem {
                path: format!("tasks[{i}].kind"),
                message: format!("object {} is a {}", task.object, o.kind().as_str()),
            }),
            Ok(_) => {}
            Err(_) => problems.push(FieldProblem {
                path: format!("tasks[{i}].object"),
                message: format!("no object with id {}", task.object),
            }),
        }
        if let Some(a) = task.approach {
            if !pose_free(&world, a.position(), geom.robot_radius) {
                problems.push(FieldProblem {
                    path: format!("tasks[{i}].approach"),
                    message: "pose is not collision-free".into(),
                });
            }
        }
    }
    if !pose_free(&world, file.start.robot.position(), geom.robot_radius) {
        problems.push(FieldProblem {
            path: "start.robot".into(),
            message: "pose is not collision-free".into(),
        });
    }
    if !pose_free(&world, file.start.user, geom.user_radius) {
        problems.push(FieldProblem {
            path: "start.user".into(),
            message: "position is not collision-free".into(),
        });
    }
    if let Some(f) = file.finish {
        if !pose_free(&world, f.position(), geom.robot_radius) {
            problems.push(FieldProblem {
                path: "finish".into(),
                message: "pose is not collision-free".into(),
            });
        }
    }
    if problems.is_empty() {
        Ok(world)
    } else {
        Err(ValidationError { problems })
    }
}

fn pose_free(world: &WorldState, p: Vec2, radius: f64) -> bool {
    world
        .occupancy()
        .nearest_occupied_distance(p)
        .is_ok_and(|d| d >= radius)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> serde_json::Value {
        serde_json::json!({
            "schema": 1,
            "name": "empty",
            "map": {"resolution": 0.1, "rows": ["20#", "#18.#", "#18.#", "#18.#", "#18.#", "#18.#", "#18.#", "#18.#", "#18.#", "20#"]},
            "start": {"robot": [1.0, 0.5, 0.0], "user": [1.5, 0.5]}
        })
    }

    #[test]
    fn minimal_scenario_parses() {
        let s = Scenario::parse(&minimal().to_string()).unwrap();
        assert_eq!(s.world.static_map().width(), 20);
        assert_eq!(s.sha256.len(), 64);
        assert!(s.route().tasks.is_empty());
    }

    #[test]
    fn problems_carry_field_paths() {
        let mut v = minimal();
        v["config"] = serde_json::json!({"apf": {"beta": 2.0}});
        v["start"]["robot"] = serde_json::json!([0.05, 0.05, 0.0]);
        let err = Scenario::parse(&v.to_string()).unwrap_err();
        let paths: Vec<&str> = err.problems.iter().map(|p| p.path.as_str()).collect();
        assert!(paths.contains(&"config.apf.beta"), "{paths:?}");
        assert!(paths.contains(&"start.robot"), "{paths:?}");

        let mut v = minimal();
        v["config"] = serde_json::json!({"apf": {"gamma": 1.0}});
        let err = Scenario::parse(&v.to_string()).unwrap_err();
        assert_eq!(err.problems[0].path, "config.apf.gamma");

        let mut v = minimal();
        v["map"]["rows"][3] = serde_json::json!("#17.#");
        let err = Scenario::parse(&v.to_string()).unwrap_err();
        assert_eq!(err.problems[0].path, "map.rows[3]");

        let mut v = minimal();
        v["tasks"] = serde_json::json!([{"object": 9, "kind": "door"}]);
        let err = Scenario::parse(&v.to_string()).unwrap_err();
        assert_eq!(err.problems[0].path, "tasks[0].object");

        let mut v = minimal();
        v["schema"] = serde_json::json!(2);
        assert_eq!(Scenario::parse(&v.to_string()).unwrap_err().problems[0].path, "schema");
    }
}
