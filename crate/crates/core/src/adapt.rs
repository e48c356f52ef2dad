//! Adaptation-mode control: potential-field velocity, heading blend and the
//! path-clearance monitor.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::command::{ControlCommand, Prompt};
use crate::lead::{plan_on_grid, PlanError};
use crate::params::{ApfParams, ClearanceGates, RobotGeometry};
use crate::placement::EndGoal;
use crate::world::{wrap_angle, MainObject, ObjectKind, Pose2, Vec2, WorldState};

pub const KEEP_OPENING_DOOR: &str = "keep opening the door";
pub const KEEP_PULLING_CHAIR: &str = "keep pulling out the chair";
pub const WAITING_FOR_ELEVATOR: &str = "waiting for elevator";
pub const PATH_BLOCKED: &str = "path is blocked, please wait";
pub const ELEVATOR_OPEN: &str = "elevator door is open, press forward button to continue";
pub const PATH_CLEAR: &str = "path is clear, press forward button to continue";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PitchState {
    #[default]
    Neutral,
    Pushed,
}

/// Leash handle reading. `theta_h` is the handle yaw relative to the robot
/// heading; `push` is in the robot frame and is zero unless pushed.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HandleSignal {
    pub pitch_state: PitchState,
    pub theta_h: f64,
    pub push: Vec2,
}

impl HandleSignal {
    pub fn neutral(theta_h: f64) -> Self {
        Self {
            pitch_state: PitchState::Neutral,
            theta_h,
            push: Vec2::ZERO,
        }
    }

    pub fn pushed(theta_h: f64) -> Self {
        Self {
            pitch_state: PitchState::Pushed,
            theta_h,
            push: Vec2::new(1.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlForce {
    pub f: Vec2,
    pub f_att: Vec2,
    pub f_rep_sum: Vec2,
    pub velocity: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum AdaptError {
    #[error("obstacle distance {0} is not positive")]
    ObstaclePenetration(f64),
}

/// Repulsion from one obstacle at distance `d`, pointing along `away`.
pub fn repulsion(d: f64, away: Vec2, params: &ApfParams) -> Vec2 {
    if d >= params.d0 {
        return Vec2::ZERO;
    }
    away.normalized() * (params.eta * (1.0 / d - 1.0 / params.d0) / (d * d))
}

/// Attraction toward the user-derived point plus inverse-square repulsion
/// from each `(obstacle point, distance)`; the velocity is the force clamped
/// to `v_max`.
pub fn apf_force(
    robot: &Pose2,
    x_u: Vec2,
    handle: &HandleSignal,
    obstacles: &[(Vec2, f64)],
    params: &ApfParams,
) -> Result<ControlForce, AdaptError> {
    let x = robot.position();
    let h_world = handle.push.rotate(robot.heading());
    let f_att = ((x_u - x) + h_world * params.alpha) * params.k_att;
    let mut f_rep_sum = Vec2::ZERO;
    for &(p, d) in obstacles {
        if !(d > 0.0) {
            return Err(AdaptError::ObstaclePenetration(d));
        }
        f_rep_sum += repulsion(d, x - p, params);
    }
    let f = f_att + f_rep_sum;
    Ok(ControlForce {
        f,
        f_att,
        f_rep_sum,
        velocity: f.clamp_norm(params.v_max),
    })
}

/// Shortest-arc interpolation from `theta_g` toward `theta_h`.
pub fn blend_heading(theta_h: f64, theta_g: f64, beta: f64) -> f64 {
    wrap_angle(theta_g + beta * wrap_angle(theta_h - theta_g))
}

/// One representative obstacle per angular sector: the nearest beam hit,
/// kept when its distance to the robot surface is inside the influence
/// radius. Distances are floored at 1 cm.
pub fn obstacles_from_scan(
    robot: &Pose2,
    ranges: &[f64],
    robot_radius: f64,
    params: &ApfParams,
) -> Vec<(Vec2, f64)> {
    let n = ranges.len();
    if n == 0 {
        return Vec::new();
    }
    let sectors = ((360.0 / params.sector_deg).round() as usize).max(1);
    let mut best: Vec<Option<(f64, usize)>> = vec![None; sectors];
    for (i, &r) in ranges.iter().enumerate() {
        let s = (i * sectors) / n;
        if best[s].is_none_or(|(br, _)| r < br) {
            best[s] = Some((r, i));
        }
    }
    best.into_iter()
        .flatten()
        .filter_map(|(r, i)| {
            let d = r - robot_radius;
            if d >= params.d0 {
                return None;
            }
            let a = robot.heading() + TAU * i as f64 / n as f64;
            Some((robot.position() + Vec2::from_angle(a) * r, d.max(0.01)))
        })
        .collect()
}

/// Obstacles around the robot from a fresh scan of the world.
pub fn sense_obstacles(
    world: &WorldState,
    robot: &Pose2,
    geometry: &RobotGeometry,
    params: &ApfParams,
) -> Vec<(Vec2, f64)> {
    let max_range = params.d0 + geometry.robot_radius + 0.5;
    let ranges = world.raycast(robot, params.n_beams, max_range);
    obstacles_from_scan(robot, &ranges, geometry.robot_radius, params)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "prompt", rename_all = "snake_case")]
pub enum ClearStatus {
    Clear,
    Blocked(String),
}

impl ClearStatus {
    pub fn is_clear(&self) -> bool {
        matches!(self, ClearStatus::Clear)
    }
}

/// Kind-specific opening gate.
pub fn gate_passes(object: &MainObject, gates: &ClearanceGates) -> bool {
    match object.kind() {
        ObjectKind::Door => object.opening_width().unwrap_or(0.0) >= gates.door_width,
        ObjectKind::Elevator => object.state() >= gates.elevator_fraction,
        ObjectKind::Chair => object.state() >= gates.chair_pull,
    }
}

pub fn blocked_prompt(kind: ObjectKind) -> &'static str {
    match kind {
        ObjectKind::Door => KEEP_OPENING_DOOR,
        ObjectKind::Elevator => WAITING_FOR_ELEVATOR,
        ObjectKind::Chair => KEEP_PULLING_CHAIR,
    }
}

pub fn clear_prompt(kind: ObjectKind) -> &'static str {
    match kind {
        ObjectKind::Elevator => ELEVATOR_OPEN,
        _ => PATH_CLEAR,
    }
}

/// Clear iff the opening gate passes and a path from the robot to the end
/// goal exists at the current object state.
#[allow(clippy::too_many_arguments)]
pub fn clearance_status(
    world: &WorldState,
    object: &MainObject,
    end_goal: &EndGoal,
    robot: &Pose2,
    gates: &ClearanceGates,
    robot_radius: f64,
    inflate: f64,
) -> ClearStatus {
    if !gate_passes(object, gates) {
        return ClearStatus::Blocked(blocked_prompt(object.kind()).to_string());
    }
    match plan_on_grid(world.occupancy(), robot, &end_goal.pose, robot_radius, inflate) {
        Ok(_) => ClearStatus::Clear,
        Err(PlanError::PathBlocked | PlanError::GoalOccupied | PlanError::StartOutside) => {
            ClearStatus::Blocked(PATH_BLOCKED.to_string())
        }
    }
}

/// Remembers the last status so prompts fire only on changes. The first
/// observation always counts as a change.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClearanceMonitor {
    last: Option<ClearStatus>,
}

impl ClearanceMonitor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn last(&self) -> Option<&ClearStatus> {
        self.last.as_ref()
    }

    /// Records `status`; returns the prompt for a transition, if any.
    pub fn observe(&mut self, status: &ClearStatus, kind: ObjectKind) -> Option<Prompt> {
        if self.last.as_ref() == Some(status) {
            return None;
        }
        self.last = Some(status.clone());
        Some(match status {
            ClearStatus::Clear => Prompt::new(clear_prompt(kind)),
            ClearStatus::Blocked(text) => Prompt::new(text.clone()),
        })
    }

    /// True when the most recent observation went from not-clear to clear.
    pub fn is_clear(&self) -> bool {
        self.last.as_ref().is_some_and(ClearStatus::is_clear)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdaptationInputs<'a> {
    pub robot: &'a Pose2,
    pub x_u: Vec2,
    pub handle: &'a HandleSignal,
    pub obstacles: &'a [(Vec2, f64)],
    pub end_goal: &'a EndGoal,
}

/// Velocity from the potential field, heading blended between the handle
/// yaw and the end-goal bearing.
pub fn adaptation_step(
    inputs: &AdaptationInputs<'_>,
    params: &ApfParams,
) -> Result<(ControlCommand, ControlForce), AdaptError> {
    let force = apf_force(inputs.robot, inputs.x_u, inputs.handle, inputs.obstacles, params)?;
    let theta_h = wrap_angle(inputs.robot.heading() + inputs.handle.theta_h);
    let to_goal = inputs.end_goal.pose.position() - inputs.robot.position();
    let theta_g = if to_goal.norm() > 1e-9 {
        to_goal.angle()
    } else {
        inputs.robot.heading()
    };
    let cmd = ControlCommand {
        velocity: force.velocity,
        heading: Some(blend_heading(theta_h, theta_g, params.beta)),
        prompts: vec![],
    };
    Ok((cmd, force))
}
