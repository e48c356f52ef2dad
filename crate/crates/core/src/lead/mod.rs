//! Lead-mode motion: planning, path following, servoing and prompts.

pub mod planner;
pub mod servo;

use crate::command::{ControlCommand, Prompt};
use crate::placement::Side;
use crate::world::{Pose2, WorldState};

pub use planner::{plan_on_grid, Octile, PathPlan, PlanError, Traversability};
pub use servo::{servo_step, ServoConfig, ServoError, ServoPhase, ServoState};

/// Plans on the world's current occupancy for a robot disc of `radius`.
pub fn plan_path(
    world: &WorldState,
    start: &Pose2,
    goal: &Pose2,
    radius: f64,
    inflate: f64,
) -> Result<PathPlan, PlanError> {
    plan_on_grid(world.occupancy(), start, goal, radius, inflate)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FollowConfig {
    pub speed_cap: f64,
    pub lookahead: f64,
    pub completion_tol: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FollowOutput {
    pub command: ControlCommand,
    pub complete: bool,
    /// Index of the waypoint being tracked.
    pub progress: usize,
}

/// Pure-pursuit step toward the first waypoint beyond the lookahead, starting
/// the search at `progress` so the tracked point never moves backwards.
pub fn follow_step(plan: &PathPlan, pose: &Pose2, progress: usize, cfg: &FollowConfig) -> FollowOutput {
    let here = pose.position();
    let last = plan.waypoints.len().saturating_sub(1);
    let Some(goal) = plan.waypoints.last() else {
        return FollowOutput {
            command: ControlCommand::stop(),
            complete: true,
            progress: 0,
        };
    };
    let to_goal = here.distance(goal.position());
    if to_goal <= cfg.completion_tol {
        return FollowOutput {
            command: ControlCommand::stop(),
            complete: true,
            progress: last,
        };
    }
    // advance progress past waypoints we have already reached
    let mut idx = progress.min(last);
    while idx < last && plan.waypoints[idx].position().distance(here) <= cfg.lookahead {
        idx += 1;
    }
    let aim = plan.waypoints[idx].position();
    let delta = aim - here;
    let dist = delta.norm();
    let speed = if idx == last {
        cfg.speed_cap.min(dist / cfg.dt)
    } else {
        cfg.speed_cap
    };
    let dir = delta.normalized();
    FollowOutput {
        command: ControlCommand {
            velocity: dir * speed,
            heading: (dist > 1e-9).then(|| delta.angle()),
            prompts: vec![],
        },
        complete: false,
        progress: idx,
    }
}

pub fn side_prompt(side: Side) -> Prompt {
    Prompt::new(format!("please stand on the {} side of the robot", side.as_str()))
}

pub fn height_prompt(height: f64, rounding: f64) -> Prompt {
    let h = (height / rounding).round() * rounding + 0.0;
    Prompt::new(format!("target at height {h:.2} meters"))
}

/// Announcement after servoing: side then height, or height only when the
/// side prompt is suppressed.
pub fn emit_prompts(side: Option<Side>, height: f64, rounding: f64) -> Vec<Prompt> {
    side.map(side_prompt)
        .into_iter()
        .chain(std::iter::once(height_prompt(height, rounding)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::command::actuate;
    use crate::world::{GridMap, Vec2};

    fn cfg() -> FollowConfig {
        FollowConfig {
            speed_cap: 0.6,
            lookahead: 0.4,
            completion_tol: 0.15,
            dt: 0.1,
        }
    }

    fn corridor_plan() -> PathPlan {
        let map = GridMap::new(60, 20, 0.05).unwrap();
        plan_on_grid(&map, &Pose2::new(0.5, 0.5, 0.0), &Pose2::new(2.5, 0.5, 0.0), 0.2, 0.0).unwrap()
    }

    #[test]
    fn at_final_waypoint_is_complete() {
        let plan = corridor_plan();
        let out = follow_step(&plan, plan.waypoints.last().unwrap(), 0, &cfg());
        assert!(out.complete);
        assert_eq!(out.command.velocity, Vec2::ZERO);
    }

    #[test]
    fn straight_corridor_moves_at_cap() {
        let plan = corridor_plan();
        let mut pose = plan.waypoints[0];
        let mut progress = 0;
        loop {
            let out = follow_step(&plan, &pose, progress, &cfg());
            if out.complete {
                break;
            }
            progress = out.progress;
            let next = actuate(&pose, &out.command, 0.6, 0.8, 0.1);
            let step = next.position().distance(pose.position());
            let remaining = pose.position().distance(Vec2::new(2.5, 0.5));
            if remaining > 0.15 + 0.06 {
                assert!((step - 0.06).abs() < 1e-9, "step {step} at {remaining}");
            }
            pose = next;
        }
        assert!(pose.position().distance(Vec2::new(2.5, 0.5)) <= 0.15);
    }

    #[test]
    fn lateral_offset_is_reduced() {
        let plan = corridor_plan();
        let pose = Pose2::new(1.0, 0.8, 0.0);
        let out = follow_step(&plan, &pose, 0, &cfg());
        assert!(out.command.velocity.y < 0.0);
        let next = actuate(&pose, &out.command, 0.6, 0.8, 0.1);
        assert!((next.y - 0.5).abs() < 0.3);
    }

    #[test]
    fn prompt_texts() {
        let p = emit_prompts(Some(Side::Left), 1.12, 0.05);
        assert_eq!(
            p.iter().map(|p| p.text.as_str()).collect::<Vec<_>>(),
            ["please stand on the left side of the robot", "target at height 1.10 meters"]
        );
        let p = emit_prompts(None, 1.12, 0.05);
        assert_eq!(p, vec![Prompt::new("target at height 1.10 meters")]);
        assert_eq!(height_prompt(0.0, 0.05).text, "target at height 0.00 meters");
        assert_eq!(height_prompt(-0.01, 0.05).text, "target at height 0.00 meters");
    }
}
