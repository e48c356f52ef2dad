use serde::{Deserialize, Serialize};

use crate::world::{wrap_angle, Pose2, Vec2};

/// A voice prompt.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Prompt {
    pub text: String,
}

impl Prompt {
    pub fn new(text: impl Into<String>) -> Self {
        Self { text: text.into() }
    }
}

/// Per-tick robot command: world-frame velocity, optional absolute heading,
/// and prompts to play.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlCommand {
    pub velocity: Vec2,
    pub heading: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub prompts: Vec<Prompt>,
}

impl ControlCommand {
    pub fn stop() -> Self {
        Self::default()
    }

    pub fn with_prompt(mut self, prompt: Prompt) -> Self {
        self.prompts.push(prompt);
        self
    }
}

/// Holonomic actuation: translate by `velocity·dt` (capped), turn toward the
/// commanded heading at no more than `angular_cap`.
pub fn actuate(pose: &Pose2, cmd: &ControlCommand, speed_cap: f64, angular_cap: f64, dt: f64) -> Pose2 {
    let v = cmd.velocity.clamp_norm(speed_cap);
    let mut next = Pose2::from_position(pose.position() + v * dt, pose.heading());
    if let Some(h) = cmd.heading {
        let err = wrap_angle(h - pose.heading());
        let max = angular_cap * dt;
        if err.abs() <= max {
            next.set_heading(h);
        } else {
            next.set_heading(pose.heading() + max.copysign(err));
        }
    }
    next
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn actuation_caps_rate_and_speed() {
        let p = Pose2::new(0.0, 0.0, 0.0);
        let cmd = ControlCommand {
            velocity: Vec2::new(3.0, 4.0),
            heading: Some(1.0),
            prompts: vec![],
        };
        let n = actuate(&p, &cmd, 0.5, 0.8, 0.1);
        assert!((n.position().norm() - 0.05).abs() < 1e-12);
        assert!((n.heading() - 0.08).abs() < 1e-12);
        let n = actuate(&p, &ControlCommand { heading: Some(-0.01), ..ControlCommand::stop() }, 0.5, 0.8, 0.1);
        assert_eq!(n.heading(), -0.01);
    }
}
