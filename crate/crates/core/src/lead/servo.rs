//! Two-phase bearing/range servo onto the interaction target.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::command::ControlCommand;
use crate::params::{LeadParams, PlacementParams};
use crate::world::Pose2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServoPhase {
    Rotate,
    Approach,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServoState {
    pub phase: ServoPhase,
    pub bearing_error: f64,
    pub range: f64,
    pub lost_ticks: u32,
}

impl Default for ServoState {
    fn default() -> Self {
        Self {
            phase: ServoPhase::Rotate,
            bearing_error: 0.0,
            range: 0.0,
            lost_ticks: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ServoError {
    #[error("target lost for more than the allowed number of ticks")]
    ServoLost,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServoConfig {
    pub eps_ang: f64,
    pub band_min: f64,
    pub band_max: f64,
    pub speed: f64,
    pub lost_limit: u32,
    pub dt: f64,
}

impl ServoConfig {
    pub fn new(lead: &LeadParams, placement: &PlacementParams, dt: f64) -> Self {
        Self {
            eps_ang: lead.eps_ang,
            band_min: placement.band_min,
            band_max: placement.band_max,
            speed: lead.approach_speed,
            lost_limit: lead.servo_lost_limit,
            dt,
        }
    }

    fn in_band(&self, range: f64) -> bool {
        range >= self.band_min && range <= self.band_max
    }
}

/// One servo tick. `observation` is the target `(bearing, range)` relative to
/// `robot`, or `None` when no filtered detection is available. Phase changes
/// chain within a tick, so an already aligned, in-band target finishes at once.
pub fn servo_step(
    state: ServoState,
    robot: &Pose2,
    observation: Option<(f64, f64)>,
    cfg: &ServoConfig,
) -> Result<(ControlCommand, ServoState), ServoError> {
    let Some((bearing, range)) = observation else {
        let lost = state.lost_ticks + 1;
        if lost > cfg.lost_limit {
            return Err(ServoError::ServoLost);
        }
        return Ok((ControlCommand::stop(), ServoState { lost_ticks: lost, ..state }));
    };
    let mut next = ServoState {
        phase: state.phase,
        bearing_error: bearing,
        range,
        lost_ticks: 0,
    };
    let aligned = bearing.abs() <= cfg.eps_ang;
    if next.phase == ServoPhase::Done && !(aligned && cfg.in_band(range)) {
        next.phase = ServoPhase::Rotate;
    }
    if next.phase == ServoPhase::Approach && bearing.abs() > 2.0 * cfg.eps_ang {
        next.phase = ServoPhase::Rotate;
    }
    if next.phase == ServoPhase::Rotate {
        if !aligned {
            let cmd = ControlCommand {
                heading: Some(robot.heading() + bearing),
                ..ControlCommand::stop()
            };
            return Ok((cmd, next));
        }
        next.phase = ServoPhase::Approach;
    }
    if next.phase == ServoPhase::Approach {
        if aligned && cfg.in_band(range) {
            next.phase = ServoPhase::Done;
        } else {
            // aim just inside the band edge being approached
            let margin = 0.05f64.min((cfg.band_max - cfg.band_min) / 2.0);
            let signed = if range > cfg.band_max {
                (range - (cfg.band_max - margin)).min(cfg.speed * cfg.dt)
            } else if range < cfg.band_min {
                -((cfg.band_min + margin) - range).min(cfg.speed * cfg.dt)
            } else {
                0.0
            };
            let cmd = ControlCommand {
                velocity: robot.forward() * (signed / cfg.dt),
                heading: Some(robot.heading() + bearing),
                prompts: vec![],
            };
            return Ok((cmd, next));
        }
    }
    Ok((ControlCommand::stop(), next))
}
