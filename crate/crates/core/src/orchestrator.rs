//! The dual-mode state machine.
//!
//! The orchestrator is a deterministic automaton over [`TickInputs`]; it reads
//! the world only for geometry (occupancy, object states) and never draws
//! random numbers, so a log of its inputs replays exactly.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::adapt::{
    adaptation_step, clearance_status, sense_obstacles, AdaptationInputs, ClearStatus,
    ClearanceMonitor, ControlForce, HandleSignal,
};
use crate::command::{ControlCommand, Prompt};
use crate::lead::{
    emit_prompts, follow_step, plan_path, servo_step, FollowConfig, PathPlan, ServoConfig,
    ServoPhase, ServoState,
};
use crate::params::Params;
use crate::perception::{
    estimate_target, filter_by_priors, DetectionCandidate, HandDetector, Hypothesis,
    TargetEstimate,
};
use crate::placement::{
    compute_end_goal, compute_stop_goal, fixed_distance_stop, select_user_side, stand_point,
    EndGoal, Side, StopGoalResult,
};
use crate::world::{wrap_angle, ObjectId, ObjectKind, Pose2, Vec2, WorldState};

pub const ASSISTANCE_NEEDED: &str = "assistance needed";
/// Candidates farther than this from the mapped target are ignored.
const GATE_RADIUS: f64 = 1.0;
/// The user counts as arrived within this distance of the robot at a goal.
const USER_ARRIVAL: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    #[serde(alias = "noadapt", alias = "non_adaptive")]
    NonAdaptive,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NonAdaptive => "noadapt",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        match s {
            "full" => Some(Variant::Full),
            "noadapt" | "nonadaptive" | "non_adaptive" => Some(Variant::NonAdaptive),
            _ => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeadPhase {
    Planning,
    Following,
    Servoing,
    Announced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Mode {
    Lead { phase: LeadPhase },
    Adaptation { waiting_confirm: bool },
    Fallback,
}

impl Mode {
    pub const PLANNING: Mode = Mode::Lead {
        phase: LeadPhase::Planning,
    };

    pub fn lead(phase: LeadPhase) -> Mode {
        Mode::Lead { phase }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Mode::Lead { phase: LeadPhase::Planning } => "lead:planning",
            Mode::Lead { phase: LeadPhase::Following } => "lead:following",
            Mode::Lead { phase: LeadPhase::Servoing } => "lead:servoing",
            Mode::Lead { phase: LeadPhase::Announced } => "lead:announced",
            Mode::Adaptation { waiting_confirm: false } => "adaptation",
            Mode::Adaptation { waiting_confirm: true } => "adaptation:waiting_confirm",
            Mode::Fallback => "fallback",
        }
    }

    pub fn is_lead(&self) -> bool {
        matches!(self, Mode::Lead { .. })
    }

    pub fn is_adaptation(&self) -> bool {
        matches!(self, Mode::Adaptation { .. })
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Button {
    Up,
    Down,
    Left,
    Right,
    Forward,
}

impl Button {
    pub fn parse(s: &str) -> Option<Button> {
        match s {
            "up" => Some(Button::Up),
            "down" => Some(Button::Down),
            "left" => Some(Button::Left),
            "right" => Some(Button::Right),
            "forward" => Some(Button::Forward),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub object: ObjectId,
    pub kind: ObjectKind,
    /// Optional wayfinding pose reached before the task starts.
    #[serde(default)]
    pub approach: Option<Pose2>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Route {
    pub tasks: Vec<Task>,
    /// Final pose after the last task.
    #[serde(default)]
    pub finish: Option<Pose2>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub variant: Variant,
    pub params: Params,
}

/// Everything the orchestrator reads in one tick besides world geometry.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TickInputs {
    pub robot: Pose2,
    pub user: Vec2,
    /// Hand `[x, y, height]`.
    pub hand: [f64; 3],
    pub handle: HandleSignal,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub buttons: Vec<Button>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<DetectionCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RobotEvent {
    Mode {
        from: String,
        to: String,
        cause: String,
    },
    Prompt {
        channel: String,
        text: String,
    },
    WayfindStart {
        leg: usize,
    },
    WayfindEnd {
        leg: usize,
    },
    TaskStart {
        task: usize,
        object: ObjectId,
    },
    Goals {
        task: usize,
        stop: Pose2,
        side: Option<Side>,
        end: Pose2,
        #[serde(skip_serializing_if = "Option::is_none")]
        cost: Option<[f64; 4]>,
    },
    ServoDone {
        task: usize,
    },
    HandOnTarget {
        task: usize,
    },
    Clearance {
        task: usize,
        status: ClearStatus,
    },
    TaskComplete {
        task: usize,
    },
    RouteComplete,
}

impl RobotEvent {
    fn prompt(p: &Prompt) -> Self {
        RobotEvent::Prompt {
            channel: "voice".into(),
            text: p.text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TickOutput {
    pub mode: Option<Mode>,
    pub command: ControlCommand,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub force: Option<ControlForce>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<RobotEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
enum Stage {
    /// Plain wayfinding leg; `next` is the task index it leads to, or
    /// `tasks.len()` for the route finish.
    Wayfind { leg: usize, next: usize, goal: Pose2 },
    Locate,
    ToStop,
    Servo,
    Announced,
    Adapt,
    ToEnd,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Orchestrator {
    config: SessionConfig,
    route: Route,
    mode: Mode,
    stage: Stage,
    /// Stage to resume after fallback.
    resume: Stage,
    task: usize,
    legs: usize,
    plan: Option<PathPlan>,
    progress: usize,
    arrived: bool,
    stop_goal: Option<Pose2>,
    stop_result: Option<StopGoalResult>,
    end_goal: Option<EndGoal>,
    estimate: Option<TargetEstimate>,
    estimate_n: u32,
    side: Option<Side>,
    servo: ServoState,
    none_streak: u32,
    hand: HandDetector,
    monitor: ClearanceMonitor,
    last_status: Option<ClearStatus>,
    started_task: Option<usize>,
    started: bool,
}

/// Gate, filter and reject spurious winners.
fn usable_detection(
    world: &WorldState,
    candidates: &[DetectionCandidate],
    task: &Task,
    params: &Params,
) -> Option<DetectionCandidate> {
    let mapped = world.target_point(task.object).ok()?;
    let gated: Vec<DetectionCandidate> = candidates
        .iter()
        .filter(|c| c.measured_target_point.distance(mapped) <= GATE_RADIUS)
        .cloned()
        .collect();
    let best = filter_by_priors(&gated, &params.priors, task.kind)?;
    matches!(best.hypothesis, Hypothesis::Object(id) if id == task.object).then_some(best)
}

impl Orchestrator {
    pub fn new(config: SessionConfig, route: Route) -> Self {
        let stage = Self::leg_stage(&route, 0, 0);
        Self {
            config,
            route,
            mode: Mode::PLANNING,
            stage,
            resume: stage,
            task: 0,
            legs: 0,
            plan: None,
            progress: 0,
            arrived: false,
            stop_goal: None,
            stop_result: None,
            end_goal: None,
            estimate: None,
            estimate_n: 0,
            side: None,
            servo: ServoState::default(),
            none_streak: 0,
            hand: HandDetector::new(),
            monitor: ClearanceMonitor::new(),
            last_status: None,
            started_task: None,
            started: false,
        }
    }

    /// Stage that begins task `next` (or the finish).
    fn leg_stage(route: &Route, next: usize, leg: usize) -> Stage {
        match route.tasks.get(next) {
            Some(t) => match t.approach {
                Some(goal) => Stage::Wayfind { leg, next, goal },
                None => Stage::Locate,
            },
            None => match route.finish {
                Some(goal) => Stage::Wayfind { leg, next, goal },
                None => Stage::Done,
            },
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn route(&self) -> &Route {
        &self.route
    }

    pub fn task_index(&self) -> usize {
        self.task
    }

    pub fn is_done(&self) -> bool {
        matches!(self.stage, Stage::Done)
    }

    pub fn plan(&self) -> Option<&PathPlan> {
        self.plan.as_ref()
    }

    pub fn stop_goal(&self) -> Option<Pose2> {
        self.stop_goal
    }

    pub fn stop_result(&self) -> Option<&StopGoalResult> {
        self.stop_result.as_ref()
    }

    pub fn end_goal(&self) -> Option<EndGoal> {
        self.end_goal
    }

    pub fn side(&self) -> Option<Side> {
        self.side
    }

    pub fn estimate(&self) -> Option<TargetEstimate> {
        self.estimate
    }

    pub fn last_status(&self) -> Option<&ClearStatus> {
        self.last_status.as_ref()
    }

    fn current_task(&self) -> Option<&Task> {
        self.route.tasks.get(self.task)
    }

    fn set_mode(&mut self, to: Mode, cause: &str, out: &mut TickOutput) {
        if self.mode != to {
            out.events.push(RobotEvent::Mode {
                from: self.mode.label().into(),
                to: to.label().into(),
                cause: cause.into(),
            });
            self.mode = to;
        }
    }

    fn fallback(&mut self, cause: &str, out: &mut TickOutput) {
        self.resume = match self.stage {
            Stage::ToStop | Stage::Servo => Stage::Locate,
            s => s,
        };
        self.plan = None;
        self.progress = 0;
        self.none_streak = 0;
        self.servo = ServoState::default();
        self.set_mode(Mode::Fallback, cause, out);
        out.command = ControlCommand::stop();
        let p = Prompt::new(ASSISTANCE_NEEDED);
        out.events.push(RobotEvent::prompt(&p));
        out.command.prompts.push(p);
    }

    fn follow_cfg(&self) -> FollowConfig {
        let p = &self.config.params;
        FollowConfig {
            speed_cap: p.lead.speed_cap,
            lookahead: p.lead.lookahead,
            completion_tol: p.lead.completion_tol,
            dt: p.timing.dt,
        }
    }

    fn plan_to(&mut self, world: &WorldState, robot: &Pose2, goal: &Pose2) -> bool {
        let p = &self.config.params;
        match plan_path(world, robot, goal, p.geometry.robot_radius, p.lead.inflate) {
            Ok(plan) => {
                self.plan = Some(plan);
                self.progress = 0;
                self.arrived = false;
                true
            }
            Err(_) => false,
        }
    }

    /// Follows the active plan; returns true once the final waypoint is reached.
    fn follow(&mut self, robot: &Pose2, out: &mut TickOutput) -> bool {
        let Some(plan) = &self.plan else {
            return true;
        };
        let f = follow_step(plan, robot, self.progress, &self.follow_cfg());
        self.progress = f.progress;
        out.command = f.command;
        f.complete
    }

    fn add_estimate(&mut self, est: TargetEstimate) {
        match self.estimate {
            Some(m) if self.estimate_n > 0 => {
                let n = self.estimate_n as f64;
                let c = m.center * (n / (n + 1.0)) + est.center * (1.0 / (n + 1.0));
                let h = (m.height * n + est.height) / (n + 1.0);
                let dn = wrap_angle(est.normal - m.normal);
                self.estimate = Some(TargetEstimate {
                    center: c,
                    height: h,
                    normal: wrap_angle(m.normal + dn / (n + 1.0)),
                });
                self.estimate_n += 1;
            }
            _ => {
                self.estimate = Some(est);
                self.estimate_n = 1;
            }
        }
    }

    /// Advances one tick.
    pub fn tick(&mut self, world: &WorldState, inp: &TickInputs) -> TickOutput {
        let mut out = TickOutput::default();
        if !self.started {
            self.started = true;
            out.events.push(RobotEvent::Mode {
                from: "none".into(),
                to: self.mode.label().into(),
                cause: "start".into(),
            });
        }
        let forward = inp.buttons.contains(&Button::Forward);

        if self.mode == Mode::Fallback {
            if forward {
                self.stage = self.resume;
                self.set_mode(Mode::PLANNING, "assist", &mut out);
            } else {
                out.mode = Some(self.mode);
                return out;
            }
        }

        // One stage transition may lead straight into the next stage's work
        // within the same tick; bound the chain to stay well-defined.
        for _ in 0..6 {
            if !self.step_stage(world, inp, forward, &mut out) {
                break;
            }
        }
        out.mode = Some(self.mode);
        out
    }

    /// Runs the current stage; returns true when it handed over to a new
    /// stage that should also run this tick.
    fn step_stage(
        &mut self,
        world: &WorldState,
        inp: &TickInputs,
        forward: bool,
        out: &mut TickOutput,
    ) -> bool {
        let robot = inp.robot;
        let variant = self.config.variant;
        let params = self.config.params;
        match self.stage {
            Stage::Done => {
                out.command = ControlCommand::stop();
                false
            }
            Stage::Wayfind { leg, next, goal } => {
                if self.plan.is_none() {
                    if !self.plan_to(world, &robot, &goal) {
                        self.fallback("path_blocked", out);
                        return false;
                    }
                    if leg == self.legs {
                        self.legs += 1;
                        out.events.push(RobotEvent::WayfindStart { leg });
                    }
                    self.set_mode(Mode::lead(LeadPhase::Following), "plan_ok", out);
                }
                let reached = self.arrived || self.follow(&robot, out);
                if !reached {
                    return false;
                }
                self.arrived = true;
                out.command = ControlCommand {
                    heading: Some(goal.heading()),
                    ..ControlCommand::stop()
                };
                let is_finish = next >= self.route.tasks.len();
                if is_finish && inp.user.distance(robot.position()) > USER_ARRIVAL {
                    return false;
                }
                out.events.push(RobotEvent::WayfindEnd { leg });
                self.plan = None;
                self.arrived = false;
                if is_finish {
                    self.finish_route(out);
                    return false;
                }
                self.task = next;
                self.stage = Stage::Locate;
                self.set_mode(Mode::PLANNING, "wayfind_done", out);
                true
            }
            Stage::Locate => {
                let Some(task) = self.current_task().copied() else {
                    self.finish_route(out);
                    return false;
                };
                if self.started_task != Some(self.task) {
                    out.events.push(RobotEvent::TaskStart {
                        task: self.task,
                        object: task.object,
                    });
                    self.started_task = Some(self.task);
                }
                let Some(det) = usable_detection(world, &inp.candidates, &task, &params) else {
                    self.none_streak += 1;
                    if self.none_streak >= params.timing.detection_fail_ticks {
                        self.fallback("detection_failed", out);
                        return false;
                    }
                    // face the mapped target to help acquisition
                    if let Ok(p) = world.target_point(task.object) {
                        out.command = ControlCommand {
                            heading: Some((p - robot.position()).angle()),
                            ..ControlCommand::stop()
                        };
                    }
                    return false;
                };
                self.none_streak = 0;
                let Ok(est) = estimate_target(world, &det) else {
                    self.fallback("degenerate_surface", out);
                    return false;
                };
                self.estimate = None;
                self.estimate_n = 0;
                self.add_estimate(est);
                let Ok(object) = world.object(task.object).cloned() else {
                    self.fallback("unknown_object", out);
                    return false;
                };
                let (stop, side, cost) = match variant {
                    Variant::Full => match compute_stop_goal(
                        world,
                        &est,
                        &object,
                        &params.weights,
                        &params.geometry,
                        &params.placement,
                    ) {
                        Ok(r) => {
                            self.stop_result = Some(r);
                            (r.pose, Some(r.side), Some([r.cost_total, r.cost_c, r.cost_d, r.cost_m]))
                        }
                        Err(_) => {
                            self.fallback("unreachable", out);
                            return false;
                        }
                    },
                    Variant::NonAdaptive => (
                        fixed_distance_stop(&est, params.timing.nonadaptive_stop_distance),
                        None,
                        None,
                    ),
                };
                let end = match compute_end_goal(
                    world,
                    &object,
                    &params.geometry,
                    &params.placement,
                    params.lead.inflate,
                ) {
                    Ok(e) => e,
                    Err(_) => {
                        self.fallback("no_end_goal", out);
                        return false;
                    }
                };
                if !self.plan_to(world, &robot, &stop) {
                    self.fallback("path_blocked", out);
                    return false;
                }
                self.stop_goal = Some(stop);
                self.end_goal = Some(end);
                self.side = side;
                out.events.push(RobotEvent::Goals {
                    task: self.task,
                    stop,
                    side,
                    end: end.pose,
                    cost,
                });
                self.stage = Stage::ToStop;
                self.set_mode(Mode::lead(LeadPhase::Following), "plan_ok", out);
                true
            }
            Stage::ToStop => {
                if !self.follow(&robot, out) {
                    return false;
                }
                self.plan = None;
                self.servo = ServoState::default();
                self.stage = Stage::Servo;
                self.set_mode(Mode::lead(LeadPhase::Servoing), "plan_complete", out);
                true
            }
            Stage::Servo => {
                let Some(task) = self.current_task().copied() else {
                    return false;
                };
                let det = usable_detection(world, &inp.candidates, &task, &params);
                if let Some(est) = det.as_ref().and_then(|d| estimate_target(world, d).ok()) {
                    self.add_estimate(est);
                }
                let obs = det.and(self.estimate).map(|e| {
                    (robot.bearing_to(e.center), robot.position().distance(e.center))
                });
                let done = match variant {
                    Variant::Full if self.translate_to_stop(&robot, obs, out) => false,
                    Variant::Full => {
                        let cfg = ServoConfig::new(&params.lead, &params.placement, params.timing.dt);
                        match servo_step(self.servo, &robot, obs, &cfg) {
                            Ok((cmd, next)) => {
                                out.command = cmd;
                                self.servo = next;
                                next.phase == ServoPhase::Done
                            }
                            Err(_) => {
                                self.fallback("servo_lost", out);
                                return false;
                            }
                        }
                    }
                    Variant::NonAdaptive => self.settle(&robot, obs, out),
                };
                if !done {
                    return false;
                }
                let Some(est) = self.estimate else {
                    return false;
                };
                let side = match variant {
                    Variant::Full => {
                        let object = world.object(task.object).ok().cloned();
                        let s = object.map(|o| select_user_side(&robot, &est, &o)).unwrap_or(Side::Right);
                        self.side = Some(s);
                        Some(s)
                    }
                    Variant::NonAdaptive => None,
                };
                out.command = ControlCommand::stop();
                out.events.push(RobotEvent::ServoDone { task: self.task });
                for p in emit_prompts(side, est.height, params.lead.height_rounding) {
                    out.events.push(RobotEvent::prompt(&p));
                    out.command.prompts.push(p);
                }
                self.hand.reset();
                self.stage = Stage::Announced;
                self.set_mode(Mode::lead(LeadPhase::Announced), "servo_done", out);
                false
            }
            Stage::Announced => {
                let Some(task) = self.current_task().copied() else {
                    return false;
                };
                if let Some(est) = usable_detection(world, &inp.candidates, &task, &params)
                    .and_then(|d| estimate_target(world, &d).ok())
                {
                    self.add_estimate(est);
                }
                let Some(est) = self.estimate else {
                    return false;
                };
                let on = self
                    .hand
                    .update(Vec2::new(inp.hand[0], inp.hand[1]), inp.hand[2], &est);
                if !on {
                    return false;
                }
                out.events.push(RobotEvent::HandOnTarget { task: self.task });
                self.monitor = ClearanceMonitor::new();
                self.last_status = None;
                self.stage = Stage::Adapt;
                self.set_mode(Mode::Adaptation { waiting_confirm: false }, "hand_on_target", out);
                true
            }
            Stage::Adapt => self.adapt(world, inp, forward, out),
            Stage::ToEnd => {
                let Some(end) = self.end_goal else {
                    return false;
                };
                if self.plan.is_none() && !self.arrived {
                    if !self.plan_to(world, &robot, &end.pose) {
                        self.fallback("path_blocked", out);
                        return false;
                    }
                    self.set_mode(Mode::lead(LeadPhase::Following), "plan_ok", out);
                }
                let reached = self.arrived || self.follow(&robot, out);
                if !reached {
                    return false;
                }
                self.arrived = true;
                self.plan = None;
                out.command = ControlCommand {
                    heading: Some(end.pose.heading()),
                    ..ControlCommand::stop()
                };
                if inp.user.distance(robot.position()) > USER_ARRIVAL {
                    return false;
                }
                out.events.push(RobotEvent::TaskComplete { task: self.task });
                self.arrived = false;
                self.stop_goal = None;
                self.stop_result = None;
                self.end_goal = None;
                self.estimate = None;
                self.estimate_n = 0;
                self.started_task = None;
                let next = self.task + 1;
                self.task = next;
                self.stage = Self::leg_stage(&self.route, next, self.legs);
                if self.stage == Stage::Done {
                    self.finish_route(out);
                    return false;
                }
                self.set_mode(Mode::PLANNING, "task_complete", out);
                true
            }
        }
    }

    fn finish_route(&mut self, out: &mut TickOutput) {
        self.stage = Stage::Done;
        out.command = ControlCommand::stop();
        out.events.push(RobotEvent::RouteComplete);
    }

    /// Non-adaptive stop: translate exactly onto the stop pose, then turn to
    /// face the target.
    /// Moves onto the stop position left by path following; false once there.
    fn translate_to_stop(&self, robot: &Pose2, obs: Option<(f64, f64)>, out: &mut TickOutput) -> bool {
        let params = &self.config.params;
        let Some(stop) = self.stop_goal else {
            return false;
        };
        let delta = stop.position() - robot.position();
        if delta.norm() <= 1e-9 {
            return false;
        }
        let heading = match obs {
            Some((b, _)) => robot.heading() + b,
            None => stop.heading(),
        };
        out.command = ControlCommand {
            velocity: delta.normalized() * params.lead.speed_cap.min(delta.norm() / params.timing.dt),
            heading: Some(heading),
            prompts: vec![],
        };
        true
    }

    fn settle(&mut self, robot: &Pose2, obs: Option<(f64, f64)>, out: &mut TickOutput) -> bool {
        let params = &self.config.params;
        if self.translate_to_stop(robot, obs, out) {
            return false;
        }
        let heading = match obs {
            Some((b, _)) => robot.heading() + b,
            None => self.stop_goal.map_or(robot.heading(), |s| s.heading()),
        };
        let aligned = obs.is_some_and(|(b, _)| b.abs() <= params.lead.eps_ang);
        out.command = ControlCommand {
            heading: Some(heading),
            ..ControlCommand::stop()
        };
        aligned
    }

    fn adapt(&mut self, world: &WorldState, inp: &TickInputs, forward: bool, out: &mut TickOutput) -> bool {
        let Some(task) = self.current_task().copied() else {
            return false;
        };
        let (Some(end), Ok(object)) = (self.end_goal, world.object(task.object)) else {
            return false;
        };
        let params = self.config.params;
        let robot = inp.robot;
        let status = clearance_status(
            world,
            object,
            &end,
            &robot,
            &params.gates,
            params.geometry.robot_radius,
            params.lead.inflate,
        );
        if self.last_status.as_ref() != Some(&status) {
            out.events.push(RobotEvent::Clearance {
                task: self.task,
                status: status.clone(),
            });
        }
        self.last_status = Some(status.clone());

        match self.config.variant {
            Variant::NonAdaptive => {
                self.monitor.observe(&status, task.kind);
                out.command = ControlCommand::stop();
                if status.is_clear() {
                    self.stage = Stage::ToEnd;
                    self.plan = None;
                    self.arrived = false;
                    self.set_mode(Mode::PLANNING, "clear", out);
                    return true;
                }
                false
            }
            Variant::Full => {
                if let Some(p) = self.monitor.observe(&status, task.kind) {
                    out.events.push(RobotEvent::prompt(&p));
                    out.command.prompts.push(p);
                }
                // Clear holds continuously from its edge, so a press now is at
                // or after that edge; a press while blocked is dropped.
                if status.is_clear() && forward {
                    self.stage = Stage::ToEnd;
                    self.plan = None;
                    self.arrived = false;
                    let prompts = std::mem::take(&mut out.command.prompts);
                    out.command = ControlCommand::stop();
                    out.command.prompts = prompts;
                    self.set_mode(Mode::PLANNING, "confirmed", out);
                    return true;
                }
                let side = self.side.unwrap_or(Side::Right);
                let offset = stand_point(&robot, side, &params.geometry) - robot.position();
                let x_u = inp.user - offset;
                let obstacles = sense_obstacles(world, &robot, &params.geometry, &params.apf);
                let inputs = AdaptationInputs {
                    robot: &robot,
                    x_u,
                    handle: &inp.handle,
                    obstacles: &obstacles,
                    end_goal: &end,
                };
                match adaptation_step(&inputs, &params.apf) {
                    Ok((cmd, force)) => {
                        let prompts = std::mem::take(&mut out.command.prompts);
                        out.command = cmd;
                        out.command.prompts = prompts;
                        out.force = Some(force);
                    }
                    Err(_) => {
                        self.fallback("obstacle_penetration", out);
                        return false;
                    }
                }
                let waiting = status.is_clear();
                self.set_mode(
                    Mode::Adaptation { waiting_confirm: waiting },
                    if waiting { "clear" } else { "blocked" },
                    out,
                );
                false
            }
        }
    }
}
