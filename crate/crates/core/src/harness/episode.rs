//! The fixed-step episode loop: perceive, orchestrate, actuate, user step,
//! world update, log.

use rand::RngExt;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::log::{record_line, LogHeader, LOG_SCHEMA};
use super::metrics::Metrics;
use super::scenario::Scenario;
use crate::adapt::{ControlForce, HandleSignal};
use crate::command::{actuate, Prompt};
use crate::human::{StuckMonitor, StuckSample, UserAction, UserAgent, UserPhase, UserState, UserView};
use crate::orchestrator::{Button, Mode, Orchestrator, RobotEvent, TickInputs, TickOutput, Variant};
use crate::params::{NoiseParams, Params};
use crate::perception::{sense_candidates, Hypothesis};
use crate::rng::{stream, Rng, Stream};
use crate::world::{Kinematics, ObjectId, Pose2, Vec2, WorldState};

/// Grab radius for interactive grasping.
const GRAB_RADIUS: f64 = 0.15;
/// Window start for a perception miss is drawn from the first this many seconds.
const MISS_START_SPAN_S: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    Complete,
    Timeout,
}

impl EndReason {
    pub fn as_str(self) -> &'static str {
        match self {
            EndReason::Complete => "complete",
            EndReason::Timeout => "timeout",
        }
    }
}

/// One interactive action; every field is optional.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumanAct {
    #[serde(rename = "move", default)]
    pub move_by: Option<[f64; 2]>,
    #[serde(default)]
    pub hand: Option<[f64; 3]>,
    #[serde(default)]
    pub grab: Option<bool>,
    #[serde(default)]
    pub push_leash: Option<bool>,
    #[serde(default)]
    pub handle_yaw: Option<f64>,
    #[serde(default)]
    pub button: Option<Button>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanUser {
    pub state: UserState,
    pub push: bool,
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "driver", rename_all = "snake_case")]
pub enum UserDriver {
    Scripted(Box<UserAgent>),
    Human(HumanUser),
}

impl UserDriver {
    pub fn state(&self) -> &UserState {
        match self {
            UserDriver::Scripted(a) => a.state(),
            UserDriver::Human(h) => &h.state,
        }
    }
}

/// What one tick produced, for interactive clients.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepReport {
    pub prompts: Vec<Prompt>,
    pub force: Option<ControlForce>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    name: String,
    source: String,
    sha256: String,
    variant: Variant,
    seed: u64,
    noise: NoiseParams,
    params: Params,
    world: WorldState,
    robot: Pose2,
    orchestrator: Orchestrator,
    user: UserDriver,
    perception_rng: Rng,
    pose_rng: Rng,
    tick: u64,
    pending_buttons: Vec<Button>,
    handle: HandleSignal,
    miss: Option<(u64, u64)>,
    stuck: StuckMonitor,
    ended: Option<EndReason>,
    lines: Vec<String>,
    last_output: TickOutput,
    contacts: [Option<u64>; 2],
    collisions: u32,
    interventions: u32,
}

/// Completed run: log lines and the metrics computed from them.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRun {
    pub lines: Vec<String>,
    pub metrics: Metrics,
    pub end: EndReason,
}

impl EpisodeRun {
    pub fn text(&self) -> String {
        let mut s = self.lines.join("\n");
        s.push('\n');
        s
    }
}

fn gauss(rng: &mut Rng, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    let z: f64 = StandardNormal.sample(rng);
    z * sigma
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

impl Episode {
    pub fn new(scenario: &Scenario, variant: Variant, seed: u64) -> Self {
        Self::build(scenario, variant, seed, false)
    }

    /// Episode whose user is driven by protocol actions instead of the script.
    pub fn interactive(scenario: &Scenario, variant: Variant, seed: u64) -> Self {
        Self::build(scenario, variant, seed, true)
    }

    fn build(scenario: &Scenario, variant: Variant, seed: u64, human: bool) -> Self {
        let file = &scenario.file;
        let params = file.config;
        let config = scenario.config(variant);
        let user = if human {
            UserDriver::Human(HumanUser {
                state: UserState::at(file.start.user),
                push: false,
                yaw: 0.0,
            })
        } else {
            UserDriver::Scripted(Box::new(UserAgent::new(
                file.start.user,
                params.user,
                params.geometry,
                variant,
                params.timing.dt,
                params.timing.seconds_per_prompt,
                seed,
            )))
        };
        let mut perception_rng = stream(seed, Stream::Perception);
        let dt = params.timing.dt;
        let miss = if file.noise.miss_prob > 0.0 && perception_rng.random::<f64>() < file.noise.miss_prob {
            let start = (perception_rng.random::<f64>() * MISS_START_SPAN_S / dt) as u64;
            Some((start, start + (file.noise.miss_window_s / dt).round() as u64))
        } else {
            None
        };
        let header = LogHeader {
            kind: "header".into(),
            schema: LOG_SCHEMA,
            version: env!("CARGO_PKG_VERSION").into(),
            scenario_name: file.name.clone(),
            scenario_sha256: scenario.sha256.clone(),
            seed,
            variant,
            dt,
            seconds_per_prompt: params.timing.seconds_per_prompt,
            scenario: scenario.source.clone(),
        };
        Self {
            name: file.name.clone(),
            source: scenario.source.clone(),
            sha256: scenario.sha256.clone(),
            variant,
            seed,
            noise: file.noise,
            params,
            world: scenario.world.clone(),
            robot: file.start.robot,
            orchestrator: Orchestrator::new(config, scenario.route()),
            user,
            perception_rng,
            pose_rng: stream(seed, Stream::Pose),
            tick: 0,
            pending_buttons: Vec::new(),
            handle: HandleSignal::default(),
            miss,
            stuck: StuckMonitor::new(),
            ended: None,
            lines: vec![serde_json::to_string(&header).unwrap_or_default()],
            last_output: TickOutput::default(),
            contacts: [None, None],
            collisions: 0,
            interventions: 0,
        }
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.params.timing.dt
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn robot(&self) -> Pose2 {
        self.robot
    }

    pub fn orchestrator(&self) -> &Orchestrator {
        &self.orchestrator
    }

    pub fn user(&self) -> &UserState {
        self.user.state()
    }

    pub fn mode(&self) -> Mode {
        self.orchestrator.mode()
    }

    pub fn ended(&self) -> Option<EndReason> {
        self.ended
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn last_output(&self) -> &TickOutput {
        &self.last_output
    }

    pub fn collisions(&self) -> u32 {
        self.collisions
    }

    pub fn interventions(&self) -> u32 {
        self.interventions
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    fn log(&mut self, kind: Option<&str>, payload: Value) {
        self.lines.push(record_line(self.tick, kind, payload));
    }

    fn sensed_pose(&mut self) -> Pose2 {
        let s = self.noise.pose_sigma;
        if s <= 0.0 {
            return self.robot;
        }
        let dx = gauss(&mut self.pose_rng, s);
        let dy = gauss(&mut self.pose_rng, s);
        let dh = gauss(&mut self.pose_rng, s);
        Pose2::new(self.robot.x + dx, self.robot.y + dy, self.robot.heading() + dh)
    }

    fn task_object(&self) -> Option<ObjectId> {
        let o = &self.orchestrator;
        o.route().tasks.get(o.task_index()).map(|t| t.object)
    }

    /// Applies an interactive action as if it were this tick's user output.
    pub fn apply_act(&mut self, act: &HumanAct) {
        let reach = self.params.user.reach;
        let user_radius = self.params.geometry.user_radius;
        let UserDriver::Human(h) = &mut self.user else {
            return;
        };
        if let Some(b) = act.button {
            self.pending_buttons.push(b);
        }
        if let Some(p) = act.push_leash {
            h.push = p;
        }
        if let Some(y) = act.handle_yaw {
            h.yaw = y;
        }
        if let Some([dx, dy]) = act.move_by {
            let to = h.state.pos + Vec2::new(dx, dy);
            let map = match h.state.grasped {
                Some(id) => self.world.occupancy_excluding(id),
                None => self.world.occupancy().clone(),
            };
            if map.nearest_occupied_distance(to).is_ok_and(|d| d >= user_radius) {
                if h.state.grasped.is_none() {
                    h.state.hand[0] += dx;
                    h.state.hand[1] += dy;
                }
                h.state.pos = to;
            }
        }
        if act.grab == Some(false) {
            h.state.grasped = None;
            if h.state.phase == UserPhase::Manipulating {
                h.state.phase = UserPhase::Idle;
            }
        }
        if act.grab == Some(true) && h.state.grasped.is_none() {
            let hand = h.state.hand_planar();
            let near = self.world.objects().iter().find_map(|o| {
                let t = self.world.target_of(o.id).ok()?;
                let p = t.current_point(o);
                (p.distance(hand) <= GRAB_RADIUS).then_some((o.id, p, t.height))
            });
            if let Some((id, p, height)) = near {
                h.state.grasped = Some(id);
                h.state.phase = UserPhase::Manipulating;
                h.state.hand = [p.x, p.y, height];
                if matches!(self.world.object(id).map(|o| &o.kinematics), Ok(Kinematics::Elevator(_))) {
                    let _ = self.world.call_elevator(id);
                }
            }
        }
        if let Some([dx, dy, dh]) = act.hand {
            let old = h.state.hand_planar();
            let mut new = old + Vec2::new(dx, dy);
            let off = new - h.state.pos;
            if off.norm() > reach {
                new = h.state.pos + off.normalized() * reach;
            }
            match h.state.grasped {
                Some(id) => {
                    if let Ok(o) = self.world.object(id) {
                        let delta = match &o.kinematics {
                            Kinematics::Door(d) => {
                                let a0 = (old - d.hinge).angle();
                                let a1 = (new - d.hinge).angle();
                                crate::world::wrap_angle(a1 - a0) * d.swing.signum()
                            }
                            Kinematics::Chair(c) => (new - old).dot(c.pull_axis.normalized()),
                            Kinematics::Elevator(_) => 0.0,
                        };
                        let _ = self.world.advance_object(id, delta);
                    }
                    if let (Ok(o), Ok(t)) = (self.world.object(id), self.world.target_of(id)) {
                        let p = t.current_point(o);
                        h.state.hand = [p.x, p.y, h.state.hand[2] + dh];
                    }
                }
                None => h.state.hand = [new.x, new.y, h.state.hand[2] + dh],
            }
        }
        self.handle = if h.push {
            HandleSignal::pushed(h.yaw)
        } else {
            HandleSignal::neutral(h.yaw)
        };
    }

    /// Runs one tick. Does nothing once the episode has ended.
    pub fn step(&mut self) -> StepReport {
        if self.ended.is_some() {
            return StepReport::default();
        }
        let dt = self.params.timing.dt;
        let time = self.time();

        // perceive
        let sensed = self.sensed_pose();
        let mut candidates = sense_candidates(&self.world, &self.robot, &self.noise, &mut self.perception_rng);
        if self.miss.is_some_and(|(a, b)| (a..b).contains(&self.tick)) {
            candidates.retain(|c| !matches!(c.hypothesis, Hypothesis::Object(_)));
        }
        let u = *self.user.state();
        let inputs = TickInputs {
            robot: sensed,
            user: u.pos,
            hand: u.hand,
            handle: self.handle,
            buttons: std::mem::take(&mut self.pending_buttons),
            candidates,
        };

        // orchestrate
        let out = self.orchestrator.tick(&self.world, &inputs);
        let objects: Vec<Value> = self
            .world
            .objects()
            .iter()
            .map(|o| json!({"id": o.id, "state": o.state()}))
            .collect();
        let mode = out.mode.unwrap_or(self.orchestrator.mode());
        self.log(
            Some("step"),
            json!({
                "time": time,
                "objects": objects,
                "input": to_value(&inputs),
                "mode": mode.label(),
                "command": to_value(&out.command),
            }),
        );
        let mut complete = false;
        for e in &out.events {
            self.log(None, to_value(e));
            match e {
                RobotEvent::ServoDone { task } => {
                    if let Some(p) = self.task_object().and_then(|id| self.world.target_point(id).ok()) {
                        let d = self.robot.position().distance(p);
                        self.log(Some("stop"), json!({"task": task, "distance": d, "pose": self.robot}));
                    }
                }
                RobotEvent::RouteComplete => complete = true,
                _ => {}
            }
        }
        if complete {
            self.log(Some("end"), json!({"reason": "complete"}));
            self.ended = Some(EndReason::Complete);
            let report = StepReport {
                prompts: out.command.prompts.clone(),
                force: out.force,
            };
            self.last_output = out;
            return report;
        }

        // actuate
        let lead = &self.params.lead;
        self.robot = actuate(&self.robot, &out.command, lead.speed_cap, lead.angular_cap, dt);

        // user
        let task_object = self.task_object();
        let user_mode = self.orchestrator.mode();
        let actions = match &mut self.user {
            UserDriver::Scripted(agent) => {
                let view = UserView {
                    robot: self.robot,
                    mode: user_mode,
                    prompts: &out.command.prompts,
                    time: time + dt,
                    task_object,
                };
                let uo = agent.step(&view, &self.world);
                self.handle = uo.handle;
                self.pending_buttons.extend(uo.buttons);
                uo.actions
            }
            UserDriver::Human(_) => Vec::new(),
        };

        // world
        for a in actions {
            let _ = match a {
                UserAction::Advance { object, delta } => self.world.advance_object(object, delta),
                UserAction::CallElevator { object } => self.world.call_elevator(object),
            };
        }
        self.world.step_clock(dt);
        self.tick += 1;

        self.check_contacts();
        self.check_stuck();

        let report = StepReport {
            prompts: out.command.prompts.clone(),
            force: out.force,
        };
        self.last_output = out;
        if self.time() >= self.params.timing.timeout_s - 1e-9 {
            self.log(Some("end"), json!({"reason": "timeout"}));
            self.ended = Some(EndReason::Timeout);
        }
        report
    }

    fn check_contacts(&mut self) {
        let g = self.params.geometry;
        let u = *self.user.state();
        let robot_d = self.world.occupancy().nearest_occupied_distance(self.robot.position());
        let user_map = match u.grasped {
            Some(id) => self.world.occupancy_excluding(id),
            None => self.world.occupancy().clone(),
        };
        let user_d = user_map.nearest_occupied_distance(u.pos);
        for (slot, (agent, d, r)) in [("robot", robot_d, g.robot_radius), ("user", user_d, g.user_radius)]
            .into_iter()
            .enumerate()
        {
            if d.map_or(true, |d| d < r) {
                // contact spans count once
                if self.contacts[slot] != Some(self.tick.wrapping_sub(1)) {
                    self.collisions += 1;
                }
                self.contacts[slot] = Some(self.tick);
                self.log(Some("contact"), json!({"agent": agent}));
            }
        }
    }

    fn check_stuck(&mut self) {
        let UserDriver::Scripted(agent) = &mut self.user else {
            return;
        };
        let fallback = self.orchestrator.mode() == Mode::Fallback;
        let eligible = agent.expects_progress() || fallback;
        let s = agent.state();
        let sample = StuckSample {
            t: self.tick as f64 * self.params.timing.dt,
            pos: s.pos,
            hand: s.hand,
        };
        if !self.stuck.observe(sample, eligible, &self.params.user) {
            return;
        }
        self.interventions += 1;
        let action = if fallback {
            self.pending_buttons.push(Button::Forward);
            "forward"
        } else {
            agent.assist(&self.world);
            "reseed_target"
        };
        self.log(Some("intervention"), json!({"reason": "stuck"}));
        self.log(Some("assist"), json!({"action": action}));
    }

    /// Runs until the route completes or the timeout.
    pub fn run_to_end(&mut self) -> EndReason {
        loop {
            if let Some(r) = self.ended {
                return r;
            }
            self.step();
        }
    }

    pub fn text(&self) -> String {
        let mut s = self.lines.join("\n");
        s.push('\n');
        s
    }
}

/// Runs a scripted episode to completion.
pub fn run_episode(scenario: &Scenario, variant: Variant, seed: u64) -> EpisodeRun {
    let mut ep = Episode::new(scenario, variant, seed);
    let end = ep.run_to_end();
    let log = super::log::EpisodeLog::parse(&ep.text()).expect("episode writes well-formed logs");
    let metrics = super::metrics::compute_metrics(&log).expect("episode logs carry every marker");
    EpisodeRun {
        lines: ep.lines,
        metrics,
        end,
    }
}
