//! Scripted user agent.
//!
//! The agent follows the leash, reacts to voice prompts after they finish
//! playing, searches for the target around a believed point and manipulates
//! the grasped object. Every behaviour is geometric, so timing differences
//! between variants come from where the robot stops.

use std::collections::VecDeque;
use std::f64::consts::TAU;

use rand::RngExt;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::adapt::{clear_prompt, HandleSignal};
use crate::command::Prompt;
use crate::lead::plan_on_grid;
use crate::orchestrator::{Button, LeadPhase, Mode, Variant, ASSISTANCE_NEEDED};
use crate::params::{RobotGeometry, UserParams};
use crate::perception::TargetEstimate;
use crate::placement::{select_user_side, stand_point, Side};
use crate::rng::{stream, Rng, Stream};
use crate::world::{GridMap, ObjectId, ObjectKind, Pose2, Vec2, WorldState};

/// Height of the hand while it holds the leash.
pub const REST_HEIGHT: f64 = 0.9;
const ARRIVE_TOL: f64 = 0.02;
/// Spiral radius at which the search restarts from the believed point.
const SPIRAL_LIMIT: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserPhase {
    Following,
    Searching,
    Manipulating,
    Confirming,
    Idle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserState {
    pub pos: Vec2,
    /// `[x, y, height]`.
    pub hand: [f64; 3],
    pub side: Option<Side>,
    pub grasped: Option<ObjectId>,
    pub phase: UserPhase,
}

impl UserState {
    pub fn at(pos: Vec2) -> Self {
        Self {
            pos,
            hand: [pos.x, pos.y, REST_HEIGHT],
            side: None,
            grasped: None,
            phase: UserPhase::Following,
        }
    }

    pub fn hand_planar(&self) -> Vec2 {
        Vec2::new(self.hand[0], self.hand[1])
    }
}

/// World changes requested by the user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum UserAction {
    Advance { object: ObjectId, delta: f64 },
    CallElevator { object: ObjectId },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct UserOutput {
    pub handle: HandleSignal,
    pub buttons: Vec<Button>,
    pub actions: Vec<UserAction>,
}

/// What the agent perceives each tick.
#[derive(Debug, Clone, Copy)]
pub struct UserView<'a> {
    pub robot: Pose2,
    pub mode: Mode,
    pub prompts: &'a [Prompt],
    pub time: f64,
    /// Object of the active task, if any.
    pub task_object: Option<ObjectId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
enum Heard {
    Side(Side),
    Height,
    Clear,
    Blocked,
}

fn classify(text: &str) -> Option<Heard> {
    if let Some(rest) = text.strip_prefix("please stand on the ") {
        return Some(Heard::Side(if rest.starts_with("left") {
            Side::Left
        } else {
            Side::Right
        }));
    }
    if text.starts_with("target at height") {
        return Some(Heard::Height);
    }
    if text == ASSISTANCE_NEEDED {
        return None;
    }
    if [ObjectKind::Door, ObjectKind::Elevator, ObjectKind::Chair]
        .iter()
        .any(|k| clear_prompt(*k) == text)
    {
        return Some(Heard::Clear);
    }
    Some(Heard::Blocked)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Search {
    object: ObjectId,
    /// Believed target on the surface.
    believed: Vec2,
    believed_h: f64,
    /// Surface tangent used for the spiral's lateral axis.
    tangent: Vec2,
    hesitate_until: f64,
    at_believed: bool,
    theta: f64,
    touched: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Manipulation {
    object: ObjectId,
    goal: f64,
    pulls_toward_user: bool,
    called: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserAgent {
    state: UserState,
    params: UserParams,
    geometry: RobotGeometry,
    variant: Variant,
    dt: f64,
    seconds_per_prompt: f64,
    listening_until: f64,
    pending: VecDeque<(f64, Heard)>,
    waypoints: VecDeque<Vec2>,
    search: Option<Search>,
    manipulation: Option<Manipulation>,
    confirm_at: Option<f64>,
    /// Set after confirming a doorway or cabin so the handle is pushed while following in.
    advancing: bool,
    path: Vec<Vec2>,
    path_goal: Option<Vec2>,
    side_guess: Option<Side>,
    rng: Rng,
    side_rng: Rng,
}

fn gauss(rng: &mut Rng, sigma: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    z * sigma
}

/// Pointing error magnitude for a robot pose relative to the true target.
pub fn pointing_error(robot: &Pose2, target: Vec2, params: &UserParams, rng: &mut Rng) -> f64 {
    let misalignment = robot.bearing_to(target).abs();
    let range = robot.position().distance(target);
    let base = params.e_gain * (misalignment * range + (range - 0.8).max(0.0));
    (base + gauss(rng, params.sigma_s)).max(0.0)
}

fn free_for(map: &GridMap, p: Vec2, radius: f64) -> f64 {
    map.nearest_occupied_distance(p).map(|d| d - radius).unwrap_or(f64::NEG_INFINITY)
}

impl UserAgent {
    pub fn new(
        start: Vec2,
        params: UserParams,
        geometry: RobotGeometry,
        variant: Variant,
        dt: f64,
        seconds_per_prompt: f64,
        seed: u64,
    ) -> Self {
        Self {
            state: UserState::at(start),
            params,
            geometry,
            variant,
            dt,
            seconds_per_prompt,
            listening_until: 0.0,
            pending: VecDeque::new(),
            waypoints: VecDeque::new(),
            search: None,
            manipulation: None,
            confirm_at: None,
            advancing: false,
            path: Vec::new(),
            path_goal: None,
            side_guess: None,
            rng: stream(seed, Stream::User),
            side_rng: stream(seed, Stream::Side),
        }
    }

    pub fn state(&self) -> &UserState {
        &self.state
    }

    /// Side picked without a side prompt, if any.
    pub fn side_guess(&self) -> Option<Side> {
        self.side_guess
    }

    pub fn is_searching(&self) -> bool {
        self.state.phase == UserPhase::Searching
    }

    /// Whether the agent is actively trying to make progress, so staying
    /// still means it is stuck.
    pub fn expects_progress(&self) -> bool {
        match self.state.phase {
            UserPhase::Searching => self.search.is_some() && self.waypoints.is_empty(),
            UserPhase::Manipulating => self.manipulation.is_some_and(|m| !m.called),
            _ => false,
        }
    }

    /// Help from a bystander: the hand is guided to the true target.
    pub fn assist(&mut self, world: &WorldState) {
        if let Some(s) = self.search.as_mut() {
            if let (Ok(t), Ok(o)) = (world.target_of(s.object), world.object(s.object)) {
                s.believed = t.current_point(o);
                s.believed_h = t.height;
                s.at_believed = false;
                s.theta = 0.0;
                s.hesitate_until = f64::NEG_INFINITY;
            }
        }
    }

    fn side(&self) -> Side {
        self.state.side.unwrap_or(Side::Right)
    }

    fn behind(&self, robot: &Pose2) -> Vec2 {
        let back = self.geometry.robot_radius + self.geometry.user_radius + 0.15;
        robot.position() - robot.forward() * back
    }

    /// Queue a walk around the back of the robot to the `to` side.
    fn cross_to(&mut self, robot: &Pose2, to: Side) {
        if to != self.side() {
            self.waypoints.push_back(self.behind(robot));
        }
        self.waypoints.push_back(stand_point(robot, to, &self.geometry));
        self.state.side = Some(to);
    }

    fn hear(&mut self, view: &UserView) {
        for p in view.prompts {
            let Some(heard) = classify(&p.text) else {
                continue;
            };
            let start = self.listening_until.max(view.time);
            let end = start + self.seconds_per_prompt;
            self.listening_until = end;
            match heard {
                Heard::Clear if self.state.phase == UserPhase::Manipulating => {
                    // stop pulling as soon as the robot reports clear
                    self.release();
                    self.state.phase = UserPhase::Confirming;
                    self.confirm_at = Some(end + self.params.confirm_delay);
                }
                _ => self.pending.push_back((end, heard)),
            }
        }
    }

    fn release(&mut self) {
        self.state.grasped = None;
        self.manipulation = None;
    }

    /// Starts searching around `target.center + tangent·e_t` at height
    /// `target.height + e_h`.
    pub fn begin_search(
        &mut self,
        object: ObjectId,
        target: &TargetEstimate,
        error: (f64, f64),
        hesitation: f64,
        now: f64,
    ) {
        let tangent = Vec2::from_angle(target.normal).perp();
        self.search = Some(Search {
            object,
            believed: target.center + tangent * error.0,
            believed_h: target.height + error.1,
            tangent,
            hesitate_until: now + hesitation,
            at_believed: false,
            theta: 0.0,
            touched: false,
        });
        self.state.phase = UserPhase::Searching;
    }

    fn start_search(&mut self, view: &UserView, world: &WorldState) {
        let Some(id) = view.task_object else {
            return;
        };
        let (Ok(t), Ok(o)) = (world.target_of(id), world.object(id)) else {
            return;
        };
        let truth = TargetEstimate {
            center: t.current_point(o),
            height: t.height,
            normal: t.current_normal(o),
        };
        let m = pointing_error(&view.robot, truth.center, &self.params, &mut self.rng);
        let phi = self.rng.random_range(0.0..TAU);
        if self.variant == Variant::NonAdaptive {
            let guess = if self.side_rng.random::<bool>() { Side::Left } else { Side::Right };
            let correct = select_user_side(&view.robot, &truth, o);
            self.side_guess = Some(guess);
            self.cross_to(&view.robot, guess);
            if guess != correct {
                self.cross_to(&view.robot, correct);
            }
        }
        let hesitation = self.params.base_search_time + self.params.search_noise_gain * m;
        self.begin_search(id, &truth, (m * phi.cos(), m * phi.sin()), hesitation, view.time);
    }

    fn process_pending(&mut self, view: &UserView, world: &WorldState) {
        while let Some(&(ready, heard)) = self.pending.front() {
            if ready > view.time + 1e-9 {
                break;
            }
            self.pending.pop_front();
            match heard {
                Heard::Side(s) => {
                    if self.variant == Variant::Full {
                        self.cross_to(&view.robot, s);
                    }
                }
                Heard::Height => {
                    if view.mode == Mode::lead(LeadPhase::Announced)
                        && self.state.phase == UserPhase::Following
                    {
                        self.start_search(view, world);
                    }
                }
                Heard::Blocked => {
                    if let Some(m) = self.manipulation.as_mut() {
                        if let Ok(o) = world.object(m.object) {
                            m.goal = o.max_state();
                        }
                    }
                }
                Heard::Clear => {}
            }
        }
    }

    fn user_map(&self, world: &WorldState) -> GridMap {
        match self.state.grasped {
            Some(id) => world.occupancy_excluding(id),
            None => world.occupancy().clone(),
        }
    }

    /// Steps toward `goal` by at most `max_step`, avoiding occupied space.
    fn walk(&mut self, goal: Vec2, max_step: f64, map: &GridMap) {
        let pos = self.state.pos;
        let r = self.geometry.user_radius;
        let d = pos.distance(goal);
        if d < 1e-9 {
            return;
        }
        let direct = pos + (goal - pos).normalized() * d.min(max_step);
        let here = free_for(map, pos, r);
        let ok = |p: Vec2| {
            let f = free_for(map, p, r);
            f >= 0.0 || f >= here
        };
        if ok(direct) && ok(pos.lerp(direct, 0.5)) {
            self.state.pos = direct;
            self.path.clear();
            return;
        }
        let replan = self.path.is_empty() || self.path_goal.is_none_or(|g| g.distance(goal) > 0.2);
        if replan {
            self.path_goal = Some(goal);
            self.path = plan_on_grid(
                map,
                &Pose2::from_position(pos, 0.0),
                &Pose2::from_position(goal, 0.0),
                r,
                0.0,
            )
            .map(|p| p.waypoints.iter().skip(1).map(Pose2::position).collect())
            .unwrap_or_default();
        }
        let mut budget = max_step;
        while budget > 1e-12 {
            let Some(&next) = self.path.first() else {
                break;
            };
            let seg = self.state.pos.distance(next);
            if seg <= budget {
                self.state.pos = next;
                budget -= seg;
                self.path.remove(0);
            } else {
                self.state.pos = self.state.pos + (next - self.state.pos).normalized() * budget;
                budget = 0.0;
            }
        }
    }

    /// Stand point beside the robot, or a point behind it when that is blocked.
    fn follow_point(&self, robot: &Pose2, map: &GridMap) -> Vec2 {
        let r = self.geometry.user_radius;
        let beside = stand_point(robot, self.side(), &self.geometry);
        if free_for(map, beside, r) >= 0.0 {
            return beside;
        }
        let back = self.geometry.robot_radius + r + 0.05;
        let behind = robot.position() - robot.forward() * back;
        if free_for(map, behind, r) >= 0.0 {
            behind
        } else {
            beside
        }
    }

    fn rest_hand(&mut self) {
        self.state.hand = [self.state.pos.x, self.state.pos.y, REST_HEIGHT];
    }

    /// Moves the hand toward `to` (planar + height) by at most one tick of
    /// hand travel; returns true on arrival.
    fn move_hand(&mut self, to: Vec2, to_h: f64) -> bool {
        let [x, y, h] = self.state.hand;
        let (dx, dy, dh) = (to.x - x, to.y - y, to_h - h);
        let dist = (dx * dx + dy * dy + dh * dh).sqrt();
        let step = self.params.hand_speed * self.dt;
        if dist <= step {
            self.state.hand = [to.x, to.y, to_h];
            return true;
        }
        let k = step / dist;
        self.state.hand = [x + dx * k, y + dy * k, h + dh * k];
        false
    }

    /// Keeps the hand within reach by walking toward it, then clamping.
    fn keep_reach(&mut self, aim: Vec2, map: &GridMap) {
        let reach = self.params.reach;
        if self.state.pos.distance(aim) > reach - 0.05 {
            let stance = aim + (self.state.pos - aim).normalized() * (reach - 0.05);
            self.walk(stance, self.params.walk_speed * self.dt, map);
        }
        let hp = self.state.hand_planar();
        let off = hp - self.state.pos;
        if off.norm() > reach {
            let c = self.state.pos + off.normalized() * reach;
            self.state.hand[0] = c.x;
            self.state.hand[1] = c.y;
        }
    }

    fn search_step(&mut self, view: &UserView, world: &WorldState, map: &GridMap) {
        let Some(mut s) = self.search else {
            return;
        };
        let (Ok(t), Ok(o)) = (world.target_of(s.object), world.object(s.object)) else {
            return;
        };
        let truth = t.current_point(o);
        if s.touched {
            self.state.hand = [truth.x, truth.y, t.height];
            self.search = Some(s);
            return;
        }
        if view.time + 1e-9 < s.hesitate_until {
            return;
        }
        let radius = self.params.touch_radius;
        let target_h = t.height;
        let touch = move |hand: [f64; 3]| {
            Vec2::new(hand[0], hand[1]).distance(truth) <= radius
                && (hand[2] - target_h).abs() <= radius
        };
        let step = self.params.hand_speed * self.dt;
        if !s.at_believed {
            self.keep_reach(s.believed, map);
            s.at_believed = self.move_hand(s.believed, s.believed_h);
            if s.at_believed && touch(self.state.hand) {
                s.touched = true;
            }
        } else {
            let pitch = self.params.spiral_pitch / TAU;
            let r = pitch * s.theta;
            s.theta += step / (r * r + pitch * pitch).sqrt();
            let mut r = pitch * s.theta;
            if r > SPIRAL_LIMIT {
                s.theta = 0.0;
                r = 0.0;
            }
            let aim = s.believed + s.tangent * (r * s.theta.cos());
            let aim_h = s.believed_h + r * s.theta.sin();
            self.state.hand = [aim.x, aim.y, aim_h];
            self.keep_reach(aim, map);
            if touch(self.state.hand) {
                s.touched = true;
            }
        }
        if s.touched {
            self.state.hand = [truth.x, truth.y, t.height];
        }
        self.search = Some(s);
    }

    fn begin_manipulation(&mut self, world: &WorldState, id: ObjectId) {
        let Ok(o) = world.object(id) else {
            return;
        };
        let Ok(t) = world.target_of(id) else {
            return;
        };
        let goal = match o.kind() {
            ObjectKind::Door => self.params.door_goal_angle.min(o.max_state()),
            _ => o.max_state(),
        };
        // a pull door's handle moves along its own outward normal
        let s = o.state();
        let ds = 1e-3_f64.min(o.max_state() - s).max(0.0);
        let p0 = t.current_point(o);
        let p1 = t.current_point(&o.at_state(s + ds.max(1e-6)));
        let toward = (p1 - p0).dot(Vec2::from_angle(t.current_normal(o))) >= 0.0;
        self.manipulation = Some(Manipulation {
            object: id,
            goal,
            pulls_toward_user: toward,
            called: false,
        });
        self.state.grasped = Some(id);
        self.state.phase = UserPhase::Manipulating;
        self.search = None;
    }

    fn manipulate_step(&mut self, world: &WorldState, out: &mut UserOutput) {
        let Some(mut m) = self.manipulation else {
            return;
        };
        let (Ok(o), Ok(t)) = (world.object(m.object), world.target_of(m.object)) else {
            return;
        };
        let mut next = o.state();
        match o.kind() {
            ObjectKind::Elevator => {
                if !m.called {
                    out.actions.push(UserAction::CallElevator { object: m.object });
                    m.called = true;
                }
            }
            kind => {
                let rate = if kind == ObjectKind::Door {
                    self.params.door_rate
                } else {
                    self.params.chair_rate
                };
                let delta = (rate * self.dt).min(m.goal - next).max(0.0);
                if delta > 0.0 {
                    out.actions.push(UserAction::Advance {
                        object: m.object,
                        delta,
                    });
                    next += delta;
                } else {
                    m.called = true;
                }
            }
        }
        let moved = o.at_state(next);
        let hand = t.current_point(&moved);
        self.state.hand = [hand.x, hand.y, t.height];
        let standoff = match o.kind() {
            ObjectKind::Chair => self.params.chair_standoff,
            _ => self.params.manip_standoff,
        };
        let stance = hand + Vec2::from_angle(t.current_normal(&moved)) * standoff;
        let step = self.params.walk_speed * self.dt;
        let d = self.state.pos.distance(stance);
        self.state.pos = if d <= step {
            stance
        } else {
            self.state.pos + (stance - self.state.pos).normalized() * step
        };
        // the hand stays on the handle, so the body is dragged along
        let off = self.state.pos - hand;
        if off.norm() > self.params.reach {
            self.state.pos = hand + off.normalized() * self.params.reach;
        }
        if o.kind() == ObjectKind::Door && !m.pulls_toward_user {
            out.handle = HandleSignal::pushed(0.0);
        }
        self.manipulation = Some(m);
    }

    /// Advances the agent one tick.
    pub fn step(&mut self, view: &UserView, world: &WorldState) -> UserOutput {
        let mut out = UserOutput::default();
        self.hear(view);
        self.process_pending(view, world);

        // the robot resuming lead ends any interaction
        if view.mode.is_lead()
            && matches!(
                self.state.phase,
                UserPhase::Manipulating | UserPhase::Confirming | UserPhase::Idle
            )
        {
            self.release();
            self.confirm_at = None;
            self.state.phase = UserPhase::Following;
        }
        if matches!(view.mode, Mode::Lead { phase: LeadPhase::Servoing | LeadPhase::Announced }) {
            self.advancing = false;
        }
        if view.mode.is_adaptation() && self.state.phase == UserPhase::Searching {
            let id = self.search.map(|s| s.object);
            if let Some(id) = id {
                self.begin_manipulation(world, id);
            }
        }

        let map = self.user_map(world);
        let step = self.params.walk_speed * self.dt;
        match self.state.phase {
            UserPhase::Following => {
                if let Some(&w) = self.waypoints.front() {
                    self.walk(w, step, &map);
                    if self.state.pos.distance(w) <= ARRIVE_TOL {
                        self.waypoints.pop_front();
                    }
                } else {
                    let goal = self.follow_point(&view.robot, &map);
                    self.walk(goal, step, &map);
                }
                self.rest_hand();
                if self.advancing && view.mode.is_lead() {
                    out.handle = HandleSignal::pushed(0.0);
                }
            }
            UserPhase::Searching => {
                if let Some(&w) = self.waypoints.front() {
                    self.walk(w, step, &map);
                    if self.state.pos.distance(w) <= ARRIVE_TOL {
                        self.waypoints.pop_front();
                    }
                    self.rest_hand();
                    // hesitation starts once in position
                    if let Some(s) = self.search.as_mut() {
                        s.hesitate_until = s.hesitate_until.max(view.time);
                    }
                } else {
                    self.search_step(view, world, &map);
                }
            }
            UserPhase::Manipulating => self.manipulate_step(world, &mut out),
            UserPhase::Confirming => {
                if let Some(at) = self.confirm_at {
                    if view.time + 1e-9 >= at {
                        out.buttons.push(Button::Forward);
                        self.confirm_at = Some(at + self.params.confirm_delay);
                        self.advancing = true;
                    }
                }
            }
            UserPhase::Idle => {}
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StuckSample {
    pub t: f64,
    pub pos: Vec2,
    pub hand: [f64; 3],
}

fn excursion(a: &StuckSample, b: &StuckSample) -> f64 {
    let hand = ((a.hand[0] - b.hand[0]).powi(2)
        + (a.hand[1] - b.hand[1]).powi(2)
        + (a.hand[2] - b.hand[2]).powi(2))
    .sqrt();
    a.pos.distance(b.pos).max(hand)
}

/// True iff the history covers at least `window_s` and, over the trailing
/// `window_s`, neither position nor hand strayed more than `max_excursion`
/// from where they were at the start of that window.
pub fn stuck_detector(history: &[StuckSample], window_s: f64, max_excursion: f64) -> bool {
    let (Some(first), Some(last)) = (history.first(), history.last()) else {
        return false;
    };
    if last.t - first.t < window_s - 1e-9 {
        return false;
    }
    let from = last.t - window_s - 1e-9;
    let start = history.iter().rposition(|s| s.t <= from).unwrap_or(0);
    let anchor = &history[start];
    history[start..]
        .iter()
        .all(|s| excursion(s, anchor) <= max_excursion)
}

/// Rolling history feeding [`stuck_detector`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StuckMonitor {
    history: VecDeque<StuckSample>,
}

impl StuckMonitor {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a sample. Samples where no progress is expected reset the
    /// history. Returns true once the agent has been stuck for the window;
    /// the history is cleared so each firing needs a fresh window.
    pub fn observe(&mut self, sample: StuckSample, eligible: bool, params: &UserParams) -> bool {
        if !eligible {
            self.history.clear();
            return false;
        }
        self.history.push_back(sample);
        while self
            .history
            .get(1)
            .is_some_and(|s| s.t <= sample.t - params.stuck_window_s - 1e-9)
        {
            self.history.pop_front();
        }
        let stuck = stuck_detector(
            self.history.make_contiguous(),
            params.stuck_window_s,
            params.stuck_excursion,
        );
        if stuck {
            self.history.clear();
        }
        stuck
    }
}
