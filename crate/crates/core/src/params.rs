//! Every tunable number, with its default. Scenario files override any subset.

use serde::{Deserialize, Serialize};

use crate::world::ObjectKind;

/// Disc footprints and the leash/arm construction used for reachability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotGeometry {
    pub robot_radius: f64,
    pub user_radius: f64,
    /// Distance from the robot centre to its head along the heading.
    pub head_offset: f64,
    /// User stand point: lateral offset from the body axis.
    pub stand_lateral: f64,
    /// User stand point: distance behind the head.
    pub stand_back: f64,
    pub reach: f64,
    pub leash_slack: f64,
}

impl Default for RobotGeometry {
    fn default() -> Self {
        Self {
            robot_radius: 0.35,
            user_radius: 0.25,
            head_offset: 0.35,
            stand_lateral: 0.5,
            stand_back: 0.3,
            reach: 0.75,
            leash_slack: 0.4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlacementWeights {
    pub w_c: f64,
    pub w_d: f64,
    pub w_m: f64,
}

impl Default for PlacementWeights {
    fn default() -> Self {
        Self {
            w_c: 2.0,
            w_d: 1.0,
            w_m: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlacementParams {
    pub candidate_radius: f64,
    pub c_safe: f64,
    /// Preferred robot-to-target band, shared with the servo.
    pub band_min: f64,
    pub band_max: f64,
    pub door_end_offset: f64,
}

impl Default for PlacementParams {
    fn default() -> Self {
        Self {
            candidate_radius: 2.0,
            c_safe: 0.3,
            band_min: 0.3,
            band_max: 0.8,
            door_end_offset: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LeadParams {
    pub inflate: f64,
    pub speed_cap: f64,
    pub angular_cap: f64,
    pub lookahead: f64,
    pub completion_tol: f64,
    pub eps_ang: f64,
    pub approach_speed: f64,
    pub servo_lost_limit: u32,
    pub height_rounding: f64,
}

impl Default for LeadParams {
    fn default() -> Self {
        Self {
            inflate: 0.05,
            speed_cap: 0.6,
            angular_cap: 0.8,
            lookahead: 0.4,
            completion_tol: 0.15,
            eps_ang: 0.05,
            approach_speed: 0.3,
            servo_lost_limit: 10,
            height_rounding: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApfParams {
    pub k_att: f64,
    pub alpha: f64,
    pub eta: f64,
    pub d0: f64,
    pub v_max: f64,
    pub beta: f64,
    pub n_beams: usize,
    /// Width of the sectors used to cluster beam hits, in degrees.
    pub sector_deg: f64,
}

impl Default for ApfParams {
    fn default() -> Self {
        Self {
            k_att: 1.0,
            alpha: 0.8,
            eta: 0.15,
            d0: 1.0,
            v_max: 0.5,
            beta: 0.6,
            n_beams: 120,
            sector_deg: 30.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClearanceGates {
    pub door_width: f64,
    pub elevator_fraction: f64,
    pub chair_pull: f64,
}

impl Default for ClearanceGates {
    fn default() -> Self {
        Self {
            door_width: 0.7,
            elevator_fraction: 0.95,
            chair_pull: 0.4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseParams {
    pub sigma_pos: f64,
    pub sigma_dim: f64,
    pub sigma_h: f64,
    pub lambda_fp: f64,
    /// True-object confidence is drawn from N(1 - conf_drop, conf_sigma).
    pub conf_drop: f64,
    pub conf_sigma: f64,
    /// Per-episode probability that the detector misses the main object for
    /// a contiguous window.
    pub miss_prob: f64,
    pub miss_window_s: f64,
    pub pose_sigma: f64,
    pub sensing_range: f64,
}

impl NoiseParams {
    pub fn zero() -> Self {
        Self {
            sigma_pos: 0.0,
            sigma_dim: 0.0,
            sigma_h: 0.0,
            lambda_fp: 0.0,
            conf_drop: 0.0,
            conf_sigma: 0.0,
            miss_prob: 0.0,
            miss_window_s: 0.0,
            pose_sigma: 0.0,
            sensing_range: 6.0,
        }
    }
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            sigma_pos: 0.01,
            sigma_dim: 0.02,
            sigma_h: 0.01,
            lambda_fp: 0.5,
            conf_drop: 0.15,
            conf_sigma: 0.1,
            miss_prob: 0.0,
            miss_window_s: 0.0,
            pose_sigma: 0.0,
            sensing_range: 6.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    pub fn is_valid(&self) -> bool {
        self.min <= self.max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KindPriors {
    pub width: Range,
    pub height: Range,
    pub target_height: Range,
}

impl KindPriors {
    pub fn accepts(&self, width: f64, height: f64, target_height: f64) -> bool {
        self.width.contains(width)
            && self.height.contains(height)
            && self.target_height.contains(target_height)
    }

    pub fn is_valid(&self) -> bool {
        self.width.is_valid() && self.height.is_valid() && self.target_height.is_valid()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometricPriors {
    pub door: KindPriors,
    pub elevator: KindPriors,
    pub chair: KindPriors,
}

impl GeometricPriors {
    pub fn for_kind(&self, kind: ObjectKind) -> &KindPriors {
        match kind {
            ObjectKind::Door => &self.door,
            ObjectKind::Elevator => &self.elevator,
            ObjectKind::Chair => &self.chair,
        }
    }
}

impl Default for GeometricPriors {
    fn default() -> Self {
        Self {
            door: KindPriors {
                width: Range::new(0.7, 1.1),
                height: Range::new(1.8, 2.4),
                target_height: Range::new(0.8, 1.3),
            },
            elevator: KindPriors {
                width: Range::new(0.8, 1.6),
                height: Range::new(1.9, 2.5),
                target_height: Range::new(0.9, 1.4),
            },
            chair: KindPriors {
                width: Range::new(0.35, 0.7),
                height: Range::new(0.7, 1.1),
                target_height: Range::new(0.6, 1.0),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UserParams {
    pub walk_speed: f64,
    pub hand_speed: f64,
    pub reach: f64,
    /// Seconds of hesitation per metre of pointing error.
    pub search_noise_gain: f64,
    pub base_search_time: f64,
    pub confirm_delay: f64,
    pub door_rate: f64,
    pub chair_rate: f64,
    /// Pointing error per unit of misalignment·range and excess range.
    pub e_gain: f64,
    pub sigma_s: f64,
    pub spiral_pitch: f64,
    /// Planar distance at which a searching hand recognises the target by touch.
    pub touch_radius: f64,
    pub door_goal_angle: f64,
    /// Distance kept from the handle while manipulating.
    pub manip_standoff: f64,
    pub chair_standoff: f64,
    pub stuck_window_s: f64,
    pub stuck_excursion: f64,
}

impl Default for UserParams {
    fn default() -> Self {
        Self {
            walk_speed: 0.8,
            hand_speed: 0.5,
            reach: 0.75,
            search_noise_gain: 2.0,
            base_search_time: 0.5,
            confirm_delay: 1.0,
            door_rate: 0.9,
            chair_rate: 0.3,
            e_gain: 0.5,
            sigma_s: 0.03,
            spiral_pitch: 0.05,
            touch_radius: 0.06,
            door_goal_angle: 1.45,
            manip_standoff: 0.5,
            chair_standoff: 0.45,
            stuck_window_s: 5.0,
            stuck_excursion: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingParams {
    pub dt: f64,
    pub timeout_s: f64,
    pub seconds_per_prompt: f64,
    /// Consecutive empty filtered detections before fallback.
    pub detection_fail_ticks: u32,
    pub nonadaptive_stop_distance: f64,
}

impl Default for TimingParams {
    fn default() -> Self {
        Self {
            dt: 0.1,
            timeout_s: 600.0,
            seconds_per_prompt: 2.0,
            detection_fail_ticks: 50,
            nonadaptive_stop_distance: 1.2,
        }
    }
}

/// The complete parameter table.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub geometry: RobotGeometry,
    pub weights: PlacementWeights,
    pub placement: PlacementParams,
    pub lead: LeadParams,
    pub apf: ApfParams,
    pub gates: ClearanceGates,
    pub priors: GeometricPriors,
    pub user: UserParams,
    pub timing: TimingParams,
}

impl Params {
    /// Human-readable problems with the table; empty when valid.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |ok: bool, field: &str, msg: &str| {
            if !ok {
                out.push(format!("config.{field}: {msg}"));
            }
        };
        let g = &self.geometry;
        check(g.robot_radius > 0.0, "geometry.robot_radius", "must be > 0");
        check(g.user_radius > 0.0, "geometry.user_radius", "must be > 0");
        check(g.reach > 0.0, "geometry.reach", "must be > 0");
        let w = &self.weights;
        check(w.w_c >= 0.0 && w.w_d >= 0.0 && w.w_m >= 0.0, "weights", "must be >= 0");
        let p = &self.placement;
        check(p.band_min <= p.band_max, "placement.band_min", "must be <= band_max");
        check(p.c_safe > 0.0, "placement.c_safe", "must be > 0");
        let a = &self.apf;
        check(a.d0 > 0.0, "apf.d0", "must be > 0");
        check(a.v_max > 0.0, "apf.v_max", "must be > 0");
        check((0.0..=1.0).contains(&a.beta), "apf.beta", "must lie in [0, 1]");
        check(a.n_beams >= 1, "apf.n_beams", "must be >= 1");
        check(a.sector_deg > 0.0, "apf.sector_deg", "must be > 0");
        let l = &self.lead;
        check(l.speed_cap > 0.0 && l.angular_cap > 0.0, "lead", "speed caps must be > 0");
        check(l.height_rounding > 0.0, "lead.height_rounding", "must be > 0");
        for (name, kp) in [
            ("door", self.priors.door),
            ("elevator", self.priors.elevator),
            ("chair", self.priors.chair),
        ] {
            check(kp.is_valid(), &format!("priors.{name}"), "range min must be <= max");
        }
        let u = &self.user;
        for (name, v) in [
            ("walk_speed", u.walk_speed),
            ("hand_speed", u.hand_speed),
            ("reach", u.reach),
            ("search_noise_gain", u.search_noise_gain),
            ("base_search_time", u.base_search_time),
            ("confirm_delay", u.confirm_delay),
            ("door_rate", u.door_rate),
            ("chair_rate", u.chair_rate),
        ] {
            check(v > 0.0, &format!("user.{name}"), "must be > 0");
        }
        let t = &self.timing;
        check(t.dt > 0.0, "timing.dt", "must be > 0");
        check(t.timeout_s > 0.0, "timing.timeout_s", "must be > 0");
        check(t.seconds_per_prompt >= 0.0, "timing.seconds_per_prompt", "must be >= 0");
        out
    }
}
