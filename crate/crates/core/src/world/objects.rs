//! Articulated main objects (doors, elevators, chairs) and their interaction targets.

use std::f64::consts::FRAC_PI_2;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::geom::{convex_hull, wrap_angle, Polygon, Vec2};

/// Door sweep discretisation (5°).
pub const DOOR_SWEEP_STEP: f64 = 5.0 * std::f64::consts::PI / 180.0;
/// Chair sweep discretisation in metres.
pub const CHAIR_SWEEP_STEP: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectId(pub u32);

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Door,
    Elevator,
    Chair,
}

impl ObjectKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ObjectKind::Door => "door",
            ObjectKind::Elevator => "elevator",
            ObjectKind::Chair => "chair",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Handle,
    CallButton,
    SeatBack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoorKinematics {
    pub hinge: Vec2,
    /// Direction from the hinge to the free edge when closed.
    pub closed_angle: f64,
    pub leaf_length: f64,
    pub thickness: f64,
    /// +1 swings counter-clockwise, -1 clockwise.
    pub swing: f64,
    pub max_angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElevatorKinematics {
    /// Door gap endpoints on the hall-side wall line.
    pub gap: [Vec2; 2],
    /// Direction pointing from the gap into the hall.
    pub hall_normal: f64,
    pub panel_thickness: f64,
    /// Cabin floor, used for the end goal.
    pub cabin: Polygon,
    pub open_delay: f64,
    pub open_duration: f64,
    pub threshold_depth: f64,
    /// Simulation time at which the call button was pressed.
    #[serde(default)]
    pub called_at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChairKinematics {
    /// Seat centre when pushed in.
    pub center: Vec2,
    /// Unit pull-out direction.
    pub pull_axis: Vec2,
    /// Extent along the pull axis.
    pub depth: f64,
    /// Extent across the pull axis.
    pub width: f64,
    pub max_pull: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kinematics {
    Door(DoorKinematics),
    Elevator(ElevatorKinematics),
    Chair(ChairKinematics),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MainObject {
    pub id: ObjectId,
    /// Physical width and height, as seen by the detector.
    pub width: f64,
    pub height: f64,
    state: f64,
    pub kinematics: Kinematics,
}

impl MainObject {
    pub fn new(id: ObjectId, width: f64, height: f64, kinematics: Kinematics) -> Self {
        Self {
            id,
            width,
            height,
            state: 0.0,
            kinematics,
        }
    }

    pub fn kind(&self) -> ObjectKind {
        match self.kinematics {
            Kinematics::Door(_) => ObjectKind::Door,
            Kinematics::Elevator(_) => ObjectKind::Elevator,
            Kinematics::Chair(_) => ObjectKind::Chair,
        }
    }

    pub fn state(&self) -> f64 {
        self.state
    }

    /// Closed interval of admissible states.
    pub fn state_range(&self) -> (f64, f64) {
        match &self.kinematics {
            Kinematics::Door(d) => (0.0, d.max_angle.max(0.0)),
            Kinematics::Elevator(_) => (0.0, 1.0),
            Kinematics::Chair(c) => (0.0, c.max_pull.max(0.0)),
        }
    }

    pub fn max_state(&self) -> f64 {
        self.state_range().1
    }

    pub fn set_state(&mut self, state: f64) {
        let (lo, hi) = self.state_range();
        self.state = if state.is_nan() { lo } else { state.clamp(lo, hi) };
    }

    /// Returns a copy moved by `dstate`, clamped to the admissible interval.
    pub fn advance(&self, dstate: f64) -> MainObject {
        let mut next = self.clone();
        next.set_state(self.state + dstate);
        next
    }

    pub fn at_state(&self, state: f64) -> MainObject {
        let mut next = self.clone();
        next.set_state(state);
        next
    }

    pub fn footprint(&self) -> Vec<Polygon> {
        self.footprint_at(self.state)
    }

    pub fn closed_footprint(&self) -> Vec<Polygon> {
        self.footprint_at(0.0)
    }

    pub fn footprint_at(&self, state: f64) -> Vec<Polygon> {
        match &self.kinematics {
            Kinematics::Door(d) => {
                let dir = Vec2::from_angle(d.closed_angle + d.swing * state);
                vec![Polygon::segment_rect(
                    d.hinge,
                    d.hinge + dir * d.leaf_length,
                    d.thickness,
                )]
            }
            Kinematics::Elevator(e) => {
                let [a, b] = e.gap;
                let mid = a.lerp(b, 0.5);
                let closed = 1.0 - state.clamp(0.0, 1.0);
                let mut panels = Vec::new();
                if closed > 1e-9 {
                    panels.push(Polygon::segment_rect(a, a.lerp(mid, closed), e.panel_thickness));
                    panels.push(Polygon::segment_rect(b, b.lerp(mid, closed), e.panel_thickness));
                }
                panels
            }
            Kinematics::Chair(c) => {
                let center = c.center + c.pull_axis.normalized() * state;
                vec![Polygon::oriented_rect(
                    center,
                    c.pull_axis,
                    c.depth / 2.0,
                    c.width / 2.0,
                )]
            }
        }
    }

    /// Maps a closed-state point rigidly attached to the object into its current pose.
    pub fn transform_point(&self, closed: Vec2) -> Vec2 {
        self.transform_point_at(closed, self.state)
    }

    pub fn transform_point_at(&self, closed: Vec2, state: f64) -> Vec2 {
        match &self.kinematics {
            Kinematics::Door(d) => d.hinge + (closed - d.hinge).rotate(d.swing * state),
            Kinematics::Elevator(_) => closed,
            Kinematics::Chair(c) => closed + c.pull_axis.normalized() * state,
        }
    }

    pub fn transform_angle(&self, closed: f64) -> f64 {
        match &self.kinematics {
            Kinematics::Door(d) => wrap_angle(closed + d.swing * self.state),
            _ => wrap_angle(closed),
        }
    }

    /// Centre of the main object in its current state (elevator: door gap midpoint).
    pub fn centroid(&self) -> Vec2 {
        match &self.kinematics {
            Kinematics::Elevator(e) => e.gap[0].lerp(e.gap[1], 0.5),
            _ => self
                .footprint()
                .first()
                .map(Polygon::centroid)
                .unwrap_or(Vec2::ZERO),
        }
    }

    /// Region covered by the object's motion from its current state to its
    /// maximal state, at the default discretisation.
    pub fn swept_region(&self) -> Vec<Polygon> {
        self.swept_region_with_steps(DOOR_SWEEP_STEP, CHAIR_SWEEP_STEP)
    }

    /// Swept region at explicit door (rad) and chair (m) step sizes. Each piece
    /// is the convex hull of two consecutive footprints, so the sweep between
    /// samples is covered.
    pub fn swept_region_with_steps(&self, door_step: f64, chair_step: f64) -> Vec<Polygon> {
        let step = match &self.kinematics {
            Kinematics::Door(_) => door_step,
            Kinematics::Chair(_) => chair_step,
            Kinematics::Elevator(e) => {
                let [a, b] = e.gap;
                let n = Vec2::from_angle(e.hall_normal) * e.threshold_depth;
                return vec![Polygon::new(vec![a, b, b + n, a + n])];
            }
        };
        let (from, to) = (self.state, self.max_state());
        let span = to - from;
        let n = if span <= 0.0 { 0 } else { (span / step).ceil() as usize };
        if n == 0 {
            return self.footprint_at(from);
        }
        let states: Vec<f64> = (0..=n).map(|k| from + span * k as f64 / n as f64).collect();
        states
            .windows(2)
            .map(|w| {
                let mut pts: Vec<Vec2> = self
                    .footprint_at(w[0])
                    .iter()
                    .chain(self.footprint_at(w[1]).iter())
                    .flat_map(|p| p.vertices().to_vec())
                    .collect();
                pts.dedup();
                convex_hull(&pts)
            })
            .collect()
    }

    /// Clear passage width beside the leaf (doors only).
    pub fn opening_width(&self) -> Option<f64> {
        match &self.kinematics {
            Kinematics::Door(d) => Some(d.leaf_length * self.state.min(FRAC_PI_2).sin()),
            _ => None,
        }
    }

    /// Surface segments that can host the target, with outward normals.
    pub fn host_segments(&self) -> Vec<(Vec2, Vec2, Vec2)> {
        match &self.kinematics {
            Kinematics::Elevator(e) => {
                let [a, b] = e.gap;
                let u = (b - a).normalized();
                vec![(a - u * 1.5, b + u * 1.5, Vec2::from_angle(e.hall_normal))]
            }
            _ => self
                .footprint()
                .iter()
                .flat_map(|p| p.edges_with_normals().collect::<Vec<_>>())
                .collect(),
        }
    }

    /// Elevator door schedule: starts opening `open_delay` after the call and
    /// is fully open `open_duration` later; stays open.
    pub fn update_clock(&mut self, time: f64) {
        if let Kinematics::Elevator(e) = &self.kinematics {
            if let Some(t0) = e.called_at {
                let dur = e.open_duration.max(1e-9);
                let s = ((time - t0 - e.open_delay) / dur).clamp(0.0, 1.0);
                self.set_state(s);
            }
        }
    }

    pub fn call_elevator(&mut self, time: f64) {
        if let Kinematics::Elevator(e) = &mut self.kinematics {
            if e.called_at.is_none() {
                e.called_at = Some(time);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionTarget {
    pub owner: ObjectId,
    /// Position with the owner in its closed state.
    pub point: Vec2,
    pub height: f64,
    /// Outward normal of the hosting surface (closed state).
    pub normal: f64,
    pub kind: TargetKind,
}

impl InteractionTarget {
    pub fn current_point(&self, owner: &MainObject) -> Vec2 {
        owner.transform_point(self.point)
    }

    pub fn current_normal(&self, owner: &MainObject) -> f64 {
        owner.transform_angle(self.normal)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    pub(crate) fn door(max_angle: f64) -> MainObject {
        MainObject::new(
            ObjectId(1),
            0.9,
            2.0,
            Kinematics::Door(DoorKinematics {
                hinge: Vec2::new(1.0, 1.0),
                closed_angle: 0.0,
                leaf_length: 0.9,
                thickness: 0.04,
                swing: 1.0,
                max_angle,
            }),
        )
    }

    fn chair() -> MainObject {
        MainObject::new(
            ObjectId(3),
            0.45,
            0.9,
            Kinematics::Chair(ChairKinematics {
                center: Vec2::new(2.0, 2.0),
                pull_axis: Vec2::new(1.0, 0.0),
                depth: 0.45,
                width: 0.45,
                max_pull: 0.5,
            }),
        )
    }

    fn any_contains(region: &[Polygon], p: Vec2) -> bool {
        region.iter().any(|poly| poly.contains(p))
    }

    #[test]
    fn zero_swing_door_sweeps_its_closed_footprint() {
        let d = door(0.0);
        assert_eq!(d.swept_region(), d.closed_footprint());
    }

    #[test]
    fn quarter_swing_area_matches_monte_carlo() {
        use rand::{RngExt, SeedableRng};
        let d = door(PI / 2.0);
        let region = d.swept_region();
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(11);
        let (lo, hi) = (Vec2::new(-0.1, -0.1), Vec2::new(1.1, 1.1));
        let n = 1_000_000;
        let mut hits = 0usize;
        for _ in 0..n {
            let p = Vec2::new(
                1.0 + rng.random_range(lo.x..hi.x),
                1.0 + rng.random_range(lo.y..hi.y),
            );
            if any_contains(&region, p) {
                hits += 1;
            }
        }
        let box_area = (hi.x - lo.x) * (hi.y - lo.y);
        let mc_area = box_area * hits as f64 / n as f64;
        let formula = PI * 0.9 * 0.9 / 4.0 + 0.9 * 0.04;
        let rel = (mc_area - formula).abs() / mc_area;
        assert!(rel < 0.02, "mc {mc_area} formula {formula}");
    }

    #[test]
    fn chair_sweep_is_translated_strip() {
        let c = chair();
        let region = c.swept_region();
        // closed at x ∈ [1.775, 2.225]; pulled to [2.275, 2.725]
        assert!(any_contains(&region, Vec2::new(2.5, 2.0)));
        assert!(any_contains(&region, Vec2::new(2.7, 2.2)));
        assert!(!any_contains(&region, Vec2::new(1.0, 2.0)));
        assert!(!any_contains(&region, Vec2::new(2.8, 2.0)));
    }

    #[test]
    fn advance_identity_clamp_and_round_trip() {
        let d = door(1.571);
        assert_eq!(d.advance(0.0), d);
        let open = d.at_state(1.4).advance(0.5);
        assert_eq!(open.state(), 1.571);
        let c = chair();
        let back = c.advance(0.2).advance(-0.2);
        assert_eq!(back.footprint(), c.footprint());
    }

    #[test]
    fn door_opening_width_saturates() {
        let d = door(PI);
        assert_eq!(d.at_state(0.0).opening_width(), Some(0.0));
        let w = d.at_state(PI / 6.0).opening_width().unwrap();
        assert!((w - 0.45).abs() < 1e-12);
        assert_eq!(d.at_state(2.5).opening_width(), Some(0.9));
    }

    #[test]
    fn elevator_schedule() {
        let mut e = MainObject::new(
            ObjectId(2),
            1.0,
            2.1,
            Kinematics::Elevator(ElevatorKinematics {
                gap: [Vec2::new(1.0, 1.0), Vec2::new(2.0, 1.0)],
                hall_normal: -PI / 2.0,
                panel_thickness: 0.05,
                cabin: Polygon::aabb_rect(Vec2::new(0.8, 1.1), Vec2::new(2.2, 2.5)),
                open_delay: 2.0,
                open_duration: 2.0,
                threshold_depth: 0.6,
                called_at: None,
            }),
        );
        assert_eq!(e.footprint().len(), 2);
        e.update_clock(10.0);
        assert_eq!(e.state(), 0.0);
        e.call_elevator(1.0);
        e.update_clock(4.0);
        assert!((e.state() - 0.5).abs() < 1e-12);
        e.update_clock(100.0);
        assert_eq!(e.state(), 1.0);
        assert!(e.footprint().is_empty());
        let strip = e.swept_region();
        assert!(strip[0].contains(Vec2::new(1.5, 0.7)));
        assert!(!strip[0].contains(Vec2::new(1.5, 1.3)));
    }

    #[test]
    fn target_moves_rigidly_with_door() {
        let d = door(PI / 2.0).at_state(PI / 2.0);
        let t = InteractionTarget {
            owner: ObjectId(1),
            point: Vec2::new(1.8, 0.98),
            height: 1.0,
            normal: -PI / 2.0,
            kind: TargetKind::Handle,
        };
        let p = t.current_point(&d);
        assert!((p - Vec2::new(1.02, 1.8)).norm() < 1e-12);
        assert!((t.current_normal(&d) - 0.0).abs() < 1e-12);
    }
}
