//! Geometric and semantic ground truth.

pub mod geom;
pub mod grid;
pub mod objects;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use geom::{wrap_angle, Polygon, Pose2, Vec2};
pub use grid::{Cell, CellIndex, GridMap};
pub use objects::{
    ChairKinematics, DoorKinematics, ElevatorKinematics, InteractionTarget, Kinematics,
    MainObject, ObjectId, ObjectKind, TargetKind,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorldError {
    #[error("invalid map: {0}")]
    InvalidMap(String),
    #[error("point ({x:.3}, {y:.3}) is outside the map")]
    OutOfBounds { x: f64, y: f64 },
    #[error("invalid object {id}: {reason}")]
    InvalidObject { id: ObjectId, reason: String },
    #[error("unknown object {0}")]
    UnknownObject(ObjectId),
}

/// Returns `object` advanced by `dstate` with the state clamped to its interval.
pub fn advance_object(object: &MainObject, dstate: f64) -> MainObject {
    object.advance(dstate)
}

pub fn swept_region(object: &MainObject) -> Vec<Polygon> {
    object.swept_region()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bystander {
    pub position: Vec2,
    pub radius: f64,
}

/// Static map plus articulated objects and bystanders. `occupancy` caches the
/// static map with every object and bystander rasterized at its current state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    static_map: GridMap,
    objects: Vec<MainObject>,
    targets: Vec<InteractionTarget>,
    bystanders: Vec<Bystander>,
    pub time: f64,
    occupancy: GridMap,
}

impl WorldState {
    pub fn new(
        static_map: GridMap,
        objects: Vec<MainObject>,
        targets: Vec<InteractionTarget>,
        bystanders: Vec<Bystander>,
    ) -> Result<Self, WorldError> {
        let occupancy = static_map.clone();
        let mut world = Self {
            static_map,
            objects,
            targets,
            bystanders,
            time: 0.0,
            occupancy,
        };
        world.validate()?;
        world.refresh();
        Ok(world)
    }

    fn validate(&self) -> Result<(), WorldError> {
        let (lo, hi) = (Vec2::ZERO, self.static_map.extent());
        let inside = |p: Vec2| p.x >= lo.x && p.y >= lo.y && p.x <= hi.x && p.y <= hi.y;
        for (i, obj) in self.objects.iter().enumerate() {
            let bad = |reason: String| WorldError::InvalidObject { id: obj.id, reason };
            if self.objects[..i].iter().any(|o| o.id == obj.id) {
                return Err(bad("duplicate id".into()));
            }
            let (smin, smax) = obj.state_range();
            if !(smin..=smax).contains(&obj.state()) {
                return Err(bad(format!("state {} outside [{smin}, {smax}]", obj.state())));
            }
            for state in [0.0, smax] {
                for poly in obj.footprint_at(state) {
                    if !poly.is_simple() {
                        return Err(bad("self-intersecting footprint".into()));
                    }
                    if !poly.vertices().iter().all(|&v| inside(v)) {
                        return Err(bad("footprint leaves the map".into()));
                    }
                }
            }
            let owned: Vec<_> = self.targets.iter().filter(|t| t.owner == obj.id).collect();
            if owned.len() != 1 {
                return Err(bad(format!("expected one target, found {}", owned.len())));
            }
            let t = owned[0];
            let gap = target_surface_distance(obj, t.point);
            if gap > 0.1 + 1e-9 {
                return Err(bad(format!("target {gap:.3} m from the footprint boundary")));
            }
        }
        if let Some(t) = self
            .targets
            .iter()
            .find(|t| !self.objects.iter().any(|o| o.id == t.owner))
        {
            return Err(WorldError::UnknownObject(t.owner));
        }
        for b in &self.bystanders {
            if !inside(b.position) || !(b.radius > 0.0) {
                return Err(WorldError::InvalidMap(format!(
                    "bystander at ({:.2}, {:.2}) is invalid",
                    b.position.x, b.position.y
                )));
            }
        }
        Ok(())
    }

    /// Rebuilds the occupancy cache after objects or bystanders changed.
    pub fn refresh(&mut self) {
        self.occupancy = self.compose(None);
    }

    fn compose(&self, exclude: Option<ObjectId>) -> GridMap {
        let mut map = self.static_map.clone();
        for obj in self.objects.iter().filter(|o| Some(o.id) != exclude) {
            for poly in obj.footprint() {
                map.rasterize_polygon(&poly);
            }
        }
        for b in &self.bystanders {
            map.rasterize_disc(b.position, b.radius);
        }
        map
    }

    pub fn static_map(&self) -> &GridMap {
        &self.static_map
    }

    pub fn occupancy(&self) -> &GridMap {
        &self.occupancy
    }

    /// Occupancy with one object left out (e.g. the object being grasped).
    pub fn occupancy_excluding(&self, id: ObjectId) -> GridMap {
        self.compose(Some(id))
    }

    /// Occupancy with every object at an explicit state.
    pub fn occupancy_with_state(&self, id: ObjectId, state: f64) -> GridMap {
        let mut probe = self.clone();
        if let Some(o) = probe.objects.iter_mut().find(|o| o.id == id) {
            o.set_state(state);
        }
        probe.compose(None)
    }

    pub fn objects(&self) -> &[MainObject] {
        &self.objects
    }

    pub fn targets(&self) -> &[InteractionTarget] {
        &self.targets
    }

    pub fn bystanders(&self) -> &[Bystander] {
        &self.bystanders
    }

    pub fn set_bystanders(&mut self, bystanders: Vec<Bystander>) {
        self.bystanders = bystanders;
        self.refresh();
    }

    pub fn object(&self, id: ObjectId) -> Result<&MainObject, WorldError> {
        self.objects
            .iter()
            .find(|o| o.id == id)
            .ok_or(WorldError::UnknownObject(id))
    }

    pub fn target_of(&self, id: ObjectId) -> Result<&InteractionTarget, WorldError> {
        self.targets
            .iter()
            .find(|t| t.owner == id)
            .ok_or(WorldError::UnknownObject(id))
    }

    /// Target point at the owner's current state.
    pub fn target_point(&self, id: ObjectId) -> Result<Vec2, WorldError> {
        Ok(self.target_of(id)?.current_point(self.object(id)?))
    }

    pub fn advance_object(&mut self, id: ObjectId, dstate: f64) -> Result<(), WorldError> {
        let obj = self
            .objects
            .iter_mut()
            .find(|o| o.id == id)
            .ok_or(WorldError::UnknownObject(id))?;
        *obj = obj.advance(dstate);
        self.refresh();
        Ok(())
    }

    pub fn set_object_state(&mut self, id: ObjectId, state: f64) -> Result<(), WorldError> {
        let obj = self
            .objects
            .iter_mut()
            .find(|o| o.id == id)
            .ok_or(WorldError::UnknownObject(id))?;
        obj.set_state(state);
        self.refresh();
        Ok(())
    }

    pub fn call_elevator(&mut self, id: ObjectId) -> Result<(), WorldError> {
        let time = self.time;
        self.objects
            .iter_mut()
            .find(|o| o.id == id)
            .ok_or(WorldError::UnknownObject(id))?
            .call_elevator(time);
        Ok(())
    }

    /// Advances the clock and any scheduled object motion.
    pub fn step_clock(&mut self, dt: f64) {
        self.time += dt;
        let before: Vec<f64> = self.objects.iter().map(MainObject::state).collect();
        let time = self.time;
        for obj in &mut self.objects {
            obj.update_clock(time);
        }
        if self.objects.iter().zip(before).any(|(o, s)| o.state() != s) {
            self.refresh();
        }
    }

    pub fn clearance(&self, pose: &Pose2, footprint_radius: f64) -> Result<f64, WorldError> {
        self.occupancy.clearance(pose, footprint_radius)
    }

    pub fn raycast(&self, pose: &Pose2, n_beams: usize, max_range: f64) -> Vec<f64> {
        self.occupancy.raycast(pose, n_beams, max_range)
    }
}

/// Distance from a closed-state target point to the surface that hosts it.
fn target_surface_distance(obj: &MainObject, point: Vec2) -> f64 {
    match &obj.kinematics {
        Kinematics::Elevator(e) => {
            let [a, b] = e.gap;
            let u = (b - a).normalized();
            geom::point_segment_distance(point, a - u * 1.5, b + u * 1.5)
        }
        _ => obj
            .closed_footprint()
            .iter()
            .map(|p| p.distance_to_boundary(point))
            .fold(f64::INFINITY, f64::min),
    }
}
