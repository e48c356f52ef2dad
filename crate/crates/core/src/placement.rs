//! Stop-goal optimisation, end goals and user-side selection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::{PlacementParams, PlacementWeights, RobotGeometry};
use crate::perception::TargetEstimate;
use crate::world::{
    CellIndex, GridMap, Kinematics, MainObject, ObjectKind, Polygon, Pose2, Vec2, WorldState,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }

    /// +1 for left of the heading, -1 for right.
    pub fn sign(self) -> f64 {
        match self {
            Side::Left => 1.0,
            Side::Right => -1.0,
        }
    }

    pub fn flipped(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlacementError {
    #[error("no feasible stop pose near the target")]
    Unreachable,
    #[error("no free end-goal pose for the object")]
    NoEndGoal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopGoalResult {
    pub pose: Pose2,
    pub cell: CellIndex,
    pub side: Side,
    pub cost_total: f64,
    pub cost_c: f64,
    pub cost_d: f64,
    pub cost_m: f64,
    pub feasible_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndGoal {
    pub pose: Pose2,
}

/// One row of the cost field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateCost {
    pub cell: CellIndex,
    pub pose: Pose2,
    pub side: Side,
    pub clearance: f64,
    pub feasible: bool,
    pub cost_c: f64,
    pub cost_d: f64,
    pub cost_m: f64,
    pub total: f64,
}

/// Where the user stands for a robot pose and side.
pub fn stand_point(pose: &Pose2, side: Side, geometry: &RobotGeometry) -> Vec2 {
    pose.position()
        + pose.forward() * (geometry.head_offset - geometry.stand_back)
        + pose.left() * (side.sign() * geometry.stand_lateral)
}

/// Doors and chairs: the user stands on the side nearer the object centre.
/// Elevators: the far side. A zero cross product picks Right.
pub fn select_user_side(robot_stop: &Pose2, target: &TargetEstimate, object: &MainObject) -> Side {
    let s = robot_stop.forward().cross(object.centroid() - target.center);
    let toward = if object.kind() == ObjectKind::Elevator { -s } else { s };
    if toward > 0.0 {
        Side::Left
    } else {
        Side::Right
    }
}

/// Cells whose centres fall strictly inside the disc.
pub fn disc_cells(map: &GridMap, center: Vec2, radius: f64) -> Vec<CellIndex> {
    let res = map.resolution();
    let lo_c = ((center.x - radius) / res).floor().max(0.0) as usize;
    let lo_r = ((center.y - radius) / res).floor().max(0.0) as usize;
    let hi_c = (((center.x + radius) / res).ceil() as usize).min(map.width().saturating_sub(1));
    let hi_r = (((center.y + radius) / res).ceil() as usize).min(map.height().saturating_sub(1));
    let mut out = Vec::new();
    for row in lo_r..=hi_r {
        for col in lo_c..=hi_c {
            if map.cell_center((row, col)).distance(center) < radius {
                out.push((row, col));
            }
        }
    }
    out
}

/// Every candidate cell with its costs, in row-major order.
pub fn candidate_costs(
    world: &WorldState,
    target: &TargetEstimate,
    object: &MainObject,
    weights: &PlacementWeights,
    geometry: &RobotGeometry,
    params: &PlacementParams,
) -> Vec<CandidateCost> {
    let map = world.occupancy();
    let swept = object.swept_region();
    let in_swept = |p: Vec2| swept.iter().any(|poly: &Polygon| poly.contains(p));
    let res = map.resolution();
    let r = params.candidate_radius;
    let t = target.center;
    let lo_c = ((t.x - r) / res).floor().max(0.0) as usize;
    let lo_r = ((t.y - r) / res).floor().max(0.0) as usize;
    let hi_c = (((t.x + r) / res).ceil().max(0.0) as usize).min(map.width() - 1);
    let hi_r = (((t.y + r) / res).ceil().max(0.0) as usize).min(map.height() - 1);

    let mut out = Vec::new();
    for row in lo_r..=hi_r {
        for col in lo_c..=hi_c {
            let cell = (row, col);
            let c = map.cell_center(cell);
            if map.is_occupied(cell) || c.distance(t) > r {
                continue;
            }
            let pose = Pose2::from_position(c, (t - c).angle());
            let side = select_user_side(&pose, target, object);
            let clearance = map
                .nearest_occupied_distance(c)
                .map(|d| d - geometry.robot_radius)
                .unwrap_or(f64::NEG_INFINITY);
            let reach_ok = stand_point(&pose, side, geometry).distance(t)
                <= geometry.reach + geometry.leash_slack;
            let feasible = clearance >= 0.0 && reach_ok;
            let foot = disc_cells(map, c, geometry.robot_radius);
            let inside = foot.iter().filter(|&&fc| in_swept(map.cell_center(fc))).count();
            let cost_m = if foot.is_empty() {
                0.0
            } else {
                inside as f64 / foot.len() as f64
            };
            let cost_c = ((params.c_safe - clearance) / params.c_safe).max(0.0);
            let cost_d = c.distance(t);
            out.push(CandidateCost {
                cell,
                pose,
                side,
                clearance,
                feasible,
                cost_c,
                cost_d,
                cost_m,
                total: weights.w_c * cost_c + weights.w_d * cost_d + weights.w_m * cost_m,
            });
        }
    }
    out
}

/// Minimises the weighted cost over feasible candidates. When any feasible
/// candidate lies within the servo band the search is restricted to those.
/// Ties go to the smaller `(row, col)`.
pub fn compute_stop_goal(
    world: &WorldState,
    target: &TargetEstimate,
    object: &MainObject,
    weights: &PlacementWeights,
    geometry: &RobotGeometry,
    params: &PlacementParams,
) -> Result<StopGoalResult, PlacementError> {
    let all = candidate_costs(world, target, object, weights, geometry, params);
    let feasible: Vec<&CandidateCost> = all.iter().filter(|c| c.feasible).collect();
    let in_band = |c: &&CandidateCost| c.cost_d >= params.band_min && c.cost_d <= params.band_max;
    let restrict = feasible.iter().any(in_band);
    let mut best: Option<&CandidateCost> = None;
    for c in feasible.iter().filter(|c| !restrict || in_band(c)) {
        if best.is_none_or(|b| c.total < b.total) {
            best = Some(c);
        }
    }
    let b = best.ok_or(PlacementError::Unreachable)?;
    Ok(StopGoalResult {
        pose: b.pose,
        cell: b.cell,
        side: b.side,
        cost_total: b.total,
        cost_c: b.cost_c,
        cost_d: b.cost_d,
        cost_m: b.cost_m,
        feasible_count: feasible.len(),
    })
}

/// `ideal` itself if free, else the nearest cell centre (row-major
/// tie-break) within `max_radius` whose obstacle distance is at least
/// `clearance`.
pub fn snap_to_free(
    map: &GridMap,
    ideal: Vec2,
    clearance: f64,
    max_radius: f64,
) -> Option<Vec2> {
    let free = |p: Vec2| map.nearest_occupied_distance(p).is_ok_and(|d| d >= clearance);
    if map.contains_point(ideal) && free(ideal) {
        return Some(ideal);
    }
    let mut best: Option<(f64, Vec2)> = None;
    for cell in disc_cells(map, ideal, max_radius) {
        let c = map.cell_center(cell);
        let d = c.distance(ideal);
        if best.is_none_or(|(bd, _)| d < bd) && free(c) {
            best = Some((d, c));
        }
    }
    best.map(|(_, c)| c)
}

/// Task-completion pose, collision-free with the object at its maximal state.
pub fn compute_end_goal(
    world: &WorldState,
    object: &MainObject,
    geometry: &RobotGeometry,
    params: &PlacementParams,
    inflate: f64,
) -> Result<EndGoal, PlacementError> {
    let target = world
        .target_of(object.id)
        .map_err(|_| PlacementError::NoEndGoal)?;
    let (ideal, heading) = match &object.kinematics {
        Kinematics::Door(d) => {
            let mid = d.hinge + Vec2::from_angle(d.closed_angle) * (d.leaf_length / 2.0);
            let cross = -Vec2::from_angle(target.normal);
            (mid + cross * params.door_end_offset, cross.angle())
        }
        Kinematics::Elevator(e) => (
            e.cabin.centroid(),
            (-Vec2::from_angle(e.hall_normal)).angle(),
        ),
        Kinematics::Chair(c) => {
            let axis = c.pull_axis.normalized();
            let ideal = c.center + axis * (c.max_pull / 2.0 - c.depth / 2.0);
            (ideal, (-axis).angle())
        }
    };
    let terminal = world.occupancy_with_state(object.id, object.max_state());
    let pos = snap_to_free(&terminal, ideal, geometry.robot_radius + inflate, 1.0)
        .ok_or(PlacementError::NoEndGoal)?;
    Ok(EndGoal {
        pose: Pose2::from_position(pos, heading),
    })
}

/// Non-adaptive stop: a fixed distance out along the target normal, facing it.
pub fn fixed_distance_stop(target: &TargetEstimate, distance: f64) -> Pose2 {
    let n = Vec2::from_angle(target.normal);
    Pose2::from_position(target.center + n * distance, (-n).angle())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{
        Cell, ChairKinematics, DoorKinematics, ElevatorKinematics, InteractionTarget, ObjectId,
        TargetKind,
    };
    use std::f64::consts::PI;

    fn door_world() -> WorldState {
        // Wall at x = 5 (col 100), doorway y ∈ [2, 3); hinge at y = 2, leaf
        // opens toward -x (pull side).
        let mut map = GridMap::new(200, 100, 0.05).unwrap();
        for row in 0..100 {
            let y = (row as f64 + 0.5) * 0.05;
            if !(2.0..3.0).contains(&y) {
                map.set((row, 100), Cell::Occupied);
            }
        }
        let door = MainObject::new(
            ObjectId(1),
            1.0,
            2.0,
            Kinematics::Door(DoorKinematics {
                hinge: Vec2::new(5.0, 2.0),
                closed_angle: PI / 2.0,
                leaf_length: 1.0,
                thickness: 0.04,
                swing: 1.0,
                max_angle: PI / 2.0,
            }),
        );
        let handle = InteractionTarget {
            owner: ObjectId(1),
            point: Vec2::new(4.98, 2.85),
            height: 1.0,
            normal: PI,
            kind: TargetKind::Handle,
        };
        WorldState::new(map, vec![door], vec![handle], vec![]).unwrap()
    }

    fn estimate(world: &WorldState) -> TargetEstimate {
        let obj = &world.objects()[0];
        let t = world.target_of(obj.id).unwrap();
        TargetEstimate {
            center: t.current_point(obj),
            height: t.height,
            normal: t.current_normal(obj),
        }
    }

    #[test]
    fn distance_only_picks_closest_feasible() {
        let w = door_world();
        let t = estimate(&w);
        let weights = PlacementWeights { w_c: 0.0, w_d: 1.0, w_m: 0.0 };
        let (g, p) = (RobotGeometry::default(), PlacementParams::default());
        let all = candidate_costs(&w, &t, &w.objects()[0], &weights, &g, &p);
        let res = compute_stop_goal(&w, &t, &w.objects()[0], &weights, &g, &p).unwrap();
        let min_d = all
            .iter()
            .filter(|c| c.feasible)
            .map(|c| c.cost_d)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(res.cost_d, min_d);
        assert!((res.cost_total - res.cost_d).abs() < 1e-12);
    }

    #[test]
    fn door_stop_avoids_swing_arc() {
        let w = door_world();
        let t = estimate(&w);
        let (g, p) = (RobotGeometry::default(), PlacementParams::default());
        let res = compute_stop_goal(&w, &t, &w.objects()[0], &PlacementWeights::default(), &g, &p)
            .unwrap();
        assert_eq!(res.cost_m, 0.0);
        assert!((0.3..=0.8).contains(&res.cost_d), "{}", res.cost_d);
        assert!(w.clearance(&res.pose, g.robot_radius).unwrap() >= 0.0);
    }

    #[test]
    fn side_selection_examples() {
        let w = door_world();
        let obj = &w.objects()[0];
        // Robot west of the handle facing +x: centroid (5, 2.5) is to the right
        // of the handle at y = 2.85, i.e. s < 0.
        let pose = Pose2::new(4.3, 2.85, 0.0);
        let t = estimate(&w);
        assert_eq!(select_user_side(&pose, &t, obj), Side::Right);
        // Handle below the centroid from the robot's view → Left.
        let t_low = TargetEstimate { center: Vec2::new(4.98, 2.1), ..t };
        assert_eq!(select_user_side(&pose, &t_low, obj), Side::Left);
        let zero = TargetEstimate { center: obj.centroid(), ..t };
        assert_eq!(select_user_side(&pose, &zero, obj), Side::Right);
    }

    fn elevator() -> MainObject {
        MainObject::new(
            ObjectId(2),
            1.0,
            2.1,
            Kinematics::Elevator(ElevatorKinematics {
                gap: [Vec2::new(8.5, 2.0), Vec2::new(9.5, 2.0)],
                hall_normal: -PI / 2.0,
                panel_thickness: 0.05,
                cabin: Polygon::aabb_rect(Vec2::new(8.0, 2.0), Vec2::new(10.0, 4.0)),
                open_delay: 1.0,
                open_duration: 2.0,
                threshold_depth: 0.6,
                called_at: None,
            }),
        )
    }

    #[test]
    fn elevator_side_is_opposite() {
        let e = elevator();
        let pose = Pose2::new(10.2, 1.0, PI / 2.0);
        // Button east of the gap; centroid (9, 2) is to the left of the robot
        // heading north, so doors would pick Left.
        let t = TargetEstimate { center: Vec2::new(10.2, 2.0), height: 1.1, normal: -PI / 2.0 };
        assert!(pose.forward().cross(e.centroid() - t.center) > 0.0);
        assert_eq!(select_user_side(&pose, &t, &e), Side::Right);
    }

    #[test]
    fn end_goal_examples() {
        let w = door_world();
        let (g, p) = (RobotGeometry::default(), PlacementParams::default());
        let end = compute_end_goal(&w, &w.objects()[0], &g, &p, 0.05).unwrap();
        assert!((end.pose.x - 6.0).abs() < 1e-9 && (end.pose.y - 2.5).abs() < 1e-9);
        assert!(end.pose.heading().abs() < 1e-12);

        let mut map = GridMap::new(240, 120, 0.05).unwrap();
        for col in 0..240 {
            let x = (col as f64 + 0.5) * 0.05;
            if !(8.5..9.5).contains(&x) {
                map.set((39, col), Cell::Occupied);
            }
        }
        let button = InteractionTarget {
            owner: ObjectId(2),
            point: Vec2::new(10.0, 1.95),
            height: 1.1,
            normal: -PI / 2.0,
            kind: TargetKind::CallButton,
        };
        let ew = WorldState::new(map, vec![elevator()], vec![button], vec![]).unwrap();
        let end = compute_end_goal(&ew, &ew.objects()[0], &g, &p, 0.05).unwrap();
        assert!(end.pose.position().distance(Vec2::new(9.0, 3.0)) < 1e-9);

        let chair = MainObject::new(
            ObjectId(3),
            0.45,
            0.9,
            Kinematics::Chair(ChairKinematics {
                center: Vec2::new(3.0, 3.0),
                pull_axis: Vec2::new(0.0, -1.0),
                depth: 0.45,
                width: 0.45,
                max_pull: 0.5,
            }),
        );
        let seat = InteractionTarget {
            owner: ObjectId(3),
            point: Vec2::new(3.0, 2.775),
            height: 0.85,
            normal: -PI / 2.0,
            kind: TargetKind::SeatBack,
        };
        let cw = WorldState::new(GridMap::new(120, 120, 0.05).unwrap(), vec![chair], vec![seat], vec![])
            .unwrap();
        let end = compute_end_goal(&cw, &cw.objects()[0], &g, &p, 0.05).unwrap();
        assert!((end.pose.heading() - PI / 2.0).abs() < 1e-12);
        // The ideal point touches the pulled chair, so it snaps into the
        // vacated strip behind it.
        assert!((end.pose.x - 3.0).abs() < 0.05);
        assert!((2.725..=3.225).contains(&end.pose.y), "{}", end.pose.y);
        let terminal = cw.occupancy_with_state(ObjectId(3), 0.5);
        assert!(terminal.nearest_occupied_distance(end.pose.position()).unwrap() >= 0.4);
    }

    #[test]
    fn end_goal_fails_when_region_is_walled() {
        let mut w = door_world();
        let mut map = w.static_map().clone();
        for row in 0..100 {
            for col in 101..199 {
                map.set((row, col), Cell::Occupied);
            }
        }
        w = WorldState::new(map, w.objects().to_vec(), w.targets().to_vec(), vec![]).unwrap();
        let (g, p) = (RobotGeometry::default(), PlacementParams::default());
        assert_eq!(
            compute_end_goal(&w, &w.objects()[0], &g, &p, 0.05),
            Err(PlacementError::NoEndGoal)
        );
    }

    #[test]
    fn unreachable_when_enclosed() {
        let w = door_world();
        let mut t = estimate(&w);
        t.center = Vec2::new(-5.0, -5.0);
        let (g, p) = (RobotGeometry::default(), PlacementParams::default());
        let res = compute_stop_goal(&w, &t, &w.objects()[0], &PlacementWeights::default(), &g, &p);
        assert_eq!(res.unwrap_err(), PlacementError::Unreachable);
    }

    #[test]
    fn fixed_stop_faces_target() {
        let t = TargetEstimate { center: Vec2::new(2.0, 2.0), height: 1.0, normal: PI };
        let p = fixed_distance_stop(&t, 1.2);
        assert!((p.x - 0.8).abs() < 1e-12 && (p.y - 2.0).abs() < 1e-12);
        assert!(p.heading().abs() < 1e-12);
    }
}
