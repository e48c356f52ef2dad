//! 8-connected A* over an inflated occupancy grid.
//!
//! Path lengths are kept as exact `(straight, diagonal)` step counts, so cost
//! comparisons never suffer rounding and optimality can be checked exactly.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{CellIndex, GridMap, Pose2, Vec2};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("no collision-free path to the goal")]
    PathBlocked,
    #[error("goal is occupied after inflation")]
    GoalOccupied,
    #[error("start is outside the map")]
    StartOutside,
}

/// Length `straight + diagonal·√2` in cell units, ordered exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Octile {
    pub straight: u32,
    pub diagonal: u32,
}

impl Octile {
    pub const ZERO: Octile = Octile { straight: 0, diagonal: 0 };
    pub const STRAIGHT: Octile = Octile { straight: 1, diagonal: 0 };
    pub const DIAGONAL: Octile = Octile { straight: 0, diagonal: 1 };

    /// Octile distance between two cells.
    pub fn between(a: CellIndex, b: CellIndex) -> Octile {
        let dr = a.0.abs_diff(b.0) as u32;
        let dc = a.1.abs_diff(b.1) as u32;
        Octile {
            straight: dr.max(dc) - dr.min(dc),
            diagonal: dr.min(dc),
        }
    }

    pub fn add(self, o: Octile) -> Octile {
        Octile {
            straight: self.straight + o.straight,
            diagonal: self.diagonal + o.diagonal,
        }
    }

    pub fn cells(self) -> f64 {
        self.straight as f64 + self.diagonal as f64 * std::f64::consts::SQRT_2
    }
}

impl Ord for Octile {
    fn cmp(&self, other: &Self) -> Ordering {
        // sign of x + y·√2 with x, y integers
        let x = self.straight as i64 - other.straight as i64;
        let y = self.diagonal as i64 - other.diagonal as i64;
        let sign = |v: i64| v.cmp(&0);
        match (sign(x), sign(y)) {
            (Ordering::Equal, s) | (s, Ordering::Equal) => s,
            (a, b) if a == b => a,
            (a, _) => {
                // opposite signs: compare x² against 2y²
                let lhs = (x * x) as i128;
                let rhs = 2 * (y * y) as i128;
                match lhs.cmp(&rhs) {
                    Ordering::Greater => a,
                    Ordering::Less => a.reverse(),
                    Ordering::Equal => Ordering::Equal,
                }
            }
        }
    }
}

impl PartialOrd for Octile {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPlan {
    pub waypoints: Vec<Pose2>,
    pub cells: Vec<CellIndex>,
    pub length: Octile,
    /// Metres.
    pub cost: f64,
}

/// Cells a disc of `radius` may be centred on: its centre is at least
/// `radius` from every occupied cell centre.
#[derive(Debug, Clone)]
pub struct Traversability {
    width: usize,
    height: usize,
    resolution: f64,
    radius: f64,
    free: Vec<bool>,
    occupied: Vec<bool>,
}

impl Traversability {
    pub fn new(map: &GridMap, radius: f64) -> Self {
        let (w, h) = (map.width(), map.height());
        let mut free = vec![true; w * h];
        let mut occupied = vec![false; w * h];
        let res = map.resolution();
        let k = (radius / res).ceil() as isize;
        let mut stamp = Vec::new();
        for dr in -k..=k {
            for dc in -k..=k {
                let (dx, dy) = (dc as f64 * res, dr as f64 * res);
                if (dx * dx + dy * dy).sqrt() < radius || (dr == 0 && dc == 0) {
                    stamp.push((dr, dc));
                }
            }
        }
        for (row, col) in map.occupied_cells() {
            occupied[row * w + col] = true;
            for &(dr, dc) in &stamp {
                let (r, c) = (row as isize + dr, col as isize + dc);
                if r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w {
                    free[r as usize * w + c as usize] = false;
                }
            }
        }
        Self {
            width: w,
            height: h,
            resolution: res,
            radius,
            free,
            occupied,
        }
    }

    /// Copy in which unoccupied cells within the inflation radius of `start`
    /// become traversable, so a robot already inside the inflation zone can
    /// leave it.
    pub fn with_escape(&self, start: Vec2) -> Traversability {
        let mut out = self.clone();
        let res = self.resolution;
        let k = (self.radius / res).ceil() as isize + 1;
        let (sr, sc) = ((start.y / res).floor() as isize, (start.x / res).floor() as isize);
        for r in (sr - k)..=(sr + k) {
            for c in (sc - k)..=(sc + k) {
                if r < 0 || c < 0 || r as usize >= self.height || c as usize >= self.width {
                    continue;
                }
                let i = r as usize * self.width + c as usize;
                let center = Vec2::new((c as f64 + 0.5) * res, (r as f64 + 0.5) * res);
                if !self.occupied[i] && center.distance(start) <= self.radius {
                    out.free[i] = true;
                }
            }
        }
        out
    }

    pub fn is_free(&self, (row, col): CellIndex) -> bool {
        row < self.height && col < self.width && self.free[row * self.width + col]
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// 8-neighbours reachable from `cell`; diagonals require both adjacent
    /// orthogonal cells to be free.
    pub fn neighbours(&self, (row, col): CellIndex) -> impl Iterator<Item = (CellIndex, Octile)> + '_ {
        const DIRS: [(isize, isize); 8] = [
            (-1, -1),
            (-1, 0),
            (-1, 1),
            (0, -1),
            (0, 1),
            (1, -1),
            (1, 0),
            (1, 1),
        ];
        DIRS.iter().filter_map(move |&(dr, dc)| {
            let r = row as isize + dr;
            let c = col as isize + dc;
            if r < 0 || c < 0 {
                return None;
            }
            let next = (r as usize, c as usize);
            if !self.is_free(next) {
                return None;
            }
            if dr != 0 && dc != 0 {
                let a = (r as usize, col);
                let b = (row, c as usize);
                if !self.is_free(a) || !self.is_free(b) {
                    return None;
                }
                Some((next, Octile::DIAGONAL))
            } else {
                Some((next, Octile::STRAIGHT))
            }
        })
    }
}

#[derive(PartialEq, Eq)]
struct Open {
    f: Octile,
    h: Octile,
    idx: usize,
}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; invert for (f, h, idx) ascending.
        other
            .f
            .cmp(&self.f)
            .then(other.h.cmp(&self.h))
            .then(other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// A* between two cells. The start cell may lie inside the inflation zone.
pub fn astar(
    trav: &Traversability,
    start: CellIndex,
    goal: CellIndex,
) -> Result<(Vec<CellIndex>, Octile), PlanError> {
    if !trav.is_free(goal) {
        return Err(PlanError::GoalOccupied);
    }
    if start.0 >= trav.height || start.1 >= trav.width {
        return Err(PlanError::StartOutside);
    }
    if start == goal {
        return Ok((vec![start], Octile::ZERO));
    }
    let w = trav.width;
    let n = w * trav.height;
    let mut g: Vec<Option<Octile>> = vec![None; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    let si = start.0 * w + start.1;
    let gi = goal.0 * w + goal.1;
    g[si] = Some(Octile::ZERO);
    let h0 = Octile::between(start, goal);
    open.push(Open { f: h0, h: h0, idx: si });

    while let Some(Open { idx, .. }) = open.pop() {
        if closed[idx] {
            continue;
        }
        closed[idx] = true;
        if idx == gi {
            let mut cells = vec![goal];
            let mut cur = idx;
            while cur != si {
                cur = parent[cur];
                cells.push((cur / w, cur % w));
            }
            cells.reverse();
            return Ok((cells, g[gi].unwrap_or_default()));
        }
        let cell = (idx / w, idx % w);
        let gc = g[idx].unwrap_or_default();
        for (next, step) in trav.neighbours(cell) {
            let ni = next.0 * w + next.1;
            if closed[ni] {
                continue;
            }
            let cand = gc.add(step);
            if g[ni].is_none_or(|old| cand < old) {
                g[ni] = Some(cand);
                parent[ni] = idx;
                let h = Octile::between(next, goal);
                open.push(Open { f: cand.add(h), h, idx: ni });
            }
        }
    }
    Err(PlanError::PathBlocked)
}

/// Plans from `start` to `goal` for a disc of `radius + inflate`. The first
/// and last waypoints are the exact start and goal poses; intermediate
/// waypoints are cell centres headed toward their successor.
pub fn plan_on_grid(
    map: &GridMap,
    start: &Pose2,
    goal: &Pose2,
    radius: f64,
    inflate: f64,
) -> Result<PathPlan, PlanError> {
    let trav = Traversability::new(map, radius + inflate);
    plan_with(&trav, map, start, goal)
}

pub fn plan_with(
    trav: &Traversability,
    map: &GridMap,
    start: &Pose2,
    goal: &Pose2,
) -> Result<PathPlan, PlanError> {
    let gc = map.cell_of(goal.position()).ok_or(PlanError::GoalOccupied)?;
    let sc = map.cell_of(start.position()).ok_or(PlanError::StartOutside)?;
    let (cells, length) = if trav.is_free(sc) {
        astar(trav, sc, gc)?
    } else {
        if !trav.is_free(gc) {
            return Err(PlanError::GoalOccupied);
        }
        astar(&trav.with_escape(start.position()), sc, gc)?
    };
    let cost = length.cells() * map.resolution();
    if cells.len() == 1 {
        return Ok(PathPlan {
            waypoints: vec![*goal],
            cells,
            length,
            cost,
        });
    }
    let mut pts: Vec<Vec2> = cells.iter().map(|&c| map.cell_center(c)).collect();
    pts[0] = start.position();
    let last = pts.len() - 1;
    pts[last] = goal.position();
    let mut waypoints: Vec<Pose2> = pts
        .windows(2)
        .map(|w| Pose2::from_position(w[0], (w[1] - w[0]).angle()))
        .collect();
    waypoints.push(*goal);
    Ok(PathPlan {
        waypoints,
        cells,
        length,
        cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::Cell;
    use proptest::prelude::*;

    #[test]
    fn octile_order_is_exact() {
        let a = Octile { straight: 3, diagonal: 0 };
        let b = Octile { straight: 0, diagonal: 2 }; // 2.828
        assert!(b < a);
        let c = Octile { straight: 7, diagonal: 0 };
        let d = Octile { straight: 0, diagonal: 5 }; // 7.071
        assert!(c < d);
        assert_eq!(a.cmp(&a), Ordering::Equal);
    }

    proptest! {
        #[test]
        fn octile_order_matches_float(s1 in 0u32..500, d1 in 0u32..500, s2 in 0u32..500, d2 in 0u32..500) {
            let a = Octile { straight: s1, diagonal: d1 };
            let b = Octile { straight: s2, diagonal: d2 };
            let fa = a.cells();
            let fb = b.cells();
            if (fa - fb).abs() > 1e-9 {
                prop_assert_eq!(a.cmp(&b), fa.partial_cmp(&fb).unwrap());
            }
            prop_assert_eq!(a.cmp(&b), b.cmp(&a).reverse());
        }
    }

    #[test]
    fn identity_plan() {
        let map = GridMap::new(20, 20, 0.1).unwrap();
        let p = Pose2::new(1.0, 1.0, 0.3);
        let plan = plan_on_grid(&map, &p, &p, 0.2, 0.0).unwrap();
        assert_eq!(plan.waypoints, vec![p]);
        assert_eq!(plan.cost, 0.0);
    }

    #[test]
    fn walled_goal_is_blocked() {
        let mut map = GridMap::new(30, 30, 0.1).unwrap();
        for i in 18..=24 {
            map.set((18, i), Cell::Occupied);
            map.set((24, i), Cell::Occupied);
            map.set((i, 18), Cell::Occupied);
            map.set((i, 24), Cell::Occupied);
        }
        let start = Pose2::new(0.5, 0.5, 0.0);
        let goal = Pose2::new(2.15, 2.15, 0.0);
        assert_eq!(plan_on_grid(&map, &start, &goal, 0.1, 0.0), Err(PlanError::PathBlocked));
        let wall = Pose2::new(1.85, 2.15, 0.0);
        assert_eq!(plan_on_grid(&map, &start, &wall, 0.1, 0.0), Err(PlanError::GoalOccupied));
    }

    #[test]
    fn waypoints_are_adjacent_and_free() {
        let mut map = GridMap::new(40, 30, 0.1).unwrap();
        for r in 0..22 {
            map.set((r, 20), Cell::Occupied);
        }
        let start = Pose2::new(0.6, 0.6, 0.0);
        let goal = Pose2::new(3.4, 0.6, 0.0);
        let plan = plan_on_grid(&map, &start, &goal, 0.2, 0.05).unwrap();
        let trav = Traversability::new(&map, 0.25);
        for w in plan.cells.windows(2) {
            assert!(w[0].0.abs_diff(w[1].0) <= 1 && w[0].1.abs_diff(w[1].1) <= 1);
            assert_ne!(w[0], w[1]);
        }
        assert!(plan.cells.iter().all(|&c| trav.is_free(c)));
        assert_eq!(plan.waypoints.first().unwrap().position(), start.position());
        assert_eq!(plan.waypoints.last().unwrap(), &goal);
        assert_eq!(plan.waypoints.len(), plan.cells.len());
    }

    #[test]
    fn start_inside_inflation_can_leave() {
        let map = GridMap::new(20, 20, 0.1).unwrap();
        // 0.1 m from the border centres, inflation radius 0.3.
        let start = Pose2::new(0.15, 1.0, 0.0);
        let goal = Pose2::new(1.0, 1.0, 0.0);
        assert!(plan_on_grid(&map, &start, &goal, 0.25, 0.05).is_ok());
    }
}
