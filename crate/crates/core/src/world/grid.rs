use serde::{Deserialize, Serialize};

use super::geom::{Polygon, Pose2, Vec2};
use super::WorldError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cell {
    Free,
    Occupied,
}

/// `(row, col)`; row 0 is the lowest `y` band.
pub type CellIndex = (usize, usize);

/// Occupancy grid anchored at the world origin. The outermost ring of cells is
/// always occupied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMap {
    resolution: f64,
    width: usize,
    height: usize,
    cells: Vec<Cell>,
}

impl GridMap {
    /// Empty interior surrounded by the border ring.
    pub fn new(width: usize, height: usize, resolution: f64) -> Result<Self, WorldError> {
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(WorldError::InvalidMap(format!(
                "resolution must be positive, got {resolution}"
            )));
        }
        if width < 3 || height < 3 {
            return Err(WorldError::InvalidMap(format!(
                "grid must be at least 3x3, got {width}x{height}"
            )));
        }
        let mut map = Self {
            resolution,
            width,
            height,
            cells: vec![Cell::Free; width * height],
        };
        map.seal_border();
        Ok(map)
    }

    /// Builds a grid from row strings of `.`/`#`. The first string is the top
    /// (highest `y`) row. Run-length rows such as `"3#10.3#"` are accepted.
    pub fn from_rows<S: AsRef<str>>(rows: &[S], resolution: f64) -> Result<Self, WorldError> {
        let decoded: Vec<Vec<Cell>> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| decode_row(r.as_ref()).map_err(|e| WorldError::InvalidMap(format!("map[{i}]: {e}"))))
            .collect::<Result<_, _>>()?;
        let height = decoded.len();
        let width = decoded.first().map_or(0, Vec::len);
        if let Some((i, r)) = decoded.iter().enumerate().find(|(_, r)| r.len() != width) {
            return Err(WorldError::InvalidMap(format!(
                "map[{i}]: row has {} cells, expected {width}",
                r.len()
            )));
        }
        let mut map = GridMap::new(width, height, resolution)?;
        for (i, row) in decoded.iter().enumerate() {
            let r = height - 1 - i;
            for (c, &cell) in row.iter().enumerate() {
                map.cells[r * width + c] = cell;
            }
        }
        map.seal_border();
        Ok(map)
    }

    /// Row strings, top row first.
    pub fn to_rows(&self) -> Vec<String> {
        (0..self.height)
            .rev()
            .map(|r| {
                (0..self.width)
                    .map(|c| if self.is_occupied((r, c)) { '#' } else { '.' })
                    .collect()
            })
            .collect()
    }

    fn seal_border(&mut self) {
        let (w, h) = (self.width, self.height);
        for c in 0..w {
            self.cells[c] = Cell::Occupied;
            self.cells[(h - 1) * w + c] = Cell::Occupied;
        }
        for r in 0..h {
            self.cells[r * w] = Cell::Occupied;
            self.cells[r * w + w - 1] = Cell::Occupied;
        }
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// World extent `(x_max, y_max)`.
    pub fn extent(&self) -> Vec2 {
        Vec2::new(
            self.width as f64 * self.resolution,
            self.height as f64 * self.resolution,
        )
    }

    pub fn index(&self, (row, col): CellIndex) -> usize {
        row * self.width + col
    }

    pub fn cell(&self, idx: CellIndex) -> Cell {
        self.cells[self.index(idx)]
    }

    pub fn is_occupied(&self, idx: CellIndex) -> bool {
        self.cell(idx) == Cell::Occupied
    }

    /// Sets a cell. Border cells stay occupied.
    pub fn set(&mut self, (row, col): CellIndex, cell: Cell) {
        if row == 0 || col == 0 || row + 1 == self.height || col + 1 == self.width {
            return;
        }
        let i = self.index((row, col));
        self.cells[i] = cell;
    }

    pub fn cell_center(&self, (row, col): CellIndex) -> Vec2 {
        Vec2::new(
            (col as f64 + 0.5) * self.resolution,
            (row as f64 + 0.5) * self.resolution,
        )
    }

    pub fn cell_bounds(&self, (row, col): CellIndex) -> (Vec2, Vec2) {
        let r = self.resolution;
        (
            Vec2::new(col as f64 * r, row as f64 * r),
            Vec2::new((col + 1) as f64 * r, (row + 1) as f64 * r),
        )
    }

    pub fn contains_point(&self, p: Vec2) -> bool {
        let e = self.extent();
        p.x >= 0.0 && p.y >= 0.0 && p.x < e.x && p.y < e.y
    }

    pub fn cell_of(&self, p: Vec2) -> Option<CellIndex> {
        if !self.contains_point(p) {
            return None;
        }
        let col = ((p.x / self.resolution).floor() as usize).min(self.width - 1);
        let row = ((p.y / self.resolution).floor() as usize).min(self.height - 1);
        Some((row, col))
    }

    pub fn occupied_cells(&self) -> impl Iterator<Item = CellIndex> + '_ {
        (0..self.height)
            .flat_map(move |r| (0..self.width).map(move |c| (r, c)))
            .filter(move |&idx| self.is_occupied(idx))
    }

    /// Cells whose square intersects `poly`, clipped to the grid.
    pub fn polygon_cells(&self, poly: &Polygon) -> Vec<CellIndex> {
        if poly.is_empty() {
            return Vec::new();
        }
        let (min, max) = poly.bounds();
        let r = self.resolution;
        let c0 = ((min.x / r).floor().max(0.0)) as usize;
        let r0 = ((min.y / r).floor().max(0.0)) as usize;
        let c1 = ((max.x / r).floor().max(0.0) as usize).min(self.width - 1);
        let r1 = ((max.y / r).floor().max(0.0) as usize).min(self.height - 1);
        let mut out = Vec::new();
        for row in r0..=r1 {
            for col in c0..=c1 {
                let (lo, hi) = self.cell_bounds((row, col));
                if poly.intersects_box(lo, hi) {
                    out.push((row, col));
                }
            }
        }
        out
    }

    pub fn rasterize_polygon(&mut self, poly: &Polygon) {
        for idx in self.polygon_cells(poly) {
            self.set(idx, Cell::Occupied);
        }
    }

    /// Marks cells whose square comes within `radius` of `center`.
    pub fn rasterize_disc(&mut self, center: Vec2, radius: f64) {
        let r = self.resolution;
        let c0 = (((center.x - radius) / r).floor().max(0.0)) as usize;
        let r0 = (((center.y - radius) / r).floor().max(0.0)) as usize;
        let c1 = ((((center.x + radius) / r).floor().max(0.0)) as usize).min(self.width - 1);
        let r1 = ((((center.y + radius) / r).floor().max(0.0)) as usize).min(self.height - 1);
        for row in r0..=r1 {
            for col in c0..=c1 {
                let (lo, hi) = self.cell_bounds((row, col));
                let closest = Vec2::new(center.x.clamp(lo.x, hi.x), center.y.clamp(lo.y, hi.y));
                if closest.distance(center) <= radius {
                    self.set((row, col), Cell::Occupied);
                }
            }
        }
    }

    /// Distance from `p` to the nearest occupied cell centre.
    ///
    /// Ring search over Chebyshev shells around the cell of `p`; a shell `k`
    /// cannot hold anything closer than `(k - 0.5)·resolution`, which bounds the
    /// search exactly.
    pub fn nearest_occupied_distance(&self, p: Vec2) -> Result<f64, WorldError> {
        let (row, col) = self.cell_of(p).ok_or(WorldError::OutOfBounds { x: p.x, y: p.y })?;
        let (row, col) = (row as isize, col as isize);
        let max_ring = self.width.max(self.height) as isize;
        let mut best = f64::INFINITY;
        for k in 0..=max_ring {
            if (k as f64 - 0.5) * self.resolution > best {
                break;
            }
            let mut visit = |r: isize, c: isize| {
                if r < 0 || c < 0 || r >= self.height as isize || c >= self.width as isize {
                    return;
                }
                let idx = (r as usize, c as usize);
                if self.is_occupied(idx) {
                    let center = self.cell_center(idx);
                    let dx = center.x - p.x;
                    let dy = center.y - p.y;
                    let d = (dx * dx + dy * dy).sqrt();
                    if d < best {
                        best = d;
                    }
                }
            };
            if k == 0 {
                visit(row, col);
                continue;
            }
            for c in (col - k)..=(col + k) {
                visit(row - k, c);
                visit(row + k, c);
            }
            for r in (row - k + 1)..=(row + k - 1) {
                visit(r, col - k);
                visit(r, col + k);
            }
        }
        Ok(best)
    }

    /// Nearest-obstacle distance minus the footprint radius; negative means overlap.
    pub fn clearance(&self, pose: &Pose2, footprint_radius: f64) -> Result<f64, WorldError> {
        Ok(self.nearest_occupied_distance(pose.position())? - footprint_radius)
    }

    /// Range along a single beam using a DDA cell walk. Returns `max_range` if
    /// nothing is hit; 0 if the origin cell is occupied.
    pub fn cast_beam(&self, origin: Vec2, angle: f64, max_range: f64) -> f64 {
        let Some((mut row, mut col)) = self.cell_of(origin) else {
            return 0.0;
        };
        if self.is_occupied((row, col)) {
            return 0.0;
        }
        let res = self.resolution;
        let dir = Vec2::from_angle(angle);
        let step_c: isize = if dir.x > 0.0 { 1 } else { -1 };
        let step_r: isize = if dir.y > 0.0 { 1 } else { -1 };
        let t_delta_x = if dir.x != 0.0 { res / dir.x.abs() } else { f64::INFINITY };
        let t_delta_y = if dir.y != 0.0 { res / dir.y.abs() } else { f64::INFINITY };
        let next_x = if step_c > 0 { (col + 1) as f64 * res } else { col as f64 * res };
        let next_y = if step_r > 0 { (row + 1) as f64 * res } else { row as f64 * res };
        let mut t_max_x = if dir.x != 0.0 { (next_x - origin.x) / dir.x } else { f64::INFINITY };
        let mut t_max_y = if dir.y != 0.0 { (next_y - origin.y) / dir.y } else { f64::INFINITY };
        loop {
            let t;
            if t_max_x < t_max_y {
                t = t_max_x;
                t_max_x += t_delta_x;
                let nc = col as isize + step_c;
                if nc < 0 || nc >= self.width as isize {
                    return max_range;
                }
                col = nc as usize;
            } else {
                t = t_max_y;
                t_max_y += t_delta_y;
                let nr = row as isize + step_r;
                if nr < 0 || nr >= self.height as isize {
                    return max_range;
                }
                row = nr as usize;
            }
            if t > max_range {
                return max_range;
            }
            if self.is_occupied((row, col)) {
                return t.max(0.0);
            }
        }
    }

    /// `n_beams` ranges at evenly spaced bearings starting at the pose heading.
    pub fn raycast(&self, pose: &Pose2, n_beams: usize, max_range: f64) -> Vec<f64> {
        let n = n_beams.max(1);
        (0..n)
            .map(|i| {
                let a = pose.heading() + std::f64::consts::TAU * i as f64 / n as f64;
                self.cast_beam(pose.position(), a, max_range)
            })
            .collect()
    }
}

fn decode_row(row: &str) -> Result<Vec<Cell>, String> {
    let mut out = Vec::new();
    let mut count: Option<usize> = None;
    for ch in row.chars() {
        match ch {
            '0'..='9' => {
                let d = ch as usize - '0' as usize;
                count = Some(count.unwrap_or(0) * 10 + d);
            }
            '.' | '#' => {
                let cell = if ch == '#' { Cell::Occupied } else { Cell::Free };
                let n = count.take().unwrap_or(1);
                out.extend(std::iter::repeat_n(cell, n));
            }
            ' ' => {}
            other => return Err(format!("unexpected character {other:?}")),
        }
    }
    if count.is_some() {
        return Err("run length without a cell symbol".into());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_nearest(map: &GridMap, p: Vec2) -> f64 {
        let mut best = f64::INFINITY;
        for idx in map.occupied_cells() {
            let c = map.cell_center(idx);
            let dx = c.x - p.x;
            let dy = c.y - p.y;
            best = best.min((dx * dx + dy * dy).sqrt());
        }
        best
    }

    #[test]
    fn border_is_always_occupied() {
        let mut m = GridMap::new(5, 4, 0.1).unwrap();
        m.set((0, 2), Cell::Free);
        assert!(m.is_occupied((0, 2)));
        assert!(m.is_occupied((3, 4)));
        assert!(!m.is_occupied((1, 1)));
    }

    #[test]
    fn rows_round_trip_and_run_length() {
        let m = GridMap::from_rows(&["5#", "#3.#", "5#"], 0.5).unwrap();
        assert_eq!(m.to_rows(), vec!["#####", "#...#", "#####"]);
        assert!(GridMap::from_rows(&["##", "###"], 0.5).is_err());
        assert!(GridMap::from_rows(&["3"], 0.5).is_err());
    }

    #[test]
    fn empty_map_clearance_is_distance_to_border_ring() {
        let m = GridMap::new(20, 20, 0.1).unwrap();
        let p = Vec2::new(1.05, 0.55);
        // nearest border centre is the bottom ring at y = 0.05
        let d = m.nearest_occupied_distance(p).unwrap();
        assert!((d - 0.5).abs() < 1e-9, "{d}");
    }

    #[test]
    fn clearance_on_occupied_cell_is_negative() {
        let mut m = GridMap::new(20, 20, 0.05).unwrap();
        m.set((10, 10), Cell::Occupied);
        let p = m.cell_center((10, 10));
        let c = m.clearance(&Pose2::from_position(p, 0.0), 0.3).unwrap();
        assert!(c <= -0.3 + 0.05);
    }

    #[test]
    fn clearance_out_of_bounds() {
        let m = GridMap::new(10, 10, 0.1).unwrap();
        assert!(matches!(
            m.clearance(&Pose2::new(-0.1, 0.2, 0.0), 0.1),
            Err(WorldError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn ring_search_matches_exhaustive_scan() {
        use rand::{RngExt, SeedableRng};
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(3);
        for _ in 0..200 {
            let mut m = GridMap::new(20, 20, 0.1).unwrap();
            for r in 1..19 {
                for c in 1..19 {
                    if rng.random::<f64>() < 0.1 {
                        m.set((r, c), Cell::Occupied);
                    }
                }
            }
            let p = Vec2::new(rng.random_range(0.0..2.0), rng.random_range(0.0..2.0));
            let fast = m.nearest_occupied_distance(p).unwrap();
            assert!((fast - brute_nearest(&m, p)).abs() < 1e-9);
        }
    }

    #[test]
    fn beam_to_wall() {
        // 4 m x 4 m room; interior starts at x = 0.05 after the border ring.
        let m = GridMap::new(80, 80, 0.05).unwrap();
        let origin = Vec2::new(0.95, 2.0);
        // east wall ring cell starts at x = 3.95
        let r = m.cast_beam(origin, 0.0, 10.0);
        assert!((r - 3.0).abs() <= 0.05, "range {r}");
        assert_eq!(m.cast_beam(origin, 0.0, 1.0), 1.0);
    }

    #[test]
    fn symmetric_room_ranges_equal() {
        let m = GridMap::new(60, 60, 0.05).unwrap();
        let ranges = m.raycast(&Pose2::new(1.5, 1.5, 0.0), 4, 10.0);
        for w in ranges.windows(2) {
            assert!((w[0] - w[1]).abs() <= 0.05);
        }
    }

    #[test]
    fn disc_rasterization_touches_expected_cells() {
        let mut m = GridMap::new(40, 40, 0.05).unwrap();
        m.rasterize_disc(Vec2::new(1.0, 1.0), 0.1);
        assert!(m.is_occupied(m.cell_of(Vec2::new(1.0, 1.0)).unwrap()));
        assert!(m.is_occupied(m.cell_of(Vec2::new(1.08, 1.0)).unwrap()));
        assert!(!m.is_occupied(m.cell_of(Vec2::new(1.2, 1.0)).unwrap()));
    }
}
