//! Grid scenes: procedural generation in five scenario families, RGB
//! rendering, and deterministic shortest-path labels.
//!
//! Cells are addressed as `(row, col)` with row 0 at the top. Movement is
//! 4-connected with unit cost. Wherever neighbor order matters the canonical
//! order is Up, Right, Down, Left.

use std::collections::VecDeque;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rejection-sampling cap shared by scene generation and perturbation.
pub const MAX_ATTEMPTS: usize = 1000;

pub const DEFAULT_SIZE: usize = 60;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos {
    pub row: usize,
    pub col: usize,
}

impl Pos {
    pub const fn new(row: usize, col: usize) -> Self {
        Pos { row, col }
    }

    pub fn manhattan(self, other: Pos) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }

    pub fn is_adjacent(self, other: Pos) -> bool {
        self.manhattan(other) == 1
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Up,
    Right,
    Down,
    Left,
}

impl Direction {
    /// Canonical tie-break order.
    pub const ALL: [Direction; 4] = [
        Direction::Up,
        Direction::Right,
        Direction::Down,
        Direction::Left,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn delta(self) -> (isize, isize) {
        match self {
            Direction::Up => (-1, 0),
            Direction::Right => (0, 1),
            Direction::Down => (1, 0),
            Direction::Left => (0, -1),
        }
    }
}

/// Binary mask over a `width × height` grid, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::shape(width * height, bits.len()));
        }
        Ok(Mask {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, p: Pos) -> bool {
        self.bits[p.row * self.width + p.col]
    }

    pub fn set(&mut self, p: Pos, value: bool) {
        self.bits[p.row * self.width + p.col] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn iter_set(&self) -> impl Iterator<Item = Pos> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| Pos::new(i / w, i % w))
    }

    pub fn intersection_count(&self, other: &Mask) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a && b)
            .count()
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellKind {
    Free,
    Obstacle,
}

/// One of the five built-in scenario families.
///
/// | family          | parameter ranges                                             |
/// |-----------------|--------------------------------------------------------------|
/// | `UniformClutter`| `0 ≤ density ≤ 0.4`                                           |
/// | `Rooms`         | `4 ≤ room_size ≤ 30`, `1 ≤ door_width < room_size`, clutter ≤ 0.2 |
/// | `Maze`          | `1 ≤ min_chamber ≤ 20`, clutter ≤ 0.1                          |
/// | `Corridors`     | `3 ≤ spacing ≤ 30`, `1 ≤ gaps ≤ 8`, clutter ≤ 0.2              |
/// | `DiagonalWalls` | `1 ≤ count ≤ 40`, `2 ≤ length ≤ 120`, clutter ≤ 0.2            |
///
/// The structured families also sprinkle uniform random obstacles at their
/// `clutter` density on top of the fixed layout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioFamily {
    UniformClutter {
        density: f64,
    },
    Rooms {
        room_size: usize,
        door_width: usize,
        clutter: f64,
    },
    Maze {
        min_chamber: usize,
        clutter: f64,
    },
    Corridors {
        spacing: usize,
        gaps: usize,
        clutter: f64,
    },
    DiagonalWalls {
        count: usize,
        length: usize,
        clutter: f64,
    },
}

impl ScenarioFamily {
    pub const NAMES: [&'static str; 5] = [
        "uniform_clutter",
        "rooms",
        "maze",
        "corridors",
        "diagonal_walls",
    ];

    /// The five families with their default parameters.
    pub fn builtin() -> [ScenarioFamily; 5] {
        [
            ScenarioFamily::UniformClutter { density: 0.2 },
            ScenarioFamily::Rooms {
                room_size: 12,
                door_width: 3,
                clutter: 0.05,
            },
            ScenarioFamily::Maze {
                min_chamber: 3,
                clutter: 0.01,
            },
            ScenarioFamily::Corridors {
                spacing: 6,
                gaps: 2,
                clutter: 0.05,
            },
            ScenarioFamily::DiagonalWalls {
                count: 8,
                length: 20,
                clutter: 0.05,
            },
        ]
    }

    /// Looks up a built-in family (default parameters) by name.
    pub fn by_name(name: &str) -> Option<ScenarioFamily> {
        Self::NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| Self::builtin()[i])
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScenarioFamily::UniformClutter { .. } => Self::NAMES[0],
            ScenarioFamily::Rooms { .. } => Self::NAMES[1],
            ScenarioFamily::Maze { .. } => Self::NAMES[2],
            ScenarioFamily::Corridors { .. } => Self::NAMES[3],
            ScenarioFamily::DiagonalWalls { .. } => Self::NAMES[4],
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn density(name: &str, v: f64, max: f64) -> Result<()> {
            if (0.0..=max).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "{name} must lie in [0, {max}], got {v}"
                )))
            }
        }
        fn range(name: &str, v: usize, lo: usize, hi: usize) -> Result<()> {
            if (lo..=hi).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "{name} must lie in [{lo}, {hi}], got {v}"
                )))
            }
        }
        match *self {
            ScenarioFamily::UniformClutter { density: p } => density("density", p, 0.4),
            ScenarioFamily::Rooms {
                room_size,
                door_width,
                clutter,
            } => {
                range("room_size", room_size, 4, 30)?;
                range("door_width", door_width, 1, room_size - 1)?;
                density("clutter", clutter, 0.2)
            }
            ScenarioFamily::Maze {
                min_chamber,
                clutter,
            } => {
                range("min_chamber", min_chamber, 1, 20)?;
                density("clutter", clutter, 0.1)
            }
            ScenarioFamily::Corridors {
                spacing,
                gaps,
                clutter,
            } => {
                range("spacing", spacing, 3, 30)?;
                range("gaps", gaps, 1, 8)?;
                density("clutter", clutter, 0.2)
            }
            ScenarioFamily::DiagonalWalls {
                count,
                length,
                clutter,
            } => {
                range("count", count, 1, 40)?;
                range("length", length, 2, 120)?;
                density("clutter", clutter, 0.2)
            }
        }
    }
}

/// A planning problem: occupancy grid plus start and goal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridScene {
    pub width: usize,
    pub height: usize,
    pub cells: Vec<CellKind>,
    pub start: Pos,
    pub goal: Pos,
    /// `None` for hand-built scenes.
    pub family: Option<ScenarioFamily>,
    pub seed: u64,
}

impl GridScene {
    /// Builds a scene and checks every invariant, including solvability.
    pub fn new(
        width: usize,
        height: usize,
        cells: Vec<CellKind>,
        start: Pos,
        goal: Pos,
        family: Option<ScenarioFamily>,
        seed: u64,
    ) -> Result<Self> {
        let scene = GridScene {
            width,
            height,
            cells,
            start,
            goal,
            family,
            seed,
        };
        scene.validate()?;
        Ok(scene)
    }

    /// Parses a picture like
    ///
    /// ```text
    /// S..
    /// .#.
    /// ..G
    /// ```
    ///
    /// where `#` is an obstacle.
    pub fn from_ascii(art: &str) -> Result<Self> {
        let rows: Vec<&str> = art
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect();
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.chars().count());
        let mut cells = Vec::with_capacity(width * height);
        let (mut start, mut goal) = (None, None);
        for (r, line) in rows.iter().enumerate() {
            if line.chars().count() != width {
                return Err(Error::InvalidScene(format!("row {r} has a different width")));
            }
            for (c, ch) in line.chars().enumerate() {
                cells.push(match ch {
                    '#' => CellKind::Obstacle,
                    '.' => CellKind::Free,
                    'S' => {
                        start = Some(Pos::new(r, c));
                        CellKind::Free
                    }
                    'G' => {
                        goal = Some(Pos::new(r, c));
                        CellKind::Free
                    }
                    other => {
                        return Err(Error::InvalidScene(format!("unexpected character {other:?}")))
                    }
                });
            }
        }
        let start = start.ok_or_else(|| Error::InvalidScene("no start cell".into()))?;
        let goal = goal.ok_or_else(|| Error::InvalidScene("no goal cell".into()))?;
        GridScene::new(width, height, cells, start, goal, None, 0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 3 || self.height < 3 {
            return Err(Error::InvalidScene(format!(
                "grid must be at least 3x3, got {}x{}",
                self.width, self.height
            )));
        }
        if self.cells.len() != self.width * self.height {
            return Err(Error::InvalidScene("cell count does not match dimensions".into()));
        }
        for (name, p) in [("start", self.start), ("goal", self.goal)] {
            if !self.in_bounds(p) {
                return Err(Error::InvalidScene(format!("{name} {p} is out of bounds")));
            }
            if !self.is_free(p) {
                return Err(Error::InvalidScene(format!("{name} {p} is an obstacle")));
            }
        }
        if self.start == self.goal {
            return Err(Error::InvalidScene("start equals goal".into()));
        }
        if !self.is_solvable() {
            return Err(Error::InvalidScene("goal unreachable from start".into()));
        }
        Ok(())
    }

    pub fn index(&self, p: Pos) -> usize {
        p.row * self.width + p.col
    }

    pub fn pos(&self, index: usize) -> Pos {
        Pos::new(index / self.width, index % self.width)
    }

    pub fn in_bounds(&self, p: Pos) -> bool {
        p.row < self.height && p.col < self.width
    }

    pub fn is_free(&self, p: Pos) -> bool {
        self.cells[self.index(p)] == CellKind::Free
    }

    pub fn cell_count(&self) -> usize {
        self.width * self.height
    }

    pub fn obstacle_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c == CellKind::Obstacle).count()
    }

    /// The in-bounds neighbor of `p` in direction `d`, if any.
    pub fn step(&self, p: Pos, d: Direction) -> Option<Pos> {
        let (dr, dc) = d.delta();
        let row = p.row.checked_add_signed(dr)?;
        let col = p.col.checked_add_signed(dc)?;
        let q = Pos::new(row, col);
        self.in_bounds(q).then_some(q)
    }

    /// Free in-bounds neighbors in canonical order.
    pub fn free_neighbors(&self, p: Pos) -> impl Iterator<Item = Pos> + '_ {
        Direction::ALL
            .into_iter()
            .filter_map(move |d| self.step(p, d))
            .filter(|&q| self.is_free(q))
    }

    pub fn is_solvable(&self) -> bool {
        let mut seen = vec![false; self.cell_count()];
        let mut stack = vec![self.start];
        seen[self.index(self.start)] = true;
        while let Some(p) = stack.pop() {
            if p == self.goal {
                return true;
            }
            for q in self.free_neighbors(p) {
                let i = self.index(q);
                if !seen[i] {
                    seen[i] = true;
                    stack.push(q);
                }
            }
        }
        false
    }

    /// Free cells from which the goal is reachable, in row-major order.
    pub fn cells_reaching_goal(&self) -> Vec<Pos> {
        let mut seen = vec![false; self.cell_count()];
        let mut stack = vec![self.goal];
        seen[self.index(self.goal)] = true;
        while let Some(p) = stack.pop() {
            for q in self.free_neighbors(p) {
                let i = self.index(q);
                if !seen[i] {
                    seen[i] = true;
                    stack.push(q);
                }
            }
        }
        (0..self.cell_count())
            .filter(|&i| seen[i])
            .map(|i| self.pos(i))
            .collect()
    }

    /// Indices of cells that differ between two same-sized scenes.
    pub fn diff_cells(&self, other: &GridScene) -> Vec<Pos> {
        self.cells
            .iter()
            .zip(&other.cells)
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(i, _)| self.pos(i))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Generation

/// Generates a solvable scene of the default 60×60 size.
pub fn generate_scene(family: ScenarioFamily, seed: u64) -> Result<GridScene> {
    generate_scene_sized(family, seed, DEFAULT_SIZE, DEFAULT_SIZE)
}

/// Generates a solvable scene by rejection sampling; identical
/// `(family, seed, size)` always yields a bit-identical scene.
pub fn generate_scene_sized(
    family: ScenarioFamily,
    seed: u64,
    width: usize,
    height: usize,
) -> Result<GridScene> {
    family.validate()?;
    if width < 3 || height < 3 {
        return Err(Error::InvalidParameter(format!(
            "grid must be at least 3x3, got {width}x{height}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_ATTEMPTS {
        let cells = layout(family, width, height, &mut rng);
        let Some((start, goal)) = place_endpoints(&cells, width, height, &mut rng) else {
            continue;
        };
        let scene = GridScene {
            width,
            height,
            cells,
            start,
            goal,
            family: Some(family),
            seed,
        };
        if scene.is_solvable() {
            return Ok(scene);
        }
    }
    Err(Error::GenerationExhausted {
        attempts: MAX_ATTEMPTS,
        context: format!("family {} seed {seed}", family.name()),
    })
}

fn sprinkle(cells: &mut [CellKind], density: f64, rng: &mut ChaCha8Rng) {
    for c in cells.iter_mut() {
        // draw unconditionally so the stream does not depend on the layout
        let hit = rng.gen::<f64>() < density;
        if hit {
            *c = CellKind::Obstacle;
        }
    }
}

fn layout(family: ScenarioFamily, w: usize, h: usize, rng: &mut ChaCha8Rng) -> Vec<CellKind> {
    let mut cells = vec![CellKind::Free; w * h];
    let block = |cells: &mut Vec<CellKind>, r: usize, c: usize| {
        if r < h && c < w {
            cells[r * w + c] = CellKind::Obstacle;
        }
    };
    match family {
        ScenarioFamily::UniformClutter { density } => sprinkle(&mut cells, density, rng),
        ScenarioFamily::Rooms {
            room_size,
            door_width,
            clutter,
        } => {
            let row_off = rng.gen_range(0..room_size);
            let col_off = rng.gen_range(0..room_size);
            let wall_rows: Vec<usize> = (1..h - 1)
                .filter(|r| (r + row_off) % room_size == 0)
                .collect();
            let wall_cols: Vec<usize> = (1..w - 1)
                .filter(|c| (c + col_off) % room_size == 0)
                .collect();
            for &r in &wall_rows {
                for c in 0..w {
                    block(&mut cells, r, c);
                }
            }
            for &c in &wall_cols {
                for r in 0..h {
                    block(&mut cells, r, c);
                }
            }
            // one door per wall segment between consecutive crossings
            let segments = |walls: &[usize], len: usize| -> Vec<(usize, usize)> {
                let mut bounds = vec![0usize];
                bounds.extend(walls.iter().map(|&x| x + 1));
                let mut ends: Vec<usize> = walls.to_vec();
                ends.push(len);
                bounds.into_iter().zip(ends).filter(|(a, b)| b > a).collect()
            };
            for &r in &wall_rows {
                for (a, b) in segments(&wall_cols, w) {
                    let span = (b - a).min(door_width);
                    let at = rng.gen_range(a..=b - span);
                    for c in at..at + span {
                        cells[r * w + c] = CellKind::Free;
                    }
                }
            }
            for &c in &wall_cols {
                for (a, b) in segments(&wall_rows, h) {
                    let span = (b - a).min(door_width);
                    let at = rng.gen_range(a..=b - span);
                    for r in at..at + span {
                        cells[r * w + c] = CellKind::Free;
                    }
                }
            }
            let mut noise = vec![CellKind::Free; w * h];
            sprinkle(&mut noise, clutter, rng);
            merge(&mut cells, &noise);
        }
        ScenarioFamily::Maze {
            min_chamber,
            clutter,
        } => {
            divide(&mut cells, w, (0, 0, h - 1, w - 1), min_chamber, rng);
            let mut noise = vec![CellKind::Free; w * h];
            sprinkle(&mut noise, clutter, rng);
            merge(&mut cells, &noise);
        }
        ScenarioFamily::Corridors {
            spacing,
            gaps,
            clutter,
        } => {
            let horizontal = rng.gen_bool(0.5);
            let (lines, along) = if horizontal { (h, w) } else { (w, h) };
            let offset = rng.gen_range(1..=spacing);
            let mut line = offset;
            while line < lines - 1 {
                let mut wall = vec![true; along];
                for _ in 0..gaps {
                    let gap = 2.min(along);
                    let at = rng.gen_range(0..=along - gap);
                    wall[at..at + gap].iter_mut().for_each(|x| *x = false);
                }
                for (i, &solid) in wall.iter().enumerate() {
                    if solid {
                        let (r, c) = if horizontal { (line, i) } else { (i, line) };
                        block(&mut cells, r, c);
                    }
                }
                line += spacing;
            }
            let mut noise = vec![CellKind::Free; w * h];
            sprinkle(&mut noise, clutter, rng);
            merge(&mut cells, &noise);
        }
        ScenarioFamily::DiagonalWalls {
            count,
            length,
            clutter,
        } => {
            for _ in 0..count {
                let mut r = rng.gen_range(0..h) as isize;
                let mut c = rng.gen_range(0..w) as isize;
                let dc: isize = if rng.gen_bool(0.5) { 1 } else { -1 };
                // staircase: two cells per step so 4-connected moves cannot slip through
                for _ in 0..length {
                    for (rr, cc) in [(r, c), (r, c + dc)] {
                        if rr >= 0 && cc >= 0 {
                            block(&mut cells, rr as usize, cc as usize);
                        }
                    }
                    r += 1;
                    c += dc;
                }
            }
            let mut noise = vec![CellKind::Free; w * h];
            sprinkle(&mut noise, clutter, rng);
            merge(&mut cells, &noise);
        }
    }
    cells
}

fn merge(cells: &mut [CellKind], noise: &[CellKind]) {
    for (c, n) in cells.iter_mut().zip(noise) {
        if *n == CellKind::Obstacle {
            *c = CellKind::Obstacle;
        }
    }
}

/// Recursive division. Walls sit on even rows/columns and passages on odd
/// ones, so a later wall never seals an earlier passage.
fn divide(
    cells: &mut [CellKind],
    w: usize,
    (top, left, bottom, right): (usize, usize, usize, usize),
    min_chamber: usize,
    rng: &mut ChaCha8Rng,
) {
    let height = bottom - top + 1;
    let width = right - left + 1;
    let wall_rows: Vec<usize> = (top + min_chamber..=bottom.saturating_sub(min_chamber))
        .filter(|r| r % 2 == 0 && *r > top && *r < bottom)
        .collect();
    let wall_cols: Vec<usize> = (left + min_chamber..=right.saturating_sub(min_chamber))
        .filter(|c| c % 2 == 0 && *c > left && *c < right)
        .collect();
    let horizontal = match (wall_rows.is_empty(), wall_cols.is_empty()) {
        (true, true) => return,
        (false, true) => true,
        (true, false) => false,
        (false, false) => {
            if height == width {
                rng.gen_bool(0.5)
            } else {
                height > width
            }
        }
    };
    if horizontal {
        let r = *wall_rows.choose(rng).expect("non-empty");
        let gaps: Vec<usize> = (left..=right).filter(|c| c % 2 == 1).collect();
        let gap = gaps.choose(rng).copied().unwrap_or(left);
        for c in left..=right {
            if c != gap {
                cells[r * w + c] = CellKind::Obstacle;
            }
        }
        divide(cells, w, (top, left, r - 1, right), min_chamber, rng);
        divide(cells, w, (r + 1, left, bottom, right), min_chamber, rng);
    } else {
        let c = *wall_cols.choose(rng).expect("non-empty");
        let gaps: Vec<usize> = (top..=bottom).filter(|r| r % 2 == 1).collect();
        let gap = gaps.choose(rng).copied().unwrap_or(top);
        for r in top..=bottom {
            if r != gap {
                cells[r * w + c] = CellKind::Obstacle;
            }
        }
        divide(cells, w, (top, left, bottom, c - 1), min_chamber, rng);
        divide(cells, w, (top, c + 1, bottom, right), min_chamber, rng);
    }
}

/// Start uniformly over free cells; goal uniformly over free cells at
/// Manhattan distance ≥ (width + height) / 2 from the start.
/// Minimum Manhattan distance between a generated scene's start and goal.
pub fn min_endpoint_distance(width: usize, height: usize) -> usize {
    (width + height) / 2
}

fn place_endpoints(
    cells: &[CellKind],
    w: usize,
    h: usize,
    rng: &mut ChaCha8Rng,
) -> Option<(Pos, Pos)> {
    let free: Vec<Pos> = (0..w * h)
        .filter(|&i| cells[i] == CellKind::Free)
        .map(|i| Pos::new(i / w, i % w))
        .collect();
    let start = *free.choose(rng)?;
    let min_dist = min_endpoint_distance(w, h);
    let far: Vec<Pos> = free
        .iter()
        .copied()
        .filter(|p| p.manhattan(start) >= min_dist)
        .collect();
    let goal = *far.choose(rng)?;
    Some((start, goal))
}

/// Toggles exactly `k` distinct non-endpoint cells (free ↔ obstacle),
/// rejecting unsolvable results. `k = 0` returns the scene unchanged.
pub fn perturb_scene(scene: &GridScene, k: usize, seed: u64) -> Result<GridScene> {
    if k == 0 {
        return Ok(scene.clone());
    }
    let candidates: Vec<usize> = (0..scene.cell_count())
        .filter(|&i| i != scene.index(scene.start) && i != scene.index(scene.goal))
        .collect();
    if k > candidates.len() {
        return Err(Error::InvalidParameter(format!(
            "cannot toggle {k} cells in a grid with {} non-endpoint cells",
            candidates.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_ATTEMPTS {
        let mut out = scene.clone();
        for &i in candidates.choose_multiple(&mut rng, k) {
            out.cells[i] = match out.cells[i] {
                CellKind::Free => CellKind::Obstacle,
                CellKind::Obstacle => CellKind::Free,
            };
        }
        if out.is_solvable() {
            return Ok(out);
        }
    }
    Err(Error::GenerationExhausted {
        attempts: MAX_ATTEMPTS,
        context: format!("perturbing {k} cells with seed {seed}"),
    })
}

// ---------------------------------------------------------------------------
// Rendering

pub const COLOR_FREE: [u8; 3] = [255, 255, 255];
pub const COLOR_OBSTACLE: [u8; 3] = [0, 0, 0];
pub const COLOR_START: [u8; 3] = [255, 0, 0];
pub const COLOR_GOAL: [u8; 3] = [0, 255, 0];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageRgb {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

impl ImageRgb {
    pub fn pixel(&self, p: Pos) -> [u8; 3] {
        self.pixels[p.row * self.width + p.col]
    }

    pub fn count_color(&self, color: [u8; 3]) -> usize {
        self.pixels.iter().filter(|&&px| px == color).count()
    }
}

pub fn render_scene(scene: &GridScene) -> ImageRgb {
    let mut pixels: Vec<[u8; 3]> = scene
        .cells
        .iter()
        .map(|c| match c {
            CellKind::Free => COLOR_FREE,
            CellKind::Obstacle => COLOR_OBSTACLE,
        })
        .collect();
    pixels[scene.index(scene.start)] = COLOR_START;
    pixels[scene.index(scene.goal)] = COLOR_GOAL;
    ImageRgb {
        width: scene.width,
        height: scene.height,
        pixels,
    }
}

/// Inverse of [`render_scene`]; family and seed are not encoded in the image.
pub fn parse_image(
    image: &ImageRgb,
    family: Option<ScenarioFamily>,
    seed: u64,
) -> Result<GridScene> {
    if image.pixels.len() != image.width * image.height {
        return Err(Error::MalformedImage("pixel count does not match dimensions".into()));
    }
    let (mut start, mut goal) = (None, None);
    let mut cells = Vec::with_capacity(image.pixels.len());
    for (i, &px) in image.pixels.iter().enumerate() {
        let p = Pos::new(i / image.width, i % image.width);
        let kind = match px {
            COLOR_FREE => CellKind::Free,
            COLOR_OBSTACLE => CellKind::Obstacle,
            COLOR_START if start.is_none() => {
                start = Some(p);
                CellKind::Free
            }
            COLOR_GOAL if goal.is_none() => {
                goal = Some(p);
                CellKind::Free
            }
            COLOR_START | COLOR_GOAL => {
                return Err(Error::MalformedImage(format!("duplicate endpoint color at {p}")))
            }
            other => {
                return Err(Error::MalformedImage(format!("unexpected color {other:?} at {p}")))
            }
        };
        cells.push(kind);
    }
    let start = start.ok_or_else(|| Error::MalformedImage("no start pixel".into()))?;
    let goal = goal.ok_or_else(|| Error::MalformedImage("no goal pixel".into()))?;
    GridScene::new(image.width, image.height, cells, start, goal, family, seed)
}

// ---------------------------------------------------------------------------
// Labels

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathLabel {
    pub mask: Mask,
    pub path_cells: Vec<Pos>,
}

impl PathLabel {
    pub fn cost(&self) -> usize {
        self.path_cells.len() - 1
    }

    /// Rebuilds a label from a mask by walking the unique simple path
    /// from `start`; fails if the mask is not such a path.
    pub fn from_mask(mask: Mask, start: Pos, goal: Pos) -> Result<Self> {
        let bad = |msg: &str| Error::InvalidScene(format!("label mask is not a simple path: {msg}"));
        if !mask.get(start) || !mask.get(goal) {
            return Err(bad("endpoints missing"));
        }
        let total = mask.count();
        let mut path = vec![start];
        let mut prev: Option<Pos> = None;
        let mut cur = start;
        while cur != goal {
            let next: Vec<Pos> = Direction::ALL
                .into_iter()
                .filter_map(|d| {
                    let (dr, dc) = d.delta();
                    let r = cur.row.checked_add_signed(dr)?;
                    let c = cur.col.checked_add_signed(dc)?;
                    let q = Pos::new(r, c);
                    (r < mask.height() && c < mask.width() && mask.get(q) && Some(q) != prev)
                        .then_some(q)
                })
                .collect();
            if next.len() != 1 {
                return Err(bad("branching or dead end"));
            }
            prev = Some(cur);
            cur = next[0];
            path.push(cur);
            if path.len() > total {
                return Err(bad("cycle"));
            }
        }
        if path.len() != total {
            return Err(bad("stray cells"));
        }
        Ok(PathLabel {
            mask,
            path_cells: path,
        })
    }
}

/// Shortest start→goal path by breadth-first search with the canonical
/// neighbor order and a FIFO queue; a cell's parent is whichever neighbor
/// discovered it first.
pub fn compute_label(scene: &GridScene) -> Result<PathLabel> {
    const UNSEEN: usize = usize::MAX;
    let n = scene.cell_count();
    let mut parent = vec![UNSEEN; n];
    let s = scene.index(scene.start);
    let g = scene.index(scene.goal);
    parent[s] = s;
    let mut queue = VecDeque::from([scene.start]);
    while let Some(p) = queue.pop_front() {
        if p == scene.goal {
            break;
        }
        for q in scene.free_neighbors(p) {
            let qi = scene.index(q);
            if parent[qi] == UNSEEN {
                parent[qi] = scene.index(p);
                queue.push_back(q);
            }
        }
    }
    if parent[g] == UNSEEN {
        return Err(Error::NoPath);
    }
    let mut path = vec![scene.goal];
    let mut i = g;
    while i != s {
        i = parent[i];
        path.push(scene.pos(i));
    }
    path.reverse();
    let mut mask = Mask::new(scene.width, scene.height);
    for &p in &path {
        mask.set(p, true);
    }
    Ok(PathLabel {
        mask,
        path_cells: path,
    })
}
