//! Instrumented grid search: BFS, Dijkstra and A*, each optionally confined
//! to a region mask.
//!
//! All planners count an expansion when a node is removed from the frontier
//! and settled. The goal's own expansion is included; search stops there.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridScene, Mask, Pos};

/// Search confinement: `None` means the whole grid.
pub type Region<'a> = Option<&'a Mask>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlanStatus {
    Found,
    NoPath,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub status: PlanStatus,
    /// Empty iff `status == NoPath`.
    pub path: Vec<Pos>,
    pub cost: usize,
    pub expansions: usize,
    /// Seconds.
    pub wall_time: f64,
}

impl PlanResult {
    pub fn found(&self) -> bool {
        self.status == PlanStatus::Found
    }

    /// Equality on everything except wall time.
    pub fn same_outcome(&self, other: &PlanResult) -> bool {
        self.status == other.status
            && self.path == other.path
            && self.cost == other.cost
            && self.expansions == other.expansions
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heuristic {
    Zero,
    Manhattan,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Planner {
    Bfs,
    Dijkstra,
    Astar(Heuristic),
}

impl Planner {
    pub fn run(self, scene: &GridScene, region: Region<'_>) -> Result<PlanResult> {
        match self {
            Planner::Bfs => bfs_shortest(scene, region),
            Planner::Dijkstra => dijkstra(scene, region),
            Planner::Astar(h) => astar(scene, region, h),
        }
    }
}

fn check_region(scene: &GridScene, region: Region<'_>) -> Result<()> {
    if let Some(mask) = region {
        if mask.width() != scene.width || mask.height() != scene.height {
            return Err(Error::shape(
                format!("{}x{}", scene.width, scene.height),
                format!("{}x{}", mask.width(), mask.height()),
            ));
        }
        if !mask.get(scene.start) || !mask.get(scene.goal) {
            return Err(Error::RegionExcludesEndpoints);
        }
    }
    Ok(())
}

#[inline]
fn allowed(scene: &GridScene, region: Region<'_>, p: Pos) -> bool {
    scene.is_free(p) && region.map_or(true, |m| m.get(p))
}

fn trace_path(scene: &GridScene, parent: &[usize], goal: usize) -> Vec<Pos> {
    let s = scene.index(scene.start);
    let mut path = vec![scene.pos(goal)];
    let mut i = goal;
    while i != s {
        i = parent[i];
        path.push(scene.pos(i));
    }
    path.reverse();
    path
}

fn no_path(expansions: usize, started: Instant) -> PlanResult {
    PlanResult {
        status: PlanStatus::NoPath,
        path: Vec::new(),
        cost: 0,
        expansions,
        wall_time: started.elapsed().as_secs_f64(),
    }
}

/// Breadth-first search; the optimality oracle for unit-cost grids.
pub fn bfs_shortest(scene: &GridScene, region: Region<'_>) -> Result<PlanResult> {
    check_region(scene, region)?;
    let started = Instant::now();
    let n = scene.cell_count();
    let mut parent = vec![usize::MAX; n];
    let s = scene.index(scene.start);
    let g = scene.index(scene.goal);
    parent[s] = s;
    let mut queue = VecDeque::from([scene.start]);
    let mut expansions = 0;
    while let Some(p) = queue.pop_front() {
        expansions += 1;
        if p == scene.goal {
            let path = trace_path(scene, &parent, g);
            return Ok(PlanResult {
                status: PlanStatus::Found,
                cost: path.len() - 1,
                path,
                expansions,
                wall_time: started.elapsed().as_secs_f64(),
            });
        }
        for q in scene.free_neighbors(p) {
            let qi = scene.index(q);
            if parent[qi] == usize::MAX && allowed(scene, region, q) {
                parent[qi] = scene.index(p);
                queue.push_back(q);
            }
        }
    }
    Ok(no_path(expansions, started))
}

/// Dijkstra with priority `(distance, insertion counter)`.
pub fn dijkstra(scene: &GridScene, region: Region<'_>) -> Result<PlanResult> {
    best_first(scene, region, Heuristic::Zero, None)
}

/// A* with priority `(g + h, insertion counter)`. With [`Heuristic::Zero`]
/// the expansion sequence is identical to [`dijkstra`].
pub fn astar(scene: &GridScene, region: Region<'_>, heuristic: Heuristic) -> Result<PlanResult> {
    best_first(scene, region, heuristic, None)
}

/// Settled nodes in expansion order, for comparing search behaviour.
pub fn expansion_sequence(
    scene: &GridScene,
    region: Region<'_>,
    heuristic: Heuristic,
) -> Result<Vec<Pos>> {
    let mut order = Vec::new();
    best_first(scene, region, heuristic, Some(&mut order))?;
    Ok(order)
}

fn best_first(
    scene: &GridScene,
    region: Region<'_>,
    heuristic: Heuristic,
    mut trace: Option<&mut Vec<Pos>>,
) -> Result<PlanResult> {
    check_region(scene, region)?;
    let started = Instant::now();
    let h = |p: Pos| match heuristic {
        Heuristic::Zero => 0,
        Heuristic::Manhattan => p.manhattan(scene.goal),
    };
    let n = scene.cell_count();
    let mut dist = vec![usize::MAX; n];
    let mut parent = vec![usize::MAX; n];
    let mut settled = vec![false; n];
    let s = scene.index(scene.start);
    let g = scene.index(scene.goal);
    dist[s] = 0;
    parent[s] = s;
    let mut counter: u64 = 0;
    let mut open = BinaryHeap::new();
    open.push(Reverse((h(scene.start), counter, s)));
    let mut expansions = 0;
    while let Some(Reverse((_, _, i))) = open.pop() {
        if settled[i] {
            continue;
        }
        settled[i] = true;
        expansions += 1;
        let p = scene.pos(i);
        if let Some(t) = trace.as_deref_mut() {
            t.push(p);
        }
        if i == g {
            let path = trace_path(scene, &parent, g);
            return Ok(PlanResult {
                status: PlanStatus::Found,
                cost: dist[g],
                path,
                expansions,
                wall_time: started.elapsed().as_secs_f64(),
            });
        }
        let next = dist[i] + 1;
        for q in scene.free_neighbors(p) {
            let qi = scene.index(q);
            if settled[qi] || next >= dist[qi] || !allowed(scene, region, q) {
                continue;
            }
            dist[qi] = next;
            parent[qi] = i;
            counter += 1;
            open.push(Reverse((next + h(q), counter, qi)));
        }
    }
    Ok(no_path(expansions, started))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{generate_scene_sized, ScenarioFamily};

    fn corridor() -> GridScene {
        GridScene::from_ascii(
            "#####
             S...G
             #####",
        )
        .unwrap()
    }

    #[test]
    fn bfs_empty_3x3_diagonal() {
        let s = GridScene::from_ascii("S..\n...\n..G").unwrap();
        let r = bfs_shortest(&s, None).unwrap();
        assert_eq!(r.cost, 4);
        assert_eq!(r.path.len(), 5);
    }

    #[test]
    fn blocked_column_gives_no_path() {
        // The scene constructor rejects unsolvable grids, so block after building.
        let mut s = GridScene::from_ascii("S.G\n...\n...").unwrap();
        for r in 0..3 {
            let i = s.index(Pos::new(r, 1));
            s.cells[i] = crate::grid::CellKind::Obstacle;
        }
        for planner in [
            Planner::Bfs,
            Planner::Dijkstra,
            Planner::Astar(Heuristic::Manhattan),
        ] {
            let r = planner.run(&s, None).unwrap();
            assert_eq!(r.status, PlanStatus::NoPath);
            assert!(r.path.is_empty());
        }
    }

    #[test]
    fn dijkstra_corridor_settles_every_cell_once() {
        let r = dijkstra(&corridor(), None).unwrap();
        assert_eq!(r.cost, 4);
        assert_eq!(r.expansions, 5);
    }

    #[test]
    fn dijkstra_respects_region() {
        let s = GridScene::from_ascii("S.G\n...\n...").unwrap();
        let mut top = Mask::new(3, 3);
        for c in 0..3 {
            top.set(Pos::new(0, c), true);
        }
        let r = dijkstra(&s, Some(&top)).unwrap();
        assert_eq!(r.cost, 2);
        assert!(r.expansions <= 3);
        assert!(r.path.iter().all(|&p| top.get(p)));
    }

    #[test]
    fn region_must_contain_endpoints() {
        let s = GridScene::from_ascii("S.G\n...\n...").unwrap();
        let mut m = Mask::full(3, 3);
        m.set(s.goal, false);
        for planner in [Planner::Bfs, Planner::Dijkstra] {
            assert!(matches!(
                planner.run(&s, Some(&m)),
                Err(Error::RegionExcludesEndpoints)
            ));
        }
    }

    #[test]
    fn astar_zero_matches_dijkstra_sequence() {
        for seed in 0..20 {
            let s = generate_scene_sized(ScenarioFamily::UniformClutter { density: 0.25 }, seed, 12, 12)
                .unwrap();
            let d = dijkstra(&s, None).unwrap();
            let a = astar(&s, None, Heuristic::Zero).unwrap();
            assert!(d.same_outcome(&a));
            assert_eq!(
                expansion_sequence(&s, None, Heuristic::Zero).unwrap().len(),
                d.expansions
            );
        }
    }

    #[test]
    fn astar_manhattan_on_empty_3x3() {
        let s = GridScene::from_ascii("S..\n...\n..G").unwrap();
        let r = astar(&s, None, Heuristic::Manhattan).unwrap();
        assert_eq!(r.cost, 4);
        assert!(r.expansions <= dijkstra(&s, None).unwrap().expansions);
    }

    #[test]
    fn repeated_runs_are_identical() {
        let s = generate_scene_sized(ScenarioFamily::Maze { min_chamber: 2, clutter: 0.0 }, 4, 20, 20)
            .unwrap();
        for planner in [
            Planner::Bfs,
            Planner::Dijkstra,
            Planner::Astar(Heuristic::Manhattan),
        ] {
            let a = planner.run(&s, None).unwrap();
            let b = planner.run(&s, None).unwrap();
            assert!(a.same_outcome(&b));
        }
    }
}
