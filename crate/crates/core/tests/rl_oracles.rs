//! Tabular agent checked against value iteration on small MDPs.

use ppe_core::grid::{Direction, GridScene, Pos};
use ppe_core::rl::{
    evaluate, keep_right_bias, q_learning, NavMdp, QHyper, QPolicy, RewardConfig, StartMode,
};

/// Optimal action values by value iteration, with `shift` added to every
/// reward.
fn value_iteration(mdp: &NavMdp, gamma: f64, shift: f64) -> Vec<[f64; 4]> {
    let s = &mdp.scene;
    let mut q = vec![[0.0; 4]; s.cell_count()];
    for _ in 0..10_000 {
        let mut delta: f64 = 0.0;
        let v: Vec<f64> = q.iter().map(|a| a.iter().copied().fold(f64::MIN, f64::max)).collect();
        for idx in 0..s.cell_count() {
            let p = s.pos(idx);
            if !s.is_free(p) || p == s.goal {
                continue;
            }
            for a in Direction::ALL {
                let t = mdp.step(p, a);
                let next = if t.done { 0.0 } else { v[s.index(t.next)] };
                let new = t.reward + shift + gamma * next;
                delta = delta.max((new - q[idx][a.index()]).abs());
                q[idx][a.index()] = new;
            }
        }
        if delta < 1e-13 {
            break;
        }
    }
    q
}

fn optimal_actions(q: &[f64; 4]) -> Vec<Direction> {
    let best = q.iter().copied().fold(f64::MIN, f64::max);
    Direction::ALL
        .into_iter()
        .filter(|a| q[a.index()] >= best - 1e-9)
        .collect()
}

fn greedy_of(q: &[[f64; 4]], width: usize, height: usize) -> QPolicy {
    QPolicy {
        q: q.to_vec(),
        ..QPolicy::zeros(width, height)
    }
}

fn open_grid(w: usize, h: usize, start: Pos, goal: Pos) -> GridScene {
    let mut rows = Vec::new();
    for r in 0..h {
        let row: String = (0..w)
            .map(|c| match Pos::new(r, c) {
                p if p == start => 'S',
                p if p == goal => 'G',
                _ => '.',
            })
            .collect();
        rows.push(row);
    }
    GridScene::from_ascii(&rows.join("\n")).unwrap()
}

#[test]
fn q_learning_recovers_optimal_policies_on_every_open_3x3() {
    let hp = QHyper {
        alpha: 0.5,
        gamma: 0.9,
        episodes: 1500,
        ..QHyper::default()
    };
    let cells: Vec<Pos> = (0..9).map(|i| Pos::new(i / 3, i % 3)).collect();
    for &start in &cells {
        for &goal in &cells {
            if start == goal {
                continue;
            }
            let mdp = NavMdp::new(open_grid(3, 3, start, goal), RewardConfig::default()).unwrap();
            let q_star = value_iteration(&mdp, hp.gamma, 0.0);
            let (learned, _) = q_learning(&mdp, &hp, 17).unwrap();
            for &p in &cells {
                if p == goal {
                    continue;
                }
                let best = optimal_actions(&q_star[mdp.scene.index(p)]);
                let got = learned.greedy(p);
                assert!(best.contains(&got), "start {start} goal {goal} cell {p}: {got:?} not in {best:?}");
            }
        }
    }
}

#[test]
fn corridor_policy_matches_value_iteration() {
    let scene = GridScene::from_ascii(
        "#####
         S...G
         #####",
    )
    .unwrap();
    let mdp = NavMdp::new(scene, RewardConfig::default()).unwrap();
    let hp = QHyper {
        alpha: 0.1,
        gamma: 0.95,
        episodes: 200,
        ..QHyper::default()
    };
    let q_star = value_iteration(&mdp, hp.gamma, 0.0);
    let (learned, _) = q_learning(&mdp, &hp, 0).unwrap();
    for c in 0..4 {
        let p = Pos::new(1, c);
        assert_eq!(optimal_actions(&q_star[mdp.scene.index(p)]), vec![Direction::Right]);
        assert_eq!(learned.greedy(p), Direction::Right);
    }
}

#[test]
fn reward_shift_keeps_the_greedy_policy_on_corridors() {
    // the shift must keep every step strictly costly, otherwise lingering
    // beats arriving and no policy survives a shift
    for (len, goal_col) in [(5, 4), (7, 0), (9, 5), (12, 11)] {
        let start_col = if goal_col == 0 { len - 1 } else { 0 };
        let row: String = (0..len)
            .map(|c| if c == goal_col { 'G' } else if c == start_col { 'S' } else { '.' })
            .collect();
        let wall = "#".repeat(len);
        let scene = GridScene::from_ascii(&format!("{wall}\n{row}\n{wall}")).unwrap();
        let mdp = NavMdp::new(scene, RewardConfig::default()).unwrap();
        let base = greedy_of(&value_iteration(&mdp, 0.95, 0.0), len, 3);
        for c in [-0.5, -0.05, 0.005, 0.009] {
            let shifted = greedy_of(&value_iteration(&mdp, 0.95, c), len, 3);
            for col in 0..len {
                let p = Pos::new(1, col);
                if p != mdp.scene.goal {
                    assert_eq!(base.greedy(p), shifted.greedy(p), "len {len} shift {c} col {col}");
                }
            }
        }
    }
}

#[test]
fn win_requires_goal_within_the_step_cap() {
    let scene = GridScene::from_ascii(
        "#######
         S.....G
         #######",
    )
    .unwrap();
    let mut mdp = NavMdp::new(scene, RewardConfig::default()).unwrap();
    let policy = greedy_of(&value_iteration(&mdp, 0.95, 0.0), 7, 3);
    mdp.max_steps = 6;
    assert_eq!(evaluate(&policy, &mdp, 3, StartMode::Fixed).unwrap().win_rate, 100.0);
    mdp.max_steps = 5;
    let stats = evaluate(&policy, &mdp, 3, StartMode::Fixed).unwrap();
    assert_eq!(stats.win_rate, 0.0);
    assert_eq!(stats.mean_steps, 5.0);
}

#[test]
fn optimal_policy_wins_from_random_starts_on_an_empty_grid() {
    let mdp = NavMdp::new(open_grid(8, 6, Pos::new(0, 0), Pos::new(5, 7)), RewardConfig::default()).unwrap();
    let policy = greedy_of(&value_iteration(&mdp, 0.95, 0.0), 8, 6);
    let stats = evaluate(&policy, &mdp, 50, StartMode::Random { seed: 3 }).unwrap();
    assert_eq!(stats.win_rate, 100.0);
    assert!(stats.mean_steps >= 7.0);
}

#[test]
fn keep_right_bias_moves_the_route_to_the_right_lane() {
    // two-lane vertical corridor, start and goal in the left lane
    let scene = GridScene::from_ascii(
        "#G.#
         #..#
         #..#
         #..#
         #..#
         #..#
         #S.#",
    )
    .unwrap();
    let plain = NavMdp::new(scene.clone(), RewardConfig::default()).unwrap();
    let biased = NavMdp::new(
        scene.clone(),
        RewardConfig {
            bias_map: Some(keep_right_bias(&scene, 0.05)),
            ..RewardConfig::default()
        },
    )
    .unwrap();
    let left_lane_visits = |mdp: &NavMdp| {
        let policy = greedy_of(&value_iteration(mdp, 0.95, 0.0), 4, 7);
        let mut p = scene.start;
        let mut visits = 0;
        for _ in 0..20 {
            if p == scene.goal {
                break;
            }
            p = mdp.step(p, policy.greedy(p)).next;
            visits += usize::from(p.col == 1 && p != scene.goal);
        }
        assert_eq!(p, scene.goal);
        visits
    };
    assert_eq!(left_lane_visits(&plain), 5);
    assert_eq!(left_lane_visits(&biased), 0);
}
