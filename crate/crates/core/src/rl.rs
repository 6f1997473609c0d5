//! Tabular Q-learning navigation on a fixed grid, greedy win-rate evaluation,
//! and the train-on-A / evaluate-on-B environment-shift experiment.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{min_endpoint_distance, Direction, GridScene, Pos};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub r_goal: f64,
    pub r_step: f64,
    pub r_collision: f64,
    /// Optional non-positive penalty per cell, charged on entering the cell.
    /// Row-major, `width × height`.
    pub bias_map: Option<Vec<f64>>,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            r_goal: 1.0,
            r_step: -0.01,
            r_collision: -0.1,
            bias_map: None,
        }
    }
}

impl RewardConfig {
    fn validate(&self, cells: usize) -> Result<()> {
        if !(self.r_goal > 0.0) {
            return Err(Error::InvalidParameter("r_goal must be positive".into()));
        }
        if self.r_step > 0.0 || self.r_collision > 0.0 {
            return Err(Error::InvalidParameter(
                "r_step and r_collision must be non-positive".into(),
            ));
        }
        if let Some(bias) = &self.bias_map {
            if bias.len() != cells {
                return Err(Error::shape(cells, bias.len()));
            }
            if bias.iter().any(|&b| !(b <= 0.0)) {
                return Err(Error::InvalidParameter("bias_map entries must be ≤ 0".into()));
            }
        }
        Ok(())
    }
}

/// Builds a bias map that charges `penalty` on every free cell in the left
/// half of each row (for example "keep right" in a vertical corridor).
pub fn keep_right_bias(scene: &GridScene, penalty: f64) -> Vec<f64> {
    (0..scene.cell_count())
        .map(|i| {
            if i % scene.width < scene.width / 2 {
                -penalty.abs()
            } else {
                0.0
            }
        })
        .collect()
}

/// Deterministic grid MDP. States are cell indices; bumping into an
/// obstacle or the border leaves the state unchanged; the goal is absorbing.
#[derive(Clone, Debug, PartialEq)]
pub struct NavMdp {
    pub scene: GridScene,
    pub rewards: RewardConfig,
    pub max_steps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub next: Pos,
    pub reward: f64,
    pub done: bool,
}

impl NavMdp {
    /// Uses the default step cap of `4 · width · height`.
    pub fn new(scene: GridScene, rewards: RewardConfig) -> Result<Self> {
        rewards.validate(scene.cell_count())?;
        let max_steps = 4 * scene.width * scene.height;
        Ok(NavMdp {
            scene,
            rewards,
            max_steps,
        })
    }

    pub fn step(&self, state: Pos, action: Direction) -> Transition {
        if state == self.scene.goal {
            return Transition {
                next: state,
                reward: 0.0,
                done: true,
            };
        }
        let target = self.scene.step(state, action).filter(|&q| self.scene.is_free(q));
        let (next, mut reward) = match target {
            Some(q) if q == self.scene.goal => (q, self.rewards.r_goal),
            Some(q) => (q, self.rewards.r_step),
            None => (state, self.rewards.r_step + self.rewards.r_collision),
        };
        if let Some(bias) = &self.rewards.bias_map {
            reward += bias[self.scene.index(next)];
        }
        Transition {
            next,
            reward,
            done: next == self.scene.goal,
        }
    }

    /// Cells that can start an episode: free, not the goal, and able to
    /// reach it.
    pub fn start_cells(&self) -> Vec<Pos> {
        self.scene
            .cells_reaching_goal()
            .into_iter()
            .filter(|&p| p != self.scene.goal)
            .collect()
    }

    /// Start cells at least [`min_endpoint_distance`] from the goal, the same
    /// separation the scene generator enforces; all start cells if none
    /// qualify.
    pub fn evaluation_start_cells(&self) -> Vec<Pos> {
        let all = self.start_cells();
        let min = min_endpoint_distance(self.scene.width, self.scene.height);
        let far: Vec<Pos> = all
            .iter()
            .copied()
            .filter(|p| p.manhattan(self.scene.goal) >= min)
            .collect();
        if far.is_empty() {
            all
        } else {
            far
        }
    }
}

/// Linear decay from `start` to `end` over the first `decay_fraction` of
/// training episodes, then constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_fraction: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule {
            start: 1.0,
            end: 0.05,
            decay_fraction: 0.8,
        }
    }
}

impl EpsilonSchedule {
    pub fn at(&self, episode: usize, episodes: usize) -> f64 {
        let horizon = self.decay_fraction * episodes as f64;
        if horizon <= 0.0 {
            return self.end;
        }
        let t = (episode as f64 / horizon).min(1.0);
        self.start + (self.end - self.start) * t
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QHyper {
    pub alpha: f64,
    pub gamma: f64,
    pub episodes: usize,
    pub epsilon: EpsilonSchedule,
}

impl Default for QHyper {
    fn default() -> Self {
        QHyper {
            alpha: 0.2,
            gamma: 0.95,
            episodes: 3000,
            epsilon: EpsilonSchedule::default(),
        }
    }
}

impl QHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidParameter(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QPolicy {
    pub width: usize,
    pub height: usize,
    /// Action values per cell, indexed by [`Direction::index`].
    pub q: Vec<[f64; 4]>,
    pub hyper: QHyper,
    pub train_seed: u64,
}

impl QPolicy {
    pub fn zeros(width: usize, height: usize) -> Self {
        QPolicy {
            width,
            height,
            q: vec![[0.0; 4]; width * height],
            hyper: QHyper::default(),
            train_seed: 0,
        }
    }

    pub fn values(&self, p: Pos) -> &[f64; 4] {
        &self.q[p.row * self.width + p.col]
    }

    /// Highest-valued action; ties go to the earliest in Up, Right, Down, Left.
    pub fn greedy(&self, p: Pos) -> Direction {
        let qs = self.values(p);
        let mut best = 0;
        for a in 1..4 {
            if qs[a] > qs[best] {
                best = a;
            }
        }
        Direction::ALL[best]
    }

    fn max_value(&self, p: Pos) -> f64 {
        self.values(p).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// One-step Q-learning with ε-greedy exploration. Every episode starts from a
/// uniformly drawn start cell and ends at the goal or after `max_steps`.
/// Returns the learned table and one win flag per episode.
pub fn q_learning(mdp: &NavMdp, hp: &QHyper, seed: u64) -> Result<(QPolicy, Vec<bool>)> {
    hp.validate()?;
    let scene = &mdp.scene;
    let starts = mdp.start_cells();
    let mut policy = QPolicy {
        hyper: *hp,
        train_seed: seed,
        ..QPolicy::zeros(scene.width, scene.height)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut wins = Vec::with_capacity(hp.episodes);
    for episode in 0..hp.episodes {
        let eps = hp.epsilon.at(episode, hp.episodes);
        let mut state = *starts.choose(&mut rng).expect("solvable scene has a start cell");
        let mut won = false;
        for _ in 0..mdp.max_steps {
            let explore = rng.gen::<f64>() < eps;
            let action = if explore {
                Direction::ALL[rng.gen_range(0..4)]
            } else {
                policy.greedy(state)
            };
            let t = mdp.step(state, action);
            let bootstrap = if t.done { 0.0 } else { policy.max_value(t.next) };
            let target = t.reward + hp.gamma * bootstrap;
            let q = &mut policy.q[scene.index(state)][action.index()];
            *q += hp.alpha * (target - *q);
            state = t.next;
            if t.done {
                won = true;
                break;
            }
        }
        wins.push(won);
    }
    Ok((policy, wins))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StartMode {
    /// Every episode starts at the scene's start cell.
    Fixed,
    /// Start cells drawn uniformly (seeded) from
    /// [`NavMdp::evaluation_start_cells`].
    Random { seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    /// Percent of episodes reaching the goal within `max_steps`.
    pub win_rate: f64,
    pub mean_steps: f64,
    /// Seconds.
    pub run_time: f64,
    pub episodes: usize,
}

/// Greedy rollouts without exploration.
pub fn evaluate(policy: &QPolicy, mdp: &NavMdp, episodes: usize, start: StartMode) -> Result<EvalStats> {
    if episodes == 0 {
        return Err(Error::InvalidParameter("episodes must be positive".into()));
    }
    if policy.width != mdp.scene.width || policy.height != mdp.scene.height {
        return Err(Error::shape(
            format!("{}x{}", mdp.scene.width, mdp.scene.height),
            format!("{}x{}", policy.width, policy.height),
        ));
    }
    let started = Instant::now();
    let starts: Vec<Pos> = match start {
        StartMode::Fixed => vec![mdp.scene.start; episodes],
        StartMode::Random { seed } => {
            let cells = mdp.evaluation_start_cells();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..episodes)
                .map(|_| *cells.choose(&mut rng).expect("solvable scene has a start cell"))
                .collect()
        }
    };
    let mut wins = 0usize;
    let mut steps_total = 0usize;
    for s in starts {
        let mut state = s;
        let mut steps = 0;
        while steps < mdp.max_steps && state != mdp.scene.goal {
            state = mdp.step(state, policy.greedy(state)).next;
            steps += 1;
        }
        if state == mdp.scene.goal {
            wins += 1;
        }
        steps_total += steps;
    }
    Ok(EvalStats {
        win_rate: 100.0 * wins as f64 / episodes as f64,
        mean_steps: steps_total as f64 / episodes as f64,
        run_time: started.elapsed().as_secs_f64(),
        episodes,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftRow {
    pub env_id: String,
    pub win_rate_pct: f64,
    /// Evaluation wall time in seconds.
    pub run_time_s: f64,
    pub episodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub rows: Vec<ShiftRow>,
    /// Training wall time on environment A, reported separately from the
    /// per-environment evaluation time.
    pub train_time_s: f64,
    pub train_win_rate_pct: f64,
}

pub const SHIFT_CSV_HEADER: [&str; 4] = ["env_id", "win_rate_pct", "run_time_s", "episodes"];

impl ShiftReport {
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(SHIFT_CSV_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.env_id.clone(),
                format!("{:.2}", r.win_rate_pct),
                format!("{:.6}", r.run_time_s),
                r.episodes.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
    }
}

/// Trains on `env_a` only, then evaluates the frozen greedy policy on both
/// environments with the same seeded random-start protocol.
pub fn shift_experiment(
    env_a: &NavMdp,
    env_b: &NavMdp,
    hp: &QHyper,
    seed: u64,
    eval_episodes: usize,
) -> Result<ShiftReport> {
    let started = Instant::now();
    let (policy, wins) = q_learning(env_a, hp, seed)?;
    let train_time_s = started.elapsed().as_secs_f64();
    let eval_seed = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut rows = Vec::with_capacity(2);
    for (id, env) in [("A", env_a), ("B", env_b)] {
        let stats = evaluate(&policy, env, eval_episodes, StartMode::Random { seed: eval_seed })?;
        rows.push(ShiftRow {
            env_id: id.to_string(),
            win_rate_pct: stats.win_rate,
            run_time_s: stats.run_time,
            episodes: stats.episodes,
        });
    }
    let tail = wins.len().min(100);
    let train_win_rate_pct = if tail == 0 {
        0.0
    } else {
        100.0 * wins[wins.len() - tail..].iter().filter(|&&w| w).count() as f64 / tail as f64
    };
    Ok(ShiftReport {
        rows,
        train_time_s,
        train_win_rate_pct,
    })
}
