//! A small deterministic gridworld with feature-vector observations.
//!
//! The agent moves on a `width × height` grid toward a goal cell while
//! avoiding hazard cells. Observations are fixed-length vectors in `[0, 1]^d`:
//!
//! | index | feature |
//! |-------|---------|
//! | 0, 1  | agent x and y, scaled to `[0, 1]` |
//! | 2, 3  | goal offset `(g − a)` per axis, shifted and scaled to `[0, 1]` |
//! | 4..8  | hazard in the neighbouring cell left / right / down / up |
//! | 8     | Manhattan distance to the goal, scaled to `[0, 1]` |
//! | 9..d  | nuisance features: a fixed pseudo-random value per cell |
//!
//! Actions are `0` left, `1` right, `2` down, `3` up, `4` stay. Moves off the
//! grid leave the agent clamped to the boundary.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{splitmix64, RngState};

pub const NUM_ACTIONS: usize = 5;
pub const GOAL_REWARD: f64 = 10.0;
pub const HAZARD_REWARD: f64 = -1.0;
pub const STEP_REWARD: f64 = -0.01;
/// Number of structured (non-nuisance) features.
const STRUCTURED_FEATURES: usize = 9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("action {0} is not in 0..{NUM_ACTIONS}")]
    BadAction(usize),
    #[error("invalid layout: {0}")]
    BadLayout(String),
}

/// Grid geometry and episode cap, as read from an experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Layout {
    pub width: usize,
    pub height: usize,
    pub goal: [usize; 2],
    pub hazards: Vec<[usize; 2]>,
    pub max_steps: usize,
    /// start cells; empty means every cell that is neither goal nor hazard
    pub starts: Vec<[usize; 2]>,
    /// observation dimension `d`, at least 9
    pub obs_dim: usize,
    /// seed of the nuisance features
    pub feature_seed: u64,
}

impl Default for Layout {
    /// The 8×8 layout: goal in the top-right corner, two hazard bands that
    /// leave the grid edges open, and starts along the two bottom rows.
    fn default() -> Self {
        let mut hazards = Vec::new();
        for x in 1..6 {
            hazards.push([x, 2]);
        }
        for x in 2..7 {
            hazards.push([x, 5]);
        }
        Layout {
            width: 8,
            height: 8,
            goal: [7, 7],
            hazards,
            max_steps: 64,
            starts: (0..2).flat_map(|y| (0..8).map(move |x| [x, y])).collect(),
            obs_dim: 16,
            feature_seed: 0x5eed,
        }
    }
}

impl Layout {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |s: String| Err(EnvError::BadLayout(s));
        if self.width < 2 || self.height < 2 {
            return bad(format!("grid {}x{} is too small", self.width, self.height));
        }
        let inside = |c: &[usize; 2]| c[0] < self.width && c[1] < self.height;
        if !inside(&self.goal) {
            return bad(format!("goal {:?} is off the grid", self.goal));
        }
        if let Some(h) = self.hazards.iter().find(|h| !inside(h)) {
            return bad(format!("hazard {h:?} is off the grid"));
        }
        if self.hazards.contains(&self.goal) {
            return bad("goal cell is also a hazard".into());
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive".into());
        }
        if self.obs_dim < STRUCTURED_FEATURES {
            return bad(format!("obs_dim must be at least {STRUCTURED_FEATURES}"));
        }
        if let Some(s) = self
            .starts
            .iter()
            .find(|s| !inside(s) || **s == self.goal || self.is_hazard(**s))
        {
            return bad(format!("start {s:?} is off the grid, a hazard or the goal"));
        }
        if self.start_cells().is_empty() {
            return bad("no free start cell".into());
        }
        Ok(())
    }

    pub fn is_hazard(&self, cell: [usize; 2]) -> bool {
        self.hazards.contains(&cell)
    }

    /// Cells an episode may start from, drawn uniformly by `reset`.
    pub fn start_cells(&self) -> Vec<[usize; 2]> {
        if !self.starts.is_empty() {
            return self.starts.clone();
        }
        let mut cells = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                let c = [x, y];
                if c != self.goal && !self.is_hazard(c) {
                    cells.push(c);
                }
            }
        }
        cells
    }

    /// Deterministic transition: clamp the move to the grid.
    pub fn next_cell(&self, cell: [usize; 2], action: usize) -> Result<[usize; 2], EnvError> {
        let [x, y] = cell;
        Ok(match action {
            0 => [x.saturating_sub(1), y],
            1 => [(x + 1).min(self.width - 1), y],
            2 => [x, y.saturating_sub(1)],
            3 => [x, (y + 1).min(self.height - 1)],
            4 => [x, y],
            a => return Err(EnvError::BadAction(a)),
        })
    }

    /// Reward for entering `cell`, and whether the episode ends there.
    pub fn reward(&self, cell: [usize; 2]) -> (f64, bool) {
        if cell == self.goal {
            (GOAL_REWARD, true)
        } else if self.is_hazard(cell) {
            (HAZARD_REWARD, false)
        } else {
            (STEP_REWARD, false)
        }
    }

    /// The observation vector at `cell`.
    pub fn observe(&self, cell: [usize; 2]) -> Vec<f64> {
        let [x, y] = cell;
        let (w1, h1) = ((self.width - 1) as f64, (self.height - 1) as f64);
        let (gx, gy) = (self.goal[0] as f64, self.goal[1] as f64);
        let (xf, yf) = (x as f64, y as f64);
        let mut obs = Vec::with_capacity(self.obs_dim);
        obs.push(xf / w1);
        obs.push(yf / h1);
        obs.push((gx - xf + w1) / (2.0 * w1));
        obs.push((gy - yf + h1) / (2.0 * h1));
        let neighbour_hazard = |a: usize| {
            let n = self.next_cell(cell, a).unwrap();
            f64::from(u8::from(n != cell && self.is_hazard(n)))
        };
        for a in 0..4 {
            obs.push(neighbour_hazard(a));
        }
        obs.push(((gx - xf).abs() + (gy - yf).abs()) / (w1 + h1));
        for f in STRUCTURED_FEATURES..self.obs_dim {
            let h = splitmix64(
                self.feature_seed ^ splitmix64(((y * self.width + x) as u64) << 16 | f as u64),
            );
            obs.push((h >> 11) as f64 / (1u64 << 53) as f64);
        }
        obs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    /// goal reached or step cap hit
    pub done: bool,
    /// `done` because of the step cap rather than the goal
    pub truncated: bool,
}

/// A running episode on a [`Layout`].
#[derive(Debug, Clone)]
pub struct FeatureGrid {
    layout: Layout,
    starts: Vec<[usize; 2]>,
    agent: [usize; 2],
    steps: usize,
}

impl FeatureGrid {
    pub fn new(layout: Layout) -> Result<Self, EnvError> {
        layout.validate()?;
        let starts = layout.start_cells();
        let agent = starts[0];
        Ok(FeatureGrid {
            layout,
            starts,
            agent,
            steps: 0,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn obs_dim(&self) -> usize {
        self.layout.obs_dim
    }

    pub fn num_actions(&self) -> usize {
        NUM_ACTIONS
    }

    pub fn agent(&self) -> [usize; 2] {
        self.agent
    }

    /// Places the agent on a free cell drawn uniformly from `rng`.
    pub fn reset(&mut self, rng: &mut RngState) -> Vec<f64> {
        self.agent = self.starts[rng.random_range(0..self.starts.len())];
        self.steps = 0;
        self.layout.observe(self.agent)
    }

    /// Places the agent on a chosen cell.
    pub fn reset_to(&mut self, cell: [usize; 2]) -> Vec<f64> {
        self.agent = cell;
        self.steps = 0;
        self.layout.observe(self.agent)
    }

    pub fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        self.agent = self.layout.next_cell(self.agent, action)?;
        self.steps += 1;
        let (reward, at_goal) = self.layout.reward(self.agent);
        let truncated = !at_goal && self.steps >= self.layout.max_steps;
        Ok(StepResult {
            observation: self.layout.observe(self.agent),
            reward,
            done: at_goal || truncated,
            truncated,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> FeatureGrid {
        FeatureGrid::new(Layout::default()).unwrap()
    }

    #[test]
    fn reset_is_seeded() {
        let mut a = grid();
        let mut b = grid();
        let oa = a.reset(&mut RngState::from_seed(12));
        let ob = b.reset(&mut RngState::from_seed(12));
        assert_eq!(oa, ob);
        assert_eq!(oa.len(), 16);
        assert!(oa.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn goal_step() {
        let mut g = grid();
        g.reset_to([6, 7]);
        let r = g.step(1).unwrap();
        assert_eq!(r.reward, GOAL_REWARD);
        assert!(r.done && !r.truncated);
    }

    #[test]
    fn stay_and_clamp() {
        let mut g = grid();
        let obs = g.reset_to([0, 0]);
        let r = g.step(4).unwrap();
        assert_eq!(g.agent(), [0, 0]);
        assert_eq!(r.reward, STEP_REWARD);
        assert_eq!(r.observation, obs);
        g.step(0).unwrap();
        assert_eq!(g.agent(), [0, 0]);
        g.step(2).unwrap();
        assert_eq!(g.agent(), [0, 0]);
        g.reset_to([7, 3]);
        g.step(1).unwrap();
        assert_eq!(g.agent(), [7, 3]);
    }

    #[test]
    fn hazard_step() {
        let mut g = grid();
        g.reset_to([1, 1]);
        let r = g.step(3).unwrap();
        assert_eq!(g.agent(), [1, 2]);
        assert_eq!(r.reward, HAZARD_REWARD);
        assert!(!r.done);
    }

    #[test]
    fn bad_action() {
        let mut g = grid();
        assert_eq!(g.step(5), Err(EnvError::BadAction(5)));
    }

    #[test]
    fn truncation_at_cap() {
        let mut g = FeatureGrid::new(Layout {
            max_steps: 3,
            ..Layout::default()
        })
        .unwrap();
        g.reset_to([0, 0]);
        assert!(!g.step(4).unwrap().done);
        assert!(!g.step(4).unwrap().done);
        let r = g.step(4).unwrap();
        assert!(r.done && r.truncated);
    }

    #[test]
    fn observations_stay_in_unit_cube() {
        let l = Layout::default();
        for y in 0..l.height {
            for x in 0..l.width {
                let o = l.observe([x, y]);
                assert_eq!(o.len(), l.obs_dim);
                assert!(o.iter().all(|&v| (0.0..=1.0).contains(&v)), "{x},{y}: {o:?}");
            }
        }
    }

    #[test]
    fn layout_validation() {
        let bad = Layout {
            goal: [8, 0],
            ..Layout::default()
        };
        assert!(FeatureGrid::new(bad).is_err());
        let bad = Layout {
            obs_dim: 4,
            ..Layout::default()
        };
        assert!(FeatureGrid::new(bad).is_err());
        let bad = Layout {
            hazards: vec![[7, 7]],
            ..Layout::default()
        };
        assert!(FeatureGrid::new(bad).is_err());
    }
}
