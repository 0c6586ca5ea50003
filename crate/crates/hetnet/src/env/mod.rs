//! Predator-prey gridworlds with per-class action and observation spaces.
//!
//! Two domains share one implementation. In PP every agent is a predator:
//! it senses a small window around itself and is finished once it stands on
//! the prey cell. PCP adds a second class of capture agents that receive no
//! observation input at all and must additionally execute a dedicated
//! capture action while on the prey cell. Transitions are deterministic;
//! the only randomness is the initial placement.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod bandit;

/// Per-step movement/action indices shared by both classes.
pub const ACT_UP: usize = 0;
pub const ACT_DOWN: usize = 1;
pub const ACT_LEFT: usize = 2;
pub const ACT_RIGHT: usize = 3;
pub const ACT_STAY: usize = 4;
/// Only valid for the capture class.
pub const ACT_CAPTURE: usize = 5;

/// Flags recorded per field-of-view cell, in flattening order.
pub const FOV_FLAGS: usize = 4;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

/// Which benchmark domain an [`EnvConfig`] describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Pp,
    Pcp,
}

/// Definition of one agent class: its action labels, whether it receives an
/// environment observation, and its input dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassSpec {
    pub class_id: String,
    /// Single letter used in edge-type names such as "PtoA".
    pub short_code: char,
    pub action_labels: Vec<&'static str>,
    pub has_observation: bool,
    pub state_dim: usize,
    pub obs_dim: usize,
}

impl ClassSpec {
    pub fn n_actions(&self) -> usize {
        self.action_labels.len()
    }
}

/// The classes present in a team and how many agents belong to each.
/// Agents are globally indexed class by class, in declaration order.
#[derive(Clone, Debug, PartialEq)]
pub struct TeamSpec {
    pub classes: Vec<ClassSpec>,
    pub counts: Vec<usize>,
}

impl TeamSpec {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn n_agents(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn class_of(&self, agent: usize) -> usize {
        let mut offset = 0;
        for (ci, &n) in self.counts.iter().enumerate() {
            if agent < offset + n {
                return ci;
            }
            offset += n;
        }
        panic!("agent index {agent} out of range");
    }

    /// Global agent index range for a class.
    pub fn members(&self, class: usize) -> std::ops::Range<usize> {
        let start: usize = self.counts[..class].iter().sum();
        start..start + self.counts[class]
    }
}

/// Environment block of the experiment config file.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EnvConfig {
    pub domain: Domain,
    pub height: usize,
    pub width: usize,
    pub n_predator: usize,
    #[serde(default)]
    pub n_capture: usize,
    #[serde(default = "default_fov")]
    pub fov_radius: usize,
    #[serde(default = "default_episode_limit")]
    pub episode_limit: usize,
    #[serde(default = "default_step_penalty")]
    pub step_penalty: f64,
}

fn default_fov() -> usize {
    1
}

fn default_episode_limit() -> usize {
    80
}

fn default_step_penalty() -> f64 {
    0.05
}

impl EnvConfig {
    pub fn pp(height: usize, width: usize, n_predator: usize) -> Self {
        EnvConfig {
            domain: Domain::Pp,
            height,
            width,
            n_predator,
            n_capture: 0,
            fov_radius: default_fov(),
            episode_limit: default_episode_limit(),
            step_penalty: default_step_penalty(),
        }
    }

    pub fn pcp(height: usize, width: usize, n_predator: usize, n_capture: usize) -> Self {
        EnvConfig {
            domain: Domain::Pcp,
            n_capture,
            ..EnvConfig::pp(height, width, n_predator)
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.height < 2 || self.width < 2 {
            return Err(EnvError::Config(format!(
                "grid must be at least 2x2, got {}x{}",
                self.height, self.width
            )));
        }
        if self.n_predator < 1 {
            return Err(EnvError::Config("need at least one predator".into()));
        }
        match self.domain {
            Domain::Pp if self.n_capture != 0 => {
                return Err(EnvError::Config("pp does not allow capture agents".into()))
            }
            Domain::Pcp if self.n_capture < 1 => {
                return Err(EnvError::Config("pcp needs at least one capture agent".into()))
            }
            _ => {}
        }
        if self.episode_limit == 0 {
            return Err(EnvError::Config("episode_limit must be positive".into()));
        }
        if self.step_penalty.is_nan() || self.step_penalty <= 0.0 {
            return Err(EnvError::Config("step_penalty must be positive".into()));
        }
        Ok(())
    }

    pub fn n_agents(&self) -> usize {
        self.n_predator + self.n_capture
    }

    fn fov_side(&self) -> usize {
        2 * self.fov_radius + 1
    }

    pub fn obs_dim(&self) -> usize {
        self.fov_side() * self.fov_side() * FOV_FLAGS
    }

    pub fn state_dim(&self) -> usize {
        self.height * self.width
    }

    /// The team this config induces: one predator class, plus a capture
    /// class in PCP. Predators sense; capture agents do not.
    pub fn team(&self) -> TeamSpec {
        let predator = ClassSpec {
            class_id: "PREDATOR".into(),
            short_code: 'P',
            action_labels: vec!["up", "down", "left", "right", "stay"],
            has_observation: true,
            state_dim: self.state_dim(),
            obs_dim: self.obs_dim(),
        };
        match self.domain {
            Domain::Pp => TeamSpec {
                classes: vec![predator],
                counts: vec![self.n_predator],
            },
            Domain::Pcp => {
                let capture = ClassSpec {
                    class_id: "CAPTURE".into(),
                    short_code: 'A',
                    action_labels: vec!["up", "down", "left", "right", "stay", "capture"],
                    has_observation: false,
                    state_dim: self.state_dim(),
                    obs_dim: 0,
                };
                TeamSpec {
                    classes: vec![predator, capture],
                    counts: vec![self.n_predator, self.n_capture],
                }
            }
        }
    }
}

/// Joint world state of one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    pub grid_height: usize,
    pub grid_width: usize,
    pub agent_positions: Vec<(usize, usize)>,
    pub prey_position: (usize, usize),
    pub timestep: usize,
    pub per_agent_done: Vec<bool>,
}

impl WorldState {
    pub fn all_done(&self) -> bool {
        self.per_agent_done.iter().all(|&d| d)
    }
}

/// Outcome of one joint transition.
#[derive(Clone, Debug)]
pub struct StepResult {
    pub state: WorldState,
    pub per_agent_reward: Vec<f64>,
    pub per_agent_done: Vec<bool>,
    pub episode_done: bool,
}

/// Place agents and prey uniformly at random. Agents may share cells; the
/// prey never starts under an agent. The same seed reproduces the same
/// state bit for bit.
pub fn reset(config: &EnvConfig, seed: u64) -> Result<WorldState, EnvError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = config.n_agents();
    let mut agent_positions = Vec::with_capacity(n);
    for _ in 0..n {
        let r = rng.random_range(0..config.height);
        let c = rng.random_range(0..config.width);
        agent_positions.push((r, c));
    }
    let occupied: std::collections::HashSet<(usize, usize)> =
        agent_positions.iter().copied().collect();
    if occupied.len() == config.height * config.width {
        return Err(EnvError::Config("no free cell left for the prey".into()));
    }
    let prey_position = loop {
        let cell = (
            rng.random_range(0..config.height),
            rng.random_range(0..config.width),
        );
        if !occupied.contains(&cell) {
            break cell;
        }
    };
    Ok(WorldState {
        grid_height: config.height,
        grid_width: config.width,
        agent_positions,
        prey_position,
        timestep: 0,
        per_agent_done: vec![false; n],
    })
}

fn apply_move(pos: (usize, usize), action: usize, h: usize, w: usize) -> (usize, usize) {
    let (r, c) = pos;
    match action {
        ACT_UP => (r.saturating_sub(1), c),
        ACT_DOWN => ((r + 1).min(h - 1), c),
        ACT_LEFT => (r, c.saturating_sub(1)),
        ACT_RIGHT => (r, (c + 1).min(w - 1)),
        // stay and capture leave the agent in place
        _ => (r, c),
    }
}

/// Apply one joint action. Moves are simultaneous, off-grid moves clamp,
/// and the prey is stationary. A predator finishes by standing on the prey
/// cell; a capture agent finishes only by executing `capture` there. Agents
/// pay the step penalty on every step taken before their objective is met,
/// including the step that meets it.
pub fn step(
    config: &EnvConfig,
    state: &WorldState,
    joint_action: &[usize],
) -> Result<StepResult, EnvError> {
    let team = config.team();
    let n = config.n_agents();
    if joint_action.len() != n {
        return Err(EnvError::Contract(format!(
            "joint action has {} entries for {} agents",
            joint_action.len(),
            n
        )));
    }
    if state.timestep >= config.episode_limit {
        return Err(EnvError::Contract("episode already finished".into()));
    }
    for (agent, &a) in joint_action.iter().enumerate() {
        let class = &team.classes[team.class_of(agent)];
        if a >= class.n_actions() {
            return Err(EnvError::Contract(format!(
                "action {a} out of range for class {} (agent {agent})",
                class.class_id
            )));
        }
    }

    let mut next = state.clone();
    let mut rewards = vec![0.0; n];
    for agent in 0..n {
        next.agent_positions[agent] = apply_move(
            state.agent_positions[agent],
            joint_action[agent],
            config.height,
            config.width,
        );
        if !state.per_agent_done[agent] {
            rewards[agent] = -config.step_penalty;
        }
        let class = team.class_of(agent);
        let on_prey = next.agent_positions[agent] == state.prey_position;
        let objective_met = if team.classes[class].has_observation {
            on_prey
        } else {
            on_prey && joint_action[agent] == ACT_CAPTURE
        };
        if objective_met {
            next.per_agent_done[agent] = true;
        }
    }
    next.timestep += 1;
    let episode_done = next.all_done() || next.timestep >= config.episode_limit;
    Ok(StepResult {
        per_agent_reward: rewards,
        per_agent_done: next.per_agent_done.clone(),
        episode_done,
        state: next,
    })
}

/// One field-of-view cell. Presence flags count every agent except the
/// observer itself.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FovCell {
    pub predator_present: bool,
    pub capture_present: bool,
    pub prey_present: bool,
    pub out_of_grid: bool,
}

/// Observation of a sensing agent: its own location plus the cell flags of
/// the (2v+1)^2 window around it, row-major over (dr, dc) in [-v, v].
#[derive(Clone, Debug, PartialEq)]
pub struct AgentObservation {
    pub self_location_onehot: Vec<f64>,
    pub fov_cells: Vec<FovCell>,
}

impl AgentObservation {
    /// Flatten the window into [predator, capture, prey, out_of_grid] per cell.
    pub fn fov_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.fov_cells.len() * FOV_FLAGS);
        for cell in &self.fov_cells {
            out.push(cell.predator_present as u8 as f64);
            out.push(cell.capture_present as u8 as f64);
            out.push(cell.prey_present as u8 as f64);
            out.push(cell.out_of_grid as u8 as f64);
        }
        out
    }
}

/// What an agent perceives: sensing classes get the full observation,
/// observation-less classes only their own location vector.
#[derive(Clone, Debug, PartialEq)]
pub enum AgentView {
    Full(AgentObservation),
    StateOnly(Vec<f64>),
}

impl AgentView {
    pub fn state_vec(&self) -> &[f64] {
        match self {
            AgentView::Full(obs) => &obs.self_location_onehot,
            AgentView::StateOnly(v) => v,
        }
    }

    pub fn obs_vec(&self) -> Option<Vec<f64>> {
        match self {
            AgentView::Full(obs) => Some(obs.fov_flat()),
            AgentView::StateOnly(_) => None,
        }
    }
}

fn onehot(state: &WorldState, pos: (usize, usize)) -> Vec<f64> {
    let mut v = vec![0.0; state.grid_height * state.grid_width];
    v[pos.0 * state.grid_width + pos.1] = 1.0;
    v
}

/// Build agent `agent`'s view of the state.
pub fn observe(config: &EnvConfig, state: &WorldState, agent: usize) -> Result<AgentView, EnvError> {
    let team = config.team();
    if agent >= team.n_agents() {
        return Err(EnvError::Contract(format!("agent index {agent} out of range")));
    }
    let class = &team.classes[team.class_of(agent)];
    let self_onehot = onehot(state, state.agent_positions[agent]);
    if !class.has_observation {
        return Ok(AgentView::StateOnly(self_onehot));
    }

    let v = config.fov_radius as i64;
    let (ar, ac) = state.agent_positions[agent];
    let mut cells = Vec::with_capacity(config.fov_side() * config.fov_side());
    for dr in -v..=v {
        for dc in -v..=v {
            let r = ar as i64 + dr;
            let c = ac as i64 + dc;
            if r < 0 || c < 0 || r >= state.grid_height as i64 || c >= state.grid_width as i64 {
                cells.push(FovCell {
                    out_of_grid: true,
                    ..FovCell::default()
                });
                continue;
            }
            let cell_pos = (r as usize, c as usize);
            let mut cell = FovCell::default();
            for (other, &pos) in state.agent_positions.iter().enumerate() {
                if other == agent || pos != cell_pos {
                    continue;
                }
                if team.classes[team.class_of(other)].has_observation {
                    cell.predator_present = true;
                } else {
                    cell.capture_present = true;
                }
            }
            cell.prey_present = state.prey_position == cell_pos;
            cells.push(cell);
        }
    }
    Ok(AgentView::Full(AgentObservation {
        self_location_onehot: self_onehot,
        fov_cells: cells,
    }))
}

/// Global facts an environment exposes for the state summary node.
#[derive(Clone, Debug)]
pub struct EnvSummary {
    pub class_counts: Vec<usize>,
    pub grid_height: usize,
    pub grid_width: usize,
    pub timestep: usize,
    pub episode_limit: usize,
}

/// Rollout-facing abstraction over an episodic multi-agent environment.
pub trait Environment: Send {
    fn team(&self) -> &TeamSpec;
    fn summary(&self) -> EnvSummary;
    fn reset(&mut self, seed: u64) -> Result<(), EnvError>;
    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult, EnvError>;
    fn view(&self, agent: usize) -> Result<AgentView, EnvError>;
    /// Coordinates used for communication-range checks.
    fn positions(&self) -> Vec<(i64, i64)>;
    fn timestep(&self) -> usize;
    fn episode_limit(&self) -> usize;
    fn episode_done(&self) -> bool;
    /// True when every agent met its per-class objective.
    fn success(&self) -> bool;
}

/// [`Environment`] adapter over the pure gridworld functions.
pub struct GridEnv {
    config: EnvConfig,
    team: TeamSpec,
    state: WorldState,
}

impl GridEnv {
    pub fn new(config: EnvConfig) -> Result<Self, EnvError> {
        let state = reset(&config, 0)?;
        let team = config.team();
        Ok(GridEnv {
            config,
            team,
            state,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }
}

impl Environment for GridEnv {
    fn team(&self) -> &TeamSpec {
        &self.team
    }

    fn summary(&self) -> EnvSummary {
        EnvSummary {
            class_counts: self.team.counts.clone(),
            grid_height: self.config.height,
            grid_width: self.config.width,
            timestep: self.state.timestep,
            episode_limit: self.config.episode_limit,
        }
    }

    fn reset(&mut self, seed: u64) -> Result<(), EnvError> {
        self.state = reset(&self.config, seed)?;
        Ok(())
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult, EnvError> {
        let result = step(&self.config, &self.state, joint_action)?;
        self.state = result.state.clone();
        Ok(result)
    }

    fn view(&self, agent: usize) -> Result<AgentView, EnvError> {
        observe(&self.config, &self.state, agent)
    }

    fn positions(&self) -> Vec<(i64, i64)> {
        self.state
            .agent_positions
            .iter()
            .map(|&(r, c)| (r as i64, c as i64))
            .collect()
    }

    fn timestep(&self) -> usize {
        self.state.timestep
    }

    fn episode_limit(&self) -> usize {
        self.config.episode_limit
    }

    fn episode_done(&self) -> bool {
        self.state.all_done() || self.state.timestep >= self.config.episode_limit
    }

    fn success(&self) -> bool {
        self.state.all_done()
    }
}

pub fn manhattan(a: (usize, usize), b: (usize, usize)) -> usize {
    a.0.abs_diff(b.0) + a.1.abs_diff(b.1)
}
