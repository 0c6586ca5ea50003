//! Multi-agent Heterogeneous Actor-Critic.
//!
//! On-policy training: collect a batch of complete episodes under the
//! current per-class policies, compute discounted returns per agent, and
//! take one Adam step on
//!
//!   J(theta_i) = (1/N) sum_{j in class i} sum_t log pi_i(a | .) (G_t - b_t)
//!
//! per class, with the critic value as the baseline b_t. The baseline is a
//! constant during policy differentiation (no gradient flows through the
//! advantage); the critic itself is regressed onto architecture-specific
//! targets: the all-agent mean return (centralized), class-wise mean
//! returns (per-class), or each agent's own return (per-agent).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::rc::Rc;
use thiserror::Error;

use crate::env::{EnvError, Environment, TeamSpec};
use crate::mat::Mat;
use crate::nn::{Adam, ParamStore};
use crate::policy::{
    act, gather_inputs, ActMode, CriticVars, HetNet, MemVars, MemoryState, Mode, PolicyError,
    StepVars,
};
use crate::tape::{Tape, Var};
use crate::util::{mix_seed, parallel_map};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("off-policy batch: collected at params version {batch}, current version {current}")]
    OffPolicy { batch: u64, current: u64 },
    #[error("non-finite loss, update aborted: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Training block of the experiment config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// Episodes per update (the batch size B).
    #[serde(default = "default_batch")]
    pub episodes_per_update: usize,
    #[serde(default = "default_clip")]
    pub grad_clip: f64,
    #[serde(default = "default_critic_weight")]
    pub critic_weight: f64,
    #[serde(default)]
    pub entropy_weight: f64,
    #[serde(default)]
    pub advantage_norm: bool,
    #[serde(default = "default_true")]
    pub use_critic_baseline: bool,
}

fn default_gamma() -> f64 {
    1.0
}
fn default_lr() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    16
}
fn default_clip() -> f64 {
    0.5
}
fn default_critic_weight() -> f64 {
    0.5
}
fn default_true() -> bool {
    true
}

impl TrainConfig {
    pub fn with_epochs(epochs: usize) -> Self {
        TrainConfig {
            epochs,
            gamma: default_gamma(),
            learning_rate: default_lr(),
            episodes_per_update: default_batch(),
            grad_clip: default_clip(),
            critic_weight: default_critic_weight(),
            entropy_weight: 0.0,
            advantage_norm: false,
            use_critic_baseline: true,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let ok = self.epochs > 0
            && (0.0..=1.0).contains(&self.gamma)
            && self.learning_rate > 0.0
            && self.episodes_per_update > 0
            && self.grad_clip > 0.0
            && self.critic_weight >= 0.0
            && self.entropy_weight >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(TrainError::NonFinite("invalid train config values".into()))
        }
    }
}

/// One (action, log-prob, reward, baseline value) record.
#[derive(Clone, Copy, Debug)]
pub struct AgentStepRecord {
    pub action: usize,
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
}

/// One complete on-policy episode.
#[derive(Clone, Debug)]
pub struct EpisodeRecord {
    pub seed: u64,
    /// steps[t][agent], global agent order.
    pub steps: Vec<Vec<AgentStepRecord>>,
    pub length: usize,
    pub success: bool,
}

impl EpisodeRecord {
    pub fn n_agents(&self) -> usize {
        self.steps.first().map_or(0, Vec::len)
    }

    /// Sum of rewards per agent.
    pub fn agent_returns(&self) -> Vec<f64> {
        let n = self.n_agents();
        let mut out = vec![0.0; n];
        for step in &self.steps {
            for (a, rec) in step.iter().enumerate() {
                out[a] += rec.reward;
            }
        }
        out
    }

    /// Team return: mean over agents of their reward sums.
    pub fn team_return(&self) -> f64 {
        let r = self.agent_returns();
        r.iter().sum::<f64>() / r.len() as f64
    }
}

/// A batch of episodes collected under one parameter version.
#[derive(Clone, Debug)]
pub struct TrajectoryBatch {
    pub episodes: Vec<EpisodeRecord>,
    pub params_version: u64,
}

impl TrajectoryBatch {
    pub fn mean_steps(&self) -> f64 {
        self.episodes.iter().map(|e| e.length as f64).sum::<f64>() / self.episodes.len() as f64
    }

    pub fn mean_return(&self) -> f64 {
        self.episodes.iter().map(EpisodeRecord::team_return).sum::<f64>()
            / self.episodes.len() as f64
    }

    pub fn success_rate(&self) -> f64 {
        self.episodes.iter().filter(|e| e.success).count() as f64 / self.episodes.len() as f64
    }

    fn is_finite(&self) -> bool {
        self.episodes.iter().all(|e| {
            e.steps.iter().all(|step| {
                step.iter()
                    .all(|r| r.log_prob.is_finite() && r.reward.is_finite() && r.value.is_finite())
            })
        })
    }
}

/// Roll one episode with the current policy (train-mode forward so critic
/// values are recorded). The action RNG stream is derived from the episode
/// seed, independent of scheduling.
pub fn rollout(
    env: &mut dyn Environment,
    net: &HetNet,
    store: &ParamStore,
    seed: u64,
    act_mode: ActMode,
) -> Result<EpisodeRecord, TrainError> {
    env.reset(seed)?;
    let team = env.team().clone();
    let n = team.n_agents();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xAC7, 0));
    let mut mem = MemoryState::zeros(&team, &net.cfg);
    let mut steps = Vec::new();
    while !env.episode_done() {
        let inputs = gather_inputs(env);
        let eval = net.policy_forward(store, &inputs, &mut mem, Mode::Train)?;
        let values = eval.values.as_ref().expect("train mode records values");
        let mut actions = vec![0usize; n];
        let mut log_probs = vec![0.0f64; n];
        for class in 0..team.n_classes() {
            for (row, agent) in team.members(class).enumerate() {
                let (a, lp) = act(eval.dists[class].row(row), act_mode, &mut rng);
                actions[agent] = a;
                log_probs[agent] = lp;
            }
        }
        let result = env.step(&actions)?;
        steps.push(
            (0..n)
                .map(|a| AgentStepRecord {
                    action: actions[a],
                    log_prob: log_probs[a],
                    reward: result.per_agent_reward[a],
                    value: values[a],
                })
                .collect(),
        );
    }
    Ok(EpisodeRecord {
        seed,
        length: env.timestep(),
        success: env.success(),
        steps,
    })
}

/// Collect `b` complete episodes, fanned out over at most `workers`
/// threads. Episode `i` uses seed `mix_seed(base_seed, epoch, i)`, so the
/// batch is reproducible for any worker count.
pub fn collect_rollouts<E, F>(
    env_factory: F,
    net: &HetNet,
    store: &ParamStore,
    b: usize,
    base_seed: u64,
    epoch: u64,
    workers: usize,
) -> Result<TrajectoryBatch, TrainError>
where
    E: Environment,
    F: Fn() -> E + Sync,
{
    let results = parallel_map(b, workers, |i| {
        let mut env = env_factory();
        rollout(
            &mut env,
            net,
            store,
            mix_seed(base_seed, epoch, i as u64),
            ActMode::Sample,
        )
    });
    let mut episodes = Vec::with_capacity(b);
    for r in results {
        episodes.push(r?);
    }
    Ok(TrajectoryBatch {
        episodes,
        params_version: store.version(),
    })
}

/// Discounted suffix sums: G_t = sum_{t' >= t} gamma^(t'-t) r_{t'},
/// computed backward in one pass.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Per-step regression targets for each critic architecture, derived from
/// per-agent returns `returns[agent][t]`.
#[derive(Clone, Debug, PartialEq)]
pub enum CriticTargets {
    /// target[t] = mean over agents of G_t.
    Centralized(Vec<f64>),
    /// target[t][class] = class-wise mean of G_t.
    PerClass(Vec<Vec<f64>>),
    /// target[agent][t] = that agent's own G_t.
    PerAgent(Vec<Vec<f64>>),
}

pub fn critic_targets(
    returns: &[Vec<f64>],
    arch: crate::policy::CriticArch,
    team: &TeamSpec,
) -> CriticTargets {
    let horizon = returns.first().map_or(0, Vec::len);
    match arch {
        crate::policy::CriticArch::Centralized => {
            let mut out = Vec::with_capacity(horizon);
            for t in 0..horizon {
                let sum: f64 = returns.iter().map(|r| r[t]).sum();
                out.push(sum / returns.len() as f64);
            }
            CriticTargets::Centralized(out)
        }
        crate::policy::CriticArch::PerClass => {
            let mut out = Vec::with_capacity(horizon);
            for t in 0..horizon {
                let per_class: Vec<f64> = (0..team.n_classes())
                    .map(|c| {
                        let members = team.members(c);
                        let sum: f64 = members.clone().map(|a| returns[a][t]).sum();
                        sum / members.len() as f64
                    })
                    .collect();
                out.push(per_class);
            }
            CriticTargets::PerClass(out)
        }
        crate::policy::CriticArch::PerAgent => CriticTargets::PerAgent(returns.to_vec()),
    }
}

/// Sum over classes and agents of log pi(a_t | .) * advantage for one step.
/// Advantages enter as constants: the baseline term receives no gradient.
pub fn policy_score_term(
    tape: &mut Tape,
    step: &StepVars,
    team: &TeamSpec,
    actions: &[usize],
    advantages: &[f64],
) -> Var {
    let mut acc: Option<Var> = None;
    for class in 0..team.n_classes() {
        let members = team.members(class);
        let entries: Rc<Vec<(u32, u32)>> = Rc::new(
            members
                .clone()
                .enumerate()
                .map(|(row, agent)| (row as u32, actions[agent] as u32))
                .collect(),
        );
        let picked = tape.gather_entries(step.log_probs[class], entries);
        let adv: Vec<f64> = members.map(|agent| advantages[agent]).collect();
        let adv = tape.constant(Mat::column(&adv));
        let weighted = tape.hadamard(picked, adv);
        let sum = tape.sum_all(weighted);
        acc = Some(match acc {
            Some(a) => tape.add(a, sum),
            None => sum,
        });
    }
    acc.expect("at least one class")
}

/// Squared-error critic term for one step; returns (sum of squares, count).
pub fn critic_loss_term(
    tape: &mut Tape,
    critic: &CriticVars,
    targets: &CriticTargets,
    t: usize,
    team: &TeamSpec,
) -> (Var, usize) {
    match (critic, targets) {
        (CriticVars::Centralized(v), CriticTargets::Centralized(tg)) => {
            let target = tape.constant(Mat::scalar(tg[t]));
            let d = tape.sub(*v, target);
            let sq = tape.square(d);
            (tape.sum_all(sq), 1)
        }
        (CriticVars::PerClass(vs), CriticTargets::PerClass(tg)) => {
            let mut acc: Option<Var> = None;
            for (class, v) in vs.iter().enumerate() {
                let target = tape.constant(Mat::scalar(tg[t][class]));
                let d = tape.sub(*v, target);
                let sq = tape.square(d);
                let s = tape.sum_all(sq);
                acc = Some(match acc {
                    Some(a) => tape.add(a, s),
                    None => s,
                });
            }
            (acc.expect("classes"), vs.len())
        }
        (CriticVars::PerAgent(vs), CriticTargets::PerAgent(tg)) => {
            let mut acc: Option<Var> = None;
            let mut count = 0;
            for (class, v) in vs.iter().enumerate() {
                let members = team.members(class);
                let col: Vec<f64> = members.map(|agent| tg[agent][t]).collect();
                count += col.len();
                let target = tape.constant(Mat::column(&col));
                let d = tape.sub(*v, target);
                let sq = tape.square(d);
                let s = tape.sum_all(sq);
                acc = Some(match acc {
                    Some(a) => tape.add(a, s),
                    None => s,
                });
            }
            (acc.expect("classes"), count)
        }
        _ => unreachable!("critic variant and target variant always match"),
    }
}

/// Sum of per-agent policy entropies for one step: -sum_a p log p.
pub fn entropy_term(tape: &mut Tape, step: &StepVars, team: &TeamSpec) -> Var {
    let mut acc: Option<Var> = None;
    for class in 0..team.n_classes() {
        let lp = step.log_probs[class];
        let p = tape.exp(lp);
        let plogp = tape.hadamard(p, lp);
        let s = tape.sum_all(plogp);
        acc = Some(match acc {
            Some(a) => tape.add(a, s),
            None => s,
        });
    }
    let total = acc.expect("at least one class");
    tape.scale(total, -1.0)
}

/// Loss components of one update, averaged over the batch.
#[derive(Clone, Copy, Debug, Default)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub grad_norm: f64,
}

/// One on-policy update: replays each episode through the tape (bitwise
/// identical to the rollout forward), assembles the combined loss, clips
/// the global gradient norm and applies one Adam step.
pub fn update<E, F>(
    env_factory: F,
    net: &HetNet,
    store: &mut ParamStore,
    adam: &mut Adam,
    batch: &TrajectoryBatch,
    cfg: &TrainConfig,
) -> Result<UpdateStats, TrainError>
where
    E: Environment,
    F: Fn() -> E,
{
    cfg.validate()?;
    if batch.params_version != store.version() {
        return Err(TrainError::OffPolicy {
            batch: batch.params_version,
            current: store.version(),
        });
    }
    if !batch.is_finite() {
        return Err(TrainError::NonFinite(
            "batch contains non-finite log-probs, rewards or values".into(),
        ));
    }
    let team = net.team.clone();
    let n_agents = team.n_agents() as f64;
    let b = batch.episodes.len() as f64;

    // Returns, targets and advantages are plain numbers, fixed before any
    // gradient flows.
    let mut all_returns: Vec<Vec<Vec<f64>>> = Vec::with_capacity(batch.episodes.len());
    let mut all_advantages: Vec<Vec<Vec<f64>>> = Vec::with_capacity(batch.episodes.len());
    for ep in &batch.episodes {
        let n = ep.n_agents();
        let returns: Vec<Vec<f64>> = (0..n)
            .map(|a| {
                let rewards: Vec<f64> = ep.steps.iter().map(|s| s[a].reward).collect();
                discounted_returns(&rewards, cfg.gamma)
            })
            .collect();
        let advantages: Vec<Vec<f64>> = (0..n)
            .map(|a| {
                (0..ep.length)
                    .map(|t| {
                        let baseline = if cfg.use_critic_baseline {
                            ep.steps[t][a].value
                        } else {
                            0.0
                        };
                        returns[a][t] - baseline
                    })
                    .collect()
            })
            .collect();
        all_returns.push(returns);
        all_advantages.push(advantages);
    }
    if cfg.advantage_norm {
        let flat: Vec<f64> = all_advantages
            .iter()
            .flat_map(|ep| ep.iter().flat_map(|a| a.iter().copied()))
            .collect();
        let mean = flat.iter().sum::<f64>() / flat.len() as f64;
        let var = flat.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / flat.len() as f64;
        let std = var.sqrt().max(1e-8);
        for ep in &mut all_advantages {
            for agent in ep {
                for v in agent {
                    *v = (*v - mean) / std;
                }
            }
        }
    }

    store.zero_grads();
    let mut stats = UpdateStats::default();

    for (ei, ep) in batch.episodes.iter().enumerate() {
        let targets = critic_targets(&all_returns[ei], net.cfg.critic, &team);
        let mut env = env_factory();
        env.reset(ep.seed)?;

        let mut tape = Tape::new();
        let mem_state = MemoryState::zeros(&team, &net.cfg);
        let mut mem = MemVars::from_state(&mut tape, &mem_state);

        let mut policy_sum: Option<Var> = None;
        let mut critic_sum: Option<Var> = None;
        let mut entropy_sum: Option<Var> = None;
        let mut critic_count = 0usize;

        for (t, step_records) in ep.steps.iter().enumerate() {
            let inputs = gather_inputs(&env);
            let step = net.forward_step(&mut tape, store, &inputs, &mut mem, Mode::Train)?;

            let actions: Vec<usize> = step_records.iter().map(|r| r.action).collect();
            let advantages: Vec<f64> = (0..ep.n_agents())
                .map(|a| all_advantages[ei][a][t])
                .collect();
            let score = policy_score_term(&mut tape, &step, &team, &actions, &advantages);
            policy_sum = Some(match policy_sum {
                Some(acc) => tape.add(acc, score),
                None => score,
            });

            let critic = step.critic.as_ref().expect("train mode has critic");
            let (closs, count) = critic_loss_term(&mut tape, critic, &targets, t, &team);
            critic_count += count;
            critic_sum = Some(match critic_sum {
                Some(acc) => tape.add(acc, closs),
                None => closs,
            });

            if cfg.entropy_weight > 0.0 {
                let h = entropy_term(&mut tape, &step, &team);
                entropy_sum = Some(match entropy_sum {
                    Some(acc) => tape.add(acc, h),
                    None => h,
                });
            }

            env.step(&actions)?;
        }

        // loss = -(1/N) * score + cw * mean critic error - ew * (1/N) * entropy
        let policy_loss = tape.scale(policy_sum.expect("episode has steps"), -1.0 / n_agents);
        let critic_loss = tape.scale(
            critic_sum.expect("episode has steps"),
            1.0 / critic_count.max(1) as f64,
        );
        let weighted_critic = tape.scale(critic_loss, cfg.critic_weight);
        let mut loss = tape.add(policy_loss, weighted_critic);
        if let Some(h) = entropy_sum {
            let bonus = tape.scale(h, -cfg.entropy_weight / n_agents);
            loss = tape.add(loss, bonus);
        }
        let loss = tape.scale(loss, 1.0 / b);

        let loss_value = tape.value(loss).item();
        if !loss_value.is_finite() {
            store.zero_grads();
            return Err(TrainError::NonFinite(format!(
                "episode {ei} (seed {}): loss = {loss_value}",
                ep.seed
            )));
        }
        stats.policy_loss += tape.value(policy_loss).item() / b;
        stats.critic_loss += tape.value(critic_loss).item() / b;
        if let Some(h) = entropy_sum {
            stats.entropy += tape.value(h).item() / (b * n_agents * ep.length.max(1) as f64);
        }

        tape.backward(loss, store);
    }

    if !store.grads_finite() {
        store.zero_grads();
        return Err(TrainError::NonFinite("non-finite gradient".into()));
    }
    stats.grad_norm = store.clip_grad_norm(cfg.grad_clip);
    adam.step(store);
    store.zero_grads();
    store.bump_version();
    Ok(stats)
}
