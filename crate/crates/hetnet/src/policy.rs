//! HetNet: the heterogeneous policy network.
//!
//! Per class, a state stream and (for sensing classes) an observation
//! stream are each preprocessed by one fully-connected layer followed by
//! one LSTM cell; the stream outputs are concatenated into the agent's
//! node feature. Three stacked multi-head HetGAT layers then perform three
//! rounds of message passing. The final layer emits one feature per action
//! for each agent (softmax gives the class-wise stochastic policy) and an
//! embedding for the SSN, from which the selected critic head predicts
//! state values during training. Weights are shared across all agents of a
//! class, so trained weights can be copied onto each robot and executed
//! with purely local message passing.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvSummary, Environment, TeamSpec};
use crate::hetgat::{Activation, ForwardStats, HetGatLayer, Merge};
use crate::hetgraph::{
    build_topology, edge_type_names, edge_type_table, ssn_feature, GraphTopology, SsnNorm,
};
use crate::mat::Mat;
use crate::nn::{Linear, LstmCell, ParamStore};
use crate::tape::{Tape, Var};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("contract violation: {0}")]
    Contract(String),
}

/// Critic wiring used during centralized training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticArch {
    /// One value from the SSN embedding, shared by every agent.
    Centralized,
    /// One value per class, all read off the SSN embedding.
    PerClass,
    /// One value per agent from [SSN embedding || agent embedding] through
    /// a class-specific head.
    PerAgent,
}

/// Network block of the experiment config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Width of each preprocessing fully-connected layer.
    #[serde(default = "default_fc_width")]
    pub fc_width: usize,
    /// Hidden width of each preprocessing LSTM stream.
    #[serde(default = "default_mem_width")]
    pub mem_width: usize,
    /// Per-head feature count of the two hidden HetGAT layers.
    #[serde(default = "default_gat_features")]
    pub gat_features: usize,
    #[serde(default = "default_heads")]
    pub attention_heads: usize,
    /// SSN output width of the final layer (the critic input).
    #[serde(default = "default_ssn_out")]
    pub ssn_out: usize,
    #[serde(default = "default_critic")]
    pub critic: CriticArch,
    /// Communication range in cells (Chebyshev); `None` = unlimited.
    #[serde(default)]
    pub comm_range: Option<u64>,
    #[serde(default)]
    pub ssn_norm: SsnNorm,
}

fn default_fc_width() -> usize {
    32
}
fn default_mem_width() -> usize {
    32
}
fn default_gat_features() -> usize {
    16
}
fn default_heads() -> usize {
    4
}
fn default_ssn_out() -> usize {
    32
}
fn default_critic() -> CriticArch {
    CriticArch::Centralized
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            fc_width: default_fc_width(),
            mem_width: default_mem_width(),
            gat_features: default_gat_features(),
            attention_heads: default_heads(),
            ssn_out: default_ssn_out(),
            critic: default_critic(),
            comm_range: None,
            ssn_norm: SsnNorm::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Execute,
}

struct Stream {
    fc: Linear,
    lstm: LstmCell,
}

struct ClassPreprocessor {
    obs: Option<Stream>,
    state: Stream,
}

enum CriticHeads {
    Centralized(Linear),
    PerClass(Vec<Linear>),
    PerAgent(Vec<Linear>),
}

/// Recurrent memory carried across the steps of one episode, as plain
/// values. Reset to zeros at every episode start.
#[derive(Clone, Debug)]
pub struct MemoryState {
    streams: Vec<StreamMemory>,
}

#[derive(Clone, Debug)]
struct StreamMemory {
    obs: Option<(Mat, Mat)>,
    state: (Mat, Mat),
}

/// Tape-resident memory used while recording an episode for backprop
/// through time.
pub struct MemVars {
    streams: Vec<StreamVars>,
}

struct StreamVars {
    obs: Option<(Var, Var)>,
    state: (Var, Var),
}

impl MemoryState {
    pub fn zeros(team: &TeamSpec, cfg: &ModelConfig) -> Self {
        let streams = team
            .classes
            .iter()
            .zip(&team.counts)
            .map(|(class, &n)| StreamMemory {
                obs: class
                    .has_observation
                    .then(|| (Mat::zeros(n, cfg.mem_width), Mat::zeros(n, cfg.mem_width))),
                state: (Mat::zeros(n, cfg.mem_width), Mat::zeros(n, cfg.mem_width)),
            })
            .collect();
        MemoryState { streams }
    }
}

impl MemVars {
    pub fn from_state(tape: &mut Tape, mem: &MemoryState) -> Self {
        let streams = mem
            .streams
            .iter()
            .map(|s| StreamVars {
                obs: s
                    .obs
                    .as_ref()
                    .map(|(h, c)| (tape.constant(h.clone()), tape.constant(c.clone()))),
                state: (
                    tape.constant(s.state.0.clone()),
                    tape.constant(s.state.1.clone()),
                ),
            })
            .collect();
        MemVars { streams }
    }

    pub fn to_state(&self, tape: &Tape) -> MemoryState {
        let streams = self
            .streams
            .iter()
            .map(|s| StreamMemory {
                obs: s
                    .obs
                    .map(|(h, c)| (tape.value(h).clone(), tape.value(c).clone())),
                state: (
                    tape.value(s.state.0).clone(),
                    tape.value(s.state.1).clone(),
                ),
            })
            .collect();
        MemoryState { streams }
    }
}

/// Per-step inputs to the network, stacked per class.
#[derive(Clone, Debug)]
pub struct StepInputs {
    /// Per class: (n_i x obs_dim), only for sensing classes.
    pub obs: Vec<Option<Mat>>,
    /// Per class: (n_i x state_dim).
    pub state: Vec<Mat>,
    pub positions: Vec<(i64, i64)>,
    pub summary: EnvSummary,
}

/// Gather per-class input matrices from a live environment.
pub fn gather_inputs(env: &dyn Environment) -> StepInputs {
    let team = env.team();
    let mut obs = Vec::with_capacity(team.n_classes());
    let mut state = Vec::with_capacity(team.n_classes());
    for class in 0..team.n_classes() {
        let members = team.members(class);
        let n = members.len();
        let mut state_rows: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut obs_rows: Vec<Vec<f64>> = Vec::with_capacity(n);
        for agent in members {
            let view = env.view(agent).expect("agent index in range");
            state_rows.push(view.state_vec().to_vec());
            if let Some(o) = view.obs_vec() {
                obs_rows.push(o);
            }
        }
        let sd = state_rows[0].len();
        let mut smat = Mat::zeros(n, sd);
        for (r, row) in state_rows.iter().enumerate() {
            smat.row_mut(r).copy_from_slice(row);
        }
        state.push(smat);
        if team.classes[class].has_observation {
            let od = obs_rows[0].len();
            let mut omat = Mat::zeros(n, od);
            for (r, row) in obs_rows.iter().enumerate() {
                omat.row_mut(r).copy_from_slice(row);
            }
            obs.push(Some(omat));
        } else {
            obs.push(None);
        }
    }
    StepInputs {
        obs,
        state,
        positions: env.positions(),
        summary: env.summary(),
    }
}

/// Critic outputs for one step, still on the tape.
pub enum CriticVars {
    Centralized(Var),
    PerClass(Vec<Var>),
    PerAgent(Vec<Var>),
}

impl CriticVars {
    /// Baseline value seen by each agent (global agent order).
    pub fn per_agent_values(&self, tape: &Tape, team: &TeamSpec) -> Vec<f64> {
        match self {
            CriticVars::Centralized(v) => vec![tape.value(*v).item(); team.n_agents()],
            CriticVars::PerClass(vs) => {
                let mut out = Vec::with_capacity(team.n_agents());
                for (class, v) in vs.iter().enumerate() {
                    out.extend(std::iter::repeat_n(
                        tape.value(*v).item(),
                        team.counts[class],
                    ));
                }
                out
            }
            CriticVars::PerAgent(vs) => {
                let mut out = Vec::with_capacity(team.n_agents());
                for v in vs {
                    let m = tape.value(*v);
                    for r in 0..m.rows() {
                        out.push(m.get(r, 0));
                    }
                }
                out
            }
        }
    }
}

/// Tape-level outputs of one forward step.
pub struct StepVars {
    /// Per class: (n_i x n_actions) raw logits.
    pub logits: Vec<Var>,
    /// Per class: row log-softmax of the logits.
    pub log_probs: Vec<Var>,
    pub ssn_embedding: Option<Var>,
    pub critic: Option<CriticVars>,
    pub stats: ForwardStats,
}

/// Plain-value outputs of one forward step, for rollouts and evaluation.
pub struct StepEval {
    /// Per class: (n_i x n_actions) action distributions.
    pub dists: Vec<Mat>,
    /// Per class: (n_i x n_actions) log-probabilities.
    pub log_probs: Vec<Mat>,
    /// Baseline value per agent (train mode only).
    pub values: Option<Vec<f64>>,
    pub ssn_ops: usize,
}

pub struct HetNet {
    pub cfg: ModelConfig,
    pub team: TeamSpec,
    preprocessors: Vec<ClassPreprocessor>,
    layers: Vec<HetGatLayer>,
    critic: CriticHeads,
}

impl HetNet {
    /// Build the network and its parameter store. The parameter layout is a
    /// pure function of (cfg, team); `seed` only randomizes initial values.
    pub fn build(cfg: ModelConfig, team: TeamSpec, seed: u64) -> (Self, ParamStore) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_classes = team.n_classes();

        let preprocessors: Vec<ClassPreprocessor> = team
            .classes
            .iter()
            .map(|class| {
                let tag = class.short_code;
                let state = Stream {
                    fc: Linear::new(
                        &mut store,
                        &format!("pre.{tag}.state.fc"),
                        class.state_dim,
                        cfg.fc_width,
                        &mut rng,
                    ),
                    lstm: LstmCell::new(
                        &mut store,
                        &format!("pre.{tag}.state.lstm"),
                        cfg.fc_width,
                        cfg.mem_width,
                        &mut rng,
                    ),
                };
                let obs = class.has_observation.then(|| Stream {
                    fc: Linear::new(
                        &mut store,
                        &format!("pre.{tag}.obs.fc"),
                        class.obs_dim,
                        cfg.fc_width,
                        &mut rng,
                    ),
                    lstm: LstmCell::new(
                        &mut store,
                        &format!("pre.{tag}.obs.lstm"),
                        cfg.fc_width,
                        cfg.mem_width,
                        &mut rng,
                    ),
                });
                ClassPreprocessor { obs, state }
            })
            .collect();

        let edge_types = edge_type_table(n_classes, true);
        let edge_names = edge_type_names(&team, true);
        let mut type_names: Vec<String> = team
            .classes
            .iter()
            .map(|c| c.short_code.to_string())
            .collect();
        type_names.push("S".into());

        let feature_dim = |class: usize| -> usize {
            if team.classes[class].has_observation {
                2 * cfg.mem_width
            } else {
                cfg.mem_width
            }
        };
        let ssn_in = 4 + n_classes;
        let hidden = cfg.attention_heads * cfg.gat_features;

        let mut in1: Vec<usize> = (0..n_classes).map(feature_dim).collect();
        in1.push(ssn_in);
        let out1 = vec![cfg.gat_features; n_classes + 1];
        let in2 = vec![hidden; n_classes + 1];
        let out2 = vec![cfg.gat_features; n_classes + 1];
        let in3 = vec![hidden; n_classes + 1];
        let mut out3: Vec<usize> = team.classes.iter().map(|c| c.n_actions()).collect();
        out3.push(cfg.ssn_out);

        let layers = vec![
            HetGatLayer::new(
                &mut store,
                "gat1",
                &in1,
                &out1,
                &edge_types,
                &type_names,
                &edge_names,
                cfg.attention_heads,
                Merge::Concat,
                Activation::Elu,
                &mut rng,
            ),
            HetGatLayer::new(
                &mut store,
                "gat2",
                &in2,
                &out2,
                &edge_types,
                &type_names,
                &edge_names,
                cfg.attention_heads,
                Merge::Concat,
                Activation::Elu,
                &mut rng,
            ),
            HetGatLayer::new(
                &mut store,
                "gat3",
                &in3,
                &out3,
                &edge_types,
                &type_names,
                &edge_names,
                cfg.attention_heads,
                Merge::Average,
                Activation::Identity,
                &mut rng,
            ),
        ];

        let critic = match cfg.critic {
            CriticArch::Centralized => CriticHeads::Centralized(Linear::new(
                &mut store,
                "critic.central",
                cfg.ssn_out,
                1,
                &mut rng,
            )),
            CriticArch::PerClass => CriticHeads::PerClass(
                team.classes
                    .iter()
                    .map(|c| {
                        Linear::new(
                            &mut store,
                            &format!("critic.class.{}", c.short_code),
                            cfg.ssn_out,
                            1,
                            &mut rng,
                        )
                    })
                    .collect(),
            ),
            CriticArch::PerAgent => CriticHeads::PerAgent(
                team.classes
                    .iter()
                    .map(|c| {
                        Linear::new(
                            &mut store,
                            &format!("critic.agent.{}", c.short_code),
                            cfg.ssn_out + c.n_actions(),
                            1,
                            &mut rng,
                        )
                    })
                    .collect(),
            ),
        };

        (
            HetNet {
                cfg,
                team,
                preprocessors,
                layers,
                critic,
            },
            store,
        )
    }

    /// Parameter ids of the critic heads (used to verify that the baseline
    /// receives no policy gradient).
    pub fn critic_param_names(&self) -> Vec<&'static str> {
        vec!["critic"]
    }

    /// Preprocess one class's inputs: FC + ELU + LSTM per stream, streams
    /// concatenated (observation stream first). Advances the memory vars.
    pub fn preprocess(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        class: usize,
        obs: Option<Var>,
        state: Var,
        mem: &mut MemVars,
    ) -> Result<Var, PolicyError> {
        let pre = &self.preprocessors[class];
        let class_spec = &self.team.classes[class];
        if class_spec.has_observation != obs.is_some() {
            return Err(PolicyError::Contract(format!(
                "class {} expects observation={}, got {}",
                class_spec.class_id,
                class_spec.has_observation,
                obs.is_some()
            )));
        }
        let svars = &mut mem.streams[class];

        let run_stream = |tape: &mut Tape, stream: &Stream, input: Var, hc: (Var, Var)| {
            let x = stream.fc.forward(tape, store, input);
            let x = tape.elu(x);
            stream.lstm.forward(tape, store, x, hc.0, hc.1)
        };

        let (sh, sc) = run_stream(tape, &pre.state, state, svars.state);
        svars.state = (sh, sc);

        if let Some(obs_var) = obs {
            let stream = pre.obs.as_ref().expect("sensing class has an obs stream");
            let prev = svars.obs.expect("sensing class has obs memory");
            let (oh, oc) = run_stream(tape, stream, obs_var, prev);
            svars.obs = Some((oh, oc));
            Ok(tape.concat_cols(oh, sh))
        } else {
            Ok(sh)
        }
    }

    /// Critic heads over the SSN embedding (and agent embeddings for the
    /// per-agent variant). Train mode only.
    pub fn critic_forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ssn_embedding: Var,
        agent_embeddings: &[Var],
        mode: Mode,
    ) -> Result<CriticVars, PolicyError> {
        if mode == Mode::Execute {
            return Err(PolicyError::Contract(
                "critic_forward is a training-only operation".into(),
            ));
        }
        Ok(match &self.critic {
            CriticHeads::Centralized(head) => {
                CriticVars::Centralized(head.forward(tape, store, ssn_embedding))
            }
            CriticHeads::PerClass(heads) => CriticVars::PerClass(
                heads
                    .iter()
                    .map(|h| h.forward(tape, store, ssn_embedding))
                    .collect(),
            ),
            CriticHeads::PerAgent(heads) => CriticVars::PerAgent(
                heads
                    .iter()
                    .enumerate()
                    .map(|(class, h)| {
                        let n = self.team.counts[class];
                        let tiled = tape.repeat_rows(ssn_embedding, n);
                        let joined = tape.concat_cols(tiled, agent_embeddings[class]);
                        h.forward(tape, store, joined)
                    })
                    .collect(),
            ),
        })
    }

    fn topology(&self, positions: &[(i64, i64)], mode: Mode) -> GraphTopology {
        build_topology(
            &self.team,
            positions,
            self.cfg.comm_range,
            mode == Mode::Train,
        )
    }

    /// One full forward step on an existing tape. In train mode the SSN is
    /// appended and the critic evaluated; in execute mode neither exists.
    pub fn forward_step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        inputs: &StepInputs,
        mem: &mut MemVars,
        mode: Mode,
    ) -> Result<StepVars, PolicyError> {
        let n_classes = self.team.n_classes();
        let mut stats = ForwardStats::default();

        let mut features: Vec<Var> = Vec::with_capacity(n_classes + 1);
        for class in 0..n_classes {
            let state = tape.constant(inputs.state[class].clone());
            let obs = inputs.obs[class].as_ref().map(|m| tape.constant(m.clone()));
            features.push(self.preprocess(tape, store, class, obs, state, mem)?);
        }

        let topo = self.topology(&inputs.positions, mode);
        if mode == Mode::Train {
            let before = tape.len();
            let ssn = ssn_feature(&inputs.summary, &self.cfg.ssn_norm);
            let width = ssn.len();
            features.push(tape.constant(Mat::from_vec(1, width, ssn)));
            stats.ssn_ops += tape.len() - before;
        }

        let mut hidden = features;
        for layer in &self.layers {
            hidden = layer.forward_on_tape(tape, store, &topo, &hidden, &mut stats);
        }

        let logits: Vec<Var> = hidden[..n_classes].to_vec();
        let log_probs: Vec<Var> = logits
            .iter()
            .map(|&l| tape.log_softmax_rows(l))
            .collect();

        let (ssn_embedding, critic) = if mode == Mode::Train {
            let before = tape.len();
            let ssn_emb = hidden[n_classes];
            let critic = self.critic_forward(tape, store, ssn_emb, &logits, mode)?;
            stats.ssn_ops += tape.len() - before;
            (Some(ssn_emb), Some(critic))
        } else {
            (None, None)
        };

        Ok(StepVars {
            logits,
            log_probs,
            ssn_embedding,
            critic,
            stats,
        })
    }

    /// Convenience forward that owns its tape: returns per-class action
    /// distributions (rows sum to one) and, in train mode, the per-agent
    /// baseline values. Advances `mem` by one step.
    pub fn policy_forward(
        &self,
        store: &ParamStore,
        inputs: &StepInputs,
        mem: &mut MemoryState,
        mode: Mode,
    ) -> Result<StepEval, PolicyError> {
        let mut tape = Tape::new();
        let mut mem_vars = MemVars::from_state(&mut tape, mem);
        let step = self.forward_step(&mut tape, store, inputs, &mut mem_vars, mode)?;
        *mem = mem_vars.to_state(&tape);
        let log_probs: Vec<Mat> = step
            .log_probs
            .iter()
            .map(|&v| tape.value(v).clone())
            .collect();
        let dists: Vec<Mat> = log_probs.iter().map(|m| m.map(f64::exp)).collect();
        let values = step
            .critic
            .as_ref()
            .map(|c| c.per_agent_values(&tape, &self.team));
        Ok(StepEval {
            dists,
            log_probs,
            values,
            ssn_ops: step.stats.ssn_ops,
        })
    }
}

/// Action selection mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    Greedy,
}

/// Draw or pick an action from one distribution row. Returns the action
/// index and its log-probability. Greedy mode breaks ties toward the
/// lowest index.
pub fn act(dist: &[f64], mode: ActMode, rng: &mut ChaCha8Rng) -> (usize, f64) {
    debug_assert!(!dist.is_empty());
    let idx = match mode {
        ActMode::Greedy => {
            let mut best = 0;
            for (i, &p) in dist.iter().enumerate() {
                if p > dist[best] {
                    best = i;
                }
            }
            best
        }
        ActMode::Sample => {
            let u: f64 = rng.random::<f64>();
            let mut acc = 0.0;
            let mut chosen = dist.len() - 1;
            for (i, &p) in dist.iter().enumerate() {
                acc += p;
                if u < acc {
                    chosen = i;
                    break;
                }
            }
            chosen
        }
    };
    (idx, dist[idx].max(f64::MIN_POSITIVE).ln())
}
