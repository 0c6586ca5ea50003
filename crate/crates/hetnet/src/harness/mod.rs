//! Experiment orchestration: config files, the training loop with
//! checkpoint/resume, the evaluation protocol, and the plot command.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvConfig, EnvError, Environment, GridEnv};
use crate::mahac::{collect_rollouts, update, TrainConfig, TrainError, UpdateStats};
use crate::nn::{Adam, ParamId, ParamStore};
use crate::policy::{act, gather_inputs, ActMode, HetNet, MemoryState, Mode, ModelConfig};
use crate::util::{mix_seed, parallel_map, worker_count};

pub mod checkpoint;
pub mod metrics;
pub mod plot;

use checkpoint::{config_hash, Checkpoint};
use metrics::{MetricsRow, MetricsWriter};

const MODEL_SEED_TAG: u64 = 0x4D0D;
const EVAL_SEED_TAG: u64 = 0xE7A1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("{file}:{line}: {msg}")]
    Csv {
        file: String,
        line: usize,
        msg: String,
    },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Evaluation block of the experiment config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    #[serde(default = "default_eval_episodes")]
    pub episodes: usize,
    #[serde(default = "default_true")]
    pub greedy: bool,
}

fn default_eval_episodes() -> usize {
    100
}
fn default_true() -> bool {
    true
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            episodes: default_eval_episodes(),
            greedy: true,
        }
    }
}

/// Whole experiment description. A stored config plus its seed reproduces a
/// run exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub label: String,
    #[serde(default)]
    pub seed: u64,
    pub env: EnvConfig,
    #[serde(default)]
    pub model: ModelConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub out_dir: Option<String>,
    /// Checkpoint cadence in epochs (a checkpoint is always written at the
    /// end of training).
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
}

fn default_checkpoint_every() -> usize {
    50
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        cfg.env.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    /// Canonical JSON used for hashing and checkpoint embedding.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> u64 {
        config_hash(&self.canonical_json())
    }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// Owns everything a training run needs; resumable from checkpoints.
pub struct Trainer {
    pub config: ExperimentConfig,
    pub net: HetNet,
    pub store: ParamStore,
    pub adam: Adam,
    pub epoch: u64,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(config: ExperimentConfig) -> Result<Self, HarnessError> {
        config.env.validate()?;
        config.train.validate()?;
        let team = config.env.team();
        let (net, store) = HetNet::build(
            config.model.clone(),
            team,
            mix_seed(config.seed, MODEL_SEED_TAG, 0),
        );
        let adam = Adam::new(&store, config.train.learning_rate);
        let rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0x1007, 0));
        Ok(Trainer {
            config,
            net,
            store,
            adam,
            epoch: 0,
            rng,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let json = self.config.canonical_json();
        Checkpoint {
            config_hash: config_hash(&json),
            config_json: json,
            epoch: self.epoch,
            rng_seed: self.rng.get_seed(),
            rng_stream: self.rng.get_stream(),
            rng_word_pos: self.rng.get_word_pos(),
            params: (0..self.store.len())
                .map(|i| {
                    let id = ParamId(i);
                    (self.store.name(id).to_string(), self.store.value(id).clone())
                })
                .collect(),
            adam_t: self.adam.t,
            adam_m: self.adam.m.clone(),
            adam_v: self.adam.v.clone(),
        }
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<(), HarnessError> {
        checkpoint::save(path, &self.checkpoint())
    }

    pub fn from_checkpoint(path: &Path) -> Result<Self, HarnessError> {
        let ckpt = checkpoint::load(path)?;
        let config: ExperimentConfig = serde_json::from_str(&ckpt.config_json)
            .map_err(|e| HarnessError::Checkpoint(format!("embedded config: {e}")))?;
        if config_hash(&ckpt.config_json) != ckpt.config_hash {
            return Err(HarnessError::Checkpoint(
                "config hash does not match embedded config".into(),
            ));
        }
        let mut trainer = Trainer::new(config)?;
        if ckpt.params.len() != trainer.store.len() {
            return Err(HarnessError::Checkpoint(format!(
                "parameter count mismatch: checkpoint {} vs model {}",
                ckpt.params.len(),
                trainer.store.len()
            )));
        }
        for (i, (name, mat)) in ckpt.params.iter().enumerate() {
            let id = ParamId(i);
            if trainer.store.name(id) != name {
                return Err(HarnessError::Checkpoint(format!(
                    "parameter {i} name mismatch: {} vs {name}",
                    trainer.store.name(id)
                )));
            }
            if trainer.store.value(id).shape() != mat.shape() {
                return Err(HarnessError::Checkpoint(format!(
                    "parameter {name} shape mismatch"
                )));
            }
            *trainer.store.value_mut(id) = mat.clone();
        }
        trainer.adam.t = ckpt.adam_t;
        trainer.adam.m = ckpt.adam_m;
        trainer.adam.v = ckpt.adam_v;
        trainer.epoch = ckpt.epoch;
        // The trainer enforces on-policy batches via the store version;
        // align it with the epoch counter.
        for _ in 0..ckpt.epoch {
            trainer.store.bump_version();
        }
        let mut rng = ChaCha8Rng::from_seed(ckpt.rng_seed);
        rng.set_stream(ckpt.rng_stream);
        rng.set_word_pos(ckpt.rng_word_pos);
        trainer.rng = rng;
        Ok(trainer)
    }

    fn env_factory(&self) -> impl Fn() -> GridEnv + Sync + '_ {
        let config = self.config.env.clone();
        move || GridEnv::new(config.clone()).expect("validated env config")
    }

    /// Collect one batch and apply one update. Returns the metrics row
    /// (wall clock filled by the caller).
    pub fn train_epoch(&mut self) -> Result<(MetricsRow, UpdateStats), HarnessError> {
        let workers = worker_count();
        let batch = {
            let factory = self.env_factory();
            collect_rollouts(
                &factory,
                &self.net,
                &self.store,
                self.config.train.episodes_per_update,
                self.config.seed,
                self.epoch,
                workers,
            )?
        };
        let stats = {
            let config = self.config.env.clone();
            update(
                move || GridEnv::new(config.clone()).expect("validated env config"),
                &self.net,
                &mut self.store,
                &mut self.adam,
                &batch,
                &self.config.train,
            )?
        };
        let row = MetricsRow {
            epoch: self.epoch,
            mean_steps: batch.mean_steps(),
            mean_episode_return: batch.mean_return(),
            success_rate: batch.success_rate(),
            policy_loss: stats.policy_loss,
            critic_loss: stats.critic_loss,
            wall_clock_s: 0.0,
        };
        self.epoch += 1;
        Ok((row, stats))
    }

    /// Run the configured number of epochs, appending metrics and writing
    /// checkpoints into `out_dir`. `on_epoch` observes each metrics row.
    pub fn run(
        &mut self,
        out_dir: &Path,
        mut writer: MetricsWriter,
        mut on_epoch: impl FnMut(&MetricsRow),
    ) -> Result<(), HarnessError> {
        let started = Instant::now();
        let ckpt_path = out_dir.join("checkpoint.bin");
        while self.epoch < self.config.train.epochs as u64 {
            let mut t0 = started.elapsed().as_secs_f64();
            let (mut row, _) = self.train_epoch()?;
            let t1 = started.elapsed().as_secs_f64();
            t0 = t1 - t0;
            row.wall_clock_s = t0;
            writer.append(row)?;
            on_epoch(&row);
            if self.config.checkpoint_every > 0
                && self.epoch.is_multiple_of(self.config.checkpoint_every as u64)
            {
                self.save_checkpoint(&ckpt_path)?;
            }
        }
        self.save_checkpoint(&ckpt_path)?;
        Ok(())
    }
}

/// Outcome paths of a `train` invocation.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub out_dir: PathBuf,
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
}

/// The `train` command: fresh run or resume, metrics CSV + checkpoints.
pub fn cmd_train(
    config_path: &Path,
    seed_override: Option<u64>,
    out_override: Option<PathBuf>,
    resume: Option<PathBuf>,
    mut on_epoch: impl FnMut(&MetricsRow),
) -> Result<TrainOutcome, HarnessError> {
    let mut config = ExperimentConfig::load(config_path)?;
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    let out_dir = out_override
        .or_else(|| config.out_dir.as_ref().map(PathBuf::from))
        .ok_or_else(|| {
            HarnessError::Config("no output directory: pass --out or set out_dir".into())
        })?;
    fs::create_dir_all(&out_dir)?;
    let metrics_path = out_dir.join("metrics.csv");

    let (mut trainer, writer) = match resume {
        Some(ckpt_path) => {
            let trainer = Trainer::from_checkpoint(&ckpt_path)?;
            if trainer.config.hash() != config.hash() {
                return Err(HarnessError::Checkpoint(format!(
                    "checkpoint config hash {:016x} does not match config file hash {:016x}",
                    trainer.config.hash(),
                    config.hash()
                )));
            }
            let writer = if metrics_path.exists() {
                MetricsWriter::truncate_from(&metrics_path, trainer.epoch)?;
                MetricsWriter::append_to(&metrics_path)?
            } else {
                MetricsWriter::create(&metrics_path, &config.label, config.seed)?
            };
            (trainer, writer)
        }
        None => {
            if metrics_path.exists() {
                return Err(HarnessError::Config(format!(
                    "output directory {} already holds a run (metrics.csv exists); \
                     choose another directory or pass --resume",
                    out_dir.display()
                )));
            }
            let writer = MetricsWriter::create(&metrics_path, &config.label, config.seed)?;
            (Trainer::new(config.clone())?, writer)
        }
    };

    fs::write(out_dir.join("config.json"), trainer.config.canonical_json())?;
    trainer.run(&out_dir, writer, &mut on_epoch)?;
    Ok(TrainOutcome {
        metrics: metrics_path,
        checkpoint: out_dir.join("checkpoint.bin"),
        out_dir,
    })
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Result of one evaluated episode.
#[derive(Clone, Copy, Debug)]
pub struct EpisodeOutcome {
    pub steps: usize,
    pub team_return: f64,
    pub success: bool,
}

/// Run one episode in execution mode (no SSN, no critic).
pub fn run_episode(
    env: &mut dyn Environment,
    net: &HetNet,
    store: &ParamStore,
    seed: u64,
    act_mode: ActMode,
) -> Result<EpisodeOutcome, HarnessError> {
    env.reset(seed)?;
    let team = env.team().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xAC7, 0));
    let mut mem = MemoryState::zeros(&team, &net.cfg);
    let mut returns = vec![0.0; team.n_agents()];
    while !env.episode_done() {
        let inputs = gather_inputs(env);
        let eval = net
            .policy_forward(store, &inputs, &mut mem, Mode::Execute)
            .map_err(TrainError::from)?;
        debug_assert_eq!(eval.ssn_ops, 0);
        let mut actions = vec![0usize; team.n_agents()];
        for class in 0..team.n_classes() {
            for (row, agent) in team.members(class).enumerate() {
                actions[agent] = act(eval.dists[class].row(row), act_mode, &mut rng).0;
            }
        }
        let result = env.step(&actions)?;
        for (r, &delta) in returns.iter_mut().zip(&result.per_agent_reward) {
            *r += delta;
        }
    }
    Ok(EpisodeOutcome {
        steps: env.timestep(),
        team_return: returns.iter().sum::<f64>() / returns.len() as f64,
        success: env.success(),
    })
}

/// Run one episode under an arbitrary scripted policy (used by baselines
/// and oracles).
pub fn run_scripted_episode(
    env: &mut dyn Environment,
    seed: u64,
    mut policy: impl FnMut(&dyn Environment) -> Vec<usize>,
) -> Result<EpisodeOutcome, HarnessError> {
    env.reset(seed)?;
    let n = env.team().n_agents();
    let mut returns = vec![0.0; n];
    while !env.episode_done() {
        let actions = policy(env);
        let result = env.step(&actions)?;
        for (r, &delta) in returns.iter_mut().zip(&result.per_agent_reward) {
            *r += delta;
        }
    }
    Ok(EpisodeOutcome {
        steps: env.timestep(),
        team_return: returns.iter().sum::<f64>() / n as f64,
        success: env.success(),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedStats {
    pub seed: u64,
    pub episodes: usize,
    pub mean_steps: f64,
    pub std_steps: f64,
    pub stderr_steps: f64,
    pub mean_return: f64,
    pub std_return: f64,
    pub stderr_return: f64,
    pub success_rate: f64,
}

/// Aggregated evaluation statistics. The across-seed spread is reported
/// both as standard deviation and as standard error.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub greedy: bool,
    pub per_seed: Vec<SeedStats>,
    pub mean_steps: f64,
    pub std_steps_across_seeds: f64,
    pub stderr_steps_across_seeds: f64,
    pub mean_return: f64,
    pub std_return_across_seeds: f64,
    pub stderr_return_across_seeds: f64,
    pub success_rate: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Evaluate a policy: `episodes` episodes per entry of `seeds`, execution
/// mode. Episode `i` under seed `s` uses environment seed
/// `mix_seed(s, EVAL_TAG, i)`.
pub fn evaluate<E, F>(
    env_factory: F,
    net: &HetNet,
    store: &ParamStore,
    episodes: usize,
    seeds: &[u64],
    act_mode: ActMode,
    config_hash_hex: String,
) -> Result<EvalReport, HarnessError>
where
    E: Environment,
    F: Fn() -> E + Sync,
{
    let workers = worker_count();
    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let outcomes = parallel_map(episodes, workers, |i| {
            let mut env = env_factory();
            run_episode(
                &mut env,
                net,
                store,
                mix_seed(seed, EVAL_SEED_TAG, i as u64),
                act_mode,
            )
        });
        let mut steps = Vec::with_capacity(episodes);
        let mut rets = Vec::with_capacity(episodes);
        let mut successes = 0usize;
        for o in outcomes {
            let o = o?;
            steps.push(o.steps as f64);
            rets.push(o.team_return);
            successes += o.success as usize;
        }
        let (ms, ss) = mean_std(&steps);
        let (mr, sr) = mean_std(&rets);
        let n = episodes as f64;
        per_seed.push(SeedStats {
            seed,
            episodes,
            mean_steps: ms,
            std_steps: ss,
            stderr_steps: ss / n.sqrt(),
            mean_return: mr,
            std_return: sr,
            stderr_return: sr / n.sqrt(),
            success_rate: successes as f64 / n,
        });
    }
    let seed_steps: Vec<f64> = per_seed.iter().map(|s| s.mean_steps).collect();
    let seed_rets: Vec<f64> = per_seed.iter().map(|s| s.mean_return).collect();
    let (mean_steps, std_steps) = mean_std(&seed_steps);
    let (mean_return, std_return) = mean_std(&seed_rets);
    let k = seeds.len() as f64;
    Ok(EvalReport {
        config_hash: config_hash_hex,
        greedy: act_mode == ActMode::Greedy,
        success_rate: per_seed.iter().map(|s| s.success_rate).sum::<f64>() / k,
        per_seed,
        mean_steps,
        std_steps_across_seeds: std_steps,
        stderr_steps_across_seeds: std_steps / k.sqrt(),
        mean_return,
        std_return_across_seeds: std_return,
        stderr_return_across_seeds: std_return / k.sqrt(),
    })
}

/// The `eval` command: load a checkpoint, rebuild the network, run the
/// evaluation protocol in execution mode.
pub fn cmd_eval(
    checkpoint_path: &Path,
    episodes: Option<usize>,
    act_mode: Option<ActMode>,
    seeds: &[u64],
) -> Result<EvalReport, HarnessError> {
    let trainer = Trainer::from_checkpoint(checkpoint_path)?;
    let episodes = episodes.unwrap_or(trainer.config.eval.episodes);
    let mode = act_mode.unwrap_or(if trainer.config.eval.greedy {
        ActMode::Greedy
    } else {
        ActMode::Sample
    });
    let config = trainer.config.env.clone();
    let hash = format!("{:016x}", trainer.config.hash());
    evaluate(
        move || GridEnv::new(config.clone()).expect("validated env config"),
        &trainer.net,
        &trainer.store,
        episodes,
        seeds,
        mode,
        hash,
    )
}

/// The `plot` command: parse metrics CSVs, group by run label, render.
pub fn cmd_plot(csvs: &[PathBuf], out: &Path) -> Result<(), HarnessError> {
    if csvs.is_empty() {
        return Err(HarnessError::Config("plot needs at least one CSV".into()));
    }
    let mut files = Vec::with_capacity(csvs.len());
    for path in csvs {
        let fallback = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        files.push((fallback, metrics::read_metrics(path)?));
    }
    let groups = plot::group_by_label(&files);
    plot::render_learning_curves(&groups, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(label: &str) -> ExperimentConfig {
        let mut env = EnvConfig::pp(4, 4, 1);
        env.episode_limit = 10;
        ExperimentConfig {
            label: label.into(),
            seed: 3,
            env,
            model: ModelConfig {
                fc_width: 8,
                mem_width: 8,
                gat_features: 4,
                attention_heads: 2,
                ssn_out: 8,
                ..ModelConfig::default()
            },
            train: TrainConfig {
                episodes_per_update: 2,
                ..TrainConfig::with_epochs(2)
            },
            eval: EvalConfig::default(),
            out_dir: None,
            checkpoint_every: 1,
        }
    }

    #[test]
    fn config_roundtrip_preserves_hash() {
        let cfg = tiny_config("t");
        let json = cfg.canonical_json();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn checkpoint_roundtrip_restores_trainer_state() {
        let dir = std::env::temp_dir().join(format!("hetnet-ckpt-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let mut trainer = Trainer::new(tiny_config("ck")).unwrap();
        trainer.train_epoch().unwrap();
        let path = dir.join("c.bin");
        trainer.save_checkpoint(&path).unwrap();
        let restored = Trainer::from_checkpoint(&path).unwrap();
        assert_eq!(restored.epoch, 1);
        assert_eq!(restored.adam.t, trainer.adam.t);
        for i in 0..trainer.store.len() {
            assert_eq!(
                trainer.store.value(ParamId(i)),
                restored.store.value(ParamId(i))
            );
        }
        // Byte-exact: saving the restored trainer reproduces the file.
        let path2 = dir.join("c2.bin");
        restored.save_checkpoint(&path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
        fs::remove_dir_all(&dir).ok();
    }
}
