//! Two-armed bandit wrapped as a one-step [`Environment`].
//!
//! Used by the trainer's sanity checks: a single observation-less agent,
//! two actions, reward 1 for the rewarded arm and 0 otherwise. Analytic
//! expectations for the policy gradient are easy to write down here, which
//! makes the bandit the reference point for update correctness.

use super::{
    AgentView, ClassSpec, EnvError, EnvSummary, Environment, StepResult, TeamSpec, WorldState,
};

pub struct BanditEnv {
    team: TeamSpec,
    rewarded_arm: usize,
    pulled: bool,
}

impl BanditEnv {
    pub fn new(rewarded_arm: usize) -> Self {
        assert!(rewarded_arm < 2);
        let class = ClassSpec {
            class_id: "BANDIT".into(),
            short_code: 'B',
            action_labels: vec!["arm_0", "arm_1"],
            has_observation: false,
            state_dim: 1,
            obs_dim: 0,
        };
        BanditEnv {
            team: TeamSpec {
                classes: vec![class],
                counts: vec![1],
            },
            rewarded_arm,
            pulled: false,
        }
    }
}

impl Environment for BanditEnv {
    fn team(&self) -> &TeamSpec {
        &self.team
    }

    fn summary(&self) -> EnvSummary {
        EnvSummary {
            class_counts: vec![1],
            grid_height: 1,
            grid_width: 1,
            timestep: self.pulled as usize,
            episode_limit: 1,
        }
    }

    fn reset(&mut self, _seed: u64) -> Result<(), EnvError> {
        self.pulled = false;
        Ok(())
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult, EnvError> {
        if self.pulled {
            return Err(EnvError::Contract("bandit episode already finished".into()));
        }
        if joint_action.len() != 1 || joint_action[0] >= 2 {
            return Err(EnvError::Contract("bandit takes one action in {0, 1}".into()));
        }
        self.pulled = true;
        let reward = if joint_action[0] == self.rewarded_arm {
            1.0
        } else {
            0.0
        };
        Ok(StepResult {
            state: WorldState {
                grid_height: 1,
                grid_width: 1,
                agent_positions: vec![(0, 0)],
                prey_position: (0, 0),
                timestep: 1,
                per_agent_done: vec![true],
            },
            per_agent_reward: vec![reward],
            per_agent_done: vec![true],
            episode_done: true,
        })
    }

    fn view(&self, agent: usize) -> Result<AgentView, EnvError> {
        if agent != 0 {
            return Err(EnvError::Contract("bandit has a single agent".into()));
        }
        Ok(AgentView::StateOnly(vec![1.0]))
    }

    fn positions(&self) -> Vec<(i64, i64)> {
        vec![(0, 0)]
    }

    fn timestep(&self) -> usize {
        self.pulled as usize
    }

    fn episode_limit(&self) -> usize {
        1
    }

    fn episode_done(&self) -> bool {
        self.pulled
    }

    fn success(&self) -> bool {
        self.pulled
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rewarded_arm_pays_one() {
        let mut env = BanditEnv::new(0);
        env.reset(0).unwrap();
        let r = env.step(&[0]).unwrap();
        assert_eq!(r.per_agent_reward, vec![1.0]);
        assert!(r.episode_done);

        env.reset(0).unwrap();
        let r = env.step(&[1]).unwrap();
        assert_eq!(r.per_agent_reward, vec![0.0]);
    }
}
