//! Deterministic-policy-gradient agent: actor, critic, target copies, and
//! adaptive-moment optimizers, consuming batches from either replay memory.

use rand::RngCore;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{polyak, Adam, Gradients, MlpNet, OutputActivation};
use crate::replay::ReplayBatch;

/// Agent hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub discount: f64,
    pub polyak_tau: f64,
    pub exploration_noise_std: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub hidden: Vec<usize>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            discount: 0.99,
            polyak_tau: 0.005,
            exploration_noise_std: 0.1,
            actor_lr: 4e-4,
            critic_lr: 1e-3,
            hidden: vec![64, 64],
        }
    }
}

/// Losses reported by one training step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Losses {
    pub critic_mse: f64,
    /// Mean critic value of the actor's actions before the update.
    pub actor_objective: f64,
}

const ACTOR_FINAL_INIT: f64 = 3e-3;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DdpgAgent {
    actor: MlpNet,
    critic: MlpNet,
    actor_target: MlpNet,
    critic_target: MlpNet,
    actor_opt: Adam,
    critic_opt: Adam,
    cfg: AgentConfig,
    state_dim: usize,
    action_dim: usize,
    action_low: Vec<f64>,
    action_high: Vec<f64>,
}

impl DdpgAgent {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        action_low: Vec<f64>,
        action_high: Vec<f64>,
        cfg: AgentConfig,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        if action_low.len() != action_dim || action_high.len() != action_dim {
            return Err(Error::config("action bounds must match the action dimension"));
        }
        if action_low.iter().zip(&action_high).any(|(l, h)| l >= h) {
            return Err(Error::config("action bounds must be nonempty intervals"));
        }
        if !(0.0..1.0).contains(&cfg.discount) {
            return Err(Error::config("discount must lie in [0, 1)"));
        }
        let mut actor_sizes = vec![state_dim];
        actor_sizes.extend_from_slice(&cfg.hidden);
        actor_sizes.push(action_dim);
        let mut critic_sizes = vec![state_dim + action_dim];
        critic_sizes.extend_from_slice(&cfg.hidden);
        critic_sizes.push(1);

        let mut actor = MlpNet::new(&actor_sizes, OutputActivation::Tanh, rng)?;
        actor.reinit_final_uniform(ACTOR_FINAL_INIT, rng);
        let critic = MlpNet::new(&critic_sizes, OutputActivation::Identity, rng)?;
        let actor_target = actor.clone();
        let critic_target = critic.clone();
        let actor_opt = Adam::new(&actor, cfg.actor_lr);
        let critic_opt = Adam::new(&critic, cfg.critic_lr);
        Ok(DdpgAgent {
            actor,
            critic,
            actor_target,
            critic_target,
            actor_opt,
            critic_opt,
            cfg,
            state_dim,
            action_dim,
            action_low,
            action_high,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn actor(&self) -> &MlpNet {
        &self.actor
    }

    pub fn critic(&self) -> &MlpNet {
        &self.critic
    }

    pub fn actor_target(&self) -> &MlpNet {
        &self.actor_target
    }

    pub fn critic_target(&self) -> &MlpNet {
        &self.critic_target
    }

    /// Maps the actor's tanh output onto the action interval.
    fn scale_action(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(ui, (lo, hi))| 0.5 * (lo + hi) + 0.5 * (hi - lo) * ui)
            .collect()
    }

    /// Derivative of the action scaling per dimension.
    fn scale_slope(&self, dim: usize) -> f64 {
        0.5 * (self.action_high[dim] - self.action_low[dim])
    }

    /// Actor action for a state; adds clipped Gaussian exploration noise
    /// when `explore` is set. Evaluation calls use `explore = false` and are
    /// fully deterministic.
    pub fn select_action(
        &self,
        state: &[f64],
        explore: bool,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<f64>> {
        if state.len() != self.state_dim {
            return Err(Error::config(format!(
                "state dimension {} does not match agent dimension {}",
                state.len(),
                self.state_dim
            )));
        }
        let u = self.actor.forward(state)?;
        let mut action = self.scale_action(&u);
        if explore {
            let noise = Normal::new(0.0, self.cfg.exploration_noise_std)
                .expect("noise std is finite and nonnegative");
            for (a, (lo, hi)) in action
                .iter_mut()
                .zip(self.action_low.iter().zip(&self.action_high))
            {
                *a = (*a + noise.sample(rng)).clamp(*lo, *hi);
            }
        }
        Ok(action)
    }

    /// Temporal-difference targets `y_i = r_i + gamma * (1 - d_i) * Q'(s'_i, mu'(s'_i))`.
    /// Fractional done flags act as soft termination.
    pub fn td_targets(&self, batch: &ReplayBatch) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Err(Error::config("batch must be non-empty"));
        }
        let mut targets = Vec::with_capacity(batch.len());
        for t in batch.iter() {
            let u = self.actor_target.forward(&t.next_state)?;
            let a = self.scale_action(&u);
            let mut input = t.next_state.clone();
            input.extend_from_slice(&a);
            let q = self.critic_target.forward(&input)?[0];
            targets.push(t.reward + self.cfg.discount * (1.0 - t.done) * q);
        }
        Ok(targets)
    }

    /// One training step: critic regression toward the TD targets, actor
    /// ascent on the critic's value of its own actions, then Polyak target
    /// updates. Deterministic given the batch.
    pub fn train_step(&mut self, batch: &ReplayBatch) -> Result<Losses> {
        let targets = self.td_targets(batch)?;
        let scale = 1.0 / batch.len() as f64;

        let mut critic_grads = Gradients::zeros_like(&self.critic);
        let mut critic_mse = 0.0;
        for (t, y) in batch.iter().zip(&targets) {
            let mut input = t.state.clone();
            input.extend_from_slice(&t.action);
            let cache = self.critic.forward_cached(&input)?;
            let q = cache.output()[0];
            let residual = q - y;
            critic_mse += residual * residual * scale;
            self.critic
                .backward_accumulate(&cache, &[2.0 * residual * scale], &mut critic_grads);
        }
        self.critic_opt.step(&mut self.critic, &critic_grads);

        let mut actor_grads = Gradients::zeros_like(&self.actor);
        let mut actor_objective = 0.0;
        for t in batch.iter() {
            let actor_cache = self.actor.forward_cached(&t.state)?;
            let action = self.scale_action(actor_cache.output());
            let mut input = t.state.clone();
            input.extend_from_slice(&action);
            let critic_cache = self.critic.forward_cached(&input)?;
            actor_objective += critic_cache.output()[0] * scale;
            let (_, dq_dinput) = self.critic.backward(&critic_cache, &[1.0]);
            // Ascend the critic: push the actor's tanh output along the
            // action slice of the critic's input gradient.
            let upstream: Vec<f64> = dq_dinput[self.state_dim..]
                .iter()
                .enumerate()
                .map(|(dim, g)| -g * self.scale_slope(dim) * scale)
                .collect();
            self.actor
                .backward_accumulate(&actor_cache, &upstream, &mut actor_grads);
        }
        self.actor_opt.step(&mut self.actor, &actor_grads);

        polyak(&mut self.actor_target, &self.actor, self.cfg.polyak_tau)?;
        polyak(&mut self.critic_target, &self.critic, self.cfg.polyak_tau)?;

        Ok(Losses {
            critic_mse,
            actor_objective,
        })
    }
}
