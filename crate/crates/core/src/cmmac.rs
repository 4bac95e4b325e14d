//! Coordinated multi-agent actor-critic dispatch.
//!
//! Every eAP runs the same actor on its local state; the actor's ReLU+1
//! head is masked by the resource context and L1-normalized into a
//! distribution over {cloud, attached nodes}. A centralized critic scores
//! the global state from the point of view of one agent (global state
//! followed by a one-hot agent index) and a frozen target copy supplies
//! the bootstrap value.

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::{ClusterState, DispatchAction, SlotOutcome};
use crate::error::{Error, Result};
use crate::nn::{masked_softmax, Activation, Adam, Mlp};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CmmacConfig {
    pub gamma: f64,
    /// Weight of the load-imbalance term in the dispatch reward.
    pub epsilon: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    /// Acting agents refresh their copy of the actor this often.
    pub sync_period_slots: u64,
    /// Initial bias of the actor head; keeps ReLU+1 logits out of the
    /// flat region at the start of training.
    pub actor_head_bias: f64,
}

impl Default for CmmacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            epsilon: 1.0,
            actor_lr: 5e-4,
            critic_lr: 5e-4,
            actor_hidden: vec![256, 128, 32],
            critic_hidden: vec![256, 128, 64, 32],
            sync_period_slots: 10,
            actor_head_bias: 1.0,
        }
    }
}

impl CmmacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config("cmmac.gamma", "must lie in (0, 1]"));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::config("cmmac.epsilon", "must be non-negative"));
        }
        if !(self.actor_lr > 0.0) || !(self.critic_lr > 0.0) {
            return Err(Error::config("cmmac.actor_lr", "learning rates must be positive"));
        }
        if self.sync_period_slots == 0 {
            return Err(Error::config("cmmac.sync_period_slots", "must be positive"));
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DispatchReward {
    /// Share of requests resolved in the slot that missed their deadline.
    pub lambda_violation: f64,
    pub xi: f64,
    pub nu: f64,
    pub epsilon: f64,
    pub value: f64,
}

/// `exp(-lambda - epsilon * sigmoid(xi))`.
pub fn dispatch_reward(lambda_violation: f64, xi: f64, epsilon: f64) -> DispatchReward {
    let nu = sigmoid(xi);
    DispatchReward {
        lambda_violation,
        xi,
        nu,
        epsilon,
        value: (-lambda_violation - epsilon * nu).exp(),
    }
}

/// Reward shared by every agent that acted in the slot.
pub fn compute_reward(outcome: &SlotOutcome, epsilon: f64) -> DispatchReward {
    dispatch_reward(outcome.violation_ratio(), outcome.load_std, epsilon)
}

/// One agent's term of the centralized value target.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TargetTerm {
    pub prob: f64,
    pub reward: f64,
    pub next_value: f64,
}

/// `sum_b pi_b (u_b + gamma V'(s_b'))` over the agents that acted.
pub fn critic_target(terms: &[TargetTerm], gamma: f64) -> f64 {
    terms.iter().map(|t| t.prob * (t.reward + gamma * t.next_value)).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Draw from the masked distribution (training).
    Sample,
    /// Take the most likely valid target (evaluation).
    Greedy,
}

/// One transition of one agent.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentRecord {
    pub eap_id: usize,
    pub local: Vec<f64>,
    pub mask: Vec<bool>,
    pub action: usize,
    /// Probability of `action` when it was taken.
    pub prob: f64,
    pub critic_input: Vec<f64>,
    pub next_critic_input: Vec<f64>,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub action: DispatchAction,
    pub local: Vec<f64>,
    pub mask: Vec<bool>,
    pub prob: f64,
    pub critic_input: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TrainStats {
    pub critic_loss: f64,
    pub actor_grad_norm: f64,
    pub mean_advantage: f64,
    pub records: usize,
}

/// Pads a context from an eAP with fewer nodes to the shared action width.
pub fn pad_mask(mask: &[bool], width: usize) -> Vec<bool> {
    let mut m = mask.to_vec();
    m.resize(width, false);
    m
}

#[derive(Clone, Debug)]
pub struct Cmmac {
    pub config: CmmacConfig,
    actor: Mlp,
    /// Copy used for acting; refreshed every `sync_period_slots`.
    acting: Mlp,
    critic: Mlp,
    target: Mlp,
    actor_opt: Adam,
    critic_opt: Adam,
    /// Reused gradient buffers.
    actor_grads: Vec<f64>,
    critic_grads: Vec<f64>,
    eap_count: usize,
    slots_since_sync: u64,
    rng: ChaCha8Rng,
}

impl Cmmac {
    pub fn new(
        config: CmmacConfig,
        local_len: usize,
        action_len: usize,
        global_len: usize,
        eap_count: usize,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut actor = Mlp::with_hidden(local_len, &config.actor_hidden, action_len, Activation::ReluPlusOne, &mut rng)?;
        let head = actor.layer_count() - 1;
        actor.bias_mut(head).fill(config.actor_head_bias);
        let critic = Mlp::with_hidden(global_len + eap_count, &config.critic_hidden, 1, Activation::Linear, &mut rng)?;
        Ok(Self {
            actor_opt: Adam::new(actor.param_count(), config.actor_lr),
            critic_opt: Adam::new(critic.param_count(), config.critic_lr),
            actor_grads: actor.zero_grads(),
            critic_grads: critic.zero_grads(),
            acting: actor.clone(),
            target: critic.clone(),
            actor,
            critic,
            config,
            eap_count,
            slots_since_sync: 0,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ac70),
        })
    }

    /// Sizes the networks for `state`'s topology.
    pub fn for_cluster(config: CmmacConfig, state: &ClusterState, seed: u64) -> Result<Self> {
        Self::new(
            config,
            state.local_state_len(),
            state.max_nodes_per_eap() + 1,
            state.global_state_len(),
            state.eap_count(),
            seed,
        )
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn acting_actor(&self) -> &Mlp {
        &self.acting
    }

    pub fn critic(&self) -> &Mlp {
        &self.critic
    }

    pub fn target(&self) -> &Mlp {
        &self.target
    }

    /// Replaces all networks, e.g. from checkpoints; shapes must match.
    pub fn load_networks(&mut self, actor: Mlp, critic: Mlp, target: Mlp) -> Result<()> {
        if !actor.same_shape(&self.actor) || !critic.same_shape(&self.critic) || !target.same_shape(&self.target) {
            return Err(Error::Incompatible("cmmac network shapes do not match the topology".into()));
        }
        self.acting = actor.clone();
        self.actor = actor;
        self.critic = critic;
        self.target = target;
        Ok(())
    }

    pub fn critic_input(&self, global: &[f64], eap: usize) -> Vec<f64> {
        let mut v = Vec::with_capacity(global.len() + self.eap_count);
        v.extend_from_slice(global);
        v.extend((0..self.eap_count).map(|b| if b == eap { 1.0 } else { 0.0 }));
        v
    }

    /// Dispatch distribution of the acting actor.
    pub fn probabilities(&self, local: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
        masked_softmax(&self.acting.forward(local)?, mask)
    }

    /// Dispatch distribution of the trained actor.
    pub fn learner_probabilities(&self, local: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
        masked_softmax(&self.actor.forward(local)?, mask)
    }

    /// Picks a target from `probs`; always one with positive probability.
    pub fn choose(&mut self, probs: &[f64], mode: Mode) -> Result<usize> {
        match mode {
            Mode::Greedy => Ok(probs
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, &p)| if p > best.1 { (j, p) } else { best })
                .0),
            Mode::Sample => Ok(WeightedIndex::new(probs)
                .map_err(|e| Error::contract(format!("dispatch distribution: {e}")))?
                .sample(&mut self.rng)),
        }
    }

    /// One decision for every eAP with a non-empty queue.
    pub fn decide(&mut self, state: &ClusterState, mode: Mode) -> Result<Vec<Decision>> {
        let width = self.acting.output_len();
        let global = state.global_state();
        let mut out = Vec::new();
        for b in 0..state.eap_count() {
            let Some(head) = state.head_request(b) else { continue };
            let mask = pad_mask(&state.mask_for(b, head.service), width);
            let local = state.local_state(b);
            let probs = self.probabilities(&local, &mask)?;
            let target = self.choose(&probs, mode)?;
            out.push(Decision {
                action: DispatchAction {
                    eap_id: b,
                    target,
                    request_id: head.id,
                },
                prob: probs[target],
                critic_input: self.critic_input(&global, b),
                local,
                mask,
            });
        }
        Ok(out)
    }

    /// Completes the slot's records with the shared reward and the
    /// successor state.
    pub fn records(&self, decisions: Vec<Decision>, reward: f64, next: &ClusterState) -> Vec<AgentRecord> {
        let global = next.global_state();
        decisions
            .into_iter()
            .map(|d| AgentRecord {
                eap_id: d.action.eap_id,
                next_critic_input: self.critic_input(&global, d.action.eap_id),
                local: d.local,
                mask: d.mask,
                action: d.action.target,
                prob: d.prob,
                critic_input: d.critic_input,
                reward,
            })
            .collect()
    }

    fn value(net: &Mlp, input: &[f64]) -> Result<f64> {
        Ok(net.forward(input)?[0])
    }

    /// `u + gamma V'(s') - V(s)` for each record.
    pub fn advantages(&self, records: &[AgentRecord]) -> Result<Vec<f64>> {
        records
            .iter()
            .map(|r| {
                Ok(r.reward + self.config.gamma * Self::value(&self.target, &r.next_critic_input)?
                    - Self::value(&self.critic, &r.critic_input)?)
            })
            .collect()
    }

    /// One Adam step on the mean squared distance to the target values;
    /// returns the loss before the step.
    pub fn train_critic(&mut self, records: &[AgentRecord]) -> Result<f64> {
        Ok(self.critic_step(records)?.0)
    }

    /// Critic update that also returns each record's advantage under the
    /// pre-update critic, sharing the forward passes.
    fn critic_step(&mut self, records: &[AgentRecord]) -> Result<(f64, Vec<f64>)> {
        if records.is_empty() {
            return Err(Error::contract("critic update needs records"));
        }
        let n = records.len() as f64;
        let gamma = self.config.gamma;
        let mut grads = std::mem::take(&mut self.critic_grads);
        grads.clear();
        grads.resize(self.critic.param_count(), 0.0);
        let mut loss = 0.0;
        let mut advantages = Vec::with_capacity(records.len());
        for r in records {
            let next_value = Self::value(&self.target, &r.next_critic_input)?;
            let target = critic_target(
                &[TargetTerm {
                    prob: r.prob,
                    reward: r.reward,
                    next_value,
                }],
                gamma,
            );
            let cache = self.critic.forward_cached(&r.critic_input)?;
            let value = cache.output()[0];
            advantages.push(r.reward + gamma * next_value - value);
            let diff = value - target;
            loss += diff * diff / n;
            self.critic.backward(&cache, &[2.0 * diff / n], &mut grads)?;
        }
        self.critic_opt.step(self.critic.params_mut(), &grads)?;
        self.critic_grads = grads;
        Ok((loss, advantages))
    }

    /// Gradient of `-mean(A log pi(a | s))` with respect to the actor.
    pub fn actor_gradient(&self, records: &[AgentRecord], advantages: &[f64]) -> Result<Vec<f64>> {
        let mut grads = Vec::new();
        self.actor_gradient_into(records, advantages, &mut grads)?;
        Ok(grads)
    }

    fn actor_gradient_into(&self, records: &[AgentRecord], advantages: &[f64], grads: &mut Vec<f64>) -> Result<()> {
        if records.len() != advantages.len() {
            return Err(Error::contract("one advantage per record is required"));
        }
        let n = records.len().max(1) as f64;
        grads.clear();
        grads.resize(self.actor.param_count(), 0.0);
        for (r, &adv) in records.iter().zip(advantages) {
            if !r.mask.get(r.action).copied().unwrap_or(false) {
                return Err(Error::contract(format!("stored action {} outside its mask", r.action)));
            }
            if adv == 0.0 {
                continue;
            }
            let cache = self.actor.forward_cached(&r.local)?;
            let logits = cache.output();
            let total: f64 = logits.iter().zip(&r.mask).filter(|(_, &m)| m).map(|(l, _)| l).sum();
            // d log(l_a / S) / d l_k = [k == a] / l_a - mask_k / S
            let out_grad: Vec<f64> = (0..logits.len())
                .map(|k| {
                    let mut g = if r.mask[k] { -1.0 / total } else { 0.0 };
                    if k == r.action {
                        g += 1.0 / logits[k];
                    }
                    -adv * g / n
                })
                .collect();
            self.actor.backward(&cache, &out_grad, grads)?;
        }
        Ok(())
    }

    /// One Adam ascent step on `sum A log pi`; returns the gradient norm.
    pub fn train_actor(&mut self, records: &[AgentRecord], advantages: &[f64]) -> Result<f64> {
        let mut grads = std::mem::take(&mut self.actor_grads);
        self.actor_gradient_into(records, advantages, &mut grads)?;
        let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
        self.actor_opt.step(self.actor.params_mut(), &grads)?;
        self.actor_grads = grads;
        Ok(norm)
    }

    /// Critic and actor updates for one slot's records, then the periodic
    /// broadcast of the actor to the agents.
    pub fn train_slot(&mut self, records: &[AgentRecord]) -> Result<TrainStats> {
        let mut stats = TrainStats {
            records: records.len(),
            ..TrainStats::default()
        };
        if !records.is_empty() {
            let (loss, advantages) = self.critic_step(records)?;
            stats.mean_advantage = advantages.iter().sum::<f64>() / advantages.len() as f64;
            stats.critic_loss = loss;
            stats.actor_grad_norm = self.train_actor(records, &advantages)?;
        }
        self.tick_sync();
        Ok(stats)
    }

    /// Counts a slot towards the next actor broadcast.
    pub fn tick_sync(&mut self) {
        self.slots_since_sync += 1;
        if self.slots_since_sync >= self.config.sync_period_slots {
            self.sync_actor();
        }
    }

    pub fn sync_actor(&mut self) {
        self.acting = self.actor.clone();
        self.slots_since_sync = 0;
    }

    /// Episode end: the target network takes the critic's parameters.
    pub fn end_episode(&mut self) {
        self.target = self.critic.clone();
    }
}
