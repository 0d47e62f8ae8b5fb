//! Deep deterministic policy gradient with target networks, OU exploration
//! and a simulation replay buffer, plus the training regimes built on it.

mod buffer;
mod train;

pub use buffer::{practical_share, sample_mixed, sample_mixed_tagged, ReplayBuffer, Transition};
pub use train::{
    evaluate_greedy, mean_reward_per_step, train_fully_offpolicy, train_stage1, train_stage2, EpisodeFactory,
    EpisodeStats, EvalSummary, StageTwoConfig, TrainingCurve,
};

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::neural::{AdamConfig, Gradients, MlpNet, OptimizerState, OutputActivation};
use crate::sim::{Controller, Observation, OuParams, Percept, SimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdpgConfig {
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    /// Simulation replay buffer capacity.
    pub buffer_capacity: usize,
    pub hidden: Vec<usize>,
    pub actor_adam: AdamConfig,
    pub critic_adam: AdamConfig,
    /// Exploration noise in normalized action units.
    pub noise: OuParams,
    /// Time step used to integrate the exploration noise, s.
    pub noise_dt: f64,
    /// Weight of an L2 penalty on the actor's pre-tanh output. Keeps the
    /// policy out of the flat tanh tails where the critic gradient vanishes.
    pub preact_penalty: f64,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            tau: 0.001,
            batch_size: 32,
            buffer_capacity: 2000,
            hidden: vec![32, 32],
            actor_adam: AdamConfig::default(),
            critic_adam: AdamConfig::default(),
            noise: OuParams::exploration(),
            noise_dt: 0.1,
            preact_penalty: 1e-2,
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return invalid("gamma must lie in [0, 1]");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return invalid("tau must lie in (0, 1]");
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 {
            return invalid("batch size and buffer capacity must be positive");
        }
        if !(self.preact_penalty >= 0.0) {
            return invalid("preact_penalty must be non-negative");
        }
        if !(self.noise_dt > 0.0) {
            return invalid("noise_dt must be positive");
        }
        self.noise.validate()
    }
}

/// Affine map between the tanh output `u in [-1, 1]` and an acceleration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionScale {
    pub a_min: f64,
    pub a_max: f64,
}

impl ActionScale {
    pub fn from_sim(cfg: &SimConfig) -> Self {
        Self { a_min: cfg.a_min, a_max: cfg.a_max }
    }

    pub fn to_accel(&self, u: f64) -> f64 {
        self.a_min + (u + 1.0) * 0.5 * (self.a_max - self.a_min)
    }

    pub fn to_unit(&self, a: f64) -> f64 {
        2.0 * (a - self.a_min) / (self.a_max - self.a_min) - 1.0
    }

    pub fn half_range(&self) -> f64 {
        0.5 * (self.a_max - self.a_min)
    }
}

/// Stateful OU exploration noise.
#[derive(Debug, Clone)]
pub struct OuNoise {
    params: OuParams,
    dt: f64,
    x: f64,
    rng: ChaCha8Rng,
}

impl OuNoise {
    pub fn new(params: OuParams, dt: f64, seed: u64) -> Self {
        Self { params, dt, x: params.x0, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn reset(&mut self) {
        self.x = self.params.x0;
    }

    pub fn state(&self) -> f64 {
        self.x
    }

    pub fn sample(&mut self) -> f64 {
        let xi: f64 = self.rng.sample(StandardNormal);
        let p = &self.params;
        self.x += p.theta * (p.mu - self.x) * self.dt + p.sigma * self.dt.sqrt() * xi;
        self.x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainStats {
    pub critic_loss: f64,
    /// Mean Q(s, mu(s)) over the batch before the actor update.
    pub actor_objective: f64,
}

#[derive(Debug, Clone)]
pub struct DdpgAgent {
    pub cfg: DdpgConfig,
    pub scale: ActionScale,
    pub actor: MlpNet,
    pub actor_target: MlpNet,
    pub critic: MlpNet,
    pub critic_target: MlpNet,
    actor_opt: OptimizerState,
    critic_opt: OptimizerState,
    /// Self-generated experience.
    pub sim_buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    updates: u64,
}

fn sizes(input: usize, hidden: &[usize]) -> Vec<usize> {
    let mut s = vec![input];
    s.extend_from_slice(hidden);
    s.push(1);
    s
}

fn critic_input(s: &Observation, u: f64) -> [f64; 5] {
    [s.0[0], s.0[1], s.0[2], s.0[3], u]
}

impl DdpgAgent {
    /// Actor `4 -> hidden -> 1` (tanh) and critic `(4+1) -> hidden -> 1` (linear);
    /// target networks start as exact copies.
    pub fn new(cfg: DdpgConfig, sim: &SimConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actor = MlpNet::new(&sizes(Observation::DIM, &cfg.hidden), OutputActivation::Tanh, rng.random())?;
        let critic = MlpNet::new(&sizes(Observation::DIM + 1, &cfg.hidden), OutputActivation::Linear, rng.random())?;
        Ok(Self {
            scale: ActionScale::from_sim(sim),
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor_opt: OptimizerState::new(&actor, cfg.actor_adam),
            critic_opt: OptimizerState::new(&critic, cfg.critic_adam),
            sim_buffer: ReplayBuffer::new(cfg.buffer_capacity),
            rng: ChaCha8Rng::seed_from_u64(rng.random()),
            actor,
            critic,
            cfg,
            updates: 0,
        })
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Reseeds the generator used for minibatch sampling.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub(crate) fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Minibatch mixing the agent's simulation buffer with `practical` at `ratio`.
    pub fn sample_batch(&mut self, practical: &ReplayBuffer, ratio: f64) -> Result<Vec<Transition>> {
        sample_mixed(&self.sim_buffer, practical, self.cfg.batch_size, ratio, &mut self.rng)
    }

    pub fn make_noise(&self, seed: u64) -> OuNoise {
        OuNoise::new(self.cfg.noise, self.cfg.noise_dt, seed)
    }

    /// Deterministic policy output in `[-1, 1]`.
    pub fn policy_unit(&self, obs: &Observation) -> f64 {
        self.actor.predict(obs.as_slice()).expect("actor input is 4-dimensional")[0]
    }

    pub fn greedy_accel(&self, obs: &Observation) -> f64 {
        self.scale.to_accel(self.policy_unit(obs))
    }

    /// Policy action in m/s^2, with OU noise (normalized units scaled by the
    /// half action range) added and clipped when exploring.
    pub fn select_action(&self, obs: &Observation, noise: &mut OuNoise, explore: bool) -> f64 {
        let u = self.policy_unit(obs);
        let a = self.scale.to_accel(u);
        if !explore {
            return a;
        }
        (a + noise.sample() * self.scale.half_range()).clamp(self.scale.a_min, self.scale.a_max)
    }

    pub fn q_value(&self, obs: &Observation, accel: f64) -> f64 {
        self.critic.predict(&critic_input(obs, self.scale.to_unit(accel))).expect("critic input is 5-dimensional")[0]
    }

    /// Bootstrapped targets `r + gamma (1 - done) Q'(s', mu'(s'))`.
    pub fn targets(&self, batch: &[Transition]) -> Vec<f64> {
        batch
            .iter()
            .map(|t| {
                if t.done {
                    return t.reward;
                }
                let u = self.actor_target.predict(t.next_state.as_slice()).unwrap()[0];
                let q = self.critic_target.predict(&critic_input(&t.next_state, u)).unwrap()[0];
                t.reward + self.cfg.gamma * q
            })
            .collect()
    }

    /// Critic regression step only; returns the mean squared TD error.
    pub fn critic_step(&mut self, batch: &[Transition]) -> Result<f64> {
        if batch.is_empty() {
            return invalid("empty training batch");
        }
        let y = self.targets(batch);
        let n = batch.len() as f64;
        let mut grads = Gradients::zeros_like(&self.critic);
        let mut loss = 0.0;
        for (t, yi) in batch.iter().zip(&y) {
            let x = critic_input(&t.state, self.scale.to_unit(t.action));
            let (q, cache) = self.critic.forward(&x)?;
            let diff = q[0] - yi;
            loss += diff * diff;
            self.critic.backward_into(&cache, &[2.0 * diff / n], &mut grads)?;
        }
        self.critic_opt.step(&mut self.critic, &grads)?;
        Ok(loss / n)
    }

    /// Deterministic policy-gradient ascent on mean Q(s, mu(s)).
    pub fn actor_step(&mut self, batch: &[Transition]) -> Result<f64> {
        if batch.is_empty() {
            return invalid("empty training batch");
        }
        let n = batch.len() as f64;
        let mut grads = Gradients::zeros_like(&self.actor);
        let mut scratch = Gradients::zeros_like(&self.critic);
        let mut objective = 0.0;
        for t in batch {
            let (u, acache) = self.actor.forward(t.state.as_slice())?;
            let (q, ccache) = self.critic.forward(&critic_input(&t.state, u[0]))?;
            objective += q[0];
            let dq = self.critic.backward_into(&ccache, &[1.0 / n], &mut scratch)?;
            let pre = [2.0 * self.cfg.preact_penalty * acache.output_pre()[0] / n];
            self.actor.backward_with_pre(&acache, &[-dq[Observation::DIM]], Some(&pre), &mut grads)?;
        }
        self.actor_opt.step(&mut self.actor, &grads)?;
        Ok(objective / n)
    }

    pub fn soft_update_targets(&mut self) -> Result<()> {
        self.actor_target.soft_update(&self.actor, self.cfg.tau)?;
        self.critic_target.soft_update(&self.critic, self.cfg.tau)
    }

    /// One full update: critic, actor, then both targets.
    pub fn train_step(&mut self, batch: &[Transition]) -> Result<TrainStats> {
        let critic_loss = self.critic_step(batch)?;
        let actor_objective = self.actor_step(batch)?;
        self.soft_update_targets()?;
        self.updates += 1;
        Ok(TrainStats { critic_loss, actor_objective })
    }

    /// Writes actor/critic and their targets as parameter files under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.actor.save(&dir.join("actor.mlp"))?;
        self.actor_target.save(&dir.join("actor_target.mlp"))?;
        self.critic.save(&dir.join("critic.mlp"))?;
        self.critic_target.save(&dir.join("critic_target.mlp"))?;
        Ok(())
    }

    /// Restores networks saved by [`DdpgAgent::save`]; optimizer moments restart.
    pub fn load(dir: &Path, cfg: DdpgConfig, sim: &SimConfig) -> Result<Self> {
        let mut agent = Self::new(cfg, sim, 0)?;
        agent.actor = MlpNet::load(&dir.join("actor.mlp"))?;
        agent.actor_target = MlpNet::load(&dir.join("actor_target.mlp"))?;
        agent.critic = MlpNet::load(&dir.join("critic.mlp"))?;
        agent.critic_target = MlpNet::load(&dir.join("critic_target.mlp"))?;
        agent.actor_opt = OptimizerState::new(&agent.actor, agent.cfg.actor_adam);
        agent.critic_opt = OptimizerState::new(&agent.critic, agent.cfg.critic_adam);
        Ok(agent)
    }
}

/// Greedy policy wrapper used for evaluation.
#[derive(Debug, Clone)]
pub struct GreedyPolicy<'a> {
    pub agent: &'a DdpgAgent,
    pub label: String,
}

impl<'a> GreedyPolicy<'a> {
    pub fn new(agent: &'a DdpgAgent, label: impl Into<String>) -> Self {
        Self { agent, label: label.into() }
    }
}

impl Controller for GreedyPolicy<'_> {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn accel(&mut self, p: &Percept) -> f64 {
        self.agent.greedy_accel(&p.obs)
    }
}

impl Controller for DdpgAgent {
    fn name(&self) -> String {
        "ddpg".into()
    }

    fn accel(&mut self, p: &Percept) -> f64 {
        self.greedy_accel(&p.obs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agent(seed: u64) -> DdpgAgent {
        DdpgAgent::new(DdpgConfig::default(), &SimConfig::default(), seed).unwrap()
    }

    fn obs(x: f64) -> Observation {
        Observation([0.3 + x, 0.6, -0.1 * x, 0.2])
    }

    #[test]
    fn zero_actor_gives_midrange_action() {
        let mut a = agent(0);
        a.actor.params_mut().iter_mut().for_each(|p| *p = 0.0);
        let mut noise = a.make_noise(1);
        assert_eq!(a.select_action(&obs(0.0), &mut noise, false), -2.0);
    }

    #[test]
    fn greedy_is_deterministic_and_ignores_noise_state() {
        let a = agent(1);
        let mut n1 = a.make_noise(1);
        let mut n2 = a.make_noise(2);
        for _ in 0..10 {
            n2.sample();
        }
        let x = a.select_action(&obs(0.1), &mut n1, false);
        assert_eq!(x, a.select_action(&obs(0.1), &mut n2, false));
        assert_eq!(x, a.select_action(&obs(0.1), &mut n1, false));
        assert_eq!(n1.state(), 0.0);
    }

    #[test]
    fn action_scale_roundtrip() {
        let s = ActionScale { a_min: -9.0, a_max: 5.0 };
        assert_eq!(s.to_accel(-1.0), -9.0);
        assert_eq!(s.to_accel(1.0), 5.0);
        assert_eq!(s.to_accel(0.0), -2.0);
        assert!((s.to_unit(s.to_accel(0.37)) - 0.37).abs() < 1e-15);
    }

    #[test]
    fn terminal_targets_ignore_target_nets() {
        let mut a = agent(2);
        let batch: Vec<Transition> = (0..32)
            .map(|i| Transition {
                state: obs(i as f64 * 0.01),
                action: 1.0,
                reward: i as f64 * 0.1,
                next_state: obs(0.5),
                done: true,
            })
            .collect();
        let y1 = a.targets(&batch);
        a.critic_target.params_mut().iter_mut().for_each(|p| *p += 0.3);
        a.actor_target.params_mut().iter_mut().for_each(|p| *p -= 0.2);
        let y2 = a.targets(&batch);
        assert_eq!(y1, y2);
        for (y, t) in y1.iter().zip(&batch) {
            assert_eq!(*y, t.reward);
        }
    }

    #[test]
    fn empty_batch_rejected() {
        let mut a = agent(3);
        assert!(a.train_step(&[]).is_err());
    }

    #[test]
    fn train_step_moves_targets_by_at_most_tau() {
        let mut a = agent(4);
        a.critic_target.params_mut().iter_mut().for_each(|p| *p += 0.05);
        let batch: Vec<Transition> = (0..32)
            .map(|i| Transition {
                state: obs(i as f64 * 0.02),
                action: -1.0 + 0.1 * i as f64,
                reward: 0.2,
                next_state: obs(0.1),
                done: false,
            })
            .collect();
        let before_a = a.actor_target.clone();
        let before_c = a.critic_target.clone();
        a.train_step(&batch).unwrap();
        let tau = a.cfg.tau;
        for (tgt, before, src) in [
            (&a.actor_target, &before_a, &a.actor),
            (&a.critic_target, &before_c, &a.critic),
        ] {
            for i in 0..tgt.num_params() {
                let moved = (tgt.params()[i] - before.params()[i]).abs();
                let bound = tau * (src.params()[i] - before.params()[i]).abs();
                assert!(moved <= bound + 1e-15);
            }
        }
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let a = agent(5);
        a.save(dir.path()).unwrap();
        let b = DdpgAgent::load(dir.path(), DdpgConfig::default(), &SimConfig::default()).unwrap();
        assert_eq!(a.actor, b.actor);
        assert_eq!(a.critic_target, b.critic_target);
    }
}
