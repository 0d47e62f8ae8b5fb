//! Training regimes: pure simulator DDPG (stage one), resumed training on
//! mixed practical/simulation minibatches (stage two), and fully off-policy
//! learning from a fixed practical buffer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DdpgAgent, GreedyPolicy, ReplayBuffer, Transition};
use crate::error::{invalid, Result};
use crate::reward::RewardConfig;
use crate::sim::{gen_leader_profile, Controller, FollowEnv, Observation, SimConfig};

/// Builds a fresh environment per episode: new OU leader profile and a random
/// initial gap, both derived from the episode seed.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeFactory {
    pub sim: SimConfig,
    pub reward: RewardConfig,
}

impl EpisodeFactory {
    pub fn new(sim: SimConfig, reward: RewardConfig) -> Self {
        Self { sim, reward }
    }

    pub fn make(&self, seed: u64) -> Result<(FollowEnv, Observation)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let duration = self.sim.episode_samples() as f64 * self.sim.dt;
        let profile = gen_leader_profile(rng.random(), duration, &self.sim)?;
        let mut env = FollowEnv::new(self.sim.clone(), self.reward.clone())?;
        let obs = env.reset(profile, rng.random())?;
        Ok((env, obs))
    }
}

impl Default for EpisodeFactory {
    fn default() -> Self {
        Self::new(SimConfig::default(), RewardConfig::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub episode: usize,
    pub steps: usize,
    pub mean_reward: f64,
    pub collisions: usize,
}

impl EpisodeStats {
    pub fn total_reward(&self) -> f64 {
        self.mean_reward * self.steps as f64
    }
}

/// Step-weighted mean reward over a run of episodes.
pub fn mean_reward_per_step(stats: &[EpisodeStats]) -> f64 {
    let steps: usize = stats.iter().map(|s| s.steps).sum();
    if steps == 0 {
        return 0.0;
    }
    stats.iter().map(|s| s.total_reward()).sum::<f64>() / steps as f64
}

/// Output of an online training run: one entry per training episode (with
/// exploration noise) and, paired with it, one greedy episode on a fresh
/// leader run right after it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingCurve {
    pub episodes: Vec<EpisodeStats>,
    pub greedy: Vec<EpisodeStats>,
}

impl TrainingCurve {
    /// Step-weighted greedy reward over the last `n` episodes.
    pub fn greedy_tail_mean(&self, n: usize) -> f64 {
        mean_reward_per_step(&self.greedy[self.greedy.len().saturating_sub(n)..])
    }

    /// Step-weighted training reward over the last `n` episodes.
    pub fn train_tail_mean(&self, n: usize) -> f64 {
        mean_reward_per_step(&self.episodes[self.episodes.len().saturating_sub(n)..])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageTwoConfig {
    /// Fraction of every minibatch drawn from the practical buffer.
    pub ratio: f64,
    /// Environment steps of resumed training.
    pub steps: usize,
    /// Keep OU exploration noise on while interacting.
    pub explore: bool,
}

impl Default for StageTwoConfig {
    fn default() -> Self {
        Self { ratio: 0.6, steps: 50_000, explore: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub episodes: Vec<EpisodeStats>,
    pub mean_reward_per_step: f64,
    pub collisions: usize,
}

fn run_episode<C: Controller + ?Sized>(ctrl: &mut C, env: &mut FollowEnv, episode: usize) -> Result<EpisodeStats> {
    ctrl.reset();
    let mut total = 0.0;
    let mut steps = 0;
    let mut collisions = 0;
    while !env.is_done() {
        let a = ctrl.accel(&env.percept());
        let out = env.step(a)?;
        total += out.reward;
        steps += 1;
        if out.info.collision {
            collisions += 1;
        }
    }
    Ok(EpisodeStats { episode, steps, mean_reward: total / steps.max(1) as f64, collisions })
}

/// Runs `episodes` closed-loop episodes with fresh leaders.
pub fn evaluate_greedy<C: Controller + ?Sized>(
    ctrl: &mut C,
    factory: &EpisodeFactory,
    episodes: usize,
    seed: u64,
) -> Result<EvalSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let (mut env, _) = factory.make(rng.random())?;
        out.push(run_episode(ctrl, &mut env, ep)?);
    }
    Ok(EvalSummary {
        mean_reward_per_step: mean_reward_per_step(&out),
        collisions: out.iter().map(|s| s.collisions).sum(),
        episodes: out,
    })
}

/// Interaction loop shared by stage one and stage two. Every environment step
/// stores the transition in the simulation buffer and performs one update once
/// enough data is available.
fn run_online(
    agent: &mut DdpgAgent,
    practical: &ReplayBuffer,
    ratio: f64,
    explore: bool,
    factory: &EpisodeFactory,
    budget: usize,
    seed: u64,
) -> Result<TrainingCurve> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    agent.reseed(rng.random());
    let mut noise = agent.make_noise(rng.random());
    let mut eval_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let batch = agent.cfg.batch_size;
    let needs_sim = super::practical_share(batch, ratio) < batch;
    let mut curve = TrainingCurve::default();
    let mut steps = 0;
    while steps < budget {
        let (mut env, mut obs) = factory.make(rng.random())?;
        noise.reset();
        let mut total = 0.0;
        let mut ep_steps = 0;
        let mut collisions = 0;
        loop {
            let a = agent.select_action(&obs, &mut noise, explore);
            let out = env.step(a)?;
            agent.sim_buffer.push(Transition {
                state: obs,
                action: a,
                reward: out.reward,
                next_state: out.obs,
                done: out.info.collision || out.info.gap_exceeded,
            });
            let ready = if needs_sim { agent.sim_buffer.len() >= batch } else { !practical.is_empty() };
            if ready {
                let b = agent.sample_batch(practical, ratio)?;
                agent.train_step(&b)?;
            }
            total += out.reward;
            ep_steps += 1;
            steps += 1;
            collisions += out.info.collision as usize;
            obs = out.obs;
            if out.done || steps >= budget {
                break;
            }
        }
        let episode = curve.episodes.len();
        curve.episodes.push(EpisodeStats { episode, steps: ep_steps, mean_reward: total / ep_steps as f64, collisions });
        let (mut eval_env, _) = factory.make(eval_rng.random())?;
        let mut pol = GreedyPolicy::new(agent, "greedy");
        curve.greedy.push(run_episode(&mut pol, &mut eval_env, episode)?);
    }
    Ok(curve)
}

/// Pure simulator DDPG for `budget` environment steps. Returns the per-episode
/// training curve (with exploration noise on).
pub fn train_stage1(
    agent: &mut DdpgAgent,
    factory: &EpisodeFactory,
    budget: usize,
    seed: u64,
) -> Result<TrainingCurve> {
    let empty = ReplayBuffer::new(1);
    run_online(agent, &empty, 0.0, true, factory, budget, seed)
}

/// Resumes training of a stage-one agent with minibatches mixed from the
/// practical buffer at `cfg.ratio`.
pub fn train_stage2(
    agent: &mut DdpgAgent,
    practical: &ReplayBuffer,
    cfg: &StageTwoConfig,
    factory: &EpisodeFactory,
    seed: u64,
) -> Result<TrainingCurve> {
    if !(0.0..=1.0).contains(&cfg.ratio) {
        return invalid(format!("ratio must lie in [0, 1], got {}", cfg.ratio));
    }
    if practical.is_empty() && cfg.ratio > 0.0 {
        return invalid("stage two needs a non-empty practical buffer");
    }
    run_online(agent, practical, cfg.ratio, cfg.explore, factory, cfg.steps, seed)
}

/// Off-policy DDPG on the practical buffer alone: `budget` updates, no
/// interaction. Every `eval_interval` updates one greedy episode is run purely
/// to record the curve.
pub fn train_fully_offpolicy(
    agent: &mut DdpgAgent,
    practical: &ReplayBuffer,
    budget: usize,
    eval_interval: usize,
    factory: &EpisodeFactory,
    seed: u64,
) -> Result<Vec<EpisodeStats>> {
    if practical.is_empty() {
        return invalid("fully off-policy training needs a non-empty practical buffer");
    }
    if eval_interval == 0 {
        return invalid("eval_interval must be positive");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    agent.reseed(rng.random());
    let mut eval_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let batch = agent.cfg.batch_size;
    let mut curve = Vec::new();
    for step in 1..=budget {
        let b = practical.sample(agent.rng_mut(), batch)?;
        agent.train_step(&b)?;
        if step % eval_interval == 0 {
            let (mut env, _) = factory.make(eval_rng.random())?;
            let mut pol = GreedyPolicy::new(agent, "off-policy");
            curve.push(run_episode(&mut pol, &mut env, curve.len())?);
        }
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ddpg::DdpgConfig;

    fn small_factory() -> EpisodeFactory {
        let mut sim = SimConfig::default();
        sim.max_steps = 50;
        EpisodeFactory::new(sim, RewardConfig::default())
    }

    fn agent(seed: u64) -> DdpgAgent {
        DdpgAgent::new(DdpgConfig::default(), &SimConfig::default(), seed).unwrap()
    }

    #[test]
    fn warmup_budget_performs_no_updates() {
        let mut a = agent(0);
        let before = a.actor.clone();
        let curve = train_stage1(&mut a, &small_factory(), 31, 1).unwrap();
        assert_eq!(a.updates(), 0);
        assert_eq!(a.actor, before);
        assert_eq!(a.sim_buffer.len(), 31);
        assert_eq!(curve.episodes.iter().map(|c| c.steps).sum::<usize>(), 31);
        assert_eq!(curve.greedy.len(), curve.episodes.len());
    }

    #[test]
    fn stage1_is_deterministic() {
        let run = || {
            let mut a = agent(3);
            let c = train_stage1(&mut a, &small_factory(), 400, 9).unwrap();
            (c, a.actor.clone(), a.critic.clone())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn stage2_with_zero_ratio_matches_continued_stage1() {
        let f = small_factory();
        let mut base = agent(4);
        train_stage1(&mut base, &f, 200, 5).unwrap();
        let practical = ReplayBuffer::from_transitions(base.sim_buffer.as_slice().to_vec());

        let mut a = base.clone();
        let ca = train_stage1(&mut a, &f, 300, 6).unwrap();
        let mut b = base.clone();
        let cfg = StageTwoConfig { ratio: 0.0, steps: 300, explore: true };
        let cb = train_stage2(&mut b, &practical, &cfg, &f, 6).unwrap();
        assert_eq!(ca, cb);
        assert_eq!(a.actor, b.actor);
        assert_eq!(a.critic, b.critic);
    }

    #[test]
    fn offpolicy_never_touches_buffers() {
        let f = small_factory();
        let mut src = agent(7);
        train_stage1(&mut src, &f, 100, 1).unwrap();
        let practical = ReplayBuffer::from_transitions(src.sim_buffer.as_slice().to_vec());
        let snapshot = practical.clone();
        let mut a = agent(8);
        let curve = train_fully_offpolicy(&mut a, &practical, 100, 25, &f, 2).unwrap();
        assert_eq!(curve.len(), 4);
        assert_eq!(practical, snapshot);
        assert!(a.sim_buffer.is_empty());
        assert_eq!(a.updates(), 100);
    }
}
