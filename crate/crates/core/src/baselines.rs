//! Comparison agents: the Intelligent Driver Model and a behavior-cloning
//! policy with the same shape as the DDPG actor.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{FollowingEpisode, RelabeledDataset};
use crate::ddpg::ActionScale;
use crate::error::{invalid, Result};
use crate::neural::{AdamConfig, Gradients, MlpNet, OptimizerState, OutputActivation};
use crate::reward::RewardConfig;
use crate::sim::{Controller, FollowEnv, LeaderProfile, Observation, Percept, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdmParams {
    pub v_des: f64,
    /// Desired time headway, s.
    pub t_gap: f64,
    /// Maximum acceleration, m/s^2.
    pub a: f64,
    /// Comfortable deceleration, m/s^2.
    pub b: f64,
    /// Standstill gap, m.
    pub g_min: f64,
    pub delta: f64,
    /// Output clip, matching the environment's action bounds.
    pub a_min: f64,
    pub a_max: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self { v_des: 20.0, t_gap: 1.0, a: 2.0, b: 2.0, g_min: 2.5, delta: 4.0, a_min: -9.0, a_max: 5.0 }
    }
}

impl IdmParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.v_des, self.t_gap, self.a, self.b, self.g_min, self.delta];
        if all.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return invalid("IDM parameters must be positive and finite");
        }
        if !(self.a_min < self.a_max) {
            return invalid("IDM clip bounds must satisfy a_min < a_max");
        }
        Ok(())
    }

    /// Desired dynamic gap `s*`. The velocity-dependent part is floored at
    /// zero so a fast-receding leader never produces a negative target.
    pub fn desired_gap(&self, v: f64, v_l: f64) -> f64 {
        let dyn_part = v * self.t_gap + v * (v - v_l) / (2.0 * (self.a * self.b).sqrt());
        self.g_min + dyn_part.max(0.0)
    }
}

/// IDM acceleration clipped to `[a_min, a_max]`.
pub fn idm_accel(v: f64, v_l: f64, g: f64, p: &IdmParams) -> Result<f64> {
    if !(g > 0.0) {
        return invalid(format!("IDM needs a positive gap, got {g}"));
    }
    let s = p.desired_gap(v, v_l);
    let raw = p.a * (1.0 - (v.max(0.0) / p.v_des).powf(p.delta) - (s / g).powi(2));
    Ok(raw.clamp(p.a_min, p.a_max))
}

/// Steady-state gap behind a leader cruising at `v`.
pub fn idm_equilibrium_gap(v: f64, p: &IdmParams) -> Result<f64> {
    if !(0.0..p.v_des).contains(&v) {
        return invalid(format!("no finite IDM equilibrium at v = {v} (v_des = {})", p.v_des));
    }
    Ok(p.desired_gap(v, v) / (1.0 - (v / p.v_des).powf(p.delta)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Idm(pub IdmParams);

impl Controller for Idm {
    fn name(&self) -> String {
        "idm".into()
    }

    fn accel(&mut self, p: &Percept) -> f64 {
        idm_accel(p.v, p.v_l, p.gap, &self.0).unwrap_or(self.0.a_min)
    }
}

/// Axes of the IDM calibration grid. `v_des` and `delta` stay fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdmGrid {
    pub t_gap: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub g_min: Vec<f64>,
}

fn span(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|k| lo + k as f64 * step).collect()
}

impl Default for IdmGrid {
    fn default() -> Self {
        Self {
            t_gap: span(0.6, 2.0, 0.2),
            a: span(0.5, 3.0, 0.5),
            b: span(1.0, 3.0, 0.5),
            g_min: span(1.0, 4.0, 0.5),
        }
    }
}

impl IdmGrid {
    pub fn candidates(&self, base: &IdmParams) -> Vec<IdmParams> {
        let mut out = Vec::new();
        for &t_gap in &self.t_gap {
            for &a in &self.a {
                for &b in &self.b {
                    for &g_min in &self.g_min {
                        out.push(IdmParams { t_gap, a, b, g_min, ..*base });
                    }
                }
            }
        }
        out
    }
}

/// Replays the recorded leader of `ep` with an IDM follower started from the
/// recorded initial state; returns the gap RMSE against the recording, or
/// infinity when the replay collides or loses the leader.
pub fn idm_replay_rmse(ep: &FollowingEpisode, p: &IdmParams, sim: &SimConfig) -> Result<f64> {
    let n = ep.records.len();
    let cfg = SimConfig {
        dt: ep.dt,
        max_steps: n - 1,
        g_max: sim.g_max.max(ep.records.iter().map(|r| r.gap).fold(0.0, f64::max) * 2.0),
        ..sim.clone()
    };
    let profile = LeaderProfile::new(ep.dt, ep.records.iter().map(|r| r.v_leader).collect());
    let mut env = FollowEnv::new(cfg, RewardConfig::default())?;
    env.reset_with(profile, ep.records[0].gap, ep.records[0].v_follower)?;
    let mut ctrl = Idm(*p);
    let mut sse = 0.0;
    for rec in &ep.records[1..] {
        let out = env.step(ctrl.accel(&env.percept()))?;
        sse += (out.info.gap - rec.gap).powi(2);
        if out.info.collision || out.info.gap_exceeded {
            return Ok(f64::INFINITY);
        }
    }
    Ok((sse / (n - 1) as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub params: IdmParams,
    /// Mean over episodes of the per-episode gap RMSE, m.
    pub rmse: f64,
    pub candidates: usize,
}

/// Grid search over IDM parameters minimizing the mean gap RMSE of replays.
/// Ties go to the earliest grid point.
pub fn calibrate_idm(eps: &[FollowingEpisode], base: &IdmParams, grid: &IdmGrid, sim: &SimConfig) -> Result<Calibration> {
    if eps.is_empty() {
        return invalid("calibration needs at least one episode");
    }
    let cands = grid.candidates(base);
    if cands.is_empty() {
        return invalid("empty calibration grid");
    }
    let scores = cands
        .par_iter()
        .map(|p| {
            let mut total = 0.0;
            for e in eps {
                total += idm_replay_rmse(e, p, sim)?;
            }
            Ok(total / eps.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let (best, rmse) = scores
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
    Ok(Calibration { params: cands[best], rmse, candidates: cands.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BcConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub adam: AdamConfig,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self { epochs: 20, batch_size: 32, hidden: vec![32, 32], adam: AdamConfig::default() }
    }
}

/// Supervised policy regressing recorded actions from observations.
#[derive(Debug, Clone, PartialEq)]
pub struct BcPolicy {
    pub net: MlpNet,
    pub scale: ActionScale,
}

impl BcPolicy {
    pub fn new(cfg: &BcConfig, sim: &SimConfig, seed: u64) -> Result<Self> {
        let mut sizes = vec![Observation::DIM];
        sizes.extend(&cfg.hidden);
        sizes.push(1);
        Ok(Self { net: MlpNet::new(&sizes, OutputActivation::Tanh, seed)?, scale: ActionScale::from_sim(sim) })
    }

    pub fn accel_for(&self, obs: &Observation) -> f64 {
        let u = self.net.predict(obs.as_slice()).expect("observation matches the policy input");
        self.scale.to_accel(u[0])
    }

    /// Writes the network as `bc.mlp` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.net.save(&dir.join("bc.mlp"))
    }

    pub fn load(dir: &Path, sim: &SimConfig) -> Result<Self> {
        let net = MlpNet::load(&dir.join("bc.mlp"))?;
        if net.input_dim() != Observation::DIM || net.output_dim() != 1 {
            return Err(crate::Error::Format(format!("bc.mlp has shape {:?}", net.sizes())));
        }
        Ok(Self { net, scale: ActionScale::from_sim(sim) })
    }

    /// Mean squared action error (m/s^2)^2 over `data`.
    pub fn mse(&self, data: &[crate::ddpg::Transition]) -> f64 {
        let n = data.len().max(1) as f64;
        data.iter().map(|t| (self.accel_for(&t.state) - t.action).powi(2)).sum::<f64>() / n
    }
}

impl Controller for BcPolicy {
    fn name(&self) -> String {
        "bc".into()
    }

    fn accel(&mut self, p: &Percept) -> f64 {
        self.accel_for(&p.obs)
    }
}

/// Trains a BC policy on shuffled minibatches, returning it with the mean
/// training loss of every epoch.
pub fn bc_train(train: &RelabeledDataset, cfg: &BcConfig, sim: &SimConfig, seed: u64) -> Result<(BcPolicy, Vec<f64>)> {
    if train.is_empty() {
        return invalid("behavior cloning needs a non-empty training split");
    }
    if cfg.batch_size == 0 {
        return invalid("batch size must be positive");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut policy = BcPolicy::new(cfg, sim, rand::Rng::random(&mut rng))?;
    let mut opt = OptimizerState::new(&policy.net, cfg.adam);
    let mut grads = Gradients::zeros_like(&policy.net);
    let half = policy.scale.half_range();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            grads.clear();
            let n = chunk.len() as f64;
            for &i in chunk {
                let t = &train.transitions[i];
                let (u, cache) = policy.net.forward(t.state.as_slice())?;
                let err = policy.scale.to_accel(u[0]) - t.action;
                epoch_loss += err * err;
                policy.net.backward_into(&cache, &[2.0 * err * half / n], &mut grads)?;
            }
            opt.step(&mut policy.net, &grads)?;
        }
        losses.push(epoch_loss / train.len() as f64);
    }
    Ok((policy, losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{EpisodeSpan, Source};
    use crate::ddpg::Transition;
    use proptest::prelude::*;

    #[test]
    fn free_road_startup() {
        let p = IdmParams::default();
        let a = idm_accel(0.0, 0.0, 1e9, &p).unwrap();
        assert!((a - 2.0).abs() < 1e-12);
        assert!(idm_accel(20.0, 20.0, 1e9, &p).unwrap().abs() < 1e-9);
        assert!(idm_accel(5.0, 5.0, 0.0, &p).is_err());
    }

    #[test]
    fn equilibrium_closed_form() {
        let p = IdmParams::default();
        let g = idm_equilibrium_gap(10.0, &p).unwrap();
        let oracle = 12.5 / (1.0f64 - 0.5f64.powi(4)).sqrt();
        assert!((g - oracle).abs() < 1e-12);
        assert!((g - 12.9099).abs() < 1e-4);
        assert!(idm_accel(10.0, 10.0, 12.91, &p).unwrap().abs() < 0.01);
        assert!((idm_equilibrium_gap(1e-9, &p).unwrap() - 2.5).abs() < 1e-6);
        assert!(idm_equilibrium_gap(20.0, &p).is_err());
        assert!(idm_equilibrium_gap(-1.0, &p).is_err());
    }

    proptest! {
        #[test]
        fn idm_monotone(v in 0.5f64..19.0, dv in -5.0f64..5.0, g in 3.0f64..150.0) {
            let p = IdmParams { a_min: -1e9, a_max: 1e9, ..IdmParams::default() };
            let v_l = (v + dv).max(0.0);
            let h = 1e-4;
            let base = idm_accel(v, v_l, g, &p).unwrap();
            prop_assert!(idm_accel(v + h, v_l, g, &p).unwrap() < base);
            if p.desired_gap(v, v_l) > 0.0 {
                prop_assert!(idm_accel(v, v_l, g + h, &p).unwrap() > base);
            }
        }
    }

    fn dataset(f: impl Fn(&Observation) -> f64, n: usize, seed: u64) -> RelabeledDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let transitions: Vec<_> = (0..n)
            .map(|_| {
                let o = Observation([0; 4].map(|_| rand::Rng::random_range(&mut rng, 0.0..1.0)));
                Transition { state: o, action: f(&o), reward: 0.0, next_state: o, done: false }
            })
            .collect();
        let episodes = vec![EpisodeSpan { id: "x".into(), source: Source::Synthetic, start: 0, len: n }];
        RelabeledDataset { transitions, episodes, clipped: 0 }
    }

    #[test]
    fn bc_fits_constant_action() {
        let ds = dataset(|_| 1.3, 2000, 1);
        let (pol, _) = bc_train(&ds, &BcConfig::default(), &SimConfig::default(), 4).unwrap();
        assert!(pol.mse(&ds.transitions) < 1e-4, "{}", pol.mse(&ds.transitions));
    }

    #[test]
    fn bc_fits_affine_target_and_is_deterministic() {
        let f = |o: &Observation| 2.0 * o.0[0] - 1.5 * o.0[2] + 0.5 * o.0[3] - 1.0;
        let ds = dataset(f, 2000, 2);
        let (a, losses) = bc_train(&ds, &BcConfig::default(), &SimConfig::default(), 5).unwrap();
        assert_eq!(losses.len(), 20);
        assert!(a.mse(&ds.transitions) < 1e-3, "{}", a.mse(&ds.transitions));
        let (b, _) = bc_train(&ds, &BcConfig::default(), &SimConfig::default(), 5).unwrap();
        assert_eq!(a, b);
    }
}
