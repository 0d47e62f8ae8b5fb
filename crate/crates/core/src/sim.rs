//! Longitudinal leader/follower world advanced at a fixed step.
//!
//! The leader replays a speed profile (usually drawn from an Ornstein-Uhlenbeck
//! process); the follower integrates whatever acceleration the controller
//! commands. Gaps are bumper-to-bumper.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, invalid, Error, Result};
use crate::reward::{self, RewardBreakdown, RewardConfig};

/// Parameters of an Ornstein-Uhlenbeck process `dx = theta (mu - x) dt + sigma dW`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuParams {
    pub theta: f64,
    pub sigma: f64,
    pub mu: f64,
    pub x0: f64,
}

impl OuParams {
    pub fn new(theta: f64, sigma: f64, mu: f64, x0: f64) -> Self {
        Self { theta, sigma, mu, x0 }
    }

    /// Zero-reverting exploration noise used by the learner (theta 0.15 1/s, sigma 0.2).
    pub fn exploration() -> Self {
        Self::new(0.15, 0.2, 0.0, 0.0)
    }

    /// Leader speed process: mean 8 m/s, theta 0.05 1/s, sigma 1.5.
    pub fn leader() -> Self {
        Self::new(0.05, 1.5, 8.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        for (n, x) in [("theta", self.theta), ("sigma", self.sigma), ("mu", self.mu), ("x0", self.x0)] {
            ensure_finite(n, x)?;
        }
        if self.theta < 0.0 || self.sigma < 0.0 {
            return invalid("OU theta and sigma must be non-negative");
        }
        Ok(())
    }

    /// Stationary variance `sigma^2 / (2 theta)` of the continuous process.
    pub fn stationary_variance(&self) -> f64 {
        self.sigma * self.sigma / (2.0 * self.theta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub v_des: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub g_max: f64,
    pub init_gap_range: (f64, f64),
    pub max_steps: usize,
    pub vehicle_length: f64,
    pub leader_ou: OuParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            v_des: 20.0,
            a_min: -9.0,
            a_max: 5.0,
            g_max: 200.0,
            init_gap_range: (0.0, 100.0),
            max_steps: 1000,
            vehicle_length: 4.5,
            leader_ou: OuParams::leader(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return invalid("dt must be positive");
        }
        if !(self.a_min < 0.0 && 0.0 < self.a_max) {
            return invalid("need a_min < 0 < a_max");
        }
        if !(self.v_des > 0.0 && self.g_max > 0.0) {
            return invalid("v_des and g_max must be positive");
        }
        let (lo, hi) = self.init_gap_range;
        if !(0.0 <= lo && lo <= hi && hi <= self.g_max) {
            return invalid("need 0 <= init_gap_range.low <= high <= g_max");
        }
        if self.max_steps == 0 {
            return invalid("max_steps must be at least 1");
        }
        self.leader_ou.validate()
    }

    pub fn clip_accel(&self, a: f64) -> f64 {
        a.clamp(self.a_min, self.a_max)
    }

    /// Number of samples needed to cover one full episode.
    pub fn episode_samples(&self) -> usize {
        self.max_steps + 1
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VehicleState {
    /// Front-bumper position, m.
    pub position: f64,
    pub speed: f64,
    pub accel: f64,
}

/// Normalized 4-vector fed to every learned policy:
/// `(v / v_des, (a - a_min) / (a_max - a_min), (v_l - v) / v_des, g / g_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Observation(pub [f64; 4]);

impl Observation {
    pub const DIM: usize = 4;

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn normalize_state(v: f64, a: f64, v_l: f64, g: f64, cfg: &SimConfig) -> Result<Observation> {
    for (n, x) in [("v", v), ("a", a), ("v_l", v_l), ("g", g)] {
        ensure_finite(n, x)?;
    }
    let g = g.clamp(0.0, cfg.g_max);
    Ok(Observation([
        v / cfg.v_des,
        (a - cfg.a_min) / (cfg.a_max - cfg.a_min),
        (v_l - v) / cfg.v_des,
        g / cfg.g_max,
    ]))
}

/// Euler-Maruyama path of an OU process, `n_steps` samples starting at `x0`.
pub fn ou_path(params: &OuParams, n_steps: usize, dt: f64, seed: u64) -> Result<Vec<f64>> {
    params.validate()?;
    if n_steps == 0 {
        return invalid("ou_path needs at least one step");
    }
    if !(dt > 0.0) {
        return invalid("dt must be positive");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_steps);
    let mut x = params.x0;
    out.push(x);
    let sq = dt.sqrt();
    for _ in 1..n_steps {
        let xi: f64 = rng.sample(StandardNormal);
        x += params.theta * (params.mu - x) * dt + params.sigma * sq * xi;
        out.push(x);
    }
    Ok(out)
}

/// A leader speed trace sampled every `dt` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaderProfile {
    pub dt: f64,
    pub speeds: Vec<f64>,
}

impl LeaderProfile {
    pub fn new(dt: f64, speeds: Vec<f64>) -> Self {
        Self { dt, speeds }
    }

    pub fn len(&self) -> usize {
        self.speeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speeds.is_empty()
    }

    /// Speed at sample `k`; the last sample is held past the end.
    pub fn speed_at(&self, k: usize) -> f64 {
        self.speeds[k.min(self.speeds.len() - 1)]
    }

    pub fn duration(&self) -> f64 {
        self.speeds.len() as f64 * self.dt
    }

    /// Writes `t_s,v_mps` rows, one per sample.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["t_s", "v_mps"])?;
        for (k, v) in self.speeds.iter().enumerate() {
            wtr.write_record([format!("{}", k as f64 * self.dt), format!("{v}")])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["t_s", "v_mps"] {
            return Err(Error::Format(format!("expected header t_s,v_mps, got {headers:?}")));
        }
        let mut ts = Vec::new();
        let mut speeds = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let t: f64 = rec[0].trim().parse().map_err(|e| Error::Format(format!("t_s: {e}")))?;
            let v: f64 = rec[1].trim().parse().map_err(|e| Error::Format(format!("v_mps: {e}")))?;
            ts.push(t);
            speeds.push(v);
        }
        if speeds.is_empty() {
            return Err(Error::Format("empty leader profile".into()));
        }
        let dt = if ts.len() > 1 { ts[1] - ts[0] } else { 0.1 };
        Ok(Self { dt, speeds })
    }
}

/// OU speed profile for the leader, starting at rest, clamped to `[0, v_des]`
/// with per-step speed changes limited to the acceleration bounds.
pub fn gen_leader_profile(seed: u64, duration: f64, cfg: &SimConfig) -> Result<LeaderProfile> {
    if !(duration > 0.0) {
        return invalid("duration must be positive");
    }
    let n = ((duration / cfg.dt).round() as usize).max(1);
    let params = OuParams { x0: 0.0, ..cfg.leader_ou };
    let raw = ou_path(&params, n, cfg.dt, seed)?;
    let mut speeds = Vec::with_capacity(n);
    let mut v: f64 = 0.0;
    speeds.push(v);
    for &x in &raw[1..] {
        let lo = (v + cfg.a_min * cfg.dt).max(0.0);
        let hi = (v + cfg.a_max * cfg.dt).min(cfg.v_des);
        v = x.clamp(lo, hi);
        speeds.push(v);
    }
    Ok(LeaderProfile::new(cfg.dt, speeds))
}

/// Raw quantities visible to a controller at one instant, plus the normalized view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Percept {
    pub v: f64,
    pub a: f64,
    pub v_l: f64,
    pub gap: f64,
    pub obs: Observation,
}

/// Anything that maps what the follower perceives to a commanded acceleration.
pub trait Controller {
    fn name(&self) -> String;

    /// Called at the start of every episode.
    fn reset(&mut self) {}

    fn accel(&mut self, p: &Percept) -> f64;
}

/// Commands a fixed acceleration regardless of the situation.
#[derive(Debug, Clone, Copy)]
pub struct ConstantAccel(pub f64);

impl Controller for ConstantAccel {
    fn name(&self) -> String {
        format!("constant({})", self.0)
    }

    fn accel(&mut self, _p: &Percept) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub gap: f64,
    pub v_follower: f64,
    pub v_leader: f64,
    /// Acceleration actually applied (after clipping and the zero-speed floor).
    pub accel: f64,
    pub jerk: f64,
    pub collision: bool,
    pub gap_exceeded: bool,
    pub timeout: bool,
    pub breakdown: Option<RewardBreakdown>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone)]
pub struct FollowEnv {
    cfg: SimConfig,
    rcfg: RewardConfig,
    leader: VehicleState,
    follower: VehicleState,
    profile: LeaderProfile,
    step_index: usize,
    prev_accel: f64,
    done: bool,
}

impl FollowEnv {
    pub fn new(cfg: SimConfig, rcfg: RewardConfig) -> Result<Self> {
        cfg.validate()?;
        rcfg.validate()?;
        Ok(Self {
            cfg,
            rcfg,
            leader: VehicleState::default(),
            follower: VehicleState::default(),
            profile: LeaderProfile::new(0.1, vec![0.0]),
            step_index: 0,
            prev_accel: 0.0,
            done: true,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn reward_config(&self) -> &RewardConfig {
        &self.rcfg
    }

    /// Starts an episode from rest with a uniformly drawn initial gap.
    pub fn reset(&mut self, profile: LeaderProfile, seed: u64) -> Result<Observation> {
        let (lo, hi) = self.cfg.init_gap_range;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gap = if hi > lo { rng.random_range(lo..hi) } else { lo };
        self.reset_with(profile, gap, 0.0)
    }

    /// Starts an episode with an explicit gap and follower speed; the leader
    /// starts at the first profile sample.
    pub fn reset_with(&mut self, profile: LeaderProfile, gap: f64, v_follower: f64) -> Result<Observation> {
        if profile.len() < self.cfg.max_steps {
            return invalid(format!(
                "leader profile has {} samples, episode needs {}",
                profile.len(),
                self.cfg.max_steps
            ));
        }
        if (profile.dt - self.cfg.dt).abs() > 1e-9 {
            return invalid(format!("profile dt {} differs from sim dt {}", profile.dt, self.cfg.dt));
        }
        ensure_finite("gap", gap)?;
        if gap < 0.0 || v_follower < 0.0 {
            return invalid("initial gap and follower speed must be non-negative");
        }
        self.follower = VehicleState { position: 0.0, speed: v_follower, accel: 0.0 };
        self.leader = VehicleState {
            position: gap + self.cfg.vehicle_length,
            speed: profile.speed_at(0),
            accel: 0.0,
        };
        self.profile = profile;
        self.step_index = 0;
        self.prev_accel = 0.0;
        self.done = false;
        Ok(self.observation())
    }

    pub fn gap(&self) -> f64 {
        self.leader.position - self.follower.position - self.cfg.vehicle_length
    }

    pub fn leader(&self) -> &VehicleState {
        &self.leader
    }

    pub fn follower(&self) -> &VehicleState {
        &self.follower
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn observation(&self) -> Observation {
        let g = self.gap().clamp(0.0, self.cfg.g_max);
        let c = &self.cfg;
        Observation([
            self.follower.speed / c.v_des,
            (self.follower.accel - c.a_min) / (c.a_max - c.a_min),
            (self.leader.speed - self.follower.speed) / c.v_des,
            g / c.g_max,
        ])
    }

    pub fn percept(&self) -> Percept {
        Percept {
            v: self.follower.speed,
            a: self.follower.accel,
            v_l: self.leader.speed,
            gap: self.gap(),
            obs: self.observation(),
        }
    }

    pub fn step(&mut self, action: f64) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        ensure_finite("action", action)?;
        let dt = self.cfg.dt;
        let v = self.follower.speed;
        let mut a = self.cfg.clip_accel(action);
        if v + a * dt < 0.0 {
            a = -v / dt;
        }
        self.follower.position += v * dt + 0.5 * a * dt * dt;
        self.follower.speed = (v + a * dt).max(0.0);
        self.follower.accel = a;

        let k = self.step_index + 1;
        let v_l_next = self.profile.speed_at(k);
        self.leader.accel = (v_l_next - self.leader.speed) / dt;
        self.leader.position += 0.5 * (self.leader.speed + v_l_next) * dt;
        self.leader.speed = v_l_next;

        let jerk = if self.step_index == 0 { 0.0 } else { (a - self.prev_accel) / dt };
        self.prev_accel = a;
        self.step_index = k;

        let gap = self.gap();
        let collision = gap <= 0.0;
        let gap_exceeded = gap > self.cfg.g_max;
        let timeout = self.step_index >= self.cfg.max_steps;
        let (reward, breakdown) =
            reward::step_reward(self.follower.speed, self.leader.speed, gap, jerk, &self.rcfg)?;
        self.done = collision || gap_exceeded || timeout;

        Ok(StepOutcome {
            obs: self.observation(),
            reward,
            done: self.done,
            info: StepInfo {
                gap,
                v_follower: self.follower.speed,
                v_leader: self.leader.speed,
                accel: a,
                jerk,
                collision,
                gap_exceeded,
                timeout,
                breakdown,
            },
        })
    }
}
