//! Low-level longitudinal control: a surrogate powertrain, reverse-data
//! collection, an inverse network mapping desired acceleration to pedals, and
//! the Stanley lateral steering law.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::neural::{AdamConfig, Gradients, MlpNet, OptimizerState, OutputActivation};

/// Throttle-fading drive, constant brake, rolling resistance and quadratic drag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowertrainModel {
    pub c_throttle: f64,
    pub c_brake: f64,
    pub c_drag: f64,
    pub c_roll: f64,
    pub v_max: f64,
}

impl Default for PowertrainModel {
    fn default() -> Self {
        Self { c_throttle: 4.0, c_brake: 9.0, c_drag: 0.0008, c_roll: 0.1, v_max: 40.0 }
    }
}

impl PowertrainModel {
    pub fn validate(&self) -> Result<()> {
        let all = [self.c_throttle, self.c_brake, self.c_drag, self.c_roll];
        if all.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || !(self.v_max > 0.0) {
            return invalid("powertrain coefficients must be non-negative and v_max positive");
        }
        Ok(())
    }

    /// Acceleration with both pedals released.
    pub fn passive_accel(&self, v: f64) -> f64 {
        let roll = if v > 0.0 { self.c_roll } else { 0.0 };
        -roll - self.c_drag * v * v
    }

    pub fn accel(&self, throttle: f64, brake: f64, v: f64) -> f64 {
        self.c_throttle * throttle * (1.0 - v / self.v_max) - self.c_brake * brake + self.passive_accel(v)
    }

    /// Exact inverse for mutually exclusive pedals, saturating at full pedal.
    pub fn ideal_pedals(&self, v: f64, a: f64) -> (f64, f64) {
        let p = self.passive_accel(v);
        if a >= p {
            let drive = self.c_throttle * (1.0 - v / self.v_max);
            (if drive > 0.0 { ((a - p) / drive).min(1.0) } else { 1.0 }, 0.0)
        } else {
            (0.0, ((p - a) / self.c_brake).min(1.0))
        }
    }

    /// Reachable acceleration interval at speed `v`.
    pub fn accel_range(&self, v: f64) -> (f64, f64) {
        (self.accel(0.0, 1.0, v), self.accel(1.0, 0.0, v))
    }
}

fn check_pedal(name: &str, x: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&x) {
        return invalid(format!("{name} must lie in [0, 1], got {x}"));
    }
    Ok(())
}

/// One step of the surrogate. Returns `(accel, v_next)`; the acceleration is
/// the model's value even when the vehicle is held at rest.
pub fn powertrain_step(m: &PowertrainModel, throttle: f64, brake: f64, v: f64, dt: f64) -> Result<(f64, f64)> {
    check_pedal("throttle", throttle)?;
    check_pedal("brake", brake)?;
    if !(v >= 0.0) || !(dt > 0.0) {
        return invalid("speed must be non-negative and dt positive");
    }
    let a = m.accel(throttle, brake, v);
    Ok((a, (v + a * dt).max(0.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlSample {
    pub v_next: f64,
    pub v: f64,
    pub a: f64,
    pub throttle: f64,
    pub brake: f64,
}

impl ControlSample {
    fn key(&self) -> [u64; 5] {
        [self.v_next, self.v, self.a, self.throttle, self.brake].map(|x| x.to_bits())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectConfig {
    pub duration: f64,
    pub dt: f64,
    /// Pedal hold time range, s.
    pub dwell: (f64, f64),
    /// Upper bound for a randomly drawn pedal level.
    pub max_throttle: f64,
    pub max_brake: f64,
    /// Probabilities of a throttle or brake segment; the rest coast.
    pub p_throttle: f64,
    pub p_brake: f64,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            duration: 600.0,
            dt: 0.1,
            dwell: (0.5, 3.0),
            max_throttle: 1.0,
            max_brake: 1.0,
            p_throttle: 0.5,
            p_brake: 0.35,
        }
    }
}

/// Drives the surrogate with random piecewise-constant pedals (never both at
/// once) and records every step.
pub fn collect_reverse_data(m: &PowertrainModel, cfg: &CollectConfig, seed: u64) -> Result<Vec<ControlSample>> {
    m.validate()?;
    if !(cfg.duration > 0.0 && cfg.dt > 0.0) {
        return invalid("duration and dt must be positive");
    }
    if !(cfg.dwell.0 > 0.0 && cfg.dwell.0 <= cfg.dwell.1) {
        return invalid("dwell range must be positive and ordered");
    }
    let n = (cfg.duration / cfg.dt).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let (mut v, mut hold, mut throttle, mut brake) = (0.0, 0usize, 0.0, 0.0);
    for _ in 0..n {
        if hold == 0 {
            let dwell = if cfg.dwell.1 > cfg.dwell.0 { rng.random_range(cfg.dwell.0..=cfg.dwell.1) } else { cfg.dwell.0 };
            hold = ((dwell / cfg.dt).round() as usize).max(1);
            let pick: f64 = rng.random();
            let level: f64 = rng.random();
            (throttle, brake) = if pick < cfg.p_throttle {
                (level * cfg.max_throttle, 0.0)
            } else if pick < cfg.p_throttle + cfg.p_brake {
                (0.0, level * cfg.max_brake)
            } else {
                (0.0, 0.0)
            };
        }
        hold -= 1;
        let (a, v_next) = powertrain_step(m, throttle, brake, v, cfg.dt)?;
        out.push(ControlSample { v_next, v, a, throttle, brake });
        v = v_next;
    }
    Ok(out)
}

pub const CONTROL_HEADER: [&str; 5] = ["v_next_mps", "v_mps", "a_mps2", "throttle", "brake"];

pub fn write_samples<W: Write>(w: W, samples: &[ControlSample]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(CONTROL_HEADER)?;
    for s in samples {
        wtr.write_record([s.v_next, s.v, s.a, s.throttle, s.brake].map(|x| format!("{x}")))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_samples<R: Read>(r: R) -> Result<Vec<ControlSample>> {
    let mut rdr = csv::Reader::from_reader(r);
    if rdr.headers()?.iter().collect::<Vec<_>>() != CONTROL_HEADER {
        return Err(Error::Format(format!("expected header {}", CONTROL_HEADER.join(","))));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let mut x = [0.0; 5];
        for (k, v) in x.iter_mut().enumerate() {
            *v = rec
                .get(k)
                .ok_or_else(|| Error::Format(format!("line {line}: missing field")))?
                .trim()
                .parse()
                .map_err(|e| Error::Format(format!("line {line}: {e}")))?;
        }
        out.push(ControlSample { v_next: x[0], v: x[1], a: x[2], throttle: x[3], brake: x[4] });
    }
    Ok(out)
}

pub fn save_samples(path: &Path, samples: &[ControlSample]) -> Result<()> {
    write_samples(BufWriter::new(File::create(path)?), samples)
}

pub fn load_samples(path: &Path) -> Result<Vec<ControlSample>> {
    read_samples(BufReader::new(File::open(path)?))
}

/// Inverse model `(v_next, v, a) -> (throttle, brake)` on standardized inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlNet {
    pub net: MlpNet,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NormFile {
    mean: [f64; 3],
    std: [f64; 3],
}

impl ControlNet {
    pub const SIZES: [usize; 4] = [3, 16, 16, 2];

    pub fn new(seed: u64) -> Result<Self> {
        Ok(Self { net: MlpNet::new(&Self::SIZES, OutputActivation::Tanh, seed)?, mean: [0.0; 3], std: [1.0; 3] })
    }

    pub fn standardize(&self, x: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|k| (x[k] - self.mean[k]) / self.std[k])
    }

    /// Pedals in `[0, 1]` for raw inputs `(v_next, v, a)`.
    pub fn pedals(&self, v_next: f64, v: f64, a: f64) -> (f64, f64) {
        let y = self.net.predict(&self.standardize([v_next, v, a])).expect("control net has 3 inputs");
        (0.5 * (y[0] + 1.0), 0.5 * (y[1] + 1.0))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.net.save(&dir.join("control.mlp"))?;
        let norm = NormFile { mean: self.mean, std: self.std };
        fs::write(dir.join("control_norm.json"), serde_json::to_string_pretty(&norm)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let net = MlpNet::load(&dir.join("control.mlp"))?;
        if net.sizes() != Self::SIZES {
            return Err(Error::Architecture(Self::SIZES.to_vec(), net.sizes().to_vec()));
        }
        let norm: NormFile = serde_json::from_str(&fs::read_to_string(dir.join("control_norm.json"))?)?;
        Ok(Self { net, mean: norm.mean, std: norm.std })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for ControlTrainConfig {
    fn default() -> Self {
        Self { epochs: 150, batch_size: 32, adam: AdamConfig::default() }
    }
}

/// Exact duplicates removed and a canonical order imposed, so the training
/// outcome depends only on the set of distinct samples.
pub fn canonical_samples(samples: &[ControlSample]) -> Vec<ControlSample> {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.key().cmp(&b.key()));
    s.dedup_by(|a, b| a.key() == b.key());
    s
}

/// Mean squared pedal error over `data`, averaged across both outputs.
pub fn control_mse(cn: &ControlNet, data: &[ControlSample]) -> f64 {
    let n = data.len().max(1) as f64;
    data.iter()
        .map(|s| {
            let (t, b) = cn.pedals(s.v_next, s.v, s.a);
            (t - s.throttle).powi(2) + (b - s.brake).powi(2)
        })
        .sum::<f64>()
        / (2.0 * n)
}

/// Regresses pedals from `(v_next, v, a)` with MSE on shuffled minibatches.
pub fn train_control_net(samples: &[ControlSample], cfg: &ControlTrainConfig, seed: u64) -> Result<ControlNet> {
    let data = canonical_samples(samples);
    if data.len() < 1000 {
        return invalid(format!("control net training needs >= 1000 distinct samples, got {}", data.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cn = ControlNet::new(rng.random())?;
    let n = data.len() as f64;
    for k in 0..3 {
        let col = |s: &ControlSample| [s.v_next, s.v, s.a][k];
        let mean = data.iter().map(col).sum::<f64>() / n;
        let var = data.iter().map(|s| (col(s) - mean).powi(2)).sum::<f64>() / n;
        cn.mean[k] = mean;
        cn.std[k] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    let inputs: Vec<[f64; 3]> = data.iter().map(|s| cn.standardize([s.v_next, s.v, s.a])).collect();
    let mut opt = OptimizerState::new(&cn.net, cfg.adam);
    let mut grads = Gradients::zeros_like(&cn.net);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            grads.clear();
            let m = chunk.len() as f64;
            for &i in chunk {
                let (y, cache) = cn.net.forward(&inputs[i])?;
                let s = &data[i];
                // pedal = (y + 1) / 2, loss = mean over both outputs
                let g = [0.5 * (0.5 * (y[0] + 1.0) - s.throttle) / m, 0.5 * (0.5 * (y[1] + 1.0) - s.brake) / m];
                cn.net.backward_into(&cache, &g, &mut grads)?;
            }
            opt.step(&mut cn.net, &grads)?;
        }
    }
    Ok(cn)
}

/// Pedals for a commanded acceleration at speed `v`. Only the dominant pedal
/// is kept, mirroring the collector which never presses both.
pub fn accel_to_pedals(cn: &ControlNet, v: f64, a_cmd: f64, dt: f64) -> (f64, f64) {
    let (t, b) = cn.pedals((v + a_cmd * dt).max(0.0), v, a_cmd);
    let (t, b) = (t.clamp(0.0, 1.0), b.clamp(0.0, 1.0));
    if t >= b {
        (t, 0.0)
    } else {
        (0.0, b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingResult {
    pub rmse: f64,
    /// Steps where the command was outside the reachable interval.
    pub infeasible: usize,
    /// Steps where a pedal was pinned at full travel.
    pub saturated: usize,
    pub commanded: Vec<f64>,
    pub achieved: Vec<f64>,
}

/// Square wave alternating `+amp`/`-amp` every `half_period` seconds.
pub fn square_wave(amp: f64, half_period: f64, duration: f64, dt: f64) -> Vec<f64> {
    let n = (duration / dt).round() as usize;
    let per = ((half_period / dt).round() as usize).max(1);
    (0..n).map(|k| if (k / per) % 2 == 0 { amp } else { -amp }).collect()
}

/// Closed loop command -> pedals -> powertrain starting from speed `v0`.
pub fn track_commands(cn: &ControlNet, m: &PowertrainModel, commands: &[f64], v0: f64, dt: f64) -> Result<TrackingResult> {
    if commands.is_empty() {
        return invalid("no commands to track");
    }
    let mut v = v0;
    let (mut sse, mut infeasible, mut saturated) = (0.0, 0, 0);
    let mut achieved = Vec::with_capacity(commands.len());
    for &c in commands {
        let (lo, hi) = m.accel_range(v);
        infeasible += (c < lo || c > hi) as usize;
        let (t, b) = accel_to_pedals(cn, v, c, dt);
        saturated += (t >= 0.999 || b >= 0.999) as usize;
        let (a, v_next) = powertrain_step(m, t, b, v, dt)?;
        sse += (a - c).powi(2);
        achieved.push(a);
        v = v_next;
    }
    Ok(TrackingResult {
        rmse: (sse / commands.len() as f64).sqrt(),
        infeasible,
        saturated,
        commanded: commands.to_vec(),
        achieved,
    })
}

/// The default tracking probe: a +-2 m/s^2 square wave with 2 s half-period
/// for 60 s from 4 m/s, which keeps the speed between about 4 and 8 m/s.
pub fn square_wave_probe(cn: &ControlNet, m: &PowertrainModel) -> Result<TrackingResult> {
    let dt = 0.1;
    track_commands(cn, m, &square_wave(2.0, 2.0, 60.0, dt), 4.0, dt)
}

pub const STANLEY_V_FLOOR: f64 = 0.1;
/// Default cross-track gain, 1/s.
pub const STANLEY_K_V: f64 = 2.5;

/// Stanley steering angle `theta_p + atan(k_v d_f / v)` with the speed
/// floored at 0.1 m/s.
pub fn stanley_steering(theta_p: f64, d_f: f64, v: f64, k_v: f64) -> f64 {
    theta_p + (k_v * d_f / v.max(STANLEY_V_FLOOR)).atan()
}
