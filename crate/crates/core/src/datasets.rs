//! Car-following trajectories: parsing, relabeling into transitions with the
//! environment's reward, train/eval splitting, and reward histograms.
//!
//! Trajectory files are CSV with header `t_s,v_leader_mps,v_follower_mps,gap_m`
//! sampled at a uniform step (10 Hz unless overridden).

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ddpg::{EpisodeFactory, Transition};
use crate::error::{invalid, Error, Result};
use crate::reward::{step_reward, RewardConfig};
use crate::sim::{normalize_state, Controller, Observation, SimConfig};

pub const TRAJECTORY_HEADER: [&str; 4] = ["t_s", "v_leader_mps", "v_follower_mps", "gap_m"];
const DT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Napoli,
    Ngsim,
    Synthetic,
}

impl std::str::FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "napoli" => Ok(Source::Napoli),
            "ngsim" => Ok(Source::Ngsim),
            "synthetic" => Ok(Source::Synthetic),
            other => invalid(format!("unknown dataset source {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub v_leader: f64,
    pub v_follower: f64,
    pub gap: f64,
}

/// One recorded leader-follower pair at a uniform sampling step.
#[derive(Debug, Clone, PartialEq)]
pub struct FollowingEpisode {
    pub id: String,
    pub source: Source,
    pub dt: f64,
    pub records: Vec<TrajectoryRecord>,
}

impl FollowingEpisode {
    /// Validates spacing, signs and length.
    pub fn new(id: impl Into<String>, source: Source, dt: f64, records: Vec<TrajectoryRecord>) -> Result<Self> {
        let ep = Self { id: id.into(), source, dt, records };
        ep.validate()?;
        Ok(ep)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return invalid("episode dt must be positive");
        }
        if self.records.len() < 2 {
            return invalid(format!("episode {} has fewer than 2 records", self.id));
        }
        for (i, r) in self.records.iter().enumerate() {
            check_record(r).map_err(|m| Error::Invalid(format!("episode {} record {i}: {m}", self.id)))?;
            if i > 0 {
                check_spacing(self.records[i - 1].t, r.t, self.dt)
                    .map_err(|m| Error::Invalid(format!("episode {} record {i}: {m}", self.id)))?;
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(TRAJECTORY_HEADER)?;
        for r in &self.records {
            wtr.write_record([r.t, r.v_leader, r.v_follower, r.gap].map(|x| format!("{x}")))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(BufWriter::new(File::create(path)?))
    }
}

fn check_record(r: &TrajectoryRecord) -> std::result::Result<(), String> {
    for (name, x) in [("t_s", r.t), ("v_leader_mps", r.v_leader), ("v_follower_mps", r.v_follower), ("gap_m", r.gap)] {
        if !x.is_finite() {
            return Err(format!("{name} is not finite"));
        }
    }
    if r.v_leader < 0.0 || r.v_follower < 0.0 {
        return Err("negative speed".into());
    }
    if r.gap < 0.0 {
        return Err(format!("negative gap {}", r.gap));
    }
    Ok(())
}

fn check_spacing(prev: f64, t: f64, dt: f64) -> std::result::Result<(), String> {
    let step = t - prev;
    if (step - dt).abs() > DT_TOL {
        return Err(format!("time step {step} s differs from expected {dt} s"));
    }
    Ok(())
}

/// Parses one trajectory file. The expected sampling step is 0.1 s unless
/// `dt` overrides it. Errors name the offending line.
pub fn parse_trajectory_csv(path: &Path, source: Source, dt: Option<f64>) -> Result<FollowingEpisode> {
    let file = File::open(path)?;
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    parse_trajectory_reader(BufReader::new(file), path, &id, source, dt)
}

/// Reader-based variant of [`parse_trajectory_csv`]; `path` only labels errors.
pub fn parse_trajectory_reader<R: Read>(
    r: R,
    path: &Path,
    id: &str,
    source: Source,
    dt: Option<f64>,
) -> Result<FollowingEpisode> {
    let dt = dt.unwrap_or(0.1);
    if !(dt > 0.0) {
        return invalid("dt override must be positive");
    }
    let perr = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(r);
    let headers = rdr.headers().map_err(|e| perr(1, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != TRAJECTORY_HEADER {
        return Err(perr(1, format!("expected header {}, got {:?}", TRAJECTORY_HEADER.join(","), headers)));
    }
    let mut records: Vec<TrajectoryRecord> = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        if row.len() != 4 {
            return Err(perr(line, format!("expected 4 fields, found {}", row.len())));
        }
        let mut vals = [0.0; 4];
        for (k, v) in vals.iter_mut().enumerate() {
            *v = row[k].parse().map_err(|e| perr(line, format!("{}: {e}", TRAJECTORY_HEADER[k])))?;
        }
        let rec = TrajectoryRecord { t: vals[0], v_leader: vals[1], v_follower: vals[2], gap: vals[3] };
        check_record(&rec).map_err(|m| perr(line, m))?;
        if let Some(prev) = records.last() {
            check_spacing(prev.t, rec.t, dt).map_err(|m| perr(line, m))?;
        }
        records.push(rec);
    }
    if records.len() < 2 {
        return Err(perr(records.len() + 1, "a trajectory needs at least 2 rows".into()));
    }
    Ok(FollowingEpisode { id: id.to_string(), source, dt, records })
}

/// Contiguous run of transitions from one recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpan {
    pub id: String,
    pub source: Source,
    pub start: usize,
    pub len: usize,
}

/// Transitions relabeled with the environment's reward, plus provenance.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RelabeledDataset {
    pub transitions: Vec<Transition>,
    pub episodes: Vec<EpisodeSpan>,
    /// Recovered actions that fell outside `[a_min, a_max]` and were clipped.
    pub clipped: usize,
}

impl RelabeledDataset {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.transitions.iter().map(|t| t.reward)
    }

    /// Concatenates datasets, re-basing the episode spans.
    pub fn concat(parts: Vec<RelabeledDataset>) -> Self {
        let mut out = RelabeledDataset::default();
        for p in parts {
            let base = out.transitions.len();
            out.episodes.extend(p.episodes.into_iter().map(|mut s| {
                s.start += base;
                s
            }));
            out.transitions.extend(p.transitions);
            out.clipped += p.clipped;
        }
        out
    }

    fn span(&self, s: &EpisodeSpan) -> &[Transition] {
        &self.transitions[s.start..s.start + s.len]
    }
}

/// Converts a recording into transitions for `t = 1 ..= N-2`.
///
/// The action is the forward difference of the follower speed, the state
/// carries the previous action as the follower acceleration, and the reward is
/// the one the environment would emit after applying that action.
pub fn build_transitions(ep: &FollowingEpisode, cfg: &SimConfig, rcfg: &RewardConfig) -> Result<RelabeledDataset> {
    let n = ep.records.len();
    if n < 3 {
        return invalid(format!("episode {} needs at least 3 records, has {n}", ep.id));
    }
    let dt = ep.dt;
    let r = &ep.records;
    let mut clipped = 0;
    let accel: Vec<f64> = (0..n - 1)
        .map(|t| {
            let raw = (r[t + 1].v_follower - r[t].v_follower) / dt;
            let a = cfg.clip_accel(raw);
            if a != raw {
                clipped += 1;
            }
            a
        })
        .collect();
    let obs = |t: usize, a_prev: f64| -> Result<Observation> {
        normalize_state(r[t].v_follower, a_prev, r[t].v_leader, r[t].gap, cfg)
    };
    let mut transitions = Vec::with_capacity(n - 2);
    for t in 1..n - 1 {
        let jerk = (accel[t] - accel[t - 1]) / dt;
        let (reward, _) = step_reward(r[t + 1].v_follower, r[t + 1].v_leader, r[t + 1].gap, jerk, rcfg)?;
        transitions.push(Transition {
            state: obs(t, accel[t - 1])?,
            action: accel[t],
            reward,
            next_state: obs(t + 1, accel[t])?,
            done: t == n - 2,
        });
    }
    let span = EpisodeSpan { id: ep.id.clone(), source: ep.source, start: 0, len: transitions.len() };
    Ok(RelabeledDataset { transitions, episodes: vec![span], clipped })
}

/// Relabels many recordings in parallel and concatenates them in input order.
pub fn build_dataset(eps: &[FollowingEpisode], cfg: &SimConfig, rcfg: &RewardConfig) -> Result<RelabeledDataset> {
    let parts = eps.par_iter().map(|e| build_transitions(e, cfg, rcfg)).collect::<Result<Vec<_>>>()?;
    Ok(RelabeledDataset::concat(parts))
}

/// Splits into train/eval with `frac` of the data for training.
///
/// With at least 20 recordings whole recordings go to one side (`round((1 -
/// frac) n)` of them, at least one, chosen by `seed`). With fewer, each
/// recording contributes a seeded contiguous block of `round((1 - frac) len)`
/// transitions to eval.
pub fn split_train_eval(ds: &RelabeledDataset, frac: f64, seed: u64) -> Result<(RelabeledDataset, RelabeledDataset)> {
    if ds.is_empty() || ds.episodes.is_empty() {
        return invalid("cannot split an empty dataset");
    }
    if !(frac > 0.0 && frac < 1.0) {
        return invalid(format!("train fraction must lie in (0, 1), got {frac}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut eval = Vec::new();
    let piece = |s: &EpisodeSpan, lo: usize, hi: usize| RelabeledDataset {
        transitions: ds.span(s)[lo..hi].to_vec(),
        episodes: vec![EpisodeSpan { start: 0, len: hi - lo, ..s.clone() }],
        clipped: 0,
    };
    let n_ep = ds.episodes.len();
    if n_ep >= 20 {
        let n_eval = (((1.0 - frac) * n_ep as f64).round() as usize).clamp(1, n_ep - 1);
        let mut idx: Vec<usize> = (0..n_ep).collect();
        idx.shuffle(&mut rng);
        let mut is_eval = vec![false; n_ep];
        idx[..n_eval].iter().for_each(|&i| is_eval[i] = true);
        for (s, e) in ds.episodes.iter().zip(is_eval) {
            let p = piece(s, 0, s.len);
            if e { eval.push(p) } else { train.push(p) }
        }
    } else {
        for s in &ds.episodes {
            let k = ((1.0 - frac) * s.len as f64).round() as usize;
            let k = k.min(s.len);
            let start = if s.len > k { rng.random_range(0..=s.len - k) } else { 0 };
            if start > 0 {
                train.push(piece(s, 0, start));
            }
            if k > 0 {
                eval.push(piece(s, start, start + k));
            }
            if start + k < s.len {
                train.push(piece(s, start + k, s.len));
            }
        }
    }
    Ok((RelabeledDataset::concat(train), RelabeledDataset::concat(eval)))
}

/// Reward counts in 0.05-wide bins over `[-1, 0.5]` plus under/overflow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardHistogram {
    pub lo: f64,
    pub hi: f64,
    pub width: f64,
    pub counts: Vec<usize>,
    pub underflow: usize,
    pub overflow: usize,
    pub total: usize,
    /// Share of rewards >= 0.4.
    pub frac_good: f64,
    /// Share of rewards equal to zero within 1e-9.
    pub frac_zero: f64,
}

impl RewardHistogram {
    pub fn mass(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.underflow + self.overflow
    }

    /// Left edge of bin `i`.
    pub fn edge(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.width
    }
}

pub fn reward_histogram<I: IntoIterator<Item = f64>>(rewards: I) -> Result<RewardHistogram> {
    let (lo, hi, width) = (-1.0, 0.5, 0.05);
    let bins = ((hi - lo) / width as f64).round() as usize;
    let mut h = RewardHistogram {
        lo,
        hi,
        width,
        counts: vec![0; bins],
        underflow: 0,
        overflow: 0,
        total: 0,
        frac_good: 0.0,
        frac_zero: 0.0,
    };
    let (mut good, mut zero) = (0usize, 0usize);
    for r in rewards {
        h.total += 1;
        good += (r >= 0.4) as usize;
        zero += (r.abs() <= 1e-9) as usize;
        if r < lo {
            h.underflow += 1;
        } else if r > hi + 1e-12 {
            h.overflow += 1;
        } else {
            // the epsilon keeps values sitting on a bin edge (0.45, 0.0, ...) in the upper bin
            let i = (((r - lo) / width + 1e-9).floor() as usize).min(bins - 1);
            h.counts[i] += 1;
        }
    }
    if h.total == 0 {
        return invalid("histogram of an empty dataset");
    }
    h.frac_good = good as f64 / h.total as f64;
    h.frac_zero = zero as f64 / h.total as f64;
    Ok(h)
}

// Binary store: magic, u64 count, then per transition 10 little-endian f64
// (state, action, reward, next_state) and one done byte.
const STORE_MAGIC: &[u8; 8] = b"FRLTRN01";

pub fn write_store(path: &Path, transitions: &[Transition]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(STORE_MAGIC)?;
    w.write_all(&(transitions.len() as u64).to_le_bytes())?;
    for t in transitions {
        for x in t.state.0.iter().chain([t.action, t.reward].iter()).chain(t.next_state.0.iter()) {
            w.write_all(&x.to_le_bytes())?;
        }
        w.write_all(&[t.done as u8])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_store(path: &Path) -> Result<Vec<Transition>> {
    let bytes = fs::read(path)?;
    let bad = |m: &str| Error::Format(format!("{}: {m}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != STORE_MAGIC {
        return Err(bad("not a transition store"));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    const REC: usize = 10 * 8 + 1;
    if bytes.len() != 16 + n * REC {
        return Err(bad("truncated or oversized transition store"));
    }
    let mut out = Vec::with_capacity(n);
    for rec in bytes[16..].chunks_exact(REC) {
        let f = |k: usize| f64::from_le_bytes(rec[k * 8..k * 8 + 8].try_into().unwrap());
        let done = match rec[80] {
            0 => false,
            1 => true,
            _ => return Err(bad("invalid done flag")),
        };
        out.push(Transition {
            state: Observation([f(0), f(1), f(2), f(3)]),
            action: f(4),
            reward: f(5),
            next_state: Observation([f(6), f(7), f(8), f(9)]),
            done,
        });
    }
    Ok(out)
}

/// Text manifest stored next to a transition store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub transitions: usize,
    pub clipped: usize,
    pub episodes: Vec<EpisodeSpan>,
    pub histogram: RewardHistogram,
}

pub fn manifest_path(store: &Path) -> PathBuf {
    let mut s = store.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Writes the binary store at `path` and its JSON manifest alongside.
pub fn save_dataset(path: &Path, ds: &RelabeledDataset) -> Result<StoreManifest> {
    write_store(path, &ds.transitions)?;
    let manifest = StoreManifest {
        transitions: ds.len(),
        clipped: ds.clipped,
        episodes: ds.episodes.clone(),
        histogram: reward_histogram(ds.rewards())?,
    };
    fs::write(manifest_path(path), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Loads a store; episode spans come from the manifest when present.
pub fn load_dataset(path: &Path) -> Result<RelabeledDataset> {
    let transitions = read_store(path)?;
    let mp = manifest_path(path);
    let (episodes, clipped) = if mp.exists() {
        let m: StoreManifest = serde_json::from_str(&fs::read_to_string(&mp)?)?;
        if m.transitions != transitions.len() {
            return Err(Error::Format(format!("{}: manifest count disagrees with store", mp.display())));
        }
        (m.episodes, m.clipped)
    } else {
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        (vec![EpisodeSpan { id, source: Source::Napoli, start: 0, len: transitions.len() }], 0)
    };
    Ok(RelabeledDataset { transitions, episodes, clipped })
}

/// A closed-loop rollout recorded as a trajectory, with the rewards the
/// environment emitted at each step.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub episode: FollowingEpisode,
    pub rewards: Vec<f64>,
    pub collided: bool,
}

/// Drives `ctrl` through one environment built by `factory` from `seed`.
pub fn record_rollout<C: Controller + ?Sized>(
    ctrl: &mut C,
    factory: &EpisodeFactory,
    seed: u64,
    id: &str,
) -> Result<Rollout> {
    let (mut env, _) = factory.make(seed)?;
    ctrl.reset();
    let dt = env.config().dt;
    let snap = |env: &crate::sim::FollowEnv, k: usize| TrajectoryRecord {
        t: k as f64 * dt,
        v_leader: env.leader().speed,
        v_follower: env.follower().speed,
        gap: env.gap(),
    };
    let mut records = vec![snap(&env, 0)];
    let mut rewards = Vec::new();
    let mut collided = false;
    while !env.is_done() {
        let a = ctrl.accel(&env.percept());
        let out = env.step(a)?;
        rewards.push(out.reward);
        records.push(snap(&env, records.len()));
        collided |= out.info.collision;
    }
    Ok(Rollout {
        episode: FollowingEpisode { id: id.to_string(), source: Source::Synthetic, dt, records },
        rewards,
        collided,
    })
}

/// Fabricates `n` collision-free recordings of `ctrl` against fresh OU
/// leaders. Colliding rollouts are discarded and replaced.
pub fn synthesize<C: Controller + ?Sized>(
    ctrl: &mut C,
    factory: &EpisodeFactory,
    n: usize,
    seed: u64,
) -> Result<Vec<FollowingEpisode>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n {
        attempts += 1;
        if attempts > 10 * n + 10 {
            return invalid(format!("{} keeps colliding; gave up after {attempts} rollouts", ctrl.name()));
        }
        let ro = record_rollout(ctrl, factory, rng.random(), &format!("synthetic_{:04}", out.len()))?;
        if !ro.collided && ro.episode.len() >= 3 {
            out.push(ro.episode);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward::reward_total;

    fn rec(t: f64, vl: f64, vf: f64, g: f64) -> TrajectoryRecord {
        TrajectoryRecord { t, v_leader: vl, v_follower: vf, gap: g }
    }

    fn parse(text: &str, dt: Option<f64>) -> Result<FollowingEpisode> {
        parse_trajectory_reader(text.as_bytes(), Path::new("mem.csv"), "mem", Source::Napoli, dt)
    }

    #[test]
    fn minimal_file_parses() {
        let ep = parse("t_s,v_leader_mps,v_follower_mps,gap_m\n0,1,1,10\n0.1,1,1,10\n", None).unwrap();
        assert_eq!(ep.len(), 2);
        assert_eq!(ep.records[1], rec(0.1, 1.0, 1.0, 10.0));
    }

    #[test]
    fn negative_gap_names_line() {
        let mut s = String::from("t_s,v_leader_mps,v_follower_mps,gap_m\n");
        for k in 0..8 {
            let g = if k == 5 { -1.0 } else { 10.0 };
            s += &format!("{},5,5,{g}\n", k as f64 * 0.1);
        }
        match parse(&s, None).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 7),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn spacing_and_override() {
        let s = "t_s,v_leader_mps,v_follower_mps,gap_m\n0,1,1,10\n0.2,1,1,10\n0.4,1,1,10\n";
        assert!(matches!(parse(s, None), Err(Error::Parse { line: 3, .. })));
        assert_eq!(parse(s, Some(0.2)).unwrap().dt, 0.2);
        let jitter = "t_s,v_leader_mps,v_follower_mps,gap_m\n0,1,1,10\n0.1000005,1,1,10\n0.2000001,1,1,10\n";
        assert!(parse(jitter, None).is_ok());
        let bad = "t_s,v_leader_mps,v_follower_mps,gap_m\n0,1,1,10\n0.1,x,1,10\n";
        assert!(matches!(parse(bad, None), Err(Error::Parse { line: 3, .. })));
        let short = "t_s,v_leader_mps,v_follower_mps,gap_m\n0,1,1,10\n0.1,1,1\n";
        assert!(matches!(parse(short, None), Err(Error::Parse { line: 3, .. })));
        assert!(parse("t,v,w,g\n0,1,1,1\n0.1,1,1,1\n", None).is_err());
    }

    #[test]
    fn constant_episode_relabels_flat() {
        let recs: Vec<_> = (0..10).map(|k| rec(k as f64 * 0.1, 8.0, 8.0, 20.0)).collect();
        let ep = FollowingEpisode::new("c", Source::Synthetic, 0.1, recs).unwrap();
        let ds = build_transitions(&ep, &SimConfig::default(), &RewardConfig::default()).unwrap();
        assert_eq!(ds.len(), 8);
        let r0 = reward_total(8.0, 8.0, 20.0, 0.0, &RewardConfig::default()).unwrap().total;
        for (i, t) in ds.transitions.iter().enumerate() {
            assert_eq!(t.action, 0.0);
            assert_eq!(t.reward, r0);
            assert_eq!(t.done, i == 7);
        }
        assert_eq!(ds.clipped, 0);
    }

    #[test]
    fn out_of_range_actions_are_clipped_and_counted() {
        let speeds = [0.0, 2.0, 2.0, 2.0, 1.0];
        let recs: Vec<_> = speeds.iter().enumerate().map(|(k, &v)| rec(k as f64 * 0.1, 5.0, v, 30.0)).collect();
        let ep = FollowingEpisode::new("j", Source::Ngsim, 0.1, recs).unwrap();
        let ds = build_transitions(&ep, &SimConfig::default(), &RewardConfig::default()).unwrap();
        assert_eq!(ds.clipped, 2);
        assert_eq!(ds.transitions[0].state.0[1], 1.0);
        assert_eq!(ds.transitions[2].action, -9.0);
    }

    fn spans(lens: &[usize]) -> RelabeledDataset {
        let parts = lens
            .iter()
            .enumerate()
            .map(|(i, &n)| RelabeledDataset {
                transitions: (0..n)
                    .map(|k| Transition {
                        state: Observation([i as f64, k as f64, 0.0, 0.0]),
                        action: 0.0,
                        reward: 0.0,
                        next_state: Observation::default(),
                        done: k + 1 == n,
                    })
                    .collect(),
                episodes: vec![EpisodeSpan { id: format!("e{i}"), source: Source::Synthetic, start: 0, len: n }],
                clipped: 0,
            })
            .collect();
        RelabeledDataset::concat(parts)
    }

    #[test]
    fn split_by_episode() {
        let ds = spans(&[50; 20]);
        let (tr, ev) = split_train_eval(&ds, 0.95, 3).unwrap();
        assert_eq!((tr.episodes.len(), ev.episodes.len()), (19, 1));
        assert_eq!(tr.len() + ev.len(), ds.len());
        assert_eq!(split_train_eval(&ds, 0.95, 3).unwrap(), (tr, ev));
    }

    #[test]
    fn split_by_block_when_few_episodes() {
        let ds = spans(&[100, 40, 7]);
        let (tr, ev) = split_train_eval(&ds, 0.95, 1).unwrap();
        assert_eq!(ev.len(), 5 + 2 + 0);
        assert_eq!(tr.len(), ds.len() - ev.len());
        let mut all: Vec<_> = tr.transitions.iter().chain(&ev.transitions).map(|t| (t.state.0[0] as i64, t.state.0[1] as i64)).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), ds.len());
        assert!(split_train_eval(&RelabeledDataset::default(), 0.95, 0).is_err());
    }

    #[test]
    fn histogram_edges() {
        let h = reward_histogram([0.5, 0.45, 0.4499, -1.0, -1.5, 0.0, 0.0, 0.41]).unwrap();
        assert_eq!(h.counts.len(), 30);
        assert_eq!(h.counts[29], 2);
        assert_eq!(h.counts[28], 2);
        assert_eq!(h.counts[0], 1);
        assert_eq!(h.underflow, 1);
        assert_eq!(h.counts[20], 2);
        assert_eq!(h.mass(), 8);
        assert!((h.frac_good - 0.5).abs() < 1e-15);
        assert!((h.frac_zero - 0.25).abs() < 1e-15);
        assert!(reward_histogram(std::iter::empty()).is_err());
    }

    #[test]
    fn store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = spans(&[5, 3]);
        let p = dir.path().join("d.bin");
        let m = save_dataset(&p, &ds).unwrap();
        assert_eq!(m.transitions, 8);
        assert_eq!(load_dataset(&p).unwrap(), ds);
        fs::write(&p, b"garbage").unwrap();
        assert!(read_store(&p).is_err());
    }
}
