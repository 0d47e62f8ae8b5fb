//! Scenario rollouts, time-to-collision statistics and comparison reports.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::reward::RewardConfig;
use crate::sim::{gen_leader_profile, Controller, FollowEnv, LeaderProfile, SimConfig};

pub const TTC_THRESHOLD: f64 = 10.0;
pub const TTC_CRITICAL: f64 = 2.0;

/// A leader speed profile with the follower's starting condition. The episode
/// runs for `profile.len() - 1` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub profile: LeaderProfile,
    pub init_gap: f64,
    pub init_speed: f64,
}

impl Scenario {
    pub fn steps(&self) -> usize {
        self.profile.len().saturating_sub(1)
    }

    pub fn duration(&self) -> f64 {
        self.steps() as f64 * self.profile.dt
    }
}

/// Per-step record of one closed-loop run; entry `k` is the state after step `k`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunTrace {
    pub t: Vec<f64>,
    pub v_leader: Vec<f64>,
    pub v_follower: Vec<f64>,
    pub gap: Vec<f64>,
    pub accel: Vec<f64>,
    pub jerk: Vec<f64>,
    pub reward: Vec<f64>,
    pub ttc: Vec<Option<f64>>,
    pub collision: bool,
    pub gap_exceeded: bool,
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn mean_reward(&self) -> f64 {
        self.reward.iter().sum::<f64>() / self.len().max(1) as f64
    }

    /// Mean gap over steps where the leader moves faster than `min_speed`.
    pub fn mean_cruising_gap(&self, min_speed: f64) -> Option<f64> {
        let g: Vec<f64> = self.gap.iter().zip(&self.v_leader).filter(|(_, v)| **v > min_speed).map(|(g, _)| *g).collect();
        (!g.is_empty()).then(|| g.iter().sum::<f64>() / g.len() as f64)
    }

    const HEADER: [&'static str; 8] = ["t", "v_leader", "v_follower", "gap", "accel", "jerk", "reward", "ttc"];

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(Self::HEADER)?;
        for k in 0..self.len() {
            let mut row: Vec<String> = [
                self.t[k],
                self.v_leader[k],
                self.v_follower[k],
                self.gap[k],
                self.accel[k],
                self.jerk[k],
                self.reward[k],
            ]
            .iter()
            .map(|x| format!("{x}"))
            .collect();
            row.push(self.ttc[k].map(|x| format!("{x}")).unwrap_or_default());
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads a trace written by [`RunTrace::write_csv`]. Termination flags are
    /// not stored in the CSV; a final non-positive gap marks a collision.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        if rdr.headers()?.iter().collect::<Vec<_>>() != Self::HEADER {
            return Err(Error::Format(format!("expected trace header {}", Self::HEADER.join(","))));
        }
        let mut tr = RunTrace::default();
        for rec in rdr.records() {
            let rec = rec?;
            let num = |k: usize| -> Result<f64> {
                rec[k].parse().map_err(|e| Error::Format(format!("trace column {}: {e}", Self::HEADER[k])))
            };
            tr.t.push(num(0)?);
            tr.v_leader.push(num(1)?);
            tr.v_follower.push(num(2)?);
            tr.gap.push(num(3)?);
            tr.accel.push(num(4)?);
            tr.jerk.push(num(5)?);
            tr.reward.push(num(6)?);
            tr.ttc.push(if rec[7].is_empty() { None } else { Some(num(7)?) });
        }
        tr.collision = tr.gap.last().is_some_and(|g| *g <= 0.0);
        Ok(tr)
    }
}

/// Time to collision, `None` when the follower is not closing in.
pub fn ttc(gap: f64, v_f: f64, v_l: f64) -> Result<Option<f64>> {
    if !(gap > 0.0) {
        return invalid(format!("TTC needs a positive gap, got {gap}"));
    }
    Ok((v_f > v_l).then(|| gap / (v_f - v_l)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StdKind {
    #[default]
    Population,
    Sample,
}

/// Report settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ttc_threshold: f64,
    /// Keep TTC values exactly equal to the threshold.
    pub ttc_inclusive: bool,
    pub std_kind: StdKind,
    /// Leader speed above which a step counts toward the cruising gap.
    pub cruise_min_speed: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { ttc_threshold: TTC_THRESHOLD, ttc_inclusive: true, std_kind: StdKind::Population, cruise_min_speed: 2.0 }
    }
}

impl EvalConfig {
    /// Threshold to pass to [`ttc_summary`], which always keeps `<=`.
    pub fn effective_threshold(&self) -> f64 {
        if self.ttc_inclusive { self.ttc_threshold } else { self.ttc_threshold.next_down() }
    }
}

/// Statistics over the finite TTC values at or below the threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtcSummary {
    pub threshold: f64,
    pub count: usize,
    pub count_below_2s: usize,
    /// False when no TTC value passed the filter; the statistics are then `None`.
    pub defined: bool,
    pub minimum: Option<f64>,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub std: Option<f64>,
}

pub fn ttc_summary(values: &[Option<f64>], threshold: f64, std_kind: StdKind) -> TtcSummary {
    let mut v: Vec<f64> = values.iter().flatten().copied().filter(|x| x.is_finite() && *x <= threshold).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let below = v.iter().filter(|x| **x < TTC_CRITICAL).count();
    if n == 0 {
        return TtcSummary {
            threshold,
            count: 0,
            count_below_2s: 0,
            defined: false,
            minimum: None,
            mean: None,
            median: None,
            std: None,
        };
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    let ss = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
    let std = match std_kind {
        StdKind::Population => Some((ss / n as f64).sqrt()),
        StdKind::Sample if n > 1 => Some((ss / (n - 1) as f64).sqrt()),
        StdKind::Sample => None,
    };
    TtcSummary {
        threshold,
        count: n,
        count_below_2s: below,
        defined: true,
        minimum: Some(v[0]),
        mean: Some(mean),
        median: Some(median),
        std,
    }
}

/// Deterministic rollout of `ctrl` through `sc`. A collision or lost leader
/// ends the trace early with the corresponding flag set.
pub fn run_scenario<C: Controller + ?Sized>(ctrl: &mut C, sc: &Scenario, sim: &SimConfig, rcfg: &RewardConfig) -> Result<RunTrace> {
    if sc.steps() == 0 {
        return invalid(format!("scenario {} has no steps", sc.name));
    }
    let cfg = SimConfig { dt: sc.profile.dt, max_steps: sc.steps(), ..sim.clone() };
    let mut env = FollowEnv::new(cfg, rcfg.clone())?;
    env.reset_with(sc.profile.clone(), sc.init_gap, sc.init_speed)?;
    ctrl.reset();
    let mut tr = RunTrace::default();
    while !env.is_done() {
        let a = ctrl.accel(&env.percept());
        let out = env.step(a)?;
        let i = &out.info;
        tr.t.push(env.step_index() as f64 * sc.profile.dt);
        tr.v_leader.push(i.v_leader);
        tr.v_follower.push(i.v_follower);
        tr.gap.push(i.gap);
        tr.accel.push(i.accel);
        tr.jerk.push(i.jerk);
        tr.reward.push(out.reward);
        tr.ttc.push(if i.gap > 0.0 { ttc(i.gap, i.v_follower, i.v_leader)? } else { None });
        tr.collision |= i.collision;
        tr.gap_exceeded |= i.gap_exceeded;
    }
    Ok(tr)
}

/// Runs every agent on every scenario, agents in parallel.
pub fn run_suite(
    agents: &mut [(String, Box<dyn Controller + Send>)],
    scenarios: &[Scenario],
    sim: &SimConfig,
    rcfg: &RewardConfig,
) -> Result<BTreeMap<String, Vec<RunTrace>>> {
    let runs = agents
        .par_iter_mut()
        .map(|(name, ctrl)| {
            let traces = scenarios.iter().map(|sc| run_scenario(ctrl.as_mut(), sc, sim, rcfg)).collect::<Result<Vec<_>>>()?;
            Ok((name.clone(), traces))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(runs.into_iter().collect())
}

/// Piecewise-constant-acceleration speed profile from `(accel, seconds)` pieces.
pub fn piecewise_profile(pieces: &[(f64, f64)], dt: f64, v_des: f64) -> LeaderProfile {
    let total: f64 = pieces.iter().map(|p| p.1).sum();
    let n = (total / dt).round() as usize + 1;
    let speeds = (0..n)
        .map(|k| {
            let t = k as f64 * dt;
            let (mut start, mut v0) = (0.0, 0.0);
            for &(a, d) in pieces {
                // small slack so a sample on a knot belongs to the next piece
                if t < start + d - 1e-9 {
                    return (v0 + a * (t - start)).clamp(0.0, v_des);
                }
                v0 += a * d;
                start += d;
            }
            v0.clamp(0.0, v_des)
        })
        .collect();
    LeaderProfile::new(dt, speeds)
}

/// Pieces of the built-in braking scenario: standstill until 18 s, +2 m/s^2
/// up to 18 m/s, cruise until 48 s, -5 m/s^2 to a stop, then two
/// accelerate-cruise-decelerate trapezoids at +-2 m/s^2.
pub const S53_PIECES: [(f64, f64); 13] = [
    (0.0, 18.0),
    (2.0, 9.0),
    (0.0, 21.0),
    (-5.0, 3.6),
    (0.0, 5.0),
    (2.0, 6.0),
    (0.0, 10.0),
    (-2.0, 6.0),
    (0.0, 5.0),
    (2.0, 4.0),
    (0.0, 10.0),
    (-2.0, 4.0),
    (0.0, 5.0),
];

pub fn self_defined_profile(sim: &SimConfig) -> Scenario {
    Scenario {
        name: "s53".into(),
        profile: piecewise_profile(&S53_PIECES, sim.dt, sim.v_des),
        init_gap: 50.0,
        init_speed: 0.0,
    }
}

/// `n` scenarios of 150 s against fresh OU leaders starting at rest, initial
/// gaps uniform in `[10, 60]` m.
pub fn synthetic_suite(n: usize, seed: u64, sim: &SimConfig) -> Result<Vec<Scenario>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let profile = gen_leader_profile(rng.random(), 150.0 + sim.dt, sim)?;
            Ok(Scenario { name: format!("synthetic_{i:02}"), profile, init_gap: rng.random_range(10.0..60.0), init_speed: 0.0 })
        })
        .collect()
}

/// Leader replay from a recorded trajectory file.
pub fn replay_scenario(ep: &crate::datasets::FollowingEpisode) -> Scenario {
    Scenario {
        name: ep.id.clone(),
        profile: LeaderProfile::new(ep.dt, ep.records.iter().map(|r| r.v_leader).collect()),
        init_gap: ep.records[0].gap,
        init_speed: ep.records[0].v_follower,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub agent: String,
    pub summary: TtcSummary,
    pub collision: bool,
    pub mean_reward: f64,
    pub mean_gap: Option<f64>,
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v}")).unwrap_or_else(|| "NA".into())
}

pub const SUMMARY_HEADER: [&str; 10] =
    ["agent", "Minimum", "Mean", "Median", "Std dev", "count", "count_below_2s", "collision", "mean_reward", "mean_gap"];

/// Writes per-agent trace CSVs, a TTC summary table and a long-format CSV
/// (`t,agent,series,value`) under `out`. Returns the summary rows.
pub fn compare_report(traces: &BTreeMap<String, RunTrace>, out: &Path, cfg: &EvalConfig) -> Result<Vec<ReportRow>> {
    if traces.is_empty() {
        return invalid("report needs at least one trace");
    }
    fs::create_dir_all(out)?;
    let mut rows = Vec::new();
    let mut sum = csv::Writer::from_writer(BufWriter::new(File::create(out.join("ttc_summary.csv"))?));
    sum.write_record(SUMMARY_HEADER)?;
    let mut long = csv::Writer::from_writer(BufWriter::new(File::create(out.join("long.csv"))?));
    long.write_record(["t", "agent", "series", "value"])?;
    for (agent, tr) in traces {
        tr.write_csv(BufWriter::new(File::create(out.join(format!("trace_{agent}.csv")))?))?;
        let row = ReportRow {
            agent: agent.clone(),
            summary: ttc_summary(&tr.ttc, cfg.effective_threshold(), cfg.std_kind),
            collision: tr.collision,
            mean_reward: tr.mean_reward(),
            mean_gap: tr.mean_cruising_gap(cfg.cruise_min_speed),
        };
        let s = &row.summary;
        sum.write_record([
            agent.clone(),
            opt(s.minimum),
            opt(s.mean),
            opt(s.median),
            opt(s.std),
            s.count.to_string(),
            s.count_below_2s.to_string(),
            row.collision.to_string(),
            format!("{}", row.mean_reward),
            opt(row.mean_gap),
        ])?;
        for k in 0..tr.len() {
            let t = format!("{}", tr.t[k]);
            for (series, v) in [
                ("v_leader", Some(tr.v_leader[k])),
                ("v_follower", Some(tr.v_follower[k])),
                ("gap", Some(tr.gap[k])),
                ("accel", Some(tr.accel[k])),
                ("ttc", tr.ttc[k]),
            ] {
                if let Some(v) = v {
                    long.write_record([t.as_str(), agent, series, &format!("{v}")])?;
                }
            }
        }
        rows.push(row);
    }
    sum.flush()?;
    long.flush()?;
    Ok(rows)
}

/// Re-reads every `trace_<agent>.csv` in `dir`.
pub fn load_traces(dir: &Path) -> Result<BTreeMap<String, RunTrace>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|s| s.to_str()).unwrap_or_default();
        if let Some(agent) = name.strip_prefix("trace_").and_then(|s| s.strip_suffix(".csv")) {
            out.insert(agent.to_string(), RunTrace::read_csv(BufReader::new(File::open(&path)?))?);
        }
    }
    if out.is_empty() {
        return invalid(format!("no trace_*.csv files in {}", dir.display()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::ConstantAccel;

    #[test]
    fn ttc_examples() {
        assert_eq!(ttc(20.0, 25.0, 15.0).unwrap(), Some(2.0));
        assert_eq!(ttc(20.0, 15.0, 15.0).unwrap(), None);
        assert_eq!(ttc(20.0, 10.0, 15.0).unwrap(), None);
        assert!(ttc(0.0, 10.0, 5.0).is_err());
    }

    #[test]
    fn summary_hand_case() {
        let s = ttc_summary(&[Some(1.0), Some(3.0), Some(11.0), None], 10.0, StdKind::Population);
        assert_eq!((s.minimum, s.mean, s.median), (Some(1.0), Some(2.0), Some(2.0)));
        assert_eq!((s.count, s.count_below_2s), (2, 1));
        assert_eq!(s.std, Some(1.0));
        let c = ttc_summary(&[Some(5.0); 7], 10.0, StdKind::Population);
        assert_eq!((c.minimum, c.mean, c.median, c.std), (Some(5.0), Some(5.0), Some(5.0), Some(0.0)));
        let edge = ttc_summary(&[Some(10.0)], 10.0, StdKind::Population);
        assert_eq!(edge.count, 1);
        let strict = EvalConfig { ttc_inclusive: false, ..Default::default() };
        assert_eq!(ttc_summary(&[Some(10.0), Some(9.999)], strict.effective_threshold(), StdKind::Population).count, 1);
        let none = ttc_summary(&[None, Some(12.0)], 10.0, StdKind::Population);
        assert!(!none.defined && none.mean.is_none() && none.count == 0);
        let s = ttc_summary(&[Some(1.0), Some(3.0)], 10.0, StdKind::Sample);
        assert!((s.std.unwrap() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn builtin_profile_shape() {
        let sim = SimConfig::default();
        let sc = self_defined_profile(&sim);
        let p = &sc.profile;
        assert!((p.speed_at(480) - 18.0).abs() < 1e-9);
        assert_eq!(p.speed_at(179), 0.0);
        for k in 481..515 {
            let slope = (p.speeds[k + 1] - p.speeds[k]) / p.dt;
            assert!((slope + 5.0).abs() < 1e-9, "k={k} slope={slope}");
        }
        assert_eq!(p.speed_at(516), 0.0);
        for w in p.speeds.windows(2) {
            let a = (w[1] - w[0]) / p.dt;
            assert!(a >= sim.a_min - 1e-9 && a <= sim.a_max + 1e-9);
        }
        assert_eq!(sc.init_gap, 50.0);
    }

    #[test]
    fn zero_accel_gap_grows_and_runs_repeat() {
        let sim = SimConfig::default();
        let speeds: Vec<f64> = (0..301).map(|k| k as f64 * 0.1 * 0.2).collect();
        let sc = Scenario { name: "ramp".into(), profile: LeaderProfile::new(0.1, speeds), init_gap: 10.0, init_speed: 0.0 };
        let tr = run_scenario(&mut ConstantAccel(0.0), &sc, &sim, &RewardConfig::default()).unwrap();
        assert!(tr.gap.windows(2).all(|w| w[1] > w[0]));
        let again = run_scenario(&mut ConstantAccel(0.0), &sc, &sim, &RewardConfig::default()).unwrap();
        assert_eq!(tr, again);
        assert_eq!(tr.len(), 300);
    }

    #[test]
    fn collision_flags_trace() {
        let sim = SimConfig::default();
        let sc = Scenario { name: "wall".into(), profile: LeaderProfile::new(0.1, vec![0.0; 200]), init_gap: 5.0, init_speed: 10.0 };
        let tr = run_scenario(&mut ConstantAccel(0.0), &sc, &sim, &RewardConfig::default()).unwrap();
        assert!(tr.collision);
        assert!(tr.len() < 199);
        assert!(tr.gap[..tr.len() - 1].iter().all(|g| *g > 0.0));
    }

    #[test]
    fn report_round_trip() {
        let sim = SimConfig::default();
        let sc = self_defined_profile(&sim);
        let tr = run_scenario(&mut ConstantAccel(1.0), &sc, &sim, &RewardConfig::default()).unwrap();
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), tr.clone());
        m.insert("b".to_string(), tr.clone());
        let dir = tempfile::tempdir().unwrap();
        let rows = compare_report(&m, dir.path(), &EvalConfig::default()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].summary, rows[1].summary);
        assert_eq!(rows[0].summary, ttc_summary(&tr.ttc, 10.0, StdKind::Population));
        let back = load_traces(dir.path()).unwrap();
        let t2 = &back["a"];
        assert_eq!(t2.len(), tr.len());
        for k in 0..tr.len() {
            assert_eq!(t2.gap[k], tr.gap[k]);
            assert_eq!(t2.ttc[k], tr.ttc[k]);
        }
    }
}
