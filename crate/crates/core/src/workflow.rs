//! File-to-file pipelines behind the `followrl` subcommands: training runs
//! that leave parameter files and reward curves in a directory, evaluation
//! of named agents on scenarios, dataset ingestion and fabrication.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{bc_train, calibrate_idm, BcPolicy, Calibration, Idm, IdmGrid};
use crate::config::Config;
use crate::datasets::{
    build_dataset, load_dataset, parse_trajectory_csv, save_dataset, split_train_eval, synthesize, FollowingEpisode,
    Source, StoreManifest,
};
use crate::ddpg::{
    mean_reward_per_step, train_fully_offpolicy, train_stage1, train_stage2, DdpgAgent, EpisodeFactory, EpisodeStats,
    ReplayBuffer, StageTwoConfig,
};
use crate::error::{invalid, Error, Result};
use crate::eval::{
    compare_report, load_traces, replay_scenario, run_suite, self_defined_profile, synthetic_suite, ReportRow,
    Scenario,
};
use crate::sim::Controller;

/// Offset between the agent initialization seed and the interaction seed.
pub const RUN_SEED_OFFSET: u64 = 100;
pub const DEFAULT_STAGE1_STEPS: usize = 100_000;
pub const DEFAULT_OFFPOLICY_UPDATES: usize = 100_000;
pub const OFFPOLICY_EVAL_INTERVAL: usize = 2_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    Pure,
    TwoStage,
    OffPolicy,
    Bc,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pure => "pure",
            Self::TwoStage => "two-stage",
            Self::OffPolicy => "off-policy",
            Self::Bc => "bc",
        }
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pure" => Ok(Self::Pure),
            "two-stage" => Ok(Self::TwoStage),
            "off-policy" => Ok(Self::OffPolicy),
            "bc" => Ok(Self::Bc),
            other => invalid(format!("unknown training mode {other:?} (pure, two-stage, off-policy, bc)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub mode: TrainMode,
    /// Practical share of each minibatch; two-stage only.
    pub ratio: Option<f64>,
    /// Environment steps (pure, two-stage) or gradient updates (off-policy).
    pub budget: Option<usize>,
    pub seed: u64,
    /// Transition store written by `ingest`.
    pub dataset: Option<PathBuf>,
    /// Stage-one agent directory for two-stage runs; trained from scratch when absent.
    pub init: Option<PathBuf>,
    pub train_frac: f64,
}

impl TrainOptions {
    pub fn new(mode: TrainMode, seed: u64) -> Self {
        Self { mode, ratio: None, budget: None, seed, dataset: None, init: None, train_frac: 0.95 }
    }
}

/// Headline numbers of a training run, also written as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub mode: TrainMode,
    pub seed: u64,
    pub episodes: usize,
    /// Greedy mean reward per step over the last 50 recorded episodes.
    pub greedy_tail: Option<f64>,
    pub train_tail: Option<f64>,
    pub bc_train_mse: Option<f64>,
    pub bc_eval_mse: Option<f64>,
}

pub fn write_episode_csv(path: &Path, stats: &[EpisodeStats]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["episode", "steps", "mean_reward", "collisions"])?;
    for s in stats {
        w.write_record([s.episode.to_string(), s.steps.to_string(), format!("{}", s.mean_reward), s.collisions.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn practical_split(opts: &TrainOptions) -> Result<(crate::datasets::RelabeledDataset, crate::datasets::RelabeledDataset)> {
    let Some(path) = &opts.dataset else {
        return invalid(format!("--dataset is required for {} training", opts.mode.as_str()));
    };
    let ds = load_dataset(path)?;
    if ds.is_empty() {
        return invalid(format!("{} holds no transitions", path.display()));
    }
    split_train_eval(&ds, opts.train_frac, opts.seed)
}

fn tail(stats: &[EpisodeStats], n: usize) -> Option<f64> {
    (!stats.is_empty()).then(|| mean_reward_per_step(&stats[stats.len().saturating_sub(n)..]))
}

/// Runs one training job and writes its artifacts under `out`: parameter
/// files, `rewards.csv`, `greedy_rewards.csv` (online modes), `config.toml`
/// and `summary.json`.
pub fn train_to_dir(opts: &TrainOptions, cfg: &Config, out: &Path) -> Result<TrainSummary> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let factory = EpisodeFactory::new(cfg.sim.clone(), cfg.reward.clone());
    let run_seed = opts.seed.wrapping_add(RUN_SEED_OFFSET);
    let mut summary = TrainSummary {
        mode: opts.mode,
        seed: opts.seed,
        episodes: 0,
        greedy_tail: None,
        train_tail: None,
        bc_train_mse: None,
        bc_eval_mse: None,
    };
    let mut snapshot = cfg.clone();
    match opts.mode {
        TrainMode::Pure => {
            let mut agent = DdpgAgent::new(cfg.ddpg.clone(), &cfg.sim, opts.seed)?;
            let curve = train_stage1(&mut agent, &factory, opts.budget.unwrap_or(DEFAULT_STAGE1_STEPS), run_seed)?;
            agent.save(out)?;
            write_episode_csv(&out.join("rewards.csv"), &curve.episodes)?;
            write_episode_csv(&out.join("greedy_rewards.csv"), &curve.greedy)?;
            summary.episodes = curve.episodes.len();
            summary.greedy_tail = tail(&curve.greedy, 50);
            summary.train_tail = tail(&curve.episodes, 50);
        }
        TrainMode::TwoStage => {
            let (train, _) = practical_split(opts)?;
            let mut agent = match &opts.init {
                Some(dir) => {
                    let mut a = DdpgAgent::load(dir, cfg.ddpg.clone(), &cfg.sim)?;
                    a.reseed(opts.seed);
                    a
                }
                None => {
                    let mut a = DdpgAgent::new(cfg.ddpg.clone(), &cfg.sim, opts.seed)?;
                    let c1 = train_stage1(&mut a, &factory, DEFAULT_STAGE1_STEPS, run_seed)?;
                    write_episode_csv(&out.join("stage1_rewards.csv"), &c1.episodes)?;
                    a
                }
            };
            let s2 = StageTwoConfig {
                ratio: opts.ratio.unwrap_or(cfg.stage2.ratio),
                steps: opts.budget.unwrap_or(cfg.stage2.steps),
                explore: cfg.stage2.explore,
            };
            snapshot.stage2 = s2.clone();
            let practical = ReplayBuffer::from_transitions(train.transitions);
            let curve = train_stage2(&mut agent, &practical, &s2, &factory, run_seed.wrapping_add(RUN_SEED_OFFSET))?;
            agent.save(out)?;
            write_episode_csv(&out.join("rewards.csv"), &curve.episodes)?;
            write_episode_csv(&out.join("greedy_rewards.csv"), &curve.greedy)?;
            summary.episodes = curve.episodes.len();
            summary.greedy_tail = tail(&curve.greedy, 50);
            summary.train_tail = tail(&curve.episodes, 50);
        }
        TrainMode::OffPolicy => {
            let (train, _) = practical_split(opts)?;
            let practical = ReplayBuffer::from_transitions(train.transitions);
            let mut agent = DdpgAgent::new(cfg.ddpg.clone(), &cfg.sim, opts.seed)?;
            let budget = opts.budget.unwrap_or(DEFAULT_OFFPOLICY_UPDATES);
            let curve = train_fully_offpolicy(&mut agent, &practical, budget, OFFPOLICY_EVAL_INTERVAL, &factory, run_seed)?;
            agent.save(out)?;
            write_episode_csv(&out.join("rewards.csv"), &curve)?;
            summary.episodes = curve.len();
            summary.greedy_tail = tail(&curve, 50);
        }
        TrainMode::Bc => {
            let (train, eval) = practical_split(opts)?;
            let (policy, losses) = bc_train(&train, &cfg.bc, &cfg.sim, opts.seed)?;
            policy.save(out)?;
            let mut w = csv::Writer::from_writer(BufWriter::new(File::create(out.join("losses.csv"))?));
            w.write_record(["epoch", "loss"])?;
            for (i, l) in losses.iter().enumerate() {
                w.write_record([i.to_string(), format!("{l}")])?;
            }
            w.flush()?;
            summary.episodes = losses.len();
            summary.bc_train_mse = Some(policy.mse(&train.transitions));
            summary.bc_eval_mse = (!eval.is_empty()).then(|| policy.mse(&eval.transitions));
        }
    }
    snapshot.save(&out.join("config.toml"))?;
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq)]
pub enum AgentKind {
    Ddpg(PathBuf),
    Bc(PathBuf),
    Idm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    pub name: String,
    pub kind: AgentKind,
}

/// Parses `name=ddpg:DIR,other=bc:DIR,idm`. A missing `name=` uses the kind.
pub fn parse_agents(spec: &str) -> Result<Vec<AgentSpec>> {
    let mut out: Vec<AgentSpec> = Vec::new();
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (name, body) = match item.split_once('=') {
            Some((n, b)) => (Some(n.trim()), b.trim()),
            None => (None, item),
        };
        let (kind_str, dir) = match body.split_once(':') {
            Some((k, d)) => (k, Some(PathBuf::from(d))),
            None => (body, None),
        };
        let kind = match (kind_str, dir) {
            ("ddpg", Some(d)) => AgentKind::Ddpg(d),
            ("bc", Some(d)) => AgentKind::Bc(d),
            ("idm", None) => AgentKind::Idm,
            (k, _) => return invalid(format!("bad agent spec {item:?}; expected ddpg:DIR, bc:DIR or idm, got kind {k:?}")),
        };
        let name = name.unwrap_or(kind_str).to_string();
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return invalid(format!("agent name {name:?} must be alphanumeric, '_' or '-'"));
        }
        if out.iter().any(|a| a.name == name) {
            return invalid(format!("agent name {name:?} used twice"));
        }
        out.push(AgentSpec { name, kind });
    }
    if out.is_empty() {
        return invalid("no agents given");
    }
    Ok(out)
}

pub fn build_controller(spec: &AgentSpec, cfg: &Config) -> Result<Box<dyn Controller + Send>> {
    Ok(match &spec.kind {
        AgentKind::Ddpg(dir) => Box::new(DdpgAgent::load(dir, cfg.ddpg.clone(), &cfg.sim)?),
        AgentKind::Bc(dir) => Box::new(BcPolicy::load(dir, &cfg.sim)?),
        AgentKind::Idm => Box::new(Idm(cfg.idm)),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioSpec {
    Replay(PathBuf),
    BuiltinS53,
    SyntheticSuite { n: usize, seed: u64 },
}

impl ScenarioSpec {
    /// `replay:FILE`, `builtin:s53` or `suite:synthetic`; the suite size and
    /// seed come from the caller.
    pub fn parse(s: &str, suite_n: usize, suite_seed: u64) -> Result<Self> {
        match s.split_once(':') {
            Some(("replay", f)) if !f.is_empty() => Ok(Self::Replay(PathBuf::from(f))),
            Some(("builtin", "s53")) => Ok(Self::BuiltinS53),
            Some(("suite", "synthetic")) => Ok(Self::SyntheticSuite { n: suite_n, seed: suite_seed }),
            _ => invalid(format!("unknown scenario {s:?} (replay:FILE, builtin:s53, suite:synthetic)")),
        }
    }

    pub fn scenarios(&self, cfg: &Config) -> Result<Vec<Scenario>> {
        match self {
            Self::Replay(path) => Ok(vec![replay_scenario(&parse_trajectory_csv(path, Source::Napoli, None)?)]),
            Self::BuiltinS53 => Ok(vec![self_defined_profile(&cfg.sim)]),
            Self::SyntheticSuite { n, seed } => synthetic_suite(*n, *seed, &cfg.sim),
        }
    }
}

/// Runs every agent on every scenario. A single scenario is reported directly
/// in `out`; several get one subdirectory each plus `suite_summary.csv`.
pub fn eval_to_dir(
    agents: &[AgentSpec],
    scenario: &ScenarioSpec,
    cfg: &Config,
    out: &Path,
) -> Result<Vec<(String, Vec<ReportRow>)>> {
    let scenarios = scenario.scenarios(cfg)?;
    let mut ctrls = agents.iter().map(|a| Ok((a.name.clone(), build_controller(a, cfg)?))).collect::<Result<Vec<_>>>()?;
    let runs = run_suite(&mut ctrls, &scenarios, &cfg.sim, &cfg.reward)?;
    fs::create_dir_all(out)?;
    let mut reports = Vec::new();
    for (i, sc) in scenarios.iter().enumerate() {
        let traces: BTreeMap<String, _> = runs.iter().map(|(name, trs)| (name.clone(), trs[i].clone())).collect();
        let dir = if scenarios.len() == 1 { out.to_path_buf() } else { out.join(&sc.name) };
        reports.push((sc.name.clone(), compare_report(&traces, &dir, &cfg.eval)?));
    }
    if scenarios.len() > 1 {
        write_suite_summary(&out.join("suite_summary.csv"), &reports)?;
    }
    Ok(reports)
}

/// Per-agent aggregate over all scenarios of a suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub agent: String,
    pub scenarios: usize,
    pub collisions: usize,
    pub min_ttc: Option<f64>,
    pub count_below_2s: usize,
    pub mean_reward: f64,
    pub mean_gap: Option<f64>,
}

pub fn suite_rows(reports: &[(String, Vec<ReportRow>)]) -> Vec<SuiteRow> {
    let mut by_agent: BTreeMap<&str, Vec<&ReportRow>> = BTreeMap::new();
    for (_, rows) in reports {
        for r in rows {
            by_agent.entry(&r.agent).or_default().push(r);
        }
    }
    by_agent
        .into_iter()
        .map(|(agent, rows)| {
            let gaps: Vec<f64> = rows.iter().filter_map(|r| r.mean_gap).collect();
            SuiteRow {
                agent: agent.to_string(),
                scenarios: rows.len(),
                collisions: rows.iter().filter(|r| r.collision).count(),
                min_ttc: rows.iter().filter_map(|r| r.summary.minimum).reduce(f64::min),
                count_below_2s: rows.iter().map(|r| r.summary.count_below_2s).sum(),
                mean_reward: rows.iter().map(|r| r.mean_reward).sum::<f64>() / rows.len() as f64,
                mean_gap: (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64),
            }
        })
        .collect()
}

fn write_suite_summary(path: &Path, reports: &[(String, Vec<ReportRow>)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["agent", "scenarios", "collisions", "min_ttc", "count_below_2s", "mean_reward", "mean_gap"])?;
    let na = |x: Option<f64>| x.map(|v| format!("{v}")).unwrap_or_else(|| "NA".into());
    for r in suite_rows(reports) {
        w.write_record([
            r.agent.clone(),
            r.scenarios.to_string(),
            r.collisions.to_string(),
            na(r.min_ttc),
            r.count_below_2s.to_string(),
            format!("{}", r.mean_reward),
            na(r.mean_gap),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Rebuilds the reports of an `eval` output directory from its trace files.
pub fn report_dir(dir: &Path, cfg: &Config) -> Result<Vec<(String, Vec<ReportRow>)>> {
    if let Ok(traces) = load_traces(dir) {
        let name = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        return Ok(vec![(name, compare_report(&traces, dir, &cfg.eval)?)]);
    }
    let mut subdirs: Vec<PathBuf> =
        fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    subdirs.sort();
    let mut reports = Vec::new();
    for sub in subdirs {
        if let Ok(traces) = load_traces(&sub) {
            let name = sub.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            reports.push((name, compare_report(&traces, &sub, &cfg.eval)?));
        }
    }
    if reports.is_empty() {
        return invalid(format!("no evaluation traces under {}", dir.display()));
    }
    if reports.len() > 1 {
        write_suite_summary(&dir.join("suite_summary.csv"), &reports)?;
    }
    Ok(reports)
}

/// Plain-text TTC table, one line per agent.
pub fn format_report(rows: &[ReportRow]) -> String {
    let f = |x: Option<f64>| x.map(|v| format!("{v:.3}")).unwrap_or_else(|| "NA".into());
    let mut s = format!(
        "{:<14} {:>8} {:>8} {:>8} {:>8} {:>6} {:>5} {:>9} {:>9} {:>8}\n",
        "agent", "min", "mean", "median", "std", "n<10s", "n<2s", "collision", "reward", "gap"
    );
    for r in rows {
        let t = &r.summary;
        let _ = writeln!(
            s,
            "{:<14} {:>8} {:>8} {:>8} {:>8} {:>6} {:>5} {:>9} {:>9.4} {:>8}",
            r.agent,
            f(t.minimum),
            f(t.mean),
            f(t.median),
            f(t.std),
            t.count,
            t.count_below_2s,
            r.collision,
            r.mean_reward,
            f(r.mean_gap)
        );
    }
    s
}

/// Expands `pattern` into a sorted list of files.
pub fn expand_glob(pattern: &str) -> Result<Vec<PathBuf>> {
    let mut paths = glob::glob(pattern)
        .map_err(|e| Error::Invalid(format!("bad glob {pattern:?}: {e}")))?
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Io(e.into()))?;
    paths.sort();
    if paths.is_empty() {
        return invalid(format!("{pattern:?} matches no files"));
    }
    Ok(paths)
}

pub fn load_episodes(pattern: &str, source: Source, dt: Option<f64>) -> Result<Vec<FollowingEpisode>> {
    expand_glob(pattern)?.iter().map(|p| parse_trajectory_csv(p, source, dt)).collect()
}

/// Parses every trajectory matching `pattern`, relabels it and writes the
/// transition store at `out` with its manifest.
pub fn ingest(pattern: &str, out: &Path, dt: Option<f64>, source: Source, cfg: &Config) -> Result<StoreManifest> {
    let eps = load_episodes(pattern, source, dt)?;
    let ds = build_dataset(&eps, &cfg.sim, &cfg.reward)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    save_dataset(out, &ds)
}

/// Rolls the configured IDM out against fresh OU leaders and writes one
/// trajectory CSV per collision-free episode into `out`.
pub fn make_synthetic(out: &Path, episodes: usize, seed: u64, cfg: &Config) -> Result<Vec<PathBuf>> {
    if episodes == 0 {
        return invalid("need at least one episode");
    }
    let factory = EpisodeFactory::new(cfg.sim.clone(), cfg.reward.clone());
    let mut idm = Idm(cfg.idm);
    let eps = synthesize(&mut idm, &factory, episodes, seed)?;
    fs::create_dir_all(out)?;
    eps.iter()
        .map(|ep| {
            let path = out.join(format!("{}.csv", ep.id));
            ep.save_csv(&path)?;
            Ok(path)
        })
        .collect()
}

pub fn calibrate_from_glob(pattern: &str, source: Source, cfg: &Config) -> Result<Calibration> {
    let eps = load_episodes(pattern, source, None)?;
    calibrate_idm(&eps, &cfg.idm, &IdmGrid::default(), &cfg.sim)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn agent_specs() {
        let a = parse_agents("rl=ddpg:out/a, bc:out/b ,idm").unwrap();
        assert_eq!(a[0], AgentSpec { name: "rl".into(), kind: AgentKind::Ddpg("out/a".into()) });
        assert_eq!(a[1], AgentSpec { name: "bc".into(), kind: AgentKind::Bc("out/b".into()) });
        assert_eq!(a[2], AgentSpec { name: "idm".into(), kind: AgentKind::Idm });
        assert!(parse_agents("").is_err());
        assert!(parse_agents("x=ddpg").is_err());
        assert!(parse_agents("idm,idm").is_err());
        assert!(parse_agents("a b=idm").is_err());
        assert!(parse_agents("x=pid:dir").is_err());
    }

    #[test]
    fn scenario_specs() {
        assert_eq!(ScenarioSpec::parse("builtin:s53", 3, 1).unwrap(), ScenarioSpec::BuiltinS53);
        assert_eq!(ScenarioSpec::parse("replay:a.csv", 3, 1).unwrap(), ScenarioSpec::Replay("a.csv".into()));
        assert_eq!(ScenarioSpec::parse("suite:synthetic", 3, 1).unwrap(), ScenarioSpec::SyntheticSuite { n: 3, seed: 1 });
        assert!(ScenarioSpec::parse("builtin:x", 3, 1).is_err());
        assert!(ScenarioSpec::parse("replay:", 3, 1).is_err());
    }

    #[test]
    fn modes() {
        assert_eq!("two-stage".parse::<TrainMode>().unwrap(), TrainMode::TwoStage);
        assert!("twostage".parse::<TrainMode>().is_err());
    }
}
