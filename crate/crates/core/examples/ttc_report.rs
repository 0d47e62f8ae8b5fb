//! Runs the built-in braking scenario with two IDM variants and a briefly
//! trained DDPG agent, then writes the comparison report (traces, TTC
//! summary, long-format CSV).
//!
//! cargo run --release --example ttc_report -- [out_dir]

use std::collections::BTreeMap;
use std::path::PathBuf;

use followrl::baselines::{Idm, IdmParams};
use followrl::ddpg::{train_stage1, DdpgAgent, DdpgConfig, EpisodeFactory};
use followrl::eval::{compare_report, run_scenario, self_defined_profile, EvalConfig};
use followrl::reward::RewardConfig;
use followrl::sim::{Controller, SimConfig};
use followrl::workflow::format_report;

fn main() -> followrl::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("followrl_ttc_report"));
    let sim = SimConfig::default();
    let rc = RewardConfig::default();
    let sc = self_defined_profile(&sim);

    let mut agent = DdpgAgent::new(DdpgConfig::default(), &sim, 0)?;
    train_stage1(&mut agent, &EpisodeFactory::default(), 30_000, 100)?;

    let mut agents: Vec<(&str, Box<dyn Controller>)> = vec![
        ("idm", Box::new(Idm(IdmParams::default()))),
        ("idm_t1.6", Box::new(Idm(IdmParams { t_gap: 1.6, ..Default::default() }))),
        ("ddpg_30k", Box::new(agent)),
    ];
    let mut traces = BTreeMap::new();
    for (name, ctrl) in agents.iter_mut() {
        traces.insert(name.to_string(), run_scenario(ctrl.as_mut(), &sc, &sim, &rc)?);
    }
    let rows = compare_report(&traces, &out, &EvalConfig::default())?;
    print!("{}", format_report(&rows));
    println!("report written to {}", out.display());
    Ok(())
}
