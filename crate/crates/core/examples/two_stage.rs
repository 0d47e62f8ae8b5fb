//! Two-stage training: a stage-one agent resumes training with every
//! minibatch partly drawn from recorded (here: IDM-fabricated) human
//! transitions. Compares the pure agent with several mixing ratios on a
//! synthetic scenario suite.
//!
//! cargo run --release --example two_stage -- [stage1_steps] [stage2_steps] [seed]

use followrl::baselines::{Idm, IdmParams};
use followrl::datasets::{build_dataset, split_train_eval, synthesize};
use followrl::ddpg::{train_stage1, train_stage2, DdpgAgent, DdpgConfig, EpisodeFactory, ReplayBuffer, StageTwoConfig};
use followrl::eval::{run_scenario, synthetic_suite, ttc_summary, Scenario, StdKind};
use followrl::reward::RewardConfig;
use followrl::sim::{Controller, SimConfig};

fn summarize(name: &str, ctrl: &mut dyn Controller, suite: &[Scenario]) -> followrl::Result<()> {
    let (sim, rc) = (SimConfig::default(), RewardConfig::default());
    let (mut ttc, mut gaps, mut reward, mut crashes) = (Vec::new(), Vec::new(), 0.0, 0);
    for sc in suite {
        let tr = run_scenario(ctrl, sc, &sim, &rc)?;
        ttc.extend(tr.ttc.iter().copied());
        gaps.extend(tr.mean_cruising_gap(2.0));
        reward += tr.mean_reward() / suite.len() as f64;
        crashes += tr.collision as usize;
    }
    let s = ttc_summary(&ttc, 10.0, StdKind::Population);
    println!(
        "{name:<8} min TTC {:>6}  TTC<2s {:>4}  cruising gap {:>6.2} m  reward {reward:.4}  collisions {crashes}",
        s.minimum.map_or("none".into(), |m| format!("{m:.2}")),
        s.count_below_2s,
        gaps.iter().sum::<f64>() / gaps.len().max(1) as f64
    );
    Ok(())
}

fn main() -> followrl::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps1: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(100_000);
    let steps2: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(50_000);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let sim = SimConfig::default();
    let factory = EpisodeFactory::default();

    let mut idm = Idm(IdmParams::default());
    let episodes = synthesize(&mut idm, &factory, 50, 1234)?;
    let data = build_dataset(&episodes, &sim, &RewardConfig::default())?;
    let (train, _) = split_train_eval(&data, 0.95, 7)?;
    println!("human data: {} transitions ({} for training)", data.len(), train.len());
    let practical = ReplayBuffer::from_transitions(train.transitions);

    let mut base = DdpgAgent::new(DdpgConfig::default(), &sim, seed)?;
    let c = train_stage1(&mut base, &factory, steps1, seed + 100)?;
    println!("stage one: last-50 greedy reward {:.4}\n", c.greedy_tail_mean(50));

    let suite = synthetic_suite(20, 77, &sim)?;
    summarize("idm", &mut idm, &suite)?;
    summarize("pure", &mut base.clone(), &suite)?;
    for ratio in [0.2, 0.6, 1.0] {
        let mut agent = base.clone();
        let cfg = StageTwoConfig { ratio, steps: steps2, explore: true };
        train_stage2(&mut agent, &practical, &cfg, &factory, seed + 200)?;
        summarize(&format!("r={ratio}"), &mut agent, &suite)?;
    }
    Ok(())
}
