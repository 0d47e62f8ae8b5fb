//! Learning from recorded data alone: fully off-policy DDPG (which suffers
//! from extrapolation error on states the data never visits) and behavior
//! cloning, both on IDM-fabricated human data.
//!
//! cargo run --release --example offline_baselines -- [updates]

use followrl::baselines::{bc_train, BcConfig, Idm, IdmParams};
use followrl::datasets::{build_dataset, split_train_eval, synthesize};
use followrl::ddpg::{evaluate_greedy, train_fully_offpolicy, DdpgAgent, DdpgConfig, EpisodeFactory, ReplayBuffer};
use followrl::reward::RewardConfig;
use followrl::sim::SimConfig;

fn main() -> followrl::Result<()> {
    let updates: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100_000);
    let sim = SimConfig::default();
    let factory = EpisodeFactory::default();
    let mut idm = Idm(IdmParams::default());
    let episodes = synthesize(&mut idm, &factory, 50, 1234)?;
    let data = build_dataset(&episodes, &sim, &RewardConfig::default())?;
    let (train, held_out) = split_train_eval(&data, 0.95, 7)?;

    let ev = evaluate_greedy(&mut idm, &factory, 20, 999)?;
    println!("idm (data source):  reward {:.4}, collisions {}", ev.mean_reward_per_step, ev.collisions);

    let (mut bc, losses) = bc_train(&train, &BcConfig::default(), &sim, 5)?;
    println!(
        "behavior cloning:   loss {:.4} -> {:.4}, held-out mse {:.4}",
        losses[0],
        losses[losses.len() - 1],
        bc.mse(&held_out.transitions)
    );
    let ev = evaluate_greedy(&mut bc, &factory, 20, 999)?;
    println!("                    reward {:.4}, collisions {}", ev.mean_reward_per_step, ev.collisions);

    let practical = ReplayBuffer::from_transitions(train.transitions);
    let mut agent = DdpgAgent::new(DdpgConfig::default(), &sim, 300)?;
    let curve = train_fully_offpolicy(&mut agent, &practical, updates, updates / 10, &factory, 400)?;
    let points: Vec<String> = curve.iter().map(|e| format!("{:.3}", e.mean_reward)).collect();
    println!("off-policy ddpg:    greedy reward every {} updates: {}", updates / 10, points.join(" "));
    let ev = evaluate_greedy(&mut agent, &factory, 20, 999)?;
    println!("                    reward {:.4}, collisions {}", ev.mean_reward_per_step, ev.collisions);
    Ok(())
}
