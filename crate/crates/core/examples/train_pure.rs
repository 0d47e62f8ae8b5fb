//! Pure simulator DDPG. Prints the training curve in blocks of 20 episodes
//! (noisy training episodes and the greedy episode run after each), then a
//! 20-episode greedy evaluation, and saves the networks.
//!
//! cargo run --release --example train_pure -- [steps] [seed] [out_dir]

use std::path::PathBuf;

use followrl::ddpg::{evaluate_greedy, mean_reward_per_step, train_stage1, DdpgAgent, DdpgConfig, EpisodeFactory};
use followrl::sim::SimConfig;

fn main() -> followrl::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(100_000);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let out = args.next().map(PathBuf::from);

    let factory = EpisodeFactory::default();
    let mut agent = DdpgAgent::new(DdpgConfig::default(), &SimConfig::default(), seed)?;
    let curve = train_stage1(&mut agent, &factory, steps, seed + 100)?;
    for (train, greedy) in curve.episodes.chunks(20).zip(curve.greedy.chunks(20)) {
        let crashes: usize = train.iter().map(|e| e.collisions).sum();
        println!(
            "episodes {:>4}-{:<4} train {:>7.4} ({crashes} collisions)  greedy {:>7.4}",
            train[0].episode,
            train[train.len() - 1].episode,
            mean_reward_per_step(train),
            mean_reward_per_step(greedy)
        );
    }
    println!("last 50: greedy {:.4}, training {:.4}", curve.greedy_tail_mean(50), curve.train_tail_mean(50));

    let ev = evaluate_greedy(&mut agent, &factory, 20, 999)?;
    println!("greedy evaluation: {:.4} per step, {} collisions", ev.mean_reward_per_step, ev.collisions);
    if let Some(dir) = out {
        agent.save(&dir)?;
        println!("saved to {}", dir.display());
    }
    Ok(())
}
