//! Recorded trajectories to replay transitions: fabricate IDM recordings,
//! write and re-parse them as CSV, relabel with the simulator reward, inspect
//! the reward histogram, split train/eval and round-trip the binary store.
//!
//! cargo run --release --example dataset_pipeline -- [dir]

use std::path::PathBuf;

use followrl::baselines::{Idm, IdmParams};
use followrl::datasets::{build_dataset, load_dataset, parse_trajectory_csv, save_dataset, split_train_eval, synthesize, Source};
use followrl::ddpg::EpisodeFactory;
use followrl::reward::RewardConfig;
use followrl::sim::SimConfig;

fn main() -> followrl::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("followrl_dataset"));
    std::fs::create_dir_all(&dir)?;
    let sim = SimConfig::default();
    let rc = RewardConfig::default();

    let eps = synthesize(&mut Idm(IdmParams::default()), &EpisodeFactory::default(), 25, 1234)?;
    let mut parsed = Vec::new();
    for ep in &eps {
        let path = dir.join(format!("{}.csv", ep.id));
        ep.save_csv(&path)?;
        parsed.push(parse_trajectory_csv(&path, Source::Synthetic, None)?);
    }
    assert_eq!(parsed, eps);
    println!("{} recordings written and re-parsed under {}", eps.len(), dir.display());

    let ds = build_dataset(&parsed, &sim, &rc)?;
    let store = dir.join("human.bin");
    let manifest = save_dataset(&store, &ds)?;
    let h = &manifest.histogram;
    println!("{} transitions, {} clipped actions, {:.1}% of rewards >= 0.4", ds.len(), ds.clipped, 100.0 * h.frac_good);
    for (i, c) in h.counts.iter().enumerate().filter(|(_, c)| **c > 0) {
        println!("  [{:>5.2}, {:>5.2})  {c}", h.edge(i), h.edge(i + 1));
    }

    let (train, eval) = split_train_eval(&ds, 0.95, 7)?;
    println!("split: {} train / {} eval recordings", train.episodes.len(), eval.episodes.len());
    assert_eq!(load_dataset(&store)?, ds);
    println!("store round trip ok ({})", store.display());
    Ok(())
}
