//! Recovers IDM parameters by grid search: recordings come from an IDM with a
//! known time gap and the calibrator minimizes replayed-gap RMSE.
//!
//! cargo run --release --example idm_calibration

use followrl::baselines::{calibrate_idm, Idm, IdmGrid, IdmParams};
use followrl::datasets::synthesize;
use followrl::ddpg::EpisodeFactory;
use followrl::sim::SimConfig;

fn main() -> followrl::Result<()> {
    let truth = IdmParams { t_gap: 1.4, a: 1.5, ..Default::default() };
    let sim = SimConfig { max_steps: 600, ..Default::default() };
    let factory = EpisodeFactory::new(sim.clone(), Default::default());
    let eps = synthesize(&mut Idm(truth), &factory, 6, 21)?;
    let cal = calibrate_idm(&eps, &IdmParams::default(), &IdmGrid::default(), &sim)?;
    let p = cal.params;
    println!("searched {} candidates, gap rmse {:.4} m", cal.candidates, cal.rmse);
    println!("T {} (true {}), a {} (true {}), b {}, s0 {}", p.t_gap, truth.t_gap, p.a, truth.a, p.b, p.g_min);
    Ok(())
}
