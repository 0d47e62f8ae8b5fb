//! Generates an Ornstein-Uhlenbeck leader, lets the Intelligent Driver Model
//! follow it, and checks the IDM against its closed-form equilibrium gap.
//!
//! cargo run --release --example leader_and_idm -- [seed]

use followrl::baselines::{idm_equilibrium_gap, Idm, IdmParams};
use followrl::eval::{run_scenario, Scenario};
use followrl::reward::RewardConfig;
use followrl::sim::{gen_leader_profile, LeaderProfile, SimConfig};

fn main() -> followrl::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let sim = SimConfig::default();
    let rc = RewardConfig::default();
    let idm = IdmParams::default();

    let profile = gen_leader_profile(seed, 120.0, &sim)?;
    let sc = Scenario { name: "ou".into(), profile, init_gap: 30.0, init_speed: 0.0 };
    let tr = run_scenario(&mut Idm(idm), &sc, &sim, &rc)?;
    println!("{:>6} {:>8} {:>8} {:>8} {:>8}", "t", "v_lead", "v_idm", "gap", "accel");
    for k in (0..tr.len()).step_by(100) {
        println!("{:>6.1} {:>8.2} {:>8.2} {:>8.2} {:>8.2}", tr.t[k], tr.v_leader[k], tr.v_follower[k], tr.gap[k], tr.accel[k]);
    }
    println!("mean reward {:.4}, collision {}", tr.mean_reward(), tr.collision);

    println!("\nconstant leader, gap after 120 s vs equilibrium:");
    for v in [5.0, 10.0, 15.0] {
        let sc = Scenario { name: "c".into(), profile: LeaderProfile::new(sim.dt, vec![v; 1201]), init_gap: 40.0, init_speed: v };
        let tr = run_scenario(&mut Idm(idm), &sc, &sim, &rc)?;
        println!("  {v:>4} m/s: {:.4} m (closed form {:.4} m)", tr.gap.last().unwrap(), idm_equilibrium_gap(v, &idm)?);
    }
    Ok(())
}
