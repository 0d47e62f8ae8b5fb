//! Prints the step reward as a function of the gap at a few speeds, with the
//! safety, headway and comfort terms broken out.
//!
//! cargo run --example reward_landscape

use followrl::reward::{reward_total, RewardConfig};

fn main() -> followrl::Result<()> {
    let cfg = RewardConfig::default();
    for v in [5.0, 10.0, 20.0] {
        println!("v = v_l = {v} m/s: optimal gap {:.1} m, limit {:.1} m", cfg.optimal_gap(v), cfg.limit_gap(v));
        println!("  {:>7} {:>8} {:>8} {:>8} {:>8}", "gap", "safe", "gap", "jerk", "total");
        for g in [2.0, 5.0, 10.0, cfg.optimal_gap(v), 40.0, 80.0, 150.0] {
            let b = reward_total(v, v, g, 0.0, &cfg)?;
            println!("  {g:>7.1} {:>8.4} {:>8.4} {:>8.4} {:>8.4}", b.r_safe, b.r_gap, b.r_jerk, b.total);
        }
    }

    // closing in fast on a short gap triggers the safety term
    let b = reward_total(15.0, 5.0, 12.0, 0.0, &cfg)?;
    println!("\nclosing at 10 m/s with 12 m left: kinematic decel {:.3}, safety {:.3}, total {:.3}", b.b_kin, b.r_safe, b.total);

    for j in [0.0, 1.0, 3.0, 6.0] {
        let b = reward_total(10.0, 10.0, cfg.optimal_gap(10.0), j, &cfg)?;
        println!("jerk {j:>4} m/s^3 at the optimum: total {:.4}", b.total);
    }
    Ok(())
}
