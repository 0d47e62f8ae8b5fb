//! Inverse longitudinal control: log random pedal drives on a surrogate
//! powertrain, fit the control network, and track a square-wave acceleration
//! command. Repeats on a powertrain with 25% weaker actuators.
//!
//! cargo run --release --example control_inverse

use followrl::control::{
    accel_to_pedals, collect_reverse_data, control_mse, square_wave_probe, stanley_steering, train_control_net,
    CollectConfig, ControlTrainConfig, PowertrainModel, STANLEY_K_V,
};

fn main() -> followrl::Result<()> {
    let nominal = PowertrainModel::default();
    let weak = PowertrainModel { c_throttle: 3.0, c_brake: 6.75, ..nominal };
    for (name, m) in [("nominal", nominal), ("weak", weak)] {
        let data = collect_reverse_data(&m, &CollectConfig::default(), 7)?;
        let held_out = collect_reverse_data(&m, &CollectConfig { duration: 200.0, ..Default::default() }, 99)?;
        let net = train_control_net(&data, &ControlTrainConfig::default(), 3)?;
        let r = square_wave_probe(&net, &m)?;
        println!(
            "{name}: {} samples, held-out mse {:.2e}, square-wave rmse {:.3} m/s^2 ({} infeasible steps)",
            data.len(),
            control_mse(&net, &held_out),
            r.rmse,
            r.infeasible
        );
        for a in [-3.0, -1.0, 0.0, 1.0, 2.0] {
            let (t, b) = accel_to_pedals(&net, 10.0, a, 0.1);
            println!("  {a:>4} m/s^2 at 10 m/s -> throttle {t:.3}, brake {b:.3}");
        }
    }
    println!("stanley steering, 0.2 rad heading error, 0.5 m cross-track at 8 m/s: {:.4} rad", stanley_steering(0.2, 0.5, 8.0, STANLEY_K_V));
    Ok(())
}
