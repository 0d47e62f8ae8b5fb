//! The hand-written MLP: analytic gradients against central differences, a
//! soft target update, and a small Adam regression fit.
//!
//! cargo run --release --example gradient_check

use followrl::neural::{numeric_param_grad, AdamConfig, Gradients, MlpNet, OptimizerState, OutputActivation};

fn main() -> followrl::Result<()> {
    let net = MlpNet::new(&[5, 32, 32, 1], OutputActivation::Linear, 1)?;
    let x = [0.3, -0.2, 0.8, 0.1, -0.5];
    let (_, cache) = net.forward(&x)?;
    let (g, input_grad) = net.backward(&cache, &[1.0])?;
    let num = numeric_param_grad(&net, &x, &[1.0], 1e-5)?;
    let worst = g.0.iter().zip(&num).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("{} parameters, max |analytic - numeric| = {worst:.2e}", net.num_params());
    println!("d output / d input = {input_grad:.4?}");

    let mut target = MlpNet::new(&[5, 32, 32, 1], OutputActivation::Linear, 2)?;
    let d0 = target.max_abs_diff(&net)?;
    for _ in 0..1000 {
        target.soft_update(&net, 0.001)?;
    }
    println!("soft update: deviation {d0:.4} -> {:.4} after 1000 steps (0.999^1000 = {:.4})", target.max_abs_diff(&net)?, 0.999f64.powi(1000));

    // fit y = sin(x0) + x1^2 on a fixed grid
    let mut fit = MlpNet::new(&[2, 16, 16, 1], OutputActivation::Linear, 3)?;
    let mut opt = OptimizerState::new(&fit, AdamConfig { lr: 3e-3, ..Default::default() });
    let data: Vec<([f64; 2], f64)> = (0..100)
        .map(|i| {
            let x = [-1.0 + 0.2 * (i % 10) as f64, -1.0 + 0.2 * (i / 10) as f64];
            (x, x[0].sin() + x[1] * x[1])
        })
        .collect();
    let mut grads = Gradients::zeros_like(&fit);
    for epoch in 0..=2000 {
        grads.clear();
        let mut loss = 0.0;
        for (x, y) in &data {
            let (out, cache) = fit.forward(x)?;
            let e = out[0] - y;
            loss += e * e / data.len() as f64;
            fit.backward_into(&cache, &[2.0 * e / data.len() as f64], &mut grads)?;
        }
        opt.step(&mut fit, &grads)?;
        if epoch % 500 == 0 {
            println!("epoch {epoch:>4}: mse {loss:.5}");
        }
    }
    Ok(())
}
