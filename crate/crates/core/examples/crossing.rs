//! Fits the full model to the crossing-curves simulation and compares the
//! group survival curves with the truth.
//!
//! ```text
//! cargo run --release -p odesurv --example crossing -- [seed] [n]
//! ```

use std::time::Instant;

use odesurv::data::{crossing_survival, simulate_crossing, split};
use odesurv::model::predict_survival;
use odesurv::train::{fit, ModelSpec, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1);
    let n: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(10_000);

    let data = simulate_crossing(n, seed)?;
    let (train, val, _test) = split(&data, [3.0, 1.0, 1.0], seed)?;
    let config = TrainConfig { seed, ..TrainConfig::default() };
    let start = Instant::now();
    let (model, history) = fit(&ModelSpec::default(), &train, &val, &config)?;
    println!(
        "{} epochs in {:.1}s, best epoch {} val {:.5}",
        history.val_loss.len() - 1,
        start.elapsed().as_secs_f64(),
        history.best_epoch,
        history.best_val_loss
    );

    let grid: Vec<f64> = (0..=200).map(|k| 2.0 * k as f64 / 200.0).collect();
    let s0 = predict_survival(&model, &[0.0], &grid, &config.solver)?.values;
    let s1 = predict_survival(&model, &[1.0], &grid, &config.solver)?.values;
    let mut worst = 0.0f64;
    for (k, &t) in grid.iter().enumerate().filter(|(_, &t)| t <= 1.0) {
        worst = worst.max((s0[k] - crossing_survival(0.0, t)).abs());
        worst = worst.max((s1[k] - crossing_survival(1.0, t)).abs());
    }
    let crossing = (1..grid.len()).find(|&k| (s0[k] - s1[k]) * (s0[k - 1] - s1[k - 1]) < 0.0 && grid[k] > 0.1);
    println!("max |S - S_true| on [0, 1]: {worst:.4}");
    match crossing {
        Some(k) => println!("curves cross near t = {:.3}", grid[k]),
        None => println!("curves do not cross"),
    }
    Ok(())
}
