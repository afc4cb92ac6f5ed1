//! Index estimation and tail sums for a log-corrected power law.
use cmz::rv::{estimate_index, tail_sum_and_integral, Modifier, RegVar, TailSumOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let r = RegVar::new(3.0, Modifier::LogPower { beta: 1.0 }, 1.0, 3.0)?;
    for (lo, hi) in [(1e2f64, 1e4f64), (1e4, 1e8), (1e8, 1e12)] {
        let samples: Vec<(f64, f64)> = (0..100)
            .map(|i| lo * (hi / lo).powf(i as f64 / 99.0))
            .map(|x| Ok((x, r.evaluate(x)?)))
            .collect::<Result<_, cmz::rv::RvError>>()?;
        let est = estimate_index(&samples, (lo, hi))?;
        println!("window [{lo:.0e}, {hi:.0e}]: fitted index {:.4}", est.alpha);
    }
    for n in [10, 1000, 100_000] {
        let ts = tail_sum_and_integral(&r, n, TailSumOptions::default())?;
        println!("n = {n}: sum {:.6e}, integral {:.6e}, ratio {:.6}", ts.sum, ts.integral, ts.ratio);
    }
    Ok(())
}
