//! Correlations of the fast-subset indicator along a flower billiard orbit.
use cmz::dynamics::tables::{flowers_table, FlowerSpec};
use cmz::dynamics::{observe, Selector, StreamOptions, System};
use cmz::estat::{Observable, Support};
use cmz::fit::loglog;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let system = System::Billiard { table: flowers_table(&FlowerSpec::default())?, selector: Selector::FirstFocusing };
    let f = Observable::new("fast indicator", Support::Fast, 1.0, 1.0, |_| 1.0);
    let lags: Vec<u64> = (0..=30).collect();
    let n_events = 10_000_000;
    let run = observe(
        &system,
        &f,
        &f,
        &lags,
        n_events / 16 / 200,
        u64::MAX,
        &StreamOptions { n_events, burn_in: 0, seed: 3, workers: 0 },
    )?;
    for n in [1, 2, 5, 10, 20, 30] {
        println!("C({n:>2}) = {:+.3e} +- {:.1e}", run.correlation.estimates[n], run.correlation.stderr[n]);
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = (5..=30).map(|n| (n as f64, run.correlation.estimates[n].abs())).unzip();
    let line = loglog(&xs, &ys)?;
    println!("log-log slope on [5, 30]: {:.2} +- {:.2}", line.slope, line.slope_stderr);
    Ok(())
}
