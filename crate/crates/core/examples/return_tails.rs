//! First-return tail of the falling-balls system to its ball-ball collisions.
use cmz::dynamics::falling_balls::FallingBalls;
use cmz::dynamics::{return_histogram, StreamOptions, System, DEFAULT_BALLS_BURN_IN};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n_events = std::env::args().nth(1).map_or(Ok(10_000_000), |s| s.parse())?;
    let system = System::FallingBalls(FallingBalls::default());
    let opts = StreamOptions { n_events, burn_in: DEFAULT_BALLS_BURN_IN, seed: 1, workers: 0 };
    let hist = return_histogram(&system, &opts, 1000)?;
    let fit = hist.tail().fit_index(10, 100)?;
    println!("{} returns over {n_events} collisions", hist.total());
    println!("tail index on [10, 100]: {:.3} +- {:.3}", fit.alpha, fit.stderr);
    println!("Kac product {:.4} +- {:.4}", hist.kac.product, hist.kac.stderr);
    println!("max relative energy drift {:.2e}", hist.quality.max_energy_drift);
    Ok(())
}
