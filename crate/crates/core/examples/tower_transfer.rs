//! Builds a synthetic tower with an n^-3 base return tail and compares the
//! exact A, H and r curves.
use cmz::tower::{build_synthetic, exact_tails, hat_ratio, verify_main_theorem, HatOptions, MainOptions};
use cmz::RegVar;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let r = RegVar::pure_power(3.0);
    let model = build_synthetic(&r, 0.5, 10_000, 0.0, 1)?;
    println!("cells {}, h_bar {:.4}, sigma_bar {:.4}", model.cells().len(), model.h_bar(), model.sigma_bar());
    let tails = exact_tails(&model, 10_000);
    for n in [10, 100, 1000, 10_000] {
        let (a, h) = (tails.a.at(n).unwrap_or(0.0), tails.h.at(n).unwrap_or(0.0));
        println!("n = {n:>5}: A {a:.3e}  H {h:.3e}  r {:.3e}", r.evaluate(n as f64)?);
    }
    let rep = verify_main_theorem(
        &model,
        &r,
        10_000,
        1.0,
        &MainOptions { window: Some((100, 10_000)), ..Default::default() },
    )?;
    println!("A/r band {:.3}, A/H band {:.3}, verdict {:?}", rep.a_over_r.width(), rep.a_over_h.width(), rep.verdict_c);
    let hat = hat_ratio(&model, 2.0, 0.9, &[10, 30, 100, 300, 1000], HatOptions::default())?;
    println!("hat-ratio exponent {:?}", hat.delta);
    Ok(())
}
