//! Runs a JSON experiment configuration and lists the manifest.
//!
//! `cargo run --release --example run_config -- configs/falling_balls.json out/balls`
use std::path::PathBuf;

use cmz::runner::{load_config, run, RunOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let config = PathBuf::from(args.next().ok_or("usage: run_config <config.json> <out-dir>")?);
    let out = PathBuf::from(args.next().ok_or("usage: run_config <config.json> <out-dir>")?);
    let manifest = run(&load_config(&config)?, &RunOptions { out: Some(out), workers: None })?;
    println!("{} in {:.1} s, final = {}", manifest.kind, manifest.wall_clock_seconds, manifest.is_final);
    for f in &manifest.files {
        println!("  {:<28} {:>10} bytes  {}", f.path, f.bytes, &f.sha256[..16]);
    }
    Ok(())
}
