//! Z function of standard families and the growth check on an expanding map.
use cmz::curves::{growth_lemma_check, z_function, CurveMesh, PushOptions, StandardFamily, UniformExpansion};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mesh = CurveMesh::uniform([0.0, 0.0], [0.5, 0.0], 257)?;
    println!("single curve of length 0.5: Z = {:.4}", z_function(&StandardFamily::single(mesh, "c"), None).z);
    let short = CurveMesh::uniform([0.2, 0.0], [0.2 + 1e-6, 0.0], 65)?;
    let rep = growth_lemma_check(
        &StandardFamily::single(short, "short"),
        &UniformExpansion { factor: 3 },
        12,
        &PushOptions::default(),
    )?;
    for (m, z) in rep.z.iter().enumerate() {
        println!("m = {m:>2}: Z = {z:.4e}");
    }
    println!("fitted theta {:.4}, C {:.3}, passed {}", rep.theta, rep.c, rep.passed);
    Ok(())
}
