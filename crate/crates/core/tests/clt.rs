use cmz::estat::clt_diagnostic;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal};

#[test]
fn gaussian_blocks_pass_normality_at_the_nominal_rate() {
    let normal = Normal::new(0.0, 3.0).unwrap();
    let mut rejections = 0;
    let trials = 200;
    for seed in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sums: Vec<f64> = (0..2000).map(|_| normal.sample(&mut rng)).collect();
        let rep = clt_diagnostic(&sums, 100).unwrap();
        rejections += usize::from(rep.p_value < 0.05);
    }
    // Binomial(200, 0.05) has mean 10 and stderr 3.1.
    assert!((1..=25).contains(&rejections), "{rejections} rejections at level 0.05");
}

#[test]
fn bernoulli_block_variance_matches_binomial() {
    let p = 0.3;
    let coin = Bernoulli::new(p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let block_len = 10_000u64;
    let sums: Vec<f64> =
        (0..4000).map(|_| (0..block_len).map(|_| f64::from(u8::from(coin.sample(&mut rng))) - p).sum()).collect();
    let rep = clt_diagnostic(&sums, block_len).unwrap();
    let (n, v) = rep.variance_ratio[0];
    assert_eq!(n, block_len);
    assert!((v / (p * (1.0 - p)) - 1.0).abs() < 0.05, "Var/n = {v}");
    assert!(rep.p_value > 1e-3);
}

#[test]
fn skewed_blocks_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let sums: Vec<f64> = (0..5000).map(|_| -rng.random::<f64>().ln()).collect();
    assert!(clt_diagnostic(&sums, 1).unwrap().p_value < 1e-6);
}

#[test]
fn iid_symbols_give_their_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 1_000_000;
    let xs: Vec<f64> = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let lags: Vec<u64> = (0..=20).collect();
    let curve = cmz::estat::correlation(&xs, &xs, &lags, None).unwrap();
    let gk = cmz::estat::green_kubo_variance(&curve, mean).unwrap();
    // Each of the 20 doubled lag terms has standard error n^-1/2.
    let stderr = (4.0 * 20.0 / n as f64).sqrt();
    assert!((gk.c2 - 1.0).abs() < 4.0 * stderr, "c2 = {}", gk.c2);
}
