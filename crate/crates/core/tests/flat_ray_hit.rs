use cmz::dynamics::billiard::FlatCurve;

/// First root of the signed height of the ray above `y = -(1 + |x|^6)` by
/// bracketing from the left with a fine scan and bisection.
fn oracle(p: [f64; 2], v: [f64; 2], t_max: f64) -> f64 {
    let g = |t: f64| {
        let x = p[0] + t * v[0];
        (p[1] + t * v[1]) + (1.0 + x.abs().powi(6))
    };
    let steps = 2_000_000;
    let dt = t_max / steps as f64;
    let mut a = 1e-9;
    for i in 1..=steps {
        let b = i as f64 * dt;
        if g(b) <= 0.0 {
            let (mut lo, mut hi) = (a, b);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if g(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return 0.5 * (lo + hi);
        }
        a = b;
    }
    panic!("no root below {t_max}");
}

#[test]
fn grazing_ray_reaches_the_bottom_curve() {
    // A near-vertical ray whose height function has a shallow minimum close to
    // the curve; Newton from the wrong side used to stall here.
    let p = [0.203840, 1.000072];
    let v = [0.006143044496179641, -0.9999811313241455];
    let curve = FlatCurve::new(6.0, 0.5, -1.0).unwrap();
    let (t, x) = curve.ray_hit(p, v, 1e-9, 10.0).expect("the ray hits the curve");
    let t_ref = oracle(p, v, 3.0);
    assert!((t - t_ref).abs() < 1e-9, "t = {t}, oracle {t_ref}");
    assert!((t - 2.00021166).abs() < 1e-7, "t = {t}");
    assert!((x - (p[0] + t * v[0])).abs() < 1e-12 && (x - 0.216127).abs() < 1e-6, "x = {x}");
}
