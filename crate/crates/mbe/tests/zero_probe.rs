use mbe::fit::{fit_mbe, normal_cdf, FitConfig, TargetFn, TargetKind};

#[test]
#[ignore]
fn probe_gelu_near_zero() {
    let target = TargetFn::new(TargetKind::Gelu, -120.0, 10.0).unwrap();
    for seed in 1..=3u64 {
        let fitted = fit_mbe(&target, &FitConfig::new(4, 16).with_seed(seed)).unwrap();
        let mut worst: (f64, f64) = (0.0, 0.0);
        let mut sq = 0.0;
        let mut count = 0;
        for i in -300..=300 {
            let x = i as f64 / 100.0;
            let err = fitted.neuron.simulate(x).approx - x * normal_cdf(x);
            if err.abs() > worst.1.abs() {
                worst = (x, err);
            }
            sq += err * err;
            count += 1;
        }
        println!(
            "seed {seed}: mse={:.2e} near-zero rms={:.4} worst at x={:.2} err={:+.4} f(0)={:+.4}",
            fitted.mse,
            (sq / count as f64).sqrt(),
            worst.0,
            worst.1,
            fitted.neuron.simulate(0.0).approx
        );
    }
}
