//! Diagnostic probe for fit quality; run with `-- --ignored --nocapture`.

use mbe::fit::{evaluate_mse, fit_mbe, sample_target, FitConfig, TargetFn, TargetKind};

#[test]
#[ignore]
fn probe_paper_targets() {
    let cases = [
        (TargetKind::Gelu, -120.0, 10.0, 4),
        (TargetKind::InvSqrt, 0.5, 2.0, 8),
        (TargetKind::Inv, 0.5, 1.0, 8),
        (TargetKind::Exp2Frac, 0.0, 1.0, 8),
    ];
    for (kind, lo, hi, n) in cases {
        let target = TargetFn::new(kind, lo, hi).unwrap();
        let start = std::time::Instant::now();
        let cfg = FitConfig::new(n, 16).with_seed(1);
        let near_init = {
            let c = FitConfig { epochs: 1, ..cfg };
            fit_mbe(&target, &c).unwrap()
        };
        println!("  near-init mse = {:.3e}", near_init.mse);
        let fitted = fit_mbe(&target, &cfg).unwrap();
        let fresh = sample_target(&target, 20_000, 999).unwrap();
        let holdout = evaluate_mse(&fitted.neuron, &fresh).unwrap();
        let max_err = fresh
            .iter()
            .map(|&(x, y)| (fitted.neuron.simulate(x).approx - y).abs())
            .fold(0.0f64, f64::max);
        println!(
            "{:<9} N={} train_mse={:.3e} holdout_mse={:.3e} max_err={:.3e} elapsed={:.1?}",
            kind.as_str(),
            n,
            fitted.mse,
            holdout,
            max_err,
            start.elapsed()
        );
    }
}
