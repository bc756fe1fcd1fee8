use mbe::fit::{fit_fs, fit_mbe, fit_mbe_no_decay, FitConfig, FsInit, TargetFn, TargetKind};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    v[v.len() / 2]
}

#[test]
#[ignore]
fn probe_trends() {
    // N-monotonicity over 3 seeds
    for (kind, lo, hi) in [
        (TargetKind::Gelu, -120.0, 10.0),
        (TargetKind::InvSqrt, 0.5, 2.0),
        (TargetKind::Inv, 0.5, 1.0),
        (TargetKind::Exp2Frac, 0.0, 1.0),
    ] {
        let target = TargetFn::new(kind, lo, hi).unwrap();
        let meds: Vec<f64> = [1usize, 4, 8]
            .iter()
            .map(|&n| {
                median(
                    (1..=3u64)
                        .map(|s| fit_mbe(&target, &FitConfig::new(n, 16).with_seed(s)).unwrap().mse)
                        .collect(),
                )
            })
            .collect();
        println!(
            "{:<9} N=1 {:.3e}  N=4 {:.3e}  N=8 {:.3e}  monotone={}",
            kind.as_str(), meds[0], meds[1], meds[2],
            meds[0] > meds[1] && meds[1] > meds[2]
        );
    }

    // no-decay ratio for GELU N=8
    let gelu = TargetFn::new(TargetKind::Gelu, -120.0, 10.0).unwrap();
    let dec = median((1..=3u64).map(|s| fit_mbe(&gelu, &FitConfig::new(8, 16).with_seed(s)).unwrap().mse).collect());
    let nodec = median((1..=3u64).map(|s| fit_mbe_no_decay(&gelu, &FitConfig::new(8, 16).with_seed(s)).unwrap().mse).collect());
    println!("gelu decay {:.3e} vs no-decay {:.3e} ratio {:.1}", dec, nodec, nodec / dec);

    // EDI: FS ReLU binary vs random
    let relu = TargetFn::new(TargetKind::Relu, -1.0, 1.0).unwrap();
    let binary = fit_fs(&relu, FsInit::Binary, &FitConfig::new(1, 16).with_seed(1)).unwrap().mse;
    let random = median((1..=5u64).map(|s| fit_fs(&relu, FsInit::Random, &FitConfig::new(1, 16).with_seed(s)).unwrap().mse).collect());
    println!("relu fs binary {:.3e} random-median {:.3e} ratio {:.1}", binary, random, random / binary);

    // SiLU intervals: MBE vs FS
    for (lo, hi) in [(-8.0, -2.0), (-2.0, 2.0), (2.0, 12.0)] {
        let t = TargetFn::new(TargetKind::Silu, lo, hi).unwrap();
        let mbe = median((1..=3u64).map(|s| fit_mbe(&t, &FitConfig::new(8, 16).with_seed(s)).unwrap().mse).collect());
        let fs = fit_fs(&t, FsInit::Binary, &FitConfig::new(1, 16).with_seed(1)).unwrap().mse;
        println!("silu [{lo},{hi}] mbe {:.3e} fs {:.3e} mbe_wins={}", mbe, fs, mbe < fs);
    }
}
