use magnituder::kernels::{
    estimator_variance, kernel_mag_exact, KernelEstimator, ScalarFunction, SnnkInstantiation,
};
use magnituder::{EnsembleKind, RngStream};
use rand::Rng;

fn unit_interval(d: usize, seed: u64) -> Vec<f64> {
    let mut rng = RngStream::new(seed, 99).rng();
    (0..d).map(|_| rng.random::<f64>()).collect()
}

fn scaled(mut v: Vec<f64>, norm: f64) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x *= norm / n);
    v
}

#[test]
fn magnituder_estimates_are_unbiased() {
    let d = 8;
    let u = unit_interval(d, 1);
    let cases = [
        (
            ScalarFunction::Relu,
            scaled(unit_interval(d, 2), (2.0 * std::f64::consts::PI).sqrt()),
        ),
        (ScalarFunction::Exp(1.0), scaled(unit_interval(d, 3), 1.0)),
    ];
    for (f, v) in cases {
        let exact = kernel_mag_exact(&u, &v, &[f]).unwrap();
        for ens in [EnsembleKind::IidGaussian, EnsembleKind::BlockOrthogonal] {
            let est = KernelEstimator::magnituder(ens, d, vec![f], RngStream::new(17, 1)).unwrap();
            let r = estimator_variance(&u, &v, &est, 100_000).unwrap();
            let z = (r.mean - exact).abs() / r.mean_standard_error;
            assert!(
                z < 3.0,
                "{f:?} {ens:?}: mean {} exact {exact} z {z}",
                r.mean
            );
        }
    }
}

#[test]
fn orthogonal_features_reduce_exponential_variance() {
    let d = 16;
    let u = unit_interval(d, 4);
    let v = scaled(unit_interval(d, 5), 1.0);
    let f = vec![ScalarFunction::Exp(1.0)];
    let iid = estimator_variance(
        &u,
        &v,
        &KernelEstimator::magnituder(
            EnsembleKind::IidGaussian,
            d,
            f.clone(),
            RngStream::new(1, 0),
        )
        .unwrap(),
        100_000,
    )
    .unwrap();
    let ort = estimator_variance(
        &u,
        &v,
        &KernelEstimator::magnituder(EnsembleKind::BlockOrthogonal, d, f, RngStream::new(1, 1))
            .unwrap(),
        100_000,
    )
    .unwrap();
    let se = (iid.variance_standard_error.powi(2) + ort.variance_standard_error.powi(2)).sqrt();
    eprintln!(
        "iid {} ± {}, ort {} ± {}",
        iid.variance, iid.variance_standard_error, ort.variance, ort.variance_standard_error
    );
    assert!(iid.variance - ort.variance > 2.0 * se);
}

#[test]
fn variance_decays_like_inverse_feature_count() {
    let d = 8;
    let u = unit_interval(d, 6);
    let v = scaled(unit_interval(d, 7), 1.0);
    let ms = [8usize, 16, 32, 64, 128, 256, 512];
    let pts: Vec<(f64, f64)> = ms
        .iter()
        .map(|&m| {
            let est = KernelEstimator::magnituder(
                EnsembleKind::IidGaussian,
                m,
                vec![ScalarFunction::Relu],
                RngStream::new(2, m as u64),
            )
            .unwrap();
            let r = estimator_variance(&u, &v, &est, 4000).unwrap();
            ((m as f64).ln(), r.variance.ln())
        })
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    assert!((-1.2..=-0.8).contains(&slope), "slope {slope}");
}

#[test]
fn snnk_exponential_estimator_is_unbiased() {
    let u = scaled(unit_interval(4, 8), 0.4);
    let v = scaled(unit_interval(4, 9), 0.3);
    let exact = SnnkInstantiation::Exponential.exact(&u, &v).unwrap();
    let est = KernelEstimator::snnk(
        EnsembleKind::IidGaussian,
        4,
        SnnkInstantiation::Exponential.pairs(),
        RngStream::new(3, 0),
    )
    .unwrap();
    let r = estimator_variance(&u, &v, &est, 20_000).unwrap();
    assert!((r.mean - exact).abs() < 3.0 * r.mean_standard_error);
}
