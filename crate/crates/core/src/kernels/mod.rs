//! Monte-Carlo estimators of the magnituder and SNNK kernels, their closed
//! forms, and a variance harness for comparing feature ensembles.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{invalid, shape, Result};
use crate::layers::Activation;
use crate::numerics::{EnsembleKind, RngStream};

mod snnk_layer;
pub use snnk_layer::{train_snnk, SnnkLayer};

/// Deterministic scalar function applied to a random projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalarFunction {
    Relu,
    /// `x ↦ exp(c·x)`.
    Exp(f64),
    /// `x ↦ ln(1 + exp(β·x)) / β`.
    Softplus(f64),
    Sin,
    Cos,
    Sign,
    /// `x ↦ c`; makes an estimator deterministic.
    Constant(f64),
}

impl ScalarFunction {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            ScalarFunction::Relu => x.max(0.0),
            ScalarFunction::Exp(c) => libm::exp(c * x),
            ScalarFunction::Softplus(beta) => Activation::Softplus { beta }.apply(x),
            ScalarFunction::Sin => libm::sin(x),
            ScalarFunction::Cos => libm::cos(x),
            ScalarFunction::Sign => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            ScalarFunction::Constant(c) => c,
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            ScalarFunction::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ScalarFunction::Exp(c) => c * libm::exp(c * x),
            ScalarFunction::Softplus(beta) => Activation::Softplus { beta }.derivative(x),
            ScalarFunction::Sin => libm::cos(x),
            ScalarFunction::Cos => -libm::sin(x),
            ScalarFunction::Sign | ScalarFunction::Constant(_) => 0.0,
        }
    }

    /// `E[f(a·g)]` for standard normal `g`, when a closed form is known.
    pub fn gaussian_expectation(self, a: f64) -> Option<f64> {
        match self {
            ScalarFunction::Relu => Some(a.abs() / libm::sqrt(2.0 * PI)),
            ScalarFunction::Exp(c) => Some(libm::exp(c * c * a * a / 2.0)),
            ScalarFunction::Cos => Some(libm::exp(-a * a / 2.0)),
            ScalarFunction::Sin | ScalarFunction::Sign => Some(0.0),
            ScalarFunction::Constant(c) => Some(c),
            ScalarFunction::Softplus(_) => None,
        }
    }

    pub(crate) fn validate(self) -> Result<()> {
        let ok = match self {
            ScalarFunction::Exp(c) | ScalarFunction::Constant(c) => c.is_finite(),
            ScalarFunction::Softplus(beta) => beta > 0.0 && beta.is_finite(),
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("invalid scalar function {self:?}")))
        }
    }
}

/// Which kernel an estimator approximates.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelFunctions {
    /// One function per input coordinate: `K(u, v) = Σᵢ uᵢ·E[fᵢ(vᵀg)]`.
    Magnituder(Vec<ScalarFunction>),
    /// Feature pairs: `K(u, v) = Σₖ E[Φₖ(uᵀg)·Ψₖ(vᵀg)]`.
    Snnk(Vec<(ScalarFunction, ScalarFunction)>),
}

/// Named (Φ, Ψ) configurations for the SNNK kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnnkInstantiation {
    /// `(sin, sin) + (cos, cos)`, estimating `exp(−‖u−v‖²/2)`.
    Trigonometric,
    /// `(exp, exp)`, estimating `exp(‖u+v‖²/2)`.
    Exponential,
}

impl SnnkInstantiation {
    pub fn pairs(self) -> Vec<(ScalarFunction, ScalarFunction)> {
        match self {
            SnnkInstantiation::Trigonometric => vec![
                (ScalarFunction::Sin, ScalarFunction::Sin),
                (ScalarFunction::Cos, ScalarFunction::Cos),
            ],
            SnnkInstantiation::Exponential => {
                vec![(ScalarFunction::Exp(1.0), ScalarFunction::Exp(1.0))]
            }
        }
    }

    pub fn exact(self, u: &[f64], v: &[f64]) -> Result<f64> {
        check_pair(u, v)?;
        Ok(match self {
            SnnkInstantiation::Trigonometric => {
                libm::exp(-squared_norm(u.iter().zip(v).map(|(a, b)| a - b)) / 2.0)
            }
            SnnkInstantiation::Exponential => {
                libm::exp(squared_norm(u.iter().zip(v).map(|(a, b)| a + b)) / 2.0)
            }
        })
    }
}

/// A randomized kernel estimator: ensemble, feature count, functions and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelEstimator {
    pub ensemble: EnsembleKind,
    pub m: usize,
    pub functions: KernelFunctions,
    pub rng: RngStream,
}

impl KernelEstimator {
    pub fn magnituder(
        ensemble: EnsembleKind,
        m: usize,
        functions: Vec<ScalarFunction>,
        rng: RngStream,
    ) -> Result<Self> {
        let est = Self {
            ensemble,
            m,
            functions: KernelFunctions::Magnituder(functions),
            rng,
        };
        est.validate()?;
        Ok(est)
    }

    pub fn snnk(
        ensemble: EnsembleKind,
        m: usize,
        pairs: Vec<(ScalarFunction, ScalarFunction)>,
        rng: RngStream,
    ) -> Result<Self> {
        let est = Self {
            ensemble,
            m,
            functions: KernelFunctions::Snnk(pairs),
            rng,
        };
        est.validate()?;
        Ok(est)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(invalid("kernel estimators need m ≥ 1"));
        }
        match &self.functions {
            KernelFunctions::Magnituder(fs) => {
                if fs.is_empty() {
                    return Err(invalid("function list is empty"));
                }
                fs.iter().try_for_each(|f| f.validate())
            }
            KernelFunctions::Snnk(pairs) => {
                if pairs.is_empty() {
                    return Err(invalid("function list is empty"));
                }
                pairs
                    .iter()
                    .try_for_each(|(a, b)| a.validate().and_then(|_| b.validate()))
            }
        }
    }

    /// The same estimator seeded from another stream.
    pub fn with_rng(&self, rng: RngStream) -> Self {
        Self {
            rng,
            ..self.clone()
        }
    }

    /// Evaluates the estimator on `(u, v)`.
    pub fn estimate(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        match &self.functions {
            KernelFunctions::Magnituder(_) => kernel_mag_estimate(u, v, self),
            KernelFunctions::Snnk(_) => kernel_snnk_estimate(u, v, self),
        }
    }
}

fn squared_norm(it: impl Iterator<Item = f64>) -> f64 {
    it.map(|x| x * x).sum()
}

fn check_pair(u: &[f64], v: &[f64]) -> Result<()> {
    if u.len() != v.len() {
        return Err(shape(
            "kernel",
            format!("{} coordinates", u.len()),
            format!("{}", v.len()),
        ));
    }
    if u.is_empty() {
        return Err(invalid("kernel inputs must be nonempty"));
    }
    Ok(())
}

/// Magnituder kernel estimate.
///
/// The `m` features are grouped into `⌈m/d⌉` repetitions of `d` rows; within a
/// repetition coordinate `i` of `u` pairs with its own row `gᵢ`, and the
/// repetitions are averaged:
/// `(1/R) Σᵣ Σᵢ uᵢ·fᵢ(vᵀg_{r·d+i})`. Orthogonal ensembles draw one orthogonal
/// block per repetition.
pub fn kernel_mag_estimate(u: &[f64], v: &[f64], est: &KernelEstimator) -> Result<f64> {
    check_pair(u, v)?;
    est.validate()?;
    let KernelFunctions::Magnituder(fs) = &est.functions else {
        return Err(invalid("estimator does not hold magnituder functions"));
    };
    let d = u.len();
    if fs.len() != d && fs.len() != 1 {
        return Err(shape(
            "kernel_mag_estimate",
            format!("1 or {d} functions"),
            format!("{}", fs.len()),
        ));
    }
    let reps = est.m.div_ceil(d);
    let g = est.ensemble.sample(reps * d, d, est.rng)?;
    let mut total = 0.0;
    for r in 0..reps {
        for i in 0..d {
            let row = g.row(r * d + i);
            let proj: f64 = row.iter().zip(v).map(|(a, b)| a * b).sum();
            let f = if fs.len() == 1 { fs[0] } else { fs[i] };
            total += u[i] * f.apply(proj);
        }
    }
    Ok(total / reps as f64)
}

/// Closed-form magnituder kernel `Σᵢ uᵢ·E[fᵢ(‖v‖·g)]`.
///
/// Supported functions: ReLU, exponential, sine, cosine, sign and constants.
pub fn kernel_mag_exact(u: &[f64], v: &[f64], functions: &[ScalarFunction]) -> Result<f64> {
    check_pair(u, v)?;
    let d = u.len();
    if functions.len() != d && functions.len() != 1 {
        return Err(shape(
            "kernel_mag_exact",
            format!("1 or {d} functions"),
            format!("{}", functions.len()),
        ));
    }
    let a = libm::sqrt(squared_norm(v.iter().copied()));
    let mut total = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        let f = if functions.len() == 1 {
            functions[0]
        } else {
            functions[i]
        };
        let e = f
            .gaussian_expectation(a)
            .ok_or_else(|| invalid(format!("no closed-form Gaussian expectation for {f:?}")))?;
        total += ui * e;
    }
    Ok(total)
}

/// SNNK kernel estimate `(1/m) Σⱼ Σₖ Φₖ(uᵀgⱼ)·Ψₖ(vᵀgⱼ)`.
pub fn kernel_snnk_estimate(u: &[f64], v: &[f64], est: &KernelEstimator) -> Result<f64> {
    check_pair(u, v)?;
    est.validate()?;
    let KernelFunctions::Snnk(pairs) = &est.functions else {
        return Err(invalid("estimator does not hold SNNK function pairs"));
    };
    let g = est.ensemble.sample(est.m, u.len(), est.rng)?;
    let mut total = 0.0;
    for j in 0..est.m {
        let row = g.row(j);
        let pu: f64 = row.iter().zip(u).map(|(a, b)| a * b).sum();
        let pv: f64 = row.iter().zip(v).map(|(a, b)| a * b).sum();
        total += pairs
            .iter()
            .map(|(phi, psi)| phi.apply(pu) * psi.apply(pv))
            .sum::<f64>();
    }
    Ok(total / est.m as f64)
}

/// Spread of an estimator across independent redraws of its features.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceReport {
    pub ensemble: EnsembleKind,
    pub m: usize,
    pub trials: usize,
    /// Mean of the per-trial estimates.
    pub mean: f64,
    /// Standard error of `mean`.
    pub mean_standard_error: f64,
    /// Unbiased sample variance of the per-trial estimates.
    pub variance: f64,
    /// Jackknife standard error of `variance`.
    pub variance_standard_error: f64,
}

/// Minimum number of trials accepted by [`estimator_variance`].
pub const MIN_VARIANCE_TRIALS: usize = 100;

/// Redraws the estimator's features `trials` times (trial `t` uses substream
/// `t` of the template's stream) and summarises the resulting estimates.
pub fn estimator_variance(
    u: &[f64],
    v: &[f64],
    template: &KernelEstimator,
    trials: usize,
) -> Result<VarianceReport> {
    if trials < MIN_VARIANCE_TRIALS {
        return Err(invalid(format!(
            "need at least {MIN_VARIANCE_TRIALS} trials, got {trials}"
        )));
    }
    let samples = (0..trials)
        .map(|t| {
            template
                .with_rng(template.rng.substream(t as u64))
                .estimate(u, v)
        })
        .collect::<Result<Vec<f64>>>()?;
    let stats = SampleVariance::of(&samples)?;
    Ok(VarianceReport {
        ensemble: template.ensemble,
        m: template.m,
        trials,
        mean: stats.mean,
        mean_standard_error: libm::sqrt(stats.variance / trials as f64),
        variance: stats.variance,
        variance_standard_error: stats.jackknife_standard_error,
    })
}

/// Unbiased sample variance with a delete-one jackknife standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleVariance {
    pub mean: f64,
    pub variance: f64,
    pub jackknife_standard_error: f64,
}

impl SampleVariance {
    /// Needs at least three samples so every leave-one-out variance is defined.
    pub fn of(samples: &[f64]) -> Result<Self> {
        let n = samples.len();
        if n < 3 {
            return Err(invalid(format!(
                "jackknife variance needs at least 3 samples, got {n}"
            )));
        }
        let nf = n as f64;
        // Deviations are taken from the first sample, so identical samples give exactly zero.
        let shift = samples[0];
        let offset = samples.iter().map(|x| x - shift).sum::<f64>() / nf;
        let mean = shift + offset;
        let q: f64 = samples
            .iter()
            .map(|x| (x - shift - offset) * (x - shift - offset))
            .sum();
        let variance = q / (nf - 1.0);
        // Removing sample i shifts the mean, reducing Q by eᵢ²·n/(n−1).
        let loo = |x: f64| {
            let e = x - shift - offset;
            (q - e * e * nf / (nf - 1.0)) / (nf - 2.0)
        };
        let loo_mean = samples.iter().map(|&x| loo(x)).sum::<f64>() / nf;
        let spread: f64 = samples
            .iter()
            .map(|&x| (loo(x) - loo_mean) * (loo(x) - loo_mean))
            .sum();
        Ok(Self {
            mean,
            variance,
            jackknife_standard_error: libm::sqrt((nf - 1.0) / nf * spread),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn relu_est(ensemble: EnsembleKind, m: usize, seed: u64) -> KernelEstimator {
        KernelEstimator::magnituder(
            ensemble,
            m,
            vec![ScalarFunction::Relu],
            RngStream::from_seed(seed),
        )
        .unwrap()
    }

    #[test]
    fn exact_closed_forms() {
        let e1 = [1.0, 0.0, 0.0];
        let v = [libm::sqrt(2.0 * PI), 0.0, 0.0];
        assert!((kernel_mag_exact(&e1, &v, &[ScalarFunction::Relu]).unwrap() - 1.0).abs() < 1e-15);
        let v1 = [0.6, 0.8, 0.0];
        let k = kernel_mag_exact(&e1, &v1, &[ScalarFunction::Exp(1.0)]).unwrap();
        assert!((k - 1.648_721_270_700_128).abs() < 1e-12);
        let u = [0.3, -1.2, 2.0];
        let k = kernel_mag_exact(&u, &[0.0; 3], &[ScalarFunction::Exp(2.5)]).unwrap();
        assert!((k - 1.1).abs() < 1e-15);
        assert!(kernel_mag_exact(&u, &v1, &[ScalarFunction::Softplus(1.0)]).is_err());
    }

    #[test]
    fn relu_estimate_is_close_at_many_features() {
        let u = [1.0; 8];
        let mut v = [0.0; 8];
        v[3] = libm::sqrt(2.0 * PI);
        for ens in [EnsembleKind::IidGaussian, EnsembleKind::BlockOrthogonal] {
            let k = kernel_mag_estimate(&u, &v, &relu_est(ens, 100_000, 7)).unwrap();
            assert!((k - 8.0).abs() < 0.16, "{ens:?}: {k}");
        }
    }

    #[test]
    fn snnk_matches_gaussian_identities() {
        let u = [0.2, -0.1, 0.3, 0.05];
        let v = [0.1, 0.25, -0.2, 0.15];
        for inst in [
            SnnkInstantiation::Trigonometric,
            SnnkInstantiation::Exponential,
        ] {
            let est = KernelEstimator::snnk(
                EnsembleKind::BlockOrthogonal,
                100_000,
                inst.pairs(),
                RngStream::from_seed(3),
            )
            .unwrap();
            let k = kernel_snnk_estimate(&u, &v, &est).unwrap();
            let exact = inst.exact(&u, &v).unwrap();
            assert!((k - exact).abs() < 0.02 * exact, "{inst:?}: {k} vs {exact}");
        }
    }

    #[test]
    fn snnk_sine_at_origin_is_zero() {
        let est = KernelEstimator::snnk(
            EnsembleKind::IidGaussian,
            50,
            vec![(ScalarFunction::Sin, ScalarFunction::Sin)],
            RngStream::from_seed(0),
        )
        .unwrap();
        assert_eq!(
            kernel_snnk_estimate(&[0.0; 3], &[0.0; 3], &est).unwrap(),
            0.0
        );
    }

    #[test]
    fn snnk_variance_falls_with_more_features() {
        let u = [0.3, 0.1, -0.2];
        let v = [0.2, -0.3, 0.1];
        let pairs = SnnkInstantiation::Exponential.pairs();
        let small = KernelEstimator::snnk(
            EnsembleKind::IidGaussian,
            8,
            pairs.clone(),
            RngStream::from_seed(1),
        )
        .unwrap();
        let large = KernelEstimator::snnk(
            EnsembleKind::IidGaussian,
            64,
            pairs,
            RngStream::from_seed(1),
        )
        .unwrap();
        let a = estimator_variance(&u, &v, &small, 200).unwrap();
        let b = estimator_variance(&u, &v, &large, 200).unwrap();
        assert!(b.variance <= a.variance);
    }

    #[test]
    fn constant_function_has_zero_variance() {
        let est = KernelEstimator::magnituder(
            EnsembleKind::IidGaussian,
            16,
            vec![ScalarFunction::Constant(2.0)],
            RngStream::from_seed(5),
        )
        .unwrap();
        let r = estimator_variance(&[1.0, 2.0], &[0.4, 0.1], &est, 100).unwrap();
        assert_eq!(r.variance, 0.0);
        assert_eq!(r.variance_standard_error, 0.0);
        let same = SampleVariance::of(&[0.1; 1000]).unwrap();
        assert_eq!((same.variance, same.jackknife_standard_error), (0.0, 0.0));
        assert!((r.mean - 6.0).abs() < 1e-12);
    }

    #[test]
    fn jackknife_matches_brute_force() {
        let xs: Vec<f64> = (0..23)
            .map(|i| libm::sin(i as f64 * 1.7) + 0.1 * i as f64)
            .collect();
        let fast = SampleVariance::of(&xs).unwrap();
        let var = |s: &[f64]| {
            let m = s.iter().sum::<f64>() / s.len() as f64;
            s.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (s.len() - 1) as f64
        };
        let loo: Vec<f64> = (0..xs.len())
            .map(|i| {
                let mut s = xs.clone();
                s.remove(i);
                var(&s)
            })
            .collect();
        let n = xs.len() as f64;
        let lm = loo.iter().sum::<f64>() / n;
        let se = libm::sqrt((n - 1.0) / n * loo.iter().map(|x| (x - lm) * (x - lm)).sum::<f64>());
        assert!((fast.variance - var(&xs)).abs() < 1e-13);
        assert!((fast.jackknife_standard_error - se).abs() < 1e-12);
    }

    #[test]
    fn argument_errors() {
        let est = relu_est(EnsembleKind::IidGaussian, 4, 0);
        assert!(kernel_mag_estimate(&[1.0, 2.0], &[1.0], &est).is_err());
        assert!(estimator_variance(&[1.0], &[1.0], &est, 99).is_err());
        assert!(KernelEstimator::magnituder(
            EnsembleKind::IidGaussian,
            0,
            vec![ScalarFunction::Relu],
            RngStream::from_seed(0)
        )
        .is_err());
        assert!(KernelEstimator::magnituder(
            EnsembleKind::IidGaussian,
            3,
            vec![],
            RngStream::from_seed(0)
        )
        .is_err());
        assert!(kernel_snnk_estimate(&[1.0], &[1.0], &est).is_err());
        assert!(SampleVariance::of(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn estimates_are_deterministic() {
        let est = relu_est(EnsembleKind::BlockOrthogonal, 40, 11);
        let u = [0.5, 1.0, 0.2, 0.1];
        let v = [1.0, -1.0, 0.3, 0.0];
        assert_eq!(
            kernel_mag_estimate(&u, &v, &est).unwrap(),
            kernel_mag_estimate(&u, &v, &est).unwrap()
        );
    }

    proptest! {
        #[test]
        fn zero_u_gives_zero(seed in 0u64..500, v in prop::collection::vec(-3.0f64..3.0, 5)) {
            let est = KernelEstimator::magnituder(EnsembleKind::BlockOrthogonal, 12, vec![ScalarFunction::Exp(0.5)], RngStream::from_seed(seed)).unwrap();
            prop_assert_eq!(kernel_mag_estimate(&[0.0; 5], &v, &est).unwrap(), 0.0);
        }

        #[test]
        fn zero_v_relu_gives_zero(seed in 0u64..500, u in prop::collection::vec(-3.0f64..3.0, 4)) {
            let est = relu_est(EnsembleKind::IidGaussian, 9, seed);
            prop_assert_eq!(kernel_mag_estimate(&u, &[0.0; 4], &est).unwrap(), 0.0);
        }

        #[test]
        fn linear_in_u(seed in 0u64..500, c in -4.0f64..4.0) {
            let est = relu_est(EnsembleKind::BlockOrthogonal, 6, seed);
            let u = [0.3, -0.7, 1.1];
            let v = [0.9, 0.2, -0.4];
            let cu: Vec<f64> = u.iter().map(|x| c * x).collect();
            let a = kernel_mag_estimate(&cu, &v, &est).unwrap();
            let b = c * kernel_mag_estimate(&u, &v, &est).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
}
