use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::ScalarFunction;
use crate::error::{invalid, shape, Error, Result};
use crate::layers::{OptimizerState, ReadoutBatches, ReadoutConfig, TrainReport};
use crate::numerics::{EnsembleKind, Matrix, RngStream};

/// Layer built from the SNNK kernel estimator: random features act on both
/// the input and the trainable weights,
/// `yᵢ = (1/m) Σⱼ Σₖ Φₖ(gⱼᵀx)·Ψₖ(gⱼᵀwᵢ) + bᵢ`.
///
/// Trainable parameters are `W` (l×d) and `b`; `G` (m×d) is frozen. For the
/// trigonometric pairs each output is a random-feature estimate of a Gaussian
/// bump around `wᵢ` whose width is set by the scale of `G`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnnkLayer {
    weight: Matrix,
    bias: Vec<f64>,
    features: Matrix,
    pairs: Vec<(ScalarFunction, ScalarFunction)>,
}

impl SnnkLayer {
    /// `G` is drawn from `ensemble` on `rng.substream(0)` and multiplied by
    /// `scale`; `W` is uniform in `±1/√d` from `rng.substream(1)`; `b = 0`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        d: usize,
        m: usize,
        l: usize,
        ensemble: EnsembleKind,
        pairs: Vec<(ScalarFunction, ScalarFunction)>,
        scale: f64,
        rng: RngStream,
    ) -> Result<Self> {
        if d == 0 || m == 0 || l == 0 {
            return Err(invalid(format!(
                "SNNK dims must be positive, got d={d}, m={m}, l={l}"
            )));
        }
        if pairs.is_empty() {
            return Err(invalid("SNNK needs at least one function pair"));
        }
        for (a, b) in &pairs {
            a.validate()?;
            b.validate()?;
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(invalid(format!(
                "feature scale must be positive, got {scale}"
            )));
        }
        let features = ensemble.sample(m, d, rng.substream(0))?.scale(scale);
        let bound = 1.0 / libm::sqrt(d as f64);
        let mut r = rng.substream(1).rng();
        let weight = Matrix::from_fn(l, d, |_, _| rand::Rng::random_range(&mut r, -bound..bound));
        Ok(Self {
            weight,
            bias: vec![0.0; l],
            features,
            pairs,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn feature_count(&self) -> usize {
        self.features.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn trainable_params(&self) -> usize {
        self.weight.rows() * (self.weight.cols() + 1)
    }

    /// Input tower `[Φ₁(XGᵀ) | Φ₂(XGᵀ) | …]`, n × (pairs·m).
    pub fn feature_map(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(shape(
                "SnnkLayer",
                format!("{} input columns", self.in_dim()),
                format!("{}", x.cols()),
            ));
        }
        let proj = x.matmul_t(&self.features)?;
        Ok(self.tower(&proj, |(phi, _)| *phi, 1.0))
    }

    /// Weight tower `[Ψ₁(WGᵀ) | Ψ₂(WGᵀ) | …] / m`, l × (pairs·m).
    fn weight_tower(&self, proj: &Matrix) -> Matrix {
        self.tower(proj, |(_, psi)| *psi, 1.0 / self.feature_count() as f64)
    }

    fn tower(
        &self,
        proj: &Matrix,
        pick: impl Fn(&(ScalarFunction, ScalarFunction)) -> ScalarFunction,
        factor: f64,
    ) -> Matrix {
        let m = self.feature_count();
        let k = self.pairs.len();
        Matrix::from_fn(proj.rows(), k * m, |i, j| {
            factor * pick(&self.pairs[j / m]).apply(proj.get(i, j % m))
        })
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let tower = self.weight_tower(&self.weight.matmul_t(&self.features)?);
        let mut out = self.feature_map(x)?.matmul_t(&tower)?;
        out.add_row_broadcast(&self.bias)?;
        Ok(out)
    }
}

/// Trains `W` and `b` of an SNNK layer by mini-batch MSE.
///
/// `batches` must hold statistics of [`SnnkLayer::feature_map`] against the
/// targets; the loss is quadratic in the weight tower, so each step costs
/// O(l·(pairs·m)² + l·m·d) regardless of the batch size.
pub fn train_snnk(
    layer: &mut SnnkLayer,
    batches: &ReadoutBatches,
    cfg: &ReadoutConfig,
) -> Result<TrainReport> {
    let (m, k) = (layer.feature_count(), layer.pairs.len());
    if batches.feature_count() != k * m || batches.target_dim() != layer.out_dim() {
        return Err(shape(
            "train_snnk",
            format!("{}x{} statistics", layer.out_dim(), k * m),
            format!("{}x{}", batches.target_dim(), batches.feature_count()),
        ));
    }
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) || cfg.batch_size == 0 {
        return Err(invalid(
            "SNNK training needs a positive learning rate and batch size",
        ));
    }
    let mut state = OptimizerState::new(
        cfg.optimizer,
        [layer.weight.as_slice().len(), layer.bias.len()].into_iter(),
    );
    let total_steps = cfg.epochs * batches.batches().len();
    let rows = batches.rows() as f64;
    let mut report = TrainReport::default();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for (b, stats) in batches.batches().iter().enumerate() {
            let proj = layer.weight.matmul_t(&layer.features)?;
            let tower = layer.weight_tower(&proj);
            let (loss, d_tower, d_bias) = stats.loss_and_gradients(&tower, Some(&layer.bias))?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    loss,
                });
            }
            let inv_m = 1.0 / m as f64;
            let d_proj = Matrix::from_fn(layer.out_dim(), m, |i, j| {
                (0..k)
                    .map(|p| {
                        d_tower.get(i, p * m + j)
                            * layer.pairs[p].1.derivative(proj.get(i, j))
                            * inv_m
                    })
                    .sum()
            });
            let d_weight = d_proj.matmul(&layer.features)?;
            let grads = vec![d_weight.into_vec(), d_bias.expect("bias always present")];
            let lr = cfg.schedule.rate(cfg.learning_rate, step, total_steps);
            state.update(
                &mut [layer.weight.as_mut_slice(), layer.bias.as_mut_slice()],
                &grads,
                lr,
            );
            step += 1;
            total += loss * stats.rows() as f64;
        }
        report.epoch_losses.push(total / rows);
    }
    Ok(report)
}

impl SnnkLayer {
    /// Convenience: builds batch statistics and trains.
    pub fn fit(&mut self, x: &Matrix, y: &Matrix, cfg: &ReadoutConfig) -> Result<TrainReport> {
        let batches = ReadoutBatches::new(&self.feature_map(x)?, y, cfg.batch_size)?;
        train_snnk(self, &batches, cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::SnnkInstantiation;
    use crate::layers::Optimizer;
    use crate::numerics::sample_gaussian_matrix;

    fn layer() -> SnnkLayer {
        SnnkLayer::new(
            3,
            8,
            2,
            EnsembleKind::IidGaussian,
            SnnkInstantiation::Trigonometric.pairs(),
            0.7,
            RngStream::from_seed(4),
        )
        .unwrap()
    }

    #[test]
    fn trigonometric_layer_matches_cosine_sum() {
        let l = layer();
        let x = sample_gaussian_matrix(5, 3, RngStream::from_seed(1)).unwrap();
        let out = l.forward(&x).unwrap();
        for i in 0..5 {
            for o in 0..2 {
                let direct: f64 = (0..8)
                    .map(|j| {
                        let g = l.features.row(j);
                        let diff: f64 = g
                            .iter()
                            .zip(x.row(i))
                            .zip(l.weight.row(o))
                            .map(|((gv, xv), wv)| gv * (xv - wv))
                            .sum();
                        libm::cos(diff)
                    })
                    .sum::<f64>()
                    / 8.0;
                assert!((out.get(i, o) - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let l0 = layer();
        let x = sample_gaussian_matrix(20, 3, RngStream::from_seed(2)).unwrap();
        let y = sample_gaussian_matrix(20, 2, RngStream::from_seed(3)).unwrap();
        let cfg = ReadoutConfig {
            optimizer: Optimizer::Sgd,
            ..ReadoutConfig::new(1, 1.0)
        };
        let mut stepped = l0.clone();
        stepped.fit(&x, &y, &cfg).unwrap();
        // One SGD step with rate 1 moves W by exactly −∇W.
        let grad = l0.weight.sub(&stepped.weight).unwrap();
        let h = 1e-6;
        for idx in [0usize, 2, 5] {
            let mut plus = l0.clone();
            plus.weight.as_mut_slice()[idx] += h;
            let mut minus = l0.clone();
            minus.weight.as_mut_slice()[idx] -= h;
            let lp = plus.forward(&x).unwrap().mse(&y).unwrap();
            let lm = minus.forward(&x).unwrap().mse(&y).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (fd - grad.as_slice()[idx]).abs() < 1e-6 * fd.abs().max(1e-3),
                "{fd} vs {}",
                grad.as_slice()[idx]
            );
        }
    }

    #[test]
    fn training_reduces_loss() {
        let mut l = layer();
        let x = sample_gaussian_matrix(64, 3, RngStream::from_seed(5)).unwrap();
        let y = x.slice_cols(0, 2).unwrap().map(|v| libm::exp(-v * v));
        let before = l.forward(&x).unwrap().mse(&y).unwrap();
        let report = l.fit(&x, &y, &ReadoutConfig::new(200, 1e-2)).unwrap();
        let after = l.forward(&x).unwrap().mse(&y).unwrap();
        assert!(after < before);
        assert_eq!(report.epoch_losses.len(), 200);
    }
}
