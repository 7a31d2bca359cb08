use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::train::{LrSchedule, Optimizer, OptimizerState, TrainReport};
use super::MagLayer;
use crate::error::{invalid, shape, Error, Result};
use crate::numerics::Matrix;

/// Second-order statistics of a feature matrix `F` (n×m) and targets `Y` (n×l).
///
/// Full-batch MSE and its gradient with respect to the readout of a MAG layer
/// depend on the data only through these sums, so each step costs O(l·m²)
/// instead of O(n·l·m).
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutStats {
    /// FᵀF, m×m.
    gram: Matrix,
    /// YᵀF, l×m.
    cross: Matrix,
    /// Column sums of F.
    feature_sums: Vec<f64>,
    /// Column sums of Y.
    target_sums: Vec<f64>,
    /// Σ y².
    target_energy: f64,
    rows: usize,
}

impl ReadoutStats {
    pub fn new(features: &Matrix, targets: &Matrix) -> Result<Self> {
        if features.rows() != targets.rows() {
            return Err(shape(
                "readout",
                format!("{} target rows", features.rows()),
                format!("{}", targets.rows()),
            ));
        }
        if features.rows() == 0 {
            return Err(invalid("readout statistics need at least one row"));
        }
        Ok(Self {
            gram: features.t_matmul(features)?,
            cross: targets.t_matmul(features)?,
            feature_sums: features.column_sums(),
            target_sums: targets.column_sums(),
            target_energy: targets.sum_squares(),
            rows: features.rows(),
        })
    }

    pub fn feature_count(&self) -> usize {
        self.gram.rows()
    }

    pub fn target_dim(&self) -> usize {
        self.cross.rows()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Mean squared error of `W·f + b` and its gradients `(dW, db)`.
    pub fn loss_and_gradients(
        &self,
        weight: &Matrix,
        bias: Option<&[f64]>,
    ) -> Result<(f64, Matrix, Option<Vec<f64>>)> {
        let (l, m) = (self.target_dim(), self.feature_count());
        if weight.shape() != (l, m) {
            return Err(shape(
                "readout",
                format!("{l}x{m} weight"),
                format!("{}x{}", weight.rows(), weight.cols()),
            ));
        }
        let n = self.rows as f64;
        let scale = 1.0 / (n * l as f64);
        let wc = weight.matmul(&self.gram)?;
        let quad: f64 = wc
            .as_slice()
            .iter()
            .zip(weight.as_slice())
            .map(|(a, b)| a * b)
            .sum();
        let lin: f64 = weight
            .as_slice()
            .iter()
            .zip(self.cross.as_slice())
            .map(|(a, b)| a * b)
            .sum();
        let mut loss = quad - 2.0 * lin + self.target_energy;
        let mut dw = wc.sub(&self.cross)?;
        let db = match bias {
            None => None,
            Some(b) => {
                if b.len() != l {
                    return Err(shape(
                        "readout",
                        format!("{l} biases"),
                        format!("{}", b.len()),
                    ));
                }
                let ws: Vec<f64> = (0..l)
                    .map(|i| {
                        weight
                            .row(i)
                            .iter()
                            .zip(&self.feature_sums)
                            .map(|(w, s)| w * s)
                            .sum()
                    })
                    .collect();
                for i in 0..l {
                    loss += 2.0 * b[i] * ws[i] + n * b[i] * b[i] - 2.0 * b[i] * self.target_sums[i];
                    for (g, s) in dw.row_mut(i).iter_mut().zip(&self.feature_sums) {
                        *g += b[i] * s;
                    }
                }
                Some(
                    (0..l)
                        .map(|i| 2.0 * scale * (ws[i] + n * b[i] - self.target_sums[i]))
                        .collect(),
                )
            }
        };
        // The expanded quadratic can dip a hair below zero through cancellation.
        Ok(((loss * scale).max(0.0), dw.scale(2.0 * scale), db))
    }
}

/// Settings for readout training.
///
/// Rows are split into consecutive batches of `batch_size` (the last may be
/// shorter); every epoch takes one Adam step per batch, in order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadoutConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub schedule: LrSchedule,
}

impl ReadoutConfig {
    /// Full-batch Adam at a constant rate.
    pub fn new(epochs: usize, learning_rate: f64) -> Self {
        Self {
            epochs,
            batch_size: usize::MAX,
            learning_rate,
            optimizer: Optimizer::adam(),
            schedule: LrSchedule::Constant,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        self.optimizer.validate()?;
        self.schedule.validate()
    }
}

/// [`ReadoutStats`] for consecutive row batches of one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutBatches {
    batches: Vec<ReadoutStats>,
}

impl ReadoutBatches {
    pub fn new(features: &Matrix, targets: &Matrix, batch_size: usize) -> Result<Self> {
        if batch_size == 0 {
            return Err(invalid("batch_size must be at least 1"));
        }
        if features.rows() != targets.rows() {
            return Err(shape(
                "readout",
                format!("{} target rows", features.rows()),
                format!("{}", targets.rows()),
            ));
        }
        let n = features.rows();
        if n <= batch_size {
            return Ok(Self {
                batches: vec![ReadoutStats::new(features, targets)?],
            });
        }
        let batches = (0..n)
            .step_by(batch_size)
            .map(|start| {
                let len = batch_size.min(n - start);
                ReadoutStats::new(
                    &features.slice_rows(start, len)?,
                    &targets.slice_rows(start, len)?,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self { batches })
    }

    pub fn batches(&self) -> &[ReadoutStats] {
        &self.batches
    }

    pub fn rows(&self) -> usize {
        self.batches.iter().map(ReadoutStats::rows).sum()
    }

    pub fn feature_count(&self) -> usize {
        self.batches[0].feature_count()
    }

    pub fn target_dim(&self) -> usize {
        self.batches[0].target_dim()
    }
}

/// Trains a MAG layer's readout against fixed targets.
///
/// Equivalent to [`super::train`] on a single-layer network with the same
/// batch size and no shuffling, but each step costs O(l·m²) regardless of
/// the batch size.
pub fn train_readout(
    layer: &mut MagLayer,
    inputs: &Matrix,
    targets: &Matrix,
    cfg: &ReadoutConfig,
) -> Result<TrainReport> {
    if targets.cols() != layer.out_dim() {
        return Err(shape(
            "readout",
            format!("{} target columns", layer.out_dim()),
            format!("{}", targets.cols()),
        ));
    }
    cfg.validate()?;
    let batches = ReadoutBatches::new(&layer.feature_map(inputs)?, targets, cfg.batch_size)?;
    train_readout_with_stats(layer, &batches, cfg)
}

/// As [`train_readout`], reusing precomputed batch statistics; `cfg.batch_size` is ignored.
pub fn train_readout_with_stats(
    layer: &mut MagLayer,
    batches: &ReadoutBatches,
    cfg: &ReadoutConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if batches.feature_count() != layer.feature_count() || batches.target_dim() != layer.out_dim() {
        return Err(shape(
            "readout",
            format!("{}x{} statistics", layer.out_dim(), layer.feature_count()),
            format!("{}x{}", batches.target_dim(), batches.feature_count()),
        ));
    }
    let sizes = vec![
        layer.weight.as_slice().len(),
        layer.bias.as_ref().map_or(0, |b| b.len()),
    ];
    let mut state = OptimizerState::new(cfg.optimizer, sizes.into_iter().filter(|&s| s > 0));
    let mut report = TrainReport::default();
    let total_steps = cfg.epochs * batches.batches.len();
    let rows = batches.rows() as f64;
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for (b, stats) in batches.batches.iter().enumerate() {
            let (loss, dw, db) = stats.loss_and_gradients(&layer.weight, layer.bias.as_deref())?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    loss,
                });
            }
            let mut grads = vec![dw.into_vec()];
            let mut params: Vec<&mut [f64]> = vec![layer.weight.as_mut_slice()];
            if let (Some(bias), Some(g)) = (layer.bias.as_mut(), db) {
                params.push(bias.as_mut_slice());
                grads.push(g);
            }
            state.update(
                &mut params,
                &grads,
                cfg.schedule.rate(cfg.learning_rate, step, total_steps),
            );
            step += 1;
            total += loss * stats.rows() as f64;
        }
        report.epoch_losses.push(total / rows);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{train, Activation, NetworkSpec, Targets, TrainConfig};
    use crate::numerics::{sample_gaussian_matrix, EnsembleKind, RngStream};

    fn layer(bias: bool) -> MagLayer {
        MagLayer::new(
            4,
            12,
            3,
            EnsembleKind::IidGaussian,
            Activation::Relu,
            bias,
            RngStream::from_seed(3),
        )
        .unwrap()
    }

    #[test]
    fn gram_loss_matches_direct_mse() {
        let l = layer(true);
        let x = sample_gaussian_matrix(30, 4, RngStream::from_seed(1)).unwrap();
        let y = sample_gaussian_matrix(30, 3, RngStream::from_seed(2)).unwrap();
        let stats = ReadoutStats::new(&l.feature_map(&x).unwrap(), &y).unwrap();
        let (loss, _, _) = stats.loss_and_gradients(l.weight(), l.bias()).unwrap();
        let direct = l.forward(&x).unwrap().mse(&y).unwrap();
        assert!((loss - direct).abs() < 1e-10 * direct.max(1.0));
    }

    #[test]
    fn matches_generic_full_batch_training() {
        for bias in [false, true] {
            let x = sample_gaussian_matrix(40, 4, RngStream::from_seed(5)).unwrap();
            let y = sample_gaussian_matrix(40, 3, RngStream::from_seed(6)).unwrap();
            let mut fast = layer(bias);
            let schedule = LrSchedule::Cosine { floor: 0.2 };
            let rcfg = ReadoutConfig {
                schedule,
                batch_size: 15,
                ..ReadoutConfig::new(25, 1e-2)
            };
            let report = train_readout(&mut fast, &x, &y, &rcfg).unwrap();

            let mut net = NetworkSpec::sequential(4, vec![layer(bias).into()]).unwrap();
            let mut cfg = TrainConfig::new(25, 15, 1e-2, RngStream::from_seed(0));
            cfg.shuffle = false;
            cfg.schedule = schedule;
            let generic = train(&mut net, &x, &Targets::All(&y), &cfg).unwrap();

            let crate::layers::Layer::Mag(slow) = &net.layers()[0] else {
                panic!()
            };
            assert!(fast.weight().max_abs_diff(slow.weight()).unwrap() < 1e-9);
            for (a, b) in report.epoch_losses.iter().zip(&generic.epoch_losses) {
                assert!((a - b).abs() < 1e-9 * b.max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn mismatched_statistics_rejected() {
        let mut l = layer(false);
        let stats = ReadoutBatches::new(&Matrix::zeros(5, 7), &Matrix::zeros(5, 3), 2).unwrap();
        assert_eq!(stats.batches().len(), 3);
        let cfg = ReadoutConfig {
            optimizer: Optimizer::Sgd,
            ..ReadoutConfig::new(1, 1e-3)
        };
        assert!(train_readout_with_stats(&mut l, &stats, &cfg).is_err());
        assert!(ReadoutStats::new(&Matrix::zeros(5, 7), &Matrix::zeros(4, 3)).is_err());
        assert!(ReadoutBatches::new(&Matrix::zeros(5, 7), &Matrix::zeros(5, 3), 0).is_err());
    }
}
