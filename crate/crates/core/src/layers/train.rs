use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::{Activation, Layer, NetworkSpec};
use crate::error::{invalid, shape, Error, Result};
use crate::numerics::{Matrix, RngStream};

/// Gradient-based update rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl Optimizer {
    /// Adam with β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    pub const fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Optimizer {
    pub(crate) fn validate(self) -> Result<()> {
        if let Optimizer::Adam { beta1, beta2, eps } = self {
            if !(0.0..1.0).contains(&beta1)
                || !(0.0..1.0).contains(&beta2)
                || !(eps.is_finite() && eps > 0.0)
            {
                return Err(invalid("Adam needs β₁, β₂ in [0, 1) and ε > 0"));
            }
        }
        Ok(())
    }
}

impl Default for Optimizer {
    fn default() -> Self {
        Self::adam()
    }
}

/// Learning-rate schedule over the whole run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine decay from the base rate to `floor × base` at the last step.
    Cosine { floor: f64 },
}

impl LrSchedule {
    /// Rate for zero-based `step` of `total` steps.
    pub fn rate(self, base: f64, step: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine { floor } => {
                if total <= 1 {
                    return base;
                }
                let progress = step as f64 / (total - 1) as f64;
                let cos = 0.5 * (1.0 + libm::cos(core::f64::consts::PI * progress));
                base * (floor + (1.0 - floor) * cos)
            }
        }
    }

    pub(crate) fn validate(self) -> Result<()> {
        match self {
            LrSchedule::Cosine { floor } if !(0.0..=1.0).contains(&floor) => Err(invalid(format!(
                "cosine floor must lie in [0, 1], got {floor}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Mini-batch MSE training settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    /// Drives the per-epoch row shuffle.
    pub rng: RngStream,
    pub shuffle: bool,
    pub schedule: LrSchedule,
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, learning_rate: f64, rng: RngStream) -> Self {
        Self {
            epochs,
            batch_size,
            learning_rate,
            optimizer: Optimizer::adam(),
            rng,
            shuffle: true,
            schedule: LrSchedule::Constant,
        }
    }

    pub fn validate(&self) -> Result<()> {
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

/// Per-epoch mean training loss.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

/// Regression targets for the network heads.
#[derive(Debug, Clone)]
pub enum Targets<'a> {
    /// All heads, concatenated in declaration order.
    All(&'a Matrix),
    /// A subset of heads by name; other heads receive no loss.
    Named(Vec<(&'a str, &'a Matrix)>),
}

pub(crate) struct ResolvedTargets {
    /// `(head index, target)` pairs.
    pub parts: Vec<(usize, Matrix)>,
}

impl ResolvedTargets {
    fn resolve(net: &NetworkSpec, targets: &Targets<'_>, rows: usize) -> Result<Self> {
        let heads = net.heads();
        let parts: Vec<(usize, Matrix)> = match targets {
            Targets::All(t) => {
                let total: usize = heads.iter().map(|h| h.len).sum();
                if t.cols() != total {
                    return Err(shape(
                        "train",
                        format!("{total} target columns"),
                        format!("{}", t.cols()),
                    ));
                }
                let mut off = 0;
                heads
                    .iter()
                    .enumerate()
                    .map(|(i, h)| {
                        let part = t.slice_cols(off, h.len)?;
                        off += h.len;
                        Ok((i, part))
                    })
                    .collect::<Result<_>>()?
            }
            Targets::Named(list) => list
                .iter()
                .map(|(name, t)| {
                    let i = heads
                        .iter()
                        .position(|h| h.name == *name)
                        .ok_or_else(|| invalid(format!("unknown head '{name}'")))?;
                    if t.cols() != heads[i].len {
                        return Err(shape(
                            "train",
                            format!("{} columns for head '{name}'", heads[i].len),
                            format!("{}", t.cols()),
                        ));
                    }
                    Ok((i, (*t).clone()))
                })
                .collect::<Result<_>>()?,
        };
        if parts.is_empty() {
            return Err(invalid("no targets given"));
        }
        for (_, t) in &parts {
            if t.rows() != rows {
                return Err(shape(
                    "train",
                    format!("{rows} target rows"),
                    format!("{}", t.rows()),
                ));
            }
        }
        Ok(Self { parts })
    }

    fn select(&self, rows: &[usize]) -> Result<Self> {
        Ok(Self {
            parts: self
                .parts
                .iter()
                .map(|(i, t)| Ok((*i, t.select_rows(rows)?)))
                .collect::<Result<_>>()?,
        })
    }
}

enum Cache {
    Dense { input: Matrix, pre: Matrix },
    Mag { proj: Matrix, feats: Matrix },
}

impl NetworkSpec {
    /// Trainable tensors in a fixed order: per layer, weight then bias.
    pub fn trainable_tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for layer in self.layers() {
            match layer {
                Layer::Dense(l) => {
                    out.push(l.weight.as_slice());
                    out.push(l.bias.as_slice());
                }
                Layer::Mag(l) => {
                    out.push(l.weight.as_slice());
                    if let Some(b) = &l.bias {
                        out.push(b.as_slice());
                    }
                }
                Layer::Fused(_) => {}
            }
        }
        out
    }

    pub fn trainable_tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for layer in self.layers_mut() {
            match layer {
                Layer::Dense(l) => {
                    out.push(l.weight.as_mut_slice());
                    out.push(l.bias.as_mut_slice());
                }
                Layer::Mag(l) => {
                    out.push(l.weight.as_mut_slice());
                    if let Some(b) = &mut l.bias {
                        out.push(b.as_mut_slice());
                    }
                }
                Layer::Fused(_) => {}
            }
        }
        out
    }
}

/// MSE loss over the targeted heads and its gradient for every trainable tensor.
pub fn loss_and_gradients(
    net: &NetworkSpec,
    inputs: &Matrix,
    targets: &Targets<'_>,
) -> Result<(f64, Vec<Vec<f64>>)> {
    ensure_trainable(net)?;
    let resolved = ResolvedTargets::resolve(net, targets, inputs.rows())?;
    backprop(net, inputs, &resolved)
}

fn ensure_trainable(net: &NetworkSpec) -> Result<()> {
    if net.is_fused() {
        return Err(invalid(
            "fused networks are inference-only and cannot be trained",
        ));
    }
    Ok(())
}

fn backprop(
    net: &NetworkSpec,
    x: &Matrix,
    targets: &ResolvedTargets,
) -> Result<(f64, Vec<Vec<f64>>)> {
    if x.cols() != net.input_dim() {
        return Err(shape(
            "train",
            format!("{} input columns", net.input_dim()),
            format!("{}", x.cols()),
        ));
    }
    let n = x.rows();
    let layers = net.layers();
    let mut caches = Vec::with_capacity(layers.len());
    let mut h = x.clone();
    for (k, layer) in layers.iter().enumerate() {
        let input = net.layer_input(k, h, x)?;
        match layer {
            Layer::Dense(l) => {
                let pre = l.pre_activation(&input)?;
                h = l.activation.apply_matrix(&pre);
                caches.push(Cache::Dense { input, pre });
            }
            Layer::Mag(l) => {
                let proj = l.projections(&input)?;
                let feats = l.activation.apply_matrix(&proj);
                h = l.readout(&feats)?;
                caches.push(Cache::Mag { proj, feats });
            }
            Layer::Fused(_) => {
                return Err(invalid(
                    "fused networks are inference-only and cannot be trained",
                ))
            }
        }
    }
    let raw = h;

    let count: usize = targets
        .parts
        .iter()
        .map(|(i, _)| net.heads()[*i].len)
        .sum::<usize>()
        * n;
    let scale = 2.0 / count.max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(n, raw.cols());
    for (i, t) in &targets.parts {
        let head = &net.heads()[*i];
        let z = raw.slice_cols(head.start, head.len)?;
        let y = head.activation.apply(&z);
        let diff = y.sub(t)?;
        loss += diff.sum_squares();
        let gz = head.activation.backward(&z, &y, &diff.scale(scale));
        for r in 0..n {
            for (c, v) in gz.row(r).iter().enumerate() {
                let cell = &mut grad.row_mut(r)[head.start + c];
                *cell += v;
            }
        }
    }
    loss /= count.max(1) as f64;

    let mut per_layer: Vec<Vec<Vec<f64>>> = Vec::with_capacity(layers.len());
    for k in (0..layers.len()).rev() {
        let need_input_grad = k > 0;
        let (tensors, dinput) = match (&layers[k], &caches[k]) {
            (Layer::Dense(l), Cache::Dense { input, pre }) => {
                let dpre = if l.activation == Activation::Identity {
                    grad
                } else {
                    let mut d = grad;
                    for (g, &p) in d.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                        *g *= l.activation.derivative(p);
                    }
                    d
                };
                let dw = dpre.t_matmul(input)?;
                let db = dpre.column_sums();
                let dinput = if need_input_grad {
                    Some(dpre.matmul(&l.weight)?)
                } else {
                    None
                };
                (vec![dw.into_vec(), db], dinput)
            }
            (Layer::Mag(l), Cache::Mag { proj, feats }) => {
                let dw = grad.t_matmul(feats)?;
                let mut tensors = vec![dw.into_vec()];
                if l.bias.is_some() {
                    tensors.push(grad.column_sums());
                }
                let dinput = if need_input_grad {
                    let mut dfeat = grad.matmul(&l.weight)?;
                    for (g, &p) in dfeat.as_mut_slice().iter_mut().zip(proj.as_slice()) {
                        *g *= l.activation.derivative(p);
                    }
                    Some(dfeat.matmul(&l.features)?)
                } else {
                    None
                };
                (tensors, dinput)
            }
            _ => unreachable!("cache kind follows layer kind"),
        };
        per_layer.push(tensors);
        if let Some(d) = dinput {
            grad = if net.has_skip(k) {
                d.slice_cols(net.input_dim(), d.cols() - net.input_dim())?
            } else {
                d
            };
        } else {
            grad = Matrix::zeros(0, 0);
        }
    }
    per_layer.reverse();
    Ok((loss, per_layer.into_iter().flatten().collect()))
}

/// Optimiser moments for a list of tensors.
pub(crate) struct OptimizerState {
    kind: Optimizer,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: i32,
}

impl OptimizerState {
    pub(crate) fn new(kind: Optimizer, sizes: impl Iterator<Item = usize>) -> Self {
        let sizes: Vec<usize> = sizes.collect();
        let (first, second) = match kind {
            Optimizer::Adam { .. } => (
                sizes.iter().map(|&s| vec![0.0; s]).collect(),
                sizes.iter().map(|&s| vec![0.0; s]).collect(),
            ),
            Optimizer::Sgd => (Vec::new(), Vec::new()),
        };
        Self {
            kind,
            first,
            second,
            step: 0,
        }
    }

    pub(crate) fn update(&mut self, params: &mut [&mut [f64]], grads: &[Vec<f64>], lr: f64) {
        self.step += 1;
        match self.kind {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pv, gv) in p.iter_mut().zip(g) {
                        *pv -= lr * gv;
                    }
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - libm::pow(beta1, self.step as f64);
                let c2 = 1.0 - libm::pow(beta2, self.step as f64);
                for (t, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let m1 = &mut self.first[t];
                    let m2 = &mut self.second[t];
                    for i in 0..p.len() {
                        let gv = g[i];
                        m1[i] = beta1 * m1[i] + (1.0 - beta1) * gv;
                        m2[i] = beta2 * m2[i] + (1.0 - beta2) * gv * gv;
                        let mh = m1[i] / c1;
                        let vh = m2[i] / c2;
                        p[i] -= lr * mh / (libm::sqrt(vh) + eps);
                    }
                }
            }
        }
    }
}

/// Trains every trainable tensor of `net` in place with mini-batch MSE.
///
/// Frozen random features are never touched. Returns the per-epoch mean loss.
pub fn train(
    net: &mut NetworkSpec,
    inputs: &Matrix,
    targets: &Targets<'_>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    ensure_trainable(net)?;
    let n = inputs.rows();
    if n == 0 {
        return Err(invalid("training needs at least one row"));
    }
    if inputs.cols() != net.input_dim() {
        return Err(shape(
            "train",
            format!("{} input columns", net.input_dim()),
            format!("{}", inputs.cols()),
        ));
    }
    let resolved = ResolvedTargets::resolve(net, targets, n)?;
    let mut state = OptimizerState::new(
        cfg.optimizer,
        net.trainable_tensors().iter().map(|t| t.len()),
    );
    let mut rng = cfg.rng.rng();
    let mut order: Vec<usize> = (0..n).collect();
    let mut report = TrainReport::default();
    let full_batch = cfg.batch_size >= n && !cfg.shuffle;
    let total_steps = cfg.epochs * n.div_ceil(cfg.batch_size);
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grads) = if full_batch {
                backprop(net, inputs, &resolved)?
            } else {
                backprop(net, &inputs.select_rows(chunk)?, &resolved.select(chunk)?)?
            };
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    loss,
                });
            }
            let lr = cfg.schedule.rate(cfg.learning_rate, step, total_steps);
            state.update(&mut net.trainable_tensors_mut(), &grads, lr);
            step += 1;
            total += loss * chunk.len() as f64;
        }
        report.epoch_losses.push(total / n as f64);
    }
    Ok(report)
}
