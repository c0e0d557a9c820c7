//! Regression of `vθ(t, x; y)` onto conditional velocities.

use ndarray::Array2;
use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kac::{sample_coordinate, KacParams};
use crate::rng::SeedSpec;
use crate::schedule::Schedule;
use crate::telegraph::kac_velocity;

use super::mlp::{Mlp, Optimizer, OptimizerKind};
use super::Labels;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub iterations: usize,
    pub batch_size: usize,
    /// Probability of replacing a label by the null label.
    pub label_drop: f64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            iterations: 2000,
            batch_size: 256,
            label_drop: 0.1,
            optimizer: OptimizerKind::Sgd,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Mlp,
    /// Mini-batch loss per iteration.
    pub losses: Vec<f64>,
}

/// One regression mini-batch: network input rows and velocity targets.
fn draw_batch(
    model: &Mlp,
    params: &KacParams,
    sched: &Schedule,
    data: &Dataset,
    cfg: &TrainConfig,
    seed: SeedSpec,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let d = data.dim();
    let (a, c) = (params.a(), params.c());
    let mut rng = seed.rng();
    let b = cfg.batch_size;
    let mut ts = Vec::with_capacity(b);
    let mut xs = Array2::zeros((b, d));
    let mut targets = Array2::zeros((b, d));
    let mut labels = Vec::with_capacity(b);
    for i in 0..b {
        let k = data.draw_index(&mut rng);
        let t: f64 = rng.random();
        let (f, df, s, ds) = (sched.f(t), sched.df(t), sched.g(t), sched.dg(t));
        for j in 0..d {
            let x0 = data.points()[[k, j]];
            // the velocity is evaluated at the sampled offset itself, so
            // states on the cone edge stay atoms despite rounding in f·x0 + z
            let z = sample_coordinate(a, c, s, &mut rng);
            xs[[i, j]] = f * x0 + z;
            targets[[i, j]] = df * x0 + ds * kac_velocity(a, c, s, z)?;
        }
        let y = if model.num_classes() > 0 {
            let keep = rng.random::<f64>() >= cfg.label_drop;
            data.label(k).filter(|_| keep)
        } else {
            None
        };
        ts.push(t);
        labels.push(y);
    }
    let input = model.encode(&ts, xs.view(), Labels::PerRow(&labels))?;
    Ok((input, targets))
}

/// Fits `model` to the conditional velocities of the mean-reverting flow.
///
/// Iteration `i` draws its batch from the child stream `seed.child(i)`.
pub fn train_parametric(
    model: Mlp,
    params: &KacParams,
    sched: &Schedule,
    data: &Dataset,
    cfg: &TrainConfig,
    seed: SeedSpec,
) -> Result<TrainOutcome> {
    if params.d() != data.dim() || super::VelocityField::dim(&model) != data.dim() {
        return Err(Error::Param(format!(
            "dimension mismatch: params d = {}, model d = {}, data d = {}",
            params.d(),
            super::VelocityField::dim(&model),
            data.dim()
        )));
    }
    if model.num_classes() > 0 && model.num_classes() != data.num_classes() {
        return Err(Error::Param(format!(
            "model expects {} classes but the dataset has {}",
            model.num_classes(),
            data.num_classes()
        )));
    }
    if cfg.batch_size == 0 || !(0.0..=1.0).contains(&cfg.label_drop) {
        return Err(Error::Param("batch size must be positive and label drop in [0, 1]".into()));
    }
    let mut model = model;
    let mut losses = Vec::with_capacity(cfg.iterations);
    if cfg.iterations == 0 {
        return Ok(TrainOutcome { model, losses });
    }
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, model.param_count())?;
    for it in 0..cfg.iterations {
        let (input, targets) = draw_batch(&model, params, sched, data, cfg, seed.child(it as u64))?;
        let (loss, grad) = model.loss_and_grad(input, targets.view(), 1.0)?;
        losses.push(loss);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                iteration: it,
                trace: losses,
            });
        }
        opt.update(model.params_mut(), &grad);
    }
    Ok(TrainOutcome { model, losses })
}
