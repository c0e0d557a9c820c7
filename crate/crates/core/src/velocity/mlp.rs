//! Small fully connected network `vθ(t, x; y)` with a hand-written backward
//! pass.
//!
//! Input is `[t, x₁ … x_d]` followed, for class-conditional models, by a
//! one-hot label block with `K + 1` slots where the last slot is the null
//! label. Hidden layers use `tanh`; the output layer is linear.

use std::fmt;

use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::SeedSpec;

use super::{check_batch_shape, FieldKind, Labels, VelocityField};

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dim: usize,
    num_classes: usize,
    widths: Vec<usize>,
    params: Vec<f64>,
    kind: FieldKind,
}

fn param_len(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl Mlp {
    /// Randomly initialised network (Glorot-uniform weights, zero biases).
    pub fn new(dim: usize, num_classes: usize, hidden: &[usize], seed: SeedSpec) -> Result<Self> {
        if dim == 0 || hidden.contains(&0) {
            return Err(Error::Param("network dimensions must be positive".into()));
        }
        let mut widths = vec![input_width(dim, num_classes)];
        widths.extend_from_slice(hidden);
        widths.push(dim);
        let mut rng = seed.rng();
        let mut params = Vec::with_capacity(param_len(&widths));
        for w in widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Self {
            dim,
            num_classes,
            widths,
            params,
            kind: FieldKind::Parametric,
        })
    }

    /// Rebuilds a network from its layer widths and flat parameters.
    pub fn from_parts(dim: usize, num_classes: usize, widths: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        if widths.len() < 2 || widths[0] != input_width(dim, num_classes) || *widths.last().unwrap() != dim {
            return Err(Error::Param(format!(
                "layer widths {widths:?} do not fit dimension {dim} with {num_classes} classes"
            )));
        }
        if params.len() != param_len(&widths) {
            return Err(Error::Param(format!(
                "expected {} parameters for widths {widths:?}, got {}",
                param_len(&widths),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Param("non-finite network parameter".into()));
        }
        Ok(Self {
            dim,
            num_classes,
            widths,
            params,
            kind: FieldKind::Parametric,
        })
    }

    /// Same network reported as a distilled student.
    pub fn into_student(mut self) -> Self {
        self.kind = FieldKind::Student;
        self
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// SHA-256 of the parameter bytes.
    pub fn param_hash(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    fn layers(&self) -> impl Iterator<Item = (ArrayView2<'_, f64>, &[f64])> + '_ {
        let mut off = 0;
        self.widths.windows(2).map(move |w| {
            let (i, o) = (w[0], w[1]);
            let weights = ArrayView2::from_shape((o, i), &self.params[off..off + o * i]).expect("layer shape");
            let bias = &self.params[off + o * i..off + o * i + o];
            off += o * i + o;
            (weights, bias)
        })
    }

    /// Network input rows for times `ts`, states `xs` and labels.
    pub fn encode(&self, ts: &[f64], xs: ArrayView2<'_, f64>, labels: Labels<'_>) -> Result<Array2<f64>> {
        let n = xs.nrows();
        if xs.ncols() != self.dim || (ts.len() != n && ts.len() != 1) {
            return Err(Error::Param(format!(
                "cannot encode {} times with states of shape {:?}",
                ts.len(),
                xs.shape()
            )));
        }
        let mut input = Array2::zeros((n, self.widths[0]));
        for i in 0..n {
            input[[i, 0]] = if ts.len() == 1 { ts[0] } else { ts[i] };
        }
        input.slice_mut(s![.., 1..=self.dim]).assign(&xs);
        if self.num_classes > 0 {
            let base = 1 + self.dim;
            for i in 0..n {
                let slot = match labels.get(i) {
                    Some(y) if y < self.num_classes => y,
                    Some(y) => {
                        return Err(Error::Param(format!(
                            "label {y} out of range for {} classes",
                            self.num_classes
                        )))
                    }
                    None => self.num_classes,
                };
                input[[i, base + slot]] = 1.0;
            }
        }
        Ok(input)
    }

    /// Forward pass returning every layer's activation (input first).
    fn forward_all(&self, input: Array2<f64>) -> Vec<Array2<f64>> {
        let n_layers = self.widths.len() - 1;
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(input);
        for (l, (w, b)) in self.layers().enumerate() {
            let mut z = acts[l].dot(&w.t());
            z += &ArrayView2::from_shape((1, b.len()), b).expect("bias row");
            if l + 1 < n_layers {
                z.mapv_inplace(f64::tanh);
            }
            acts.push(z);
        }
        acts
    }

    pub fn forward(&self, input: Array2<f64>) -> Array2<f64> {
        self.forward_all(input).pop().expect("at least one layer")
    }

    /// Loss `scale · mean_i ‖out_i − target_i‖²` and its parameter gradient.
    pub fn loss_and_grad(&self, input: Array2<f64>, targets: ArrayView2<'_, f64>, scale: f64) -> Result<(f64, Vec<f64>)> {
        let n = input.nrows();
        if targets.nrows() != n || targets.ncols() != self.dim || n == 0 {
            return Err(Error::Param(format!(
                "targets of shape {:?} do not match a batch of {n} rows",
                targets.shape()
            )));
        }
        let acts = self.forward_all(input);
        let out = acts.last().unwrap();
        let resid = out - &targets;
        let loss = scale * resid.iter().map(|r| r * r).sum::<f64>() / n as f64;
        let mut delta = resid * (2.0 * scale / n as f64);
        let mut grad = vec![0.0; self.params.len()];
        let layers: Vec<_> = self.layers().collect();
        let mut offsets = Vec::with_capacity(layers.len());
        let mut off = 0;
        for w in self.widths.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        for l in (0..layers.len()).rev() {
            let (w, _) = layers[l];
            let (o, i) = w.dim();
            let prev = &acts[l];
            let gw = delta.t().dot(prev);
            let gb = delta.sum_axis(Axis(0));
            let base = offsets[l];
            grad[base..base + o * i].copy_from_slice(gw.as_slice().expect("fresh array"));
            grad[base + o * i..base + o * i + o].copy_from_slice(gb.as_slice().expect("fresh array"));
            if l > 0 {
                let mut back = delta.dot(&w);
                ndarray::Zip::from(&mut back).and(prev).for_each(|g, &h| *g *= 1.0 - h * h);
                delta = back;
            }
        }
        Ok((loss, grad))
    }
}

fn input_width(dim: usize, num_classes: usize) -> usize {
    1 + dim + if num_classes > 0 { num_classes + 1 } else { 0 }
}

impl VelocityField for Mlp {
    fn dim(&self) -> usize {
        self.dim
    }

    fn kind(&self) -> FieldKind {
        self.kind
    }

    fn eval_point(&self, t: f64, x: &[f64], label: Option<usize>, out: &mut [f64]) -> Result<()> {
        let xs = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Param(e.to_string()))?;
        let y = self.forward(self.encode(&[t], xs, Labels::from_option(label))?);
        out.copy_from_slice(y.as_slice().expect("fresh array"));
        Ok(())
    }

    fn eval_batch(&self, t: f64, xs: ArrayView2<'_, f64>, labels: Labels<'_>, mut out: ArrayViewMut2<'_, f64>) -> Result<()> {
        check_batch_shape(self.dim, &xs, &out)?;
        let y = self.forward(self.encode(&[t], xs, labels)?);
        out.assign(&y);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OptimizerKind {
    /// Plain gradient descent with a fixed step.
    Sgd,
    /// Adaptive moments with the usual defaults (β₁ = 0.9, β₂ = 0.999).
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer '{other}' (expected sgd or adam)"))),
        }
    }
}

/// Optimizer state for one parameter vector.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    m: Array1<f64>,
    v: Array1<f64>,
    step: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, n: usize) -> Result<Self> {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::Param(format!("learning rate must be positive, got {lr}")));
        }
        let (m, v) = match kind {
            OptimizerKind::Sgd => (Array1::zeros(0), Array1::zeros(0)),
            OptimizerKind::Adam => (Array1::zeros(n), Array1::zeros(n)),
        };
        Ok(Self { kind, lr, m, v, step: 0 })
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                self.step = self.step.saturating_add(1);
                let c1 = 1.0 - B1.powi(self.step);
                let c2 = 1.0 - B2.powi(self.step);
                for (((p, g), m), v) in params.iter_mut().zip(grad).zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
                    *m = B1 * *m + (1.0 - B1) * g;
                    *v = B2 * *v + (1.0 - B2) * g * g;
                    *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
                }
            }
        }
    }
}
