//! Fixed-grid ODE integration of `dx/dt = v(t, x)` in either time direction.
//!
//! The step `h` is signed: sampling runs from `t = 1` to `t = 0` with
//! `h = −1/M`. Node `k` sits at `t_start + k·h`, with the last node pinned to
//! `t_end`.

use std::fmt;

use ndarray::{Array2, ArrayView2, Zip};

use crate::error::{Error, Result};
use crate::velocity::{Labels, VelocityField};

/// Steps used by [`flow_map`].
pub const FLOW_MAP_STEPS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Euler,
    Midpoint,
    /// Two-step Adams–Bashforth, started with one midpoint step.
    Ab2,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Euler => "euler",
            Method::Midpoint => "midpoint",
            Method::Ab2 => "ab2",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Method::Euler),
            "midpoint" | "rk2" => Ok(Method::Midpoint),
            "ab2" => Ok(Method::Ab2),
            other => Err(Error::Config(format!(
                "unknown integrator '{other}' (expected euler, midpoint or ab2)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct IntegratorSpec {
    pub method: Method,
    pub steps: usize,
}

impl IntegratorSpec {
    pub fn new(method: Method, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Param("integrator needs at least one step".into()));
        }
        Ok(Self { method, steps })
    }

    /// Evaluations per sample under the usual accounting: `M` for Euler and
    /// AB-2, `2M` for midpoint.
    pub fn nfe(&self) -> usize {
        match self.method {
            Method::Euler | Method::Ab2 => self.steps,
            Method::Midpoint => 2 * self.steps,
        }
    }

    /// Evaluations actually performed; AB-2 spends one extra on its
    /// midpoint start-up step.
    pub fn evaluations(&self) -> usize {
        match self.method {
            Method::Ab2 => self.steps + 1,
            _ => self.nfe(),
        }
    }

    /// Sampling nodes `1 = t₁ > … > t_{M+1} = 0`.
    pub fn reverse_nodes(&self) -> Vec<f64> {
        nodes(1.0, 0.0, self.steps)
    }
}

/// `steps + 1` uniform nodes from `t_start` to `t_end`.
pub fn nodes(t_start: f64, t_end: f64, steps: usize) -> Vec<f64> {
    let h = (t_end - t_start) / steps as f64;
    let mut ts: Vec<f64> = (0..steps).map(|k| t_start + k as f64 * h).collect();
    ts.push(t_end);
    ts
}

/// Result of an integration run over a batch of states.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub nodes: Vec<f64>,
    /// States at every node, or only the first and last if states were not kept.
    pub states: Vec<Array2<f64>>,
    /// Evaluations per sample under the usual accounting.
    pub nfe: usize,
    /// Evaluations per sample actually performed.
    pub evaluations: usize,
    /// Rows moved onto the support, either at a node or before an
    /// intermediate evaluation.
    pub clamp_events: usize,
}

impl Trajectory {
    pub fn terminal(&self) -> &Array2<f64> {
        self.states.last().expect("trajectory has states")
    }

    /// Clamp events per row evaluation.
    pub fn clamp_rate(&self) -> f64 {
        let rows = self.states[0].nrows().max(1);
        self.clamp_events as f64 / (self.evaluations * rows) as f64
    }
}

struct Evaluator<'a> {
    field: &'a dyn VelocityField,
    labels: Labels<'a>,
    clamp_events: usize,
}

impl Evaluator<'_> {
    /// Projects `x` onto the field's time-`t` support, counting the rows
    /// that moved.
    fn project(&mut self, t: f64, x: &mut Array2<f64>) {
        if !self.field.has_support() {
            return;
        }
        for (i, mut row) in x.outer_iter_mut().enumerate() {
            let row = row.as_slice_mut().expect("owned rows are contiguous");
            if self.field.clamp_to_support(t, row, self.labels.get(i)) > 0.0 {
                self.clamp_events += 1;
            }
        }
    }

    /// Projects `x` onto the support and evaluates the field there.
    fn eval(&mut self, t: f64, x: &mut Array2<f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros(x.raw_dim());
        self.project(t, x);
        self.field.eval_batch(t, x.view(), self.labels, out.view_mut())?;
        Ok(out)
    }
}

fn check_finite(x: &Array2<f64>, prev: &Array2<f64>, node: usize, t: f64) -> Result<()> {
    for (i, row) in x.outer_iter().enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration {
                node,
                t,
                last_good: prev.row(i).to_vec(),
            });
        }
    }
    Ok(())
}

/// Integrates `dx/dt = v(t, x)` from `t_start` to `t_end` in `spec.steps`
/// uniform steps. Intermediate states are kept only if `keep_states`.
pub fn integrate(
    field: &dyn VelocityField,
    spec: IntegratorSpec,
    t_start: f64,
    t_end: f64,
    x: ArrayView2<'_, f64>,
    labels: Labels<'_>,
    keep_states: bool,
) -> Result<Trajectory> {
    if x.ncols() != field.dim() {
        return Err(Error::Param(format!(
            "states have {} columns but the field has dimension {}",
            x.ncols(),
            field.dim()
        )));
    }
    if let Labels::PerRow(ys) = labels {
        if ys.len() != x.nrows() {
            return Err(Error::Param(format!("{} labels for {} states", ys.len(), x.nrows())));
        }
    }
    let ts = nodes(t_start, t_end, spec.steps);
    let h = (t_end - t_start) / spec.steps as f64;
    let mut ev = Evaluator {
        field,
        labels,
        clamp_events: 0,
    };
    let mut cur = x.to_owned();
    let mut states = vec![cur.clone()];
    let mut prev_v: Option<Array2<f64>> = None;
    for k in 0..spec.steps {
        let t = ts[k];
        let next = match (spec.method, prev_v.take()) {
            (Method::Euler, _) => {
                let v = ev.eval(t, &mut cur)?;
                &cur + &(v * h)
            }
            (Method::Midpoint, _) | (Method::Ab2, None) => {
                let v1 = ev.eval(t, &mut cur)?;
                let mut mid = &cur + &(&v1 * (0.5 * h));
                let v2 = ev.eval(t + 0.5 * h, &mut mid)?;
                if spec.method == Method::Ab2 {
                    prev_v = Some(v1);
                }
                &cur + &(v2 * h)
            }
            (Method::Ab2, Some(vp)) => {
                let v = ev.eval(t, &mut cur)?;
                let mut next = cur.clone();
                Zip::from(&mut next).and(&v).and(&vp).for_each(|x, &vk, &vkm| {
                    *x += h * (1.5 * vk - 0.5 * vkm);
                });
                prev_v = Some(v);
                next
            }
        };
        let mut next = next;
        check_finite(&next, &cur, k + 1, ts[k + 1])?;
        if k + 1 < spec.steps {
            ev.project(ts[k + 1], &mut next);
        }
        if keep_states {
            states.push(next.clone());
        }
        cur = next;
    }
    if !keep_states {
        states.push(cur);
    }
    Ok(Trajectory {
        nodes: ts,
        states,
        nfe: spec.nfe(),
        evaluations: spec.evaluations(),
        clamp_events: ev.clamp_events,
    })
}

/// Reverse-time sampling from `t = 1` to `t = 0`, keeping every node.
pub fn sample_reverse(
    field: &dyn VelocityField,
    spec: IntegratorSpec,
    x1: ArrayView2<'_, f64>,
    labels: Labels<'_>,
) -> Result<Trajectory> {
    integrate(field, spec, 1.0, 0.0, x1, labels, true)
}

/// High-resolution midpoint flow map `Φ_{s→τ}` in either direction.
pub fn flow_map(
    field: &dyn VelocityField,
    s: f64,
    tau: f64,
    x: ArrayView2<'_, f64>,
    labels: Labels<'_>,
) -> Result<Array2<f64>> {
    flow_map_with_steps(field, s, tau, x, labels, FLOW_MAP_STEPS)
}

pub fn flow_map_with_steps(
    field: &dyn VelocityField,
    s: f64,
    tau: f64,
    x: ArrayView2<'_, f64>,
    labels: Labels<'_>,
    steps: usize,
) -> Result<Array2<f64>> {
    for (name, v) in [("s", s), ("tau", tau)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain(format!("flow map time {name} = {v} outside [0, 1]")));
        }
    }
    if s == tau {
        return Ok(x.to_owned());
    }
    let spec = IntegratorSpec::new(Method::Midpoint, steps)?;
    let traj = integrate(field, spec, s, tau, x, labels, false)?;
    Ok(traj.states.into_iter().last().expect("terminal state"))
}
