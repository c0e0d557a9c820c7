//! Closed-form velocity fields of the mean-reverting Kac flow.
//!
//! Given a data point `x0`, the mean-reverting state `f(t)·x0 + K_{g(t)}` has
//! independent coordinates, each a shifted telegraph law with half-width
//! `c·g(t)`. Its transport velocity follows from the chain rule,
//! `vᵢ = f′(t)·x0ᵢ + g′(t)·v_K(g(t), xᵢ − f(t)·x0ᵢ)`. For a finite dataset the
//! regression minimiser is the posterior average of these conditional
//! velocities.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kac::KacParams;
use crate::schedule::Schedule;
use crate::telegraph::interior_log_density_and_velocity;

use super::{FieldKind, VelocityField};

/// Relative tolerance for treating a coordinate as sitting on a cone edge.
pub const ATOM_TOLERANCE: f64 = 1e-12;

/// Clamps shorter than this multiple of `c` are applied silently.
pub const CLAMP_REPORT_TOLERANCE: f64 = 1e-9;

/// Per-time quantities shared by every component.
#[derive(Debug, Clone, Copy)]
struct Frame {
    a: f64,
    c: f64,
    f: f64,
    df: f64,
    s: f64,
    ds: f64,
    edge: f64,
    tol: f64,
    log_atom: f64,
}

impl Frame {
    fn new(params: &KacParams, sched: &Schedule, t: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain(format!("time must lie in [0, 1], got {t}")));
        }
        let (a, c) = (params.a(), params.c());
        let s = sched.g(t);
        let edge = c * s;
        Ok(Self {
            a,
            c,
            f: sched.f(t),
            df: sched.df(t),
            s,
            ds: sched.dg(t),
            edge,
            tol: ATOM_TOLERANCE * edge,
            log_atom: -a * s - std::f64::consts::LN_2,
        })
    }

    /// ℓ∞ distance from `x` to the support box of the component at `x0`.
    #[inline]
    fn distance(&self, x: &[f64], x0: &[f64]) -> f64 {
        x.iter()
            .zip(x0)
            .map(|(&xi, &x0i)| ((xi - self.f * x0i).abs() - self.edge).max(0.0))
            .fold(0.0, f64::max)
    }

    /// Conditional velocity of one component written into `v`; returns the
    /// number of coordinates sitting on an atom and the log-likelihood, or
    /// `None` if `x` is outside the component's support.
    #[inline]
    fn component(&self, x: &[f64], x0: &[f64], v: &mut [f64]) -> Option<(usize, f64)> {
        let mut atoms = 0;
        let mut logp = 0.0;
        for j in 0..x.len() {
            let z = x[j] - self.f * x0[j];
            let excess = z.abs() - self.edge;
            // rounding in x − f·x0 can exceed the relative tolerance when
            // the cone is much narrower than |x|
            let vk = if excess.abs() <= self.tol + 4.0 * f64::EPSILON * x[j].abs() {
                atoms += 1;
                logp += if self.s > 0.0 { self.log_atom } else { 0.0 };
                if self.s > 0.0 {
                    self.c.copysign(z)
                } else {
                    0.0
                }
            } else if excess > 0.0 {
                return None;
            } else {
                let (lp, vk) = interior_log_density_and_velocity(self.a, self.c, self.s, z);
                logp += lp;
                vk
            };
            v[j] = self.df * x0[j] + self.ds * vk;
        }
        Some((atoms, logp))
    }
}

fn check_dims(params: &KacParams, x: &[f64], d: usize) -> Result<()> {
    if params.d() != d || x.len() != d {
        return Err(Error::Param(format!(
            "dimension mismatch: params d = {}, data d = {d}, state has {} coordinates",
            params.d(),
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("state has non-finite coordinates".into()));
    }
    Ok(())
}

/// Velocity of the mean-reverting flow conditioned on the data point `x0`.
pub fn conditional_velocity(params: &KacParams, sched: &Schedule, t: f64, x: &[f64], x0: &[f64]) -> Result<Vec<f64>> {
    check_dims(params, x, x0.len())?;
    let frame = Frame::new(params, sched, t)?;
    let mut v = vec![0.0; x.len()];
    match frame.component(x, x0, &mut v) {
        Some(_) => Ok(v),
        None => Err(Error::OutsideSupport {
            msg: format!("x = {x:?} outside the cone of x0 = {x0:?} at t = {t}"),
            distance: frame.distance(x, x0),
        }),
    }
}

/// Posterior-weighted mixture of conditional velocities over `indices`.
fn mixture(frame: &Frame, data: &Dataset, indices: Option<&[usize]>, x: &[f64], out: &mut [f64]) -> Result<()> {
    let d = x.len();
    let weights = data.weights();
    let mut v = vec![0.0; d];
    let mut best_atoms = 0usize;
    let mut max_log = f64::NEG_INFINITY;
    let mut norm = 0.0;
    out.iter_mut().for_each(|o| *o = 0.0);
    let mut nearest = f64::INFINITY;
    let mut found = false;

    let mut visit = |i: usize| {
        let w = weights[i];
        if w <= 0.0 {
            return;
        }
        let x0 = data.point(i);
        let x0 = x0.as_slice().expect("dataset rows are contiguous");
        let Some((atoms, logp)) = frame.component(x, x0, &mut v) else {
            nearest = nearest.min(frame.distance(x, x0));
            return;
        };
        let lw = logp + w.ln();
        // Components with more coordinates on atoms carry a singular part
        // that dominates any absolutely continuous contribution.
        if !found || atoms > best_atoms {
            best_atoms = atoms;
            max_log = lw;
            norm = 1.0;
            out.copy_from_slice(&v);
            found = true;
            return;
        }
        if atoms < best_atoms {
            return;
        }
        if lw > max_log {
            let scale = (max_log - lw).exp();
            norm *= scale;
            out.iter_mut().for_each(|o| *o *= scale);
            max_log = lw;
        }
        let p = (lw - max_log).exp();
        norm += p;
        for (o, vj) in out.iter_mut().zip(&v) {
            *o += p * vj;
        }
    };
    match indices {
        Some(idx) => idx.iter().copied().for_each(&mut visit),
        None => (0..data.len()).for_each(&mut visit),
    }
    if !found {
        return Err(Error::OutsideSupport {
            msg: format!("x = {x:?} outside every mixture component at this time"),
            distance: nearest,
        });
    }
    if norm != 1.0 {
        out.iter_mut().for_each(|o| *o /= norm);
    }
    Ok(())
}

/// Exact marginal velocity of the mean-reverting flow over a finite dataset,
/// optionally restricted to one class.
pub fn marginal_velocity(
    params: &KacParams,
    sched: &Schedule,
    data: &Dataset,
    t: f64,
    x: &[f64],
    label: Option<usize>,
) -> Result<Vec<f64>> {
    check_dims(params, x, data.dim())?;
    let frame = Frame::new(params, sched, t)?;
    let idx = label.map(|y| data.class_indices(y)).transpose()?;
    let mut out = vec![0.0; x.len()];
    mixture(&frame, data, idx.as_deref(), x, &mut out)?;
    Ok(out)
}

/// Clamps `x` into the nearest support box among `indices`; returns the
/// ℓ∞ distance moved if it exceeds the reporting threshold.
fn clamp_into(frame: &Frame, data: &Dataset, indices: Option<&[usize]>, x: &mut [f64]) -> f64 {
    let mut best = (f64::INFINITY, usize::MAX);
    let mut consider = |i: usize| {
        let x0 = data.point(i);
        let dist = frame.distance(x, x0.as_slice().expect("contiguous"));
        if dist < best.0 {
            best = (dist, i);
        }
    };
    match indices {
        Some(idx) => idx.iter().copied().for_each(&mut consider),
        None => (0..data.len()).for_each(&mut consider),
    }
    let (dist, i) = best;
    if i == usize::MAX || dist <= frame.tol {
        return 0.0;
    }
    let x0 = data.point(i);
    for (xj, &x0j) in x.iter_mut().zip(x0.iter()) {
        let centre = frame.f * x0j;
        *xj = xj.clamp(centre - frame.edge, centre + frame.edge);
    }
    if dist > CLAMP_REPORT_TOLERANCE * frame.c {
        dist
    } else {
        0.0
    }
}

/// The conditional velocity for a fixed data point as a field.
#[derive(Debug, Clone)]
pub struct ConditionalOracle {
    params: KacParams,
    sched: Schedule,
    data: Dataset,
}

impl ConditionalOracle {
    pub fn new(params: KacParams, sched: Schedule, x0: &[f64]) -> Result<Self> {
        let points = ndarray::Array2::from_shape_vec((1, x0.len()), x0.to_vec())
            .map_err(|e| Error::Internal(e.to_string()))?;
        let data = Dataset::new(points, None)?;
        if params.d() != data.dim() {
            return Err(Error::Param(format!(
                "params d = {} but x0 has {} coordinates",
                params.d(),
                data.dim()
            )));
        }
        Ok(Self { params, sched, data })
    }

    pub fn x0(&self) -> &[f64] {
        self.data.points().as_slice().expect("contiguous")
    }
}

impl VelocityField for ConditionalOracle {
    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn kind(&self) -> FieldKind {
        FieldKind::ConditionalOracle
    }

    fn eval_point(&self, t: f64, x: &[f64], _label: Option<usize>, out: &mut [f64]) -> Result<()> {
        let v = conditional_velocity(&self.params, &self.sched, t, x, self.x0())?;
        out.copy_from_slice(&v);
        Ok(())
    }

    fn has_support(&self) -> bool {
        true
    }

    fn clamp_to_support(&self, t: f64, x: &mut [f64], _label: Option<usize>) -> f64 {
        match Frame::new(&self.params, &self.sched, t) {
            Ok(frame) => clamp_into(&frame, &self.data, None, x),
            Err(_) => 0.0,
        }
    }
}

/// The exact marginal velocity over a dataset. With a label, the mixture is
/// restricted to that class.
#[derive(Debug, Clone)]
pub struct MarginalOracle {
    params: KacParams,
    sched: Schedule,
    data: Dataset,
    classes: Vec<Vec<usize>>,
}

impl MarginalOracle {
    pub fn new(params: KacParams, sched: Schedule, data: Dataset) -> Result<Self> {
        if params.d() != data.dim() {
            return Err(Error::Param(format!(
                "params d = {} but data has {} coordinates",
                params.d(),
                data.dim()
            )));
        }
        let classes = (0..data.num_classes())
            .map(|y| data.class_indices(y))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            params,
            sched,
            data,
            classes,
        })
    }

    pub fn params(&self) -> &KacParams {
        &self.params
    }

    pub fn schedule(&self) -> &Schedule {
        &self.sched
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    fn indices(&self, label: Option<usize>) -> Result<Option<&[usize]>> {
        match label {
            None => Ok(None),
            Some(y) => self
                .classes
                .get(y)
                .map(|v| Some(v.as_slice()))
                .ok_or_else(|| Error::Param(format!("label {y} out of range for {} classes", self.classes.len()))),
        }
    }
}

impl VelocityField for MarginalOracle {
    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn kind(&self) -> FieldKind {
        FieldKind::MarginalOracle
    }

    fn eval_point(&self, t: f64, x: &[f64], label: Option<usize>, out: &mut [f64]) -> Result<()> {
        check_dims(&self.params, x, self.data.dim())?;
        let frame = Frame::new(&self.params, &self.sched, t)?;
        mixture(&frame, &self.data, self.indices(label)?, x, out)
    }

    fn has_support(&self) -> bool {
        true
    }

    fn clamp_to_support(&self, t: f64, x: &mut [f64], label: Option<usize>) -> f64 {
        let (Ok(frame), Ok(idx)) = (Frame::new(&self.params, &self.sched, t), self.indices(label)) else {
            return 0.0;
        };
        clamp_into(&frame, &self.data, idx, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telegraph::kac_velocity;
    use ndarray::array;

    fn base() -> (KacParams, Schedule) {
        (KacParams::new(2.0, 1.0, 1).unwrap(), Schedule::linear())
    }

    #[test]
    fn centre_of_cone_gives_data_drift() {
        let p = KacParams::new(3.0, 1.5, 2).unwrap();
        let s = Schedule::quadratic();
        let x0 = [0.4, -1.2];
        let t = 0.6;
        let x = [s.f(t) * x0[0], s.f(t) * x0[1]];
        let v = conditional_velocity(&p, &s, t, &x, &x0).unwrap();
        assert_eq!(v, vec![s.df(t) * x0[0], s.df(t) * x0[1]]);
    }

    #[test]
    fn atoms_move_at_full_speed() {
        let (p, s) = base();
        let t = 0.5;
        let v = conditional_velocity(&p, &s, t, &[0.5], &[0.0]).unwrap();
        assert_eq!(v, vec![1.0]);
        let v = conditional_velocity(&p, &s, t, &[-0.5], &[0.0]).unwrap();
        assert_eq!(v, vec![-1.0]);
        let err = conditional_velocity(&p, &s, t, &[0.6], &[0.0]).unwrap_err();
        assert!(matches!(err, Error::OutsideSupport { distance, .. } if (distance - 0.1).abs() < 1e-12));
    }

    #[test]
    fn base_flow_matches_kac_velocity() {
        let (p, s) = base();
        for &(t, x) in &[(0.3, 0.1), (0.9, -0.7), (0.5, 0.0)] {
            let v = conditional_velocity(&p, &s, t, &[x], &[0.0]).unwrap()[0];
            assert_eq!(v, -0.0 + kac_velocity(2.0, 1.0, t, x).unwrap());
        }
    }

    #[test]
    fn one_point_marginal_equals_conditional() {
        let p = KacParams::new(25.0, 2.0, 1).unwrap();
        let s = Schedule::linear();
        let data = Dataset::new(array![[0.7]], None).unwrap();
        for &(t, x) in &[(0.2, 0.5), (0.7, 1.0), (0.95, -1.8), (0.5, 0.15 + 1.0)] {
            let m = marginal_velocity(&p, &s, &data, t, &[x], None).unwrap();
            let c = conditional_velocity(&p, &s, t, &[x], &[0.7]).unwrap();
            assert_eq!(m, c, "t={t} x={x}");
        }
    }

    #[test]
    fn symmetric_pair_gives_zero_at_origin() {
        let (p, s) = base();
        let data = Dataset::new(array![[-0.5], [0.5]], None).unwrap();
        for t in [0.4, 0.6, 0.9] {
            let v = marginal_velocity(&p, &s, &data, t, &[0.0], None).unwrap()[0];
            assert!(v.abs() < 1e-15, "t={t}: {v}");
        }
    }

    #[test]
    fn marginal_is_convex_combination() {
        let p = KacParams::new(4.0, 1.0, 1).unwrap();
        let s = Schedule::linear();
        let data = Dataset::new(array![[-1.0], [0.2], [0.9]], None).unwrap();
        for k in 1..50 {
            let t = 0.3 + 0.014 * k as f64;
            let x = -0.4 + 0.02 * k as f64;
            let m = marginal_velocity(&p, &s, &data, t, &[x], None).unwrap()[0];
            let conds: Vec<f64> = (0..3)
                .filter_map(|i| conditional_velocity(&p, &s, t, &[x], &[data.points()[[i, 0]]]).ok())
                .map(|v| v[0])
                .collect();
            let lo = conds.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = conds.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(m >= lo - 1e-12 && m <= hi + 1e-12);
        }
    }

    #[test]
    fn outside_all_components_reports_distance() {
        let (p, s) = base();
        let data = Dataset::new(array![[-1.0], [1.0]], None).unwrap();
        // t = 0.1: centres ±0.9, half-width 0.1
        let err = marginal_velocity(&p, &s, &data, 0.1, &[0.0], None).unwrap_err();
        assert!(matches!(err, Error::OutsideSupport { distance, .. } if (distance - 0.8).abs() < 1e-12));
    }

    #[test]
    fn label_restricts_mixture() {
        let (p, s) = base();
        let data = Dataset::new(array![[-0.5], [0.5]], Some(vec![0, 1])).unwrap();
        let v = marginal_velocity(&p, &s, &data, 0.8, &[0.05], Some(1)).unwrap();
        let c = conditional_velocity(&p, &s, 0.8, &[0.05], &[0.5]).unwrap();
        assert_eq!(v, c);
        assert!(marginal_velocity(&p, &s, &data, 0.8, &[0.05], Some(2)).is_err());
    }

    #[test]
    fn clamp_moves_to_nearest_box() {
        let (p, s) = base();
        let data = Dataset::new(array![[-1.0], [1.0]], None).unwrap();
        let oracle = MarginalOracle::new(p, s, data).unwrap();
        let mut x = [0.5];
        let moved = oracle.clamp_to_support(0.1, &mut x, None);
        assert!((moved - 0.3).abs() < 1e-12);
        assert!((x[0] - 0.8).abs() < 1e-12);
        let mut inside = [0.85];
        assert_eq!(oracle.clamp_to_support(0.1, &mut inside, None), 0.0);
        assert_eq!(inside, [0.85]);
        let mut y = [0.8];
        oracle.eval_point(0.1, &y.clone(), None, &mut y).unwrap();
        assert!((y[0] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn large_rate_does_not_underflow() {
        let p = KacParams::new(3000.0, 20.0, 1).unwrap();
        let s = Schedule::linear();
        let data = Dataset::new(array![[-1.0], [1.0]], None).unwrap();
        let v = marginal_velocity(&p, &s, &data, 0.9, &[5.0], None).unwrap()[0];
        assert!(v.is_finite());
    }
}
