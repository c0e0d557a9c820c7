//! Velocity fields: closed-form oracles, the trainable MLP, guidance, and the
//! common evaluation interface used by the samplers.

pub mod checkpoint;
pub mod energy;
pub mod guidance;
pub mod mlp;
pub mod oracle;
pub mod sampler;
pub mod train;

use std::fmt;

use ndarray::{Array2, ArrayView2, ArrayViewMut2};
use rayon::prelude::*;

use crate::error::{Error, Result};

pub use checkpoint::Checkpoint;
pub use energy::{kinetic_energy, EnergyEstimate};
pub use guidance::{guided_velocity, GuidedField};
pub use mlp::{Mlp, OptimizerKind};
pub use oracle::{conditional_velocity, marginal_velocity, ConditionalOracle, MarginalOracle};
pub use sampler::{MarginalSampler, StateBatch, StateSampler};
pub use train::{train_parametric, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FieldKind {
    ConditionalOracle,
    MarginalOracle,
    Parametric,
    Guided,
    Student,
}

impl fmt::Display for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FieldKind::ConditionalOracle => "conditional-oracle",
            FieldKind::MarginalOracle => "marginal-oracle",
            FieldKind::Parametric => "parametric",
            FieldKind::Guided => "guided",
            FieldKind::Student => "student",
        })
    }
}

/// Class labels attached to a batch of states.
#[derive(Debug, Clone, Copy)]
pub enum Labels<'a> {
    Unconditional,
    All(usize),
    PerRow(&'a [Option<usize>]),
}

impl Labels<'_> {
    #[inline]
    pub fn get(&self, row: usize) -> Option<usize> {
        match *self {
            Labels::Unconditional => None,
            Labels::All(y) => Some(y),
            Labels::PerRow(ys) => ys[row],
        }
    }

    pub fn from_option(label: Option<usize>) -> Labels<'static> {
        label.map_or(Labels::Unconditional, Labels::All)
    }
}

/// A time-dependent vector field `v(t, x; y)` on `ℝ^d`.
pub trait VelocityField: Send + Sync {
    fn dim(&self) -> usize;

    fn kind(&self) -> FieldKind;

    /// Evaluates the field at one point, writing `dim()` values into `out`.
    fn eval_point(&self, t: f64, x: &[f64], label: Option<usize>, out: &mut [f64]) -> Result<()>;

    /// Evaluates the field on every row of `xs`.
    ///
    /// The default runs [`eval_point`](Self::eval_point) row by row in
    /// parallel; results do not depend on the thread count.
    fn eval_batch(&self, t: f64, xs: ArrayView2<'_, f64>, labels: Labels<'_>, mut out: ArrayViewMut2<'_, f64>) -> Result<()> {
        let d = self.dim();
        check_batch_shape(d, &xs, &out)?;
        let Some(slice) = out.as_slice_mut() else {
            for (i, (x, mut o)) in xs.outer_iter().zip(out.outer_iter_mut()).enumerate() {
                let x = x.to_vec();
                let mut buf = vec![0.0; d];
                self.eval_point(t, &x, labels.get(i), &mut buf)?;
                o.assign(&ndarray::ArrayView1::from(&buf));
            }
            return Ok(());
        };
        slice
            .par_chunks_mut(d)
            .enumerate()
            .try_for_each(|(i, o)| {
                let row = xs.row(i);
                match row.as_slice() {
                    Some(x) => self.eval_point(t, x, labels.get(i), o),
                    None => self.eval_point(t, &row.to_vec(), labels.get(i), o),
                }
            })
    }

    /// Whether [`clamp_to_support`](Self::clamp_to_support) can move points.
    fn has_support(&self) -> bool {
        false
    }

    /// Moves `x` onto the closed support of the time-`t` law if it lies
    /// outside. Returns the ℓ∞ distance moved, or zero if `x` was inside or
    /// the move was below the field's reporting threshold.
    fn clamp_to_support(&self, _t: f64, _x: &mut [f64], _label: Option<usize>) -> f64 {
        0.0
    }
}

pub(crate) fn check_batch_shape(d: usize, xs: &ArrayView2<'_, f64>, out: &ArrayViewMut2<'_, f64>) -> Result<()> {
    if xs.ncols() != d || out.ncols() != d || xs.nrows() != out.nrows() {
        return Err(Error::Param(format!(
            "batch shape mismatch: field dimension {d}, states {:?}, output {:?}",
            xs.shape(),
            out.shape()
        )));
    }
    Ok(())
}

/// Convenience wrapper around [`VelocityField::eval_batch`].
pub fn eval_field(field: &dyn VelocityField, t: f64, xs: ArrayView2<'_, f64>, labels: Labels<'_>) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((xs.nrows(), field.dim()));
    field.eval_batch(t, xs, labels, out.view_mut())?;
    Ok(out)
}

impl<F: VelocityField + ?Sized> VelocityField for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn kind(&self) -> FieldKind {
        (**self).kind()
    }
    fn eval_point(&self, t: f64, x: &[f64], label: Option<usize>, out: &mut [f64]) -> Result<()> {
        (**self).eval_point(t, x, label, out)
    }
    fn eval_batch(&self, t: f64, xs: ArrayView2<'_, f64>, labels: Labels<'_>, out: ArrayViewMut2<'_, f64>) -> Result<()> {
        (**self).eval_batch(t, xs, labels, out)
    }
    fn has_support(&self) -> bool {
        (**self).has_support()
    }
    fn clamp_to_support(&self, t: f64, x: &mut [f64], label: Option<usize>) -> f64 {
        (**self).clamp_to_support(t, x, label)
    }
}

impl<F: VelocityField + ?Sized> VelocityField for std::sync::Arc<F> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn kind(&self) -> FieldKind {
        (**self).kind()
    }
    fn eval_point(&self, t: f64, x: &[f64], label: Option<usize>, out: &mut [f64]) -> Result<()> {
        (**self).eval_point(t, x, label, out)
    }
    fn eval_batch(&self, t: f64, xs: ArrayView2<'_, f64>, labels: Labels<'_>, out: ArrayViewMut2<'_, f64>) -> Result<()> {
        (**self).eval_batch(t, xs, labels, out)
    }
    fn has_support(&self) -> bool {
        (**self).has_support()
    }
    fn clamp_to_support(&self, t: f64, x: &mut [f64], label: Option<usize>) -> f64 {
        (**self).clamp_to_support(t, x, label)
    }
}

/// Field given by a closure; handy for analytic test fields.
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(f64, &[f64], &mut [f64]) + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> VelocityField for FnField<F>
where
    F: Fn(f64, &[f64], &mut [f64]) + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn kind(&self) -> FieldKind {
        FieldKind::Parametric
    }

    fn eval_point(&self, t: f64, x: &[f64], _label: Option<usize>, out: &mut [f64]) -> Result<()> {
        (self.f)(t, x, out);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn default_batch_matches_pointwise() {
        let f = FnField::new(2, |t, x: &[f64], out: &mut [f64]| {
            out[0] = t * x[1];
            out[1] = x[0] * x[0];
        });
        let xs = array![[1.0, 2.0], [3.0, -1.0], [0.5, 0.25]];
        let v = eval_field(&f, 0.5, xs.view(), Labels::Unconditional).unwrap();
        assert_eq!(v, array![[1.0, 1.0], [-0.5, 9.0], [0.125, 0.25]]);
        // non-contiguous input
        let v2 = eval_field(&f, 0.5, xs.t().t(), Labels::Unconditional).unwrap();
        assert_eq!(v, v2);
        let mut bad = Array2::zeros((2, 2));
        assert!(f.eval_batch(0.5, xs.view(), Labels::Unconditional, bad.view_mut()).is_err());
    }

    #[test]
    fn labels_lookup() {
        let per = [Some(1), None];
        assert_eq!(Labels::PerRow(&per).get(1), None);
        assert_eq!(Labels::All(3).get(7), Some(3));
        assert_eq!(Labels::from_option(None).get(0), None);
    }
}
