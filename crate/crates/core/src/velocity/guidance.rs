//! Classifier-free guidance in velocity space:
//! `ṽ(t, x; y) = v(t, x) + w·(v(t, x; y) − v(t, x))`.

use std::sync::Arc;

use ndarray::{ArrayView2, ArrayViewMut2};

use crate::error::{Error, Result};

use super::{check_batch_shape, FieldKind, Labels, VelocityField};

/// Guided combination of a conditional and an unconditional field.
///
/// The conditional field is queried with the label, the unconditional one
/// without. Both may be the same object (a single network with a null label).
#[derive(Clone)]
pub struct GuidedField {
    w: f64,
    conditional: Arc<dyn VelocityField>,
    unconditional: Arc<dyn VelocityField>,
}

impl std::fmt::Debug for GuidedField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GuidedField")
            .field("w", &self.w)
            .field("conditional", &self.conditional.kind())
            .field("unconditional", &self.unconditional.kind())
            .finish()
    }
}

impl GuidedField {
    pub fn new(w: f64, conditional: Arc<dyn VelocityField>, unconditional: Arc<dyn VelocityField>) -> Result<Self> {
        if !w.is_finite() {
            return Err(Error::Param(format!("guidance strength must be finite, got {w}")));
        }
        if conditional.dim() != unconditional.dim() {
            return Err(Error::Param(format!(
                "conditional field has dimension {} but unconditional has {}",
                conditional.dim(),
                unconditional.dim()
            )));
        }
        Ok(Self {
            w,
            conditional,
            unconditional,
        })
    }

    pub fn w(&self) -> f64 {
        self.w
    }
}

#[inline]
fn combine(w: f64, u: f64, c: f64) -> f64 {
    u + w * (c - u)
}

/// Guided velocity at one point.
pub fn guided_velocity(spec: &GuidedField, t: f64, x: &[f64], label: Option<usize>) -> Result<Vec<f64>> {
    let mut out = vec![0.0; spec.dim()];
    spec.eval_point(t, x, label, &mut out)?;
    Ok(out)
}

impl VelocityField for GuidedField {
    fn dim(&self) -> usize {
        self.conditional.dim()
    }

    fn kind(&self) -> FieldKind {
        FieldKind::Guided
    }

    fn eval_point(&self, t: f64, x: &[f64], label: Option<usize>, out: &mut [f64]) -> Result<()> {
        if self.w == 0.0 || label.is_none() {
            return self.unconditional.eval_point(t, x, None, out);
        }
        if self.w == 1.0 {
            return self.conditional.eval_point(t, x, label, out);
        }
        let mut u = vec![0.0; out.len()];
        self.unconditional.eval_point(t, x, None, &mut u)?;
        self.conditional.eval_point(t, x, label, out)?;
        for (o, ui) in out.iter_mut().zip(&u) {
            *o = combine(self.w, *ui, *o);
        }
        Ok(())
    }

    fn eval_batch(&self, t: f64, xs: ArrayView2<'_, f64>, labels: Labels<'_>, mut out: ArrayViewMut2<'_, f64>) -> Result<()> {
        check_batch_shape(self.dim(), &xs, &out)?;
        if self.w == 0.0 || matches!(labels, Labels::Unconditional) {
            return self.unconditional.eval_batch(t, xs, Labels::Unconditional, out);
        }
        if self.w == 1.0 {
            // rows without a label fall back to the unconditional field
            if let Labels::PerRow(ys) = labels {
                if ys.iter().any(Option::is_none) {
                    let mut u = ndarray::Array2::zeros(out.raw_dim());
                    self.unconditional.eval_batch(t, xs, Labels::Unconditional, u.view_mut())?;
                    self.conditional.eval_batch(t, xs, labels, out.view_mut())?;
                    for (i, y) in ys.iter().enumerate() {
                        if y.is_none() {
                            out.row_mut(i).assign(&u.row(i));
                        }
                    }
                    return Ok(());
                }
            }
            return self.conditional.eval_batch(t, xs, labels, out);
        }
        let mut u = ndarray::Array2::zeros(out.raw_dim());
        self.unconditional.eval_batch(t, xs, Labels::Unconditional, u.view_mut())?;
        self.conditional.eval_batch(t, xs, labels, out.view_mut())?;
        for (i, (mut o, ur)) in out.outer_iter_mut().zip(u.outer_iter()).enumerate() {
            if labels.get(i).is_none() {
                o.assign(&ur);
                continue;
            }
            for (oj, &uj) in o.iter_mut().zip(ur.iter()) {
                *oj = combine(self.w, uj, *oj);
            }
        }
        Ok(())
    }

    fn has_support(&self) -> bool {
        self.conditional.has_support() || self.unconditional.has_support()
    }

    fn clamp_to_support(&self, t: f64, x: &mut [f64], label: Option<usize>) -> f64 {
        // the class support is contained in the unconditional one
        let moved = self.conditional.clamp_to_support(t, x, label);
        moved.max(self.unconditional.clamp_to_support(t, x, None))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::velocity::FnField;

    fn constant(v: f64) -> Arc<dyn VelocityField> {
        Arc::new(FnField::new(1, move |_, _, out: &mut [f64]| out[0] = v))
    }

    #[test]
    fn affine_combination() {
        let g = GuidedField::new(1.2, constant(1.0), constant(0.0)).unwrap();
        assert_eq!(guided_velocity(&g, 0.5, &[0.0], Some(0)).unwrap(), vec![1.2]);
        assert_eq!(guided_velocity(&g, 0.5, &[0.0], None).unwrap(), vec![0.0]);
    }

    #[test]
    fn identical_fields_are_fixed_points() {
        for w in [-2.0, 0.0, 0.5, 1.0, 3.0] {
            let g = GuidedField::new(w, constant(0.3), constant(0.3)).unwrap();
            assert_eq!(guided_velocity(&g, 0.1, &[1.0], Some(1)).unwrap(), vec![0.3]);
        }
    }

    #[test]
    fn rejects_non_finite_strength() {
        assert!(GuidedField::new(f64::INFINITY, constant(1.0), constant(0.0)).is_err());
    }
}
