//! Monte Carlo kinetic energy `(E_{x∼μₜ} ‖v(t, x)‖²)^{1/2}`.

use ndarray::ArrayView2;

use crate::error::Result;
use crate::rng::SeedSpec;

use super::{eval_field, Labels, StateSampler, VelocityField};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyEstimate {
    /// Root mean square speed.
    pub value: f64,
    /// Delta-method standard error of `value`.
    pub stderr: f64,
    pub n: usize,
}

impl EnergyEstimate {
    /// Estimate from velocity rows.
    pub fn from_values(v: ArrayView2<'_, f64>) -> Self {
        let n = v.nrows();
        let sq: Vec<f64> = v.outer_iter().map(|r| r.iter().map(|x| x * x).sum()).collect();
        let mean = sq.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            sq.iter().map(|q| (q - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let value = mean.sqrt();
        let stderr = if value > 0.0 {
            (var / n as f64).sqrt() / (2.0 * value)
        } else {
            0.0
        };
        Self { value, stderr, n }
    }
}

/// Kinetic energy of `field` under the time-`t` law drawn by `sampler`; each
/// state is evaluated with the label of the component it was drawn from.
pub fn kinetic_energy(
    field: &dyn VelocityField,
    sampler: &dyn StateSampler,
    t: f64,
    n: usize,
    seed: SeedSpec,
) -> Result<EnergyEstimate> {
    let batch = sampler.sample(t, n, seed)?;
    let v = eval_field(field, t, batch.states.view(), Labels::PerRow(&batch.labels))?;
    Ok(EnergyEstimate::from_values(v.view()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use crate::kac::KacParams;
    use crate::schedule::Schedule;
    use crate::velocity::{FnField, MarginalSampler};
    use ndarray::array;

    #[test]
    fn zero_field_has_zero_energy() {
        let p = KacParams::new(2.0, 1.0, 1).unwrap();
        let s = MarginalSampler::new(p, Schedule::linear(), Dataset::new(array![[0.0]], None).unwrap()).unwrap();
        let zero = FnField::new(1, |_, _, out: &mut [f64]| out[0] = 0.0);
        let e = kinetic_energy(&zero, &s, 0.5, 100, SeedSpec::new(1, 0)).unwrap();
        assert_eq!((e.value, e.stderr), (0.0, 0.0));
    }

    #[test]
    fn constant_field_energy_is_exact() {
        let v = array![[3.0, 4.0], [3.0, 4.0], [3.0, 4.0]];
        let e = EnergyEstimate::from_values(v.view());
        assert_eq!(e.value, 5.0);
        assert_eq!(e.stderr, 0.0);
    }
}
