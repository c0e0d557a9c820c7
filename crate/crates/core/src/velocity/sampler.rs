//! Samplers of the time-`t` state law, used for energy estimates, metrics and
//! distillation inputs.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use ndarray::Array2;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kac::KacParams;
use crate::rng::SeedSpec;
use crate::schedule::Schedule;
use crate::telegraph::StateDensity1D;

/// States with the class label of the component each was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct StateBatch {
    pub states: Array2<f64>,
    pub labels: Vec<Option<usize>>,
}

pub trait StateSampler: Send + Sync {
    fn dim(&self) -> usize;

    /// `n` i.i.d. draws from the time-`t` law.
    fn sample(&self, t: f64, n: usize, seed: SeedSpec) -> Result<StateBatch>;
}

/// Exact draws of the mean-reverting marginal `f(t)·X₀ + K_{g(t)}` with
/// `X₀` from a dataset.
///
/// Telegraph laws (with their quantile tables) are cached per offset time.
#[derive(Debug)]
pub struct MarginalSampler {
    params: KacParams,
    sched: Schedule,
    data: Dataset,
    laws: Mutex<HashMap<u64, Arc<StateDensity1D>>>,
}

const LAW_CACHE_LIMIT: usize = 512;

impl Clone for MarginalSampler {
    fn clone(&self) -> Self {
        Self {
            params: self.params,
            sched: self.sched.clone(),
            data: self.data.clone(),
            laws: Mutex::new(HashMap::new()),
        }
    }
}

impl MarginalSampler {
    pub fn new(params: KacParams, sched: Schedule, data: Dataset) -> Result<Self> {
        if params.d() != data.dim() {
            return Err(Error::Param(format!(
                "params d = {} but data has {} coordinates",
                params.d(),
                data.dim()
            )));
        }
        Ok(Self {
            params,
            sched,
            data,
            laws: Mutex::new(HashMap::new()),
        })
    }

    fn law(&self, s: f64) -> Result<Arc<StateDensity1D>> {
        let mut laws = self.laws.lock().map_err(|_| Error::Internal("law cache poisoned".into()))?;
        if let Some(law) = laws.get(&s.to_bits()) {
            return Ok(law.clone());
        }
        let law = Arc::new(StateDensity1D::from_rate_speed(self.params.a(), self.params.c(), s)?);
        // build the quantile table once, outside the parallel section
        law.ac_quantile(0.5)?;
        if laws.len() >= LAW_CACHE_LIMIT {
            laws.clear();
        }
        laws.insert(s.to_bits(), law.clone());
        Ok(law)
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn params(&self) -> &KacParams {
        &self.params
    }

    pub fn schedule(&self) -> &Schedule {
        &self.sched
    }
}

impl StateSampler for MarginalSampler {
    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn sample(&self, t: f64, n: usize, seed: SeedSpec) -> Result<StateBatch> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain(format!("time must lie in [0, 1], got {t}")));
        }
        let d = self.data.dim();
        let f = self.sched.f(t);
        let s = self.sched.g(t);
        let law = if s > 0.0 { Some(self.law(s)?) } else { None };
        let mut states = Array2::zeros((n, d));
        let mut labels = vec![None; n];
        states
            .as_slice_mut()
            .expect("fresh array is contiguous")
            .par_chunks_mut(d)
            .zip(labels.par_iter_mut())
            .enumerate()
            .try_for_each(|(i, (row, label))| -> Result<()> {
                let mut rng = seed.child(i as u64).rng();
                let k = self.data.draw_index(&mut rng);
                *label = self.data.label(k);
                for (j, x) in row.iter_mut().enumerate() {
                    let noise = match &law {
                        Some(law) => law.sample_with(&mut rng)?,
                        None => 0.0,
                    };
                    *x = f * self.data.points()[[k, j]] + noise;
                }
                Ok(())
            })?;
        Ok(StateBatch { states, labels })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn endpoints() {
        let p = KacParams::new(2.0, 1.0, 1).unwrap();
        let data = Dataset::new(array![[0.25], [-2.0]], Some(vec![0, 1])).unwrap();
        let s = MarginalSampler::new(p, Schedule::linear(), data).unwrap();
        let b = s.sample(0.0, 50, SeedSpec::new(1, 1)).unwrap();
        for (x, y) in b.states.column(0).iter().zip(&b.labels) {
            assert!(*x == 0.25 && *y == Some(0) || *x == -2.0 && *y == Some(1));
        }
        let b = s.sample(1.0, 500, SeedSpec::new(1, 1)).unwrap();
        assert!(b.states.iter().all(|x| x.abs() <= 1.0));
        assert_eq!(b, s.sample(1.0, 500, SeedSpec::new(1, 1)).unwrap());
    }
}
