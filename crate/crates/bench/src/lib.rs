//! Shared inputs for the kernel benchmarks.

use kacflow_core::{Dataset, KacParams, Result, Schedule, SeedSpec};
use ndarray::Array2;

pub const SEED: SeedSpec = SeedSpec { master_seed: 7, stream_id: 0 };

/// The default one-dimensional setup: a = 25, c = 2, quadratic schedule.
pub fn setup_1d() -> Result<(KacParams, Schedule, Dataset)> {
    let params = KacParams::new(25.0, 2.0, 1)?;
    let data = Dataset::by_name("two-mode-1d", SEED)?;
    Ok((params, Schedule::quadratic(), data))
}

/// Evenly spaced points in `[-1, 1]` as an `n x 1` batch.
pub fn grid_batch(n: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, 1), |(i, _)| -1.0 + 2.0 * i as f64 / (n.max(2) - 1) as f64)
}
