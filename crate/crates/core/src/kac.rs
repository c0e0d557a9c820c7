//! Kac (telegraph) process simulation.
//!
//! A 1-D Kac particle starts at the origin, picks a direction `±1` with equal
//! probability and moves at speed `c`, reversing direction at the event times
//! of a Poisson process of rate `a`. In `d` dimensions every coordinate is an
//! independent 1-D Kac particle (product construction), so the state always
//! stays inside the ℓ∞ cone `‖X(t)‖∞ ≤ c·t`.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::SeedSpec;
use crate::schedule::Schedule;

/// Jump rate `a` (half the damping coefficient), wave speed `c` and dimension `d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KacParams {
    a: f64,
    c: f64,
    d: usize,
}

impl KacParams {
    pub fn new(a: f64, c: f64, d: usize) -> Result<Self> {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::Param(format!("jump rate a must be positive and finite, got {a}")));
        }
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::Param(format!("wave speed c must be positive and finite, got {c}")));
        }
        if d == 0 {
            return Err(Error::Param("dimension d must be at least 1".into()));
        }
        Ok(Self { a, c, d })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Damping coefficient of the damped wave equation, `ξ = 2a`.
    pub fn damping(&self) -> f64 {
        2.0 * self.a
    }

    /// Same rate and speed in dimension `d`.
    pub fn with_dim(&self, d: usize) -> Result<Self> {
        Self::new(self.a, self.c, d)
    }
}

/// One coordinate of a Kac path: initial direction and reversal times.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinatePath {
    pub initial_direction: f64,
    pub jump_times: Vec<f64>,
}

impl CoordinatePath {
    /// Direction in force at time `t` (right-continuous).
    pub fn direction_at(&self, t: f64) -> f64 {
        let flips = self.jump_times.partition_point(|&s| s <= t);
        if flips % 2 == 0 {
            self.initial_direction
        } else {
            -self.initial_direction
        }
    }

    /// `c·Σ (s_j − s_{j−1})·U_j` over the segments completed by time `t`.
    pub fn position(&self, c: f64, t: f64) -> f64 {
        let mut forward = 0.0;
        let mut prev = 0.0;
        let mut dir = self.initial_direction;
        for &s in &self.jump_times {
            if s >= t {
                break;
            }
            if dir > 0.0 {
                forward += s - prev;
            }
            prev = s;
            dir = -dir;
        }
        if dir > 0.0 {
            forward += t - prev;
        }
        // time spent moving right minus time moving left, capped at the cone
        // so rounding can never leave it
        let bound = c * t;
        (c * (2.0 * forward - t)).clamp(-bound, bound)
    }
}

/// A sampled path on `[0, t_end]`, stored as event times and evaluated lazily.
#[derive(Debug, Clone, PartialEq)]
pub struct KacPath {
    params: KacParams,
    t_end: f64,
    coords: Vec<CoordinatePath>,
}

impl KacPath {
    pub fn params(&self) -> &KacParams {
        &self.params
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn coordinates(&self) -> &[CoordinatePath] {
        &self.coords
    }

    /// All event times across coordinates, merged in increasing order.
    pub fn jump_times(&self) -> Vec<f64> {
        let mut all: Vec<f64> = self.coords.iter().flat_map(|c| c.jump_times.iter().copied()).collect();
        all.sort_by(f64::total_cmp);
        all
    }

    pub fn jump_count(&self) -> usize {
        self.coords.iter().map(|c| c.jump_times.len()).sum()
    }

    /// Velocity direction vector at time `t`, entries in `{−1, +1}`.
    pub fn direction_at(&self, t: f64) -> Vec<f64> {
        self.coords.iter().map(|c| c.direction_at(t)).collect()
    }

    /// Position at time `t ∈ [0, t_end]`.
    pub fn position(&self, t: f64) -> Vec<f64> {
        let t = t.clamp(0.0, self.t_end);
        self.coords.iter().map(|c| c.position(self.params.c, t)).collect()
    }
}

fn check_time(t: f64, what: &str) -> Result<()> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::Domain(format!("{what} must be finite and nonnegative, got {t}")));
    }
    Ok(())
}

fn sample_coordinate_path<R: Rng + ?Sized>(rate: &Exp<f64>, t_end: f64, rng: &mut R) -> CoordinatePath {
    let initial_direction = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let mut jump_times = Vec::new();
    let mut s = 0.0;
    loop {
        s += rate.sample(rng);
        if s >= t_end {
            break;
        }
        jump_times.push(s);
    }
    CoordinatePath {
        initial_direction,
        jump_times,
    }
}

/// Samples a path of the (product) Kac process on `[0, t_end]`.
pub fn sample_path(params: &KacParams, t_end: f64, seed: SeedSpec) -> Result<KacPath> {
    check_time(t_end, "t_end")?;
    let rate = Exp::new(params.a).map_err(|e| Error::Param(e.to_string()))?;
    let mut rng = seed.rng();
    let coords = (0..params.d)
        .map(|_| sample_coordinate_path(&rate, t_end, &mut rng))
        .collect();
    Ok(KacPath {
        params: *params,
        t_end,
        coords,
    })
}

/// Samples a path conditioned on its total jump count, by rejection.
///
/// Intended for tests and oracles; gives up after `max_tries` attempts.
pub fn sample_path_with_jumps(
    params: &KacParams,
    t_end: f64,
    jumps: usize,
    seed: SeedSpec,
    max_tries: usize,
) -> Result<KacPath> {
    for attempt in 0..max_tries as u64 {
        let path = sample_path(params, t_end, seed.child(attempt))?;
        if path.jump_count() == jumps {
            return Ok(path);
        }
    }
    Err(Error::Domain(format!(
        "no path with {jumps} jumps in {max_tries} attempts"
    )))
}

/// Draws one 1-D Kac state at time `s` with rate `a` and speed `c`.
///
/// Only the time spent moving right is tracked, so the cost is `O(a·s)`.
pub fn sample_coordinate<R: Rng + ?Sized>(a: f64, c: f64, s: f64, rng: &mut R) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    let mut right = rng.random::<bool>();
    let mut forward = 0.0;
    let mut prev = 0.0;
    loop {
        // Exp(a) by inversion; 1 − U is in (0, 1]
        let u: f64 = rng.random();
        let next = prev - (1.0 - u).ln() / a;
        if next >= s {
            if right {
                forward += s - prev;
            }
            break;
        }
        if right {
            forward += next - prev;
        }
        prev = next;
        right = !right;
    }
    let bound = c * s;
    (c * (2.0 * forward - s)).clamp(-bound, bound)
}

/// `n` i.i.d. draws of `X(t)`, one row per draw.
///
/// Row `i` uses the child stream `seed.child(i)`, so the output does not depend
/// on thread scheduling.
pub fn sample_state(params: &KacParams, t: f64, n: usize, seed: SeedSpec) -> Result<Array2<f64>> {
    check_time(t, "t")?;
    if n == 0 {
        return Err(Error::Param("sample count must be at least 1".into()));
    }
    let d = params.d;
    let (a, c) = (params.a, params.c);
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let mut rng = seed.child(i as u64).rng();
            (0..d).map(move |_| sample_coordinate(a, c, t, &mut rng)).collect::<Vec<_>>()
        })
        .collect();
    Array2::from_shape_vec((n, d), rows).map_err(|e| Error::Internal(e.to_string()))
}

/// One draw of the mean-reverting state `f(t)·x0 + K_{g(t)}`.
pub fn sample_mean_reverting(
    params: &KacParams,
    sched: &Schedule,
    x0: &[f64],
    t: f64,
    seed: SeedSpec,
) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("mean-reverting time must lie in [0, 1], got {t}")));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("data point has non-finite coordinates".into()));
    }
    let mut rng = seed.rng();
    Ok(mean_reverting_with(params, sched, x0, t, &mut rng))
}

pub(crate) fn mean_reverting_with<R: Rng + ?Sized>(
    params: &KacParams,
    sched: &Schedule,
    x0: &[f64],
    t: f64,
    rng: &mut R,
) -> Vec<f64> {
    let (f, s) = (sched.f(t), sched.g(t));
    x0.iter()
        .map(|&x| f * x + sample_coordinate(params.a, params.c, s, rng))
        .collect()
}
