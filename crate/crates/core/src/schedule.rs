//! Time warps of the mean-reverting process `M_t = f(t)·X₀ + K_{g(t)}`.

use std::fmt;

use crate::error::{Error, Result};
use crate::numerics::MonotoneCubic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScheduleKind {
    /// `f(t) = 1 − t`, `g(t) = t`.
    Linear,
    /// `f(t) = 1 − t`, `g(t) = t²`.
    Quadratic,
    /// Monotone cubic interpolation of user-supplied knots.
    Tabulated,
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleKind::Linear => "linear",
            ScheduleKind::Quadratic => "quadratic",
            ScheduleKind::Tabulated => "tabulated",
        })
    }
}

/// The pair `(f, g)` with derivatives.
///
/// Invariants: `f(0) = 1`, `f(1) = 0`, `g(0) = 0`, `g(1) = 1` exactly and `g`
/// nondecreasing on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    kind: ScheduleKind,
    table: Option<(MonotoneCubic, MonotoneCubic)>,
}

impl Schedule {
    pub fn linear() -> Self {
        Self {
            kind: ScheduleKind::Linear,
            table: None,
        }
    }

    pub fn quadratic() -> Self {
        Self {
            kind: ScheduleKind::Quadratic,
            table: None,
        }
    }

    /// Builds a tabulated schedule from knots `ts` spanning exactly `[0, 1]`.
    pub fn tabulated(ts: Vec<f64>, fs: Vec<f64>, gs: Vec<f64>) -> Result<Self> {
        if ts.first() != Some(&0.0) || ts.last() != Some(&1.0) {
            return Err(Error::Param("tabulated schedule knots must start at 0 and end at 1".into()));
        }
        if fs.first() != Some(&1.0) || fs.last() != Some(&0.0) {
            return Err(Error::Param(format!(
                "schedule must satisfy f(0) = 1 and f(1) = 0 (got f(0) = {:?}, f(1) = {:?})",
                fs.first(),
                fs.last()
            )));
        }
        if gs.first() != Some(&0.0) || gs.last() != Some(&1.0) {
            return Err(Error::Param(format!(
                "schedule must satisfy g(0) = 0 and g(1) = 1 (got g(0) = {:?}, g(1) = {:?})",
                gs.first(),
                gs.last()
            )));
        }
        if gs.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Param("schedule g must be nondecreasing".into()));
        }
        let f = MonotoneCubic::new(ts.clone(), fs)?;
        let g = MonotoneCubic::new(ts, gs)?;
        Ok(Self {
            kind: ScheduleKind::Tabulated,
            table: Some((f, g)),
        })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Knots `(t, f, g)` of a tabulated schedule.
    pub fn table(&self) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        self.table.as_ref().map(|(f, g)| {
            (f.knots().to_vec(), f.values().to_vec(), g.values().to_vec())
        })
    }

    pub fn f(&self, t: f64) -> f64 {
        match (&self.kind, &self.table) {
            (ScheduleKind::Tabulated, Some((f, _))) => f.eval(t),
            _ => 1.0 - t,
        }
    }

    pub fn g(&self, t: f64) -> f64 {
        match (&self.kind, &self.table) {
            (ScheduleKind::Linear, _) => t,
            (ScheduleKind::Quadratic, _) => t * t,
            (ScheduleKind::Tabulated, Some((_, g))) => g.eval(t),
            (ScheduleKind::Tabulated, None) => unreachable!("tabulated schedule without table"),
        }
    }

    pub fn df(&self, t: f64) -> f64 {
        match (&self.kind, &self.table) {
            (ScheduleKind::Tabulated, Some((f, _))) => f.derivative(t),
            _ => -1.0,
        }
    }

    pub fn dg(&self, t: f64) -> f64 {
        match (&self.kind, &self.table) {
            (ScheduleKind::Linear, _) => 1.0,
            (ScheduleKind::Quadratic, _) => 2.0 * t,
            (ScheduleKind::Tabulated, Some((_, g))) => g.derivative(t),
            (ScheduleKind::Tabulated, None) => unreachable!("tabulated schedule without table"),
        }
    }

    /// Largest `|f'|` and `g'` on `[s, t]`, from a fine grid plus the ends.
    pub fn max_rates(&self, s: f64, t: f64) -> (f64, f64) {
        let (lo, hi) = if s <= t { (s, t) } else { (t, s) };
        let mut df = 0.0f64;
        let mut dg = 0.0f64;
        for k in 0..=256 {
            let r = lo + (hi - lo) * k as f64 / 256.0;
            df = df.max(self.df(r).abs());
            dg = dg.max(self.dg(r));
        }
        (df, dg)
    }
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::linear()
    }
}
