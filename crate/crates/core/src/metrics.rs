//! Wasserstein distances, support audits and Lipschitz estimates.

use std::fmt;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kac::KacParams;
use crate::rng::SeedSpec;
use crate::schedule::Schedule;
use crate::velocity::{Labels, MarginalSampler, StateSampler, VelocityField};

/// Groups used by the jackknife standard errors.
pub const JACKKNIFE_GROUPS: usize = 10;

/// Relative slack applied to every stochastic inequality check.
pub const RELATIVE_SLACK: f64 = 0.1;

/// Standard errors added to every stochastic inequality check.
pub const SIGMA_SLACK: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    ExactLaw,
    Trajectory,
    Dataset,
}

/// Finite samples of a law in `ℝ^d`, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCloud {
    samples: Array2<f64>,
    time: Option<f64>,
    provenance: Provenance,
}

impl SampleCloud {
    pub fn new(samples: Array2<f64>, time: Option<f64>, provenance: Provenance) -> Result<Self> {
        if samples.nrows() < 2 || samples.ncols() == 0 {
            return Err(Error::Param(format!(
                "sample cloud needs at least two samples, got shape {:?}",
                samples.shape()
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::Param("sample cloud has non-finite entries".into()));
        }
        Ok(Self {
            samples,
            time,
            provenance,
        })
    }

    pub fn from_values(values: Vec<f64>, time: Option<f64>, provenance: Provenance) -> Result<Self> {
        let n = values.len();
        let samples = Array2::from_shape_vec((n, 1), values).map_err(|e| Error::Internal(e.to_string()))?;
        Self::new(samples, time, provenance)
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn time(&self) -> Option<f64> {
        self.time
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Exact W₂ for `d = 1`, sliced W₂ with `n_projections` directions otherwise.
    pub fn w2(&self, other: &SampleCloud, n_projections: usize, seed: SeedSpec) -> Result<W2Report> {
        if self.dim() != other.dim() {
            return Err(Error::Param(format!("clouds of dimension {} and {}", self.dim(), other.dim())));
        }
        if self.dim() == 1 {
            w2_1d(
                &self.samples.column(0).to_vec(),
                &other.samples.column(0).to_vec(),
                seed,
            )
        } else {
            w2_sliced(self.samples.view(), other.samples.view(), n_projections, seed)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum W2Method {
    /// Sorted (quantile) coupling of two 1-D samples.
    Exact1d,
    /// Average of squared 1-D distances over random projections.
    Sliced,
    /// Exhaustive search over assignments.
    Assignment,
    /// Root of the summed per-coordinate squared 1-D distances; exact for
    /// product laws.
    Product,
}

impl fmt::Display for W2Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            W2Method::Exact1d => "exact-1d",
            W2Method::Sliced => "sliced",
            W2Method::Assignment => "assignment",
            W2Method::Product => "product",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct W2Report {
    pub value: f64,
    pub method: W2Method,
    pub n_projections: Option<usize>,
    /// Grouped jackknife standard error (zero for exhaustive search).
    pub stderr: f64,
}

fn check_finite(name: &str, v: &[f64]) -> Result<()> {
    if v.len() < 2 {
        return Err(Error::Param(format!("{name} needs at least two samples")));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Param(format!("{name} has non-finite samples")));
    }
    Ok(())
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// Squared W₂ between equal-size 1-D samples.
fn w2_sq_equal(a: &[f64], b: &[f64]) -> f64 {
    let sa = sorted(a.to_vec());
    let sb = sorted(b.to_vec());
    sa.iter().zip(&sb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / sa.len() as f64
}

/// Random partition of `0..n` into `groups` near-equal groups.
fn partition(n: usize, groups: usize, seed: SeedSpec) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed.rng());
    let mut out = vec![Vec::new(); groups];
    for (k, i) in idx.into_iter().enumerate() {
        out[k % groups].push(i);
    }
    out
}

/// Grouped delete-one-group jackknife standard error of `stat`, which receives
/// a keep-mask over `0..n`.
fn jackknife<F: Fn(&[bool]) -> f64>(n: usize, seed: SeedSpec, stat: F) -> f64 {
    let groups = JACKKNIFE_GROUPS.min(n / 2).max(2);
    let parts = partition(n, groups, seed);
    let mut keep = vec![true; n];
    let mut thetas = Vec::with_capacity(groups);
    for part in &parts {
        part.iter().for_each(|&i| keep[i] = false);
        thetas.push(stat(&keep));
        part.iter().for_each(|&i| keep[i] = true);
    }
    let g = groups as f64;
    let mean = thetas.iter().sum::<f64>() / g;
    ((g - 1.0) / g * thetas.iter().map(|t| (t - mean).powi(2)).sum::<f64>()).sqrt()
}

fn kept(v: &[f64], keep: &[bool]) -> Vec<f64> {
    v.iter().zip(keep).filter(|(_, &k)| k).map(|(x, _)| *x).collect()
}

/// Seeded subsample without replacement down to `n`.
fn subsample(v: &[f64], n: usize, seed: SeedSpec) -> Vec<f64> {
    if v.len() == n {
        return v.to_vec();
    }
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.shuffle(&mut seed.rng());
    idx.truncate(n);
    idx.sort_unstable();
    idx.into_iter().map(|i| v[i]).collect()
}

fn equalise(a: &[f64], b: &[f64], seed: SeedSpec) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = a.len().min(b.len());
    let a = subsample(a, n, seed.derive("subsample-a"));
    let b = subsample(b, n, seed.derive("subsample-b"));
    if a.len() != b.len() {
        return Err(Error::Internal("sample sizes differ after subsampling".into()));
    }
    Ok((a, b))
}

/// Exact empirical W₂ of two 1-D samples via the sorted coupling. The larger
/// sample is subsampled (seeded) to the size of the smaller.
pub fn w2_1d(a: &[f64], b: &[f64], seed: SeedSpec) -> Result<W2Report> {
    check_finite("first sample", a)?;
    check_finite("second sample", b)?;
    let (a, b) = equalise(a, b, seed)?;
    let value = w2_sq_equal(&a, &b).sqrt();
    let stderr = jackknife(a.len(), seed.derive("jackknife"), |keep| {
        w2_sq_equal(&kept(&a, keep), &kept(&b, keep)).sqrt()
    });
    Ok(W2Report {
        value,
        method: W2Method::Exact1d,
        n_projections: None,
        stderr,
    })
}

/// Squared W₂ between the empirical law of `samples` and the discrete law
/// with `points` and `weights`, by integrating the quantile difference.
pub fn w2_sq_to_discrete_1d(samples: &[f64], points: &[f64], weights: &[f64]) -> f64 {
    let sa = sorted(samples.to_vec());
    let mut pb: Vec<(f64, f64)> = points.iter().copied().zip(weights.iter().copied()).collect();
    pb.sort_by(|x, y| x.0.total_cmp(&y.0));
    let n = sa.len() as f64;
    let (mut i, mut j) = (0, 0);
    let (mut left_a, mut left_b) = (1.0 / n, pb[0].1);
    let mut acc = 0.0;
    while i < sa.len() && j < pb.len() {
        let step = left_a.min(left_b);
        acc += step * (sa[i] - pb[j].0).powi(2);
        left_a -= step;
        left_b -= step;
        if left_a <= 1e-15 {
            i += 1;
            left_a = 1.0 / n;
        }
        if left_b <= 1e-15 {
            j += 1;
            if j < pb.len() {
                left_b = pb[j].1;
            }
        }
    }
    acc
}

fn random_directions(d: usize, count: usize, seed: SeedSpec) -> Vec<Vec<f64>> {
    let mut rng = seed.rng();
    (0..count)
        .map(|_| loop {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect()
}

fn project(x: ArrayView2<'_, f64>, dir: &[f64]) -> Vec<f64> {
    x.outer_iter().map(|r| r.iter().zip(dir).map(|(a, b)| a * b).sum()).collect()
}

/// Projection directions for dataset comparisons: the axis for `d = 1`,
/// random unit vectors otherwise.
fn dataset_directions(d: usize, n_projections: usize, seed: SeedSpec) -> (Vec<Vec<f64>>, W2Method, Option<usize>) {
    if d == 1 {
        (vec![vec![1.0]], W2Method::Exact1d, None)
    } else {
        let k = n_projections.max(1);
        (random_directions(d, k, seed.derive("directions")), W2Method::Sliced, Some(k))
    }
}

/// W₂ of the (optionally masked) samples to the dataset, averaged in square
/// over the projection directions.
struct DatasetW2<'a> {
    proj_s: Vec<Vec<f64>>,
    proj_d: Vec<Vec<f64>>,
    weights: &'a [f64],
}

impl<'a> DatasetW2<'a> {
    fn new(samples: ArrayView2<'_, f64>, data: &'a Dataset, dirs: &[Vec<f64>]) -> Result<Self> {
        if samples.ncols() != data.dim() {
            return Err(Error::Param(format!(
                "samples have {} columns, dataset has {}",
                samples.ncols(),
                data.dim()
            )));
        }
        check_finite("samples", &samples.iter().copied().collect::<Vec<_>>())?;
        Ok(Self {
            proj_s: dirs.iter().map(|u| project(samples, u)).collect(),
            proj_d: dirs.iter().map(|u| project(data.points().view(), u)).collect(),
            weights: data.weights(),
        })
    }

    fn eval(&self, keep: Option<&[bool]>) -> f64 {
        let total: f64 = self
            .proj_s
            .iter()
            .zip(&self.proj_d)
            .map(|(ps, pd)| {
                let s = match keep {
                    Some(k) => kept(ps, k),
                    None => ps.clone(),
                };
                w2_sq_to_discrete_1d(&s, pd, self.weights)
            })
            .sum();
        (total / self.proj_s.len() as f64).sqrt()
    }
}

/// W₂ between generated samples and a dataset's (weighted) empirical law:
/// exact for `d = 1`, sliced over `n_projections` directions otherwise.
pub fn w2_to_dataset(samples: ArrayView2<'_, f64>, data: &Dataset, n_projections: usize, seed: SeedSpec) -> Result<W2Report> {
    let (dirs, method, n_proj) = dataset_directions(data.dim(), n_projections, seed);
    let stat = DatasetW2::new(samples, data, &dirs)?;
    let value = stat.eval(None);
    let stderr = jackknife(samples.nrows(), seed.derive("jackknife"), |k| stat.eval(Some(k)));
    Ok(W2Report {
        value,
        method,
        n_projections: n_proj,
        stderr,
    })
}

/// Two row-paired sample sets compared against the same dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedW2 {
    pub first: W2Report,
    pub second: W2Report,
    /// `first − second`.
    pub difference: f64,
    /// Jackknife standard error of the difference, deleting the same rows
    /// from both sets.
    pub stderr: f64,
}

/// W₂-to-data of two sample sets whose rows are paired (for example two
/// samplers started from the same noise), with a paired standard error for
/// their difference.
pub fn w2_to_dataset_paired(
    first: ArrayView2<'_, f64>,
    second: ArrayView2<'_, f64>,
    data: &Dataset,
    n_projections: usize,
    seed: SeedSpec,
) -> Result<PairedW2> {
    if first.nrows() != second.nrows() {
        return Err(Error::Param(format!(
            "paired sets need equal sizes, got {} and {}",
            first.nrows(),
            second.nrows()
        )));
    }
    let (dirs, method, n_proj) = dataset_directions(data.dim(), n_projections, seed);
    let a = DatasetW2::new(first, data, &dirs)?;
    let b = DatasetW2::new(second, data, &dirs)?;
    let js = seed.derive("jackknife");
    let report = |stat: &DatasetW2<'_>| W2Report {
        value: stat.eval(None),
        method,
        n_projections: n_proj,
        stderr: jackknife(first.nrows(), js, |k| stat.eval(Some(k))),
    };
    let (ra, rb) = (report(&a), report(&b));
    let stderr = jackknife(first.nrows(), js, |k| a.eval(Some(k)) - b.eval(Some(k)));
    Ok(PairedW2 {
        first: ra,
        second: rb,
        difference: ra.value - rb.value,
        stderr,
    })
}

/// Sliced W₂ over `n_projections` seeded Gaussian-normalised directions.
pub fn w2_sliced(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, n_projections: usize, seed: SeedSpec) -> Result<W2Report> {
    let d = a.ncols();
    if d < 2 || b.ncols() != d {
        return Err(Error::Param(format!(
            "sliced W2 needs two clouds of equal dimension >= 2 (got {} and {})",
            d,
            b.ncols()
        )));
    }
    if n_projections == 0 {
        return Err(Error::Param("at least one projection is required".into()));
    }
    let dirs = random_directions(d, n_projections, seed.derive("directions"));
    let mut pa = Vec::with_capacity(n_projections);
    let mut pb = Vec::with_capacity(n_projections);
    for u in &dirs {
        let (x, y) = equalise(&project(a, u), &project(b, u), seed)?;
        check_finite("first cloud", &x)?;
        check_finite("second cloud", &y)?;
        pa.push(x);
        pb.push(y);
    }
    let stat = |keep: Option<&[bool]>| -> f64 {
        let total: f64 = pa
            .iter()
            .zip(&pb)
            .map(|(x, y)| match keep {
                Some(k) => w2_sq_equal(&kept(x, k), &kept(y, k)),
                None => w2_sq_equal(x, y),
            })
            .sum();
        (total / n_projections as f64).sqrt()
    };
    let value = stat(None);
    let stderr = jackknife(pa[0].len(), seed.derive("jackknife"), |k| stat(Some(k)));
    Ok(W2Report {
        value,
        method: W2Method::Sliced,
        n_projections: Some(n_projections),
        stderr,
    })
}

/// `(Σⱼ W₂²(aⱼ, bⱼ))^{1/2}` over coordinates, which is the exact W₂ when both
/// laws have independent coordinates.
pub fn w2_product(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, seed: SeedSpec) -> Result<W2Report> {
    if a.ncols() != b.ncols() {
        return Err(Error::Param("clouds differ in dimension".into()));
    }
    let mut cols = Vec::with_capacity(a.ncols());
    for j in 0..a.ncols() {
        let (x, y) = equalise(&a.column(j).to_vec(), &b.column(j).to_vec(), seed.child(j as u64))?;
        check_finite("first cloud", &x)?;
        check_finite("second cloud", &y)?;
        cols.push((x, y));
    }
    let stat = |keep: Option<&[bool]>| -> f64 {
        cols.iter()
            .map(|(x, y)| match keep {
                Some(k) => w2_sq_equal(&kept(x, k), &kept(y, k)),
                None => w2_sq_equal(x, y),
            })
            .sum::<f64>()
            .sqrt()
    };
    let value = stat(None);
    let stderr = jackknife(cols[0].0.len(), seed.derive("jackknife"), |k| stat(Some(k)));
    Ok(W2Report {
        value,
        method: W2Method::Product,
        n_projections: None,
        stderr,
    })
}

/// Exact W₂ between two uniform empirical laws with the same number
/// `n ≤ 8` of atoms, by searching every assignment.
pub fn w2_assignment(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<f64> {
    let n = a.nrows();
    if n != b.nrows() || n == 0 || n > 8 || a.ncols() != b.ncols() {
        return Err(Error::Param(format!(
            "assignment search needs equal sizes in 1..=8 (got {} and {})",
            n,
            b.nrows()
        )));
    }
    let cost: Vec<Vec<f64>> = a
        .outer_iter()
        .map(|x| {
            b.outer_iter()
                .map(|y| x.iter().zip(y.iter()).map(|(p, q)| (p - q).powi(2)).sum())
                .collect()
        })
        .collect();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &cost, &mut best);
    Ok((best / n as f64).sqrt())
}

fn permute(perm: &mut Vec<usize>, k: usize, cost: &[Vec<f64>], best: &mut f64) {
    if k == perm.len() {
        let total: f64 = perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        if total < *best {
            *best = total;
        }
        return;
    }
    for i in k..perm.len() {
        perm.swap(k, i);
        permute(perm, k + 1, cost, best);
        perm.swap(k, i);
    }
}

/// One `(s, t)` comparison of [`check_w2_lipschitz_in_time`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimePairCheck {
    pub s: f64,
    pub t: f64,
    pub w2: f64,
    pub stderr: f64,
    /// `c_eff·√d·|t − s|`.
    pub bound: f64,
    /// `w2 − (bound·(1 + slack) + 3σ)`; negative means the pair passes.
    pub slack: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeLipschitzReport {
    pub pairs: Vec<TimePairCheck>,
    pub max_slack: f64,
    pub passed: bool,
    pub method: W2Method,
}

/// Effective speed `sup_{[s,t]} |f′|·max‖X₀‖∞ + g′·c` of the mean-reverting flow.
pub fn effective_speed(params: &KacParams, sched: &Schedule, data: &Dataset, s: f64, t: f64) -> f64 {
    let (df, dg) = sched.max_rates(s, t);
    df * data.max_abs() + dg * params.c()
}

/// Checks `W₂(μₛ, μₜ) ≤ c_eff·√d·|t − s|` on every pair of `times`, with `n`
/// exact samples per time. `c_eff_scale` multiplies the bound (1 for the
/// real check; below 1 for negative controls).
pub fn check_w2_lipschitz_in_time(
    params: &KacParams,
    sched: &Schedule,
    data: &Dataset,
    times: &[f64],
    n: usize,
    seed: SeedSpec,
    c_eff_scale: f64,
) -> Result<TimeLipschitzReport> {
    let sampler = MarginalSampler::new(*params, sched.clone(), data.clone())?;
    let d = data.dim();
    let clouds = times
        .iter()
        .enumerate()
        .map(|(k, &t)| sampler.sample(t, n, seed.child(k as u64)).map(|b| b.states))
        .collect::<Result<Vec<_>>>()?;
    let method = if d == 1 { W2Method::Exact1d } else { W2Method::Product };
    let mut pairs = Vec::new();
    for i in 0..times.len() {
        for j in i + 1..times.len() {
            let (s, t) = (times[i], times[j]);
            let (w2, stderr) = if s == t {
                (0.0, 0.0)
            } else {
                let pair_seed = seed.derive("pairs").child((i * times.len() + j) as u64);
                let r = if d == 1 {
                    w2_1d(
                        &clouds[i].column(0).to_vec(),
                        &clouds[j].column(0).to_vec(),
                        pair_seed,
                    )?
                } else {
                    w2_product(clouds[i].view(), clouds[j].view(), pair_seed)?
                };
                (r.value, r.stderr)
            };
            let bound = c_eff_scale * effective_speed(params, sched, data, s, t) * (d as f64).sqrt() * (t - s).abs();
            let slack = w2 - (bound * (1.0 + RELATIVE_SLACK) + SIGMA_SLACK * stderr);
            pairs.push(TimePairCheck {
                s,
                t,
                w2,
                stderr,
                bound,
                slack,
                passed: slack <= 0.0,
            });
        }
    }
    let max_slack = pairs.iter().map(|p| p.slack).fold(f64::NEG_INFINITY, f64::max);
    Ok(TimeLipschitzReport {
        passed: pairs.iter().all(|p| p.passed),
        max_slack,
        pairs,
        method,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeAudit {
    pub checked: usize,
    pub violations: usize,
    pub max_excess: f64,
}

/// Counts states outside the time-`t` support of the mean-reverting law by
/// more than `1e-9·c` (ℓ∞ distance to the nearest component cone).
pub fn cone_audit<'a, I>(clouds: I, data: &Dataset, params: &KacParams, sched: &Schedule) -> ConeAudit
where
    I: IntoIterator<Item = (f64, ArrayView2<'a, f64>)>,
{
    let tol = 1e-9 * params.c();
    let mut audit = ConeAudit {
        checked: 0,
        violations: 0,
        max_excess: 0.0,
    };
    for (t, states) in clouds {
        let f = sched.f(t);
        let edge = params.c() * sched.g(t);
        for x in states.outer_iter() {
            let excess = support_distance(x, data, f, edge);
            audit.checked += 1;
            audit.max_excess = audit.max_excess.max(excess);
            if excess > tol {
                audit.violations += 1;
            }
        }
    }
    audit
}

fn support_distance(x: ArrayView1<'_, f64>, data: &Dataset, f: f64, edge: f64) -> f64 {
    data.points()
        .outer_iter()
        .map(|x0| {
            x.iter()
                .zip(x0.iter())
                .map(|(xi, x0i)| ((xi - f * x0i).abs() - edge).max(0.0))
                .fold(0.0, f64::max)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Directions per point used by [`estimate_lipschitz`].
pub const LIPSCHITZ_DIRECTIONS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzEstimate {
    /// Largest central-difference quotient over finite evaluations.
    pub value: f64,
    pub h: f64,
    /// Tube rows where an evaluation failed or was not finite.
    pub flagged: Vec<usize>,
}

/// Spatial Lipschitz estimate of `field(t, ·)` over the rows of `tube`:
/// `max ‖v(x + h·u) − v(x − h·u)‖ / 2h` over random unit directions `u`.
pub fn estimate_lipschitz(
    field: &dyn VelocityField,
    tube: ArrayView2<'_, f64>,
    t: f64,
    h: f64,
    labels: Labels<'_>,
    seed: SeedSpec,
) -> Result<LipschitzEstimate> {
    let n = tube.nrows();
    let d = tube.ncols();
    if n == 0 || h.is_nan() || h <= 0.0 || d != field.dim() {
        return Err(Error::Param(format!(
            "Lipschitz estimate needs a nonempty tube of dimension {} and h > 0",
            field.dim()
        )));
    }
    let k = LIPSCHITZ_DIRECTIONS;
    let dirs = random_directions(d, k, seed);
    let mut plus = Array2::zeros((n * k, d));
    let mut minus = Array2::zeros((n * k, d));
    let mut row_labels = Vec::with_capacity(n * k);
    for (i, x) in tube.outer_iter().enumerate() {
        for (m, u) in dirs.iter().enumerate() {
            let r = i * k + m;
            for j in 0..d {
                plus[[r, j]] = x[j] + h * u[j];
                minus[[r, j]] = x[j] - h * u[j];
            }
            row_labels.push(labels.get(i));
        }
    }
    let eval = |xs: &Array2<f64>| -> (Array2<f64>, Vec<bool>) {
        let mut out = Array2::zeros(xs.raw_dim());
        if field
            .eval_batch(t, xs.view(), Labels::PerRow(&row_labels), out.view_mut())
            .is_ok()
        {
            return (out, vec![true; xs.nrows()]);
        }
        let mut ok = vec![true; xs.nrows()];
        for (r, mut o) in out.outer_iter_mut().enumerate() {
            let x = xs.row(r).to_vec();
            let mut buf = vec![0.0; d];
            ok[r] = field.eval_point(t, &x, row_labels[r], &mut buf).is_ok();
            o.assign(&ArrayView1::from(&buf));
        }
        (out, ok)
    };
    let (vp, okp) = eval(&plus);
    let (vm, okm) = eval(&minus);
    let mut value = 0.0f64;
    let mut flagged = Vec::new();
    for i in 0..n {
        let mut bad = false;
        for m in 0..k {
            let r = i * k + m;
            let diff = vp.row(r).iter().zip(vm.row(r).iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
                / (2.0 * h);
            if !(okp[r] && okm[r]) || !diff.is_finite() {
                bad = true;
            } else {
                value = value.max(diff);
            }
        }
        if bad {
            flagged.push(i);
        }
    }
    Ok(LipschitzEstimate { value, h, flagged })
}

/// Row means of a cloud (handy for reports).
pub fn mean_row(x: ArrayView2<'_, f64>) -> Vec<f64> {
    x.mean_axis(Axis(0)).map(|m| m.to_vec()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::velocity::FnField;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn identical_and_point_masses() {
        let a = vec![0.3, -1.0, 2.0, 0.0];
        assert_eq!(w2_1d(&a, &a, SeedSpec::default()).unwrap().value, 0.0);
        let p = vec![1.5; 10];
        let q = vec![-0.5; 10];
        assert_eq!(w2_1d(&p, &q, SeedSpec::default()).unwrap().value, 2.0);
    }

    #[test]
    fn unequal_sizes_are_subsampled() {
        let a: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let r = w2_1d(&a, &b, SeedSpec::new(3, 0)).unwrap();
        assert!(r.value.is_finite() && r.value > 0.0);
        assert_eq!(r, w2_1d(&a, &b, SeedSpec::new(3, 0)).unwrap());
    }

    #[test]
    fn discrete_target_matches_sorted_coupling() {
        let s = vec![0.1, -0.4, 2.0, 0.7];
        let pts = vec![0.0, 1.0, -1.0, 3.0];
        let w = vec![0.25; 4];
        let a = w2_sq_to_discrete_1d(&s, &pts, &w);
        let b = w2_sq_equal(&s, &pts);
        assert!((a - b).abs() < 1e-14);
        // unequal weights: half the mass at 0, half at 1 against samples {0, 1}
        assert!(w2_sq_to_discrete_1d(&[0.0, 1.0], &[0.0, 1.0], &[0.5, 0.5]).abs() < 1e-15);
        let v = w2_sq_to_discrete_1d(&[0.0, 0.0, 0.0, 1.0], &[0.0, 1.0], &[0.5, 0.5]);
        assert!((v - 0.25).abs() < 1e-14);
    }

    #[test]
    fn assignment_on_tiny_sets() {
        let a = array![[0.0, 0.0], [1.0, 0.0]];
        let b = array![[1.0, 0.0], [0.0, 0.0]];
        assert_eq!(w2_assignment(a.view(), b.view()).unwrap(), 0.0);
        assert!(w2_assignment(Array2::zeros((9, 1)).view(), Array2::zeros((9, 1)).view()).is_err());
    }

    #[test]
    fn sliced_identical_is_zero() {
        let a = array![[0.0, 1.0], [1.0, 2.0], [3.0, -1.0]];
        let r = w2_sliced(a.view(), a.view(), 16, SeedSpec::default()).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(w2_sliced(array![[0.0], [1.0]].view(), array![[0.0], [1.0]].view(), 4, SeedSpec::default()).is_err());
    }

    #[test]
    fn lipschitz_of_linear_and_constant_fields() {
        let tube = array![[0.1, -0.3], [1.0, 2.0], [-2.0, 0.5]];
        let lin = FnField::new(2, |_, x: &[f64], out: &mut [f64]| {
            out[0] = -2.5 * x[0];
            out[1] = -2.5 * x[1];
        });
        let est = estimate_lipschitz(&lin, tube.view(), 0.5, 1e-4, Labels::Unconditional, SeedSpec::default()).unwrap();
        assert!((est.value - 2.5).abs() < 1e-6);
        let c = FnField::new(2, |_, _, out: &mut [f64]| out.fill(1.0));
        let est = estimate_lipschitz(&c, tube.view(), 0.5, 1e-4, Labels::Unconditional, SeedSpec::default()).unwrap();
        assert_eq!(est.value, 0.0);
        assert!(est.flagged.is_empty());
    }

    #[test]
    fn failed_evaluations_are_flagged() {
        let f = FnField::new(1, |_, x: &[f64], out: &mut [f64]| out[0] = if x[0] > 1.0 { f64::NAN } else { x[0] });
        let tube = array![[0.0], [1.0]];
        let est = estimate_lipschitz(&f, tube.view(), 0.5, 1e-3, Labels::Unconditional, SeedSpec::default()).unwrap();
        assert_eq!(est.flagged, vec![1]);
        assert!((est.value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cone_audit_counts_excess() {
        let data = Dataset::new(array![[0.0]], None).unwrap();
        let p = KacParams::new(1.0, 1.0, 1).unwrap();
        let s = Schedule::linear();
        let inside = array![[0.5], [-0.5], [0.0]];
        let outside = array![[0.6]];
        let a = cone_audit([(0.5, inside.view()), (0.5, outside.view())], &data, &p, &s);
        assert_eq!((a.checked, a.violations), (4, 1));
        assert!((a.max_excess - 0.1).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn sorted_coupling_is_optimal(a in prop::collection::vec(-5.0f64..5.0, 2..8), shift in -3.0f64..3.0, seed in 0u64..1000) {
            let n = a.len();
            let mut rng = SeedSpec::new(seed, 0).rng();
            let b: Vec<f64> = a.iter().map(|x| {
                let u: f64 = rand::Rng::random(&mut rng);
                x * 0.5 + shift + u
            }).collect();
            let exact = w2_1d(&a, &b, SeedSpec::default()).unwrap().value;
            let am = Array2::from_shape_vec((n, 1), a.clone()).unwrap();
            let bm = Array2::from_shape_vec((n, 1), b).unwrap();
            let brute = w2_assignment(am.view(), bm.view()).unwrap();
            prop_assert!((exact - brute).abs() < 1e-12);
        }

        #[test]
        fn triangle_inequality(a in prop::collection::vec(-5.0f64..5.0, 20), b in prop::collection::vec(-5.0f64..5.0, 20), c in prop::collection::vec(-5.0f64..5.0, 20)) {
            let s = SeedSpec::default();
            let ab = w2_1d(&a, &b, s).unwrap().value;
            let bc = w2_1d(&b, &c, s).unwrap().value;
            let ac = w2_1d(&a, &c, s).unwrap().value;
            prop_assert!(ac <= ab + bc + 1e-12);
        }
    }
}
