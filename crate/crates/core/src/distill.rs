//! Endpoint distillation of few-step Euler students.
//!
//! A frozen teacher is integrated backward over one student segment in `N`
//! substeps; the student is trained so that a single Euler step over the same
//! segment lands on the teacher's endpoint.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use ndarray::{s, Array2, ArrayView2, ArrayViewMut2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::integrate::{integrate, IntegratorSpec, Method};
use crate::metrics::{estimate_lipschitz, w2_1d, RELATIVE_SLACK, SIGMA_SLACK};
use crate::rng::SeedSpec;
use crate::velocity::mlp::Optimizer;
use crate::velocity::{check_batch_shape, FieldKind, Labels, Mlp, OptimizerKind, StateSampler, VelocityField};

/// Window of the moving average used to compare initial and final loss.
pub const LOSS_WINDOW: usize = 50;

/// Absolute allowance for rounding in the stability comparison.
const ROUNDING_FLOOR: f64 = 1e-12;

/// Where the training states of a stage come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateSource {
    /// Exact draws of the time-`t` marginal (independent of the teacher).
    ExactMarginal,
    /// Time-1 draws pushed to `t` by the teacher's own sampler.
    TeacherRollout,
}

impl fmt::Display for StateSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StateSource::ExactMarginal => "exact-marginal",
            StateSource::TeacherRollout => "teacher-rollout",
        })
    }
}

impl FromStr for StateSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact-marginal" => Ok(StateSource::ExactMarginal),
            "teacher-rollout" => Ok(StateSource::TeacherRollout),
            other => Err(Error::Config(format!("unknown state source '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillConfig {
    /// Teacher substeps per student segment (`N ≥ 2`).
    pub teacher_steps: usize,
    /// Student steps `M` on `[0, 1]`.
    pub student_steps: usize,
    /// Stepper used for the stage-1 teacher.
    pub teacher_method: Method,
    pub lr: f64,
    pub batch_size: usize,
    pub max_iter: usize,
    pub optimizer: OptimizerKind,
    /// Decreasing step counts `S₁ > S₂ > …` for multi-stage runs.
    pub stage_schedule: Vec<usize>,
    pub state_source: StateSource,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            teacher_steps: 5,
            student_steps: 4,
            teacher_method: Method::Euler,
            lr: 1e-3,
            batch_size: 256,
            max_iter: 1000,
            optimizer: OptimizerKind::Adam,
            stage_schedule: vec![20, 4],
            state_source: StateSource::ExactMarginal,
        }
    }
}

impl DistillConfig {
    /// Segment length `Δt = 1/M`.
    pub fn dt(&self) -> f64 {
        1.0 / self.student_steps as f64
    }

    /// Checks the single-stage settings.
    pub fn validate(&self) -> Result<()> {
        if self.teacher_steps < 2 {
            return Err(Error::Config(format!(
                "teacher substeps must be at least 2, got {}",
                self.teacher_steps
            )));
        }
        if self.student_steps == 0 {
            return Err(Error::Config("student steps must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.batch_size == 0 {
            return Err(Error::Config("learning rate and batch size must be positive".into()));
        }
        Ok(())
    }

    /// Config of the stage that distills `from` steps into `to` steps.
    pub fn for_stage(&self, from: usize, to: usize, method: Method) -> Self {
        Self {
            teacher_steps: from / to,
            student_steps: to,
            teacher_method: method,
            stage_schedule: vec![from, to],
            ..self.clone()
        }
    }
}

/// Checks that a schedule is strictly decreasing with each entry dividing
/// its predecessor.
pub fn validate_schedule(schedule: &[usize]) -> Result<()> {
    if schedule.is_empty() || schedule.contains(&0) {
        return Err(Error::Config(format!("stage schedule {schedule:?} must be nonempty and positive")));
    }
    for w in schedule.windows(2) {
        if w[1] >= w[0] {
            return Err(Error::Config(format!("stage schedule {schedule:?} is not strictly decreasing")));
        }
        if w[0] % w[1] != 0 {
            return Err(Error::Config(format!(
                "stage schedule {schedule:?}: {} does not divide {}",
                w[1], w[0]
            )));
        }
    }
    Ok(())
}

/// Integrates `teacher` backward from `t` to `t − Δt` in `n` substeps.
pub fn teacher_endpoint(
    teacher: &dyn VelocityField,
    t: f64,
    x: ArrayView2<'_, f64>,
    labels: Labels<'_>,
    n: usize,
    dt: f64,
    method: Method,
) -> Result<Array2<f64>> {
    if dt.is_nan() || dt <= 0.0 || t - dt < -1e-12 || t > 1.0 + 1e-12 {
        return Err(Error::Domain(format!("segment [{}, {t}] is not inside [0, 1]", t - dt)));
    }
    let end = (t - dt).max(0.0);
    let traj = integrate(teacher, IntegratorSpec::new(method, n)?, t, end, x, labels, false)?;
    Ok(traj.states.into_iter().last().expect("terminal state"))
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub student: Mlp,
    pub losses: Vec<f64>,
    pub elapsed: Duration,
}

/// Mean of the first and of the last `LOSS_WINDOW` losses.
pub fn smoothed_ends(losses: &[f64]) -> Option<(f64, f64)> {
    if losses.is_empty() {
        return None;
    }
    let w = LOSS_WINDOW.min(losses.len());
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Some((mean(&losses[..w]), mean(&losses[losses.len() - w..])))
}

/// Training states at grid node `k` of an `m`-step grid.
fn draw_states(
    teacher: &dyn VelocityField,
    cfg: &DistillConfig,
    sampler: &dyn StateSampler,
    k: usize,
    count: usize,
    seed: SeedSpec,
) -> Result<(Array2<f64>, Vec<Option<usize>>)> {
    let m = cfg.student_steps;
    let t = k as f64 / m as f64;
    match cfg.state_source {
        StateSource::ExactMarginal => {
            let b = sampler.sample(t, count, seed)?;
            Ok((b.states, b.labels))
        }
        StateSource::TeacherRollout => {
            let b = sampler.sample(1.0, count, seed)?;
            if k == m {
                return Ok((b.states, b.labels));
            }
            let spec = IntegratorSpec::new(cfg.teacher_method, (m - k) * cfg.teacher_steps)?;
            let traj = integrate(teacher, spec, 1.0, t, b.states.view(), Labels::PerRow(&b.labels), false)?;
            Ok((traj.states.into_iter().last().expect("terminal state"), b.labels))
        }
    }
}

/// Trains `student` to reproduce `teacher`'s segment endpoints with one Euler
/// step per segment. Iteration `i` uses the stream `seed.child(i)`.
pub fn distill_stage(
    teacher: &dyn VelocityField,
    student: Mlp,
    cfg: &DistillConfig,
    sampler: &dyn StateSampler,
    seed: SeedSpec,
) -> Result<StageOutcome> {
    cfg.validate()?;
    let d = sampler.dim();
    if teacher.dim() != d || VelocityField::dim(&student) != d {
        return Err(Error::Param(format!(
            "dimension mismatch: teacher {}, student {}, sampler {d}",
            teacher.dim(),
            VelocityField::dim(&student)
        )));
    }
    let start = Instant::now();
    let mut student = student;
    let mut losses = Vec::with_capacity(cfg.max_iter);
    if cfg.max_iter == 0 {
        return Ok(StageOutcome {
            student,
            losses,
            elapsed: start.elapsed(),
        });
    }
    let m = cfg.student_steps;
    let dt = cfg.dt();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, student.param_count())?;
    for it in 0..cfg.max_iter {
        let it_seed = seed.child(it as u64);
        let mut counts = vec![0usize; m + 1];
        let mut rng = it_seed.derive("nodes").rng();
        for _ in 0..cfg.batch_size {
            counts[rng.random_range(1..=m)] += 1;
        }
        let mut xs = Array2::zeros((cfg.batch_size, d));
        let mut targets = Array2::zeros((cfg.batch_size, d));
        let mut ts = Vec::with_capacity(cfg.batch_size);
        let mut labels = Vec::with_capacity(cfg.batch_size);
        let mut row = 0;
        for (k, &count) in counts.iter().enumerate().skip(1) {
            if count == 0 {
                continue;
            }
            let t = k as f64 / m as f64;
            let (x, y) = draw_states(teacher, cfg, sampler, k, count, it_seed.child(k as u64))?;
            let star = teacher_endpoint(teacher, t, x.view(), Labels::PerRow(&y), cfg.teacher_steps, dt, cfg.teacher_method)?;
            let block = s![row..row + count, ..];
            xs.slice_mut(block).assign(&x);
            targets.slice_mut(block).assign(&((&x - &star) / dt));
            ts.extend(std::iter::repeat_n(t, count));
            labels.extend(y);
            row += count;
        }
        let input = student.encode(&ts, xs.view(), Labels::PerRow(&labels))?;
        let (loss, grad) = student.loss_and_grad(input, targets.view(), dt * dt)?;
        losses.push(loss);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                iteration: it,
                trace: losses,
            });
        }
        opt.update(student.params_mut(), &grad);
    }
    Ok(StageOutcome {
        student,
        losses,
        elapsed: start.elapsed(),
    })
}

/// One row of a multi-stage run.
#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub from_steps: usize,
    pub to_steps: usize,
    /// Teacher substeps per student segment, `Sᵢ / Sᵢ₊₁`.
    pub teacher_substeps: usize,
    pub teacher_method: Method,
    pub iterations: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub elapsed: Duration,
    pub teacher_hash: String,
    pub student_hash: String,
}

#[derive(Debug, Clone)]
pub struct MultistageOutcome {
    /// Final student, or the teacher itself for a single-entry schedule.
    pub student: Mlp,
    /// Student after every stage, in order.
    pub students: Vec<Mlp>,
    pub reports: Vec<StageReport>,
}

/// Runs the stages of `cfg.stage_schedule` in order. Stage 1 uses `teacher`
/// with `cfg.teacher_method`; each later stage uses a frozen copy of the
/// previous student stepped with Euler, which is how that student samples.
///
/// A stage error aborts the run; the reports of completed stages are kept in
/// the error message.
pub fn distill_multistage(teacher: &Mlp, cfg: &DistillConfig, sampler: &dyn StateSampler, seed: SeedSpec) -> Result<MultistageOutcome> {
    validate_schedule(&cfg.stage_schedule)?;
    let mut current_teacher = teacher.clone();
    let mut students = Vec::new();
    let mut reports: Vec<StageReport> = Vec::new();
    for (i, w) in cfg.stage_schedule.windows(2).enumerate() {
        let (from, to) = (w[0], w[1]);
        let method = if i == 0 { cfg.teacher_method } else { Method::Euler };
        let stage_cfg = cfg.for_stage(from, to, method);
        let hash_before = current_teacher.param_hash();
        let student = current_teacher.clone().into_student();
        let out = distill_stage(&current_teacher, student, &stage_cfg, sampler, seed.child(i as u64)).map_err(|e| {
            let done: Vec<String> = reports.iter().map(|r| format!("{}->{}", r.from_steps, r.to_steps)).collect();
            Error::Internal(format!("stage {from}->{to} failed after completed stages {done:?}: {e}"))
        })?;
        let hash_after = current_teacher.param_hash();
        if hash_before != hash_after {
            return Err(Error::Internal(format!("teacher of stage {from}->{to} changed during training")));
        }
        let (initial_loss, final_loss) = smoothed_ends(&out.losses).unwrap_or((0.0, 0.0));
        reports.push(StageReport {
            from_steps: from,
            to_steps: to,
            teacher_substeps: stage_cfg.teacher_steps,
            teacher_method: method,
            iterations: out.losses.len(),
            initial_loss,
            final_loss,
            elapsed: out.elapsed,
            teacher_hash: hash_before,
            student_hash: out.student.param_hash(),
        });
        students.push(out.student.clone());
        current_teacher = out.student;
    }
    let student = if students.is_empty() { teacher.clone() } else { current_teacher };
    Ok(MultistageOutcome {
        student,
        students,
        reports,
    })
}

/// Student whose Euler step over each segment reproduces the teacher's
/// endpoint exactly: `v(t, x) = (x − x★(t, x)) / Δt`.
///
/// On `[0, Δt)` the segment is shortened to end at zero; at `t = 0` the
/// teacher's own velocity is returned.
#[derive(Clone)]
pub struct EndpointOracleStudent {
    teacher: Arc<dyn VelocityField>,
    student_steps: usize,
    teacher_steps: usize,
    method: Method,
}

impl fmt::Debug for EndpointOracleStudent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EndpointOracleStudent")
            .field("teacher", &self.teacher.kind())
            .field("student_steps", &self.student_steps)
            .field("teacher_steps", &self.teacher_steps)
            .field("method", &self.method)
            .finish()
    }
}

impl EndpointOracleStudent {
    pub fn new(teacher: Arc<dyn VelocityField>, student_steps: usize, teacher_steps: usize, method: Method) -> Result<Self> {
        if student_steps == 0 || teacher_steps == 0 {
            return Err(Error::Param("step counts must be positive".into()));
        }
        Ok(Self {
            teacher,
            student_steps,
            teacher_steps,
            method,
        })
    }
}

impl VelocityField for EndpointOracleStudent {
    fn dim(&self) -> usize {
        self.teacher.dim()
    }

    fn kind(&self) -> FieldKind {
        FieldKind::Student
    }

    fn eval_point(&self, t: f64, x: &[f64], label: Option<usize>, out: &mut [f64]) -> Result<()> {
        let xs = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Param(e.to_string()))?;
        let mut o = Array2::zeros((1, x.len()));
        self.eval_batch(t, xs, Labels::from_option(label), o.view_mut())?;
        out.copy_from_slice(o.as_slice().expect("fresh array"));
        Ok(())
    }

    fn eval_batch(&self, t: f64, xs: ArrayView2<'_, f64>, labels: Labels<'_>, mut out: ArrayViewMut2<'_, f64>) -> Result<()> {
        check_batch_shape(self.dim(), &xs, &out)?;
        if t <= 0.0 {
            return self.teacher.eval_batch(t, xs, labels, out);
        }
        let dt = (1.0 / self.student_steps as f64).min(t);
        let star = teacher_endpoint(self.teacher.as_ref(), t, xs, labels, self.teacher_steps, dt, self.method)?;
        out.assign(&((&xs - &star) / dt));
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityConfig {
    /// Size of the common time-1 cloud.
    pub n: usize,
    /// Teacher midpoint substeps per student segment.
    pub substeps: usize,
    /// Tube rows per cloud used for each Lipschitz estimate.
    pub tube_points: usize,
    /// Finite-difference step of the Lipschitz estimate.
    pub lipschitz_h: f64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            n: 4000,
            substeps: 32,
            tube_points: 48,
            lipschitz_h: 1e-4,
        }
    }
}

/// Bound check at one student grid time `τ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityPoint {
    pub tau: f64,
    /// Empirical W₂ between teacher-flow and student-flow clouds at `τ`.
    pub lhs: f64,
    pub stderr: f64,
    /// `∫_τ^1 exp(∫_τ^r L̂) δ(r) dr`.
    pub rhs: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub points: Vec<StabilityPoint>,
    /// Quadrature nodes from 1 down to 0.
    pub times: Vec<f64>,
    /// `L̂` at each quadrature node.
    pub lipschitz: Vec<f64>,
    /// RMS drift gap `δ` at each quadrature node.
    pub gap: Vec<f64>,
    /// Endpoint mismatch at time 1 (zero for a common cloud).
    pub epsilon: f64,
    /// Set when `L̂` could not be estimated; holds the time and state.
    pub inconclusive: Option<(f64, Vec<f64>)>,
    pub passed: bool,
}

impl StabilityReport {
    /// `∫_τ^1 δ(r) dr` for every student grid time, by the trapezoid rule.
    pub fn gap_integral(&self) -> f64 {
        self.times
            .windows(2)
            .zip(self.gap.windows(2))
            .map(|(t, g)| (t[0] - t[1]) * 0.5 * (g[0] + g[1]))
            .sum()
    }
}

fn take_rows(x: &Array2<f64>, count: usize) -> Array2<f64> {
    let n = x.nrows();
    let count = count.min(n).max(1);
    let stride = n / count;
    let idx: Vec<usize> = (0..count).map(|i| i * stride).collect();
    x.select(ndarray::Axis(0), &idx)
}

/// Compares the teacher flow and the `m`-step Euler flow of `student` from a
/// common time-1 cloud against the trajectory-stability bound.
///
/// The student path is piecewise linear with drift `V_k = v(t_k, x_k)` on
/// segment `k`; the teacher path uses `cfg.substeps` midpoint substeps per
/// segment. `L̂(r)` is the larger of the two fields' finite-difference
/// Lipschitz estimates over both clouds and their midpoints.
pub fn verify_stability_bound(
    teacher: &dyn VelocityField,
    student: &dyn VelocityField,
    m: usize,
    sampler: &dyn StateSampler,
    cfg: &StabilityConfig,
    seed: SeedSpec,
) -> Result<StabilityReport> {
    if sampler.dim() != 1 || teacher.dim() != 1 || student.dim() != 1 {
        return Err(Error::Param("the stability check needs one-dimensional fields".into()));
    }
    if m == 0 || cfg.substeps == 0 || cfg.n < 2 {
        return Err(Error::Param("step counts must be positive and n at least 2".into()));
    }
    let batch = sampler.sample(1.0, cfg.n, seed.derive("cloud"))?;
    let labels = Labels::PerRow(&batch.labels);
    let tube_labels: Vec<Option<usize>> = {
        let n = cfg.n;
        let count = cfg.tube_points.min(n).max(1);
        let stride = n / count;
        let picked: Vec<Option<usize>> = (0..count).map(|i| batch.labels[i * stride]).collect();
        picked.iter().chain(&picked).chain(&picked).copied().collect()
    };
    let h = 1.0 / m as f64;
    let sub_h = h / cfg.substeps as f64;
    let mut teacher_x = batch.states.clone();
    let mut student_x = batch.states.clone();
    let mut times = Vec::new();
    let mut lipschitz = Vec::new();
    let mut gap = Vec::new();
    let mut snapshots = vec![(1.0, teacher_x.clone(), student_x.clone())];
    let mut inconclusive = None;
    let midpoint = IntegratorSpec::new(Method::Midpoint, 1)?;
    for k in (1..=m).rev() {
        let tk = k as f64 / m as f64;
        let mut drift = Array2::zeros(student_x.raw_dim());
        student.eval_batch(tk, student_x.view(), labels, drift.view_mut())?;
        let seg_start = student_x.clone();
        for j in 0..=cfg.substeps {
            let r = if j == cfg.substeps { (k - 1) as f64 / m as f64 } else { tk - j as f64 * sub_h };
            let psi = &seg_start - &(&drift * (tk - r));
            if j > 0 {
                let prev_r = tk - (j - 1) as f64 * sub_h;
                teacher_x = integrate(teacher, midpoint, prev_r, r, teacher_x.view(), labels, false)?
                    .states
                    .pop()
                    .expect("terminal state");
            }
            let mut u = Array2::zeros(psi.raw_dim());
            teacher.eval_batch(r, psi.view(), labels, u.view_mut())?;
            gap.push(rms_diff(&u, &drift));
            if j == 0 && k < m {
                // the drift jumps at a grid node: repeat the node with the new
                // drift so the trapezoid sees a zero-width interval
                lipschitz.push(*lipschitz.last().expect("earlier node"));
                times.push(r);
                continue;
            }
            let a = take_rows(&teacher_x, cfg.tube_points);
            let b = take_rows(&psi, cfg.tube_points);
            let mid = (&a + &b) * 0.5;
            let tube = ndarray::concatenate(ndarray::Axis(0), &[a.view(), b.view(), mid.view()])
                .map_err(|e| Error::Internal(e.to_string()))?;
            let mut l = 0.0f64;
            for (f, tag) in [(teacher, "teacher"), (student, "student")] {
                let est = estimate_lipschitz(f, tube.view(), r, cfg.lipschitz_h, Labels::PerRow(&tube_labels), seed.derive(tag))?;
                if let Some(&i) = est.flagged.first() {
                    if inconclusive.is_none() {
                        inconclusive = Some((r, tube.row(i).to_vec()));
                    }
                }
                l = l.max(est.value);
            }
            lipschitz.push(l);
            times.push(r);
            if j == cfg.substeps {
                student_x = psi;
                snapshots.push((r, teacher_x.clone(), student_x.clone()));
            }
        }
    }
    let rhs_at = |idx: usize| -> f64 {
        // integrate from times[idx] (= τ) up to times[0] (= 1)
        let mut acc = 0.0;
        let mut growth = 0.0;
        let mut prev_weight = gap[idx];
        for q in (0..idx).rev() {
            let w = times[q] - times[q + 1];
            growth += 0.5 * w * (lipschitz[q] + lipschitz[q + 1]);
            let weight = growth.exp() * gap[q];
            acc += 0.5 * w * (prev_weight + weight);
            prev_weight = weight;
        }
        acc
    };
    let mut points = Vec::with_capacity(m + 1);
    for (n_seg, (tau, tx, sx)) in snapshots.iter().enumerate() {
        let idx = times
            .iter()
            .position(|&t| (t - tau).abs() < 1e-12)
            .ok_or_else(|| Error::Internal(format!("time {tau} missing from the quadrature grid")))?;
        let w2 = w2_1d(&tx.column(0).to_vec(), &sx.column(0).to_vec(), seed.child(n_seg as u64))?;
        let rhs = rhs_at(idx);
        points.push(StabilityPoint {
            tau: *tau,
            lhs: w2.value,
            stderr: w2.stderr,
            rhs,
            passed: w2.value <= rhs * (1.0 + RELATIVE_SLACK) + SIGMA_SLACK * w2.stderr + ROUNDING_FLOOR,
        });
    }
    let passed = inconclusive.is_none() && points.iter().all(|p| p.passed);
    Ok(StabilityReport {
        points,
        times,
        lipschitz,
        gap,
        epsilon: 0.0,
        inconclusive,
        passed,
    })
}

fn rms_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let n = a.nrows().max(1) as f64;
    (a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n).sqrt()
}
