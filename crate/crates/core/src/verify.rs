//! Verification suites: each check exercises one invariant end to end and
//! reports a deterministic summary line.
//!
//! The report checksum covers check ids, criteria, outcomes and details but
//! not timings, so two runs with the same seed produce the same checksum.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use ndarray::{array, Array1, Array2, ArrayView2, ArrayViewMut2};
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::distill::{
    distill_multistage, smoothed_ends, validate_schedule, verify_stability_bound, DistillConfig, MultistageOutcome,
    StabilityConfig,
};
use crate::error::{Error, Result};
use crate::integrate::{flow_map_with_steps, integrate, IntegratorSpec, Method};
use crate::kac::{sample_path, sample_state, KacParams};
use crate::metrics::{
    check_w2_lipschitz_in_time, cone_audit, estimate_lipschitz, w2_assignment, w2_to_dataset_paired, w2_1d,
    SIGMA_SLACK,
};
use crate::numerics::quad;
use crate::rng::SeedSpec;
use crate::schedule::Schedule;
use crate::telegraph::{kac_velocity, DensityValue, StateDensity1D};
use crate::velocity::{
    eval_field, kinetic_energy, train_parametric, ConditionalOracle, EnergyEstimate, FieldKind, GuidedField, Labels,
    MarginalOracle, MarginalSampler, Mlp, OptimizerKind, StateSampler, TrainConfig, VelocityField,
};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Suite {
    Density,
    Velocity,
    Guidance,
    Integrators,
    Lemmas,
    Stability,
    All,
}

impl Suite {
    pub const NAMES: [&'static str; 7] = ["density", "velocity", "guidance", "integrators", "lemmas", "stability", "all"];

    fn parts(self) -> Vec<Suite> {
        match self {
            Suite::All => vec![
                Suite::Density,
                Suite::Velocity,
                Suite::Guidance,
                Suite::Integrators,
                Suite::Lemmas,
                Suite::Stability,
            ],
            s => vec![s],
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let i = match self {
            Suite::Density => 0,
            Suite::Velocity => 1,
            Suite::Guidance => 2,
            Suite::Integrators => 3,
            Suite::Lemmas => 4,
            Suite::Stability => 5,
            Suite::All => 6,
        };
        f.write_str(Self::NAMES[i])
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "density" => Suite::Density,
            "velocity" => Suite::Velocity,
            "guidance" => Suite::Guidance,
            "integrators" => Suite::Integrators,
            "lemmas" => Suite::Lemmas,
            "stability" => Suite::Stability,
            "all" => Suite::All,
            other => {
                return Err(Error::Config(format!(
                    "unknown suite '{other}' (expected one of {})",
                    Suite::NAMES.join(", ")
                )))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub id: String,
    /// Acceptance criterion the check belongs to; `None` for supporting checks.
    pub criterion: Option<u8>,
    pub passed: bool,
    pub details: String,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub suite: Suite,
    pub seed: SeedSpec,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Checks of one acceptance criterion.
    pub fn criterion(&self, n: u8) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| c.criterion == Some(n)).collect()
    }

    fn canonical(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "version {REPORT_VERSION}");
        let _ = writeln!(s, "suite {}", self.suite);
        let _ = writeln!(s, "seed {} {}", self.seed.master_seed, self.seed.stream_id);
        for c in &self.checks {
            let crit = c.criterion.map_or("-".to_string(), |n| n.to_string());
            let _ = writeln!(s, "{} {} {} {}", c.id, crit, c.passed, c.details);
        }
        s
    }

    /// SHA-256 over everything except timings.
    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "kacflow verify report v{REPORT_VERSION}");
        let _ = writeln!(s, "suite {}", self.suite);
        let _ = writeln!(s, "seed {} {}", self.seed.master_seed, self.seed.stream_id);
        for c in &self.checks {
            let crit = c.criterion.map_or("-".to_string(), |n| n.to_string());
            let _ = writeln!(
                s,
                "{} {:<34} criterion {:>2} {:>8.2}s  {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.id,
                crit,
                c.elapsed.as_secs_f64(),
                c.details
            );
        }
        let n_pass = self.checks.iter().filter(|c| c.passed).count();
        let _ = writeln!(s, "summary {n_pass}/{} passed", self.checks.len());
        let _ = writeln!(s, "checksum {}", self.checksum());
        s
    }
}

/// Settings of the trained-model checks in the stability suite.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilitySetup {
    pub a: f64,
    pub c: f64,
    pub hidden: Vec<usize>,
    pub train_iterations: usize,
    pub train_lr: f64,
    pub distill_iterations: usize,
    pub distill_lr: f64,
    pub batch_size: usize,
    /// Samples per W₂ comparison.
    pub eval_samples: usize,
    /// Midpoint steps of the reference teacher flow.
    pub reference_steps: usize,
    pub bound: StabilityConfig,
}

impl Default for StabilitySetup {
    fn default() -> Self {
        Self {
            a: 25.0,
            c: 2.0,
            hidden: vec![64, 64],
            train_iterations: 10_000,
            train_lr: 1e-3,
            distill_iterations: 1000,
            distill_lr: 1e-3,
            batch_size: 256,
            eval_samples: 4000,
            reference_steps: 400,
            bound: StabilityConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerifyOptions {
    pub stability: StabilitySetup,
}

type CheckOutcome = Result<(bool, String)>;

struct Runner {
    seed: SeedSpec,
    checks: Vec<CheckResult>,
}

impl Runner {
    fn run<F: FnOnce(SeedSpec) -> CheckOutcome>(&mut self, id: &str, criterion: Option<u8>, f: F) {
        let start = Instant::now();
        let (passed, details) = match f(self.seed.derive(id)) {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        self.checks.push(CheckResult {
            id: id.to_string(),
            criterion,
            passed,
            details,
            elapsed: start.elapsed(),
        });
    }
}

/// Runs `suite` with every check seeded from `seed`.
pub fn run_suite(suite: Suite, seed: SeedSpec, opts: &VerifyOptions) -> VerifyReport {
    let mut r = Runner {
        seed,
        checks: Vec::new(),
    };
    for part in suite.parts() {
        match part {
            Suite::Density => density_suite(&mut r),
            Suite::Velocity => velocity_suite(&mut r),
            Suite::Guidance => guidance_suite(&mut r),
            Suite::Integrators => integrator_suite(&mut r),
            Suite::Lemmas => lemma_suite(&mut r),
            Suite::Stability => stability_suite(&mut r, &opts.stability),
            Suite::All => unreachable!("expanded above"),
        }
    }
    VerifyReport {
        suite,
        seed,
        checks: r.checks,
    }
}

fn params(a: f64, c: f64, d: usize) -> Result<KacParams> {
    KacParams::new(a, c, d)
}

fn point_data(d: usize) -> Result<Dataset> {
    Dataset::new(Array2::zeros((1, d)), None)
}

// ---------------------------------------------------------------- density

fn density_suite(r: &mut Runner) {
    r.run("density.normalisation", Some(1), |_| {
        let mut worst = 0.0f64;
        for (a, c) in [(2.0, 1.0), (25.0, 2.0)] {
            let p = params(a, c, 1)?;
            for t in [0.05, 0.25, 0.5, 1.0, 2.0] {
                let law = StateDensity1D::new(&p, t)?;
                worst = worst.max((2.0 * law.atom_weight() + law.ac_mass() - 1.0).abs());
            }
        }
        Ok((worst <= 1e-6, format!("max |mass - 1| = {worst:.3e} over 10 (a, c, t)")))
    });

    let p = params(2.0, 1.0, 1).expect("constant parameters are valid");
    let t = 1.0;
    let n = 1_000_000;
    let sample = sample_state(&p, t, n, r.seed.derive("density.paths")).map_err(|e| e.to_string());
    r.run("density.histogram", Some(1), |_| {
        let xs = sample.as_ref().map_err(|e| Error::Internal(e.clone()))?;
        let law = StateDensity1D::new(&p, t)?;
        let edge = p.c() * t;
        let bins = 50;
        let width = 2.0 * edge / bins as f64;
        let mut counts = vec![0usize; bins];
        for &x in xs.column(0) {
            if x.abs() < edge * (1.0 - 1e-12) {
                let b = (((x + edge) / width) as usize).min(bins - 1);
                counts[b] += 1;
            }
        }
        let mut worst = 0.0f64;
        let mut failing = 0;
        for (b, &count) in counts.iter().enumerate() {
            let lo = -edge + b as f64 * width;
            let mass = quad::integrate(|x| law.ac_density(x), lo, lo + width, 1e-14, 1e-12, 200).value;
            let sd = (n as f64 * mass * (1.0 - mass)).sqrt();
            let z = (count as f64 - n as f64 * mass).abs() / sd;
            worst = worst.max(z);
            if z > 3.0 {
                failing += 1;
            }
        }
        Ok((
            failing == 0,
            format!("{n} paths, {bins} bins: max |z| = {worst:.3}, bins beyond 3 sigma = {failing}"),
        ))
    });
    r.run("density.atoms", Some(1), |_| {
        let xs = sample.as_ref().map_err(|e| Error::Internal(e.clone()))?;
        let mut exact = true;
        for (a, c, t) in [(2.0, 1.0, 1.0), (25.0, 2.0, 0.3), (0.5, 3.0, 2.0)] {
            let q = params(a, c, 1)?;
            let law = StateDensity1D::new(&q, t)?;
            let w = (-a * t).exp() / 2.0;
            exact &= law.atom_weight() == w;
            exact &= matches!(law.density_at(c * t), DensityValue::Atom(v) if v == w);
            exact &= matches!(law.density_at(-c * t), DensityValue::Atom(v) if v == w);
        }
        let edge = p.c() * t;
        let on_atoms = xs.column(0).iter().filter(|x| x.abs() >= edge * (1.0 - 1e-12)).count();
        let frac = on_atoms as f64 / n as f64;
        let expect = (-p.a() * t).exp();
        let z = (frac - expect).abs() / (expect * (1.0 - expect) / n as f64).sqrt();
        Ok((
            exact && z <= 3.0,
            format!("atom weight exact: {exact}; path atom fraction {frac:.6} vs {expect:.6} (|z| = {z:.3})"),
        ))
    });
    r.run("density.continuity", Some(2), |_| {
        let (a, c) = (2.0, 1.0);
        let p = params(a, c, 1)?;
        let h = 1e-4;
        let mut worst = 0.0f64;
        let mut max_p = 0.0f64;
        for i in 0..100 {
            let t = 0.1 + 0.9 * i as f64 / 99.0;
            let now = StateDensity1D::new(&p, t)?;
            let before = StateDensity1D::new(&p, t - h)?;
            let after = StateDensity1D::new(&p, t + h)?;
            for j in 0..100 {
                let x = c * t * 0.98 * (2.0 * (j as f64 + 0.5) / 100.0 - 1.0);
                let dp = (after.ac_density(x) - before.ac_density(x)) / (2.0 * h);
                let df = (now.ac_flux(x + h)? - now.ac_flux(x - h)?) / (2.0 * h);
                worst = worst.max((dp + df).abs());
                max_p = max_p.max(now.ac_density(x));
            }
        }
        let tol = 1e-3 * max_p;
        Ok((worst <= tol, format!("max residual {worst:.3e} <= {tol:.3e} on 100x100 grid")))
    });
}

// ---------------------------------------------------------------- velocity

fn velocity_suite(r: &mut Runner) {
    r.run("velocity.speed-bound", Some(3), |seed| {
        let mut rng = seed.rng();
        let mut worst = 0.0f64;
        for _ in 0..10_000 {
            let a = rng.random_range(0.1..50.0);
            let c = rng.random_range(0.2..5.0);
            let s: f64 = rng.random_range(1e-3..1.0);
            let z = c * s * rng.random_range(-0.999999..0.999999);
            let v = kac_velocity(a, c, s, z)?;
            worst = worst.max(v.abs() / c);
        }
        let mut edge_err = 0.0f64;
        for _ in 0..100 {
            let a = rng.random_range(0.1..50.0);
            let c = rng.random_range(0.2..5.0);
            let s: f64 = rng.random_range(1e-3..1.0);
            edge_err = edge_err.max((kac_velocity(a, c, s, c * s)? - c).abs());
            edge_err = edge_err.max((kac_velocity(a, c, s, -c * s)? + c).abs());
        }
        Ok((
            worst <= 1.0 && edge_err <= 1e-9,
            format!("max |v|/c = {worst:.12} over 1e4 points; max edge error {edge_err:.3e}"),
        ))
    });
    r.run("velocity.forward-cone", Some(3), |seed| {
        let mut total = 0;
        let mut violations = 0;
        for (k, (a, c, d)) in [(2.0, 1.0, 1), (25.0, 2.0, 3)].into_iter().enumerate() {
            let p = params(a, c, d)?;
            let data = point_data(d)?;
            let times: Vec<f64> = (1..=50).map(|i| i as f64 / 50.0).collect();
            let mut clouds: Vec<Array2<f64>> = vec![Array2::zeros((2000, d)); times.len()];
            for i in 0..2000 {
                let path = sample_path(&p, 1.0, seed.child(k as u64).child(i as u64))?;
                for (cloud, &t) in clouds.iter_mut().zip(&times) {
                    cloud.row_mut(i).assign(&Array1::from(path.position(t)));
                }
            }
            let audit = cone_audit(times.iter().copied().zip(clouds.iter().map(|c| c.view())), &data, &p, &Schedule::linear());
            total += audit.checked;
            violations += audit.violations;
        }
        Ok((violations == 0, format!("{violations} violations in {total} path states")))
    });
    for d in [1usize, 3] {
        r.run(&format!("velocity.w2-time-d{d}"), Some(4), |seed| {
            let p = params(2.0, 1.0, d)?;
            let times: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
            let rep = check_w2_lipschitz_in_time(&p, &Schedule::linear(), &point_data(d)?, &times, 100_000, seed, 1.0)?;
            let failing = rep.pairs.iter().filter(|q| !q.passed).count();
            Ok((
                rep.passed,
                format!(
                    "{} pairs ({} W2), n = 1e5, max slack {:.3e}, failing {failing}",
                    rep.pairs.len(),
                    rep.method,
                    rep.max_slack
                ),
            ))
        });
    }
    r.run("velocity.w2-time-control", None, |seed| {
        // halving the speed must make the check fail
        let p = params(2.0, 1.0, 1)?;
        let times = [0.1, 0.2, 0.3];
        let rep = check_w2_lipschitz_in_time(&p, &Schedule::linear(), &point_data(1)?, &times, 20_000, seed, 0.5)?;
        Ok((!rep.passed, format!("scaled bound rejected: {}, max slack {:.3e}", !rep.passed, rep.max_slack)))
    });
    r.run("velocity.energy-bound", Some(3), |seed| {
        let mut worst = 0.0f64;
        for d in [1usize, 3] {
            let p = params(25.0, 2.0, d)?;
            let data = point_data(d)?;
            let field = MarginalOracle::new(p, Schedule::linear(), data.clone())?;
            let sampler = MarginalSampler::new(p, Schedule::linear(), data)?;
            for (k, t) in [0.1, 0.3, 0.5, 0.7, 1.0].into_iter().enumerate() {
                let e = kinetic_energy(&field, &sampler, t, 5000, seed.child((d * 10 + k) as u64))?;
                worst = worst.max(e.value / (p.c() * (d as f64).sqrt()));
            }
        }
        Ok((worst <= 1.0, format!("max energy / (c sqrt d) = {worst:.6}")))
    });
}

// ---------------------------------------------------------------- guidance

fn guidance_fields(data: &Dataset, p: KacParams, sched: &Schedule) -> Result<(Arc<dyn VelocityField>, Arc<dyn VelocityField>)> {
    let oracle: Arc<dyn VelocityField> = Arc::new(MarginalOracle::new(p, sched.clone(), data.clone())?);
    Ok((oracle.clone(), oracle))
}

fn guidance_suite(r: &mut Runner) {
    r.run("guidance.identities", Some(5), |seed| {
        let data = Dataset::by_name("two-class-1d", seed.derive("data"))?;
        let p = params(25.0, 2.0, 1)?;
        let sched = Schedule::quadratic();
        let sampler = MarginalSampler::new(p, sched.clone(), data.clone())?;
        let net: Arc<dyn VelocityField> = Arc::new(Mlp::new(1, data.num_classes(), &[16, 16], seed.derive("net"))?);
        let (cond, uncond) = guidance_fields(&data, p, &sched)?;
        let mut mismatches = 0;
        let mut rows = 0;
        for (k, t) in [0.2, 0.5, 0.9].into_iter().enumerate() {
            let batch = sampler.sample(t, 500, seed.child(k as u64))?;
            let labels = Labels::PerRow(&batch.labels);
            for (c, u) in [(cond.clone(), uncond.clone()), (net.clone(), net.clone())] {
                let g0 = GuidedField::new(0.0, c.clone(), u.clone())?;
                let g1 = GuidedField::new(1.0, c.clone(), u.clone())?;
                let uv = eval_field(u.as_ref(), t, batch.states.view(), Labels::Unconditional)?;
                let cv = eval_field(c.as_ref(), t, batch.states.view(), labels)?;
                let v0 = eval_field(&g0, t, batch.states.view(), labels)?;
                let v1 = eval_field(&g1, t, batch.states.view(), labels)?;
                mismatches += uv.iter().zip(v0.iter()).filter(|(a, b)| a.to_bits() != b.to_bits()).count();
                mismatches += cv.iter().zip(v1.iter()).filter(|(a, b)| a.to_bits() != b.to_bits()).count();
                rows += 2 * batch.states.nrows();
            }
        }
        Ok((mismatches == 0, format!("{mismatches} bitwise mismatches in {rows} guided evaluations (w = 0, 1)")))
    });
    r.run("guidance.energy", Some(5), |seed| {
        let data = Dataset::by_name("two-class-1d", seed.derive("data"))?;
        let p = params(25.0, 2.0, 1)?;
        let sched = Schedule::quadratic();
        let sampler = MarginalSampler::new(p, sched.clone(), data.clone())?;
        let (cond, uncond) = guidance_fields(&data, p, &sched)?;
        let mut worst = f64::NEG_INFINITY;
        let mut finite = true;
        let mut checked = 0;
        for (k, t) in (1..=20).map(|i| i as f64 / 20.0).enumerate() {
            let batch = sampler.sample(t, 4000, seed.child(k as u64))?;
            let labels = Labels::PerRow(&batch.labels);
            let u = eval_field(uncond.as_ref(), t, batch.states.view(), Labels::Unconditional)?;
            let c = eval_field(cond.as_ref(), t, batch.states.view(), labels)?;
            let gap = &c - &u;
            let un = EnergyEstimate::from_values(u.view());
            let gn = EnergyEstimate::from_values(gap.view());
            for w in [0.5, 1.2, 3.0] {
                let g = GuidedField::new(w, cond.clone(), uncond.clone())?;
                let v = eval_field(&g, t, batch.states.view(), labels)?;
                let e = EnergyEstimate::from_values(v.view());
                finite &= e.value.is_finite();
                let slack = e.value - (un.value + w.abs() * gn.value + SIGMA_SLACK * e.stderr);
                worst = worst.max(slack);
                checked += 1;
            }
        }
        Ok((
            finite && worst <= 0.0,
            format!("{checked} (t, w) cases, finite: {finite}, max slack {worst:.3e}"),
        ))
    });
}

// ---------------------------------------------------------------- integrators

struct CountingField {
    evaluations: AtomicUsize,
}

impl VelocityField for CountingField {
    fn dim(&self) -> usize {
        1
    }

    fn kind(&self) -> FieldKind {
        FieldKind::Parametric
    }

    fn eval_point(&self, t: f64, x: &[f64], _label: Option<usize>, out: &mut [f64]) -> Result<()> {
        out[0] = (1.0 + t) * x[0];
        Ok(())
    }

    fn eval_batch(&self, t: f64, xs: ArrayView2<'_, f64>, _labels: Labels<'_>, mut out: ArrayViewMut2<'_, f64>) -> Result<()> {
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        out.assign(&(&xs * (1.0 + t)));
        Ok(())
    }
}

fn fitted_slope(hs: &[f64], errs: &[f64]) -> f64 {
    let xs: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn integrator_suite(r: &mut Runner) {
    r.run("integrators.order", Some(6), |_| {
        // dx/dt = (1 + t)·x from t = 1 to 0: x(0) = x(1)·exp(−3/2)
        let field = CountingField {
            evaluations: AtomicUsize::new(0),
        };
        let x1 = array![[1.0], [-0.5]];
        let exact = x1.mapv(|v| v * (-1.5f64).exp());
        let steps = [10usize, 20, 40, 80, 160];
        let mut parts = Vec::new();
        let mut ok = true;
        for (method, order) in [(Method::Euler, 1.0), (Method::Midpoint, 2.0), (Method::Ab2, 2.0)] {
            let mut errs = Vec::new();
            for &m in &steps {
                let tr = integrate(&field, IntegratorSpec::new(method, m)?, 1.0, 0.0, x1.view(), Labels::Unconditional, false)?;
                errs.push((tr.terminal() - &exact).iter().map(|e| e.abs()).fold(0.0, f64::max));
            }
            let hs: Vec<f64> = steps.iter().map(|&m| 1.0 / m as f64).collect();
            let slope = fitted_slope(&hs, &errs);
            ok &= (slope - order).abs() <= 0.3;
            parts.push(format!("{method} slope {slope:.3}"));
        }
        Ok((ok, parts.join(", ")))
    });
    r.run("integrators.nfe", Some(6), |_| {
        let x1 = array![[1.0]];
        let mut ok = true;
        let mut parts = Vec::new();
        for method in [Method::Euler, Method::Midpoint, Method::Ab2] {
            for m in [1usize, 7, 50] {
                let field = CountingField {
                    evaluations: AtomicUsize::new(0),
                };
                let spec = IntegratorSpec::new(method, m)?;
                let tr = integrate(&field, spec, 1.0, 0.0, x1.view(), Labels::Unconditional, false)?;
                let performed = field.evaluations.load(Ordering::Relaxed);
                let reported = match method {
                    Method::Euler | Method::Ab2 => m,
                    Method::Midpoint => 2 * m,
                };
                let expected_performed = match method {
                    Method::Euler => m,
                    Method::Midpoint => 2 * m,
                    Method::Ab2 => m + 1,
                };
                ok &= tr.nfe == reported && tr.evaluations == performed && performed == expected_performed;
                if m == 50 {
                    parts.push(format!("{method}: nfe {} performed {performed}", tr.nfe));
                }
            }
        }
        Ok((ok, format!("M = 50: {}", parts.join(", "))))
    });
    r.run("integrators.clamp-rate", None, |seed| {
        let data = Dataset::by_name("two-mode-1d", seed.derive("data"))?;
        let p = params(25.0, 2.0, 1)?;
        let sched = Schedule::linear();
        let sampler = MarginalSampler::new(p, sched.clone(), data.clone())?;
        let field = MarginalOracle::new(p, sched, data)?;
        let x1 = sampler.sample(1.0, 1000, seed)?.states;
        let mut worst = 0.0f64;
        for method in [Method::Euler, Method::Midpoint] {
            for m in [50usize, 200] {
                let tr = integrate(&field, IntegratorSpec::new(method, m)?, 1.0, 0.0, x1.view(), Labels::Unconditional, false)?;
                worst = worst.max(tr.clamp_rate());
            }
        }
        Ok((worst < 0.01, format!("max clamp rate {worst:.5} (Euler and midpoint, M in 50, 200)")))
    });
}

// ---------------------------------------------------------------- lemmas

fn spectral_norm(a: &Array2<f64>) -> f64 {
    match a.nrows() {
        1 => a[[0, 0]].abs(),
        2 => {
            let ata = a.t().dot(a);
            let (p, q, r) = (ata[[0, 0]], ata[[0, 1]], ata[[1, 1]]);
            let mean = 0.5 * (p + r);
            let rad = (0.25 * (p - r).powi(2) + q * q).sqrt();
            (mean + rad).sqrt()
        }
        _ => a.iter().map(|v| v * v).sum::<f64>().sqrt(),
    }
}

fn lemma_suite(r: &mut Runner) {
    r.run("lemmas.flow-lipschitz", Some(7), |seed| {
        let p = params(2.0, 1.0, 1)?;
        let sched = Schedule::linear();
        let field = ConditionalOracle::new(p, sched.clone(), &[0.3])?;
        let probes = 16;
        let sep = 1e-3;
        let mut x = Array2::zeros((2 * probes, 1));
        for i in 0..probes {
            let z = -0.4 + 0.8 * i as f64 / (probes - 1) as f64;
            x[[2 * i, 0]] = z;
            x[[2 * i + 1, 0]] = z + sep;
        }
        let steps = 1000;
        let tr = integrate(&field, IntegratorSpec::new(Method::Midpoint, steps)?, 1.0, 0.0, x.view(), Labels::Unconditional, true)?;
        let stride = 5;
        let mut worst = f64::NEG_INFINITY;
        let mut integral = 0.0;
        let mut prev: Option<(f64, f64)> = None;
        let mut flagged = 0;
        let mut checked = 0;
        for k in (0..=steps).step_by(stride) {
            let t = tr.nodes[k];
            if t < 0.5 - 1e-12 {
                break;
            }
            let est = estimate_lipschitz(&field, tr.states[k].view(), t, 1e-6, Labels::Unconditional, seed.child(k as u64))?;
            flagged += est.flagged.len();
            if let Some((tp, lp)) = prev {
                integral += 0.5 * (tp - t) * (lp + est.value);
            }
            prev = Some((t, est.value));
            if k > 0 && k % 125 == 0 {
                let xs = &tr.states[k];
                let ratio = (0..probes)
                    .map(|i| (xs[[2 * i + 1, 0]] - xs[[2 * i, 0]]).abs() / sep)
                    .fold(0.0, f64::max);
                worst = worst.max(ratio / (integral.exp() * 1.05));
                checked += 1;
            }
        }
        Ok((
            flagged == 0 && worst <= 1.0,
            format!("{checked} horizons, max ratio / (1.05 exp(int L)) = {worst:.4}, flagged {flagged}"),
        ))
    });
    r.run("lemmas.pushforward", Some(7), |seed| {
        let mut failures = 0;
        let mut worst_contraction = f64::NEG_INFINITY;
        let mut worst_coupling = f64::NEG_INFINITY;
        for inst in 0..200u64 {
            let mut rng = seed.child(inst).rng();
            let n = rng.random_range(1..=6);
            let d = rng.random_range(1..=2);
            let mut draw = |rows: usize, cols: usize, lo: f64, hi: f64| Array2::from_shape_fn((rows, cols), |_| rng.random_range(lo..hi));
            let mu = draw(n, d, -2.0, 2.0);
            let nu = draw(n, d, -2.0, 2.0);
            let a = draw(d, d, -1.5, 1.5);
            let a2 = draw(d, d, -1.5, 1.5);
            let coef = draw(1, 3, -1.0, 1.0);
            let (beta, gamma, shift) = (coef[[0, 0]], coef[[0, 1]], coef[[0, 2]]);
            let f = |x: &Array2<f64>| x.dot(&a.t()) + x.mapv(|v| beta * v.sin());
            let g = |x: &Array2<f64>| x.dot(&a2.t()) + x.mapv(|v| gamma * v.cos() + shift);
            let lip = spectral_norm(&a) + beta.abs();
            let base = w2_assignment(mu.view(), nu.view())?;
            let pushed = w2_assignment(f(&mu).view(), f(&nu).view())?;
            let (fnu, gnu) = (f(&nu), g(&nu));
            let coupled = w2_assignment(fnu.view(), gnu.view())?;
            let l2 = ((&fnu - &gnu).iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
            let c1 = pushed - lip * base;
            let c2 = coupled - l2;
            worst_contraction = worst_contraction.max(c1);
            worst_coupling = worst_coupling.max(c2);
            if c1 > 1e-12 || c2 > 1e-12 {
                failures += 1;
            }
        }
        Ok((
            failures == 0,
            format!(
                "200 instances, failures {failures}, max excess {worst_contraction:.3e} (contraction), {worst_coupling:.3e} (coupling)"
            ),
        ))
    });
}

// ---------------------------------------------------------------- stability

struct Artifacts {
    data: Dataset,
    sampler: MarginalSampler,
    teacher: Mlp,
    staged: MultistageOutcome,
}

fn build_artifacts(name: &str, setup: &StabilitySetup, seed: SeedSpec, schedule: &[usize]) -> Result<(Artifacts, Vec<f64>)> {
    let data = Dataset::by_name(name, seed.derive("data"))?.unlabeled();
    let p = KacParams::new(setup.a, setup.c, data.dim())?;
    let sched = Schedule::quadratic();
    let sampler = MarginalSampler::new(p, sched.clone(), data.clone())?;
    let init = Mlp::new(data.dim(), 0, &setup.hidden, seed.derive("init"))?;
    let cfg = TrainConfig {
        lr: setup.train_lr,
        iterations: setup.train_iterations,
        batch_size: setup.batch_size,
        label_drop: 0.0,
        optimizer: OptimizerKind::Adam,
    };
    let trained = train_parametric(init, &p, &sched, &data, &cfg, seed.derive("train"))?;
    let staged = distill_multistage(&trained.model, &distill_config(setup, schedule), &sampler, seed.derive("staged"))?;
    Ok((
        Artifacts {
            data,
            sampler,
            teacher: trained.model,
            staged,
        },
        trained.losses,
    ))
}

fn distill_config(setup: &StabilitySetup, schedule: &[usize]) -> DistillConfig {
    DistillConfig {
        lr: setup.distill_lr,
        batch_size: setup.batch_size,
        max_iter: setup.distill_iterations,
        optimizer: OptimizerKind::Adam,
        stage_schedule: schedule.to_vec(),
        teacher_method: Method::Euler,
        ..DistillConfig::default()
    }
}

fn student_for(out: &MultistageOutcome, m: usize) -> Result<&Mlp> {
    out.reports
        .iter()
        .position(|r| r.to_steps == m)
        .map(|i| &out.students[i])
        .ok_or_else(|| Error::Internal(format!("no student with {m} steps")))
}

fn euler_terminal(field: &dyn VelocityField, m: usize, x1: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let tr = integrate(field, IntegratorSpec::new(Method::Euler, m)?, 1.0, 0.0, x1, Labels::Unconditional, false)?;
    Ok(tr.states.into_iter().last().expect("terminal state"))
}

fn stability_suite(r: &mut Runner, setup: &StabilitySetup) {
    const STAGED: [usize; 4] = [20, 4, 2, 1];
    let mut art1 = None;
    let mut art2 = None;
    r.run("stability.artifacts", None, |seed| {
        let mut parts = Vec::new();
        let mut ok = true;
        for (name, slot) in [("two-mode-1d", &mut art1), ("grid-2d", &mut art2)] {
            let (art, losses) = build_artifacts(name, setup, seed.derive(name), &STAGED)?;
            let (l0, l1) = smoothed_ends(&losses).unwrap_or((0.0, 0.0));
            ok &= l1 < l0;
            parts.push(format!("{name} teacher loss {l0:.4} -> {l1:.4}"));
            *slot = Some(art);
        }
        Ok((ok, parts.join("; ")))
    });
    let missing = || Error::Internal("trained artifacts are unavailable".into());

    for m in [4usize, 20] {
        r.run(&format!("stability.bound-m{m}"), Some(8), |seed| {
            let art = art1.as_ref().ok_or_else(missing)?;
            let direct;
            let student = if m == 20 {
                direct = distill_multistage(&art.teacher, &distill_config(setup, &[100, 20]), &art.sampler, seed.derive("distill"))?;
                &direct.student
            } else {
                student_for(&art.staged, m)?
            };
            let rep = verify_stability_bound(&art.teacher, student, m, &art.sampler, &setup.bound, seed)?;
            let worst = rep
                .points
                .iter()
                .filter(|p| p.lhs > 0.0)
                .map(|p| p.lhs / (p.rhs * 1.1 + SIGMA_SLACK * p.stderr))
                .fold(0.0, f64::max);
            let last = rep.points.last().expect("at least one grid time");
            let note = match &rep.inconclusive {
                Some((t, x)) => format!(", inconclusive at t = {t:.4}, x = {x:?}"),
                None => String::new(),
            };
            Ok((
                rep.passed,
                format!(
                    "{} grid times, max lhs / bound {worst:.4}, at tau = 0: lhs {:.5} rhs {:.5}{note}",
                    rep.points.len(),
                    last.lhs,
                    last.rhs
                ),
            ))
        });
    }

    r.run("stability.euler-rate", Some(9), |seed| {
        let art = art1.as_ref().ok_or_else(missing)?;
        let x1 = art.sampler.sample(1.0, setup.eval_samples, seed)?.states;
        let reference = flow_map_with_steps(&art.teacher, 1.0, 0.0, x1.view(), Labels::Unconditional, setup.reference_steps)?;
        let refv = reference.column(0).to_vec();
        let mut errs = Vec::new();
        for m in [10usize, 20, 40] {
            let out = euler_terminal(&art.teacher, m, x1.view())?;
            errs.push(w2_1d(&out.column(0).to_vec(), &refv, seed.child(m as u64))?.value);
        }
        let ratios = [errs[0] / errs[1], errs[1] / errs[2]];
        let ok = ratios.iter().all(|q| (1.5..=2.8).contains(q));
        Ok((
            ok,
            format!(
                "W2 to teacher flow {:.5}, {:.5}, {:.5}; ratios {:.3}, {:.3}",
                errs[0], errs[1], errs[2], ratios[0], ratios[1]
            ),
        ))
    });

    for (dim_tag, slot) in [("1d", &art1), ("2d", &art2)] {
        r.run(&format!("stability.distill-benefit-{dim_tag}"), Some(10), |seed| {
            let art = slot.as_ref().ok_or_else(missing)?;
            let x1 = art.sampler.sample(1.0, setup.eval_samples, seed)?.states;
            let mut ok = true;
            let mut parts = Vec::new();
            for m in [4usize, 2, 1] {
                let student = student_for(&art.staged, m)?;
                let truncated = euler_terminal(&art.teacher, m, x1.view())?;
                let distilled = euler_terminal(student, m, x1.view())?;
                let pr = w2_to_dataset_paired(truncated.view(), distilled.view(), &art.data, 128, seed.child(m as u64))?;
                ok &= pr.difference > SIGMA_SLACK * pr.stderr;
                parts.push(format!(
                    "M={m}: student {:.4} vs teacher {:.4} (gap {:.4}, sigma {:.4})",
                    pr.second.value, pr.first.value, pr.difference, pr.stderr
                ));
            }
            Ok((ok, parts.join("; ")))
        });
    }

    r.run("stability.multistage", Some(11), |seed| {
        let art = art1.as_ref().ok_or_else(missing)?;
        let before = art.teacher.param_hash();
        let direct = distill_multistage(&art.teacher, &distill_config(setup, &[20, 1]), &art.sampler, seed.derive("direct"))?;
        let frozen = art.teacher.param_hash() == before
            && art.staged.reports[0].teacher_hash == before
            && direct.reports[0].teacher_hash == before;
        let decreasing = art
            .staged
            .reports
            .iter()
            .chain(&direct.reports)
            .all(|r| r.final_loss < r.initial_loss);
        let rejected = [vec![100usize, 30], vec![20, 3, 1], vec![4, 4]]
            .iter()
            .all(|s| matches!(validate_schedule(s), Err(Error::Config(_))));
        let x1 = art.sampler.sample(1.0, setup.eval_samples, seed)?.states;
        let staged_out = euler_terminal(&art.staged.student, 1, x1.view())?;
        let direct_out = euler_terminal(&direct.student, 1, x1.view())?;
        let pr = w2_to_dataset_paired(staged_out.view(), direct_out.view(), &art.data, 128, seed.derive("w2"))?;
        let finite = pr.first.value.is_finite() && pr.second.value.is_finite();
        let complete = art.staged.reports.len() == 3 && direct.reports.len() == 1;
        let substeps: Vec<usize> = art.staged.reports.iter().map(|r| r.teacher_substeps).collect();
        Ok((
            complete && finite && frozen && decreasing && rejected,
            format!(
                "staged substeps {substeps:?}, direct substeps {}; 1-step W2 to data staged {:.4} direct {:.4}; teacher frozen {frozen}, losses decrease {decreasing}, bad schedules rejected {rejected}",
                direct.reports[0].teacher_substeps, pr.first.value, pr.second.value
            ),
        ))
    });
}
