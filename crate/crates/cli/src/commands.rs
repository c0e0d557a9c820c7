//! The subcommands. Each writes its artifacts into a [`RunDir`] and returns
//! the manifest.

use std::sync::Arc;

use kacflow_core::distill::{distill_multistage, smoothed_ends, validate_schedule};
use kacflow_core::integrate::integrate;
use kacflow_core::metrics::w2_to_dataset;
use kacflow_core::velocity::{
    train_parametric, Checkpoint, GuidedField, MarginalOracle, MarginalSampler, Mlp, StateSampler, VelocityField,
};
use kacflow_core::{run_suite, sample_path, Dataset, IntegratorSpec, Labels, Method, VerifyOptions};
use ndarray::Array2;
use rayon::prelude::*;

use crate::config::{schedule_of, ExperimentConfig, FieldSource};
use crate::error::{CliError, Result};
use crate::output::{RunDir, RunManifest, Table};
use crate::svg;

/// Sliced-W₂ projections for multi-dimensional comparisons.
const W2_PROJECTIONS: usize = 64;

fn f(v: f64) -> String {
    v.to_string()
}

fn coord_header(first: &[&str], d: usize) -> Vec<String> {
    first
        .iter()
        .map(|s| s.to_string())
        .chain((0..d).map(|j| format!("x{j}")))
        .collect()
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<RunManifest> {
    let mut run = RunDir::create(&cfg.out)?;
    let d = cfg.dataset()?.dim();
    let p = cfg.params(d)?;
    let t_end = cfg.sim_t_end;
    if !(t_end.is_finite() && t_end >= 0.0) {
        return Err(CliError::Config(format!("simulate.t_end = {t_end} must be finite and nonnegative")));
    }
    let paths = run.phase("simulate", |_| {
        (0..cfg.sim_paths as u64)
            .into_par_iter()
            .map(|i| sample_path(&p, t_end, cfg.seed.derive("simulate").child(i)))
            .collect::<kacflow_core::Result<Vec<_>>>()
            .map_err(CliError::from)
    })?;
    let mut states = Table::new(&coord_header(&["path", "t"], d));
    let mut jumps = Table::new(&["path", "jumps"]);
    let counts: Vec<f64> = paths.iter().map(|p| p.jump_count() as f64).collect();
    if t_end > 0.0 {
        let records = cfg.sim_records.max(2);
        for (i, path) in paths.iter().enumerate() {
            for k in 0..records {
                let t = t_end * k as f64 / (records - 1) as f64;
                let mut row = vec![i.to_string(), f(t)];
                row.extend(path.position(t).into_iter().map(f));
                states.push(row);
            }
            jumps.push(vec![i.to_string(), path.jump_count().to_string()]);
        }
    }
    let n = counts.len().max(1) as f64;
    let mean = counts.iter().sum::<f64>() / n;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    run.write_csv("paths.csv", states)?;
    run.write_csv("jumps.csv", jumps)?;
    let summary = format!(
        "paths {}\nt_end {t_end}\ndim {d}\nmean_jumps {mean}\nvar_jumps {var}\nexpected_jumps {}\n",
        cfg.sim_paths,
        p.a() * t_end * d as f64
    );
    run.write("summary.txt", summary.as_bytes())?;
    run.metric("mean_jumps", mean);
    run.finish("simulate", cfg)
}

fn train_teacher(cfg: &ExperimentConfig, data: &Dataset, run: &mut RunDir) -> Result<Checkpoint> {
    let p = cfg.params(data.dim())?;
    let sched = cfg.sched();
    let init = Mlp::new(data.dim(), data.num_classes(), &cfg.hidden, cfg.seed.derive("init"))?;
    let out = run.phase("train", |_| {
        Ok(train_parametric(init, &p, &sched, data, &cfg.train_config(), cfg.seed.derive("train"))?)
    })?;
    let mut losses = Table::new(&["iteration", "loss"]);
    for (i, l) in out.losses.iter().enumerate() {
        losses.push(vec![i.to_string(), f(*l)]);
    }
    run.write_csv("loss.csv", losses)?;
    if let Some((first, last)) = smoothed_ends(&out.losses) {
        run.metric("loss_start", first);
        run.metric("loss_end", last);
    }
    Ok(Checkpoint {
        model: out.model,
        kac: p,
        schedule: sched,
    })
}

pub fn train(cfg: &ExperimentConfig) -> Result<RunManifest> {
    let mut run = RunDir::create(&cfg.out)?;
    let data = cfg.dataset()?;
    let ckpt = train_teacher(cfg, &data, &mut run)?;
    run.write("checkpoint.txt", ckpt.to_text().as_bytes())?;
    run.metric("param_hash", ckpt.model.param_hash());
    run.finish("train", cfg)
}

fn load_checkpoint(cfg: &ExperimentConfig, path: &std::path::Path, d: usize) -> Result<Checkpoint> {
    let ckpt = Checkpoint::load(path)?;
    let p = cfg.params(d)?;
    if ckpt.kac != p || ckpt.schedule != cfg.sched() {
        return Err(CliError::Config(format!(
            "{} was trained for a = {}, c = {}, d = {}, schedule {}, which differs from the config",
            path.display(),
            ckpt.kac.a(),
            ckpt.kac.c(),
            ckpt.kac.d(),
            ckpt.schedule.kind()
        )));
    }
    Ok(ckpt)
}

fn euler(field: &dyn VelocityField, m: usize, x1: &Array2<f64>) -> Result<Array2<f64>> {
    let tr = integrate(field, IntegratorSpec::new(Method::Euler, m)?, 1.0, 0.0, x1.view(), Labels::Unconditional, false)?;
    Ok(tr.terminal().clone())
}

fn samples_svg(samples: &Array2<f64>, data: &Dataset, title: &str) -> Option<String> {
    match samples.ncols() {
        1 => Some(svg::histogram(&samples.column(0).to_vec(), &data.points().column(0).to_vec(), 60, title)),
        d if d >= 2 => Some(svg::scatter(samples.view(), data.points().view(), title)),
        _ => None,
    }
}

pub fn sample(cfg: &ExperimentConfig) -> Result<RunManifest> {
    let mut run = RunDir::create(&cfg.out)?;
    let data = cfg.dataset()?;
    let p = cfg.params(data.dim())?;
    let sched = cfg.sched();
    let base: Arc<dyn VelocityField> = match cfg.field {
        FieldSource::Oracle => Arc::new(MarginalOracle::new(p, sched.clone(), data.clone())?),
        FieldSource::Checkpoint => {
            let path = cfg
                .checkpoint
                .as_ref()
                .ok_or_else(|| CliError::Config("sample.field = checkpoint needs sample.checkpoint".into()))?;
            Arc::new(load_checkpoint(cfg, path, data.dim())?.model)
        }
    };
    let target = match cfg.label {
        Some(y) => data.restrict_to_class(y)?,
        None => data.clone(),
    };
    let field: Arc<dyn VelocityField> = match cfg.label {
        Some(_) => Arc::new(GuidedField::new(cfg.guidance_w, base.clone(), base)?),
        None => base,
    };
    let sampler = MarginalSampler::new(p, sched, data.clone())?;
    let x1 = sampler.sample(1.0, cfg.n, cfg.seed.derive("noise"))?.states;
    let labels: Vec<Option<usize>> = vec![cfg.label; cfg.n];
    let spec = IntegratorSpec::new(cfg.method, cfg.steps)?;
    let tr = run.phase("sample", |_| {
        Ok(integrate(field.as_ref(), spec, 1.0, 0.0, x1.view(), Labels::PerRow(&labels), false)?)
    })?;
    let out = tr.terminal();
    let mut table = Table::new(&coord_header(&["sample"], data.dim()));
    for (i, row) in out.outer_iter().enumerate() {
        let mut r = vec![i.to_string()];
        r.extend(row.iter().map(|v| f(*v)));
        table.push(r);
    }
    run.write_csv("samples.csv", table)?;
    let w2 = w2_to_dataset(out.view(), &target, W2_PROJECTIONS, cfg.seed.derive("w2"))?;
    run.metric("nfe", tr.nfe);
    run.metric("evaluations", tr.evaluations);
    run.metric("clamp_events", tr.clamp_events);
    run.metric("w2_to_data", w2.value);
    run.metric("w2_stderr", w2.stderr);
    if cfg.svg {
        let title = format!("{} {} steps, W2 to data {:.4}", cfg.method, cfg.steps, w2.value);
        if let Some(svg) = samples_svg(out, &target, &title) {
            run.write("samples.svg", svg.as_bytes())?;
        }
    }
    run.finish("sample", cfg)
}

pub fn distill(cfg: &ExperimentConfig) -> Result<RunManifest> {
    validate_schedule(&cfg.distill_schedule)?;
    let mut run = RunDir::create(&cfg.out)?;
    let data = cfg.dataset()?.unlabeled();
    let teacher = match &cfg.teacher {
        Some(path) => load_checkpoint(cfg, path, data.dim())?,
        None => train_teacher(cfg, &data, &mut run)?,
    };
    if teacher.model.num_classes() != 0 {
        return Err(CliError::Config("distillation needs an unconditional teacher".into()));
    }
    run.write("teacher.txt", teacher.to_text().as_bytes())?;
    let sampler = MarginalSampler::new(teacher.kac, teacher.schedule.clone(), data.clone())?;
    let dcfg = cfg.distill_config();
    let out = run.phase("distill", |_| {
        Ok(distill_multistage(&teacher.model, &dcfg, &sampler, cfg.seed.derive("distill"))?)
    })?;
    let x1 = sampler.sample(1.0, cfg.n, cfg.seed.derive("noise"))?.states;
    let mut table = Table::new(&[
        "stage",
        "from_steps",
        "to_steps",
        "teacher_substeps",
        "teacher_method",
        "iterations",
        "initial_loss",
        "final_loss",
        "w2_to_data",
        "w2_stderr",
        "teacher_w2_to_data",
        "teacher_w2_stderr",
        "teacher_hash",
        "student_hash",
    ]);
    let eval = run.phase("evaluate", |_| {
        let mut rows = Vec::new();
        for (k, (r, student)) in out.reports.iter().zip(&out.students).enumerate() {
            let seed = cfg.seed.derive("w2").child(k as u64);
            let s = w2_to_dataset(euler(student, r.to_steps, &x1)?.view(), &data, W2_PROJECTIONS, seed)?;
            let t = w2_to_dataset(euler(&teacher.model, r.to_steps, &x1)?.view(), &data, W2_PROJECTIONS, seed)?;
            rows.push((s, t));
        }
        Ok(rows)
    })?;
    for (k, (r, (s, t))) in out.reports.iter().zip(eval).enumerate() {
        table.push(vec![
            (k + 1).to_string(),
            r.from_steps.to_string(),
            r.to_steps.to_string(),
            r.teacher_substeps.to_string(),
            r.teacher_method.to_string(),
            r.iterations.to_string(),
            f(r.initial_loss),
            f(r.final_loss),
            f(s.value),
            f(s.stderr),
            f(t.value),
            f(t.stderr),
            r.teacher_hash.clone(),
            r.student_hash.clone(),
        ]);
    }
    run.write_csv("stages.csv", table)?;
    let steps = *cfg.distill_schedule.last().expect("validated schedule is nonempty");
    let student = Checkpoint {
        model: out.student.clone(),
        kac: teacher.kac,
        schedule: teacher.schedule.clone(),
    };
    for (r, s) in out.reports.iter().zip(&out.students) {
        let ck = Checkpoint {
            model: s.clone(),
            ..student.clone()
        };
        run.write(&format!("student_{}.txt", r.to_steps), ck.to_text().as_bytes())?;
    }
    if out.reports.is_empty() {
        run.write(&format!("student_{steps}.txt"), student.to_text().as_bytes())?;
    }
    run.metric("stages", out.reports.len());
    run.finish("distill", cfg)
}

pub fn verify(cfg: &ExperimentConfig) -> Result<RunManifest> {
    let mut run = RunDir::create(&cfg.out)?;
    let report = run.phase("verify", |_| Ok(run_suite(cfg.suite, cfg.seed, &VerifyOptions::default())))?;
    let mut table = Table::new(&["id", "criterion", "passed", "details"]);
    for c in &report.checks {
        table.push(vec![
            c.id.clone(),
            c.criterion.map_or(String::new(), |n| n.to_string()),
            c.passed.to_string(),
            c.details.clone(),
        ]);
    }
    run.write_csv("checks.csv", table)?;
    let text = report.to_text();
    run.write("report.txt", text.as_bytes())?;
    print!("{text}");
    let failed = report.checks.iter().filter(|c| !c.passed).count();
    run.metric("checks", report.checks.len());
    run.metric("failed", failed);
    run.metric("report_checksum", report.checksum());
    let manifest = run.finish("verify", cfg)?;
    if failed > 0 {
        return Err(CliError::ChecksFailed(failed));
    }
    Ok(manifest)
}

pub fn sweep(cfg: &ExperimentConfig) -> Result<RunManifest> {
    let mut run = RunDir::create(&cfg.out)?;
    let data = cfg.dataset()?.unlabeled();
    let mut cells = Vec::new();
    for &a in &cfg.sweep_a {
        for &c in &cfg.sweep_c {
            for &kind in &cfg.sweep_schedules {
                cells.push((a, c, kind));
            }
        }
    }
    if cells.is_empty() {
        return Err(CliError::Config("the sweep grid is empty".into()));
    }
    let spec = IntegratorSpec::new(cfg.method, cfg.steps)?;
    let rows = run.phase("sweep", |_| {
        cells
            .iter()
            .enumerate()
            .map(|(k, &(a, c, kind))| -> Result<_> {
                let p = kacflow_core::KacParams::new(a, c, data.dim())?;
                let sched = schedule_of(kind);
                let oracle = MarginalOracle::new(p, sched.clone(), data.clone())?;
                let sampler = MarginalSampler::new(p, sched, data.clone())?;
                let cell = cfg.seed.derive("sweep").child(k as u64);
                let x1 = sampler.sample(1.0, cfg.n, cell.derive("noise"))?.states;
                let tr = integrate(&oracle, spec, 1.0, 0.0, x1.view(), Labels::Unconditional, false)?;
                let w2 = w2_to_dataset(tr.terminal().view(), &data, W2_PROJECTIONS, cell.derive("w2"))?;
                Ok((a, c, kind, w2, tr.clamp_rate()))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut rows = rows;
    rows.sort_by(|x, y| x.3.value.total_cmp(&y.3.value));
    let mut table = Table::new(&["rank", "a", "c", "schedule", "w2_to_data", "w2_stderr", "clamp_rate"]);
    for (i, (a, c, kind, w2, clamp)) in rows.iter().enumerate() {
        table.push(vec![
            (i + 1).to_string(),
            f(*a),
            f(*c),
            kind.to_string(),
            f(w2.value),
            f(w2.stderr),
            f(*clamp),
        ]);
    }
    run.write_csv("leaderboard.csv", table)?;
    run.metric("cells", rows.len());
    run.finish("sweep", cfg)
}
