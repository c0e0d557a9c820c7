//! Flat `section.key = value` experiment configs.
//!
//! Every key has a default, so a config file only lists what it changes.
//! `to_text` writes every key in a fixed order and `from_text` reads it back
//! to an equal value.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use kacflow_core::velocity::OptimizerKind;
use kacflow_core::{Dataset, DistillConfig, KacParams, Method, Schedule, ScheduleKind, SeedSpec, StateSource, Suite};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const DEFAULT_SEED: u64 = 20240611;

/// Where the sampled velocity field comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldSource {
    Oracle,
    Checkpoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub a: f64,
    pub c: f64,
    pub schedule: ScheduleKind,
    pub data_name: String,
    /// CSV dataset; overrides `data_name` when set.
    pub data_path: Option<PathBuf>,
    pub hidden: Vec<usize>,
    pub train_iterations: usize,
    pub train_lr: f64,
    pub train_batch: usize,
    pub label_drop: f64,
    pub train_optimizer: OptimizerKind,
    pub field: FieldSource,
    pub checkpoint: Option<PathBuf>,
    pub method: Method,
    pub steps: usize,
    pub n: usize,
    pub label: Option<usize>,
    pub svg: bool,
    pub guidance_w: f64,
    pub distill_schedule: Vec<usize>,
    pub distill_iterations: usize,
    pub distill_lr: f64,
    pub distill_batch: usize,
    pub distill_optimizer: OptimizerKind,
    pub teacher_method: Method,
    pub state_source: StateSource,
    /// Teacher checkpoint; a teacher is trained with the `train.*` settings
    /// when unset.
    pub teacher: Option<PathBuf>,
    pub sim_paths: usize,
    pub sim_t_end: f64,
    /// Evenly spaced record times on `[0, t_end]`.
    pub sim_records: usize,
    pub sweep_a: Vec<f64>,
    pub sweep_c: Vec<f64>,
    pub sweep_schedules: Vec<ScheduleKind>,
    pub suite: Suite,
    pub seed: SeedSpec,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = kacflow_core::velocity::TrainConfig::default();
        let distill = DistillConfig::default();
        Self {
            a: 25.0,
            c: 2.0,
            schedule: ScheduleKind::Quadratic,
            data_name: "two-mode-1d".into(),
            data_path: None,
            hidden: vec![64, 64],
            train_iterations: train.iterations,
            train_lr: train.lr,
            train_batch: train.batch_size,
            label_drop: train.label_drop,
            train_optimizer: train.optimizer,
            field: FieldSource::Oracle,
            checkpoint: None,
            method: Method::Euler,
            steps: 20,
            n: 2000,
            label: None,
            svg: false,
            guidance_w: 1.0,
            distill_schedule: distill.stage_schedule,
            distill_iterations: distill.max_iter,
            distill_lr: distill.lr,
            distill_batch: distill.batch_size,
            distill_optimizer: distill.optimizer,
            teacher_method: distill.teacher_method,
            state_source: distill.state_source,
            teacher: None,
            sim_paths: 1000,
            sim_t_end: 1.0,
            sim_records: 11,
            sweep_a: vec![2.0, 25.0],
            sweep_c: vec![1.0, 2.0],
            sweep_schedules: vec![ScheduleKind::Linear, ScheduleKind::Quadratic],
            suite: Suite::All,
            seed: SeedSpec::new(DEFAULT_SEED, 0),
            out: PathBuf::from("out"),
        }
    }
}

fn bad(key: &str, value: &str, why: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{key} = '{value}': {why}"))
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| bad(key, value, e))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn parse_schedule(key: &str, value: &str) -> Result<ScheduleKind> {
    match value {
        "linear" => Ok(ScheduleKind::Linear),
        "quadratic" => Ok(ScheduleKind::Quadratic),
        other => Err(bad(key, other, "expected linear or quadratic")),
    }
}

fn parse_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

pub fn schedule_of(kind: ScheduleKind) -> Schedule {
    match kind {
        ScheduleKind::Quadratic => Schedule::quadratic(),
        _ => Schedule::linear(),
    }
}

impl ExperimentConfig {
    /// Every key with its current value, in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("kac.a", self.a.to_string()),
            ("kac.c", self.c.to_string()),
            ("sched.g", self.schedule.to_string()),
            ("data.name", self.data_name.clone()),
            ("data.path", show_path(&self.data_path)),
            ("model.hidden", join(&self.hidden)),
            ("train.iterations", self.train_iterations.to_string()),
            ("train.lr", self.train_lr.to_string()),
            ("train.batch", self.train_batch.to_string()),
            ("train.label_drop", self.label_drop.to_string()),
            ("train.optimizer", self.train_optimizer.to_string()),
            (
                "sample.field",
                match self.field {
                    FieldSource::Oracle => "oracle".into(),
                    FieldSource::Checkpoint => "checkpoint".into(),
                },
            ),
            ("sample.checkpoint", show_path(&self.checkpoint)),
            ("sample.method", self.method.to_string()),
            ("sample.steps", self.steps.to_string()),
            ("sample.n", self.n.to_string()),
            ("sample.label", self.label.map_or("none".into(), |l| l.to_string())),
            ("sample.svg", self.svg.to_string()),
            ("guidance.w", self.guidance_w.to_string()),
            ("distill.schedule", join(&self.distill_schedule)),
            ("distill.iterations", self.distill_iterations.to_string()),
            ("distill.lr", self.distill_lr.to_string()),
            ("distill.batch", self.distill_batch.to_string()),
            ("distill.optimizer", self.distill_optimizer.to_string()),
            ("distill.teacher_method", self.teacher_method.to_string()),
            ("distill.state_source", self.state_source.to_string()),
            ("distill.teacher", show_path(&self.teacher)),
            ("simulate.paths", self.sim_paths.to_string()),
            ("simulate.t_end", self.sim_t_end.to_string()),
            ("simulate.records", self.sim_records.to_string()),
            ("sweep.a", join(&self.sweep_a)),
            ("sweep.c", join(&self.sweep_c)),
            ("sweep.sched", join(&self.sweep_schedules)),
            ("verify.suite", self.suite.to_string()),
            ("seed.master", self.seed.master_seed.to_string()),
            ("seed.stream", self.seed.stream_id.to_string()),
            ("run.out", self.out.display().to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "kac.a" => self.a = parse(key, v)?,
            "kac.c" => self.c = parse(key, v)?,
            "sched.g" => self.schedule = parse_schedule(key, v)?,
            "data.name" => self.data_name = v.to_string(),
            "data.path" => self.data_path = parse_path(v),
            "model.hidden" => self.hidden = parse_list(key, v)?,
            "train.iterations" => self.train_iterations = parse(key, v)?,
            "train.lr" => self.train_lr = parse(key, v)?,
            "train.batch" => self.train_batch = parse(key, v)?,
            "train.label_drop" => self.label_drop = parse(key, v)?,
            "train.optimizer" => self.train_optimizer = parse(key, v)?,
            "sample.field" => {
                self.field = match v {
                    "oracle" => FieldSource::Oracle,
                    "checkpoint" => FieldSource::Checkpoint,
                    other => return Err(bad(key, other, "expected oracle or checkpoint")),
                }
            }
            "sample.checkpoint" => self.checkpoint = parse_path(v),
            "sample.method" => self.method = parse(key, v)?,
            "sample.steps" => self.steps = parse(key, v)?,
            "sample.n" => self.n = parse(key, v)?,
            "sample.label" => self.label = if v == "none" { None } else { Some(parse(key, v)?) },
            "sample.svg" => self.svg = parse(key, v)?,
            "guidance.w" => self.guidance_w = parse(key, v)?,
            "distill.schedule" => self.distill_schedule = parse_list(key, v)?,
            "distill.iterations" => self.distill_iterations = parse(key, v)?,
            "distill.lr" => self.distill_lr = parse(key, v)?,
            "distill.batch" => self.distill_batch = parse(key, v)?,
            "distill.optimizer" => self.distill_optimizer = parse(key, v)?,
            "distill.teacher_method" => self.teacher_method = parse(key, v)?,
            "distill.state_source" => self.state_source = parse(key, v)?,
            "distill.teacher" => self.teacher = parse_path(v),
            "simulate.paths" => self.sim_paths = parse(key, v)?,
            "simulate.t_end" => self.sim_t_end = parse(key, v)?,
            "simulate.records" => self.sim_records = parse(key, v)?,
            "sweep.a" => self.sweep_a = parse_list(key, v)?,
            "sweep.c" => self.sweep_c = parse_list(key, v)?,
            "sweep.sched" => {
                self.sweep_schedules = v.split(',').map(|s| parse_schedule(key, s.trim())).collect::<Result<_>>()?
            }
            "verify.suite" => self.suite = v.parse().map_err(|e| CliError::Usage(format!("{key}: {e}")))?,
            "seed.master" => self.seed.master_seed = parse(key, v)?,
            "seed.stream" => self.seed.stream_id = parse(key, v)?,
            "run.out" => self.out = PathBuf::from(v),
            other => return Err(CliError::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Parses config text over the defaults. Blank lines and `#` comments
    /// are skipped; repeated keys are rejected.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", i + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(CliError::Config(format!("line {}: '{key}' is set twice", i + 1)));
            }
            cfg.set(key, value.trim())
                .map_err(|e| match e {
                    CliError::Config(msg) => CliError::Config(format!("line {}: {msg}", i + 1)),
                    other => other,
                })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn dataset(&self) -> Result<Dataset> {
        let data = match &self.data_path {
            Some(p) => Dataset::from_csv(p)?,
            None => Dataset::by_name(&self.data_name, self.seed.derive("data"))?,
        };
        Ok(data)
    }

    pub fn params(&self, d: usize) -> Result<KacParams> {
        Ok(KacParams::new(self.a, self.c, d)?)
    }

    pub fn sched(&self) -> Schedule {
        schedule_of(self.schedule)
    }

    pub fn train_config(&self) -> kacflow_core::velocity::TrainConfig {
        kacflow_core::velocity::TrainConfig {
            lr: self.train_lr,
            iterations: self.train_iterations,
            batch_size: self.train_batch,
            label_drop: self.label_drop,
            optimizer: self.train_optimizer,
        }
    }

    pub fn distill_config(&self) -> DistillConfig {
        DistillConfig {
            teacher_method: self.teacher_method,
            lr: self.distill_lr,
            batch_size: self.distill_batch,
            max_iter: self.distill_iterations,
            optimizer: self.distill_optimizer,
            stage_schedule: self.distill_schedule.clone(),
            state_source: self.state_source,
            ..DistillConfig::default()
        }
    }
}
