//! Finite-speed generative flows built on the Kac (telegraph) process.
//!
//! The crate covers the whole pipeline: simulating the process, its closed-form
//! one-dimensional law, oracle and learned velocity fields, reverse-time ODE
//! sampling, endpoint distillation of few-step students, and the metrics and
//! checks used to verify the stability guarantees empirically.

pub mod data;
pub mod distill;
pub mod error;
pub mod integrate;
pub mod kac;
pub mod metrics;
pub mod numerics;
pub mod rng;
pub mod schedule;
pub mod telegraph;
pub mod velocity;
pub mod verify;

pub use data::Dataset;
pub use distill::{DistillConfig, StateSource};
pub use error::{Error, Result};
pub use integrate::{flow_map, sample_reverse, IntegratorSpec, Method, Trajectory};
pub use kac::{sample_mean_reverting, sample_path, sample_state, KacParams, KacPath};
pub use rng::SeedSpec;
pub use schedule::{Schedule, ScheduleKind};
pub use telegraph::{density_at, flux_at, sample_exact, DensityValue, StateDensity1D};
pub use velocity::{FieldKind, Labels, VelocityField};
pub use metrics::{SampleCloud, W2Method, W2Report};
pub use verify::{run_suite, CheckResult, Suite, VerifyOptions, VerifyReport};
