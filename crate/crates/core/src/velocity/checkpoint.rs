//! Versioned text checkpoints for [`Mlp`] models.
//!
//! ```text
//! kacflow-checkpoint 1
//! kind parametric
//! dim 1
//! classes 0
//! widths 2 64 64 1
//! kac 25 2 1
//! schedule linear
//! params 4417
//! <one value per line>
//! sha256 <hex digest of every preceding byte>
//! ```
//!
//! Values use Rust's shortest round-trip float formatting, so a save/load
//! cycle is lossless.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kac::KacParams;
use crate::schedule::Schedule;

use super::mlp::Mlp;
use super::{FieldKind, VelocityField};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "kacflow-checkpoint";

/// A model with the process settings it was trained for.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Mlp,
    pub kac: KacParams,
    pub schedule: Schedule,
}

fn schedule_lines(s: &Schedule, out: &mut String) {
    let _ = writeln!(out, "schedule {}", s.kind());
    if let Some((ts, fs, gs)) = s.table() {
        for (name, vals) in [("t", ts), ("f", fs), ("g", gs)] {
            let joined: Vec<String> = vals.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "schedule.{name} {}", joined.join(" "));
        }
    }
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC} {CHECKPOINT_VERSION}");
        let _ = writeln!(s, "kind {}", m.kind());
        let _ = writeln!(s, "dim {}", m.dim());
        let _ = writeln!(s, "classes {}", m.num_classes());
        let widths: Vec<String> = m.widths().iter().map(|w| w.to_string()).collect();
        let _ = writeln!(s, "widths {}", widths.join(" "));
        let _ = writeln!(s, "kac {} {} {}", self.kac.a(), self.kac.c(), self.kac.d());
        schedule_lines(&self.schedule, &mut s);
        let _ = writeln!(s, "params {}", m.param_count());
        for p in m.params() {
            let _ = writeln!(s, "{p}");
        }
        let digest = hex::encode(Sha256::digest(s.as_bytes()));
        let _ = writeln!(s, "sha256 {digest}");
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Checkpoint(msg);
        let body_end = text
            .rfind("sha256 ")
            .ok_or_else(|| bad("missing checksum line".into()))?;
        let (body, tail) = text.split_at(body_end);
        let stored = tail["sha256 ".len()..].trim();
        let actual = hex::encode(Sha256::digest(body.as_bytes()));
        if stored != actual {
            return Err(bad(format!("checksum mismatch (stored {stored}, computed {actual})")));
        }
        let mut lines = body.lines();
        let mut next = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(format!("missing '{key}' line")))?;
            let rest = line
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .ok_or_else(|| bad(format!("expected '{key}', found '{line}'")))?;
            Ok(rest.to_string())
        };
        let version: u32 = parse(&next(MAGIC)?)?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let kind = match next("kind")?.as_str() {
            "parametric" => FieldKind::Parametric,
            "student" => FieldKind::Student,
            other => return Err(bad(format!("unsupported model kind '{other}'"))),
        };
        let dim: usize = parse(&next("dim")?)?;
        let classes: usize = parse(&next("classes")?)?;
        let widths = next("widths")?
            .split_whitespace()
            .map(parse)
            .collect::<Result<Vec<usize>>>()?;
        let kac_fields = next("kac")?;
        let kac_vals: Vec<&str> = kac_fields.split_whitespace().collect();
        if kac_vals.len() != 3 {
            return Err(bad(format!("malformed kac line '{kac_fields}'")));
        }
        let kac = KacParams::new(parse(kac_vals[0])?, parse(kac_vals[1])?, parse(kac_vals[2])?)
            .map_err(|e| bad(e.to_string()))?;
        let schedule = match next("schedule")?.as_str() {
            "linear" => Schedule::linear(),
            "quadratic" => Schedule::quadratic(),
            "tabulated" => {
                let mut cols = Vec::new();
                for name in ["schedule.t", "schedule.f", "schedule.g"] {
                    cols.push(next(name)?.split_whitespace().map(parse).collect::<Result<Vec<f64>>>()?);
                }
                let g = cols.pop().unwrap();
                let f = cols.pop().unwrap();
                let t = cols.pop().unwrap();
                Schedule::tabulated(t, f, g).map_err(|e| bad(e.to_string()))?
            }
            other => return Err(bad(format!("unknown schedule '{other}'"))),
        };
        let count: usize = parse(&next("params")?)?;
        let params = lines.by_ref().take(count).map(parse).collect::<Result<Vec<f64>>>()?;
        if params.len() != count {
            return Err(bad(format!("expected {count} parameters, found {}", params.len())));
        }
        if lines.next().is_some() {
            return Err(bad("trailing content before checksum".into()));
        }
        let mut model = Mlp::from_parts(dim, classes, widths, params).map_err(|e| bad(e.to_string()))?;
        if kind == FieldKind::Student {
            model = model.into_student();
        }
        Ok(Self { model, kac, schedule })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())
            .map_err(|e| Error::Checkpoint(format!("cannot write {}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::from_text(&text)
    }
}

fn parse<T: std::str::FromStr>(s: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.trim()
        .parse()
        .map_err(|e| Error::Checkpoint(format!("cannot parse '{s}': {e}")))
}
