//! Finite datasets and the versioned synthetic generators.

use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::SeedSpec;

/// Bumped whenever a generator's output changes for a fixed seed.
pub const GENERATOR_VERSION: u32 = 1;

/// Names accepted by [`Dataset::by_name`].
pub const DATASET_NAMES: [&str; 3] = ["two-mode-1d", "two-class-1d", "grid-2d"];

/// Weighted point cloud `X₀` with optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Array2<f64>,
    labels: Option<Vec<usize>>,
    weights: Vec<f64>,
    num_classes: usize,
}

impl Dataset {
    /// Uniformly weighted dataset.
    pub fn new(points: Array2<f64>, labels: Option<Vec<usize>>) -> Result<Self> {
        let n = points.nrows();
        let w = if n == 0 { Vec::new() } else { vec![1.0 / n as f64; n] };
        Self::with_weights(points, labels, w)
    }

    pub fn with_weights(points: Array2<f64>, labels: Option<Vec<usize>>, weights: Vec<f64>) -> Result<Self> {
        let n = points.nrows();
        if n == 0 || points.ncols() == 0 {
            return Err(Error::Param("dataset must have at least one point and one coordinate".into()));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::Param("dataset contains non-finite coordinates".into()));
        }
        if weights.len() != n || weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Param("dataset weights must be n nonnegative finite values".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Param(format!("dataset weights sum to {total}, expected 1")));
        }
        let num_classes = match &labels {
            Some(l) if l.len() != n => {
                return Err(Error::Param(format!("{} labels for {n} points", l.len())));
            }
            Some(l) => l.iter().max().map_or(0, |m| m + 1),
            None => 0,
        };
        Ok(Self {
            points,
            labels,
            weights,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn point(&self, i: usize) -> ArrayView1<'_, f64> {
        self.points.row(i)
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels.as_ref().map(|l| l[i])
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Number of classes (`0` for unlabeled data).
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Largest `‖X₀‖∞` over the points.
    pub fn max_abs(&self) -> f64 {
        self.points.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Indices of the points with class `label`.
    pub fn class_indices(&self, label: usize) -> Result<Vec<usize>> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::Param("dataset has no labels".into()))?;
        if label >= self.num_classes {
            return Err(Error::Param(format!(
                "label {label} out of range for {} classes",
                self.num_classes
            )));
        }
        Ok((0..labels.len()).filter(|&i| labels[i] == label).collect())
    }

    /// Renormalised sub-dataset of one class.
    pub fn restrict_to_class(&self, label: usize) -> Result<Dataset> {
        let idx = self.class_indices(label)?;
        let total: f64 = idx.iter().map(|&i| self.weights[i]).sum();
        let points = self.points.select(ndarray::Axis(0), &idx);
        let mut weights: Vec<f64> = idx.iter().map(|&i| self.weights[i] / total).collect();
        fix_sum(&mut weights);
        Dataset::with_weights(points, Some(vec![label; idx.len()]), weights)
    }

    /// Index drawn according to the weights.
    pub fn draw_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        self.len() - 1
    }

    /// Same points with labels removed.
    pub fn unlabeled(&self) -> Dataset {
        Dataset {
            points: self.points.clone(),
            labels: None,
            weights: self.weights.clone(),
            num_classes: 0,
        }
    }

    /// Named synthetic generator.
    pub fn by_name(name: &str, seed: SeedSpec) -> Result<Dataset> {
        match name {
            "two-mode-1d" => Ok(two_mode_1d(seed)?.unlabeled()),
            "two-class-1d" => two_mode_1d(seed),
            "grid-2d" => grid_2d(seed),
            other => Err(Error::Config(format!(
                "unknown dataset '{other}' (expected one of {})",
                DATASET_NAMES.join(", ")
            ))),
        }
    }

    /// Reads a CSV with a header of coordinate columns and an optional
    /// trailing `label` column.
    pub fn from_csv(path: &Path) -> Result<Dataset> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read dataset {}: {e}", path.display())))?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| Error::Config(format!("{} is empty", path.display())))?
            .split(',')
            .map(str::trim)
            .collect();
        let has_label = header.last() == Some(&"label");
        let d = header.len() - usize::from(has_label);
        if d == 0 {
            return Err(Error::Config(format!("{} has no coordinate columns", path.display())));
        }
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != header.len() {
                return Err(Error::Config(format!(
                    "{} line {}: expected {} fields, found {}",
                    path.display(),
                    lineno + 2,
                    header.len(),
                    fields.len()
                )));
            }
            for f in &fields[..d] {
                values.push(f.parse::<f64>().map_err(|e| {
                    Error::Config(format!("{} line {}: {e}", path.display(), lineno + 2))
                })?);
            }
            if has_label {
                labels.push(fields[d].parse::<usize>().map_err(|e| {
                    Error::Config(format!("{} line {}: {e}", path.display(), lineno + 2))
                })?);
            }
        }
        let n = values.len() / d;
        let points = Array2::from_shape_vec((n, d), values).map_err(|e| Error::Internal(e.to_string()))?;
        Dataset::new(points, has_label.then_some(labels)).map_err(|e| Error::Config(e.to_string()))
    }
}

fn fix_sum(w: &mut [f64]) {
    let total: f64 = w.iter().sum();
    if let Some(last) = w.last_mut() {
        *last += 1.0 - total;
    }
}

/// 64 points, 32 around each of `±1` with standard deviation 0.2; the label
/// is the mode (0 for the negative one).
pub fn two_mode_1d(seed: SeedSpec) -> Result<Dataset> {
    let mut rng = seed.derive("two-mode-1d").rng();
    let noise = Normal::new(0.0, 0.2).expect("valid normal");
    let mut values = Vec::with_capacity(64);
    let mut labels = Vec::with_capacity(64);
    for i in 0..64 {
        let mode = i % 2;
        let centre = if mode == 0 { -1.0 } else { 1.0 };
        values.push(centre + noise.sample(&mut rng));
        labels.push(mode);
    }
    Dataset::new(Array2::from_shape_vec((64, 1), values).unwrap(), Some(labels))
}

/// 72 points, 8 jittered copies (standard deviation 0.1) of each node of the
/// grid `{−1, 0, 1}²`, labelled by node.
pub fn grid_2d(seed: SeedSpec) -> Result<Dataset> {
    let mut rng = seed.derive("grid-2d").rng();
    let noise = Normal::new(0.0, 0.1).expect("valid normal");
    let mut values = Vec::with_capacity(144);
    let mut labels = Vec::with_capacity(72);
    for _ in 0..8 {
        for node in 0..9 {
            let gx = (node % 3) as f64 - 1.0;
            let gy = (node / 3) as f64 - 1.0;
            values.push(gx + noise.sample(&mut rng));
            values.push(gy + noise.sample(&mut rng));
            labels.push(node);
        }
    }
    Dataset::new(Array2::from_shape_vec((72, 2), values).unwrap(), Some(labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn generators_are_reproducible() {
        let s = SeedSpec::new(9, 0);
        assert_eq!(two_mode_1d(s).unwrap(), two_mode_1d(s).unwrap());
        assert_eq!(grid_2d(s).unwrap(), grid_2d(s).unwrap());
        assert_ne!(two_mode_1d(s).unwrap(), two_mode_1d(SeedSpec::new(10, 0)).unwrap());
    }

    #[test]
    fn shapes_and_classes() {
        let s = SeedSpec::default();
        let a = Dataset::by_name("two-class-1d", s).unwrap();
        assert_eq!((a.len(), a.dim(), a.num_classes()), (64, 1, 2));
        let b = Dataset::by_name("two-mode-1d", s).unwrap();
        assert_eq!(b.num_classes(), 0);
        let g = Dataset::by_name("grid-2d", s).unwrap();
        assert_eq!((g.len(), g.dim(), g.num_classes()), (72, 2, 9));
        assert!(Dataset::by_name("spiral", s).is_err());
        let sum: f64 = g.weights().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn restriction_renormalises() {
        let d = Dataset::new(array![[0.0], [1.0], [2.0]], Some(vec![0, 1, 1])).unwrap();
        let r = d.restrict_to_class(1).unwrap();
        assert_eq!(r.len(), 2);
        assert!((r.weights().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(d.restrict_to_class(2).is_err());
        assert!(d.unlabeled().restrict_to_class(0).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(Dataset::new(array![[f64::NAN]], None).is_err());
        assert!(Dataset::with_weights(array![[0.0], [1.0]], None, vec![0.5, 0.6]).is_err());
        assert!(Dataset::new(array![[0.0], [1.0]], Some(vec![0])).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "x0,x1,label\n0.5,1.0,0\n-0.25,2,1\n").unwrap();
        let d = Dataset::from_csv(&path).unwrap();
        assert_eq!(d.points(), &array![[0.5, 1.0], [-0.25, 2.0]]);
        assert_eq!(d.labels(), Some(&[0usize, 1][..]));
        assert!(Dataset::from_csv(&dir.path().join("missing.csv")).is_err());
    }
}
