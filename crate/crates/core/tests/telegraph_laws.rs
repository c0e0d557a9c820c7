mod common;

use common::{ks_critical, ks_one_sample, ks_two_sample, mean, variance};
use kacflow_core::{sample_exact, sample_path, sample_state, KacParams, SeedSpec, StateDensity1D};
use rand_distr::{Distribution, Normal};

fn seed(stream: u64) -> SeedSpec {
    SeedSpec::new(4242, stream)
}

fn telegraph_variance(a: f64, c: f64, t: f64) -> f64 {
    c * c / a * (t - (1.0 - (-2.0 * a * t).exp()) / (2.0 * a))
}

#[test]
fn exact_sampler_agrees_with_path_simulation() {
    let p = KacParams::new(2.0, 1.0, 1).unwrap();
    let n = 20_000;
    let exact = sample_exact(&p, 0.7, n, seed(1)).unwrap();
    let paths: Vec<f64> = (0..n as u64)
        .map(|i| sample_path(&p, 0.7, seed(2).child(i)).unwrap().position(0.7)[0])
        .collect();
    let d = ks_two_sample(&exact, &paths);
    assert!(d < ks_critical(n, n), "KS distance {d}");
}

#[test]
fn second_moment_matches_velocity_correlation() {
    for (a, c, t) in [(3.0, 1.5, 0.8), (0.5, 2.0, 1.2), (25.0, 2.0, 0.3)] {
        let p = KacParams::new(a, c, 1).unwrap();
        let xs = sample_exact(&p, t, 200_000, seed(3)).unwrap();
        let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let m = mean(&sq);
        let se = (variance(&sq) / sq.len() as f64).sqrt();
        let expect = telegraph_variance(a, c, t);
        assert!((m - expect).abs() < 4.0 * se, "a={a}: E x^2 = {m} vs {expect} (se {se})");
    }
}

#[test]
fn fast_switching_approaches_brownian_motion() {
    // c²/a held at 1: the law tends to N(0, t)
    let (a, c, t) = (400.0, 20.0, 1.0);
    let p = KacParams::new(a, c, 1).unwrap();
    let n = 20_000;
    let xs = sample_exact(&p, t, n, seed(4)).unwrap();
    let normal = Normal::new(0.0, telegraph_variance(a, c, t).sqrt()).unwrap();
    let mut rng = seed(5).rng();
    let gauss: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
    let d = ks_two_sample(&xs, &gauss);
    assert!(d < ks_critical(n, n), "KS distance to Gaussian {d}");
}

#[test]
fn switching_gaps_are_exponential() {
    let a = 5.0;
    let p = KacParams::new(a, 1.0, 1).unwrap();
    let mut gaps = Vec::new();
    for i in 0..400 {
        let path = sample_path(&p, 10.0, seed(6).child(i)).unwrap();
        let mut prev = 0.0;
        // only gaps opened well before the horizon, so none are censored
        for t in path.jump_times() {
            if prev < 5.0 {
                gaps.push(t - prev);
            }
            prev = t;
        }
    }
    let d = ks_one_sample(&gaps, |x| 1.0 - (-a * x).exp());
    let crit = 1.63 / (gaps.len() as f64).sqrt();
    assert!(d < crit, "KS distance {d} over {} gaps", gaps.len());
}

#[test]
fn path_moves_at_speed_c_in_its_current_direction() {
    let p = KacParams::new(3.0, 1.7, 2).unwrap();
    let path = sample_path(&p, 2.0, seed(7)).unwrap();
    let jumps = path.jump_times();
    let eps = 1e-7;
    for k in 0..200 {
        let t = 0.01 * k as f64;
        if jumps.iter().any(|&s| (s - t).abs() < 2.0 * eps) {
            continue;
        }
        let (x0, x1) = (path.position(t), path.position(t + eps));
        for ((a, b), dir) in x0.iter().zip(&x1).zip(path.direction_at(t)) {
            assert!(((b - a) / eps - 1.7 * dir).abs() < 1e-5);
        }
    }
}

#[test]
fn coordinates_are_uncorrelated() {
    let p = KacParams::new(2.0, 1.0, 3).unwrap();
    let n = 40_000;
    let xs = sample_state(&p, 0.5, n, seed(8)).unwrap();
    let bound = 4.0 / (n as f64).sqrt();
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        let (u, v) = (xs.column(i).to_vec(), xs.column(j).to_vec());
        let cov: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() / n as f64 - mean(&u) * mean(&v);
        let r = cov / (variance(&u) * variance(&v)).sqrt();
        assert!(r.abs() < bound, "corr({i}, {j}) = {r}");
        let u2: Vec<f64> = u.iter().map(|x| x * x).collect();
        let v2: Vec<f64> = v.iter().map(|x| x * x).collect();
        let joint: Vec<f64> = u2.iter().zip(&v2).map(|(a, b)| a * b).collect();
        let r2 = (mean(&joint) - mean(&u2) * mean(&v2)) / (variance(&u2) * variance(&v2)).sqrt();
        assert!(r2.abs() < bound, "squared corr({i}, {j}) = {r2}");
    }
}

#[test]
fn density_solves_the_continuity_equation_at_high_rate() {
    let p = KacParams::new(25.0, 2.0, 1).unwrap();
    let h = 1e-5;
    for t in [0.05, 0.3, 1.0] {
        let now = StateDensity1D::new(&p, t).unwrap();
        let before = StateDensity1D::new(&p, t - h).unwrap();
        let after = StateDensity1D::new(&p, t + h).unwrap();
        let peak = now.ac_density(0.0);
        for j in 0..41 {
            let x = 2.0 * t * 0.95 * (j as f64 / 20.0 - 1.0);
            let dp = (after.ac_density(x) - before.ac_density(x)) / (2.0 * h);
            let df = (now.ac_flux(x + h).unwrap() - now.ac_flux(x - h).unwrap()) / (2.0 * h);
            assert!((dp + df).abs() < 1e-4 * peak.max(1.0), "t={t} x={x}: residual {}", dp + df);
        }
    }
}

#[test]
fn atoms_carry_the_no_switch_probability() {
    let p = KacParams::new(1.5, 1.0, 1).unwrap();
    let t = 0.8;
    let n = 100_000;
    let xs = sample_exact(&p, t, n, seed(9)).unwrap();
    let right = xs.iter().filter(|&&x| x >= t).count() as f64 / n as f64;
    let left = xs.iter().filter(|&&x| x <= -t).count() as f64 / n as f64;
    let w = StateDensity1D::new(&p, t).unwrap().atom_weight();
    let se = (w * (1.0 - w) / n as f64).sqrt();
    assert!((right - w).abs() < 4.0 * se && (left - w).abs() < 4.0 * se, "{left} {right} vs {w}");
}
