use kacflow_core::metrics::{
    check_w2_lipschitz_in_time, cone_audit, w2_1d, w2_assignment, w2_product, w2_sliced, w2_to_dataset,
};
use kacflow_core::velocity::{MarginalSampler, StateSampler};
use kacflow_core::{Dataset, KacParams, Schedule, SeedSpec};
use ndarray::Array2;
use proptest::prelude::*;
use rand_distr::{Distribution, Normal};

fn seed(stream: u64) -> SeedSpec {
    SeedSpec::new(99, stream)
}

fn gaussian_cloud(n: usize, d: usize, shift: &[f64], s: SeedSpec) -> Array2<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut rng = s.rng();
    Array2::from_shape_fn((n, d), |(_, j)| normal.sample(&mut rng) + shift[j])
}

#[test]
fn shifted_gaussians_in_one_dimension() {
    let a = gaussian_cloud(20_000, 1, &[0.0], seed(1));
    let b = gaussian_cloud(20_000, 1, &[1.0], seed(2));
    let r = w2_1d(&a.column(0).to_vec(), &b.column(0).to_vec(), seed(3)).unwrap();
    assert!((r.value - 1.0).abs() < 0.03 + 3.0 * r.stderr, "{r:?}");
}

#[test]
fn product_w2_of_a_shift_is_its_length() {
    let a = gaussian_cloud(20_000, 3, &[0.0; 3], seed(4));
    let b = gaussian_cloud(20_000, 3, &[0.6, -0.8, 0.0], seed(5));
    let r = w2_product(a.view(), b.view(), seed(6)).unwrap();
    assert!((r.value - 1.0).abs() < 0.05, "{r:?}");
}

#[test]
fn sliced_w2_is_stable_across_projection_seeds() {
    let a = gaussian_cloud(5000, 2, &[0.0, 0.0], seed(7));
    let b = gaussian_cloud(5000, 2, &[1.0, 0.5], seed(8));
    let values: Vec<f64> = (0..10)
        .map(|k| w2_sliced(a.view(), b.view(), 256, seed(100 + k)).unwrap().value)
        .collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt();
    assert!(sd / mean < 0.05, "coefficient of variation {}", sd / mean);
}

#[test]
fn exact_draws_of_the_data_are_close_to_the_data() {
    for name in ["two-mode-1d", "grid-2d"] {
        let data = Dataset::by_name(name, seed(9)).unwrap();
        let mut rng = seed(10).rng();
        let mut xs = Array2::zeros((4000, data.dim()));
        for i in 0..4000 {
            xs.row_mut(i).assign(&data.point(data.draw_index(&mut rng)));
        }
        let r = w2_to_dataset(xs.view(), &data, 64, seed(11)).unwrap();
        // the mode masses fluctuate binomially, which dominates the distance
        assert!(r.value < 4.0 * r.stderr + 0.02, "{name}: {r:?}");
    }
}

#[test]
fn mean_reverting_marginals_are_lipschitz_in_time() {
    let data = Dataset::by_name("two-mode-1d", seed(12)).unwrap();
    let p = KacParams::new(25.0, 2.0, 1).unwrap();
    for sched in [Schedule::linear(), Schedule::quadratic()] {
        let rep = check_w2_lipschitz_in_time(&p, &sched, &data, &[0.2, 0.4, 0.6, 0.8, 1.0], 20_000, seed(13), 1.0).unwrap();
        assert!(rep.passed, "{:?}", rep.pairs.iter().filter(|q| !q.passed).collect::<Vec<_>>());
    }
}

#[test]
fn exact_marginal_states_stay_inside_the_cones() {
    let data = Dataset::by_name("grid-2d", seed(14)).unwrap();
    let p = KacParams::new(25.0, 2.0, 2).unwrap();
    let sched = Schedule::quadratic();
    let sampler = MarginalSampler::new(p, sched.clone(), data.clone()).unwrap();
    let times = [0.1, 0.5, 1.0];
    let clouds: Vec<Array2<f64>> = times
        .iter()
        .enumerate()
        .map(|(k, &t)| sampler.sample(t, 2000, seed(15).child(k as u64)).unwrap().states)
        .collect();
    let audit = cone_audit(times.iter().copied().zip(clouds.iter().map(|c| c.view())), &data, &p, &sched);
    assert_eq!(audit.checked, 6000);
    assert_eq!(audit.violations, 0);
}

fn spectral_norm_2x2(a: &Array2<f64>) -> f64 {
    let ata = a.t().dot(a);
    let (p, q, r) = (ata[[0, 0]], ata[[0, 1]], ata[[1, 1]]);
    (0.5 * (p + r) + (0.25 * (p - r).powi(2) + q * q).sqrt()).sqrt()
}

fn cloud(max: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-3.0..3.0f64, 2 * max).prop_map(move |v| Array2::from_shape_vec((max, 2), v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn lipschitz_maps_contract_w2_by_their_constant(
        mu in cloud(5),
        nu in cloud(5),
        entries in prop::collection::vec(-2.0..2.0f64, 4),
        beta in -1.0..1.0f64,
    ) {
        let a = Array2::from_shape_vec((2, 2), entries).unwrap();
        let map = |x: &Array2<f64>| x.dot(&a.t()) + x.mapv(|v| beta * v.sin());
        let lip = spectral_norm_2x2(&a) + beta.abs();
        let before = w2_assignment(mu.view(), nu.view()).unwrap();
        let after = w2_assignment(map(&mu).view(), map(&nu).view()).unwrap();
        prop_assert!(after <= lip * before + 1e-12);
    }

    #[test]
    fn pushforwards_are_as_close_as_the_maps(
        nu in cloud(6),
        shift in -1.0..1.0f64,
        gamma in -2.0..2.0f64,
    ) {
        let f = nu.mapv(|v| v.tanh());
        let g = nu.mapv(|v| gamma * v + shift);
        let l2 = ((&f - &g).mapv(|e| e * e).sum() / nu.nrows() as f64).sqrt();
        prop_assert!(w2_assignment(f.view(), g.view()).unwrap() <= l2 + 1e-12);
    }
}
