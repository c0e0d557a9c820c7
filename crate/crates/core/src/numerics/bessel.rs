//! Modified Bessel functions of the first kind, orders 0 and 1.
//!
//! All public functions work in exponentially scaled form, `e^{-z} I_ν(z)`,
//! so arguments in the thousands never overflow. Small arguments use the
//! ascending power series; from [`SERIES_LIMIT`] on the Hankel asymptotic
//! expansion is used, whose truncation error there is below `e^{-2z}`.

const SERIES_LIMIT: f64 = 20.0;
const MAX_TERMS: usize = 200;

/// `e^{-z} I₀(z)` for `z ≥ 0`.
pub fn i0e(z: f64) -> f64 {
    debug_assert!(z >= 0.0);
    if z < SERIES_LIMIT {
        i0_series(z) * (-z).exp()
    } else {
        asymptotic(0.0, z)
    }
}

/// `e^{-z} I₁(z)` for `z ≥ 0`.
pub fn i1e(z: f64) -> f64 {
    debug_assert!(z >= 0.0);
    if z < SERIES_LIMIT {
        z * i1_over_z_series(z) * (-z).exp()
    } else {
        asymptotic(1.0, z)
    }
}

/// `e^{-z} I₁(z) / z`, continuous at `z = 0` where it equals `1/2`.
pub fn i1e_over_z(z: f64) -> f64 {
    debug_assert!(z >= 0.0);
    if z < SERIES_LIMIT {
        i1_over_z_series(z) * (-z).exp()
    } else {
        asymptotic(1.0, z) / z
    }
}

/// Unscaled `I₀(z)`; overflows to infinity beyond `z ≈ 713`.
pub fn i0(z: f64) -> f64 {
    let z = z.abs();
    if z < SERIES_LIMIT {
        i0_series(z)
    } else {
        asymptotic(0.0, z) * z.exp()
    }
}

/// Unscaled `I₁(z)`, odd in `z`.
pub fn i1(z: f64) -> f64 {
    let a = z.abs();
    let v = if a < SERIES_LIMIT {
        a * i1_over_z_series(a)
    } else {
        asymptotic(1.0, a) * a.exp()
    };
    v.copysign(z)
}

// Σ (z²/4)^k / (k!)²
fn i0_series(z: f64) -> f64 {
    let q = 0.25 * z * z;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..MAX_TERMS {
        let kf = k as f64;
        term *= q / (kf * kf);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

// I₁(z)/z = ½ Σ (z²/4)^k / (k! (k+1)!)
fn i1_over_z_series(z: f64) -> f64 {
    let q = 0.25 * z * z;
    let mut term = 0.5;
    let mut sum = 0.5;
    for k in 1..MAX_TERMS {
        let kf = k as f64;
        term *= q / (kf * (kf + 1.0));
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

// e^{-z} I_ν(z) ~ (2πz)^{-1/2} Σ_k (-1)^k a_k(ν) / z^k
fn asymptotic(nu: f64, z: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..MAX_TERMS {
        let odd = (2 * k - 1) as f64;
        let next = -term * (mu - odd * odd) / (8.0 * k as f64 * z);
        if next.abs() >= term.abs() {
            break;
        }
        term = next;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    sum / (2.0 * std::f64::consts::PI * z).sqrt()
}

#[cfg(test)]
#[allow(clippy::excessive_precision)]
mod tests {
    use super::*;

    // (z, e^{-z} I0(z), e^{-z} I1(z)) at 40 significant digits (mpmath).
    const REFERENCE: &[(f64, f64, f64)] = &[
        (0.0, 1.0, 0.0),
        (1e-10, 0.999_999_999_900_000_000_01, 4.999_999_999_5e-11),
        (1e-3, 0.999_000_749_583_515_559_4, 0.000_499_500_312_354_221_336_98),
        (0.5, 0.645_035_270_449_150_068_11, 0.156_420_803_184_871_697_14),
        (1.0, 0.465_759_607_593_640_436_5, 0.207_910_415_349_708_448_87),
        (2.5, 0.270_046_441_612_202_739_56, 0.206_584_649_531_266_554_21),
        (7.9, 0.144_369_864_141_041_924_84, 0.134_896_499_439_893_770_81),
        (8.1, 0.142_511_809_488_295_280_42, 0.133_400_688_325_836_630_05),
        (15.0, 0.103_899_531_448_822_721_43, 0.100_374_175_045_166_655_29),
        (19.9, 0.090_008_588_864_389_594_038, 0.087_717_102_131_706_098_075),
        (20.1, 0.089_553_763_620_613_447_243, 0.087_296_851_843_201_594_95),
        (35.0, 0.067_678_378_350_413_625_728, 0.066_704_431_729_491_439_079),
        (50.0, 0.056_561_626_647_454_192_53, 0.055_993_123_892_895_399_644),
        (120.0, 0.036_456_396_116_413_918_393, 0.036_304_175_332_028_956_452),
        (300.0, 0.023_042_558_415_085_461_794, 0.023_004_122_040_268_950_902),
        (699.5, 0.015_086_686_644_176_135_437, 0.015_075_898_876_968_479_013),
    ];

    fn rel(a: f64, b: f64) -> f64 {
        if b == 0.0 {
            a.abs()
        } else {
            ((a - b) / b).abs()
        }
    }

    #[test]
    fn scaled_matches_high_precision_reference() {
        for &(z, r0, r1) in REFERENCE {
            assert!(rel(i0e(z), r0) < 1e-12, "i0e({z}) = {} vs {r0}", i0e(z));
            assert!(rel(i1e(z), r1) < 1e-12, "i1e({z}) = {} vs {r1}", i1e(z));
            if z > 0.0 {
                assert!(rel(i1e_over_z(z), r1 / z) < 1e-12);
            }
        }
    }

    #[test]
    fn unscaled_small_arguments() {
        assert_eq!(i0(0.0), 1.0);
        assert_eq!(i1(0.0), 0.0);
        assert!(rel(i0(1.0), 0.465_759_607_593_640_436_5 * 1f64.exp()) < 1e-13);
        assert!(rel(i1(-1.0), -0.207_910_415_349_708_448_87 * 1f64.exp()) < 1e-13);
    }

    #[test]
    fn i1_over_z_limit() {
        assert_eq!(i1e_over_z(0.0), 0.5);
        assert!((i1e_over_z(1e-9) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn continuous_across_method_switch() {
        let below = SERIES_LIMIT - 1e-9;
        assert!(rel(i0e(below), i0e(SERIES_LIMIT)) < 1e-9);
        assert!(rel(i1e(below), i1e(SERIES_LIMIT)) < 1e-9);
    }

    #[test]
    fn huge_arguments_do_not_overflow() {
        for z in [1e3, 1e4, 1e6] {
            let v = i0e(z);
            assert!(v.is_finite() && v > 0.0);
            assert!(rel(v, 1.0 / (2.0 * std::f64::consts::PI * z).sqrt()) < 1.0 / z);
        }
    }
}
