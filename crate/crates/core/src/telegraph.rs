//! Closed-form law of the 1-D telegraph process at a fixed time.
//!
//! For rate `a`, speed `c` and `t > 0` the state `X(t)` has two atoms of mass
//! `e^{−at}/2` at `±ct` and, with `ζ = (a/c)·√(c²t² − x²)`, the absolutely
//! continuous density
//!
//! ```text
//! p(t, x) = (a e^{−at} / 2c) · [ I₀(ζ) + a t · I₁(ζ)/ζ ]          |x| < ct
//! ```
//!
//! The right- and left-moving parts differ by
//! `p⁺ − p⁻ = (a e^{−at} / 2c) · (a x / c) · I₁(ζ)/ζ`, which gives the signed
//! probability flux `F = c·(p⁺ − p⁻)` with `∂ₜp + ∂ₓF = 0`. Their ratio `F/p`
//! is the transport velocity of the law. Everything is evaluated with
//! exponentially scaled Bessel functions, so large `a·t` underflows gracefully
//! instead of producing `0/0`.

use std::sync::OnceLock;

use rand::Rng;

use crate::error::{Error, Result};
use crate::kac::KacParams;
use crate::numerics::bessel::{i0e, i1e_over_z};
use crate::numerics::quad::gauss_legendre8;
use crate::numerics::MonotoneCubic;
use crate::rng::SeedSpec;

/// Number of CDF knots in the inverse-sampling table.
pub const QUANTILE_KNOTS: usize = 4096;

/// Value of the law at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DensityValue {
    /// Probability mass of a boundary atom.
    Atom(f64),
    /// Value of the absolutely continuous density.
    Continuous(f64),
    /// Outside the causal cone.
    Zero,
}

impl DensityValue {
    pub fn value(&self) -> f64 {
        match *self {
            DensityValue::Atom(m) | DensityValue::Continuous(m) => m,
            DensityValue::Zero => 0.0,
        }
    }
}

/// Interior point decomposition shared by density, flux and velocity.
struct Interior {
    // log of the prefactor a e^{−at}/(2c), shifted by +ζ from the scaling
    log_scale: f64,
    i0: f64,
    // e^{−ζ} I₁(ζ)/ζ
    r: f64,
}

/// `(log p, v)` of the 1-D law with rate `a`, speed `c` at time `s > 0` and
/// interior point `|z| < c·s`.
#[inline]
pub(crate) fn interior_log_density_and_velocity(a: f64, c: f64, s: f64, z: f64) -> (f64, f64) {
    let iv = interior(a, c, s, z);
    let bracket = iv.i0 + a * s * iv.r;
    (iv.log_scale + bracket.ln(), a * z * iv.r / bracket)
}

#[inline]
fn interior(a: f64, c: f64, s: f64, x: f64) -> Interior {
    let ct = c * s;
    let ax = x.abs();
    let root = ((ct - ax) * (ct + ax)).max(0.0).sqrt();
    let zeta = a / c * root;
    Interior {
        log_scale: (a / (2.0 * c)).ln() - a * s + zeta,
        i0: i0e(zeta),
        r: i1e_over_z(zeta),
    }
}

/// Transport velocity `F/p` of the 1-D law at time `s` and point `z`.
///
/// Returns `±c` on the atoms `z = ±c·s` (within `1e-12·c·s`), and `0` for the
/// point mass at `s = 0`. Points outside the cone are a domain error.
pub fn kac_velocity(a: f64, c: f64, s: f64, z: f64) -> Result<f64> {
    if s <= 0.0 {
        if z == 0.0 {
            return Ok(0.0);
        }
        return Err(Error::OutsideSupport {
            msg: format!("z = {z} at s = 0"),
            distance: z.abs(),
        });
    }
    let edge = c * s;
    let excess = z.abs() - edge;
    if excess.abs() <= 1e-12 * edge {
        return Ok(c.copysign(z));
    }
    if excess > 0.0 {
        return Err(Error::OutsideSupport {
            msg: format!("|z| = {} beyond c·s = {edge}", z.abs()),
            distance: excess,
        });
    }
    Ok(interior_log_density_and_velocity(a, c, s, z).1)
}

/// The telegraph law at a fixed positive time.
///
/// Immutable after construction; the quantile table used by
/// [`StateDensity1D::sample`] is built on first use.
#[derive(Debug)]
pub struct StateDensity1D {
    a: f64,
    c: f64,
    t: f64,
    atom_weight: f64,
    quantiles: OnceLock<std::result::Result<MonotoneCubic, String>>,
}

impl Clone for StateDensity1D {
    fn clone(&self) -> Self {
        Self {
            a: self.a,
            c: self.c,
            t: self.t,
            atom_weight: self.atom_weight,
            quantiles: OnceLock::new(),
        }
    }
}

impl StateDensity1D {
    /// Law of the 1-D process with `params` at time `t > 0`.
    pub fn new(params: &KacParams, t: f64) -> Result<Self> {
        if params.d() != 1 {
            return Err(Error::Param(format!(
                "the analytic law is one-dimensional (got d = {})",
                params.d()
            )));
        }
        Self::from_rate_speed(params.a(), params.c(), t)
    }

    pub(crate) fn from_rate_speed(a: f64, c: f64, t: f64) -> Result<Self> {
        if !t.is_finite() || t <= 0.0 {
            return Err(Error::DegenerateLaw(t));
        }
        Ok(Self {
            a,
            c,
            t,
            atom_weight: 0.5 * (-a * t).exp(),
            quantiles: OnceLock::new(),
        })
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    /// Mass of each boundary atom, `e^{−at}/2`.
    pub fn atom_weight(&self) -> f64 {
        self.atom_weight
    }

    /// Half-width `c·t` of the support.
    pub fn half_width(&self) -> f64 {
        self.c * self.t
    }

    /// Absolutely continuous density; zero outside the open interval.
    pub fn ac_density(&self, x: f64) -> f64 {
        let lp = self.log_ac_density(x);
        if lp == f64::NEG_INFINITY {
            0.0
        } else {
            lp.exp()
        }
    }

    pub fn log_ac_density(&self, x: f64) -> f64 {
        if x.abs() >= self.half_width() {
            return f64::NEG_INFINITY;
        }
        interior_log_density_and_velocity(self.a, self.c, self.t, x).0
    }

    /// Signed flux `c·(p⁺ − p⁻)` at an interior point.
    pub fn ac_flux(&self, x: f64) -> Result<f64> {
        let edge = self.half_width();
        if x.abs() >= edge {
            return Err(Error::Domain(format!(
                "flux is defined on the open interval (-{edge}, {edge}), got x = {x}"
            )));
        }
        let iv = interior(self.a, self.c, self.t, x);
        // (a e^{−at}/2c)·c·(a x/c)·I₁(ζ)/ζ with the e^{ζ} scaling undone
        Ok(iv.log_scale.exp() * self.a * x * iv.r)
    }

    /// Transport velocity `F/p`; `±c` on the atoms.
    pub fn velocity(&self, x: f64) -> Result<f64> {
        kac_velocity(self.a, self.c, self.t, x)
    }

    /// Atom mass at `|x| = ct`, density inside, zero outside.
    pub fn density_at(&self, x: f64) -> DensityValue {
        let edge = self.half_width();
        let ax = x.abs();
        if ax == edge {
            DensityValue::Atom(self.atom_weight)
        } else if ax > edge {
            DensityValue::Zero
        } else {
            DensityValue::Continuous(self.ac_density(x))
        }
    }

    /// Mass of the absolutely continuous part, `1 − e^{−at}`.
    pub fn ac_mass(&self) -> f64 {
        -(-self.a * self.t).exp_m1()
    }

    fn build_quantiles(&self) -> std::result::Result<MonotoneCubic, String> {
        let edge = self.half_width();
        let n = QUANTILE_KNOTS;
        let xs: Vec<f64> = (0..n)
            .map(|i| -edge + 2.0 * edge * i as f64 / (n - 1) as f64)
            .collect();
        let mut cdf = Vec::with_capacity(n);
        cdf.push(0.0);
        let mut acc = 0.0;
        for w in xs.windows(2) {
            let piece = gauss_legendre8(|x| self.ac_density(x), w[0], w[1]);
            if !(piece.is_finite() && piece >= 0.0) {
                return Err(format!("CDF increment {piece} on [{}, {}]", w[0], w[1]));
            }
            acc += piece;
            cdf.push(acc);
        }
        let total = acc;
        if total.is_nan() || total <= 0.0 {
            return Err(format!("absolutely continuous mass {total} is not positive"));
        }
        let expected = self.ac_mass();
        if (total - expected).abs() > 1e-6 * expected.max(1e-300) + 1e-12 {
            return Err(format!(
                "tabulated AC mass {total} disagrees with 1 − e^(−at) = {expected}"
            ));
        }
        // knots where the CDF is flat (underflowed tails) carry no mass
        let mut us = Vec::with_capacity(n);
        let mut qs = Vec::with_capacity(n);
        for (u, x) in cdf.iter().map(|v| v / total).zip(&xs) {
            if us.last().is_none_or(|&last| u > last) {
                us.push(u);
                qs.push(*x);
            }
        }
        if us.len() < 2 {
            return Err("quantile table has fewer than two distinct knots".into());
        }
        // pin the ends so that u ∈ [0, 1] maps inside the support
        *us.last_mut().unwrap() = 1.0;
        *qs.last_mut().unwrap() = edge;
        us[0] = 0.0;
        qs[0] = -edge;
        MonotoneCubic::new(us, qs).map_err(|e| e.to_string())
    }

    fn quantile_table(&self) -> Result<&MonotoneCubic> {
        self.quantiles
            .get_or_init(|| self.build_quantiles())
            .as_ref()
            .map_err(|msg| Error::Internal(format!("quantile table: {msg}")))
    }

    /// Quantile of the normalised absolutely continuous part at level `u`.
    pub fn ac_quantile(&self, u: f64) -> Result<f64> {
        Ok(self.quantile_table()?.eval(u))
    }

    /// Draws one state using `rng`.
    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        let table = self.quantile_table()?;
        let edge = self.half_width();
        let u: f64 = rng.random();
        if u < 2.0 * self.atom_weight {
            return Ok(if u < self.atom_weight { -edge } else { edge });
        }
        let v: f64 = rng.random();
        Ok(table.eval(v).clamp(-edge, edge))
    }

    /// `n` i.i.d. exact draws.
    pub fn sample(&self, n: usize, seed: SeedSpec) -> Result<Vec<f64>> {
        let mut rng = seed.rng();
        (0..n).map(|_| self.sample_with(&mut rng)).collect()
    }
}

/// Atom mass, density value or zero at `x`, for `t > 0`.
pub fn density_at(params: &KacParams, t: f64, x: f64) -> Result<DensityValue> {
    Ok(StateDensity1D::new(params, t)?.density_at(x))
}

/// Signed probability flux at an interior point.
pub fn flux_at(params: &KacParams, t: f64, x: f64) -> Result<f64> {
    StateDensity1D::new(params, t)?.ac_flux(x)
}

/// `n` exact draws from the law at time `t > 0`.
pub fn sample_exact(params: &KacParams, t: f64, n: usize, seed: SeedSpec) -> Result<Vec<f64>> {
    StateDensity1D::new(params, t)?.sample(n, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::quad::integrate;

    fn p(a: f64, c: f64) -> KacParams {
        KacParams::new(a, c, 1).unwrap()
    }

    #[test]
    fn atoms_and_outside() {
        let law = StateDensity1D::new(&p(2.0, 1.0), 1.0).unwrap();
        assert_eq!(law.density_at(1.0), DensityValue::Atom(0.5 * (-2.0f64).exp()));
        assert!((law.atom_weight() - 0.067_667_641_618_306_35).abs() < 1e-15);
        assert_eq!(law.density_at(1.5), DensityValue::Zero);
        assert_eq!(law.density_at(-1.0 - 1e-12), DensityValue::Zero);
        assert!(matches!(law.density_at(0.3), DensityValue::Continuous(v) if v > 0.0));
    }

    #[test]
    fn degenerate_time_rejected() {
        assert!(matches!(StateDensity1D::new(&p(1.0, 1.0), 0.0), Err(Error::DegenerateLaw(_))));
        assert!(StateDensity1D::new(&KacParams::new(1.0, 1.0, 2).unwrap(), 1.0).is_err());
    }

    #[test]
    fn normalisation() {
        for (a, c) in [(2.0, 1.0), (25.0, 2.0), (3000.0, 20.0)] {
            for t in [0.05, 0.1, 0.5, 1.0, 2.0] {
                let law = StateDensity1D::new(&p(a, c), t).unwrap();
                let e = law.half_width();
                let mass = integrate(|x| law.ac_density(x), -e, e, 1e-13, 1e-12, 2000).value;
                let total = mass + 2.0 * law.atom_weight();
                assert!((total - 1.0).abs() < 1e-6, "a={a} c={c} t={t}: {total}");
            }
        }
    }

    #[test]
    fn symmetry_and_speed_bound() {
        let law = StateDensity1D::new(&p(3.0, 1.5), 0.8).unwrap();
        let e = law.half_width();
        for k in 1..40 {
            let x = e * (k as f64 / 40.0 - 0.5) * 1.98;
            assert!((law.ac_density(x) - law.ac_density(-x)).abs() <= 1e-14 * law.ac_density(x));
            let f = law.ac_flux(x).unwrap();
            assert!((f + law.ac_flux(-x).unwrap()).abs() <= 1e-14 * f.abs().max(1e-300));
            assert!(f.abs() <= 1.5 * law.ac_density(x));
            if x != 0.0 {
                assert_eq!(f.signum(), x.signum());
            }
        }
        assert_eq!(law.ac_flux(0.0).unwrap(), 0.0);
        assert!(law.ac_flux(e).is_err());
    }

    #[test]
    fn velocity_at_atoms_and_centre() {
        assert_eq!(kac_velocity(2.0, 1.0, 0.5, 0.5).unwrap(), 1.0);
        assert_eq!(kac_velocity(2.0, 1.0, 0.5, -0.5).unwrap(), -1.0);
        assert_eq!(kac_velocity(2.0, 1.0, 0.5, 0.0).unwrap(), 0.0);
        assert_eq!(kac_velocity(2.0, 1.0, 0.0, 0.0).unwrap(), 0.0);
        assert!(kac_velocity(2.0, 1.0, 0.5, 0.51).is_err());
    }

    #[test]
    fn no_underflow_at_large_rate() {
        // (a, c) = (3000, 20): a·t = 3000 underflows e^{−at} by itself
        let law = StateDensity1D::new(&p(3000.0, 20.0), 1.0).unwrap();
        assert!(law.log_ac_density(15.0).is_finite());
        let v = law.velocity(19.0).unwrap();
        assert!(v.is_finite() && v > 0.0 && v < 20.0);
        let xs = law.sample(1000, SeedSpec::new(1, 2)).unwrap();
        assert!(xs.iter().all(|x| x.abs() <= 20.0));
    }

    #[test]
    fn sampler_hits_atoms_at_expected_rate() {
        let law = StateDensity1D::new(&p(1.0, 1.0), 0.5).unwrap();
        let n = 100_000;
        let xs = law.sample(n, SeedSpec::new(77, 0)).unwrap();
        let boundary = xs.iter().filter(|x| x.abs() == 0.5).count() as f64 / n as f64;
        let q = (-0.5f64).exp();
        let sigma = (q * (1.0 - q) / n as f64).sqrt();
        assert!((boundary - q).abs() < 3.0 * sigma, "{boundary} vs {q}");
        assert!(xs.iter().all(|x| x.abs() <= 0.5));
    }
}
