//! Clausen function, the power-law radius law, and the radius antiderivative
//! of the boundary-area integrand.

use std::f64::consts::PI;
use std::sync::OnceLock;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{alpha_angle, unit, Branch, Point2, BETA_CLAMP};

const TWO_PI: f64 = 2.0 * PI;

/// `zeta(2k)` for `k = 1..=ZETA_TERMS`.
const ZETA_TERMS: usize = 40;

fn zeta_even() -> &'static [f64; ZETA_TERMS] {
    static TABLE: OnceLock<[f64; ZETA_TERMS]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [0.0; ZETA_TERMS];
        t[0] = PI * PI / 6.0;
        for (k, slot) in t.iter_mut().enumerate().skip(1) {
            let s = 2.0 * (k + 1) as f64;
            // Direct sum plus Euler-Maclaurin tail; exact to rounding for s >= 4.
            let n = 64.0f64;
            let mut acc = 0.0;
            for m in (1..64).rev() {
                acc += (m as f64).powf(-s);
            }
            let tail = n.powf(1.0 - s) / (s - 1.0) + 0.5 * n.powf(-s) + s / 12.0 * n.powf(-s - 1.0);
            *slot = acc + tail;
        }
        t
    })
}

/// Clausen function of order two, `sum_k sin(k theta) / k^2`.
///
/// Reduced to `[0, pi]` by periodicity and oddness, then evaluated with the
/// expansion `theta - theta log theta + sum zeta(2k) theta^(2k+1) / (k (2k+1) (2 pi)^(2k))`,
/// whose ratio is at most `1/4` there.
pub fn clausen2(theta: f64) -> f64 {
    if !theta.is_finite() {
        return f64::NAN;
    }
    let mut t = theta.rem_euclid(TWO_PI);
    let mut sign = 1.0;
    if t > PI {
        t = TWO_PI - t;
        sign = -1.0;
    }
    if t == 0.0 {
        return 0.0;
    }
    let zeta = zeta_even();
    let q = (t / TWO_PI) * (t / TWO_PI);
    let mut pow = t * q;
    let mut sum = 0.0;
    for (k0, z) in zeta.iter().enumerate() {
        let k = (k0 + 1) as f64;
        let term = z * pow / (k * (2.0 * k + 1.0));
        sum += term;
        if term.abs() < 1e-18 * sum.abs().max(1e-300) {
            break;
        }
        pow *= q;
    }
    sign * (t - t * t.ln() + sum)
}

/// Power-law radius law on `[r_min, r_max]` and the frame of side `s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusLaw {
    pub r_min: f64,
    pub r_max: f64,
    pub s: f64,
}

impl RadiusLaw {
    pub fn new(r_min: f64, r_max: f64, s: f64) -> Result<Self> {
        let law = RadiusLaw { r_min, r_max, s };
        law.validate()?;
        Ok(law)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_min > 0.0 && self.r_min < self.r_max && self.r_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "radius law needs 0 < r_min < r_max < inf, got ({}, {})",
                self.r_min, self.r_max
            )));
        }
        if !(self.s >= 0.0 && self.s.is_finite()) {
            return Err(Error::InvalidParameter(format!("frame side must be >= 0, got {}", self.s)));
        }
        Ok(())
    }

    /// `r_min^-2 - r_max^-2`.
    pub fn inv_sq_span(&self) -> f64 {
        self.r_min.powi(-2) - self.r_max.powi(-2)
    }

    /// Normalising constant `Z = 2 / (r_min^-2 - r_max^-2)` of the density.
    pub fn norm_const(&self) -> f64 {
        2.0 / self.inv_sq_span()
    }

    /// Side of the square `B = [-r_max, s + r_max]^2` of leaf centres.
    pub fn frame_side(&self) -> f64 {
        self.s + 2.0 * self.r_max
    }

    /// `|B|`.
    pub fn frame_area(&self) -> f64 {
        self.frame_side().powi(2)
    }

    /// Lower-left corner of `B`.
    pub fn frame_origin(&self) -> f64 {
        -self.r_max
    }

    /// Factor turning an unscaled mass into a probability: `1 / (|B| (r_min^-2 - r_max^-2))`.
    pub fn scale(&self) -> f64 {
        1.0 / (self.frame_area() * self.inv_sq_span())
    }

    pub fn with_frame(&self, s: f64) -> Result<Self> {
        RadiusLaw::new(self.r_min, self.r_max, s)
    }
}

pub fn power_law_pdf(r: f64, law: &RadiusLaw) -> f64 {
    if r < law.r_min || r > law.r_max {
        0.0
    } else {
        law.norm_const() * r.powi(-3)
    }
}

pub fn power_law_cdf(r: f64, law: &RadiusLaw) -> f64 {
    if r <= law.r_min {
        0.0
    } else if r >= law.r_max {
        1.0
    } else {
        (law.r_min.powi(-2) - r.powi(-2)) / law.inv_sq_span()
    }
}

/// Inverse CDF.
pub fn power_law_quantile(u: f64, law: &RadiusLaw) -> f64 {
    if u <= 0.0 {
        return law.r_min;
    }
    if u >= 1.0 {
        return law.r_max;
    }
    (law.r_min.powi(-2) - u * law.inv_sq_span()).powf(-0.5).clamp(law.r_min, law.r_max)
}

pub fn power_law_sample<R: Rng + ?Sized>(law: &RadiusLaw, rng: &mut R) -> f64 {
    power_law_quantile(rng.random::<f64>(), law)
}

/// Pair-dependent constants of the antiderivative, shared by both branches.
#[derive(Clone, Copy, Debug)]
pub struct PairTerms {
    pub d: f64,
    pub alpha: f64,
    /// `<x_i, n(alpha - pi/2)>`
    pub tangential: f64,
    /// `<x_i, n(alpha)>`
    pub radial: f64,
}

impl PairTerms {
    pub fn new(xi: Point2, xj: Point2) -> Result<Self> {
        let alpha = alpha_angle(xi, xj)?;
        Ok(PairTerms {
            d: xi.dist(xj),
            alpha,
            tangential: xi.dot(unit(alpha - PI / 2.0)),
            radial: xi.dot(unit(alpha)),
        })
    }

    fn beta(&self, r: f64) -> Result<f64> {
        let q = self.d / (2.0 * r);
        if q > 1.0 + BETA_CLAMP {
            return Err(Error::InvalidParameter(format!(
                "radius {r} is below the pair critical radius {}",
                self.d / 2.0
            )));
        }
        Ok(q.min(1.0).acos())
    }

    /// `b(r)` for this pair and branch.
    pub fn b(&self, r: f64, branch: Branch) -> Result<f64> {
        let beta = self.beta(r)?;
        let pm = branch.sign();
        let (d, alpha) = (self.d, self.alpha);
        Ok(alpha * r.ln() - pm * (0.5 * clausen2(2.0 * beta + PI) + beta * (d / r).ln())
            - d / (4.0 * r * r) * self.tangential
            + pm * (self.radial / d) * (beta - 0.5 * (2.0 * beta).sin()))
    }

    /// Boundary term `A(x_ij; r)` of the intersection point on circle `i`.
    pub fn area_term(&self, r: f64, branch: Branch) -> Result<f64> {
        let beta = self.beta(r)?;
        let pm = branch.sign();
        let sin_b = (1.0 - (self.d / (2.0 * r)).min(1.0).powi(2)).sqrt();
        Ok(0.5 * r * r * (self.alpha + pm * beta) + self.d / 4.0 * self.tangential + pm * 0.5 * r * sin_b * self.radial)
    }
}

/// Antiderivative in `r` of `2 r^-3 A(x_ij; r)`, defined up to an additive constant.
pub fn antiderivative_b(r: f64, branch: Branch, xi: Point2, xj: Point2) -> Result<f64> {
    PairTerms::new(xi, xj)?.b(r, branch)
}

/// The integrand `2 r^-3 A(x_ij; r)` whose antiderivative is [`antiderivative_b`].
pub fn boundary_integrand(r: f64, branch: Branch, xi: Point2, xj: Point2) -> Result<f64> {
    Ok(2.0 * r.powi(-3) * PairTerms::new(xi, xj)?.area_term(r, branch)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Naive partial sums with an averaged tail; adequate away from 0 mod 2pi.
    fn clausen_series(theta: f64, n: usize) -> f64 {
        let mut s = 0.0;
        for k in (1..=n).rev() {
            s += (k as f64 * theta).sin() / (k as f64 * k as f64);
        }
        s
    }

    /// Catalan's constant by the alternating series with pairwise averaging.
    fn catalan() -> f64 {
        let term = |k: usize| {
            let m = (2 * k + 1) as f64;
            if k.is_multiple_of(2) {
                1.0 / (m * m)
            } else {
                -1.0 / (m * m)
            }
        };
        let n = 200_000;
        let partial: f64 = (0..n).rev().map(term).sum();
        // Average of consecutive partial sums cancels the leading tail term.
        partial + 0.5 * term(n)
    }

    #[test]
    fn clausen_special_values() {
        assert_eq!(clausen2(0.0), 0.0);
        assert!(clausen2(PI).abs() < 1e-15);
        assert!((clausen2(PI / 2.0) - catalan()).abs() < 1e-12);
        assert!((clausen2(PI / 2.0) - 0.915_965_594_177_219).abs() < 1e-15);
        // Maximum at pi/3 equals 1.01494160640965362502.
        assert!((clausen2(PI / 3.0) - 1.014_941_606_409_653_7).abs() < 1e-14);
    }

    #[test]
    fn clausen_matches_series() {
        for k in 1..40 {
            let t = -4.0 * PI + k as f64 * 0.31;
            let reduced = t.rem_euclid(TWO_PI);
            if !(0.3..=TWO_PI - 0.3).contains(&reduced) {
                continue;
            }
            assert!((clausen2(t) - clausen_series(t, 400_000)).abs() < 1e-9, "{t}");
        }
    }

    #[test]
    fn clausen_derivative_is_log_sine() {
        for k in 1..30 {
            let t = k as f64 * 0.2;
            let h = 1e-5;
            let fd = (clausen2(t + h) - clausen2(t - h)) / (2.0 * h);
            let exact = -(2.0 * (t / 2.0).sin()).abs().ln();
            assert!((fd - exact).abs() < 1e-8, "{t}");
        }
    }

    #[test]
    fn power_law_examples() {
        let law = RadiusLaw::new(1.0, 2.0, 0.0).unwrap();
        assert_eq!(power_law_pdf(1.0 - 1e-12, &law), 0.0);
        assert!((power_law_pdf(1.0, &law) - 8.0 / 3.0).abs() < 1e-15);
        assert_eq!(power_law_quantile(0.0, &law), 1.0);
        assert_eq!(power_law_quantile(1.0, &law), 2.0);
        let n = 1_000_000;
        let h = 1.0 / n as f64;
        let mut integral = 0.5 * (power_law_pdf(1.0, &law) + power_law_pdf(2.0, &law));
        for k in 1..n {
            integral += power_law_pdf(1.0 + k as f64 * h, &law);
        }
        assert!((integral * h - 1.0).abs() < 1e-9);
    }

    #[test]
    fn power_law_sampler_ks() {
        let law = RadiusLaw::new(1.0, 2.0, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut xs: Vec<f64> = (0..1_000_000).map(|_| power_law_sample(&law, &mut rng)).collect();
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let mut d = 0.0f64;
        for (k, &x) in xs.iter().enumerate() {
            let f = (law.r_min.powi(-2) - x.powi(-2)) / (law.r_min.powi(-2) - law.r_max.powi(-2));
            d = d.max((f - k as f64 / n).abs()).max(((k + 1) as f64 / n - f).abs());
        }
        assert!(d < 0.002, "KS statistic {d}");
    }

    /// Adaptive Simpson quadrature.
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
        fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
            }
        }
        let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
        rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 50)
    }

    /// Boundary term straight from the arc parametrisation on circle `i`.
    fn arc_term(r: f64, branch: Branch, xi: Point2, xj: Point2) -> f64 {
        let d = xi.dist(xj);
        let alpha = (xj.y - xi.y).atan2(xj.x - xi.x);
        let t = alpha + branch.sign() * (d / (2.0 * r)).min(1.0).acos();
        0.5 * (r * r * t + r * (xi.x * t.sin() - xi.y * t.cos()))
    }

    #[test]
    fn b_at_pair_radius_reduces() {
        let (xi, xj) = (Point2::new(0.4, -1.3), Point2::new(1.9, 0.2));
        let pt = PairTerms::new(xi, xj).unwrap();
        let r = pt.d / 2.0;
        for br in Branch::BOTH {
            let expect = pt.alpha * r.ln() - pt.d / (4.0 * r * r) * pt.tangential;
            assert!((pt.b(r, br).unwrap() - expect).abs() < 1e-12);
        }
        assert!(pt.b(r * 0.9, Branch::Plus).is_err());
    }

    #[test]
    fn b_difference_matches_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let xi = Point2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let xj = Point2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let d = xi.dist(xj);
            if d < 0.05 {
                continue;
            }
            let r1 = d / 2.0 * rng.random_range(1.0..1.5);
            let r2 = r1 * rng.random_range(1.05..2.0);
            for br in Branch::BOTH {
                let f = |r: f64| 2.0 * r.powi(-3) * arc_term(r, br, xi, xj);
                let quad = simpson(&f, r1, r2, 1e-13);
                let diff = antiderivative_b(r2, br, xi, xj).unwrap() - antiderivative_b(r1, br, xi, xj).unwrap();
                assert!((diff - quad).abs() <= 1e-8 * quad.abs().max(1e-3), "{diff} vs {quad}");
            }
        }
    }

    #[test]
    fn lone_pair_leaf_mass_matches_lens_area() {
        // Both-pixels region is the lens of two radius-r disks.
        let (xi, xj) = (Point2::new(0.0, 0.0), Point2::new(1.0, 0.0));
        let (r1, r2) = (1.0, 2.0);
        let mut total = 0.0;
        for (a, b) in [(xi, xj), (xj, xi)] {
            for br in Branch::BOTH {
                let c = br.sign();
                total += c * (antiderivative_b(r2, br, a, b).unwrap() - antiderivative_b(r1, br, a, b).unwrap());
            }
        }
        let lens = |r: f64| {
            let d: f64 = 1.0;
            2.0 * r * r * (d / (2.0 * r)).acos() - 0.5 * d * (4.0 * r * r - d * d).sqrt()
        };
        let quad = simpson(&|r: f64| 2.0 * r.powi(-3) * lens(r), r1, r2, 1e-13);
        assert!((total - quad).abs() < 1e-10, "{total} vs {quad}");
    }

    proptest! {
        #[test]
        fn clausen_odd_periodic(t in -4.0 * PI..4.0 * PI) {
            prop_assert!((clausen2(-t) + clausen2(t)).abs() < 1e-12);
            prop_assert!((clausen2(t + TWO_PI) - clausen2(t)).abs() < 1e-12);
        }

        #[test]
        fn b_derivative_is_integrand(
            x1 in -3.0f64..3.0, y1 in -3.0f64..3.0, x2 in -3.0f64..3.0, y2 in -3.0f64..3.0,
            k in 1.01f64..3.0, plus in any::<bool>(),
        ) {
            let (xi, xj) = (Point2::new(x1, y1), Point2::new(x2, y2));
            prop_assume!(xi.dist(xj) > 0.05);
            let br = if plus { Branch::Plus } else { Branch::Minus };
            let r = xi.dist(xj) / 2.0 * k;
            let h = 1e-6 * r;
            let fd = (antiderivative_b(r + h, br, xi, xj).unwrap() - antiderivative_b(r - h, br, xi, xj).unwrap()) / (2.0 * h);
            let exact = boundary_integrand(r, br, xi, xj).unwrap();
            prop_assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1.0), "{} vs {}", fd, exact);
            prop_assert!((PairTerms::new(xi, xj).unwrap().area_term(r, br).unwrap() - arc_term(r, br, xi, xj)).abs() < 1e-9 * (1.0 + r * r));
        }

        #[test]
        fn b_difference_shift_alpha(
            x1 in -3.0f64..3.0, y1 in -3.0f64..3.0, x2 in -3.0f64..3.0, y2 in -3.0f64..3.0, k in 1.01f64..2.0,
        ) {
            let (xi, xj) = (Point2::new(x1, y1), Point2::new(x2, y2));
            prop_assume!(xi.dist(xj) > 0.05);
            let mut pt = PairTerms::new(xi, xj).unwrap();
            let (r1, r2) = (pt.d / 2.0 * k, pt.d * k);
            let base = pt.b(r2, Branch::Plus).unwrap() - pt.b(r1, Branch::Plus).unwrap();
            pt.alpha += TWO_PI;
            let shifted = pt.b(r2, Branch::Plus).unwrap() - pt.b(r1, Branch::Plus).unwrap();
            let period = TWO_PI * (r2 / r1).ln();
            let m = (shifted - base).rem_euclid(period);
            prop_assert!(m.min(period - m) < 1e-10);
        }
    }
}
