//! Univariate normal and Student-t distribution functions.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use statrs::function::beta::{beta_reg, inv_beta_reg};
use libm::erfc;
use statrs::function::erf::erfc_inv;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Kernel of an elliptical law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    Normal,
    StudentT { nu: f64 },
}

impl Family {
    pub fn student(nu: f64) -> Result<Self> {
        if !(nu > 0.0) || nu.is_infinite() {
            return Err(Error::invalid(format!(
                "degrees of freedom must be positive and finite, got {nu}"
            )));
        }
        Ok(Family::StudentT { nu })
    }

    pub fn nu(&self) -> Option<f64> {
        match *self {
            Family::Normal => None,
            Family::StudentT { nu } => Some(nu),
        }
    }

    pub fn is_normal(&self) -> bool {
        matches!(self, Family::Normal)
    }

    /// Same kernel with `extra` added to the degrees of freedom.
    pub fn with_extra_df(&self, extra: f64) -> Self {
        match *self {
            Family::Normal => Family::Normal,
            Family::StudentT { nu } => Family::StudentT { nu: nu + extra },
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Family::Normal => norm_cdf(x),
            Family::StudentT { nu } => t_cdf(x, nu),
        }
    }

    pub fn sf(&self, x: f64) -> f64 {
        self.cdf(-x)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            Family::Normal => norm_pdf(x),
            Family::StudentT { nu } => t_pdf(x, nu),
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        match *self {
            Family::Normal => norm_ln_pdf(x),
            Family::StudentT { nu } => t_ln_pdf(x, nu),
        }
    }

    /// `P(lo <= X <= hi)` computed on the side with the smaller tail.
    pub fn interval(&self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        if lo > 0.0 {
            (self.sf(lo) - self.sf(hi)).max(0.0)
        } else {
            (self.cdf(hi) - self.cdf(lo)).max(0.0)
        }
    }

    /// Lower-tail quantile. `p` must lie in `(0, 1)`.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        check_prob(p)?;
        Ok(self.quantile_unchecked(p))
    }

    /// Value exceeded with probability `q`.
    pub fn quantile_upper(&self, q: f64) -> Result<f64> {
        check_prob(q)?;
        Ok(-self.quantile_unchecked(q))
    }

    pub(crate) fn quantile_unchecked(&self, p: f64) -> f64 {
        match *self {
            Family::Normal => norm_quantile(p),
            Family::StudentT { nu } => t_quantile(p, nu),
        }
    }
}

fn check_prob(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("quantile argument {p} outside (0, 1)")))
    }
}

pub fn norm_pdf(x: f64) -> f64 {
    norm_ln_pdf(x).exp()
}

pub fn norm_ln_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

pub fn norm_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

pub fn norm_sf(x: f64) -> f64 {
    norm_cdf(-x)
}

/// `ln Φ(x)`, finite far into the lower tail.
pub fn norm_ln_cdf(x: f64) -> f64 {
    if x > -30.0 {
        return norm_cdf(x).ln();
    }
    if x == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    // Mills-ratio series.
    let z2 = 1.0 / (x * x);
    let series = 1.0 - z2 * (1.0 - 3.0 * z2 * (1.0 - 5.0 * z2 * (1.0 - 7.0 * z2)));
    norm_ln_pdf(x) - (-x).ln() + series.ln()
}

pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let x = -SQRT_2 * erfc_inv(2.0 * p);
    if !x.is_finite() {
        return x;
    }
    // statrs' erfc_inv is good to about 1e-10; one Halley step restores full precision.
    let resid = if x < 0.0 { norm_cdf(x) - p } else { (1.0 - p) - norm_sf(x) };
    let u = resid / norm_pdf(x);
    if !u.is_finite() {
        return x;
    }
    x - u / (1.0 + 0.5 * x * u)
}

pub fn t_ln_pdf(x: f64, nu: f64) -> f64 {
    ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * PI).ln()
        - 0.5 * (nu + 1.0) * ln1p_sq(x / nu.sqrt())
}

// ln(1 + r²) without overflowing r² for huge r.
fn ln1p_sq(r: f64) -> f64 {
    let r = r.abs();
    if r > 1e100 {
        2.0 * r.ln() + (1.0 / (r * r)).ln_1p()
    } else {
        (r * r).ln_1p()
    }
}

pub fn t_pdf(x: f64, nu: f64) -> f64 {
    t_ln_pdf(x, nu).exp()
}

/// Integer degrees of freedom up to this use the finite cosine series for the cdf.
const SERIES_MAX_DF: f64 = 64.0;
/// Below this tail probability the series cancels too much and the beta form is used.
const SERIES_MIN_TAIL: f64 = 1e-4;

// P(T <= x) for integer df from the closed-form series in θ = atan(x/√n).
fn t_cdf_series(x: f64, n: u32) -> Option<f64> {
    let theta = (x.abs() / (n as f64).sqrt()).atan();
    let (s, c) = theta.sin_cos();
    let c2 = c * c;
    let central = if n % 2 == 1 {
        let mut sum = 0.0;
        if n > 1 {
            let mut term = c;
            sum = c;
            for k in 1..=(n - 3) / 2 {
                term *= c2 * (2 * k) as f64 / (2 * k + 1) as f64;
                sum += term;
            }
        }
        2.0 / PI * (theta + s * sum)
    } else {
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..=(n - 2) / 2 {
            term *= c2 * (2 * k - 1) as f64 / (2 * k) as f64;
            sum += term;
        }
        s * sum
    };
    let tail = 0.5 * (1.0 - central);
    if tail < SERIES_MIN_TAIL {
        return None;
    }
    Some(if x < 0.0 { tail } else { 1.0 - tail })
}

pub fn t_cdf(x: f64, nu: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    if nu.fract() == 0.0 && nu <= SERIES_MAX_DF {
        if let Some(v) = t_cdf_series(x, nu as u32) {
            return v;
        }
    }
    // r² = ν/x² keeps the beta argument finite even when x² overflows.
    let r = nu.sqrt() / x.abs();
    let r2 = r * r;
    // The central form takes its argument x²/(ν+x²) exactly but cancels against 1/2, so it is
    // kept only while the tail is large; further out the tail form keeps relative accuracy.
    let tail = if r > 1.0 {
        let half = 0.5 * beta_reg(0.5, 0.5 * nu, 1.0 / (1.0 + r2));
        0.5 - half
    } else {
        0.0
    };
    let tail = if tail > 0.05 {
        tail
    } else {
        0.5 * beta_reg(0.5 * nu, 0.5, r2 / (1.0 + r2))
    };
    if x < 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

pub fn t_sf(x: f64, nu: f64) -> f64 {
    t_cdf(-x, nu)
}

// Hill (1970), Algorithm 396: |t| with two-sided tail probability `p2`, for nu >= 1.
fn hill_start(p2: f64, nu: f64) -> f64 {
    let a = 1.0 / (nu - 0.5);
    let b = 48.0 / (a * a);
    let mut c = ((20700.0 * a / b - 98.0) * a - 16.0) * a + 96.36;
    let d = ((94.5 / (b + c) - 3.0) / b + 1.0) * (a * PI / 2.0).sqrt() * nu;
    let y = ((d.ln() + p2.ln()) * 2.0 / nu).exp();
    if (nu < 2.1 && p2 > 0.5) || y > 0.05 + a {
        let x = norm_quantile(0.5 * p2);
        let y = x * x;
        if nu < 5.0 {
            c += 0.3 * (nu - 4.5) * (x + 0.6);
        }
        c = (((0.05 * d * x - 5.0) * x - 7.0) * x - 2.0) * x + b + c;
        let y = (((((0.4 * y + 6.3) * y + 36.0) * y + 94.5) / c - y - 3.0) / b + 1.0) * x;
        (nu * (a * y * y).exp_m1()).sqrt()
    } else {
        let y = ((1.0 / (((nu + 6.0) / (nu * y) - 0.089 * d - 0.822) * (nu + 2.0) * 3.0) + 0.5 / (nu + 4.0)) * y
            - 1.0)
            * (nu + 1.0)
            / (nu + 2.0)
            + 1.0 / y;
        (nu * y).sqrt()
    }
}

// |t| with upper tail `tail` by inverting the regularized beta function.
fn beta_start(tail: f64, nu: f64) -> f64 {
    let y = inv_beta_reg(0.5 * nu, 0.5, 2.0 * tail);
    (nu * (1.0 - y) / y).sqrt()
}

pub fn t_quantile(p: f64, nu: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p == 0.5 {
        return 0.0;
    }
    let lower = p < 0.5;
    let tail = if lower { p } else { 1.0 - p };
    let mut t = if nu == 1.0 {
        1.0 / (PI * tail).tan()
    } else if nu == 2.0 {
        (1.0 - 2.0 * tail) / (2.0 * tail * (1.0 - tail)).sqrt()
    } else if nu >= 1.0 {
        hill_start(2.0 * tail, nu)
    } else {
        beta_start(tail, nu)
    };
    if !t.is_finite() {
        return if lower { f64::NEG_INFINITY } else { f64::INFINITY };
    }
    // Far out the tail decays like a power of t, so Newton on ln sf against ln t converges
    // where a linear step would overshoot; near the centre a third-order step is used.
    let ln_tail = tail.ln();
    for _ in 0..12 {
        let dens = t_pdf(t, nu);
        let sf = t_sf(t, nu);
        if !(dens > 0.0) || !(sf > 0.0) {
            break;
        }
        let step = if t > 1.0 {
            let u = (sf.ln() - ln_tail) * sf / (t * dens);
            let next = t * u.exp();
            next - t
        } else {
            let x = (sf - tail) / dens;
            x * (1.0 + x * t * (nu + 1.0) / (2.0 * (t * t + nu)))
        };
        if !step.is_finite() {
            break;
        }
        t += step;
        if step.abs() <= 1e-14 * t.abs() {
            break;
        }
    }
    if lower {
        -t
    } else {
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normal_reference_values() {
        assert_eq!(norm_cdf(0.0), 0.5);
        assert!((norm_pdf(0.0) - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert!((norm_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-12);
    }

    #[test]
    fn cauchy_closed_forms() {
        assert!((t_cdf(1.0, 1.0) - 0.75).abs() < 1e-14);
        assert!((t_pdf(0.0, 1.0) - 1.0 / PI).abs() < 1e-15);
        assert!((t_quantile(0.75, 1.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ln_cdf_matches_direct_evaluation_near_switch() {
        for &x in &[-29.9, -30.0, -30.1, -35.0] {
            let direct = norm_cdf(x).ln();
            assert!((norm_ln_cdf(x) - direct).abs() < 1e-9, "x = {x}");
        }
        assert!(norm_ln_cdf(-100.0).is_finite());
    }

    #[test]
    fn large_df_approaches_normal() {
        for &x in &[-3.0, -1.0, 0.5, 2.0] {
            assert!((t_cdf(x, 1e8) - norm_cdf(x)).abs() < 1e-7);
        }
    }

    #[test]
    fn quantile_rejects_out_of_range() {
        assert!(Family::Normal.quantile(0.0).is_err());
        assert!(Family::StudentT { nu: 3.0 }.quantile(1.0).is_err());
    }

    #[test]
    fn t_quantile_tail_sweep() {
        for &nu in &[0.5, 1.0, 1.5, 2.0, 3.0, 4.7, 7.0, 30.0, 250.0, 1e6] {
            for e in 1..=200 {
                let tail = 10f64.powf(-0.5 * e as f64).min(0.49);
                let q = t_quantile(tail, nu);
                if q.abs() > 1e150 {
                    // ν/q² is subnormal from here on.
                    break;
                }
                let back = t_cdf(q, nu);
                // For huge ν the beta prefactor differences ln Γ values near ν ln ν, which
                // costs about that many ulps.
                let tol = if nu > 1e4 { 1e-8 } else { 1e-11 };
                assert!(((back - tail) / tail).abs() < tol, "nu={nu} tail={tail:e} back={back:e}");
            }
        }
    }

    #[test]
    fn integer_series_matches_beta_form() {
        for n in 1..=64u32 {
            for i in 0..=80 {
                let x = -8.0 + 0.2 * i as f64;
                if let Some(v) = t_cdf_series(x, n) {
                    let nu = n as f64;
                    let x2 = x * x;
                    let reference = if x2 < nu {
                        0.5 + 0.5 * x.signum() * beta_reg(0.5, 0.5 * nu, x2 / (nu + x2))
                    } else {
                        let t = 0.5 * beta_reg(0.5 * nu, 0.5, nu / (nu + x2));
                        if x < 0.0 { t } else { 1.0 - t }
                    };
                    assert!((v - reference).abs() < 1e-13 * reference.max(1e-4) * 1e3, "n={n} x={x}");
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn normal_round_trip(z in -8.0f64..8.0) {
            let back = if z <= 0.0 {
                norm_quantile(norm_cdf(z))
            } else {
                -norm_quantile(norm_sf(z))
            };
            prop_assert!((back - z).abs() < 1e-9);
        }

        #[test]
        fn t_round_trip(z in -8.0f64..8.0, nu in 0.5f64..50.0) {
            let f = Family::StudentT { nu };
            let back = if z <= 0.0 {
                f.quantile(f.cdf(z)).unwrap()
            } else {
                f.quantile_upper(f.sf(z)).unwrap()
            };
            prop_assert!((back - z).abs() < 1e-9, "z={} nu={} back={}", z, nu, back);
        }

        #[test]
        fn t_cdf_monotone(a in -20.0f64..20.0, d in 1e-3f64..5.0, nu in 0.3f64..40.0) {
            prop_assert!(t_cdf(a + d, nu) >= t_cdf(a, nu));
        }
    }
}
