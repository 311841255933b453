//! Tail conditional expectations of selection-elliptical risks.

use nalgebra::{DMatrix, DVector};
use roots::{find_root_brent, SimpleConvergency};

use crate::bounds::TruncationBox;
use crate::elliptical::EllipticalJoint;
use crate::error::{Error, Result};
use crate::linalg;
use crate::rectangle::RectangleProbSettings;
use crate::selection::{se_box_prob, tse_mean_cov, SelectionSpec, SutParams};
use crate::truncated::{truncated_moments, MomentConfig};

/// Bracket search stops after this many doublings of the initial half-width.
const MAX_DOUBLINGS: u32 = 40;
const ROOT_TOL: f64 = 1e-12;

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("tail level {alpha} must lie in (0, 1)")))
    }
}

fn check_univariate(spec: &SelectionSpec) -> Result<()> {
    if spec.p() == 1 {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected: 1, found: spec.p() })
    }
}

/// `P(Y > y)` for a univariate spec.
pub fn survival(spec: &SelectionSpec, y: f64, settings: &RectangleProbSettings) -> Result<f64> {
    check_univariate(spec)?;
    if spec.q() == 0 {
        let law = spec.joint();
        let s = law.omega()[(0, 0)].sqrt();
        return Ok(law.family().sf((y - law.xi()[0]) / s));
    }
    let bx = TruncationBox::new(vec![y], vec![f64::INFINITY])?;
    Ok(se_box_prob(spec, &bx, settings)?.prob)
}

/// `y_α` with `P(Y > y_α) = α`.
pub fn quantile_upper(spec: &SelectionSpec, alpha: f64, settings: &RectangleProbSettings) -> Result<f64> {
    check_alpha(alpha)?;
    check_univariate(spec)?;
    let law = spec.joint();
    let q = spec.q();
    let loc = law.xi()[q];
    let scale = law.omega()[(q, q)].sqrt();
    if q == 0 {
        return Ok(loc + scale * law.family().quantile_upper(alpha)?);
    }
    let mut err = None;
    let mut f = |z: f64| match survival(spec, loc + scale * z, settings) {
        Ok(s) => s - alpha,
        Err(e) => {
            err.get_or_insert(e);
            0.0
        }
    };
    let (mut lo, mut hi) = (-1.0, 1.0);
    let mut doublings = 0;
    while f(lo) < 0.0 {
        lo *= 2.0;
        doublings += 1;
        if doublings > MAX_DOUBLINGS {
            return Err(Error::numerical("could not bracket the quantile from below"));
        }
    }
    while f(hi) > 0.0 {
        hi *= 2.0;
        doublings += 1;
        if doublings > MAX_DOUBLINGS {
            return Err(Error::numerical("could not bracket the quantile from above"));
        }
    }
    let mut conv = SimpleConvergency { eps: ROOT_TOL, max_iter: 300 };
    let z = find_root_brent(lo, hi, &mut f, &mut conv)
        .map_err(|e| Error::numerical(format!("quantile search failed: {e:?}")))?;
    if let Some(e) = err {
        return Err(e);
    }
    Ok(loc + scale * z)
}

/// `E[Y | Y > y]` for a univariate spec.
pub fn tce_at(spec: &SelectionSpec, y: f64, config: &MomentConfig) -> Result<f64> {
    check_univariate(spec)?;
    let bx = TruncationBox::new(vec![y], vec![f64::INFINITY])?;
    let report = tse_mean_cov(spec, &bx, config)?;
    Ok(report.mean_checked()?[0])
}

/// `TCE_Y(y_α) = E[Y | Y > y_α]`.
pub fn tce(spec: &SelectionSpec, alpha: f64, config: &MomentConfig) -> Result<f64> {
    let y = quantile_upper(spec, alpha, &config.qmc)?;
    tce_at(spec, y, config)
}

/// `E[Y | Y > y_α]` coordinatewise.
pub fn mtce(spec: &SelectionSpec, y_alpha: &[f64], config: &MomentConfig) -> Result<DVector<f64>> {
    if y_alpha.len() != spec.p() {
        return Err(Error::DimensionMismatch {
            expected: spec.p(),
            found: y_alpha.len(),
        });
    }
    if y_alpha.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::invalid("quantiles must be below +inf"));
    }
    let bx = TruncationBox::new(y_alpha.to_vec(), vec![f64::INFINITY; spec.p()])?;
    Ok(tse_mean_cov(spec, &bx, config)?.mean_checked()?.clone())
}

/// Upper `α` quantile of every univariate marginal.
pub fn marginal_quantiles(spec: &SelectionSpec, alpha: f64, settings: &RectangleProbSettings) -> Result<Vec<f64>> {
    (0..spec.p())
        .map(|i| quantile_upper(&spec.outcome_marginal(&[i])?, alpha, settings))
        .collect()
}

/// Law of `S = 1ᵀY` for an extended skew portfolio.
#[derive(Debug, Clone, PartialEq)]
pub struct SumDistParams {
    pub mu_s: f64,
    pub sigma2_s: f64,
    pub delta_s: f64,
    pub lambda_s: f64,
    /// Extension parameter of `S`; zero for skew-t and skew-normal portfolios.
    pub tau_s: f64,
    pub nu: Option<f64>,
}

impl SumDistParams {
    pub fn from_portfolio(params: &SutParams) -> Result<Self> {
        let (delta, tau_tilde) = normalized_skew(params)?;
        let p = params.p();
        let ones = DVector::from_element(p, 1.0);
        let sigma2_s = (ones.transpose() * &params.sigma * &ones)[(0, 0)];
        let delta_s = delta.sum();
        let gap = sigma2_s - delta_s * delta_s;
        if !(sigma2_s > 0.0 && gap > 0.0) {
            return Err(Error::numerical("degenerate portfolio sum"));
        }
        let lambda_s = delta_s / gap.sqrt();
        Ok(Self {
            mu_s: params.mu.sum(),
            sigma2_s,
            delta_s,
            lambda_s,
            tau_s: tau_tilde * (1.0 + lambda_s * lambda_s).sqrt(),
            nu: params.nu,
        })
    }

    pub fn to_params(&self) -> Result<SutParams> {
        SutParams::extended(
            DVector::from_element(1, self.mu_s),
            DMatrix::from_element(1, 1, self.sigma2_s),
            DVector::from_element(1, self.lambda_s),
            self.tau_s,
            self.nu,
        )
    }
}

// (Δ, τ̃) for a q = 1 spec.
fn normalized_skew(params: &SutParams) -> Result<(DVector<f64>, f64)> {
    if params.q() != 1 {
        return Err(Error::invalid("portfolio decomposition needs a single selection coordinate"));
    }
    params.validate()?;
    let lam = params.lambda.column(0).into_owned();
    let norm = (1.0 + lam.norm_squared()).sqrt();
    let delta = linalg::sym_sqrt(&params.sigma, "sigma")? * lam / norm;
    Ok((delta, params.tau[0] / norm))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskDecomposition {
    /// `TCE_S(s_α)`.
    pub total: f64,
    /// `sᵢ = E[Yᵢ | S > s_α]`.
    pub contributions: DVector<f64>,
    /// `E[W₁ | W₁ > 0, W₂ > s_α]` with `W₁` the standardized selection variable.
    pub e_s1: f64,
    pub quantile: f64,
    pub alpha: f64,
    pub sum_law: SumDistParams,
}

/// TCE of `S = 1ᵀY` and its allocation `sᵢ = E[Yᵢ | S > s_α]`.
pub fn tce_sum_decomposed(params: &SutParams, alpha: f64, config: &MomentConfig) -> Result<RiskDecomposition> {
    check_alpha(alpha)?;
    let (delta, tau_tilde) = normalized_skew(params)?;
    let sum_law = SumDistParams::from_portfolio(params)?;
    let p = params.p();
    let sum_spec = crate::selection::build_selection_with(&sum_law.to_params()?, &config.qmc)?;
    let s_alpha = quantile_upper(&sum_spec, alpha, &config.qmc)?;

    let family = params.family()?;
    let xi_s = DVector::from_column_slice(&[tau_tilde, sum_law.mu_s]);
    let omega_s = DMatrix::from_row_slice(2, 2, &[1.0, sum_law.delta_s, sum_law.delta_s, sum_law.sigma2_s]);
    let w = EllipticalJoint::new(family, xi_s.clone(), omega_s.clone())?;
    let bx = TruncationBox::new(vec![0.0, s_alpha], vec![f64::INFINITY; 2])?;
    let e_s = truncated_moments(&w, &bx, config)?.mean_checked()?.clone();

    let ones = DVector::from_element(p, 1.0);
    let mut omega_2s = DMatrix::zeros(p, 2);
    omega_2s.set_column(0, &delta);
    omega_2s.set_column(1, &(&params.sigma * &ones));
    let chol = linalg::cholesky(&omega_s, "omega_s")?;
    let contributions = &params.mu + &omega_2s * chol.solve(&(&e_s - &xi_s));
    let total = e_s[1];
    let gap = (contributions.sum() - total).abs();
    if gap > 1e-8 * total.abs().max(1.0) {
        return Err(Error::numerical(format!("allocation does not add up (gap {gap:e})")));
    }
    Ok(RiskDecomposition {
        total,
        contributions,
        e_s1: e_s[0],
        quantile: s_alpha,
        alpha,
        sum_law,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selection::build_selection;
    use crate::univariate::{norm_pdf, norm_quantile};

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    fn normal_1d() -> SelectionSpec {
        SelectionSpec::symmetric(EllipticalJoint::standard(crate::Family::Normal, 1).unwrap())
    }

    #[test]
    fn normal_tce_closed_form() {
        let z = -norm_quantile(0.05);
        let expected = norm_pdf(z) / 0.05;
        let v = tce(&normal_1d(), 0.05, &MomentConfig::default()).unwrap();
        assert!((v - expected).abs() < 1e-9);
        assert!((expected - 2.0627128).abs() < 1e-6);
    }

    #[test]
    fn quantile_trivial_cases() {
        let s = Default::default();
        assert!(quantile_upper(&normal_1d(), 0.5, &s).unwrap().abs() < 1e-14);
        let cauchy = SelectionSpec::symmetric(EllipticalJoint::standard(crate::Family::student(1.0).unwrap(), 1).unwrap());
        assert!((quantile_upper(&cauchy, 0.25, &s).unwrap() - 1.0).abs() < 1e-12);
        assert!(quantile_upper(&normal_1d(), 1.0, &s).is_err());
    }

    #[test]
    fn skew_quantile_self_consistent() {
        let p = SutParams::extended(dv(&[0.3]), DMatrix::from_element(1, 1, 2.0), dv(&[1.5]), -0.4, Some(6.0)).unwrap();
        let spec = build_selection(&p).unwrap();
        let s = Default::default();
        for &alpha in &[0.01, 0.05, 0.3, 0.9] {
            let y = quantile_upper(&spec, alpha, &s).unwrap();
            assert!((survival(&spec, y, &s).unwrap() - alpha).abs() < 1e-8);
        }
    }

    #[test]
    fn normal_portfolio_is_covariance_allocation() {
        let sigma = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.1, 0.3, 2.0, -0.2, 0.1, -0.2, 1.5]);
        let mu = dv(&[0.1, -0.2, 0.3]);
        let p = SutParams::skew(mu.clone(), sigma.clone(), dv(&[0.0, 0.0, 0.0]), None).unwrap();
        let d = tce_sum_decomposed(&p, 0.05, &MomentConfig::default()).unwrap();
        let ones = DVector::from_element(3, 1.0);
        let cov_is = &sigma * &ones;
        let s2 = cov_is.sum();
        for i in 0..3 {
            let expected = mu[i] + cov_is[i] / s2 * (d.total - mu.sum());
            assert!((d.contributions[i] - expected).abs() < 1e-9);
        }
        let z = -norm_quantile(0.05);
        assert!((d.total - (mu.sum() + s2.sqrt() * norm_pdf(z) / 0.05)).abs() < 1e-8);
    }

    #[test]
    fn single_asset_matches_tce() {
        let p = SutParams::skew(dv(&[0.2]), DMatrix::from_element(1, 1, 1.5), dv(&[2.0]), Some(6.0)).unwrap();
        let cfg = MomentConfig::default();
        let d = tce_sum_decomposed(&p, 0.05, &cfg).unwrap();
        let direct = tce(&build_selection(&p).unwrap(), 0.05, &cfg).unwrap();
        assert!((d.contributions[0] - direct).abs() < 1e-8);
    }

    #[test]
    fn tce_nonincreasing_in_alpha() {
        let p = SutParams::skew(dv(&[0.0]), DMatrix::from_element(1, 1, 1.0), dv(&[-1.0]), Some(5.0)).unwrap();
        let spec = build_selection(&p).unwrap();
        let cfg = MomentConfig::default();
        let mut prev = f64::INFINITY;
        for k in 1..10 {
            let v = tce(&spec, 0.1 * k as f64, &cfg).unwrap();
            assert!(v <= prev + 1e-12);
            prev = v;
        }
    }

    #[test]
    fn cauchy_tce_does_not_exist() {
        let spec = SelectionSpec::symmetric(EllipticalJoint::standard(crate::Family::student(1.0).unwrap(), 1).unwrap());
        assert!(matches!(
            tce(&spec, 0.05, &MomentConfig::default()),
            Err(Error::NonExistentMoment(_))
        ));
    }

    #[test]
    fn exchangeable_mtce() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 1.0]);
        let p = SutParams::skew(dv(&[0.0, 0.0]), sigma, dv(&[1.0, 1.0]), Some(5.0)).unwrap();
        let spec = build_selection(&p).unwrap();
        let v = mtce(&spec, &[0.5, 0.5], &MomentConfig::default()).unwrap();
        assert!((v[0] - v[1]).abs() < 1e-8);
        let m = mtce(&spec, &[f64::NEG_INFINITY; 2], &MomentConfig::default()).unwrap();
        let r = tse_mean_cov(&spec, &TruncationBox::unbounded(2), &MomentConfig::default()).unwrap();
        assert!((&m - &r.mean).abs().max() < 1e-12);
    }
}
