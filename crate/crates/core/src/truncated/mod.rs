//! Moments of rectangle-truncated normal and Student-t distributions.

mod existence;
mod normal;
mod paths;
mod student;

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::bounds::{MomentOrder, TruncationBox, DEFAULT_MAX_ORDER};
use crate::elliptical::EllipticalJoint;
use crate::error::{Error, Result};
use crate::mc;
use crate::rectangle::RectangleProbSettings;
use crate::univariate::Family;

pub use existence::existence_check;
pub use paths::{moments_out_of_bounds, moments_with_double_infinite, omega_12, Omega12Constant};

pub(crate) use existence::moment_flags;

/// Marginal box probabilities below this are treated as underflow.
pub const OUT_OF_BOUNDS_PROB: f64 = 1e-250;

/// How a report was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Untruncated,
    Direct,
    DoubleInfinite,
    OutOfBounds,
    Degenerate,
    MonteCarlo,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Untruncated => "untruncated",
            Method::Direct => "direct",
            Method::DoubleInfinite => "double-infinite",
            Method::OutOfBounds => "out-of-bounds",
            Method::Degenerate => "degenerate",
            Method::MonteCarlo => "monte-carlo",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentConfig {
    pub qmc: RectangleProbSettings,
    pub max_order: u32,
    /// Draws used when a moment has to be estimated by simulation.
    pub mc_draws: usize,
    pub seed: u64,
}

impl Default for MomentConfig {
    fn default() -> Self {
        Self {
            qmc: RectangleProbSettings::default(),
            max_order: DEFAULT_MAX_ORDER,
            mc_draws: 200_000,
            seed: 0x5EED,
        }
    }
}

/// Probability, mean and second moments of `X | a <= X <= b`.
///
/// Entries whose moment does not exist hold NaN and are flagged `false`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub prob_mass: f64,
    pub prob_error: f64,
    pub mean: DVector<f64>,
    pub second_moment: DMatrix<f64>,
    pub covariance: DMatrix<f64>,
    pub mean_exists: Vec<bool>,
    pub second_exists: Vec<Vec<bool>>,
    pub method: Method,
    pub notes: Vec<String>,
}

impl MomentReport {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn covariance_exists(&self, i: usize, j: usize) -> bool {
        self.second_exists[i][j] && self.mean_exists[i] && self.mean_exists[j]
    }

    pub fn all_exist(&self) -> bool {
        let p = self.dim();
        (0..p).all(|i| (0..p).all(|j| self.covariance_exists(i, j)))
    }

    pub fn mean_checked(&self) -> Result<&DVector<f64>> {
        if let Some(i) = self.mean_exists.iter().position(|e| !e) {
            return Err(Error::NonExistentMoment(format!("mean of coordinate {i}")));
        }
        Ok(&self.mean)
    }

    pub fn covariance_checked(&self) -> Result<&DMatrix<f64>> {
        self.mean_checked()?;
        let p = self.dim();
        for i in 0..p {
            for j in 0..p {
                if !self.second_exists[i][j] {
                    return Err(Error::NonExistentMoment(format!(
                        "second moment ({i}, {j})"
                    )));
                }
            }
        }
        Ok(&self.covariance)
    }

    pub fn second_moment_checked(&self) -> Result<&DMatrix<f64>> {
        self.covariance_checked()?;
        Ok(&self.second_moment)
    }

    /// Builds a report from mean and second moment, masking nonexistent entries.
    pub(crate) fn assemble(
        prob: (f64, f64),
        mean: DVector<f64>,
        second: DMatrix<f64>,
        flags: (Vec<bool>, Vec<Vec<bool>>),
        method: Method,
    ) -> Self {
        let p = mean.len();
        let (mean_exists, second_exists) = flags;
        let mean = DVector::from_fn(p, |i, _| if mean_exists[i] { mean[i] } else { f64::NAN });
        let second_moment = DMatrix::from_fn(p, p, |i, j| {
            if second_exists[i][j] {
                second[(i, j)]
            } else {
                f64::NAN
            }
        });
        let mut covariance = DMatrix::from_element(p, p, f64::NAN);
        for i in 0..p {
            for j in 0..p {
                if second_exists[i][j] && mean_exists[i] && mean_exists[j] {
                    covariance[(i, j)] = second_moment[(i, j)] - mean[i] * mean[j];
                }
            }
        }
        Self {
            prob_mass: prob.0,
            prob_error: prob.1,
            mean,
            second_moment,
            covariance,
            mean_exists,
            second_exists,
            method,
            notes: Vec::new(),
        }
    }

    /// Builds a report from mean and covariance.
    pub(crate) fn from_mean_cov(
        prob: (f64, f64),
        mean: DVector<f64>,
        cov: DMatrix<f64>,
        flags: (Vec<bool>, Vec<Vec<bool>>),
        method: Method,
    ) -> Self {
        let second = &cov + &mean * mean.transpose();
        Self::assemble(prob, mean, second, flags, method)
    }

    pub(crate) fn with_note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }
}

/// Mean and covariance of `X | a <= X <= b`, selecting the computation path.
pub fn truncated_moments(
    dist: &EllipticalJoint,
    bx: &TruncationBox,
    config: &MomentConfig,
) -> Result<MomentReport> {
    check_dims(dist, bx)?;
    config.qmc.validate()?;
    let degenerate: Vec<usize> = (0..bx.dim()).filter(|&i| bx.is_degenerate(i)).collect();
    if !degenerate.is_empty() {
        return paths::degenerate(dist, bx, &degenerate, config);
    }
    if bx.is_everywhere_unbounded() {
        return untruncated(dist);
    }
    let oob = paths::detect_out_of_bounds(dist, bx);
    if !oob.is_empty() {
        return paths::condition_on_limits(dist, bx, &oob, config, Method::OutOfBounds);
    }
    if (0..bx.dim()).any(|i| bx.is_doubly_infinite(i)) {
        return paths::double_infinite(dist, bx, config);
    }
    let report = direct(dist, bx, config)?;
    if report.prob_mass < OUT_OF_BOUNDS_PROB {
        // Joint underflow without a single far coordinate: pin the least likely one.
        let worst = paths::least_likely_coordinate(dist, bx);
        return Ok(
            paths::condition_on_limits(dist, bx, &[worst], config, Method::OutOfBounds)?
                .with_note(format!("joint box probability underflowed; pinned coordinate {worst}")),
        );
    }
    Ok(report)
}

/// Truncated mean and covariance for a normal kernel.
pub fn tmvn_mean_cov(
    dist: &EllipticalJoint,
    bx: &TruncationBox,
    config: &MomentConfig,
) -> Result<MomentReport> {
    if !dist.family().is_normal() {
        return Err(Error::WrongFamily);
    }
    truncated_moments(dist, bx, config)
}

/// Truncated mean and covariance for a Student-t kernel.
pub fn tmvt_mean_cov(
    dist: &EllipticalJoint,
    bx: &TruncationBox,
    config: &MomentConfig,
) -> Result<MomentReport> {
    if dist.family().is_normal() {
        return Err(Error::WrongFamily);
    }
    truncated_moments(dist, bx, config)
}

/// `E[X^k | a <= X <= b]` for a normal kernel, any order up to the configured cap.
pub fn tmvn_product_moment(
    dist: &EllipticalJoint,
    bx: &TruncationBox,
    order: &MomentOrder,
    config: &MomentConfig,
) -> Result<f64> {
    if !dist.family().is_normal() {
        return Err(Error::WrongFamily);
    }
    check_dims(dist, bx)?;
    order.check(dist.dim(), config.max_order)?;
    paths::normal_product_moment(dist, bx, order.as_slice(), config)
}

/// A scalar moment with its provenance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentValue {
    pub value: f64,
    /// Present when the value is a simulation estimate.
    pub std_error: Option<f64>,
    pub method: Method,
}

/// `E[X^k | a <= X <= b]` for either kernel.
///
/// Student-t moments above order two are estimated by Gibbs sampling.
pub fn product_moment(
    dist: &EllipticalJoint,
    bx: &TruncationBox,
    order: &MomentOrder,
    config: &MomentConfig,
) -> Result<MomentValue> {
    check_dims(dist, bx)?;
    order.check(dist.dim(), config.max_order)?;
    if !existence_check(dist.family(), bx, order) {
        return Err(Error::NonExistentMoment(format!(
            "order {:?} under {:?}",
            order.as_slice(),
            dist.family()
        )));
    }
    let k = order.as_slice();
    if order.total() == 0 {
        return Ok(MomentValue {
            value: 1.0,
            std_error: None,
            method: Method::Direct,
        });
    }
    match dist.family() {
        Family::Normal => Ok(MomentValue {
            value: paths::normal_product_moment(dist, bx, k, config)?,
            std_error: None,
            method: Method::Direct,
        }),
        Family::StudentT { .. } if order.total() <= 2 => {
            let report = truncated_moments(dist, bx, config)?;
            let nz: Vec<usize> = (0..k.len()).flat_map(|i| std::iter::repeat_n(i, k[i] as usize)).collect();
            let value = if nz.len() == 1 {
                report.mean[nz[0]]
            } else {
                report.second_moment[(nz[0], nz[1])]
            };
            Ok(MomentValue {
                value,
                std_error: None,
                method: report.method,
            })
        }
        Family::StudentT { .. } => {
            let batch = mc::sample_truncated_gibbs(
                dist,
                bx,
                config.mc_draws,
                mc::DEFAULT_BURN_IN,
                config.seed,
            )?;
            let est = mc::estimate_product_moment(&batch, order)?;
            Ok(MomentValue {
                value: est.value,
                std_error: Some(est.std_error),
                method: Method::MonteCarlo,
            })
        }
    }
}

fn check_dims(dist: &EllipticalJoint, bx: &TruncationBox) -> Result<()> {
    if dist.dim() != bx.dim() {
        return Err(Error::DimensionMismatch {
            expected: dist.dim(),
            found: bx.dim(),
        });
    }
    Ok(())
}

fn untruncated(dist: &EllipticalJoint) -> Result<MomentReport> {
    let p = dist.dim();
    let flags = moment_flags(dist.family(), &TruncationBox::unbounded(p));
    let factor = match dist.family() {
        Family::Normal => 1.0,
        Family::StudentT { nu } if nu > 2.0 => nu / (nu - 2.0),
        Family::StudentT { .. } => f64::NAN,
    };
    Ok(MomentReport::from_mean_cov(
        (1.0, 0.0),
        dist.xi().clone(),
        dist.omega() * factor,
        flags,
        Method::Untruncated,
    ))
}

/// Mean and covariance on the full box without any path reduction.
///
/// [`truncated_moments`] is the entry point for normal use; this one exists so the
/// reductions can be checked against the full-dimension integrals.
pub fn moments_direct(
    dist: &EllipticalJoint,
    bx: &TruncationBox,
    config: &MomentConfig,
) -> Result<MomentReport> {
    check_dims(dist, bx)?;
    config.qmc.validate()?;
    direct(dist, bx, config)
}

pub(crate) fn direct(
    dist: &EllipticalJoint,
    bx: &TruncationBox,
    config: &MomentConfig,
) -> Result<MomentReport> {
    let flags = moment_flags(dist.family(), bx);
    match dist.family() {
        Family::Normal => {
            let m = normal::normal_mean_second(dist, bx, &config.qmc)?;
            Ok(MomentReport::assemble(
                (m.prob, m.prob_error),
                m.mean,
                m.second,
                flags,
                Method::Direct,
            ))
        }
        Family::StudentT { nu } => {
            let m = if nu > 2.0 {
                student::student_mean_second(dist, bx, &config.qmc)?
            } else {
                student::student_mixture(dist, bx, &flags.0, &flags.1, &config.qmc)?
            };
            let report = MomentReport::assemble(
                (m.prob, m.prob_error),
                m.mean,
                m.second,
                flags,
                Method::Direct,
            );
            Ok(if nu > 2.0 {
                report
            } else {
                report.with_note("scale-mixture integration")
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const INF: f64 = f64::INFINITY;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    fn dm(n: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(n, n, v)
    }

    fn bx(lo: &[f64], hi: &[f64]) -> TruncationBox {
        TruncationBox::new(lo.to_vec(), hi.to_vec()).unwrap()
    }

    #[test]
    fn untruncated_reductions() {
        let omega = dm(2, &[1.0, 0.3, 0.3, 2.0]);
        let xi = dv(&[1.0, -1.0]);
        let cfg = MomentConfig::default();
        let n = EllipticalJoint::normal(xi.clone(), omega.clone()).unwrap();
        let r = truncated_moments(&n, &TruncationBox::unbounded(2), &cfg).unwrap();
        assert_eq!(r.mean, xi);
        assert!((&r.covariance - &omega).abs().max() < 1e-15);
        assert_eq!(r.method, Method::Untruncated);

        let t = EllipticalJoint::student(4.0, xi.clone(), omega.clone()).unwrap();
        let r = truncated_moments(&t, &TruncationBox::unbounded(2), &cfg).unwrap();
        assert!((&r.covariance - &omega * 2.0).abs().max() < 1e-15);
    }

    #[test]
    fn half_line_normal_closed_form() {
        let n = EllipticalJoint::standard(Family::Normal, 1).unwrap();
        let r = tmvn_mean_cov(&n, &bx(&[0.0], &[INF]), &MomentConfig::default()).unwrap();
        assert_relative_eq!(r.mean[0], 0.797_884_560_802_865_4, epsilon = 1e-12);
        assert_relative_eq!(r.covariance[(0, 0)], 1.0 - 2.0 / std::f64::consts::PI, epsilon = 1e-12);
    }

    #[test]
    fn symmetric_box_has_zero_odd_moments() {
        let n = EllipticalJoint::normal(dv(&[0.0, 0.0]), dm(2, &[1.0, 0.5, 0.5, 1.0])).unwrap();
        let b = bx(&[-1.0, -1.0], &[1.0, 1.0]);
        let cfg = MomentConfig::default();
        let r = tmvn_mean_cov(&n, &b, &cfg).unwrap();
        assert!(r.mean.abs().max() < 1e-12);
        let k = MomentOrder::new(vec![2, 1]);
        assert!(tmvn_product_moment(&n, &b, &k, &cfg).unwrap().abs() < 1e-12);
    }

    #[test]
    fn product_moment_consistency_with_mean_cov() {
        let n = EllipticalJoint::normal(
            dv(&[0.2, -0.3, 0.1]),
            dm(3, &[1.0, 0.4, 0.2, 0.4, 1.5, -0.3, 0.2, -0.3, 0.8]),
        )
        .unwrap();
        let b = bx(&[-0.5, -INF, 0.0], &[1.5, 0.7, INF]);
        let cfg = MomentConfig::default();
        let r = direct(&n, &b, &cfg).unwrap();
        for i in 0..3 {
            let m = tmvn_product_moment(&n, &b, &MomentOrder::unit(3, i), &cfg).unwrap();
            assert!((m - r.mean[i]).abs() < 1e-9);
            for j in 0..3 {
                let m = tmvn_product_moment(&n, &b, &MomentOrder::pair(3, i, j), &cfg).unwrap();
                assert!((m - r.second_moment[(i, j)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn sandwich_and_psd() {
        let t = EllipticalJoint::student(
            5.0,
            dv(&[0.0, 0.0]),
            dm(2, &[1.0, 0.0, 0.0, 1.0]),
        )
        .unwrap();
        let b = bx(&[0.0, 0.0], &[2.0, 1.0]);
        let r = tmvt_mean_cov(&t, &b, &MomentConfig::default()).unwrap();
        for i in 0..2 {
            assert!(r.mean[i] >= b.lower()[i] && r.mean[i] <= b.upper()[i]);
        }
        assert!(crate::linalg::min_eigenvalue(&r.covariance) > -1e-8);
    }

    #[test]
    fn existence_gating() {
        let cfg = MomentConfig::default();
        let cauchy = EllipticalJoint::standard(Family::StudentT { nu: 1.0 }, 1).unwrap();
        let r = truncated_moments(&cauchy, &bx(&[0.0], &[INF]), &cfg).unwrap();
        assert!(!r.mean_exists[0]);
        assert!(matches!(r.mean_checked(), Err(Error::NonExistentMoment(_))));

        let t = EllipticalJoint::standard(Family::StudentT { nu: 1.0 }, 2).unwrap();
        let r = truncated_moments(&t, &bx(&[-1.0, 0.0], &[1.0, INF]), &cfg).unwrap();
        assert!(r.mean_checked().is_ok());
        assert!(r.mean.iter().all(|v| v.is_finite()));
        assert!(matches!(r.covariance_checked(), Err(Error::NonExistentMoment(_))));
        assert!(r.second_exists[0][0]);
        assert!(r.second_exists[0][1]);
        assert!(!r.second_exists[1][1]);
    }

    #[test]
    fn wrong_family_rejected() {
        let t = EllipticalJoint::standard(Family::StudentT { nu: 3.0 }, 1).unwrap();
        let b = bx(&[0.0], &[1.0]);
        let cfg = MomentConfig::default();
        assert_eq!(tmvn_mean_cov(&t, &b, &cfg), Err(Error::WrongFamily));
        let n = EllipticalJoint::standard(Family::Normal, 1).unwrap();
        assert_eq!(tmvt_mean_cov(&n, &b, &cfg), Err(Error::WrongFamily));
    }

    #[test]
    fn order_cap_enforced() {
        let n = EllipticalJoint::standard(Family::Normal, 1).unwrap();
        let r = tmvn_product_moment(&n, &bx(&[0.0], &[1.0]), &MomentOrder::new(vec![9]), &MomentConfig::default());
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }
}
