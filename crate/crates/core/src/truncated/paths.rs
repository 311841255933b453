//! Reductions for degenerate, far-out and doubly infinite coordinates.

use nalgebra::{DMatrix, DVector};

use crate::bounds::TruncationBox;
use crate::elliptical::{EllipticalJoint, IndexPartition};
use crate::error::{Error, Result};
use crate::linalg;
use crate::rectangle::rectangle_prob;
use crate::univariate::Family;

use super::{
    moment_flags, normal, truncated_moments, Method, MomentConfig, MomentReport,
    OUT_OF_BOUNDS_PROB,
};

/// Expected conditional-scale inflation of the unbounded block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Omega12Constant {
    pub value: f64,
}

fn marginal_interval(dist: &EllipticalJoint, bx: &TruncationBox, i: usize) -> f64 {
    let s = dist.omega()[(i, i)].sqrt();
    let c = dist.xi()[i];
    dist.family()
        .interval((bx.lower()[i] - c) / s, (bx.upper()[i] - c) / s)
}

/// Coordinates whose marginal box probability underflows.
pub(crate) fn detect_out_of_bounds(dist: &EllipticalJoint, bx: &TruncationBox) -> Vec<usize> {
    (0..bx.dim())
        .filter(|&i| !bx.is_doubly_infinite(i) && marginal_interval(dist, bx, i) < OUT_OF_BOUNDS_PROB)
        .collect()
}

pub(crate) fn least_likely_coordinate(dist: &EllipticalJoint, bx: &TruncationBox) -> usize {
    (0..bx.dim())
        .filter(|&i| !bx.is_doubly_infinite(i))
        .min_by(|&i, &j| {
            marginal_interval(dist, bx, i).total_cmp(&marginal_interval(dist, bx, j))
        })
        .unwrap_or(0)
}

/// Finite limit the mass concentrates on as the interval recedes from the center.
fn approached_limit(dist: &EllipticalJoint, bx: &TruncationBox, i: usize) -> f64 {
    let (a, b) = (bx.lower()[i], bx.upper()[i]);
    if b <= dist.xi()[i] {
        b
    } else if a >= dist.xi()[i] {
        a
    } else {
        // Center inside the interval: pick the nearer finite limit.
        let c = dist.xi()[i];
        if (b - c).abs() < (c - a).abs() {
            b
        } else {
            a
        }
    }
}

pub(crate) fn degenerate(
    dist: &EllipticalJoint,
    bx: &TruncationBox,
    idx: &[usize],
    config: &MomentConfig,
) -> Result<MomentReport> {
    let values: Vec<f64> = idx.iter().map(|&i| bx.lower()[i]).collect();
    pin(dist, bx, idx, &values, config, Method::Degenerate)
}

/// Pins `idx` at their approached limits and truncates the rest of the conditional law.
pub(crate) fn condition_on_limits(
    dist: &EllipticalJoint,
    bx: &TruncationBox,
    idx: &[usize],
    config: &MomentConfig,
    method: Method,
) -> Result<MomentReport> {
    let values: Vec<f64> = idx.iter().map(|&i| approached_limit(dist, bx, i)).collect();
    pin(dist, bx, idx, &values, config, method)
}

fn pin(
    dist: &EllipticalJoint,
    bx: &TruncationBox,
    idx: &[usize],
    values: &[f64],
    config: &MomentConfig,
    method: Method,
) -> Result<MomentReport> {
    let p = dist.dim();
    let part = IndexPartition::from_set_two(p, idx)?;
    let rest = part.set_one();
    let mut mean = DVector::zeros(p);
    let mut cov = DMatrix::zeros(p, p);
    let mut mean_exists = vec![true; p];
    let mut second_exists = vec![vec![true; p]; p];
    for (&i, &v) in idx.iter().zip(values) {
        mean[i] = v;
    }
    let mut notes = Vec::new();
    if rest.is_empty() {
        notes.push("every coordinate pinned at a limit; point mass".to_string());
    } else {
        let cond = dist.conditional(idx, &DVector::from_row_slice(values))?;
        let sub = truncated_moments(&cond, &bx.select(rest), config)?;
        for (a, &i) in rest.iter().enumerate() {
            mean[i] = sub.mean[a];
            mean_exists[i] = sub.mean_exists[a];
            for (b, &j) in rest.iter().enumerate() {
                cov[(i, j)] = sub.covariance[(a, b)];
                second_exists[i][j] = sub.second_exists[a][b];
            }
        }
        notes.push(format!("remaining block via {}", sub.method));
        notes.extend(sub.notes);
    }
    let pinned: Vec<String> = idx.iter().map(|i| i.to_string()).collect();
    notes.insert(0, format!("pinned coordinates [{}]", pinned.join(", ")));
    let mut report =
        MomentReport::from_mean_cov((0.0, 0.0), mean, cov, (mean_exists, second_exists), method);
    report.notes = notes;
    Ok(report)
}

/// Moments when the block `partition.set_two()` lies far outside the bulk of its law.
pub fn moments_out_of_bounds(
    dist: &EllipticalJoint,
    bx: &TruncationBox,
    partition: &IndexPartition,
    config: &MomentConfig,
) -> Result<MomentReport> {
    if bx.dim() != dist.dim() {
        return Err(Error::DimensionMismatch {
            expected: dist.dim(),
            found: bx.dim(),
        });
    }
    let far = partition.set_two();
    if far.is_empty() {
        return Err(Error::invalid("out-of-bounds block is empty"));
    }
    for &i in far {
        if bx.is_doubly_infinite(i) {
            return Err(Error::invalid(format!("coordinate {i} has no finite limit")));
        }
    }
    condition_on_limits(dist, bx, far, config, Method::OutOfBounds)
}

/// `ω₁.₂` for the truncated block law `dist` on `bx`.
pub fn omega_12(
    dist: &EllipticalJoint,
    bx: &TruncationBox,
    config: &MomentConfig,
) -> Result<Omega12Constant> {
    let nu = match dist.family() {
        Family::Normal => return Ok(Omega12Constant { value: 1.0 }),
        Family::StudentT { nu } => nu,
    };
    if nu <= 2.0 {
        return Err(Error::invalid(format!(
            "scale constant needs more than two degrees of freedom, got {nu}"
        )));
    }
    let inflated = EllipticalJoint::student(nu - 2.0, dist.xi().clone(), dist.omega() * (nu / (nu - 2.0)))?;
    let num = rectangle_prob(&inflated, bx, &config.qmc)?;
    let den = rectangle_prob(dist, bx, &config.qmc)?;
    if !(den.prob > 0.0) {
        return Err(Error::numerical("block box probability underflowed"));
    }
    Ok(Omega12Constant {
        value: nu / (nu - 2.0) * num.prob / den.prob,
    })
}

/// `ω₁.₂` from the block moments: `(ν + E[δ(X₂)]) / (ν + r₂ - 2)`.
fn omega_from_moments(dist: &EllipticalJoint, block: &MomentReport) -> Result<f64> {
    let nu = match dist.family() {
        Family::Normal => return Ok(1.0),
        Family::StudentT { nu } => nu,
    };
    let r2 = dist.dim() as f64;
    let d = &block.mean - dist.xi();
    let raw = &block.covariance + &d * d.transpose();
    let chol = linalg::cholesky(dist.omega(), "block dispersion")?;
    let e_delta = (chol.solve(&raw)).trace();
    Ok((nu + e_delta) / (nu + r2 - 2.0))
}

pub(crate) fn double_infinite(
    dist: &EllipticalJoint,
    bx: &TruncationBox,
    config: &MomentConfig,
) -> Result<MomentReport> {
    let p = dist.dim();
    let free: Vec<usize> = (0..p).filter(|&i| bx.is_doubly_infinite(i)).collect();
    let trunc: Vec<usize> = (0..p).filter(|&i| !bx.is_doubly_infinite(i)).collect();
    let block = dist.marginal(&trunc)?;
    let bx2 = bx.select(&trunc);
    let rep2 = truncated_moments(&block, &bx2, config)?;

    let o11 = linalg::sub_matrix(dist.omega(), &free, &free);
    let o12 = linalg::sub_matrix(dist.omega(), &free, &trunc);
    let chol22 = linalg::cholesky(block.omega(), "truncated block")?;
    let b = chol22.solve(&o12.transpose()).transpose();
    let omega = match dist.family() {
        Family::Normal => 1.0,
        // Same value as `omega_12`, without two more rectangle probabilities.
        Family::StudentT { .. } => omega_from_moments(&block, &rep2)?,
    };

    let mu2 = &rep2.mean;
    let s22 = &rep2.covariance;
    let mean1 = linalg::sub_vector(dist.xi(), &free) + &b * (mu2 - block.xi());
    let cov11 = (&o11 - &b * o12.transpose()) * omega + &b * s22 * b.transpose();
    let cov12 = &b * s22;

    let mut mean = DVector::zeros(p);
    let mut cov = DMatrix::zeros(p, p);
    for (a, &i) in free.iter().enumerate() {
        mean[i] = mean1[a];
        for (c, &j) in free.iter().enumerate() {
            cov[(i, j)] = cov11[(a, c)];
        }
        for (c, &j) in trunc.iter().enumerate() {
            cov[(i, j)] = cov12[(a, c)];
            cov[(j, i)] = cov12[(a, c)];
        }
    }
    for (a, &i) in trunc.iter().enumerate() {
        mean[i] = mu2[a];
        for (c, &j) in trunc.iter().enumerate() {
            cov[(i, j)] = s22[(a, c)];
        }
    }
    let flags = moment_flags(dist.family(), bx);
    let mut report = MomentReport::from_mean_cov(
        (rep2.prob_mass, rep2.prob_error),
        mean,
        cov,
        flags,
        Method::DoubleInfinite,
    );
    report.notes.push(format!("truncated block via {}", rep2.method));
    report.notes.extend(rep2.notes);
    Ok(report)
}

/// Public entry for the doubly infinite reduction.
pub fn moments_with_double_infinite(
    dist: &EllipticalJoint,
    bx: &TruncationBox,
    config: &MomentConfig,
) -> Result<MomentReport> {
    if bx.dim() != dist.dim() {
        return Err(Error::DimensionMismatch {
            expected: dist.dim(),
            found: bx.dim(),
        });
    }
    if bx.is_everywhere_unbounded() {
        return truncated_moments(dist, bx, config);
    }
    if !(0..bx.dim()).any(|i| bx.is_doubly_infinite(i)) {
        return Err(Error::invalid("no coordinate has two infinite limits"));
    }
    double_infinite(dist, bx, config)
}

/// Normal product moments, pinning degenerate and far-out coordinates first.
pub(crate) fn normal_product_moment(
    dist: &EllipticalJoint,
    bx: &TruncationBox,
    k: &[u32],
    config: &MomentConfig,
) -> Result<f64> {
    let p = dist.dim();
    let mut pinned: Vec<usize> = (0..p).filter(|&i| bx.is_degenerate(i)).collect();
    let mut values: Vec<f64> = pinned.iter().map(|&i| bx.lower()[i]).collect();
    if pinned.is_empty() {
        pinned = detect_out_of_bounds(dist, bx);
        values = pinned.iter().map(|&i| approached_limit(dist, bx, i)).collect();
    }
    if pinned.is_empty() {
        return normal::normal_product_moment(dist, bx, k, &config.qmc);
    }
    let mut factor = 1.0;
    for (&i, &v) in pinned.iter().zip(&values) {
        factor *= v.powi(k[i] as i32);
    }
    if pinned.len() == p {
        return Ok(factor);
    }
    let part = IndexPartition::from_set_two(p, &pinned)?;
    let rest = part.set_one();
    let cond = dist.conditional(&pinned, &DVector::from_row_slice(&values))?;
    let k_rest: Vec<u32> = rest.iter().map(|&i| k[i]).collect();
    Ok(factor * normal_product_moment(&cond, &bx.select(rest), &k_rest, config)?)
}

#[cfg(test)]
mod tests {
    use super::*;

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
    fn far_lower_tail_pins_upper_limit() {
        let n = EllipticalJoint::normal(dv(&[0.0, 0.0]), dm(2, &[1.0, 0.5, 0.5, 1.0])).unwrap();
        let b = bx(&[-INF, -50.0], &[INF, -49.0]);
        let r = truncated_moments(&n, &b, &MomentConfig::default()).unwrap();
        assert_eq!(r.method, Method::OutOfBounds);
        assert_eq!(r.mean[1], -49.0);
        assert_eq!(r.covariance[(1, 1)], 0.0);
        assert!((r.mean[0] + 24.5).abs() < 1e-12);
        assert!((r.covariance[(0, 0)] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn far_upper_tail_pins_lower_limit() {
        let n = EllipticalJoint::standard(Family::Normal, 1).unwrap();
        let r = truncated_moments(&n, &bx(&[40.0], &[41.0]), &MomentConfig::default()).unwrap();
        assert_eq!(r.mean[0], 40.0);
        assert!(r.notes.iter().any(|s| s.contains("point mass")));
    }

    #[test]
    fn degenerate_coordinate_conditions() {
        let n = EllipticalJoint::normal(dv(&[0.0, 0.0]), dm(2, &[1.0, 0.5, 0.5, 1.0])).unwrap();
        let r = truncated_moments(&n, &bx(&[0.5, -INF], &[0.5, INF]), &MomentConfig::default())
            .unwrap();
        assert_eq!(r.method, Method::Degenerate);
        assert_eq!(r.mean[0], 0.5);
        assert!((r.mean[1] - 0.25).abs() < 1e-14);
        assert!((r.covariance[(1, 1)] - 0.75).abs() < 1e-14);
    }

    #[test]
    fn double_infinite_matches_direct_normal() {
        let n = EllipticalJoint::normal(dv(&[0.1, -0.2]), dm(2, &[1.0, 0.6, 0.6, 2.0])).unwrap();
        let b = bx(&[-INF, 0.0], &[INF, INF]);
        let cfg = MomentConfig::default();
        let via = moments_with_double_infinite(&n, &b, &cfg).unwrap();
        let direct = super::super::direct(&n, &b, &cfg).unwrap();
        assert!((&via.mean - &direct.mean).abs().max() < 1e-9);
        assert!((&via.covariance - &direct.covariance).abs().max() < 1e-9);
        // Cross block equals Σ₂₂ Ω₂₂⁻¹ Ω₂₁.
        let s22 = via.covariance[(1, 1)];
        assert!((via.covariance[(0, 1)] - s22 * 0.6 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn double_infinite_matches_direct_t() {
        let t = EllipticalJoint::student(
            6.0,
            dv(&[0.0, 0.3, -0.2]),
            dm(3, &[1.0, 0.3, 0.2, 0.3, 1.2, -0.1, 0.2, -0.1, 0.9]),
        )
        .unwrap();
        let b = bx(&[-INF, -0.5, 0.0], &[INF, 1.0, INF]);
        let cfg = MomentConfig::default();
        let via = moments_with_double_infinite(&t, &b, &cfg).unwrap();
        let direct = super::super::direct(&t, &b, &cfg).unwrap();
        assert!((&via.mean - &direct.mean).abs().max() < 1e-6, "{} {}", via.mean, direct.mean);
        assert!((&via.covariance - &direct.covariance).abs().max() < 1e-6);
    }

    #[test]
    fn omega_constant_cases() {
        let cfg = MomentConfig::default();
        let n = EllipticalJoint::standard(Family::Normal, 1).unwrap();
        assert_eq!(omega_12(&n, &bx(&[0.0], &[1.0]), &cfg).unwrap().value, 1.0);
        let t = EllipticalJoint::standard(Family::StudentT { nu: 4.0 }, 2).unwrap();
        let w = omega_12(&t, &TruncationBox::unbounded(2), &cfg).unwrap();
        assert!((w.value - 2.0).abs() < 1e-15);
        let t = EllipticalJoint::standard(Family::StudentT { nu: 2.0 }, 1).unwrap();
        assert!(omega_12(&t, &bx(&[0.0], &[1.0]), &cfg).is_err());
    }

    #[test]
    fn omega_constant_against_quadrature() {
        let t = EllipticalJoint::standard(Family::StudentT { nu: 5.0 }, 1).unwrap();
        let w = omega_12(&t, &bx(&[0.0], &[1.0]), &MomentConfig::default()).unwrap();
        let n = 100_000;
        let h = 1.0 / n as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            let x = (i as f64 + 0.5) * h;
            let f = crate::univariate::t_pdf(x, 5.0);
            num += f * (5.0 + x * x) / 4.0;
            den += f;
        }
        assert!((w.value - num / den).abs() < 1e-9);
    }

    #[test]
    fn omega_ratio_equals_moment_form() {
        let cfg = MomentConfig::default();
        let t = EllipticalJoint::student(6.0, dv(&[0.3, -0.2]), dm(2, &[1.2, -0.1, -0.1, 0.9])).unwrap();
        let b = bx(&[-0.5, 0.0], &[1.0, INF]);
        let ratio = omega_12(&t, &b, &cfg).unwrap().value;
        let rep = truncated_moments(&t, &b, &cfg).unwrap();
        let moments = omega_from_moments(&t, &rep).unwrap();
        assert!((ratio - moments).abs() < 1e-10, "{ratio} {moments}");
    }
}
