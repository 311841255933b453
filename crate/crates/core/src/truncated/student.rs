//! First two moments of a rectangle-truncated multivariate Student-t.
//!
//! For `ν > 2` the moments follow from integrating the gradient of
//! `G(y) = (1 + δ(y)/ν)^{-(ν+p-2)/2}` over the box, which leaves face integrals
//! that are themselves `(p-1)`-variate t probabilities with `ν - 1` degrees of
//! freedom. For `ν <= 2` the law is integrated as a gamma scale mixture of normals.

use std::cell::RefCell;
use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use crate::bounds::TruncationBox;
use crate::elliptical::{ln_t_normalizer, EllipticalJoint};
use crate::error::{Error, Result};
use crate::linalg;
use crate::rectangle::{rectangle_prob, RectangleProbSettings};

use super::normal::KanRobotti;

const MIXTURE_TOL: f64 = 1e-11;

/// `t_p(loc, scale, ν)` restricted to `[lower, upper]`.
#[derive(Debug, Clone)]
struct TLaw {
    nu: f64,
    loc: DVector<f64>,
    scale: DMatrix<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

struct FaceTerm {
    coord: usize,
    at_lower: bool,
    limit: f64,
    weight: f64,
    /// Face law and its box probability; absent in one dimension.
    face: Option<(TLaw, f64)>,
}

impl TLaw {
    fn dim(&self) -> usize {
        self.loc.len()
    }

    fn prob(&self, settings: &RectangleProbSettings) -> Result<(f64, f64)> {
        let joint = EllipticalJoint::student(self.nu, self.loc.clone(), self.scale.clone())?;
        let bx = TruncationBox::new(self.lower.clone(), self.upper.clone())?;
        let est = rectangle_prob(&joint, &bx, settings)?;
        Ok((est.prob, est.error))
    }

    /// `W_k(c)` for every finite limit.
    fn face_terms(&self, settings: &RectangleProbSettings) -> Result<Vec<FaceTerm>> {
        let p = self.dim();
        let pf = p as f64;
        let nu = self.nu;
        let chol = linalg::cholesky(&self.scale, "t dispersion")?;
        let ln_c = (nu / (nu + pf - 2.0)).ln() + ln_t_normalizer(nu, p) - 0.5 * linalg::ln_det(&chol);
        let mut terms = Vec::new();
        for k in 0..p {
            for (at_lower, limit) in [(true, self.lower[k]), (false, self.upper[k])] {
                if !limit.is_finite() {
                    continue;
                }
                let s_kk = self.scale[(k, k)];
                let dev = limit - self.loc[k];
                let delta_k = dev * dev / s_kk;
                let mut ln_w = ln_c - 0.5 * (nu + pf - 2.0) * (delta_k / nu).ln_1p();
                let face = if p == 1 {
                    None
                } else {
                    let rest: Vec<usize> = (0..p).filter(|&i| i != k).collect();
                    let cross = linalg::sub_matrix(&self.scale, &rest, &[k]);
                    let loc = linalg::sub_vector(&self.loc, &rest) + &cross * (dev / s_kk);
                    let schur = linalg::sub_matrix(&self.scale, &rest, &rest)
                        - &cross * cross.transpose() / s_kk;
                    let s_c = (nu + delta_k) / (nu - 1.0);
                    let scale = linalg::symmetrize(&(schur * s_c));
                    let law = TLaw {
                        nu: nu - 1.0,
                        loc,
                        scale,
                        lower: rest.iter().map(|&i| self.lower[i]).collect(),
                        upper: rest.iter().map(|&i| self.upper[i]).collect(),
                    };
                    let face_chol = linalg::cholesky(&law.scale, "face dispersion")?;
                    let (prob, _) = law.prob(settings)?;
                    ln_w += prob.ln() - ln_t_normalizer(nu - 1.0, p - 1)
                        + 0.5 * linalg::ln_det(&face_chol);
                    Some((law, prob))
                };
                let weight = ln_w.exp();
                terms.push(FaceTerm {
                    coord: k,
                    at_lower,
                    limit,
                    weight: if weight.is_finite() { weight } else { 0.0 },
                    face,
                });
            }
        }
        Ok(terms)
    }

    /// `P · E[X - loc]` from the face terms.
    fn centered_mean_mass(&self, terms: &[FaceTerm]) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim());
        for t in terms {
            let sign = if t.at_lower { 1.0 } else { -1.0 };
            g[t.coord] += sign * t.weight;
        }
        &self.scale * g
    }

    fn mean_given_prob(&self, prob: f64, settings: &RectangleProbSettings) -> Result<DVector<f64>> {
        let terms = self.face_terms(settings)?;
        Ok(&self.loc + self.centered_mean_mass(&terms) / prob)
    }
}

pub(crate) struct StudentMoments {
    pub prob: f64,
    pub prob_error: f64,
    pub mean: DVector<f64>,
    /// `E[X Xᵀ]`, with NaN where the entry does not exist.
    pub second: DMatrix<f64>,
}

impl StudentMoments {
    /// Zero-probability box: nothing can be normalized.
    fn empty(p: usize, prob_error: f64) -> Self {
        Self {
            prob: 0.0,
            prob_error,
            mean: DVector::from_element(p, f64::NAN),
            second: DMatrix::from_element(p, p, f64::NAN),
        }
    }
}

/// Direct moments for `ν > 2`.
pub(crate) fn student_mean_second(
    dist: &EllipticalJoint,
    bx: &TruncationBox,
    settings: &RectangleProbSettings,
) -> Result<StudentMoments> {
    let nu = dist.nu().ok_or(Error::WrongFamily)?;
    if nu <= 2.0 {
        return Err(Error::invalid("gradient identities need more than two degrees of freedom"));
    }
    let p = dist.dim();
    let xi = dist.xi().clone();
    let shifted = bx.shifted(xi.as_slice());
    let law = TLaw {
        nu,
        loc: DVector::zeros(p),
        scale: dist.omega().clone(),
        lower: shifted.lower().to_vec(),
        upper: shifted.upper().to_vec(),
    };
    let (prob, prob_error) = law.prob(settings)?;
    if !(prob > 0.0) {
        return Ok(StudentMoments::empty(p, prob_error));
    }
    let settings = &settings.relative_to(prob);
    let terms = law.face_terms(settings)?;
    let centered_mean = law.centered_mean_mass(&terms) / prob;

    let inflated = TLaw {
        nu: nu - 2.0,
        scale: &law.scale * (nu / (nu - 2.0)),
        ..law.clone()
    };
    let (l2, _) = inflated.prob(settings)?;

    // H[k][j] collects W_k(c) (y_j at the face) with the upper face positive.
    let mut h = DMatrix::<f64>::zeros(p, p);
    for t in &terms {
        if t.weight == 0.0 {
            continue;
        }
        let sign = if t.at_lower { -1.0 } else { 1.0 };
        let mut at_face = DVector::zeros(p);
        at_face[t.coord] = t.limit;
        if let Some((face, face_prob)) = &t.face {
            if *face_prob > 0.0 {
                let fm = face.mean_given_prob(*face_prob, settings)?;
                let mut n = 0;
                for j in 0..p {
                    if j != t.coord {
                        at_face[j] = fm[n];
                        n += 1;
                    }
                }
            }
        }
        for j in 0..p {
            h[(t.coord, j)] += sign * t.weight * at_face[j];
        }
    }
    let centered_second = (&law.scale * (nu / (nu - 2.0) * l2) - &law.scale * h) / prob;
    let centered_second = linalg::symmetrize(&centered_second);
    let mean = &xi + &centered_mean;
    let second = &centered_second
        + &xi * centered_mean.transpose()
        + &centered_mean * xi.transpose()
        + &xi * xi.transpose();
    Ok(StudentMoments {
        prob,
        prob_error,
        mean,
        second: linalg::symmetrize(&second),
    })
}

/// Moments as a gamma scale mixture of truncated normals, for any `ν > 0`.
///
/// Only entries flagged in `mean_ok` / `second_ok` are integrated; the rest are NaN.
pub(crate) fn student_mixture(
    dist: &EllipticalJoint,
    bx: &TruncationBox,
    mean_ok: &[bool],
    second_ok: &[Vec<bool>],
    settings: &RectangleProbSettings,
) -> Result<StudentMoments> {
    let nu = dist.nu().ok_or(Error::WrongFamily)?;
    let p = dist.dim();
    let xi = dist.xi().clone();
    let shifted = bx.shifted(xi.as_slice());
    let omega = dist.omega().clone();
    let half = 0.5 * nu;
    let ln_norm = half * half.ln() - ln_gamma(half);

    // Unnormalized moments of N(0, Ω/w): index 0 is the mass, then means, then the upper triangle.
    let mut orders: Vec<Vec<u32>> = vec![vec![0; p]];
    for i in 0..p {
        let mut k = vec![0; p];
        k[i] = 1;
        orders.push(k);
    }
    for i in 0..p {
        for j in i..p {
            let mut k = vec![0; p];
            k[i] += 1;
            k[j] += 1;
            orders.push(k);
        }
    }
    let cache: RefCell<HashMap<u64, Vec<f64>>> = RefCell::new(HashMap::new());
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let nodes = |u: f64| -> Option<Vec<f64>> {
        if let Some(v) = cache.borrow().get(&u.to_bits()) {
            return Some(v.clone());
        }
        let w = u / (1.0 - u);
        let values = if !(1e-100..=1e100).contains(&w) {
            vec![0.0; orders.len()]
        } else {
            let ln_g = ln_norm + (half - 1.0) * w.ln() - half * w;
            let jac = 1.0 / ((1.0 - u) * (1.0 - u));
            let scale = (ln_g.exp()) * jac;
            if scale == 0.0 {
                vec![0.0; orders.len()]
            } else {
                let mut kr = KanRobotti::new(DVector::zeros(p), &omega / w, &shifted, settings);
                let mut out = Vec::with_capacity(orders.len());
                for k in &orders {
                    match kr.unnormalized(k) {
                        Ok(v) => out.push(v * scale),
                        Err(e) => {
                            *failure.borrow_mut() = Some(e);
                            return None;
                        }
                    }
                }
                out
            }
        };
        cache.borrow_mut().insert(u.to_bits(), values.clone());
        Some(values)
    };
    let integrate = |idx: usize| -> f64 {
        quadrature::double_exponential::integrate(
            |u| nodes(u).map_or(f64::NAN, |v| v[idx]),
            0.0,
            1.0,
            MIXTURE_TOL,
        )
        .integral
    };
    let prob = integrate(0);
    if let Some(e) = failure.borrow_mut().take() {
        return Err(e);
    }
    if !(prob > 0.0) {
        return Ok(StudentMoments::empty(p, 0.0));
    }
    let mut centered_mean = DVector::from_element(p, f64::NAN);
    for i in 0..p {
        if mean_ok[i] {
            centered_mean[i] = integrate(1 + i) / prob;
        }
    }
    let mut centered_second = DMatrix::from_element(p, p, f64::NAN);
    let mut n = 1 + p;
    for i in 0..p {
        for j in i..p {
            if second_ok[i][j] {
                let v = integrate(n) / prob;
                centered_second[(i, j)] = v;
                centered_second[(j, i)] = v;
            }
            n += 1;
        }
    }
    if let Some(e) = failure.borrow_mut().take() {
        return Err(e);
    }
    let mean = &xi + &centered_mean;
    let mut second = DMatrix::from_element(p, p, f64::NAN);
    for i in 0..p {
        for j in 0..p {
            second[(i, j)] = centered_second[(i, j)]
                + xi[i] * centered_mean[j]
                + centered_mean[i] * xi[j]
                + xi[i] * xi[j];
        }
    }
    Ok(StudentMoments {
        prob,
        prob_error: 0.0,
        mean,
        second,
    })
}
