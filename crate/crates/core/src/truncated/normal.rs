//! Product moments of a rectangle-truncated multivariate normal.
//!
//! Unnormalized moments `F(k) = ∫_a^b x^k φ(x; μ, Σ) dx` satisfy
//! `F(k + e_i) = μ_i F(k) + Σ_j Σ_ij c_j(k)` with
//! `c_j(k) = k_j F(k - e_j) + a_j^k_j φ_j(a_j) F_{j,a}(k_{-j}) - b_j^k_j φ_j(b_j) F_{j,b}(k_{-j})`,
//! where `F_{j,c}` integrates the conditional law given `x_j = c` over the remaining box.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::bounds::TruncationBox;
use crate::elliptical::EllipticalJoint;
use crate::error::Result;
use crate::linalg;
use crate::rectangle::{rectangle_prob, RectangleProbSettings};
use crate::univariate::norm_pdf;

const FREE: u8 = 0;
const AT_LOWER: u8 = 1;
const AT_UPPER: u8 = 2;

/// Conditional normal on the free coordinates of a face.
struct Face {
    /// Position of each coordinate among the free ones, `usize::MAX` if fixed.
    pos: Vec<usize>,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    prob: f64,
    prob_error: f64,
}

pub(crate) struct KanRobotti<'a> {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    settings: &'a RectangleProbSettings,
    faces: HashMap<Vec<u8>, Face>,
    memo: HashMap<(Vec<u8>, Vec<u32>), f64>,
}

impl<'a> KanRobotti<'a> {
    pub(crate) fn new(
        mu: DVector<f64>,
        sigma: DMatrix<f64>,
        bx: &TruncationBox,
        settings: &'a RectangleProbSettings,
    ) -> Self {
        Self {
            mu,
            sigma,
            lower: bx.lower().to_vec(),
            upper: bx.upper().to_vec(),
            settings,
            faces: HashMap::new(),
            memo: HashMap::new(),
        }
    }

    fn dim(&self) -> usize {
        self.mu.len()
    }

    fn root(&self) -> Vec<u8> {
        vec![FREE; self.dim()]
    }

    /// `P(a <= X <= b)` with its integration error.
    pub(crate) fn prob(&mut self) -> Result<(f64, f64)> {
        let root = self.root();
        self.ensure_face(&root)?;
        let f = &self.faces[&root];
        Ok((f.prob, f.prob_error))
    }

    /// Unnormalized product moment `∫_a^b x^k φ(x) dx`.
    pub(crate) fn unnormalized(&mut self, k: &[u32]) -> Result<f64> {
        let root = self.root();
        self.moment(&root, k.to_vec())
    }

    fn ensure_face(&mut self, state: &[u8]) -> Result<()> {
        if self.faces.contains_key(state) {
            return Ok(());
        }
        let p = self.dim();
        let free: Vec<usize> = (0..p).filter(|&i| state[i] == FREE).collect();
        let fixed: Vec<usize> = (0..p).filter(|&i| state[i] != FREE).collect();
        let mut pos = vec![usize::MAX; p];
        for (n, &i) in free.iter().enumerate() {
            pos[i] = n;
        }
        let (mean, cov) = if fixed.is_empty() {
            (self.mu.clone(), self.sigma.clone())
        } else {
            let x_fixed = DVector::from_iterator(
                fixed.len(),
                fixed.iter().map(|&i| {
                    if state[i] == AT_LOWER {
                        self.lower[i]
                    } else {
                        self.upper[i]
                    }
                }),
            );
            let s_ff = linalg::sub_matrix(&self.sigma, &free, &free);
            let s_fg = linalg::sub_matrix(&self.sigma, &free, &fixed);
            let s_gg = linalg::sub_matrix(&self.sigma, &fixed, &fixed);
            let chol = linalg::cholesky(&s_gg, "face block")?;
            let dev = x_fixed - linalg::sub_vector(&self.mu, &fixed);
            let mean = linalg::sub_vector(&self.mu, &free) + &s_fg * chol.solve(&dev);
            let cov = linalg::symmetrize(&(&s_ff - &s_fg * chol.solve(&s_fg.transpose())));
            (mean, cov)
        };
        let settings = if fixed.is_empty() {
            *self.settings
        } else {
            let root = self.root();
            self.ensure_face(&root)?;
            self.settings.relative_to(self.faces[&root].prob)
        };
        let (prob, prob_error) = if free.is_empty() {
            (1.0, 0.0)
        } else {
            let joint = EllipticalJoint::normal(mean.clone(), cov.clone())?;
            let bx = TruncationBox::new(
                free.iter().map(|&i| self.lower[i]).collect(),
                free.iter().map(|&i| self.upper[i]).collect(),
            )?;
            let est = rectangle_prob(&joint, &bx, &settings)?;
            (est.prob, est.error)
        };
        self.faces.insert(
            state.to_vec(),
            Face {
                pos,
                mean,
                cov,
                prob,
                prob_error,
            },
        );
        Ok(())
    }

    fn moment(&mut self, state: &[u8], k: Vec<u32>) -> Result<f64> {
        self.ensure_face(state)?;
        let key = (state.to_vec(), k);
        if let Some(&v) = self.memo.get(&key) {
            return Ok(v);
        }
        let (state_v, k) = key;
        let value = self.compute(&state_v, &k)?;
        self.memo.insert((state_v, k), value);
        Ok(value)
    }

    fn compute(&mut self, state: &[u8], k: &[u32]) -> Result<f64> {
        let p = self.dim();
        let Some(i) = (0..p).find(|&i| k[i] > 0) else {
            return Ok(self.faces[state].prob);
        };
        let mut kp = k.to_vec();
        kp[i] -= 1;
        let (pi, mean_i) = {
            let f = &self.faces[state];
            (f.pos[i], f.mean[f.pos[i]])
        };
        let mut total = mean_i * self.moment(state, kp.clone())?;
        for j in 0..p {
            if state[j] != FREE {
                continue;
            }
            let (cov_ij, m_j, s_jj) = {
                let f = &self.faces[state];
                let pj = f.pos[j];
                (f.cov[(pi, pj)], f.mean[pj], f.cov[(pj, pj)])
            };
            if cov_ij == 0.0 {
                continue;
            }
            let mut c = 0.0;
            if kp[j] > 0 {
                let mut km = kp.clone();
                km[j] -= 1;
                c += kp[j] as f64 * self.moment(state, km)?;
            }
            let sd = s_jj.sqrt();
            for (side, limit, sign) in [(AT_LOWER, self.lower[j], 1.0), (AT_UPPER, self.upper[j], -1.0)] {
                if !limit.is_finite() {
                    continue;
                }
                let dens = norm_pdf((limit - m_j) / sd) / sd;
                if dens == 0.0 {
                    continue;
                }
                let mut child = state.to_vec();
                child[j] = side;
                let mut kf = kp.clone();
                kf[j] = 0;
                let inner = self.moment(&child, kf)?;
                c += sign * limit.powi(kp[j] as i32) * dens * inner;
            }
            total += cov_ij * c;
        }
        Ok(total)
    }
}

/// Truncated mean, second moment and probability, computed about the location.
pub(crate) struct NormalMoments {
    pub prob: f64,
    pub prob_error: f64,
    pub mean: DVector<f64>,
    pub second: DMatrix<f64>,
}

pub(crate) fn normal_mean_second(
    dist: &EllipticalJoint,
    bx: &TruncationBox,
    settings: &RectangleProbSettings,
) -> Result<NormalMoments> {
    let p = dist.dim();
    let xi = dist.xi().clone();
    let shifted = bx.shifted(xi.as_slice());
    let mut kr = KanRobotti::new(DVector::zeros(p), dist.omega().clone(), &shifted, settings);
    let (prob, prob_error) = kr.prob()?;
    let mut centered_mean = DVector::zeros(p);
    for i in 0..p {
        let mut k = vec![0; p];
        k[i] = 1;
        centered_mean[i] = kr.unnormalized(&k)? / prob;
    }
    let mut centered_second = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in i..p {
            let mut k = vec![0; p];
            k[i] += 1;
            k[j] += 1;
            let v = kr.unnormalized(&k)? / prob;
            centered_second[(i, j)] = v;
            centered_second[(j, i)] = v;
        }
    }
    let mean = &xi + &centered_mean;
    let second = &centered_second
        + &xi * centered_mean.transpose()
        + &centered_mean * xi.transpose()
        + &xi * xi.transpose();
    Ok(NormalMoments {
        prob,
        prob_error,
        mean,
        second: linalg::symmetrize(&second),
    })
}

/// `E[X^k | a <= X <= b]` for raw (uncentered) coordinates.
pub(crate) fn normal_product_moment(
    dist: &EllipticalJoint,
    bx: &TruncationBox,
    k: &[u32],
    settings: &RectangleProbSettings,
) -> Result<f64> {
    let mut kr = KanRobotti::new(dist.xi().clone(), dist.omega().clone(), bx, settings);
    let (prob, _) = kr.prob()?;
    if k.iter().all(|&v| v == 0) {
        return Ok(1.0);
    }
    Ok(kr.unnormalized(k)? / prob)
}
