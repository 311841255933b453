//! Elliptical joints with normal or Student-t kernels.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg;
use crate::univariate::Family;

/// `EC_r(xi, omega)` with a normal or Student-t generator.
#[derive(Debug, Clone)]
pub struct EllipticalJoint {
    family: Family,
    xi: DVector<f64>,
    omega: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl PartialEq for EllipticalJoint {
    fn eq(&self, other: &Self) -> bool {
        self.family == other.family && self.xi == other.xi && self.omega == other.omega
    }
}

impl EllipticalJoint {
    pub fn new(family: Family, xi: DVector<f64>, omega: DMatrix<f64>) -> Result<Self> {
        if let Family::StudentT { nu } = family {
            Family::student(nu)?;
        }
        linalg::check_square(&omega, "dispersion")?;
        if omega.nrows() != xi.len() {
            return Err(Error::DimensionMismatch {
                expected: xi.len(),
                found: omega.nrows(),
            });
        }
        if xi.is_empty() {
            return Err(Error::invalid("elliptical joint must have dimension >= 1"));
        }
        if xi.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("location has non-finite entries"));
        }
        if !linalg::is_symmetric(&omega, linalg::SYMMETRY_RTOL) {
            return Err(Error::NotPositiveDefinite("dispersion is not symmetric".into()));
        }
        let omega = linalg::symmetrize(&omega);
        let chol = linalg::cholesky(&omega, "dispersion")?;
        Ok(Self {
            family,
            xi,
            omega,
            chol,
        })
    }

    pub fn normal(xi: DVector<f64>, omega: DMatrix<f64>) -> Result<Self> {
        Self::new(Family::Normal, xi, omega)
    }

    pub fn student(nu: f64, xi: DVector<f64>, omega: DMatrix<f64>) -> Result<Self> {
        Self::new(Family::student(nu)?, xi, omega)
    }

    /// Standard normal or standard t of dimension `dim`.
    pub fn standard(family: Family, dim: usize) -> Result<Self> {
        Self::new(family, DVector::zeros(dim), DMatrix::identity(dim, dim))
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn nu(&self) -> Option<f64> {
        self.family.nu()
    }

    pub fn xi(&self) -> &DVector<f64> {
        &self.xi
    }

    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn dim(&self) -> usize {
        self.xi.len()
    }

    pub(crate) fn cholesky(&self) -> &Cholesky<f64, Dyn> {
        &self.chol
    }

    pub fn ln_det_omega(&self) -> f64 {
        linalg::ln_det(&self.chol)
    }

    pub fn with_family(&self, family: Family) -> Result<Self> {
        Self::new(family, self.xi.clone(), self.omega.clone())
    }

    /// Same kernel with location `xi` and dispersion `omega`.
    pub fn with_params(&self, xi: DVector<f64>, omega: DMatrix<f64>) -> Result<Self> {
        Self::new(self.family, xi, omega)
    }

    fn check_indices(&self, idx: &[usize]) -> Result<()> {
        let r = self.dim();
        let mut seen = vec![false; r];
        for &i in idx {
            if i >= r {
                return Err(Error::IndexOutOfRange { index: i, dim: r });
            }
            if seen[i] {
                return Err(Error::invalid(format!("index {i} listed twice")));
            }
            seen[i] = true;
        }
        Ok(())
    }

    /// Law of the sub-vector `X[keep]`.
    pub fn marginal(&self, keep: &[usize]) -> Result<Self> {
        if keep.is_empty() {
            return Err(Error::invalid("marginal index set is empty"));
        }
        self.check_indices(keep)?;
        Self::new(
            self.family,
            linalg::sub_vector(&self.xi, keep),
            linalg::sub_matrix(&self.omega, keep, keep),
        )
    }

    /// Law of the remaining coordinates (ascending order) given `X[given] = value`.
    pub fn conditional(&self, given: &[usize], value: &DVector<f64>) -> Result<Self> {
        let part = IndexPartition::from_set_two(self.dim(), given)?;
        if part.set_one().is_empty() {
            return Err(Error::invalid("conditioning set must be a proper subset"));
        }
        if value.len() != given.len() {
            return Err(Error::DimensionMismatch {
                expected: given.len(),
                found: value.len(),
            });
        }
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("conditioning value has non-finite entries"));
        }
        let rest = part.set_one();
        let o11 = linalg::sub_matrix(&self.omega, rest, rest);
        let o12 = linalg::sub_matrix(&self.omega, rest, given);
        let o22 = linalg::sub_matrix(&self.omega, given, given);
        let chol22 = linalg::cholesky(&o22, "conditioning block")?;
        let dev = value - linalg::sub_vector(&self.xi, given);
        let w = chol22.solve(&dev);
        let loc = linalg::sub_vector(&self.xi, rest) + &o12 * &w;
        let schur = &o11 - &o12 * chol22.solve(&o12.transpose());
        let r2 = given.len() as f64;
        let (family, scale) = match self.family {
            Family::Normal => (Family::Normal, schur),
            Family::StudentT { nu } => {
                let delta = dev.dot(&w);
                (
                    Family::StudentT { nu: nu + r2 },
                    schur * ((nu + delta) / (nu + r2)),
                )
            }
        };
        Self::new(family, loc, linalg::symmetrize(&scale))
    }

    /// `(x - xi)ᵀ omega⁻¹ (x - xi)`.
    pub fn mahalanobis(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_point(x)?;
        Ok(linalg::inv_quad_form(&self.chol, &(x - &self.xi)))
    }

    /// `(nu + dim) / (nu + delta(x))`, the squared scale factor of the t kernel.
    pub fn nu_factor(&self, x: &DVector<f64>) -> Result<f64> {
        let nu = self.nu().ok_or(Error::WrongFamily)?;
        let delta = self.mahalanobis(x)?;
        Ok((nu + self.dim() as f64) / (nu + delta))
    }

    pub fn ln_density(&self, x: &DVector<f64>) -> Result<f64> {
        let delta = self.mahalanobis(x)?;
        Ok(self.ln_density_from_delta(delta))
    }

    pub fn density(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.ln_density(x)?.exp())
    }

    pub(crate) fn ln_density_from_delta(&self, delta: f64) -> f64 {
        let r = self.dim() as f64;
        let half_ln_det = 0.5 * self.ln_det_omega();
        match self.family {
            Family::Normal => -0.5 * r * (2.0 * PI).ln() - half_ln_det - 0.5 * delta,
            Family::StudentT { nu } => {
                ln_t_normalizer(nu, self.dim()) - half_ln_det
                    - 0.5 * (nu + r) * (delta / nu).ln_1p()
            }
        }
    }

    fn check_point(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(())
    }
}

/// `ln Γ((ν+r)/2) - ln Γ(ν/2) - (r/2) ln(νπ)`.
pub(crate) fn ln_t_normalizer(nu: f64, r: usize) -> f64 {
    let r = r as f64;
    ln_gamma(0.5 * (nu + r)) - ln_gamma(0.5 * nu) - 0.5 * r * (nu * PI).ln()
}

/// Ordered split of `0..r` into two complementary index lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexPartition {
    set_one: Vec<usize>,
    set_two: Vec<usize>,
}

impl IndexPartition {
    pub fn new(dim: usize, set_one: Vec<usize>, set_two: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; dim];
        for &i in set_one.iter().chain(&set_two) {
            if i >= dim {
                return Err(Error::IndexOutOfRange { index: i, dim });
            }
            if seen[i] {
                return Err(Error::invalid(format!("index {i} appears twice in partition")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::invalid("partition does not cover every index"));
        }
        Ok(Self { set_one, set_two })
    }

    /// `set_two` as given; `set_one` is the ascending complement.
    pub fn from_set_two(dim: usize, set_two: &[usize]) -> Result<Self> {
        let mut in_two = vec![false; dim];
        for &i in set_two {
            if i >= dim {
                return Err(Error::IndexOutOfRange { index: i, dim });
            }
            in_two[i] = true;
        }
        let set_one = (0..dim).filter(|&i| !in_two[i]).collect();
        Self::new(dim, set_one, set_two.to_vec())
    }

    pub fn set_one(&self) -> &[usize] {
        &self.set_one
    }

    pub fn set_two(&self) -> &[usize] {
        &self.set_two
    }
}
