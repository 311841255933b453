//! Selection-elliptical laws `Y = X₂ | X₁ ∈ C` and their truncated moments.

use nalgebra::{DMatrix, DVector};

use crate::bounds::{MomentOrder, TruncationBox};
use crate::elliptical::EllipticalJoint;
use crate::error::{Error, Result};
use crate::linalg;
use crate::rectangle::{rectangle_prob, ProbEstimate, RectangleProbSettings};
use crate::truncated::{
    existence_check, product_moment, truncated_moments, MomentConfig, MomentReport, MomentValue,
};
use crate::univariate::Family;

/// Joint law of `(X₁, X₂)` with `X₁` of length `q` selected on a rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionSpec {
    joint: EllipticalJoint,
    q: usize,
    selection_box: TruncationBox,
    selection_prob: f64,
}

impl SelectionSpec {
    pub fn new(joint: EllipticalJoint, q: usize, selection_box: TruncationBox) -> Result<Self> {
        Self::with_settings(joint, q, selection_box, &RectangleProbSettings::default())
    }

    pub fn with_settings(
        joint: EllipticalJoint,
        q: usize,
        selection_box: TruncationBox,
        settings: &RectangleProbSettings,
    ) -> Result<Self> {
        if q >= joint.dim() {
            return Err(Error::invalid(format!(
                "selection dimension {q} leaves no outcome coordinates in a {}-dimensional joint",
                joint.dim()
            )));
        }
        if selection_box.dim() != q {
            return Err(Error::DimensionMismatch {
                expected: q,
                found: selection_box.dim(),
            });
        }
        let selection_prob = if q == 0 {
            1.0
        } else {
            let sel: Vec<usize> = (0..q).collect();
            rectangle_prob(&joint.marginal(&sel)?, &selection_box, settings)?.prob
        };
        if !(selection_prob > 0.0) {
            return Err(Error::invalid("selection event has zero probability"));
        }
        Ok(Self {
            joint,
            q,
            selection_box,
            selection_prob,
        })
    }

    /// No selection: `Y` follows the joint itself.
    pub fn symmetric(joint: EllipticalJoint) -> Self {
        Self {
            joint,
            q: 0,
            selection_box: TruncationBox::unbounded(0),
            selection_prob: 1.0,
        }
    }

    pub fn joint(&self) -> &EllipticalJoint {
        &self.joint
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn p(&self) -> usize {
        self.joint.dim() - self.q
    }

    pub fn family(&self) -> Family {
        self.joint.family()
    }

    pub fn selection_box(&self) -> &TruncationBox {
        &self.selection_box
    }

    /// `P(X₁ ∈ C)`.
    pub fn selection_prob(&self) -> f64 {
        self.selection_prob
    }

    pub fn selection_indices(&self) -> Vec<usize> {
        (0..self.q).collect()
    }

    pub fn outcome_indices(&self) -> Vec<usize> {
        (self.q..self.joint.dim()).collect()
    }

    /// Law of `X₂` before selection.
    pub fn outcome_law(&self) -> Result<EllipticalJoint> {
        self.joint.marginal(&self.outcome_indices())
    }

    /// `(C, box)` over the joint coordinates.
    pub fn augmented_box(&self, bx: &TruncationBox) -> Result<TruncationBox> {
        if bx.dim() != self.p() {
            return Err(Error::DimensionMismatch {
                expected: self.p(),
                found: bx.dim(),
            });
        }
        Ok(self.selection_box.concat(bx))
    }

    /// Spec of the outcome coordinates `keep`, selection unchanged.
    pub fn outcome_marginal(&self, keep: &[usize]) -> Result<Self> {
        if keep.is_empty() {
            return Err(Error::invalid("marginal needs at least one outcome coordinate"));
        }
        let mut idx = self.selection_indices();
        for &i in keep {
            if i >= self.p() {
                return Err(Error::IndexOutOfRange { index: i, dim: self.p() });
            }
            idx.push(self.q + i);
        }
        Ok(Self {
            joint: self.joint.marginal(&idx)?,
            q: self.q,
            selection_box: self.selection_box.clone(),
            selection_prob: self.selection_prob,
        })
    }

    /// Spec of the remaining outcome coordinates given `Y[observed] = y1`.
    ///
    /// Outcome coordinates keep their relative order. `observed` must leave at least one
    /// coordinate free.
    pub fn condition_outcome(
        &self,
        observed: &[usize],
        y1: &DVector<f64>,
        settings: &RectangleProbSettings,
    ) -> Result<Self> {
        if observed.is_empty() {
            return Ok(self.clone());
        }
        if let Some(&bad) = observed.iter().find(|&&i| i >= self.p()) {
            return Err(Error::IndexOutOfRange { index: bad, dim: self.p() });
        }
        let given: Vec<usize> = observed.iter().map(|&i| self.q + i).collect();
        let joint = self.joint.conditional(&given, y1)?;
        Self::with_settings(joint, self.q, self.selection_box.clone(), settings)
    }

    /// Spec of `A Y + b`.
    pub fn affine(&self, a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Self> {
        let p = self.p();
        let q = self.q;
        if a.nrows() != p || a.ncols() != p || b.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: a.nrows(),
            });
        }
        let r = p + q;
        let mut t = DMatrix::<f64>::identity(r, r);
        t.view_mut((q, q), (p, p)).copy_from(a);
        let mut shift = DVector::zeros(r);
        shift.rows_mut(q, p).copy_from(b);
        let xi = &t * self.joint.xi() + shift;
        let omega = linalg::symmetrize(&(&t * self.joint.omega() * t.transpose()));
        Ok(Self {
            joint: EllipticalJoint::new(self.family(), xi, omega)?,
            q,
            selection_box: self.selection_box.clone(),
            selection_prob: self.selection_prob,
        })
    }
}

/// Unified skew-t / skew-normal parameters `(μ, Σ, Λ, τ, Ψ, ν)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SutParams {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    /// `p × q` shape matrix.
    pub lambda: DMatrix<f64>,
    pub tau: DVector<f64>,
    pub psi: DMatrix<f64>,
    /// Degrees of freedom; `None` for the normal kernel.
    pub nu: Option<f64>,
}

impl SutParams {
    pub fn new(
        mu: DVector<f64>,
        sigma: DMatrix<f64>,
        lambda: DMatrix<f64>,
        tau: DVector<f64>,
        psi: DMatrix<f64>,
        nu: Option<f64>,
    ) -> Result<Self> {
        let params = Self {
            mu,
            sigma,
            lambda,
            tau,
            psi,
            nu,
        };
        params.validate()?;
        Ok(params)
    }

    /// Extended skew-t (`nu = Some`) or extended skew-normal (`nu = None`).
    pub fn extended(mu: DVector<f64>, sigma: DMatrix<f64>, lambda: DVector<f64>, tau: f64, nu: Option<f64>) -> Result<Self> {
        let p = lambda.len();
        Self::new(
            mu,
            sigma,
            DMatrix::from_column_slice(p, 1, lambda.as_slice()),
            DVector::from_element(1, tau),
            DMatrix::identity(1, 1),
            nu,
        )
    }

    /// Skew-t or skew-normal: extended form with `τ = 0`.
    pub fn skew(mu: DVector<f64>, sigma: DMatrix<f64>, lambda: DVector<f64>, nu: Option<f64>) -> Result<Self> {
        Self::extended(mu, sigma, lambda, 0.0, nu)
    }

    pub fn p(&self) -> usize {
        self.mu.len()
    }

    pub fn q(&self) -> usize {
        self.tau.len()
    }

    pub fn family(&self) -> Result<Family> {
        match self.nu {
            None => Ok(Family::Normal),
            Some(nu) => Family::student(nu),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.p();
        let q = self.q();
        if p == 0 {
            return Err(Error::invalid("location must have at least one entry"));
        }
        if self.sigma.shape() != (p, p) {
            return Err(Error::invalid(format!("sigma must be {p}x{p}")));
        }
        if self.lambda.shape() != (p, q) {
            return Err(Error::invalid(format!("lambda must be {p}x{q}")));
        }
        if self.psi.shape() != (q, q) {
            return Err(Error::invalid(format!("psi must be {q}x{q}")));
        }
        let finite = |m: &[f64]| m.iter().all(|v| v.is_finite());
        if !finite(self.mu.as_slice())
            || !finite(self.lambda.as_slice())
            || !finite(self.tau.as_slice())
        {
            return Err(Error::invalid("parameters must be finite"));
        }
        if !linalg::is_symmetric(&self.sigma, linalg::SYMMETRY_RTOL) {
            return Err(Error::NotPositiveDefinite("sigma is not symmetric".into()));
        }
        linalg::cholesky(&self.sigma, "sigma")?;
        if q > 0 {
            if (0..q).any(|i| (self.psi[(i, i)] - 1.0).abs() > 1e-12) {
                return Err(Error::invalid("psi must have a unit diagonal"));
            }
            if !linalg::is_symmetric(&self.psi, linalg::SYMMETRY_RTOL) {
                return Err(Error::NotPositiveDefinite("psi is not symmetric".into()));
            }
            linalg::cholesky(&self.psi, "psi")?;
        }
        self.family()?;
        Ok(())
    }

    /// `Ω₁₁ = Ψ + ΛᵀΛ`.
    pub fn omega11(&self) -> DMatrix<f64> {
        &self.psi + self.lambda.transpose() * &self.lambda
    }

    /// `Ω₂₁ = Σ^{1/2} Λ`.
    pub fn omega21(&self) -> Result<DMatrix<f64>> {
        Ok(linalg::sym_sqrt(&self.sigma, "sigma")? * &self.lambda)
    }
}

/// Joint `(X₁, X₂)` with `ξ = (τ, μ)` and selection on `[0, ∞)^q`.
pub fn build_selection(params: &SutParams) -> Result<SelectionSpec> {
    build_selection_with(params, &RectangleProbSettings::default())
}

pub fn build_selection_with(params: &SutParams, settings: &RectangleProbSettings) -> Result<SelectionSpec> {
    params.validate()?;
    let (p, q) = (params.p(), params.q());
    let r = p + q;
    let o21 = params.omega21()?;
    let mut omega = DMatrix::zeros(r, r);
    omega.view_mut((0, 0), (q, q)).copy_from(&params.omega11());
    omega.view_mut((q, 0), (p, q)).copy_from(&o21);
    omega.view_mut((0, q), (q, p)).copy_from(&o21.transpose());
    omega.view_mut((q, q), (p, p)).copy_from(&params.sigma);
    let mut xi = DVector::zeros(r);
    xi.rows_mut(0, q).copy_from(&params.tau);
    xi.rows_mut(q, p).copy_from(&params.mu);
    let joint = EllipticalJoint::new(params.family()?, xi, linalg::symmetrize(&omega))?;
    if q == 0 {
        return Ok(SelectionSpec::symmetric(joint));
    }
    SelectionSpec::with_settings(joint, q, TruncationBox::lower_orthant(vec![0.0; q])?, settings)
}

/// `ln f_Y(y)`.
pub fn se_ln_pdf(spec: &SelectionSpec, y: &DVector<f64>, settings: &RectangleProbSettings) -> Result<f64> {
    let outcome = spec.outcome_law()?;
    let ln_kernel = outcome.ln_density(y)?;
    if spec.q() == 0 {
        return Ok(ln_kernel);
    }
    let cond = spec.joint().conditional(&spec.outcome_indices(), y)?;
    let num = rectangle_prob(&cond, spec.selection_box(), settings)?.prob;
    Ok(ln_kernel + num.ln() - spec.selection_prob().ln())
}

/// Density of `Y = X₂ | X₁ ∈ C`.
pub fn se_pdf(spec: &SelectionSpec, y: &DVector<f64>, settings: &RectangleProbSettings) -> Result<f64> {
    Ok(se_ln_pdf(spec, y, settings)?.exp())
}

/// `P(a <= Y <= b)`.
pub fn se_box_prob(spec: &SelectionSpec, bx: &TruncationBox, settings: &RectangleProbSettings) -> Result<ProbEstimate> {
    let aug = spec.augmented_box(bx)?;
    let joint = rectangle_prob(spec.joint(), &aug, settings)?;
    let s = spec.selection_prob();
    Ok(ProbEstimate {
        prob: (joint.prob / s).min(1.0),
        error: joint.error / s,
    })
}

/// Mean and covariance of `Y | a <= Y <= b`.
pub fn tse_mean_cov(spec: &SelectionSpec, bx: &TruncationBox, config: &MomentConfig) -> Result<MomentReport> {
    let aug = spec.augmented_box(bx)?;
    let full = truncated_moments(spec.joint(), &aug, config)?;
    let idx = spec.outcome_indices();
    let p = spec.p();
    let mean = linalg::sub_vector(&full.mean, &idx);
    let second = linalg::sub_matrix(&full.second_moment, &idx, &idx);
    let covariance = linalg::sub_matrix(&full.covariance, &idx, &idx);
    let mean_exists = idx.iter().map(|&i| full.mean_exists[i]).collect();
    let second_exists = (0..p)
        .map(|a| (0..p).map(|b| full.second_exists[idx[a]][idx[b]]).collect())
        .collect();
    Ok(MomentReport {
        prob_mass: full.prob_mass / spec.selection_prob(),
        prob_error: full.prob_error / spec.selection_prob(),
        mean,
        second_moment: second,
        covariance,
        mean_exists,
        second_exists,
        method: full.method,
        notes: full.notes,
    })
}

/// `E[Y^k | a <= Y <= b]`.
pub fn tse_moment(
    spec: &SelectionSpec,
    bx: &TruncationBox,
    order: &MomentOrder,
    config: &MomentConfig,
) -> Result<MomentValue> {
    if order.dim() != spec.p() {
        return Err(Error::DimensionMismatch {
            expected: spec.p(),
            found: order.dim(),
        });
    }
    let aug = spec.augmented_box(bx)?;
    product_moment(spec.joint(), &aug, &order.padded_front(spec.q()), config)
}

/// Prop. 2 verdict on the outcome box.
pub fn sut_existence(params: &SutParams, bx: &TruncationBox, order: &MomentOrder) -> Result<bool> {
    Ok(existence_check(params.family()?, bx, order))
}

/// Limit of the law as the extension parameter goes to `-∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitingTParams {
    pub gamma: DVector<f64>,
    pub big_gamma: DMatrix<f64>,
    pub omega_tau: f64,
    /// `ν + q`; `None` for the normal kernel.
    pub df_out: Option<f64>,
    /// `τ/√(1+λᵀλ)` when `q = 1`.
    pub tau_tilde: Option<f64>,
    /// `Σ^{1/2}λ/√(1+λᵀλ)` when `q = 1`.
    pub delta: Option<DVector<f64>>,
}

impl LimitingTParams {
    /// `t_p(γ, ω_τ Γ, ν + q)` or `N_p(γ, Γ)`.
    pub fn law(&self) -> Result<EllipticalJoint> {
        match self.df_out {
            None => EllipticalJoint::normal(self.gamma.clone(), self.big_gamma.clone()),
            Some(df) => EllipticalJoint::student(df, self.gamma.clone(), &self.big_gamma * self.omega_tau),
        }
    }
}

pub fn limiting_t(params: &SutParams) -> Result<LimitingTParams> {
    params.validate()?;
    let q = params.q();
    let o11 = params.omega11();
    let o21 = params.omega21()?;
    let chol = linalg::cholesky(&o11, "omega11")?;
    let gamma = &params.mu - &o21 * chol.solve(&params.tau);
    let big_gamma = linalg::symmetrize(&(&params.sigma - &o21 * chol.solve(&o21.transpose())));
    let (omega_tau, df_out) = match params.nu {
        None => (1.0, None),
        Some(nu) => {
            let quad = linalg::inv_quad_form(&chol, &params.tau);
            ((nu + quad) / (nu + q as f64), Some(nu + q as f64))
        }
    };
    let (tau_tilde, delta) = if q == 1 {
        let lam = params.lambda.column(0).into_owned();
        let norm = (1.0 + lam.norm_squared()).sqrt();
        let root = linalg::sym_sqrt(&params.sigma, "sigma")?;
        (Some(params.tau[0] / norm), Some(root * lam / norm))
    } else {
        (None, None)
    };
    Ok(LimitingTParams {
        gamma,
        big_gamma,
        omega_tau,
        df_out,
        tau_tilde,
        delta,
    })
}
