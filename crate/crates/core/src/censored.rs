//! Expectations arising in E-steps of interval-censored selection-elliptical models.
//!
//! For `Y` truncated to `[a, b]` and positive selection `X₁ > 0`,
//!
//! `E[g(Y) f_{X₁}(0 | X₂=Y) / P(X₁ > 0 | X₂=Y)]
//!     = P(a ≤ W₀ ≤ b)/P(a ≤ Y₀ ≤ b) · η · E[g(W)]`
//!
//! with `η = f_{X₁}(0)/P(X₁ ≥ 0)`, `W₀ = X₂ | X₁ = 0` and `W = W₀ | a ≤ W₀ ≤ b`.

use nalgebra::{DMatrix, DVector};

use crate::bounds::TruncationBox;
use crate::elliptical::EllipticalJoint;
use crate::error::{Error, Result};
use crate::rectangle::{rectangle_prob, RectangleProbSettings};
use crate::selection::{build_selection_with, se_box_prob, SelectionSpec, SutParams};
use crate::truncated::{truncated_moments, MomentConfig};

/// Polynomial `g` supported by [`CensoredFactor::expectation`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GSpec {
    One,
    /// `g(y) = y`
    First,
    /// `g(y) = y yᵀ`
    Second,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GValue {
    Scalar(f64),
    Vector(DVector<f64>),
    Matrix(DMatrix<f64>),
}

impl GValue {
    pub fn as_scalar(&self) -> Option<f64> {
        match self {
            GValue::Scalar(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_vector(&self) -> Option<&DVector<f64>> {
        match self {
            GValue::Vector(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_matrix(&self) -> Option<&DMatrix<f64>> {
        match self {
            GValue::Matrix(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CensoredFactor {
    pub eta: f64,
    pub ln_eta: f64,
    pub prob_ratio: f64,
    pub ln_prob_ratio: f64,
    /// `W₀`; `None` when every outcome coordinate is observed.
    pub limiting: Option<EllipticalJoint>,
    /// Box of `W`.
    pub truncated_limiting: TruncationBox,
}

impl CensoredFactor {
    /// `prob_ratio · η`.
    pub fn scale(&self) -> f64 {
        (self.ln_prob_ratio + self.ln_eta).exp()
    }

    /// Right-hand side of the identity for the given `g`.
    pub fn expectation(&self, g: GSpec, config: &MomentConfig) -> Result<GValue> {
        let scale = self.scale();
        let Some(w0) = &self.limiting else {
            return Ok(match g {
                GSpec::One => GValue::Scalar(scale),
                GSpec::First => GValue::Vector(DVector::zeros(0)),
                GSpec::Second => GValue::Matrix(DMatrix::zeros(0, 0)),
            });
        };
        if g == GSpec::One {
            return Ok(GValue::Scalar(scale));
        }
        let report = truncated_moments(w0, &self.truncated_limiting, config)?;
        Ok(match g {
            GSpec::First => GValue::Vector(report.mean_checked()? * scale),
            _ => GValue::Matrix(report.second_moment_checked()? * scale),
        })
    }
}

fn check_positive_selection(spec: &SelectionSpec) -> Result<()> {
    let sel = spec.selection_box();
    let ok = sel.lower().iter().all(|&a| a == 0.0) && sel.upper().iter().all(|&b| b == f64::INFINITY);
    if ok {
        Ok(())
    } else {
        Err(Error::invalid("censoring identities need the selection set [0, inf)^q"))
    }
}

fn ln_eta(spec: &SelectionSpec) -> Result<f64> {
    let q = spec.q();
    if q == 0 {
        return Err(Error::invalid("censoring identities need at least one selection coordinate"));
    }
    let x1 = spec.joint().marginal(&spec.selection_indices())?;
    Ok(x1.ln_density(&DVector::zeros(q))? - spec.selection_prob().ln())
}

fn ln_ratio(num: f64, den: f64) -> Result<f64> {
    if !(num > 0.0 && den > 0.0) {
        return Err(Error::numerical(format!(
            "probability underflow in censoring ratio ({num:e} / {den:e})"
        )));
    }
    Ok(num.ln() - den.ln())
}

/// Factor of the identity for a selection spec with selection set `[0, ∞)^q`.
pub fn censored_factor_spec(
    spec: &SelectionSpec,
    bx: &TruncationBox,
    settings: &RectangleProbSettings,
) -> Result<CensoredFactor> {
    check_positive_selection(spec)?;
    if bx.dim() != spec.p() {
        return Err(Error::DimensionMismatch {
            expected: spec.p(),
            found: bx.dim(),
        });
    }
    let ln_eta = ln_eta(spec)?;
    let w0 = spec
        .joint()
        .conditional(&spec.selection_indices(), &DVector::zeros(spec.q()))?;
    let num = rectangle_prob(&w0, bx, settings)?.prob;
    let den = se_box_prob(spec, bx, settings)?.prob;
    let ln_prob_ratio = ln_ratio(num, den)?;
    Ok(CensoredFactor {
        eta: ln_eta.exp(),
        ln_eta,
        prob_ratio: ln_prob_ratio.exp(),
        ln_prob_ratio,
        limiting: Some(w0),
        truncated_limiting: bx.clone(),
    })
}

pub fn censored_factor(
    params: &SutParams,
    bx: &TruncationBox,
    settings: &RectangleProbSettings,
) -> Result<CensoredFactor> {
    censored_factor_spec(&build_selection_with(params, settings)?, bx, settings)
}

/// Factor of the conditional identity given `Y[observed] = y1`.
///
/// The returned laws and box refer to the unobserved coordinates in ascending order.
pub fn censored_factor_conditional_spec(
    spec: &SelectionSpec,
    bx: &TruncationBox,
    observed: &[usize],
    y1: &DVector<f64>,
    settings: &RectangleProbSettings,
) -> Result<CensoredFactor> {
    check_positive_selection(spec)?;
    let p = spec.p();
    if bx.dim() != p {
        return Err(Error::DimensionMismatch { expected: p, found: bx.dim() });
    }
    if observed.len() != y1.len() {
        return Err(Error::DimensionMismatch {
            expected: observed.len(),
            found: y1.len(),
        });
    }
    for (k, &i) in observed.iter().enumerate() {
        if i >= p {
            return Err(Error::IndexOutOfRange { index: i, dim: p });
        }
        if !(bx.lower()[i]..=bx.upper()[i]).contains(&y1[k]) {
            return Err(Error::invalid(format!(
                "observed value {} lies outside [{}, {}] for coordinate {i}",
                y1[k],
                bx.lower()[i],
                bx.upper()[i]
            )));
        }
    }
    if observed.is_empty() {
        return censored_factor_spec(spec, bx, settings);
    }
    let free: Vec<usize> = (0..p).filter(|i| !observed.contains(i)).collect();
    if free.is_empty() {
        let given: Vec<usize> = observed.iter().map(|&i| spec.q() + i).collect();
        let x1 = spec.joint().conditional(&given, y1)?;
        let sel = rectangle_prob(&x1, spec.selection_box(), settings)?.prob;
        let ln_eta = x1.ln_density(&DVector::zeros(spec.q()))? - ln_ratio(sel, 1.0)?;
        return Ok(CensoredFactor {
            eta: ln_eta.exp(),
            ln_eta,
            prob_ratio: 1.0,
            ln_prob_ratio: 0.0,
            limiting: None,
            truncated_limiting: TruncationBox::unbounded(0),
        });
    }
    let cond = spec.condition_outcome(observed, y1, settings)?;
    censored_factor_spec(&cond, &bx.select(&free), settings)
}

pub fn censored_factor_conditional(
    params: &SutParams,
    bx: &TruncationBox,
    observed: &[usize],
    y1: &DVector<f64>,
    settings: &RectangleProbSettings,
) -> Result<CensoredFactor> {
    let spec = build_selection_with(params, settings)?;
    censored_factor_conditional_spec(&spec, bx, observed, y1, settings)
}

/// `ln [f_{X₁}(0 | X₂=y) / P(X₁ > 0 | X₂=y)]`, the weight inside the left-hand side.
pub fn ln_censoring_weight(spec: &SelectionSpec, y: &DVector<f64>, settings: &RectangleProbSettings) -> Result<f64> {
    check_positive_selection(spec)?;
    let x1 = spec.joint().conditional(&spec.outcome_indices(), y)?;
    let prob = rectangle_prob(&x1, spec.selection_box(), settings)?.prob;
    Ok(x1.ln_density(&DVector::zeros(spec.q()))? - ln_ratio(prob, 1.0)?)
}

pub fn censoring_weight(spec: &SelectionSpec, y: &DVector<f64>, settings: &RectangleProbSettings) -> Result<f64> {
    Ok(ln_censoring_weight(spec, y, settings)?.exp())
}
