//! Job files: distribution, box and command options.

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use seltrunc::{
    build_selection_with, EllipticalJoint, Family, RectangleProbSettings, SelectionSpec, SutParams, TruncationBox,
};

use crate::CliError;

/// A number that may also be written as `"inf"` or `"-inf"`.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(untagged)]
pub enum Num {
    Value(f64),
    Text(Limit),
}

#[derive(Debug, Clone, Copy, Deserialize)]
pub enum Limit {
    #[serde(rename = "inf")]
    Inf,
    #[serde(rename = "-inf")]
    NegInf,
}

impl Num {
    pub fn get(self) -> f64 {
        match self {
            Num::Value(v) => v,
            Num::Text(Limit::Inf) => f64::INFINITY,
            Num::Text(Limit::NegInf) => f64::NEG_INFINITY,
        }
    }
}

fn nums(v: &[Num]) -> Vec<f64> {
    v.iter().map(|n| n.get()).collect()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "family", deny_unknown_fields)]
pub enum Distribution {
    #[serde(rename = "normal")]
    Normal { mu: Vec<f64>, sigma: Vec<Vec<f64>> },
    #[serde(rename = "t")]
    T { mu: Vec<f64>, sigma: Vec<Vec<f64>>, nu: f64 },
    SN { mu: Vec<f64>, sigma: Vec<Vec<f64>>, lambda: Vec<f64> },
    ESN { mu: Vec<f64>, sigma: Vec<Vec<f64>>, lambda: Vec<f64>, tau: f64 },
    ST { mu: Vec<f64>, sigma: Vec<Vec<f64>>, lambda: Vec<f64>, nu: f64 },
    EST { mu: Vec<f64>, sigma: Vec<Vec<f64>>, lambda: Vec<f64>, tau: f64, nu: f64 },
    SUN { mu: Vec<f64>, sigma: Vec<Vec<f64>>, lambda: Vec<Vec<f64>>, tau: Vec<f64>, psi: Vec<Vec<f64>> },
    SUT { mu: Vec<f64>, sigma: Vec<Vec<f64>>, lambda: Vec<Vec<f64>>, tau: Vec<f64>, psi: Vec<Vec<f64>>, nu: f64 },
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, CliError> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(CliError::Input(format!("{what}: rows have different lengths")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

/// `lambda` given as `p` rows of length `q`; an empty matrix for `q = 0`.
fn shape_matrix(rows: &[Vec<f64>], p: usize) -> Result<DMatrix<f64>, CliError> {
    if rows.is_empty() {
        return Ok(DMatrix::zeros(p, 0));
    }
    matrix(rows, "lambda")
}

impl Distribution {
    pub fn sut_params(&self) -> Result<Option<SutParams>, CliError> {
        let v = |x: &[f64]| DVector::from_column_slice(x);
        let params = match self {
            Distribution::Normal { .. } | Distribution::T { .. } => return Ok(None),
            Distribution::SN { mu, sigma, lambda } => {
                SutParams::skew(v(mu), matrix(sigma, "sigma")?, v(lambda), None)?
            }
            Distribution::ESN { mu, sigma, lambda, tau } => {
                SutParams::extended(v(mu), matrix(sigma, "sigma")?, v(lambda), *tau, None)?
            }
            Distribution::ST { mu, sigma, lambda, nu } => {
                SutParams::skew(v(mu), matrix(sigma, "sigma")?, v(lambda), Some(*nu))?
            }
            Distribution::EST { mu, sigma, lambda, tau, nu } => {
                SutParams::extended(v(mu), matrix(sigma, "sigma")?, v(lambda), *tau, Some(*nu))?
            }
            Distribution::SUN { mu, sigma, lambda, tau, psi } => SutParams::new(
                v(mu),
                matrix(sigma, "sigma")?,
                shape_matrix(lambda, mu.len())?,
                v(tau),
                matrix(psi, "psi")?,
                None,
            )?,
            Distribution::SUT { mu, sigma, lambda, tau, psi, nu } => SutParams::new(
                v(mu),
                matrix(sigma, "sigma")?,
                shape_matrix(lambda, mu.len())?,
                v(tau),
                matrix(psi, "psi")?,
                Some(*nu),
            )?,
        };
        Ok(Some(params))
    }

    pub fn selection(&self, settings: &RectangleProbSettings) -> Result<SelectionSpec, CliError> {
        let joint = match self {
            Distribution::Normal { mu, sigma } => {
                EllipticalJoint::normal(DVector::from_column_slice(mu), matrix(sigma, "sigma")?)?
            }
            Distribution::T { mu, sigma, nu } => EllipticalJoint::new(
                Family::student(*nu)?,
                DVector::from_column_slice(mu),
                matrix(sigma, "sigma")?,
            )?,
            _ => {
                let params = self.sut_params()?.expect("skew family");
                return Ok(build_selection_with(&params, settings)?);
            }
        };
        Ok(SelectionSpec::symmetric(joint))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub lower: Vec<Num>,
    pub upper: Vec<Num>,
}

impl BoxSpec {
    pub fn build(&self) -> Result<TruncationBox, CliError> {
        Ok(TruncationBox::new(nums(&self.lower), nums(&self.upper))?)
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QmcSpec {
    pub max_points: Option<usize>,
    pub target_abs_error: Option<f64>,
    pub seed: Option<u64>,
    pub num_shifts: Option<usize>,
}

impl QmcSpec {
    pub fn build(&self) -> Result<RectangleProbSettings, CliError> {
        let mut s = RectangleProbSettings::default();
        if let Some(v) = self.max_points {
            s.max_points = v;
        }
        if let Some(v) = self.target_abs_error {
            s.target_abs_error = v;
        }
        if let Some(v) = self.seed {
            s.seed = v;
        }
        if let Some(v) = self.num_shifts {
            s.num_shifts = v;
        }
        s.validate()?;
        Ok(s)
    }
}

/// Evaluation grid for `pdf-grid`: `points[i]` equally spaced values on `[lower[i], upper[i]]`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub points: Vec<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobSpec {
    pub command: Option<String>,
    pub distribution: Distribution,
    #[serde(rename = "box")]
    pub bx: Option<BoxSpec>,
    pub order: Option<Vec<u32>>,
    pub alpha: Option<f64>,
    pub y_alpha: Option<Vec<Num>>,
    pub qmc: Option<QmcSpec>,
    pub seed: Option<u64>,
    pub grid: Option<GridSpec>,
    pub mc_draws: Option<usize>,
}

impl JobSpec {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Input(format!("malformed job file: {e}")))
    }

    pub fn settings(&self) -> Result<RectangleProbSettings, CliError> {
        self.qmc.clone().unwrap_or_default().build()
    }

    /// The job box, or the whole space.
    pub fn truncation(&self, p: usize) -> Result<TruncationBox, CliError> {
        match &self.bx {
            Some(b) => b.build(),
            None => Ok(TruncationBox::unbounded(p)),
        }
    }

    pub fn alpha(&self) -> Result<f64, CliError> {
        self.alpha
            .ok_or_else(|| CliError::Input("this command needs \"alpha\"".into()))
    }

    pub fn y_alpha(&self) -> Option<Vec<f64>> {
        self.y_alpha.as_deref().map(nums)
    }
}
