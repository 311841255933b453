//! Rectangle probabilities `P(a <= X <= b)` for normal and Student-t joints.
//!
//! One and two dimensions are integrated deterministically. Higher dimensions use
//! separation of variables with randomly shifted rank-1 lattice rules.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bounds::TruncationBox;
use crate::elliptical::EllipticalJoint;
use crate::error::{Error, Result};
use crate::univariate::{norm_pdf, Family};

/// Error estimates are this multiple of the standard error across shifts.
const ERROR_MULTIPLIER: f64 = 3.5;
const INITIAL_POINTS: usize = 1000;
const QUADRATURE_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RectangleProbSettings {
    /// Lattice points per shift.
    pub max_points: usize,
    pub target_abs_error: f64,
    pub seed: u64,
    pub num_shifts: usize,
}

impl Default for RectangleProbSettings {
    fn default() -> Self {
        Self {
            max_points: 20_000,
            target_abs_error: 1e-6,
            seed: 0x5EED,
            num_shifts: 12,
        }
    }
}

impl RectangleProbSettings {
    /// Settings for integrals that get divided by a box probability `mass`: the absolute
    /// target shrinks with it so that the ratio keeps its accuracy.
    pub fn relative_to(&self, mass: f64) -> Self {
        Self {
            target_abs_error: self.target_abs_error * mass.clamp(f64::MIN_POSITIVE, 1.0),
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_points < 1000 {
            return Err(Error::invalid("max_points must be at least 1000"));
        }
        if !(self.target_abs_error > 0.0) {
            return Err(Error::invalid("target_abs_error must be positive"));
        }
        if self.num_shifts < 8 {
            return Err(Error::invalid("num_shifts must be at least 8"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbEstimate {
    pub prob: f64,
    pub error: f64,
}

impl ProbEstimate {
    pub fn exact(prob: f64) -> Self {
        Self { prob, error: 0.0 }
    }
}

pub fn rectangle_prob(
    dist: &EllipticalJoint,
    bx: &TruncationBox,
    settings: &RectangleProbSettings,
) -> Result<ProbEstimate> {
    settings.validate()?;
    if bx.dim() != dist.dim() {
        return Err(Error::DimensionMismatch {
            expected: dist.dim(),
            found: bx.dim(),
        });
    }
    let active: Vec<usize> = (0..bx.dim()).filter(|&i| !bx.is_doubly_infinite(i)).collect();
    if active.is_empty() {
        return Ok(ProbEstimate::exact(1.0));
    }
    let fam = dist.family();
    let xi = dist.xi();
    let omega = dist.omega();
    let lower: Vec<f64> = active.iter().map(|&i| bx.lower()[i] - xi[i]).collect();
    let upper: Vec<f64> = active.iter().map(|&i| bx.upper()[i] - xi[i]).collect();
    for (k, &i) in active.iter().enumerate() {
        let s = omega[(i, i)].sqrt();
        if fam.interval(lower[k] / s, upper[k] / s) == 0.0 {
            return Ok(ProbEstimate::exact(0.0));
        }
    }
    let cov = DMatrix::from_fn(active.len(), active.len(), |r, c| omega[(active[r], active[c])]);
    let problem = SovProblem::new(fam, cov, lower, upper)?;
    Ok(match problem.dim() {
        1 => ProbEstimate::exact(problem.first_factor()),
        2 => problem.integrate_2d(),
        _ => problem.integrate_qmc(settings),
    })
}

/// Reordered, Cholesky-factored rectangle problem centered at zero.
struct SovProblem {
    family: Family,
    chol: DMatrix<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

/// Probability of `[lo, hi]` under a univariate kernel and a sampler on it.
#[derive(Clone, Copy)]
struct Slab {
    reflected: bool,
    from: f64,
    width: f64,
}

impl Slab {
    fn new(fam: &Family, lo: f64, hi: f64) -> Self {
        if lo > 0.0 {
            let sa = fam.sf(lo);
            let sb = fam.sf(hi);
            Self {
                reflected: true,
                from: sb,
                width: (sa - sb).max(0.0),
            }
        } else {
            let da = fam.cdf(lo);
            let db = fam.cdf(hi);
            Self {
                reflected: false,
                from: da,
                width: (db - da).max(0.0),
            }
        }
    }

    fn draw(&self, fam: &Family, w: f64, lo: f64, hi: f64) -> f64 {
        let u = (self.from + w * self.width).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
        let v = if self.reflected {
            -fam.quantile_unchecked(u)
        } else {
            fam.quantile_unchecked(u)
        };
        v.clamp(lo, hi).clamp(-1e100, 1e100)
    }
}

fn truncated_normal_mean(lo: f64, hi: f64) -> f64 {
    let p = Family::Normal.interval(lo, hi);
    if p > 1e-300 {
        let m = (norm_pdf(lo) - norm_pdf(hi)) / p;
        m.clamp(lo, hi)
    } else if lo > 0.0 {
        lo
    } else if hi < 0.0 {
        hi
    } else {
        0.0
    }
}

impl SovProblem {
    /// Cholesky factorization with Genz–Bretz variable reordering.
    fn new(family: Family, mut cov: DMatrix<f64>, mut lower: Vec<f64>, mut upper: Vec<f64>) -> Result<Self> {
        let p = cov.nrows();
        let mut l = DMatrix::<f64>::zeros(p, p);
        let mut y = vec![0.0; p];
        for i in 0..p {
            let step_fam = family.with_extra_df(i as f64);
            let mut best = i;
            let mut best_prob = f64::INFINITY;
            let mut best_limits = (0.0, 0.0);
            for j in i..p {
                let mut shift = 0.0;
                let mut ss = 0.0;
                for k in 0..i {
                    shift += l[(j, k)] * y[k];
                    ss += l[(j, k)] * l[(j, k)];
                }
                let s = (cov[(j, j)] - ss).max(0.0).sqrt();
                if s <= 0.0 {
                    return Err(Error::NotPositiveDefinite(
                        "rectangle dispersion is singular".into(),
                    ));
                }
                let lo = (lower[j] - shift) / s;
                let hi = (upper[j] - shift) / s;
                let prob = step_fam.interval(lo, hi);
                if prob < best_prob {
                    best_prob = prob;
                    best = j;
                    best_limits = (lo, hi);
                }
            }
            if best != i {
                cov.swap_rows(i, best);
                cov.swap_columns(i, best);
                lower.swap(i, best);
                upper.swap(i, best);
                l.swap_rows(i, best);
            }
            let mut ss = 0.0;
            for k in 0..i {
                ss += l[(i, k)] * l[(i, k)];
            }
            let d = (cov[(i, i)] - ss).sqrt();
            if !(d > 0.0) {
                return Err(Error::NotPositiveDefinite(
                    "rectangle dispersion is singular".into(),
                ));
            }
            l[(i, i)] = d;
            for j in (i + 1)..p {
                let mut s = cov[(j, i)];
                for k in 0..i {
                    s -= l[(j, k)] * l[(i, k)];
                }
                l[(j, i)] = s / d;
            }
            y[i] = truncated_normal_mean(best_limits.0, best_limits.1);
        }
        Ok(Self {
            family,
            chol: l,
            lower,
            upper,
        })
    }

    fn dim(&self) -> usize {
        self.lower.len()
    }

    fn first_factor(&self) -> f64 {
        let d = self.chol[(0, 0)];
        self.family.interval(self.lower[0] / d, self.upper[0] / d)
    }

    /// Integrand on `[0,1]^(p-1)`.
    fn eval(&self, w: &[f64], y: &mut [f64]) -> f64 {
        let p = self.dim();
        let nu = self.family.nu();
        let mut value = 1.0;
        let mut sumsq = 0.0;
        for i in 0..p {
            let mut shift = 0.0;
            for k in 0..i {
                shift += self.chol[(i, k)] * y[k];
            }
            let scale = match nu {
                Some(nu) => ((nu + sumsq) / (nu + i as f64)).sqrt(),
                None => 1.0,
            };
            let den = self.chol[(i, i)] * scale;
            let lo = (self.lower[i] - shift) / den;
            let hi = (self.upper[i] - shift) / den;
            let fam = self.family.with_extra_df(i as f64);
            let slab = Slab::new(&fam, lo, hi);
            value *= slab.width;
            if value == 0.0 {
                return 0.0;
            }
            if i + 1 < p {
                let t = slab.draw(&fam, w[i], lo, hi);
                let yi = t * scale;
                y[i] = yi;
                sumsq += yi * yi;
            }
        }
        value
    }

    fn integrate_2d(&self) -> ProbEstimate {
        let p1 = self.first_factor();
        let out = quadrature::double_exponential::integrate(
            |w| {
                let mut y = [0.0; 2];
                self.eval(&[w], &mut y) / p1
            },
            0.0,
            1.0,
            QUADRATURE_TOL,
        );
        let prob = (p1 * out.integral).clamp(0.0, 1.0);
        ProbEstimate {
            prob,
            error: p1 * out.error_estimate.abs(),
        }
    }

    fn integrate_qmc(&self, settings: &RectangleProbSettings) -> ProbEstimate {
        let dim = self.dim() - 1;
        let gen = richtmyer_vector(dim);
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
        let shifts: Vec<Vec<f64>> = (0..settings.num_shifts)
            .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
            .collect();
        let mut sums = vec![0.0; shifts.len()];
        let mut done = 0usize;
        let mut next = INITIAL_POINTS.min(settings.max_points);
        loop {
            let start = done;
            let partial: Vec<f64> = shifts
                .par_iter()
                .map(|shift| {
                    let mut w = vec![0.0; dim];
                    let mut y = vec![0.0; dim + 1];
                    let mut acc = 0.0;
                    for j in start..next {
                        let jf = (j + 1) as f64;
                        for d in 0..dim {
                            let x = (jf * gen[d] + shift[d]).fract();
                            w[d] = 1.0 - (2.0 * x - 1.0).abs();
                        }
                        acc += self.eval(&w, &mut y);
                    }
                    acc
                })
                .collect();
            for (s, v) in sums.iter_mut().zip(partial) {
                *s += v;
            }
            done = next;
            let est = summarize(&sums, done);
            if est.error <= settings.target_abs_error || done >= settings.max_points {
                return est;
            }
            next = (done * 2).min(settings.max_points);
        }
    }
}

fn summarize(sums: &[f64], n: usize) -> ProbEstimate {
    let m = sums.len() as f64;
    let means: Vec<f64> = sums.iter().map(|s| s / n as f64).collect();
    let mean = means.iter().sum::<f64>() / m;
    let var = means.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    ProbEstimate {
        prob: mean.clamp(0.0, 1.0),
        error: ERROR_MULTIPLIER * (var / m).sqrt(),
    }
}

/// Fractional parts of square roots of the first `dim` primes.
fn richtmyer_vector(dim: usize) -> Vec<f64> {
    let mut primes = Vec::with_capacity(dim);
    let mut n = 2u64;
    while primes.len() < dim {
        if primes.iter().take_while(|&&q| q * q <= n).all(|&q| n % q != 0) {
            primes.push(n);
        }
        n += 1;
    }
    primes.iter().map(|&q| (q as f64).sqrt().fract()).collect()
}
