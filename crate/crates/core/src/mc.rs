//! Seeded simulation of truncated and selection-elliptical laws.
//!
//! Rejection draws are produced in fixed-size chunks, each with its own ChaCha stream,
//! so results do not depend on the number of threads.

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Exp, Gamma, StandardNormal};
use rayon::prelude::*;

use crate::bounds::{MomentOrder, TruncationBox, DEFAULT_MAX_ORDER};
use crate::elliptical::EllipticalJoint;
use crate::error::{Error, Result};
use crate::linalg;
use crate::selection::SelectionSpec;
use crate::univariate::{norm_cdf, norm_quantile, norm_sf, Family};

pub const DEFAULT_BURN_IN: usize = 500;
/// Proposals used to estimate the acceptance rate before committing to a run.
pub const PILOT_DRAWS: usize = 10_000;
/// Rejection is refused below this acceptance rate.
pub const MIN_ACCEPTANCE: f64 = 1e-4;
/// Accepted draws per chunk.
pub const CHUNK_SIZE: usize = 4096;
/// Smallest sample accepted by the estimators.
pub const MIN_SAMPLE: usize = 100;

const PILOT_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampler {
    Rejection,
    Gibbs,
}

/// `n × p` draws plus bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub draws: DMatrix<f64>,
    /// Proposals made (rejection) or sweeps run including burn-in (Gibbs).
    pub n_proposed: u64,
    pub seed: u64,
    pub sampler: Sampler,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.draws.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.draws.ncols()
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.len() as f64 / self.n_proposed as f64
    }
}

fn chunk_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws from an untruncated elliptical law.
struct JointSampler {
    xi: DVector<f64>,
    chol_l: DMatrix<f64>,
    chi: Option<(ChiSquared<f64>, f64)>,
}

impl JointSampler {
    fn new(dist: &EllipticalJoint) -> Result<Self> {
        let chol_l = dist.cholesky().l();
        let chi = match dist.family() {
            Family::Normal => None,
            Family::StudentT { nu } => Some((
                ChiSquared::new(nu).map_err(|e| Error::invalid(e.to_string()))?,
                nu,
            )),
        };
        Ok(Self {
            xi: dist.xi().clone(),
            chol_l,
            chi,
        })
    }

    fn draw(&self, rng: &mut ChaCha8Rng, z: &mut [f64], out: &mut [f64]) {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let scale = match &self.chi {
            None => 1.0,
            Some((chi, nu)) => (nu / rng.sample(chi)).sqrt(),
        };
        let r = self.xi.len();
        for i in 0..r {
            let mut s = 0.0;
            for j in 0..=i {
                s += self.chol_l[(i, j)] * z[j];
            }
            out[i] = self.xi[i] + scale * s;
        }
    }
}

fn accepted(bx: &TruncationBox, x: &[f64]) -> bool {
    bx.contains(x, 0.0)
}

/// Folds `n` accepted draws of `X[keep]` with `X ~ dist` conditioned on `X ∈ accept`.
///
/// Returns the accumulator and the number of proposals.
#[allow(clippy::too_many_arguments)]
pub fn fold_rejection<A, I, F, M>(
    dist: &EllipticalJoint,
    accept: &TruncationBox,
    keep: &[usize],
    n: usize,
    seed: u64,
    init: I,
    fold: F,
    merge: M,
) -> Result<(A, u64)>
where
    A: Send,
    I: Fn() -> A + Sync,
    F: Fn(A, &[f64]) -> A + Sync,
    M: Fn(A, A) -> A,
{
    if accept.dim() != dist.dim() {
        return Err(Error::DimensionMismatch {
            expected: dist.dim(),
            found: accept.dim(),
        });
    }
    if let Some(&bad) = keep.iter().find(|&&i| i >= dist.dim()) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            dim: dist.dim(),
        });
    }
    let sampler = JointSampler::new(dist)?;
    let r = dist.dim();

    let mut rng = chunk_rng(seed, PILOT_STREAM);
    let mut z = vec![0.0; r];
    let mut x = vec![0.0; r];
    let mut hits = 0usize;
    for _ in 0..PILOT_DRAWS {
        sampler.draw(&mut rng, &mut z, &mut x);
        if accepted(accept, &x) {
            hits += 1;
        }
    }
    let rate = hits as f64 / PILOT_DRAWS as f64;
    if rate < MIN_ACCEPTANCE {
        return Err(Error::SamplerInfeasible(format!(
            "pilot acceptance rate {rate:.2e} is below {MIN_ACCEPTANCE:.0e}"
        )));
    }

    let chunks = n.div_ceil(CHUNK_SIZE);
    let results: Vec<Result<(A, u64)>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let quota = CHUNK_SIZE.min(n - c * CHUNK_SIZE);
            let cap = (50.0 * quota as f64 / rate) as u64 + 10_000;
            let mut rng = chunk_rng(seed, c as u64);
            let mut z = vec![0.0; r];
            let mut x = vec![0.0; r];
            let mut y = vec![0.0; keep.len()];
            let mut acc = init();
            let mut got = 0;
            let mut proposed = 0u64;
            while got < quota {
                if proposed >= cap {
                    return Err(Error::SamplerInfeasible(
                        "acceptance rate collapsed after the pilot run".into(),
                    ));
                }
                proposed += 1;
                sampler.draw(&mut rng, &mut z, &mut x);
                if accepted(accept, &x) {
                    for (slot, &i) in y.iter_mut().zip(keep) {
                        *slot = x[i];
                    }
                    acc = fold(acc, &y);
                    got += 1;
                }
            }
            Ok((acc, proposed))
        })
        .collect();

    let mut total = init();
    let mut proposed = 0;
    for res in results {
        let (acc, m) = res?;
        total = merge(total, acc);
        proposed += m;
    }
    Ok((total, proposed))
}

fn collect_rows(
    dist: &EllipticalJoint,
    accept: &TruncationBox,
    keep: &[usize],
    n: usize,
    seed: u64,
) -> Result<SampleBatch> {
    let p = keep.len();
    let (flat, proposed) = fold_rejection(
        dist,
        accept,
        keep,
        n,
        seed,
        Vec::new,
        |mut v: Vec<f64>, y| {
            v.extend_from_slice(y);
            v
        },
        |mut a, b| {
            a.extend(b);
            a
        },
    )?;
    Ok(SampleBatch {
        draws: DMatrix::from_row_slice(n, p, &flat),
        n_proposed: proposed,
        seed,
        sampler: Sampler::Rejection,
    })
}

/// Rejection draws of `X | a <= X <= b`.
pub fn sample_truncated_rejection(
    dist: &EllipticalJoint,
    bx: &TruncationBox,
    n: usize,
    seed: u64,
) -> Result<SampleBatch> {
    let keep: Vec<usize> = (0..dist.dim()).collect();
    collect_rows(dist, bx, &keep, n, seed)
}

/// Rejection draws of `Y | a <= Y <= b` for a selection spec.
pub fn sample_se_rejection(spec: &SelectionSpec, bx: &TruncationBox, n: usize, seed: u64) -> Result<SampleBatch> {
    let aug = spec.augmented_box(bx)?;
    collect_rows(spec.joint(), &aug, &spec.outcome_indices(), n, seed)
}

/// Streaming counterpart of [`sample_se_rejection`].
#[allow(clippy::too_many_arguments)]
pub fn fold_se_rejection<A, I, F, M>(
    spec: &SelectionSpec,
    bx: &TruncationBox,
    n: usize,
    seed: u64,
    init: I,
    fold: F,
    merge: M,
) -> Result<(A, u64)>
where
    A: Send,
    I: Fn() -> A + Sync,
    F: Fn(A, &[f64]) -> A + Sync,
    M: Fn(A, A) -> A,
{
    let aug = spec.augmented_box(bx)?;
    fold_rejection(spec.joint(), &aug, &spec.outcome_indices(), n, seed, init, fold, merge)
}

/// Standard normal restricted to `[alpha, beta]`.
pub fn truncated_std_normal<R: rand::Rng + ?Sized>(alpha: f64, beta: f64, rng: &mut R) -> f64 {
    if alpha >= beta {
        return alpha;
    }
    if alpha > 5.0 {
        return tail_normal(alpha, beta, rng);
    }
    if beta < -5.0 {
        return -tail_normal(-beta, -alpha, rng);
    }
    let u: f64 = rng.random();
    let z = if alpha >= 0.0 {
        let (pa, pb) = (norm_sf(alpha), norm_sf(beta));
        -norm_quantile(pb + u * (pa - pb))
    } else {
        let (pa, pb) = (norm_cdf(alpha), norm_cdf(beta));
        norm_quantile(pa + u * (pb - pa))
    };
    z.clamp(alpha, beta)
}

// Robert (1995) exponential proposal, or a uniform proposal on short intervals.
fn tail_normal<R: rand::Rng + ?Sized>(alpha: f64, beta: f64, rng: &mut R) -> f64 {
    let lambda = 0.5 * (alpha + (alpha * alpha + 4.0).sqrt());
    if lambda * (beta - alpha) < 0.5 {
        loop {
            let z = alpha + (beta - alpha) * rng.random::<f64>();
            if rng.random::<f64>() < (-0.5 * (z * z - alpha * alpha)).exp() {
                return z;
            }
        }
    }
    let exp = Exp::new(lambda).expect("positive rate");
    loop {
        let z = alpha + rng.sample(exp);
        if z <= beta && rng.random::<f64>() < (-0.5 * (z - lambda) * (z - lambda)).exp() {
            return z;
        }
    }
}

fn gibbs_start(dist: &EllipticalJoint, bx: &TruncationBox) -> Vec<f64> {
    (0..dist.dim())
        .map(|i| {
            let (a, b) = (bx.lower()[i], bx.upper()[i]);
            let m = dist.xi()[i];
            if a.is_finite() && b.is_finite() && !(a..=b).contains(&m) {
                0.5 * (a + b)
            } else {
                m.clamp(a, b)
            }
        })
        .collect()
}

/// Gibbs draws of `X | a <= X <= b`; the t kernel is handled through its gamma mixture.
pub fn sample_truncated_gibbs(
    dist: &EllipticalJoint,
    bx: &TruncationBox,
    n: usize,
    burn_in: usize,
    seed: u64,
) -> Result<SampleBatch> {
    let r = dist.dim();
    if bx.dim() != r {
        return Err(Error::DimensionMismatch {
            expected: r,
            found: bx.dim(),
        });
    }
    let chol = dist.cholesky();
    let prec = chol.inverse();
    let xi = dist.xi();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = gibbs_start(dist, bx);
    let mut draws = DMatrix::zeros(n, r);
    let mut w = 1.0;
    for sweep in 0..(burn_in + n) {
        if let Family::StudentT { nu } = dist.family() {
            let dx = DVector::from_fn(r, |i, _| x[i] - xi[i]);
            let delta = linalg::inv_quad_form(chol, &dx);
            let g = Gamma::new(0.5 * (nu + r as f64), 2.0 / (nu + delta))
                .map_err(|e| Error::numerical(e.to_string()))?;
            w = rng.sample(g);
        }
        for i in 0..r {
            let qii = prec[(i, i)];
            let mut s = 0.0;
            for j in 0..r {
                if j != i {
                    s += prec[(i, j)] * (x[j] - xi[j]);
                }
            }
            let m = xi[i] - s / qii;
            let sd = (1.0 / (w * qii)).sqrt();
            let (a, b) = (bx.lower()[i], bx.upper()[i]);
            let z = truncated_std_normal((a - m) / sd, (b - m) / sd, &mut rng);
            x[i] = (m + sd * z).clamp(a, b);
        }
        if sweep >= burn_in {
            for i in 0..r {
                draws[(sweep - burn_in, i)] = x[i];
            }
        }
    }
    Ok(SampleBatch {
        draws,
        n_proposed: (burn_in + n) as u64,
        seed,
        sampler: Sampler::Gibbs,
    })
}

/// Gibbs draws of `Y | a <= Y <= b`, run on the joint `(X₁, X₂)` restricted to `C × [a, b]`.
pub fn sample_se_gibbs(
    spec: &SelectionSpec,
    bx: &TruncationBox,
    n: usize,
    burn_in: usize,
    seed: u64,
) -> Result<SampleBatch> {
    let aug = spec.augmented_box(bx)?;
    let mut batch = sample_truncated_gibbs(spec.joint(), &aug, n, burn_in, seed)?;
    batch.draws = batch.draws.columns(spec.q(), spec.p()).into_owned();
    Ok(batch)
}

/// Estimate with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEstimate {
    pub value: f64,
    pub std_error: f64,
    /// Sample size an iid sample would need for the same error.
    pub n_effective: f64,
}

fn check_batch(batch: &SampleBatch) -> Result<()> {
    if batch.len() < MIN_SAMPLE {
        return Err(Error::invalid(format!(
            "need at least {MIN_SAMPLE} draws, got {}",
            batch.len()
        )));
    }
    Ok(())
}

// Standard error of the mean of `v`; batch means for Markov chains.
fn standard_error(v: &[f64], sampler: Sampler) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    let iid = (var / n).sqrt();
    let se = match sampler {
        Sampler::Rejection => iid,
        Sampler::Gibbs => {
            let size = (n.sqrt() as usize).max(1);
            let nb = v.len() / size;
            let means: Vec<f64> = v
                .chunks_exact(size)
                .take(nb)
                .map(|c| c.iter().sum::<f64>() / size as f64)
                .collect();
            let bm = means.iter().sum::<f64>() / nb as f64;
            let bvar = means.iter().map(|x| (x - bm) * (x - bm)).sum::<f64>() / (nb as f64 - 1.0);
            (bvar / nb as f64).sqrt().max(iid)
        }
    };
    let n_eff = if se > 0.0 { var / (se * se) } else { n };
    (se, n_eff)
}

/// Sample estimate of `E[Y^k]`.
pub fn estimate_product_moment(batch: &SampleBatch, order: &MomentOrder) -> Result<MomentEstimate> {
    check_batch(batch)?;
    order.check(batch.dim(), DEFAULT_MAX_ORDER)?;
    let k = order.as_slice();
    let v: Vec<f64> = batch
        .draws
        .row_iter()
        .map(|row| {
            k.iter()
                .zip(row.iter())
                .map(|(&ki, &x)| x.powi(ki as i32))
                .product()
        })
        .collect();
    let value = v.iter().sum::<f64>() / v.len() as f64;
    let (std_error, n_effective) = standard_error(&v, batch.sampler);
    Ok(MomentEstimate {
        value,
        std_error,
        n_effective,
    })
}

/// Sample mean, covariance and standard errors of the mean.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMoments {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub mean_std_error: DVector<f64>,
    pub covariance_std_error: DMatrix<f64>,
}

pub fn estimate_mean_cov(batch: &SampleBatch) -> Result<SampleMoments> {
    check_batch(batch)?;
    let n = batch.len() as f64;
    let p = batch.dim();
    let mean = DVector::from_fn(p, |i, _| batch.draws.column(i).sum() / n);
    let mut covariance = DMatrix::zeros(p, p);
    for row in batch.draws.row_iter() {
        for i in 0..p {
            let di = row[i] - mean[i];
            for j in 0..=i {
                covariance[(i, j)] += di * (row[j] - mean[j]);
            }
        }
    }
    for i in 0..p {
        for j in 0..=i {
            let c = covariance[(i, j)] / (n - 1.0);
            covariance[(i, j)] = c;
            covariance[(j, i)] = c;
        }
    }
    let mean_std_error = DVector::from_fn(p, |i, _| {
        let col: Vec<f64> = batch.draws.column(i).iter().copied().collect();
        standard_error(&col, batch.sampler).0
    });
    let mut covariance_std_error = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..=i {
            let prod: Vec<f64> = batch
                .draws
                .row_iter()
                .map(|row| (row[i] - mean[i]) * (row[j] - mean[j]))
                .collect();
            let se = standard_error(&prod, batch.sampler).0;
            covariance_std_error[(i, j)] = se;
            covariance_std_error[(j, i)] = se;
        }
    }
    Ok(SampleMoments {
        mean,
        covariance,
        mean_std_error,
        covariance_std_error,
    })
}
