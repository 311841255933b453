use nalgebra::DVector;
use serde_json::Value;

use seltrunc::mc::{self, estimate_mean_cov};
use seltrunc::risk::{marginal_quantiles, tce_at};
use seltrunc::{
    quantile_upper, se_box_prob, se_pdf, tce_sum_decomposed, tse_mean_cov, tse_moment, Error, MomentConfig,
    MomentOrder, SelectionSpec,
};

use crate::job::JobSpec;
use crate::output::{format_f64, matrix, num, object, slice, vector};
use crate::{CliError, Command};

pub const DEFAULT_SEED: u64 = 0x5EED;
pub const DEFAULT_MC_DRAWS: usize = 1_000_000;
/// Analytic and simulated values must agree within this many standard errors.
pub const VALIDATE_Z: f64 = 4.0;

pub enum Output {
    Json(Value),
    Text(String),
}

struct Ctx {
    spec: SelectionSpec,
    config: MomentConfig,
}

fn context(job: &JobSpec, seed: u64) -> Result<Ctx, CliError> {
    let qmc = job.settings()?;
    let spec = job.distribution.selection(&qmc)?;
    Ok(Ctx {
        spec,
        config: MomentConfig {
            qmc,
            seed,
            ..MomentConfig::default()
        },
    })
}

fn result(command: Command, values: Value, method: &str, diagnostics: Value) -> Output {
    Output::Json(object(vec![
        ("command", Value::from(command.name())),
        ("values", values),
        ("method", Value::from(method)),
        ("diagnostics", diagnostics),
        ("version", Value::from(env!("CARGO_PKG_VERSION"))),
    ]))
}

fn flags(v: &[bool]) -> Value {
    Value::Array(v.iter().map(|&b| Value::Bool(b)).collect())
}

pub fn run(command: Command, job: &JobSpec, seed: Option<u64>) -> Result<Output, CliError> {
    let seed = seed.or(job.seed).unwrap_or(DEFAULT_SEED);
    let ctx = context(job, seed)?;
    match command {
        Command::Moments => moments(job, &ctx),
        Command::Prob => prob(job, &ctx),
        Command::PdfGrid => pdf_grid(job, &ctx),
        Command::Tce => tce(job, &ctx),
        Command::Mtce => mtce(job, &ctx),
        Command::TceSum => tce_sum(job, &ctx),
        Command::Validate => validate(job, &ctx, seed),
    }
}

fn moments(job: &JobSpec, ctx: &Ctx) -> Result<Output, CliError> {
    let bx = job.truncation(ctx.spec.p())?;
    let r = tse_mean_cov(&ctx.spec, &bx, &ctx.config)?;
    if !r.mean_exists.iter().any(|&b| b) {
        return Err(Error::NonExistentMoment("no mean component exists for this box".into()).into());
    }
    let mut values = vec![
        ("prob_mass", num(r.prob_mass)),
        ("mean", vector(&r.mean)),
        ("covariance", matrix(&r.covariance)),
        ("second_moment", matrix(&r.second_moment)),
    ];
    let mut diagnostics = vec![
        ("prob_error", num(r.prob_error)),
        ("mean_exists", flags(&r.mean_exists)),
        (
            "second_moment_exists",
            Value::Array(r.second_exists.iter().map(|row| flags(row)).collect()),
        ),
        ("notes", Value::Array(r.notes.iter().map(|n| Value::from(n.as_str())).collect())),
    ];
    if let Some(k) = &job.order {
        let v = tse_moment(&ctx.spec, &bx, &MomentOrder::new(k.clone()), &ctx.config)?;
        values.push(("product_moment", num(v.value)));
        diagnostics.push(("product_moment_std_error", v.std_error.map_or(Value::Null, num)));
        diagnostics.push(("product_moment_method", Value::from(v.method.to_string())));
    }
    Ok(result(
        Command::Moments,
        object(values),
        &r.method.to_string(),
        object(diagnostics),
    ))
}

fn prob(job: &JobSpec, ctx: &Ctx) -> Result<Output, CliError> {
    let bx = job.truncation(ctx.spec.p())?;
    let p = se_box_prob(&ctx.spec, &bx, &ctx.config.qmc)?;
    Ok(result(
        Command::Prob,
        object(vec![("probability", num(p.prob))]),
        "rectangle",
        object(vec![("error", num(p.error))]),
    ))
}

fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn pdf_grid(job: &JobSpec, ctx: &Ctx) -> Result<Output, CliError> {
    let p = ctx.spec.p();
    if p > 2 {
        return Err(CliError::Input(format!("pdf-grid supports one or two dimensions, got {p}")));
    }
    let grid = job
        .grid
        .as_ref()
        .ok_or_else(|| CliError::Input("pdf-grid needs a \"grid\" block".into()))?;
    if grid.lower.len() != p || grid.upper.len() != p || grid.points.len() != p {
        return Err(CliError::Input(format!("grid must have {p} entries per field")));
    }
    if grid.points.contains(&0) || (0..p).any(|i| !(grid.lower[i] <= grid.upper[i])) {
        return Err(CliError::Input("grid needs positive point counts and lower <= upper".into()));
    }
    let bx = job.bx.as_ref().map(|b| b.build()).transpose()?;
    let mass = match &bx {
        Some(b) => se_box_prob(&ctx.spec, b, &ctx.config.qmc)?.prob,
        None => 1.0,
    };
    if !(mass > 0.0) {
        return Err(Error::Numerical("truncation box has zero probability".into()).into());
    }
    let axes: Vec<Vec<f64>> = (0..p).map(|i| axis(grid.lower[i], grid.upper[i], grid.points[i])).collect();
    let mut points = Vec::new();
    if p == 1 {
        points.extend(axes[0].iter().map(|&x| vec![x]));
    } else {
        for &x in &axes[0] {
            for &y in &axes[1] {
                points.push(vec![x, y]);
            }
        }
    }
    let mut out = String::from(if p == 1 { "x,density\n" } else { "x,y,density\n" });
    for pt in points {
        let inside = bx.as_ref().is_none_or(|b| b.contains(&pt, 0.0));
        let d = if inside {
            se_pdf(&ctx.spec, &DVector::from_column_slice(&pt), &ctx.config.qmc)? / mass
        } else {
            0.0
        };
        for x in &pt {
            out.push_str(&format_f64(*x));
            out.push(',');
        }
        out.push_str(&format_f64(d));
        out.push('\n');
    }
    Ok(Output::Text(out))
}

fn tce(job: &JobSpec, ctx: &Ctx) -> Result<Output, CliError> {
    let alpha = job.alpha()?;
    let y = quantile_upper(&ctx.spec, alpha, &ctx.config.qmc)?;
    let v = tce_at(&ctx.spec, y, &ctx.config)?;
    Ok(result(
        Command::Tce,
        object(vec![("alpha", num(alpha)), ("quantile", num(y)), ("tce", num(v))]),
        "quantile+truncated-mean",
        object(vec![]),
    ))
}

fn mtce(job: &JobSpec, ctx: &Ctx) -> Result<Output, CliError> {
    let y = match (job.y_alpha(), job.alpha) {
        (Some(y), _) => y,
        (None, Some(alpha)) => marginal_quantiles(&ctx.spec, alpha, &ctx.config.qmc)?,
        (None, None) => return Err(CliError::Input("mtce needs \"y_alpha\" or \"alpha\"".into())),
    };
    let v = seltrunc::mtce(&ctx.spec, &y, &ctx.config)?;
    Ok(result(
        Command::Mtce,
        object(vec![("quantiles", slice(&y)), ("mtce", vector(&v))]),
        "truncated-mean",
        object(vec![]),
    ))
}

fn tce_sum(job: &JobSpec, ctx: &Ctx) -> Result<Output, CliError> {
    let alpha = job.alpha()?;
    let params = job
        .distribution
        .sut_params()?
        .ok_or_else(|| CliError::Input("tce-sum needs a skew family with one selection coordinate".into()))?;
    let d = tce_sum_decomposed(&params, alpha, &ctx.config)?;
    let law = &d.sum_law;
    Ok(result(
        Command::TceSum,
        object(vec![
            ("alpha", num(alpha)),
            ("quantile", num(d.quantile)),
            ("total", num(d.total)),
            ("contributions", vector(&d.contributions)),
            ("e_s1", num(d.e_s1)),
            (
                "sum_law",
                object(vec![
                    ("mu_s", num(law.mu_s)),
                    ("sigma2_s", num(law.sigma2_s)),
                    ("delta_s", num(law.delta_s)),
                    ("lambda_s", num(law.lambda_s)),
                    ("tau_s", num(law.tau_s)),
                    ("nu", law.nu.map_or(Value::Null, num)),
                ]),
            ),
        ]),
        "allocation",
        object(vec![]),
    ))
}

fn validate(job: &JobSpec, ctx: &Ctx, seed: u64) -> Result<Output, CliError> {
    let bx = job.truncation(ctx.spec.p())?;
    let n = job.mc_draws.unwrap_or(DEFAULT_MC_DRAWS);
    let analytic = tse_mean_cov(&ctx.spec, &bx, &ctx.config)?;
    let (batch, sampler) = match mc::sample_se_rejection(&ctx.spec, &bx, n, seed) {
        Ok(b) => (b, "rejection"),
        Err(Error::SamplerInfeasible(_)) => (
            mc::sample_se_gibbs(&ctx.spec, &bx, n, mc::DEFAULT_BURN_IN, seed)?,
            "gibbs",
        ),
        Err(e) => return Err(e.into()),
    };
    let est = estimate_mean_cov(&batch)?;
    let p = ctx.spec.p();
    let mut entries = Vec::new();
    let mut all_pass = true;
    let mut check = |name: String, a: f64, m: f64, se: f64, exists: bool| {
        let z = if exists { (a - m).abs() / se } else { f64::NAN };
        let pass = !exists || z <= VALIDATE_Z;
        all_pass &= pass;
        entries.push(object(vec![
            ("name", Value::from(name)),
            ("analytic", num(a)),
            ("mc", num(m)),
            ("std_error", num(se)),
            ("z", num(z)),
            ("exists", Value::Bool(exists)),
            ("pass", Value::Bool(pass)),
        ]));
    };
    for i in 0..p {
        check(
            format!("mean[{i}]"),
            analytic.mean[i],
            est.mean[i],
            est.mean_std_error[i],
            analytic.mean_exists[i],
        );
    }
    for i in 0..p {
        for j in 0..=i {
            check(
                format!("cov[{i}][{j}]"),
                analytic.covariance[(i, j)],
                est.covariance[(i, j)],
                est.covariance_std_error[(i, j)],
                analytic.covariance_exists(i, j),
            );
        }
    }
    Ok(result(
        Command::Validate,
        object(vec![("entries", Value::Array(entries)), ("all_pass", Value::Bool(all_pass))]),
        &analytic.method.to_string(),
        object(vec![
            ("sampler", Value::from(sampler)),
            ("draws", Value::from(n)),
            ("seed", Value::from(seed)),
            ("z_threshold", num(VALIDATE_Z)),
        ]),
    ))
}
