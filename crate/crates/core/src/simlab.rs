//! Simulation designs and the Monte Carlo harness.
//!
//! Data follow `Y = g(Z) + e` with
//! `e = (a V + eta) / sqrt(1 + a^2)`, `Z = (b W + V) / sqrt(1 + b^2)` and
//! `(W, V, eta)` independent standard normal, so `e` and `Z` are standard
//! normal, `corr(e, V) = rho_ev` and `corr(W, Z) = rho_wz`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, MIN_OBSERVATIONS};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::kernel::KernelSpec;
use crate::monotone::{monotone_fit_with, MonotoneDirection};
use crate::selection::{cross_validate, CvConfig};
use crate::solver::FitContext;

/// Test functions of the simulation designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GFunction {
    /// `z^2 / sqrt(2)`.
    G1,
    /// `sqrt(3 sqrt(3)) z exp(-z^2 / 2)`.
    G2,
    /// `(sqrt(10/3) log(|z - 1| + 1) sign(z - 1) - 0.6 z + 2 z^3) / 8`, increasing.
    G3,
}

impl GFunction {
    pub fn from_index(i: u8) -> Option<Self> {
        match i {
            1 => Some(GFunction::G1),
            2 => Some(GFunction::G2),
            3 => Some(GFunction::G3),
            _ => None,
        }
    }
}

pub fn true_function(g: GFunction, z: f64) -> f64 {
    match g {
        GFunction::G1 => z * z / std::f64::consts::SQRT_2,
        GFunction::G2 => (3.0 * 3f64.sqrt()).sqrt() * z * (-z * z / 2.0).exp(),
        GFunction::G3 => {
            let u = z - 1.0;
            let s = if u >= 0.0 { 1.0 } else { -1.0 };
            ((10.0f64 / 3.0).sqrt() * (u.abs() + 1.0).ln() * s - 0.6 * z + 2.0 * z.powi(3)) / 8.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub n: usize,
    /// Correlation between the structural error and the first-stage error.
    pub rho_ev: f64,
    /// Correlation between instrument and regressor.
    pub rho_wz: f64,
    pub g: GFunction,
    pub seed: u64,
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, rho) in [("rho_ev", self.rho_ev), ("rho_wz", self.rho_wz)] {
            if !(rho.is_finite() && rho.abs() < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must lie in (-1, 1), got {rho}"
                )));
            }
        }
        if self.n < MIN_OBSERVATIONS {
            return Err(Error::TooFewObservations {
                required: MIN_OBSERVATIONS,
                actual: self.n,
            });
        }
        Ok(())
    }

    /// Loading of the first-stage error in the structural error.
    pub fn endogeneity_loading(&self) -> f64 {
        self.rho_ev / (1.0 - self.rho_ev * self.rho_ev).sqrt()
    }

    /// Loading of the instrument in the regressor.
    pub fn instrument_loading(&self) -> f64 {
        self.rho_wz / (1.0 - self.rho_wz * self.rho_wz).sqrt()
    }
}

/// A simulated sample together with its latent pieces.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub data: Dataset,
    pub epsilon: DVector<f64>,
    /// `g(Z_i)`.
    pub truth: DVector<f64>,
}

/// Random stream `stream` of the master seed; stream 0 is what [`generate`] uses.
pub fn replication_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn generate_with<R: Rng>(cfg: &DgpConfig, rng: &mut R) -> Result<Simulated> {
    cfg.validate()?;
    let a = cfg.endogeneity_loading();
    let b = cfg.instrument_loading();
    let (ca, cb) = ((1.0 + a * a).sqrt(), (1.0 + b * b).sqrt());
    let n = cfg.n;
    let mut w = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    let mut eps = Vec::with_capacity(n);
    for _ in 0..n {
        let wi: f64 = rng.sample(StandardNormal);
        let vi: f64 = rng.sample(StandardNormal);
        let ei: f64 = rng.sample(StandardNormal);
        w.push(wi);
        z.push((b * wi + vi) / cb);
        eps.push((a * vi + ei) / ca);
    }
    let truth: Vec<f64> = z.iter().map(|&v| true_function(cfg.g, v)).collect();
    let y: Vec<f64> = truth.iter().zip(&eps).map(|(t, e)| t + e).collect();
    Ok(Simulated {
        data: Dataset::new(DVector::from_vec(y), DVector::from_vec(z), DMatrix::from_vec(n, 1, w))?,
        epsilon: DVector::from_vec(eps),
        truth: DVector::from_vec(truth),
    })
}

pub fn generate(cfg: &DgpConfig) -> Result<Simulated> {
    generate_with(cfg, &mut replication_rng(cfg.seed, 0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Unconstrained,
    Constrained(MonotoneDirection),
}

impl EstimatorKind {
    pub fn tag(&self) -> &'static str {
        match self {
            EstimatorKind::Unconstrained => "unconstrained",
            EstimatorKind::Constrained(_) => "constrained",
        }
    }
}

/// 100 equidistant points on `[-2, 2]`.
pub fn evaluation_grid() -> Vec<f64> {
    let m = 100;
    (0..m).map(|k| -2.0 + 4.0 * k as f64 / (m - 1) as f64).collect()
}

/// Replications above this failure share abort the study.
pub const MAX_FAILURE_SHARE: f64 = 0.05;

/// Pointwise and grid-averaged squared bias, variance and MSE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub estimator_tag: String,
    pub config: DgpConfig,
    pub grid: Vec<f64>,
    pub truth: Vec<f64>,
    pub mean_curve: Vec<f64>,
    pub bias_sq_curve: Vec<f64>,
    pub variance_curve: Vec<f64>,
    pub mse_curve: Vec<f64>,
    pub bias_sq: f64,
    pub variance: f64,
    pub mse: f64,
    /// Replications that entered the averages.
    pub replications: usize,
    pub failures: usize,
    /// Across-replication variance divides by the replication count.
    pub variance_divisor: String,
}

/// Sum with pairwise splitting so the result does not depend on chunking.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        v.iter().sum()
    } else {
        let mid = v.len() / 2;
        pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
    }
}

impl McReport {
    /// Aggregates curves evaluated on `grid`.
    pub fn from_curves(
        tag: &str,
        config: DgpConfig,
        grid: &[f64],
        curves: &[Vec<f64>],
        failures: usize,
    ) -> Result<Self> {
        let reps = curves.len();
        if reps == 0 {
            return Err(Error::Replications {
                failed: failures,
                total: failures,
            });
        }
        let m = grid.len();
        let r = reps as f64;
        let truth: Vec<f64> = grid.iter().map(|&z| true_function(config.g, z)).collect();
        let mut mean_curve = vec![0.0; m];
        let mut bias_sq_curve = vec![0.0; m];
        let mut variance_curve = vec![0.0; m];
        let mut mse_curve = vec![0.0; m];
        let mut column = vec![0.0; reps];
        for j in 0..m {
            for (c, curve) in column.iter_mut().zip(curves) {
                *c = curve[j];
            }
            let mean = pairwise_sum(&column) / r;
            let centered: Vec<f64> = column.iter().map(|c| (c - mean).powi(2)).collect();
            let errors: Vec<f64> = column.iter().map(|c| (c - truth[j]).powi(2)).collect();
            mean_curve[j] = mean;
            bias_sq_curve[j] = (mean - truth[j]).powi(2);
            variance_curve[j] = pairwise_sum(&centered) / r;
            mse_curve[j] = pairwise_sum(&errors) / r;
        }
        let avg = |v: &[f64]| pairwise_sum(v) / m as f64;
        Ok(Self {
            estimator_tag: tag.to_string(),
            config,
            grid: grid.to_vec(),
            truth,
            bias_sq: avg(&bias_sq_curve),
            variance: avg(&variance_curve),
            mse: avg(&mse_curve),
            mean_curve,
            bias_sq_curve,
            variance_curve,
            mse_curve,
            replications: reps,
            failures,
            variance_divisor: "R".into(),
        })
    }

    /// `z,bias_sq,variance,mse` rows plus a trailing `ALL` row of grid averages.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["z", "bias_sq", "variance", "mse"])?;
        for j in 0..self.grid.len() {
            w.write_record([
                self.grid[j].to_string(),
                self.bias_sq_curve[j].to_string(),
                self.variance_curve[j].to_string(),
                self.mse_curve[j].to_string(),
            ])?;
        }
        w.write_record([
            "ALL".to_string(),
            self.bias_sq.to_string(),
            self.variance.to_string(),
            self.mse.to_string(),
        ])?;
        w.flush()?;
        Ok(())
    }
}

/// Runs `estimator` on `replications` simulated samples. The estimator returns
/// one curve on the grid per entry of `tags` (or an error for that entry).
/// Replication `r` draws from stream `r` of `cfg.seed`, so results do not depend
/// on scheduling.
pub fn monte_carlo_with<F>(
    cfg: &DgpConfig,
    replications: usize,
    tags: &[&str],
    exec: Execution,
    estimator: F,
) -> Result<Vec<McReport>>
where
    F: Fn(&Simulated, &[f64], u64) -> Vec<Result<Vec<f64>>> + Sync + Send,
{
    cfg.validate()?;
    if replications < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 replications, got {replications}"
        )));
    }
    let grid = evaluation_grid();
    let outcomes: Vec<Vec<Option<Vec<f64>>>> = map_indexed(exec, replications, |rep| {
        let mut rng = replication_rng(cfg.seed, rep as u64);
        let sample = match generate_with(cfg, &mut rng) {
            Ok(s) => s,
            Err(_) => return vec![None; tags.len()],
        };
        let inner_seed: u64 = rng.random();
        let mut curves: Vec<Option<Vec<f64>>> = estimator(&sample, &grid, inner_seed)
            .into_iter()
            .map(|r| {
                r.ok()
                    .filter(|c| c.len() == grid.len() && c.iter().all(|v| v.is_finite()))
            })
            .collect();
        curves.resize(tags.len(), None);
        curves
    });
    tags.iter()
        .enumerate()
        .map(|(t, tag)| {
            let curves: Vec<Vec<f64>> = outcomes.iter().filter_map(|o| o[t].clone()).collect();
            let failures = replications - curves.len();
            if failures as f64 > MAX_FAILURE_SHARE * replications as f64 {
                return Err(Error::Replications {
                    failed: failures,
                    total: replications,
                });
            }
            McReport::from_curves(tag, *cfg, &grid, &curves, failures)
        })
        .collect()
}

/// Cross-validated spline estimates, one curve per requested estimator, all
/// sharing the unconstrained choice of `lambda`.
pub fn spline_curves(
    ds: &Dataset,
    grid: &[f64],
    kinds: &[EstimatorKind],
    cv: &CvConfig,
    spec: &KernelSpec,
) -> Vec<Result<Vec<f64>>> {
    let prepared = cross_validate(ds, spec, cv)
        .and_then(|sel| Ok((sel.lambda_star, FitContext::with_execution(ds, spec, cv.exec)?)));
    let (lambda, ctx) = match prepared {
        Ok(v) => v,
        Err(e) => {
            let msg = e.to_string();
            return kinds
                .iter()
                .map(|_| Err(Error::InvalidParameter(msg.clone())))
                .collect();
        }
    };
    kinds
        .iter()
        .map(|kind| {
            let fit = match kind {
                EstimatorKind::Unconstrained => ctx.fit(lambda)?,
                EstimatorKind::Constrained(dir) => monotone_fit_with(&ctx, lambda, *dir)?.0,
            };
            Ok(fit.evaluate_many(grid))
        })
        .collect()
}

/// Monte Carlo study of several spline estimators on shared samples.
pub fn monte_carlo_suite(
    cfg: &DgpConfig,
    kinds: &[EstimatorKind],
    replications: usize,
    cv: &CvConfig,
    spec: &KernelSpec,
) -> Result<Vec<McReport>> {
    let tags: Vec<&str> = kinds.iter().map(|k| k.tag()).collect();
    // replications are the parallel unit; each one runs sequentially inside
    let inner = CvConfig {
        exec: Execution::Sequential,
        ..cv.clone()
    };
    monte_carlo_with(cfg, replications, &tags, cv.exec, |sample, grid, seed| {
        let cv = CvConfig { seed, ..inner.clone() };
        spline_curves(&sample.data, grid, kinds, &cv, spec)
    })
}

pub fn monte_carlo(cfg: &DgpConfig, estimator: EstimatorKind, replications: usize, cv: &CvConfig) -> Result<McReport> {
    let mut reports = monte_carlo_suite(cfg, &[estimator], replications, cv, &KernelSpec::default())?;
    Ok(reports.remove(0))
}
