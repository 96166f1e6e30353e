//! Cross-validated choice of the penalty weight.
//!
//! Each fold is fitted on its complement (with the complement's own kernel
//! matrix), predictions on the held-out rows are stitched into one vector
//! `g~`, and the score of `lambda` is `M_n(Y - g~)` under the full-sample
//! kernel matrix.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, MIN_OBSERVATIONS};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::kernel::{build_omega_with, KernelSpec};
use crate::solver::{FitContext, PathOutcome, PathPredictor, PenaltyPath};

/// Size of [`default_grid`].
pub const GRID_SIZE: usize = 400;

/// Scores within this fraction of `Y' Omega Y` of the minimum count as ties.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// `p / (1 - p)` for `p` on 400 equidistant points from `1e-5` to `0.7`.
pub fn default_grid() -> Vec<f64> {
    let lo = 1e-5;
    let hi = 0.7;
    (0..GRID_SIZE)
        .map(|k| {
            let p = lo + k as f64 * (hi - lo) / (GRID_SIZE - 1) as f64;
            p / (1.0 - p)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub grid: Vec<f64>,
    pub seed: u64,
    #[serde(default)]
    pub exec: Execution,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 2,
            grid: default_grid(),
            seed: 0,
            exec: Execution::default(),
        }
    }
}

impl CvConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    /// Two folds is the reference configuration; anything else is an extension.
    pub fn is_two_fold(&self) -> bool {
        self.folds == 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 folds, got {}",
                self.folds
            )));
        }
        if self.grid.is_empty() {
            return Err(Error::InvalidParameter("empty lambda grid".into()));
        }
        if let Some(bad) = self.grid.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "grid values must be positive and finite, got {bad}"
            )));
        }
        Ok(())
    }
}

/// Which observations enter the kernel matrix of the selection criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriterionWeights {
    FullSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub lambda_star: f64,
    /// `(lambda, score)` in grid order; invalid points are omitted.
    pub curve: Vec<(f64, f64)>,
    /// Fold id of each row, `0..folds`.
    pub fold_assignment: Vec<usize>,
    pub criterion_weights: CriterionWeights,
    /// Grid points skipped because a fold fit failed there.
    pub invalid: usize,
}

/// Seeded permutation cut into contiguous folds whose sizes differ by at most one.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let base = n / folds;
    let extra = n % folds;
    let mut assignment = vec![0; n];
    let mut pos = 0;
    for f in 0..folds {
        let size = base + usize::from(f < extra);
        for &row in &order[pos..pos + size] {
            assignment[row] = f;
        }
        pos += size;
    }
    assignment
}

struct FoldModel {
    held_out: Vec<usize>,
    path: PenaltyPath,
    outcome: PathOutcome,
    predictor: PathPredictor,
}

fn fold_model(
    ds: &Dataset,
    spec: &KernelSpec,
    assignment: &[usize],
    fold: usize,
    exec: Execution,
) -> Result<FoldModel> {
    let (held_out, train): (Vec<usize>, Vec<usize>) = (0..ds.n()).partition(|&i| assignment[i] == fold);
    let train_ds = ds.select(&train)?;
    let ctx = FitContext::with_execution(&train_ds, spec, exec)?;
    let path = PenaltyPath::new(&ctx)?;
    let outcome = path.outcome(train_ds.y());
    let points: Vec<f64> = held_out.iter().map(|&i| ds.z()[i]).collect();
    let predictor = path.predictor(&points);
    Ok(FoldModel {
        held_out,
        path,
        outcome,
        predictor,
    })
}

/// Score of every grid point for a given fold assignment; `None` marks a
/// point where some fold fit failed.
pub fn cv_curve_with_assignment(
    ds: &Dataset,
    spec: &KernelSpec,
    grid: &[f64],
    assignment: &[usize],
    exec: Execution,
) -> Result<Vec<Option<f64>>> {
    let n = ds.n();
    if assignment.len() != n {
        return Err(Error::Dimension(format!(
            "fold assignment has {} entries for {} rows",
            assignment.len(),
            n
        )));
    }
    let folds = assignment.iter().copied().max().map_or(0, |m| m + 1);
    let omega = build_omega_with(ds, spec, exec)?;
    let models: Vec<Option<FoldModel>> = (0..folds)
        .map(|f| fold_model(ds, spec, assignment, f, exec).ok())
        .collect();
    if models.iter().any(Option::is_none) {
        return Ok(vec![None; grid.len()]);
    }
    let models: Vec<FoldModel> = models.into_iter().flatten().collect();
    let y = ds.y();
    Ok(map_indexed(exec, grid.len(), |k| {
        let lambda = grid[k];
        let mut resid = DVector::zeros(n);
        for m in &models {
            let pred = m.path.predict(&m.predictor, &m.outcome, lambda);
            for (j, &row) in m.held_out.iter().enumerate() {
                resid[row] = y[row] - pred[j];
            }
        }
        let score = omega.quadratic_form(&resid);
        score.is_finite().then_some(score)
    }))
}

/// Picks the grid point with the smallest score, preferring smaller `lambda`
/// among ties.
pub fn cross_validate(ds: &Dataset, spec: &KernelSpec, cfg: &CvConfig) -> Result<CvResult> {
    cfg.validate()?;
    let required = MIN_OBSERVATIONS * cfg.folds;
    if ds.n() < required {
        return Err(Error::TooFewObservations {
            required,
            actual: ds.n(),
        });
    }
    let assignment = fold_assignment(ds.n(), cfg.folds, cfg.seed);
    let scores = cv_curve_with_assignment(ds, spec, &cfg.grid, &assignment, cfg.exec)?;
    let curve: Vec<(f64, f64)> = cfg
        .grid
        .iter()
        .zip(&scores)
        .filter_map(|(&l, s)| s.map(|s| (l, s)))
        .collect();
    if curve.is_empty() {
        return Err(Error::Selection);
    }
    let omega = build_omega_with(ds, spec, cfg.exec)?;
    let scale = omega.quadratic_form(ds.y()).max(f64::MIN_POSITIVE);
    let best = curve.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let lambda_star = curve
        .iter()
        .filter(|c| c.1 <= best + TIE_TOLERANCE * scale)
        .map(|c| c.0)
        .fold(f64::INFINITY, f64::min);
    Ok(CvResult {
        lambda_star,
        invalid: cfg.grid.len() - curve.len(),
        curve,
        fold_assignment: assignment,
        criterion_weights: CriterionWeights::FullSample,
    })
}
