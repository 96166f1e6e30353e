//! Serialized fit results and the error type shared by all commands.

use std::path::Path;

use ivspline::{CvResult, FitDiagnostics, KernelSpec, MonotoneDirection, SplineFit, TiltWeights};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] ivspline::Error),
    #[error("{0}")]
    Input(String),
    #[error("cannot write `{path}`: {source}")]
    Output { path: String, source: std::io::Error },
    #[error("serialization failed: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 for bad input, 4 for an infeasible shape restriction, 3 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(ivspline::Error::Infeasible { .. }) => 4,
            CliError::Core(e) if e.is_input_error() => 2,
            CliError::Input(_) | CliError::Output { .. } => 2,
            _ => 3,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// What is needed to rerun a command: its settings and the library version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance<S> {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub settings: S,
}

impl<S> Provenance<S> {
    pub fn new(command: &str, seed: u64, settings: S) -> Self {
        Self {
            tool: "ivspline".into(),
            version: ivspline::VERSION.into(),
            command: command.into(),
            seed,
            settings,
        }
    }
}

/// Cross-validation outcome kept in a fit artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub lambda_star: f64,
    pub curve: Vec<(f64, f64)>,
    pub fold_assignment: Vec<usize>,
    pub invalid: usize,
}

impl From<&CvResult> for CvSummary {
    fn from(r: &CvResult) -> Self {
        Self {
            lambda_star: r.lambda_star,
            curve: r.curve.clone(),
            fold_assignment: r.fold_assignment.clone(),
            invalid: r.invalid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub z: f64,
    pub ghat: f64,
    pub ghat_prime: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitArtifact<S> {
    pub lambda: f64,
    pub a: [f64; 2],
    pub delta: Vec<f64>,
    pub knots: Vec<f64>,
    pub kernel: KernelSpec,
    pub diagnostics: FitDiagnostics,
    pub monotone: Option<MonotoneDirection>,
    pub tilt: Option<TiltWeights>,
    pub cv: Option<CvSummary>,
    pub curve: Vec<CurvePoint>,
    pub provenance: Provenance<S>,
}

#[cfg(test)]
impl<S> FitArtifact<S> {
    pub fn spline(&self) -> ivspline::Result<SplineFit> {
        SplineFit::from_coefficients(self.a, self.delta.clone().into(), self.knots.clone().into())
    }
}

/// Sorted knots merged with `points` equidistant values over the knot range.
pub fn curve_abscissae(fit: &SplineFit, points: usize) -> Vec<f64> {
    let (lo, hi) = fit.knot_range();
    let mut z: Vec<f64> = fit.knots.iter().copied().collect();
    if points >= 2 {
        z.extend((0..points).map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64));
    }
    z.sort_by(f64::total_cmp);
    z.dedup();
    z
}

pub fn sample_curve(fit: &SplineFit, points: usize) -> Vec<CurvePoint> {
    curve_abscissae(fit, points)
        .into_iter()
        .map(|z| CurvePoint {
            z,
            ghat: fit.evaluate(z),
            ghat_prime: fit.evaluate_derivative(z),
        })
        .collect()
}

fn output_error(path: &Path, source: std::io::Error) -> CliError {
    CliError::Output {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| output_error(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

/// Curve CSV with header `z,ghat,ghat_prime`.
pub fn write_curve(path: &Path, curve: &[CurvePoint]) -> CliResult<()> {
    let mut text = String::from("z,ghat,ghat_prime\n");
    for p in curve {
        text.push_str(&format!("{},{},{}\n", p.z, p.ghat, p.ghat_prime));
    }
    write_text(path, &text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ivspline::{Dataset, KernelSpec};

    #[test]
    fn artifact_round_trips_exactly() {
        let z = [0.1, 0.4, 0.35, 0.8, 0.95, 0.6];
        let w = [0.0, 0.5, 0.3, 1.1, 1.4, 0.7];
        let y = [0.013, 0.17, 0.1, 0.61, 0.93, 0.37];
        let ds = Dataset::from_slices(&y, &z, &w).unwrap();
        let fit = ivspline::fit(&ds, 0.1 / 3.0, &KernelSpec::default()).unwrap();
        let art = FitArtifact {
            lambda: fit.lambda,
            a: fit.a,
            delta: fit.delta.iter().copied().collect(),
            knots: fit.knots.iter().copied().collect(),
            kernel: KernelSpec::default(),
            diagnostics: fit.diagnostics,
            monotone: None,
            tilt: None,
            cv: None,
            curve: sample_curve(&fit, 7),
            provenance: Provenance::new("fit", 3, ()),
        };
        let text = serde_json::to_string(&art).unwrap();
        let back: FitArtifact<()> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, art);
        let again = back.spline().unwrap();
        assert_eq!(again.evaluate(0.5).to_bits(), fit.evaluate(0.5).to_bits());
    }

    #[test]
    fn exit_codes_follow_the_error_kind() {
        assert_eq!(
            CliError::Core(ivspline::Error::Infeasible { knot: 0, slack: -1.0 }).exit_code(),
            4
        );
        assert_eq!(
            CliError::Core(ivspline::Error::MissingColumn("y".into())).exit_code(),
            2
        );
        assert_eq!(CliError::Core(ivspline::Error::Selection).exit_code(), 3);
    }
}
