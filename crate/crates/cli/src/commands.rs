//! The `fit` and `simulate` commands.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use ivspline::monotone::monotone_fit_with;
use ivspline::simlab::monte_carlo_suite;
use ivspline::*;
use serde::Serialize;

use crate::artifact::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    None,
    Increasing,
    Decreasing,
}

impl Shape {
    fn direction(self) -> Option<MonotoneDirection> {
        match self {
            Shape::None => None,
            Shape::Increasing => Some(MonotoneDirection::Increasing),
            Shape::Decreasing => Some(MonotoneDirection::Decreasing),
        }
    }
}

#[derive(Debug, Args, Serialize)]
#[command(group(clap::ArgGroup::new("penalty").required(true).args(["lambda", "cv"])))]
pub struct FitArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub input: PathBuf,
    /// Outcome column.
    #[arg(long)]
    pub y: String,
    /// Regressor column.
    #[arg(long)]
    pub z: String,
    /// Instrument columns, comma-separated or repeated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub w: Vec<String>,
    /// Fixed penalty.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Choose the penalty by two-fold cross-validation.
    #[arg(long)]
    pub cv: bool,
    #[arg(long, value_enum, default_value_t = Shape::None)]
    pub monotone: Shape,
    /// Seed of the fold split.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Equidistant curve points added to the knots.
    #[arg(long, default_value_t = 200)]
    pub points: usize,
    /// Run every loop on the calling thread.
    #[arg(long)]
    pub sequential: bool,
    /// Curve CSV destination.
    #[arg(long)]
    #[serde(skip)]
    pub grid_out: Option<PathBuf>,
    /// Fit artifact destination (JSON).
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

pub fn fit(args: &FitArgs) -> CliResult<()> {
    let names: Vec<&str> = args.w.iter().map(String::as_str).collect();
    let ds = load_csv(&args.input, &ColumnMap::new(&args.y, &args.z, &names))?;
    let spec = KernelSpec::default();
    let exec = execution(args.sequential);
    let cv = if args.cv {
        let cfg = CvConfig {
            exec,
            ..CvConfig::with_seed(args.seed)
        };
        Some(cross_validate(&ds, &spec, &cfg)?)
    } else {
        None
    };
    let lambda = match (&cv, args.lambda) {
        (Some(r), _) => r.lambda_star,
        (None, Some(l)) => l,
        (None, None) => return Err(CliError::Input("one of --lambda or --cv is required".into())),
    };
    let ctx = FitContext::with_execution(&ds, &spec, exec)?;
    let (fit, tilt) = match args.monotone.direction() {
        None => (ctx.fit(lambda)?, None),
        Some(dir) => {
            let (f, t) = monotone_fit_with(&ctx, lambda, dir)?;
            (f, Some(t))
        }
    };
    let curve = sample_curve(&fit, args.points);
    let artifact = FitArtifact {
        lambda,
        a: fit.a,
        delta: fit.delta.iter().copied().collect(),
        knots: fit.knots.iter().copied().collect(),
        kernel: spec,
        diagnostics: fit.diagnostics,
        monotone: args.monotone.direction(),
        tilt,
        cv: cv.as_ref().map(CvSummary::from),
        curve,
        provenance: Provenance::new("fit", args.seed, args),
    };
    write_json(&args.out, &artifact)?;
    if let Some(path) = &args.grid_out {
        write_curve(path, &artifact.curve)?;
    }
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Test function.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub g: u8,
    #[arg(long)]
    pub n: usize,
    /// Endogeneity correlation, in (-1, 1).
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    pub rho_ev: f64,
    /// Instrument strength, in (-1, 1).
    #[arg(long, default_value_t = 0.9, allow_negative_numbers = true)]
    pub rho_wz: f64,
    #[arg(long)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also run the monotone estimator on the same samples.
    #[arg(long)]
    pub constrained: bool,
    /// Direction of the monotone estimator.
    #[arg(long, value_enum, default_value_t = Shape::Increasing)]
    pub direction: Shape,
    #[arg(long)]
    pub sequential: bool,
    #[arg(long)]
    #[serde(skip)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Serialize)]
struct SimulationSummary<'a> {
    reports: &'a [McReport],
    provenance: Provenance<&'a SimulateArgs>,
}

pub fn simulate(args: &SimulateArgs) -> CliResult<()> {
    let g =
        GFunction::from_index(args.g).ok_or_else(|| CliError::Input(format!("unknown test function {}", args.g)))?;
    let cfg = DgpConfig {
        n: args.n,
        rho_ev: args.rho_ev,
        rho_wz: args.rho_wz,
        g,
        seed: args.seed,
    };
    cfg.validate()?;
    let mut kinds = vec![EstimatorKind::Unconstrained];
    if args.constrained {
        let dir = args
            .direction
            .direction()
            .ok_or_else(|| CliError::Input("--direction must be increasing or decreasing".into()))?;
        kinds.push(EstimatorKind::Constrained(dir));
    }
    let cv = CvConfig {
        exec: execution(args.sequential),
        ..CvConfig::with_seed(args.seed)
    };
    let reports = monte_carlo_suite(&cfg, &kinds, args.reps, &cv, &KernelSpec::default())?;
    std::fs::create_dir_all(&args.out_dir).map_err(|source| CliError::Output {
        path: args.out_dir.display().to_string(),
        source,
    })?;
    for r in &reports {
        let path = args.out_dir.join(format!("mc_{}.csv", r.estimator_tag));
        r.write_csv(&path)?;
    }
    let summary = SimulationSummary {
        reports: &reports,
        provenance: Provenance::new("simulate", args.seed, args),
    };
    write_json(&args.out_dir.join("summary.json"), &summary)?;
    for r in &reports {
        println!(
            "{}: bias_sq {:.4} variance {:.4} mse {:.4} ({} replications, {} failed)",
            r.estimator_tag, r.bias_sq, r.variance, r.mse, r.replications, r.failures
        );
    }
    Ok(())
}
