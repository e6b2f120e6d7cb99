//! `condo` command line: fit, transform, simulate, eval, and report verbs
//! over CSV datasets.
//!
//! Exit codes: 2 usage error, 3 data error (parse/schema/IO), 4 numerical
//! error. The CONDO_LOG environment variable (error|warn|info|debug)
//! controls stderr verbosity.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;

use condo::io::{
    dataset_to_table, format_float, parse_confounder_spec, read_dataset, read_table, write_table,
    write_truth, CsvTable,
};
use condo::svg::{scatter_svg, ScatterSeries};
use condo::{
    deserialize_model, fit, metrics, serialize_model, CondoError, FitConfig, FitMethod, MapKind,
    Scenario, ScenarioSpec,
};

#[derive(Parser)]
#[command(
    name = "condo",
    version,
    about = "Confounded domain adaptation: learn affine source-to-target maps \
             by minimizing expected conditional divergences"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit an adaptation from a source CSV to a target CSV.
    Fit(FitArgs),
    /// Apply a fitted model (or its inverse) to a CSV.
    Transform(TransformArgs),
    /// Generate a synthetic scenario: five CSV splits plus truth.json.
    Simulate(SimulateArgs),
    /// Compare adapted features against oracle features.
    Eval(EvalArgs),
    /// Print a human-readable summary of a model file.
    Report(ReportArgs),
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    /// Comma-separated confounder columns, each `name:kind` with kind
    /// continuous or categorical.
    #[arg(long)]
    confounders: String,
    /// One of: gaussian_ot, mmd, condo_linear_forward_kl,
    /// condo_linear_reverse_kl, condo_gp_reverse_kl, condo_mmd.
    #[arg(long)]
    method: String,
    /// `full` for a full affine map, `diag` for location-scale.
    #[arg(long)]
    transform: String,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Learning rate; defaults to 1e-2 for KL methods and 1e-3 for MMD.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    ridge: Option<f64>,
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
}

#[derive(Args)]
struct TransformArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Apply the analytic inverse A^-1 (x - b) instead.
    #[arg(long)]
    inverse: bool,
    /// Comma-separated confounder column names (kinds optional) to pass
    /// through untouched. Every other column must be numeric.
    #[arg(long)]
    confounders: Option<String>,
}

#[derive(Args)]
struct SimulateArgs {
    /// One of: homoscedastic_linear, heteroscedastic_linear,
    /// nonlinear_heteroscedastic, categorical_1d, two_circles_2d.
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value_t = 200)]
    n_source: usize,
    #[arg(long, default_value_t = 200)]
    n_target: usize,
    #[arg(long)]
    label_shift: bool,
    #[arg(long)]
    feature_shift: bool,
    #[arg(long)]
    noise: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    adapted: PathBuf,
    #[arg(long)]
    oracle: PathBuf,
    /// Heldout pair for an additional rmse_heldout entry.
    #[arg(long)]
    heldout_adapted: Option<PathBuf>,
    #[arg(long)]
    heldout_oracle: Option<PathBuf>,
    /// Label column for the silhouette score.
    #[arg(long)]
    labels: Option<String>,
    /// Compute the silhouette score over the adapted features.
    #[arg(long)]
    silhouette: bool,
    /// Write a scatter plot of adapted vs oracle features.
    #[arg(long)]
    plot: Option<PathBuf>,
    /// Comma-separated confounder column names (kinds optional) excluded
    /// from the feature comparison.
    #[arg(long)]
    confounders: Option<String>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    model: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CONDO_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Transform(args) => cmd_transform(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            log::error!("{err}");
            ExitCode::from(exit_class(&err))
        }
    }
}

fn exit_class(err: &CondoError) -> u8 {
    if err.is_numerical() {
        4
    } else if matches!(err, CondoError::InvalidArgument(_)) {
        2
    } else {
        3
    }
}

fn parse_transform_kind(s: &str) -> Result<MapKind, CondoError> {
    match s {
        "full" | "full_affine" => Ok(MapKind::FullAffine),
        "diag" | "location_scale" => Ok(MapKind::LocationScale),
        other => Err(CondoError::InvalidArgument(format!(
            "unknown transform '{other}' (use full or diag)"
        ))),
    }
}

/// Column names to pass through (kinds in `name:kind` entries are ignored).
fn passthrough_names(spec: &Option<String>) -> Vec<String> {
    spec.as_deref()
        .unwrap_or("")
        .split(',')
        .map(|s| s.split(':').next().unwrap_or("").trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

fn cmd_fit(args: FitArgs) -> Result<(), CondoError> {
    let method = FitMethod::parse(&args.method)?;
    let kind = parse_transform_kind(&args.transform)?;
    let mut config = FitConfig::new(method, kind);
    if let Some(v) = args.iterations {
        config.iterations = v;
    }
    if let Some(v) = args.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = args.lr {
        config.learning_rate = v;
    }
    if let Some(v) = args.momentum {
        config.momentum = v;
    }
    if let Some(v) = args.ridge {
        config.ridge = v;
    }
    config.seed = args.seed;
    config.validate()?;

    let spec = parse_confounder_spec(&args.confounders)?;
    let source = read_dataset(&args.source, &spec)?;
    let target = read_dataset(&args.target, &spec)?;
    log::info!(
        "fitting {} ({} source / {} target samples, {} features)",
        method.name(),
        source.n_samples(),
        target.n_samples(),
        source.n_features()
    );

    let report = fit(&source, &target, &config)?;
    match (
        report.objective_trace.first(),
        report.objective_trace.last(),
    ) {
        (Some(first), Some(last)) => log::info!(
            "objective {:.6e} -> {:.6e} over {} iterations (final {:.6e})",
            first.1,
            last.1,
            report.objective_trace.len(),
            report.final_objective
        ),
        _ => log::info!("closed-form fit, objective {:.6e}", report.final_objective),
    }
    log::info!("det(A) = {:.6}", report.transform.det());
    std::fs::write(&args.out, serialize_model(&report))?;
    log::info!("model written to {}", args.out.display());
    Ok(())
}

fn cmd_transform(args: TransformArgs) -> Result<(), CondoError> {
    let report = deserialize_model(&std::fs::read(&args.model)?)?;
    let map = if args.inverse {
        report.transform.inverse()?
    } else {
        report.transform
    };

    let table = read_table(&args.input)?;
    let pass = passthrough_names(&args.confounders);
    let feature_cols: Vec<usize> = (0..table.headers.len())
        .filter(|&i| !pass.contains(&table.headers[i]))
        .collect();
    if feature_cols.len() != map.dim() {
        return Err(CondoError::DimensionMismatch(format!(
            "model expects {} feature columns but the input provides {}",
            map.dim(),
            feature_cols.len()
        )));
    }
    let features = table.numeric_matrix(&feature_cols)?;
    let mapped = map.apply(&features)?;

    let mut out = table.clone();
    for (r, row) in out.rows.iter_mut().enumerate() {
        for (j, &c) in feature_cols.iter().enumerate() {
            row[c] = format_float(mapped[(r, j)]);
        }
    }
    write_table(&args.out, &out)
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CondoError> {
    let spec = ScenarioSpec {
        scenario: Scenario::parse(&args.scenario)?,
        n_source: args.n_source,
        n_target: args.n_target,
        label_shift: args.label_shift,
        feature_shift: args.feature_shift,
        noise: args.noise,
        seed: args.seed,
    };
    let data = condo::generate(&spec)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let write = |name: &str, ds: &condo::Dataset| -> Result<(), CondoError> {
        write_table(&args.out_dir.join(name), &dataset_to_table(ds))
    };
    write("source.csv", &data.source)?;
    write("target.csv", &data.target)?;
    write("oracle_source.csv", &data.oracle_source)?;
    write("heldout_source.csv", &data.heldout_source)?;
    write("heldout_oracle.csv", &data.heldout_oracle)?;
    write_truth(&args.out_dir.join("truth.json"), &data.true_map)?;
    log::info!(
        "wrote {} splits to {}",
        args.scenario,
        args.out_dir.display()
    );
    Ok(())
}

fn feature_matrix(
    path: &Path,
    exclude: &[String],
) -> Result<(CsvTable, Vec<usize>, DMatrix<f64>), CondoError> {
    let table = read_table(path)?;
    let cols: Vec<usize> = (0..table.headers.len())
        .filter(|&i| !exclude.contains(&table.headers[i]))
        .collect();
    let matrix = table.numeric_matrix(&cols)?;
    Ok((table, cols, matrix))
}

fn cmd_eval(args: EvalArgs) -> Result<(), CondoError> {
    let mut exclude = passthrough_names(&args.confounders);
    if let Some(labels) = &args.labels {
        exclude.push(labels.clone());
    }
    let (adapted_table, adapted_cols, adapted) = feature_matrix(&args.adapted, &exclude)?;
    let (_, _, oracle) = feature_matrix(&args.oracle, &exclude)?;
    let rmse = metrics::rmse(&adapted, &oracle)?;

    let mut out = serde_json::Map::new();
    out.insert("rmse".into(), rmse.into());

    match (&args.heldout_adapted, &args.heldout_oracle) {
        (Some(ha), Some(ho)) => {
            let (_, _, h_adapted) = feature_matrix(ha, &exclude)?;
            let (_, _, h_oracle) = feature_matrix(ho, &exclude)?;
            out.insert(
                "rmse_heldout".into(),
                metrics::rmse(&h_adapted, &h_oracle)?.into(),
            );
        }
        (None, None) => {}
        _ => {
            return Err(CondoError::InvalidArgument(
                "--heldout-adapted and --heldout-oracle must be given together".into(),
            ));
        }
    }

    if args.silhouette {
        let label_col = args.labels.as_deref().ok_or_else(|| {
            CondoError::InvalidArgument("--silhouette requires --labels <column>".into())
        })?;
        let idx = adapted_table.column_index(label_col)?;
        let mut ids: Vec<String> = Vec::new();
        let labels: Vec<usize> = adapted_table
            .rows
            .iter()
            .map(|row| {
                let token = row[idx].trim();
                match ids.iter().position(|t| t == token) {
                    Some(i) => i,
                    None => {
                        ids.push(token.to_string());
                        ids.len() - 1
                    }
                }
            })
            .collect();
        out.insert(
            "silhouette".into(),
            metrics::silhouette(&adapted, &labels)?.into(),
        );
    }

    if let Some(plot) = &args.plot {
        let to_points = |m: &DMatrix<f64>| -> Vec<(f64, f64)> {
            (0..m.nrows())
                .map(|r| {
                    if m.ncols() >= 2 {
                        (m[(r, 0)], m[(r, 1)])
                    } else {
                        (m[(r, 0)], r as f64)
                    }
                })
                .collect()
        };
        let title = if adapted_cols.len() >= 2 {
            "adapted vs oracle (first two features)"
        } else {
            "adapted vs oracle (feature, row)"
        };
        let svg = scatter_svg(
            &[
                ScatterSeries {
                    label: "adapted".into(),
                    points: to_points(&adapted),
                },
                ScatterSeries {
                    label: "oracle".into(),
                    points: to_points(&oracle),
                },
            ],
            title,
        );
        std::fs::write(plot, svg)?;
    }

    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::Value::Object(out)).expect("metrics serialize")
    );
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), CondoError> {
    let report = deserialize_model(&std::fs::read(&args.model)?)?;
    let map = &report.transform;
    let kind = match map.kind() {
        MapKind::FullAffine => "full_affine",
        MapKind::LocationScale => "location_scale",
    };
    println!("method:          {}", report.config.method.name());
    println!("transform_kind:  {kind} ({} features)", map.dim());
    println!("det(A):          {}", map.det());
    for r in 0..map.dim() {
        let row: Vec<String> = (0..map.dim())
            .map(|c| format_float(map.matrix_a()[(r, c)]))
            .collect();
        println!("A[{r}]:            [{}]", row.join(", "));
    }
    let b: Vec<String> = map.offset_b().iter().map(|v| format_float(*v)).collect();
    println!("b:               [{}]", b.join(", "));
    println!("final objective: {}", report.final_objective);
    match report.objective_trace.len() {
        0 => println!("solver:          closed form"),
        n => println!("solver:          {n} recorded iterations"),
    }
    println!("seed:            {}", report.config.seed);
    println!("wall time (s):   {}", report.wall_time_seconds);
    Ok(())
}
