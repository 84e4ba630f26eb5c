//! Command-line front end for quadratic-manifold experiments.
//!
//! Subcommands: `generate` (synthetic snapshot datasets), `fit` (pca /
//! leading / greedy / am), `eval` (relative error of a stored manifold on
//! stored data), `diagnose` (correlation and spectrum reports), and `sweep`
//! (method x r grids). Every run writes a `manifest.json` tying the
//! artifacts to the resolved configuration, library versions, and
//! wall-clock timings.
//!
//! Exit codes: 0 ok, 2 configuration, 3 i/o, 4 numerical breakdown.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde_json::{json, Value};

use quadmani_core::baselines::{am_fit, leading_fit, AmConfig, AmState};
use quadmani_core::datagen::{
    gen_advecting_wave, gen_burgers_suite, gen_parabola, gen_wave2d, split_paper, AdvectConfig,
    BurgersConfig, SplitPattern, Wave2dConfig,
};
use quadmani_core::diagnostics::{
    correlation_matrix, relative_error, singular_value_report, EncoderChoice,
};
use quadmani_core::encoders::GnConfig;
use quadmani_core::features::FeatureMapId;
use quadmani_core::greedy::{
    greedy_fit, read_manifold, select_gamma, write_manifold, GammaTrial, GreedyConfig,
    GreedyTrace, QuadraticManifold,
};
use quadmani_core::matrixio::{
    apply_shift, center_columns, read_matrix, write_csv, write_matrix, CenteringShift, DataMatrix,
};
use quadmani_core::svdcore::thin_svd;
use quadmani_core::{ErrorClass, QmError, Result};

/// Decades from 1e-8 to 1e-2, the grid behind `--gamma-grid default`.
const DEFAULT_GAMMA_GRID: [f64; 7] = [1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2];

/// Single gamma used when neither `--gamma` nor `--gamma-grid` is given.
const DEFAULT_GAMMA: f64 = 1e-6;

#[derive(Parser)]
#[command(
    name = "quadmani",
    version,
    about = "Fit and evaluate quadratic manifolds on snapshot data"
)]
struct Cli {
    /// Worker threads; overrides the QM_THREADS environment variable
    /// (0 or unset = one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and write train/val/test matrices.
    Generate(GenerateArgs),
    /// Fit a manifold to training data and store it with its trace.
    Fit(FitArgs),
    /// Reconstruct stored data through a stored manifold and report errors.
    Eval(EvalArgs),
    /// Correlation and singular-spectrum reports for a fitted manifold.
    Diagnose(DiagnoseArgs),
    /// Fit and evaluate a grid of (method, r) combinations.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// One of: parabola, advect-desk, advect-paper, burgers-desk,
    /// burgers-paper, wave2d-desk, wave2d-paper.
    #[arg(long)]
    dataset: String,

    /// Directory for train.qmx, val.qmx, test.qmx, and manifest.json.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Built-in dataset id; the train (and val) splits are regenerated
    /// in memory. Mutually exclusive with --train/--val.
    #[arg(long)]
    dataset: Option<String>,

    /// Training matrix in QMX1 format.
    #[arg(long)]
    train: Option<PathBuf>,

    /// Validation matrix in QMX1 format (needed by --gamma-grid).
    #[arg(long)]
    val: Option<PathBuf>,

    /// One of: pca, leading, greedy, am.
    #[arg(long)]
    method: String,

    /// Reduced dimension.
    #[arg(long)]
    r: usize,

    /// Candidate window for greedy (default 10 r).
    #[arg(long)]
    m: Option<usize>,

    /// Keep the greedy candidate window fixed instead of growing it by one
    /// index per iteration.
    #[arg(long)]
    no_grow: bool,

    /// Ridge weight on the quadratic coefficients (default 1e-6).
    #[arg(long)]
    gamma: Option<f64>,

    /// Greedy only: comma-separated gamma values, or "default" for the
    /// decades 1e-8..1e-2; the value with the lowest validation objective
    /// wins (ties to the larger gamma).
    #[arg(long)]
    gamma_grid: Option<String>,

    /// am only: extra frame columns carrying the quadratic correction
    /// (default 10 r).
    #[arg(long)]
    qbar: Option<usize>,

    /// am only: outer-iteration cap (default 15 r).
    #[arg(long)]
    max_outer: Option<usize>,

    /// Skip column centering. The parabola dataset is never centered.
    #[arg(long)]
    no_center: bool,

    /// Directory for manifold.qmn, trace.csv, and manifest.json.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Fitted manifold in QMN1 format.
    #[arg(long)]
    manifold: PathBuf,

    /// Data matrix in QMX1 format. Mutually exclusive with --dataset.
    #[arg(long)]
    data: Option<PathBuf>,

    /// Built-in dataset id to regenerate and score against.
    #[arg(long)]
    dataset: Option<String>,

    /// Which split of --dataset to score: train, val, or test.
    #[arg(long, default_value = "test")]
    split: String,

    /// linear or gauss-newton.
    #[arg(long, default_value = "linear")]
    encoder: String,

    /// gauss-newton only: iteration cap (default 20).
    #[arg(long)]
    gn_iters: Option<usize>,

    /// gauss-newton only: Tikhonov damping on the step (default 0).
    #[arg(long)]
    gn_damping: Option<f64>,

    /// Directory for eval.csv and manifest.json.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Fitted manifold in QMN1 format (not am: its basis has no
    /// singular-vector selection to correlate against).
    #[arg(long)]
    manifold: PathBuf,

    /// Training matrix the manifold was fitted on, QMX1 format.
    #[arg(long)]
    train: Option<PathBuf>,

    /// Built-in dataset id whose train split to regenerate instead.
    #[arg(long)]
    dataset: Option<String>,

    /// Keep at most this many discarded singular directions as rows.
    #[arg(long, default_value_t = 30)]
    row_cap: usize,

    /// Directory for the correlation CSVs, singular_values.csv, and
    /// manifest.json.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Built-in dataset id. Mutually exclusive with --train/--val/--test.
    #[arg(long)]
    dataset: Option<String>,

    /// Training matrix in QMX1 format.
    #[arg(long)]
    train: Option<PathBuf>,

    /// Validation matrix (needed by --gamma-grid).
    #[arg(long)]
    val: Option<PathBuf>,

    /// Matrix the fitted manifolds are scored on.
    #[arg(long)]
    test: Option<PathBuf>,

    /// Comma-separated methods, e.g. leading,greedy.
    #[arg(long)]
    method: String,

    /// r values: a single value, a comma list, or start:step:end.
    #[arg(long)]
    r: String,

    /// Candidate window for greedy fits (default 10 r).
    #[arg(long)]
    m: Option<usize>,

    /// Ridge weight for every fit (default 1e-6).
    #[arg(long)]
    gamma: Option<f64>,

    /// Per-greedy-fit validation grid; see fit --gamma-grid.
    #[arg(long)]
    gamma_grid: Option<String>,

    /// linear or gauss-newton, used for scoring.
    #[arg(long, default_value = "linear")]
    encoder: String,

    /// Skip column centering. The parabola dataset is never centered.
    #[arg(long)]
    no_center: bool,

    /// Directory for sweep.csv and manifest.json.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => 2u8,
                ErrorClass::Io => 3u8,
                ErrorClass::Numeric => 4u8,
            })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    init_threads(cli.threads)?;
    match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Sweep(a) => cmd_sweep(a),
    }
}

/// Resolve the worker-thread count: flag beats QM_THREADS beats auto.
fn init_threads(flag: Option<usize>) -> Result<()> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var("QM_THREADS") {
            Ok(v) => v.trim().parse::<usize>().map_err(|_| QmError::Config {
                msg: format!("QM_THREADS must be a nonnegative integer, got {v:?}"),
            })?,
            Err(_) => 0,
        },
    };
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| QmError::Config {
                msg: format!("could not size the thread pool: {e}"),
            })?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// shared plumbing

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Method {
    Pca,
    Leading,
    Greedy,
    Am,
}

impl Method {
    fn parse(s: &str) -> Result<Method> {
        match s {
            "pca" => Ok(Method::Pca),
            "leading" => Ok(Method::Leading),
            "greedy" => Ok(Method::Greedy),
            "am" => Ok(Method::Am),
            other => Err(QmError::Config {
                msg: format!("unknown method {other:?}; expected pca, leading, greedy, or am"),
            }),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Method::Pca => "pca",
            Method::Leading => "leading",
            Method::Greedy => "greedy",
            Method::Am => "am",
        }
    }
}

/// A regenerated built-in dataset with its split and generator config.
struct DatasetBundle {
    train: DataMatrix,
    val: DataMatrix,
    test: DataMatrix,
    config: Value,
    /// The parabola is defined without centering; everything else centers.
    center_default: bool,
}

fn build_dataset(id: &str) -> Result<DatasetBundle> {
    match id {
        "parabola" => {
            // 2 x 20 and exactly representable; no split is defined for it,
            // so all three roles see the full matrix.
            let s = gen_parabola();
            Ok(DatasetBundle {
                train: s.clone(),
                val: s.clone(),
                test: s,
                config: json!({ "dataset": id, "n": 2, "k": 20 }),
                center_default: false,
            })
        }
        "advect-desk" | "advect-paper" => {
            let cfg = if id.ends_with("desk") {
                AdvectConfig::desk()
            } else {
                AdvectConfig::paper()
            };
            let s = gen_advecting_wave(&cfg)?;
            let (train, val, test) = split_paper(&s, SplitPattern::Interleaved)?;
            Ok(DatasetBundle {
                train,
                val,
                test,
                config: json!({
                    "dataset": id,
                    "n_x": cfg.n_x,
                    "n_t": cfg.n_t,
                    "mu": cfg.mu,
                    "c": cfg.c,
                    "variance": cfg.variance,
                    "split": "interleaved",
                }),
                center_default: true,
            })
        }
        "burgers-desk" | "burgers-paper" => {
            let cfg = if id.ends_with("desk") {
                BurgersConfig::desk()
            } else {
                BurgersConfig::paper()
            };
            let s = gen_burgers_suite(&cfg)?;
            let traj_len = cfg.snapshots_per_traj;
            let (train, val, test) = split_paper(&s, SplitPattern::BurgersAlternating { traj_len })?;
            Ok(DatasetBundle {
                train,
                val,
                test,
                config: json!({
                    "dataset": id,
                    "nu": cfg.nu,
                    "n_x": cfg.n_x,
                    "snapshots_per_traj": cfg.snapshots_per_traj,
                    "t_end": cfg.t_end,
                    "mu_train": cfg.mu_train,
                    "mu_valtest": cfg.mu_valtest,
                    "split": "burgers-alternating",
                }),
                center_default: true,
            })
        }
        "wave2d-desk" | "wave2d-paper" => {
            let cfg = if id.ends_with("desk") {
                Wave2dConfig::desk()
            } else {
                Wave2dConfig::paper()
            };
            let s = gen_wave2d(&cfg)?;
            let (train, val, test) = split_paper(&s, SplitPattern::Interleaved)?;
            Ok(DatasetBundle {
                train,
                val,
                test,
                config: json!({
                    "dataset": id,
                    "grid_per_dim": cfg.grid_per_dim,
                    "n_snapshots": cfg.n_snapshots,
                    "t_end": cfg.t_end,
                    "split": "interleaved",
                }),
                center_default: true,
            })
        }
        other => Err(QmError::Config {
            msg: format!(
                "unknown dataset {other:?}; expected parabola, advect-desk, advect-paper, \
                 burgers-desk, burgers-paper, wave2d-desk, or wave2d-paper"
            ),
        }),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| QmError::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_manifest(out: &Path, manifest: &Value) -> Result<()> {
    let path = out.join("manifest.json");
    let mut text = serde_json::to_string_pretty(manifest).expect("plain json values serialize");
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| QmError::Io {
        path: path.clone(),
        source: e,
    })?;
    println!("wrote {}", path.display());
    Ok(())
}

fn versions_json() -> Value {
    json!({
        "quadmani-cli": env!("CARGO_PKG_VERSION"),
        "quadmani-core": quadmani_core::VERSION,
        "matrix-format": "QMX1",
        "manifold-format": "QMN1",
    })
}

fn parse_gamma_grid(s: &str) -> Result<Vec<f64>> {
    if s == "default" {
        return Ok(DEFAULT_GAMMA_GRID.to_vec());
    }
    s.split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>().map_err(|_| QmError::Config {
                msg: format!("gamma grid entry {t:?} is not a number"),
            })
        })
        .collect()
}

fn parse_r_list(s: &str) -> Result<Vec<usize>> {
    let parse_one = |t: &str| -> Result<usize> {
        t.trim().parse::<usize>().map_err(|_| QmError::Config {
            msg: format!("r value {t:?} is not a positive integer"),
        })
    };
    let values: Vec<usize> = if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(QmError::Config {
                msg: format!("r range {s:?} must look like start:step:end"),
            });
        }
        let (start, step, end) = (parse_one(parts[0])?, parse_one(parts[1])?, parse_one(parts[2])?);
        if step == 0 {
            return Err(QmError::Config {
                msg: "r range step must be at least 1".into(),
            });
        }
        (start..=end).step_by(step).collect()
    } else {
        s.split(',').map(parse_one).collect::<Result<Vec<_>>>()?
    };
    if values.is_empty() || values.contains(&0) {
        return Err(QmError::Config {
            msg: format!("r list {s:?} must contain positive values"),
        });
    }
    Ok(values)
}

fn parse_encoder(
    name: &str,
    gn_iters: Option<usize>,
    gn_damping: Option<f64>,
) -> Result<EncoderChoice> {
    match name {
        "linear" => {
            if gn_iters.is_some() || gn_damping.is_some() {
                return Err(QmError::Config {
                    msg: "--gn-iters/--gn-damping apply to the gauss-newton encoder only".into(),
                });
            }
            Ok(EncoderChoice::Linear)
        }
        "gauss-newton" | "gn" => {
            let mut cfg = GnConfig::default();
            if let Some(it) = gn_iters {
                cfg.max_iter = it;
            }
            if let Some(d) = gn_damping {
                cfg.damping = d;
            }
            cfg.validate()?;
            Ok(EncoderChoice::GaussNewton(cfg))
        }
        other => Err(QmError::Config {
            msg: format!("unknown encoder {other:?}; expected linear or gauss-newton"),
        }),
    }
}

fn fmt(v: f64) -> String {
    format!("{v:e}")
}

// ---------------------------------------------------------------------------
// generate

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let t0 = Instant::now();
    let ds = build_dataset(&a.dataset)?;
    let generate_seconds = t0.elapsed().as_secs_f64();

    ensure_dir(&a.out)?;
    let t1 = Instant::now();
    for (name, m) in [("train", &ds.train), ("val", &ds.val), ("test", &ds.test)] {
        let path = a.out.join(format!("{name}.qmx"));
        write_matrix(m, &path)?;
        println!("wrote {} ({} x {})", path.display(), m.rows(), m.cols());
    }
    let write_seconds = t1.elapsed().as_secs_f64();

    write_manifest(
        &a.out,
        &json!({
            "command": "generate",
            "config": ds.config,
            "splits": {
                "train": { "rows": ds.train.rows(), "cols": ds.train.cols() },
                "val": { "rows": ds.val.rows(), "cols": ds.val.cols() },
                "test": { "rows": ds.test.rows(), "cols": ds.test.cols() },
            },
            "versions": versions_json(),
            "threads": rayon::current_num_threads(),
            "timings_seconds": { "generate": generate_seconds, "write": write_seconds },
        }),
    )
}

// ---------------------------------------------------------------------------
// fit

/// Everything a single fit produced besides the manifold itself.
struct FitOutcome {
    trace: Option<GreedyTrace>,
    am_history: Option<Vec<f64>>,
    am_outer: Option<usize>,
    am_converged: Option<bool>,
    gamma_trials: Option<Vec<GammaTrial>>,
    /// Ridge weight the final fit actually used.
    gamma: f64,
}

struct FitPlan {
    method: Method,
    r: usize,
    m: Option<usize>,
    no_grow: bool,
    gamma: Option<f64>,
    gamma_grid: Option<Vec<f64>>,
    qbar: Option<usize>,
    max_outer: Option<usize>,
}

/// Fit one manifold. `s_train` and `val` already carry the shift.
fn fit_one(
    plan: &FitPlan,
    s_train: &DataMatrix,
    shift: &CenteringShift,
    val: Option<&DataMatrix>,
) -> Result<(QuadraticManifold, FitOutcome)> {
    let gamma = plan.gamma.unwrap_or(DEFAULT_GAMMA);
    let mut outcome = FitOutcome {
        trace: None,
        am_history: None,
        am_outer: None,
        am_converged: None,
        gamma_trials: None,
        gamma,
    };
    let mani = match plan.method {
        Method::Pca => {
            let n = s_train.rows();
            let ell = n.min(s_train.cols());
            if plan.r > ell {
                return Err(QmError::Config {
                    msg: format!("r = {} must lie in 1..={ell} for this data", plan.r),
                });
            }
            let svd = thin_svd(s_train, plan.r)?;
            let p = FeatureMapId::CondensedQuadratic.dim(plan.r);
            outcome.gamma = 0.0;
            QuadraticManifold {
                v: svd.u.clone(),
                wbar: DMatrix::zeros(n, p),
                selected: (1..=plan.r).collect(),
                mean: shift.clone(),
                feature: FeatureMapId::CondensedQuadratic,
                gamma: 0.0,
                ell,
                am_fitted: false,
            }
        }
        Method::Leading => leading_fit(s_train, shift, plan.r, gamma)?,
        Method::Greedy => {
            let mut cfg = GreedyConfig::new(plan.r, gamma);
            if let Some(m) = plan.m {
                cfg.m = m;
            }
            if plan.no_grow {
                cfg.grow_window = false;
            }
            if let Some(grid) = &plan.gamma_grid {
                let val = val.ok_or_else(|| QmError::Config {
                    msg: "--gamma-grid needs validation data (--val or --dataset)".into(),
                })?;
                let sel = select_gamma(s_train, val, shift, &cfg, grid)?;
                cfg.gamma = sel.gamma;
                outcome.gamma = sel.gamma;
                outcome.gamma_trials = Some(sel.trials);
            }
            let (mani, trace) = greedy_fit(s_train, shift, &cfg)?;
            outcome.trace = Some(trace);
            mani
        }
        Method::Am => {
            let qbar = plan.qbar.unwrap_or(10 * plan.r);
            let mut cfg = AmConfig::new(plan.r, qbar, gamma);
            if let Some(mo) = plan.max_outer {
                cfg.max_outer = mo;
            }
            let (mani, state): (QuadraticManifold, AmState) = am_fit(s_train, shift, &cfg)?;
            outcome.am_history = Some(state.objective_history);
            outcome.am_outer = Some(state.outer_iterations);
            outcome.am_converged = Some(state.converged);
            mani
        }
    };
    Ok((mani, outcome))
}

/// Load fit inputs from either a dataset id or file paths; returns the raw
/// (unshifted) train and optional validation matrices plus a source record
/// and whether centering should apply.
fn load_fit_inputs(
    dataset: &Option<String>,
    train: &Option<PathBuf>,
    val: &Option<PathBuf>,
    no_center: bool,
) -> Result<(DataMatrix, Option<DataMatrix>, Value, bool)> {
    match (dataset, train) {
        (Some(_), Some(_)) => Err(QmError::Config {
            msg: "--dataset and --train are mutually exclusive".into(),
        }),
        (Some(id), None) => {
            if val.is_some() {
                return Err(QmError::Config {
                    msg: "--val is implied by --dataset".into(),
                });
            }
            let ds = build_dataset(id)?;
            let center = ds.center_default && !no_center;
            Ok((ds.train, Some(ds.val), ds.config, center))
        }
        (None, Some(train_path)) => {
            let train = read_matrix(train_path)?;
            let val_data = match val {
                Some(p) => Some(read_matrix(p)?),
                None => None,
            };
            let source = json!({
                "train": train_path.display().to_string(),
                "val": val.as_ref().map(|p| p.display().to_string()),
            });
            Ok((train, val_data, source, !no_center))
        }
        (None, None) => Err(QmError::Config {
            msg: "fit needs either --dataset or --train".into(),
        }),
    }
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let method = Method::parse(&a.method)?;

    // Flag consistency before any work: each knob belongs to one method.
    if method != Method::Greedy && (a.m.is_some() || a.no_grow || a.gamma_grid.is_some()) {
        return Err(QmError::Config {
            msg: "--m, --no-grow, and --gamma-grid apply to the greedy method only".into(),
        });
    }
    if method != Method::Am && (a.qbar.is_some() || a.max_outer.is_some()) {
        return Err(QmError::Config {
            msg: "--qbar and --max-outer apply to the am method only".into(),
        });
    }
    if method == Method::Pca && a.gamma.is_some() {
        return Err(QmError::Config {
            msg: "pca has no quadratic coefficients to regularize; drop --gamma".into(),
        });
    }
    if a.gamma.is_some() && a.gamma_grid.is_some() {
        return Err(QmError::Config {
            msg: "--gamma and --gamma-grid are mutually exclusive".into(),
        });
    }

    let t_load = Instant::now();
    let (train_raw, val_raw, source, center) =
        load_fit_inputs(&a.dataset, &a.train, &a.val, a.no_center)?;
    let load_seconds = t_load.elapsed().as_secs_f64();

    let (s_train, shift) = if center {
        center_columns(&train_raw)
    } else {
        let zero = CenteringShift::zero(train_raw.rows());
        (train_raw, zero)
    };
    let val_shifted = match &val_raw {
        Some(v) => Some(apply_shift(v, &shift)?),
        None => None,
    };

    let plan = FitPlan {
        method,
        r: a.r,
        m: a.m,
        no_grow: a.no_grow,
        gamma: a.gamma,
        gamma_grid: match &a.gamma_grid {
            Some(s) => Some(parse_gamma_grid(s)?),
            None => None,
        },
        qbar: a.qbar,
        max_outer: a.max_outer,
    };
    let t_fit = Instant::now();
    let (mani, outcome) = fit_one(&plan, &s_train, &shift, val_shifted.as_ref())?;
    let fit_seconds = t_fit.elapsed().as_secs_f64();

    ensure_dir(&a.out)?;
    let t_write = Instant::now();
    let mani_path = a.out.join("manifold.qmn");
    write_manifold(&mani, &mani_path)?;
    println!(
        "wrote {} (n = {}, r = {}, p = {}, gamma = {:e})",
        mani_path.display(),
        mani.n(),
        mani.r(),
        mani.p(),
        outcome.gamma
    );
    if !mani.selected.is_empty() {
        println!("selected singular indices: {:?}", mani.selected);
    }
    if let Some(trace) = &outcome.trace {
        let rows: Vec<Vec<String>> = trace
            .records
            .iter()
            .map(|rec| {
                vec![
                    rec.iteration.to_string(),
                    rec.chosen.to_string(),
                    fmt(rec.objective),
                    rec.window.to_string(),
                ]
            })
            .collect();
        let path = a.out.join("trace.csv");
        write_csv(&path, &["iteration", "chosen", "objective", "window"], &rows)?;
        println!("wrote {} ({} rows)", path.display(), rows.len());
    }
    if let Some(history) = &outcome.am_history {
        let rows: Vec<Vec<String>> = history
            .iter()
            .enumerate()
            .map(|(i, obj)| vec![i.to_string(), fmt(*obj)])
            .collect();
        let path = a.out.join("am_history.csv");
        write_csv(&path, &["outer_iteration", "objective"], &rows)?;
        println!("wrote {} ({} rows)", path.display(), rows.len());
    }
    let write_seconds = t_write.elapsed().as_secs_f64();

    let mut config = json!({
        "method": method.name(),
        "r": a.r,
        "gamma": outcome.gamma,
        "centered": center,
        "source": source,
    });
    let obj = config.as_object_mut().expect("json object");
    if method == Method::Greedy {
        obj.insert("m".into(), json!(a.m.unwrap_or(10 * a.r)));
        obj.insert("grow_window".into(), json!(!a.no_grow));
        if let Some(trials) = &outcome.gamma_trials {
            let t: Vec<Value> = trials
                .iter()
                .map(|t| json!({ "gamma": t.gamma, "validation_objective": t.objective }))
                .collect();
            obj.insert("gamma_grid".into(), json!(t));
        }
    }
    if method == Method::Am {
        obj.insert("qbar".into(), json!(a.qbar.unwrap_or(10 * a.r)));
        obj.insert("max_outer".into(), json!(a.max_outer.unwrap_or(15 * a.r)));
        obj.insert("outer_iterations".into(), json!(outcome.am_outer));
        obj.insert("converged".into(), json!(outcome.am_converged));
    }

    write_manifest(
        &a.out,
        &json!({
            "command": "fit",
            "config": config,
            "versions": versions_json(),
            "threads": rayon::current_num_threads(),
            "timings_seconds": {
                "load": load_seconds,
                "fit": fit_seconds,
                "write": write_seconds,
            },
        }),
    )
}

// ---------------------------------------------------------------------------
// eval

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let encoder = parse_encoder(&a.encoder, a.gn_iters, a.gn_damping)?;
    let t_load = Instant::now();
    let mani = read_manifold(&a.manifold)?;
    let (data, data_label) = match (&a.data, &a.dataset) {
        (Some(_), Some(_)) => {
            return Err(QmError::Config {
                msg: "--data and --dataset are mutually exclusive".into(),
            })
        }
        (Some(path), None) => (read_matrix(path)?, path.display().to_string()),
        (None, Some(id)) => {
            let ds = build_dataset(id)?;
            let split = match a.split.as_str() {
                "train" => ds.train,
                "val" => ds.val,
                "test" => ds.test,
                other => {
                    return Err(QmError::Config {
                        msg: format!("unknown split {other:?}; expected train, val, or test"),
                    })
                }
            };
            (split, format!("{id}:{}", a.split))
        }
        (None, None) => {
            return Err(QmError::Config {
                msg: "eval needs either --data or --dataset".into(),
            })
        }
    };
    let load_seconds = t_load.elapsed().as_secs_f64();

    let shifted = apply_shift(&data, &mani.mean)?;
    let t_eval = Instant::now();
    let report = relative_error(&mani, &shifted, &encoder)?;
    let eval_seconds = t_eval.elapsed().as_secs_f64();

    println!(
        "E_rel = {:e} on {} columns (squared error {:e}, floor {:e}, encode+decode {:.3}s)",
        report.relative_error,
        report.columns,
        report.sq_error_sum,
        report.lower_bound,
        report.seconds
    );

    ensure_dir(&a.out)?;
    let path = a.out.join("eval.csv");
    write_csv(
        &path,
        &[
            "manifold",
            "data",
            "encoder",
            "columns",
            "relative_error",
            "sq_error_sum",
            "lower_bound",
            "seconds",
        ],
        &[vec![
            a.manifold.display().to_string(),
            data_label.clone(),
            encoder.to_string(),
            report.columns.to_string(),
            fmt(report.relative_error),
            fmt(report.sq_error_sum),
            fmt(report.lower_bound),
            fmt(report.seconds),
        ]],
    )?;
    println!("wrote {}", path.display());

    write_manifest(
        &a.out,
        &json!({
            "command": "eval",
            "config": {
                "manifold": a.manifold.display().to_string(),
                "data": data_label,
                "encoder": encoder.to_string(),
                "r": mani.r(),
                "p": mani.p(),
                "gamma": mani.gamma,
            },
            "results": {
                "relative_error": report.relative_error,
                "sq_error_sum": report.sq_error_sum,
                "lower_bound": report.lower_bound,
                "columns": report.columns,
            },
            "versions": versions_json(),
            "threads": rayon::current_num_threads(),
            "timings_seconds": { "load": load_seconds, "eval": eval_seconds },
        }),
    )
}

// ---------------------------------------------------------------------------
// diagnose

fn cmd_diagnose(a: DiagnoseArgs) -> Result<()> {
    let t_load = Instant::now();
    let mani = read_manifold(&a.manifold)?;
    let (train, train_label) = match (&a.train, &a.dataset) {
        (Some(_), Some(_)) => {
            return Err(QmError::Config {
                msg: "--train and --dataset are mutually exclusive".into(),
            })
        }
        (Some(path), None) => (read_matrix(path)?, path.display().to_string()),
        (None, Some(id)) => (build_dataset(id)?.train, format!("{id}:train")),
        (None, None) => {
            return Err(QmError::Config {
                msg: "diagnose needs either --train or --dataset".into(),
            })
        }
    };
    let load_seconds = t_load.elapsed().as_secs_f64();

    let shifted = apply_shift(&train, &mani.mean)?;
    let t_diag = Instant::now();
    let ell = shifted.rows().min(shifted.cols());
    let svd = thin_svd(&shifted, ell)?;
    let rep = correlation_matrix(&mani, &svd, a.row_cap)?;
    let spectrum = singular_value_report(svd.sigma.as_slice());
    let diag_seconds = t_diag.elapsed().as_secs_f64();

    ensure_dir(&a.out)?;
    let p = mani.p();
    let mut header: Vec<String> = vec!["singular_index".into()];
    header.extend((1..=p).map(|b| format!("feature_{b}")));
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    for (name, matrix) in [("ctilde", &rep.ctilde), ("pearson", &rep.pearson)] {
        let rows: Vec<Vec<String>> = rep
            .row_indices
            .iter()
            .enumerate()
            .map(|(i, q)| {
                let mut row = vec![q.to_string()];
                row.extend((0..p).map(|b| fmt(matrix[(i, b)])));
                row
            })
            .collect();
        let path = a.out.join(format!("correlation_{name}.csv"));
        write_csv(&path, &header_refs, &rows)?;
        println!("wrote {} ({} rows)", path.display(), rows.len());
    }

    let spectrum_rows: Vec<Vec<String>> = spectrum
        .iter()
        .map(|row| {
            vec![
                row.index.to_string(),
                fmt(row.sigma),
                fmt(row.cumulative_energy),
            ]
        })
        .collect();
    let spectrum_path = a.out.join("singular_values.csv");
    write_csv(
        &spectrum_path,
        &["index", "sigma", "cumulative_energy"],
        &spectrum_rows,
    )?;
    println!("wrote {} ({} rows)", spectrum_path.display(), spectrum_rows.len());

    let mean_abs = if rep.ctilde.is_empty() {
        0.0
    } else {
        rep.ctilde.iter().map(|v| v.abs()).sum::<f64>() / rep.ctilde.len() as f64
    };
    println!(
        "mean |correlation| over {} discarded directions: {:e}",
        rep.row_indices.len(),
        mean_abs
    );

    write_manifest(
        &a.out,
        &json!({
            "command": "diagnose",
            "config": {
                "manifold": a.manifold.display().to_string(),
                "train": train_label,
                "row_cap": a.row_cap,
                "r": mani.r(),
                "p": p,
            },
            "results": {
                "rows": rep.row_indices,
                "mean_abs_ctilde": mean_abs,
                "zero_rows": rep.zero_rows,
                "zero_cols": rep.zero_cols,
            },
            "versions": versions_json(),
            "threads": rayon::current_num_threads(),
            "timings_seconds": { "load": load_seconds, "diagnose": diag_seconds },
        }),
    )
}

// ---------------------------------------------------------------------------
// sweep

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let methods: Vec<Method> = a
        .method
        .split(',')
        .map(|s| Method::parse(s.trim()))
        .collect::<Result<Vec<_>>>()?;
    if methods.is_empty() {
        return Err(QmError::Config {
            msg: "sweep needs at least one method".into(),
        });
    }
    let rs = parse_r_list(&a.r)?;
    let encoder = parse_encoder(&a.encoder, None, None)?;
    if a.gamma.is_some() && a.gamma_grid.is_some() {
        return Err(QmError::Config {
            msg: "--gamma and --gamma-grid are mutually exclusive".into(),
        });
    }
    let grid = match &a.gamma_grid {
        Some(s) => {
            if !methods.contains(&Method::Greedy) {
                return Err(QmError::Config {
                    msg: "--gamma-grid applies to greedy fits only".into(),
                });
            }
            Some(parse_gamma_grid(s)?)
        }
        None => None,
    };

    let t_load = Instant::now();
    let (train_raw, val_raw, test_raw, source, center) = match (&a.dataset, &a.train, &a.test) {
        (Some(_), Some(_), _) => {
            return Err(QmError::Config {
                msg: "--dataset and --train are mutually exclusive".into(),
            })
        }
        (Some(id), None, None) => {
            let ds = build_dataset(id)?;
            let center = ds.center_default && !a.no_center;
            (ds.train, Some(ds.val), ds.test, ds.config, center)
        }
        (None, Some(train_path), Some(test_path)) => {
            let train = read_matrix(train_path)?;
            let val = match &a.val {
                Some(p) => Some(read_matrix(p)?),
                None => None,
            };
            let test = read_matrix(test_path)?;
            let source = json!({
                "train": train_path.display().to_string(),
                "val": a.val.as_ref().map(|p| p.display().to_string()),
                "test": test_path.display().to_string(),
            });
            (train, val, test, source, !a.no_center)
        }
        _ => {
            return Err(QmError::Config {
                msg: "sweep needs either --dataset or both --train and --test".into(),
            })
        }
    };
    let load_seconds = t_load.elapsed().as_secs_f64();

    let (s_train, shift) = if center {
        center_columns(&train_raw)
    } else {
        let zero = CenteringShift::zero(train_raw.rows());
        (train_raw, zero)
    };
    let val_shifted = match &val_raw {
        Some(v) => Some(apply_shift(v, &shift)?),
        None => None,
    };
    let test_shifted = apply_shift(&test_raw, &shift)?;

    let mut rows: Vec<Vec<String>> = Vec::new();
    let t_sweep = Instant::now();
    for &method in &methods {
        for &r in &rs {
            let plan = FitPlan {
                method,
                r,
                // Window and growth apply to greedy fits; other methods
                // take their own defaults.
                m: if method == Method::Greedy { a.m } else { None },
                no_grow: false,
                gamma: if method == Method::Pca { None } else { a.gamma },
                gamma_grid: if method == Method::Greedy {
                    grid.clone()
                } else {
                    None
                },
                qbar: None,
                max_outer: None,
            };
            let t_fit = Instant::now();
            let (mani, outcome) = fit_one(&plan, &s_train, &shift, val_shifted.as_ref())?;
            let fit_seconds = t_fit.elapsed().as_secs_f64();
            let report = relative_error(&mani, &test_shifted, &encoder)?;
            println!(
                "{} r = {}: E_rel = {:e} (gamma {:e}, fit {:.3}s)",
                method.name(),
                r,
                report.relative_error,
                outcome.gamma,
                fit_seconds
            );
            rows.push(vec![
                method.name().to_string(),
                r.to_string(),
                fmt(outcome.gamma),
                fmt(report.relative_error),
                fmt(report.sq_error_sum),
                fmt(report.lower_bound),
                fmt(fit_seconds),
                fmt(report.seconds),
            ]);
        }
    }
    let sweep_seconds = t_sweep.elapsed().as_secs_f64();

    ensure_dir(&a.out)?;
    let path = a.out.join("sweep.csv");
    write_csv(
        &path,
        &[
            "method",
            "r",
            "gamma",
            "relative_error",
            "sq_error_sum",
            "lower_bound",
            "fit_seconds",
            "eval_seconds",
        ],
        &rows,
    )?;
    println!("wrote {} ({} rows)", path.display(), rows.len());

    write_manifest(
        &a.out,
        &json!({
            "command": "sweep",
            "config": {
                "methods": methods.iter().map(|m| m.name()).collect::<Vec<_>>(),
                "r": rs,
                "m": a.m,
                "gamma": a.gamma,
                "gamma_grid": grid,
                "encoder": encoder.to_string(),
                "centered": center,
                "source": source,
            },
            "versions": versions_json(),
            "threads": rayon::current_num_threads(),
            "timings_seconds": { "load": load_seconds, "sweep": sweep_seconds },
        }),
    )
}
