mod svg;

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use profiler_core::data::{encode, holdout_split, infer_factor_space, load_csv, Dataset};
use profiler_core::desirability::Goal;
use profiler_core::models::{
    apply_missing_policy, fit_artifact, r_squared, BoostConfig, FitOptions, MissingPolicy, ModelArtifact, ModelSpec,
};
use profiler_core::optimizer::{GaConfig, OptimumReport};
use profiler_core::profiler::{init_state, Mode};
use profiler_core::simulation::{run_study, MetricVariant, SimulationScenario, StudyResult};
use profiler_service::{AppState, ServiceConfig};

#[derive(Parser)]
#[command(name = "profiler", version, about = "Extrapolation-controlled prediction profiler")]
struct Cli {
    /// Print machine-readable JSON lines instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelChoice {
    Ls,
    Boosted,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Off,
    Warn,
    Constrain,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Off => Mode::Off,
            ModeArg::Warn => Mode::Warn,
            ModeArg::Constrain => Mode::Constrain,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Regularized,
    PseudoInverse,
}

impl From<VariantArg> for MetricVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Regularized => MetricVariant::Regularized,
            VariantArg::PseudoInverse => MetricVariant::PseudoInverse,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit response models and the extrapolation metric; write a model artifact.
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// Response column; repeat for several responses.
        #[arg(long, required = true)]
        response: Vec<String>,
        #[arg(long, value_enum, default_value = "ls")]
        model: ModelChoice,
        #[arg(long)]
        out: PathBuf,
        /// Impute missing factor cells and add a missing indicator per factor.
        #[arg(long)]
        informative_missing: bool,
        /// Hold out this many random rows and report validation R².
        #[arg(long)]
        holdout: Option<usize>,
        /// Seed for the holdout split and the boosted fit.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Boosting stages (boosted model only).
        #[arg(long)]
        stages: Option<usize>,
    },
    /// Maximize overall desirability under an extrapolation mode.
    Optimize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value = "constrain")]
        mode: ModeArg,
        /// JSON array of goals, one per response.
        #[arg(long)]
        goals: PathBuf,
        /// JSON object of GA settings; missing fields take defaults.
        #[arg(long)]
        ga: Option<PathBuf>,
        /// Overrides the GA seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a simulation study of extrapolation detection.
    #[command(long_about = SIMULATE_HELP)]
    Simulate {
        /// JSON scenario; missing fields take defaults.
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario's metric variant.
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        /// Run both metric variants on the same scenario.
        #[arg(long)]
        compare: bool,
    },
    /// Serve the HTTP API over the artifacts in a data directory.
    Serve {
        #[arg(long, env = "PROFILER_DATA_DIR")]
        data_dir: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Seconds before an idle session is dropped.
        #[arg(long, default_value_t = 3600)]
        idle_timeout: u64,
    },
}

const SIMULATE_HELP: &str = "\
Run a simulation study of extrapolation detection.

Scenario JSON fields (all optional): n, p, r, p_cat, n_grid, replicates,
alpha, seed, variant (regularized | pseudo_inverse), noise (full | shared),
n_test, grid_pair (continuous | any).

Outputs written to --out:
  results.csv   one row per replicate and grid rank:
                replicate, rank, t2_true, oracle_extrapolated, metric,
                threshold, flagged
  summary.json  {v, scenario, ranks: [{rank, tpr, fpr}], fpr, fresh_fpr,
                training_t2_constant}; each rate is {rate, ci: [lo, hi], count}
  tpr.svg       TPR and FPR by grid rank

With --compare, each variant is written to its own subdirectory
(regularized/, pseudo_inverse/) and comparison.json summarizes both.";

fn emit(json_mode: bool, value: serde_json::Value, text: impl FnOnce() -> String) {
    if json_mode {
        println!("{value}");
    } else {
        println!("{}", text());
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

/// R² per response over rows with the response and every factor present.
fn r_squared_by_response(art: &ModelArtifact, data: &Dataset) -> Result<Vec<f64>> {
    let m = encode(data, &art.space)?;
    let mut out = Vec::new();
    for (k, model) in art.responses.iter().enumerate() {
        let y = data.reals(model.response())?;
        let (obs, pred): (Vec<f64>, Vec<f64>) = (0..data.n_rows())
            .filter_map(|i| {
                let yi = y[i]?;
                let p = art.predict_encoded(&m.row(i))[k];
                p.is_finite().then_some((yi, p))
            })
            .unzip();
        out.push(r_squared(&obs, &pred));
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn fit(
    json_mode: bool,
    data: &Path,
    responses: &[String],
    model: ModelChoice,
    out: &Path,
    informative_missing: bool,
    holdout: Option<usize>,
    seed: u64,
    stages: Option<usize>,
) -> Result<()> {
    let data = load_csv(data, None)?;
    for r in responses {
        data.column(r)?;
    }
    let names: Vec<&str> = responses.iter().map(String::as_str).collect();
    let mut space = infer_factor_space(&data.without(&names))?;
    let mut data = data;
    let spec = match model {
        ModelChoice::Ls => {
            let policy = MissingPolicy { informative_missing };
            (data, space) = apply_missing_policy(&data, &space, policy)?;
            ModelSpec::LeastSquares
        }
        ModelChoice::Boosted => {
            let defaults = BoostConfig::default();
            ModelSpec::Boosted(BoostConfig {
                stages: stages.unwrap_or(defaults.stages),
                seed,
                informative_missing,
                ..defaults
            })
        }
    };
    let (train, valid) = match holdout {
        Some(h) => {
            let (t, v) = holdout_split(&data, h, seed)?;
            (t, Some(v))
        }
        None => (data, None),
    };
    let art = fit_artifact(&train, &space, &names, spec, FitOptions::default())?;
    art.save(out)?;
    let r2_train = r_squared_by_response(&art, &train)?;
    let r2_valid = valid.as_ref().map(|v| r_squared_by_response(&art, v)).transpose()?;
    emit(
        json_mode,
        json!({
            "v": 1,
            "command": "fit",
            "out": out,
            "responses": responses,
            "factors": art.space.factors.iter().map(|f| &f.name).collect::<Vec<_>>(),
            "metric": art.extrapolation.kind(),
            "threshold": art.extrapolation.threshold(),
            "train_rows": train.n_rows(),
            "r2_train": r2_train,
            "r2_validation": r2_valid,
        }),
        || {
            let mut s = format!(
                "wrote {} ({} factors, {:?} threshold {:.4})",
                out.display(),
                art.space.len(),
                art.extrapolation.kind(),
                art.extrapolation.threshold()
            );
            for (i, r) in responses.iter().enumerate() {
                s += &format!("\n{r}: R² train {:.3}", r2_train[i]);
                if let Some(v) = &r2_valid {
                    s += &format!(", validation {:.3}", v[i]);
                }
            }
            s
        },
    );
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum GoalsFile {
    List(Vec<Goal>),
    Wrapped { goals: Vec<Goal> },
}

#[derive(Serialize)]
struct OptimizeOutput {
    v: u32,
    mode: Mode,
    factors: Vec<String>,
    responses: Vec<String>,
    #[serde(flatten)]
    report: OptimumReport,
    predictions: Vec<f64>,
    extrapolated: bool,
    diagnostics: Vec<String>,
}

fn optimize(
    json_mode: bool,
    model: &Path,
    mode: Mode,
    goals: &Path,
    ga: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
) -> Result<()> {
    let art = Arc::new(ModelArtifact::load(model)?);
    let goals = match read_json::<GoalsFile>(goals)? {
        GoalsFile::List(g) | GoalsFile::Wrapped { goals: g } => g,
    };
    let mut config: GaConfig = match ga {
        Some(p) => read_json(p)?,
        None => GaConfig::default(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    let mut state = init_state(Arc::clone(&art), goals, mode)?;
    let report = state.optimize_desirability(&config)?;
    let output = OptimizeOutput {
        v: 1,
        mode,
        factors: art.space.factors.iter().map(|f| f.name.clone()).collect(),
        responses: art.responses.iter().map(|r| r.response().to_string()).collect(),
        predictions: art.predict_encoded(&art.space.encode_point(&report.settings)),
        extrapolated: art.extrapolation.status(&art.space.encode_point(&report.settings))?.extrapolated,
        diagnostics: state.diagnostics().to_vec(),
        report,
    };
    write_json(out, &output)?;
    emit(
        json_mode,
        json!({
            "v": 1,
            "command": "optimize",
            "out": out,
            "desirability": output.report.desirability,
            "feasible": output.report.feasible,
            "metric": output.report.metric,
            "threshold": output.report.threshold,
            "extrapolated": output.extrapolated,
            "generations": output.report.generations,
        }),
        || {
            let settings: Vec<String> = output
                .report
                .settings
                .iter()
                .enumerate()
                .map(|(i, v)| format!("{}={}", output.factors[i], art.space.describe(i, *v)))
                .collect();
            format!(
                "desirability {:.4} after {} generations, {}; wrote {}\n{}",
                output.report.desirability,
                output.report.generations,
                if output.extrapolated { "extrapolated" } else { "not extrapolated" },
                out.display(),
                settings.join(" ")
            )
        },
    );
    Ok(())
}

fn write_study(dir: &Path, result: &StudyResult) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let csv = fs::File::create(dir.join("results.csv")).with_context(|| format!("writing {}", dir.display()))?;
    result.write_csv(std::io::BufWriter::new(csv))?;
    write_json(&dir.join("summary.json"), &result.summary)?;
    fs::write(dir.join("tpr.svg"), svg::rate_plot(&result.summary))?;
    Ok(())
}

fn study_line(result: &StudyResult) -> serde_json::Value {
    json!({
        "variant": result.summary.scenario.variant,
        "fpr": result.summary.fpr.rate,
        "fresh_fpr": result.summary.fresh_fpr.rate,
        "top_tpr": result.top_tpr(),
        "training_t2_constant": result.summary.training_t2_constant,
    })
}

fn study_text(result: &StudyResult) -> String {
    let s = &result.summary;
    let top = result.top_tpr().map_or("n/a".to_string(), |t| format!("{t:.3}"));
    let mut line = format!(
        "{:?}: FPR {:.3} [{:.3}, {:.3}], fresh FPR {:.3}, TPR at top rank {top}",
        s.scenario.variant, s.fpr.rate, s.fpr.ci.0, s.fpr.ci.1, s.fresh_fpr.rate
    );
    if let Some(c) = s.training_t2_constant {
        line += &format!(", training T² constant at {c:.4}");
    }
    line
}

fn simulate(json_mode: bool, scenario: &Path, out: &Path, variant: Option<VariantArg>, compare: bool) -> Result<()> {
    let mut scenario: SimulationScenario = read_json(scenario)?;
    if let Some(v) = variant {
        scenario.variant = v.into();
    }
    scenario.validate()?;
    if !compare {
        let result = run_study(&scenario)?;
        write_study(out, &result)?;
        let mut line = study_line(&result);
        line["v"] = 1.into();
        line["command"] = "simulate".into();
        line["out"] = json!(out);
        emit(json_mode, line, || format!("{}\nwrote {}", study_text(&result), out.display()));
        return Ok(());
    }
    let mut lines = Vec::new();
    let mut texts = Vec::new();
    for (v, name) in [(MetricVariant::Regularized, "regularized"), (MetricVariant::PseudoInverse, "pseudo_inverse")] {
        let s = SimulationScenario { variant: v, ..scenario };
        let result = run_study(&s)?;
        write_study(&out.join(name), &result)?;
        lines.push(study_line(&result));
        texts.push(study_text(&result));
    }
    let comparison = json!({"v": 1, "scenario": scenario, "variants": lines});
    write_json(&out.join("comparison.json"), &comparison)?;
    emit(
        json_mode,
        json!({"v": 1, "command": "simulate", "out": out, "variants": comparison["variants"]}),
        || format!("{}\nwrote {}", texts.join("\n"), out.display()),
    );
    Ok(())
}

async fn serve(json_mode: bool, data_dir: PathBuf, host: &str, port: u16, idle_timeout: u64) -> Result<()> {
    if !data_dir.is_dir() {
        bail!("data directory {} does not exist", data_dir.display());
    }
    let addr: SocketAddr = tokio::net::lookup_host((host, port))
        .await
        .with_context(|| format!("resolving {host}"))?
        .next()
        .with_context(|| format!("no address for {host}"))?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    let local = listener.local_addr()?;
    emit(
        json_mode,
        json!({"v": 1, "command": "serve", "event": "listening", "addr": local.to_string()}),
        || format!("listening on http://{local}"),
    );
    let config = ServiceConfig {
        data_dir,
        idle_timeout: Duration::from_secs(idle_timeout),
    };
    profiler_service::serve(listener, AppState::new(config), async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await?;
    emit(json_mode, json!({"v": 1, "command": "serve", "event": "stopped"}), || "stopped".to_string());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit {
            data,
            response,
            model,
            out,
            informative_missing,
            holdout,
            seed,
            stages,
        } => fit(cli.json, &data, &response, model, &out, informative_missing, holdout, seed, stages),
        Command::Optimize {
            model,
            mode,
            goals,
            ga,
            seed,
            out,
        } => optimize(cli.json, &model, mode.into(), &goals, ga.as_deref(), seed, &out),
        Command::Simulate {
            scenario,
            out,
            variant,
            compare,
        } => simulate(cli.json, &scenario, &out, variant, compare),
        Command::Serve {
            data_dir,
            host,
            port,
            idle_timeout,
        } => {
            tracing_subscriber::fmt()
                .with_env_filter(
                    tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
                )
                .with_writer(std::io::stderr)
                .init();
            tokio::runtime::Runtime::new()?.block_on(serve(cli.json, data_dir, &host, port, idle_timeout))
        }
    }
}
