//! The `posthoc` command line. Every subcommand writes one JSON [`Report`] to
//! standard output and exits with 0 on success, 1 on validation errors and 2
//! on file-format errors.

pub mod json;
pub mod report;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

pub use report::{open_store, report_all, store_report, Conventions, Report, ENGINE_VERSION};

use crate::calibrate::{apply_temperature, fit_temperature, FitOptions};
use crate::diagnostics::{curves, detect_reversal, CurvePair};
use crate::error::{Error, Result};
use crate::metrics::{clean_error_metric, error_metric, loss_metric, MetricKind};
use crate::selection::{
    hybrid_select, naive_base, naive_swa_ens_ts, naive_swa_ts, posthoc_select_swa_ens_ts, posthoc_select_swa_ts,
};
use crate::store::{load_run_checkpoints, read_eval_table, write_checkpoint, write_eval_table, EvalTable};
use crate::synth::{
    render_decision_surface_batch, run_ensemble_experiment_with, Bounds, ExperimentOptions, Mlp, MlpConfig,
    SynthData,
};
use crate::transforms::{ensemble_logits, swa_mean, PosthocContext, TransformKind};

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "POSTHOC_THREADS";

#[derive(Debug, Parser)]
#[command(name = "posthoc", version, about = "Post-hoc transforms, reversal diagnostics and checkpoint selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a temperature on a validation eval bundle.
    FitTemp(FitTempArgs),
    /// Divide the logits of an eval bundle by a temperature.
    ApplyTemp {
        input: PathBuf,
        #[arg(long)]
        tau: f64,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Average temperature-scaled logits of several eval bundles.
    Ensemble {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Comma-separated member temperatures (default: all 1).
        #[arg(long, value_delimiter = ',')]
        temps: Option<Vec<f64>>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Average the checkpoints of a run directory up to an index.
    Swa {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        upto: f64,
        /// Output stem; writes `<stem>.json` and `<stem>.f32`.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Base and post-hoc metric curves of a store.
    Curves {
        #[command(flatten)]
        store: StoreArgs,
        #[arg(long)]
        transform: TransformKind,
        #[arg(long, default_value = "error")]
        metric: MetricKind,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Find post-hoc reversal witnesses in a curves document.
    DetectReversal { curves: PathBuf },
    /// Select checkpoints with a naive, post-hoc or hybrid strategy.
    Select {
        #[command(flatten)]
        store: StoreArgs,
        #[arg(long, value_enum)]
        strategy: StrategyArg,
        #[arg(long, default_value = "loss")]
        metric: MetricKind,
        /// Transform reported for naive selection (default: swa-ens-ts with several runs, else swa-ts).
        #[arg(long, value_enum)]
        report_as: Option<NaiveTarget>,
    },
    /// Synthetic spirals experiment.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Curves, reversal reports and selection comparison for a whole store.
    Report {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "error,loss")]
        metric: Vec<MetricKind>,
        #[arg(long, default_value = "test")]
        split: String,
    },
}

#[derive(Debug, Args)]
struct FitTempArgs {
    val: PathBuf,
    #[arg(long, default_value_t = FitOptions::default().beta_min)]
    beta_min: f64,
    #[arg(long, default_value_t = FitOptions::default().beta_max)]
    beta_max: f64,
}

#[derive(Debug, Args)]
struct StoreArgs {
    #[arg(long)]
    store: PathBuf,
    /// Comma-separated run ids (default: all runs).
    #[arg(long, value_delimiter = ',')]
    runs: Option<Vec<u32>>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StrategyArg {
    Naive,
    SwaTs,
    SwaEnsTs,
    Hybrid,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NaiveTarget {
    Base,
    SwaTs,
    SwaEnsTs,
}

#[derive(Debug, Subcommand)]
enum SynthCommand {
    /// Train an ensemble of MLPs on noisy spirals and write the run store.
    Run(SynthRunArgs),
    /// Render decision surfaces of stored models and their ensemble as PGM files.
    Surface {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Runs to draw (default: the first two).
        #[arg(long, value_delimiter = ',')]
        runs: Option<Vec<u32>>,
        /// Checkpoint index (default: the last index that has weights).
        #[arg(long)]
        index: Option<f64>,
        #[arg(long, default_value_t = 256)]
        resolution: usize,
        /// Half-width of the square window around the origin.
        #[arg(long, default_value_t = 1.25)]
        half: f64,
    },
}

#[derive(Debug, Args)]
struct SynthRunArgs {
    #[arg(long, default_value_t = 16)]
    models: usize,
    #[arg(long, default_value_t = 1000)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 512)]
    hidden: usize,
    #[arg(long, default_value_t = 4)]
    depth: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 10.0)]
    interval: f64,
    #[arg(long, default_value_t = 0.5)]
    subsample: f64,
    #[arg(long, default_value_t = 0.2)]
    noise: f64,
    #[arg(long, default_value_t = 1000)]
    n_train: usize,
    #[arg(long, default_value_t = 500)]
    n_eval: usize,
    /// Keep the weights of every checkpoint, not just the last one.
    #[arg(long)]
    keep_checkpoints: bool,
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_table(path: &Path) -> Result<EvalTable> {
    read_eval_table(&read_file(path)?).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

/// Runs the command line in `argv` (including the program name) and returns the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    match execute(cli.command).and_then(|r| json::to_string_pretty(&r)) {
        Ok(doc) => {
            let _ = writeln!(std::io::stdout().lock(), "{doc}");
            0
        }
        Err(e) => {
            eprintln!("posthoc: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        // A pool that is already built keeps its size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn execute(command: Command) -> Result<Report> {
    match command {
        Command::FitTemp(a) => {
            let t = read_table(&a.val)?;
            let opts = FitOptions { beta_min: a.beta_min, beta_max: a.beta_max, ..FitOptions::default() };
            let fit = fit_temperature(&t, &opts)?;
            Report::new("fit-temp", json!({"val": path_str(&a.val), "options": opts}), fit)
        }
        Command::ApplyTemp { input, tau, out } => {
            let t = read_table(&input)?;
            let scaled = apply_temperature(&t, tau)?;
            write_file(&out, &write_eval_table(&scaled)?)?;
            let result = json!({
                "output": path_str(&out),
                "n": t.n(),
                "c": t.c(),
                "error_before": error_metric(&t).value,
                "error_after": error_metric(&scaled).value,
                "loss_before": loss_metric(&t).value,
                "loss_after": loss_metric(&scaled).value,
            });
            Report::new("apply-temp", json!({"input": path_str(&input), "tau": tau}), result)
        }
        Command::Ensemble { inputs, temps, out } => {
            let tables = inputs.iter().map(|p| read_table(p)).collect::<Result<Vec<_>>>()?;
            let temps = temps.unwrap_or_else(|| vec![1.0; tables.len()]);
            let refs: Vec<&EvalTable> = tables.iter().collect();
            let ens = ensemble_logits(&refs, &temps)?;
            write_file(&out, &write_eval_table(&ens)?)?;
            let members: Vec<Value> = tables
                .iter()
                .map(|t| json!({"error": error_metric(t).value, "loss": loss_metric(t).value}))
                .collect();
            let result = json!({
                "output": path_str(&out),
                "members": members,
                "error": error_metric(&ens).value,
                "loss": loss_metric(&ens).value,
            });
            let inputs: Vec<String> = inputs.iter().map(|p| path_str(p)).collect();
            Report::new("ensemble", json!({"inputs": inputs, "temps": temps}), result)
        }
        Command::Swa { run, upto, out } => {
            let all = load_run_checkpoints(&run)?;
            let prefix: Vec<_> = all.iter().filter(|(i, _)| *i <= upto).collect();
            if prefix.is_empty() {
                return Err(Error::validation(format!(
                    "empty SWA prefix: no checkpoint in {} has index <= {upto}",
                    run.display()
                )));
            }
            let avg = swa_mean(&prefix.iter().map(|(_, c)| c).collect::<Vec<_>>())?;
            let (manifest, blob) = write_checkpoint(&avg)?;
            let mpath = out.with_extension("json");
            let bpath = out.with_extension("f32");
            write_file(&mpath, &manifest)?;
            write_file(&bpath, &blob)?;
            let indices: Vec<f64> = prefix.iter().map(|(i, _)| *i).collect();
            let result = json!({"count": indices.len(), "indices": indices, "manifest": path_str(&mpath), "blob": path_str(&bpath)});
            Report::new("swa", json!({"run": path_str(&run), "upto": upto}), result)
        }
        Command::Curves { store, transform, metric, split } => {
            let (rs, ev) = open_store(&store.store)?;
            let runs = store.runs.clone().unwrap_or_else(|| rs.run_ids());
            let ctx = PosthocContext::new(&rs, ev.as_deref(), FitOptions::default()).with_splits(&[&split]);
            let pair = curves(&ctx, transform, &runs, &split, metric)?;
            let inputs = json!({"store": path_str(&store.store), "runs": runs, "transform": transform, "metric": metric, "split": split});
            Report::new("curves", inputs, pair)
        }
        Command::DetectReversal { curves: path } => {
            let pair = read_curves(&path)?;
            let rep = detect_reversal(&pair)?;
            Report::new("detect-reversal", json!({"curves": path_str(&path)}), rep)
        }
        Command::Select { store, strategy, metric, report_as } => {
            let (rs, ev) = open_store(&store.store)?;
            let runs = store.runs.clone().unwrap_or_else(|| rs.run_ids());
            let first = *runs.first().ok_or_else(|| Error::validation("no runs selected"))?;
            let ctx = PosthocContext::new(&rs, ev.as_deref(), FitOptions::default());
            let target = report_as.unwrap_or(if runs.len() > 1 { NaiveTarget::SwaEnsTs } else { NaiveTarget::SwaTs });
            let rep = match (strategy, target) {
                (StrategyArg::Naive, NaiveTarget::Base) => naive_base(&ctx, first, metric)?,
                (StrategyArg::Naive, NaiveTarget::SwaTs) => naive_swa_ts(&ctx, first, metric)?,
                (StrategyArg::Naive, NaiveTarget::SwaEnsTs) => naive_swa_ens_ts(&ctx, &runs, metric)?,
                (StrategyArg::SwaTs, _) => posthoc_select_swa_ts(&ctx, first, metric)?,
                (StrategyArg::SwaEnsTs, _) => posthoc_select_swa_ens_ts(&ctx, &runs, metric)?,
                (StrategyArg::Hybrid, _) => hybrid_select(&ctx, &runs, metric)?,
            };
            let inputs = json!({
                "store": path_str(&store.store),
                "runs": runs,
                "strategy": strategy.to_possible_value().map(|v| v.get_name().to_string()),
                "metric": metric,
            });
            Report::new("select", inputs, rep)
        }
        Command::Synth(SynthCommand::Run(a)) => synth_run(a),
        Command::Synth(SynthCommand::Surface { store, out, runs, index, resolution, half }) => {
            synth_surface(&store, &out, runs, index, resolution, half)
        }
        Command::Report { store, metric, split } => report_all(&store, &metric, &split),
    }
}

/// Accepts either a bare curves object or a `curves` report wrapping one.
fn read_curves(path: &Path) -> Result<CurvePair> {
    let v: Value = serde_json::from_slice(&read_file(path)?)?;
    let body = match v.get("result") {
        Some(r) if v.get("command").is_some() => r.clone(),
        _ => v,
    };
    let mut body = body;
    if let Some(obj) = body.as_object_mut() {
        obj.entry("base_convention").or_insert(json!("latest_checkpoint"));
    }
    let pair: CurvePair = serde_json::from_value(body)?;
    pair.validate()?;
    Ok(pair)
}

fn synth_run(a: SynthRunArgs) -> Result<Report> {
    let cfg = MlpConfig {
        depth: a.depth,
        hidden: a.hidden,
        classes: 2,
        lr: a.lr,
        epochs: a.epochs,
        batch: a.batch,
        subsample: a.subsample,
        checkpoint_interval: a.interval,
        seed: a.seed,
    };
    cfg.validate()?;
    let data = SynthData::generate(a.n_train, a.n_eval, a.noise, a.seed)?;
    let opts = ExperimentOptions { n_models: a.models, keep_checkpoints: a.keep_checkpoints };
    let exp = run_ensemble_experiment_with(&data, &cfg, &opts)?;
    exp.save(&a.out)?;

    let runs = exp.store.run_ids();
    let ctx = PosthocContext::new(&exp.store, None, FitOptions::default());
    let grid = exp.store.common_grid(&runs)?;
    let clean = &data.test.clean_labels;
    let (mut mean_err, mut mean_clean, mut ens_err, mut ens_clean) = (vec![], vec![], vec![], vec![]);
    for pos in 0..grid.len() {
        let (mut e, mut c) = (0.0, 0.0);
        for &r in &runs {
            let t = &exp.store.run(r).expect("listed run").entries()[pos].tables["test"];
            e += error_metric(t).value;
            c += clean_error_metric(t, clean)?.value;
        }
        mean_err.push(e / runs.len() as f64);
        mean_clean.push(c / runs.len() as f64);
        let members: Vec<(u32, usize)> = runs.iter().map(|&r| (r, pos)).collect();
        let ens = ctx.transform(TransformKind::Ens, &members)?;
        let t = ens.table("test")?;
        ens_err.push(error_metric(t).value);
        ens_clean.push(clean_error_metric(t, clean)?.value);
    }
    let result = json!({
        "out": path_str(&a.out),
        "runs": runs,
        "indices": grid,
        "mean_test_error": mean_err,
        "mean_test_clean_error": mean_clean,
        "ensemble_test_error": ens_err,
        "ensemble_test_clean_error": ens_clean,
    });
    Report::new("synth run", json!({"config": cfg, "models": a.models, "noise": a.noise}), result)
}

fn synth_surface(
    store_dir: &Path,
    out: &Path,
    runs: Option<Vec<u32>>,
    index: Option<f64>,
    resolution: usize,
    half: f64,
) -> Result<Report> {
    let (store, _) = open_store(store_dir)?;
    let runs = runs.unwrap_or_else(|| store.run_ids().into_iter().take(2).collect());
    if runs.is_empty() {
        return Err(Error::validation("no runs selected"));
    }
    let mut nets = Vec::with_capacity(runs.len());
    for &r in &runs {
        let run = store.require_run(r)?;
        let entry = match index {
            Some(i) => run
                .entries()
                .iter()
                .find(|e| e.index == i)
                .ok_or_else(|| Error::validation(format!("run {r} has no index {i}")))?,
            None => run
                .entries()
                .iter()
                .rev()
                .find(|e| e.checkpoint.is_some())
                .ok_or_else(|| Error::validation(format!("run {r} stores no weights")))?,
        };
        let ck = entry
            .checkpoint
            .as_ref()
            .ok_or_else(|| Error::validation(format!("run {r} index {} has no weights", entry.index)))?;
        nets.push((r, entry.index, Mlp::from_checkpoint(ck)?));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let bounds = Bounds::square(half);
    let classes = nets[0].2.layers.last().expect("non-empty").w.ncols();
    let logits_of = |net: &Mlp, pts: &[[f64; 2]]| {
        let x = ndarray::ArrayView2::from_shape((pts.len(), 2), pts.as_flattened()).expect("n x 2");
        net.forward(x)
    };
    let argmax_rows = |z: ndarray::Array2<f64>| -> Vec<u32> {
        z.rows().into_iter().map(|r| crate::metrics::argmax(r.as_slice().expect("contiguous")) as u32).collect()
    };
    let mut files = Vec::new();
    for (r, idx, net) in &nets {
        let grid = render_decision_surface_batch(|pts| Ok(argmax_rows(logits_of(net, pts))), bounds, resolution, classes)?;
        let path = out.join(format!("model-{r}.pgm"));
        write_file(&path, &grid.to_pgm())?;
        files.push(json!({"run": r, "index": idx, "path": path_str(&path)}));
    }
    let ens = render_decision_surface_batch(
        |pts| {
            let mut acc = logits_of(&nets[0].2, pts);
            for (_, _, net) in &nets[1..] {
                acc += &logits_of(net, pts);
            }
            Ok(argmax_rows(acc))
        },
        bounds,
        resolution,
        classes,
    )?;
    let path = out.join("ensemble.pgm");
    write_file(&path, &ens.to_pgm())?;
    let result = json!({"models": files, "ensemble": path_str(&path), "resolution": resolution});
    Report::new("synth surface", json!({"store": path_str(store_dir), "runs": runs, "half": half}), result)
}
