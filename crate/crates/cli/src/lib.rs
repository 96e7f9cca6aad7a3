//! The `graphpick` command line.
//!
//! Every command reads and writes only the paths named by its flags. Inputs
//! and settings are checked before anything is written, and every file is
//! written through a temporary sibling, so a failed command leaves no
//! partial output behind.
//!
//! Exit codes: 0 on success, 1 for bad flags, configs or input files, 2 for
//! failures while running.

mod config;

use std::collections::HashMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use graphpick::eval::{
    baseline_picks, pick_survey, pick_survey_with, read_picks_csv, read_probs_csv, results_from_rows,
    to_record_picks, tune_sta_lta, write_picks_csv, write_plot_csv, write_probs_csv, write_report, EvalReport,
    StaLta, StaLtaGrid, DEFAULT_TOLERANCE,
};
use graphpick::graph::{Dataset, DatasetMode, SurveyGraph};
use graphpick::model::Model;
use graphpick::survey::{
    generate_synthetic_survey, load_survey, preprocess, save_survey, Preprocessed, Survey, SurveyFormat, SynthSpec,
};
use graphpick::train::{train, TrainOutputs};
use graphpick::{Error, Result};

pub use config::{RawConfig, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "graphpick", version, about = "Graph-based seismic first-break picking")]
struct Cli {
    /// Repeat for more log output on stderr.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic labeled survey.
    Synth(SynthArgs),
    /// Build the midpoint k-NN graph of a survey.
    BuildGraph(BuildGraphArgs),
    /// Train a picker and write its best checkpoint.
    Train(TrainArgs),
    /// Pick first breaks with a trained checkpoint.
    Pick(PickArgs),
    /// Score a picks file against a labeled survey.
    Eval(EvalArgs),
    /// Pick first breaks with an STA/LTA trigger.
    Baseline(BaselineArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    traces: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Standard deviation of the additive Gaussian noise.
    #[arg(long)]
    noise: Option<f64>,
    /// Largest surface-consistent delay per shot and per receiver, seconds.
    #[arg(long)]
    statics: Option<f64>,
    #[arg(long)]
    receivers: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    /// Uniform position jitter in meters.
    #[arg(long)]
    jitter: Option<f64>,
}

#[derive(Debug, Args)]
struct BuildGraphArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = config::DEFAULT_K)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct LmoArgs {
    /// Moveout velocity of the analysis window, m/s.
    #[arg(long)]
    lmo_velocity: Option<f64>,
    /// Bulk shift of the window start, seconds.
    #[arg(long, allow_hyphen_values = true)]
    lmo_t0: Option<f64>,
    /// Window length in samples.
    #[arg(long)]
    window: Option<usize>,
}

impl LmoArgs {
    fn apply(&self, raw: &mut RawConfig) {
        raw.set("lmo_velocity", self.lmo_velocity);
        raw.set("lmo_t0", self.lmo_t0);
        raw.set("window", self.window);
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Graph built by `build-graph` over the same survey; built on the fly
    /// when absent.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Labeled survey for validation; the training survey when absent.
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    /// JSON-lines metrics, one object per epoch.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Flat TOML or JSON file of training and model settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    init_seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    tol: Option<usize>,
    #[arg(long)]
    target_accuracy: Option<f64>,
    #[command(flatten)]
    lmo: LmoArgs,
}

#[derive(Debug, Args)]
struct PickArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Per-trace probabilities on the raw record.
    #[arg(long)]
    probs_out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    picks: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tol: usize,
    /// Report JSON; printed to stdout when absent.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Per-trace residual CSV.
    #[arg(long)]
    residuals: Option<PathBuf>,
    /// Probabilities written by `pick --probs-out`.
    #[arg(long)]
    probs: Option<PathBuf>,
    /// Probability sections ordered by shot, for plotting.
    #[arg(long, requires = "probs")]
    plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BaselineArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, conflicts_with = "tune_on")]
    sta: Option<usize>,
    #[arg(long, conflicts_with = "tune_on")]
    lta: Option<usize>,
    #[arg(long, conflicts_with = "tune_on")]
    threshold: Option<f64>,
    /// Labeled survey to grid-search the trigger settings on.
    #[arg(long)]
    tune_on: Option<PathBuf>,
    /// Tolerance the grid search scores with.
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tol: usize,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    lmo: LmoArgs,
}

/// Runs the command line in `argv` (program name first) and returns the
/// process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_env("GRAPHPICK_LOG").try_init();
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::BuildGraph(a) => build_graph(a),
        Command::Train(a) => train_cmd(a),
        Command::Pick(a) => pick(a),
        Command::Eval(a) => eval(a),
        Command::Baseline(a) => baseline(a),
    }
}

/// Output paths must name a file in an existing directory.
fn check_outputs<'a>(paths: impl IntoIterator<Item = &'a Path>) -> Result<()> {
    for p in paths {
        if p.is_dir() {
            return Err(Error::Validation(format!("output {} is a directory", p.display())));
        }
        let parent = p.parent().filter(|d| !d.as_os_str().is_empty());
        if parent.is_some_and(|d| !d.is_dir()) {
            return Err(Error::Validation(format!("directory of output {} does not exist", p.display())));
        }
    }
    Ok(())
}

fn read_survey(path: &Path) -> Result<Survey> {
    if !path.is_file() {
        return Err(Error::Validation(format!("survey {} does not exist", path.display())));
    }
    load_survey(path, SurveyFormat::from_path(path))
}

fn load_graph(path: &Path, survey: &Survey, k: usize) -> Result<SurveyGraph> {
    let g = SurveyGraph::load(path)?;
    g.check_survey(survey)?;
    if g.k() != k {
        return Err(Error::Data(format!("graph {} has k = {}, expected {k}", path.display(), g.k())));
    }
    Ok(g)
}

fn synth(a: SynthArgs) -> Result<()> {
    check_outputs([a.out.as_path()])?;
    if a.traces == 0 {
        return Err(Error::Validation("--traces must be at least 1".into()));
    }
    let mut spec = SynthSpec::with_traces(a.traces);
    if let Some(r) = a.receivers {
        if r == 0 {
            return Err(Error::Validation("--receivers must be at least 1".into()));
        }
        spec.geometry.n_receivers = r;
        spec.geometry.n_shots = a.traces.div_ceil(r);
    }
    if let Some(n) = a.noise {
        spec.noise_sigma = n;
    }
    if let Some(s) = a.statics {
        spec.statics_max = s;
    }
    if let Some(n) = a.samples {
        spec.n_samples = n;
    }
    if let Some(j) = a.jitter {
        spec.geometry.jitter = j;
    }
    let survey = generate_synthetic_survey(&spec, a.seed)?;
    save_survey(&survey, &a.out, SurveyFormat::from_path(&a.out))?;
    println!("wrote {} traces to {}", survey.len(), a.out.display());
    Ok(())
}

fn build_graph(a: BuildGraphArgs) -> Result<()> {
    check_outputs([a.out.as_path()])?;
    let survey = read_survey(&a.input)?;
    let graph = SurveyGraph::build(&survey, a.k)?;
    graph.save(&a.out)?;
    println!("wrote {} nodes with k = {} to {}", graph.len(), a.k, a.out.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut raw = match &a.config {
        Some(p) => RawConfig::load(p)?,
        None => RawConfig::default(),
    };
    raw.set("k", a.k);
    raw.set("lambda", a.lambda);
    raw.set("seed", a.seed);
    raw.set("init_seed", a.init_seed);
    raw.set("epochs", a.epochs);
    raw.set("lr", a.lr);
    raw.set("batch_size", a.batch_size);
    raw.set("tolerance", a.tol);
    raw.set("target_accuracy", a.target_accuracy);
    a.lmo.apply(&mut raw);
    let rc = raw.resolve()?;
    let sidecar = graphpick::autodiff::sidecar_path(&a.checkpoint);
    check_outputs([a.checkpoint.as_path(), sidecar.as_path()].into_iter().chain(a.log.as_deref()))?;

    let k = rc.model.k();
    let pre = preprocess(&read_survey(&a.input)?, &rc.lmo)?;
    let graph = match &a.graph {
        Some(p) => load_graph(p, &pre.survey, k)?,
        None => SurveyGraph::build(&pre.survey, k)?,
    };
    let train_ds = Dataset::new(&pre.survey, &graph, DatasetMode::Train)?;
    let val = match &a.val {
        Some(p) => {
            let s = preprocess(&read_survey(p)?, &rc.lmo)?.survey;
            let g = SurveyGraph::build(&s, k)?;
            Some((s, g))
        }
        None => None,
    };
    let val_ds = val
        .as_ref()
        .map(|(s, g)| Dataset::new(s, g, DatasetMode::Train))
        .transpose()?;

    let model = Model::init(rc.model.clone(), rc.init_seed)?;
    let out = TrainOutputs {
        checkpoint: Some(&a.checkpoint),
        metrics_log: a.log.as_deref(),
        lmo: Some(rc.lmo),
    };
    let report = train(&train_ds, val_ds.as_ref(), model, &rc.train, &out)?;
    let best = &report.epochs[report.best_epoch - 1];
    println!(
        "trained {} epochs; best epoch {} with validation accuracy {:.4} at tol {}; checkpoint {}",
        report.epochs.len(),
        report.best_epoch,
        best.val_acc,
        rc.train.tolerance,
        a.checkpoint.display()
    );
    Ok(())
}

fn pick(a: PickArgs) -> Result<()> {
    check_outputs([a.out.as_path()].into_iter().chain(a.probs_out.as_deref()))?;
    if !a.checkpoint.is_file() {
        return Err(Error::Validation(format!("checkpoint {} does not exist", a.checkpoint.display())));
    }
    let (model, meta) = Model::load(&a.checkpoint)?;
    let lmo = meta
        .lmo
        .ok_or_else(|| Error::Checkpoint("checkpoint does not record its analysis window".into()))?;
    if lmo.window_len != model.config.signal_len() {
        return Err(Error::Checkpoint(format!(
            "window of {} samples does not fit a model over {} samples",
            lmo.window_len,
            model.config.signal_len()
        )));
    }
    let raw = read_survey(&a.input)?;
    let pre = preprocess(&raw, &lmo)?;
    let graph = match &a.graph {
        Some(p) => load_graph(p, &pre.survey, model.config.k())?,
        None => SurveyGraph::build(&pre.survey, model.config.k())?,
    };
    let window = match a.threads {
        Some(t) => pick_survey_with(&pre.survey, &graph, &model, t)?,
        None => pick_survey(&pre.survey, &graph, &model)?,
    };
    write_record_picks(&window, &raw, &pre, &a.out, a.probs_out.as_deref())
}

fn write_record_picks(
    window: &[graphpick::eval::PickResult],
    raw: &Survey,
    pre: &Preprocessed,
    out: &Path,
    probs_out: Option<&Path>,
) -> Result<()> {
    let picks = to_record_picks(window, raw, pre)?;
    write_picks_csv(out, &picks)?;
    if let Some(p) = probs_out {
        write_probs_csv(p, &picks)?;
    }
    let n_picked = picks.iter().filter(|r| r.is_picked()).count();
    println!("picked {n_picked} of {} traces into {}", picks.len(), out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let outputs = [a.report.as_deref(), a.residuals.as_deref(), a.plot.as_deref()];
    check_outputs(outputs.into_iter().flatten())?;
    if !a.picks.is_file() {
        return Err(Error::Validation(format!("picks file {} does not exist", a.picks.display())));
    }
    let labels = read_survey(&a.labels)?;
    let mut results = results_from_rows(&read_picks_csv(&a.picks)?, &labels)?;
    if let Some(p) = &a.probs {
        let mut probs: HashMap<u64, Vec<f32>> = read_probs_csv(p)?.into_iter().collect();
        for r in &mut results {
            let v = probs
                .remove(&r.trace_id)
                .ok_or_else(|| Error::Data(format!("{} has no row for trace {}", p.display(), r.trace_id)))?;
            if v.len() != r.probs.len() {
                return Err(Error::Data(format!(
                    "trace {} has {} probabilities for {} samples",
                    r.trace_id,
                    v.len(),
                    r.probs.len()
                )));
            }
            r.probs = v;
        }
    }
    let report = EvalReport::from_results(&results, a.tol)?;
    match &a.report {
        Some(p) => write_report(p, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report).map_err(|e| Error::Eval(e.to_string()))?),
    }
    if let Some(p) = &a.residuals {
        write_picks_csv(p, &results)?;
    }
    if let Some(p) = &a.plot {
        write_plot_csv(p, &labels, &results)?;
    }
    Ok(())
}

fn baseline(a: BaselineArgs) -> Result<()> {
    let mut raw_cfg = match &a.config {
        Some(p) => RawConfig::load(p)?,
        None => RawConfig::default(),
    };
    a.lmo.apply(&mut raw_cfg);
    let lmo = raw_cfg.resolve()?.lmo;
    check_outputs([a.out.as_path()])?;
    let params = match &a.tune_on {
        Some(p) => tune_sta_lta(&preprocess(&read_survey(p)?, &lmo)?.survey, &StaLtaGrid::default(), a.tol)?,
        None => {
            let d = StaLta::default();
            let p = StaLta {
                sta: a.sta.unwrap_or(d.sta),
                lta: a.lta.unwrap_or(d.lta),
                threshold: a.threshold.unwrap_or(d.threshold),
            };
            p.validate(lmo.window_len)?;
            p
        }
    };
    let raw = read_survey(&a.input)?;
    let pre = preprocess(&raw, &lmo)?;
    let window = baseline_picks(&pre.survey, &params)?;
    println!("sta {} lta {} threshold {}", params.sta, params.lta, params.threshold);
    write_record_picks(&window, &raw, &pre, &a.out, None)
}
