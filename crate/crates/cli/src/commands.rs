use std::collections::BTreeSet;
use std::fs;
use std::io::{BufReader, Write as _};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use memrl::baselines::{dp_oracle, FifoPolicy, GreedyPolicy, RandomPolicy};
use memrl::bridge::serve;
use memrl::env::EpisodeTrace;
use memrl::metrics::{comparison_table, frame_records, frame_results, MethodRow, VideoMetrics};
use memrl::ppo::{Checkpoint, GreedyPpoPolicy, IterationStats, TrainConfig, Trainer};
use memrl::tracker::{generate_video, ScriptedTable, SimParams, VideoFamily};
use memrl::{run_episode, Error, TrackingEnv, DEFAULT_CAPACITY};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::inputs::{
    open_tracker, resolve_capacity, resolve_inputs, Manifest, TrackerSpec, VideoInput, MANIFEST,
};

pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const FRAMES_FILE: &str = "frames.jsonl";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TABLE_FILE: &str = "table.txt";

/// Contents of a `--config` file. Missing fields take their defaults and
/// the fully resolved values are written into every run directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub sim: SimParams,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(Error::from)
            .with_context(|| format!("invalid config {}", path.display()))?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.sim.validate()?;
        Ok(())
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn to_jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&item).expect("record serializes"));
        out.push('\n');
    }
    out
}

fn pretty<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("record serializes") + "\n"
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()?)
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

// ---------------------------------------------------------------- gen

pub fn cmd_gen(
    family: VideoFamily,
    count: usize,
    length: usize,
    seed: u64,
    out: &Path,
) -> Result<Manifest> {
    let mut videos = Vec::with_capacity(count);
    for i in 0..count as u64 {
        let video = generate_video(family, length, seed + i)?;
        let name = format!("{}.json", video.video_id);
        write_file(&out.join(&name), video.to_json())?;
        videos.push(name);
    }
    let manifest = Manifest {
        family: family.name().into(),
        length,
        seed,
        videos,
    };
    write_file(&out.join(MANIFEST), pretty(&manifest))?;
    Ok(manifest)
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub inputs: Vec<PathBuf>,
    pub tracker: TrackerSpec,
    pub config: RunConfig,
    /// Explicit `--capacity`; otherwise the table's or the config's.
    pub capacity: Option<usize>,
    pub out: PathBuf,
    pub jobs: usize,
    /// Continue from checkpoints already in `out`.
    pub resume: bool,
    pub timeout: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ResolvedTrain {
    command: String,
    tracker: String,
    inputs: Vec<String>,
    videos: Vec<String>,
    config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub video_id: String,
    pub iterations: usize,
    /// False when the time budget stopped training early.
    pub completed: bool,
    pub greedy_return: f64,
    pub greedy_quality: f64,
    pub fifo_quality: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub records: Vec<TrainRecord>,
    pub table: String,
}

fn display_paths(paths: &[PathBuf]) -> Vec<String> {
    paths.iter().map(|p| p.display().to_string()).collect()
}

pub fn cmd_train(opts: &TrainOptions) -> Result<TrainReport> {
    let inputs = resolve_inputs(&opts.tracker, &opts.inputs)?;
    let mut config = opts.config.clone();
    config.train.capacity = resolve_capacity(&inputs, opts.capacity, config.train.capacity)?;
    config.validate()?;
    let resolved = ResolvedTrain {
        command: "train".into(),
        tracker: opts.tracker.to_string(),
        inputs: display_paths(&opts.inputs),
        videos: inputs.iter().map(|v| v.video_id.clone()).collect(),
        config: config.clone(),
    };
    write_file(&opts.out.join(CONFIG_FILE), pretty(&resolved))?;

    let results: Vec<Result<TrainRecord>> = pool(opts.jobs)?.install(|| {
        inputs
            .par_iter()
            .map(|input| {
                train_one(opts, &config, input)
                    .with_context(|| format!("training on {:?}", input.video_id))
            })
            .collect()
    });
    let records = results.into_iter().collect::<Result<Vec<_>>>()?;
    write_file(&opts.out.join("summary.jsonl"), to_jsonl(&records))?;
    let table = quality_table(&[
        ("fifo", mean(records.iter().map(|r| r.fifo_quality))),
        ("ppo", mean(records.iter().map(|r| r.greedy_quality))),
    ]);
    write_file(&opts.out.join(TABLE_FILE), &table)?;
    Ok(TrainReport { records, table })
}

/// Quality-only table for training summaries; the first row is the baseline.
fn quality_table(rows: &[(&str, f64)]) -> String {
    let width = rows
        .iter()
        .map(|r| r.0.len())
        .max()
        .unwrap_or(0)
        .max("Method".len());
    let base = rows[0].1;
    let mut out = format!("{:<width$}  Quality [%]\n", "Method");
    for (name, q) in rows {
        let delta = format!("{:+.2}", (q - base) * 100.0).replace("-0.00", "+0.00");
        out.push_str(&format!("{name:<width$}  {delta} {:.2}\n", q * 100.0));
    }
    out
}

fn train_one(opts: &TrainOptions, config: &RunConfig, input: &VideoInput) -> Result<TrainRecord> {
    let capacity = config.train.capacity;
    let tracker = open_tracker(&opts.tracker, input, capacity, &config.sim, opts.timeout)?;
    let mut env = TrackingEnv::new(tracker, capacity, config.train.gamma)?;
    let dir = opts.out.join(&input.video_id);
    let ckpt_path = dir.join(CHECKPOINT_FILE);

    let mut trainer = if opts.resume && ckpt_path.exists() {
        let text = fs::read_to_string(&ckpt_path)?;
        let ckpt = Checkpoint::from_json(&text)
            .with_context(|| format!("loading {}", ckpt_path.display()))?;
        if ckpt.video_id != input.video_id || ckpt.video_length != input.length {
            bail!(Error::Config(format!(
                "{} belongs to {:?} (T={}), not {:?} (T={})",
                ckpt_path.display(),
                ckpt.video_id,
                ckpt.video_length,
                input.video_id,
                input.length
            )));
        }
        let mut trainer = ckpt.into_trainer();
        let mut expected = config.train.clone();
        expected.iterations = trainer.config.iterations;
        expected.time_budget_secs = trainer.config.time_budget_secs;
        if expected != trainer.config {
            bail!(Error::Config(format!(
                "{} was trained with a different config; only iterations and time_budget_secs may change on resume",
                ckpt_path.display()
            )));
        }
        trainer.config = config.train.clone();
        trainer
    } else {
        Trainer::new(config.train.clone(), input.length)?
    };

    let completed = trainer.train(&mut env, |_| {})?;
    let ckpt = Checkpoint::from_trainer(&trainer, input.video_id.clone());
    write_file(&ckpt_path, ckpt.to_json())?;
    write_file(
        &dir.join(HISTORY_FILE),
        to_jsonl::<&IterationStats>(&trainer.history),
    )?;

    let greedy = trainer.greedy_episode(&mut env)?;
    write_episode(&dir, &greedy)?;
    let fifo = run_episode(&mut env, &mut FifoPolicy)?;
    Ok(TrainRecord {
        video_id: input.video_id.clone(),
        iterations: trainer.iteration,
        completed,
        greedy_return: greedy.final_return,
        greedy_quality: VideoMetrics::from_trace(&greedy)?.quality,
        fifo_quality: VideoMetrics::from_trace(&fifo)?.quality,
    })
}

fn write_episode(dir: &Path, trace: &EpisodeTrace) -> Result<()> {
    write_file(
        &dir.join(FRAMES_FILE),
        to_jsonl(frame_records(&frame_results(trace))),
    )?;
    write_file(&dir.join(TRACE_FILE), to_jsonl(&trace.steps))
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Fifo,
    Random,
    Greedy,
    Oracle,
    /// A training run directory (one checkpoint per video) or one checkpoint file.
    Checkpoint(PathBuf),
}

impl FromStr for Method {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "fifo" => Method::Fifo,
            "random" => Method::Random,
            "greedy" => Method::Greedy,
            "oracle" => Method::Oracle,
            path => Method::Checkpoint(path.into()),
        })
    }
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Fifo => "fifo".into(),
            Method::Random => "random".into(),
            Method::Greedy => "greedy".into(),
            Method::Oracle => "oracle".into(),
            Method::Checkpoint(_) => "ppo".into(),
        }
    }

    fn describe(&self) -> String {
        match self {
            Method::Checkpoint(p) => p.display().to_string(),
            other => other.label(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub method: Method,
    pub inputs: Vec<PathBuf>,
    pub tracker: TrackerSpec,
    pub sim: SimParams,
    pub capacity: Option<usize>,
    pub gamma: f64,
    pub seed: u64,
    pub budget: usize,
    /// Row name in tables; defaults to the method's label.
    pub label: Option<String>,
    pub out: PathBuf,
    pub jobs: usize,
    pub timeout: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ResolvedEval {
    command: String,
    method: String,
    label: String,
    tracker: String,
    inputs: Vec<String>,
    capacity: usize,
    gamma: f64,
    seed: u64,
    budget: usize,
    sim: SimParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skip {
    pub video_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsLine {
    pub method: String,
    #[serde(flatten)]
    pub metrics: VideoMetrics,
    #[serde(rename = "return")]
    pub episode_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub method: String,
    pub videos: usize,
    pub quality: f64,
    pub accuracy: f64,
    pub robustness: f64,
    pub mean_return: f64,
    pub skipped: Vec<Skip>,
}

impl EvalSummary {
    pub fn row(&self) -> MethodRow {
        MethodRow {
            name: self.method.clone(),
            quality: self.quality,
            accuracy: self.accuracy,
            robustness: self.robustness,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub lines: Vec<MetricsLine>,
    pub summary: EvalSummary,
    pub table: String,
}

enum Outcome {
    Done(MetricsLine, EpisodeTrace),
    Skipped(Skip),
}

pub fn cmd_eval(opts: &EvalOptions) -> Result<EvalReport> {
    memrl::env::validate_gamma(opts.gamma)?;
    opts.sim.validate()?;
    let inputs = resolve_inputs(&opts.tracker, &opts.inputs)?;
    let capacity = resolve_capacity(&inputs, opts.capacity, DEFAULT_CAPACITY)?;
    let label = opts.label.clone().unwrap_or_else(|| opts.method.label());
    if matches!(opts.method, Method::Greedy | Method::Oracle)
        && matches!(opts.tracker, TrackerSpec::Bridge(_))
    {
        bail!(Error::Unsupported(format!(
            "{} needs counterfactual queries, which the bridge does not offer",
            opts.method.label()
        )));
    }
    let resolved = ResolvedEval {
        command: "eval".into(),
        method: opts.method.describe(),
        label: label.clone(),
        tracker: opts.tracker.to_string(),
        inputs: display_paths(&opts.inputs),
        capacity,
        gamma: opts.gamma,
        seed: opts.seed,
        budget: opts.budget,
        sim: opts.sim,
    };
    write_file(&opts.out.join(CONFIG_FILE), pretty(&resolved))?;

    let results: Vec<Result<Outcome>> = pool(opts.jobs)?.install(|| {
        inputs
            .par_iter()
            .map(|input| {
                eval_one(opts, &label, capacity, input)
                    .with_context(|| format!("evaluating {:?}", input.video_id))
            })
            .collect()
    });
    let mut lines = Vec::new();
    let mut skipped = Vec::new();
    for outcome in results {
        match outcome? {
            Outcome::Done(line, trace) => {
                let dir = opts.out.join("videos").join(&line.metrics.video_id);
                write_episode(&dir, &trace)?;
                lines.push(line);
            }
            Outcome::Skipped(skip) => skipped.push(skip),
        }
    }
    if lines.is_empty() {
        bail!(Error::Config(format!(
            "every video was skipped: {skipped:?}"
        )));
    }
    write_file(&opts.out.join(METRICS_FILE), to_jsonl(&lines))?;
    let summary = EvalSummary {
        method: label,
        videos: lines.len(),
        quality: mean(lines.iter().map(|l| l.metrics.quality)),
        accuracy: mean(lines.iter().map(|l| l.metrics.accuracy)),
        robustness: mean(lines.iter().map(|l| l.metrics.robustness)),
        mean_return: mean(lines.iter().map(|l| l.episode_return)),
        skipped,
    };
    write_file(&opts.out.join(SUMMARY_FILE), pretty(&summary))?;
    let table = comparison_table(&[summary.row()], &summary.method)?.render();
    write_file(&opts.out.join(TABLE_FILE), &table)?;
    Ok(EvalReport {
        lines,
        summary,
        table,
    })
}

fn checkpoint_for(path: &Path, video_id: &str) -> Result<Checkpoint> {
    let file = if path.is_dir() {
        path.join(video_id).join(CHECKPOINT_FILE)
    } else {
        path.to_path_buf()
    };
    let text = fs::read_to_string(&file)
        .with_context(|| format!("no checkpoint for {video_id:?} at {}", file.display()))?;
    Checkpoint::from_json(&text).with_context(|| format!("loading {}", file.display()))
}

fn eval_one(
    opts: &EvalOptions,
    label: &str,
    capacity: usize,
    input: &VideoInput,
) -> Result<Outcome> {
    let skip = |reason: String| {
        Ok(Outcome::Skipped(Skip {
            video_id: input.video_id.clone(),
            reason,
        }))
    };
    let checkpoint = match &opts.method {
        Method::Checkpoint(path) => {
            let ckpt = checkpoint_for(path, &input.video_id)?;
            if ckpt.params.input_width() != input.length {
                return skip(format!(
                    "policy input width {} does not match video length {}",
                    ckpt.params.input_width(),
                    input.length
                ));
            }
            if ckpt.params.actions() != capacity {
                return skip(format!(
                    "policy has {} actions, bank capacity is {capacity}",
                    ckpt.params.actions()
                ));
            }
            Some(ckpt)
        }
        _ => None,
    };
    let mut tracker = open_tracker(&opts.tracker, input, capacity, &opts.sim, opts.timeout)?;
    let solution = match opts.method {
        Method::Oracle => Some(dp_oracle(
            tracker.as_mut(),
            capacity,
            opts.gamma,
            opts.budget,
        )?),
        _ => None,
    };
    let mut env = TrackingEnv::new(tracker, capacity, opts.gamma)?;
    let trace = match &opts.method {
        Method::Fifo => run_episode(&mut env, &mut FifoPolicy)?,
        Method::Random => run_episode(&mut env, &mut RandomPolicy::new(opts.seed))?,
        Method::Greedy => run_episode(&mut env, &mut GreedyPolicy)?,
        Method::Oracle => run_episode(
            &mut env,
            &mut solution.as_ref().expect("solved").as_policy(),
        )?,
        Method::Checkpoint(_) => {
            let ckpt = checkpoint.expect("loaded");
            run_episode(
                &mut env,
                &mut GreedyPpoPolicy {
                    params: &ckpt.params,
                },
            )?
        }
    };
    let metrics = VideoMetrics::from_trace(&trace)?;
    Ok(Outcome::Done(
        MetricsLine {
            method: label.to_string(),
            metrics,
            episode_return: trace.final_return,
        },
        trace,
    ))
}

// ---------------------------------------------------------------- compare

fn read_eval_dir(dir: &Path) -> Result<(EvalSummary, BTreeSet<String>)> {
    let summary_path = dir.join(SUMMARY_FILE);
    let text = fs::read_to_string(&summary_path)
        .with_context(|| format!("reading {}", summary_path.display()))?;
    let summary: EvalSummary = serde_json::from_str(&text)
        .map_err(Error::from)
        .with_context(|| format!("parsing {}", summary_path.display()))?;
    let metrics_path = dir.join(METRICS_FILE);
    let text = fs::read_to_string(&metrics_path)
        .with_context(|| format!("reading {}", metrics_path.display()))?;
    let mut ids = BTreeSet::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let record: MetricsLine = serde_json::from_str(line)
            .map_err(Error::from)
            .with_context(|| format!("parsing {}", metrics_path.display()))?;
        ids.insert(record.metrics.video_id);
    }
    Ok((summary, ids))
}

/// Renders the comparison of several `eval` output directories.
pub fn cmd_compare(dirs: &[PathBuf], baseline: &str, out: Option<&Path>) -> Result<String> {
    if dirs.is_empty() {
        bail!(Error::Config("no evaluation directories given".into()));
    }
    let loaded = dirs
        .iter()
        .map(|d| read_eval_dir(d))
        .collect::<Result<Vec<_>>>()?;
    let (_, reference) = &loaded[0];
    let mut problems = Vec::new();
    for (dir, (_, ids)) in dirs.iter().zip(&loaded).skip(1) {
        let missing: Vec<_> = reference.difference(ids).collect();
        let extra: Vec<_> = ids.difference(reference).collect();
        if !missing.is_empty() || !extra.is_empty() {
            problems.push(format!(
                "{} lacks {missing:?} and adds {extra:?} relative to {}",
                dir.display(),
                dirs[0].display()
            ));
        }
    }
    if !problems.is_empty() {
        bail!(Error::Config(format!(
            "inconsistent video sets: {}",
            problems.join("; ")
        )));
    }
    let mut names = BTreeSet::new();
    for (summary, _) in &loaded {
        if !names.insert(summary.method.clone()) {
            bail!(Error::Config(format!(
                "two rows are named {:?}; use eval --label to tell them apart",
                summary.method
            )));
        }
    }
    let rows: Vec<MethodRow> = loaded.iter().map(|(s, _)| s.row()).collect();
    let table = comparison_table(&rows, baseline)?;
    let text = table.render();
    if let Some(out) = out {
        write_file(&out.join("comparison.jsonl"), to_jsonl(&table.rows))?;
        write_file(&out.join(TABLE_FILE), &text)?;
    }
    Ok(text)
}

// ---------------------------------------------------------------- oracle

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    pub video_id: String,
    pub optimal_return: f64,
    pub decision_states: usize,
}

pub fn cmd_oracle(
    inputs: &[PathBuf],
    tracker: &TrackerSpec,
    sim: &SimParams,
    capacity: Option<usize>,
    gamma: f64,
    budget: usize,
    out: &Path,
) -> Result<Vec<OracleRecord>> {
    if matches!(tracker, TrackerSpec::Bridge(_)) {
        bail!(Error::Unsupported(
            "the oracle needs an in-process tracker".into()
        ));
    }
    let inputs = resolve_inputs(tracker, inputs)?;
    let capacity = resolve_capacity(&inputs, capacity, DEFAULT_CAPACITY)?;
    let mut records = Vec::new();
    for input in &inputs {
        let mut t = open_tracker(tracker, input, capacity, sim, Duration::ZERO)?;
        let solution = dp_oracle(t.as_mut(), capacity, gamma, budget)?;
        write_file(
            &out.join(format!("{}.policy.tsv", input.video_id)),
            solution.dump(),
        )?;
        records.push(OracleRecord {
            video_id: input.video_id.clone(),
            optimal_return: solution.optimal_return,
            decision_states: solution.policy.len(),
        });
    }
    write_file(&out.join("oracle.jsonl"), to_jsonl(&records))?;
    Ok(records)
}

// ---------------------------------------------------------------- tables and serving

/// Tabulates the synthetic tracker on one video over all reachable states.
pub fn cmd_dump_table(
    video: &Path,
    sim: &SimParams,
    capacity: usize,
    budget: usize,
    out: &Path,
) -> Result<()> {
    let inputs = resolve_inputs(&TrackerSpec::Synthetic, &[video.to_path_buf()])?;
    if inputs.len() != 1 {
        bail!(Error::Config(format!(
            "expected one video, got {}",
            inputs.len()
        )));
    }
    let mut tracker = open_tracker(
        &TrackerSpec::Synthetic,
        &inputs[0],
        capacity,
        sim,
        Duration::ZERO,
    )?;
    let table = ScriptedTable::dump(tracker.as_mut(), capacity, budget)?;
    write_file(out, table.to_text())
}

/// Serves a table over stdin/stdout, or over TCP when `listen` is set
/// (one thread per connection, until killed).
pub fn cmd_serve(table_path: &Path, listen: Option<&str>) -> Result<()> {
    let text = fs::read_to_string(table_path)
        .with_context(|| format!("reading {}", table_path.display()))?;
    let table = ScriptedTable::parse(&text)?;
    match listen {
        None => {
            let stdin = std::io::stdin();
            serve(&table, stdin.lock(), std::io::stdout().lock())?;
        }
        Some(addr) => {
            let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
            let local = listener.local_addr()?;
            writeln!(std::io::stderr(), "listening on {local}")?;
            std::thread::scope(|scope| -> Result<()> {
                for stream in listener.incoming() {
                    let stream = stream?;
                    stream.set_nodelay(true)?;
                    let table = &table;
                    scope.spawn(move || {
                        let reader = BufReader::new(stream.try_clone()?);
                        serve(table, reader, stream)
                    });
                }
                Ok(())
            })?;
        }
    }
    Ok(())
}
