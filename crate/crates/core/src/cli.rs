//! Library side of the `aecnn` command: run, resume, inspect and bench.
//!
//! Each command is a plain function so tests and examples can drive it
//! without spawning a process. Progress lines go to the supplied writer.
//!
//! A run directory looks like
//!
//! ```text
//! <out-dir>/<timestamp>-seed<seed>/
//!   manifest.json        resolved config, evaluator, layout
//!   checkpoints/         gen-NNNN.json, latest.json
//!   reports/             generations.jsonl, timing.json
//!   best/                genome.json, architecture.json, summary.json
//! ```

use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use crate::bench::{self, BenchConfig, BenchReport};
use crate::compiler::{count_flops, count_params, decode, export, ExportFormat};
use crate::engine::{
    Checkpoint, CheckpointError, Engine, EngineError, EvolutionConfig, GenerationRecord, GenerationTiming,
    Individual, RunReport,
};
use crate::genome::{validate, DatasetDescriptor, Genome, GenomeConstraints, GenomeError, Unit};

pub const OUT_DIR_ENV: &str = "AECNN_OUT_DIR";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Genome(#[from] GenomeError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Engine(e.into())
    }
}

impl CliError {
    /// 2 for usage mistakes, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

/// Maps a flag name to its config path. Short aliases cover the common
/// knobs; anything else is taken as a dotted path, with `-` read as `_`.
pub fn config_key(flag: &str) -> String {
    match flag {
        "crossover-prob" => "operators.crossover_prob".into(),
        "mutation-prob" => "operators.mutation_prob".into(),
        "parallel" => "execution.parallel".into(),
        "checkpoint-every" => "execution.checkpoint_every".into(),
        other => other.replace('-', "_"),
    }
}

/// Splits `--key value` and `--key=value` pairs into `(path, value)`.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            return Err(CliError::Usage(format!("unexpected argument `{arg}`")));
        };
        let (key, value) = match flag.split_once('=') {
            Some((k, v)) => (k, v.to_string()),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| CliError::Usage(format!("--{flag} needs a value")))?;
                (flag, v.clone())
            }
        };
        out.push((config_key(key), value));
    }
    Ok(out)
}

/// Config file (or defaults) with overrides applied in order, validated.
pub fn resolve_config<C>(config_path: Option<&Path>, overrides: &[(String, String)]) -> Result<C, CliError>
where
    C: Configurable,
{
    let mut cfg = match config_path {
        Some(p) => C::from_json(&fs::read_to_string(p).map_err(io_err(p))?)?,
        None => C::default(),
    };
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Config documents the CLI knows how to load and override.
pub trait Configurable: Default + Serialize + serde::de::DeserializeOwned {
    fn from_json(text: &str) -> Result<Self, EngineError> {
        serde_json::from_str(text).map_err(|e| EngineError::Config(e.to_string()))
    }

    fn set(&mut self, path: &str, value: &str) -> Result<(), EngineError>;

    fn validate(&self) -> Result<(), EngineError>;
}

impl Configurable for EvolutionConfig {
    fn set(&mut self, path: &str, value: &str) -> Result<(), EngineError> {
        self.set_path(path, value)
    }

    fn validate(&self) -> Result<(), EngineError> {
        self.check()
    }
}

impl Configurable for BenchConfig {
    fn set(&mut self, path: &str, value: &str) -> Result<(), EngineError> {
        match path {
            "seeds" | "first_seed" | "random_budget" => {
                let mut v = serde_json::to_value(&*self).unwrap();
                v[path] = serde_json::from_str(value)
                    .map_err(|_| EngineError::Config(format!("{path}: `{value}` is not a number")))?;
                *self = serde_json::from_value(v).map_err(|e| EngineError::Config(format!("{path}: {e}")))?;
                Ok(())
            }
            _ => self.search.set_path(path, value),
        }
    }

    fn validate(&self) -> Result<(), EngineError> {
        self.check()
    }
}

/// Explicit flag, else `$AECNN_OUT_DIR`, else `runs`.
pub fn out_dir(explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Creates `<base>/<timestamp>-<tag>`, adding `-1`, `-2`, … on collision.
fn fresh_dir(base: &Path, tag: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(base).map_err(io_err(base))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let stem = format!("{stamp}-{tag}");
    for n in 0.. {
        let name = if n == 0 {
            stem.clone()
        } else {
            format!("{stem}-{n}")
        };
        let dir = base.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(io_err(&dir)(e)),
        }
    }
    unreachable!()
}

#[derive(Debug, Clone)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn best(&self) -> PathBuf {
        self.root.join("best")
    }

    pub fn summary(&self) -> PathBuf {
        self.best().join("summary.json")
    }

    fn create(&self) -> Result<(), CliError> {
        for dir in [self.checkpoints(), self.reports(), self.best()] {
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        Ok(())
    }

    /// Run directory owning a checkpoint file in its `checkpoints/` folder.
    pub fn of_checkpoint(path: &Path) -> Self {
        let parent = path.parent().unwrap_or(Path::new("."));
        let root = if parent.file_name().is_some_and(|n| n == "checkpoints") {
            parent.parent().unwrap_or(Path::new(".")).to_path_buf()
        } else {
            parent.to_path_buf()
        };
        Self { root }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub config: Option<PathBuf>,
    pub overrides: Vec<(String, String)>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub layout: RunLayout,
    pub best: Individual,
    pub report: RunReport,
    /// The checkpoint was already at generation T; nothing ran.
    pub already_complete: bool,
}

/// Deterministic run summary: search settings, best individual and
/// per-generation statistics. Wall-clock data lives in `reports/timing.json`.
pub fn summary(cfg: &EvolutionConfig, best: &Individual, history: &[GenerationRecord]) -> serde_json::Value {
    let graph = decode(&best.genome, &cfg.dataset, &cfg.constraints).ok();
    json!({
        "config": cfg.search_settings(),
        "best": {
            "digest": best.genome.digest(),
            "fitness": best.fitness,
            "genome": best.genome,
            "params": graph.as_ref().map(count_params),
            "flops": graph.as_ref().map(count_flops),
        },
        "total_evaluations": history.iter().map(|h| h.evaluations).sum::<usize>(),
        "generations": history,
    })
}

fn report_line(rec: &GenerationRecord, timing: &GenerationTiming) -> String {
    let mut v = serde_json::to_value(rec).unwrap();
    v["wall_seconds"] = json!(timing.wall_seconds);
    v["evaluator_seconds"] = json!(timing.evaluator_seconds);
    let mut line = v.to_string();
    line.push('\n');
    line
}

fn progress(log: &mut dyn Write, total: usize, rec: &GenerationRecord) {
    let _ = writeln!(
        log,
        "gen {:>3}/{total} best={:.6} mean={:.6} worst={:.6} evals={} hits={} failed={}",
        rec.generation, rec.best, rec.mean, rec.worst, rec.evaluations, rec.cache_hits, rec.failures
    );
}

fn drive(mut engine: Engine<'_>, layout: RunLayout, log: &mut dyn Write) -> Result<RunOutcome, CliError> {
    let jsonl = layout.reports().join("generations.jsonl");
    // Rewrite history carried by a checkpoint so the file never holds
    // generations the resumed run is about to redo.
    let mut existing = String::new();
    for (rec, t) in engine.state().history.iter().zip(&engine.state().timings) {
        existing += &report_line(rec, t);
    }
    fs::write(&jsonl, existing).map_err(io_err(&jsonl))?;
    let mut file = OpenOptions::new()
        .append(true)
        .open(&jsonl)
        .map_err(io_err(&jsonl))?;

    let total = engine.config().generations;
    let mut write_err = None;
    let (best, report) = engine.run_with(|rec, timing| {
        progress(log, total, rec);
        if let Err(e) = file.write_all(report_line(rec, timing).as_bytes()) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(io_err(&jsonl)(e));
    }

    let cfg = engine.config();
    let best_dir = layout.best();
    write_json(&best_dir.join("genome.json"), &best.genome)?;
    let graph = decode(&best.genome, &cfg.dataset, &cfg.constraints)
        .map_err(|e| EngineError::Config(format!("best genome does not compile: {e}")))?;
    let arch = best_dir.join("architecture.json");
    fs::write(&arch, export(&graph, ExportFormat::ArchitectureJson) + "\n").map_err(io_err(&arch))?;
    write_json(&layout.summary(), &summary(cfg, &best, &report.generations))?;
    write_json(
        &layout.reports().join("timing.json"),
        &json!({
            "elapsed_seconds": report.elapsed_seconds,
            "evaluator_seconds": report.evaluator_seconds,
            "evaluator_workers": report.evaluator_workers,
            "gpu_days": report.gpu_days,
            "generations": report.timings,
        }),
    )?;
    let _ = writeln!(
        log,
        "best fitness={} digest={}",
        best.fitness.value().unwrap_or(0.0),
        best.genome.digest()
    );
    Ok(RunOutcome {
        layout,
        best,
        report,
        already_complete: false,
    })
}

/// `aecnn run`: resolves the config, creates a run directory and evolves.
pub fn cmd_run(opts: &RunOptions, log: &mut dyn Write) -> Result<RunOutcome, CliError> {
    let cfg: EvolutionConfig = resolve_config(opts.config.as_deref(), &opts.overrides)?;
    let evaluator = cfg.build_evaluator()?;
    let layout = RunLayout {
        root: fresh_dir(&out_dir(opts.out_dir.as_deref()), &format!("seed{}", cfg.seed))?,
    };
    layout.create()?;
    let _ = writeln!(log, "run_dir={}", layout.root.display());
    write_json(
        &layout.root.join("manifest.json"),
        &json!({
            "config_path": opts.config,
            "config": cfg,
            "config_hash": cfg.config_hash(),
            "evaluator": evaluator.describe(),
            "layout": {
                "checkpoints": "checkpoints/",
                "reports": "reports/",
                "best": "best/",
            },
        }),
    )?;
    let engine = Engine::new(cfg, evaluator.as_ref())?.with_checkpoints(layout.checkpoints());
    drive(engine, layout, log)
}

/// `aecnn resume`: continues from a checkpoint inside its run directory.
/// `parallel` may change; search settings may not.
pub fn cmd_resume(
    checkpoint: &Path,
    parallel: Option<usize>,
    log: &mut dyn Write,
) -> Result<RunOutcome, CliError> {
    let mut ckpt = Checkpoint::load(checkpoint)?;
    if let Some(p) = parallel {
        ckpt.config.execution.parallel = p;
    }
    let layout = RunLayout::of_checkpoint(checkpoint);
    let cfg = ckpt.config.clone();
    let evaluator = cfg.build_evaluator()?;
    let engine = Engine::from_checkpoint(ckpt, evaluator.as_ref())?;
    if engine.is_finished() {
        let _ = writeln!(
            log,
            "run already complete at generation {}/{}; nothing to do",
            engine.generation(),
            cfg.generations
        );
        return Ok(RunOutcome {
            layout,
            best: engine.best().cloned().expect("finished run has a best"),
            report: engine.report(),
            already_complete: true,
        });
    }
    let _ = writeln!(log, "run_dir={}", layout.root.display());
    let _ = writeln!(log, "resuming at generation {}", engine.generation());
    layout.create()?;
    let engine = engine.with_checkpoints(layout.checkpoints());
    drive(engine, layout, log)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InspectFormat {
    Text,
    Json,
}

impl std::str::FromStr for InspectFormat {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(InspectFormat::Text),
            "json" => Ok(InspectFormat::Json),
            other => Err(CliError::Usage(format!(
                "unknown format `{other}` (text or json)"
            ))),
        }
    }
}

fn unit_fields(u: &Unit) -> String {
    match u {
        Unit::Rbu {
            amount,
            in_channels,
            out_channels,
        } => format!("amount={amount} in={in_channels} out={out_channels}"),
        Unit::Dbu {
            amount,
            in_channels,
            out_channels,
            k,
        } => format!(
            "amount={amount} in={in_channels} out={out_channels} k={}",
            k.value()
        ),
        Unit::Pu { kind } => format!("kind={kind}"),
    }
}

/// `aecnn inspect`: validation, unit table and cost figures for a genome
/// file. With `export`, prints the compiled graph in that format instead.
pub fn cmd_inspect(
    genome_path: &Path,
    dataset: &DatasetDescriptor,
    format: InspectFormat,
    export_as: Option<ExportFormat>,
) -> Result<String, CliError> {
    let genome = Genome::from_json(&fs::read_to_string(genome_path).map_err(io_err(genome_path))?)?;
    let constraints = GenomeConstraints::default();
    let report = validate(&genome, dataset, &constraints);
    let graph = report
        .is_valid()
        .then(|| decode(&genome, dataset, &constraints).ok())
        .flatten();

    if let Some(fmt) = export_as {
        let graph =
            graph.ok_or_else(|| CliError::Usage(format!("cannot export an invalid genome: {report}")))?;
        return Ok(export(&graph, fmt));
    }

    let stats = graph.as_ref().map(|g| {
        json!({
            "params": count_params(g),
            "flops": count_flops(g),
            "conv_layers": g.conv_layers(),
            "depth": g.weighted_depth(),
            "nodes": g.nodes.len(),
        })
    });
    match format {
        InspectFormat::Json => Ok(serde_json::to_string_pretty(&json!({
            "valid": report.is_valid(),
            "violations": report.violations,
            "violation_messages": report.violations.iter().map(|v| v.to_string()).collect::<Vec<_>>(),
            "units": genome.units,
            "digest": genome.digest(),
            "stats": stats,
        }))
        .unwrap()),
        InspectFormat::Text => {
            let mut out = String::new();
            out += &format!(
                "genome {} ({} units) on {}\n",
                genome.digest(),
                genome.len(),
                dataset.name
            );
            out += &format!("{:>3}  {:<4} fields\n", "pos", "type");
            for (i, u) in genome.units.iter().enumerate() {
                out += &format!("{:>3}  {:<4} {}\n", i + 1, u.kind(), unit_fields(u));
            }
            if report.is_valid() {
                out += "valid\n";
            } else {
                out += "invalid:\n";
                for v in &report.violations {
                    out += &format!("  - {v}\n");
                }
            }
            if let Some(s) = stats {
                out += &format!(
                    "params {}\nflops {}\nconv layers {}\ndepth {}\n",
                    s["params"], s["flops"], s["conv_layers"], s["depth"]
                );
            }
            Ok(out)
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub dir: PathBuf,
    pub report: BenchReport,
}

/// `aecnn bench`: GA vs mutation-only vs random search over many seeds.
/// Writes `bench.json`, `summary.csv` and `curves.csv`.
pub fn cmd_bench(opts: &RunOptions, log: &mut dyn Write) -> Result<BenchOutcome, CliError> {
    let cfg: BenchConfig = match resolve_config(opts.config.as_deref(), &opts.overrides) {
        Err(CliError::Engine(EngineError::Config(msg))) if msg.starts_with("seeds:") => {
            return Err(CliError::Usage(msg))
        }
        other => other?,
    };
    let dir = fresh_dir(
        &out_dir(opts.out_dir.as_deref()),
        &format!("bench-seed{}", cfg.first_seed),
    )?;
    let _ = writeln!(log, "bench_dir={}", dir.display());
    let report = bench::compare(&cfg, |m, run| {
        let _ = writeln!(log, "{:<13} seed {:>3} best={:.6}", m.name(), run.seed, run.best);
    })?;
    write_json(&dir.join("bench.json"), &report)?;
    let summary = dir.join("summary.csv");
    fs::write(&summary, report.summary_csv()).map_err(io_err(&summary))?;
    let curves = dir.join("curves.csv");
    fs::write(&curves, report.curves_csv()).map_err(io_err(&curves))?;
    for r in &report.results {
        let _ = writeln!(
            log,
            "{:<13} best {:.6} ± {:.6}",
            r.method.name(),
            r.mean_best,
            r.std_best
        );
    }
    let _ = writeln!(
        log,
        "ga > random: p={:.3e}; ga > mutation_only: p={:.3e}",
        report.ga_vs_random.p_value, report.ga_vs_mutation_only.p_value
    );
    Ok(BenchOutcome { dir, report })
}
