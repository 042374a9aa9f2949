use std::io::{self, BufReader};
use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use aecnn::cli::{self, CliError, InspectFormat, RunOptions};
use aecnn::compiler::ExportFormat;
use aecnn::evaluators::mock::{MockBehavior, MockFitness, ServeEnd};
use aecnn::DatasetDescriptor;

/// Evolutionary search over ResNet/DenseNet block architectures.
#[derive(Parser)]
#[command(name = "aecnn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start a new search.
    Run(SearchArgs),
    /// Continue a search from a checkpoint file.
    Resume {
        checkpoint: PathBuf,
        /// Evaluation parallelism for the remaining generations.
        #[arg(long)]
        parallel: Option<usize>,
    },
    /// Validate a genome file and report its cost.
    Inspect {
        genome: PathBuf,
        #[arg(long, default_value = "cifar10")]
        dataset: DatasetDescriptor,
        /// text or json
        #[arg(long, default_value = "text")]
        format: InspectFormat,
        /// Print the compiled graph instead: architecture-json or dot-graph.
        #[arg(long)]
        export: Option<ExportFormat>,
    },
    /// Compare GA, mutation-only GA and random search over many seeds.
    Bench {
        #[command(flatten)]
        search: SearchArgs,
        /// Seeds per method.
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Protocol responder standing in for the trainer (testing aid).
    #[command(hide = true)]
    MockEvaluator(MockArgs),
}

#[derive(Args)]
struct SearchArgs {
    /// JSON config document; omitted fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    population: Option<usize>,
    #[arg(long)]
    generations: Option<usize>,
    #[arg(long)]
    crossover_prob: Option<f64>,
    #[arg(long)]
    mutation_prob: Option<f64>,
    /// surrogate:<name>, exec:<command> or tcp:<addr>
    #[arg(long)]
    evaluator: Option<String>,
    #[arg(long)]
    parallel: Option<usize>,
    /// Defaults to $AECNN_OUT_DIR, then ./runs.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// cifar10, cifar100 or custom:C,H,W,K
    #[arg(long)]
    dataset: Option<String>,
    /// Any other config field as `--dotted.path value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, hide = true)]
    rest: Vec<String>,
}

impl SearchArgs {
    fn options(self, extra: Vec<(String, String)>) -> Result<RunOptions, CliError> {
        let mut overrides = Vec::new();
        let named: [(&str, Option<String>); 8] = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("population", self.population.map(|v| v.to_string())),
            ("generations", self.generations.map(|v| v.to_string())),
            ("crossover-prob", self.crossover_prob.map(|v| v.to_string())),
            ("mutation-prob", self.mutation_prob.map(|v| v.to_string())),
            ("evaluator", self.evaluator),
            ("parallel", self.parallel.map(|v| v.to_string())),
            ("dataset", self.dataset),
        ];
        for (flag, value) in named {
            if let Some(v) = value {
                overrides.push((cli::config_key(flag), v));
            }
        }
        overrides.extend(extra);
        overrides.extend(cli::parse_overrides(&self.rest)?);
        Ok(RunOptions {
            config: self.config,
            overrides,
            out_dir: self.out_dir,
        })
    }
}

#[derive(Args)]
struct MockArgs {
    /// Serve TCP on this address instead of stdio; prints `listening=<addr>`.
    #[arg(long)]
    listen: Option<String>,
    /// Fixed fitness for every request.
    #[arg(long, default_value_t = 0.5)]
    fitness: f64,
    /// Score by parameter budget around this log10 target instead.
    #[arg(long)]
    param_budget: Option<f64>,
    #[arg(long)]
    hang: bool,
    #[arg(long)]
    crash_after: Option<usize>,
    #[arg(long)]
    malformed_every: Option<usize>,
    /// Reply in reverse order within windows of this size.
    #[arg(long)]
    shuffle: Option<usize>,
    /// Report out-of-memory for genomes with more units than this.
    #[arg(long)]
    oom_above: Option<usize>,
}

fn mock(args: MockArgs) -> io::Result<ExitCode> {
    let behavior = MockBehavior {
        fitness: match args.param_budget {
            Some(t) => MockFitness::ParamBudget(t),
            None => MockFitness::Fixed(args.fitness),
        },
        hang: args.hang,
        crash_after: args.crash_after,
        malformed_every: args.malformed_every,
        shuffle_window: args.shuffle,
        oom_above_units: args.oom_above,
    };
    let Some(addr) = args.listen else {
        return Ok(
            match behavior.serve(BufReader::new(io::stdin()), io::stdout().lock())? {
                ServeEnd::Finished => ExitCode::SUCCESS,
                ServeEnd::Crashed => ExitCode::from(3),
            },
        );
    };
    let listener = TcpListener::bind(addr)?;
    println!("listening={}", listener.local_addr()?);
    for stream in listener.incoming() {
        let stream = stream?;
        let behavior = behavior.clone();
        std::thread::spawn(move || {
            let reader = BufReader::new(stream.try_clone()?);
            let end = behavior.serve(reader, &stream);
            let _ = stream.shutdown(std::net::Shutdown::Both);
            end
        });
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut out = io::stdout();
    let result: Result<(), CliError> = match cli.command {
        Command::Run(args) => args
            .options(Vec::new())
            .and_then(|opts| cli::cmd_run(&opts, &mut out))
            .map(drop),
        Command::Resume { checkpoint, parallel } => {
            cli::cmd_resume(&checkpoint, parallel, &mut out).map(drop)
        }
        Command::Inspect {
            genome,
            dataset,
            format,
            export,
        } => cli::cmd_inspect(&genome, &dataset, format, export).map(|text| print!("{text}")),
        Command::Bench { search, seeds } => {
            let extra = seeds
                .map(|s| ("seeds".to_string(), s.to_string()))
                .into_iter()
                .collect();
            search
                .options(extra)
                .and_then(|opts| cli::cmd_bench(&opts, &mut out))
                .map(drop)
        }
        Command::MockEvaluator(args) => {
            return match mock(args) {
                Ok(code) => code,
                // The client hung up; nothing left to answer.
                Err(e) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("mock-evaluator: {e}");
                    ExitCode::FAILURE
                }
            };
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
