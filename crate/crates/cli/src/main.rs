//! parsepipe command line: validate parser specs, compile pipeline plans,
//! simulate packet corpora, emit source bundles, and generate test traffic.
//!
//! Exit codes are scriptable: 0 success, 1 operational failure (I/O, syntax,
//! bad arguments, oracle divergence), 2 validation failure.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use parsepipe::codegen::{emit, BackendId};
use parsepipe::pktio::{read_packets, write_hex, PacketFormat};
use parsepipe::plan::{plan, to_dot};
use parsepipe::reference::reference_parse;
use parsepipe::sim::{results_equivalent, simulate_batch, PacketSimulator};
use parsepipe::{traffic, ParserGraph};

/// Environment variable naming the default output directory for `emit`.
const OUT_DIR_ENV: &str = "PARSEPIPE_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "parsepipe",
    version,
    about = "Packet-parser pipeline compiler, simulator, and source generator"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Print progress details to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check a parser spec; exit 2 listing every violation if invalid.
    Validate(SpecArg),
    /// Compile a spec and write the pipeline plan.
    Plan {
        #[command(flatten)]
        spec: SpecArg,
        /// Output format.
        #[arg(long, default_value = "text", value_parser = ["text", "json", "dot"])]
        format: String,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a packet corpus; one JSON result line per packet.
    Sim {
        #[command(flatten)]
        spec: SpecArg,
        /// Packet input file.
        #[arg(long)]
        packets: PathBuf,
        /// Packet input encoding.
        #[arg(long = "packet-format", default_value = "hex")]
        packet_format: String,
        /// Results file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also run the sequential reference parser and fail on divergence.
        #[arg(long)]
        oracle_check: bool,
    },
    /// Emit a source bundle for a backend.
    Emit {
        #[command(flatten)]
        spec: SpecArg,
        /// Backend id.
        #[arg(long, default_value = "mpo-cxx")]
        backend: String,
        /// Output root (defaults to $PARSEPIPE_OUT_DIR, then `out`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a seeded packet corpus as hex lines.
    GenTraffic {
        #[command(flatten)]
        spec: SpecArg,
        /// Number of packets.
        #[arg(long, default_value_t = 100)]
        count: usize,
        /// Generator seed.
        #[arg(long, default_value_t = traffic::DEFAULT_SEED)]
        seed: u64,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SpecArg {
    /// Parser spec (JSON).
    spec: PathBuf,
}

enum CliError {
    /// I/O, syntax, arguments, backend, divergence: exit 1.
    Op(String),
    /// Semantic violations in the spec: exit 2.
    Validation(String),
}

impl<E: std::error::Error> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Op(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders help/version through the error path too
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Op(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Validation(report)) => {
            eprint!("{report}");
            ExitCode::from(2)
        }
    }
}

/// Loads and validates; validation failures carry the full violation list.
fn load_valid(path: &Path) -> Result<ParserGraph, CliError> {
    let graph = ParserGraph::load_file(path)?;
    let report = graph.validate();
    if !report.is_ok() {
        return Err(CliError::Validation(report.to_string()));
    }
    Ok(graph)
}

fn open_out(out: &Option<PathBuf>) -> Result<Box<dyn Write>, CliError> {
    Ok(match out {
        Some(path) => Box::new(BufWriter::new(File::create(path)?)),
        None => Box::new(BufWriter::new(std::io::stdout())),
    })
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.cmd {
        Cmd::Validate(spec) => {
            let graph = load_valid(&spec.spec)?;
            println!("ok: `{}` ({} headers)", graph.name, graph.headers.len());
            Ok(())
        }

        Cmd::Plan { spec, format, out } => {
            let graph = load_valid(&spec.spec)?;
            let plan = plan(&graph).map_err(|e| CliError::Op(e.to_string()))?;
            let text = match format.as_str() {
                "json" => plan.to_canonical_json(),
                "dot" => to_dot(&graph, &plan),
                _ => {
                    let bundle = emit(&graph, &plan, BackendId::PlanReport)?;
                    bundle.files["report.txt"].clone()
                }
            };
            let mut w = open_out(out)?;
            w.write_all(text.as_bytes())?;
            w.flush()?;
            Ok(())
        }

        Cmd::Sim {
            spec,
            packets,
            packet_format,
            out,
            oracle_check,
        } => {
            let graph = load_valid(&spec.spec)?;
            let p = plan(&graph).map_err(|e| CliError::Op(e.to_string()))?;
            let sim = PacketSimulator::new(&graph, &p)?;
            let format = PacketFormat::from_str(packet_format).map_err(CliError::Op)?;
            let mut reader: Box<dyn BufRead> = Box::new(BufReader::new(File::open(packets)?));
            let corpus = read_packets(&mut reader, format)?;
            if cli.verbose {
                eprintln!(
                    "simulating {} packets from {}",
                    corpus.len(),
                    packets.display()
                );
            }
            let results = simulate_batch(&sim, &corpus);

            let mut w = open_out(out)?;
            for r in &results {
                let value = serde_json::to_value(r).map_err(|e| CliError::Op(e.to_string()))?;
                writeln!(w, "{value}")?;
            }
            w.flush()?;

            if *oracle_check {
                let divergent: Vec<usize> = results
                    .iter()
                    .enumerate()
                    .filter(|(i, r)| !results_equivalent(r, &reference_parse(&graph, &corpus[*i])))
                    .map(|(i, _)| i)
                    .collect();
                if !divergent.is_empty() {
                    return Err(CliError::Op(format!(
                        "pipeline diverges from the reference parser on {} of {} packets (first: #{})",
                        divergent.len(),
                        corpus.len(),
                        divergent[0]
                    )));
                }
                if cli.verbose {
                    eprintln!("oracle check: {} packets equivalent", corpus.len());
                }
            }
            Ok(())
        }

        Cmd::Emit { spec, backend, out } => {
            let graph = load_valid(&spec.spec)?;
            let p = plan(&graph).map_err(|e| CliError::Op(e.to_string()))?;
            let backend = BackendId::from_str(backend)?;
            let bundle = emit(&graph, &p, backend)?;
            let out_root = out.clone().unwrap_or_else(|| {
                std::env::var_os(OUT_DIR_ENV)
                    .map(PathBuf::from)
                    .unwrap_or_else(|| PathBuf::from("out"))
            });
            let dir = bundle.write_to(&out_root)?;
            println!("wrote {} files to {}", bundle.files.len(), dir.display());
            Ok(())
        }

        Cmd::GenTraffic {
            spec,
            count,
            seed,
            out,
        } => {
            let graph = load_valid(&spec.spec)?;
            let packets: Vec<Vec<u8>> = traffic::generate(&graph, *count, *seed)
                .into_iter()
                .map(|p| p.bytes)
                .collect();
            let mut w = open_out(out)?;
            write_hex(&packets, &mut w)?;
            w.flush()?;
            if cli.verbose {
                eprintln!("generated {count} packets (seed {seed})");
            }
            Ok(())
        }
    }
}
