//! Command-line front end. Every subcommand prints JSON on stdout; exit code
//! 0 means every requested check passed, 1 a failed verdict, 2 a usage,
//! config or input error.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::cramer::{self, Schedule};
use crate::error::{Error, Result};
use crate::forms::IntegerForm;
use crate::harness::{self, ExperimentSpec};
use crate::localdensity::{self, HistogramStore};
use crate::shiftedconv;
use crate::singularintegral::QuadratureSpec;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "arithdensity", version, about = "Local densities and lattice-sum experiments for integer forms")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: Option<u64>,
    /// Evaluation budget for histograms and sweeps.
    #[arg(long, global = true)]
    pub budget: Option<u64>,
    /// Directory for cached value histograms.
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    /// Directory the JSON (and CSV) outputs are written to.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for Monte Carlo quadrature.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Truncated singular series at nu with its per-prime factors.
    Density {
        #[arg(long)]
        form: String,
        #[arg(long, allow_hyphen_values = true)]
        nu: i128,
        #[arg(long)]
        z: f64,
        #[arg(long, default_value = "floor")]
        schedule: String,
    },
    /// Identity suites: touselater, darksun, lemma33, hyperbola, crt, divisor_chain, all.
    Verify { suite: String },
    /// Run an experiment config (TOML or JSON).
    Experiment { config: PathBuf },
    /// eta_q(b), the number of two-square representations mod q.
    Eta {
        #[arg(long)]
        q: u64,
        #[arg(long, allow_hyphen_values = true)]
        b: i128,
    },
    /// Exact shifted convolution against its main term.
    Convolution {
        #[arg(long)]
        x: u64,
        #[arg(long)]
        q: u64,
        #[arg(long, allow_hyphen_values = true)]
        a: i128,
    },
    /// The modulus W_z and exponents of a plan.
    Plan {
        #[arg(long)]
        z: f64,
        #[arg(long, default_value = "floor")]
        schedule: String,
    },
}

/// Output of one command: JSON text, extra files, and whether it passed.
struct Output {
    json: String,
    files: Vec<(String, String)>,
    pass: bool,
}

fn json_of<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn store(cli: &Cli) -> HistogramStore {
    let mut s = HistogramStore::new(cli.budget.unwrap_or(localdensity::DEFAULT_BUDGET));
    if let Some(d) = &cli.cache_dir {
        s = s.with_cache_dir(d);
    }
    s
}

fn execute(cli: &Cli) -> Result<Output> {
    let store = store(cli);
    match &cli.command {
        Command::Density { form, nu, z, schedule } => {
            let form = IntegerForm::parse(form)?;
            let plan = cramer::plan_for(Schedule::parse(schedule)?, *z)?;
            let v = localdensity::singular_series(&form, *nu, &plan, &store)?;
            Ok(Output {
                json: json_of(&v),
                files: vec![],
                pass: true,
            })
        }
        Command::Verify { suite } => {
            let mut quad = QuadratureSpec::default();
            if let Some(s) = cli.seed {
                quad.seed = s;
            }
            let reports = harness::run_suite(suite, &store, &quad)?;
            for r in &reports {
                eprintln!("{:<14} {} ({} passed, {} failed)", r.suite, if r.pass { "PASS" } else { "FAIL" }, r.passed, r.failed);
            }
            let json = json_of(&reports);
            Ok(Output {
                pass: reports.iter().all(|r| r.pass),
                files: vec![("verify.json".into(), json.clone())],
                json,
            })
        }
        Command::Experiment { config } => {
            let mut spec = ExperimentSpec::from_path(config)?;
            if let Some(s) = cli.seed {
                spec.quadrature.seed = s;
            }
            if let Some(b) = cli.budget {
                spec.budget = Some(b);
            }
            let out = harness::run_experiment(&spec, &store)?;
            let r = &out.report;
            for row in &r.rows {
                eprintln!(
                    "P={:<8} exact={:<14.6e} predicted={:<14.6e} ratio={}",
                    row.p,
                    if r.boundary == harness::Boundary::Closed { row.closed } else { row.trapezoid },
                    row.predicted,
                    row.ratio.map_or("-".into(), |x| format!("{x:.6}"))
                );
            }
            eprintln!(
                "verdict: {}{}",
                if r.verdict.pass { "PASS" } else { "FAIL" },
                if r.verdict.gated { "" } else { " (trend only)" }
            );
            let json = r.to_json() + "\n";
            let stem = r.name.clone();
            Ok(Output {
                pass: r.verdict.pass || !r.verdict.gated,
                files: vec![
                    (format!("{stem}.json"), json.clone()),
                    (format!("{stem}.csv"), r.to_csv()),
                    (format!("{stem}.timing.json"), json_of(&out.timing)),
                ],
                json,
            })
        }
        Command::Eta { q, b } => {
            let v = shiftedconv::eta(*q, *b)?;
            Ok(Output {
                json: json_of(&serde_json::json!({"q": q, "b": b.to_string(), "eta": v})),
                files: vec![],
                pass: true,
            })
        }
        Command::Convolution { x, q, a } => {
            let rows = shiftedconv::convolution_rows(&[*x], *q, *a)?;
            Ok(Output {
                json: json_of(&rows),
                files: vec![],
                pass: true,
            })
        }
        Command::Plan { z, schedule } => {
            let plan = cramer::plan_for(Schedule::parse(schedule)?, *z)?;
            Ok(Output {
                json: json_of(&plan),
                files: vec![],
                pass: true,
            })
        }
    }
}

fn write_files(dir: &Path, files: &[(String, String)]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, body) in files {
        std::fs::write(dir.join(name), body)?;
    }
    Ok(())
}

/// Runs a parsed command line and returns the exit code.
pub fn run(cli: Cli) -> i32 {
    if let Some(t) = cli.threads {
        // the pool can only be configured once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t as usize).build_global();
    }
    match execute(&cli) {
        Ok(out) => {
            print!("{}", out.json);
            if let Some(dir) = &cli.out {
                if let Err(e) = write_files(dir, &out.files) {
                    eprintln!("error: {e}");
                    return EXIT_USAGE;
                }
            }
            if out.pass {
                EXIT_PASS
            } else {
                EXIT_FAIL
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            let kind = match &e {
                Error::Config(_) => "config",
                Error::UnknownName { .. } => "name",
                _ => "input",
            };
            println!("{}", serde_json::json!({"error": e.to_string(), "kind": kind}));
            EXIT_USAGE
        }
    }
}

/// Parses `args` (including the program name) and runs them.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_PASS,
                _ => EXIT_USAGE,
            }
        }
    }
}
