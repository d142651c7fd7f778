// Negated float comparisons reject NaN; index loops mirror tensor notation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

use clap::{Parser, Subcommand};
use comoving_cli::plotdata::write_plot_data;
use comoving_cli::report::exit;
use comoving_cli::{pipeline, scenario};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "comoving", version, about = "Comoving chart, leaf geometry and diffusion scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the analyses listed in a scenario file.
    Run {
        scenario: PathBuf,
        /// Output directory; overrides the scenario's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; results do not depend on this.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Check a scenario file without running it.
    Validate { scenario: PathBuf },
    /// Derive plot tables from a run report.
    Plotdata {
        report: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the JSON schema of scenario files.
    Schema,
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(c as u8)
}

fn load(path: &Path) -> Result<scenario::Scenario, ExitCode> {
    scenario::load(path).map_err(|e| {
        eprintln!("{e}");
        match e {
            scenario::LoadError::Io(..) => code(exit::RUNTIME_ERROR),
            scenario::LoadError::Invalid(_) => code(exit::CONFIG_ERROR),
        }
    })
}

fn run(path: PathBuf, out: Option<PathBuf>, seed: Option<u64>, threads: Option<usize>) -> ExitCode {
    let mut s = match load(&path) {
        Ok(s) => s,
        Err(c) => return c,
    };
    if let Some(seed) = seed {
        s.seed = seed;
    }
    let out = out.or_else(|| s.output.clone()).unwrap_or_else(|| PathBuf::from(format!("{}.out", s.name)));
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("cannot start thread pool: {e}");
            return code(exit::RUNTIME_ERROR);
        }
    };
    let threads = Some(pool.current_num_threads());
    let report = match pool.install(|| pipeline::run(&s, &out, threads)) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{}: {e}", out.display());
            return code(exit::RUNTIME_ERROR);
        }
    };
    for r in &report.results {
        let status = serde_json::to_value(r.status).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        println!("{:<14} {:<8} {}", r.analysis.name(), status, r.error.as_deref().unwrap_or(""));
        for c in r.checks.iter().filter(|c| !c.pass) {
            println!("    failed: {} = {:e} (tolerance {:e})", c.name, c.value, c.tolerance);
        }
    }
    let path = out.join("report.json");
    if let Err(e) = report.write(&path) {
        eprintln!("{}: {e}", path.display());
        return code(exit::RUNTIME_ERROR);
    }
    println!("report: {}", path.display());
    code(report.exit_code)
}

fn validate(path: PathBuf) -> ExitCode {
    match load(&path) {
        Ok(s) => {
            println!("{}: ok ({} analyses)", s.name, s.analyses.len());
            code(exit::PASS)
        }
        Err(c) => c,
    }
}

fn plotdata(report: PathBuf, out: Option<PathBuf>) -> ExitCode {
    let text = match std::fs::read_to_string(&report) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {}: {e}", report.display());
            return code(exit::RUNTIME_ERROR);
        }
    };
    let value: serde_json::Value = match serde_json::from_str(&text) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("{}: {e}", report.display());
            return code(exit::CONFIG_ERROR);
        }
    };
    let out = out.unwrap_or_else(|| report.parent().map(PathBuf::from).unwrap_or_default());
    match write_plot_data(&value, &out) {
        Ok(files) if files.is_empty() => {
            eprintln!("warning: {} contains no plottable analyses; nothing written", report.display());
            code(exit::PASS)
        }
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            code(exit::PASS)
        }
        Err(e) => {
            eprintln!("{}: {e}", out.display());
            code(exit::RUNTIME_ERROR)
        }
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { scenario, out, seed, threads } => run(scenario, out, seed, threads),
        Command::Validate { scenario } => validate(scenario),
        Command::Plotdata { report, out } => plotdata(report, out),
        Command::Schema => {
            println!("{}", scenario::schema_text());
            code(exit::PASS)
        }
    }
}
