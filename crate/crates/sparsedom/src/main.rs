use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sparsedom::czo::CZKernel;
use sparsedom::domination::{build_commutator_domination, build_t_domination};
use sparsedom::grid::GridFunction;
use sparsedom::harness::{outcome_csv, outcome_json, run_scenario, Scenario};
use sparsedom::sparse::{verify_sparse, SparseFamily};
use sparsedom::Result;

#[derive(Parser)]
#[command(name = "sparsedom", version, about = "Sparse domination checks for commutators of singular integrals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every check of a scenario file (.json or key=value text).
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Override the grid resolution (cells per axis).
        #[arg(long)]
        grid_cells: Option<usize>,
        #[arg(long)]
        json_out: Option<PathBuf>,
        #[arg(long)]
        csv_out: Option<PathBuf>,
    },
    /// Certify that a stored family is η-sparse.
    VerifyFamily {
        file: PathBuf,
        #[arg(long)]
        eta: f64,
    },
    /// Build a sparse domination for T (or [b, T] when --b is given).
    Dominate {
        /// `hilbert`, `riesz2d_x` or a tabulated kernel file.
        #[arg(long)]
        kernel: String,
        #[arg(long)]
        f: PathBuf,
        #[arg(long)]
        b: Option<PathBuf>,
        /// Directory for domination.json and one family_<j>.json per lattice.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn kernel(name: &str, grid: &GridFunction) -> Result<CZKernel> {
    match CZKernel::by_name(name) {
        Ok(k) => Ok(k),
        Err(e) if !Path::new(name).exists() => Err(e),
        Err(_) => CZKernel::tabulated_from_file(Path::new(name), grid),
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Run { scenario, seed, grid_cells, json_out, csv_out } => {
            let mut sc = Scenario::load(&scenario)?;
            if let Some(s) = seed {
                sc.seed = s;
            }
            if let Some(n) = grid_cells {
                sc.grid.cells = n;
            }
            let outcome = run_scenario(&sc);
            for r in &outcome.reports {
                let verdict = if r.passed { "pass" } else { "FAIL" };
                let ceiling = r.ceiling.map(|c| format!("{c:.4e}")).unwrap_or_else(|| "none".into());
                println!("{verdict} {:<24} C_emp = {:.6e}  ceiling = {ceiling}  ({:.0} ms)", r.id, r.empirical_constant, r.runtime_ms);
                for n in &r.notes {
                    println!("     {n}");
                }
            }
            if let Some(p) = json_out.or(sc.json_out.clone()) {
                std::fs::write(p, outcome_json(&sc, &outcome))?;
            }
            if let Some(p) = csv_out.or(sc.csv_out.clone()) {
                std::fs::write(p, outcome_csv(&outcome))?;
            }
            let failing = outcome.failing();
            if !failing.is_empty() {
                eprintln!("failing checks: {}", failing.join(", "));
            }
            Ok(outcome.exit_code() as u8)
        }
        Command::VerifyFamily { file, eta } => {
            let s = SparseFamily::load(&file)?;
            let v = verify_sparse(&s, eta)?;
            println!("cubes = {}  carleson = {:.6}  method = {:?}", s.len(), v.carleson, v.method);
            if let Some(q) = v.offending {
                println!("first greedy shortfall at {q}");
            }
            Ok(if v.certified() { 0 } else { 1 })
        }
        Command::Dominate { kernel: name, f, b, out } => {
            let f = GridFunction::load(&f)?;
            let k = kernel(&name, &f)?;
            let d = match b {
                Some(b) => build_commutator_domination(&k, &GridFunction::load(&b)?, &f)?,
                None => build_t_domination(&k, &f)?,
            };
            println!(
                "families = {}  cubes = {}  max carleson = {:.4}  depth = {}  C_emp = {:.6e}",
                d.families.len(),
                d.cubes.len(),
                d.carleson.iter().copied().fold(0.0, f64::max),
                d.max_depth,
                d.empirical_constant
            );
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir)?;
                    std::fs::write(dir.join("domination.json"), d.to_json())?;
                    for (j, s) in d.families.iter().enumerate() {
                        std::fs::write(dir.join(format!("family_{j}.json")), s.to_json())?;
                    }
                }
                None => println!("{}", d.to_json()),
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
